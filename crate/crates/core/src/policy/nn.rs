//! Dense tanh networks over a flat parameter slice, with explicit
//! reverse-mode gradients.

/// Layer widths `[input, hidden.., output]`. Hidden layers use tanh, the
/// output layer is linear. Parameters are stored per layer as the weight
/// matrix (row-major, `out x in`) followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
}

/// Activations kept from a forward pass; `layers[0]` is the input.
#[derive(Clone, Debug)]
pub struct Cache {
    layers: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "network needs an input and an output layer");
        Self { sizes }
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// `(weight offset, bias offset)` of each layer.
    fn offsets(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut at = 0;
        self.sizes.windows(2).map(move |w| {
            let (n_in, n_out) = (w[0], w[1]);
            let wo = at;
            at += n_in * n_out + n_out;
            (wo, wo + n_in * n_out, n_in, n_out)
        })
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Cache) {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(x.to_vec());
        for (l, (wo, bo, n_in, n_out)) in self.offsets().enumerate() {
            let input = &layers[l];
            let mut out = params[bo..bo + n_out].to_vec();
            for (j, o) in out.iter_mut().enumerate() {
                let row = &params[wo + j * n_in..wo + (j + 1) * n_in];
                *o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            layers.push(out);
        }
        let y = layers.last().unwrap().clone();
        (y, Cache { layers })
    }

    pub fn output(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(params, x).0
    }

    /// Accumulates `d(output . grad_out)/d(params)` into `grad`.
    pub fn backward(&self, params: &[f64], cache: &Cache, grad_out: &[f64], grad: &mut [f64]) {
        let offs: Vec<_> = self.offsets().collect();
        let n_layers = offs.len();
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (wo, bo, n_in, n_out) = offs[l];
            let input = &cache.layers[l];
            for j in 0..n_out {
                let d = delta[j];
                grad[bo + j] += d;
                if d != 0.0 {
                    let g = &mut grad[wo + j * n_in..wo + (j + 1) * n_in];
                    g.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; n_in];
            for (j, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &params[wo + j * n_in..wo + (j + 1) * n_in];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
            }
            // Input to this layer is the tanh output of the previous one.
            prev.iter_mut().zip(input).for_each(|(p, h)| *p *= 1.0 - h * h);
            delta = prev;
        }
    }

    /// Scales the weights of the output layer, leaving biases untouched.
    pub fn scale_output_layer(&self, params: &mut [f64], k: f64) {
        let (wo, bo, _, _) = self.offsets().last().unwrap();
        params[wo..bo].iter_mut().for_each(|w| *w *= k);
    }

    /// Slices of each layer's weights, for initialization.
    pub fn layer_weights(&self) -> Vec<(std::ops::Range<usize>, usize)> {
        self.offsets().map(|(wo, bo, n_in, _)| (wo..bo, n_in)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_output() {
        let m = Mlp::new(vec![3, 4, 4, 2]);
        assert_eq!(m.param_count(), 3 * 4 + 4 + 4 * 4 + 4 + 4 * 2 + 2);
        let p = vec![0.0; m.param_count()];
        assert_eq!(m.output(&p, &[1.0, -2.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::new(vec![2, 3, 2]);
        let p: Vec<f64> = (0..m.param_count()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x = [0.3, -0.8];
        let w = [0.7, -1.3];
        let f = |p: &[f64]| m.output(p, &x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let (_, cache) = m.forward(&p, &x);
        let mut g = vec![0.0; p.len()];
        m.backward(&p, &cache, &w, &mut g);
        for i in 0..p.len() {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8, "param {i}: {fd} vs {}", g[i]);
        }
    }
}
