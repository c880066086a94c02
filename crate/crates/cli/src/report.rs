use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use slap_core::pipeline::{mean, read_results, std_dev, summarize, write_summary, ABLATION_HEADER, DYNAMICS_HEADER, RESULTS_HEADER};
use slap_core::{Error, Result};

use crate::commands::Status;
use crate::files::{ensure_dir, read_text, walk, write_with};

fn fields(line: &str) -> Result<Vec<f64>> {
    line.split(',').map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("{line}: {e}")))).collect()
}

/// Rows of a numeric CSV keyed by the first column, pooled across files.
#[derive(Default)]
struct Pooled {
    rows: BTreeMap<u64, Vec<Vec<f64>>>,
}

impl Pooled {
    fn add(&mut self, text: &str) -> Result<()> {
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let v = fields(line)?;
            self.rows.entry(v[0].to_bits()).or_default().push(v);
        }
        Ok(())
    }

    fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
        rows.iter().map(|r| r[i]).collect()
    }
}

/// Success rate and mean return per tenth of a training log.
fn learning_curve(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let rows: Vec<Vec<f64>> = text.lines().skip(2).filter(|l| !l.trim().is_empty()).map(fields).collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(vec![]);
    }
    let chunk = rows.len().div_ceil(10);
    Ok(rows
        .chunks(chunk)
        .map(|c| (c.last().map_or(0, |r| r[0] as usize + 1), mean(&Pooled::column(c, 2)), mean(&Pooled::column(c, 1))))
        .collect())
}

/// Reads every recognised CSV under `input` and writes `summary.csv`,
/// plus pooled `dynamics.csv`, `ablation.csv` and `learning_curves.csv`
/// when the corresponding inputs exist.
pub fn report(input: &Path, out: &Path) -> Result<Status> {
    let mut records = Vec::new();
    let mut dynamics = Pooled::default();
    let mut ablation = Pooled::default();
    let mut curves = Vec::new();
    let out_abs = out.canonicalize().ok();
    for path in walk(input)? {
        if path.extension().is_none_or(|e| e != "csv") {
            continue;
        }
        if let (Some(o), Ok(p)) = (&out_abs, path.canonicalize()) {
            if p.starts_with(o) {
                continue;
            }
        }
        let text = read_text(&path)?;
        let first = text.lines().next().unwrap_or_default();
        if first == RESULTS_HEADER {
            records.extend(read_results(&text)?);
        } else if first == DYNAMICS_HEADER {
            dynamics.add(&text)?;
        } else if first == ABLATION_HEADER {
            ablation.add(&text)?;
        } else if first.starts_with("# steps_per_update") {
            let rel = path.strip_prefix(input).unwrap_or(&path).display().to_string();
            curves.extend(learning_curve(&text)?.into_iter().map(|c| (rel.clone(), c)));
        }
    }
    if records.is_empty() {
        return Err(Error::Format(format!("no result files under {}", input.display())));
    }
    ensure_dir(out)?;
    let summary = summarize(&records);
    write_with(&out.join("summary.csv"), |w| write_summary(w, &summary))?;
    for r in &summary {
        println!(
            "{:<18} success {:.3} ± {:.3}  length {:.2} ± {:.2}  relative {:.3}",
            r.method, r.success_mean, r.success_std, r.plan_length_mean, r.plan_length_std, r.relative_per_task
        );
    }
    if !dynamics.rows.is_empty() {
        write_with(&out.join("dynamics.csv"), |w| {
            writeln!(w, "snapshot,episodes,runs,shortcut_edges_mean,shortcut_edges_std,mean_plan_length_mean,mean_plan_length_std")?;
            for rows in dynamics.rows.values() {
                let (edges, lens) = (Pooled::column(rows, 2), Pooled::column(rows, 3));
                writeln!(
                    w,
                    "{},{},{},{:.4},{:.4},{:.4},{:.4}",
                    rows[0][0], rows[0][1], rows.len(), mean(&edges), std_dev(&edges), mean(&lens), std_dev(&lens)
                )?;
            }
            Ok(())
        })?;
    }
    if !ablation.rows.is_empty() {
        write_with(&out.join("ablation.csv"), |w| {
            writeln!(w, "ratio_percent,K,runs,surviving_mean,mean_plan_length_mean,success_rate_mean")?;
            for rows in ablation.rows.values() {
                writeln!(
                    w,
                    "{},{},{},{:.4},{:.4},{:.4}",
                    rows[0][0],
                    rows[0][1],
                    rows.len(),
                    mean(&Pooled::column(rows, 2)),
                    mean(&Pooled::column(rows, 3)),
                    mean(&Pooled::column(rows, 4))
                )?;
            }
            Ok(())
        })?;
    }
    if !curves.is_empty() {
        write_with(&out.join("learning_curves.csv"), |w| {
            writeln!(w, "log,episodes,success_rate,mean_return")?;
            for (file, (ep, succ, ret)) in &curves {
                writeln!(w, "{file},{ep},{succ:.4},{ret:.4}")?;
            }
            Ok(())
        })?;
    }
    Ok(Status::Ok)
}
