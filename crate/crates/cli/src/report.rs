//! The `report` subcommand: summarize run artifacts from an output
//! directory as a plain-text table, including the log-log rate slope when a
//! T-grid is present.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::experiment::RunAggregate;

pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let mx = points.iter().map(|(x, _)| x).sum::<f64>() / m;
    let my = points.iter().map(|(_, y)| y).sum::<f64>() / m;
    let cov: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    cov / var
}

pub fn render_report(out_dir: &Path) -> Result<String> {
    let path = out_dir.join("aggregate.json");
    if !path.exists() {
        bail!("no aggregate.json under {}", out_dir.display());
    }
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let aggregate: RunAggregate = serde_json::from_str(&text)?;

    let mut out = String::new();
    out.push_str(&format!(
        "run: c = {}, replications = {}, base seed = {}\n",
        aggregate.c, aggregate.replications, aggregate.base_seed
    ));
    out.push_str(&format!(
        "mixing fit: C = {:.6}, alpha = {:.6}\n",
        aggregate.mixing.c_const, aggregate.mixing.alpha
    ));
    out.push_str(&format!("theta*: {:?}\n\n", aggregate.theta_star));
    out.push_str(
        "T        f_bar_mean      f_bar_stderr    max_mean_|theta|^2  ratio     minT_ok  margin\n",
    );
    for t in &aggregate.per_t {
        out.push_str(&format!(
            "{:<8} {:<15.6e} {:<15.6e} {:<19.6e} {:<9.4} {:<8} {:.3}\n",
            t.total_steps,
            t.f_bar_mean,
            t.f_bar_stderr,
            t.max_mean_theta_sq,
            t.ratio,
            t.min_t_ok,
            t.min_t_margin
        ));
    }
    if aggregate.per_t.len() >= 2 {
        let pts: Vec<(f64, f64)> = aggregate
            .per_t
            .iter()
            .filter(|t| t.f_bar_mean > 0.0)
            .map(|t| ((t.total_steps as f64).ln(), t.f_bar_mean.ln()))
            .collect();
        if pts.len() >= 2 {
            out.push_str(&format!(
                "\nlog-log slope of mean f(theta_bar) vs T: {:.4}\n",
                least_squares_slope(&pts)
            ));
        }
    }
    Ok(out)
}
