//! Planner sweeps over the ESS/TV trade-off.

use std::fmt::Write as _;
use std::path::Path;

use gpi_core::planner::{solve_mixture, MixturePlan};

use crate::error::Result;

pub const PLAN_COLUMNS: [&str; 8] = [
    "b",
    "kappa",
    "support",
    "ess_gain_pct",
    "tv_gain_pct",
    "eps_gen",
    "delta_gen",
    "nu",
];

/// `points` evenly spaced trade-off values from 0 to 1 inclusive.
pub fn kappa_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points)
            .map(|i| i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Optimal plan for each trade-off value.
pub fn sweep(b: usize, kappas: &[f64], n: usize, eps: f64) -> Result<Vec<MixturePlan>> {
    Ok(kappas
        .iter()
        .map(|&k| solve_mixture(b, k, n, eps))
        .collect::<gpi_core::Result<_>>()?)
}

/// Largest ESS gain and largest TV gain along the frontier.
pub fn frontier_extremes(plans: &[MixturePlan]) -> (f64, f64) {
    plans.iter().fold((0.0f64, 0.0f64), |(e, t), p| {
        (e.max(p.ess_gain()), t.max(p.tv_gain()))
    })
}

fn nu_text(nu: &[f64], sep: &str) -> String {
    nu.iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join(sep)
}

pub fn format_table(plans: &[MixturePlan]) -> String {
    let mut out = format!(
        "{:>4} {:>6} {:>7} {:>9} {:>9} {:>9}  nu\n",
        "B", "kappa", "support", "ESS gain", "TV gain", "eps_gen"
    );
    for p in plans {
        let _ = writeln!(
            out,
            "{:>4} {:>6.3} {:>7} {:>8.2}% {:>8.2}% {:>9.5}  {}",
            p.b,
            p.kappa,
            p.support,
            100.0 * p.ess_gain(),
            100.0 * p.tv_gain(),
            p.eps_gen,
            nu_text(&p.nu, " ")
        );
    }
    out
}

pub fn write_csv(plans: &[MixturePlan], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PLAN_COLUMNS)?;
    for p in plans {
        w.write_record([
            p.b.to_string(),
            p.kappa.to_string(),
            p.support.to_string(),
            (100.0 * p.ess_gain()).to_string(),
            (100.0 * p.tv_gain()).to_string(),
            p.eps_gen.to_string(),
            p.delta_gen.to_string(),
            p.nu.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
