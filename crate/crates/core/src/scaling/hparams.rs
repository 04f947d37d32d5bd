//! Two-step interpolation of the loss-optimal learning rate and batch size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::akima::{golden_section_min, Interpolant};
use super::{fit_power_law, PowerLawFit, ScalingError};

const LOG_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_params: f64,
    pub batch_size: f64,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HparamOptimum {
    pub n_params: f64,
    pub batch_size: f64,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HparamReport {
    pub optima: Vec<HparamOptimum>,
    /// `B*(N)`, present with two or more model sizes.
    pub batch_fit: Option<PowerLawFit>,
    pub lr_fit: Option<PowerLawFit>,
}

/// Argmin of an interpolant, searched between the neighbours of the best
/// sampled knot.
fn interpolated_min(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), ScalingError> {
    let f = Interpolant::new(xs, ys)?;
    let k = (0..ys.len()).min_by(|&i, &j| ys[i].total_cmp(&ys[j])).expect("non-empty");
    let lo = xs[k.saturating_sub(1)];
    let hi = xs[(k + 1).min(xs.len() - 1)];
    let x = golden_section_min(|x| f.eval(x), lo, hi, LOG_TOL);
    Ok((x, f.eval(x)))
}

/// Key preserving the f64 order of positive values.
fn key(x: f64) -> u64 {
    x.to_bits()
}

pub fn optimal_hparams(grid: &SweepGrid) -> Result<HparamReport, ScalingError> {
    let mut by_n: BTreeMap<u64, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for p in &grid.points {
        if !(p.n_params > 0.0 && p.batch_size > 0.0 && p.learning_rate > 0.0) {
            return Err(ScalingError::Coverage(format!("non-positive entry {p:?}")));
        }
        if !p.loss.is_finite() {
            continue;
        }
        by_n.entry(key(p.n_params))
            .or_default()
            .entry(key(p.batch_size))
            .or_default()
            .push((p.learning_rate.ln(), p.loss));
    }
    if by_n.is_empty() {
        return Err(ScalingError::Coverage("empty sweep".into()));
    }
    let mut missing = Vec::new();
    let mut optima = Vec::new();
    for (&nk, batches) in &by_n {
        let n = f64::from_bits(nk);
        let mut per_batch = Vec::new();
        for (&bk, runs) in batches {
            let b = f64::from_bits(bk);
            let mut runs = runs.clone();
            runs.sort_by(|x, y| x.0.total_cmp(&y.0));
            runs.dedup_by(|x, y| x.0 == y.0);
            if runs.len() < 3 {
                missing.push(format!("N={n:.3e} B={b}: {} learning rate(s), need 3", runs.len()));
                continue;
            }
            let xs: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let ys: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (ln_lr, loss) = interpolated_min(&xs, &ys)?;
            per_batch.push((b.ln(), ln_lr, loss));
        }
        if per_batch.len() < 2 {
            missing.push(format!("N={n:.3e}: {} usable batch size(s), need 2", per_batch.len()));
            continue;
        }
        let xs: Vec<f64> = per_batch.iter().map(|r| r.0).collect();
        let losses: Vec<f64> = per_batch.iter().map(|r| r.2).collect();
        let lrs: Vec<f64> = per_batch.iter().map(|r| r.1).collect();
        let (ln_b, loss) = interpolated_min(&xs, &losses)?;
        let ln_lr = Interpolant::new(&xs, &lrs)?.eval(ln_b);
        optima.push(HparamOptimum { n_params: n, batch_size: ln_b.exp(), learning_rate: ln_lr.exp(), loss });
    }
    if !missing.is_empty() {
        return Err(ScalingError::Coverage(missing.join("; ")));
    }
    let (batch_fit, lr_fit) = if optima.len() >= 2 {
        (
            Some(fit_power_law(&optima.iter().map(|o| (o.n_params, o.batch_size)).collect::<Vec<_>>())?),
            Some(fit_power_law(&optima.iter().map(|o| (o.n_params, o.learning_rate)).collect::<Vec<_>>())?),
        )
    } else {
        (None, None)
    };
    Ok(HparamReport { optima, batch_fit, lr_fit })
}
