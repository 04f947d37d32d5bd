//! FLOP accounting, compute Pareto fronts, power-law fits, two-step
//! hyperparameter interpolation and the compute-optimal N/D trade-off.

mod akima;
mod hparams;
mod paper;
pub mod plot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use akima::{golden_section_min, Interpolant};
pub use hparams::{optimal_hparams, HparamOptimum, HparamReport, SweepGrid, SweepPoint};
pub use paper::{paper_results, parse_results_csv, PaperRow, PAPER_RESULTS_CSV};

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("need at least two distinct compute values, got {0}")]
    TooFewPoints(usize),
    #[error("value {value} at C = {c} is outside the fit domain ({what})")]
    Domain { c: f64, value: f64, what: &'static str },
    #[error("knots are not strictly increasing at index {0}")]
    Knots(usize),
    #[error("knot and value counts differ ({0} vs {1})")]
    Length(usize, usize),
    #[error("insufficient sweep coverage: {0}")]
    Coverage(String),
    #[error("cannot read results table: {0}")]
    Table(String),
}

/// Training FLOPs `6 · (N_enc · D_in + N_dec · D_out)`.
pub fn training_flops(n_enc: f64, n_dec: f64, d_in: f64, d_out: f64) -> f64 {
    6.0 * (n_enc * d_in + n_dec * d_out)
}

/// What the power law describes: `y` itself or its complement `1 - y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    #[default]
    Direct,
    Complement,
}

/// `y = a · C^b` (or `1 - y = a · C^b` in complement mode), fitted by least
/// squares in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub mode: FitMode,
    pub c_min: f64,
    pub c_max: f64,
    /// Residual RMSE in the log space the fit was done in.
    pub rmse: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, c: f64) -> f64 {
        let v = self.a * c.powf(self.b);
        match self.mode {
            FitMode::Direct => v,
            FitMode::Complement => 1.0 - v,
        }
    }

    /// Prediction of an accuracy, capped at 1.
    pub fn predict_clamped(&self, c: f64) -> f64 {
        let v = self.predict(c);
        if v > 1.0 {
            log::warn!("power law exceeds 1 at C = {c:.3e} ({v:.3}); clamping");
        }
        v.min(1.0)
    }

    /// Compute at which the law reaches `y`.
    pub fn solve(&self, y: f64) -> f64 {
        let v = match self.mode {
            FitMode::Direct => y,
            FitMode::Complement => 1.0 - y,
        };
        (v / self.a).powf(1.0 / self.b)
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, ScalingError> {
    fit_power_law_mode(points, FitMode::Direct)
}

pub fn fit_power_law_mode(points: &[(f64, f64)], mode: FitMode) -> Result<PowerLawFit, ScalingError> {
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(c, y) in points {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ScalingError::Domain { c, value: c, what: "compute must be positive" });
        }
        let v = match mode {
            FitMode::Direct => y,
            FitMode::Complement => 1.0 - y,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(ScalingError::Domain { c, value: y, what: "fitted quantity must be positive" });
        }
        xs.push(c.ln());
        ys.push(v.ln());
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ScalingError::TooFewPoints(distinct.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let intercept = my - b * mx;
    let rmse = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - b * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PowerLawFit {
        a: intercept.exp(),
        b,
        mode,
        c_min: distinct[0].exp(),
        c_max: distinct[distinct.len() - 1].exp(),
        rmse,
        n_points: points.len(),
    })
}

/// Indices of the compute Pareto front of `(flops, loss)` runs.
///
/// Compute is split into `n_bins` log-spaced intervals over the observed
/// range. At each bin's upper edge the lowest-loss run so far is kept if it
/// improves on the running minimum. The selection is repeated on its own
/// output until it no longer changes, so the front is a fixed point.
pub fn pareto_front(runs: &[(f64, f64)], n_bins: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].0 > 0.0 && runs[i].1.is_finite()).collect();
    loop {
        let next = front_once(runs, &idx, n_bins.max(1));
        if next.len() == idx.len() {
            return next;
        }
        idx = next;
    }
}

fn front_once(runs: &[(f64, f64)], idx: &[usize], n_bins: usize) -> Vec<usize> {
    if idx.is_empty() {
        return Vec::new();
    }
    let mut order = idx.to_vec();
    order.sort_by(|&i, &j| runs[i].0.total_cmp(&runs[j].0).then(runs[i].1.total_cmp(&runs[j].1)));
    let lo = runs[order[0]].0.ln();
    let hi = runs[order[order.len() - 1]].0.ln();
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |c: f64| {
        if width == 0.0 {
            0
        } else {
            (((c.ln() - lo) / width).floor() as usize).min(n_bins - 1)
        }
    };
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    let mut k = 0;
    while k < order.len() {
        let bin = bin_of(runs[order[k]].0);
        let mut arg = None;
        let mut arg_loss = best;
        while k < order.len() && bin_of(runs[order[k]].0) == bin {
            let loss = runs[order[k]].1;
            if loss < arg_loss {
                arg_loss = loss;
                arg = Some(order[k]);
            }
            k += 1;
        }
        if let Some(i) = arg {
            best = arg_loss;
            out.push(i);
        }
    }
    out
}

/// One trained model as seen by the scaling analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub label: String,
    pub flops: f64,
    pub val_loss: f64,
    pub acc_solved: Option<f64>,
    pub acc_r2: Option<f64>,
    /// Feed-forward parameters `N_enc + N_dec`.
    pub n_params: Option<f64>,
    pub tokens_out: Option<f64>,
    pub batch_size: Option<f64>,
    pub learning_rate: Option<f64>,
}

/// Compute-optimal parameter and token laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub n_opt: PowerLawFit,
    pub d_opt: PowerLawFit,
    /// `β - α`; positive when data should grow faster than the model.
    pub exponent_gap: f64,
    /// `(C, D_opt(C) / N_opt(C))` at each input compute.
    pub ratio: Vec<(f64, f64)>,
}

impl Tradeoff {
    pub fn ratio_at(&self, c: f64) -> f64 {
        self.d_opt.predict(c) / self.n_opt.predict(c)
    }
}

/// Fits `N_opt(C)` and `D_opt(C)` on `(C, N, D_out)` Pareto runs.
pub fn optimal_tradeoff(runs: &[(f64, f64, f64)]) -> Result<Tradeoff, ScalingError> {
    let n_opt = fit_power_law(&runs.iter().map(|r| (r.0, r.1)).collect::<Vec<_>>())?;
    let d_opt = fit_power_law(&runs.iter().map(|r| (r.0, r.2)).collect::<Vec<_>>())?;
    let mut t = Tradeoff { exponent_gap: d_opt.b - n_opt.b, n_opt, d_opt, ratio: Vec::new() };
    t.ratio = runs.iter().map(|r| (r.0, t.ratio_at(r.0))).collect();
    Ok(t)
}

/// Everything `fit-scaling` writes to `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingAnalysis {
    pub n_bins: usize,
    pub front: Vec<ScalingPoint>,
    pub loss: PowerLawFit,
    pub acc_solved: Option<PowerLawFit>,
    pub acc_solved_direct: Option<PowerLawFit>,
    pub acc_r2: Option<PowerLawFit>,
    pub acc_r2_direct: Option<PowerLawFit>,
    pub tradeoff: Option<Tradeoff>,
}

fn metric_fit(front: &[ScalingPoint], get: impl Fn(&ScalingPoint) -> Option<f64>, mode: FitMode) -> Option<PowerLawFit> {
    let pts: Option<Vec<(f64, f64)>> = front.iter().map(|p| get(p).map(|v| (p.flops, v))).collect();
    match fit_power_law_mode(&pts?, mode) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("skipping {mode:?} accuracy fit: {e}");
            None
        }
    }
}

/// Pareto front on validation loss, then power laws on the front.
///
/// Accuracy laws are fitted on the error rate `1 - acc`; the direct
/// `a · C^b` fits are reported alongside.
pub fn analyze(points: &[ScalingPoint], n_bins: usize) -> Result<ScalingAnalysis, ScalingError> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.flops, p.val_loss)).collect();
    let front: Vec<ScalingPoint> = pareto_front(&pairs, n_bins).into_iter().map(|i| points[i].clone()).collect();
    let loss = fit_power_law(&front.iter().map(|p| (p.flops, p.val_loss)).collect::<Vec<_>>())?;
    let tradeoff = front
        .iter()
        .map(|p| Some((p.flops, p.n_params?, p.tokens_out?)))
        .collect::<Option<Vec<_>>>()
        .and_then(|runs| optimal_tradeoff(&runs).ok());
    Ok(ScalingAnalysis {
        n_bins,
        acc_solved: metric_fit(&front, |p| p.acc_solved, FitMode::Complement),
        acc_solved_direct: metric_fit(&front, |p| p.acc_solved, FitMode::Direct),
        acc_r2: metric_fit(&front, |p| p.acc_r2, FitMode::Complement),
        acc_r2_direct: metric_fit(&front, |p| p.acc_r2, FitMode::Direct),
        loss,
        tradeoff,
        front,
    })
}

pub fn pareto_csv(front: &[ScalingPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "flops", "val_loss", "acc_solved", "acc_r2", "n_params", "tokens_out"]).expect("in-memory csv");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in front {
        w.write_record([
            p.label.clone(),
            p.flops.to_string(),
            p.val_loss.to_string(),
            opt(p.acc_solved),
            opt(p.acc_r2),
            opt(p.n_params),
            opt(p.tokens_out),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}
