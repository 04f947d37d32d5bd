//! The published results table, shipped as `data/paper_results.csv`.

use serde::{Deserialize, Serialize};

use super::{ScalingError, ScalingPoint};

pub const PAPER_RESULTS_CSV: &str = include_str!("../../../../data/paper_results.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRow {
    pub model_size: String,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub training_flops: f64,
    pub acc_solved: f64,
    pub acc_r2: f64,
    pub final_val_loss: f64,
}

impl PaperRow {
    /// Parameter count from the size label (`"6.5M"` → 6.5e6).
    pub fn n_params(&self) -> Option<f64> {
        let s = self.model_size.trim();
        let (num, scale) = match s.chars().last()? {
            'M' => (&s[..s.len() - 1], 1e6),
            'B' => (&s[..s.len() - 1], 1e9),
            'K' | 'k' => (&s[..s.len() - 1], 1e3),
            _ => (s, 1.0),
        };
        num.parse::<f64>().ok().map(|v| v * scale)
    }

    pub fn to_point(&self) -> ScalingPoint {
        ScalingPoint {
            label: format!("{} B={} lr={}", self.model_size, self.batch_size, self.learning_rate),
            flops: self.training_flops,
            val_loss: self.final_val_loss,
            acc_solved: Some(self.acc_solved),
            acc_r2: Some(self.acc_r2),
            n_params: self.n_params(),
            tokens_out: None,
            batch_size: Some(self.batch_size as f64),
            learning_rate: Some(self.learning_rate),
        }
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<PaperRow>, ScalingError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| ScalingError::Table(e.to_string())))
        .collect()
}

pub fn paper_results() -> Vec<PaperRow> {
    parse_results_csv(PAPER_RESULTS_CSV).expect("bundled results table parses")
}
