//! Multi-seed runs and the ablation grid.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::awl::{AlfVariant, DawlStrategy};
use crate::data::Dataset;
use crate::eval::{pct, EvalResult};
use crate::trainer::{train, TrainConfig, TrainError};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

/// Learning rate for the built-in synthetic task. At the library default
/// the log-variances barely move within 30 epochs of 7 steps.
pub const SYNTHETIC_LEARNING_RATE: f64 = 1e-2;

/// A named (loss, strategy) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub alf: AlfVariant,
    pub strategy: DawlStrategy,
}

/// Full model, then each component removed, then both.
pub const ABLATION_GRID: [Variant; 4] = [
    Variant {
        name: "full",
        alf: AlfVariant::Alf2,
        strategy: DawlStrategy::Output,
    },
    Variant {
        name: "w/o D-AWL",
        alf: AlfVariant::Alf2,
        strategy: DawlStrategy::None,
    },
    Variant {
        name: "w/o T-AWL",
        alf: AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS),
        strategy: DawlStrategy::Output,
    },
    Variant {
        name: "w/o both",
        alf: AlfVariant::Fixed(AlfVariant::BASE_WEIGHTS),
        strategy: DawlStrategy::None,
    },
];

pub const SINGLE_TASK: Variant = Variant {
    name: "single-task",
    alf: AlfVariant::Fixed([1.0, 0.0, 0.0]),
    strategy: DawlStrategy::None,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }

    fn cell(self) -> String {
        format!("{} ± {}", pct(self.mean), pct(self.std))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub alf: AlfVariant,
    pub strategy: DawlStrategy,
    pub seeds: Vec<u64>,
    pub runs: Vec<EvalResult>,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    /// Absent when the test set has no implicit instances.
    pub isa_accuracy: Option<MeanStd>,
}

/// Trains `variant` once per seed on `train` and scores the final model on
/// `test`. Each run writes its artifacts under `out_dir/<name>-seed<k>`.
pub fn run_variant(
    train_set: &Dataset,
    test_set: &Dataset,
    base: &TrainConfig,
    variant: Variant,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<VariantResult, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("at least one seed is required".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let config = TrainConfig {
            alf: variant.alf,
            strategy: variant.strategy,
            seed,
            ..base.clone()
        };
        let dir = out_dir.join(format!("{}-seed{seed}", slug(variant.name)));
        let report = train(train_set, Some(test_set), &config, &dir, &mut |_| {})?;
        let result = match report.epochs.last().and_then(|e| e.dev.clone()) {
            Some(r) => r,
            None => crate::eval::evaluate(&report.model, &report.vocab, test_set)?,
        };
        runs.push(result);
    }
    let stat = |f: fn(&EvalResult) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    let isa: Option<Vec<f64>> = runs.iter().map(|r| r.isa_accuracy).collect();
    Ok(VariantResult {
        name: variant.name.to_string(),
        alf: variant.alf,
        strategy: variant.strategy,
        seeds: seeds.to_vec(),
        accuracy: stat(|r| r.all_accuracy),
        macro_f1: stat(|r| r.all_macro_f1),
        isa_accuracy: isa.map(|v| MeanStd::of(&v)),
        runs,
    })
}

pub fn run_ablation(
    train_set: &Dataset,
    test_set: &Dataset,
    base: &TrainConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<VariantResult>, TrainError> {
    ABLATION_GRID
        .iter()
        .map(|&v| run_variant(train_set, test_set, base, v, seeds, out_dir))
        .collect()
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .replace("--", "-")
}

/// Plain-text table, percentages with two decimals.
pub fn format_table(rows: &[VariantResult]) -> String {
    let mut out = format!(
        "{:<12} {:<20} {:<14} {:<16} {:<16} {:<16}\n",
        "config", "alf", "strategy", "All_A", "All_F", "ISA_A"
    );
    for r in rows {
        let isa = r.isa_accuracy.map_or_else(|| "-".to_string(), MeanStd::cell);
        let _ = writeln!(
            out,
            "{:<12} {:<20} {:<14} {:<16} {:<16} {:<16}",
            r.name,
            r.alf.to_string(),
            r.strategy.as_str(),
            r.accuracy.cell(),
            r.macro_f1.cell(),
            isa
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_values() {
        let m = MeanStd::of(&[0.9, 1.0]);
        assert!((m.mean - 0.95).abs() < 1e-15);
        assert!((m.std - 0.05f64.hypot(0.05)).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
    }

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("w/o D-AWL"), "w-o-d-awl");
        assert_eq!(slug("full"), "full");
    }

    #[test]
    fn grid_covers_each_removal_once() {
        let learned: Vec<bool> = ABLATION_GRID.iter().map(|v| v.alf.learns_sigma()).collect();
        let weighted: Vec<bool> = ABLATION_GRID
            .iter()
            .map(|v| v.strategy != DawlStrategy::None)
            .collect();
        assert_eq!(learned, [true, true, false, false]);
        assert_eq!(weighted, [true, false, true, false]);
    }
}
