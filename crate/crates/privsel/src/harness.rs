//! Seeded Monte Carlo over trials. Trial `t` of every mechanism draws its
//! noise and coins from the streams `(master_seed, t)`, so mechanisms see
//! common random numbers and parallel execution cannot change the output.

use privsel_core::oracle::QueryRecord;
use privsel_core::rng::{trial_instance_seed, trial_stream, StreamPurpose};
use privsel_core::{generate_instance, BudgetOracle, LossInstance, Mechanism, PrivacyParams, SelectionResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub mechanism: String,
    pub trial: u64,
    pub seed: u64,
    pub winner: usize,
    /// `l_winner - min l`, never negative.
    pub error: f64,
    pub rounds_used: usize,
    pub budget_spent: f64,
    pub recursion_depth: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismSummary {
    pub mechanism: String,
    pub trials: u64,
    pub seed: u64,
    pub mean_error: f64,
    /// Sample standard deviation of the error.
    pub error_sd: f64,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
    pub failure_threshold: f64,
    pub failure_frequency: f64,
    pub mean_rounds: f64,
    pub mean_budget: f64,
}

impl MechanismSummary {
    pub fn std_error(&self) -> f64 {
        self.error_sd / (self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rows: Vec<MechanismSummary>,
}

impl ExperimentSummary {
    pub fn row(&self, mechanism: &str) -> Option<&MechanismSummary> {
        self.rows.iter().find(|r| r.mechanism == mechanism)
    }
}

/// Nearest-rank quantile of ascending `sorted`: the element of rank
/// `ceil(q n)`, at least 1.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Statistics of one mechanism's records.
pub fn summarize(records: &[TrialRecord], threshold: f64) -> Result<MechanismSummary> {
    let first = records.first().ok_or(Error::EmptyRecords)?;
    let n = records.len() as f64;
    let mut errors: Vec<f64> = records.iter().map(|r| r.error).collect();
    let mean = errors.iter().sum::<f64>() / n;
    let sd = if records.len() > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let failures = errors.iter().filter(|&&e| e > threshold).count();
    errors.sort_by(f64::total_cmp);
    Ok(MechanismSummary {
        mechanism: first.mechanism.clone(),
        trials: records.len() as u64,
        seed: first.seed,
        mean_error: mean,
        error_sd: sd,
        q50: nearest_rank(&errors, 0.5),
        q90: nearest_rank(&errors, 0.9),
        q99: nearest_rank(&errors, 0.99),
        failure_threshold: threshold,
        failure_frequency: failures as f64 / n,
        mean_rounds: records.iter().map(|r| r.rounds_used as f64).sum::<f64>() / n,
        mean_budget: records.iter().map(|r| r.budget_spent).sum::<f64>() / n,
    })
}

/// The instance of trial `trial`.
pub fn trial_instance(config: &ExperimentConfig, trial: u64) -> Result<LossInstance> {
    let spec = &config.instance;
    let seed = if config.resample_instance && spec.family.is_random() {
        trial_instance_seed(config.master_seed, trial)
    } else {
        spec.seed
    };
    Ok(generate_instance(spec.family, spec.size, spec.scale, seed)?)
}

/// Runs one mechanism on a fresh oracle for trial `trial`.
pub fn run_one(
    mechanism: &Mechanism,
    instance: &LossInstance,
    params: PrivacyParams,
    master_seed: u64,
    trial: u64,
) -> Result<(SelectionResult, Vec<QueryRecord>)> {
    let mut oracle =
        BudgetOracle::new(instance.clone(), params.rho, trial_stream(master_seed, trial, StreamPurpose::Noise))?;
    let mut rng = trial_stream(master_seed, trial, StreamPurpose::Mechanism);
    let result = mechanism.run(&mut oracle, params, &mut rng)?;
    Ok((result, oracle.into_log()))
}

/// Every trial of every mechanism, grouped by mechanism in config order
/// and by trial index within a mechanism.
pub fn run_trials(config: &ExperimentConfig) -> Result<Vec<Vec<TrialRecord>>> {
    config.validate()?;
    let labels = config.labels();
    let shared = if config.resample_instance && config.instance.family.is_random() {
        None
    } else {
        Some(trial_instance(config, 0)?)
    };
    let per_trial: Vec<Vec<TrialRecord>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let fresh;
            let instance = match &shared {
                Some(inst) => inst,
                None => {
                    fresh = trial_instance(config, trial)?;
                    &fresh
                }
            };
            config
                .mechanisms
                .iter()
                .zip(&labels)
                .map(|(m, label)| {
                    let (r, _) = run_one(m, instance, config.privacy, config.master_seed, trial)?;
                    Ok(TrialRecord {
                        mechanism: label.clone(),
                        trial,
                        seed: config.master_seed,
                        winner: r.winner,
                        error: instance.error_of(r.winner),
                        rounds_used: r.rounds_used,
                        budget_spent: r.budget_spent,
                        recursion_depth: r.recursion_depth,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut grouped: Vec<Vec<TrialRecord>> = labels.iter().map(|_| Vec::with_capacity(per_trial.len())).collect();
    for trial in per_trial {
        for (slot, record) in grouped.iter_mut().zip(trial) {
            slot.push(record);
        }
    }
    Ok(grouped)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let grouped = run_trials(config)?;
    summarize_all(&grouped, config.failure_threshold)
}

pub fn summarize_all(grouped: &[Vec<TrialRecord>], threshold: f64) -> Result<ExperimentSummary> {
    let rows = grouped.iter().map(|g| summarize(g, threshold)).collect::<Result<_>>()?;
    Ok(ExperimentSummary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(error: f64) -> TrialRecord {
        TrialRecord {
            mechanism: "m".into(),
            trial: 0,
            seed: 1,
            winner: 0,
            error,
            rounds_used: 2,
            budget_spent: 1.0,
            recursion_depth: 0,
        }
    }

    #[test]
    fn single_zero_record() {
        let s = summarize(&[record(0.0)], 0.0).unwrap();
        assert_eq!((s.mean_error, s.q50, s.q90, s.q99), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(s.failure_frequency, 0.0);
        assert_eq!(s.seed, 1);
    }

    #[test]
    fn arithmetic_example() {
        let rs: Vec<_> = [0.0, 0.0, 0.0, 10.0].into_iter().map(record).collect();
        let s = summarize(&rs, 5.0).unwrap();
        assert_eq!(s.mean_error, 2.5);
        assert_eq!(s.failure_frequency, 0.25);
        assert_eq!(s.mean_rounds, 2.0);
    }

    #[test]
    fn nearest_rank_quantiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&xs, 0.9), 90.0);
        assert_eq!(nearest_rank(&xs, 0.5), 50.0);
        assert_eq!(nearest_rank(&xs, 0.99), 99.0);
        assert_eq!(nearest_rank(&[7.0], 0.01), 7.0);
    }

    #[test]
    fn empty_records_error() {
        assert!(matches!(summarize(&[], 0.0), Err(Error::EmptyRecords)));
    }
}
