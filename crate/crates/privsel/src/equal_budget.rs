//! Replays mechanisms through the equal-budget adapter and reports how
//! rounds and noise variances were accounted.

use privsel_core::oracle::equal_budget_simulate;
use privsel_core::rng::{trial_stream, StreamPurpose};
use privsel_core::BudgetOracle;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::trial_instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualBudgetRow {
    pub mechanism: String,
    pub trials: u64,
    /// `M`, the static round bound of the mechanism.
    pub declared_round_bound: usize,
    /// `M' = 2 M`.
    pub equal_rounds_total: usize,
    /// `rho' = 2 rho`.
    pub rho_prime: f64,
    pub per_round_budget: f64,
    pub max_mechanism_rounds: usize,
    pub max_equal_rounds_used: usize,
    pub mean_equal_rounds_used: f64,
    pub min_topup_variance: f64,
    pub max_topup_variance: f64,
    /// Largest relative gap between a query's replayed variance and
    /// `1 / (2 rho_i)`.
    pub max_variance_mismatch: f64,
    pub mean_error: f64,
    /// Rounds within `M'`, top-up variances non-negative and replayed
    /// variances equal to the requested ones.
    pub consistent: bool,
}

struct TrialAccount {
    mechanism_rounds: usize,
    equal_rounds: usize,
    min_topup: f64,
    max_topup: f64,
    mismatch: f64,
    error: f64,
}

pub fn simulate(config: &ExperimentConfig) -> Result<Vec<EqualBudgetRow>> {
    config.validate()?;
    let labels = config.labels();
    let n = config.instance.size;
    let params = config.privacy;
    let mut rows = Vec::new();
    for (m, label) in config.mechanisms.iter().zip(&labels) {
        if !m.uses_query_model() {
            continue;
        }
        let bound = m.round_bound(n, params)?;
        let accounts: Vec<TrialAccount> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let inst = trial_instance(config, trial)?;
                let seed = config.master_seed;
                let mut rng = trial_stream(seed, trial, StreamPurpose::Mechanism);
                let (result, report) = equal_budget_simulate(
                    |total| BudgetOracle::new(inst.clone(), total, trial_stream(seed, trial, StreamPurpose::Noise)),
                    trial_stream(seed, trial, StreamPurpose::Topup),
                    bound,
                    params.rho,
                    |ch| m.run_on_channel(ch, params, &mut rng),
                )?;
                let mut acc = TrialAccount {
                    mechanism_rounds: report.mechanism_rounds,
                    equal_rounds: report.equal_rounds_used,
                    min_topup: f64::INFINITY,
                    max_topup: 0.0,
                    mismatch: 0.0,
                    error: inst.error_of(result.winner),
                };
                for plan in &report.plans {
                    acc.min_topup = acc.min_topup.min(plan.topup_variance);
                    acc.max_topup = acc.max_topup.max(plan.topup_variance);
                    let target = 1.0 / (2.0 * plan.rho_i);
                    let got = plan.averaged_variance() + plan.topup_variance;
                    acc.mismatch = acc.mismatch.max(((got - target) / target).abs());
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let t = accounts.len() as f64;
        let equal_total = 2 * bound;
        let max_equal = accounts.iter().map(|a| a.equal_rounds).max().unwrap_or(0);
        let min_topup = accounts.iter().map(|a| a.min_topup).fold(f64::INFINITY, f64::min);
        let mismatch = accounts.iter().map(|a| a.mismatch).fold(0.0, f64::max);
        rows.push(EqualBudgetRow {
            mechanism: label.clone(),
            trials: config.trials,
            declared_round_bound: bound,
            equal_rounds_total: equal_total,
            rho_prime: 2.0 * params.rho,
            per_round_budget: 2.0 * params.rho / equal_total.max(1) as f64,
            max_mechanism_rounds: accounts.iter().map(|a| a.mechanism_rounds).max().unwrap_or(0),
            max_equal_rounds_used: max_equal,
            mean_equal_rounds_used: accounts.iter().map(|a| a.equal_rounds as f64).sum::<f64>() / t,
            min_topup_variance: if min_topup.is_finite() { min_topup } else { 0.0 },
            max_topup_variance: accounts.iter().map(|a| a.max_topup).fold(0.0, f64::max),
            max_variance_mismatch: mismatch,
            mean_error: accounts.iter().map(|a| a.error).sum::<f64>() / t,
            consistent: max_equal <= equal_total && min_topup >= 0.0 && mismatch <= 1e-9,
        });
    }
    Ok(rows)
}
