//! The certification report behind `privsel verify`.

use privsel_core::formulas::xi;
use privsel_core::rng::{trial_stream, StreamPurpose};
use privsel_core::verify::{
    certify_grid, lemma7_bound_check, sensitivity_fuzz, subset_event_monte_carlo, subset_event_probability,
    subset_event_probability_exact, ExprFamily, FuzzOptions, GridSpec, Verdict,
};
use privsel_core::{generate_instance, InstanceFamily, MechanismConstants};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub claim: String,
    pub parameters: String,
    pub verdict: Verdict,
    pub margin: f64,
}

impl ReportRow {
    fn new(claim: &str, parameters: String, pass: bool, margin: f64) -> Self {
        let verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        ReportRow { claim: claim.into(), parameters, verdict, margin }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub grid: GridSpec,
    /// Constants of the recursion certified on the grid.
    pub grid_constants: MechanismConstants,
    /// Constants for the sampling checks, where `xi` must be small enough
    /// for the event to be observable.
    pub sampling_constants: MechanismConstants,
    pub monte_carlo_draws: u64,
    pub lemma7_trials: u64,
    pub fuzz_trials: u64,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            grid: GridSpec::default(),
            grid_constants: MechanismConstants::reference(),
            sampling_constants: MechanismConstants::scaled(),
            monte_carlo_draws: 1_000_000,
            lemma7_trials: 1_000_000,
            fuzz_trials: 10_000,
            seed: 0,
        }
    }
}

pub fn grid_rows(grid: &GridSpec, consts: &MechanismConstants) -> Result<Vec<ReportRow>> {
    Ok(certify_grid(grid, consts)?
        .into_iter()
        .map(|c| ReportRow {
            claim: c.claim.name().into(),
            parameters: format!("K={};rho={};beta={}", c.k, c.rho, c.beta),
            verdict: c.verdict,
            margin: c.margin,
        })
        .collect())
}

/// Closed form against its exact rational value for every `K <= 6`.
pub fn closed_form_rows() -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for k in 1..=6u32 {
        for k_star in 1..=k {
            for i_star in 0..k_star {
                let exact = subset_event_probability_exact(k, i_star, k_star)?.to_f64();
                let p = subset_event_probability(k, i_star, k_star)?;
                let err = if exact == 0.0 { p.abs() } else { ((p - exact) / exact).abs() };
                rows.push(ReportRow::new(
                    "subset_event_closed_form",
                    format!("K={k};i={i_star};k={k_star}"),
                    err <= 1e-12,
                    1.0 - err / 1e-12,
                ));
            }
        }
    }
    Ok(rows)
}

/// Monte Carlo subset sampling against the closed form, within three
/// binomial standard errors.
pub fn monte_carlo_row(k: u32, i_star: u32, k_star: u32, draws: u64, seed: u64) -> Result<ReportRow> {
    let mut rng = trial_stream(seed, 0, StreamPurpose::Mechanism);
    let hits = subset_event_monte_carlo(k, i_star, k_star, draws, &mut rng)?;
    let p = subset_event_probability(k, i_star, k_star)?;
    let f = hits as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    let dev = (f - p).abs();
    Ok(ReportRow::new(
        "subset_event_monte_carlo",
        format!("K={k};i={i_star};k={k_star};draws={draws};p={p};freq={f}"),
        dev <= 3.0 * se,
        1.0 - dev / (3.0 * se),
    ))
}

/// Frequency of a very negative derived loss on a layered instance with
/// `2^K` candidates, against `2^(-2 sqrt K)` minus three standard errors.
pub fn lemma7_row(k: u32, trials: u64, consts: &MechanismConstants, seed: u64) -> Result<ReportRow> {
    let (rho, beta) = (1.0, 0.1);
    // Levels one step apart by sqrt(K) xi: a subset holding a single
    // candidate of the best occupied level has gap at least sqrt(K) xi.
    let scale = (k as f64).sqrt() * xi(k as f64, rho, beta, consts)?;
    let inst = generate_instance(InstanceFamily::Layered, 1 << k, scale, 0)?;
    let mut rng = trial_stream(seed, 1, StreamPurpose::Mechanism);
    let r = lemma7_bound_check(&inst, consts, rho, beta, trials, None, &mut rng)?;
    Ok(ReportRow::new(
        "lemma7",
        format!("K={k};trials={trials};rho={rho};beta={beta};freq={};bound={}", r.empirical, r.bound),
        r.within_bound(),
        (r.empirical - (r.bound - 3.0 * r.std_error)) / r.bound,
    ))
}

pub fn fuzz_rows(trials: u64, seed: u64) -> Result<Vec<ReportRow>> {
    let families = [ExprFamily::BinTreeQuery, ExprFamily::TildeLoss, ExprFamily::Random, ExprFamily::Mixed];
    families
        .par_iter()
        .enumerate()
        .map(|(i, &family)| {
            let mut rng = trial_stream(seed, 2 + i as u64, StreamPurpose::Mechanism);
            let r = sensitivity_fuzz(family, FuzzOptions { trials, zero_perturbation: false }, &mut rng)?;
            let mut pass = r.passed() && r.max_ratio <= 1.0 + 1e-9;
            if family == ExprFamily::TildeLoss {
                // Every derived loss must carry the structural bound 1.
                pass &= r.families.iter().all(|f| f.min_bound == 1.0 && f.max_bound == 1.0);
            }
            Ok(ReportRow::new(
                "sensitivity",
                format!("family={};trials={trials};violations={}", family.name(), r.violations),
                pass,
                1.0 - r.max_ratio,
            ))
        })
        .collect()
}

pub fn run_certification(opts: &CertifyOptions) -> Result<Vec<ReportRow>> {
    let mut rows = grid_rows(&opts.grid, &opts.grid_constants)?;
    rows.extend(closed_form_rows()?);
    rows.push(monte_carlo_row(16, 2, 6, opts.monte_carlo_draws, opts.seed)?);
    rows.push(lemma7_row(16, opts.lemma7_trials, &opts.sampling_constants, opts.seed)?);
    rows.extend(fuzz_rows(opts.fuzz_trials, opts.seed)?);
    Ok(rows)
}

pub fn all_pass(rows: &[ReportRow]) -> bool {
    rows.iter().all(|r| r.verdict == Verdict::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn any_non_pass_row_fails_the_report() {
        let pass = ReportRow::new("x", String::new(), true, 1.0);
        let mut rows = vec![pass.clone(), pass];
        assert!(all_pass(&rows));
        rows[1].verdict = Verdict::Inconclusive;
        assert!(!all_pass(&rows));
        rows[1].verdict = Verdict::Fail;
        assert!(!all_pass(&rows));
    }

    #[test]
    fn closed_form_rows_cover_every_small_case() {
        let rows = closed_form_rows().unwrap();
        assert_eq!(rows.len(), 56);
        assert!(all_pass(&rows));
    }
}
