//! The budgeted Gaussian query oracle and the equal-budget adapter.

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{EvalCache, Evaluator, LossExpr};
use crate::instance::LossInstance;
use crate::rng::StreamRng;

/// Relative slack on the total budget, absorbing float error in splits
/// such as `4 rho / 5 + rho / 5`.
pub const BUDGET_SLACK: f64 = 1e-9;

/// Largest sensitivity bound accepted for a query.
pub const MAX_SENSITIVITY: f64 = 1.0;

/// One answered query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    /// Zero-based position in the oracle's log.
    pub round: usize,
    pub rho_i: f64,
    pub sensitivity_bound: f64,
    pub answer: f64,
    /// Noise-free value. Kept for analysis of simulated runs only.
    pub true_value: f64,
}

impl QueryRecord {
    pub fn noise(&self) -> f64 {
        self.answer - self.true_value
    }
}

/// What a mechanism may do: issue budgeted sensitivity-1 queries.
pub trait QueryChannel {
    /// Number of base candidates.
    fn num_candidates(&self) -> usize;

    /// Answers `expr` with `Normal(0, 1 / (2 rho_i))` noise and charges
    /// `rho_i` to the budget.
    fn query(&mut self, expr: &LossExpr, rho_i: f64) -> Result<f64>;

    /// Queries answered so far.
    fn rounds(&self) -> usize;

    /// Budget charged so far.
    fn spent(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Gaussian,
    /// Answers are exact. For testing query-channel logic only.
    Zero,
}

/// Trusted curator: owns the instance, enforces the budget, logs every round.
pub struct BudgetOracle {
    instance: LossInstance,
    total_budget: f64,
    spent: f64,
    log: Vec<QueryRecord>,
    rng: StreamRng,
    noise: NoiseMode,
    cache: EvalCache,
}

impl BudgetOracle {
    pub fn new(instance: LossInstance, total_budget: f64, rng: StreamRng) -> Result<Self> {
        if !(total_budget > 0.0 && total_budget.is_finite()) {
            return Err(Error::Domain("total budget must be positive and finite".into()));
        }
        Ok(BudgetOracle {
            instance,
            total_budget,
            spent: 0.0,
            log: Vec::new(),
            rng,
            noise: NoiseMode::Gaussian,
            cache: EvalCache::default(),
        })
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn instance(&self) -> &LossInstance {
        &self.instance
    }

    pub fn total_budget(&self) -> f64 {
        self.total_budget
    }

    pub fn remaining(&self) -> f64 {
        (self.total_budget - self.spent).max(0.0)
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<QueryRecord> {
        self.log
    }

    /// Answers `expr` with Gaussian noise of variance `1 / (2 rho_i)`.
    pub fn noisy_query(&mut self, expr: &LossExpr, rho_i: f64) -> Result<f64> {
        if !(rho_i > 0.0 && rho_i.is_finite()) {
            return Err(Error::Domain("per-query budget must be positive and finite".into()));
        }
        let bound = expr.sensitivity_bound();
        if bound > MAX_SENSITIVITY {
            return Err(Error::SensitivityViolation(bound));
        }
        if self.spent + rho_i > self.total_budget * (1.0 + BUDGET_SLACK) {
            return Err(Error::BudgetExceeded {
                spent: self.spent,
                requested: rho_i,
                total: self.total_budget,
            });
        }
        let mut ev = Evaluator::with_cache(self.instance.losses(), core::mem::take(&mut self.cache));
        let value = ev.eval(expr);
        self.cache = ev.into_cache();
        let value = value?;
        if !value.is_finite() {
            return Err(Error::NonFiniteQuery);
        }
        let value = value.get();
        let answer = match self.noise {
            NoiseMode::Gaussian => {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                value + z * noise_std(rho_i)
            }
            NoiseMode::Zero => value,
        };
        self.spent += rho_i;
        self.log.push(QueryRecord {
            round: self.log.len(),
            rho_i,
            sensitivity_bound: bound,
            answer,
            true_value: value,
        });
        Ok(answer)
    }
}

impl QueryChannel for BudgetOracle {
    fn num_candidates(&self) -> usize {
        self.instance.len()
    }

    fn query(&mut self, expr: &LossExpr, rho_i: f64) -> Result<f64> {
        self.noisy_query(expr, rho_i)
    }

    fn rounds(&self) -> usize {
        self.log.len()
    }

    fn spent(&self) -> f64 {
        self.spent
    }
}

/// Standard deviation of the noise bought with budget `rho_i`.
pub fn noise_std(rho_i: f64) -> f64 {
    libm::sqrt(1.0 / (2.0 * rho_i))
}

/// How one variable-budget query is replayed in the equal-budget model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualBudgetPlan {
    /// Budget the mechanism asked for.
    pub rho_i: f64,
    /// `M'`, total equal-budget rounds.
    pub m_rounds_total: usize,
    /// `rho' / M'`.
    pub per_round_budget: f64,
    /// `m_i = ceil(M' rho_i / rho')`.
    pub per_query_repeats: usize,
    /// `1 / (2 rho_i) - M' / (2 rho' m_i)`.
    pub topup_variance: f64,
}

impl EqualBudgetPlan {
    pub fn new(m_rounds_total: usize, rho_prime: f64, rho_i: f64) -> Result<Self> {
        if m_rounds_total == 0 || !(rho_prime > 0.0) || !(rho_i > 0.0) {
            return Err(Error::Domain("equal-budget plan needs positive M', rho', rho_i".into()));
        }
        let m = m_rounds_total as f64;
        let exact = m * rho_i / rho_prime;
        // Values a few ulps above an integer come from float splits of the
        // budget; round them down so they do not cost an extra round.
        let nearest = libm::round(exact);
        let repeats = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            libm::ceil(exact)
        }
        .max(1.0);
        let averaged = m / (2.0 * rho_prime * repeats);
        let mut topup = 1.0 / (2.0 * rho_i) - averaged;
        if topup < 0.0 {
            assert!(
                -topup <= 1e-9 * averaged,
                "negative top-up variance {topup} for rho_i = {rho_i}"
            );
            topup = 0.0;
        }
        Ok(EqualBudgetPlan {
            rho_i,
            m_rounds_total,
            per_round_budget: rho_prime / m,
            per_query_repeats: repeats as usize,
            topup_variance: topup,
        })
    }

    /// Variance of the average of the repeated answers.
    pub fn averaged_variance(&self) -> f64 {
        1.0 / (2.0 * self.per_round_budget * self.per_query_repeats as f64)
    }
}

/// Summary of a run through the equal-budget adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualBudgetReport {
    pub declared_round_bound: usize,
    pub m_rounds_total: usize,
    pub rho_prime: f64,
    /// Variable-budget queries the mechanism issued.
    pub mechanism_rounds: usize,
    /// Equal-budget rounds consumed.
    pub equal_rounds_used: usize,
    /// Budget the mechanism declared, at most `rho`.
    pub declared_budget: f64,
    pub plans: Vec<EqualBudgetPlan>,
}

/// Presents an equal-budget oracle as a variable-budget channel by
/// repeating each query and adding top-up noise.
pub struct EqualBudgetAdapter<'o> {
    inner: &'o mut BudgetOracle,
    topup_rng: StreamRng,
    m_bound: usize,
    rho: f64,
    m_prime: usize,
    rho_prime: f64,
    declared: f64,
    plans: Vec<EqualBudgetPlan>,
}

impl<'o> EqualBudgetAdapter<'o> {
    /// `inner` must hold total budget `2 rho`; the adapter runs `2 m_bound`
    /// equal rounds of `rho / m_bound` each.
    pub fn new(inner: &'o mut BudgetOracle, topup_rng: StreamRng, m_bound: usize, rho: f64) -> Result<Self> {
        if m_bound == 0 || !(rho > 0.0) {
            return Err(Error::Domain("round bound and budget must be positive".into()));
        }
        let rho_prime = 2.0 * rho;
        if (inner.total_budget() - rho_prime).abs() > BUDGET_SLACK * rho_prime {
            return Err(Error::Domain("inner oracle must hold budget 2 rho".into()));
        }
        Ok(EqualBudgetAdapter {
            inner,
            topup_rng,
            m_bound,
            rho,
            m_prime: 2 * m_bound,
            rho_prime,
            declared: 0.0,
            plans: Vec::new(),
        })
    }

    pub fn report(&self) -> EqualBudgetReport {
        EqualBudgetReport {
            declared_round_bound: self.m_bound,
            m_rounds_total: self.m_prime,
            rho_prime: self.rho_prime,
            mechanism_rounds: self.plans.len(),
            equal_rounds_used: self.inner.log().len(),
            declared_budget: self.declared,
            plans: self.plans.clone(),
        }
    }
}

impl QueryChannel for EqualBudgetAdapter<'_> {
    fn num_candidates(&self) -> usize {
        self.inner.num_candidates()
    }

    fn query(&mut self, expr: &LossExpr, rho_i: f64) -> Result<f64> {
        if self.plans.len() >= self.m_bound {
            return Err(Error::RoundsExceeded(self.m_bound));
        }
        if self.declared + rho_i > self.rho * (1.0 + BUDGET_SLACK) {
            return Err(Error::BudgetExceeded {
                spent: self.declared,
                requested: rho_i,
                total: self.rho,
            });
        }
        let plan = EqualBudgetPlan::new(self.m_prime, self.rho_prime, rho_i)?;
        let mut sum = 0.0;
        for _ in 0..plan.per_query_repeats {
            sum += self.inner.noisy_query(expr, plan.per_round_budget)?;
        }
        let mut answer = sum / plan.per_query_repeats as f64;
        if plan.topup_variance > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.topup_rng);
            answer += z * libm::sqrt(plan.topup_variance);
        }
        self.declared += rho_i;
        self.plans.push(plan);
        Ok(answer)
    }

    fn rounds(&self) -> usize {
        self.plans.len()
    }

    fn spent(&self) -> f64 {
        self.declared
    }
}

/// Runs `mechanism` (at most `m_bound` rounds, budget `rho`) against an
/// equal-budget oracle with `2 m_bound` rounds and total budget `2 rho`.
///
/// `make_oracle` receives the total budget the inner oracle must hold.
pub fn equal_budget_simulate<T>(
    make_oracle: impl FnOnce(f64) -> Result<BudgetOracle>,
    topup_rng: StreamRng,
    m_bound: usize,
    rho: f64,
    mechanism: impl FnOnce(&mut dyn QueryChannel) -> Result<T>,
) -> Result<(T, EqualBudgetReport)> {
    let mut inner = make_oracle(2.0 * rho)?;
    let mut adapter = EqualBudgetAdapter::new(&mut inner, topup_rng, m_bound, rho)?;
    let out = mechanism(&mut adapter)?;
    let report = adapter.report();
    debug_assert!(report.equal_rounds_used <= report.m_rounds_total);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{build_bintree_query, LossExpr};
    use crate::rng::{trial_stream, StreamPurpose};
    use alloc::vec;

    fn oracle(losses: &[f64], rho: f64) -> BudgetOracle {
        let inst = LossInstance::new(losses.to_vec()).unwrap();
        BudgetOracle::new(inst, rho, trial_stream(1, 0, StreamPurpose::Noise)).unwrap()
    }

    #[test]
    fn half_budget_gives_unit_noise() {
        assert_eq!(noise_std(0.5), 1.0);
    }

    #[test]
    fn spends_and_logs() {
        let mut o = oracle(&[0.0, 5.0], 1.0);
        let q = build_bintree_query(&[0], &[1]).unwrap();
        o.noisy_query(&q, 0.25).unwrap();
        o.noisy_query(&q, 0.75).unwrap();
        assert_eq!(o.spent(), 1.0);
        assert_eq!(o.log().len(), 2);
        assert_eq!(o.log()[1].round, 1);
        assert_eq!(o.log()[0].true_value, -2.5);
        let err = o.noisy_query(&q, 1e-6).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert_eq!(o.log().len(), 2);
    }

    #[test]
    fn unhalved_gap_is_rejected() {
        let mut o = oracle(&[0.0, 5.0], 1.0);
        let g = LossExpr::gap_of_indices(&[0, 1]).unwrap();
        assert_eq!(o.noisy_query(&g, 0.1), Err(Error::SensitivityViolation(2.0)));
        assert_eq!(o.spent(), 0.0);
    }

    #[test]
    fn infinite_value_is_rejected() {
        let mut o = oracle(&[0.0, 5.0], 1.0);
        let g = LossExpr::scale(0.5, LossExpr::gap_of_indices(&[1]).unwrap()).unwrap();
        assert_eq!(o.noisy_query(&g, 0.1), Err(Error::NonFiniteQuery));
    }

    #[test]
    fn split_budgets_recombine_within_slack() {
        let rho = 0.7;
        let mut o = oracle(&[1.0, 2.0, 3.0], rho);
        let q = LossExpr::base(0);
        for _ in 0..7 {
            o.noisy_query(&q, rho / 7.0).unwrap();
        }
        let total: f64 = o.log().iter().map(|r| r.rho_i).sum();
        assert_eq!(total, o.spent());
        assert!(o.spent() <= rho * (1.0 + BUDGET_SLACK));
    }

    #[test]
    fn zero_noise_mode_answers_exactly() {
        let mut o = oracle(&[3.0, 1.0], 1.0).with_noise(NoiseMode::Zero);
        assert_eq!(o.noisy_query(&LossExpr::base(0), 0.01).unwrap(), 3.0);
    }

    #[test]
    fn equal_budget_plan_arithmetic() {
        // M = 5, rho = 1, rho_i = 0.5.
        let p = EqualBudgetPlan::new(10, 2.0, 0.5).unwrap();
        assert_eq!(p.per_query_repeats, 3);
        assert!((p.averaged_variance() - 10.0 / 12.0).abs() < 1e-15);
        assert!((p.topup_variance - (1.0 - 10.0 / 12.0)).abs() < 1e-15);
        // rho_i = rho' / M' exactly.
        let p = EqualBudgetPlan::new(10, 2.0, 0.2).unwrap();
        assert_eq!(p.per_query_repeats, 1);
        assert_eq!(p.topup_variance, 0.0);
    }

    #[test]
    fn adapter_enforces_declared_rounds() {
        let inst = LossInstance::new(vec![0.0, 1.0]).unwrap();
        let res = equal_budget_simulate(
            |b| BudgetOracle::new(inst.clone(), b, trial_stream(2, 0, StreamPurpose::Noise)),
            trial_stream(2, 0, StreamPurpose::Topup),
            2,
            1.0,
            |ch| {
                for _ in 0..3 {
                    ch.query(&LossExpr::base(0), 0.1)?;
                }
                Ok(())
            },
        );
        assert_eq!(res.unwrap_err(), Error::RoundsExceeded(2));
    }

    #[test]
    fn adapter_stays_within_equal_rounds() {
        let inst = LossInstance::new(vec![0.0, 1.0]).unwrap();
        let budgets = [0.5, 0.3, 0.15, 0.05];
        let (_, report) = equal_budget_simulate(
            |b| BudgetOracle::new(inst.clone(), b, trial_stream(3, 0, StreamPurpose::Noise)),
            trial_stream(3, 0, StreamPurpose::Topup),
            budgets.len(),
            1.0,
            |ch| {
                for b in budgets {
                    ch.query(&LossExpr::base(1), b)?;
                }
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(report.mechanism_rounds, 4);
        assert!(report.equal_rounds_used <= report.m_rounds_total);
        assert!((report.declared_budget - 1.0).abs() < 1e-12);
    }
}
