//! Selection mechanisms. Everything except the exponential mechanism talks
//! to the data only through a [`QueryChannel`].

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::expr::{bintree_query_over, comparison_query, tilde_loss_over, LossExpr};
use crate::formulas::{ceil_log2, derived_count, xi};
use crate::instance::LossInstance;
use crate::oracle::{BudgetOracle, QueryChannel};
use crate::params::{MechanismConstants, PrivacyParams};

/// Output of a selection mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub winner: usize,
    pub rounds_used: usize,
    pub budget_spent: f64,
    /// Recursion levels that ran above the base case; 0 for flat mechanisms.
    pub recursion_depth: u32,
}

fn check_budget(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(domain("rho must be positive and finite"))
    }
}

fn base_losses(n: usize) -> Vec<LossExpr> {
    (0..n).map(LossExpr::base).collect()
}

struct Meter {
    rounds: usize,
    spent: f64,
}

impl Meter {
    fn start<C: QueryChannel + ?Sized>(ch: &C) -> Self {
        Meter { rounds: ch.rounds(), spent: ch.spent() }
    }

    fn finish<C: QueryChannel + ?Sized>(self, ch: &C, winner: usize, depth: u32) -> SelectionResult {
        SelectionResult {
            winner,
            rounds_used: ch.rounds() - self.rounds,
            budget_spent: ch.spent() - self.spent,
            recursion_depth: depth,
        }
    }
}

/// Binary-tree descent over `candidates` (positions into the channel's
/// candidate list), spending `rho / K` per level.
pub fn bin_tree<C: QueryChannel + ?Sized>(ch: &mut C, candidates: &[usize], rho: f64) -> Result<SelectionResult> {
    check_budget(rho)?;
    if candidates.is_empty() {
        return Err(domain("bin_tree needs at least one candidate"));
    }
    let n = ch.num_candidates();
    if let Some(&bad) = candidates.iter().find(|&&y| y >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let meter = Meter::start(ch);
    let losses: Vec<LossExpr> = candidates.iter().map(|&y| LossExpr::base(y)).collect();
    let pos = bin_tree_over(ch, &losses, rho)?;
    Ok(meter.finish(ch, candidates[pos], 0))
}

/// Binary-tree descent over arbitrary loss expressions; returns a position
/// into `losses`.
///
/// The current set is always a contiguous run of `losses`: it is split in
/// order with the larger half first, and the right half is kept iff the
/// noisy answer is strictly positive.
pub fn bin_tree_over<C: QueryChannel + ?Sized>(ch: &mut C, losses: &[LossExpr], rho: f64) -> Result<usize> {
    let k = ceil_log2(losses.len() as u64);
    let (mut lo, mut hi) = (0, losses.len());
    let mut levels = 0;
    while hi - lo > 1 {
        let mid = lo + (hi - lo).div_ceil(2);
        let q = bintree_query_over(losses[lo..mid].to_vec(), losses[mid..hi].to_vec())?;
        let answer = ch.query(&q, rho / k as f64)?;
        if answer > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        levels += 1;
    }
    debug_assert!(levels <= k);
    Ok(lo)
}

/// Recursive gap mechanism over all candidates of the channel.
pub fn recur_gap<C, R>(
    ch: &mut C,
    rho: f64,
    beta: f64,
    consts: &MechanismConstants,
    rng: &mut R,
) -> Result<SelectionResult>
where
    C: QueryChannel + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(rho)?;
    // beta = 1 is admitted so the combined mechanism can call this at K = 1.
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(domain("beta must lie in (0, 1]"));
    }
    consts.validate()?;
    let meter = Meter::start(ch);
    let losses = base_losses(ch.num_candidates());
    let mut work = 0.0;
    let (winner, depth) = recur_gap_over(ch, &losses, rho, beta, consts, rng, &mut work)?;
    Ok(meter.finish(ch, winner, depth))
}

/// One level of the recursion over `losses`. Returns the selected position
/// and the number of recursive levels below the base case.
pub fn recur_gap_over<C, R>(
    ch: &mut C,
    losses: &[LossExpr],
    rho: f64,
    beta: f64,
    consts: &MechanismConstants,
    rng: &mut R,
    work: &mut f64,
) -> Result<(usize, u32)>
where
    C: QueryChannel + ?Sized,
    R: Rng + ?Sized,
{
    let n = losses.len();
    let k = ceil_log2(n as u64);
    if k <= consts.base_threshold_log || beta <= libm::exp2(-(k as f64)) {
        return Ok((bin_tree_over(ch, losses, rho)?, 0));
    }
    let t = derived_count(k, consts)?;
    let largest = libm::exp2((k - 1) as f64);
    *work += t as f64 * largest;
    if *work > consts.work_limit {
        return Err(Error::InfeasibleConfig(alloc::format!(
            "{t} derived losses over subsets of up to {largest} candidates exceed the work limit {}",
            consts.work_limit
        )));
    }
    let t = t as usize;
    let xi_val = xi(k as f64, rho, beta, consts)?;
    let overall = LossExpr::min_over(Arc::<[LossExpr]>::from(losses))?;

    let mut subsets: Vec<Vec<u32>> = Vec::with_capacity(t);
    let mut derived = Vec::with_capacity(t);
    let mut scratch = Vec::new();
    for _ in 0..t {
        let k_t = rng.random_range(1..=k);
        let size = 1usize << (k - k_t);
        scratch.clear();
        scratch.extend(rand::seq::index::sample(rng, n, size).iter());
        scratch.sort_unstable();
        derived.push(tilde_loss_over(losses, &scratch, &overall, k, xi_val)?);
        subsets.push(scratch.iter().map(|&i| i as u32).collect());
    }

    let recursive_rho = rho * consts.budget_split_recursive;
    let recursive_beta = beta * consts.beta_split_recursive;
    let (t_out, depth) = recur_gap_over(ch, &derived, recursive_rho, recursive_beta, consts, rng, work)?;
    drop(derived);

    let chosen = &subsets[t_out];
    let members: Vec<LossExpr> = chosen.iter().map(|&i| losses[i as usize].clone()).collect();
    let pos = bin_tree_over(ch, &members, rho - recursive_rho)?;
    Ok((chosen[pos] as usize, depth + 1))
}

/// Runs the recursive gap mechanism and the binary tree on a third of the
/// budget each, then keeps the better of the two by one noisy comparison.
pub fn combined<C, R>(ch: &mut C, rho: f64, consts: &MechanismConstants, rng: &mut R) -> Result<SelectionResult>
where
    C: QueryChannel + ?Sized,
    R: Rng + ?Sized,
{
    check_budget(rho)?;
    let n = ch.num_candidates();
    if n < 2 {
        return Err(domain("combined needs at least two candidates"));
    }
    let meter = Meter::start(ch);
    let k = ceil_log2(n as u64);
    let beta = 1.0 / k as f64;
    let third = rho / 3.0;
    let first = recur_gap(ch, third, beta, consts, rng)?;
    let all: Vec<usize> = (0..n).collect();
    let second = bin_tree(ch, &all, third)?;
    let q = comparison_query(LossExpr::base(first.winner), LossExpr::base(second.winner));
    let answer = ch.query(&q, third)?;
    let winner = if answer > 0.0 { second.winner } else { first.winner };
    Ok(meter.finish(ch, winner, first.recursion_depth))
}

/// Queries every candidate with `rho / |Y|` and returns the noisy argmin.
pub fn trivial_baseline<C: QueryChannel + ?Sized>(ch: &mut C, rho: f64) -> Result<SelectionResult> {
    check_budget(rho)?;
    let n = ch.num_candidates();
    let meter = Meter::start(ch);
    let per_query = rho / n as f64;
    let mut best = (0, f64::INFINITY);
    for y in 0..n {
        let a = ch.query(&LossExpr::base(y), per_query)?;
        if a < best.1 {
            best = (y, a);
        }
    }
    Ok(meter.finish(ch, best.0, 0))
}

/// Exponential mechanism with `eps = sqrt(2 rho)`: picks `y` with
/// probability proportional to `exp(-eps l_y / 2)`.
///
/// Reads the instance directly; it is a reference point, not a query-model
/// mechanism.
pub fn exponential_mechanism<R: Rng + ?Sized>(inst: &LossInstance, rho: f64, rng: &mut R) -> Result<SelectionResult> {
    check_budget(rho)?;
    let eps = libm::sqrt(2.0 * rho);
    let min = inst.min_loss();
    let weights: Vec<f64> = inst
        .losses()
        .iter()
        .map(|&l| libm::exp(-eps * (l - min) / 2.0))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut winner = inst.min_index();
    for (y, w) in weights.iter().enumerate() {
        if u < *w {
            winner = y;
            break;
        }
        u -= w;
    }
    Ok(SelectionResult { winner, rounds_used: 0, budget_spent: rho, recursion_depth: 0 })
}

/// The mechanisms a harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    BinTree,
    RecurGap {
        #[serde(default)]
        constants: MechanismConstants,
    },
    Combined {
        #[serde(default)]
        constants: MechanismConstants,
    },
    Exponential,
    Trivial,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::BinTree => "bin_tree",
            Mechanism::RecurGap { .. } => "recur_gap",
            Mechanism::Combined { .. } => "combined",
            Mechanism::Exponential => "exponential",
            Mechanism::Trivial => "trivial",
        }
    }

    /// Whether the mechanism only touches data through queries.
    pub fn uses_query_model(&self) -> bool {
        !matches!(self, Mechanism::Exponential)
    }

    /// Runs on a fresh oracle holding the full budget.
    pub fn run<R: Rng + ?Sized>(&self, oracle: &mut BudgetOracle, params: PrivacyParams, rng: &mut R) -> Result<SelectionResult> {
        match self {
            Mechanism::Exponential => exponential_mechanism(oracle.instance(), params.rho, rng),
            _ => self.run_on_channel(oracle, params, rng),
        }
    }

    /// Runs a query-model mechanism on any channel.
    pub fn run_on_channel<C, R>(&self, ch: &mut C, params: PrivacyParams, rng: &mut R) -> Result<SelectionResult>
    where
        C: QueryChannel + ?Sized,
        R: Rng + ?Sized,
    {
        match self {
            Mechanism::BinTree => {
                let all: Vec<usize> = (0..ch.num_candidates()).collect();
                bin_tree(ch, &all, params.rho)
            }
            Mechanism::RecurGap { constants } => recur_gap(ch, params.rho, params.beta, constants, rng),
            Mechanism::Combined { constants } => combined(ch, params.rho, constants, rng),
            Mechanism::Trivial => trivial_baseline(ch, params.rho),
            Mechanism::Exponential => Err(domain("the exponential mechanism is outside the query model")),
        }
    }

    /// Static upper bound on the number of queries for `n` candidates.
    pub fn round_bound(&self, n: usize, params: PrivacyParams) -> Result<usize> {
        let k = ceil_log2(n.max(1) as u64) as usize;
        match self {
            Mechanism::BinTree => Ok(k),
            Mechanism::Trivial => Ok(n),
            Mechanism::RecurGap { constants } => recur_gap_round_bound(n, params.beta, constants),
            Mechanism::Combined { constants } => {
                Ok(recur_gap_round_bound(n, 1.0 / k.max(1) as f64, constants)? + k + 1)
            }
            Mechanism::Exponential => Err(domain("the exponential mechanism issues no queries")),
        }
    }
}

/// Upper bound on the queries of [`recur_gap`]. Level sizes are
/// deterministic (`T` depends only on `K`) and the final binary tree of a
/// level runs on at most `2^(K-1)` candidates, so it costs `K - 1` rounds.
pub fn recur_gap_round_bound(n: usize, beta: f64, consts: &MechanismConstants) -> Result<usize> {
    let mut total = 0usize;
    let mut n = n.max(1) as u64;
    let mut beta = beta;
    loop {
        let k = ceil_log2(n);
        if k <= consts.base_threshold_log || beta <= libm::exp2(-(k as f64)) {
            return Ok(total + k as usize);
        }
        total += (k - 1) as usize;
        n = derived_count(k, consts)?;
        beta *= consts.beta_split_recursive;
    }
}
