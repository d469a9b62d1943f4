//! Numeric certification of the analytic inequalities behind the
//! recursive mechanism, the subset-sampling probabilities it relies on,
//! and randomized checks of the sensitivity calculus.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use libm::{log2, sqrt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::expr::{bintree_query_over, eval_on, tilde_loss_over, LossExpr};
use crate::ext_real::ExtReal;
use crate::formulas::{ceil_log2, derived_count_ceil_log, tau_ceil_log, xi};
use crate::instance::LossInstance;
use crate::params::MechanismConstants;

/// Comparisons closer than this relative distance are not decided.
pub const INCONCLUSIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Prop14,
    Lemma5,
    Lemma6,
}

impl Claim {
    pub fn name(self) -> &'static str {
        match self {
            Claim::Prop14 => "prop14",
            Claim::Lemma5 => "lemma5",
            Claim::Lemma6 => "lemma6",
        }
    }
}

/// One evaluated inequality `lhs <= rhs` (or `>=`, per claim).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck {
    pub claim: Claim,
    pub k: f64,
    pub rho: f64,
    pub beta: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed relative slack; positive when the claim holds.
    pub margin: f64,
    pub verdict: Verdict,
}

impl ClaimCheck {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn decide(claim: Claim, k: f64, rho: f64, beta: f64, small: f64, large: f64, ambiguous: bool) -> ClaimCheck {
    // Claim is small <= large; both sides are stored as in the statement.
    let scale = small.abs().max(large.abs());
    let margin = (large - small) / scale;
    let verdict = if ambiguous || !margin.is_finite() || margin.abs() < INCONCLUSIVE_TOLERANCE {
        Verdict::Inconclusive
    } else if margin > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let (lhs, rhs) = match claim {
        Claim::Lemma5 => (small, large),
        Claim::Prop14 | Claim::Lemma6 => (large, small),
    };
    ClaimCheck { claim, k, rho, beta, lhs, rhs, margin, verdict }
}

fn check_domain(k: f64, rho: f64, beta: f64) -> Result<()> {
    if !(k >= 1000.0 && k.is_finite()) {
        return Err(domain("K must be at least 1000"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(domain("rho must be positive and finite"));
    }
    if !(beta > 0.0 && beta <= 1e-3) {
        return Err(domain("beta must lie in (0, 0.001]"));
    }
    Ok(())
}

/// `xi(k1, rho, beta) / xi(k2, s rho, s beta)` with the common factors
/// cancelled, so no intermediate power is formed.
pub fn xi_ratio(k1: f64, k2: f64, beta: f64, s: f64, consts: &MechanismConstants) -> f64 {
    let poly = libm::pow((1.0 + log2(k1)) / (1.0 + log2(k2)), consts.p_xi as f64);
    let logs = log2(consts.c_xi * (k1 + 1.0) / beta) / log2(consts.c_xi * (k2 + 1.0) / (s * beta));
    sqrt(s) * poly * logs
}

/// `xi(K, rho, beta) >= 36 xi(t sqrt K, s rho, s beta)` with `t = t_coeff`
/// and `s` the recursive budget share. Returns the check and the ratio of
/// the two sides (before the factor 36).
pub fn check_prop14(k: f64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<(ClaimCheck, f64)> {
    check_domain(k, rho, beta)?;
    let s = recursive_share(consts)?;
    let k2 = consts.t_coeff * sqrt(k);
    let ratio = xi_ratio(k, k2, beta, s, consts);
    Ok((decide(Claim::Prop14, k, rho, beta, 36.0, ratio, false), ratio))
}

/// The same ratio evaluated from two full `xi` values. Used to cross-check
/// [`check_prop14`] where both forms are representable.
pub fn prop14_ratio_direct(k: f64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<f64> {
    let s = recursive_share(consts)?;
    let k2 = consts.t_coeff * sqrt(k);
    Ok(xi(k, rho, beta, consts)? / xi(k2, s * rho, s * beta, consts)?)
}

fn recursive_share(consts: &MechanismConstants) -> Result<f64> {
    if consts.budget_split_recursive != consts.beta_split_recursive {
        return Err(domain("the certified claims assume equal budget and failure splits"));
    }
    Ok(consts.budget_split_recursive)
}

/// Both sides of the recursion step, divided by `xi(K, rho, beta)`:
/// returns `(4 L r, ambiguous)` with `L = ceil(log2 T)` and
/// `r = xi(L, s rho, s beta) / xi(K, rho, beta)`.
fn recursion_term(k: u64, beta: f64, consts: &MechanismConstants, direct: Option<f64>) -> Result<(f64, bool)> {
    let s = recursive_share(consts)?;
    let l = derived_count_ceil_log(k, consts.t_coeff);
    let lf = l.ceil_log as f64;
    let r = match direct {
        Some(rho) => xi(lf, s * rho, s * beta, consts)? / xi(k as f64, rho, beta, consts)?,
        None => 1.0 / xi_ratio(k as f64, lf, beta, s, consts),
    };
    Ok((4.0 * lf * r, l.ambiguous))
}

/// `K xi(K, rho, beta) + 2 gamma(T, s rho, s beta) <= gamma(2^K, rho, beta)`.
pub fn check_lemma5(k: u64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<ClaimCheck> {
    check_domain(k as f64, rho, beta)?;
    let kf = k as f64;
    let (term, ambiguous) = recursion_term(k, beta, consts, None)?;
    Ok(decide(Claim::Lemma5, kf, rho, beta, kf + term, 2.0 * kf, ambiguous))
}

/// `sqrt(K) xi(K, rho, beta) - 2 gamma(T, s rho, s beta) >= tau(2^K, rho / 5, beta / 10)`.
pub fn check_lemma6(k: u64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<ClaimCheck> {
    check_domain(k as f64, rho, beta)?;
    let kf = k as f64;
    let (term, ambiguous) = recursion_term(k, beta, consts, None)?;
    let left = sqrt(kf) - term;
    let right = tau_ceil_log(kf, rho * (1.0 - consts.budget_split_recursive), beta / 10.0)?
        / xi(kf, rho, beta, consts)?;
    Ok(decide(Claim::Lemma6, kf, rho, beta, right, left, ambiguous))
}

/// Lemma checks evaluated through full `xi` values instead of ratios.
pub fn check_lemma5_direct(k: u64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<ClaimCheck> {
    check_domain(k as f64, rho, beta)?;
    let kf = k as f64;
    let (term, ambiguous) = recursion_term(k, beta, consts, Some(rho))?;
    Ok(decide(Claim::Lemma5, kf, rho, beta, kf + term, 2.0 * kf, ambiguous))
}

pub fn check_lemma6_direct(k: u64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<ClaimCheck> {
    check_domain(k as f64, rho, beta)?;
    let kf = k as f64;
    let (term, ambiguous) = recursion_term(k, beta, consts, Some(rho))?;
    let left = sqrt(kf) - term;
    let right = tau_ceil_log(kf, rho * (1.0 - consts.budget_split_recursive), beta / 10.0)?
        / xi(kf, rho, beta, consts)?;
    Ok(decide(Claim::Lemma6, kf, rho, beta, right, left, ambiguous))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: Vec<u64>,
    pub beta: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            k: alloc::vec![1000, 2000, 5000, 10_000, 100_000, 1_000_000],
            beta: (0..=30).map(|d| 1e-3 * libm::pow(0.8, d as f64)).collect(),
            rho: alloc::vec![1e-2, 1.0, 1e2],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.k.len() * self.beta.len() * self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Evaluates all three claims at every grid point, in `k`, `beta`, `rho`
/// order.
pub fn certify_grid(grid: &GridSpec, consts: &MechanismConstants) -> Result<Vec<ClaimCheck>> {
    let mut out = Vec::with_capacity(3 * grid.len());
    for &k in &grid.k {
        for &beta in &grid.beta {
            for &rho in &grid.rho {
                out.push(check_prop14(k as f64, rho, beta, consts)?.0);
                out.push(check_lemma5(k, rho, beta, consts)?);
                out.push(check_lemma6(k, rho, beta, consts)?);
            }
        }
    }
    Ok(out)
}

/// An exact probability `num / den` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        // c * (n - i) / (i + 1) stays integral; divide out the gcd first.
        let g = gcd(c, i + 1);
        c = (c / g) * ((n - i) / ((i + 1) / g));
    }
    c
}

fn check_subset_args(k: u32, i_star: u32, k_star: u32) -> Result<()> {
    if !(i_star < k_star && k_star <= k) {
        return Err(domain("need 0 <= i* < k* <= K"));
    }
    if k > 62 {
        return Err(domain("K must be at most 62"));
    }
    Ok(())
}

/// Probability that a uniform subset of size `2^(K-k*)` of `2^K` ranked
/// candidates holds exactly one of the best `2^i*` and none of the ranks
/// `2^i* + 1 ..= 2^k*`.
pub fn subset_event_probability(k: u32, i_star: u32, k_star: u32) -> Result<f64> {
    check_subset_args(k, i_star, k_star)?;
    let n = libm::exp2(k as f64);
    let b = libm::exp2(k_star as f64);
    let s = 1u64 << (k - k_star);
    // 2^i* * C(n - b, s - 1) / C(n, s)
    //   = 2^(i* - k*) * prod_{j < s - 1} (n - b - j) / (n - 1 - j)
    let terms = s - 1;
    if terms as f64 > n - b {
        return Ok(0.0);
    }
    let log_prod = if terms <= 1 << 22 {
        (0..terms).map(|j| libm::log1p(-(b - 1.0) / (n - 1.0 - j as f64))).sum::<f64>()
    } else {
        let t = terms as f64;
        libm::lgamma(n - b + 1.0) - libm::lgamma(n - b - t + 1.0) - libm::lgamma(n) + libm::lgamma(n - t)
    };
    Ok(libm::exp2(i_star as f64 - k_star as f64) * libm::exp(log_prod))
}

/// [`subset_event_probability`] as an exact fraction, for `K <= 6`.
pub fn subset_event_probability_exact(k: u32, i_star: u32, k_star: u32) -> Result<Ratio> {
    check_subset_args(k, i_star, k_star)?;
    if k > 6 {
        return Err(domain("exact form supports K <= 6"));
    }
    let n = 1u128 << k;
    let b = 1u128 << k_star;
    let s = 1u128 << (k - k_star);
    let num = (1u128 << i_star) * binomial(n - b, s - 1);
    let den = binomial(n, s);
    let g = gcd(num, den).max(1);
    Ok(Ratio { num: num / g, den: den / g })
}

/// Monte Carlo estimate of [`subset_event_probability`]: returns the
/// number of hits in `draws` subsets. Only membership of the top `2^k*`
/// ranks is sampled (selection sampling), which has the same law as
/// drawing a whole subset.
pub fn subset_event_monte_carlo<R: Rng + ?Sized>(
    k: u32,
    i_star: u32,
    k_star: u32,
    draws: u64,
    rng: &mut R,
) -> Result<u64> {
    check_subset_args(k, i_star, k_star)?;
    let n = 1u64 << k;
    let b = 1u64 << k_star;
    let top = 1u64 << i_star;
    let s = 1u64 << (k - k_star);
    let mut hits = 0;
    for _ in 0..draws {
        let mut chosen = 0u64;
        let mut in_top = 0u64;
        let mut in_rest = 0u64;
        for j in 0..b {
            if chosen == s {
                break;
            }
            if rng.random_range(0..n - j) < s - chosen {
                chosen += 1;
                if j < top {
                    in_top += 1;
                } else {
                    in_rest += 1;
                    break;
                }
            }
        }
        if in_top == 1 && in_rest == 0 {
            hits += 1;
        }
    }
    Ok(hits)
}

fn ln_choose(n: f64, k: f64) -> f64 {
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// Draws the smallest rank (0-based) of a uniform `s`-subset of `0..n`
/// by inverting `P(R > r) = C(n - r - 1, s) / C(n, s)`.
pub fn sample_smallest_rank<R: Rng + ?Sized>(n: u64, s: u64, rng: &mut R) -> u64 {
    debug_assert!(1 <= s && s <= n);
    if s == n {
        return 0;
    }
    let u: f64 = rng.random();
    let base = ln_choose(n as f64, s as f64);
    // Smallest r with P(R > r) <= u, i.e. the inverse survival function.
    let survival = |r: u64| -> f64 {
        let m = n - r - 1;
        if m < s {
            0.0
        } else {
            libm::exp(ln_choose(m as f64, s as f64) - base)
        }
    };
    let (mut lo, mut hi) = (0u64, n - s);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if survival(mid) <= u {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

/// Smallest and second-smallest ranks of a uniform `s`-subset of `0..n`.
pub fn sample_two_smallest_ranks<R: Rng + ?Sized>(n: u64, s: u64, rng: &mut R) -> (u64, Option<u64>) {
    let r1 = sample_smallest_rank(n, s, rng);
    if s == 1 {
        return (r1, None);
    }
    // The other s - 1 members are uniform over the ranks above r1.
    let r2 = r1 + 1 + sample_smallest_rank(n - r1 - 1, s - 1, rng);
    (r1, Some(r2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma7Report {
    pub k: u32,
    pub trials: u64,
    pub hits: u64,
    pub empirical: f64,
    pub bound: f64,
    pub std_error: f64,
    pub xi: f64,
}

impl Lemma7Report {
    /// Empirical frequency is at least the bound minus three standard errors.
    pub fn within_bound(&self) -> bool {
        self.empirical >= self.bound - 3.0 * self.std_error
    }
}

/// Samples `(k_t, S_t)` as the recursive mechanism does and measures how
/// often the derived loss satisfies `2 l~ <= -sqrt(K) xi`, evaluated
/// without noise. `forced_k` pins `k_t` instead of drawing it uniformly.
pub fn lemma7_bound_check<R: Rng + ?Sized>(
    inst: &LossInstance,
    consts: &MechanismConstants,
    rho: f64,
    beta: f64,
    trials: u64,
    forced_k: Option<u32>,
    rng: &mut R,
) -> Result<Lemma7Report> {
    let n = inst.len() as u64;
    if n < 2 {
        return Err(domain("need at least two candidates"));
    }
    if trials == 0 {
        return Err(domain("trials must be positive"));
    }
    let k = ceil_log2(n);
    if let Some(fk) = forced_k {
        if !(1..=k).contains(&fk) {
            return Err(domain("forced k must lie in 1..=K"));
        }
    }
    let xi_val = xi(k as f64, rho, beta, consts)?;
    let kf = k as f64;
    let mut sorted = inst.losses().to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let mut hits = 0;
    for _ in 0..trials {
        let kt = forced_k.unwrap_or_else(|| rng.random_range(1..=k));
        let s = (1u64 << (k - kt)).min(n);
        let (r1, r2) = sample_two_smallest_ranks(n, s, rng);
        let best = sorted[r1 as usize];
        let gap = r2.map_or(f64::INFINITY, |r| sorted[r as usize] - best);
        let excess = best - min - (kf + sqrt(kf)) * xi_val;
        let twice = excess.max(-gap);
        if twice <= -sqrt(kf) * xi_val {
            hits += 1;
        }
    }
    let empirical = hits as f64 / trials as f64;
    Ok(Lemma7Report {
        k,
        trials,
        hits,
        empirical,
        bound: libm::exp2(-2.0 * sqrt(kf)),
        std_error: sqrt(empirical * (1.0 - empirical) / trials as f64),
        xi: xi_val,
    })
}

/// Expression families exercised by [`sensitivity_fuzz`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprFamily {
    BinTreeQuery,
    TildeLoss,
    Random,
    /// Each trial picks one of the other families uniformly.
    Mixed,
}

impl ExprFamily {
    pub const BASIC: [ExprFamily; 3] = [ExprFamily::BinTreeQuery, ExprFamily::TildeLoss, ExprFamily::Random];

    pub fn name(self) -> &'static str {
        match self {
            ExprFamily::BinTreeQuery => "bintree_query",
            ExprFamily::TildeLoss => "tilde_loss",
            ExprFamily::Random => "random",
            ExprFamily::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuzzOptions {
    pub trials: u64,
    /// Use the zero perturbation, under which every difference must vanish.
    pub zero_perturbation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub family: ExprFamily,
    pub trials: u64,
    /// Trials whose value was infinite on either input.
    pub skipped: u64,
    pub violations: u64,
    pub max_ratio: f64,
    pub min_bound: f64,
    pub max_bound: f64,
}

impl FamilyStats {
    fn new(family: ExprFamily) -> Self {
        FamilyStats {
            family,
            trials: 0,
            skipped: 0,
            violations: 0,
            max_ratio: 0.0,
            min_bound: f64::INFINITY,
            max_bound: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub trials: u64,
    pub violations: u64,
    pub max_ratio: f64,
    pub families: Vec<FamilyStats>,
    /// Text form of the first violating expression, if any.
    pub first_violation: Option<String>,
}

impl FuzzReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn random_losses<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Integers make ties common.
            if rng.random_bool(0.5) {
                rng.random_range(-10i32..=10) as f64
            } else {
                rng.random_range(-10.0..=10.0)
            }
        })
        .collect()
}

fn random_subset<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let size = rng.random_range(1..=n);
    let mut s: Vec<usize> = rand::seq::index::sample(rng, n, size).into_vec();
    s.sort_unstable();
    s
}

fn random_expr<R: Rng + ?Sized>(n: usize, depth: u32, rng: &mut R) -> LossExpr {
    let leaf = depth == 0 || rng.random_bool(0.3);
    if leaf {
        return match rng.random_range(0..10) {
            0 => LossExpr::constant(ExtReal::finite(rng.random_range(-5.0..5.0)).unwrap()),
            1 if rng.random_bool(0.2) => LossExpr::constant(ExtReal::INFINITY),
            _ => LossExpr::base(rng.random_range(0..n)),
        };
    }
    let children = |rng: &mut R| -> Vec<LossExpr> {
        let m = rng.random_range(1..=4);
        (0..m).map(|_| random_expr(n, depth - 1, rng)).collect()
    };
    match rng.random_range(0..6) {
        0 => LossExpr::min_over(children(rng)).unwrap(),
        1 => LossExpr::max_over(children(rng)).unwrap(),
        2 => LossExpr::gap(children(rng)).unwrap(),
        3 => LossExpr::sub(random_expr(n, depth - 1, rng), random_expr(n, depth - 1, rng)),
        4 => LossExpr::scale(rng.random_range(-3.0..3.0), random_expr(n, depth - 1, rng)).unwrap(),
        _ => LossExpr::add_const(rng.random_range(-5.0..5.0), random_expr(n, depth - 1, rng)).unwrap(),
    }
}

fn draw_expr<R: Rng + ?Sized>(family: ExprFamily, n: usize, rng: &mut R) -> LossExpr {
    let bases: Vec<LossExpr> = (0..n).map(LossExpr::base).collect();
    match family {
        ExprFamily::BinTreeQuery => {
            // A contiguous split of a random ordering, as the descent issues.
            let mut order = rand::seq::index::sample(rng, n, n).into_vec();
            let len = rng.random_range(2..=n);
            order.truncate(len);
            let mid = rng.random_range(1..len);
            let c1 = order[..mid].iter().map(|&i| bases[i].clone()).collect();
            let c2 = order[mid..].iter().map(|&i| bases[i].clone()).collect();
            bintree_query_over(c1, c2).unwrap()
        }
        ExprFamily::TildeLoss => {
            let subset = random_subset(n, rng);
            let k = ceil_log2(n as u64);
            let xi_val = libm::exp(rng.random_range(-4.0..2.0));
            let overall = LossExpr::min_over(bases.as_slice()).unwrap();
            tilde_loss_over(&bases, &subset, &overall, k, xi_val).unwrap()
        }
        ExprFamily::Random => random_expr(n, 4, rng),
        ExprFamily::Mixed => {
            let pick = ExprFamily::BASIC[rng.random_range(0..ExprFamily::BASIC.len())];
            draw_expr(pick, n, rng)
        }
    }
}

/// Draws random expressions, loss vectors and perturbations with
/// coordinates in `[-1, 1]`, and compares `|f(l') - f(l)|` with the
/// structural sensitivity bound of `f`.
pub fn sensitivity_fuzz<R: Rng + ?Sized>(family: ExprFamily, opts: FuzzOptions, rng: &mut R) -> Result<FuzzReport> {
    if opts.trials == 0 {
        return Err(domain("trials must be positive"));
    }
    let mut stats: Vec<FamilyStats> = Vec::new();
    let mut report = FuzzReport { trials: opts.trials, violations: 0, max_ratio: 0.0, families: Vec::new(), first_violation: None };
    for _ in 0..opts.trials {
        let actual = match family {
            ExprFamily::Mixed => ExprFamily::BASIC[rng.random_range(0..ExprFamily::BASIC.len())],
            f => f,
        };
        let n = rng.random_range(2..=12);
        let expr = draw_expr(actual, n, rng);
        let losses = random_losses(n, rng);
        let shifted: Vec<f64> = losses
            .iter()
            .map(|&l| {
                if opts.zero_perturbation {
                    return l;
                }
                l + match rng.random_range(0..3) {
                    0 => -1.0,
                    1 => 1.0,
                    _ => rng.random_range(-1.0..=1.0),
                }
            })
            .collect();
        let idx = match stats.iter().position(|s| s.family == actual) {
            Some(i) => i,
            None => {
                stats.push(FamilyStats::new(actual));
                stats.len() - 1
            }
        };
        let st = &mut stats[idx];
        st.trials += 1;
        let bound = expr.sensitivity_bound();
        st.min_bound = st.min_bound.min(bound);
        st.max_bound = st.max_bound.max(bound);
        let (a, b) = match (eval_on(&expr, &losses), eval_on(&expr, &shifted)) {
            (Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => (a.get(), b.get()),
            _ => {
                st.skipped += 1;
                continue;
            }
        };
        let delta = (b - a).abs();
        let violated = delta > bound * (1.0 + 1e-9) + 1e-9;
        let ratio = if bound > 0.0 {
            delta / bound
        } else if delta > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        st.max_ratio = st.max_ratio.max(ratio);
        if violated {
            st.violations += 1;
            report.violations += 1;
            if report.first_violation.is_none() {
                report.first_violation = Some(alloc::format!("{expr}"));
            }
        }
    }
    report.max_ratio = stats.iter().map(|s| s.max_ratio).fold(0.0, f64::max);
    report.families = stats;
    Ok(report)
}
