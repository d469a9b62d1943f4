//! Closed-form thresholds: the gap threshold `tau`, the loss scale `xi`
//! and the error scale `gamma`. All logarithms are base 2.

use libm::{log2, sqrt};

use crate::error::{domain, Error, Result};
use crate::params::MechanismConstants;

/// `ceil(log2 m)` for `m >= 1`.
pub fn ceil_log2(m: u64) -> u32 {
    assert!(m >= 1, "ceil_log2 of zero");
    if m == 1 {
        0
    } else {
        u64::BITS - (m - 1).leading_zeros()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(domain("rho must be positive and finite"))
    }
}

/// Gap above which the binary tree recovers the minimum w.p. `1 - beta`:
/// `2 sqrt(K log2(K / beta)) / sqrt(rho)` with `K = ceil(log2 m)`.
pub fn tau(m: u64, rho: f64, beta: f64) -> Result<f64> {
    if m < 2 {
        return Err(domain("tau is undefined for fewer than two candidates"));
    }
    tau_ceil_log(ceil_log2(m) as f64, rho, beta)
}

/// [`tau`] with `K = ceil(log2 m)` supplied directly.
pub fn tau_ceil_log(k: f64, rho: f64, beta: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(k >= 1.0 && k.is_finite()) {
        return Err(domain("tau needs K >= 1"));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain("tau needs beta in (0, 1)"));
    }
    let inner = log2(k / beta);
    if !(inner > 0.0) {
        return Err(domain("tau needs K / beta > 1"));
    }
    Ok(2.0 * sqrt(k * inner) / sqrt(rho))
}

/// `(c_xi / sqrt(rho)) (1 + log2 K)^p_xi log2(c_xi (K + 1) / beta)`.
///
/// `k` may be any real `>= 1`; the recursion only uses integers.
pub fn xi(k: f64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<f64> {
    check_rho(rho)?;
    if !(k >= 1.0 && k.is_finite()) {
        return Err(domain("xi needs K >= 1"));
    }
    if !(beta > 0.0) {
        return Err(domain("xi needs beta > 0"));
    }
    let arg = consts.c_xi * (k + 1.0) / beta;
    if !(arg > 1.0) {
        return Err(domain("xi log argument must exceed 1"));
    }
    let base = 1.0 + log2(k);
    let mut poly = 1.0;
    for _ in 0..consts.p_xi {
        poly *= base;
    }
    Ok(consts.c_xi / sqrt(rho) * poly * log2(arg))
}

/// `2 ceil(log2 m) xi(ceil(log2 m), rho, beta)` for `m >= 2`.
pub fn gamma(m: u64, rho: f64, beta: f64, consts: &MechanismConstants) -> Result<f64> {
    if m < 2 {
        return Err(domain("gamma needs m >= 2"));
    }
    gamma_ceil_log(ceil_log2(m) as u64, rho, beta, consts)
}

/// [`gamma`] for a set whose size is only known through `ceil(log2 m)`.
pub fn gamma_ceil_log(
    ceil_log: u64,
    rho: f64,
    beta: f64,
    consts: &MechanismConstants,
) -> Result<f64> {
    if ceil_log == 0 {
        return Err(domain("gamma needs m >= 2"));
    }
    let k = ceil_log as f64;
    Ok(2.0 * k * xi(k, rho, beta, consts)?)
}

/// `ceil(log2 T)` for `T = ceil(2^(t_coeff sqrt(K) - 1))`, without
/// materialising `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivedCountLog {
    pub ceil_log: u64,
    /// Set when the exponent lies within a few ulps of an integer and is
    /// not provably exact, so the ceiling may be off by one.
    pub ambiguous: bool,
}

pub fn derived_count_ceil_log(k: u64, t_coeff: f64) -> DerivedCountLog {
    let root = integer_sqrt(k);
    let exact_root = root * root == k;
    let x = if exact_root {
        t_coeff * root as f64 - 1.0
    } else {
        t_coeff * sqrt(k as f64) - 1.0
    };
    let nearest = libm::round(x);
    let exact = exact_root && libm::trunc(t_coeff) == t_coeff && x == nearest;
    let ambiguous = !exact && (x - nearest).abs() <= 8.0 * f64::EPSILON * x.abs().max(1.0);
    // 2^x with x <= 0 gives T = 1.
    let ceil_log = if x <= 0.0 { 0 } else { libm::ceil(x) as u64 };
    DerivedCountLog { ceil_log, ambiguous }
}

/// `T = ceil(2^(t_coeff sqrt(K) - 1))`, the number of derived losses.
pub fn derived_count(k: u32, consts: &MechanismConstants) -> Result<u64> {
    let x = consts.t_coeff * sqrt(k as f64) - 1.0;
    if x >= 62.0 {
        return Err(Error::InfeasibleConfig(alloc::format!(
            "T = 2^{x:.2} derived losses at K = {k}"
        )));
    }
    Ok(libm::ceil(libm::exp2(x)) as u64)
}

fn integer_sqrt(n: u64) -> u64 {
    let mut r = sqrt(n as f64) as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULTS: MechanismConstants = MechanismConstants {
        c_xi: 1000.0,
        p_xi: 10,
        base_threshold_log: 1000,
        t_coeff: 3.0,
        budget_split_recursive: 0.8,
        beta_split_recursive: 0.8,
        work_limit: 1e9,
    };

    #[test]
    fn ceil_log2_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(1024), 10);
        assert_eq!(ceil_log2(1025), 11);
        assert_eq!(ceil_log2(u64::MAX), 64);
    }

    #[test]
    fn tau_worked_values() {
        assert_eq!(tau(2, 4.0, 0.5).unwrap(), 1.0);
        let t = tau(1024, 1.0, 0.1).unwrap();
        assert!((t - 16.301970665873).abs() < 1e-11, "{t}");
    }

    #[test]
    fn tau_domain_errors() {
        assert!(tau(1, 1.0, 0.1).is_err());
        assert!(tau(4, 0.0, 0.1).is_err());
        assert!(tau(4, 1.0, 0.0).is_err());
    }

    #[test]
    fn xi_worked_values() {
        assert_eq!(xi(1.0, 1.0, 0.9765625, &DEFAULTS).unwrap(), 11000.0);
        assert_eq!(xi(2.0, 4.0, 0.732421875, &DEFAULTS).unwrap(), 6144000.0);
    }

    #[test]
    fn xi_rejects_small_log_argument() {
        let c = MechanismConstants { c_xi: 0.25, ..DEFAULTS };
        // 0.25 * 2 / 0.9 < 1
        assert!(xi(1.0, 1.0, 0.9, &c).is_err());
    }

    #[test]
    fn gamma_worked_values() {
        assert_eq!(gamma(2, 1.0, 0.9765625, &DEFAULTS).unwrap(), 22000.0);
        let direct = 4.0 * xi(2.0, 1.0, 0.9765625, &DEFAULTS).unwrap();
        assert_eq!(gamma(4, 1.0, 0.9765625, &DEFAULTS).unwrap(), direct);
        assert!(gamma(1, 1.0, 0.5, &DEFAULTS).is_err());
        let b0 = 1e-4;
        assert_eq!(
            gamma_ceil_log(11, 0.8, 0.8 * b0, &DEFAULTS).unwrap(),
            22.0 * xi(11.0, 0.8, 0.8 * b0, &DEFAULTS).unwrap()
        );
    }

    #[test]
    fn derived_count_small_k() {
        let c = MechanismConstants::scaled();
        assert_eq!(derived_count(16, &c).unwrap(), 2048);
        assert_eq!(derived_count(9, &c).unwrap(), 256);
        assert_eq!(derived_count(11, &c).unwrap(), 495);
        assert!(derived_count(1000, &c).is_err());
    }

    #[test]
    fn derived_count_log_matches_materialised_count() {
        for k in 1..=400u64 {
            let l = derived_count_ceil_log(k, 3.0);
            assert!(!l.ambiguous, "K = {k}");
            if let Ok(t) = derived_count(k as u32, &DEFAULTS) {
                assert_eq!(l.ceil_log, ceil_log2(t) as u64, "K = {k}");
            }
        }
        assert_eq!(derived_count_ceil_log(1_000_000, 3.0).ceil_log, 2999);
        assert_eq!(derived_count_ceil_log(10_000, 3.0).ceil_log, 299);
        assert_eq!(derived_count_ceil_log(1000, 3.0).ceil_log, 94);
    }
}
