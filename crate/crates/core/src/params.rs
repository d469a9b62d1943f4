use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Total zCDP budget and target failure probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub rho: f64,
    pub beta: f64,
}

impl PrivacyParams {
    pub fn new(rho: f64, beta: f64) -> Result<Self> {
        let p = PrivacyParams { rho, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(domain("rho must be positive and finite"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(domain("beta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Tunable constants of the recursive gap mechanism.
///
/// [`MechanismConstants::default`] carries the original constants of the
/// algorithm. With those values the base case covers every instance with
/// at most `2^1000` candidates, so the recursion only runs with scaled
/// constants such as [`MechanismConstants::scaled`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConstants {
    /// Leading constant of `xi`.
    pub c_xi: f64,
    /// Exponent on `1 + log2 K` in `xi`.
    pub p_xi: u32,
    /// Base case when `ceil(log2 |Y|) <= base_threshold_log`.
    pub base_threshold_log: u32,
    /// `T = ceil(2^(t_coeff * sqrt(K) - 1))`.
    pub t_coeff: f64,
    /// Share of the budget handed to the recursive call.
    pub budget_split_recursive: f64,
    /// Share of the failure probability handed to the recursive call.
    pub beta_split_recursive: f64,
    /// Upper bound on `T * max subset size` summed over recursion levels.
    pub work_limit: f64,
}

impl Default for MechanismConstants {
    fn default() -> Self {
        MechanismConstants {
            c_xi: 1000.0,
            p_xi: 10,
            base_threshold_log: 1000,
            t_coeff: 3.0,
            budget_split_recursive: 0.8,
            beta_split_recursive: 0.8,
            work_limit: 1e9,
        }
    }
}

impl MechanismConstants {
    pub fn reference() -> Self {
        Self::default()
    }

    /// Small constants under which the recursion runs at desk scale.
    pub fn scaled() -> Self {
        MechanismConstants {
            c_xi: 1.0,
            p_xi: 1,
            base_threshold_log: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.c_xi) {
            return Err(domain("c_xi must be positive"));
        }
        if self.p_xi == 0 {
            return Err(domain("p_xi must be a positive integer"));
        }
        if self.base_threshold_log == 0 {
            return Err(domain("base_threshold_log must be a positive integer"));
        }
        if !positive(self.t_coeff) {
            return Err(domain("t_coeff must be positive"));
        }
        for (name, s) in [
            ("budget_split_recursive", self.budget_split_recursive),
            ("beta_split_recursive", self.beta_split_recursive),
        ] {
            if !(s > 0.0 && s < 1.0) {
                return Err(domain(alloc::format!("{name} must lie in (0, 1)")));
            }
        }
        if !positive(self.work_limit) {
            return Err(domain("work_limit must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_literal_and_valid() {
        let c = MechanismConstants::default();
        assert_eq!(c.c_xi, 1000.0);
        assert_eq!(c.p_xi, 10);
        assert_eq!(c.base_threshold_log, 1000);
        assert_eq!(c.t_coeff, 3.0);
        assert_eq!(c.budget_split_recursive, 0.8);
        assert!(c.validate().is_ok());
        assert!(MechanismConstants::scaled().validate().is_ok());
    }

    #[test]
    fn rejects_bad_constants() {
        let bad = [
            MechanismConstants { c_xi: 0.0, ..Default::default() },
            MechanismConstants { p_xi: 0, ..Default::default() },
            MechanismConstants { budget_split_recursive: 1.0, ..Default::default() },
            MechanismConstants { beta_split_recursive: 0.0, ..Default::default() },
            MechanismConstants { t_coeff: f64::NAN, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn privacy_params_domain() {
        assert!(PrivacyParams::new(1.0, 0.1).is_ok());
        assert!(PrivacyParams::new(0.0, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.0).is_err());
    }
}
