//! Loss instances and synthetic instance families.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ext_real::ExtReal;

/// Ground-truth losses, one per candidate. Candidate `y` is position `y`.
///
/// Mechanisms never read this directly; they go through a
/// [`BudgetOracle`](crate::oracle::BudgetOracle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LossInstance {
    losses: Vec<f64>,
}

impl LossInstance {
    pub fn new(losses: Vec<f64>) -> Result<Self> {
        if losses.is_empty() {
            return Err(domain("instance must have at least one candidate"));
        }
        if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
            return Err(domain(alloc::format!("loss of candidate {i} is not finite")));
        }
        Ok(LossInstance { losses })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn loss(&self, y: usize) -> f64 {
        self.losses[y]
    }

    /// Smallest position attaining the minimum loss.
    pub fn min_index(&self) -> usize {
        min_index_of(self.losses.iter().copied())
    }

    pub fn min_loss(&self) -> f64 {
        self.losses[self.min_index()]
    }

    /// `min_{y != y*} l_y - l_{y*}`; `+inf` for a single candidate.
    pub fn gap(&self) -> ExtReal {
        gap_of(&self.losses)
    }

    /// Excess loss of `y` over the optimum.
    pub fn error_of(&self, y: usize) -> f64 {
        self.losses[y] - self.min_loss()
    }
}

impl TryFrom<Vec<f64>> for LossInstance {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        LossInstance::new(v)
    }
}

impl From<LossInstance> for Vec<f64> {
    fn from(i: LossInstance) -> Vec<f64> {
        i.losses
    }
}

pub(crate) fn min_index_of<T: PartialOrd>(values: impl IntoIterator<Item = T>) -> usize {
    let mut it = values.into_iter().enumerate();
    let (mut best, mut best_v) = it.next().expect("non-empty");
    for (i, v) in it {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub(crate) fn gap_of(values: &[f64]) -> ExtReal {
    if values.len() < 2 {
        return ExtReal::INFINITY;
    }
    let star = min_index_of(values.iter().copied());
    let second = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != star)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    ExtReal::new(second - values[star]).expect("finite losses")
}

/// Synthetic instance families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceFamily {
    /// Candidate counts double per loss level: level `i` sits at `i * scale`.
    Layered,
    /// One candidate at 0, all others at `scale`.
    Gapped,
    /// Independent uniform losses on `[0, scale]`.
    Uniform,
    /// All losses zero.
    Constant,
}

impl InstanceFamily {
    pub const ALL: [InstanceFamily; 4] = [
        InstanceFamily::Layered,
        InstanceFamily::Gapped,
        InstanceFamily::Uniform,
        InstanceFamily::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceFamily::Layered => "layered",
            InstanceFamily::Gapped => "gapped",
            InstanceFamily::Uniform => "uniform",
            InstanceFamily::Constant => "constant",
        }
    }

    /// Whether the family consumes its seed.
    pub fn is_random(self) -> bool {
        matches!(self, InstanceFamily::Uniform)
    }
}

impl fmt::Display for InstanceFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstanceFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        InstanceFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| domain(alloc::format!("unknown instance family `{s}`")))
    }
}

/// Builds a deterministic instance of the given family.
///
/// Layered: level 0 is the single optimum at loss 0, level `i >= 1` holds
/// `2^(i-1)` candidates at loss `i * scale`; levels are laid out in order
/// and the list is cut at `size`.
pub fn generate_instance(
    family: InstanceFamily,
    size: usize,
    scale: f64,
    seed: u64,
) -> Result<LossInstance> {
    if size == 0 {
        return Err(domain("instance size must be at least 1"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(domain("scale must be finite and non-negative"));
    }
    let losses = match family {
        InstanceFamily::Constant => alloc::vec![0.0; size],
        InstanceFamily::Gapped => {
            let mut v = alloc::vec![scale; size];
            v[0] = 0.0;
            v
        }
        InstanceFamily::Uniform => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            (0..size).map(|_| rng.random::<f64>() * scale).collect()
        }
        InstanceFamily::Layered => {
            let mut v = Vec::with_capacity(size);
            v.push(0.0);
            let mut level = 1u32;
            while v.len() < size {
                let count = 1usize << (level - 1).min(usize::BITS - 1);
                let take = count.min(size - v.len());
                v.extend(core::iter::repeat_n(level as f64 * scale, take));
                level += 1;
            }
            v
        }
    };
    LossInstance::new(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(LossInstance::new(alloc::vec![]).is_err());
        assert!(LossInstance::new(alloc::vec![0.0, f64::NAN]).is_err());
        assert!(LossInstance::new(alloc::vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn gapped_pair() {
        let inst = generate_instance(InstanceFamily::Gapped, 2, 5.0, 99).unwrap();
        assert_eq!(inst.losses(), &[0.0, 5.0]);
        assert_eq!(inst.gap(), ExtReal::finite(5.0).unwrap());
    }

    #[test]
    fn constant_has_zero_gap_and_first_minimum() {
        let inst = generate_instance(InstanceFamily::Constant, 4, 1.0, 0).unwrap();
        assert_eq!(inst.gap(), ExtReal::ZERO);
        assert_eq!(inst.min_index(), 0);
    }

    #[test]
    fn singleton_gap_is_infinite() {
        let inst = generate_instance(InstanceFamily::Gapped, 1, 3.0, 0).unwrap();
        assert_eq!(inst.gap(), ExtReal::INFINITY);
    }

    #[test]
    fn layered_levels_double() {
        let inst = generate_instance(InstanceFamily::Layered, 8, 2.0, 0).unwrap();
        assert_eq!(inst.losses(), &[0.0, 2.0, 4.0, 4.0, 6.0, 6.0, 6.0, 6.0]);
        let cut = generate_instance(InstanceFamily::Layered, 6, 1.0, 0).unwrap();
        assert_eq!(cut.losses(), &[0.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn ties_break_to_lowest_position() {
        let inst = LossInstance::new(alloc::vec![3.0, 1.0, 4.0, 1.0]).unwrap();
        assert_eq!(inst.min_index(), 1);
        assert_eq!(inst.gap(), ExtReal::ZERO);
    }

    #[test]
    fn uniform_is_seed_reproducible() {
        let a = generate_instance(InstanceFamily::Uniform, 50, 10.0, 7).unwrap();
        let b = generate_instance(InstanceFamily::Uniform, 50, 10.0, 7).unwrap();
        let c = generate_instance(InstanceFamily::Uniform, 50, 10.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.losses().iter().all(|&l| (0.0..=10.0).contains(&l)));
    }

    #[test]
    fn family_names_round_trip() {
        for f in InstanceFamily::ALL {
            assert_eq!(f.name().parse::<InstanceFamily>().unwrap(), f);
        }
        assert!("zipf".parse::<InstanceFamily>().is_err());
    }
}
