//! Joint selection probability of each arm under availability and
//! algorithm randomness.
//!
//! The exact estimate enumerates every subset of arms weighted by its
//! probability under independent Bernoulli availability with the empirical
//! rates. The Monte Carlo estimate averages the selection probabilities of
//! subsets drawn from the same product distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{is_underflow_safe, Projector};
use crate::types::{AvailabilitySet, SeededRng, WeightVector};

/// Default cap on `n` for exact enumeration over all `2^n` subsets.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 16;

/// Per-arm availability counts over the rounds seen so far.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityEstimate {
    counts: Vec<u64>,
    t: u64,
}

impl AvailabilityEstimate {
    pub fn new(n: usize) -> Self {
        AvailabilityEstimate {
            counts: vec![0; n],
            t: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>, t: u64) -> Result<Self> {
        if counts.iter().any(|&c| c > t) {
            return Err(Error::InvalidParameter(
                "availability count exceeds round count".into(),
            ));
        }
        Ok(AvailabilityEstimate { counts, t })
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn rounds(&self) -> u64 {
        self.t
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn record(&mut self, s: &AvailabilitySet) {
        for &i in s.indices() {
            self.counts[i] += 1;
        }
        self.t += 1;
    }

    /// Functional form of [`AvailabilityEstimate::record`].
    pub fn recorded(mut self, s: &AvailabilitySet) -> Self {
        self.record(s);
        self
    }

    /// Empirical availability rates; all ones before any round is recorded.
    pub fn rates(&self) -> Vec<f64> {
        if self.t == 0 {
            return vec![1.0; self.counts.len()];
        }
        let t = self.t as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Projection source shared across the subsets of one estimate: linear
/// weights relative to the global maximum when none underflow, otherwise
/// the raw log-weights.
struct SetProjector<'a> {
    log_w: &'a [f64],
    rel: Option<Vec<f64>>,
    projector: Projector,
    buf: Vec<f64>,
}

impl<'a> SetProjector<'a> {
    fn new(w: &'a WeightVector) -> Self {
        let log_w = w.log_weights();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rel: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
        SetProjector {
            log_w,
            rel: is_underflow_safe(&rel).then_some(rel),
            projector: Projector::default(),
            buf: vec![0.0; log_w.len()],
        }
    }

    /// Adds `weight * q^S` to `acc` for the subset `members`.
    fn accumulate(&mut self, members: &[usize], k: usize, weight: f64, acc: &mut [f64]) {
        if members.is_empty() {
            return;
        }
        if members.len() < k {
            // fewer than k available: every available arm is selected
            for &i in members {
                acc[i] += weight;
            }
            return;
        }
        match &self.rel {
            Some(rel) => self.projector.scaled_from_linear(rel, members, k, &mut self.buf),
            None => self.projector.scaled_into(self.log_w, members, k, &mut self.buf),
        };
        for &i in members {
            acc[i] += weight * self.buf[i];
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    Ok(())
}

/// Exact joint probability for given availability rates.
pub fn exact_joint_from_rates(
    rates: &[f64],
    w: &WeightVector,
    k: usize,
    limit: usize,
) -> Result<Vec<f64>> {
    let n = w.n();
    check_k(k, n)?;
    if rates.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} availability rates for {n} arms",
            rates.len()
        )));
    }
    if n > limit.min(63) {
        return Err(Error::EnumerationTooLarge { n, limit });
    }
    let mut sets = SetProjector::new(w);
    let mut acc = vec![0.0; n];
    let mut members = Vec::with_capacity(n);
    for mask in 1u64..(1u64 << n) {
        let mut prob = 1.0;
        members.clear();
        for (i, &a) in rates.iter().enumerate() {
            if mask >> i & 1 == 1 {
                prob *= a;
                members.push(i);
            } else {
                prob *= 1.0 - a;
            }
        }
        if prob > 0.0 {
            sets.accumulate(&members, k, prob, &mut acc);
        }
    }
    for v in &mut acc {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(acc)
}

/// Exact joint probability using the empirical availability rates of `est`.
pub fn exact_joint_probability(
    est: &AvailabilityEstimate,
    w: &WeightVector,
    k: usize,
) -> Result<Vec<f64>> {
    exact_joint_from_rates(&est.rates(), w, k, DEFAULT_ENUMERATION_LIMIT)
}

/// Monte Carlo joint probability for given availability rates.
pub fn monte_carlo_joint_from_rates(
    rates: &[f64],
    w: &WeightVector,
    k: usize,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let n = w.n();
    check_k(k, n)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    if rates.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} availability rates for {n} arms",
            rates.len()
        )));
    }
    let mut tally: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut members = Vec::with_capacity(n);
    for _ in 0..samples {
        members.clear();
        for (i, &a) in rates.iter().enumerate() {
            if rng.bernoulli(a) {
                members.push(i);
            }
        }
        *tally.entry(members.clone()).or_insert(0) += 1;
    }
    // each distinct set is projected once, weighted by its frequency
    let mut sets = SetProjector::new(w);
    let mut acc = vec![0.0; n];
    for (members, count) in &tally {
        sets.accumulate(members, k, *count as f64 / samples as f64, &mut acc);
    }
    for v in &mut acc {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(acc)
}

/// Monte Carlo joint probability using the empirical rates of `est`.
pub fn monte_carlo_joint_probability(
    est: &AvailabilityEstimate,
    w: &WeightVector,
    k: usize,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    monte_carlo_joint_from_rates(&est.rates(), w, k, samples, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Brute-force oracle written directly from the definition, projecting
    /// through the public linear-scale route.
    fn brute_force(rates: &[f64], w: &WeightVector, k: usize) -> Vec<f64> {
        let n = rates.len();
        let mut out = vec![0.0; n];
        for mask in 0u64..(1 << n) {
            let s = AvailabilitySet::from_mask(mask);
            let prob: f64 = (0..n)
                .map(|i| if s.contains(i) { rates[i] } else { 1.0 - rates[i] })
                .product();
            if s.is_empty() {
                continue;
            }
            let q: Vec<f64> = if s.len() < k {
                (0..n).map(|i| if s.contains(i) { 1.0 } else { 0.0 }).collect()
            } else {
                let p = crate::types::normalize_over_set(w, &s).unwrap();
                crate::projection::cap_project(
                    &s.indices().iter().map(|&i| p[i]).collect::<Vec<_>>(),
                    k,
                )
                .map(|c| {
                    let mut full = vec![0.0; n];
                    for (pos, &i) in s.indices().iter().enumerate() {
                        full[i] = k as f64 * c.p_hat()[pos];
                    }
                    full
                })
                .unwrap()
            };
            for i in 0..n {
                out[i] += prob * q[i];
            }
        }
        out
    }

    #[test]
    fn record_counts() {
        let est = AvailabilityEstimate::new(3).recorded(&AvailabilitySet::new([0, 1], 3).unwrap());
        assert_eq!(est.counts(), &[1, 1, 0]);
        assert_eq!(est.rounds(), 1);
        assert_eq!(AvailabilityEstimate::new(2).rates(), vec![1.0, 1.0]);
    }

    #[test]
    fn always_available_rate_is_one() {
        let mut est = AvailabilityEstimate::new(2);
        for _ in 0..50 {
            est.record(&AvailabilitySet::new([0], 2).unwrap());
        }
        assert_eq!(est.rates(), vec![1.0, 0.0]);
    }

    #[test]
    fn empirical_rate_concentrates() {
        let mut rng = SeededRng::new(11);
        let mut est = AvailabilityEstimate::new(1);
        let rounds = 10_000;
        for _ in 0..rounds {
            est.record(&crate::types::sample_bernoulli_set(&[0.3], &mut rng));
        }
        let band = 3.0 * (0.21f64 / rounds as f64).sqrt();
        assert!((est.rates()[0] - 0.3).abs() <= band);
    }

    #[test]
    fn exact_trivial_cases() {
        let w = WeightVector::uniform(2);
        let q = exact_joint_from_rates(&[1.0, 1.0], &w, 1, 16).unwrap();
        assert_eq!(q, vec![0.5, 0.5]);
        let q = exact_joint_from_rates(&[1.0, 0.0], &w, 1, 16).unwrap();
        assert_eq!(q, vec![1.0, 0.0]);
    }

    #[test]
    fn exact_three_arms_hand_sum() {
        // Arm 2 always available, arms 0 and 1 each with rate 1/2, k = 1.
        // Sets {2}, {0,2}, {1,2}, {0,1,2} each have probability 1/4, giving
        //   q(2) = 1/4 (1 + 1/2 + 1/2 + 1/3) = 7/12
        //   q(0) = q(1) = 1/4 (1/2 + 1/3) = 5/24.
        let w = WeightVector::uniform(3);
        let q = exact_joint_from_rates(&[0.5, 0.5, 1.0], &w, 1, 16).unwrap();
        let oracle = brute_force(&[0.5, 0.5, 1.0], &w, 1);
        let expected = [5.0 / 24.0, 5.0 / 24.0, 7.0 / 12.0];
        for i in 0..3 {
            assert_abs_diff_eq!(q[i], expected[i], epsilon = 1e-15);
            assert_abs_diff_eq!(oracle[i], expected[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn exact_matches_brute_force_with_fallback_sets() {
        let w = WeightVector::from_linear(&[3.0, 1.0, 0.5, 2.0, 0.1]).unwrap();
        let rates = [0.9, 0.4, 0.7, 0.2, 0.55];
        for k in 1..=4 {
            let q = exact_joint_from_rates(&rates, &w, k, 16).unwrap();
            let oracle = brute_force(&rates, &w, k);
            for i in 0..5 {
                assert_abs_diff_eq!(q[i], oracle[i], epsilon = 1e-12);
            }
            assert!(q.iter().sum::<f64>() <= k as f64 + 1e-12);
        }
    }

    #[test]
    fn zero_rate_forces_zero() {
        let w = WeightVector::from_linear(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let q = exact_joint_from_rates(&[0.5, 0.0, 0.8, 0.3], &w, 2, 16).unwrap();
        assert_eq!(q[1], 0.0);
    }

    #[test]
    fn enumeration_limit() {
        let w = WeightVector::uniform(17);
        assert!(matches!(
            exact_joint_from_rates(&[0.5; 17], &w, 2, 16),
            Err(Error::EnumerationTooLarge { n: 17, limit: 16 })
        ));
    }

    #[test]
    fn monte_carlo_degenerate_rates_match_exact() {
        let w = WeightVector::from_linear(&[1.0, 5.0, 2.0, 0.3]).unwrap();
        let rates = [1.0, 0.0, 1.0, 1.0];
        let exact = exact_joint_from_rates(&rates, &w, 2, 16).unwrap();
        let mut rng = SeededRng::new(4);
        for samples in [1, 7, 100] {
            let mc = monte_carlo_joint_from_rates(&rates, &w, 2, samples, &mut rng).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(mc[i], exact[i], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn monte_carlo_converges() {
        let w = WeightVector::from_linear(&[1.0, 5.0, 2.0, 0.3, 1.5, 0.8]).unwrap();
        let rates = [0.9, 0.3, 0.6, 0.75, 0.5, 0.2];
        let exact = exact_joint_from_rates(&rates, &w, 2, 16).unwrap();
        let mut rng = SeededRng::new(99);
        let mc = monte_carlo_joint_from_rates(&rates, &w, 2, 1_000_000, &mut rng).unwrap();
        for i in 0..6 {
            assert!((mc[i] - exact[i]).abs() <= 1e-2, "arm {i}: {} vs {}", mc[i], exact[i]);
        }
    }

    #[test]
    fn monte_carlo_unbiased_across_streams() {
        let w = WeightVector::from_linear(&[2.0, 1.0, 0.5, 4.0]).unwrap();
        let rates = [0.7, 0.4, 0.9, 0.5];
        let k = 2;
        let exact = exact_joint_from_rates(&rates, &w, k, 16).unwrap();
        let reps = 2000;
        let samples = 20;
        let mut sums = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        for r in 0..reps {
            let mut rng = SeededRng::with_stream(123, r);
            let mc = monte_carlo_joint_from_rates(&rates, &w, k, samples, &mut rng).unwrap();
            for i in 0..4 {
                sums[i] += mc[i];
                sq[i] += mc[i] * mc[i];
            }
        }
        for i in 0..4 {
            let mean = sums[i] / reps as f64;
            let var = sq[i] / reps as f64 - mean * mean;
            let se = (var / reps as f64).sqrt();
            assert!((mean - exact[i]).abs() <= 3.0 * se + 1e-12);
        }
    }
}
