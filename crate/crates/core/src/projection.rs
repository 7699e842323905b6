//! Capped probability calculation.
//!
//! Normalized weights over the available arms are projected onto the capped
//! simplex `{p : sum p = 1, 0 <= p(i) <= 1/k}` by pinning the largest entries
//! at `1/k` and rescaling the rest of the original vector proportionally,
//! then scaled by `k` so that entry `i` is the probability that arm `i`
//! belongs to the chosen k-subset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_members, AvailabilitySet, ScaledProbabilityVector, WeightVector};

/// A point of the capped simplex together with how many entries were pinned
/// at `1/k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CappedDistribution {
    p_hat: Vec<f64>,
    k: usize,
    pinned: usize,
}

impl CappedDistribution {
    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of entries pinned at exactly `1/k` by the projection; zero
    /// when the input was already capped.
    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.p_hat
    }
}

/// Indices of `values` in decreasing order; ties keep the lower index first.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Projects the probability vector `p` onto the capped simplex.
///
/// Inputs whose maximum is already at most `1/k` are returned unchanged.
pub fn cap_project(p: &[f64], k: usize) -> Result<CappedDistribution> {
    let n = p.len();
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let nonzero = p.iter().filter(|&&v| v > 0.0).count();
    if nonzero < k {
        return Err(Error::InfeasibleCapping { nonzero, k });
    }
    let cap = 1.0 / k as f64;
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= cap {
        return Ok(CappedDistribution {
            p_hat: p.to_vec(),
            k,
            pinned: 0,
        });
    }

    let order = descending_order(p);
    // suffix[j] = sum of the j-th largest onward, accumulated from the small end
    let mut suffix = vec![0.0; n + 1];
    for j in (0..n).rev() {
        suffix[j] = suffix[j + 1] + p[order[j]];
    }
    // With at least k nonzero entries the test always holds by i = k - 1.
    let pinned = (1..k)
        .find(|&i| (k - i) as f64 * p[order[i]] <= suffix[i])
        .unwrap_or(k - 1);

    let mut p_hat = vec![0.0; n];
    for &j in &order[..pinned] {
        p_hat[j] = cap;
    }
    let scale = (k - pinned) as f64 / k as f64 / suffix[pinned];
    for &j in &order[pinned..] {
        p_hat[j] = (p[j] * scale).min(cap);
    }
    Ok(CappedDistribution { p_hat, k, pinned })
}

/// `k`-scaled capped distribution over `s` together with the pinned arms.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledProjection {
    pub q: ScaledProbabilityVector,
    /// Arms whose probability was pinned at one, largest weight first.
    pub pinned: Vec<usize>,
}

/// Selection probabilities `q(i) = k * p_hat(i)` over the available set.
pub fn scaled_probabilities(
    w: &WeightVector,
    s: &AvailabilitySet,
    k: usize,
) -> Result<ScaledProbabilityVector> {
    scaled_projection(w, s, k).map(|sp| sp.q)
}

pub fn scaled_projection(w: &WeightVector, s: &AvailabilitySet, k: usize) -> Result<ScaledProjection> {
    let n = w.n();
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if let Some(max) = s.max_index().filter(|&m| m >= n) {
        return Err(Error::ArmOutOfRange { index: max, n });
    }
    if s.len() < k {
        return Err(Error::InsufficientArms {
            available: s.len(),
            k,
        });
    }
    let mut q = vec![0.0; n];
    let mut projector = Projector::default();
    let pinned = projector.scaled_into(w.log_weights(), s.indices(), k, &mut q);
    let pinned = projector.order[..pinned].to_vec();
    Ok(ScaledProjection {
        q: ScaledProbabilityVector::from_parts(q, k),
        pinned,
    })
}

/// Relative weights below this switch the projection to the log domain.
const UNDERFLOW_GUARD: f64 = 1e-280;

/// Reusable scratch space for repeated projections over many sets.
#[derive(Debug, Default)]
pub(crate) struct Projector {
    order: Vec<usize>,
    rel: Vec<f64>,
}

impl Projector {
    /// Writes the k-scaled capped probabilities of `members` into `out` and
    /// returns the number of pinned arms; `self.order[..pinned]` holds them
    /// afterwards. Entries of `out` outside `members` are left untouched.
    /// Requires `members.len() >= k >= 1`.
    pub(crate) fn scaled_into(
        &mut self,
        log_w: &[f64],
        members: &[usize],
        k: usize,
        out: &mut [f64],
    ) -> usize {
        let max = members
            .iter()
            .map(|&i| log_w[i])
            .fold(f64::NEG_INFINITY, f64::max);
        self.rel.resize(log_w.len(), 0.0);
        let mut safe = true;
        for &i in members {
            let v = (log_w[i] - max).exp();
            self.rel[i] = v;
            safe &= v >= UNDERFLOW_GUARD;
        }
        if safe {
            scaled_linear(&self.rel, members, k, out, &mut self.order)
        } else {
            scaled_log(log_w, members, k, out, &mut self.order)
        }
    }

    /// Same as [`Projector::scaled_into`] for positive linear weights `rel`
    /// that are known not to underflow.
    pub(crate) fn scaled_from_linear(
        &mut self,
        rel: &[f64],
        members: &[usize],
        k: usize,
        out: &mut [f64],
    ) -> usize {
        scaled_linear(rel, members, k, out, &mut self.order)
    }
}

pub(crate) fn is_underflow_safe(rel: &[f64]) -> bool {
    rel.iter().all(|&v| v >= UNDERFLOW_GUARD)
}

fn scaled_linear(
    rel: &[f64],
    members: &[usize],
    k: usize,
    out: &mut [f64],
    order: &mut Vec<usize>,
) -> usize {
    debug_assert!(k >= 1 && members.len() >= k);
    let mut total = 0.0;
    let mut max = 0.0f64;
    for &i in members {
        total += rel[i];
        max = max.max(rel[i]);
    }
    if k as f64 * max <= total {
        if k == 1 {
            for &i in members {
                out[i] = rel[i] / total;
            }
        } else {
            let kf = k as f64;
            for &i in members {
                out[i] = rel[i] / total * kf;
            }
        }
        return 0;
    }

    order.clear();
    order.extend_from_slice(members);
    order.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));
    // mass from the i-th largest onward, summed from the small end
    let tail_from = |i: usize| -> f64 { order[i..].iter().rev().map(|&j| rel[j]).sum() };
    let (pinned, tail_mass) = (1..k)
        .map(|i| (i, tail_from(i)))
        .find(|&(i, tail)| (k - i) as f64 * rel[order[i]] <= tail)
        .unwrap_or_else(|| (k - 1, tail_from(k - 1)));
    for &j in &order[..pinned] {
        out[j] = 1.0;
    }
    let free = (k - pinned) as f64;
    for &j in &order[pinned..] {
        out[j] = (free * rel[j] / tail_mass).min(1.0);
    }
    pinned
}

/// Pinning on log-weights relative to the largest unpinned weight, so arms
/// whose linear weights underflow still receive their share of the
/// unpinned mass.
fn scaled_log(
    log_w: &[f64],
    members: &[usize],
    k: usize,
    out: &mut [f64],
    order: &mut Vec<usize>,
) -> usize {
    debug_assert!(k >= 1 && members.len() >= k);
    normalize_members(log_w, members, out);
    let max = members.iter().map(|&i| out[i]).fold(0.0, f64::max);
    if k as f64 * max <= 1.0 {
        if k > 1 {
            let kf = k as f64;
            for &i in members {
                out[i] *= kf;
            }
        }
        return 0;
    }

    order.clear();
    order.extend_from_slice(members);
    order.sort_by(|&a, &b| log_w[b].total_cmp(&log_w[a]).then(a.cmp(&b)));
    let relative_mass = |i: usize| -> f64 {
        let top = log_w[order[i]];
        order[i..].iter().map(|&j| (log_w[j] - top).exp()).sum()
    };
    let (pinned, mass) = (1..k)
        .map(|i| (i, relative_mass(i)))
        .find(|&(i, r)| (k - i) as f64 <= r)
        .unwrap_or_else(|| (k - 1, relative_mass(k - 1)));

    for &j in &order[..pinned] {
        out[j] = 1.0;
    }
    let top = log_w[order[pinned]];
    let free = (k - pinned) as f64;
    for &j in &order[pinned..] {
        out[j] = (free * (log_w[j] - top).exp() / mass).min(1.0);
    }
    pinned
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent water-filling oracle: repeatedly clip every entry above
    /// the cap and rescale the unclipped entries to the leftover mass until
    /// nothing exceeds the cap.
    fn water_fill(p: &[f64], k: usize) -> Vec<f64> {
        let cap = 1.0 / k as f64;
        let mut clipped = vec![false; p.len()];
        loop {
            let free_mass = 1.0 - cap * clipped.iter().filter(|&&c| c).count() as f64;
            let free_sum: f64 = (0..p.len()).filter(|&i| !clipped[i]).map(|i| p[i]).sum();
            let out: Vec<f64> = (0..p.len())
                .map(|i| if clipped[i] { cap } else { p[i] * free_mass / free_sum })
                .collect();
            let mut changed = false;
            for i in 0..p.len() {
                if !clipped[i] && out[i] > cap + 1e-15 {
                    clipped[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return out;
            }
        }
    }

    #[test]
    fn already_capped_is_unchanged() {
        let p = [0.25; 4];
        let c = cap_project(&p, 2).unwrap();
        assert_eq!(c.p_hat(), &p);
        assert_eq!(c.pinned(), 0);

        let p = [1.0, 0.0, 0.0];
        assert_eq!(cap_project(&p, 1).unwrap().p_hat(), &p);
    }

    #[test]
    fn pins_largest_and_rescales() {
        let c = cap_project(&[0.7, 0.2, 0.1], 2).unwrap();
        let oracle = water_fill(&[0.7, 0.2, 0.1], 2);
        let expected = [0.5, 1.0 / 3.0, 1.0 / 6.0];
        for i in 0..3 {
            assert_abs_diff_eq!(c.p_hat()[i], expected[i], epsilon = 1e-12);
            assert_abs_diff_eq!(oracle[i], expected[i], epsilon = 1e-12);
        }
        assert_eq!(c.pinned(), 1);
    }

    #[test]
    fn single_iteration_termination() {
        let p = [0.5, 0.4, 0.05, 0.05];
        let c = cap_project(&p, 2).unwrap();
        let oracle = water_fill(&p, 2);
        for i in 0..4 {
            assert_abs_diff_eq!(c.p_hat()[i], p[i], epsilon = 1e-12);
            assert_abs_diff_eq!(oracle[i], p[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn multiple_pins() {
        let p = [0.6, 0.3, 0.06, 0.04];
        let c = cap_project(&p, 3).unwrap();
        let oracle = water_fill(&p, 3);
        for i in 0..4 {
            assert_abs_diff_eq!(c.p_hat()[i], oracle[i], epsilon = 1e-12);
        }
        assert_eq!(c.pinned(), 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            cap_project(&[0.5, 0.5, 0.0], 3),
            Err(Error::InfeasibleCapping { nonzero: 2, k: 3 })
        ));
        assert!(matches!(cap_project(&[1.0], 0), Err(Error::InvalidK { .. })));
        assert!(matches!(cap_project(&[1.0], 2), Err(Error::InvalidK { .. })));
        let w = WeightVector::uniform(4);
        let s = AvailabilitySet::new([0], 4).unwrap();
        assert!(matches!(
            scaled_probabilities(&w, &s, 2),
            Err(Error::InsufficientArms { available: 1, k: 2 })
        ));
    }

    #[test]
    fn scaled_examples() {
        let q = scaled_probabilities(&WeightVector::uniform(4), &AvailabilitySet::full(4), 2).unwrap();
        assert_eq!(q.q(), &[0.5; 4]);

        let w = WeightVector::from_linear(&[9.0, 0.001, 3.0, 1.0]).unwrap();
        let s = AvailabilitySet::new([1, 3], 4).unwrap();
        let q = scaled_probabilities(&w, &s, 2).unwrap();
        assert_eq!(q.q(), &[0.0, 1.0, 0.0, 1.0]);

        let w = WeightVector::from_linear(&[0.7, 0.2, 0.1]).unwrap();
        let q = scaled_probabilities(&w, &AvailabilitySet::full(3), 2).unwrap();
        let expected = [1.0, 2.0 / 3.0, 1.0 / 3.0];
        for i in 0..3 {
            assert_abs_diff_eq!(q.q()[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn underflowed_tail_still_gets_mass() {
        // Linear normalization would give [1, 0, 0]: infeasible for k = 2.
        let w = WeightVector::from_log(vec![0.0, -900.0, -901.0]).unwrap();
        let q = scaled_probabilities(&w, &AvailabilitySet::full(3), 2).unwrap();
        assert_eq!(q.q()[0], 1.0);
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(q.q()[1], 1.0 / (1.0 + e), epsilon = 1e-12);
        assert_abs_diff_eq!(q.q()[2], e / (1.0 + e), epsilon = 1e-12);
    }

    #[test]
    fn boundary_max_equal_to_cap() {
        let c = cap_project(&[0.5, 0.25, 0.25], 2).unwrap();
        assert_eq!(c.p_hat(), &[0.5, 0.25, 0.25]);
    }

    proptest::proptest! {
        #[test]
        fn matches_water_fill_and_invariants(
            raw in proptest::collection::vec(0.0f64..1.0, 2..24),
            kk in 1usize..8,
        ) {
            let n = raw.len();
            let k = kk.min(n);
            let total: f64 = raw.iter().sum();
            proptest::prop_assume!(raw.iter().filter(|&&v| v > 0.0).count() >= k && total > 0.0);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let c = cap_project(&p, k).unwrap();
            let oracle = water_fill(&p, k);
            let cap = 1.0 / k as f64;
            for i in 0..n {
                proptest::prop_assert!((c.p_hat()[i] - oracle[i]).abs() <= 1e-9);
                proptest::prop_assert!(c.p_hat()[i] <= cap && c.p_hat()[i] >= 0.0);
            }
            proptest::prop_assert!((c.p_hat().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            // idempotence
            let again = cap_project(c.p_hat(), k).unwrap();
            proptest::prop_assert_eq!(again.p_hat(), c.p_hat());
            // order preservation
            for i in 0..n {
                for j in 0..n {
                    if p[i] >= p[j] {
                        proptest::prop_assert!(c.p_hat()[i] >= c.p_hat()[j]);
                    }
                }
            }
        }

        #[test]
        fn scaled_agrees_with_cap_project(
            logs in proptest::collection::vec(-6.0f64..6.0, 2..16),
            mask in 1u64..(1 << 16),
            kk in 1usize..6,
        ) {
            let n = logs.len();
            let s = AvailabilitySet::from_mask(mask & ((1u64 << n) - 1));
            let k = kk.min(s.len().max(1));
            proptest::prop_assume!(s.len() >= k && k >= 1);
            let w = WeightVector::from_log(logs).unwrap();
            let q = scaled_probabilities(&w, &s, k).unwrap();
            let p = crate::types::normalize_over_set(&w, &s).unwrap();
            let c = cap_project(&p, k).unwrap();
            for i in 0..n {
                proptest::prop_assert!((q.q()[i] - k as f64 * c.p_hat()[i]).abs() <= 1e-12);
            }
            if k == 1 {
                proptest::prop_assert_eq!(q.q(), &p[..]);
            }
        }
    }
}
