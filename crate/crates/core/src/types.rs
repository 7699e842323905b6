//! Shared vocabulary: arm indices, availability sets, loss and weight
//! vectors, the k-scaled probability vector and the deterministic RNG.
//!
//! Arms are indexed `0..n`. Weights are kept as natural logarithms so that
//! long runs of multiplicative updates never underflow; every conversion to
//! linear scale subtracts the maximum log-weight of the set in question first.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of arms.
pub const MAX_ARMS: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmIndex(usize);

impl ArmIndex {
    pub fn new(value: usize, n: usize) -> Result<Self> {
        if value >= n {
            return Err(Error::ArmOutOfRange { index: value, n });
        }
        Ok(ArmIndex(value))
    }

    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<ArmIndex> for usize {
    fn from(a: ArmIndex) -> usize {
        a.0
    }
}

impl fmt::Display for ArmIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Sorted, duplicate-free set of arm indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AvailabilitySet {
    members: Vec<usize>,
}

impl AvailabilitySet {
    /// Builds a set from arbitrary indices; duplicates are collapsed.
    pub fn new(indices: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let mut members: Vec<usize> = indices.into_iter().collect();
        if let Some(&bad) = members.iter().find(|&&i| i >= n) {
            return Err(Error::ArmOutOfRange { index: bad, n });
        }
        members.sort_unstable();
        members.dedup();
        Ok(AvailabilitySet { members })
    }

    pub fn empty() -> Self {
        AvailabilitySet::default()
    }

    pub fn full(n: usize) -> Self {
        AvailabilitySet {
            members: (0..n).collect(),
        }
    }

    /// Set whose members are the one bits of `mask`.
    pub fn from_mask(mask: u64) -> Self {
        let members = (0..64).filter(|&i| mask >> i & 1 == 1).collect();
        AvailabilitySet { members }
    }

    /// Bit mask of the set, if every member is below 64.
    pub fn mask(&self) -> Option<u64> {
        self.members
            .iter()
            .try_fold(0u64, |m, &i| (i < 64).then(|| m | 1 << i))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.members
    }

    pub fn arms(&self) -> impl Iterator<Item = ArmIndex> + '_ {
        self.members.iter().map(|&i| ArmIndex(i))
    }

    pub fn is_subset_of(&self, other: &AvailabilitySet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.members.last().copied()
    }
}

impl fmt::Display for AvailabilitySet {
    /// Space-separated member list, e.g. `0 2 5`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (pos, i) in self.members.iter().enumerate() {
            if pos > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{i}")?;
        }
        Ok(())
    }
}

/// Losses keyed by arm, every value in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    values: BTreeMap<usize, f64>,
}

impl LossVector {
    pub fn new(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (arm, value) in entries {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::LossOutOfRange { arm, value });
            }
            values.insert(arm, value);
        }
        Ok(LossVector { values })
    }

    /// Dense loss vector over arms `0..values.len()`.
    pub fn full(values: &[f64]) -> Result<Self> {
        LossVector::new(values.iter().copied().enumerate())
    }

    /// Keeps only the entries for `arms`; missing arms are skipped.
    pub fn restrict(&self, arms: &[usize]) -> LossVector {
        LossVector {
            values: arms
                .iter()
                .filter_map(|a| self.values.get(a).map(|&v| (*a, v)))
                .collect(),
        }
    }

    pub fn get(&self, arm: usize) -> Option<f64> {
        self.values.get(&arm).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&a, &v)| (a, v))
    }

    pub fn arms(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.keys().copied()
    }

    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }
}

/// Multiplicative weights stored as natural logarithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    log_weights: Vec<f64>,
}

impl WeightVector {
    /// All weights equal to one.
    pub fn uniform(n: usize) -> Self {
        WeightVector {
            log_weights: vec![0.0; n],
        }
    }

    pub fn from_log(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "log-weights must be finite".into(),
            ));
        }
        Ok(WeightVector { log_weights })
    }

    pub fn from_linear(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidParameter(
                "weights must be positive and finite".into(),
            ));
        }
        WeightVector::from_log(weights.iter().map(|w| w.ln()).collect())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.log_weights.len()
    }

    #[inline]
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `w(i) <- w(i) * exp(-amount)`.
    pub(crate) fn decay(&mut self, i: usize, amount: f64) {
        self.log_weights[i] -= amount;
    }
}

/// Normalizes `w` over the members of `s`; entries outside `s` are zero.
pub fn normalize_over_set(w: &WeightVector, s: &AvailabilitySet) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::EmptyAvailabilitySet);
    }
    let n = w.n();
    if let Some(max) = s.max_index().filter(|&m| m >= n) {
        return Err(Error::ArmOutOfRange { index: max, n });
    }
    let mut p = vec![0.0; n];
    normalize_members(w.log_weights(), s.indices(), &mut p);
    Ok(p)
}

/// Max-subtracted softmax of `log_w` restricted to `members`, written into
/// `out` at the member positions. `members` must be nonempty.
pub(crate) fn normalize_members(log_w: &[f64], members: &[usize], out: &mut [f64]) {
    let max = members
        .iter()
        .map(|&i| log_w[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &i in members {
        let v = (log_w[i] - max).exp();
        out[i] = v;
        total += v;
    }
    for &i in members {
        out[i] /= total;
    }
}

/// The k-scaled capped distribution: entries in `[0, 1]` summing to `k`,
/// zero outside the availability set it was built from.
///
/// When fewer than `k` arms were available every available arm carries
/// probability one and `k` records the number of available arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledProbabilityVector {
    q: Vec<f64>,
    k: usize,
}

impl ScaledProbabilityVector {
    pub fn new(q: Vec<f64>, k: usize) -> Result<Self> {
        crate::decomposition::validate_scaled(&q, k)?;
        Ok(ScaledProbabilityVector { q, k })
    }

    pub(crate) fn from_parts(q: Vec<f64>, k: usize) -> Self {
        ScaledProbabilityVector { q, k }
    }

    /// Every member of `s` selected with probability one.
    pub fn select_all(s: &AvailabilitySet, n: usize) -> Self {
        let mut q = vec![0.0; n];
        for &i in s.indices() {
            q[i] = 1.0;
        }
        ScaledProbabilityVector { q, k: s.len() }
    }

    #[inline]
    pub fn q(&self) -> &[f64] {
        &self.q
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.q
    }
}

/// Deterministic generator: ChaCha8 keyed by a 64-bit seed and a stream id.
///
/// The same seed, stream and call sequence produce the same outputs on every
/// platform.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of a [`SeededRng`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng::with_stream(seed, 0)
    }

    /// Independent stream of the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.inner.get_stream()
    }

    /// Jumps to an absolute position (in 32-bit words) within the stream.
    pub fn seek(&mut self, word_pos: u128) {
        self.inner.set_word_pos(word_pos);
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(snap: RngSnapshot) -> Self {
        let mut rng = SeededRng::with_stream(snap.seed, snap.stream);
        rng.seek(snap.word_pos);
        rng
    }

    /// Uniform draw in `[0, 1)`; consumes two words.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// `true` with probability `p`; `p >= 1` is always true, `p <= 0` never.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl Serialize for SeededRng {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.snapshot().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SeededRng {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RngSnapshot::deserialize(d).map(SeededRng::restore)
    }
}

/// Includes arm `i` independently with probability `a[i]`.
pub fn sample_bernoulli_set(a: &[f64], rng: &mut SeededRng) -> AvailabilitySet {
    let members = a
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| rng.bernoulli(p).then_some(i))
        .collect();
    AvailabilitySet { members }
}
