//! Best fixed availability-set-to-subset policy in hindsight, and realized
//! regret against it.
//!
//! The comparator objective separates over distinct availability sets: for
//! each observed set the best response is simply its `k` arms with the
//! smallest summed loss over the rounds in which that set occurred. Sets
//! with fewer than `k` members map to themselves, as for the learner.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::environment::{LossMatrix, RoundRecord};
use crate::error::{Error, Result};
use crate::types::AvailabilitySet;

/// Comparator policy, defined on observed availability sets only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HindsightPolicy {
    k: usize,
    table: BTreeMap<AvailabilitySet, Vec<usize>>,
}

impl HindsightPolicy {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, s: &AvailabilitySet) -> Option<&[usize]> {
        self.table.get(s).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AvailabilitySet, &[usize])> {
        self.table.iter().map(|(s, c)| (s, c.as_slice()))
    }
}

/// The `k` members of `s` with the smallest `sums`, ascending index order;
/// ties go to the lower index.
fn best_subset(s: &AvailabilitySet, sums: &[f64], k: usize) -> Vec<usize> {
    let mut members: Vec<usize> = s.indices().to_vec();
    if members.len() > k {
        members.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]).then(a.cmp(&b)));
        members.truncate(k);
        members.sort_unstable();
    }
    members
}

/// Streaming per-set loss totals, so the comparator can be evaluated at any
/// prefix of an episode without retaining the loss matrix.
#[derive(Clone, Debug)]
pub struct OracleAccumulator {
    n: usize,
    k: usize,
    per_set: BTreeMap<AvailabilitySet, Vec<f64>>,
    learner_loss: f64,
    rounds: u64,
}

impl OracleAccumulator {
    pub fn new(n: usize, k: usize) -> Self {
        OracleAccumulator {
            n,
            k,
            per_set: BTreeMap::new(),
            learner_loss: 0.0,
            rounds: 0,
        }
    }

    pub fn observe(&mut self, available: &AvailabilitySet, full_losses: &[f64], learner_loss: f64) {
        self.rounds += 1;
        self.learner_loss += learner_loss;
        if available.is_empty() {
            return;
        }
        let sums = self
            .per_set
            .entry(available.clone())
            .or_insert_with(|| vec![0.0; self.n]);
        for &i in available.indices() {
            sums[i] += full_losses[i];
        }
    }

    pub fn observe_record(&mut self, record: &RoundRecord, full_losses: &[f64]) {
        self.observe(&record.available, full_losses, record.loss_sum());
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn learner_loss(&self) -> f64 {
        self.learner_loss
    }

    pub fn policy(&self) -> HindsightPolicy {
        HindsightPolicy {
            k: self.k,
            table: self
                .per_set
                .iter()
                .map(|(s, sums)| (s.clone(), best_subset(s, sums, self.k)))
                .collect(),
        }
    }

    /// Cumulative loss of the best policy so far.
    pub fn comparator_loss(&self) -> f64 {
        self.per_set
            .iter()
            .map(|(s, sums)| best_subset(s, sums, self.k).iter().map(|&i| sums[i]).sum::<f64>())
            .sum()
    }

    /// Learner loss minus comparator loss so far.
    pub fn regret(&self) -> f64 {
        self.learner_loss - self.comparator_loss()
    }
}

/// Best fixed policy in hindsight over the rounds of `records`.
pub fn best_policy(records: &[RoundRecord], full_losses: &LossMatrix, k: usize) -> HindsightPolicy {
    let mut acc = OracleAccumulator::new(full_losses.n(), k);
    for r in records {
        acc.observe_record(r, full_losses.round(r.t));
    }
    acc.policy()
}

/// Cumulative loss of `policy` on the rounds of `records`.
pub fn policy_loss(records: &[RoundRecord], policy: &HindsightPolicy, full_losses: &LossMatrix) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        if r.available.is_empty() {
            continue;
        }
        let chosen = policy.get(&r.available).ok_or_else(|| {
            Error::InvalidParameter(format!("policy does not cover set {{{}}}", r.available))
        })?;
        let losses = full_losses.round(r.t);
        total += chosen.iter().map(|&i| losses[i]).sum::<f64>();
    }
    Ok(total)
}

/// Realized regret: learner loss minus the loss of `policy` on the same
/// rounds. May be negative for a single episode.
pub fn regret(records: &[RoundRecord], policy: &HindsightPolicy, full_losses: &LossMatrix) -> Result<f64> {
    let learner: f64 = records.iter().map(RoundRecord::loss_sum).sum();
    Ok(learner - policy_loss(records, policy, full_losses)?)
}

/// Upper limit on the number of joint policies enumerated by
/// [`exhaustive_comparator_loss`].
pub const EXHAUSTIVE_POLICY_LIMIT: u64 = 10_000_000;

fn k_subsets(members: &[usize], k: usize) -> Vec<Vec<usize>> {
    if members.len() <= k {
        return vec![members.to_vec()];
    }
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(k);
    fn rec(members: &[usize], k: usize, start: usize, pick: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pick.len() == k {
            out.push(pick.clone());
            return;
        }
        for i in start..members.len() {
            pick.push(members[i]);
            rec(members, k, i + 1, pick, out);
            pick.pop();
        }
    }
    rec(members, k, 0, &mut pick, &mut out);
    out
}

/// Comparator loss obtained by trying every k-subset of each distinct set
/// independently. Polynomial in the horizon for fixed `n`.
pub fn per_set_exhaustive_loss(records: &[RoundRecord], full_losses: &LossMatrix, k: usize) -> f64 {
    let mut by_set: BTreeMap<&AvailabilitySet, Vec<u64>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.available.is_empty()) {
        by_set.entry(&r.available).or_default().push(r.t);
    }
    by_set
        .iter()
        .map(|(s, rounds)| {
            k_subsets(s.indices(), k)
                .iter()
                .map(|c| {
                    rounds
                        .iter()
                        .map(|&t| c.iter().map(|&i| full_losses.round(t)[i]).sum::<f64>())
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Minimum comparator loss over every joint assignment of a k-subset to
/// each observed availability set, evaluated round by round. Exponential
/// in the number of distinct sets; for verification on tiny instances.
pub fn exhaustive_comparator_loss(records: &[RoundRecord], full_losses: &LossMatrix, k: usize) -> Result<f64> {
    let mut sets: Vec<AvailabilitySet> = records
        .iter()
        .filter(|r| !r.available.is_empty())
        .map(|r| r.available.clone())
        .collect();
    sets.sort();
    sets.dedup();
    let choices: Vec<Vec<Vec<usize>>> = sets.iter().map(|s| k_subsets(s.indices(), k)).collect();
    let count = choices
        .iter()
        .try_fold(1u64, |acc, c| acc.checked_mul(c.len() as u64))
        .filter(|&c| c <= EXHAUSTIVE_POLICY_LIMIT)
        .ok_or_else(|| Error::InvalidParameter("too many joint policies to enumerate".into()))?;

    let round_set: Vec<Option<usize>> = records
        .iter()
        .map(|r| sets.binary_search(&r.available).ok())
        .collect();
    let mut digits = vec![0usize; sets.len()];
    let mut best = f64::INFINITY;
    for _ in 0..count {
        let mut total = 0.0;
        for (r, set) in records.iter().zip(&round_set) {
            if let Some(j) = set {
                let losses = full_losses.round(r.t);
                total += choices[*j][digits[*j]].iter().map(|&i| losses[i]).sum::<f64>();
            }
        }
        best = best.min(total);
        for (d, c) in digits.iter_mut().zip(&choices) {
            *d += 1;
            if *d < c.len() {
                break;
            }
            *d = 0;
        }
    }
    Ok(if best.is_finite() { best } else { 0.0 })
}
