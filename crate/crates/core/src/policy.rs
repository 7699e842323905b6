//! Sleeping EXP3 with multiple plays.
//!
//! Each round the learner receives the available set, projects its weights
//! onto the capped simplex, samples a k-subset whose marginals match the
//! scaled probabilities, and after semi-bandit feedback updates its weights
//! with importance-weighted loss estimates. The importance weights are the
//! joint selection probabilities under availability and selection
//! randomness, estimated from the empirical availability rates.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::decomposition::{decompose, sample_corner, Corner};
use crate::error::{Error, Result};
use crate::estimator::{
    exact_joint_from_rates, monte_carlo_joint_from_rates, AvailabilityEstimate,
    DEFAULT_ENUMERATION_LIMIT,
};
use crate::projection::scaled_probabilities;
use crate::types::{AvailabilitySet, LossVector, ScaledProbabilityVector, SeededRng, WeightVector};

/// How the joint selection probability is estimated; also selects the
/// matching stabilizer schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Enumeration over all subsets.
    #[default]
    Exact,
    /// Average over sampled availability sets.
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Known(u64),
    /// Unknown horizon: the schedule restarts at horizons 1, 2, 4, ...
    Doubling,
}

/// Learning rate, confidence level and stabilizer schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchedule {
    pub eta: f64,
    pub delta: f64,
    pub estimator: EstimatorKind,
    pub horizon: Horizon,
    /// Upper bound on Monte Carlo samples per round; `None` uses `t` samples.
    pub mc_sample_cap: Option<usize>,
}

/// `min{1, sqrt(ln(n/k) / (n T))}`; when `n == k` the weights never affect
/// the selection and the rate is set to 1.
pub fn auto_eta(n: usize, k: usize, horizon: u64) -> f64 {
    let eta = ((n as f64 / k as f64).ln() / (n as f64 * horizon as f64)).sqrt();
    if eta > 0.0 {
        eta.min(1.0)
    } else {
        1.0
    }
}

/// `min{1/2, n / T^2}`.
pub fn auto_delta(n: usize, horizon: u64) -> f64 {
    let delta = n as f64 / (horizon as f64).powi(2);
    if delta > 0.5 {
        warn!("delta = {n}/{horizon}^2 = {delta} exceeds 1/2; clamped to 0.5");
        0.5
    } else {
        delta
    }
}

impl ParameterSchedule {
    /// Schedule with `eta` and `delta` derived from the horizon.
    pub fn auto(n: usize, k: usize, horizon: Horizon, estimator: EstimatorKind) -> Result<Self> {
        if k < 1 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        let t = match horizon {
            Horizon::Known(0) => {
                return Err(Error::InvalidParameter("horizon must be at least 1".into()))
            }
            Horizon::Known(t) => t,
            Horizon::Doubling => 1,
        };
        Ok(ParameterSchedule {
            eta: auto_eta(n, k, t),
            delta: auto_delta(n, t),
            estimator,
            horizon,
            mc_sample_cap: None,
        })
    }

    pub fn new(eta: f64, delta: f64, estimator: EstimatorKind, horizon: Horizon) -> Result<Self> {
        if !eta.is_finite() || eta <= 0.0 {
            return Err(Error::InvalidParameter(format!("eta = {eta} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta = {delta} must lie in (0, 1)")));
        }
        Ok(ParameterSchedule {
            eta,
            delta,
            estimator,
            horizon,
            mc_sample_cap: None,
        })
    }

    pub fn with_mc_sample_cap(mut self, cap: Option<usize>) -> Self {
        self.mc_sample_cap = cap;
        self
    }

    pub fn lambda_at(&self, t: u64, n: usize, k: usize) -> f64 {
        lambda_at(self, t, n, k)
    }

    /// Monte Carlo samples used at round `t`.
    pub fn mc_samples(&self, t: u64) -> usize {
        let t = t.max(1) as usize;
        self.mc_sample_cap.map_or(t, |cap| t.min(cap.max(1)))
    }
}

/// Stabilizer added to the joint probability in the loss estimate at round
/// `t` (1-based). Always in `(0, 1]` and non-increasing in `t`.
pub fn lambda_at(schedule: &ParameterSchedule, t: u64, n: usize, k: usize) -> f64 {
    let t = t.max(1) as f64;
    let kn = (k * n) as f64;
    let delta = schedule.delta;
    let value = match schedule.estimator {
        EstimatorKind::Exact => {
            let log_term = (n as f64 / delta).ln();
            2.0 * kn * (2.0 * log_term / t).sqrt() + 8.0 * kn * log_term / (3.0 * t)
        }
        EstimatorKind::MonteCarlo => {
            let log_term = (2.0 * n as f64 / delta).ln();
            4.0 * kn * (log_term / t).sqrt() + 8.0 * kn * log_term / (3.0 * t)
        }
    };
    value.min(1.0)
}

/// `loss / (joint + lambda)`: the importance-weighted estimate for a
/// played arm.
#[inline]
pub fn estimated_loss(loss: f64, joint: f64, lambda: f64) -> f64 {
    loss / (joint + lambda)
}

/// Outcome of [`PolicyState::select`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: Corner,
    pub q_scaled: ScaledProbabilityVector,
    pub decomposition_size: usize,
    /// Fewer than `k` arms were available and all of them were chosen.
    pub degenerate: bool,
}

/// Outcome of [`PolicyState::feedback`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackOutcome {
    /// 1-based index of the round just completed.
    pub round: u64,
    pub lambda: f64,
    /// Joint probability estimate; `None` when nothing was played.
    pub joint: Option<Vec<f64>>,
    /// `(arm, estimated loss)` for every played arm.
    pub estimated_losses: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PendingRound {
    available: AvailabilitySet,
    chosen: Corner,
}

/// The learner's complete mutable state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyState {
    n: usize,
    k: usize,
    weights: WeightVector,
    avail: AvailabilityEstimate,
    schedule: ParameterSchedule,
    round: u64,
    /// Round at which the current doubling epoch ends.
    epoch_end: Option<u64>,
    selection_rng: SeededRng,
    estimator_rng: SeededRng,
    pending: Option<PendingRound>,
}

impl PolicyState {
    /// Fresh learner with unit weights. The selection and Monte Carlo RNG
    /// streams are both derived from `seed`.
    pub fn new(n: usize, k: usize, schedule: ParameterSchedule, seed: u64) -> Result<Self> {
        if k < 1 || k > n {
            return Err(Error::InvalidK { k, n });
        }
        if n > crate::types::MAX_ARMS {
            return Err(Error::InvalidParameter(format!("{n} arms exceeds the supported maximum")));
        }
        if schedule.estimator == EstimatorKind::Exact && n > DEFAULT_ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                n,
                limit: DEFAULT_ENUMERATION_LIMIT,
            });
        }
        let epoch_end = matches!(schedule.horizon, Horizon::Doubling).then_some(1);
        Ok(PolicyState {
            n,
            k,
            weights: WeightVector::uniform(n),
            avail: AvailabilityEstimate::new(n),
            schedule,
            round: 0,
            epoch_end,
            selection_rng: SeededRng::with_stream(seed, 0),
            estimator_rng: SeededRng::with_stream(seed, 1),
            pending: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Completed select/feedback cycles.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn availability(&self) -> &AvailabilityEstimate {
        &self.avail
    }

    pub fn schedule(&self) -> &ParameterSchedule {
        &self.schedule
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    /// Stabilizer that the next feedback will use.
    pub fn next_lambda(&self) -> f64 {
        self.schedule.lambda_at(self.round + 1, self.n, self.k)
    }

    /// Selection probabilities the learner would use for `s`, without
    /// drawing. Under fewer than `k` available arms every arm has
    /// probability one.
    pub fn marginals(&self, s: &AvailabilitySet) -> Result<ScaledProbabilityVector> {
        self.check_set(s)?;
        if s.len() < self.k {
            return Ok(ScaledProbabilityVector::select_all(s, self.n));
        }
        scaled_probabilities(&self.weights, s, self.k)
    }

    fn check_set(&self, s: &AvailabilitySet) -> Result<()> {
        match s.max_index() {
            Some(m) if m >= self.n => Err(Error::ArmOutOfRange { index: m, n: self.n }),
            _ => Ok(()),
        }
    }

    /// Chooses the arms to play from `s`.
    pub fn select(&mut self, s: &AvailabilitySet) -> Result<SelectionResult> {
        if self.pending.is_some() {
            return Err(Error::FeedbackPending);
        }
        self.check_set(s)?;
        let result = if s.len() < self.k {
            SelectionResult {
                chosen: Corner::new(s.indices().to_vec()),
                q_scaled: ScaledProbabilityVector::select_all(s, self.n),
                decomposition_size: usize::from(!s.is_empty()),
                degenerate: true,
            }
        } else {
            let q = scaled_probabilities(&self.weights, s, self.k)?;
            let d = decompose(&q)?;
            let chosen = sample_corner(&d, &mut self.selection_rng).clone();
            SelectionResult {
                chosen,
                q_scaled: q,
                decomposition_size: d.len(),
                degenerate: false,
            }
        };
        self.pending = Some(PendingRound {
            available: s.clone(),
            chosen: result.chosen.clone(),
        });
        Ok(result)
    }

    /// Consumes the losses of the arms chosen by the pending selection.
    ///
    /// Records the round's availability, estimates the joint selection
    /// probabilities with the updated rates, and applies
    /// `w(i) <- w(i) exp(-eta * loss(i) / (joint(i) + lambda))` to the
    /// played arms.
    pub fn feedback(&mut self, losses: &LossVector) -> Result<FeedbackOutcome> {
        let pending = self.pending.as_ref().ok_or(Error::NoPendingSelection)?;
        let chosen = pending.chosen.members();
        if losses.len() != chosen.len() || !losses.arms().eq(chosen.iter().copied()) {
            return Err(Error::FeedbackMismatch(format!(
                "expected losses for arms {:?}, got {:?}",
                chosen,
                losses.arms().collect::<Vec<_>>()
            )));
        }
        if let Some((arm, value)) = losses.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::LossOutOfRange { arm, value });
        }
        let pending = self.pending.take().expect("checked above");

        self.avail.record(&pending.available);
        let t = self.round + 1;
        let lambda = self.schedule.lambda_at(t, self.n, self.k);

        let mut outcome = FeedbackOutcome {
            round: t,
            lambda,
            joint: None,
            estimated_losses: Vec::with_capacity(losses.len()),
        };
        if !pending.chosen.is_empty() {
            let joint = self.joint_estimate(t)?;
            let eta = self.schedule.eta;
            for (arm, loss) in losses.iter() {
                let est = estimated_loss(loss, joint[arm], lambda);
                if est > 0.0 {
                    self.weights.decay(arm, eta * est);
                }
                outcome.estimated_losses.push((arm, est));
            }
            outcome.joint = Some(joint);
        }

        self.round = t;
        self.advance_epoch();
        Ok(outcome)
    }

    fn joint_estimate(&mut self, t: u64) -> Result<Vec<f64>> {
        let rates = self.avail.rates();
        match self.schedule.estimator {
            EstimatorKind::Exact => {
                exact_joint_from_rates(&rates, &self.weights, self.k, DEFAULT_ENUMERATION_LIMIT)
            }
            EstimatorKind::MonteCarlo => monte_carlo_joint_from_rates(
                &rates,
                &self.weights,
                self.k,
                self.schedule.mc_samples(t),
                &mut self.estimator_rng,
            ),
        }
    }

    /// Doubling trick: at the end of an epoch the weights restart and eta,
    /// delta are re-derived for a horizon twice as long. Availability
    /// counts and the round counter carry over.
    fn advance_epoch(&mut self) {
        let Some(end) = self.epoch_end else { return };
        if self.round < end {
            return;
        }
        let next_len = end + 1;
        self.epoch_end = Some(end + next_len);
        self.weights = WeightVector::uniform(self.n);
        self.schedule.eta = auto_eta(self.n, self.k, next_len);
        self.schedule.delta = auto_delta(self.n, next_len);
    }

    /// Structured-text snapshot of the full state.
    pub fn to_snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let state: PolicyState = serde_json::from_str(text)?;
        if state.weights.n() != state.n || state.avail.n() != state.n {
            return Err(Error::InvalidParameter("snapshot dimensions disagree".into()));
        }
        if state.weights.log_weights().iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("snapshot log-weights must be finite".into()));
        }
        Ok(state)
    }
}
