//! Simulation world: independent Bernoulli availability and oblivious loss
//! sequences, plus the episode loop and replayable traces.
//!
//! Availability and losses come from two separate RNG streams of the master
//! seed, both addressed by round number, so the loss of arm `i` at round `t`
//! is a fixed function of `(t, i, seed)` regardless of what was available or
//! chosen.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyState;
use crate::types::{AvailabilitySet, LossVector, SeededRng};

const AVAILABILITY_STREAM: u64 = 2;
const LOSS_STREAM: u64 = 3;

fn default_true() -> bool {
    true
}

/// How per-round losses are generated.
///
/// Generated kinds draw `Ber(mean)` losses when `bernoulli` is set and use
/// the mean itself otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossGeneratorSpec {
    /// Fixed per-arm means.
    ConstantGap {
        means: Vec<f64>,
        #[serde(default = "default_true")]
        bernoulli: bool,
    },
    /// Means reversed across arms during every odd block of `period` rounds
    /// (the first swap happens at round `period`).
    PeriodicSwap {
        means: Vec<f64>,
        period: u64,
        #[serde(default = "default_true")]
        bernoulli: bool,
    },
    /// `means[i] + amplitude * sin(2 pi (t / period + i / n))`, clipped to `[0, 1]`.
    Drifting {
        means: Vec<f64>,
        amplitude: f64,
        period: u64,
        #[serde(default = "default_true")]
        bernoulli: bool,
    },
    /// Availability and losses read from a trace file.
    ReplayFile { path: PathBuf },
}

/// `n` means evenly spaced over `[low, high]`.
pub fn evenly_spaced_means(n: usize, low: f64, high: f64) -> Vec<f64> {
    if n == 1 {
        return vec![low];
    }
    (0..n)
        .map(|i| low + (high - low) * i as f64 / (n - 1) as f64)
        .collect()
}

impl LossGeneratorSpec {
    fn validate(&self, n: usize) -> Result<()> {
        let (means, field) = match self {
            LossGeneratorSpec::ConstantGap { means, .. } => (means, "constant_gap"),
            LossGeneratorSpec::PeriodicSwap { means, period, .. } => {
                if *period == 0 {
                    return Err(Error::config("environment.loss.period", "must be at least 1"));
                }
                (means, "periodic_swap")
            }
            LossGeneratorSpec::Drifting {
                means,
                amplitude,
                period,
                ..
            } => {
                if *period == 0 {
                    return Err(Error::config("environment.loss.period", "must be at least 1"));
                }
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return Err(Error::config("environment.loss.amplitude", "must be finite and >= 0"));
                }
                (means, "drifting")
            }
            LossGeneratorSpec::ReplayFile { .. } => return Ok(()),
        };
        if means.len() != n {
            return Err(Error::config(
                "environment.loss.means",
                format!("{field} needs {n} means, got {}", means.len()),
            ));
        }
        if let Some(m) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::config("environment.loss.means", format!("{m} outside [0, 1]")));
        }
        Ok(())
    }
}

/// One simulated world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub n: usize,
    pub k: usize,
    pub horizon: u64,
    pub availability: Vec<f64>,
    pub loss: LossGeneratorSpec,
    #[serde(default)]
    pub seed: u64,
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > crate::types::MAX_ARMS {
            return Err(Error::config("environment.n", "must be in [1, 65536]"));
        }
        if self.k < 1 || self.k > self.n {
            return Err(Error::config("environment.k", format!("must be in [1, {}]", self.n)));
        }
        if self.horizon == 0 {
            return Err(Error::config("environment.horizon", "must be at least 1"));
        }
        if self.availability.len() != self.n {
            return Err(Error::config(
                "environment.availability",
                format!("expected {} rates, got {}", self.n, self.availability.len()),
            ));
        }
        if let Some(a) = self.availability.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::config("environment.availability", format!("{a} outside [0, 1]")));
        }
        self.loss.validate(self.n)
    }
}

/// One round of a recorded or replayed trace: availability and the full
/// loss vector.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRound {
    pub available: AvailabilitySet,
    pub losses: Vec<f64>,
}

enum LossSource {
    Generated { rng: Box<SeededRng> },
    Replay { rounds: Vec<TraceRound> },
}

/// Stateful round generator for an [`EnvironmentConfig`].
pub struct Environment {
    cfg: EnvironmentConfig,
    availability_rng: SeededRng,
    source: LossSource,
}

impl Environment {
    pub fn new(cfg: EnvironmentConfig) -> Result<Self> {
        let seed = cfg.seed;
        Environment::with_seeds(cfg, seed, seed)
    }

    /// Separate seeds for availability and losses.
    pub fn with_seeds(cfg: EnvironmentConfig, availability_seed: u64, loss_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let source = match &cfg.loss {
            LossGeneratorSpec::ReplayFile { path } => LossSource::Replay {
                rounds: read_replay_trace(path, cfg.n)?,
            },
            _ => LossSource::Generated {
                rng: Box::new(SeededRng::with_stream(loss_seed, LOSS_STREAM)),
            },
        };
        Ok(Environment {
            availability_rng: SeededRng::with_stream(availability_seed, AVAILABILITY_STREAM),
            cfg,
            source,
        })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.cfg
    }

    /// Mean loss of arm `i` at round `t` for generated kinds.
    fn mean(&self, t: u64, i: usize) -> f64 {
        let n = self.cfg.n;
        match &self.cfg.loss {
            LossGeneratorSpec::ConstantGap { means, .. } => means[i],
            LossGeneratorSpec::PeriodicSwap { means, period, .. } => {
                if (t / period) % 2 == 1 {
                    means[n - 1 - i]
                } else {
                    means[i]
                }
            }
            LossGeneratorSpec::Drifting {
                means,
                amplitude,
                period,
                ..
            } => {
                let phase = 2.0 * PI * (t as f64 / *period as f64 + i as f64 / n as f64);
                (means[i] + amplitude * phase.sin()).clamp(0.0, 1.0)
            }
            LossGeneratorSpec::ReplayFile { .. } => unreachable!("replay has no means"),
        }
    }

    fn bernoulli(&self) -> bool {
        match &self.cfg.loss {
            LossGeneratorSpec::ConstantGap { bernoulli, .. }
            | LossGeneratorSpec::PeriodicSwap { bernoulli, .. }
            | LossGeneratorSpec::Drifting { bernoulli, .. } => *bernoulli,
            LossGeneratorSpec::ReplayFile { .. } => false,
        }
    }

    /// Availability set and full loss vector of round `t` (1-based).
    pub fn generate_round(&mut self, t: u64) -> Result<(AvailabilitySet, Vec<f64>)> {
        if t == 0 {
            return Err(Error::InvalidParameter("rounds are numbered from 1".into()));
        }
        if let LossSource::Replay { rounds } = &self.source {
            return rounds
                .get((t - 1) as usize)
                .map(|r| (r.available.clone(), r.losses.clone()))
                .ok_or(Error::TraceTooShort {
                    rounds: rounds.len(),
                    horizon: self.cfg.horizon,
                });
        }

        let n = self.cfg.n;
        // each uniform draw consumes two 32-bit words
        let offset = (t as u128 - 1) * n as u128 * 2;
        self.availability_rng.seek(offset);
        let available = crate::types::sample_bernoulli_set(&self.cfg.availability, &mut self.availability_rng);

        let bernoulli = self.bernoulli();
        let means: Vec<f64> = (0..n).map(|i| self.mean(t, i)).collect();
        let LossSource::Generated { rng } = &mut self.source else {
            unreachable!()
        };
        rng.seek(offset);
        let losses = means
            .into_iter()
            .map(|m| {
                let u = rng.uniform();
                if bernoulli {
                    f64::from(u8::from(u < m))
                } else {
                    m
                }
            })
            .collect();
        Ok((available, losses))
    }

    /// Generates rounds `1..=horizon`.
    pub fn record_trace(&mut self) -> Result<Vec<TraceRound>> {
        (1..=self.cfg.horizon)
            .map(|t| {
                self.generate_round(t)
                    .map(|(available, losses)| TraceRound { available, losses })
            })
            .collect()
    }
}

/// Writes a trace as `t;available;losses`, one round per line.
pub fn write_replay_trace(path: &Path, rounds: &[TraceRound]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for (pos, round) in rounds.iter().enumerate() {
        let avail: Vec<String> = round.available.indices().iter().map(|i| i.to_string()).collect();
        let losses: Vec<String> = round.losses.iter().map(|l| format!("{l:.9}")).collect();
        writeln!(out, "{};{};{}", pos + 1, avail.join(","), losses.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_replay_trace(path: &Path, n: usize) -> Result<Vec<TraceRound>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rounds = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::TraceFormat { line: lineno, reason };
        let parts: Vec<&str> = line.trim_end().split(';').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", parts.len())));
        }
        let t: usize = parts[0].trim().parse().map_err(|_| bad("round number".into()))?;
        if t != rounds.len() + 1 {
            return Err(bad(format!("expected round {}, found {t}", rounds.len() + 1)));
        }
        let members = if parts[1].trim().is_empty() {
            Vec::new()
        } else {
            parts[1]
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("availability list".into()))?
        };
        let available = AvailabilitySet::new(members, n).map_err(|e| bad(e.to_string()))?;
        let losses = parts[2]
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("loss list".into()))?;
        if losses.len() != n {
            return Err(bad(format!("expected {n} losses, found {}", losses.len())));
        }
        if let Some(l) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(bad(format!("loss {l} outside [0, 1]")));
        }
        rounds.push(TraceRound { available, losses });
    }
    Ok(rounds)
}

/// Trace row for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub available: AvailabilitySet,
    pub chosen: Vec<usize>,
    /// Loss of each chosen arm, aligned with `chosen`.
    pub losses_incurred: Vec<f64>,
    pub lambda: f64,
    /// Fewer than `k` arms were available (including none).
    pub degenerate: bool,
}

impl RoundRecord {
    pub fn loss_sum(&self) -> f64 {
        self.losses_incurred.iter().sum()
    }

    /// `t,available,chosen,loss_sum,lambda,degenerate`; sets are
    /// space-separated, reals have nine decimals.
    pub fn csv_row(&self) -> String {
        let chosen: Vec<String> = self.chosen.iter().map(|i| i.to_string()).collect();
        let mut row = String::with_capacity(64);
        let _ = write!(
            row,
            "{},{},{},{:.9},{:.9},{}",
            self.t,
            self.available,
            chosen.join(" "),
            self.loss_sum(),
            self.lambda,
            u8::from(self.degenerate)
        );
        row
    }
}

pub const TRACE_CSV_HEADER: &str = "t,available,chosen,loss_sum,lambda,degenerate";

/// Dense `horizon x n` matrix of the full loss vectors of an episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossMatrix {
    n: usize,
    data: Vec<f64>,
}

impl LossMatrix {
    pub fn new(n: usize) -> Self {
        LossMatrix { n, data: Vec::new() }
    }

    pub fn push_round(&mut self, losses: &[f64]) {
        debug_assert_eq!(losses.len(), self.n);
        self.data.extend_from_slice(losses);
    }

    /// Full loss vector of round `t` (1-based).
    pub fn round(&self, t: u64) -> &[f64] {
        let start = (t as usize - 1) * self.n;
        &self.data[start..start + self.n]
    }

    pub fn rounds(&self) -> usize {
        self.data.len().checked_div(self.n).unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Records of a finished episode with the hidden full loss vectors.
#[derive(Clone, Debug)]
pub struct Episode {
    pub records: Vec<RoundRecord>,
    pub losses: LossMatrix,
}

impl Episode {
    pub fn cumulative_loss(&self) -> f64 {
        self.records.iter().map(RoundRecord::loss_sum).sum()
    }
}

/// Plays one round: generate, select, reveal the chosen losses, feed back.
pub fn play_round(env: &mut Environment, state: &mut PolicyState, t: u64) -> Result<(RoundRecord, Vec<f64>)> {
    let (available, full) = env.generate_round(t)?;
    let selection = state.select(&available)?;
    let chosen = selection.chosen.members().to_vec();
    let revealed = LossVector::new(chosen.iter().map(|&i| (i, full[i])))?;
    let outcome = state.feedback(&revealed)?;
    let record = RoundRecord {
        t,
        losses_incurred: chosen.iter().map(|&i| full[i]).collect(),
        chosen,
        degenerate: available.len() < state.k(),
        available,
        lambda: outcome.lambda,
    };
    Ok((record, full))
}

/// Runs rounds `1..=horizon`, handing each record and full loss vector to
/// `sink` as it is produced.
pub fn run_episode_with<F>(env: &mut Environment, state: &mut PolicyState, mut sink: F) -> Result<()>
where
    F: FnMut(RoundRecord, Vec<f64>) -> Result<()>,
{
    check_agreement(env, state)?;
    for t in 1..=env.config().horizon {
        let (record, full) = play_round(env, state, t)?;
        sink(record, full)?;
    }
    Ok(())
}

/// Runs a full episode, keeping every record and the loss matrix.
pub fn run_episode(env: &mut Environment, state: &mut PolicyState) -> Result<Episode> {
    let mut episode = Episode {
        records: Vec::with_capacity(env.config().horizon as usize),
        losses: LossMatrix::new(env.config().n),
    };
    run_episode_with(env, state, |record, full| {
        episode.losses.push_round(&full);
        episode.records.push(record);
        Ok(())
    })?;
    Ok(episode)
}

fn check_agreement(env: &Environment, state: &PolicyState) -> Result<()> {
    let cfg = env.config();
    if cfg.n != state.n() || cfg.k != state.k() {
        return Err(Error::InvalidParameter(format!(
            "environment has n = {}, k = {} but policy has n = {}, k = {}",
            cfg.n,
            cfg.k,
            state.n(),
            state.k()
        )));
    }
    Ok(())
}
