//! Experiment orchestration: seed-replicated episodes, regret aggregation
//! and CSV/JSON artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    play_round, run_episode, Environment, EnvironmentConfig, LossMatrix, RoundRecord, TRACE_CSV_HEADER,
};
use crate::error::{Error, Result};
use crate::estimator::{exact_joint_from_rates, monte_carlo_joint_from_rates, DEFAULT_ENUMERATION_LIMIT};
use crate::oracle::{
    best_policy, exhaustive_comparator_loss, per_set_exhaustive_loss, policy_loss, OracleAccumulator,
    EXHAUSTIVE_POLICY_LIMIT,
};
use crate::policy::{EstimatorKind, Horizon, ParameterSchedule, PolicyState};
use crate::types::SeededRng;

const COMPARISON_STREAM: u64 = 4;

fn default_mc_sample_cap() -> usize {
    2000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub estimator_variant: EstimatorKind,
    #[serde(default = "default_mc_sample_cap")]
    pub mc_sample_cap: usize,
    /// Use `t` Monte Carlo samples at round `t`, ignoring `mc_sample_cap`.
    #[serde(default)]
    pub mc_uncapped: bool,
    /// Restart the schedule at rounds 1, 3, 7, ... instead of using the horizon.
    #[serde(default)]
    pub doubling_trick: bool,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Defaults to `max(1, T / 100)`.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config {
            field: "<config>".into(),
            reason: e.to_string().trim().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("<config>", format!("{}: {e}", path.display())))?;
        ExperimentSpec::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        if self.estimator_variant == EstimatorKind::MonteCarlo && !self.mc_uncapped && self.mc_sample_cap == 0 {
            return Err(Error::config("mc_sample_cap", "must be at least 1"));
        }
        if self.estimator_variant == EstimatorKind::Exact && self.environment.n > DEFAULT_ENUMERATION_LIMIT {
            return Err(Error::config(
                "environment.n",
                format!("exact estimator supports at most {DEFAULT_ENUMERATION_LIMIT} arms"),
            ));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> u64 {
        self.environment.horizon
    }

    pub fn schedule(&self) -> Result<ParameterSchedule> {
        let env = &self.environment;
        let horizon = if self.doubling_trick {
            Horizon::Doubling
        } else {
            Horizon::Known(env.horizon)
        };
        let cap = (!self.mc_uncapped).then_some(self.mc_sample_cap);
        Ok(ParameterSchedule::auto(env.n, env.k, horizon, self.estimator_variant)?.with_mc_sample_cap(cap))
    }

    /// Sorted checkpoint rounds: every `checkpoint_every`, plus `T/4`, `T/2`
    /// and `T`.
    pub fn checkpoints(&self) -> Vec<u64> {
        let t = self.horizon();
        let every = self.checkpoint_every.unwrap_or((t / 100).max(1));
        let mut points: Vec<u64> = (1..=t / every).map(|i| i * every).collect();
        points.extend([t / 4, t / 2, t].into_iter().filter(|&c| c >= 1));
        points.sort_unstable();
        points.dedup();
        points
    }

    fn env_for_seed(&self, seed: u64) -> EnvironmentConfig {
        EnvironmentConfig {
            seed,
            ..self.environment.clone()
        }
    }
}

/// Per-seed value at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCheckpoint {
    pub t: u64,
    pub regret: f64,
    pub lambda: f64,
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub learner_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
    pub checkpoints: Vec<SeedCheckpoint>,
}

/// Seed-averaged values at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: u64,
    pub mean_regret: f64,
    pub std_err: f64,
    pub mean_lambda: f64,
    /// Mean seconds from episode start; kept out of the summary file.
    #[serde(skip)]
    pub wall_clock: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n: usize,
    pub k: usize,
    pub horizon: u64,
    pub estimator_variant: EstimatorKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
    pub per_seed: Vec<SeedResult>,
}

impl AggregateReport {
    pub fn row_at(&self, t: u64) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn final_row(&self) -> Option<&AggregateRow> {
        self.rows.last()
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(spec: &ExperimentSpec, per_seed: Vec<SeedResult>) -> AggregateReport {
    let points = spec.checkpoints();
    let rows = points
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let regrets: Vec<f64> = per_seed.iter().map(|s| s.checkpoints[j].regret).collect();
            let (mean_regret, std_err) = mean_and_stderr(&regrets);
            let count = per_seed.len() as f64;
            AggregateRow {
                t,
                mean_regret,
                std_err,
                mean_lambda: per_seed.iter().map(|s| s.checkpoints[j].lambda).sum::<f64>() / count,
                wall_clock: per_seed.iter().map(|s| s.checkpoints[j].wall_clock).sum::<f64>() / count,
            }
        })
        .collect();
    AggregateReport {
        n: spec.environment.n,
        k: spec.environment.k,
        horizon: spec.horizon(),
        estimator_variant: spec.estimator_variant,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        rows,
        per_seed,
    }
}

/// Plays one seed, streaming the trace to `trace_path` and evaluating the
/// hindsight comparator at every checkpoint.
pub fn run_seed(spec: &ExperimentSpec, seed: u64, trace_path: Option<&Path>) -> Result<SeedResult> {
    let cfg = spec.env_for_seed(seed);
    let mut env = Environment::new(cfg.clone())?;
    let mut state = PolicyState::new(cfg.n, cfg.k, spec.schedule()?, seed)?;
    let mut trace = match trace_path {
        Some(p) => {
            let mut w = BufWriter::new(fs::File::create(p)?);
            writeln!(w, "{TRACE_CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let points = spec.checkpoints();
    let mut next = 0;
    let mut acc = OracleAccumulator::new(cfg.n, cfg.k);
    let mut checkpoints = Vec::with_capacity(points.len());
    let start = Instant::now();
    for t in 1..=cfg.horizon {
        let (record, full) = play_round(&mut env, &mut state, t)?;
        acc.observe_record(&record, &full);
        if let Some(w) = trace.as_mut() {
            writeln!(w, "{}", record.csv_row())?;
        }
        if points.get(next) == Some(&t) {
            checkpoints.push(SeedCheckpoint {
                t,
                regret: acc.regret(),
                lambda: record.lambda,
                wall_clock: start.elapsed().as_secs_f64(),
            });
            next += 1;
        }
    }
    if let Some(mut w) = trace {
        w.flush()?;
    }
    Ok(SeedResult {
        seed,
        learner_loss: acc.learner_loss(),
        comparator_loss: acc.comparator_loss(),
        regret: acc.regret(),
        checkpoints,
    })
}

fn write_seed_regret(path: &Path, result: &SeedResult) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,regret,lambda")?;
    for c in &result.checkpoints {
        writeln!(w, "{},{:.9},{:.9}", c.t, c.regret, c.lambda)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TimingRow {
    t: u64,
    mean_wall_clock_secs: f64,
}

/// Runs every seed (in parallel up to `workers`) and writes
/// `trace_seed_<seed>.csv`, `regret_seed_<seed>.csv`, `summary.json` and
/// `timing.json` to `output_dir`. Everything but the timing file is a pure
/// function of the spec.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize, output_dir: Option<&Path>) -> Result<AggregateReport> {
    spec.validate()?;
    let dir = output_dir.unwrap_or(&spec.output_dir);
    fs::create_dir_all(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let mut per_seed: Vec<SeedResult> = pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                info!("seed {seed}: starting");
                let result = run_seed(spec, seed, Some(&dir.join(format!("trace_seed_{seed}.csv"))))?;
                write_seed_regret(&dir.join(format!("regret_seed_{seed}.csv")), &result)?;
                info!("seed {seed}: regret {:.3}", result.regret);
                Ok(result)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    per_seed.sort_by_key(|s| s.seed);
    let report = aggregate(spec, per_seed);

    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let timing: Vec<TimingRow> = report
        .rows
        .iter()
        .map(|r| TimingRow {
            t: r.t,
            mean_wall_clock_secs: r.wall_clock,
        })
        .collect();
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(report)
}

/// Outcome of the three-part sublinear-regret check on a report whose
/// checkpoints include `T/4`, `T/2` and `T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SublinearityVerdict {
    pub mean_regret: f64,
    /// Mean regret divided by rounds at `T/4`, `T/2`, `T`.
    pub ratios: [f64; 3],
    pub ceiling: f64,
    pub positive: bool,
    pub ratio_decreasing: bool,
    pub below_ceiling: bool,
}

impl SublinearityVerdict {
    pub fn passed(&self) -> bool {
        self.positive && self.ratio_decreasing && self.below_ceiling
    }
}

pub fn sublinearity_check(report: &AggregateReport) -> Result<SublinearityVerdict> {
    let t = report.horizon;
    let ratio = |c: u64| -> Result<f64> {
        report
            .row_at(c)
            .map(|r| r.mean_regret / c as f64)
            .ok_or_else(|| Error::InvalidParameter(format!("no checkpoint at round {c}")))
    };
    if t < 4 {
        return Err(Error::InvalidParameter("sublinearity check needs T >= 4".into()));
    }
    let ratios = [ratio(t / 4)?, ratio(t / 2)?, ratio(t)?];
    let mean_regret = ratios[2] * t as f64;
    let tf = t as f64;
    let ceiling = (report.k * report.n * report.n) as f64 * (tf * tf.ln()).sqrt();
    Ok(SublinearityVerdict {
        mean_regret,
        ratios,
        ceiling,
        positive: mean_regret > 0.0,
        ratio_decreasing: ratios[1] < ratios[0] && ratios[2] < ratios[1],
        below_ceiling: mean_regret <= ceiling,
    })
}

/// One round of an estimator comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub t: u64,
    pub max_gap: f64,
    pub exact_secs: f64,
    pub mc_secs: f64,
    pub mc_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

/// Replays each seed with the exact learner and, every round, evaluates
/// both joint estimators on the same availability estimate and weights.
/// Writes `compare_seed_<seed>.csv`.
pub fn compare_estimators(spec: &ExperimentSpec, output_dir: Option<&Path>) -> Result<Vec<SeedComparison>> {
    spec.validate()?;
    if spec.environment.n > DEFAULT_ENUMERATION_LIMIT {
        return Err(Error::config(
            "environment.n",
            format!("comparison needs the exact estimator (at most {DEFAULT_ENUMERATION_LIMIT} arms)"),
        ));
    }
    let dir = output_dir.unwrap_or(&spec.output_dir);
    fs::create_dir_all(dir)?;
    let exact_spec = ExperimentSpec {
        estimator_variant: EstimatorKind::Exact,
        ..spec.clone()
    };
    let mc_schedule = ExperimentSpec {
        estimator_variant: EstimatorKind::MonteCarlo,
        ..spec.clone()
    }
    .schedule()?;
    let mut out = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let cfg = spec.env_for_seed(seed);
        let mut env = Environment::new(cfg.clone())?;
        let mut state = PolicyState::new(cfg.n, cfg.k, exact_spec.schedule()?, seed)?;
        let mut rng = SeededRng::with_stream(seed, COMPARISON_STREAM);
        let mut rows = Vec::with_capacity(cfg.horizon as usize);
        for t in 1..=cfg.horizon {
            let (available, _) = env.generate_round(t)?;
            let rates = state.availability().clone().recorded(&available).rates();
            let w = state.weights().clone();
            let samples = mc_schedule.mc_samples(t);

            let clock = Instant::now();
            let exact = exact_joint_from_rates(&rates, &w, cfg.k, DEFAULT_ENUMERATION_LIMIT)?;
            let exact_secs = clock.elapsed().as_secs_f64();
            let clock = Instant::now();
            let mc = monte_carlo_joint_from_rates(&rates, &w, cfg.k, samples, &mut rng)?;
            let mc_secs = clock.elapsed().as_secs_f64();

            let max_gap = exact.iter().zip(&mc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            rows.push(ComparisonRow {
                t,
                max_gap,
                exact_secs,
                mc_secs,
                mc_samples: samples,
            });
            play_round(&mut env, &mut state, t)?;
        }
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("compare_seed_{seed}.csv")))?);
        writeln!(w, "t,max_gap,exact_secs,mc_secs,mc_samples")?;
        for r in &rows {
            writeln!(w, "{},{:.9},{:.9},{:.9},{}", r.t, r.max_gap, r.exact_secs, r.mc_secs, r.mc_samples)?;
        }
        w.flush()?;
        out.push(SeedComparison { seed, rows });
    }
    Ok(out)
}

/// Brute-force comparator checks for one seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCheck {
    pub seed: u64,
    pub separable_loss: f64,
    pub per_set_exhaustive_loss: f64,
    /// `None` when the joint policy space is too large to enumerate.
    pub joint_exhaustive_loss: Option<f64>,
    pub streaming_regret: f64,
    pub direct_regret: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        close(self.separable_loss, self.per_set_exhaustive_loss)
            && self.joint_exhaustive_loss.is_none_or(|j| close(self.separable_loss, j))
            && close(self.streaming_regret, self.direct_regret)
    }
}

fn joint_policy_count(records: &[RoundRecord], k: usize) -> Option<u64> {
    let mut sets: Vec<_> = records.iter().map(|r| &r.available).filter(|s| !s.is_empty()).collect();
    sets.sort();
    sets.dedup();
    sets.iter().try_fold(1u64, |acc, s| {
        let (m, k) = (s.len() as u64, k.min(s.len()) as u64);
        let mut c: u64 = 1;
        for i in 0..k {
            c = c.checked_mul(m - i)? / (i + 1);
        }
        acc.checked_mul(c)
    })
}

/// Plays every seed and cross-checks the hindsight comparator against
/// exhaustive enumeration.
pub fn oracle_check(spec: &ExperimentSpec) -> Result<Vec<OracleCheck>> {
    spec.validate()?;
    spec.seeds
        .iter()
        .map(|&seed| {
            let cfg = spec.env_for_seed(seed);
            let mut env = Environment::new(cfg.clone())?;
            let mut state = PolicyState::new(cfg.n, cfg.k, spec.schedule()?, seed)?;
            let episode = run_episode(&mut env, &mut state)?;
            let (records, losses): (&[RoundRecord], &LossMatrix) = (&episode.records, &episode.losses);

            let policy = best_policy(records, losses, cfg.k);
            let separable_loss = policy_loss(records, &policy, losses)?;
            let joint_exhaustive_loss = match joint_policy_count(records, cfg.k) {
                Some(c) if c <= EXHAUSTIVE_POLICY_LIMIT => Some(exhaustive_comparator_loss(records, losses, cfg.k)?),
                _ => None,
            };
            let mut acc = OracleAccumulator::new(cfg.n, cfg.k);
            for r in records {
                acc.observe_record(r, losses.round(r.t));
            }
            Ok(OracleCheck {
                seed,
                separable_loss,
                per_set_exhaustive_loss: per_set_exhaustive_loss(records, losses, cfg.k),
                joint_exhaustive_loss,
                streaming_regret: acc.regret(),
                direct_regret: crate::oracle::regret(records, &policy, losses)?,
            })
        })
        .collect()
}
