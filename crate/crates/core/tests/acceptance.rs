//! Acceptance criteria A1-A8. Runs without the libtest harness so that one
//! PASS/FAIL line per criterion is always printed; exits nonzero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use sleeping_exp3::decomposition::{decompose, sample_corner};
use sleeping_exp3::environment::{evenly_spaced_means, EnvironmentConfig, LossGeneratorSpec, LossMatrix, RoundRecord};
use sleeping_exp3::estimator::{exact_joint_from_rates, monte_carlo_joint_from_rates, AvailabilityEstimate};
use sleeping_exp3::oracle::{best_policy, policy_loss};
use sleeping_exp3::policy::{estimated_loss, EstimatorKind, Horizon, ParameterSchedule, PolicyState};
use sleeping_exp3::projection::{cap_project, scaled_probabilities, scaled_projection};
use sleeping_exp3::runner::{run_experiment, sublinearity_check, ExperimentSpec};
use sleeping_exp3::types::{normalize_over_set, AvailabilitySet, LossVector, SeededRng, WeightVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_index(rng: &mut SeededRng, bound: usize) -> usize {
    ((rng.uniform() * bound as f64) as usize).min(bound - 1)
}

fn random_weights(rng: &mut SeededRng, n: usize, spread: f64) -> WeightVector {
    WeightVector::from_log((0..n).map(|_| spread * (2.0 * rng.uniform() - 1.0)).collect()).unwrap()
}

/// Bernoulli(rate) subset with at least `min_size` members.
fn random_set(rng: &mut SeededRng, n: usize, rate: f64, min_size: usize) -> AvailabilitySet {
    loop {
        let members: Vec<usize> = (0..n).filter(|_| rng.bernoulli(rate)).collect();
        if members.len() >= min_size {
            return AvailabilitySet::new(members, n).unwrap();
        }
    }
}

/// Water-filling by bisection on the scale `c` in `sum_i min(1, c p_i) = k`.
fn water_fill_oracle(p: &[f64], support: &[usize], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let fill = |c: f64| support.iter().map(|&i| (c * p[i]).min(1.0)).sum::<f64>();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while fill(hi) < k as f64 {
        hi *= 2.0;
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fill(mid) < k as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for &i in support {
        out[i] = (hi * p[i]).min(1.0);
    }
    out
}

fn a1_projection() -> Outcome {
    let mut rng = SeededRng::new(101);
    let spreads = [0.0, 0.5, 3.0, 30.0];
    let mut worst = 0.0_f64;
    let mut elapsed = Duration::ZERO;
    for instance in 0..1000 {
        let n = 1 + random_index(&mut rng, 32);
        let spread = spreads[instance % spreads.len()];
        let w = random_weights(&mut rng, n, spread);
        let s = random_set(&mut rng, n, 0.7, 1);
        let k = 1 + random_index(&mut rng, s.len());

        let clock = Instant::now();
        let sp = scaled_projection(&w, &s, k).unwrap();
        let q = sp.q.q().to_vec();
        let again = cap_project(&q.iter().map(|x| x / k as f64).collect::<Vec<_>>(), k).unwrap();
        elapsed += clock.elapsed();

        let p = normalize_over_set(&w, &s).unwrap();
        let kf = k as f64;
        let fail = |why: String| outcome(false, format!("instance {instance} (n={n}, k={k}): {why}"));
        let sum: f64 = q.iter().sum();
        if (sum - kf).abs() > 1e-9 {
            return fail(format!("sum {sum}"));
        }
        if q.iter().any(|&x| x > 1.0 + 1e-12) {
            return fail("entry above one".into());
        }
        if (0..n).any(|i| !s.contains(i) && q[i] != 0.0) {
            return fail("mass outside the available set".into());
        }
        for &i in &sp.pinned {
            if q[i] / kf != 1.0 / kf {
                return fail(format!("pinned arm {i} has {}", q[i] / kf));
            }
        }
        let unpinned: Vec<usize> = s.indices().iter().copied().filter(|i| !sp.pinned.contains(i)).collect();
        let unpinned_mass: f64 = unpinned.iter().map(|&i| p[i]).sum();
        let scale = (kf - sp.pinned.len() as f64) / unpinned_mass;
        for &i in &unpinned {
            if (q[i] - scale * p[i]).abs() > 1e-9 {
                return fail(format!("arm {i} not proportional"));
            }
        }
        let oracle = water_fill_oracle(&p, s.indices(), k);
        for i in 0..n {
            worst = worst.max((q[i] - oracle[i]).abs());
        }
        if worst > 1e-9 {
            return fail(format!("oracle gap {worst:e}"));
        }
        if again.p_hat().iter().zip(&q).any(|(a, b)| *a != b / kf) {
            return fail("projection not idempotent".into());
        }
    }
    let secs = elapsed.as_secs_f64();
    outcome(
        secs < 1.0,
        format!("1000 instances, max oracle gap {worst:.1e}, projection time {secs:.3}s"),
    )
}

fn a2_decomposition() -> Outcome {
    let started = Instant::now();
    let mut rng = SeededRng::new(202);
    let mut worst = 0.0_f64;
    for instance in 0..1000 {
        let n = 1 + random_index(&mut rng, 32);
        let w = random_weights(&mut rng, n, [0.3, 2.0, 10.0][instance % 3]);
        let s = random_set(&mut rng, n, 0.75, 1);
        let k = 1 + random_index(&mut rng, s.len());
        let q = scaled_probabilities(&w, &s, k).unwrap();
        let d = decompose(&q).unwrap();
        let fail = |why: String| outcome(false, format!("instance {instance} (n={n}, k={k}): {why}"));
        let rec = d.reconstruct();
        for i in 0..n {
            worst = worst.max((rec[i] - q.q()[i]).abs());
        }
        if worst > 1e-9 {
            return fail(format!("reconstruction error {worst:e}"));
        }
        if d.len() > n {
            return fail(format!("{} terms", d.len()));
        }
        let coef_sum: f64 = d.terms().iter().map(|(c, _)| c).sum();
        if d.terms().iter().any(|(c, _)| *c <= 0.0) || (coef_sum - 1.0).abs() > 1e-9 {
            return fail(format!("coefficients sum to {coef_sum}"));
        }
        if d.terms().iter().any(|(_, c)| c.len() != k || c.members().iter().any(|&i| !s.contains(i))) {
            return fail("corner is not a k-subset of the available set".into());
        }
    }

    const DRAWS: usize = 100_000;
    let mut vectors = SeededRng::new(203);
    let mut sampler = SeededRng::new(204);
    let mut checked = 0;
    let mut outside = Vec::new();
    let mut largest_z = 0.0_f64;
    for v in 0..20 {
        let n = 3 + random_index(&mut vectors, 8);
        let k = 1 + random_index(&mut vectors, n - 1);
        let w = random_weights(&mut vectors, n, 1.5);
        let q = scaled_probabilities(&w, &AvailabilitySet::full(n), k).unwrap();
        let d = decompose(&q).unwrap();
        let mut hits = vec![0usize; n];
        for _ in 0..DRAWS {
            for &i in sample_corner(&d, &mut sampler).members() {
                hits[i] += 1;
            }
        }
        for i in 0..n {
            let target = q.q()[i];
            let sigma = (target * (1.0 - target) / DRAWS as f64).sqrt();
            let freq = hits[i] as f64 / DRAWS as f64;
            if sigma > 0.0 {
                largest_z = largest_z.max((freq - target).abs() / sigma);
            }
            if (freq - target).abs() > 3.0 * sigma + 1e-12 {
                outside.push(format!("vector {v} arm {i}: {freq:.5} vs {target:.5}"));
            }
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        outside.is_empty() && secs < 30.0,
        format!(
            "1000 vectors, max reconstruction error {worst:.1e}; {} of {checked} marginals outside 3 sigma{}; largest |z| {largest_z:.2}; {secs:.2}s",
            outside.len(),
            if outside.is_empty() { String::new() } else { format!(" ({})", outside.join(", ")) }
        ),
    )
}

fn canonical_spec(dir: PathBuf) -> ExperimentSpec {
    ExperimentSpec {
        environment: EnvironmentConfig {
            n: 8,
            k: 2,
            horizon: 20_000,
            availability: vec![0.8; 8],
            loss: LossGeneratorSpec::ConstantGap {
                means: evenly_spaced_means(8, 0.1, 0.9),
                bernoulli: true,
            },
            seed: 0,
        },
        estimator_variant: EstimatorKind::Exact,
        mc_sample_cap: 2000,
        mc_uncapped: false,
        doubling_trick: false,
        seeds: (1..=20).collect(),
        output_dir: dir,
        checkpoint_every: None,
    }
}

fn trace_files(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.starts_with("trace_seed_").then(|| (name.clone(), fs::read(dir.join(&name)).unwrap()))
        })
        .collect()
}

fn a3_a8_regret_and_determinism() -> (Outcome, Outcome) {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let spec = canonical_spec(first.path().to_path_buf());

    let clock = Instant::now();
    let report = run_experiment(&spec, 1, None).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let v = sublinearity_check(&report).unwrap();
    let a3 = outcome(
        v.passed() && secs < 300.0,
        format!(
            "mean R_T = {:.2} (> 0: {}); R/t at T/4, T/2, T = {:.5}, {:.5}, {:.5} (decreasing: {}); ceiling {:.1} (below: {}); {secs:.1}s",
            v.mean_regret, v.positive, v.ratios[0], v.ratios[1], v.ratios[2], v.ratio_decreasing, v.ceiling, v.below_ceiling
        ),
    );

    run_experiment(&spec, 1, Some(second.path())).unwrap();
    let a = trace_files(first.path());
    let b = trace_files(second.path());
    let summaries_equal =
        fs::read(first.path().join("summary.json")).unwrap() == fs::read(second.path().join("summary.json")).unwrap();
    let a8 = outcome(
        a.len() == 20 && a == b && summaries_equal,
        format!(
            "{} trace CSVs byte-identical: {}; summary identical: {summaries_equal}",
            a.len(),
            a == b
        ),
    );
    (a3, a8)
}

fn a4_estimator_agreement() -> Outcome {
    const N: usize = 8;
    const K: usize = 2;
    const T: u64 = 1000;
    let delta: f64 = 0.01;
    let bound = 4.0 * (K * N) as f64 * ((2.0 * N as f64 / delta).ln() / T as f64).sqrt();
    let mut rng = SeededRng::new(404);
    let mut mc_rng = SeededRng::with_stream(404, 1);
    let mut passes = 0;
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let mut est = AvailabilityEstimate::new(N);
        for _ in 0..T {
            est.record(&random_set(&mut rng, N, 0.8, 0));
        }
        let rates = est.rates();
        let w = random_weights(&mut rng, N, 2.0);
        let exact = exact_joint_from_rates(&rates, &w, K, 16).unwrap();
        let mc = monte_carlo_joint_from_rates(&rates, &w, K, T as usize, &mut mc_rng).unwrap();
        let gap = exact.iter().zip(&mc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(gap);
        if gap <= bound {
            passes += 1;
        }
    }
    outcome(
        passes >= 95,
        format!("{passes}/100 within {bound:.4}; largest gap {worst:.4}"),
    )
}

fn a5_unbiasedness() -> Outcome {
    const REPS: usize = 100_000;
    let rates = [0.5, 0.7, 0.9];
    let losses = [0.3, 0.6, 0.9];
    let w = WeightVector::from_linear(&[1.0, 2.0, 0.5]).unwrap();
    let q_true = exact_joint_from_rates(&rates, &w, 1, 16).unwrap();
    let mut rng = SeededRng::new(505);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..REPS {
        let s: Vec<usize> = (0..3).filter(|&i| rng.bernoulli(rates[i])).collect();
        if s.is_empty() {
            continue;
        }
        let s = AvailabilitySet::new(s, 3).unwrap();
        let q = scaled_probabilities(&w, &s, 1).unwrap();
        let d = decompose(&q).unwrap();
        for &i in sample_corner(&d, &mut rng).members() {
            let est = estimated_loss(losses[i], q_true[i], 0.0);
            sum[i] += est;
            sum_sq[i] += est * est;
        }
    }
    let mut detail = Vec::new();
    let mut pass = true;
    for i in 0..3 {
        let mean = sum[i] / REPS as f64;
        let var = sum_sq[i] / REPS as f64 - mean * mean;
        let band = 3.0 * (var / REPS as f64).sqrt();
        pass &= (mean - losses[i]).abs() <= band;
        detail.push(format!("arm {i}: {mean:.4} vs {:.1} (band {band:.4})", losses[i]));
    }
    outcome(pass, detail.join("; "))
}

/// All k-subsets of `members` as sorted vectors (the whole set when it has
/// at most k members), by bitmask.
fn subsets_by_mask(members: &[usize], k: usize) -> Vec<Vec<usize>> {
    if members.len() <= k {
        return vec![members.to_vec()];
    }
    (0u32..1 << members.len())
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..members.len()).filter(|b| m >> b & 1 == 1).map(|b| members[b]).collect())
        .collect()
}

fn a6_oracle_exactness() -> Outcome {
    let clock = Instant::now();
    let mut rng = SeededRng::new(606);
    for instance in 0..50 {
        let n = 2 + random_index(&mut rng, 3);
        let k = 1 + random_index(&mut rng, 2.min(n));
        let horizon = 1 + random_index(&mut rng, 20) as u64;
        let mut losses = LossMatrix::new(n);
        let mut records = Vec::new();
        for t in 1..=horizon {
            // dyadic losses keep every sum exact in any order
            let l: Vec<f64> = (0..n).map(|_| random_index(&mut rng, 17) as f64 / 16.0).collect();
            let s = random_set(&mut rng, n, 0.6, 0);
            let chosen: Vec<usize> = s.indices().iter().copied().take(k).collect();
            records.push(RoundRecord {
                t,
                losses_incurred: chosen.iter().map(|&i| l[i]).collect(),
                chosen,
                degenerate: s.len() < k,
                available: s,
                lambda: 1.0,
            });
            losses.push_round(&l);
        }

        let mut sets: Vec<&AvailabilitySet> = records.iter().map(|r| &r.available).filter(|s| !s.is_empty()).collect();
        sets.sort();
        sets.dedup();
        let options: Vec<Vec<Vec<usize>>> = sets.iter().map(|s| subsets_by_mask(s.indices(), k)).collect();
        let mut digits = vec![0usize; sets.len()];
        let mut best = if sets.is_empty() { 0.0 } else { f64::INFINITY };
        loop {
            if sets.is_empty() {
                break;
            }
            let total: f64 = records
                .iter()
                .filter(|r| !r.available.is_empty())
                .map(|r| {
                    let j = sets.iter().position(|s| *s == &r.available).unwrap();
                    options[j][digits[j]].iter().map(|&i| losses.round(r.t)[i]).sum::<f64>()
                })
                .sum();
            best = best.min(total);
            let mut pos = 0;
            while pos < digits.len() {
                digits[pos] += 1;
                if digits[pos] < options[pos].len() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == digits.len() {
                break;
            }
        }
        let policy = best_policy(&records, &losses, k);
        let separable = policy_loss(&records, &policy, &losses).unwrap();
        if separable != best {
            return outcome(
                false,
                format!("instance {instance} (n={n}, k={k}, T={horizon}): {separable} vs exhaustive {best}"),
            );
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(secs < 10.0, format!("50 instances equal to joint exhaustive search; {secs:.2}s"))
}

fn a7_single_play_reduction() -> Outcome {
    let mut rng = SeededRng::new(707);
    for instance in 0..100 {
        let n = 2 + random_index(&mut rng, 11);
        let horizon = 1000;
        let schedule = ParameterSchedule::auto(n, 1, Horizon::Known(horizon), EstimatorKind::Exact).unwrap();
        let mut state = PolicyState::new(n, 1, schedule, instance).unwrap();
        for _ in 0..random_index(&mut rng, 60) {
            let s = random_set(&mut rng, n, 0.6, 0);
            let r = state.select(&s).unwrap();
            let fb = LossVector::new(r.chosen.members().iter().map(|&i| (i, rng.uniform()))).unwrap();
            state.feedback(&fb).unwrap();
        }
        let s = random_set(&mut rng, n, 0.6, 1);
        let expected = normalize_over_set(state.weights(), &s).unwrap();
        let marginals = state.marginals(&s).unwrap();
        let direct = scaled_probabilities(state.weights(), &s, 1).unwrap();
        if marginals.q() != expected.as_slice() || direct.q() != expected.as_slice() {
            return outcome(
                false,
                format!("state {instance}: {:?} vs {:?}", marginals.q(), expected),
            );
        }
        let d = decompose(&marginals).unwrap();
        if d.terms().iter().any(|(c, corner)| corner.len() != 1 || *c != expected[corner.members()[0]]) {
            return outcome(false, format!("state {instance}: decomposition coefficients differ"));
        }
    }
    outcome(true, "100 random states: marginals equal normalized available weights exactly")
}

fn main() {
    let mut results: Vec<(&str, &str, Outcome)> = vec![
        ("A1", "projection correctness", a1_projection()),
        ("A2", "decomposition correctness", a2_decomposition()),
    ];
    let (a3, a8) = a3_a8_regret_and_determinism();
    results.push(("A3", "sublinear regret", a3));
    results.push(("A4", "estimator agreement", a4_estimator_agreement()));
    results.push(("A5", "loss-estimate unbiasedness", a5_unbiasedness()));
    results.push(("A6", "oracle exactness", a6_oracle_exactness()));
    results.push(("A7", "k = 1 reduction", a7_single_play_reduction()));
    results.push(("A8", "determinism", a8));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
