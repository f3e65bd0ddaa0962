//! Acceptance suite. Every criterion prints one PASS/FAIL line; the binary
//! exits nonzero when any criterion fails.

#[macro_use]
mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use aps_core::audit::{audit_correct, neyman_objective, project_simplex, sample_audit_set};
use aps_core::checkpoint::RunControl;
use aps_core::engine::{
    continuous_allocation, run_round, run_simulation, AllocationRule, ApsRun, EngineConfig, RoundState, Seeds,
};
use aps_core::evaluation::{
    decompose_error, histogram, jsd, run_baseline, run_reference, wilson_interval, BaselineConfig, BaselineKind,
    Trajectory,
};
use aps_core::oracle::CountingOracle;
use aps_core::rng::keyed_rng;
use aps_core::stratification::{
    audit_budget, core_stratum_count, prototype_rate, stratify, tail_count, ScheduleConfig,
};
use common::World;
use rand::Rng;

const K: usize = 5;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn final_jsd(method: &Trajectory, reference: &Trajectory) -> f64 {
    jsd(&method.last().unwrap().distribution, &reference.last().unwrap().distribution).unwrap()
}

fn schedule_exactness() -> Verdict {
    let start = Instant::now();
    let s = ScheduleConfig::default();
    let checks = [
        ("alpha(5000)", (prototype_rate(5000, &s) - 0.15).abs() <= 1e-12),
        ("M_core(10000)", core_stratum_count(10_000, &s) == 14),
        ("M_out(5000)", tail_count(5000, &s) == 250),
        ("M_out(10000)", tail_count(10_000, &s) == 330),
        ("A_t(5000)", audit_budget(5000, &s) == 250),
    ];
    let elapsed = start.elapsed();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Verdict::new(
        failed.is_empty() && elapsed < Duration::from_secs(1),
        format!("mismatches {failed:?}, {elapsed:.2?}"),
    )
}

/// Tails and audits from the schedule formulas, written out independently.
fn expected_fixed_calls(n: usize) -> (usize, usize) {
    let growth = (n as f64 / 5000.0).max(1.0).powf(0.4);
    let tails = (0.05 * 5000.0 * growth - 1e-9).ceil() as usize;
    let audits = ((0.05 * 5000.0 * growth + 1e-9).floor() as usize).max(1);
    (tails, audits)
}

fn call_accounting() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    let mut prototype_calls = Vec::new();
    let mut strata = Vec::new();
    for n in [2000usize, 20_000] {
        let world = World::new(n, 8, 42);
        let counting = CountingOracle::new(world.kernel.clone());
        let mut inputs = inputs!(world);
        inputs.oracle = &counting;
        let run = run_simulation(&inputs, &EngineConfig::default(), Seeds::new(42), &RunControl::default()).unwrap();
        let (tails, audits) = expected_fixed_calls(n);
        let core: usize = run.records.iter().map(|r| r.budgets.iter().sum::<usize>()).sum();
        let expected = core + 8 * (tails + audits);
        let recorded = run.total_calls().total() as usize;
        let answered = counting.calls() as usize;
        ok &= recorded == expected && answered == expected;
        details.push(format!("n={n}: recorded {recorded}, oracle {answered}, expected {expected}"));
        prototype_calls.push(core as f64);
        strata.push(run.strata.n_strata() as f64);
    }
    let ratio = prototype_calls[1] / prototype_calls[0];
    let target = 10f64.powf(1.0 - 0.6);
    // Per-round rounding slack: the ceiling plus one unit per stratum, on each side.
    let slack = (strata[0] + 1.0) * 8.0 / prototype_calls[0] + (strata[1] + 1.0) * 8.0 / prototype_calls[1];
    let ratio_ok = (ratio / target - 1.0).abs() <= slack;
    details.push(format!("prototype ratio {ratio:.4} vs {target:.4} (relative slack {slack:.4})"));
    Verdict::new(ok && ratio_ok, details.join("; "))
}

struct FrozenRound {
    soft: Vec<f64>,
    predicted: Vec<u16>,
    frames: Vec<Vec<usize>>,
    truth: Vec<u16>,
    schedule: ScheduleConfig,
}

/// Round-1 ledger of a 400-agent run where every queried agent holds its
/// true label and a `corrupt` share of each correction frame holds a wrong
/// one-hot vector.
fn frozen_round(corrupt: f64) -> FrozenRound {
    let n = 400;
    let world = World::new(n, 1, 7);
    let inputs = inputs!(world);
    let schedule = ScheduleConfig { baseline_n: n, ..ScheduleConfig::default() };
    let cfg = EngineConfig { schedule: schedule.clone(), ..EngineConfig::default() };
    let strata = stratify(&world.population, &schedule, 7).unwrap();
    let round = run_round(&inputs, &strata, &RoundState::initial(strata.n_strata(), None), 1, &cfg, Seeds::new(7)).unwrap();
    let truth = run_reference(&inputs, 7, &RunControl::default()).unwrap().rounds[0].hard.clone();
    let frames: Vec<Vec<usize>> = strata
        .strata
        .iter()
        .zip(&round.record.prototypes)
        .map(|(members, protos)| members.iter().copied().filter(|i| !protos.contains(i)).collect())
        .collect();
    let mut soft = vec![0.0; n * K];
    let mut predicted = truth.clone();
    let mut rng = keyed_rng(99, &[corrupt.to_bits()]);
    for frame in &frames {
        for &i in frame {
            if rng.random::<f64>() < corrupt {
                predicted[i] = ((truth[i] as usize + rng.random_range(1..K)) % K) as u16;
            }
        }
    }
    for i in 0..n {
        soft[i * K + predicted[i] as usize] = 1.0;
    }
    FrozenRound { soft, predicted, frames, truth, schedule }
}

struct Resampled {
    difference: Vec<Vec<f64>>,
    horvitz_thompson: Vec<Vec<f64>>,
}

fn resample(frozen: &FrozenRound, draws: usize) -> Resampled {
    let cfg = EngineConfig::default().audit;
    let n = frozen.truth.len();
    let budget = audit_budget(n, &frozen.schedule);
    let in_frame: Vec<bool> = {
        let mut v = vec![false; n];
        frozen.frames.iter().flatten().for_each(|&i| v[i] = true);
        v
    };
    let mut difference = Vec::with_capacity(draws);
    let mut horvitz_thompson = Vec::with_capacity(draws);
    for r in 0..draws {
        let design = sample_audit_set(&frozen.frames, budget, &frozen.predicted, K, &cfg, 10_000 + r as u64, 1).unwrap();
        let labels: Vec<u16> = design.audited.iter().map(|&i| frozen.truth[i]).collect();
        difference.push(audit_correct(&frozen.soft, K, &design.audited, &labels, &design.psi).unwrap());
        let mut ht = [0.0; K];
        for i in (0..n).filter(|&i| !in_frame[i]) {
            ht[frozen.truth[i] as usize] += 1.0;
        }
        for ((&_, &l), &p) in design.audited.iter().zip(&labels).zip(&design.psi) {
            ht[l as usize] += 1.0 / p;
        }
        horvitz_thompson.push(ht.iter().map(|v| v / n as f64).collect());
    }
    Resampled { difference, horvitz_thompson }
}

fn mean_var(samples: &[Vec<f64>], y: usize) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().map(|s| s[y]).sum::<f64>() / m;
    let var = samples.iter().map(|s| (s[y] - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var)
}

fn design_unbiasedness() -> Verdict {
    let start = Instant::now();
    let frozen = frozen_round(0.5);
    let draws = 2000;
    let est = resample(&frozen, draws).difference;
    let target = histogram(&frozen.truth, K);
    let mut worst = 0.0f64;
    let mut ok = true;
    for y in 0..K {
        let (mean, var) = mean_var(&est, y);
        let se = (var / draws as f64).sqrt();
        let dev = (mean - target[y]).abs();
        ok &= dev <= 3.0 * se || dev <= 1e-12;
        worst = worst.max(if se > 0.0 { dev / se } else { 0.0 });
    }
    let elapsed = start.elapsed();
    Verdict::new(
        ok && elapsed < Duration::from_secs(60),
        format!("largest deviation {worst:.2} SE over {draws} resamples, {elapsed:.2?}"),
    )
}

fn variance_dominance() -> Verdict {
    let frozen = frozen_round(0.1);
    let draws = 2000;
    let r = resample(&frozen, draws);
    let target = histogram(&frozen.truth, K);
    let mut ok = true;
    let mut parts = Vec::new();
    for y in (0..K).filter(|&y| target[y] >= 0.05) {
        let (_, v_diff) = mean_var(&r.difference, y);
        let (_, v_ht) = mean_var(&r.horvitz_thompson, y);
        ok &= v_diff < v_ht;
        parts.push(format!("y{}: {v_diff:.2e} < {v_ht:.2e}", y + 1));
    }
    Verdict::new(ok, parts.join(", "))
}

fn full_budget_degeneracy() -> Verdict {
    let world = World::new(300, 4, 11);
    let inputs = inputs!(world);
    let cfg = EngineConfig {
        schedule: ScheduleConfig { fixed_rate: Some(1.0), ..ScheduleConfig::default() },
        ..EngineConfig::default()
    };
    let run = run_simulation(&inputs, &cfg, Seeds::new(11), &RunControl::default()).unwrap();
    let reference = run_reference(&inputs, 11, &RunControl::default()).unwrap();
    let mut ok = run.records.len() == 4;
    for ((rec, hard), refr) in run.records.iter().zip(&run.hard).zip(&reference.rounds) {
        let empirical = histogram(&refr.hard, K);
        ok &= hard == &refr.hard;
        ok &= rec.audit.ids.is_empty();
        ok &= rec.unprojected == empirical && rec.projected == empirical;
    }
    Verdict::new(ok, format!("{} rounds compared against the brute-force rollout", run.records.len()))
}

struct Comparison {
    aps: Vec<ApsRun>,
    detail: String,
    passed: bool,
}

fn baseline_ordering() -> Comparison {
    let seeds = [1u64, 2, 3];
    let mut aps_jsd = Vec::new();
    let mut base_jsd = vec![Vec::new(); BaselineKind::ALL.len()];
    let mut runs = Vec::new();
    for &seed in &seeds {
        let world = World::new(2000, 8, seed);
        let inputs = inputs!(world);
        let rc = RunControl::default();
        let reference = run_reference(&inputs, seed, &rc).unwrap();
        let run = run_simulation(&inputs, &EngineConfig::default(), Seeds::new(seed), &rc).unwrap();
        let aps = Trajectory::from_aps(&run, K, None);
        let budget = aps.total_calls().total() as usize;
        aps_jsd.push(final_jsd(&aps, &reference));
        for (b, kind) in BaselineKind::ALL.into_iter().enumerate() {
            let cfg = BaselineConfig { budget, ..BaselineConfig::default() };
            let traj = run_baseline(kind, &inputs, &cfg, seed, &rc).unwrap();
            base_jsd[b].push(final_jsd(&traj, &reference));
        }
        runs.push(run);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let aps_mean = mean(&aps_jsd);
    let mut passed = true;
    let mut parts = vec![format!("aps {aps_mean:.5}")];
    for (b, kind) in BaselineKind::ALL.into_iter().enumerate() {
        let m = mean(&base_jsd[b]);
        passed &= aps_mean < m;
        parts.push(format!("{} {m:.5}", kind.name()));
    }
    Comparison { aps: runs, detail: format!("mean final JSD: {}", parts.join(", ")), passed }
}

fn allocation_ablation() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for rate in [0.05, 0.15, 0.30] {
        let mut adaptive = 0.0;
        let mut proportional = 0.0;
        let mut calls = (0u64, 0u64);
        for seed in [1u64, 2] {
            let world = World::new(2000, 8, seed);
            let inputs = inputs!(world);
            let rc = RunControl::default();
            let reference = run_reference(&inputs, seed, &rc).unwrap();
            let base = EngineConfig {
                schedule: ScheduleConfig { fixed_rate: Some(rate), ..ScheduleConfig::default() },
                ..EngineConfig::default()
            };
            for (rule, acc, c) in [
                (AllocationRule::Adaptive, &mut adaptive, &mut calls.0),
                (AllocationRule::Proportional, &mut proportional, &mut calls.1),
            ] {
                let cfg = EngineConfig { allocation: rule, ..base.clone() };
                let run = run_simulation(&inputs, &cfg, Seeds::new(seed), &rc).unwrap();
                *c += run.total_calls().total();
                *acc += final_jsd(&Trajectory::from_aps(&run, K, None), &reference) / 2.0;
            }
        }
        ok &= adaptive <= proportional;
        parts.push(format!(
            "rate {rate}: adaptive {adaptive:.5} ({} calls) vs proportional {proportional:.5} ({} calls)",
            calls.0, calls.1
        ));
    }
    Verdict::new(ok, parts.join("; "))
}

fn tail_protection(runs: &[ApsRun]) -> Verdict {
    let mut leaks = 0usize;
    let mut soft_violations = 0usize;
    let mut scanned = 0usize;
    for run in runs {
        for rec in &run.records {
            let is_tail = |i: &usize| rec.tails.binary_search(i).is_ok();
            for s in rec.supports.as_ref().expect("supports are recorded") {
                scanned += 1;
                leaks += usize::from(is_tail(&s.agent)) + s.supports.iter().filter(|j| is_tail(j)).count();
            }
            leaks += rec.prototypes.iter().flatten().filter(|i| is_tail(i)).count();
            leaks += rec.audit.ids.iter().filter(|i| is_tail(i)).count();
            for v in &rec.tail_soft {
                let ones = v.iter().filter(|&&x| x == 1.0).count();
                let zeros = v.iter().filter(|&&x| x == 0.0).count();
                soft_violations += usize::from(!(ones == 1 && zeros == v.len() - 1));
            }
        }
    }
    Verdict::new(
        leaks == 0 && soft_violations == 0 && scanned > 0,
        format!("{scanned} support lists scanned, {leaks} tail leaks, {soft_violations} non-one-hot tail vectors"),
    )
}

fn neyman_optimality() -> Verdict {
    let mut rng = keyed_rng(2024, &[9]);
    let tau = 1e-6;
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for _ in 0..200 {
        let m = rng.random_range(2..20);
        let sizes: Vec<usize> = (0..m).map(|_| rng.random_range(1..5000)).collect();
        let risks: Vec<f64> = (0..m)
            .map(|_| if rng.random::<f64>() < 0.1 { 0.0 } else { rng.random_range(0.0..3.0) })
            .collect();
        let total = sizes.iter().sum::<usize>() as f64 * rng.random_range(0.01..0.5);
        let best = continuous_allocation(total, &sizes, &risks, tau);
        let best_obj = neyman_objective(&sizes, &risks, tau, &best);
        for _ in 0..100 {
            let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let t: f64 = rng.random_range(0.01..1.0);
            let other: Vec<f64> = best.iter().zip(&raw).map(|(b, r)| (1.0 - t) * b + t * total * r / s).collect();
            let obj = neyman_objective(&sizes, &risks, tau, &other);
            worst = worst.min(obj / best_obj);
            failures += usize::from(best_obj > obj);
        }
    }
    Verdict::new(failures == 0, format!("{failures} violations, smallest perturbed/optimal ratio {worst:.6}"))
}

fn error_decomposition() -> Verdict {
    let n = 500;
    let world = World::new(n, 4, 42);
    let mut rng = keyed_rng(42, &[77]);
    let init: Vec<u16> = (0..n).map(|_| rng.random_range(0..K as u16)).collect();
    let inputs = inputs!(world, Some(&init));
    let rc = RunControl::default();
    let reference = run_reference(&inputs, 42, &rc).unwrap();
    let run = run_simulation(&inputs, &EngineConfig::default(), Seeds::new(42), &rc).unwrap();
    let aps = Trajectory::from_aps(&run, K, Some(&init));
    let d = decompose_error(&aps, &reference, &inputs).unwrap();
    let bound = d.rounds.iter().all(|r| r.total_error <= r.estimation_error + r.context_mismatch + 1e-9);
    let first = d.rounds[0].context_mismatch;
    let mismatch: Vec<String> = d.rounds.iter().map(|r| format!("{:.4}", r.context_mismatch)).collect();
    Verdict::new(
        bound && first == 0.0 && d.rounds.len() == 4,
        format!("triangle bound every round: {bound}; context mismatch per round [{}]", mismatch.join(", ")),
    )
}

fn metrics() -> Verdict {
    let mut ok = true;
    ok &= jsd(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap().abs() <= 1e-4;
    ok &= (jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() <= 1e-4;
    ok &= (jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.31128).abs() <= 1e-4;
    let (lo, hi) = wilson_interval(50, 100, 0.95).unwrap();
    ok &= (lo - 0.4038).abs() <= 1e-4 && (hi - 0.5962).abs() <= 1e-4;
    ok &= wilson_interval(0, 40, 0.95).unwrap().0 == 0.0;
    let mut rng = keyed_rng(5, &[11]);
    let mut bad = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..12);
        let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = project_simplex(&v);
        let again = project_simplex(&p);
        let sums = (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        let idempotent = p.iter().zip(&again).all(|(a, b)| (a - b).abs() <= 1e-12);
        bad += usize::from(!(sums && idempotent && p.iter().all(|&x| x >= 0.0)));
    }
    Verdict::new(ok && bad == 0, format!("examples ok: {ok}; {bad} projection violations in 10000 vectors"))
}

fn determinism_and_resume() -> Verdict {
    let world = World::new(600, 8, 3);
    let inputs = inputs!(world);
    let cfg = EngineConfig::default();
    let summary = |run: &ApsRun| serde_json::to_vec(&(&run.records, &run.hard, &run.soft)).unwrap();
    let straight_dir = tempfile::tempdir().unwrap();
    let straight = run_simulation(&inputs, &cfg, Seeds::new(3), &RunControl::in_dir(straight_dir.path(), "h")).unwrap();
    let again = run_simulation(&inputs, &cfg, Seeds::new(3), &RunControl::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let halted = RunControl { stop_after: Some(4), ..RunControl::in_dir(dir.path(), "h") };
    let partial = run_simulation(&inputs, &cfg, Seeds::new(3), &halted).unwrap();
    let resume = RunControl { resume: true, ..RunControl::in_dir(dir.path(), "h") };
    let resumed = run_simulation(&inputs, &cfg, Seeds::new(3), &resume).unwrap();

    let ref_dir = tempfile::tempdir().unwrap();
    let ref_full = run_reference(&inputs, 3, &RunControl::default()).unwrap();
    run_reference(&inputs, 3, &RunControl { stop_after: Some(3), ..RunControl::in_dir(ref_dir.path(), "r") }).unwrap();
    let ref_resumed =
        run_reference(&inputs, 3, &RunControl { resume: true, ..RunControl::in_dir(ref_dir.path(), "r") }).unwrap();

    let base_dir = tempfile::tempdir().unwrap();
    let bcfg = BaselineConfig { budget: 2400, ..BaselineConfig::default() };
    let kind = BaselineKind::LabelPropagation;
    let base_full = run_baseline(kind, &inputs, &bcfg, 3, &RunControl::default()).unwrap();
    run_baseline(kind, &inputs, &bcfg, 3, &RunControl { stop_after: Some(5), ..RunControl::in_dir(base_dir.path(), "b") })
        .unwrap();
    let base_resumed =
        run_baseline(kind, &inputs, &bcfg, 3, &RunControl { resume: true, ..RunControl::in_dir(base_dir.path(), "b") })
            .unwrap();

    let json = |t: &Trajectory| serde_json::to_vec(t).unwrap();
    let aps_ok = partial.completed_rounds() == 4 && summary(&straight) == summary(&resumed) && summary(&straight) == summary(&again);
    let ref_ok = json(&ref_full) == json(&ref_resumed);
    let base_ok = json(&base_full) == json(&base_resumed);
    Verdict::new(
        aps_ok && ref_ok && base_ok,
        format!("aps resumed identical: {aps_ok}; reference: {ref_ok}; baseline: {base_ok}"),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, v: Verdict| {
        println!("criterion {id:>2} {} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, v.detail);
        failures += usize::from(!v.passed);
    };
    report(1, "schedule exactness", schedule_exactness());
    report(2, "call accounting", call_accounting());
    report(3, "design unbiasedness", design_unbiasedness());
    report(4, "variance dominance", variance_dominance());
    report(5, "full-budget degeneracy", full_budget_degeneracy());
    let started = Instant::now();
    let cmp = baseline_ordering();
    let elapsed = started.elapsed();
    report(
        6,
        "same-budget baseline ordering",
        Verdict::new(cmp.passed && elapsed < Duration::from_secs(600), format!("{} ({elapsed:.1?})", cmp.detail)),
    );
    report(7, "adaptive vs proportional allocation", allocation_ablation());
    report(8, "tail protection", tail_protection(&cmp.aps));
    report(9, "continuous allocation optimality", neyman_optimality());
    report(10, "error decomposition", error_decomposition());
    report(11, "metrics and projection", metrics());
    report(12, "determinism and resume", determinism_and_resume());
    if failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
