//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test --release -p ota-consensus --test acceptance`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ota_consensus::analysis::{estimate_conditional_moments, expected_laplacian};
use ota_consensus::channel::{draw_round, received_power_expanded, ChannelModel, NegativePolicy};
use ota_consensus::graph::{generate_sampled_sequence, PhysicalTopology, TopologySequence};
use ota_consensus::harness::{
    self, check_connectivity, compare, BoundsOutcome, Resolved, RunOptions, RunReport, Scenario,
};
use ota_consensus::protocol::{
    step, validate_schedule, StepsizeRule, StepsizeSchedule, ValidationMode,
};
use ota_consensus::rng::{stream, StreamDomain};
use rand::Rng;

/// Seed shared by every Monte Carlo check that is not a scenario run.
const VALIDATION_SEED: u64 = 20_240_601;

/// Frozen from a single pilot run of the baseline scenario (97 of 100 trials
/// exceeded `V(0)`; trial-mean `V` never fell below `V(0)`).
const BASELINE_MIN_EXCEEDING: usize = 90;
const BASELINE_DECAY_FLOOR: f64 = 0.5;

struct Check {
    label: String,
    ok: bool,
}

#[derive(Default)]
struct Criterion {
    checks: Vec<Check>,
}

impl Criterion {
    fn check(&mut self, ok: bool, label: impl Into<String>) {
        self.checks.push(Check {
            label: label.into(),
            ok,
        });
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }
}

fn scenario(file: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", file]
        .iter()
        .collect();
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn resolve(sc: &Scenario) -> Resolved {
    sc.resolve().expect("scenario resolves")
}

fn full_traces(mut sc: Scenario) -> Scenario {
    sc.output.full_traces = true;
    sc
}

/// Non-overlapping block means of `series[1..]`.
fn block_means(series: &[f64], block: usize) -> Vec<f64> {
    series[1..]
        .chunks(block)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn rises(blocks: &[f64]) -> Vec<usize> {
    blocks
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, _)| i + 1)
        .collect()
}

fn within(c: &mut Criterion, started: Instant, limit: Duration) {
    let took = started.elapsed();
    c.check(
        took < limit,
        format!("runtime {:.1}s < {}s", took.as_secs_f64(), limit.as_secs()),
    );
}

fn random_model(n: usize, rng: &mut impl Rng) -> ChannelModel {
    let mut lambda = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(0.2..3.0);
            lambda[(i, j)] = v;
            lambda[(j, i)] = v;
        }
    }
    let p = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();
    let sigma2 = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
    ChannelModel::new(lambda, sigma2, rng.random_range(0.5..2.0), p).unwrap()
}

fn algebraic_identities() -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let mut rng = stream(VALIDATION_SEED, StreamDomain::Validation, 1);

    let graphs = [
        PhysicalTopology::complete(5).unwrap(),
        PhysicalTopology::ring(10).unwrap(),
        PhysicalTopology::path(7).unwrap(),
        PhysicalTopology::bundled_fifty(),
    ];
    let mut worst = 0.0f64;
    for topo in &graphs {
        for _ in 0..5 {
            let model = random_model(topo.n_agents(), &mut rng);
            worst = worst.max(
                expected_laplacian(&model, topo)
                    .unwrap()
                    .zero_sum_residual(),
            );
        }
    }
    c.check(
        worst <= 1e-12,
        format!("expected Laplacian row/column sums {worst:.2e} <= 1e-12"),
    );

    let topo = PhysicalTopology::complete(5).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let model = random_model(5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..10.0)).collect();
        let draw = draw_round(&model, &topo, &mut rng).unwrap();
        for i in 0..5 {
            let b = received_power_expanded(&model, &draw, &x, i, NegativePolicy::Clamp).unwrap();
            worst = worst.max((b.terms_sum() - b.power).abs() / b.power.max(f64::MIN_POSITIVE));
        }
    }
    c.check(
        worst <= 1e-9,
        format!("direct vs expanded power, 1e4 draws: rel {worst:.2e} <= 1e-9"),
    );

    let r = resolve(&scenario("ring10.json"));
    let rule = match &r.schedule {
        Some(StepsizeSchedule::Common(rule)) => rule.clone(),
        _ => unreachable!("ring scenario uses a common rule"),
    };
    let l_bar = expected_laplacian(&r.model, r.seq.base()).unwrap().l_bar;
    let mut state = r.initial.clone();
    let mut trial_rng = stream(VALIDATION_SEED, StreamDomain::Trial, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let alpha = rule.value(state.k).unwrap();
        let out = step(
            &r.model,
            &r.seq,
            &rule,
            &state,
            NegativePolicy::Clamp,
            &mut trial_rng,
        )
        .unwrap();
        let x = DMatrix::from_column_slice(state.x.len(), 1, &state.x);
        let drift = &l_bar * &x;
        let scale = state
            .x
            .iter()
            .chain(&out.noise.w)
            .fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..state.x.len() {
            let compact = state.x[i] - alpha * drift[(i, 0)] + alpha * out.noise.w[i];
            worst = worst.max((compact - out.state.x[i]).abs() / scale);
        }
        state = out.state;
    }
    c.check(
        worst <= 1e-12,
        format!("compact-form residual over 1e3 steps {worst:.2e} <= 1e-12"),
    );
    within(&mut c, started, Duration::from_secs(10));
    c
}

fn moment_tests() -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let model = ChannelModel::uniform(5, 1.0, 0.1, 1.0, 0.5).unwrap();
    let topo = PhysicalTopology::complete(5).unwrap();
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut rng = stream(VALIDATION_SEED, StreamDomain::Validation, 2);
    let report = estimate_conditional_moments(&model, &topo, &x, 1_000_000, &mut rng).unwrap();

    let group = |prefix: &'static str| {
        report
            .estimates
            .iter()
            .filter(move |e| e.name.starts_with(prefix))
    };
    let power_ok = group("power_").all(|e| e.pass && e.rel_error <= 0.01);
    let worst_power = group("power_").map(|e| e.rel_error).fold(0.0, f64::max);
    c.check(
        power_ok,
        format!(
            "E|y_i|² within 3 SE and 1% (worst {:.3}%)",
            100.0 * worst_power
        ),
    );
    for (prefix, label) in [
        ("v_", "E[v_i] = 0"),
        ("delta_l_", "E[ΔL] = 0 entrywise"),
        ("gamma_sq_", "E[Γ²_ij] = p_i(1-p_j) + p_j(1-p_i)"),
    ] {
        let failed: Vec<&str> = group(prefix)
            .filter(|e| !e.pass)
            .map(|e| e.name.as_str())
            .collect();
        c.check(
            failed.is_empty(),
            format!("{label} within 3 SE (failed: {failed:?})"),
        );
    }
    let fading_ok = group("fading_pair_").all(|e| e.pass && e.rel_error <= 0.02);
    let worst_fading = group("fading_pair_")
        .map(|e| e.rel_error)
        .fold(0.0, f64::max);
    c.check(
        fading_ok,
        format!(
            "½Λ_ijΛ_il fading moment within 3 SE and 2% (worst {:.3}%)",
            100.0 * worst_fading
        ),
    );
    within(&mut c, started, Duration::from_secs(120));
    c
}

fn ring_run() -> (RunReport, Duration) {
    let started = Instant::now();
    let r = resolve(&full_traces(scenario("ring10.json")));
    let opts = RunOptions {
        keep_traces: false,
        compute_bounds: true,
    };
    let report = harness::run(&r, &opts).expect("ring run");
    (report, started.elapsed())
}

fn weak_consensus(report: &RunReport, took: Duration) -> Criterion {
    let mut c = Criterion::default();
    let a = &report.aggregate;
    c.check(
        a.final_mean_v < 0.05 * a.initial_v,
        format!(
            "trial-mean V(K) {:.4} < 0.05 V(0) = {:.4}",
            a.final_mean_v,
            0.05 * a.initial_v
        ),
    );
    let blocks = block_means(&a.mean_v, 500);
    let up = rises(&blocks);
    let detail: Vec<String> = up
        .iter()
        .map(|&b| format!("block {b}: {:.3} -> {:.3}", blocks[b - 1], blocks[b]))
        .collect();
    c.check(
        up.is_empty(),
        format!(
            "500-step block means of trial-mean V nonincreasing ({} rises: {})",
            up.len(),
            detail.join(", ")
        ),
    );
    c.check(
        took < Duration::from_secs(300),
        format!("runtime {:.1}s < 300s", took.as_secs_f64()),
    );
    c
}

fn mean_preservation(report: &RunReport) -> Criterion {
    let mut c = Criterion::default();
    let a = &report.aggregate;
    let gap = (a.final_network_mean - a.initial_average).abs();
    c.check(
        gap <= 3.0 * a.final_network_mean_se,
        format!(
            "final network mean {:.4} vs initial average {:.4}: gap {:.4} <= 3 SE = {:.4}",
            a.final_network_mean,
            a.initial_average,
            gap,
            3.0 * a.final_network_mean_se
        ),
    );
    match &a.bounds {
        Some(BoundsOutcome::Computed(b)) => {
            let bound = b.time_varying.variance_bound;
            c.check(
                a.final_network_mean_var <= bound.lo,
                format!(
                    "Var(final mean) {:.4} <= variance bound [{:.3e}, {:.3e}]",
                    a.final_network_mean_var, bound.lo, bound.hi
                ),
            );
        }
        other => c.check(false, format!("bound constants unavailable: {other:?}")),
    }
    c
}

fn heterogeneous(homogeneous: &RunReport) -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let perturbed = resolve(&full_traces(scenario("ring10_heterogeneous.json")));
    let bundle = harness::validate(&perturbed);
    for v in &bundle.verdicts {
        c.check(v.passed, format!("{}: {}", v.name, v.reason));
    }
    let report = harness::run(&perturbed, &RunOptions::default()).expect("heterogeneous run");
    let a = &report.aggregate;
    c.check(
        a.final_mean_v < 0.05 * a.initial_v,
        format!(
            "perturbed trial-mean V(K) {:.4} < 0.05 V(0) = {:.4}",
            a.final_mean_v,
            0.05 * a.initial_v
        ),
    );

    let mut equal = full_traces(scenario("ring10_heterogeneous.json"));
    if let Some(s) = equal.schedule.as_mut() {
        s.per_agent.clear();
    }
    let equal = harness::run(&resolve(&equal), &RunOptions::default()).expect("equal-schedule run");
    let identical = equal.summaries == homogeneous.summaries
        && equal.aggregate.mean_v == homogeneous.aggregate.mean_v;
    c.check(
        identical,
        "equal per-agent schedules bit-identical to the homogeneous run",
    );
    within(&mut c, started, Duration::from_secs(300));
    c
}

fn time_varying() -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let base = resolve(&scenario("fifty_sigma0db.json"));
    let report = harness::run(&base, &RunOptions::default()).expect("50-agent run");
    let blocks = block_means(&report.aggregate.mean_mse, 500);
    let up = rises(&blocks);
    c.check(
        up.is_empty(),
        format!(
            "500-step block means of trial-mean MSE decreasing ({:.2} -> {:.2}, rises at {up:?})",
            blocks[0],
            blocks[blocks.len() - 1]
        ),
    );

    let noisy = resolve(&scenario("fifty_sigma20db.json"));
    let cmp = compare(&base, &noisy, "channel.sigma2").expect("noise sweep");
    let needed = (0.95 * cmp.trials as f64).ceil() as usize;
    c.check(
        cmp.b_higher >= needed,
        format!(
            "σ² = 20dB final MSE higher in {}/{} paired trials (need {needed}, sign-test p = {:.2e})",
            cmp.b_higher, cmp.trials, cmp.sign_test_p
        ),
    );

    let weak = resolve(&scenario("fifty_lambda1.json"));
    let cmp = compare(&weak, &base, "channel.lambda").expect("fading sweep");
    c.check(
        cmp.var_x_star_b > cmp.var_x_star_a,
        format!(
            "Var(x*) with Λ = 2 {:.4} > with Λ = 1 {:.4}",
            cmp.var_x_star_b, cmp.var_x_star_a
        ),
    );
    within(&mut c, started, Duration::from_secs(900));
    c
}

fn baseline_divergence() -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let r = resolve(&full_traces(scenario("baseline5.json")));
    let report = harness::run(&r, &RunOptions::default()).expect("baseline run");
    let a = &report.aggregate;
    let exceeding = report
        .summaries
        .iter()
        .filter(|s| s.max_v > a.initial_v)
        .count();
    c.check(
        exceeding >= BASELINE_MIN_EXCEEDING,
        format!(
            "max_k V(k)/V(0) > 1 in {exceeding}/{} trials (frozen threshold {BASELINE_MIN_EXCEEDING})",
            a.trials
        ),
    );
    let floor = a.mean_v.iter().copied().fold(f64::INFINITY, f64::min) / a.initial_v;
    c.check(
        floor >= BASELINE_DECAY_FLOOR,
        format!("min_k trial-mean V(k)/V(0) = {floor:.3} >= {BASELINE_DECAY_FLOOR}"),
    );
    within(&mut c, started, Duration::from_secs(60));
    c
}

fn validators() -> Criterion {
    let started = Instant::now();
    let mut c = Criterion::default();
    let topo = PhysicalTopology::ring(10).unwrap();
    let model = ChannelModel::uniform(10, 1.0, 0.01, 1.0, 0.5).unwrap();
    let d_max = model.max_expected_degree(&topo);
    let verdict = |rule: StepsizeSchedule, mode| validate_schedule(&rule, &model, &topo, mode);
    let common = |p: f64, scale: f64| StepsizeSchedule::Common(StepsizeRule::power_law(p, scale));

    let v = verdict(common(0.75, 1.0 / d_max), ValidationMode::Assumption1);
    c.check(
        v.passed,
        format!("1/(d_max (k+1)^0.75) passes assumption 1: {}", v.reason),
    );
    let v = verdict(common(0.4, 1.0), ValidationMode::Assumption1);
    c.check(
        !v.passed,
        format!("1/(k+1)^0.4 fails assumption 1: {}", v.reason),
    );
    let v = verdict(common(1.0, 1.0 / d_max), ValidationMode::Assumption3);
    c.check(
        v.passed,
        format!("1/(d_max (k+1)) passes assumption 3: {}", v.reason),
    );

    let base_rule = StepsizeRule::power_law(0.75, 1.0 / d_max);
    let perturbed = |c_pert: f64| {
        let mut rules = vec![base_rule.clone(); 10];
        rules[1] = StepsizeRule::PowerLaw {
            exponent: 0.75,
            scale: 1.0 / d_max,
            perturbation: c_pert,
        };
        StepsizeSchedule::PerAgent(rules)
    };
    for mode in [ValidationMode::Corollary1c, ValidationMode::Corollary3c] {
        let v = verdict(perturbed(0.1), mode);
        c.check(
            v.passed,
            format!("agent 1 with (1 + 0.1/(k+1)) passes {mode:?}: {}", v.reason),
        );
    }
    let mut slow = vec![base_rule.clone(); 10];
    slow[3] = StepsizeRule::power_law(0.4, 1.0 / d_max);
    let v = verdict(
        StepsizeSchedule::PerAgent(slow),
        ValidationMode::Assumption1,
    );
    c.check(
        !v.passed,
        format!("one agent with (k+1)^-0.4 rejected: {}", v.reason),
    );

    let fifty = PhysicalTopology::bundled_fifty();
    let mut all_ok = true;
    let mut windows = 0;
    for s in 0..10u64 {
        let mut rng = stream(VALIDATION_SEED + s, StreamDomain::Topology, 0);
        let seq =
            generate_sampled_sequence(&fifty, 3, 0.6, 600, &mut rng).expect("sampled sequence");
        let report = check_connectivity(&seq, 600);
        windows += report.windows_checked;
        all_ok &= report.passed;
    }
    c.check(
        all_ok,
        format!("checker accepts 10 generated sequences ({windows} windows)"),
    );

    let ring = PhysicalTopology::ring(6).unwrap();
    let omit = |k: usize| {
        let mut f = ota_consensus::graph::StepFailures::default();
        f.failed_nodes.insert(4);
        (k, f)
    };
    let adversarial =
        TopologySequence::with_failures(ring, 3, Some(30), (0..30).map(omit)).unwrap();
    let report = check_connectivity(&adversarial, 30);
    c.check(
        !report.passed && report.failures.len() == report.windows_checked,
        format!(
            "checker rejects a sequence that never activates agent 4 ({} of {} windows flagged)",
            report.failures.len(),
            report.windows_checked
        ),
    );
    within(&mut c, started, Duration::from_secs(10));
    c
}

fn report(id: usize, name: &str, c: &Criterion) -> bool {
    let verdict = if c.passed() { "PASS" } else { "FAIL" };
    println!("{verdict} criterion {id}: {name}");
    for check in &c.checks {
        println!(
            "    [{}] {}",
            if check.ok { "ok" } else { "FAIL" },
            check.label
        );
    }
    c.passed()
}

fn main() {
    let mut passed = true;
    passed &= report(1, "algebraic identities", &algebraic_identities());
    passed &= report(2, "conditional moments", &moment_tests());
    let (ring, took) = ring_run();
    passed &= report(
        3,
        "weak consensus on the 10-agent ring",
        &weak_consensus(&ring, took),
    );
    passed &= report(4, "mean preservation", &mean_preservation(&ring));
    passed &= report(5, "heterogeneous step sizes", &heterogeneous(&ring));
    passed &= report(6, "time-varying topology", &time_varying());
    passed &= report(7, "baseline divergence", &baseline_divergence());
    passed &= report(8, "validators", &validators());
    if !passed {
        std::process::exit(1);
    }
}
