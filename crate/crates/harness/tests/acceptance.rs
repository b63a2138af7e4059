//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use itertools::Itertools;
use sgmcmc::{
    batch_means_se, run_chain, sghmc_aboba_step, sghmc_euler_step, sgld_step, sgnht_step,
    validate_schedule, weak_order_estimate, Dataset, GaussianConjugateModel, Gradient,
    GradientPolicy, IntegratorKind, Minibatch, Model, NoiseDraw, SamplerConfig,
    ScheduleViolation, State, StepSchedule, TestFunction, WeakOrderConfig,
};
use sgmcmc_harness::{run_experiment, ExperimentConfig, ExperimentOutput, ResultRow, SeriesFit};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(bool, String)]) -> Self {
        Self {
            pass: checks.iter().all(|c| c.0),
            detail: checks
                .iter()
                .map(|(ok, msg)| format!("{}{msg}", if *ok { "" } else { "!" }))
                .join("; "),
        }
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run_config(name: &str) -> ExperimentOutput {
    let config = ExperimentConfig::load(&config_path(name)).expect("config parses");
    run_experiment(&config, None).expect("experiment runs")
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

fn find_fit(out: &ExperimentOutput, kind: IntegratorKind, alpha: Option<f64>) -> &SeriesFit {
    out.fits
        .iter()
        .find(|f| f.integrator == kind && alpha.is_none_or(|a| f.alpha.is_some_and(|b| (a - b).abs() < 1e-9)))
        .expect("series present")
}

fn slope_check(name: &str, fit: &SeriesFit, lo: f64, hi: f64) -> (bool, String) {
    match fit.fit {
        Some(f) => (
            within(f.slope, lo, hi),
            format!("{name} slope {:.3} in [{lo:.3}, {hi:.3}]", f.slope),
        ),
        None => (false, format!("{name} slope unavailable")),
    }
}

/// ABOBA with full gradients, h=1e-3, D=10, L=1e6: first and second moments
/// within 4 batch-means standard errors of the analytic values.
fn stationary_correctness() -> Outcome {
    let model = Dataset::generate(42, 1000, 0.0, 1.0).into_model();
    let mut cfg = SamplerConfig::new(IntegratorKind::SghmcAboba, 10.0, StepSchedule::fixed(1e-3).unwrap());
    cfg.gradient = GradientPolicy::Full;
    cfg.burn_in = 10_000;
    cfg.test_functions = vec![TestFunction::Theta, TestFunction::ThetaSquared];
    cfg.record_trace = true;
    let trace = run_chain(&model, &cfg, 1_000_000, 2024).unwrap();
    let checks: Vec<(bool, String)> = [TestFunction::Theta, TestFunction::ThetaSquared]
        .into_iter()
        .map(|f| {
            let avg = trace.sample_average(f).unwrap();
            let se = batch_means_se(trace.values(f).unwrap(), 100).unwrap();
            let truth = f.posterior_value(&model);
            let z = (avg - truth) / se;
            (z.abs() <= 4.0, format!("{f}: {avg:.6e} vs {truth:.6e} ({z:+.2} se)"))
        })
        .collect();
    Outcome::new(&checks)
}

/// Exact one-step weak error slopes on U = theta^2/2, D = 1.
fn integrator_order() -> Outcome {
    let model = GaussianConjugateModel::new(vec![]);
    let grid = [0.2, 0.1, 0.05, 0.025];
    let cases = [
        (IntegratorKind::SgldEuler, State::position(vec![0.5]), 1.6, 2.4),
        (IntegratorKind::SghmcEuler, State::with_momentum(vec![0.5], vec![-1.0]), 1.6, 2.4),
        (IntegratorKind::SghmcAboba, State::with_momentum(vec![0.5], vec![-1.0]), 2.5, 3.5),
    ];
    let checks: Vec<(bool, String)> = cases
        .into_iter()
        .map(|(kind, start, lo, hi)| {
            let report = weak_order_estimate(&model, &WeakOrderConfig::new(kind, 1.0, start), &grid).unwrap();
            match report.slope() {
                Some(s) => (within(s, lo, hi), format!("{kind} {s:.3} in [{lo}, {hi}]")),
                None => (false, format!("{kind} slope unavailable")),
            }
        })
        .collect();
    Outcome::new(&checks)
}

fn row_at(rows: &[ResultRow], kind: IntegratorKind, h: f64) -> &ResultRow {
    rows.iter()
        .find(|r| r.integrator == kind.name() && r.h == Some(h))
        .expect("grid point present")
}

/// Stationary bias against h: slopes near K and Euler visibly worse somewhere.
fn invariant_measure_order() -> Outcome {
    let out = run_config("stationary_order.toml");
    let aboba = find_fit(&out, IntegratorKind::SghmcAboba, None);
    let euler = find_fit(&out, IntegratorKind::SghmcEuler, None);
    let config = ExperimentConfig::load(&config_path("stationary_order.toml")).unwrap();
    let separated = config.grid.h.iter().find(|&&h| {
        let a = row_at(&out.rows, IntegratorKind::SghmcAboba, h);
        let e = row_at(&out.rows, IntegratorKind::SghmcEuler, h);
        let euler_diverged = e.n_diverged > 0 && a.n_diverged == 0;
        let euler_worse = matches!((e.bias, a.bias), (Some(eb), Some(ab)) if eb > 10.0 * ab);
        euler_diverged || euler_worse
    });
    Outcome::new(&[
        slope_check("sghmc-aboba", aboba, 1.5, 2.5),
        slope_check("sghmc-euler", euler, 0.5, 1.5),
        (
            separated.is_some(),
            match separated {
                Some(h) => format!("euler diverged or 10x worse at h={h}"),
                None => "euler never diverged or 10x worse".into(),
            },
        ),
    ])
}

/// Fixed-step bias/MSE decay with h = C L^-alpha and C from the pilot search.
fn optimal_fixed_step_rates() -> Outcome {
    let out = run_config("rate_sweep_fixed.toml");
    let third = 1.0 / 3.0;
    let aboba_bias = find_fit(&out, IntegratorKind::SghmcAboba, Some(third));
    let aboba_mse = find_fit(&out, IntegratorKind::SghmcAboba, Some(0.2));
    let sgld_mse = find_fit(&out, IntegratorKind::SgldEuler, Some(third));
    let largest = out.rows.iter().map(|r| r.steps).max().unwrap();
    let mse_at = |kind: IntegratorKind, alpha: f64| {
        out.rows
            .iter()
            .find(|r| {
                r.integrator == kind.name()
                    && r.steps == largest
                    && r.alpha.is_some_and(|a| (a - alpha).abs() < 1e-9)
            })
            .and_then(|r| r.mse)
    };
    let ordering = match (mse_at(IntegratorKind::SghmcAboba, 0.2), mse_at(IntegratorKind::SgldEuler, third)) {
        (Some(a), Some(s)) => (a < s, format!("mse at L={largest}: sghmc-aboba {a:.3e} < sgld {s:.3e}")),
        _ => (false, "mse at largest L unavailable".into()),
    };
    Outcome::new(&[
        slope_check("sghmc-aboba bias", aboba_bias, -2.0 / 3.0 - 0.2, -2.0 / 3.0 + 0.2),
        slope_check("sghmc-aboba mse", aboba_mse, -0.8 - 0.2, -0.8 + 0.2),
        slope_check("sgld mse", sgld_mse, -2.0 / 3.0 - 0.2, -2.0 / 3.0 + 0.2),
        ordering,
    ])
}

/// Decreasing steps with weighted averages: bias falls along L and the best
/// decay rate is the balancing one or a neighbour.
fn decreasing_step_consistency() -> Outcome {
    let out = run_config("rate_sweep_decreasing.toml");
    let rows: Vec<&ResultRow> = out.rows.iter().sorted_by_key(|r| r.steps).collect();
    let monotone = rows.windows(2).all(|w| match (w[0].bias, w[1].bias, w[1].bias_se) {
        (Some(a), Some(b), Some(se)) => b <= a + se,
        _ => false,
    });
    let biases = rows.iter().map(|r| r.bias.map_or("-".into(), |b| format!("{b:.2e}"))).join(",");

    let sweep = run_config("alpha_sweep.toml");
    let grid = ExperimentConfig::load(&config_path("alpha_sweep.toml")).unwrap().grid.alpha;
    let optimum = grid.iter().position(|a| (a - 1.0 / 3.0).abs() < 1e-9).expect("1/3 in grid");
    let winner = sweep.winners.first().map(|w| w.alpha);
    let adjacent = winner
        .and_then(|w| grid.iter().position(|a| *a == w))
        .is_some_and(|i| i.abs_diff(optimum) <= 1);
    Outcome::new(&[
        (monotone, format!("bias along L [{biases}] decreasing within 1 se")),
        (adjacent, format!("alpha-sweep winner {winner:?} at or next to 1/3")),
    ])
}

fn schedule_validator() -> Outcome {
    let mut checks = Vec::new();
    for alpha in [0.2, 1.0 / 3.0, 0.5] {
        let v = validate_schedule(&StepSchedule::power_decay(0.045, alpha).unwrap(), 2, 10_000);
        checks.push((v.valid, format!("alpha={alpha:.3} accepted")));
    }
    for (alpha, expected) in [
        (1.5, ScheduleViolation::StepSumConverges),
        (0.0, ScheduleViolation::RatioDoesNotVanish),
        (-0.3, ScheduleViolation::RatioDoesNotVanish),
    ] {
        let v = validate_schedule(&StepSchedule::power_decay(0.045, alpha).unwrap(), 2, 10_000);
        checks.push((
            !v.valid && v.violations.contains(&expected),
            format!("alpha={alpha} rejected ({expected})"),
        ));
    }
    Outcome::new(&checks)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_sgmcmc"))
            .args(["rate-sweep", "--config"])
            .arg(config_path("rate_sweep_decreasing.toml"))
            .arg("--out")
            .arg(&out)
            .args(["--seed", "17", "--threads", threads])
            .output()
            .expect("binary runs");
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("1", "b.csv");
    let c = run("4", "c.csv");
    Outcome::new(&[
        (a == b && !a.is_empty(), "repeat invocation byte-identical".into()),
        (a == c, "1 vs 4 threads byte-identical".into()),
    ])
}

fn unit_oracles() -> Outcome {
    const TOL: f64 = 1e-12;
    let quad = GaussianConjugateModel::new(vec![]);
    let z0 = NoiseDraw(&[0.0]);
    let mut checks = Vec::new();

    let s = sghmc_aboba_step(&quad, &State::with_momentum(vec![0.0], vec![1.0]), 0.2, 0.0, Gradient::Full, z0).unwrap();
    checks.push((
        (s.theta[0] - 0.198).abs() < TOL && (s.p.unwrap()[0] - 0.98).abs() < TOL,
        "aboba D=0".to_string(),
    ));
    let s = sghmc_aboba_step(&quad, &State::with_momentum(vec![0.0], vec![1.0]), 0.2, 10.0, Gradient::Full, z0).unwrap();
    let e = (-1.0f64).exp();
    let p_new = e * (e - 0.1 * 0.2);
    checks.push((
        (s.p.unwrap()[0] - p_new).abs() < TOL && (s.theta[0] - (0.1 + p_new * 0.1)).abs() < TOL,
        "aboba D=10".to_string(),
    ));
    let s = sghmc_euler_step(&quad, &State::with_momentum(vec![0.0], vec![1.0]), 0.2, 0.0, Gradient::Full, z0).unwrap();
    let ok1 = (s.theta[0] - 0.2).abs() < TOL && (s.p.unwrap()[0] - 1.0).abs() < TOL;
    let s = sghmc_euler_step(&quad, &State::with_momentum(vec![1.0], vec![0.0]), 0.1, 10.0, Gradient::Full, z0).unwrap();
    let ok2 = (s.theta[0] - 0.99).abs() < TOL && (s.p.unwrap()[0] + 0.1).abs() < TOL;
    checks.push((ok1 && ok2, "euler".to_string()));
    let s = sgnht_step(&quad, &State::with_thermostat(vec![0.0], vec![1.0], 1.0), 0.1, 1.0, Gradient::Full, z0).unwrap();
    checks.push((
        (s.theta[0] - 0.09).abs() < TOL && (s.p.unwrap()[0] - 0.9).abs() < TOL && (s.xi.unwrap() - 0.981).abs() < TOL,
        "sgnht".to_string(),
    ));
    let s = sgld_step(&quad, &State::position(vec![0.0]), 0.04, Gradient::Full, NoiseDraw(&[1.5])).unwrap();
    checks.push(((s.theta[0] - 0.08f64.sqrt() * 1.5).abs() < TOL, "sgld".to_string()));

    let mut worst = 0.0f64;
    for n_data in 2..=10 {
        let data: Vec<f64> = (0..n_data).map(|i| ((i * 7 + 3) % 11) as f64 / 3.0 - 1.5).collect();
        let model = GaussianConjugateModel::new(data);
        for n in 1..=n_data {
            for theta in [-1.3, 0.0, 0.7] {
                let mut g = [0.0];
                let mut total = 0.0;
                let mut count = 0usize;
                for idx in (0..n_data).combinations(n) {
                    model.stoch_grad_u(&[theta], &Minibatch::new(idx, n_data).unwrap(), &mut g).unwrap();
                    total += g[0];
                    count += 1;
                }
                model.grad_u(&[theta], &mut g);
                worst = worst.max((total / count as f64 - g[0]).abs() / g[0].abs().max(1.0));
            }
        }
    }
    checks.push((worst <= TOL, format!("enumerated unbiasedness, worst rel err {worst:.1e}")));
    Outcome::new(&checks)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("stationary correctness", stationary_correctness),
        ("integrator order", integrator_order),
        ("invariant-measure order", invariant_measure_order),
        ("optimal fixed-step rates", optimal_fixed_step_rates),
        ("decreasing-step consistency", decreasing_step_consistency),
        ("schedule validator", schedule_validator),
        ("determinism", determinism),
        ("unit oracles", unit_oracles),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "criterion {} {} {name} ({:.1}s): {}",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
