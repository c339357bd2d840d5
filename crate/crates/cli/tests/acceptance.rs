//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (visible even when output is captured) and then asserts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use switchid_cli::commands::{cmd_evaluate, cmd_fit_surface, cmd_identify, cmd_simulate, Metrics};
use switchid_cli::io::{read_dataset, SurfacesFile};
use switchid_cli::{LoadedConfig, Overrides};
use switchid_core::assign::{
    assign, assign_exact, assign_lp, harden, is_rank_one, rounding_bound_check, simplex_lp, DEFAULT_RANK_TOL,
};
use switchid_core::bilevel::{blockwise_optimality_check, identify};
use switchid_core::convex::{solve_lp, solve_shor_block, ShorBlock};
use switchid_core::evaluate::mode_metrics;
use switchid_core::fit::fit_dynamics;
use switchid_core::simulate::generate_dataset;
use switchid_core::surface::{admissible_epsilon, fit_surfaces, make_modebook, margin_certificate, signs_from_labels};
use switchid_core::*;

fn report(criterion: u32, pass: bool, detail: &str) {
    let line = format!("criterion {criterion:>2}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

struct Run {
    _dir: tempfile::TempDir,
    dataset: PathBuf,
    metrics: Metrics,
    surfaces: SurfacesFile,
    history: Vec<History>,
    cfg: LoadedConfig,
}

#[derive(Debug, Clone)]
struct History {
    cost: f64,
    mismatch_truth: Option<usize>,
    tightness: Option<f64>,
    assign_seconds: f64,
}

fn read_history(path: &Path) -> Vec<History> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let opt = |i: usize| (!r[i].is_empty()).then(|| r[i].parse::<f64>().unwrap());
            History {
                cost: r[1].parse().unwrap(),
                mismatch_truth: opt(3).map(|v| v as usize),
                tightness: opt(4),
                assign_seconds: r[5].parse().unwrap(),
            }
        })
        .collect()
}

/// simulate → identify → fit-surface → evaluate through the command layer.
fn pipeline(config: &str, relaxation: Relaxation) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = config_path(config);
    let ov = Overrides { seed: None, relaxation: Some(relaxation) };
    let dataset = dir.path().join("train.csv");
    let out = dir.path().join("identify");
    cmd_simulate(&cfg_path, &dataset, ov).unwrap();
    let id = cmd_identify(&dataset, &cfg_path, &out, ov).unwrap();
    let surfaces_path = out.join("surfaces.json");
    let surfaces = cmd_fit_surface(&dataset, &id.model_path, &cfg_path, &surfaces_path, ov).unwrap();
    let metrics = cmd_evaluate(&cfg_path, &id.model_path, Some(&surfaces_path), &out.join("eval"), ov).unwrap();
    Run {
        history: read_history(&id.history_path),
        cfg: LoadedConfig::load(&cfg_path, ov).unwrap(),
        _dir: dir,
        dataset,
        metrics,
        surfaces,
    }
}

fn sls_lp() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| pipeline("sls_oscillator.json", Relaxation::Lp))
}

fn sls_sdp() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| pipeline("sls_oscillator.json", Relaxation::Sdp))
}

fn sps_lp() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| pipeline("sps_quartic.json", Relaxation::Lp))
}

fn metric_line(m: &Metrics) -> (f64, f64, f64, f64, f64) {
    let r = m.rollout.as_ref().expect("rollouts ran");
    (
        m.velocity_rmse.unwrap(),
        m.mode_accuracy.unwrap(),
        m.miou.unwrap(),
        r.rmse.unwrap_or(f64::INFINITY),
        r.max_error.unwrap_or(f64::INFINITY),
    )
}

#[test]
fn criterion_01_sls_end_to_end() {
    let run = sls_lp();
    let (v, acc, miou, rr, mx) = metric_line(&run.metrics);
    let diverged = run.metrics.rollout.as_ref().unwrap().diverged;
    let train_mismatch = run.history.last().and_then(|h| h.mismatch_truth);
    let pass = v <= 0.08 && acc >= 0.99 && miou >= 0.98 && rr <= 0.01 && mx <= 0.02 && diverged == 0;
    report(
        1,
        pass,
        &format!(
            "velocity RMSE {v:.4} (≤0.08), accuracy {acc:.4} (≥0.99), mIoU {miou:.4} (≥0.98), \
             rollout RMSE {rr:.4} (≤0.01), max error {mx:.4} (≤0.02), {diverged} diverged, \
             final training mismatch vs truth {train_mismatch:?}"
        ),
    );
}

#[test]
fn criterion_02_sps_end_to_end() {
    let run = sps_lp();
    let (v, acc, miou, rr, mx) = metric_line(&run.metrics);
    let diverged = run.metrics.rollout.as_ref().unwrap().diverged;
    let pass = v <= 0.08 && acc >= 0.98 && miou >= 0.97 && rr <= 0.03 && mx <= 0.06 && diverged == 0;
    report(
        2,
        pass,
        &format!(
            "velocity RMSE {v:.4} (≤0.08), accuracy {acc:.4} (≥0.98), mIoU {miou:.4} (≥0.97), \
             rollout RMSE {rr:.4} (≤0.03), max error {mx:.4} (≤0.06), {diverged} diverged"
        ),
    );
}

#[test]
fn criterion_03_surface_fidelity() {
    let sls = &sls_lp().surfaces;
    let a = &sls.coefficients[0];
    let basis = MonomialBasis::new(2, sls.degree).unwrap();
    let x = basis.index_of(&[1, 0]).unwrap();
    let share = a[x].abs() / a.iter().map(|v| v.abs()).sum::<f64>();

    let run = sps_lp();
    let truth = run.cfg.true_model().unwrap();
    let (set, book) = run.surfaces.to_parts().unwrap();
    let spec = run.cfg.sampling_spec(run.cfg.seed.wrapping_add(1000), 2000).unwrap();
    let fresh = generate_dataset(&truth, &spec).unwrap();
    let true_side: Vec<usize> = fresh.samples().iter().map(|s| truth.mode_at(&s.z).unwrap()).collect();
    let recovered: Vec<usize> = fresh
        .samples()
        .iter()
        .map(|s| region_mode(&set, &book, &s.z).unwrap())
        .collect();
    let agreement = mode_metrics(&recovered, &true_side, 2).unwrap().accuracy;
    report(
        3,
        share >= 0.95 && agreement >= 0.98,
        &format!("SLS |a_x|/‖a‖₁ = {share:.4} (≥0.95, surface {a:.4?}); SPS region agreement {agreement:.4} (≥0.98)"),
    );
}

fn random_system(rng: &mut ChaCha8Rng) -> SwitchingSystemModel {
    let basis = MonomialBasis::new(2, 1).unwrap();
    let modes = (0..2)
        .map(|_| {
            ModeDynamics::new(DMatrix::from_fn(2, 3, |_, _| 0.7 * rng.sample::<f64, _>(StandardNormal))).unwrap()
        })
        .collect();
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let surface = vec![rng.gen_range(-0.5..0.5), theta.cos(), theta.sin()];
    SwitchingSystemModel::new(basis.clone(), modes)
        .unwrap()
        .with_surfaces(SurfaceSet::new(basis, vec![surface]).unwrap(), ModeBook::canonical(2).unwrap())
        .unwrap()
}

#[test]
fn criterion_04_monotone_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let runs = 20;
    let (mut worst_rise, mut worst_gap, mut pairs) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0usize);
    for r in 0..runs {
        let system = random_system(&mut rng);
        let spec = SamplingSpec {
            scheme: SamplingScheme::UniformBox { lower: vec![-2.0, -2.0], upper: vec![2.0, 2.0] },
            num_samples: 150,
            noise_std: if r % 2 == 0 { 0.0 } else { 0.02 },
            seed: 1000 + r as u64,
        };
        let data = generate_dataset(&system, &spec).unwrap();
        let cfg = BilevelConfig {
            init: InitStrategy::Random { seed: 77 + r as u64, scale: 1.0 },
            max_iters: 60,
            ..BilevelConfig::default()
        };
        let id = identify(&data, &cfg).unwrap();
        for w in id.history.windows(2) {
            worst_rise = worst_rise.max(w[1].cost - w[0].cost);
            pairs += 1;
        }
        let gaps = blockwise_optimality_check(&data, id.model.modes(), &id.assignments, &cfg).unwrap();
        worst_gap = worst_gap.max(gaps.assign_gap).max(gaps.fit_gap);
    }
    report(
        4,
        worst_rise <= 1e-6 && worst_gap <= 1e-6,
        &format!(
            "{runs} runs, {pairs} cost pairs, max F(k+1)−F(k) = {worst_rise:.2e} (≤1e-6), max blockwise gap {worst_gap:.2e} (≤1e-6)"
        ),
    );
}

#[test]
fn criterion_05_relaxation_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let blocks = 10_000;
    let mut worst = 0.0f64;
    for _ in 0..blocks {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(2..=4);
        let fields = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zdot: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let lp = solve_lp(&simplex_lp(&fields, &zdot), 1e-9).unwrap();
        let sdp = solve_shor_block(&ShorBlock { fields, zdot }, 1e-9).unwrap();
        worst = worst.max((lp.objective - sdp.objective).abs());
    }
    let (lp, sdp) = (&sls_lp().history, &sls_sdp().history);
    let same_len = lp.len() == sdp.len();
    let cost_gap = lp.iter().zip(sdp).map(|(a, b)| (a.cost - b.cost).abs()).fold(0.0, f64::max);

    let cfg = sls_lp().cfg.bilevel().unwrap();
    let (data, _) = read_dataset(&sls_lp().dataset).unwrap();
    let a = identify(&data, &BilevelConfig { relaxation: Relaxation::Lp, ..cfg.clone() }).unwrap();
    let b = identify(&data, &BilevelConfig { relaxation: Relaxation::Sdp, ..cfg }).unwrap();
    let same_labels = a.labels() == b.labels();
    report(
        5,
        worst <= 1e-6 && same_len && cost_gap <= 1e-5 && same_labels,
        &format!(
            "{blocks} blocks, max |LP−SDP| = {worst:.2e} (≤1e-6); SLS runs {} vs {} iterations, max cost gap {cost_gap:.2e} (≤1e-5), identical final labels: {same_labels}",
            lp.len(),
            sdp.len()
        ),
    );
}

#[test]
fn criterion_06_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let basis = MonomialBasis::new(2, 1).unwrap();
    let modes: Vec<ModeDynamics> = (0..3)
        .map(|_| ModeDynamics::new(DMatrix::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap())
        .collect();
    let n = 10_000;
    let samples: Vec<Sample> = (0..n)
        .map(|_| {
            let z = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let j = rng.gen_range(0..3);
            let zdot = eval_mode(&modes[j], &basis, &z).unwrap();
            Sample::new(z, zdot, Some(j))
        })
        .collect();
    let data = Dataset::new(samples, Provenance::default()).unwrap();
    let lp = assign_lp(&data, &modes, &basis).unwrap();
    let exact = assign_exact(&data, &modes, &basis).unwrap();
    let agree = lp.iter().zip(&exact).filter(|(a, b)| harden(&a.lambda) == b.hardened).count();
    report(6, agree == n, &format!("{agree}/{n} samples agree (need all)"));
}

#[test]
fn criterion_07_rounding_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let basis = MonomialBasis::new(3, 1).unwrap();
    let draws = 10_000;
    let mut violations = 0;
    for _ in 0..draws {
        let n = 3;
        let m = rng.gen_range(2..=5);
        let v = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let modes: Vec<ModeDynamics> = (0..m)
            .map(|j| {
                let mut c = DMatrix::zeros(n, basis.len());
                c.set_column(0, &v.column(j));
                ModeDynamics::new(c).unwrap()
            })
            .collect();
        let zdot: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let raw: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let lambda: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let sample = Sample::new(vec![0.3, -0.2, 0.9], zdot.clone(), None);
        let got = rounding_bound_check(&sample, &modes, &basis, &lambda).unwrap();

        let star = harden(&lambda);
        let l1 = |x: Vec<f64>| x.iter().map(|e| e.abs()).sum::<f64>();
        let lhs = l1((0..n).map(|k| zdot[k] - v[(k, star)]).collect());
        let soft = l1((0..n).map(|k| zdot[k] - (0..m).map(|j| lambda[j] * v[(k, j)]).sum::<f64>()).collect());
        let spread: f64 = (0..m)
            .map(|j| lambda[j] * l1((0..n).map(|k| v[(k, j)] - v[(k, star)]).collect()))
            .sum();
        if lhs > soft + spread + 1e-9 || !got.holds || (got.lhs - lhs).abs() > 1e-12 {
            violations += 1;
        }
    }
    report(7, violations == 0, &format!("{draws} draws, {violations} violations beyond 1e-9"));
}

#[test]
fn criterion_08_tightness_certification() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut certified, mut bad) = (0usize, 0usize);
    let mut check = |lambda: &[f64], block: &DMatrix<f64>| {
        if is_rank_one(lambda, block, DEFAULT_RANK_TOL) {
            certified += 1;
            let j = harden(lambda);
            let dist = lambda
                .iter()
                .enumerate()
                .map(|(i, &l)| (l - if i == j { 1.0 } else { 0.0 }).abs())
                .fold(0.0, f64::max);
            if dist > 1e-6 {
                bad += 1;
            }
        }
    };
    for _ in 0..2000 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(2..=4);
        let fields = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zdot: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let s = solve_shor_block(&ShorBlock { fields, zdot }, 1e-9).unwrap();
        check(&s.lambda, &s.moments);
    }
    let run = sls_sdp();
    let model = {
        let (data, _) = read_dataset(&run.dataset).unwrap();
        let cfg = run.cfg.bilevel().unwrap();
        let id = identify(&data, &cfg).unwrap();
        let final_assign = assign(&data, id.model.modes(), id.model.basis(), Relaxation::Sdp, cfg.solver_tol).unwrap();
        for a in &final_assign {
            check(&a.lambda, a.moment_block.as_ref().unwrap());
        }
        id
    };
    let ratios: Vec<f64> = run.history.iter().map(|h| h.tightness.unwrap()).collect();
    let trend = ratios.last().unwrap() >= ratios.first().unwrap();
    report(
        8,
        bad == 0 && trend && model.history.len() == ratios.len(),
        &format!("{certified} rank-one blocks, {bad} not within 1e-6 of a vertex; SLS tightness ratios {ratios:?} (final ≥ initial: {trend})"),
    );
}

#[test]
fn criterion_09_zero_slack_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let basis = MonomialBasis::new(2, 2).unwrap();
    let instances = 100;
    let mut failures = Vec::new();
    for inst in 0..instances {
        let m = if inst % 4 == 3 { 4 } else { 2 };
        let book = make_modebook(m).unwrap();
        let polys: Vec<Vec<f64>> = (0..book.num_surfaces())
            .map(|_| (0..basis.len()).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let surfaces = SurfaceSet::new(basis.clone(), polys).unwrap();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        while points.len() < 40 {
            let z = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let values = surfaces.values(&z).unwrap();
            if values.iter().any(|v| v.abs() < 0.05) {
                continue;
            }
            let j = region_mode(&surfaces, &book, &z).unwrap();
            points.push(z);
            labels.push(j);
        }
        let signs = signs_from_labels(&labels, &book).unwrap();
        let cert = margin_certificate(&points, &signs, &basis, 10.0).unwrap();
        let beta = 1e-2;
        let Some(iv) = admissible_epsilon(cert.t, beta, cert.l1_total(), points.len(), book.num_surfaces()) else {
            failures.push(format!("instance {inst}: empty interval (t = {:.3e})", cert.t));
            continue;
        };
        let config = SurfaceFitConfig { degree: 2, epsilon: iv.midpoint(), beta, eta: 10.0, solver_tol: 1e-9 };
        let fit = fit_surfaces(&points, &signs, &basis, &config).unwrap();
        if fit.total_slack > 1e-8 || !fit.all_nonzero() {
            failures.push(format!("instance {inst}: slack {:.3e}, ε = {:.3e}", fit.total_slack, config.epsilon));
        }
    }
    report(
        9,
        failures.is_empty(),
        &format!("{instances} instances, {} with slack > 1e-8 or a zero surface {:?}", failures.len(), failures),
    );
}

#[test]
fn criterion_10_runtime_ordering() {
    let lp: f64 = sls_lp().history.iter().map(|h| h.assign_seconds).sum();
    let sdp: f64 = sls_sdp().history.iter().map(|h| h.assign_seconds).sum();
    report(10, lp < sdp, &format!("total assignment time lp {lp:.3}s < sdp {sdp:.3}s (ratio {:.1})", sdp / lp));
}

fn recovery_error(config: &str) -> f64 {
    let cfg = LoadedConfig::load(&config_path(config), Overrides::default()).unwrap();
    let truth = cfg.true_model().unwrap();
    let spec = cfg.sampling_spec(cfg.seed, cfg.config.sampling.num_samples).unwrap();
    let data = generate_dataset(&truth, &spec).unwrap();
    let bilevel = cfg.bilevel().unwrap();
    let basis = MonomialBasis::new(truth.n(), bilevel.degree).unwrap();
    let labels = data.true_labels().unwrap();
    let assignments: Vec<ModeAssignment> = labels.iter().map(|&j| ModeAssignment::one_hot(2, j, 0.0)).collect();
    let fit = fit_dynamics(&data, &assignments, &basis, 2, bilevel.eta, None, LambdaMode::Hardened, 1e-10).unwrap();
    fit.modes
        .iter()
        .zip(truth.modes())
        .map(|(got, want)| {
            let want = want.embed(truth.basis(), &basis).unwrap();
            (got.coeffs() - want.coeffs()).abs().max()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_11_dynamics_recovery() {
    let sls = recovery_error("sls_oscillator.json");
    let sps = recovery_error("sps_quartic.json");
    report(
        11,
        sls <= 1e-4 && sps <= 1e-4,
        &format!("max entrywise error SLS {sls:.2e}, SPS {sps:.2e} (≤1e-4)"),
    );
}
