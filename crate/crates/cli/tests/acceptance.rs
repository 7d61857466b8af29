//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured extremes (visible under `--nocapture`). Tolerances are
//! pinned here, not computed.
//!
//! The drift/gradient orientation note: with the preserved density
//! N = det(μ0)^(−1/2) and d log N pinned to the central finite difference
//! of log N along s·exp(tu), the ∇^nh-drift equals +½ grad^{μ0} log N; the
//! classical −½ statement refers to the opposite orientation of the
//! right-invariant frame brackets. The residuals below verify the theorem
//! in the finite-difference-anchored orientation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use chapball_core::ball_model::{BallModel, InertiaOperator};
use chapball_core::diffusion_lab::{
    apply_generator, martingale_drift_estimate, mc_generator_estimate, sample_points,
    sphere_decay_test,
};
use chapball_core::lie_kernel::{exp_map, AlgebraVector, GroupPoint};
use chapball_core::nh_geometry::{
    deterministic_flow, nabla_i, PointGeometry, TestFunction,
};
use chapball_core::sde_engine::{
    draw_increments, path_rng, q_bm_step, NoiseConfig, QState, Scheme,
};

const DIMS: [usize; 3] = [3, 4, 5];
const INERTIAS_PER_DIM: usize = 20;
const POINTS_PER_MODEL: usize = 50;

fn sweep_models(n: usize, count: usize, seed: u64) -> Vec<BallModel> {
    (0..count)
        .map(|k| {
            let mut rng = path_rng(seed, (n * 1000 + k) as u64);
            BallModel::new(n, InertiaOperator::random_conditioned(&mut rng, n)).unwrap()
        })
        .collect()
}

fn sweep_points(n: usize, model_idx: usize, count: usize, seed: u64) -> Vec<GroupPoint> {
    let mut rng = path_rng(seed ^ 0xf00d, (n * 1000 + model_idx) as u64);
    sample_points(&mut rng, n, count)
}

#[test]
fn c01_drift_equals_half_gradient_of_log_density() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &n in &DIMS {
        for (mi, model) in sweep_models(n, INERTIAS_PER_DIM, 101).iter().enumerate() {
            for s in sweep_points(n, mi, POINTS_PER_MODEL, 101) {
                let geo = PointGeometry::new(model, &s).unwrap();
                worst = worst.max(geo.drift_gradient_residual());
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        worst < 1e-8,
        "c01: max ‖drift − ½grad log N‖ = {worst:.3e} over the sweep"
    );
    assert!(elapsed < 120.0, "c01: runtime {elapsed:.1} s exceeds 2 min");
    println!("acceptance c01 drift-gradient-theorem: PASS (max residual {worst:.3e}, {elapsed:.1} s)");
}

#[test]
fn c02_proof_identities() {
    let mut worst_e0: f64 = 0.0;
    let mut worst_e1: f64 = 0.0;
    let mut worst_e2: f64 = 0.0;
    for &n in &DIMS {
        for (mi, model) in sweep_models(n, INERTIAS_PER_DIM, 202).iter().enumerate() {
            for s in sweep_points(n, mi, POINTS_PER_MODEL, 202) {
                let geo = PointGeometry::new(model, &s).unwrap();
                worst_e0 = worst_e0.max(geo.identity_e0());
                worst_e1 = worst_e1.max(geo.identity_e1());
                worst_e2 = worst_e2.max(geo.identity_e2());
            }
        }
    }
    assert!(worst_e0 < 1e-8, "c02: e0 residual {worst_e0:.3e}");
    assert!(worst_e1 < 1e-8, "c02: e1 residual {worst_e1:.3e}");
    assert!(worst_e2 < 1e-10, "c02: e2 residual {worst_e2:.3e}");
    println!(
        "acceptance c02 proof-identities: PASS (e0 {worst_e0:.3e}, e1 {worst_e1:.3e}, e2 {worst_e2:.3e})"
    );
}

#[test]
fn c03_dlogn_matches_finite_differences() {
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    'outer: for &n in &DIMS {
        for (mi, model) in sweep_models(n, 7, 303).iter().enumerate() {
            let mut rng = path_rng(303, (n * 100 + mi) as u64);
            for s in sweep_points(n, mi, 10, 303) {
                let dir = AlgebraVector::random(&mut rng, n, 1.0);
                let analytic = model.frame_at(&s).unwrap().dlogn_along(&dir);
                let plus = model
                    .density_n(&s.compose(&exp_map(&dir.scale(step))))
                    .unwrap()
                    .ln();
                let minus = model
                    .density_n(&s.compose(&exp_map(&dir.scale(-step))))
                    .unwrap()
                    .ln();
                let fd = (plus - minus) / (2.0 * step);
                worst = worst.max((analytic - fd).abs());
                pairs += 1;
                if pairs >= 200 {
                    break 'outer;
                }
            }
        }
    }
    assert!(pairs >= 200);
    assert!(worst < 1e-6, "c03: |analytic − fd| = {worst:.3e}");
    println!("acceptance c03 dlogn-finite-difference: PASS (max gap {worst:.3e} on {pairs} pairs)");
}

#[test]
fn c04_drift_horizontality() {
    let mut worst_mech: f64 = 0.0;
    let mut worst_vel: f64 = 0.0;
    // Mechanical horizontality over the full random sweep.
    for &n in &DIMS {
        for (mi, model) in sweep_models(n, INERTIAS_PER_DIM, 404).iter().enumerate() {
            let ham_ok = n == 3 && model.ham_condition_residual().unwrap() < 1e-8;
            for s in sweep_points(n, mi, POINTS_PER_MODEL, 404) {
                let geo = PointGeometry::new(model, &s).unwrap();
                let drift = geo.drift_vector();
                for alpha in 0..model.k() {
                    let xi = model.xi(&s, alpha);
                    worst_mech = worst_mech.max(geo.frame().mu0_inner(&drift, &xi).abs());
                    if ham_ok {
                        worst_vel = worst_vel.max(xi.inner(&drift).abs());
                    }
                }
            }
        }
    }
    // Velocity horizontality for the identity inertia in n = 4, 5.
    for n in [4usize, 5] {
        let model = BallModel::homogeneous(n).unwrap();
        assert!(model.ham_condition_residual().unwrap() < 1e-8);
        for s in sweep_points(n, 999, 20, 404) {
            let geo = PointGeometry::new(&model, &s).unwrap();
            let drift = geo.drift_vector();
            for alpha in 0..model.k() {
                worst_vel = worst_vel.max(model.xi(&s, alpha).inner(&drift).abs());
            }
        }
    }
    assert!(worst_mech < 1e-9, "c04: μ0(drift, ξ) = {worst_mech:.3e}");
    assert!(worst_vel < 1e-8, "c04: ⟨ξ, drift⟩ = {worst_vel:.3e}");
    println!(
        "acceptance c04 horizontality: PASS (mechanical {worst_mech:.3e}, velocity {worst_vel:.3e})"
    );
}

#[test]
fn c05_connection_torsion_metricity_and_flow() {
    let mut worst_torsion: f64 = 0.0;
    let mut worst_metric: f64 = 0.0;
    for &n in &DIMS {
        for (mi, model) in sweep_models(n, 5, 505).iter().enumerate() {
            let mut rng = path_rng(505, (n * 100 + mi) as u64);
            for s in sweep_points(n, mi, 10, 505) {
                let geo = PointGeometry::new(model, &s).unwrap();
                let u = AlgebraVector::random(&mut rng, n, 1.0);
                let v = AlgebraVector::random(&mut rng, n, 1.0);
                let w = AlgebraVector::random(&mut rng, n, 1.0);
                let torsion = geo
                    .nabla_nh(&u, &v)
                    .sub(&geo.nabla_nh(&v, &u))
                    .sub(&u.bracket(&v))
                    .sub(&geo.torsion(&u, &v))
                    .norm();
                worst_torsion = worst_torsion.max(torsion);
                let lhs = geo.frame().d_mu0_apply(&w, &u).inner(&v);
                let rhs = geo.frame().mu0_inner(&geo.nabla_nh(&w, &u), &v)
                    + geo.frame().mu0_inner(&u, &geo.nabla_nh(&w, &v));
                worst_metric = worst_metric.max((lhs - rhs).abs());
            }
        }
    }
    assert!(worst_torsion < 1e-12, "c05: torsion residual {worst_torsion:.3e}");
    assert!(worst_metric < 1e-10, "c05: metricity residual {worst_metric:.3e}");

    let mut rng = path_rng(505, 77);
    let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
    let s0 = chapball_core::lie_kernel::random_group_point(&mut rng, 3);
    let raw = AlgebraVector::random(&mut rng, 3, 1.0);
    let u0 = raw.scale(1.0 / raw.norm());
    let flow = deterministic_flow(&model, &s0, &u0, 10.0, 1e-3).unwrap();
    let e0 = flow[0].energy;
    let j0 = flow[0].momentum.clone();
    let mut energy_drift: f64 = 0.0;
    let mut momentum_drift: f64 = 0.0;
    for sample in &flow {
        energy_drift = energy_drift.max((sample.energy - e0).abs() / e0.abs());
        momentum_drift =
            momentum_drift.max((&sample.momentum - &j0).norm() / j0.norm().max(1.0));
    }
    assert!(energy_drift < 1e-8, "c05: energy drift {energy_drift:.3e}");
    assert!(momentum_drift < 1e-6, "c05: J_H drift {momentum_drift:.3e}");
    println!(
        "acceptance c05 connection-and-flow: PASS (torsion {worst_torsion:.3e}, metricity {worst_metric:.3e}, energy {energy_drift:.3e}, J_H {momentum_drift:.3e})"
    );
}

#[test]
fn c06_homogeneous_ball_is_a_martingale() {
    let start = Instant::now();
    let model = BallModel::homogeneous(3).unwrap();
    let mut rng = path_rng(606, 0);
    let s0 = chapball_core::lie_kernel::random_group_point(&mut rng, 3);
    let h = 1e-3;
    let report = martingale_drift_estimate(
        &model,
        &s0,
        h,
        100_000,
        &NoiseConfig::full(),
        606,
        8,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let budget = 3.0 * report.stderr + 10.0 * h;
    assert!(
        report.estimate_norm <= budget,
        "c06: ∇^nh-drift estimate {:.3e} exceeds {budget:.3e}",
        report.estimate_norm
    );
    assert!(elapsed < 300.0, "c06: runtime {elapsed:.1} s exceeds 5 min");
    println!(
        "acceptance c06 martingale: PASS (estimate {:.3e} ≤ {budget:.3e}, {elapsed:.1} s)",
        report.estimate_norm
    );
}

#[test]
fn c07_homogeneous_sphere_brownian_motion() {
    let start = Instant::now();
    let model = BallModel::homogeneous(3).unwrap();
    let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let report = sphere_decay_test(
        &model,
        2.0,
        20,
        2.5e-3,
        100_000,
        &NoiseConfig::full(),
        707,
        &e3,
        8,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!((report.predicted_rate - 0.5).abs() < 1e-12, "n=3 eigen-rate is ½");
    let budget = 3.0 * report.rate_stderr + 0.1 * report.predicted_rate;
    assert!(
        (report.fitted_rate - report.predicted_rate).abs() <= budget,
        "c07: fitted {:.4} vs predicted {:.4} (budget {budget:.4})",
        report.fitted_rate,
        report.predicted_rate
    );
    assert!(elapsed < 600.0, "c07: runtime {elapsed:.1} s exceeds 10 min");
    println!(
        "acceptance c07 sphere-brownian-motion: PASS (fitted {:.4} ± {:.4} vs ½, R² {:.4}, {elapsed:.0} s)",
        report.fitted_rate, report.rate_stderr, report.r_squared
    );
}

#[test]
fn c08_generator_analytic_vs_monte_carlo() {
    let mut rng = path_rng(808, 0);
    let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
    let functions: Vec<TestFunction> = (0..5).map(|_| TestFunction::random(&mut rng, 3)).collect();
    let points = sample_points(&mut rng, 3, 3);

    let mut worst_sigma = 0.0f64;
    for (fi, f) in functions.iter().enumerate() {
        for (pi, s) in points.iter().enumerate() {
            let report = mc_generator_estimate(
                &model,
                f,
                s,
                1e-3,
                100_000,
                &NoiseConfig::full(),
                808 + (fi * 3 + pi) as u64,
                8,
            )
            .unwrap();
            assert!(
                report.within_budget(0.1),
                "c08: f{fi} at point {pi}: mc {:.6e} vs analytic {:.6e} (stderr {:.2e})",
                report.mc_estimate,
                report.analytic,
                report.stderr
            );
            let sigmas = (report.mc_estimate - report.analytic).abs()
                / (report.stderr + 0.1 * report.analytic.abs());
            worst_sigma = worst_sigma.max(sigmas);
        }
    }

    // Pointwise: the generator equals drift + ½ΣHess on the noise fields.
    let mut worst_split = 0.0f64;
    for f in &functions {
        for s in &points {
            let full = apply_generator(&model, f, s, &NoiseConfig::full()).unwrap();
            let geo = PointGeometry::new(&model, s).unwrap();
            let frame = geo.frame();
            let mut regrouped = f.deriv(s, &geo.drift_vector());
            for i in 0..model.m() {
                let w = frame.mu0_inv_apply(&model.apply_inertia(&model.v_frame()[i]));
                regrouped += 0.5 * geo.hess(f, &w, &w);
            }
            for a in 0..2 {
                let u = frame.mu0_inv_apply(frame.zeta(a));
                regrouped += 0.5 * geo.hess(f, &u, &u);
            }
            worst_split = worst_split.max((full - regrouped).abs());
        }
    }
    assert!(worst_split < 1e-9, "c08: drift+Hessian split residual {worst_split:.3e}");
    println!(
        "acceptance c08 generator: PASS (worst normalized gap {worst_sigma:.2}, split residual {worst_split:.3e})"
    );
}

#[test]
fn c09_base_brownian_motion_on_q() {
    let mut rng = path_rng(909, 0);
    let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
    let s0 = chapball_core::lie_kernel::random_group_point(&mut rng, 3);
    let f = TestFunction::random(&mut rng, 3);
    let h = 1e-3;
    let paths = 100_000;

    // Analytic ½Σ(v_i v_i − ∇^𝕀_{v_i}v_i)f at s0.
    let mut analytic = 0.0;
    for v in model.v_frame() {
        analytic += 0.5 * (f.second_deriv(&s0, v, v) - f.deriv(&s0, &nabla_i(&model, v, v)));
    }

    let q0 = QState {
        s: s0.clone(),
        x: DVector::zeros(2),
    };
    let f0 = f.eval(&s0);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for path in 0..paths {
        let mut prng = path_rng(909, path as u64);
        let (db, dw) = draw_increments(&mut prng, 3, 2, h);
        let q1 = q_bm_step(&model, &q0, h, &db, &dw, Scheme::HeunExp, &NoiseConfig::full())
            .unwrap();
        let val = (f.eval(&q1.s) - f0) / h;
        sum += val;
        sq += val * val;
    }
    let mean = sum / paths as f64;
    let stderr = ((sq / paths as f64 - mean * mean) / paths as f64).sqrt();
    let budget = 3.0 * stderr + 0.1 * analytic.abs();
    assert!(
        (mean - analytic).abs() <= budget,
        "c09: s-marginal generator {mean:.5e} vs ½Δ value {analytic:.5e} (budget {budget:.3e})"
    );

    // x-marginal: terminal covariance T·Identity within 3 standard errors.
    let t_final = 1.0;
    let steps = 100;
    let paths_x = 20_000;
    let mut cov = DMatrix::<f64>::zeros(2, 2);
    for path in 0..paths_x {
        let mut prng = path_rng(910, path as u64);
        let mut x = DVector::<f64>::zeros(2);
        for _ in 0..steps {
            let (_, dw) = draw_increments(&mut prng, 3, 2, t_final / steps as f64);
            x += &dw;
        }
        cov += &x * x.transpose();
    }
    cov /= paths_x as f64;
    for i in 0..2 {
        for j in 0..2 {
            let want = if i == j { t_final } else { 0.0 };
            let se = if i == j {
                t_final * (2.0 / paths_x as f64).sqrt()
            } else {
                t_final / (paths_x as f64).sqrt()
            };
            assert!(
                (cov[(i, j)] - want).abs() <= 3.0 * se,
                "c09: covariance[{i}{j}] = {:.4} vs {want} (3se = {:.4})",
                cov[(i, j)],
                3.0 * se
            );
        }
    }
    println!(
        "acceptance c09 base-brownian-motion: PASS (s-marginal gap {:.3e}, covariance ok)",
        (mean - analytic).abs()
    );
}

#[test]
fn c10_angular_only_noise_keeps_the_drift() {
    let mut worst: f64 = 0.0;
    for &n in &DIMS {
        for (mi, model) in sweep_models(n, 10, 1010).iter().enumerate() {
            for s in sweep_points(n, mi, 10, 1010) {
                let geo = PointGeometry::new(model, &s).unwrap();
                let full = geo.drift_vector_channels(true, true, true);
                let angular = geo.drift_vector_channels(true, false, true);
                worst = worst.max(full.sub(&angular).norm());
            }
        }
    }
    assert!(worst < 1e-12, "c10: channel drift difference {worst:.3e}");
    println!("acceptance c10 angular-only-drift: PASS (max difference {worst:.3e})");
}

#[test]
fn c11_byte_identical_csv_across_workers() {
    let binary = env!("CARGO_BIN_EXE_chapball");
    let dir = std::env::temp_dir().join(format!("chapball-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let make_config = |out: &std::path::Path| {
        let body = format!(
            r#"{{
                "n": 3,
                "inertia": {{ "kind": "masses", "masses": [0.4, 0.5, 0.65] }},
                "integrator": {{ "h": 0.001, "master_seed": 11, "path_count": 4 }},
                "experiment": {{ "t_final": 0.5, "snapshot_stride": 100 }},
                "output_dir": "{}"
            }}"#,
            out.display()
        );
        let path = dir.join(format!(
            "cfg-{}.json",
            out.file_name().unwrap().to_string_lossy()
        ));
        std::fs::write(&path, body).unwrap();
        path
    };
    let mut outputs = Vec::new();
    for (tag, workers) in [("w1", "1"), ("w8", "8"), ("w1-again", "1")] {
        let out = dir.join(tag);
        let cfg = make_config(&out);
        let status = std::process::Command::new(binary)
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--workers", workers])
            .status()
            .unwrap();
        assert!(status.success(), "c11: simulate failed for {tag}");
        outputs.push(std::fs::read(out.join("simulate.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "c11: 1 vs 8 workers differ");
    assert_eq!(outputs[0], outputs[2], "c11: reruns differ");
    println!(
        "acceptance c11 determinism: PASS ({} identical bytes across 1/8 workers and reruns)",
        outputs[0].len()
    );
}
