//! The six verification subcommands. Each writes a CSV (fixed, versioned
//! column order) plus a JSON summary, prints a one-line verdict, and
//! reports pass/fail through the exit code.

use nalgebra::DVector;
use serde_json::json;

use chapball_core::ball_model::{BallModel, InertiaOperator};
use chapball_core::diffusion_lab::{
    drift_theorem_report, mc_generator_estimate, sample_points, sphere_decay_test, sphere_project,
};
use chapball_core::lie_kernel::{exp_map, random_group_point, AlgebraVector, GroupPoint};
use chapball_core::nh_geometry::{PointGeometry, TestFunction};
use chapball_core::sde_engine::{path_rng, simulate_ensemble};
use chapball_core::CoreError;

use crate::config::{
    DriftParams, ExperimentConfig, GeneratorParams, HamParams, SimulateParams, SphereParams,
    VerifyParams,
};
use crate::output::{fmt_f64, output_path, write_csv, Summary};
use crate::tolerances as tol;

pub enum CmdError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<crate::config::ConfigError> for CmdError {
    fn from(e: crate::config::ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

fn lift(e: CoreError) -> CmdError {
    match e {
        CoreError::InvalidConfig(_)
        | CoreError::DimensionTooSmall(_)
        | CoreError::NonPositiveMass { .. } => CmdError::Config(e.to_string()),
        other => CmdError::Numerical(other.to_string()),
    }
}

pub struct CmdContext<'a> {
    pub config: &'a ExperimentConfig,
    pub config_bytes: &'a [u8],
    pub workers: usize,
    pub seed: u64,
}

/// Max-residual battery of the analytic identity suite at one model.
struct IdentityResiduals {
    e0: f64,
    e1: f64,
    e2: f64,
    drift_gradient: f64,
    mech_horizontal: f64,
    vel_horizontal: f64,
    torsion_formula: f64,
    metricity: f64,
    dlogn_fd: f64,
    ham_residual: f64,
}

fn identity_sweep(
    model: &BallModel,
    points: &[GroupPoint],
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<IdentityResiduals, CoreError> {
    let n = model.n();
    let mut out = IdentityResiduals {
        e0: 0.0,
        e1: 0.0,
        e2: 0.0,
        drift_gradient: 0.0,
        mech_horizontal: 0.0,
        vel_horizontal: 0.0,
        torsion_formula: 0.0,
        metricity: 0.0,
        dlogn_fd: 0.0,
        ham_residual: model.ham_condition_residual()?,
    };
    for s in points {
        let geo = PointGeometry::new(model, s)?;
        out.e0 = out.e0.max(geo.identity_e0());
        out.e1 = out.e1.max(geo.identity_e1());
        out.e2 = out.e2.max(geo.identity_e2());
        out.drift_gradient = out.drift_gradient.max(geo.drift_gradient_residual());
        let drift = geo.drift_vector();
        for alpha in 0..model.k() {
            let xi = model.xi(s, alpha);
            out.mech_horizontal = out
                .mech_horizontal
                .max(geo.frame().mu0_inner(&drift, &xi).abs());
            out.vel_horizontal = out.vel_horizontal.max(xi.inner(&drift).abs());
        }
        // Torsion and metricity on random left-invariant arguments.
        let u = AlgebraVector::random(rng, n, 1.0);
        let v = AlgebraVector::random(rng, n, 1.0);
        let w = AlgebraVector::random(rng, n, 1.0);
        let torsion = geo
            .nabla_nh(&u, &v)
            .sub(&geo.nabla_nh(&v, &u))
            .sub(&u.bracket(&v))
            .sub(&geo.torsion(&u, &v))
            .norm();
        out.torsion_formula = out.torsion_formula.max(torsion);
        let lhs = geo.frame().d_mu0_apply(&w, &u).inner(&v);
        let rhs = geo.frame().mu0_inner(&geo.nabla_nh(&w, &u), &v)
            + geo.frame().mu0_inner(&u, &geo.nabla_nh(&w, &v));
        out.metricity = out.metricity.max((lhs - rhs).abs());
        // Analytic d log N against the central finite difference.
        let dir = AlgebraVector::random(rng, n, 1.0);
        let analytic = geo.frame().dlogn_along(&dir);
        let step = tol::DLOGN_FD_STEP;
        let plus = model.density_n(&s.compose(&exp_map(&dir.scale(step))))?.ln();
        let minus = model
            .density_n(&s.compose(&exp_map(&dir.scale(-step))))?
            .ln();
        let fd = (plus - minus) / (2.0 * step);
        out.dlogn_fd = out.dlogn_fd.max((analytic - fd).abs());
    }
    Ok(out)
}

pub fn cmd_verify(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: VerifyParams = ctx.config.experiment_params()?;
    let dims = params.dims.clone().unwrap_or_else(|| vec![ctx.config.n]);
    let mut summary = Summary::new("verify", ctx.config_bytes, ctx.seed);
    summary
        .tolerance("identity_e0", tol::IDENTITY_E0)
        .tolerance("identity_e1", tol::IDENTITY_E1)
        .tolerance("identity_e2", tol::IDENTITY_E2)
        .tolerance("drift_gradient", tol::DRIFT_GRADIENT)
        .tolerance("dlogn_fd", tol::DLOGN_FD)
        .tolerance("torsion_formula", tol::TORSION_FORMULA)
        .tolerance("metricity", tol::METRICITY)
        .tolerance("mech_horizontal", tol::MECH_HORIZONTAL)
        .tolerance("vel_horizontal", tol::VEL_HORIZONTAL);

    let mut worst: Option<IdentityResiduals> = None;
    let mut rng = path_rng(ctx.seed, u64::MAX);
    for (dim_idx, &n) in dims.iter().enumerate() {
        let models: Vec<BallModel> = if params.inertia_samples == 0 {
            if n != ctx.config.n {
                return Err(CmdError::Config(format!(
                    "dims sweep over n={n} needs `inertia_samples` > 0 (configured inertia is for n={})",
                    ctx.config.n
                )));
            }
            vec![ctx.config.build_model()?]
        } else {
            (0..params.inertia_samples)
                .map(|k| {
                    let mut irng = path_rng(ctx.seed, (dim_idx * 10_000 + k) as u64);
                    BallModel::new(n, InertiaOperator::random_conditioned(&mut irng, n))
                })
                .collect::<Result<_, _>>()
                .map_err(lift)?
        };
        for (model_idx, model) in models.iter().enumerate() {
            let mut prng = path_rng(ctx.seed, (1_000_000 + dim_idx * 10_000 + model_idx) as u64);
            let points = sample_points(&mut prng, n, params.point_samples);
            let residuals = identity_sweep(model, &points, &mut rng).map_err(lift)?;
            worst = Some(match worst {
                None => residuals,
                Some(acc) => IdentityResiduals {
                    e0: acc.e0.max(residuals.e0),
                    e1: acc.e1.max(residuals.e1),
                    e2: acc.e2.max(residuals.e2),
                    drift_gradient: acc.drift_gradient.max(residuals.drift_gradient),
                    mech_horizontal: acc.mech_horizontal.max(residuals.mech_horizontal),
                    // The velocity component is only guaranteed under the
                    // Hamiltonization condition; track it conditionally.
                    vel_horizontal: if residuals.ham_residual < tol::HAM_CONDITION {
                        acc.vel_horizontal.max(residuals.vel_horizontal)
                    } else {
                        acc.vel_horizontal
                    },
                    torsion_formula: acc.torsion_formula.max(residuals.torsion_formula),
                    metricity: acc.metricity.max(residuals.metricity),
                    dlogn_fd: acc.dlogn_fd.max(residuals.dlogn_fd),
                    ham_residual: acc.ham_residual.max(residuals.ham_residual),
                },
            });
        }
    }
    let worst = worst.expect("at least one model verified");

    let checks = [
        ("identity_e0", worst.e0, tol::IDENTITY_E0),
        ("identity_e1", worst.e1, tol::IDENTITY_E1),
        ("identity_e2", worst.e2, tol::IDENTITY_E2),
        ("drift_gradient", worst.drift_gradient, tol::DRIFT_GRADIENT),
        ("dlogn_fd", worst.dlogn_fd, tol::DLOGN_FD),
        ("torsion_formula", worst.torsion_formula, tol::TORSION_FORMULA),
        ("metricity", worst.metricity, tol::METRICITY),
        ("mech_horizontal", worst.mech_horizontal, tol::MECH_HORIZONTAL),
        ("vel_horizontal", worst.vel_horizontal, tol::VEL_HORIZONTAL),
    ];
    let mut pass = true;
    for (name, value, limit) in checks {
        summary.metric_f64(&format!("max_{name}"), value);
        if value >= limit {
            pass = false;
            eprintln!("verify: {name} residual {value:.3e} exceeds {limit:.1e}");
        }
    }
    summary.metric_f64("max_ham_residual", worst.ham_residual);
    if !pass {
        summary.fail();
    }
    summary.write(&output_path(&ctx.config.output_dir, "verify.json"))?;
    println!(
        "verify: {} (max drift-gradient residual {:.3e})",
        if pass { "PASS" } else { "FAIL" },
        worst.drift_gradient
    );
    Ok(pass)
}

pub fn cmd_simulate(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: SimulateParams = ctx.config.experiment_params()?;
    let model = ctx.config.build_model()?;
    let noise = ctx.config.noise_config();
    let cfg = ctx.config.integrator_config(Some(ctx.seed));
    let n = ctx.config.n;
    let s0 = match params.initial.as_str() {
        "identity" => GroupPoint::identity(n),
        "random" => {
            let mut rng = path_rng(ctx.seed ^ 0x5eed_0000, 0);
            random_group_point(&mut rng, n)
        }
        other => {
            return Err(CmdError::Config(format!(
                "field `experiment.initial`: expected identity or random, got `{other}`"
            )))
        }
    };
    let steps = (params.t_final / cfg.h).round() as usize;
    let stride = if params.snapshot_stride == 0 {
        steps.max(1)
    } else {
        params.snapshot_stride
    };
    let ensemble = simulate_ensemble(&model, &s0, params.t_final, &cfg, &noise, stride, ctx.workers)
        .map_err(lift)?;

    let mut header: Vec<String> = vec!["path_id".into(), "t".into()];
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("s_{i}{j}"));
        }
    }
    for i in 1..=n {
        header.push(format!("kappa_{i}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut rows = Vec::new();
    for snaps in &ensemble.snapshots {
        for (t, s) in snaps.times.iter().zip(&snaps.states) {
            let mut row = Vec::with_capacity(2 + n * n + n);
            row.push(snaps.path_id.to_string());
            row.push(fmt_f64(*t));
            for i in 0..n {
                for j in 0..n {
                    row.push(fmt_f64(s.matrix()[(i, j)]));
                }
            }
            let kappa = sphere_project(s);
            for i in 0..n {
                row.push(fmt_f64(kappa[i]));
            }
            rows.push(row);
        }
    }
    write_csv(
        &output_path(&ctx.config.output_dir, "simulate.csv"),
        &header_refs,
        &rows,
    )?;

    let mean_defect: f64 = ensemble
        .terminal
        .iter()
        .map(|s| s.orth_defect())
        .sum::<f64>()
        / ensemble.terminal.len() as f64;
    let mut summary = Summary::new("simulate", ctx.config_bytes, ctx.seed);
    summary
        .csv_schema("simulate-v1: path_id,t,s_11..s_nn,kappa_1..kappa_n")
        .metric_f64("t_final", params.t_final)
        .metric("paths", json!(cfg.path_count))
        .metric("steps", json!(steps))
        .metric_f64("mean_orth_defect", mean_defect);
    summary.write(&output_path(&ctx.config.output_dir, "simulate.json"))?;
    println!(
        "simulate: PASS ({} paths, {} snapshot rows, mean defect {mean_defect:.2e})",
        cfg.path_count,
        rows.len()
    );
    Ok(true)
}

pub fn cmd_generator_test(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: GeneratorParams = ctx.config.experiment_params()?;
    let model = ctx.config.build_model()?;
    let noise = ctx.config.noise_config();
    let cfg = ctx.config.integrator_config(Some(ctx.seed));
    let n = ctx.config.n;

    let mut rng = path_rng(ctx.seed ^ 0x9e37, 0);
    let functions: Vec<TestFunction> = (0..params.functions)
        .map(|_| TestFunction::random(&mut rng, n))
        .collect();
    let points = sample_points(&mut rng, n, params.points);

    let mut rows = Vec::new();
    let mut pass = true;
    let mut worst_gap = 0.0f64;
    for (f_idx, f) in functions.iter().enumerate() {
        for (p_idx, s) in points.iter().enumerate() {
            let f_id = f_idx * params.points + p_idx;
            let report = mc_generator_estimate(
                &model,
                f,
                s,
                cfg.h,
                cfg.path_count,
                &noise,
                ctx.seed.wrapping_add(f_id as u64),
                ctx.workers,
            )
            .map_err(lift)?;
            if !report.within_budget(params.bias_budget) {
                pass = false;
                eprintln!(
                    "generator-test: f_id {f_id}: |{:.6e} − {:.6e}| exceeds 3·stderr + {:.0}%·|analytic|",
                    report.mc_estimate,
                    report.analytic,
                    100.0 * params.bias_budget
                );
            }
            worst_gap = worst_gap.max((report.mc_estimate - report.analytic).abs());
            rows.push(vec![
                f_id.to_string(),
                fmt_f64(report.analytic),
                fmt_f64(report.mc_estimate),
                fmt_f64(report.stderr),
                fmt_f64(report.h),
                report.paths.to_string(),
            ]);
        }
    }
    write_csv(
        &output_path(&ctx.config.output_dir, "generator_test.csv"),
        &["f_id", "analytic", "mc", "stderr", "h", "paths"],
        &rows,
    )?;
    let mut summary = Summary::new("generator-test", ctx.config_bytes, ctx.seed);
    summary
        .csv_schema("generator_test-v1: f_id,analytic,mc,stderr,h,paths")
        .tolerance("bias_budget_fraction", params.bias_budget)
        .metric_f64("worst_gap", worst_gap)
        .metric("functions", json!(params.functions))
        .metric("points", json!(params.points));
    if !pass {
        summary.fail();
    }
    summary.write(&output_path(&ctx.config.output_dir, "generator_test.json"))?;
    println!(
        "generator-test: {} (worst |mc − analytic| = {worst_gap:.3e})",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

pub fn cmd_sphere_test(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: SphereParams = ctx.config.experiment_params()?;
    let model = ctx.config.build_model()?;
    let noise = ctx.config.noise_config();
    let cfg = ctx.config.integrator_config(Some(ctx.seed));
    let n = ctx.config.n;
    let direction = match &params.direction {
        Some(c) => {
            if c.len() != n {
                return Err(CmdError::Config(format!(
                    "field `experiment.direction`: expected length {n}"
                )));
            }
            DVector::from_vec(c.clone())
        }
        None => DVector::from_fn(n, |i, _| if i == n - 1 { 1.0 } else { 0.0 }),
    };
    let report = match sphere_decay_test(
        &model,
        params.t_final,
        params.grid,
        cfg.h,
        cfg.path_count,
        &noise,
        ctx.seed,
        &direction,
        ctx.workers,
    ) {
        Ok(report) => report,
        Err(CoreError::FitRejected { r_squared }) => {
            // Statistical failure, not a numerical abort: more paths needed.
            eprintln!("sphere-test: decay fit rejected (R² = {r_squared:.4})");
            let mut summary = Summary::new("sphere-test", ctx.config_bytes, ctx.seed);
            summary
                .tolerance("fit_r_squared_min", 0.9)
                .metric_f64("r_squared", r_squared)
                .fail();
            summary.write(&output_path(&ctx.config.output_dir, "sphere_test.json"))?;
            println!("sphere-test: FAIL (decay fit rejected)");
            return Ok(false);
        }
        Err(e) => return Err(lift(e)),
    };

    let mut rows = Vec::new();
    for ((t, mean), stderr) in report.times.iter().zip(&report.means).zip(&report.stderrs) {
        rows.push(vec![fmt_f64(*t), fmt_f64(*mean), fmt_f64(*stderr)]);
    }
    write_csv(
        &output_path(&ctx.config.output_dir, "sphere_test.csv"),
        &["t", "mean", "stderr"],
        &rows,
    )?;

    let pass = report.within_budget(params.bias_budget);
    let mut summary = Summary::new("sphere-test", ctx.config_bytes, ctx.seed);
    summary
        .csv_schema("sphere_test-v1: t,mean,stderr")
        .tolerance("bias_budget_fraction", params.bias_budget)
        .metric_f64("fitted_rate", report.fitted_rate)
        .metric_f64("rate_stderr", report.rate_stderr)
        .metric_f64("predicted_rate", report.predicted_rate)
        .metric_f64("full_noise_rate", report.full_noise_rate)
        .metric_f64("r_squared", report.r_squared);
    if !pass {
        summary.fail();
        eprintln!(
            "sphere-test: fitted rate {:.4} ± {:.4} vs predicted {:.4}",
            report.fitted_rate, report.rate_stderr, report.predicted_rate
        );
    }
    summary.write(&output_path(&ctx.config.output_dir, "sphere_test.json"))?;
    println!(
        "sphere-test: {} (fitted {:.4} ± {:.4}, channel rate {:.4}, full-noise rate {:.4})",
        if pass { "PASS" } else { "FAIL" },
        report.fitted_rate,
        report.rate_stderr,
        report.predicted_rate,
        report.full_noise_rate
    );
    Ok(pass)
}

pub fn cmd_ham_check(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: HamParams = ctx.config.experiment_params()?;
    let n = ctx.config.n;
    let mut rows = Vec::new();
    let mut residuals = Vec::new();

    let configured = ctx.config.build_model()?;
    residuals.push(configured.ham_condition_residual().map_err(lift)?);
    for k in 0..params.inertia_samples {
        let mut rng = path_rng(ctx.seed, k as u64);
        let model = BallModel::new(n, InertiaOperator::random_conditioned(&mut rng, n))
            .map_err(lift)?;
        residuals.push(model.ham_condition_residual().map_err(lift)?);
    }
    let mut all_satisfied = true;
    for (idx, residual) in residuals.iter().enumerate() {
        let satisfied = *residual < tol::HAM_CONDITION;
        all_satisfied &= satisfied;
        rows.push(vec![
            idx.to_string(),
            fmt_f64(*residual),
            satisfied.to_string(),
        ]);
    }
    write_csv(
        &output_path(&ctx.config.output_dir, "ham_check.csv"),
        &["inertia_id", "residual", "satisfied"],
        &rows,
    )?;

    // n = 3 is guaranteed by the theory; larger n is informational.
    let pass = if n == 3 { all_satisfied } else { true };
    let mut summary = Summary::new("ham-check", ctx.config_bytes, ctx.seed);
    summary
        .csv_schema("ham_check-v1: inertia_id,residual,satisfied")
        .tolerance("ham_condition", tol::HAM_CONDITION)
        .metric(
            "max_residual",
            json!(residuals.iter().cloned().fold(0.0f64, f64::max)),
        )
        .metric("all_satisfied", json!(all_satisfied));
    if !pass {
        summary.fail();
    }
    summary.write(&output_path(&ctx.config.output_dir, "ham_check.json"))?;
    println!(
        "ham-check: {} ({} of {} satisfied)",
        if pass { "PASS" } else { "FAIL" },
        rows.iter().filter(|r| r[2] == "true").count(),
        rows.len()
    );
    Ok(pass)
}

pub fn cmd_drift_report(ctx: &CmdContext) -> Result<bool, CmdError> {
    let params: DriftParams = ctx.config.experiment_params()?;
    let model = ctx.config.build_model()?;
    let mut rng = path_rng(ctx.seed ^ 0xd21f, 0);
    let points = sample_points(&mut rng, ctx.config.n, params.samples.max(1));
    let report = drift_theorem_report(&model, &points).map_err(lift)?;

    let mut rows = Vec::new();
    for row in &report.rows {
        rows.push(vec![
            row.sample_id.to_string(),
            fmt_f64(row.residual_theorem),
            fmt_f64(row.max_mech_horiz),
            fmt_f64(row.max_vel_horiz),
            fmt_f64(row.ham_residual),
        ]);
    }
    write_csv(
        &output_path(&ctx.config.output_dir, "drift_report.csv"),
        &[
            "sample_id",
            "residual_theorem",
            "max_mech_horiz",
            "max_vel_horiz",
            "ham_residual",
        ],
        &rows,
    )?;

    let ham_ok = report.ham_residual < tol::HAM_CONDITION;
    let mut pass = report.max_residual_theorem < tol::DRIFT_GRADIENT
        && report.max_mech_horiz < tol::MECH_HORIZONTAL;
    if ham_ok && report.max_vel_horiz >= tol::VEL_HORIZONTAL {
        pass = false;
        eprintln!(
            "drift-report: velocity horizontality {:.3e} despite Hamiltonization residual {:.3e}",
            report.max_vel_horiz, report.ham_residual
        );
    }
    if report.max_residual_theorem >= tol::DRIFT_GRADIENT {
        eprintln!(
            "drift-report: theorem residual {:.3e} exceeds {:.1e}",
            report.max_residual_theorem,
            tol::DRIFT_GRADIENT
        );
    }
    let mut summary = Summary::new("drift-report", ctx.config_bytes, ctx.seed);
    summary
        .csv_schema(
            "drift_report-v1: sample_id,residual_theorem,max_mech_horiz,max_vel_horiz,ham_residual",
        )
        .tolerance("drift_gradient", tol::DRIFT_GRADIENT)
        .tolerance("mech_horizontal", tol::MECH_HORIZONTAL)
        .tolerance("vel_horizontal", tol::VEL_HORIZONTAL)
        .tolerance("ham_condition", tol::HAM_CONDITION)
        .metric_f64("max_residual_theorem", report.max_residual_theorem)
        .metric_f64("mean_residual_theorem", report.mean_residual_theorem)
        .metric_f64("max_mech_horiz", report.max_mech_horiz)
        .metric_f64("max_vel_horiz", report.max_vel_horiz)
        .metric_f64("ham_residual", report.ham_residual)
        .metric("ham_satisfied", json!(ham_ok));
    if !pass {
        summary.fail();
    }
    summary.write(&output_path(&ctx.config.output_dir, "drift_report.json"))?;
    println!(
        "drift-report: {} (max theorem residual {:.3e}, ham {})",
        if pass { "PASS" } else { "FAIL" },
        report.max_residual_theorem,
        if ham_ok { "satisfied" } else { "not satisfied" }
    );
    Ok(pass)
}
