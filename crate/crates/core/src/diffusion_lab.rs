//! Statistical verification layer: analytic application of the diffusion
//! generator, Monte-Carlo generator estimation, the drift-theorem report,
//! the ∇^nh-martingale check, and the sphere projection tests for the
//! homogeneous ball.

use nalgebra::DVector;
use rand::Rng;

use crate::ball_model::BallModel;
use crate::error::{CoreError, Result};
use crate::lie_kernel::{log_map, AlgebraVector, GroupPoint};
use crate::nh_geometry::{PointGeometry, TestFunction};
use crate::sde_engine::{draw_increments, one_step, path_rng, NoiseConfig, Scheme};

/// Analytic value of the generator against a Monte-Carlo estimate.
#[derive(Debug, Clone)]
pub struct GeneratorReport {
    pub point: GroupPoint,
    pub f: TestFunction,
    pub analytic: f64,
    pub mc_estimate: f64,
    pub stderr: f64,
    pub h: f64,
    pub paths: usize,
}

impl GeneratorReport {
    /// |estimate − analytic| ≤ 3·stderr + bias_fraction·|analytic|.
    pub fn within_budget(&self, bias_fraction: f64) -> bool {
        self.stderr.is_finite()
            && (self.mc_estimate - self.analytic).abs()
                <= 3.0 * self.stderr + bias_fraction * self.analytic.abs()
    }
}

/// Decay-rate fit of E⟨κ(Γ_t), c⟩ against the analytic eigen-rate.
#[derive(Debug, Clone)]
pub struct SphereTestReport {
    pub direction: DVector<f64>,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub fitted_rate: f64,
    pub rate_stderr: f64,
    /// −A f_c / f_c for the configured noise channels.
    pub predicted_rate: f64,
    /// Same eigen-rate with every channel active, reported alongside.
    pub full_noise_rate: f64,
    pub r_squared: f64,
    pub paths: usize,
    pub h: f64,
}

impl SphereTestReport {
    pub fn within_budget(&self, bias_fraction: f64) -> bool {
        (self.fitted_rate - self.predicted_rate).abs()
            <= 3.0 * self.rate_stderr + bias_fraction * self.predicted_rate.abs()
    }
}

/// Per-sample residuals of the drift theorem.
#[derive(Debug, Clone)]
pub struct DriftReportRow {
    pub sample_id: usize,
    /// ‖drift − ½grad log N‖.
    pub residual_theorem: f64,
    /// max_α |μ0(drift, ξ_α)|, the angular-momentum component.
    pub max_mech_horiz: f64,
    /// max_α |⟨ξ_α, drift⟩|, the angular-velocity component.
    pub max_vel_horiz: f64,
    pub ham_residual: f64,
}

#[derive(Debug, Clone)]
pub struct DriftReport {
    pub rows: Vec<DriftReportRow>,
    pub max_residual_theorem: f64,
    pub mean_residual_theorem: f64,
    pub max_mech_horiz: f64,
    pub max_vel_horiz: f64,
    pub ham_residual: f64,
}

/// ∇^nh-drift of the simulated process estimated from one-step increments:
/// E[log(s0⁻¹Γ_h)]/h plus the connection correction ½ΣΓ(P_k, P_k) from the
/// frozen noise fields.
#[derive(Debug, Clone)]
pub struct MartingaleReport {
    pub estimate_norm: f64,
    pub stderr: f64,
    pub h: f64,
    pub paths: usize,
}

fn parallel_paths<T, F>(paths: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.max(1).min(paths.max(1));
    let mut slots: Vec<Option<Result<T>>> = Vec::new();
    slots.resize_with(paths, || None);
    let slots = std::sync::Mutex::new(slots);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let path_id = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if path_id >= paths {
                    break;
                }
                let outcome = job(path_id);
                slots.lock().unwrap()[path_id] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every path index was claimed"))
        .collect()
}

/// Analytic A f(s) = V0.f + ½Σ(V_i V_i).f + ½Σ(U_a U_a).f restricted to the
/// active channels, with all field derivatives analytic.
pub fn apply_generator(
    model: &BallModel,
    f: &TestFunction,
    s: &GroupPoint,
    noise: &NoiseConfig,
) -> Result<f64> {
    let geo = PointGeometry::new(model, s)?;
    let frame = geo.frame();
    let mut total = 0.0;

    if noise.include_h0_drift {
        let v0 = frame
            .mu0_inv_apply(&model.apply_inertia(model.sum_nabla_i()))
            .scale(-0.5);
        total += f.deriv(s, &v0);
    }
    if noise.angular {
        for i in 0..model.m() {
            let w = frame.mu0_inv_apply(&model.apply_inertia(&model.v_frame()[i]));
            let self_deriv = frame
                .mu0_inv_apply(&frame.d_mu0_apply(&w, &w))
                .scale(-1.0);
            total += 0.5 * (f.second_deriv(s, &w, &w) + f.deriv(s, &self_deriv));
        }
    }
    if noise.translational {
        for a in 0..model.n() - 1 {
            let u = frame.mu0_inv_apply(frame.zeta(a));
            let from_zeta = frame.mu0_inv_apply(&frame.zeta(a).bracket(&u));
            let from_mu0 = frame.mu0_inv_apply(&frame.d_mu0_apply(&u, &u));
            let self_deriv = from_zeta.sub(&from_mu0);
            total += 0.5 * (f.second_deriv(s, &u, &u) + f.deriv(s, &self_deriv));
        }
    }
    Ok(total)
}

/// (E[f(Γ_h)] − f(s0))/h from `paths` one-step samples, with the analytic
/// generator value alongside.
pub fn mc_generator_estimate(
    model: &BallModel,
    f: &TestFunction,
    s0: &GroupPoint,
    h: f64,
    paths: usize,
    noise: &NoiseConfig,
    seed: u64,
    workers: usize,
) -> Result<GeneratorReport> {
    if paths < 2 {
        return Err(CoreError::InvalidConfig(
            "generator estimation needs at least 2 paths for a standard error".into(),
        ));
    }
    let f0 = f.eval(s0);
    let samples = parallel_paths(paths, workers, |path_id| {
        let mut rng = path_rng(seed, path_id as u64);
        let (db, dw) = draw_increments(&mut rng, model.m(), model.n() - 1, h);
        let s1 = one_step(model, s0, h, &db, &dw, Scheme::HeunExp, noise)?;
        Ok((f.eval(&s1) - f0) / h)
    })?;
    let mean = samples.iter().sum::<f64>() / paths as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / paths as f64;
    Ok(GeneratorReport {
        point: s0.clone(),
        f: f.clone(),
        analytic: apply_generator(model, f, s0, noise)?,
        mc_estimate: mean,
        stderr: (var / paths as f64).sqrt(),
        h,
        paths,
    })
}

/// κ(s) = sᵀe_n, constant on the left cosets Hs.
pub fn sphere_project(s: &GroupPoint) -> DVector<f64> {
    let n = s.n();
    DVector::from_fn(n, |i, _| s.matrix()[(n - 1, i)])
}

/// ∇^nh-drift estimate from one-step log increments at s0.
pub fn martingale_drift_estimate(
    model: &BallModel,
    s0: &GroupPoint,
    h: f64,
    paths: usize,
    noise: &NoiseConfig,
    seed: u64,
    workers: usize,
) -> Result<MartingaleReport> {
    let m = model.m();
    let s0_inv = s0.inverse();
    let increments = parallel_paths(paths, workers, |path_id| {
        let mut rng = path_rng(seed, path_id as u64);
        let (db, dw) = draw_increments(&mut rng, m, model.n() - 1, h);
        let s1 = one_step(model, s0, h, &db, &dw, Scheme::HeunExp, noise)?;
        Ok(log_map(&s0_inv.compose(&s1))?.coords())
    })?;
    let mut mean = DVector::<f64>::zeros(m);
    for inc in &increments {
        mean += inc;
    }
    mean /= paths as f64;
    let mut var_sum = 0.0;
    for inc in &increments {
        var_sum += (inc - &mean).norm_squared();
    }
    let stderr = (var_sum / paths as f64 / paths as f64).sqrt() / h;

    // Connection correction: drift = E[log]/h + ½ΣΓ(P_k, P_k) over active
    // noise fields with frozen values.
    let geo = PointGeometry::new(model, s0)?;
    let frame = geo.frame();
    let mut correction = AlgebraVector::zero(model.n());
    if noise.angular {
        for i in 0..m {
            let w = frame.mu0_inv_apply(&model.apply_inertia(&model.v_frame()[i]));
            correction = correction.add(&geo.nabla_nh(&w, &w).scale(0.5));
        }
    }
    if noise.translational {
        for a in 0..model.n() - 1 {
            let u = frame.mu0_inv_apply(frame.zeta(a));
            correction = correction.add(&geo.nabla_nh(&u, &u).scale(0.5));
        }
    }
    let estimate = AlgebraVector::from_coords(model.n(), &(mean / h)).add(&correction);
    Ok(MartingaleReport {
        estimate_norm: estimate.norm(),
        stderr,
        h,
        paths,
    })
}

/// Weighted least squares of y = a − r·t with known variances; returns
/// (rate, rate_stderr, r_squared).
fn fit_log_decay(times: &[f64], ys: &[f64], variances: &[f64]) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swt = 0.0;
    let mut swtt = 0.0;
    let mut swy = 0.0;
    let mut swty = 0.0;
    for ((&t, &y), &v) in times.iter().zip(ys).zip(variances) {
        let w = 1.0 / v.max(1e-300);
        sw += w;
        swt += w * t;
        swtt += w * t * t;
        swy += w * y;
        swty += w * t * y;
    }
    let det = sw * swtt - swt * swt;
    let intercept = (swtt * swy - swt * swty) / det;
    let slope = (sw * swty - swt * swy) / det;
    // Covariance of the slope for known observation variances.
    let slope_var = sw / det;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    for (&t, &y) in times.iter().zip(ys) {
        let fitted = intercept + slope * t;
        ss_res += (y - fitted) * (y - fitted);
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (-slope, slope_var.sqrt(), r_squared)
}

/// Simulates the projected diffusion of the homogeneous ball and fits the
/// exponential decay of E⟨κ(Γ_t), c⟩ on a uniform time grid, comparing with
/// the analytic eigen-rate of degree-1 sphere functions.
#[allow(clippy::too_many_arguments)]
pub fn sphere_decay_test(
    model: &BallModel,
    t_final: f64,
    grid: usize,
    h: f64,
    paths: usize,
    noise: &NoiseConfig,
    seed: u64,
    direction: &DVector<f64>,
    workers: usize,
) -> Result<SphereTestReport> {
    if !model.inertia().is_identity() {
        return Err(CoreError::InvalidConfig(
            "sphere decay test requires the homogeneous ball (identity inertia)".into(),
        ));
    }
    let n = model.n();
    if direction.len() != n {
        return Err(CoreError::InvalidConfig(format!(
            "direction must have length {n}"
        )));
    }
    let c = direction / direction.norm();
    let steps_total = (t_final / h).round() as usize;
    let grid = grid.clamp(2, steps_total);
    let stride = steps_total / grid;

    let s0 = GroupPoint::identity(n);
    let per_path = parallel_paths(paths, workers, |path_id| {
        let mut rng = path_rng(seed, path_id as u64);
        let mut s = s0.clone();
        let mut values = Vec::with_capacity(grid);
        for k in 1..=steps_total {
            let (db, dw) = draw_increments(&mut rng, model.m(), n - 1, h);
            s = one_step(model, &s, h, &db, &dw, Scheme::HeunExp, noise)?;
            if k % 100 == 0 || s.orth_defect() > 1e-10 {
                s = crate::lie_kernel::reorthonormalize(&s);
            }
            if k % stride == 0 && values.len() < grid {
                values.push(sphere_project(&s).dot(&c));
            }
        }
        Ok(values)
    })?;

    let times: Vec<f64> = (1..=grid).map(|j| (j * stride) as f64 * h).collect();
    let mut means = vec![0.0; grid];
    let mut sq = vec![0.0; grid];
    for values in &per_path {
        for (j, &v) in values.iter().enumerate() {
            means[j] += v;
            sq[j] += v * v;
        }
    }
    let mut stderrs = vec![0.0; grid];
    for j in 0..grid {
        means[j] /= paths as f64;
        let var = sq[j] / paths as f64 - means[j] * means[j];
        stderrs[j] = (var / paths as f64).sqrt();
    }

    // Eigen-rate of degree-1 functions; direction-independent, so evaluate
    // on the vertical height at the identity.
    let e_n = DVector::from_fn(n, |i, _| if i == n - 1 { 1.0 } else { 0.0 });
    let f_ref = TestFunction::sphere_height(&e_n);
    let predicted_rate = -apply_generator(model, &f_ref, &s0, noise)?;
    let full_noise_rate = -apply_generator(model, &f_ref, &s0, &NoiseConfig::full())?;

    // Log-linear fit; needs positive means throughout.
    if means.iter().any(|&m| m <= 0.0) {
        return Err(CoreError::FitRejected { r_squared: f64::NAN });
    }
    let log_means: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let log_vars: Vec<f64> = means
        .iter()
        .zip(&stderrs)
        .map(|(m, se)| (se / m) * (se / m))
        .collect();
    let (fitted_rate, rate_stderr, r_squared) = fit_log_decay(&times, &log_means, &log_vars);
    if r_squared < 0.9 {
        return Err(CoreError::FitRejected { r_squared });
    }

    Ok(SphereTestReport {
        direction: c,
        times,
        means,
        stderrs,
        fitted_rate,
        rate_stderr,
        predicted_rate,
        full_noise_rate,
        r_squared,
        paths,
        h,
    })
}

/// Mean of ⟨κ(Γ_t), c⟩ on a grid without any decay fit; used for the
/// orthogonal-direction symmetry check.
#[allow(clippy::too_many_arguments)]
pub fn sphere_mean_track(
    model: &BallModel,
    t_final: f64,
    grid: usize,
    h: f64,
    paths: usize,
    noise: &NoiseConfig,
    seed: u64,
    direction: &DVector<f64>,
    workers: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = model.n();
    let c = direction / direction.norm();
    let steps_total = (t_final / h).round() as usize;
    let grid = grid.clamp(1, steps_total);
    let stride = steps_total / grid;
    let s0 = GroupPoint::identity(n);
    let per_path = parallel_paths(paths, workers, |path_id| {
        let mut rng = path_rng(seed, path_id as u64);
        let mut s = s0.clone();
        let mut values = Vec::with_capacity(grid);
        for k in 1..=steps_total {
            let (db, dw) = draw_increments(&mut rng, model.m(), n - 1, h);
            s = one_step(model, &s, h, &db, &dw, Scheme::HeunExp, noise)?;
            if k % stride == 0 && values.len() < grid {
                values.push(sphere_project(&s).dot(&c));
            }
        }
        Ok(values)
    })?;
    let times: Vec<f64> = (1..=grid).map(|j| (j * stride) as f64 * h).collect();
    let mut means = vec![0.0; grid];
    let mut sq = vec![0.0; grid];
    for values in &per_path {
        for (j, &v) in values.iter().enumerate() {
            means[j] += v;
            sq[j] += v * v;
        }
    }
    let mut stderrs = vec![0.0; grid];
    for j in 0..grid {
        means[j] /= paths as f64;
        let var = sq[j] / paths as f64 - means[j] * means[j];
        stderrs[j] = (var / paths as f64).sqrt();
    }
    Ok((times, means, stderrs))
}

/// Residual table for the drift theorem over a set of sample points.
pub fn drift_theorem_report(model: &BallModel, points: &[GroupPoint]) -> Result<DriftReport> {
    assert!(!points.is_empty(), "at least one sample point required");
    let ham_residual = model.ham_condition_residual()?;
    let mut rows = Vec::with_capacity(points.len());
    for (sample_id, s) in points.iter().enumerate() {
        let geo = PointGeometry::new(model, s)?;
        let drift = geo.drift_vector();
        let mut max_mech: f64 = 0.0;
        let mut max_vel: f64 = 0.0;
        for alpha in 0..model.k() {
            let xi = model.xi(s, alpha);
            max_mech = max_mech.max(geo.frame().mu0_inner(&drift, &xi).abs());
            max_vel = max_vel.max(xi.inner(&drift).abs());
        }
        rows.push(DriftReportRow {
            sample_id,
            residual_theorem: geo.drift_gradient_residual(),
            max_mech_horiz: max_mech,
            max_vel_horiz: max_vel,
            ham_residual,
        });
    }
    let max_residual_theorem = rows.iter().map(|r| r.residual_theorem).fold(0.0, f64::max);
    let mean_residual_theorem =
        rows.iter().map(|r| r.residual_theorem).sum::<f64>() / rows.len() as f64;
    let max_mech_horiz = rows.iter().map(|r| r.max_mech_horiz).fold(0.0, f64::max);
    let max_vel_horiz = rows.iter().map(|r| r.max_vel_horiz).fold(0.0, f64::max);
    Ok(DriftReport {
        rows,
        max_residual_theorem,
        mean_residual_theorem,
        max_mech_horiz,
        max_vel_horiz,
        ham_residual,
    })
}

/// Haar-ish sample points for report sweeps.
pub fn sample_points<R: Rng + ?Sized>(rng: &mut R, n: usize, count: usize) -> Vec<GroupPoint> {
    (0..count)
        .map(|_| crate::lie_kernel::random_group_point(rng, n))
        .collect()
}
