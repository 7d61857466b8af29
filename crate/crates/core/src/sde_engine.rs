//! Left-trivialized Stratonovich integration of the projected non-holonomic
//! diffusion on SO(n) and of the base projection of the Brownian
//! construction on Q = SO(n)×R^{n−1}. Noise channels are switchable; paths
//! draw from counter-split per-path streams so ensembles are reproducible
//! independently of scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::ball_model::BallModel;
use crate::error::{CoreError, Result};
use crate::lie_kernel::{reorthonormalize, AlgebraVector, GroupPoint, SAFE_INCREMENT};

/// Which noise channels drive the equation: angular B¹..B^m, translational
/// W¹..W^{n−1}, and the deterministic δt channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseConfig {
    pub angular: bool,
    pub translational: bool,
    pub include_h0_drift: bool,
}

impl NoiseConfig {
    pub fn full() -> Self {
        Self {
            angular: true,
            translational: true,
            include_h0_drift: true,
        }
    }

    pub fn angular_only() -> Self {
        Self {
            angular: true,
            translational: false,
            include_h0_drift: true,
        }
    }

    pub fn translational_only() -> Self {
        Self {
            angular: false,
            translational: true,
            include_h0_drift: false,
        }
    }

    pub fn any_active(&self) -> bool {
        self.angular || self.translational || self.include_h0_drift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerExp,
    HeunExp,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub h: f64,
    pub scheme: Scheme,
    pub reorth_interval: usize,
    pub master_seed: u64,
    pub path_count: usize,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(CoreError::InvalidConfig("step size must be positive".into()));
        }
        if self.path_count == 0 {
            return Err(CoreError::InvalidConfig("path_count must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// State on Q = SO(n) × R^{n−1}: rotation and table position.
#[derive(Debug, Clone)]
pub struct QState {
    pub s: GroupPoint,
    pub x: DVector<f64>,
}

/// Left-trivialized coefficients of the projected SDE at one point:
/// δ(τ∘Γ) = V0 δt + Σ V_i δB^i + Σ U_a δW^a with
/// V0 = −½μ0⁻¹𝕀Σ∇^𝕀_{v_i}v_i, V_i = μ0⁻¹𝕀v_i, U_a = −μ0⁻¹ζ_a(s).
#[derive(Debug, Clone)]
pub struct NhFields {
    pub v0: AlgebraVector,
    pub v: Vec<AlgebraVector>,
    pub u: Vec<AlgebraVector>,
}

pub fn nh_vector_fields(model: &BallModel, s: &GroupPoint) -> Result<NhFields> {
    let coords = nh_fields_coords(model, s)?;
    let n = model.n();
    Ok(NhFields {
        v0: AlgebraVector::from_coords(n, &coords.v0),
        v: coords
            .v
            .iter()
            .map(|c| AlgebraVector::from_coords(n, c))
            .collect(),
        u: coords
            .u
            .iter()
            .map(|c| AlgebraVector::from_coords(n, c))
            .collect(),
    })
}

/// Coordinate form of the fields; the integrator hot loop works here and
/// converts to the matrix view only for the exponential update.
pub(crate) struct NhFieldsCoords {
    pub v0: DVector<f64>,
    pub v: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

pub(crate) fn nh_fields_coords(model: &BallModel, s: &GroupPoint) -> Result<NhFieldsCoords> {
    let frame = model.frame_at(s)?;
    let v0 = frame.mu0_inv_coords(model.i_sum_nabla_coords()) * -0.5;
    let v = model
        .iv_frame_coords()
        .iter()
        .map(|c| frame.mu0_inv_coords(c))
        .collect();
    let u = frame
        .zeta_coords()
        .iter()
        .map(|c| -frame.mu0_inv_coords(c))
        .collect();
    Ok(NhFieldsCoords { v0, v, u })
}

fn increment(
    fields: &NhFieldsCoords,
    dt: f64,
    db: &DVector<f64>,
    dw: &DVector<f64>,
    noise: &NoiseConfig,
    m: usize,
) -> DVector<f64> {
    let mut acc = DVector::zeros(m);
    if noise.include_h0_drift {
        acc.axpy(dt, &fields.v0, 1.0);
    }
    if noise.angular {
        for (i, vi) in fields.v.iter().enumerate() {
            acc.axpy(db[i], vi, 1.0);
        }
    }
    if noise.translational {
        for (a, ua) in fields.u.iter().enumerate() {
            acc.axpy(dw[a], ua, 1.0);
        }
    }
    acc
}

fn averaged_increment(
    at_s: &NhFieldsCoords,
    at_star: &NhFieldsCoords,
    dt: f64,
    db: &DVector<f64>,
    dw: &DVector<f64>,
    noise: &NoiseConfig,
    m: usize,
) -> DVector<f64> {
    let mut acc = DVector::zeros(m);
    if noise.include_h0_drift {
        acc.axpy(dt, &at_s.v0, 1.0);
    }
    if noise.angular {
        for i in 0..at_s.v.len() {
            acc.axpy(0.5 * db[i], &at_s.v[i], 1.0);
            acc.axpy(0.5 * db[i], &at_star.v[i], 1.0);
        }
    }
    if noise.translational {
        for a in 0..at_s.u.len() {
            acc.axpy(0.5 * dw[a], &at_s.u[a], 1.0);
            acc.axpy(0.5 * dw[a], &at_star.u[a], 1.0);
        }
    }
    acc
}

fn guard_increment(coords: &DVector<f64>) -> Result<()> {
    let norm = coords.norm();
    if norm >= SAFE_INCREMENT {
        return Err(CoreError::StepRejected {
            path: 0,
            step: 0,
            norm,
        });
    }
    Ok(())
}

/// One step of the projected diffusion. Increments are supplied by the
/// caller (Gaussian with variance dt per active channel); inactive channels
/// contribute nothing regardless of the supplied values.
pub fn one_step(
    model: &BallModel,
    s: &GroupPoint,
    dt: f64,
    db: &DVector<f64>,
    dw: &DVector<f64>,
    scheme: Scheme,
    noise: &NoiseConfig,
) -> Result<GroupPoint> {
    let n = model.n();
    let fields = nh_fields_coords(model, s)?;
    let a = increment(&fields, dt, db, dw, noise, model.m());
    if a.norm() == 0.0 {
        return Ok(s.clone());
    }
    guard_increment(&a)?;
    match scheme {
        Scheme::EulerExp => Ok(s.translate_exp(&AlgebraVector::from_coords(n, &a))),
        Scheme::HeunExp => {
            let predictor = s.translate_exp(&AlgebraVector::from_coords(n, &a));
            let fields_star = nh_fields_coords(model, &predictor)?;
            let b = averaged_increment(&fields, &fields_star, dt, db, dw, noise, model.m());
            guard_increment(&b)?;
            Ok(s.translate_exp(&AlgebraVector::from_coords(n, &b)))
        }
    }
}

/// One step of the base projection of the Hamiltonian Brownian system on Q:
/// the s-part is driven by −½Σ∇^𝕀_{v_i}v_i dt + Σ v_i dB^i in constant
/// left-invariant fields, the x-part by dx = Σ e_a dW^a. Momenta never feed
/// back into these coefficients.
pub fn q_bm_step(
    model: &BallModel,
    state: &QState,
    dt: f64,
    db: &DVector<f64>,
    dw: &DVector<f64>,
    scheme: Scheme,
    noise: &NoiseConfig,
) -> Result<QState> {
    let n = model.n();
    let mut a = AlgebraVector::zero(n);
    if noise.include_h0_drift {
        a = a.add(&model.sum_nabla_i().scale(-0.5 * dt));
    }
    if noise.angular {
        for (i, vi) in model.v_frame().iter().enumerate() {
            a = a.add(&vi.scale(db[i]));
        }
    }
    // The coefficients are constant in the left trivialization, so the Heun
    // corrector coincides with the predictor.
    let _ = scheme;
    let norm = a.norm();
    if norm >= SAFE_INCREMENT {
        return Err(CoreError::StepRejected {
            path: 0,
            step: 0,
            norm,
        });
    }
    let s = if norm == 0.0 {
        state.s.clone()
    } else {
        state.s.translate_exp(&a)
    };
    let mut x = state.x.clone();
    if noise.translational {
        x += dw;
    }
    Ok(QState { s, x })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based stream split: the stream for a path depends only on
/// (master_seed, path_index), so ensembles are reproducible for any worker
/// count and schedule.
pub fn path_rng(master_seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut state = master_seed ^ path_index.wrapping_mul(0xA24B_AED4_963E_E407);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}

/// Per-step Gaussian increments, drawn in the fixed channel order (B block
/// then W block) regardless of which channels are active.
pub fn draw_increments<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n_minus_1: usize,
    dt: f64,
) -> (DVector<f64>, DVector<f64>) {
    let sqrt_dt = dt.sqrt();
    let db = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal) * sqrt_dt);
    let dw = DVector::from_fn(n_minus_1, |_, _| rng.sample::<f64, _>(StandardNormal) * sqrt_dt);
    (db, dw)
}

/// Snapshots of one path at the configured stride.
#[derive(Debug, Clone)]
pub struct PathSnapshots {
    pub path_id: usize,
    pub times: Vec<f64>,
    pub states: Vec<GroupPoint>,
}

#[derive(Debug)]
pub struct PathEnsemble {
    pub terminal: Vec<GroupPoint>,
    pub snapshots: Vec<PathSnapshots>,
}

fn run_one_path(
    model: &BallModel,
    s0: &GroupPoint,
    steps: usize,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    snapshot_stride: usize,
    path_id: usize,
) -> Result<(GroupPoint, PathSnapshots)> {
    let mut rng = path_rng(cfg.master_seed, path_id as u64);
    let mut s = s0.clone();
    let mut snaps = PathSnapshots {
        path_id,
        times: Vec::new(),
        states: Vec::new(),
    };
    let record_all = snapshot_stride > 0;
    if record_all {
        snaps.times.push(0.0);
        snaps.states.push(s.clone());
    }
    for k in 1..=steps {
        let (db, dw) = draw_increments(&mut rng, model.m(), model.n() - 1, cfg.h);
        s = one_step(model, &s, cfg.h, &db, &dw, cfg.scheme, noise).map_err(|e| match e {
            CoreError::StepRejected { norm, .. } => CoreError::StepRejected {
                path: path_id,
                step: k,
                norm,
            },
            other => other,
        })?;
        if cfg.reorth_interval > 0 && (k % cfg.reorth_interval == 0 || s.orth_defect() > 1e-10) {
            s = reorthonormalize(&s);
        }
        if record_all && (k % snapshot_stride == 0 || k == steps) {
            snaps.times.push(k as f64 * cfg.h);
            snaps.states.push(s.clone());
        }
    }
    Ok((s, snaps))
}

/// Runs `cfg.path_count` independent paths to time `t_final`. Results are
/// keyed by path index, so any worker count produces identical output.
pub fn simulate_ensemble(
    model: &BallModel,
    s0: &GroupPoint,
    t_final: f64,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    snapshot_stride: usize,
    workers: usize,
) -> Result<PathEnsemble> {
    cfg.validate()?;
    if !noise.any_active() {
        return Err(CoreError::InvalidConfig(
            "at least one noise channel must be active for stochastic runs".into(),
        ));
    }
    let steps = (t_final / cfg.h).round().max(0.0) as usize;
    let paths = cfg.path_count;
    let workers = workers.max(1).min(paths);

    let mut slots: Vec<Option<Result<(GroupPoint, PathSnapshots)>>> = Vec::new();
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
                let outcome =
                    run_one_path(model, s0, steps, cfg, noise, snapshot_stride, path_id);
                slots.lock().unwrap()[path_id] = Some(outcome);
            });
        }
    });

    let mut terminal = Vec::with_capacity(paths);
    let mut snapshots = Vec::with_capacity(paths);
    for slot in slots.into_inner().unwrap() {
        let (s, snaps) = slot.expect("every path index was claimed by a worker")?;
        terminal.push(s);
        snapshots.push(snaps);
    }
    Ok(PathEnsemble {
        terminal,
        snapshots,
    })
}

/// Terminal Q-states of the base Brownian construction, same path-stream
/// contract as `simulate_ensemble`.
pub fn simulate_q_ensemble(
    model: &BallModel,
    q0: &QState,
    t_final: f64,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
    workers: usize,
) -> Result<Vec<QState>> {
    cfg.validate()?;
    let steps = (t_final / cfg.h).round().max(0.0) as usize;
    let paths = cfg.path_count;
    let workers = workers.max(1).min(paths);

    let mut slots: Vec<Option<Result<QState>>> = Vec::new();
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
                let mut rng = path_rng(cfg.master_seed, path_id as u64);
                let mut state = q0.clone();
                let mut outcome = Ok(());
                for k in 1..=steps {
                    let (db, dw) = draw_increments(&mut rng, model.m(), model.n() - 1, cfg.h);
                    match q_bm_step(model, &state, cfg.h, &db, &dw, cfg.scheme, noise) {
                        Ok(next_state) => state = next_state,
                        Err(e) => {
                            outcome = Err(match e {
                                CoreError::StepRejected { norm, .. } => CoreError::StepRejected {
                                    path: path_id,
                                    step: k,
                                    norm,
                                },
                                other => other,
                            });
                            break;
                        }
                    }
                    if cfg.reorth_interval > 0
                        && (k % cfg.reorth_interval == 0 || state.s.orth_defect() > 1e-10)
                    {
                        state.s = reorthonormalize(&state.s);
                    }
                }
                slots.lock().unwrap()[path_id] = Some(outcome.map(|_| state));
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every path index was claimed by a worker"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ball_model::InertiaOperator;
    use crate::lie_kernel::{ad, log_map, random_group_point, random_stabilizer};
    use crate::nh_geometry::TestFunction;
    use nalgebra::DMatrix;

    fn cfg(h: f64, paths: usize, seed: u64) -> IntegratorConfig {
        IntegratorConfig {
            h,
            scheme: Scheme::HeunExp,
            reorth_interval: 100,
            master_seed: seed,
            path_count: paths,
        }
    }

    #[test]
    fn homogeneous_fields_have_known_form() {
        let mut rng = path_rng(1, 0);
        let model = BallModel::homogeneous(4).unwrap();
        let s = random_group_point(&mut rng, 4);
        let fields = nh_vector_fields(&model, &s).unwrap();
        assert!(fields.v0.norm() < 1e-13);
        let frame = model.frame_at(&s).unwrap();
        for (i, vi) in fields.v.iter().enumerate() {
            let expected = frame.mu0_inv_apply(&model.v_frame()[i]);
            assert!(vi.sub(&expected).norm() < 1e-13);
        }
        for (a, ua) in fields.u.iter().enumerate() {
            let expected = frame.zeta(a).scale(-0.5);
            assert!(ua.sub(&expected).norm() < 1e-12, "U_{a} = −½ζ_a when 𝕀 = 1");
        }
    }

    #[test]
    fn fields_recompute_from_frame() {
        let mut rng = path_rng(2, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        for _ in 0..5 {
            let s = random_group_point(&mut rng, 3);
            let fields = nh_vector_fields(&model, &s).unwrap();
            let frame = model.frame_at(&s).unwrap();
            for (i, vi) in fields.v.iter().enumerate() {
                let direct = frame.mu0_inv_apply(&model.apply_inertia(&model.v_frame()[i]));
                assert!(vi.sub(&direct).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn angular_fields_span_the_algebra() {
        let mut rng = path_rng(3, 0);
        let model = BallModel::new(4, InertiaOperator::random_conditioned(&mut rng, 4)).unwrap();
        let s = random_group_point(&mut rng, 4);
        let fields = nh_vector_fields(&model, &s).unwrap();
        let m = model.m();
        let mut mat = DMatrix::zeros(m, m);
        for (i, vi) in fields.v.iter().enumerate() {
            mat.set_column(i, &vi.coords());
        }
        let rank = mat.svd(false, false).rank(1e-10);
        assert_eq!(rank, m);
    }

    #[test]
    fn zero_increments_leave_the_point_fixed() {
        let model = BallModel::homogeneous(3).unwrap();
        let mut rng = path_rng(4, 0);
        let s = random_group_point(&mut rng, 3);
        let noise = NoiseConfig {
            angular: true,
            translational: true,
            include_h0_drift: false,
        };
        let db = DVector::zeros(3);
        let dw = DVector::zeros(2);
        let out = one_step(&model, &s, 1e-3, &db, &dw, Scheme::HeunExp, &noise).unwrap();
        assert_eq!(out.matrix(), s.matrix());
    }

    #[test]
    fn euler_and_heun_agree_to_first_order() {
        let mut rng = path_rng(55, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        let s = random_group_point(&mut rng, 3);
        let (db, dw) = draw_increments(&mut rng, 3, 2, 1e-4);
        let euler = one_step(&model, &s, 1e-4, &db, &dw, Scheme::EulerExp, &NoiseConfig::full())
            .unwrap();
        let heun = one_step(&model, &s, 1e-4, &db, &dw, Scheme::HeunExp, &NoiseConfig::full())
            .unwrap();
        let gap = (euler.matrix() - heun.matrix()).norm();
        assert!(gap > 0.0, "corrector must actually act");
        // Field variation over the increment is O(√dt) and the increment
        // itself O(√dt), so the corrector moves the step by O(dt).
        assert!(gap < 10.0 * 1e-4, "corrector displacement {gap:.3e}");
    }

    #[test]
    fn inactive_channels_are_exactly_absent() {
        let mut rng = path_rng(5, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        let s = random_group_point(&mut rng, 3);
        let (db, dw) = draw_increments(&mut rng, 3, 2, 1e-3);
        let zeros2 = DVector::zeros(2);
        let zeros3 = DVector::zeros(3);

        let no_translation = NoiseConfig {
            angular: true,
            translational: false,
            include_h0_drift: true,
        };
        let a = one_step(&model, &s, 1e-3, &db, &dw, Scheme::HeunExp, &no_translation).unwrap();
        let b = one_step(
            &model,
            &s,
            1e-3,
            &db,
            &zeros2,
            Scheme::HeunExp,
            &NoiseConfig::full(),
        )
        .unwrap();
        assert_eq!(a.matrix(), b.matrix());

        let no_angular = NoiseConfig {
            angular: false,
            translational: true,
            include_h0_drift: false,
        };
        let c = one_step(&model, &s, 1e-3, &db, &dw, Scheme::HeunExp, &no_angular).unwrap();
        let d = one_step(
            &model,
            &s,
            1e-3,
            &zeros3,
            &dw,
            Scheme::HeunExp,
            &NoiseConfig {
                angular: true,
                translational: true,
                include_h0_drift: false,
            },
        )
        .unwrap();
        assert_eq!(c.matrix(), d.matrix());
    }

    #[test]
    fn heun_one_step_martingale_for_homogeneous_ball() {
        let model = BallModel::homogeneous(3).unwrap();
        let mut seed_rng = path_rng(6, 0);
        let s0 = random_group_point(&mut seed_rng, 3);
        let h = 1e-3;
        let samples = 100_000;
        let m = model.m();
        let mut mean = DVector::<f64>::zeros(m);
        let mut sq = DVector::<f64>::zeros(m);
        for path in 0..samples {
            let mut rng = path_rng(77, path as u64);
            let (db, dw) = draw_increments(&mut rng, 3, 2, h);
            let s1 = one_step(&model, &s0, h, &db, &dw, Scheme::HeunExp, &NoiseConfig::full())
                .unwrap();
            let inc = log_map(&s0.inverse().compose(&s1)).unwrap().coords();
            mean += &inc;
            sq += inc.component_mul(&inc);
        }
        mean /= samples as f64;
        sq /= samples as f64;
        let mut stderr_sq = 0.0;
        for i in 0..m {
            stderr_sq += (sq[i] - mean[i] * mean[i]) / samples as f64;
        }
        let stderr = stderr_sq.sqrt();
        let budget = 3.0 * stderr + 10.0 * h * h;
        assert!(
            mean.norm() <= budget,
            "‖E[log increment]‖ = {:.3e} exceeds {budget:.3e}",
            mean.norm()
        );
    }

    #[test]
    fn weak_error_shrinks_linearly_under_step_halving() {
        let mut rng = path_rng(7, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        let s0 = random_group_point(&mut rng, 3);
        let f = TestFunction::random(&mut rng, 3);
        let t_final = 0.5_f64;
        let h0 = 0.01_f64;
        let paths = 20_000;
        // Common refined increments across the three levels.
        let mut means = [0.0f64; 3];
        for path in 0..paths {
            let mut prng = path_rng(1234, path as u64);
            let fine_steps = (t_final / (h0 / 4.0)).round() as usize;
            let mut fine: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(fine_steps);
            for _ in 0..fine_steps {
                fine.push(draw_increments(&mut prng, 3, 2, h0 / 4.0));
            }
            for (level, group) in [4usize, 2, 1].iter().enumerate() {
                let h = h0 / (4 / group) as f64;
                let mut s = s0.clone();
                let mut idx = 0;
                while idx < fine_steps {
                    let mut db = DVector::zeros(3);
                    let mut dw = DVector::zeros(2);
                    for _ in 0..*group {
                        db += &fine[idx].0;
                        dw += &fine[idx].1;
                        idx += 1;
                    }
                    s = one_step(&model, &s, h, &db, &dw, Scheme::HeunExp, &NoiseConfig::full())
                        .unwrap();
                }
                means[level] += f.eval(&s);
            }
        }
        for mean in &mut means {
            *mean /= paths as f64;
        }
        // means[0] is h0, means[1] h0/2, means[2] h0/4.
        let d1 = means[0] - means[1];
        let d2 = means[1] - means[2];
        let slope = (d1 / d2).abs().log2();
        assert!(
            (slope - 1.0).abs() < 0.3,
            "Richardson slope {slope:.3} (d1 {d1:.3e}, d2 {d2:.3e})"
        );
    }

    #[test]
    fn ensemble_is_deterministic_across_worker_counts() {
        let mut rng = path_rng(8, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        let s0 = random_group_point(&mut rng, 3);
        let config = cfg(1e-3, 16, 4242);
        let one = simulate_ensemble(&model, &s0, 0.05, &config, &NoiseConfig::full(), 10, 1)
            .unwrap();
        let eight = simulate_ensemble(&model, &s0, 0.05, &config, &NoiseConfig::full(), 10, 8)
            .unwrap();
        for (a, b) in one.terminal.iter().zip(&eight.terminal) {
            assert_eq!(a.matrix(), b.matrix());
        }
        for (a, b) in one.snapshots.iter().zip(&eight.snapshots) {
            assert_eq!(a.times, b.times);
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert_eq!(sa.matrix(), sb.matrix());
            }
        }
        let mean_defect: f64 = one
            .terminal
            .iter()
            .map(|s| s.orth_defect())
            .sum::<f64>()
            / one.terminal.len() as f64;
        assert!(mean_defect < 1e-9);
    }

    #[test]
    fn ensemble_rejects_all_inactive_channels() {
        let model = BallModel::homogeneous(3).unwrap();
        let s0 = GroupPoint::identity(3);
        let silent = NoiseConfig {
            angular: false,
            translational: false,
            include_h0_drift: false,
        };
        assert!(matches!(
            simulate_ensemble(&model, &s0, 0.1, &cfg(1e-3, 2, 1), &silent, 0, 1),
            Err(CoreError::InvalidConfig(_))
        ));
    }

    #[test]
    fn homogeneous_dynamics_are_stabilizer_equivariant() {
        let mut rng = path_rng(9, 0);
        let n = 3;
        let model = BallModel::homogeneous(n).unwrap();
        let s0 = random_group_point(&mut rng, n);
        let h_elem = random_stabilizer(&mut rng, n);
        let (db, dw) = draw_increments(&mut rng, 3, 2, 1e-3);

        // Angular-only: the increments transport verbatim.
        let angular = NoiseConfig::angular_only();
        let lhs = one_step(
            &model,
            &h_elem.compose(&s0),
            1e-3,
            &db,
            &dw,
            Scheme::HeunExp,
            &angular,
        )
        .unwrap();
        let rhs = h_elem.compose(
            &one_step(&model, &s0, 1e-3, &db, &dw, Scheme::HeunExp, &angular).unwrap(),
        );
        assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-10);

        // Full noise: the translational increments rotate by the matrix of
        // Ad(h⁻¹) restricted to the Z block.
        let mut rot = DMatrix::zeros(n - 1, n - 1);
        for a in 0..n - 1 {
            let transported = ad(&h_elem.inverse(), &model.basis().z()[a]);
            for b in 0..n - 1 {
                rot[(b, a)] = model.basis().z()[b].inner(&transported);
            }
        }
        let dw_rot = &rot * &dw;
        let full = NoiseConfig::full();
        let lhs = one_step(
            &model,
            &h_elem.compose(&s0),
            1e-3,
            &db,
            &dw,
            Scheme::HeunExp,
            &full,
        )
        .unwrap();
        let rhs = h_elem.compose(
            &one_step(&model, &s0, 1e-3, &db, &dw_rot, Scheme::HeunExp, &full).unwrap(),
        );
        assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-10);
    }

    #[test]
    fn q_step_homogeneous_has_no_group_drift() {
        let model = BallModel::homogeneous(3).unwrap();
        assert!(model.sum_nabla_i().norm() < 1e-14);
        let state = QState {
            s: GroupPoint::identity(3),
            x: DVector::zeros(2),
        };
        let db = DVector::zeros(3);
        let dw = DVector::from_vec(vec![0.3, -0.1]);
        let out = q_bm_step(
            &model,
            &state,
            1e-3,
            &db,
            &dw,
            Scheme::HeunExp,
            &NoiseConfig::full(),
        )
        .unwrap();
        assert_eq!(out.s.matrix(), state.s.matrix());
        assert_eq!(out.x, DVector::from_vec(vec![0.3, -0.1]));
    }

    #[test]
    fn long_run_stays_finite() {
        let mut rng = path_rng(10, 0);
        let model = BallModel::new(3, InertiaOperator::random_conditioned(&mut rng, 3)).unwrap();
        let s0 = random_group_point(&mut rng, 3);
        let config = IntegratorConfig {
            h: 1e-2,
            scheme: Scheme::HeunExp,
            reorth_interval: 100,
            master_seed: 99,
            path_count: 1,
        };
        let steps = 1_000_000;
        let mut rng = path_rng(config.master_seed, 0);
        let mut s = s0;
        for k in 1..=steps {
            let (db, dw) = draw_increments(&mut rng, 3, 2, config.h);
            s = one_step(&model, &s, config.h, &db, &dw, config.scheme, &NoiseConfig::full())
                .unwrap();
            if k % config.reorth_interval == 0 || s.orth_defect() > 1e-10 {
                s = reorthonormalize(&s);
            }
        }
        assert!(s.matrix().iter().all(|x| x.is_finite()));
        assert!(s.orth_defect() < 1e-9);
    }
}
