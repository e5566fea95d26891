//! Pose recovery from location fields.
//!
//! Every foreground pixel of a field pairs an image position with a model
//! point. A normalized DLT gives a first projection matrix, which is
//! projected onto the seven-parameter camera family and refined by damped
//! least squares on the reprojection error.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, PoseParams, ProjectionMatrix, RotationMatrix, DEFAULT_NEAR_PLANE};
use crate::field::{LocationField, PixelFrame};

/// Minimum number of correspondences for a full solve.
pub const MIN_CORRESPONDENCES: usize = 6;

const DLT_RANK_TOLERANCE: f64 = 1e-7;
const PLANARITY_TOLERANCE: f64 = 1e-10;
const COST_TOLERANCE: f64 = 1e-12;
const STEP_TOLERANCE: f64 = 1e-12;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;
const GRID_SHORT_ITERATIONS: usize = 25;

type Mat7 = SMatrix<f64, 7, 7>;
type Vec7 = SVector<f64, 7>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("field has {count} foreground pixels, at least 6 are needed")]
    TooFewForeground { count: usize },
    #[error("correspondences are degenerate (coplanar or collinear)")]
    DegenerateConfiguration,
    #[error("normal equations could not be solved")]
    NumericalFailure,
    #[error(transparent)]
    InvalidPose(#[from] CameraError),
}

/// One image position and the model point seen there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
    pub source_width: usize,
    pub source_height: usize,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>, source_width: usize, source_height: usize) -> Self {
        CorrespondenceSet { items, source_width, source_height }
    }

    /// Exact projections of `points` under `pose`; points that fail to
    /// project are skipped.
    pub fn from_pose(pose: &PoseParams, points: &[Vector3<f64>], width: usize, height: usize) -> Self {
        let rotation = pose.rotation();
        let items = points
            .iter()
            .filter_map(|p| {
                crate::camera::project_with(&rotation, pose, p, DEFAULT_NEAR_PLANE)
                    .ok()
                    .map(|pixel| Correspondence { pixel, point: *p })
            })
            .collect();
        CorrespondenceSet::new(items, width, height)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn is_finite(&self) -> bool {
        self.items
            .iter()
            .all(|c| c.pixel.iter().all(|v| v.is_finite()) && c.point.iter().all(|v| v.is_finite()))
    }
}

/// Pairs foreground pixels with their stored points.
///
/// Pixel positions are the centers of the image pixels the values came from
/// (see [`PixelFrame`]). When there are more than `max_n` foreground pixels a
/// seeded subset is drawn; the result is kept in row-major order.
pub fn correspondences_from_field(
    field: &LocationField,
    frame: &PixelFrame,
    max_n: usize,
    seed: u64,
) -> Result<CorrespondenceSet, SolverError> {
    let all: Vec<Correspondence> = field
        .foreground()
        .filter_map(|(x, y, p)| {
            frame.image_position(x, y).map(|(px, py)| Correspondence {
                pixel: Vector2::new(px, py),
                point: Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64),
            })
        })
        .collect();
    if all.len() < MIN_CORRESPONDENCES {
        return Err(SolverError::TooFewForeground { count: all.len() });
    }
    let (width, height) = match frame {
        PixelFrame::Image => (field.width(), field.height()),
        PixelFrame::Crop(c) => (c.source_width, c.source_height),
    };
    if max_n >= all.len() {
        return Ok(CorrespondenceSet::new(all, width, height));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, all.len(), max_n.max(MIN_CORRESPONDENCES)).into_vec();
    picked.sort_unstable();
    let items = picked.into_iter().map(|i| all[i]).collect();
    Ok(CorrespondenceSet::new(items, width, height))
}

struct Normalizer2 {
    cx: f64,
    cy: f64,
    s: f64,
}

struct Normalizer3 {
    c: Vector3<f64>,
    s: f64,
}

fn normalizers(c: &CorrespondenceSet) -> (Normalizer2, Normalizer3) {
    let n = c.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    let mut c3 = Vector3::zeros();
    for k in &c.items {
        cx += k.pixel.x;
        cy += k.pixel.y;
        c3 += k.point;
    }
    cx /= n;
    cy /= n;
    c3 /= n;
    let mut d2 = 0.0;
    let mut d3 = 0.0;
    for k in &c.items {
        d2 += ((k.pixel.x - cx).powi(2) + (k.pixel.y - cy).powi(2)).sqrt();
        d3 += (k.point - c3).norm();
    }
    d2 /= n;
    d3 /= n;
    let s2 = if d2 > 0.0 { core::f64::consts::SQRT_2 / d2 } else { 1.0 };
    let s3 = if d3 > 0.0 { 3f64.sqrt() / d3 } else { 1.0 };
    (Normalizer2 { cx, cy, s: s2 }, Normalizer3 { c: c3, s: s3 })
}

fn is_planar(c: &CorrespondenceSet, n3: &Normalizer3) -> bool {
    let mut cov = Matrix3::zeros();
    for k in &c.items {
        let d = (k.point - n3.c) * n3.s;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let max = eig.max();
    !(max > 0.0) || eig.min() / max < PLANARITY_TOLERANCE
}

/// Normalized DLT estimate of the projection matrix.
pub fn dlt(c: &CorrespondenceSet) -> Result<ProjectionMatrix, SolverError> {
    if c.len() < MIN_CORRESPONDENCES {
        return Err(SolverError::TooFewForeground { count: c.len() });
    }
    if !c.is_finite() {
        return Err(SolverError::NumericalFailure);
    }
    let (n2, n3) = normalizers(c);
    if is_planar(c, &n3) {
        return Err(SolverError::DegenerateConfiguration);
    }
    let mut a = DMatrix::<f64>::zeros(2 * c.len(), 12);
    for (i, k) in c.items.iter().enumerate() {
        let x = (k.pixel.x - n2.cx) * n2.s;
        let y = (k.pixel.y - n2.cy) * n2.s;
        let p = (k.point - n3.c) * n3.s;
        let h = [p.x, p.y, p.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = h[j];
            a[(2 * i, 8 + j)] = -x * h[j];
            a[(2 * i + 1, 4 + j)] = h[j];
            a[(2 * i + 1, 8 + j)] = -y * h[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(SolverError::NumericalFailure)?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let largest = s[order[0]];
    if !(largest > 0.0) || s[order[10]] / largest < DLT_RANK_TOLERANCE {
        return Err(SolverError::DegenerateConfiguration);
    }
    let null = v_t.row(order[11]);
    let mut p_hat = nalgebra::Matrix3x4::zeros();
    for r in 0..3 {
        for col in 0..4 {
            p_hat[(r, col)] = null[4 * r + col];
        }
    }
    let t_inv = Matrix3::new(1.0 / n2.s, 0.0, n2.cx, 0.0, 1.0 / n2.s, n2.cy, 0.0, 0.0, 1.0);
    let mut u = nalgebra::Matrix4::identity() * n3.s;
    u[(3, 3)] = 1.0;
    for r in 0..3 {
        u[(r, 3)] = -n3.s * n3.c[r];
    }
    Ok(ProjectionMatrix::from_matrix(t_inv * p_hat * u))
}

/// DLT followed by projection onto the `K[R|(0,0,d)]` family.
pub fn linear_init(c: &CorrespondenceSet) -> Result<PoseParams, SolverError> {
    let p = dlt(c)?;
    let (pose, _) = p.nearest_pose().map_err(|_| SolverError::DegenerateConfiguration)?;
    pose.validate().map_err(|_| SolverError::DegenerateConfiguration)?;
    Ok(pose.canonical())
}

/// Refinement state: rotation kept as a matrix, increments
/// `[omega (3), ln d, ln f, u, v]` with `R <- exp(omega) R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseState {
    pub rotation: Matrix3<f64>,
    pub depth: f64,
    pub focal_px: f64,
    pub principal_u_px: f64,
    pub principal_v_px: f64,
}

impl PoseState {
    pub fn from_pose(pose: &PoseParams) -> Self {
        PoseState {
            rotation: pose.rotation().into_inner(),
            depth: pose.depth,
            focal_px: pose.focal_px,
            principal_u_px: pose.principal_u_px,
            principal_v_px: pose.principal_v_px,
        }
    }

    pub fn to_pose(&self) -> Result<PoseParams, CameraError> {
        let rotation = RotationMatrix::nearest(&self.rotation);
        let pose = PoseParams {
            azimuth_rad: 0.0,
            elevation_rad: 0.0,
            theta_rad: 0.0,
            depth: self.depth,
            focal_px: self.focal_px,
            principal_u_px: self.principal_u_px,
            principal_v_px: self.principal_v_px,
        }
        .with_rotation(&rotation);
        pose.validate()?;
        Ok(pose.canonical())
    }

    pub fn retract(&self, delta: &[f64; 7]) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        PoseState {
            rotation: RotationMatrix::exp(&omega).into_inner() * self.rotation,
            depth: self.depth * delta[3].exp(),
            focal_px: self.focal_px * delta[4].exp(),
            principal_u_px: self.principal_u_px + delta[5],
            principal_v_px: self.principal_v_px + delta[6],
        }
    }

    fn camera_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let mut pc = self.rotation * x;
        pc.z += self.depth;
        pc
    }

    /// Stacked `(x, y)` reprojection residuals, `None` if a point is not in
    /// front of the camera.
    pub fn residuals(&self, c: &CorrespondenceSet) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * c.len());
        for k in &c.items {
            let pc = self.camera_point(&k.point);
            if !(pc.z > DEFAULT_NEAR_PLANE) {
                return None;
            }
            out.push(self.focal_px * pc.x / pc.z + self.principal_u_px - k.pixel.x);
            out.push(self.focal_px * pc.y / pc.z + self.principal_v_px - k.pixel.y);
        }
        Some(out)
    }

    /// Analytic Jacobian of [`PoseState::residuals`] with respect to the
    /// increment, one row per residual.
    pub fn jacobian(&self, c: &CorrespondenceSet) -> Option<Vec<[f64; 7]>> {
        let mut out = Vec::with_capacity(2 * c.len());
        for k in &c.items {
            let rx = self.rotation * k.point;
            let pc = Vector3::new(rx.x, rx.y, rx.z + self.depth);
            if !(pc.z > DEFAULT_NEAR_PLANE) {
                return None;
            }
            let (rows, _) = point_jacobian(self, &rx, &pc);
            out.extend_from_slice(&rows);
        }
        Some(out)
    }
}

#[inline]
fn point_jacobian(s: &PoseState, rx: &Vector3<f64>, pc: &Vector3<f64>) -> ([[f64; 7]; 2], Vector2<f64>) {
    let iz = 1.0 / pc.z;
    let f = s.focal_px;
    let xn = pc.x * iz;
    let yn = pc.y * iz;
    // d(pc)/d(omega) = -[R X]x
    let dpc = [
        Vector3::new(0.0, -rx.z, rx.y),
        Vector3::new(rx.z, 0.0, -rx.x),
        Vector3::new(-rx.y, rx.x, 0.0),
    ];
    let mut jx = [0.0; 7];
    let mut jy = [0.0; 7];
    for k in 0..3 {
        let d = &dpc[k];
        jx[k] = f * iz * (d.x - xn * d.z);
        jy[k] = f * iz * (d.y - yn * d.z);
    }
    jx[3] = -f * iz * xn * s.depth;
    jy[3] = -f * iz * yn * s.depth;
    jx[4] = f * xn;
    jy[4] = f * yn;
    jx[5] = 1.0;
    jy[6] = 1.0;
    ([jx, jy], Vector2::new(f * xn, f * yn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_correspondences: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Huber threshold in pixels; `None` for plain least squares.
    pub huber_px: Option<f64>,
    /// Depth prior for grid initialization.
    pub depth_prior: (f64, f64),
    /// Focal prior for grid initialization.
    pub focal_prior_px: (f64, f64),
    /// Linear results with a larger RMS are also tried against the grid.
    pub fallback_rms_px: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_correspondences: 2000,
            seed: 0,
            max_iterations: 200,
            huber_px: None,
            depth_prior: (3.0, 30.0),
            focal_prior_px: (500.0, 3000.0),
            fallback_rms_px: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSource {
    Linear,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub pose: PoseParams,
    pub rms_residual: f64,
    pub iterations: usize,
    pub init_source: InitSource,
}

fn weighted_cost(residuals: &[f64], huber: Option<f64>) -> f64 {
    residuals
        .chunks_exact(2)
        .map(|r| {
            let s2 = r[0] * r[0] + r[1] * r[1];
            match huber {
                Some(k) if s2 > k * k => 2.0 * k * s2.sqrt() - k * k,
                _ => s2,
            }
        })
        .sum()
}

fn rms(residuals: &[f64]) -> f64 {
    let n = residuals.len() / 2;
    if n == 0 {
        return 0.0;
    }
    (residuals.iter().map(|r| r * r).sum::<f64>() / n as f64).sqrt()
}

/// Reprojection RMS in pixels, `None` if a point is behind the camera.
pub fn reprojection_rms(c: &CorrespondenceSet, pose: &PoseParams) -> Option<f64> {
    PoseState::from_pose(pose).residuals(c).map(|r| rms(&r))
}

fn normal_equations(s: &PoseState, c: &CorrespondenceSet, huber: Option<f64>) -> Option<(Mat7, Vec7)> {
    let mut h = Mat7::zeros();
    let mut g = Vec7::zeros();
    for k in &c.items {
        let rx = s.rotation * k.point;
        let pc = Vector3::new(rx.x, rx.y, rx.z + s.depth);
        if !(pc.z > DEFAULT_NEAR_PLANE) {
            return None;
        }
        let (rows, proj) = point_jacobian(s, &rx, &pc);
        let r = [proj.x + s.principal_u_px - k.pixel.x, proj.y + s.principal_v_px - k.pixel.y];
        let w = match huber {
            Some(t) => {
                let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
                if n > t {
                    t / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (row, res) in rows.iter().zip(r) {
            let j = Vec7::from_column_slice(row);
            h += (j * j.transpose()) * w;
            g += j * (res * w);
        }
    }
    Some((h, g))
}

/// Levenberg-Marquardt refinement of all seven parameters.
///
/// Stops when the relative cost decrease falls below 1e-12, the step norm
/// falls below 1e-12, the cost reaches zero or after `max_iterations`
/// accepted steps. The returned pose never has a higher cost than `init`.
pub fn refine(c: &CorrespondenceSet, init: &PoseParams, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    init.validate()?;
    if c.len() < MIN_CORRESPONDENCES {
        return Err(SolverError::TooFewForeground { count: c.len() });
    }
    if !c.is_finite() {
        return Err(SolverError::NumericalFailure);
    }
    let huber = opts.huber_px;
    let mut state = PoseState::from_pose(init);
    let init_residuals = state.residuals(c).ok_or(SolverError::InvalidPose(CameraError::BehindCamera {
        depth: f64::NAN,
    }))?;
    let init_cost = weighted_cost(&init_residuals, huber);
    if !init_cost.is_finite() {
        return Err(SolverError::NumericalFailure);
    }
    let mut cost = init_cost;
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;
    while iterations < opts.max_iterations && cost > 0.0 {
        let (h, g) = normal_equations(&state, c, huber).ok_or(SolverError::NumericalFailure)?;
        let scale = h.diagonal().max().max(f64::MIN_POSITIVE);
        let mut accepted = None;
        let mut solvable = false;
        while lambda <= LAMBDA_MAX {
            let mut damped = h;
            for i in 0..7 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12 * scale);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            solvable = true;
            let step = chol.solve(&(-g));
            if !step.iter().all(|v| v.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let delta: [f64; 7] = step.into();
            let trial = state.retract(&delta);
            if let Some(res) = trial.residuals(c) {
                let trial_cost = weighted_cost(&res, huber);
                if trial_cost.is_finite() && trial_cost < cost {
                    accepted = Some((trial, trial_cost, step.norm()));
                    break;
                }
            }
            if step.norm() < STEP_TOLERANCE {
                break;
            }
            lambda *= 10.0;
        }
        if !solvable {
            return Err(SolverError::NumericalFailure);
        }
        let Some((trial, trial_cost, step_norm)) = accepted else {
            break;
        };
        let relative = (cost - trial_cost) / cost;
        state = trial;
        cost = trial_cost;
        iterations += 1;
        lambda = (lambda / 10.0).max(1e-15);
        if relative < COST_TOLERANCE || step_norm < STEP_TOLERANCE {
            break;
        }
    }
    let mut pose = state.to_pose()?;
    let mut final_residuals = PoseState::from_pose(&pose).residuals(c);
    let final_cost = final_residuals.as_ref().map(|r| weighted_cost(r, huber));
    if iterations == 0 || !matches!(final_cost, Some(fc) if fc <= init_cost) {
        pose = init.canonical();
        final_residuals = Some(init_residuals);
        iterations = 0;
    }
    Ok(SolveResult {
        pose,
        rms_residual: rms(final_residuals.as_deref().unwrap_or(&[])),
        iterations,
        init_source: InitSource::Linear,
    })
}

fn grid_seeds(c: &CorrespondenceSet, opts: &SolveOptions) -> Vec<PoseParams> {
    let n = c.len() as f64;
    let mut pix = Vector2::zeros();
    let mut centroid = Vector3::zeros();
    for k in &c.items {
        pix += k.pixel;
        centroid += k.point;
    }
    pix /= n;
    centroid /= n;
    let mut spread2 = 0.0;
    let mut spread3 = 0.0;
    for k in &c.items {
        spread2 += (k.pixel - pix).norm_squared();
        spread3 += (k.point - centroid).norm_squared();
    }
    let (spread2, spread3) = ((spread2 / n).sqrt(), (spread3 / n).sqrt());
    let focal = (opts.focal_prior_px.0 * opts.focal_prior_px.1).sqrt();
    let (d_lo, d_hi) = opts.depth_prior;
    let depth = if spread2 > 0.0 && spread3 > 0.0 {
        (focal * spread3 / spread2).clamp(d_lo, d_hi)
    } else {
        (d_lo * d_hi).sqrt()
    };
    let mut seeds = Vec::with_capacity(24);
    for e_deg in [0.0f64, 30.0] {
        for a_step in 0..12 {
            let a = (a_step as f64 * 30.0).to_radians();
            let e = e_deg.to_radians();
            let rc = crate::camera::rotation_from_angles(a, e, 0.0).rotate(&centroid);
            let z = (depth + rc.z).max(DEFAULT_NEAR_PLANE);
            let u = pix.x - focal * rc.x / z;
            let v = pix.y - focal * rc.y / z;
            if let Ok(p) = PoseParams::new(a, e, 0.0, depth, focal, u, v) {
                seeds.push(p);
            }
        }
    }
    seeds
}

fn grid_solve(c: &CorrespondenceSet, opts: &SolveOptions) -> Option<SolveResult> {
    let short = SolveOptions { max_iterations: GRID_SHORT_ITERATIONS, ..*opts };
    let mut best: Option<SolveResult> = None;
    for seed in grid_seeds(c, opts) {
        let Ok(r) = refine(c, &seed, &short) else { continue };
        if best.is_none_or(|b| r.rms_residual < b.rms_residual) {
            best = Some(r);
        }
    }
    let start = best?;
    let mut full = refine(c, &start.pose, opts).ok()?;
    full.iterations += start.iterations;
    full.init_source = InitSource::Grid;
    Some(full)
}

/// Solves an already extracted correspondence set.
pub fn solve_correspondences(c: &CorrespondenceSet, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    if c.len() < MIN_CORRESPONDENCES {
        return Err(SolverError::TooFewForeground { count: c.len() });
    }
    let linear = linear_init(c).ok().and_then(|init| refine(c, &init, opts).ok());
    if let Some(r) = linear {
        if r.rms_residual <= opts.fallback_rms_px {
            return Ok(r);
        }
    }
    let grid = grid_solve(c, opts);
    match (linear, grid) {
        (Some(l), Some(g)) => Ok(if g.rms_residual < l.rms_residual { g } else { l }),
        (Some(l), None) => Ok(l),
        (None, Some(g)) => Ok(g),
        (None, None) => Err(SolverError::NumericalFailure),
    }
}

/// Full pipeline: correspondences, linear or grid initialization, refinement.
pub fn solve_pose(field: &LocationField, frame: &PixelFrame, opts: &SolveOptions) -> Result<SolveResult, SolverError> {
    let c = correspondences_from_field(field, frame, opts.max_correspondences, opts.seed)?;
    solve_correspondences(&c, opts)
}
