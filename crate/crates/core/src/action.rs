//! Flowbox charts and cocycle recovery for locally free R^d-actions on flat
//! tori.
//!
//! A chart at `x` parameterizes a neighbourhood by `xi` in `T_x M = R^n`:
//! `xi` splits as `sum_i a_i X_i(x) + zeta` with `zeta` normal to the orbit,
//! and `F_x(xi) = Phi(a, x + zeta)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::constants::estimate_epsilon0_flow;
use crate::engine::{ChartPoint, SystemKind, SystemSpec, TangentVector, FD_STEP};
use crate::error::{LabError, Result};
use crate::par::{max_of, min_of, par_try_map};
use crate::sampling::{rng_for, unit_vector};

/// Largest normal component accepted as "on the orbit".
pub const TOL_NORMAL: f64 = 1e-8;
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX: usize = 100;
pub const M_LOWER: f64 = 1.0 / 3.0;
pub const NORM_UPPER: f64 = 3.0;
/// Radius of the orbit-invariance audit in parameter space.
pub const INVARIANCE_RADIUS: f64 = 5.0;
const BASIS_TOL: f64 = 1e-8;
const MAX_HALVINGS: u32 = 40;
const MU_FRACTION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionConstants {
    pub epsilon0: f64,
    pub mu: f64,
    pub r0: f64,
    pub delta: f64,
    pub a: f64,
    pub sigma_min: f64,
    pub m_min: f64,
    pub norm_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowboxBounds {
    pub m_min: f64,
    pub norm_max: f64,
}

impl FlowboxBounds {
    pub fn passed(&self) -> bool {
        self.m_min >= M_LOWER && self.norm_max <= NORM_UPPER
    }
}

#[derive(Clone, Debug)]
pub struct FlowboxChart<'a> {
    sys: &'a SystemSpec,
    center: ChartPoint,
    r0: f64,
    orbit_basis: Vec<TangentVector>,
    normal_basis: Vec<TangentVector>,
    mu: f64,
    a: f64,
    /// Columns `X_i(x)`.
    frame: DMatrix<f64>,
    /// Left inverse of `frame`.
    coframe: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowboxPreimage {
    pub zeta: TangentVector,
    pub a: Vec<f64>,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionCocycleSample {
    pub u: Vec<f64>,
    pub x: ChartPoint,
    pub z: Vec<f64>,
    pub normal_norm: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixSample {
    pub x: ChartPoint,
    /// Row-major `d x d` matrix.
    pub a_matrix: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixField {
    pub a: f64,
    pub samples: Vec<MatrixSample>,
    pub invariance_residual_max: f64,
    pub quasitrivial_residual_max: f64,
    pub basis_check_residual_max: f64,
}

#[derive(Clone, Debug)]
pub struct MatrixAuditOptions {
    pub invariance_samples: usize,
    pub quasitrivial_samples: usize,
    pub horizon: f64,
    pub seed: u64,
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn singular_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().svd(false, false).singular_values;
    (min_of(sv.as_slice()), max_of(sv.as_slice()))
}

fn lattice_return(w: &DMatrix<f64>, cap: f64) -> Option<f64> {
    let (n, _) = w.shape();
    let (_, sigma_max) = singular_extremes(w);
    let bound = (sigma_max * cap + 1e-9).floor() as i64;
    if bound < 1 {
        return None;
    }
    let pinv = w.clone().pseudo_inverse(1e-12).ok()?;
    let side = (2 * bound + 1) as usize;
    let total = side.checked_pow(n as u32)?;
    let mut best: Option<f64> = None;
    for code in 0..total {
        let mut rest = code;
        let k = DVector::from_iterator(
            n,
            (0..n).map(|_| {
                let digit = (rest % side) as i64 - bound;
                rest /= side;
                digit as f64
            }),
        );
        if k.iter().all(|c| *c == 0.0) {
            continue;
        }
        let v = &pinv * &k;
        let norm = v.norm();
        if norm <= cap && (w * &v - &k).norm() <= 1e-9 && best.is_none_or(|b| norm < b) {
            best = Some(norm);
        }
    }
    best
}

/// `min(1, smallest |v| with Phi_v = id somewhere)`. Translation actions
/// return exactly when `V v` is an integer vector, so the candidates are the
/// preimages of lattice points of norm at most `sigma_max(V) * norm_cap`.
pub fn estimate_epsilon0_action(sys: &SystemSpec, samples: usize, norm_cap: f64) -> f64 {
    match sys.kind() {
        SystemKind::TorusTranslationAction { directions } => {
            let w = directions * sys.time_scale();
            lattice_return(&w, norm_cap).map_or(1.0, |t| t.min(1.0))
        }
        SystemKind::DisjointUnion { components } => components
            .iter()
            .filter_map(|c| c.clone().with_time_scale(sys.time_scale()).ok())
            .map(|c| estimate_epsilon0_action(&c, samples, norm_cap))
            .fold(1.0, f64::min),
        _ => estimate_epsilon0_flow(sys, samples, norm_cap),
    }
}

/// `F_x` at `x` with the given constants attached.
pub fn build_flowbox<'a>(
    sys: &'a SystemSpec,
    x: &ChartPoint,
    r0: f64,
    mu: f64,
    a: f64,
) -> Result<FlowboxChart<'a>> {
    if !sys.is_flat_torus() {
        return Err(LabError::InvalidSystem(
            "flowbox charts need a flat torus".into(),
        ));
    }
    if !(r0 > 0.0 && r0 <= sys.metric_window()) {
        return Err(LabError::Precondition(format!(
            "r0 must lie in (0, {}], got {r0}",
            sys.metric_window()
        )));
    }
    let n = x.dim();
    let d = sys.rank();
    let orbit_basis: Vec<TangentVector> = (0..d)
        .map(|i| sys.vector_field(i, x))
        .collect::<Result<_>>()?;
    let frame = DMatrix::from_fn(n, d, |r, c| orbit_basis[c].components[r]);
    let (sigma_min, _) = singular_extremes(&frame);
    if !(sigma_min > 1e-12) {
        return Err(LabError::DegenerateBasis { sigma_min });
    }
    let coframe = frame
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|_| LabError::DegenerateBasis { sigma_min })?;

    // Gram-Schmidt on the orbit vectors followed by the coordinate axes.
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(n);
    let candidates = (0..d)
        .map(|c| frame.column(c).into_owned())
        .chain((0..n).map(|k| DVector::from_fn(n, |r, _| if r == k { 1.0 } else { 0.0 })));
    let mut normals = Vec::with_capacity(n - d);
    for (idx, mut v) in candidates.enumerate() {
        for _ in 0..2 {
            for q in &ortho {
                let proj = q.dot(&v);
                v -= q * proj;
            }
        }
        let norm = v.norm();
        if idx < d {
            ortho.push(v / norm);
        } else if norm > 1e-8 && ortho.len() < n {
            let q = v / norm;
            normals.push(TangentVector {
                base: x.clone(),
                components: q.iter().copied().collect(),
            });
            ortho.push(q);
        }
    }
    Ok(FlowboxChart {
        sys,
        center: x.clone(),
        r0,
        orbit_basis,
        normal_basis: normals,
        mu,
        a,
        frame,
        coframe,
    })
}

impl<'a> FlowboxChart<'a> {
    pub fn center(&self) -> &ChartPoint {
        &self.center
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn orbit_basis(&self) -> &[TangentVector] {
        &self.orbit_basis
    }

    pub fn normal_basis(&self) -> &[TangentVector] {
        &self.normal_basis
    }

    /// Split `xi` into orbit coordinates `a` and the normal part `zeta`.
    pub fn split(&self, xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xi = DVector::from_column_slice(xi);
        let a = &self.coframe * &xi;
        let zeta = &xi - &self.frame * &a;
        (a.iter().copied().collect(), zeta.iter().copied().collect())
    }

    /// `F_x(xi)`.
    pub fn eval(&self, xi: &[f64]) -> Result<ChartPoint> {
        let (a, zeta) = self.split(xi);
        let base = self.sys.displace(&self.center, &zeta, 1.0)?;
        self.sys.evaluate_action(&a, &base)
    }

    /// `D F_x` at `xi` by central differences along the coordinate frame.
    pub fn derivative(&self, xi: &[f64]) -> Result<DMatrix<f64>> {
        let n = xi.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = xi.to_vec();
        for k in 0..n {
            probe[k] = xi[k] + FD_STEP;
            let fwd = self.eval(&probe)?;
            probe[k] = xi[k] - FD_STEP;
            let bwd = self.eval(&probe)?;
            probe[k] = xi[k];
            let diff = self.sys.chart_delta(&bwd, &fwd)?;
            for r in 0..n {
                jac[(r, k)] = diff[r] / (2.0 * FD_STEP);
            }
        }
        Ok(jac)
    }

    /// Extreme singular values of `D F_x` at the center and `samples` seeded
    /// points of the `r0`-ball, without enforcing the bounds.
    pub fn measure_bounds(&self, samples: usize, seed: u64) -> Result<(FlowboxBounds, Vec<f64>)> {
        let n = self.center.dim();
        let mut worst_m = f64::INFINITY;
        let mut worst_norm: f64 = 0.0;
        let mut worst_at = vec![0.0; n];
        let mut r = rng_for(seed, 0);
        for k in 0..=samples {
            let xi: Vec<f64> = if k == 0 {
                vec![0.0; n]
            } else {
                let radius = self.r0 * r.random::<f64>().powf(1.0 / n as f64);
                unit_vector(&mut r, n)
                    .into_iter()
                    .map(|c| c * radius)
                    .collect()
            };
            let (m, norm) = singular_extremes(&self.derivative(&xi)?);
            if m < worst_m || norm > worst_norm {
                worst_at = xi.clone();
            }
            worst_m = worst_m.min(m);
            worst_norm = worst_norm.max(norm);
        }
        Ok((
            FlowboxBounds {
                m_min: worst_m,
                norm_max: worst_norm,
            },
            worst_at,
        ))
    }

    /// `(m_min, norm_max)` over sampled `xi`, failing outside `[1/3, 3]`.
    pub fn flowbox_bounds(&self, samples: usize, seed: u64) -> Result<FlowboxBounds> {
        let (bounds, _) = self.measure_bounds(samples, seed)?;
        if bounds.m_min < M_LOWER {
            return Err(LabError::BoundViolation {
                quantity: "m(DF)",
                value: bounds.m_min,
                bound: M_LOWER,
            });
        }
        if bounds.norm_max > NORM_UPPER {
            return Err(LabError::BoundViolation {
                quantity: "|DF|",
                value: bounds.norm_max,
                bound: NORM_UPPER,
            });
        }
        Ok(bounds)
    }

    /// Newton solve of `F_x(xi) = y` from `xi = 0`.
    pub fn invert(&self, y: &ChartPoint) -> Result<FlowboxPreimage> {
        self.sys.check_point(y)?;
        let n = self.center.dim();
        let mut xi = DVector::zeros(n);
        let mut residual = f64::INFINITY;
        for _ in 0..=NEWTON_MAX {
            let image = self.eval(xi.as_slice())?;
            residual = self.sys.distance(&image, y)?;
            if residual <= NEWTON_TOL {
                let (a, zeta) = self.split(xi.as_slice());
                return Ok(FlowboxPreimage {
                    zeta: TangentVector {
                        base: self.center.clone(),
                        components: zeta,
                    },
                    a,
                    residual,
                });
            }
            let gap = DVector::from_vec(self.sys.chart_delta(&image, y)?);
            let step = self
                .derivative(xi.as_slice())?
                .lu()
                .solve(&gap)
                .ok_or(LabError::OutsideChart { residual })?;
            xi += step;
        }
        Err(LabError::OutsideChart { residual })
    }
}

fn check_actions(phi: &SystemSpec, psi: &SystemSpec) -> Result<()> {
    if phi.manifold_id() != psi.manifold_id() {
        return Err(LabError::DomainMismatch);
    }
    if phi.rank() != psi.rank() {
        return Err(LabError::InvalidArgument(
            "actions must share the rank".into(),
        ));
    }
    Ok(())
}

/// `max d(Psi_u Phi_v x, Phi_v Psi_u x)` over seeded `x` and `u, v` in the
/// ball of radius 5.
pub fn check_commutation_action(
    phi: &SystemSpec,
    psi: &SystemSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_actions(phi, psi)?;
    let points = crate::sampling::sample_points(phi, samples, seed);
    let indexed: Vec<(usize, &ChartPoint)> = points.iter().enumerate().collect();
    let d = phi.rank();
    let residuals = par_try_map!(indexed, |&(i, x): &(usize, &ChartPoint)| -> Result<f64> {
        let mut r = rng_for(seed, i);
        let u = random_in_ball(&mut r, d, INVARIANCE_RADIUS);
        let v = random_in_ball(&mut r, d, INVARIANCE_RADIUS);
        let lhs = psi.evaluate_action(&u, &phi.evaluate_action(&v, x)?)?;
        let rhs = phi.evaluate_action(&v, &psi.evaluate_action(&u, x)?)?;
        phi.distance(&lhs, &rhs)
    })?;
    Ok(max_of(&residuals))
}

/// `z(u, x)` with `Psi_u(x) = Phi_z(x)`, read off from the flowbox preimage of
/// `Psi_u(x)`. A normal component above [`TOL_NORMAL`] means `Psi_u(x)` left
/// the `Phi`-orbit.
pub fn recover_z_action(
    phi: &SystemSpec,
    psi: &SystemSpec,
    chart: &FlowboxChart<'_>,
    u: &[f64],
) -> Result<ActionCocycleSample> {
    check_actions(phi, psi)?;
    let x = chart.center();
    let target = psi.evaluate_action(u, x)?;
    let pre = chart.invert(&target)?;
    let normal = pre.zeta.norm();
    if !(normal <= TOL_NORMAL) {
        return Err(LabError::OffOrbit {
            normal,
            tolerance: TOL_NORMAL,
        });
    }
    let residual = phi.distance(&phi.evaluate_action(&pre.a, x)?, &target)?;
    Ok(ActionCocycleSample {
        u: u.to_vec(),
        x: x.clone(),
        z: pre.a,
        normal_norm: normal,
        residual,
    })
}

/// `A(x)` with columns `z(a e_i, x) / a`.
pub fn matrix_at(
    phi: &SystemSpec,
    psi: &SystemSpec,
    chart: &FlowboxChart<'_>,
) -> Result<DMatrix<f64>> {
    let d = phi.rank();
    let a = chart.a();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut u = vec![0.0; d];
        u[i] = a;
        let z = recover_z_action(phi, psi, chart, &u)?.z;
        for j in 0..d {
            m[(j, i)] = z[j] / a;
        }
    }
    Ok(m)
}

fn random_in_ball(r: &mut rand_chacha::ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    let scale = radius * r.random::<f64>().powf(1.0 / d as f64);
    unit_vector(r, d).into_iter().map(|c| c * scale).collect()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Assemble `A(x)` at every chart and audit orbit-invariance, the global
/// identity `Psi_u(x) = Phi_{A(x) u}(x)` and agreement with
/// [`basis_representation_a`].
pub fn recover_a_action(
    phi: &SystemSpec,
    psi: &SystemSpec,
    charts: &[FlowboxChart<'_>],
    opts: &MatrixAuditOptions,
) -> Result<MatrixField> {
    check_actions(phi, psi)?;
    let first = charts
        .first()
        .ok_or_else(|| LabError::InvalidArgument("matrix recovery needs charts".into()))?;
    let (a, r0, mu) = (first.a(), first.r0(), first.mu());
    let d = phi.rank();
    let indexed: Vec<(usize, &FlowboxChart<'_>)> = charts.iter().enumerate().collect();
    let per_chart = par_try_map!(
        indexed,
        |&(i, chart): &(usize, &FlowboxChart<'_>)| -> Result<(DMatrix<f64>, [f64; 3])> {
            let x = chart.center();
            let m = matrix_at(phi, psi, chart)?;
            let mut r = rng_for(opts.seed, i);
            let mut invariance: f64 = 0.0;
            for _ in 0..opts.invariance_samples {
                let v = random_in_ball(&mut r, d, INVARIANCE_RADIUS);
                let moved = phi.evaluate_action(&v, x)?;
                let there = build_flowbox(phi, &moved, r0, mu, a)?;
                invariance = invariance.max(max_abs_diff(&matrix_at(phi, psi, &there)?, &m));
            }
            let mut quasitrivial: f64 = 0.0;
            for _ in 0..opts.quasitrivial_samples {
                let u = random_in_ball(&mut r, d, opts.horizon);
                let mapped: Vec<f64> = (&m * DVector::from_column_slice(&u))
                    .iter()
                    .copied()
                    .collect();
                let lhs = psi.evaluate_action(&u, x)?;
                let rhs = phi.evaluate_action(&mapped, x)?;
                quasitrivial = quasitrivial.max(phi.distance(&lhs, &rhs)?);
            }
            let basis = max_abs_diff(&basis_representation_a(phi, psi, x)?, &m);
            Ok((m, [invariance, quasitrivial, basis]))
        }
    )?;
    let column = |k: usize| max_of(&per_chart.iter().map(|p| p.1[k]).collect::<Vec<_>>());
    Ok(MatrixField {
        a,
        samples: charts
            .iter()
            .zip(&per_chart)
            .map(|(c, p)| MatrixSample {
                x: c.center().clone(),
                a_matrix: to_rows(&p.0),
            })
            .collect(),
        invariance_residual_max: column(0),
        quasitrivial_residual_max: column(1),
        basis_check_residual_max: column(2),
    })
}

/// Coordinates of the generators `Y_i` of `Psi` in the basis `X_j` of `Phi`:
/// the least-squares solution of `Y = X A`.
pub fn basis_representation_a(
    phi: &SystemSpec,
    psi: &SystemSpec,
    x: &ChartPoint,
) -> Result<DMatrix<f64>> {
    check_actions(phi, psi)?;
    let n = x.dim();
    let d = phi.rank();
    let frame = DMatrix::from_fn(n, d, |r, c| {
        phi.vector_field(c, x)
            .map(|v| v.components[r])
            .unwrap_or(f64::NAN)
    });
    let (sigma_min, _) = singular_extremes(&frame);
    if !(sigma_min > 1e-12) {
        return Err(LabError::RankDeficient);
    }
    let mut y = DMatrix::zeros(n, d);
    for i in 0..d {
        let mut step = vec![0.0; d];
        step[i] = FD_STEP;
        let fwd = psi.evaluate_action(&step, x)?;
        step[i] = -FD_STEP;
        let bwd = psi.evaluate_action(&step, x)?;
        let diff = psi.chart_delta(&bwd, &fwd)?;
        for r in 0..n {
            y[(r, i)] = diff[r] / (2.0 * FD_STEP);
        }
    }
    let m = frame
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|_| LabError::RankDeficient)?;
    let residual = (&frame * &m - &y).abs().max();
    if residual > BASIS_TOL {
        return Err(LabError::BoundViolation {
            quantity: "basis representation residual",
            value: residual,
            bound: BASIS_TOL,
        });
    }
    Ok(m)
}

/// Search `r0` (halving from half the metric window until every chart at
/// `points` passes the derivative bounds), then derive `delta` and the
/// dyadic step `a` for `psi`.
pub fn calibrate_action(
    phi: &SystemSpec,
    psi: &SystemSpec,
    points: &[ChartPoint],
    bound_samples: usize,
    seed: u64,
) -> Result<ActionConstants> {
    check_actions(phi, psi)?;
    let epsilon0 = estimate_epsilon0_action(phi, 32, 1.0);
    let mu = MU_FRACTION * epsilon0;
    let mut r0 = 0.5 * phi.metric_window();
    let mut accepted = None;
    for _ in 0..MAX_HALVINGS {
        let measured = par_try_map!(points, |x: &ChartPoint| -> Result<FlowboxBounds> {
            Ok(build_flowbox(phi, x, r0, mu, 0.0)?
                .measure_bounds(bound_samples, seed)?
                .0)
        })?;
        let bounds = FlowboxBounds {
            m_min: min_of(&measured.iter().map(|b| b.m_min).collect::<Vec<_>>()),
            norm_max: max_of(&measured.iter().map(|b| b.norm_max).collect::<Vec<_>>()),
        };
        if bounds.passed() {
            accepted = Some(bounds);
            break;
        }
        r0 /= 2.0;
    }
    let bounds = accepted.ok_or(LabError::CalibrationFailure {
        rounds: MAX_HALVINGS as usize,
    })?;
    let sigmas = par_try_map!(points, |x: &ChartPoint| -> Result<f64> {
        Ok(singular_extremes(&build_flowbox(phi, x, r0, mu, 0.0)?.frame).0)
    })?;
    let sigma_min = min_of(&sigmas);
    let delta = 0.9 * (r0 / 3.0).min(mu * sigma_min / 3.0);
    let d = phi.rank();
    let mut a = None;
    for k in 1..=MAX_HALVINGS {
        let candidate = mu / 2f64.powi(k as i32);
        let reach = par_try_map!(points, |x: &ChartPoint| -> Result<f64> {
            let mut worst: f64 = 0.0;
            for i in 0..d {
                for sign in [1.0, -1.0] {
                    let mut u = vec![0.0; d];
                    u[i] = sign * candidate;
                    worst = worst.max(psi.distance(&psi.evaluate_action(&u, x)?, x)?);
                }
            }
            Ok(worst)
        })?;
        if max_of(&reach) < delta {
            a = Some(candidate);
            break;
        }
    }
    Ok(ActionConstants {
        epsilon0,
        mu,
        r0,
        delta,
        a: a.ok_or(LabError::NoAdmissibleScale)?,
        sigma_min,
        m_min: bounds.m_min,
        norm_max: bounds.norm_max,
    })
}
