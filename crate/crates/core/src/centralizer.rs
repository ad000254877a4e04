//! Recovery of a commuting flow `psi` as a time change of `phi`: the local
//! cocycle `psi_s(x) = phi_{z(s, x)}(x)`, the function `A(x) = z(a, x) / a`
//! and the global identity `psi_t(x) = phi_{A(x) t}(x)`.

use rand::Rng;
use serde::Serialize;

use crate::constants::{golden_section, CalibrationOptions, FlowConstants};
use crate::engine::{ChartPoint, SystemSpec};
use crate::error::{LabError, Result};
use crate::par::{max_of, par_try_map};
use crate::sampling::{rng_for, sample_points};

/// Largest accepted `d(phi_z x, psi_s x)` at the recovered `z`.
pub const TOL_MATCH: f64 = 1e-8;
/// Time range for orbit-invariance audits.
pub const INVARIANCE_SPAN: f64 = 10.0;
/// Time range for commutation audits.
pub const COMMUTATION_SPAN: f64 = 5.0;
const COARSE: usize = 64;
const MAX_HALVINGS: u32 = 40;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CocycleSample {
    pub s: f64,
    pub x: ChartPoint,
    pub z: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReparamSample {
    pub x: ChartPoint,
    pub a_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReparamField {
    pub a: f64,
    pub samples: Vec<ReparamSample>,
    pub invariance_residual_max: f64,
    /// Filled in by [`verify_quasitrivial`].
    pub quasitrivial_residual_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CocycleResiduals {
    pub additivity: f64,
    pub invariance: f64,
    pub linearity: f64,
}

fn check_pair(phi: &SystemSpec, psi: &SystemSpec) -> Result<()> {
    if phi.manifold_id() != psi.manifold_id() {
        return Err(LabError::DomainMismatch);
    }
    if !(phi.is_flow() && psi.is_flow()) {
        return Err(LabError::InvalidArgument(
            "centralizer recovery needs two flows".into(),
        ));
    }
    Ok(())
}

/// `max d(psi_s phi_t x, phi_t psi_s x)` over seeded `x` and `s, t` in
/// `[-5, 5]`.
pub fn check_commutation(
    phi: &SystemSpec,
    psi: &SystemSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(phi, psi)?;
    let points = sample_points(phi, samples, seed);
    let indexed: Vec<(usize, &ChartPoint)> = points.iter().enumerate().collect();
    let residuals = par_try_map!(indexed, |&(i, x): &(usize, &ChartPoint)| -> Result<f64> {
        let mut r = rng_for(seed, i);
        let s = r.random_range(-COMMUTATION_SPAN..=COMMUTATION_SPAN);
        let t = r.random_range(-COMMUTATION_SPAN..=COMMUTATION_SPAN);
        let lhs = psi.evaluate_flow(s, &phi.evaluate_flow(t, x)?)?;
        let rhs = phi.evaluate_flow(t, &psi.evaluate_flow(s, x)?)?;
        phi.distance(&lhs, &rhs)
    })?;
    Ok(max_of(&residuals))
}

/// Largest `mu / 2^k` (`k >= 1`) with `d(psi_{+-a} x, x) < delta` on every
/// audit point.
pub fn find_a(psi: &SystemSpec, constants: &FlowConstants, points: &[ChartPoint]) -> Result<f64> {
    for k in 1..=MAX_HALVINGS {
        let a = constants.mu / 2f64.powi(k as i32);
        let reach = par_try_map!(points, |x: &ChartPoint| -> Result<f64> {
            let fwd = psi.distance(&psi.evaluate_flow(a, x)?, x)?;
            let bwd = psi.distance(&psi.evaluate_flow(-a, x)?, x)?;
            Ok(fwd.max(bwd))
        })?;
        if max_of(&reach) < constants.delta {
            return Ok(a);
        }
    }
    Err(LabError::NoAdmissibleScale)
}

/// The unique `z` in `[-mu, mu]` with `psi_s(x) = phi_z(x)`, located by a
/// coarse scan followed by golden-section refinement.
pub fn recover_z(
    phi: &SystemSpec,
    psi: &SystemSpec,
    constants: &FlowConstants,
    s: f64,
    x: &ChartPoint,
) -> Result<CocycleSample> {
    check_pair(phi, psi)?;
    let target = psi.evaluate_flow(s, x)?;
    let mu = constants.mu;
    let mismatch = |z: f64| -> Result<f64> { phi.distance(&phi.evaluate_flow(z, x)?, &target) };
    let step = 2.0 * mu / COARSE as f64;
    let mut best = (0.0, f64::INFINITY);
    let mut best_k = 0;
    for k in 0..=COARSE {
        let z = -mu + k as f64 * step;
        let v = mismatch(z)?;
        if v < best.1 {
            best = (z, v);
            best_k = k;
        }
    }
    let lo = -mu + best_k.saturating_sub(1) as f64 * step;
    let hi = -mu + (best_k + 1).min(COARSE) as f64 * step;
    let refined = golden_section(|z| mismatch(z).unwrap_or(f64::INFINITY), lo, hi, 1e-15);
    if refined.1 < best.1 {
        best = refined;
    }
    let (z, residual) = best;
    if !(residual <= TOL_MATCH) {
        return Err(LabError::NoMatch {
            residual,
            tolerance: TOL_MATCH,
        });
    }
    Ok(CocycleSample {
        s,
        x: x.clone(),
        z,
        residual,
    })
}

fn z_of(
    phi: &SystemSpec,
    psi: &SystemSpec,
    c: &FlowConstants,
    s: f64,
    x: &ChartPoint,
) -> Result<f64> {
    Ok(recover_z(phi, psi, c, s, x)?.z)
}

/// Maxima of the additivity, orbit-invariance and linearity defects of `z`
/// over `triples` seeded draws.
pub fn verify_cocycle(
    phi: &SystemSpec,
    psi: &SystemSpec,
    constants: &FlowConstants,
    a: f64,
    points: &[ChartPoint],
    triples: usize,
    seed: u64,
) -> Result<CocycleResiduals> {
    if points.is_empty() {
        return Err(LabError::InvalidArgument(
            "cocycle audit needs points".into(),
        ));
    }
    let jobs: Vec<usize> = (0..triples).collect();
    let defects = par_try_map!(jobs, |&i: &usize| -> Result<[f64; 3]> {
        let x = &points[i % points.len()];
        let mut r = rng_for(seed, i);
        let t = r.random_range(-a / 2.0..=a / 2.0);
        let s = r.random_range(-a / 2.0..=a / 2.0);
        let along = psi.evaluate_flow(t, x)?;
        let additivity = (z_of(phi, psi, constants, t + s, x)?
            - z_of(phi, psi, constants, t, x)?
            - z_of(phi, psi, constants, s, &along)?)
        .abs();

        let shift = r.random_range(-INVARIANCE_SPAN..=INVARIANCE_SPAN);
        let s2 = r.random_range(-a..=a);
        let moved = phi.evaluate_flow(shift, x)?;
        let invariance =
            (z_of(phi, psi, constants, s2, &moved)? - z_of(phi, psi, constants, s2, x)?).abs();

        let s3 = r.random_range(-a..=a);
        let slope = z_of(phi, psi, constants, a, x)? / a;
        let linearity = (z_of(phi, psi, constants, s3, x)? - slope * s3).abs();
        Ok([additivity, invariance, linearity])
    })?;
    let column = |k: usize| max_of(&defects.iter().map(|d| d[k]).collect::<Vec<_>>());
    Ok(CocycleResiduals {
        additivity: column(0),
        invariance: column(1),
        linearity: column(2),
    })
}

/// `A(x) = z(a, x) / a` on `points`, with the orbit-invariance defect
/// `|A(phi_t x) - A(x)|` sampled at `invariance_times` times per point.
pub fn recover_a_flow(
    phi: &SystemSpec,
    psi: &SystemSpec,
    constants: &FlowConstants,
    a: f64,
    points: &[ChartPoint],
    invariance_times: usize,
    seed: u64,
) -> Result<ReparamField> {
    let indexed: Vec<(usize, &ChartPoint)> = points.iter().enumerate().collect();
    let per_point = par_try_map!(
        indexed,
        |&(i, x): &(usize, &ChartPoint)| -> Result<(f64, f64)> {
            let value = z_of(phi, psi, constants, a, x)? / a;
            let mut r = rng_for(seed, i);
            let mut defect: f64 = 0.0;
            for _ in 0..invariance_times {
                let t = r.random_range(-INVARIANCE_SPAN..=INVARIANCE_SPAN);
                let moved = phi.evaluate_flow(t, x)?;
                defect = defect.max((z_of(phi, psi, constants, a, &moved)? / a - value).abs());
            }
            Ok((value, defect))
        }
    )?;
    let defects: Vec<f64> = per_point.iter().map(|p| p.1).collect();
    Ok(ReparamField {
        a,
        samples: points
            .iter()
            .zip(&per_point)
            .map(|(x, p)| ReparamSample {
                x: x.clone(),
                a_value: p.0,
            })
            .collect(),
        invariance_residual_max: max_of(&defects),
        quasitrivial_residual_max: None,
    })
}

/// `max d(psi_t x, phi_{A(x) t} x)` over the field's points and `grid`
/// equally spaced `t` in `[-horizon, horizon]`.
pub fn verify_quasitrivial(
    phi: &SystemSpec,
    psi: &SystemSpec,
    field: &ReparamField,
    horizon: f64,
    grid: usize,
) -> Result<f64> {
    check_pair(phi, psi)?;
    if grid < 2 {
        return Err(LabError::InvalidArgument(
            "time grid needs two points".into(),
        ));
    }
    let times: Vec<f64> = (0..grid)
        .map(|k| -horizon + 2.0 * horizon * k as f64 / (grid - 1) as f64)
        .collect();
    let residuals = par_try_map!(field.samples, |sample: &ReparamSample| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in &times {
            let lhs = psi.evaluate_flow(t, &sample.x)?;
            let rhs = phi.evaluate_flow(sample.a_value * t, &sample.x)?;
            worst = worst.max(phi.distance(&lhs, &rhs)?);
        }
        Ok(worst)
    })?;
    Ok(max_of(&residuals))
}

/// For the flows `phi_s = Phi_{s v}` and `psi_t = Phi_{t u}` of a translation
/// action, chain local recoveries `psi_step(y) = phi_z(y)` from `x` out to
/// each `t` in a grid on `[-horizon, horizon]` and report the largest
/// `d(psi_t x, phi_{sum z} x)`. Fails with `NoMatch` when `psi` leaves the
/// `phi`-orbit.
pub fn check_orbit_coincidence(
    action: &SystemSpec,
    v: &[f64],
    u: &[f64],
    opts: &CalibrationOptions,
    samples: usize,
    horizon: f64,
    grid: usize,
) -> Result<f64> {
    if action.rank() < 2 {
        return Err(LabError::InvalidArgument(
            "orbit coincidence needs rank >= 2".into(),
        ));
    }
    let phi = action.flow_along(v)?;
    let psi = action.flow_along(u)?;
    let constants = FlowConstants::calibrate(&phi, opts)?;
    let points = sample_points(&phi, samples, opts.seed);
    let a = find_a(&psi, &constants, &points)?;
    let times: Vec<f64> = (1..=grid)
        .flat_map(|k| {
            let t = horizon * k as f64 / grid as f64;
            [t, -t]
        })
        .collect();
    let residuals = par_try_map!(points, |x: &ChartPoint| -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in &times {
            let steps = (t.abs() / a).ceil().max(1.0) as usize;
            let dt = t / steps as f64;
            let mut y = x.clone();
            let mut total = 0.0;
            for _ in 0..steps {
                total += z_of(&phi, &psi, &constants, dt, &y)?;
                y = psi.evaluate_flow(dt, &y)?;
            }
            let direct = psi.evaluate_flow(t, x)?;
            worst = worst.max(phi.distance(&direct, &phi.evaluate_flow(total, x)?)?);
        }
        Ok(worst)
    })?;
    Ok(max_of(&residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::calibrate_local_constants;

    fn circle_pair(c: f64) -> (SystemSpec, SystemSpec, FlowConstants) {
        let phi = SystemSpec::torus_translation_flow(vec![1.0]).unwrap();
        let psi = phi.clone().with_time_scale(c).unwrap();
        let k = calibrate_local_constants(&phi, 0.25, 0.225, 1.0, &CalibrationOptions::default())
            .unwrap();
        (phi, psi, k)
    }

    #[test]
    fn zero_time_recovers_zero() {
        let (phi, psi, k) = circle_pair(2.0);
        let x = phi.point(0, &[0.3]).unwrap();
        let sample = recover_z(&phi, &psi, &k, 0.0, &x).unwrap();
        assert_eq!((sample.z, sample.residual), (0.0, 0.0));
    }

    #[test]
    fn doubled_circle_flow() {
        let (phi, psi, k) = circle_pair(2.0);
        let x = phi.point(0, &[0.3]).unwrap();
        let sample = recover_z(&phi, &psi, &k, 0.001, &x).unwrap();
        assert!((sample.z - 0.002).abs() < 1e-12);
        let back = recover_z(&phi, &psi, &k, -0.001, &x).unwrap();
        assert!((back.z + sample.z).abs() < 1e-12);
    }

    #[test]
    fn self_commutation_is_rounding_level() {
        let (phi, psi, _) = circle_pair(2.0);
        assert!(check_commutation(&phi, &phi, 50, 1).unwrap() <= 1e-12);
        assert!(check_commutation(&phi, &psi, 50, 1).unwrap() <= 1e-9);
    }

    #[test]
    fn foreign_manifolds_are_rejected() {
        let (phi, _, _) = circle_pair(1.0);
        let other = SystemSpec::torus_translation_flow(vec![1.0, 0.5]).unwrap();
        assert_eq!(
            check_commutation(&phi, &other, 5, 0),
            Err(LabError::DomainMismatch)
        );
    }

    #[test]
    fn a_is_dyadic_in_mu() {
        let (phi, psi, k) = circle_pair(2.0);
        let points = sample_points(&phi, 16, 0);
        let a = find_a(&psi, &k, &points).unwrap();
        let ratio = k.mu / a;
        assert_eq!(ratio, ratio.round());
        assert!(2.0 * a < k.delta && 4.0 * a >= k.delta);
    }

    fn cat() -> SystemSpec {
        SystemSpec::suspension_flow([[2, 1], [1, 1]], 1.0).unwrap()
    }

    fn horocycle() -> SystemSpec {
        SystemSpec::suspension_horocycle_flow([[2, 1], [1, 1]], 1.0).unwrap()
    }

    #[test]
    fn cat_time_change_by_1_37() {
        let phi = cat();
        let psi = phi.clone().with_time_scale(1.37).unwrap();
        let k = FlowConstants::calibrate(&phi, &CalibrationOptions::default()).unwrap();
        let x = phi.point(0, &[0.2, 0.7, 0.4]).unwrap();
        let sample = recover_z(&phi, &psi, &k, 0.005, &x).unwrap();
        assert!((sample.z - 0.00685).abs() < 1e-9, "{}", sample.z);
    }

    #[test]
    fn non_commuting_pair_is_reported_not_raised() {
        let residual = check_commutation(&cat(), &horocycle(), 100, 0).unwrap();
        assert!(residual > 0.1, "{residual}");
    }

    #[test]
    fn quasitriviality_fails_off_the_centralizer() {
        let phi = cat();
        let k = FlowConstants::calibrate(&phi, &CalibrationOptions::default()).unwrap();
        let field = ReparamField {
            a: k.mu / 2.0,
            samples: sample_points(&phi, 8, 0)
                .into_iter()
                .map(|x| ReparamSample { x, a_value: 1.0 })
                .collect(),
            invariance_residual_max: 0.0,
            quasitrivial_residual_max: None,
        };
        let residual = verify_quasitrivial(&phi, &horocycle(), &field, 1.0, 5).unwrap();
        assert!(residual > k.delta, "{residual}");
    }

    fn t3() -> SystemSpec {
        let w = nalgebra::DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 2f64.sqrt() - 1.0, 1.0]);
        SystemSpec::torus_translation_action(w).unwrap()
    }

    fn coincidence(v: &[f64], u: &[f64]) -> Result<f64> {
        let opts = CalibrationOptions {
            samples: 16,
            ..CalibrationOptions::default()
        };
        check_orbit_coincidence(&t3(), v, u, &opts, 8, 2.0, 4)
    }

    #[test]
    fn same_direction_coincides() {
        assert!(coincidence(&[1.0, 0.5], &[1.0, 0.5]).unwrap() <= 1e-12);
    }

    #[test]
    fn doubled_direction_coincides() {
        assert!(coincidence(&[1.0, 0.5], &[2.0, 1.0]).unwrap() <= 1e-9);
    }

    #[test]
    fn independent_directions_do_not_coincide() {
        assert!(matches!(
            coincidence(&[1.0, 0.0], &[0.0, 1.0]),
            Err(LabError::NoMatch { .. })
        ));
    }
}
