//! Sampled estimates of the constants that drive the local cross-section
//! construction: the period bound `epsilon0`, the return gap `eta`, the local
//! window `mu1` and the ball radius `delta`, plus the separation probe.

use serde::Serialize;

use crate::engine::{ChartPoint, SystemKind, SystemSpec};
use crate::error::{LabError, Result};
use crate::par::{max_of, min_of, par_map, par_try_map};
use crate::sampling::{rng_for, sample_points, shell_points, unit_vector};
use crate::section::SectionChart;

/// Fraction of `epsilon0` used for `T0` when none is given.
pub const DEFAULT_T0_FRACTION: f64 = 0.4;
/// Multiplier applied to every sampled infimum.
pub const SAFETY_FACTOR: f64 = 0.9;
/// `delta` is this fraction of the sampled `min d(phi_{+-mu1/3} x, x)`.
pub const DELTA_FIT: f64 = 0.45;
const MAX_ROUNDS: usize = 40;
const INTEGRALITY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowConstants {
    #[serde(rename = "T0")]
    pub t0: f64,
    pub epsilon0: f64,
    pub eta: f64,
    pub mu1: f64,
    pub mu: f64,
    pub delta: f64,
    pub sample_count: usize,
    pub certified: bool,
}

#[derive(Clone, Debug)]
pub struct CalibrationOptions {
    /// Audit points for the local conditions.
    pub samples: usize,
    pub eta_samples: usize,
    pub epsilon_samples: usize,
    pub period_cap: f64,
    pub t0_fraction: f64,
    pub shell_points: usize,
    pub time_points: usize,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            samples: 48,
            eta_samples: 1000,
            epsilon_samples: 32,
            period_cap: 1.0,
            t0_fraction: DEFAULT_T0_FRACTION,
            shell_points: 64,
            time_points: 32,
            seed: 0,
        }
    }
}

/// Audit maxima of the three local conditions against their bounds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionAudit {
    pub cond1_max: f64,
    pub cond1_bound: f64,
    pub cond2_max: f64,
    pub cond2_bound: f64,
    pub cond3_min: f64,
    pub cond3_bound: f64,
}

impl ConditionAudit {
    pub fn passed(&self) -> bool {
        self.cond1_max < self.cond1_bound
            && self.cond2_max <= self.cond2_bound
            && self.cond3_min >= self.cond3_bound
    }

    fn passed_with_headroom(&self, headroom: f64) -> bool {
        self.cond1_max < headroom * self.cond1_bound
            && self.cond2_max <= headroom * self.cond2_bound
            && self.cond3_min >= self.cond3_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counterexample {
    pub x: ChartPoint,
    pub y: ChartPoint,
    pub max_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    pub delta: f64,
    pub horizon: f64,
    pub pairs_tested: usize,
    pub separated_fraction: f64,
    pub counterexamples: Vec<Counterexample>,
    /// Sampled pairs discarded because the second point projected onto the
    /// first along the local orbit.
    pub rejected_on_orbit: usize,
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Smallest `t` in `(0, cap]` with `t w` integral, for a constant velocity.
fn translation_period(velocity: &[f64], cap: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &wi in velocity.iter().filter(|w| w.abs() > 0.0) {
        let mut m = 1.0;
        loop {
            let t = m / wi.abs();
            if t > cap || best.is_some_and(|b| t >= b) {
                break;
            }
            let closes = velocity
                .iter()
                .all(|wj| ((wj * t) - (wj * t).round()).abs() <= INTEGRALITY_TOL);
            if closes {
                best = Some(t);
                break;
            }
            m += 1.0;
        }
    }
    best
}

/// Smallest closed-orbit period found in `(0, cap]`, or `None`.
fn smallest_period(sys: &SystemSpec, samples: usize, cap: f64) -> Option<f64> {
    let c = sys.time_scale();
    match sys.kind() {
        SystemKind::TorusTranslationFlow { velocity } => {
            let w: Vec<f64> = velocity.iter().map(|v| c * v).collect();
            translation_period(&w, cap)
        }
        SystemKind::TorusTranslationAction { directions } if sys.rank() == 1 => {
            let w: Vec<f64> = directions.column(0).iter().map(|v| c * v).collect();
            translation_period(&w, cap)
        }
        // The base fixed point at the origin closes up after one roof
        // traversal and every closed orbit crosses the roof an integer number
        // of times.
        SystemKind::SuspensionFlow { base } => Some(base.roof() / c.abs()).filter(|t| *t <= cap),
        SystemKind::DisjointUnion { components } => components
            .iter()
            .filter_map(|comp| {
                let scaled = comp.clone().with_time_scale(c).ok()?;
                smallest_period(&scaled, samples, cap)
            })
            .min_by(f64::total_cmp),
        _ => sampled_period(sys, samples, cap),
    }
}

/// Scan `d(phi_t x, x)` on a time grid for interior local minima, refine them
/// by golden section and accept those that close to `1e-7`.
fn sampled_period(sys: &SystemSpec, samples: usize, cap: f64) -> Option<f64> {
    const GRID: usize = 2000;
    const CLOSE_TOL: f64 = 1e-7;
    let points = sample_points(sys, samples, 0x5eed);
    let dt = cap / GRID as f64;
    let found = par_map!(points, |x: &ChartPoint| -> Option<f64> {
        let orbit = sys.trajectory(x, 0.0, dt, GRID + 1).ok()?;
        let f: Vec<f64> = orbit
            .iter()
            .map(|p| sys.distance(p, x).unwrap_or(f64::INFINITY))
            .collect();
        for k in 1..GRID {
            if f[k] < f[k - 1] && f[k] <= f[k + 1] {
                let g = |t: f64| {
                    sys.evaluate_flow(t, x)
                        .and_then(|p| sys.distance(&p, x))
                        .unwrap_or(f64::INFINITY)
                };
                let (t, v) = golden_section(g, (k - 1) as f64 * dt, (k + 1) as f64 * dt, 1e-13);
                if v <= CLOSE_TOL {
                    return Some(t);
                }
            }
        }
        None
    });
    found.into_iter().flatten().min_by(f64::total_cmp)
}

/// Golden-section minimization on `[lo, hi]`; returns the best evaluated
/// abscissa and value.
pub(crate) fn golden_section(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

/// `min(1, smallest closed-orbit period)`, exact for translation and
/// suspension flows and sampled otherwise.
pub fn estimate_epsilon0_flow(sys: &SystemSpec, samples: usize, period_cap: f64) -> f64 {
    smallest_period(sys, samples, period_cap).map_or(1.0, |t| t.min(1.0))
}

/// `0.9 * min d(phi_T0 x, x)` over the first `samples` seeded points.
pub fn eta_for(sys: &SystemSpec, t0: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(t0.is_finite() && t0 > 0.0) {
        return Err(LabError::Precondition(format!(
            "T0 must be positive, got {t0}"
        )));
    }
    if samples == 0 {
        return Err(LabError::InvalidArgument(
            "eta needs at least one sample".into(),
        ));
    }
    let points = sample_points(sys, samples, seed);
    let gaps = par_try_map!(points, |x: &ChartPoint| sys
        .evaluate_flow(t0, x)
        .and_then(|y| sys.distance(&y, x)));
    let minimum = min_of(&gaps?);
    if minimum < 1e-9 {
        return Err(LabError::EtaTooSmall { minimum });
    }
    Ok(SAFETY_FACTOR * minimum)
}

/// `min over x of min(d(phi_{mu1/3} x, x), d(phi_{-mu1/3} x, x))`.
fn third_step_gap(sys: &SystemSpec, points: &[ChartPoint], mu1: f64) -> Result<f64> {
    let gaps = par_try_map!(points, |x: &ChartPoint| -> Result<f64> {
        let fwd = sys.distance(&sys.evaluate_flow(mu1 / 3.0, x)?, x)?;
        let bwd = sys.distance(&sys.evaluate_flow(-mu1 / 3.0, x)?, x)?;
        Ok(fwd.min(bwd))
    })?;
    Ok(min_of(&gaps))
}

/// Evaluate the three local conditions for `(mu1, delta)` on `points`, with
/// `shell` points in each closed `delta`-ball and `time_points` per interval.
pub fn audit_conditions(
    sys: &SystemSpec,
    constants: &FlowConstants,
    points: &[ChartPoint],
    shell: usize,
    time_points: usize,
    seed: u64,
) -> Result<ConditionAudit> {
    let FlowConstants {
        t0,
        eta,
        mu1,
        delta,
        ..
    } = *constants;
    let local_times = grid(-mu1, mu1, time_points);
    let horizon_times = grid(0.0, t0, time_points);
    let indexed: Vec<(usize, &ChartPoint)> = points.iter().enumerate().collect();
    let per_point = par_try_map!(
        indexed,
        |&(i, x): &(usize, &ChartPoint)| -> Result<(f64, f64)> {
            let mut r = rng_for(seed, i);
            let ball = shell_points(sys, x, delta, shell, &mut r)?;
            let along_x: Vec<ChartPoint> = horizon_times
                .iter()
                .map(|&tau| sys.evaluate_flow(tau, x))
                .collect::<Result<_>>()?;
            let mut c1: f64 = 0.0;
            let mut c2: f64 = 0.0;
            for p in ball.iter().chain(std::iter::once(x)) {
                for &t in &local_times {
                    c1 = c1.max(sys.distance(&sys.evaluate_flow(t, p)?, x)?);
                }
                for (&tau, fx) in horizon_times.iter().zip(&along_x) {
                    c2 = c2.max(sys.distance(&sys.evaluate_flow(tau, p)?, fx)?);
                }
            }
            Ok((c1, c2))
        }
    )?;
    let c1: Vec<f64> = per_point.iter().map(|v| v.0).collect();
    let c2: Vec<f64> = per_point.iter().map(|v| v.1).collect();
    Ok(ConditionAudit {
        cond1_max: max_of(&c1),
        cond1_bound: eta / 4.0,
        cond2_max: max_of(&c2),
        cond2_bound: eta * mu1 / (12.0 * t0),
        cond3_min: third_step_gap(sys, points, mu1)?,
        cond3_bound: 2.0 * delta,
    })
}

/// Search `(mu1, delta)` satisfying the local conditions on an audit sample.
/// Conditions (1) and (2) must hold with 10% headroom.
pub fn calibrate_local_constants(
    sys: &SystemSpec,
    t0: f64,
    eta: f64,
    epsilon0: f64,
    opts: &CalibrationOptions,
) -> Result<FlowConstants> {
    if !(t0.is_finite() && t0 > 0.0 && t0 < epsilon0) {
        return Err(LabError::Precondition(format!(
            "T0 must lie in (0, epsilon0 = {epsilon0}), got {t0}"
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(LabError::Precondition(format!(
            "eta must be positive, got {eta}"
        )));
    }
    const HEADROOM: f64 = 0.9;
    let points = sample_points(sys, opts.samples, opts.seed);
    let mut mu1 = t0 / 3.0;
    let mut delta = (DELTA_FIT * third_step_gap(sys, &points, mu1)?).min(sys.metric_window());
    for _ in 0..MAX_ROUNDS {
        let candidate = FlowConstants {
            t0,
            epsilon0,
            eta,
            mu1,
            mu: mu1 / 3.0,
            delta,
            sample_count: opts.samples,
            certified: false,
        };
        let audit = audit_conditions(
            sys,
            &candidate,
            &points,
            opts.shell_points,
            opts.time_points,
            opts.seed,
        )?;
        if audit.passed_with_headroom(HEADROOM) {
            return Ok(FlowConstants {
                certified: true,
                ..candidate
            });
        }
        if audit.cond1_max >= HEADROOM * audit.cond1_bound {
            mu1 /= 2.0;
            delta = delta.min(DELTA_FIT * third_step_gap(sys, &points, mu1)?);
        } else {
            // Condition (2) is invariant under rescaling mu1 for isometric
            // flows, so only a smaller ball can satisfy it.
            let target = HEADROOM * audit.cond2_bound / audit.cond2_max;
            delta = (delta / 2.0).min(0.8 * delta * target);
        }
    }
    Err(LabError::CalibrationFailure { rounds: MAX_ROUNDS })
}

impl FlowConstants {
    /// Full calibration: `epsilon0`, then `T0 = fraction * epsilon0`, `eta`
    /// and the local constants.
    pub fn calibrate(sys: &SystemSpec, opts: &CalibrationOptions) -> Result<Self> {
        if !sys.is_flow() {
            return Err(LabError::InvalidArgument(
                "flow constants need a rank-1 system".into(),
            ));
        }
        let epsilon0 = estimate_epsilon0_flow(sys, opts.epsilon_samples, opts.period_cap);
        let t0 = opts.t0_fraction * epsilon0;
        let eta = eta_for(sys, t0, opts.eta_samples, opts.seed)?;
        calibrate_local_constants(sys, t0, eta, epsilon0, opts)
    }
}

/// Outcome of following one pair in both time directions.
fn pair_max_distance(
    sys: &SystemSpec,
    x: &ChartPoint,
    y: &ChartPoint,
    delta: f64,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let steps = (horizon / dt).ceil() as usize;
    let mut best: f64 = sys.distance(x, y)?;
    for sign in [1.0, -1.0] {
        let xs = sys.trajectory(x, 0.0, sign * dt, steps + 1)?;
        let ys = sys.trajectory(y, 0.0, sign * dt, steps + 1)?;
        for (a, b) in xs.iter().zip(&ys) {
            best = best.max(sys.distance(a, b)?);
            if best >= delta {
                return Ok(best);
            }
        }
    }
    Ok(best)
}

/// Follow `pairs` seeded pairs with `0 < d(x, y) < delta` and `y` off the
/// local orbit of `x` for `|t| <= horizon` and record which ones reach
/// distance `delta`. Local orbit points are detected through the projection
/// onto the cross-section at `x` built from `constants`.
pub fn probe_separation(
    sys: &SystemSpec,
    constants: &FlowConstants,
    delta: f64,
    horizon: f64,
    pairs: usize,
    seed: u64,
) -> Result<SeparationReport> {
    if !(delta > 0.0 && horizon > 0.0) {
        return Err(LabError::Precondition(
            "delta and horizon must be positive".into(),
        ));
    }
    const DT: f64 = 0.05;
    const ON_ORBIT_TOL: f64 = 1e-8;
    let radius = delta.min(constants.delta);
    let candidates = sample_points(sys, pairs, seed);
    let indexed: Vec<(usize, &ChartPoint)> = candidates.iter().enumerate().collect();
    let outcomes = par_try_map!(
        indexed,
        |&(i, x): &(usize, &ChartPoint)| -> Result<Option<Counterexample>> {
            let mut r = rng_for(seed, i);
            let chart = SectionChart::new(sys, x.clone(), constants.clone())?;
            for _ in 0..16 {
                let dir = unit_vector(&mut r, x.dim());
                let frac = 0.2 + 0.7 * rand::Rng::random::<f64>(&mut r);
                let y = crate::sampling::ball_point(sys, x, &dir, frac * radius)?;
                let d0 = sys.distance(x, &y)?;
                if !(d0 > 0.0 && d0 < delta) {
                    continue;
                }
                if is_on_local_orbit(&chart, &y, ON_ORBIT_TOL)? {
                    continue;
                }
                let reached = pair_max_distance(sys, x, &y, delta, horizon, DT)?;
                return Ok(Some(Counterexample {
                    x: x.clone(),
                    y,
                    max_distance: reached,
                }));
            }
            Ok(None)
        }
    )?;
    let tested: Vec<Counterexample> = outcomes.iter().flatten().cloned().collect();
    let pairs_tested = tested.len();
    let rejected_on_orbit = outcomes.len() - pairs_tested;
    let separated = tested.iter().filter(|c| c.max_distance >= delta).count();
    let counterexamples: Vec<Counterexample> = tested
        .into_iter()
        .filter(|c| c.max_distance < delta)
        .collect();
    Ok(SeparationReport {
        delta,
        horizon,
        pairs_tested,
        separated_fraction: if pairs_tested == 0 {
            0.0
        } else {
            separated as f64 / pairs_tested as f64
        },
        counterexamples,
        rejected_on_orbit,
    })
}

/// `y` lies on the local orbit arc through the chart center iff it projects
/// onto the center.
pub fn is_on_local_orbit(chart: &SectionChart<'_>, y: &ChartPoint, tol: f64) -> Result<bool> {
    let projected = chart.project(y)?;
    Ok(chart.system().distance(&projected, chart.center())? < tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> SystemSpec {
        SystemSpec::torus_translation_flow(vec![1.0]).unwrap()
    }

    fn cat() -> SystemSpec {
        SystemSpec::suspension_flow([[2, 1], [1, 1]], 1.0).unwrap()
    }

    #[test]
    fn epsilon0_closed_form_examples() {
        let irrational = SystemSpec::torus_translation_flow(vec![1.0, 2f64.sqrt()]).unwrap();
        assert_eq!(estimate_epsilon0_flow(&irrational, 16, 1.0), 1.0);
        assert_eq!(estimate_epsilon0_flow(&cat(), 16, 1.0), 1.0);
        assert_eq!(estimate_epsilon0_flow(&circle(), 16, 1.0), 1.0);
        let fast = circle().with_time_scale(4.0).unwrap();
        assert_eq!(estimate_epsilon0_flow(&fast, 16, 1.0), 0.25);
        let rational = SystemSpec::torus_translation_flow(vec![2.0, 3.0]).unwrap();
        assert_eq!(estimate_epsilon0_flow(&rational, 16, 1.0), 1.0);
        let rational = SystemSpec::torus_translation_flow(vec![4.0, 6.0]).unwrap();
        assert_eq!(estimate_epsilon0_flow(&rational, 16, 1.0), 0.5);
    }

    #[test]
    fn epsilon0_of_union_is_componentwise_min() {
        let u =
            SystemSpec::disjoint_union(vec![cat(), cat().with_time_scale(3.0).unwrap()]).unwrap();
        assert!((estimate_epsilon0_flow(&u, 16, 1.0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eta_on_the_circle() {
        let eta = eta_for(&circle(), 0.25, 100, 0).unwrap();
        assert!((eta - 0.225).abs() < 1e-12);
        assert!(matches!(
            eta_for(&circle(), 0.0, 10, 0),
            Err(LabError::Precondition(_))
        ));
        assert!(matches!(
            eta_for(&circle(), 1.0, 10, 0),
            Err(LabError::EtaTooSmall { .. })
        ));
    }

    #[test]
    fn circle_calibration_satisfies_the_linear_conditions() {
        let opts = CalibrationOptions::default();
        let c = calibrate_local_constants(&circle(), 0.25, 0.225, 1.0, &opts).unwrap();
        assert!(c.certified);
        assert!(0.0 < c.mu1 && c.mu1 < 0.25);
        assert_eq!(c.mu, c.mu1 / 3.0);
        // On the circle every condition is a linear inequality in (mu1, delta).
        assert!(c.mu1 + c.delta < 0.225 / 4.0);
        assert!(c.delta <= 0.225 * c.mu1 / (12.0 * 0.25));
        assert!(2.0 * c.delta <= c.mu1 / 3.0);
    }

    #[test]
    fn degenerate_t0_is_rejected() {
        let opts = CalibrationOptions::default();
        assert!(matches!(
            calibrate_local_constants(&circle(), 0.0, 0.2, 1.0, &opts),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn golden_section_finds_a_kink() {
        let (t, v) = golden_section(|t| (t - 0.3).abs(), 0.0, 1.0, 1e-14);
        assert!((t - 0.3).abs() < 1e-13 && v < 1e-13);
    }

    #[test]
    fn translations_never_separate() {
        let sys = SystemSpec::torus_translation_flow(vec![1.0, 2f64.sqrt()]).unwrap();
        let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
        let report = probe_separation(&sys, &c, 0.2, 100.0, 40, 5).unwrap();
        assert!(report.pairs_tested > 0);
        assert_eq!(report.separated_fraction, 0.0);
        assert_eq!(report, probe_separation(&sys, &c, 0.2, 100.0, 40, 5).unwrap());
        assert!(probe_separation(&sys, &c, 0.0, 100.0, 40, 5).is_err());
    }
}
