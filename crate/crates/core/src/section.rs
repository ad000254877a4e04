//! Local cross-sections `S_x = {p : I(p, x) = I(x, x)}` where
//! `I(p, x) = int_0^T0 d(phi_s p, x) ds`, and the section time `tau(p)`
//! obtained as the fixed point of `tau -> tau - G(tau, p) / dG/dt(0, x)`.

use serde::Serialize;

use crate::constants::FlowConstants;
use crate::engine::{ChartPoint, SystemSpec};
use crate::error::{LabError, Result};

pub const DEFAULT_QUADRATURE: usize = 256;
pub const TOL_G: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;
/// Certified contraction factor of the section-time iteration.
pub const CONTRACTION: f64 = 7.0 / 12.0;
/// Slack allowed on observed per-step ratios.
pub const RATE_SLACK: f64 = 0.05;
const WINDOW_STEPS: usize = 64;
const WINDOW_TOL: f64 = 1e-12;

/// Composite Simpson value of `int_0^T0 d(phi_s p, x) ds` with `n`
/// subintervals.
pub fn integral_i(
    sys: &SystemSpec,
    p: &ChartPoint,
    x: &ChartPoint,
    t0: f64,
    n: usize,
) -> Result<f64> {
    if n < 16 || !n.is_multiple_of(2) {
        return Err(LabError::InvalidArgument(format!(
            "quadrature needs an even n >= 16, got {n}"
        )));
    }
    let h = t0 / n as f64;
    let orbit = sys.trajectory(p, 0.0, h, n + 1)?;
    let mut sum = 0.0;
    for (k, q) in orbit.iter().enumerate() {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * sys.distance(q, x)?;
    }
    Ok(sum * h / 3.0)
}

/// A local cross-section at `center`. Immutable once built.
#[derive(Clone, Debug)]
pub struct SectionChart<'a> {
    sys: &'a SystemSpec,
    center: ChartPoint,
    constants: FlowConstants,
    i_center: f64,
    g_slope: f64,
    quadrature_n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SectionSolve {
    pub tau: f64,
    pub iterations: usize,
    /// `|tau_{k+1} - tau_k| / |tau_k - tau_{k-1}|` for every step with a
    /// nonzero predecessor.
    pub rates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OrbitWindow {
    pub l1: f64,
    pub l2: f64,
}

impl<'a> SectionChart<'a> {
    pub fn new(sys: &'a SystemSpec, center: ChartPoint, constants: FlowConstants) -> Result<Self> {
        Self::with_quadrature(sys, center, constants, DEFAULT_QUADRATURE)
    }

    pub fn with_quadrature(
        sys: &'a SystemSpec,
        center: ChartPoint,
        constants: FlowConstants,
        quadrature_n: usize,
    ) -> Result<Self> {
        sys.check_point(&center)?;
        let t0 = constants.t0;
        let i_center = integral_i(sys, &center, &center, t0, quadrature_n)?;
        let g_slope = sys.distance(&sys.evaluate_flow(t0, &center)?, &center)?;
        if g_slope <= constants.eta / 2.0 {
            return Err(LabError::BoundViolation {
                quantity: "g_slope",
                value: g_slope,
                bound: constants.eta / 2.0,
            });
        }
        Ok(Self {
            sys,
            center,
            constants,
            i_center,
            g_slope,
            quadrature_n,
        })
    }

    pub fn system(&self) -> &'a SystemSpec {
        self.sys
    }

    pub fn center(&self) -> &ChartPoint {
        &self.center
    }

    pub fn constants(&self) -> &FlowConstants {
        &self.constants
    }

    pub fn i_center(&self) -> f64 {
        self.i_center
    }

    /// `dG/dt(0, center)`.
    pub fn g_slope(&self) -> f64 {
        self.g_slope
    }

    pub fn quadrature_n(&self) -> usize {
        self.quadrature_n
    }

    /// `I(p, center)` with the chart's quadrature.
    pub fn integral(&self, p: &ChartPoint) -> Result<f64> {
        integral_i(
            self.sys,
            p,
            &self.center,
            self.constants.t0,
            self.quadrature_n,
        )
    }

    /// `G(t, p) = I(phi_t p, center) - I(center, center)`.
    pub fn g(&self, t: f64, p: &ChartPoint) -> Result<f64> {
        Ok(self.integral(&self.sys.evaluate_flow(t, p)?)? - self.i_center)
    }

    /// `dG/dt(t, p) = d(phi_{t+T0} p, x) - d(phi_t p, x)`, required to exceed
    /// `eta / 2`.
    pub fn g_derivative(&self, t: f64, p: &ChartPoint) -> Result<f64> {
        let value = self.g_derivative_unchecked(t, p)?;
        let bound = self.constants.eta / 2.0;
        if value <= bound {
            return Err(LabError::BoundViolation {
                quantity: "dG/dt",
                value,
                bound,
            });
        }
        Ok(value)
    }

    pub fn g_derivative_unchecked(&self, t: f64, p: &ChartPoint) -> Result<f64> {
        let at_t = self.sys.evaluate_flow(t, p)?;
        let ahead = self.sys.evaluate_flow(self.constants.t0, &at_t)?;
        Ok(self.sys.distance(&ahead, &self.center)? - self.sys.distance(&at_t, &self.center)?)
    }

    pub fn solve(&self, p: &ChartPoint) -> Result<SectionSolve> {
        self.solve_from(p, 0.0)
    }

    /// Section-time iteration started at `tau0`.
    pub fn solve_from(&self, p: &ChartPoint, tau0: f64) -> Result<SectionSolve> {
        self.sys.check_point(p)?;
        let mu1 = self.constants.mu1;
        let mut tau = tau0;
        let mut prev_step: Option<f64> = None;
        let mut rates = Vec::new();
        for iterations in 0..=MAX_ITERATIONS {
            let g = self.g(tau, p)?;
            if g.abs() < TOL_G {
                return Ok(SectionSolve {
                    tau,
                    iterations,
                    rates,
                });
            }
            if iterations == MAX_ITERATIONS {
                return Err(LabError::NonConvergence {
                    iterations,
                    residual: g.abs(),
                });
            }
            let next = tau - g / self.g_slope;
            if !(next.abs() <= mu1) {
                return Err(LabError::Divergence { tau: next });
            }
            let step = (next - tau).abs();
            if let Some(prev) = prev_step.filter(|s| *s > 0.0) {
                rates.push(step / prev);
            }
            prev_step = Some(step);
            tau = next;
        }
        unreachable!("the loop returns on its final iteration")
    }

    /// `P_x(p) = phi_{tau(p)}(p)`.
    pub fn project(&self, p: &ChartPoint) -> Result<ChartPoint> {
        let solve = self.solve(p)?;
        self.sys.evaluate_flow(solve.tau, p)
    }

    /// Exit times of the orbit of `p` from the open ball `B(center, delta)`,
    /// nearest to `t = 0` on each side.
    pub fn orbit_window(&self, p: &ChartPoint) -> Result<OrbitWindow> {
        let delta = self.constants.delta;
        let inside = |t: f64| -> Result<bool> {
            Ok(self
                .sys
                .distance(&self.sys.evaluate_flow(t, p)?, &self.center)?
                < delta)
        };
        if !inside(0.0)? {
            return Err(LabError::Precondition(
                "point outside the chart ball".into(),
            ));
        }
        let step = self.constants.mu / WINDOW_STEPS as f64;
        let mut exits = [0.0; 2];
        for (slot, sign) in [-1.0, 1.0].into_iter().enumerate() {
            let mut lo = 0.0;
            let mut hi = None;
            for k in 1..=WINDOW_STEPS {
                let t = k as f64 * step;
                if !inside(sign * t)? {
                    hi = Some(t);
                    break;
                }
                lo = t;
            }
            let mut hi = hi.ok_or(LabError::WindowNotFound)?;
            while hi - lo > WINDOW_TOL {
                let mid = 0.5 * (lo + hi);
                if inside(sign * mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            exits[slot] = sign * hi;
        }
        Ok(OrbitWindow {
            l1: exits[0],
            l2: exits[1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{calibrate_local_constants, CalibrationOptions};

    fn circle() -> SystemSpec {
        SystemSpec::torus_translation_flow(vec![1.0]).unwrap()
    }

    fn circle_constants(sys: &SystemSpec) -> FlowConstants {
        calibrate_local_constants(sys, 0.25, 0.225, 1.0, &CalibrationOptions::default()).unwrap()
    }

    #[test]
    fn circle_integral_is_quadratic() {
        let sys = circle();
        let x = sys.point(0, &[0.4]).unwrap();
        let value = integral_i(&sys, &x, &x, 0.25, 256).unwrap();
        assert!((value - 0.03125).abs() < 1e-15);
        assert!(integral_i(&sys, &x, &x, 0.25, 15).is_err());
    }

    #[test]
    fn slope_at_center_is_the_return_gap() {
        let sys = circle();
        let c = circle_constants(&sys);
        let x = sys.point(0, &[0.0]).unwrap();
        let chart = SectionChart::new(&sys, x.clone(), c).unwrap();
        assert!((chart.g_derivative(0.0, &x).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(chart.g_slope(), chart.g_derivative(0.0, &x).unwrap());
    }

    #[test]
    fn center_solves_in_zero_iterations() {
        let sys = circle();
        let x = sys.point(0, &[0.7]).unwrap();
        let chart = SectionChart::new(&sys, x.clone(), circle_constants(&sys)).unwrap();
        let solve = chart.solve(&x).unwrap();
        assert_eq!((solve.tau, solve.iterations), (0.0, 0));
        assert_eq!(chart.project(&x).unwrap(), x);
    }

    #[test]
    fn orbit_points_solve_back_to_the_center() {
        let sys = circle();
        let c = circle_constants(&sys);
        let x = sys.point(0, &[0.1]).unwrap();
        let chart = SectionChart::new(&sys, x.clone(), c.clone()).unwrap();
        for s in [-c.mu / 2.0, -c.mu / 5.0, c.mu / 3.0, c.mu / 2.0] {
            let p = sys.evaluate_flow(s, &x).unwrap();
            let solve = chart.solve(&p).unwrap();
            assert!((solve.tau + s).abs() < 1e-8, "{} vs {}", solve.tau, -s);
            assert!(sys.distance(&chart.project(&p).unwrap(), &x).unwrap() < 1e-8);
        }
    }

    #[test]
    fn circle_window_is_symmetric() {
        let sys = circle();
        let c = circle_constants(&sys);
        let x = sys.point(0, &[0.5]).unwrap();
        let chart = SectionChart::new(&sys, x.clone(), c.clone()).unwrap();
        let w = chart.orbit_window(&x).unwrap();
        assert!((w.l1 + c.delta).abs() < 1e-9 && (w.l2 - c.delta).abs() < 1e-9);
    }

    #[test]
    fn leaving_the_window_diverges() {
        let sys = circle();
        let c = circle_constants(&sys);
        let x = sys.point(0, &[0.5]).unwrap();
        let chart = SectionChart::new(&sys, x.clone(), c.clone()).unwrap();
        let far = sys.evaluate_flow(3.0 * c.mu1, &x).unwrap();
        assert!(matches!(
            chart.solve(&far),
            Err(LabError::Divergence { .. })
        ));
    }
}
