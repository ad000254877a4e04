//! calibrate -> sections -> separation -> recovery -> verification.

use std::time::Instant;

use rand::Rng;

use super::config::ScenarioConfig;
use super::report::{
    Audit, Comparison, PointRow, RunReport, RunStatus, SectionSummary, StageError,
};
use crate::action::{
    build_flowbox, calibrate_action, check_commutation_action, recover_a_action, FlowboxBounds,
    FlowboxChart, MatrixAuditOptions, MatrixSample, M_LOWER, NORM_UPPER,
};
use crate::centralizer::{
    check_commutation, find_a, recover_a_flow, verify_cocycle, verify_quasitrivial, TOL_MATCH,
};
use crate::constants::{
    audit_conditions, probe_separation, CalibrationOptions, FlowConstants, DEFAULT_T0_FRACTION,
};
use crate::engine::{ChartPoint, SystemSpec};
use crate::error::{LabError, Result};
use crate::par::{max_of, min_of, par_try_map};
use crate::sampling::{rng_for, sample_points, shell_points};
use crate::section::{SectionChart, CONTRACTION, RATE_SLACK};

/// Largest accepted distance between projections of two points of one
/// orbit arc.
pub const PROJECTION_TOL: f64 = 1e-8;
/// Separated fraction required when the scenario expects separation.
pub const SEPARATING_FRACTION: f64 = 0.99;
const QUASITRIVIAL_GRID: usize = 41;
const INVARIANCE_TIMES: usize = 4;
const G_TIMES: usize = 5;
const HISTOGRAM_BINS: usize = 10;
const BOUND_SAMPLES: usize = 16;
const CALIBRATION_CHARTS: usize = 8;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub value_names: Vec<String>,
    pub points: Vec<PointRow>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> u8 {
        self.report.status.exit_code()
    }
}

struct Run<'c> {
    config: &'c ScenarioConfig,
    report: RunReport,
    value_names: Vec<String>,
    points: Vec<PointRow>,
}

/// Failures that mean "psi is not recovered as a time change of phi" rather
/// than a broken pipeline.
fn is_recovery_failure(e: &LabError) -> bool {
    matches!(
        e,
        LabError::NoMatch { .. }
            | LabError::OffOrbit { .. }
            | LabError::OutsideChart { .. }
            | LabError::NoAdmissibleScale
    )
}

fn recovery_residual(e: &LabError) -> f64 {
    match e {
        LabError::NoMatch { residual, .. } => *residual,
        LabError::OffOrbit { normal, .. } => *normal,
        LabError::OutsideChart { residual } => *residual,
        _ => f64::INFINITY,
    }
}

impl<'c> Run<'c> {
    fn new(config: &'c ScenarioConfig) -> Self {
        Self {
            config,
            report: RunReport {
                scenario: config.name.clone(),
                kind: String::new(),
                seed: config.seed,
                t0_rule: format!("T0 = {DEFAULT_T0_FRACTION} * epsilon0"),
                constants: None,
                condition_audit: None,
                sections: None,
                separation: None,
                separating_hypothesis: "not probed".into(),
                commutation_residual: None,
                recovery: "not attempted".into(),
                centralizer: None,
                cocycle: None,
                action_constants: None,
                flowbox: None,
                action_centralizer: None,
                audits: Vec::new(),
                errors: Vec::new(),
                status: RunStatus::Pass,
                wall_time: None,
            },
            value_names: Vec::new(),
            points: Vec::new(),
        }
    }

    fn stage<T>(&mut self, stage: &str, result: Result<T>) -> Option<T> {
        match result {
            Ok(v) => Some(v),
            Err(e) => {
                self.report.errors.push(StageError {
                    stage: stage.to_string(),
                    message: e.to_string(),
                });
                None
            }
        }
    }

    fn audit(&mut self, name: &str, value: f64, comparison: Comparison, threshold: f64) {
        self.report
            .audits
            .push(Audit::new(name, value, comparison, threshold));
    }

    fn tol(&self, key: &str) -> f64 {
        self.config.tolerance(key)
    }

    /// Record a recovery-stage error either as a failed recovery audit or as a
    /// pipeline error.
    fn recovery_error(&mut self, e: LabError) {
        if is_recovery_failure(&e) {
            self.report.recovery = format!("failed: {e}");
            self.audit(
                "recovery",
                recovery_residual(&e),
                Comparison::AtMost,
                TOL_MATCH,
            );
        } else {
            self.stage::<()>("recovery", Err(e));
        }
    }

    fn run_flow(&mut self, phi: &SystemSpec, psi: &SystemSpec) {
        let cfg = self.config;
        let counts = &cfg.samples;
        let seed = cfg.seed;
        self.report.kind = "flow".into();
        let opts = CalibrationOptions {
            samples: counts.calibration,
            seed,
            ..CalibrationOptions::default()
        };
        let Some(c) = self.stage("calibration", FlowConstants::calibrate(phi, &opts)) else {
            return;
        };
        self.report.constants = Some(c.clone());
        self.audit(
            "calibration_certified",
            f64::from(u8::from(c.certified)),
            Comparison::Equal,
            1.0,
        );

        let fresh = sample_points(phi, counts.calibration, seed.wrapping_add(1));
        let fresh_audit = audit_conditions(
            phi,
            &c,
            &fresh,
            opts.shell_points,
            opts.time_points,
            seed.wrapping_add(1),
        );
        if let Some(audit) = self.stage("calibration", fresh_audit) {
            self.audit(
                "condition1_max",
                audit.cond1_max,
                Comparison::Less,
                audit.cond1_bound,
            );
            self.audit(
                "condition2_max",
                audit.cond2_max,
                Comparison::AtMost,
                audit.cond2_bound,
            );
            self.audit(
                "condition3_min",
                audit.cond3_min,
                Comparison::AtLeast,
                audit.cond3_bound,
            );
            self.report.condition_audit = Some(audit);
        }

        let summary = audit_sections(phi, &c, counts.sections, counts.solves_per_section, seed);
        if let Some(s) = self.stage("sections", summary) {
            self.audit(
                "contraction_rate_max",
                s.contraction_rate_max,
                Comparison::AtMost,
                CONTRACTION + RATE_SLACK,
            );
            self.audit(
                "g_derivative_min",
                s.g_derivative_min,
                Comparison::Greater,
                c.eta / 2.0,
            );
            self.audit(
                "level_set_residual_max",
                s.level_set_residual_max,
                Comparison::AtMost,
                self.tol("level_set"),
            );
            self.audit(
                "projection_constancy_max",
                s.projection_constancy_max,
                Comparison::AtMost,
                PROJECTION_TOL,
            );
            self.report.sections = Some(s);
        }

        let separation = probe_separation(
            phi,
            &c,
            c.delta,
            cfg.horizons.separation,
            counts.pairs,
            seed,
        );
        if let Some(sep) = self.stage("separation", separation) {
            self.report.separating_hypothesis = if sep.separated_fraction >= SEPARATING_FRACTION {
                "certified".into()
            } else {
                "not certified".into()
            };
            match cfg.expect.separating {
                Some(true) => self.audit(
                    "separated_fraction",
                    sep.separated_fraction,
                    Comparison::AtLeast,
                    SEPARATING_FRACTION,
                ),
                Some(false) => self.audit(
                    "separated_fraction",
                    sep.separated_fraction,
                    Comparison::Equal,
                    0.0,
                ),
                None => {}
            }
            self.report.separation = Some(sep);
        }

        if let Some(r) = self.stage(
            "commutation",
            check_commutation(phi, psi, counts.commutation, seed),
        ) {
            self.report.commutation_residual = Some(r);
            self.audit(
                "commutation_residual",
                r,
                Comparison::AtMost,
                self.tol("commutation"),
            );
        }

        let points = sample_points(phi, counts.points, seed.wrapping_add(2));
        match self.recover_flow(phi, psi, &c, &points) {
            Ok(()) => {}
            Err(e) => self.recovery_error(e),
        }
    }

    fn recover_flow(
        &mut self,
        phi: &SystemSpec,
        psi: &SystemSpec,
        c: &FlowConstants,
        points: &[ChartPoint],
    ) -> Result<()> {
        let cfg = self.config;
        let seed = cfg.seed;
        let a = find_a(psi, c, points)?;
        let mut field = recover_a_flow(phi, psi, c, a, points, INVARIANCE_TIMES, seed)?;
        let matches = par_try_map!(
            field.samples,
            |s: &crate::centralizer::ReparamSample| -> Result<f64> {
                let lhs = psi.evaluate_flow(a, &s.x)?;
                phi.distance(&lhs, &phi.evaluate_flow(s.a_value * a, &s.x)?)
            }
        )?;
        let cocycle = verify_cocycle(phi, psi, c, a, points, cfg.samples.cocycle, seed)?;
        let quasitrivial = verify_quasitrivial(
            phi,
            psi,
            &field,
            cfg.horizons.quasitrivial,
            QUASITRIVIAL_GRID,
        )?;
        field.quasitrivial_residual_max = Some(quasitrivial);

        self.report.recovery = "recovered".into();
        self.audit("recovery", max_of(&matches), Comparison::AtMost, TOL_MATCH);
        let tol = self.tol("cocycle");
        self.audit(
            "cocycle_additivity",
            cocycle.additivity,
            Comparison::AtMost,
            tol,
        );
        self.audit(
            "cocycle_invariance",
            cocycle.invariance,
            Comparison::AtMost,
            tol,
        );
        self.audit(
            "cocycle_linearity",
            cocycle.linearity,
            Comparison::AtMost,
            tol,
        );
        self.audit(
            "a_invariance",
            field.invariance_residual_max,
            Comparison::AtMost,
            self.tol("a_invariance"),
        );
        self.audit(
            "quasitrivial",
            quasitrivial,
            Comparison::AtMost,
            self.tol("quasitrivial"),
        );
        if let Some(expected) = &cfg.expect.a_values {
            let errors: Vec<f64> = field
                .samples
                .iter()
                .map(|s| {
                    expected
                        .get(s.x.component())
                        .map_or(f64::INFINITY, |e| (s.a_value - e).abs())
                })
                .collect();
            self.audit(
                "a_error",
                max_of(&errors),
                Comparison::AtMost,
                self.tol("a_error"),
            );
        }

        self.value_names = vec!["A".into(), "residual".into()];
        self.points = field
            .samples
            .iter()
            .zip(&matches)
            .map(|(s, &residual)| PointRow {
                component: s.x.component(),
                coords: s.x.coords().to_vec(),
                values: vec![s.a_value, residual],
            })
            .collect();
        self.report.cocycle = Some(cocycle);
        self.report.centralizer = Some(field);
        Ok(())
    }

    fn run_action(&mut self, phi: &SystemSpec, psi: &SystemSpec) {
        let cfg = self.config;
        let seed = cfg.seed;
        self.report.kind = "action".into();
        self.report.t0_rule = "mu = 0.3 * epsilon0".into();
        self.report.separating_hypothesis = "not exercised for rank >= 2".into();
        let points = sample_points(phi, cfg.samples.points, seed);
        let calib_points = &points[..points.len().min(CALIBRATION_CHARTS)];
        let Some(ac) = self.stage(
            "calibration",
            calibrate_action(phi, psi, calib_points, BOUND_SAMPLES, seed),
        ) else {
            return;
        };
        self.report.action_constants = Some(ac.clone());
        let charts: Result<Vec<FlowboxChart<'_>>> = points
            .iter()
            .map(|x| build_flowbox(phi, x, ac.r0, ac.mu, ac.a))
            .collect();
        let Some(charts) = self.stage("flowbox", charts) else {
            return;
        };
        let measured = par_try_map!(charts, |c: &FlowboxChart<'_>| -> Result<FlowboxBounds> {
            Ok(c.measure_bounds(BOUND_SAMPLES, seed)?.0)
        });
        if let Some(measured) = self.stage("flowbox", measured) {
            let bounds = FlowboxBounds {
                m_min: min_of(&measured.iter().map(|b| b.m_min).collect::<Vec<_>>()),
                norm_max: max_of(&measured.iter().map(|b| b.norm_max).collect::<Vec<_>>()),
            };
            self.audit("flowbox_m_min", bounds.m_min, Comparison::AtLeast, M_LOWER);
            self.audit(
                "flowbox_norm_max",
                bounds.norm_max,
                Comparison::AtMost,
                NORM_UPPER,
            );
            self.report.flowbox = Some(bounds);
        }

        if let Some(r) = self.stage(
            "commutation",
            check_commutation_action(phi, psi, cfg.samples.commutation, seed),
        ) {
            self.report.commutation_residual = Some(r);
            self.audit(
                "commutation_residual",
                r,
                Comparison::AtMost,
                self.tol("commutation"),
            );
        }

        let opts = MatrixAuditOptions {
            invariance_samples: INVARIANCE_TIMES,
            quasitrivial_samples: 8,
            horizon: cfg.horizons.quasitrivial,
            seed,
        };
        let field = match recover_a_action(phi, psi, &charts, &opts) {
            Ok(f) => f,
            Err(e) => return self.recovery_error(e),
        };
        let a = ac.a;
        let residuals = par_try_map!(field.samples, |s: &MatrixSample| -> Result<f64> {
            matrix_residual(phi, psi, a, s)
        });
        let Some(residuals) = self.stage("recovery", residuals) else {
            return;
        };
        self.report.recovery = "recovered".into();
        self.audit(
            "recovery",
            max_of(&residuals),
            Comparison::AtMost,
            TOL_MATCH,
        );
        self.audit(
            "a_invariance",
            field.invariance_residual_max,
            Comparison::AtMost,
            self.tol("a_invariance"),
        );
        self.audit(
            "quasitrivial",
            field.quasitrivial_residual_max,
            Comparison::AtMost,
            self.tol("quasitrivial"),
        );
        self.audit(
            "basis_check",
            field.basis_check_residual_max,
            Comparison::AtMost,
            self.tol("basis_check"),
        );
        if let Some(expected) = &cfg.expect.matrix {
            let errors: Vec<f64> = field
                .samples
                .iter()
                .map(|s| matrix_error(&s.a_matrix, expected))
                .collect();
            self.audit(
                "a_error",
                max_of(&errors),
                Comparison::AtMost,
                self.tol("a_error"),
            );
        }
        let d = phi.rank();
        self.value_names = (0..d)
            .flat_map(|i| (0..d).map(move |j| format!("A{}{}", i + 1, j + 1)))
            .chain(std::iter::once("residual".to_string()))
            .collect();
        self.points = field
            .samples
            .iter()
            .zip(&residuals)
            .map(|(s, &residual)| PointRow {
                component: s.x.component(),
                coords: s.x.coords().to_vec(),
                values: s
                    .a_matrix
                    .iter()
                    .flatten()
                    .copied()
                    .chain([residual])
                    .collect(),
            })
            .collect();
        self.report.action_centralizer = Some(field);
    }
}

/// `max_i d(Psi_{a e_i} x, Phi_{A a e_i} x)` over the standard basis.
fn matrix_residual(phi: &SystemSpec, psi: &SystemSpec, a: f64, s: &MatrixSample) -> Result<f64> {
    let d = s.a_matrix.len();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let mut u = vec![0.0; d];
        u[i] = a;
        let au: Vec<f64> = s.a_matrix.iter().map(|row| row[i] * a).collect();
        let lhs = psi.evaluate_action(&u, &s.x)?;
        worst = worst.max(phi.distance(&lhs, &phi.evaluate_action(&au, &s.x)?)?);
    }
    Ok(worst)
}

fn matrix_error(got: &[Vec<f64>], expected: &[Vec<f64>]) -> f64 {
    if got.len() != expected.len() || got.iter().zip(expected).any(|(g, e)| g.len() != e.len()) {
        return f64::INFINITY;
    }
    got.iter()
        .flatten()
        .zip(expected.iter().flatten())
        .map(|(g, e)| (g - e).abs())
        .fold(0.0, f64::max)
}

/// Solve for the section time at `solves` points of the `delta`-ball around
/// each of `charts` seeded centers and collect the section audits.
pub fn audit_sections(
    sys: &SystemSpec,
    constants: &FlowConstants,
    charts: usize,
    solves: usize,
    seed: u64,
) -> Result<SectionSummary> {
    let centers = sample_points(sys, charts, seed.wrapping_add(3));
    let indexed: Vec<(usize, &ChartPoint)> = centers.iter().enumerate().collect();
    let rate_cap = CONTRACTION + RATE_SLACK;
    let per_chart = par_try_map!(
        indexed,
        |&(i, x): &(usize, &ChartPoint)| -> Result<SectionSummary> {
            let chart = SectionChart::new(sys, x.clone(), constants.clone())?;
            let mut r = rng_for(seed, i);
            let ball = shell_points(sys, x, constants.delta, solves, &mut r)?;
            let times: Vec<f64> = (0..G_TIMES)
                .map(|k| -constants.mu1 + 2.0 * constants.mu1 * k as f64 / (G_TIMES - 1) as f64)
                .collect();
            let mut s = SectionSummary {
                charts: 1,
                solves: 0,
                g_slope_min: chart.g_slope(),
                g_derivative_min: f64::INFINITY,
                contraction_rate_max: 0.0,
                rate_histogram: vec![0; HISTOGRAM_BINS + 1],
                level_set_residual_max: 0.0,
                projection_constancy_max: 0.0,
                tau_lipschitz_max: 0.0,
            };
            let mut previous: Option<(ChartPoint, f64)> = None;
            for p in &ball {
                let solve = chart.solve(p)?;
                s.solves += 1;
                for &rate in &solve.rates {
                    s.contraction_rate_max = s.contraction_rate_max.max(rate);
                    let bin = ((rate / rate_cap) * HISTOGRAM_BINS as f64).floor() as usize;
                    s.rate_histogram[bin.min(HISTOGRAM_BINS)] += 1;
                }
                let projected = sys.evaluate_flow(solve.tau, p)?;
                s.level_set_residual_max = s
                    .level_set_residual_max
                    .max((chart.integral(&projected)? - chart.i_center()).abs());
                for &t in &times {
                    s.g_derivative_min =
                        s.g_derivative_min.min(chart.g_derivative_unchecked(t, p)?);
                }
                if sys.distance(p, x)? < constants.delta {
                    let window = chart.orbit_window(p)?;
                    let shift = window.l1 + (window.l2 - window.l1) * r.random_range(0.1..0.9);
                    let q = sys.evaluate_flow(shift, p)?;
                    let other = chart.project(&q)?;
                    s.projection_constancy_max = s
                        .projection_constancy_max
                        .max(sys.distance(&other, &projected)?);
                }
                if let Some((prev, prev_tau)) = &previous {
                    let gap = sys.distance(prev, p)?;
                    if gap > 0.0 {
                        s.tau_lipschitz_max =
                            s.tau_lipschitz_max.max((solve.tau - prev_tau).abs() / gap);
                    }
                }
                previous = Some((p.clone(), solve.tau));
            }
            Ok(s)
        }
    )?;
    let mut total = SectionSummary {
        charts: 0,
        solves: 0,
        g_slope_min: f64::INFINITY,
        g_derivative_min: f64::INFINITY,
        contraction_rate_max: 0.0,
        rate_histogram: vec![0; HISTOGRAM_BINS + 1],
        level_set_residual_max: 0.0,
        projection_constancy_max: 0.0,
        tau_lipschitz_max: 0.0,
    };
    for s in per_chart {
        total.charts += s.charts;
        total.solves += s.solves;
        total.g_slope_min = total.g_slope_min.min(s.g_slope_min);
        total.g_derivative_min = total.g_derivative_min.min(s.g_derivative_min);
        total.contraction_rate_max = total.contraction_rate_max.max(s.contraction_rate_max);
        for (t, c) in total.rate_histogram.iter_mut().zip(&s.rate_histogram) {
            *t += c;
        }
        total.level_set_residual_max = total.level_set_residual_max.max(s.level_set_residual_max);
        total.projection_constancy_max = total
            .projection_constancy_max
            .max(s.projection_constancy_max);
        total.tau_lipschitz_max = total.tau_lipschitz_max.max(s.tau_lipschitz_max);
    }
    Ok(total)
}

/// Execute a validated scenario. Never panics on pipeline failures; they are
/// recorded in the report with their stage.
pub fn run_scenario(config: &ScenarioConfig) -> RunOutcome {
    let start = Instant::now();
    let mut run = Run::new(config);
    let phi = run.stage("build", config.phi.build());
    let psi = phi.as_ref().and_then(|phi| {
        let psi = match &config.psi {
            Some(desc) => desc.build(phi),
            None => Ok(phi.clone()),
        };
        run.stage("build", psi)
    });
    if let (Some(phi), Some(psi)) = (phi, psi) {
        if phi.is_flow() {
            run.run_flow(&phi, &psi);
        } else {
            run.run_action(&phi, &psi);
        }
    }
    let report = &mut run.report;
    report.status = if !report.errors.is_empty() {
        RunStatus::PipelineError
    } else if report.audits.iter().any(|a| !a.passed) {
        RunStatus::AuditFailure
    } else {
        RunStatus::Pass
    };
    report.wall_time = Some(start.elapsed().as_secs_f64());
    RunOutcome {
        report: run.report,
        value_names: run.value_names,
        points: run.points,
    }
}
