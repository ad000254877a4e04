//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Every tolerance below is pinned here and checked
//! against the threshold the pipeline actually used.

use std::collections::BTreeMap;
use std::process::ExitCode;

use centralab::action::estimate_epsilon0_action;
use centralab::centralizer::INVARIANCE_SPAN;
use centralab::constants::{estimate_epsilon0_flow, CalibrationOptions, FlowConstants};
use centralab::sampling::{rng_for, sample_points, shell_points};
use centralab::scenario::pipeline::audit_sections;
use centralab::scenario::{builtins, run_scenario, RunReport, RunStatus};
use centralab::section::SectionChart;
use centralab::SystemSpec;
use nalgebra::DMatrix;

const CONTRACTION_CAP: f64 = 7.0 / 12.0 + 0.05;
const MIN_SOLVES: usize = 1000;
const A_TOL: f64 = 1e-6;
const INVARIANCE_TOL: f64 = 1e-6;
const QUASITRIVIAL_TOL: f64 = 1e-7;
const QUASITRIVIAL_HORIZON: f64 = 20.0;
const INVARIANCE_WINDOW: f64 = 10.0;
const COCYCLE_TOL: f64 = 1e-6;
const COCYCLE_TRIPLES: usize = 500;
const SEPARATION_HORIZON: f64 = 30.0;
const SEPARATED_FRACTION: f64 = 0.99;
const FLOW_POINTS: usize = 200;
const ACTION_CHARTS: usize = 100;
const BASIS_TOL: f64 = 1e-6;
const M_LOWER: f64 = 1.0 / 3.0;
const NORM_UPPER: f64 = 3.0;
const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The audit must exist, have passed, and have used exactly `threshold`.
fn audit_within(report: &RunReport, name: &str, threshold: f64) -> Verdict {
    let a = report
        .audit(name)
        .ok_or_else(|| format!("{}: audit {name} missing", report.scenario))?;
    let detail = format!("{}:{name}={:.3e}", report.scenario, a.value);
    if a.threshold != threshold {
        return Err(format!(
            "{detail} threshold {:e} != pinned {threshold:e}",
            a.threshold
        ));
    }
    check(a.passed, detail)
}

fn all(verdicts: Vec<Verdict>) -> Verdict {
    let mut details = Vec::new();
    let mut failed = false;
    for v in verdicts {
        match v {
            Ok(d) => details.push(d),
            Err(d) => {
                failed = true;
                details.push(format!("FAILED {d}"));
            }
        }
    }
    check(!failed, details.join("; "))
}

fn cat() -> SystemSpec {
    SystemSpec::suspension_flow(CAT, 1.0).unwrap()
}

fn section_criteria() -> (Verdict, Verdict) {
    let sys = cat();
    let c = FlowConstants::calibrate(&sys, &CalibrationOptions::default()).unwrap();
    let summary = audit_sections(&sys, &c, 50, 20, 7).unwrap();
    let contraction = check(
        summary.solves >= MIN_SOLVES && summary.contraction_rate_max <= CONTRACTION_CAP,
        format!(
            "{} solves, max ratio {:.4e} <= {CONTRACTION_CAP:.4}",
            summary.solves, summary.contraction_rate_max
        ),
    );

    // Denser grid than the pipeline: 33 times in [-mu1, mu1] per ball point.
    let centers = sample_points(&sys, 10, 11);
    let mut worst = f64::INFINITY;
    let mut audited = 0usize;
    for (i, x) in centers.iter().enumerate() {
        let chart = SectionChart::new(&sys, x.clone(), c.clone()).unwrap();
        let ball = shell_points(&sys, x, c.delta, 20, &mut rng_for(11, i)).unwrap();
        for p in &ball {
            for k in 0..=32 {
                let t = -c.mu1 + 2.0 * c.mu1 * f64::from(k) / 32.0;
                worst = worst.min(chart.g_derivative_unchecked(t, p).unwrap());
                audited += 1;
            }
        }
    }
    let slope = check(
        summary.g_derivative_min > c.eta / 2.0 && worst > c.eta / 2.0,
        format!(
            "min dG/dt {:.4e} (pipeline), {worst:.4e} over {audited} extra (t, p) > eta/2 = {:.4e}",
            summary.g_derivative_min,
            c.eta / 2.0
        ),
    );
    (contraction, slope)
}

fn time_change_recovery(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let r = &reports["cat-suspension-c2"];
    let n = r.centralizer.as_ref().map_or(0, |f| f.samples.len());
    let config = builtins()
        .into_iter()
        .find(|c| c.name == "cat-suspension-c2")
        .unwrap();
    all(vec![
        check(
            r.status == RunStatus::Pass,
            format!("status {:?}", r.status),
        ),
        check(
            config.horizons.quasitrivial == QUASITRIVIAL_HORIZON
                && INVARIANCE_SPAN == INVARIANCE_WINDOW,
            format!(
                "|t| <= {}, invariance over [-{INVARIANCE_SPAN}, {INVARIANCE_SPAN}]",
                config.horizons.quasitrivial
            ),
        ),
        check(n >= FLOW_POINTS, format!("{n} points")),
        audit_within(r, "a_error", A_TOL),
        audit_within(r, "a_invariance", INVARIANCE_TOL),
        audit_within(r, "quasitrivial", QUASITRIVIAL_TOL),
    ])
}

fn non_constant_a(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let r = &reports["two-component-piecewise"];
    let Some(field) = &r.centralizer else {
        return Err("no centralizer recovered".into());
    };
    let mut range = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for s in &field.samples {
        let e = &mut range[s.x.component()];
        e.0 = e.0.min(s.a_value);
        e.1 = e.1.max(s.a_value);
    }
    let expected = [1.0, 3.0];
    let ok = range
        .iter()
        .zip(expected)
        .all(|(&(lo, hi), e)| (lo - e).abs() <= A_TOL && (hi - e).abs() <= A_TOL);
    all(vec![
        check(ok, format!("A ranges per component {range:?}")),
        audit_within(r, "a_error", A_TOL),
    ])
}

const FLOW_RECOVERIES: [&str; 5] = [
    "cat-suspension-self",
    "cat-suspension-c2",
    "cat-suspension-c1.37",
    "two-component-piecewise",
    "torus-translation-negative",
];

fn cocycle(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let mut verdicts = Vec::new();
    let configs = builtins();
    for name in FLOW_RECOVERIES {
        let triples = configs
            .iter()
            .find(|c| c.name == name)
            .unwrap()
            .samples
            .cocycle;
        verdicts.push(check(
            triples >= COCYCLE_TRIPLES,
            format!("{name}: {triples} triples"),
        ));
        for audit in [
            "cocycle_additivity",
            "cocycle_invariance",
            "cocycle_linearity",
        ] {
            verdicts.push(audit_within(&reports[name], audit, COCYCLE_TOL));
        }
    }
    all(verdicts)
}

fn separation(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let mut verdicts = Vec::new();
    for name in [
        "cat-suspension-self",
        "cat-suspension-c2",
        "cat-suspension-c1.37",
    ] {
        let r = &reports[name];
        let sep = r.separation.as_ref().unwrap();
        verdicts.push(check(
            sep.horizon == SEPARATION_HORIZON && sep.separated_fraction >= SEPARATED_FRACTION,
            format!(
                "{name}: fraction {} at horizon {}",
                sep.separated_fraction, sep.horizon
            ),
        ));
    }
    let r = &reports["torus-translation-negative"];
    let sep = r.separation.as_ref().unwrap();
    verdicts.push(check(
        sep.separated_fraction == 0.0 && r.separating_hypothesis == "not certified",
        format!(
            "negative control: fraction {}, hypothesis {}",
            sep.separated_fraction, r.separating_hypothesis
        ),
    ));
    all(verdicts)
}

fn action_recovery(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let r = &reports["action-T3-B"];
    let n = r.action_centralizer.as_ref().map_or(0, |f| f.samples.len());
    all(vec![
        check(
            r.status == RunStatus::Pass,
            format!("status {:?}", r.status),
        ),
        check(n >= ACTION_CHARTS, format!("{n} charts")),
        audit_within(r, "a_error", A_TOL),
        audit_within(r, "a_invariance", INVARIANCE_TOL),
        audit_within(r, "basis_check", BASIS_TOL),
    ])
}

fn flowbox(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let mut verdicts = Vec::new();
    for name in ["action-T3-B", "action-identity"] {
        verdicts.push(audit_within(&reports[name], "flowbox_m_min", M_LOWER));
        verdicts.push(audit_within(&reports[name], "flowbox_norm_max", NORM_UPPER));
    }
    all(verdicts)
}

fn epsilon0() -> Verdict {
    let cat = estimate_epsilon0_flow(&cat(), 32, 1.0);
    let translation =
        SystemSpec::torus_translation_flow(vec![1.0, std::f64::consts::SQRT_2]).unwrap();
    let irrational = estimate_epsilon0_flow(&translation, 32, 1.0);
    let directions = DMatrix::from_column_slice(
        3,
        2,
        &[1.0, 0.0, 0.0, 0.0, std::f64::consts::SQRT_2 - 1.0, 1.0],
    );
    let action = SystemSpec::torus_translation_action(directions).unwrap();
    let lattice = estimate_epsilon0_action(&action, 32, 1.0);
    check(
        cat == 1.0 && irrational == 1.0 && lattice == 1.0,
        format!("cat {cat}, irrational translation {irrational}, T^3 action {lattice}"),
    )
}

fn negative_control(reports: &BTreeMap<String, RunReport>) -> Verdict {
    let r = &reports["broken-commuting-control"];
    let delta = r.constants.as_ref().map_or(f64::NAN, |c| c.delta);
    let commutation = r.commutation_residual.unwrap_or(f64::NAN);
    let recovery_failed = r.audit("recovery").is_some_and(|a| !a.passed);
    check(
        commutation > delta
            && recovery_failed
            && r.centralizer.is_none()
            && r.status.exit_code() == 2,
        format!(
            "commutation {commutation:.3e} > delta {delta:.3e}, recovery \"{}\", exit {}",
            r.recovery,
            r.status.exit_code()
        ),
    )
}

fn main() -> ExitCode {
    let mut reports = BTreeMap::new();
    let mut identical = Vec::new();
    for config in builtins() {
        let mut first = run_scenario(&config).report;
        let mut second = run_scenario(&config).report;
        first.normalize();
        second.normalize();
        identical.push(check(
            first.to_json() == second.to_json(),
            config.name.clone(),
        ));
        reports.insert(config.name.clone(), first);
    }

    let (contraction, slope) = section_criteria();
    let criteria: Vec<(&str, Verdict)> = vec![
        ("contraction rate of the section solver", contraction),
        ("G-slope bound", slope),
        ("time-change recovery A = 2", time_change_recovery(&reports)),
        ("non-constant A on two components", non_constant_a(&reports)),
        ("cocycle identities", cocycle(&reports)),
        ("separation probes", separation(&reports)),
        ("action recovery A = B", action_recovery(&reports)),
        ("flowbox derivative bounds", flowbox(&reports)),
        ("epsilon0 estimates", epsilon0()),
        ("non-commuting negative control", negative_control(&reports)),
        ("determinism of normalized reports", all(identical)),
    ];
    let mut failures = 0;
    for (i, (name, verdict)) in criteria.iter().enumerate() {
        match verdict {
            Ok(d) => println!("criterion {:2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failures += 1;
                println!("criterion {:2} FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
