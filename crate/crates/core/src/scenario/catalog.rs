//! Built-in scenarios.

use std::f64::consts::SQRT_2;

use super::config::{
    Expectations, Horizons, PsiDescription, SampleCounts, ScenarioConfig, SystemDescription,
};

const CAT: [[i64; 2]; 2] = [[2, 1], [1, 1]];
const SEED: u64 = 20_240_611;

fn cat(time_scale: f64) -> SystemDescription {
    SystemDescription::SuspensionFlow {
        matrix: CAT,
        roof: 1.0,
        time_scale,
    }
}

fn t3_action() -> SystemDescription {
    SystemDescription::TorusTranslationAction {
        directions: vec![vec![1.0, 0.0, 0.0], vec![0.0, SQRT_2 - 1.0, 1.0]],
        time_scale: 1.0,
    }
}

fn scenario(
    name: &str,
    description: &str,
    phi: SystemDescription,
    psi: Option<PsiDescription>,
    expect: Expectations,
) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        description: Some(description.to_string()),
        phi,
        psi,
        tolerances: Default::default(),
        horizons: Horizons::default(),
        samples: SampleCounts::default(),
        seed: SEED,
        expect,
    }
}

fn flow_expect(separating: bool, a_values: Vec<f64>) -> Expectations {
    Expectations {
        separating: Some(separating),
        a_values: Some(a_values),
        matrix: None,
    }
}

fn action_expect(matrix: Vec<Vec<f64>>) -> Expectations {
    Expectations {
        separating: None,
        a_values: None,
        matrix: Some(matrix),
    }
}

/// Every built-in scenario, in listing order.
pub fn builtins() -> Vec<ScenarioConfig> {
    let action_samples = SampleCounts {
        points: 100,
        ..SampleCounts::default()
    };
    vec![
        scenario(
            "cat-suspension-self",
            "cat-map suspension against itself; A = 1",
            cat(1.0),
            None,
            flow_expect(true, vec![1.0]),
        ),
        scenario(
            "cat-suspension-c2",
            "cat-map suspension against its double-speed reparameterization; A = 2",
            cat(1.0),
            Some(PsiDescription::TimeScale { factor: 2.0 }),
            flow_expect(true, vec![2.0]),
        ),
        scenario(
            "cat-suspension-c1.37",
            "cat-map suspension against time scale 1.37; A = 1.37",
            cat(1.0),
            Some(PsiDescription::TimeScale { factor: 1.37 }),
            flow_expect(true, vec![1.37]),
        ),
        scenario(
            "two-component-piecewise",
            "two cat-map suspensions, psi runs at speed 1 on one and 3 on the other",
            SystemDescription::DisjointUnion {
                components: vec![cat(1.0), cat(1.0)],
                time_scale: 1.0,
            },
            Some(PsiDescription::System {
                system: SystemDescription::DisjointUnion {
                    components: vec![cat(1.0), cat(3.0)],
                    time_scale: 1.0,
                },
            }),
            flow_expect(true, vec![1.0, 3.0]),
        ),
        scenario(
            "torus-translation-negative",
            "irrational translation flow on T^2 (an isometry, so not separating); psi = phi_2t",
            SystemDescription::TorusTranslationFlow {
                velocity: vec![1.0, SQRT_2],
                time_scale: 1.0,
            },
            Some(PsiDescription::TimeScale { factor: 2.0 }),
            flow_expect(false, vec![2.0]),
        ),
        ScenarioConfig {
            samples: action_samples.clone(),
            ..scenario(
                "action-T3-B",
                "translation R^2-action on T^3 against Psi_v = Phi_Bv with B = [[2,0],[1,1]]",
                t3_action(),
                Some(PsiDescription::ActionMatrix {
                    matrix: vec![vec![2.0, 0.0], vec![1.0, 1.0]],
                }),
                action_expect(vec![vec![2.0, 0.0], vec![1.0, 1.0]]),
            )
        },
        ScenarioConfig {
            samples: action_samples,
            ..scenario(
                "action-identity",
                "translation R^2-action on T^3 against itself; A = I",
                t3_action(),
                None,
                action_expect(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            )
        },
        scenario(
            "broken-commuting-control",
            "cat-map suspension against its unstable horocycle flow, which does not commute; recovery must fail",
            cat(1.0),
            Some(PsiDescription::System {
                system: SystemDescription::SuspensionHorocycleFlow {
                    matrix: CAT,
                    roof: 1.0,
                    time_scale: 1.0,
                },
            }),
            Expectations {
                separating: Some(true),
                a_values: None,
                matrix: None,
            },
        ),
    ]
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    builtins().into_iter().find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_valid_and_buildable() {
        let all = builtins();
        assert!(all.len() >= 6);
        for c in &all {
            c.validate().unwrap();
            let phi = c.phi.build().unwrap();
            if let Some(psi) = &c.psi {
                let psi = psi.build(&phi).unwrap();
                assert_eq!(psi.manifold_id(), phi.manifold_id(), "{}", c.name);
            }
        }
        assert!(builtin("cat-suspension-c2").is_some());
        assert!(builtin("nope").is_none());
    }
}
