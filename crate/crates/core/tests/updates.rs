use std::collections::BTreeMap;

use mulearn::catalog;
use mulearn::semantics::{FlowConfig, State};
use mulearn::vpmu::*;

fn check(m: &mulearn::dsl::Model, cfg: &ValidationConfig) -> ValidationReport {
    let r = validate_update(m, 2000, 11, cfg).unwrap();
    assert_eq!(r.verdict, Verdict::Pass, "{}: {r:?}\n{m}", m.name);
    assert_eq!(r.monitor_rejections, 0);
    r
}

/// Samples of the gain model's plant with `k = 1.5`, closed form.
fn gain_data() -> TrajectoryData {
    let k = 1.5;
    let mut ep = Vec::new();
    let (mut p, mut v) = (0.0, 0.0);
    for i in 0..12 {
        let a = [1.0, 0.0, -1.0, -1.0, 0.0, 1.0][i % 6];
        ep.push(Sample {
            state: State::from_pairs([("p", p), ("v", v), ("a", 0.0), ("t", 0.5)]),
            action: BTreeMap::from([("a".to_string(), a), ("t".to_string(), 0.0)]),
            duration: 0.5,
        });
        p += v * 0.5 + 0.5 * k * a * 0.25;
        v += k * a * 0.5;
    }
    TrajectoryData { episodes: vec![ep] }
}

#[test]
fn instantiated_example_is_safe() {
    let m = catalog::load("example1").unwrap();
    let out = instantiate_parameter(&m, &BTreeMap::from([("A".into(), 2.0)])).unwrap();
    check(&out, &ValidationConfig::default());
}

#[test]
fn fitted_gain_model_is_safe() {
    let m = catalog::load("gain").unwrap();
    let (out, fit) = auto_instantiate(&m, &gain_data()).unwrap();
    assert!((fit["k"] - 1.5).abs() < 1e-6, "{fit:?}");
    check(&out, &ValidationConfig::default());
}

#[test]
fn worst_case_disturbed_acc_is_safe() {
    let m = catalog::load("acc").unwrap();
    let spec = DisturbanceSpec {
        ode_var: "vel_rel".into(),
        kind: DisturbanceKind::Multiplicative,
        bound: 0.5,
        guard_mode: GuardMode::WorstCase,
        param: None,
    };
    let out = add_disturbance(&m, &spec).unwrap();
    check(&out, &ValidationConfig::default());
}

#[test]
fn relaxed_stopline_is_safe() {
    let m = catalog::load("stopline").unwrap();
    let spec = RelaxSpec {
        guard_term: "V * T".into(),
        variable: "p".into(),
        order: 1,
        horizon: "T".into(),
    };
    let out = relax_worst_case(&m, &spec).unwrap();
    check(&out, &ValidationConfig::default());
}

#[test]
fn circling_obstacle_is_avoided() {
    let m = catalog::load("robot").unwrap();
    let out = static_to_circular(&m, "ox", "oy").unwrap();
    let cfg = ValidationConfig {
        flow: FlowConfig::rk4(1e-2),
        points: 20,
        ..ValidationConfig::default()
    };
    let r = check(&out, &cfg);
    assert!(r.transitions > 0);
}

#[test]
fn additive_noise_on_coasting_example_is_caught() {
    // coasting keeps v' = d, which may be negative, so v >= 0 cannot be kept
    let m = catalog::load("example1").unwrap();
    let spec = DisturbanceSpec {
        ode_var: "v".into(),
        kind: DisturbanceKind::Additive,
        bound: 0.1,
        guard_mode: GuardMode::WorstCase,
        param: None,
    };
    let out = add_disturbance(&m, &spec).unwrap();
    assert_eq!(out.plant.rhs("v").unwrap().to_string(), "a + d");
    let r = validate_update(&out, 2000, 11, &ValidationConfig::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.counterexample.is_some());
}

#[test]
fn nominal_acc_under_weak_brakes_is_caught() {
    // plant disturbed, guards left nominal: the symbolic model at d = 0.5
    // with the nominal guards put back
    let m = catalog::load("acc").unwrap();
    let mut weak = m.clone();
    weak.plant.equations[1].1 = mulearn::dsl::parse_term("0.5 * acc_rel").unwrap();
    let r = validate_update(&weak, 2000, 11, &ValidationConfig::default()).unwrap();
    assert_eq!(r.verdict, Verdict::Fail);
}

#[test]
fn learned_model_explains_its_training_data() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/double_integrator.json");
    let data: TrajectoryData = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let safe = mulearn::dsl::parse_formula("v >= -2 & v <= 2").unwrap();
    let grid = mulearn::semantics::Discretization::new().with_grid("u", vec![-1.0, 0.0, 1.0]);
    let (model, _) = learn_linear_dynamics(&data, &safe, &grid, 0.5).unwrap();
    let clock = model.clock.clone().unwrap();
    let m = mulearn::monitors::MonitoredModel::new(model).with_discretization(grid);
    let mut checked = 0;
    for ep in &data.episodes {
        for w in ep.windows(2) {
            let mut assign: Vec<(&str, mulearn::dsl::Term)> = w[0]
                .action
                .iter()
                .map(|(k, v)| (k.as_str(), mulearn::dsl::Term::num(*v)))
                .collect();
            assign.push((clock.as_str(), mulearn::dsl::Term::num(0.0)));
            let u = mulearn::semantics::Action::from_pairs(assign).unwrap();
            assert!(
                m.model_monitor(&w[0].state, &u, &w[1].state, Some(w[0].duration))
                    .unwrap(),
                "{:?} -> {:?}",
                w[0],
                w[1].state
            );
            checked += 1;
        }
    }
    assert_eq!(checked, data.transition_count());
}

#[test]
fn every_update_output_reparses() {
    let spec = DisturbanceSpec {
        ode_var: "vel_rel".into(),
        kind: DisturbanceKind::Multiplicative,
        bound: 0.5,
        guard_mode: GuardMode::WorstCase,
        param: None,
    };
    let relax = RelaxSpec {
        guard_term: "V * T".into(),
        variable: "p".into(),
        order: 1,
        horizon: "T".into(),
    };
    let outputs = [
        instantiate_parameter(
            &catalog::load("example1").unwrap(),
            &BTreeMap::from([("A".into(), 2.0)]),
        )
        .unwrap(),
        auto_instantiate(&catalog::load("gain").unwrap(), &gain_data())
            .unwrap()
            .0,
        add_disturbance(&catalog::load("acc").unwrap(), &spec).unwrap(),
        relax_worst_case(&catalog::load("stopline").unwrap(), &relax).unwrap(),
        static_to_circular(&catalog::load("robot").unwrap(), "ox", "oy").unwrap(),
    ];
    for m in outputs {
        let back = mulearn::dsl::parse_model(&m.to_string()).unwrap();
        assert_eq!(back, m);
    }
}
