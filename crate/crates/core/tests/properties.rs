use std::collections::BTreeMap;

use proptest::prelude::*;

use mulearn::catalog;
use mulearn::dsl::algebra::{derivative, eval_formula, eval_term, simplify_term, single, subst_formula, subst_term};
use mulearn::dsl::{parse_formula, parse_program, parse_term, CmpOp, Formula, Program, Term};
use mulearn::envs::acc::{AccEnv, AccEnvConfig};
use mulearn::monitors::{MonitoredModel, Tolerance};
use mulearn::par::{derive_seed, map_indexed, Execution};
use mulearn::runtime::Environment;
use mulearn::semantics::{flow, Action, FlowConfig, State};
use mulearn::vpmu::static_to_circular;

const VARS: [&str; 3] = ["x", "y", "z"];

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        (0u32..200).prop_map(|n| Term::Num(n as f64 / 4.0)),
        prop::sample::select(&VARS[..]).prop_map(Term::var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Term::neg),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::mul(a, b)),
            (inner.clone(), inner.clone())
                .prop_filter(
                    "literal zero denominator",
                    |(_, b)| !matches!(b, Term::Num(x) if *x == 0.0)
                )
                .prop_map(|(a, b)| Term::div(a, b)),
            (inner, 0u32..4).prop_map(|(a, n)| Term::pow(a, n)),
        ]
    })
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne])
}

fn formula() -> impl Strategy<Value = Formula> {
    let atom = prop_oneof![
        Just(Formula::True),
        Just(Formula::False),
        (term(), cmp_op(), term()).prop_map(|(a, op, b)| Formula::cmp(a, op, b)),
    ];
    atom.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|a| Formula::Not(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::Or(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::Implies(Box::new(a), Box::new(b))),
        ]
    })
}

fn program() -> impl Strategy<Value = Program> {
    let var = prop::sample::select(&VARS[..]);
    let atom = prop_oneof![
        (var.clone(), term()).prop_map(|(v, t)| Program::assign(v, t)),
        var.prop_map(|v| Program::NondetAssign(v.into())),
        formula().prop_map(Program::Test),
    ];
    atom.prop_recursive(3, 10, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Program::seq(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Program::choice(a, b)),
            inner.prop_map(|a| Program::Loop(Box::new(a))),
        ]
    })
}

fn env_of(x: f64, y: f64, z: f64) -> impl Fn(&str) -> Option<f64> {
    move |v| match v {
        "x" => Some(x),
        "y" => Some(y),
        "z" => Some(z),
        _ => None,
    }
}

fn value() -> impl Strategy<Value = f64> {
    -8.0f64..8.0
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn terms_survive_printing(t in term()) {
        let text = t.to_string();
        let back = parse_term(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn formulas_survive_printing(f in formula()) {
        let text = f.to_string();
        let back = parse_formula(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert_eq!(back, f);
    }

    #[test]
    fn programs_survive_printing(p in program()) {
        let text = p.to_string();
        let back = parse_program(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn substitution_commutes_with_evaluation(
        t in term(), e in term(), f in formula(), x in value(), y in value(), z in value()
    ) {
        // [x := e] t evaluated in s equals t evaluated in s with x set to e's value
        let s = env_of(x, y, z);
        let Ok(ev) = eval_term(&e, &s) else { return Ok(()) };
        prop_assume!(ev.is_finite());
        let map = single("x", e.clone());
        if let (Ok(lhs), Ok(rhs)) = (eval_term(&subst_term(&t, &map), &s), eval_term(&t, &env_of(ev, y, z))) {
            prop_assume!(lhs.is_finite() && rhs.is_finite());
            prop_assert!(close(lhs, rhs), "{lhs} vs {rhs}");
        }
        if let (Ok(lhs), Ok(rhs)) = (eval_formula(&subst_formula(&f, &map), &s), eval_formula(&f, &env_of(ev, y, z))) {
            prop_assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn simplification_preserves_value(t in term(), x in value(), y in value(), z in value()) {
        let s = env_of(x, y, z);
        if let (Ok(a), Ok(b)) = (eval_term(&t, &s), eval_term(&simplify_term(&t), &s)) {
            prop_assume!(a.is_finite() && a.abs() < 1e6);
            prop_assert!(close(a, b) || (a - b).abs() < 1e-6, "{a} vs {b} for {t}");
        }
    }

    #[test]
    fn derivative_matches_central_difference(t in term(), x in value(), y in value(), z in value()) {
        let h = 1e-5;
        let d = derivative(&t, "x");
        let (Ok(up), Ok(down), Ok(exact)) = (
            eval_term(&t, &env_of(x + h, y, z)),
            eval_term(&t, &env_of(x - h, y, z)),
            eval_term(&d, &env_of(x, y, z)),
        ) else { return Ok(()) };
        let approx = (up - down) / (2.0 * h);
        prop_assume!(approx.is_finite() && exact.is_finite() && approx.abs() < 1e3);
        // skip points near a pole of the term, where the difference quotient is meaningless
        let (Ok(mid), Ok(far)) = (eval_term(&t, &env_of(x, y, z)), eval_term(&t, &env_of(x + 1e-3, y, z))) else {
            return Ok(());
        };
        prop_assume!((far - mid).abs() < 1.0);
        prop_assert!((approx - exact).abs() <= 1e-4 * (1.0 + exact.abs()), "{approx} vs {exact} for d/dx {t}");
    }

    #[test]
    fn tolerance_band_is_symmetric(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        let tol = Tolerance::default();
        prop_assert_eq!(tol.within(a, b), tol.within(b, a));
        prop_assert!(tol.within(a, a));
    }

    #[test]
    fn both_execution_modes_agree(seed in any::<u64>(), n in 0usize..200) {
        let f = |i: usize| derive_seed(seed, i as u64);
        prop_assert_eq!(map_indexed(n, Execution::Sequential, f), map_indexed(n, Execution::Parallel, f));
    }
}

fn acc_fixture() -> (AccEnvConfig, mulearn::envs::Task) {
    let cfg = AccEnvConfig::default();
    let task = cfg.task().unwrap();
    (cfg, task)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_monitor_implies_controller_monitor(
        pos in 0.1f64..40.0,
        vel in -8.0f64..8.0,
        action in 0usize..16,
        model in 0usize..5,
        truth in 0usize..5,
        seed in any::<u64>(),
    ) {
        let (cfg, task) = acc_fixture();
        let mut env = AccEnv::new(cfg.clone(), &task);
        let mut s = env.reset(seed);
        s.set("pos_rel", pos);
        s.set("vel_rel", vel);
        env.set_p_true(cfg.p_grid[truth]);
        let m = &task.models()[model];
        let u = &task.actions[action % task.actions.len()];
        let post = env.advance(&s, &u.resolve(&m.augment(&s)).unwrap());
        if m.model_monitor(&s, u, &post, None).unwrap() {
            prop_assert!(m.controller_monitor(&s, u).unwrap());
        }
    }

    #[test]
    fn rotating_obstacle_keeps_its_radius(ox in -5.0f64..5.0, oy in -5.0f64..5.0, d in 0.0f64..2.0) {
        let m = static_to_circular(&catalog::load("robot").unwrap(), "ox", "oy").unwrap();
        let s = State::from_pairs([("rx", 0.0), ("ry", 0.0), ("vx", 0.0), ("vy", 0.0), ("t", 0.0), ("ox", ox), ("oy", oy)])
            .with_defaults(&m.constants);
        let mut plant = m.plant.clone();
        plant.domain = Formula::True;
        let out = flow(&plant, &s, d, &FlowConfig::rk4(1e-3)).unwrap();
        let r0 = ox * ox + oy * oy;
        let r1 = out.value("ox").powi(2) + out.value("oy").powi(2);
        prop_assert!((r0 - r1).abs() <= 1e-8 * (1.0 + r0), "{r0} -> {r1}");
    }

    #[test]
    fn staying_put_is_allowed_only_clear_of_the_whole_orbit(
        rx in -4.0f64..4.0, ry in -4.0f64..4.0, ox in -4.0f64..4.0, oy in -4.0f64..4.0,
    ) {
        let m = MonitoredModel::new(static_to_circular(&catalog::load("robot").unwrap(), "ox", "oy").unwrap());
        let s = State::from_pairs([("rx", rx), ("ry", ry), ("vx", 0.0), ("vy", 0.0), ("t", 0.0), ("ox", ox), ("oy", oy)]);
        let stay = Action::from_pairs([("vx", Term::num(0.0)), ("vy", Term::num(0.0)), ("t", Term::num(0.0))]).unwrap();
        let radius = m.model.constants["R"];
        // geometric oracle: closest approach of the orbit to the robot
        let orbit = (ox * ox + oy * oy).sqrt();
        let closest = ((rx * rx + ry * ry).sqrt() - orbit).abs();
        prop_assume!((closest - radius).abs() > 1e-6);
        prop_assert_eq!(m.controller_monitor(&s, &stay).unwrap(), closest > radius);
    }
}

#[test]
fn example_text_is_canonical() {
    let mut texts = BTreeMap::new();
    for name in catalog::names() {
        let m = catalog::load(name).unwrap();
        let printed = m.to_string();
        let again = mulearn::dsl::parse_model(&printed).unwrap();
        assert_eq!(again, m, "{name}");
        texts.insert(name, printed);
    }
    assert!(texts.len() >= 5);
}
