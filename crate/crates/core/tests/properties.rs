mod common;

use proptest::prelude::*;
use singcond::appendix::ExtensionInstance;
use singcond::canonical::CanonicalProblem;
use singcond::equivalence::{self, Thresholds};
use singcond::expr::{BinOp, Func, Node};
use singcond::fan::{self, TubeSchedule};
use singcond::geometry::{self, Projection};
use singcond::linalg;
use singcond::sampler::SamplerSpec;
use singcond::{Chart, Expression, GridSpec, LevelSetProblem};

use common::*;

const CORPUS: [&str; 8] = [
    "x1^2*sin(x2)",
    "exp(-(x1^2+x2^2)/2)/(2*pi)",
    "x2/x1",
    "atan2(x2, x1)",
    "sqrt(x1^2 + x2^2)",
    "log(1 + x1^2)*cos(x1*x2)",
    "abs(x1)*exp(-(x1*x2)^2/2)",
    "erf(x1 - 2*x2)",
];

fn central_diff(e: &Expression, x: &[f64], i: usize) -> f64 {
    let h = 1e-3;
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[i] += d;
        e.eval(&y).unwrap()
    };
    (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h)
}

fn away_from_kinks() -> impl Strategy<Value = f64> {
    prop_oneof![-2.0..-0.2f64, 0.2..2.0f64]
}

fn node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (-5.0..5.0f64).prop_map(Node::Const),
        (0..3usize).prop_map(Node::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let op = prop_oneof![
            Just(BinOp::Add),
            Just(BinOp::Sub),
            Just(BinOp::Mul),
            Just(BinOp::Div),
            Just(BinOp::Pow)
        ];
        let unary = prop_oneof![
            Just(Func::Exp),
            Just(Func::Sin),
            Just(Func::Cos),
            Just(Func::Abs),
            Just(Func::Erf),
            Just(Func::Sqrt)
        ];
        let binary = prop_oneof![Just(Func::Atan2), Just(Func::Min), Just(Func::Max)];
        prop_oneof![
            inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Node::Bin(o, Box::new(a), Box::new(b))),
            (unary, inner.clone()).prop_map(|(f, a)| Node::Call(f, vec![a])),
            (binary, inner.clone(), inner).prop_map(|(f, a, b)| Node::Call(f, vec![a, b])),
        ]
    })
}

fn same_value(a: Result<f64, singcond::ExprError>, b: Result<f64, singcond::ExprError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn autodiff_matches_finite_differences(k in 0..CORPUS.len(), x1 in away_from_kinks(), x2 in away_from_kinks()) {
        prop_assume!((x1 - x2).abs() > 0.2);
        let e = Expression::parse(CORPUS[k]).unwrap();
        let g = e.grad(&[x1, x2]).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let fd = central_diff(&e, &[x1, x2], i);
            prop_assert!((gi - fd).abs() <= 1e-6 * gi.abs().max(1e-3), "{} d/dx{}: {} vs {}", CORPUS[k], i + 1, gi, fd);
        }
    }

    #[test]
    fn printing_round_trips(n in node(), x in prop::array::uniform3(-3.0..3.0f64)) {
        let e = Expression::from_node(n);
        let text = e.to_string();
        let back = Expression::parse(&text).unwrap();
        prop_assert_eq!(back.to_string(), text.clone());
        prop_assert!(same_value(e.eval(&x), back.eval(&x)), "{}", text);
    }

    #[test]
    fn projection_respects_the_extinction_bound(
        a in 0.0..0.4f64,
        x1 in -3.0..3.0f64,
        x2 in -3.0..3.0f64,
    ) {
        let phi = format!("x1 + x2 + {a:?}*sin(x1)");
        let p = LevelSetProblem::parse(2, GAUSS2, &[&phi], &["x1"], &[0.0]).unwrap();
        let r = ((1.0 - a).powi(2) + 1.0).sqrt();
        let pr = geometry::project_to_level_set(&p, &[x1, x2], Projection::default()).unwrap();
        prop_assert!(pr.residual <= 1e-8);
        prop_assert!(linalg::dist(&pr.start, &pr.end) <= pr.extinction_time / r + 1e-6);
    }

    #[test]
    fn canonical_measure_ignores_the_chart(lo in -3.0..0.0f64, len in 0.1..3.0f64, c in 0.2..5.0f64) {
        let hi = lo + len;
        let total = |map: [String; 2], dom: (f64, f64)| {
            let chart = Chart::parse(&[map[0].as_str(), map[1].as_str()], &[dom]).unwrap();
            CanonicalProblem::new(Expression::parse(GAUSS2).unwrap(), chart).unwrap().measure().unwrap().total
        };
        let a = total(["x1".into(), "-x1".into()], (lo, hi));
        let b = total([format!("{c:?}*x1"), format!("-{c:?}*x1")], (lo / c, hi / c));
        let d = total(["-x1".into(), "x1".into()], (-hi, -lo));
        prop_assert!(rel(b, a) <= 1e-6 && rel(d, a) <= 1e-6, "{a} {b} {d}");
    }

    #[test]
    fn conditional_tables_are_normalized(rho in -0.9..0.9f64, s in -2.0..2.0f64) {
        let q = 1.0 - rho * rho;
        let joint = format!(
            "exp(-(x1^2 - 2*{rho:?}*x1*x2 + x2^2)/(2*{q:?}))/(2*pi*sqrt({q:?}))"
        );
        let t = fan::conditional_density_1d(&Expression::parse(&joint).unwrap(), s, &GridSpec::new(-5.0, 5.0, 201)).unwrap();
        prop_assert!(t.is_normalized(), "mass {}", t.trapezoid_mass());
        for (u, v) in t.grid.iter().zip(&t.values) {
            let want = (-(u - rho * s).powi(2) / (2.0 * q)).exp() / (2.0 * std::f64::consts::PI * q).sqrt();
            prop_assert!((v - want).abs() <= 1e-8 * want.max(1e-3));
        }
    }

    #[test]
    fn extension_violation_is_at_least_rho(rho in 0.0..=1.0f64, c in -10.0..10.0f64) {
        let inst = ExtensionInstance::new(rho, c).unwrap();
        prop_assert!(inst.violation() >= rho - 1e-15);
        if rho == 0.0 {
            prop_assert!(inst.is_consistent());
        } else if rho >= 1e-11 {
            prop_assert!(!inst.is_consistent());
        }
    }

    #[test]
    fn rescaling_phi_changes_nothing(c in 0.2..5.0f64, s in -1.0..1.0f64) {
        let grid = GridSpec::new(-4.0, 4.0, 81);
        let base = LevelSetProblem::parse(2, GAUSS2, &["x1 + x2"], &["x1"], &[s]).unwrap();
        let scaled_phi = format!("{c:?}*(x1 + x2)");
        let scaled = LevelSetProblem::parse(2, GAUSS2, &[&scaled_phi], &["x1"], &[c * s]).unwrap();
        let inv = |e: &str| [Expression::parse("x2").unwrap(), Expression::parse(e).unwrap()];
        let a = fan::fan_density_diffeo(&base, &inv("x1 - x2"), &grid).unwrap();
        let b = fan::fan_density_diffeo(&scaled, &inv(&format!("x1/{c:?} - x2")), &grid).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-3));
        }
        let chart = Chart::parse(&["x1", &format!("{:?} - x1", s)], &[(-3.0, 3.0)]).unwrap();
        let ra = equivalence::check_theorem3(&base, &chart, 0.1, 200, 1, Thresholds::default()).unwrap();
        let rb = equivalence::check_theorem3(&scaled, &chart, 0.1, 200, 1, Thresholds::default()).unwrap();
        prop_assert_eq!(ra.verdict, rb.verdict);
        prop_assert!(rel(rb.j_mean, c * ra.j_mean) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn monte_carlo_ignores_worker_count(seed in any::<u64>(), workers in 1..9usize) {
        let p = LevelSetProblem::parse(2, GAUSS2, &["x2/x1"], &["x1"], &[-1.0]).unwrap();
        let sched = TubeSchedule { epsilons: vec![0.2, 0.1], samples_per_eps: 20_000, seed };
        let sampler = SamplerSpec::standard_normal(2);
        let one = fan::fan_tube_estimate(&p, &[(-0.5, 0.5)], &sched, &sampler, Some(1)).unwrap();
        let many = fan::fan_tube_estimate(&p, &[(-0.5, 0.5)], &sched, &sampler, Some(workers)).unwrap();
        prop_assert_eq!(one, many);
    }
}
