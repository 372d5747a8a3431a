mod common;

use common::fixture;
use memsim_core::netlist::{parse_expression, parse_netlist, CardKind, Expression};
use proptest::prelude::*;

#[test]
fn hp_subckt_structure() {
    let doc = parse_netlist(&fixture("hp_subckt.sp")).unwrap();
    assert_eq!(doc.title.as_deref(), Some("HP memristor model"));
    assert!(doc.cards.is_empty());
    let def = &doc.subckts["memristor"];
    assert_eq!(def.ports, ["plus", "minus"]);
    let params: Vec<(&str, f64)> = def
        .params
        .iter()
        .map(|(k, v)| (k.as_str(), v.number().unwrap()))
        .collect();
    assert_eq!(
        params,
        [("ron", 100.0), ("roff", 16e3), ("rinit", 1e3), ("d", 10e-9), ("uv", 10e-15), ("p", 10.0)]
    );
    let names: Vec<&str> = def.cards.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["gx", "cx", "raux", "emem", "roff"]);
    assert!(matches!(&def.cards[0].kind, CardKind::Vccs { pos, neg, .. } if pos == "0" && neg == "x"));
    assert!(matches!(&def.cards[1].kind, CardKind::Capacitor { ic: Some(_), .. }));
    assert!(matches!(&def.cards[3].kind, CardKind::Vcvs { pos, neg, .. } if pos == "plus" && neg == "aux"));
}

#[test]
fn continuation_lines_join() {
    let a = parse_netlist(&fixture("hp_subckt.sp")).unwrap();
    let b = parse_netlist(&fixture("hp_subckt_continuation.sp")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn hp_subckt_prints_and_reparses() {
    let doc = parse_netlist(&fixture("hp_subckt.sp")).unwrap();
    let again = parse_netlist(&doc.to_string()).unwrap();
    assert_eq!(doc, again);
}

fn node() -> impl Strategy<Value = String> {
    prop_oneof![Just("0".to_string()), "[a-z][a-z0-9_]{0,4}", (1u32..20).prop_map(|n| n.to_string())]
}

fn number() -> impl Strategy<Value = String> {
    let mantissa = prop_oneof![1.0f64..1000.0, (1u32..100).prop_map(f64::from)];
    let suffix = prop_oneof![Just(""), Just("k"), Just("meg"), Just("m"), Just("u"), Just("n"), Just("p"), Just("f"), Just("t"), Just("g")];
    (mantissa, suffix).prop_map(|(m, s)| format!("{m}{s}"))
}

fn expr_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        number(),
        node().prop_map(|n| format!("V({n})")),
        Just("I(e1)".to_string()),
        Just("gain".to_string()),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}{op}{b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("pow({a},{b})")),
            (prop::sample::select(vec!["sqrt", "exp", "log", "abs"]), inner)
                .prop_map(|(f, a)| format!("{f}({a})")),
        ]
    })
}

fn card(k: usize) -> impl Strategy<Value = String> {
    prop_oneof![
        (node(), node(), number()).prop_map(move |(a, b, v)| format!("R{k} {a} {b} {v}")),
        (node(), node(), number(), prop::option::of(number()))
            .prop_map(move |(a, b, v, ic)| match ic {
                Some(ic) => format!("C{k} {a} {b} {v} IC={ic}"),
                None => format!("C{k} {a} {b} {v}"),
            }),
        (node(), node(), number()).prop_map(move |(a, b, v)| format!("V{k} {a} {b} DC {v}")),
        (node(), node(), expr_text()).prop_map(move |(a, b, e)| format!("E{k} {a} {b} VOL='{e}'")),
        (node(), node(), expr_text()).prop_map(move |(a, b, e)| format!("G{k} {a} {b} CUR='{e}'")),
        (node(), node(), node(), number()).prop_map(move |(o, p, m, g)| format!("X{k} {o} {p} {m} OPAMP GAIN={g}")),
        (node(), node(), number()).prop_map(move |(p, m, r)| format!("X{k} {p} {m} HPMEM RINIT={r}")),
        (node(), node()).prop_map(move |(p, m)| format!("X{k} {p} {m} cell")),
    ]
}

fn document() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(any::<prop::sample::Index>(), 1..8),
        prop::option::of((number(), number())),
        prop::option::of((node(), number())),
    )
        .prop_flat_map(|(picks, tran, ic)| {
            let cards: Vec<_> = (0..picks.len()).map(card).collect();
            (cards, Just(tran), Just(ic))
        })
        .prop_map(|(cards, tran, ic)| {
            let mut s = String::from("* generated\n.subckt cell a b\n+ gain=2 r=1k\nr1 a mid 'r*gain'\nr2 mid b 1k\n.ends cell\n");
            for c in cards {
                s += &c;
                s.push('\n');
            }
            if let Some((step, stop)) = tran {
                s += &format!(".tran {step} {stop}\n");
            }
            if let Some((n, v)) = ic {
                s += &format!(".ic v({n})={v}\n");
            }
            s + ".end\n"
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn print_parse_round_trip(text in document()) {
        let doc = parse_netlist(&text).unwrap();
        let printed = doc.to_string();
        let again = parse_netlist(&printed).unwrap();
        prop_assert_eq!(&doc, &again, "printed:\n{}", printed);
    }

    #[test]
    fn case_does_not_matter(text in document()) {
        let lower = parse_netlist(&text).unwrap();
        let mut upper = parse_netlist(&text.to_uppercase()).unwrap();
        upper.title = lower.title.clone();
        prop_assert_eq!(lower, upper);
    }
}

/// Expressions over three slots that stay finite and smooth on [-2, 2]^3.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(|v| format!("({v})")),
        (0usize..3).prop_map(|s| format!("V(n{s})")),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}{op}{b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}/(1+{b}*{b}))")),
            (inner.clone(), 0u32..5).prop_map(|(a, n)| format!("pow({a},{n})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("pow(1+{a}*{a},{b}/(2+{b}*{b}))")),
            inner.clone().prop_map(|a| format!("sqrt(1+{a}*{a})")),
            inner.clone().prop_map(|a| format!("log(1+{a}*{a})")),
            inner.clone().prop_map(|a| format!("exp({a}/(1+{a}*{a}))")),
            inner.prop_map(|a| format!("-{a}")),
        ]
    })
}

fn bind_slots(e: &Expression) -> Expression {
    e.bind(&Default::default(), &mut |leaf| match leaf {
        Expression::Voltage(n) => Ok(Some(n[1..].parse().unwrap())),
        _ => unreachable!(),
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn derivatives_match_finite_differences(
        text in smooth_expr(),
        at in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let e = bind_slots(&parse_expression(&text).unwrap());
        let d = e.eval(&at).unwrap();
        prop_assume!(d.value.is_finite());
        for s in 0..3 {
            // Richardson-extrapolated central difference, O(h^4).
            let f = |h: f64| {
                let mut p = at.clone();
                let mut m = at.clone();
                p[s] += h;
                m[s] -= h;
                (e.eval(&p).unwrap().value - e.eval(&m).unwrap().value) / (2.0 * h)
            };
            let h = 1e-3;
            let fd = (4.0 * f(h / 2.0) - f(h)) / 3.0;
            let ad = d.partial(s);
            // Relative check, with a floor at the difference quotient's
            // cancellation error for near-zero derivatives.
            let floor = 1e-12 * d.value.abs().max(1.0) / h;
            prop_assert!(
                (ad - fd).abs() <= 1e-6 * ad.abs().max(fd.abs()) + floor,
                "{}: d/dslot{} ad={} fd={}", text, s, ad, fd
            );
        }
    }
}

#[test]
fn absolute_value_derivative_away_from_zero() {
    let e = bind_slots(&parse_expression("abs(V(n0))*V(n1)").unwrap());
    let d = e.eval(&[-2.0, 3.0]).unwrap();
    assert_eq!(d.value, 6.0);
    assert_eq!(d.partial(0), -3.0);
    assert_eq!(d.partial(1), 2.0);
}
