mod common;

use common::{circuit, fixture, gauss_solve};
use memsim_core::device::{window, MemristorParams};
use memsim_core::engine::{
    dc_operating_point, transient, BiasHints, Integrator, Simulator, TransientConfig,
};
use memsim_core::error::SimError;
use proptest::prelude::*;

const INCREASE: &str = "\
xop v1 v2 v3 opamp
xmem v2 v1 hpmem
rref v2 0 2k
r1 v1 v3 1k
r2 v3 0 1k
";

#[test]
fn ohms_law_bordered_system() {
    let c = circuit("v1 1 0 5\nr1 1 0 1k\n");
    let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
    assert_eq!(op.layout().dim(), 2);
    // Branch current is measured into the source's positive terminal.
    assert!((op.current("v1").unwrap() + 5e-3).abs() < 1e-15);
    assert_eq!(op.iterations, 1);
}

#[test]
fn dividers() {
    let c = circuit("v1 in 0 5\nr1 in mid 1k\nr2 mid 0 1k\n");
    let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
    assert!((op.voltage("mid").unwrap() - 2.5).abs() <= 4.0 * f64::EPSILON * 2.5);

    let c = circuit("v1 in 0 5\nrm in mid 1k\nrref mid 0 2k\n");
    let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
    assert!((op.voltage("mid").unwrap() - 10.0 / 3.0).abs() < 1e-14);
}

#[test]
fn parallel_sources_are_rejected() {
    let c = circuit("v1 a 0 5\nv2 a 0 3\nr1 a 0 1k\n");
    let err = dc_operating_point(&c, &BiasHints::default()).unwrap_err();
    assert!(matches!(err, SimError::Singular(_)), "{err}");
}

#[test]
fn latched_comparator_equilibria() {
    let c = circuit(INCREASE);
    let hi = dc_operating_point(&c, &BiasHints::opamp("xop", 5.0)).unwrap();
    let lo = dc_operating_point(&c, &BiasHints::opamp("xop", -5.0)).unwrap();
    for (op, sign) in [(hi, 1.0), (lo, -1.0)] {
        assert!((op.voltage("v1").unwrap() - sign * 5.0).abs() < 1e-12);
        assert!((op.voltage("v2").unwrap() - sign * 10.0 / 3.0).abs() < 1e-9);
        assert!((op.voltage("v3").unwrap() - sign * 2.5).abs() < 1e-9);
    }
    let err = dc_operating_point(&c, &BiasHints::opamp("r1", 5.0)).unwrap_err();
    assert!(matches!(err, SimError::InvalidConfig(_)));
}

#[test]
fn capacitor_initial_conditions_pin_the_operating_point() {
    let c = circuit("v1 in 0 1\nr1 in out 1k\nc1 out 0 1u ic=0.25\n");
    let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
    assert!((op.voltage("out").unwrap() - 0.25).abs() < 1e-15);

    let c = circuit("v1 in 0 1\nr1 in out 1k\nr2 out 0 1k\n.ic v(out)=0.1\n");
    let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
    assert!((op.voltage("out").unwrap() - 0.1).abs() < 1e-15);
}

fn rc_final(dt: f64, integrator: Integrator) -> f64 {
    let c = circuit("v1 in 0 1\nr1 in out 1k\nc1 out 0 1u ic=0\n");
    let mut cfg = TransientConfig::new(1e-3, dt);
    cfg.integrator = integrator;
    let tr = transient(&c, &cfg, &BiasHints::default()).unwrap();
    assert!((tr.time().last().unwrap() - 1e-3).abs() < 1e-15);
    *tr.signal("v(out)").unwrap().last().unwrap()
}

#[test]
fn rc_step_response() {
    let exact = 1.0 - (-1.0f64).exp();
    for integ in [Integrator::Trapezoidal, Integrator::BackwardEuler] {
        let v = rc_final(1e-6, integ);
        assert!(((v - exact) / exact).abs() < 1e-3, "{integ:?}: {v}");
    }
}

#[test]
fn trapezoidal_is_second_order() {
    let exact = 1.0 - (-1.0f64).exp();
    let e: Vec<f64> = [4e-6, 2e-6, 1e-6]
        .iter()
        .map(|&dt| (rc_final(dt, Integrator::Trapezoidal) - exact).abs())
        .collect();
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.6..4.4).contains(&ratio), "errors {e:?}");
    }
    let be: Vec<f64> = [4e-6, 2e-6]
        .iter()
        .map(|&dt| (rc_final(dt, Integrator::BackwardEuler) - exact).abs())
        .collect();
    assert!((1.8..2.2).contains(&(be[0] / be[1])), "be errors {be:?}");
}

#[test]
fn adaptive_rc_meets_tolerance() {
    let c = circuit("v1 in 0 1\nr1 in out 1k\nc1 out 0 1u ic=0\n");
    let mut cfg = TransientConfig::new(5e-3, 1e-6);
    cfg.adaptive = true;
    let tr = transient(&c, &cfg, &BiasHints::default()).unwrap();
    assert!(tr.len() < 2000, "adaptive took {} points", tr.len());
    let v = tr.signal("v(out)").unwrap();
    for (t, v) in tr.time().iter().zip(v) {
        let exact = 1.0 - (-t / 1e-3).exp();
        assert!((v - exact).abs() < 1e-3, "t={t} v={v}");
    }
    assert!(tr.time().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn subcircuit_probes() {
    let text = fixture("hp_subckt.sp") + "xmem 1 0 memristor\ng1 0 1 cur='1m'\n";
    let c = circuit(&text);
    let cfg = TransientConfig::new(1e-5, 1e-6);
    let tr = transient(&c, &cfg, &BiasHints::default()).unwrap();
    assert!((tr.probe("r(xmem)").unwrap()[0] - 1000.0).abs() < 1e-9);
    let i = tr.probe("I(XMEM.EMEM)").unwrap();
    assert!(i.iter().all(|i| (i - 1e-3).abs() < 1e-12), "{i:?}");
    let err = tr.probe("v(nowhere)").unwrap_err();
    assert!(err.to_string().contains("r(xmem)"));
}

#[test]
fn native_memristor_follows_state_equation() {
    let c = circuit("g1 0 1 cur='1m'\nxmem 1 0 hpmem\n");
    let cfg = TransientConfig::new(1e-3, 1e-6);
    let tr = transient(&c, &cfg, &BiasHints::default()).unwrap();
    let p = MemristorParams::default();
    let x = tr.probe("x(xmem)").unwrap();
    // Midpoint check on the ODE: dx/dt = k i w(x).
    let n = x.len() / 2;
    let slope = (x[n + 1] - x[n - 1]) / (tr.time()[n + 1] - tr.time()[n - 1]);
    let expect = p.drift_coefficient() * 1e-3 * window(x[n], p.p);
    assert!(((slope - expect) / expect).abs() < 1e-6);
    let v = tr.probe("vd(xmem)").unwrap();
    let r = tr.probe("r(xmem)").unwrap();
    for k in 0..x.len() {
        assert!((v[k] / r[k] - 1e-3).abs() < 1e-12);
    }
}

#[test]
fn kcl_residual_is_bounded_on_every_step() {
    let c = circuit(INCREASE);
    let cfg = TransientConfig::new(2e-3, 1e-6);
    let tr = Simulator::new(&c)
        .unwrap()
        .transient(&cfg, &BiasHints::opamp("xop", 5.0))
        .unwrap();
    let worst = tr.kcl_residual.iter().copied().fold(0.0, f64::max);
    assert!(worst <= 1e-9, "worst KCL residual {worst}");
}

#[test]
fn invalid_configs() {
    let c = circuit("v1 1 0 1\nr1 1 0 1\n");
    let sim = Simulator::new(&c).unwrap();
    for cfg in [
        TransientConfig::new(0.0, 1e-6),
        TransientConfig::new(1e-3, 2e-3),
        TransientConfig {
            dt_min: 2e-6,
            ..TransientConfig::new(1e-3, 1e-6)
        },
    ] {
        assert!(matches!(
            sim.transient(&cfg, &BiasHints::default()),
            Err(SimError::InvalidConfig(_))
        ));
    }
}

/// Random resistor networks driven by one source, checked against nodal
/// equations solved by an independent elimination.
type Network = (usize, Vec<(usize, usize, f64)>, Vec<f64>, f64);

fn network() -> impl Strategy<Value = Network> {
    (3usize..8).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((1..=n, 1..=n, 1.0f64..1e5), 1..12),
            prop::collection::vec(10.0f64..1e6, n),
            -10.0f64..10.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn linear_networks_match_direct_solve((n, links, shunts, vs) in network()) {
        let mut text = format!("vs 1 0 {vs:e}\n");
        for (k, r) in shunts.iter().enumerate() {
            text += &format!("rg{k} {} 0 {r:e}\n", k + 1);
        }
        let links: Vec<_> = links.into_iter().filter(|(a, b, _)| a != b).collect();
        for (k, (a, b, r)) in links.iter().enumerate() {
            text += &format!("rl{k} {a} {b} {r:e}\n");
        }
        let c = circuit(&text);
        let op = dc_operating_point(&c, &BiasHints::default()).unwrap();
        prop_assert_eq!(op.iterations, 1);

        // Unknowns: nodes 2..=n, with node 1 fixed at vs.
        let m = n - 1;
        let mut g = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        let mut stamp = |a: usize, b: usize, r: f64| {
            let y = 1.0 / r;
            for (p, q) in [(a, b), (b, a)] {
                if p >= 2 {
                    g[p - 2][p - 2] += y;
                    match q {
                        0 => {}
                        1 => rhs[p - 2] += y * vs,
                        q => g[p - 2][q - 2] -= y,
                    }
                }
            }
        };
        for (k, r) in shunts.iter().enumerate() {
            stamp(k + 1, 0, *r);
        }
        for (a, b, r) in &links {
            stamp(*a, *b, *r);
        }
        let expect = gauss_solve(g, rhs);
        for (k, e) in expect.iter().enumerate() {
            let got = op.voltage(&(k + 2).to_string()).unwrap();
            prop_assert!((got - e).abs() <= 1e-12 * vs.abs().max(1e-300), "node {}: {} vs {}", k + 2, got, e);
        }
    }
}
