//! Modified nodal analysis: operating point and transient.

mod dc;
pub mod mna;
pub mod newton;
mod trace;
mod transient;

use std::sync::Arc;

pub use dc::dc_operating_point;
pub use mna::Layout;
pub use newton::{newton_solve, NewtonOptions, NewtonOutcome};
pub use trace::{normalize_selector, TraceSet};
pub use transient::transient;

use crate::circuit::{Circuit, ElementKind, StateSource};
use crate::device::memristance_unchecked;
use crate::error::SimError;
use mna::Prepared;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    BackwardEuler,
    #[default]
    Trapezoidal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransientConfig {
    pub t_stop: f64,
    /// Nominal step; the fixed step when `adaptive` is off.
    pub dt: f64,
    /// Step halving gives up below this.
    pub dt_min: f64,
    /// Upper bound for adaptive steps.
    pub dt_max: f64,
    pub integrator: Integrator,
    pub reltol: f64,
    pub abstol_current: f64,
    pub abstol_voltage: f64,
    pub max_newton_iters: usize,
    pub adaptive: bool,
}

impl TransientConfig {
    pub fn new(t_stop: f64, dt: f64) -> Self {
        TransientConfig {
            t_stop,
            dt,
            dt_min: dt / 1024.0,
            dt_max: (t_stop / 50.0).max(dt),
            integrator: Integrator::Trapezoidal,
            reltol: 1e-4,
            abstol_current: 1e-9,
            abstol_voltage: 1e-6,
            max_newton_iters: 50,
            adaptive: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.t_stop) {
            return bad("t_stop must be positive");
        }
        if !pos(self.dt) || self.dt > self.t_stop {
            return bad("dt must be positive and no larger than t_stop");
        }
        if !pos(self.dt_min) || self.dt_min > self.dt {
            return bad("dt_min must be positive and no larger than dt");
        }
        if !pos(self.dt_max) || self.dt_max < self.dt {
            return bad("dt_max must be at least dt");
        }
        if !pos(self.reltol) || !pos(self.abstol_current) || !pos(self.abstol_voltage) {
            return bad("tolerances must be positive");
        }
        if self.max_newton_iters == 0 {
            return bad("max_newton_iters must be at least 1");
        }
        Ok(())
    }

    pub fn newton_options(&self, linear: bool) -> NewtonOptions {
        NewtonOptions {
            reltol: self.reltol,
            abstol_current: self.abstol_current,
            abstol_voltage: self.abstol_voltage,
            max_iterations: self.max_newton_iters,
            linear,
            ..NewtonOptions::default()
        }
    }
}

/// Initial guesses for the operating point: op-amp outputs by element name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiasHints {
    pub opamp_outputs: Vec<(String, f64)>,
}

impl BiasHints {
    pub fn opamp(name: &str, volts: f64) -> Self {
        BiasHints {
            opamp_outputs: vec![(name.to_lowercase(), volts)],
        }
    }
}

/// All unknowns at one time point.
#[derive(Clone, Debug)]
pub struct Solution {
    pub time: f64,
    pub unknowns: Vec<f64>,
    pub iterations: usize,
    pub max_kcl_residual: f64,
    layout: Arc<Layout>,
}

impl Solution {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn voltage(&self, node: &str) -> Option<f64> {
        let node = node.to_lowercase();
        if node == "0" || node == "gnd" {
            return Some(0.0);
        }
        self.get(&format!("v({node})"))
    }

    /// Current into the positive terminal of a voltage-defined element.
    pub fn current(&self, element: &str) -> Option<f64> {
        self.get(&format!("i({})", element.to_lowercase()))
    }

    /// State of a native memristor.
    pub fn state(&self, element: &str) -> Option<f64> {
        self.get(&format!("x({})", element.to_lowercase()))
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.layout.lookup(name).map(|i| self.unknowns[i])
    }
}

type Extractor = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Recorded signal names and how to compute each from the unknowns.
fn recorders(prep: &Prepared) -> Vec<(String, Extractor)> {
    let layout = prep.layout.clone();
    let circuit = prep.circuit;
    let mut out: Vec<(String, Extractor)> = Vec::new();
    for r in 0..layout.dim() {
        let name = layout.name(r);
        if name.starts_with('#') || name.starts_with("x(") {
            continue;
        }
        out.push((name.to_string(), Box::new(move |u: &[f64]| u[r])));
    }
    let node = move |l: &Layout, n| l.node_slot(n);
    for m in &circuit.memristors {
        let (plus, minus) = (node(&layout, m.plus), node(&layout, m.minus));
        let vd = move |u: &[f64]| plus.map_or(0.0, |s| u[s]) - minus.map_or(0.0, |s| u[s]);
        match m.state {
            StateSource::Native(idx) => {
                let ElementKind::Memristor { params, .. } = circuit.elements[idx].kind else {
                    continue;
                };
                let s = layout.state[idx].expect("memristor state slot");
                out.push((format!("x({})", m.name), Box::new(move |u: &[f64]| u[s])));
                out.push((
                    format!("r({})", m.name),
                    Box::new(move |u: &[f64]| memristance_unchecked(u[s], &params)),
                ));
                out.push((
                    format!("i({})", m.name),
                    Box::new(move |u: &[f64]| vd(u) / memristance_unchecked(u[s], &params)),
                ));
            }
            StateSource::Node(n) => {
                let s = node(&layout, n);
                let x = move |u: &[f64]| s.map_or(0.0, |s| u[s]);
                let (r_on, r_off) = (m.r_on, m.r_off);
                out.push((format!("x({})", m.name), Box::new(x)));
                out.push((
                    format!("r({})", m.name),
                    Box::new(move |u: &[f64]| r_off - (r_off - r_on) * x(u)),
                ));
                if let Some(b) = m.current_branch.as_ref().and_then(|b| layout.lookup(&format!("i({b})"))) {
                    out.push((format!("i({})", m.name), Box::new(move |u: &[f64]| u[b])));
                }
            }
        }
        out.push((format!("vd({})", m.name), Box::new(vd)));
    }
    out
}

/// Solver bound to one circuit.
pub struct Simulator<'c> {
    prep: Prepared<'c>,
}

impl<'c> Simulator<'c> {
    pub fn new(circuit: &'c Circuit) -> Result<Self, SimError> {
        Ok(Simulator {
            prep: Prepared::new(circuit)?,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.prep.layout
    }

    pub fn circuit(&self) -> &Circuit {
        self.prep.circuit
    }
}
