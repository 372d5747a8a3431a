//! Unknown layout and element stamping.
//!
//! Residual convention: node rows hold the sum of currents *leaving* the
//! node through its elements. Branch rows hold the constitutive equation
//! of a voltage-defined element; their unknown is the current flowing into
//! the element's positive terminal. State rows hold the discretized
//! memristor state equation.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Integrator;
use crate::circuit::{Circuit, ElementKind, NodeId, GROUND};
use crate::device::{memristance_unchecked, window, window_slope};
use crate::error::{ExprError, SimError};
use crate::netlist::Expression;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    /// KCL; unknown is a node voltage.
    Node,
    /// Element equation; unknown is a branch current.
    Branch,
    /// Memristor state equation; unknown is `x`.
    State,
}

/// Index assignment for every unknown of a circuit.
#[derive(Clone, Debug)]
pub struct Layout {
    node_count: usize,
    /// Per element: branch-current slot of voltage-defined elements.
    pub(crate) branch: Vec<Option<usize>>,
    /// Per element: auxiliary branch used to pin a capacitor's initial
    /// voltage during the operating point.
    pub(crate) ic_branch: Vec<Option<usize>>,
    /// Per element: state slot of native memristors.
    pub(crate) state: Vec<Option<usize>>,
    /// `.IC` node pins: (node, value, branch slot).
    pub(crate) node_pins: Vec<(NodeId, f64, usize)>,
    kinds: Vec<RowKind>,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Layout {
    pub fn new(circuit: &Circuit) -> Self {
        let node_count = circuit.node_count();
        let mut kinds = vec![RowKind::Node; node_count - 1];
        let mut names: Vec<String> = (1..node_count)
            .map(|n| format!("v({})", circuit.node_name(n)))
            .collect();
        let mut next = node_count - 1;
        let mut alloc = |kind: RowKind, name: String, kinds: &mut Vec<RowKind>, names: &mut Vec<String>| {
            kinds.push(kind);
            names.push(name);
            next += 1;
            next - 1
        };
        let n = circuit.elements.len();
        let (mut branch, mut ic_branch, mut state) = (vec![None; n], vec![None; n], vec![None; n]);
        for (i, e) in circuit.elements.iter().enumerate() {
            if e.is_voltage_defined() {
                branch[i] = Some(alloc(RowKind::Branch, format!("i({})", e.name), &mut kinds, &mut names));
            }
        }
        for (i, e) in circuit.elements.iter().enumerate() {
            match e.kind {
                ElementKind::Capacitor { ic: Some(_), .. } => {
                    ic_branch[i] = Some(alloc(RowKind::Branch, format!("#ic({})", e.name), &mut kinds, &mut names));
                }
                ElementKind::Memristor { .. } => {
                    state[i] = Some(alloc(RowKind::State, format!("x({})", e.name), &mut kinds, &mut names));
                }
                _ => {}
            }
        }
        let node_pins = circuit
            .initial_conditions
            .iter()
            .map(|&(node, v)| {
                let slot = alloc(
                    RowKind::Branch,
                    format!("#pin({})", circuit.node_name(node)),
                    &mut kinds,
                    &mut names,
                );
                (node, v, slot)
            })
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Layout {
            node_count,
            branch,
            ic_branch,
            state,
            node_pins,
            kinds,
            names,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, row: usize) -> RowKind {
        self.kinds[row]
    }

    /// Name of an unknown: `v(node)`, `i(element)`, `x(memristor)`.
    pub fn name(&self, row: usize) -> &str {
        &self.names[row]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(&name.to_lowercase()).copied()
    }

    pub fn node_slot(&self, node: NodeId) -> Option<usize> {
        (node != GROUND && node < self.node_count).then(|| node - 1)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// Per-element memory carried between time points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DynState {
    None,
    /// Capacitor voltage and current.
    Capacitor { v: f64, i: f64 },
    /// Op-amp output and its time derivative (zero while limited).
    Lag { v: f64, dvdt: f64 },
    /// Memristor state and its time derivative.
    Memristor { x: f64, dxdt: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub states: Vec<DynState>,
}

#[derive(Clone, Debug)]
pub enum Mode<'a> {
    Dc {
        /// Multiplier on independent sources (source stepping).
        source_scale: f64,
        /// Conductance from every node to ground (gmin stepping).
        gmin: f64,
        /// Op-amp outputs pinned to a voltage: (element index, volts).
        pinned_outputs: &'a [(usize, f64)],
        /// Memristor states held fixed.
        history: &'a History,
    },
    Transient {
        h: f64,
        integrator: Integrator,
        history: &'a History,
    },
}

/// Linearized system at one iterate: `J * delta = -F`.
#[derive(Clone, Debug)]
pub struct MnaSystem {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
    /// Largest magnitude of any term summed into each row, for roundoff-aware
    /// tolerances.
    pub scale: Vec<f64>,
}

impl MnaSystem {
    fn new(n: usize) -> Self {
        MnaSystem {
            jacobian: DMatrix::zeros(n, n),
            residual: DVector::zeros(n),
            scale: vec![0.0; n],
        }
    }

    #[inline]
    fn f(&mut self, row: Option<usize>, v: f64) {
        if let Some(r) = row {
            self.residual[r] += v;
            self.scale[r] = self.scale[r].max(v.abs());
        }
    }

    #[inline]
    fn j(&mut self, row: Option<usize>, col: Option<usize>, v: f64) {
        if let (Some(r), Some(c)) = (row, col) {
            self.jacobian[(r, c)] += v;
        }
    }

    fn conductance(&mut self, a: Option<usize>, b: Option<usize>, g: f64) {
        self.j(a, a, g);
        self.j(a, b, -g);
        self.j(b, a, -g);
        self.j(b, b, g);
    }

    /// Current `i` leaving `a` and entering `b`.
    fn current(&mut self, a: Option<usize>, b: Option<usize>, i: f64) {
        self.f(a, i);
        self.f(b, -i);
    }
}

/// Circuit plus its layout and slot-bound expressions.
#[derive(Clone, Debug)]
pub struct Prepared<'c> {
    pub circuit: &'c Circuit,
    pub layout: Arc<Layout>,
    exprs: Vec<Option<Expression>>,
}

impl<'c> Prepared<'c> {
    pub fn new(circuit: &'c Circuit) -> Result<Self, SimError> {
        let layout = Layout::new(circuit);
        let no_params = HashMap::new();
        let mut exprs = Vec::with_capacity(circuit.elements.len());
        for e in &circuit.elements {
            let bound = match &e.kind {
                ElementKind::Vcvs { expr, .. } | ElementKind::Vccs { expr, .. } => {
                    Some(expr.bind(&no_params, &mut |leaf| resolve(circuit, &layout, leaf))?)
                }
                _ => None,
            };
            exprs.push(bound);
        }
        for e in &circuit.elements {
            if let ElementKind::Memristor { params, .. } = &e.kind {
                params.validate()?;
            }
            if let ElementKind::OpAmp { model, .. } = &e.kind {
                model.validate()?;
            }
        }
        Ok(Prepared {
            circuit,
            layout: Arc::new(layout),
            exprs,
        })
    }

    fn v(&self, u: &[f64], node: NodeId) -> f64 {
        self.layout.node_slot(node).map_or(0.0, |s| u[s])
    }

    /// History consistent with an operating point `u`.
    pub fn history_from(&self, u: &[f64]) -> History {
        let states = self
            .circuit
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| match e.kind {
                ElementKind::Capacitor { a, b, .. } => DynState::Capacitor {
                    v: self.v(u, a) - self.v(u, b),
                    i: self.layout.ic_branch[i].map_or(0.0, |k| u[k]),
                },
                ElementKind::OpAmp { out, .. } => DynState::Lag {
                    v: self.v(u, out),
                    dvdt: 0.0,
                },
                ElementKind::Memristor { plus, minus, params } => {
                    let s = self.layout.state[i].expect("memristor state slot");
                    let x = u[s];
                    let r = memristance_unchecked(x, &params);
                    let current = (self.v(u, plus) - self.v(u, minus)) / r;
                    DynState::Memristor {
                        x,
                        dxdt: params.drift_coefficient() * current * window(x, params.p),
                    }
                }
                _ => DynState::None,
            })
            .collect();
        History { states }
    }

    /// Initial states: memristors at `r_init`, everything else at rest.
    pub fn initial_history(&self) -> Result<History, SimError> {
        let mut states = Vec::with_capacity(self.circuit.elements.len());
        for e in &self.circuit.elements {
            states.push(match e.kind {
                ElementKind::Memristor { params, .. } => DynState::Memristor {
                    x: params.initial_state()?.x(),
                    dxdt: 0.0,
                },
                _ => DynState::None,
            });
        }
        Ok(History { states })
    }

    /// Starting iterate: zeros except memristor states.
    pub fn flat_start(&self, history: &History) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.dim()];
        for (i, s) in history.states.iter().enumerate() {
            if let (DynState::Memristor { x, .. }, Some(slot)) = (s, self.layout.state[i]) {
                u[slot] = *x;
            }
        }
        u
    }

    /// Updates history after an accepted step ending at `u`.
    pub fn advance_history(
        &self,
        u: &mut [f64],
        previous: &History,
        h: f64,
        integrator: Integrator,
    ) -> History {
        let mut states = previous.states.clone();
        for (i, e) in self.circuit.elements.iter().enumerate() {
            states[i] = match (e.kind.clone(), previous.states[i]) {
                (ElementKind::Capacitor { a, b, capacitance, .. }, DynState::Capacitor { v, i: i_old }) => {
                    let v_new = self.v(u, a) - self.v(u, b);
                    let i_new = match integrator {
                        Integrator::BackwardEuler => capacitance / h * (v_new - v),
                        Integrator::Trapezoidal => 2.0 * capacitance / h * (v_new - v) - i_old,
                    };
                    DynState::Capacitor { v: v_new, i: i_new }
                }
                (ElementKind::OpAmp { out, in_pos, in_neg, model }, _) => {
                    let v_new = self.v(u, out);
                    let dvdt = match model.pole_omega() {
                        Some(w) if v_new.abs() < model.v_sat => {
                            w * (model.open_loop_gain * (self.v(u, in_pos) - self.v(u, in_neg)) - v_new)
                        }
                        _ => 0.0,
                    };
                    DynState::Lag { v: v_new, dvdt }
                }
                (ElementKind::Memristor { plus, minus, params }, _) => {
                    let s = self.layout.state[i].expect("memristor state slot");
                    let x = u[s].clamp(0.0, 1.0);
                    u[s] = x;
                    let r = memristance_unchecked(x, &params);
                    let current = (self.v(u, plus) - self.v(u, minus)) / r;
                    DynState::Memristor {
                        x,
                        dxdt: params.drift_coefficient() * current * window(x, params.p),
                    }
                }
                (_, s) => s,
            };
        }
        History { states }
    }

    /// Builds residual and Jacobian at iterate `u`.
    pub fn stamp(&self, u: &[f64], mode: &Mode) -> Result<MnaSystem, SimError> {
        let layout = &*self.layout;
        let mut sys = MnaSystem::new(layout.dim());
        let slot = |n: NodeId| layout.node_slot(n);
        let v = |n: NodeId| self.v(u, n);
        let history = match mode {
            Mode::Dc { history, .. } | Mode::Transient { history, .. } => *history,
        };

        for (idx, e) in self.circuit.elements.iter().enumerate() {
            match &e.kind {
                ElementKind::Resistor { a, b, resistance } => {
                    let g = 1.0 / resistance;
                    sys.current(slot(*a), slot(*b), g * (v(*a) - v(*b)));
                    sys.conductance(slot(*a), slot(*b), g);
                }
                ElementKind::VoltageSource { pos, neg, volts } => {
                    let k = layout.branch[idx];
                    let scale = match mode {
                        Mode::Dc { source_scale, .. } => *source_scale,
                        _ => 1.0,
                    };
                    self.stamp_branch_kcl(&mut sys, u, k, *pos, *neg);
                    sys.f(k, v(*pos) - v(*neg));
                    sys.f(k, -scale * volts);
                    sys.j(k, slot(*pos), 1.0);
                    sys.j(k, slot(*neg), -1.0);
                }
                ElementKind::Vcvs { pos, neg, .. } => {
                    let k = layout.branch[idx];
                    let d = self.exprs[idx].as_ref().expect("bound expression").eval(u)?;
                    self.stamp_branch_kcl(&mut sys, u, k, *pos, *neg);
                    sys.f(k, v(*pos) - v(*neg));
                    sys.f(k, -d.value);
                    sys.j(k, slot(*pos), 1.0);
                    sys.j(k, slot(*neg), -1.0);
                    for &(s, g) in &d.grad {
                        sys.j(k, Some(s), -g);
                    }
                }
                ElementKind::Vccs { pos, neg, .. } => {
                    let d = self.exprs[idx].as_ref().expect("bound expression").eval(u)?;
                    sys.current(slot(*pos), slot(*neg), d.value);
                    for &(s, g) in &d.grad {
                        sys.j(slot(*pos), Some(s), g);
                        sys.j(slot(*neg), Some(s), -g);
                    }
                }
                ElementKind::Capacitor { a, b, capacitance, ic } => {
                    let k = layout.ic_branch[idx];
                    match mode {
                        Mode::Dc { source_scale, .. } => {
                            if let (Some(ic), Some(_)) = (ic, k) {
                                self.stamp_branch_kcl(&mut sys, u, k, *a, *b);
                                sys.f(k, v(*a) - v(*b) - source_scale * ic);
                                sys.j(k, slot(*a), 1.0);
                                sys.j(k, slot(*b), -1.0);
                            }
                        }
                        Mode::Transient { h, integrator, .. } => {
                            let DynState::Capacitor { v: v_old, i: i_old } = history.states[idx] else {
                                unreachable!("capacitor history");
                            };
                            let (geq, hist) = match integrator {
                                Integrator::BackwardEuler => (capacitance / h, 0.0),
                                Integrator::Trapezoidal => (2.0 * capacitance / h, i_old),
                            };
                            let i = geq * ((v(*a) - v(*b)) - v_old) - hist;
                            sys.current(slot(*a), slot(*b), i);
                            sys.conductance(slot(*a), slot(*b), geq);
                            // The pin is released after the operating point.
                            if let Some(kk) = k {
                                sys.f(k, u[kk]);
                                sys.j(k, k, 1.0);
                            }
                        }
                    }
                }
                ElementKind::OpAmp {
                    out,
                    in_pos,
                    in_neg,
                    model,
                } => {
                    let k = layout.branch[idx];
                    sys.f(slot(*out), u[k.unwrap()]);
                    sys.j(slot(*out), k, 1.0);
                    sys.f(k, v(*out));
                    sys.j(k, slot(*out), 1.0);
                    let pinned = match mode {
                        Mode::Dc { pinned_outputs, .. } => {
                            pinned_outputs.iter().find(|p| p.0 == idx).map(|p| p.1)
                        }
                        _ => None,
                    };
                    if let Some(target) = pinned {
                        sys.f(k, -target);
                        continue;
                    }
                    let diff = v(*in_pos) - v(*in_neg);
                    let gain = model.open_loop_gain;
                    let (linear, slope) = match (mode, model.pole_omega()) {
                        (Mode::Transient { h, integrator, .. }, Some(w)) => {
                            let DynState::Lag { v: v_old, dvdt } = history.states[idx] else {
                                unreachable!("op-amp history");
                            };
                            let (c, carried) = match integrator {
                                Integrator::BackwardEuler => (*h, 0.0),
                                Integrator::Trapezoidal => (h / 2.0, h / 2.0 * dvdt),
                            };
                            let denom = 1.0 + c * w;
                            ((v_old + carried + c * w * gain * diff) / denom, c * w * gain / denom)
                        }
                        _ => (gain * diff, gain),
                    };
                    let (target, slope) = if linear >= model.v_sat {
                        (model.v_sat, 0.0)
                    } else if linear <= -model.v_sat {
                        (-model.v_sat, 0.0)
                    } else {
                        (linear, slope)
                    };
                    sys.f(k, -target);
                    sys.j(k, slot(*in_pos), -slope);
                    sys.j(k, slot(*in_neg), slope);
                }
                ElementKind::Memristor { plus, minus, params } => {
                    let s = layout.state[idx];
                    let x = u[s.unwrap()];
                    let r = memristance_unchecked(x, params);
                    if !(r > 0.0) {
                        return Err(SimError::NonFinite(f64::NAN));
                    }
                    let span = params.r_off - params.r_on;
                    let vd = v(*plus) - v(*minus);
                    let i = vd / r;
                    let di_dx = vd * span / (r * r);
                    let (p, m) = (slot(*plus), slot(*minus));
                    sys.current(p, m, i);
                    sys.conductance(p, m, 1.0 / r);
                    sys.j(p, s, di_dx);
                    sys.j(m, s, -di_dx);

                    let DynState::Memristor { x: x_old, dxdt } = history.states[idx] else {
                        unreachable!("memristor history");
                    };
                    sys.f(s, x);
                    sys.f(s, -x_old);
                    sys.j(s, s, 1.0);
                    if let Mode::Transient { h, integrator, .. } = mode {
                        let (c, carried) = match integrator {
                            Integrator::BackwardEuler => (*h, 0.0),
                            Integrator::Trapezoidal => (h / 2.0, h / 2.0 * dxdt),
                        };
                        let k = params.drift_coefficient();
                        let w = window(x, params.p);
                        sys.f(s, -(c * k * i * w) - carried);
                        sys.j(s, s, -c * k * (di_dx * w + i * window_slope(x, params.p)));
                        sys.j(s, p, -c * k * w / r);
                        sys.j(s, m, c * k * w / r);
                    }
                }
            }
        }

        for &(node, value, kk) in &layout.node_pins {
            let k = Some(kk);
            let n = slot(node);
            sys.f(n, u[kk]);
            sys.j(n, k, 1.0);
            match mode {
                Mode::Dc { source_scale, .. } => {
                    sys.f(k, v(node) - source_scale * value);
                    sys.j(k, n, 1.0);
                }
                Mode::Transient { .. } => {
                    sys.f(k, u[kk]);
                    sys.j(k, k, 1.0);
                }
            }
        }

        if let Mode::Dc { gmin, .. } = mode {
            if *gmin > 0.0 {
                for n in 1..layout.node_count() {
                    sys.f(slot(n), gmin * v(n));
                    sys.j(slot(n), slot(n), *gmin);
                }
            }
        }
        Ok(sys)
    }

    fn stamp_branch_kcl(&self, sys: &mut MnaSystem, u: &[f64], k: Option<usize>, pos: NodeId, neg: NodeId) {
        let Some(kk) = k else { return };
        let slot = |n: NodeId| self.layout.node_slot(n);
        sys.current(slot(pos), slot(neg), u[kk]);
        sys.j(slot(pos), k, 1.0);
        sys.j(slot(neg), k, -1.0);
    }
}

fn resolve(circuit: &Circuit, layout: &Layout, leaf: &Expression) -> Result<Option<usize>, ExprError> {
    match leaf {
        Expression::Voltage(n) => {
            let node = circuit
                .find_node(n)
                .ok_or_else(|| ExprError::UnresolvedNode(n.clone()))?;
            Ok(layout.node_slot(node))
        }
        Expression::Current(name) => circuit
            .elements
            .iter()
            .position(|e| e.name == *name)
            .and_then(|i| layout.branch[i])
            .map(Some)
            .ok_or_else(|| ExprError::UnresolvedBranch(name.clone())),
        _ => Ok(None),
    }
}
