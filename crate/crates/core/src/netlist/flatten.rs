//! Subcircuit expansion.
//!
//! Interior nodes and elements of instance `xa` are renamed `xa.<name>`;
//! nested instances chain the prefix (`xa.xb.r1`). Parameter-only
//! expressions are folded to numbers here, so the engine only ever sees
//! signal references.

use std::collections::HashMap;

use super::{Analysis, Card, CardKind, Expression, NetlistDocument, ParamList, SubcktDef};
use crate::circuit::{Circuit, ElementKind, MemristorProbe, StateSource};
use crate::device::{MemristorParams, OpAmpModel};
use crate::error::{ExprError, FlattenError};

/// Expands all instances of `doc` into a flat [`Circuit`]. `overrides`
/// supplies top-level parameter values.
pub fn flatten(
    doc: &NetlistDocument,
    overrides: &HashMap<String, f64>,
) -> Result<Circuit, FlattenError> {
    let mut circuit = Circuit::new();
    circuit.title = doc.title.clone();
    let top = Scope {
        prefix: None,
        ports: HashMap::new(),
        params: overrides
            .iter()
            .map(|(k, v)| (k.to_lowercase(), *v))
            .collect(),
    };
    let mut stack = Vec::new();
    expand(doc, &doc.cards, &top, &mut stack, &mut circuit)?;

    let mut seen = std::collections::HashSet::new();
    for e in &circuit.elements {
        if !seen.insert(e.name.as_str()) {
            return Err(FlattenError::DuplicateElement(e.name.clone()));
        }
    }

    for a in &doc.analyses {
        match a {
            Analysis::Tran(t) => circuit.tran = Some(t.clone()),
            Analysis::InitialConditions(ics) => {
                for (node, v) in ics {
                    let id = circuit.find_node(node).ok_or_else(|| FlattenError::InvalidValue {
                        element: ".ic".into(),
                        message: format!("unknown node '{node}'"),
                    })?;
                    circuit.initial_conditions.push((id, *v));
                }
            }
        }
    }
    circuit.check_connectivity();
    Ok(circuit)
}

struct Scope {
    prefix: Option<String>,
    /// Port name -> flat node name.
    ports: HashMap<String, String>,
    params: HashMap<String, f64>,
}

impl Scope {
    fn node(&self, name: &str) -> String {
        if name == "0" || name == "gnd" {
            return "0".into();
        }
        if let Some(outer) = self.ports.get(name) {
            return outer.clone();
        }
        self.qualify(name)
    }

    fn qualify(&self, name: &str) -> String {
        match &self.prefix {
            Some(p) => format!("{p}.{name}"),
            None => name.to_string(),
        }
    }

    fn expr(&self, element: &str, e: &Expression) -> Result<Expression, FlattenError> {
        e.try_map_leaves(&mut |leaf| match leaf {
            Expression::Param(p) => self
                .params
                .get(p)
                .map(|v| Expression::Number(*v))
                .ok_or_else(|| ExprError::UnresolvedParam(p.clone())),
            Expression::Voltage(n) => Ok(Expression::Voltage(self.node(n))),
            Expression::Current(n) => Ok(Expression::Current(self.qualify(n))),
            other => Ok(other.clone()),
        })
        .map_err(|source| FlattenError::Expr {
            element: element.to_string(),
            source,
        })
    }

    fn constant(&self, element: &str, e: &Expression) -> Result<f64, FlattenError> {
        e.eval_constant(&self.params)
            .map_err(|source| FlattenError::Expr {
                element: element.to_string(),
                source,
            })
    }

    fn positive(&self, element: &str, e: &Expression, what: &str) -> Result<f64, FlattenError> {
        let v = self.constant(element, e)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(FlattenError::InvalidValue {
                element: element.to_string(),
                message: format!("{what} must be positive and finite, got {v}"),
            });
        }
        Ok(v)
    }
}

fn expand(
    doc: &NetlistDocument,
    cards: &[Card],
    scope: &Scope,
    stack: &mut Vec<String>,
    circuit: &mut Circuit,
) -> Result<(), FlattenError> {
    for card in cards {
        let name = scope.qualify(&card.name);
        let mut node = |n: &str| circuit.node(&scope.node(n));
        match &card.kind {
            CardKind::Resistor { n1, n2, value } => {
                let (a, b) = (node(n1), node(n2));
                let resistance = scope.positive(&name, value, "resistance")?;
                circuit.add(name, ElementKind::Resistor { a, b, resistance });
            }
            CardKind::Capacitor { n1, n2, value, ic } => {
                let (a, b) = (node(n1), node(n2));
                let capacitance = scope.positive(&name, value, "capacitance")?;
                let ic = ic.as_ref().map(|e| scope.constant(&name, e)).transpose()?;
                circuit.add(name, ElementKind::Capacitor { a, b, capacitance, ic });
            }
            CardKind::VoltageSource { pos, neg, value } => {
                let (pos, neg) = (node(pos), node(neg));
                let volts = scope.constant(&name, value)?;
                circuit.add(name, ElementKind::VoltageSource { pos, neg, volts });
            }
            CardKind::Vcvs { pos, neg, expr } => {
                let (pos, neg) = (node(pos), node(neg));
                let expr = scope.expr(&name, expr)?;
                circuit.add(name, ElementKind::Vcvs { pos, neg, expr });
            }
            CardKind::Vccs { pos, neg, expr } => {
                let (pos, neg) = (node(pos), node(neg));
                let expr = scope.expr(&name, expr)?;
                circuit.add(name, ElementKind::Vccs { pos, neg, expr });
            }
            CardKind::OpAmp {
                out,
                in_pos,
                in_neg,
                params,
            } => {
                let (out, in_pos, in_neg) = (node(out), node(in_pos), node(in_neg));
                let model = opamp_model(scope, &name, params)?;
                circuit.add(name, ElementKind::OpAmp { out, in_pos, in_neg, model });
            }
            CardKind::Memristor {
                plus,
                minus,
                params,
            } => {
                let (plus, minus) = (node(plus), node(minus));
                let params = memristor_params(scope, &name, params)?;
                let idx = circuit.add(name.clone(), ElementKind::Memristor { plus, minus, params });
                circuit.memristors.push(MemristorProbe {
                    name,
                    state: StateSource::Native(idx),
                    plus,
                    minus,
                    current_branch: None,
                    r_on: params.r_on,
                    r_off: params.r_off,
                });
            }
            CardKind::Instance {
                nodes,
                subckt,
                params,
            } => {
                let def = doc
                    .subckts
                    .get(subckt)
                    .ok_or_else(|| FlattenError::UnknownSubckt {
                        instance: name.clone(),
                        name: subckt.clone(),
                    })?;
                if def.ports.len() != nodes.len() {
                    return Err(FlattenError::PortArity {
                        instance: name,
                        subckt: subckt.clone(),
                        expected: def.ports.len(),
                        given: nodes.len(),
                    });
                }
                if stack.contains(subckt) {
                    return Err(FlattenError::Recursive(subckt.clone()));
                }
                let ports: HashMap<String, String> = def
                    .ports
                    .iter()
                    .zip(nodes)
                    .map(|(p, n)| (p.clone(), scope.node(n)))
                    .collect();
                let child = Scope {
                    params: instance_params(scope, &name, def, params)?,
                    prefix: Some(name.clone()),
                    ports,
                };
                stack.push(subckt.clone());
                expand(doc, &def.cards, &child, stack, circuit)?;
                stack.pop();
                if let Some(probe) = memristor_probe(def, &child, circuit) {
                    circuit.memristors.push(probe);
                }
            }
        }
    }
    Ok(())
}

/// Defaults evaluated in order (each may use earlier ones); overrides are
/// evaluated in the parent scope.
fn instance_params(
    parent: &Scope,
    instance: &str,
    def: &SubcktDef,
    overrides: &ParamList,
) -> Result<HashMap<String, f64>, FlattenError> {
    for (k, _) in overrides {
        if !def.params.iter().any(|(d, _)| d == k) {
            return Err(FlattenError::UnknownParam {
                instance: instance.to_string(),
                subckt: def.name.clone(),
                param: k.clone(),
            });
        }
    }
    let mut values = HashMap::new();
    for (k, default) in &def.params {
        let v = match overrides.iter().find(|(o, _)| o == k) {
            Some((_, e)) => parent.constant(instance, e)?,
            None => default
                .eval_constant(&values)
                .map_err(|source| FlattenError::Expr {
                    element: instance.to_string(),
                    source,
                })?,
        };
        values.insert(k.clone(), v);
    }
    Ok(values)
}

/// A subcircuit counts as a memristor when it declares `ron` and `roff`
/// and has an interior node `x` holding the state.
fn memristor_probe(def: &SubcktDef, scope: &Scope, circuit: &Circuit) -> Option<MemristorProbe> {
    let r_on = *scope.params.get("ron")?;
    let r_off = *scope.params.get("roff")?;
    if def.ports.len() != 2 || def.ports.iter().any(|p| p == "x") {
        return None;
    }
    let state = circuit.find_node(&scope.qualify("x"))?;
    let plus = circuit.find_node(&scope.node(&def.ports[0]))?;
    let minus = circuit.find_node(&scope.node(&def.ports[1]))?;
    let current_branch = def
        .cards
        .iter()
        .find(|c| {
            matches!(c.kind, CardKind::Vcvs { .. } | CardKind::VoltageSource { .. })
                && c.nodes().first() == Some(&def.ports[0].as_str())
        })
        .map(|c| scope.qualify(&c.name));
    Some(MemristorProbe {
        name: scope.prefix.clone()?,
        state: StateSource::Node(state),
        plus,
        minus,
        current_branch,
        r_on,
        r_off,
    })
}

fn opamp_model(scope: &Scope, name: &str, params: &ParamList) -> Result<OpAmpModel, FlattenError> {
    let mut model = OpAmpModel::default();
    for (k, e) in params {
        let v = scope.constant(name, e)?;
        match k.as_str() {
            "gain" => model.open_loop_gain = v,
            "vsat" => model.v_sat = v,
            "pole" => model.pole_freq = (v != 0.0).then_some(v),
            _ => {
                return Err(FlattenError::InvalidValue {
                    element: name.to_string(),
                    message: format!("unknown op-amp parameter '{k}'"),
                })
            }
        }
    }
    model.validate().map_err(|source| FlattenError::Device {
        element: name.to_string(),
        source,
    })?;
    Ok(model)
}

fn memristor_params(
    scope: &Scope,
    name: &str,
    params: &ParamList,
) -> Result<MemristorParams, FlattenError> {
    let mut p = MemristorParams::default();
    for (k, e) in params {
        let v = scope.constant(name, e)?;
        match k.as_str() {
            "ron" => p.r_on = v,
            "roff" => p.r_off = v,
            "rinit" => p.r_init = v,
            "d" => p.d = v,
            "uv" => p.mu_v = v,
            "p" => {
                if v.fract() != 0.0 || !(1.0..=1e6).contains(&v) {
                    return Err(FlattenError::InvalidValue {
                        element: name.to_string(),
                        message: format!("p must be a positive integer, got {v}"),
                    });
                }
                p.p = v as u32;
            }
            _ => {
                return Err(FlattenError::InvalidValue {
                    element: name.to_string(),
                    message: format!("unknown memristor parameter '{k}'"),
                })
            }
        }
    }
    p.validate().map_err(|source| FlattenError::Device {
        element: name.to_string(),
        source,
    })?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse_netlist;

    fn flat(text: &str) -> Result<Circuit, FlattenError> {
        flatten(&parse_netlist(text).unwrap(), &HashMap::new())
    }

    const SUB: &str = ".subckt pair a b r=1k\nr1 a mid 'r'\nr2 mid b 'r*2'\n.ends\n";

    #[test]
    fn no_instances_is_identity() {
        let c = flat("v1 1 0 5\nr1 1 0 1k").unwrap();
        assert_eq!(c.elements.len(), 2);
        assert_eq!(c.element("r1").unwrap().kind, ElementKind::Resistor { a: 1, b: 0, resistance: 1e3 });
    }

    #[test]
    fn instances_are_disjoint() {
        let c = flat(&format!("{SUB}v1 1 0 1\nx1 1 0 pair\nx2 1 0 pair r=2k")).unwrap();
        let names: Vec<_> = c.elements.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["v1", "x1.r1", "x1.r2", "x2.r1", "x2.r2"]);
        assert!(c.find_node("x1.mid").is_some() && c.find_node("x2.mid").is_some());
        assert_ne!(c.find_node("x1.mid"), c.find_node("x2.mid"));
        match c.element("x2.r2").unwrap().kind {
            ElementKind::Resistor { resistance, .. } => assert_eq!(resistance, 4e3),
            _ => unreachable!(),
        }
    }

    #[test]
    fn arity_and_unknowns() {
        assert!(matches!(
            flat(&format!("{SUB}x1 1 pair")),
            Err(FlattenError::PortArity { expected: 2, given: 1, .. })
        ));
        assert!(matches!(flat("x1 1 0 nope"), Err(FlattenError::UnknownSubckt { .. })));
        assert!(matches!(
            flat(&format!("{SUB}x1 1 0 pair q=3")),
            Err(FlattenError::UnknownParam { .. })
        ));
        assert!(matches!(flat("r1 1 0 'zz'"), Err(FlattenError::Expr { .. })));
        assert!(matches!(flat("r1 1 0 0"), Err(FlattenError::InvalidValue { .. })));
    }

    #[test]
    fn recursion_is_rejected() {
        let text = ".subckt a p q\nx1 p q b\n.ends\n.subckt b p q\nx1 p q a\n.ends\nx0 1 0 a";
        assert!(matches!(flat(text), Err(FlattenError::Recursive(_))));
    }

    #[test]
    fn top_level_overrides() {
        let doc = parse_netlist("r1 1 0 'rv*2'\nv1 1 0 1").unwrap();
        let c = flatten(&doc, &[("RV".to_string(), 5.0)].into_iter().collect()).unwrap();
        assert!(matches!(c.elements[0].kind, ElementKind::Resistor { resistance, .. } if resistance == 10.0));
    }

    #[test]
    fn builtin_params() {
        let c = flat("xo o p n opamp gain=1k vsat=3 pole=0\nxm p 0 hpmem rinit=2k\nr1 o 0 1\nr2 n 0 1").unwrap();
        match c.elements[0].kind {
            ElementKind::OpAmp { model, .. } => {
                assert_eq!(model.open_loop_gain, 1e3);
                assert_eq!(model.v_sat, 3.0);
                assert_eq!(model.pole_freq, None);
            }
            _ => unreachable!(),
        }
        assert_eq!(c.memristors.len(), 1);
        assert!(flat("xm p 0 hpmem rinit=20k").is_err());
        assert!(flat("xm p 0 hpmem p=2.5").is_err());
    }

    #[test]
    fn ic_nodes_must_exist() {
        assert!(flat("r1 1 0 1k\n.ic v(7)=1").is_err());
        let c = flat("r1 1 0 1k\n.ic v(1)=1").unwrap();
        assert_eq!(c.initial_conditions, vec![(1, 1.0)]);
    }

    #[test]
    fn floating_nodes_warn() {
        let c = flat("v1 1 0 1\nr1 1 0 1k\nr2 5 6 1k").unwrap();
        assert_eq!(c.warnings.len(), 2);
    }
}
