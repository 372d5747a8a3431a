//! Flat element graph ready for stamping.

use indexmap::IndexSet;

use crate::device::{MemristorParams, OpAmpModel};
use crate::netlist::{Expression, TranDirective};

pub type NodeId = usize;
pub const GROUND: NodeId = 0;

#[derive(Clone, Debug, PartialEq)]
pub enum ElementKind {
    Resistor {
        a: NodeId,
        b: NodeId,
        resistance: f64,
    },
    Capacitor {
        a: NodeId,
        b: NodeId,
        capacitance: f64,
        ic: Option<f64>,
    },
    VoltageSource {
        pos: NodeId,
        neg: NodeId,
        volts: f64,
    },
    /// `V(pos) - V(neg) = expr`. Signals in `expr` use flat names.
    Vcvs {
        pos: NodeId,
        neg: NodeId,
        expr: Expression,
    },
    /// Current `expr` flows from `pos` through the source into `neg`.
    Vccs {
        pos: NodeId,
        neg: NodeId,
        expr: Expression,
    },
    OpAmp {
        out: NodeId,
        in_pos: NodeId,
        in_neg: NodeId,
        model: OpAmpModel,
    },
    Memristor {
        plus: NodeId,
        minus: NodeId,
        params: MemristorParams,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub name: String,
    pub kind: ElementKind,
}

impl Element {
    /// Elements whose constitutive equation introduces a branch-current unknown.
    pub fn is_voltage_defined(&self) -> bool {
        matches!(
            self.kind,
            ElementKind::VoltageSource { .. } | ElementKind::Vcvs { .. } | ElementKind::OpAmp { .. }
        )
    }

    pub fn terminals(&self) -> Vec<NodeId> {
        match self.kind {
            ElementKind::Resistor { a, b, .. } | ElementKind::Capacitor { a, b, .. } => vec![a, b],
            ElementKind::VoltageSource { pos, neg, .. }
            | ElementKind::Vcvs { pos, neg, .. }
            | ElementKind::Vccs { pos, neg, .. } => vec![pos, neg],
            ElementKind::OpAmp { out, .. } => vec![out, GROUND],
            ElementKind::Memristor { plus, minus, .. } => vec![plus, minus],
        }
    }
}

/// Where a memristor's state lives.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSource {
    /// Native device: index into [`Circuit::elements`].
    Native(usize),
    /// Subcircuit realization: state is the voltage of this node.
    Node(NodeId),
}

/// A memristor that can be probed with `x(name)`, `r(name)`, and `i(name)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemristorProbe {
    pub name: String,
    pub state: StateSource,
    pub plus: NodeId,
    pub minus: NodeId,
    /// Branch element whose current equals the device current (subcircuit
    /// realization only).
    pub current_branch: Option<String>,
    pub r_on: f64,
    pub r_off: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub title: Option<String>,
    nodes: IndexSet<String>,
    pub elements: Vec<Element>,
    pub memristors: Vec<MemristorProbe>,
    /// From `.IC`: node voltages enforced during the initial operating point.
    pub initial_conditions: Vec<(NodeId, f64)>,
    pub tran: Option<TranDirective>,
    pub warnings: Vec<String>,
}

impl Default for Circuit {
    fn default() -> Self {
        Self::new()
    }
}

impl Circuit {
    pub fn new() -> Self {
        let mut nodes = IndexSet::new();
        nodes.insert("0".to_string());
        Circuit {
            title: None,
            nodes,
            elements: Vec::new(),
            memristors: Vec::new(),
            initial_conditions: Vec::new(),
            tran: None,
            warnings: Vec::new(),
        }
    }

    /// Interns a node name. `0` and `gnd` are ground.
    pub fn node(&mut self, name: &str) -> NodeId {
        let name = name.to_lowercase();
        if name == "0" || name == "gnd" {
            return GROUND;
        }
        self.nodes.insert_full(name).0
    }

    pub fn find_node(&self, name: &str) -> Option<NodeId> {
        let name = name.to_lowercase();
        if name == "gnd" {
            return Some(GROUND);
        }
        self.nodes.get_index_of(&name)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.nodes[id]
    }

    /// Number of nodes including ground.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ElementKind) -> usize {
        self.elements.push(Element {
            name: name.into().to_lowercase(),
            kind,
        });
        self.elements.len() - 1
    }

    pub fn element(&self, name: &str) -> Option<&Element> {
        let name = name.to_lowercase();
        self.elements.iter().find(|e| e.name == name)
    }

    pub fn memristor(&self, name: &str) -> Option<&MemristorProbe> {
        let name = name.to_lowercase();
        self.memristors.iter().find(|m| m.name == name)
    }

    /// True if every element has an affine constitutive law.
    pub fn is_linear(&self) -> bool {
        self.elements.iter().all(|e| {
            matches!(
                e.kind,
                ElementKind::Resistor { .. }
                    | ElementKind::Capacitor { .. }
                    | ElementKind::VoltageSource { .. }
            )
        })
    }

    /// Names of non-ground nodes with no element path to ground.
    pub fn floating_nodes(&self) -> Vec<String> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for e in &self.elements {
            let t = e.terminals();
            for w in t.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let root = find(&mut parent, GROUND);
        (1..n)
            .filter(|&i| find(&mut parent, i) != root)
            .map(|i| self.nodes[i].clone())
            .collect()
    }

    /// Recomputes connectivity warnings.
    pub fn check_connectivity(&mut self) {
        for name in self.floating_nodes() {
            self.warnings
                .push(format!("node '{name}' has no path to ground"));
        }
    }
}
