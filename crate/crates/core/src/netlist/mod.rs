//! SPICE/HSPICE subset: R, C, V (DC), E/G behavioral sources, X instances,
//! `.SUBCKT`/`.ENDS`, `.TRAN`, `.IC`, `.END`.
//!
//! Everything is case-insensitive and stored lowercase. Two subcircuit
//! names are built in and reserved:
//!
//! - `opamp` (ports `out in+ in-`; params `gain`, `vsat`, `pole` in Hz, where
//!   `pole=0` removes the pole)
//! - `hpmem`, the native memristor (ports `plus minus`; params `ron roff
//!   rinit d uv p`)

mod expr;
mod flatten;
mod lex;
mod parser;
mod print;

pub use expr::{parse_expression, BinaryOp, Dual, Expression, Function};
pub use flatten::flatten;
pub use lex::{fold_continuations, parse_number, Folded, LogicalLine};
pub use parser::parse_netlist;

use indexmap::IndexMap;

pub const OPAMP_SUBCKT: &str = "opamp";
pub const NATIVE_MEMRISTOR_SUBCKT: &str = "hpmem";

/// Ordered `name=value` assignments.
pub type ParamList = Vec<(String, Expression)>;

#[derive(Clone, Debug, PartialEq)]
pub enum CardKind {
    Resistor {
        n1: String,
        n2: String,
        value: Expression,
    },
    Capacitor {
        n1: String,
        n2: String,
        value: Expression,
        ic: Option<Expression>,
    },
    VoltageSource {
        pos: String,
        neg: String,
        value: Expression,
    },
    /// `E` card with `VOL=`.
    Vcvs {
        pos: String,
        neg: String,
        expr: Expression,
    },
    /// `G` card with `CUR=`. Current flows from `pos` through the source to `neg`.
    Vccs {
        pos: String,
        neg: String,
        expr: Expression,
    },
    OpAmp {
        out: String,
        in_pos: String,
        in_neg: String,
        params: ParamList,
    },
    Memristor {
        plus: String,
        minus: String,
        params: ParamList,
    },
    Instance {
        nodes: Vec<String>,
        subckt: String,
        params: ParamList,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Card {
    pub name: String,
    pub kind: CardKind,
}

impl Card {
    pub fn nodes(&self) -> Vec<&str> {
        match &self.kind {
            CardKind::Resistor { n1, n2, .. } | CardKind::Capacitor { n1, n2, .. } => {
                vec![n1, n2]
            }
            CardKind::VoltageSource { pos, neg, .. }
            | CardKind::Vcvs { pos, neg, .. }
            | CardKind::Vccs { pos, neg, .. } => vec![pos, neg],
            CardKind::OpAmp {
                out, in_pos, in_neg, ..
            } => vec![out, in_pos, in_neg],
            CardKind::Memristor { plus, minus, .. } => vec![plus, minus],
            CardKind::Instance { nodes, .. } => nodes.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubcktDef {
    pub name: String,
    pub ports: Vec<String>,
    pub params: ParamList,
    pub cards: Vec<Card>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranDirective {
    pub step: f64,
    pub stop: f64,
    pub start: Option<f64>,
    pub max_step: Option<f64>,
    pub uic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Analysis {
    Tran(TranDirective),
    /// `.IC V(node)=value ...`
    InitialConditions(Vec<(String, f64)>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetlistDocument {
    pub title: Option<String>,
    pub cards: Vec<Card>,
    pub subckts: IndexMap<String, SubcktDef>,
    pub analyses: Vec<Analysis>,
}

impl NetlistDocument {
    pub fn tran(&self) -> Option<&TranDirective> {
        self.analyses.iter().find_map(|a| match a {
            Analysis::Tran(t) => Some(t),
            _ => None,
        })
    }
}
