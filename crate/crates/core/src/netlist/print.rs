//! Canonical text form of a parsed document. Re-parsing the output yields
//! an identical document.

use std::fmt;

use super::{
    Analysis, Card, CardKind, Expression, NetlistDocument, ParamList, SubcktDef,
    NATIVE_MEMRISTOR_SUBCKT, OPAMP_SUBCKT,
};

struct Value<'a>(&'a Expression);

impl fmt::Display for Value<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Expression::Number(v) => write!(f, "{v:e}"),
            other => write!(f, "'{other}'"),
        }
    }
}

fn write_params(f: &mut fmt::Formatter<'_>, params: &ParamList) -> fmt::Result {
    for (k, v) in params {
        write!(f, " {k}={}", Value(v))?;
    }
    Ok(())
}

impl fmt::Display for Card {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        match &self.kind {
            CardKind::Resistor { n1, n2, value } => write!(f, " {n1} {n2} {}", Value(value)),
            CardKind::Capacitor { n1, n2, value, ic } => {
                write!(f, " {n1} {n2} {}", Value(value))?;
                if let Some(ic) = ic {
                    write!(f, " ic={}", Value(ic))?;
                }
                Ok(())
            }
            CardKind::VoltageSource { pos, neg, value } => {
                write!(f, " {pos} {neg} dc {}", Value(value))
            }
            CardKind::Vcvs { pos, neg, expr } => write!(f, " {pos} {neg} vol='{expr}'"),
            CardKind::Vccs { pos, neg, expr } => write!(f, " {pos} {neg} cur='{expr}'"),
            CardKind::OpAmp {
                out,
                in_pos,
                in_neg,
                params,
            } => {
                write!(f, " {out} {in_pos} {in_neg} {OPAMP_SUBCKT}")?;
                write_params(f, params)
            }
            CardKind::Memristor {
                plus,
                minus,
                params,
            } => {
                write!(f, " {plus} {minus} {NATIVE_MEMRISTOR_SUBCKT}")?;
                write_params(f, params)
            }
            CardKind::Instance {
                nodes,
                subckt,
                params,
            } => {
                for n in nodes {
                    write!(f, " {n}")?;
                }
                write!(f, " {subckt}")?;
                write_params(f, params)
            }
        }
    }
}

impl fmt::Display for SubcktDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, ".subckt {}", self.name)?;
        for p in &self.ports {
            write!(f, " {p}")?;
        }
        if !self.params.is_empty() {
            write!(f, "\n+")?;
            write_params(f, &self.params)?;
        }
        writeln!(f)?;
        for card in &self.cards {
            writeln!(f, "{card}")?;
        }
        writeln!(f, ".ends {}", self.name)
    }
}

impl fmt::Display for NetlistDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(title) = &self.title {
            writeln!(f, "* {title}")?;
        }
        for def in self.subckts.values() {
            write!(f, "{def}")?;
        }
        for card in &self.cards {
            writeln!(f, "{card}")?;
        }
        for a in &self.analyses {
            match a {
                Analysis::Tran(t) => {
                    write!(f, ".tran {:e} {:e}", t.step, t.stop)?;
                    match (t.start, t.max_step) {
                        (Some(s), Some(m)) => write!(f, " {s:e} {m:e}")?,
                        (Some(s), None) => write!(f, " {s:e}")?,
                        (None, Some(m)) => write!(f, " 0 {m:e}")?,
                        (None, None) => {}
                    }
                    if t.uic {
                        write!(f, " uic")?;
                    }
                    writeln!(f)?;
                }
                Analysis::InitialConditions(ics) => {
                    write!(f, ".ic")?;
                    for (n, v) in ics {
                        write!(f, " v({n})={v:e}")?;
                    }
                    writeln!(f)?;
                }
            }
        }
        Ok(())
    }
}
