use std::collections::HashSet;

use super::expr::parse_expression_at;
use super::lex::{fold_continuations, parse_number, tokenize, LogicalLine, Token, TokenKind};
use super::{
    Analysis, Card, CardKind, Expression, NetlistDocument, ParamList, SubcktDef, TranDirective,
    NATIVE_MEMRISTOR_SUBCKT, OPAMP_SUBCKT,
};
use crate::error::ParseError;

/// Parses netlist text into a document. An empty input yields an empty
/// document.
pub fn parse_netlist(text: &str) -> Result<NetlistDocument, ParseError> {
    let folded = fold_continuations(text)?;
    let mut doc = NetlistDocument {
        title: folded.title,
        ..Default::default()
    };
    let mut top_names = HashSet::new();
    // (definition, names seen in it, line of its .subckt card)
    let mut open: Option<(SubcktDef, HashSet<String>, usize)> = None;

    for line in &folded.lines {
        let tokens = tokenize(line)?;
        let mut cur = Cursor {
            tokens: &tokens,
            pos: 0,
            line,
        };
        let head = match cur.next_word() {
            Some(w) => w,
            None => return Err(cur.error_here("expected a card name")),
        };

        if let Some(directive) = head.strip_prefix('.') {
            match directive {
                "subckt" => {
                    if open.is_some() {
                        return Err(cur.error_at(0, "nested .subckt is not supported"));
                    }
                    let name = cur.word("subcircuit name")?;
                    if name == OPAMP_SUBCKT || name == NATIVE_MEMRISTOR_SUBCKT {
                        return Err(cur.error_at(1, format!("'{name}' is a reserved built-in name")));
                    }
                    if doc.subckts.contains_key(&name) {
                        return Err(cur.error_at(1, format!("subcircuit '{name}' defined twice")));
                    }
                    let ports = cur.words_before_params();
                    let params = cur.params()?;
                    open = Some((
                        SubcktDef {
                            name,
                            ports,
                            params,
                            cards: Vec::new(),
                        },
                        HashSet::new(),
                        line.line,
                    ));
                }
                "ends" => {
                    let (def, _, _) = open
                        .take()
                        .ok_or_else(|| cur.error_at(0, ".ends without .subckt"))?;
                    if let Some(name) = cur.next_word() {
                        if name != def.name {
                            return Err(cur.error_at(
                                1,
                                format!(".ends {name} closes subcircuit '{}'", def.name),
                            ));
                        }
                    }
                    cur.finish()?;
                    doc.subckts.insert(def.name.clone(), def);
                }
                "tran" => {
                    if open.is_some() {
                        return Err(cur.error_at(0, ".tran inside a subcircuit"));
                    }
                    doc.analyses.push(Analysis::Tran(parse_tran(&mut cur)?));
                }
                "ic" => {
                    if open.is_some() {
                        return Err(cur.error_at(0, ".ic inside a subcircuit"));
                    }
                    doc.analyses.push(Analysis::InitialConditions(parse_ic(&mut cur)?));
                }
                "end" => break,
                other => {
                    return Err(cur.error_at(0, format!("unsupported directive '.{other}'")));
                }
            }
            continue;
        }

        let card = parse_card(head, &mut cur)?;
        let (cards, names) = match open.as_mut() {
            Some((def, names, _)) => (&mut def.cards, names),
            None => (&mut doc.cards, &mut top_names),
        };
        if !names.insert(card.name.clone()) {
            return Err(cur.error_at(0, format!("duplicate element name '{}'", card.name)));
        }
        cards.push(card);
    }

    if let Some((def, _, line)) = open {
        return Err(ParseError::at(
            line,
            1,
            format!("missing .ends for subcircuit '{}'", def.name),
        ));
    }
    Ok(doc)
}

fn parse_card(name: String, cur: &mut Cursor) -> Result<Card, ParseError> {
    let letter = name.chars().next().unwrap_or(' ');
    let kind = match letter {
        'r' => {
            let n1 = cur.word("node")?;
            let n2 = cur.word("node")?;
            let value = cur.value("resistance")?;
            CardKind::Resistor { n1, n2, value }
        }
        'c' => {
            let n1 = cur.word("node")?;
            let n2 = cur.word("node")?;
            let value = cur.value("capacitance")?;
            let mut ic = None;
            for (key, v) in cur.params()? {
                match key.as_str() {
                    "ic" => ic = Some(v),
                    _ => return Err(cur.error_at(0, format!("unknown capacitor parameter '{key}'"))),
                }
            }
            CardKind::Capacitor { n1, n2, value, ic }
        }
        'v' => {
            let pos = cur.word("node")?;
            let neg = cur.word("node")?;
            if cur.peek_word() == Some("dc") {
                cur.pos += 1;
            }
            let value = cur.value("voltage")?;
            CardKind::VoltageSource { pos, neg, value }
        }
        'e' | 'g' => {
            let pos = cur.word("node")?;
            let neg = cur.word("node")?;
            let key = if letter == 'e' { "vol" } else { "cur" };
            let expr = if cur.peek_is_param() {
                let mut params = cur.params()?;
                match params.pop() {
                    Some((k, e)) if k == key && params.is_empty() => e,
                    _ => return Err(cur.error_at(0, format!("expected a single {key}= expression"))),
                }
            } else {
                // linear form: nc+ nc- gain
                let cp = cur.word("control node")?;
                let cn = cur.word("control node")?;
                let gain = cur.value("gain")?;
                Expression::Binary(
                    super::BinaryOp::Mul,
                    Box::new(gain),
                    Box::new(Expression::Binary(
                        super::BinaryOp::Sub,
                        Box::new(Expression::Voltage(cp)),
                        Box::new(Expression::Voltage(cn)),
                    )),
                )
            };
            if letter == 'e' {
                CardKind::Vcvs { pos, neg, expr }
            } else {
                CardKind::Vccs { pos, neg, expr }
            }
        }
        'x' => {
            let mut words = cur.words_before_params();
            let params = cur.params()?;
            let subckt = words
                .pop()
                .ok_or_else(|| cur.error_at(0, "instance needs nodes and a subcircuit name"))?;
            let arity = |n: usize| -> Result<(), ParseError> {
                if words.len() != n {
                    return Err(cur.error_at(
                        0,
                        format!("'{subckt}' takes {n} nodes, got {}", words.len()),
                    ));
                }
                Ok(())
            };
            match subckt.as_str() {
                OPAMP_SUBCKT => {
                    arity(3)?;
                    let mut it = words.into_iter();
                    CardKind::OpAmp {
                        out: it.next().unwrap(),
                        in_pos: it.next().unwrap(),
                        in_neg: it.next().unwrap(),
                        params,
                    }
                }
                NATIVE_MEMRISTOR_SUBCKT => {
                    arity(2)?;
                    let mut it = words.into_iter();
                    CardKind::Memristor {
                        plus: it.next().unwrap(),
                        minus: it.next().unwrap(),
                        params,
                    }
                }
                _ => CardKind::Instance {
                    nodes: words,
                    subckt,
                    params,
                },
            }
        }
        _ => {
            return Err(cur.error_at(0, format!("unknown card type '{letter}' in '{name}'")));
        }
    };
    cur.finish()?;
    Ok(Card { name, kind })
}

fn parse_tran(cur: &mut Cursor) -> Result<TranDirective, ParseError> {
    let step = cur.number("tstep")?;
    let stop = cur.number("tstop")?;
    let mut extra = Vec::new();
    let mut uic = false;
    while let Some(w) = cur.next_word() {
        if w == "uic" {
            uic = true;
        } else {
            extra.push(parse_number(&w).map_err(|m| cur.error_at(cur.pos - 1, m))?);
        }
    }
    if extra.len() > 2 {
        return Err(cur.error_at(0, "too many .tran arguments"));
    }
    if !(step > 0.0 && stop > 0.0) {
        return Err(cur.error_at(0, ".tran needs positive tstep and tstop"));
    }
    cur.finish()?;
    Ok(TranDirective {
        step,
        stop,
        start: extra.first().copied(),
        max_step: extra.get(1).copied(),
        uic,
    })
}

fn parse_ic(cur: &mut Cursor) -> Result<Vec<(String, f64)>, ParseError> {
    let mut out = Vec::new();
    while cur.pos < cur.tokens.len() {
        match cur.next_word().as_deref() {
            Some("v") => {}
            _ => return Err(cur.error_at(cur.pos.saturating_sub(1), "expected v(node)=value")),
        }
        cur.expect(TokenKind::LParen)?;
        let node = cur.word("node")?;
        cur.expect(TokenKind::RParen)?;
        cur.expect(TokenKind::Equals)?;
        let v = cur.number("initial voltage")?;
        out.push((node, v));
    }
    if out.is_empty() {
        return Err(cur.error_at(0, ".ic needs at least one v(node)=value"));
    }
    Ok(out)
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: &'a LogicalLine,
}

impl<'a> Cursor<'a> {
    fn error_at(&self, token: usize, msg: impl Into<String>) -> ParseError {
        let column = self.tokens.get(token).map_or(1, |t| t.column);
        ParseError::at(self.line.line, column, msg)
    }

    fn error_here(&self, msg: impl Into<String>) -> ParseError {
        let column = self
            .tokens
            .get(self.pos)
            .map_or(self.line.text.len() + 1, |t| t.column);
        ParseError::at(self.line.line, column, msg)
    }

    fn peek_word(&self) -> Option<&str> {
        match self.tokens.get(self.pos).map(|t| &t.kind) {
            Some(TokenKind::Word(w)) => Some(w),
            _ => None,
        }
    }

    fn peek_is_param(&self) -> bool {
        self.peek_word().is_some()
            && matches!(
                self.tokens.get(self.pos + 1).map(|t| &t.kind),
                Some(TokenKind::Equals)
            )
    }

    fn next_word(&mut self) -> Option<String> {
        let w = self.peek_word()?.to_string();
        self.pos += 1;
        Some(w)
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        self.next_word()
            .ok_or_else(|| self.error_here(format!("expected {what}")))
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ParseError> {
        match self.tokens.get(self.pos) {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_here(format!("expected {kind:?}"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, ParseError> {
        let at = self.pos;
        let w = self.word(what)?;
        parse_number(&w).map_err(|m| self.error_at(at, m))
    }

    /// A numeric word or a quoted expression.
    fn value(&mut self, what: &str) -> Result<Expression, ParseError> {
        match self.tokens.get(self.pos) {
            Some(Token {
                kind: TokenKind::Word(w),
                column,
            }) => {
                let column = *column;
                self.pos += 1;
                parse_number(w)
                    .map(Expression::Number)
                    .map_err(|m| ParseError::at(self.line.line, column, m))
            }
            Some(Token {
                kind: TokenKind::Quoted(body),
                column,
            }) => {
                self.pos += 1;
                parse_expression_at(body, self.line.line, column + 1)
            }
            _ => Err(self.error_here(format!("expected {what}"))),
        }
    }

    fn words_before_params(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        while self.peek_word().is_some() && !self.peek_is_param() {
            out.push(self.next_word().unwrap());
        }
        out
    }

    fn params(&mut self) -> Result<ParamList, ParseError> {
        let mut out: ParamList = Vec::new();
        while self.pos < self.tokens.len() {
            if !self.peek_is_param() {
                return Err(self.error_here("expected name=value"));
            }
            let key = self.next_word().unwrap();
            self.pos += 1; // '='
            let value = self.value("parameter value")?;
            if out.iter().any(|(k, _)| *k == key) {
                return Err(self.error_at(self.pos - 3, format!("parameter '{key}' given twice")));
            }
            out.push((key, value));
        }
        Ok(out)
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.tokens.len() {
            return Err(self.error_here("unexpected trailing input"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_empty_document() {
        let doc = parse_netlist("").unwrap();
        assert!(doc.cards.is_empty() && doc.subckts.is_empty() && doc.analyses.is_empty());
    }

    #[test]
    fn single_resistor() {
        let doc = parse_netlist("R1 1 0 1K").unwrap();
        assert_eq!(
            doc.cards,
            vec![Card {
                name: "r1".into(),
                kind: CardKind::Resistor {
                    n1: "1".into(),
                    n2: "0".into(),
                    value: Expression::Number(1000.0)
                }
            }]
        );
    }

    #[test]
    fn directives() {
        let doc = parse_netlist("v1 1 0 dc 5\nr1 1 0 1k\n.tran 1u 15m uic\n.ic v(1)=2\n.end\nr9 junk").unwrap();
        assert_eq!(doc.cards.len(), 2);
        let t = doc.tran().unwrap();
        assert_eq!((t.step, t.stop, t.uic), (1e-6, 15e-3, true));
        assert_eq!(
            doc.analyses[1],
            Analysis::InitialConditions(vec![("1".into(), 2.0)])
        );
    }

    #[test]
    fn builtin_instances() {
        let doc = parse_netlist("xop o p n opamp gain=1e5\nxm a b hpmem rinit=2k").unwrap();
        assert!(matches!(doc.cards[0].kind, CardKind::OpAmp { .. }));
        assert!(matches!(doc.cards[1].kind, CardKind::Memristor { .. }));
        assert!(parse_netlist("xop o p opamp").is_err());
        assert!(parse_netlist(".subckt opamp a b\n.ends").is_err());
    }

    #[test]
    fn linear_controlled_sources() {
        let doc = parse_netlist("e1 o 0 a b 10\ng1 o 0 a 0 1m").unwrap();
        match &doc.cards[0].kind {
            CardKind::Vcvs { expr, .. } => assert_eq!(expr.to_string(), "(10*(v(a)-v(b)))"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(doc.cards[1].kind, CardKind::Vccs { .. }));
    }

    #[test]
    fn errors_carry_locations() {
        let err = parse_netlist("r1 1 0 1k\nq1 1 2 3").unwrap_err();
        assert_eq!(err.location().unwrap().line, 2);

        let err = parse_netlist("r1 1 0 1k\nr1 2 0 1k").unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        let err = parse_netlist(".subckt s a b\nr1 a b 1k\n").unwrap_err();
        assert!(err.to_string().contains("missing .ends"));
        assert_eq!(err.location().unwrap().line, 1);

        let err = parse_netlist("r1 1 0 1x2").unwrap_err();
        assert_eq!(err.location().unwrap().column, 8);

        assert!(parse_netlist(".ends").is_err());
        assert!(parse_netlist(".foo").is_err());
        assert!(parse_netlist("r1 1 0").is_err());
        assert!(parse_netlist("r1 1 0 1k 2k").is_err());
        assert!(parse_netlist("e1 a b vol='1+'").is_err());
    }

    #[test]
    fn duplicate_names_are_scoped() {
        let doc = parse_netlist(".subckt s a b\nr1 a b 1k\n.ends s\nr1 1 0 1k\nx1 1 0 s").unwrap();
        assert_eq!(doc.subckts["s"].cards.len(), 1);
        assert_eq!(doc.cards.len(), 2);
    }
}
