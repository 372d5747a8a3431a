//! Behavioral expressions: `'-I(Emem)*V(x)*(Roff-Ron)'` and friends.
//!
//! Parsed expressions reference parameters, node voltages, and branch
//! currents by name. [`Expression::bind`] replaces those names with numbers
//! or solution-vector slots; [`Expression::eval`] then returns the value
//! together with exact first derivatives with respect to every slot.

use std::collections::HashMap;
use std::fmt;

use crate::error::{ExprError, ParseError};
use crate::netlist::lex::scan_number;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Function {
    Pow,
    Sqrt,
    Exp,
    Log,
    Abs,
}

impl Function {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "pow" => Function::Pow,
            "sqrt" => Function::Sqrt,
            "exp" => Function::Exp,
            "log" | "ln" => Function::Log,
            "abs" => Function::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Function::Pow => "pow",
            Function::Sqrt => "sqrt",
            Function::Exp => "exp",
            Function::Log => "log",
            Function::Abs => "abs",
        }
    }

    fn arity(self) -> usize {
        match self {
            Function::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expression {
    Number(f64),
    Param(String),
    /// `V(node)`.
    Voltage(String),
    /// `I(element)`: branch current of a voltage-defined element.
    Current(String),
    /// Bound reference into a solution vector.
    Slot(usize),
    Neg(Box<Expression>),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
    Call(Function, Vec<Expression>),
}

impl Expression {
    pub fn number(&self) -> Option<f64> {
        match self {
            Expression::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// True if the expression refers to no node voltage, branch current, or slot.
    pub fn is_parametric(&self) -> bool {
        match self {
            Expression::Number(_) | Expression::Param(_) => true,
            Expression::Voltage(_) | Expression::Current(_) | Expression::Slot(_) => false,
            Expression::Neg(a) => a.is_parametric(),
            Expression::Binary(_, a, b) => a.is_parametric() && b.is_parametric(),
            Expression::Call(_, args) => args.iter().all(Expression::is_parametric),
        }
    }

    /// Rewrites every leaf through `f`, then folds constant subtrees.
    pub fn try_map_leaves<E>(
        &self,
        f: &mut impl FnMut(&Expression) -> Result<Expression, E>,
    ) -> Result<Expression, E> {
        let out = match self {
            Expression::Number(_)
            | Expression::Param(_)
            | Expression::Voltage(_)
            | Expression::Current(_)
            | Expression::Slot(_) => f(self)?,
            Expression::Neg(a) => Expression::Neg(Box::new(a.try_map_leaves(f)?)),
            Expression::Binary(op, a, b) => Expression::Binary(
                *op,
                Box::new(a.try_map_leaves(f)?),
                Box::new(b.try_map_leaves(f)?),
            ),
            Expression::Call(func, args) => Expression::Call(
                *func,
                args.iter()
                    .map(|a| a.try_map_leaves(f))
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(out.fold_constants())
    }

    /// Collapses subtrees whose leaves are all numbers.
    pub fn fold_constants(self) -> Expression {
        let all_numbers = match &self {
            Expression::Neg(a) => a.number().is_some(),
            Expression::Binary(_, a, b) => a.number().is_some() && b.number().is_some(),
            Expression::Call(_, args) => args.iter().all(|a| a.number().is_some()),
            _ => false,
        };
        if all_numbers {
            if let Ok(d) = self.eval(&[]) {
                if d.value.is_finite() {
                    return Expression::Number(d.value);
                }
            }
        }
        self
    }

    /// Substitutes parameters from `params` and resolves signals to slots.
    pub fn bind(
        &self,
        params: &HashMap<String, f64>,
        resolve: &mut impl FnMut(&Expression) -> Result<Option<usize>, ExprError>,
    ) -> Result<Expression, ExprError> {
        self.try_map_leaves(&mut |leaf| match leaf {
            Expression::Param(name) => params
                .get(name)
                .map(|v| Expression::Number(*v))
                .ok_or_else(|| ExprError::UnresolvedParam(name.clone())),
            Expression::Voltage(_) | Expression::Current(_) => Ok(match resolve(leaf)? {
                Some(slot) => Expression::Slot(slot),
                // ground
                None => Expression::Number(0.0),
            }),
            other => Ok(other.clone()),
        })
    }

    /// Value of a parameter-only expression.
    pub fn eval_constant(&self, params: &HashMap<String, f64>) -> Result<f64, ExprError> {
        if !self.is_parametric() {
            return Err(ExprError::NotConstant(self.to_string()));
        }
        let bound = self.bind(params, &mut |_| Ok(None))?;
        Ok(bound.eval(&[])?.value)
    }

    /// Evaluates a bound expression at `values`, with derivatives.
    pub fn eval(&self, values: &[f64]) -> Result<Dual, ExprError> {
        Ok(match self {
            Expression::Number(v) => Dual::constant(*v),
            Expression::Slot(s) => {
                let v = *values.get(*s).ok_or(ExprError::BadSlot(*s))?;
                Dual {
                    value: v,
                    grad: vec![(*s, 1.0)],
                }
            }
            Expression::Param(n) => return Err(ExprError::UnresolvedParam(n.clone())),
            Expression::Voltage(n) => return Err(ExprError::UnresolvedNode(n.clone())),
            Expression::Current(n) => return Err(ExprError::UnresolvedBranch(n.clone())),
            Expression::Neg(a) => a.eval(values)?.scale(-1.0),
            Expression::Binary(op, a, b) => {
                let (a, b) = (a.eval(values)?, b.eval(values)?);
                match op {
                    BinaryOp::Add => Dual::combine(a.value + b.value, &a, 1.0, &b, 1.0),
                    BinaryOp::Sub => Dual::combine(a.value - b.value, &a, 1.0, &b, -1.0),
                    BinaryOp::Mul => Dual::combine(a.value * b.value, &a, b.value, &b, a.value),
                    BinaryOp::Div => {
                        let q = a.value / b.value;
                        Dual::combine(q, &a, 1.0 / b.value, &b, -q / b.value)
                    }
                }
            }
            Expression::Call(func, args) => {
                let args: Vec<Dual> = args.iter().map(|a| a.eval(values)).collect::<Result<_, _>>()?;
                match func {
                    Function::Pow => pow(&args[0], &args[1]),
                    Function::Sqrt => {
                        let r = args[0].value.sqrt();
                        args[0].chain(r, 0.5 / r)
                    }
                    Function::Exp => {
                        let e = args[0].value.exp();
                        args[0].chain(e, e)
                    }
                    Function::Log => args[0].chain(args[0].value.ln(), 1.0 / args[0].value),
                    Function::Abs => args[0].chain(args[0].value.abs(), args[0].value.signum()),
                }
            }
        })
    }
}

/// `pow(a, b)`. A negative base truncates the exponent to an integer, as
/// HSPICE does.
fn pow(a: &Dual, b: &Dual) -> Dual {
    if a.value < 0.0 {
        let n = b.value.trunc();
        let v = a.value.powf(n);
        let da = if n == 0.0 { 0.0 } else { n * a.value.powf(n - 1.0) };
        return a.chain(v, da);
    }
    let v = a.value.powf(b.value);
    let da = if b.value == 0.0 {
        0.0
    } else {
        b.value * a.value.powf(b.value - 1.0)
    };
    let db = if a.value > 0.0 { v * a.value.ln() } else { 0.0 };
    Dual::combine(v, a, da, b, db)
}

/// Value plus sparse gradient over solution slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Vec<(usize, f64)>,
}

impl Dual {
    fn constant(value: f64) -> Self {
        Dual { value, grad: Vec::new() }
    }

    fn scale(mut self, s: f64) -> Self {
        self.value *= s;
        for g in &mut self.grad {
            g.1 *= s;
        }
        self
    }

    fn chain(&self, value: f64, slope: f64) -> Dual {
        Dual {
            value,
            grad: self.grad.iter().map(|&(s, d)| (s, d * slope)).collect(),
        }
    }

    fn combine(value: f64, a: &Dual, ca: f64, b: &Dual, cb: f64) -> Dual {
        let mut grad: Vec<(usize, f64)> = a.grad.iter().map(|&(s, d)| (s, d * ca)).collect();
        for &(s, d) in &b.grad {
            match grad.iter_mut().find(|g| g.0 == s) {
                Some(g) => g.1 += d * cb,
                None => grad.push((s, d * cb)),
            }
        }
        Dual { value, grad }
    }

    pub fn partial(&self, slot: usize) -> f64 {
        self.grad.iter().filter(|g| g.0 == slot).map(|g| g.1).sum()
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Number(v) if *v < 0.0 => write!(f, "({v})"),
            Expression::Number(v) => write!(f, "{v}"),
            Expression::Param(n) => write!(f, "{n}"),
            Expression::Voltage(n) => write!(f, "v({n})"),
            Expression::Current(n) => write!(f, "i({n})"),
            Expression::Slot(s) => write!(f, "#{s}"),
            Expression::Neg(a) => write!(f, "(-{a})"),
            Expression::Binary(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
            Expression::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Parses an expression body (without the surrounding quotes).
///
/// Precedence from tightest: unary minus, function call / primary, `* /`,
/// `+ -`. `V(a,b)` is sugar for `V(a)-V(b)`.
pub fn parse_expression(text: &str) -> Result<Expression, ParseError> {
    parse_expression_at(text, 1, 1)
}

pub(crate) fn parse_expression_at(
    text: &str,
    line: usize,
    column: usize,
) -> Result<Expression, ParseError> {
    let lower = text.to_lowercase();
    let mut p = ExprParser {
        src: &lower,
        pos: 0,
        line,
        column,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected '{}'", &p.src[p.pos..])));
    }
    Ok(e)
}

struct ExprParser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> ExprParser<'a> {
    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError::at(self.line, self.column + self.pos, msg)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.as_bytes().get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expression::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn identifier(&mut self) -> Option<String> {
        self.skip_ws();
        let bytes = self.src.as_bytes();
        let start = self.pos;
        while self.pos < bytes.len()
            && (bytes[self.pos].is_ascii_alphanumeric() || matches!(bytes[self.pos], b'_' | b'.'))
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].to_string())
    }

    fn primary(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let (v, used) = scan_number(&self.src[self.pos..])
                    .ok_or_else(|| self.error("malformed number"))?;
                self.pos += used;
                Ok(Expression::Number(v))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.identifier().expect("peeked an identifier start");
                if self.peek() != Some(b'(') {
                    return Ok(Expression::Param(name));
                }
                self.pos += 1;
                match name.as_str() {
                    "v" => {
                        let a = self.signal_name()?;
                        let e = if self.peek() == Some(b',') {
                            self.pos += 1;
                            let b = self.signal_name()?;
                            Expression::Binary(
                                BinaryOp::Sub,
                                Box::new(Expression::Voltage(a)),
                                Box::new(Expression::Voltage(b)),
                            )
                        } else {
                            Expression::Voltage(a)
                        };
                        self.expect(b')')?;
                        Ok(e)
                    }
                    "i" => {
                        let a = self.signal_name()?;
                        self.expect(b')')?;
                        Ok(Expression::Current(a))
                    }
                    _ => {
                        let func = Function::from_name(&name)
                            .ok_or_else(|| self.error(format!("unknown function '{name}'")))?;
                        let mut args = vec![self.expr()?];
                        while self.peek() == Some(b',') {
                            self.pos += 1;
                            args.push(self.expr()?);
                        }
                        self.expect(b')')?;
                        if args.len() != func.arity() {
                            return Err(self.error(format!(
                                "{}() takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            )));
                        }
                        Ok(Expression::Call(func, args))
                    }
                }
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
        }
    }

    fn signal_name(&mut self) -> Result<String, ParseError> {
        self.identifier()
            .ok_or_else(|| self.error("expected a node or element name"))
    }
}
