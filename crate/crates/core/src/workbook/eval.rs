//! Pure evaluation of compiled formula expressions.
//!
//! Blank cells are `None`: 0 in numeric context, "" in text context, FALSE in
//! logical context, and skipped by the aggregate functions. Wherever several
//! operands are involved the first error in argument order wins.

use std::cmp::Ordering;

use super::ast::{BinOp, Function};
use super::graph::{CExpr, Slot};
use super::value::{compare_scalars, ErrorKind, Value};

type Operand = Option<Value>;

fn to_number(v: &Operand) -> Result<f64, ErrorKind> {
    match v {
        None => Ok(0.0),
        Some(Value::Number(n)) => Ok(*n),
        Some(Value::Bool(b)) => Ok(if *b { 1.0 } else { 0.0 }),
        Some(Value::Text(_)) => Err(ErrorKind::Value),
        Some(Value::Error(e)) => Err(*e),
    }
}

fn to_bool(v: &Operand) -> Result<bool, ErrorKind> {
    match v {
        None => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::Number(n)) => Ok(*n != 0.0),
        Some(Value::Text(_)) => Err(ErrorKind::Value),
        Some(Value::Error(e)) => Err(*e),
    }
}

fn to_text(v: &Operand) -> Result<String, ErrorKind> {
    match v {
        None => Ok(String::new()),
        Some(Value::Error(e)) => Err(*e),
        Some(v) => Ok(v.display_text()),
    }
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(kind) => return Value::Error(kind),
        }
    };
}

pub(crate) struct Evaluator<'a> {
    pub values: &'a [Option<Value>],
}

impl Evaluator<'_> {
    /// Value of a formula; a bare blank result becomes 0.
    pub fn formula(&self, e: &CExpr) -> Value {
        self.operand(e).unwrap_or(Value::Number(0.0))
    }

    fn operand(&self, e: &CExpr) -> Operand {
        match e {
            CExpr::Cell(Slot::Node(id)) => self.values[*id as usize].clone(),
            CExpr::Cell(Slot::Blank) => None,
            CExpr::Cell(Slot::BadRef) | CExpr::BadRange => Some(Value::Error(ErrorKind::Ref)),
            // ranges outside argument position are rejected by the parser
            CExpr::Range(_) => Some(Value::Error(ErrorKind::Value)),
            other => Some(self.eval(other)),
        }
    }

    fn eval(&self, e: &CExpr) -> Value {
        match e {
            CExpr::Lit(v) => v.clone(),
            CExpr::Cell(_) | CExpr::Range(_) | CExpr::BadRange => self.formula(e),
            CExpr::Neg(x) => Value::number(-tri!(to_number(&self.operand(x)))),
            CExpr::Bin(op, l, r) => self.binary(*op, self.operand(l), self.operand(r)),
            CExpr::Call(f, args) => self.call(f, args),
        }
    }

    fn binary(&self, op: BinOp, l: Operand, r: Operand) -> Value {
        match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div | BinOp::Pow => {
                let a = tri!(to_number(&l));
                let b = tri!(to_number(&r));
                match op {
                    BinOp::Add => Value::number(a + b),
                    BinOp::Sub => Value::number(a - b),
                    BinOp::Mul => Value::number(a * b),
                    BinOp::Div if b == 0.0 => Value::Error(ErrorKind::Div0),
                    BinOp::Div => Value::number(a / b),
                    _ => Value::number(a.powf(b)),
                }
            }
            BinOp::Concat => {
                let a = tri!(to_text(&l));
                let b = tri!(to_text(&r));
                Value::Text(a + &b)
            }
            _ => {
                if let Some(Value::Error(e)) = l {
                    return Value::Error(e);
                }
                if let Some(Value::Error(e)) = r {
                    return Value::Error(e);
                }
                let (a, b) = match (l, r) {
                    (None, None) => (Value::Number(0.0), Value::Number(0.0)),
                    (Some(a), None) => {
                        let b = blank_like(&a);
                        (a, b)
                    }
                    (None, Some(b)) => (blank_like(&b), b),
                    (Some(a), Some(b)) => (a, b),
                };
                let ord = compare_scalars(&a, &b);
                Value::Bool(match op {
                    BinOp::Eq => ord == Ordering::Equal,
                    BinOp::Ne => ord != Ordering::Equal,
                    BinOp::Lt => ord == Ordering::Less,
                    BinOp::Le => ord != Ordering::Greater,
                    BinOp::Gt => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                })
            }
        }
    }

    /// Numbers contributed by aggregate arguments. References (cells and
    /// ranges) contribute only their numeric members; other expressions also
    /// contribute booleans as 1/0. Text and blanks are skipped.
    fn numbers(&self, args: &[CExpr]) -> Result<Vec<f64>, ErrorKind> {
        let mut out = Vec::new();
        for a in args {
            match a {
                CExpr::Range(ids) => {
                    for id in ids {
                        match &self.values[*id as usize] {
                            Some(Value::Number(n)) => out.push(*n),
                            Some(Value::Error(e)) => return Err(*e),
                            _ => {}
                        }
                    }
                }
                CExpr::Cell(_) | CExpr::BadRange => match self.operand(a) {
                    Some(Value::Number(n)) => out.push(n),
                    Some(Value::Error(e)) => return Err(e),
                    _ => {}
                },
                other => match self.eval(other) {
                    Value::Number(n) => out.push(n),
                    Value::Bool(b) => out.push(if b { 1.0 } else { 0.0 }),
                    Value::Error(e) => return Err(e),
                    Value::Text(_) => {}
                },
            }
        }
        Ok(out)
    }

    /// Logical values for AND/OR: references contribute booleans and numbers,
    /// skipping text and blanks; direct text is an error.
    fn logicals(&self, args: &[CExpr]) -> Result<Vec<bool>, ErrorKind> {
        let mut out = Vec::new();
        let mut take = |v: Option<&Value>, direct: bool| -> Result<(), ErrorKind> {
            match v {
                Some(Value::Bool(b)) => out.push(*b),
                Some(Value::Number(n)) => out.push(*n != 0.0),
                Some(Value::Error(e)) => return Err(*e),
                Some(Value::Text(_)) if direct => return Err(ErrorKind::Value),
                _ => {}
            }
            Ok(())
        };
        for a in args {
            match a {
                CExpr::Range(ids) => {
                    for id in ids {
                        take(self.values[*id as usize].as_ref(), false)?;
                    }
                }
                CExpr::Cell(_) | CExpr::BadRange => take(self.operand(a).as_ref(), false)?,
                other => take(Some(&self.eval(other)), true)?,
            }
        }
        Ok(out)
    }

    fn call(&self, f: &Function, args: &[CExpr]) -> Value {
        match f {
            Function::Sum => {
                let xs = tri!(self.numbers(args));
                Value::number(xs.iter().fold(0.0, |acc, x| acc + x))
            }
            Function::Count => Value::Number(tri!(self.numbers(args)).len() as f64),
            Function::Average => {
                let xs = tri!(self.numbers(args));
                if xs.is_empty() {
                    return Value::Error(ErrorKind::Div0);
                }
                let sum = xs.iter().fold(0.0, |acc, x| acc + x);
                Value::number(sum / xs.len() as f64)
            }
            Function::Min | Function::Max => {
                let xs = tri!(self.numbers(args));
                let pick = |acc: f64, x: f64| match f {
                    Function::Min if x < acc => x,
                    Function::Max if x > acc => x,
                    _ => acc,
                };
                match xs.split_first() {
                    None => Value::Error(ErrorKind::Div0),
                    Some((first, rest)) => Value::Number(rest.iter().fold(*first, |a, x| pick(a, *x))),
                }
            }
            Function::And | Function::Or => {
                let bs = tri!(self.logicals(args));
                if bs.is_empty() {
                    return Value::Error(ErrorKind::Value);
                }
                Value::Bool(if *f == Function::And {
                    bs.iter().all(|b| *b)
                } else {
                    bs.iter().any(|b| *b)
                })
            }
            Function::Not => Value::Bool(!tri!(to_bool(&self.operand(&args[0])))),
            Function::If => {
                if tri!(to_bool(&self.operand(&args[0]))) {
                    self.formula(&args[1])
                } else {
                    match args.get(2) {
                        Some(e) => self.formula(e),
                        None => Value::Bool(false),
                    }
                }
            }
            Function::Abs => Value::number(tri!(to_number(&self.operand(&args[0]))).abs()),
            Function::Exp => Value::number(tri!(to_number(&self.operand(&args[0]))).exp()),
            Function::Ln => {
                let x = tri!(to_number(&self.operand(&args[0])));
                if x <= 0.0 {
                    Value::Error(ErrorKind::Value)
                } else {
                    Value::number(x.ln())
                }
            }
            Function::Sqrt => {
                let x = tri!(to_number(&self.operand(&args[0])));
                if x < 0.0 {
                    Value::Error(ErrorKind::Value)
                } else {
                    Value::number(x.sqrt())
                }
            }
            Function::Npv => {
                let rate = tri!(to_number(&self.operand(&args[0])));
                let flows = tri!(self.numbers(&args[1..]));
                if rate <= -1.0 {
                    return Value::Error(ErrorKind::Div0);
                }
                let base = 1.0 + rate;
                let total = flows
                    .iter()
                    .enumerate()
                    .fold(0.0, |acc, (i, v)| acc + v / base.powf((i + 1) as f64));
                Value::number(total)
            }
            Function::Unknown(_) => Value::Error(ErrorKind::Name),
        }
    }
}

fn blank_like(other: &Value) -> Value {
    match other {
        Value::Text(_) => Value::Text(String::new()),
        Value::Bool(_) => Value::Bool(false),
        _ => Value::Number(0.0),
    }
}
