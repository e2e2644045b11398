use std::fmt;

use super::cellref::{column_name, CellRef};
use super::value::ErrorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Concat,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Concat => "&",
            BinOp::Eq => "=",
            BinOp::Ne => "<>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
        }
    }
}

/// The fixed function set. Names outside it parse as [`Function::Unknown`]
/// and evaluate to `#NAME?`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Function {
    Sum,
    Average,
    Min,
    Max,
    Count,
    If,
    And,
    Or,
    Not,
    Abs,
    Exp,
    Ln,
    Sqrt,
    Npv,
    Unknown(String),
}

/// Functions rejected at parse time because their results are not a pure
/// function of the workbook contents.
pub const VOLATILE_FUNCTIONS: &[&str] = &[
    "RAND",
    "RANDBETWEEN",
    "RANDARRAY",
    "NOW",
    "TODAY",
    "OFFSET",
    "INDIRECT",
    "CELL",
    "INFO",
];

impl Function {
    pub fn from_name(name: &str) -> Function {
        match name.to_ascii_uppercase().as_str() {
            "SUM" => Function::Sum,
            "AVERAGE" => Function::Average,
            "MIN" => Function::Min,
            "MAX" => Function::Max,
            "COUNT" => Function::Count,
            "IF" => Function::If,
            "AND" => Function::And,
            "OR" => Function::Or,
            "NOT" => Function::Not,
            "ABS" => Function::Abs,
            "EXP" => Function::Exp,
            "LN" => Function::Ln,
            "SQRT" => Function::Sqrt,
            "NPV" => Function::Npv,
            other => Function::Unknown(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Function::Sum => "SUM",
            Function::Average => "AVERAGE",
            Function::Min => "MIN",
            Function::Max => "MAX",
            Function::Count => "COUNT",
            Function::If => "IF",
            Function::And => "AND",
            Function::Or => "OR",
            Function::Not => "NOT",
            Function::Abs => "ABS",
            Function::Exp => "EXP",
            Function::Ln => "LN",
            Function::Sqrt => "SQRT",
            Function::Npv => "NPV",
            Function::Unknown(name) => name,
        }
    }

    /// Inclusive (min, max) argument count; `None` for unknown functions.
    pub fn arity(&self) -> Option<(usize, usize)> {
        Some(match self {
            Function::Sum
            | Function::Average
            | Function::Min
            | Function::Max
            | Function::Count
            | Function::And
            | Function::Or => (1, 255),
            Function::If => (2, 3),
            Function::Not | Function::Abs | Function::Exp | Function::Ln | Function::Sqrt => (1, 1),
            Function::Npv => (2, 255),
            Function::Unknown(_) => return None,
        })
    }

    /// Whether argument `index` may be a range.
    pub fn accepts_range(&self, index: usize) -> bool {
        match self {
            Function::Sum
            | Function::Average
            | Function::Min
            | Function::Max
            | Function::Count
            | Function::And
            | Function::Or
            | Function::Unknown(_) => true,
            Function::Npv => index > 0,
            _ => false,
        }
    }
}

/// Rectangular block on a single sheet, normalized so that `start` is the
/// top-left corner.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RangeRef {
    pub sheet: Option<String>,
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl RangeRef {
    pub fn new(sheet: Option<String>, a: (u32, u32), b: (u32, u32)) -> RangeRef {
        RangeRef {
            sheet,
            start: (a.0.min(b.0), a.1.min(b.1)),
            end: (a.0.max(b.0), a.1.max(b.1)),
        }
    }

    pub fn cell_count(&self) -> u64 {
        u64::from(self.end.0 - self.start.0 + 1) * u64::from(self.end.1 - self.start.1 + 1)
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        (self.start.0..=self.end.0).contains(&col) && (self.start.1..=self.end.1).contains(&row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Error(ErrorKind),
    Ref(CellRef),
    Range(RangeRef),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Function, Vec<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Visits every cell reference and range in the expression.
    pub fn for_each_reference<'a>(&'a self, f: &mut impl FnMut(Reference<'a>)) {
        match self {
            Expr::Ref(r) => f(Reference::Cell(r)),
            Expr::Range(r) => f(Reference::Range(r)),
            Expr::Neg(e) => e.for_each_reference(f),
            Expr::Binary(_, l, r) => {
                l.for_each_reference(f);
                r.for_each_reference(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_reference(f)),
            Expr::Number(_) | Expr::Text(_) | Expr::Bool(_) | Expr::Error(_) => {}
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Cell(&'a CellRef),
    Range(&'a RangeRef),
}

fn write_sheet_prefix(f: &mut fmt::Formatter<'_>, sheet: &Option<String>) -> fmt::Result {
    match sheet {
        Some(s) if s.contains(' ') => write!(f, "'{s}'!"),
        Some(s) => write!(f, "{s}!"),
        None => Ok(()),
    }
}

/// Prints a fully parenthesized formula body (without the leading `=`).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Number(n) => write!(f, "{n:?}"),
            Expr::Text(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            Expr::Bool(true) => f.write_str("TRUE"),
            Expr::Bool(false) => f.write_str("FALSE"),
            Expr::Error(e) => f.write_str(e.as_str()),
            Expr::Ref(r) => {
                write_sheet_prefix(f, &r.sheet)?;
                write!(f, "{}{}", column_name(r.col), r.row)
            }
            Expr::Range(r) => {
                write_sheet_prefix(f, &r.sheet)?;
                write!(
                    f,
                    "{}{}:{}{}",
                    column_name(r.start.0),
                    r.start.1,
                    column_name(r.end.0),
                    r.end.1
                )
            }
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
