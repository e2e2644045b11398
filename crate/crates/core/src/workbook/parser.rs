//! Recursive-descent parser for the formula language.
//!
//! Precedence, loosest first: comparisons, `&`, `+ -`, `* /`, unary `-`,
//! `^`. Binary operators are left-associative except `^`, which is
//! right-associative and binds tighter than unary minus (`-2^2` is `-4`).

use super::ast::{BinOp, Expr, Function, RangeRef, VOLATILE_FUNCTIONS};
use super::cellref::{split_address, CellRef};
use super::value::ErrorKind;

/// Cap on the number of cells a single range may cover.
pub const MAX_RANGE_CELLS: u64 = 1_048_576;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    RangeTooLarge,
}

/// Formula syntax error; `pos` is a byte offset into the formula text,
/// counting the leading `=`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message} at offset {pos}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub pos: usize,
    pub message: String,
}

impl ParseError {
    fn syntax(pos: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Syntax,
            pos,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Str(String),
    Bool(bool),
    Err(ErrorKind),
    Func(String),
    Ref(CellRef),
    Colon,
    LParen,
    RParen,
    Comma,
    Op(BinOp),
    Minus,
    Plus,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b == b'.'
}

fn valid_sheet_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == ' ')
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str, start: usize) -> Result<Vec<Token>, ParseError> {
        let mut lx = Lexer {
            src,
            bytes: src.as_bytes(),
            pos: start,
        };
        let mut out = Vec::new();
        loop {
            let t = lx.next_token()?;
            let eof = t.tok == Tok::Eof;
            out.push(t);
            if eof {
                return Ok(out);
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Token, ParseError> {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek() else {
            return Ok(Token {
                tok: Tok::Eof,
                pos: start,
            });
        };
        let single = |tok| Token { tok, pos: start };
        let tok = match b {
            b'(' => single(Tok::LParen),
            b')' => single(Tok::RParen),
            b',' => single(Tok::Comma),
            b':' => single(Tok::Colon),
            b'+' => single(Tok::Plus),
            b'-' => single(Tok::Minus),
            b'*' => single(Tok::Op(BinOp::Mul)),
            b'/' => single(Tok::Op(BinOp::Div)),
            b'^' => single(Tok::Op(BinOp::Pow)),
            b'&' => single(Tok::Op(BinOp::Concat)),
            b'=' => single(Tok::Op(BinOp::Eq)),
            b'<' => {
                let op = match self.bytes.get(start + 1) {
                    Some(b'=') => BinOp::Le,
                    Some(b'>') => BinOp::Ne,
                    _ => BinOp::Lt,
                };
                self.pos += if op == BinOp::Lt { 1 } else { 2 };
                return Ok(single(Tok::Op(op)));
            }
            b'>' => {
                if self.bytes.get(start + 1) == Some(&b'=') {
                    self.pos += 2;
                    return Ok(single(Tok::Op(BinOp::Ge)));
                }
                single(Tok::Op(BinOp::Gt))
            }
            b'"' => return self.string(start),
            b'#' => return self.error_literal(start),
            b'\'' => return self.quoted_sheet_ref(start),
            b'0'..=b'9' | b'.' => return self.number(start),
            b if b.is_ascii_alphabetic() || b == b'_' || b == b'$' => return self.word(start),
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        self.pos += 1;
        Ok(tok)
    }

    fn string(&mut self, start: usize) -> Result<Token, ParseError> {
        let mut out = String::new();
        let mut i = start + 1;
        loop {
            match self.src[i..].find('"') {
                None => return Err(ParseError::syntax(start, "unterminated string")),
                Some(off) => {
                    out.push_str(&self.src[i..i + off]);
                    i += off + 1;
                    if self.bytes.get(i) == Some(&b'"') {
                        out.push('"');
                        i += 1;
                    } else {
                        break;
                    }
                }
            }
        }
        self.pos = i;
        Ok(Token {
            tok: Tok::Str(out),
            pos: start,
        })
    }

    fn error_literal(&mut self, start: usize) -> Result<Token, ParseError> {
        for kind in ErrorKind::ALL {
            let code = kind.as_str();
            if self.src[start..]
                .get(..code.len())
                .is_some_and(|s| s.eq_ignore_ascii_case(code))
            {
                self.pos = start + code.len();
                return Ok(Token {
                    tok: Tok::Err(kind),
                    pos: start,
                });
            }
        }
        Err(ParseError::syntax(start, "unknown error literal"))
    }

    fn number(&mut self, start: usize) -> Result<Token, ParseError> {
        let mut i = start;
        let digits = |i: &mut usize, bytes: &[u8]| {
            let s = *i;
            while bytes.get(*i).is_some_and(u8::is_ascii_digit) {
                *i += 1;
            }
            *i - s
        };
        let int_digits = digits(&mut i, self.bytes);
        let mut frac_digits = 0;
        if self.bytes.get(i) == Some(&b'.') {
            i += 1;
            frac_digits = digits(&mut i, self.bytes);
        }
        if int_digits + frac_digits == 0 {
            return Err(ParseError::syntax(start, "malformed number"));
        }
        if matches!(self.bytes.get(i), Some(b'e' | b'E')) {
            let mut j = i + 1;
            if matches!(self.bytes.get(j), Some(b'+' | b'-')) {
                j += 1;
            }
            if digits(&mut j, self.bytes) == 0 {
                return Err(ParseError::syntax(start, "malformed exponent"));
            }
            i = j;
        }
        if self.bytes.get(i).is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_' || *b == b'.') {
            return Err(ParseError::syntax(start, "malformed number"));
        }
        let text = &self.src[start..i];
        let n: f64 = text
            .parse()
            .map_err(|_| ParseError::syntax(start, "malformed number"))?;
        if !n.is_finite() {
            return Err(ParseError::syntax(start, "number out of range"));
        }
        self.pos = i;
        Ok(Token {
            tok: Tok::Number(n),
            pos: start,
        })
    }

    fn quoted_sheet_ref(&mut self, start: usize) -> Result<Token, ParseError> {
        let rest = &self.src[start + 1..];
        let close = rest
            .find('\'')
            .ok_or_else(|| ParseError::syntax(start, "unterminated sheet name"))?;
        let name = &rest[..close];
        let after = start + 1 + close + 1;
        if self.bytes.get(after) != Some(&b'!') {
            return Err(ParseError::syntax(start, "quoted sheet name must be followed by `!`"));
        }
        if !valid_sheet_name(name) {
            return Err(ParseError::syntax(start, format!("invalid sheet name `{name}`")));
        }
        self.pos = after + 1;
        self.address(start, Some(name.to_string()))
    }

    fn address(&mut self, start: usize, sheet: Option<String>) -> Result<Token, ParseError> {
        let s = self.pos;
        while self.peek().is_some_and(is_word_byte) {
            self.pos += 1;
        }
        let (col, row) = split_address(&self.src[s..self.pos])
            .ok_or_else(|| ParseError::syntax(start, "invalid cell reference"))?;
        Ok(Token {
            tok: Tok::Ref(CellRef { sheet, col, row }),
            pos: start,
        })
    }

    fn word(&mut self, start: usize) -> Result<Token, ParseError> {
        while self.peek().is_some_and(is_word_byte) {
            self.pos += 1;
        }
        let word = &self.src[start..self.pos];
        match self.peek() {
            Some(b'!') => {
                if !valid_sheet_name(word) {
                    return Err(ParseError::syntax(start, format!("invalid sheet name `{word}`")));
                }
                self.pos += 1;
                return self.address(start, Some(word.to_string()));
            }
            Some(b'(') => {
                return Ok(Token {
                    tok: Tok::Func(word.to_ascii_uppercase()),
                    pos: start,
                })
            }
            _ => {}
        }
        let tok = if word.eq_ignore_ascii_case("TRUE") {
            Tok::Bool(true)
        } else if word.eq_ignore_ascii_case("FALSE") {
            Tok::Bool(false)
        } else if let Some((col, row)) = split_address(word) {
            Tok::Ref(CellRef {
                sheet: None,
                col,
                row,
            })
        } else {
            return Err(ParseError::syntax(start, format!("unknown name `{word}`")));
        };
        Ok(Token { tok, pos: start })
    }
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.i]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, ParseError> {
        let t = self.peek();
        if t.tok == want {
            Ok(self.bump())
        } else {
            Err(ParseError::syntax(t.pos, format!("expected {what}")))
        }
    }

    /// Parses an operand and rejects ranges, which are only legal as direct
    /// function arguments.
    fn scalar(&mut self, level: fn(&mut Parser) -> Result<Expr, ParseError>) -> Result<Expr, ParseError> {
        let pos = self.peek().pos;
        let e = level(self)?;
        if matches!(e, Expr::Range(_)) {
            return Err(ParseError::syntax(pos, "range used outside a function argument"));
        }
        Ok(e)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.scalar(Parser::concat)?;
        while let Tok::Op(op @ (BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)) =
            self.peek().tok
        {
            self.bump();
            let rhs = self.scalar(Parser::concat)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn concat(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.scalar(Parser::additive)?;
        while self.peek().tok == Tok::Op(BinOp::Concat) {
            self.bump();
            let rhs = self.scalar(Parser::additive)?;
            lhs = Expr::binary(BinOp::Concat, lhs, rhs);
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.scalar(Parser::term)?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.scalar(Parser::term)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.scalar(Parser::unary)?;
        while let Tok::Op(op @ (BinOp::Mul | BinOp::Div)) = self.peek().tok {
            self.bump();
            let rhs = self.scalar(Parser::unary)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.scalar(Parser::unary)?)))
            }
            Tok::Plus => {
                self.bump();
                self.scalar(Parser::unary)
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek().tok != Tok::Op(BinOp::Pow) {
            return Ok(base);
        }
        if matches!(base, Expr::Range(_)) {
            return Err(ParseError::syntax(self.peek().pos, "range used outside a function argument"));
        }
        self.bump();
        let exponent = self.scalar(Parser::exponent)?;
        Ok(Expr::binary(BinOp::Pow, base, exponent))
    }

    /// Right operand of `^`: allows a sign, then recurses for right-associativity.
    fn exponent(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.scalar(Parser::exponent)?)))
            }
            Tok::Plus => {
                self.bump();
                self.scalar(Parser::exponent)
            }
            _ => self.power(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.bump();
        match t.tok {
            Tok::Number(n) => Ok(Expr::Number(n)),
            Tok::Str(s) => Ok(Expr::Text(s)),
            Tok::Bool(b) => Ok(Expr::Bool(b)),
            Tok::Err(e) => Ok(Expr::Error(e)),
            Tok::LParen => {
                let e = self.scalar(Parser::comparison)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ref(r) => {
                if self.peek().tok != Tok::Colon {
                    return Ok(Expr::Ref(r));
                }
                self.bump();
                let end = match self.bump().tok {
                    Tok::Ref(end) => end,
                    _ => return Err(ParseError::syntax(t.pos, "incomplete range")),
                };
                let sheet = match (r.sheet, end.sheet) {
                    (a, None) => a,
                    (Some(a), Some(b)) if a == b => Some(a),
                    _ => return Err(ParseError::syntax(t.pos, "range must stay on one sheet")),
                };
                let range = RangeRef::new(sheet, (r.col, r.row), (end.col, end.row));
                if range.cell_count() > MAX_RANGE_CELLS {
                    return Err(ParseError {
                        kind: ParseErrorKind::RangeTooLarge,
                        pos: t.pos,
                        message: format!(
                            "range covers {} cells, limit is {MAX_RANGE_CELLS}",
                            range.cell_count()
                        ),
                    });
                }
                Ok(Expr::Range(range))
            }
            Tok::Func(name) => self.call(name, t.pos),
            Tok::Eof => Err(ParseError::syntax(t.pos, "unexpected end of formula")),
            _ => Err(ParseError::syntax(t.pos, "unexpected token")),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> Result<Expr, ParseError> {
        if VOLATILE_FUNCTIONS.contains(&name.as_str()) {
            return Err(ParseError::syntax(pos, format!("volatile function {name} is not allowed")));
        }
        let func = Function::from_name(&name);
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let arg_pos = self.peek().pos;
                let arg = self.comparison_or_range()?;
                if matches!(arg, Expr::Range(_)) && !func.accepts_range(args.len()) {
                    return Err(ParseError::syntax(
                        arg_pos,
                        format!("{name} does not accept a range here"),
                    ));
                }
                args.push(arg);
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        if let Some((min, max)) = func.arity() {
            if args.len() < min || args.len() > max {
                return Err(ParseError::syntax(
                    pos,
                    format!("{name} takes {min}..{max} arguments, got {}", args.len()),
                ));
            }
        }
        Ok(Expr::Call(func, args))
    }

    /// A function argument: a bare range or a scalar expression.
    fn comparison_or_range(&mut self) -> Result<Expr, ParseError> {
        let save = self.i;
        if let Tok::Ref(_) = self.peek().tok {
            if let Ok(e @ Expr::Range(_)) = self.primary() {
                if matches!(self.peek().tok, Tok::Comma | Tok::RParen) {
                    return Ok(e);
                }
            }
            self.i = save;
        }
        self.comparison()
    }
}

/// Parses formula source text (which must start with `=`).
pub fn parse_formula(text: &str) -> Result<Expr, ParseError> {
    if !text.starts_with('=') {
        return Err(ParseError::syntax(0, "formula must start with `=`"));
    }
    let toks = Lexer::tokenize(text, 1)?;
    let mut p = Parser { toks, i: 0 };
    if p.peek().tok == Tok::Eof {
        return Err(ParseError::syntax(p.peek().pos, "empty formula"));
    }
    let e = p.scalar(Parser::comparison)?;
    let t = p.peek();
    if t.tok != Tok::Eof {
        return Err(ParseError::syntax(t.pos, "unexpected trailing input"));
    }
    Ok(e)
}

/// Canonical source text for an expression; re-parses to an equal tree.
pub fn print_formula(expr: &Expr) -> String {
    format!("={expr}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(n: f64) -> Expr {
        Expr::Number(n)
    }

    #[test]
    fn precedence_table() {
        assert_eq!(
            parse_formula("=1+2*3").unwrap(),
            Expr::binary(BinOp::Add, num(1.0), Expr::binary(BinOp::Mul, num(2.0), num(3.0)))
        );
        // unary minus is looser than ^
        assert_eq!(
            parse_formula("=-2^2").unwrap(),
            Expr::Neg(Box::new(Expr::binary(BinOp::Pow, num(2.0), num(2.0))))
        );
        // ^ is right-associative
        assert_eq!(
            parse_formula("=2^3^2").unwrap(),
            Expr::binary(BinOp::Pow, num(2.0), Expr::binary(BinOp::Pow, num(3.0), num(2.0)))
        );
        assert_eq!(
            parse_formula("=2^-1").unwrap(),
            Expr::binary(BinOp::Pow, num(2.0), Expr::Neg(Box::new(num(1.0))))
        );
        // & is looser than +, comparisons looser than &
        assert_eq!(
            parse_formula("=1&2+3=\"15\"").unwrap(),
            Expr::binary(
                BinOp::Eq,
                Expr::binary(BinOp::Concat, num(1.0), Expr::binary(BinOp::Add, num(2.0), num(3.0))),
                Expr::Text("15".into())
            )
        );
        assert_eq!(
            parse_formula("=10-4-3").unwrap(),
            Expr::binary(BinOp::Sub, Expr::binary(BinOp::Sub, num(10.0), num(4.0)), num(3.0))
        );
    }

    #[test]
    fn references_and_ranges() {
        assert_eq!(
            parse_formula("=$B$2+S!C3").unwrap(),
            Expr::binary(
                BinOp::Add,
                Expr::Ref(CellRef::new(None, 2, 2)),
                Expr::Ref(CellRef::new(Some("S"), 3, 3))
            )
        );
        assert_eq!(
            parse_formula("=sum(B3:A1)").unwrap(),
            Expr::Call(
                Function::Sum,
                vec![Expr::Range(RangeRef::new(None, (1, 1), (2, 3)))]
            )
        );
        assert_eq!(
            parse_formula("=SUM('My Sheet'!A1:A2)").unwrap(),
            Expr::Call(
                Function::Sum,
                vec![Expr::Range(RangeRef::new(Some("My Sheet".into()), (1, 1), (1, 2)))]
            )
        );
    }

    #[test]
    fn incomplete_range_reports_range_start() {
        let err = parse_formula("=SUM(A1:").unwrap_err();
        assert_eq!(err.pos, 5);
        assert_eq!(err.kind, ParseErrorKind::Syntax);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let cases = [
            ("1+2", 0),
            ("=", 1),
            ("=1+", 3),
            ("=(1", 3),
            ("=1 2", 3),
            ("=\"abc", 1),
            ("=A1:B2", 1),
            ("=A1:B2+1", 1),
            ("=ABS(A1:A2)", 5),
            ("=IF(1)", 1),
            ("=NOT(1,2)", 1),
            ("=RAND()", 1),
            ("=today()", 1),
            ("=foo", 1),
            ("=1.2.3", 1),
            ("=1e999", 1),
            ("=S!A1:T!A2", 1),
            ("=#BOGUS", 1),
            ("=@", 1),
        ];
        for (src, pos) in cases {
            let err = parse_formula(src).expect_err(src);
            assert_eq!(err.pos, pos, "{src}: {err}");
        }
    }

    #[test]
    fn oversized_range_is_flagged() {
        let err = parse_formula("=SUM(A1:ZZ1048576)").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::RangeTooLarge);
        assert!(parse_formula("=SUM(A1:A1048576)").is_ok());
    }

    #[test]
    fn unknown_functions_parse() {
        assert_eq!(
            parse_formula("=vlookup(1,A1:B2)").unwrap(),
            Expr::Call(
                Function::Unknown("VLOOKUP".into()),
                vec![num(1.0), Expr::Range(RangeRef::new(None, (1, 1), (2, 2)))]
            )
        );
    }

    #[test]
    fn literals() {
        assert_eq!(parse_formula("=\"a\"\"b\"").unwrap(), Expr::Text("a\"b".into()));
        assert_eq!(parse_formula("=true").unwrap(), Expr::Bool(true));
        assert_eq!(parse_formula("=#div/0!").unwrap(), Expr::Error(ErrorKind::Div0));
        assert_eq!(parse_formula("=.5e1").unwrap(), num(5.0));
    }

    #[test]
    fn printing_round_trips() {
        for src in [
            "=-2^2",
            "=1+2*3-4/5^-6",
            "=IF(A1>0,\"p\"\"os\",\"neg\")&S!B2",
            "=SUM(A1:B3,'X y'!C1:C9,7)<>NPV(0.1,D1:D4)",
            "=NOT(AND(TRUE,#REF!))",
            "=1e-7*1e300",
        ] {
            let e = parse_formula(src).unwrap();
            let printed = print_formula(&e);
            assert_eq!(parse_formula(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }
}
