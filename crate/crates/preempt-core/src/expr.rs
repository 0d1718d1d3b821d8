//! Mini expression language for behavior-tree Expression and Condition
//! nodes: arithmetic, comparisons, and boolean logic over numeric and
//! boolean values, with `$key` references resolved against a blackboard.
//!
//! Grammar (EBNF, lowest precedence first):
//!
//! ```text
//! expr    = or ;
//! or      = and { "||" and } ;
//! and     = cmp { "&&" cmp } ;
//! cmp     = add { ("<" | "<=" | ">" | ">=" | "==" | "!=") add } ;
//! add     = mul { ("+" | "-") mul } ;
//! mul     = unary { ("*" | "/" | "%") unary } ;
//! unary   = ("-" | "!") unary | atom ;
//! atom    = number | "true" | "false" | "$" ident | "(" expr ")" ;
//! number  = digit { digit } [ "." digit { digit } ] [ ("e"|"E") [sign] digit { digit } ] ;
//! ident   = (letter | "_") { letter | digit | "_" } ;
//! ```
//!
//! All binary operators are left-associative. Evaluation is strict (both
//! operands of `&&` and `||` are evaluated) and pure: expressions cannot
//! write to the blackboard.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}")]
    SyntaxError { offset: usize },
    #[error("unexpected token `{found}` at byte {offset}")]
    UnexpectedToken { offset: usize, found: String },
    #[error("unknown blackboard key `{name}`")]
    UnknownKey { name: String },
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("division by zero")]
    DivisionByZero,
}

/// Runtime value: a 64-bit float or a boolean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
}

impl Value {
    pub fn type_name(self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Bool(_) => "boolean",
        }
    }

    fn as_number(self) -> Result<f64, ExprError> {
        match self {
            Value::Number(v) => Ok(v),
            Value::Bool(_) => Err(ExprError::TypeMismatch {
                expected: "number",
                found: "boolean",
            }),
        }
    }

    fn as_bool(self) -> Result<bool, ExprError> {
        match self {
            Value::Bool(b) => Ok(b),
            Value::Number(_) => Err(ExprError::TypeMismatch {
                expected: "boolean",
                found: "number",
            }),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div | BinOp::Mod => 5,
        }
    }
}

/// Abstract syntax tree; grouping parentheses are not represented, the
/// printer re-inserts them from precedence.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Bool(bool),
    Ref(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

const UNARY_PRECEDENCE: u8 = 6;
const ATOM_PRECEDENCE: u8 = 7;

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Number(_) | Expr::Bool(_) | Expr::Ref(_) => ATOM_PRECEDENCE,
            Expr::Unary(..) => UNARY_PRECEDENCE,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    True,
    False,
    Ref(String),
    Op(BinOp),
    Minus,
    Bang,
    LParen,
    RParen,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(v) => write!(f, "{v}"),
            Token::True => write!(f, "true"),
            Token::False => write!(f, "false"),
            Token::Ref(name) => write!(f, "${name}"),
            Token::Op(op) => write!(f, "{}", op.symbol()),
            Token::Minus => write!(f, "-"),
            Token::Bang => write!(f, "!"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let value: f64 = text[start..i]
                    .parse()
                    .map_err(|_| ExprError::SyntaxError { offset: start })?;
                tokens.push((start, Token::Number(value)));
            }
            b'$' => {
                i += 1;
                let name_start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                if i == name_start || bytes[name_start].is_ascii_digit() {
                    return Err(ExprError::SyntaxError { offset: start });
                }
                tokens.push((start, Token::Ref(text[name_start..i].to_string())));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                match &text[start..i] {
                    "true" => tokens.push((start, Token::True)),
                    "false" => tokens.push((start, Token::False)),
                    _ => return Err(ExprError::SyntaxError { offset: start }),
                }
            }
            b'+' => {
                i += 1;
                tokens.push((start, Token::Op(BinOp::Add)));
            }
            b'-' => {
                i += 1;
                tokens.push((start, Token::Minus));
            }
            b'*' => {
                i += 1;
                tokens.push((start, Token::Op(BinOp::Mul)));
            }
            b'/' => {
                i += 1;
                tokens.push((start, Token::Op(BinOp::Div)));
            }
            b'%' => {
                i += 1;
                tokens.push((start, Token::Op(BinOp::Mod)));
            }
            b'(' => {
                i += 1;
                tokens.push((start, Token::LParen));
            }
            b')' => {
                i += 1;
                tokens.push((start, Token::RParen));
            }
            b'<' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    tokens.push((start, Token::Op(BinOp::Le)));
                } else {
                    i += 1;
                    tokens.push((start, Token::Op(BinOp::Lt)));
                }
            }
            b'>' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    tokens.push((start, Token::Op(BinOp::Ge)));
                } else {
                    i += 1;
                    tokens.push((start, Token::Op(BinOp::Gt)));
                }
            }
            b'=' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    tokens.push((start, Token::Op(BinOp::Eq)));
                } else {
                    return Err(ExprError::SyntaxError { offset: start });
                }
            }
            b'!' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    i += 2;
                    tokens.push((start, Token::Op(BinOp::Ne)));
                } else {
                    i += 1;
                    tokens.push((start, Token::Bang));
                }
            }
            b'&' if i + 1 < bytes.len() && bytes[i + 1] == b'&' => {
                i += 2;
                tokens.push((start, Token::Op(BinOp::And)));
            }
            b'|' if i + 1 < bytes.len() && bytes[i + 1] == b'|' => {
                i += 2;
                tokens.push((start, Token::Op(BinOp::Or)));
            }
            _ => return Err(ExprError::SyntaxError { offset: start }),
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [(usize, Token)],
    pos: usize,
    end_offset: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn advance(&mut self) -> Option<&(usize, Token)> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(o, _)| *o)
            .unwrap_or(self.end_offset)
    }

    /// Parses one precedence tier of left-associative binary operators.
    fn binary_tier(
        &mut self,
        ops: &[BinOp],
        next: &mut dyn FnMut(&mut Self) -> Result<Expr, ExprError>,
    ) -> Result<Expr, ExprError> {
        let mut lhs = next(self)?;
        loop {
            // `-` lexes as Minus so the unary parser can claim it; here it
            // is binary subtraction whenever this tier handles Sub.
            let op = match self.peek() {
                Some(Token::Op(op)) if ops.contains(op) => *op,
                Some(Token::Minus) if ops.contains(&BinOp::Sub) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = next(self)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Expr, ExprError> {
        self.binary_tier(&[BinOp::Or], &mut |p| p.parse_and())
    }

    fn parse_and(&mut self) -> Result<Expr, ExprError> {
        self.binary_tier(&[BinOp::And], &mut |p| p.parse_cmp())
    }

    fn parse_cmp(&mut self) -> Result<Expr, ExprError> {
        self.binary_tier(
            &[
                BinOp::Lt,
                BinOp::Le,
                BinOp::Gt,
                BinOp::Ge,
                BinOp::Eq,
                BinOp::Ne,
            ],
            &mut |p| p.parse_add(),
        )
    }

    fn parse_add(&mut self) -> Result<Expr, ExprError> {
        self.binary_tier(&[BinOp::Add, BinOp::Sub], &mut |p| p.parse_mul())
    }

    fn parse_mul(&mut self) -> Result<Expr, ExprError> {
        self.binary_tier(&[BinOp::Mul, BinOp::Div, BinOp::Mod], &mut |p| {
            p.parse_unary()
        })
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.pos += 1;
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.parse_unary()?)))
            }
            Some(Token::Bang) => {
                self.pos += 1;
                Ok(Expr::Unary(UnaryOp::Not, Box::new(self.parse_unary()?)))
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        let offset = self.offset();
        match self.advance() {
            Some((_, Token::Number(v))) => Ok(Expr::Number(*v)),
            Some((_, Token::True)) => Ok(Expr::Bool(true)),
            Some((_, Token::False)) => Ok(Expr::Bool(false)),
            Some((_, Token::Ref(name))) => Ok(Expr::Ref(name.clone())),
            Some((_, Token::LParen)) => {
                let inner = self.parse_or()?;
                match self.advance() {
                    Some((_, Token::RParen)) => Ok(inner),
                    Some((o, t)) => Err(ExprError::UnexpectedToken {
                        offset: *o,
                        found: t.to_string(),
                    }),
                    None => Err(ExprError::SyntaxError {
                        offset: self.end_offset,
                    }),
                }
            }
            Some((o, t)) => Err(ExprError::UnexpectedToken {
                offset: *o,
                found: t.to_string(),
            }),
            None => Err(ExprError::SyntaxError { offset }),
        }
    }
}

/// Parses a complete expression; trailing input is an error.
pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        end_offset: text.len(),
    };
    let expr = parser.parse_or()?;
    if let Some((offset, token)) = parser.tokens.get(parser.pos) {
        return Err(ExprError::UnexpectedToken {
            offset: *offset,
            found: token.to_string(),
        });
    }
    Ok(expr)
}

/// Evaluates an expression against a blackboard snapshot. Pure: the
/// environment is never mutated, and both operands of `&&`/`||` are
/// always evaluated.
pub fn eval(expr: &Expr, env: &HashMap<String, Value>) -> Result<Value, ExprError> {
    match expr {
        Expr::Number(v) => Ok(Value::Number(*v)),
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Ref(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| ExprError::UnknownKey { name: name.clone() }),
        Expr::Unary(UnaryOp::Neg, inner) => Ok(Value::Number(-eval(inner, env)?.as_number()?)),
        Expr::Unary(UnaryOp::Not, inner) => Ok(Value::Bool(!eval(inner, env)?.as_bool()?)),
        Expr::Binary(op, lhs, rhs) => {
            let l = eval(lhs, env)?;
            let r = eval(rhs, env)?;
            apply_binary(*op, l, r)
        }
    }
}

fn apply_binary(op: BinOp, l: Value, r: Value) -> Result<Value, ExprError> {
    use BinOp::*;
    match op {
        Add => Ok(Value::Number(l.as_number()? + r.as_number()?)),
        Sub => Ok(Value::Number(l.as_number()? - r.as_number()?)),
        Mul => Ok(Value::Number(l.as_number()? * r.as_number()?)),
        Div => {
            let denom = r.as_number()?;
            if denom == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            Ok(Value::Number(l.as_number()? / denom))
        }
        // Floating remainder keeps the sign of the dividend.
        Mod => {
            let denom = r.as_number()?;
            if denom == 0.0 {
                return Err(ExprError::DivisionByZero);
            }
            Ok(Value::Number(l.as_number()? % denom))
        }
        Lt => Ok(Value::Bool(l.as_number()? < r.as_number()?)),
        Le => Ok(Value::Bool(l.as_number()? <= r.as_number()?)),
        Gt => Ok(Value::Bool(l.as_number()? > r.as_number()?)),
        Ge => Ok(Value::Bool(l.as_number()? >= r.as_number()?)),
        Eq | Ne => {
            let equal = match (l, r) {
                (Value::Number(a), Value::Number(b)) => a == b,
                (Value::Bool(a), Value::Bool(b)) => a == b,
                _ => {
                    return Err(ExprError::TypeMismatch {
                        expected: l.type_name(),
                        found: r.type_name(),
                    })
                }
            };
            Ok(Value::Bool(if op == Eq { equal } else { !equal }))
        }
        And => Ok(Value::Bool(l.as_bool()? && r.as_bool()?)),
        Or => Ok(Value::Bool(l.as_bool()? || r.as_bool()?)),
    }
}

/// Canonical printer: minimal parentheses, single spaces around binary
/// operators. `parse(print(e)) == e` for any tree whose numeric literals
/// are non-negative and finite (negative constants print through the
/// unary minus node).
pub fn print(expr: &Expr) -> String {
    let mut out = String::new();
    print_into(expr, &mut out);
    out
}

fn print_into(expr: &Expr, out: &mut String) {
    match expr {
        Expr::Number(v) => out.push_str(&format!("{v}")),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Ref(name) => {
            out.push('$');
            out.push_str(name);
        }
        Expr::Unary(op, inner) => {
            out.push(match op {
                UnaryOp::Neg => '-',
                UnaryOp::Not => '!',
            });
            print_child(inner, UNARY_PRECEDENCE, false, out);
        }
        Expr::Binary(op, lhs, rhs) => {
            let p = op.precedence();
            print_child(lhs, p, false, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            // Left-associative: a right child at equal precedence needs
            // parentheses to survive re-parsing.
            print_child(rhs, p, true, out);
        }
    }
}

fn print_child(child: &Expr, parent_prec: u8, is_right: bool, out: &mut String) {
    let needs_parens =
        child.precedence() < parent_prec || (is_right && child.precedence() == parent_prec);
    if needs_parens {
        out.push('(');
        print_into(child, out);
        out.push(')');
    } else {
        print_into(child, out);
    }
}
