//! Recursive-descent parser for drift expressions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("-" | "+") unary | power ;
//! power   = primary [ "^" unary ] ;          (* exponent must fold to a constant *)
//! primary = number | "x" | param | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "atan" | "log" | "exp" | "sqrt" | "abs" ;
//! ```

use super::expr::{Expr, Func};
use super::ExprError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push(Token {
                    tok: Tok::Num(value),
                    pos: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(src[start..i].to_string()),
                    pos: start,
                });
                continue;
            }
            other => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token { tok, pos: start });
        i += 1;
    }
    out.push(Token {
        tok: Tok::End,
        pos: src.len(),
    });
    Ok(out)
}

pub(crate) struct Parser<'a> {
    tokens: Vec<Token>,
    at: usize,
    params: &'a [String],
}

impl<'a> Parser<'a> {
    pub(crate) fn parse(src: &str, params: &'a [String]) -> Result<Expr, ExprError> {
        let mut p = Parser {
            tokens: tokenize(src)?,
            at: 0,
            params,
        };
        let e = p.expr()?;
        match p.peek() {
            Tok::End => Ok(e),
            _ => Err(p.unexpected("end of input")),
        }
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.at].tok
    }

    fn pos(&self) -> usize {
        self.tokens[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            t => format!("{t:?}"),
        };
        ExprError::Syntax {
            pos: self.pos(),
            msg: format!("expected {wanted}, found {found}"),
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::neg(self.unary()?))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let pos = self.pos();
        let exponent = self.unary()?;
        match exponent.as_const() {
            Some(e) => Ok(Expr::pow(base, e)),
            None => Err(ExprError::Syntax {
                pos,
                msg: "exponent must be a constant".into(),
            }),
        }
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        if !matches!(self.peek(), Tok::Num(_) | Tok::LParen | Tok::Ident(_)) {
            return Err(self.unexpected("a number, identifier or `(`"));
        }
        let Token { tok, pos } = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::constant(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, pos),
            _ => unreachable!(),
        }
    }

    fn identifier(&mut self, name: String, pos: usize) -> Result<Expr, ExprError> {
        if let Some(func) = Func::from_name(&name) {
            if *self.peek() != Tok::LParen {
                return Err(ExprError::Syntax {
                    pos: self.pos(),
                    msg: format!("function `{name}` must be followed by `(`"),
                });
            }
            self.bump();
            let mut args = vec![self.expr()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            if args.len() != 1 {
                return Err(ExprError::Arity {
                    name,
                    expected: 1,
                    got: args.len(),
                    pos,
                });
            }
            return Ok(Expr::call(func, args.pop().unwrap()));
        }
        let leaf = if name == "x" {
            Expr::x()
        } else if let Some(i) = self.params.iter().position(|p| *p == name) {
            Expr::param(i)
        } else {
            return Err(ExprError::UnknownIdentifier { name, pos });
        };
        if *self.peek() == Tok::LParen {
            return Err(ExprError::Syntax {
                pos: self.pos(),
                msg: format!("`{name}` is not a function"),
            });
        }
        Ok(leaf)
    }
}
