//! Recursive-descent parser for the expression language.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x1^2`
//! reads as `-(x1^2)` and `2^-1` as `2^(-1)`.

use super::{BinOp, ExprError, Func, Node, MAX_VARS};

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokenize(src: &'a str) -> Result<Vec<(usize, Token)>, ExprError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some(tok) = lx.next_token()? {
            out.push(tok);
        }
        Ok(out)
    }

    fn peek_byte(&self) -> Option<u8> {
        self.src.as_bytes().get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Option<(usize, Token)>, ExprError> {
        while matches!(self.peek_byte(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(b) = self.peek_byte() else {
            return Ok(None);
        };
        let tok = match b {
            b'0'..=b'9' | b'.' => self.number()?,
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while matches!(self.peek_byte(), Some(c) if c.is_ascii_alphanumeric() || c == b'_')
                {
                    self.pos += 1;
                }
                Token::Ident(self.src[start..self.pos].to_string())
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Token::Op(b as char)
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{ch}'"),
                });
            }
        };
        Ok(Some((start, tok)))
    }

    fn digits(&mut self) -> usize {
        let s = self.pos;
        while matches!(self.peek_byte(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        self.pos - s
    }

    fn number(&mut self) -> Result<Token, ExprError> {
        let start = self.pos;
        let mut mantissa = self.digits();
        if self.peek_byte() == Some(b'.') {
            self.pos += 1;
            mantissa += self.digits();
        }
        if mantissa == 0 {
            return Err(ExprError::Syntax {
                pos: start,
                msg: "malformed number".into(),
            });
        }
        if matches!(self.peek_byte(), Some(b'e' | b'E')) {
            // only an exponent if digits follow; otherwise `2e` is a syntax error below
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek_byte(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = save;
                return Err(ExprError::Syntax {
                    pos: save,
                    msg: "malformed exponent".into(),
                });
            }
        }
        let text = &self.src[start..self.pos];
        let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
            pos: start,
            msg: format!("malformed number '{text}'"),
        })?;
        if !v.is_finite() {
            return Err(ExprError::Syntax {
                pos: start,
                msg: format!("number '{text}' is out of range"),
            });
        }
        Ok(Token::Num(v))
    }
}

pub(super) struct Parser {
    tokens: Vec<(usize, Token)>,
    idx: usize,
    end: usize,
}

impl Parser {
    pub(super) fn parse(src: &str) -> Result<Node, ExprError> {
        let tokens = Lexer::tokenize(src)?;
        let mut p = Parser {
            tokens,
            idx: 0,
            end: src.len(),
        };
        if p.tokens.is_empty() {
            return Err(ExprError::Syntax {
                pos: 0,
                msg: "empty expression".into(),
            });
        }
        let node = p.expr()?;
        if let Some((pos, tok)) = p.tokens.get(p.idx) {
            return Err(ExprError::Syntax {
                pos: *pos,
                msg: format!("unexpected trailing token {tok:?}"),
            });
        }
        Ok(node)
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.idx).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ExprError::Syntax {
                pos,
                msg: format!("expected {what}, found {t:?}"),
            }),
            None => Err(ExprError::Syntax {
                pos,
                msg: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if let Some(Token::Op('-')) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if self.peek() == Some(&Token::LParen) {
                    self.call(&name, pos)
                } else {
                    ident_node(&name, pos)
                }
            }
            Some(t) => Err(ExprError::Syntax {
                pos,
                msg: format!("unexpected token {t:?}"),
            }),
            None => Err(ExprError::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Node, ExprError> {
        let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownIdentifier {
            pos,
            name: name.to_string(),
        })?;
        self.expect(Token::LParen, "'('")?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(&Token::Comma) {
            self.bump();
            args.push(self.expr()?);
        }
        self.expect(Token::RParen, "')'")?;
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                pos,
                name: name.to_string(),
                expected: func.arity(),
                found: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}

fn ident_node(name: &str, pos: usize) -> Result<Node, ExprError> {
    match name {
        "pi" => return Ok(Node::Const(std::f64::consts::PI)),
        "e" => return Ok(Node::Const(std::f64::consts::E)),
        _ => {}
    }
    if let Some(digits) = name.strip_prefix('x') {
        if digits.len() == 1 {
            if let Some(d) = digits.chars().next().and_then(|c| c.to_digit(10)) {
                if (1..=MAX_VARS as u32).contains(&d) {
                    return Ok(Node::Var(d as usize - 1));
                }
            }
        }
    }
    if Func::from_name(name).is_some() {
        return Err(ExprError::Syntax {
            pos,
            msg: format!("function '{name}' must be called with arguments"),
        });
    }
    Err(ExprError::UnknownIdentifier {
        pos,
        name: name.to_string(),
    })
}
