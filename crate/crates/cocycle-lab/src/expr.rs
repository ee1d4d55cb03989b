//! Minimal closed-form expression grammar for user cocycles.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := '-' factor | primary
//! primary := NUMBER | 'x1' | 'x2' | 'pi' | 'sin' '(' expr ')'
//!          | 'cos' '(' expr ')' | '(' expr ')'
//! ```
//!
//! Evaluation is a pure function of the torus coordinates, so parsed
//! expressions are safe to share across worker threads.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{0}' at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected '{expected}' at byte {at}")]
    Expected { expected: char, at: usize },
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("malformed number '{0}'")]
    BadNumber(String),
    #[error("trailing input at byte {0}")]
    TrailingInput(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X1,
    X2,
    Pi,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(src)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(ExprError::TrailingInput(parser.tokens[parser.pos].1));
        }
        Ok(expr)
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X1 => x1,
            Expr::X2 => x2,
            Expr::Pi => std::f64::consts::PI,
            Expr::Neg(e) => -e.eval(x1, x2),
            Expr::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Expr::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Expr::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Expr::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Expr::Sin(e) => e.eval(x1, x2).sin(),
            Expr::Cos(e) => e.eval(x1, x2).cos(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                tokens.push((Token::Plus, i));
                i += 1;
            }
            '-' => {
                tokens.push((Token::Minus, i));
                i += 1;
            }
            '*' => {
                tokens.push((Token::Star, i));
                i += 1;
            }
            '/' => {
                tokens.push((Token::Slash, i));
                i += 1;
            }
            '(' => {
                tokens.push((Token::LParen, i));
                i += 1;
            }
            ')' => {
                tokens.push((Token::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'+' || bytes[i] == b'-')
                            && i > start
                            && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')))
                {
                    i += 1;
                }
                let text = &src[start..i];
                let value: f64 = text
                    .parse()
                    .map_err(|_| ExprError::BadNumber(text.to_string()))?;
                tokens.push((Token::Num(value), start));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                tokens.push((Token::Ident(src[start..i].to_string()), start));
            }
            _ => return Err(ExprError::UnexpectedChar(c, i)),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<Token, ExprError> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(tok.0)
    }

    fn expect(&mut self, want: Token, symbol: char) -> Result<(), ExprError> {
        let at = self
            .tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(usize::MAX);
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Expected {
                expected: symbol,
                at,
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        match self.next()? {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::LParen => {
                let inner = self.expr()?;
                self.expect(Token::RParen, ')')?;
                Ok(inner)
            }
            Token::Ident(name) => match name.as_str() {
                "x1" => Ok(Expr::X1),
                "x2" => Ok(Expr::X2),
                "pi" => Ok(Expr::Pi),
                "sin" => {
                    self.expect(Token::LParen, '(')?;
                    let inner = self.expr()?;
                    self.expect(Token::RParen, ')')?;
                    Ok(Expr::Sin(Box::new(inner)))
                }
                "cos" => {
                    self.expect(Token::LParen, '(')?;
                    let inner = self.expr()?;
                    self.expect(Token::RParen, ')')?;
                    Ok(Expr::Cos(Box::new(inner)))
                }
                _ => Err(ExprError::UnknownIdentifier(name)),
            },
            Token::Plus | Token::Minus | Token::Star | Token::Slash | Token::RParen => {
                Err(ExprError::UnexpectedEnd)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_evaluates() {
        let e = Expr::parse("1 + 0.1*cos(2*pi*x1)").unwrap();
        let got = e.eval(0.25, 0.9);
        let want = 1.0 + 0.1 * (2.0 * std::f64::consts::PI * 0.25).cos();
        assert!((got - want).abs() < 1e-15);

        let e = Expr::parse("-x2/2 + sin(x1 - 3e-1)").unwrap();
        let got = e.eval(0.5, 0.25);
        assert!((got - (-0.125 + (0.5f64 - 0.3).sin())).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = Expr::parse("2 + 3 * 4").unwrap();
        assert_eq!(e.eval(0.0, 0.0), 14.0);
        let e = Expr::parse("-(2 + 3) * 4").unwrap();
        assert_eq!(e.eval(0.0, 0.0), -20.0);
        let e = Expr::parse("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(0.0, 0.0), -4.0);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(Expr::parse("1 + "), Err(ExprError::UnexpectedEnd)));
        assert!(matches!(
            Expr::parse("foo(3)"),
            Err(ExprError::UnknownIdentifier(_))
        ));
        assert!(matches!(
            Expr::parse("sin 3"),
            Err(ExprError::Expected { .. })
        ));
        assert!(matches!(
            Expr::parse("1 2"),
            Err(ExprError::TrailingInput(_))
        ));
        assert!(matches!(
            Expr::parse("x1 @ 2"),
            Err(ExprError::UnexpectedChar('@', _))
        ));
    }
}
