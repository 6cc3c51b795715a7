//! Infix text form of expression trees.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '×' | '·') unary)*
//! unary  := ('-' | '−') unary | power
//! power  := atom ('^' integer)?
//! atom   := number | name | '(' expr ')'
//! ```
//!
//! Subtraction and negation are lowered onto the `{+, ×}` node set:
//! `a - b` becomes `a + (-1) × b`, and a negated literal becomes a negative
//! constant. `e^n` expands to an `n`-fold product.

use super::{ExprError, ExprTree, Node};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, ch) = chars[i];
        match ch {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push((pos, Tok::Plus));
                i += 1
            }
            '-' | '−' => {
                out.push((pos, Tok::Minus));
                i += 1
            }
            '*' | '×' | '·' => {
                out.push((pos, Tok::Star));
                i += 1
            }
            '^' => {
                out.push((pos, Tok::Caret));
                i += 1
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                // Optional exponent: e.g. 1e-7, 2.5E+3.
                if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        while j < chars.len() && chars[j].1.is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| ExprError::Parse { position: pos, message: format!("invalid number `{s}`") })?;
                out.push((pos, Tok::Num(v)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                out.push((pos, Tok::Name(s)));
            }
            other => {
                return Err(ExprError::Parse { position: pos, message: format!("unexpected character `{other}`") });
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse { position: self.pos(), message: message.into() })
    }

    fn expr(&mut self) -> Result<ExprTree, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.at += 1;
                    let rhs = self.term()?;
                    acc = ExprTree::add(acc, rhs);
                }
                Some(Tok::Minus) => {
                    self.at += 1;
                    let rhs = self.term()?;
                    acc = ExprTree::add(acc, negate(rhs));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<ExprTree, ExprError> {
        let mut acc = self.unary()?;
        while let Some(Tok::Star) = self.peek() {
            self.at += 1;
            let rhs = self.unary()?;
            acc = ExprTree::mul(acc, rhs);
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<ExprTree, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            self.at += 1;
            let inner = self.unary()?;
            return Ok(negate(inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprTree, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.at += 1;
            let n = match self.peek() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && *v >= 1.0 && *v <= 64.0 => *v as usize,
                _ => return self.err("exponent must be an integer between 1 and 64"),
            };
            self.at += 1;
            let mut acc = base.clone();
            for _ in 1..n {
                acc = ExprTree::mul(acc, base.clone());
            }
            return Ok(acc);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ExprTree, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(ExprTree::constant(v))
            }
            Some(Tok::Name(name)) => match self.names.iter().position(|n| *n == name) {
                Some(j) => {
                    self.at += 1;
                    Ok(ExprTree::variable(j))
                }
                None => self.err(format!("unknown variable `{name}`")),
            },
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.at += 1;
                        Ok(inner)
                    }
                    _ => self.err("expected `)`"),
                }
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

fn negate(t: ExprTree) -> ExprTree {
    match t.nodes() {
        [Node::Const(c)] => ExprTree::constant(-c),
        _ => ExprTree::mul(ExprTree::constant(-1.0), t),
    }
}

/// Parses infix text; variable names resolve to their position in `names`.
pub fn parse(text: &str, names: &[String]) -> Result<ExprTree, ExprError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, end: text.len(), names };
    let tree = p.expr()?;
    if p.at != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(tree)
}

/// Generic variable names `x0, x1, …`.
pub fn default_names(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("x{i}")).collect()
}

/// Full-precision infix form. `parse(to_infix(t))` evaluates identically to `t`.
pub fn to_infix(tree: &ExprTree, names: &[String]) -> String {
    let mut out = String::new();
    let mut i = 0;
    write_node(tree.nodes(), &mut i, names, &mut out, true);
    out
}

fn write_node(nodes: &[Node], i: &mut usize, names: &[String], out: &mut String, root: bool) {
    let node = nodes[*i];
    *i += 1;
    match node {
        Node::Const(c) => {
            if c < 0.0 && !root {
                out.push('(');
                out.push_str(&format!("{c:?}"));
                out.push(')');
            } else {
                out.push_str(&format!("{c:?}"));
            }
        }
        Node::Var(j) => match names.get(j as usize) {
            Some(n) => out.push_str(n),
            None => out.push_str(&format!("x{j}")),
        },
        op => {
            if !root {
                out.push('(');
            }
            write_node(nodes, i, names, out, false);
            out.push_str(if matches!(op, Node::Add) { " + " } else { " * " });
            write_node(nodes, i, names, out, false);
            if !root {
                out.push(')');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_table_style_expression() {
        let t = parse("x + 0.191*y", &names(&["x", "y"])).unwrap();
        assert!((t.eval(&[0.0, 1.0]) - 0.191).abs() < 1e-15);
    }

    #[test]
    fn zero_round_trips() {
        let n = names(&["x"]);
        let t = parse("0", &n).unwrap();
        let back = parse(&to_infix(&t, &n), &n).unwrap();
        assert_eq!(back.eval(&[3.0]), 0.0);
    }

    #[test]
    fn subtraction_lowers_to_negative_product() {
        let n = default_names(2);
        let t = parse("x0 × (3 − x1)", &n).unwrap();
        assert_eq!(t.eval(&[1.0, 1.0]), 2.0);
        assert_eq!(t.eval(&[0.0, 1.0]), 0.0);
        assert!(t.constants().contains(&-1.0));
    }

    #[test]
    fn powers_and_unary_minus() {
        let n = names(&["x"]);
        let t = parse("x - x^3", &n).unwrap();
        assert_eq!(t.eval(&[2.0]), -6.0);
        let u = parse("-(x + 1) * -2", &n).unwrap();
        assert_eq!(u.eval(&[1.0]), 4.0);
        let e = parse("1e-3*x + 2.5E+1", &n).unwrap();
        assert!((e.eval(&[1000.0]) - 26.0).abs() < 1e-12);
    }

    #[test]
    fn errors_carry_position() {
        let n = names(&["x"]);
        match parse("x + * 2", &n) {
            Err(ExprError::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x + y", &n) {
            Err(ExprError::Parse { position, message }) => {
                assert_eq!(position, 4);
                assert!(message.contains('y'));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse("(x + 1", &n).is_err());
        assert!(parse("x 1", &n).is_err());
        assert!(parse("x ^ 0.5", &n).is_err());
        assert!(parse("", &n).is_err());
    }

    #[test]
    fn infix_prints_negative_constants_parseably() {
        let n = names(&["x"]);
        let t = ExprTree::mul(ExprTree::constant(-0.5), ExprTree::variable(0));
        let s = to_infix(&t, &n);
        assert_eq!(s, "(-0.5) * x");
        assert_eq!(parse(&s, &n).unwrap(), t);
    }
}
