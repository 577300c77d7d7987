//! Deterministic text form of a tree, one node per line:
//!
//! ```text
//! (split depth=0 var=0 value=4.0000000000000000e-1
//!   (leaf depth=1 sigma2=... tau2=... ...)
//!   (leaf depth=1 sigma2=... tau2=... ...))
//! ```
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which reads back to the same `f64`.

use std::collections::HashMap;
use std::fmt::Write;

use nalgebra::DVector;

use super::{Node, SplitRule, Tree};
use crate::error::{Result, TgpError};
use crate::kernel::{CorrFamily, CorrParams};
use crate::leaf_gp::LeafParams;

/// Leaf payloads with a `key=value` text form.
pub trait LeafText: Sized {
    fn fields(&self) -> Vec<(&'static str, String)>;
    fn from_fields(fields: &HashMap<String, String>) -> Result<Self>;
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}

fn field<'a>(fields: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    fields
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| TgpError::Parse(format!("missing field `{key}`")))
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| TgpError::Parse(format!("not a number: `{s}`")))
}

pub fn parse_vec(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_f64).collect()
}

impl LeafText for () {
    fn fields(&self) -> Vec<(&'static str, String)> {
        Vec::new()
    }

    fn from_fields(_: &HashMap<String, String>) -> Result<Self> {
        Ok(())
    }
}

impl LeafText for LeafParams {
    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sigma2", fmt_f64(self.sigma2)),
            ("tau2", fmt_f64(self.tau2)),
            ("family", self.corr.family.name().to_string()),
            ("power", fmt_f64(self.corr.power)),
            ("nugget", fmt_f64(self.corr.nugget)),
            ("range", fmt_vec(&self.corr.range)),
            ("beta", fmt_vec(self.beta.as_slice())),
        ]
    }

    /// Rows are not stored; they are recovered by partitioning the data.
    fn from_fields(f: &HashMap<String, String>) -> Result<Self> {
        let family_name = field(f, "family")?;
        let family = CorrFamily::parse(family_name)
            .ok_or_else(|| TgpError::Parse(format!("unknown family `{family_name}`")))?;
        let corr = CorrParams {
            family,
            range: parse_vec(field(f, "range")?)?,
            nugget: parse_f64(field(f, "nugget")?)?,
            power: parse_f64(field(f, "power")?)?,
        };
        corr.validate()?;
        Ok(LeafParams {
            rows: Vec::new(),
            beta: DVector::from_vec(parse_vec(field(f, "beta")?)?),
            sigma2: parse_f64(field(f, "sigma2")?)?,
            tau2: parse_f64(field(f, "tau2")?)?,
            corr,
        })
    }
}

pub fn to_text<L: LeafText>(tree: &Tree<L>) -> String {
    let mut out = String::new();
    write_node(tree.root(), 0, &mut out);
    out.push('\n');
    out
}

fn write_node<L: LeafText>(node: &Node<L>, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    match node {
        Node::Leaf(l) => {
            let _ = write!(out, "{indent}(leaf depth={depth}");
            for (k, v) in l.fields() {
                let _ = write!(out, " {k}={v}");
            }
            out.push(')');
        }
        Node::Split { rule, left, right } => {
            let _ = writeln!(
                out,
                "{indent}(split depth={depth} var={} value={}",
                rule.var,
                fmt_f64(rule.value)
            );
            write_node(left, depth + 1, out);
            out.push('\n');
            write_node(right, depth + 1, out);
            out.push(')');
        }
    }
}

#[derive(Debug, PartialEq)]
enum Token {
    Open,
    Close,
    Word(String),
}

fn tokenize(s: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Token>| {
        if !word.is_empty() {
            out.push(Token::Word(std::mem::take(word)));
        }
    };
    for c in s.chars() {
        match c {
            '(' => {
                flush(&mut word, &mut out);
                out.push(Token::Open);
            }
            ')' => {
                flush(&mut word, &mut out);
                out.push(Token::Close);
            }
            c if c.is_whitespace() => flush(&mut word, &mut out),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut out);
    out
}

pub fn from_text<L: LeafText>(s: &str) -> Result<Tree<L>> {
    let tokens = tokenize(s);
    let mut pos = 0;
    let root = parse_node(&tokens, &mut pos, 0)?;
    if pos != tokens.len() {
        return Err(TgpError::Parse("trailing text after tree".into()));
    }
    Ok(Tree::from_root(root))
}

fn parse_node<L: LeafText>(tokens: &[Token], pos: &mut usize, depth: usize) -> Result<Node<L>> {
    if tokens.get(*pos) != Some(&Token::Open) {
        return Err(TgpError::Parse(format!("expected `(` at token {}", *pos)));
    }
    *pos += 1;
    let kind = match tokens.get(*pos) {
        Some(Token::Word(w)) => w.clone(),
        _ => return Err(TgpError::Parse("expected node kind".into())),
    };
    *pos += 1;
    let mut fields = HashMap::new();
    while let Some(Token::Word(w)) = tokens.get(*pos) {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| TgpError::Parse(format!("expected key=value, got `{w}`")))?;
        fields.insert(k.to_string(), v.to_string());
        *pos += 1;
    }
    let stated: usize = field(&fields, "depth")?
        .parse()
        .map_err(|_| TgpError::Parse("bad depth".into()))?;
    if stated != depth {
        return Err(TgpError::Parse(format!(
            "node claims depth {stated} but sits at depth {depth}"
        )));
    }
    let node = match kind.as_str() {
        "leaf" => Node::Leaf(L::from_fields(&fields)?),
        "split" => {
            let var = field(&fields, "var")?
                .parse()
                .map_err(|_| TgpError::Parse("bad split variable".into()))?;
            let value = parse_f64(field(&fields, "value")?)?;
            let left = parse_node(tokens, pos, depth + 1)?;
            let right = parse_node(tokens, pos, depth + 1)?;
            Node::split(SplitRule { var, value }, left, right)
        }
        other => return Err(TgpError::Parse(format!("unknown node kind `{other}`"))),
    };
    if tokens.get(*pos) != Some(&Token::Close) {
        return Err(TgpError::Parse(format!("expected `)` at token {}", *pos)));
    }
    *pos += 1;
    Ok(node)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: Vec<f64>, d: f64) -> LeafParams {
        LeafParams {
            rows: Vec::new(),
            beta: DVector::from_vec(beta),
            sigma2: 0.1 + d,
            tau2: 1.0 / 3.0,
            corr: CorrParams::separable(vec![d, 2.0 * d], 0.012345678901234567, 1.5).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let tree = Tree::from_root(Node::split(
            SplitRule { var: 1, value: 0.1 + 0.2 },
            Node::Leaf(params(vec![1.0, -2.5e-7, std::f64::consts::PI], 0.3)),
            Node::split(
                SplitRule { var: 0, value: 1.0 / 7.0 },
                Node::Leaf(params(vec![0.0, 1e300, -1e-300], 0.7)),
                Node::Leaf(params(vec![3.0, 4.0, 5.0], 1.1)),
            ),
        ));
        let text = to_text(&tree);
        let back: Tree<LeafParams> = from_text(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(to_text(&back), text);
    }

    #[test]
    fn layout_is_stable() {
        let tree = Tree::from_root(Node::split(
            SplitRule { var: 0, value: 0.5 },
            Node::Leaf(()),
            Node::Leaf(()),
        ));
        assert_eq!(
            to_text(&tree),
            "(split depth=0 var=0 value=5.0000000000000000e-1\n  (leaf depth=1)\n  (leaf depth=1))\n"
        );
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(from_text::<()>("(leaf depth=1)").is_err());
        assert!(from_text::<()>("(split depth=0 var=0 value=1 (leaf depth=1))").is_err());
        assert!(from_text::<()>("(leaf depth=0) extra").is_err());
        assert!(from_text::<()>("(twig depth=0)").is_err());
    }
}
