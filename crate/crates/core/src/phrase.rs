//! Penn-Treebank style bracketed trees and VP/NP phrase extraction.
//!
//! Trees are read from their bracketed form, e.g.
//! `(S (NP (NN man) (CC and) (NN woman)) (VP (VBP start) (VP (VBG dancing))))`.
//! A preterminal such as `(NN man)` is a leaf: it carries its token and has no
//! children.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub label: String,
    pub children: Vec<ParseTree>,
    pub token: Option<String>,
}

impl ParseTree {
    pub fn leaf(label: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            children: Vec::new(),
            token: Some(token.into()),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        Self {
            label: label.into(),
            children,
            token: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }

    /// Tokens at the leaves, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.token {
            Some(t) => out.push(t),
            None => self.children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn sentence(&self) -> String {
        self.leaves().join(" ")
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.token {
            Some(t) => write!(f, "({} {})", self.label, t),
            None => {
                write!(f, "({}", self.label)?;
                for c in &self.children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'(' => {
                out.push((i, Tok::Open));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::Close));
                i += 1;
            }
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                let start = i;
                while i < bytes.len()
                    && !matches!(bytes[i], b'(' | b')')
                    && !bytes[i].is_ascii_whitespace()
                {
                    i += 1;
                }
                out.push((start, Tok::Atom(&text[start..i])));
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn err(offset: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<(usize, Tok<'a>)> {
        self.toks.get(self.pos).copied()
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |(o, _)| o)
    }

    /// Parses one constituent starting at an opening bracket.
    fn constituent(&mut self) -> Result<ParseTree> {
        let open_at = match self.peek() {
            Some((o, Tok::Open)) => o,
            Some((o, _)) => return Err(Self::err(o, "expected '('")),
            None => return Err(Self::err(self.end, "unbalanced brackets: unexpected end of input")),
        };
        self.pos += 1;

        let label = match self.peek() {
            Some((_, Tok::Atom(a))) => {
                self.pos += 1;
                a.to_string()
            }
            _ => String::new(),
        };

        match self.peek() {
            Some((_, Tok::Atom(token))) => {
                self.pos += 1;
                match self.peek() {
                    Some((_, Tok::Close)) => {
                        self.pos += 1;
                        if label.is_empty() {
                            return Err(Self::err(open_at, "leaf without a label"));
                        }
                        Ok(ParseTree::leaf(label, token))
                    }
                    Some((o, _)) => Err(Self::err(o, format!("leaf `{label}` has children"))),
                    None => Err(Self::err(self.end, "unbalanced brackets: unexpected end of input")),
                }
            }
            Some((o, Tok::Close)) => Err(Self::err(o, "empty constituent")),
            Some((_, Tok::Open)) => {
                let mut children = Vec::new();
                loop {
                    match self.peek() {
                        Some((_, Tok::Open)) => children.push(self.constituent()?),
                        Some((_, Tok::Close)) => {
                            self.pos += 1;
                            break;
                        }
                        Some((o, Tok::Atom(_))) => {
                            return Err(Self::err(o, "bare token among constituents"))
                        }
                        None => {
                            return Err(Self::err(
                                self.end,
                                "unbalanced brackets: unexpected end of input",
                            ))
                        }
                    }
                }
                // PTB files wrap trees in an unlabeled root: `( (S ...) )`.
                if label.is_empty() {
                    if children.len() == 1 {
                        return Ok(children.pop().expect("one child"));
                    }
                    return Err(Self::err(open_at, "unlabeled constituent"));
                }
                Ok(ParseTree::node(label, children))
            }
            None => Err(Self::err(self.end, "unbalanced brackets: unexpected end of input")),
        }
    }
}

/// Reads one bracketed tree. Errors carry the byte offset of the problem.
pub fn parse_bracketed(text: &str) -> Result<ParseTree> {
    let mut p = Parser {
        toks: tokenize(text),
        pos: 0,
        end: text.len(),
    };
    if p.toks.is_empty() {
        return Err(Parser::err(0, "empty input"));
    }
    let tree = p.constituent()?;
    if p.pos != p.toks.len() {
        return Err(Parser::err(p.offset(), "trailing input after tree"));
    }
    Ok(tree)
}

/// Phrases extracted from one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseSet {
    pub sentence: String,
    /// Every VP span, outer before inner (pre-order).
    pub vps: Vec<String>,
    /// Maximal NP spans.
    pub nps: Vec<String>,
    /// NP–VP recombined short sentences.
    pub np_vp: Vec<String>,
    /// Indices into `vps` of the VPs not nested inside another VP.
    pub maximal_vps: Vec<usize>,
}

fn is_vp(label: &str) -> bool {
    label.starts_with("VP")
}

fn is_np(label: &str) -> bool {
    label.starts_with("NP")
}

fn walk(tree: &ParseTree, in_vp: bool, in_np: bool, ps: &mut PhraseSet) {
    if tree.is_leaf() {
        return;
    }
    let vp = is_vp(&tree.label);
    let np = is_np(&tree.label);
    if vp {
        if !in_vp {
            ps.maximal_vps.push(ps.vps.len());
        }
        ps.vps.push(tree.sentence());
    }
    if np && !in_np {
        ps.nps.push(tree.sentence());
    }
    for c in &tree.children {
        walk(c, in_vp || vp, in_np || np, ps);
    }
}

/// Extracts VP and maximal-NP spans, then fills `np_vp` via [`recombine_np_vp`].
pub fn extract_phrases(tree: &ParseTree) -> PhraseSet {
    let mut ps = PhraseSet {
        sentence: tree.sentence(),
        vps: Vec::new(),
        nps: Vec::new(),
        np_vp: Vec::new(),
        maximal_vps: Vec::new(),
    };
    // A bare preterminal like `(VB run)` is its own one-word phrase.
    if tree.is_leaf() {
        if is_vp(&tree.label) || tree.label.starts_with("VB") {
            ps.maximal_vps.push(0);
            ps.vps.push(ps.sentence.clone());
        } else if is_np(&tree.label) {
            ps.nps.push(ps.sentence.clone());
        }
    } else {
        walk(tree, false, false, &mut ps);
    }
    ps.np_vp = recombine_np_vp(&ps);
    ps
}

/// Splits a coordinated NP such as `a , b and c` into `[a, b, c]`.
fn split_coordination(np: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let mut flush = |cur: &mut Vec<&str>| {
        if !cur.is_empty() {
            parts.push(cur.join(" "));
            cur.clear();
        }
    };
    for tok in np.split_whitespace() {
        match tok {
            "," | "and" | "or" => flush(&mut cur),
            t => match t.strip_suffix(',') {
                Some(stem) => {
                    if !stem.is_empty() {
                        cur.push(stem);
                    }
                    flush(&mut cur);
                }
                None => cur.push(t),
            },
        }
    }
    flush(&mut cur);
    parts
}

/// Pairs every sub-NP of every maximal NP with every maximal VP.
pub fn recombine_np_vp(ps: &PhraseSet) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for np in &ps.nps {
        for sub in split_coordination(np) {
            for &vi in &ps.maximal_vps {
                let s = format!("{sub} {}", ps.vps[vi]);
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
    }
    out
}
