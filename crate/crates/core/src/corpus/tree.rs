use std::fmt;

use thiserror::Error;

use super::TrainingUnit;

pub const NUM_LABELS: u8 = 5;

/// Sentiment-labelled constituency tree. Leaves carry a token, internal
/// nodes carry at least one child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    pub label: u8,
    pub content: TreeContent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeContent {
    Leaf(String),
    Children(Vec<LabeledTree>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedEnd,
    Expected(char),
    InvalidLabel(String),
    LabelOutOfRange(i64),
    EmptyNode,
    TrailingInput,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::Expected(c) => write!(f, "expected '{c}'"),
            ParseErrorKind::InvalidLabel(s) => write!(f, "label {s:?} is not an integer"),
            ParseErrorKind::LabelOutOfRange(v) => write!(f, "label {v} outside 0..4"),
            ParseErrorKind::EmptyNode => write!(f, "node has neither token nor children"),
            ParseErrorKind::TrailingInput => write!(f, "trailing input after tree"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Which nodes of a tree become training units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitMode {
    SentencesOnly,
    PhrasesAndSentences,
}

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

fn is_token_byte(b: u8) -> bool {
    !(b.is_ascii_whitespace() || b == b'(' || b == b')')
}

impl<'a> Parser<'a> {
    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(_) => Err(self.err(ParseErrorKind::Expected(c as char))),
            None => Err(self.err(ParseErrorKind::UnexpectedEnd)),
        }
    }

    fn token(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.src.len() && is_token_byte(self.src[self.pos]) {
            self.pos += 1;
        }
        &self.text[start..self.pos]
    }

    fn tree(&mut self) -> Result<LabeledTree, ParseError> {
        self.expect(b'(')?;
        self.skip_ws();
        let label_at = self.pos;
        let raw = self.token();
        if raw.is_empty() {
            return Err(match self.peek() {
                None => self.err(ParseErrorKind::UnexpectedEnd),
                Some(_) => self.err(ParseErrorKind::EmptyNode),
            });
        }
        let value: i64 = raw.parse().map_err(|_| ParseError {
            offset: label_at,
            kind: ParseErrorKind::InvalidLabel(raw.to_string()),
        })?;
        if !(0..NUM_LABELS as i64).contains(&value) {
            return Err(ParseError {
                offset: label_at,
                kind: ParseErrorKind::LabelOutOfRange(value),
            });
        }
        let label = value as u8;

        self.skip_ws();
        let content = match self.peek() {
            None => return Err(self.err(ParseErrorKind::UnexpectedEnd)),
            Some(b')') => return Err(self.err(ParseErrorKind::EmptyNode)),
            Some(b'(') => {
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(b'(') => children.push(self.tree()?),
                        _ => break,
                    }
                }
                TreeContent::Children(children)
            }
            Some(_) => TreeContent::Leaf(self.token().to_string()),
        };
        self.expect(b')')?;
        Ok(LabeledTree { label, content })
    }
}

impl LabeledTree {
    pub fn leaf(label: u8, token: impl Into<String>) -> Self {
        LabeledTree {
            label,
            content: TreeContent::Leaf(token.into()),
        }
    }

    pub fn node(label: u8, children: Vec<LabeledTree>) -> Self {
        LabeledTree {
            label,
            content: TreeContent::Children(children),
        }
    }

    /// Parses one `(LABEL TOKEN)` / `(LABEL TREE+)` s-expression.
    pub fn parse(line: &str) -> Result<Self, ParseError> {
        let mut p = Parser {
            src: line.as_bytes(),
            text: line,
            pos: 0,
        };
        let tree = p.tree()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err(ParseErrorKind::TrailingInput));
        }
        Ok(tree)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        out.push('(');
        out.push((b'0' + self.label) as char);
        match &self.content {
            TreeContent::Leaf(tok) => {
                out.push(' ');
                out.push_str(tok);
            }
            TreeContent::Children(children) => {
                for c in children {
                    out.push(' ');
                    c.render_into(out);
                }
            }
        }
        out.push(')');
    }

    /// Leaf tokens in surface order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'t>(&'t self, out: &mut Vec<&'t str>) {
        match &self.content {
            TreeContent::Leaf(tok) => out.push(tok),
            TreeContent::Children(children) => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match &self.content {
            TreeContent::Leaf(_) => 1,
            TreeContent::Children(children) => {
                1 + children.iter().map(Self::node_count).sum::<usize>()
            }
        }
    }

    /// Training units for this tree. In phrase mode every node yields a unit
    /// (pre-order, root first); duplicates are kept.
    pub fn training_units(&self, mode: UnitMode) -> Vec<TrainingUnit> {
        let root = TrainingUnit {
            tokens: self.leaves().into_iter().map(str::to_string).collect(),
            label: self.label,
            is_full_sentence: true,
        };
        match mode {
            UnitMode::SentencesOnly => vec![root],
            UnitMode::PhrasesAndSentences => {
                let mut units = vec![root];
                if let TreeContent::Children(children) = &self.content {
                    for c in children {
                        c.push_phrases(&mut units);
                    }
                }
                units
            }
        }
    }

    fn push_phrases(&self, units: &mut Vec<TrainingUnit>) {
        units.push(TrainingUnit {
            tokens: self.leaves().into_iter().map(str::to_string).collect(),
            label: self.label,
            is_full_sentence: false,
        });
        if let TreeContent::Children(children) = &self.content {
            for c in children {
                c.push_phrases(units);
            }
        }
    }
}

/// Parses every non-blank line; the error carries the 1-based line number.
pub fn parse_treebank(text: &str) -> Result<Vec<LabeledTree>, (usize, ParseError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LabeledTree::parse(l).map_err(|e| (i + 1, e)))
        .collect()
}
