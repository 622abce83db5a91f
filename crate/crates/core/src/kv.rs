//! Line-oriented `key: value` documents.
//!
//! The same grammar backs `.morph` robot files and run configuration files:
//!
//! ```text
//! # comment
//! key: value
//! joint hip:          # block header, owns the indented pairs below it
//!   axis: (1, 0, 0)
//! [section]           # config files only
//! key: value
//! ```
//!
//! Values are kept as raw text; typed accessors report failures with the
//! line and column of the offending value.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid value for `{path}`: {message}")]
    Semantic { path: String, message: String },
    #[error("duplicate joint name `{0}`")]
    DuplicateJoint(String),
}

impl ParseError {
    pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn semantic(path: impl Into<String>, message: impl Into<String>) -> Self {
        ParseError::Semantic {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// A single `key: value` line. `line` and `column` are 1-based and point at
/// the first character of the value.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub key: String,
    pub value: String,
    pub line: usize,
    pub column: usize,
}

/// `<kind> <name>:` followed by indented pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kind: String,
    pub name: String,
    pub line: usize,
    pub pairs: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub pairs: Vec<Pair>,
    pub blocks: Vec<Block>,
}

/// Parsed document. Content before the first `[section]` header lives in
/// `root`, whose name is empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    pub root: Section,
    pub sections: Vec<Section>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Names of joints, robots and sections may also contain `-` and `.`, and
/// may start with a digit.
pub(crate) fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn parse_document(text: &str) -> Result<Document, ParseError> {
    let mut doc = Document::default();
    let mut in_block = false;

    for (index, raw) in text.lines().enumerate() {
        let line_no = index + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let content = content.trim_end();
        if content.trim().is_empty() {
            continue;
        }
        let indented = content.starts_with([' ', '\t']);
        let body = content.trim_start();
        let indent = content.len() - body.len();
        let section = doc.sections.last_mut().unwrap_or(&mut doc.root);

        if !indented && body.starts_with('[') {
            if !body.ends_with(']') {
                return Err(ParseError::syntax(line_no, body.len(), "expected `]`"));
            }
            let name = body[1..body.len() - 1].trim();
            if !is_name(name) {
                return Err(ParseError::syntax(line_no, 2, "invalid section name"));
            }
            doc.sections.push(Section {
                name: name.to_string(),
                line: line_no,
                ..Section::default()
            });
            in_block = false;
            continue;
        }

        let colon = body
            .find(':')
            .ok_or_else(|| ParseError::syntax(line_no, indent + 1, "expected `key: value`"))?;
        let key = body[..colon].trim_end();
        let value = body[colon + 1..].trim();
        let value_column = indent + colon + 2 + (body[colon + 1..].len() - body[colon + 1..].trim_start().len());

        if indented {
            if !in_block {
                return Err(ParseError::syntax(
                    line_no,
                    1,
                    "indented line outside of a block",
                ));
            }
            if !is_identifier(key) {
                return Err(ParseError::syntax(line_no, indent + 1, format!("invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(ParseError::syntax(line_no, value_column, "missing value"));
            }
            let block = section.blocks.last_mut().expect("in_block implies a block");
            block.pairs.push(Pair {
                key: key.to_string(),
                value: value.to_string(),
                line: line_no,
                column: value_column,
            });
            continue;
        }

        if value.is_empty() {
            // `<kind> <name>:` opens a block.
            let mut words = key.split_whitespace();
            let (Some(kind), Some(name), None) = (words.next(), words.next(), words.next()) else {
                return Err(ParseError::syntax(line_no, value_column, "missing value"));
            };
            if !is_identifier(kind) {
                return Err(ParseError::syntax(line_no, 1, format!("invalid block kind `{kind}`")));
            }
            if !is_name(name) {
                return Err(ParseError::syntax(
                    line_no,
                    kind.len() + 2,
                    format!("invalid name `{name}`"),
                ));
            }
            section.blocks.push(Block {
                kind: kind.to_string(),
                name: name.to_string(),
                line: line_no,
                pairs: Vec::new(),
            });
            in_block = true;
            continue;
        }

        if !is_identifier(key) {
            return Err(ParseError::syntax(line_no, 1, format!("invalid key `{key}`")));
        }
        section.pairs.push(Pair {
            key: key.to_string(),
            value: value.to_string(),
            line: line_no,
            column: value_column,
        });
        in_block = false;
    }
    Ok(doc)
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Pair> {
        self.pairs.iter().find(|p| p.key == key)
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Pair> + 'a {
        self.pairs.iter().filter(move |p| p.key == key)
    }
}

impl Document {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

impl Pair {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError::syntax(self.line, self.column, message)
    }

    pub fn as_f64(&self) -> Result<f64, ParseError> {
        parse_number(&self.value).map_err(|m| self.error(m))
    }

    pub fn as_u64(&self) -> Result<u64, ParseError> {
        self.value
            .parse::<u64>()
            .map_err(|_| self.error(format!("expected a non-negative integer, got `{}`", self.value)))
    }

    pub fn as_usize(&self) -> Result<usize, ParseError> {
        self.as_u64().map(|v| v as usize)
    }

    pub fn as_bool(&self) -> Result<bool, ParseError> {
        match self.value.as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(self.error(format!("expected `true` or `false`, got `{other}`"))),
        }
    }

    pub fn as_tuple(&self, n: usize) -> Result<Vec<f64>, ParseError> {
        let v = self.value.as_str();
        if !(v.starts_with('(') && v.ends_with(')')) {
            return Err(self.error(format!("expected a {n}-tuple `(..)`")));
        }
        let parts: Vec<&str> = v[1..v.len() - 1].split(',').map(str::trim).collect();
        if parts.len() != n {
            return Err(self.error(format!("expected {n} components, got {}", parts.len())));
        }
        parts
            .iter()
            .map(|p| parse_number(p).map_err(|m| self.error(m)))
            .collect()
    }

    pub fn as_vec3(&self) -> Result<[f64; 3], ParseError> {
        let v = self.as_tuple(3)?;
        Ok([v[0], v[1], v[2]])
    }

    pub fn as_pair(&self) -> Result<(f64, f64), ParseError> {
        let v = self.as_tuple(2)?;
        Ok((v[0], v[1]))
    }
}

fn parse_number(s: &str) -> Result<f64, String> {
    let ok_chars = !s.is_empty()
        && s
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '+' | '-' | '.' | 'e' | 'E'));
    match s.parse::<f64>() {
        Ok(v) if ok_chars && v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, got `{s}`")),
    }
}

/// Canonical float text: the shortest representation that parses back to
/// the identical `f64`.
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.0;
        let a = v.abs();
        if v != 0.0 && !(1e-5..1e16).contains(&a) {
            write!(f, "{v:e}")
        } else {
            write!(f, "{v}")
        }
    }
}

pub struct Tuple<'a>(pub &'a [f64]);

impl fmt::Display for Tuple<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}", Num(*v))?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_blocks_and_sections() {
        let text = "a: 1 # trailing\n\njoint j0:\n  x: (1, 2, 3)\n[train]\nseed: 7\n";
        let doc = parse_document(text).unwrap();
        assert_eq!(doc.root.pairs.len(), 1);
        assert_eq!(doc.root.blocks[0].name, "j0");
        assert_eq!(doc.root.blocks[0].pairs[0].as_vec3().unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(doc.section("train").unwrap().get("seed").unwrap().as_u64().unwrap(), 7);
    }

    #[test]
    fn indented_line_without_block_is_syntax_error() {
        let err = parse_document("a: 1\n  b: 2\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 2, .. }));
    }

    #[test]
    fn value_errors_carry_position() {
        let doc = parse_document("mass:   abc\n").unwrap();
        let err = doc.root.pairs[0].as_f64().unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax {
                line: 1,
                column: 9,
                message: "expected a finite number, got `abc`".into()
            }
        );
    }

    #[test]
    fn rejects_non_finite_numbers() {
        let doc = parse_document("a: inf\nb: NaN\n").unwrap();
        assert!(doc.root.pairs[0].as_f64().is_err());
        assert!(doc.root.pairs[1].as_f64().is_err());
    }

    #[test]
    fn num_round_trips() {
        for v in [0.0, -0.0, 1.0, 0.1, 1e-7, 123456789.123, 5e300, -2.5e-300, f64::MIN_POSITIVE] {
            let s = Num(v).to_string();
            assert_eq!(parse_number(&s).unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(Num(20.0).to_string(), "20");
        assert_eq!(Num(0.05).to_string(), "0.05");
    }
}
