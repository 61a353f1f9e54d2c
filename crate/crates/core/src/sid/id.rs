use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Five-token POI identifier: two geographic cell tokens followed by three
/// hierarchical cluster tokens. Renders as `<m_M><n_N><a_A><b_B><c_C>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SemanticId {
    pub m: u32,
    pub n: u32,
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

impl SemanticId {
    pub const PREFIXES: [char; 5] = ['m', 'n', 'a', 'b', 'c'];

    pub fn new(m: u32, n: u32, a: u32, b: u32, c: u32) -> Self {
        SemanticId { m, n, a, b, c }
    }

    pub fn tokens(&self) -> [u32; 5] {
        [self.m, self.n, self.a, self.b, self.c]
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<m_{}><n_{}><a_{}><b_{}><c_{}>", self.m, self.n, self.a, self.b, self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SidParseError {
    #[error("empty semantic id")]
    Empty,
    #[error("missing geo prefix: semantic id starts at <{0}_..> instead of <m_..>")]
    MissingGeoPrefix(char),
    #[error("token {position} is out of order: expected <{expected}_..>, found <{found}_..>")]
    WrongOrder { position: usize, expected: char, found: char },
    #[error("malformed token at byte {offset}")]
    MalformedToken { offset: usize },
    #[error("semantic id ends after {0} of 5 tokens")]
    Truncated(usize),
    #[error("unexpected trailing input at byte {0}")]
    TrailingInput(usize),
    #[error("token <{prefix}_{index}> is not in the codebook vocabulary")]
    UnknownIndex { prefix: char, index: u32 },
}

/// Strict parser for `<m_\d+><n_\d+><a_\d+><b_\d+><c_\d+>`; no whitespace.
pub fn parse_sid(text: &str) -> Result<SemanticId, SidParseError> {
    if text.is_empty() {
        return Err(SidParseError::Empty);
    }
    let bytes = text.as_bytes();
    let mut pos = 0;
    let mut vals = [0u32; 5];
    for (i, &expected) in SemanticId::PREFIXES.iter().enumerate() {
        if pos == bytes.len() {
            return Err(SidParseError::Truncated(i));
        }
        let (prefix, value, next) = token(bytes, pos)?;
        if prefix != expected {
            if i == 0 && matches!(prefix, 'a' | 'b' | 'c') {
                return Err(SidParseError::MissingGeoPrefix(prefix));
            }
            return Err(SidParseError::WrongOrder { position: i, expected, found: prefix });
        }
        vals[i] = value;
        pos = next;
    }
    if pos != bytes.len() {
        return Err(SidParseError::TrailingInput(pos));
    }
    Ok(SemanticId::new(vals[0], vals[1], vals[2], vals[3], vals[4]))
}

/// Reads `<x_digits>` at `start`; returns (prefix, value, end offset).
fn token(bytes: &[u8], start: usize) -> Result<(char, u32, usize), SidParseError> {
    let bad = SidParseError::MalformedToken { offset: start };
    if bytes.len() < start + 5 || bytes[start] != b'<' || bytes[start + 2] != b'_' {
        return Err(bad);
    }
    let prefix = bytes[start + 1];
    if !prefix.is_ascii_lowercase() {
        return Err(bad);
    }
    let digits_start = start + 3;
    let mut end = digits_start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == digits_start || end >= bytes.len() || bytes[end] != b'>' {
        return Err(bad);
    }
    let digits = std::str::from_utf8(&bytes[digits_start..end]).expect("ascii digits");
    let value = digits.parse::<u32>().map_err(|_| bad)?;
    Ok((prefix as char, value, end + 1))
}

impl FromStr for SemanticId {
    type Err = SidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_sid(s)
    }
}

impl Serialize for SemanticId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SemanticId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_sid(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_reference_example() {
        assert_eq!(parse_sid("<m_152><n_175><a_0><b_22><c_0>").unwrap(), SemanticId::new(152, 175, 0, 22, 0));
    }

    #[test]
    fn three_token_form_lacks_geo_prefix() {
        assert_eq!(parse_sid("<a_29><b_31><c_20>"), Err(SidParseError::MissingGeoPrefix('a')));
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(parse_sid(""), Err(SidParseError::Empty));
    }

    #[test]
    fn error_variants_are_distinct() {
        assert!(matches!(parse_sid("<n_1><m_1><a_0><b_0><c_0>"), Err(SidParseError::WrongOrder { position: 0, expected: 'm', found: 'n' })));
        assert!(matches!(parse_sid("<m_1><n_1><a_0><c_0><b_0>"), Err(SidParseError::WrongOrder { position: 3, .. })));
        assert!(matches!(parse_sid("<m_1><n_x><a_0><b_0><c_0>"), Err(SidParseError::MalformedToken { offset: 5 })));
        assert!(matches!(parse_sid("<m_1><n_1><a_0>"), Err(SidParseError::Truncated(3))));
        assert!(matches!(parse_sid("<m_1><n_1><a_0><b_0><c_0> "), Err(SidParseError::TrailingInput(25))));
        assert!(matches!(parse_sid(" <m_1><n_1><a_0><b_0><c_0>"), Err(SidParseError::MalformedToken { offset: 0 })));
        assert!(matches!(parse_sid("<m_99999999999><n_1><a_0><b_0><c_0>"), Err(SidParseError::MalformedToken { .. })));
        assert!(matches!(parse_sid("<m_><n_1><a_0><b_0><c_0>"), Err(SidParseError::MalformedToken { .. })));
    }

    #[test]
    fn serde_uses_rendered_form() {
        let sid = SemanticId::new(1, 2, 3, 4, 5);
        let json = serde_json::to_string(&sid).unwrap();
        assert_eq!(json, "\"<m_1><n_2><a_3><b_4><c_5>\"");
        assert_eq!(serde_json::from_str::<SemanticId>(&json).unwrap(), sid);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(m: u32, n: u32, a: u32, b: u32, c: u32) {
            let sid = SemanticId::new(m, n, a, b, c);
            prop_assert_eq!(parse_sid(&sid.to_string()).unwrap(), sid);
        }

        #[test]
        fn arbitrary_text_never_panics(s in "\\PC{0,40}") {
            let _ = parse_sid(&s);
        }
    }
}
