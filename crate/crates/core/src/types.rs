//! Shared domain vocabulary: container keys, sessions and mined patterns.
//!
//! A [`DataContainer`] names a cell, row, column or any combination of them
//! in the backing store. Column, row and hybrid access sequences are all
//! modelled as sequences of containers; which fields are populated decides
//! the kind of sequence.
//!
//! The canonical text form is `table/row/family:qualifier`. Absent fields are
//! rendered empty, and `/`, `:`, `%` and whitespace inside a token are
//! percent-encoded (`%2F`, `%3A`, `%25`, `%20`, ...).

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Key of a cell, row, column or any combination thereof.
///
/// Cloning is cheap; equality, hashing and ordering all go through the
/// canonical encoding, which is injective on valid containers.
#[derive(Clone)]
pub struct DataContainer(Arc<ContainerInner>);

struct ContainerInner {
    table: Option<Box<str>>,
    row: Option<Box<str>>,
    family: Option<Box<str>>,
    qualifier: Option<Box<str>>,
    encoded: Box<str>,
}

impl DataContainer {
    pub fn new(
        table: Option<&str>,
        row: Option<&str>,
        family: Option<&str>,
        qualifier: Option<&str>,
    ) -> Result<Self> {
        let fields = [table, row, family, qualifier];
        if fields.iter().all(Option::is_none) {
            return Err(Error::InvalidContainer("at least one field must be present"));
        }
        if fields.iter().flatten().any(|t| t.is_empty()) {
            return Err(Error::InvalidContainer("tokens must be non-empty"));
        }
        let mut encoded = String::new();
        push_escaped(&mut encoded, table);
        encoded.push('/');
        push_escaped(&mut encoded, row);
        encoded.push('/');
        push_escaped(&mut encoded, family);
        encoded.push(':');
        push_escaped(&mut encoded, qualifier);
        Ok(Self(Arc::new(ContainerInner {
            table: table.map(Into::into),
            row: row.map(Into::into),
            family: family.map(Into::into),
            qualifier: qualifier.map(Into::into),
            encoded: encoded.into(),
        })))
    }

    /// A row-level container: `table/row/:`.
    pub fn row(table: &str, row: &str) -> Result<Self> {
        Self::new(Some(table), Some(row), None, None)
    }

    /// A cell-level container.
    pub fn cell(table: &str, row: &str, family: &str, qualifier: &str) -> Result<Self> {
        Self::new(Some(table), Some(row), Some(family), Some(qualifier))
    }

    pub fn table(&self) -> Option<&str> {
        self.0.table.as_deref()
    }

    pub fn row_key(&self) -> Option<&str> {
        self.0.row.as_deref()
    }

    pub fn family(&self) -> Option<&str> {
        self.0.family.as_deref()
    }

    pub fn qualifier(&self) -> Option<&str> {
        self.0.qualifier.as_deref()
    }

    /// Canonical text encoding.
    pub fn encoded(&self) -> &str {
        &self.0.encoded
    }
}

/// Canonical encoding of `c`.
pub fn encode_container(c: &DataContainer) -> String {
    c.encoded().to_owned()
}

/// Parse a canonical encoding back into a container.
pub fn decode_container(s: &str) -> Result<DataContainer> {
    let malformed = |reason| Error::MalformedKey {
        key: s.to_owned(),
        reason,
    };
    let mut parts = s.splitn(3, '/');
    let (Some(table), Some(row), Some(column)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(malformed("expected two `/` separators"));
    };
    if column.contains('/') {
        return Err(malformed("unescaped `/` in column part"));
    }
    let Some((family, qualifier)) = column.split_once(':') else {
        return Err(malformed("missing `:` separator"));
    };
    if qualifier.contains(':') {
        return Err(malformed("unescaped `:` in qualifier"));
    }
    let table = unescape(table).ok_or_else(|| malformed("invalid escape sequence"))?;
    let row = unescape(row).ok_or_else(|| malformed("invalid escape sequence"))?;
    let family = unescape(family).ok_or_else(|| malformed("invalid escape sequence"))?;
    let qualifier = unescape(qualifier).ok_or_else(|| malformed("invalid escape sequence"))?;
    if [&table, &row, &family, &qualifier]
        .iter()
        .all(|f| f.is_none())
    {
        return Err(malformed("all fields are empty"));
    }
    DataContainer::new(
        table.as_deref(),
        row.as_deref(),
        family.as_deref(),
        qualifier.as_deref(),
    )
    .map_err(|_| malformed("invalid container"))
}

fn is_reserved(c: char) -> bool {
    c == '/' || c == ':' || c == '%' || c.is_whitespace()
}

fn push_escaped(out: &mut String, token: Option<&str>) {
    let Some(token) = token else { return };
    for c in token.chars() {
        if is_reserved(c) {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
}

/// Outer `None` marks an invalid escape; inner `None` an absent field.
#[allow(clippy::option_option)]
fn unescape(token: &str) -> Option<Option<String>> {
    if token.is_empty() {
        return Some(None);
    }
    if token.chars().any(char::is_whitespace) {
        return None;
    }
    let bytes = token.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hex = token.get(i + 1..i + 3)?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 3;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    let s = String::from_utf8(out).ok()?;
    if s.is_empty() {
        return None;
    }
    Some(Some(s))
}

impl PartialEq for DataContainer {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.encoded == other.0.encoded
    }
}

impl Eq for DataContainer {}

impl Hash for DataContainer {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.encoded.hash(state);
    }
}

impl PartialOrd for DataContainer {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DataContainer {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.encoded.cmp(&other.0.encoded)
    }
}

impl fmt::Display for DataContainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.encoded())
    }
}

impl fmt::Debug for DataContainer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DataContainer({:?})", self.encoded())
    }
}

impl FromStr for DataContainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        decode_container(s)
    }
}

/// An ordered burst of reads by one client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: u64,
    items: Vec<DataContainer>,
    timestamps: Vec<u64>,
}

impl Session {
    pub fn new(id: u64, items: Vec<DataContainer>, timestamps: Vec<u64>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidSession("items must be non-empty"));
        }
        if items.len() != timestamps.len() {
            return Err(Error::InvalidSession("timestamps and items differ in length"));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidSession("timestamps must be non-decreasing"));
        }
        Ok(Self {
            id,
            items,
            timestamps,
        })
    }

    /// Session without timing information, e.g. read from a session database
    /// file. All timestamps are zero.
    pub fn untimed(id: u64, items: Vec<DataContainer>) -> Result<Self> {
        let timestamps = vec![0; items.len()];
        Self::new(id, items, timestamps)
    }

    pub fn items(&self) -> &[DataContainer] {
        &self.items
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A mined (or a-priori supplied) item sequence with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePattern {
    pub items: Vec<DataContainer>,
    pub support_count: u64,
    pub support_fraction: f64,
}

impl SequencePattern {
    pub fn new(items: Vec<DataContainer>, support_count: u64, support_fraction: f64) -> Self {
        Self {
            items,
            support_count,
            support_fraction,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items in canonical encoding, space separated.
    pub fn encoded_items(&self) -> String {
        join_encoded(&self.items)
    }
}

pub(crate) fn join_encoded(items: &[DataContainer]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(item.encoded());
    }
    out
}

/// Lexicographic comparison of two item lists by canonical encoding.
pub(crate) fn cmp_items(a: &[DataContainer], b: &[DataContainer]) -> Ordering {
    a.iter()
        .map(DataContainer::encoded)
        .cmp(b.iter().map(DataContainer::encoded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;

    fn hash_of(c: &DataContainer) -> u64 {
        let mut h = DefaultHasher::new();
        c.hash(&mut h);
        h.finish()
    }

    #[test]
    fn encodes_full_cell() {
        let c = DataContainer::cell("t1", "r9", "cf", "q2").unwrap();
        assert_eq!(encode_container(&c), "t1/r9/cf:q2");
    }

    #[test]
    fn escapes_reserved_characters() {
        let c = DataContainer::new(None, Some("a/b"), None, None).unwrap();
        assert_eq!(c.encoded(), "/a%2Fb/:");
        let c = DataContainer::new(Some("x y"), Some("50%"), Some("f:g"), None).unwrap();
        assert_eq!(c.encoded(), "x%20y/50%25/f%3Ag:");
        assert_eq!(decode_container(c.encoded()).unwrap(), c);
    }

    #[test]
    fn decodes_canonical_form() {
        let c = decode_container("t1/r9/cf:q2").unwrap();
        assert_eq!(c.table(), Some("t1"));
        assert_eq!(c.row_key(), Some("r9"));
        assert_eq!(c.family(), Some("cf"));
        assert_eq!(c.qualifier(), Some("q2"));
    }

    #[test]
    fn rejects_malformed_keys() {
        for bad in ["///", "t1/r9/cf", "/:", "t1", "a/b/c:d:e", "a/b/c/d:e", "a%2/b/:", "a%zz/b/:", "a b/c/:"] {
            assert!(
                matches!(decode_container(bad), Err(Error::MalformedKey { .. })),
                "{bad} should be rejected"
            );
        }
        assert!(matches!(
            decode_container("//:"),
            Err(Error::MalformedKey { .. })
        ));
    }

    #[test]
    fn qualifier_without_family_is_allowed() {
        let c = DataContainer::new(Some("t"), None, None, Some("q")).unwrap();
        assert_eq!(c.encoded(), "t//:q");
        assert_eq!(decode_container("t//:q").unwrap(), c);
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(DataContainer::new(None, None, None, None).is_err());
        assert!(DataContainer::new(Some(""), Some("r"), None, None).is_err());
    }

    #[test]
    fn equal_containers_hash_equally() {
        let a = DataContainer::cell("t", "r", "f", "q").unwrap();
        let b = decode_container("t/r/f:q").unwrap();
        assert_eq!(a, b);
        assert_eq!(hash_of(&a), hash_of(&b));
        let c = DataContainer::new(Some("t"), Some("r"), Some("f"), None).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn session_invariants() {
        let a = DataContainer::row("t", "a").unwrap();
        assert!(Session::new(0, vec![], vec![]).is_err());
        assert!(Session::new(0, vec![a.clone(), a.clone()], vec![5, 4]).is_err());
        assert!(Session::new(0, vec![a.clone()], vec![1, 2]).is_err());
        let s = Session::new(3, vec![a.clone(), a], vec![4, 4]).unwrap();
        assert_eq!(s.len(), 2);
    }
}
