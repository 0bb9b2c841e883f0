//! Signed multisets of ciphertext identifiers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier multiset with signed multiplicities. Zero entries are never stored.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdMultiset(BTreeMap<String, i64>);

impl IdMultiset {
    pub fn new() -> IdMultiset {
        IdMultiset::default()
    }

    pub fn singleton(id: &str) -> IdMultiset {
        let mut s = IdMultiset::new();
        s.add(id, 1);
        s
    }

    pub fn add(&mut self, id: &str, mult: i64) {
        let slot = self.0.entry(id.to_string()).or_insert(0);
        *slot += mult;
        if *slot == 0 {
            self.0.remove(id);
        }
    }

    /// self + sign * other
    pub fn merge(&mut self, other: &IdMultiset, sign: i64) {
        for (id, m) in &other.0 {
            self.add(id, sign * m);
        }
    }

    pub fn sum(&self, other: &IdMultiset) -> IdMultiset {
        let mut out = self.clone();
        out.merge(other, 1);
        out
    }

    pub fn difference(&self, other: &IdMultiset) -> IdMultiset {
        let mut out = self.clone();
        out.merge(other, -1);
        out
    }

    pub fn multiplicity(&self, id: &str) -> i64 {
        self.0.get(id).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl<'a> FromIterator<&'a str> for IdMultiset {
    fn from_iter<I: IntoIterator<Item = &'a str>>(iter: I) -> Self {
        let mut s = IdMultiset::new();
        for id in iter {
            s.add(id, 1);
        }
        s
    }
}

impl fmt::Debug for IdMultiset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, (id, m)) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            if *m == 1 {
                write!(f, "{id:?}")?;
            } else {
                write!(f, "{id:?}x{m}")?;
            }
        }
        f.write_str("}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cancellation_removes_entries() {
        let a: IdMultiset = ["x", "y", "x"].into_iter().collect();
        assert_eq!(a.multiplicity("x"), 2);
        let b = a.difference(&IdMultiset::singleton("y"));
        assert_eq!(b.len(), 1);
        assert_eq!(b.difference(&b), IdMultiset::new());
        assert!(b.difference(&b).is_empty());
    }

    #[test]
    fn debug_format() {
        let a: IdMultiset = ["b", "c", "b"].into_iter().collect();
        assert_eq!(format!("{a:?}"), "{\"b\"x2, \"c\"}");
    }
}
