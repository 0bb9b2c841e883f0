//! Precomputed discrete-logarithm table for small exponents of the generator.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::group::{Element, Group, Profile};

/// Largest table the default memory budget allows.
pub const MAX_TABLE_BOUND: u64 = 1 << 22;

#[derive(Debug, Error)]
pub enum DlogError {
    #[error("table bound {bound} exceeds the budget of {budget} entries")]
    OverBudget { bound: u64, budget: u64 },
    #[error("table bound must be positive")]
    EmptyTable,
    #[error("table was built for {found}, not {expected}")]
    ProfileMismatch { found: String, expected: String },
    #[error("malformed table file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Maps g^m to m for every m below `bound`.
///
/// Entries are keyed by a 64-bit fold of the element encoding; a hit is
/// confirmed by recomputing g^m so the fold never yields a wrong answer.
#[derive(Debug)]
pub struct DlogTable {
    profile: Profile,
    bound: u64,
    index: HashMap<u64, u32>,
    // entries whose fold collided with an earlier one
    spill: Vec<(Vec<u8>, u32)>,
}

fn fold(bytes: &[u8]) -> u64 {
    let mut acc = 0u64;
    for chunk in bytes.chunks(8) {
        let mut w = [0u8; 8];
        w[..chunk.len()].copy_from_slice(chunk);
        acc = acc.rotate_left(17) ^ u64::from_le_bytes(w);
    }
    acc
}

/// Builds the table for the generator of `group` within the default budget.
pub fn build_dlog_table(group: &Group, bound: u64) -> Result<DlogTable, DlogError> {
    DlogTable::build(group, bound, MAX_TABLE_BOUND)
}

impl DlogTable {
    pub fn build(group: &Group, bound: u64, budget: u64) -> Result<DlogTable, DlogError> {
        if bound == 0 {
            return Err(DlogError::EmptyTable);
        }
        if bound > budget || bound > u32::MAX as u64 {
            return Err(DlogError::OverBudget { bound, budget });
        }
        let mut table = DlogTable {
            profile: group.profile(),
            bound,
            index: HashMap::with_capacity(bound as usize),
            spill: Vec::new(),
        };
        let g = group.generator();
        let mut acc = group.identity();
        for m in 0..bound as u32 {
            table.insert(group.encode(&acc), m);
            acc = group.op(&acc, &g);
        }
        Ok(table)
    }

    fn insert(&mut self, bytes: Vec<u8>, m: u32) {
        let key = fold(&bytes);
        if let std::collections::hash_map::Entry::Vacant(e) = self.index.entry(key) {
            e.insert(m);
        } else {
            self.spill.push((bytes, m));
        }
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    /// m with g^m = h and 0 <= m < bound.
    pub fn lookup(&self, group: &Group, h: &Element) -> Option<u64> {
        group.meter().lookup();
        let bytes = group.encode(h);
        if let Some(&m) = self.index.get(&fold(&bytes)) {
            if group.exp_g(&group.exponent_u64(m as u64)) == *h {
                return Some(m as u64);
            }
        }
        self.spill.iter().find(|(b, _)| *b == bytes).map(|&(_, m)| m as u64)
    }

    /// m with g^m = h and |m| < bound. Both signs are always probed.
    pub fn lookup_signed(&self, group: &Group, h: &Element) -> Option<i64> {
        let pos = self.lookup(group, h);
        let neg = self.lookup(group, &group.inv(h));
        match (pos, neg) {
            (Some(m), _) => Some(m as i64),
            (None, Some(m)) => Some(-(m as i64)),
            (None, None) => None,
        }
    }

    /// Header (profile id, bound) followed by (element, exponent) pairs sorted by element.
    pub fn save<W: Write>(&self, group: &Group, mut w: W) -> Result<(), DlogError> {
        self.check_profile(group)?;
        w.write_all(b"FSDL")?;
        w.write_all(&[self.profile.id()])?;
        w.write_all(&self.bound.to_be_bytes())?;
        let g = group.generator();
        let mut acc = group.identity();
        let mut rows = Vec::with_capacity(self.bound as usize);
        for m in 0..self.bound as u32 {
            rows.push((group.encode(&acc), m));
            acc = group.op(&acc, &g);
        }
        rows.sort();
        for (bytes, m) in rows {
            w.write_all(&bytes)?;
            w.write_all(&m.to_be_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(group: &Group, mut r: R) -> Result<DlogTable, DlogError> {
        let mut head = [0u8; 13];
        r.read_exact(&mut head)?;
        if &head[..4] != b"FSDL" {
            return Err(DlogError::Malformed("bad magic".into()));
        }
        let profile = Profile::from_id(head[4])
            .ok_or_else(|| DlogError::Malformed(format!("unknown profile id {}", head[4])))?;
        if profile != group.profile() {
            return Err(DlogError::ProfileMismatch {
                found: profile.to_string(),
                expected: group.profile().to_string(),
            });
        }
        let bound = u64::from_be_bytes(head[5..13].try_into().expect("8 bytes"));
        if bound == 0 || bound > MAX_TABLE_BOUND {
            return Err(DlogError::Malformed(format!("bound {bound} out of range")));
        }
        let width = group.element_len();
        let mut table = DlogTable {
            profile,
            bound,
            index: HashMap::with_capacity(bound as usize),
            spill: Vec::new(),
        };
        let mut row = vec![0u8; width + 4];
        let mut prev: Option<Vec<u8>> = None;
        for _ in 0..bound {
            r.read_exact(&mut row)?;
            let bytes = row[..width].to_vec();
            let m = u32::from_be_bytes(row[width..].try_into().expect("4 bytes"));
            if m as u64 >= bound || prev.as_ref().is_some_and(|p| *p >= bytes) {
                return Err(DlogError::Malformed("rows out of order or out of range".into()));
            }
            prev = Some(bytes.clone());
            table.insert(bytes, m);
        }
        Ok(table)
    }

    fn check_profile(&self, group: &Group) -> Result<(), DlogError> {
        if self.profile != group.profile() {
            return Err(DlogError::ProfileMismatch {
                found: self.profile.to_string(),
                expected: group.profile().to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_exhaustive() {
        let g = Group::new(Profile::TestTiny);
        let t = build_dlog_table(&g, 1024).unwrap();
        let h = g.exp_g(&g.exponent_u64(917));
        assert_eq!(t.lookup(&g, &h), Some(917));
        for m in 0..1024u64 {
            assert_eq!(t.lookup(&g, &g.exp_g(&g.exponent_u64(m))), Some(m));
        }
        // 1030 is outside the table
        assert_eq!(t.lookup(&g, &g.exp_g(&g.exponent_u64(1030))), None);
    }

    #[test]
    fn signed_lookup() {
        let g = Group::new(Profile::TestTiny);
        let t = build_dlog_table(&g, 256).unwrap();
        for m in -255i64..256 {
            let h = g.exp_g(&g.exponent_i128(m as i128));
            assert_eq!(t.lookup_signed(&g, &h), Some(m));
        }
        assert_eq!(t.lookup_signed(&g, &g.exp_g(&g.exponent_u64(400))), None);
    }

    #[test]
    fn signed_lookup_probes_both_signs() {
        let g = Group::new(Profile::TestTiny);
        let t = build_dlog_table(&g, 256).unwrap();
        let cost = |m: i128| {
            let h = g.exp_g(&g.exponent_i128(m));
            let before = g.meter().snapshot();
            t.lookup_signed(&g, &h);
            (g.meter().snapshot() - before).lookups
        };
        assert_eq!(cost(3), cost(-3));
        assert_eq!(cost(3), 2);
    }

    #[test]
    fn budget_is_enforced() {
        let g = Group::new(Profile::TestTiny);
        assert!(matches!(
            DlogTable::build(&g, 100, 50),
            Err(DlogError::OverBudget { bound: 100, budget: 50 })
        ));
        assert!(matches!(build_dlog_table(&g, 0), Err(DlogError::EmptyTable)));
    }

    #[test]
    fn persistence_round_trip() {
        for profile in [Profile::TestTiny, Profile::CurveStrong] {
            let g = Group::shared(profile);
            let t = build_dlog_table(&g, 300).unwrap();
            let mut buf = Vec::new();
            t.save(&g, &mut buf).unwrap();
            assert_eq!(buf.len(), 13 + 300 * (g.element_len() + 4));
            let back = DlogTable::load(&g, buf.as_slice()).unwrap();
            assert_eq!(back.bound(), 300);
            for m in [0u64, 1, 17, 299] {
                assert_eq!(back.lookup(&g, &g.exp_g(&g.exponent_u64(m))), Some(m));
            }
            let other = Group::shared(Profile::Modp1536);
            assert!(matches!(
                DlogTable::load(&other, buf.as_slice()),
                Err(DlogError::ProfileMismatch { .. })
            ));
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let g = Group::new(Profile::TestTiny);
        let t = build_dlog_table(&g, 16).unwrap();
        let mut buf = Vec::new();
        t.save(&g, &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(DlogTable::load(&g, buf.as_slice()), Err(DlogError::Malformed(_))));
    }
}
