//! Finite binary strings, cylinders, joins, and an exact clopen-set algebra
//! on Cantor space.
//!
//! A clopen set is represented as a finite union of partial assignments
//! (coordinate -> bit constraint maps). Intersection and union work directly
//! on the constraint maps; complement and subset tests refine every atom to a
//! common depth and operate on full-length strings, guarded by an explicit
//! depth cap.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserialize, Deserializer, Visitor};
use serde::ser::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Default refinement cap: 2^24 strings is the desk-scale ceiling.
pub const DEFAULT_DEPTH_CAP: u32 = 24;

/// A finite binary string. Ordered shortlex: shorter first, then
/// lexicographically with 0 < 1. This is the "least string" order used by
/// every search in the crate.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bits: Vec<u8>,
}

impl PartialOrd for BitString {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BitString {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.len().cmp(&other.len()).then_with(|| self.bits.cmp(&other.bits))
    }
}

impl BitString {
    pub fn new() -> Self {
        BitString { bits: Vec::new() }
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidConfig("bit strings contain only 0 and 1".into()));
        }
        Ok(BitString { bits: bits.to_vec() })
    }

    /// The all-zero string of the given length.
    pub fn zeros(len: u32) -> Self {
        BitString { bits: vec![0; len as usize] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<u8> {
        self.bits.get(i).copied()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn push(&mut self, bit: u8) {
        debug_assert!(bit <= 1);
        self.bits.push(bit);
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &BitString) -> BitString {
        let mut bits = self.bits.clone();
        bits.extend_from_slice(&other.bits);
        BitString { bits }
    }

    /// `self` followed by a single bit.
    pub fn append(&self, bit: u8) -> BitString {
        debug_assert!(bit <= 1);
        let mut bits = self.bits.clone();
        bits.push(bit);
        BitString { bits }
    }

    /// The prefix of length `k`.
    pub fn restrict(&self, k: usize) -> Result<BitString> {
        if k > self.len() {
            return Err(Error::PrefixOutOfRange { requested: k, len: self.len() });
        }
        Ok(BitString { bits: self.bits[..k].to_vec() })
    }

    /// The bits from position `from` on.
    pub fn suffix(&self, from: usize) -> BitString {
        BitString { bits: self.bits[from.min(self.len())..].to_vec() }
    }

    /// Does `self` extend `prefix` (allowing equality)?
    pub fn extends(&self, prefix: &BitString) -> bool {
        self.len() >= prefix.len() && self.bits[..prefix.len()] == prefix.bits[..]
    }

    /// Does `self` strictly extend `prefix`?
    pub fn strictly_extends(&self, prefix: &BitString) -> bool {
        self.len() > prefix.len() && self.extends(prefix)
    }

    /// Index of this string within the lexicographic enumeration of its
    /// length class (coordinate 0 is the most significant bit).
    pub fn lex_index(&self) -> u32 {
        debug_assert!(self.len() <= 32);
        self.bits.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b))
    }

    /// Inverse of [`lex_index`](Self::lex_index) for the given length.
    pub fn from_lex_index(index: u32, len: u32) -> BitString {
        debug_assert!(len <= 32);
        let bits = (0..len).map(|i| ((index >> (len - 1 - i)) & 1) as u8).collect();
        BitString { bits }
    }
}

/// All strings of the given length in lexicographic (equivalently shortlex)
/// order.
pub fn enumerate_strings(len: u32) -> impl Iterator<Item = BitString> {
    (0..(1u64 << len)).map(move |v| BitString::from_lex_index(v as u32, len))
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(0),
                '1' => bits.push(1),
                _ => return Err(Error::InvalidConfig(format!("invalid bit character {c:?}"))),
            }
        }
        Ok(BitString { bits })
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

struct BitStringVisitor;

impl Visitor<'_> for BitStringVisitor {
    type Value = BitString;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "a string of 0 and 1 characters")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<BitString, E> {
        v.parse().map_err(|e| E::custom(format!("{e}")))
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_str(BitStringVisitor)
    }
}

/// Builds the length-2n prefix of X⊕Y from equal-length prefixes of X and Y:
/// the result r has r(2i) = a(i) and r(2i+1) = b(i).
pub fn join(a: &BitString, b: &BitString) -> Result<BitString> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    let mut bits = Vec::with_capacity(2 * a.len());
    for i in 0..a.len() {
        bits.push(a.bits[i]);
        bits.push(b.bits[i]);
    }
    Ok(BitString { bits })
}

/// Coordinate of X_i(k) inside the left-associated n-fold join
/// ((X_1⊕X_2)⊕X_3)⊕⋯⊕X_n. Components are numbered 1..=n. Bijective onto the
/// naturals as (i, k) ranges over all pairs.
pub fn join_position(n: u32, i: u32, k: u32) -> Result<u32> {
    if n == 0 || i == 0 || i > n {
        return Err(Error::ComponentOutOfRange { index: i, count: n });
    }
    // At arity i the component is rightmost and occupies the odd coordinates;
    // each further join to the right doubles every earlier coordinate.
    let mut pos = if i == 1 {
        k
    } else {
        k.checked_mul(2)
            .and_then(|p| p.checked_add(1))
            .ok_or(Error::CoordinateOverflow)?
    };
    for _ in i..n {
        pos = pos.checked_mul(2).ok_or(Error::CoordinateOverflow)?;
    }
    Ok(pos)
}

/// Inverse of [`join_position`]: which (component, coordinate) pair the join
/// coordinate `pos` carries, for an n-fold left-associated join.
pub fn join_component(n: u32, pos: u32) -> (u32, u32) {
    debug_assert!(n >= 1);
    let mut pos = pos;
    let mut level = n;
    while level > 1 {
        if pos % 2 == 1 {
            return (level, pos / 2);
        }
        pos /= 2;
        level -= 1;
    }
    (1, pos)
}

/// The longest initial segment of the n-fold join determined by the given
/// component prefixes (all of equal length).
pub fn join_prefix(components: &[BitString]) -> Result<BitString> {
    if components.is_empty() {
        return Err(Error::EmptyProduct);
    }
    let len = components[0].len();
    for c in components {
        if c.len() != len {
            return Err(Error::LengthMismatch { left: len, right: c.len() });
        }
    }
    let n = components.len() as u32;
    if n == 1 {
        return Ok(components[0].clone());
    }
    let mut bits = Vec::new();
    for pos in 0.. {
        let (i, k) = join_component(n, pos);
        match components[(i - 1) as usize].get(k as usize) {
            Some(b) => bits.push(b),
            None => break,
        }
    }
    Ok(BitString { bits })
}

/// A finite conjunction of coordinate constraints: the set of all X in Cantor
/// space with X(c) = b for every constrained pair. Always satisfiable, so an
/// atom never denotes the empty set.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct PartialAssignment {
    constraints: BTreeMap<u32, u8>,
}

impl PartialAssignment {
    pub fn empty() -> Self {
        PartialAssignment::default()
    }

    /// The atom constraining coordinates 0..|σ|-1 to σ's bits.
    pub fn from_prefix(sigma: &BitString) -> Self {
        let constraints = sigma
            .bits()
            .iter()
            .enumerate()
            .map(|(i, &b)| (i as u32, b))
            .collect();
        PartialAssignment { constraints }
    }

    pub fn single(coord: u32, bit: u8) -> Self {
        debug_assert!(bit <= 1);
        let mut constraints = BTreeMap::new();
        constraints.insert(coord, bit);
        PartialAssignment { constraints }
    }

    pub fn get(&self, coord: u32) -> Option<u8> {
        self.constraints.get(&coord).copied()
    }

    pub fn support_len(&self) -> usize {
        self.constraints.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.constraints.iter().map(|(&c, &b)| (c, b))
    }

    /// 1 + the largest constrained coordinate; 0 for the empty assignment.
    pub fn depth(&self) -> u32 {
        self.constraints.keys().next_back().map_or(0, |&c| c + 1)
    }

    /// Merge two constraint maps; `None` when they contradict.
    pub fn merge(&self, other: &PartialAssignment) -> Option<PartialAssignment> {
        let (small, large) = if self.constraints.len() <= other.constraints.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut merged = large.constraints.clone();
        for (&c, &b) in &small.constraints {
            match merged.insert(c, b) {
                Some(prev) if prev != b => return None,
                _ => {}
            }
        }
        Some(PartialAssignment { constraints: merged })
    }

    /// Every constrained coordinate lies below |τ| and matches τ.
    pub fn satisfied_by(&self, tau: &BitString) -> bool {
        self.constraints
            .iter()
            .all(|(&c, &b)| tau.get(c as usize) == Some(b))
    }

    /// No constrained coordinate below |τ| disagrees with τ; coordinates at or
    /// beyond |τ| are unconstrained by τ, so they never rule the atom out.
    pub fn consistent_with_prefix(&self, tau: &BitString) -> bool {
        self.constraints
            .iter()
            .all(|(&c, &b)| match tau.get(c as usize) {
                Some(t) => t == b,
                None => true,
            })
    }

    /// Rewrite every coordinate through `f` (used to embed a component into a
    /// join).
    pub fn remap(&self, mut f: impl FnMut(u32) -> Result<u32>) -> Result<PartialAssignment> {
        let mut constraints = BTreeMap::new();
        for (&c, &b) in &self.constraints {
            constraints.insert(f(c)?, b);
        }
        Ok(PartialAssignment { constraints })
    }

    /// Does `self` constrain at least as much as `other` (so ⟦self⟧ ⊆ ⟦other⟧)?
    fn refines(&self, other: &PartialAssignment) -> bool {
        other
            .constraints
            .iter()
            .all(|(&c, &b)| self.get(c) == Some(b))
    }
}

impl fmt::Debug for PartialAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (&c, &b)) in self.constraints.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}->{b}")?;
        }
        write!(f, "}}")
    }
}

/// A finite union of partial assignments. The empty atom list denotes the
/// empty set; the single empty assignment denotes all of Cantor space.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClopenSet {
    atoms: Vec<PartialAssignment>,
}

impl ClopenSet {
    pub fn empty() -> Self {
        ClopenSet { atoms: Vec::new() }
    }

    pub fn full() -> Self {
        ClopenSet { atoms: vec![PartialAssignment::empty()] }
    }

    /// ⟦σ⟧, the set of sequences extending σ.
    pub fn cylinder(sigma: &BitString) -> Self {
        ClopenSet { atoms: vec![PartialAssignment::from_prefix(sigma)] }
    }

    pub fn from_atoms(atoms: Vec<PartialAssignment>) -> Self {
        let mut set = ClopenSet { atoms };
        set.normalize();
        set
    }

    pub fn atoms(&self) -> &[PartialAssignment] {
        &self.atoms
    }

    /// Max depth over all atoms: the refinement depth at which membership is
    /// decided by full-length strings.
    pub fn depth(&self) -> u32 {
        self.atoms.iter().map(PartialAssignment::depth).max().unwrap_or(0)
    }

    /// Exact: atoms are always satisfiable, so emptiness is an empty atom list.
    pub fn is_empty_set(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Sort, dedupe, and drop atoms subsumed by a weaker atom.
    fn normalize(&mut self) {
        self.atoms.sort();
        self.atoms.dedup();
        if self.atoms.len() > 1 && self.atoms.len() <= 4096 {
            let atoms = std::mem::take(&mut self.atoms);
            let mut kept: Vec<PartialAssignment> = Vec::with_capacity(atoms.len());
            for atom in atoms {
                if !kept.iter().any(|k| atom.refines(k)) {
                    kept.retain(|k| !k.refines(&atom));
                    kept.push(atom);
                }
            }
            kept.sort();
            self.atoms = kept;
        }
    }

    /// Exact intersection: atomwise constraint merge, dropping contradictions.
    pub fn intersect(&self, other: &ClopenSet) -> ClopenSet {
        let mut atoms = Vec::new();
        for a in &self.atoms {
            for b in &other.atoms {
                if let Some(m) = a.merge(b) {
                    atoms.push(m);
                }
            }
        }
        ClopenSet::from_atoms(atoms)
    }

    pub fn union(&self, other: &ClopenSet) -> ClopenSet {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        ClopenSet::from_atoms(atoms)
    }

    /// ⟦τ⟧ ∩ self ≠ ∅. Exact for any τ.
    pub fn meets(&self, tau: &BitString) -> bool {
        self.atoms.iter().any(|a| a.consistent_with_prefix(tau))
    }

    /// ⟦τ⟧ ⊆ self. Exact whenever |τ| ≥ self.depth(); below that depth an
    /// atom constraining deeper coordinates is conservatively not counted.
    pub fn covers(&self, tau: &BitString) -> bool {
        self.atoms.iter().any(|a| a.satisfied_by(tau))
    }

    fn check_cap(required: u32, cap: u32) -> Result<()> {
        if required > cap {
            return Err(Error::DepthCapExceeded { required, cap });
        }
        Ok(())
    }

    /// Exact complement, refined at this set's own depth.
    pub fn complement(&self, cap: u32) -> Result<ClopenSet> {
        let d = self.depth();
        Self::check_cap(d, cap)?;
        let atoms = enumerate_strings(d)
            .filter(|tau| !self.covers(tau))
            .map(|tau| PartialAssignment::from_prefix(&tau))
            .collect();
        Ok(ClopenSet::from_atoms(atoms))
    }

    /// Denotation inclusion, decided at the common refinement depth.
    pub fn is_subset(&self, other: &ClopenSet, cap: u32) -> Result<bool> {
        let d = self.depth().max(other.depth());
        Self::check_cap(d, cap)?;
        Ok(enumerate_strings(d).all(|tau| !self.covers(&tau) || other.covers(&tau)))
    }

    /// Denotation equality, decided at the common refinement depth.
    pub fn denotes_same(&self, other: &ClopenSet, cap: u32) -> Result<bool> {
        let d = self.depth().max(other.depth());
        Self::check_cap(d, cap)?;
        Ok(enumerate_strings(d).all(|tau| self.covers(&tau) == other.covers(&tau)))
    }

    /// The depth-d strings whose cylinders lie inside the set. Exact when
    /// d ≥ self.depth().
    pub fn strings_at_depth(&self, d: u32, cap: u32) -> Result<Vec<BitString>> {
        Self::check_cap(d.max(self.depth()), cap)?;
        Ok(enumerate_strings(d).filter(|tau| self.covers(tau)).collect())
    }
}

/// {X_1⊕⋯⊕X_n : X_i ∈ C_i}, left-associated. Each atom's coordinates are
/// remapped through [`join_position`] and atoms are combined across
/// components; remapped supports are disjoint, so merges never contradict.
pub fn product(components: &[ClopenSet], cap: u32) -> Result<ClopenSet> {
    if components.is_empty() {
        return Err(Error::EmptyProduct);
    }
    let n = components.len() as u32;
    if n == 1 {
        return Ok(components[0].clone());
    }
    let mut acc = vec![PartialAssignment::empty()];
    for (idx, comp) in components.iter().enumerate() {
        let i = idx as u32 + 1;
        let mut remapped = Vec::with_capacity(comp.atoms().len());
        for atom in comp.atoms() {
            let r = atom.remap(|c| join_position(n, i, c))?;
            if r.depth() > cap {
                return Err(Error::DepthCapExceeded { required: r.depth(), cap });
            }
            remapped.push(r);
        }
        let mut next = Vec::with_capacity(acc.len() * remapped.len());
        for a in &acc {
            for b in &remapped {
                match a.merge(b) {
                    Some(m) => next.push(m),
                    None => unreachable!("join components own disjoint coordinates"),
                }
            }
        }
        acc = next;
    }
    Ok(ClopenSet::from_atoms(acc))
}
