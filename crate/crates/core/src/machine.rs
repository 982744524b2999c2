//! Step-bounded oracle-functional families.
//!
//! A [`FunctionalFamily`] answers "does functional e converge on input n
//! within s steps, reading only the oracle prefix σ?". Answers must be
//! monotone in both the stage and the oracle prefix, and may depend only on
//! σ↾min(|σ|, s). A family with a finite horizon H settles every question by
//! stage H while reading at most H oracle bits, which makes emptiness of the
//! associated co-enumerable classes exactly decidable at desk scale.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{enumerate_strings, join_prefix, BitString, ClopenSet, PartialAssignment};

/// Outcome of a bounded evaluation. `Unsettled` means "has not converged
/// within s steps with the given prefix", never "will diverge".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleAnswer {
    Converged { value: u32, settle: u32 },
    Unsettled,
}

impl OracleAnswer {
    pub fn is_converged(&self) -> bool {
        matches!(self, OracleAnswer::Converged { .. })
    }
}

/// The pluggable functional-enumeration interface. The table model below is
/// the canonical instantiation; anything satisfying the monotonicity and use
/// contracts can stand in for it.
pub trait FunctionalFamily {
    /// Bounded evaluation of functional `e` on `input` with oracle prefix
    /// `oracle` at stage `stage`.
    fn eval(&self, e: u32, oracle: &BitString, input: u32, stage: u32) -> Result<OracleAnswer>;

    /// Stage by which every answer is final and reads at most this many
    /// oracle bits; `None` for families without that guarantee.
    fn horizon(&self) -> Option<u32>;

    /// Upper bound on valid indices, when the family enforces one.
    fn index_bound(&self) -> Option<u32> {
        None
    }
}

/// One table rule: functional `e` on input `n` converges to `value` at stage
/// `settle` for every oracle extending `pattern`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRule {
    pub e: u32,
    pub pattern: PartialAssignment,
    #[serde(rename = "n")]
    pub input: u32,
    pub settle: u32,
    pub value: u32,
}

/// Serializable description of a table family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableFamilySpec {
    pub horizon: u32,
    pub rules: Vec<TableRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_bound: Option<u32>,
}

/// A validated table family. Indices without rules are everywhere divergent,
/// which keeps their class equal to the whole space.
#[derive(Clone, Debug)]
pub struct TableFamily {
    spec: TableFamilySpec,
    by_index: BTreeMap<u32, Vec<usize>>,
}

impl TableFamily {
    pub fn spec(&self) -> &TableFamilySpec {
        &self.spec
    }

    /// Largest index mentioned by a rule, plus one. Zero for an empty table.
    pub fn max_rule_index(&self) -> u32 {
        self.by_index.keys().next_back().map_or(0, |&e| e + 1)
    }
}

/// Validate a spec and build the family.
pub fn load_table(spec: TableFamilySpec) -> Result<TableFamily> {
    let mut by_index: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (idx, rule) in spec.rules.iter().enumerate() {
        if rule.settle > spec.horizon {
            return Err(Error::InvalidFamily(format!(
                "rule {idx} (e={}, n={}): settle stage {} exceeds horizon {}",
                rule.e, rule.input, rule.settle, spec.horizon
            )));
        }
        if rule.pattern.depth() > spec.horizon {
            return Err(Error::InvalidFamily(format!(
                "rule {idx} (e={}, n={}): pattern depth {} exceeds horizon {}",
                rule.e, rule.input, rule.pattern.depth(), spec.horizon
            )));
        }
        by_index.entry(rule.e).or_default().push(idx);
    }
    // Rules for the same (e, input) must have pairwise incompatible patterns,
    // otherwise some oracle would satisfy two rules at once.
    for (e, idxs) in &by_index {
        for (a, &i) in idxs.iter().enumerate() {
            for &j in &idxs[a + 1..] {
                let (ri, rj) = (&spec.rules[i], &spec.rules[j]);
                if ri.input == rj.input && ri.pattern.merge(&rj.pattern).is_some() {
                    return Err(Error::InvalidFamily(format!(
                        "rules {i} and {j} for (e={e}, n={}) have compatible patterns {:?} and {:?}",
                        ri.input, ri.pattern, rj.pattern
                    )));
                }
            }
        }
    }
    Ok(TableFamily { spec, by_index })
}

impl FunctionalFamily for TableFamily {
    fn eval(&self, e: u32, oracle: &BitString, input: u32, stage: u32) -> Result<OracleAnswer> {
        if let Some(bound) = self.index_bound() {
            if e >= bound {
                return Err(Error::IndexOutOfBounds { index: e, bound });
            }
        }
        let visible = (oracle.len() as u32).min(stage);
        if let Some(idxs) = self.by_index.get(&e) {
            for &i in idxs {
                let rule = &self.spec.rules[i];
                if rule.input != input || rule.settle > stage {
                    continue;
                }
                // The answer may depend only on σ↾min(|σ|, s): every
                // constrained coordinate must be visible and match.
                let fits = rule
                    .pattern
                    .iter()
                    .all(|(c, b)| c < visible && oracle.get(c as usize) == Some(b));
                if fits {
                    return Ok(OracleAnswer::Converged { value: rule.value, settle: rule.settle });
                }
            }
        }
        Ok(OracleAnswer::Unsettled)
    }

    fn horizon(&self) -> Option<u32> {
        Some(self.spec.horizon)
    }

    fn index_bound(&self) -> Option<u32> {
        self.spec.index_bound
    }
}

/// The stage-s enumeration of the e-th oracle-r.e. set under the given
/// prefix: inputs are capped at the stage, matching the usual convention.
pub fn w_set_at(
    fam: &dyn FunctionalFamily,
    e: u32,
    oracle: &BitString,
    stage: u32,
) -> Result<BTreeSet<u32>> {
    let mut out = BTreeSet::new();
    for n in 0..stage {
        if fam.eval(e, oracle, n, stage)?.is_converged() {
            out.insert(n);
        }
    }
    Ok(out)
}

/// Depth at which the stage-s approximation is computed: the horizon clamps
/// the enumeration because answers are constant in both stage and oracle
/// bits beyond it.
pub fn approx_depth(fam: &dyn FunctionalFamily, stage: u32) -> u32 {
    match fam.horizon() {
        Some(h) => stage.min(h),
        None => stage,
    }
}

/// The stage-s clopen set {τ : functional e on `input` is unsettled at τ},
/// one atom per surviving depth-min(s,H) string.
pub fn unsettled_set(
    fam: &dyn FunctionalFamily,
    e: u32,
    input: u32,
    stage: u32,
    cap: u32,
) -> Result<ClopenSet> {
    let d = approx_depth(fam, stage);
    if d > cap {
        return Err(Error::DepthCapExceeded { required: d, cap });
    }
    let mut atoms = Vec::new();
    for tau in enumerate_strings(d) {
        if !fam.eval(e, &tau, input, stage)?.is_converged() {
            atoms.push(PartialAssignment::from_prefix(&tau));
        }
    }
    Ok(ClopenSet::from_atoms(atoms))
}

/// The stage-s approximation of the e-th co-enumerable class (divergence on
/// input 0). Antitone in s, and exact from the horizon on.
pub fn pi01_approx(fam: &dyn FunctionalFamily, e: u32, stage: u32, cap: u32) -> Result<ClopenSet> {
    unsettled_set(fam, e, 0, stage, cap)
}

/// Evaluate on the join of equal-length component prefixes: assembles the
/// longest determined initial segment of the join and evaluates on it.
pub fn eval_on_join(
    fam: &dyn FunctionalFamily,
    e: u32,
    components: &[BitString],
    input: u32,
    stage: u32,
) -> Result<OracleAnswer> {
    let prefix = join_prefix(components)?;
    fam.eval(e, &prefix, input, stage)
}

/// A total truth-table map on Cantor space with an explicit modulus: output
/// bit j depends only on input bits below `use_bound(j)`, monotone in j.
pub trait Transducer {
    fn use_bound(&self, j: u32) -> u32;

    /// Output bit j, or `None` when the input prefix is too short to
    /// determine it.
    fn output_bit(&self, input: &BitString, j: u32) -> Option<u8>;

    /// The determined output bits, capped at `max_len`.
    fn output_prefix(&self, input: &BitString, max_len: u32) -> BitString {
        let mut out = BitString::new();
        for j in 0..max_len {
            match self.output_bit(input, j) {
                Some(b) => out.push(b),
                None => break,
            }
        }
        out
    }

    /// Largest use bound among the first `len` output bits.
    fn needed_input(&self, len: u32) -> u32 {
        (0..len).map(|j| self.use_bound(j)).max().unwrap_or(0)
    }
}

/// Ψ(X) = X.
pub struct IdentityTransducer;

impl Transducer for IdentityTransducer {
    fn use_bound(&self, j: u32) -> u32 {
        j + 1
    }

    fn output_bit(&self, input: &BitString, j: u32) -> Option<u8> {
        input.get(j as usize)
    }
}

/// Ψ(X) constant.
pub struct ConstantTransducer(pub u8);

impl Transducer for ConstantTransducer {
    fn use_bound(&self, _j: u32) -> u32 {
        0
    }

    fn output_bit(&self, _input: &BitString, _j: u32) -> Option<u8> {
        Some(self.0)
    }
}

/// Ψ(X)(j) = X(k) for a fixed coordinate k.
pub struct ProjectTransducer(pub u32);

impl Transducer for ProjectTransducer {
    fn use_bound(&self, _j: u32) -> u32 {
        self.0 + 1
    }

    fn output_bit(&self, input: &BitString, _j: u32) -> Option<u8> {
        input.get(self.0 as usize)
    }
}

/// Ψ(X)(j) = 1 - X(j).
pub struct FlipTransducer;

impl Transducer for FlipTransducer {
    fn use_bound(&self, j: u32) -> u32 {
        j + 1
    }

    fn output_bit(&self, input: &BitString, j: u32) -> Option<u8> {
        input.get(j as usize).map(|b| 1 - b)
    }
}

/// A finite-output transducer given by explicit parity tables: output bit j
/// is the parity of the input bits listed in `taps[j]`, xored with `flips[j]`.
/// Produces at most `taps.len()` output bits.
#[derive(Clone, Debug)]
pub struct TableTransducer {
    taps: Vec<Vec<u32>>,
    flips: Vec<u8>,
}

impl TableTransducer {
    pub fn new(taps: Vec<Vec<u32>>, flips: Vec<u8>) -> Result<Self> {
        if taps.len() != flips.len() {
            return Err(Error::InvalidConfig("taps and flips lengths differ".into()));
        }
        // The modulus must be monotone in j.
        let mut prev = 0;
        for (j, t) in taps.iter().enumerate() {
            let u = t.iter().map(|&c| c + 1).max().unwrap_or(0);
            if u < prev {
                return Err(Error::InvalidConfig(format!(
                    "use bound decreases at output bit {j}"
                )));
            }
            prev = u;
        }
        Ok(TableTransducer { taps, flips })
    }

    pub fn output_len(&self) -> u32 {
        self.taps.len() as u32
    }
}

impl Transducer for TableTransducer {
    fn use_bound(&self, j: u32) -> u32 {
        match self.taps.get(j as usize) {
            Some(t) => t.iter().map(|&c| c + 1).max().unwrap_or(0),
            // Beyond the table the output is undefined; an infinite bound
            // keeps output_prefix from walking past it.
            None => u32::MAX,
        }
    }

    fn output_bit(&self, input: &BitString, j: u32) -> Option<u8> {
        let taps = self.taps.get(j as usize)?;
        let mut acc = *self.flips.get(j as usize)?;
        for &c in taps {
            acc ^= input.get(c as usize)?;
        }
        Some(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::f1;
    use crate::space::DEFAULT_DEPTH_CAP;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn eval_rule_match() {
        let fam = f1();
        assert_eq!(
            fam.eval(0, &bs("10"), 0, 5).unwrap(),
            OracleAnswer::Converged { value: 0, settle: 3 }
        );
        assert_eq!(fam.eval(0, &bs("1"), 0, 2).unwrap(), OracleAnswer::Unsettled);
        assert_eq!(fam.eval(0, &bs("011"), 0, 99).unwrap(), OracleAnswer::Unsettled);
    }

    #[test]
    fn eval_respects_use_and_stage() {
        let fam = f1();
        // Stage below the settle stage: unsettled even with a long oracle.
        assert_eq!(fam.eval(0, &bs("1111"), 0, 2).unwrap(), OracleAnswer::Unsettled);
        // Oracle too short for the pattern support.
        assert_eq!(fam.eval(2, &bs("0"), 0, 6).unwrap(), OracleAnswer::Unsettled);
        assert!(fam.eval(2, &bs("01"), 0, 6).unwrap().is_converged());
    }

    #[test]
    fn w_set_examples() {
        let fam = f1();
        let w = w_set_at(&fam, 0, &bs("100"), 4).unwrap();
        assert_eq!(w.into_iter().collect::<Vec<_>>(), vec![0]);
        assert!(w_set_at(&fam, 1, &bs("101"), 9).unwrap().is_empty());
        assert!(w_set_at(&fam, 0, &bs("000"), 6).unwrap().is_empty());
    }

    #[test]
    fn pi01_approx_examples() {
        let fam = f1();
        let cap = DEFAULT_DEPTH_CAP;
        let full2 = pi01_approx(&fam, 0, 2, cap).unwrap();
        assert!(full2.denotes_same(&ClopenSet::full(), cap).unwrap());

        let p3 = pi01_approx(&fam, 0, 3, cap).unwrap();
        assert!(p3
            .denotes_same(&ClopenSet::cylinder(&bs("0")), cap)
            .unwrap());

        let p1 = pi01_approx(&fam, 1, 5, cap).unwrap();
        assert!(p1.denotes_same(&ClopenSet::full(), cap).unwrap());
    }

    #[test]
    fn pi01_approx_antitone_and_horizon_stable() {
        let fam = f1();
        let cap = DEFAULT_DEPTH_CAP;
        for e in 0..3 {
            for s in 0..8 {
                let now = pi01_approx(&fam, e, s, cap).unwrap();
                let next = pi01_approx(&fam, e, s + 1, cap).unwrap();
                assert!(next.is_subset(&now, cap).unwrap(), "e={e} s={s}");
            }
            let at_h = pi01_approx(&fam, e, 6, cap).unwrap();
            let beyond = pi01_approx(&fam, e, 40, cap).unwrap();
            assert!(at_h.denotes_same(&beyond, cap).unwrap());
        }
    }

    #[test]
    fn load_table_rejects_overlap() {
        let spec = TableFamilySpec {
            horizon: 6,
            rules: vec![
                TableRule { e: 0, pattern: PartialAssignment::single(0, 1), input: 0, settle: 3, value: 0 },
                TableRule { e: 0, pattern: PartialAssignment::empty(), input: 0, settle: 1, value: 7 },
            ],
            index_bound: None,
        };
        assert!(matches!(load_table(spec), Err(Error::InvalidFamily(_))));
    }

    #[test]
    fn load_table_rejects_late_settle() {
        let spec = TableFamilySpec {
            horizon: 2,
            rules: vec![TableRule {
                e: 0,
                pattern: PartialAssignment::empty(),
                input: 0,
                settle: 3,
                value: 0,
            }],
            index_bound: None,
        };
        assert!(matches!(load_table(spec), Err(Error::InvalidFamily(_))));
    }

    #[test]
    fn empty_spec_everything_full() {
        let fam = load_table(TableFamilySpec { horizon: 0, rules: vec![], index_bound: None }).unwrap();
        for e in [0, 1, 17] {
            let p = pi01_approx(&fam, e, 5, DEFAULT_DEPTH_CAP).unwrap();
            assert!(p.denotes_same(&ClopenSet::full(), DEFAULT_DEPTH_CAP).unwrap());
        }
    }

    #[test]
    fn index_bound_enforced() {
        let fam = load_table(TableFamilySpec { horizon: 4, rules: vec![], index_bound: Some(2) }).unwrap();
        assert!(fam.eval(1, &bs("0"), 0, 1).is_ok());
        assert!(matches!(
            fam.eval(2, &bs("0"), 0, 1),
            Err(Error::IndexOutOfBounds { index: 2, bound: 2 })
        ));
    }

    #[test]
    fn eval_on_join_matches_plain_eval() {
        let fam = f1();
        let a = bs("01");
        let b = bs("10");
        let joined = crate::space::join(&a, &b).unwrap();
        for e in 0..3 {
            for s in 0..8 {
                assert_eq!(
                    eval_on_join(&fam, e, &[a.clone(), b.clone()], 0, s).unwrap(),
                    fam.eval(e, &joined, 0, s).unwrap()
                );
            }
        }
        // Single component is plain eval.
        assert_eq!(
            eval_on_join(&fam, 0, &[bs("100")], 0, 5).unwrap(),
            fam.eval(0, &bs("100"), 0, 5).unwrap()
        );
    }

    #[test]
    fn join_coordinate_one_is_component_two() {
        // A rule reading join coordinate 1 sees bit 0 of the second component.
        let fam = load_table(TableFamilySpec {
            horizon: 4,
            rules: vec![TableRule {
                e: 0,
                pattern: PartialAssignment::single(1, 1),
                input: 0,
                settle: 2,
                value: 0,
            }],
            index_bound: None,
        })
        .unwrap();
        assert!(eval_on_join(&fam, 0, &[bs("00"), bs("10")], 0, 4).unwrap().is_converged());
        assert!(!eval_on_join(&fam, 0, &[bs("11"), bs("01")], 0, 4).unwrap().is_converged());
    }

    #[test]
    fn spec_json_round_trip_is_bit_exact() {
        let json = r#"{"horizon":6,"rules":[{"e":0,"pattern":{"0":1},"n":0,"settle":3,"value":0}]}"#;
        let spec: TableFamilySpec = serde_json::from_str(json).unwrap();
        assert_eq!(serde_json::to_string(&spec).unwrap(), json);
        let fam = load_table(spec.clone()).unwrap();
        assert_eq!(fam.spec(), &spec);
    }

    #[test]
    fn transducer_prefixes() {
        let id = IdentityTransducer;
        assert_eq!(id.output_prefix(&bs("0110"), 10), bs("0110"));
        let c = ConstantTransducer(0);
        assert_eq!(c.output_prefix(&bs("11"), 4), bs("0000"));
        let p = ProjectTransducer(0);
        assert_eq!(p.output_prefix(&bs("10"), 3), bs("111"));
        let f = FlipTransducer;
        assert_eq!(f.output_prefix(&bs("01"), 10), bs("10"));

        let t = TableTransducer::new(vec![vec![0], vec![0, 1]], vec![0, 1]).unwrap();
        assert_eq!(t.output_bit(&bs("10"), 0), Some(1));
        assert_eq!(t.output_bit(&bs("10"), 1), Some(0));
        assert_eq!(t.output_prefix(&bs("1"), 5), bs("1"));
        assert!(TableTransducer::new(vec![vec![5], vec![0]], vec![0, 0]).is_err());
    }
}
