//! Canonical table families and seeded random generators used by the test
//! suites and the batch drivers.

use rand::Rng;

use crate::error::Result;
use crate::machine::{
    load_table, FunctionalFamily, OracleAnswer, TableFamily, TableFamilySpec, TableRule,
    Transducer,
};
use crate::space::{enumerate_strings, join, BitString, PartialAssignment};

/// Three-index family with horizon 6: index 0 converges (on input 0) iff the
/// oracle starts with 1, settling at stage 3; index 1 never converges; index
/// 2 converges iff the oracle starts 01, settling at stage 4.
pub fn f1_spec() -> TableFamilySpec {
    TableFamilySpec {
        horizon: 6,
        rules: vec![
            TableRule {
                e: 0,
                pattern: PartialAssignment::single(0, 1),
                input: 0,
                settle: 3,
                value: 0,
            },
            TableRule {
                e: 2,
                pattern: PartialAssignment::single(0, 0)
                    .merge(&PartialAssignment::single(1, 1))
                    .expect("disjoint supports"),
                input: 0,
                settle: 4,
                value: 0,
            },
        ],
        index_bound: None,
    }
}

pub fn f1() -> TableFamily {
    load_table(f1_spec()).expect("f1 is valid")
}

/// Single-rule family with horizon 6: index 4 converges (on input 0) iff
/// oracle bit 5 is 1, settling at stage 6. Its class constrains coordinate 5
/// to 0, which a level-4 requirement can escape at stage 6.
pub fn f2_spec() -> TableFamilySpec {
    TableFamilySpec {
        horizon: 6,
        rules: vec![TableRule {
            e: 4,
            pattern: PartialAssignment::single(5, 1),
            input: 0,
            settle: 6,
            value: 0,
        }],
        index_bound: None,
    }
}

pub fn f2() -> TableFamily {
    load_table(f2_spec()).expect("f2 is valid")
}

/// A family without a horizon. Index 0 converges on every input as soon as a
/// 1 is visible in the oracle, so its class is the singleton all-zero path:
/// nonempty at every stage but never settled, and with an isolated point.
/// All other indices diverge everywhere.
pub struct ShrinkingFamily;

impl FunctionalFamily for ShrinkingFamily {
    fn eval(&self, e: u32, oracle: &BitString, _input: u32, stage: u32) -> Result<OracleAnswer> {
        if e != 0 {
            return Ok(OracleAnswer::Unsettled);
        }
        let visible = (oracle.len() as u32).min(stage);
        for p in 0..visible {
            if oracle.get(p as usize) == Some(1) {
                return Ok(OracleAnswer::Converged { value: 0, settle: p + 1 });
            }
        }
        Ok(OracleAnswer::Unsettled)
    }

    fn horizon(&self) -> Option<u32> {
        None
    }
}

/// A random bit string of the given length.
pub fn random_bits(rng: &mut impl Rng, len: u32) -> BitString {
    let mut s = BitString::new();
    for _ in 0..len {
        s.push(rng.gen_range(0..=1));
    }
    s
}

/// A random valid table family: up to `max_indices` indices, a handful of
/// rules each, all settling within `horizon`. Rules whose pattern would
/// overlap an earlier rule for the same (index, input) are dropped, so the
/// result always validates.
pub fn random_family(rng: &mut impl Rng, max_indices: u32, horizon: u32) -> TableFamily {
    let mut rules: Vec<TableRule> = Vec::new();
    for e in 0..max_indices {
        if rng.gen_bool(0.25) {
            continue; // leave some indices everywhere divergent
        }
        for input in 0..2u32 {
            let n_rules = rng.gen_range(0..=2);
            for _ in 0..n_rules {
                let support = rng.gen_range(0..=3.min(horizon));
                let mut pattern = PartialAssignment::empty();
                for _ in 0..support {
                    let coord = rng.gen_range(0..horizon.max(1));
                    let bit = rng.gen_range(0..=1);
                    if let Some(p) = pattern.merge(&PartialAssignment::single(coord, bit)) {
                        pattern = p;
                    }
                }
                let settle = rng.gen_range(pattern.depth()..=horizon);
                let rule = TableRule { e, pattern, input, settle, value: rng.gen_range(0..4) };
                let overlaps = rules.iter().any(|r| {
                    r.e == e && r.input == input && r.pattern.merge(&rule.pattern).is_some()
                });
                if !overlaps {
                    rules.push(rule);
                }
            }
        }
    }
    load_table(TableFamilySpec { horizon, rules, index_bound: None })
        .expect("generator only emits valid specs")
}

/// A random finite-output parity transducer with `out_len` output bits, each
/// reading a few input coordinates below `max_use`.
pub fn random_transducer(
    rng: &mut impl Rng,
    out_len: u32,
    max_use: u32,
) -> crate::machine::TableTransducer {
    let mut taps = Vec::new();
    let mut flips = Vec::new();
    let mut reach = 0u32;
    for _ in 0..out_len {
        let k = rng.gen_range(0..=2u32);
        let mut t: Vec<u32> = (0..k).map(|_| rng.gen_range(0..max_use.max(1))).collect();
        // pad so the use bound never decreases across output bits
        if reach > 0 && t.iter().map(|&c| c + 1).max().unwrap_or(0) < reach {
            t.push(reach - 1);
        }
        t.sort_unstable();
        t.dedup();
        reach = reach.max(t.iter().map(|&c| c + 1).max().unwrap_or(0));
        taps.push(t);
        flips.push(rng.gen_range(0..=1u8));
    }
    crate::machine::TableTransducer::new(taps, flips).expect("generator keeps modulus monotone")
}

/// Rules for an index whose functional converges on input 0 exactly when the
/// two join components map to different outputs under `psi` within the first
/// `window` output bits. The pattern set is one full assignment per
/// disagreeing pair of component prefixes, so patterns are pairwise
/// incompatible by construction. The rules settle at stage 2·u where u is the
/// input length `psi` needs for the window.
pub fn disagreement_rules(psi: &dyn Transducer, window: u32, e: u32) -> Vec<TableRule> {
    let u = psi.needed_input(window);
    let settle = 2 * u;
    let mut rules = Vec::new();
    for a in enumerate_strings(u) {
        let pa = psi.output_prefix(&a, window);
        for b in enumerate_strings(u) {
            let pb = psi.output_prefix(&b, window);
            if pa != pb {
                let joined = join(&a, &b).expect("equal lengths");
                rules.push(TableRule {
                    e,
                    pattern: PartialAssignment::from_prefix(&joined),
                    input: 0,
                    settle,
                    value: 0,
                });
            }
        }
    }
    rules
}
