//! Stagewise constructions and their verifiers.
//!
//! Each builder produces a trace (a σ-sequence or a class sequence) from
//! finite oracles and a settled functional family; the matching verifier
//! re-checks the defining identities of the construction directly against
//! the family, so a corrupted trace is caught by the identity it breaks.
//! The builders answer their existential questions by bounded search, which
//! is exact at the family's horizon; families without a horizon are refused
//! rather than approximated.

use serde::{Deserialize, Serialize};

use crate::classes::{
    approx, is_empty, least_branching_node, member_prefix, settle_stage, ClassExpr,
    EmptinessVerdict,
};
use crate::error::{Error, Result};
use crate::machine::{FunctionalFamily, OracleAnswer, Transducer};
use crate::space::{enumerate_strings, BitString};

/// A finite, re-readable bit oracle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSource {
    bits: BitString,
}

impl BitSource {
    pub fn new(bits: BitString) -> Self {
        BitSource { bits }
    }

    pub fn available(&self) -> u32 {
        self.bits.len() as u32
    }

    pub fn bit(&self, i: u32) -> Result<u8> {
        self.bits
            .get(i as usize)
            .ok_or(Error::OracleExhausted { index: i, available: self.available() })
    }

    /// Membership when the source is read as a set of naturals.
    pub fn contains(&self, i: u32) -> Result<bool> {
        Ok(self.bit(i)? == 1)
    }
}

impl std::str::FromStr for BitSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(BitSource { bits: s.parse()? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstructionKind {
    Join,
    Pjinv,
    Cpa,
}

/// One stage of a σ-sequence construction. Odd join stages carry the block
/// index and the oracle answer; odd inversion stages carry whether the
/// search succeeded; even stages carry the encoded bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SigmaStage {
    pub j: u32,
    pub sigma: BitString,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub i: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_z: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit: Option<u8>,
}

impl SigmaStage {
    fn plain(j: u32, sigma: BitString) -> Self {
        SigmaStage { j, sigma, i: None, in_z: None, found: None, bit: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigmaTrace {
    pub kind: ConstructionKind,
    pub stages: Vec<SigmaStage>,
}

impl SigmaTrace {
    /// The constructed prefix: the last stage's string.
    pub fn limit_prefix(&self) -> BitString {
        self.stages.last().map_or_else(BitString::new, |s| s.sigma.clone())
    }
}

/// Identity checked by a verifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CheckKind {
    ARecovery,
    JumpReadout,
    BlockDecode,
    WReadout,
    SplitTag,
    JumpAvoidReadout,
    MemberConsistency,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub n: u32,
    pub kind: CheckKind,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    fn push(&mut self, n: u32, kind: CheckKind, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { n, kind, pass, detail: detail.into() });
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn require_horizon(fam: &dyn FunctionalFamily) -> Result<u32> {
    fam.horizon().ok_or_else(|| {
        Error::InvalidConfig("this construction requires a finite-horizon family".into())
    })
}

/// σ_{2n} followed by i zeros and a one: the block encoding of i.
fn block(base: &BitString, i: u32) -> BitString {
    let mut out = base.clone();
    for _ in 0..i {
        out.push(0);
    }
    out.push(1);
    out
}

/// The least (shortest, then lexicographic) extension of `base` on which
/// functional `e` converges on `input` within `|σ|` steps, searching up to
/// the given length. Exact when the length bound covers the horizon.
fn least_convergent_extension(
    fam: &dyn FunctionalFamily,
    e: u32,
    base: &BitString,
    input: u32,
    max_len: u32,
    require_input_cap: bool,
) -> Result<Option<BitString>> {
    for len in base.len() as u32..=max_len.max(base.len() as u32) {
        if require_input_cap && input >= len {
            continue;
        }
        for ext in enumerate_strings(len - base.len() as u32) {
            let cand = base.concat(&ext);
            if fam.eval(e, &cand, input, len)?.is_converged() {
                return Ok(Some(cand));
            }
        }
    }
    Ok(None)
}

/// Build the σ-sequence that joins oracle A with set Z: odd stages find the
/// least block index on which Z and the convergence question agree and
/// extend accordingly; even stages append the next A bit.
pub fn join_construct(
    a: &BitSource,
    z: &BitSource,
    fam: &dyn FunctionalFamily,
    n_max: u32,
    search_bound: u32,
) -> Result<SigmaTrace> {
    let h = require_horizon(fam)?;
    if search_bound < h {
        return Err(Error::InvalidConfig(format!(
            "search bound {search_bound} is below the family horizon {h}"
        )));
    }
    let mut stages = vec![SigmaStage::plain(0, BitString::new())];
    let mut sigma = BitString::new();
    for n in 0..n_max {
        let mut chosen = None;
        for i in 0..z.available() {
            let base = block(&sigma, i);
            let bound = search_bound.max(base.len() as u32);
            let in_s =
                least_convergent_extension(fam, n, &base, 0, bound, false)?.is_some();
            let in_z = z.contains(i)?;
            if in_z == in_s {
                chosen = Some((i, in_z, base, bound));
                break;
            }
        }
        let Some((i, in_z, base, bound)) = chosen else {
            return Err(Error::OracleExhausted {
                index: z.available(),
                available: z.available(),
            });
        };
        sigma = if in_z {
            least_convergent_extension(fam, n, &base, 0, bound, false)?
                .expect("agreement certified convergence")
        } else {
            base
        };
        stages.push(SigmaStage {
            j: 2 * n + 1,
            sigma: sigma.clone(),
            i: Some(i),
            in_z: Some(in_z),
            found: None,
            bit: None,
        });
        let bit = a.bit(n)?;
        sigma = sigma.append(bit);
        stages.push(SigmaStage {
            j: 2 * n + 2,
            sigma: sigma.clone(),
            i: None,
            in_z: None,
            found: None,
            bit: Some(bit),
        });
    }
    Ok(SigmaTrace { kind: ConstructionKind::Join, stages })
}

fn trace_structure<'t>(
    trace: &'t SigmaTrace,
    kind: ConstructionKind,
    strict: bool,
) -> Result<&'t [SigmaStage]> {
    if trace.kind != kind {
        return Err(Error::MalformedTrace(format!(
            "expected a {kind:?} trace, found {:?}",
            trace.kind
        )));
    }
    let stages = &trace.stages;
    if stages.is_empty() || stages[0].j != 0 || !stages[0].sigma.is_empty() {
        return Err(Error::MalformedTrace("stage 0 must carry the empty string".into()));
    }
    for (idx, st) in stages.iter().enumerate() {
        if st.j != idx as u32 {
            return Err(Error::MalformedTrace(format!("stage {idx} labelled {}", st.j)));
        }
        if idx > 0 {
            let prev = &stages[idx - 1];
            let ok = if strict || st.j % 2 == 0 {
                st.sigma.strictly_extends(&prev.sigma)
            } else {
                st.sigma.extends(&prev.sigma)
            };
            if !ok {
                return Err(Error::MalformedTrace(format!(
                    "stage {idx} does not extend its predecessor"
                )));
            }
        }
    }
    if stages.len() % 2 == 0 {
        return Err(Error::MalformedTrace("trace ends mid-pair".into()));
    }
    Ok(stages)
}

/// Check the join identities on a trace: A is recovered from the even
/// stages, the jump of the limit reads off the odd stages, and each block
/// decodes a unique agreement index.
pub fn join_verify(
    trace: &SigmaTrace,
    a: &BitSource,
    z: &BitSource,
    fam: &dyn FunctionalFamily,
) -> Result<VerifyReport> {
    let h = require_horizon(fam)?;
    let stages = trace_structure(trace, ConstructionKind::Join, true)?;
    let limit = trace.limit_prefix();
    let limit_stage = h.max(limit.len() as u32);
    let mut report = VerifyReport::default();
    let pairs = (stages.len() - 1) / 2;
    for n in 0..pairs as u32 {
        let even_prev = &stages[(2 * n) as usize];
        let odd = &stages[(2 * n + 1) as usize];
        let even = &stages[(2 * n + 2) as usize];

        let want = a.bit(n)?;
        let got = even.sigma.get(odd.sigma.len());
        report.push(
            n,
            CheckKind::ARecovery,
            got == Some(want),
            format!("bit at {} is {:?}, oracle says {}", odd.sigma.len(), got, want),
        );

        let at_odd = fam.eval(n, &odd.sigma, 0, odd.sigma.len() as u32)?.is_converged();
        let at_limit = fam.eval(n, &limit, 0, limit_stage)?.is_converged();
        report.push(
            n,
            CheckKind::JumpReadout,
            at_odd == at_limit,
            format!("converged at stage string: {at_odd}, on the limit prefix: {at_limit}"),
        );

        // Exactly one block index embeds into the limit after σ_{2n}.
        let tail = limit.suffix(even_prev.sigma.len());
        let decoded = (0..tail.len()).find(|&p| tail.get(p) == Some(1)).map(|p| p as u32);
        let recorded = odd.i;
        let _ = z;
        report.push(
            n,
            CheckKind::BlockDecode,
            decoded.is_some() && decoded == recorded,
            format!("decoded block index {decoded:?}, recorded {recorded:?}"),
        );
    }
    Ok(report)
}

/// Build the inversion σ-sequence: odd stages take the least extension
/// putting n into the stage enumeration of the e-th oracle set, if any, and
/// even stages append the next A bit.
pub fn pjinv_construct(
    e: u32,
    a: &BitSource,
    fam: &dyn FunctionalFamily,
    n_max: u32,
    search_bound: u32,
) -> Result<SigmaTrace> {
    let h = require_horizon(fam)?;
    if search_bound < h {
        return Err(Error::InvalidConfig(format!(
            "search bound {search_bound} is below the family horizon {h}"
        )));
    }
    let mut stages = vec![SigmaStage::plain(0, BitString::new())];
    let mut sigma = BitString::new();
    for n in 0..n_max {
        // Membership in the stage-|σ| enumeration caps the input at |σ|.
        let bound = search_bound.max(sigma.len() as u32).max(n + 1);
        let found = least_convergent_extension(fam, e, &sigma, n, bound, true)?;
        let hit = found.is_some();
        if let Some(s) = found {
            sigma = s;
        }
        stages.push(SigmaStage {
            j: 2 * n + 1,
            sigma: sigma.clone(),
            i: None,
            in_z: None,
            found: Some(hit),
            bit: None,
        });
        let bit = a.bit(n)?;
        sigma = sigma.append(bit);
        stages.push(SigmaStage {
            j: 2 * n + 2,
            sigma: sigma.clone(),
            i: None,
            in_z: None,
            found: None,
            bit: Some(bit),
        });
    }
    Ok(SigmaTrace { kind: ConstructionKind::Pjinv, stages })
}

/// Check the inversion identities: A recovery on even stages and the
/// oracle-set readout "n enumerated by the limit iff n enumerated at the odd
/// stage string".
pub fn pjinv_verify(
    trace: &SigmaTrace,
    e: u32,
    a: &BitSource,
    fam: &dyn FunctionalFamily,
) -> Result<VerifyReport> {
    let h = require_horizon(fam)?;
    let stages = trace_structure(trace, ConstructionKind::Pjinv, false)?;
    let limit = trace.limit_prefix();
    let limit_stage = h.max(limit.len() as u32);
    let mut report = VerifyReport::default();
    let pairs = (stages.len() - 1) / 2;
    for n in 0..pairs as u32 {
        let odd = &stages[(2 * n + 1) as usize];
        let even = &stages[(2 * n + 2) as usize];

        let want = a.bit(n)?;
        let got = even.sigma.get(odd.sigma.len());
        report.push(
            n,
            CheckKind::ARecovery,
            got == Some(want),
            format!("bit at {} is {:?}, oracle says {}", odd.sigma.len(), got, want),
        );

        let len = odd.sigma.len() as u32;
        let at_odd = n < len && fam.eval(e, &odd.sigma, n, len)?.is_converged();
        let at_limit = fam.eval(e, &limit, n, limit_stage)?.is_converged();
        report.push(
            n,
            CheckKind::WReadout,
            at_odd == at_limit,
            format!("enumerated at stage string: {at_odd}, by the limit prefix: {at_limit}"),
        );
    }
    Ok(report)
}

/// Splits a nonempty class into two nonempty disjoint subclasses.
pub trait Splitter {
    fn split(&self, expr: &ClassExpr, which: u8) -> Result<ClassExpr>;
}

/// The branching-node splitter: restrict the class below the two children of
/// its least branching node. Satisfies the disjoint-subclass contract for
/// settled families.
pub struct CylinderSplitter<'f> {
    fam: &'f dyn FunctionalFamily,
    budget: u32,
    cap: u32,
}

/// Validate that the ambient class branches at all, then hand out the
/// splitter.
pub fn cylinder_splitter<'f>(
    ambient: &ClassExpr,
    fam: &'f dyn FunctionalFamily,
    budget: u32,
    cap: u32,
) -> Result<CylinderSplitter<'f>> {
    least_branching_node(ambient, fam, &BitString::new(), budget, cap)?;
    Ok(CylinderSplitter { fam, budget, cap })
}

impl Splitter for CylinderSplitter<'_> {
    fn split(&self, expr: &ClassExpr, which: u8) -> Result<ClassExpr> {
        let node = least_branching_node(expr, self.fam, &BitString::new(), self.budget, self.cap)?;
        Ok(ClassExpr::restrict(expr.clone(), node.append(which)))
    }
}

/// One stage of the class-sequence construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FStage {
    pub j: u32,
    pub expr: ClassExpr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_intersection: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_bit: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FTrace {
    pub kind: ConstructionKind,
    pub stages: Vec<FStage>,
}

impl FTrace {
    pub fn final_expr(&self) -> Result<&ClassExpr> {
        self.stages
            .last()
            .map(|s| &s.expr)
            .ok_or_else(|| Error::MalformedTrace("empty class-sequence trace".into()))
    }
}

/// Build the nested class sequence: odd stages intersect with the
/// jump-avoidance condition when that leaves the class nonempty (recording
/// which), and even stages split by the next A bit.
pub fn cpa_style_construct(
    e: u32,
    a: &BitSource,
    ambient: &ClassExpr,
    splitter: &dyn Splitter,
    fam: &dyn FunctionalFamily,
    n_max: u32,
    budget: u32,
    cap: u32,
) -> Result<FTrace> {
    let mut q = ambient.clone();
    let mut stages =
        vec![FStage { j: 0, expr: q.clone(), empty_intersection: None, split_bit: None }];
    for n in 0..n_max {
        let candidate = ClassExpr::Intersect(vec![q.clone(), ClassExpr::JumpAvoid { e, n }]);
        let empty = match is_empty(&candidate, fam, budget, cap)? {
            EmptinessVerdict::EmptyAtStage(_) => true,
            EmptinessVerdict::NonemptyLimit => false,
            EmptinessVerdict::NonemptyAtBudget(b) => {
                return Err(Error::InconclusiveBudget { budget: b })
            }
        };
        if !empty {
            q = candidate;
        }
        stages.push(FStage {
            j: 2 * n + 1,
            expr: q.clone(),
            empty_intersection: Some(empty),
            split_bit: None,
        });
        let bit = a.bit(n)?;
        q = splitter.split(&q, bit)?;
        stages.push(FStage { j: 2 * n + 2, expr: q.clone(), empty_intersection: None, split_bit: Some(bit) });
    }
    Ok(FTrace { kind: ConstructionKind::Cpa, stages })
}

/// Check the class-sequence identities: the split tags recover A, membership
/// of n in the pseudojump of the limit matches the recorded emptiness of the
/// odd stage, and a member of the final class meets every stage class.
pub fn cpa_style_verify(
    ftrace: &FTrace,
    e: u32,
    a: &BitSource,
    fam: &dyn FunctionalFamily,
    depth: u32,
    budget: u32,
    cap: u32,
) -> Result<VerifyReport> {
    let h = require_horizon(fam)?;
    if ftrace.kind != ConstructionKind::Cpa {
        return Err(Error::MalformedTrace(format!(
            "expected a class-sequence trace, found {:?}",
            ftrace.kind
        )));
    }
    for (idx, st) in ftrace.stages.iter().enumerate() {
        if st.j != idx as u32 {
            return Err(Error::MalformedTrace(format!("stage {idx} labelled {}", st.j)));
        }
    }
    let member = member_prefix(ftrace.final_expr()?, fam, depth, budget, cap)?;
    let b = &member.prefix;
    let limit_stage = h.max(b.len() as u32);
    let mut report = VerifyReport::default();
    let pairs = (ftrace.stages.len() - 1) / 2;
    for n in 0..pairs as u32 {
        let odd = &ftrace.stages[(2 * n + 1) as usize];
        let even = &ftrace.stages[(2 * n + 2) as usize];

        let want = a.bit(n)?;
        report.push(
            n,
            CheckKind::SplitTag,
            even.split_bit == Some(want),
            format!("split tag {:?}, oracle says {}", even.split_bit, want),
        );

        // n in the pseudojump of the member iff the avoidance intersection
        // was empty.
        let in_jump = if n % 2 == 0 {
            match b.get((n / 2) as usize) {
                Some(bit) => bit == 1,
                None => {
                    return Err(Error::PrefixTooShort(format!(
                        "member prefix too short for jump coordinate {n}"
                    )))
                }
            }
        } else {
            fam.eval(e, b, n / 2, limit_stage)?.is_converged()
        };
        let recorded_empty = odd.empty_intersection.unwrap_or(false);
        report.push(
            n,
            CheckKind::JumpAvoidReadout,
            in_jump == recorded_empty,
            format!("in pseudojump: {in_jump}, intersection recorded empty: {recorded_empty}"),
        );
    }
    for st in &ftrace.stages {
        let stage = settle_stage(&st.expr, fam).map_or(budget, |t| t.min(budget)).max(1);
        let set = approx(&st.expr, fam, stage, cap)?;
        report.push(
            st.j,
            CheckKind::MemberConsistency,
            set.meets(b),
            format!("member {b} against the stage-{} class", st.j),
        );
    }
    Ok(report)
}

/// A family extended with one composed index evaluating the source index
/// through a total transducer: the new index enumerates on an oracle exactly
/// what the source enumerates on its image.
pub struct ComposedFamily<'a> {
    base: &'a dyn FunctionalFamily,
    psi: &'a dyn Transducer,
    source: u32,
    index: u32,
    horizon: Option<u32>,
}

impl<'a> ComposedFamily<'a> {
    pub fn index(&self) -> u32 {
        self.index
    }
}

/// Compose index `e` with the transducer under a fresh index. The horizon
/// widens to cover the transducer's input demand for the original horizon.
pub fn compose_pseudojump<'a>(
    base: &'a dyn FunctionalFamily,
    e: u32,
    psi: &'a dyn Transducer,
    new_index: u32,
) -> Result<ComposedFamily<'a>> {
    if let Some(bound) = base.index_bound() {
        if e >= bound {
            return Err(Error::IndexOutOfBounds { index: e, bound });
        }
    }
    let horizon = base.horizon().map(|h| h.max(psi.needed_input(h)));
    Ok(ComposedFamily { base, psi, source: e, index: new_index, horizon })
}

impl FunctionalFamily for ComposedFamily<'_> {
    fn eval(&self, e: u32, oracle: &BitString, input: u32, stage: u32) -> Result<OracleAnswer> {
        if e != self.index {
            return self.base.eval(e, oracle, input, stage);
        }
        // Only the visible part of the oracle may influence the answer.
        let visible = oracle.restrict(oracle.len().min(stage as usize)).expect("within length");
        let image = self.psi.output_prefix(&visible, stage);
        self.base.eval(self.source, &image, input, stage)
    }

    fn horizon(&self) -> Option<u32> {
        self.horizon
    }

    fn index_bound(&self) -> Option<u32> {
        self.base.index_bound().map(|b| b.max(self.index + 1))
    }
}
