//! Finite-injury construction of a thin perfect class, plus the analysis
//! procedures that exploit the resulting dichotomy.
//!
//! The construction maintains a uniform treemap and a priority-ordered list
//! of requirements R(e, σ₁…σₙ). A requirement requests attention when the
//! product of its current node cylinders still meets the stage approximation
//! of class e but some tuple of deeper nodes escapes it; acting grafts those
//! deeper nodes into place, injuring every requirement at a strictly higher
//! level. On finite-horizon families the run reaches a stage after which
//! nothing requests attention, and from then on every requirement's node
//! product is either disjoint from its class or trapped inside it.
//!
//! Stage maps are reconstructed from the action log on demand, so node
//! images can be evaluated at any depth without a working-table cap.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{approx_depth, pi01_approx, FunctionalFamily, Transducer};
use crate::space::{enumerate_strings, join_component, BitString, ClopenSet};
use crate::treemap::Treemap;

pub const TRACE_SCHEMA: &str = "pi01/priority-trace/v1";

/// Run limits. `max_requirements` bounds the instantiated requirement count,
/// since ordered tuples explode combinatorially with the level cap;
/// `max_tuple` restricts tuple arity the same way.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorityConfig {
    pub level_cap: u32,
    pub stage_cap: u32,
    pub max_tuple: u32,
    pub max_requirements: u64,
    pub depth_cap: u32,
}

impl PriorityConfig {
    pub fn new(level_cap: u32, stage_cap: u32) -> Self {
        PriorityConfig {
            level_cap,
            stage_cap,
            max_tuple: 2,
            max_requirements: 20_000,
            depth_cap: crate::space::DEFAULT_DEPTH_CAP,
        }
    }
}

/// R(e, σ₁…σₙ): keep the product of the σᵢ-node cylinders away from class e
/// if possible. All σᵢ share a length (the level), are pairwise distinct,
/// and e is at most the level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub e: u32,
    pub sigmas: Vec<BitString>,
}

impl Requirement {
    pub fn level(&self) -> u32 {
        self.sigmas.first().map_or(0, |s| s.len() as u32)
    }

    pub fn n(&self) -> usize {
        self.sigmas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level();
        if self.sigmas.is_empty() || self.sigmas.len() as u64 > 1u64 << l {
            return Err(Error::InvalidConfig(format!("{self}: tuple arity out of range")));
        }
        if self.sigmas.iter().any(|s| s.len() as u32 != l) {
            return Err(Error::InvalidConfig(format!("{self}: mixed tuple lengths")));
        }
        for (i, a) in self.sigmas.iter().enumerate() {
            if self.sigmas[i + 1..].contains(a) {
                return Err(Error::InvalidConfig(format!("{self}: tuple entries not distinct")));
            }
        }
        if self.e > l {
            return Err(Error::InvalidConfig(format!("{self}: index exceeds level")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Requirement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "R({}; ", self.e)?;
        for (i, s) in self.sigmas.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

fn count_tuples(strings: u64, n: u64) -> u64 {
    (0..n).fold(1u64, |acc, j| acc.saturating_mul(strings.saturating_sub(j)))
}

/// All requirements up to the level cap in priority order: level-major, then
/// by index, tuple arity, and tuple lexicographic order. Earlier means
/// higher priority.
pub fn enumerate_requirements(
    level_cap: u32,
    max_tuple: u32,
    max_requirements: u64,
) -> Result<Vec<Requirement>> {
    let mut count = 0u64;
    for l in 0..=level_cap {
        let strings = 1u64 << l;
        for n in 1..=(max_tuple as u64).min(strings) {
            count = count.saturating_add((l as u64 + 1).saturating_mul(count_tuples(strings, n)));
        }
    }
    if count > max_requirements {
        return Err(Error::RequirementCapExceeded { count, cap: max_requirements });
    }

    let mut out = Vec::with_capacity(count as usize);
    for l in 0..=level_cap {
        let strings: Vec<BitString> = enumerate_strings(l).collect();
        for e in 0..=l {
            for n in 1..=(max_tuple as usize).min(strings.len()) {
                let mut idx = vec![0usize; n];
                'tuples: loop {
                    let distinct = (0..n).all(|i| !idx[i + 1..].contains(&idx[i]));
                    if distinct {
                        let sigmas = idx.iter().map(|&i| strings[i].clone()).collect();
                        let r = Requirement { e, sigmas };
                        debug_assert!(r.validate().is_ok());
                        out.push(r);
                    }
                    // odometer in lexicographic order
                    for pos in (0..n).rev() {
                        idx[pos] += 1;
                        if idx[pos] < strings.len() {
                            continue 'tuples;
                        }
                        idx[pos] = 0;
                    }
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Deeper nodes escaping a class: each ρᵢ strictly extends the requirement's
/// σᵢ at a common level k.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub k: u32,
    pub rhos: Vec<BitString>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    #[serde(rename = "s")]
    pub stage: u32,
    pub actor: Requirement,
    pub witness: Witness,
    pub injured: Vec<Requirement>,
}

/// Deterministic run record: the acting stages plus the final stage map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorityTrace {
    pub schema: String,
    pub config: PriorityConfig,
    pub horizon: Option<u32>,
    pub stages: Vec<ActionRecord>,
    pub quiescent_at: Option<u32>,
    #[serde(rename = "final")]
    pub final_map: Treemap,
}

/// Disjoint-or-included verdict for a requirement's node product against its
/// class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dichotomy {
    Disjoint,
    Included,
    Undetermined,
}

pub struct PriorityState<'f> {
    cfg: PriorityConfig,
    fam: &'f dyn FunctionalFamily,
    requirements: Vec<Requirement>,
    stage: u32,
    log: Vec<ActionRecord>,
}

fn eval_log(log: &[ActionRecord], node: &BitString) -> BitString {
    match log.split_last() {
        None => node.clone(),
        Some((last, rest)) => {
            let l = last.actor.level() as usize;
            if node.len() < l {
                return eval_log(rest, node);
            }
            let head = node.restrict(l).expect("checked length");
            let tail = node.suffix(l);
            let k = last.witness.k as usize;
            let base = match last.actor.sigmas.iter().position(|s| *s == head) {
                Some(i) => last.witness.rhos[i].clone(),
                None => {
                    let mut padded = head;
                    for _ in l..k {
                        padded.push(0);
                    }
                    padded
                }
            };
            eval_log(rest, &base.concat(&tail))
        }
    }
}

impl<'f> PriorityState<'f> {
    pub fn new(cfg: PriorityConfig, fam: &'f dyn FunctionalFamily) -> Result<Self> {
        let requirements =
            enumerate_requirements(cfg.level_cap, cfg.max_tuple, cfg.max_requirements)?;
        Ok(PriorityState { cfg, fam, requirements, stage: 0, log: Vec::new() })
    }

    pub fn config(&self) -> &PriorityConfig {
        &self.cfg
    }

    pub fn family(&self) -> &'f dyn FunctionalFamily {
        self.fam
    }

    pub fn requirements(&self) -> &[Requirement] {
        &self.requirements
    }

    pub fn stage(&self) -> u32 {
        self.stage
    }

    pub fn log(&self) -> &[ActionRecord] {
        &self.log
    }

    /// Current image of a tree node, reconstructed from the action log.
    /// Total in the node depth.
    pub fn eval_node(&self, node: &BitString) -> BitString {
        eval_log(&self.log, node)
    }

    /// Image length at a level (well defined: stage maps stay uniform).
    pub fn level_length(&self, level: u32) -> u32 {
        self.eval_node(&BitString::zeros(level)).len() as u32
    }

    /// Uniform image length of level-e nodes.
    pub fn m_of(&self, e: u32) -> Result<u32> {
        if e > self.cfg.level_cap {
            return Err(Error::LevelOutOfRange { level: e, cap: self.cfg.level_cap });
        }
        Ok(self.level_length(e))
    }

    /// Materialize the current stage map as a finite table.
    pub fn materialize(&self, level_cap: u32) -> Treemap {
        let mut table = BTreeMap::new();
        for l in 0..=level_cap {
            for node in enumerate_strings(l) {
                let image = self.eval_node(&node);
                table.insert(node, image);
            }
        }
        Treemap::from_table(level_cap, table).expect("stage maps satisfy the embedding law")
    }

    /// Stage map after a prefix of the action log, for replaying transitions.
    pub fn materialize_after(&self, actions: usize, level_cap: u32) -> Treemap {
        let mut table = BTreeMap::new();
        for l in 0..=level_cap {
            for node in enumerate_strings(l) {
                let image = eval_log(&self.log[..actions], &node);
                table.insert(node, image);
            }
        }
        Treemap::from_table(level_cap, table).expect("stage maps satisfy the embedding law")
    }

    /// The settled depth-d strings of class e at the given stage.
    fn class_strings(&self, e: u32, stage: u32) -> Result<(u32, Vec<BitString>)> {
        let d = approx_depth(self.fam, stage);
        let p = pi01_approx(self.fam, e, stage, self.cfg.depth_cap)?;
        let strings = p.strings_at_depth(d, self.cfg.depth_cap)?;
        Ok((d, strings))
    }

    /// Does the product of the given node images meet the class given by its
    /// depth-d strings? Exact: a depth-d member constrains each component
    /// only on the bits the image already fixes.
    fn images_meet(images: &[BitString], d: u32, class_strings: &[BitString]) -> bool {
        let n = images.len() as u32;
        class_strings.iter().any(|w| {
            (0..d).all(|c| {
                let (i, k) = join_component(n, c);
                match images[(i - 1) as usize].get(k as usize) {
                    Some(b) => w.get(c as usize) == Some(b),
                    None => true,
                }
            })
        })
    }

    /// Is the product of the requirement's node cylinders disjoint from the
    /// stage approximation of its class?
    pub fn satisfied(&self, r: &Requirement) -> Result<bool> {
        let (d, strings) = self.class_strings(r.e, self.stage)?;
        let images: Vec<BitString> = r.sigmas.iter().map(|s| self.eval_node(s)).collect();
        Ok(!Self::images_meet(&images, d, &strings))
    }

    /// The least escape witness at stage s, if any: node products still meet
    /// the class, but some tuple of extensions at a level k ≤ s avoids it.
    /// The search is complete: once image lengths reach the approximation
    /// depth, a node product either lies inside the class or misses it
    /// entirely, so no witness can first appear beyond that level.
    pub fn requesting_attention(&self, r: &Requirement) -> Result<Option<Witness>> {
        let s = self.stage;
        let l = r.level();
        if s <= l {
            return Ok(None);
        }
        let (d, strings) = self.class_strings(r.e, s)?;
        let images: Vec<BitString> = r.sigmas.iter().map(|x| self.eval_node(x)).collect();
        if !Self::images_meet(&images, d, &strings) {
            return Ok(None); // already satisfied
        }
        let kstar = (l + 1..).find(|&k| self.level_length(k) >= d).expect("lengths grow");
        let kmax = kstar.min(s);
        // Existence at kmax settles existence everywhere: shallower escapes
        // extend to kmax, and at image length ≥ d deeper levels add nothing.
        if self.least_escape_at(r, kmax, d, &strings, true)?.is_none() {
            return Ok(None);
        }
        for k in l + 1..=kmax {
            if let Some(rhos) = self.least_escape_at(r, k, d, &strings, false)? {
                return Ok(Some(Witness { k, rhos }));
            }
        }
        unreachable!("an escape exists at kmax, so some k at most kmax carries the least one")
    }

    /// Scan tuples (ρ₁…ρₙ) of level-k extensions of the σᵢ in lexicographic
    /// order; return the first whose node product avoids the class.
    fn least_escape_at(
        &self,
        r: &Requirement,
        k: u32,
        d: u32,
        class_strings: &[BitString],
        existence_only: bool,
    ) -> Result<Option<Vec<BitString>>> {
        let l = r.level();
        let n = r.n();
        let ext = k - l;
        let per = 1u64 << ext;
        // Images of all candidate nodes, computed once per component.
        let candidates: Vec<Vec<(BitString, BitString)>> = r
            .sigmas
            .iter()
            .map(|sigma| {
                enumerate_strings(ext)
                    .map(|e| {
                        let rho = sigma.concat(&e);
                        let img = self.eval_node(&rho);
                        (rho, img)
                    })
                    .collect()
            })
            .collect();
        // Fast membership when the images pin every approximation bit.
        let masks: Option<HashSet<u32>> = if self.level_length(k) >= d {
            Some(class_strings.iter().map(BitString::lex_index).collect())
        } else {
            None
        };
        let mut idx = vec![0u64; n];
        loop {
            let images: Vec<&BitString> =
                (0..n).map(|i| &candidates[i][idx[i] as usize].1).collect();
            let meets = match &masks {
                Some(set) => {
                    let mut mask = 0u32;
                    for c in 0..d {
                        let (i, kk) = join_component(n as u32, c);
                        let b = images[(i - 1) as usize].get(kk as usize).expect("length >= d");
                        mask = (mask << 1) | u32::from(b);
                    }
                    set.contains(&mask)
                }
                None => {
                    let owned: Vec<BitString> = images.iter().map(|&i| i.clone()).collect();
                    Self::images_meet(&owned, d, class_strings)
                }
            };
            if !meets {
                let rhos = (0..n).map(|i| candidates[i][idx[i] as usize].0.clone()).collect();
                return Ok(Some(rhos));
            }
            if existence_only {
                // keep scanning; any escape at all settles the question
            }
            let mut pos = n;
            loop {
                if pos == 0 {
                    return Ok(None);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < per {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// Apply a witness: graft the escape nodes over the requirement's σᵢ,
    /// slide every other level-l node down the all-zero extension, and carry
    /// subtrees along. Rechecks the witness against the current stage first.
    pub fn act(&mut self, r: &Requirement, w: &Witness) -> Result<Treemap> {
        r.validate()?;
        let l = r.level();
        if w.rhos.len() != r.n() {
            return Err(Error::StaleWitness(format!("{r}: witness arity mismatch")));
        }
        if w.k <= l || w.k > self.stage {
            return Err(Error::StaleWitness(format!(
                "{r}: witness level {} outside {}..={}",
                w.k,
                l + 1,
                self.stage
            )));
        }
        for (rho, sigma) in w.rhos.iter().zip(&r.sigmas) {
            if rho.len() as u32 != w.k || !rho.strictly_extends(sigma) {
                return Err(Error::StaleWitness(format!("{r}: {rho} does not extend {sigma}")));
            }
        }
        let (d, strings) = self.class_strings(r.e, self.stage)?;
        let sigma_images: Vec<BitString> = r.sigmas.iter().map(|x| self.eval_node(x)).collect();
        if !Self::images_meet(&sigma_images, d, &strings) {
            return Err(Error::StaleWitness(format!("{r}: requirement is already satisfied")));
        }
        let rho_images: Vec<BitString> = w.rhos.iter().map(|x| self.eval_node(x)).collect();
        if Self::images_meet(&rho_images, d, &strings) {
            return Err(Error::StaleWitness(format!("{r}: witness nodes no longer escape")));
        }
        let injured: Vec<Requirement> =
            self.requirements.iter().filter(|q| q.level() > l).cloned().collect();
        self.log.push(ActionRecord {
            stage: self.stage,
            actor: r.clone(),
            witness: w.clone(),
            injured,
        });
        Ok(self.materialize(self.cfg.level_cap))
    }

    /// Run one stage: act for the highest-priority requester, if any, then
    /// advance the stage counter.
    pub fn step(&mut self) -> Result<Option<ActionRecord>> {
        let mut chosen: Option<(Requirement, Witness)> = None;
        for r in &self.requirements {
            if let Some(w) = self.requesting_attention(r)? {
                chosen = Some((r.clone(), w));
                break;
            }
        }
        let acted = match chosen {
            Some((r, w)) => {
                self.act(&r, &w)?;
                Some(self.log.last().expect("just pushed").clone())
            }
            None => None,
        };
        self.stage += 1;
        Ok(acted)
    }

    /// Disjoint-or-included check for a requirement at the given stage
    /// horizon. Included verdicts need a settled family; they are decided by
    /// covering the σᵢ-subtrees with nodes whose images pin every
    /// approximation bit.
    pub fn dichotomy_check(&self, r: &Requirement, horizon: u32) -> Result<Dichotomy> {
        let (d, strings) = self.class_strings(r.e, horizon)?;
        let images: Vec<BitString> = r.sigmas.iter().map(|x| self.eval_node(x)).collect();
        if !Self::images_meet(&images, d, &strings) {
            return Ok(Dichotomy::Disjoint);
        }
        if self.fam.horizon().is_none_or(|h| h > horizon) {
            return Ok(Dichotomy::Undetermined);
        }
        let l = r.level();
        let lam = (l..).find(|&k| self.level_length(k) >= d).expect("lengths grow");
        let masks: HashSet<u32> = strings.iter().map(BitString::lex_index).collect();
        if self.covered_masks_all_in(&r.sigmas, lam, d, &masks)? {
            Ok(Dichotomy::Included)
        } else {
            Ok(Dichotomy::Undetermined)
        }
    }

    /// Do all tuples of level-`lam` descendants of the given nodes join into
    /// the mask set?
    fn covered_masks_all_in(
        &self,
        sigmas: &[BitString],
        lam: u32,
        d: u32,
        masks: &HashSet<u32>,
    ) -> Result<bool> {
        if lam > self.cfg.depth_cap {
            return Err(Error::DepthCapExceeded { required: lam, cap: self.cfg.depth_cap });
        }
        let n = sigmas.len();
        let per = 1u64 << (lam - sigmas[0].len() as u32);
        let candidates: Vec<Vec<BitString>> = sigmas
            .iter()
            .map(|sigma| {
                enumerate_strings(lam - sigma.len() as u32)
                    .map(|e| self.eval_node(&sigma.concat(&e)))
                    .collect()
            })
            .collect();
        let mut idx = vec![0u64; n];
        loop {
            let mut mask = 0u32;
            for c in 0..d {
                let (i, kk) = join_component(n as u32, c);
                let b = candidates[(i - 1) as usize][idx[(i - 1) as usize] as usize]
                    .get(kk as usize)
                    .expect("length >= d");
                mask = (mask << 1) | u32::from(b);
            }
            if !masks.contains(&mask) {
                return Ok(false);
            }
            let mut pos = n;
            loop {
                if pos == 0 {
                    return Ok(true);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < per {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// Decide whether index e belongs to the jump of the join of the given
    /// members, via the node-product dichotomy: find the distinctness level,
    /// restrict to the dichotomy length, and test the covered products
    /// against the class.
    pub fn jump_decide(&self, e: u32, prefixes: &[BitString], horizon: u32) -> Result<bool> {
        let Some(h) = self.fam.horizon().filter(|&h| h <= horizon) else {
            return Err(Error::InvalidConfig(
                "jump decision requires a family settled within the horizon".into(),
            ));
        };
        if prefixes.is_empty() {
            return Err(Error::InvalidConfig("jump decision needs at least one member".into()));
        }
        let min_len = prefixes.iter().map(|p| p.len()).min().unwrap() as u32;
        let mut l = 0;
        if prefixes.len() > 1 {
            l = (0..=min_len)
                .find(|&k| {
                    let cuts: Vec<_> =
                        prefixes.iter().map(|p| p.restrict(k as usize).unwrap()).collect();
                    (0..cuts.len()).all(|i| !cuts[i + 1..].contains(&cuts[i]))
                })
                .ok_or_else(|| {
                    Error::PrefixTooShort("members agree on every available bit".into())
                })?;
        }
        let m = self.m_of(e)?.max(l);
        if min_len < m {
            return Err(Error::PrefixTooShort(format!(
                "need {m} bits per member, got {min_len}"
            )));
        }
        let taus: Vec<BitString> =
            prefixes.iter().map(|p| p.restrict(m as usize).unwrap()).collect();
        let d = approx_depth(self.fam, horizon).min(h);
        let lam = (0u32..)
            .find(|&k| self.level_length(k) >= d.max(m))
            .expect("lengths grow");
        if lam > self.cfg.depth_cap {
            return Err(Error::DepthCapExceeded { required: lam, cap: self.cfg.depth_cap });
        }
        // Covering nodes per member: level-lam nodes whose image starts with τᵢ.
        let mut covers: Vec<Vec<BitString>> = vec![Vec::new(); taus.len()];
        for node in enumerate_strings(lam) {
            let img = self.eval_node(&node);
            for (i, tau) in taus.iter().enumerate() {
                if img.extends(tau) {
                    covers[i].push(img.clone());
                }
            }
        }
        for (i, c) in covers.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "prefix {} is not a member prefix of the constructed class",
                    taus[i]
                )));
            }
        }
        let (_, strings) = self.class_strings(e, horizon)?;
        let masks: HashSet<u32> = strings.iter().map(BitString::lex_index).collect();
        let n = taus.len();
        let mut idx = vec![0usize; n];
        let mut any_in = false;
        let mut any_out = false;
        loop {
            let mut mask = 0u32;
            for c in 0..d {
                let (i, kk) = join_component(n as u32, c);
                let b = covers[(i - 1) as usize][idx[(i - 1) as usize]]
                    .get(kk as usize)
                    .expect("length >= d");
                mask = (mask << 1) | u32::from(b);
            }
            if masks.contains(&mask) {
                any_in = true;
            } else {
                any_out = true;
            }
            let mut pos = n;
            loop {
                if pos == 0 {
                    return match (any_in, any_out) {
                        (true, false) => Ok(false), // product inside the class: e outside the jump
                        (false, true) => Ok(true),  // disjoint: the functional converges
                        _ => Err(Error::Undetermined(format!(
                            "jump of index {e} mixes verdicts at level {lam}"
                        ))),
                    };
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < covers[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// Per-node dichotomy verdicts backing a relative-complement computation.
#[derive(Clone, Debug, PartialEq)]
pub struct ThinComplement {
    pub level: u32,
    pub verdicts: Vec<(BitString, Dichotomy)>,
    /// Union of the disjoint-node image cylinders: the part of the
    /// constructed class avoiding class e.
    pub complement: ClopenSet,
}

impl PriorityState<'_> {
    /// The relative complement of class e inside the constructed class, as a
    /// finite union of node cylinders. Scans levels upward from e until every
    /// node has a determined verdict.
    pub fn thin_complement(&self, e: u32, horizon: u32) -> Result<ThinComplement> {
        let d = approx_depth(self.fam, horizon);
        let top = (e..).find(|&k| self.level_length(k) >= d).expect("lengths grow");
        'levels: for level in e..=top {
            let mut verdicts = Vec::new();
            for node in enumerate_strings(level) {
                let r = Requirement { e, sigmas: vec![node.clone()] };
                match self.dichotomy_check(&r, horizon)? {
                    Dichotomy::Undetermined => continue 'levels,
                    v => verdicts.push((node, v)),
                }
            }
            let mut complement = ClopenSet::empty();
            for (node, v) in &verdicts {
                if *v == Dichotomy::Disjoint {
                    complement = complement.union(&ClopenSet::cylinder(&self.eval_node(node)));
                }
            }
            return Ok(ThinComplement { level, verdicts, complement });
        }
        Err(Error::Undetermined(format!(
            "no fully determined level for class {e} within length {top}"
        )))
    }
}

/// Which side of the splitting dichotomy a branch prefix ends up on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BranchCase {
    /// Every analyzed node from `from_level` on splits the images apart.
    SplittingTail { from_level: u32 },
    /// Non-splitting nodes persist to the end of the analyzed range.
    NonSplittingTail { non_splitting: Vec<u32> },
}

/// Splitting classification of tree nodes against a pair-agreement class.
#[derive(Clone, Debug, PartialEq)]
pub struct SplittingReport {
    pub e_pair: u32,
    pub window: u32,
    /// node -> does the child-product avoid the agreement class?
    pub verdicts: BTreeMap<BitString, bool>,
}

impl SplittingReport {
    /// Classify a branch by its tail behaviour over the analyzed prefixes.
    pub fn branch_case(&self, branch: &BitString) -> BranchCase {
        let mut non_splitting = Vec::new();
        let mut deepest = None;
        for k in 0..=branch.len() {
            let prefix = branch.restrict(k).expect("within length");
            if let Some(&split) = self.verdicts.get(&prefix) {
                deepest = Some(k as u32);
                if !split {
                    non_splitting.push(k as u32);
                }
            }
        }
        match (deepest, non_splitting.last()) {
            (Some(_), None) => BranchCase::SplittingTail { from_level: 0 },
            (Some(d), Some(&last)) if last < d => {
                BranchCase::SplittingTail { from_level: last + 1 }
            }
            _ => BranchCase::NonSplittingTail { non_splitting },
        }
    }
}

impl PriorityState<'_> {
    /// Classify every analyzable node as splitting or not against the class
    /// of joined pairs with agreeing transducer outputs (index `e_pair`). A
    /// node splits when the product of its two child subtrees avoids that
    /// class, i.e. the children force distinct outputs within the window.
    pub fn splitting_analysis(
        &self,
        psi: &dyn Transducer,
        e_pair: u32,
        horizon: u32,
        window: u32,
    ) -> Result<SplittingReport> {
        let needed = psi.needed_input(window);
        if needed > self.cfg.depth_cap {
            return Err(Error::DepthCapExceeded {
                required: needed,
                cap: self.cfg.depth_cap,
            });
        }
        if e_pair > self.cfg.level_cap {
            return Err(Error::InvalidConfig(format!(
                "pair-agreement index {e_pair} exceeds the level cap {}",
                self.cfg.level_cap
            )));
        }
        let mut verdicts = BTreeMap::new();
        for level in e_pair.saturating_sub(1)..self.cfg.level_cap {
            for node in enumerate_strings(level) {
                let r = Requirement {
                    e: e_pair,
                    sigmas: vec![node.append(0), node.append(1)],
                };
                let split = match self.dichotomy_check(&r, horizon)? {
                    Dichotomy::Disjoint => true,
                    Dichotomy::Included => false,
                    Dichotomy::Undetermined => {
                        return Err(Error::Undetermined(format!("splitting at node {node}")))
                    }
                };
                verdicts.insert(node, split);
            }
        }
        Ok(SplittingReport { e_pair, window, verdicts })
    }
}

/// Drive the construction to the stage cap, stopping early once the family
/// is settled past every search bound and nothing requests attention (from
/// then on no stage can differ). Identical configs give bit-identical traces.
pub fn run(cfg: &PriorityConfig, fam: &dyn FunctionalFamily) -> Result<(Treemap, PriorityTrace)> {
    let mut st = PriorityState::new(cfg.clone(), fam)?;
    let quiescence_floor = fam.horizon().map(|h| h.max(cfg.level_cap + 1));
    let mut quiescent_at = None;
    while st.stage() < cfg.stage_cap {
        let before = st.stage();
        let acted = st.step()?;
        if acted.is_none() {
            if let Some(floor) = quiescence_floor {
                if before >= floor {
                    quiescent_at = Some(before);
                    break;
                }
            }
        }
    }
    let final_map = st.materialize(cfg.level_cap);
    let trace = PriorityTrace {
        schema: TRACE_SCHEMA.to_string(),
        config: cfg.clone(),
        horizon: fam.horizon(),
        stages: st.log().to_vec(),
        quiescent_at,
        final_map: final_map.clone(),
    };
    Ok((final_map, trace))
}

/// Rebuild a state from a trace's action log (used for verification).
pub fn replay<'f>(
    trace: &PriorityTrace,
    fam: &'f dyn FunctionalFamily,
) -> Result<PriorityState<'f>> {
    let mut st = PriorityState::new(trace.config.clone(), fam)?;
    st.log = trace.stages.clone();
    st.stage = trace.config.stage_cap;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{f1, f2};
    use crate::space::{product, DEFAULT_DEPTH_CAP};
    use crate::treemap::{nested_in, NestingCheck};

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn enumerate_counts() {
        let r0 = enumerate_requirements(0, 2, 1000).unwrap();
        assert_eq!(r0.len(), 1);
        assert_eq!(r0[0], Requirement { e: 0, sigmas: vec![bs("")] });

        let r1 = enumerate_requirements(1, 2, 1000).unwrap();
        // level 0 gives 1; level 1 gives e in {0,1} x (2 singletons + 2 pairs)
        assert_eq!(r1.len(), 9);
        assert!(r1.iter().all(|r| r.validate().is_ok()));

        // level-major order with (e, n, tuple) inside a level
        assert_eq!(r1[0].level(), 0);
        assert_eq!(r1[1], Requirement { e: 0, sigmas: vec![bs("0")] });
        assert_eq!(r1[2], Requirement { e: 0, sigmas: vec![bs("1")] });
        assert_eq!(r1[3], Requirement { e: 0, sigmas: vec![bs("0"), bs("1")] });
        assert_eq!(r1[4], Requirement { e: 0, sigmas: vec![bs("1"), bs("0")] });
        assert_eq!(r1[5].e, 1);

        assert!(matches!(
            enumerate_requirements(3, 8, 1000),
            Err(Error::RequirementCapExceeded { .. })
        ));
    }

    #[test]
    fn requesting_attention_examples() {
        let fam = f2();
        let mut st = PriorityState::new(PriorityConfig::new(4, 50), &fam).unwrap();
        let r = Requirement { e: 4, sigmas: vec![bs("0000")] };
        st.stage = 6;
        let w = st.requesting_attention(&r).unwrap().expect("escape exists at stage 6");
        assert_eq!(w.k, 6);
        assert_eq!(w.rhos, vec![bs("000001")]);
        // Below the settle stage nothing requests.
        st.stage = 5;
        assert!(st.requesting_attention(&r).unwrap().is_none());
    }

    #[test]
    fn requesting_attention_none_cases() {
        let fam = f1();
        let mut st = PriorityState::new(PriorityConfig::new(1, 20), &fam).unwrap();
        st.stage = 8;
        // Inside the class with no way out: never requests.
        let r_in = Requirement { e: 0, sigmas: vec![bs("0")] };
        assert!(st.requesting_attention(&r_in).unwrap().is_none());
        assert!(!st.satisfied(&r_in).unwrap());
        // Already disjoint: first conjunct fails.
        let r_out = Requirement { e: 0, sigmas: vec![bs("1")] };
        assert!(st.requesting_attention(&r_out).unwrap().is_none());
        assert!(st.satisfied(&r_out).unwrap());
    }

    #[test]
    fn f1_run_single_root_action() {
        let fam = f1();
        let (final_map, trace) = run(&PriorityConfig::new(1, 20), &fam).unwrap();
        assert_eq!(trace.stages.len(), 1);
        let a = &trace.stages[0];
        assert_eq!(a.stage, 3);
        assert_eq!(a.actor, Requirement { e: 0, sigmas: vec![bs("")] });
        assert_eq!(a.witness, Witness { k: 1, rhos: vec![bs("1")] });
        assert_eq!(a.injured.len(), 8);
        assert_eq!(final_map.get(&bs("")).unwrap(), &bs("1"));
        assert_eq!(final_map.get(&bs("0")).unwrap(), &bs("10"));
        assert_eq!(trace.quiescent_at, Some(6));
        assert!(final_map.is_uniform());
    }

    #[test]
    fn f2_run_single_action_at_stage_six() {
        let fam = f2();
        let (final_map, trace) = run(&PriorityConfig::new(4, 50), &fam).unwrap();
        assert_eq!(trace.stages.len(), 1);
        let a = &trace.stages[0];
        assert_eq!(a.stage, 6);
        assert_eq!(a.actor, Requirement { e: 4, sigmas: vec![bs("0000")] });
        assert_eq!(a.witness, Witness { k: 6, rhos: vec![bs("000001")] });
        assert!(a.injured.is_empty());
        // The acted node gets the escape image; its level-4 peers slide down
        // the all-zero padding.
        assert_eq!(final_map.get(&bs("0000")).unwrap(), &bs("000001"));
        assert_eq!(final_map.get(&bs("0001")).unwrap(), &bs("000100"));
        // Uniform afterwards: every level-4 image has length 6.
        let st = replay(&trace, &fam).unwrap();
        assert_eq!(st.m_of(4).unwrap(), 6);
        assert!(final_map.is_uniform());
        assert!(final_map.order_embedding_holds());
    }

    #[test]
    fn act_l0_relabels_whole_tree() {
        let fam = f1();
        let mut st = PriorityState::new(PriorityConfig::new(1, 20), &fam).unwrap();
        st.stage = 3;
        let r = Requirement { e: 0, sigmas: vec![bs("")] };
        let w = st.requesting_attention(&r).unwrap().unwrap();
        assert_eq!(w, Witness { k: 1, rhos: vec![bs("1")] });
        let next = st.act(&r, &w).unwrap();
        assert_eq!(next.get(&bs("")).unwrap(), &bs("1"));
        assert_eq!(next.get(&bs("1")).unwrap(), &bs("11"));
        // Acting again with the same witness is stale.
        assert!(matches!(st.act(&r, &w), Err(Error::StaleWitness(_))));
    }

    #[test]
    fn transitions_nest_with_witnesses() {
        for (fam, cap, stages) in [(f1(), 1u32, 20u32), (f2(), 4, 50)] {
            let (_, trace) = run(&PriorityConfig::new(cap, stages), &fam).unwrap();
            let st = replay(&trace, &fam).unwrap();
            for (i, a) in trace.stages.iter().enumerate() {
                let shrink = a.witness.k - a.actor.level();
                let prev = st.materialize_after(i, cap + shrink);
                let next = st.materialize_after(i + 1, cap);
                assert!(next.is_uniform());
                match nested_in(&next, &prev).unwrap() {
                    NestingCheck::Nested { .. } => {}
                    NestingCheck::Failed { node, reason } => {
                        panic!("transition {i} not nested at {node}: {reason}")
                    }
                }
            }
        }
    }

    #[test]
    fn satisfied_matches_clopen_route() {
        // The string-membership fast path agrees with the clopen algebra.
        let fam = f1();
        let mut st = PriorityState::new(PriorityConfig::new(1, 20), &fam).unwrap();
        st.stage = 4;
        for r in st.requirements().to_vec() {
            let images: Vec<ClopenSet> = r
                .sigmas
                .iter()
                .map(|s| ClopenSet::cylinder(&st.eval_node(s)))
                .collect();
            let prod = product(&images, DEFAULT_DEPTH_CAP).unwrap();
            let p = pi01_approx(&fam, r.e, st.stage(), DEFAULT_DEPTH_CAP).unwrap();
            let expect = prod.intersect(&p).is_empty_set();
            assert_eq!(st.satisfied(&r).unwrap(), expect, "{r}");
        }
    }

    #[test]
    fn dichotomy_after_f1_run() {
        let fam = f1();
        let (_, trace) = run(&PriorityConfig::new(1, 20), &fam).unwrap();
        let st = replay(&trace, &fam).unwrap();
        let r_root = Requirement { e: 0, sigmas: vec![bs("")] };
        assert_eq!(st.dichotomy_check(&r_root, 6).unwrap(), Dichotomy::Disjoint);
        let r_full = Requirement { e: 1, sigmas: vec![bs("0")] };
        assert_eq!(st.dichotomy_check(&r_full, 6).unwrap(), Dichotomy::Included);
        for r in st.requirements() {
            let v = st.dichotomy_check(r, 6).unwrap();
            assert_ne!(v, Dichotomy::Undetermined, "{r}");
        }
    }

    #[test]
    fn jump_decide_examples() {
        let fam = f1();
        let (_, trace) = run(&PriorityConfig::new(1, 20), &fam).unwrap();
        let st = replay(&trace, &fam).unwrap();
        // All members start with 1, so they avoid class 0 (which needs a 0
        // first bit) and the functional converges: 0 is in the jump.
        assert!(st.jump_decide(0, &[bs("110000")], 6).unwrap());
        // Class 1 is the whole space: never in the jump.
        assert!(!st.jump_decide(1, &[bs("110000")], 6).unwrap());
        assert!(!st.jump_decide(1, &[bs("100000"), bs("110000")], 6).unwrap());
        // Level-0 images have one bit, so a single bit already decides e=0.
        assert!(st.jump_decide(0, &[bs("1")], 6).unwrap());
        // Level-1 images need two bits.
        assert!(matches!(
            st.jump_decide(1, &[bs("1")], 6),
            Err(Error::PrefixTooShort(_))
        ));
        assert!(matches!(
            st.jump_decide(1, &[bs("110000"), bs("110000")], 6),
            Err(Error::PrefixTooShort(_))
        ));
    }

    #[test]
    fn thin_complement_examples() {
        let fam = f1();
        let (_, trace) = run(&PriorityConfig::new(1, 20), &fam).unwrap();
        let st = replay(&trace, &fam).unwrap();
        // Everything avoids class 0 after the run.
        let tc = st.thin_complement(0, 6).unwrap();
        assert_eq!(tc.level, 0);
        assert!(tc
            .complement
            .denotes_same(&ClopenSet::cylinder(&bs("1")), DEFAULT_DEPTH_CAP)
            .unwrap());
        // Nothing avoids the full class 1.
        let tc = st.thin_complement(1, 6).unwrap();
        assert!(tc.complement.is_empty_set());
        assert!(tc.verdicts.iter().all(|(_, v)| *v == Dichotomy::Included));
    }

    #[test]
    fn trace_json_shape() {
        let fam = f2();
        let (_, trace) = run(&PriorityConfig::new(4, 50), &fam).unwrap();
        let j = serde_json::to_string(&trace).unwrap();
        assert!(j.contains(r#""s":6"#));
        assert!(j.contains(r#""actor":{"e":4,"sigmas":["0000"]}"#));
        assert!(j.contains(r#""witness":{"k":6,"rhos":["000001"]}"#));
        assert!(j.contains(r#""final":"#));
        let back: PriorityTrace = serde_json::from_str(&j).unwrap();
        assert_eq!(back, trace);
    }
}
