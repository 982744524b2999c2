//! Symbolic class expressions with exact stage approximations.
//!
//! A [`ClassExpr`] denotes an effectively closed subset of Cantor space
//! relative to a functional family. [`approx`] computes the stage-s clopen
//! over-approximation; it is antitone in the stage and, for finite-horizon
//! families, equals the denoted class from the expression's settle stage on.
//! [`is_empty`] runs the approximation against a stage budget and stands in
//! for the halting-problem oracle of the constructions built on top.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{pi01_approx, unsettled_set, FunctionalFamily};
use crate::space::{product, BitString, ClopenSet, PartialAssignment};
use crate::treemap::Treemap;

/// A class expression. `Base(e)` is the e-th co-enumerable class (divergence
/// of functional e on input 0); `JumpAvoid { e, n }` is the class of oracles
/// X with n outside X ⊕ W_e^X, which is a coordinate condition for even n and
/// a divergence condition for odd n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ClassExpr {
    Full,
    Base(u32),
    Intersect(Vec<ClassExpr>),
    Restrict { inner: Box<ClassExpr>, prefix: BitString },
    JumpAvoid { e: u32, n: u32 },
    ProductOf(Vec<ClassExpr>),
    ImageOf(Treemap),
}

impl ClassExpr {
    pub fn restrict(inner: ClassExpr, prefix: BitString) -> ClassExpr {
        ClassExpr::Restrict { inner: Box::new(inner), prefix }
    }
}

/// Outcome of a budgeted emptiness check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum EmptinessVerdict {
    /// The stage-s approximation is already empty, so the class is empty.
    EmptyAtStage(u32),
    /// The approximation is settled and nonempty, so the class is nonempty.
    NonemptyLimit,
    /// Budget exhausted without a conclusive answer.
    NonemptyAtBudget(u32),
}

impl EmptinessVerdict {
    pub fn is_empty(&self) -> bool {
        matches!(self, EmptinessVerdict::EmptyAtStage(_))
    }
}

/// The stage-s clopen approximation of the denoted class.
pub fn approx(
    expr: &ClassExpr,
    fam: &dyn FunctionalFamily,
    stage: u32,
    cap: u32,
) -> Result<ClopenSet> {
    match expr {
        ClassExpr::Full => Ok(ClopenSet::full()),
        ClassExpr::Base(e) => pi01_approx(fam, *e, stage, cap),
        ClassExpr::Intersect(parts) => {
            let mut acc = ClopenSet::full();
            for p in parts {
                acc = acc.intersect(&approx(p, fam, stage, cap)?);
            }
            Ok(acc)
        }
        ClassExpr::Restrict { inner, prefix } => {
            Ok(approx(inner, fam, stage, cap)?.intersect(&ClopenSet::cylinder(prefix)))
        }
        ClassExpr::JumpAvoid { e, n } => {
            if n % 2 == 0 {
                // n = 2m avoids the jump iff oracle bit m is 0.
                Ok(ClopenSet::from_atoms(vec![PartialAssignment::single(n / 2, 0)]))
            } else {
                // n = 2m+1 avoids the jump iff functional e diverges on m.
                unsettled_set(fam, *e, n / 2, stage, cap)
            }
        }
        ClassExpr::ProductOf(parts) => {
            let comps = parts
                .iter()
                .map(|p| approx(p, fam, stage, cap))
                .collect::<Result<Vec<_>>>()?;
            product(&comps, cap)
        }
        ClassExpr::ImageOf(t) => t.image_class_at(stage.min(t.level_cap())),
    }
}

/// Stage from which the approximation stops changing, when the expression
/// only involves settled parts. `None` when some part never settles.
pub fn settle_stage(expr: &ClassExpr, fam: &dyn FunctionalFamily) -> Option<u32> {
    match expr {
        ClassExpr::Full => Some(0),
        ClassExpr::Base(_) => fam.horizon(),
        ClassExpr::Intersect(parts) | ClassExpr::ProductOf(parts) => parts
            .iter()
            .map(|p| settle_stage(p, fam))
            .try_fold(0u32, |acc, s| s.map(|s| acc.max(s))),
        ClassExpr::Restrict { inner, .. } => settle_stage(inner, fam),
        ClassExpr::JumpAvoid { n, .. } => {
            if n % 2 == 0 {
                Some(0)
            } else {
                fam.horizon()
            }
        }
        ClassExpr::ImageOf(t) => Some(t.level_cap()),
    }
}

/// Budgeted emptiness. Emptiness of a stage approximation is conclusive for
/// the class; nonemptiness is conclusive only once the expression settles.
/// Reports the least stage at which the approximation is empty (valid by
/// antitonicity).
pub fn is_empty(
    expr: &ClassExpr,
    fam: &dyn FunctionalFamily,
    budget: u32,
    cap: u32,
) -> Result<EmptinessVerdict> {
    let budget = budget.max(1);
    let settle = settle_stage(expr, fam).filter(|&t| t <= budget);
    let probe = settle.unwrap_or(budget).max(1);
    if !approx(expr, fam, probe, cap)?.is_empty_set() {
        return Ok(match settle {
            Some(_) => EmptinessVerdict::NonemptyLimit,
            None => EmptinessVerdict::NonemptyAtBudget(budget),
        });
    }
    // Binary search the least empty stage; emptiness is upward closed in s.
    let (mut lo, mut hi) = (1u32, probe);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if approx(expr, fam, mid, cap)?.is_empty_set() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(EmptinessVerdict::EmptyAtStage(lo))
}

/// A member prefix together with whether the emptiness machinery could
/// certify the class nonempty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemberPrefix {
    pub prefix: BitString,
    pub confirmed: bool,
}

/// The lexicographically least depth-d string whose cylinder meets the
/// budget-stage approximation: the leftmost path. Genuine member prefix for
/// settled expressions.
pub fn member_prefix(
    expr: &ClassExpr,
    fam: &dyn FunctionalFamily,
    depth: u32,
    budget: u32,
    cap: u32,
) -> Result<MemberPrefix> {
    let confirmed = match is_empty(expr, fam, budget, cap)? {
        EmptinessVerdict::EmptyAtStage(_) => {
            return Err(Error::EmptyBranch { node: String::new() })
        }
        EmptinessVerdict::NonemptyLimit => true,
        EmptinessVerdict::NonemptyAtBudget(_) => false,
    };
    let stage = settle_stage(expr, fam).map_or(budget, |t| t.min(budget)).max(1);
    let set = approx(expr, fam, stage, cap)?;
    let mut prefix = BitString::new();
    for _ in 0..depth {
        let zero = prefix.append(0);
        if set.meets(&zero) {
            prefix = zero;
        } else {
            prefix = prefix.append(1);
            debug_assert!(set.meets(&prefix));
        }
    }
    Ok(MemberPrefix { prefix, confirmed })
}

/// The least node (shortest, then lexicographically) extending `start` whose
/// two children both meet the class. For settled expressions the answer is
/// exact; otherwise candidates that cannot be certified make the search
/// inconclusive.
pub fn least_branching_node(
    expr: &ClassExpr,
    fam: &dyn FunctionalFamily,
    start: &BitString,
    budget: u32,
    cap: u32,
) -> Result<BitString> {
    let budget = budget.max(1);
    let settle = settle_stage(expr, fam).filter(|&t| t <= budget);
    let stage = settle.unwrap_or(budget).max(1);
    let set = approx(expr, fam, stage, cap)?;
    if !set.meets(start) {
        return Err(Error::EmptyBranch { node: start.to_string() });
    }
    if settle.is_none() {
        // An unsettled approximation certifies no nonemptiness, hence no
        // branching node; refusing beats guessing.
        return Err(Error::NotPerfect { node: start.to_string() });
    }
    // A settled class is a union of cylinders no deeper than the
    // approximation; a branching node exists within that depth if one exists
    // at all.
    let depth_bound = (start.len() as u32).max(set.depth());
    let mut frontier = vec![start.clone()];
    for _ in start.len() as u32..=depth_bound {
        let mut next = Vec::new();
        for tau in &frontier {
            let left = tau.append(0);
            let right = tau.append(1);
            let l = set.meets(&left);
            let r = set.meets(&right);
            if l && r {
                return Ok(tau.clone());
            }
            if l {
                next.push(left);
            }
            if r {
                next.push(right);
            }
        }
        frontier = next;
    }
    Err(Error::NotPerfect { node: start.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{f1, ShrinkingFamily};
    use crate::space::DEFAULT_DEPTH_CAP;

    const CAP: u32 = DEFAULT_DEPTH_CAP;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn approx_base_matches_machine() {
        let fam = f1();
        let a = approx(&ClassExpr::Base(0), &fam, 3, CAP).unwrap();
        assert!(a.denotes_same(&ClopenSet::cylinder(&bs("0")), CAP).unwrap());
    }

    #[test]
    fn approx_jump_avoid_even_is_coordinate() {
        let fam = f1();
        for s in [0, 1, 9] {
            let a = approx(&ClassExpr::JumpAvoid { e: 1, n: 0 }, &fam, s, CAP).unwrap();
            assert!(a.denotes_same(&ClopenSet::cylinder(&bs("0")), CAP).unwrap());
        }
        let a = approx(&ClassExpr::JumpAvoid { e: 1, n: 4 }, &fam, 1, CAP).unwrap();
        assert_eq!(a.atoms().len(), 1);
        assert_eq!(a.atoms()[0].get(2), Some(0));
    }

    #[test]
    fn approx_intersect_example() {
        let fam = f1();
        let expr = ClassExpr::Intersect(vec![ClassExpr::Base(0), ClassExpr::Base(2)]);
        let a = approx(&expr, &fam, 4, CAP).unwrap();
        assert!(a.denotes_same(&ClopenSet::cylinder(&bs("00")), CAP).unwrap());
    }

    #[test]
    fn approx_antitone_over_random_exprs() {
        let fam = f1();
        let exprs = vec![
            ClassExpr::Base(0),
            ClassExpr::Base(2),
            ClassExpr::Intersect(vec![ClassExpr::Base(0), ClassExpr::JumpAvoid { e: 0, n: 1 }]),
            ClassExpr::restrict(ClassExpr::Base(2), bs("0")),
            ClassExpr::ProductOf(vec![ClassExpr::Base(0), ClassExpr::Full]),
            ClassExpr::JumpAvoid { e: 2, n: 3 },
        ];
        for expr in &exprs {
            for s in 0..7 {
                let now = approx(expr, &fam, s, CAP).unwrap();
                let next = approx(expr, &fam, s + 1, CAP).unwrap();
                assert!(next.is_subset(&now, CAP).unwrap(), "{expr:?} at {s}");
            }
        }
    }

    #[test]
    fn is_empty_examples() {
        let fam = f1();
        let expr = ClassExpr::restrict(ClassExpr::Base(0), bs("1"));
        assert_eq!(is_empty(&expr, &fam, 6, CAP).unwrap(), EmptinessVerdict::EmptyAtStage(3));

        assert_eq!(
            is_empty(&ClassExpr::Full, &fam, 1, CAP).unwrap(),
            EmptinessVerdict::NonemptyLimit
        );

        let free = ShrinkingFamily;
        assert_eq!(
            is_empty(&ClassExpr::Base(1), &free, 10, CAP).unwrap(),
            EmptinessVerdict::NonemptyAtBudget(10)
        );
        assert_eq!(
            is_empty(&ClassExpr::Base(0), &free, 10, CAP).unwrap(),
            EmptinessVerdict::NonemptyAtBudget(10)
        );
    }

    #[test]
    fn finite_horizon_is_always_conclusive() {
        let fam = f1();
        for e in 0..3 {
            let v = is_empty(&ClassExpr::Base(e), &fam, 10, CAP).unwrap();
            assert!(!matches!(v, EmptinessVerdict::NonemptyAtBudget(_)), "e={e}");
        }
    }

    #[test]
    fn member_prefix_examples() {
        let fam = f1();
        let m = member_prefix(&ClassExpr::Base(0), &fam, 3, 6, CAP).unwrap();
        assert_eq!(m.prefix, bs("000"));
        assert!(m.confirmed);

        let m = member_prefix(&ClassExpr::Full, &fam, 2, 1, CAP).unwrap();
        assert_eq!(m.prefix, bs("00"));

        let m =
            member_prefix(&ClassExpr::restrict(ClassExpr::Full, bs("11")), &fam, 3, 1, CAP).unwrap();
        assert_eq!(m.prefix, bs("110"));

        let empty = ClassExpr::restrict(ClassExpr::Base(0), bs("1"));
        assert!(matches!(
            member_prefix(&empty, &fam, 3, 6, CAP),
            Err(Error::EmptyBranch { .. })
        ));

        let free = ShrinkingFamily;
        let m = member_prefix(&ClassExpr::Base(0), &free, 4, 8, CAP).unwrap();
        assert_eq!(m.prefix, bs("0000"));
        assert!(!m.confirmed);
    }

    #[test]
    fn least_branching_node_examples() {
        let fam = f1();
        let root = BitString::new();
        assert_eq!(
            least_branching_node(&ClassExpr::Full, &fam, &root, 1, CAP).unwrap(),
            bs("")
        );
        // The class below 0 branches first at 0 itself.
        let zero_class = ClassExpr::restrict(ClassExpr::Full, bs("0"));
        assert_eq!(least_branching_node(&zero_class, &fam, &root, 1, CAP).unwrap(), bs("0"));

        // Unsettled expressions can never certify a branch, whether the
        // limit class is a singleton path or the whole space.
        let free = ShrinkingFamily;
        assert!(matches!(
            least_branching_node(&ClassExpr::Base(0), &free, &root, 6, CAP),
            Err(Error::NotPerfect { .. })
        ));
        assert!(matches!(
            least_branching_node(&ClassExpr::Base(1), &free, &root, 6, CAP),
            Err(Error::NotPerfect { .. })
        ));

        assert!(matches!(
            least_branching_node(&zero_class, &fam, &bs("1"), 4, CAP),
            Err(Error::EmptyBranch { .. })
        ));
    }

    #[test]
    fn class_expr_json_shape() {
        let expr = ClassExpr::Intersect(vec![
            ClassExpr::Base(0),
            ClassExpr::JumpAvoid { e: 1, n: 3 },
        ]);
        let j = serde_json::to_string(&expr).unwrap();
        assert_eq!(j, r#"{"intersect":[{"base":0},{"jumpAvoid":{"e":1,"n":3}}]}"#);
        let back: ClassExpr = serde_json::from_str(&j).unwrap();
        assert_eq!(back, expr);
        assert_eq!(serde_json::to_string(&ClassExpr::Full).unwrap(), "\"full\"");
    }
}
