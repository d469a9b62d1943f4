//! Loss expressions: the query language mechanisms use to talk to the oracle.
//!
//! An expression is an immutable tree (a DAG when subtrees are shared) over
//! the base losses `l_0 .. l_{n-1}`. Every node carries a structural upper
//! bound on how far its value can move when each base loss moves by at most
//! one, so the oracle can refuse queries whose bound exceeds one.
//!
//! # Text form
//!
//! Expressions print and parse in prefix notation:
//!
//! ```text
//! expr  := "b" INDEX                    base loss of candidate INDEX
//!        | "(min" expr+ ")"             minimum of the children
//!        | "(max" expr+ ")"             maximum of the children
//!        | "(gap" expr+ ")"             second smallest minus smallest
//!        | "(sub" expr expr ")"         difference
//!        | "(scale" NUMBER expr ")"     constant multiple
//!        | "(add" NUMBER expr ")"       constant offset
//!        | "(const" VALUE ")"           constant, VALUE is NUMBER, inf or -inf
//! ```
//!
//! Tokens are separated by ASCII whitespace. Numbers are written in Rust's
//! shortest round-trip form (`0.5`, `3.0`, `1e300`), so printing and
//! parsing an expression is lossless.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::ext_real::ExtReal;
use crate::instance::LossInstance;

/// A node of a loss expression.
#[derive(Debug)]
pub enum Op {
    Base(usize),
    MinOver(Arc<[LossExpr]>),
    MaxOver(Arc<[LossExpr]>),
    /// Gap of the children's values; `+inf` for a single child.
    Gap(Arc<[LossExpr]>),
    Sub(LossExpr, LossExpr),
    Scale(f64, LossExpr),
    AddConst(f64, LossExpr),
    Const(ExtReal),
}

#[derive(Debug)]
struct Node {
    op: Op,
    bound: f64,
    /// One past the largest base index referenced.
    arity: usize,
}

/// Shared handle to an immutable expression node. Cloning is cheap.
#[derive(Clone)]
pub struct LossExpr(Arc<Node>);

fn malformed(msg: &str) -> Error {
    Error::MalformedExpr(msg.to_string())
}

impl LossExpr {
    fn from_op(op: Op) -> LossExpr {
        let max_child = |xs: &[LossExpr]| xs.iter().map(|e| e.0.bound).fold(0.0, f64::max);
        let arity_of = |xs: &[LossExpr]| xs.iter().map(|e| e.0.arity).max().unwrap_or(0);
        let (bound, arity) = match &op {
            Op::Base(i) => (1.0, i + 1),
            Op::Const(_) => (0.0, 0),
            Op::MinOver(xs) | Op::MaxOver(xs) => (max_child(xs), arity_of(xs)),
            Op::Gap(xs) if xs.len() == 1 => (0.0, arity_of(xs)),
            Op::Gap(xs) => (2.0 * max_child(xs), arity_of(xs)),
            Op::Sub(a, b) => (a.0.bound + b.0.bound, a.0.arity.max(b.0.arity)),
            Op::Scale(c, e) => (c.abs() * e.0.bound, e.0.arity),
            Op::AddConst(_, e) => (e.0.bound, e.0.arity),
        };
        LossExpr(Arc::new(Node { op, bound, arity }))
    }

    pub fn base(index: usize) -> LossExpr {
        LossExpr::from_op(Op::Base(index))
    }

    pub fn constant(value: ExtReal) -> LossExpr {
        LossExpr::from_op(Op::Const(value))
    }

    pub fn min_over(children: impl Into<Arc<[LossExpr]>>) -> Result<LossExpr> {
        let children = children.into();
        if children.is_empty() {
            return Err(malformed("min over an empty list"));
        }
        Ok(LossExpr::from_op(Op::MinOver(children)))
    }

    pub fn max_over(children: impl Into<Arc<[LossExpr]>>) -> Result<LossExpr> {
        let children = children.into();
        if children.is_empty() {
            return Err(malformed("max over an empty list"));
        }
        Ok(LossExpr::from_op(Op::MaxOver(children)))
    }

    pub fn gap(children: impl Into<Arc<[LossExpr]>>) -> Result<LossExpr> {
        let children = children.into();
        if children.is_empty() {
            return Err(malformed("gap of an empty list"));
        }
        Ok(LossExpr::from_op(Op::Gap(children)))
    }

    /// Gap over a set of base losses.
    pub fn gap_of_indices(indices: &[usize]) -> Result<LossExpr> {
        LossExpr::gap(indices.iter().map(|&i| LossExpr::base(i)).collect::<Vec<_>>())
    }

    pub fn min_of_indices(indices: &[usize]) -> Result<LossExpr> {
        LossExpr::min_over(indices.iter().map(|&i| LossExpr::base(i)).collect::<Vec<_>>())
    }

    pub fn sub(a: LossExpr, b: LossExpr) -> LossExpr {
        LossExpr::from_op(Op::Sub(a, b))
    }

    pub fn scale(c: f64, e: LossExpr) -> Result<LossExpr> {
        if !c.is_finite() {
            return Err(malformed("scale factor must be finite"));
        }
        Ok(LossExpr::from_op(Op::Scale(c, e)))
    }

    pub fn add_const(c: f64, e: LossExpr) -> Result<LossExpr> {
        if !c.is_finite() {
            return Err(malformed("offset must be finite"));
        }
        Ok(LossExpr::from_op(Op::AddConst(c, e)))
    }

    pub fn op(&self) -> &Op {
        &self.0.op
    }

    /// Structural bound on `|e(l) - e(l')|` over loss vectors with
    /// `max_y |l_y - l'_y| <= 1`.
    pub fn sensitivity_bound(&self) -> f64 {
        self.0.bound
    }

    /// Number of candidates the expression needs: one past its largest base
    /// index, or 0 when it references none.
    pub fn arity(&self) -> usize {
        self.0.arity
    }

    pub fn ptr_eq(&self, other: &LossExpr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn children(&self) -> &[LossExpr] {
        match &self.0.op {
            Op::MinOver(xs) | Op::MaxOver(xs) | Op::Gap(xs) => xs,
            Op::Scale(_, e) | Op::AddConst(_, e) => core::slice::from_ref(e),
            Op::Sub(..) | Op::Base(_) | Op::Const(_) => &[],
        }
    }
}

impl fmt::Debug for LossExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Structural equality (shared and unshared trees compare equal).
impl PartialEq for LossExpr {
    fn eq(&self, other: &Self) -> bool {
        if self.ptr_eq(other) {
            return true;
        }
        match (self.op(), other.op()) {
            (Op::Base(a), Op::Base(b)) => a == b,
            (Op::Const(a), Op::Const(b)) => a == b,
            (Op::MinOver(a), Op::MinOver(b))
            | (Op::MaxOver(a), Op::MaxOver(b))
            | (Op::Gap(a), Op::Gap(b)) => a == b,
            (Op::Sub(a1, a2), Op::Sub(b1, b2)) => a1 == b1 && a2 == b2,
            (Op::Scale(c, a), Op::Scale(d, b)) | (Op::AddConst(c, a), Op::AddConst(d, b)) => {
                c.to_bits() == d.to_bits() && a == b
            }
            _ => false,
        }
    }
}

/// Values of shared subtrees computed against one loss vector. Only valid
/// for the vector it was filled from.
#[derive(Default)]
pub struct EvalCache(BTreeMap<usize, (LossExpr, ExtReal)>);

impl EvalCache {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Evaluates expressions against one fixed loss vector, caching the values
/// of shared compound subtrees.
pub struct Evaluator<'a> {
    losses: &'a [f64],
    memo: EvalCache,
}

impl<'a> Evaluator<'a> {
    pub fn new(losses: &'a [f64]) -> Self {
        Evaluator { losses, memo: EvalCache::default() }
    }

    /// Resumes with a cache previously filled from the same `losses`.
    pub fn with_cache(losses: &'a [f64], cache: EvalCache) -> Self {
        Evaluator { losses, memo: cache }
    }

    pub fn into_cache(self) -> EvalCache {
        self.memo
    }

    pub fn eval(&mut self, expr: &LossExpr) -> Result<ExtReal> {
        if expr.arity() > self.losses.len() {
            return Err(Error::IndexOutOfRange {
                index: expr.arity() - 1,
                len: self.losses.len(),
            });
        }
        self.eval_node(expr)
    }

    fn eval_node(&mut self, expr: &LossExpr) -> Result<ExtReal> {
        let cacheable = Arc::strong_count(&expr.0) > 1
            && !matches!(expr.op(), Op::Base(_) | Op::Const(_));
        let key = Arc::as_ptr(&expr.0) as usize;
        if cacheable {
            if let Some((_, v)) = self.memo.0.get(&key) {
                return Ok(*v);
            }
        }
        let v = self.compute(expr)?;
        if cacheable {
            // The stored clone pins the node so its address is not reused.
            self.memo.0.insert(key, (expr.clone(), v));
        }
        Ok(v)
    }

    fn compute(&mut self, expr: &LossExpr) -> Result<ExtReal> {
        let indeterminate = |what: &str| Error::Indeterminate(what.to_string());
        Ok(match expr.op() {
            Op::Base(i) => ExtReal::new(self.losses[*i]).ok_or_else(|| indeterminate("NaN loss"))?,
            Op::Const(v) => *v,
            Op::MinOver(xs) => {
                let mut acc = ExtReal::INFINITY;
                for x in xs.iter() {
                    acc = acc.min(self.eval_node(x)?);
                }
                acc
            }
            Op::MaxOver(xs) => {
                let mut acc = ExtReal::NEG_INFINITY;
                for x in xs.iter() {
                    acc = acc.max(self.eval_node(x)?);
                }
                acc
            }
            Op::Gap(xs) => {
                if xs.len() == 1 {
                    return Ok(ExtReal::INFINITY);
                }
                // Smallest and second smallest with multiplicity.
                let mut lo = ExtReal::INFINITY;
                let mut second = ExtReal::INFINITY;
                for x in xs.iter() {
                    let v = self.eval_node(x)?;
                    if v < lo {
                        second = lo;
                        lo = v;
                    } else if v < second {
                        second = v;
                    }
                }
                second.checked_sub(lo).ok_or_else(|| indeterminate("gap of infinite values"))?
            }
            Op::Sub(a, b) => {
                let a = self.eval_node(a)?;
                let b = self.eval_node(b)?;
                a.checked_sub(b).ok_or_else(|| indeterminate("inf - inf"))?
            }
            Op::Scale(c, e) => self
                .eval_node(e)?
                .checked_scale(*c)
                .ok_or_else(|| indeterminate("0 * inf"))?,
            Op::AddConst(c, e) => self
                .eval_node(e)?
                .checked_add(*c)
                .ok_or_else(|| indeterminate("inf + -inf"))?,
        })
    }
}

/// Evaluates `expr` on the losses of `inst`.
pub fn eval_expr(expr: &LossExpr, inst: &LossInstance) -> Result<ExtReal> {
    Evaluator::new(inst.losses()).eval(expr)
}

/// Evaluates `expr` on a raw loss vector (which may violate instance
/// invariants, as perturbed vectors in sensitivity checks do).
pub fn eval_on(expr: &LossExpr, losses: &[f64]) -> Result<ExtReal> {
    Evaluator::new(losses).eval(expr)
}

/// `1/2 (min_{C1} l - min_{C2} l)` over base candidates.
pub fn build_bintree_query(c1: &[usize], c2: &[usize]) -> Result<LossExpr> {
    if c1.is_empty() || c2.is_empty() {
        return Err(malformed("both halves must be non-empty"));
    }
    let left: BTreeSet<usize> = c1.iter().copied().collect();
    if c2.iter().any(|y| left.contains(y)) {
        return Err(malformed("halves must be disjoint"));
    }
    bintree_query_over(
        c1.iter().map(|&i| LossExpr::base(i)).collect(),
        c2.iter().map(|&i| LossExpr::base(i)).collect(),
    )
}

/// `1/2 (min of c1 - min of c2)` over arbitrary loss expressions.
pub fn bintree_query_over(c1: Vec<LossExpr>, c2: Vec<LossExpr>) -> Result<LossExpr> {
    LossExpr::scale(0.5, LossExpr::sub(LossExpr::min_over(c1)?, LossExpr::min_over(c2)?))
}

/// `1/2 (l_a - l_b)` comparison of two candidate losses.
pub fn comparison_query(a: LossExpr, b: LossExpr) -> LossExpr {
    LossExpr::scale(0.5, LossExpr::sub(a, b)).expect("finite factor")
}

/// Derived loss scoring a subset by its optimal loss and its gap:
///
/// `1/2 max{ min_S l - min_all l - (K + sqrt K) xi, -gap(S) }`
///
/// over base candidates `0..n`.
pub fn build_tilde_loss(subset: &[usize], n: usize, k: u32, xi_val: f64) -> Result<LossExpr> {
    if n == 0 {
        return Err(malformed("no candidates"));
    }
    let losses: Vec<LossExpr> = (0..n).map(LossExpr::base).collect();
    let overall = LossExpr::min_over(losses.as_slice())?;
    tilde_loss_over(&losses, subset, &overall, k, xi_val)
}

/// [`build_tilde_loss`] over an arbitrary list of loss expressions.
/// `overall_min` must be the minimum over all of `losses`; passing the same
/// handle for every subset lets evaluation share it.
pub fn tilde_loss_over(
    losses: &[LossExpr],
    subset: &[usize],
    overall_min: &LossExpr,
    k: u32,
    xi_val: f64,
) -> Result<LossExpr> {
    if subset.is_empty() {
        return Err(malformed("subset must be non-empty"));
    }
    if !(xi_val > 0.0 && xi_val.is_finite()) {
        return Err(malformed("xi must be positive and finite"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= losses.len()) {
        return Err(Error::IndexOutOfRange { index: bad, len: losses.len() });
    }
    let members: Arc<[LossExpr]> = subset.iter().map(|&i| losses[i].clone()).collect();
    let k = k as f64;
    let offset = (k + libm::sqrt(k)) * xi_val;
    let excess = LossExpr::sub(
        LossExpr::min_over(members.clone())?,
        LossExpr::add_const(offset, overall_min.clone())?,
    );
    let neg_gap = LossExpr::scale(-1.0, LossExpr::gap(members)?)?;
    LossExpr::scale(0.5, LossExpr::max_over(alloc::vec![excess, neg_gap])?)
}

impl fmt::Display for LossExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, tag: &str, xs: &[LossExpr]| {
            write!(f, "({tag}")?;
            for x in xs.iter() {
                write!(f, " {x}")?;
            }
            f.write_str(")")
        };
        match self.op() {
            Op::Base(i) => write!(f, "b{i}"),
            Op::Const(v) => match v.get() {
                x if x.is_finite() => write!(f, "(const {x:?})"),
                _ => write!(f, "(const {v})"),
            },
            Op::MinOver(xs) => list(f, "min", xs),
            Op::MaxOver(xs) => list(f, "max", xs),
            Op::Gap(xs) => list(f, "gap", xs),
            Op::Sub(a, b) => write!(f, "(sub {a} {b})"),
            Op::Scale(c, e) => write!(f, "(scale {c:?} {e})"),
            Op::AddConst(c, e) => write!(f, "(add {c:?} {e})"),
        }
    }
}

impl FromStr for LossExpr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser { src: s, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
}

impl<'s> Parser<'s> {
    fn err(&self, message: &str) -> Error {
        Error::Parse { offset: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.as_bytes().get(self.pos).copied()
    }

    fn token(&mut self) -> Result<&'s str> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| c.is_ascii_whitespace() || c == '(' || c == ')')
            .unwrap_or(rest.len());
        if len == 0 {
            return Err(self.err("expected a token"));
        }
        self.pos += len;
        Ok(&rest[..len])
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        let tok = self.token()?;
        tok.parse::<f64>().map_err(|_| Error::Parse {
            offset: start,
            message: alloc::format!("invalid number `{tok}`"),
        })
    }

    fn close(&mut self) -> Result<()> {
        if self.peek() == Some(b')') {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err("expected `)`"))
        }
    }

    fn expr(&mut self) -> Result<LossExpr> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let tag = self.token()?;
                let e = match tag {
                    "min" | "max" | "gap" => {
                        let mut xs = Vec::new();
                        while self.peek() != Some(b')') {
                            xs.push(self.expr()?);
                        }
                        match tag {
                            "min" => LossExpr::min_over(xs),
                            "max" => LossExpr::max_over(xs),
                            _ => LossExpr::gap(xs),
                        }
                        .map_err(|e| self.err(&e.to_string()))?
                    }
                    "sub" => {
                        let a = self.expr()?;
                        LossExpr::sub(a, self.expr()?)
                    }
                    "scale" | "add" => {
                        let c = self.number()?;
                        let inner = self.expr()?;
                        if tag == "scale" { LossExpr::scale(c, inner) } else { LossExpr::add_const(c, inner) }
                            .map_err(|e| self.err(&e.to_string()))?
                    }
                    "const" => {
                        let start = self.pos;
                        let v = match self.token()? {
                            "inf" => ExtReal::INFINITY,
                            "-inf" => ExtReal::NEG_INFINITY,
                            _ => {
                                self.pos = start;
                                let x = self.number()?;
                                ExtReal::finite(x).ok_or_else(|| self.err("constant must be finite, inf or -inf"))?
                            }
                        };
                        LossExpr::constant(v)
                    }
                    other => {
                        return Err(self.err(&alloc::format!("unknown operator `{other}`")));
                    }
                };
                self.close()?;
                Ok(e)
            }
            Some(_) => {
                let start = self.pos;
                let tok = self.token()?;
                tok.strip_prefix('b')
                    .and_then(|d| d.parse::<usize>().ok())
                    .map(LossExpr::base)
                    .ok_or(Error::Parse {
                        offset: start,
                        message: alloc::format!("expected `b<index>` or `(`, found `{tok}`"),
                    })
            }
        }
    }
}

/// Number of nodes in the tree view (shared subtrees counted per use).
pub fn tree_size(expr: &LossExpr) -> usize {
    1 + match expr.op() {
        Op::Sub(a, b) => tree_size(a) + tree_size(b),
        _ => expr.children().iter().map(tree_size).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inst(v: &[f64]) -> LossInstance {
        LossInstance::new(v.to_vec()).unwrap()
    }

    fn fin(x: f64) -> ExtReal {
        ExtReal::finite(x).unwrap()
    }

    #[test]
    fn singleton_gap_is_infinite() {
        let e = LossExpr::gap_of_indices(&[0]).unwrap();
        assert_eq!(eval_expr(&e, &inst(&[4.0, 1.0])).unwrap(), ExtReal::INFINITY);
        assert_eq!(e.sensitivity_bound(), 0.0);
    }

    #[test]
    fn halved_difference_of_minima() {
        let e = LossExpr::scale(
            0.5,
            LossExpr::sub(LossExpr::min_of_indices(&[0]).unwrap(), LossExpr::min_of_indices(&[1]).unwrap()),
        )
        .unwrap();
        assert_eq!(eval_expr(&e, &inst(&[0.0, 5.0])).unwrap(), fin(-2.5));
        assert_eq!(e.sensitivity_bound(), 1.0);
    }

    #[test]
    fn max_drops_negative_infinity() {
        let e = LossExpr::max_over(vec![
            LossExpr::constant(ExtReal::NEG_INFINITY),
            LossExpr::constant(fin(3.0)),
        ])
        .unwrap();
        assert_eq!(eval_expr(&e, &inst(&[0.0])).unwrap(), fin(3.0));
        assert_eq!(e.sensitivity_bound(), 0.0);
    }

    #[test]
    fn bintree_query_values_and_bound() {
        let q = build_bintree_query(&[0], &[1]).unwrap();
        assert_eq!(eval_expr(&q, &inst(&[0.0, 5.0])).unwrap(), fin(-2.5));
        let q = build_bintree_query(&[0, 1], &[2, 3]).unwrap();
        assert_eq!(eval_expr(&q, &inst(&[3.0, 1.0, 4.0, 4.0])).unwrap(), fin(-1.5));
        assert_eq!(q.sensitivity_bound(), 1.0);
    }

    #[test]
    fn bintree_query_rejects_bad_halves() {
        assert!(build_bintree_query(&[], &[1]).is_err());
        assert!(build_bintree_query(&[0], &[]).is_err());
        assert!(build_bintree_query(&[0, 1], &[1, 2]).is_err());
    }

    #[test]
    fn base_bound_is_one() {
        assert_eq!(LossExpr::base(3).sensitivity_bound(), 1.0);
        assert_eq!(LossExpr::gap_of_indices(&[0, 1]).unwrap().sensitivity_bound(), 2.0);
    }

    #[test]
    fn tilde_loss_singleton_uses_excess_branch() {
        let xi = 0.25;
        let k = 4;
        let e = build_tilde_loss(&[2], 4, k, xi).unwrap();
        let losses = [1.0, 3.0, 2.0, 7.0];
        let offset = (4.0 + 2.0) * xi;
        let want = 0.5 * (2.0 - 1.0 - offset);
        assert_eq!(eval_expr(&e, &inst(&losses)).unwrap(), fin(want));
        assert_eq!(e.sensitivity_bound(), 1.0);
    }

    #[test]
    fn tilde_loss_full_subset_on_gapped_pair() {
        // offset (1 + 1) * 10 = 20 exceeds the gap 3, so -gap/2 wins.
        let e = build_tilde_loss(&[0, 1], 2, 1, 10.0).unwrap();
        assert_eq!(eval_expr(&e, &inst(&[0.0, 3.0])).unwrap(), fin(-1.5));
    }

    #[test]
    fn tilde_loss_rejects_empty_subset() {
        assert!(build_tilde_loss(&[], 4, 2, 1.0).is_err());
        assert!(build_tilde_loss(&[0], 4, 2, 0.0).is_err());
    }

    #[test]
    fn out_of_range_base_is_reported() {
        let e = LossExpr::base(5);
        assert_eq!(
            eval_expr(&e, &inst(&[0.0, 1.0])),
            Err(Error::IndexOutOfRange { index: 5, len: 2 })
        );
    }

    #[test]
    fn infinite_differences_are_indeterminate() {
        let g = LossExpr::gap_of_indices(&[0]).unwrap();
        let e = LossExpr::sub(g.clone(), g);
        assert!(matches!(eval_expr(&e, &inst(&[0.0])), Err(Error::Indeterminate(_))));
        let z = LossExpr::scale(0.0, LossExpr::gap_of_indices(&[0]).unwrap()).unwrap();
        assert!(matches!(eval_expr(&z, &inst(&[0.0])), Err(Error::Indeterminate(_))));
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(LossExpr::min_over(vec![]).is_err());
        assert!(LossExpr::max_over(vec![]).is_err());
        assert!(LossExpr::gap(vec![]).is_err());
        assert!(LossExpr::scale(f64::INFINITY, LossExpr::base(0)).is_err());
    }

    #[test]
    fn add_const_keeps_bound_and_small_scale_never_grows_it() {
        let e = build_bintree_query(&[0, 2], &[1]).unwrap();
        assert_eq!(LossExpr::add_const(7.5, e.clone()).unwrap().sensitivity_bound(), 1.0);
        assert!(LossExpr::scale(-0.3, e.clone()).unwrap().sensitivity_bound() <= e.sensitivity_bound());
    }

    #[test]
    fn text_form_is_stable() {
        let q = build_tilde_loss(&[1], 2, 1, 2.0).unwrap();
        assert_eq!(
            q.to_string(),
            "(scale 0.5 (max (sub (min b1) (add 4.0 (min b0 b1))) (scale -1.0 (gap b1))))"
        );
        let c = LossExpr::max_over(vec![
            LossExpr::constant(ExtReal::NEG_INFINITY),
            LossExpr::constant(fin(1e300)),
        ])
        .unwrap();
        assert_eq!(c.to_string(), "(max (const -inf) (const 1e300))");
    }

    #[test]
    fn text_form_parses_back() {
        for src in [
            "b0",
            "(scale 0.5 (sub (min b0 b1) (min b2 b3)))",
            "(max (const -inf) (const 3.0) (gap b0 b4 b2))",
            "(add -2.25 (const inf))",
        ] {
            let e: LossExpr = src.parse().unwrap();
            assert_eq!(e.to_string(), src);
        }
    }

    #[test]
    fn parse_errors_carry_offsets() {
        for bad in ["", "(min)", "(foo b1)", "(sub b1)", "b1 b2", "(const nan)", "x3", "(scale 1 b0"] {
            assert!(bad.parse::<LossExpr>().is_err(), "{bad:?}");
        }
        match "(min b0 q)".parse::<LossExpr>() {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shared_subtrees_evaluate_once_and_consistently() {
        let shared = LossExpr::min_of_indices(&[0, 1, 2]).unwrap();
        let a = LossExpr::sub(LossExpr::base(1), shared.clone());
        let b = LossExpr::sub(LossExpr::base(2), shared.clone());
        let both = LossExpr::max_over(vec![a, b]).unwrap();
        let losses = [2.0, 5.0, 9.0];
        let mut ev = Evaluator::new(&losses);
        assert_eq!(ev.eval(&both).unwrap(), fin(7.0));
        assert_eq!(ev.eval(&shared).unwrap(), fin(2.0));
        assert_eq!(tree_size(&both), 1 + 2 * (1 + 1 + 4));
    }
}
