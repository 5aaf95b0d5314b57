//! Paired message-space / probability-space interval trees.
//!
//! A [`DualTree`] stores the piecewise-linear, nondecreasing cumulative map
//! from message space `[0,1]` onto probability space `[0,1]` that encodes the
//! pseudo-posterior over messages. Two binary trees share one node set, paired
//! one-to-one:
//!
//! * the **message tree** holds, at each node, the exact message-space length
//!   of its interval (a [`Dyadic`]); its structure is never rotated, so a
//!   node's interval never changes once created;
//! * the **probability tree** holds, at each node, the ratio `mid` of its left
//!   child's probability mass to its own; it is a splay tree, rotated to keep
//!   accesses amortized logarithmic, with `mid` recomputed on every rotation
//!   so that it always equals (left-subtree mass)/(subtree mass).
//!
//! Leaves are intervals on which the map is linear. `scale_interval(y, r)`
//! composes the map with the one-breakpoint rescale `[0,y] → [0,r]`,
//! `[y,1] → [r,1]`, splitting the leaf containing `y` in *both* trees and
//! rotating the new breakpoint node to the probability-tree root. Queries walk
//! down the message tree by exact lengths and back up the probability tree by
//! `mid` ratios; reads splay too, so every operation takes `&mut self`.
//!
//! A `DualTree` is single-owner mutable state. It is `Send`, so whole trees
//! may move between threads, but operations are not internally synchronized.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::dyadic::{ratio_f64, round_scaled, scale_units, Dyadic};

/// Breakpoints and ratios closer than this to 0 or 1 are degenerate.
pub const EDGE_TOL: f64 = 1e-15;

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("degenerate breakpoint: y={y}, r={r} (within {EDGE_TOL} of 0 or 1)")]
    DegenerateBreakpoint { y: f64, r: f64 },
    #[error("piecewise rescale segment masses sum to {mass}, expected 1")]
    UnnormalizedRescale { mass: f64 },
    #[error("invalid rescale: {0}")]
    RescaleShape(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone)]
struct MsgNode {
    parent: Option<NodeId>,
    left: Option<NodeId>,
    right: Option<NodeId>,
    len: Dyadic,
    pair: NodeId,
}

#[derive(Debug, Clone)]
struct ProbNode {
    parent: Option<NodeId>,
    left: Option<NodeId>,
    right: Option<NodeId>,
    /// Left-subtree mass over subtree mass; meaningless at leaves.
    mid: f64,
    pair: NodeId,
}

/// Operation counters for complexity experiments.
///
/// `unit_ops` counts elementary steps at unit cost — node visits, rotations,
/// and arithmetic operations, with an extended-precision operation counted
/// once regardless of width. `limb_ops` additionally counts the 64-bit words
/// touched by extended-precision arithmetic, whose cost grows with the
/// precision; `rotations` counts single tree rotations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub unit_ops: u64,
    pub limb_ops: u64,
    pub rotations: u64,
    /// Scale breakpoints that matched an existing boundary within tolerance.
    pub boundary_reuses: u64,
}

/// Invariant-check results from [`DualTree::audit`].
#[derive(Debug, Clone, Default)]
pub struct AuditReport {
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DualTree {
    msg: Vec<MsgNode>,
    prob: Vec<ProbNode>,
    msg_root: NodeId,
    prob_root: NodeId,
    precision: u32,
    leaf_count: usize,
    counters: Counters,
}

fn limbs(b: &BigUint) -> u64 {
    (b.bits() + 63) / 64
}

impl DualTree {
    /// A single paired leaf: message `[0,1]` maps to probability `[0,1]`.
    pub fn new(precision_bits: u32) -> Self {
        let precision = precision_bits.max(32);
        DualTree {
            msg: vec![MsgNode {
                parent: None,
                left: None,
                right: None,
                len: Dyadic::one(),
                pair: 0,
            }],
            prob: vec![ProbNode {
                parent: None,
                left: None,
                right: None,
                mid: 0.5,
                pair: 0,
            }],
            msg_root: 0,
            prob_root: 0,
            precision,
            leaf_count: 1,
            counters: Counters::default(),
        }
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn node_count(&self) -> usize {
        self.msg.len()
    }

    /// One unit of message space is `2^-precision`; this is `1.0` in units.
    pub fn one_in_units(&self) -> BigUint {
        BigUint::one() << self.precision
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = Counters::default();
    }

    fn msg_is_leaf(&self, id: NodeId) -> bool {
        self.msg[id as usize].left.is_none()
    }

    fn prob_is_leaf(&self, id: NodeId) -> bool {
        self.prob[id as usize].left.is_none()
    }

    /// Probability-tree node ids that currently have children.
    pub fn prob_internal_ids(&self) -> Vec<NodeId> {
        (0..self.prob.len() as NodeId)
            .filter(|&id| !self.prob_is_leaf(id))
            .collect()
    }

    /// Cumulative map at a message-space position given in `2^-precision`
    /// units. Monotone nondecreasing, with `query(0) = 0` and `query(1) = 1`.
    pub fn query_msg_units(&mut self, x_units: &BigUint) -> f64 {
        let total = self.one_in_units();
        let mut x = if x_units > &total { total.clone() } else { x_units.clone() };
        if x.is_zero() {
            return 0.0;
        }
        if x == total {
            return 1.0;
        }
        let mut a = self.msg_root;
        while !self.msg_is_leaf(a) {
            self.counters.unit_ops += 1;
            let l = self.msg[a as usize].left.unwrap();
            let lu = self.msg[l as usize].len.to_units(self.precision);
            self.counters.limb_ops += limbs(&lu);
            if x <= lu {
                a = l;
            } else {
                x -= &lu;
                a = self.msg[a as usize].right.unwrap();
            }
        }
        let leaf_units = self.msg[a as usize].len.to_units(self.precision);
        self.counters.limb_ops += limbs(&leaf_units);
        let frac = ratio_f64(&x, &leaf_units);

        let leaf = self.msg[a as usize].pair;
        let mut v = frac;
        let mut b = leaf;
        while let Some(p) = self.prob[b as usize].parent {
            self.counters.unit_ops += 1;
            let mid = self.prob[p as usize].mid;
            if self.prob[p as usize].left == Some(b) {
                v *= mid;
            } else {
                v = v * (1.0 - mid) + mid;
            }
            b = p;
        }
        if let Some(p) = self.prob[leaf as usize].parent {
            self.splay(p);
        }
        v.clamp(0.0, 1.0)
    }

    /// Convenience query at an `f64` message-space position.
    pub fn query_msg_point(&mut self, x: f64) -> f64 {
        let units = scale_units(&self.one_in_units(), x.clamp(0.0, 1.0));
        self.query_msg_units(&units)
    }

    /// Composes the map with the rescale `[0,y] → [0,r]`, `[y,1] → [r,1]`.
    ///
    /// Splits the leaf containing `y` in both trees (the message-space split
    /// carries the within-leaf fraction over linearly) and rotates the
    /// breakpoint node to the probability-tree root. A breakpoint within
    /// [`EDGE_TOL`] of an existing boundary reuses that boundary instead of
    /// splitting, so repeated updates cannot create zero-width leaves.
    pub fn scale_interval(&mut self, y: f64, r: f64) -> Result<(), TreeError> {
        if !y.is_finite()
            || !r.is_finite()
            || y < EDGE_TOL
            || y > 1.0 - EDGE_TOL
            || r < EDGE_TOL
            || r > 1.0 - EDGE_TOL
        {
            return Err(TreeError::DegenerateBreakpoint { y, r });
        }
        // Descend by the renormalized local coordinate (the split fraction
        // stays accurate relative to the leaf's mass, however small); carry
        // global bounds only for the boundary-reuse check.
        let mut b = self.prob_root;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut y_local = y;
        while !self.prob_is_leaf(b) {
            self.counters.unit_ops += 1;
            let mid = self.prob[b as usize].mid;
            let bound = lo + (hi - lo) * mid;
            if (y - bound).abs() <= EDGE_TOL {
                self.counters.boundary_reuses += 1;
                self.rotate_to_root_prob(b);
                self.prob[b as usize].mid = r;
                return Ok(());
            }
            if y_local <= mid && mid > 0.0 {
                y_local = (y_local / mid).clamp(0.0, 1.0);
                hi = bound;
                b = self.prob[b as usize].left.unwrap();
            } else {
                y_local = ((y_local - mid) / (1.0 - mid)).clamp(0.0, 1.0);
                lo = bound;
                b = self.prob[b as usize].right.unwrap();
            }
        }
        let y_loc = y_local.clamp(EDGE_TOL, 1.0 - EDGE_TOL);
        self.split_leaf(b, y_loc);
        self.rotate_to_root_prob(b);
        self.prob[b as usize].mid = r;
        Ok(())
    }

    /// Splits the paired leaf `b` (probability id) at within-leaf fraction
    /// `y_loc`; the split is a no-op on the map until the caller changes the
    /// new node's `mid`.
    fn split_leaf(&mut self, b: NodeId, y_loc: f64) {
        let a = self.prob[b as usize].pair;
        let len = &self.msg[a as usize].len;
        let left_len = len.mul_fraction(y_loc);
        let right_len = len.sub_exact(&left_len);
        self.counters.unit_ops += 2;
        self.counters.limb_ops += (left_len.mant_bits() + 63) / 64;

        let ml = self.msg.len() as NodeId;
        let mr = ml + 1;
        let pl = self.prob.len() as NodeId;
        let pr = pl + 1;
        self.msg.push(MsgNode {
            parent: Some(a),
            left: None,
            right: None,
            len: left_len,
            pair: pl,
        });
        self.msg.push(MsgNode {
            parent: Some(a),
            left: None,
            right: None,
            len: right_len,
            pair: pr,
        });
        self.prob.push(ProbNode {
            parent: Some(b),
            left: None,
            right: None,
            mid: 0.5,
            pair: ml,
        });
        self.prob.push(ProbNode {
            parent: Some(b),
            left: None,
            right: None,
            mid: 0.5,
            pair: mr,
        });
        self.msg[a as usize].left = Some(ml);
        self.msg[a as usize].right = Some(mr);
        self.prob[b as usize].left = Some(pl);
        self.prob[b as usize].right = Some(pr);
        self.prob[b as usize].mid = y_loc;
        self.leaf_count += 1;
    }

    /// Splays a probability-tree node to the root; public so tests can check
    /// that rotations never change the represented map.
    pub fn rotate_to_root(&mut self, node: NodeId) -> Result<(), TreeError> {
        if node as usize >= self.prob.len() {
            return Err(TreeError::UnknownNode(node));
        }
        self.rotate_to_root_prob(node);
        Ok(())
    }

    fn rotate_to_root_prob(&mut self, node: NodeId) {
        self.splay(node);
    }

    fn splay(&mut self, x: NodeId) {
        while let Some(p) = self.prob[x as usize].parent {
            match self.prob[p as usize].parent {
                None => self.rotate_up(x),
                Some(g) => {
                    let x_left = self.prob[p as usize].left == Some(x);
                    let p_left = self.prob[g as usize].left == Some(p);
                    if x_left == p_left {
                        self.rotate_up(p);
                        self.rotate_up(x);
                    } else {
                        self.rotate_up(x);
                        self.rotate_up(x);
                    }
                }
            }
        }
    }

    /// Recomputed ratios stay inside the open unit interval: rounding a
    /// truly interior ratio to exactly 0 or 1 would zero out a subtree's
    /// mass for good, while a one-ulp clamp only perturbs it relatively.
    const MID_LO: f64 = 1e-300;
    const MID_HI: f64 = 1.0 - f64::EPSILON / 2.0;

    /// One rotation moving `x` above its parent, recomputing `mid` so each
    /// node keeps mid = (left-subtree mass)/(subtree mass). Zero-mass
    /// subtrees make that ratio 0/0; any value is then correct, we use 1/2.
    fn rotate_up(&mut self, x: NodeId) {
        let p = self.prob[x as usize].parent.expect("rotate_up at root");
        let g = self.prob[p as usize].parent;
        let pm = self.prob[p as usize].mid;
        let xm = self.prob[x as usize].mid;
        let x_left = self.prob[p as usize].left == Some(x);
        if x_left {
            let new_x = (pm * xm).clamp(Self::MID_LO, Self::MID_HI);
            // Denominator as a sum of positive terms: 1 - pm·xm cancels badly
            // when both mids are near 1.
            let b_mass = pm * (1.0 - xm);
            let denom = b_mass + (1.0 - pm);
            let new_p = if denom > 0.0 {
                (b_mass / denom).clamp(Self::MID_LO, Self::MID_HI)
            } else {
                0.5
            };
            let moved = self.prob[x as usize].right;
            self.prob[p as usize].left = moved;
            if let Some(c) = moved {
                self.prob[c as usize].parent = Some(p);
            }
            self.prob[x as usize].right = Some(p);
            self.prob[p as usize].parent = Some(x);
            self.prob[x as usize].mid = new_x;
            self.prob[p as usize].mid = new_p;
        } else {
            let new_x = (pm + (1.0 - pm) * xm).clamp(Self::MID_LO, Self::MID_HI);
            let new_p = if new_x > 0.0 {
                (pm / new_x).clamp(Self::MID_LO, Self::MID_HI)
            } else {
                0.5
            };
            let moved = self.prob[x as usize].left;
            self.prob[p as usize].right = moved;
            if let Some(c) = moved {
                self.prob[c as usize].parent = Some(p);
            }
            self.prob[x as usize].left = Some(p);
            self.prob[p as usize].parent = Some(x);
            self.prob[x as usize].mid = new_x;
            self.prob[p as usize].mid = new_p;
        }
        self.prob[x as usize].parent = g;
        match g {
            None => self.prob_root = x,
            Some(gg) => {
                if self.prob[gg as usize].left == Some(p) {
                    self.prob[gg as usize].left = Some(x);
                } else {
                    self.prob[gg as usize].right = Some(x);
                }
            }
        }
        self.counters.rotations += 1;
        self.counters.unit_ops += 1;
    }

    /// Composes the map with the piecewise-linear rescale whose segment
    /// slopes are `factors` between consecutive `breakpoints`.
    ///
    /// Realized as `scale_interval` calls from the largest breakpoint down.
    /// For breakpoint `b` between target slopes `(f_l, f_r)`, the call ratio
    /// is `r = b·f_l / (b·f_l + (1-b)·f_r)`; remaining breakpoints are then
    /// remapped through the applied rescale, so each call realizes exactly
    /// one slope ratio of the target map. Adjacent equal factors are merged
    /// first, and calls whose breakpoint or ratio falls within [`EDGE_TOL`]
    /// of 0 or 1 are skipped — such a call moves at most `EDGE_TOL` of mass.
    pub fn apply_piecewise_rescale(
        &mut self,
        breakpoints: &[f64],
        factors: &[f64],
    ) -> Result<(), TreeError> {
        if factors.len() != breakpoints.len() + 1 {
            return Err(TreeError::RescaleShape(format!(
                "{} breakpoints need {} factors, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                factors.len()
            )));
        }
        for f in factors {
            if !f.is_finite() || *f < 0.0 {
                return Err(TreeError::RescaleShape(format!("bad factor {f}")));
            }
        }
        for w in breakpoints.windows(2) {
            if w[0] >= w[1] {
                return Err(TreeError::RescaleShape(format!(
                    "breakpoints not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let (Some(first), Some(last)) = (breakpoints.first(), breakpoints.last()) {
            if *first < EDGE_TOL || *last > 1.0 - EDGE_TOL {
                return Err(TreeError::RescaleShape(format!(
                    "breakpoints must lie strictly inside (0,1): {first}..{last}"
                )));
            }
        }
        let mut mass = 0.0;
        let mut prev = 0.0;
        for (k, f) in factors.iter().enumerate() {
            let next = breakpoints.get(k).copied().unwrap_or(1.0);
            mass += f * (next - prev);
            prev = next;
        }
        if (mass - 1.0).abs() > 1e-9 {
            return Err(TreeError::UnnormalizedRescale { mass });
        }

        // Merge runs of equal adjacent factors; their breakpoints are no-ops.
        let mut pts: Vec<f64> = Vec::with_capacity(breakpoints.len());
        let mut slopes: Vec<f64> = vec![factors[0]];
        for (k, &b) in breakpoints.iter().enumerate() {
            if factors[k + 1] != *slopes.last().unwrap() {
                pts.push(b);
                slopes.push(factors[k + 1]);
            }
        }

        for j in (0..pts.len()).rev() {
            let y = pts[j];
            let fl = slopes[j];
            let fr = slopes[j + 1];
            let denom = y * fl + (1.0 - y) * fr;
            if denom <= 0.0 {
                continue; // both sides massless; nothing to place
            }
            let r = y * fl / denom;
            if y < EDGE_TOL || y > 1.0 - EDGE_TOL || r < EDGE_TOL || r > 1.0 - EDGE_TOL {
                continue;
            }
            self.scale_interval(y, r)?;
            for p in pts.iter_mut().take(j) {
                *p *= r / y;
            }
        }
        Ok(())
    }

    /// Message index in `[1, m]` whose cell contains the probability-space
    /// midpoint, via `floor(x·m + 1/2)` on the message-space position `x` of
    /// cumulative mass 1/2, accumulated on the `2^-precision` grid.
    pub fn posterior_median(&mut self, m: &BigUint) -> BigUint {
        let mut b = self.prob_root;
        let mut y = 0.5f64;
        while !self.prob_is_leaf(b) {
            self.counters.unit_ops += 1;
            let mid = self.prob[b as usize].mid;
            if y <= mid && mid > 0.0 {
                y = (y / mid).clamp(0.0, 1.0);
                b = self.prob[b as usize].left.unwrap();
            } else {
                y = ((y - mid) / (1.0 - mid)).clamp(0.0, 1.0);
                b = self.prob[b as usize].right.unwrap();
            }
        }
        let mut a = self.prob[b as usize].pair;
        let leaf_units = self.msg[a as usize].len.to_units(self.precision);
        self.counters.limb_ops += limbs(&leaf_units);
        let mut acc = scale_units(&leaf_units, y);
        while let Some(p) = self.msg[a as usize].parent {
            self.counters.unit_ops += 1;
            if self.msg[p as usize].right == Some(a) {
                let l = self.msg[p as usize].left.unwrap();
                let lu = self.msg[l as usize].len.to_units(self.precision);
                self.counters.limb_ops += limbs(&lu);
                acc += lu;
            }
            a = p;
        }
        if let Some(p) = self.prob[b as usize].parent {
            self.splay(p);
        }
        let raw = round_scaled(&acc, m, self.precision);
        if raw.is_zero() {
            BigUint::one()
        } else if &raw > m {
            m.clone()
        } else {
            raw
        }
    }

    /// Verifies structural invariants; returns the violations found.
    pub fn audit(&self) -> AuditReport {
        let mut v = Vec::new();
        if self.msg.len() != self.prob.len() {
            v.push(format!(
                "arena sizes differ: {} message vs {} probability nodes",
                self.msg.len(),
                self.prob.len()
            ));
        }
        for id in 0..self.msg.len() {
            let pair = self.msg[id].pair as usize;
            if pair >= self.prob.len() || self.prob[pair].pair as usize != id {
                v.push(format!("pairing broken at message node {id}"));
                continue;
            }
            if self.msg[id].left.is_none() != self.prob[pair].left.is_none() {
                v.push(format!(
                    "node {id} is a leaf in one tree but not the other"
                ));
            }
        }
        for id in 0..self.prob.len() {
            let mid = self.prob[id].mid;
            if !(0.0..=1.0).contains(&mid) || !mid.is_finite() {
                v.push(format!("probability node {id} has mid {mid} outside [0,1]"));
            }
        }
        // Children links and parent back-links.
        for (label, nodes) in [("message", true), ("probability", false)] {
            let n = self.msg.len();
            for id in 0..n {
                let (l, r, _parent) = if nodes {
                    (self.msg[id].left, self.msg[id].right, self.msg[id].parent)
                } else {
                    (self.prob[id].left, self.prob[id].right, self.prob[id].parent)
                };
                if l.is_some() != r.is_some() {
                    v.push(format!("{label} node {id} has exactly one child"));
                }
                for c in [l, r].into_iter().flatten() {
                    let back = if nodes {
                        self.msg[c as usize].parent
                    } else {
                        self.prob[c as usize].parent
                    };
                    if back != Some(id as NodeId) {
                        v.push(format!("{label} node {c} has wrong parent link"));
                    }
                }
            }
        }
        // Exact length additivity and root length 1.
        for id in 0..self.msg.len() {
            if let (Some(l), Some(r)) = (self.msg[id].left, self.msg[id].right) {
                let sum = self.msg[l as usize].len.add_exact(&self.msg[r as usize].len);
                if sum != self.msg[id].len {
                    v.push(format!("message node {id} length != sum of children"));
                }
            }
        }
        if self.msg[self.msg_root as usize].len != Dyadic::one() {
            v.push("message root length != 1".into());
        }
        // Leaf sequences of the two trees correspond under the pairing.
        let msg_leaves = self.in_order_leaves(true);
        let prob_leaves = self.in_order_leaves(false);
        if msg_leaves.len() != prob_leaves.len() {
            v.push("leaf counts differ between trees".into());
        } else {
            for (m, p) in msg_leaves.iter().zip(&prob_leaves) {
                if self.msg[*m as usize].pair != *p {
                    v.push(format!(
                        "in-order leaf order mismatch: message {m} pairs {} not {p}",
                        self.msg[*m as usize].pair
                    ));
                    break;
                }
            }
        }
        if msg_leaves.len() != self.leaf_count {
            v.push(format!(
                "leaf_count {} but found {} leaves",
                self.leaf_count,
                msg_leaves.len()
            ));
        }
        // Implied probability-space leaf masses sum to 1.
        let mut total = 0.0f64;
        let mut stack = vec![(self.prob_root, 1.0f64)];
        while let Some((id, mass)) = stack.pop() {
            match (self.prob[id as usize].left, self.prob[id as usize].right) {
                (Some(l), Some(r)) => {
                    let mid = self.prob[id as usize].mid;
                    stack.push((l, mass * mid));
                    stack.push((r, mass * (1.0 - mid)));
                }
                _ => total += mass,
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            v.push(format!("total probability mass {total} != 1"));
        }
        AuditReport { violations: v }
    }

    fn in_order_leaves(&self, message_tree: bool) -> Vec<NodeId> {
        let root = if message_tree { self.msg_root } else { self.prob_root };
        let mut out = Vec::with_capacity(self.leaf_count);
        let mut stack = Vec::new();
        let mut cur = Some(root);
        while cur.is_some() || !stack.is_empty() {
            while let Some(id) = cur {
                stack.push(id);
                cur = if message_tree {
                    self.msg[id as usize].left
                } else {
                    self.prob[id as usize].left
                };
            }
            let id = stack.pop().unwrap();
            let (l, r) = if message_tree {
                (self.msg[id as usize].left, self.msg[id as usize].right)
            } else {
                (self.prob[id as usize].left, self.prob[id as usize].right)
            };
            if l.is_none() {
                out.push(id);
            }
            cur = r;
        }
        out
    }

    /// Newline-delimited pre-order dump of both trees, stable for a given
    /// operation sequence. Lines are
    /// `M <id> parent=<id|-> <leaf|node> len=<hex mant>/2^<shift> pair=<id>`
    /// and `P <id> parent=<id|-> <leaf|node> mid=<f64 bits hex> pair=<id>`.
    pub fn debug_dump(&self) -> String {
        let mut out = format!(
            "dualtree precision={} leaves={}\n",
            self.precision, self.leaf_count
        );
        let fmt_parent = |p: Option<NodeId>| match p {
            Some(id) => id.to_string(),
            None => "-".into(),
        };
        let mut stack = vec![self.msg_root];
        while let Some(id) = stack.pop() {
            let n = &self.msg[id as usize];
            let kind = if n.left.is_none() { "leaf" } else { "node" };
            out.push_str(&format!(
                "M {id} parent={} {kind} len={} pair={}\n",
                fmt_parent(n.parent),
                n.len.to_hex(),
                n.pair
            ));
            if let (Some(l), Some(r)) = (n.left, n.right) {
                stack.push(r);
                stack.push(l);
            }
        }
        let mut stack = vec![self.prob_root];
        while let Some(id) = stack.pop() {
            let n = &self.prob[id as usize];
            let kind = if n.left.is_none() { "leaf" } else { "node" };
            out.push_str(&format!(
                "P {id} parent={} {kind} mid={:016x} pair={}\n",
                fmt_parent(n.parent),
                n.mid.to_bits(),
                n.pair
            ));
            if let (Some(l), Some(r)) = (n.left, n.right) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// FNV-1a digest of the canonical pre-order dump; equal trees hash equal.
    pub fn tree_hash(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for byte in self.debug_dump().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    /// Overwrites a probability node's `mid` without bookkeeping. Exists so
    /// tests can corrupt a tree and check that audits and hashes notice.
    #[doc(hidden)]
    pub fn set_mid_raw(&mut self, node: NodeId, mid: f64) {
        self.prob[node as usize].mid = mid;
    }

    /// Implied probability masses of the leaves in message order; test support.
    #[doc(hidden)]
    pub fn leaf_masses_in_order(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.leaf_count);
        let mut stack = vec![(self.prob_root, 1.0f64)];
        // in-order traversal with masses
        let mut out: Vec<(NodeId, f64)> = Vec::new();
        stack.clear();
        let mut cur = Some((self.prob_root, 1.0f64));
        let mut path: Vec<(NodeId, f64)> = Vec::new();
        while cur.is_some() || !path.is_empty() {
            while let Some((id, mass)) = cur {
                path.push((id, mass));
                cur = self.prob[id as usize]
                    .left
                    .map(|l| (l, mass * self.prob[id as usize].mid));
            }
            let (id, mass) = path.pop().unwrap();
            if self.prob[id as usize].left.is_none() {
                out.push((id, mass));
            }
            cur = self.prob[id as usize]
                .right
                .map(|r| (r, mass * (1.0 - self.prob[id as usize].mid)));
        }
        // message order = in-order of the message tree through the pairing
        let msg_leaves = self.in_order_leaves(true);
        let lookup: std::collections::HashMap<NodeId, f64> = out.into_iter().collect();
        for m in msg_leaves {
            acc.push(lookup[&self.msg[m as usize].pair]);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Flat sorted-array implementation of the piecewise-linear map: the
    /// independent oracle for the tree. Segments hold (message-space width,
    /// probability mass) pairs; scales split one segment and multiply masses,
    /// queries scan with a running sum.
    #[derive(Debug, Clone)]
    pub struct FlatMap {
        widths: Vec<f64>,
        masses: Vec<f64>,
    }

    impl FlatMap {
        fn new() -> Self {
            FlatMap { widths: vec![1.0], masses: vec![1.0] }
        }

        fn query(&self, x: f64) -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            if x >= 1.0 {
                return 1.0;
            }
            let mut w_acc = 0.0;
            let mut m_acc = 0.0;
            for (w, m) in self.widths.iter().zip(&self.masses) {
                if x < w_acc + w || w_acc + w >= 1.0 {
                    let frac = if *w > 0.0 { (x - w_acc) / w } else { 0.0 };
                    return (m_acc + m * frac.clamp(0.0, 1.0)).clamp(0.0, 1.0);
                }
                w_acc += w;
                m_acc += m;
            }
            1.0
        }

        fn scale(&mut self, y: f64, r: f64) {
            // Split the segment whose mass range contains y, then rescale.
            // The remainder is tracked with Neumaier compensation so the
            // split fraction stays accurate relative to the segment mass.
            let mut rem = y;
            let mut comp = 0.0f64;
            let mut split_at = self.masses.len();
            for (k, m) in self.masses.iter().enumerate() {
                if rem + comp < *m {
                    let frac = ((rem + comp) / m).clamp(0.0, 1.0);
                    if frac > 0.0 && frac < 1.0 {
                        let (w, mm) = (self.widths[k], self.masses[k]);
                        self.widths[k] = w * frac;
                        self.masses[k] = mm * frac;
                        self.widths.insert(k + 1, w * (1.0 - frac));
                        self.masses.insert(k + 1, mm * (1.0 - frac));
                        split_at = k + 1;
                    } else {
                        split_at = if frac == 0.0 { k } else { k + 1 };
                    }
                    break;
                }
                let d = rem - m;
                comp += (rem - d) - m;
                rem = d;
            }
            // Renormalize each side against its actual sum, so the
            // breakpoint's cumulative is re-anchored to exactly r (the tree
            // does the same by setting the root ratio).
            let lsum: f64 = self.masses[..split_at].iter().sum();
            let rsum: f64 = self.masses[split_at..].iter().sum();
            let left = if lsum > 0.0 { r / lsum } else { 0.0 };
            let right = if rsum > 0.0 { (1.0 - r) / rsum } else { 0.0 };
            for (k, m) in self.masses.iter_mut().enumerate() {
                *m *= if k < split_at { left } else { right };
            }
        }
    }

    fn probes() -> Vec<f64> {
        let mut rng = SplitMix64::new(99);
        let mut p: Vec<f64> = (0..64).map(|_| rng.next_unit()).collect();
        p.push(0.0);
        p.push(1.0);
        p
    }

    #[test]
    fn fresh_tree_is_identity() {
        let mut t = DualTree::new(64);
        assert_eq!(t.leaf_count(), 1);
        for x in probes() {
            assert!((t.query_msg_point(x) - x).abs() < 1e-12);
        }
        assert!((t.query_msg_point(0.37) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn fresh_tree_medians() {
        let mut t = DualTree::new(64);
        assert_eq!(t.posterior_median(&BigUint::from(2u32)), BigUint::from(1u32));
        assert_eq!(t.posterior_median(&BigUint::from(8u32)), BigUint::from(4u32));
        assert_eq!(t.posterior_median(&BigUint::from(1u32)), BigUint::from(1u32));
    }

    #[test]
    fn single_scale_matches_hand_values() {
        let mut t = DualTree::new(64);
        t.scale_interval(0.5, 0.9).unwrap();
        assert!((t.query_msg_point(0.25) - 0.45).abs() < 1e-12);
        assert!((t.query_msg_point(0.75) - 0.95).abs() < 1e-12);
        assert!((t.query_msg_point(0.0) - 0.0).abs() < 1e-15);
        assert!((t.query_msg_point(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_scale_is_noop() {
        for y in [0.2, 0.5, 0.77] {
            let mut t = DualTree::new(64);
            t.scale_interval(0.3, 0.6).unwrap();
            let before: Vec<f64> = probes().iter().map(|&x| t.query_msg_point(x)).collect();
            t.scale_interval(y, y).unwrap();
            for (x, b) in probes().iter().zip(before) {
                assert!((t.query_msg_point(*x) - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_scales_match_composed_oracle() {
        let mut t = DualTree::new(64);
        let mut oracle = FlatMap::new();
        for (y, r) in [(0.4, 0.7), (0.6, 0.35)] {
            t.scale_interval(y, r).unwrap();
            oracle.scale(y, r);
        }
        for x in probes() {
            assert!(
                (t.query_msg_point(x) - oracle.query(x)).abs() < 1e-12,
                "x={x}"
            );
        }
    }

    #[test]
    fn degenerate_breakpoints_rejected() {
        let mut t = DualTree::new(64);
        assert!(matches!(
            t.scale_interval(1e-16, 0.5),
            Err(TreeError::DegenerateBreakpoint { .. })
        ));
        assert!(matches!(
            t.scale_interval(0.5, 1.0 - 1e-16),
            Err(TreeError::DegenerateBreakpoint { .. })
        ));
        assert!(matches!(
            t.scale_interval(f64::NAN, 0.5),
            Err(TreeError::DegenerateBreakpoint { .. })
        ));
    }

    #[test]
    fn near_boundary_breakpoint_reuses_node() {
        let mut t = DualTree::new(64);
        t.scale_interval(0.5, 0.5).unwrap();
        let leaves = t.leaf_count();
        // Within EDGE_TOL of the existing boundary: no new leaves.
        t.scale_interval(0.5 + 1e-16, 0.8).unwrap();
        assert_eq!(t.leaf_count(), leaves);
        assert!((t.query_msg_point(0.5) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn piecewise_rescale_examples() {
        let mut t = DualTree::new(64);
        t.apply_piecewise_rescale(&[0.5], &[1.8, 0.2]).unwrap();
        assert!((t.query_msg_point(0.5) - 0.9).abs() < 1e-12);

        let mut t = DualTree::new(64);
        let before: Vec<f64> = probes().iter().map(|&x| t.query_msg_point(x)).collect();
        t.apply_piecewise_rescale(&[0.3, 0.7], &[1.0, 1.0, 1.0]).unwrap();
        for (x, b) in probes().iter().zip(before) {
            assert!((t.query_msg_point(*x) - b).abs() < 1e-12);
        }

        let mut t = DualTree::new(64);
        t.apply_piecewise_rescale(&[1.0 / 3.0, 2.0 / 3.0], &[1.5, 0.75, 0.75])
            .unwrap();
        assert!((t.query_msg_point(1.0 / 3.0) - 0.5).abs() < 1e-12);
        assert!((t.query_msg_point(2.0 / 3.0) - 0.75).abs() < 1e-12);
        assert!((t.query_msg_point(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn piecewise_rescale_three_distinct_slopes() {
        // Target slopes (3/2, 9/8, 3/8) over thirds: images 1/2, 7/8.
        let mut t = DualTree::new(64);
        t.apply_piecewise_rescale(&[1.0 / 3.0, 2.0 / 3.0], &[1.5, 1.125, 0.375])
            .unwrap();
        assert!((t.query_msg_point(1.0 / 3.0) - 0.5).abs() < 1e-12);
        assert!((t.query_msg_point(2.0 / 3.0) - 0.875).abs() < 1e-12);
        assert!((t.query_msg_point(0.5) - (0.5 + 1.125 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn piecewise_rescale_validation() {
        let mut t = DualTree::new(64);
        assert!(matches!(
            t.apply_piecewise_rescale(&[0.5], &[1.5, 1.5]),
            Err(TreeError::UnnormalizedRescale { .. })
        ));
        assert!(matches!(
            t.apply_piecewise_rescale(&[0.5], &[1.0]),
            Err(TreeError::RescaleShape(_))
        ));
        assert!(matches!(
            t.apply_piecewise_rescale(&[0.7, 0.3], &[1.0, 1.0, 1.0]),
            Err(TreeError::RescaleShape(_))
        ));
    }

    #[test]
    fn rotations_preserve_map_and_order() {
        let mut rng = SplitMix64::new(5);
        let mut t = DualTree::new(64);
        // Build a ~200-leaf tree.
        while t.leaf_count() < 200 {
            let y = 0.01 + 0.98 * rng.next_unit();
            let r = 0.01 + 0.98 * rng.next_unit();
            t.scale_interval(y, r).unwrap();
        }
        let before: Vec<f64> = probes().iter().map(|&x| t.query_msg_point(x)).collect();
        let leaves_before = t.in_order_leaves(false);
        let internals = t.prob_internal_ids();
        for k in 0..50 {
            let pick = internals[(rng.next_u64() as usize) % internals.len()];
            t.rotate_to_root(pick).unwrap();
            let _ = k;
        }
        // Rotating the root is a no-op.
        let root = t.prob_root;
        t.rotate_to_root(root).unwrap();
        for (x, b) in probes().iter().zip(&before) {
            assert!((t.query_msg_point(*x) - b).abs() < 1e-12);
        }
        assert_eq!(t.in_order_leaves(false), leaves_before);
        assert!(t.audit().is_clean());
    }

    #[test]
    fn splay_transparency_under_interleaving() {
        let mut rng = SplitMix64::new(17);
        let ops: Vec<(f64, f64)> = (0..200)
            .map(|_| (0.01 + 0.98 * rng.next_unit(), 0.01 + 0.98 * rng.next_unit()))
            .collect();
        let mut plain = DualTree::new(64);
        let mut rotated = DualTree::new(64);
        let mut pick = SplitMix64::new(18);
        for (y, r) in ops {
            plain.scale_interval(y, r).unwrap();
            rotated.scale_interval(y, r).unwrap();
            let internals = rotated.prob_internal_ids();
            let node = internals[(pick.next_u64() as usize) % internals.len()];
            rotated.rotate_to_root(node).unwrap();
        }
        for x in probes() {
            assert!((plain.query_msg_point(x) - rotated.query_msg_point(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_mixed_ops_match_flat_oracle() {
        let mut rng = SplitMix64::new(2024);
        let mut t = DualTree::new(96);
        let mut oracle = FlatMap::new();
        let probes = probes();
        for step in 0..10_000 {
            let y = 0.001 + 0.998 * rng.next_unit();
            let r = 0.001 + 0.998 * rng.next_unit();
            t.scale_interval(y, r).unwrap();
            oracle.scale(y, r);
            if step % 500 == 0 {
                for &x in &probes {
                    let a = t.query_msg_point(x);
                    let b = oracle.query(x);
                    assert!((a - b).abs() < 1e-9, "step {step} x={x}: {a} vs {b}");
                }
            }
        }
        for &x in &probes {
            assert!((t.query_msg_point(x) - oracle.query(x)).abs() < 1e-9);
        }
        let report = t.audit();
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn queries_are_monotone() {
        let mut rng = SplitMix64::new(31);
        let mut t = DualTree::new(64);
        for _ in 0..500 {
            t.scale_interval(0.01 + 0.98 * rng.next_unit(), 0.01 + 0.98 * rng.next_unit())
                .unwrap();
        }
        for _ in 0..200 {
            let (a, b) = (rng.next_unit(), rng.next_unit());
            let (x1, x2) = if a < b { (a, b) } else { (b, a) };
            assert!(t.query_msg_point(x1) <= t.query_msg_point(x2) + 1e-15);
        }
        assert_eq!(t.query_msg_point(0.0), 0.0);
        assert_eq!(t.query_msg_point(1.0), 1.0);
    }

    #[test]
    fn median_follows_concentrated_mass() {
        // Put 99% of the mass on cell 8 of 16 = [0.4375, 0.5], with almost
        // nothing below it, so the mass midpoint falls inside that cell.
        let mut t = DualTree::new(64);
        t.apply_piecewise_rescale(
            &[0.4375, 0.5],
            &[0.0001 / 0.4375, 0.99 / 0.0625, 0.0099 / 0.5],
        )
        .unwrap();
        assert!((t.query_msg_point(0.4375) - 0.0001).abs() < 1e-12);
        assert!((t.query_msg_point(0.5) - 0.9901).abs() < 1e-12);
        assert_eq!(t.posterior_median(&BigUint::from(16u32)), BigUint::from(8u32));
        assert_eq!(t.posterior_median(&BigUint::from(1u32)), BigUint::from(1u32));
    }

    #[test]
    fn audit_flags_corruption() {
        let mut t = DualTree::new(64);
        t.scale_interval(0.5, 0.7).unwrap();
        assert!(t.audit().is_clean());
        let root = t.prob_root;
        t.set_mid_raw(root, 1.5);
        let report = t.audit();
        assert!(!report.is_clean());
        assert!(report.violations.iter().any(|v| v.contains("mid 1.5")));
    }

    #[test]
    fn audit_clean_after_many_random_ops() {
        let mut rng = SplitMix64::new(77);
        let mut t = DualTree::new(96);
        for _ in 0..10_000 {
            let y = 0.001 + 0.998 * rng.next_unit();
            let r = 0.001 + 0.998 * rng.next_unit();
            t.scale_interval(y, r).unwrap();
        }
        let report = t.audit();
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn rotation_count_is_amortized_logarithmic() {
        let mut rng = SplitMix64::new(123);
        let mut t = DualTree::new(64);
        let n = 20_000u64;
        t.reset_counters();
        for _ in 0..n {
            let y = 0.001 + 0.998 * rng.next_unit();
            let r = 0.001 + 0.998 * rng.next_unit();
            t.scale_interval(y, r).unwrap();
            t.query_msg_point(rng.next_unit());
        }
        let rotations = t.counters().rotations;
        let bound = 12.0 * (2 * n) as f64 * ((n + 2) as f64).log2();
        assert!(
            (rotations as f64) < bound,
            "rotations {rotations} exceed {bound}"
        );
    }

    #[test]
    fn dumps_and_hashes_are_reproducible() {
        let build = || {
            let mut t = DualTree::new(64);
            t.scale_interval(0.4, 0.7).unwrap();
            t.scale_interval(0.2, 0.1).unwrap();
            t
        };
        let a = build();
        let b = build();
        assert_eq!(a.debug_dump(), b.debug_dump());
        assert_eq!(a.tree_hash(), b.tree_hash());
        let mut c = build();
        let root = c.prob_root;
        c.set_mid_raw(root, 0.123);
        assert_ne!(a.tree_hash(), c.tree_hash());
        // Fixed two-op golden: root mid is the second ratio.
        assert!(a.debug_dump().starts_with("dualtree precision=64 leaves=3\n"));
    }

    #[test]
    fn total_mass_stays_normalized() {
        let mut rng = SplitMix64::new(55);
        let mut t = DualTree::new(64);
        for _ in 0..2_000 {
            let y = 0.001 + 0.998 * rng.next_unit();
            let r = 0.001 + 0.998 * rng.next_unit();
            t.scale_interval(y, r).unwrap();
        }
        // audit() checks the implied mass; also spot-check query(1).
        assert!(t.audit().is_clean());
        assert_eq!(t.query_msg_point(1.0), 1.0);
    }
}
