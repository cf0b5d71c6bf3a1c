//! Ordered rooted trees with labeled leaves, subtree addresses and tree ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Result, TtnError};

/// Path of child indices from the root; the root has the empty address.
pub type Address = Vec<usize>;

/// Ordered tree. Leaves carry a label (1-based site index) and a physical
/// dimension; internal nodes have at least two children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Leaf { label: usize, dim: usize },
    Node(Vec<Tree>),
}

impl Tree {
    pub fn leaf(label: usize, dim: usize) -> Self {
        Tree::Leaf { label, dim }
    }

    pub fn node(children: Vec<Tree>) -> Result<Self> {
        let t = Tree::Node(children);
        t.validate()?;
        Ok(t)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Leaf { .. } => &[],
            Tree::Node(c) => c,
        }
    }

    /// Checks arity and leaf disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        self.validate_into(&mut seen)
    }

    fn validate_into(&self, seen: &mut BTreeSet<usize>) -> Result<()> {
        match self {
            Tree::Leaf { label, dim } => {
                if *dim == 0 {
                    return Err(TtnError::InvalidTree(format!("leaf {label} has dimension 0")));
                }
                if !seen.insert(*label) {
                    return Err(TtnError::InvalidTree(format!("leaf label {label} appears twice")));
                }
                Ok(())
            }
            Tree::Node(ch) => {
                if ch.len() < 2 {
                    return Err(TtnError::InvalidTree(format!(
                        "internal node with {} children (need at least 2)",
                        ch.len()
                    )));
                }
                ch.iter().try_for_each(|c| c.validate_into(seen))
            }
        }
    }

    pub fn height(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 0,
            Tree::Node(ch) => 1 + ch.iter().map(Tree::height).max().unwrap_or(0),
        }
    }

    /// Number of subtrees (vertices), leaves included.
    pub fn vertex_count(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node(ch) => 1 + ch.iter().map(Tree::vertex_count).sum::<usize>(),
        }
    }

    /// Leaf labels in depth-first order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk_leaves(&mut |l, _| out.push(l));
        out
    }

    /// Leaf dimensions in depth-first order.
    pub fn leaf_dims(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk_leaves(&mut |_, n| out.push(n));
        out
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node(ch) => ch.iter().map(Tree::num_leaves).sum(),
        }
    }

    /// Product of leaf dimensions.
    pub fn full_size(&self) -> usize {
        self.leaf_dims().iter().product()
    }

    fn walk_leaves(&self, f: &mut impl FnMut(usize, usize)) {
        match self {
            Tree::Leaf { label, dim } => f(*label, *dim),
            Tree::Node(ch) => ch.iter().for_each(|c| c.walk_leaves(f)),
        }
    }

    /// Subtree at `addr`.
    pub fn subtree(&self, addr: &[usize]) -> Option<&Tree> {
        match addr.split_first() {
            None => Some(self),
            Some((&i, rest)) => self.children().get(i)?.subtree(rest),
        }
    }

    /// All subtree addresses in depth-first pre-order.
    pub fn addresses(&self) -> Vec<Address> {
        fn go(t: &Tree, prefix: &mut Address, out: &mut Vec<Address>) {
            out.push(prefix.clone());
            for (i, c) in t.children().iter().enumerate() {
                prefix.push(i);
                go(c, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    /// Balanced tree: the first `ceil(k/2)` leaves go left, recursively.
    pub fn balanced_binary(n: usize, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(TtnError::InvalidTree(format!("need at least 2 leaves, got {d}")));
        }
        fn build(n: usize, lo: usize, hi: usize) -> Tree {
            if hi - lo == 1 {
                return Tree::leaf(lo, n);
            }
            let mid = lo + (hi - lo).div_ceil(2);
            Tree::Node(vec![build(n, lo, mid), build(n, mid, hi)])
        }
        Ok(build(n, 1, d + 1))
    }

    /// Right-leaning comb `(1, (2, (..., (d-1, d))))`: the tensor-train tree.
    pub fn tensor_train(n: usize, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(TtnError::InvalidTree(format!("need at least 2 leaves, got {d}")));
        }
        let mut t = Tree::leaf(d, n);
        for l in (1..d).rev() {
            t = Tree::Node(vec![Tree::leaf(l, n), t]);
        }
        Ok(t)
    }

    /// Parses a nested-list literal such as `((1,2),(3,4))`. Leaves are
    /// labels with an optional `:dim` suffix, defaulting to `default_dim`.
    pub fn parse(s: &str, default_dim: usize) -> Result<Self> {
        let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut pos = 0;
        let t = parse_tree(&chars, &mut pos, default_dim)?;
        if pos != chars.len() {
            return Err(TtnError::Parse(format!("trailing input at position {pos} in tree literal")));
        }
        t.validate()?;
        Ok(t)
    }

    /// Literal with explicit leaf dimensions, e.g. `((1:2,2:2),3:2)`.
    pub fn to_literal_with_dims(&self) -> String {
        match self {
            Tree::Leaf { label, dim } => format!("{label}:{dim}"),
            Tree::Node(ch) => {
                let parts: Vec<String> = ch.iter().map(Tree::to_literal_with_dims).collect();
                format!("({})", parts.join(","))
            }
        }
    }
}

fn parse_tree(c: &[char], pos: &mut usize, default_dim: usize) -> Result<Tree> {
    let err = |msg: &str, at: usize| TtnError::Parse(format!("{msg} at position {at} in tree literal"));
    match c.get(*pos) {
        Some('(') => {
            *pos += 1;
            let mut children = vec![parse_tree(c, pos, default_dim)?];
            loop {
                match c.get(*pos) {
                    Some(',') => {
                        *pos += 1;
                        children.push(parse_tree(c, pos, default_dim)?);
                    }
                    Some(')') => {
                        *pos += 1;
                        break;
                    }
                    _ => return Err(err("expected ',' or ')'", *pos)),
                }
            }
            Ok(Tree::Node(children))
        }
        Some(ch) if ch.is_ascii_digit() => {
            let label = read_uint(c, pos).ok_or_else(|| err("bad leaf label", *pos))?;
            let dim = if c.get(*pos) == Some(&':') {
                *pos += 1;
                read_uint(c, pos).ok_or_else(|| err("bad leaf dimension", *pos))?
            } else {
                default_dim
            };
            Ok(Tree::leaf(label, dim))
        }
        _ => Err(err("expected '(' or a leaf label", *pos)),
    }
}

fn read_uint(c: &[char], pos: &mut usize) -> Option<usize> {
    let start = *pos;
    while c.get(*pos).is_some_and(|ch| ch.is_ascii_digit()) {
        *pos += 1;
    }
    c[start..*pos].iter().collect::<String>().parse().ok()
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { label, .. } => write!(f, "{label}"),
            Tree::Node(ch) => {
                write!(f, "(")?;
                for (i, c) in ch.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Rank `r_tau` for every subtree, keyed by address. The root rank is 1.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TreeRank(pub BTreeMap<Address, usize>);

impl TreeRank {
    pub fn get(&self, addr: &[usize]) -> usize {
        self.0.get(addr).copied().unwrap_or(0)
    }

    pub fn max(&self) -> usize {
        self.0.values().copied().max().unwrap_or(0)
    }

    /// Uniform rank `r` clamped to the largest compatible tree rank: leaf
    /// ranks at most `n_l`, root rank 1, and
    /// `r_{tau_i} <= prod_{j != i} r_{tau_j}` at every node (with `j = 0`
    /// standing for the node's own rank).
    pub fn uniform(tree: &Tree, r: usize) -> Self {
        let mut ranks = BTreeMap::new();
        for a in tree.addresses() {
            let t = tree.subtree(&a).expect("own address");
            let v = match t {
                Tree::Leaf { dim, .. } => r.min(*dim),
                Tree::Node(_) => r,
            };
            ranks.insert(a, v.max(1));
        }
        ranks.insert(Vec::new(), 1);
        let mut tr = TreeRank(ranks);
        // Clamping only decreases ranks, so this terminates.
        loop {
            let mut changed = false;
            for a in tree.addresses() {
                let t = tree.subtree(&a).expect("own address");
                let m = t.children().len();
                if m == 0 {
                    continue;
                }
                let mut rs: Vec<usize> = vec![tr.get(&a)];
                rs.extend((0..m).map(|i| tr.get(&child(&a, i))));
                for i in 0..=m {
                    let bound: usize = rs
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, &v)| v)
                        .product();
                    if rs[i] > bound {
                        rs[i] = bound;
                        changed = true;
                    }
                }
                tr.0.insert(a.clone(), rs[0]);
                for i in 0..m {
                    tr.0.insert(child(&a, i), rs[i + 1]);
                }
            }
            tr.0.insert(Vec::new(), 1);
            if !changed {
                return tr;
            }
        }
    }

    /// Checks root rank 1, leaf bounds and rank compatibility.
    pub fn validate(&self, tree: &Tree) -> Result<()> {
        if self.get(&[]) != 1 {
            return Err(TtnError::IncompatibleRanks("root rank must be 1".into()));
        }
        for a in tree.addresses() {
            let r = self.get(&a);
            if r == 0 {
                return Err(TtnError::IncompatibleRanks(format!("missing rank at {a:?}")));
            }
            let t = tree.subtree(&a).expect("own address");
            if let Tree::Leaf { dim, .. } = t {
                if r > *dim {
                    return Err(TtnError::IncompatibleRanks(format!(
                        "leaf rank {r} exceeds dimension {dim} at {a:?}"
                    )));
                }
            }
            let m = t.children().len();
            if m == 0 {
                continue;
            }
            let mut rs = vec![r];
            rs.extend((0..m).map(|i| self.get(&child(&a, i))));
            for i in 0..=m {
                let bound: usize =
                    rs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).product();
                if rs[i] > bound {
                    return Err(TtnError::IncompatibleRanks(format!(
                        "rank {} in slot {i} at {a:?} exceeds product {bound} of the others",
                        rs[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Address of child `i` below `a`.
pub fn child(a: &[usize], i: usize) -> Address {
    let mut c = a.to_vec();
    c.push(i);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heights() {
        assert_eq!(Tree::leaf(1, 2).height(), 0);
        assert_eq!(Tree::balanced_binary(2, 16).unwrap().height(), 4);
        assert_eq!(Tree::tensor_train(2, 16).unwrap().height(), 15);
        assert_eq!(Tree::tensor_train(2, 7).unwrap().height(), 6);
    }

    #[test]
    fn vertex_counts() {
        assert_eq!(Tree::leaf(1, 2).vertex_count(), 1);
        assert_eq!(Tree::balanced_binary(2, 16).unwrap().vertex_count(), 31);
        assert_eq!(Tree::tensor_train(2, 16).unwrap().vertex_count(), 31);
        for d in 2..20 {
            assert_eq!(Tree::balanced_binary(2, d).unwrap().vertex_count(), 2 * d - 1);
        }
    }

    #[test]
    fn balanced_shapes() {
        let t = Tree::balanced_binary(2, 2).unwrap();
        assert_eq!(t.to_string(), "(1,2)");
        assert_eq!(t.height(), 1);
        assert_eq!(Tree::balanced_binary(2, 4).unwrap().to_string(), "((1,2),(3,4))");
        let t6 = Tree::balanced_binary(2, 6).unwrap();
        assert_eq!(t6.to_string(), "(((1,2),3),((4,5),6))");
        let h: Vec<usize> = t6.children().iter().map(Tree::height).collect();
        assert!(h[0].abs_diff(h[1]) <= 1);
        for d in 2..40 {
            let t = Tree::balanced_binary(2, d).unwrap();
            assert_eq!(t.height(), (d as f64).log2().ceil() as usize, "d = {d}");
        }
        assert!(Tree::balanced_binary(2, 1).is_err());
    }

    #[test]
    fn tt_shapes() {
        assert_eq!(Tree::tensor_train(2, 2).unwrap().to_string(), "(1,2)");
        let t = Tree::tensor_train(2, 3).unwrap();
        assert_eq!(t.to_string(), "(1,(2,3))");
        assert_eq!(t.height(), 2);
        assert!(Tree::tensor_train(2, 0).is_err());
    }

    #[test]
    fn labels_are_permutation() {
        for d in 2..12 {
            for t in [Tree::balanced_binary(3, d).unwrap(), Tree::tensor_train(3, d).unwrap()] {
                let mut l = t.leaves();
                l.sort();
                assert_eq!(l, (1..=d).collect::<Vec<_>>());
                assert!(t.validate().is_ok());
            }
        }
    }

    #[test]
    fn parse_and_print() {
        let t = Tree::parse("((1,2),(3,4))", 2).unwrap();
        assert_eq!(t, Tree::balanced_binary(2, 4).unwrap());
        let t = Tree::parse(" (1:3, (2, 3:4), 4) ", 2).unwrap();
        assert_eq!(t.leaf_dims(), vec![3, 2, 4, 2]);
        assert_eq!(Tree::parse(&t.to_literal_with_dims(), 9).unwrap(), t);
        assert!(Tree::parse("((1,2)", 2).is_err());
        assert!(Tree::parse("(1,1)", 2).is_err());
        assert!(Tree::parse("((1),2)", 2).is_err());
        assert!(Tree::parse("(1,2)x", 2).is_err());
    }

    #[test]
    fn addresses_round_trip() {
        let t = Tree::parse("((1,2,3),(4,(5,6)))", 2).unwrap();
        let addrs = t.addresses();
        assert_eq!(addrs.len(), t.vertex_count());
        for a in &addrs {
            let s = t.subtree(a).unwrap();
            // resolving the address of every child of s yields that child
            for (i, c) in s.children().iter().enumerate() {
                assert_eq!(t.subtree(&child(a, i)).unwrap(), c);
            }
        }
        assert!(t.subtree(&[5]).is_none());
    }

    #[test]
    fn uniform_rank_is_compatible() {
        for d in 2..9 {
            for t in [Tree::balanced_binary(2, d).unwrap(), Tree::tensor_train(2, d).unwrap()] {
                for r in 1..6 {
                    let tr = TreeRank::uniform(&t, r);
                    tr.validate(&t).unwrap();
                    assert_eq!(tr.get(&[]), 1);
                    assert!(tr.max() <= r.max(1));
                }
            }
        }
        let t = Tree::balanced_binary(2, 4).unwrap();
        let tr = TreeRank::uniform(&t, 4);
        assert_eq!(tr.get(&[0, 0]), 2);
        assert_eq!(tr.get(&[0]), 4);
        let mut bad = tr.clone();
        bad.0.insert(vec![0], 5);
        assert!(bad.validate(&t).is_err());
    }
}
