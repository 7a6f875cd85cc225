//! Adjacency and reachability matrices of the post-fault network.
//!
//! Connected regions are read off the reachability matrix; each region knows
//! whether it still contains the slack bus and which generators sit inside
//! it. Regions without the slack but with at least one generator are the
//! islanding candidates that proceed to supply-range analysis.

use std::collections::BTreeSet;

use crate::grid_model::Network;

/// Square boolean matrix backed by bit rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BoolMatrix {
    pub fn zeros(n: usize) -> Self {
        let words_per_row = n.div_ceil(64).max(1);
        BoolMatrix {
            n,
            words_per_row,
            bits: vec![0; words_per_row * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words_per_row + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let w = &mut self.bits[i * self.words_per_row + j / 64];
        if v {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Element-wise OR.
    pub fn or(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (w, o) in out.bits.iter_mut().zip(&other.bits) {
            *w |= o;
        }
        out
    }

    /// AND-OR boolean matrix product.
    pub fn mul(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!(self.n, other.n);
        let mut out = BoolMatrix::zeros(self.n);
        for i in 0..self.n {
            let row_i = i * self.words_per_row;
            for k in 0..self.n {
                if self.bits[row_i + k / 64] >> (k % 64) & 1 == 1 {
                    let row_k = k * other.words_per_row;
                    let row_o = i * out.words_per_row;
                    for w in 0..self.words_per_row {
                        out.bits[row_o + w] |= other.bits[row_k + w];
                    }
                }
            }
        }
        out
    }

    /// Row as a set of column indices.
    pub fn row(&self, i: usize) -> BTreeSet<usize> {
        (0..self.n).filter(|&j| self.get(i, j)).collect()
    }

    /// 0/1 text grid in the style of a plain PBM bitmap, for debugging.
    pub fn to_grid_string(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.n, self.n);
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|j| if self.get(i, j) { "1" } else { "0" })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Adjacency matrix over closed branches; 0-based index = bus id - 1.
pub fn adjacency_matrix(net: &Network) -> BoolMatrix {
    let n = net.n_buses();
    let mut a = BoolMatrix::zeros(n);
    for br in net.branches.iter().filter(|b| b.is_closed()) {
        a.set(br.from - 1, br.to - 1, true);
        a.set(br.to - 1, br.from - 1, true);
    }
    a
}

/// Reachability closure: entry (i,j) set iff a walk of length 1..n joins i
/// and j. Computed by repeated squaring of (A | I) — ceil(log2 n) squarings
/// reach all path lengths — then the diagonal introduced by I is stripped;
/// in an undirected graph a vertex reaches itself iff it has a neighbour.
pub fn reachability_matrix(a: &BoolMatrix) -> BoolMatrix {
    let n = a.dim();
    if n == 0 {
        return a.clone();
    }
    let mut b = a.or(&BoolMatrix::identity(n));
    let mut span = 1usize;
    while span < n {
        b = b.mul(&b);
        span *= 2;
    }
    for i in 0..n {
        let lonely = (0..n).all(|j| j == i || !a.get(i, j));
        if lonely {
            b.set(i, i, false);
        }
    }
    b
}

/// Reference closure: OR of boolean powers A^1..A^n, as written.
pub fn reachability_matrix_naive(a: &BoolMatrix) -> BoolMatrix {
    let n = a.dim();
    let mut acc = a.clone();
    let mut power = a.clone();
    for _ in 1..n {
        power = power.mul(a);
        acc = acc.or(&power);
    }
    acc
}

/// One equivalence class of the reachability relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachableRegion {
    pub members: BTreeSet<usize>,
    pub contains_slack: bool,
    pub dgs: Vec<String>,
}

/// Partitions the buses of the post-fault network into reachability classes.
pub fn regions(net: &Network) -> Vec<ReachableRegion> {
    let reach = reachability_matrix(&adjacency_matrix(net));
    let n = net.n_buses();
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let mut members: BTreeSet<usize> = BTreeSet::new();
        members.insert(i + 1);
        for j in 0..n {
            if reach.get(i, j) {
                members.insert(j + 1);
            }
        }
        for &m in &members {
            assigned[m - 1] = true;
        }
        let dgs = net
            .dgs
            .iter()
            .filter(|dg| members.contains(&dg.bus))
            .map(|dg| dg.name.clone())
            .collect();
        out.push(ReachableRegion {
            contains_slack: members.contains(&net.slack_bus),
            members,
            dgs,
        });
    }
    out
}

/// Slack-free regions that host at least one generator; these proceed to
/// power-circle analysis.
pub fn islanding_candidates(net: &Network) -> Vec<ReachableRegion> {
    regions(net)
        .into_iter()
        .filter(|r| !r.contains_slack && !r.dgs.is_empty())
        .collect()
}
