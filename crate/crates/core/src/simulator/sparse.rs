//! Block-sparse symmetric positive definite solver for the cell stiffness.
//!
//! Every cell owns a 3x3 diagonal block; off-diagonal blocks exist only
//! between cells that share a face. The elimination order is a greedy
//! minimum-degree ordering of that graph, and the fill pattern is fixed
//! once, so each Newton iteration only refills values and refactors.

use nalgebra::{DVector, Vector3};

use crate::geometry::Mat3;

/// Elimination order and the block structure of the Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct BlockPattern {
    /// Block index to elimination position.
    pos: Vec<usize>,
    /// For each position, the sorted positions below it in its factor column.
    cols: Vec<Vec<usize>>,
}

impl BlockPattern {
    /// Pattern for `n` blocks coupled by the undirected `edges`.
    pub(crate) fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
        for (a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        let mut alive = vec![true; n];
        let mut order = Vec::with_capacity(n);
        let mut fill: Vec<Vec<usize>> = vec![Vec::new(); n];
        for _ in 0..n {
            // Smallest current degree, lowest index on ties.
            let v = (0..n)
                .filter(|&v| alive[v])
                .min_by_key(|&v| (adj[v].len(), v))
                .expect("a live block remains");
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for (k, &a) in nbrs.iter().enumerate() {
                adj[a].remove(&v);
                for &b in &nbrs[k + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            fill[v] = nbrs;
            alive[v] = false;
            order.push(v);
        }
        let mut pos = vec![0; n];
        for (p, &v) in order.iter().enumerate() {
            pos[v] = p;
        }
        let cols = order
            .iter()
            .map(|&v| {
                let mut rows: Vec<usize> = fill[v].iter().map(|&b| pos[b]).collect();
                rows.sort_unstable();
                rows
            })
            .collect();
        Self { pos, cols }
    }

    pub(crate) fn n_blocks(&self) -> usize {
        self.pos.len()
    }

    fn slot(&self, col: usize, row: usize) -> usize {
        self.cols[col]
            .binary_search(&row)
            .expect("block lies inside the symbolic pattern")
    }
}

/// Values on a [`BlockPattern`]; assembled as the matrix, factored in place.
#[derive(Debug, Clone)]
pub(crate) struct BlockMatrix<'p> {
    pattern: &'p BlockPattern,
    diag: Vec<Mat3>,
    off: Vec<Vec<Mat3>>,
}

impl<'p> BlockMatrix<'p> {
    pub(crate) fn zeros(pattern: &'p BlockPattern) -> Self {
        Self {
            pattern,
            diag: vec![Mat3::zeros(); pattern.n_blocks()],
            off: pattern.cols.iter().map(|c| vec![Mat3::zeros(); c.len()]).collect(),
        }
    }

    pub(crate) fn add_diag(&mut self, block: usize, m: &Mat3) {
        self.diag[self.pattern.pos[block]] += m;
    }

    /// Adds `m` at block `(a, b)` and its transpose at `(b, a)`.
    pub(crate) fn add_pair(&mut self, a: usize, b: usize, m: &Mat3) {
        let (pa, pb) = (self.pattern.pos[a], self.pattern.pos[b]);
        // Stored blocks are (row > col) in elimination positions.
        let (col, row, block) = if pa < pb { (pa, pb, m.transpose()) } else { (pb, pa, *m) };
        let s = self.pattern.slot(col, row);
        self.off[col][s] += block;
    }

    pub(crate) fn add_identity(&mut self, shift: f64) {
        for d in &mut self.diag {
            *d += Mat3::identity() * shift;
        }
    }

    /// Block Cholesky; `None` when a pivot block is not positive definite.
    pub(crate) fn factor(mut self) -> Option<BlockFactor<'p>> {
        let n = self.pattern.n_blocks();
        let mut inv = vec![Mat3::zeros(); n];
        for k in 0..n {
            let l = self.diag[k].cholesky()?.l();
            let li = l.try_inverse()?;
            inv[k] = li;
            // L_rk = A_rk L_kk^-T
            for b in &mut self.off[k] {
                *b *= li.transpose();
            }
            let rows = &self.pattern.cols[k];
            for i in 0..rows.len() {
                let li_k = self.off[k][i];
                let r1 = rows[i];
                self.diag[r1] -= li_k * li_k.transpose();
                for j in 0..i {
                    let r2 = rows[j];
                    let upd = li_k * self.off[k][j].transpose();
                    let s = self.pattern.slot(r2, r1);
                    self.off[r2][s] -= upd;
                }
            }
        }
        Some(BlockFactor {
            pattern: self.pattern,
            inv,
            off: self.off,
        })
    }
}

/// Cholesky factor: inverted diagonal blocks plus the strictly lower blocks.
#[derive(Debug, Clone)]
pub(crate) struct BlockFactor<'p> {
    pattern: &'p BlockPattern,
    inv: Vec<Mat3>,
    off: Vec<Vec<Mat3>>,
}

impl BlockFactor<'_> {
    /// Solves `A x = b` for a vector laid out as consecutive 3-blocks.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.pattern;
        let n = p.n_blocks();
        let mut y: Vec<Vector3<f64>> = vec![Vector3::zeros(); n];
        for (blk, &ps) in p.pos.iter().enumerate() {
            y[ps] = Vector3::new(b[3 * blk], b[3 * blk + 1], b[3 * blk + 2]);
        }
        for k in 0..n {
            y[k] = self.inv[k] * y[k];
            let yk = y[k];
            for (r, l) in p.cols[k].iter().zip(&self.off[k]) {
                y[*r] -= l * yk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = y[k];
            for (r, l) in p.cols[k].iter().zip(&self.off[k]) {
                acc -= l.transpose() * y[*r];
            }
            y[k] = self.inv[k].transpose() * acc;
        }
        let mut x = DVector::zeros(3 * n);
        for (blk, &ps) in p.pos.iter().enumerate() {
            for r in 0..3 {
                x[3 * blk + r] = y[ps][r];
            }
        }
        x
    }
}
