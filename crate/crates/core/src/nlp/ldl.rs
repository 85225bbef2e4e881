//! Dense symmetric indefinite factorization `P A Pᵀ = L D Lᵀ` with
//! Bunch-Kaufman pivoting, plus a minimum-degree ordering.
//!
//! Storage is a dense row-major lower triangle. The elimination skips
//! structurally zero entries of each pivot column, so a good ordering keeps
//! the work close to that of a sparse factorization.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use super::Triplets;

/// Counts of positive, negative and zero eigenvalues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Clone, Copy, Debug)]
enum Pivot {
    /// 1x1 pivot at `k`; row `k` was swapped with `swap` first.
    One { k: usize, swap: usize },
    /// 2x2 pivot at `k, k+1`; row `k+1` was swapped with `swap` first.
    Two { k: usize, swap: usize },
}

/// Growth-bound constant of the Bunch-Kaufman pivot test.
const BK_ALPHA: f64 = 0.640_388_203_202_208; // (1 + sqrt(17)) / 8

#[derive(Clone, Debug)]
pub struct SymmetricFactor {
    n: usize,
    /// `order[new] = old`
    order: Vec<usize>,
    a: Vec<f64>,
    pivots: Vec<Pivot>,
    /// Rows below each pivot block with a nonzero multiplier.
    pattern: Vec<Vec<usize>>,
    inertia: Inertia,
}

impl SymmetricFactor {
    /// Factor the symmetric matrix whose entries are given by `entries`.
    ///
    /// Entries may come from either triangle and duplicates are summed; an
    /// entry `(i, j)` with `i != j` stands for both `(i, j)` and `(j, i)`.
    /// `order` is an elimination order (`order[new] = old`); pass `None` for
    /// the natural order. Pivots with magnitude at most `zero_tol` count as
    /// zero eigenvalues.
    pub fn factor(n: usize, entries: &Triplets, order: Option<&[usize]>, zero_tol: f64) -> Self {
        let order: Vec<usize> = match order {
            Some(o) => {
                assert_eq!(o.len(), n, "ordering has wrong length");
                o.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut position = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }

        let mut a = vec![0.0; n * n];
        for (r, c, v) in entries.iter() {
            let (pr, pc) = (position[r], position[c]);
            let (i, j) = if pr >= pc { (pr, pc) } else { (pc, pr) };
            a[i * n + j] += v;
        }

        let mut f = SymmetricFactor {
            n,
            order,
            a,
            pivots: Vec::new(),
            pattern: Vec::new(),
            inertia: Inertia::default(),
        };
        f.eliminate(zero_tol);
        f
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        if i >= j {
            self.a[i * self.n + j]
        } else {
            self.a[j * self.n + i]
        }
    }

    /// Symmetric interchange of rows/columns `p < q` inside the trailing block starting at `k`.
    fn swap_trailing(&mut self, k: usize, p: usize, q: usize) {
        let n = self.n;
        let a = &mut self.a;
        for i in q + 1..n {
            a.swap(i * n + p, i * n + q);
        }
        for j in p + 1..q {
            a.swap(j * n + p, q * n + j);
        }
        a.swap(p * n + p, q * n + q);
        for j in k..p {
            a.swap(p * n + j, q * n + j);
        }
    }

    fn eliminate(&mut self, zero_tol: f64) {
        let n = self.n;
        let mut k = 0;
        while k < n {
            let absakk = self.a[k * n + k].abs();
            let mut imax = k;
            let mut colmax = 0.0f64;
            for i in k + 1..n {
                let v = self.a[i * n + k].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }

            let (two, kp) = if absakk.max(colmax) == 0.0 || absakk >= BK_ALPHA * colmax {
                (false, k)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != imax {
                        rowmax = rowmax.max(self.at(imax, j).abs());
                    }
                }
                if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                    (false, k)
                } else if self.a[imax * n + imax].abs() >= BK_ALPHA * rowmax {
                    (false, imax)
                } else {
                    (true, imax)
                }
            };

            if two {
                let kk = k + 1;
                if kp != kk {
                    self.swap_trailing(k, kk, kp);
                }
                self.pivot_two(k, kp, zero_tol);
                k += 2;
            } else {
                if kp != k {
                    self.swap_trailing(k, k, kp);
                }
                self.pivot_one(k, kp, zero_tol);
                k += 1;
            }
        }
    }

    fn pivot_one(&mut self, k: usize, swap: usize, zero_tol: f64) {
        let n = self.n;
        let d = self.a[k * n + k];
        if d.abs() <= zero_tol {
            self.inertia.zero += 1;
        } else if d > 0.0 {
            self.inertia.positive += 1;
        } else {
            self.inertia.negative += 1;
        }

        let rows: Vec<usize> = (k + 1..n).filter(|&i| self.a[i * n + k] != 0.0).collect();
        if d != 0.0 && !rows.is_empty() {
            let w: Vec<f64> = rows.iter().map(|&i| self.a[i * n + k]).collect();
            let l: Vec<f64> = w.iter().map(|v| v / d).collect();
            let a = &mut self.a;
            for (ii, &i) in rows.iter().enumerate() {
                let li = l[ii];
                let row = &mut a[i * n..i * n + i + 1];
                for (jj, &j) in rows[..=ii].iter().enumerate() {
                    row[j] -= li * w[jj];
                }
            }
            for (ii, &i) in rows.iter().enumerate() {
                a[i * n + k] = l[ii];
            }
        } else if d == 0.0 {
            // Zero column below a zero pivot: nothing to eliminate.
            for &i in &rows {
                self.a[i * n + k] = 0.0;
            }
        }
        self.pivots.push(Pivot::One { k, swap });
        self.pattern.push(if d != 0.0 { rows } else { Vec::new() });
    }

    fn pivot_two(&mut self, k: usize, swap: usize, zero_tol: f64) {
        let n = self.n;
        let d11 = self.a[k * n + k];
        let d21 = self.a[(k + 1) * n + k];
        let d22 = self.a[(k + 1) * n + k + 1];
        let det = d11 * d22 - d21 * d21;
        // A 2x2 Bunch-Kaufman block always has det < 0 unless degenerate.
        if det.abs() <= zero_tol * zero_tol {
            self.inertia.zero += 2;
        } else if det < 0.0 {
            self.inertia.positive += 1;
            self.inertia.negative += 1;
        } else if d11 + d22 > 0.0 {
            self.inertia.positive += 2;
        } else {
            self.inertia.negative += 2;
        }

        let rows: Vec<usize> = (k + 2..n)
            .filter(|&i| self.a[i * n + k] != 0.0 || self.a[i * n + k + 1] != 0.0)
            .collect();
        let w1: Vec<f64> = rows.iter().map(|&i| self.a[i * n + k]).collect();
        let w2: Vec<f64> = rows.iter().map(|&i| self.a[i * n + k + 1]).collect();
        let l1: Vec<f64> = w1
            .iter()
            .zip(&w2)
            .map(|(a, b)| (a * d22 - b * d21) / det)
            .collect();
        let l2: Vec<f64> = w1
            .iter()
            .zip(&w2)
            .map(|(a, b)| (b * d11 - a * d21) / det)
            .collect();
        let a = &mut self.a;
        for (ii, &i) in rows.iter().enumerate() {
            let (x1, x2) = (l1[ii], l2[ii]);
            let row = &mut a[i * n..i * n + i + 1];
            for (jj, &j) in rows[..=ii].iter().enumerate() {
                row[j] -= x1 * w1[jj] + x2 * w2[jj];
            }
        }
        for (ii, &i) in rows.iter().enumerate() {
            a[i * n + k] = l1[ii];
            a[i * n + k + 1] = l2[ii];
        }
        self.pivots.push(Pivot::Two { k, swap });
        self.pattern.push(rows);
    }

    /// Solve `A x = b` in place. Zero pivots are treated as having an
    /// infinite inverse restricted to zero, i.e. the corresponding component
    /// of the solution is set to zero.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();

        for (p, rows) in self.pivots.iter().zip(&self.pattern) {
            match *p {
                Pivot::One { k, swap } => {
                    y.swap(k, swap);
                    let yk = y[k];
                    for &i in rows {
                        y[i] -= self.a[i * n + k] * yk;
                    }
                    let d = self.a[k * n + k];
                    y[k] = if d != 0.0 { yk / d } else { 0.0 };
                }
                Pivot::Two { k, swap } => {
                    y.swap(k + 1, swap);
                    let (y1, y2) = (y[k], y[k + 1]);
                    for &i in rows {
                        y[i] -= self.a[i * n + k] * y1 + self.a[i * n + k + 1] * y2;
                    }
                    let d11 = self.a[k * n + k];
                    let d21 = self.a[(k + 1) * n + k];
                    let d22 = self.a[(k + 1) * n + k + 1];
                    let det = d11 * d22 - d21 * d21;
                    y[k] = (d22 * y1 - d21 * y2) / det;
                    y[k + 1] = (d11 * y2 - d21 * y1) / det;
                }
            }
        }

        for (p, rows) in self.pivots.iter().zip(&self.pattern).rev() {
            match *p {
                Pivot::One { k, swap } => {
                    let mut acc = y[k];
                    for &i in rows {
                        acc -= self.a[i * n + k] * y[i];
                    }
                    y[k] = acc;
                    y.swap(k, swap);
                }
                Pivot::Two { k, swap } => {
                    let (mut acc1, mut acc2) = (y[k], y[k + 1]);
                    for &i in rows {
                        acc1 -= self.a[i * n + k] * y[i];
                        acc2 -= self.a[i * n + k + 1] * y[i];
                    }
                    y[k] = acc1;
                    y[k + 1] = acc2;
                    y.swap(k + 1, swap);
                }
            }
        }

        for (new, &old) in self.order.iter().enumerate() {
            b[old] = y[new];
        }
    }
}

/// Greedy minimum-degree elimination order for the symmetric pattern of
/// `entries`. Ties go to the lowest index, so the order is deterministic.
pub fn minimum_degree_order(n: usize, entries: &Triplets) -> Vec<usize> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in entries.iter() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|i| Reverse((adj[i].len(), i))).collect();
    let mut order = Vec::with_capacity(n);

    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            adj[u].remove(&v);
            for &w in &nbrs {
                if w != u {
                    adj[u].insert(w);
                }
            }
        }
        for &u in &nbrs {
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}
