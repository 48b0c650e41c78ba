use crate::hilbert::{CMatrix, HilbertLayout, C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Entry {
    pub r: usize,
    pub c: usize,
    pub v: C64,
}

/// Coordinate-list operator on the full space.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Sparse {
    pub entries: Vec<Entry>,
}

impl Sparse {
    /// Tensor product of local operators on distinct subsystems (identity elsewhere).
    pub fn product(layout: &HilbertLayout, factors: &[(usize, &CMatrix)]) -> Sparse {
        let n = layout.total_dim();
        let mut entries = Vec::new();
        let mut frontier: Vec<(Vec<usize>, C64)> = Vec::new();
        for col in 0..n {
            frontier.clear();
            frontier.push((layout.levels(col), C64::new(1.0, 0.0)));
            for &(sub, op) in factors {
                let mut next = Vec::with_capacity(frontier.len());
                for (lv, coef) in &frontier {
                    let from = lv[sub];
                    for to in 0..op.nrows() {
                        let m = op[(to, from)];
                        if m != ZERO {
                            let mut l = lv.clone();
                            l[sub] = to;
                            next.push((l, coef * m));
                        }
                    }
                }
                frontier = next;
            }
            for (lv, coef) in &frontier {
                entries.push(Entry {
                    r: layout.index(lv),
                    c: col,
                    v: *coef,
                });
            }
        }
        Sparse { entries }
    }

    #[cfg(test)]
    pub fn adjoint(&self) -> Sparse {
        Sparse {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    r: e.c,
                    c: e.r,
                    v: e.v.conj(),
                })
                .collect(),
        }
    }

    pub fn to_dense(&self, n: usize) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        for e in &self.entries {
            m[(e.r, e.c)] += e.v;
        }
        m
    }

    /// At most one entry per row and per column.
    pub fn is_monomial(&self, n: usize) -> bool {
        let mut rows = vec![false; n];
        let mut cols = vec![false; n];
        for e in &self.entries {
            if rows[e.r] || cols[e.c] {
                return false;
            }
            rows[e.r] = true;
            cols[e.c] = true;
        }
        true
    }

    /// Diagonal of `L†L`, valid for monomial operators.
    pub fn gram_diagonal(&self, n: usize) -> Vec<f64> {
        let mut d = vec![0.0; n];
        for e in &self.entries {
            d[e.c] += e.v.norm_sqr();
        }
        d
    }

    /// `S ρ S†` for a column-major dense `ρ`, with `S` arbitrary sparse.
    pub fn conjugate(&self, rho: &CMatrix) -> CMatrix {
        let n = rho.nrows();
        let mut left = CMatrix::zeros(n, n);
        for j in 0..n {
            for e in &self.entries {
                left[(e.r, j)] += e.v * rho[(e.c, j)];
            }
        }
        let mut out = CMatrix::zeros(n, n);
        for e in &self.entries {
            let v = e.v.conj();
            for i in 0..n {
                out[(i, e.r)] += left[(i, e.c)] * v;
            }
        }
        out
    }
}
