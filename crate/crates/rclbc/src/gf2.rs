//! Exact linear algebra over GF(2).
//!
//! [`BitMatrix`] stores one matrix row per run of machine words, so row XOR
//! (the inner loop of everything here) touches `ceil(cols/64)` words. The
//! public contract is entrywise; callers never see the packing.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Gf2Error {
    #[error("dimension mismatch: left is {lr}x{lc}, right is {rr}x{rc}")]
    ShapeMismatch { lr: usize, lc: usize, rr: usize, rc: usize },
    #[error("vector length {len} does not match matrix dimension {expected}")]
    VectorLength { len: usize, expected: usize },
    #[error("matrix entry ({row},{col}) is {value}, expected 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: u8 },
    #[error("matrix is rank deficient: rank {rank} of {rows} rows")]
    RankDeficient { rank: usize, rows: usize },
    #[error("parity submatrix is not lower triangular with unit diagonal (row {row})")]
    NotLowerTriangular { row: usize },
    #[error("systematic form of a constrained matrix required a column permutation")]
    PermutedSystematicForm,
}

/// Dense binary matrix with row-major packed storage (64 entries per word).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "BitMatrix must be at least 1x1");
        let stride = cols.div_ceil(64);
        BitMatrix { rows, cols, stride, words: vec![0; rows * stride] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from unpacked rows of 0/1 entries.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, Gf2Error> {
        assert!(!rows.is_empty(), "BitMatrix must be at least 1x1");
        let cols = rows[0].len();
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged rows");
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(r, c, true),
                    _ => return Err(Gf2Error::NonBinaryEntry { row: r, col: c, value: v }),
                }
            }
        }
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        (self.words[r * self.stride + (c >> 6)] >> (c & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = &mut self.words[r * self.stride + (c >> 6)];
        if bit {
            *w |= 1u64 << (c & 63);
        } else {
            *w &= !(1u64 << (c & 63));
        }
    }

    /// Unpacks row `r` into a 0/1 byte vector.
    pub fn row_bits(&self, r: usize) -> Vec<u8> {
        (0..self.cols).map(|c| self.get(r, c) as u8).collect()
    }

    fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.stride..(r + 1) * self.stride]
    }

    fn xor_row_into(&mut self, src: usize, dst: usize) {
        debug_assert_ne!(src, dst);
        let (s, d) = (src * self.stride, dst * self.stride);
        for i in 0..self.stride {
            let w = self.words[s + i];
            self.words[d + i] ^= w;
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.stride {
            self.words.swap(a * self.stride + i, b * self.stride + i);
        }
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for r in 0..self.rows {
            let (va, vb) = (self.get(r, a), self.get(r, b));
            self.set(r, a, vb);
            self.set(r, b, va);
        }
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    t.set(c, r, true);
                }
            }
        }
        t
    }

    /// Top-left `rows x cols` block.
    pub fn top_left(&self, rows: usize, cols: usize) -> BitMatrix {
        assert!(rows <= self.rows && cols <= self.cols);
        BitMatrix::from_fn(rows, cols, |r, c| self.get(r, c))
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Matrix product over GF(2): entry (i,j) is the parity of the integer dot product.
    pub fn matmul(&self, rhs: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
        if self.cols != rhs.rows {
            return Err(Gf2Error::ShapeMismatch {
                lr: self.rows,
                lc: self.cols,
                rr: rhs.rows,
                rc: rhs.cols,
            });
        }
        let mut out = BitMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                if self.get(i, l) {
                    let (s, d) = (l * rhs.stride, i * out.stride);
                    for w in 0..rhs.stride {
                        out.words[d + w] ^= rhs.words[s + w];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Row-vector product `x * M` (x has one entry per matrix row).
    pub fn left_mul(&self, x: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        if x.len() != self.rows {
            return Err(Gf2Error::VectorLength { len: x.len(), expected: self.rows });
        }
        let mut acc = vec![0u64; self.stride];
        for (r, &b) in x.iter().enumerate() {
            if b & 1 == 1 {
                for (a, w) in acc.iter_mut().zip(self.row_words(r)) {
                    *a ^= w;
                }
            }
        }
        Ok((0..self.cols).map(|c| ((acc[c >> 6] >> (c & 63)) & 1) as u8).collect())
    }

    /// Matrix-vector product `M * v^T` (v has one entry per matrix column).
    pub fn mul_bits(&self, v: &[u8]) -> Result<Vec<u8>, Gf2Error> {
        if v.len() != self.cols {
            return Err(Gf2Error::VectorLength { len: v.len(), expected: self.cols });
        }
        let mut packed = vec![0u64; self.stride];
        for (c, &b) in v.iter().enumerate() {
            if b & 1 == 1 {
                packed[c >> 6] |= 1u64 << (c & 63);
            }
        }
        Ok((0..self.rows)
            .map(|r| {
                let ones: u32 = self
                    .row_words(r)
                    .iter()
                    .zip(&packed)
                    .map(|(a, b)| (a & b).count_ones())
                    .sum();
                (ones & 1) as u8
            })
            .collect())
    }

    /// Row rank over GF(2).
    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        let mut rank = 0;
        for c in 0..m.cols {
            if rank == m.rows {
                break;
            }
            let Some(pivot) = (rank..m.rows).find(|&r| m.get(r, c)) else {
                continue;
            };
            m.swap_rows(rank, pivot);
            for r in 0..m.rows {
                if r != rank && m.get(r, c) {
                    m.xor_row_into(rank, r);
                }
            }
            rank += 1;
        }
        rank
    }
}

impl std::fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                write!(f, "{}", self.get(r, c) as u8)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Reduces a full-row-rank parity-check matrix to systematic form `[P|I]`.
///
/// Returns `(P, col_perm)` where `col_perm[pos]` is the input column placed at
/// position `pos`; row-reducing the permuted matrix yields `[P|I]`. For a
/// matrix whose right (n-k) x (n-k) block is lower triangular with unit
/// diagonal the permutation always comes back as the identity.
pub fn systematic_form(h: &BitMatrix) -> Result<(BitMatrix, Vec<usize>), Gf2Error> {
    let (m, n) = (h.rows(), h.cols());
    assert!(n > m, "parity-check matrix must have more columns than rows");
    let k = n - m;
    let mut work = h.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for j in 0..m {
        let target = k + j;
        // Pivot search in the target column, then in any not-yet-fixed column.
        let mut pivot = (j..m).find(|&r| work.get(r, target));
        if pivot.is_none() {
            let candidate = (0..n)
                .filter(|&c| c < k || c >= target)
                .find(|&c| c != target && (j..m).any(|r| work.get(r, c)));
            match candidate {
                Some(c) => {
                    work.swap_cols(c, target);
                    perm.swap(c, target);
                    pivot = (j..m).find(|&r| work.get(r, target));
                }
                None => {
                    return Err(Gf2Error::RankDeficient { rank: h.rank(), rows: m });
                }
            }
        }
        work.swap_rows(j, pivot.unwrap());
        for r in 0..m {
            if r != j && work.get(r, target) {
                work.xor_row_into(j, r);
            }
        }
    }

    Ok((work.top_left(m, k), perm))
}

/// Derives the systematic generator `G = [I | P^T]` from a constrained
/// parity-check matrix (one whose systematic form needs no column swap).
pub fn generator_from_h(h: &BitMatrix) -> Result<BitMatrix, Gf2Error> {
    let (p, perm) = systematic_form(h)?;
    if perm.iter().enumerate().any(|(i, &c)| i != c) {
        return Err(Gf2Error::PermutedSystematicForm);
    }
    let (m, n) = (h.rows(), h.cols());
    let k = n - m;
    let mut g = BitMatrix::zeros(k, n);
    for i in 0..k {
        g.set(i, i, true);
        for j in 0..m {
            if p.get(j, i) {
                g.set(i, k + j, true);
            }
        }
    }
    Ok(g)
}

/// Solves `H1 x^T + H2 p^T = 0` for `p` by forward substitution.
///
/// `H2` must be lower triangular with unit diagonal; `[x | p]` then satisfies
/// the full parity check `[H1|H2]`.
pub fn solve_parity_lower_triangular(
    h1: &BitMatrix,
    h2: &BitMatrix,
    x: &[u8],
) -> Result<Vec<u8>, Gf2Error> {
    let m = h2.rows();
    if h2.cols() != m || h1.rows() != m {
        return Err(Gf2Error::ShapeMismatch {
            lr: h1.rows(),
            lc: h1.cols(),
            rr: h2.rows(),
            rc: h2.cols(),
        });
    }
    if x.len() != h1.cols() {
        return Err(Gf2Error::VectorLength { len: x.len(), expected: h1.cols() });
    }
    for j in 0..m {
        if !h2.get(j, j) || (j + 1..m).any(|c| h2.get(j, c)) {
            return Err(Gf2Error::NotLowerTriangular { row: j });
        }
    }
    let mut p = vec![0u8; m];
    for j in 0..m {
        let mut bit = 0u8;
        for (i, &xi) in x.iter().enumerate() {
            bit ^= xi & h1.get(j, i) as u8;
        }
        for (i, &pi) in p.iter().enumerate().take(j) {
            bit ^= pi & h2.get(j, i) as u8;
        }
        p[j] = bit;
    }
    Ok(p)
}
