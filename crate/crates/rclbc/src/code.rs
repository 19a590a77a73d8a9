//! Code families: precode, rate ladder, puncturing, and subcode extraction.
//!
//! A family holds one parity-check matrix for the lowest-rate precode; every
//! higher rate is obtained by truncating trailing parity bits and decoding
//! against the top-left block of the same matrix.

use crate::alist::AlistError;
use crate::gf2::{self, BitMatrix, Gf2Error};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("codeword length {n_c} outside (k, n0] = ({k}, {n0}]")]
    RateOutOfRange { n_c: usize, k: usize, n0: usize },
    #[error("retained row {row} references punctured column {col}")]
    StructureViolation { row: usize, col: usize },
    #[error("unsupported code parameters ({n},{k})")]
    UnsupportedCode { n: usize, k: usize },
    #[error("rate ladder pairs disagree on k: {0} vs {1}")]
    MixedInformationLength(usize, usize),
    #[error("duplicate codeword length {0} in rate ladder")]
    DuplicateLength(usize),
    #[error("rate ladder is empty")]
    EmptyLadder,
    #[error("ladder is incompatible with the parity-check matrix: {0}")]
    LadderMismatch(String),
    #[error("multi-rate ladders require a lower-triangular or systematic structure")]
    GeneralStructureLadder,
    #[error(transparent)]
    Gf2(#[from] Gf2Error),
    #[error(transparent)]
    Alist(#[from] AlistError),
}

/// Structural constraint on the parity part of H.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixStructure {
    /// `H = [H1 | H2]` with `H2` lower triangular, unit diagonal.
    LowerTriangular,
    /// `H = [P | I]`.
    Systematic,
    /// No structure (loaded baseline); single-rate only.
    General,
}

impl MatrixStructure {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatrixStructure::LowerTriangular => "lower-triangular",
            MatrixStructure::Systematic => "systematic",
            MatrixStructure::General => "general",
        }
    }
}

impl std::str::FromStr for MatrixStructure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lower-triangular" => Ok(MatrixStructure::LowerTriangular),
            "systematic" => Ok(MatrixStructure::Systematic),
            "general" => Ok(MatrixStructure::General),
            other => Err(format!("unknown matrix structure '{other}'")),
        }
    }
}

/// End-truncation puncturing: length n_c keeps codeword positions 0..n_c.
#[derive(Debug, Clone, Copy)]
pub struct PuncturePattern {
    k: usize,
    n0: usize,
}

impl PuncturePattern {
    pub fn new(k: usize, n0: usize) -> Self {
        assert!(k < n0);
        PuncturePattern { k, n0 }
    }

    pub fn retained(&self, n_c: usize) -> Result<std::ops::Range<usize>, CodeError> {
        if n_c <= self.k || n_c > self.n0 {
            return Err(CodeError::RateOutOfRange { n_c, k: self.k, n0: self.n0 });
        }
        Ok(0..n_c)
    }
}

/// Truncates a codeword (bits or reals) to its first `n_c` entries.
pub fn puncture<T>(codeword: &[T], k: usize, n_c: usize) -> Result<&[T], CodeError> {
    let n0 = codeword.len();
    if n_c <= k || n_c > n0 {
        return Err(CodeError::RateOutOfRange { n_c, k, n0 });
    }
    Ok(&codeword[..n_c])
}

/// Parity-check matrix of the punctured code: the top-left
/// `(n_c - k) x n_c` block of H.
///
/// Valid because the retained rows of a lower-triangular or systematic H
/// never reference a truncated column; violations are reported.
pub fn subcode_matrices(h: &BitMatrix, k: usize, n_c: usize) -> Result<BitMatrix, CodeError> {
    let n0 = h.cols();
    if n_c <= k || n_c > n0 {
        return Err(CodeError::RateOutOfRange { n_c, k, n0 });
    }
    let m_c = n_c - k;
    for row in 0..m_c {
        if let Some(col) = (n_c..n0).find(|&c| h.get(row, c)) {
            return Err(CodeError::StructureViolation { row, col });
        }
    }
    Ok(h.top_left(m_c, n_c))
}

/// Validates a set of (k, n_c) pairs and returns `(k, ladder)` with the
/// ladder sorted by descending length (ascending rate).
pub fn rate_ladder_from_pairs(pairs: &[(usize, usize)]) -> Result<(usize, Vec<usize>), CodeError> {
    let Some(&(k, _)) = pairs.first() else {
        return Err(CodeError::EmptyLadder);
    };
    let mut ladder = Vec::with_capacity(pairs.len());
    for &(ki, n_c) in pairs {
        if ki != k {
            return Err(CodeError::MixedInformationLength(k, ki));
        }
        if ladder.contains(&n_c) {
            return Err(CodeError::DuplicateLength(n_c));
        }
        ladder.push(n_c);
    }
    ladder.sort_unstable_by(|a, b| b.cmp(a));
    Ok((k, ladder))
}

/// A rate-compatible code family: one precode H/G pair plus the ladder of
/// punctured lengths it serves.
#[derive(Debug, Clone)]
pub struct CodeFamily {
    k: usize,
    n0: usize,
    ladder: Vec<usize>,
    h: BitMatrix,
    g: BitMatrix,
    structure: MatrixStructure,
    /// Codeword positions carrying the information bits (in message order).
    info_positions: Vec<usize>,
}

impl CodeFamily {
    /// Builds a family around a structured parity-check matrix.
    ///
    /// The ladder must be descending, start at n0 = H columns, and every
    /// length must admit a valid subcode block.
    pub fn new(
        h: BitMatrix,
        ladder: Vec<usize>,
        structure: MatrixStructure,
    ) -> Result<Self, CodeError> {
        let n0 = h.cols();
        let m = h.rows();
        if n0 <= m {
            return Err(CodeError::LadderMismatch(format!(
                "H is {m}x{n0}; need more columns than rows"
            )));
        }
        let k = n0 - m;
        if ladder.is_empty() {
            return Err(CodeError::EmptyLadder);
        }
        if ladder[0] != n0 {
            return Err(CodeError::LadderMismatch(format!(
                "ladder starts at {} but H has {n0} columns",
                ladder[0]
            )));
        }
        if ladder.windows(2).any(|w| w[0] <= w[1]) {
            return Err(CodeError::LadderMismatch("ladder lengths must be strictly decreasing".into()));
        }
        if structure == MatrixStructure::General && ladder.len() > 1 {
            return Err(CodeError::GeneralStructureLadder);
        }
        for &n_c in &ladder {
            if n_c <= k {
                return Err(CodeError::RateOutOfRange { n_c, k, n0 });
            }
            if structure != MatrixStructure::General {
                subcode_matrices(&h, k, n_c)?;
            }
        }

        let (g, info_positions) = match structure {
            MatrixStructure::General => {
                let (p, perm) = gf2::systematic_form(&h)?;
                // [I|P^T] annihilates the permuted H; scatter its columns back
                // to the original order.
                let mut g = BitMatrix::zeros(k, n0);
                for i in 0..k {
                    g.set(i, perm[i], true);
                    for j in 0..m {
                        if p.get(j, i) {
                            g.set(i, perm[k + j], true);
                        }
                    }
                }
                (g, perm[..k].to_vec())
            }
            _ => (gf2::generator_from_h(&h)?, (0..k).collect()),
        };
        debug_assert!(g.matmul(&h.transpose()).unwrap().is_zero());

        Ok(CodeFamily { k, n0, ladder, h, g, structure, info_positions })
    }

    /// Single-rate family around an unstructured baseline matrix.
    pub fn single_rate(h: BitMatrix, structure: MatrixStructure) -> Result<Self, CodeError> {
        let n0 = h.cols();
        CodeFamily::new(h, vec![n0], structure)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn ladder(&self) -> &[usize] {
        &self.ladder
    }

    pub fn h(&self) -> &BitMatrix {
        &self.h
    }

    pub fn g(&self) -> &BitMatrix {
        &self.g
    }

    pub fn structure(&self) -> MatrixStructure {
        self.structure
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn puncture_pattern(&self) -> PuncturePattern {
        PuncturePattern::new(self.k, self.n0)
    }

    /// Encodes a k-bit message into the full-length precode codeword.
    pub fn encode(&self, x: &[u8]) -> Result<Vec<u8>, CodeError> {
        Ok(self.g.left_mul(x)?)
    }

    /// Parity-check matrix used to decode length-n_c words.
    pub fn subcode_h(&self, n_c: usize) -> Result<BitMatrix, CodeError> {
        if !self.ladder.contains(&n_c) {
            return Err(CodeError::RateOutOfRange { n_c, k: self.k, n0: self.n0 });
        }
        if n_c == self.n0 {
            return Ok(self.h.clone());
        }
        subcode_matrices(&self.h, self.k, n_c)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::bch::bch_parity_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_constrained_h(rng: &mut ChaCha8Rng, k: usize, m: usize) -> BitMatrix {
        BitMatrix::from_fn(m, k + m, |r, c| {
            if c < k {
                rng.random::<bool>()
            } else {
                c - k == r || (c - k < r && rng.random::<bool>())
            }
        })
    }

    #[test]
    fn puncture_identity_and_prefix() {
        let c: Vec<u8> = (0..31).map(|i| (i % 2) as u8).collect();
        assert_eq!(puncture(&c, 11, 31).unwrap(), &c[..]);
        assert_eq!(puncture(&c, 11, 21).unwrap(), &c[..21]);
        let r: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(puncture(&r, 20, 60).unwrap(), &r[..60]);
    }

    #[test]
    fn puncture_range_errors() {
        let c = vec![0u8; 31];
        assert!(matches!(puncture(&c, 11, 11), Err(CodeError::RateOutOfRange { .. })));
        assert!(matches!(puncture(&c, 11, 32), Err(CodeError::RateOutOfRange { .. })));
    }

    #[test]
    fn puncture_pattern_retained_sets_nest() {
        let pattern = PuncturePattern::new(11, 31);
        let r16 = pattern.retained(16).unwrap();
        let r21 = pattern.retained(21).unwrap();
        let r31 = pattern.retained(31).unwrap();
        assert!(r16.start == 0 && r21.start == 0 && r31.start == 0);
        assert!(r16.end < r21.end && r21.end < r31.end);
        // Information positions are always retained.
        assert!(r16.contains(&10));
        assert!(matches!(pattern.retained(11), Err(CodeError::RateOutOfRange { .. })));
        assert!(matches!(pattern.retained(32), Err(CodeError::RateOutOfRange { .. })));
    }

    #[test]
    fn subcode_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let h = random_constrained_h(&mut rng, 11, 20);
        assert_eq!(subcode_matrices(&h, 11, 31).unwrap(), h);
        let h21 = subcode_matrices(&h, 11, 21).unwrap();
        assert_eq!((h21.rows(), h21.cols()), (10, 21));
        let h16 = subcode_matrices(&h, 11, 16).unwrap();
        assert_eq!((h16.rows(), h16.cols()), (5, 16));
    }

    #[test]
    fn punctured_codewords_satisfy_subcode_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = random_constrained_h(&mut rng, 11, 20);
        let family =
            CodeFamily::new(h, vec![31, 21, 16], MatrixStructure::LowerTriangular).unwrap();
        for &n_c in family.ladder() {
            let h_sub = family.subcode_h(n_c).unwrap();
            for _ in 0..10_000 {
                let x: Vec<u8> = (0..11).map(|_| rng.random::<bool>() as u8).collect();
                let c = family.encode(&x).unwrap();
                let sub = puncture(&c, 11, n_c).unwrap();
                assert!(h_sub.mul_bits(sub).unwrap().iter().all(|&b| b == 0));
            }
        }
    }

    #[test]
    fn subcode_structure_violation_detected() {
        // A "1" in the punctured part of a retained row must be reported.
        let mut h = BitMatrix::zeros(2, 5); // k = 3
        h.set(0, 3, true);
        h.set(1, 4, true);
        h.set(0, 4, true); // row 0 references column 4, punctured at n_c = 4
        let err = subcode_matrices(&h, 3, 4).unwrap_err();
        assert!(matches!(err, CodeError::StructureViolation { row: 0, col: 4 }));
    }

    #[test]
    fn ladder_from_pairs() {
        let (k, ladder) = rate_ladder_from_pairs(&[(11, 31), (11, 21), (11, 16)]).unwrap();
        assert_eq!((k, ladder), (11, vec![31, 21, 16]));
        let (k, ladder) = rate_ladder_from_pairs(&[(20, 60), (20, 100)]).unwrap();
        assert_eq!((k, ladder), (20, vec![100, 60]));
        let (k, ladder) = rate_ladder_from_pairs(&[(7, 15)]).unwrap();
        assert_eq!((k, ladder), (7, vec![15]));
    }

    #[test]
    fn ladder_error_cases() {
        assert!(matches!(
            rate_ladder_from_pairs(&[(11, 31), (12, 21)]),
            Err(CodeError::MixedInformationLength(11, 12))
        ));
        assert!(matches!(
            rate_ladder_from_pairs(&[(11, 31), (11, 31)]),
            Err(CodeError::DuplicateLength(31))
        ));
        assert!(matches!(rate_ladder_from_pairs(&[]), Err(CodeError::EmptyLadder)));
    }

    #[test]
    fn nesting_across_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let h = random_constrained_h(&mut rng, 7, 8);
        let family =
            CodeFamily::new(h, vec![15, 13, 11], MatrixStructure::LowerTriangular).unwrap();
        for _ in 0..500 {
            let x: Vec<u8> = (0..7).map(|_| rng.random::<bool>() as u8).collect();
            let c = family.encode(&x).unwrap();
            let c13 = puncture(&c, 7, 13).unwrap();
            let c11 = puncture(&c, 7, 11).unwrap();
            assert_eq!(&c13[..11], c11);
            assert_eq!(&c[..13], c13);
        }
    }

    #[test]
    fn encoding_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = random_constrained_h(&mut rng, 7, 8);
        let family = CodeFamily::new(h, vec![15, 11], MatrixStructure::LowerTriangular).unwrap();
        for _ in 0..200 {
            let a: Vec<u8> = (0..7).map(|_| rng.random::<bool>() as u8).collect();
            let b: Vec<u8> = (0..7).map(|_| rng.random::<bool>() as u8).collect();
            let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let ca = family.encode(&a).unwrap();
            let cb = family.encode(&b).unwrap();
            let cs = family.encode(&sum).unwrap();
            let xored: Vec<u8> = ca.iter().zip(&cb).map(|(x, y)| x ^ y).collect();
            assert_eq!(cs, xored);
        }
    }

    #[test]
    fn bch_families_accept_exactly_2k_codewords() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for &(n, k) in &[(31usize, 21usize), (31, 16), (31, 11)] {
            let h = bch_parity_check(n, k).unwrap();
            let family = CodeFamily::single_rate(h, MatrixStructure::Systematic).unwrap();
            assert_eq!(family.k(), k);
            // Rank pins the null-space size to 2^k; sampled membership checks inclusion.
            assert_eq!(family.h().rank(), n - k);
            for _ in 0..2000 {
                let x: Vec<u8> = (0..k).map(|_| rng.random::<bool>() as u8).collect();
                let c = family.encode(&x).unwrap();
                assert!(family.h().mul_bits(&c).unwrap().iter().all(|&b| b == 0));
                assert_eq!(&c[..k], &x[..], "systematic positions must carry the message");
            }
        }
    }

    #[test]
    fn general_structure_family_from_unstructured_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut built = 0;
        while built < 10 {
            let h = BitMatrix::from_fn(5, 12, |_, _| rng.random::<bool>());
            if h.rank() < 5 {
                continue;
            }
            built += 1;
            let family = CodeFamily::single_rate(h.clone(), MatrixStructure::General).unwrap();
            for _ in 0..200 {
                let x: Vec<u8> = (0..7).map(|_| rng.random::<bool>() as u8).collect();
                let c = family.encode(&x).unwrap();
                assert!(h.mul_bits(&c).unwrap().iter().all(|&b| b == 0));
                // Message recoverable from the recorded information positions.
                let recovered: Vec<u8> =
                    family.info_positions().iter().map(|&p| c[p]).collect();
                assert_eq!(recovered, x);
            }
        }
    }

    #[test]
    fn rank_deficient_baselines_are_rejected() {
        let h = BitMatrix::from_rows(&[vec![1, 0, 1, 0, 1], vec![1, 0, 1, 0, 1]]).unwrap();
        let err = CodeFamily::single_rate(h, MatrixStructure::General).unwrap_err();
        assert!(matches!(err, CodeError::Gf2(Gf2Error::RankDeficient { .. })));
    }

    #[test]
    fn general_structure_rejects_multi_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let h = random_constrained_h(&mut rng, 7, 8);
        let err = CodeFamily::new(h, vec![15, 11], MatrixStructure::General).unwrap_err();
        assert!(matches!(err, CodeError::GeneralStructureLadder));
    }
}
