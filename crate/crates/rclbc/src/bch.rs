//! Binary BCH baseline codes of length 31.
//!
//! The generator polynomial is the product of the minimal polynomials of the
//! odd powers of a primitive element of GF(2^5); the parity-check matrix is
//! returned in systematic `[P|I]` form so information bits occupy the first
//! `k` codeword positions.

use crate::code::CodeError;
use crate::gf2::BitMatrix;

/// GF(2^5) generated by x^5 + x^2 + 1.
const FIELD_POLY: u32 = 0b10_0101;
const FIELD_BITS: u32 = 5;
const FIELD_ORDER: usize = 31;

fn gf32_mul(a: u8, b: u8) -> u8 {
    let mut prod: u32 = 0;
    let a = a as u32;
    for i in 0..FIELD_BITS {
        if b >> i & 1 == 1 {
            prod ^= a << i;
        }
    }
    for i in (FIELD_BITS..2 * FIELD_BITS).rev() {
        if prod >> i & 1 == 1 {
            prod ^= FIELD_POLY << (i - FIELD_BITS);
        }
    }
    prod as u8
}

fn gf32_pow(mut base: u8, mut exp: usize) -> u8 {
    let mut acc = 1u8;
    exp %= FIELD_ORDER;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = gf32_mul(acc, base);
        }
        base = gf32_mul(base, base);
        exp >>= 1;
    }
    acc
}

/// Cyclotomic coset of `j` modulo 31 (exponents of the conjugates of alpha^j).
fn cyclotomic_coset(j: usize) -> Vec<usize> {
    let mut coset = vec![j % FIELD_ORDER];
    let mut e = (j * 2) % FIELD_ORDER;
    while e != coset[0] {
        coset.push(e);
        e = (e * 2) % FIELD_ORDER;
    }
    coset
}

/// Minimal polynomial of alpha^j over GF(2), as a coefficient bitmask (bit i = x^i).
fn minimal_polynomial(j: usize) -> u64 {
    // Multiply out (x - alpha^e) over the conjugates; the result has 0/1 coefficients.
    let alpha = 0b10u8; // x, a root of the primitive polynomial
    let mut coeffs: Vec<u8> = vec![1]; // constant polynomial 1
    for e in cyclotomic_coset(j) {
        let root = gf32_pow(alpha, e);
        let mut next = vec![0u8; coeffs.len() + 1];
        for (d, &c) in coeffs.iter().enumerate() {
            next[d + 1] ^= c;
            next[d] ^= gf32_mul(c, root);
        }
        coeffs = next;
    }
    let mut mask = 0u64;
    for (d, &c) in coeffs.iter().enumerate() {
        debug_assert!(c <= 1, "minimal polynomial coefficient left the prime field");
        if c == 1 {
            mask |= 1 << d;
        }
    }
    mask
}

fn poly_degree(p: u64) -> usize {
    63 - p.leading_zeros() as usize
}

fn poly_mul(a: u64, b: u64) -> u64 {
    let mut out = 0u64;
    for i in 0..64 {
        if a >> i & 1 == 1 {
            out ^= b << i;
        }
    }
    out
}

fn poly_mod(mut a: u64, m: u64) -> u64 {
    let dm = poly_degree(m);
    while a != 0 && poly_degree(a) >= dm {
        a ^= m << (poly_degree(a) - dm);
    }
    a
}

/// Generator polynomial of the t-error-correcting BCH code of length 31.
fn generator_polynomial(t: usize) -> u64 {
    let mut g = 1u64;
    let mut covered = [false; FIELD_ORDER];
    for j in (1..=2 * t - 1).step_by(2) {
        if covered[j] {
            continue;
        }
        for e in cyclotomic_coset(j) {
            covered[e] = true;
        }
        g = poly_mul(g, minimal_polynomial(j));
    }
    g
}

fn design_t(n: usize, k: usize) -> Result<usize, CodeError> {
    match (n, k) {
        (31, 21) => Ok(2),
        (31, 16) => Ok(3),
        (31, 11) => Ok(5),
        _ => Err(CodeError::UnsupportedCode { n, k }),
    }
}

/// Parity-check matrix of the (n, k) binary BCH code in `[P|I]` form.
///
/// Codeword position `i` carries the coefficient of `x^(n-1-i)`; systematic
/// encoding places the message in the first `k` positions and the polynomial
/// remainder in the last `n - k`.
pub fn bch_parity_check(n: usize, k: usize) -> Result<BitMatrix, CodeError> {
    let t = design_t(n, k)?;
    let g = generator_polynomial(t);
    let m = n - k;
    assert_eq!(poly_degree(g), m, "generator degree must equal n - k");

    // Remainder of x^(n-1-i) mod g gives the parity pattern of message bit i.
    let mut h = BitMatrix::zeros(m, n);
    for i in 0..k {
        let r = poly_mod(1u64 << (n - 1 - i), g);
        for j in 0..m {
            if r >> (m - 1 - j) & 1 == 1 {
                h.set(j, i, true);
            }
        }
    }
    for j in 0..m {
        h.set(j, k + j, true);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2::generator_from_h;

    #[test]
    fn field_basics() {
        // alpha^31 = 1 and no smaller power is (alpha is primitive).
        let alpha = 0b10u8;
        assert_eq!(gf32_pow(alpha, 31), 1);
        for e in 1..31 {
            assert_ne!(gf32_pow(alpha, e), 1, "alpha^{e} == 1");
        }
    }

    #[test]
    fn minimal_polynomials_have_their_roots() {
        let alpha = 0b10u8;
        for j in [1usize, 3, 5, 7, 9] {
            let m = minimal_polynomial(j);
            // Evaluate m(alpha^j) over GF(32).
            let x = gf32_pow(alpha, j);
            let mut acc = 0u8;
            for d in 0..=poly_degree(m) {
                if m >> d & 1 == 1 {
                    acc ^= gf32_pow(x, d);
                }
            }
            assert_eq!(acc, 0, "alpha^{j} is not a root of its minimal polynomial");
        }
    }

    #[test]
    fn generator_divides_x31_plus_1() {
        for t in [2, 3, 5] {
            let g = generator_polynomial(t);
            let x31_1 = (1u64 << 31) | 1;
            assert_eq!(poly_mod(x31_1, g), 0, "g for t={t} does not divide x^31+1");
        }
    }

    #[test]
    fn unsupported_pair_rejected() {
        assert!(matches!(
            bch_parity_check(31, 12),
            Err(CodeError::UnsupportedCode { n: 31, k: 12 })
        ));
        assert!(matches!(bch_parity_check(63, 45), Err(CodeError::UnsupportedCode { .. })));
    }

    #[test]
    fn parity_checks_have_full_rank_and_annihilate_g() {
        for &(n, k) in &[(31usize, 21usize), (31, 16), (31, 11)] {
            let h = bch_parity_check(n, k).unwrap();
            assert_eq!(h.rows(), n - k);
            assert_eq!(h.cols(), n);
            assert_eq!(h.rank(), n - k);
            let g = generator_from_h(&h).unwrap();
            assert!(g.matmul(&h.transpose()).unwrap().is_zero());
        }
    }

    /// Exhaustive minimum-distance oracle via Gray-code enumeration of all
    /// 2^k codewords (each step XORs a single packed generator row).
    fn min_distance(n: usize, k: usize) -> u32 {
        let h = bch_parity_check(n, k).unwrap();
        let g = generator_from_h(&h).unwrap();
        let rows: Vec<u64> = (0..k)
            .map(|i| {
                let mut w = 0u64;
                for c in 0..n {
                    if g.get(i, c) {
                        w |= 1 << c;
                    }
                }
                w
            })
            .collect();
        let mut word = 0u64;
        let mut best = u32::MAX;
        for m in 1u64..(1 << k) {
            word ^= rows[m.trailing_zeros() as usize];
            best = best.min(word.count_ones());
        }
        best
    }

    #[test]
    fn minimum_distances_match_design() {
        // Design distance 2t+1; for these codes the true minimum equals it.
        assert_eq!(min_distance(31, 11), 11);
        assert_eq!(min_distance(31, 16), 7);
    }

    #[test]
    fn minimum_distance_31_21() {
        assert_eq!(min_distance(31, 21), 5);
    }
}
