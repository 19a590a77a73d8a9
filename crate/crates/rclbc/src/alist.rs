//! Reading and writing parity-check matrices in the alist text format.
//!
//! Layout: `n m` on the first line (columns then rows), the maximum column
//! and row degrees, per-column and per-row degree lists, then one line of
//! 1-based row indices per column and one line of 1-based column indices per
//! row. Zero entries used by padded writers are tolerated on input; output is
//! unpadded.

use crate::gf2::BitMatrix;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlistError {
    #[error("alist I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("alist parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> AlistError {
    AlistError::Parse { line, msg: msg.into() }
}

struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next_numbers(&mut self, what: &str) -> Result<(usize, Vec<usize>), AlistError> {
        for line in self.iter.by_ref() {
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let nums: Result<Vec<usize>, _> =
                line.split_whitespace().map(|t| t.parse::<usize>()).collect();
            return match nums {
                Ok(v) => Ok((self.line_no, v)),
                Err(_) => Err(parse_err(self.line_no, format!("expected integers for {what}"))),
            };
        }
        Err(parse_err(self.line_no + 1, format!("unexpected end of file, expected {what}")))
    }

    /// Index lines may legitimately be empty (degree-0 node); consume exactly one line.
    fn next_index_line(&mut self, what: &str) -> Result<(usize, Vec<usize>), AlistError> {
        match self.iter.next() {
            Some(line) => {
                self.line_no += 1;
                let nums: Result<Vec<usize>, _> =
                    line.split_whitespace().map(|t| t.parse::<usize>()).collect();
                match nums {
                    Ok(v) => Ok((self.line_no, v)),
                    Err(_) => Err(parse_err(self.line_no, format!("expected integers for {what}"))),
                }
            }
            None => Err(parse_err(self.line_no + 1, format!("unexpected end of file, expected {what}"))),
        }
    }
}

pub fn parse_alist(text: &str) -> Result<BitMatrix, AlistError> {
    let mut lines = Lines { iter: text.lines(), line_no: 0 };

    let (ln, dims) = lines.next_numbers("matrix dimensions")?;
    if dims.len() != 2 {
        return Err(parse_err(ln, "first line must contain exactly 'n m'"));
    }
    let (n, m) = (dims[0], dims[1]);
    if n == 0 || m == 0 {
        return Err(parse_err(ln, "matrix dimensions must be positive"));
    }

    let (ln, maxdeg) = lines.next_numbers("maximum degrees")?;
    if maxdeg.len() != 2 {
        return Err(parse_err(ln, "second line must contain exactly two maximum degrees"));
    }
    let (max_col, max_row) = (maxdeg[0], maxdeg[1]);

    let (ln, col_deg) = lines.next_numbers("column degrees")?;
    if col_deg.len() != n {
        return Err(parse_err(ln, format!("expected {n} column degrees, found {}", col_deg.len())));
    }
    if let Some(d) = col_deg.iter().find(|&&d| d > max_col) {
        return Err(parse_err(ln, format!("column degree {d} exceeds maximum {max_col}")));
    }

    let (ln, row_deg) = lines.next_numbers("row degrees")?;
    if row_deg.len() != m {
        return Err(parse_err(ln, format!("expected {m} row degrees, found {}", row_deg.len())));
    }
    if let Some(d) = row_deg.iter().find(|&&d| d > max_row) {
        return Err(parse_err(ln, format!("row degree {d} exceeds maximum {max_row}")));
    }

    let mut matrix = BitMatrix::zeros(m, n);
    for (c, &deg) in col_deg.iter().enumerate() {
        let (ln, mut idx) = lines.next_index_line(&format!("entries of column {}", c + 1))?;
        // Padded writers append zeros up to the maximum degree.
        if idx.len() > deg {
            if idx.len() == max_col && idx[deg..].iter().all(|&v| v == 0) {
                idx.truncate(deg);
            } else {
                return Err(parse_err(ln, format!("column {} lists {} entries, degree is {deg}", c + 1, idx.len())));
            }
        } else if idx.len() < deg {
            return Err(parse_err(ln, format!("column {} lists {} entries, degree is {deg}", c + 1, idx.len())));
        }
        for &r in &idx {
            if r == 0 || r > m {
                return Err(parse_err(ln, format!("row index {r} out of range 1..={m}")));
            }
            if matrix.get(r - 1, c) {
                return Err(parse_err(ln, format!("duplicate entry ({r},{}) in column list", c + 1)));
            }
            matrix.set(r - 1, c, true);
        }
    }

    // The row lists are redundant; verify they agree with the column lists.
    for (r, &deg) in row_deg.iter().enumerate() {
        let (ln, mut idx) = lines.next_index_line(&format!("entries of row {}", r + 1))?;
        if idx.len() > deg {
            if idx.len() == max_row && idx[deg..].iter().all(|&v| v == 0) {
                idx.truncate(deg);
            } else {
                return Err(parse_err(ln, format!("row {} lists {} entries, degree is {deg}", r + 1, idx.len())));
            }
        } else if idx.len() < deg {
            return Err(parse_err(ln, format!("row {} lists {} entries, degree is {deg}", r + 1, idx.len())));
        }
        let mut seen = vec![false; n];
        for &c in &idx {
            if c == 0 || c > n {
                return Err(parse_err(ln, format!("column index {c} out of range 1..={n}")));
            }
            if !matrix.get(r, c - 1) {
                return Err(parse_err(ln, format!("row {} lists entry at column {c} absent from column lists", r + 1)));
            }
            seen[c - 1] = true;
        }
        let actual = (0..n).filter(|&c| matrix.get(r, c)).count();
        if actual != deg || idx.iter().any(|&c| !seen[c - 1]) {
            return Err(parse_err(ln, format!("row {} degree mismatch: column lists imply {actual}, row list says {deg}", r + 1)));
        }
    }

    Ok(matrix)
}

pub fn format_alist(matrix: &BitMatrix) -> String {
    let (m, n) = (matrix.rows(), matrix.cols());
    let col_idx: Vec<Vec<usize>> = (0..n)
        .map(|c| (0..m).filter(|&r| matrix.get(r, c)).map(|r| r + 1).collect())
        .collect();
    let row_idx: Vec<Vec<usize>> = (0..m)
        .map(|r| (0..n).filter(|&c| matrix.get(r, c)).map(|c| c + 1).collect())
        .collect();
    let max_col = col_idx.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = row_idx.iter().map(Vec::len).max().unwrap_or(0);

    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    out.push_str(&format!("{n} {m}\n"));
    out.push_str(&format!("{max_col} {max_row}\n"));
    out.push_str(&join(&col_idx.iter().map(Vec::len).collect::<Vec<_>>()));
    out.push('\n');
    out.push_str(&join(&row_idx.iter().map(Vec::len).collect::<Vec<_>>()));
    out.push('\n');
    for idx in &col_idx {
        out.push_str(&join(idx));
        out.push('\n');
    }
    for idx in &row_idx {
        out.push_str(&join(idx));
        out.push('\n');
    }
    out
}

pub fn load_alist(path: impl AsRef<Path>) -> Result<BitMatrix, AlistError> {
    parse_alist(&std::fs::read_to_string(path)?)
}

pub fn save_alist(matrix: &BitMatrix, path: impl AsRef<Path>) -> Result<(), AlistError> {
    Ok(std::fs::write(path, format_alist(matrix))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_written_2x4() {
        let m = BitMatrix::from_rows(&[vec![1, 0, 1, 0], vec![0, 1, 0, 1]]).unwrap();
        let text = format_alist(&m);
        // Written against the format definition by hand.
        let expected = "4 2\n1 2\n1 1 1 1\n2 2\n1\n2\n1\n2\n1 3\n2 4\n";
        assert_eq!(text, expected);
        assert_eq!(parse_alist(expected).unwrap(), m);
    }

    #[test]
    fn tolerates_zero_padded_entries() {
        // Same 2x4 matrix, written with per-line padding to the max degree.
        let padded = "4 2\n1 2\n1 1 1 1\n2 2\n1\n2\n1\n2\n1 3\n2 4\n";
        let m = parse_alist(padded).unwrap();
        let repacked = "4 2\n2 2\n1 1 1 1\n2 2\n1 0\n2 0\n1 0\n2 0\n1 3\n2 4\n";
        assert_eq!(parse_alist(repacked).unwrap(), m);
    }

    #[test]
    fn row_index_out_of_range() {
        let bad = "4 2\n1 2\n1 1 1 1\n2 2\n3\n2\n1\n2\n1 3\n2 4\n";
        let err = parse_alist(bad).unwrap_err();
        match err {
            AlistError::Parse { line, ref msg } => {
                assert_eq!(line, 5);
                assert!(msg.contains("out of range"), "{msg}");
            }
            _ => panic!("expected parse error"),
        }
    }

    #[test]
    fn column_entry_exceeding_m_is_rejected_with_line_number() {
        let mut good = format_alist(&BitMatrix::from_rows(&[vec![1, 1], vec![0, 1]]).unwrap());
        // Corrupt the first column-index line (line 5) to point past the last row.
        good = good
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 4 { "9".to_string() } else { l.to_string() })
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_alist(&good).unwrap_err();
        match err {
            AlistError::Parse { line, .. } => assert_eq!(line, 5),
            _ => panic!("expected parse error"),
        }
    }

    #[test]
    fn degree_mismatch_detected() {
        // Column list says (1,1) and (2,2); row list for row 1 claims both columns.
        let bad = "2 2\n1 2\n1 1\n2 0\n1\n2\n1 2\n\n";
        assert!(matches!(parse_alist(bad), Err(AlistError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn roundtrip_random_matrices(rows in 1usize..24, cols in 1usize..48, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = BitMatrix::from_fn(rows, cols, |_, _| rng.random::<bool>());
            let text = format_alist(&m);
            prop_assert_eq!(parse_alist(&text).unwrap(), m);
        }
    }
}
