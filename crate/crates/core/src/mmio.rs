//! Matrix Market files: coordinate for sparse matrices, array for dense blocks.
//!
//! Parsing goes through `nalgebra-sparse`; values are written with 17
//! significant digits so a write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use nalgebra_sparse::io::load_coo_from_matrix_market_str;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

type Triplets = Vec<(usize, usize, f64)>;

fn parse_triplets(text: &str, origin: &str) -> Result<(usize, usize, Triplets)> {
    let coo =
        load_coo_from_matrix_market_str::<f64>(text).map_err(|e| Error::Parse(format!("{origin}: {}", e.message())))?;
    let trip = coo.triplet_iter().map(|(i, j, &v)| (i, j, v)).collect();
    Ok((coo.nrows(), coo.ncols(), trip))
}

/// Reads a real Matrix Market matrix (coordinate or array) as sparse.
pub fn read_sparse_str(text: &str, origin: &str) -> Result<SparseMatrix> {
    let (r, c, trip) = parse_triplets(text, origin)?;
    SparseMatrix::from_triplets(r, c, &trip)
}

/// Reads a real Matrix Market matrix (coordinate or array) as dense.
pub fn read_dense_str(text: &str, origin: &str) -> Result<DMatrix<f64>> {
    let (r, c, trip) = parse_triplets(text, origin)?;
    let mut d = DMatrix::zeros(r, c);
    for (i, j, v) in trip {
        d[(i, j)] += v;
    }
    Ok(d)
}

pub fn read_sparse(path: &Path) -> Result<SparseMatrix> {
    let text = std::fs::read_to_string(path)?;
    read_sparse_str(&text, &path.display().to_string())
}

pub fn read_dense(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    read_dense_str(&text, &path.display().to_string())
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sparse_to_string(m: &SparseMatrix) -> String {
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (i, j, v) in m.triplets() {
        let _ = writeln!(s, "{} {} {}", i + 1, j + 1, fmt_f64(v));
    }
    s
}

/// Column-major array format.
pub fn dense_to_string(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(s, "{} {}", m.nrows(), m.ncols());
    for v in m.iter() {
        let _ = writeln!(s, "{}", fmt_f64(*v));
    }
    s
}

pub fn write_sparse(path: &Path, m: &SparseMatrix) -> Result<()> {
    std::fs::write(path, sparse_to_string(m))?;
    Ok(())
}

pub fn write_dense(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, dense_to_string(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_coordinate_is_expanded() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 2.0\n2 1 -1.0\n3 3 4.5\n";
        let m = read_sparse_str(text, "t").unwrap();
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.nnz(), 4);
    }

    #[test]
    fn array_is_column_major() {
        let text = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        let d = read_dense_str(text, "t").unwrap();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn round_trip_is_exact() {
        let m = SparseMatrix::from_triplets(
            2,
            3,
            &[(0, 0, 1.0 / 3.0), (1, 2, -std::f64::consts::PI), (1, 1, 1e-300)],
        )
        .unwrap();
        assert_eq!(read_sparse_str(&sparse_to_string(&m), "t").unwrap(), m);
        let d = DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1).powi(j as i32 + 7) / 7.0);
        assert_eq!(read_dense_str(&dense_to_string(&d), "t").unwrap(), d);
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(read_sparse_str("not a matrix", "t"), Err(Error::Parse(_))));
        let truncated = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(matches!(read_sparse_str(truncated, "t"), Err(Error::Parse(_))));
    }
}
