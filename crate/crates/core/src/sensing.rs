//! Signature sequences and the sensing matrix.
//!
//! Every (origin node, hop count) pair owns one ±1 column of the matrix. Node
//! ids are 1-based at the API surface and hop counts run over `0..=max_hops`,
//! so the matrix has `n_nodes * (max_hops + 1)` columns.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Dimensions of the sensing problem plus the generator seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct SensingParams {
    pub n_nodes: usize,
    pub max_hops: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl SensingParams {
    pub fn new(n_nodes: usize, max_hops: usize, seq_len: usize, seed: u64) -> Result<Self> {
        let p = SensingParams {
            n_nodes,
            max_hops,
            seq_len,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return Err(Error::param(format!("n_nodes must be >= 2, got {}", self.n_nodes)));
        }
        if self.max_hops < 1 {
            return Err(Error::param("max_hops must be >= 1"));
        }
        if self.seq_len < 1 {
            return Err(Error::param("seq_len must be >= 1"));
        }
        if self.seq_len >= self.columns() {
            return Err(Error::param(format!(
                "seq_len {} must be smaller than n_nodes * (max_hops + 1) = {}",
                self.seq_len,
                self.columns()
            )));
        }
        Ok(())
    }

    /// Number of columns, `N * (L + 1)`.
    pub fn columns(&self) -> usize {
        self.n_nodes * (self.max_hops + 1)
    }

    /// Column holding the sequence of `(origin, hop)`; `origin` is 1-based.
    pub fn column_index(&self, origin: usize, hop: usize) -> Result<usize> {
        if origin < 1 || origin > self.n_nodes {
            return Err(Error::Index(format!(
                "origin {origin} outside 1..={}",
                self.n_nodes
            )));
        }
        if hop > self.max_hops {
            return Err(Error::Index(format!("hop {hop} outside 0..={}", self.max_hops)));
        }
        Ok((origin - 1) * (self.max_hops + 1) + hop)
    }

    /// Inverse of [`column_index`](Self::column_index).
    pub fn origin_hop(&self, column: usize) -> Result<(usize, usize)> {
        if column >= self.columns() {
            return Err(Error::Index(format!(
                "column {column} outside 0..{}",
                self.columns()
            )));
        }
        let per = self.max_hops + 1;
        Ok((column / per + 1, column % per))
    }
}

/// The `M x N(L+1)` matrix of ±1 signature sequences.
///
/// Entries are drawn in row-major order; each entry takes the top bit of one
/// `next_u32` from the ChaCha8 stream seeded with `params.seed` (bit set means
/// +1). Storage is column-major so sequences are contiguous.
#[derive(Debug)]
pub struct SignatureMatrix {
    params: SensingParams,
    data: Vec<f64>,
    sigma_max: OnceLock<f64>,
}

impl Clone for SignatureMatrix {
    fn clone(&self) -> Self {
        let sigma_max = OnceLock::new();
        if let Some(s) = self.sigma_max.get() {
            let _ = sigma_max.set(*s);
        }
        SignatureMatrix {
            params: self.params,
            data: self.data.clone(),
            sigma_max,
        }
    }
}

impl PartialEq for SignatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.data == other.data
    }
}

pub fn generate_signatures(params: SensingParams) -> Result<SignatureMatrix> {
    params.validate()?;
    let rows = params.seq_len;
    let cols = params.columns();
    let mut rng = rng_from_seed(params.seed);
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[c * rows + r] = if rng.next_u32() >> 31 == 1 { 1.0 } else { -1.0 };
        }
    }
    SignatureMatrix::from_columns(params, data)
}

impl SignatureMatrix {
    /// Builds a matrix from explicit column-major entries. Used for
    /// hand-made test fixtures; entries are not restricted to ±1.
    pub fn from_columns(params: SensingParams, columns: Vec<f64>) -> Result<Self> {
        let expected = params.seq_len * params.columns();
        if columns.len() != expected {
            return Err(Error::Shape {
                expected,
                got: columns.len(),
            });
        }
        Ok(SignatureMatrix {
            params,
            data: columns,
            sigma_max: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &SensingParams {
        &self.params
    }

    pub fn rows(&self) -> usize {
        self.params.seq_len
    }

    pub fn cols(&self) -> usize {
        self.params.columns()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows() + row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        let m = self.rows();
        &self.data[col * m..(col + 1) * m]
    }

    pub fn sequence_of(&self, origin: usize, hop: usize) -> Result<&[f64]> {
        let c = self.params.column_index(origin, hop)?;
        Ok(self.column(c))
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::Shape {
                expected: self.cols(),
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.rows()];
        self.mul_vec_into(x, &mut out);
        Ok(out)
    }

    pub(crate) fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (col, &xc) in self.data.chunks_exact(self.rows()).zip(x) {
            if xc != 0.0 {
                axpy(xc, col, out);
            }
        }
    }

    /// `A^T r`
    pub fn tr_mul_vec(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.rows() {
            return Err(Error::Shape {
                expected: self.rows(),
                got: r.len(),
            });
        }
        let mut out = vec![0.0; self.cols()];
        self.tr_mul_vec_into(r, &mut out);
        Ok(out)
    }

    pub(crate) fn tr_mul_vec_into(&self, r: &[f64], out: &mut [f64]) {
        for (col, o) in self.data.chunks_exact(self.rows()).zip(out.iter_mut()) {
            *o = dot(col, r);
        }
    }

    /// Largest singular value, estimated once by power iteration on `A^T A`
    /// (50 iterations, relative tolerance 1e-8) and cached.
    pub fn sigma_max(&self) -> f64 {
        *self.sigma_max.get_or_init(|| self.power_iteration(50, 1e-8))
    }

    fn power_iteration(&self, iters: usize, tol: f64) -> f64 {
        let q = self.cols();
        let mut v = vec![1.0 / (q as f64).sqrt(); q];
        let mut av = vec![0.0; self.rows()];
        let mut w = vec![0.0; q];
        let mut estimate = 0.0;
        for _ in 0..iters {
            self.mul_vec_into(&v, &mut av);
            self.tr_mul_vec_into(&av, &mut w);
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
            let prev = estimate;
            estimate = norm;
            if (estimate - prev).abs() <= tol * estimate {
                break;
            }
        }
        estimate.sqrt()
    }

    /// Plain-text export: one row per line, entries `1` / `-1` separated by
    /// single spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.rows() * self.cols() * 3);
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if c > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", self.get(r, c) as i64);
            }
            s.push('\n');
        }
        s
    }

    /// Parses the output of [`to_text`](Self::to_text) back into a matrix
    /// with the given parameters.
    pub fn from_text(params: SensingParams, text: &str) -> Result<Self> {
        let rows = params.seq_len;
        let cols = params.columns();
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != rows {
            return Err(Error::Shape {
                expected: rows,
                got: lines.len(),
            });
        }
        let mut data = vec![0.0; rows * cols];
        for (r, line) in lines.iter().enumerate() {
            let entries: Vec<&str> = line.split_whitespace().collect();
            if entries.len() != cols {
                return Err(Error::Shape {
                    expected: cols,
                    got: entries.len(),
                });
            }
            for (c, e) in entries.iter().enumerate() {
                data[c * rows + r] = match *e {
                    "1" | "+1" => 1.0,
                    "-1" => -1.0,
                    other => {
                        return Err(Error::param(format!(
                            "matrix entry `{other}` at row {r}, column {c} is not ±1"
                        )))
                    }
                };
            }
        }
        Self::from_columns(params, data)
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[4]) + (acc[1] + acc[5]) + (acc[2] + acc[6]) + (acc[3] + acc[7]) + tail
}

/// `out += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}
