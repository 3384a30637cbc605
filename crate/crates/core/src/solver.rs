//! ℓ1-ℓ2 recovery of superimposed measurements.
//!
//! [`ista_solve`] minimizes `λ‖x‖₁ + ½‖y − Ax‖₂²` by iterative
//! shrinkage-thresholding starting from `x = 0`. [`quantize_support`] turns
//! the real-valued estimate into ±1 decisions, and [`brute_force_p0`] is an
//! exhaustive sparsest-fit search used to check the solver on small problems.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sensing::{SensingParams, SignatureMatrix};

/// Gradient step size.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    /// `1 / σ_max(A)²`
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IstaConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step: StepSize,
}

impl Default for IstaConfig {
    fn default() -> Self {
        IstaConfig {
            lambda: 0.5,
            max_iters: 500,
            tol: 1e-4,
            step: StepSize::Auto,
        }
    }
}

impl IstaConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        IstaConfig {
            lambda,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::param(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iters < 1 {
            return Err(Error::param("max_iters must be >= 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param(format!("tol must be >= 0, got {}", self.tol)));
        }
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::param(format!("step must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    fn effective_step(&self, a: &SignatureMatrix) -> Result<f64> {
        match self.step {
            StepSize::Fixed(s) => Ok(s),
            StepSize::Auto => {
                let s = a.sigma_max();
                if s == 0.0 {
                    return Err(Error::param("auto step undefined for a zero matrix"));
                }
                Ok(1.0 / (s * s))
            }
        }
    }
}

/// A vector indexed like the columns of the signature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSignal(pub Vec<f64>);

impl SparseSignal {
    pub fn zeros(len: usize) -> Self {
        SparseSignal(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Indices of nonzero entries, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }
}

/// One decoded `(origin, hop, ±1)` triple. `origin` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecodedMeasurement {
    pub origin: usize,
    pub hop: usize,
    pub value: i8,
}

impl DecodedMeasurement {
    pub fn new(origin: usize, hop: usize, value: i8) -> Self {
        debug_assert!(value == 1 || value == -1);
        DecodedMeasurement { origin, hop, value }
    }
}

pub fn soft_threshold(v: f64, theta: f64) -> f64 {
    let m = v.abs() - theta;
    if m > 0.0 {
        m.copysign(v)
    } else {
        0.0
    }
}

fn check_dims(y: &[f64], a: &SignatureMatrix, x: Option<&SparseSignal>) -> Result<()> {
    if y.len() != a.rows() {
        return Err(Error::Shape {
            expected: a.rows(),
            got: y.len(),
        });
    }
    if let Some(x) = x {
        if x.len() != a.cols() {
            return Err(Error::Shape {
                expected: a.cols(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

fn residual(y: &[f64], a: &SignatureMatrix, x: &[f64], out: &mut [f64]) {
    a.mul_vec_into(x, out);
    out.iter_mut().zip(y).for_each(|(o, yi)| *o = yi - *o);
}

/// `λ‖x‖₁ + ½‖y − Ax‖₂²`
pub fn objective(y: &[f64], a: &SignatureMatrix, x: &SparseSignal, lambda: f64) -> Result<f64> {
    check_dims(y, a, Some(x))?;
    let mut r = vec![0.0; a.rows()];
    residual(y, a, &x.0, &mut r);
    Ok(lambda * x.l1_norm() + 0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

/// Gradient of the smooth term `½‖y − Ax‖₂²`, i.e. `Aᵀ(Ax − y)`.
pub fn smooth_gradient(y: &[f64], a: &SignatureMatrix, x: &SparseSignal) -> Result<Vec<f64>> {
    check_dims(y, a, Some(x))?;
    let mut r = vec![0.0; a.rows()];
    residual(y, a, &x.0, &mut r);
    r.iter_mut().for_each(|v| *v = -*v);
    a.tr_mul_vec(&r)
}

/// One shrinkage-thresholding update of `x` with the given step.
pub fn ista_step(
    y: &[f64],
    a: &SignatureMatrix,
    x: &SparseSignal,
    lambda: f64,
    step: f64,
) -> Result<SparseSignal> {
    check_dims(y, a, Some(x))?;
    let mut ws = Workspace::new(a);
    let mut next = x.0.clone();
    ws.step(y, a, &x.0, &mut next, lambda, step);
    Ok(SparseSignal(next))
}

struct Workspace {
    r: Vec<f64>,
    g: Vec<f64>,
}

impl Workspace {
    fn new(a: &SignatureMatrix) -> Self {
        Workspace {
            r: vec![0.0; a.rows()],
            g: vec![0.0; a.cols()],
        }
    }

    fn step(&mut self, y: &[f64], a: &SignatureMatrix, x: &[f64], next: &mut [f64], lambda: f64, step: f64) {
        residual(y, a, x, &mut self.r);
        a.tr_mul_vec_into(&self.r, &mut self.g);
        let theta = step * lambda;
        for ((n, xi), gi) in next.iter_mut().zip(x).zip(&self.g) {
            *n = soft_threshold(xi + step * gi, theta);
        }
    }
}

pub fn ista_solve(y: &[f64], a: &SignatureMatrix, config: &IstaConfig) -> Result<SparseSignal> {
    run_ista(y, a, config, None)
}

/// Like [`ista_solve`] but also returns the objective value after every
/// iteration, starting with the value at `x = 0`.
pub fn ista_solve_traced(
    y: &[f64],
    a: &SignatureMatrix,
    config: &IstaConfig,
) -> Result<(SparseSignal, Vec<f64>)> {
    let mut trace = Vec::new();
    let x = run_ista(y, a, config, Some(&mut trace))?;
    Ok((x, trace))
}

fn run_ista(
    y: &[f64],
    a: &SignatureMatrix,
    config: &IstaConfig,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<SparseSignal> {
    config.validate()?;
    check_dims(y, a, None)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("received chip vector"));
    }
    let step = config.effective_step(a)?;
    let q = a.cols();
    let mut x = vec![0.0; q];
    let mut next = vec![0.0; q];
    let mut ws = Workspace::new(a);

    if let Some(t) = trace.as_deref_mut() {
        t.push(0.5 * y.iter().map(|v| v * v).sum::<f64>());
    }
    if y.iter().all(|v| *v == 0.0) {
        return Ok(SparseSignal(x));
    }

    for _ in 0..config.max_iters {
        ws.step(y, a, &x, &mut next, config.lambda, step);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("ISTA iterate"));
        }
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for (n, o) in next.iter().zip(&x) {
            diff2 += (n - o) * (n - o);
            norm2 += o * o;
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(t) = trace.as_deref_mut() {
            let xs = SparseSignal(x.clone());
            t.push(objective(y, a, &xs, config.lambda)?);
        }
        if diff2.sqrt() <= config.tol * norm2.sqrt().max(1.0) {
            break;
        }
    }
    Ok(SparseSignal(x))
}

/// Writes an objective trace as `iteration,objective` CSV.
pub fn write_trace_csv<W: Write>(trace: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective"])?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:.12e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Hard decision with a dead zone: components with `|x_i| > tau` become
/// `sign(x_i)`, the rest are dropped. Output is ordered by column index.
pub fn quantize_support(
    x: &SparseSignal,
    params: &SensingParams,
    tau: f64,
) -> Vec<DecodedMeasurement> {
    x.0.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > tau)
        .filter_map(|(i, v)| {
            let (origin, hop) = params.origin_hop(i).ok()?;
            Some(DecodedMeasurement::new(origin, hop, if *v > 0.0 { 1 } else { -1 }))
        })
        .collect()
}

/// Upper bound on `C(Q, k_max)` accepted by [`brute_force_p0`].
pub const P0_ENUMERATION_LIMIT: u128 = 10_000_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exhaustive search for the sparsest ±1-valued `x` with
/// `‖y − Ax‖₂ ≤ fit_tol`, over supports of size `0..=k_max`.
///
/// Among fitting candidates of minimal size, the smallest residual wins, then
/// the lexicographically smallest support. Returns `None` when no candidate
/// fits.
pub fn brute_force_p0(
    y: &[f64],
    a: &SignatureMatrix,
    k_max: usize,
    fit_tol: f64,
) -> Result<Option<SparseSignal>> {
    check_dims(y, a, None)?;
    let q = a.cols();
    let combos = binomial(q, k_max);
    if combos > P0_ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            combinations: combos,
            limit: P0_ENUMERATION_LIMIT,
        });
    }
    let m = a.rows();
    let mut r = vec![0.0; m];
    for k in 0..=k_max.min(q) {
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        let mut support: Vec<usize> = (0..k).collect();
        loop {
            for pattern in 0u32..(1u32 << k) {
                let signs: Vec<f64> = (0..k)
                    .map(|b| if pattern >> b & 1 == 1 { -1.0 } else { 1.0 })
                    .collect();
                r.copy_from_slice(y);
                for (&c, &s) in support.iter().zip(&signs) {
                    for (ri, ai) in r.iter_mut().zip(a.column(c)) {
                        *ri -= s * ai;
                    }
                }
                let res = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if res <= fit_tol && best.as_ref().is_none_or(|(b, _, _)| res < *b) {
                    best = Some((res, support.clone(), signs));
                }
            }
            if !next_combination(&mut support, q) {
                break;
            }
        }
        if let Some((_, support, signs)) = best {
            let mut x = vec![0.0; q];
            for (c, s) in support.into_iter().zip(signs) {
                x[c] = s;
            }
            return Ok(Some(SparseSignal(x)));
        }
    }
    Ok(None)
}

/// Advances `c` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}
