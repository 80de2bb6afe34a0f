//! Dense linear algebra and the differentiable primitives the model layers
//! are built from.
//!
//! Every layer in this crate writes its own backward pass by hand on top of
//! these kernels; there is no tape. [`grad_check`] is the finite-difference
//! oracle used to verify those hand-written rules.

use std::fmt;

use crate::error::{Error, Result};

/// A dense vector of activations.
pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// Column vector (n x 1); biases are stored this way.
    pub fn column(data: Vec<f64>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sum_squares(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vector {
        let mut y = vec![0.0; self.rows];
        self.matvec_acc(x, &mut y);
        y
    }

    /// `y += self * x`.
    #[inline]
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            *out += dot(self.row(r), x);
        }
    }

    /// `y += self^T * x`.
    #[inline]
    pub fn matvec_t_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), y);
            }
        }
    }

    /// `self += u * v^T`.
    #[inline]
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            if ur != 0.0 {
                axpy(ur, v, self.row_mut(r));
            }
        }
    }
}

/// Matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik != 0.0 {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    Ok(out)
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, v: &[f64]) -> Vector {
    match kind {
        Activation::Sigmoid => v.iter().map(|&x| sigmoid(x)).collect(),
        Activation::Tanh => v.iter().map(|&x| x.tanh()).collect(),
    }
}

/// Backward through an activation, given its output `y` and upstream `dy`.
pub fn activation_backward(kind: Activation, y: &[f64], dy: &[f64]) -> Vector {
    match kind {
        Activation::Sigmoid => y.iter().zip(dy).map(|(y, d)| d * y * (1.0 - y)).collect(),
        Activation::Tanh => y.iter().zip(dy).map(|(y, d)| d * (1.0 - y * y)).collect(),
    }
}

pub fn softmax(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::shape("softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vector = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    Ok(out)
}

/// Log-softmax computed as shift-then-log-sum-exp.
pub fn log_softmax(v: &[f64]) -> Result<Vector> {
    if v.is_empty() {
        return Err(Error::shape("log-softmax of an empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    Ok(v.iter().map(|x| x - lse).collect())
}

/// Backward through softmax: `dv = p * (dp - <p, dp>)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vector {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(p, d)| p * (d - inner)).collect()
}

/// Backward through log-softmax: `dv = dl - softmax * sum(dl)`.
pub fn log_softmax_backward(logp: &[f64], dl: &[f64]) -> Vector {
    let total: f64 = dl.iter().sum();
    logp.iter()
        .zip(dl)
        .map(|(lp, d)| d - lp.exp() * total)
        .collect()
}

/// A collection of named parameter tensors.
///
/// Gradients are represented by a value of the same type, so anything
/// implementing this trait can be checked, optimized and serialized
/// tensor-by-tensor in a stable order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Scalars whose relative error reached the tolerance.
    pub outliers: usize,
    /// Largest absolute error among the outliers.
    pub outlier_max_abs_err: f64,
    /// Largest analytic gradient magnitude among the outliers.
    pub outlier_max_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<TensorCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs_err).fold(0.0, f64::max)
    }

    pub fn outliers(&self) -> usize {
        self.entries.iter().map(|e| e.outliers).sum()
    }

    /// True when every scalar over tolerance is within `abs_floor` in
    /// absolute terms, i.e. only the finite-difference noise floor is left.
    pub fn outliers_within(&self, abs_floor: f64) -> bool {
        self.entries.iter().all(|e| e.outlier_max_abs_err < abs_floor)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<20} max_rel={:.3e} max_abs={:.3e} outliers={}",
                e.name, e.max_rel_err, e.max_abs_err, e.outliers
            )?;
        }
        write!(
            f,
            "gradcheck {} (tolerance {:e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

/// Relative error between an analytic and a numeric derivative.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central finite differences of `loss_fn`
/// around `params`, one scalar at a time.
pub fn grad_check<P, F>(
    params: &P,
    analytic: &P,
    mut loss_fn: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut work = params.clone();
    let analytic = analytic.tensors();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if analytic.len() != names.len() {
        return Err(Error::shape("analytic gradient has a different tensor layout"));
    }

    let mut entries = Vec::with_capacity(names.len());
    for (k, name) in names.into_iter().enumerate() {
        let grad = analytic[k].1;
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        let (mut outliers, mut out_abs, mut out_grad) = (0, 0.0f64, 0.0f64);
        for e in 0..grad.len() {
            let orig = work.tensors()[k].1.data()[e];
            work.tensors_mut()[k].1.data_mut()[e] = orig + epsilon;
            let plus = loss_fn(&work);
            work.tensors_mut()[k].1.data_mut()[e] = orig - epsilon;
            let minus = loss_fn(&work);
            work.tensors_mut()[k].1.data_mut()[e] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss while perturbing {name}[{e}]")));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            let rel = relative_error(a, numeric);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            if rel >= tolerance {
                outliers += 1;
                out_abs = out_abs.max(abs);
                out_grad = out_grad.max(a.abs());
            }
        }
        entries.push(TensorCheck {
            name,
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            outliers,
            outlier_max_abs_err: out_abs,
            outlier_max_grad: out_grad,
        });
    }
    let passed = entries.iter().all(|e| e.max_rel_err < tolerance);
    Ok(GradCheckReport {
        entries,
        tolerance,
        passed,
    })
}
