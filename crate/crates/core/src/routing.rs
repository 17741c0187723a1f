//! Routing-by-agreement between a lower and an upper capsule layer.
//!
//! Two inference paths share the same kernels:
//!
//! * [`dynamic_route`] runs the iterative procedure: weighted sum, squash,
//!   agreement update of the logits, coefficient normalization. Logits
//!   accumulate across iterations and are never reset.
//! * [`fast_route`] replaces the loop with a single weighted sum under a
//!   fixed coefficient matrix followed by one squash pass. It is bit-exact
//!   with a one-pass oracle because both paths call the same kernels.
//!
//! Coefficient normalization is per lower-capsule row over the upper
//! capsules. Max-Min maps a row affinely onto `[lower_bound, upper_bound]`;
//! Softmax is the usual exponential normalization. A row whose spread is at
//! most `epsilon` is degenerate and maps to the midpoint (Max-Min) or the
//! uniform `1/n` row (Softmax).

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::master::MasterMatrix;

/// Which row normalization turns logits into coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    MaxMin,
    Softmax,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::MaxMin => write!(f, "maxmin"),
            NormKind::Softmax => write!(f, "softmax"),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maxmin" | "max-min" => Ok(NormKind::MaxMin),
            "softmax" => Ok(NormKind::Softmax),
            other => Err(Error::Validation(format!(
                "unknown normalization '{other}' (expected maxmin or softmax)"
            ))),
        }
    }
}

/// Parameters of the routing procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    pub iterations: usize,
    pub norm_kind: NormKind,
    /// Lower edge `p` of the Max-Min target interval.
    pub lower_bound: f64,
    /// Upper edge `q` of the Max-Min target interval.
    pub upper_bound: f64,
    /// Coefficient value used for the first weighted sum, before any
    /// normalization has run.
    pub init_coefficient: f64,
    /// Degenerate-row guard for normalization and zero guard for squash.
    pub epsilon: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            iterations: 3,
            norm_kind: NormKind::MaxMin,
            lower_bound: 0.0,
            upper_bound: 1.0,
            init_coefficient: 1.0,
            epsilon: 1e-12,
        }
    }
}

impl RoutingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be at least 1".into()));
        }
        if !self.lower_bound.is_finite() || !self.upper_bound.is_finite() {
            return Err(Error::Validation("interval bounds must be finite".into()));
        }
        if self.lower_bound >= self.upper_bound {
            return Err(Error::Validation(format!(
                "lower bound {} must be below upper bound {}",
                self.lower_bound, self.upper_bound
            )));
        }
        if !self.init_coefficient.is_finite() {
            return Err(Error::Validation("init coefficient must be finite".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Validation("epsilon must be finite and positive".into()));
        }
        Ok(())
    }
}

fn require_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} contains a non-finite entry")))
    }
}

/// Pose vectors of the lower layer, shape `(n_lower, d_l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerCapsules {
    values: Array2<f64>,
}

impl LowerCapsules {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("lower capsules need at least one row and column".into()));
        }
        let values = standard2(values);
        require_finite(values.as_slice().unwrap(), "lower capsules")?;
        Ok(LowerCapsules { values })
    }

    pub fn n_lower(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Per-pair transforms, shape `(n_lower, n_upper, d_h, d_l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformTensor {
    values: Array4<f64>,
}

impl TransformTensor {
    pub fn new(values: Array4<f64>) -> Result<Self> {
        if values.shape().iter().any(|&d| d == 0) {
            return Err(Error::Dimension("transform tensor has a zero dimension".into()));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        require_finite(values.as_slice().unwrap(), "transform tensor")?;
        Ok(TransformTensor { values })
    }

    pub fn values(&self) -> &Array4<f64> {
        &self.values
    }
}

/// Prediction vectors, shape `(n_lower, n_upper, d_h)`, always finite and
/// in standard layout.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTensor {
    values: Array3<f64>,
}

impl PredictionTensor {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        if values.shape().iter().any(|&d| d == 0) {
            return Err(Error::Dimension("prediction tensor has a zero dimension".into()));
        }
        let values = standard3(values);
        require_finite(values.as_slice().unwrap(), "prediction tensor")?;
        Ok(PredictionTensor { values })
    }

    pub fn from_shape_vec(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let arr = Array3::from_shape_vec(shape, data)
            .map_err(|e| Error::Dimension(format!("prediction tensor shape: {e}")))?;
        PredictionTensor::new(arr)
    }

    pub fn n_lower(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_upper(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    fn as_slice(&self) -> &[f64] {
        self.values.as_slice().unwrap()
    }
}

/// Provenance tag on a coefficient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefficientKind {
    RawLogits,
    MaxMinNormalized,
    SoftmaxNormalized,
}

/// Routing coefficients or logits, shape `(n_lower, n_upper)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    values: Array2<f64>,
    kind: CoefficientKind,
}

impl CoefficientMatrix {
    pub fn new(values: Array2<f64>, kind: CoefficientKind) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("coefficient matrix has a zero dimension".into()));
        }
        let values = standard2(values);
        require_finite(values.as_slice().unwrap(), "coefficient matrix")?;
        Ok(CoefficientMatrix { values, kind })
    }

    /// Zero logits, the state before the first agreement update.
    pub fn zero_logits(n_lower: usize, n_upper: usize) -> Result<Self> {
        if n_lower == 0 || n_upper == 0 {
            return Err(Error::Dimension("coefficient matrix has a zero dimension".into()));
        }
        Ok(CoefficientMatrix {
            values: Array2::zeros((n_lower, n_upper)),
            kind: CoefficientKind::RawLogits,
        })
    }

    pub fn n_lower(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_upper(&self) -> usize {
        self.values.ncols()
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    fn as_slice(&self) -> &[f64] {
        self.values.as_slice().unwrap()
    }
}

/// Upper-layer vectors, shape `(n_upper, d_h)`. Holds the pre-squash sums
/// `s_j` or the squashed outputs `v_j` depending on the producing call;
/// squashed rows always have norm strictly below 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleOutputs {
    values: Array2<f64>,
}

impl CapsuleOutputs {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("capsule outputs have a zero dimension".into()));
        }
        let values = standard2(values);
        require_finite(values.as_slice().unwrap(), "capsule outputs")?;
        Ok(CapsuleOutputs { values })
    }

    pub fn n_upper(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Row L2 norms; the classification statistic.
    pub fn norms(&self) -> Vec<f64> {
        self.values
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    fn as_slice(&self) -> &[f64] {
        self.values.as_slice().unwrap()
    }
}

/// Full record of one dynamic-routing run: the coefficient matrix after each
/// iteration's normalization, plus the final squashed outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTrace {
    coefficients: Array3<f64>,
    outputs: CapsuleOutputs,
    norm_kind: NormKind,
    init_coefficient: f64,
}

impl RoutingTrace {
    pub fn iterations(&self) -> usize {
        self.coefficients.shape()[0]
    }

    pub fn n_lower(&self) -> usize {
        self.coefficients.shape()[1]
    }

    pub fn n_upper(&self) -> usize {
        self.coefficients.shape()[2]
    }

    /// Coefficients recorded after iteration `t`'s normalization.
    pub fn coefficients_at(&self, t: usize) -> Result<CoefficientMatrix> {
        if t >= self.iterations() {
            return Err(Error::Validation(format!(
                "iteration {t} out of range (trace has {})",
                self.iterations()
            )));
        }
        let plane = self.coefficients.index_axis(ndarray::Axis(0), t).to_owned();
        CoefficientMatrix::new(plane, self.normalized_kind())
    }

    pub fn last_coefficients(&self) -> CoefficientMatrix {
        self.coefficients_at(self.iterations() - 1).unwrap()
    }

    pub fn coefficients(&self) -> &Array3<f64> {
        &self.coefficients
    }

    pub fn outputs(&self) -> &CapsuleOutputs {
        &self.outputs
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn init_coefficient(&self) -> f64 {
        self.init_coefficient
    }

    fn normalized_kind(&self) -> CoefficientKind {
        match self.norm_kind {
            NormKind::MaxMin => CoefficientKind::MaxMinNormalized,
            NormKind::Softmax => CoefficientKind::SoftmaxNormalized,
        }
    }

    pub(crate) fn from_parts(
        coefficients: Array3<f64>,
        outputs: CapsuleOutputs,
        norm_kind: NormKind,
        init_coefficient: f64,
    ) -> Self {
        RoutingTrace {
            coefficients,
            outputs,
            norm_kind,
            init_coefficient,
        }
    }
}

fn standard2(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn standard3(a: Array3<f64>) -> Array3<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}


fn weighted_sum_kernel(
    c: &[f64],
    u_hat: &[f64],
    n_lower: usize,
    n_upper: usize,
    dim: usize,
    out: &mut [f64],
) {
    #[cfg(test)]
    probe::bump(|p| p.weighted_sum += 1);
    out.fill(0.0);
    for i in 0..n_lower {
        for j in 0..n_upper {
            let cij = c[i * n_upper + j];
            let base = (i * n_upper + j) * dim;
            let row = &u_hat[base..base + dim];
            let acc = &mut out[j * dim..(j + 1) * dim];
            for d in 0..dim {
                acc[d] += cij * row[d];
            }
        }
    }
}

/// Squash one vector in place: `v = s * ||s|| / (1 + ||s||^2)`. Norms at or
/// below `epsilon` map to the zero vector.
fn squash_row(row: &mut [f64], epsilon: f64) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= epsilon {
        row.fill(0.0);
        return;
    }
    let factor = norm / (1.0 + norm * norm);
    for v in row.iter_mut() {
        *v *= factor;
    }
}

fn squash_rows_kernel(values: &mut [f64], n_upper: usize, dim: usize, epsilon: f64) {
    #[cfg(test)]
    probe::bump(|p| p.squash += 1);
    for j in 0..n_upper {
        squash_row(&mut values[j * dim..(j + 1) * dim], epsilon);
    }
}

fn agreement_kernel(
    b: &mut [f64],
    u_hat: &[f64],
    v: &[f64],
    n_lower: usize,
    n_upper: usize,
    dim: usize,
) {
    #[cfg(test)]
    probe::bump(|p| p.agreement += 1);
    for i in 0..n_lower {
        for j in 0..n_upper {
            let base = (i * n_upper + j) * dim;
            let row = &u_hat[base..base + dim];
            let vrow = &v[j * dim..(j + 1) * dim];
            let mut dot = 0.0;
            for d in 0..dim {
                dot += row[d] * vrow[d];
            }
            b[i * n_upper + j] += dot;
        }
    }
}

/// Max-Min on one row: affine map of `[min, max]` onto `[p, q]`. The lerp
/// form keeps the endpoints exact; the clamp guards against 1-ulp
/// overshoot of interior points.
fn maxmin_row(row: &[f64], p: f64, q: f64, epsilon: f64, out: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in row {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range <= epsilon {
        out.fill(0.5 * (p + q));
        return;
    }
    for (o, &v) in out.iter_mut().zip(row) {
        let t = (v - lo) / range;
        *o = (p * (1.0 - t) + q * t).clamp(p, q);
    }
}

fn softmax_row(row: &[f64], epsilon: f64, out: &mut [f64]) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in row {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo <= epsilon {
        out.fill(1.0 / row.len() as f64);
        return;
    }
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - hi).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn normalize_rows_kernel(
    b: &[f64],
    n_rows: usize,
    n_cols: usize,
    config: &RoutingConfig,
    out: &mut [f64],
) {
    #[cfg(test)]
    probe::bump(|p| p.normalize += 1);
    for i in 0..n_rows {
        let row = &b[i * n_cols..(i + 1) * n_cols];
        let dst = &mut out[i * n_cols..(i + 1) * n_cols];
        match config.norm_kind {
            NormKind::MaxMin => maxmin_row(
                row,
                config.lower_bound,
                config.upper_bound,
                config.epsilon,
                dst,
            ),
            NormKind::Softmax => softmax_row(row, config.epsilon, dst),
        }
    }
}

/// `u_hat[i][j] = W[i][j] . u[i]`.
pub fn predict_vectors(u: &LowerCapsules, w: &TransformTensor) -> Result<PredictionTensor> {
    let shape = w.values().shape();
    let (n_lower, n_upper, d_h, d_l) = (shape[0], shape[1], shape[2], shape[3]);
    if u.n_lower() != n_lower || u.dim() != d_l {
        return Err(Error::Dimension(format!(
            "lower capsules ({}, {}) do not match transforms ({}, _, _, {})",
            u.n_lower(),
            u.dim(),
            n_lower,
            d_l
        )));
    }
    let uv = u.values().as_slice().unwrap();
    let wv = w.values().as_slice().unwrap();
    let mut out = vec![0.0; n_lower * n_upper * d_h];
    for i in 0..n_lower {
        let urow = &uv[i * d_l..(i + 1) * d_l];
        for j in 0..n_upper {
            for h in 0..d_h {
                let base = ((i * n_upper + j) * d_h + h) * d_l;
                let wrow = &wv[base..base + d_l];
                let mut acc = 0.0;
                for l in 0..d_l {
                    acc += wrow[l] * urow[l];
                }
                out[(i * n_upper + j) * d_h + h] = acc;
            }
        }
    }
    PredictionTensor::from_shape_vec((n_lower, n_upper, d_h), out)
}

/// Squash a single vector. Zero guard at `epsilon` as in the row kernel.
pub fn squash(s: &Array1<f64>, epsilon: f64) -> Array1<f64> {
    let mut out = s.to_vec();
    squash_row(&mut out, epsilon);
    Array1::from_vec(out)
}

/// Squash every row of `s`.
pub fn squash_outputs(s: &CapsuleOutputs, epsilon: f64) -> CapsuleOutputs {
    let mut values = s.values.clone();
    squash_rows_kernel(
        values.as_slice_mut().unwrap(),
        s.n_upper(),
        s.dim(),
        epsilon,
    );
    CapsuleOutputs { values }
}

/// Row-normalize logits into coefficients under `config.norm_kind`.
pub fn normalize_rows(b: &CoefficientMatrix, config: &RoutingConfig) -> Result<CoefficientMatrix> {
    config.validate()?;
    let (n_rows, n_cols) = (b.n_lower(), b.n_upper());
    let mut out = vec![0.0; n_rows * n_cols];
    normalize_rows_kernel(b.as_slice(), n_rows, n_cols, config, &mut out);
    let kind = match config.norm_kind {
        NormKind::MaxMin => CoefficientKind::MaxMinNormalized,
        NormKind::Softmax => CoefficientKind::SoftmaxNormalized,
    };
    CoefficientMatrix::new(Array2::from_shape_vec((n_rows, n_cols), out).unwrap(), kind)
}

fn check_pair(c: ArrayView2<f64>, u: ArrayView3<f64>) -> Result<()> {
    if c.nrows() != u.shape()[0] || c.ncols() != u.shape()[1] {
        return Err(Error::Dimension(format!(
            "coefficients ({}, {}) do not match predictions ({}, {}, {})",
            c.nrows(),
            c.ncols(),
            u.shape()[0],
            u.shape()[1],
            u.shape()[2]
        )));
    }
    Ok(())
}

/// Pre-squash sums `s_j = sum_i c_ij * u_hat[i][j]`.
pub fn weighted_sum(c: &CoefficientMatrix, u_hat: &PredictionTensor) -> Result<CapsuleOutputs> {
    check_pair(c.values.view(), u_hat.values.view())?;
    let (n_lower, n_upper, dim) = (u_hat.n_lower(), u_hat.n_upper(), u_hat.dim());
    let mut out = vec![0.0; n_upper * dim];
    weighted_sum_kernel(c.as_slice(), u_hat.as_slice(), n_lower, n_upper, dim, &mut out);
    CapsuleOutputs::new(Array2::from_shape_vec((n_upper, dim), out).unwrap())
}

/// Logit update `b_ij += u_hat[i][j] . v_j`. Returns the updated matrix;
/// the input is not consumed so callers can keep the previous state.
pub fn agreement_update(
    b: &CoefficientMatrix,
    u_hat: &PredictionTensor,
    v: &CapsuleOutputs,
) -> Result<CoefficientMatrix> {
    check_pair(b.values.view(), u_hat.values.view())?;
    if v.n_upper() != u_hat.n_upper() || v.dim() != u_hat.dim() {
        return Err(Error::Dimension(format!(
            "outputs ({}, {}) do not match predictions (_, {}, {})",
            v.n_upper(),
            v.dim(),
            u_hat.n_upper(),
            u_hat.dim()
        )));
    }
    let mut out = b.values.clone();
    agreement_kernel(
        out.as_slice_mut().unwrap(),
        u_hat.as_slice(),
        v.as_slice(),
        u_hat.n_lower(),
        u_hat.n_upper(),
        u_hat.dim(),
    );
    CoefficientMatrix::new(out, CoefficientKind::RawLogits)
}

/// Iterative routing. Coefficients start at `config.init_coefficient`,
/// logits at zero. Each iteration computes the weighted sum, squashes,
/// updates the logits by agreement, and normalizes them into the next
/// coefficients; the trace records the coefficients after every
/// normalization and the outputs of the final iteration.
pub fn dynamic_route(u_hat: &PredictionTensor, config: &RoutingConfig) -> Result<RoutingTrace> {
    config.validate()?;
    let (n_lower, n_upper, dim) = (u_hat.n_lower(), u_hat.n_upper(), u_hat.dim());
    let u = u_hat.as_slice();

    let mut c = vec![config.init_coefficient; n_lower * n_upper];
    let mut b = vec![0.0; n_lower * n_upper];
    let mut s = vec![0.0; n_upper * dim];
    let mut trace = Array3::zeros((config.iterations, n_lower, n_upper));

    for t in 0..config.iterations {
        weighted_sum_kernel(&c, u, n_lower, n_upper, dim, &mut s);
        squash_rows_kernel(&mut s, n_upper, dim, config.epsilon);
        agreement_kernel(&mut b, u, &s, n_lower, n_upper, dim);
        normalize_rows_kernel(&b, n_lower, n_upper, config, &mut c);
        trace
            .index_axis_mut(ndarray::Axis(0), t)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&c);
    }

    let outputs = CapsuleOutputs::new(Array2::from_shape_vec((n_upper, dim), s).unwrap())?;
    Ok(RoutingTrace::from_parts(
        trace,
        outputs,
        config.norm_kind,
        config.init_coefficient,
    ))
}

/// Single-pass inference: one weighted sum under the master coefficients,
/// one squash. No normalization, no agreement updates.
pub fn fast_route(u_hat: &PredictionTensor, master: &MasterMatrix) -> Result<CapsuleOutputs> {
    let mv = master.values();
    if mv.nrows() != u_hat.n_lower() || mv.ncols() != u_hat.n_upper() {
        return Err(Error::Dimension(format!(
            "master ({}, {}) does not match predictions ({}, {}, _)",
            mv.nrows(),
            mv.ncols(),
            u_hat.n_lower(),
            u_hat.n_upper()
        )));
    }
    let (n_lower, n_upper, dim) = (u_hat.n_lower(), u_hat.n_upper(), u_hat.dim());
    let mut out = vec![0.0; n_upper * dim];
    weighted_sum_kernel(
        mv.as_slice().unwrap(),
        u_hat.as_slice(),
        n_lower,
        n_upper,
        dim,
        &mut out,
    );
    squash_rows_kernel(&mut out, n_upper, dim, master.epsilon());
    CapsuleOutputs::new(Array2::from_shape_vec((n_upper, dim), out).unwrap())
}

/// Single-plane trace of a fast pass: the recorded coefficients are the
/// master's own matrix, the outputs are fast_route's. Lets fast runs use
/// the same trace artifacts as dynamic ones.
pub fn fast_route_trace(u_hat: &PredictionTensor, master: &MasterMatrix) -> Result<RoutingTrace> {
    let outputs = fast_route(u_hat, master)?;
    let config = master.routing_config();
    let coefficients = master.values().clone().insert_axis(ndarray::Axis(0));
    Ok(RoutingTrace::from_parts(
        coefficients,
        outputs,
        config.norm_kind,
        config.init_coefficient,
    ))
}

/// Index of the output row with the largest norm; ties go to the lowest
/// index.
pub fn classify(v: &CapsuleOutputs) -> usize {
    let norms = v.norms();
    let mut best = 0;
    for (j, &n) in norms.iter().enumerate() {
        if n > norms[best] {
            best = j;
        }
    }
    best
}
