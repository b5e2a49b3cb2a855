//! Linear Gaussian generative models.
//!
//! The canonical model draws a class mean `mu ~ N(0, diag(between_var))` and
//! observations `x | mu ~ N(mu, within_var * I)`. Every general linear Gaussian
//! model (arbitrary mean and full covariances) reduces to this form with an
//! invertible affine map, see [`canonicalize`]. All densities are returned in
//! the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{jacobi_eigen, Lu, Matrix};

/// Variances below this are rejected rather than clamped.
pub const MIN_VARIANCE: f64 = 1e-12;

/// Relative tolerance for covariance symmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(x; mean, diag(var))`. A `None` mean is the zero vector.
///
/// Shared by every density in this module so that algebraically identical
/// densities are also bitwise identical.
pub(crate) fn diag_gaussian_log_density(x: &[f64], mean: Option<&[f64]>, var: &[f64]) -> f64 {
    let mut log_norm = 0.0;
    let mut quad = 0.0;
    for (i, (&xi, &vi)) in x.iter().zip(var).enumerate() {
        let diff = match mean {
            Some(m) => xi - m[i],
            None => xi,
        };
        log_norm += LN_2PI + vi.ln();
        quad += diff * diff / vi;
    }
    -0.5 * (log_norm + quad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModel {
    between_var: Vec<f64>,
    within_var: f64,
}

impl CanonicalModel {
    pub fn new(between_var: Vec<f64>, within_var: f64) -> Result<Self> {
        if between_var.is_empty() {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        if let Some((i, v)) = between_var.iter().enumerate().find(|(_, v)| !(**v >= MIN_VARIANCE && v.is_finite())) {
            return Err(Error::InvalidModel(format!("between_var[{i}] = {v} must be finite and >= {MIN_VARIANCE:e}")));
        }
        if !(within_var >= MIN_VARIANCE && within_var.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "within_var = {within_var} must be finite and >= {MIN_VARIANCE:e}"
            )));
        }
        Ok(CanonicalModel { between_var, within_var })
    }

    /// Same between-class variance on every dimension.
    pub fn isotropic(dim: usize, between_var: f64, within_var: f64) -> Result<Self> {
        Self::new(vec![between_var; dim], within_var)
    }

    pub fn dim(&self) -> usize {
        self.between_var.len()
    }

    pub fn between_var(&self) -> &[f64] {
        &self.between_var
    }

    pub fn within_var(&self) -> f64 {
        self.within_var
    }

    /// Per-dimension variance of the marginal `p(x)`.
    pub fn marginal_var(&self) -> Vec<f64> {
        self.between_var.iter().map(|e| e + self.within_var).collect()
    }

    /// `log p(mu)`.
    pub fn prior_log_density(&self, mu: &[f64]) -> Result<f64> {
        check_dim(self.dim(), mu.len())?;
        Ok(diag_gaussian_log_density(mu, None, &self.between_var))
    }

    /// `log p(x | mu) = log N(x; mu, within_var * I)`.
    pub fn conditional_log_density(&self, mu: &[f64], x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), mu.len())?;
        check_dim(self.dim(), x.len())?;
        let var = vec![self.within_var; self.dim()];
        Ok(diag_gaussian_log_density(x, Some(mu), &var))
    }

    /// Evidence `log p(x)`, with the class mean integrated out.
    pub fn marginal_log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(diag_gaussian_log_density(x, None, &self.marginal_var()))
    }

    /// Posterior over a class mean given its enrollment samples.
    ///
    /// An empty sample set gives back the prior.
    pub fn posterior(&self, samples: &[Vec<f64>]) -> Result<Enrollment> {
        let d = self.dim();
        let mut sum = vec![0.0; d];
        for s in samples {
            check_dim(d, s.len())?;
            for (acc, v) in sum.iter_mut().zip(s) {
                *acc += v;
            }
        }
        let n = samples.len();
        if n > 0 {
            let inv = 1.0 / n as f64;
            sum.iter_mut().for_each(|v| *v *= inv);
        }
        self.posterior_from_mean(n, sum)
    }

    /// Posterior from sufficient statistics: sample count and sample mean.
    pub fn posterior_from_mean(&self, n: usize, sample_mean: Vec<f64>) -> Result<Enrollment> {
        check_dim(self.dim(), sample_mean.len())?;
        if n == 0 {
            return Ok(Enrollment {
                class_id: String::new(),
                n,
                sample_mean: vec![0.0; self.dim()],
                shrunk_mean: vec![0.0; self.dim()],
                posterior_var: self.between_var.clone(),
                samples: None,
            });
        }
        let nf = n as f64;
        let s2 = self.within_var;
        let mut shrunk_mean = Vec::with_capacity(self.dim());
        let mut posterior_var = Vec::with_capacity(self.dim());
        for (&e2, &m) in self.between_var.iter().zip(&sample_mean) {
            let denom = nf * e2 + s2;
            shrunk_mean.push(nf * e2 / denom * m);
            // Posterior variance is sigma^2 eps^2 / (n eps^2 + sigma^2); the
            // closed form printed for the unknown-mean case with a bare sigma
            // is a typo of this expression.
            posterior_var.push(s2 * e2 / denom);
        }
        Ok(Enrollment { class_id: String::new(), n, sample_mean, shrunk_mean, posterior_var, samples: None })
    }

    /// Like [`posterior`](Self::posterior) but keeps the raw samples, which
    /// the joint-Gaussian PLDA oracle needs.
    pub fn posterior_retaining(&self, samples: Vec<Vec<f64>>) -> Result<Enrollment> {
        let mut e = self.posterior(&samples)?;
        e.samples = Some(samples);
        Ok(e)
    }

    /// Per-dimension variance of the predictive `p_k(x)`.
    pub fn predictive_var(&self, enrollment: &Enrollment) -> Vec<f64> {
        enrollment.posterior_var.iter().map(|v| self.within_var + v).collect()
    }

    /// `log p_k(x) = log N(x; shrunk_mean, diag(within_var + posterior_var))`.
    pub fn predictive_log_density(&self, enrollment: &Enrollment, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), enrollment.dim())?;
        check_dim(self.dim(), x.len())?;
        let var = self.predictive_var(enrollment);
        Ok(diag_gaussian_log_density(x, Some(&enrollment.shrunk_mean), &var))
    }
}

/// Posterior of one class mean after enrollment.
#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub class_id: String,
    pub n: usize,
    pub sample_mean: Vec<f64>,
    pub shrunk_mean: Vec<f64>,
    pub posterior_var: Vec<f64>,
    samples: Option<Vec<Vec<f64>>>,
}

impl Enrollment {
    pub fn with_class_id(mut self, id: impl Into<String>) -> Self {
        self.class_id = id.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.shrunk_mean.len()
    }

    /// Raw enrollment samples, if they were retained.
    pub fn samples(&self) -> Option<&[Vec<f64>]> {
        self.samples.as_deref()
    }

    /// `n eps^2 / (n eps^2 + sigma^2)` per dimension, recovered from the
    /// posterior variance.
    pub fn shrinkage(&self, model: &CanonicalModel) -> Vec<f64> {
        self.posterior_var.iter().zip(model.between_var()).map(|(p, e)| 1.0 - p / e).collect()
    }

    /// `log p(mu | x_1..x_n)`.
    pub fn posterior_log_density(&self, mu: &[f64]) -> Result<f64> {
        check_dim(self.dim(), mu.len())?;
        Ok(diag_gaussian_log_density(mu, Some(&self.shrunk_mean), &self.posterior_var))
    }
}

/// Affine map `x -> A (x - b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTransform {
    matrix: Matrix,
    offset: Vec<f64>,
    log_abs_det: f64,
}

impl LinearTransform {
    pub fn new(matrix: Matrix, offset: Vec<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.rows(), found: matrix.cols() });
        }
        check_dim(matrix.rows(), offset.len())?;
        let log_abs_det = Lu::new(&matrix)?.log_abs_det();
        Ok(LinearTransform { matrix, offset, log_abs_det })
    }

    pub fn identity(dim: usize) -> Self {
        LinearTransform { matrix: Matrix::identity(dim), offset: vec![0.0; dim], log_abs_det: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// `log |det A|`. The log of the entropy (Jacobian) term of the inverse
    /// map is its negation, constant in `x`.
    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let centered: Vec<f64> = x.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        self.matrix.matvec(&centered)
    }

    /// The inverse map, `y -> A^{-1} y + b`, expressed as `A^{-1} (y - (-A b))`.
    pub fn inverse(&self) -> Result<LinearTransform> {
        let lu = Lu::new(&self.matrix)?;
        let inv = lu.inverse();
        let offset = self.matrix.matvec(&self.offset)?.into_iter().map(|v| -v).collect();
        Ok(LinearTransform { matrix: inv, offset, log_abs_det: -self.log_abs_det })
    }

    /// Converts a log density evaluated at `apply(x)` in the target space into
    /// the log density of `x` in the source space.
    pub fn pullback_log_density(&self, target_log_density: f64) -> f64 {
        target_log_density + self.log_abs_det
    }
}

/// Linear Gaussian model with arbitrary mean and full covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralModel {
    global_mean: Vec<f64>,
    between_cov: Matrix,
    within_cov: Matrix,
}

impl GeneralModel {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(global_mean: Vec<f64>, between_cov: Matrix, within_cov: Matrix) -> Result<Self> {
        let d = global_mean.len();
        if d == 0 {
            return Err(Error::InvalidModel("dimension must be at least 1".into()));
        }
        for (name, m) in [("between_cov", &between_cov), ("within_cov", &within_cov)] {
            check_dim(d, m.rows())?;
            check_dim(d, m.cols())?;
            let asym = m.max_asymmetry();
            if asym > SYMMETRY_TOLERANCE * m.max_abs().max(f64::MIN_POSITIVE) {
                return Err(Error::NotSymmetric { matrix: name.into(), max_asymmetry: asym });
            }
            let min_eig = jacobi_eigen(m)?.values.last().copied().unwrap_or(0.0);
            if !(min_eig > 0.0) {
                return Err(Error::NotPositiveDefinite { matrix: name.into(), min_eigenvalue: min_eig });
            }
        }
        Ok(GeneralModel { global_mean, between_cov, within_cov })
    }

    pub fn dim(&self) -> usize {
        self.global_mean.len()
    }

    pub fn global_mean(&self) -> &[f64] {
        &self.global_mean
    }

    pub fn between_cov(&self) -> &Matrix {
        &self.between_cov
    }

    pub fn within_cov(&self) -> &Matrix {
        &self.within_cov
    }

    /// The model followed by `t(x)` when `x` follows `self`.
    pub fn transformed(&self, t: &LinearTransform) -> Result<GeneralModel> {
        let a = t.matrix();
        let symmetrize = |m: Matrix| {
            let mt = m.transpose();
            let n = m.rows();
            let data = m.as_slice().iter().zip(mt.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect();
            Matrix::from_row_major(n, n, data)
        };
        GeneralModel::new(
            t.apply(&self.global_mean)?,
            symmetrize(a.congruence(&self.between_cov)?)?,
            symmetrize(a.congruence(&self.within_cov)?)?,
        )
    }
}

/// Full-dimensional LDA: whitens the within-class covariance and diagonalizes
/// the between-class covariance.
///
/// With `W = V diag(w) Vᵀ` and the whitened between-class covariance
/// `P B Pᵀ = U diag(e) Uᵀ` where `P = diag(w)^{-1/2} Vᵀ`, the returned transform
/// has matrix `Uᵀ P` and offset `global_mean`. The canonical model has
/// `between_var = e` (descending) and `within_var = 1`. Each row of the matrix
/// is sign-normalized so its largest-magnitude entry is positive.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn canonicalize(model: &GeneralModel) -> Result<(CanonicalModel, LinearTransform)> {
    let d = model.dim();
    let w = jacobi_eigen(model.within_cov())?;
    let mut whiten = Matrix::zeros(d, d);
    for (i, &lambda) in w.values.iter().enumerate() {
        if !(lambda > 0.0) {
            return Err(Error::NotPositiveDefinite { matrix: "within_cov".into(), min_eigenvalue: lambda });
        }
        let s = 1.0 / lambda.sqrt();
        for j in 0..d {
            whiten[(i, j)] = s * w.vectors[(j, i)];
        }
    }
    let b_white = whiten.congruence(model.between_cov())?;
    let b = jacobi_eigen(&b_white)?;
    let mut matrix = b.vectors.transpose().matmul(&whiten)?;
    for i in 0..d {
        let row = matrix.row(i);
        let pivot = row.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            for j in 0..d {
                matrix[(i, j)] = -matrix[(i, j)];
            }
        }
    }
    let canonical = CanonicalModel::new(b.values.clone(), 1.0)?;
    let transform = LinearTransform::new(matrix, model.global_mean().to_vec())?;
    Ok((canonical, transform))
}

/// Serialized model: a canonical model (`between_var`, `within_var`) or a
/// general model (`global_mean`, `between_cov`, `within_cov`, row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between_var: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub between_cov: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub within_cov: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Canonical(CanonicalModel),
    General(GeneralModel),
}

impl AnyModel {
    /// Canonical form plus the map from the model's space into it
    /// (`None` when the model is already canonical).
    pub fn to_canonical(&self) -> Result<(CanonicalModel, Option<LinearTransform>)> {
        match self {
            AnyModel::Canonical(m) => Ok((m.clone(), None)),
            AnyModel::General(g) => canonicalize(g).map(|(m, t)| (m, Some(t))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Canonical(m) => m.dim(),
            AnyModel::General(g) => g.dim(),
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, ModelLoadError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Ok(doc.try_into()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument::from(self)).expect("model serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelLoadError {
    #[error("model parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] Error),
}

impl TryFrom<ModelDocument> for AnyModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let d = doc.dim;
        let canonical = doc.between_var.is_some() || doc.within_var.is_some();
        let general = doc.global_mean.is_some() || doc.between_cov.is_some() || doc.within_cov.is_some();
        match (canonical, general) {
            (true, false) => {
                let between = doc.between_var.ok_or_else(|| missing("between_var"))?;
                let within = doc.within_var.ok_or_else(|| missing("within_var"))?;
                check_dim(d, between.len())?;
                CanonicalModel::new(between, within).map(AnyModel::Canonical)
            }
            (false, true) => {
                let mean = doc.global_mean.unwrap_or_else(|| vec![0.0; d]);
                check_dim(d, mean.len())?;
                let between = doc.between_cov.ok_or_else(|| missing("between_cov"))?;
                let within = doc.within_cov.ok_or_else(|| missing("within_cov"))?;
                GeneralModel::new(mean, Matrix::from_row_major(d, d, between)?, Matrix::from_row_major(d, d, within)?)
                    .map(AnyModel::General)
            }
            (true, true) => Err(Error::InvalidModel(
                "canonical fields (between_var, within_var) and general fields \
                 (global_mean, between_cov, within_cov) are mutually exclusive"
                    .into(),
            )),
            (false, false) => Err(Error::InvalidModel("no model parameters given".into())),
        }
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidModel(format!("missing field `{field}`"))
}

impl From<&AnyModel> for ModelDocument {
    fn from(m: &AnyModel) -> Self {
        match m {
            AnyModel::Canonical(c) => ModelDocument {
                dim: c.dim(),
                between_var: Some(c.between_var().to_vec()),
                within_var: Some(c.within_var()),
                global_mean: None,
                between_cov: None,
                within_cov: None,
            },
            AnyModel::General(g) => ModelDocument {
                dim: g.dim(),
                between_var: None,
                within_var: None,
                global_mean: Some(g.global_mean().to_vec()),
                between_cov: Some(g.between_cov().as_slice().to_vec()),
                within_cov: Some(g.within_cov().as_slice().to_vec()),
            },
        }
    }
}
