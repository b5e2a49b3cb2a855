//! Trial scores: normalized likelihood (known and unknown class means), the
//! verification posterior, cosine and Euclidean scores, and an independent
//! PLDA likelihood-ratio oracle.
//!
//! Every score is oriented so that larger means more target-like.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{diag_gaussian_log_density, CanonicalModel, Enrollment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScoreType {
    NlKnown,
    NlUnknown,
    Cosine,
    Euclidean,
    EuclideanAmended,
    PldaLr,
}

impl ScoreType {
    pub const ALL: [ScoreType; 6] = [
        ScoreType::NlKnown,
        ScoreType::NlUnknown,
        ScoreType::Cosine,
        ScoreType::Euclidean,
        ScoreType::EuclideanAmended,
        ScoreType::PldaLr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreType::NlKnown => "NL_KNOWN",
            ScoreType::NlUnknown => "NL_UNKNOWN",
            ScoreType::Cosine => "COSINE",
            ScoreType::Euclidean => "EUCLIDEAN",
            ScoreType::EuclideanAmended => "EUCLIDEAN_AMENDED",
            ScoreType::PldaLr => "PLDA_LR",
        }
    }
}

impl fmt::Display for ScoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s) || t.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown score type `{s}`")))
    }
}

/// One scored trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub trial_id: String,
    pub score_type: ScoreType,
    /// Log domain for NL and PLDA scores, raw for cosine and Euclidean.
    pub value: f64,
    pub is_target: bool,
}

/// `log N(x; mu_k, sigma^2 I) - log p(x)`, the exact log-ratio.
pub fn nl_known(model: &CanonicalModel, mu_k: &[f64], x: &[f64]) -> Result<f64> {
    Ok(model.conditional_log_density(mu_k, x)? - model.marginal_log_density(x)?)
}

/// `log p_k(x) - log p(x)` with `p_k` the predictive density of the enrolled class.
pub fn nl_unknown(model: &CanonicalModel, enrollment: &Enrollment, x: &[f64]) -> Result<f64> {
    Ok(model.predictive_log_density(enrollment, x)? - model.marginal_log_density(x)?)
}

/// Largest joint dimension `(n + 1) d` the PLDA oracle will build.
pub const PLDA_ORACLE_MAX_JOINT_DIM: usize = 64;

/// Log density of a set of vectors generated by one unknown class,
/// `log p(v_1, .., v_m)`, by direct evaluation of the dense `(m d)`-dimensional
/// joint Gaussian: covariance `eps^2` between any two vectors on the same
/// dimension, plus `sigma^2` on the diagonal.
pub fn same_class_joint_log_density(model: &CanonicalModel, vectors: &[&[f64]]) -> Result<f64> {
    let d = model.dim();
    let m = vectors.len();
    if m == 0 {
        return Err(Error::Empty("joint density needs at least one vector"));
    }
    for v in vectors {
        check_dim(d, v.len())?;
    }
    let size = m * d;
    if size > PLDA_ORACLE_MAX_JOINT_DIM {
        return Err(Error::OracleEnvelope { size, limit: PLDA_ORACLE_MAX_JOINT_DIM });
    }
    let mut cov = Matrix::zeros(size, size);
    let mut stacked = Vec::with_capacity(size);
    for (a, va) in vectors.iter().enumerate() {
        stacked.extend_from_slice(va);
        for b in 0..m {
            for i in 0..d {
                let mut c = model.between_var()[i];
                if a == b {
                    c += model.within_var();
                }
                cov[(a * d + i, b * d + i)] = c;
            }
        }
    }
    let chol = Cholesky::new(&cov)?;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(-0.5 * (size as f64 * ln_2pi + chol.log_det() + chol.quadratic_form(&stacked)))
}

/// PLDA log-likelihood ratio
/// `log p(x, x_1..x_n) - log p(x) - log p(x_1..x_n)`,
/// evaluated with dense joint Gaussians only. It shares no code with the
/// posterior/predictive path and serves as an oracle for [`nl_unknown`].
pub fn plda_lr_oracle(model: &CanonicalModel, enroll_samples: &[Vec<f64>], x: &[f64]) -> Result<f64> {
    if enroll_samples.is_empty() {
        return Err(Error::Empty("PLDA LR needs at least one enrollment sample"));
    }
    check_dim(model.dim(), x.len())?;
    let enroll: Vec<&[f64]> = enroll_samples.iter().map(Vec::as_slice).collect();
    let mut all = Vec::with_capacity(enroll.len() + 1);
    all.push(x);
    all.extend_from_slice(&enroll);
    Ok(same_class_joint_log_density(model, &all)?
        - same_class_joint_log_density(model, &[x])?
        - same_class_joint_log_density(model, &enroll)?)
}

/// `p(H0 | x) = NL / (1 + NL)` from `log NL`, without overflow.
pub fn nl_to_sv_posterior(log_nl: f64) -> f64 {
    if log_nl >= 0.0 {
        1.0 / (1.0 + (-log_nl).exp())
    } else {
        let e = log_nl.exp();
        e / (1.0 + e)
    }
}

/// `log NL` threshold equivalent to a posterior threshold `p`.
pub fn posterior_threshold_to_log_nl(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

pub const DEFAULT_SV_THRESHOLD: f64 = 0.5;

/// Accept iff `posterior >= threshold`.
pub fn decide_sv(posterior: f64, threshold: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&posterior) {
        return Err(Error::InvalidArgument(format!("posterior {posterior} outside [0, 1]")));
    }
    Ok(posterior >= threshold)
}

pub fn cosine_score(x: &[f64], mu: &[f64]) -> Result<f64> {
    check_dim(x.len(), mu.len())?;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(mu) {
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 {
        return Err(Error::ZeroNorm("test vector"));
    }
    if yy == 0.0 {
        return Err(Error::ZeroNorm("class vector"));
    }
    Ok((xy / (xx.sqrt() * yy.sqrt())).clamp(-1.0, 1.0))
}

/// `||x - y||^2`, accumulated in four interleaved lanes so the loop
/// vectorizes. Every Euclidean-type score goes through this function, which
/// keeps NL_KNOWN and EUCLIDEAN rankings bitwise consistent.
#[inline(always)]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            let d = a[l] - b[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += (a - b) * (a - b);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `sum_i w_i (x_i - y_i)^2` with the same lane layout as [`squared_distance`].
fn weighted_squared_distance(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let n4 = x.len() / 4 * 4;
    for i in (0..n4).step_by(4) {
        for l in 0..4 {
            let d = x[i + l] - y[i + l];
            acc[l] += d * d * w[i + l];
        }
    }
    let mut tail = 0.0;
    for i in n4..x.len() {
        let d = x[i] - y[i];
        tail += d * d * w[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline(always)]
fn dot_lanes(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `-||x - mu||^2`.
pub fn euclidean_score(x: &[f64], mu: &[f64]) -> Result<f64> {
    check_dim(x.len(), mu.len())?;
    Ok(-squared_distance(x, mu))
}

/// `-||x - shrunk_mean||^2`.
pub fn euclidean_amended_score(model: &CanonicalModel, enrollment: &Enrollment, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), enrollment.dim())?;
    check_dim(model.dim(), x.len())?;
    Ok(-squared_distance(x, &enrollment.shrunk_mean))
}

/// Scores one test vector against one enrollment.
///
/// Known-mean scores (`NL_KNOWN`, `COSINE`, `EUCLIDEAN`) use the enrollment's
/// sample mean as the class mean. `PLDA_LR` needs retained enrollment samples.
pub fn score_one(model: &CanonicalModel, enrollment: &Enrollment, x: &[f64], score_type: ScoreType) -> Result<f64> {
    match score_type {
        ScoreType::NlKnown => nl_known(model, &enrollment.sample_mean, x),
        ScoreType::NlUnknown => nl_unknown(model, enrollment, x),
        ScoreType::Cosine => cosine_score(x, &enrollment.sample_mean),
        ScoreType::Euclidean => euclidean_score(x, &enrollment.sample_mean),
        ScoreType::EuclideanAmended => euclidean_amended_score(model, enrollment, x),
        ScoreType::PldaLr => {
            let samples = enrollment
                .samples()
                .ok_or_else(|| Error::InvalidArgument("PLDA_LR needs retained enrollment samples".into()))?;
            plda_lr_oracle(model, samples, x)
        }
    }
}

/// Dense (test × class) score matrix for one score type.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    score_type: ScoreType,
    n_tests: usize,
    n_classes: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_values(score_type: ScoreType, n_tests: usize, n_classes: usize, values: Vec<f64>) -> Result<Self> {
        check_dim(n_tests * n_classes, values.len())?;
        Ok(ScoreMatrix { score_type, n_tests, n_classes, values })
    }

    pub fn score_type(&self) -> ScoreType {
        self.score_type
    }

    pub fn n_tests(&self) -> usize {
        self.n_tests
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, test: usize, class: usize) -> f64 {
        self.values[test * self.n_classes + class]
    }

    pub fn row(&self, test: usize) -> &[f64] {
        &self.values[test * self.n_classes..(test + 1) * self.n_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_classes.max(1))
    }

    /// Flattened records with `trial_id = "<test_id>:<class_id>"`.
    /// `true_class[t]`, when known, marks target trials.
    pub fn records<'a>(
        &'a self,
        test_ids: &'a [String],
        class_ids: &'a [String],
        true_class: &'a [Option<usize>],
    ) -> impl Iterator<Item = ScoreRecord> + 'a {
        (0..self.n_tests).flat_map(move |t| {
            (0..self.n_classes).map(move |k| ScoreRecord {
                trial_id: format!("{}:{}", test_ids[t], class_ids[k]),
                score_type: self.score_type,
                value: self.get(t, k),
                is_target: true_class[t] == Some(k),
            })
        })
    }
}

/// Index of the largest value; ties go to the lowest index.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn argmax(values: &[f64]) -> Option<usize> {
    let (&first, rest) = values.split_first()?;
    let (mut best_i, mut best) = (0, first);
    for (i, &v) in rest.iter().enumerate() {
        if !(v <= best) {
            best_i = i + 1;
            best = v;
        }
    }
    Some(best_i)
}

/// Scores every test vector against every enrollment.
///
/// Uses per-class and per-test precomputation; each cell agrees with
/// [`score_one`] to rounding.
pub fn score_matrix(
    model: &CanonicalModel,
    enrollments: &[Enrollment],
    tests: &[Vec<f64>],
    score_type: ScoreType,
) -> Result<ScoreMatrix> {
    if enrollments.is_empty() {
        return Err(Error::Empty("score matrix needs at least one enrollment"));
    }
    let d = model.dim();
    for e in enrollments {
        check_dim(d, e.dim())?;
    }
    for x in tests {
        check_dim(d, x.len())?;
    }
    let k = enrollments.len();
    let mut values = Vec::with_capacity(tests.len() * k);

    match score_type {
        ScoreType::NlKnown => {
            let means: Vec<&[f64]> = enrollments.iter().map(|e| e.sample_mean.as_slice()).collect();
            values = nl_known_from_distances(model, tests, distance_matrix(tests, &means));
        }
        ScoreType::NlUnknown => {
            let classes: Vec<(Vec<f64>, f64)> = enrollments
                .iter()
                .map(|e| {
                    let var = model.predictive_var(e);
                    let log_norm: f64 = var.iter().map(|v| (2.0 * std::f64::consts::PI).ln() + v.ln()).sum();
                    (var.iter().map(|v| 1.0 / v).collect(), -0.5 * log_norm)
                })
                .collect();
            let marginal_var = model.marginal_var();
            for x in tests {
                let marginal = diag_gaussian_log_density(x, None, &marginal_var);
                for (e, (inv_var, norm)) in enrollments.iter().zip(&classes) {
                    let quad = weighted_squared_distance(x, &e.shrunk_mean, inv_var);
                    values.push(norm - 0.5 * quad - marginal);
                }
            }
        }
        ScoreType::Cosine => {
            let norms: Vec<f64> =
                enrollments.iter().map(|e| dot_lanes(&e.sample_mean, &e.sample_mean).sqrt()).collect();
            if norms.contains(&0.0) {
                return Err(Error::ZeroNorm("class vector"));
            }
            let means: Vec<&[f64]> = enrollments.iter().map(|e| e.sample_mean.as_slice()).collect();
            values = dot_matrix(tests, &means);
            for (x, row) in tests.iter().zip(values.chunks_mut(k)) {
                let xn = dot_lanes(x, x).sqrt();
                if xn == 0.0 {
                    return Err(Error::ZeroNorm("test vector"));
                }
                for (v, n) in row.iter_mut().zip(&norms) {
                    *v = (*v / (xn * n)).clamp(-1.0, 1.0);
                }
            }
        }
        ScoreType::Euclidean => {
            let means: Vec<&[f64]> = enrollments.iter().map(|e| e.sample_mean.as_slice()).collect();
            values = negated(distance_matrix(tests, &means));
        }
        ScoreType::EuclideanAmended => {
            let means: Vec<&[f64]> = enrollments.iter().map(|e| e.shrunk_mean.as_slice()).collect();
            values = negated(distance_matrix(tests, &means));
        }
        ScoreType::PldaLr => {
            for x in tests {
                for e in enrollments {
                    values.push(score_one(model, e, x, ScoreType::PldaLr)?);
                }
            }
        }
    }
    ScoreMatrix::from_values(score_type, tests.len(), k, values)
}

/// Score matrices for several score types over the same data. `NL_KNOWN`
/// and `EUCLIDEAN` share one pass of squared distances; every matrix equals
/// the corresponding [`score_matrix`] output bitwise.
pub fn score_matrices(
    model: &CanonicalModel,
    enrollments: &[Enrollment],
    tests: &[Vec<f64>],
    score_types: &[ScoreType],
) -> Result<Vec<ScoreMatrix>> {
    let shared = score_types.contains(&ScoreType::NlKnown) && score_types.contains(&ScoreType::Euclidean);
    if !shared {
        return score_types.iter().map(|&t| score_matrix(model, enrollments, tests, t)).collect();
    }
    // validates shapes and yields the reference Euclidean matrix once
    let eu = score_matrix(model, enrollments, tests, ScoreType::Euclidean)?;
    let distances = negated(eu.values.clone());
    let (n, k) = (eu.n_tests, eu.n_classes);
    let mut eu = Some(eu);
    let mut distances = Some(distances);
    score_types
        .iter()
        .map(|&t| match t {
            ScoreType::Euclidean => Ok(eu.take().expect("distinct score types")),
            ScoreType::NlKnown => {
                let d2 = distances.take().expect("distinct score types");
                ScoreMatrix::from_values(t, n, k, nl_known_from_distances(model, tests, d2))
            }
            other => score_matrix(model, enrollments, tests, other),
        })
        .collect()
}

fn negated(mut v: Vec<f64>) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x = -*x);
    v
}

fn nl_known_from_distances(model: &CanonicalModel, tests: &[Vec<f64>], mut d2: Vec<f64>) -> Vec<f64> {
    let d = model.dim();
    let s2 = model.within_var();
    let cond_norm = -0.5 * d as f64 * ((2.0 * std::f64::consts::PI).ln() + s2.ln());
    let marginal_var = model.marginal_var();
    let k = if tests.is_empty() { 0 } else { d2.len() / tests.len() };
    for (x, row) in tests.iter().zip(d2.chunks_mut(k.max(1))) {
        let marginal = diag_gaussian_log_density(x, None, &marginal_var);
        row.iter_mut().for_each(|v| *v = cond_norm - 0.5 * *v / s2 - marginal);
    }
    d2
}

/// Row-major `||x_t - y_k||^2`, four classes at a time; each entry equals
/// [`squared_distance`] bitwise. Uses AVX2 when available, which changes
/// only the instruction width, not the arithmetic.
fn distance_matrix(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { distance_matrix_avx2(tests, classes) };
    }
    distance_matrix_generic(tests, classes)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn distance_matrix_avx2(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    distance_matrix_generic(tests, classes)
}

#[inline(always)]
fn distance_matrix_generic(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    pair_matrix(tests, classes, |a, b| (a - b) * (a - b), squared_distance)
}

/// Row-major `x_t · y_k`; entries equal `dot_lanes` bitwise.
fn dot_matrix(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { dot_matrix_avx2(tests, classes) };
    }
    dot_matrix_generic(tests, classes)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_matrix_avx2(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    dot_matrix_generic(tests, classes)
}

#[inline(always)]
fn dot_matrix_generic(tests: &[Vec<f64>], classes: &[&[f64]]) -> Vec<f64> {
    pair_matrix(tests, classes, |a, b| a * b, dot_lanes)
}

/// Row-major `sum_i f(x_i, y_i)` over all (test, class) pairs, four classes
/// at a time; entries equal `single(x, y)` bitwise.
#[inline(always)]
fn pair_matrix(
    tests: &[Vec<f64>],
    classes: &[&[f64]],
    f: impl Fn(f64, f64) -> f64 + Copy,
    single: fn(&[f64], &[f64]) -> f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(tests.len() * classes.len());
    for x in tests {
        let mut blocks = classes.chunks_exact(4);
        for b in &mut blocks {
            out.extend_from_slice(&lanes4(x, [b[0], b[1], b[2], b[3]], f));
        }
        for y in blocks.remainder() {
            out.push(single(x, y));
        }
    }
    out
}

/// `sum_i f(x_i, y_i)` for four `y` at once, with the lane layout of
/// [`squared_distance`].
#[inline(always)]
fn lanes4(x: &[f64], ys: [&[f64]; 4], f: impl Fn(f64, f64) -> f64) -> [f64; 4] {
    let n4 = x.len() / 4 * 4;
    let ys = ys.map(|y| &y[..x.len()]);
    let mut acc = [[0.0f64; 4]; 4];
    let mut i = 0;
    while i < n4 {
        let xa: &[f64; 4] = x[i..i + 4].try_into().unwrap();
        for c in 0..4 {
            let y: &[f64; 4] = ys[c][i..i + 4].try_into().unwrap();
            for l in 0..4 {
                acc[c][l] += f(xa[l], y[l]);
            }
        }
        i += 4;
    }
    let mut out = [0.0; 4];
    for (c, y) in ys.iter().enumerate() {
        let mut tail = 0.0;
        for j in n4..x.len() {
            tail += f(x[j], y[j]);
        }
        out[c] = (acc[c][0] + acc[c][1]) + (acc[c][2] + acc[c][3]) + tail;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn gauss_vec(rng: &mut CounterRng, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| scale * rng.next_gaussian()).collect()
    }

    #[test]
    fn blocked_distances_match_scalar_bitwise() {
        let mut rng = CounterRng::new(77);
        for d in [1, 3, 4, 7, 80] {
            let classes: Vec<Vec<f64>> = (0..11).map(|_| gauss_vec(&mut rng, d, 1.0)).collect();
            let refs: Vec<&[f64]> = classes.iter().map(Vec::as_slice).collect();
            let tests: Vec<Vec<f64>> = (0..5).map(|_| gauss_vec(&mut rng, d, 2.0)).collect();
            let m = distance_matrix(&tests, &refs);
            let dots = dot_matrix(&tests, &refs);
            for (t, x) in tests.iter().enumerate() {
                for (k, y) in classes.iter().enumerate() {
                    assert_eq!(m[t * 11 + k].to_bits(), squared_distance(x, y).to_bits());
                    assert_eq!(dots[t * 11 + k].to_bits(), dot_lanes(x, y).to_bits());
                }
            }
        }
    }

    #[test]
    fn shared_matrices_equal_individual_ones() {
        let mut rng = CounterRng::new(78);
        let model = CanonicalModel::isotropic(6, 1.0, 0.5).unwrap();
        let enr: Vec<Enrollment> = (0..9)
            .map(|_| model.posterior(&[gauss_vec(&mut rng, 6, 1.0), gauss_vec(&mut rng, 6, 1.0)]).unwrap())
            .collect();
        let tests: Vec<Vec<f64>> = (0..13).map(|_| gauss_vec(&mut rng, 6, 1.5)).collect();
        let types = [ScoreType::Cosine, ScoreType::Euclidean, ScoreType::NlKnown];
        let shared = score_matrices(&model, &enr, &tests, &types).unwrap();
        for (m, &t) in shared.iter().zip(&types) {
            assert_eq!(m, &score_matrix(&model, &enr, &tests, t).unwrap());
        }
    }

    #[test]
    fn nl_known_at_origin() {
        let m = CanonicalModel::new(vec![1.0], 1.0).unwrap();
        let v = nl_known(&m, &[0.0], &[0.0]).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nl_known_negative_far_from_mass() {
        let d = 6;
        let m = CanonicalModel::isotropic(d, 1.0, 1.0).unwrap();
        let x = vec![11.0; d];
        assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() > 10.0 * (d as f64).sqrt());
        assert!(nl_known(&m, &vec![0.0; d], &x).unwrap() < 0.0);
    }

    #[test]
    fn nl_known_equals_density_difference() {
        let mut rng = CounterRng::new(17);
        for _ in 0..1000 {
            let d = 1 + rng.next_below(6) as usize;
            let between: Vec<f64> = (0..d).map(|_| 0.2 + 3.0 * rng.next_f64()).collect();
            let m = CanonicalModel::new(between, 0.1 + 2.0 * rng.next_f64()).unwrap();
            let mu = gauss_vec(&mut rng, d, 1.0);
            let x = gauss_vec(&mut rng, d, 2.0);
            let cond: f64 = (0..d)
                .map(|i| {
                    let v = m.within_var();
                    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x[i] - mu[i]).powi(2) / v)
                })
                .sum();
            let marg: f64 = (0..d)
                .map(|i| {
                    let v = m.between_var()[i] + m.within_var();
                    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + x[i].powi(2) / v)
                })
                .sum();
            let got = nl_known(&m, &mu, &x).unwrap();
            assert!((got - (cond - marg)).abs() < 1e-10);
        }
    }

    #[test]
    fn nl_unknown_without_enrollment_is_zero() {
        let m = CanonicalModel::new(vec![0.3, 2.0, 1.1], 0.8).unwrap();
        let e = m.posterior(&[]).unwrap();
        assert_eq!(nl_unknown(&m, &e, &[1.0, -3.0, 0.25]).unwrap(), 0.0);
    }

    #[test]
    fn nl_unknown_large_n_converges_to_known() {
        let m = CanonicalModel::isotropic(4, 1.0, 1.0).unwrap();
        let mu = vec![0.5, -1.0, 1.5, 0.0];
        let mut rng = CounterRng::new(3);
        let samples: Vec<Vec<f64>> =
            (0..10_000).map(|_| mu.iter().map(|m| m + rng.next_gaussian()).collect()).collect();
        let e = m.posterior(&samples).unwrap();
        let x = vec![0.2, -0.7, 1.0, 0.4];
        let known = nl_known(&m, &mu, &x).unwrap();
        assert!((nl_unknown(&m, &e, &x).unwrap() - known).abs() < 1e-2);
    }

    #[test]
    fn plda_oracle_hand_expanded() {
        // Joint covariance [[2,1],[1,2]] gives ln(2/sqrt(3)) + x^2/6 at x = x1.
        let m = CanonicalModel::new(vec![1.0], 1.0).unwrap();
        for x in [0.0, 1.0, -2.5] {
            let got = plda_lr_oracle(&m, &[vec![x]], &[x]).unwrap();
            let expect = (2.0 / 3f64.sqrt()).ln() + x * x / 6.0;
            assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
        }
    }

    #[test]
    fn plda_oracle_without_class_information() {
        let m = CanonicalModel::new(vec![1e-10, 1e-10], 1.0).unwrap();
        let v = plda_lr_oracle(&m, &[vec![1.0, 2.0], vec![-3.0, 0.5]], &[4.0, -1.0]).unwrap();
        assert!(v.abs() < 1e-6);
    }

    #[test]
    fn plda_oracle_errors() {
        let m = CanonicalModel::isotropic(2, 1.0, 1.0).unwrap();
        assert!(plda_lr_oracle(&m, &[], &[0.0, 0.0]).is_err());
        assert!(plda_lr_oracle(&m, &[vec![0.0]], &[0.0, 0.0]).is_err());
        let big = CanonicalModel::isotropic(40, 1.0, 1.0).unwrap();
        assert!(matches!(
            plda_lr_oracle(&big, &[vec![0.0; 40]], &[0.0; 40]),
            Err(Error::OracleEnvelope { size: 80, .. })
        ));
    }

    #[test]
    fn nl_unknown_matches_plda_spot() {
        let m = CanonicalModel::new(vec![0.7, 2.5, 1.0], 0.4).unwrap();
        let samples = vec![vec![0.1, 1.0, -0.3], vec![0.4, 1.4, 0.2]];
        let e = m.posterior(&samples).unwrap();
        let x = [0.5, 0.9, -1.0];
        let a = nl_unknown(&m, &e, &x).unwrap();
        let b = plda_lr_oracle(&m, &samples, &x).unwrap();
        assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn sv_posterior_examples() {
        assert_eq!(nl_to_sv_posterior(0.0), 0.5);
        assert!((nl_to_sv_posterior(50.0) - 1.0).abs() < 1e-15);
        assert_eq!(nl_to_sv_posterior(f64::INFINITY), 1.0);
        assert_eq!(nl_to_sv_posterior(f64::NEG_INFINITY), 0.0);
        assert!((nl_to_sv_posterior(3f64.ln()) - 0.75).abs() < 1e-15);
        let hi = nl_to_sv_posterior(700.0);
        let lo = nl_to_sv_posterior(-700.0);
        assert!(hi.is_finite() && lo.is_finite() && lo > 0.0);
    }

    #[test]
    fn decide_sv_boundary() {
        assert!(decide_sv(0.6, 0.5).unwrap());
        assert!(decide_sv(0.5, DEFAULT_SV_THRESHOLD).unwrap());
        assert!(!decide_sv(0.4999, 0.5).unwrap());
        assert!(decide_sv(0.5, 1.5).is_err());
        assert!(decide_sv(-0.1, 0.5).is_err());
    }

    #[test]
    fn cosine_examples() {
        let x = [1.0, 2.0, -0.5];
        assert!((cosine_score(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine_score(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm("test vector")));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_score(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), -25.0);
        let classes = [vec![5.0, 5.0], vec![0.5, 0.4], vec![-1.0, 0.0]];
        let x = [0.0, 0.0];
        let scores: Vec<f64> = classes.iter().map(|c| euclidean_score(&x, c).unwrap()).collect();
        let raw: Vec<f64> = classes.iter().map(|c| squared_distance(&x, c)).collect();
        let argmin = raw.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        assert_eq!(argmax(&scores), Some(argmin));
    }

    #[test]
    fn amended_euclidean_examples() {
        let m = CanonicalModel::isotropic(2, 1.0, 1.0).unwrap();
        let e = m.posterior(&[vec![2.0, -2.0]]).unwrap();
        let x = [0.3, 0.1];
        assert_eq!(euclidean_amended_score(&m, &e, &x).unwrap(), euclidean_score(&x, &[1.0, -1.0]).unwrap());
        let big = m.posterior_from_mean(100_000_000, vec![2.0, -2.0]).unwrap();
        let a = euclidean_amended_score(&m, &big, &x).unwrap();
        let b = euclidean_score(&x, &[2.0, -2.0]).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn argmax_ties_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax(&[0.0; 4]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn score_type_names_parse() {
        for t in ScoreType::ALL {
            assert_eq!(t.name().parse::<ScoreType>().unwrap(), t);
        }
        assert_eq!("nl-unknown".parse::<ScoreType>().unwrap(), ScoreType::NlUnknown);
        assert!("bogus".parse::<ScoreType>().is_err());
        assert_eq!(serde_json::to_string(&ScoreType::EuclideanAmended).unwrap(), "\"EUCLIDEAN_AMENDED\"");
    }

    #[test]
    fn matrix_single_cell_matches_scalar() {
        let m = CanonicalModel::isotropic(3, 1.0, 0.5).unwrap();
        let e = m.posterior_retaining(vec![vec![1.0, 0.0, -1.0]]).unwrap();
        let x = vec![0.5, 0.5, 0.5];
        for t in ScoreType::ALL {
            let sm = score_matrix(&m, std::slice::from_ref(&e), std::slice::from_ref(&x), t).unwrap();
            assert_eq!((sm.n_tests(), sm.n_classes()), (1, 1));
            let scalar = score_one(&m, &e, &x, t).unwrap();
            assert!((sm.get(0, 0) - scalar).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn matrix_identical_enrollments_give_equal_columns() {
        let m = CanonicalModel::isotropic(4, 1.0, 1.0).unwrap();
        let e = m.posterior(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let enrollments = vec![e; 5];
        let mut rng = CounterRng::new(8);
        let tests: Vec<Vec<f64>> = (0..7).map(|_| gauss_vec(&mut rng, 4, 1.0)).collect();
        for t in [ScoreType::NlKnown, ScoreType::NlUnknown, ScoreType::Cosine, ScoreType::Euclidean] {
            let sm = score_matrix(&m, &enrollments, &tests, t).unwrap();
            for row in sm.rows() {
                assert!(row.iter().all(|v| (v - row[0]).abs() <= 1e-12));
            }
        }
    }

    #[test]
    fn matrix_rejects_empty_enrollments_and_missing_samples() {
        let m = CanonicalModel::isotropic(2, 1.0, 1.0).unwrap();
        assert!(score_matrix(&m, &[], &[vec![0.0, 0.0]], ScoreType::Cosine).is_err());
        let e = m.posterior(&[vec![1.0, 1.0]]).unwrap();
        assert!(score_matrix(&m, &[e], &[vec![0.0, 1.0]], ScoreType::PldaLr).is_err());
    }

    #[test]
    fn records_carry_target_flags() {
        let sm = ScoreMatrix::from_values(ScoreType::Cosine, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let tests = vec!["t0".to_string(), "t1".to_string()];
        let classes = vec!["a".to_string(), "b".to_string()];
        let truth = vec![Some(1), None];
        let recs: Vec<_> = sm.records(&tests, &classes, &truth).collect();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[1].trial_id, "t0:b");
        assert!(recs[1].is_target);
        assert!(recs.iter().filter(|r| r.is_target).count() == 1);
    }
}
