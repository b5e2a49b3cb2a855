//! Monte-Carlo protocol: sample classes from the two-level model, enroll,
//! score held-out test vectors with every configured score type, and report
//! EER and IDR per (dimension, sigma, round) cell.
//!
//! Each cell owns its random streams, keyed by
//! `derive_key([seed, dim, sigma bits, round, purpose])`, so results do not
//! depend on the order in which cells are visited or on how many run in
//! parallel. Classes are resampled in every round.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    build_trials, compute_eer, compute_idr, sort_reports, MetricsReport, TrialPolicy, EER_CONVENTION,
};
use crate::model::{CanonicalModel, Enrollment};
use crate::rng::{derive_key, CounterRng, PRNG_ID};
use crate::scoring::{score_matrices, ScoreMatrix, ScoreType, PLDA_ORACLE_MAX_JOINT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentMode {
    KnownMean,
    UnknownMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label written to the `experiment` column.
    pub name: String,
    pub mode: ExperimentMode,
    pub n_classes: usize,
    pub n_enroll: usize,
    pub n_test_per_class: usize,
    pub rounds: usize,
    pub dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub epsilon: f64,
    pub score_types: Vec<ScoreType>,
    pub seed: u64,
    #[serde(default)]
    pub trial_policy: TrialPolicy,
    /// Score known-mean experiments against the true class means instead of
    /// the enrollment average.
    #[serde(default)]
    pub use_true_means: bool,
}

/// A config field that failed validation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if self.name.is_empty() || self.name.contains([',', '\n', '\r']) {
            return Err(invalid("name", "must be nonempty and contain no commas or newlines"));
        }
        if self.n_classes < 2 {
            return Err(invalid("n_classes", format!("must be at least 2, got {}", self.n_classes)));
        }
        for (field, v) in
            [("n_enroll", self.n_enroll), ("n_test_per_class", self.n_test_per_class), ("rounds", self.rounds)]
        {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.dims.is_empty() {
            return Err(invalid("dims", "must list at least one dimension"));
        }
        if let Some(i) = self.dims.iter().position(|&d| d == 0) {
            return Err(invalid(format!("dims[{i}]"), "must be positive"));
        }
        if self.sigmas.is_empty() {
            return Err(invalid("sigmas", "must list at least one value"));
        }
        if let Some((i, s)) = self.sigmas.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
            return Err(invalid(format!("sigmas[{i}]"), format!("must be > 0, got {s}")));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        for (name, values) in [("dims", dup_free(&self.dims)), ("sigmas", dup_free_f(&self.sigmas))] {
            if !values {
                return Err(invalid(name, "contains duplicates"));
            }
        }
        if self.score_types.is_empty() {
            return Err(invalid("score_types", "must list at least one score type"));
        }
        if !dup_free(&self.score_types) {
            return Err(invalid("score_types", "contains duplicates"));
        }
        if self.score_types.contains(&ScoreType::PldaLr) {
            let max_dim = self.dims.iter().copied().max().unwrap_or(0);
            let size = (self.n_enroll + 1) * max_dim;
            if size > PLDA_ORACLE_MAX_JOINT_DIM {
                return Err(invalid(
                    "score_types",
                    format!(
                        "PLDA_LR builds a {size}-dimensional joint covariance; \
                         (n_enroll + 1) * dim must be at most {PLDA_ORACLE_MAX_JOINT_DIM}"
                    ),
                ));
            }
        }
        for (&s, &e) in self.sigmas.iter().zip(std::iter::repeat(&self.epsilon)) {
            if s * s < crate::model::MIN_VARIANCE || e * e < crate::model::MIN_VARIANCE {
                return Err(invalid("sigmas", "variances below 1e-12 are not supported"));
            }
        }
        if let TrialPolicy::Sampled { per_test, .. } = self.trial_policy {
            if per_test == 0 || per_test > self.n_classes - 1 {
                return Err(invalid(
                    "trial_policy.per_test",
                    format!("must be in 1..={}, got {per_test}", self.n_classes - 1),
                ));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn dup_free<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().all(|(i, a)| !v[..i].contains(a))
}

fn dup_free_f(v: &[f64]) -> bool {
    v.iter().enumerate().all(|(i, a)| !v[..i].iter().any(|b| b.to_bits() == a.to_bits()))
}

pub const PRESET_NAMES: [&str; 4] = ["paper-known", "paper-unknown", "desk-known", "desk-unknown"];

const PRESET_SEED: u64 = 20_201_016;

const KNOWN_TYPES: [ScoreType; 3] = [ScoreType::NlKnown, ScoreType::Cosine, ScoreType::Euclidean];
const UNKNOWN_TYPES: [ScoreType; 4] =
    [ScoreType::NlUnknown, ScoreType::Cosine, ScoreType::Euclidean, ScoreType::EuclideanAmended];

/// Named experiment configurations. The `paper-*` presets follow the full
/// protocol (600 classes; 500 enrollment / 30 test samples per class with
/// known means; 1 / 3 with unknown means over 500 rounds); the `desk-*`
/// presets scale it down to 200 classes, 50 rounds and a coarser grid.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let paper_dims = vec![10, 20, 40, 60, 80];
    let paper_sigmas = vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];
    let desk_dims = vec![10, 80];
    let desk_sigmas = vec![0.1, 0.5, 1.0, 2.0, 5.0];
    let base =
        |name: &str, mode, n_classes, n_enroll, n_test, rounds, dims, sigmas, types: &[ScoreType]| ExperimentConfig {
            name: name.to_string(),
            mode,
            n_classes,
            n_enroll,
            n_test_per_class: n_test,
            rounds,
            dims,
            sigmas,
            epsilon: 1.0,
            score_types: types.to_vec(),
            seed: PRESET_SEED,
            trial_policy: TrialPolicy::All,
            use_true_means: false,
        };
    use ExperimentMode::*;
    Some(match name {
        "paper-known" => base(name, KnownMean, 600, 500, 30, 1, paper_dims, paper_sigmas, &KNOWN_TYPES),
        "paper-unknown" => base(name, UnknownMean, 600, 1, 3, 500, paper_dims, paper_sigmas, &UNKNOWN_TYPES),
        "desk-known" => base(name, KnownMean, 200, 500, 30, 50, desk_dims, desk_sigmas, &KNOWN_TYPES),
        "desk-unknown" => base(name, UnknownMean, 200, 1, 3, 50, desk_dims, desk_sigmas, &UNKNOWN_TYPES),
        _ => return None,
    })
}

/// Human-readable parameter table of a preset.
pub fn preset_table(config: &ExperimentConfig) -> String {
    let mut s = String::new();
    let fmt_list = |v: Vec<String>| v.join(", ");
    let rows = [
        ("mode", format!("{:?}", config.mode)),
        ("n_classes", config.n_classes.to_string()),
        ("n_enroll", config.n_enroll.to_string()),
        ("n_test_per_class", config.n_test_per_class.to_string()),
        ("rounds", config.rounds.to_string()),
        ("dims", fmt_list(config.dims.iter().map(|d| d.to_string()).collect())),
        ("sigmas", fmt_list(config.sigmas.iter().map(|d| d.to_string()).collect())),
        ("epsilon", config.epsilon.to_string()),
        ("score_types", fmt_list(config.score_types.iter().map(|t| t.to_string()).collect())),
        ("seed", config.seed.to_string()),
        ("trial_policy", config.trial_policy.to_string()),
    ];
    let _ = writeln!(s, "{}", config.name);
    for (k, v) in rows {
        let _ = writeln!(s, "  {k:<17} {v}");
    }
    s
}

/// `n` class means drawn from `N(0, epsilon^2 I)`.
pub fn sample_classes(dim: usize, epsilon: f64, n: usize, rng: &mut CounterRng) -> Vec<Vec<f64>> {
    sample_observations(&vec![0.0; dim], epsilon, n, rng)
}

/// `n` observations drawn from `N(mean, sigma^2 I)`.
pub fn sample_observations(mean: &[f64], sigma: f64, n: usize, rng: &mut CounterRng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut z = vec![0.0; mean.len()];
            rng.fill_gaussian(&mut z);
            z.iter_mut().zip(mean).for_each(|(v, m)| *v = m + sigma * *v);
            z
        })
        .collect()
}

/// Average of `n` observations drawn exactly as [`sample_observations`] would,
/// without materializing them.
pub fn sample_observation_mean(mean: &[f64], sigma: f64, n: usize, rng: &mut CounterRng) -> Vec<f64> {
    const CHUNK: usize = 64;
    let d = mean.len();
    let mut sum = vec![0.0; d];
    let mut z = vec![0.0; d * n.min(CHUNK)];
    let mut left = n;
    while left > 0 && d > 0 {
        let m = left.min(CHUNK);
        let z = &mut z[..m * d];
        rng.fill_gaussian(z);
        for row in z.chunks_exact(d) {
            for ((acc, mu), v) in sum.iter_mut().zip(mean).zip(row) {
                *acc += mu + sigma * v;
            }
        }
        left -= m;
    }
    let inv = 1.0 / n as f64;
    sum.iter_mut().for_each(|v| *v *= inv);
    sum
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Classes = 1,
    Enroll = 2,
    Test = 3,
    Trials = 4,
}

/// Key of the random streams of one cell.
pub fn cell_key(seed: u64, dim: usize, sigma: f64, round: usize) -> u64 {
    derive_key(&[seed, dim as u64, sigma.to_bits(), round as u64])
}

fn stream(cell: u64, which: Stream) -> CounterRng {
    CounterRng::new(derive_key(&[cell, which as u64]))
}

/// Sampled data of one cell.
#[derive(Debug, Clone)]
pub struct CellData {
    pub model: CanonicalModel,
    pub class_means: Vec<Vec<f64>>,
    pub enrollments: Vec<Enrollment>,
    pub tests: Vec<Vec<f64>>,
    pub true_class: Vec<usize>,
}

pub fn sample_cell(config: &ExperimentConfig, dim: usize, sigma: f64, round: usize) -> Result<CellData> {
    let key = cell_key(config.seed, dim, sigma, round);
    let model = CanonicalModel::isotropic(dim, config.epsilon * config.epsilon, sigma * sigma)?;
    let class_means = sample_classes(dim, config.epsilon, config.n_classes, &mut stream(key, Stream::Classes));

    let retain = config.score_types.contains(&ScoreType::PldaLr);
    let mut enroll_rng = stream(key, Stream::Enroll);
    let enrollments = class_means
        .iter()
        .enumerate()
        .map(|(k, mu)| {
            let e = if retain {
                model.posterior_retaining(sample_observations(mu, sigma, config.n_enroll, &mut enroll_rng))?
            } else {
                let mean = sample_observation_mean(mu, sigma, config.n_enroll, &mut enroll_rng);
                if config.mode == ExperimentMode::KnownMean && config.use_true_means {
                    model.posterior_from_mean(config.n_enroll, mu.clone())?
                } else {
                    model.posterior_from_mean(config.n_enroll, mean)?
                }
            };
            Ok(e.with_class_id(k.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut test_rng = stream(key, Stream::Test);
    let mut tests = Vec::with_capacity(config.n_classes * config.n_test_per_class);
    let mut true_class = Vec::with_capacity(tests.capacity());
    for (k, mu) in class_means.iter().enumerate() {
        tests.extend(sample_observations(mu, sigma, config.n_test_per_class, &mut test_rng));
        true_class.extend(std::iter::repeat_n(k, config.n_test_per_class));
    }
    Ok(CellData { model, class_means, enrollments, tests, true_class })
}

/// Result of one (dim, sigma, round) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub reports: Vec<MetricsReport>,
    pub matrices: Vec<ScoreMatrix>,
    pub true_class: Vec<usize>,
}

fn cell_policy(policy: TrialPolicy, key: u64) -> TrialPolicy {
    match policy {
        TrialPolicy::All => TrialPolicy::All,
        TrialPolicy::Sampled { per_test, seed } => {
            let mut rng = stream(derive_key(&[key, seed]), Stream::Trials);
            TrialPolicy::Sampled { per_test, seed: rng.next_u64() }
        }
    }
}

pub fn run_cell(config: &ExperimentConfig, dim: usize, sigma: f64, round: usize) -> Result<CellOutcome> {
    let wrap = |e: Error| Error::Cell { dim, sigma, round, source: Box::new(e) };
    let data = sample_cell(config, dim, sigma, round).map_err(wrap)?;
    let policy = cell_policy(config.trial_policy, cell_key(config.seed, dim, sigma, round));
    let mut reports = Vec::with_capacity(config.score_types.len());
    let mut matrices = Vec::with_capacity(config.score_types.len());
    let all = score_matrices(&data.model, &data.enrollments, &data.tests, &config.score_types).map_err(wrap)?;
    for (&score_type, sm) in config.score_types.iter().zip(all) {
        let idr = compute_idr(&sm, &data.true_class).map_err(wrap)?;
        let trials = build_trials(&sm, &data.true_class, policy).map_err(wrap)?;
        let eer = compute_eer(&trials).map_err(wrap)?;
        reports.push(MetricsReport {
            experiment: config.name.clone(),
            score_type,
            dim,
            sigma,
            round: round as i64,
            eer,
            idr,
            n_target: trials.target_scores.len(),
            n_nontarget: trials.nontarget_scores.len(),
            n_identification_trials: data.tests.len(),
        });
        matrices.push(sm);
    }
    Ok(CellOutcome { reports, matrices, true_class: data.true_class })
}

/// Grid coordinates `(dim, sigma, round)` in config order.
pub fn cells(config: &ExperimentConfig) -> Vec<(usize, f64, usize)> {
    let mut out = Vec::with_capacity(config.dims.len() * config.sigmas.len() * config.rounds);
    for &d in &config.dims {
        for &s in &config.sigmas {
            for r in 0..config.rounds {
                out.push((d, s, r));
            }
        }
    }
    out
}

/// Runs every cell (in parallel) and returns per-round rows plus one
/// aggregated row per (score type, dim, sigma), sorted for output.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsReport>> {
    config.validate().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let per_cell: Vec<Vec<MetricsReport>> = cells(config)
        .into_par_iter()
        .map(|(d, s, r)| run_cell(config, d, s, r).map(|o| o.reports))
        .collect::<Result<_>>()?;
    let mut reports: Vec<MetricsReport> = per_cell.into_iter().flatten().collect();
    reports.extend(aggregate(&reports));
    sort_reports(&mut reports);
    Ok(reports)
}

/// Mean EER and IDR over rounds (`round = -1`); counts are summed.
pub fn aggregate(per_round: &[MetricsReport]) -> Vec<MetricsReport> {
    let mut groups: Vec<MetricsReport> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for r in per_round.iter().filter(|r| r.round >= 0) {
        let slot = groups.iter().position(|g| {
            g.experiment == r.experiment
                && g.score_type == r.score_type
                && g.dim == r.dim
                && g.sigma.to_bits() == r.sigma.to_bits()
        });
        match slot {
            Some(i) => {
                let g = &mut groups[i];
                g.eer += r.eer;
                g.idr += r.idr;
                g.n_target += r.n_target;
                g.n_nontarget += r.n_nontarget;
                g.n_identification_trials += r.n_identification_trials;
                counts[i] += 1;
            }
            None => {
                groups.push(MetricsReport { round: -1, ..r.clone() });
                counts.push(1);
            }
        }
    }
    for (g, &c) in groups.iter_mut().zip(&counts) {
        g.eer /= c as f64;
        g.idr /= c as f64;
    }
    groups
}

/// Mean and standard error over rounds for one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub rounds: usize,
    pub mean_eer: f64,
    pub se_eer: f64,
    pub mean_idr: f64,
    pub se_idr: f64,
}

pub fn summarize(reports: &[MetricsReport], score_type: ScoreType, dim: usize, sigma: f64) -> Option<CellSummary> {
    let rows: Vec<&MetricsReport> = reports
        .iter()
        .filter(|r| r.round >= 0 && r.score_type == score_type && r.dim == dim && r.sigma == sigma)
        .collect();
    if rows.is_empty() {
        return None;
    }
    let stats = |f: &dyn Fn(&MetricsReport) -> f64| {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let se = if rows.len() > 1 {
            let var = rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };
    let (mean_eer, se_eer) = stats(&|r| r.eer);
    let (mean_idr, se_idr) = stats(&|r| r.idr);
    Some(CellSummary { rounds: rows.len(), mean_eer, se_eer, mean_idr, se_idr })
}

/// `key=value` metadata accompanying a metrics CSV.
pub fn metadata(config: &ExperimentConfig, preset: Option<&str>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "artifact={} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "experiment={}", config.name);
    let _ = writeln!(s, "preset={}", preset.unwrap_or("none"));
    let _ = writeln!(s, "seed={}", config.seed);
    let _ = writeln!(s, "prng={PRNG_ID}");
    let _ = writeln!(s, "stream_rule=derive_key(seed, dim, sigma_bits, round, purpose)");
    let _ = writeln!(s, "eer_convention={EER_CONVENTION}");
    let _ = writeln!(s, "trial_policy={}", config.trial_policy);
    let _ = writeln!(s, "trial_pooling=global");
    let _ = writeln!(s, "class_sampling=fresh classes every round");
    let _ = writeln!(s, "aggregation=arithmetic mean over rounds (round=-1)");
    let _ = writeln!(s, "config={}", serde_json::to_string(config).expect("config serializes"));
    s
}
