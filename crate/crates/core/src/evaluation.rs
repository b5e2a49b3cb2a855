//! Verification and identification metrics: EER, IDR and DET points.
//!
//! Conventions: a trial is accepted when its score is at or above the
//! threshold, so FAR(t) counts nontargets `>= t` and FRR(t) counts targets
//! `< t`. EER thresholds are swept at midpoints between adjacent distinct
//! pooled scores and the crossing is linearly interpolated between the two
//! bracketing sweep points.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::format::format_sig;
use crate::rng::{derive_key, CounterRng};
use crate::scoring::{argmax, ScoreMatrix, ScoreType};

/// Recorded in run metadata.
pub const EER_CONVENTION: &str = "midpoint sweep over pooled distinct scores; accept on score >= threshold; \
     linear interpolation between the two sweep points bracketing FAR = FRR";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub target_scores: Vec<f64>,
    pub nontarget_scores: Vec<f64>,
}

impl TrialSet {
    pub fn new(target_scores: Vec<f64>, nontarget_scores: Vec<f64>) -> Self {
        TrialSet { target_scores, nontarget_scores }
    }

    fn validate(&self) -> Result<()> {
        if self.target_scores.is_empty() {
            return Err(Error::Empty("no target trials"));
        }
        if self.nontarget_scores.is_empty() {
            return Err(Error::Empty("no nontarget trials"));
        }
        if self.target_scores.iter().chain(&self.nontarget_scores).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trial scores must be finite".into()));
        }
        Ok(())
    }
}

/// How nontarget trials are drawn from a score matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub enum TrialPolicy {
    /// Every non-true class of every test vector.
    #[default]
    All,
    /// `per_test` distinct non-true classes per test vector, drawn uniformly.
    Sampled { per_test: usize, seed: u64 },
}

/// Wire form: `{"kind": "all"}` or `{"kind": "sampled", "per_test": m, "seed": s}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDocument {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    per_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl TryFrom<PolicyDocument> for TrialPolicy {
    type Error = String;

    fn try_from(doc: PolicyDocument) -> std::result::Result<Self, String> {
        match (doc.kind.as_str(), doc.per_test, doc.seed) {
            ("all", None, None) => Ok(TrialPolicy::All),
            ("all", _, _) => Err("policy `all` takes no per_test or seed".into()),
            ("sampled", Some(per_test), Some(seed)) => Ok(TrialPolicy::Sampled { per_test, seed }),
            ("sampled", _, _) => Err("policy `sampled` needs per_test and seed".into()),
            (other, _, _) => Err(format!("unknown trial policy kind `{other}` (expected all or sampled)")),
        }
    }
}

impl From<TrialPolicy> for PolicyDocument {
    fn from(p: TrialPolicy) -> Self {
        match p {
            TrialPolicy::All => PolicyDocument { kind: "all".into(), per_test: None, seed: None },
            TrialPolicy::Sampled { per_test, seed } => {
                PolicyDocument { kind: "sampled".into(), per_test: Some(per_test), seed: Some(seed) }
            }
        }
    }
}

impl std::fmt::Display for TrialPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrialPolicy::All => f.write_str("all"),
            TrialPolicy::Sampled { per_test, seed } => write!(f, "sampled(per_test={per_test}, seed={seed})"),
        }
    }
}

/// Equal error rate of a trial set.
///
/// Equivalent to [`eer_sorted`] on the sorted scores. Only the targets are
/// sorted; the sweep point where FRR first reaches FAR is located by binary
/// search with counting passes over the nontargets, followed by a selection
/// among the nontargets that fall between two adjacent target values.
pub fn compute_eer(trials: &TrialSet) -> Result<f64> {
    trials.validate()?;
    let mut tgt = trials.target_scores.clone();
    tgt.sort_unstable_by(f64::total_cmp);
    Ok(eer_targets_sorted(&tgt, &trials.nontarget_scores))
}

fn count_above(scores: &[f64], v: f64) -> usize {
    scores.iter().map(|&s| usize::from(s > v)).sum()
}

/// Stride of the nontarget subsample used to guess the crossing.
const GUESS_STRIDE: usize = 16;

fn eer_targets_sorted(targets: &[f64], nontargets: &[f64]) -> f64 {
    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;
    let frr_at = |v: f64| targets.partition_point(|&s| s <= v) as f64 / nt;

    // Distinct target values, ascending. FAR - FRR at the sweep point just
    // above distinct[j] is non-increasing in j; find the first j where it is
    // <= 0 (the last j always qualifies since FRR = 1 there).
    let mut distinct: Vec<f64> = targets.to_vec();
    distinct.dedup();
    let last = distinct.len() - 1;
    let qualifies = |j: usize| count_above(nontargets, distinct[j]) as f64 / nn - frr_at(distinct[j]) <= 0.0;

    // Guess from a subsample, then confirm with exact counts by galloping
    // outward and bisecting.
    let sample: Vec<f64> = nontargets.iter().step_by(GUESS_STRIDE).copied().collect();
    let ns = sample.len() as f64;
    let guess = distinct.partition_point(|&v| count_above(&sample, v) as f64 / ns - frr_at(v) > 0.0).min(last);
    // invariant: !qualifies(lo) (or lo = None), qualifies(hi)
    let (mut lo, mut hi): (Option<usize>, usize);
    if qualifies(guess) {
        hi = guess;
        lo = None;
        let mut step = 1;
        while let Some(j) = hi.checked_sub(step) {
            if qualifies(j) {
                hi = j;
                step *= 2;
            } else {
                lo = Some(j);
                break;
            }
        }
    } else {
        lo = Some(guess);
        hi = last;
        let mut step = 1;
        while guess + step < last {
            if qualifies(guess + step) {
                hi = guess + step;
                break;
            }
            lo = Some(guess + step);
            step *= 2;
        }
    }
    loop {
        let start = lo.map_or(0, |l| l + 1);
        if start >= hi {
            break;
        }
        let mid = start + (hi - start) / 2;
        if qualifies(mid) {
            hi = mid;
        } else {
            lo = Some(mid);
        }
    }
    let j = hi;
    let upper = distinct[j];
    let lower = if j > 0 { Some(distinct[j - 1]) } else { None };

    // One pass: counts at the two target values and the nontargets strictly
    // between them. On the sweep points inside that gap FRR stays at its value
    // just above `lower`.
    let mut between = Vec::new();
    let (mut ge_upper, mut eq_upper) = (0usize, 0usize);
    for &s in nontargets {
        if s >= upper {
            ge_upper += 1;
            eq_upper += usize::from(s == upper);
        } else if lower.is_none_or(|l| s > l) {
            between.push(s);
        }
    }
    let frr_between = lower.map_or(0.0, frr_at);
    let far_of = |above: usize| above as f64 / nn;

    // Largest count `a` of nontargets above the threshold with FAR <= FRR.
    let ok = |a: usize| far_of(a) - frr_between <= 0.0;
    let max_above = if !ok(0) {
        None
    } else {
        let (mut a_lo, mut a_hi) = (0usize, nontargets.len());
        while a_lo < a_hi {
            let mid = (a_lo + a_hi).div_ceil(2);
            if ok(mid) {
                a_lo = mid;
            } else {
                a_hi = mid - 1;
            }
        }
        Some(a_lo)
    };

    // The first qualifying sweep point among `between` is the smallest w with
    // ge_upper + #(between > w) <= max_above, i.e. the (r+1)-th largest.
    let first = match max_above.and_then(|a| a.checked_sub(ge_upper)) {
        Some(r) if !between.is_empty() => {
            let idx = between.len().saturating_sub(r + 1);
            let (_, w, _) = between.select_nth_unstable_by(idx, f64::total_cmp);
            Some(*w)
        }
        _ => None,
    };
    let above_in_between = |w: f64| ge_upper + between.iter().filter(|&&s| s > w).count();
    let (far1, frr1) = match first {
        Some(w) => (far_of(above_in_between(w)), frr_between),
        None => (far_of(ge_upper - eq_upper), frr_at(upper)),
    };
    let crossing_value = first.unwrap_or(upper);
    let prev = between
        .iter()
        .copied()
        .filter(|&s| s < crossing_value)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
    let (far0, frr0) = match (prev, lower) {
        (Some(w), _) => (far_of(above_in_between(w)), frr_between),
        (None, Some(l)) => (far_of(ge_upper + between.len()), frr_at(l)),
        (None, None) => (1.0, 0.0),
    };
    crossing(far0, frr0, far1, frr1).unwrap_or(0.5 * (far1 + frr1))
}

/// EER over pre-sorted (ascending) target and nontarget scores.
pub fn eer_sorted(targets: &[f64], nontargets: &[f64]) -> f64 {
    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;
    // Sweep point `j` sits just above the j-th group of equal pooled scores.
    // Before any group: everything accepted.
    let (mut ti, mut ni) = (0usize, 0usize);
    let mut prev_far = 1.0;
    let mut prev_frr = 0.0;
    loop {
        let next = match (targets.get(ti), nontargets.get(ni)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while ti < targets.len() && targets[ti] == next {
            ti += 1;
        }
        while ni < nontargets.len() && nontargets[ni] == next {
            ni += 1;
        }
        let far = (nontargets.len() - ni) as f64 / nn;
        let frr = ti as f64 / nt;
        if let Some(eer) = crossing(prev_far, prev_frr, far, frr) {
            return eer;
        }
        prev_far = far;
        prev_frr = frr;
    }
    // Only reachable if the final point (FAR 0, FRR 1) had no crossing, which
    // cannot happen; kept for totality.
    0.5 * (prev_far + prev_frr)
}

/// Crossing of FAR and FRR on the segment between two consecutive sweep
/// points, if FRR reaches FAR on it.
fn crossing(far0: f64, frr0: f64, far1: f64, frr1: f64) -> Option<f64> {
    let gap1 = far1 - frr1;
    if gap1 > 0.0 {
        return None;
    }
    if gap1 == 0.0 {
        return Some(far1);
    }
    let gap0 = far0 - frr0;
    if gap0 <= 0.0 {
        return Some(far0);
    }
    let alpha = gap0 / (gap0 - gap1);
    Some(far0 + alpha * (far1 - far0))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the true class.
pub fn compute_idr(scores: &ScoreMatrix, true_class: &[usize]) -> Result<f64> {
    check_dim(scores.n_tests(), true_class.len())?;
    if scores.n_tests() == 0 || scores.n_classes() == 0 {
        return Err(Error::Empty("identification needs a nonempty score matrix"));
    }
    let mut correct = 0usize;
    for (row, &truth) in scores.rows().zip(true_class) {
        if truth >= scores.n_classes() {
            return Err(Error::InvalidArgument(format!("true class {truth} out of range")));
        }
        if argmax(row) == Some(truth) {
            correct += 1;
        }
    }
    Ok(correct as f64 / true_class.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// FAR/FRR on `n_points` evenly spaced thresholds from the smallest to the
/// largest pooled score.
pub fn det_points(trials: &TrialSet, n_points: usize) -> Result<Vec<DetPoint>> {
    trials.validate()?;
    if n_points < 2 {
        return Err(Error::InvalidArgument("det_points needs n_points >= 2".into()));
    }
    let mut tgt = trials.target_scores.clone();
    let mut non = trials.nontarget_scores.clone();
    tgt.sort_unstable_by(f64::total_cmp);
    non.sort_unstable_by(f64::total_cmp);
    let lo = tgt[0].min(non[0]);
    let hi = tgt[tgt.len() - 1].max(non[non.len() - 1]);
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| {
            let threshold = if i == n_points - 1 { hi } else { lo + step * i as f64 };
            let below_non = non.partition_point(|&s| s < threshold);
            let below_tgt = tgt.partition_point(|&s| s < threshold);
            DetPoint {
                threshold,
                far: (non.len() - below_non) as f64 / non.len() as f64,
                frr: below_tgt as f64 / tgt.len() as f64,
            }
        })
        .collect())
}

/// Splits a score matrix into target and nontarget trials.
pub fn build_trials(scores: &ScoreMatrix, true_class: &[usize], policy: TrialPolicy) -> Result<TrialSet> {
    check_dim(scores.n_tests(), true_class.len())?;
    let k = scores.n_classes();
    if k < 2 {
        return Err(Error::InvalidArgument("trial construction needs at least two classes".into()));
    }
    if let Some(&bad) = true_class.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!("true class {bad} out of range")));
    }
    let mut target_scores = Vec::with_capacity(true_class.len());
    let mut nontarget_scores;
    match policy {
        TrialPolicy::All => {
            nontarget_scores = Vec::with_capacity(true_class.len() * (k - 1));
            for (row, &truth) in scores.rows().zip(true_class) {
                target_scores.push(row[truth]);
                nontarget_scores.extend_from_slice(&row[..truth]);
                nontarget_scores.extend_from_slice(&row[truth + 1..]);
            }
        }
        TrialPolicy::Sampled { per_test, seed } => {
            if per_test == 0 || per_test > k - 1 {
                return Err(Error::InvalidArgument(format!(
                    "sampled policy needs 1 <= per_test <= {}, got {per_test}",
                    k - 1
                )));
            }
            nontarget_scores = Vec::with_capacity(true_class.len() * per_test);
            let mut others: Vec<usize> = Vec::with_capacity(k - 1);
            for (t, (row, &truth)) in scores.rows().zip(true_class).enumerate() {
                target_scores.push(row[truth]);
                others.clear();
                others.extend((0..k).filter(|&j| j != truth));
                let mut rng = CounterRng::new(derive_key(&[seed, t as u64]));
                // Partial Fisher–Yates.
                for i in 0..per_test {
                    let j = i + rng.next_below((others.len() - i) as u64) as usize;
                    others.swap(i, j);
                    nontarget_scores.push(row[others[i]]);
                }
            }
        }
    }
    Ok(TrialSet { target_scores, nontarget_scores })
}

/// Metrics for one (score type, dimension, sigma, round) cell.
/// `round = -1` marks the mean over rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub experiment: String,
    pub score_type: ScoreType,
    pub dim: usize,
    pub sigma: f64,
    pub round: i64,
    pub eer: f64,
    pub idr: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub n_identification_trials: usize,
}

pub const METRICS_HEADER: &str =
    "experiment,score_type,dim,sigma,round,eer,idr,n_target,n_nontarget,n_identification_trials";

/// Sort order of the metrics CSV.
pub fn sort_reports(reports: &mut [MetricsReport]) {
    reports.sort_by(|a, b| {
        a.experiment
            .cmp(&b.experiment)
            .then_with(|| a.score_type.name().cmp(b.score_type.name()))
            .then_with(|| a.dim.cmp(&b.dim))
            .then_with(|| a.sigma.total_cmp(&b.sigma))
            .then_with(|| a.round.cmp(&b.round))
    });
}

/// Writes the metrics CSV (rows in the given order, 9 significant digits).
pub fn write_metrics_csv<W: Write>(mut out: W, reports: &[MetricsReport]) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.score_type,
            r.dim,
            format_sig(r.sigma, 9),
            r.round,
            format_sig(r.eer, 9),
            format_sig(r.idr, 9),
            r.n_target,
            r.n_nontarget,
            r.n_identification_trials
        )?;
    }
    Ok(())
}

pub const SCORES_HEADER: &str = "trial_id,score_type,is_target,value";

/// Writes score records as CSV with 17 significant digits.
pub fn write_scores_csv<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a crate::scoring::ScoreRecord>,
    header: bool,
) -> io::Result<()> {
    if header {
        writeln!(out, "{SCORES_HEADER}")?;
    }
    for r in records {
        writeln!(out, "{},{},{},{}", r.trial_id, r.score_type, u8::from(r.is_target), format_sig(r.value, 17))?;
    }
    Ok(())
}
