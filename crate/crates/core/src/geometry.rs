//! Empirical high-dimensional diagnostics: norm concentration (the Gaussian
//! annulus), pairwise distances and near-orthogonality of random vectors, and
//! a within/between-class separability probe for the two-level model.

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::{derive_key, CounterRng};

/// Cap on the number of pairs used for pairwise statistics.
pub const MAX_PAIRS: usize = 100_000;

/// Half-width of the norm band, in units of `epsilon`.
pub const BAND_HALF_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub dim: usize,
    pub n_samples: usize,
    pub mean_norm: f64,
    /// Fraction with `| ||x|| - sqrt(d) eps | <= 3 eps`.
    pub norm_inside_band_frac: f64,
    pub mean_pair_distance: f64,
    pub mean_abs_cosine: f64,
}

pub const GEOMETRY_HEADER: &str = "dim,n_samples,mean_norm,inside_frac,mean_pair_dist,mean_abs_cos";

impl ConcentrationReport {
    pub fn csv_row(&self) -> String {
        use crate::format::format_sig;
        format!(
            "{},{},{},{},{},{}",
            self.dim,
            self.n_samples,
            format_sig(self.mean_norm, 9),
            format_sig(self.norm_inside_band_frac, 9),
            format_sig(self.mean_pair_distance, 9),
            format_sig(self.mean_abs_cosine, 9)
        )
    }
}

fn gaussian_vectors(rng: &mut CounterRng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| scale * rng.next_gaussian()).collect()).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index pairs `i < j` over `n` items: all of them when there are at most
/// [`MAX_PAIRS`], otherwise `MAX_PAIRS` uniformly drawn distinct-index pairs.
fn pair_indices(n: usize, rng: &mut CounterRng) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if total <= MAX_PAIRS {
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
    } else {
        (0..MAX_PAIRS)
            .map(|_| {
                let i = rng.next_below(n as u64) as usize;
                let mut j = rng.next_below(n as u64 - 1) as usize;
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    }
}

pub fn annulus_stats(dim: usize, epsilon: f64, n_samples: usize, seed: u64) -> Result<ConcentrationReport> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be at least 1".into()));
    }
    if n_samples < 100 {
        return Err(Error::InvalidArgument(format!("n_samples must be at least 100, got {n_samples}")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut rng = CounterRng::new(derive_key(&[seed, 0]));
    let xs = gaussian_vectors(&mut rng, n_samples, dim, epsilon);
    let norms: Vec<f64> = xs.iter().map(|x| dot(x, x).sqrt()).collect();
    let radius = (dim as f64).sqrt() * epsilon;
    let half_width = BAND_HALF_WIDTH * epsilon;
    let inside = norms.iter().filter(|&&r| (r - radius).abs() <= half_width).count();

    let mut pair_rng = CounterRng::new(derive_key(&[seed, 1]));
    let pairs = pair_indices(n_samples, &mut pair_rng);
    let (mut dist_sum, mut cos_sum) = (0.0, 0.0);
    for &(i, j) in &pairs {
        dist_sum += distance(&xs[i], &xs[j]);
        cos_sum += (dot(&xs[i], &xs[j]) / (norms[i] * norms[j])).abs();
    }
    let np = pairs.len() as f64;
    Ok(ConcentrationReport {
        dim,
        n_samples,
        mean_norm: norms.iter().sum::<f64>() / n_samples as f64,
        norm_inside_band_frac: inside as f64 / n_samples as f64,
        mean_pair_distance: dist_sum / np,
        mean_abs_cosine: cos_sum / np,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparabilityReport {
    pub within_dist_mean: f64,
    pub between_dist_mean: f64,
    /// Fraction of cross-class pairs closer than the median same-class pair.
    pub overlap_frac: f64,
}

/// Samples `n_classes` means from `N(0, eps^2 I)` and `n_per_class`
/// observations per class from `N(mu, sigma^2 I)`, then compares same-class
/// and cross-class pair distances.
///
/// `epsilon` and `sigma` may be zero here (degenerate point classes or
/// identical classes).
pub fn separability_probe(
    dim: usize,
    epsilon: f64,
    sigma: f64,
    n_classes: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<SeparabilityReport> {
    if dim == 0 || n_classes < 2 || n_per_class < 2 {
        return Err(Error::InvalidArgument(
            "separability probe needs dim >= 1, n_classes >= 2 and n_per_class >= 2".into(),
        ));
    }
    if !(epsilon >= 0.0 && sigma >= 0.0 && epsilon.is_finite() && sigma.is_finite()) {
        return Err(Error::InvalidArgument("epsilon and sigma must be finite and nonnegative".into()));
    }
    let mut rng = CounterRng::new(derive_key(&[seed, 0]));
    let means = gaussian_vectors(&mut rng, n_classes, dim, epsilon);
    let mut obs_rng = CounterRng::new(derive_key(&[seed, 1]));
    let samples: Vec<Vec<Vec<f64>>> = means
        .iter()
        .map(|m| (0..n_per_class).map(|_| m.iter().map(|v| v + sigma * obs_rng.next_gaussian()).collect()).collect())
        .collect();

    let mut within = Vec::new();
    let per_class_budget = (MAX_PAIRS / n_classes).max(1);
    for class in &samples {
        let mut count = 0;
        'outer: for i in 0..n_per_class {
            for j in (i + 1)..n_per_class {
                if count == per_class_budget {
                    break 'outer;
                }
                within.push(distance(&class[i], &class[j]));
                count += 1;
            }
        }
    }

    let mut pair_rng = CounterRng::new(derive_key(&[seed, 2]));
    let n_cross = MAX_PAIRS.min(n_classes * (n_classes - 1) / 2 * n_per_class * n_per_class);
    let between: Vec<f64> = (0..n_cross)
        .map(|_| {
            let a = pair_rng.next_below(n_classes as u64) as usize;
            let mut b = pair_rng.next_below(n_classes as u64 - 1) as usize;
            if b >= a {
                b += 1;
            }
            let ia = pair_rng.next_below(n_per_class as u64) as usize;
            let ib = pair_rng.next_below(n_per_class as u64) as usize;
            distance(&samples[a][ia], &samples[b][ib])
        })
        .collect();

    let mut sorted = within.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let overlap = between.iter().filter(|&&d| d < median).count() as f64 / between.len() as f64;
    Ok(SeparabilityReport {
        within_dist_mean: within.iter().sum::<f64>() / within.len() as f64,
        between_dist_mean: between.iter().sum::<f64>() / between.len() as f64,
        overlap_frac: overlap,
    })
}
