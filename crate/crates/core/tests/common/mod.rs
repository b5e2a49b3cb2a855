//! Independent oracles and generators shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use nlscore::{CounterRng, Matrix};

pub fn gaussian_vec(rng: &mut CounterRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.next_gaussian()).collect()
}

pub fn uniform(rng: &mut CounterRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_f64()
}

/// `G Gᵀ + floor·I` with Gaussian `G`.
pub fn random_spd(rng: &mut CounterRng, d: usize, floor: f64) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..d).map(|_| gaussian_vec(rng, d, 1.0)).collect();
    let g = Matrix::from_rows(&rows).unwrap();
    let mut s = g.matmul(&g.transpose()).unwrap();
    for i in 0..d {
        s[(i, i)] += floor;
    }
    s
}

/// Random invertible matrix: identity plus a scaled Gaussian perturbation,
/// resampled until its determinant is comfortably away from zero.
pub fn random_invertible(rng: &mut CounterRng, d: usize) -> Matrix {
    loop {
        let rows: Vec<Vec<f64>> =
            (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j)) + 0.7 * rng.next_gaussian()).collect()).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let (sign, logdet) = dense_log_abs_det(&to_dense(&a));
        if sign != 0.0 && logdet > -3.0 * d as f64 {
            return a;
        }
    }
}

pub fn to_dense(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Textbook Cholesky; `None` if not positive definite.
pub fn dense_cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if v <= 0.0 {
                    return None;
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// log N(x; mean, cov) by direct Cholesky.
pub fn dense_gaussian_log_density(x: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let l = dense_cholesky(cov).expect("covariance is SPD");
    let mut z = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (x[i] - mean[i] - s) / l[i][i];
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let logdet: f64 = 2.0 * l.iter().enumerate().map(|(i, r)| r[i].ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Sign and log |det| by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn dense_log_abs_det(a: &[Vec<f64>]) -> (f64, f64) {
    let n = a.len();
    let mut m = a.to_vec();
    let (mut sign, mut logdet) = (1.0, 0.0);
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        if m[p][c] == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if p != c {
            m.swap(p, c);
            sign = -sign;
        }
        let pivot = m[c][c];
        sign *= pivot.signum();
        logdet += pivot.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / pivot;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    (sign, logdet)
}

/// Joint covariance of `m` vectors sharing one class mean under the
/// isotropic-diagonal model: blocks `diag(eps2)` off the diagonal and
/// `diag(eps2) + sigma2·I` on it.
pub fn same_class_covariance(eps2: &[f64], sigma2: f64, m: usize) -> Vec<Vec<f64>> {
    let d = eps2.len();
    let mut c = vec![vec![0.0; m * d]; m * d];
    for a in 0..m {
        for b in 0..m {
            for i in 0..d {
                c[a * d + i][b * d + i] = eps2[i] + if a == b { sigma2 } else { 0.0 };
            }
        }
    }
    c
}

/// log p(v_1..v_m) with all vectors from one class, by dense evaluation.
pub fn joint_same_class_log_density(eps2: &[f64], sigma2: f64, vectors: &[Vec<f64>]) -> f64 {
    let flat: Vec<f64> = vectors.iter().flatten().copied().collect();
    let cov = same_class_covariance(eps2, sigma2, vectors.len());
    dense_gaussian_log_density(&flat, &vec![0.0; flat.len()], &cov)
}

/// Dense PLDA likelihood ratio: log p(enroll, x | same) − log p(enroll) − log p(x).
pub fn dense_plda_lr(eps2: &[f64], sigma2: f64, enroll: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut all = enroll.to_vec();
    all.push(x.to_vec());
    joint_same_class_log_density(eps2, sigma2, &all)
        - joint_same_class_log_density(eps2, sigma2, enroll)
        - joint_same_class_log_density(eps2, sigma2, &[x.to_vec()])
}

/// Brute-force EER: FAR (score >= t) and FRR (score < t) at a threshold
/// below every score, at every midpoint between adjacent distinct pooled
/// scores and above every score; linear interpolation at the first point
/// where FRR catches up with FAR.
pub fn brute_force_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let mut pooled: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(pooled.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);
    let rates = |t: f64| {
        let fa = nontargets.iter().filter(|&&s| s >= t).count() as f64 / nontargets.len() as f64;
        let fr = targets.iter().filter(|&&s| s < t).count() as f64 / targets.len() as f64;
        (fa, fr)
    };
    let (mut far0, mut frr0) = rates(thresholds[0]);
    for &t in &thresholds[1..] {
        let (far1, frr1) = rates(t);
        let gap1 = far1 - frr1;
        if gap1 <= 0.0 {
            if gap1 == 0.0 {
                return far1;
            }
            let gap0 = far0 - frr0;
            if gap0 <= 0.0 {
                return far0;
            }
            return far0 + gap0 / (gap0 - gap1) * (far1 - far0);
        }
        far0 = far1;
        frr0 = frr1;
    }
    unreachable!("the last threshold rejects everything")
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

pub struct MbrOutcome {
    /// Empirical Bayes risk of "accept iff posterior >= 0.5".
    pub rule_risk: f64,
    /// Smallest risk over a grid of thresholds on log NL.
    pub best_grid_risk: f64,
    pub best_grid_threshold: f64,
}

/// Toy verification universe in one dimension: `k` claimed classes with
/// means drawn from `N(0, eps^2)`, genuine trials from `N(mu_k, sigma^2)`,
/// impostors from the marginal `N(0, eps^2 + sigma^2)`, equal priors and
/// unit costs. Risks are Riemann sums on a fine x grid.
pub fn mbr_toy_universe(seed: u64, k: usize) -> MbrOutcome {
    use nlscore::{decide_sv, nl_known, nl_to_sv_posterior, CanonicalModel};
    let mut rng = CounterRng::new(seed);
    let eps = uniform(&mut rng, 0.5, 2.0);
    let sigma = uniform(&mut rng, 0.3, 2.0);
    let (eps2, sigma2) = (eps * eps, sigma * sigma);
    let model = CanonicalModel::new(vec![eps2], sigma2).unwrap();
    let means: Vec<f64> = (0..k).map(|_| eps * rng.next_gaussian()).collect();

    let half = 8.0 * (eps2 + sigma2).sqrt();
    let n = 16_001;
    let h = 2.0 * half / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| -half + h * i as f64).collect();
    let impostor: Vec<f64> = xs.iter().map(|&x| normal_pdf(x, 0.0, eps2 + sigma2)).collect();

    let mut log_nl = Vec::with_capacity(k);
    let mut genuine = Vec::with_capacity(k);
    let mut rule_risk = 0.0;
    for &mu in &means {
        let g: Vec<f64> = xs.iter().map(|&x| normal_pdf(x, mu, sigma2)).collect();
        let l: Vec<f64> = xs.iter().map(|&x| nl_known(&model, &[mu], &[x]).unwrap()).collect();
        for i in 0..n {
            let accept = decide_sv(nl_to_sv_posterior(l[i]), 0.5).unwrap();
            rule_risk += 0.5 * h * if accept { impostor[i] } else { g[i] };
        }
        log_nl.push(l);
        genuine.push(g);
    }
    rule_risk /= k as f64;

    let mut best = (f64::INFINITY, 0.0);
    for j in 0..=800 {
        let tau = -20.0 + 0.05 * j as f64;
        let mut risk = 0.0;
        for c in 0..k {
            for i in 0..n {
                risk += 0.5 * h * if log_nl[c][i] >= tau { impostor[i] } else { genuine[c][i] };
            }
        }
        risk /= k as f64;
        if risk < best.0 {
            best = (risk, tau);
        }
    }
    MbrOutcome { rule_risk, best_grid_risk: best.0, best_grid_threshold: best.1 }
}
