//! Latent-factor boundaries: principal components of standardized task
//! scores, each rescaled to `[0, 1]` and given its own sigmoid boundary.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_sigmoid, BoundaryModel, FitConfig};
use crate::records::Dataset;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and the matching eigenvectors as
/// columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Diagnostics("eigen-decomposition needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::numerical("jacobi_eigen", "rotations did not converge"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub index: usize,
    pub explained_variance_ratio: f64,
    /// Loadings on the standardized tasks, oriented to a nonnegative sum.
    pub loadings: Vec<f64>,
    /// Raw score range mapped onto `[0, 1]`.
    pub score_range: [f64; 2],
    pub boundary: BoundaryModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    pub tasks: Vec<String>,
    pub n_records: usize,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    /// All eigenvalues of the task correlation matrix, decreasing.
    pub eigenvalues: Vec<f64>,
    pub components: Vec<Component>,
}

/// Principal components of the listed tasks over records complete on all of
/// them (compute and every score), with a sigmoid boundary per component.
pub fn pca_boundary(d: &Dataset, tasks: &[String], k: usize, cfg: &FitConfig) -> Result<PcaReport> {
    if k == 0 || tasks.len() < k {
        return Err(Error::Diagnostics(format!("need at least k = {k} ≥ 1 tasks, got {}", tasks.len())));
    }
    for t in tasks {
        d.require_task(t)?;
    }
    let rows: Vec<(f64, Vec<f64>)> = d
        .records()
        .iter()
        .filter_map(|r| {
            let z = r.log_compute()?;
            let s: Option<Vec<f64>> = tasks.iter().map(|t| r.score(t)).collect();
            Some((z, s?))
        })
        .collect();
    let n = rows.len();
    let p = tasks.len();
    if n < p + 1 {
        return Err(Error::Diagnostics(format!(
            "PCA over {p} tasks needs at least {} complete records, got {n}",
            p + 1
        )));
    }

    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r.1[j]).sum::<f64>() / n as f64).collect();
    let std_devs: Vec<f64> = (0..p)
        .map(|j| (rows.iter().map(|r| (r.1[j] - means[j]).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
        .collect();
    if let Some(j) = std_devs.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Diagnostics(format!("task `{}` has zero variance", tasks[j])));
    }
    let x = DMatrix::from_fn(n, p, |i, j| (rows[i].1[j] - means[j]) / std_devs[j]);
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let (eigenvalues, vectors) = jacobi_eigen(&cov)?;
    let total: f64 = eigenvalues.iter().sum();

    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let mut load: Vec<f64> = vectors.column(c).iter().copied().collect();
        if load.iter().sum::<f64>() < 0.0 {
            load.iter_mut().for_each(|v| *v = -*v);
        }
        let scores: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * load[j]).sum()).collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Diagnostics(format!("component {} has constant scores", c + 1)));
        }
        let data: Vec<(f64, f64)> = rows
            .iter()
            .zip(&scores)
            .map(|(r, s)| (r.0, ((s - lo) / (hi - lo)).clamp(0.0, 1.0)))
            .collect();
        components.push(Component {
            index: c + 1,
            explained_variance_ratio: (eigenvalues[c] / total).max(0.0),
            loadings: load,
            score_range: [lo, hi],
            boundary: fit_sigmoid(&data, cfg)?,
        });
    }
    Ok(PcaReport {
        tasks: tasks.to_vec(),
        n_records: n,
        means,
        std_devs,
        eigenvalues,
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::{Flags, ModelRecord, Score};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n + 3, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    /// Power iteration with Hotelling deflation.
    fn power_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut out = Vec::new();
        for k in 0..n {
            let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i + k) as f64);
            v /= v.norm();
            let mut lambda = 0.0;
            for _ in 0..200_000 {
                let w = &m * &v;
                let next = v.dot(&w);
                let norm = w.norm();
                if norm == 0.0 {
                    break;
                }
                v = w / norm;
                if (next - lambda).abs() <= 1e-15 * next.abs().max(1.0) {
                    lambda = next;
                    break;
                }
                lambda = next;
            }
            out.push(lambda);
            m -= lambda * &v * v.transpose();
        }
        out
    }

    #[test]
    fn eigenvalues_match_power_iteration() {
        for seed in 0..10 {
            let a = random_spd(5, seed);
            let (vals, _) = jacobi_eigen(&a).unwrap();
            let want = power_eigenvalues(&a);
            for (g, w) in vals.iter().zip(&want) {
                assert!((g - w).abs() < 1e-8, "seed {seed}: {vals:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn eigenvectors_orthonormal_and_reconstruct() {
        let a = random_spd(6, 11);
        let (vals, v) = jacobi_eigen(&a).unwrap();
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::identity(6, 6)).abs().max() < 1e-10);
        let rebuilt = &v * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals.clone())) * v.transpose();
        assert!((rebuilt - a).abs().max() < 1e-10);
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    fn dataset(seed: u64, n: usize, correlated: bool) -> (Dataset, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let records = (0..n)
            .map(|i| {
                let z: f64 = rng.random_range(20.0..26.0);
                let base = 0.1 + 0.8 * crate::math::sigmoid(1.5 * (z - 23.0)) * rng.random_range(0.6..1.0);
                let scores: BTreeMap<String, Score> = tasks
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let v = if correlated {
                            0.1 + 0.1 * j as f64 + 0.5 * (base - 0.1)
                        } else {
                            (base + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)
                        };
                        (t.clone(), Score::new(v).unwrap())
                    })
                    .collect();
                ModelRecord {
                    model_id: format!("m{i}"),
                    base_model_id: format!("m{i}"),
                    pretraining_flops: Some(10f64.powf(z)),
                    param_count: Some(1e9),
                    release_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                    scores,
                    flags: Flags::default(),
                }
            })
            .collect();
        (Dataset::new(records).unwrap(), tasks)
    }

    #[test]
    fn rank_one_tasks_explain_everything() {
        let (d, tasks) = dataset(1, 80, true);
        let r = pca_boundary(&d, &tasks, 2, &FitConfig::default()).unwrap();
        assert!((r.components[0].explained_variance_ratio - 1.0).abs() < 1e-10);
        assert!(r.components[1].explained_variance_ratio < 1e-10);
        assert!(r.components[0].loadings.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn first_component_rises_with_compute() {
        let (d, tasks) = dataset(2, 200, false);
        let r = pca_boundary(&d, &tasks, 3, &FitConfig::default()).unwrap();
        let ratios: Vec<f64> = r.components.iter().map(|c| c.explained_variance_ratio).collect();
        assert!(ratios.windows(2).all(|w| w[0] >= w[1]));
        assert!(ratios.iter().sum::<f64>() <= 1.0 + 1e-12);
        let b = &r.components[0].boundary;
        assert!(b.predict(25.5).unwrap() > b.predict(20.5).unwrap() + 0.3);
    }

    #[test]
    fn too_few_records_rejected() {
        let (d, tasks) = dataset(3, 4, false);
        assert!(pca_boundary(&d, &tasks, 2, &FitConfig::default()).is_err());
        let (d, tasks) = dataset(3, 50, false);
        assert!(pca_boundary(&d, &tasks[..1], 2, &FitConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn jacobi_diagonalizes(seed in 0u64..10_000, n in 1usize..7) {
            let a = random_spd(n, seed);
            let (vals, v) = jacobi_eigen(&a).unwrap();
            let d = v.transpose() * &a * &v;
            for i in 0..n {
                prop_assert!((d[(i, i)] - vals[i]).abs() < 1e-9 * a.norm().max(1.0));
                for j in 0..n {
                    if i != j {
                        prop_assert!(d[(i, j)].abs() < 1e-9 * a.norm().max(1.0));
                    }
                }
            }
        }
    }
}
