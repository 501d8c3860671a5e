//! Small-model dominance: a large model is dominated when its score is below
//! the best score reached by small models on or before its release date.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Default size cutoff (parameters) separating small from large models.
pub const DEFAULT_SIZE_CUTOFF: f64 = 13e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominancePoint {
    pub model_id: String,
    pub param_count: f64,
    pub date: NaiveDate,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceLabel {
    pub model_id: String,
    pub param_count: f64,
    pub date: NaiveDate,
    pub y: f64,
    pub large: bool,
    /// Running small-model best at this date; `None` before any small model.
    pub small_best: Option<f64>,
    pub dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStep {
    pub date: NaiveDate,
    pub small_best: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub size_cutoff: f64,
    /// Labels in date order (ties keep input order).
    pub labels: Vec<DominanceLabel>,
    /// Small-model running maximum, one entry per date on which it rises.
    pub small_boundary: Vec<BoundaryStep>,
    pub n_large: usize,
    pub n_dominated: usize,
    pub dominated_fraction: Option<f64>,
}

/// Labels every model; small means `param_count ≤ size_cutoff`. Small models
/// released on the same date as a large model count towards its threshold.
pub fn dominance_analysis(data: &[DominancePoint], size_cutoff: f64) -> DominanceReport {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&i| (data[i].date, i));

    let mut labels = Vec::with_capacity(data.len());
    let mut small_boundary: Vec<BoundaryStep> = Vec::new();
    let mut best: Option<f64> = None;
    let mut start = 0;
    while start < order.len() {
        let date = data[order[start]].date;
        let end = start + order[start..].iter().take_while(|&&i| data[i].date == date).count();
        for &i in &order[start..end] {
            let p = &data[i];
            if p.param_count <= size_cutoff && best.is_none_or(|b| p.y > b) {
                best = Some(p.y);
            }
        }
        if let Some(b) = best {
            if small_boundary.last().is_none_or(|s| s.small_best < b) {
                small_boundary.push(BoundaryStep { date, small_best: b });
            }
        }
        for &i in &order[start..end] {
            let p = &data[i];
            let large = p.param_count > size_cutoff;
            labels.push(DominanceLabel {
                model_id: p.model_id.clone(),
                param_count: p.param_count,
                date,
                y: p.y,
                large,
                small_best: best,
                dominated: large && best.is_some_and(|b| p.y < b),
            });
        }
        start = end;
    }
    let n_large = labels.iter().filter(|l| l.large).count();
    let n_dominated = labels.iter().filter(|l| l.dominated).count();
    DominanceReport {
        size_cutoff,
        labels,
        small_boundary,
        n_large,
        n_dominated,
        dominated_fraction: (n_large > 0).then(|| n_dominated as f64 / n_large as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(id: &str, params: f64, day: i64, y: f64) -> DominancePoint {
        DominancePoint {
            model_id: id.into(),
            param_count: params,
            date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(day),
            y,
        }
    }

    fn brute_force(data: &[DominancePoint], cutoff: f64) -> Vec<(String, bool)> {
        data.iter()
            .map(|p| {
                let dominated = p.param_count > cutoff
                    && data
                        .iter()
                        .any(|q| q.param_count <= cutoff && q.date <= p.date && q.y > p.y);
                (p.model_id.clone(), dominated)
            })
            .collect()
    }

    fn random_points(seed: u64, n: usize) -> Vec<DominancePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let params = 10f64.powf(rng.random_range(8.0..11.5));
                let y = (rng.random_range(0..20) as f64) / 20.0;
                pt(&format!("m{i}"), params, rng.random_range(0..60), y)
            })
            .collect()
    }

    #[test]
    fn no_earlier_small_model_means_not_dominated() {
        let r = dominance_analysis(&[pt("big", 7e10, 0, 0.1), pt("small", 1e9, 1, 0.9)], 13e9);
        assert!(!r.labels[0].dominated);
        assert_eq!(r.labels[0].small_best, None);
        assert_eq!(r.dominated_fraction, Some(0.0));
    }

    #[test]
    fn tie_is_not_dominated() {
        let r = dominance_analysis(&[pt("small", 1e9, 0, 0.5), pt("big", 7e10, 1, 0.5)], 13e9);
        assert!(!r.labels[1].dominated);
        let r = dominance_analysis(&[pt("small", 1e9, 0, 0.5), pt("big", 7e10, 1, 0.49)], 13e9);
        assert!(r.labels[1].dominated);
    }

    #[test]
    fn cutoff_is_inclusive_for_small() {
        let r = dominance_analysis(&[pt("edge", 13e9, 0, 0.9), pt("big", 14e9, 0, 0.1)], 13e9);
        assert!(!r.labels[0].large);
        assert!(r.labels[1].dominated);
        assert_eq!(r.n_large, 1);
    }

    #[test]
    fn boundary_series_is_increasing() {
        let r = dominance_analysis(&random_points(4, 200), 13e9);
        assert!(r.small_boundary.windows(2).all(|w| w[0].small_best < w[1].small_best && w[0].date < w[1].date));
    }

    #[test]
    fn matches_quadratic_oracle() {
        for seed in 0..20 {
            let data = random_points(seed, 150);
            let r = dominance_analysis(&data, 13e9);
            let mut got: Vec<(String, bool)> = r.labels.iter().map(|l| (l.model_id.clone(), l.dominated)).collect();
            let mut want = brute_force(&data, 13e9);
            got.sort();
            want.sort();
            assert_eq!(got, want, "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn raising_small_scores_never_undominates(seed in 0u64..500, bump in 0.0..0.5f64, pick in 0usize..80) {
            let data = random_points(seed, 80);
            let before = dominance_analysis(&data, 13e9);
            let mut raised = data.clone();
            if raised[pick].param_count <= 13e9 {
                raised[pick].y = (raised[pick].y + bump).min(1.0);
            }
            let after = dominance_analysis(&raised, 13e9);
            for (a, b) in before.labels.iter().zip(&after.labels) {
                prop_assert_eq!(&a.model_id, &b.model_id);
                prop_assert!(!a.dominated || b.dominated);
            }
        }
    }
}
