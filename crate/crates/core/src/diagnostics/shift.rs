//! Cross-benchmark contamination shift test:
//!
//! ```text
//! logit(0.01 y) = α + β logit(0.01 m) + γ 1{post} + ε
//! ```
//!
//! fitted by OLS with homoskedastic standard errors; `γ` is tested with a
//! two-sided Student-t test on `n − 3` degrees of freedom.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, student_t_quantile, student_t_two_sided_p};

/// Singular-value ratio above which the design counts as collinear.
const MAX_CONDITION: f64 = 1e10;

/// Paired percentages in `[0, 100]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftPair {
    /// Score on the reference task.
    pub m: f64,
    /// Score on the target task.
    pub y: f64,
    pub post: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftTestResult {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub gamma_se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// 95% confidence interval for `γ`.
    pub gamma_ci: [f64; 2],
    pub df: usize,
    pub n: usize,
    pub n_post: usize,
    /// Pairs dropped because `m` or `y` sits at 0 or 100.
    pub excluded_boundary: usize,
    /// Pairs dropped by the overlap restriction.
    pub excluded_range: usize,
    /// Overlapping range of `m` used when restricting.
    pub restricted_range: Option<[f64; 2]>,
}

pub fn contamination_shift_test(pairs: &[ShiftPair], restrict: bool) -> Result<ShiftTestResult> {
    if pairs.iter().any(|p| !(0.0..=100.0).contains(&p.m) || !(0.0..=100.0).contains(&p.y)) {
        return Err(Error::Diagnostics("shift test scores must be percentages in [0, 100]".into()));
    }
    let inside = |v: f64| v > 0.0 && v < 100.0;
    let mut kept: Vec<ShiftPair> = pairs.iter().copied().filter(|p| inside(p.m) && inside(p.y)).collect();
    let excluded_boundary = pairs.len() - kept.len();

    let group_range = |post: bool, kept: &[ShiftPair]| {
        kept.iter()
            .filter(|p| p.post == post)
            .fold(None, |acc: Option<(f64, f64)>, p| match acc {
                None => Some((p.m, p.m)),
                Some((lo, hi)) => Some((lo.min(p.m), hi.max(p.m))),
            })
    };
    let (Some(pre_r), Some(post_r)) = (group_range(false, &kept), group_range(true, &kept)) else {
        return Err(Error::Diagnostics("shift test needs both pre and post pairs".into()));
    };

    let mut excluded_range = 0;
    let mut restricted_range = None;
    if restrict {
        let lo = pre_r.0.max(post_r.0);
        let hi = pre_r.1.min(post_r.1);
        let before = kept.len();
        kept.retain(|p| p.m >= lo && p.m <= hi);
        excluded_range = before - kept.len();
        restricted_range = Some([lo, hi]);
    }

    let n = kept.len();
    let n_post = kept.iter().filter(|p| p.post).count();
    if n <= 3 || n_post == 0 || n_post == n {
        return Err(Error::Diagnostics(format!(
            "shift test needs more than 3 pairs with both groups present; have {n} ({n_post} post)"
        )));
    }

    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => logit(0.01 * kept[i].m),
        _ => f64::from(u8::from(kept[i].post)),
    });
    let yv = DVector::from_iterator(n, kept.iter().map(|p| logit(0.01 * p.y)));

    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let condition = s.max() / s.min();
    if !(condition < MAX_CONDITION) {
        return Err(Error::Collinear { condition });
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V");
    // coef = V S⁻¹ Uᵀ y ; (XᵀX)⁻¹ = V S⁻² Vᵀ
    let uty = u.transpose() * &yv;
    let scaled = DVector::from_iterator(3, (0..3).map(|k| uty[k] / s[k]));
    let coef = v_t.transpose() * scaled;
    let resid = &yv - &x * &coef;
    let df = n - 3;
    let sigma2 = resid.norm_squared() / df as f64;
    let var_gamma: f64 = (0..3).map(|k| (v_t[(k, 2)] / s[k]).powi(2)).sum::<f64>() * sigma2;
    let gamma_se = var_gamma.sqrt();
    let gamma_hat = coef[2];
    let t_stat = if gamma_se > 0.0 {
        gamma_hat / gamma_se
    } else if gamma_hat == 0.0 {
        0.0
    } else {
        gamma_hat.signum() * f64::INFINITY
    };
    let crit = student_t_quantile(0.975, df as f64);
    Ok(ShiftTestResult {
        alpha_hat: coef[0],
        beta_hat: coef[1],
        gamma_hat,
        gamma_se,
        t_stat,
        p_value: student_t_two_sided_p(t_stat, df as f64),
        gamma_ci: [gamma_hat - crit * gamma_se, gamma_hat + crit * gamma_se],
        df,
        n,
        n_post,
        excluded_boundary,
        excluded_range,
        restricted_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sigmoid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Pairs from the model itself with Gaussian noise in logit space.
    fn simulate(gamma: f64, n: usize, seed: u64) -> Vec<ShiftPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.4).unwrap();
        (0..n)
            .map(|i| {
                let post = i % 3 == 0;
                let lm: f64 = rng.random_range(-2.0..2.0);
                let ly = 0.2 + 0.9 * lm + if post { gamma } else { 0.0 } + noise.sample(&mut rng);
                ShiftPair {
                    m: 100.0 * sigmoid(lm),
                    y: 100.0 * sigmoid(ly),
                    post,
                }
            })
            .collect()
    }

    /// Textbook normal-equation OLS, as an independent oracle.
    fn normal_equations(pairs: &[ShiftPair]) -> [f64; 3] {
        let mut xtx = [[0.0; 3]; 3];
        let mut xty = [0.0; 3];
        for p in pairs {
            let r = [1.0, logit(0.01 * p.m), if p.post { 1.0 } else { 0.0 }];
            let y = logit(0.01 * p.y);
            for i in 0..3 {
                xty[i] += r[i] * y;
                for j in 0..3 {
                    xtx[i][j] += r[i] * r[j];
                }
            }
        }
        let m = nalgebra::Matrix3::from_fn(|i, j| xtx[i][j]);
        let b = m.lu().solve(&nalgebra::Vector3::from(xty)).unwrap();
        [b[0], b[1], b[2]]
    }

    #[test]
    fn identity_pairs_give_identity_fit() {
        let pairs: Vec<ShiftPair> = (1..40)
            .map(|i| {
                let v = 2.4 * i as f64;
                ShiftPair {
                    m: v,
                    y: v,
                    post: i % 2 == 0,
                }
            })
            .collect();
        let r = contamination_shift_test(&pairs, false).unwrap();
        assert!(r.alpha_hat.abs() < 1e-10);
        assert!((r.beta_hat - 1.0).abs() < 1e-10);
        assert!(r.gamma_hat.abs() < 1e-10);
    }

    #[test]
    fn coefficients_match_normal_equations() {
        let pairs = simulate(0.3, 120, 9);
        let r = contamination_shift_test(&pairs, false).unwrap();
        let b = normal_equations(&pairs);
        assert!((r.alpha_hat - b[0]).abs() < 1e-9);
        assert!((r.beta_hat - b[1]).abs() < 1e-9);
        assert!((r.gamma_hat - b[2]).abs() < 1e-9);
        assert_eq!(r.df, 117);
        let expected_p = student_t_two_sided_p(r.t_stat, 117.0);
        assert_eq!(r.p_value, expected_p);
    }

    #[test]
    fn p_value_matches_reference_distribution() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let r = contamination_shift_test(&simulate(0.15, 60, 4), false).unwrap();
        let t = StudentsT::new(0.0, 1.0, r.df as f64).unwrap();
        let want = 2.0 * (1.0 - t.cdf(r.t_stat.abs()));
        assert!((r.p_value - want).abs() < 1e-9);
    }

    #[test]
    fn boundary_scores_excluded_and_counted() {
        let mut pairs = simulate(0.0, 50, 1);
        pairs.push(ShiftPair {
            m: 0.0,
            y: 40.0,
            post: true,
        });
        pairs.push(ShiftPair {
            m: 40.0,
            y: 100.0,
            post: false,
        });
        let r = contamination_shift_test(&pairs, false).unwrap();
        assert_eq!(r.excluded_boundary, 2);
        assert_eq!(r.n, 50);
    }

    #[test]
    fn restriction_keeps_overlap_only() {
        let mut pairs = simulate(0.0, 90, 2);
        for p in pairs.iter_mut().filter(|p| p.post) {
            p.m = 30.0 + 0.5 * p.m;
        }
        let r = contamination_shift_test(&pairs, true).unwrap();
        let [lo, hi] = r.restricted_range.unwrap();
        let kept = pairs.iter().filter(|p| p.m >= lo && p.m <= hi).count();
        assert_eq!(r.n, kept);
        assert_eq!(r.excluded_range, 90 - kept);
        let pre_min = pairs.iter().filter(|p| !p.post).map(|p| p.m).fold(f64::INFINITY, f64::min);
        let post_min = pairs.iter().filter(|p| p.post).map(|p| p.m).fold(f64::INFINITY, f64::min);
        assert_eq!(lo, pre_min.max(post_min));
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let pairs: Vec<ShiftPair> = simulate(0.0, 30, 3).into_iter().map(|p| ShiftPair { post: false, ..p }).collect();
        assert!(contamination_shift_test(&pairs, false).is_err());
        // m constant makes the slope unidentifiable
        let pairs: Vec<ShiftPair> = simulate(0.0, 30, 3).into_iter().map(|p| ShiftPair { m: 50.0, ..p }).collect();
        assert!(matches!(
            contamination_shift_test(&pairs, false),
            Err(Error::Collinear { .. })
        ));
        assert!(contamination_shift_test(&[ShiftPair { m: 120.0, y: 5.0, post: true }], false).is_err());
    }

    #[test]
    fn interval_covers_injected_shift() {
        let covered = (0..200)
            .filter(|&seed| {
                let r = contamination_shift_test(&simulate(0.5, 90, seed), false).unwrap();
                r.gamma_ci[0] <= 0.5 && 0.5 <= r.gamma_ci[1]
            })
            .count();
        assert!(covered >= 180, "{covered} of 200");
    }

    proptest! {
        #[test]
        fn relabelling_groups_flips_gamma(seed in 0u64..1000) {
            let pairs = simulate(0.3, 60, seed);
            let flipped: Vec<ShiftPair> = pairs.iter().map(|p| ShiftPair { post: !p.post, ..*p }).collect();
            let a = contamination_shift_test(&pairs, false).unwrap();
            let b = contamination_shift_test(&flipped, false).unwrap();
            prop_assert!((a.gamma_hat + b.gamma_hat).abs() < 1e-9);
            prop_assert!((a.t_stat.abs() - b.t_stat.abs()).abs() < 1e-7);
            prop_assert!((a.beta_hat - b.beta_hat).abs() < 1e-9);
        }
    }
}
