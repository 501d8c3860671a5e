//! Monotone I-spline boundary `σ(a0 + Σ w_j I_j(z))` with `w_j = softplus(r_j) ≥ 0`.
//!
//! The M-spline basis of order `k` lives on the knot vector
//! `t = [lo×k, interior…, hi×k]` and has `J = K + k` functions, normalised to
//! unit integral. Each I-spline is the running integral of its M-spline and is
//! evaluated exactly as a tail sum of order-`k+1` B-splines on the knot vector
//! with one more repetition of each boundary knot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, check_spread, minimize, BoundaryModel, BoundaryParams, FitConfig};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::math::{logit, sigmoid, softplus, softplus_inv};

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_KNOT_COUNT: usize = 3;
const JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ISplineBasis {
    lo: f64,
    hi: f64,
    interior: Vec<f64>,
    order: usize,
    /// Order-k knot vector for the M-splines.
    t: Vec<f64>,
    /// Order-(k+1) knot vector for the I-splines.
    t_int: Vec<f64>,
}

/// All order-`order` B-splines on `t` at `x` (Cox–de Boor), with `x` in `[t[0], t[last]]`.
/// The right end is treated as belonging to the last non-empty knot span.
fn bsplines(t: &[f64], order: usize, x: f64) -> Vec<f64> {
    let m = t.len();
    let span = if x >= t[m - 1] {
        (0..m - 1).rev().find(|&i| t[i] < t[i + 1]).expect("non-degenerate knots")
    } else {
        t.partition_point(|&v| v <= x) - 1
    };
    let mut b = vec![0.0; m - 1];
    b[span] = 1.0;
    for k in 2..=order {
        for i in 0..m - k {
            let mut v = 0.0;
            let d1 = t[i + k - 1] - t[i];
            if d1 > 0.0 {
                v += (x - t[i]) / d1 * b[i];
            }
            let d2 = t[i + k] - t[i + 1];
            if d2 > 0.0 {
                v += (t[i + k] - x) / d2 * b[i + 1];
            }
            b[i] = v;
        }
    }
    b.truncate(m - order);
    b
}

impl ISplineBasis {
    /// Interior knots outside `(lo, hi)` and duplicates are dropped.
    pub fn new(lo: f64, hi: f64, interior: &[f64], order: usize) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("I-spline order must be at least 2, got {order}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::DegenerateZ(format!("I-spline range [{lo}, {hi}] is empty")));
        }
        let mut knots: Vec<f64> = interior.iter().copied().filter(|&k| k > lo && k < hi).collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let build = |mult: usize| {
            let mut t = vec![lo; mult];
            t.extend_from_slice(&knots);
            t.extend(std::iter::repeat_n(hi, mult));
            t
        };
        Ok(ISplineBasis {
            lo,
            hi,
            t: build(order),
            t_int: build(order + 1),
            interior: knots,
            order,
        })
    }

    /// Interior knots at the `i/(K+1)` quantiles of `z`, boundaries at its range.
    pub fn from_data(z: &[f64], knot_count: usize, order: usize) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::Estimator("no z-values for knot placement".into()));
        }
        let mut s = z.to_vec();
        s.sort_by(f64::total_cmp);
        let interior: Vec<f64> = (1..=knot_count)
            .map(|i| {
                let h = (s.len() - 1) as f64 * i as f64 / (knot_count + 1) as f64;
                let l = h.floor() as usize;
                s[l] + (h - l as f64) * (s[h.ceil() as usize] - s[l])
            })
            .collect();
        Self::new(s[0], s[s.len() - 1], &interior, order)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_basis(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Boundary and interior knots: `[lo, interior…, hi]`.
    pub fn knots(&self) -> Vec<f64> {
        let mut k = vec![self.lo];
        k.extend_from_slice(&self.interior);
        k.push(self.hi);
        k
    }

    /// M-spline densities at `x`; zero outside `[lo, hi]`.
    pub fn msplines(&self, x: f64) -> Vec<f64> {
        let j = self.num_basis();
        if !(x >= self.lo && x <= self.hi) {
            return vec![0.0; j];
        }
        let k = self.order;
        let b = bsplines(&self.t, k, x);
        (0..j)
            .map(|i| {
                let w = self.t[i + k] - self.t[i];
                if w > 0.0 {
                    k as f64 * b[i] / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn mspline(&self, j: usize, x: f64) -> f64 {
        self.msplines(x)[j]
    }

    /// I-spline values at `x`: 0 below `lo`, 1 above `hi`, nondecreasing between.
    pub fn isplines(&self, x: f64) -> Vec<f64> {
        let j = self.num_basis();
        if x <= self.lo {
            return vec![0.0; j];
        }
        if x >= self.hi {
            return vec![1.0; j];
        }
        let b = bsplines(&self.t_int, self.order + 1, x);
        debug_assert_eq!(b.len(), j + 1);
        let mut out = vec![0.0; j];
        let mut tail = 0.0;
        for i in (0..j).rev() {
            tail += b[i + 1];
            out[i] = tail.clamp(0.0, 1.0);
        }
        out
    }

    pub fn ispline(&self, j: usize, x: f64) -> f64 {
        self.isplines(x)[j]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ISplineParams {
    /// `[lo, interior…, hi]`.
    pub knots: Vec<f64>,
    pub order: usize,
    pub a0: f64,
    pub weights: Vec<f64>,
}

impl ISplineParams {
    pub fn basis(&self) -> Result<ISplineBasis> {
        if self.knots.len() < 2 {
            return Err(Error::Estimator("I-spline needs at least two knots".into()));
        }
        let n = self.knots.len();
        let b = ISplineBasis::new(self.knots[0], self.knots[n - 1], &self.knots[1..n - 1], self.order)?;
        if b.num_basis() != self.weights.len() {
            return Err(Error::Estimator(format!(
                "{} weights for {} basis functions",
                self.weights.len(),
                b.num_basis()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Estimator("I-spline weights must be nonnegative".into()));
        }
        Ok(b)
    }

    /// Latent `g(z) = a0 + Σ w_j I_j(z)`.
    pub fn latent(&self, z: f64) -> f64 {
        let basis = self.basis().expect("validated I-spline parameters");
        self.latent_with(&basis, z)
    }

    fn latent_with(&self, basis: &ISplineBasis, z: f64) -> f64 {
        self.a0
            + basis
                .isplines(z)
                .iter()
                .zip(&self.weights)
                .map(|(i, w)| i * w)
                .sum::<f64>()
    }

    pub fn predict(&self, z: f64) -> f64 {
        sigmoid(self.latent(z))
    }

    /// Predictions on many points, building the basis once.
    pub fn predict_many(&self, zs: &[f64]) -> Result<Vec<f64>> {
        let basis = self.basis()?;
        Ok(zs.iter().map(|&z| sigmoid(self.latent_with(&basis, z))).collect())
    }
}

struct Problem<'a> {
    /// I-spline design matrix, one row per point.
    rows: Vec<Vec<f64>>,
    ys: &'a [f64],
    loss: LossConfig,
    lambda: f64,
}

impl Problem<'_> {
    fn objective(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let j = p.len() - 1;
        let w: Vec<f64> = p[1..].iter().map(|&r| softplus(r)).collect();
        let mut total = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &y) in self.rows.iter().zip(self.ys) {
            let g = p[0] + row.iter().zip(&w).map(|(i, w)| i * w).sum::<f64>();
            let q = sigmoid(g);
            let u = y - q;
            total += self.loss.loss(u);
            let dg = -self.loss.grad(u) * q * (1.0 - q);
            grad[0] += dg;
            for k in 0..j {
                grad[k + 1] += dg * row[k];
            }
        }
        let n = self.ys.len() as f64;
        let mut ridge = 0.0;
        for k in 0..=j {
            ridge += p[k] * p[k];
            if k > 0 {
                grad[k] *= sigmoid(p[k]);
            }
            grad[k] = (grad[k] + 2.0 * self.lambda * p[k]) / n;
        }
        (total + self.lambda * ridge) / n
    }
}

pub fn fit_ispline(data: &[(f64, f64)], knot_count: usize, order: usize, cfg: &FitConfig) -> Result<BoundaryModel> {
    check_data(data, 4)?;
    check_spread(data)?;
    cfg.validate()?;
    if knot_count == 0 {
        return Err(Error::Config("I-spline needs at least one interior knot".into()));
    }
    let zs: Vec<f64> = data.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = data.iter().map(|p| p.1).collect();
    let basis = ISplineBasis::from_data(&zs, knot_count, order)?;
    let j = basis.num_basis();
    let problem = Problem {
        rows: zs.iter().map(|&z| basis.isplines(z)).collect(),
        ys: &ys,
        loss: cfg.loss,
        lambda: cfg.lambda_ridge,
    };

    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let pick = |p: f64| sorted[((sorted.len() - 1) as f64 * p).round() as usize].clamp(0.01, 0.99);
    let (floor, top) = (pick(0.1), pick(cfg.loss.tau));
    let rise = (logit(top) - logit(floor)).max(0.05) / j as f64;
    let mut base = vec![logit(floor)];
    base.extend(std::iter::repeat_n(softplus_inv(rise), j));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optimizer.seed);
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for k in 0..cfg.optimizer.restarts {
        let x0: Vec<f64> = base
            .iter()
            .map(|&v| if k == 0 { v } else { v + rng.random_range(-JITTER..=JITTER) * k as f64 })
            .collect();
        let out = minimize(|p, g| problem.objective(p, g), x0, &cfg.optimizer);
        if best.as_ref().is_none_or(|b| out.value < b.0) {
            best = Some((out.value, out.x, out.iterations));
        }
    }
    let (value, x, iterations) = best.expect("at least one restart");
    if !value.is_finite() {
        return Err(Error::numerical("fit_ispline", "objective is not finite"));
    }
    let params = ISplineParams {
        knots: basis.knots(),
        order,
        a0: x[0],
        weights: x[1..].iter().map(|&r| softplus(r)).collect(),
    };
    Ok(BoundaryModel::new(BoundaryParams::Ispline(params), cfg, value, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn basis() -> ISplineBasis {
        ISplineBasis::new(20.0, 26.0, &[21.5, 23.0, 24.0], 3).unwrap()
    }

    #[test]
    fn counts_and_limits() {
        let b = basis();
        assert_eq!(b.num_basis(), 6);
        assert_eq!(b.isplines(19.0), vec![0.0; 6]);
        assert_eq!(b.isplines(20.0), vec![0.0; 6]);
        assert_eq!(b.isplines(27.0), vec![1.0; 6]);
        assert_eq!(b.msplines(30.0), vec![0.0; 6]);
    }

    #[test]
    fn msplines_integrate_to_one() {
        let b = basis();
        for j in 0..b.num_basis() {
            // integrate piecewise between knots so Simpson sees polynomials
            let k = b.knots();
            let total: f64 = k.windows(2).map(|w| simpson(|x| b.mspline(j, x), w[0], w[1], 200)).sum();
            assert!((total - 1.0).abs() < 1e-10, "M_{j} integrates to {total}");
        }
    }

    #[test]
    fn isplines_match_simpson_quadrature() {
        for b in [basis(), ISplineBasis::new(0.0, 1.0, &[0.3], 4).unwrap()] {
            let (lo, hi) = (b.lo, b.hi);
            for j in 0..b.num_basis() {
                for g in 0..100 {
                    let x = lo + (hi - lo) * (g as f64 + 0.5) / 100.0;
                    // cumulative quadrature over knot pieces up to x
                    let mut edges: Vec<f64> = b.knots().into_iter().filter(|&k| k < x).collect();
                    edges.push(x);
                    let q: f64 = edges.windows(2).map(|w| simpson(|t| b.mspline(j, t), w[0], w[1], 400)).sum();
                    let i = b.ispline(j, x);
                    assert!((i - q).abs() < 1e-6, "I_{j}({x}) = {i}, quadrature {q}");
                }
            }
        }
    }

    #[test]
    fn zero_weights_give_constant() {
        let p = ISplineParams {
            knots: basis().knots(),
            order: 3,
            a0: 0.3,
            weights: vec![0.0; 6],
        };
        for z in [15.0, 20.0, 23.3, 30.0] {
            assert_eq!(p.predict(z), sigmoid(0.3));
        }
    }

    #[test]
    fn duplicate_knots_collapse() {
        let b = ISplineBasis::new(0.0, 1.0, &[0.5, 0.5, 0.0, 1.0], 3).unwrap();
        assert_eq!(b.knots(), [0.0, 0.5, 1.0]);
        assert_eq!(b.num_basis(), 4);
        assert!(ISplineBasis::new(1.0, 1.0, &[], 3).is_err());
        assert!(ISplineBasis::new(0.0, 1.0, &[], 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = basis();
        let zs: Vec<f64> = (0..80).map(|_| rng.random_range(20.0..26.0)).collect();
        let ys: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let prob = Problem {
            rows: zs.iter().map(|&z| b.isplines(z)).collect(),
            ys: &ys,
            loss: LossConfig::default(),
            lambda: 1e-3,
        };
        let h = 1e-6;
        for _ in 0..20 {
            let p: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut g = vec![0.0; 7];
            prob.objective(&p, &mut g);
            let mut scratch = vec![0.0; 7];
            for i in 0..7 {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (prob.objective(&up, &mut scratch) - prob.objective(&dn, &mut scratch)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-2), "i={i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn fit_tracks_upper_envelope() {
        use crate::synth::{generate, GapLaw, GeneratorSpec, DEFAULT_TASK};
        let spec = GeneratorSpec {
            n: 1500,
            gap: GapLaw::BetaGap { a: 3, b: 5 },
            seed: 17,
            ..GeneratorSpec::default()
        };
        let data = generate(&spec).unwrap().task_points(DEFAULT_TASK);
        let m = fit_ispline(&data, 3, 3, &FitConfig::default()).unwrap();
        let covered = data.iter().filter(|(z, y)| *y <= m.predict(*z).unwrap()).count() as f64;
        assert!((covered / 1500.0 - 0.98).abs() < 0.02, "coverage {}", covered / 1500.0);
        let mut prev = 0.0;
        for i in 0..=400 {
            let q = m.predict(19.0 + 8.0 * i as f64 / 400.0).unwrap();
            assert!(q >= prev && (0.0..=1.0).contains(&q));
            prev = q;
        }
        let again = fit_ispline(&data, 3, 3, &FitConfig::default()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn params_validation() {
        let mut p = ISplineParams {
            knots: basis().knots(),
            order: 3,
            a0: 0.0,
            weights: vec![0.1; 5],
        };
        assert!(p.basis().is_err());
        p.weights = vec![0.1, -0.1, 0.1, 0.1, 0.1, 0.1];
        assert!(p.basis().is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_weights_are_monotone(
            w in proptest::collection::vec(0.0f64..3.0, 6),
            a0 in -3.0f64..3.0,
        ) {
            let p = ISplineParams { knots: basis().knots(), order: 3, a0, weights: w };
            let zs: Vec<f64> = (0..=300).map(|i| 19.0 + 8.0 * i as f64 / 300.0).collect();
            let q = p.predict_many(&zs).unwrap();
            for pair in q.windows(2) {
                prop_assert!(pair[1] >= pair[0] - 1e-12);
            }
            prop_assert!(q.iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn isplines_nondecreasing_and_bounded(x1 in 19.0f64..27.0, dx in 0.0f64..2.0) {
            let b = basis();
            let a = b.isplines(x1);
            let c = b.isplines(x1 + dx);
            for (u, v) in a.iter().zip(&c) {
                prop_assert!(*v >= *u - 1e-12);
                prop_assert!((0.0..=1.0).contains(u));
            }
        }
    }
}
