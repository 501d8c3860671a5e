//! Constrained four-parameter sigmoid `y0 + L·σ(a + βz)`.
//!
//! The optimizer works on an unconstrained vector `p`:
//! `y0 = σ(p1)`, `L = (1 − y0)·σ(p2)`, `β = softplus(p3)` and
//! `a = p4 − β·z_ref`, where `z_ref` is the mean training z. Centering the
//! intercept keeps `p4` on the score scale instead of `β·z ≈ 20`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_data, check_spread, fit_binwise, minimize, BoundaryModel, BoundaryParams, FitConfig};
use crate::binning::DEFAULT_MIN_BIN;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::math::{logit, sigmoid, softplus, softplus_inv};

const INIT_PERCENTILES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const JITTER: f64 = 0.05;
/// Keeps initial floor/rise away from the saturated ends of σ.
const INIT_CLAMP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub y0: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub a: f64,
    pub beta: f64,
}

impl SigmoidParams {
    pub fn predict(&self, z: f64) -> f64 {
        self.y0 + self.l * sigmoid(self.a + self.beta * z)
    }

    /// Inflection point `z* = −a/β`, undefined for a flat curve.
    pub fn inflection(&self) -> Option<f64> {
        (self.beta > 0.0).then(|| -self.a / self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.y0, self.l, self.a, self.beta].iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&self.y0)
            && self.l >= 0.0
            && self.y0 + self.l <= 1.0 + 1e-12
            && self.beta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Estimator(format!("sigmoid parameters violate constraints: {self:?}")))
        }
    }
}

struct Problem<'a> {
    data: &'a [(f64, f64)],
    z_ref: f64,
    loss: LossConfig,
    lambda: f64,
}

impl Problem<'_> {
    fn params(&self, p: &[f64]) -> SigmoidParams {
        let y0 = sigmoid(p[0]);
        let l = (1.0 - y0) * sigmoid(p[1]);
        let beta = softplus(p[2]);
        SigmoidParams {
            y0,
            l,
            a: p[3] - beta * self.z_ref,
            beta,
        }
    }

    fn objective(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let y0 = sigmoid(p[0]);
        let r = sigmoid(p[1]);
        let l = (1.0 - y0) * r;
        let beta = softplus(p[2]);
        let dbeta = sigmoid(p[2]);
        let mut total = 0.0;
        let mut g = [0.0; 4];
        for &(z, y) in self.data {
            let dz = z - self.z_ref;
            let s = sigmoid(p[3] + beta * dz);
            let q = y0 + l * s;
            let u = y - q;
            total += self.loss.loss(u);
            // dℓ/dq = −ℓ'(u)
            let w = -self.loss.grad(u);
            let ds = l * s * (1.0 - s);
            g[0] += w * y0 * (1.0 - y0) * (1.0 - r * s);
            g[1] += w * (1.0 - y0) * r * (1.0 - r) * s;
            g[2] += w * ds * dz * dbeta;
            g[3] += w * ds;
        }
        let n = self.data.len() as f64;
        let mut ridge = 0.0;
        for i in 0..4 {
            ridge += p[i] * p[i];
            grad[i] = (g[i] + 2.0 * self.lambda * p[i]) / n;
        }
        (total + self.lambda * ridge) / n
    }
}

/// Unconstrained vector reproducing a target floor, top, slope and inflection.
fn encode(y0: f64, top: f64, beta: f64, z_star: f64, z_ref: f64) -> [f64; 4] {
    let y0 = y0.clamp(INIT_CLAMP, 1.0 - 2.0 * INIT_CLAMP);
    let rise = ((top - y0) / (1.0 - y0)).clamp(INIT_CLAMP, 1.0 - INIT_CLAMP);
    [logit(y0), logit(rise), softplus_inv(beta.max(1e-6)), -beta * (z_star - z_ref)]
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn initial_points(data: &[(f64, f64)], z_ref: f64, cfg: &FitConfig) -> Vec<[f64; 4]> {
    let mut zs: Vec<f64> = data.iter().map(|p| p.0).collect();
    zs.sort_by(f64::total_cmp);
    let mut ys: Vec<f64> = data.iter().map(|p| p.1).collect();
    ys.sort_by(f64::total_cmp);
    let span = zs[zs.len() - 1] - zs[0];
    // a transition spanning the observed range
    let beta0 = 8.0 / span;
    let floor = quantile_sorted(&ys, 0.02);
    let top = quantile_sorted(&ys, cfg.loss.tau);

    let mut inits: Vec<[f64; 4]> = INIT_PERCENTILES
        .iter()
        .map(|&p| encode(floor, top, beta0, quantile_sorted(&zs, p), z_ref))
        .collect();

    // binwise levels give a data-driven floor, top and midpoint crossing
    let bins = (data.len() / DEFAULT_MIN_BIN).clamp(2, 8);
    if let Ok(m) = fit_binwise(data, bins, DEFAULT_MIN_BIN.min(data.len() / 2).max(1), cfg) {
        if let BoundaryParams::Binwise(b) = &m.params {
            let mids = b.partition.midpoints();
            let lo = b.levels.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = b.levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let half = 0.5 * (lo + hi);
            let z_star = mids
                .iter()
                .zip(&b.levels)
                .find(|(_, &c)| c >= half)
                .map(|(m, _)| *m)
                .unwrap_or(z_ref);
            inits.push(encode(lo, hi, beta0, z_star, z_ref));
        }
    }
    if inits.len() < 5 {
        inits.push(encode(floor, top, beta0, z_ref, z_ref));
    }
    inits
}

/// Multi-start fit of the constrained sigmoid; returns the best restart.
pub fn fit_sigmoid(data: &[(f64, f64)], cfg: &FitConfig) -> Result<BoundaryModel> {
    check_data(data, 4)?;
    check_spread(data).map_err(|e| match e {
        Error::DegenerateZ(msg) => Error::DegenerateZ(format!("{msg}; fit a constant boundary instead")),
        other => other,
    })?;
    cfg.validate()?;
    let z_ref = data.iter().map(|p| p.0).sum::<f64>() / data.len() as f64;
    let problem = Problem {
        data,
        z_ref,
        loss: cfg.loss,
        lambda: cfg.lambda_ridge,
    };
    let base = initial_points(data, z_ref, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optimizer.seed);

    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for k in 0..cfg.optimizer.restarts {
        let mut x0 = base[k % base.len()];
        // later passes through the init list spread further
        let scale = JITTER * (1 + k / base.len()) as f64;
        for v in x0.iter_mut() {
            *v += rng.random_range(-scale..=scale);
        }
        let out = minimize(|p, g| problem.objective(p, g), x0.to_vec(), &cfg.optimizer);
        if best.as_ref().is_none_or(|b| out.value < b.0) {
            best = Some((out.value, out.x, out.iterations));
        }
    }
    let (value, x, iterations) = best.expect("at least one restart");
    if !value.is_finite() {
        return Err(Error::numerical("fit_sigmoid", "objective is not finite"));
    }
    let params = problem.params(&x);
    Ok(BoundaryModel::new(BoundaryParams::Sigmoid(params), cfg, value, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::OptimizerConfig;

    fn truth() -> SigmoidParams {
        SigmoidParams {
            y0: 0.1,
            l: 0.8,
            a: -24.0 * 1.5,
            beta: 1.5,
        }
    }

    #[test]
    fn closed_form_values() {
        let flat = SigmoidParams { beta: 0.0, ..truth() };
        assert_eq!(flat.predict(10.0), flat.predict(30.0));
        assert!((flat.predict(0.0) - (0.1 + 0.8 * sigmoid(-36.0))).abs() < 1e-15);
        let t = truth();
        assert!((t.predict(24.0) - 0.5).abs() < 1e-15);
        assert!((t.predict(1e6) - 0.9).abs() < 1e-15);
        assert_eq!(t.inflection(), Some(24.0));
        assert_eq!(flat.inflection(), None);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<(f64, f64)> = (0..60)
            .map(|_| (rng.random_range(20.0..26.0), rng.random_range(0.0..1.0)))
            .collect();
        let prob = Problem {
            data: &data,
            z_ref: 23.0,
            loss: LossConfig::default(),
            lambda: 1e-3,
        };
        let h = 1e-6;
        for _ in 0..50 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut g = vec![0.0; 4];
            prob.objective(&p, &mut g);
            for i in 0..4 {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[i] += h;
                dn[i] -= h;
                let mut scratch = vec![0.0; 4];
                let fd = (prob.objective(&up, &mut scratch) - prob.objective(&dn, &mut scratch)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-2), "i={i} {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn reparameterization_respects_constraints() {
        let prob = Problem {
            data: &[],
            z_ref: 22.0,
            loss: LossConfig::default(),
            lambda: 0.0,
        };
        for &v in &[-40.0, -3.0, 0.0, 3.0, 40.0] {
            let s = prob.params(&[v, -v, v, v]);
            s.validate().unwrap();
            for i in 0..100 {
                let q = s.predict(15.0 + 0.15 * i as f64);
                assert!((0.0..=1.0).contains(&q));
            }
        }
    }

    #[test]
    fn noise_free_curve_is_recovered_at_sharp_kappa() {
        let t = truth();
        let data: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let z = 20.0 + 8.0 * i as f64 / 199.0;
                (z, t.predict(z))
            })
            .collect();
        let mut cfg = FitConfig::default();
        cfg.loss.kappa = 1000.0;
        cfg.optimizer = OptimizerConfig {
            iterations: 5000,
            ..OptimizerConfig::default()
        };
        let m = fit_sigmoid(&data, &cfg).unwrap();
        let worst = (0..50)
            .map(|i| 20.0 + 8.0 * i as f64 / 49.0)
            .map(|z| (m.predict(z).unwrap() - t.predict(z)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.005, "max error {worst}");
    }

    #[test]
    fn noise_free_curve_at_default_kappa_sits_above_by_smoothing_offset() {
        let t = truth();
        let data: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let z = 20.0 + 8.0 * i as f64 / 199.0;
                (z, t.predict(z))
            })
            .collect();
        let m = fit_sigmoid(&data, &FitConfig::default()).unwrap();
        let offset = logit(0.98) / 50.0;
        for i in 0..50 {
            let z = 20.5 + 7.0 * i as f64 / 49.0;
            let d = m.predict(z).unwrap() - t.predict(z);
            assert!((d - offset).abs() < 0.02, "z={z}: {d} vs {offset}");
        }
    }

    #[test]
    fn two_layer_data_tracks_upper_layer() {
        let t = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<(f64, f64)> = (0..2000)
            .map(|_| {
                let z = rng.random_range(20.0..28.0);
                let q = t.predict(z);
                let y = if rng.random::<f64>() < 0.02 { q } else { (q - 0.2).max(0.0) };
                (z, y)
            })
            .collect();
        let m = fit_sigmoid(&data, &FitConfig::default()).unwrap();
        for i in 0..20 {
            let z = 20.5 + 7.0 * i as f64 / 19.0;
            let p = m.predict(z).unwrap();
            assert!(p > t.predict(z) - 0.2 + 0.05, "z={z}: {p} hugs the bulk");
            assert!(p <= t.predict(z) + 0.1);
        }
        let covered = data.iter().filter(|(z, y)| *y <= m.predict(*z).unwrap()).count();
        let cov = covered as f64 / data.len() as f64;
        assert!((cov - 0.98).abs() <= 0.02, "coverage {cov}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<(f64, f64)> = (0..300)
            .map(|_| (rng.random_range(19.0..27.0), rng.random::<f64>()))
            .collect();
        let cfg = FitConfig::default().with_seed(42);
        let a = fit_sigmoid(&data, &cfg).unwrap();
        let b = fit_sigmoid(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_sigmoid().unwrap().y0.to_bits(), b.as_sigmoid().unwrap().y0.to_bits());
    }

    #[test]
    fn degenerate_inputs_error() {
        let same_z = [(22.0, 0.1), (22.0, 0.2), (22.0, 0.3), (22.0, 0.4)];
        assert!(matches!(
            fit_sigmoid(&same_z, &FitConfig::default()),
            Err(Error::DegenerateZ(_))
        ));
        assert!(fit_sigmoid(&[(1.0, 0.1), (2.0, 0.2)], &FitConfig::default()).is_err());
    }

    #[test]
    fn serializes_with_short_field_names() {
        let v = serde_json::to_value(truth()).unwrap();
        assert!(v.get("L").is_some() && v.get("y0").is_some() && v.get("beta").is_some());
    }
}
