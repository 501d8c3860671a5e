//! Seeded synthetic records with a known conditional quantile, plus
//! brute-force oracles used by the test suites.
//!
//! # Random stream
//!
//! A generator seeded with `s` uses `ChaCha8Rng::seed_from_u64(s)` (the
//! `rand_chacha` stream cipher RNG, counter based and stable across
//! platforms). Uniform variates are `f64` in `[0, 1)` drawn with
//! `Rng::random::<f64>()`. For each record `i = 0..n`, in order, it draws:
//!
//! 1. `z = lo + (hi − lo)·u`,
//! 2. the release day, uniform over the inclusive date range,
//! 3. `u_e`; the point exceeds the boundary when `u_e < exceed_prob`,
//! 4. for an exceedance, one uniform for the bump `U(0, bump_max)`;
//!    otherwise the gap draws (`a + b − 1` uniforms for a Beta(a, b) gap, one
//!    for a uniform gap),
//! 5. tokens per parameter, uniform over its range.
//!
//! Scores are `min(1, q + bump)` above the boundary `q` and `max(0, q − gap)`
//! below it, so the conditional `(1 − exceed_prob)`-quantile is exactly `q`.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::binning::BinPartition;
use crate::design::{information_and_variance, phi_bal, DesignCandidate, DesignConfig};
use crate::error::{Error, Result};
use crate::estimators::SigmoidParams;
use crate::records::{Dataset, Flags, ModelRecord, Score, ZInterval};

pub const DEFAULT_TASK: &str = "synthetic";

/// Distribution of the gap below the boundary at `z`, whose boundary value is `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum GapLaw {
    /// `gap = q·B` with `B ~ Beta(a, b)`, integer shapes.
    BetaGap { a: u32, b: u32 },
    /// `gap ~ U(0, max_gap)`; `max_gap = 0` puts every point on the boundary.
    UniformGap { max_gap: f64 },
}

impl Default for GapLaw {
    fn default() -> Self {
        GapLaw::BetaGap { a: 2, b: 5 }
    }
}

impl GapLaw {
    fn sample(&self, q: f64, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            GapLaw::BetaGap { a, b } => {
                // a-th smallest of a + b − 1 uniforms is Beta(a, b)
                let mut u: Vec<f64> = (0..a + b - 1).map(|_| rng.random::<f64>()).collect();
                u.sort_by(f64::total_cmp);
                q * u[a as usize - 1]
            }
            GapLaw::UniformGap { max_gap } => max_gap * rng.random::<f64>(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            GapLaw::BetaGap { a, b } if a == 0 || b == 0 => {
                Err(Error::Synth("beta gap shapes must be at least 1".into()))
            }
            GapLaw::UniformGap { max_gap } if !(max_gap >= 0.0 && max_gap.is_finite()) => {
                Err(Error::Synth(format!("uniform gap width must be nonnegative, got {max_gap}")))
            }
            _ => Ok(()),
        }
    }
}

/// Boundary lift applied to records released on or after `from`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub from: NaiveDate,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub truth: SigmoidParams,
    pub z_range: ZInterval,
    pub n: usize,
    #[serde(default)]
    pub gap: GapLaw,
    pub exceed_prob: f64,
    /// Width of the uniform bump above the boundary for exceedances.
    pub bump_max: f64,
    #[serde(default)]
    pub drift: Option<Drift>,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// Training tokens per parameter, used to derive parameter counts from `C ≈ 6·N·D`.
    pub tokens_per_param: (f64, f64),
    pub task: String,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            truth: SigmoidParams {
                y0: 0.1,
                l: 0.7,
                a: -1.5 * 23.0,
                beta: 1.5,
            },
            z_range: ZInterval { lo: 20.0, hi: 26.0 },
            n: 2000,
            gap: GapLaw::default(),
            exceed_prob: 0.02,
            bump_max: 0.03,
            drift: None,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2024, 12, 31).expect("valid date"),
            tokens_per_param: (10.0, 100.0),
            task: DEFAULT_TASK.into(),
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate().map_err(|e| Error::Synth(e.to_string()))?;
        if !(self.z_range.lo <= self.z_range.hi && self.z_range.lo.is_finite() && self.z_range.hi.is_finite()) {
            return Err(Error::Synth("z_range must be a finite interval".into()));
        }
        if !(0.0..1.0).contains(&self.exceed_prob) {
            return Err(Error::Synth(format!("exceed_prob must lie in [0, 1), got {}", self.exceed_prob)));
        }
        if !(self.bump_max >= 0.0 && self.bump_max.is_finite()) {
            return Err(Error::Synth("bump_max must be nonnegative".into()));
        }
        if self.start_date > self.end_date {
            return Err(Error::Synth("start_date is after end_date".into()));
        }
        let (t0, t1) = self.tokens_per_param;
        if !(t0 > 0.0 && t0 <= t1 && t1.is_finite()) {
            return Err(Error::Synth("tokens_per_param must be a positive range".into()));
        }
        if let Some(d) = &self.drift {
            if !d.offset.is_finite() {
                return Err(Error::Synth("drift offset must be finite".into()));
            }
        }
        if self.task.is_empty() {
            return Err(Error::Synth("task name is empty".into()));
        }
        self.gap.validate()
    }

    /// Boundary value at `z` for a record released on `date`, drift included.
    pub fn boundary(&self, z: f64, date: NaiveDate) -> f64 {
        let base = self.truth.predict(z);
        match &self.drift {
            Some(d) if date >= d.from => (base + d.offset).clamp(0.0, 1.0),
            _ => base,
        }
    }

    /// Quantile level at which [`GeneratorSpec::boundary`] is the exact conditional quantile.
    pub fn quantile_level(&self) -> f64 {
        1.0 - self.exceed_prob
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let days = (spec.end_date - spec.start_date).num_days();
    let (t0, t1) = spec.tokens_per_param;
    let width = spec.z_range.hi - spec.z_range.lo;
    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let z = spec.z_range.lo + width * rng.random::<f64>();
        let date = spec.start_date + chrono::Duration::days(rng.random_range(0..=days));
        let q = spec.boundary(z, date);
        let y = if rng.random::<f64>() < spec.exceed_prob {
            (q + spec.bump_max * rng.random::<f64>()).min(1.0)
        } else {
            (q - spec.gap.sample(q, &mut rng)).max(0.0)
        };
        let ratio = t0 + (t1 - t0) * rng.random::<f64>();
        let flops = 10f64.powf(z);
        let params = (flops / (6.0 * ratio)).sqrt();
        let mut scores = BTreeMap::new();
        scores.insert(spec.task.clone(), Score::new(y)?);
        records.push(ModelRecord {
            model_id: format!("synth-{i:05}"),
            base_model_id: format!("synth-base-{i:05}"),
            pretraining_flops: Some(flops),
            param_count: Some(params),
            release_date: date,
            scores,
            flags: Flags {
                official: true,
                pretrained: false,
            },
        });
    }
    Dataset::with_tasks(records, vec![spec.task.clone()])
}

/// The analytic conditional quantile written next to generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSidecar {
    pub level: f64,
    pub formula: String,
    pub truth: SigmoidParams,
    pub drift: Option<Drift>,
    pub z_range: ZInterval,
    /// The quantile on an even 50-point grid over `z_range`, before any drift.
    pub grid: Vec<[f64; 2]>,
}

impl QuantileSidecar {
    pub fn from_spec(spec: &GeneratorSpec) -> Self {
        let (lo, hi) = (spec.z_range.lo, spec.z_range.hi);
        let grid = (0..50)
            .map(|i| {
                let z = lo + (hi - lo) * i as f64 / 49.0;
                [z, spec.truth.predict(z)]
            })
            .collect();
        QuantileSidecar {
            level: spec.quantile_level(),
            formula: "min(1, max(0, y0 + L*sigmoid(a + beta*z) + drift_offset))".into(),
            truth: spec.truth,
            drift: spec.drift.clone(),
            z_range: spec.z_range,
            grid,
        }
    }
}

/// Order statistic at index `ceil(τn) − 1` (clamped) of the sorted values.
pub fn empirical_quantile(y: &[f64], tau: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Synth("empirical quantile of an empty sample".into()));
    }
    let mut s = y.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    Ok(s[k])
}

/// Largest pool [`exhaustive_design`] will enumerate.
pub const MAX_EXHAUSTIVE_POOL: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveDesign {
    pub selected: Vec<String>,
    pub total_cost: f64,
    pub budget: f64,
    pub objective_value: f64,
    pub feasible_subsets: usize,
}

/// Brute-force maximiser of `Φ_λ` over every budget-feasible subset of a small
/// pool. Each subset is scored from scratch through
/// [`information_and_variance`]; ties keep the subset enumerated first.
pub fn exhaustive_design(
    pool: &[DesignCandidate],
    theta: &SigmoidParams,
    cfg: &DesignConfig,
    bins: &BinPartition,
    lambda: f64,
) -> Result<ExhaustiveDesign> {
    if pool.len() > MAX_EXHAUSTIVE_POOL {
        return Err(Error::Design(format!(
            "exhaustive search over {} candidates exceeds the limit of {MAX_EXHAUSTIVE_POOL}",
            pool.len()
        )));
    }
    cfg.validate(bins.num_bins())?;
    let budget = cfg.alpha / 100.0 * pool.iter().map(|c| c.cost).sum::<f64>();
    let mids = bins.midpoints();
    let mut best: Option<(f64, u32, f64)> = None;
    let mut feasible = 0;
    for mask in 0u32..(1 << pool.len()) {
        let subset: Vec<DesignCandidate> = (0..pool.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| pool[i].clone())
            .collect();
        let cost: f64 = subset.iter().map(|c| c.cost).sum();
        if !crate::design::affordable(cost, budget) {
            continue;
        }
        feasible += 1;
        let info = match information_and_variance(&subset, theta, cfg, &mids) {
            Ok(iv) => iv.phi_info,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        let mut counts = vec![0; bins.num_bins()];
        for c in &subset {
            counts[c.bin] += 1;
        }
        let value = info + lambda * phi_bal(&counts, cfg.epsilon_balance);
        if best.is_none_or(|b| value > b.0) {
            best = Some((value, mask, cost));
        }
    }
    let (objective_value, mask, total_cost) =
        best.ok_or_else(|| Error::Design("no feasible subset has a nonsingular information matrix".into()))?;
    Ok(ExhaustiveDesign {
        selected: (0..pool.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| pool[i].model_id.clone())
            .collect(),
        total_cost,
        budget,
        objective_value,
        feasible_subsets: feasible,
    })
}
