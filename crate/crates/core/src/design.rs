//! Budget-constrained balanced I-optimal selection of models to evaluate.
//!
//! For a nominal sigmoid `θ0` every candidate contributes the outer product of
//! its Jacobian `j(z) = [1, σ, Lσ(1−σ), Lσ(1−σ)z]` to the information matrix
//! `M(S)`. With `K = (ηI + M(S))⁻¹`, the predictive variance at bin midpoint
//! `z̃_b` is `v_b = j_bᵀ K j_b` and the objective is
//!
//! ```text
//! Φ_λ(S) = −Σ_b w_b v_b + λ Σ_b log(n_b(S) + ε)
//! ```
//!
//! maximised greedily by gain per unit cost, followed by 1-exchange polishing.
//!
//! Internally the Jacobian is expressed for the centred intercept
//! `a_c = a + β·z_c` (`z_c` = mean bin midpoint), i.e. `j' = T j` with the
//! fourth component replaced by `Lσ(1−σ)(z − z_c)`. The ridge becomes
//! `η T Tᵀ`, so `j_bᵀ K j_b` is unchanged while the maintained inverse
//! `K' = (η T Tᵀ + Σ j' j'ᵀ)⁻¹` is far better conditioned than `K`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::binning::{build_bins, BinPartition, DEFAULT_BINS, SMALL_POOL_BINS};
use crate::error::{Error, Result};
use crate::estimators::SigmoidParams;
use crate::math::sigmoid;

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_ETA: f64 = 1e-9;
pub const DEFAULT_POLISH: usize = 25;
/// Pools smaller than this use [`SMALL_POOL_BINS`] bins for midpoints.
pub const SMALL_POOL: usize = 200;
/// Auto λ is this fraction of the largest initial information gain.
const AUTO_LAMBDA_FRACTION: f64 = 1e-3;
/// Inverse condition number below which `ηI + M` is treated as singular.
const MIN_RCOND: f64 = 1e-15;

pub type Mat = Matrix4<f64>;
pub type Vec4 = Vector4<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignCandidate {
    pub model_id: String,
    pub z: f64,
    pub cost: f64,
    pub bin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Budget as a percentage of the pool's total cost.
    pub alpha: f64,
    /// Weight of the balance term; `None` picks it from the initial gains.
    pub lambda_balance: Option<f64>,
    pub epsilon_balance: f64,
    pub eta_ridge: f64,
    /// Per-bin weights summing to one; `None` means uniform.
    pub bin_weights: Option<Vec<f64>>,
    pub polish_exchanges: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            alpha: 100.0,
            lambda_balance: None,
            epsilon_balance: DEFAULT_EPSILON,
            eta_ridge: DEFAULT_ETA,
            bin_weights: None,
            polish_exchanges: DEFAULT_POLISH,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self, num_bins: usize) -> Result<()> {
        if !(0.0..=100.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 100], got {}", self.alpha)));
        }
        if let Some(l) = self.lambda_balance {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda_balance must be nonnegative, got {l}")));
            }
        }
        if !(self.epsilon_balance > 0.0) || !(self.eta_ridge > 0.0) {
            return Err(Error::Config("epsilon and eta must be positive".into()));
        }
        if let Some(w) = &self.bin_weights {
            if w.len() != num_bins {
                return Err(Error::Config(format!("{} bin weights for {num_bins} bins", w.len())));
            }
            if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config("bin weights must be nonnegative and sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn weights(&self, num_bins: usize) -> Vec<f64> {
        self.bin_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / num_bins as f64; num_bins])
    }
}

/// `∂q/∂(y0, L, a, β)` of the sigmoid boundary at `z`.
pub fn jacobian(z: f64, theta: &SigmoidParams) -> Vec4 {
    let s = sigmoid(theta.a + theta.beta * z);
    let d = theta.l * s * (1.0 - s);
    Vec4::new(1.0, s, d, d * z)
}

/// Midpoint bins for a candidate pool: 4 bins below [`SMALL_POOL`] candidates,
/// 8 otherwise, unless `bins` is given. Every bin keeps at least one candidate.
pub fn pool_bins(z: &[f64], bins: Option<usize>) -> Result<BinPartition> {
    let b = bins.unwrap_or(if z.len() < SMALL_POOL { SMALL_POOL_BINS } else { DEFAULT_BINS });
    build_bins(z, b, 1)
}

/// `(model_id, z, param_count)` rows for the records with known compute and
/// parameter count, in dataset order.
pub fn candidate_rows(d: &crate::records::Dataset) -> Vec<(String, f64, f64)> {
    d.records()
        .iter()
        .filter_map(|r| Some((r.model_id.clone(), r.log_compute()?, r.param_count?)))
        .collect()
}

/// Candidates with bins assigned from `bins`.
pub fn make_candidates(rows: &[(String, f64, f64)], bins: &BinPartition) -> Result<Vec<DesignCandidate>> {
    rows.iter()
        .map(|(id, z, cost)| {
            if !(*cost > 0.0 && cost.is_finite()) {
                return Err(Error::Design(format!("candidate `{id}` has non-positive cost {cost}")));
            }
            let bin = bins
                .assign(*z)
                .index()
                .ok_or_else(|| Error::Design(format!("candidate `{id}` at z = {z} is outside the bins")))?;
            Ok(DesignCandidate {
                model_id: id.clone(),
                z: *z,
                cost: *cost,
                bin,
            })
        })
        .collect()
}

/// `(R + Σ j jᵀ)⁻¹` by direct (Cholesky) inversion, with a condition check.
pub fn direct_inverse(js: &[Vec4], ridge: &Mat) -> Result<Mat> {
    let mut m = *ridge;
    for j in js {
        m += j * j.transpose();
    }
    let eig = m.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = hi / lo;
    if !(lo > 0.0) || lo / hi < MIN_RCOND {
        return Err(Error::SingularInformation { condition });
    }
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularInformation { condition })
}

/// Change of basis to the centred intercept: `T = I − c·e₃e₂ᵀ`.
fn centring(c: f64) -> Mat {
    let mut t = Mat::identity();
    t[(3, 2)] = -c;
    t
}

/// Rank-one update of `K = (ηI + M)⁻¹` after adding `u uᵀ` to `M`.
/// Returns the new inverse, `v = K u` and `1 + uᵀ v`.
pub fn sherman_morrison(k: &Mat, u: &Vec4) -> (Mat, Vec4, f64) {
    let v = k * u;
    let denom = 1.0 + u.dot(&v);
    (k - v * v.transpose() / denom, v, denom)
}

/// Information gain `vᵀ A v / (1 + uᵀ v)` of adding `u`: the decrease of `tr(A K)`.
pub fn delta_info(k: &Mat, a: &Mat, u: &Vec4) -> f64 {
    let v = k * u;
    v.dot(&(a * v)) / (1.0 + u.dot(&v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoVariance {
    /// `Σ_θ = (ηI + M(S))⁻¹`, row-major.
    pub sigma: [[f64; 4]; 4],
    pub variances: Vec<f64>,
    /// `−Σ_b w_b v_b`.
    pub phi_info: f64,
}

pub fn information_and_variance(
    s: &[DesignCandidate],
    theta: &SigmoidParams,
    cfg: &DesignConfig,
    midpoints: &[f64],
) -> Result<InfoVariance> {
    if midpoints.is_empty() {
        return Err(Error::Design("no bin midpoints".into()));
    }
    let c = midpoints.iter().sum::<f64>() / midpoints.len() as f64;
    let t = centring(c);
    let js: Vec<Vec4> = s.iter().map(|cand| t * jacobian(cand.z, theta)).collect();
    let k_c = direct_inverse(&js, &(t * t.transpose() * cfg.eta_ridge))?;
    let w = cfg.weights(midpoints.len());
    let variances: Vec<f64> = midpoints
        .iter()
        .map(|&z| {
            let j = t * jacobian(z, theta);
            j.dot(&(k_c * j))
        })
        .collect();
    let phi_info = -variances.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>();
    let k = t.transpose() * k_c * t;
    let mut sigma = [[0.0; 4]; 4];
    for (r, row) in sigma.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = k[(r, c)];
        }
    }
    Ok(InfoVariance {
        sigma,
        variances,
        phi_info,
    })
}

/// `Σ_b log(n_b + ε)`.
pub fn phi_bal(counts: &[usize], epsilon: f64) -> f64 {
    counts.iter().map(|&n| (n as f64 + epsilon).ln()).sum()
}

fn delta_bal(n: usize, epsilon: f64) -> f64 {
    (n as f64 + 1.0 + epsilon).ln() - (n as f64 + epsilon).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Anchor,
    Add,
    Swap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub kind: StepKind,
    pub model_id: String,
    /// Model swapped out, for exchange steps.
    pub removed: Option<String>,
    pub delta_info: f64,
    pub delta_bal: f64,
    /// Gain per unit cost for additions; objective increase for exchanges.
    pub gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSelection {
    pub selected: Vec<String>,
    pub total_cost: f64,
    pub budget: f64,
    /// `Φ_λ` of the final set, evaluated directly.
    pub objective_value: f64,
    pub phi_info: f64,
    pub phi_bal: f64,
    /// The balance weight actually used (resolved when auto).
    pub lambda_balance: f64,
    pub per_bin_counts: Vec<usize>,
    /// Not every anchor fit in the budget; the largest affordable prefix was kept.
    pub anchors_truncated: bool,
    /// Fewer than two distinct z-values; the cheapest candidate was the only anchor.
    pub degenerate_anchors: bool,
    pub trace: Vec<TraceStep>,
}

/// Direct evaluation of `Φ_λ` for sets of pool indices, in the centred basis.
pub struct Evaluator<'a> {
    pool: &'a [DesignCandidate],
    js: Vec<Vec4>,
    a: Mat,
    ridge: Mat,
    num_bins: usize,
    epsilon: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(pool: &'a [DesignCandidate], theta: &SigmoidParams, cfg: &DesignConfig, bins: &BinPartition) -> Result<Self> {
        cfg.validate(bins.num_bins())?;
        if let Some(c) = pool.iter().find(|c| c.bin >= bins.num_bins()) {
            return Err(Error::Design(format!("candidate `{}` has bin {} of {}", c.model_id, c.bin, bins.num_bins())));
        }
        theta.validate()?;
        let mids = bins.midpoints();
        let t = centring(mids.iter().sum::<f64>() / mids.len() as f64);
        let weights = cfg.weights(bins.num_bins());
        let a = mids.iter().zip(&weights).fold(Mat::zeros(), |acc, (&z, &w)| {
            let j = t * jacobian(z, theta);
            acc + j * j.transpose() * w
        });
        Ok(Evaluator {
            pool,
            js: pool.iter().map(|c| t * jacobian(c.z, theta)).collect(),
            a,
            ridge: t * t.transpose() * cfg.eta_ridge,
            num_bins: bins.num_bins(),
            epsilon: cfg.epsilon_balance,
        })
    }

    /// Centred Jacobian of pool candidate `i`.
    pub fn jacobian(&self, i: usize) -> &Vec4 {
        &self.js[i]
    }

    /// Midpoint matrix `A' = Σ_b w_b j'_b j'_bᵀ`.
    pub fn midpoint_matrix(&self) -> &Mat {
        &self.a
    }

    pub fn index_of(&self, model_id: &str) -> Option<usize> {
        self.pool.iter().position(|c| c.model_id == model_id)
    }

    pub fn counts(&self, set: &[usize]) -> Vec<usize> {
        let mut n = vec![0; self.num_bins];
        for &i in set {
            n[self.pool[i].bin] += 1;
        }
        n
    }

    /// `K'` of a set by direct inversion.
    pub fn inverse(&self, set: &[usize]) -> Result<Mat> {
        let js: Vec<Vec4> = set.iter().map(|&i| self.js[i]).collect();
        direct_inverse(&js, &self.ridge)
    }

    /// `(Φ_info, Φ_bal)` of a set.
    pub fn parts(&self, set: &[usize]) -> Result<(f64, f64)> {
        let k = self.inverse(set)?;
        Ok((-(self.a * k).trace(), phi_bal(&self.counts(set), self.epsilon)))
    }

    pub fn objective(&self, set: &[usize], lambda: f64) -> Result<f64> {
        let (info, bal) = self.parts(set)?;
        Ok(info + lambda * bal)
    }

    pub fn cost(&self, set: &[usize]) -> f64 {
        set.iter().map(|&i| self.pool[i].cost).sum()
    }
}

/// Anchor indices: lowest z, highest z, then the two candidates nearest the
/// inflection point. Ties go to the earlier candidate.
fn anchors(pool: &[DesignCandidate], theta: &SigmoidParams) -> (Vec<usize>, bool) {
    let by = |key: &dyn Fn(&DesignCandidate) -> f64| {
        (0..pool.len()).min_by(|&i, &j| key(&pool[i]).total_cmp(&key(&pool[j])).then(i.cmp(&j)))
    };
    let lo = by(&|c| c.z).expect("nonempty pool");
    let hi = by(&|c| -c.z).expect("nonempty pool");
    if pool[lo].z == pool[hi].z {
        let cheapest = by(&|c| c.cost).expect("nonempty pool");
        return (vec![cheapest], true);
    }
    let mut out = vec![lo, hi];
    if let Some(z_star) = theta.inflection() {
        let mut rest: Vec<usize> = (0..pool.len()).filter(|i| !out.contains(i)).collect();
        rest.sort_by(|&i, &j| {
            (pool[i].z - z_star)
                .abs()
                .total_cmp(&(pool[j].z - z_star).abs())
                .then(i.cmp(&j))
        });
        out.extend(rest.into_iter().take(2));
    }
    (out, false)
}

/// Relative slack on the budget so that summation order cannot exclude the
/// last candidate at α = 100.
const BUDGET_SLACK: f64 = 1e-12;

pub(crate) fn affordable(cost: f64, budget: f64) -> bool {
    cost <= budget * (1.0 + BUDGET_SLACK)
}

/// Greedy balanced I-optimal selection with 1-exchange polishing.
pub fn greedy_select(
    pool: &[DesignCandidate],
    theta: &SigmoidParams,
    cfg: &DesignConfig,
    bins: &BinPartition,
) -> Result<DesignSelection> {
    if pool.is_empty() {
        return Err(Error::Design("candidate pool is empty".into()));
    }
    let ev = Evaluator::new(pool, theta, cfg, bins)?;
    let budget = cfg.alpha / 100.0 * pool.iter().map(|c| c.cost).sum::<f64>();
    let mut trace = Vec::new();
    let mut set: Vec<usize> = Vec::new();
    let mut in_set = vec![false; pool.len()];
    let mut spent = 0.0;

    let (anchor_list, degenerate_anchors) = anchors(pool, theta);
    let mut anchors_truncated = false;
    for &i in &anchor_list {
        if !affordable(spent + pool[i].cost, budget) {
            anchors_truncated = true;
            break;
        }
        spent += pool[i].cost;
        set.push(i);
        in_set[i] = true;
        trace.push(TraceStep {
            step: trace.len(),
            kind: StepKind::Anchor,
            model_id: pool[i].model_id.clone(),
            removed: None,
            delta_info: 0.0,
            delta_bal: 0.0,
            gain: 0.0,
        });
    }

    let mut k = ev.inverse(&set)?;
    let mut counts = ev.counts(&set);
    // The scale comes from the full anchor set even when the budget truncates
    // it, so λ does not depend on α.
    let lambda = match cfg.lambda_balance {
        Some(l) => l,
        None => {
            let k0 = ev.inverse(&anchor_list)?;
            let scale = (0..pool.len())
                .filter(|i| !anchor_list.contains(i))
                .map(|i| delta_info(&k0, &ev.a, &ev.js[i]))
                .fold(0.0, f64::max);
            AUTO_LAMBDA_FRACTION * scale
        }
    };

    loop {
        let mut best: Option<(usize, f64, f64, f64)> = None;
        for i in 0..pool.len() {
            if in_set[i] || !affordable(spent + pool[i].cost, budget) {
                continue;
            }
            let di = delta_info(&k, &ev.a, &ev.js[i]);
            let db = delta_bal(counts[pool[i].bin], cfg.epsilon_balance);
            let g = (di + lambda * db) / pool[i].cost;
            if best.is_none_or(|b| g > b.3) {
                best = Some((i, di, db, g));
            }
        }
        let Some((i, di, db, g)) = best else { break };
        if !(g > 0.0) {
            break;
        }
        k = sherman_morrison(&k, &ev.js[i]).0;
        spent += pool[i].cost;
        counts[pool[i].bin] += 1;
        set.push(i);
        in_set[i] = true;
        trace.push(TraceStep {
            step: trace.len(),
            kind: StepKind::Add,
            model_id: pool[i].model_id.clone(),
            removed: None,
            delta_info: di,
            delta_bal: db,
            gain: g,
        });
    }

    polish(&ev, &mut set, &mut in_set, lambda, budget, cfg.polish_exchanges, &mut trace)?;

    let (phi_info, phi_b) = ev.parts(&set)?;
    Ok(DesignSelection {
        selected: set.iter().map(|&i| pool[i].model_id.clone()).collect(),
        total_cost: ev.cost(&set),
        budget,
        objective_value: phi_info + lambda * phi_b,
        phi_info,
        phi_bal: phi_b,
        lambda_balance: lambda,
        per_bin_counts: ev.counts(&set),
        anchors_truncated,
        degenerate_anchors,
        trace,
    })
}

/// Best-improvement 1-exchange moves. Swap gains are scored through a
/// rank-one downdate and update of `K`; each accepted move is confirmed by a
/// direct evaluation and `K` is then recomputed from scratch.
fn polish(
    ev: &Evaluator,
    set: &mut [usize],
    in_set: &mut [bool],
    lambda: f64,
    budget: f64,
    max_moves: usize,
    trace: &mut Vec<TraceStep>,
) -> Result<()> {
    if set.is_empty() {
        return Ok(());
    }
    let pool = ev.pool;
    let mut current = ev.objective(set, lambda)?;
    let mut k = ev.inverse(set)?;
    for _ in 0..max_moves {
        let counts = ev.counts(set);
        let spent = ev.cost(set);
        let mut best: Option<(usize, usize, f64)> = None;
        for (pos, &j) in set.iter().enumerate() {
            let uj = ev.js[j];
            let kj = k * uj;
            let lev = 1.0 - uj.dot(&kj);
            if !(lev > 1e-12) {
                continue;
            }
            // K without j
            let k_minus = k + kj * kj.transpose() / lev;
            let tr_minus = (ev.a * k_minus).trace();
            let mut n_minus = counts.clone();
            n_minus[pool[j].bin] -= 1;
            let bal_minus = phi_bal(&n_minus, ev.epsilon);
            for l in 0..pool.len() {
                if in_set[l] || !affordable(spent - pool[j].cost + pool[l].cost, budget) {
                    continue;
                }
                let info = -(tr_minus - delta_info(&k_minus, &ev.a, &ev.js[l]));
                let bal = bal_minus + delta_bal(n_minus[pool[l].bin], ev.epsilon);
                let gain = info + lambda * bal - current;
                if best.is_none_or(|b| gain > b.2) {
                    best = Some((pos, l, gain));
                }
            }
        }
        let Some((pos, l, _)) = best else { break };
        let mut trial = set.to_vec();
        let removed = trial[pos];
        trial[pos] = l;
        let value = ev.objective(&trial, lambda)?;
        // require a real improvement at the scale of the objective
        if !(value > current + 1e-12 * current.abs().max(1.0)) {
            break;
        }
        let (old_info, old_bal) = ev.parts(set)?;
        let (new_info, new_bal) = ev.parts(&trial)?;
        set[pos] = l;
        in_set[removed] = false;
        in_set[l] = true;
        k = ev.inverse(set)?;
        trace.push(TraceStep {
            step: trace.len(),
            kind: StepKind::Swap,
            model_id: pool[l].model_id.clone(),
            removed: Some(pool[removed].model_id.clone()),
            delta_info: new_info - old_info,
            delta_bal: new_bal - old_bal,
            gain: value - current,
        });
        current = value;
    }
    Ok(())
}

/// Recomputes `Φ_λ` of a selection from its model ids.
pub fn replay_objective(
    pool: &[DesignCandidate],
    selection: &DesignSelection,
    theta: &SigmoidParams,
    cfg: &DesignConfig,
    bins: &BinPartition,
) -> Result<f64> {
    let ev = Evaluator::new(pool, theta, cfg, bins)?;
    let set = selection
        .selected
        .iter()
        .map(|id| {
            ev.index_of(id)
                .ok_or_else(|| Error::Design(format!("selected model `{id}` is not in the pool")))
        })
        .collect::<Result<Vec<_>>>()?;
    ev.objective(&set, selection.lambda_balance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub alpha: f64,
    pub n_selected: usize,
    pub cost_fraction: f64,
    pub objective_value: f64,
    pub ood_pinball: Option<f64>,
    pub ood_coverage_error: Option<f64>,
}

/// Selects at every α and hands each selection to `downstream`, which fits on
/// the selected records and returns `(OOD pinball, OOD coverage error)`.
pub fn budget_sweep<F>(
    pool: &[DesignCandidate],
    theta: &SigmoidParams,
    cfg: &DesignConfig,
    bins: &BinPartition,
    alphas: &[f64],
    mut downstream: F,
) -> Result<Vec<BudgetRow>>
where
    F: FnMut(&DesignSelection) -> Result<(Option<f64>, Option<f64>)>,
{
    let total: f64 = pool.iter().map(|c| c.cost).sum();
    alphas
        .iter()
        .map(|&alpha| {
            let c = DesignConfig { alpha, ..cfg.clone() };
            let sel = greedy_select(pool, theta, &c, bins)?;
            let (pinball, coverage) = downstream(&sel)?;
            Ok(BudgetRow {
                alpha,
                n_selected: sel.selected.len(),
                cost_fraction: sel.total_cost / total,
                objective_value: sel.objective_value,
                ood_pinball: pinball,
                ood_coverage_error: coverage,
            })
        })
        .collect()
}
