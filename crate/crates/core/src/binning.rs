//! Group-aware equal-mass binning of training log-compute values.
//!
//! Identical z-values are never split across bins. Internal edges sit halfway
//! between the last z-value of a bin and the first z-value of the next, so
//! half-open assignment `[e_b, e_{b+1})` (last bin closed) reproduces the
//! training counts exactly and a trailing single-level bin keeps a positive width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 8;
pub const DEFAULT_MIN_BIN: usize = 10;
/// Bin count used for design midpoints when the candidate pool is small.
pub const SMALL_POOL_BINS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinPartition {
    edges: Vec<f64>,
    counts: Vec<usize>,
    /// Set when merging could not bring the (single remaining) bin up to the
    /// minimum size.
    #[serde(default)]
    undersized: bool,
}

/// Where a z-value falls relative to a partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinLookup {
    Bin(usize),
    OutOfRange,
}

impl BinLookup {
    pub fn index(self) -> Option<usize> {
        match self {
            BinLookup::Bin(b) => Some(b),
            BinLookup::OutOfRange => None,
        }
    }
}

impl BinPartition {
    /// Rebuilds a partition from serialized edges and counts.
    pub fn from_parts(edges: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if edges.len() != counts.len() + 1 || counts.is_empty() {
            return Err(Error::Binning(format!(
                "{} edges do not describe {} bins",
                edges.len(),
                counts.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Binning("edges must be finite".into()));
        }
        let single_point = counts.len() == 1 && edges[0] == edges[1];
        if !single_point && edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Binning("edges must be strictly increasing".into()));
        }
        Ok(BinPartition {
            edges,
            counts,
            undersized: false,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_undersized(&self) -> bool {
        self.undersized
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn lo(&self) -> f64 {
        self.edges[0]
    }

    pub fn hi(&self) -> f64 {
        *self.edges.last().expect("partition has edges")
    }

    /// Bin of `z`: half-open `[e_b, e_{b+1})`, the last bin closed on the right.
    pub fn assign(&self, z: f64) -> BinLookup {
        if !(z >= self.lo() && z <= self.hi()) {
            return BinLookup::OutOfRange;
        }
        // number of internal edges <= z
        let internal = &self.edges[1..self.edges.len() - 1];
        BinLookup::Bin(internal.partition_point(|e| *e <= z))
    }
}

pub fn assign_bin(p: &BinPartition, z: f64) -> BinLookup {
    p.assign(z)
}

/// Equal-mass binning over unique z-levels followed by minimum-size merging.
pub fn build_bins(z_values: &[f64], bins: usize, min_bin: usize) -> Result<BinPartition> {
    if z_values.is_empty() {
        return Err(Error::Binning("cannot bin an empty set of z-values".into()));
    }
    if bins == 0 || min_bin == 0 {
        return Err(Error::Binning("bin count and minimum bin size must be positive".into()));
    }
    if z_values.iter().any(|z| !z.is_finite()) {
        return Err(Error::Binning("z-values must be finite".into()));
    }
    let mut sorted = z_values.to_vec();
    sorted.sort_by(f64::total_cmp);

    // unique levels with multiplicities
    let mut levels: Vec<(f64, usize)> = Vec::new();
    for z in sorted {
        match levels.last_mut() {
            Some((u, n)) if *u == z => *n += 1,
            _ => levels.push((z, 1)),
        }
    }
    let n_total = z_values.len();
    let b_eff = bins.min(levels.len());
    let target = min_bin.max(n_total.div_ceil(b_eff));

    // sweep: close a bin at the level where the running count reaches the target
    let mut edges = vec![levels[0].0];
    let mut counts = Vec::new();
    let mut running = 0usize;
    for (g, &(_, n)) in levels.iter().enumerate() {
        running += n;
        let last = g + 1 == levels.len();
        if running >= target || last {
            counts.push(running);
            running = 0;
            edges.push(if last { levels[g].0 } else { 0.5 * (levels[g].0 + levels[g + 1].0) });
        }
    }

    let (edges, counts, undersized) = merge_small_bins(edges, counts, min_bin);
    Ok(BinPartition {
        edges,
        counts,
        undersized,
    })
}

/// Repeatedly merges the smallest bin below `min_bin` into its smaller
/// neighbour (the left one on ties) by deleting the edge between them.
/// Returns the merged edges and counts, and whether a lone bin remains
/// below the minimum.
pub fn merge_small_bins(
    mut edges: Vec<f64>,
    mut counts: Vec<usize>,
    min_bin: usize,
) -> (Vec<f64>, Vec<usize>, bool) {
    debug_assert_eq!(edges.len(), counts.len() + 1);
    while counts.len() > 1 {
        // smallest offending bin, leftmost on ties
        let Some((b, _)) = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < min_bin)
            .min_by_key(|(i, &c)| (c, *i))
        else {
            break;
        };
        let left = (b > 0).then(|| counts[b - 1]);
        let right = counts.get(b + 1).copied();
        let merge_left = match (left, right) {
            (Some(l), Some(r)) => l <= r,
            (Some(_), None) => true,
            _ => false,
        };
        if merge_left {
            counts[b - 1] += counts[b];
            counts.remove(b);
            edges.remove(b);
        } else {
            counts[b] += counts[b + 1];
            counts.remove(b + 1);
            edges.remove(b + 1);
        }
    }
    let undersized = counts.len() == 1 && counts[0] < min_bin;
    (edges, counts, undersized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_values_form_one_bin() {
        let p = build_bins(&[22.0; 100], 4, 1).unwrap();
        assert_eq!(p.num_bins(), 1);
        assert_eq!(p.counts(), [100]);
        assert_eq!(p.assign(22.0), BinLookup::Bin(0));
        assert_eq!(p.assign(22.1), BinLookup::OutOfRange);
    }

    #[test]
    fn distinct_values_split_evenly() {
        // hand sweep: m = max(1, ceil(100/4)) = 25, boundaries after 25, 50, 75, 100
        let z: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = build_bins(&z, 4, 1).unwrap();
        assert_eq!(p.counts(), [25, 25, 25, 25]);
        assert_eq!(p.edges(), [1.0, 25.5, 50.5, 75.5, 100.0]);
        assert_eq!(p.midpoints(), [13.25, 38.0, 63.0, 87.75]);
    }

    #[test]
    fn small_bin_merges_into_smaller_neighbour() {
        // bins of 10, 3 (a single level), 7 with m_min = 5: the 3 joins the 7
        let edges = vec![0.0, 1.0, 2.0, 3.0];
        let (e, c, flagged) = merge_small_bins(edges, vec![10, 3, 7], 5);
        assert_eq!(c, [10, 10]);
        assert_eq!(e, [0.0, 1.0, 3.0]);
        assert!(!flagged);
    }

    #[test]
    fn merge_tie_goes_left() {
        let (e, c, _) = merge_small_bins(vec![0.0, 1.0, 2.0, 3.0], vec![7, 3, 7], 5);
        assert_eq!(c, [10, 7]);
        assert_eq!(e, [0.0, 2.0, 3.0]);
    }

    #[test]
    fn trailing_remainder_is_merged() {
        // 12 distinct values, B = 5, m_min = 3: m = ceil(12/5) = 3 -> 3,3,3,3; then
        // with m_min = 4 the target is 4 -> 4,4,4
        let z: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(build_bins(&z, 5, 3).unwrap().counts(), [3, 3, 3, 3]);
        assert_eq!(build_bins(&z, 5, 4).unwrap().counts(), [4, 4, 4]);
        // 10 values, B = 3: m = 4 -> 4,4,2 then 2 merges left -> 4,6
        let z: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(build_bins(&z, 3, 3).unwrap().counts(), [4, 6]);
    }

    #[test]
    fn tiny_dataset_returns_flagged_single_bin() {
        let p = build_bins(&[1.0, 2.0, 3.0], 4, 10).unwrap();
        assert_eq!(p.num_bins(), 1);
        assert!(p.is_undersized());
    }

    #[test]
    fn empty_input_errors() {
        assert!(build_bins(&[], 4, 1).is_err());
    }

    #[test]
    fn edge_inclusion_rules() {
        let z: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = build_bins(&z, 4, 1).unwrap();
        assert_eq!(p.assign(1.0), BinLookup::Bin(0));
        assert_eq!(p.assign(25.5), BinLookup::Bin(1));
        assert_eq!(p.assign(25.4), BinLookup::Bin(0));
        assert_eq!(p.assign(100.0), BinLookup::Bin(3));
        assert_eq!(p.assign(0.999), BinLookup::OutOfRange);
        assert_eq!(p.assign(f64::NAN), BinLookup::OutOfRange);
    }

    #[test]
    fn assignment_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..300).map(|_| (rng.random_range(18.0..27.0f64) * 10.0).round() / 10.0).collect();
        let p = build_bins(&z, 8, 10).unwrap();
        let e = p.edges();
        for i in 0..=1000 {
            let q = 17.5 + 10.0 * i as f64 / 1000.0;
            let mut expect = BinLookup::OutOfRange;
            for b in 0..p.num_bins() {
                let last = b + 1 == p.num_bins();
                if q >= e[b] && (q < e[b + 1] || (last && q == e[b + 1])) {
                    expect = BinLookup::Bin(b);
                }
            }
            assert_eq!(p.assign(q), expect, "z = {q}");
        }
    }

    #[test]
    fn serializes_for_reuse() {
        let z: Vec<f64> = (1..=40).map(f64::from).collect();
        let p = build_bins(&z, 4, 1).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"edges\"") && json.contains("\"counts\""));
        let back: BinPartition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        let rebuilt = BinPartition::from_parts(p.edges().to_vec(), p.counts().to_vec()).unwrap();
        assert_eq!(rebuilt.assign(20.0), p.assign(20.0));
    }

    proptest! {
        #[test]
        fn partition_invariants(
            raw in proptest::collection::vec(0u8..40, 1..300),
            bins in 1usize..12,
            min_bin in 1usize..15,
        ) {
            // coarse integer levels force plenty of ties
            let z: Vec<f64> = raw.iter().map(|&v| 18.0 + f64::from(v) * 0.25).collect();
            let p = build_bins(&z, bins, min_bin).unwrap();
            let e = p.edges();
            if p.num_bins() > 1 {
                prop_assert!(e.windows(2).all(|w| w[0] < w[1]));
            }
            if !p.is_undersized() {
                prop_assert!(p.counts().iter().all(|&c| c >= min_bin));
            }
            prop_assert!(p.num_bins() <= bins.max(1));
            prop_assert_eq!(p.counts().iter().sum::<usize>(), z.len());
            // counts agree with half-open assignment, so ties never straddle an edge
            let mut assigned = vec![0usize; p.num_bins()];
            for &v in &z {
                assigned[p.assign(v).index().unwrap()] += 1;
            }
            prop_assert_eq!(&assigned[..], p.counts());
            // determinism
            prop_assert_eq!(build_bins(&z, bins, min_bin).unwrap(), p);
        }

        #[test]
        fn equal_mass_for_distinct_values(k in 1usize..20, bins in 1usize..8) {
            let n = k * bins;
            let z: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
            let p = build_bins(&z, bins, 1).unwrap();
            prop_assert!(p.counts().iter().all(|&c| c == k));
        }
    }
}
