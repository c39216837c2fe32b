//! Instance matching between ground truth and prediction.
//!
//! Pairs with IoU ≥ τ are matched one-to-one, maximizing the number of
//! matches first and total matched IoU second. Label 0 is background on
//! both sides and never matched.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::LabelVolume;
use crate::FORMAT_VERSION;

/// Sparse IoU matrix; only pairs with non-empty intersection are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouMatrix {
    /// Ground-truth labels, ascending; row `i` is `gt_ids[i]`.
    pub gt_ids: Vec<u32>,
    pub pred_ids: Vec<u32>,
    /// `(row, col, iou)`, sorted by row then column.
    pub entries: Vec<(usize, usize, f64)>,
}

impl IouMatrix {
    /// Builds a matrix from explicit entries (used by tests and tools).
    pub fn from_entries(n_gt: usize, n_pred: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| e.0 >= n_gt || e.1 >= n_pred || !(0.0..=1.0).contains(&e.2)) {
            return Err(Error::InvalidArgument(format!("bad IoU entry {e:?}")));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(Self {
            gt_ids: (1..=n_gt as u32).collect(),
            pred_ids: (1..=n_pred as u32).collect(),
            entries,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(row, col)))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }
}

type Histogram = (HashMap<(u32, u32), u64>, HashMap<u32, u64>, HashMap<u32, u64>);

fn merge(mut a: Histogram, b: Histogram) -> Histogram {
    for (k, v) in b.0 {
        *a.0.entry(k).or_default() += v;
    }
    for (k, v) in b.1 {
        *a.1.entry(k).or_default() += v;
    }
    for (k, v) in b.2 {
        *a.2.entry(k).or_default() += v;
    }
    a
}

pub fn iou_matrix(gt: &LabelVolume, pred: &LabelVolume) -> Result<IouMatrix> {
    if gt.shape() != pred.shape() || gt.channels() != 0 || pred.channels() != 0 {
        return Err(Error::ShapeMismatch(format!(
            "label volumes differ: {:?} vs {:?}",
            gt.shape(),
            pred.shape()
        )));
    }
    let (joint, gt_sizes, pred_sizes) = gt
        .data
        .par_chunks(1 << 16)
        .zip(pred.data.par_chunks(1 << 16))
        .fold(
            || (HashMap::new(), HashMap::new(), HashMap::new()),
            |mut h: Histogram, (g, p)| {
                for (&a, &b) in g.iter().zip(p) {
                    if a != 0 {
                        *h.1.entry(a).or_default() += 1;
                    }
                    if b != 0 {
                        *h.2.entry(b).or_default() += 1;
                    }
                    if a != 0 && b != 0 {
                        *h.0.entry((a, b)).or_default() += 1;
                    }
                }
                h
            },
        )
        .reduce(|| (HashMap::new(), HashMap::new(), HashMap::new()), merge);
    let gt_ids: Vec<u32> = gt_sizes.keys().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<u32> = pred_sizes.keys().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let row: HashMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let col: HashMap<u32, usize> = pred_ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut entries: Vec<(usize, usize, f64)> = joint
        .into_iter()
        .map(|((a, b), inter)| {
            let union = gt_sizes[&a] + pred_sizes[&b] - inter;
            (row[&a], col[&b], inter as f64 / union as f64)
        })
        .collect();
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(IouMatrix {
        gt_ids,
        pred_ids,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt: u32,
    pub pred: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub tau: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub matched_pairs: Vec<MatchedPair>,
}

impl TauReport {
    pub fn mean_matched_iou(&self) -> f64 {
        if self.matched_pairs.is_empty() {
            return 0.0;
        }
        self.matched_pairs.iter().map(|p| p.iou).sum::<f64>() / self.matched_pairs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub version: String,
    pub n_gt: usize,
    pub n_pred: usize,
    pub per_tau: Vec<TauReport>,
}

impl MatchReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("tau,accuracy,tp,fp,fn,mean_matched_iou\n");
        for r in &self.per_tau {
            s.push_str(&format!(
                "{},{:.6},{},{},{},{:.6}\n",
                r.tau,
                r.accuracy,
                r.tp,
                r.fp,
                r.fn_,
                r.mean_matched_iou()
            ));
        }
        s
    }
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`),
/// shortest augmenting paths with potentials. Returns the column per row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "hungarian needs rows <= cols");
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Optimal one-to-one matching among pairs with IoU ≥ τ.
pub fn hungarian_match(ious: &IouMatrix, tau: f64) -> Result<TauReport> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("tau {tau} outside (0, 1]")));
    }
    let (ng, np) = (ious.gt_ids.len(), ious.pred_ids.len());
    let edges: Vec<&(usize, usize, f64)> = ious.entries.iter().filter(|e| e.2 >= tau).collect();
    // Components of the allowed-pair graph solve independently.
    let mut parent: Vec<usize> = (0..ng + np).collect();
    for e in &edges {
        let (a, b) = (find(&mut parent, e.0), find(&mut parent, ng + e.1));
        if a != b {
            parent[a] = b;
        }
    }
    let mut comps: BTreeMap<usize, Vec<&(usize, usize, f64)>> = BTreeMap::new();
    for e in &edges {
        let r = find(&mut parent, e.0);
        comps.entry(r).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for comp in comps.values() {
        let mut rows: Vec<usize> = comp.iter().map(|e| e.0).collect();
        let mut cols: Vec<usize> = comp.iter().map(|e| e.1).collect();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let transpose = rows.len() > cols.len();
        let (nr, nc) = if transpose { (cols.len(), rows.len()) } else { (rows.len(), cols.len()) };
        // Forbidden pairs cost 0, the same as leaving both unmatched; every
        // allowed pair costs below -bonus + 1, so more matches always win.
        let bonus = nr as f64 + 1.0;
        let mut cost = vec![vec![0.0; nc]; nr];
        let mut iou = vec![vec![f64::NAN; nc]; nr];
        for e in comp {
            let r = rows.binary_search(&e.0).unwrap();
            let c = cols.binary_search(&e.1).unwrap();
            let (r, c) = if transpose { (c, r) } else { (r, c) };
            cost[r][c] = 1.0 - e.2 - bonus;
            iou[r][c] = e.2;
        }
        for (r, c) in hungarian(&cost).into_iter().enumerate() {
            if iou[r][c].is_nan() {
                continue;
            }
            let (gi, pj) = if transpose { (rows[c], cols[r]) } else { (rows[r], cols[c]) };
            pairs.push(MatchedPair {
                gt: ious.gt_ids[gi],
                pred: ious.pred_ids[pj],
                iou: iou[r][c],
            });
        }
    }
    pairs.sort_by_key(|p| (p.gt, p.pred));
    let tp = pairs.len();
    let (fp, fn_) = (np - tp, ng - tp);
    let denom = tp + fp + fn_;
    Ok(TauReport {
        tau,
        tp,
        fp,
        fn_,
        accuracy: if denom == 0 { 1.0 } else { tp as f64 / denom as f64 },
        matched_pairs: pairs,
    })
}

pub fn report_from_matrix(m: &IouMatrix, taus: &[f64]) -> Result<MatchReport> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("no IoU thresholds given".into()));
    }
    let per_tau = taus.par_iter().map(|&t| hungarian_match(m, t)).collect::<Result<Vec<_>>>()?;
    Ok(MatchReport {
        version: FORMAT_VERSION.to_string(),
        n_gt: m.gt_ids.len(),
        n_pred: m.pred_ids.len(),
        per_tau,
    })
}

pub fn accuracy_curve(gt: &LabelVolume, pred: &LabelVolume, taus: &[f64]) -> Result<MatchReport> {
    report_from_matrix(&iou_matrix(gt, pred)?, taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{Dtype, VolumeMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(v: &mut LabelVolume, lo: [usize; 3], n: usize, label: u32) {
        for z in lo[0]..lo[0] + n {
            for y in lo[1]..lo[1] + n {
                for x in lo[2]..lo[2] + n {
                    v.set(z, y, x, label);
                }
            }
        }
    }

    fn vol() -> LabelVolume {
        LabelVolume::zeros(VolumeMeta::new([12, 12, 20], 0, Dtype::U16)).unwrap()
    }

    /// Best (cardinality, total IoU) over all partial matchings.
    fn brute(m: &[Vec<f64>], tau: f64) -> (usize, f64) {
        fn go(m: &[Vec<f64>], tau: f64, row: usize, used: &mut Vec<bool>) -> (usize, f64) {
            if row == m.len() {
                return (0, 0.0);
            }
            let mut best = go(m, tau, row + 1, used);
            for c in 0..used.len() {
                if !used[c] && m[row][c] >= tau {
                    used[c] = true;
                    let (k, s) = go(m, tau, row + 1, used);
                    used[c] = false;
                    let cand = (k + 1, s + m[row][c]);
                    if cand.0 > best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                        best = cand;
                    }
                }
            }
            best
        }
        let cols = m.first().map_or(0, |r| r.len());
        go(m, tau, 0, &mut vec![false; cols])
    }

    #[test]
    fn half_overlapping_cubes() {
        let mut g = vol();
        let mut p = vol();
        cube(&mut g, [1, 1, 1], 10, 1);
        cube(&mut p, [1, 1, 6], 10, 1);
        let m = iou_matrix(&g, &p).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert!((m.entries[0].2 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_and_disjoint() {
        let mut g = vol();
        cube(&mut g, [0, 0, 0], 4, 3);
        cube(&mut g, [5, 5, 5], 4, 7);
        let m = iou_matrix(&g, &g).unwrap();
        assert_eq!(m.entries, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let rep = accuracy_curve(&g, &g, &[0.1, 0.5, 0.9, 1.0]).unwrap();
        assert!(rep.per_tau.iter().all(|r| r.accuracy == 1.0 && r.tp == 2));
        let mut p = vol();
        cube(&mut p, [0, 0, 12], 4, 1);
        let m = iou_matrix(&g, &p).unwrap();
        assert!(m.entries.is_empty());
        let r = hungarian_match(&m, 0.5).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 2));
    }

    #[test]
    fn missing_prediction() {
        let mut g = vol();
        cube(&mut g, [0, 0, 0], 3, 1);
        let r = accuracy_curve(&g, &vol(), &[0.5]).unwrap();
        assert_eq!((r.per_tau[0].tp, r.per_tau[0].fn_, r.per_tau[0].accuracy), (0, 1, 0.0));
        assert!(accuracy_curve(&g, &vol(), &[]).is_err());
        assert!(accuracy_curve(&g, &vol(), &[0.0]).is_err());
        let other = LabelVolume::zeros(VolumeMeta::new([2, 2, 2], 0, Dtype::U8)).unwrap();
        assert!(iou_matrix(&g, &other).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let (r, c) = (rng.random_range(0..=7), rng.random_range(0..=7));
            let dense: Vec<Vec<f64>> = (0..r)
                .map(|_| {
                    (0..c)
                        .map(|_| if rng.random_bool(0.5) { rng.random_range(0.01..1.0) } else { 0.0 })
                        .collect()
                })
                .collect();
            let entries = (0..r)
                .flat_map(|i| (0..c).map(move |j| (i, j)))
                .filter(|&(i, j)| dense[i][j] > 0.0)
                .map(|(i, j)| (i, j, dense[i][j]))
                .collect();
            let m = IouMatrix::from_entries(r, c, entries).unwrap();
            for tau in [0.1, 0.3, 0.5, 0.8] {
                let rep = hungarian_match(&m, tau).unwrap();
                let (k, s) = brute(&dense, tau);
                assert_eq!(rep.tp, k);
                let total: f64 = rep.matched_pairs.iter().map(|p| p.iou).sum();
                assert!((total - s).abs() < 1e-9);
                assert_eq!(rep.tp + rep.fp, c);
                assert_eq!(rep.tp + rep.fn_, r);
                assert_eq!(rep.accuracy * (rep.tp + rep.fp + rep.fn_) as f64, rep.tp as f64);
                let mut g: Vec<u32> = rep.matched_pairs.iter().map(|p| p.gt).collect();
                let mut p: Vec<u32> = rep.matched_pairs.iter().map(|p| p.pred).collect();
                g.dedup();
                p.sort();
                p.dedup();
                assert_eq!(g.len(), rep.tp);
                assert_eq!(p.len(), rep.tp);
                assert!(rep.matched_pairs.iter().all(|p| p.iou >= tau));
            }
        }
    }

    #[test]
    fn cardinality_beats_total_iou() {
        // One strong pair versus two weak ones: the weak pair set wins.
        let m = IouMatrix::from_entries(2, 2, vec![(0, 0, 0.9), (0, 1, 0.3), (1, 0, 0.3)]).unwrap();
        let r = hungarian_match(&m, 0.3).unwrap();
        assert_eq!(r.tp, 2);
        let r = hungarian_match(&m, 0.5).unwrap();
        assert_eq!(r.tp, 1);
        assert_eq!(r.matched_pairs[0].iou, 0.9);
    }

    #[test]
    fn hungarian_square() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&c);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn csv_layout() {
        let m = IouMatrix::from_entries(1, 1, vec![(0, 0, 0.6)]).unwrap();
        let rep = report_from_matrix(&m, &[0.5, 0.7]).unwrap();
        let csv = rep.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "tau,accuracy,tp,fp,fn,mean_matched_iou");
        assert_eq!(lines[1], "0.5,1.000000,1,0,0,0.600000");
        assert_eq!(lines[2], "0.7,0.000000,0,1,1,0.000000");
    }
}
