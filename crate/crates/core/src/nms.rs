//! Candidate extraction and greedy non-maximum suppression.
//!
//! Overlap is measured on the voxel lattice: the intersection of two
//! candidates is the number of voxel centers inside both. Before counting,
//! [`overlap_decision`] tries four cheap bounds on that count, in order:
//!
//! 1. outer spheres (upper), 2. inscribed spheres (lower),
//! 3. convex hulls (upper), 4. kernels (lower).
//!
//! Every bound is widened so that it brackets the lattice count itself, not
//! only the continuous volume: a unit cube around each counted voxel center
//! fits in the set dilated by the cube, and every point of the set eroded by
//! the cube has a voxel center nearby that lies in the set. So the cascade
//! returns the decision exact counting would return, for every input.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::GridSpec;
use crate::error::{Error, Result};
use crate::polyhedron::{exact_intersection_volume, sphere_intersection_volume, StarPolyhedron};
use crate::rays::RaySystem;
use crate::volumes::{DistVolume, ScalarVolume};

/// Half the diagonal of a unit voxel cube.
const HALF_DIAG: f64 = 0.866_025_403_784_438_6;
/// Relative and absolute slack added to every bound against rounding.
const SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// Intersection over the smaller of the two volumes.
    IntersectionOverSmaller,
    #[serde(rename = "iou")]
    IoU,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smaller" | "intersection-over-smaller" => Ok(Criterion::IntersectionOverSmaller),
            "iou" => Ok(Criterion::IoU),
            other => Err(Error::InvalidArgument(format!("unknown criterion '{other}' (smaller|iou)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub overlap_thresh: f64,
    pub criterion: Criterion,
    pub use_cascade: bool,
    /// Flags (does not stop) runs that need more exact counts than this.
    pub raster_budget: Option<usize>,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            overlap_thresh: 0.4,
            criterion: Criterion::IntersectionOverSmaller,
            use_cascade: true,
            raster_budget: None,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.overlap_thresh > 0.0 && self.overlap_thresh <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "overlap threshold {} outside (0, 1]",
                self.overlap_thresh
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    OuterSphere,
    InnerSphere,
    Hull,
    Kernel,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub outer_sphere: usize,
    pub inner_sphere: usize,
    pub hull: usize,
    pub kernel: usize,
    pub exact: usize,
}

impl StageCounts {
    pub fn add(&mut self, stage: Stage) {
        match stage {
            Stage::OuterSphere => self.outer_sphere += 1,
            Stage::InnerSphere => self.inner_sphere += 1,
            Stage::Hull => self.hull += 1,
            Stage::Kernel => self.kernel += 1,
            Stage::Exact => self.exact += 1,
        }
    }

    pub fn merge(mut self, o: StageCounts) -> Self {
        self.outer_sphere += o.outer_sphere;
        self.inner_sphere += o.inner_sphere;
        self.hull += o.hull;
        self.kernel += o.kernel;
        self.exact += o.exact;
        self
    }

    pub fn total(&self) -> usize {
        self.outer_sphere + self.inner_sphere + self.hull + self.kernel + self.exact
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmsStats {
    pub n_candidates: usize,
    pub n_kept: usize,
    pub decisions: StageCounts,
    pub total_decisions: usize,
    pub wall_time_s: f64,
    pub budget_exceeded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub suppress: bool,
    pub stage: Stage,
}

/// Candidates in suppression order.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    candidates: Vec<StarPolyhedron>,
    pub grid: GridSpec,
    pub prob_thresh: f64,
    pub source_shape: [usize; 3],
}

/// Suppression order: probability descending, then center ascending.
pub fn candidate_order(a: &StarPolyhedron, b: &StarPolyhedron) -> std::cmp::Ordering {
    b.prob().total_cmp(&a.prob()).then_with(|| {
        let (ca, cb) = (a.center(), b.center());
        ca[0].total_cmp(&cb[0])
            .then(ca[1].total_cmp(&cb[1]))
            .then(ca[2].total_cmp(&cb[2]))
    })
}

impl CandidateSet {
    /// Sorts `candidates`; all probabilities must reach `prob_thresh`.
    pub fn new(
        mut candidates: Vec<StarPolyhedron>,
        grid: GridSpec,
        prob_thresh: f64,
        source_shape: [usize; 3],
    ) -> Result<Self> {
        if let Some(c) = candidates.iter().find(|c| c.prob() < prob_thresh) {
            return Err(Error::InvalidArgument(format!(
                "candidate probability {} below threshold {prob_thresh}",
                c.prob()
            )));
        }
        candidates.par_sort_by(candidate_order);
        Ok(Self {
            candidates,
            grid,
            prob_thresh,
            source_shape,
        })
    }

    pub fn candidates(&self) -> &[StarPolyhedron] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn into_candidates(self) -> Vec<StarPolyhedron> {
        self.candidates
    }
}

/// One candidate per grid voxel with `p_hat >= prob_thresh`. Centers are
/// mapped to full resolution; distances are used as given (full-resolution
/// voxel units), with negative predictions clamped to zero.
pub fn extract_candidates(
    p_hat: &ScalarVolume,
    d_hat: &DistVolume,
    rays: &Arc<RaySystem>,
    grid: GridSpec,
    prob_thresh: f64,
) -> Result<CandidateSet> {
    if p_hat.channels() != 0 {
        return Err(Error::ShapeMismatch("probability field must be scalar".into()));
    }
    if p_hat.shape() != d_hat.shape() {
        return Err(Error::ShapeMismatch(format!(
            "probability shape {:?} vs distance shape {:?}",
            p_hat.shape(),
            d_hat.shape()
        )));
    }
    if d_hat.channels() != rays.n {
        return Err(Error::ShapeMismatch(format!(
            "{} distance channels for {} rays",
            d_hat.channels(),
            rays.n
        )));
    }
    let shape = p_hat.shape();
    let source_shape = std::array::from_fn(|a| shape[a] * grid.g[a]);
    let hits: Vec<usize> = (0..p_hat.data.len())
        .filter(|&i| p_hat.data[i] as f64 >= prob_thresh)
        .collect();
    let candidates = hits
        .par_iter()
        .map(|&i| {
            let [z, y, x] = p_hat.coords(i);
            let center = grid.to_full([z, y, x]).map(|c| c as f64);
            let dists = d_hat.voxel(z, y, x).iter().map(|&d| (d as f64).max(0.0)).collect();
            StarPolyhedron::new(center, dists, p_hat.data[i] as f64, rays.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    CandidateSet::new(candidates, grid, prob_thresh, source_shape)
}

/// Overlap ratio for an intersection size `i`; non-decreasing in `i`.
fn ratio(criterion: Criterion, i: f64, va: f64, vb: f64) -> f64 {
    let i = i.max(0.0);
    let denom = match criterion {
        Criterion::IntersectionOverSmaller => va.min(vb),
        Criterion::IoU => va + vb - i,
    };
    if denom <= 0.0 {
        return if i > 0.0 { 1.0 } else { 0.0 };
    }
    (i / denom).min(1.0)
}

fn upper(u: f64) -> f64 {
    u * (1.0 + SLACK) + SLACK
}

fn lower(l: f64) -> f64 {
    (l * (1.0 - SLACK) - SLACK).max(0.0)
}

/// Continuous bounds on the intersection volume of two candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionBounds {
    pub outer_sphere: f64,
    pub inner_sphere: f64,
    /// `None` when a hull is degenerate.
    pub hull: Option<f64>,
    pub kernel: f64,
}

pub fn intersection_bounds(a: &StarPolyhedron, b: &StarPolyhedron) -> IntersectionBounds {
    let d = (a.center_vec() - b.center_vec()).norm();
    let (ha, hb) = (a.convex_hull(), b.convex_hull());
    IntersectionBounds {
        outer_sphere: sphere_intersection_volume(a.bounding_radius(), b.bounding_radius(), d),
        inner_sphere: sphere_intersection_volume(a.inscribed_radius(), b.inscribed_radius(), d),
        hull: (!ha.is_empty() && !hb.is_empty()).then(|| ha.intersect(hb).volume()),
        kernel: a.kernel().intersect(b.kernel()).volume(),
    }
}

/// Voxel-count bound from the dilated hull intersection; `None` when the
/// hulls give no usable bound (degenerate hull or flat intersection).
fn hull_count_bound(a: &StarPolyhedron, b: &StarPolyhedron) -> Option<f64> {
    let (ha, hb) = (a.convex_hull(), b.convex_hull());
    if ha.is_empty() || hb.is_empty() {
        return None;
    }
    let h = ha.intersect(hb);
    if h.is_empty() {
        return None;
    }
    Some(h.dilated_cube_volume())
}

/// Bounds on the voxel-center count of `a ∩ b`, in cascade order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountBounds {
    pub outer_sphere: f64,
    pub inner_sphere: f64,
    pub hull: Option<f64>,
    pub kernel: f64,
}

pub fn count_bounds(a: &StarPolyhedron, b: &StarPolyhedron) -> CountBounds {
    let d = (a.center_vec() - b.center_vec()).norm();
    CountBounds {
        outer_sphere: upper(outer_count_bound(a, b, d)),
        inner_sphere: lower(inner_count_bound(a, b, d)),
        hull: hull_count_bound(a, b).map(upper),
        kernel: lower(a.kernel_eroded().intersect(b.kernel_eroded()).volume()),
    }
}

fn outer_count_bound(a: &StarPolyhedron, b: &StarPolyhedron, d: f64) -> f64 {
    let grow = HALF_DIAG + SLACK;
    sphere_intersection_volume(a.bounding_radius() + grow, b.bounding_radius() + grow, d)
}

fn inner_count_bound(a: &StarPolyhedron, b: &StarPolyhedron, d: f64) -> f64 {
    let (ra, rb) = (a.inscribed_radius() - HALF_DIAG, b.inscribed_radius() - HALF_DIAG);
    if ra <= 0.0 || rb <= 0.0 {
        return 0.0;
    }
    sphere_intersection_volume(ra, rb, d)
}

/// Whether `b` is suppressed by `a` (`a` ranks first), and which stage
/// settled it.
pub fn overlap_decision(a: &StarPolyhedron, b: &StarPolyhedron, cfg: &NmsConfig) -> Decision {
    let (va, vb) = (a.volume(), b.volume());
    let t = cfg.overlap_thresh;
    let r = |i: f64| ratio(cfg.criterion, i, va, vb);
    if cfg.use_cascade {
        let d = (a.center_vec() - b.center_vec()).norm();
        if r(upper(outer_count_bound(a, b, d))) < t {
            return Decision {
                suppress: false,
                stage: Stage::OuterSphere,
            };
        }
        if r(lower(inner_count_bound(a, b, d))) >= t {
            return Decision {
                suppress: true,
                stage: Stage::InnerSphere,
            };
        }
        // The kernel bound sits below the true count and the hull bound above
        // it, so a suppressing kernel bound means the hull stage could not have
        // kept. Testing the kernel first therefore settles the same stage.
        // Clipping one kernel by the other's half-spaces gives the kernel
        // intersection without building the second kernel.
        let ka = a.kernel_eroded();
        if !ka.is_empty() && r(lower(ka.volume())) >= t {
            if let Some(hb) = b.kernel_planes(0.5) {
                if r(lower(ka.clip_all(&hb).volume())) >= t {
                    return Decision {
                        suppress: true,
                        stage: Stage::Kernel,
                    };
                }
            }
        }
        if let Some(u) = hull_count_bound(a, b) {
            if r(upper(u)) < t {
                return Decision {
                    suppress: false,
                    stage: Stage::Hull,
                };
            }
        }
    }
    Decision {
        suppress: r(exact_intersection_volume(a, b)) >= t,
        stage: Stage::Exact,
    }
}

/// Uniform hash grid over candidate centers.
struct CenterGrid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl CenterGrid {
    fn new(cands: &[StarPolyhedron]) -> Self {
        let r = cands.iter().map(|c| c.bounding_radius()).fold(0.0, f64::max);
        let cell = (2.0 * r + 4.0 * SLACK).max(1.0);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, c) in cands.iter().enumerate() {
            cells.entry(Self::key(cell, c)).or_default().push(i as u32);
        }
        Self { cell, cells }
    }

    fn key(cell: f64, c: &StarPolyhedron) -> [i64; 3] {
        c.center().map(|v| (v / cell).floor() as i64)
    }

    fn neighbors(&self, c: &StarPolyhedron, out: &mut Vec<u32>) {
        let k = Self::key(self.cell, c);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(v) = self.cells.get(&[k[0] + dz, k[1] + dy, k[2] + dx]) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
    }
}

/// Greedy suppression; returns the kept candidates in acceptance order.
pub fn run_nms(cands: &CandidateSet, cfg: &NmsConfig) -> Result<(Vec<StarPolyhedron>, NmsStats)> {
    cfg.validate()?;
    let start = Instant::now();
    let list = cands.candidates();
    let n = list.len();
    let grid = CenterGrid::new(list);
    let mut suppressed = vec![false; n];
    let mut kept = Vec::new();
    let mut counts = StageCounts::default();
    let mut near = Vec::new();
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        near.clear();
        grid.neighbors(&list[i], &mut near);
        near.retain(|&j| j as usize > i && !suppressed[j as usize]);
        let a = &list[i];
        let results: Vec<(u32, Decision)> = near
            .par_iter()
            .with_min_len(8)
            .map(|&j| (j, overlap_decision(a, &list[j as usize], cfg)))
            .collect();
        for (j, d) in results {
            counts.add(d.stage);
            if d.suppress {
                suppressed[j as usize] = true;
            }
        }
    }
    let stats = NmsStats {
        n_candidates: n,
        n_kept: kept.len(),
        decisions: counts,
        total_decisions: counts.total(),
        wall_time_s: start.elapsed().as_secs_f64(),
        budget_exceeded: cfg.raster_budget.is_some_and(|b| counts.exact > b),
    };
    Ok((kept.into_iter().map(|i| list[i].clone()).collect(), stats))
}
