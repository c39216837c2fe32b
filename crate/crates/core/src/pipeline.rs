//! Multi-stage operations behind the CLI: rendering, ray fidelity tables and
//! the NMS benchmark.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{reconstruct_labels_with, MarchEnd};
use crate::error::{Error, Result};
use crate::nms::{run_nms, CandidateSet, NmsConfig, NmsStats};
use crate::polyhedron::{StarPolyhedron, VoxelBox};
use crate::rays::{Anisotropy, RayKind, RaySystem};
use crate::synth::{candidate_cloud, CloudSpec};
use crate::encode::GridSpec;
use crate::volumes::{label_dtype_for, LabelVolume, VolumeMeta};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderPolicy {
    /// A voxel claimed by several shapes goes to the most probable one
    /// (earlier shape on ties).
    #[default]
    HigherProb,
    /// A voxel goes to the first shape that claims it.
    FirstKept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderReport {
    pub rendered: usize,
    /// Indices of shapes with no voxel inside the volume.
    pub skipped: Vec<usize>,
}

/// Rasterizes `polys` into a label volume; shape `i` gets label `i + 1`.
pub fn render(polys: &[StarPolyhedron], shape: [usize; 3], policy: RenderPolicy) -> Result<(LabelVolume, RenderReport)> {
    let dtype = label_dtype_for(polys.len() as u32);
    let mut out = LabelVolume::zeros(VolumeMeta::new(shape, 0, dtype))?;
    let whole = VoxelBox::from_shape(shape);
    let masks: Vec<_> = polys
        .par_iter()
        .map(|p| {
            let region = p.voxel_bounds().intersect(&whole);
            p.rasterize(region)
        })
        .collect();
    let mut owner_prob = vec![f64::NEG_INFINITY; out.data.len()];
    let mut skipped = Vec::new();
    for (i, (mask, poly)) in masks.iter().zip(polys).enumerate() {
        if mask.count() == 0 {
            skipped.push(i);
            continue;
        }
        let label = i as u32 + 1;
        for v in mask.region.iter() {
            if !mask.get(v) {
                continue;
            }
            let idx = out.index(v[0] as usize, v[1] as usize, v[2] as usize);
            let take = match policy {
                RenderPolicy::FirstKept => out.data[idx] == 0,
                RenderPolicy::HigherProb => out.data[idx] == 0 || poly.prob() > owner_prob[idx],
            };
            if take {
                out.data[idx] = label;
                owner_prob[idx] = poly.prob();
            }
        }
    }
    Ok((
        out,
        RenderReport {
            rendered: polys.len() - skipped.len(),
            skipped,
        },
    ))
}

/// One ray configuration of a fidelity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayConfig {
    pub kind: RayKind,
    /// Requested ray count; equidistant grids use the nearest feasible count.
    pub n: usize,
    pub anisotropy: Anisotropy,
}

impl RayConfig {
    pub fn build(&self) -> Result<RaySystem> {
        match self.kind {
            RayKind::Fibonacci => RaySystem::fibonacci(self.n, self.anisotropy),
            RayKind::Equidistant => RaySystem::equidistant_near(self.n, self.anisotropy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub kind: RayKind,
    pub requested_n: usize,
    pub n: usize,
    pub anisotropy: Anisotropy,
    pub mean_iou: f64,
    pub instances: usize,
}

pub fn fidelity(labels: &LabelVolume, configs: &[RayConfig], end: MarchEnd) -> Result<Vec<FidelityRow>> {
    configs
        .iter()
        .map(|c| {
            let rays = Arc::new(c.build()?);
            let rec = reconstruct_labels_with(labels, &rays, end)?;
            Ok(FidelityRow {
                kind: c.kind,
                requested_n: c.n,
                n: rays.n,
                anisotropy: c.anisotropy,
                mean_iou: rec.mean_iou,
                instances: rec.instances.len(),
            })
        })
        .collect()
}

pub fn fidelity_csv(rows: &[FidelityRow]) -> String {
    let mut s = String::from("kind,requested_n,n,sx,sy,sz,mean_iou,instances\n");
    for r in rows {
        let kind = match r.kind {
            RayKind::Fibonacci => "fibonacci",
            RayKind::Equidistant => "equidistant",
        };
        s.push_str(&format!(
            "{kind},{},{},{},{},{},{:.6},{}\n",
            r.requested_n, r.n, r.anisotropy.sx, r.anisotropy.sy, r.anisotropy.sz, r.mean_iou, r.instances
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: String,
    pub cloud: CloudSpec,
    pub n_rays: usize,
    pub config: NmsConfig,
    pub cascade: NmsStats,
    pub exact_only: Option<NmsStats>,
    /// Whether both runs kept the same candidates (when both ran).
    pub identical_kept: Option<bool>,
    /// `1 - exact(cascade) / exact(exact-only)`.
    pub exact_reduction: Option<f64>,
}

/// Runs NMS on a synthetic candidate cloud with the cascade on and,
/// if `compare`, once more with exact counting only.
pub fn bench_nms(cloud: &CloudSpec, n_rays: usize, cfg: &NmsConfig, compare: bool) -> Result<BenchReport> {
    if n_rays < 4 {
        return Err(Error::InvalidArgument("benchmark needs at least 4 rays".into()));
    }
    let rays = Arc::new(RaySystem::fibonacci(n_rays, Anisotropy::ISOTROPIC)?);
    let polys = candidate_cloud(cloud, &rays)?;
    let set = CandidateSet::new(polys, GridSpec::DENSE, 0.0, cloud.shape)?;
    let on = NmsConfig {
        use_cascade: true,
        ..*cfg
    };
    let (kept_on, stats_on) = run_nms(&set, &on)?;
    let (exact_only, identical_kept, exact_reduction) = if compare {
        let off = NmsConfig {
            use_cascade: false,
            ..*cfg
        };
        let (kept_off, stats_off) = run_nms(&set, &off)?;
        let same = kept_on.len() == kept_off.len()
            && kept_on
                .iter()
                .zip(&kept_off)
                .all(|(a, b)| a.center() == b.center() && a.dists() == b.dists());
        let red = if stats_off.decisions.exact > 0 {
            1.0 - stats_on.decisions.exact as f64 / stats_off.decisions.exact as f64
        } else {
            0.0
        };
        (Some(stats_off), Some(same), Some(red))
    } else {
        (None, None, None)
    };
    Ok(BenchReport {
        version: FORMAT_VERSION.to_string(),
        cloud: cloud.clone(),
        n_rays,
        config: on,
        cascade: stats_on,
        exact_only,
        identical_kept,
        exact_reduction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rays() -> Arc<RaySystem> {
        Arc::new(RaySystem::fibonacci(64, Anisotropy::ISOTROPIC).unwrap())
    }

    #[test]
    fn single_shape_count_tracks_volume() {
        let r = rays();
        let p = StarPolyhedron::new([20.0, 20.0, 20.0], vec![12.0; 64], 0.9, r).unwrap();
        let (v, rep) = render(&[p.clone()], [40, 40, 40], RenderPolicy::default()).unwrap();
        let count = v.data.iter().filter(|&&l| l == 1).count() as f64;
        assert!((count - p.volume()).abs() / p.volume() < 0.02);
        assert_eq!(rep.rendered, 1);
    }

    #[test]
    fn conflicts_follow_policy() {
        let r = rays();
        let low = StarPolyhedron::new([10.0, 10.0, 8.0], vec![5.0; 64], 0.6, r.clone()).unwrap();
        let high = StarPolyhedron::new([10.0, 10.0, 12.0], vec![5.0; 64], 0.9, r.clone()).unwrap();
        let far = StarPolyhedron::new([100.0, 10.0, 12.0], vec![5.0; 64], 0.9, r).unwrap();
        let polys = [low, high, far];
        let (hp, rep) = render(&polys, [20, 20, 24], RenderPolicy::HigherProb).unwrap();
        let (fk, _) = render(&polys, [20, 20, 24], RenderPolicy::FirstKept).unwrap();
        assert_eq!(rep.skipped, vec![2]);
        assert_eq!(hp.get(10, 10, 10), 2);
        assert_eq!(fk.get(10, 10, 10), 1);
        assert_eq!(hp.get(10, 10, 5), 1);
        assert_eq!(fk.get(10, 10, 15), 2);
    }

    #[test]
    fn disjoint_shapes_get_disjoint_labels() {
        let r = rays();
        let a = StarPolyhedron::new([6.0, 6.0, 6.0], vec![4.0; 64], 0.7, r.clone()).unwrap();
        let b = StarPolyhedron::new([6.0, 6.0, 18.0], vec![4.0; 64], 0.8, r).unwrap();
        let (v, _) = render(&[a.clone(), b.clone()], [12, 12, 24], RenderPolicy::default()).unwrap();
        assert_eq!(v.data.iter().filter(|&&l| l == 1).count(), a.voxel_count());
        assert_eq!(v.data.iter().filter(|&&l| l == 2).count(), b.voxel_count());
    }

    #[test]
    fn small_bench_runs_both_modes() {
        let cloud = CloudSpec {
            shape: [120, 40, 40],
            n_candidates: 400,
            ..Default::default()
        };
        let rep = bench_nms(&cloud, 32, &NmsConfig::default(), true).unwrap();
        assert_eq!(rep.identical_kept, Some(true));
        assert!(rep.cascade.decisions.exact < rep.exact_only.as_ref().unwrap().decisions.exact);
        let empty = CloudSpec {
            n_candidates: 0,
            ..cloud
        };
        let rep = bench_nms(&empty, 32, &NmsConfig::default(), true).unwrap();
        assert_eq!(rep.cascade.total_decisions, 0);
        assert_eq!(rep.cascade.n_kept, 0);
    }
}
