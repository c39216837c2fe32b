//! Ground-truth targets from instance labels and shape reconstruction.
//!
//! * object probability: per-instance Euclidean distance to the nearest voxel
//!   outside the instance, normalized by the instance maximum;
//! * radial distances: unit-step ray marching with nearest-voxel lookup.
//!   The first step that leaves the instance either is reported as is
//!   ([`MarchEnd::Step`]) or is pulled back to where the ray crosses the
//!   face of the last inside voxel along its dominant axis
//!   ([`MarchEnd::FaceCrossing`], the default).
//!
//! Voxels outside the volume count as "not this instance" for the distance
//! transform, and ray marching stops at the volume border.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::polyhedron::{StarPolyhedron, VoxelBox};
use crate::rays::RaySystem;
use crate::volumes::{DistVolume, Dtype, LabelVolume, ScalarVolume, Volume, VolumeMeta};

/// Prediction-grid subsampling factors `(gz, gy, gx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct GridSpec {
    pub g: [usize; 3],
}

impl GridSpec {
    pub const DENSE: GridSpec = GridSpec { g: [1, 1, 1] };

    pub fn new(g: [usize; 3]) -> Result<Self> {
        if g.iter().any(|&v| v == 0) {
            return Err(Error::InvalidArgument(format!("grid factors must be >= 1, got {g:?}")));
        }
        Ok(Self { g })
    }

    /// Full-resolution position of a grid coordinate.
    pub fn to_full(&self, grid: [usize; 3]) -> [usize; 3] {
        [grid[0] * self.g[0], grid[1] * self.g[1], grid[2] * self.g[2]]
    }

    /// Shape after taking every g-th voxel from offset 0.
    pub fn grid_shape(&self, full: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|i| full[i].div_ceil(self.g[i]))
    }
}

impl TryFrom<[usize; 3]> for GridSpec {
    type Error = Error;
    fn try_from(g: [usize; 3]) -> Result<Self> {
        GridSpec::new(g)
    }
}

impl From<GridSpec> for [usize; 3] {
    fn from(g: GridSpec) -> Self {
        g.g
    }
}

/// How a marched ray reports its end point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarchEnd {
    /// Number of unit steps until the sample leaves the instance.
    Step,
    /// `t - 1 + 1/(2 max|r_i|)` for exit step `t`: the last inside step plus
    /// the distance to the voxel face along the dominant ray component.
    #[default]
    FaceCrossing,
}

impl MarchEnd {
    #[inline]
    fn finish(self, steps: usize, dir: [f64; 3]) -> f32 {
        match self {
            MarchEnd::Step => steps as f32,
            MarchEnd::FaceCrossing => {
                let m = dir[0].abs().max(dir[1].abs()).max(dir[2].abs());
                (steps as f64 - 1.0 + 0.5 / m) as f32
            }
        }
    }
}

/// Instance voxel boxes `(lo, hi)` inclusive, keyed by label.
pub fn instance_boxes(labels: &LabelVolume) -> BTreeMap<u32, ([usize; 3], [usize; 3])> {
    let mut boxes: BTreeMap<u32, ([usize; 3], [usize; 3])> = BTreeMap::new();
    for (i, &l) in labels.data.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let c = labels.coords(i);
        let b = boxes.entry(l).or_insert((c, c));
        for a in 0..3 {
            b.0[a] = b.0[a].min(c[a]);
            b.1[a] = b.1[a].max(c[a]);
        }
    }
    boxes
}

/// Distance of every voxel of one instance to the nearest non-instance voxel,
/// as `(flat index, distance)` in C order.
fn instance_edt(labels: &LabelVolume, label: u32, lo: [usize; 3], hi: [usize; 3]) -> Vec<(usize, f64)> {
    // One voxel of padding; the padding layer is never part of the instance.
    let plo: [i64; 3] = std::array::from_fn(|a| lo[a] as i64 - 1);
    let shape: [usize; 3] = std::array::from_fn(|a| hi[a] - lo[a] + 3);
    let mut feature = Vec::with_capacity(shape.iter().product());
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let (gz, gy, gx) = (plo[0] + z as i64, plo[1] + y as i64, plo[2] + x as i64);
                let inside = labels.contains_signed(gz, gy, gx)
                    && labels.get(gz as usize, gy as usize, gx as usize) == label;
                feature.push(!inside);
            }
        }
    }
    let sq = squared_edt(&feature, shape);
    let mut out = Vec::new();
    let mut i = 0;
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                if !feature[i] {
                    let g = labels.index(
                        (plo[0] + z as i64) as usize,
                        (plo[1] + y as i64) as usize,
                        (plo[2] + x as i64) as usize,
                    );
                    out.push((g, sq[i].sqrt()));
                }
                i += 1;
            }
        }
    }
    out
}

/// Per-instance normalized distance-to-boundary field.
pub fn object_probability(labels: &LabelVolume) -> Result<ScalarVolume> {
    let mut p = ScalarVolume::zeros(VolumeMeta {
        shape: labels.shape(),
        channels: 0,
        dtype: Dtype::F32,
        voxel_size: labels.meta.voxel_size,
    })?;
    let boxes: Vec<_> = instance_boxes(labels).into_iter().collect();
    let parts: Vec<Vec<(usize, f64)>> = boxes
        .par_iter()
        .map(|&(l, (lo, hi))| instance_edt(labels, l, lo, hi))
        .collect();
    for part in parts {
        let max = part.iter().map(|e| e.1).fold(0.0, f64::max);
        for (i, d) in part {
            p.data[i] = (d / max) as f32;
        }
    }
    Ok(p)
}

/// Marches from voxel `v` along `(z, y, x)` direction `dir` in unit steps;
/// returns the first step count whose nearest voxel leaves `label` or the volume.
#[inline]
fn march(labels: &LabelVolume, v: [usize; 3], dir: [f64; 3], label: u32) -> usize {
    let mut t = 1usize;
    loop {
        let tf = t as f64;
        let z = (v[0] as f64 + tf * dir[0]).round() as i64;
        let y = (v[1] as f64 + tf * dir[1]).round() as i64;
        let x = (v[2] as f64 + tf * dir[2]).round() as i64;
        if !labels.contains_signed(z, y, x) || labels.get(z as usize, y as usize, x as usize) != label {
            return t;
        }
        t += 1;
    }
}

/// Radial distances at a single voxel (all zero on background).
pub fn radial_distances_at(labels: &LabelVolume, v: [usize; 3], rays: &RaySystem, end: MarchEnd) -> Vec<f32> {
    let label = labels.get(v[0], v[1], v[2]);
    if label == 0 {
        return vec![0.0; rays.n];
    }
    (0..rays.n)
        .map(|k| {
            let d = rays.dir_zyx(k);
            let dir = [d.x, d.y, d.z];
            end.finish(march(labels, v, dir, label), dir)
        })
        .collect()
}

/// Radial distance field with one channel per ray, default end convention.
pub fn radial_distances(labels: &LabelVolume, rays: &RaySystem) -> Result<DistVolume> {
    radial_distances_with(labels, rays, MarchEnd::default())
}

pub fn radial_distances_with(labels: &LabelVolume, rays: &RaySystem, end: MarchEnd) -> Result<DistVolume> {
    let n = rays.n;
    if n == 0 {
        return Err(Error::InvalidArgument("empty ray system".into()));
    }
    let mut d = DistVolume::zeros(VolumeMeta {
        shape: labels.shape(),
        channels: n,
        dtype: Dtype::F32,
        voxel_size: labels.meta.voxel_size,
    })?;
    let dirs: Vec<[f64; 3]> = (0..n)
        .map(|k| {
            let r = rays.dir_zyx(k);
            [r.x, r.y, r.z]
        })
        .collect();
    let [_, ny, nx] = labels.shape();
    d.data
        .par_chunks_mut(ny * nx * n)
        .enumerate()
        .for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let label = labels.get(z, y, x);
                    if label == 0 {
                        continue;
                    }
                    let out = &mut slab[(y * nx + x) * n..(y * nx + x + 1) * n];
                    for (o, dir) in out.iter_mut().zip(&dirs) {
                        *o = end.finish(march(labels, [z, y, x], *dir, label), *dir);
                    }
                }
            }
        });
    Ok(d)
}

/// Every g-th voxel per axis from offset 0; multi-channel aware.
pub fn subsample<T: Copy>(field: &Volume<T>, grid: GridSpec) -> Result<Volume<T>> {
    let full = field.shape();
    let shape = grid.grid_shape(full);
    let s = field.meta.stride();
    let mut data = Vec::with_capacity(shape.iter().product::<usize>() * s);
    for z in 0..shape[0] {
        for y in 0..shape[1] {
            for x in 0..shape[2] {
                let [fz, fy, fx] = grid.to_full([z, y, x]);
                data.extend_from_slice(field.voxel(fz, fy, fx));
            }
        }
    }
    let mut meta = field.meta.clone();
    meta.shape = shape;
    if let Some(vs) = meta.voxel_size.as_mut() {
        for a in 0..3 {
            vs[a] *= grid.g[a] as f64;
        }
    }
    Volume::from_data(meta, data)
}

/// Reconstruction outcome for one ground-truth instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFit {
    pub label: u32,
    pub center: [usize; 3],
    pub iou: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub labels: LabelVolume,
    pub mean_iou: f64,
    pub instances: Vec<InstanceFit>,
}

/// Encodes every instance as a single polyhedron at its maximum-probability
/// voxel (lowest `(z, y, x)` among ties), rasterizes it and scores it against
/// the instance mask.
pub fn reconstruct_labels(labels: &LabelVolume, rays: &Arc<RaySystem>) -> Result<Reconstruction> {
    reconstruct_labels_with(labels, rays, MarchEnd::default())
}

pub fn reconstruct_labels_with(labels: &LabelVolume, rays: &Arc<RaySystem>, end: MarchEnd) -> Result<Reconstruction> {
    let boxes: Vec<_> = instance_boxes(labels).into_iter().collect();
    if boxes.is_empty() {
        return Err(Error::NoInstances);
    }
    let whole = VoxelBox::from_shape(labels.shape());
    let fits: Vec<(InstanceFit, StarPolyhedron)> = boxes
        .par_iter()
        .map(|&(label, (lo, hi))| {
            let edt = instance_edt(labels, label, lo, hi);
            // C order scan: the first maximum has the smallest (z, y, x).
            let (best, _) = edt
                .iter()
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, &(i, d)| if d > acc.1 { (i, d) } else { acc });
            let center = labels.coords(best);
            let dists: Vec<f64> = radial_distances_at(labels, center, rays, end).iter().map(|&d| d as f64).collect();
            let poly = StarPolyhedron::new(center.map(|c| c as f64), dists, 1.0, rays.clone())?;
            let region = poly.voxel_bounds().intersect(&whole);
            let mut inter = 0usize;
            let mut rendered = 0usize;
            for v in region.iter() {
                if poly.contains_voxel(v) {
                    rendered += 1;
                    if labels.get(v[0] as usize, v[1] as usize, v[2] as usize) == label {
                        inter += 1;
                    }
                }
            }
            let gt = edt.len();
            let union = rendered + gt - inter;
            let iou = inter as f64 / union as f64;
            Ok((InstanceFit { label, center, iou }, poly))
        })
        .collect::<Result<_>>()?;

    let mut out = LabelVolume::zeros(VolumeMeta {
        shape: labels.shape(),
        channels: 0,
        dtype: labels.meta.dtype,
        voxel_size: labels.meta.voxel_size,
    })?;
    for (fit, poly) in &fits {
        let region = poly.voxel_bounds().intersect(&whole);
        for v in region.iter() {
            let (z, y, x) = (v[0] as usize, v[1] as usize, v[2] as usize);
            if out.get(z, y, x) == 0 && poly.contains_voxel(v) {
                out.set(z, y, x, fit.label);
            }
        }
    }
    let instances: Vec<InstanceFit> = fits.into_iter().map(|(f, _)| f).collect();
    let mean_iou = instances.iter().map(|f| f.iou).sum::<f64>() / instances.len() as f64;
    Ok(Reconstruction {
        labels: out,
        mean_iou,
        instances,
    })
}
