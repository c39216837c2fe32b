//! Seeded synthetic scenes with known instance geometry.
//!
//! Random numbers come from ChaCha8 keyed by the scene seed, so a seed gives
//! the same scene on every platform.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polyhedron::{StarPolyhedron, VoxelBox};
use crate::rays::{fibonacci_lattice, Anisotropy, RaySystem};
use crate::volumes::{label_dtype_for, LabelVolume, VolumeMeta};

/// Rays used to rasterize star blobs.
const BLOB_RAYS: usize = 256;
/// Relative amplitude of the blob radius perturbation.
const BLOB_AMPLITUDE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipsoid,
    #[serde(alias = "star-blob", alias = "star_blob")]
    StarBlob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// `(z, y, x)` volume shape.
    pub shape: [usize; 3],
    pub n_objects: usize,
    pub shape_kind: ShapeKind,
    /// Base radius range in voxels, sampled uniformly.
    pub radius_range: (f64, f64),
    /// Per-axis squeeze `(az, ay, ax)`: each half-axis is the base radius
    /// divided by its factor, like physically round objects sampled with
    /// coarser voxels along that axis.
    pub aspect: [f64; 3],
    /// Minimum center distance as a fraction of the summed bounding radii.
    pub min_separation: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            shape: [64, 96, 96],
            n_objects: 10,
            shape_kind: ShapeKind::Ellipsoid,
            radius_range: (8.0, 14.0),
            aspect: [1.0, 1.0, 1.0],
            min_separation: 1.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 2.0 && hi >= lo) {
            return Err(Error::InvalidArgument(format!(
                "radius range ({lo}, {hi}) must satisfy 2 <= min <= max"
            )));
        }
        if self.aspect.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidArgument(format!("aspect {:?} must be positive", self.aspect)));
        }
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return Err(Error::InvalidArgument("min_separation must be >= 0".into()));
        }
        if self.shape.iter().any(|&s| s == 0) {
            return Err(Error::EmptyShape(self.shape));
        }
        Ok(())
    }

    fn bump(&self) -> f64 {
        match self.shape_kind {
            ShapeKind::Ellipsoid => 1.0,
            ShapeKind::StarBlob => 1.0 + BLOB_AMPLITUDE,
        }
    }

    /// Largest extent factor of a shape relative to its base radius.
    fn reach(&self) -> f64 {
        self.bump() / self.aspect.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Ground-truth parameters of one generated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueObject {
    pub label: u32,
    /// `(z, y, x)`.
    pub center: [f64; 3],
    pub radius: f64,
    /// Half-axes `(z, y, x)` before any blob perturbation.
    pub semi_axes: [f64; 3],
    /// Voxels actually written (earlier objects win contested voxels).
    pub voxels: usize,
}

/// Low-order smooth field on the sphere with values in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct SmoothField {
    waves: Vec<([f64; 3], f64, f64, f64)>,
}

impl SmoothField {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut waves = Vec::new();
        let mut total = 0.0;
        for _ in 0..4 {
            let m = random_unit(rng);
            let freq = rng.random_range(1.0..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: f64 = rng.random_range(0.2..1.0);
            total += amp;
            waves.push((m, freq, phase, amp));
        }
        for w in &mut waves {
            w.3 /= total;
        }
        Self { waves }
    }

    pub fn eval(&self, u: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(m, f, p, a)| a * (f * (m[0] * u[0] + m[1] * u[1] + m[2] * u[2]) + p).cos())
            .sum()
    }
}

fn random_unit(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return v.map(|c| c / n);
        }
    }
}

/// Ray system whose rays point at the squeezed unit lattice, for
/// rasterizing squeezed star blobs; `aspect` is `(z, y, x)`.
pub fn blob_rays(aspect: [f64; 3]) -> Result<Arc<RaySystem>> {
    let s = Anisotropy::new(aspect[2], aspect[1], aspect[0])?;
    Ok(Arc::new(RaySystem::fibonacci(BLOB_RAYS, s)?))
}

/// A star blob centered at `center` (z, y, x): radius `r (1 + amplitude f(u))`
/// on the unit sphere, then divided per axis by `aspect`.
pub fn star_blob(
    center: [f64; 3],
    radius: f64,
    aspect: [f64; 3],
    amplitude: f64,
    field: &SmoothField,
    rays: &Arc<RaySystem>,
    prob: f64,
) -> Result<StarPolyhedron> {
    let lattice = fibonacci_lattice(rays.n)?;
    let dists = lattice
        .iter()
        .map(|p| {
            // Lattice points are (x, y, z); aspect is (z, y, x).
            let scaled = [p[0] / aspect[2], p[1] / aspect[1], p[2] / aspect[0]];
            let len = (scaled[0] * scaled[0] + scaled[1] * scaled[1] + scaled[2] * scaled[2]).sqrt();
            radius * (1.0 + amplitude * field.eval(*p)) * len
        })
        .collect();
    StarPolyhedron::new(center, dists, prob, rays.clone())
}

/// Places and voxelizes `spec.n_objects` objects; labels are `1..=n` in
/// placement order.
pub fn generate(spec: &SceneSpec) -> Result<(LabelVolume, Vec<TrueObject>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dtype = label_dtype_for(spec.n_objects as u32);
    let mut labels = LabelVolume::zeros(VolumeMeta::new(spec.shape, 0, dtype))?;
    let whole = VoxelBox::from_shape(spec.shape);
    let reach = spec.reach();
    let rays = match spec.shape_kind {
        ShapeKind::StarBlob => Some(blob_rays(spec.aspect)?),
        ShapeKind::Ellipsoid => None,
    };

    let mut placed: Vec<TrueObject> = Vec::new();
    let max_attempts = 10 * spec.n_objects.max(1);
    let mut rejections = 0usize;
    let mut attempts = 0usize;
    while placed.len() < spec.n_objects {
        attempts += 1;
        let (rlo, rhi) = spec.radius_range;
        let radius = if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
        let bound = radius * reach;
        let mut center = [0.0; 3];
        let mut fits = true;
        for a in 0..3 {
            let lo = radius / spec.aspect[a] * spec.bump();
            let hi = spec.shape[a] as f64 - 1.0 - lo;
            if hi < lo {
                fits = false;
                break;
            }
            center[a] = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        let separated = fits
            && placed.iter().all(|o| {
                let d2: f64 = (0..3).map(|a| (o.center[a] - center[a]).powi(2)).sum();
                d2.sqrt() >= spec.min_separation * (bound + o.radius * reach)
            });
        if !separated {
            rejections += 1;
            if rejections > max_attempts {
                return Err(Error::Placement {
                    attempts,
                    placed: placed.len(),
                    requested: spec.n_objects,
                });
            }
            continue;
        }
        let label = placed.len() as u32 + 1;
        let semi_axes = spec.aspect.map(|a| radius / a);
        let mut voxels = 0;
        match &rays {
            None => {
                let lo: [i64; 3] = std::array::from_fn(|a| (center[a] - semi_axes[a]).floor() as i64);
                let hi: [i64; 3] = std::array::from_fn(|a| (center[a] + semi_axes[a]).ceil() as i64 + 1);
                for v in VoxelBox::new(lo, hi).intersect(&whole).iter() {
                    let q: f64 = (0..3).map(|a| ((v[a] as f64 - center[a]) / semi_axes[a]).powi(2)).sum();
                    let (z, y, x) = (v[0] as usize, v[1] as usize, v[2] as usize);
                    if q <= 1.0 && labels.get(z, y, x) == 0 {
                        labels.set(z, y, x, label);
                        voxels += 1;
                    }
                }
            }
            Some(rays) => {
                let field = SmoothField::random(&mut rng);
                let blob = star_blob(center, radius, spec.aspect, BLOB_AMPLITUDE, &field, rays, 1.0)?;
                for v in blob.voxel_bounds().intersect(&whole).iter() {
                    let (z, y, x) = (v[0] as usize, v[1] as usize, v[2] as usize);
                    if labels.get(z, y, x) == 0 && blob.contains_voxel(v) {
                        labels.set(z, y, x, label);
                        voxels += 1;
                    }
                }
            }
        }
        placed.push(TrueObject {
            label,
            center,
            radius,
            semi_axes,
            voxels,
        });
    }
    Ok((labels, placed))
}

/// Parameters of a synthetic candidate cloud for NMS benchmarking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudSpec {
    /// `(z, y, x)` domain shape.
    pub shape: [usize; 3],
    pub n_candidates: usize,
    /// Average candidates emitted per underlying object.
    pub per_object: usize,
    pub radius_range: (f64, f64),
    /// Center jitter (voxels, per axis) around the object center.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CloudSpec {
    fn default() -> Self {
        Self {
            shape: [1141, 140, 140],
            n_candidates: 12000,
            per_object: 20,
            radius_range: (5.0, 9.0),
            jitter: 2.0,
            seed: 0,
        }
    }
}

/// Clusters of perturbed blobs around random object centers, mimicking the
/// dense candidate output of a detector. Probabilities lie in `[0.5, 1]`.
pub fn candidate_cloud(spec: &CloudSpec, rays: &Arc<RaySystem>) -> Result<Vec<StarPolyhedron>> {
    let (rlo, rhi) = spec.radius_range;
    if !(rlo > 0.0 && rhi >= rlo) || spec.per_object == 0 {
        return Err(Error::InvalidArgument("invalid candidate cloud parameters".into()));
    }
    if spec.shape.iter().any(|&s| s == 0) {
        return Err(Error::EmptyShape(spec.shape));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lattice = fibonacci_lattice(rays.n)?;
    let mut out = Vec::with_capacity(spec.n_candidates);
    while out.len() < spec.n_candidates {
        let radius = if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
        let center: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.0..spec.shape[a] as f64));
        let field = SmoothField::random(&mut rng);
        let count = rng.random_range(1..=2 * spec.per_object - 1).min(spec.n_candidates - out.len());
        for _ in 0..count {
            let c: [f64; 3] = std::array::from_fn(|a| {
                let j = if spec.jitter > 0.0 { rng.random_range(-spec.jitter..=spec.jitter) } else { 0.0 };
                (center[a] + j).round()
            });
            let scale = rng.random_range(0.85..1.15);
            let dists = lattice
                .iter()
                .map(|p| radius * scale * (1.0 + 0.2 * field.eval(*p)) * rng.random_range(0.95..1.05))
                .collect();
            let prob = (rng.random_range(0.5..=1.0f64) * 1e6).round() / 1e6;
            out.push(StarPolyhedron::new(c, dists, prob, rays.clone())?);
        }
    }
    Ok(out)
}
