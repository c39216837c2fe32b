//! Fixed unit-ray systems: spherical Fibonacci lattice and a polar/azimuth
//! grid, both with per-axis anisotropy scaling, plus the convex-hull
//! triangulation of the ray endpoints.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cones::ConeIndex;
use crate::error::{Error, Result};
use crate::hull::convex_hull;
use crate::volumes::LabelVolume;

/// Per-axis anisotropy factor `(sx, sy, sz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Anisotropy {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl Anisotropy {
    pub const ISOTROPIC: Anisotropy = Anisotropy {
        sx: 1.0,
        sy: 1.0,
        sz: 1.0,
    };

    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        if [sx, sy, sz].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self { sx, sy, sz })
        } else {
            Err(Error::InvalidArgument(format!(
                "anisotropy components must be positive, got ({sx}, {sy}, {sz})"
            )))
        }
    }
}

impl TryFrom<[f64; 3]> for Anisotropy {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Anisotropy::new(v[0], v[1], v[2])
    }
}

impl From<Anisotropy> for [f64; 3] {
    fn from(a: Anisotropy) -> Self {
        [a.sx, a.sy, a.sz]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RayKind {
    Fibonacci,
    Equidistant,
}

/// The shared ray set. `rays[k]` is `(x, y, z)`; channel `k` of every
/// distance volume refers to ray `k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaySystem {
    pub kind: RayKind,
    pub n: usize,
    pub anisotropy: Anisotropy,
    pub rays: Vec<[f64; 3]>,
    /// Outward-oriented (in xyz) hull triangles; empty when `n < 4`.
    pub faces: Vec<[usize; 3]>,
    #[serde(skip)]
    cones: OnceLock<Arc<ConeIndex>>,
}

impl PartialEq for RaySystem {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.n == other.n
            && self.anisotropy == other.anisotropy
            && self.rays == other.rays
            && self.faces == other.faces
    }
}

/// Raw spherical Fibonacci lattice points `(x, y, z)`, `z_k = -1 + 2k/(n-1)`.
pub fn fibonacci_lattice(n: usize) -> Result<Vec<[f64; 3]>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "Fibonacci lattice needs n >= 2, got {n}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let step = 2.0 * PI * (1.0 - 1.0 / phi);
    Ok((0..n)
        .map(|k| {
            let z = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let a = step * k as f64;
            [rho * a.cos(), rho * a.sin(), z]
        })
        .collect())
}

fn scale_and_normalize(p: [f64; 3], s: &Anisotropy) -> [f64; 3] {
    let u = [p[0] / s.sx, p[1] / s.sy, p[2] / s.sz];
    let len = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    [u[0] / len, u[1] / len, u[2] / len]
}

impl RaySystem {
    fn build(kind: RayKind, raw: Vec<[f64; 3]>, anisotropy: Anisotropy) -> Result<Self> {
        let rays: Vec<[f64; 3]> = raw.iter().map(|p| scale_and_normalize(*p, &anisotropy)).collect();
        let faces = if rays.len() >= 4 {
            let pts: Vec<Vector3<f64>> = rays.iter().map(|r| Vector3::from(*r)).collect();
            let faces = convex_hull(&pts)?;
            let sys = RaySystem {
                kind,
                n: rays.len(),
                anisotropy,
                rays: rays.clone(),
                faces: faces.clone(),
                cones: OnceLock::new(),
            };
            sys.check_triangulation()?;
            faces
        } else {
            Vec::new()
        };
        Ok(Self {
            kind,
            n: rays.len(),
            anisotropy,
            rays,
            faces,
            cones: OnceLock::new(),
        })
    }

    /// Validates a deserialized system (unit norms, closed triangulation).
    pub fn validate(&self) -> Result<()> {
        if self.rays.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "ray system declares n={} but has {} rays",
                self.n,
                self.rays.len()
            )));
        }
        for (k, r) in self.rays.iter().enumerate() {
            let l = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if (l - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("ray {k} is not unit length")));
            }
        }
        if self.n >= 4 {
            self.check_triangulation()?;
        }
        Ok(())
    }

    pub(crate) fn cones(&self) -> &ConeIndex {
        self.cones.get_or_init(|| {
            let dirs = (0..self.n).map(|k| self.dir_zyx(k)).collect();
            Arc::new(ConeIndex::new(dirs, self.faces_zyx()))
        })
    }

    /// Fibonacci rays; triangulated when `n >= 4`.
    pub fn fibonacci(n: usize, anisotropy: Anisotropy) -> Result<Self> {
        Self::build(RayKind::Fibonacci, fibonacci_lattice(n)?, anisotropy)
    }

    /// `n_polar` interior latitude rings times `n_azimuth` longitudes, plus both
    /// poles; `n = n_polar * n_azimuth + 2`.
    pub fn equidistant(n_polar: usize, n_azimuth: usize, anisotropy: Anisotropy) -> Result<Self> {
        if n_polar < 2 || n_azimuth < 3 {
            return Err(Error::InvalidArgument(format!(
                "equidistant rays need n_polar >= 2 and n_azimuth >= 3, got {n_polar} x {n_azimuth}"
            )));
        }
        let mut raw = Vec::with_capacity(n_polar * n_azimuth + 2);
        raw.push([0.0, 0.0, -1.0]);
        for i in 0..n_polar {
            // Latitude rings from the south pole upwards.
            let theta = PI - PI * (i + 1) as f64 / (n_polar + 1) as f64;
            let (st, ct) = theta.sin_cos();
            for j in 0..n_azimuth {
                let a = 2.0 * PI * j as f64 / n_azimuth as f64;
                raw.push([st * a.cos(), st * a.sin(), ct]);
            }
        }
        raw.push([0.0, 0.0, 1.0]);
        Self::build(RayKind::Equidistant, raw, anisotropy)
    }

    /// Equidistant grid with roughly square angular spacing
    /// (`n_azimuth ~ 2 n_polar`) and about `n` rays; the exact count is
    /// `n_polar * n_azimuth + 2`.
    pub fn equidistant_near(n: usize, anisotropy: Anisotropy) -> Result<Self> {
        let inner = n.saturating_sub(2).max(6) as f64;
        let np = ((inner / 2.0).sqrt().round() as usize).max(2);
        let na = ((inner / np as f64).round() as usize).max(3);
        Self::equidistant(np, na, anisotropy)
    }

    /// Ray `k` as a `(z, y, x)` vector, matching voxel coordinate order.
    #[inline]
    pub fn dir_zyx(&self, k: usize) -> Vector3<f64> {
        let r = self.rays[k];
        Vector3::new(r[2], r[1], r[0])
    }

    /// Faces re-wound for `(z, y, x)` coordinates. Swapping the x and z axes
    /// reverses orientation, so the winding is reversed as well.
    pub fn faces_zyx(&self) -> Vec<[usize; 3]> {
        self.faces.iter().map(|f| [f[0], f[2], f[1]]).collect()
    }

    pub fn is_triangulated(&self) -> bool {
        !self.faces.is_empty()
    }

    /// Checks closure, consistent orientation, vertex usage and Euler's relation.
    pub fn check_triangulation(&self) -> Result<()> {
        if self.faces.iter().flatten().any(|&i| i >= self.n) {
            return Err(Error::Degenerate("face index out of range".into()));
        }
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut uses = vec![0usize; self.n];
        for f in &self.faces {
            for e in 0..3 {
                *directed.entry((f[e], f[(e + 1) % 3])).or_default() += 1;
                uses[f[e]] += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(Error::Degenerate(format!("edge ({a}, {b}) not shared by exactly two faces")));
            }
        }
        if let Some(k) = uses.iter().position(|&u| u < 3) {
            return Err(Error::Degenerate(format!("ray {k} used by fewer than 3 faces")));
        }
        let v = self.n as i64;
        let e = (directed.len() / 2) as i64;
        let f = self.faces.len() as i64;
        if v - e + f != 2 {
            return Err(Error::Degenerate(format!("Euler characteristic {} != 2", v - e + f)));
        }
        // Orientation relative to the ray centroid, which is interior to the
        // hull even when the origin sits on its boundary (e.g. n = 4).
        let centroid = self.rays.iter().fold(Vector3::zeros(), |s, r| s + Vector3::from(*r)) / self.n as f64;
        for f in &self.faces {
            let [a, b, c] = f.map(|i| Vector3::from(self.rays[i]));
            if (b - a).cross(&(c - a)).dot(&((a + b + c) / 3.0 - centroid)) <= 0.0 {
                return Err(Error::Degenerate("face not outward oriented".into()));
            }
        }
        Ok(())
    }
}

/// Median per-axis bounding-box extents and the derived anisotropy factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyEstimate {
    /// Median extents in voxels, `(x, y, z)` order.
    pub median_extent: [f64; 3],
    pub anisotropy: Anisotropy,
    pub instances: usize,
}

/// Axis-aligned bounding box extents `(z, y, x)` of every instance, keyed by label.
pub fn instance_extents(labels: &LabelVolume) -> BTreeMap<u32, [usize; 3]> {
    let mut boxes: BTreeMap<u32, ([usize; 3], [usize; 3])> = BTreeMap::new();
    let [nz, ny, nx] = labels.shape();
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let l = labels.data[i];
                i += 1;
                if l == 0 {
                    continue;
                }
                let b = boxes.entry(l).or_insert(([z, y, x], [z, y, x]));
                b.0 = [b.0[0].min(z), b.0[1].min(y), b.0[2].min(x)];
                b.1 = [b.1[0].max(z), b.1[1].max(y), b.1[2].max(x)];
            }
        }
    }
    boxes
        .into_iter()
        .map(|(l, (lo, hi))| (l, [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1]))
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Anisotropy from the median instance bounding box over all given volumes.
pub fn estimate_anisotropy(volumes: &[&LabelVolume]) -> Result<AnisotropyEstimate> {
    let extents: Vec<[usize; 3]> = volumes
        .iter()
        .flat_map(|v| instance_extents(v).into_values())
        .collect();
    if extents.is_empty() {
        return Err(Error::NoInstances);
    }
    let axis = |i: usize| median(&mut extents.iter().map(|e| e[i] as f64).collect::<Vec<_>>());
    let (mz, my, mx) = (axis(0), axis(1), axis(2));
    let anisotropy = anisotropy_from_extents([mx, my, mz])?;
    Ok(AnisotropyEstimate {
        median_extent: [mx, my, mz],
        anisotropy,
        instances: extents.len(),
    })
}

/// Anisotropy factor for median extents given in `(x, y, z)` order: the
/// largest extent divided by each axis extent, so the smallest component
/// is 1 and a short (squeezed) axis gets a large factor. Dividing lattice
/// coordinates by it flattens the rays along that axis.
pub fn anisotropy_from_extents(extent_xyz: [f64; 3]) -> Result<Anisotropy> {
    if extent_xyz.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidArgument(format!("extents {extent_xyz:?} must be positive")));
    }
    let max = extent_xyz.iter().copied().fold(0.0, f64::max);
    Anisotropy::new(max / extent_xyz[0], max / extent_xyz[1], max / extent_xyz[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{Dtype, VolumeMeta};

    fn norm(r: &[f64; 3]) -> f64 {
        (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
    }

    #[test]
    fn two_point_lattice_is_the_poles() {
        let s = RaySystem::fibonacci(2, Anisotropy::ISOTROPIC).unwrap();
        assert_eq!(s.rays[0], [0.0, 0.0, -1.0]);
        assert_eq!(s.rays[1], [0.0, 0.0, 1.0]);
        assert!(s.faces.is_empty());
    }

    #[test]
    fn poles_exact_for_all_n() {
        for n in [4, 5, 17, 64, 96, 255] {
            let s = RaySystem::fibonacci(n, Anisotropy::ISOTROPIC).unwrap();
            assert_eq!(s.rays[0], [0.0, 0.0, -1.0]);
            assert_eq!(s.rays[n - 1], [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn isotropic_rays_equal_raw_lattice() {
        let raw = fibonacci_lattice(96).unwrap();
        let s = RaySystem::fibonacci(96, Anisotropy::ISOTROPIC).unwrap();
        for (a, b) in raw.iter().zip(&s.rays) {
            let l = norm(a);
            for i in 0..3 {
                assert!((a[i] / l - b[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn triangulations_are_watertight() {
        for n in [4, 6, 64, 96, 256] {
            for s in [Anisotropy::ISOTROPIC, Anisotropy::new(1.0, 1.0, 7.1).unwrap()] {
                let sys = RaySystem::fibonacci(n, s).unwrap();
                sys.check_triangulation().unwrap();
                assert_eq!(sys.faces.len(), 2 * n - 4);
                for r in &sys.rays {
                    assert!((norm(r) - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn anisotropy_flattens_ray_elevation() {
        let mean_abs_z = |s: &RaySystem| s.rays.iter().map(|r| r[2].abs()).sum::<f64>() / s.n as f64;
        let iso = RaySystem::fibonacci(96, Anisotropy::ISOTROPIC).unwrap();
        let aniso = RaySystem::fibonacci(96, Anisotropy::new(1.0, 1.0, 7.1).unwrap()).unwrap();
        assert!(mean_abs_z(&aniso) < mean_abs_z(&iso));
    }

    #[test]
    fn equidistant_grid() {
        assert!(RaySystem::equidistant(1, 4, Anisotropy::ISOTROPIC).is_err());
        assert!(RaySystem::equidistant(2, 2, Anisotropy::ISOTROPIC).is_err());
        let s = RaySystem::equidistant(2, 4, Anisotropy::ISOTROPIC).unwrap();
        assert_eq!(s.n, 10);
        assert_eq!(s.rays[0], [0.0, 0.0, -1.0]);
        assert_eq!(s.rays[9], [0.0, 0.0, 1.0]);
        s.check_triangulation().unwrap();
        let big = RaySystem::equidistant(6, 12, Anisotropy::new(1.0, 2.0, 3.0).unwrap()).unwrap();
        big.check_triangulation().unwrap();
        assert_eq!(RaySystem::equidistant_near(96, Anisotropy::ISOTROPIC).unwrap().n, 7 * 13 + 2);
    }

    #[test]
    fn json_shape() {
        let s = RaySystem::fibonacci(6, Anisotropy::new(1.0, 1.0, 2.0).unwrap()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["kind"], "fibonacci");
        assert_eq!(v["anisotropy"], serde_json::json!([1.0, 1.0, 2.0]));
        assert_eq!(v["rays"].as_array().unwrap().len(), 6);
        let back: RaySystem = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Anisotropy>("[1, 0, 1]").is_err());
    }

    fn boxes_volume(boxes: &[([usize; 3], [usize; 3])], shape: [usize; 3]) -> LabelVolume {
        let mut v = LabelVolume::zeros(VolumeMeta::new(shape, 0, Dtype::U16)).unwrap();
        for (id, (lo, ext)) in boxes.iter().enumerate() {
            for z in lo[0]..lo[0] + ext[0] {
                for y in lo[1]..lo[1] + ext[1] {
                    for x in lo[2]..lo[2] + ext[2] {
                        v.set(z, y, x, id as u32 + 1);
                    }
                }
            }
        }
        v
    }

    #[test]
    fn anisotropy_of_single_box() {
        // Extent (X, Y, Z) = (10, 10, 70).
        let v = boxes_volume(&[([2, 1, 1], [70, 10, 10])], [80, 12, 12]);
        let est = estimate_anisotropy(&[&v]).unwrap();
        assert_eq!(est.median_extent, [10.0, 10.0, 70.0]);
        assert_eq!(est.anisotropy, Anisotropy::new(7.0, 7.0, 1.0).unwrap());
    }

    #[test]
    fn squeezed_z_gives_large_sz() {
        // Extent (X, Y, Z) = (71, 71, 10), as for nuclei imaged with coarse Z.
        let v = boxes_volume(&[([1, 2, 2], [10, 71, 71])], [12, 75, 75]);
        let s = estimate_anisotropy(&[&v]).unwrap().anisotropy;
        assert_eq!((s.sx, s.sy), (1.0, 1.0));
        assert!((s.sz - 7.1).abs() < 1e-12);
        let iso = estimate_anisotropy(&[&boxes_volume(&[([0, 0, 0], [9, 9, 9])], [10, 10, 10])]).unwrap();
        assert_eq!(iso.anisotropy, Anisotropy::ISOTROPIC);
    }

    #[test]
    fn anisotropy_invariant_to_relabel_and_translation() {
        let a = boxes_volume(&[([0, 0, 0], [3, 5, 7]), ([10, 10, 10], [4, 4, 9]), ([0, 12, 0], [5, 6, 6])], [20, 20, 20]);
        let b = boxes_volume(&[([1, 12, 3], [5, 6, 6]), ([4, 2, 1], [3, 5, 7]), ([11, 9, 8], [4, 4, 9])], [20, 20, 20]);
        assert_eq!(estimate_anisotropy(&[&a]).unwrap(), estimate_anisotropy(&[&b]).unwrap());
        let empty = LabelVolume::zeros(VolumeMeta::new([2, 2, 2], 0, Dtype::U8)).unwrap();
        assert!(matches!(estimate_anisotropy(&[&empty]), Err(Error::NoInstances)));
    }
}
