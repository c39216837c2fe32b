//! Star-convex polyhedra over a shared ray system.
//!
//! A polyhedron with center `c` and radii `d_k` has vertices `c + d_k r_k`
//! and the triangulation of its ray system. It is the union of the
//! tetrahedra `(c, v_i, v_j, v_k)` over all faces, which is what volume,
//! membership and rasterization are built on.
//!
//! Coordinates are `(z, y, x)` voxel units; voxel centers sit on integers.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::hull::convex_hull;
use crate::polytope::{ConvexPolytope, Plane};
use crate::rays::RaySystem;

pub type V3 = Vector3<f64>;

/// Absolute tolerance (voxel units) for point-on-surface decisions.
pub const CONTAINS_TOL: f64 = 1e-9;

/// Half-open integer voxel box `[lo, hi)` in `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl VoxelBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn from_shape(shape: [usize; 3]) -> Self {
        Self {
            lo: [0; 3],
            hi: shape.map(|s| s as i64),
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.hi[i] <= self.lo[i])
    }

    pub fn extent(&self) -> [usize; 3] {
        std::array::from_fn(|i| (self.hi[i] - self.lo[i]).max(0) as usize)
    }

    pub fn len(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn intersect(&self, other: &VoxelBox) -> VoxelBox {
        VoxelBox {
            lo: std::array::from_fn(|i| self.lo[i].max(other.lo[i])),
            hi: std::array::from_fn(|i| self.hi[i].min(other.hi[i])),
        }
    }

    pub fn translate(&self, t: [i64; 3]) -> VoxelBox {
        VoxelBox {
            lo: std::array::from_fn(|i| self.lo[i] + t[i]),
            hi: std::array::from_fn(|i| self.hi[i] + t[i]),
        }
    }

    /// Voxels in C order (x fastest).
    pub fn iter(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        let b = *self;
        let empty = b.is_empty();
        (b.lo[0]..if empty { b.lo[0] } else { b.hi[0] }).flat_map(move |z| {
            (b.lo[1]..b.hi[1]).flat_map(move |y| (b.lo[2]..b.hi[2]).map(move |x| [z, y, x]))
        })
    }
}

/// Binary mask over a voxel box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    pub region: VoxelBox,
    pub data: Vec<bool>,
}

impl VoxelMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, v: [i64; 3]) -> bool {
        let r = &self.region;
        if (0..3).any(|i| v[i] < r.lo[i] || v[i] >= r.hi[i]) {
            return false;
        }
        let e = r.extent();
        let idx = (((v[0] - r.lo[0]) as usize * e[1]) + (v[1] - r.lo[1]) as usize) * e[2] + (v[2] - r.lo[2]) as usize;
        self.data[idx]
    }
}

/// One candidate or instance shape, with eagerly computed cheap geometry and
/// lazily computed convex hull and kernel.
#[derive(Debug, Clone)]
pub struct StarPolyhedron {
    center: V3,
    dists: Vec<f64>,
    prob: f64,
    rays: Arc<RaySystem>,
    geom: GeomCache,
}

#[derive(Debug, Clone)]
pub struct GeomCache {
    vertices: Vec<V3>,
    volume: f64,
    r_out: f64,
    r_in: f64,
    /// Outward supporting plane per face; `None` for zero-volume tetrahedra.
    planes: Vec<Option<Plane>>,
    /// False when some proper cone has a collapsed tetrahedron; the facet
    /// planes then no longer bound a subset of the shape.
    planes_complete: bool,
    lo: V3,
    hi: V3,
    hull: OnceLock<ConvexPolytope>,
    kernel: OnceLock<ConvexPolytope>,
    kernel_eroded: OnceLock<ConvexPolytope>,
}

impl StarPolyhedron {
    /// `center` is `(z, y, x)`; `dists[k]` is the radius along ray `k`.
    pub fn new(center: [f64; 3], dists: Vec<f64>, prob: f64, rays: Arc<RaySystem>) -> Result<Self> {
        if !rays.is_triangulated() {
            return Err(Error::InvalidArgument("ray system has no triangulation".into()));
        }
        if dists.len() != rays.n {
            return Err(Error::ShapeMismatch(format!(
                "{} distances for {} rays",
                dists.len(),
                rays.n
            )));
        }
        if let Some(d) = dists.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::InvalidArgument(format!("radial distance {d} is not a non-negative number")));
        }
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::InvalidArgument(format!("probability {prob} outside [0, 1]")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("center is not finite".into()));
        }
        let center = V3::from(center);
        let geom = GeomCache::build(&center, &dists, &rays);
        Ok(Self {
            center,
            dists,
            prob,
            rays,
            geom,
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center.into()
    }

    pub fn center_vec(&self) -> &V3 {
        &self.center
    }

    pub fn dists(&self) -> &[f64] {
        &self.dists
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    pub fn rays(&self) -> &Arc<RaySystem> {
        &self.rays
    }

    /// Valid as a candidate: at least one radius is positive.
    pub fn is_nondegenerate(&self) -> bool {
        self.dists.iter().any(|&d| d > 0.0)
    }

    pub fn vertices(&self) -> &[V3] {
        &self.geom.vertices
    }

    /// Enclosed volume, the sum of the signed tetrahedra `(c, v_i, v_j, v_k)`.
    pub fn volume(&self) -> f64 {
        self.geom.volume
    }

    /// `max_k d_k`; the polyhedron lies inside this sphere around the center.
    pub fn bounding_radius(&self) -> f64 {
        self.geom.r_out
    }

    /// Smallest center-to-facet-plane distance; that sphere lies inside.
    pub fn inscribed_radius(&self) -> f64 {
        self.geom.r_in
    }

    /// Floating bounding box `(lo, hi)` of the vertices.
    pub fn bounds(&self) -> (V3, V3) {
        (self.geom.lo, self.geom.hi)
    }

    /// Integer voxel box covering every voxel center that can be inside.
    pub fn voxel_bounds(&self) -> VoxelBox {
        let (lo, hi) = self.bounds();
        VoxelBox {
            lo: std::array::from_fn(|i| (lo[i] - CONTAINS_TOL).ceil() as i64),
            hi: std::array::from_fn(|i| (hi[i] + CONTAINS_TOL).floor() as i64 + 1),
        }
    }

    pub fn convex_hull(&self) -> &ConvexPolytope {
        self.geom.hull.get_or_init(|| match convex_hull(&self.geom.vertices) {
            Ok(tris) => ConvexPolytope::from_triangles(&self.geom.vertices, &tris),
            Err(_) => ConvexPolytope::empty(),
        })
    }

    /// Intersection of the inner half-spaces of every facet plane (clipped to
    /// the vertex bounding box). Empty when numerically degenerate.
    pub fn kernel(&self) -> &ConvexPolytope {
        self.geom.kernel.get_or_init(|| self.kernel_with(0.0))
    }

    /// The kernel eroded by one voxel cube `[-1/2, 1/2]^3`. Every lattice point
    /// within half a voxel (max-norm) of a point of this set lies in the kernel.
    pub fn kernel_eroded(&self) -> &ConvexPolytope {
        self.geom.kernel_eroded.get_or_init(|| self.kernel_with(0.5))
    }

    /// Facet half-spaces shrunk by the cube `[-h, h]^3`, nearest planes first
    /// so later ones mostly miss.
    /// `None` when the facet planes do not bound a subset of the shape.
    pub fn kernel_planes(&self, h: f64) -> Option<Vec<Plane>> {
        if !self.geom.planes_complete {
            return None;
        }
        let mut planes: Vec<Plane> = self.geom.planes.iter().flatten().map(|p| p.shrink_by_cube(h)).collect();
        planes.sort_by(|p, q| q.signed_distance(&self.center).total_cmp(&p.signed_distance(&self.center)));
        Some(planes)
    }

    fn kernel_with(&self, h: f64) -> ConvexPolytope {
        let Some(planes) = self.kernel_planes(h) else {
            return ConvexPolytope::empty();
        };
        let d = V3::repeat(h);
        ConvexPolytope::from_halfspaces(self.geom.lo + d, self.geom.hi - d, planes.iter())
    }

    /// Closed-set membership with a small absolute tolerance.
    pub fn contains(&self, q: &V3) -> bool {
        let p = q - self.center;
        let r2 = p.norm_squared();
        let r_in = self.geom.r_in;
        if r2 <= r_in * r_in {
            return true;
        }
        let r_out = self.geom.r_out + CONTAINS_TOL;
        if r2 > r_out * r_out {
            return false;
        }
        let cones = self.rays.cones();
        let tol = CONTAINS_TOL;
        for &f in cones.candidates(&p) {
            let f = f as usize;
            if let Some(plane) = &self.geom.planes[f] {
                if cones.in_cone(f, &p, tol) && plane.signed_distance(q) <= tol {
                    return true;
                }
            }
        }
        false
    }

    #[inline]
    pub fn contains_voxel(&self, v: [i64; 3]) -> bool {
        self.contains(&V3::new(v[0] as f64, v[1] as f64, v[2] as f64))
    }

    /// Mask of voxels in `region` whose centers lie inside.
    pub fn rasterize(&self, region: VoxelBox) -> VoxelMask {
        let inner = region.intersect(&self.voxel_bounds());
        let mut data = vec![false; region.len()];
        if !inner.is_empty() {
            let e = region.extent();
            for v in inner.iter() {
                if self.contains_voxel(v) {
                    let idx = (((v[0] - region.lo[0]) as usize * e[1]) + (v[1] - region.lo[1]) as usize) * e[2]
                        + (v[2] - region.lo[2]) as usize;
                    data[idx] = true;
                }
            }
        }
        VoxelMask { region, data }
    }

    /// Number of voxel centers inside.
    pub fn voxel_count(&self) -> usize {
        self.voxel_bounds().iter().filter(|v| self.contains_voxel(*v)).count()
    }

    /// Same shape moved by `t` (z, y, x).
    pub fn translated(&self, t: [f64; 3]) -> Result<Self> {
        let c = self.center();
        Self::new([c[0] + t[0], c[1] + t[1], c[2] + t[2]], self.dists.clone(), self.prob, self.rays.clone())
    }

    pub fn with_prob(&self, prob: f64) -> Result<Self> {
        Self::new(self.center(), self.dists.clone(), prob, self.rays.clone())
    }
}

impl GeomCache {
    fn build(center: &V3, dists: &[f64], rays: &RaySystem) -> Self {
        let cones = rays.cones();
        let vertices: Vec<V3> = dists
            .iter()
            .zip(&cones.dirs)
            .map(|(&d, r)| center + r * d)
            .collect();
        let mut volume = 0.0;
        let mut r_in = f64::INFINITY;
        let scale = dists.iter().copied().fold(0.0, f64::max);
        let planes: Vec<Option<Plane>> = cones
            .faces
            .iter()
            .zip(&cones.dets)
            .map(|(f, det)| {
                let [a, b, c] = f.map(|i| dists[i]);
                let six_vol = a * b * c * det;
                volume += six_vol;
                if six_vol <= 1e-12 * scale * scale * scale {
                    return None;
                }
                let [va, vb, vc] = f.map(|i| vertices[i]);
                let plane = Plane::through((vb - va).cross(&(vc - va)), &va)?;
                r_in = r_in.min(-plane.signed_distance(center));
                Some(plane)
            })
            .collect();
        let planes_complete = planes
            .iter()
            .zip(&cones.dets)
            .all(|(p, &det)| p.is_some() || det <= 1e-12);
        let any_zero = dists.iter().any(|&d| d <= 0.0);
        let r_in = if any_zero || !planes_complete || !r_in.is_finite() { 0.0 } else { r_in.max(0.0) };
        let (lo, hi) = vertices
            .iter()
            .fold((*center, *center), |(lo, hi), v| (lo.inf(v), hi.sup(v)));
        GeomCache {
            vertices,
            volume: volume / 6.0,
            r_out: scale,
            r_in,
            planes,
            planes_complete,
            lo,
            hi,
            hull: OnceLock::new(),
            kernel: OnceLock::new(),
            kernel_eroded: OnceLock::new(),
        }
    }
}

/// Volume of the intersection of two balls with center distance `dist`.
pub fn sphere_intersection_volume(r1: f64, r2: f64, dist: f64) -> f64 {
    let (r1, r2) = (r1.max(0.0), r2.max(0.0));
    let d = dist.abs();
    if d >= r1 + r2 {
        return 0.0;
    }
    let (small, large) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    if d + small <= large {
        return 4.0 / 3.0 * PI * small * small * small;
    }
    let s = r1 + r2 - d;
    PI * s * s * (d * d + 2.0 * d * (r1 + r2) - 3.0 * (r1 - r2) * (r1 - r2)) / (12.0 * d)
}

/// Volume of `a ∩ b` for convex polytopes.
pub fn convex_intersection_volume(a: &ConvexPolytope, b: &ConvexPolytope) -> f64 {
    a.intersect(b).volume()
}

/// Voxel-center count of `p ∩ q` over the intersection of their boxes.
pub fn exact_intersection_volume(p: &StarPolyhedron, q: &StarPolyhedron) -> f64 {
    let d = (p.center_vec() - q.center_vec()).norm();
    if d > p.bounding_radius() + q.bounding_radius() + 2.0 * CONTAINS_TOL {
        return 0.0;
    }
    let region = p.voxel_bounds().intersect(&q.voxel_bounds());
    region.iter().filter(|v| p.contains_voxel(*v) && q.contains_voxel(*v)).count() as f64
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rays::{Anisotropy, RayKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn octahedron_rays() -> Arc<RaySystem> {
        let rays = vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ];
        let pts: Vec<V3> = rays.iter().map(|r| V3::from(*r)).collect();
        let faces = convex_hull(&pts).unwrap();
        let sys: RaySystem = serde_json::from_value(serde_json::json!({
            "kind": "fibonacci", "n": 6, "anisotropy": [1.0, 1.0, 1.0],
            "rays": rays, "faces": faces,
        }))
        .unwrap();
        sys.validate().unwrap();
        assert_eq!(sys.kind, RayKind::Fibonacci);
        Arc::new(sys)
    }

    pub fn fib(n: usize) -> Arc<RaySystem> {
        Arc::new(RaySystem::fibonacci(n, Anisotropy::ISOTROPIC).unwrap())
    }

    pub fn random_poly(rng: &mut ChaCha8Rng, rays: &Arc<RaySystem>, center: [f64; 3], lo: f64, hi: f64) -> StarPolyhedron {
        let d = (0..rays.n).map(|_| rng.random_range(lo..hi)).collect();
        StarPolyhedron::new(center, d, 1.0, rays.clone()).unwrap()
    }

    /// Independent membership oracle: intersect the ray from the center
    /// towards `q` with the facet triangles and compare distances.
    fn radial_oracle(p: &StarPolyhedron, q: &V3) -> Option<bool> {
        let dir = q - p.center_vec();
        let len = dir.norm();
        if len == 0.0 {
            return Some(true);
        }
        let u = dir / len;
        let v = p.vertices();
        for f in p.rays().faces_zyx() {
            let (a, b, c) = (v[f[0]], v[f[1]], v[f[2]]);
            let e1 = b - a;
            let e2 = c - a;
            let h = u.cross(&e2);
            let det = e1.dot(&h);
            if det.abs() < 1e-14 {
                continue;
            }
            let s = p.center_vec() - a;
            let bu = s.dot(&h) / det;
            let qv = s.cross(&e1);
            let bv = u.dot(&qv) / det;
            if bu < -1e-12 || bv < -1e-12 || bu + bv > 1.0 + 1e-12 {
                continue;
            }
            let t = e2.dot(&qv) / det;
            if t > 0.0 {
                if (len - t).abs() < 1e-7 {
                    return None;
                }
                return Some(len <= t);
            }
        }
        None
    }

    #[test]
    fn octahedron_geometry() {
        let rays = octahedron_rays();
        let p = StarPolyhedron::new([0.0; 3], vec![1.0; 6], 1.0, rays.clone()).unwrap();
        assert!((p.volume() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.bounding_radius(), 1.0);
        assert!((p.inscribed_radius() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let mut verts: Vec<[f64; 3]> = p.vertices().iter().map(|v| [v.x, v.y, v.z]).collect();
        verts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect = vec![
            [-1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0],
        ];
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(verts, expect);
        // Convex: hull, kernel and polyhedron coincide.
        assert!((p.convex_hull().volume() - p.volume()).abs() < 1e-9);
        assert!((p.kernel().volume() - p.volume()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_point_polyhedron() {
        let p = StarPolyhedron::new([1.0, 2.0, 3.0], vec![0.0; 96], 0.5, fib(96)).unwrap();
        assert!(p.vertices().iter().all(|v| *v == V3::new(1.0, 2.0, 3.0)));
        assert_eq!(p.volume(), 0.0);
        assert!(!p.is_nondegenerate());
        assert!(p.kernel().is_empty());
    }

    #[test]
    fn constructor_rejects_bad_input() {
        let r = fib(8);
        assert!(StarPolyhedron::new([0.0; 3], vec![1.0; 7], 0.5, r.clone()).is_err());
        assert!(StarPolyhedron::new([0.0; 3], vec![-1.0; 8], 0.5, r.clone()).is_err());
        assert!(StarPolyhedron::new([0.0; 3], vec![1.0; 8], 1.5, r.clone()).is_err());
        let flat = Arc::new(RaySystem::fibonacci(3, Anisotropy::ISOTROPIC).unwrap());
        assert!(StarPolyhedron::new([0.0; 3], vec![1.0; 3], 0.5, flat).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_poly(&mut rng, &fib(32), [10.0, 10.0, 10.0], 3.0, 6.0);
        let t = [3.0, -2.0, 5.0];
        let q = p.translated(t).unwrap();
        for (a, b) in p.vertices().iter().zip(q.vertices()) {
            assert!((b - a - V3::from(t)).norm() < 1e-12);
        }
        let mp = p.rasterize(p.voxel_bounds());
        let mq = q.rasterize(p.voxel_bounds().translate([3, -2, 5]));
        assert_eq!(mp.data, mq.data);
    }

    #[test]
    fn sphere_volume_convergence() {
        let r = 7.0;
        let p = StarPolyhedron::new([0.0; 3], vec![r; 1000], 1.0, fib(1000)).unwrap();
        let ball = 4.0 / 3.0 * PI * r * r * r;
        assert!((p.volume() - ball).abs() / ball < 0.01);
        assert!(p.volume() < ball);
    }

    #[test]
    fn volume_homogeneity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_poly(&mut rng, &fib(64), [0.0; 3], 1.0, 4.0);
        let lam: f64 = 2.7;
        let q = StarPolyhedron::new([0.0; 3], p.dists().iter().map(|d| d * lam).collect(), 1.0, p.rays().clone()).unwrap();
        assert!((q.volume() / p.volume() - lam.powi(3)).abs() < 1e-9 * lam.powi(3));
    }

    #[test]
    fn radii_bounds() {
        let r = 10.0;
        let p = StarPolyhedron::new([0.0; 3], vec![r; 96], 1.0, fib(96)).unwrap();
        assert_eq!(p.bounding_radius(), r);
        assert!(p.inscribed_radius() <= r && p.inscribed_radius() >= 0.9 * r);
    }

    #[test]
    fn spheres_sandwich_polyhedron_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rays = fib(48);
        for _ in 0..10 {
            let p = random_poly(&mut rng, &rays, [0.0; 3], 1.0, 5.0);
            let (ri, ro) = (p.inscribed_radius(), p.bounding_radius());
            for _ in 0..1000 {
                let q = V3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
                let inside = p.contains(&q);
                if q.norm() <= ri {
                    assert!(inside);
                }
                if q.norm() > ro {
                    assert!(!inside);
                }
            }
        }
    }

    #[test]
    fn contains_matches_radial_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rays = fib(64);
        let mut checked = 0;
        for _ in 0..10 {
            let p = random_poly(&mut rng, &rays, [1.0, -2.0, 0.5], 0.5, 4.0);
            for _ in 0..1000 {
                let q = V3::new(rng.random_range(-4.0..6.0), rng.random_range(-7.0..3.0), rng.random_range(-4.0..5.0));
                if let Some(expect) = radial_oracle(&p, &q) {
                    assert_eq!(p.contains(&q), expect, "q = {q:?}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 9_900);
    }

    #[test]
    fn center_inside_and_far_points_outside() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_poly(&mut rng, &fib(32), [4.0, 4.0, 4.0], 0.5, 3.0);
        assert!(p.contains(&V3::new(4.0, 4.0, 4.0)));
        assert!(!p.contains(&V3::new(4.0, 4.0, 4.0 + p.bounding_radius() + 0.01)));
    }

    #[test]
    fn hull_and_kernel_bracket_spiky_shape() {
        let rays = fib(96);
        let d: Vec<f64> = (0..96).map(|k| if k % 2 == 0 { 1.0 } else { 3.0 }).collect();
        let p = StarPolyhedron::new([0.0; 3], d, 1.0, rays).unwrap();
        let (vk, vh) = (p.kernel().volume(), p.convex_hull().volume());
        assert!(vk < p.volume() && p.volume() < vh, "{vk} {} {vh}", p.volume());
        assert!(p.kernel().contains(p.center_vec(), 1e-9));
    }

    #[test]
    fn kernel_contains_center_and_lies_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rays = fib(32);
        for _ in 0..20 {
            let p = random_poly(&mut rng, &rays, [0.0; 3], 2.0, 4.0);
            let k = p.kernel();
            assert!(!k.is_empty());
            assert!(k.contains(p.center_vec(), 1e-9));
            for v in k.vertices() {
                assert!(p.contains(&v));
            }
            assert!(k.volume() <= p.volume() + 1e-9);
            assert!(p.volume() <= p.convex_hull().volume() + 1e-9);
        }
    }

    #[test]
    fn rasterized_count_tracks_volume() {
        let p = StarPolyhedron::new([20.0, 20.0, 20.0], vec![12.0; 96], 1.0, fib(96)).unwrap();
        let count = p.voxel_count() as f64;
        assert!((count - p.volume()).abs() / p.volume() < 0.02, "{count} vs {}", p.volume());
        let mask = p.rasterize(VoxelBox::new([100, 100, 100], [110, 110, 110]));
        assert_eq!(mask.count(), 0);
        assert!(p.rasterize(p.voxel_bounds()).get([20, 20, 20]));
    }

    #[test]
    fn lens_volumes() {
        assert!((sphere_intersection_volume(1.0, 1.0, 0.0) - 4.0 / 3.0 * PI).abs() < 1e-12);
        assert_eq!(sphere_intersection_volume(1.0, 1.0, 2.0), 0.0);
        assert!((sphere_intersection_volume(1.0, 1.0, 1.0) - 5.0 * PI / 12.0).abs() < 1e-12);
        assert!((sphere_intersection_volume(3.0, 1.0, 1.5) - 4.0 / 3.0 * PI).abs() < 1e-12);
        // Continuity at the containment boundary.
        let a = sphere_intersection_volume(3.0, 1.0, 2.0 - 1e-9);
        let b = sphere_intersection_volume(3.0, 1.0, 2.0 + 1e-9);
        assert!((a - b).abs() < 1e-6);
        // Symmetry.
        assert!((sphere_intersection_volume(2.0, 1.3, 2.1) - sphere_intersection_volume(1.3, 2.0, 2.1)).abs() < 1e-12);
    }

    #[test]
    fn lens_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (r1, r2, d) = (2.0, 1.5, 2.2);
        let n = 400_000;
        let mut hit = 0;
        for _ in 0..n {
            let p = V3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..4.2));
            if p.norm() <= r1 && (p - V3::new(0.0, 0.0, d)).norm() <= r2 {
                hit += 1;
            }
        }
        let mc = hit as f64 / n as f64 * (4.0 * 4.0 * 6.2);
        let exact = sphere_intersection_volume(r1, r2, d);
        assert!((mc - exact).abs() / exact < 0.02, "{mc} vs {exact}");
    }

    #[test]
    fn exact_intersection_properties() {
        let p = StarPolyhedron::new([15.0, 15.0, 15.0], vec![10.0; 96], 1.0, fib(96)).unwrap();
        let self_i = exact_intersection_volume(&p, &p);
        assert!((self_i - p.volume()).abs() / p.volume() < 0.02);
        let far = p.translated([0.0, 0.0, 20.5]).unwrap();
        assert_eq!(exact_intersection_volume(&p, &far), 0.0);
        let near = p.translated([0.0, 3.0, 7.0]).unwrap();
        assert_eq!(exact_intersection_volume(&p, &near), exact_intersection_volume(&near, &p));
    }

    #[test]
    fn convex_intersection_of_offset_boxes() {
        let a = ConvexPolytope::from_box(V3::zeros(), V3::repeat(1.0));
        let b = ConvexPolytope::from_box(V3::new(0.5, 0.0, 0.0), V3::new(1.5, 1.0, 1.0));
        assert!((convex_intersection_volume(&a, &b) - 0.5).abs() < 1e-12);
        assert!((convex_intersection_volume(&a, &a) - 1.0).abs() < 1e-12);
        let c = ConvexPolytope::from_box(V3::repeat(5.0), V3::repeat(6.0));
        assert_eq!(convex_intersection_volume(&a, &c), 0.0);
    }
}
