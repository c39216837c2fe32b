//! Direction lookup for the cones spanned by ray triangles.
//!
//! Every face `(i, j, k)` of a ray system spans the cone
//! `{a r_i + b r_j + c r_k : a, b, c >= 0}`; the cones tile space around the
//! origin. Which cone holds a direction depends only on the rays, never on
//! the radial distances, so one index serves every polyhedron that shares
//! the ray system. The index is a cube map: each bin keeps the faces whose
//! spherical triangle may touch it (conservative cap-vs-cap test).

use nalgebra::Vector3;

type V3 = Vector3<f64>;

const BINS_PER_SIDE: usize = 8;

#[derive(Debug, Clone)]
pub(crate) struct ConeIndex {
    /// `(z, y, x)` unit ray directions.
    pub dirs: Vec<V3>,
    /// Faces wound counter-clockwise (outward) in `(z, y, x)` coordinates.
    pub faces: Vec<[usize; 3]>,
    /// `det[r_i, r_j, r_k]` per face (positive).
    pub dets: Vec<f64>,
    /// Unit inward normals of the three side planes of each cone.
    sides: Vec<[V3; 3]>,
    bins: Vec<Vec<u32>>,
}

impl ConeIndex {
    pub fn new(dirs: Vec<V3>, faces: Vec<[usize; 3]>) -> Self {
        let dets = faces
            .iter()
            .map(|f| dirs[f[0]].dot(&dirs[f[1]].cross(&dirs[f[2]])))
            .collect();
        let sides = faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| dirs[i]);
                [a.cross(&b), b.cross(&c), c.cross(&a)].map(|n| {
                    let l = n.norm();
                    if l > 0.0 {
                        n / l
                    } else {
                        n
                    }
                })
            })
            .collect();
        // Bounding cap of every spherical face triangle.
        let caps: Vec<(V3, f64)> = faces
            .iter()
            .map(|f| {
                let m = (dirs[f[0]] + dirs[f[1]] + dirs[f[2]]).normalize();
                let r = f.iter().map(|&i| angle(&m, &dirs[i])).fold(0.0, f64::max);
                (m, r)
            })
            .collect();
        let mut bins = Vec::with_capacity(6 * BINS_PER_SIDE * BINS_PER_SIDE);
        for side in 0..6 {
            for a in 0..BINS_PER_SIDE {
                for b in 0..BINS_PER_SIDE {
                    let corner = |s: f64, t: f64| cube_dir(side, s, t);
                    let g = |i: usize| -1.0 + 2.0 * i as f64 / BINS_PER_SIDE as f64;
                    let (s0, s1, t0, t1) = (g(a), g(a + 1), g(b), g(b + 1));
                    let center = corner(0.5 * (s0 + s1), 0.5 * (t0 + t1));
                    let radius = [corner(s0, t0), corner(s0, t1), corner(s1, t0), corner(s1, t1)]
                        .iter()
                        .map(|c| angle(&center, c))
                        .fold(0.0, f64::max);
                    let list: Vec<u32> = caps
                        .iter()
                        .enumerate()
                        .filter(|(_, (m, r))| angle(&center, m) <= radius + r + 1e-6)
                        .map(|(i, _)| i as u32)
                        .collect();
                    bins.push(list);
                }
            }
        }
        Self {
            dirs,
            faces,
            dets,
            sides,
            bins,
        }
    }

    /// Faces whose cone may contain the (nonzero) direction `p`.
    #[inline]
    pub fn candidates(&self, p: &V3) -> &[u32] {
        let (ax, ay, az) = (p.x.abs(), p.y.abs(), p.z.abs());
        let (side, s, t) = if ax >= ay && ax >= az {
            (if p.x >= 0.0 { 0 } else { 1 }, p.y / ax, p.z / ax)
        } else if ay >= az {
            (if p.y >= 0.0 { 2 } else { 3 }, p.x / ay, p.z / ay)
        } else {
            (if p.z >= 0.0 { 4 } else { 5 }, p.x / az, p.y / az)
        };
        let cell = |v: f64| (((v + 1.0) * 0.5 * BINS_PER_SIDE as f64) as usize).min(BINS_PER_SIDE - 1);
        &self.bins[(side * BINS_PER_SIDE + cell(s)) * BINS_PER_SIDE + cell(t)]
    }

    /// Whether `p` lies in the closed cone of `face`, up to `tol * |p|`.
    #[inline]
    pub fn in_cone(&self, face: usize, p: &V3, tol: f64) -> bool {
        let s = &self.sides[face];
        s[0].dot(p) >= -tol && s[1].dot(p) >= -tol && s[2].dot(p) >= -tol
    }
}

fn cube_dir(side: usize, s: f64, t: f64) -> V3 {
    let v = match side {
        0 => V3::new(1.0, s, t),
        1 => V3::new(-1.0, s, t),
        2 => V3::new(s, 1.0, t),
        3 => V3::new(s, -1.0, t),
        4 => V3::new(s, t, 1.0),
        _ => V3::new(s, t, -1.0),
    };
    v.normalize()
}

fn angle(a: &V3, b: &V3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rays::{Anisotropy, RaySystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_direction_finds_its_cone() {
        for sys in [
            RaySystem::fibonacci(96, Anisotropy::ISOTROPIC).unwrap(),
            RaySystem::fibonacci(32, Anisotropy::new(1.0, 1.0, 4.0).unwrap()).unwrap(),
            RaySystem::equidistant(5, 10, Anisotropy::ISOTROPIC).unwrap(),
        ] {
            let idx = sys.cones();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..20_000 {
                let p = V3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if p.norm() < 1e-6 {
                    continue;
                }
                let brute: Vec<usize> = (0..idx.faces.len()).filter(|&f| idx.in_cone(f, &p, 0.0)).collect();
                assert!(!brute.is_empty());
                let cand = idx.candidates(&p);
                for f in brute {
                    assert!(cand.contains(&(f as u32)), "face {f} missing from bin");
                }
            }
        }
    }
}
