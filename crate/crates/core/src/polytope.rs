//! Bounded convex polytopes as face lists, with half-space clipping.

use nalgebra::Vector3;

type V3 = Vector3<f64>;

/// Half-space `normal . x <= offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: V3,
    pub offset: f64,
}

impl Plane {
    /// Returns `None` for a zero normal.
    pub fn new(normal: V3, offset: f64) -> Option<Self> {
        let len = normal.norm();
        if len <= 0.0 || !len.is_finite() {
            return None;
        }
        Some(Self {
            normal: normal / len,
            offset: offset / len,
        })
    }

    /// Plane through `point` with outward `normal`.
    pub fn through(normal: V3, point: &V3) -> Option<Self> {
        Self::new(normal, normal.dot(point))
    }

    #[inline]
    pub fn signed_distance(&self, p: &V3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Moves the plane inward by the support of the cube `[-h, h]^3`.
    pub fn shrink_by_cube(&self, h: f64) -> Self {
        let n = self.normal;
        Self {
            normal: n,
            offset: self.offset - h * (n.x.abs() + n.y.abs() + n.z.abs()),
        }
    }
}

/// Planar convex face; vertex indices counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFace {
    pub plane: Plane,
    pub verts: Vec<usize>,
}

impl PolyFace {
    pub fn area(&self, points: &[V3]) -> f64 {
        let v0 = points[self.verts[0]];
        let mut acc = V3::zeros();
        for w in self.verts[1..].windows(2) {
            acc += (points[w[0]] - v0).cross(&(points[w[1]] - v0));
        }
        0.5 * acc.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexPolytope {
    verts: Vec<V3>,
    faces: Vec<PolyFace>,
    volume: f64,
}

/// Scratch state for a run of clips. Removed vertices are set to NaN and
/// compacted away once they outnumber the live ones.
#[derive(Default)]
struct Clipper {
    dist: Vec<f64>,
    side: Vec<i8>,
    cut: Vec<(usize, usize, usize)>,
    cap: Vec<(usize, usize)>,
    ring: Vec<usize>,
    dead: usize,
}

impl ConvexPolytope {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn faces(&self) -> &[PolyFace] {
        &self.faces
    }

    pub fn halfspaces(&self) -> impl Iterator<Item = &Plane> {
        self.faces.iter().map(|f| &f.plane)
    }

    /// Vertex positions, indexed by `PolyFace::verts`.
    pub fn vertices(&self) -> &[V3] {
        &self.verts
    }

    pub fn contains(&self, p: &V3, tol: f64) -> bool {
        !self.is_empty() && self.faces.iter().all(|f| f.plane.signed_distance(p) <= tol)
    }

    /// Axis-aligned box `[lo, hi]`; empty when any extent is non-positive.
    pub fn from_box(lo: V3, hi: V3) -> Self {
        if (0..3).any(|i| hi[i] <= lo[i]) {
            return Self::empty();
        }
        // Corner k has x, y, z from bits 0, 1, 2.
        let verts = (0..8)
            .map(|k| {
                V3::new(
                    if k & 1 != 0 { hi.x } else { lo.x },
                    if k & 2 != 0 { hi.y } else { lo.y },
                    if k & 4 != 0 { hi.z } else { lo.z },
                )
            })
            .collect::<Vec<_>>();
        let quads = [
            (V3::new(-1.0, 0.0, 0.0), [0, 4, 6, 2]),
            (V3::new(1.0, 0.0, 0.0), [1, 3, 7, 5]),
            (V3::new(0.0, -1.0, 0.0), [0, 1, 5, 4]),
            (V3::new(0.0, 1.0, 0.0), [2, 6, 7, 3]),
            (V3::new(0.0, 0.0, -1.0), [0, 2, 3, 1]),
            (V3::new(0.0, 0.0, 1.0), [4, 5, 7, 6]),
        ];
        let faces = quads
            .into_iter()
            .map(|(n, q)| PolyFace {
                plane: Plane::through(n, &verts[q[0]]).expect("unit normal"),
                verts: q.to_vec(),
            })
            .collect();
        Self {
            verts,
            faces,
            volume: 0.0,
        }
        .finish()
    }

    /// Polytope from outward-oriented hull triangles over `points`.
    pub fn from_triangles(points: &[V3], triangles: &[[usize; 3]]) -> Self {
        let mut remap = vec![usize::MAX; points.len()];
        let mut verts = Vec::new();
        let mut faces = Vec::with_capacity(triangles.len());
        for t in triangles {
            let [a, b, c] = t.map(|i| points[i]);
            let Some(plane) = Plane::through((b - a).cross(&(c - a)), &a) else {
                continue;
            };
            let idx = t.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = verts.len();
                    verts.push(points[i]);
                }
                remap[i]
            });
            faces.push(PolyFace {
                plane,
                verts: idx.to_vec(),
            });
        }
        Self {
            verts,
            faces,
            volume: 0.0,
        }
        .finish()
    }

    /// Intersection of a bounding box with half-spaces.
    pub fn from_halfspaces<'a>(lo: V3, hi: V3, planes: impl IntoIterator<Item = &'a Plane>) -> Self {
        let mut poly = Self::from_box(lo, hi);
        let eps = 1e-11 * poly.scale();
        let mut clipper = Clipper::default();
        for p in planes {
            if poly.is_empty() {
                break;
            }
            poly.clip_with(&mut clipper, p, eps);
        }
        poly.finish()
    }

    /// Drops dead vertices, recomputes the volume and collapses to empty when
    /// degenerate.
    fn finish(mut self) -> Self {
        if self.faces.len() < 4 {
            return Self::empty();
        }
        self.compact();
        self.volume = self.compute_volume();
        if self.volume <= 0.0 {
            return Self::empty();
        }
        self
    }

    fn compact(&mut self) {
        let mut remap = vec![usize::MAX; self.verts.len()];
        let mut verts = Vec::with_capacity(self.verts.len());
        for f in &mut self.faces {
            for i in &mut f.verts {
                if remap[*i] == usize::MAX {
                    remap[*i] = verts.len();
                    verts.push(self.verts[*i]);
                }
                *i = remap[*i];
            }
        }
        self.verts = verts;
    }

    fn compute_volume(&self) -> f64 {
        if self.verts.is_empty() {
            return 0.0;
        }
        let c = self.verts.iter().sum::<V3>() / self.verts.len() as f64;
        let mut vol = 0.0;
        for f in &self.faces {
            let v0 = self.verts[f.verts[0]] - c;
            for w in f.verts[1..].windows(2) {
                vol += v0.dot(&(self.verts[w[0]] - c).cross(&(self.verts[w[1]] - c)));
            }
        }
        (vol / 6.0).max(0.0)
    }

    fn scale(&self) -> f64 {
        self.verts
            .iter()
            .flat_map(|v| v.iter())
            .filter(|x| !x.is_nan())
            .fold(1.0f64, |m, x| m.max(x.abs()))
    }

    /// Keeps the part with `plane.signed_distance <= 0`.
    pub fn clip(&self, plane: &Plane) -> Self {
        if self.is_empty() {
            return Self::empty();
        }
        let mut out = self.clone();
        out.clip_with(&mut Clipper::default(), plane, 1e-11 * self.scale());
        out.finish()
    }

    /// One clip without recomputing the volume. Faces fully inside are left
    /// untouched; clears `faces` when nothing remains.
    fn clip_with(&mut self, cl: &mut Clipper, plane: &Plane, eps: f64) {
        let n = self.verts.len();
        cl.dist.clear();
        cl.side.clear();
        let mut any_out = false;
        let mut any_in = false;
        for v in &self.verts {
            let d = plane.signed_distance(v);
            // NaN (dead) vertices compare false everywhere.
            let s = if d > eps {
                1
            } else if d < -eps {
                -1
            } else {
                0
            };
            any_out |= s > 0;
            any_in |= s < 0;
            cl.dist.push(d);
            cl.side.push(s);
        }
        if !any_out {
            return;
        }
        if !any_in {
            self.faces.clear();
            self.verts.clear();
            cl.dead = 0;
            return;
        }

        cl.cut.clear();
        cl.cap.clear();
        let verts = &mut self.verts;
        let mut faces = std::mem::take(&mut self.faces);
        faces.retain_mut(|f| {
            if f.verts.iter().all(|&i| cl.side[i] < 0) {
                return true;
            }
            let has_out = f.verts.iter().any(|&i| cl.side[i] > 0);
            let has_in = f.verts.iter().any(|&i| cl.side[i] < 0);
            if !has_in {
                return false;
            }
            if has_out {
                cl.ring.clear();
                let m = f.verts.len();
                for k in 0..m {
                    let (p, q) = (f.verts[k], f.verts[(k + 1) % m]);
                    let (sp, sq) = (cl.side[p], cl.side[q]);
                    if sp <= 0 {
                        cl.ring.push(p);
                    }
                    if sp * sq < 0 {
                        let key = (p.min(q), p.max(q));
                        let x = match cl.cut.iter().find(|c| (c.0, c.1) == key) {
                            Some(c) => c.2,
                            None => {
                                let (dp, dq) = (cl.dist[p], cl.dist[q]);
                                let t = dp / (dp - dq);
                                verts.push(verts[p] + (verts[q] - verts[p]) * t);
                                cl.dist.push(0.0);
                                cl.side.push(0);
                                cl.cut.push((key.0, key.1, verts.len() - 1));
                                verts.len() - 1
                            }
                        };
                        cl.ring.push(x);
                    }
                }
                f.verts.clear();
                f.verts.extend_from_slice(&cl.ring);
            }
            let m = f.verts.len();
            if m < 3 {
                return false;
            }
            for k in 0..m {
                let (a, b) = (f.verts[k], f.verts[(k + 1) % m]);
                if cl.side[a] == 0 && cl.side[b] == 0 {
                    cl.cap.push((b, a));
                }
            }
            true
        });
        self.faces = faces;

        for (i, s) in cl.side[..n].iter().enumerate() {
            if *s > 0 {
                self.verts[i] = V3::repeat(f64::NAN);
                cl.dead += 1;
            }
        }
        if let Some(ring) = chain_cap(&cl.cap).or_else(|| self.sorted_cap(&cl.side, &plane.normal)) {
            self.faces.push(PolyFace {
                plane: *plane,
                verts: ring,
            });
        }
        if self.faces.len() < 4 {
            self.faces.clear();
            self.verts.clear();
            cl.dead = 0;
        } else if 2 * cl.dead > self.verts.len() {
            self.compact();
            cl.dead = 0;
        }
    }

    /// Fallback cap for degenerate cuts: all on-plane vertices of kept faces,
    /// ordered by angle.
    fn sorted_cap(&self, side: &[i8], normal: &V3) -> Option<Vec<usize>> {
        let mut idx: Vec<usize> = self
            .faces
            .iter()
            .flat_map(|f| f.verts.iter().copied())
            .filter(|&i| side[i] == 0)
            .collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() < 3 {
            return None;
        }
        let pts = &self.verts;
        let c = idx.iter().map(|&i| pts[i]).sum::<V3>() / idx.len() as f64;
        let helper = if normal.x.abs() < 0.9 {
            V3::new(1.0, 0.0, 0.0)
        } else {
            V3::new(0.0, 1.0, 0.0)
        };
        let u = normal.cross(&helper).normalize();
        let v = normal.cross(&u);
        let angle = |i: usize| {
            let d = pts[i] - c;
            d.dot(&v).atan2(d.dot(&u))
        };
        idx.sort_by(|&a, &b| angle(a).total_cmp(&angle(b)));
        Some(idx)
    }

    /// Intersection with another polytope (clip by each of its half-spaces).
    pub fn intersect(&self, other: &ConvexPolytope) -> Self {
        if self.is_empty() || other.is_empty() {
            return Self::empty();
        }
        // Disjoint boxes need no clipping.
        let (Some((alo, ahi)), Some((blo, bhi))) = (self.bbox(), other.bbox()) else {
            return Self::empty();
        };
        if (0..3).any(|i| ahi[i] < blo[i] || bhi[i] < alo[i]) {
            return Self::empty();
        }
        self.clip_all_scaled(other.halfspaces(), other.scale())
    }

    /// Keeps the part inside every plane.
    pub fn clip_all<'a>(&self, planes: impl IntoIterator<Item = &'a Plane>) -> Self {
        self.clip_all_scaled(planes, 1.0)
    }

    fn clip_all_scaled<'a>(&self, planes: impl IntoIterator<Item = &'a Plane>, scale: f64) -> Self {
        if self.is_empty() {
            return Self::empty();
        }
        let mut poly = self.clone();
        let eps = 1e-11 * self.scale().max(scale);
        let mut clipper = Clipper::default();
        for p in planes {
            poly.clip_with(&mut clipper, p, eps);
            if poly.is_empty() {
                break;
            }
        }
        poly.finish()
    }

    pub fn bbox(&self) -> Option<(V3, V3)> {
        let mut it = self.verts.iter().filter(|v| !v.x.is_nan());
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Erosion by the cube `[-h, h]^3` (the set of points whose cube fits inside).
    pub fn eroded_by_cube(&self, h: f64) -> Self {
        let Some((lo, hi)) = self.bbox() else {
            return Self::empty();
        };
        let d = V3::repeat(h);
        let shrunk: Vec<Plane> = self.faces.iter().map(|f| f.plane.shrink_by_cube(h)).collect();
        Self::from_halfspaces(lo + d, hi - d, shrunk.iter())
    }

    /// Volume of the Minkowski sum with the unit voxel `[-1/2, 1/2]^3`.
    ///
    /// `V + sum_f A_f h_C(n_f) + (w_x + w_y + w_z) + 1` with `h_C(n) = |n|_1 / 2`.
    pub fn dilated_cube_volume(&self) -> f64 {
        let Some((lo, hi)) = self.bbox() else {
            return 0.0;
        };
        let surface: f64 = self
            .faces
            .iter()
            .map(|f| {
                let n = f.plane.normal;
                f.area(&self.verts) * 0.5 * (n.x.abs() + n.y.abs() + n.z.abs())
            })
            .sum();
        let w = hi - lo;
        self.volume + surface + (w.x + w.y + w.z) + 1.0
    }
}

/// Joins directed cap edges into one closed ring, if they form exactly one.
fn chain_cap(edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    if edges.len() < 3 {
        return None;
    }
    let mut ring = Vec::with_capacity(edges.len());
    let start = edges[0].0;
    let mut cur = start;
    for _ in 0..edges.len() {
        ring.push(cur);
        let mut next = edges.iter().filter(|e| e.0 == cur);
        let e = next.next()?;
        if next.next().is_some() {
            return None;
        }
        cur = e.1;
    }
    (cur == start).then_some(ring)
}
