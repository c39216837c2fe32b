//! Incremental 3D convex hull producing outward-oriented triangles.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};

type V3 = Vector3<f64>;

#[derive(Debug, Clone)]
struct Face {
    v: [usize; 3],
    normal: V3,
    offset: f64,
    alive: bool,
}

impl Face {
    fn new(points: &[V3], v: [usize; 3]) -> Self {
        let [a, b, c] = v.map(|i| points[i]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        let normal = if len > 0.0 { n / len } else { n };
        Face {
            v,
            offset: normal.dot(&a),
            normal,
            alive: true,
        }
    }

    #[inline]
    fn dist(&self, p: &V3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Convex hull triangles of `points`; every triangle `[a, b, c]` satisfies
/// `(b - a) x (c - a)` pointing away from the hull interior.
///
/// Points that lie inside the hull (within a relative tolerance) are left out.
/// Fails when all points are (numerically) coplanar.
pub fn convex_hull(points: &[V3]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!(
            "convex hull needs at least 4 points, got {}",
            points.len()
        )));
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let eps = 1e-12 * scale;

    let i0 = 0;
    let i1 = argmax(points, |p| (p - points[i0]).norm_squared());
    let axis = points[i1] - points[i0];
    if axis.norm() <= eps {
        return Err(Error::Degenerate("all hull points coincide".into()));
    }
    let i2 = argmax(points, |p| (p - points[i0]).cross(&axis).norm_squared());
    let plane_n = axis.cross(&(points[i2] - points[i0]));
    if plane_n.norm() <= eps * axis.norm() {
        return Err(Error::Degenerate("all hull points are collinear".into()));
    }
    let plane_n = plane_n.normalize();
    let i3 = argmax(points, |p| plane_n.dot(&(p - points[i0])).abs());
    let h = plane_n.dot(&(points[i3] - points[i0]));
    if h.abs() <= eps {
        return Err(Error::Degenerate("all hull points are coplanar".into()));
    }

    let mut faces: Vec<Face> = Vec::new();
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    let add_face = |faces: &mut Vec<Face>, edges: &mut HashMap<(usize, usize), usize>, v: [usize; 3]| {
        let id = faces.len();
        faces.push(Face::new(points, v));
        for e in 0..3 {
            edges.insert((v[e], v[(e + 1) % 3]), id);
        }
    };
    // Base triangle oriented so that its normal points away from i3.
    let (a, b, c) = if h > 0.0 { (i0, i2, i1) } else { (i0, i1, i2) };
    add_face(&mut faces, &mut edges, [a, b, c]);
    add_face(&mut faces, &mut edges, [a, c, i3]);
    add_face(&mut faces, &mut edges, [c, b, i3]);
    add_face(&mut faces, &mut edges, [b, a, i3]);

    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| i != i0 && i != i1 && i != i2 && i != i3)
        .collect();
    order.sort_unstable();

    let mut visible_mark: Vec<bool> = Vec::new();
    for &pi in &order {
        let p = points[pi];
        let (best, best_d) = faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive)
            .map(|(i, f)| (i, f.dist(&p)))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == usize::MAX || best_d <= eps {
            continue;
        }
        // Grow the visible region from the most-visible face so it stays connected.
        visible_mark.clear();
        visible_mark.resize(faces.len(), false);
        let mut stack = vec![best];
        let mut visible = Vec::new();
        visible_mark[best] = true;
        while let Some(fi) = stack.pop() {
            visible.push(fi);
            let v = faces[fi].v;
            for e in 0..3 {
                let twin = edges[&(v[(e + 1) % 3], v[e])];
                if !visible_mark[twin] && faces[twin].dist(&p) > eps {
                    visible_mark[twin] = true;
                    stack.push(twin);
                }
            }
        }
        let mut horizon = Vec::new();
        for &fi in &visible {
            let v = faces[fi].v;
            for e in 0..3 {
                let (s, t) = (v[e], v[(e + 1) % 3]);
                let twin = edges[&(t, s)];
                if !visible_mark[twin] {
                    horizon.push((s, t));
                }
            }
        }
        for &fi in &visible {
            faces[fi].alive = false;
            let v = faces[fi].v;
            for e in 0..3 {
                edges.remove(&(v[e], v[(e + 1) % 3]));
            }
        }
        for (s, t) in horizon {
            add_face(&mut faces, &mut edges, [s, t, pi]);
        }
    }

    let out: Vec<[usize; 3]> = faces.iter().filter(|f| f.alive).map(|f| f.v).collect();
    for f in &out {
        for e in 0..3 {
            if !edges.contains_key(&(f[(e + 1) % 3], f[e])) {
                return Err(Error::Degenerate("hull is not closed".into()));
            }
        }
    }
    Ok(out)
}

fn argmax(points: &[V3], key: impl Fn(&V3) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let v = key(p);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}
