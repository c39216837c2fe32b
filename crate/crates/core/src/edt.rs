//! Exact squared Euclidean distance transform (separable lower envelope of
//! parabolas, one pass per axis).

/// Stand-in for "no feature on this line yet"; finite so the envelope
/// arithmetic never produces NaN.
const FAR: f64 = 1e20;

fn transform_line(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never underflows.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = (d * d + f[v[k]]).min(FAR);
    }
}

/// Squared distance from every voxel to the nearest `feature` voxel of a
/// `(z, y, x)` grid. Returns [`f64::INFINITY`] everywhere when there is no
/// feature at all.
pub fn squared_edt(feature: &[bool], shape: [usize; 3]) -> Vec<f64> {
    let [nz, ny, nx] = shape;
    assert_eq!(feature.len(), nz * ny * nx);
    let mut g: Vec<f64> = feature.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    if !feature.iter().any(|&b| b) {
        return vec![f64::INFINITY; g.len()];
    }
    let longest = nz.max(ny).max(nx);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut zb = vec![0.0; longest + 1];

    let mut pass = |len: usize, stride: usize, starts: &mut dyn Iterator<Item = usize>, g: &mut [f64]| {
        for start in starts {
            for i in 0..len {
                line[i] = g[start + i * stride];
            }
            transform_line(&line[..len], &mut out[..len], &mut v, &mut zb);
            for i in 0..len {
                g[start + i * stride] = out[i];
            }
        }
    };
    pass(nx, 1, &mut (0..nz * ny).map(|r| r * nx), &mut g);
    pass(ny, nx, &mut (0..nz).flat_map(|z| (0..nx).map(move |x| z * ny * nx + x)), &mut g);
    pass(nz, ny * nx, &mut (0..ny * nx), &mut g);
    g
}
