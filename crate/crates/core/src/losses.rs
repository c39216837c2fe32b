//! Reference training losses: binary cross-entropy on the probability map
//! and a probability-weighted mean absolute error on the distances.
//!
//! All reductions are plain means over voxels, summed pairwise in voxel
//! order so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volumes::{DistVolume, ScalarVolume};

/// Clamp applied to predicted probabilities before taking logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_d: 0.1,
            lambda_reg: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_d: f64, lambda_reg: f64) -> Result<Self> {
        if !(lambda_d >= 0.0 && lambda_reg >= 0.0 && lambda_d.is_finite() && lambda_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative, got lambda_d={lambda_d} lambda_reg={lambda_reg}"
            )));
        }
        Ok(Self { lambda_d, lambda_reg })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub obj: f64,
    pub dist: f64,
    pub total: f64,
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn mean(terms: Vec<f64>) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    pairwise_sum(&terms) / terms.len() as f64
}

fn check_scalar(name: &str, v: &ScalarVolume) -> Result<()> {
    if v.channels() != 0 {
        return Err(Error::ShapeMismatch(format!("{name} must be a scalar field, has {} channels", v.channels())));
    }
    Ok(())
}

fn check_same_shape(a: [usize; 3], b: [usize; 3], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

#[inline]
fn bce(p: f64, p_hat: f64) -> f64 {
    let q = p_hat.clamp(EPS, 1.0 - EPS);
    -p * q.ln() - (1.0 - p) * (1.0 - q).ln()
}

/// Mean binary cross-entropy between target `p` and prediction `p_hat`.
pub fn loss_obj(p: &ScalarVolume, p_hat: &ScalarVolume) -> Result<f64> {
    check_scalar("p", p)?;
    check_scalar("p_hat", p_hat)?;
    check_same_shape(p.shape(), p_hat.shape(), "p vs p_hat")?;
    let terms = p
        .data
        .par_iter()
        .zip(&p_hat.data)
        .map(|(&a, &b)| bce(a as f64, b as f64))
        .collect();
    Ok(mean(terms))
}

/// Probability-weighted mean absolute distance error on foreground plus a
/// small penalty on predicted distances over background.
pub fn loss_dist(p: &ScalarVolume, d: &DistVolume, d_hat: &DistVolume, w: LossWeights) -> Result<f64> {
    check_scalar("p", p)?;
    check_same_shape(p.shape(), d.shape(), "p vs d")?;
    check_same_shape(p.shape(), d_hat.shape(), "p vs d_hat")?;
    let n = d.channels();
    if n == 0 || d_hat.channels() != n {
        return Err(Error::ShapeMismatch(format!(
            "distance channels differ or are empty: {} vs {}",
            n,
            d_hat.channels()
        )));
    }
    let terms = p
        .data
        .par_iter()
        .zip(d.data.par_chunks(n))
        .zip(d_hat.data.par_chunks(n))
        .map(|((&pv, dv), hv)| {
            let pv = pv as f64;
            let fg = if pv > 0.0 {
                let mae = dv.iter().zip(hv).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / n as f64;
                pv * mae
            } else {
                0.0
            };
            let bg = if pv == 0.0 {
                w.lambda_reg * hv.iter().map(|&b| (b as f64).abs()).sum::<f64>() / n as f64
            } else {
                0.0
            };
            fg + bg
        })
        .collect();
    Ok(mean(terms))
}

pub fn loss_total(
    p: &ScalarVolume,
    p_hat: &ScalarVolume,
    d: &DistVolume,
    d_hat: &DistVolume,
    w: LossWeights,
) -> Result<LossBreakdown> {
    let obj = loss_obj(p, p_hat)?;
    let dist = loss_dist(p, d, d_hat, w)?;
    Ok(LossBreakdown {
        obj,
        dist,
        total: obj + w.lambda_d * dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::{Dtype, VolumeMeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(shape: [usize; 3], channels: usize, data: Vec<f32>) -> ScalarVolume {
        ScalarVolume::from_data(VolumeMeta::new(shape, channels, Dtype::F32), data).unwrap()
    }

    struct Case {
        p: ScalarVolume,
        p_hat: ScalarVolume,
        d: DistVolume,
        d_hat: DistVolume,
    }

    fn random_case(rng: &mut ChaCha8Rng) -> Case {
        let shape = [rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..7)];
        let m: usize = shape.iter().product();
        let n = rng.random_range(1..9);
        let p: Vec<f32> = (0..m)
            .map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random_range(0.0..=1.0) })
            .collect();
        let p_hat = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
        let d = (0..m * n).map(|_| rng.random_range(0.0..20.0)).collect();
        let d_hat = (0..m * n).map(|_| rng.random_range(-2.0..20.0)).collect();
        Case {
            p: field(shape, 0, p),
            p_hat: field(shape, 0, p_hat),
            d: field(shape, n, d),
            d_hat: field(shape, n, d_hat),
        }
    }

    fn naive_obj(p: &ScalarVolume, q: &ScalarVolume) -> f64 {
        let [nz, ny, nx] = p.shape();
        let mut s = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let a = p.get(z, y, x) as f64;
                    let b = (q.get(z, y, x) as f64).max(EPS).min(1.0 - EPS);
                    s += -a * b.ln() - (1.0 - a) * (1.0 - b).ln();
                }
            }
        }
        s / (nz * ny * nx) as f64
    }

    fn naive_dist(c: &Case, w: LossWeights) -> f64 {
        let [nz, ny, nx] = c.p.shape();
        let n = c.d.channels();
        let mut s = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let pv = c.p.get(z, y, x) as f64;
                    let (dv, hv) = (c.d.voxel(z, y, x), c.d_hat.voxel(z, y, x));
                    let mut fg = 0.0;
                    let mut bg = 0.0;
                    for k in 0..n {
                        fg += (dv[k] as f64 - hv[k] as f64).abs();
                        bg += (hv[k] as f64).abs();
                    }
                    let ind_fg = if pv > 0.0 { 1.0 } else { 0.0 };
                    let ind_bg = if pv == 0.0 { 1.0 } else { 0.0 };
                    s += pv * ind_fg * fg / n as f64 + w.lambda_reg * ind_bg * bg / n as f64;
                }
            }
        }
        s / (nz * ny * nx) as f64
    }

    #[test]
    fn matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = LossWeights::default();
        for _ in 0..50 {
            let c = random_case(&mut rng);
            let obj = loss_obj(&c.p, &c.p_hat).unwrap();
            let dist = loss_dist(&c.p, &c.d, &c.d_hat, w).unwrap();
            assert!((obj - naive_obj(&c.p, &c.p_hat)).abs() < 1e-12);
            assert!((dist - naive_dist(&c, w)).abs() < 1e-12);
            let t = loss_total(&c.p, &c.p_hat, &c.d, &c.d_hat, w).unwrap();
            assert!((t.total - (obj + 0.1 * dist)).abs() < 1e-12);
            assert!(obj >= 0.0 && dist >= 0.0 && t.total >= 0.0);
            let zero = loss_total(&c.p, &c.p_hat, &c.d, &c.d_hat, LossWeights::new(0.0, 1e-4).unwrap()).unwrap();
            assert_eq!(zero.total, obj);
        }
    }

    #[test]
    fn hand_cases() {
        let z = field([2, 2, 2], 0, vec![0.0; 8]);
        assert!(loss_obj(&z, &z).unwrap() < 1e-6);
        let one = field([1, 1, 1], 0, vec![1.0]);
        let half = field([1, 1, 1], 0, vec![0.5]);
        assert!((loss_obj(&one, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let d = field([1, 1, 1], 2, vec![3.0, 5.0]);
        let dh = field([1, 1, 1], 2, vec![4.0, 4.0]);
        assert_eq!(loss_dist(&one, &d, &dh, LossWeights::default()).unwrap(), 1.0);

        let bg_d = field([2, 3, 4], 3, vec![0.0; 72]);
        let bg_dh = field([2, 3, 4], 3, vec![1.0; 72]);
        let bg = field([2, 3, 4], 0, vec![0.0; 24]);
        assert!((loss_dist(&bg, &bg_d, &bg_dh, LossWeights::default()).unwrap() - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction() {
        let p = field([1, 2, 2], 0, vec![1.0, 0.0, 1.0, 0.0]);
        let d = field([1, 2, 2], 2, vec![3.0, 2.0, 0.0, 0.0, 1.5, 4.0, 0.0, 0.0]);
        let t = loss_total(&p, &p, &d, &d, LossWeights::default()).unwrap();
        assert!(t.total < 1e-6, "{t:?}");
    }

    #[test]
    fn subgradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = LossWeights::default();
        for _ in 0..20 {
            let c = random_case(&mut rng);
            let n = c.d.channels();
            let m = c.p.data.len();
            let i = rng.random_range(0..m * n);
            let (pv, dv, hv) = (c.p.data[i / n] as f64, c.d.data[i] as f64, c.d_hat.data[i] as f64);
            let analytic = if pv > 0.0 {
                pv * (hv - dv).signum() / n as f64
            } else {
                w.lambda_reg * hv.signum() / n as f64
            } / m as f64;
            // A power of two keeps `d_hat ± h` exact in f32.
            let h = 1.0 / 64.0f32;
            let at = |delta: f32| {
                let mut dh = c.d_hat.clone();
                dh.data[i] += delta;
                loss_dist(&c.p, &c.d, &dh, w).unwrap()
            };
            let kink = if pv > 0.0 { (hv - dv).abs() } else { hv.abs() };
            if kink < 0.05 {
                continue;
            }
            let numeric = (at(h) - at(-h)) / (2.0 * h as f64);
            assert!((numeric - analytic).abs() < 1e-6, "{numeric} vs {analytic}");
        }
    }

    #[test]
    fn permutation_invariance_and_errors() {
        let p = field([1, 1, 4], 0, vec![0.2, 0.0, 1.0, 0.7]);
        let q = field([1, 1, 4], 0, vec![0.3, 0.1, 0.9, 0.5]);
        let pp = field([1, 4, 1], 0, vec![0.7, 1.0, 0.2, 0.0]);
        let qq = field([1, 4, 1], 0, vec![0.5, 0.9, 0.3, 0.1]);
        assert!((loss_obj(&p, &q).unwrap() - loss_obj(&pp, &qq).unwrap()).abs() < 1e-15);
        assert!(loss_obj(&p, &qq).is_err());
        let d = field([1, 1, 4], 2, vec![0.0; 8]);
        let d3 = field([1, 1, 4], 3, vec![0.0; 12]);
        assert!(loss_dist(&p, &d, &d3, LossWeights::default()).is_err());
        assert!(LossWeights::new(-1.0, 0.0).is_err());
    }
}
