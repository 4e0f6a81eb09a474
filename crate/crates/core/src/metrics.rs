//! PSNR, SSIM and per-frame fidelity series. Intensities have unit peak.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{config, Result};
use crate::tensor::Tensor;

fn same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return config(format!("cannot compare {:?} with {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

pub fn mse(reference: &Tensor, test: &Tensor) -> Result<f64> {
    same_dims(reference, test)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum();
    Ok(sum / reference.len() as f64)
}

/// `10·log10(1 / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &Tensor, test: &Tensor) -> Result<f64> {
    let m = mse(reference, test)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM over pixels and channels: 11×11 Gaussian window
/// (σ = 1.5) without padding, shrunk to the frame when the frame is
/// smaller.
pub fn ssim(reference: &Tensor, test: &Tensor) -> Result<f64> {
    same_dims(reference, test)?;
    let (c, h, w) = reference.dims();
    let g = gaussian_window(WINDOW.min(h).min(w));
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let a: Vec<f64> = reference.channel(ch).iter().map(|&v| f64::from(v)).collect();
        let b: Vec<f64> = test.channel(ch).iter().map(|&v| f64::from(v)).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter(&a, h, w, &g);
        let mu_b = filter(&b, h, w, &g);
        let aa = filter(&prod(&a, &a), h, w, &g);
        let bb = filter(&prod(&b, &b), h, w, &g);
        let ab = filter(&prod(&a, &b), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-frame fidelity of one or two candidate sequences against a
/// reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelityReport {
    pub psnr_a: Vec<f64>,
    pub psnr_b: Option<Vec<f64>>,
    /// `psnr_a - psnr_b` per frame.
    pub delta: Option<Vec<f64>>,
    /// Largest absolute difference between `a` and `b` per frame.
    pub maxabs: Option<Vec<f32>>,
    pub mean_psnr_a: f64,
    pub mean_ssim_a: f64,
    pub mean_psnr_b: Option<f64>,
    pub mean_ssim_b: Option<f64>,
}

/// Means of a [`FidelityReport`]; infinite PSNR means become `None` so the
/// summary stays valid JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidelitySummary {
    pub frames: usize,
    pub mean_psnr_a: Option<f64>,
    pub mean_ssim_a: f64,
    pub mean_psnr_b: Option<f64>,
    pub mean_ssim_b: Option<f64>,
    pub max_abs: Option<f32>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn csv_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

impl FidelityReport {
    pub fn frames(&self) -> usize {
        self.psnr_a.len()
    }

    /// CSV with header `frame,psnr_a,psnr_b,delta,maxabs`; absent columns
    /// are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,psnr_a,psnr_b,delta,maxabs\n");
        for i in 0..self.frames() {
            let opt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| csv_num(v[i])).unwrap_or_default();
            let maxabs = self.maxabs.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{i},{},{},{},{maxabs}",
                csv_num(self.psnr_a[i]),
                opt(&self.psnr_b),
                opt(&self.delta)
            );
        }
        s
    }

    pub fn summary(&self) -> FidelitySummary {
        FidelitySummary {
            frames: self.frames(),
            mean_psnr_a: finite(self.mean_psnr_a),
            mean_ssim_a: self.mean_ssim_a,
            mean_psnr_b: self.mean_psnr_b.and_then(finite),
            mean_ssim_b: self.mean_ssim_b,
            max_abs: self
                .maxabs
                .as_ref()
                .map(|v| v.iter().copied().fold(0.0, f32::max)),
        }
    }
}

pub fn per_frame_report(
    reference: &[Tensor],
    a: &[Tensor],
    b: Option<&[Tensor]>,
) -> Result<FidelityReport> {
    if reference.is_empty() {
        return config("need at least one frame");
    }
    if a.len() != reference.len() || b.is_some_and(|b| b.len() != reference.len()) {
        return config("sequences must have the same number of frames");
    }
    let series = |xs: &[Tensor]| -> Result<(Vec<f64>, Vec<f64>)> {
        let p = reference.iter().zip(xs).map(|(r, x)| psnr(r, x)).collect::<Result<_>>()?;
        let s = reference.iter().zip(xs).map(|(r, x)| ssim(r, x)).collect::<Result<_>>()?;
        Ok((p, s))
    };
    let (psnr_a, ssim_a) = series(a)?;
    let mut report = FidelityReport {
        mean_psnr_a: mean(&psnr_a),
        mean_ssim_a: mean(&ssim_a),
        psnr_a,
        psnr_b: None,
        delta: None,
        maxabs: None,
        mean_psnr_b: None,
        mean_ssim_b: None,
    };
    if let Some(b) = b {
        let (psnr_b, ssim_b) = series(b)?;
        let delta = report
            .psnr_a
            .iter()
            .zip(&psnr_b)
            .map(|(x, y)| if x == y { 0.0 } else { x - y })
            .collect();
        let maxabs = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                same_dims(x, y)?;
                Ok(x.max_abs_diff(y))
            })
            .collect::<Result<_>>()?;
        report.mean_psnr_b = Some(mean(&psnr_b));
        report.mean_ssim_b = Some(mean(&ssim_b));
        report.psnr_b = Some(psnr_b);
        report.delta = Some(delta);
        report.maxabs = Some(maxabs);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(3, 16, 16, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = seeded(1);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zero = Tensor::zeros(1, 4, 4);
        let off = Tensor::filled(1, 4, 4, 0.1);
        assert!((psnr(&zero, &off).unwrap() - 20.0).abs() < 1e-6);
        let b = seeded(2);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Tensor::zeros(3, 8, 8)).is_err());
    }

    /// Direct evaluation of the SSIM formula at one window position, used
    /// to check the separable implementation on an 11×11 frame.
    fn ssim_direct(a: &Tensor, b: &Tensor) -> f64 {
        let g = gaussian_window(11);
        let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..11 {
            for x in 0..11 {
                let wgt = g[y] * g[x];
                let (p, q) = (f64::from(a.get(0, y, x)), f64::from(b.get(0, y, x)));
                ma += wgt * p;
                mb += wgt * q;
                aa += wgt * p * p;
                bb += wgt * q * q;
                ab += wgt * p * q;
            }
        }
        let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
        ((2.0 * ma * mb + K1 * K1) * (2.0 * cov + K2 * K2))
            / ((ma * ma + mb * mb + K1 * K1) * (va + vb + K2 * K2))
    }

    #[test]
    fn ssim_values() {
        let a = seeded(3);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bin = Tensor::from_fn(1, 16, 16, |_, _, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
        let inv = bin.map(|v| 1.0 - v).unwrap();
        assert!(ssim(&bin, &inv).unwrap() < 0.0);

        let flat = Tensor::filled(1, 16, 16, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let jitter = Tensor::from_fn(1, 16, 16, |_, _, _| 0.5 + rng.gen_range(-1e-3..1e-3)).unwrap();
        let s = ssim(&flat, &jitter).unwrap();
        assert!(s > 0.99 && s <= 1.0, "{s}");

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = Tensor::from_fn(1, 11, 11, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        let q = Tensor::from_fn(1, 11, 11, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        assert!((ssim(&p, &q).unwrap() - ssim_direct(&p, &q)).abs() < 1e-12);

        // Frames smaller than the window still evaluate.
        let small = Tensor::filled(3, 4, 4, 0.2);
        assert!((ssim(&small, &small).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_series() {
        let r: Vec<Tensor> = (0..4).map(seeded).collect();
        let a: Vec<Tensor> = (10..14).map(seeded).collect();
        let rep = per_frame_report(&r, &a, Some(&a)).unwrap();
        assert_eq!(rep.frames(), 4);
        assert!(rep.delta.as_ref().unwrap().iter().all(|&d| d == 0.0));
        assert!(rep.maxabs.as_ref().unwrap().iter().all(|&d| d == 0.0));
        let csv = rep.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "frame,psnr_a,psnr_b,delta,maxabs");
        assert_eq!(csv.lines().count(), 5);

        let same = per_frame_report(&r, &r, None).unwrap();
        assert!(same.to_csv().lines().nth(1).unwrap().starts_with("0,inf,,,"));
        let json: serde_json::Value = serde_json::to_value(same.summary()).unwrap();
        assert!(json["mean_psnr_a"].is_null());
        assert_eq!(json["frames"], 4);

        assert!(per_frame_report(&r, &a[..3], None).is_err());
    }
}
