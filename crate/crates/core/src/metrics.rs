//! PSNR, SSIM and z-direction total variation.

use std::io::Write;

use crate::error::{Error, Result};
use crate::volume::Volume3D;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Fixed z: `width x height` images.
    Axial,
    /// Fixed x: `height x depth` images.
    Sagittal,
    /// Fixed y: `width x depth` images.
    Coronal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Sagittal, Plane::Coronal];

    pub fn name(&self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
        }
    }
}

fn same_shape(x: &Volume3D, r: &Volume3D) -> Result<()> {
    if !x.same_shape(r) {
        return Err(Error::invalid(format!(
            "volume shapes differ: {:?} vs {:?}",
            x.dims(),
            r.dims()
        )));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// `10 log10(range² / MSE)`; identical inputs give `+∞`.
pub fn psnr(x: &Volume3D, reference: &Volume3D, data_range: f64) -> Result<f64> {
    same_shape(x, reference)?;
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be positive"));
    }
    Ok(psnr_from_mse(mse(x.data(), reference.data()), data_range))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
}

/// All 2D images of the volume in `plane`, each row-major.
pub fn plane_images(v: &Volume3D, plane: Plane) -> (usize, usize, Vec<Vec<f64>>) {
    let (w, h, d) = v.dims();
    match plane {
        Plane::Axial => (w, h, v.slices().map(|s| s.to_vec()).collect()),
        Plane::Sagittal => {
            let imgs = (0..w)
                .map(|x| {
                    let mut img = Vec::with_capacity(h * d);
                    for z in 0..d {
                        for y in 0..h {
                            img.push(v.get(x, y, z));
                        }
                    }
                    img
                })
                .collect();
            (h, d, imgs)
        }
        Plane::Coronal => {
            let imgs = (0..h)
                .map(|y| {
                    let mut img = Vec::with_capacity(w * d);
                    for z in 0..d {
                        img.extend_from_slice(&v.slice(z)[y * w..(y + 1) * w]);
                    }
                    img
                })
                .collect();
            (w, d, imgs)
        }
    }
}

/// Mean of the per-image PSNRs in `plane`.
pub fn psnr_plane(x: &Volume3D, reference: &Volume3D, plane: Plane, data_range: f64) -> Result<f64> {
    same_shape(x, reference)?;
    let (_, _, xs) = plane_images(x, plane);
    let (_, _, rs) = plane_images(reference, plane);
    let total: f64 = xs
        .iter()
        .zip(&rs)
        .map(|(a, b)| psnr_from_mse(mse(a, b), data_range))
        .sum();
    Ok(total / xs.len() as f64)
}

const WIN: usize = 11;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; WIN] {
    let mut g = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(img: &[f64], w: usize, h: usize, g: &[f64; WIN]) -> Vec<f64> {
    let ow = w - WIN + 1;
    let oh = h - WIN + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WIN).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one image pair (Gaussian 11x11 window, σ = 1.5, range 1).
pub fn ssim_image(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    if w < WIN || h < WIN {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {WIN}x{WIN}, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, w, h, &g);
    let mu_b = filter_valid(b, w, h, &g);
    let e_aa = filter_valid(&prod(a, a), w, h, &g);
    let e_bb = filter_valid(&prod(b, b), w, h, &g);
    let e_ab = filter_valid(&prod(a, b), w, h, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM averaged over every image of `plane`.
pub fn ssim_plane(x: &Volume3D, reference: &Volume3D, plane: Plane) -> Result<f64> {
    same_shape(x, reference)?;
    let (w, h, xs) = plane_images(x, plane);
    let (_, _, rs) = plane_images(reference, plane);
    let mut total = 0.0;
    for (a, b) in xs.iter().zip(&rs) {
        total += ssim_image(a, b, w, h)?;
    }
    Ok(total / xs.len() as f64)
}

/// Mean absolute difference between neighbouring slices, normalised by
/// the voxel count.
pub fn ztv(x: &Volume3D) -> Result<f64> {
    let (w, h, d) = x.dims();
    if d < 2 {
        return Err(Error::invalid("z-TV needs at least two slices"));
    }
    let mut total = 0.0;
    for z in 0..d - 1 {
        total += x
            .slice(z)
            .iter()
            .zip(x.slice(z + 1))
            .map(|(a, b)| (b - a).abs())
            .sum::<f64>();
    }
    Ok(total / (w * h * d) as f64)
}

/// Quality of one reconstruction against its reference.
///
/// Planes too small for the SSIM window report `NaN`; volumes with a single
/// slice report `NaN` z-TV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub psnr_axial: f64,
    pub psnr_sagittal: f64,
    pub psnr_coronal: f64,
    pub ssim_axial: f64,
    pub ssim_sagittal: f64,
    pub ssim_coronal: f64,
    pub ztv: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "psnr,psnr_axial,psnr_sagittal,psnr_coronal,ssim_axial,ssim_sagittal,ssim_coronal,ztv";

    pub fn compute(x: &Volume3D, reference: &Volume3D) -> Result<Self> {
        same_shape(x, reference)?;
        let ssim = |p| match ssim_plane(x, reference, p) {
            Ok(v) => Ok(v),
            Err(Error::InvalidArgument(_)) => Ok(f64::NAN),
            Err(e) => Err(e),
        };
        Ok(Self {
            psnr: psnr(x, reference, 1.0)?,
            psnr_axial: psnr_plane(x, reference, Plane::Axial, 1.0)?,
            psnr_sagittal: psnr_plane(x, reference, Plane::Sagittal, 1.0)?,
            psnr_coronal: psnr_plane(x, reference, Plane::Coronal, 1.0)?,
            ssim_axial: ssim(Plane::Axial)?,
            ssim_sagittal: ssim(Plane::Sagittal)?,
            ssim_coronal: ssim(Plane::Coronal)?,
            ztv: ztv(x).unwrap_or(f64::NAN),
        })
    }

    pub fn csv_row(&self) -> String {
        [
            self.psnr,
            self.psnr_axial,
            self.psnr_sagittal,
            self.psnr_coronal,
            self.ssim_axial,
            self.ssim_sagittal,
            self.ssim_coronal,
            self.ztv,
        ]
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize, d: usize) -> Volume3D {
        let mut v = Volume3D::zeros(w, h, d).unwrap();
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let val = 0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4 + z as f64).cos());
                    v.set(x, y, z, val);
                }
            }
        }
        v
    }

    #[test]
    fn psnr_arithmetic() {
        let a = Volume3D::zeros(10, 10, 1).unwrap();
        let b = Volume3D::filled(10, 10, 1, 0.1).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = Volume3D::filled(10, 10, 1, 0.001f64.sqrt()).unwrap();
        assert!((psnr(&a, &c, 1.0).unwrap() - 30.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Volume3D::zeros(10, 10, 2).unwrap(), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_is_one() {
        let v = pattern(12, 13, 11);
        for p in Plane::ALL {
            assert_eq!(ssim_plane(&v, &v, p).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_constant_shift_matches_luminance_term() {
        let r = Volume3D::filled(11, 11, 1, 0.25).unwrap();
        let x = r.map(|v| v + 0.5);
        let c1 = K1 * K1;
        let expect = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
        let got = ssim_plane(&x, &r, Plane::Axial).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn ssim_negated_is_negative() {
        // checkerboard: every Gaussian window has (almost exactly) zero mean
        let mut r = Volume3D::zeros(16, 16, 1).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                r.set(x, y, 0, if (x + y) % 2 == 0 { 0.3 } else { -0.3 });
            }
        }
        let x = r.map(|v| -v);
        assert!(ssim_plane(&x, &r, Plane::Axial).unwrap() < 0.0);
    }

    #[test]
    fn ssim_small_plane_rejected() {
        let v = pattern(12, 12, 5);
        assert!(ssim_plane(&v, &v, Plane::Sagittal).is_err());
        let rep = MetricReport::compute(&v, &v).unwrap();
        assert!(rep.ssim_sagittal.is_nan());
        assert_eq!(rep.ssim_axial, 1.0);
    }

    #[test]
    fn ztv_cases() {
        assert_eq!(ztv(&Volume3D::filled(3, 3, 4, 0.7).unwrap()).unwrap(), 0.0);
        let d = 6;
        let mut v = Volume3D::zeros(2, 2, d).unwrap();
        for z in (1..d).step_by(2) {
            v.slice_mut(z).fill(1.0);
        }
        assert!((ztv(&v).unwrap() - (d as f64 - 1.0) / d as f64).abs() < 1e-15);
        assert!(ztv(&Volume3D::zeros(2, 2, 1).unwrap()).is_err());
    }

    #[test]
    fn plane_images_layout() {
        let v = pattern(3, 4, 5);
        let (w, h, imgs) = plane_images(&v, Plane::Sagittal);
        assert_eq!((w, h, imgs.len()), (4, 5, 3));
        assert_eq!(imgs[2][4 * 3 + 1], v.get(2, 1, 3));
        let (w, h, imgs) = plane_images(&v, Plane::Coronal);
        assert_eq!((w, h, imgs.len()), (3, 5, 4));
        assert_eq!(imgs[1][3 * 2 + 2], v.get(2, 1, 2));
    }

    #[test]
    fn csv_has_eight_columns() {
        let v = pattern(11, 11, 11);
        let rep = MetricReport::compute(&v, &v.map(|x| x * 0.9)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MetricReport::CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
