//! Slice-wise parallel-beam CT: Joseph forward projector, its exact adjoint,
//! and a ramp-filtered backprojection baseline.
//!
//! Pixel `(i, j)` of a `W x H` slice sits at `(i - (W-1)/2, j - (H-1)/2)` in
//! voxel units. View angle `θ` measures detector coordinate `s = x cos θ + y sin θ`
//! and detector bin `b` is centered at `(b - (n_det-1)/2) * det_spacing`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::volume::{self, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanMode {
    /// Views spread uniformly over `[0, π)`.
    Sparse,
    /// Views confined to `[0, π/2)`.
    Limited,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewGeometry {
    angles: Vec<f64>,
    n_det: usize,
    det_spacing: f64,
}

impl ViewGeometry {
    pub fn new(angles: Vec<f64>, n_det: usize, det_spacing: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::invalid("geometry needs at least one view"));
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return Err(Error::invalid("view angles must lie in [0, π)"));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("view angles must be strictly increasing"));
        }
        if n_det == 0 {
            return Err(Error::invalid("detector needs at least one bin"));
        }
        if !(det_spacing.is_finite() && det_spacing > 0.0) {
            return Err(Error::invalid("detector spacing must be positive"));
        }
        Ok(Self {
            angles,
            n_det,
            det_spacing,
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn det_spacing(&self) -> f64 {
        self.det_spacing
    }

    /// Detector coordinate of bin `b`.
    #[inline]
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 - (self.n_det as f64 - 1.0) / 2.0) * self.det_spacing
    }

    /// Plain-text form: `n_det=`, `det_spacing=` and one `angle=` line per view.
    pub fn to_text(&self) -> String {
        let mut s = format!("n_det={}\ndet_spacing={}\n", self.n_det, self.det_spacing);
        for a in &self.angles {
            s.push_str(&format!("angle={a}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n_det = None;
        let mut spacing = 1.0;
        let mut angles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format("geometry", format!("line {}: expected key=value", lineno + 1))
            })?;
            let bad = || Error::format("geometry", format!("line {}: bad value {value:?}", lineno + 1));
            match key.trim() {
                "n_det" => n_det = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
                "det_spacing" => spacing = value.trim().parse::<f64>().map_err(|_| bad())?,
                "angle" => angles.push(value.trim().parse::<f64>().map_err(|_| bad())?),
                other => {
                    return Err(Error::format(
                        "geometry",
                        format!("line {}: unknown key {other:?}", lineno + 1),
                    ))
                }
            }
        }
        let n_det = n_det.ok_or_else(|| Error::format("geometry", "missing n_det"))?;
        Self::new(angles, n_det, spacing)
    }
}

/// Detector bin count that covers the diagonal of a `width x height` slice
/// at unit spacing, with the parity of `width` so bins align with pixel
/// centers at angle zero.
pub fn default_n_det(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt().ceil() as usize;
    if (diag - width) % 2 == 1 {
        diag + 1
    } else {
        diag
    }
}

/// Uniformly spaced views for a sparse-view or limited-angle scan.
pub fn make_geometry(mode: ScanMode, n_views: usize, n_det: usize) -> Result<ViewGeometry> {
    if n_views == 0 {
        return Err(Error::invalid("n_views must be at least 1"));
    }
    let arc = match mode {
        ScanMode::Sparse => PI,
        ScanMode::Limited => PI / 2.0,
    };
    let angles = (0..n_views)
        .map(|i| arc * i as f64 / n_views as f64)
        .collect();
    ViewGeometry::new(angles, n_det, 1.0)
}

/// Line-integral measurements, one `n_views x n_det` block per axial slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    depth: usize,
    n_views: usize,
    n_det: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(depth: usize, n_views: usize, n_det: usize) -> Result<Self> {
        Self::from_vec(depth, n_views, n_det, vec![0.0; depth * n_views * n_det])
    }

    pub fn from_vec(depth: usize, n_views: usize, n_det: usize, data: Vec<f64>) -> Result<Self> {
        if depth == 0 || n_views == 0 || n_det == 0 {
            return Err(Error::invalid("sinogram dimensions must be positive"));
        }
        if data.len() != depth * n_views * n_det {
            return Err(Error::invalid(format!(
                "sinogram buffer has {} values, expected {}",
                data.len(),
                depth * n_views * n_det
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sinogram contains non-finite values"));
        }
        Ok(Self {
            depth,
            n_views,
            n_det,
            data,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_det(&self) -> usize {
        self.n_det
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice_len(&self) -> usize {
        self.n_views * self.n_det
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        volume::dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn matches(&self, g: &ViewGeometry) -> bool {
        self.n_views == g.n_views() && self.n_det == g.n_det()
    }

    /// Repeats boundary slices in z, using the same split rule as
    /// [`crate::volume::pad_repeat`].
    pub fn pad_repeat(&self, target_depth: usize) -> Result<Sinogram> {
        let (above, _) = volume::padding_split(self.depth, target_depth)?;
        let mut data = Vec::with_capacity(target_depth * self.slice_len());
        for z in 0..target_depth {
            let src = z.saturating_sub(above).min(self.depth - 1);
            data.extend_from_slice(self.slice(src));
        }
        Sinogram::from_vec(target_depth, self.n_views, self.n_det, data)
    }

    pub fn write_bsin<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "BSIN1 {} {} {}", self.depth, self.n_views, self.n_det)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_bsin<R: Read>(mut r: R) -> Result<Sinogram> {
        let header = volume::read_header_line(&mut r, "BSIN1")?;
        let dims = volume::parse_header(&header, "BSIN1", 3)?;
        if dims.contains(&0) {
            return Err(Error::format("BSIN1", "zero dimension in header"));
        }
        let data = volume::read_f32_body(&mut r, dims[0] * dims[1] * dims[2], "BSIN1")?;
        Sinogram::from_vec(dims[0], dims[1], dims[2], data)
            .map_err(|e| Error::format("BSIN1", e.to_string()))
    }
}

/// One interpolation tap of the system matrix.
#[derive(Clone, Copy, Debug)]
struct Tap {
    pixel: u32,
    weight: f64,
}

/// Precomputed Joseph system matrix for one slice size and geometry.
///
/// The forward and adjoint passes walk the same tap list, so they are exact
/// transposes of each other.
#[derive(Clone, Debug)]
pub struct Projector {
    geometry: ViewGeometry,
    width: usize,
    height: usize,
    /// `row_start[r]..row_start[r+1]` indexes `taps` for ray `r = view * n_det + bin`.
    row_start: Vec<usize>,
    taps: Vec<Tap>,
}

impl Projector {
    pub fn new(geometry: &ViewGeometry, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("slice dimensions must be positive"));
        }
        let mut row_start = Vec::with_capacity(geometry.n_views() * geometry.n_det() + 1);
        let mut taps = Vec::new();
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        row_start.push(0);
        for &theta in geometry.angles() {
            let (sin, cos) = theta.sin_cos();
            for b in 0..geometry.n_det() {
                let s = geometry.bin_center(b);
                if cos.abs() >= sin.abs() {
                    // march along rows, interpolate in x
                    let step = 1.0 / cos.abs();
                    for j in 0..height {
                        let py = j as f64 - cy;
                        let fx = (s - py * sin) / cos + cx;
                        push_linear(&mut taps, fx, width, |i| j * width + i, step);
                    }
                } else {
                    let step = 1.0 / sin.abs();
                    for i in 0..width {
                        let px = i as f64 - cx;
                        let fy = (s - px * cos) / sin + cy;
                        push_linear(&mut taps, fy, height, |j| j * width + i, step);
                    }
                }
                row_start.push(taps.len());
            }
        }
        Ok(Self {
            geometry: geometry.clone(),
            width,
            height,
            row_start,
            taps,
        })
    }

    pub fn geometry(&self) -> &ViewGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Projects one slice into `out` (`n_views * n_det` values).
    pub fn project_slice(&self, image: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let taps = &self.taps[self.row_start[r]..self.row_start[r + 1]];
            *o = taps.iter().map(|t| t.weight * image[t.pixel as usize]).sum();
        }
    }

    /// Adjoint of [`Projector::project_slice`]; overwrites `out`.
    pub fn backproject_slice(&self, sino: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, &v) in sino.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for t in &self.taps[self.row_start[r]..self.row_start[r + 1]] {
                out[t.pixel as usize] += t.weight * v;
            }
        }
    }

    pub fn project(&self, v: &Volume3D) -> Result<Sinogram> {
        self.check_volume(v)?;
        let g = &self.geometry;
        let mut sino = Sinogram::zeros(v.depth(), g.n_views(), g.n_det())?;
        for z in 0..v.depth() {
            self.project_slice(v.slice(z), sino.slice_mut(z));
        }
        Ok(sino)
    }

    pub fn backproject(&self, s: &Sinogram) -> Result<Volume3D> {
        self.check_sinogram(s)?;
        let mut v = Volume3D::zeros(self.width, self.height, s.depth())?;
        for z in 0..s.depth() {
            self.backproject_slice(s.slice(z), v.slice_mut(z));
        }
        Ok(v)
    }

    /// `A*A` applied to a flat stack of slices.
    pub fn normal_apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.width * self.height;
        let mut tmp = vec![0.0; self.geometry.n_views() * self.geometry.n_det()];
        for (xs, os) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.project_slice(xs, &mut tmp);
            self.backproject_slice(&tmp, os);
        }
    }

    fn check_volume(&self, v: &Volume3D) -> Result<()> {
        if v.width() != self.width || v.height() != self.height {
            return Err(Error::invalid(format!(
                "projector built for {}x{} slices, got {}x{}",
                self.width,
                self.height,
                v.width(),
                v.height()
            )));
        }
        Ok(())
    }

    fn check_sinogram(&self, s: &Sinogram) -> Result<()> {
        if !s.matches(&self.geometry) {
            return Err(Error::invalid(format!(
                "sinogram has {}x{} (views x bins), geometry expects {}x{}",
                s.n_views(),
                s.n_det(),
                self.geometry.n_views(),
                self.geometry.n_det()
            )));
        }
        Ok(())
    }
}

#[inline]
fn push_linear(taps: &mut Vec<Tap>, f: f64, len: usize, pixel: impl Fn(usize) -> usize, step: f64) {
    let i0 = f.floor();
    let frac = f - i0;
    let i0 = i0 as isize;
    for (idx, w) in [(i0, 1.0 - frac), (i0 + 1, frac)] {
        if w > 0.0 && idx >= 0 && (idx as usize) < len {
            taps.push(Tap {
                pixel: pixel(idx as usize) as u32,
                weight: w * step,
            });
        }
    }
}

/// Forward projection `A v`.
pub fn project(v: &Volume3D, g: &ViewGeometry) -> Result<Sinogram> {
    Projector::new(g, v.width(), v.height())?.project(v)
}

/// Adjoint `A* s` onto a `width x height` grid.
pub fn backproject(s: &Sinogram, g: &ViewGeometry, width: usize, height: usize) -> Result<Volume3D> {
    Projector::new(g, width, height)?.backproject(s)
}

/// Frequency response of the band-limited ramp filter over `len` samples.
fn ramp_response(len: usize, spacing: f64) -> Vec<Complex<f64>> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    let tau2 = spacing * spacing;
    kernel[0] = Complex::new(1.0 / (4.0 * tau2), 0.0);
    for n in 1..=len / 2 {
        if n % 2 == 1 {
            let v = -1.0 / ((n * n) as f64 * PI * PI * tau2);
            kernel[n] = Complex::new(v, 0.0);
            kernel[len - n] = Complex::new(v, 0.0);
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut kernel);
    kernel
}

/// Filtered backprojection: ramp-filter every view row in the frequency
/// domain, then backproject pixel-wise with linear detector interpolation,
/// scaled by `π / n_views`.
pub fn fbp(s: &Sinogram, g: &ViewGeometry, width: usize, height: usize) -> Result<Volume3D> {
    if !s.matches(g) {
        return Err(Error::invalid("sinogram does not match geometry"));
    }
    let n_det = g.n_det();
    let padded = (2 * n_det).next_power_of_two();
    let response = ramp_response(padded, g.det_spacing());
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(padded);
    let inverse = planner.plan_fft_inverse(padded);
    let scale = g.det_spacing() / padded as f64;

    let trig: Vec<(f64, f64)> = g.angles().iter().map(|a| a.sin_cos()).collect();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let det_center = (n_det as f64 - 1.0) / 2.0;
    let weight = PI / g.n_views() as f64;

    let mut out = Volume3D::zeros(width, height, s.depth())?;
    let mut buf = vec![Complex::new(0.0, 0.0); padded];
    let mut filtered = vec![0.0; g.n_views() * n_det];
    for z in 0..s.depth() {
        let sino = s.slice(z);
        for view in 0..g.n_views() {
            let row = &sino[view * n_det..(view + 1) * n_det];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (c, &v) in buf.iter_mut().zip(row) {
                c.re = v;
            }
            forward.process(&mut buf);
            for (c, h) in buf.iter_mut().zip(&response) {
                *c *= h;
            }
            inverse.process(&mut buf);
            for (f, c) in filtered[view * n_det..(view + 1) * n_det].iter_mut().zip(&buf) {
                *f = c.re * scale;
            }
        }
        let slice = out.slice_mut(z);
        for j in 0..height {
            let py = j as f64 - cy;
            for i in 0..width {
                let px = i as f64 - cx;
                let mut acc = 0.0;
                for (view, &(sin, cos)) in trig.iter().enumerate() {
                    let u = (px * cos + py * sin) / g.det_spacing() + det_center;
                    let u0 = u.floor();
                    let frac = u - u0;
                    let u0 = u0 as isize;
                    let row = &filtered[view * n_det..(view + 1) * n_det];
                    if u0 >= 0 && (u0 as usize) < n_det {
                        acc += (1.0 - frac) * row[u0 as usize];
                    }
                    if u0 + 1 >= 0 && ((u0 + 1) as usize) < n_det {
                        acc += frac * row[(u0 + 1) as usize];
                    }
                }
                slice[j * width + i] = acc * weight;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, radius: f64) -> Volume3D {
        let c = (n as f64 - 1.0) / 2.0;
        let mut v = Volume3D::zeros(n, n, 1).unwrap();
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - c, y as f64 - c);
                if dx * dx + dy * dy <= radius * radius {
                    v.set(x, y, 0, 1.0);
                }
            }
        }
        v
    }

    #[test]
    fn geometry_modes() {
        let g = make_geometry(ScanMode::Sparse, 4, 5).unwrap();
        let expect = [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];
        for (a, e) in g.angles().iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
        let lim = make_geometry(ScanMode::Limited, 90, 5).unwrap();
        assert!(lim.angles().iter().all(|&a| a < PI / 2.0));
        assert_eq!(make_geometry(ScanMode::Sparse, 1, 3).unwrap().angles(), &[0.0]);
        assert!(make_geometry(ScanMode::Sparse, 0, 3).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(ViewGeometry::new(vec![0.5, 0.2], 3, 1.0).is_err());
        assert!(ViewGeometry::new(vec![PI], 3, 1.0).is_err());
        assert!(ViewGeometry::new(vec![0.0], 0, 1.0).is_err());
        assert!(ViewGeometry::new(vec![0.0], 3, 0.0).is_err());
    }

    #[test]
    fn geometry_text_roundtrip() {
        let g = make_geometry(ScanMode::Limited, 7, 23).unwrap();
        let text = g.to_text();
        assert!(text.lines().filter(|l| l.starts_with("angle=")).count() == 7);
        assert_eq!(ViewGeometry::from_text(&text).unwrap(), g);
        assert!(ViewGeometry::from_text("n_det=3\nbogus=1\n").is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let g = make_geometry(ScanMode::Sparse, 6, 13).unwrap();
        let v = Volume3D::zeros(9, 9, 2).unwrap();
        let s = project(&v, &g).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
        let b = backproject(&s, &g, 9, 9).unwrap();
        assert!(b.data().iter().all(|&x| x == 0.0));
        assert!(fbp(&s, &g, 9, 9).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn disk_profile_matches_chord_length() {
        let n = 48;
        let r = 15.0;
        let v = disk(n, r);
        let g = make_geometry(ScanMode::Sparse, 7, default_n_det(n, n)).unwrap();
        let s = project(&v, &g).unwrap();
        for view in 0..g.n_views() {
            for b in 0..g.n_det() {
                let sd = g.bin_center(b);
                let chord = if sd.abs() < r { 2.0 * (r * r - sd * sd).sqrt() } else { 0.0 };
                let got = s.data()[view * g.n_det() + b];
                assert!((got - chord).abs() <= 2.0, "view {view} bin {b}: {got} vs {chord}");
            }
        }
    }

    #[test]
    fn impulse_hits_one_bin_at_angle_zero() {
        let n = 9;
        let mut v = Volume3D::zeros(n, n, 1).unwrap();
        v.set(6, 2, 0, 1.0);
        let g = ViewGeometry::new(vec![0.0], default_n_det(n, n), 1.0).unwrap();
        let s = project(&v, &g).unwrap();
        let row = s.slice(0);
        let (argmax, &max) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        // pixel x offset is 6 - 4 = 2
        assert!((g.bin_center(argmax) - 2.0).abs() < 1e-12);
        assert!((max - 1.0).abs() < 1e-12);
        assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn single_bin_backprojects_to_column_stripe() {
        let n = 7;
        let g = ViewGeometry::new(vec![0.0], default_n_det(n, n), 1.0).unwrap();
        let mut s = Sinogram::zeros(1, 1, g.n_det()).unwrap();
        // bin whose center is x offset -1, i.e. column 2
        let bin = (0..g.n_det()).find(|&b| (g.bin_center(b) + 1.0).abs() < 1e-12).unwrap();
        s.data_mut()[bin] = 2.5;
        let v = backproject(&s, &g, n, n).unwrap();
        for y in 0..n {
            for x in 0..n {
                let expect = if x == 2 { 2.5 } else { 0.0 };
                assert!((v.get(x, y, 0) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn slices_are_independent() {
        let g = make_geometry(ScanMode::Sparse, 5, 15).unwrap();
        let data: Vec<f64> = (0..10 * 10 * 3).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        let v = Volume3D::from_vec(10, 10, 3, data).unwrap();
        let whole = project(&v, &g).unwrap();
        for z in 0..3 {
            let single = project(&v.crop_depth(z, 1).unwrap(), &g).unwrap();
            assert_eq!(single.data(), whole.slice(z));
        }
    }

    #[test]
    fn backproject_shape_mismatch() {
        let g = make_geometry(ScanMode::Sparse, 4, 9).unwrap();
        let s = Sinogram::zeros(1, 3, 9).unwrap();
        assert!(backproject(&s, &g, 5, 5).is_err());
    }

    #[test]
    fn fbp_full_scan_recovers_disk() {
        let n = 64;
        let v = disk(n, 20.0);
        let g = make_geometry(ScanMode::Sparse, 180, default_n_det(n, n)).unwrap();
        let rec = fbp(&project(&v, &g).unwrap(), &g, n, n).unwrap();
        let mse: f64 = rec
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / (n * n) as f64;
        let psnr = -10.0 * mse.log10();
        assert!(psnr >= 25.0, "psnr {psnr}");
    }

    #[test]
    fn bsin_roundtrip() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| (i as f32 * 0.5) as f64).collect();
        let s = Sinogram::from_vec(2, 3, 4, data).unwrap();
        let mut bytes = Vec::new();
        s.write_bsin(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"BSIN1 2 3 4\n"));
        let back = Sinogram::read_bsin(&bytes[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sinogram_padding() {
        let s = Sinogram::from_vec(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = s.pad_repeat(5).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
    }
}
