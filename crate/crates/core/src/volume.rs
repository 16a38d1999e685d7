//! Volumetric grids, slice sets and the `BVOL1` file format.
//!
//! A [`Volume3D`] stores `width * height * depth` voxels with z outermost, so
//! every axial slice is a contiguous `width * height` run of the buffer.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    width: usize,
    height: usize,
    depth: usize,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn zeros(width: usize, height: usize, depth: usize) -> Result<Self> {
        Self::filled(width, height, depth, 0.0)
    }

    pub fn filled(width: usize, height: usize, depth: usize, value: f64) -> Result<Self> {
        check_dims(width, height, depth)?;
        if !value.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        Ok(Self {
            width,
            height,
            depth,
            data: vec![value; width * height * depth],
        })
    }

    /// Wraps an existing buffer, checking length and finiteness.
    pub fn from_vec(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, depth)?;
        if data.len() != width * height * depth {
            return Err(Error::invalid(format!(
                "buffer length {} does not match {width}x{height}x{depth}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite voxel at offset {pos}")));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    /// Builds a volume from equally sized axial slices.
    pub fn from_slices(width: usize, height: usize, slices: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * slices.len());
        for (z, s) in slices.iter().enumerate() {
            if s.len() != width * height {
                return Err(Error::invalid(format!(
                    "slice {z} has {} values, expected {}",
                    s.len(),
                    width * height
                )));
            }
            data.extend_from_slice(s);
        }
        Self::from_vec(width, height, slices.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn slice_len(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.depth)
    }

    pub fn same_shape(&self, other: &Volume3D) -> bool {
        self.dims() == other.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.slice_len())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume3D {
        Volume3D {
            width: self.width,
            height: self.height,
            depth: self.depth,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Keeps `depth` slices starting at `start`.
    pub fn crop_depth(&self, start: usize, depth: usize) -> Result<Volume3D> {
        if depth == 0 || start + depth > self.depth {
            return Err(Error::invalid(format!(
                "cannot crop slices {start}..{} from depth {}",
                start + depth,
                self.depth
            )));
        }
        let n = self.slice_len();
        Ok(Volume3D {
            width: self.width,
            height: self.height,
            depth,
            data: self.data[start * n..(start + depth) * n].to_vec(),
        })
    }

    pub fn dot(&self, other: &Volume3D) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Writes the `BVOL1` representation: an ASCII header line followed by
    /// little-endian `f32` voxels, z outermost.
    pub fn write_bvol<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "BVOL1 {} {} {}", self.width, self.height, self.depth)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_bvol<R: Read>(mut r: R) -> Result<Volume3D> {
        let header = read_header_line(&mut r, "BVOL1")?;
        let dims = parse_header(&header, "BVOL1", 3)?;
        let (w, h, d) = (dims[0], dims[1], dims[2]);
        check_dims(w, h, d)?;
        let data = read_f32_body(&mut r, w * h * d, "BVOL1")?;
        Volume3D::from_vec(w, h, d, data).map_err(|e| Error::format("BVOL1", e.to_string()))
    }
}

fn check_dims(width: usize, height: usize, depth: usize) -> Result<()> {
    if width == 0 || height == 0 || depth == 0 {
        return Err(Error::invalid(format!(
            "volume dimensions must be positive, got {width}x{height}x{depth}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reads bytes up to and including the first `\n`.
pub(crate) fn read_header_line<R: Read>(r: &mut R, format: &'static str) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::format(format, "missing header terminator"));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 4096 {
            return Err(Error::format(format, "header line too long"));
        }
    }
    String::from_utf8(line).map_err(|_| Error::format(format, "header is not ASCII"))
}

pub(crate) fn parse_header(line: &str, magic: &'static str, fields: usize) -> Result<Vec<usize>> {
    let mut parts = line.split(' ');
    if parts.next() != Some(magic) {
        return Err(Error::format(magic, format!("bad magic in header {line:?}")));
    }
    let values: Vec<usize> = parts
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::format(magic, format!("bad header field {p:?}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != fields {
        return Err(Error::format(
            magic,
            format!("expected {fields} header fields, found {}", values.len()),
        ));
    }
    Ok(values)
}

pub(crate) fn read_f32_body<R: Read>(r: &mut R, count: usize, format: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(format, format!("expected {count} float values")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format(format, "trailing bytes after payload"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Ordered, equally spaced slice indices forming one 3D patch.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SliceSet {
    indices: Vec<usize>,
    spacing: usize,
}

impl SliceSet {
    pub fn new(indices: Vec<usize>, spacing: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("slice set must not be empty"));
        }
        if spacing == 0 {
            return Err(Error::invalid("slice spacing must be positive"));
        }
        for w in indices.windows(2) {
            if w[1] <= w[0] || w[1] - w[0] != spacing {
                return Err(Error::invalid(format!(
                    "indices {indices:?} are not spaced by {spacing}"
                )));
            }
        }
        Ok(Self { indices, spacing })
    }

    /// `count` indices `start, start + spacing, ...`.
    pub fn strided(start: usize, count: usize, spacing: usize) -> Result<Self> {
        Self::new((0..count).map(|i| start + i * spacing).collect(), spacing)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn spacing(&self) -> usize {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn first(&self) -> usize {
        self.indices[0]
    }

    pub fn last(&self) -> usize {
        self.indices[self.indices.len() - 1]
    }
}

/// Slices added `(above, below)` when padding `depth` up to `target`.
/// The odd slice goes below.
pub fn padding_split(depth: usize, target: usize) -> Result<(usize, usize)> {
    if target < depth {
        return Err(Error::invalid(format!(
            "target depth {target} is smaller than depth {depth}"
        )));
    }
    let extra = target - depth;
    Ok((extra / 2, extra - extra / 2))
}

/// Smallest multiple of `multiple` that is at least `depth`.
pub fn round_up_depth(depth: usize, multiple: usize) -> usize {
    depth.div_ceil(multiple) * multiple
}

/// Pads the volume in z by repeating its first and last slices.
pub fn pad_repeat(v: &Volume3D, target_depth: usize) -> Result<Volume3D> {
    let (above, _) = padding_split(v.depth(), target_depth)?;
    let n = v.slice_len();
    let mut data = Vec::with_capacity(n * target_depth);
    for z in 0..target_depth {
        let src = z.saturating_sub(above).min(v.depth() - 1);
        data.extend_from_slice(v.slice(src));
    }
    Ok(Volume3D {
        width: v.width(),
        height: v.height(),
        depth: target_depth,
        data,
    })
}

/// Copies the listed slices, in order, into a `k`-deep volume.
pub fn extract_patch(v: &Volume3D, s: &SliceSet) -> Result<Volume3D> {
    gather_slices(v, s.indices())
}

/// Like [`extract_patch`] but accepts any index list, repeats included.
pub fn gather_slices(v: &Volume3D, indices: &[usize]) -> Result<Volume3D> {
    if indices.is_empty() {
        return Err(Error::invalid("no slices requested"));
    }
    let n = v.slice_len();
    let mut data = Vec::with_capacity(n * indices.len());
    for &z in indices {
        if z >= v.depth() {
            return Err(Error::invalid(format!(
                "slice index {z} out of range for depth {}",
                v.depth()
            )));
        }
        data.extend_from_slice(v.slice(z));
    }
    Ok(Volume3D {
        width: v.width(),
        height: v.height(),
        depth: indices.len(),
        data,
    })
}

/// Returns a copy of `v` with the slices in `s` replaced by `patch`.
pub fn scatter_patch(v: &Volume3D, s: &SliceSet, patch: &Volume3D) -> Result<Volume3D> {
    let mut out = v.clone();
    scatter_into(&mut out, s, patch)?;
    Ok(out)
}

pub fn scatter_into(v: &mut Volume3D, s: &SliceSet, patch: &Volume3D) -> Result<()> {
    if patch.depth() != s.len() || patch.width() != v.width() || patch.height() != v.height() {
        return Err(Error::invalid(format!(
            "patch {:?} does not fit {} slices of a {}x{} volume",
            patch.dims(),
            s.len(),
            v.width(),
            v.height()
        )));
    }
    if let Some(&z) = s.indices().iter().find(|&&z| z >= v.depth()) {
        return Err(Error::invalid(format!(
            "slice index {z} out of range for depth {}",
            v.depth()
        )));
    }
    for (slot, &z) in s.indices().iter().enumerate() {
        v.slice_mut(z).copy_from_slice(patch.slice(slot));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, d: usize) -> Volume3D {
        let data = (0..w * h * d).map(|i| i as f64 * 0.25).collect();
        Volume3D::from_vec(w, h, d, data).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Volume3D::zeros(0, 1, 1).is_err());
        assert!(Volume3D::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Volume3D::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn slice_set_invariants() {
        assert!(SliceSet::new(vec![0, 3, 6], 3).is_ok());
        assert!(SliceSet::new(vec![0, 2, 3], 1).is_err());
        assert!(SliceSet::new(vec![3, 2], 1).is_err());
        assert!(SliceSet::new(vec![], 1).is_err());
        assert!(SliceSet::new(vec![4], 0).is_err());
    }

    #[test]
    fn pad_identity_at_target() {
        let v = ramp(2, 2, 9);
        assert_eq!(pad_repeat(&v, 9).unwrap(), v);
    }

    #[test]
    fn pad_seven_to_nine_is_symmetric() {
        let v = ramp(2, 3, 7);
        let p = pad_repeat(&v, 9).unwrap();
        assert_eq!(p.slice(0), v.slice(0));
        for z in 0..7 {
            assert_eq!(p.slice(z + 1), v.slice(z));
        }
        assert_eq!(p.slice(8), v.slice(6));
    }

    #[test]
    fn pad_eight_to_nine_goes_below() {
        assert_eq!(padding_split(8, 9).unwrap(), (0, 1));
        let v = ramp(2, 2, 8);
        let p = pad_repeat(&v, 9).unwrap();
        for z in 0..8 {
            assert_eq!(p.slice(z), v.slice(z));
        }
        assert_eq!(p.slice(8), v.slice(7));
    }

    #[test]
    fn pad_rejects_shrink() {
        assert!(pad_repeat(&ramp(1, 1, 4), 3).is_err());
    }

    #[test]
    fn extract_listed_order() {
        let v = ramp(3, 2, 9);
        let s = SliceSet::new(vec![0, 3, 6], 3).unwrap();
        let p = extract_patch(&v, &s).unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.slice(0), v.slice(0));
        assert_eq!(p.slice(1), v.slice(3));
        assert_eq!(p.slice(2), v.slice(6));

        let first = extract_patch(&v, &SliceSet::strided(0, 3, 1).unwrap()).unwrap();
        assert_eq!(first.data(), &v.data()[..18]);
    }

    #[test]
    fn extract_out_of_range() {
        let v = ramp(2, 2, 4);
        let s = SliceSet::new(vec![2, 4], 2).unwrap();
        assert!(matches!(extract_patch(&v, &s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn scatter_zero_slice() {
        let v = Volume3D::filled(3, 3, 3, 1.0).unwrap();
        let s = SliceSet::new(vec![1], 1).unwrap();
        let zeros = Volume3D::zeros(3, 3, 1).unwrap();
        let out = scatter_patch(&v, &s, &zeros).unwrap();
        assert!(out.slice(0).iter().all(|&x| x == 1.0));
        assert!(out.slice(1).iter().all(|&x| x == 0.0));
        assert!(out.slice(2).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn scatter_shape_mismatch() {
        let v = Volume3D::zeros(3, 3, 3).unwrap();
        let s = SliceSet::new(vec![0, 1], 1).unwrap();
        let bad = Volume3D::zeros(3, 3, 1).unwrap();
        assert!(scatter_patch(&v, &s, &bad).is_err());
        let wrong_plane = Volume3D::zeros(2, 3, 2).unwrap();
        assert!(scatter_patch(&v, &s, &wrong_plane).is_err());
    }

    #[test]
    fn bvol_roundtrip_is_bit_exact() {
        let v = ramp(3, 4, 5).map(|x| (x as f32) as f64 - 1.5);
        let mut bytes = Vec::new();
        v.write_bvol(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"BVOL1 3 4 5\n"));
        assert_eq!(bytes.len(), 12 + 60 * 4);
        let back = Volume3D::read_bvol(&bytes[..]).unwrap();
        assert_eq!(back, v);
        let mut again = Vec::new();
        back.write_bvol(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn bvol_rejects_truncated_and_trailing() {
        let v = ramp(2, 2, 2);
        let mut bytes = Vec::new();
        v.write_bvol(&mut bytes).unwrap();
        assert!(Volume3D::read_bvol(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(Volume3D::read_bvol(&bytes[..]).is_err());
        assert!(Volume3D::read_bvol(&b"BVOL2 1 1 1\n\0\0\0\0"[..]).is_err());
    }
}
