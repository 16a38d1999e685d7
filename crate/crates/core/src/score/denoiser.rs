//! Three-layer convolutional noise predictor with hand-written backprop.
//!
//! ```text
//! z1 = conv3x3(W1, x) + b1 + (We · embed(t, p) + be)    a1 = silu(z1)
//! z2 = conv3x3(W2, a1) + b2                              a2 = silu(z2)
//! ε̂  = conv3x3(W3, a2) + b3
//! ```
//!
//! All convolutions are zero-padded "same" cross-correlations. With the skip
//! enabled the output also gets `c(t) x_t` added at each output slot, where
//! `c(t) = σ_t / (ᾱ_t σ_d² + σ_t²)` and `σ_d = 0.5`: the noise estimate of a
//! Gaussian with that spread. Parameters live in one flat buffer.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{embed, PatchMode, PatchScoreRequest, ScoreBackend};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::volume::{self, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkKind {
    /// `k` noisy slices in, `k` noise predictions out.
    Joint { k: usize },
    /// `2j + 1` noisy slices in, noise of the center slice out.
    Conditional { j: usize },
}

impl NetworkKind {
    pub fn mode(&self) -> PatchMode {
        match *self {
            NetworkKind::Joint { .. } => PatchMode::Joint,
            NetworkKind::Conditional { j } => PatchMode::Conditional { j },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserArch {
    pub kind: NetworkKind,
    pub hidden: usize,
    pub emb_dim: usize,
    /// Parameter-free input skip `c(t) x_t`.
    pub skip: bool,
}

const SIGMA_DATA: f64 = 0.5;

/// Weight of the input skip at timestep `t`.
pub fn skip_coefficient(t: usize, sched: &NoiseSchedule) -> Result<f64> {
    let ab = sched.alpha_bar(t)?;
    let s = sched.sigma(t)?;
    Ok(s / (ab * SIGMA_DATA * SIGMA_DATA + s * s))
}

/// Offsets of each parameter group inside the flat buffer.
#[derive(Clone, Copy, Debug)]
struct Layout {
    w1: usize,
    b1: usize,
    we: usize,
    be: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    total: usize,
}

impl DenoiserArch {
    pub fn new(kind: NetworkKind, hidden: usize, emb_dim: usize) -> Result<Self> {
        if kind == (NetworkKind::Joint { k: 0 }) {
            return Err(Error::invalid("joint network needs k >= 1"));
        }
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        if emb_dim == 0 || emb_dim % 2 == 1 {
            return Err(Error::invalid("embedding dimension must be even and positive"));
        }
        Ok(Self {
            kind,
            hidden,
            emb_dim,
            skip: true,
        })
    }

    pub fn with_skip(self, skip: bool) -> Self {
        Self { skip, ..self }
    }

    /// Default width 32 with a 32-dim embedding.
    pub fn small(kind: NetworkKind) -> Self {
        Self::new(kind, 32, 32).expect("valid default architecture")
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            NetworkKind::Joint { k } => k,
            NetworkKind::Conditional { j } => 2 * j + 1,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.kind {
            NetworkKind::Joint { k } => k,
            NetworkKind::Conditional { .. } => 1,
        }
    }

    fn layout(&self) -> Layout {
        let (cin, h, cout, e) = (self.in_channels(), self.hidden, self.out_channels(), self.emb_dim);
        let w1 = 0;
        let b1 = w1 + h * cin * 9;
        let we = b1 + h;
        let be = we + h * e;
        let w2 = be + h;
        let b2 = w2 + h * h * 9;
        let w3 = b2 + h;
        let b3 = w3 + cout * h * 9;
        Layout {
            w1,
            b1,
            we,
            be,
            w2,
            b2,
            w3,
            b3,
            total: b3 + cout,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    arch: DenoiserArch,
    weights: Vec<f64>,
}

/// Intermediate values kept from a forward pass for backprop.
pub struct Activations {
    width: usize,
    height: usize,
    input: Vec<f64>,
    emb: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Valid `(start, end)` range of output positions for a kernel offset.
#[inline]
fn tap_range(len: usize, offset: isize) -> (usize, usize) {
    let start = if offset < 0 { (-offset) as usize } else { 0 };
    let end = if offset > 0 { len - (offset as usize).min(len) } else { len };
    (start, end.max(start))
}

/// Unrolls 3×3 neighbourhoods: row `(i, ky, kx)` of the result is channel
/// `i` shifted by `(ky - 1, kx - 1)`, zero outside the image.
fn im2col(input: &[f64], cin: usize, width: usize, height: usize) -> Vec<f64> {
    let n = width * height;
    let mut cols = vec![0.0; cin * 9 * n];
    for i in 0..cin {
        let in_i = &input[i * n..(i + 1) * n];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = tap_range(height, dy);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = tap_range(width, dx);
                let row = &mut cols[((i * 3 + ky) * 3 + kx) * n..][..n];
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize * width + x0) as isize + dx;
                    row[y * width + x0..y * width + x1]
                        .copy_from_slice(&in_i[src as usize..src as usize + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulated into `out`.
fn col2im(cols: &[f64], cin: usize, width: usize, height: usize, out: &mut [f64]) {
    let n = width * height;
    for i in 0..cin {
        let out_i = &mut out[i * n..(i + 1) * n];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = tap_range(height, dy);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = tap_range(width, dx);
                let row = &cols[((i * 3 + ky) * 3 + kx) * n..][..n];
                for y in y0..y1 {
                    let src = (((y as isize + dy) as usize * width + x0) as isize + dx) as usize;
                    for (a, b) in out_i[src..src + (x1 - x0)].iter_mut().zip(&row[y * width + x0..y * width + x1]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

/// `out[o] += Σ_i W[o,i] ⋆ input[i]`.
fn conv_forward(w: &[f64], input: &[f64], cin: usize, out: &mut [f64], cout: usize, width: usize, height: usize) {
    let n = width * height;
    let kk = cin * 9;
    let cols = im2col(input, cin, width, height);
    // SAFETY: all three buffers are dense row-major with the stated shapes.
    unsafe {
        matrixmultiply::dgemm(
            cout, kk, n, 1.0,
            w.as_ptr(), kk as isize, 1,
            cols.as_ptr(), n as isize, 1,
            1.0, out.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Accumulates weight gradients and (optionally) input gradients of
/// [`conv_forward`] given the output gradient `g`.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    w: &[f64],
    input: &[f64],
    cin: usize,
    g: &[f64],
    cout: usize,
    width: usize,
    height: usize,
    dw: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let n = width * height;
    let kk = cin * 9;
    let cols = im2col(input, cin, width, height);
    // SAFETY: dense row-major buffers; transposes are expressed via strides.
    unsafe {
        matrixmultiply::dgemm(
            cout, n, kk, 1.0,
            g.as_ptr(), n as isize, 1,
            cols.as_ptr(), 1, n as isize,
            1.0, dw.as_mut_ptr(), kk as isize, 1,
        );
    }
    if let Some(din) = din {
        let mut dcols = vec![0.0; kk * n];
        unsafe {
            matrixmultiply::dgemm(
                kk, cout, n, 1.0,
                w.as_ptr(), 1, kk as isize,
                g.as_ptr(), n as isize, 1,
                0.0, dcols.as_mut_ptr(), n as isize, 1,
            );
        }
        col2im(&dcols, cin, width, height, din);
    }
}

impl DenoiserParams {
    /// All-zero parameters.
    pub fn zeros(arch: DenoiserArch) -> Self {
        Self {
            arch,
            weights: vec![0.0; arch.param_count()],
        }
    }

    /// He-style random initialisation; the output layer starts small.
    pub fn init(arch: DenoiserArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = arch.layout();
        let mut weights = vec![0.0; l.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let normal = Normal::new(0.0, std).unwrap();
            for w in &mut weights[range] {
                *w = normal.sample(&mut rng);
            }
        };
        let cin = arch.in_channels() as f64;
        let h = arch.hidden as f64;
        fill(l.w1..l.b1, (2.0 / (9.0 * cin)).sqrt());
        fill(l.we..l.be, (1.0 / arch.emb_dim as f64).sqrt());
        fill(l.w2..l.b2, (2.0 / (9.0 * h)).sqrt());
        fill(l.w3..l.b3, 0.1 * (1.0 / (9.0 * h)).sqrt());
        Self { arch, weights }
    }

    pub fn from_weights(arch: DenoiserArch, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { arch, weights })
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Zeroes the output convolution and bias.
    pub fn zero_output_layer(&mut self) {
        let l = self.arch.layout();
        self.weights[l.w3..l.total].fill(0.0);
    }

    /// Rounds every weight to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for w in &mut self.weights {
            *w = *w as f32 as f64;
        }
    }

    /// Forward pass on `input` (channels stacked as slices) at timestep
    /// `t` and spacing `p`. Returns the noise prediction and activations.
    pub fn forward(
        &self,
        input: &Volume3D,
        t: usize,
        p: usize,
        sched: &NoiseSchedule,
    ) -> Result<(Volume3D, Activations)> {
        let cin = self.arch.in_channels();
        if input.depth() != cin {
            return Err(Error::invalid(format!(
                "network expects {cin} input slices, got {}",
                input.depth()
            )));
        }
        let (width, height) = (input.width(), input.height());
        let n = width * height;
        let h = self.arch.hidden;
        let cout = self.arch.out_channels();
        let l = self.arch.layout();
        let w = &self.weights;
        let emb = embed(t as f64, p as f64, self.arch.emb_dim)?;

        let mut z1 = vec![0.0; h * n];
        conv_forward(&w[l.w1..l.b1], input.data(), cin, &mut z1, h, width, height);
        for c in 0..h {
            let e = &w[l.we + c * self.arch.emb_dim..l.we + (c + 1) * self.arch.emb_dim];
            let bias = w[l.b1 + c] + w[l.be + c] + volume::dot(e, &emb);
            z1[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bias);
        }
        let a1: Vec<f64> = z1.iter().map(|&z| silu(z)).collect();

        let mut z2 = vec![0.0; h * n];
        conv_forward(&w[l.w2..l.b2], &a1, h, &mut z2, h, width, height);
        for c in 0..h {
            let bias = w[l.b2 + c];
            z2[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bias);
        }
        let a2: Vec<f64> = z2.iter().map(|&z| silu(z)).collect();

        let mut out = vec![0.0; cout * n];
        conv_forward(&w[l.w3..l.b3], &a2, h, &mut out, cout, width, height);
        for c in 0..cout {
            let bias = w[l.b3 + c];
            out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += bias);
        }
        if self.arch.skip {
            let coef = skip_coefficient(t, sched)?;
            for c in 0..cout {
                let src = match self.arch.kind {
                    NetworkKind::Joint { .. } => c,
                    NetworkKind::Conditional { j } => j,
                };
                for (o, x) in out[c * n..(c + 1) * n].iter_mut().zip(input.slice(src)) {
                    *o += coef * x;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("denoiser produced non-finite output"));
        }
        let acts = Activations {
            width,
            height,
            input: input.data().to_vec(),
            emb,
            z1,
            a1,
            z2,
            a2,
        };
        Ok((Volume3D::from_vec(width, height, cout, out)?, acts))
    }

    pub fn predict(&self, input: &Volume3D, t: usize, p: usize, sched: &NoiseSchedule) -> Result<Volume3D> {
        Ok(self.forward(input, t, p, sched)?.0)
    }

    /// Parameter gradient of `Σ grad_out ⊙ output` (reverse mode).
    pub fn backward(&self, acts: &Activations, grad_out: &[f64]) -> Vec<f64> {
        let (width, height) = (acts.width, acts.height);
        let n = width * height;
        let h = self.arch.hidden;
        let cin = self.arch.in_channels();
        let cout = self.arch.out_channels();
        let e = self.arch.emb_dim;
        let l = self.arch.layout();
        let w = &self.weights;
        let mut grad = vec![0.0; l.total];

        for c in 0..cout {
            grad[l.b3 + c] = grad_out[c * n..(c + 1) * n].iter().sum();
        }
        let mut da2 = vec![0.0; h * n];
        conv_backward(&w[l.w3..l.b3], &acts.a2, h, grad_out, cout, width, height, &mut grad[l.w3..l.b3], Some(&mut da2));

        let dz2: Vec<f64> = da2.iter().zip(&acts.z2).map(|(g, &z)| g * silu_grad(z)).collect();
        for c in 0..h {
            grad[l.b2 + c] = dz2[c * n..(c + 1) * n].iter().sum();
        }
        let mut da1 = vec![0.0; h * n];
        conv_backward(&w[l.w2..l.b2], &acts.a1, h, &dz2, h, width, height, &mut grad[l.w2..l.b2], Some(&mut da1));

        let dz1: Vec<f64> = da1.iter().zip(&acts.z1).map(|(g, &z)| g * silu_grad(z)).collect();
        for c in 0..h {
            let s: f64 = dz1[c * n..(c + 1) * n].iter().sum();
            grad[l.b1 + c] = s;
            grad[l.be + c] = s;
            for (d, &x) in grad[l.we + c * e..l.we + (c + 1) * e].iter_mut().zip(&acts.emb) {
                *d = s * x;
            }
        }
        conv_backward(&w[l.w1..l.b1], &acts.input, cin, &dz1, h, width, height, &mut grad[l.w1..l.b1], None);
        grad
    }

    /// Weighted noise-prediction loss `weight · Σ (ε̂ - ε)²` and its
    /// parameter gradient.
    ///
    /// With `weight = 1/σ²`, `s_θ = -ε̂/σ` and target score
    /// `-(y - √ᾱ x)/σ² = -ε/σ` this is the squared score-matching residual
    /// `‖s_θ - target‖²`.
    #[allow(clippy::too_many_arguments)]
    pub fn noise_loss_grad(
        &self,
        input: &Volume3D,
        t: usize,
        p: usize,
        noise: &Volume3D,
        sched: &NoiseSchedule,
        weight: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let (pred, acts) = self.forward(input, t, p, sched)?;
        if !pred.same_shape(noise) {
            return Err(Error::invalid(format!(
                "noise target {:?} does not match network output {:?}",
                noise.dims(),
                pred.dims()
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid("loss weight must be finite and non-negative"));
        }
        let inv = weight;
        let mut loss = 0.0;
        let grad_out: Vec<f64> = pred
            .data()
            .iter()
            .zip(noise.data())
            .map(|(a, b)| {
                let r = a - b;
                loss += r * r * inv;
                2.0 * r * inv
            })
            .collect();
        if !loss.is_finite() {
            return Err(Error::numeric("non-finite denoising loss"));
        }
        Ok((loss, self.backward(&acts, &grad_out)))
    }

    fn check_request(&self, req: &PatchScoreRequest<'_>) -> Result<()> {
        req.validate()?;
        if req.mode != self.arch.kind.mode() || req.patch.depth() != self.arch.in_channels() {
            return Err(Error::invalid(format!(
                "request ({:?}, {} slices) does not match network {:?}",
                req.mode,
                req.patch.depth(),
                self.arch.kind
            )));
        }
        Ok(())
    }

    /// Predicted noise for a patch request: `k` slices in joint mode, the
    /// center slice in conditional mode.
    pub fn eval(&self, req: &PatchScoreRequest<'_>, sched: &NoiseSchedule) -> Result<Volume3D> {
        self.check_request(req)?;
        self.predict(req.patch, req.t, req.spacing, sched)
    }

    /// Loss and gradient for a request whose true noise is `noise`.
    pub fn grad(&self, req: &PatchScoreRequest<'_>, noise: &Volume3D, sched: &NoiseSchedule) -> Result<(f64, Vec<f64>)> {
        self.check_request(req)?;
        let sigma = sched.sigma(req.t)?;
        self.noise_loss_grad(req.patch, req.t, req.spacing, noise, sched, 1.0 / (sigma * sigma))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let (mode, size) = match self.arch.kind {
            NetworkKind::Joint { k } => ("joint", k),
            NetworkKind::Conditional { j } => ("conditional", j),
        };
        writeln!(
            w,
            "BCKPT1 {mode} {size} {} {} {} {}",
            self.arch.hidden,
            self.arch.emb_dim,
            if self.arch.skip { "skip" } else { "noskip" },
            self.weights.len()
        )?;
        let mut buf = Vec::with_capacity(self.weights.len() * 4);
        for &v in &self.weights {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let header = volume::read_header_line(&mut r, "BCKPT1")?;
        let fields: Vec<&str> = header.split(' ').collect();
        if fields.len() != 7 || fields[0] != "BCKPT1" {
            return Err(Error::format("BCKPT1", format!("bad header {header:?}")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format("BCKPT1", format!("bad header field {s:?}")))
        };
        let size = num(fields[2])?;
        let kind = match fields[1] {
            "joint" => NetworkKind::Joint { k: size },
            "conditional" => NetworkKind::Conditional { j: size },
            other => return Err(Error::format("BCKPT1", format!("unknown mode {other:?}"))),
        };
        let arch = DenoiserArch::new(kind, num(fields[3])?, num(fields[4])?)
            .map_err(|e| Error::format("BCKPT1", e.to_string()))?
            .with_skip(match fields[5] {
                "skip" => true,
                "noskip" => false,
                other => return Err(Error::format("BCKPT1", format!("unknown skip flag {other:?}"))),
            });
        let count = num(fields[6])?;
        if count != arch.param_count() {
            return Err(Error::format(
                "BCKPT1",
                format!("header declares {count} weights, architecture needs {}", arch.param_count()),
            ));
        }
        let weights = volume::read_f32_body(&mut r, count, "BCKPT1")?;
        Self::from_weights(arch, weights).map_err(|e| Error::format("BCKPT1", e.to_string()))
    }
}

impl ScoreBackend for DenoiserParams {
    /// Score `-ε̂ / σ_t` of the network's noise prediction.
    fn patch_score(&self, req: &PatchScoreRequest<'_>, sched: &NoiseSchedule) -> Result<Volume3D> {
        let eps = self.eval(req, sched)?;
        let sigma = sched.sigma(req.t)?;
        Ok(eps.map(|e| -e / sigma))
    }
}
