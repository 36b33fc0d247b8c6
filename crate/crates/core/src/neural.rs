//! Quantized fully connected autoencoder for implicit CSI feedback, with
//! hand-written reverse-mode gradients, Adam, and decoder-only fine-tuning.
//!
//! Data layout is batch-major: a batch of `n` vectors of width `d` is one
//! row-major `n × d` slice. Weight matrices are `n_out × n_in`, row-major.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{BitWriter, CodewordBits, Scheme};
use crate::channel::Domain;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::precoder::Precoder;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    /// `2·N_t·N_s`
    pub input: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub n_streams: usize,
    pub leaky_slope: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Self { input: 32, hidden: vec![512, 256], latent: 16, n_streams: 2, leaky_slope: 0.1 }
    }
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        if self.n_streams == 0 || self.input == 0 || self.input % (2 * self.n_streams) != 0 {
            return Err(Error::InvalidArgument(format!(
                "input width {} does not split into {} complex streams",
                self.input, self.n_streams
            )));
        }
        if self.latent == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidArgument(format!("leaky slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    pub fn n_tx(&self) -> usize {
        self.input / (2 * self.n_streams)
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input];
        d.extend(&self.hidden);
        d.push(self.latent);
        d
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut d = self.encoder_dims();
        d.reverse();
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerSpec {
    pub bits_per_element: u32,
}

impl Default for QuantizerSpec {
    fn default() -> Self {
        Self { bits_per_element: 2 }
    }
}

impl QuantizerSpec {
    pub fn levels(&self) -> u32 {
        1 << self.bits_per_element
    }

    /// Cell index of a value in `[0, 1]`; out-of-range values clamp.
    pub fn index(&self, z: f64) -> u32 {
        let n = self.levels();
        ((z * n as f64).floor().max(0.0) as u32).min(n - 1)
    }

    pub fn center(&self, i: u32) -> f64 {
        (i as f64 + 0.5) / self.levels() as f64
    }

    pub fn quantize(&self, z: f64) -> f64 {
        self.center(self.index(z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, w: vec![0.0; n_in * n_out], b: vec![0.0; n_out] }
    }

    /// Uniform in `±√(6 / ((1 + a²)·fan_in))`, zero bias.
    fn init(n_in: usize, n_out: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / ((1.0 + slope * slope) * n_in as f64)).sqrt();
        let w = (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    /// `z = x·Wᵀ + b` for `n` rows.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.n_in);
        let mut z = Vec::with_capacity(n * self.n_out);
        for _ in 0..n {
            z.extend_from_slice(&self.b);
        }
        // SAFETY: all slices are sized n×n_in, n_out×n_in and n×n_out as the strides assume.
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.n_in,
                self.n_out,
                1.0,
                x.as_ptr(),
                self.n_in as isize,
                1,
                self.w.as_ptr(),
                1,
                self.n_in as isize,
                1.0,
                z.as_mut_ptr(),
                self.n_out as isize,
                1,
            );
        }
        z
    }

    /// Accumulates `dW += dzᵀ·x`, `db += Σ dz` and returns `dx = dz·W` when asked.
    pub fn backward(&self, x: &[f64], dz: &[f64], n: usize, grad: &mut Dense, want_dx: bool) -> Option<Vec<f64>> {
        debug_assert_eq!(dz.len(), n * self.n_out);
        // SAFETY: dz is n×n_out, x is n×n_in, grad.w is n_out×n_in.
        unsafe {
            matrixmultiply::dgemm(
                self.n_out,
                n,
                self.n_in,
                1.0,
                dz.as_ptr(),
                1,
                self.n_out as isize,
                x.as_ptr(),
                self.n_in as isize,
                1,
                1.0,
                grad.w.as_mut_ptr(),
                self.n_in as isize,
                1,
            );
        }
        for row in dz.chunks_exact(self.n_out) {
            for (g, d) in grad.b.iter_mut().zip(row) {
                *g += d;
            }
        }
        if !want_dx {
            return None;
        }
        let mut dx = vec![0.0; n * self.n_in];
        // SAFETY: dz is n×n_out, W is n_out×n_in, dx is n×n_in.
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.n_out,
                self.n_in,
                1.0,
                dz.as_ptr(),
                self.n_out as isize,
                1,
                self.w.as_ptr(),
                self.n_in as isize,
                1,
                0.0,
                dx.as_mut_ptr(),
                self.n_in as isize,
                1,
            );
        }
        Some(dx)
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub topology: Topology,
    pub quantizer: QuantizerSpec,
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl ModelParams {
    pub fn init(topology: &Topology, quantizer: QuantizerSpec, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = topology.leaky_slope;
        let stack = |dims: &[usize], rng: &mut ChaCha8Rng| -> Vec<Dense> {
            dims.windows(2).map(|d| Dense::init(d[0], d[1], slope, rng)).collect()
        };
        let encoder = stack(&topology.encoder_dims(), &mut rng);
        let decoder = stack(&topology.decoder_dims(), &mut rng);
        Ok(Self { topology: topology.clone(), quantizer, encoder, decoder })
    }

    fn zeros_like(&self) -> Self {
        let z = |ls: &[Dense]| ls.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect();
        Self { topology: self.topology.clone(), quantizer: self.quantizer, encoder: z(&self.encoder), decoder: z(&self.decoder) }
    }

    /// Feedback payload length `V·B`.
    pub fn codeword_bits(&self) -> usize {
        self.topology.latent * self.quantizer.bits_per_element as usize
    }

    pub fn n_params(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters in checkpoint order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.encoder.iter().chain(&self.decoder).flat_map(|l| l.w.iter().chain(&l.b)).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// FNV-1a over the bit patterns of the encoder parameters.
    pub fn encoder_fingerprint(&self) -> u64 {
        fingerprint(self.encoder.iter().flat_map(|l| l.w.iter().chain(&l.b)).copied())
    }

    pub fn decoder_fingerprint(&self) -> u64 {
        fingerprint(self.decoder.iter().flat_map(|l| l.w.iter().chain(&l.b)).copied())
    }

    fn slices_mut(&mut self, decoder_only: bool) -> Vec<&mut [f64]> {
        let enc: Vec<&mut Dense> = if decoder_only { Vec::new() } else { self.encoder.iter_mut().collect() };
        enc.into_iter().chain(self.decoder.iter_mut()).flat_map(|l| l.slices_mut()).collect()
    }
}

fn fingerprint(values: impl Iterator<Item = f64>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// `[Re w₁; Im w₁; Re w₂; Im w₂; …]`
pub fn flatten_precoder(w: &CMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * w.rows() * w.cols());
    for s in 0..w.cols() {
        let col = w.column(s);
        out.extend(col.iter().map(|z| z.re));
        out.extend(col.iter().map(|z| z.im));
    }
    out
}

pub fn unflatten_precoder(v: &[f64], n_tx: usize, n_streams: usize) -> Result<CMatrix> {
    if v.len() != 2 * n_tx * n_streams {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for a {n_tx}x{n_streams} precoder",
            v.len()
        )));
    }
    Ok(CMatrix::from_fn(n_tx, n_streams, |k, s| {
        let base = 2 * n_tx * s;
        C64::new(v[base + k], v[base + n_tx + k])
    }))
}

/// Flattened rows for every precoder, checked against the model input.
pub fn flatten_dataset(params: &ModelParams, data: &[Precoder]) -> Result<Vec<f64>> {
    let t = &params.topology;
    let mut out = Vec::with_capacity(data.len() * t.input);
    for p in data {
        if p.n_tx() != t.n_tx() || p.n_streams() != t.n_streams {
            return Err(Error::DimensionMismatch(format!(
                "precoder {}x{} vs model input {}x{}",
                p.n_tx(),
                p.n_streams(),
                t.n_tx(),
                t.n_streams
            )));
        }
        out.extend(flatten_precoder(&phase_referenced(&p.w)));
    }
    Ok(out)
}

/// Rotates each column so its first entry is real and non-negative. Stream
/// phases are arbitrary and `ρ` ignores them; the largest-entry convention of
/// the eigensolver flips between near-equal entries across neighbouring
/// positions, which the network would otherwise have to learn.
pub fn phase_referenced(w: &CMatrix) -> CMatrix {
    let mut out = w.clone();
    for s in 0..w.cols() {
        let mut col = w.column(s);
        let a = col[0].norm();
        if a > 1e-12 {
            let r = col[0].conj() / a;
            col.iter_mut().for_each(|z| *z *= r);
            out.set_column(s, &col);
        }
    }
    out
}

pub fn loss_mse(w: &[f64], w_hat: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), w_hat.len());
    if w.is_empty() {
        return 0.0;
    }
    w.iter().zip(w_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / w.len() as f64
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations kept for the backward pass.
struct Tape {
    /// Inputs to every encoder layer, then the sigmoid output.
    enc: Vec<Vec<f64>>,
    /// Inputs to every decoder layer (the first is the possibly quantized latent).
    dec: Vec<Vec<f64>>,
    norms: Vec<f64>,
    out: Vec<f64>,
}

fn stack_forward(layers: &[Dense], x: Vec<f64>, n: usize, slope: f64, last: fn(f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = vec![x];
    for (i, layer) in layers.iter().enumerate() {
        let mut z = layer.forward(inputs.last().unwrap(), n);
        if i + 1 < layers.len() {
            for v in &mut z {
                if *v < 0.0 {
                    *v *= slope;
                }
            }
            inputs.push(z);
        } else {
            z.iter_mut().for_each(|v| *v = last(*v));
            return (inputs, z);
        }
    }
    unreachable!("layer stacks are never empty")
}

fn decode_forward(params: &ModelParams, latent: Vec<f64>, n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let t = &params.topology;
    let (dec, raw) = stack_forward(&params.decoder, latent, n, t.leaky_slope, |v| v);
    let chunk = t.input / t.n_streams;
    let mut out = raw;
    let mut norms = Vec::with_capacity(n * t.n_streams);
    for c in out.chunks_exact_mut(chunk) {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        c.iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    (dec, norms, out)
}

fn forward_tape(params: &ModelParams, x: &[f64], n: usize, quantize: bool) -> Tape {
    let t = &params.topology;
    let (mut enc, latent) = stack_forward(&params.encoder, x.to_vec(), n, t.leaky_slope, sigmoid);
    let q = if quantize { latent.iter().map(|&z| params.quantizer.quantize(z)).collect() } else { latent.clone() };
    enc.push(latent);
    let (dec, norms, out) = decode_forward(params, q, n);
    Tape { enc, dec, norms, out }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    /// Sigmoid outputs, `n × V`.
    pub latent: Vec<f64>,
    /// Quantizer indices when quantization was applied.
    pub indices: Option<Vec<u32>>,
    /// Unit-column reconstructions, flattened `n × input`.
    pub reconstruction: Vec<f64>,
}

/// Batched inference over flattened rows.
pub fn forward(params: &ModelParams, x: &[f64], quantize: bool) -> Result<Forward> {
    let t = &params.topology;
    if x.len() % t.input != 0 {
        return Err(Error::DimensionMismatch(format!("input length {} is not a multiple of {}", x.len(), t.input)));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input entry {i}")));
    }
    let n = x.len() / t.input;
    let tape = forward_tape(params, x, n, quantize);
    if let Some(i) = tape.out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("reconstruction entry {i} (row {})", i / t.input)));
    }
    let latent = tape.enc.last().unwrap().clone();
    let indices = quantize.then(|| latent.iter().map(|&z| params.quantizer.index(z)).collect());
    Ok(Forward { latent, indices, reconstruction: tape.out })
}

/// Gradient of the batch-mean MSE. Returns the loss.
fn backward_tape(params: &ModelParams, tape: &Tape, x: &[f64], n: usize, grad: &mut ModelParams, decoder_only: bool) -> f64 {
    let t = &params.topology;
    let loss = loss_mse(x, &tape.out);
    let scale = 2.0 / x.len() as f64;
    let chunk = t.input / t.n_streams;

    // through per-stream normalization: dy = (du − u⟨u, du⟩) / ‖y‖
    let mut d = Vec::with_capacity(tape.out.len());
    for ((u, xs), norm) in tape.out.chunks_exact(chunk).zip(x.chunks_exact(chunk)).zip(&tape.norms) {
        let du: Vec<f64> = u.iter().zip(xs).map(|(a, b)| scale * (a - b)).collect();
        let proj: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
        d.extend(u.iter().zip(&du).map(|(a, b)| (b - a * proj) / norm));
    }

    let slope = t.leaky_slope;
    let nd = params.decoder.len();
    for i in (0..nd).rev() {
        let want_dx = i > 0 || !decoder_only;
        let dx = params.decoder[i].backward(&tape.dec[i], &d, n, &mut grad.decoder[i], want_dx);
        match dx {
            Some(mut dx) if i > 0 => {
                for (g, h) in dx.iter_mut().zip(&tape.dec[i]) {
                    if *h < 0.0 {
                        *g *= slope;
                    }
                }
                d = dx;
            }
            Some(dx) => d = dx,
            None => return loss,
        }
    }

    // straight-through quantizer, then the sigmoid
    let s = tape.enc.last().unwrap();
    for (g, &z) in d.iter_mut().zip(s) {
        *g *= z * (1.0 - z);
    }
    let ne = params.encoder.len();
    for i in (0..ne).rev() {
        let dx = params.encoder[i].backward(&tape.enc[i], &d, n, &mut grad.encoder[i], i > 0);
        if let Some(mut dx) = dx {
            for (g, h) in dx.iter_mut().zip(&tape.enc[i]) {
                if *h < 0.0 {
                    *g *= slope;
                }
            }
            d = dx;
        }
    }
    loss
}

/// Loss and exact gradients of the STE surrogate on one batch of flattened rows.
pub fn backward(params: &ModelParams, x: &[f64], quantize: bool) -> Result<(f64, ModelParams)> {
    let t = &params.topology;
    if x.is_empty() || x.len() % t.input != 0 {
        return Err(Error::DimensionMismatch(format!("batch length {} for input width {}", x.len(), t.input)));
    }
    let n = x.len() / t.input;
    let tape = forward_tape(params, x, n, quantize);
    let mut grad = params.zeros_like();
    let loss = backward_tape(params, &tape, x, n, &mut grad, false);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Quantize in the training forward pass, with straight-through gradients.
    pub ste: bool,
    /// Share of positions held out to pick the returned parameters.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            ste: true,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1) and epsilon be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument(format!("validation fraction {} outside [0, 1)", self.validation_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub initial_loss: f64,
    /// Median batch loss per epoch.
    pub epoch_median: Vec<f64>,
    /// Quantized validation loss per epoch (training loss when nothing is held out).
    pub epoch_validation: Vec<f64>,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_validation: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &mut ModelParams, decoder_only: bool) -> Self {
        let sizes: Vec<usize> = params.slices_mut(decoder_only).iter().map(|s| s.len()).collect();
        Self { m: sizes.iter().map(|&n| vec![0.0; n]).collect(), v: sizes.iter().map(|&n| vec![0.0; n]).collect(), step: 0 }
    }

    fn update(&mut self, params: &mut ModelParams, grad: &mut ModelParams, cfg: &TrainConfig, decoder_only: bool) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let p = params.slices_mut(decoder_only);
        let g = grad.slices_mut(decoder_only);
        for (((p, g), m), v) in p.into_iter().zip(g).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
                g[i] = 0.0;
            }
        }
    }
}

fn gather(rows: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&rows[i * width..(i + 1) * width]);
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Quantized reconstruction MSE over flattened rows, evaluated in fixed-size chunks.
pub fn dataset_loss(params: &ModelParams, x: &[f64], quantize: bool) -> Result<f64> {
    let width = params.topology.input;
    let mut total = 0.0;
    for chunk in x.chunks(width * 512) {
        let f = forward(params, chunk, quantize)?;
        total += loss_mse(chunk, &f.reconstruction) * chunk.len() as f64;
    }
    Ok(total / x.len().max(1) as f64)
}

fn guard(epoch: usize, loss: f64, initial: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
    }
    if loss > 10.0 * initial {
        return Err(Error::Diverged { epoch, loss, initial });
    }
    Ok(())
}

fn run_training(
    params: &ModelParams,
    data: &[Precoder],
    cfg: &TrainConfig,
    decoder_only: bool,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty(if decoder_only { "online-learning set" } else { "training set" }));
    }
    let width = params.topology.input;
    let rows = flatten_dataset(params, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // hold out whole positions so subbands of one location never straddle the split
    let mut positions: Vec<(Domain, u32)> = data.iter().map(|p| (p.domain, p.position)).collect();
    positions.sort_unstable_by_key(|&(d, p)| (d.code(), p));
    positions.dedup();
    positions.shuffle(&mut rng);
    let n_val_pos = ((positions.len() as f64) * cfg.validation_fraction).floor() as usize;
    let held: HashSet<(Domain, u32)> = positions[..n_val_pos].iter().copied().collect();
    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| held.contains(&(data[i].domain, data[i].position)));
    let n_val = val_idx.len();
    let val = gather(&rows, width, &val_idx);
    let train = gather(&rows, width, &train_idx);
    let n = train_idx.len();

    let mut p = params.clone();
    let mut grad = p.zeros_like();
    let mut adam = Adam::new(&mut p, decoder_only);
    let initial_loss = dataset_loss(&p, &train, cfg.ste)?;
    let eval = |m: &ModelParams| dataset_loss(m, if n_val > 0 { &val } else { &train }, true);

    // with the encoder frozen its quantized output never changes
    let frozen_latent = if decoder_only {
        let f = forward(&p, &train, cfg.ste)?;
        Some(if cfg.ste { f.latent.iter().map(|&z| p.quantizer.quantize(z)).collect::<Vec<_>>() } else { f.latent })
    } else {
        None
    };
    let latent_w = p.topology.latent;

    let mut best = (eval(&p)?, p.clone(), 0usize);
    let mut report =
        TrainReport { initial_loss, n_train: n, n_validation: n_val, ..TrainReport::default() };
    let mut idx: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(n.div_ceil(cfg.batch_size));
        for batch in idx.chunks(cfg.batch_size) {
            let x = gather(&train, width, batch);
            let loss = match &frozen_latent {
                Some(lat) => {
                    let (dec, norms, out) = decode_forward(&p, gather(lat, latent_w, batch), batch.len());
                    let tape = Tape { enc: Vec::new(), dec, norms, out };
                    backward_tape(&p, &tape, &x, batch.len(), &mut grad, true)
                }
                None => {
                    let tape = forward_tape(&p, &x, batch.len(), cfg.ste);
                    backward_tape(&p, &tape, &x, batch.len(), &mut grad, false)
                }
            };
            guard(epoch, loss, initial_loss)?;
            adam.update(&mut p, &mut grad, cfg, decoder_only);
            losses.push(loss);
        }
        report.epoch_median.push(median(&mut losses));
        let v = eval(&p)?;
        report.epoch_validation.push(v);
        if v < best.0 {
            best = (v, p.clone(), epoch);
        }
    }
    report.best_epoch = best.2;
    Ok((best.1, report))
}

/// Trains all parameters; returns the best-validation parameters.
pub fn train(params: &ModelParams, data: &[Precoder], cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    run_training(params, data, cfg, false)
}

/// Decoder-only online learning; encoder parameters are left bit-identical.
pub fn finetune_decoder(params: &ModelParams, data: &[Precoder], cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    run_training(params, data, cfg, true)
}

/// Reconstructions of every precoder through the quantized codeword.
pub fn reconstruct(params: &ModelParams, data: &[Precoder]) -> Result<Vec<CMatrix>> {
    let t = &params.topology;
    let rows = flatten_dataset(params, data)?;
    let mut out = Vec::with_capacity(data.len());
    for chunk in rows.chunks(t.input * 512) {
        let f = forward(params, chunk, true)?;
        for r in f.reconstruction.chunks_exact(t.input) {
            out.push(unflatten_precoder(r, t.n_tx(), t.n_streams)?);
        }
    }
    Ok(out)
}

/// Feedback codeword: `V` quantizer indices of `B` bits each, MSB first.
pub fn encode_neural(params: &ModelParams, w: &Precoder) -> Result<CodewordBits> {
    let rows = flatten_dataset(params, std::slice::from_ref(w))?;
    let f = forward(params, &rows, true)?;
    let mut bw = BitWriter::new();
    for i in f.indices.unwrap() {
        bw.put(i as u64, params.quantizer.bits_per_element);
    }
    Ok(bw.finish(Scheme::Neural))
}

pub fn decode_neural(params: &ModelParams, bits: &CodewordBits) -> Result<CMatrix> {
    if bits.scheme != Scheme::Neural || bits.len() != params.codeword_bits() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} codeword of {} bits, model expects {} neural bits",
            bits.scheme,
            bits.len(),
            params.codeword_bits()
        )));
    }
    let mut r = bits.reader();
    let q = params.quantizer;
    let latent = (0..params.topology.latent)
        .map(|_| r.take(q.bits_per_element).map(|i| q.center(i as u32)))
        .collect::<Result<Vec<_>>>()?;
    let (_, _, out) = decode_forward(params, latent, 1);
    unflatten_precoder(&out, params.topology.n_tx(), params.topology.n_streams)
}

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CSIAE1";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let t = &params.topology;
    let mut out = Vec::with_capacity(64 + 8 * params.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.n_streams as u32).to_le_bytes());
    out.extend_from_slice(&params.quantizer.bits_per_element.to_le_bytes());
    out.extend_from_slice(&t.leaky_slope.to_le_bytes());
    let dims = t.encoder_dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated("checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint; with `expected`, the stored topology must match it.
pub fn checkpoint_from_bytes(buf: &[u8], expected: Option<&Topology>) -> Result<ModelParams> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        found: String::from_utf8_lossy(buf).into_owned(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let n_streams = c.u32()? as usize;
    let bits_per_element = c.u32()?;
    let leaky_slope = c.f64()?;
    let n_dims = c.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Malformed(format!("{n_dims} layer widths")));
    }
    let dims = (0..n_dims).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let topology = Topology {
        input: dims[0],
        hidden: dims[1..n_dims - 1].to_vec(),
        latent: dims[n_dims - 1],
        n_streams,
        leaky_slope,
    };
    topology.validate()?;
    if !(1..=16).contains(&bits_per_element) {
        return Err(Error::Malformed(format!("{bits_per_element} quantizer bits")));
    }
    if let Some(e) = expected {
        if *e != topology {
            return Err(Error::DimensionMismatch(format!("checkpoint topology {topology:?} vs configured {e:?}")));
        }
    }
    let mut params = ModelParams::init(&topology, QuantizerSpec { bits_per_element }, 0)?;
    for s in params.slices_mut(false) {
        for v in s.iter_mut() {
            *v = c.f64()?;
        }
    }
    if c.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes in checkpoint", buf.len() - c.pos)));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &FsPath) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &FsPath, expected: Option<&Topology>) -> Result<ModelParams> {
    checkpoint_from_bytes(&fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec_norm;

    fn small() -> Topology {
        Topology { input: 8, hidden: vec![12, 6], latent: 4, n_streams: 2, leaky_slope: 0.1 }
    }

    fn random_unit_rows(rng: &mut impl Rng, t: &Topology, n: usize) -> Vec<f64> {
        let chunk = t.input / t.n_streams;
        let mut v: Vec<f64> = (0..n * t.input).map(|_| rng.random_range(-1.0..1.0)).collect();
        for c in v.chunks_exact_mut(chunk) {
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    #[test]
    fn flatten_layout() {
        let mut w = CMatrix::zeros(8, 2);
        w.set_column(0, &{
            let mut e = vec![C64::new(0.0, 0.0); 8];
            e[0] = C64::new(1.0, 0.0);
            e
        });
        w.set_column(1, &{
            let mut e = vec![C64::new(0.0, 0.0); 8];
            e[1] = C64::new(1.0, 0.0);
            e
        });
        let v = flatten_precoder(&w);
        let ones: Vec<usize> = v.iter().enumerate().filter(|(_, &x)| x == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![0, 17]);
        assert_eq!(unflatten_precoder(&v, 8, 2).unwrap(), w);
        assert!(unflatten_precoder(&v[..30], 8, 2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cols: Vec<Vec<C64>> = (0..2)
            .map(|_| {
                let c: Vec<C64> = (0..8).map(|_| C64::new(rng.random(), rng.random())).collect();
                let n = vec_norm(&c);
                c.into_iter().map(|z| z / n).collect()
            })
            .collect();
        let w = CMatrix::from_columns(&cols).unwrap();
        let v = flatten_precoder(&w);
        assert!((v.iter().map(|x| x * x).sum::<f64>().sqrt() - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(unflatten_precoder(&v, 8, 2).unwrap(), w);
    }

    #[test]
    fn quantizer_levels() {
        let q = QuantizerSpec::default();
        assert_eq!(q.index(0.30), 1);
        assert_eq!(q.quantize(0.30), 0.375);
        assert_eq!(q.index(0.0), 0);
        assert_eq!(q.index(1.0), 3);
        for i in 0..4 {
            assert_eq!(q.quantize(q.center(i)), q.center(i));
        }
    }

    #[test]
    fn loss_examples() {
        let w = vec![0.5; 32];
        assert_eq!(loss_mse(&w, &w), 0.0);
        let mut unit = vec![0.0; 32];
        unit[0] = 1.0;
        unit[16] = 1.0;
        assert_eq!(loss_mse(&unit, &[0.0; 32]), 0.0625);
        let a: Vec<f64> = (0..32).map(|i| i as f64 * 0.1).collect();
        assert_eq!(loss_mse(&a, &w), loss_mse(&w, &a));
    }

    #[test]
    fn default_payload_and_unit_outputs() {
        let p = ModelParams::init(&Topology::default(), QuantizerSpec::default(), 3).unwrap();
        assert_eq!(p.codeword_bits(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_unit_rows(&mut rng, &p.topology, 5);
        let f = forward(&p, &x, true).unwrap();
        assert_eq!(f.indices.as_ref().unwrap().len() * 2, 5 * 32);
        for c in f.reconstruction.chunks_exact(16) {
            assert!((c.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut bad = x.clone();
        bad[3] = f64::NAN;
        assert!(matches!(forward(&p, &bad, true), Err(Error::NonFinite(_))));
    }

    #[test]
    fn quantization_is_identity_on_level_centres() {
        let p = ModelParams::init(&small(), QuantizerSpec::default(), 5).unwrap();
        let q = p.quantizer;
        let latent: Vec<f64> = (0..4).map(|i| q.center(i % 4)).collect();
        let quantized: Vec<f64> = latent.iter().map(|&z| q.quantize(z)).collect();
        let a = decode_forward(&p, latent, 1).2;
        let b = decode_forward(&p, quantized, 1).2;
        assert_eq!(a, b);
    }

    fn probe_gradients(params: &ModelParams, x: &[f64], probes: usize, seed: u64) -> f64 {
        let (_, grad) = backward(params, x, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let n_slices = params.clone().slices_mut(false).len();
        for _ in 0..probes {
            let si = rng.random_range(0..n_slices);
            let len = params.clone().slices_mut(false)[si].len();
            let k = rng.random_range(0..len);
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.slices_mut(false)[si][k] += delta;
                dataset_loss(&p, x, false).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grad.clone().slices_mut(false)[si][k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = ModelParams::init(&small(), QuantizerSpec::default(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_unit_rows(&mut rng, &p.topology, 6);
        let worst = probe_gradients(&p, &x, 200, 9);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn linear_layer_gradient_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n_in, n_out, n) = (3, 2, 5);
        let layer = Dense::init(n_in, n_out, 0.1, &mut rng);
        let x: Vec<f64> = (0..n * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = layer.forward(&x, n);
        let dz: Vec<f64> = z.iter().zip(&y).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        let mut g = Dense::zeros(n_in, n_out);
        layer.backward(&x, &dz, n, &mut g, false);
        for o in 0..n_out {
            for i in 0..n_in {
                let expected: f64 = (0..n).map(|s| 2.0 * (z[s * n_out + o] - y[s * n_out + o]) * x[s * n_in + i]).sum::<f64>() / n as f64;
                assert!((g.w[o * n_in + i] - expected).abs() < 1e-14);
            }
        }

        // targets produced by the layer itself: stationary point
        let mut g = Dense::zeros(n_in, n_out);
        let dz: Vec<f64> = z.iter().zip(&z).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        layer.backward(&x, &dz, n, &mut g, false);
        let norm = g.w.iter().chain(&g.b).map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-10);
    }

    fn precoders_from_rows(rows: &[f64], t: &Topology) -> Vec<Precoder> {
        rows.chunks_exact(t.input)
            .enumerate()
            .map(|(i, r)| Precoder {
                w: unflatten_precoder(r, t.n_tx(), t.n_streams).unwrap(),
                eigenvalues: vec![],
                subband: 0,
                position: i as u32,
                domain: Domain::Dt,
            })
            .collect()
    }

    #[test]
    fn overfits_ten_samples() {
        let t = Topology { input: 32, hidden: vec![64, 32], latent: 16, n_streams: 2, leaky_slope: 0.1 };
        let p = ModelParams::init(&t, QuantizerSpec::default(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = precoders_from_rows(&random_unit_rows(&mut rng, &t, 10), &t);
        let cfg = TrainConfig { batch_size: 10, epochs: 2000, validation_fraction: 0.0, seed: 1, ..TrainConfig::default() };
        let (trained, report) = train(&p, &data, &cfg).unwrap();
        let x = flatten_dataset(&trained, &data).unwrap();
        let mse = dataset_loss(&trained, &x, true).unwrap();
        assert!(mse < 1e-3, "final mse {mse}, initial {}", report.initial_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let t = small();
        let p = ModelParams::init(&t, QuantizerSpec::default(), 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = precoders_from_rows(&random_unit_rows(&mut rng, &t, 50), &t);
        let cfg = TrainConfig { batch_size: 8, epochs: 5, seed: 3, ..TrainConfig::default() };
        let (a, ra) = train(&p, &data, &cfg).unwrap();
        let (b, rb) = train(&p, &data, &cfg).unwrap();
        assert_eq!(checkpoint_bytes(&a), checkpoint_bytes(&b));
        assert_eq!(ra, rb);
        assert_eq!(ra.n_validation, 5);
    }

    #[test]
    fn finetune_freezes_encoder() {
        let t = small();
        let p = ModelParams::init(&t, QuantizerSpec::default(), 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let data = precoders_from_rows(&random_unit_rows(&mut rng, &t, 40), &t);
        let cfg = TrainConfig { batch_size: 8, epochs: 5, validation_fraction: 0.0, ..TrainConfig::default() };
        let (q, _) = finetune_decoder(&p, &data, &cfg).unwrap();
        assert_eq!(p.encoder_fingerprint(), q.encoder_fingerprint());
        assert_eq!(p.encoder, q.encoder);
        assert_ne!(p.decoder_fingerprint(), q.decoder_fingerprint());
        assert!(matches!(finetune_decoder(&p, &[], &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn decoder_only_gradient_matches_full() {
        let t = small();
        let p = ModelParams::init(&t, QuantizerSpec::default(), 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = random_unit_rows(&mut rng, &t, 7);
        let (_, full) = backward(&p, &x, true).unwrap();
        let tape = forward_tape(&p, &x, 7, true);
        let mut g = p.zeros_like();
        backward_tape(&p, &tape, &x, 7, &mut g, true);
        assert_eq!(g.decoder, full.decoder);
        assert!(g.encoder.iter().all(|l| l.w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn codeword_round_trip() {
        let p = ModelParams::init(&Topology::default(), QuantizerSpec::default(), 19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let data = precoders_from_rows(&random_unit_rows(&mut rng, &p.topology, 3), &p.topology);
        let batch = reconstruct(&p, &data).unwrap();
        for (d, r) in data.iter().zip(&batch) {
            let bits = encode_neural(&p, d).unwrap();
            assert_eq!(bits.len(), 32);
            let w_hat = decode_neural(&p, &bits).unwrap();
            assert!(w_hat.sub(r).unwrap().fro_norm() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = ModelParams::init(&small(), QuantizerSpec { bits_per_element: 3 }, 21).unwrap();
        let bytes = checkpoint_bytes(&p);
        assert_eq!(checkpoint_from_bytes(&bytes, Some(&small())).unwrap(), p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path, None).unwrap(), p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&bad, None), Err(Error::BadMagic { .. })));
        let mut newer = bytes.clone();
        newer[6] += 1;
        assert!(matches!(checkpoint_from_bytes(&newer, None), Err(Error::Version { found: 2, expected: 1 })));
        assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 3], None), Err(Error::Truncated(_))));
        assert!(matches!(
            checkpoint_from_bytes(&bytes, Some(&Topology::default())),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn divergence_guard() {
        assert!(guard(1, 0.5, 0.06).is_ok());
        assert!(matches!(guard(3, 0.7, 0.06), Err(Error::Diverged { epoch: 3, .. })));
        assert!(matches!(guard(1, f64::NAN, 0.06), Err(Error::NonFinite(_))));

        // absurd step sizes blow the parameters up
        let t = small();
        let p = ModelParams::init(&t, QuantizerSpec::default(), 22).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = precoders_from_rows(&random_unit_rows(&mut rng, &t, 64), &t);
        let cfg = TrainConfig { learning_rate: 1e300, batch_size: 4, epochs: 20, ste: false, ..TrainConfig::default() };
        assert!(train(&p, &data, &cfg).is_err());
    }
}
