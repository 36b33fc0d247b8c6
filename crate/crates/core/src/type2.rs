//! Type II style implicit feedback: precoders are approximated by a linear
//! combination of `L` beams taken from one orthogonal subgrid of an
//! oversampled DFT codebook, with quantized amplitudes and phases.
//!
//! Codeword layout, most significant bit first:
//!
//! | field                 | width                                  |
//! |-----------------------|----------------------------------------|
//! | rotation              | `⌈log₂ O⌉`                             |
//! | beam combination      | `⌈log₂ C(N_t, L)⌉`                     |
//! | per stream: strongest | `⌈log₂ L⌉`                             |
//! | per stream: amplitudes| `(L−1) × amplitude_bits`               |
//! | per stream: phases    | `(L−1) × phase_bits`                   |
//!
//! The stream fields are written stream after stream. Amplitudes and phases
//! are listed in ascending beam order, skipping the strongest beam, which is
//! fixed to amplitude 1 and phase 0. Amplitude level `k` decodes to
//! `k / (2^amplitude_bits − 1)` and phase level `k` to `2πk / 2^phase_bits`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bits::{bits_for, BitWriter, CodewordBits, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{inner, vec_norm, CMatrix, C64};
use crate::precoder::Precoder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Type2Config {
    pub n_tx: usize,
    pub n_streams: usize,
    pub n_beams: usize,
    pub oversampling: usize,
    pub amplitude_bits: u32,
    pub phase_bits: u32,
    /// Select rotation and beams once per group of subbands (see [`encode_group`]).
    pub wideband: bool,
}

impl Default for Type2Config {
    fn default() -> Self {
        Self { n_tx: 8, n_streams: 2, n_beams: 4, oversampling: 4, amplitude_bits: 3, phase_bits: 3, wideband: false }
    }
}

impl Type2Config {
    pub fn with_beams(n_beams: usize) -> Self {
        Self { n_beams, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_beams == 0 || self.n_beams > self.n_tx {
            return Err(Error::InvalidArgument(format!(
                "{} beams with {} transmit antennas",
                self.n_beams, self.n_tx
            )));
        }
        if self.oversampling == 0 || self.n_streams == 0 {
            return Err(Error::InvalidArgument("oversampling and streams must be positive".into()));
        }
        if self.amplitude_bits == 0 || self.phase_bits == 0 || self.amplitude_bits > 16 || self.phase_bits > 16 {
            return Err(Error::InvalidArgument("amplitude/phase bits must be in 1..=16".into()));
        }
        Ok(())
    }

    fn amp_levels(&self) -> u32 {
        1 << self.amplitude_bits
    }

    fn phase_levels(&self) -> u32 {
        1 << self.phase_bits
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r = 1u64;
    for i in 0..k {
        r = r * (n - i) as u64 / (i + 1) as u64;
    }
    r
}

/// Exact codeword length for a configuration.
pub fn overhead_bits(cfg: &Type2Config) -> usize {
    let l = cfg.n_beams;
    let per_stream =
        bits_for(l as u64) as usize + (l - 1) * (cfg.amplitude_bits as usize + cfg.phase_bits as usize);
    bits_for(cfg.oversampling as u64) as usize + bits_for(binomial(cfg.n_tx, l)) as usize + cfg.n_streams * per_stream
}

/// Bit totals the reference Type II rows report for 2, 3 and 4 beams.
pub const REFERENCE_BITS: [(usize, usize); 3] = [(2, 41), (3, 58), (4, 80)];

/// Oversampled DFT codebook, column `m` = `(1/√N_t)·exp(j2π k m / (N_t O))`.
pub fn beam_grid(n_tx: usize, oversampling: usize) -> CMatrix {
    let n = (n_tx * oversampling) as f64;
    let amp = 1.0 / (n_tx as f64).sqrt();
    CMatrix::from_fn(n_tx, n_tx * oversampling, |k, m| C64::from_polar(amp, 2.0 * PI * (k * m) as f64 / n))
}

fn beam(n_tx: usize, oversampling: usize, m: usize) -> Vec<C64> {
    let n = (n_tx * oversampling) as f64;
    let amp = 1.0 / (n_tx as f64).sqrt();
    (0..n_tx).map(|k| C64::from_polar(amp, 2.0 * PI * (k * m) as f64 / n)).collect()
}

/// Rank of an ascending L-subset in the combinatorial number system.
fn combination_index(subset: &[usize]) -> u64 {
    subset.iter().enumerate().map(|(j, &c)| binomial(c, j + 1)).sum()
}

fn combination_from_index(mut idx: u64, n: usize, k: usize) -> Result<Vec<usize>> {
    if idx >= binomial(n, k) {
        return Err(Error::Malformed(format!("beam combination index {idx} out of range")));
    }
    let mut out = vec![0; k];
    let mut hi = n;
    for j in (0..k).rev() {
        let mut c = j;
        while c + 1 < hi && binomial(c + 1, j + 1) <= idx {
            c += 1;
        }
        idx -= binomial(c, j + 1);
        out[j] = c;
        hi = c;
    }
    Ok(out)
}

/// Quantized representation before packing.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Fields {
    rotation: usize,
    /// Ascending subgrid indices.
    beams: Vec<usize>,
    /// Per stream, per selected beam: (amplitude level, phase level).
    coeffs: Vec<Vec<(u32, u32)>>,
}

const ZERO_ENERGY: f64 = 1e-20;
const TIE_TOL: f64 = 1e-9;

/// Projections `⟨b_{q+O·i}, w_s⟩` for one rotation, indexed `[i][s]`.
fn projections(cols: &[Vec<C64>], cfg: &Type2Config, rotation: usize) -> Vec<Vec<C64>> {
    (0..cfg.n_tx)
        .map(|i| {
            let b = beam(cfg.n_tx, cfg.oversampling, rotation + cfg.oversampling * i);
            cols.iter().map(|w| inner(&b, w)).collect()
        })
        .collect()
}

/// Top-L beams by energy; near-zero energies tie and resolve to the lowest index.
fn top_beams(energy: &[f64], l: usize) -> Vec<usize> {
    let total: f64 = energy.iter().sum();
    let floor = ZERO_ENERGY * total.max(f64::MIN_POSITIVE);
    let key = |e: f64| if e <= floor { 0.0 } else { e };
    let mut idx: Vec<usize> = (0..energy.len()).collect();
    idx.sort_by(|&a, &b| key(energy[b]).total_cmp(&key(energy[a])).then(a.cmp(&b)));
    let mut chosen = idx[..l].to_vec();
    chosen.sort_unstable();
    chosen
}

fn select_rotation(groups: &[Vec<Vec<C64>>], cfg: &Type2Config) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for q in 0..cfg.oversampling {
        let mut energy = vec![0.0; cfg.n_tx];
        for cols in groups {
            for (i, row) in projections(cols, cfg, q).iter().enumerate() {
                energy[i] += row.iter().map(C64::norm_sqr).sum::<f64>();
            }
        }
        let mut sorted = energy.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let score: f64 = sorted[..cfg.n_beams].iter().sum();
        if score > best_score * (1.0 + TIE_TOL) + f64::MIN_POSITIVE {
            best = q;
            best_score = score;
        }
    }
    best
}

fn beam_energy(groups: &[Vec<Vec<C64>>], cfg: &Type2Config, rotation: usize) -> Vec<f64> {
    let mut energy = vec![0.0; cfg.n_tx];
    for cols in groups {
        for (i, row) in projections(cols, cfg, rotation).iter().enumerate() {
            energy[i] += row.iter().map(C64::norm_sqr).sum::<f64>();
        }
    }
    energy
}

fn quantize(cols: &[Vec<C64>], cfg: &Type2Config, rotation: usize, beams: &[usize]) -> Fields {
    let proj = projections(cols, cfg, rotation);
    let top_amp = cfg.amp_levels() - 1;
    let n_phase = cfg.phase_levels();
    let coeffs = (0..cols.len())
        .map(|s| {
            let x: Vec<C64> = beams.iter().map(|&i| proj[i][s]).collect();
            let peak = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if peak == 0.0 {
                let mut q = vec![(0, 0); beams.len()];
                q[0] = (top_amp, 0);
                return q;
            }
            let strongest = x.iter().position(|z| z.norm() >= peak * (1.0 - TIE_TOL)).unwrap();
            let reference = x[strongest];
            x.iter()
                .enumerate()
                .map(|(j, &z)| {
                    if j == strongest {
                        return (top_amp, 0);
                    }
                    let y = z / reference;
                    let amp = (y.norm().min(1.0) * top_amp as f64).round() as u32;
                    let mut ph = (y.arg() / (2.0 * PI) * n_phase as f64).round() as i64;
                    ph = ph.rem_euclid(n_phase as i64);
                    (amp, if amp == 0 { 0 } else { ph as u32 })
                })
                .collect()
        })
        .collect();
    canonicalize(Fields { rotation, beams: beams.to_vec(), coeffs }, cfg)
}

/// Unique field values for a given reconstruction: unused beams are replaced by
/// the lowest free indices and every stream is referenced to its first
/// full-amplitude beam.
fn canonicalize(f: Fields, cfg: &Type2Config) -> Fields {
    let top_amp = cfg.amp_levels() - 1;
    let n_phase = cfg.phase_levels();
    let used: Vec<usize> = f
        .beams
        .iter()
        .enumerate()
        .filter(|(j, _)| f.coeffs.iter().any(|c| c[*j].0 > 0))
        .map(|(_, &b)| b)
        .collect();
    let mut beams = used.clone();
    for i in 0..cfg.n_tx {
        if beams.len() == cfg.n_beams {
            break;
        }
        if !used.contains(&i) {
            beams.push(i);
        }
    }
    beams.sort_unstable();

    let coeffs = f
        .coeffs
        .iter()
        .map(|c| {
            let lookup = |b: usize| f.beams.iter().position(|&x| x == b).map_or((0, 0), |j| c[j]);
            let mut row: Vec<(u32, u32)> = beams.iter().map(|&b| lookup(b)).collect();
            let r = row.iter().position(|&(a, _)| a == top_amp).unwrap_or(0);
            let ref_phase = row[r].1;
            for (a, p) in &mut row {
                *p = if *a == 0 { 0 } else { (*p + n_phase - ref_phase) % n_phase };
            }
            row
        })
        .collect();
    Fields { rotation: f.rotation, beams, coeffs }
}

fn pack(f: &Fields, cfg: &Type2Config) -> CodewordBits {
    let top_amp = cfg.amp_levels() - 1;
    let mut w = BitWriter::new();
    w.put(f.rotation as u64, bits_for(cfg.oversampling as u64));
    w.put(combination_index(&f.beams), bits_for(binomial(cfg.n_tx, cfg.n_beams)));
    for row in &f.coeffs {
        let strongest = row.iter().position(|&(a, p)| a == top_amp && p == 0).unwrap_or(0);
        w.put(strongest as u64, bits_for(cfg.n_beams as u64));
        for (j, &(a, _)) in row.iter().enumerate() {
            if j != strongest {
                w.put(a as u64, cfg.amplitude_bits);
            }
        }
        for (j, &(_, p)) in row.iter().enumerate() {
            if j != strongest {
                w.put(p as u64, cfg.phase_bits);
            }
        }
    }
    w.finish(Scheme::Type2)
}

fn unpack(bits: &CodewordBits, cfg: &Type2Config) -> Result<Fields> {
    cfg.validate()?;
    let expected = overhead_bits(cfg);
    if bits.len() != expected {
        return Err(Error::DimensionMismatch(format!("codeword has {} bits, expected {expected}", bits.len())));
    }
    let top_amp = cfg.amp_levels() - 1;
    let mut r = bits.reader();
    let rotation = r.take(bits_for(cfg.oversampling as u64))? as usize;
    if rotation >= cfg.oversampling {
        return Err(Error::Malformed(format!("rotation {rotation} out of range")));
    }
    let combo = r.take(bits_for(binomial(cfg.n_tx, cfg.n_beams)))?;
    let beams = combination_from_index(combo, cfg.n_tx, cfg.n_beams)?;
    let mut coeffs = Vec::with_capacity(cfg.n_streams);
    for _ in 0..cfg.n_streams {
        let strongest = r.take(bits_for(cfg.n_beams as u64))? as usize;
        if strongest >= cfg.n_beams {
            return Err(Error::Malformed(format!("strongest beam {strongest} out of range")));
        }
        let mut row = vec![(top_amp, 0u32); cfg.n_beams];
        for (j, slot) in row.iter_mut().enumerate() {
            if j != strongest {
                slot.0 = r.take(cfg.amplitude_bits)? as u32;
            }
        }
        for (j, slot) in row.iter_mut().enumerate() {
            if j != strongest {
                slot.1 = r.take(cfg.phase_bits)? as u32;
            }
        }
        coeffs.push(row);
    }
    Ok(Fields { rotation, beams, coeffs })
}

fn check_precoder(w: &Precoder, cfg: &Type2Config) -> Result<Vec<Vec<C64>>> {
    cfg.validate()?;
    if w.n_tx() != cfg.n_tx || w.n_streams() != cfg.n_streams {
        return Err(Error::DimensionMismatch(format!(
            "precoder {}x{} vs codec {}x{}",
            w.n_tx(),
            w.n_streams(),
            cfg.n_tx,
            cfg.n_streams
        )));
    }
    Ok((0..cfg.n_streams).map(|s| w.w.column(s)).collect())
}

pub fn encode_type2(w: &Precoder, cfg: &Type2Config) -> Result<CodewordBits> {
    let cols = check_precoder(w, cfg)?;
    let groups = [cols];
    let rotation = select_rotation(&groups, cfg);
    let beams = top_beams(&beam_energy(&groups, cfg, rotation), cfg.n_beams);
    Ok(pack(&quantize(&groups[0], cfg, rotation, &beams), cfg))
}

/// Encodes the subbands of one position. With `cfg.wideband` the rotation
/// and beam set are chosen from the energy of all subbands together; each
/// codeword still carries the full field layout.
pub fn encode_group(ws: &[Precoder], cfg: &Type2Config) -> Result<Vec<CodewordBits>> {
    if !cfg.wideband {
        return ws.iter().map(|w| encode_type2(w, cfg)).collect();
    }
    let groups = ws.iter().map(|w| check_precoder(w, cfg)).collect::<Result<Vec<_>>>()?;
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    let rotation = select_rotation(&groups, cfg);
    let beams = top_beams(&beam_energy(&groups, cfg, rotation), cfg.n_beams);
    Ok(groups.iter().map(|cols| pack(&quantize(cols, cfg, rotation, &beams), cfg)).collect())
}

/// Reconstruction `ŵ_s = normalize(Σ amp·e^{jφ}·b)` as an N_t × N_s matrix.
pub fn decode_type2(bits: &CodewordBits, cfg: &Type2Config) -> Result<CMatrix> {
    if bits.scheme != Scheme::Type2 {
        return Err(Error::InvalidArgument("not a Type II codeword".into()));
    }
    let f = unpack(bits, cfg)?;
    let top_amp = (cfg.amp_levels() - 1) as f64;
    let n_phase = cfg.phase_levels() as f64;
    let basis: Vec<Vec<C64>> =
        f.beams.iter().map(|&i| beam(cfg.n_tx, cfg.oversampling, f.rotation + cfg.oversampling * i)).collect();
    let mut out = CMatrix::zeros(cfg.n_tx, cfg.n_streams);
    for (s, row) in f.coeffs.iter().enumerate() {
        let mut v = vec![C64::new(0.0, 0.0); cfg.n_tx];
        for (&(a, p), b) in row.iter().zip(&basis) {
            let c = C64::from_polar(a as f64 / top_amp, 2.0 * PI * p as f64 / n_phase);
            for (x, y) in v.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        let n = vec_norm(&v);
        for x in &mut v {
            *x /= n;
        }
        out.set_column(s, &v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Domain;
    use crate::metrics::{rho, rho_per_stream};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn precoder(w: CMatrix) -> Precoder {
        Precoder { w, eigenvalues: vec![], subband: 0, position: 0, domain: Domain::Dt }
    }

    fn random_precoder(rng: &mut impl Rng, nt: usize, ns: usize) -> Precoder {
        let a = CMatrix::from_fn(nt, nt, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let g = a.adjoint().matmul(&a).unwrap();
        let e = crate::linalg::eig_hermitian(&g, 1e-12).unwrap();
        precoder(e.eigenvectors.leading_columns(ns))
    }

    #[test]
    fn dft_grid_properties() {
        let g = beam_grid(4, 1);
        let u = g.adjoint().matmul(&g).unwrap();
        assert!(u.sub(&CMatrix::identity(4)).unwrap().fro_norm() < 1e-14);
        let g = beam_grid(8, 4);
        for m in 0..32 {
            assert!((vec_norm(&g.column(m)) - 1.0).abs() < 1e-14);
        }
        for q in 0..4 {
            let sub = CMatrix::from_fn(8, 8, |k, i| g[(k, q + 4 * i)]);
            let u = sub.adjoint().matmul(&sub).unwrap();
            assert!(u.sub(&CMatrix::identity(8)).unwrap().fro_norm() < 1e-13);
        }
    }

    #[test]
    fn adjacent_beam_overlap_is_dirichlet() {
        // |Σ_k e^{jπk/8}| / 4 for N_t = 4, O = 4
        let g = beam_grid(4, 4);
        let ip = inner(&g.column(5), &g.column(6)).norm();
        let x = PI / 8.0;
        let dirichlet = (4.0 * x / 2.0).sin().abs() / (4.0 * (x / 2.0).sin().abs());
        assert!((ip - dirichlet).abs() < 1e-14);
    }

    #[test]
    fn overhead_formula() {
        assert_eq!(overhead_bits(&Type2Config::default()), 49);
        assert_eq!(overhead_bits(&Type2Config::with_beams(2)), 21);
        assert_eq!(overhead_bits(&Type2Config::with_beams(3)), 36);
        let single = Type2Config { n_beams: 1, n_streams: 1, oversampling: 1, ..Type2Config::default() };
        assert_eq!(overhead_bits(&single), 3);
    }

    #[test]
    fn combination_ranks_are_bijective() {
        for (n, k) in [(8, 2), (8, 3), (8, 4), (5, 5), (6, 1)] {
            let total = binomial(n, k);
            let mut seen = std::collections::HashSet::new();
            for idx in 0..total {
                let c = combination_from_index(idx, n, k).unwrap();
                assert!(c.windows(2).all(|w| w[0] < w[1]));
                assert_eq!(combination_index(&c), idx);
                seen.insert(c);
            }
            assert_eq!(seen.len() as u64, total);
            assert!(combination_from_index(total, n, k).is_err());
        }
    }

    #[test]
    fn grid_beam_is_lossless() {
        let g = beam_grid(8, 4);
        let w = CMatrix::from_columns(&[g.column(13), g.column(21)]).unwrap();
        let cfg = Type2Config::with_beams(2);
        let bits = encode_type2(&precoder(w.clone()), &cfg).unwrap();
        let w_hat = decode_type2(&bits, &cfg).unwrap();
        let per = rho_per_stream(&w, &w_hat).unwrap();
        assert!(per[0] >= 0.999 && per[1] >= 0.999);
    }

    #[test]
    fn equal_amplitude_sum() {
        let cfg = Type2Config { n_streams: 1, ..Type2Config::with_beams(2) };
        let g = beam_grid(8, 4);
        let (b1, b2) = (g.column(4), g.column(12));
        let target: Vec<C64> = b1.iter().zip(&b2).map(|(x, y)| (x + y) / 2f64.sqrt()).collect();
        let bits = encode_type2(&precoder(CMatrix::from_columns(&[target.clone()]).unwrap()), &cfg).unwrap();
        let w_hat = decode_type2(&bits, &cfg).unwrap();
        let got = w_hat.column(0);
        assert!((inner(&got, &target).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_bit_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for l in 1..=4 {
            let cfg = Type2Config::with_beams(l);
            for _ in 0..100 {
                let p = random_precoder(&mut rng, 8, 2);
                let b1 = encode_type2(&p, &cfg).unwrap();
                assert_eq!(b1, encode_type2(&p, &cfg).unwrap());
                assert_eq!(b1.len(), overhead_bits(&cfg));
                let w1 = decode_type2(&b1, &cfg).unwrap();
                let b2 = encode_type2(&precoder(w1.clone()), &cfg).unwrap();
                assert_eq!(b1, b2, "L={l}");
                let w2 = decode_type2(&b2, &cfg).unwrap();
                assert!(w1.sub(&w2).unwrap().fro_norm() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_in_selected_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cfg = Type2Config::with_beams(3);
        let p = random_precoder(&mut rng, 8, 2);
        let bits = encode_type2(&p, &cfg).unwrap();
        let f = unpack(&bits, &cfg).unwrap();
        let w_hat = decode_type2(&bits, &cfg).unwrap();
        for s in 0..2 {
            let col = w_hat.column(s);
            let captured: f64 = f
                .beams
                .iter()
                .map(|&i| inner(&beam(8, 4, f.rotation + 4 * i), &col).norm_sqr())
                .sum();
            assert!((captured - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_rho_grows_with_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let corpus: Vec<_> = (0..300).map(|_| random_precoder(&mut rng, 8, 2)).collect();
        let mean = |cfg: &Type2Config| {
            corpus
                .iter()
                .map(|p| rho(&p.w, &decode_type2(&encode_type2(p, cfg).unwrap(), cfg).unwrap()).unwrap())
                .sum::<f64>()
                / corpus.len() as f64
        };
        let by_l: Vec<f64> = (1..=4).map(|l| mean(&Type2Config::with_beams(l))).collect();
        assert!(by_l.windows(2).all(|w| w[1] >= w[0]), "{by_l:?}");
        let by_a: Vec<f64> =
            (1..=4).map(|a| mean(&Type2Config { amplitude_bits: a, ..Type2Config::default() })).collect();
        assert!(by_a.windows(2).all(|w| w[1] >= w[0]), "{by_a:?}");
        let by_p: Vec<f64> = (1..=4).map(|p| mean(&Type2Config { phase_bits: p, ..Type2Config::default() })).collect();
        assert!(by_p.windows(2).all(|w| w[1] >= w[0]), "{by_p:?}");
    }

    #[test]
    fn wideband_group_shares_beams() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let ps: Vec<_> = (0..5).map(|_| random_precoder(&mut rng, 8, 2)).collect();
        let cfg = Type2Config { wideband: true, ..Type2Config::with_beams(4) };
        let words = encode_group(&ps, &cfg).unwrap();
        let f0 = unpack(&words[0], &cfg).unwrap();
        for w in &words {
            let f = unpack(w, &cfg).unwrap();
            assert_eq!(f.rotation, f0.rotation);
        }
        let narrow = encode_group(&ps, &Type2Config::with_beams(4)).unwrap();
        assert_eq!(narrow[2], encode_type2(&ps[2], &Type2Config::with_beams(4)).unwrap());
    }

    #[test]
    fn decode_errors() {
        let cfg = Type2Config::default();
        let mut w = BitWriter::new();
        w.put(0, 10);
        assert!(matches!(decode_type2(&w.finish(Scheme::Type2), &cfg), Err(Error::DimensionMismatch(_))));
        // combination index 127 >= C(8,4) = 70
        let mut w = BitWriter::new();
        w.put(0, 2);
        w.put(127, 7);
        w.put(0, 40);
        assert!(matches!(decode_type2(&w.finish(Scheme::Type2), &cfg), Err(Error::Malformed(_))));
        let mut w = BitWriter::new();
        w.put(0, 49);
        assert!(decode_type2(&w.finish(Scheme::Neural), &cfg).is_err());
        assert!(Type2Config::with_beams(9).validate().is_err());
    }

    proptest! {
        #[test]
        fn length_matches_overhead(
            l in 1usize..=4, o in 1usize..=5, a in 1u32..=4, p in 1u32..=4, ns in 1usize..=2, seed in 0u64..1000
        ) {
            let cfg = Type2Config { n_tx: 8, n_streams: ns, n_beams: l, oversampling: o, amplitude_bits: a, phase_bits: p, wideband: false };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pc = random_precoder(&mut rng, 8, ns);
            let bits = encode_type2(&pc, &cfg).unwrap();
            prop_assert_eq!(bits.len(), overhead_bits(&cfg));
            let w_hat = decode_type2(&bits, &cfg).unwrap();
            for s in 0..ns {
                prop_assert!((vec_norm(&w_hat.column(s)) - 1.0).abs() < 1e-12);
            }
        }
    }
}
