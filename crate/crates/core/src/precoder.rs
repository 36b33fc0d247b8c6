//! Eigen-precoders: the top eigenvectors of the subband-averaged channel Gram
//! matrix, one precoder per (position, subband).

use serde::{Deserialize, Serialize};

use crate::channel::{subband_channels, ChannelTensor, Domain, OfdmGrid};
use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, gram_average, inner, CMatrix, DEFAULT_EIG_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// N_t × N_s with unit-norm, mutually orthogonal columns.
    pub w: CMatrix,
    /// Descending, one per stream.
    pub eigenvalues: Vec<f64>,
    pub subband: u32,
    pub position: u32,
    pub domain: Domain,
}

impl Precoder {
    pub fn n_tx(&self) -> usize {
        self.w.rows()
    }

    pub fn n_streams(&self) -> usize {
        self.w.cols()
    }

    /// Wraps a bare matrix (e.g. a reconstruction) without eigenvalue data.
    pub fn from_matrix(w: CMatrix, like: &Precoder) -> Self {
        Self { w, eigenvalues: Vec::new(), subband: like.subband, position: like.position, domain: like.domain }
    }

    /// Largest `|⟨w_i, w_j⟩|` over distinct columns.
    pub fn max_cross_correlation(&self) -> f64 {
        let cols: Vec<_> = (0..self.n_streams()).map(|s| self.w.column(s)).collect();
        let mut worst = 0.0f64;
        for i in 0..cols.len() {
            for j in i + 1..cols.len() {
                worst = worst.max(inner(&cols[i], &cols[j]).norm());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_streams: usize,
    pub grid: OfdmGrid,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { n_tx: 8, n_rx: 8, n_streams: 2, grid: OfdmGrid::default() }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_streams == 0 || self.n_streams > self.n_tx.min(self.n_rx) {
            return Err(Error::InvalidArgument(format!(
                "{} streams with {}x{} antennas",
                self.n_streams, self.n_rx, self.n_tx
            )));
        }
        self.grid.validate()
    }
}

/// Top-`n_streams` eigenvectors of `(1/N) Σ H_nᴴ H_n` over the given channels.
pub fn extract_precoder(channels: &[CMatrix], n_streams: usize) -> Result<Precoder> {
    let gram = gram_average(channels)?;
    let nt = gram.rows();
    if n_streams == 0 || n_streams > nt {
        return Err(Error::InvalidArgument(format!("{n_streams} streams for {nt} transmit antennas")));
    }
    let eig = eig_hermitian(&gram, DEFAULT_EIG_TOL)?;
    Ok(Precoder {
        w: eig.eigenvectors.leading_columns(n_streams),
        eigenvalues: eig.eigenvalues[..n_streams].to_vec(),
        subband: 0,
        position: 0,
        domain: Domain::Dt,
    })
}

/// One precoder per subband of a full-band tensor, in subband order.
pub fn tensor_precoders(ch: &ChannelTensor, grid: &OfdmGrid, n_streams: usize) -> Result<Vec<Precoder>> {
    subband_channels(ch, grid)?
        .into_iter()
        .map(|(band, mats)| {
            let mut p = extract_precoder(mats, n_streams)?;
            p.subband = band as u32;
            p.position = ch.position;
            p.domain = ch.domain;
            Ok(p)
        })
        .collect()
}

/// Precoders for every (position, subband) pair, positions in input order.
pub fn precoder_dataset(channels: &[ChannelTensor], grid: &OfdmGrid, n_streams: usize) -> Result<Vec<Precoder>> {
    let mut out = Vec::with_capacity(channels.len() * grid.n_subbands);
    for ch in channels {
        out.extend(tensor_precoders(ch, grid, n_streams)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{vec_norm, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random(rng: &mut impl Rng, r: usize, k: usize) -> CMatrix {
        CMatrix::from_fn(r, k, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn diagonal_channel() {
        let mut d = vec![0.5; 4];
        d[0] = 2.0;
        d[1] = 1.0;
        let h = CMatrix::diag(&d);
        let p = extract_precoder(&[h.clone(), h], 2).unwrap();
        assert!((p.eigenvalues[0] - 4.0).abs() < 1e-14);
        assert!((p.eigenvalues[1] - 1.0).abs() < 1e-14);
        assert_eq!(p.w.column(0), vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(p.w.column(1), vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn rank_one_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<C64> = (0..3).map(|_| c(rng.random(), rng.random())).collect();
        let b: Vec<C64> = (0..4).map(|_| c(rng.random(), rng.random())).collect();
        let h = CMatrix::outer(&a, &b);
        let p = extract_precoder(&[h], 2).unwrap();
        let w1 = p.w.column(0);
        let align = inner(&w1, &b).norm() / vec_norm(&b);
        assert!((align - 1.0).abs() < 1e-12);
        assert!(p.eigenvalues[1].abs() < 1e-12);
        let na: f64 = vec_norm(&a).powi(2) * vec_norm(&b).powi(2);
        assert!((p.eigenvalues[0] - na).abs() < 1e-12 * na);
    }

    #[test]
    fn unit_orthogonal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let hs: Vec<_> = (0..6).map(|_| random(&mut rng, 8, 8)).collect();
            let p = extract_precoder(&hs, 2).unwrap();
            for s in 0..2 {
                assert!((vec_norm(&p.w.column(s)) - 1.0).abs() < 1e-12);
            }
            assert!(p.max_cross_correlation() < 1e-8);
            // dominant eigenvector carries at least as much average gain
            let gain = |w: &[C64]| -> f64 {
                hs.iter().map(|h| vec_norm(&h.matvec(w).unwrap()).powi(2)).sum::<f64>()
            };
            assert!(gain(&p.w.column(0)) >= gain(&p.w.column(1)));
        }
    }

    #[test]
    fn common_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hs: Vec<_> = (0..4).map(|_| random(&mut rng, 3, 5)).collect();
        let k = c(-1.3, 0.7);
        let scaled: Vec<_> = hs.iter().map(|h| h.scale(k)).collect();
        let p = extract_precoder(&hs, 2).unwrap();
        let q = extract_precoder(&scaled, 2).unwrap();
        assert!(p.w.sub(&q.w).unwrap().fro_norm() < 1e-10);
        for (a, b) in p.eigenvalues.iter().zip(&q.eigenvalues) {
            assert!((b - a * k.norm_sqr()).abs() < 1e-10 * b.abs());
        }
    }

    #[test]
    fn dataset_counts_and_flat_channel() {
        let grid = OfdmGrid { n_subcarriers: 8, n_subbands: 2, ..OfdmGrid::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random(&mut rng, 2, 4);
        let ch = ChannelTensor {
            subcarriers: (1..=8).collect(),
            matrices: vec![h; 8],
            position: 5,
            domain: Domain::Dt,
        };
        let ps = precoder_dataset(&[ch.clone()], &grid, 2).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].w, ps[1].w);
        assert_eq!((ps[1].subband, ps[1].position), (1, 5));

        let g60 = OfdmGrid { n_subcarriers: 120, n_subbands: 60, ..OfdmGrid::default() };
        let ch60 = ChannelTensor { subcarriers: (1..=120).collect(), matrices: vec![ch.matrices[0].clone(); 120], ..ch };
        let ps = precoder_dataset(&[ch60.clone(), ch60], &g60, 2).unwrap();
        assert_eq!(ps.len(), 120);
        assert!(ps.iter().all(|p| p.w == ps[0].w));
    }

    #[test]
    fn errors() {
        assert!(extract_precoder(&[], 1).is_err());
        assert!(extract_precoder(&[CMatrix::identity(2)], 3).is_err());
        assert!(SystemConfig { n_streams: 9, ..SystemConfig::default() }.validate().is_err());
    }
}
