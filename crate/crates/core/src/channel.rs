//! Frequency-domain MIMO-OFDM channels from path parameters, subband grouping,
//! and a seeded stochastic cluster generator used as the non-site-specific
//! baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::CMatrix;
use crate::scene::AntennaArray;
use crate::tracer::{path_factors, Path, PathSet, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmGrid {
    pub n_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub n_subbands: usize,
}

impl Default for OfdmGrid {
    fn default() -> Self {
        Self { n_subcarriers: 1620, subcarrier_spacing_hz: 60e3, carrier_hz: 3.8e9, n_subbands: 60 }
    }
}

impl OfdmGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.n_subbands == 0 {
            return Err(Error::InvalidArgument("grid needs subcarriers and subbands".into()));
        }
        if self.n_subcarriers % self.n_subbands != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} subcarriers do not split into {} subbands",
                self.n_subcarriers, self.n_subbands
            )));
        }
        if !(self.subcarrier_spacing_hz > 0.0) || !(self.carrier_hz > 0.0) {
            return Err(Error::InvalidArgument("spacing and carrier must be positive".into()));
        }
        Ok(())
    }

    pub fn subband_size(&self) -> usize {
        self.n_subcarriers / self.n_subbands
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Useful OFDM symbol duration `1/Δf`.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Delay in samples of the OFDM bandwidth, `delay · N_c · Δf`.
    pub fn normalized_delay(&self, delay_s: f64) -> f64 {
        delay_s * self.n_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// 1-based subcarrier indices at the middle of each subband.
    pub fn subband_centres(&self) -> Vec<u32> {
        let k = self.subband_size();
        (0..self.n_subbands).map(|b| (b * k + k / 2 + 1) as u32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Dt,
    RwProxy,
    Cluster,
}

impl Domain {
    pub fn code(self) -> u8 {
        match self {
            Domain::Dt => 0,
            Domain::RwProxy => 1,
            Domain::Cluster => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Domain::Dt),
            1 => Some(Domain::RwProxy),
            2 => Some(Domain::Cluster),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Dt => "DT",
            Domain::RwProxy => "RW_PROXY",
            Domain::Cluster => "CLUSTER",
        }
    }
}

/// Channel matrices `H_n` (N_r × N_t) at the listed 1-based subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub subcarriers: Vec<u32>,
    pub matrices: Vec<CMatrix>,
    pub position: u32,
    pub domain: Domain,
}

impl ChannelTensor {
    pub fn dims(&self) -> (usize, usize) {
        self.matrices.first().map_or((0, 0), CMatrix::shape)
    }

    /// Keeps only the given 1-based subcarriers (must be present).
    pub fn select(&self, subcarriers: &[u32]) -> Result<Self> {
        let mut matrices = Vec::with_capacity(subcarriers.len());
        for &n in subcarriers {
            let idx = self
                .subcarriers
                .binary_search(&n)
                .map_err(|_| Error::InvalidArgument(format!("subcarrier {n} not in tensor")))?;
            matrices.push(self.matrices[idx].clone());
        }
        Ok(Self { subcarriers: subcarriers.to_vec(), matrices, position: self.position, domain: self.domain })
    }
}

/// Multipath synthesis `H_n = Σ_l G_l · exp(−j2π (n/N_c) τ̃_l)` on every subcarrier.
pub fn synth_channel(paths: &PathSet, grid: &OfdmGrid, bs: &AntennaArray, ue: &AntennaArray) -> Result<ChannelTensor> {
    let all: Vec<u32> = (1..=grid.n_subcarriers as u32).collect();
    synth_at(&paths.paths, grid, bs, ue, &all)
}

/// Synthesis restricted to a set of 1-based subcarrier indices.
pub fn synth_at(
    paths: &[Path],
    grid: &OfdmGrid,
    bs: &AntennaArray,
    ue: &AntennaArray,
    subcarriers: &[u32],
) -> Result<ChannelTensor> {
    grid.validate()?;
    if paths.is_empty() {
        return Err(Error::Empty("path set"));
    }
    if bs.is_empty() || ue.is_empty() {
        return Err(Error::Empty("antenna array"));
    }
    let symbol = grid.symbol_duration();
    for p in paths {
        if !(p.delay_s >= 0.0) || p.delay_s > symbol {
            return Err(Error::DelayTooLong { delay_s: p.delay_s, symbol_s: symbol });
        }
    }
    let (nr, nt) = (ue.len(), bs.len());
    let wavelength = grid.wavelength();
    let nc = grid.n_subcarriers as f64;

    // rank-1 outer products per path
    let terms: Vec<(CMatrix, f64)> = paths
        .iter()
        .map(|p| {
            let (a_rx, a_tx, scale) = path_factors(p, bs, ue, wavelength);
            let mut g = CMatrix::outer(&a_rx, &a_tx);
            for z in g.data_mut() {
                *z *= scale;
            }
            (g, grid.normalized_delay(p.delay_s))
        })
        .collect();

    let mut matrices = Vec::with_capacity(subcarriers.len());
    for &n in subcarriers {
        let mut h = CMatrix::zeros(nr, nt);
        for (g, tau) in &terms {
            let rot = Complex64::from_polar(1.0, -2.0 * PI * (n as f64 / nc) * tau);
            for (d, s) in h.data_mut().iter_mut().zip(g.data()) {
                *d += s * rot;
            }
        }
        matrices.push(h);
    }
    Ok(ChannelTensor { subcarriers: subcarriers.to_vec(), matrices, position: 0, domain: Domain::Dt })
}

/// Partitions a full-band tensor into consecutive equal subbands.
pub fn subband_channels<'a>(ch: &'a ChannelTensor, grid: &OfdmGrid) -> Result<Vec<(usize, &'a [CMatrix])>> {
    grid.validate()?;
    if ch.matrices.len() != grid.n_subcarriers {
        return Err(Error::DimensionMismatch(format!(
            "tensor has {} subcarriers, grid expects {}",
            ch.matrices.len(),
            grid.n_subcarriers
        )));
    }
    let k = grid.subband_size();
    Ok(ch.matrices.chunks(k).enumerate().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub n_clusters: usize,
    pub rays_per_cluster: usize,
    /// Mean of the exponential cluster delay distribution.
    pub delay_spread_s: f64,
    /// Laplacian scale of intra-cluster ray angles.
    pub angular_spread_deg: f64,
    /// Cluster power `∝ exp(−power_decay · τ_c / delay_spread)`.
    pub power_decay: f64,
    /// Half-width of the departure azimuth sector around the BS boresight.
    pub aod_sector_deg: f64,
    /// Half-width of the elevation range for both ends.
    pub elevation_range_deg: f64,
    /// One seeded cluster table (delays, powers, mean angles) shared by every
    /// drop of a corpus, as in a tabulated delay-line profile; only the rays
    /// and their phases are redrawn per drop.
    pub fixed_table: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            n_clusters: 8,
            rays_per_cluster: 10,
            delay_spread_s: 100e-9,
            angular_spread_deg: 10.0,
            power_decay: 1.0,
            aod_sector_deg: 60.0,
            elevation_range_deg: 15.0,
            fixed_table: true,
        }
    }
}

fn laplace(rng: &mut impl Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Seeded cluster path set, scaled so `Σ_l ‖G_l‖²_F = 1`.
pub fn cluster_paths(cfg: &ClusterConfig, bs: &AntennaArray, ue: &AntennaArray, seed: u64) -> Result<Vec<Path>> {
    cluster_paths_with_table(cfg, bs, ue, seed, seed)
}

/// Cluster-level parameters come from `table_seed`, ray offsets and phases
/// from `ray_seed`.
pub fn cluster_paths_with_table(
    cfg: &ClusterConfig,
    bs: &AntennaArray,
    ue: &AntennaArray,
    table_seed: u64,
    ray_seed: u64,
) -> Result<Vec<Path>> {
    if cfg.n_clusters == 0 || cfg.rays_per_cluster == 0 {
        return Err(Error::InvalidArgument("cluster model needs clusters and rays".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
    let mut rays = ChaCha8Rng::seed_from_u64(ray_seed ^ 0x5bd1_e995);
    let spread = cfg.angular_spread_deg.to_radians();
    let sector = cfg.aod_sector_deg.to_radians();
    let elev = cfg.elevation_range_deg.to_radians();
    let (bs_az, _) = bs.orientation.to_angles();

    let mut delays: Vec<f64> = (0..cfg.n_clusters)
        .map(|_| {
            if cfg.delay_spread_s > 0.0 {
                Exp::new(1.0 / cfg.delay_spread_s).unwrap().sample(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let first = delays.iter().cloned().fold(f64::INFINITY, f64::min);
    for d in &mut delays {
        *d -= first;
    }

    let mut paths = Vec::with_capacity(cfg.n_clusters * cfg.rays_per_cluster);
    for &tau in &delays {
        let power = if cfg.delay_spread_s > 0.0 { (-cfg.power_decay * tau / cfg.delay_spread_s).exp() } else { 1.0 };
        let aod_az = bs_az + rng.random_range(-1.0..=1.0) * sector;
        let aod_el = rng.random_range(-1.0..=1.0) * elev;
        let aoa_az = rng.random_range(-PI..PI);
        let aoa_el = rng.random_range(-1.0..=1.0) * elev;
        let amp = (power / cfg.rays_per_cluster as f64).sqrt();
        for _ in 0..cfg.rays_per_cluster {
            let d_az = laplace(&mut rays, spread);
            let d_el = laplace(&mut rays, spread);
            let a_az = laplace(&mut rays, spread);
            let a_el = laplace(&mut rays, spread);
            let phase = rays.random_range(0.0..2.0 * PI);
            paths.push(Path {
                gain: Complex64::from_polar(amp, phase),
                delay_s: tau,
                aod: Vec3::from_angles(aod_az + d_az, (aod_el + d_el).clamp(-PI / 2.0, PI / 2.0)),
                aoa: Vec3::from_angles(aoa_az + a_az, (aoa_el + a_el).clamp(-PI / 2.0, PI / 2.0)),
                order: 0,
            });
        }
    }

    // unit total matrix energy including element patterns
    let n = (bs.len() * ue.len()) as f64;
    let energy: f64 = paths
        .iter()
        .map(|p| p.gain.norm_sqr() * (bs.gain(p.aod) * ue.gain(p.aoa)).powi(2) * n)
        .sum();
    if energy > 0.0 {
        let s = 1.0 / energy.sqrt();
        for p in &mut paths {
            p.gain *= s;
        }
    }
    Ok(paths)
}

pub fn cluster_channel(
    cfg: &ClusterConfig,
    grid: &OfdmGrid,
    bs: &AntennaArray,
    ue: &AntennaArray,
    seed: u64,
) -> Result<ChannelTensor> {
    let paths = cluster_paths(cfg, bs, ue, seed)?;
    let all: Vec<u32> = (1..=grid.n_subcarriers as u32).collect();
    let mut ch = synth_at(&paths, grid, bs, ue, &all)?;
    ch.domain = Domain::Cluster;
    Ok(ch)
}
