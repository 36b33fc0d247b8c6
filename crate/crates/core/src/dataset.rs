//! Corpora of channels and eigen-precoders: twin generation from a preset,
//! controlled perturbation into an RW-proxy, position-level splits and a
//! little-endian binary file format.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{cluster_paths_with_table, synth_at, ChannelTensor, ClusterConfig, Domain, OfdmGrid};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::{CMatrix, C64};
use crate::precoder::{tensor_precoders, Precoder, SystemConfig};
use crate::scene::{orientation_set, AntennaArray, Material, PatternSpec, Preset, Scene};
use crate::tracer::{trace_with, Path, TraceOptions};

/// Everything needed to regenerate the channels of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub preset: String,
    pub scene: Scene,
    pub bs: AntennaArray,
    /// UE array at the origin facing +x; rotated per record.
    pub ue: AntennaArray,
    pub max_order: usize,
    pub max_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusHeader {
    pub scene_name: String,
    pub domain: Domain,
    pub seed: u64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_streams: usize,
    pub grid: OfdmGrid,
    pub source: CorpusSource,
}

/// One UE placement. The stored channel keeps only the centre subcarrier of
/// each subband; precoders are computed from the full band.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub position: u32,
    pub orientation: u32,
    pub location: Vec3,
    pub channel: ChannelTensor,
    pub precoders: Vec<Precoder>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub position: u32,
    pub location: Vec3,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub records: Vec<Record>,
    pub failures: Vec<Failure>,
}

impl Corpus {
    pub fn precoders(&self) -> Vec<Precoder> {
        self.records.iter().flat_map(|r| r.precoders.iter().cloned()).collect()
    }

    pub fn n_precoders(&self) -> usize {
        self.records.iter().map(|r| r.precoders.len()).sum()
    }

    pub fn positions(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.position).collect()
    }

    pub fn system(&self) -> SystemConfig {
        SystemConfig { n_tx: self.header.n_tx, n_rx: self.header.n_rx, n_streams: self.header.n_streams, grid: self.header.grid }
    }

    /// Dims and subband counts of every record agree with the header.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        for r in &self.records {
            if r.channel.matrices.iter().any(|m| m.shape() != (h.n_rx, h.n_tx))
                || r.precoders.len() != h.grid.n_subbands
                || r.precoders.iter().any(|p| p.w.shape() != (h.n_tx, h.n_streams))
            {
                return Err(Error::DimensionMismatch(format!("record at position {} disagrees with header", r.position)));
            }
        }
        Ok(())
    }

    /// Failure manifest: one CSV row per position that could not be generated.
    pub fn write_failures<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# twinfeed failure manifest v1")?;
        writeln!(w, "position,x,y,z,reason")?;
        for f in &self.failures {
            let reason = f.reason.replace(['\n', ','], " ");
            writeln!(w, "{},{},{},{},{}", f.position, f.location.x, f.location.y, f.location.z, reason)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffuseSpec {
    pub count: usize,
    /// Total diffuse power relative to the specular channel energy.
    pub relative_power_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSpec {
    pub bs_pattern_swap: Option<PatternSpec>,
    pub ue_pattern_swap: Option<PatternSpec>,
    /// Each reflector's Γ is scaled by `1 + U(−j, j)` and clipped to `[0, 1]`.
    pub gamma_jitter: f64,
    pub diffuse: Option<DiffuseSpec>,
    pub estimation_noise_snr_db: Option<f64>,
    /// Fixed per-element BS phase offsets drawn from `U(−e, e)` radians,
    /// applied to every channel of the corpus (uncalibrated RF chains).
    pub bs_phase_error: f64,
}

impl PerturbSpec {
    /// Default RW-proxy: sharper BS patch, 15 % Γ jitter, 8 diffuse paths at
    /// −20 dB, and BS element phase offsets up to ±1 rad.
    pub fn rw_proxy() -> Self {
        Self {
            bs_pattern_swap: Some(PatternSpec::patch(2.0)),
            ue_pattern_swap: None,
            gamma_jitter: 0.15,
            diffuse: Some(DiffuseSpec { count: 8, relative_power_db: -20.0 }),
            estimation_noise_snr_db: None,
            bs_phase_error: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma_jitter) {
            return Err(Error::InvalidArgument(format!("gamma jitter {} outside [0, 1)", self.gamma_jitter)));
        }
        if let Some(d) = self.diffuse {
            if !(d.relative_power_db < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "diffuse power {} dB must be below the specular power",
                    d.relative_power_db
                )));
            }
        }
        if !(self.bs_phase_error.is_finite() && (0.0..=std::f64::consts::PI).contains(&self.bs_phase_error)) {
            return Err(Error::InvalidArgument(format!("BS phase error {} outside [0, π]", self.bs_phase_error)));
        }
        if let Some(snr) = self.estimation_noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::InvalidArgument("estimation SNR must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Builder knobs that do not affect the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub jobs: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { jobs: 1 }
    }
}

fn check_system(preset: &Preset, sys: &SystemConfig) -> Result<()> {
    sys.validate()?;
    if preset.bs.len() != sys.n_tx || preset.ue.len() != sys.n_rx {
        return Err(Error::DimensionMismatch(format!(
            "preset arrays {}x{} vs system {}x{}",
            preset.ue.len(),
            preset.bs.len(),
            sys.n_rx,
            sys.n_tx
        )));
    }
    Ok(())
}

/// Runs `f` over `0..n` on up to `jobs` threads, keeping index order.
fn par_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                s.spawn(move || (j * chunk..((j + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn place_ue(base: &AntennaArray, location: Vec3, orientation: u32) -> AntennaArray {
    let mut ue = base.reoriented(orientation_set()[orientation as usize]);
    ue.position = location;
    ue
}

/// Full-band synthesis, optional estimation noise, per-subband eigen-precoders.
fn realize(
    paths: &[Path],
    sys: &SystemConfig,
    bs: &AntennaArray,
    ue: &AntennaArray,
    noise: Option<(f64, u64)>,
    bs_offsets: Option<&[C64]>,
    position: u32,
    domain: Domain,
) -> Result<(ChannelTensor, Vec<Precoder>)> {
    let grid = &sys.grid;
    let all: Vec<u32> = (1..=grid.n_subcarriers as u32).collect();
    let mut ch = synth_at(paths, grid, bs, ue, &all)?;
    if let Some(c) = bs_offsets {
        for m in &mut ch.matrices {
            let cols = m.cols();
            for (i, z) in m.data_mut().iter_mut().enumerate() {
                *z *= c[i % cols];
            }
        }
    }
    ch.position = position;
    ch.domain = domain;
    let stored = ch.select(&grid.subband_centres())?;
    let estimate = match noise {
        Some((snr_db, seed)) => add_noise(&ch, snr_db, seed),
        None => ch,
    };
    let precoders = tensor_precoders(&estimate, grid, sys.n_streams)?;
    if precoders.iter().any(|p| !p.w.is_finite()) {
        return Err(Error::NonFinite(format!("precoder at position {position}")));
    }
    Ok((stored, precoders))
}

/// Complex Gaussian noise at `snr_db` below the mean per-entry channel power.
fn add_noise(ch: &ChannelTensor, snr_db: f64, seed: u64) -> ChannelTensor {
    let n_entries: usize = ch.matrices.iter().map(|m| m.data().len()).sum();
    let power: f64 = ch.matrices.iter().flat_map(|m| m.data()).map(|z| z.norm_sqr()).sum::<f64>() / n_entries as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ch.clone();
    for m in &mut out.matrices {
        for z in m.data_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += C64::new(sigma * re, sigma * im);
        }
    }
    out
}

fn draw_orientations(n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = orientation_set().len() as u32;
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

fn collect(
    header: CorpusHeader,
    outcomes: Vec<(u32, u32, Vec3, Result<(ChannelTensor, Vec<Precoder>)>)>,
) -> Corpus {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (position, orientation, location, r) in outcomes {
        match r {
            Ok((channel, precoders)) => records.push(Record { position, orientation, location, channel, precoders }),
            Err(e) => failures.push(Failure { position, location, reason: e.to_string() }),
        }
    }
    Corpus { header, records, failures }
}

fn trace_record(
    source: &CorpusSource,
    sys: &SystemConfig,
    location: Vec3,
    orientation: u32,
) -> Result<(Vec<Path>, AntennaArray)> {
    let ue = place_ue(&source.ue, location, orientation);
    let opts = TraceOptions { max_order: source.max_order, max_paths: source.max_paths };
    let ps = trace_with(&source.scene, source.bs.position, location, sys.grid.carrier_hz, opts)?;
    if ps.paths.is_empty() {
        return Err(Error::Empty("path set"));
    }
    Ok((ps.paths, ue))
}

/// Twin corpus: trace, synthesize and extract at every preset grid point,
/// with one seeded orientation per point.
pub fn build_corpus(preset: &Preset, name: &str, sys: &SystemConfig, seed: u64) -> Result<Corpus> {
    build_corpus_with(preset, name, sys, seed, BuildOptions::default())
}

pub fn build_corpus_with(preset: &Preset, name: &str, sys: &SystemConfig, seed: u64, opts: BuildOptions) -> Result<Corpus> {
    check_system(preset, sys)?;
    let source = CorpusSource {
        preset: name.into(),
        scene: preset.scene.clone(),
        bs: preset.bs.clone(),
        ue: preset.ue.clone(),
        max_order: preset.max_order,
        max_paths: crate::tracer::DEFAULT_MAX_PATHS,
        cluster: None,
        perturbation: None,
        parent_seed: None,
    };
    let orientations = draw_orientations(preset.ue_positions.len(), seed);
    let outcomes = par_map(preset.ue_positions.len(), opts.jobs, |i| {
        let loc = preset.ue_positions[i];
        let r = trace_record(&source, sys, loc, orientations[i])
            .and_then(|(paths, ue)| realize(&paths, sys, &source.bs, &ue, None, None, i as u32, Domain::Dt));
        (i as u32, orientations[i], loc, r)
    });
    let header = CorpusHeader {
        scene_name: preset.scene.name.clone(),
        domain: Domain::Dt,
        seed,
        n_tx: sys.n_tx,
        n_rx: sys.n_rx,
        n_streams: sys.n_streams,
        grid: sys.grid,
        source,
    };
    Ok(collect(header, outcomes))
}

/// Non-site-specific baseline: one seeded cluster channel per preset grid point.
pub fn build_cluster_corpus(
    preset: &Preset,
    name: &str,
    sys: &SystemConfig,
    cfg: &ClusterConfig,
    seed: u64,
    opts: BuildOptions,
) -> Result<Corpus> {
    check_system(preset, sys)?;
    let source = CorpusSource {
        preset: name.into(),
        scene: preset.scene.clone(),
        bs: preset.bs.clone(),
        ue: preset.ue.clone(),
        max_order: 0,
        max_paths: 0,
        cluster: Some(*cfg),
        perturbation: None,
        parent_seed: None,
    };
    let orientations = draw_orientations(preset.ue_positions.len(), seed);
    let outcomes = par_map(preset.ue_positions.len(), opts.jobs, |i| {
        let loc = preset.ue_positions[i];
        let ue = place_ue(&source.ue, loc, orientations[i]);
        let table_seed = if cfg.fixed_table { seed } else { seed ^ i as u64 };
        let r = cluster_paths_with_table(cfg, &source.bs, &ue, table_seed, seed ^ i as u64)
            .and_then(|paths| realize(&paths, sys, &source.bs, &ue, None, None, i as u32, Domain::Cluster));
        (i as u32, orientations[i], loc, r)
    });
    let header = CorpusHeader {
        scene_name: format!("{}-cluster", preset.scene.name),
        domain: Domain::Cluster,
        seed,
        n_tx: sys.n_tx,
        n_rx: sys.n_rx,
        n_streams: sys.n_streams,
        grid: sys.grid,
        source,
    };
    Ok(collect(header, outcomes))
}

fn jitter_scene(scene: &Scene, jitter: f64, rng: &mut impl Rng) -> Scene {
    if jitter == 0.0 {
        return scene.clone();
    }
    let mut out = scene.clone();
    out.materials.clear();
    for (i, r) in out.reflectors.iter_mut().enumerate() {
        let base = &scene.materials[r.material];
        let g = (base.gamma * (1.0 + rng.random_range(-jitter..=jitter))).clamp(0.0, 1.0);
        out.materials.push(Material { name: format!("{}#{i}", base.name), gamma: g });
        r.material = i;
    }
    out
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let t: f64 = rng.random_range(-PI..PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * t.cos(), r * t.sin(), z)
}

/// Seeded diffuse paths scaled to `relative_power_db` of the specular energy.
pub fn diffuse_paths(
    specular: &[Path],
    spec: &DiffuseSpec,
    bs: &AntennaArray,
    ue: &AntennaArray,
    symbol_s: f64,
    seed: u64,
) -> Vec<Path> {
    if spec.count == 0 || specular.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (bs.len() * ue.len()) as f64;
    let energy = |ps: &[Path]| -> f64 {
        ps.iter().map(|p| p.gain.norm_sqr() * (bs.gain(p.aod) * ue.gain(p.aoa)).powi(2) * n).sum()
    };
    let first = specular.iter().map(|p| p.delay_s).fold(f64::INFINITY, f64::min);
    let spread = Exp::new(1.0 / 50e-9).unwrap();
    let mut out: Vec<Path> = (0..spec.count)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let delay = (first + spread.sample(&mut rng)).min(symbol_s);
            Path {
                gain: Complex64::new(re, im),
                delay_s: delay,
                aod: random_direction(&mut rng),
                aoa: random_direction(&mut rng),
                order: 0,
            }
        })
        .collect();
    let (target, have) = (energy(specular) * 10f64.powf(spec.relative_power_db / 10.0), energy(&out));
    let s = if have > 0.0 { (target / have).sqrt() } else { 0.0 };
    for p in &mut out {
        p.gain *= s;
    }
    out
}

/// Effective (pattern-weighted) paths of one record, strongest first, under
/// the corpus source and its perturbation. Diffuse paths are included.
pub fn record_paths(c: &Corpus, record: usize) -> Result<Vec<(Path, f64)>> {
    let src = &c.header.source;
    if src.cluster.is_some() {
        return Err(Error::InvalidArgument("cluster corpora have no traced paths".into()));
    }
    let r = c.records.get(record).ok_or(Error::InvalidArgument(format!("no record {record}")))?;
    let sys = c.system();
    let (mut paths, ue) = trace_record(src, &sys, r.location, r.orientation)?;
    if let Some(d) = src.perturbation.and_then(|p| p.diffuse) {
        let seed = c.header.seed ^ r.position as u64;
        paths.extend(diffuse_paths(&paths, &d, &src.bs, &ue, sys.grid.symbol_duration(), seed));
    }
    let mut weighted: Vec<(Path, f64)> = paths
        .into_iter()
        .map(|p| {
            let w = p.gain.norm() * src.bs.gain(p.aod) * ue.gain(p.aoa);
            (p, w)
        })
        .collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(weighted)
}

/// RW-proxy corpus: the twin re-generated under a perturbed environment and
/// perturbed antennas. The input corpus is not modified.
pub fn perturb_corpus(c: &Corpus, p: &PerturbSpec, seed: u64) -> Result<Corpus> {
    perturb_corpus_with(c, p, seed, BuildOptions::default())
}

pub fn perturb_corpus_with(c: &Corpus, p: &PerturbSpec, seed: u64, opts: BuildOptions) -> Result<Corpus> {
    p.validate()?;
    if c.header.domain != Domain::Dt {
        return Err(Error::InvalidArgument(format!("perturbation needs a DT corpus, got {}", c.header.domain.as_str())));
    }
    let sys = c.system();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = c.header.source.clone();
    source.scene = jitter_scene(&source.scene, p.gamma_jitter, &mut rng);
    if let Some(pat) = p.bs_pattern_swap {
        source.bs.pattern = pat;
    }
    if let Some(pat) = p.ue_pattern_swap {
        source.ue.pattern = pat;
    }
    let offsets: Option<Vec<C64>> = (p.bs_phase_error > 0.0).then(|| {
        (0..sys.n_tx).map(|_| C64::from_polar(1.0, rng.random_range(-p.bs_phase_error..=p.bs_phase_error))).collect()
    });
    source.perturbation = Some(*p);
    source.parent_seed = Some(c.header.seed);

    let symbol = sys.grid.symbol_duration();
    let outcomes = par_map(c.records.len(), opts.jobs, |i| {
        let r = &c.records[i];
        let sub_seed = seed ^ r.position as u64;
        let out = trace_record(&source, &sys, r.location, r.orientation).and_then(|(mut paths, ue)| {
            if let Some(d) = &p.diffuse {
                let extra = diffuse_paths(&paths, d, &source.bs, &ue, symbol, sub_seed);
                paths.extend(extra);
            }
            let noise = p.estimation_noise_snr_db.map(|snr| (snr, sub_seed.rotate_left(32)));
            realize(&paths, &sys, &source.bs, &ue, noise, offsets.as_deref(), r.position, Domain::RwProxy)
        });
        (r.position, r.orientation, r.location, out)
    });
    let header = CorpusHeader { domain: Domain::RwProxy, seed, source, ..c.header.clone() };
    let mut out = collect(header, outcomes);
    out.failures.extend(c.failures.iter().cloned());
    out.failures.sort_by_key(|f| f.position);
    Ok(out)
}

/// Position-level split: `⌊fraction · n⌋` randomly chosen positions go to the
/// online-learning side with all their subbands.
pub fn ol_split(c: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = c.records.len();
    let n_ol = (fraction * n as f64).floor() as usize;
    if n_ol == 0 || n_ol == n {
        return Err(Error::InvalidArgument(format!("fraction {fraction} of {n} positions leaves one side empty")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = vec![false; n];
    for &i in &idx[..n_ol] {
        chosen[i] = true;
    }
    let side = |want: bool| Corpus {
        header: c.header.clone(),
        records: c.records.iter().zip(&chosen).filter(|(_, &s)| s == want).map(|(r, _)| r.clone()).collect(),
        failures: Vec::new(),
    };
    Ok((side(true), side(false)))
}

pub const CORPUS_MAGIC: &[u8; 6] = b"CSIDT1";
pub const CORPUS_VERSION: u16 = 1;

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn c64(&mut self, z: C64) {
        self.f64(z.re);
        self.f64(z.im);
    }
}

pub fn corpus_bytes(c: &Corpus) -> Result<Vec<u8>> {
    let h = &c.header;
    let source = toml::to_string(&h.source).map_err(|e| Error::Parse(e.to_string()))?;
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(CORPUS_MAGIC);
    o.0.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    o.str(&h.scene_name);
    o.u8(h.domain.code());
    o.u64(h.seed);
    o.u32(h.n_tx);
    o.u32(h.n_rx);
    o.u32(h.n_streams);
    o.u32(h.grid.n_subcarriers);
    o.f64(h.grid.subcarrier_spacing_hz);
    o.f64(h.grid.carrier_hz);
    o.u32(h.grid.n_subbands);
    o.str(&source);
    o.u32(c.records.len());
    o.u32(c.failures.len());
    for r in &c.records {
        o.u32(r.position as usize);
        o.u32(r.orientation as usize);
        for v in [r.location.x, r.location.y, r.location.z] {
            o.f64(v);
        }
        o.u32(r.channel.subcarriers.len());
        for (&n, m) in r.channel.subcarriers.iter().zip(&r.channel.matrices) {
            o.u32(n as usize);
            m.data().iter().for_each(|&z| o.c64(z));
        }
        o.u32(r.precoders.len());
        for p in &r.precoders {
            o.u32(p.subband as usize);
            o.u32(p.eigenvalues.len());
            p.eigenvalues.iter().for_each(|&v| o.f64(v));
            p.w.data().iter().for_each(|&z| o.c64(z));
        }
    }
    for f in &c.failures {
        o.u32(f.position as usize);
        for v in [f.location.x, f.location.y, f.location.z] {
            o.f64(v);
        }
        o.str(&f.reason);
    }
    Ok(o.0)
}

struct In<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(Error::Truncated("corpus"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        // every element occupies at least `elem` bytes
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::Truncated("corpus"));
        }
        Ok(n)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Malformed(e.to_string()))
    }
    fn c64(&mut self) -> Result<C64> {
        Ok(C64::new(self.f64()?, self.f64()?))
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn corpus_from_bytes(buf: &[u8]) -> Result<Corpus> {
    let mut r = In { buf, pos: 0 };
    let expected = String::from_utf8_lossy(CORPUS_MAGIC).into_owned();
    let magic = r.take(CORPUS_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: expected.clone(),
        found: String::from_utf8_lossy(buf).into_owned(),
    })?;
    if magic != CORPUS_MAGIC {
        return Err(Error::BadMagic { expected, found: String::from_utf8_lossy(magic).into_owned() });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != CORPUS_VERSION {
        return Err(Error::Version { found: version, expected: CORPUS_VERSION });
    }
    let scene_name = r.str()?;
    let code = r.u8()?;
    let domain = Domain::from_code(code).ok_or(Error::Malformed(format!("domain code {code}")))?;
    let seed = r.u64()?;
    let (n_tx, n_rx, n_streams) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let grid = OfdmGrid {
        n_subcarriers: r.u32()? as usize,
        subcarrier_spacing_hz: r.f64()?,
        carrier_hz: r.f64()?,
        n_subbands: r.u32()? as usize,
    };
    let source: CorpusSource = toml::from_str(&r.str()?).map_err(|e| Error::Parse(e.to_string()))?;
    let header = CorpusHeader { scene_name, domain, seed, n_tx, n_rx, n_streams, grid, source };
    let n_records = r.len(4)?;
    let n_failures = r.len(4)?;
    let mut records = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let position = r.u32()?;
        let orientation = r.u32()?;
        let location = r.vec3()?;
        let n_sc = r.len(4)?;
        let mut subcarriers = Vec::with_capacity(n_sc);
        let mut matrices = Vec::with_capacity(n_sc);
        for _ in 0..n_sc {
            subcarriers.push(r.u32()?);
            let data = (0..n_rx * n_tx).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
            matrices.push(CMatrix::from_vec(n_rx, n_tx, data)?);
        }
        let channel = ChannelTensor { subcarriers, matrices, position, domain };
        let n_p = r.len(4)?;
        let mut precoders = Vec::with_capacity(n_p);
        for _ in 0..n_p {
            let subband = r.u32()?;
            let n_ev = r.len(8)?;
            let eigenvalues = (0..n_ev).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let data = (0..n_tx * n_streams).map(|_| r.c64()).collect::<Result<Vec<_>>>()?;
            let w = CMatrix::from_vec(n_tx, n_streams, data)?;
            precoders.push(Precoder { w, eigenvalues, subband, position, domain });
        }
        records.push(Record { position, orientation, location, channel, precoders });
    }
    let mut failures = Vec::with_capacity(n_failures);
    for _ in 0..n_failures {
        let position = r.u32()?;
        let location = r.vec3()?;
        failures.push(Failure { position, location, reason: r.str()? });
    }
    if r.pos != buf.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let c = Corpus { header, records, failures };
    c.validate()?;
    Ok(c)
}

pub fn save_corpus(c: &Corpus, path: &FsPath) -> Result<()> {
    let bytes = corpus_bytes(c)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_corpus(path: &FsPath) -> Result<Corpus> {
    corpus_from_bytes(&fs::read(path)?)
}
