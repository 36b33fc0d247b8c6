//! generate → train → finetune → eval. Every step reads and writes files in
//! the run directory so steps can be rerun independently.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twinfeed::dataset::{
    build_cluster_corpus, build_corpus_with, load_corpus, ol_split, perturb_corpus_with, save_corpus, BuildOptions,
    Corpus, PerturbSpec,
};
use twinfeed::linalg::CMatrix;
use twinfeed::metrics::{rate_proxy, rho_per_stream};
use twinfeed::neural::{self, load_checkpoint, save_checkpoint, ModelParams, TrainReport};
use twinfeed::precoder::Precoder;
use twinfeed::scene::preset_with;
use twinfeed::type2::{decode_type2, encode_group, encode_type2, overhead_bits, Type2Config, REFERENCE_BITS};

use crate::{CliError, Context, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MANIFEST_VERSION: u32 = 1;
pub const TABLE2_FILE: &str = "eval/table2.csv";
pub const TABLE3_FILE: &str = "eval/table3.csv";
pub const TABLE2_HEADER: &str = "# twinfeed table2 v1";
pub const TABLE3_HEADER: &str = "# twinfeed table3 v1";

/// Training environments of Table II.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Env {
    Indoor,
    Outdoor,
    Cluster,
}

impl Env {
    pub const ALL: [Env; 3] = [Env::Indoor, Env::Outdoor, Env::Cluster];

    pub fn name(self) -> &'static str {
        match self {
            Env::Indoor => "indoor_dt",
            Env::Outdoor => "outdoor_dt",
            Env::Cluster => "cluster",
        }
    }

    pub fn corpus(self) -> String {
        format!("corpora/{}.csidt", self.name())
    }

    pub fn checkpoint(self) -> String {
        format!("models/{}.ckpt", self.name())
    }

    pub fn ol_checkpoint(self) -> String {
        format!("models/{}_ol.ckpt", self.name())
    }
}

pub const RW_CORPUS: &str = "corpora/rw_proxy.csidt";
pub const BS_OL_CHECKPOINT: &str = "models/indoor_dt_bs_ol.ckpt";

/// Per-purpose seeds derived from the experiment seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Outdoor = 1,
    Cluster,
    RwProxy,
    DtSplit,
    OlSplit,
    UeSwap,
    BsSwap,
    BsSplit,
}

pub fn sub_seed(seed: u64, s: Stream) -> u64 {
    seed ^ (s as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::File::create(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Fails with exit code 3, naming every missing file.
pub fn require(out: &Path, files: &[&str]) -> Result<()> {
    let missing: Vec<String> = files.iter().filter(|f| !out.join(f).is_file()).map(|f| f.to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingInput(format!("{} lacks {}", out.display(), missing.join(", "))))
    }
}

pub fn load(ctx: &Context, file: &str) -> Result<Corpus> {
    require(&ctx.out, &[file])?;
    let c = load_corpus(&ctx.out.join(file))?;
    let sys = &ctx.cfg.system;
    if c.header.n_tx != sys.n_tx || c.header.n_rx != sys.n_rx || c.header.n_streams != sys.n_streams {
        return Err(CliError::Config(format!(
            "{file} holds {}x{} channels with {} streams; config says {}x{} with {}",
            c.header.n_rx, c.header.n_tx, c.header.n_streams, sys.n_rx, sys.n_tx, sys.n_streams
        )));
    }
    Ok(c)
}

pub fn load_model(ctx: &Context, file: &str) -> Result<ModelParams> {
    require(&ctx.out, &[file])?;
    Ok(load_checkpoint(&ctx.out.join(file), Some(&ctx.cfg.neural.topology))?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub corpus: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub domain: String,
    pub scene: String,
    pub seed: u64,
    pub records: usize,
    pub failures: usize,
    pub precoders: usize,
}

pub fn generate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let seed = cfg.seed;
    let opts = BuildOptions { jobs: ctx.jobs };
    fs::create_dir_all(&ctx.out).map_err(io_err(&ctx.out))?;
    let stored = crate::ExperimentConfig { out: None, ..cfg.clone() };
    write_text(&ctx.out.join(CONFIG_FILE), &stored.to_toml())?;

    let indoor = preset_with(cfg.indoor_preset()?, &cfg.scene.options)?;
    let outdoor = preset_with(cfg.outdoor_preset()?, &cfg.scene.options)?;
    ctx.log(format!("tracing {} ({} positions)", cfg.scene.indoor, indoor.ue_positions.len()));
    let dt = build_corpus_with(&indoor, &cfg.scene.indoor, &cfg.system, seed, opts)?;
    ctx.log("perturbing the indoor twin into the RW-proxy");
    let rw = perturb_corpus_with(&dt, &cfg.perturbation, sub_seed(seed, Stream::RwProxy), opts)?;
    ctx.log(format!("tracing {} ({} positions)", cfg.scene.outdoor, outdoor.ue_positions.len()));
    let out = build_corpus_with(&outdoor, &cfg.scene.outdoor, &cfg.system, sub_seed(seed, Stream::Outdoor), opts)?;
    ctx.log("drawing the cluster baseline");
    let cl = build_cluster_corpus(
        &indoor,
        &cfg.scene.indoor,
        &cfg.system,
        &cfg.cluster,
        sub_seed(seed, Stream::Cluster),
        opts,
    )?;

    let mut manifest = Manifest { version: MANIFEST_VERSION, seed, corpus: Vec::new() };
    for (name, file, c) in [
        (Env::Indoor.name(), Env::Indoor.corpus(), &dt),
        ("rw_proxy", RW_CORPUS.to_string(), &rw),
        (Env::Outdoor.name(), Env::Outdoor.corpus(), &out),
        (Env::Cluster.name(), Env::Cluster.corpus(), &cl),
    ] {
        if c.records.is_empty() {
            return Err(CliError::Numerical(format!("{name}: every position failed")));
        }
        let path = ctx.out.join(&file);
        create(&path)?;
        save_corpus(c, &path)?;
        let fpath = path.with_extension("failures.csv");
        c.write_failures(create(&fpath)?)?;
        manifest.corpus.push(ManifestEntry {
            name: name.into(),
            file,
            domain: c.header.domain.as_str().into(),
            scene: c.header.scene_name.clone(),
            seed: c.header.seed,
            records: c.records.len(),
            failures: c.failures.len(),
            precoders: c.n_precoders(),
        });
        ctx.log(format!("  {name}: {} records, {} failures", c.records.len(), c.failures.len()));
    }
    let text = toml::to_string(&manifest).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_text(&ctx.out.join(MANIFEST_FILE), &format!("# twinfeed manifest v{MANIFEST_VERSION}\n{text}"))
}

/// Indoor positions held out of indoor training, and the rest.
pub fn dt_split(ctx: &Context, dt: &Corpus) -> Result<(Corpus, Corpus)> {
    Ok(ol_split(dt, ctx.cfg.scene.dt_test_fraction, sub_seed(ctx.cfg.seed, Stream::DtSplit))?)
}

/// RW-proxy positions available for online learning, and the evaluation rest.
pub fn rw_split(ctx: &Context, rw: &Corpus) -> Result<(Corpus, Corpus)> {
    Ok(ol_split(rw, ctx.cfg.online.fraction, sub_seed(ctx.cfg.seed, Stream::OlSplit))?)
}

pub fn ue_swap_corpus(ctx: &Context, dt: &Corpus) -> Result<Corpus> {
    let p = PerturbSpec { ue_pattern_swap: Some(ctx.cfg.antenna.ue_swap), ..PerturbSpec::default() };
    Ok(perturb_corpus_with(dt, &p, sub_seed(ctx.cfg.seed, Stream::UeSwap), BuildOptions { jobs: ctx.jobs })?)
}

/// BS-pattern-swapped twin split into its online-learning share and the rest.
pub fn bs_swap_split(ctx: &Context, dt: &Corpus) -> Result<(Corpus, Corpus)> {
    let p = PerturbSpec { bs_pattern_swap: Some(ctx.cfg.antenna.bs_swap), ..PerturbSpec::default() };
    let c = perturb_corpus_with(dt, &p, sub_seed(ctx.cfg.seed, Stream::BsSwap), BuildOptions { jobs: ctx.jobs })?;
    Ok(ol_split(&c, ctx.cfg.antenna.ol_fraction, sub_seed(ctx.cfg.seed, Stream::BsSplit))?)
}

fn numerical(e: twinfeed::Error) -> CliError {
    match e {
        twinfeed::Error::Diverged { .. } | twinfeed::Error::NonFinite(_) => CliError::Numerical(e.to_string()),
        other => other.into(),
    }
}

fn write_report(path: &Path, r: &TrainReport) -> Result<()> {
    let mut text = String::from("# twinfeed training v1\nepoch,train_median,validation\n");
    text.push_str(&format!("0,{:.9},{}\n", r.initial_loss, fmt_opt(r.epoch_validation.first().copied())));
    for (i, m) in r.epoch_median.iter().enumerate() {
        text.push_str(&format!("{},{m:.9},{}\n", i + 1, fmt_opt(r.epoch_validation.get(i + 1).copied())));
    }
    write_text(path, &text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.9}")).unwrap_or_default()
}

pub fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    for env in Env::ALL {
        let corpus = load(ctx, &env.corpus())?;
        let data = match env {
            Env::Indoor => dt_split(ctx, &corpus)?.1,
            _ => corpus,
        };
        ctx.log(format!("training on {} ({} precoders)", env.name(), data.n_precoders()));
        let init = ModelParams::init(&cfg.neural.topology, cfg.neural.quantizer, cfg.seed)?;
        let tc = neural::TrainConfig { seed: cfg.seed, ..cfg.training.clone() };
        let (model, report) = neural::train(&init, &data.precoders(), &tc).map_err(numerical)?;
        ctx.log(format!("  best epoch {}", report.best_epoch));
        let path = ctx.out.join(env.checkpoint());
        create(&path)?;
        save_checkpoint(&model, &path)?;
        write_report(&path.with_extension("train.csv"), &report)?;
    }
    Ok(())
}

pub fn finetune(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let files: Vec<String> = Env::ALL.iter().map(|e| e.checkpoint()).collect();
    require(&ctx.out, &files.iter().map(String::as_str).chain([RW_CORPUS, &Env::Indoor.corpus()]).collect::<Vec<_>>())?;
    let rw = load(ctx, RW_CORPUS)?;
    let (rw_ol, _) = rw_split(ctx, &rw)?;
    let tc = cfg.online.train_config(&cfg.training, cfg.seed);
    let ol = rw_ol.precoders();
    for env in Env::ALL {
        let model = load_model(ctx, &env.checkpoint())?;
        ctx.log(format!("online learning for {} on {} RW-proxy precoders", env.name(), ol.len()));
        let (tuned, _) = neural::finetune_decoder(&model, &ol, &tc).map_err(numerical)?;
        save_checkpoint(&tuned, &ctx.out.join(env.ol_checkpoint()))?;
    }

    let dt = load(ctx, &Env::Indoor.corpus())?;
    let (bs_ol, _) = bs_swap_split(ctx, &dt)?;
    let model = load_model(ctx, &Env::Indoor.checkpoint())?;
    ctx.log(format!("online learning after the BS pattern swap on {} precoders", bs_ol.n_precoders()));
    let (tuned, _) = neural::finetune_decoder(&model, &bs_ol.precoders(), &tc).map_err(numerical)?;
    save_checkpoint(&tuned, &ctx.out.join(BS_OL_CHECKPOINT))?;
    Ok(())
}

/// Mean ρ and its per-stream means.
pub fn rho_stats(truth: &[Precoder], recon: &[CMatrix]) -> Result<(f64, Vec<f64>)> {
    if truth.is_empty() || truth.len() != recon.len() {
        return Err(CliError::Numerical(format!("{} reconstructions for {} precoders", recon.len(), truth.len())));
    }
    let mut per = vec![0.0; truth[0].n_streams()];
    for (p, r) in truth.iter().zip(recon) {
        for (acc, v) in per.iter_mut().zip(rho_per_stream(&p.w, r)?) {
            *acc += v;
        }
    }
    per.iter_mut().for_each(|v| *v /= truth.len() as f64);
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Mean rate proxy over the records, with reconstructions in corpus order.
/// `snr_db` is the mean receive SNR per antenna pair: each record's channel
/// is referenced to its own mean entry power, so path loss drops out.
pub fn mean_rate(c: &Corpus, recon: &[CMatrix], snr_db: f64) -> Result<f64> {
    let grid = c.header.grid;
    let k = grid.n_subbands;
    if recon.len() != c.records.len() * k {
        return Err(CliError::Numerical(format!("{} reconstructions for {} records", recon.len(), c.records.len())));
    }
    let snr = 10f64.powf(snr_db / 10.0);
    let mut total = 0.0;
    for (r, ws) in c.records.iter().zip(recon.chunks(k)) {
        let entries: usize = r.channel.matrices.iter().map(|m| m.data().len()).sum();
        let power = r.channel.matrices.iter().map(|m| m.fro_norm().powi(2)).sum::<f64>() / entries as f64;
        if !(power > 0.0) {
            return Err(CliError::Numerical(format!("position {} has a zero channel", r.position)));
        }
        total += rate_proxy(&r.channel, &grid, ws, snr / power)?;
    }
    Ok(total / c.records.len() as f64)
}

pub fn type2_reconstruct(c: &Corpus, t2: &Type2Config) -> Result<Vec<CMatrix>> {
    let mut out = Vec::with_capacity(c.n_precoders());
    for r in &c.records {
        let codes = if t2.wideband {
            encode_group(&r.precoders, t2)?
        } else {
            r.precoders.iter().map(|p| encode_type2(p, t2)).collect::<twinfeed::Result<_>>()?
        };
        for code in &codes {
            out.push(decode_type2(code, t2)?);
        }
    }
    Ok(out)
}

fn neural_reconstruct(m: &ModelParams, c: &Corpus) -> Result<Vec<CMatrix>> {
    neural::reconstruct(m, &c.precoders()).map_err(numerical)
}

/// One Table II row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub training_env: String,
    pub bits: Option<usize>,
    pub reference_bits: Option<usize>,
    pub rho_rw: f64,
    pub rho_dt: f64,
    pub rate_rw: f64,
    pub rate_dt: f64,
    pub rho_rw_streams: Vec<f64>,
}

pub const TABLE2_COLUMNS: &str =
    "method,training_env,bits,reference_bits,rho_rw,rho_dt,rate_rw,rate_dt,rho_rw_stream1,rho_rw_stream2";

impl Row {
    fn evaluate(
        method: &str,
        env: &str,
        bits: Option<usize>,
        reference_bits: Option<usize>,
        sets: (&Corpus, &Corpus),
        recon: impl Fn(&Corpus) -> Result<Vec<CMatrix>>,
        snr_db: f64,
    ) -> Result<Self> {
        let (rw, dt) = sets;
        let r_rw = recon(rw)?;
        let r_dt = recon(dt)?;
        let (rho_rw, rho_rw_streams) = rho_stats(&rw.precoders(), &r_rw)?;
        let (rho_dt, _) = rho_stats(&dt.precoders(), &r_dt)?;
        Ok(Self {
            method: method.into(),
            training_env: env.into(),
            bits,
            reference_bits,
            rho_rw,
            rho_dt,
            rate_rw: mean_rate(rw, &r_rw, snr_db)?,
            rate_dt: mean_rate(dt, &r_dt, snr_db)?,
            rho_rw_streams,
        })
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.method,
            self.training_env,
            opt(self.bits),
            opt(self.reference_bits),
            self.rho_rw,
            self.rho_dt,
            self.rate_rw,
            self.rate_dt
        );
        for v in &self.rho_rw_streams {
            s.push_str(&format!(",{v:.6}"));
        }
        s
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::MissingInput(format!("malformed table2 row `{line}`"));
        if f.len() < 8 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { s.parse().map(Some).map_err(|_| bad()) };
        Ok(Self {
            method: f[0].into(),
            training_env: f[1].into(),
            bits: opt(f[2])?,
            reference_bits: opt(f[3])?,
            rho_rw: num(f[4])?,
            rho_dt: num(f[5])?,
            rate_rw: num(f[6])?,
            rate_dt: num(f[7])?,
            rho_rw_streams: f[8..].iter().map(|s| num(s)).collect::<Result<_>>()?,
        })
    }
}

pub fn read_table2(path: &Path) -> Result<Vec<Row>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(TABLE2_HEADER) {
        return Err(CliError::MissingInput(format!("{}: not a {TABLE2_HEADER} file", path.display())));
    }
    lines.next();
    lines.map(Row::from_csv).collect()
}

/// Table III row: condition and mean ρ of the indoor model.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaRow {
    pub condition: String,
    pub rho: f64,
}

pub fn read_table3(path: &Path) -> Result<Vec<AntennaRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(TABLE3_HEADER) {
        return Err(CliError::MissingInput(format!("{}: not a {TABLE3_HEADER} file", path.display())));
    }
    lines.next();
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let rho = f.get(1).and_then(|s| s.parse().ok());
            match (f.first(), rho) {
                (Some(c), Some(rho)) => Ok(AntennaRow { condition: c.to_string(), rho }),
                _ => Err(CliError::MissingInput(format!("malformed table3 row `{l}`"))),
            }
        })
        .collect()
}

fn restrict(c: &Corpus, keep: &HashSet<u32>) -> Corpus {
    Corpus {
        header: c.header.clone(),
        records: c.records.iter().filter(|r| keep.contains(&r.position)).cloned().collect(),
        failures: Vec::new(),
    }
}

pub fn eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut needed: Vec<String> = vec![RW_CORPUS.into(), Env::Indoor.corpus()];
    for env in Env::ALL {
        needed.push(env.checkpoint());
        needed.push(env.ol_checkpoint());
    }
    needed.push(BS_OL_CHECKPOINT.into());
    require(&ctx.out, &needed.iter().map(String::as_str).collect::<Vec<_>>())?;

    let dt = load(ctx, &Env::Indoor.corpus())?;
    let rw = load(ctx, RW_CORPUS)?;
    let (dt_test, _) = dt_split(ctx, &dt)?;
    let (_, rw_eval) = rw_split(ctx, &rw)?;
    let sets = (&rw_eval, &dt_test);
    let snr = cfg.eval.snr_db;
    ctx.log(format!(
        "evaluating on {} RW-proxy and {} DT held-out positions",
        rw_eval.records.len(),
        dt_test.records.len()
    ));

    let mut rows = Vec::new();
    rows.push(Row::evaluate("perfect", "none", None, None, sets, |c| Ok(c.precoders().into_iter().map(|p| p.w).collect()), snr)?);
    for t2 in cfg.type2.configs(&cfg.system) {
        let reference = REFERENCE_BITS.iter().find(|r| r.0 == t2.n_beams).map(|r| r.1);
        let name = format!("type2_l{}", t2.n_beams);
        rows.push(Row::evaluate(&name, "none", Some(overhead_bits(&t2)), reference, sets, |c| type2_reconstruct(c, &t2), snr)?);
    }
    for (method, ol) in [("neural", false), ("neural_ol", true)] {
        for env in Env::ALL {
            let m = load_model(ctx, &if ol { env.ol_checkpoint() } else { env.checkpoint() })?;
            let bits = Some(m.codeword_bits());
            rows.push(Row::evaluate(method, env.name(), bits, None, sets, |c| neural_reconstruct(&m, c), snr)?);
        }
    }
    let mut text = format!("{TABLE2_HEADER}\n{TABLE2_COLUMNS}\n");
    for r in &rows {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    write_text(&ctx.out.join(TABLE2_FILE), &text)?;

    ctx.log("antenna pattern study");
    let ue = ue_swap_corpus(ctx, &dt)?;
    let (_, bs_eval) = bs_swap_split(ctx, &dt)?;
    let held_out: HashSet<u32> = dt_test.positions().into_iter().collect();
    let keep: HashSet<u32> = bs_eval.positions().into_iter().filter(|p| held_out.contains(p)).collect();
    let base = load_model(ctx, &Env::Indoor.checkpoint())?;
    let tuned = load_model(ctx, BS_OL_CHECKPOINT)?;
    let mut text = format!("{TABLE3_HEADER}\ncondition,rho,delta,positions\n");
    let mut original = None;
    for (cond, corpus, model) in [
        ("original", &dt, &base),
        ("change_ue", &ue, &base),
        ("change_bs", &bs_eval, &base),
        ("change_bs_ol", &bs_eval, &tuned),
    ] {
        let c = restrict(corpus, &keep);
        let (rho, _) = rho_stats(&c.precoders(), &neural_reconstruct(model, &c)?)?;
        let delta = rho - *original.get_or_insert(rho);
        text.push_str(&format!("{cond},{rho:.6},{delta:.6},{}\n", c.records.len()));
    }
    write_text(&ctx.out.join(TABLE3_FILE), &text)
}

pub fn run_dir_files(out: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(d) = stack.pop() {
        if let Ok(rd) = fs::read_dir(&d) {
            for e in rd.flatten() {
                let p = e.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push(p);
                }
            }
        }
    }
    files.sort();
    files
}
