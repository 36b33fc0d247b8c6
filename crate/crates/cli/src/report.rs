//! Summary tables from a completed run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use twinfeed::dataset::{record_paths, Corpus};
use twinfeed::metrics::{aoa_similarity, similarity_heatmap, write_matrix_csv, DirectionAngles};

use crate::pipeline::{
    load, read_table2, read_table3, require, run_dir_files, Env, Row, CONFIG_FILE, MANIFEST_FILE, RW_CORPUS,
    TABLE2_FILE, TABLE3_FILE,
};
use crate::{CliError, Context, Result};

pub const TABLE1_HEADER: &str = "# twinfeed table1 v1";
pub const SUMMARY2_HEADER: &str = "# twinfeed summary-table2 v1";
pub const SUMMARY3_HEADER: &str = "# twinfeed summary-table3 v1";
pub const HEATMAP_HEADER: &str = "# twinfeed heatmap v1";

pub fn report(ctx: &Context) -> Result<()> {
    if run_dir_files(&ctx.out).is_empty() {
        return Err(CliError::MissingInput(format!("run directory {} is empty or missing", ctx.out.display())));
    }
    let indoor = Env::Indoor.corpus();
    require(&ctx.out, &[CONFIG_FILE, MANIFEST_FILE, &indoor, RW_CORPUS, TABLE2_FILE, TABLE3_FILE])?;
    let dir = ctx.out.join("report");
    fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|source| CliError::Io { path: p, source })
    };

    let rows = read_table2(&ctx.out.join(TABLE2_FILE))?;
    let t2 = table2(&rows);
    write("table2.csv", &t2)?;
    let antenna = read_table3(&ctx.out.join(TABLE3_FILE))?;
    let mut t3 = format!("{SUMMARY3_HEADER}\ncondition,rho\n");
    for r in &antenna {
        writeln!(t3, "{},{:.2}", r.condition, r.rho).unwrap();
    }
    write("table3.csv", &t3)?;

    let dt = load(ctx, &indoor)?;
    let rw = load(ctx, RW_CORPUS)?;
    write("table1.csv", &table1(ctx, &dt, &rw)?)?;
    for (name, c) in [("heatmap_dt.csv", &dt), ("heatmap_rw.csv", &rw)] {
        write(name, &heatmap(ctx, c)?)?;
    }
    if !ctx.quiet {
        println!("{t2}\n{t3}");
    }
    Ok(())
}

/// Neural rows side by side before and after online learning, Type II rows
/// with our overhead next to the reference totals.
pub fn table2(rows: &[Row]) -> String {
    let mut text = format!("{SUMMARY2_HEADER}\nmethod,training_env,bits,reference_bits,rho_rw,rho_rw_ol,rho_dt,rate_rw\n");
    let post: BTreeMap<&str, f64> =
        rows.iter().filter(|r| r.method == "neural_ol").map(|r| (r.training_env.as_str(), r.rho_rw)).collect();
    for r in rows.iter().filter(|r| r.method != "neural_ol") {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let ol = post.get(r.training_env.as_str()).filter(|_| r.method == "neural");
        writeln!(
            text,
            "{},{},{},{},{:.2},{},{:.2},{:.3}",
            r.method,
            r.training_env,
            opt(r.bits),
            opt(r.reference_bits),
            r.rho_rw,
            ol.map(|v| format!("{v:.2}")).unwrap_or_default(),
            r.rho_dt,
            r.rate_rw
        )
        .unwrap();
    }
    text
}

/// AoA similarity of the two strongest DT paths against the two strongest
/// RW-proxy paths at the probe locations.
pub fn table1(ctx: &Context, dt: &Corpus, rw: &Corpus) -> Result<String> {
    let mut text = format!("{TABLE1_HEADER}\nprobe,x,y,position,path,eta\n");
    for (k, &(x, y)) in ctx.cfg.report.probes.iter().enumerate() {
        let i = dt
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| rw.records.iter().any(|q| q.position == r.position))
            .min_by(|a, b| {
                let d = |r: &twinfeed::dataset::Record| (r.location.x - x).powi(2) + (r.location.y - y).powi(2);
                d(a.1).total_cmp(&d(b.1))
            })
            .map(|(i, _)| i)
            .ok_or_else(|| CliError::MissingInput("no positions shared by the DT and RW-proxy corpora".into()))?;
        let position = dt.records[i].position;
        let j = rw.records.iter().position(|r| r.position == position).unwrap();
        let a = record_paths(dt, i)?;
        let b = record_paths(rw, j)?;
        for (rank, label) in ["primary", "secondary"].iter().enumerate() {
            let eta = match (a.get(rank), b.get(rank)) {
                (Some(p), Some(q)) => {
                    format!("{:.4}", aoa_similarity(DirectionAngles::from_vector(p.0.aoa), DirectionAngles::from_vector(q.0.aoa)))
                }
                _ => String::new(),
            };
            let loc = dt.records[i].location;
            writeln!(text, "P{},{:.2},{:.2},{position},{label},{eta}", k + 1, loc.x, loc.y).unwrap();
        }
    }
    Ok(text)
}

/// Pairwise ρ between positions at one subband, on an even stride of positions.
pub fn heatmap(ctx: &Context, c: &Corpus) -> Result<String> {
    let n = c.records.len();
    let cap = ctx.cfg.report.heatmap_positions.min(n);
    if cap < 2 {
        return Err(CliError::MissingInput(format!("{}: fewer than two positions", c.header.scene_name)));
    }
    let picks: Vec<usize> = (0..cap).map(|k| k * n / cap).collect();
    let sb = ctx.cfg.report.heatmap_subband;
    let ws: Vec<_> = picks.iter().map(|&i| &c.records[i].precoders[sb].w).collect();
    let labels: Vec<String> = picks.iter().map(|&i| c.records[i].position.to_string()).collect();
    let m = similarity_heatmap(&ws)?;
    let mut buf = format!("{HEATMAP_HEADER} domain={} subband={sb}\n", c.header.domain.as_str()).into_bytes();
    write_matrix_csv(&mut buf, &labels, &m)?;
    Ok(String::from_utf8(buf).expect("csv is ascii"))
}

