//! metscan: command-line front end for the impurity anomaly pipeline.
//! One stage = one subcommand so every intermediate artifact (impurity
//! stores, score exports, cluster reports, overlays) can be inspected or
//! regenerated on its own; `run` chains them all.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metscan_core::area::rank_clusters;
use metscan_core::config::PipelineConfig;
use metscan_core::error::Error;
use metscan_core::ingest::Scan;
use metscan_core::pipeline::{
    cluster_stage, combined_stage, discover_scans, extract_stage, format_cluster_report,
    format_decile_summary, parse_cluster_export, parse_score_export,
    run_pipeline, shape_stage, spatial_stage, train_stage,
};
use metscan_core::render::{render_overlay, save_overlay};
use metscan_core::score::{Channel, ScoreSet};
use metscan_core::shape::model_io::{load_model, save_model};
use metscan_core::store::{load_impurities, persist_impurities};

#[derive(Parser)]
#[command(
    name = "metscan",
    about = "Quantifies spatial, shape and area anomaly of labeled impurities in metallographic scans",
    version
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key, e.g. --set price.c1=2.0 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Directory of tagged mask images.
    #[arg(long, global = true)]
    scan_dir: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// RNG seed (drives shape-model training).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Neighbour rank k of the spatial measure.
    #[arg(long, global = true)]
    k_spatial: Option<usize>,

    /// Number of initial market-clustering cores per scan.
    #[arg(long, global = true)]
    k_clusters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract impurities from mask images into text stores.
    Extract,
    /// Score the spatial channel from impurity stores.
    ScoreSpatial,
    /// Select training sets by circle difference and train the shape model.
    TrainShape,
    /// Score the shape channel with a trained model.
    ScoreShape {
        /// Model file; defaults to <out-dir>/model.msae.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Multiply spatial and shape channels into the combined channel.
    ScoreCombined,
    /// Run market clustering on the combined channel.
    Cluster,
    /// Rank clusters across scans and bucket them into deciles.
    Rank,
    /// Render score or cluster overlays.
    Render {
        /// spatial | shape | combined | clusters
        #[arg(long, default_value = "combined")]
        channel: String,
    },
    /// Full pipeline: extract, score, train, cluster, rank, render.
    Run,
}

#[derive(Parser)]
struct CliWithCommand {
    #[command(flatten)]
    common: Cli,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match CliWithCommand::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits; anything else is usage.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 1,
        Error::TrainingFailed(_) => 3,
        _ => 2,
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_toml_file(path)?,
        None => PipelineConfig::default(),
    };
    for spec in &cli.overrides {
        cfg.apply_override(spec)?;
    }
    if let Some(dir) = &cli.scan_dir {
        cfg.scan_dir = Some(dir.clone());
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
        cfg.apply_seed();
    }
    if let Some(k) = cli.k_spatial {
        cfg.spatial.k = k;
    }
    if let Some(k) = cli.k_clusters {
        cfg.cluster.k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path, Error> {
    cfg.out_dir
        .as_deref()
        .ok_or_else(|| Error::Config("--out-dir (or out_dir in the config) is required".into()))
}

fn scan_dir(cfg: &PipelineConfig) -> Result<&Path, Error> {
    cfg.scan_dir
        .as_deref()
        .ok_or_else(|| Error::Config("--scan-dir (or scan_dir in the config) is required".into()))
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path)
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads every impurity store under `<out>/stores`, sorted by file name.
fn load_scans(out: &Path) -> Result<Vec<Scan>, Error> {
    let dir = out.join("stores");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "imps"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no impurity stores in {} (run `metscan extract` first)",
            dir.display()
        )));
    }
    let mut scans = Vec::with_capacity(paths.len());
    for p in paths {
        let mut scan = load_impurities(&p)?;
        scan.ensure_shape_images();
        scans.push(scan);
    }
    Ok(scans)
}

/// Reads one exported channel for every scan, in scan order.
fn load_channel(out: &Path, scans: &[Scan], channel: Channel) -> Result<Vec<Vec<f64>>, Error> {
    let mut per_scan = Vec::with_capacity(scans.len());
    for scan in scans {
        let path = out
            .join("scores")
            .join(format!("{}.{}.scores", scan.scan_id, channel));
        let text = read_text(&path)?;
        let (scan_id, chan, values) = parse_score_export(&text, &path.display().to_string())?;
        if scan_id != scan.scan_id || chan != channel.to_string() {
            return Err(Error::InvalidInput(format!(
                "{}: export does not match scan {} channel {channel}",
                path.display(),
                scan.scan_id
            )));
        }
        if values.len() != scan.impurities.len() {
            return Err(Error::InvalidInput(format!(
                "{}: {} values for {} impurities",
                path.display(),
                values.len(),
                scan.impurities.len()
            )));
        }
        per_scan.push(values);
    }
    Ok(per_scan)
}

fn write_channel(
    out: &Path,
    scans: &[Scan],
    channel: Channel,
    values: &[Vec<f64>],
) -> Result<(), Error> {
    let dir = out.join("scores");
    ensure_dir(&dir)?;
    for (scan, vals) in scans.iter().zip(values) {
        let mut set = ScoreSet::new(scan.scan_id.clone());
        match channel {
            Channel::Spatial => set.spatial = Some(vals.clone()),
            Channel::Shape => set.shape = Some(vals.clone()),
            Channel::Combined => set.combined = Some(vals.clone()),
        }
        let text = set.export_channel(channel)?;
        write_text(&dir.join(format!("{}.{}.scores", scan.scan_id, channel)), &text)?;
    }
    Ok(())
}

fn execute(cli: CliWithCommand) -> Result<(), Error> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::Extract => {
            let out = out_dir(&cfg)?;
            let stores = out.join("stores");
            ensure_dir(&stores)?;
            let paths = discover_scans(scan_dir(&cfg)?)?;
            for path in &paths {
                let scan = extract_stage(&cfg, path).map_err(|e| e.in_stage("extract"))?;
                persist_impurities(&scan, stores.join(format!("{}.imps", scan.scan_id)))?;
                println!(
                    "extracted {}: {} impurities",
                    scan.scan_id,
                    scan.impurities.len()
                );
            }
            Ok(())
        }
        Command::ScoreSpatial => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let spatial = spatial_stage(&scans, &cfg.spatial, cfg.normalization)
                .map_err(|e| e.in_stage("spatial"))?;
            write_channel(out, &scans, Channel::Spatial, &spatial)?;
            println!("scored spatial channel for {} scans", scans.len());
            Ok(())
        }
        Command::TrainShape => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let (model, manifest) =
                train_stage(&scans, &cfg).map_err(|e| e.in_stage("shape"))?;
            write_text(&out.join("train_manifest.txt"), &manifest)?;
            let model_path = out.join("model.msae");
            save_model(&model, &model_path).map_err(|e| e.in_stage("shape"))?;
            println!("trained shape model -> {}", model_path.display());
            Ok(())
        }
        Command::ScoreShape { model } => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let model_path = model
                .or_else(|| cfg.model_path.clone())
                .unwrap_or_else(|| out.join("model.msae"));
            if !model_path.exists() {
                return Err(Error::InvalidInput(format!(
                    "shape: model unavailable at {}",
                    model_path.display()
                )));
            }
            let model = load_model(&model_path).map_err(|e| e.in_stage("shape"))?;
            let shape = shape_stage(&scans, &model, &cfg, cfg.normalization)
                .map_err(|e| e.in_stage("shape"))?;
            write_channel(out, &scans, Channel::Shape, &shape)?;
            println!("scored shape channel for {} scans", scans.len());
            Ok(())
        }
        Command::ScoreCombined => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let spatial = load_channel(out, &scans, Channel::Spatial)?;
            let shape = load_channel(out, &scans, Channel::Shape)?;
            let combined = combined_stage(&scans, &spatial, &shape, cfg.normalization)
                .map_err(|e| e.in_stage("combined"))?;
            write_channel(out, &scans, Channel::Combined, &combined)?;
            println!("scored combined channel for {} scans", scans.len());
            Ok(())
        }
        Command::Cluster => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let combined = load_channel(out, &scans, Channel::Combined)?;
            let dir = out.join("clusters");
            ensure_dir(&dir)?;
            use std::fmt::Write as _;
            for (scan, scores) in scans.iter().zip(&combined) {
                let clustered =
                    cluster_stage(scan, scores, &cfg).map_err(|e| e.in_stage("cluster"))?;
                let mut text = String::new();
                for (idx, (c, am)) in clustered.iter().enumerate() {
                    let cores: Vec<String> = c.cores.iter().map(|i| i.to_string()).collect();
                    let members: Vec<String> = c.members.iter().map(|i| i.to_string()).collect();
                    writeln!(
                        text,
                        "{} {} {} {} {:.6} {:.6}",
                        scan.scan_id,
                        idx,
                        cores.join(","),
                        members.join(","),
                        c.wallet,
                        am
                    )
                    .expect("write to string");
                }
                write_text(&dir.join(format!("{}.clusters.txt", scan.scan_id)), &text)?;
                println!("clustered {}: {} clusters", scan.scan_id, clustered.len());
            }
            Ok(())
        }
        Command::Rank => {
            let out = out_dir(&cfg)?;
            let dir = out.join("clusters");
            let entries = std::fs::read_dir(&dir).map_err(|e| Error::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(".clusters.txt"))
                .collect();
            paths.sort();
            let mut records = Vec::new();
            for p in &paths {
                records.extend(parse_cluster_export(
                    &read_text(p)?,
                    &p.display().to_string(),
                )?);
            }
            if records.is_empty() {
                return Err(Error::InvalidInput(
                    "no clusters to rank (run `metscan cluster` first)".into(),
                ));
            }
            let ranked = rank_clusters(records);
            write_text(&out.join("report.txt"), &format_cluster_report(&ranked))?;
            write_text(&out.join("deciles.txt"), &format_decile_summary(&ranked))?;
            println!("ranked {} clusters across {} scans", ranked.len(), paths.len());
            Ok(())
        }
        Command::Render { channel } => {
            let out = out_dir(&cfg)?;
            let scans = load_scans(out)?;
            let overlays = out.join("overlays");
            ensure_dir(&overlays)?;
            match channel.as_str() {
                "spatial" | "shape" | "combined" => {
                    let chan = match channel.as_str() {
                        "spatial" => Channel::Spatial,
                        "shape" => Channel::Shape,
                        _ => Channel::Combined,
                    };
                    let values = load_channel(out, &scans, chan)?;
                    for (scan, vals) in scans.iter().zip(&values) {
                        let opts: Vec<Option<f64>> = vals.iter().map(|&v| Some(v)).collect();
                        let img = render_overlay(scan, &opts, None)
                            .map_err(|e| e.in_stage("render"))?;
                        save_overlay(
                            &img,
                            overlays.join(format!("{}.{channel}.png", scan.scan_id)),
                        )?;
                    }
                }
                "clusters" => {
                    for scan in &scans {
                        let path = out
                            .join("clusters")
                            .join(format!("{}.clusters.txt", scan.scan_id));
                        let records =
                            parse_cluster_export(&read_text(&path)?, &path.display().to_string())?;
                        let mut ams: Vec<f64> = records.iter().map(|r| r.am).collect();
                        metscan_core::score::min_max_normalize(&mut ams);
                        let mut per_imp: Vec<Option<f64>> = vec![None; scan.impurities.len()];
                        for (r, am) in records.iter().zip(&ams) {
                            for &m in &r.cluster.members {
                                per_imp[m] = Some(*am);
                            }
                        }
                        let img = render_overlay(scan, &per_imp, None)
                            .map_err(|e| e.in_stage("render"))?;
                        save_overlay(
                            &img,
                            overlays.join(format!("{}.clusters.png", scan.scan_id)),
                        )?;
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown channel `{other}` (expected spatial, shape, combined or clusters)"
                    )));
                }
            }
            println!("rendered {channel} overlays for {} scans", scans.len());
            Ok(())
        }
        Command::Run => {
            let summary = run_pipeline(&cfg)?;
            println!(
                "pipeline complete: {} scans, {} clusters ranked",
                summary.scan_ids.len(),
                summary.ranked.len()
            );
            println!("report: {}", summary.report_path.display());
            Ok(())
        }
    }
}
