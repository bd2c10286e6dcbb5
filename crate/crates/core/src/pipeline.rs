//! End-to-end orchestration: extract -> spatial -> shape-train -> shape ->
//! combined -> cluster -> rank -> render. The CLI subcommands are thin
//! wrappers over the stage functions here; `run_pipeline` chains them all
//! and is deterministic for a fixed configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::area::{
    area_measure, market_clustering, rank_clusters, Cluster, ClusterRecord, RankedCluster,
};
use crate::config::{NormalizationSpan, PipelineConfig};
use crate::error::Error;
use crate::ingest::{extract_impurities, fill_holes, load_mask, Scan};
use crate::render::{render_overlay, save_overlay};
use crate::score::{min_max_normalize, Channel, ScoreSet};
use crate::shape::{
    circle_diff_score, select_training_sets, shape_scores, train_shape_model, Autoencoder,
};
use crate::spatial::{spatial_scores_raw, SpatialParams};
use crate::store::persist_impurities;
use crate::Result;

const MASK_EXTENSIONS: [&str; 4] = ["png", "bmp", "tif", "tiff"];

/// What a full run produced, for callers that want to inspect results
/// without re-parsing the report files.
#[derive(Debug)]
pub struct PipelineSummary {
    pub scan_ids: Vec<String>,
    pub ranked: Vec<RankedCluster>,
    pub report_path: PathBuf,
    pub decile_path: PathBuf,
    pub model_path: Option<PathBuf>,
}

/// Lists mask images under `scan_dir`, sorted by file name so every run
/// visits scans in the same order.
pub fn discover_scans(scan_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(scan_dir)
        .map_err(|e| Error::io(scan_dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| MASK_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no mask images found in {}",
            scan_dir.display()
        )));
    }
    Ok(paths)
}

/// Scan id derived from the file stem; whitespace is not allowed in store
/// headers so it is replaced.
pub fn scan_id_for(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scan");
    stem.replace(char::is_whitespace, "_")
}

/// Extracts one scan from a mask image per the ingest configuration.
pub fn extract_stage(cfg: &PipelineConfig, path: &Path) -> Result<Scan> {
    let mask = load_mask(path, cfg.ingest.binarize_threshold, cfg.ingest.polarity)?;
    let mask = if cfg.ingest.outline_fill {
        fill_holes(&mask)
    } else {
        mask
    };
    let mut scan = extract_impurities(&mask, &scan_id_for(path), cfg.ingest.connectivity);
    scan.ensure_shape_images();
    Ok(scan)
}

/// Normalizes per-scan raw score vectors under the configured span: each
/// scan on its own, or one min-max over the whole corpus.
pub fn normalize_span(mut raw: Vec<Vec<f64>>, span: NormalizationSpan) -> Vec<Vec<f64>> {
    match span {
        NormalizationSpan::PerScan => {
            for v in &mut raw {
                min_max_normalize(v);
            }
            raw
        }
        NormalizationSpan::Corpus => {
            let mut all: Vec<f64> = raw.iter().flatten().copied().collect();
            let lens: Vec<usize> = raw.iter().map(Vec::len).collect();
            min_max_normalize(&mut all);
            let mut out = Vec::with_capacity(raw.len());
            let mut off = 0;
            for len in lens {
                out.push(all[off..off + len].to_vec());
                off += len;
            }
            out
        }
    }
}

/// Spatial channel for a set of scans under the configured span.
pub fn spatial_stage(scans: &[Scan], params: &SpatialParams, span: NormalizationSpan) -> Result<Vec<Vec<f64>>> {
    let raw: Vec<Vec<f64>> = scans
        .par_iter()
        .map(|scan| spatial_scores_raw(scan, params))
        .collect::<Result<_>>()?;
    Ok(normalize_span(raw, span))
}

/// Pools circle-difference scores over all scans, splits them at the
/// configured thresholds, trains the model, and reports the manifest of
/// what went into each split.
pub fn train_stage(scans: &[Scan], cfg: &PipelineConfig) -> Result<(Autoencoder, String)> {
    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut diffs: Vec<f64> = Vec::new();
    for (si, scan) in scans.iter().enumerate() {
        for imp in &scan.impurities {
            keys.push((si, imp.id));
            diffs.push(circle_diff_score(imp));
        }
    }
    let (normal_idx, anomalous_idx) = select_training_sets(&diffs, &cfg.shape)?;

    let image_of = |&(si, id): &(usize, usize)| {
        scans[si].impurities[id]
            .shape_image
            .clone()
            .expect("extract_stage caches shape images")
    };
    let normal: Vec<_> = normal_idx.iter().map(|&i| image_of(&keys[i])).collect();
    let anomalous: Vec<_> = anomalous_idx.iter().map(|&i| image_of(&keys[i])).collect();

    let mut manifest = String::new();
    for (i, (si, id)) in keys.iter().enumerate() {
        let label = if normal_idx.contains(&i) {
            "normal"
        } else if anomalous_idx.contains(&i) {
            "anomalous"
        } else {
            "unused"
        };
        writeln!(
            manifest,
            "{} {} {:.6} {}",
            scans[*si].scan_id, id, diffs[i], label
        )
        .expect("write to string");
    }

    let model = train_shape_model(&normal, &anomalous, &cfg.shape)?;
    Ok((model, manifest))
}

/// Shape channel for all scans with span normalization. Raw MSEs are
/// recomputed per scan and normalized together when the span is corpus.
pub fn shape_stage(
    scans: &[Scan],
    model: &Autoencoder,
    cfg: &PipelineConfig,
    span: NormalizationSpan,
) -> Result<Vec<Vec<f64>>> {
    // shape_scores normalizes per scan; for corpus span we need raws, so
    // normalize the per-scan outputs only in the per-scan case.
    match span {
        NormalizationSpan::PerScan => scans
            .iter()
            .map(|scan| {
                let set = shape_scores(scan, model, &cfg.postprocess, &cfg.shape)?;
                Ok(set.shape.expect("shape_scores fills the channel"))
            })
            .collect(),
        NormalizationSpan::Corpus => {
            let raw: Vec<Vec<f64>> = scans
                .iter()
                .map(|scan| raw_shape_mses(scan, model, cfg))
                .collect::<Result<_>>()?;
            Ok(normalize_span(raw, span))
        }
    }
}

fn raw_shape_mses(scan: &Scan, model: &Autoencoder, cfg: &PipelineConfig) -> Result<Vec<f64>> {
    use crate::shape::{postprocess, reconstruct, reconstruction_mse};
    scan.impurities
        .par_iter()
        .map(|imp| {
            let img = imp.shape_image.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "scan {}: impurity {} has no shape image",
                    scan.scan_id, imp.id
                ))
            })?;
            let recon = reconstruct(model, img)?;
            let post = postprocess(&recon, img.width as usize, &cfg.postprocess)?;
            Ok(reconstruction_mse(
                img.pixels(),
                &post,
                cfg.shape.mse_scale_255,
            ))
        })
        .collect()
}

/// Combined channel: per-impurity product of the two normalized channels,
/// normalized again under the span.
pub fn combined_stage(
    scans: &[Scan],
    spatial: &[Vec<f64>],
    shape: &[Vec<f64>],
    span: NormalizationSpan,
) -> Result<Vec<Vec<f64>>> {
    let mut products = Vec::with_capacity(scans.len());
    for ((scan, sp), sh) in scans.iter().zip(spatial).zip(shape) {
        if sp.len() != sh.len() || sp.len() != scan.impurities.len() {
            return Err(Error::invalid(format!(
                "scan {}: channel lengths disagree",
                scan.scan_id
            )));
        }
        products.push(sp.iter().zip(sh).map(|(a, b)| a * b).collect::<Vec<f64>>());
    }
    Ok(normalize_span(products, span))
}

/// Clusters one scan and computes each cluster's area measure.
pub fn cluster_stage(
    scan: &Scan,
    combined: &[f64],
    cfg: &PipelineConfig,
) -> Result<Vec<(Cluster, f64)>> {
    let clusters = market_clustering(scan, combined, &cfg.cluster, &cfg.price)?;
    clusters
        .into_iter()
        .map(|c| {
            let am = area_measure(&c, combined, scan)?;
            Ok((c, am))
        })
        .collect()
}

fn ids_csv(ids: &[usize]) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Cluster report records: `scan_id cluster_index core_ids member_ids
/// wallet am rank decile`, most anomalous first.
pub fn format_cluster_report(ranked: &[RankedCluster]) -> String {
    let mut rows: Vec<&RankedCluster> = ranked.iter().collect();
    rows.sort_by_key(|r| std::cmp::Reverse(r.global_rank));
    let mut out = String::new();
    for r in rows {
        writeln!(
            out,
            "{} {} {} {} {:.6} {:.6} {} {}",
            r.scan_id,
            r.cluster_index,
            ids_csv(&r.cluster.cores),
            ids_csv(&r.cluster.members),
            r.cluster.wallet,
            r.am,
            r.global_rank,
            r.decile
        )
        .expect("write to string");
    }
    out
}

/// Decile histogram plus the most anomalous cluster per decile.
pub fn format_decile_summary(ranked: &[RankedCluster]) -> String {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for r in ranked {
        *counts.entry(r.decile).or_default() += 1;
    }
    let mut out = String::new();
    writeln!(out, "total {}", ranked.len()).expect("write to string");
    for d in 1..=10u32 {
        writeln!(out, "decile {} {}", d, counts.get(&d).copied().unwrap_or(0))
            .expect("write to string");
    }
    out
}

/// Parses one score export file back into `(scan_id, channel, values)`.
/// Records must be dense in impurity id, as written by `export_channel`.
pub fn parse_score_export(text: &str, source: &str) -> Result<(String, String, Vec<f64>)> {
    let mut scan_id: Option<String> = None;
    let mut channel: Option<String> = None;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedRecord {
            path: source.to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad("expected `scan_id impurity_id channel value`"));
        }
        let id: usize = fields[1].parse().map_err(|_| bad("bad impurity id"))?;
        if id != values.len() {
            return Err(bad("impurity ids must be dense and ordered"));
        }
        let value: f64 = fields[3].parse().map_err(|_| bad("bad score value"))?;
        match &scan_id {
            None => {
                scan_id = Some(fields[0].to_string());
                channel = Some(fields[2].to_string());
            }
            Some(sid) => {
                if sid != fields[0] || channel.as_deref() != Some(fields[2]) {
                    return Err(bad("mixed scan ids or channels in one export"));
                }
            }
        }
        values.push(value);
    }
    let scan_id = scan_id.ok_or_else(|| Error::MalformedRecord {
        path: source.to_string(),
        line: 1,
        reason: "empty score export".to_string(),
    })?;
    Ok((scan_id, channel.expect("set with scan_id"), values))
}

/// Parses a per-scan cluster export (`scan_id index cores members wallet
/// am`) back into ranking records.
pub fn parse_cluster_export(text: &str, source: &str) -> Result<Vec<ClusterRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedRecord {
            path: source.to_string(),
            line: i + 1,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad("expected `scan_id index cores members wallet am`"));
        }
        let parse_ids = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("bad id list"))
        };
        records.push(ClusterRecord {
            scan_id: fields[0].to_string(),
            cluster_index: fields[1].parse().map_err(|_| bad("bad cluster index"))?,
            cluster: Cluster {
                cores: parse_ids(fields[2])?,
                members: parse_ids(fields[3])?,
                wallet: fields[4].parse().map_err(|_| bad("bad wallet"))?,
            },
            am: fields[5].parse().map_err(|_| bad("bad area measure"))?,
        });
    }
    Ok(records)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs every stage over `scan_dir`, writing stores, score exports, the
/// model, cluster reports, the global ranking, the decile summary and the
/// overlays under `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary> {
    let scan_dir = cfg
        .scan_dir
        .as_ref()
        .ok_or_else(|| Error::Config("scan_dir is required".into()))?;
    let out_dir = cfg
        .out_dir
        .as_ref()
        .ok_or_else(|| Error::Config("out_dir is required".into()))?;
    cfg.validate()?;
    ensure_dir(out_dir)?;

    // Ingest.
    let paths = discover_scans(scan_dir).map_err(|e| e.in_stage("extract"))?;
    let scans: Vec<Scan> = paths
        .par_iter()
        .map(|p| extract_stage(cfg, p))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("extract"))?;
    let stores = out_dir.join("stores");
    ensure_dir(&stores)?;
    for scan in &scans {
        persist_impurities(scan, stores.join(format!("{}.imps", scan.scan_id)))
            .map_err(|e| e.in_stage("extract"))?;
    }

    // Spatial.
    let spatial = spatial_stage(&scans, &cfg.spatial, cfg.normalization)
        .map_err(|e| e.in_stage("spatial"))?;

    // Shape model.
    let (model, model_path): (Autoencoder, PathBuf) = if cfg.train_shape {
        let (model, manifest) = train_stage(&scans, cfg).map_err(|e| e.in_stage("shape"))?;
        write_text(&out_dir.join("train_manifest.txt"), &manifest)?;
        let path = out_dir.join("model.msae");
        crate::shape::model_io::save_model(&model, &path).map_err(|e| e.in_stage("shape"))?;
        (model, path)
    } else {
        let path = cfg.model_path.as_ref().ok_or_else(|| {
            Error::invalid("shape: model unavailable (training disabled and no model_path)")
        })?;
        if !path.exists() {
            return Err(Error::invalid(format!(
                "shape: model unavailable at {}",
                path.display()
            )));
        }
        let model =
            crate::shape::model_io::load_model(path).map_err(|e| e.in_stage("shape"))?;
        (model, path.clone())
    };

    // Shape + combined channels.
    let shape = shape_stage(&scans, &model, cfg, cfg.normalization)
        .map_err(|e| e.in_stage("shape"))?;
    let combined = combined_stage(&scans, &spatial, &shape, cfg.normalization)
        .map_err(|e| e.in_stage("combined"))?;

    // Score exports.
    let scores_dir = out_dir.join("scores");
    ensure_dir(&scores_dir)?;
    for (i, scan) in scans.iter().enumerate() {
        let mut set = ScoreSet::new(scan.scan_id.clone());
        set.spatial = Some(spatial[i].clone());
        set.shape = Some(shape[i].clone());
        set.combined = Some(combined[i].clone());
        for channel in [Channel::Spatial, Channel::Shape, Channel::Combined] {
            let text = set.export_channel(channel)?;
            write_text(
                &scores_dir.join(format!("{}.{}.scores", scan.scan_id, channel)),
                &text,
            )?;
        }
    }

    // Clustering per scan, then the global ranking.
    let clusters_dir = out_dir.join("clusters");
    ensure_dir(&clusters_dir)?;
    let mut records = Vec::new();
    let mut per_scan_clusters: Vec<Vec<(Cluster, f64)>> = Vec::with_capacity(scans.len());
    for (i, scan) in scans.iter().enumerate() {
        let clustered =
            cluster_stage(scan, &combined[i], cfg).map_err(|e| e.in_stage("cluster"))?;
        let mut text = String::new();
        for (idx, (c, am)) in clustered.iter().enumerate() {
            writeln!(
                text,
                "{} {} {} {} {:.6} {:.6}",
                scan.scan_id,
                idx,
                ids_csv(&c.cores),
                ids_csv(&c.members),
                c.wallet,
                am
            )
            .expect("write to string");
        }
        write_text(&clusters_dir.join(format!("{}.clusters.txt", scan.scan_id)), &text)?;
        for (idx, (c, am)) in clustered.iter().enumerate() {
            records.push(ClusterRecord {
                scan_id: scan.scan_id.clone(),
                cluster_index: idx,
                cluster: c.clone(),
                am: *am,
            });
        }
        per_scan_clusters.push(clustered);
    }
    let ranked = rank_clusters(records);
    let report_path = out_dir.join("report.txt");
    write_text(&report_path, &format_cluster_report(&ranked))?;
    let decile_path = out_dir.join("deciles.txt");
    write_text(&decile_path, &format_decile_summary(&ranked))?;

    // Overlays: the three score channels plus cluster membership colored by
    // the scan-normalized area measure.
    let overlays = out_dir.join("overlays");
    ensure_dir(&overlays)?;
    for (i, scan) in scans.iter().enumerate() {
        let channels: [(&str, &[f64]); 3] = [
            ("spatial", &spatial[i]),
            ("shape", &shape[i]),
            ("combined", &combined[i]),
        ];
        for (name, values) in channels {
            let vals: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
            let img = render_overlay(scan, &vals, None).map_err(|e| e.in_stage("render"))?;
            save_overlay(&img, overlays.join(format!("{}.{}.png", scan.scan_id, name)))
                .map_err(|e| e.in_stage("render"))?;
        }

        let mut am_values: Vec<f64> =
            per_scan_clusters[i].iter().map(|(_, am)| *am).collect();
        min_max_normalize(&mut am_values);
        let mut per_impurity: Vec<Option<f64>> = vec![None; scan.impurities.len()];
        for ((c, _), norm) in per_scan_clusters[i].iter().zip(&am_values) {
            for &m in &c.members {
                per_impurity[m] = Some(*norm);
            }
        }
        let img =
            render_overlay(scan, &per_impurity, None).map_err(|e| e.in_stage("render"))?;
        save_overlay(
            &img,
            overlays.join(format!("{}.clusters.png", scan.scan_id)),
        )
        .map_err(|e| e.in_stage("render"))?;
    }

    Ok(PipelineSummary {
        scan_ids: scans.iter().map(|s| s.scan_id.clone()).collect(),
        ranked,
        report_path,
        decile_path,
        model_path: Some(model_path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_normalization_modes_differ() {
        let raw = vec![vec![0.0, 10.0], vec![0.0, 20.0]];
        let per_scan = normalize_span(raw.clone(), NormalizationSpan::PerScan);
        assert_eq!(per_scan, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let corpus = normalize_span(raw, NormalizationSpan::Corpus);
        assert_eq!(corpus, vec![vec![0.0, 0.5], vec![0.0, 1.0]]);
    }

    #[test]
    fn missing_model_is_a_shape_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let scan_dir = dir.path().join("scans");
        std::fs::create_dir_all(&scan_dir).unwrap();
        // One trivial mask so extraction succeeds.
        let mut img = image::GrayImage::new(8, 8);
        for y in 2..5 {
            for x in 2..5 {
                img.put_pixel(x, y, image::Luma([255]));
            }
        }
        for x in 6..8 {
            img.put_pixel(x, 6, image::Luma([255]));
        }
        img.save(scan_dir.join("a.png")).unwrap();

        let cfg = PipelineConfig {
            scan_dir: Some(scan_dir),
            out_dir: Some(dir.path().join("out")),
            train_shape: false,
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(
            err.to_string().contains("shape: model unavailable"),
            "got: {err}"
        );
    }

    #[test]
    fn report_lists_most_anomalous_first() {
        use crate::area::Cluster;
        let ranked = rank_clusters(
            [1.0, 5.0]
                .iter()
                .enumerate()
                .map(|(i, &am)| ClusterRecord {
                    scan_id: format!("s{i}"),
                    cluster_index: 0,
                    cluster: Cluster {
                        cores: vec![0],
                        members: vec![0],
                        wallet: 0.0,
                    },
                    am,
                })
                .collect(),
        );
        let report = format_cluster_report(&ranked);
        let first = report.lines().next().unwrap();
        assert!(first.starts_with("s1 "), "expected s1 first, got {first}");
        assert!(first.ends_with(" 2 1"), "rank 2 decile 1: {first}");
    }
}
