//! Area anomaly: market clustering of scored impurities, the parametric
//! price function that drives it, the area-anomaly measure used for
//! cross-scan ranking, and decile bucketing.
//!
//! Clusters start as singletons seeded on the k most anomalous impurities,
//! each holding a wallet derived from its core's combined score. Every pass
//! the richest cluster goes first, picks its cheapest affordable couple
//! `(i inside, o outside)`, and either merges with the cluster owning `o`
//! (when `o` is a core) or buys `o` outright. A bid ledger prevents poorer
//! clusters from contesting impurities a richer cluster already bid on.
//! Clustering is strictly sequential and deterministic by contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{rect_center, rect_diagonal, rect_distance, Impurity};
use crate::ingest::Scan;
use crate::Result;

/// How raw pixel distances are mapped into [0,1] before pricing. Wallets
/// come from scores in [0,1]; prices must live on a commensurate scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNormalizer {
    /// Divide by the scan's image diagonal (default).
    ScanDiagonal,
    /// Divide by a fixed pixel length.
    Fixed(f64),
}

impl Default for DistanceNormalizer {
    fn default() -> Self {
        DistanceNormalizer::ScanDiagonal
    }
}

/// Constants of the parametric price function, with the published defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceParams {
    /// Exponent on the distance term `exp(sqrt(d))`.
    pub c1: f64,
    pub c2_1: f64,
    pub c2_2: f64,
    pub c2_3: f64,
    pub c2_4: f64,
    pub c3_1: f64,
    pub c3_2: f64,
    /// Exponent of the general score discount.
    pub c4: f64,
    pub c5_1: f64,
    pub c5_2: f64,
    /// Exponent of the much steeper core discount.
    pub c6: f64,
    /// Exponent of the merge-similarity penalty.
    pub c7: f64,
    pub distance_normalizer: DistanceNormalizer,
    /// Scale of the wallet function F(score) = wallet_scale * score.
    pub wallet_scale: f64,
}

impl Default for PriceParams {
    fn default() -> Self {
        Self {
            c1: 1.7,
            c2_1: 0.95,
            c2_2: 0.95,
            c2_3: 0.95,
            c2_4: 0.95,
            c3_1: 0.5,
            c3_2: 0.5,
            c4: 1.6,
            c5_1: 0.05,
            c5_2: 0.05,
            c6: 2.5,
            c7: 8.0,
            distance_normalizer: DistanceNormalizer::ScanDiagonal,
            wallet_scale: 1.0,
        }
    }
}

impl PriceParams {
    pub fn normalizer_for(&self, scan: &Scan) -> f64 {
        match self.distance_normalizer {
            DistanceNormalizer::ScanDiagonal => scan.image_diagonal(),
            DistanceNormalizer::Fixed(v) => v,
        }
    }
}

/// Controls of the clustering loop itself.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Number of initial (core) clusters.
    pub k: usize,
    /// Hard pass budget; exceeding it is reported as non-convergence.
    pub max_passes: usize,
    /// When true, purchases also defer convergence (a full pass must change
    /// nothing). The default follows the pseudocode literally: only a merge
    /// restarts the loop.
    pub strict_convergence: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 10,
            max_passes: 1000,
            strict_convergence: false,
        }
    }
}

/// A market-clustering area.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Founding high-anomaly impurities; buying one merges the clusters.
    pub cores: Vec<usize>,
    /// All impurities inside, cores included.
    pub members: Vec<usize>,
    /// Remaining credit. Never negative (no overdraft).
    pub wallet: f64,
}

impl Cluster {
    fn singleton(core: usize, wallet: f64) -> Self {
        Self {
            cores: vec![core],
            members: vec![core],
            wallet,
        }
    }

    /// Stable label: the founding core keeps position 0 through merges.
    pub fn lead_core(&self) -> usize {
        self.cores[0]
    }

    pub fn min_core(&self) -> usize {
        *self.cores.iter().min().expect("clusters keep their cores")
    }
}

/// One step of an instrumented clustering run.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    /// A pass starts; clusters listed by lead core in turn order.
    PassBegin { pass: usize, order: Vec<usize> },
    /// The cluster's cheapest ledger-admissible couple.
    CoupleSelected {
        cluster: usize,
        from: usize,
        target: usize,
        price: f64,
    },
    /// A candidate was skipped because an at-least-as-rich bid stands.
    BidRejected {
        cluster: usize,
        target: usize,
        standing_bid: f64,
    },
    /// Bid placed (always the bidder's wallet before paying or merging).
    BidPlaced { target: usize, amount: f64 },
    Merged {
        into: usize,
        absorbed: usize,
        wallet_after: f64,
    },
    Purchased {
        cluster: usize,
        target: usize,
        price: f64,
        wallet_after: f64,
    },
    /// The cluster could not act this turn.
    Passed { cluster: usize },
}

/// The parametric price of appending `o` to a cluster through its member
/// `i`. `normalizer` maps the pixel distance into [0,1]; `o_is_core`
/// applies the steep core discount and the merge-similarity penalty.
pub fn price(
    i: &Impurity,
    o: &Impurity,
    score_i: f64,
    score_o: f64,
    o_is_core: bool,
    params: &PriceParams,
    normalizer: f64,
) -> f64 {
    let d_hat = rect_distance(&i.rect, &o.rect) / normalizer;
    let d = d_hat.sqrt().exp().powf(params.c1);
    let s = (1.0
        - (score_i * params.c2_1).powf(params.c3_1) * (score_o * params.c2_2).powf(params.c3_2))
    .powf(params.c4);
    let mut price = d * s;
    if o_is_core {
        let dis = (1.0
            - (score_i * params.c2_3).powf(params.c5_1)
                * (score_o * params.c2_4).powf(params.c5_2))
        .powf(params.c6);
        let pen = (2.0 - (score_i - score_o).abs()).powf(params.c7);
        price *= dis * pen;
    }
    price
}

/// Builds the k singleton clusters on the k most anomalous impurities
/// (ties broken towards the lower id), wallets `wallet_scale * score`.
pub fn init_clusters(k: usize, scores: &[f64], params: &PriceParams) -> Result<Vec<Cluster>> {
    if k == 0 {
        return Err(Error::invalid("cluster count k must be at least 1"));
    }
    if scores.is_empty() {
        return Err(Error::invalid("cannot seed clusters without scores"));
    }
    let k = if k > scores.len() {
        log::warn!(
            "k={k} exceeds impurity count {}, clamping",
            scores.len()
        );
        scores.len()
    } else {
        k
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    Ok(order[..k]
        .iter()
        .map(|&id| Cluster::singleton(id, params.wallet_scale * scores[id]))
        .collect())
}

/// Runs market clustering to its fixed point. See the module docs for the
/// loop structure. `scores` is the combined channel, indexed by impurity id.
pub fn market_clustering(
    scan: &Scan,
    scores: &[f64],
    cfg: &ClusterConfig,
    params: &PriceParams,
) -> Result<Vec<Cluster>> {
    market_clustering_traced(scan, scores, cfg, params).map(|(clusters, _)| clusters)
}

/// As [`market_clustering`], returning the full event trace for fixtures
/// and no-overdraft auditing.
pub fn market_clustering_traced(
    scan: &Scan,
    scores: &[f64],
    cfg: &ClusterConfig,
    params: &PriceParams,
) -> Result<(Vec<Cluster>, Vec<TraceEvent>)> {
    if scores.len() != scan.impurities.len() {
        return Err(Error::invalid(format!(
            "scan {}: {} impurities but {} scores",
            scan.scan_id,
            scan.impurities.len(),
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!(
            "scan {}: impurity {bad} has a non-finite score",
            scan.scan_id
        )));
    }

    let normalizer = params.normalizer_for(scan);
    let mut clusters = init_clusters(cfg.k, scores, params)?;
    let is_core: Vec<bool> = {
        let mut flags = vec![false; scores.len()];
        for c in &clusters {
            flags[c.lead_core()] = true;
        }
        flags
    };
    let imps = &scan.impurities;

    let mut ledger: BTreeMap<usize, f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut pass = 0usize;

    'outer: loop {
        pass += 1;
        if pass > cfg.max_passes {
            return Err(Error::NonConvergence {
                passes: cfg.max_passes,
            });
        }
        // Richest first; ties go to the cluster with the lowest core id.
        clusters.sort_by(|a, b| {
            b.wallet
                .partial_cmp(&a.wallet)
                .expect("wallets are finite")
                .then(a.min_core().cmp(&b.min_core()))
        });
        trace.push(TraceEvent::PassBegin {
            pass,
            order: clusters.iter().map(Cluster::lead_core).collect(),
        });

        // A merge restarts the pass via `continue 'outer`, so completing
        // the loop below means the pass was merge-free.
        let mut changed_this_pass = false;

        for ci in 0..clusters.len() {
            let lead = clusters[ci].lead_core();
            let wallet = clusters[ci].wallet;
            let mut inside = vec![false; scores.len()];
            for &m in &clusters[ci].members {
                inside[m] = true;
            }

            // All couples (i in members, o outside), ascending price with
            // id tie-breaks so the choice is unambiguous.
            let mut couples: Vec<(f64, usize, usize)> = Vec::new();
            for &i in &clusters[ci].members {
                for o in 0..scores.len() {
                    if inside[o] {
                        continue;
                    }
                    let p = price(
                        &imps[i],
                        &imps[o],
                        scores[i],
                        scores[o],
                        is_core[o],
                        params,
                        normalizer,
                    );
                    couples.push((p, i, o));
                }
            }
            couples.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("prices are finite")
                    .then(a.1.cmp(&b.1))
                    .then(a.2.cmp(&b.2))
            });

            // Advance past couples whose target carries a bid at least as
            // rich as our wallet.
            let mut selected = None;
            for &(p, i, o) in &couples {
                if let Some(&standing) = ledger.get(&o) {
                    if wallet <= standing {
                        trace.push(TraceEvent::BidRejected {
                            cluster: lead,
                            target: o,
                            standing_bid: standing,
                        });
                        continue;
                    }
                }
                selected = Some((p, i, o));
                break;
            }
            let Some((p, i, o)) = selected else {
                trace.push(TraceEvent::Passed { cluster: lead });
                continue;
            };
            trace.push(TraceEvent::CoupleSelected {
                cluster: lead,
                from: i,
                target: o,
                price: p,
            });

            if wallet < p {
                // Credit with no overdraft: an unaffordable couple ends the
                // cluster's turn, merge or not.
                trace.push(TraceEvent::Passed { cluster: lead });
                continue;
            }

            if is_core[o] {
                // Merge with the cluster owning core `o`. The bid records
                // the wallet before wallets combine; merging itself is not
                // paid for.
                ledger.insert(o, wallet);
                trace.push(TraceEvent::BidPlaced {
                    target: o,
                    amount: wallet,
                });
                let cj = clusters
                    .iter()
                    .position(|c| c.cores.contains(&o))
                    .expect("every core belongs to exactly one cluster");
                let absorbed = clusters.remove(cj);
                let ci = if cj < ci { ci - 1 } else { ci };
                let into = &mut clusters[ci];
                into.wallet += absorbed.wallet;
                into.cores.extend(absorbed.cores.iter().copied());
                into.members.extend(absorbed.members.iter().copied());
                trace.push(TraceEvent::Merged {
                    into: lead,
                    absorbed: absorbed.cores[0],
                    wallet_after: into.wallet,
                });
                continue 'outer; // restart: re-sort and begin a new pass
            }

            // Plain purchase.
            ledger.insert(o, wallet);
            trace.push(TraceEvent::BidPlaced {
                target: o,
                amount: wallet,
            });
            clusters[ci].wallet = wallet - p;
            clusters[ci].members.push(o);
            let wallet_after = clusters[ci].wallet;
            for (cj, other) in clusters.iter_mut().enumerate() {
                if cj != ci {
                    other.members.retain(|&m| m != o);
                }
            }
            trace.push(TraceEvent::Purchased {
                cluster: lead,
                target: o,
                price: p,
                wallet_after,
            });
            changed_this_pass = true;
        }

        if !cfg.strict_convergence || !changed_this_pass {
            break;
        }
    }

    // Deterministic output order: by lead core id.
    clusters.sort_by_key(Cluster::lead_core);
    Ok((clusters, trace))
}

/// Maximum pairwise distance between member rectangle centers; a singleton
/// falls back to its rectangle diagonal so a lone giant impurity still
/// carries a positive measure.
pub fn cluster_diameter(cluster: &Cluster, scan: &Scan) -> Result<f64> {
    if cluster.members.is_empty() {
        return Err(Error::invalid("diameter of an empty cluster"));
    }
    if cluster.members.len() == 1 {
        return Ok(rect_diagonal(&scan.impurities[cluster.members[0]].rect));
    }
    let centers: Vec<_> = cluster
        .members
        .iter()
        .map(|&m| rect_center(&scan.impurities[m].rect))
        .collect();
    let mut best = 0.0f64;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            best = best.max(centers[a].distance(centers[b]));
        }
    }
    Ok(best)
}

/// Area-anomaly measure: `sum(score * area^2) * diameter * member count`.
pub fn area_measure(cluster: &Cluster, scores: &[f64], scan: &Scan) -> Result<f64> {
    let diameter = cluster_diameter(cluster, scan)?;
    let weighted: f64 = cluster
        .members
        .iter()
        .map(|&m| {
            let a = scan.impurities[m].area_f64();
            scores[m] * a * a
        })
        .sum();
    Ok(weighted * diameter * cluster.members.len() as f64)
}

/// One cluster entering the global ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub scan_id: String,
    /// Index of the cluster within its scan's clustering output.
    pub cluster_index: usize,
    pub cluster: Cluster,
    pub am: f64,
}

/// A globally ranked cluster. Rank N (of N) is the most anomalous,
/// matching place numbering where higher places are worse; decile 1 holds
/// the most anomalous tenth.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCluster {
    pub scan_id: String,
    pub cluster_index: usize,
    pub cluster: Cluster,
    pub am: f64,
    pub global_rank: usize,
    pub decile: u32,
}

/// Decile of rank `rank` among `n`: the bucket of the fraction ranked
/// strictly above. The most anomalous cluster (rank n) is always decile 1.
pub fn decile_of_rank(rank: usize, n: usize) -> u32 {
    debug_assert!(rank >= 1 && rank <= n);
    (1 + 10 * (n - rank) / n) as u32
}

/// Ranks clusters across scans, ascending by the area measure; ties break
/// by (scan id, lowest core id).
pub fn rank_clusters(records: Vec<ClusterRecord>) -> Vec<RankedCluster> {
    let n = records.len();
    let mut records = records;
    records.sort_by(|a, b| {
        a.am.partial_cmp(&b.am)
            .expect("area measures are finite")
            .then_with(|| a.scan_id.cmp(&b.scan_id))
            .then_with(|| a.cluster.min_core().cmp(&b.cluster.min_core()))
    });
    records
        .into_iter()
        .enumerate()
        .map(|(idx, r)| {
            let global_rank = idx + 1;
            RankedCluster {
                scan_id: r.scan_id,
                cluster_index: r.cluster_index,
                cluster: r.cluster,
                am: r.am,
                global_rank,
                decile: decile_of_rank(global_rank, n),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingRect;

    fn square(id: usize, x: f64, y: f64, side: f64) -> Impurity {
        Impurity {
            id,
            contour: vec![],
            area: (side * side) as u64,
            rect: BoundingRect::new(x, y, x + side - 1.0, y + side - 1.0).unwrap(),
            shape_image: None,
        }
    }

    fn scan_of(impurities: Vec<Impurity>, w: u32, h: u32) -> Scan {
        Scan {
            scan_id: "t".into(),
            width: w,
            height: h,
            impurities,
        }
    }

    #[test]
    fn price_distance_term_only() {
        // Both scores zero: the s-term is 1 and price = exp(sqrt(0.25))^1.7.
        let a = square(0, 0.0, 0.0, 2.0);
        let b = square(1, 3.0, 0.0, 2.0); // gap 2 with normalizer 8 -> 0.25
        let p = price(&a, &b, 0.0, 0.0, false, &PriceParams::default(), 8.0);
        let expected = 0.25f64.sqrt().exp().powf(1.7);
        assert!((p - expected).abs() < 1e-12);
        assert!((expected - 2.3396).abs() < 1e-3);
    }

    #[test]
    fn price_score_discount_for_hot_pair() {
        // Unit scores, intersecting rectangles: price collapses to the
        // s-term (1 - 0.95)^1.6.
        let a = square(0, 0.0, 0.0, 2.0);
        let b = square(1, 1.0, 0.0, 2.0);
        let p = price(&a, &b, 1.0, 1.0, false, &PriceParams::default(), 10.0);
        assert!((p - 8.25e-3).abs() < 1e-4);
    }

    #[test]
    fn price_core_multiplier_is_tiny() {
        let a = square(0, 0.0, 0.0, 2.0);
        let b = square(1, 1.0, 0.0, 2.0);
        let plain = price(&a, &b, 1.0, 1.0, false, &PriceParams::default(), 10.0);
        let core = price(&a, &b, 1.0, 1.0, true, &PriceParams::default(), 10.0);
        let multiplier = core / plain;
        // dis = (1 - 0.95^0.1)^2.5 ~ 1.87e-6, pen = 2^8 = 256.
        assert!((multiplier - 1.87e-6 * 256.0).abs() < 2e-5);
        assert!(core < plain, "core impurities must come at a discount");
    }

    #[test]
    fn init_picks_top_scores_with_id_ties() {
        let params = PriceParams::default();
        let clusters = init_clusters(2, &[0.9, 0.5, 0.1], &params).unwrap();
        assert_eq!(clusters[0].cores, vec![0]);
        assert_eq!(clusters[1].cores, vec![1]);
        assert_eq!(clusters[0].wallet, 0.9);
        assert_eq!(clusters[1].wallet, 0.5);

        // k = n: every impurity becomes a singleton core.
        let all = init_clusters(3, &[0.9, 0.5, 0.1], &params).unwrap();
        assert_eq!(all.len(), 3);

        // Tie at the k boundary: lower id wins.
        let tied = init_clusters(1, &[0.5, 0.5], &params).unwrap();
        assert_eq!(tied[0].cores, vec![0]);
    }

    #[test]
    fn init_rejects_zero_k_and_clamps_large_k() {
        let params = PriceParams::default();
        assert!(init_clusters(0, &[0.5], &params).is_err());
        let clamped = init_clusters(10, &[0.5, 0.4], &params).unwrap();
        assert_eq!(clamped.len(), 2);
    }

    #[test]
    fn far_poor_singletons_stay_separate() {
        // Every candidate price exceeds both wallets, so nothing happens.
        let scan = scan_of(
            vec![square(0, 0.0, 0.0, 5.0), square(1, 900.0, 900.0, 5.0)],
            1000,
            1000,
        );
        let cfg = ClusterConfig {
            k: 2,
            ..ClusterConfig::default()
        };
        let scores = vec![0.2, 0.1];
        let clusters =
            market_clustering(&scan, &scores, &cfg, &PriceParams::default()).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members, vec![0]);
        assert_eq!(clusters[1].members, vec![1]);
        assert_eq!(clusters[0].wallet, 0.2);
        assert_eq!(clusters[1].wallet, 0.1);
    }

    #[test]
    fn adjacent_hot_cores_merge_and_combine_wallets() {
        let scan = scan_of(
            vec![square(0, 0.0, 0.0, 5.0), square(1, 5.0, 0.0, 5.0)],
            100,
            100,
        );
        let cfg = ClusterConfig {
            k: 2,
            ..ClusterConfig::default()
        };
        let scores = vec![1.0, 0.99];
        let (clusters, trace) =
            market_clustering_traced(&scan, &scores, &cfg, &PriceParams::default()).unwrap();
        assert_eq!(clusters.len(), 1);
        let c = &clusters[0];
        assert_eq!(c.cores, vec![0, 1]);
        assert_eq!(c.members, vec![0, 1]);
        assert!((c.wallet - 1.99).abs() < 1e-12, "wallets must sum on merge");
        assert!(trace
            .iter()
            .any(|e| matches!(e, TraceEvent::Merged { into: 0, absorbed: 1, .. })));
    }

    #[test]
    fn purchase_decrements_wallet_and_records_bid() {
        // One core with score 1 and wallet 1 next to a non-core whose score
        // is solved so the purchase price is exactly 0.3.
        let target_score = ((1.0 - 0.3f64.powf(1.0 / 1.6)) / 0.95).powi(2);
        let scan = scan_of(
            vec![square(0, 0.0, 0.0, 5.0), square(1, 4.0, 0.0, 5.0)],
            100,
            100,
        );
        let cfg = ClusterConfig {
            k: 1,
            ..ClusterConfig::default()
        };
        let scores = vec![1.0, target_score];
        let (clusters, trace) =
            market_clustering_traced(&scan, &scores, &cfg, &PriceParams::default()).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].members, vec![0, 1]);
        assert!((clusters[0].wallet - 0.7).abs() < 1e-6);
        let bid = trace.iter().find_map(|e| match e {
            TraceEvent::BidPlaced { target: 1, amount } => Some(*amount),
            _ => None,
        });
        assert_eq!(bid, Some(1.0), "bid records the wallet before paying");
    }

    #[test]
    fn missing_scores_are_invalid() {
        let scan = scan_of(vec![square(0, 0.0, 0.0, 2.0)], 10, 10);
        let cfg = ClusterConfig::default();
        assert!(market_clustering(&scan, &[], &cfg, &PriceParams::default()).is_err());
    }

    #[test]
    fn singleton_diameter_is_rect_diagonal() {
        let mut imp = square(0, 0.0, 0.0, 1.0);
        imp.rect = BoundingRect::new(0.0, 0.0, 3.0, 4.0).unwrap();
        let scan = scan_of(vec![imp], 10, 10);
        let c = Cluster::singleton(0, 1.0);
        assert_eq!(cluster_diameter(&c, &scan).unwrap(), 5.0);
    }

    #[test]
    fn pair_diameter_is_center_distance() {
        let scan = scan_of(
            vec![square(0, 0.0, 0.0, 1.0), square(1, 10.0, 0.0, 1.0)],
            50,
            50,
        );
        let c = Cluster {
            cores: vec![0],
            members: vec![0, 1],
            wallet: 0.0,
        };
        assert_eq!(cluster_diameter(&c, &scan).unwrap(), 10.0);
    }

    #[test]
    fn triple_diameter_is_max_pairwise() {
        let scan = scan_of(
            vec![
                square(0, 0.0, 0.0, 1.0),
                square(1, 6.0, 0.0, 1.0),
                square(2, 0.0, 8.0, 1.0),
            ],
            50,
            50,
        );
        let c = Cluster {
            cores: vec![0],
            members: vec![0, 1, 2],
            wallet: 0.0,
        };
        assert_eq!(cluster_diameter(&c, &scan).unwrap(), 10.0);
    }

    #[test]
    fn empty_cluster_diameter_is_an_error() {
        let scan = scan_of(vec![square(0, 0.0, 0.0, 1.0)], 10, 10);
        let c = Cluster {
            cores: vec![],
            members: vec![],
            wallet: 0.0,
        };
        assert!(cluster_diameter(&c, &scan).is_err());
    }

    #[test]
    fn area_measure_substitution_cases() {
        // Singleton: 0.5 * 2^2 * 5 * 1 = 10.
        let mut imp = square(0, 0.0, 0.0, 1.0);
        imp.area = 2;
        imp.rect = BoundingRect::new(0.0, 0.0, 3.0, 4.0).unwrap();
        let scan = scan_of(vec![imp], 20, 20);
        let c = Cluster::singleton(0, 0.0);
        assert_eq!(area_measure(&c, &[0.5], &scan).unwrap(), 10.0);

        // Two members: (1*1 + 0.5*4) * 10 * 2 = 60.
        let mut a = square(0, 0.0, 0.0, 1.0);
        a.area = 1;
        let mut b = square(1, 10.0, 0.0, 1.0);
        b.area = 2;
        let scan2 = scan_of(vec![a, b], 50, 50);
        let pair = Cluster {
            cores: vec![0],
            members: vec![0, 1],
            wallet: 0.0,
        };
        assert_eq!(area_measure(&pair, &[1.0, 0.5], &scan2).unwrap(), 60.0);
    }

    #[test]
    fn ranks_ascend_with_the_measure() {
        let records: Vec<ClusterRecord> = [5.0, 1.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &am)| ClusterRecord {
                scan_id: format!("s{i}"),
                cluster_index: 0,
                cluster: Cluster::singleton(0, 0.0),
                am,
            })
            .collect();
        let ranked = rank_clusters(records);
        let by_scan: Vec<(String, usize)> = ranked
            .iter()
            .map(|r| (r.scan_id.clone(), r.global_rank))
            .collect();
        assert!(by_scan.contains(&("s0".into(), 3)));
        assert!(by_scan.contains(&("s1".into(), 1)));
        assert!(by_scan.contains(&("s2".into(), 2)));
    }

    #[test]
    fn decile_matches_published_placements() {
        assert_eq!(decile_of_rank(1588, 1653), 1);
        assert_eq!(decile_of_rank(1642, 1653), 1);
        assert_eq!(decile_of_rank(916, 1653), 5);
        assert_eq!(decile_of_rank(1, 1), 1); // single cluster
        assert_eq!(decile_of_rank(1653, 1653), 1);
        assert_eq!(decile_of_rank(1, 1653), 10);
    }
}
