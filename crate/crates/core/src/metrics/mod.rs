//! Retrieval metrics: non-interpolated average precision, CMC and mAP.
//!
//! A query's ranking is reduced to a list of relevance flags (same vehicle id,
//! after camera filtering). Queries without any relevant gallery item are
//! excluded from every average and counted in [`EvalReport::n_excluded`].

mod report;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use report::{format_table, EvalReport, TableRow};

use crate::dataset::{build_protocol, DatasetManifest, ImageRecord, Protocol, Split};
use crate::error::{Error, Result};
use crate::retrieval::{rank, CameraFilter, DescriptorStore, RankingResult};
use crate::rng::{derive_seed, tag};

pub const DEFAULT_MAX_RANK: usize = 50;

/// `(1/R) * sum over relevant positions k of hits(k) / k`; `None` when `R = 0`.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            acc += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| acc / hits as f64)
}

/// 1-based rank of the first relevant item.
pub fn first_match(relevant: &[bool]) -> Option<usize> {
    relevant.iter().position(|&r| r).map(|p| p + 1)
}

/// `cmc[k-1]` = fraction of queries whose first match is at rank `<= k`.
/// Queries without a match are skipped.
pub fn cmc_curve(rankings: &[Vec<bool>], max_rank: usize) -> Vec<f64> {
    let firsts: Vec<usize> = rankings.iter().filter_map(|r| first_match(r)).collect();
    cmc_from_firsts(&firsts, max_rank)
}

fn cmc_from_firsts(firsts: &[usize], max_rank: usize) -> Vec<f64> {
    let mut counts = vec![0usize; max_rank];
    for &f in firsts {
        if f <= max_rank {
            counts[f - 1] += 1;
        }
    }
    let n = firsts.len().max(1) as f64;
    let mut cum = 0usize;
    counts
        .into_iter()
        .map(|c| {
            cum += c;
            cum as f64 / n
        })
        .collect()
}

/// Protocol settings echoed in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolEcho {
    pub protocol: Protocol,
    pub filter: CameraFilter,
    pub seed: u64,
    pub trials: usize,
    pub trial_seeds: Vec<u64>,
    pub max_rank: usize,
    pub ap: String,
}

impl ProtocolEcho {
    pub fn new(protocol: Protocol, filter: CameraFilter, seed: u64, trial_seeds: Vec<u64>, max_rank: usize) -> Self {
        ProtocolEcho {
            protocol,
            filter,
            seed,
            trials: trial_seeds.len().max(1),
            trial_seeds,
            max_rank,
            ap: "non-interpolated".into(),
        }
    }
}

/// Relevance flags of each ranking: same vehicle id as the query.
pub fn relevance(ranking: &RankingResult, query_ids: &[u32], gallery_ids: &[u32]) -> Result<Vec<Vec<bool>>> {
    ranking
        .rankings
        .iter()
        .map(|r| {
            let q = *query_ids
                .get(r.query)
                .ok_or_else(|| Error::validation(format!("query index {} has no metadata", r.query)))?;
            r.gallery
                .iter()
                .map(|&g| {
                    gallery_ids
                        .get(g)
                        .map(|&id| id == q)
                        .ok_or_else(|| Error::validation(format!("gallery index {g} has no metadata")))
                })
                .collect()
        })
        .collect()
}

/// Metrics over precomputed relevance lists (one trial).
pub fn evaluate_relevance(rel: &[Vec<bool>], n_gallery: usize, echo: ProtocolEcho, method: &str) -> Result<EvalReport> {
    if rel.is_empty() {
        return Err(Error::validation("evaluation needs at least one query"));
    }
    let mut aps = Vec::with_capacity(rel.len());
    let mut firsts = Vec::with_capacity(rel.len());
    for r in rel {
        if let (Some(ap), Some(f)) = (average_precision(r), first_match(r)) {
            aps.push(ap);
            firsts.push(f);
        }
    }
    Ok(EvalReport::from_parts(method, aps, &firsts, rel.len(), n_gallery, echo))
}

/// Metrics for one ranking run; relevance is same vehicle id.
pub fn evaluate(
    ranking: &RankingResult,
    queries: &DescriptorStore,
    gallery: &DescriptorStore,
    echo: ProtocolEcho,
    method: &str,
) -> Result<EvalReport> {
    let qids: Vec<u32> = queries.meta.iter().map(|m| m.vehicle_id).collect();
    let gids: Vec<u32> = gallery.meta.iter().map(|m| m.vehicle_id).collect();
    let rel = relevance(ranking, &qids, &gids)?;
    evaluate_relevance(&rel, gallery.len(), echo, method)
}

/// Fixed query/gallery evaluation.
pub fn evaluate_fixed(
    queries: &DescriptorStore,
    gallery: &DescriptorStore,
    filter: CameraFilter,
    max_rank: usize,
    method: &str,
) -> Result<EvalReport> {
    let ranking = rank(queries, gallery, filter)?;
    let echo = ProtocolEcho::new(Protocol::Veri, filter, 0, Vec::new(), max_rank);
    evaluate(&ranking, queries, gallery, echo, method)
}

/// Seeds of the `trials` random gallery draws.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|t| derive_seed(&[seed, tag::TRIAL, t])).collect()
}

/// Random-gallery evaluation over a pool of test descriptors: each trial draws
/// one gallery image per identity and uses the rest as probes. Per-query APs
/// and first-match ranks are pooled over all trials.
pub fn evaluate_trials(
    pool: &DescriptorStore,
    trials: usize,
    seed: u64,
    filter: CameraFilter,
    max_rank: usize,
    method: &str,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::validation("trials must be positive"));
    }
    let records: Vec<ImageRecord> = pool
        .meta
        .iter()
        .map(|m| ImageRecord {
            image_path: m.path.clone(),
            vehicle_id: m.vehicle_id,
            camera_id: m.camera_id,
            split: Split::Test,
        })
        .collect();
    let n_cameras = pool.meta.iter().map(|m| m.camera_id as usize + 1).max().unwrap_or(1);
    let manifest = DatasetManifest::new("pool", n_cameras, records, Default::default())?;
    let row_of: HashMap<_, _> = pool.meta.iter().enumerate().map(|(i, m)| (m.path.clone(), i)).collect();
    if row_of.len() != pool.len() {
        return Err(Error::validation("descriptor paths must be unique for trial evaluation"));
    }
    let seeds = trial_seeds(seed, trials);
    let mut aps = Vec::new();
    let mut firsts = Vec::new();
    let (mut n_queries, mut n_gallery) = (0, 0);
    for &s in &seeds {
        let qg = build_protocol(&manifest, Protocol::VehicleId, s)?;
        let qrows: Vec<usize> = qg.query.iter().map(|r| row_of[&r.image_path]).collect();
        let grows: Vec<usize> = qg.gallery.iter().map(|r| row_of[&r.image_path]).collect();
        let (q, g) = (pool.select(&qrows), pool.select(&grows));
        let ranking = rank(&q, &g, filter)?;
        let qids: Vec<u32> = q.meta.iter().map(|m| m.vehicle_id).collect();
        let gids: Vec<u32> = g.meta.iter().map(|m| m.vehicle_id).collect();
        for r in relevance(&ranking, &qids, &gids)? {
            if let (Some(ap), Some(f)) = (average_precision(&r), first_match(&r)) {
                aps.push(ap);
                firsts.push(f);
            }
        }
        n_queries += q.len();
        n_gallery = g.len();
    }
    if n_queries == 0 {
        return Err(Error::validation("no probes: every test identity has a single image"));
    }
    let echo = ProtocolEcho::new(Protocol::VehicleId, filter, seed, seeds, max_rank);
    Ok(EvalReport::from_parts(method, aps, &firsts, n_queries, n_gallery, echo))
}
