use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::DescriptorStore;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

/// Gallery filtering applied per query before ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraFilter {
    #[default]
    None,
    /// Drop gallery items with the query's vehicle id AND camera id.
    CrossCamera,
}

impl std::str::FromStr for CameraFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CameraFilter::None),
            "cross_camera" => Ok(CameraFilter::CrossCamera),
            _ => Err(Error::Config(format!("unknown filter {s:?} (none | cross_camera)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: usize,
    /// Gallery indices by ascending distance.
    pub gallery: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub filter: CameraFilter,
    pub rankings: Vec<QueryRanking>,
    /// Queries whose filtered gallery was empty.
    pub errors: Vec<(usize, String)>,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Rank every gallery row for every query by Euclidean distance; ties keep
/// gallery order.
pub fn rank(queries: &DescriptorStore, gallery: &DescriptorStore, filter: CameraFilter) -> Result<RankingResult> {
    if queries.dim != gallery.dim {
        return Err(Error::shape(format!(
            "query dim {} != gallery dim {}",
            queries.dim, gallery.dim
        )));
    }
    let mut rankings = Vec::with_capacity(queries.len());
    let mut errors = Vec::new();
    for qi in 0..queries.len() {
        let qm = &queries.meta[qi];
        let q = queries.row(qi);
        let mut scored: Vec<(usize, f64)> = (0..gallery.len())
            .filter(|&gi| {
                let gm = &gallery.meta[gi];
                filter == CameraFilter::None || gm.vehicle_id != qm.vehicle_id || gm.camera_id != qm.camera_id
            })
            .map(|gi| (gi, euclidean(q, gallery.row(gi))))
            .collect();
        if scored.is_empty() {
            errors.push((qi, "empty gallery after filtering".to_string()));
        }
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        rankings.push(QueryRanking {
            query: qi,
            gallery: scored.iter().map(|s| s.0).collect(),
            distances: scored.iter().map(|s| s.1).collect(),
        });
    }
    Ok(RankingResult {
        filter,
        rankings,
        errors,
    })
}

impl RankingResult {
    /// One JSON object per query: `{"query", "gallery", "distances"}`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = Vec::new();
        for r in &self.rankings {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").expect("writing to a Vec");
        }
        Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::super::store::DescriptorMeta;
    use super::*;

    fn store(rows: &[(&[f64], u32, u32)]) -> DescriptorStore {
        let mut s = DescriptorStore::new(rows[0].0.len(), serde_json::Value::Null);
        for (i, (r, id, cam)) in rows.iter().enumerate() {
            s.push(
                r,
                DescriptorMeta {
                    vehicle_id: *id,
                    camera_id: *cam,
                    path: format!("{i}").into(),
                },
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn hand_sorted_order() {
        let q = store(&[(&[0.0], 0, 0)]);
        let g = store(&[(&[3.0], 1, 0), (&[1.0], 2, 0), (&[-2.0], 3, 0)]);
        let r = rank(&q, &g, CameraFilter::None).unwrap();
        assert_eq!(r.rankings[0].gallery, vec![1, 2, 0]);
        assert_eq!(r.rankings[0].distances, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn exact_match_first_and_ties_stable() {
        let q = store(&[(&[1.0, 1.0], 0, 0)]);
        let g = store(&[(&[2.0, 1.0], 1, 0), (&[1.0, 1.0], 0, 1), (&[0.0, 1.0], 2, 0)]);
        let r = rank(&q, &g, CameraFilter::None).unwrap();
        assert_eq!(r.rankings[0].gallery, vec![1, 0, 2]);
        assert_eq!(r.rankings[0].distances[0], 0.0);
    }

    #[test]
    fn cross_camera_filter_needs_both_ids() {
        let q = store(&[(&[0.0], 5, 1)]);
        let g = store(&[(&[0.0], 5, 1), (&[1.0], 5, 2), (&[2.0], 6, 1)]);
        let r = rank(&q, &g, CameraFilter::CrossCamera).unwrap();
        assert_eq!(r.rankings[0].gallery, vec![1, 2]);
        let g = store(&[(&[0.0], 5, 1)]);
        let r = rank(&q, &g, CameraFilter::CrossCamera).unwrap();
        assert_eq!(r.errors.len(), 1);
        assert!(r.rankings[0].gallery.is_empty());
    }

    #[test]
    fn dim_mismatch() {
        let q = store(&[(&[0.0], 0, 0)]);
        let g = store(&[(&[0.0, 1.0], 0, 0)]);
        assert!(rank(&q, &g, CameraFilter::None).is_err());
    }
}
