//! Query/gallery protocol construction.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Fixed query and gallery splits.
    Veri,
    /// One random gallery image per test identity; the rest are probes.
    VehicleId,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "veri" => Ok(Protocol::Veri),
            "vehicleid" => Ok(Protocol::VehicleId),
            _ => Err(Error::Config(format!("unknown protocol {s:?} (veri | vehicleid)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryGallery {
    pub query: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
}

/// Split the test part of `manifest` into query and gallery.
///
/// Under `VehicleId` all non-train records (query, gallery and test) form the
/// test pool; `seed` picks one gallery image per identity.
pub fn build_protocol(manifest: &DatasetManifest, protocol: Protocol, seed: u64) -> Result<QueryGallery> {
    match protocol {
        Protocol::Veri => {
            let query: Vec<_> = manifest.split(Split::Query).cloned().collect();
            let gallery: Vec<_> = manifest.split(Split::Gallery).cloned().collect();
            if query.is_empty() || gallery.is_empty() {
                return Err(Error::validation(format!(
                    "veri protocol needs query and gallery records ({} query, {} gallery)",
                    query.len(),
                    gallery.len()
                )));
            }
            Ok(QueryGallery { query, gallery })
        }
        Protocol::VehicleId => {
            let mut by_id: BTreeMap<u32, Vec<&ImageRecord>> = BTreeMap::new();
            for r in manifest.records.iter().filter(|r| r.split != Split::Train) {
                by_id.entry(r.vehicle_id).or_default().push(r);
            }
            if by_id.is_empty() {
                return Err(Error::validation("vehicleid protocol: empty test split"));
            }
            let mut rng = stream(&[seed, tag::PROTOCOL]);
            let mut query = Vec::new();
            let mut gallery = Vec::new();
            for group in by_id.values() {
                let pick = *group.choose(&mut rng).expect("groups are non-empty");
                gallery.push(pick.clone());
                query.extend(group.iter().filter(|r| !std::ptr::eq(**r, pick)).map(|r| (*r).clone()));
            }
            Ok(QueryGallery { query, gallery })
        }
    }
}
