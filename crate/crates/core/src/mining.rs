//! Hard-negative mining over the frozen object-embedding space.
//!
//! For every training anchor, incorrect categories are ranked by cosine
//! similarity between the anchor's raw object embedding and each category's
//! train-split centroid. From each of the top `k` categories the single
//! train sample closest to the anchor is taken as the representative, which
//! supplies both the negative attribute and the negative category name.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AlignmentDataset, Split};
use crate::numerics::{cosine_slices, DegeneratePolicy, NumericsError};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("mining needs at least two categories with training samples, found {0}")]
    TooFewCategories(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("negative set format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Space in which similarity is measured during mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningReference {
    #[default]
    ObjectEmbedding,
}

/// How a negative set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Hard,
    Simple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeEntry {
    pub category: usize,
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegativeSet {
    pub k: usize,
    pub kind: NegativeKind,
    pub reference: MiningReference,
    entries: BTreeMap<usize, Vec<NegativeEntry>>,
}

impl HardNegativeSet {
    pub fn get(&self, sample: usize) -> Option<&[NegativeEntry]> {
        self.entries.get(&sample).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[NegativeEntry])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// Number of entries per anchor, which is below `k` when too few
    /// incorrect categories exist.
    pub fn effective_k(&self) -> usize {
        self.entries.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn is_clamped(&self) -> bool {
        self.effective_k() < self.k
    }

    /// Sample ids of `ids` that have no entry.
    pub fn missing(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().copied().filter(|i| !self.entries.contains_key(i)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), MiningError> {
        let text = serde_json::to_string_pretty(self).expect("negative set serializes");
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MiningError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            MiningError::Format(format!("{}: line {}: {e}", path.display(), e.line()))
        })
    }
}

/// Train-split sample ids grouped by category.
fn train_members(ds: &AlignmentDataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); ds.num_categories()];
    for s in ds.split(Split::Train) {
        members[s.category].push(s.id);
    }
    members
}

pub fn mine(
    ds: &AlignmentDataset,
    k: usize,
    reference: MiningReference,
) -> Result<HardNegativeSet, MiningError> {
    if k == 0 {
        return Err(MiningError::InvalidK);
    }
    let members = train_members(ds);
    let populated = members.iter().filter(|m| !m.is_empty()).count();
    if populated < 2 {
        return Err(MiningError::TooFewCategories(populated));
    }

    let dim = ds.dim_object();
    let prototypes: Vec<Option<Vec<f64>>> = members
        .iter()
        .map(|ids| {
            if ids.is_empty() {
                return None;
            }
            let mut acc = vec![0.0; dim];
            for &i in ids {
                for (a, x) in acc.iter_mut().zip(ds.samples()[i].object_embedding.as_slice()) {
                    *a += x;
                }
            }
            let n = ids.len() as f64;
            Some(acc.into_iter().map(|x| x / n).collect())
        })
        .collect();

    let anchors = ds.split_ids(Split::Train);
    let mined: Vec<(usize, Vec<NegativeEntry>)> = anchors
        .par_iter()
        .map(|&anchor| {
            let own = ds.samples()[anchor].category;
            let obj = ds.samples()[anchor].object_embedding.as_slice();
            let mut ranked: Vec<(f64, usize)> = Vec::new();
            for (c, proto) in prototypes.iter().enumerate() {
                let Some(proto) = proto else { continue };
                if c == own {
                    continue;
                }
                ranked.push((cosine_slices(obj, proto, DegeneratePolicy::Strict)?, c));
            }
            // descending similarity, ties to the lower category id
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut out = Vec::with_capacity(k);
            for &(_, c) in ranked.iter().take(k) {
                let mut best: Option<(f64, usize)> = None;
                for &j in &members[c] {
                    let s = cosine_slices(
                        obj,
                        ds.samples()[j].object_embedding.as_slice(),
                        DegeneratePolicy::Strict,
                    )?;
                    if best.map_or(true, |(bs, _)| s > bs) {
                        best = Some((s, j));
                    }
                }
                let (_, sample) = best.expect("populated category");
                out.push(NegativeEntry { category: c, sample });
            }
            Ok((anchor, out))
        })
        .collect::<Result<_, MiningError>>()?;

    Ok(HardNegativeSet {
        k,
        kind: NegativeKind::Hard,
        reference,
        entries: mined.into_iter().collect(),
    })
}

/// Uniformly random incorrect categories, each with a uniformly random
/// train sample. Used as the "simple negatives" baseline.
pub fn sample_simple(ds: &AlignmentDataset, k: usize, seed: u64) -> Result<HardNegativeSet, MiningError> {
    if k == 0 {
        return Err(MiningError::InvalidK);
    }
    let members = train_members(ds);
    let populated: Vec<usize> = (0..members.len()).filter(|&c| !members[c].is_empty()).collect();
    if populated.len() < 2 {
        return Err(MiningError::TooFewCategories(populated.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = BTreeMap::new();
    for anchor in ds.split_ids(Split::Train) {
        let own = ds.samples()[anchor].category;
        let candidates: Vec<usize> = populated.iter().copied().filter(|&c| c != own).collect();
        let take = k.min(candidates.len());
        let picks = sample_indices(&mut rng, candidates.len(), take);
        let list = picks
            .into_iter()
            .map(|i| {
                let c = candidates[i];
                let sample = members[c][rng.gen_range(0..members[c].len())];
                NegativeEntry { category: c, sample }
            })
            .collect();
        entries.insert(anchor, list);
    }
    Ok(HardNegativeSet {
        k,
        kind: NegativeKind::Simple,
        reference: MiningReference::ObjectEmbedding,
        entries,
    })
}
