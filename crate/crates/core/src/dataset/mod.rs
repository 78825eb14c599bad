//! Object/attribute/category triples over precomputed embeddings.

mod io;
mod synth;

pub use io::{load, save, MANIFEST_FILE};
pub use synth::{DEFAULT_SEED, generate_synthetic, generate_synthetic_with_geometry, SynthConfig, SynthGeometry};

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, NumericsError, Vector};

/// Tolerance for checking stored pooled vectors against their sequences.
pub const POOLING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot pool an empty sequence")]
    EmptySequence,
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {sample} references unknown category {category}")]
    UnknownCategory { sample: usize, category: usize },
    #[error("invalid identifiers: {0}")]
    InvalidIds(String),
    #[error("sample {sample}: stored {which} embedding does not match its pooled sequence")]
    SequenceMismatch { sample: usize, which: &'static str },
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How a token-embedding sequence collapses to one vector.
///
/// `Last` also covers terminator pooling: the terminator is appended
/// upstream, so it is the final element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    #[default]
    Last,
    Mean,
}

pub fn pool(seq: &[Vector], mode: PoolingMode) -> Result<Vector, DatasetError> {
    let last = seq.last().ok_or(DatasetError::EmptySequence)?;
    let dim = last.dim();
    if let Some(v) = seq.iter().find(|v| v.dim() != dim) {
        return Err(DatasetError::DimMismatch {
            what: "sequence element".into(),
            expected: dim,
            found: v.dim(),
        });
    }
    match mode {
        PoolingMode::Last => Ok(last.clone()),
        PoolingMode::Mean => {
            let mut acc = vec![0.0; dim];
            for v in seq {
                for (a, x) in acc.iter_mut().zip(v.as_slice()) {
                    *a += x;
                }
            }
            let n = seq.len() as f64;
            Ok(Vector::new(acc.into_iter().map(|x| x / n).collect())?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    pub name: String,
    pub name_embedding: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    categories: Vec<Category>,
    super_category: String,
}

impl CategoryTable {
    /// Ids must be `0..len` in order and all name embeddings share a dimension.
    pub fn new(categories: Vec<Category>, super_category: impl Into<String>) -> Result<Self, DatasetError> {
        let first = categories
            .first()
            .ok_or_else(|| DatasetError::InvalidIds("category table is empty".into()))?;
        let dim = first.name_embedding.dim();
        for (i, c) in categories.iter().enumerate() {
            if c.id != i {
                return Err(DatasetError::InvalidIds(format!(
                    "category at position {i} has id {}",
                    c.id
                )));
            }
            if c.name_embedding.dim() != dim {
                return Err(DatasetError::DimMismatch {
                    what: format!("category {i} name embedding"),
                    expected: dim,
                    found: c.name_embedding.dim(),
                });
            }
        }
        Ok(Self {
            categories,
            super_category: super_category.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Category> {
        self.categories.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }

    pub fn super_category(&self) -> &str {
        &self.super_category
    }

    pub fn embedding_dim(&self) -> usize {
        self.categories[0].name_embedding.dim()
    }

    /// All name embeddings stacked in id order.
    pub fn embedding_matrix(&self) -> Matrix {
        let rows: Vec<&Vector> = self.categories.iter().map(|c| &c.name_embedding).collect();
        Matrix::from_vectors(&rows).expect("validated table")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTriple {
    pub id: usize,
    pub object_embedding: Vector,
    pub attribute_embedding: Vector,
    pub category: usize,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_sequence: Option<Vec<Vector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_sequence: Option<Vec<Vector>>,
}

impl SampleTriple {
    pub fn new(
        id: usize,
        object_embedding: Vector,
        attribute_embedding: Vector,
        category: usize,
        split: Split,
    ) -> Self {
        Self {
            id,
            object_embedding,
            attribute_embedding,
            category,
            split,
            object_sequence: None,
            attribute_sequence: None,
        }
    }

    /// Builds a triple whose pooled embeddings come from token sequences.
    pub fn from_sequences(
        id: usize,
        object_sequence: Vec<Vector>,
        attribute_sequence: Vec<Vector>,
        category: usize,
        split: Split,
        mode: PoolingMode,
    ) -> Result<Self, DatasetError> {
        Ok(Self {
            id,
            object_embedding: pool(&object_sequence, mode)?,
            attribute_embedding: pool(&attribute_sequence, mode)?,
            category,
            split,
            object_sequence: Some(object_sequence),
            attribute_sequence: Some(attribute_sequence),
        })
    }
}

/// Triples plus their category table. Immutable once built.
///
/// Sample ids equal their position in `samples`; each sample carries its
/// own train/test tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDataset {
    table: CategoryTable,
    samples: Vec<SampleTriple>,
    pooling: PoolingMode,
    dim_object: usize,
    dim_text: usize,
}

impl AlignmentDataset {
    pub fn new(
        table: CategoryTable,
        samples: Vec<SampleTriple>,
        pooling: PoolingMode,
    ) -> Result<Self, DatasetError> {
        let first = samples
            .first()
            .ok_or_else(|| DatasetError::InvalidIds("dataset has no samples".into()))?;
        let dim_object = first.object_embedding.dim();
        let dim_text = table.embedding_dim();
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(DatasetError::InvalidIds(format!(
                    "sample at position {i} has id {}",
                    s.id
                )));
            }
            if s.category >= table.len() {
                return Err(DatasetError::UnknownCategory {
                    sample: s.id,
                    category: s.category,
                });
            }
            if s.object_embedding.dim() != dim_object {
                return Err(DatasetError::DimMismatch {
                    what: format!("sample {i} object embedding"),
                    expected: dim_object,
                    found: s.object_embedding.dim(),
                });
            }
            if s.attribute_embedding.dim() != dim_text {
                return Err(DatasetError::DimMismatch {
                    what: format!("sample {i} attribute embedding"),
                    expected: dim_text,
                    found: s.attribute_embedding.dim(),
                });
            }
            check_sequence(s.id, "object", s.object_sequence.as_deref(), &s.object_embedding, pooling)?;
            check_sequence(
                s.id,
                "attribute",
                s.attribute_sequence.as_deref(),
                &s.attribute_embedding,
                pooling,
            )?;
        }
        Ok(Self {
            table,
            samples,
            pooling,
            dim_object,
            dim_text,
        })
    }

    pub fn table(&self) -> &CategoryTable {
        &self.table
    }

    pub fn samples(&self) -> &[SampleTriple] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> Option<&SampleTriple> {
        self.samples.get(id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pooling(&self) -> PoolingMode {
        self.pooling
    }

    pub fn dim_object(&self) -> usize {
        self.dim_object
    }

    pub fn dim_text(&self) -> usize {
        self.dim_text
    }

    pub fn num_categories(&self) -> usize {
        self.table.len()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleTriple> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        self.split(split).map(|s| s.id).collect()
    }

    /// Object embeddings of `ids`, stacked in the given order.
    pub fn object_matrix(&self, ids: &[usize]) -> Matrix {
        let rows: Vec<&Vector> = ids.iter().map(|&i| &self.samples[i].object_embedding).collect();
        Matrix::from_vectors(&rows).expect("validated dataset")
    }

    pub fn attribute_matrix(&self, ids: &[usize]) -> Matrix {
        let rows: Vec<&Vector> = ids
            .iter()
            .map(|&i| &self.samples[i].attribute_embedding)
            .collect();
        Matrix::from_vectors(&rows).expect("validated dataset")
    }

    /// Category name embeddings for the given category ids.
    pub fn category_matrix(&self, categories: &[usize]) -> Matrix {
        let rows: Vec<&Vector> = categories
            .iter()
            .map(|&c| &self.table.categories[c].name_embedding)
            .collect();
        Matrix::from_vectors(&rows).expect("validated dataset")
    }

    pub fn labels(&self, ids: &[usize]) -> Vec<usize> {
        ids.iter().map(|&i| self.samples[i].category).collect()
    }
}

fn check_sequence(
    sample: usize,
    which: &'static str,
    seq: Option<&[Vector]>,
    stored: &Vector,
    mode: PoolingMode,
) -> Result<(), DatasetError> {
    let Some(seq) = seq else { return Ok(()) };
    let pooled = pool(seq, mode)?;
    if pooled.dim() != stored.dim() {
        return Err(DatasetError::DimMismatch {
            what: format!("sample {sample} {which} sequence"),
            expected: stored.dim(),
            found: pooled.dim(),
        });
    }
    let close = pooled
        .as_slice()
        .iter()
        .zip(stored.as_slice())
        .all(|(a, b)| (a - b).abs() <= POOLING_TOLERANCE);
    if !close {
        return Err(DatasetError::SequenceMismatch { sample, which });
    }
    Ok(())
}
