//! Dataset directories: a JSON manifest plus raw `f64` blocks.
//!
//! ```text
//! dataset/
//!   manifest.json        dims, pooling, names, per-sample category/split
//!   categories.f64       C × dim_text
//!   objects.f64          N × dim_object
//!   attributes.f64       N × dim_text
//!   object_seq.f64       optional, Σ lengths × dim_object
//!   attribute_seq.f64    optional, Σ lengths × dim_text
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AlignmentDataset, Category, CategoryTable, DatasetError, PoolingMode, SampleTriple, Split};
use crate::blockfile::{read_block, write_block, BlockError};
use crate::numerics::Vector;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_TAG: &str = "attralign-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    super_category: String,
    pooling: PoolingMode,
    dim_object: usize,
    dim_text: usize,
    categories: Vec<CategoryEntry>,
    samples: Vec<SampleEntry>,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CategoryEntry {
    id: usize,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleEntry {
    id: usize,
    category: usize,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object_seq_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attribute_seq_len: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    file: String,
    rows: usize,
    cols: usize,
}

pub fn save(ds: &AlignmentDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut blocks = Vec::new();
    let mut put = |name: &str, rows: usize, cols: usize, data: Vec<f64>| -> Result<(), DatasetError> {
        let file = format!("{name}.f64");
        write_block(&dir.join(&file), &data)?;
        blocks.push(BlockEntry { name: name.into(), file, rows, cols });
        Ok(())
    };

    let table = ds.table();
    put(
        "categories",
        table.len(),
        ds.dim_text(),
        table.embedding_matrix().as_slice().to_vec(),
    )?;
    let flat = |f: &dyn Fn(&SampleTriple) -> &Vector| -> Vec<f64> {
        ds.samples().iter().flat_map(|s| f(s).as_slice().iter().copied()).collect()
    };
    put("objects", ds.len(), ds.dim_object(), flat(&|s| &s.object_embedding))?;
    put("attributes", ds.len(), ds.dim_text(), flat(&|s| &s.attribute_embedding))?;

    let seq_block = |get: &dyn Fn(&SampleTriple) -> Option<&Vec<Vector>>| -> Option<(usize, Vec<f64>)> {
        if ds.samples().iter().all(|s| get(s).is_none()) {
            return None;
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for s in ds.samples() {
            for v in get(s).into_iter().flatten() {
                rows += 1;
                data.extend_from_slice(v.as_slice());
            }
        }
        Some((rows, data))
    };
    if let Some((rows, data)) = seq_block(&|s| s.object_sequence.as_ref()) {
        put("object_seq", rows, ds.dim_object(), data)?;
    }
    if let Some((rows, data)) = seq_block(&|s| s.attribute_sequence.as_ref()) {
        put("attribute_seq", rows, ds.dim_text(), data)?;
    }

    let manifest = Manifest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        super_category: table.super_category().into(),
        pooling: ds.pooling(),
        dim_object: ds.dim_object(),
        dim_text: ds.dim_text(),
        categories: table
            .iter()
            .map(|c| CategoryEntry { id: c.id, name: c.name.clone() })
            .collect(),
        samples: ds
            .samples()
            .iter()
            .map(|s| SampleEntry {
                id: s.id,
                category: s.category,
                split: s.split,
                object_seq_len: s.object_sequence.as_ref().map(Vec::len),
                attribute_seq_len: s.attribute_sequence.as_ref().map(Vec::len),
            })
            .collect(),
        blocks,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<AlignmentDataset, DatasetError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Format {
        file: manifest_path.display().to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    let format_err = |message: String| DatasetError::Format {
        file: manifest_path.display().to_string(),
        message,
    };
    if m.format != FORMAT_TAG || m.version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported format {:?} version {}",
            m.format, m.version
        )));
    }

    let read = |name: &str, rows: usize, cols: usize| -> Result<Option<Vec<Vec<f64>>>, DatasetError> {
        let Some(entry) = m.blocks.iter().find(|b| b.name == name) else {
            return Ok(None);
        };
        if entry.rows != rows || entry.cols != cols {
            return Err(DatasetError::DimMismatch {
                what: format!("block {name} shape {}x{}", entry.rows, entry.cols),
                expected: rows * cols,
                found: entry.rows * entry.cols,
            });
        }
        let path = dir.join(&entry.file);
        let data = read_block(&path, rows * cols).map_err(|e| match e {
            BlockError::Io(io) => DatasetError::Io(io),
            other => DatasetError::Format {
                file: path.display().to_string(),
                message: other.to_string(),
            },
        })?;
        Ok(Some(data.chunks(cols).map(<[f64]>::to_vec).collect()))
    };
    let required = |name: &str, rows: usize, cols: usize| {
        read(name, rows, cols)?.ok_or_else(|| format_err(format!("missing block {name}")))
    };

    let n = m.samples.len();
    let cat_rows = required("categories", m.categories.len(), m.dim_text)?;
    let objects = required("objects", n, m.dim_object)?;
    let attributes = required("attributes", n, m.dim_text)?;
    let seq_total = |f: fn(&SampleEntry) -> Option<usize>| m.samples.iter().filter_map(f).sum::<usize>();
    let object_seq = read("object_seq", seq_total(|s| s.object_seq_len), m.dim_object)?;
    let attribute_seq = read("attribute_seq", seq_total(|s| s.attribute_seq_len), m.dim_text)?;

    let categories = m
        .categories
        .iter()
        .zip(cat_rows)
        .map(|(c, row)| {
            Ok(Category {
                id: c.id,
                name: c.name.clone(),
                name_embedding: Vector::new(row)?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let table = CategoryTable::new(categories, m.super_category.clone())?;

    let mut obj_cursor = 0;
    let mut att_cursor = 0;
    let mut samples = Vec::with_capacity(n);
    for ((entry, obj), att) in m.samples.iter().zip(objects).zip(attributes) {
        let mut s = SampleTriple::new(entry.id, Vector::new(obj)?, Vector::new(att)?, entry.category, entry.split);
        if let (Some(len), Some(rows)) = (entry.object_seq_len, object_seq.as_ref()) {
            s.object_sequence = Some(take_rows(rows, &mut obj_cursor, len)?);
        }
        if let (Some(len), Some(rows)) = (entry.attribute_seq_len, attribute_seq.as_ref()) {
            s.attribute_sequence = Some(take_rows(rows, &mut att_cursor, len)?);
        }
        samples.push(s);
    }
    let ds = AlignmentDataset::new(table, samples, m.pooling)?;
    if ds.dim_object() != m.dim_object {
        return Err(DatasetError::DimMismatch {
            what: "manifest dim_object".into(),
            expected: m.dim_object,
            found: ds.dim_object(),
        });
    }
    Ok(ds)
}

fn take_rows(rows: &[Vec<f64>], cursor: &mut usize, len: usize) -> Result<Vec<Vector>, DatasetError> {
    let out = rows[*cursor..*cursor + len]
        .iter()
        .map(|r| Vector::new(r.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    *cursor += len;
    Ok(out)
}
