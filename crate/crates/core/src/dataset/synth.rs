//! Seeded Gaussian-cluster triples with a controllable object/category gap.
//!
//! Class directions live on the unit sphere of the text space as
//! `normalize(base + spread * z_c)` with `z_c ~ N(0, I/dim)`, so a spread of 0
//! collapses every class onto one direction and a large spread approaches
//! independent random directions. Objects are the class direction rotated
//! into object space, plus isotropic noise and one offset vector shared by
//! every object (the modality gap).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AlignmentDataset, Category, CategoryTable, DatasetError, PoolingMode, SampleTriple, Split};
use crate::numerics::{Matrix, Vector};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim_object: usize,
    pub dim_text: usize,
    pub inter_class_spread: f64,
    pub intra_class_sigma: f64,
    pub modality_gap_offset: f64,
    pub attribute_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 50,
            dim_object: 32,
            dim_text: 32,
            inter_class_spread: 1.0,
            intra_class_sigma: 0.1,
            modality_gap_offset: 1.0,
            attribute_noise_sigma: 0.1,
            seed: DEFAULT_SEED,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.samples_per_class == 0 || self.dim_object == 0 || self.dim_text == 0 {
            return bad("samples_per_class and dimensions must be positive");
        }
        for (name, x) in [
            ("inter_class_spread", self.inter_class_spread),
            ("intra_class_sigma", self.intra_class_sigma),
            ("modality_gap_offset", self.modality_gap_offset),
            ("attribute_noise_sigma", self.attribute_noise_sigma),
        ] {
            if !x.is_finite() || x < 0.0 {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Ground-truth geometry behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGeometry {
    /// `dim_object × dim_text` map with orthonormal columns (or rows, when
    /// the object space is smaller).
    pub rotation: Matrix,
    /// Offset shared by every object embedding.
    pub gap: Vector,
    /// Unit class directions in text space, one row per class.
    pub class_directions: Matrix,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<AlignmentDataset, DatasetError> {
    generate_synthetic_with_geometry(cfg).map(|(ds, _)| ds)
}

pub fn generate_synthetic_with_geometry(
    cfg: &SynthConfig,
) -> Result<(AlignmentDataset, SynthGeometry), DatasetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dt = cfg.dim_text;
    let d_o = cfg.dim_object;

    let base = unit_gaussian(&mut rng, dt);
    let mut directions = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let scale = cfg.inter_class_spread / (dt as f64).sqrt();
        let mut dir: Vec<f64> = base
            .iter()
            .map(|b| b + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        normalize_in_place(&mut dir);
        directions.push(dir);
    }

    let rotation = random_orthonormal(&mut rng, d_o, dt);
    let gap: Vec<f64> = unit_gaussian(&mut rng, d_o)
        .into_iter()
        .map(|x| x * cfg.modality_gap_offset)
        .collect();

    let categories = directions
        .iter()
        .enumerate()
        .map(|(id, dir)| {
            Ok(Category {
                id,
                name: format!("class_{id:02}"),
                name_embedding: Vector::new(dir.clone())?,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let table = CategoryTable::new(categories, "synthetic")?;

    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for (class, dir) in directions.iter().enumerate() {
        let rotated = matvec(&rotation, dir);
        for _ in 0..cfg.samples_per_class {
            let object: Vec<f64> = rotated
                .iter()
                .zip(&gap)
                .map(|(r, g)| r + g + cfg.intra_class_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut attribute: Vec<f64> = dir
                .iter()
                .map(|x| x + cfg.attribute_noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            normalize_in_place(&mut attribute);
            let id = samples.len();
            samples.push(SampleTriple::new(
                id,
                Vector::new(object)?,
                Vector::new(attribute)?,
                class,
                Split::Train,
            ));
        }
    }

    // Stratified 80/20: shuffle within each class, tag the leading fifth as test.
    let n = cfg.samples_per_class;
    let test_per_class = if n >= 2 { (n / 5).max(1) } else { 0 };
    for class in 0..cfg.num_classes {
        let mut ids: Vec<usize> = (class * n..(class + 1) * n).collect();
        ids.shuffle(&mut rng);
        for &id in ids.iter().take(test_per_class) {
            samples[id].split = Split::Test;
        }
    }

    let geometry = SynthGeometry {
        rotation: rotation.clone(),
        gap: Vector::new(gap)?,
        class_directions: Matrix::from_rows(&directions)?,
    };
    let ds = AlignmentDataset::new(table, samples, PoolingMode::Last)?;
    Ok((ds, geometry))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if normalize_in_place(&mut v) {
            return v;
        }
    }
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let n = crate::numerics::norm(v);
    if n < crate::numerics::DEGENERATE_NORM {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Gaussian matrix orthonormalized by QR.
fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let g = DMatrix::<f64>::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let x = if tall { q[(i, j)] } else { q[(j, i)] };
            out.set(i, j, x);
        }
    }
    out
}

fn matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| crate::numerics::dot(m.row(r), v)).collect()
}
