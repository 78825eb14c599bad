//! Trainable projection heads and the stage-two classifier.
//!
//! Objects pass the object head; attributes and category names pass the
//! text head (or a separate category head when heads are untied). Every
//! head output is L2-normalized into the shared space.

mod adam;
mod checkpoint;

pub use adam::{adam_step, warmup_lr, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::{BatchViews, LossError, ViewNodes};
use crate::numerics::{Matrix, NodeId, NumericsError, Tape};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter {index}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Matrix,
    /// `1 × out`
    pub bias: Matrix,
}

/// Feed-forward head. The activation sits between layers, not after the
/// last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`, Gaussian weights with
    /// `std = 1/sqrt(fan_in)` and zero biases.
    pub fn random(dims: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self, ModelError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ModelError::InvalidSpec(format!("head dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let std = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Linear {
                    weight: Matrix::new(w[0], w[1], data).expect("finite gaussian"),
                    bias: Matrix::zeros(1, w[1]),
                }
            })
            .collect();
        Ok(Self { activation, layers })
    }

    /// Single layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        Self::affine(Matrix::identity(dim), Matrix::zeros(1, dim)).expect("square identity")
    }

    /// Single affine layer `x ↦ x·W + b`.
    pub fn affine(weight: Matrix, bias: Matrix) -> Result<Self, ModelError> {
        if bias.shape() != (1, weight.cols()) {
            return Err(ModelError::ShapeMismatch {
                index: 1,
                expected: (1, weight.cols()),
                found: bias.shape(),
            });
        }
        Ok(Self {
            activation: Activation::Identity,
            layers: vec![Linear { weight, bias }],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty head").weight.cols()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.cols()));
        d
    }

    fn parameters(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Forward pass on the tape, parameters given as `[w0, b0, w1, b1, ..]`.
    fn forward_tape(&self, tape: &mut Tape, params: &[NodeId], x: NodeId) -> Result<NodeId, ModelError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in params.chunks(2).enumerate() {
            h = tape.matmul(h, pair[0])?;
            h = tape.add_row(h, pair[1])?;
            if i < last && self.activation == Activation::Gelu {
                h = tape.gelu(h)?;
            }
        }
        Ok(h)
    }
}

/// Shape of a freshly initialized [`ProjectionModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub dim_object: usize,
    pub dim_text: usize,
    /// Shared output dimension.
    pub dim_shared: usize,
    /// Hidden width; `None` means twice the shared dimension.
    pub hidden: Option<usize>,
    /// Number of linear layers per head.
    pub layers: usize,
    pub activation: Activation,
    pub tie_text_heads: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            dim_object: 32,
            dim_text: 32,
            dim_shared: 64,
            hidden: None,
            layers: 2,
            activation: Activation::Gelu,
            tie_text_heads: true,
        }
    }
}

impl ModelSpec {
    pub fn for_dims(dim_object: usize, dim_text: usize) -> Self {
        Self { dim_object, dim_text, ..Self::default() }
    }

    fn head_dims(&self, input: usize) -> Vec<usize> {
        let hidden = self.hidden.unwrap_or(2 * self.dim_shared);
        let mut d = vec![input];
        d.extend(std::iter::repeat(hidden).take(self.layers.saturating_sub(1)));
        d.push(self.dim_shared);
        d
    }
}

/// Raw (pre-projection) embeddings of one batch, hard negatives flattened
/// with their owning row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBatch {
    pub objects: Matrix,
    pub attributes: Matrix,
    pub categories: Matrix,
    pub neg_owner: Vec<usize>,
    pub neg_attributes: Option<Matrix>,
    pub neg_categories: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub object_head: Mlp,
    pub text_head: Mlp,
    /// Separate head for category names; `None` when text heads are tied.
    pub category_head: Option<Mlp>,
}

/// Tape leaves for every model parameter, in [`ProjectionModel::parameters`] order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub all: Vec<NodeId>,
    object: std::ops::Range<usize>,
    text: std::ops::Range<usize>,
    category: Option<std::ops::Range<usize>>,
}

impl ProjectionModel {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        if spec.layers == 0 || spec.dim_shared == 0 {
            return Err(ModelError::InvalidSpec("layers and dim_shared must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let object_head = Mlp::random(&spec.head_dims(spec.dim_object), spec.activation, &mut rng)?;
        let text_head = Mlp::random(&spec.head_dims(spec.dim_text), spec.activation, &mut rng)?;
        let category_head = if spec.tie_text_heads {
            None
        } else {
            Some(Mlp::random(&spec.head_dims(spec.dim_text), spec.activation, &mut rng)?)
        };
        Ok(Self { object_head, text_head, category_head })
    }

    pub fn from_heads(object_head: Mlp, text_head: Mlp, category_head: Option<Mlp>) -> Result<Self, ModelError> {
        let out = object_head.output_dim();
        for (what, head) in [("text head output", Some(&text_head)), ("category head output", category_head.as_ref())] {
            if let Some(h) = head {
                if h.output_dim() != out {
                    return Err(ModelError::DimMismatch { what, expected: out, found: h.output_dim() });
                }
            }
        }
        if let Some(c) = &category_head {
            if c.input_dim() != text_head.input_dim() {
                return Err(ModelError::DimMismatch {
                    what: "category head input",
                    expected: text_head.input_dim(),
                    found: c.input_dim(),
                });
            }
        }
        Ok(Self { object_head, text_head, category_head })
    }

    pub fn dim_object(&self) -> usize {
        self.object_head.input_dim()
    }

    pub fn dim_text(&self) -> usize {
        self.text_head.input_dim()
    }

    pub fn dim_shared(&self) -> usize {
        self.object_head.output_dim()
    }

    pub fn tied(&self) -> bool {
        self.category_head.is_none()
    }

    fn category_head(&self) -> &Mlp {
        self.category_head.as_ref().unwrap_or(&self.text_head)
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        let mut p: Vec<&Matrix> = self.object_head.parameters().collect();
        p.extend(self.text_head.parameters());
        if let Some(c) = &self.category_head {
            p.extend(c.parameters());
        }
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p: Vec<&mut Matrix> = self.object_head.parameters_mut().collect();
        p.extend(self.text_head.parameters_mut());
        if let Some(c) = &mut self.category_head {
            p.extend(c.parameters_mut());
        }
        p
    }

    /// Indices into [`Self::parameters`] that belong to the object head.
    pub fn object_param_range(&self) -> std::ops::Range<usize> {
        0..self.object_head.layers.len() * 2
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn record_params(&self, tape: &mut Tape) -> ParamNodes {
        let all: Vec<NodeId> = self.parameters().into_iter().map(|m| tape.leaf(m.clone())).collect();
        let no = self.object_head.layers.len() * 2;
        let nt = self.text_head.layers.len() * 2;
        let category = self
            .category_head
            .as_ref()
            .map(|c| no + nt..no + nt + c.layers.len() * 2);
        ParamNodes { all, object: 0..no, text: no..no + nt, category }
    }

    fn check_input(&self, x: &Matrix, expected: usize, what: &'static str) -> Result<(), ModelError> {
        if x.cols() != expected {
            return Err(ModelError::DimMismatch { what, expected, found: x.cols() });
        }
        Ok(())
    }

    pub fn project_objects_tape(&self, tape: &mut Tape, p: &ParamNodes, x: NodeId) -> Result<NodeId, ModelError> {
        self.check_input(tape.value(x), self.dim_object(), "object embedding")?;
        let h = self.object_head.forward_tape(tape, &p.all[p.object.clone()], x)?;
        Ok(tape.normalize_rows(h)?)
    }

    pub fn project_attributes_tape(&self, tape: &mut Tape, p: &ParamNodes, x: NodeId) -> Result<NodeId, ModelError> {
        self.check_input(tape.value(x), self.dim_text(), "attribute embedding")?;
        let h = self.text_head.forward_tape(tape, &p.all[p.text.clone()], x)?;
        Ok(tape.normalize_rows(h)?)
    }

    pub fn project_categories_tape(&self, tape: &mut Tape, p: &ParamNodes, x: NodeId) -> Result<NodeId, ModelError> {
        self.check_input(tape.value(x), self.dim_text(), "category embedding")?;
        let range = p.category.clone().unwrap_or(p.text.clone());
        let h = self.category_head().forward_tape(tape, &p.all[range], x)?;
        Ok(tape.normalize_rows(h)?)
    }

    /// Projects a raw batch on the tape.
    pub fn forward_tape(&self, tape: &mut Tape, p: &ParamNodes, raw: &RawBatch, tau: f64) -> Result<ViewNodes, ModelError> {
        let o = tape.leaf(raw.objects.clone());
        let a = tape.leaf(raw.attributes.clone());
        let c = tape.leaf(raw.categories.clone());
        let objects = self.project_objects_tape(tape, p, o)?;
        let attributes = self.project_attributes_tape(tape, p, a)?;
        let categories = self.project_categories_tape(tape, p, c)?;
        let neg_attributes = match &raw.neg_attributes {
            Some(m) => {
                let x = tape.leaf(m.clone());
                Some(self.project_attributes_tape(tape, p, x)?)
            }
            None => None,
        };
        let neg_categories = match &raw.neg_categories {
            Some(m) => {
                let x = tape.leaf(m.clone());
                Some(self.project_categories_tape(tape, p, x)?)
            }
            None => None,
        };
        Ok(ViewNodes {
            objects,
            attributes,
            categories,
            neg_attributes,
            neg_categories,
            neg_owner: raw.neg_owner.clone(),
            batch: raw.objects.rows(),
            tau,
        })
    }

    fn project_with(&self, x: &Matrix, which: Which) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new();
        let p = self.record_params(&mut tape);
        let leaf = tape.leaf(x.clone());
        let out = match which {
            Which::Object => self.project_objects_tape(&mut tape, &p, leaf)?,
            Which::Attribute => self.project_attributes_tape(&mut tape, &p, leaf)?,
            Which::Category => self.project_categories_tape(&mut tape, &p, leaf)?,
        };
        Ok(tape.value(out).clone())
    }

    pub fn project_objects(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        self.project_with(x, Which::Object)
    }

    pub fn project_attributes(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        self.project_with(x, Which::Attribute)
    }

    pub fn project_categories(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        self.project_with(x, Which::Category)
    }

    /// Projects every view of a raw batch.
    pub fn forward(&self, raw: &RawBatch, tau: f64) -> Result<BatchViews, ModelError> {
        let views = BatchViews {
            objects: self.project_objects(&raw.objects)?,
            attributes: self.project_attributes(&raw.attributes)?,
            categories: self.project_categories(&raw.categories)?,
            neg_owner: raw.neg_owner.clone(),
            neg_attributes: raw.neg_attributes.as_ref().map(|m| self.project_attributes(m)).transpose()?,
            neg_categories: raw.neg_categories.as_ref().map(|m| self.project_categories(m)).transpose()?,
            tau,
        };
        Ok(views)
    }
}

#[derive(Clone, Copy)]
enum Which {
    Object,
    Attribute,
    Category,
}

/// Linear classifier over projected object embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `classes × dim`
    pub weight: Matrix,
    /// `1 × classes`
    pub bias: Matrix,
}

impl ClassifierHead {
    pub fn new(classes: usize, dim: usize, seed: u64) -> Result<Self, ModelError> {
        if classes < 2 || dim == 0 {
            return Err(ModelError::InvalidSpec(format!("classifier {classes}x{dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let data = (0..classes * dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            weight: Matrix::new(classes, dim, data)?,
            bias: Matrix::zeros(1, classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix, ModelError> {
        let mut z = features.matmul_bt(&self.weight)?;
        for r in 0..z.rows() {
            for (o, b) in z.row_mut(r).iter_mut().zip(self.bias.as_slice()) {
                *o += b;
            }
        }
        Ok(z)
    }
}
