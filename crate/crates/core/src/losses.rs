//! Contrastive objectives with hard negatives.
//!
//! Every similarity is `cosine(x, y) / tau`. Each loss is a sum over batch
//! rows of `-log(exp(positive) / Σ exp(terms))`, evaluated as
//! `logsumexp(terms) - positive`.
//!
//! | loss       | anchor | in-batch terms        | extra terms             |
//! |------------|--------|-----------------------|-------------------------|
//! | `L_OA^hn`  | o_i    | s(o_i, a_j), j ∈ B    | s(o_i, a_w), w ∈ A_hn^i |
//! | `L_AO`     | a_i    | s(o_k, a_i), k ∈ B    | none                    |
//! | `L_AC^hn`  | a_i    | s(a_i, c_j), j ∈ B    | s(a_i, c_w), w ∈ C_hn^i |
//! | `L_CA^hn`  | c_i    | s(a_j, c_i), j ∈ B    | s(a_w, c_i), w ∈ A_hn^i |
//! | `L_CCC`    | c_i    | none                  | s(c_i, c_k), k ∈ C_hn^i |
//!
//! `L_CCC` has no positive term: it is `Σ_i logsumexp_k s(c_i, c_k)`.
//! The stage-one objective is `aux + (L_OAC + L_ACC + L_CCC) / 2` with
//! `L_OAC = (L_OA^hn + L_AO) / 2` and `L_ACC = (L_AC^hn + L_CA^hn) / 2`.

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, NodeId, NumericsError, Tape, Vector};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("row {row} has no hard-negative categories")]
    EmptyNegativeSet { row: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which pairs the stage-one objective contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Object-attribute and attribute-category contrast plus category repulsion.
    #[default]
    Triple,
    /// Objects contrasted directly against category names, plus category
    /// repulsion; attributes unused.
    ObjectCategory,
}

/// Projected views for one batch.
///
/// Hard negatives are stored flat: row `h` of `neg_attributes` and
/// `neg_categories` belongs to batch row `neg_owner[h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    pub objects: Matrix,
    pub attributes: Matrix,
    pub categories: Matrix,
    pub neg_owner: Vec<usize>,
    pub neg_attributes: Option<Matrix>,
    pub neg_categories: Option<Matrix>,
    pub tau: f64,
}

impl BatchViews {
    /// Builds views from per-row hard-negative lists. `a_hn[i]` and `c_hn[i]`
    /// must have equal lengths.
    pub fn new(
        objects: Matrix,
        attributes: Matrix,
        categories: Matrix,
        a_hn: &[Vec<Vector>],
        c_hn: &[Vec<Vector>],
        tau: f64,
    ) -> Result<Self, LossError> {
        let b = objects.rows();
        if a_hn.len() != b || c_hn.len() != b {
            return Err(LossError::DimMismatch {
                what: "hard-negative rows",
                expected: (b, b),
                found: (a_hn.len(), c_hn.len()),
            });
        }
        let mut owner = Vec::new();
        let mut na = Vec::new();
        let mut nc = Vec::new();
        for (i, (ra, rc)) in a_hn.iter().zip(c_hn).enumerate() {
            if ra.len() != rc.len() {
                return Err(LossError::DimMismatch {
                    what: "hard-negative count",
                    expected: (i, ra.len()),
                    found: (i, rc.len()),
                });
            }
            for (va, vc) in ra.iter().zip(rc) {
                owner.push(i);
                na.push(va);
                nc.push(vc);
            }
        }
        let (neg_attributes, neg_categories) = if owner.is_empty() {
            (None, None)
        } else {
            (Some(Matrix::from_vectors(&na)?), Some(Matrix::from_vectors(&nc)?))
        };
        let views = Self {
            objects,
            attributes,
            categories,
            neg_owner: owner,
            neg_attributes,
            neg_categories,
            tau,
        };
        views.validate()?;
        Ok(views)
    }

    pub fn batch_size(&self) -> usize {
        self.objects.rows()
    }

    /// Hard negatives of row `i` as (attribute, category) row pairs.
    pub fn negatives_of(&self, i: usize) -> Vec<(&[f64], &[f64])> {
        let (Some(na), Some(nc)) = (&self.neg_attributes, &self.neg_categories) else {
            return Vec::new();
        };
        self.neg_owner
            .iter()
            .enumerate()
            .filter(|(_, &o)| o == i)
            .map(|(h, _)| (na.row(h), nc.row(h)))
            .collect()
    }

    fn validate(&self) -> Result<(), LossError> {
        check_tau(self.tau)?;
        let shape = self.objects.shape();
        for (what, m) in [("attributes", &self.attributes), ("categories", &self.categories)] {
            if m.shape() != shape {
                return Err(LossError::DimMismatch { what, expected: shape, found: m.shape() });
            }
        }
        let h = self.neg_owner.len();
        for (what, m) in [
            ("hard-negative attributes", &self.neg_attributes),
            ("hard-negative categories", &self.neg_categories),
        ] {
            match m {
                Some(m) if m.shape() != (h, shape.1) => {
                    return Err(LossError::DimMismatch { what, expected: (h, shape.1), found: m.shape() })
                }
                None if h > 0 => {
                    return Err(LossError::DimMismatch { what, expected: (h, shape.1), found: (0, 0) })
                }
                _ => {}
            }
        }
        if let Some(&bad) = self.neg_owner.iter().find(|&&o| o >= shape.0) {
            return Err(LossError::DimMismatch {
                what: "hard-negative owner",
                expected: (shape.0, 1),
                found: (bad, 1),
            });
        }
        Ok(())
    }

    /// Records the views as tape leaves.
    pub fn record(&self, tape: &mut Tape) -> ViewNodes {
        ViewNodes {
            objects: tape.leaf(self.objects.clone()),
            attributes: tape.leaf(self.attributes.clone()),
            categories: tape.leaf(self.categories.clone()),
            neg_attributes: self.neg_attributes.clone().map(|m| tape.leaf(m)),
            neg_categories: self.neg_categories.clone().map(|m| tape.leaf(m)),
            neg_owner: self.neg_owner.clone(),
            batch: self.batch_size(),
            tau: self.tau,
        }
    }
}

fn check_tau(tau: f64) -> Result<(), LossError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(LossError::InvalidTemperature(tau));
    }
    Ok(())
}

/// Tape handles for one batch's views, as produced by the model or by
/// [`BatchViews::record`].
#[derive(Debug, Clone)]
pub struct ViewNodes {
    pub objects: NodeId,
    pub attributes: NodeId,
    pub categories: NodeId,
    pub neg_attributes: Option<NodeId>,
    pub neg_categories: Option<NodeId>,
    pub neg_owner: Vec<usize>,
    pub batch: usize,
    pub tau: f64,
}

/// Hook for an extra stage-one term, standing in for the attribute
/// description generation loss.
pub trait AuxiliaryLoss {
    fn build(&self, tape: &mut Tape, views: &ViewNodes) -> Result<NodeId, LossError>;
}

/// Adds a fixed value; useful for checking how the hook composes.
#[derive(Debug, Clone, Copy)]
pub struct ConstantAux(pub f64);

impl AuxiliaryLoss for ConstantAux {
    fn build(&self, tape: &mut Tape, _views: &ViewNodes) -> Result<NodeId, LossError> {
        Ok(tape.leaf(Matrix::scalar(self.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_oa: f64,
    pub l_ao: f64,
    pub l_oac: f64,
    pub l_ac: f64,
    pub l_ca: f64,
    pub l_acc: f64,
    pub l_ccc: f64,
    /// Object-category terms; zero under [`Objective::Triple`].
    pub l_oc: f64,
    pub l_co: f64,
    pub l_occ: f64,
    pub aux: f64,
    pub stage1_total: f64,
}

impl LossReport {
    pub fn accumulate(&mut self, other: &LossReport) {
        self.l_oa += other.l_oa;
        self.l_ao += other.l_ao;
        self.l_oac += other.l_oac;
        self.l_ac += other.l_ac;
        self.l_ca += other.l_ca;
        self.l_acc += other.l_acc;
        self.l_ccc += other.l_ccc;
        self.l_oc += other.l_oc;
        self.l_co += other.l_co;
        self.l_occ += other.l_occ;
        self.aux += other.aux;
        self.stage1_total += other.stage1_total;
    }
}

/// Node handles of every term of the stage-one graph.
#[derive(Debug, Clone, Default)]
pub struct Stage1Nodes {
    pub l_oa: Option<NodeId>,
    pub l_ao: Option<NodeId>,
    pub l_oac: Option<NodeId>,
    pub l_ac: Option<NodeId>,
    pub l_ca: Option<NodeId>,
    pub l_acc: Option<NodeId>,
    pub l_oc: Option<NodeId>,
    pub l_co: Option<NodeId>,
    pub l_occ: Option<NodeId>,
    pub l_ccc: Option<NodeId>,
    pub aux: Option<NodeId>,
    pub total: Option<NodeId>,
}

impl Stage1Nodes {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let get = |n: Option<NodeId>| n.map_or(0.0, |id| tape.scalar(id));
        LossReport {
            l_oa: get(self.l_oa),
            l_ao: get(self.l_ao),
            l_oac: get(self.l_oac),
            l_ac: get(self.l_ac),
            l_ca: get(self.l_ca),
            l_acc: get(self.l_acc),
            l_ccc: get(self.l_ccc),
            l_oc: get(self.l_oc),
            l_co: get(self.l_co),
            l_occ: get(self.l_occ),
            aux: get(self.aux),
            stage1_total: get(self.total),
        }
    }
}

/// Normalized views and the negative scores shared by several losses.
struct Graph<'a> {
    tape: &'a mut Tape,
    b: usize,
    inv_tau: f64,
    owner: &'a [usize],
}

impl Graph<'_> {
    fn pair_scores(&mut self, left: NodeId, right: NodeId) -> Result<NodeId, LossError> {
        let s = self.tape.matmul_bt(left, right)?;
        Ok(self.tape.scale(s, self.inv_tau)?)
    }

    /// `s(left[owner[h]], negs[h])` for every negative `h`.
    fn owner_scores(&mut self, left: NodeId, negs: NodeId) -> Result<NodeId, LossError> {
        let g = self.tape.gather_rows(left, self.owner.to_vec())?;
        let d = self.tape.row_dot(g, negs)?;
        Ok(self.tape.scale(d, self.inv_tau)?)
    }

    fn diagonal(&self) -> Vec<usize> {
        (0..self.b).map(|i| i * self.b + i).collect()
    }

    /// Rows (`by_row`) or columns of the `B×B` score block, each extended
    /// with the negatives owned by that index (stored after the block).
    fn groups(&self, by_row: bool, with_negatives: bool) -> Vec<Vec<usize>> {
        let b = self.b;
        (0..b)
            .map(|i| {
                let mut g: Vec<usize> = (0..b)
                    .map(|j| if by_row { i * b + j } else { j * b + i })
                    .collect();
                if with_negatives {
                    g.extend(
                        self.owner
                            .iter()
                            .enumerate()
                            .filter(|(_, &o)| o == i)
                            .map(|(h, _)| b * b + h),
                    );
                }
                g
            })
            .collect()
    }

    /// `Σ_i logsumexp(group_i) - Σ_i positive_i`.
    fn infonce(&mut self, scores: NodeId, groups: Vec<Vec<usize>>) -> Result<NodeId, LossError> {
        let lse = self.tape.group_lse(scores, groups)?;
        let lse = self.tape.sum(lse)?;
        let pos = self.tape.select(scores, self.diagonal())?;
        let pos = self.tape.sum(pos)?;
        Ok(self.tape.sub(lse, pos)?)
    }

    fn with_negatives(&mut self, block: NodeId, negs: Option<NodeId>) -> Result<(NodeId, bool), LossError> {
        match negs {
            Some(n) => Ok((self.tape.concat(vec![block, n])?, true)),
            None => Ok((block, false)),
        }
    }

    fn half_sum(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, LossError> {
        let s = self.tape.add(a, b)?;
        Ok(self.tape.scale(s, 0.5)?)
    }
}

struct Normalized {
    o: NodeId,
    a: NodeId,
    c: NodeId,
    na: Option<NodeId>,
    nc: Option<NodeId>,
}

fn normalize_views(tape: &mut Tape, v: &ViewNodes) -> Result<Normalized, LossError> {
    check_tau(v.tau)?;
    let shape = tape.value(v.objects).shape();
    for (what, id) in [("attributes", v.attributes), ("categories", v.categories)] {
        if tape.value(id).shape() != shape {
            return Err(LossError::DimMismatch { what, expected: shape, found: tape.value(id).shape() });
        }
    }
    let h = v.neg_owner.len();
    for (what, id) in [("hard-negative attributes", v.neg_attributes), ("hard-negative categories", v.neg_categories)] {
        let found = id.map_or((0, 0), |id| tape.value(id).shape());
        let expected = if h == 0 { (0, 0) } else { (h, shape.1) };
        if found != expected {
            return Err(LossError::DimMismatch { what, expected, found });
        }
    }
    Ok(Normalized {
        o: tape.normalize_rows(v.objects)?,
        a: tape.normalize_rows(v.attributes)?,
        c: tape.normalize_rows(v.categories)?,
        na: v.neg_attributes.map(|id| tape.normalize_rows(id)).transpose()?,
        nc: v.neg_categories.map(|id| tape.normalize_rows(id)).transpose()?,
    })
}

/// Selects which stage-one terms to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Oa,
    Ao,
    Ac,
    Ca,
    Ccc,
}

/// Builds a single loss term on the tape.
pub fn build_term(tape: &mut Tape, views: &ViewNodes, term: Term) -> Result<NodeId, LossError> {
    let n = normalize_views(tape, views)?;
    let mut g = Graph { tape, b: views.batch, inv_tau: 1.0 / views.tau, owner: &views.neg_owner };
    match term {
        Term::Oa => {
            let s = g.pair_scores(n.o, n.a)?;
            let negs = n.na.map(|na| g.owner_scores(n.o, na)).transpose()?;
            let (flat, has) = g.with_negatives(s, negs)?;
            let groups = g.groups(true, has);
            g.infonce(flat, groups)
        }
        Term::Ao => {
            let s = g.pair_scores(n.o, n.a)?;
            let groups = g.groups(false, false);
            g.infonce(s, groups)
        }
        Term::Ac => {
            let s = g.pair_scores(n.a, n.c)?;
            let negs = n.nc.map(|nc| g.owner_scores(n.a, nc)).transpose()?;
            let (flat, has) = g.with_negatives(s, negs)?;
            let groups = g.groups(true, has);
            g.infonce(flat, groups)
        }
        Term::Ca => {
            let s = g.pair_scores(n.a, n.c)?;
            let negs = n.na.map(|na| g.owner_scores(n.c, na)).transpose()?;
            let (flat, has) = g.with_negatives(s, negs)?;
            let groups = g.groups(false, has);
            g.infonce(flat, groups)
        }
        Term::Ccc => ccc(&mut g, n.c, n.nc),
    }
}

fn ccc(g: &mut Graph<'_>, c: NodeId, nc: Option<NodeId>) -> Result<NodeId, LossError> {
    let mut groups = vec![Vec::new(); g.b];
    for (h, &o) in g.owner.iter().enumerate() {
        groups[o].push(h);
    }
    if let Some(row) = groups.iter().position(Vec::is_empty) {
        return Err(LossError::EmptyNegativeSet { row });
    }
    let nc = nc.expect("non-empty groups imply negatives");
    let scores = g.owner_scores(c, nc)?;
    let lse = g.tape.group_lse(scores, groups)?;
    Ok(g.tape.sum(lse)?)
}

/// Builds the full stage-one objective and returns handles to every term.
pub fn build_stage1(
    tape: &mut Tape,
    views: &ViewNodes,
    objective: Objective,
    aux: Option<&dyn AuxiliaryLoss>,
) -> Result<Stage1Nodes, LossError> {
    let n = normalize_views(tape, views)?;
    let mut out = Stage1Nodes::default();
    let aux_node = aux.map(|a| a.build(tape, views)).transpose()?;
    let mut g = Graph { tape, b: views.batch, inv_tau: 1.0 / views.tau, owner: &views.neg_owner };

    let l_ccc = ccc(&mut g, n.c, n.nc)?;
    let contrast = match objective {
        Objective::Triple => {
            let s_oa = g.pair_scores(n.o, n.a)?;
            let oa_negs = n.na.map(|na| g.owner_scores(n.o, na)).transpose()?;
            let (flat, has) = g.with_negatives(s_oa, oa_negs)?;
            let groups = g.groups(true, has);
            let l_oa = g.infonce(flat, groups)?;
            let groups = g.groups(false, false);
            let l_ao = g.infonce(s_oa, groups)?;
            let l_oac = g.half_sum(l_oa, l_ao)?;

            let s_ac = g.pair_scores(n.a, n.c)?;
            let ac_negs = n.nc.map(|nc| g.owner_scores(n.a, nc)).transpose()?;
            let (flat, has) = g.with_negatives(s_ac, ac_negs)?;
            let groups = g.groups(true, has);
            let l_ac = g.infonce(flat, groups)?;
            let ca_negs = n.na.map(|na| g.owner_scores(n.c, na)).transpose()?;
            let (flat, has) = g.with_negatives(s_ac, ca_negs)?;
            let groups = g.groups(false, has);
            let l_ca = g.infonce(flat, groups)?;
            let l_acc = g.half_sum(l_ac, l_ca)?;

            out.l_oa = Some(l_oa);
            out.l_ao = Some(l_ao);
            out.l_oac = Some(l_oac);
            out.l_ac = Some(l_ac);
            out.l_ca = Some(l_ca);
            out.l_acc = Some(l_acc);
            g.tape.add(l_oac, l_acc)?
        }
        Objective::ObjectCategory => {
            let s_oc = g.pair_scores(n.o, n.c)?;
            let negs = n.nc.map(|nc| g.owner_scores(n.o, nc)).transpose()?;
            let (flat, has) = g.with_negatives(s_oc, negs)?;
            let groups = g.groups(true, has);
            let l_oc = g.infonce(flat, groups)?;
            let groups = g.groups(false, false);
            let l_co = g.infonce(s_oc, groups)?;
            let l_occ = g.half_sum(l_oc, l_co)?;
            out.l_oc = Some(l_oc);
            out.l_co = Some(l_co);
            out.l_occ = Some(l_occ);
            l_occ
        }
    };
    let sum = g.tape.add(contrast, l_ccc)?;
    let mut total = g.tape.scale(sum, 0.5)?;
    if let Some(a) = aux_node {
        total = g.tape.add(a, total)?;
    }
    out.l_ccc = Some(l_ccc);
    out.aux = aux_node;
    out.total = Some(total);
    Ok(out)
}

/// Softmax cross-entropy of a linear classifier, summed over rows:
/// `Σ_i logsumexp(x_i Wᵀ + b) - (x_i Wᵀ + b)[y_i]`.
pub fn build_classification(
    tape: &mut Tape,
    features: NodeId,
    weight: NodeId,
    bias: NodeId,
    labels: &[usize],
) -> Result<NodeId, LossError> {
    let logits = tape.matmul_bt(features, weight)?;
    let logits = tape.add_row(logits, bias)?;
    let (rows, classes) = tape.value(logits).shape();
    if labels.len() != rows {
        return Err(LossError::DimMismatch {
            what: "labels",
            expected: (rows, 1),
            found: (labels.len(), 1),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(LossError::LabelOutOfRange { label, classes });
    }
    let groups = (0..rows).map(|i| (i * classes..(i + 1) * classes).collect()).collect();
    let lse = tape.group_lse(logits, groups)?;
    let lse = tape.sum(lse)?;
    let picked = tape.select(logits, labels.iter().enumerate().map(|(i, &l)| i * classes + l).collect())?;
    let picked = tape.sum(picked)?;
    Ok(tape.sub(lse, picked)?)
}

fn eval_term(batch: &BatchViews, term: Term) -> Result<f64, LossError> {
    batch.validate()?;
    let mut tape = Tape::new();
    let views = batch.record(&mut tape);
    let id = build_term(&mut tape, &views, term)?;
    Ok(tape.scalar(id))
}

pub fn loss_oa_hn(batch: &BatchViews) -> Result<f64, LossError> {
    eval_term(batch, Term::Oa)
}

pub fn loss_ao(batch: &BatchViews) -> Result<f64, LossError> {
    eval_term(batch, Term::Ao)
}

pub fn loss_ac_hn(batch: &BatchViews) -> Result<f64, LossError> {
    eval_term(batch, Term::Ac)
}

pub fn loss_ca_hn(batch: &BatchViews) -> Result<f64, LossError> {
    eval_term(batch, Term::Ca)
}

/// `(L_AC^hn + L_CA^hn) / 2`.
pub fn loss_acc_hn(batch: &BatchViews) -> Result<f64, LossError> {
    Ok((loss_ac_hn(batch)? + loss_ca_hn(batch)?) * 0.5)
}

pub fn loss_ccc(batch: &BatchViews) -> Result<f64, LossError> {
    eval_term(batch, Term::Ccc)
}

/// Gradients of the stage-one total with respect to each view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGradients {
    pub objects: Matrix,
    pub attributes: Matrix,
    pub categories: Matrix,
    pub neg_attributes: Option<Matrix>,
    pub neg_categories: Option<Matrix>,
}

pub fn stage1_objective(
    batch: &BatchViews,
    aux: Option<&dyn AuxiliaryLoss>,
) -> Result<(LossReport, ViewGradients), LossError> {
    stage1_objective_with(batch, Objective::Triple, aux)
}

pub fn stage1_objective_with(
    batch: &BatchViews,
    objective: Objective,
    aux: Option<&dyn AuxiliaryLoss>,
) -> Result<(LossReport, ViewGradients), LossError> {
    batch.validate()?;
    let mut tape = Tape::new();
    let views = batch.record(&mut tape);
    let nodes = build_stage1(&mut tape, &views, objective, aux)?;
    let total = nodes.total.expect("stage-one total");
    let grads = tape.backward(total)?;
    let report = nodes.report(&tape);
    let grads = ViewGradients {
        objects: grads.get(&tape, views.objects),
        attributes: grads.get(&tape, views.attributes),
        categories: grads.get(&tape, views.categories),
        neg_attributes: views.neg_attributes.map(|id| grads.get(&tape, id)),
        neg_categories: views.neg_categories.map(|id| grads.get(&tape, id)),
    };
    Ok((report, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::new(rows, cols, data.to_vec()).unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn single(hn: bool, neg: &[f64]) -> BatchViews {
        let e = m(1, 2, &[1.0, 0.0]);
        let (a_hn, c_hn) = if hn { (vec![vec![v(neg)]], vec![vec![v(neg)]]) } else { (vec![vec![]], vec![vec![]]) };
        BatchViews::new(e.clone(), e.clone(), e, &a_hn, &c_hn, 1.0).unwrap()
    }

    #[test]
    fn single_row_without_negatives_is_zero() {
        let b = single(false, &[]);
        assert_eq!(loss_oa_hn(&b).unwrap(), 0.0);
        assert_eq!(loss_ao(&b).unwrap(), 0.0);
        assert_eq!(loss_ac_hn(&b).unwrap(), 0.0);
        assert_eq!(loss_ca_hn(&b).unwrap(), 0.0);
        assert_eq!(loss_acc_hn(&b).unwrap(), 0.0);
        assert!(matches!(loss_ccc(&b), Err(LossError::EmptyNegativeSet { row: 0 })));
        assert!(matches!(stage1_objective(&b, None), Err(LossError::EmptyNegativeSet { row: 0 })));
    }

    #[test]
    fn equal_negative_gives_ln2() {
        // hard negative identical to the positive
        let b = single(true, &[2.0, 0.0]);
        let ln2 = 2f64.ln();
        assert!((loss_ac_hn(&b).unwrap() - ln2).abs() < 1e-15);
        assert!((loss_ca_hn(&b).unwrap() - ln2).abs() < 1e-15);
        assert!((loss_acc_hn(&b).unwrap() - ln2).abs() < 1e-15);
    }

    #[test]
    fn ccc_examples() {
        assert_eq!(loss_ccc(&single(true, &[0.0, 3.0])).unwrap(), 0.0);
        let c = 0.5f64;
        let half = single(true, &[c, (1.0 - c * c).sqrt()]);
        assert!((loss_ccc(&half).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_row_batch() {
        // all pairwise similarities equal → each row is a uniform softmax over 2
        let o = m(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let b = BatchViews::new(o.clone(), o.clone(), o, &[vec![], vec![]], &[vec![], vec![]], 1.0).unwrap();
        assert!((loss_oa_hn(&b).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ao_hand_value() {
        // orthonormal views with tau 0.5: each column scores (2, 0, 0)
        let a = m(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let o = a.clone();
        let b = BatchViews::new(o, a.clone(), a, &[vec![], vec![], vec![]], &[vec![], vec![], vec![]], 0.5).unwrap();
        let per = -(2f64.exp() / (2f64.exp() + 2.0)).ln();
        assert!((loss_ao(&b).unwrap() - 3.0 * per).abs() < 1e-14);
    }

    #[test]
    fn invalid_inputs() {
        let e = m(1, 2, &[1.0, 0.0]);
        assert!(matches!(
            BatchViews::new(e.clone(), e.clone(), e.clone(), &[vec![]], &[vec![]], 0.0),
            Err(LossError::InvalidTemperature(_))
        ));
        assert!(matches!(
            BatchViews::new(e.clone(), m(1, 3, &[1.0, 0.0, 0.0]), e.clone(), &[vec![]], &[vec![]], 1.0),
            Err(LossError::DimMismatch { .. })
        ));
        assert!(matches!(
            BatchViews::new(e.clone(), e.clone(), e, &[vec![v(&[1.0, 0.0])]], &[vec![]], 1.0),
            Err(LossError::DimMismatch { .. })
        ));
    }

    #[test]
    fn aux_hook_adds_to_total() {
        let b = single(true, &[0.0, 1.0]);
        let (plain, g1) = stage1_objective(&b, None).unwrap();
        let (with, g2) = stage1_objective(&b, Some(&ConstantAux(1.5))).unwrap();
        assert!((with.stage1_total - plain.stage1_total - 1.5).abs() < 1e-15);
        assert_eq!(with.aux, 1.5);
        assert_eq!(g1, g2);
    }

    #[test]
    fn classification_loss_matches_hand_value() {
        let mut tape = Tape::new();
        let x = tape.leaf(m(1, 2, &[1.0, 0.0]));
        let w = tape.leaf(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(m(1, 2, &[0.0, 0.0]));
        let l = build_classification(&mut tape, x, w, b, &[0]).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((tape.scalar(l) - expected).abs() < 1e-15);
        assert!(matches!(
            build_classification(&mut tape, x, w, b, &[5]),
            Err(LossError::LabelOutOfRange { label: 5, classes: 2 })
        ));
    }
}
