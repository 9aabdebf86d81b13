//! Knowledge-distillation distances between teacher and student outputs or features.
//!
//! Every loss is averaged over the batch. Teacher quantities are treated as
//! constants; the returned cotangents are for the student only.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Parameters;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KdMethod {
    None,
    /// Squared distance between noise predictions.
    #[default]
    Prediction,
    /// Squared distance between tapped features, through a learned projector when widths differ.
    FeatureL2,
    /// Squared distance between per-sample normalized squared activations.
    Attention,
    /// Squared Frobenius distance between row-normalized batch Gram matrices.
    Similarity,
}

impl KdMethod {
    pub const ALL_ACTIVE: [KdMethod; 4] = [
        KdMethod::Prediction,
        KdMethod::FeatureL2,
        KdMethod::Attention,
        KdMethod::Similarity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KdMethod::None => "none",
            KdMethod::Prediction => "prediction",
            KdMethod::FeatureL2 => "feature_l2",
            KdMethod::Attention => "attention",
            KdMethod::Similarity => "similarity",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, KdMethod::FeatureL2 | KdMethod::Attention | KdMethod::Similarity)
    }
}

impl std::fmt::Display for KdMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for KdMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "prediction" => Ok(Self::Prediction),
            "feature_l2" | "feature-l2" => Ok(Self::FeatureL2),
            "attention" => Ok(Self::Attention),
            "similarity" => Ok(Self::Similarity),
            other => Err(Error::InvalidArgument(format!("unknown kd method `{other}`"))),
        }
    }
}

/// Bias-free linear map from student feature width to teacher feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    /// `teacher_width x student_width`
    pub weight: Array2<f64>,
}

impl Projector {
    pub fn new(student_width: usize, teacher_width: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (student_width as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((teacher_width, student_width), |_| rng.random_range(-bound..bound)),
        }
    }

    pub fn apply(&self, h: ArrayView2<f64>) -> Array2<f64> {
        h.dot(&self.weight.t())
    }
}

impl Parameters for Projector {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice().expect("standard layout")]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_slice_mut().expect("standard layout")]
    }
}

/// A distillation method together with its trainable projector, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct KdHead {
    pub method: KdMethod,
    pub projector: Option<Projector>,
}

impl KdHead {
    /// The projector exists only for `FeatureL2` with differing feature widths.
    pub fn new(method: KdMethod, student_width: usize, teacher_width: usize, rng: &mut Rng) -> Self {
        let projector = (method == KdMethod::FeatureL2 && student_width != teacher_width)
            .then(|| Projector::new(student_width, teacher_width, rng));
        Self { method, projector }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdOutput {
    pub loss: f64,
    pub d_eps: Option<Array2<f64>>,
    pub d_feature: Option<Array2<f64>>,
    pub d_projector: Option<Array2<f64>>,
}

fn batch_mse(diff: &Array2<f64>) -> f64 {
    diff.iter().map(|v| v * v).sum::<f64>() / diff.nrows() as f64
}

fn check_dims(context: &'static str, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(context, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

/// Distillation loss and student cotangents for `head.method`.
pub fn kd_loss(
    head: &KdHead,
    teacher_eps: ArrayView2<f64>,
    teacher_feature: ArrayView2<f64>,
    student_eps: ArrayView2<f64>,
    student_feature: ArrayView2<f64>,
) -> Result<KdOutput> {
    let batch = student_eps.nrows();
    if batch == 0 {
        return Err(Error::InvalidArgument("kd_loss needs a non-empty batch".into()));
    }
    let b = batch as f64;
    match head.method {
        KdMethod::None => Err(Error::InvalidArgument(
            "kd method `none` has no loss; skip distillation instead".into(),
        )),
        KdMethod::Prediction => {
            check_dims("prediction kd", &teacher_eps, &student_eps)?;
            let diff = &student_eps - &teacher_eps;
            Ok(KdOutput {
                loss: batch_mse(&diff),
                d_eps: Some(diff * (2.0 / b)),
                d_feature: None,
                d_projector: None,
            })
        }
        KdMethod::FeatureL2 => {
            let (mapped, d_projector_needed) = match &head.projector {
                Some(p) => (p.apply(student_feature), true),
                None => (student_feature.to_owned(), false),
            };
            check_dims("feature_l2 kd", &teacher_feature, &mapped.view())?;
            let diff = &mapped - &teacher_feature;
            let loss = batch_mse(&diff);
            let d_mapped = diff * (2.0 / b);
            let (d_feature, d_projector) = match (&head.projector, d_projector_needed) {
                (Some(p), true) => (d_mapped.dot(&p.weight), Some(d_mapped.t().dot(&student_feature))),
                _ => (d_mapped, None),
            };
            Ok(KdOutput {
                loss,
                d_eps: None,
                d_feature: Some(d_feature),
                d_projector,
            })
        }
        KdMethod::Attention => {
            let (loss, d_feature) = attention_loss(teacher_feature, student_feature)?;
            Ok(KdOutput {
                loss,
                d_eps: None,
                d_feature: Some(d_feature),
                d_projector: None,
            })
        }
        KdMethod::Similarity => {
            let (loss, d_feature) = similarity_loss(teacher_feature, student_feature)?;
            Ok(KdOutput {
                loss,
                d_eps: None,
                d_feature: Some(d_feature),
                d_projector: None,
            })
        }
    }
}

const NORM_FLOOR: f64 = 1e-12;

/// Sum-pool the columns of `u` into `width` equal groups.
fn pool_columns(u: &Array2<f64>, width: usize) -> Array2<f64> {
    let group = u.ncols() / width;
    if group == 1 {
        return u.clone();
    }
    Array2::from_shape_fn((u.nrows(), width), |(r, c)| {
        u.row(r).iter().skip(c * group).take(group).sum()
    })
}

/// Per-sample attention map: squared activations, sum-pooled to `width`
/// positions and L2-normalized. Returns the map, the pooled map and its norms.
fn attention_map(h: ArrayView2<f64>, width: usize) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let pooled = pool_columns(&h.mapv(|v| v * v), width);
    let norms: Vec<f64> = pooled
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let mut map = pooled.clone();
    for (mut row, n) in map.rows_mut().into_iter().zip(&norms) {
        row /= *n;
    }
    (map, pooled, norms)
}

/// Attention transfer on vectors. When the widths differ, the wider feature's
/// squared activations are sum-pooled into as many groups as the narrower one
/// has units; the wider width must be a multiple of the narrower.
fn attention_loss(teacher: ArrayView2<f64>, student: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    if teacher.nrows() != student.nrows() {
        return Err(Error::shape("attention kd batch", teacher.nrows(), student.nrows()));
    }
    let (tw, sw) = (teacher.ncols(), student.ncols());
    let width = tw.min(sw);
    if tw.max(sw) % width != 0 {
        return Err(Error::InvalidArgument(format!(
            "attention kd needs one feature width to divide the other, got {tw} and {sw}"
        )));
    }
    let b = student.nrows() as f64;
    let (a_t, _, _) = attention_map(teacher, width);
    let (a_s, _, norms) = attention_map(student, width);
    let diff = &a_s - &a_t;
    let loss = batch_mse(&diff);

    // d/d(pooled) of a = u / |u|: (g - a (a . g)) / |u|
    let g = diff * (2.0 / b);
    let mut d_pooled = Array2::zeros(g.raw_dim());
    for (r, &norm) in norms.iter().enumerate() {
        let a = a_s.row(r);
        let gr = g.row(r);
        let proj = a.dot(&gr);
        Zip::from(d_pooled.row_mut(r))
            .and(&gr)
            .and(&a)
            .for_each(|d, &gi, &ai| *d = (gi - ai * proj) / norm);
    }
    let group = sw / width;
    let d_feature = Array2::from_shape_fn(student.raw_dim(), |(r, c)| d_pooled[[r, c / group]] * 2.0 * student[[r, c]]);
    Ok((loss, d_feature))
}

fn row_normalized_gram(h: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let gram = h.dot(&h.t());
    let norms: Vec<f64> = gram
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let mut normalized = gram.clone();
    for (mut row, n) in normalized.rows_mut().into_iter().zip(&norms) {
        row /= *n;
    }
    (normalized, gram, norms)
}

/// Similarity-preserving distillation: `|G_t - G_s|_F^2 / B^2` with `G` the
/// L2 row-normalized `H H^T` of the batch.
fn similarity_loss(teacher: ArrayView2<f64>, student: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let batch = student.nrows();
    if batch < 2 {
        return Err(Error::InvalidArgument("similarity kd needs a batch of at least 2".into()));
    }
    if teacher.nrows() != batch {
        return Err(Error::shape("similarity kd batch", teacher.nrows(), batch));
    }
    let b2 = (batch * batch) as f64;
    let (g_t, _, _) = row_normalized_gram(teacher);
    let (g_s, _, norms) = row_normalized_gram(student);
    let diff = &g_s - &g_t;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / b2;

    let d_norm = diff * (2.0 / b2);
    let mut d_gram = Array2::zeros(d_norm.raw_dim());
    for (r, &norm) in norms.iter().enumerate() {
        let row = g_s.row(r);
        let dr = d_norm.row(r);
        let proj = row.dot(&dr);
        Zip::from(d_gram.row_mut(r))
            .and(&dr)
            .and(&row)
            .for_each(|d, &gi, &ri| *d = (gi - ri * proj) / norm);
    }
    // G = H H^T  =>  dH = (dG + dG^T) H
    let sym = &d_gram + &d_gram.t();
    Ok((loss, sym.dot(&student)))
}
