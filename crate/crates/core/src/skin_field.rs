//! Joint-count-agnostic skin weights.
//!
//! Every joint carries a `C`-channel embedding; every vertex embedding is
//! the skin-weighted average of the joint embeddings. Decoding lifts both to
//! `D` channels with affine maps and takes a temperature-scaled softmax of
//! their inner products over the joints:
//!
//! ```text
//! w_k(v) = softmax_i( <lift_v(W^v_k), lift_j(W^j_i)> / T_k )
//! ```
//!
//! [`fit_skin_embeddings`] recovers embeddings, lifts and temperatures for a
//! given skin by gradient descent on the mean KL divergence.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rig::{read_json, write_json, Skeleton, SkinWeights};

pub const DEFAULT_CHANNELS: usize = 4;
pub const DEFAULT_LIFTED_DIM: usize = 64;

/// `x ↦ weight · x + bias`, mapping `C` channels to `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLift {
    /// `D × C`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl AffineLift {
    pub fn identity(channels: usize) -> Self {
        Self {
            weight: DMatrix::identity(channels, channels),
            bias: DVector::zeros(channels),
        }
    }

    /// Lifts every row of `x` (`N × C`) to `N × D`.
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.weight.transpose();
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinEmbeddings {
    /// `N_j × C`.
    pub joint_embeddings: DMatrix<f64>,
    /// `N_v × C`.
    pub vertex_embeddings: DMatrix<f64>,
    /// One positive temperature per vertex.
    pub temperatures: Vec<f64>,
    pub lift_joint: AffineLift,
    pub lift_vertex: AffineLift,
}

impl SkinEmbeddings {
    pub fn channels(&self) -> usize {
        self.joint_embeddings.ncols()
    }

    pub fn lifted_dim(&self) -> usize {
        self.lift_joint.weight.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let d = self.lifted_dim();
        let shapes_ok = self.vertex_embeddings.ncols() == c
            && self.temperatures.len() == self.vertex_embeddings.nrows()
            && self.lift_joint.weight.shape() == (d, c)
            && self.lift_vertex.weight.shape() == (d, c)
            && self.lift_joint.bias.len() == d
            && self.lift_vertex.bias.len() == d;
        if !shapes_ok {
            return Err(Error::precondition("inconsistent skin embedding dimensions"));
        }
        if self.joint_embeddings.nrows() == 0 || self.vertex_embeddings.nrows() == 0 {
            return Err(Error::precondition(
                "skin embeddings need at least one joint and one vertex",
            ));
        }
        if let Some(t) = self.temperatures.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::precondition(format!("temperature {t} is not positive")));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), &EmbeddingsFile::from(self))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: EmbeddingsFile = read_json(path.as_ref())?;
        let emb = file.into_embeddings()?;
        emb.validate()?;
        Ok(emb)
    }
}

/// Vertex embeddings as skin-weighted averages of joint embeddings.
pub fn encode_vertex_embeddings(
    joint_embeddings: &DMatrix<f64>,
    skin: &SkinWeights,
) -> Result<DMatrix<f64>> {
    if skin.joint_count != joint_embeddings.nrows() {
        return Err(Error::precondition(format!(
            "skin has {} joints but {} joint embeddings were given",
            skin.joint_count,
            joint_embeddings.nrows()
        )));
    }
    let c = joint_embeddings.ncols();
    let mut out = DMatrix::zeros(skin.vertex_count(), c);
    for (v, row) in skin.entries.iter().enumerate() {
        for &(j, w) in row {
            for ch in 0..c {
                out[(v, ch)] += w * joint_embeddings[(j, ch)];
            }
        }
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Temperature-scaled logits `⟨lift_v(W^v_k), lift_j(W^j_i)⟩ / T_k`, `N_v × N_j`.
fn logits(emb: &SkinEmbeddings) -> DMatrix<f64> {
    let lj = emb.lift_joint.apply(&emb.joint_embeddings);
    let lv = emb.lift_vertex.apply(&emb.vertex_embeddings);
    let mut z = lv * lj.transpose();
    for (k, mut row) in z.row_iter_mut().enumerate() {
        row /= emb.temperatures[k];
    }
    z
}

/// Decodes dense per-vertex weights; each row is a softmax over the joints.
pub fn decode_dense(emb: &SkinEmbeddings) -> Result<Vec<Vec<f64>>> {
    emb.validate()?;
    let z = logits(emb);
    Ok((0..z.nrows())
        .into_par_iter()
        .map(|k| {
            let mut row: Vec<f64> = z.row(k).iter().copied().collect();
            softmax_in_place(&mut row);
            row
        })
        .collect())
}

pub fn decode_skin(emb: &SkinEmbeddings) -> Result<SkinWeights> {
    let rows = decode_dense(emb)?;
    Ok(SkinWeights::from_dense(emb.joint_embeddings.nrows(), &rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftMode {
    /// Trainable affine lifts `C → D`.
    Affine,
    /// Fixed identity lifts; `D = C`.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Gradients with a larger global norm are rescaled to this norm.
    pub clip_norm: f64,
    pub seed: u64,
    pub channels: usize,
    pub lifted_dim: usize,
    pub lift: LiftMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 0.5,
            clip_norm: 10.0,
            seed: 0,
            channels: DEFAULT_CHANNELS,
            lifted_dim: DEFAULT_LIFTED_DIM,
            lift: LiftMode::Affine,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations >= 1
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.clip_norm > 0.0
            && self.channels >= 1
            && self.lifted_dim >= 1
            && (self.lift == LiftMode::Affine || self.lifted_dim == self.channels);
        if ok {
            Ok(())
        } else {
            Err(Error::precondition(format!("invalid fit configuration: {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub embeddings: SkinEmbeddings,
    /// Mean KL divergence of the target from the decoded weights.
    pub final_loss: f64,
    pub iterations: usize,
}

/// Trainable parameters; temperatures are stored as `log T`.
#[derive(Clone)]
struct Params {
    joint: DMatrix<f64>,
    lift_joint: AffineLift,
    lift_vertex: AffineLift,
    log_temp: DVector<f64>,
}

impl Params {
    fn norm_squared(&self) -> f64 {
        self.joint.norm_squared()
            + self.lift_joint.weight.norm_squared()
            + self.lift_joint.bias.norm_squared()
            + self.lift_vertex.weight.norm_squared()
            + self.lift_vertex.bias.norm_squared()
            + self.log_temp.norm_squared()
    }

    fn scale(&mut self, s: f64) {
        self.joint *= s;
        self.lift_joint.weight *= s;
        self.lift_joint.bias *= s;
        self.lift_vertex.weight *= s;
        self.lift_vertex.bias *= s;
        self.log_temp *= s;
    }

    fn axpy(&mut self, step: f64, g: &Params) {
        self.joint += &g.joint * step;
        self.lift_joint.weight += &g.lift_joint.weight * step;
        self.lift_joint.bias += &g.lift_joint.bias * step;
        self.lift_vertex.weight += &g.lift_vertex.weight * step;
        self.lift_vertex.bias += &g.lift_vertex.bias * step;
        self.log_temp += &g.log_temp * step;
    }

    fn embeddings(&self, target: &DMatrix<f64>) -> SkinEmbeddings {
        SkinEmbeddings {
            vertex_embeddings: target * &self.joint,
            joint_embeddings: self.joint.clone(),
            temperatures: self.log_temp.iter().map(|t| t.exp()).collect(),
            lift_joint: self.lift_joint.clone(),
            lift_vertex: self.lift_vertex.clone(),
        }
    }
}

/// Mean KL(target ‖ decode) and its gradient with respect to all parameters.
fn loss_and_gradient(p: &Params, target: &DMatrix<f64>, lift: LiftMode) -> (f64, Params) {
    let nv = target.nrows();
    let nj = target.ncols();
    let scale = 1.0 / nv as f64;
    let wv = target * &p.joint;
    let lj = p.lift_joint.apply(&p.joint);
    let lv = p.lift_vertex.apply(&wv);
    let g = &lv * lj.transpose();

    let mut loss = 0.0;
    let mut dg = DMatrix::zeros(nv, nj);
    let mut d_log_temp = DVector::zeros(nv);
    for k in 0..nv {
        let temp = p.log_temp[k].exp();
        let z: Vec<f64> = g.row(k).iter().map(|x| x / temp).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let mut dtheta = 0.0;
        for i in 0..nj {
            let s = target[(k, i)];
            let log_y = z[i] - lse;
            if s > 0.0 {
                loss += s * (s.ln() - log_y);
            }
            let dz = (log_y.exp() - s) * scale;
            dtheta -= dz * z[i];
            dg[(k, i)] = dz / temp;
        }
        d_log_temp[k] = dtheta;
    }
    loss *= scale;

    let dlv = &dg * &lj;
    let dlj = dg.transpose() * &lv;
    let dwv = &dlv * &p.lift_vertex.weight;
    let mut d_joint = &dlj * &p.lift_joint.weight + target.transpose() * dwv;
    let (lift_joint, lift_vertex) = match lift {
        LiftMode::Affine => (
            AffineLift {
                weight: dlj.transpose() * &p.joint,
                bias: dlj.row_sum().transpose(),
            },
            AffineLift {
                weight: dlv.transpose() * &wv,
                bias: dlv.row_sum().transpose(),
            },
        ),
        LiftMode::Identity => {
            let zero = AffineLift {
                weight: DMatrix::zeros(p.lift_joint.weight.nrows(), p.joint.ncols()),
                bias: DVector::zeros(p.lift_joint.bias.len()),
            };
            (zero.clone(), zero)
        }
    };
    if !d_joint.iter().all(|x| x.is_finite()) {
        d_joint.fill(0.0);
    }
    let grad = Params {
        joint: d_joint,
        lift_joint,
        lift_vertex,
        log_temp: d_log_temp,
    };
    (loss, grad)
}

fn initial_params(skeleton: &Skeleton, config: &FitConfig) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.channels;
    let d = config.lifted_dim;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut joint = DMatrix::from_fn(skeleton.len(), c, |_, _| unit.sample(&mut rng));
    // Seed the first channels with parent-relative bone directions.
    let edges: Vec<_> = (0..skeleton.len())
        .map(|i| skeleton.joints[i] - skeleton.parent_position(i))
        .collect();
    let longest = edges.iter().map(|e| e.norm()).fold(0.0, f64::max);
    if longest > 0.0 {
        for (i, e) in edges.iter().enumerate() {
            for ch in 0..c.min(3) {
                joint[(i, ch)] += e[ch] / longest;
            }
        }
    }
    let (lift_joint, lift_vertex) = match config.lift {
        LiftMode::Affine => {
            // Keeps the initial logits at unit scale.
            let std = 1.0 / ((c as f64) * (d as f64).sqrt()).sqrt();
            let normal = Normal::new(0.0, std).expect("valid normal");
            let mut lift = || AffineLift {
                weight: DMatrix::from_fn(d, c, |_, _| normal.sample(&mut rng)),
                bias: DVector::zeros(d),
            };
            (lift(), lift())
        }
        LiftMode::Identity => (AffineLift::identity(c), AffineLift::identity(c)),
    };
    Params {
        joint,
        lift_joint,
        lift_vertex,
        log_temp: DVector::zeros(0),
    }
}

/// Fits embeddings whose decode reproduces `skin`. Deterministic for a fixed
/// configuration. Not reaching a low loss is reported, not an error.
pub fn fit_skin_embeddings(
    skin: &SkinWeights,
    skeleton: &Skeleton,
    config: &FitConfig,
) -> Result<FitReport> {
    config.validate()?;
    if skin.joint_count != skeleton.len() {
        return Err(Error::precondition(format!(
            "skin has {} joints but the skeleton has {}",
            skin.joint_count,
            skeleton.len()
        )));
    }
    if skin.vertex_count() == 0 || skeleton.is_empty() {
        return Err(Error::precondition("cannot fit an empty skin"));
    }
    skin.validate(crate::rig::WEIGHT_SUM_TOLERANCE)?;
    let rows = skin.to_dense();
    let target = DMatrix::from_fn(rows.len(), skin.joint_count, |v, j| rows[v][j]);

    let mut params = initial_params(skeleton, config);
    params.log_temp = DVector::zeros(target.nrows());
    let mut loss = f64::INFINITY;
    for _ in 0..config.iterations {
        let (l, mut grad) = loss_and_gradient(&params, &target, config.lift);
        loss = l;
        let norm = grad.norm_squared().sqrt();
        if !norm.is_finite() {
            break;
        }
        if norm > config.clip_norm {
            grad.scale(config.clip_norm / norm);
        }
        params.axpy(-config.learning_rate, &grad);
    }
    let (final_loss, _) = loss_and_gradient(&params, &target, config.lift);
    if final_loss.is_finite() {
        loss = final_loss;
    }
    Ok(FitReport {
        embeddings: params.embeddings(&target),
        final_loss: loss,
        iterations: config.iterations,
    })
}

#[derive(Serialize, Deserialize)]
struct LiftFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingsFile {
    #[serde(rename = "C")]
    c: usize,
    #[serde(rename = "D")]
    d: usize,
    joint_embeddings: Vec<Vec<f64>>,
    vertex_embeddings: Vec<Vec<f64>>,
    temperatures: Vec<f64>,
    lift_joint: LiftFile,
    lift_vertex: LiftFile,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::precondition("ragged matrix in embeddings file"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl From<&SkinEmbeddings> for EmbeddingsFile {
    fn from(e: &SkinEmbeddings) -> Self {
        let lift = |l: &AffineLift| LiftFile {
            weight: rows_of(&l.weight),
            bias: l.bias.iter().copied().collect(),
        };
        Self {
            c: e.channels(),
            d: e.lifted_dim(),
            joint_embeddings: rows_of(&e.joint_embeddings),
            vertex_embeddings: rows_of(&e.vertex_embeddings),
            temperatures: e.temperatures.clone(),
            lift_joint: lift(&e.lift_joint),
            lift_vertex: lift(&e.lift_vertex),
        }
    }
}

impl EmbeddingsFile {
    fn into_embeddings(self) -> Result<SkinEmbeddings> {
        let lift = |l: &LiftFile| -> Result<AffineLift> {
            Ok(AffineLift {
                weight: matrix_from_rows(&l.weight, self.c)?,
                bias: DVector::from_vec(l.bias.clone()),
            })
        };
        Ok(SkinEmbeddings {
            joint_embeddings: matrix_from_rows(&self.joint_embeddings, self.c)?,
            vertex_embeddings: matrix_from_rows(&self.vertex_embeddings, self.c)?,
            temperatures: self.temperatures.clone(),
            lift_joint: lift(&self.lift_joint)?,
            lift_vertex: lift(&self.lift_vertex)?,
        })
    }
}
