//! Surrogate regressors over `(drug, protein)` index pairs.
//!
//! * `linear`: `y = <u_d, v_p> + b`.
//! * `two_tower_mlp`: `h = [u_d, v_p, u_d * v_p]`,
//!   `z = LayerNorm(W1 h + b1)`, `y = w2 . relu(z) + b2`.
//!
//! Both are stateless apart from their weights: no batch statistics, no
//! optimizer moments.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{ParameterVector, TensorSpec};
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    TwoTowerMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    /// Ignored by the linear model.
    pub hidden_dim: usize,
    pub n_drugs: usize,
    pub n_proteins: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.n_drugs == 0 || self.n_proteins == 0 {
            return Err(Error::invalid(
                "embedding_dim, n_drugs and n_proteins must be positive",
            ));
        }
        if self.kind == ModelKind::TwoTowerMlp && self.hidden_dim == 0 {
            return Err(Error::invalid("hidden_dim must be positive"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        let d = self.embedding_dim;
        let h = self.hidden_dim;
        let mut layout = vec![
            TensorSpec::new("drug_embedding", &[self.n_drugs, d]),
            TensorSpec::new("protein_embedding", &[self.n_proteins, d]),
        ];
        match self.kind {
            ModelKind::Linear => layout.push(TensorSpec::new("bias", &[1])),
            ModelKind::TwoTowerMlp => layout.extend([
                TensorSpec::new("hidden_weight", &[h, 3 * d]),
                TensorSpec::new("hidden_bias", &[h]),
                TensorSpec::new("norm_gain", &[h]),
                TensorSpec::new("norm_bias", &[h]),
                TensorSpec::new("output_weight", &[h]),
                TensorSpec::new("output_bias", &[1]),
            ]),
        }
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(TensorSpec::numel).sum()
    }

    fn offsets(&self) -> Offsets {
        let d = self.embedding_dim;
        let h = self.hidden_dim;
        let protein = self.n_drugs * d;
        let tail = protein + self.n_proteins * d;
        Offsets {
            protein,
            tail,
            b1: tail + h * 3 * d,
            gain: tail + h * 3 * d + h,
            beta: tail + h * 3 * d + 2 * h,
            w2: tail + h * 3 * d + 3 * h,
            b2: tail + h * 3 * d + 4 * h,
        }
    }

    fn check(&self, drug: usize, protein: usize) -> Result<()> {
        if drug >= self.n_drugs {
            return Err(Error::OutOfRange {
                what: "drug",
                index: drug,
                limit: self.n_drugs,
            });
        }
        if protein >= self.n_proteins {
            return Err(Error::OutOfRange {
                what: "protein",
                index: protein,
                limit: self.n_proteins,
            });
        }
        Ok(())
    }

    fn check_params<T: Scalar>(&self, params: &ParameterVector<T>) -> Result<()> {
        if params.layout() != self.layout().as_slice() {
            return Err(Error::LayoutMismatch(
                "parameters do not match the model configuration".into(),
            ));
        }
        Ok(())
    }
}

/// Start offsets inside the flat vector. `tail` is the first slot after the
/// embeddings (the bias for `linear`, `hidden_weight` for the MLP).
struct Offsets {
    protein: usize,
    tail: usize,
    b1: usize,
    gain: usize,
    beta: usize,
    w2: usize,
    b2: usize,
}

/// Embeddings and weights ~ Normal(0, 1/fan_in), biases 0, layer-norm gain 1.
/// Embedding rows use `embedding_dim` as their fan-in.
pub fn init_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParameterVector<T>> {
    cfg.validate()?;
    let mut r = rng::stream(seed, "learner/init", &[]);
    let mut tensors = Vec::new();
    for spec in cfg.layout() {
        let n = spec.numel();
        let fill = |r: &mut rng::KeyedRng, std: f64| -> Vec<T> {
            (0..n)
                .map(|_| T::lit(r.sample::<f64, _>(StandardNormal) * std))
                .collect()
        };
        let data = match spec.name.as_str() {
            "drug_embedding" | "protein_embedding" => {
                fill(&mut r, (1.0 / cfg.embedding_dim as f64).sqrt())
            }
            "hidden_weight" => fill(&mut r, (1.0 / (3 * cfg.embedding_dim) as f64).sqrt()),
            "output_weight" => fill(&mut r, (1.0 / cfg.hidden_dim as f64).sqrt()),
            "norm_gain" => vec![T::one(); n],
            _ => vec![T::zero(); n],
        };
        tensors.push((spec, data));
    }
    ParameterVector::from_tensors(tensors)
}

/// Layer normalisation over one vector with population variance.
/// Writes the affine output to `out`, the normalised input to `xhat`, and
/// returns `1 / sqrt(var + eps)`.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], out: &mut [T], xhat: &mut [T]) -> T {
    let n = T::from_count(x.len());
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + T::lit(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    inv_std
}

/// Intermediate values of one MLP forward pass.
struct Trace<T> {
    h: Vec<T>,
    s: Vec<T>,
    xhat: Vec<T>,
    z: Vec<T>,
    inv_std: T,
    y: T,
}

impl<T: Scalar> Trace<T> {
    fn new(cfg: &ModelConfig) -> Self {
        Trace {
            h: vec![T::zero(); 3 * cfg.embedding_dim],
            s: vec![T::zero(); cfg.hidden_dim],
            xhat: vec![T::zero(); cfg.hidden_dim],
            z: vec![T::zero(); cfg.hidden_dim],
            inv_std: T::zero(),
            y: T::zero(),
        }
    }
}

fn forward_mlp<T: Scalar>(
    w: &[T],
    cfg: &ModelConfig,
    o: &Offsets,
    drug: usize,
    protein: usize,
    t: &mut Trace<T>,
) {
    let d = cfg.embedding_dim;
    let hd = cfg.hidden_dim;
    let u = &w[drug * d..(drug + 1) * d];
    let v = &w[o.protein + protein * d..o.protein + (protein + 1) * d];
    t.h[..d].copy_from_slice(u);
    t.h[d..2 * d].copy_from_slice(v);
    for k in 0..d {
        t.h[2 * d + k] = u[k] * v[k];
    }
    let w1 = &w[o.tail..o.b1];
    for (j, sj) in t.s.iter_mut().enumerate() {
        let row = &w1[j * 3 * d..(j + 1) * 3 * d];
        *sj = row.iter().zip(&t.h).map(|(&a, &b)| a * b).sum::<T>() + w[o.b1 + j];
    }
    t.inv_std = layer_norm(
        &t.s,
        &w[o.gain..o.beta],
        &w[o.beta..o.w2],
        &mut t.z,
        &mut t.xhat,
    );
    let mut y = w[o.b2];
    for j in 0..hd {
        if t.z[j] > T::zero() {
            y = y + w[o.w2 + j] * t.z[j];
        }
    }
    t.y = y;
}

fn predict_linear<T: Scalar>(
    w: &[T],
    cfg: &ModelConfig,
    o: &Offsets,
    drug: usize,
    protein: usize,
) -> T {
    let d = cfg.embedding_dim;
    let u = &w[drug * d..(drug + 1) * d];
    let v = &w[o.protein + protein * d..o.protein + (protein + 1) * d];
    u.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>() + w[o.tail]
}

pub fn predict<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    drug: usize,
    protein: usize,
) -> Result<T> {
    cfg.check_params(params)?;
    cfg.check(drug, protein)?;
    Ok(predict_unchecked(
        params.values(),
        cfg,
        &cfg.offsets(),
        drug,
        protein,
    ))
}

fn predict_unchecked<T: Scalar>(
    w: &[T],
    cfg: &ModelConfig,
    o: &Offsets,
    drug: usize,
    protein: usize,
) -> T {
    match cfg.kind {
        ModelKind::Linear => predict_linear(w, cfg, o, drug, protein),
        ModelKind::TwoTowerMlp => {
            let mut t = Trace::new(cfg);
            forward_mlp(w, cfg, o, drug, protein, &mut t);
            t.y
        }
    }
}

/// Predictions for every example, in order.
pub fn predict_all<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    data: &[Example],
) -> Result<Vec<T>> {
    cfg.check_params(params)?;
    let o = cfg.offsets();
    let w = params.values();
    data.iter()
        .map(|e| {
            cfg.check(e.drug, e.protein)?;
            Ok(predict_unchecked(w, cfg, &o, e.drug, e.protein))
        })
        .collect()
}

/// Gradient of the batch mean squared error.
pub fn gradient<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    batch: &[Example],
) -> Result<ParameterVector<T>> {
    let mut grad = params.zeros_like();
    gradient_into(params, cfg, batch, grad.values_mut())?;
    Ok(grad)
}

/// Overwrites `grad` with the gradient of the batch mean squared error.
pub(crate) fn gradient_into<T: Scalar>(
    params: &ParameterVector<T>,
    cfg: &ModelConfig,
    batch: &[Example],
    grad: &mut [T],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    cfg.check_params(params)?;
    for e in batch {
        cfg.check(e.drug, e.protein)?;
    }
    grad.fill(T::zero());
    let w = params.values();
    let o = cfg.offsets();
    let d = cfg.embedding_dim;
    let scale = T::lit(2.0) / T::from_count(batch.len());

    match cfg.kind {
        ModelKind::Linear => {
            for e in batch {
                let dy = scale * (predict_linear(w, cfg, &o, e.drug, e.protein) - T::lit(e.label));
                let (ud, vp) = (e.drug * d, o.protein + e.protein * d);
                for k in 0..d {
                    grad[ud + k] = grad[ud + k] + dy * w[vp + k];
                    grad[vp + k] = grad[vp + k] + dy * w[ud + k];
                }
                grad[o.tail] = grad[o.tail] + dy;
            }
        }
        ModelKind::TwoTowerMlp => {
            let hd = cfg.hidden_dim;
            let n = T::from_count(hd);
            let mut t = Trace::new(cfg);
            let mut ds = vec![T::zero(); hd];
            let mut dh = vec![T::zero(); 3 * d];
            let mut dxhat = vec![T::zero(); hd];
            for e in batch {
                forward_mlp(w, cfg, &o, e.drug, e.protein, &mut t);
                let dy = scale * (t.y - T::lit(e.label));
                grad[o.b2] = grad[o.b2] + dy;

                // Back through relu and the layer-norm affine.
                dxhat.fill(T::zero());
                for j in 0..hd {
                    if t.z[j] > T::zero() {
                        grad[o.w2 + j] = grad[o.w2 + j] + dy * t.z[j];
                        let dz = dy * w[o.w2 + j];
                        grad[o.gain + j] = grad[o.gain + j] + dz * t.xhat[j];
                        grad[o.beta + j] = grad[o.beta + j] + dz;
                        dxhat[j] = dz * w[o.gain + j];
                    }
                }
                // ds = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
                let mean_dx = dxhat.iter().copied().sum::<T>() / n;
                let mean_dxx = dxhat.iter().zip(&t.xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
                for j in 0..hd {
                    ds[j] = t.inv_std * (dxhat[j] - mean_dx - t.xhat[j] * mean_dxx);
                }

                dh.fill(T::zero());
                for j in 0..hd {
                    let g = ds[j];
                    if g == T::zero() {
                        continue;
                    }
                    grad[o.b1 + j] = grad[o.b1 + j] + g;
                    let row = o.tail + j * 3 * d;
                    for k in 0..3 * d {
                        grad[row + k] = grad[row + k] + g * t.h[k];
                        dh[k] = dh[k] + g * w[row + k];
                    }
                }
                let (ud, vp) = (e.drug * d, o.protein + e.protein * d);
                for k in 0..d {
                    let u = w[ud + k];
                    let v = w[vp + k];
                    grad[ud + k] = grad[ud + k] + dh[k] + dh[2 * d + k] * v;
                    grad[vp + k] = grad[vp + k] + dh[d + k] + dh[2 * d + k] * u;
                }
            }
        }
    }
    Ok(())
}
