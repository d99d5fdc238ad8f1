use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::LayerSpec;
use super::geometry::CloudPlan;
use crate::autodiff::{BatchStats, Graph, NamedTensor, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::{Peak, PeakCloud};

/// One pointwise layer: linear map, batch norm, rectifier.
///
/// `weight` acts on point coordinates (or the whole input when there is no carried feature);
/// `feat_weight` acts on carried features. Splitting the first layer this way lets the feature
/// product be computed once per point instead of once per group membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub feat_weight: Option<Tensor<T>>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> Layer<T> {
    fn init(
        name: String,
        coord_in: usize,
        feat_in: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((coord_in + feat_in) as f64).sqrt();
        let mut uniform = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect()
        };
        let weight = Tensor::new(vec![coord_in, out], uniform(coord_in * out)).unwrap();
        let feat_weight =
            (feat_in > 0).then(|| Tensor::new(vec![feat_in, out], uniform(feat_in * out)).unwrap());
        let bias = Tensor::vector(uniform(out));
        Self {
            name,
            weight,
            feat_weight,
            bias,
            gamma: Tensor::filled(&[out], T::one()),
            beta: Tensor::zeros(&[out]),
            running_mean: Tensor::zeros(&[out]),
            running_var: Tensor::filled(&[out], T::one()),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.feat_weight.as_ref());
        v.extend([&self.bias, &self.gamma, &self.beta]);
        v
    }

    fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.feat_weight.as_mut());
        v.extend([&mut self.bias, &mut self.gamma, &mut self.beta]);
        v
    }

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let n = &self.name;
        let mut v = vec![(format!("{n}.weight"), &self.weight)];
        if let Some(fw) = &self.feat_weight {
            v.push((format!("{n}.feat_weight"), fw));
        }
        v.extend([
            (format!("{n}.bias"), &self.bias),
            (format!("{n}.bn.gamma"), &self.gamma),
            (format!("{n}.bn.beta"), &self.beta),
            (format!("{n}.bn.running_mean"), &self.running_mean),
            (format!("{n}.bn.running_var"), &self.running_var),
        ]);
        v
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let n = self.name.clone();
        let mut v = vec![(format!("{n}.weight"), &mut self.weight)];
        if let Some(fw) = &mut self.feat_weight {
            v.push((format!("{n}.feat_weight"), fw));
        }
        v.extend([
            (format!("{n}.bias"), &mut self.bias),
            (format!("{n}.bn.gamma"), &mut self.gamma),
            (format!("{n}.bn.beta"), &mut self.beta),
            (format!("{n}.bn.running_mean"), &mut self.running_mean),
            (format!("{n}.bn.running_var"), &mut self.running_var),
        ]);
        v
    }
}

/// All encoder weights. Layers are stored SA1 branches, SA2 branches, then the global stage,
/// each branch's layers in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub spec: LayerSpec,
    pub layers: Vec<Layer<T>>,
}

fn stage_layers<T: Real>(
    prefix: &str,
    stage: &super::config::StageSpec,
    feat_in: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Layer<T>>,
) {
    for (j, b) in stage.branches.iter().enumerate() {
        let mut prev = 0;
        for (l, &w) in b.mlp.iter().enumerate() {
            let name = format!("{prefix}.b{j}.l{l}");
            out.push(if l == 0 {
                Layer::init(name, 3, feat_in, w, rng)
            } else {
                Layer::init(name, prev, 0, w, rng)
            });
            prev = w;
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Uniform `±1/sqrt(fan_in)` weights and biases, unit/zero batch-norm affine. The draws are
    /// made in `f64`, so `f32` and `f64` models from one seed agree up to rounding.
    pub fn init(spec: &LayerSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        stage_layers("sa1", &spec.sa1, 0, &mut rng, &mut layers);
        stage_layers("sa2", &spec.sa2, spec.sa1.out_dim(), &mut rng, &mut layers);
        let mut prev = 0;
        for (l, &w) in spec.global_mlp.iter().enumerate() {
            let name = format!("global.l{l}");
            layers.push(if l == 0 {
                Layer::init(name, 3, spec.sa2.out_dim(), w, &mut rng)
            } else {
                Layer::init(name, prev, 0, w, &mut rng)
            });
            prev = w;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Number of trainable scalars (weights, biases, batch-norm affine).
    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::trainable).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(Layer::trainable_mut)
            .collect()
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.layers
            .iter()
            .flat_map(Layer::named)
            .map(|(n, t)| NamedTensor::new(n, t))
            .collect()
    }

    /// Overwrites every tensor from a checkpoint; names and shapes must all match.
    pub fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: std::collections::HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for layer in &mut self.layers {
            for (name, slot) in layer.named_mut() {
                let nt = by_name
                    .get(name.as_str())
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
                if nt.tensor.shape() != slot.shape() {
                    return Err(Error::Format(format!(
                        "tensor {name} has shape {:?}, model expects {:?}",
                        nt.tensor.shape(),
                        slot.shape()
                    )));
                }
                *slot = nt.tensor.cast();
            }
        }
        Ok(())
    }

    pub fn from_named(spec: &LayerSpec, tensors: &[NamedTensor]) -> Result<Self> {
        let mut p = Self::init(spec, 0)?;
        p.load_named(tensors)?;
        Ok(p)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    weight: l.weight.cast(),
                    feat_weight: l.feat_weight.as_ref().map(Tensor::cast),
                    bias: l.bias.cast(),
                    gamma: l.gamma.cast(),
                    beta: l.beta.cast(),
                    running_mean: l.running_mean.cast(),
                    running_var: l.running_var.cast(),
                })
                .collect(),
        }
    }

    /// Exponential moving average update of the running statistics, one entry per layer.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} batch statistics for {} layers",
                stats.len(),
                self.layers.len()
            )));
        }
        let m = T::from_f64(self.spec.bn_momentum as f64);
        let keep = T::one() - m;
        for (layer, s) in self.layers.iter_mut().zip(stats) {
            for (r, &v) in layer.running_mean.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in layer.running_var.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * v;
            }
        }
        Ok(())
    }
}

/// Graph handles for one layer's trainable tensors.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub feat_weight: Option<Var>,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// Places the parameters on `g`, as trainable leaves or as constants.
pub fn bind<T: Real>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Vec<LayerVars> {
    let mut put = |t: &Tensor<T>| {
        if trainable {
            g.param(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    params
        .layers
        .iter()
        .map(|l| LayerVars {
            weight: put(&l.weight),
            feat_weight: l.feat_weight.as_ref().map(&mut put),
            bias: put(&l.bias),
            gamma: put(&l.gamma),
            beta: put(&l.beta),
        })
        .collect()
}

/// Gradients of the trainable tensors in [`ModelParams::trainable`] order.
pub fn collect_grads<T: Real>(
    grads: &mut crate::autodiff::Gradients<T>,
    vars: &[LayerVars],
    params: &ModelParams<T>,
) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    for (v, l) in vars.iter().zip(&params.layers) {
        out.push(grads.take_or_zeros(v.weight, l.weight.shape()));
        if let (Some(fv), Some(fw)) = (v.feat_weight, &l.feat_weight) {
            out.push(grads.take_or_zeros(fv, fw.shape()));
        }
        out.push(grads.take_or_zeros(v.bias, l.bias.shape()));
        out.push(grads.take_or_zeros(v.gamma, l.gamma.shape()));
        out.push(grads.take_or_zeros(v.beta, l.beta.shape()));
    }
    out
}

/// Batch norm with batch statistics (training) or running statistics (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct Forward<'a, T: Real> {
    g: &'a mut Graph<T>,
    params: &'a ModelParams<T>,
    vars: &'a [LayerVars],
    mode: Mode,
    stats: Vec<BatchStats<T>>,
}

impl<T: Real> Forward<'_, T> {
    /// Normalization and rectifier after the linear part of layer `li`.
    fn finish(&mut self, li: usize, h: Var) -> Result<Var> {
        let (v, layer) = (self.vars[li], &self.params.layers[li]);
        let eps = T::from_f64(self.params.spec.bn_eps as f64);
        let h = match self.mode {
            Mode::Train => {
                let (h, s) = self.g.batch_norm(h, v.gamma, v.beta, eps)?;
                self.stats.push(s);
                h
            }
            Mode::Eval => self.g.batch_norm_eval(
                h,
                v.gamma,
                v.beta,
                layer.running_mean.data(),
                layer.running_var.data(),
                eps,
            )?,
        };
        self.g.relu(h)
    }

    fn dense(&mut self, li: usize, x: Var) -> Result<Var> {
        let v = self.vars[li];
        let h = self.g.linear(x, v.weight, Some(v.bias))?;
        self.finish(li, h)
    }

    /// Remaining layers of an MLP whose first layer output is `h`.
    fn tail(&mut self, first: usize, n_layers: usize, mut h: Var) -> Result<Var> {
        for li in first + 1..first + n_layers {
            h = self.dense(li, h)?;
        }
        Ok(h)
    }
}

fn coords_matrix<T: Real>(rows: impl Iterator<Item = [f32; 3]>) -> Result<Tensor<T>> {
    let data: Vec<T> = rows
        .flat_map(|r| r.map(|v| T::from_f64(v as f64)))
        .collect();
    Tensor::matrix(data.len() / 3, 3, data)
}

fn rel(p: &Peak, anchor: &Peak) -> [f32; 3] {
    [p.t - anchor.t, p.f - anchor.f, p.a - anchor.a]
}

/// Encoder forward over a batch of planned clouds. Returns the `B x D` unit-norm embedding
/// matrix and, in training mode, the batch statistics of every layer in parameter order.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &[LayerVars],
    plans: &[CloudPlan],
    mode: Mode,
) -> Result<(Var, Vec<BatchStats<T>>)> {
    let spec = &params.spec;
    if plans.is_empty() {
        return Err(Error::Shape("empty encoder batch".into()));
    }
    let (n1, n2) = (spec.sa1.n_anchors, spec.sa2.n_anchors);
    let mut fw = Forward {
        g,
        params,
        vars,
        mode,
        stats: Vec::new(),
    };
    let mut li = 0;

    let mut sa1_parts = Vec::new();
    for (j, b) in spec.sa1.branches.iter().enumerate() {
        let x = coords_matrix(plans.iter().flat_map(|p| {
            p.groups1[j]
                .chunks(b.group_size)
                .enumerate()
                .flat_map(move |(i, grp)| grp.iter().map(move |&k| rel(&p.points[k], p.anchor1(i))))
        }))?;
        let x = fw.g.constant(x);
        let h = fw.dense(li, x)?;
        let h = fw.tail(li, b.mlp.len(), h)?;
        sa1_parts.push(fw.g.reduce_max_groups(h, b.group_size)?);
        li += b.mlp.len();
    }
    let f1 = msg_concat(fw.g, &sa1_parts)?;

    let mut sa2_parts = Vec::new();
    for (j, b) in spec.sa2.branches.iter().enumerate() {
        let x = coords_matrix(plans.iter().flat_map(|p| {
            p.groups2[j]
                .chunks(b.group_size)
                .enumerate()
                .flat_map(move |(i, grp)| grp.iter().map(move |&k| rel(p.anchor1(k), p.anchor2(i))))
        }))?;
        let rows: Vec<usize> = plans
            .iter()
            .enumerate()
            .flat_map(|(bi, p)| p.groups2[j].iter().map(move |&k| bi * n1 + k))
            .collect();
        let v = fw.vars[li];
        let fwt = v
            .feat_weight
            .ok_or_else(|| Error::Shape("SA2 layer without feature weight".into()))?;
        let projected = fw.g.linear(f1, fwt, None)?;
        let gathered = fw.g.gather_rows(projected, &rows)?;
        let x = fw.g.constant(x);
        let c = fw.g.linear(x, v.weight, Some(v.bias))?;
        let h = fw.g.add(c, gathered)?;
        let h = fw.finish(li, h)?;
        let h = fw.tail(li, b.mlp.len(), h)?;
        sa2_parts.push(fw.g.reduce_max_groups(h, b.group_size)?);
        li += b.mlp.len();
    }
    let f2 = msg_concat(fw.g, &sa2_parts)?;

    let x = coords_matrix(
        plans
            .iter()
            .flat_map(|p| (0..n2).map(move |i| p.anchor2(i).coords())),
    )?;
    let x = fw.g.constant(x);
    let v = fw.vars[li];
    let fwt = v
        .feat_weight
        .ok_or_else(|| Error::Shape("global layer without feature weight".into()))?;
    let c = fw.g.linear(x, v.weight, Some(v.bias))?;
    let f = fw.g.linear(f2, fwt, None)?;
    let h = fw.g.add(c, f)?;
    let h = fw.finish(li, h)?;
    let h = fw.tail(li, spec.global_mlp.len(), h)?;
    let pooled = fw.g.reduce_max_groups(h, n2)?;
    let z = fw.g.l2_normalize_rows(pooled)?;
    Ok((z, fw.stats))
}

/// Concatenates per-branch anchor features along the feature axis.
pub fn msg_concat<T: Real>(g: &mut Graph<T>, branches: &[Var]) -> Result<Var> {
    g.concat_cols(branches)
}

/// 128-d unit-norm segment embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub values: Vec<f32>,
}

impl Fingerprint {
    pub fn norm(&self) -> f32 {
        self.values.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    pub fn dot(&self, other: &Fingerprint) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Read-only inference wrapper.
#[derive(Debug, Clone)]
pub struct Encoder {
    params: ModelParams<f32>,
    /// Clouds per forward graph.
    pub chunk: usize,
}

impl Encoder {
    pub fn new(params: ModelParams<f32>) -> Self {
        Self { params, chunk: 16 }
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.params.spec
    }

    pub fn embed_points(&self, clouds: &[&[Peak]]) -> Result<Vec<Fingerprint>> {
        let mut out = Vec::with_capacity(clouds.len());
        let mut g = Graph::new();
        for chunk in clouds.chunks(self.chunk.max(1)) {
            let plans = chunk
                .iter()
                .map(|pts| CloudPlan::new(pts, &self.params.spec))
                .collect::<Result<Vec<_>>>()?;
            g.reset();
            let vars = bind(&mut g, &self.params, false);
            let (z, _) = forward(&mut g, &self.params, &vars, &plans, Mode::Eval)?;
            let z = g.value(z);
            let d = z.dims2()?.1;
            out.extend(
                z.data()
                    .chunks_exact(d)
                    .map(|r| Fingerprint { values: r.to_vec() }),
            );
        }
        Ok(out)
    }

    pub fn embed(&self, clouds: &[PeakCloud]) -> Result<Vec<Fingerprint>> {
        let pts: Vec<&[Peak]> = clouds.iter().map(|c| c.peaks.as_slice()).collect();
        self.embed_points(&pts)
    }
}
