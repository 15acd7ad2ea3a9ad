use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{PoolingKind, StageSpec, TwoStreamConfig};
use crate::autodiff::{BatchNormStats, Graph, Mode, ReduceKind, Var};
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::tensor::{Real, Tensor};

/// Inputs to GeM are clamped to at least this value before exponentiation.
pub const GEM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedStats<T> {
    pub name: String,
    pub stats: BatchNormStats<T>,
}

#[derive(Clone, Copy, Debug)]
struct StageSlots {
    spec: StageSpec,
    weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
}

#[derive(Clone, Copy, Debug)]
struct PartSlots {
    gem_p: Option<usize>,
    reduce_weight: usize,
    gamma: usize,
    beta: usize,
    bn: usize,
    cls_weight: usize,
    cls_bias: usize,
}

/// Graph handles for every parameter of a [`Network`], aligned with
/// [`Network::params`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    gem_consts: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Result of a full forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Per-part features, each `[B, d]`, top strip first.
    pub parts: Vec<Var>,
    /// `[B, p*d]` concatenation of `parts`.
    pub concatenated: Var,
    /// Per-part classifier logits, each `[B, N]`.
    pub logits: Vec<Var>,
}

/// Per-image view of a [`ForwardOutput`].
#[derive(Clone, Debug, PartialEq)]
pub struct PartFeatures<T> {
    pub parts: Vec<Vec<T>>,
    pub concatenated: Vec<T>,
    pub logits: Vec<Vec<T>>,
}

impl ForwardOutput {
    pub fn per_image<T: Real>(&self, g: &Graph<T>) -> Vec<PartFeatures<T>> {
        let b = g.shape(self.concatenated)[0];
        let row = |v: Var, i: usize| {
            let w = g.shape(v)[1];
            g.value(v).data()[i * w..(i + 1) * w].to_vec()
        };
        (0..b)
            .map(|i| PartFeatures {
                parts: self.parts.iter().map(|&v| row(v, i)).collect(),
                concatenated: row(self.concatenated, i),
                logits: self.logits.iter().map(|&v| row(v, i)).collect(),
            })
            .collect()
    }
}

/// Two-stream encoder with the part-level head.
#[derive(Clone, Debug)]
pub struct Network<T> {
    cfg: TwoStreamConfig,
    params: Vec<NamedParam<T>>,
    stats: Vec<NamedStats<T>>,
    visible: Vec<StageSlots>,
    thermal: Vec<StageSlots>,
    shared: Vec<StageSlots>,
    parts: Vec<PartSlots>,
}

struct Builder<T> {
    params: Vec<NamedParam<T>>,
    stats: Vec<NamedStats<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn add(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(NamedParam { name, value });
        self.params.len() - 1
    }

    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) -> usize {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let data: Vec<T> = (0..n).map(|_| T::of(dist.sample(&mut self.rng))).collect();
        self.add(name, Tensor::new(shape, data).expect("shape"))
    }

    fn bn(&mut self, prefix: &str, c: usize) -> (usize, usize, usize) {
        let gamma = self.add(format!("{prefix}.bn.gamma"), Tensor::full(vec![c], T::one()));
        let beta = self.add(format!("{prefix}.bn.beta"), Tensor::zeros(vec![c]));
        self.stats.push(NamedStats {
            name: format!("{prefix}.bn"),
            stats: BatchNormStats::new(c),
        });
        (gamma, beta, self.stats.len() - 1)
    }

    fn stage(&mut self, stream: &str, index: usize, spec: StageSpec) -> StageSlots {
        let prefix = format!("{stream}.stage{index}");
        let std = (2.0 / spec.in_channels as f64).sqrt();
        let weight = self.normal(
            format!("{prefix}.weight"),
            vec![spec.in_channels, spec.out_channels],
            std,
        );
        let (gamma, beta, bn) = self.bn(&prefix, spec.out_channels);
        StageSlots {
            spec,
            weight,
            gamma,
            beta,
            bn,
        }
    }
}

impl<T: Real> Network<T> {
    pub fn new(cfg: TwoStreamConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let s = cfg.split_index;
        let visible = (0..s).map(|i| b.stage("visible", i, cfg.stages[i])).collect();
        let thermal = (0..s).map(|i| b.stage("thermal", i, cfg.stages[i])).collect();
        let shared = (s..cfg.stages.len())
            .map(|i| b.stage("shared", i, cfg.stages[i]))
            .collect();
        let c = cfg.output_grid().channels;
        let d = cfg.embed_dim;
        let n = cfg.num_classes;
        let parts = (0..cfg.num_parts)
            .map(|p| {
                let prefix = format!("head.part{p}");
                let gem_p = (cfg.pooling == PoolingKind::Gem && cfg.learnable_gem)
                    .then(|| b.add(format!("{prefix}.gem_p"), Tensor::scalar(T::of(cfg.gem_p_init))));
                let reduce_weight =
                    b.normal(format!("{prefix}.reduce.weight"), vec![c, d], (2.0 / c as f64).sqrt());
                let (gamma, beta, bn) = b.bn(&format!("{prefix}.reduce"), d);
                let cls_weight = b.normal(format!("{prefix}.classifier.weight"), vec![d, n], 0.001);
                let cls_bias = b.add(format!("{prefix}.classifier.bias"), Tensor::zeros(vec![n]));
                PartSlots {
                    gem_p,
                    reduce_weight,
                    gamma,
                    beta,
                    bn,
                    cls_weight,
                    cls_bias,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            params: b.params,
            stats: b.stats,
            visible,
            thermal,
            shared,
            parts,
        })
    }

    pub fn config(&self) -> &TwoStreamConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[NamedParam<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedParam<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn stats(&self) -> &[NamedStats<T>] {
        &self.stats
    }

    pub fn stats_mut(&mut self) -> &mut [NamedStats<T>] {
        &mut self.stats
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Names of the learnable GeM exponents, if any.
    pub fn gem_param_names(&self) -> Vec<&str> {
        self.parts
            .iter()
            .filter_map(|p| p.gem_p.map(|i| self.params[i].name.as_str()))
            .collect()
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, true)
    }

    /// Registers parameters as constants (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let gem_consts = if self.cfg.pooling == PoolingKind::Gem && !self.cfg.learnable_gem {
            vec![g.constant(Tensor::scalar(T::of(self.cfg.gem_p_init)))]
        } else {
            Vec::new()
        };
        Bound { vars, gem_consts }
    }

    /// Gradients for each parameter after `g.backward`, zeros where none flowed.
    pub fn grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Vec<T>> {
        self.params
            .iter()
            .zip(&bound.vars)
            .map(|(p, &v)| {
                g.grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); p.value.len()])
            })
            .collect()
    }

    /// Stacks `[H, W, C]` images into a `[B, H, W, C]` batch.
    pub fn stack(&self, images: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let grid = self.cfg.input_grid;
        let want = grid.shape();
        let mut data = Vec::with_capacity(images.len() * grid.len());
        for img in images {
            if img.shape() != want.as_slice() {
                return Err(Error::Shape {
                    op: "stack",
                    left: want,
                    right: img.shape().to_vec(),
                });
            }
            data.extend_from_slice(img.data());
        }
        if images.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Tensor::new(vec![images.len(), grid.rows, grid.cols, grid.channels], data)
    }

    fn run_stage(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        slots: &StageSlots,
        x: Var,
        mode: Mode,
        stats: &mut [NamedStats<T>],
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
        let flat = g.reshape(x, vec![b * h * w, c])?;
        let mixed = g.matmul(flat, bound.vars[slots.weight])?;
        let normed = g.batchnorm(
            mixed,
            bound.vars[slots.gamma],
            bound.vars[slots.beta],
            &mut stats[slots.bn].stats,
            mode,
        )?;
        let act = g.relu(normed)?;
        let map = g.reshape(act, vec![b, h, w, slots.spec.out_channels])?;
        if slots.spec.downsample_rows == 2 {
            g.pool2(map)
        } else {
            Ok(map)
        }
    }

    fn encode_impl(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: Var,
        modalities: &[Modality],
        mode: Mode,
        stats: &mut [NamedStats<T>],
    ) -> Result<Var> {
        let shape = g.shape(input).to_vec();
        let grid = self.cfg.input_grid;
        if shape.len() != 4 || shape[1..] != [grid.rows, grid.cols, grid.channels] {
            return Err(Error::Shape {
                op: "forward_encoder",
                left: vec![0, grid.rows, grid.cols, grid.channels],
                right: shape,
            });
        }
        if modalities.len() != shape[0] {
            return Err(Error::invalid(format!(
                "{} modality tags for a batch of {}",
                modalities.len(),
                shape[0]
            )));
        }
        let mut x = if self.cfg.split_index == 0 {
            input
        } else {
            let mut streams = Vec::new();
            let mut order = Vec::new();
            for (modality, slots) in [(Modality::Visible, &self.visible), (Modality::Thermal, &self.thermal)] {
                let idx: Vec<usize> = (0..modalities.len())
                    .filter(|&i| modalities[i] == modality)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let mut h = g.gather_rows(input, &idx)?;
                for s in slots.iter() {
                    h = self.run_stage(g, bound, s, h, mode, stats)?;
                }
                streams.push(h);
                order.extend(idx);
            }
            let joined = if streams.len() == 1 {
                streams[0]
            } else {
                g.concat(&streams, 0)?
            };
            if order.iter().enumerate().all(|(i, &o)| i == o) {
                joined
            } else {
                let mut inverse = vec![0; order.len()];
                for (pos, &orig) in order.iter().enumerate() {
                    inverse[orig] = pos;
                }
                g.gather_rows(joined, &inverse)?
            }
        };
        for s in &self.shared {
            x = self.run_stage(g, bound, s, x, mode, stats)?;
        }
        Ok(x)
    }

    /// Runs the modality-specific stages then the shared stages on a
    /// `[B, H0, W0, C0]` batch, giving a `[B, H, W, C]` feature map.
    pub fn forward_encoder(
        &mut self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: Var,
        modalities: &[Modality],
        mode: Mode,
    ) -> Result<Var> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.encode_impl(g, bound, input, modalities, mode, &mut stats);
        self.stats = stats;
        out
    }

    fn pool_strip(&self, g: &mut Graph<T>, bound: &Bound, strip: Var, part: usize) -> Result<Var> {
        match self.cfg.pooling {
            PoolingKind::Gem => {
                let p = match self.parts[part].gem_p {
                    Some(i) => bound.vars[i],
                    None => bound.gem_consts[0],
                };
                gem_pool(g, strip, p)
            }
            PoolingKind::Mean => spatial_reduce(g, strip, ReduceKind::Mean),
            PoolingKind::Max => spatial_reduce(g, strip, ReduceKind::Max),
        }
    }

    fn check_part(&self, part: usize) -> Result<()> {
        if part >= self.parts.len() {
            return Err(Error::invalid(format!(
                "part index {part} out of range 0..{}",
                self.parts.len()
            )));
        }
        Ok(())
    }

    fn reduce_project_impl(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        pooled: Var,
        part: usize,
        mode: Mode,
        stats: &mut [NamedStats<T>],
    ) -> Result<Var> {
        self.check_part(part)?;
        let slots = self.parts[part];
        let z = g.matmul(pooled, bound.vars[slots.reduce_weight])?;
        let z = g.batchnorm(
            z,
            bound.vars[slots.gamma],
            bound.vars[slots.beta],
            &mut stats[slots.bn].stats,
            mode,
        )?;
        g.relu(z)
    }

    /// Dimension-reduction block of one part: `[B, C]` to `[B, d]` via
    /// linear map, batchnorm, relu.
    pub fn reduce_project(
        &mut self,
        g: &mut Graph<T>,
        bound: &Bound,
        pooled: Var,
        part: usize,
        mode: Mode,
    ) -> Result<Var> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.reduce_project_impl(g, bound, pooled, part, mode, &mut stats);
        self.stats = stats;
        out
    }

    /// Logits of the classifier owned by `part`.
    pub fn classify_part(&self, g: &mut Graph<T>, bound: &Bound, feature: Var, part: usize) -> Result<Var> {
        self.check_part(part)?;
        let slots = self.parts[part];
        let z = g.matmul(feature, bound.vars[slots.cls_weight])?;
        g.add(z, bound.vars[slots.cls_bias])
    }

    fn forward_impl(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: Var,
        modalities: &[Modality],
        mode: Mode,
        stats: &mut [NamedStats<T>],
    ) -> Result<ForwardOutput> {
        let map = self.encode_impl(g, bound, input, modalities, mode, stats)?;
        let strips = partition_strips(g, map, self.cfg.num_parts)?;
        let mut parts = Vec::with_capacity(strips.len());
        let mut logits = Vec::with_capacity(strips.len());
        for (i, strip) in strips.into_iter().enumerate() {
            let pooled = self.pool_strip(g, bound, strip, i)?;
            let feat = self.reduce_project_impl(g, bound, pooled, i, mode, stats)?;
            logits.push(self.classify_part(g, bound, feat, i)?);
            parts.push(feat);
        }
        let concatenated = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 1)?
        };
        Ok(ForwardOutput {
            parts,
            concatenated,
            logits,
        })
    }

    /// Full pipeline: encoder, strips, pooling, projection, classifiers,
    /// concatenation. Train mode updates batchnorm running statistics.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: Var,
        modalities: &[Modality],
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.forward_impl(g, bound, input, modalities, mode, &mut stats);
        self.stats = stats;
        out
    }

    /// Eval-mode forward that leaves the network untouched.
    pub fn forward_eval(
        &self,
        g: &mut Graph<T>,
        bound: &Bound,
        input: Var,
        modalities: &[Modality],
    ) -> Result<ForwardOutput> {
        let mut stats = self.stats.clone();
        self.forward_impl(g, bound, input, modalities, Mode::Eval, &mut stats)
    }

    /// Eval-mode concatenated features of `images`, in chunks of `chunk`.
    pub fn embed(&self, images: &[&Tensor<T>], modalities: &[Modality], chunk: usize) -> Result<Vec<Vec<T>>> {
        if images.len() != modalities.len() {
            return Err(Error::invalid("images and modality tags differ in length"));
        }
        let mut out = Vec::with_capacity(images.len());
        for (imgs, mods) in images.chunks(chunk.max(1)).zip(modalities.chunks(chunk.max(1))) {
            let mut g = Graph::new();
            let bound = self.bind_frozen(&mut g);
            let input = g.constant(self.stack(imgs)?);
            let fwd = self.forward_eval(&mut g, &bound, input, mods)?;
            let w = self.cfg.feature_dim();
            let data = g.value(fwd.concatenated).data();
            out.extend(data.chunks(w).map(<[T]>::to_vec));
        }
        Ok(out)
    }
}

/// Splits a `[B, H, W, C]` (or `[H, W, C]`) map into `p` contiguous row bands,
/// top to bottom.
pub fn partition_strips<T: Real>(g: &mut Graph<T>, map: Var, p: usize) -> Result<Vec<Var>> {
    let shape = g.shape(map).to_vec();
    let row_axis = match shape.len() {
        3 => 0,
        4 => 1,
        _ => return Err(Error::domain("partition_strips", format!("unexpected shape {shape:?}"))),
    };
    let h = shape[row_axis];
    if p == 0 || !h.is_multiple_of(p) {
        return Err(Error::config(format!("{h} rows cannot be split into {p} strips")));
    }
    if p == 1 {
        return Ok(vec![map]);
    }
    let band = h / p;
    (0..p).map(|i| g.narrow(map, row_axis, i * band, band)).collect()
}

fn flatten_cells<T: Real>(g: &mut Graph<T>, strip: Var) -> Result<(Var, usize)> {
    let shape = g.shape(strip).to_vec();
    match shape.len() {
        3 => Ok((g.reshape(strip, vec![shape[0] * shape[1], shape[2]])?, 0)),
        4 => Ok((
            g.reshape(strip, vec![shape[0], shape[1] * shape[2], shape[3]])?,
            1,
        )),
        _ => Err(Error::domain("pool", format!("unexpected strip shape {shape:?}"))),
    }
}

fn spatial_reduce<T: Real>(g: &mut Graph<T>, strip: Var, kind: ReduceKind) -> Result<Var> {
    let (cells, axis) = flatten_cells(g, strip)?;
    g.reduce(cells, kind, axis)
}

/// Generalized-mean pooling over the spatial cells of a strip, per channel:
/// `(mean(max(x, eps)^p))^(1/p)`. `gem_p` is a scalar node and receives a
/// gradient when trainable.
pub fn gem_pool<T: Real>(g: &mut Graph<T>, strip: Var, gem_p: Var) -> Result<Var> {
    let p = g.scalar_value(gem_p);
    if !(p >= T::one()) {
        return Err(Error::domain("gem_pool", format!("gem_p {p} must be >= 1")));
    }
    let (cells, axis) = flatten_cells(g, strip)?;
    let clamped = g.clamp_min(cells, GEM_EPS)?;
    let powered = g.pow_var(clamped, gem_p)?;
    let mean = g.reduce(powered, ReduceKind::Mean, axis)?;
    let mean = g.clamp_min(mean, T::min_positive_value().as_f64())?;
    let inv = g.recip(gem_p)?;
    g.pow_var(mean, inv)
}
