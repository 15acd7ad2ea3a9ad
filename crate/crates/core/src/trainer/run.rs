use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{lr_schedule, sgd_step, OptimizerState};
use crate::autodiff::{Graph, Mode};
use crate::data::{augment, batches_per_epoch, derive_seed, pk_sample_with, DatasetIndex};
use crate::encoder::{Checkpoint, NamedParam, Network};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cross_modality, Direction, EmbeddingSet, EvalReport};
use crate::losses::{overall_loss, LearnedCenters, LossTerms, LossVariant};
use crate::tensor::Tensor;

const STEP_STREAM: u64 = 1;
const EMBED_CHUNK: usize = 64;
const EPOCH_KEY: &str = "meta.epoch";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub rank1: f64,
    pub map: f64,
    pub minp: f64,
}

impl From<&EvalReport> for ValMetrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            rank1: r.rank1(),
            map: r.map,
            minp: r.minp,
        }
    }
}

/// Mean loss terms over the batches of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    pub loss: f64,
    pub global_metric: f64,
    pub part_id: f64,
    pub part_metric: f64,
    pub val: Option<ValMetrics>,
}

/// Owns a model, its optimizer state and the training history.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    net: Network<f32>,
    centers: Vec<NamedParam<f32>>,
    optim: OptimizerState<f32>,
    next_epoch: usize,
    history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Network::new(cfg.model.clone(), cfg.seed)?;
        let centers = if cfg.variant == LossVariant::Lc {
            let n = cfg.model.num_classes;
            let d = cfg.model.embed_dim;
            let mut c = vec![NamedParam {
                name: "centers.global".into(),
                value: Tensor::zeros(vec![n, cfg.model.feature_dim()]),
            }];
            c.extend((0..cfg.model.num_parts).map(|i| NamedParam {
                name: format!("centers.part{i}"),
                value: Tensor::zeros(vec![n, d]),
            }));
            c
        } else {
            Vec::new()
        };
        let optim = OptimizerState::new(net.params().iter().chain(&centers).map(|p| p.value.len()));
        Ok(Self {
            cfg,
            net,
            centers,
            optim,
            next_epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn optimizer(&self) -> &OptimizerState<f32> {
        &self.optim
    }

    /// Index of the next epoch to run.
    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    fn check_dataset(&self, data: &DatasetIndex) -> Result<()> {
        if data.num_identities() != self.cfg.model.num_classes {
            return Err(Error::config(format!(
                "training set has {} identities, classifier has {} classes",
                data.num_identities(),
                self.cfg.model.num_classes
            )));
        }
        if data.grid() != self.cfg.model.input_grid {
            return Err(Error::config(format!(
                "dataset grid {:?} differs from model input {:?}",
                data.grid(),
                self.cfg.model.input_grid
            )));
        }
        Ok(())
    }

    /// One optimization step on the batch drawn for `(epoch, batch)`.
    pub fn train_step(&mut self, data: &DatasetIndex, epoch: usize, batch: usize) -> Result<LossTerms> {
        let seed = derive_seed(self.cfg.seed, &[STEP_STREAM, epoch as u64, batch as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mb = pk_sample_with(data, self.cfg.p, self.cfg.k, &mut rng)?;
        let images: Vec<Tensor<f32>> = mb.images.iter().map(|im| augment(im, &mut rng)).collect();
        let refs: Vec<&Tensor<f32>> = images.iter().collect();

        let mut g = Graph::new();
        let bound = self.net.bind(&mut g);
        let center_vars: Vec<_> = self.centers.iter().map(|c| g.param(c.value.clone())).collect();
        let input = g.constant(self.net.stack(&refs)?);
        let out = self.net.forward(&mut g, &bound, input, &mb.modalities, Mode::Train)?;
        let learned = (!center_vars.is_empty()).then(|| LearnedCenters {
            global: center_vars[0],
            parts: center_vars[1..].to_vec(),
        });
        let loss = overall_loss(
            &mut g,
            &out,
            &mb.labels,
            &mb.modalities,
            &self.cfg.loss,
            self.cfg.variant,
            learned.as_ref(),
        )?;
        if !loss.terms.total.is_finite() {
            return Err(Error::Diverged { epoch, batch });
        }
        g.backward(loss.total)?;
        let mut grads = self.net.grads(&g, &bound);
        for (c, &v) in self.centers.iter().zip(&center_vars) {
            grads.push(g.grad(v).map_or_else(|| vec![0.0; c.value.len()], <[f32]>::to_vec));
        }
        if grads.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { epoch, batch });
        }

        let lr = lr_schedule(epoch, self.cfg.base_lr);
        let gem: Vec<String> = self.net.gem_param_names().iter().map(|s| s.to_string()).collect();
        let mut slices: Vec<&mut [f32]> = self
            .net
            .params_mut()
            .iter_mut()
            .chain(self.centers.iter_mut())
            .map(|p| p.value.data_mut())
            .collect();
        sgd_step(&mut slices, &grads, lr, self.cfg.momentum, &mut self.optim)?;
        for name in gem {
            if let Some(p) = self.net.param_mut(&name) {
                p.data_mut()[0] = p.data()[0].max(1.0);
            }
        }
        Ok(loss.terms)
    }

    /// Runs the next epoch, validating on `val` when scheduled.
    pub fn run_epoch(&mut self, data: &DatasetIndex, val: Option<&DatasetIndex>) -> Result<EpochRecord> {
        self.check_dataset(data)?;
        let epoch = self.next_epoch;
        let n = batches_per_epoch(data.len(), self.cfg.p, self.cfg.k);
        let mut sum = LossTerms::default();
        for b in 0..n {
            let t = self.train_step(data, epoch, b)?;
            sum.total += t.total;
            sum.global_metric += t.global_metric;
            sum.part_id += t.part_id;
            sum.part_metric += t.part_metric;
        }
        let due = self.cfg.eval_every > 0 && ((epoch + 1).is_multiple_of(self.cfg.eval_every) || epoch + 1 == self.cfg.epochs);
        let val = match val {
            Some(v) if due => Some(ValMetrics::from(&self.evaluate(v, self.cfg.direction)?)),
            _ => None,
        };
        let nf = n as f64;
        let rec = EpochRecord {
            epoch,
            lr: lr_schedule(epoch, self.cfg.base_lr),
            batches: n,
            loss: sum.total / nf,
            global_metric: sum.global_metric / nf,
            part_id: sum.part_id / nf,
            part_metric: sum.part_metric / nf,
            val,
        };
        self.history.push(rec.clone());
        self.next_epoch += 1;
        Ok(rec)
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn fit(&mut self, data: &DatasetIndex, val: Option<&DatasetIndex>) -> Result<&[EpochRecord]> {
        while self.next_epoch < self.cfg.epochs {
            self.run_epoch(data, val)?;
        }
        Ok(&self.history)
    }

    /// Eval-mode concatenated features of every image in `data`.
    pub fn embeddings(&self, data: &DatasetIndex) -> Result<EmbeddingSet> {
        let refs: Vec<&Tensor<f32>> = data.images().iter().map(|r| &r.data).collect();
        let mods: Vec<_> = data.images().iter().map(|r| r.modality).collect();
        let vectors = self.net.embed(&refs, &mods, EMBED_CHUNK)?;
        EmbeddingSet::new(vectors, data.images().iter().map(|r| r.label).collect(), mods)
    }

    pub fn evaluate(&self, data: &DatasetIndex, direction: Direction) -> Result<EvalReport> {
        evaluate_cross_modality(&self.embeddings(data)?, direction)
    }

    /// Model state plus learned centers, momentum buffers and epoch counter.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.net.to_checkpoint();
        for c in &self.centers {
            ck.insert(c.name.clone(), c.value.clone());
        }
        let params = self.net.params().iter().chain(&self.centers);
        for (p, buf) in params.zip(&self.optim.buffers) {
            let t = Tensor::new(p.value.shape().to_vec(), buf.clone()).expect("buffer matches parameter");
            ck.insert(format!("optim.{}", p.name), t);
        }
        ck.insert(EPOCH_KEY, Tensor::scalar(self.next_epoch as f32));
        ck
    }

    /// Rebuilds a trainer from `cfg` and a checkpoint written by
    /// [`Trainer::to_checkpoint`]. History is not restored.
    pub fn from_checkpoint(cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        t.net.load_checkpoint(ck)?;
        let fetch = |name: &str, shape: &[usize]| -> Result<&Tensor<f32>> {
            let v = ck
                .get(name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks `{name}`")))?;
            if v.shape() != shape {
                return Err(Error::config(format!("`{name}` has shape {:?}, expected {shape:?}", v.shape())));
            }
            Ok(v)
        };
        for c in &mut t.centers {
            c.value = fetch(&c.name, c.value.shape())?.clone();
        }
        let params: Vec<_> = t.net.params().iter().chain(&t.centers).collect();
        for (p, buf) in params.iter().zip(&mut t.optim.buffers) {
            *buf = fetch(&format!("optim.{}", p.name), p.value.shape())?.data().to_vec();
        }
        t.next_epoch = fetch(EPOCH_KEY, &[])?.item() as usize;
        Ok(t)
    }
}

/// Splits off the held-out identities and sizes the classifier to the rest.
pub fn prepare_split(cfg: &TrainConfig, dataset: &DatasetIndex) -> Result<(TrainConfig, DatasetIndex, Option<DatasetIndex>)> {
    let (train, val) = if cfg.holdout > 0.0 {
        let (a, b) = dataset.split_holdout(cfg.holdout)?;
        (a, Some(b))
    } else {
        (dataset.clone(), None)
    };
    let cfg = cfg.clone().with_num_classes(train.num_identities());
    Ok((cfg, train, val))
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Final cross-modality report on the held-out identities.
    pub report: Option<EvalReport>,
}

/// Trains on `dataset` minus the held-out identities, then evaluates on them.
pub fn train(cfg: &TrainConfig, dataset: &DatasetIndex) -> Result<TrainOutcome> {
    let (cfg, train_set, val) = prepare_split(cfg, dataset)?;
    let mut trainer = Trainer::new(cfg)?;
    trainer.fit(&train_set, val.as_ref())?;
    let report = match &val {
        Some(v) => Some(trainer.evaluate(v, trainer.cfg.direction)?),
        None => None,
    };
    Ok(TrainOutcome { trainer, report })
}

/// `epoch,lr,batches,loss,global_metric,part_id,part_metric,val_rank1,val_map,val_minp`;
/// validation columns are empty for epochs without validation.
pub fn write_history_csv(records: &[EpochRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "epoch,lr,batches,loss,global_metric,part_id,part_metric,val_rank1,val_map,val_minp"
    )?;
    for r in records {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.batches, r.loss, r.global_metric, r.part_id, r.part_metric
        )?;
        match r.val {
            Some(v) => writeln!(w, ",{},{},{}", v.rank1, v.map, v.minp)?,
            None => writeln!(w, ",,,")?,
        }
    }
    Ok(())
}
