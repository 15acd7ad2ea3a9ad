use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gradcheck::{gradcheck, FD_STEP};
use super::oracle;
use crate::autodiff::{BatchNormStats, Graph, Mode, ReduceKind, Var};
use crate::data::derive_seed;
use crate::encoder::{gem_pool, ForwardOutput};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, EmbeddingSet};
use crate::losses::{
    batch_hard_triplet, comparison_counts, hetero_center_loss, hetero_center_triplet, id_loss_label_smooth,
    learned_center_loss, modality_centers, overall_loss, CenterSet, LossConfig, LossVariant, TripletOutcome,
};
use crate::modality::Modality;
use crate::tensor::Tensor;

/// Relative error bound for gradient checks.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Absolute bound for loss and metric oracle comparisons.
pub const ORACLE_TOLERANCE: f64 = 1e-5;
pub const GRAD_INSTANCES: usize = 20;
pub const LOSS_BATCHES: usize = 100;
pub const METRIC_INSTANCES: usize = 50;

const RHO: f64 = 0.3;
/// Instances closer than this to a non-differentiable point are redrawn.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Grad,
    LossOracle,
    Counts,
    Metrics,
    All,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Grad => "grad",
            Suite::LossOracle => "loss-oracle",
            Suite::Counts => "counts",
            Suite::Metrics => "metrics",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Suite::Grad, Suite::LossOracle, Suite::Counts, Suite::Metrics, Suite::All]
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown suite `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, suite: Suite, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            suite: suite.as_str().into(),
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn push_result(&mut self, suite: Suite, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((ok, detail)) => self.push(suite, name, ok, detail),
            Err(e) => self.push(suite, name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{tag}] {}/{}: {}", c.suite, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub type BatchHardFn = fn(&mut Graph<f64>, Var, &[usize], f64) -> Result<TripletOutcome>;
pub type HeteroCenterFn = fn(&mut Graph<f64>, &CenterSet, f64) -> Result<TripletOutcome>;

/// Loss implementations checked by the oracle and counting suites.
#[derive(Clone, Copy)]
pub struct LossImpls {
    pub batch_hard: BatchHardFn,
    pub hetero_center: HeteroCenterFn,
}

impl Default for LossImpls {
    fn default() -> Self {
        Self {
            batch_hard: batch_hard_triplet::<f64>,
            hetero_center: hetero_center_triplet::<f64>,
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    run_suite_with(suite, seed, &LossImpls::default())
}

pub fn run_suite_with(suite: Suite, seed: u64, impls: &LossImpls) -> SuiteReport {
    let mut report = SuiteReport::default();
    let all = suite == Suite::All;
    if all || suite == Suite::Grad {
        grad_suite(&mut report, derive_seed(seed, &[1]));
    }
    if all || suite == Suite::LossOracle {
        loss_oracle_suite(&mut report, derive_seed(seed, &[2]), impls);
    }
    if all || suite == Suite::Counts {
        counts_suite(&mut report, derive_seed(seed, &[3]), impls);
    }
    if all || suite == Suite::Metrics {
        metrics_suite(&mut report, derive_seed(seed, &[4]));
    }
    report
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}

/// Normal values pushed at least `margin` away from `point`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], point: f64, margin: f64) -> Tensor<f64> {
    let mut t = normal(rng, shape);
    for v in t.data_mut() {
        let d = *v - point;
        if d.abs() < margin {
            *v = point + margin.copysign(d);
        }
    }
    t
}

fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect()
}

/// `2PK` labels and modalities in sampler order: per identity `K` visible
/// then `K` thermal.
fn pk_layout(p: usize, k: usize) -> (Vec<usize>, Vec<Modality>) {
    let mut labels = Vec::new();
    let mut mods = Vec::new();
    for id in 0..p {
        for m in Modality::ALL {
            labels.extend(std::iter::repeat_n(id, k));
            mods.extend(std::iter::repeat_n(m, k));
        }
    }
    (labels, mods)
}

fn centers_of(feats: &Tensor<f64>, labels: &[usize], mods: &[Modality]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (_, v, t) = oracle::naive_centers(&rows_of(feats), labels, mods);
    (v, t)
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

struct GradCase {
    name: &'static str,
    gen: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>,
    /// Rejects inputs too close to a kink.
    smooth: Box<dyn Fn(&[Tensor<f64>]) -> bool>,
    build: Box<Build>,
}

fn case(
    name: &'static str,
    gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> + 'static,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
) -> GradCase {
    GradCase {
        name,
        gen: Box::new(gen),
        smooth: Box::new(|_| true),
        build: Box::new(build),
    }
}

impl GradCase {
    fn guarded(mut self, smooth: impl Fn(&[Tensor<f64>]) -> bool + 'static) -> Self {
        self.smooth = Box::new(smooth);
        self
    }
}

/// Generator producing `shapes` normals plus one trailing weight tensor of
/// shape `out` used to scalarize the result.
fn normals(shapes: &'static [&'static [usize]], out: &'static [usize]) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    move |rng| {
        let mut v: Vec<Tensor<f64>> = shapes.iter().map(|s| normal(rng, s)).collect();
        v.push(normal(rng, out));
        v
    }
}

/// Scalarizes `y` as `sum(y * w)`; `w` is checked like any other input.
fn finish(g: &mut Graph<f64>, y: Var, w: Var) -> Result<Var> {
    let prod = g.mul(y, w)?;
    g.sum_all(prod)
}

fn grad_cases() -> Vec<GradCase> {
    let (p, k) = (3, 2);
    let (labels, mods) = pk_layout(p, k);
    let n = labels.len();
    let mut cases = vec![
        case("matmul", normals(&[&[3, 4], &[4, 2]], &[3, 2]), |g, v| {
            let y = g.matmul(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("add", normals(&[&[3, 4], &[3, 4]], &[3, 4]), |g, v| {
            let y = g.add(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("add_row_broadcast", normals(&[&[3, 4], &[4]], &[3, 4]), |g, v| {
            let y = g.add(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("sub_scalar_broadcast", normals(&[&[3, 4], &[]], &[3, 4]), |g, v| {
            let y = g.sub(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("mul", normals(&[&[2, 5], &[2, 5]], &[2, 5]), |g, v| {
            let y = g.mul(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("mul_row_broadcast", normals(&[&[2, 5], &[5]], &[2, 5]), |g, v| {
            let y = g.mul(v[0], v[1])?;
            finish(g, y, v[2])
        }),
        case("scale_add_scalar", normals(&[&[6]], &[6]), |g, v| {
            let y = g.scale(v[0], -1.7)?;
            let y = g.add_scalar(y, 0.4)?;
            finish(g, y, v[1])
        }),
        case(
            "relu",
            |rng| vec![away_from(rng, &[4, 3], 0.0, 1e-2), normal(rng, &[4, 3])],
            |g, v| {
                let y = g.relu(v[0])?;
                finish(g, y, v[1])
            },
        ),
        case(
            "clamp_min",
            |rng| vec![away_from(rng, &[4, 3], 0.25, 1e-2), normal(rng, &[4, 3])],
            |g, v| {
                let y = g.clamp_min(v[0], 0.25)?;
                finish(g, y, v[1])
            },
        ),
        case(
            "pow_scalar",
            |rng| vec![uniform(rng, &[5], 0.2, 2.0), normal(rng, &[5])],
            |g, v| {
                let y = g.pow_scalar(v[0], 2.5)?;
                finish(g, y, v[1])
            },
        ),
        case(
            "pow_var",
            |rng| {
                vec![
                    uniform(rng, &[2, 3], 0.2, 2.0),
                    Tensor::scalar(rng.gen_range(1.0..4.0)),
                    normal(rng, &[2, 3]),
                ]
            },
            |g, v| {
                let y = g.pow_var(v[0], v[1])?;
                finish(g, y, v[2])
            },
        ),
        case(
            "recip",
            |rng| {
                let mut x = uniform(rng, &[5], 0.5, 2.0);
                for (i, val) in x.data_mut().iter_mut().enumerate() {
                    if i % 2 == 1 {
                        *val = -*val;
                    }
                }
                vec![x, normal(rng, &[5])]
            },
            |g, v| {
                let y = g.recip(v[0])?;
                finish(g, y, v[1])
            },
        ),
        case("reduce_sum_axis1", normals(&[&[3, 4, 2]], &[3, 2]), |g, v| {
            let y = g.reduce(v[0], ReduceKind::Sum, 1)?;
            finish(g, y, v[1])
        }),
        case("reduce_mean_axis0", normals(&[&[3, 4, 2]], &[4, 2]), |g, v| {
            let y = g.reduce(v[0], ReduceKind::Mean, 0)?;
            finish(g, y, v[1])
        }),
        case("reduce_max_axis2", normals(&[&[3, 4]], &[3]), |g, v| {
            let y = g.reduce(v[0], ReduceKind::Max, 1)?;
            finish(g, y, v[1])
        })
        .guarded(|xs| {
            xs[0].data().chunks(4).all(|row| {
                let mut r = row.to_vec();
                r.sort_by(|a, b| b.total_cmp(a));
                r[0] - r[1] > KINK_MARGIN
            })
        }),
        case("sum_all_reshape", normals(&[&[2, 6]], &[3, 4]), |g, v| {
            let y = g.reshape(v[0], vec![3, 4])?;
            let y = finish(g, y, v[1])?;
            let s = g.sum_all(y)?;
            g.scale(s, 2.0)
        }),
        case("narrow", normals(&[&[2, 6, 3]], &[2, 2, 3]), |g, v| {
            let y = g.narrow(v[0], 1, 3, 2)?;
            finish(g, y, v[1])
        }),
        case("concat", normals(&[&[2, 3], &[2, 2]], &[2, 5]), |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            finish(g, y, v[2])
        }),
        case("gather_rows", normals(&[&[4, 3]], &[5, 3]), |g, v| {
            let y = g.gather_rows(v[0], &[2, 0, 2, 3, 1])?;
            finish(g, y, v[1])
        }),
        case("group_mean", normals(&[&[5, 3]], &[2, 3]), |g, v| {
            let y = g.group_mean(v[0], &[vec![0, 3], vec![1, 2, 4]])?;
            finish(g, y, v[1])
        }),
        case("pair_distances", normals(&[&[4, 3], &[3, 3]], &[5]), |g, v| {
            let y = g.pair_distances(v[0], v[1], &[(0, 0), (1, 2), (3, 1), (2, 2), (0, 1)], 1e-12)?;
            finish(g, y, v[2])
        }),
        case("select", normals(&[&[3, 3]], &[4]), |g, v| {
            let y = g.select(v[0], &[8, 0, 4, 4])?;
            finish(g, y, v[1])
        }),
        case("batchnorm_train", normals(&[&[5, 3], &[3], &[3]], &[5, 3]), |g, v| {
            let mut stats = BatchNormStats::new(3);
            let y = g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train)?;
            finish(g, y, v[3])
        }),
        case("batchnorm_eval", normals(&[&[5, 3], &[3], &[3]], &[5, 3]), |g, v| {
            let mut stats = BatchNormStats {
                mean: vec![0.3, -0.2, 0.1],
                var: vec![1.5, 0.7, 2.0],
            };
            let y = g.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Eval)?;
            finish(g, y, v[3])
        }),
        case("pool2", normals(&[&[2, 4, 4, 3]], &[2, 2, 2, 3]), |g, v| {
            let y = g.pool2(v[0])?;
            finish(g, y, v[1])
        }),
        case(
            "cross_entropy_smooth",
            |rng| vec![normal(rng, &[4, 5])],
            |g, v| g.cross_entropy_smooth(v[0], &[0, 3, 4, 3], 0.1),
        ),
        case(
            "gem_pool",
            |rng| {
                vec![
                    uniform(rng, &[2, 2, 3, 4], 0.1, 2.0),
                    Tensor::scalar(rng.gen_range(1.0..5.0)),
                    normal(rng, &[2, 4]),
                ]
            },
            |g, v| {
                let y = gem_pool(g, v[0], v[1])?;
                finish(g, y, v[2])
            },
        ),
    ];

    let l = labels.clone();
    let (l2, m2) = (labels.clone(), mods.clone());
    let (lg2, mg2) = (labels.clone(), mods.clone());
    let l3 = labels.clone();
    let (l4, m4) = (labels.clone(), mods.clone());
    let (l5, m5) = (labels.clone(), mods.clone());
    let (l6, m6) = (labels.clone(), mods.clone());
    cases.push({
        let lg = labels.clone();
        case(
            "batch_hard_triplet",
            move |rng| vec![normal(rng, &[n, 4])],
            move |g, v| Ok(batch_hard_triplet(g, v[0], &l, RHO)?.loss),
        )
        .guarded(move |xs| oracle::triplet_kink_gap(&rows_of(&xs[0]), &lg, RHO) > KINK_MARGIN)
    });
    cases.push(
        case(
            "hetero_center_triplet",
            move |rng| vec![normal(rng, &[n, 4])],
            move |g, v| {
                let c = modality_centers(g, v[0], &l2, &m2)?;
                Ok(hetero_center_triplet(g, &c, RHO)?.loss)
            },
        )
        .guarded(move |xs| {
            let (v, t) = centers_of(&xs[0], &lg2, &mg2);
            oracle::center_kink_gap(&v, &t, RHO) > KINK_MARGIN
        }),
    );
    cases.push(case(
        "learned_center_loss",
        move |rng| vec![normal(rng, &[n, 4]), normal(rng, &[p, 4])],
        move |g, v| learned_center_loss(g, v[0], &l3, v[1]),
    ));
    cases.push(case(
        "hetero_center_loss",
        move |rng| vec![normal(rng, &[n, 4])],
        move |g, v| {
            let c = modality_centers(g, v[0], &l4, &m4)?;
            hetero_center_loss(g, &c)
        },
    ));
    cases.push(case(
        "id_loss_label_smooth",
        |rng| vec![normal(rng, &[6, 3])],
        |g, v| id_loss_label_smooth(g, v[0], &[0, 0, 1, 1, 2, 2], 0.1),
    ));
    let parts = 2;
    let dim = 3;
    let cfg = LossConfig {
        num_classes: p,
        ..LossConfig::default()
    };
    cases.push(
        case(
            "overall_loss",
            move |rng| {
                let mut v: Vec<Tensor<f64>> = (0..parts).map(|_| normal(rng, &[n, dim])).collect();
                v.extend((0..parts).map(|_| normal(rng, &[dim, p])));
                v
            },
            move |g, v| {
                let part_vars = v[..parts].to_vec();
                let logits = (0..parts)
                    .map(|i| g.matmul(v[i], v[parts + i]))
                    .collect::<Result<Vec<_>>>()?;
                let concatenated = g.concat(&part_vars, 1)?;
                let out = ForwardOutput {
                    parts: part_vars,
                    concatenated,
                    logits,
                };
                Ok(overall_loss(g, &out, &l5, &m5, &cfg, LossVariant::HcTri, None)?.total)
            },
        )
        .guarded(move |xs| {
            let mut feats: Vec<Tensor<f64>> = xs[..parts].to_vec();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|r| feats.iter().flat_map(|t| rows_of(t)[r].clone()).collect())
                .collect();
            feats.push(Tensor::new(vec![n, parts * dim], rows.concat()).expect("shape"));
            feats.iter().all(|t| {
                let (v, c) = centers_of(t, &l6, &m6);
                oracle::center_kink_gap(&v, &c, RHO) > KINK_MARGIN
            })
        }),
    );
    cases
}

fn grad_suite(report: &mut SuiteReport, seed: u64) {
    for (ci, c) in grad_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ci as u64]));
        let r = (|| -> Result<(bool, String)> {
            let mut worst: f64 = 0.0;
            for _ in 0..GRAD_INSTANCES {
                let inputs = loop {
                    let x = (c.gen)(&mut rng);
                    if (c.smooth)(&x) {
                        break x;
                    }
                };
                worst = worst.max(gradcheck(&inputs, FD_STEP, &c.build)?);
            }
            Ok((
                worst <= GRAD_TOLERANCE,
                format!("{GRAD_INSTANCES} instances, max rel err {worst:.2e}"),
            ))
        })();
        report.push_result(Suite::Grad, c.name, r);
    }
}

fn random_pk(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(2..=8), rng.gen_range(2..=6))
}

/// Identity centroids at a random spread plus unit noise, so batches range
/// from all-active to mostly-satisfied margins.
fn clustered(rng: &mut ChaCha8Rng, labels: &[usize], dim: usize) -> Tensor<f64> {
    let ids = labels.iter().max().map_or(0, |m| m + 1);
    let spread = rng.gen_range(0.0..4.0);
    let centroids = normal(rng, &[ids, dim]);
    let noise = normal(rng, &[labels.len(), dim]);
    let data = labels
        .iter()
        .enumerate()
        .flat_map(|(i, &l)| (0..dim).map(move |j| (i, l, j)))
        .map(|(i, l, j)| spread * centroids.data()[l * dim + j] + noise.data()[i * dim + j])
        .collect();
    Tensor::new(vec![labels.len(), dim], data).expect("clustered shape")
}

fn loss_oracle_suite(report: &mut SuiteReport, seed: u64, impls: &LossImpls) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bh = Ok((0.0f64, 0usize));
    let mut hc = Ok((0.0f64, 0usize));
    for _ in 0..LOSS_BATCHES {
        let (p, k) = random_pk(&mut rng);
        let (labels, mods) = pk_layout(p, k);
        let feats = clustered(&mut rng, &labels, 8);
        let rows = rows_of(&feats);
        let mut g = Graph::new();
        let x = g.constant(feats.clone());
        bh = bh.and_then(|(worst, count)| {
            let loss = (impls.batch_hard)(&mut g, x, &labels, RHO)?.loss;
            let got = g.value(loss).item();
            let want = oracle::triplet_by_enumeration(&rows, &labels, RHO);
            Ok((worst.max((got - want).abs()), count + 1))
        });
        hc = hc.and_then(|(worst, count)| {
            let centers = modality_centers(&mut g, x, &labels, &mods)?;
            let loss = (impls.hetero_center)(&mut g, &centers, RHO)?.loss;
            let got = g.value(loss).item();
            let (_, v, t) = oracle::naive_centers(&rows, &labels, &mods);
            let want = oracle::center_triplet_by_enumeration(&v, &t, RHO);
            Ok((worst.max((got - want).abs()), count + 1))
        });
    }
    let summarize = |r: Result<(f64, usize)>| {
        r.map(|(worst, count)| {
            (
                worst <= ORACLE_TOLERANCE,
                format!("{count} random batches, max abs diff {worst:.2e}"),
            )
        })
    };
    report.push_result(Suite::LossOracle, "batch_hard_vs_enumeration", summarize(bh));
    report.push_result(Suite::LossOracle, "hetero_center_vs_enumeration", summarize(hc));

    let hand = (|| -> Result<(bool, String)> {
        let mut g = Graph::new();
        let vis = g.constant(Tensor::new(vec![2, 1], vec![0.0, 0.5])?);
        let thr = g.constant(Tensor::new(vec![2, 1], vec![0.4, 0.9])?);
        let centers = CenterSet {
            visible: vis,
            thermal: thr,
            identities: vec![0, 1],
        };
        let loss = (impls.hetero_center)(&mut g, &centers, RHO)?.loss;
        let got = g.value(loss).item();
        Ok(((got - 1.6).abs() <= 1e-9, format!("centers 0, 0.4 / 0.5, 0.9 at rho 0.3 give {got:.12}")))
    })();
    report.push_result(Suite::LossOracle, "hand_example", hand);
}

fn counts_suite(report: &mut SuiteReport, seed: u64, impls: &LossImpls) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (|| -> Result<(bool, String)> {
        let mut bad = Vec::new();
        for p in 2..=8 {
            for k in 1..=6 {
                let (labels, mods) = pk_layout(p, k);
                let mut g = Graph::new();
                let x = g.constant(normal(&mut rng, &[labels.len(), 4]));
                let b = (impls.batch_hard)(&mut g, x, &labels, RHO)?;
                let centers = modality_centers(&mut g, x, &labels, &mods)?;
                let h = (impls.hetero_center)(&mut g, &centers, RHO)?;
                let measured = (b.positive_evals, b.negative_evals, h.positive_evals, h.negative_evals);
                let f = comparison_counts(p, k)?;
                let formula = (f.bh_positive, f.bh_negative, f.hc_positive, f.hc_negative);
                let listed = oracle::enumerate_pairs(p, k);
                if measured != formula || measured != listed {
                    bad.push(format!("P={p} K={k}: {measured:?} vs {formula:?} vs {listed:?}"));
                }
            }
        }
        if bad.is_empty() {
            Ok((true, "P in 2..=8, K in 1..=6: counters = formulas = enumeration".into()))
        } else {
            Ok((false, bad.join("; ")))
        }
    })();
    report.push_result(Suite::Counts, "counters_match_formulas", r);

    let row = (|| -> Result<(bool, String)> {
        let f = comparison_counts(8, 4)?;
        let ok = (f.bh_positive, f.bh_negative, f.hc_positive, f.hc_negative) == (448, 3584, 16, 224)
            && oracle::enumerate_pairs(8, 4) == (448, 3584, 16, 224);
        Ok((
            ok,
            format!(
                "P=8 K=4: {}/{} vs {}/{}",
                f.bh_positive, f.bh_negative, f.hc_positive, f.hc_negative
            ),
        ))
    })();
    report.push_result(Suite::Counts, "table_row_p8_k4", row);
}

fn metrics_suite(report: &mut SuiteReport, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = (|| -> Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        for _ in 0..METRIC_INSTANCES {
            let ids = rng.gen_range(2..=6);
            let ng = rng.gen_range(ids..=30);
            let nq = rng.gen_range(1..=10);
            let dim = rng.gen_range(1..=3);
            // coarse values so distance ties occur
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..dim).map(|_| f64::from(rng.gen_range(-3i32..=3)) * 0.5).collect()
            };
            let mut gl: Vec<usize> = (0..ids).collect();
            gl.extend((ids..ng).map(|_| rng.gen_range(0..ids)));
            let gv: Vec<Vec<f64>> = (0..ng).map(|_| draw(&mut rng)).collect();
            let ql: Vec<usize> = (0..nq).map(|_| rng.gen_range(0..ids)).collect();
            let qv: Vec<Vec<f64>> = (0..nq).map(|_| draw(&mut rng)).collect();
            let to_set = |v: &[Vec<f64>], l: &[usize]| {
                EmbeddingSet::new(
                    v.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect(),
                    l.to_vec(),
                    vec![Modality::Visible; l.len()],
                )
            };
            let rep = compute_metrics(&to_set(&qv, &ql)?, &to_set(&gv, &gl)?)?;
            let (cmc, map, minp) = oracle::metrics_by_enumeration(&qv, &ql, &gv, &gl);
            for (a, b) in rep.cmc.iter().zip(&cmc) {
                worst = worst.max((a - b).abs());
            }
            worst = worst.max((rep.map - map).abs()).max((rep.minp - minp).abs());
        }
        Ok((
            worst <= ORACLE_TOLERANCE,
            format!("{METRIC_INSTANCES} random instances, max abs diff {worst:.2e}"),
        ))
    })();
    report.push_result(Suite::Metrics, "metrics_vs_enumeration", r);

    let fixture = (|| -> Result<(bool, String)> {
        let q = EmbeddingSet::new(vec![vec![0.0]], vec![0], vec![Modality::Thermal])?;
        let g = EmbeddingSet::new(
            vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            vec![0, 1, 0, 1],
            vec![Modality::Visible; 4],
        )?;
        let rep = compute_metrics(&q, &g)?;
        let ok = (rep.map - 0.8333).abs() <= 1e-4 && (rep.minp - 2.0 / 3.0).abs() <= 1e-4 && rep.rank1() == 1.0;
        Ok((
            ok,
            format!("ranked A,B,A,B: AP {:.4}, INP {:.4}, CMC@1 {}", rep.map, rep.minp, rep.rank1()),
        ))
    })();
    report.push_result(Suite::Metrics, "fixture_abab", fixture);
}
