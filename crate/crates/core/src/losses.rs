//! Metric-learning and identification losses.
//!
//! Every distance is Euclidean, computed as `sqrt(|a - b|^2 + DIST_EPS)` so the
//! gradient stays finite at zero distance. Hard mining breaks ties by lowest
//! index. Triplet-style losses are sums over anchors unless
//! [`Reduction::Mean`] is selected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::encoder::ForwardOutput;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::tensor::Real;

pub const DIST_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Triplet margin.
    pub rho: f64,
    /// Weight of the per-part metric term.
    pub lambda: f64,
    /// Label smoothing of the identification loss.
    pub xi: f64,
    pub num_classes: usize,
    /// How metric terms combine their per-anchor (or per-sample) terms.
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            lambda: 2.0,
            xi: 0.1,
            num_classes: 32,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    /// Defaults used for the dual-camera dataset.
    pub fn regdb_style(num_classes: usize) -> Self {
        Self {
            lambda: 2.0,
            num_classes,
            ..Self::default()
        }
    }

    /// Defaults used for the multi-camera dataset.
    pub fn sysu_style(num_classes: usize) -> Self {
        Self {
            lambda: 1.0,
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) {
            return Err(Error::config(format!("rho {} must be >= 0", self.rho)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.xi) {
            return Err(Error::config(format!("xi {} must lie in [0, 1)", self.xi)));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        Ok(())
    }
}

/// Which metric term accompanies the identification loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    BhTri,
    HcTri,
    Lc,
    Hc,
    IdOnly,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::BhTri,
        LossVariant::HcTri,
        LossVariant::Lc,
        LossVariant::Hc,
        LossVariant::IdOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::BhTri => "bh_tri",
            LossVariant::HcTri => "hc_tri",
            LossVariant::Lc => "lc",
            LossVariant::Hc => "hc",
            LossVariant::IdOnly => "id_only",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown loss variant `{s}`")))
    }
}

/// A mined triplet loss together with how many pairwise distances it evaluated.
#[derive(Clone, Copy, Debug)]
pub struct TripletOutcome {
    pub loss: Var,
    pub positive_evals: usize,
    pub negative_evals: usize,
}

/// Per-identity, per-modality feature centers of a batch, aligned by identity.
#[derive(Clone, Debug)]
pub struct CenterSet {
    /// `[P, d]`
    pub visible: Var,
    /// `[P, d]`
    pub thermal: Var,
    pub identities: Vec<usize>,
}

impl CenterSet {
    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identities.is_empty()
    }
}

fn rows<T: Real>(g: &Graph<T>, feats: Var, labels: usize) -> Result<usize> {
    let s = g.shape(feats);
    if s.len() != 2 || s[0] != labels {
        return Err(Error::Shape {
            op: "loss",
            left: s.to_vec(),
            right: vec![labels],
        });
    }
    Ok(s[0])
}

fn first_argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn first_argmin<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v < xs[best] {
            best = i;
        }
    }
    best
}

fn hinge_total<T: Real>(g: &mut Graph<T>, pos: Var, neg: Var, rho: f64, reduction: Reduction) -> Result<Var> {
    let n = g.value(pos).len();
    let diff = g.sub(pos, neg)?;
    let shifted = g.add_scalar(diff, rho)?;
    let hinged = g.relu(shifted)?;
    let total = g.sum_all(hinged)?;
    reduce(g, total, n, reduction)
}

fn reduce<T: Real>(g: &mut Graph<T>, total: Var, count: usize, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Sum => Ok(total),
        Reduction::Mean => g.scale(total, 1.0 / count as f64),
    }
}

/// Batch-hard triplet loss over all samples, ignoring modality: every anchor
/// is paired with its farthest same-label sample and nearest other-label
/// sample.
pub fn batch_hard_triplet<T: Real>(
    g: &mut Graph<T>,
    feats: Var,
    labels: &[usize],
    rho: f64,
) -> Result<TripletOutcome> {
    batch_hard_triplet_with(g, feats, labels, rho, Reduction::Sum)
}

pub fn batch_hard_triplet_with<T: Real>(
    g: &mut Graph<T>,
    feats: Var,
    labels: &[usize],
    rho: f64,
    reduction: Reduction,
) -> Result<TripletOutcome> {
    let n = rows(g, feats, labels.len())?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::invalid(format!("label {l} has a single sample, no positive exists")));
    }
    if counts.len() < 2 {
        return Err(Error::invalid("batch-hard triplet needs at least 2 distinct labels"));
    }
    let mut pos_pairs = Vec::new();
    let mut neg_pairs = Vec::new();
    let mut pos_spans = Vec::with_capacity(n);
    let mut neg_spans = Vec::with_capacity(n);
    for a in 0..n {
        let (p0, n0) = (pos_pairs.len(), neg_pairs.len());
        for b in 0..n {
            if b == a {
                continue;
            }
            if labels[b] == labels[a] {
                pos_pairs.push((a, b));
            } else {
                neg_pairs.push((a, b));
            }
        }
        pos_spans.push(p0..pos_pairs.len());
        neg_spans.push(n0..neg_pairs.len());
    }
    let dp = g.pair_distances(feats, feats, &pos_pairs, DIST_EPS)?;
    let dn = g.pair_distances(feats, feats, &neg_pairs, DIST_EPS)?;
    let (dpv, dnv) = (g.value(dp).data(), g.value(dn).data());
    let hardest_pos: Vec<usize> = pos_spans
        .iter()
        .map(|r| r.start + first_argmax(&dpv[r.clone()]))
        .collect();
    let hardest_neg: Vec<usize> = neg_spans
        .iter()
        .map(|r| r.start + first_argmin(&dnv[r.clone()]))
        .collect();
    let ap = g.select(dp, &hardest_pos)?;
    let an = g.select(dn, &hardest_neg)?;
    let loss = hinge_total(g, ap, an, rho, reduction)?;
    Ok(TripletOutcome {
        loss,
        positive_evals: pos_pairs.len(),
        negative_evals: neg_pairs.len(),
    })
}

/// Mean feature of every (identity, modality) group. Identities are ordered
/// ascending.
pub fn modality_centers<T: Real>(
    g: &mut Graph<T>,
    feats: Var,
    labels: &[usize],
    modalities: &[Modality],
) -> Result<CenterSet> {
    rows(g, feats, labels.len())?;
    if modalities.len() != labels.len() {
        return Err(Error::invalid("labels and modality tags differ in length"));
    }
    let mut groups: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
    for (i, (&l, &m)) in labels.iter().zip(modalities).enumerate() {
        groups.entry(l).or_default()[m.tag() as usize].push(i);
    }
    let mut vis = Vec::with_capacity(groups.len());
    let mut th = Vec::with_capacity(groups.len());
    for (&id, [v, t]) in &groups {
        for (grp, m) in [(v, Modality::Visible), (t, Modality::Thermal)] {
            if grp.is_empty() {
                return Err(Error::invalid(format!("identity {id} has no {m} sample in the batch")));
            }
        }
        vis.push(v.clone());
        th.push(t.clone());
    }
    if vis.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(CenterSet {
        visible: g.group_mean(feats, &vis)?,
        thermal: g.group_mean(feats, &th)?,
        identities: groups.into_keys().collect(),
    })
}

/// Triplet loss on centers: for every identity, each of its two modality
/// centers is an anchor whose positive is the other modality's center and
/// whose negative is the nearest center of any other identity in either
/// modality.
pub fn hetero_center_triplet<T: Real>(g: &mut Graph<T>, centers: &CenterSet, rho: f64) -> Result<TripletOutcome> {
    hetero_center_triplet_with(g, centers, rho, Reduction::Sum)
}

pub fn hetero_center_triplet_with<T: Real>(
    g: &mut Graph<T>,
    centers: &CenterSet,
    rho: f64,
    reduction: Reduction,
) -> Result<TripletOutcome> {
    let p = centers.len();
    if p < 2 {
        return Err(Error::invalid("hetero-center triplet needs at least 2 identities"));
    }
    let all = g.concat(&[centers.visible, centers.thermal], 0)?;
    // anchor a in 0..2P: visible centers first, then thermal
    let identity = |a: usize| a % p;
    let pos_pairs: Vec<(usize, usize)> = (0..2 * p).map(|a| (a, (a + p) % (2 * p))).collect();
    let mut neg_pairs = Vec::with_capacity(2 * p * 2 * (p - 1));
    for a in 0..2 * p {
        for b in 0..2 * p {
            if identity(b) != identity(a) {
                neg_pairs.push((a, b));
            }
        }
    }
    let dp = g.pair_distances(all, all, &pos_pairs, DIST_EPS)?;
    let dn = g.pair_distances(all, all, &neg_pairs, DIST_EPS)?;
    let span = 2 * (p - 1);
    let dnv = g.value(dn).data();
    let hardest: Vec<usize> = (0..2 * p)
        .map(|a| a * span + first_argmin(&dnv[a * span..(a + 1) * span]))
        .collect();
    let an = g.select(dn, &hardest)?;
    let loss = hinge_total(g, dp, an, rho, reduction)?;
    Ok(TripletOutcome {
        loss,
        positive_evals: pos_pairs.len(),
        negative_evals: neg_pairs.len(),
    })
}

/// Half the summed distance of every sample to its label's learned center
/// (one center per identity, shared across modalities). `centers` is `[N, d]`.
pub fn learned_center_loss<T: Real>(g: &mut Graph<T>, feats: Var, labels: &[usize], centers: Var) -> Result<Var> {
    learned_center_loss_with(g, feats, labels, centers, Reduction::Sum)
}

pub fn learned_center_loss_with<T: Real>(
    g: &mut Graph<T>,
    feats: Var,
    labels: &[usize],
    centers: Var,
    reduction: Reduction,
) -> Result<Var> {
    let n = rows(g, feats, labels.len())?;
    let num_centers = g.shape(centers)[0];
    if let Some(&l) = labels.iter().find(|&&l| l >= num_centers) {
        return Err(Error::invalid(format!("no learned center for label {l}")));
    }
    let pairs: Vec<(usize, usize)> = labels.iter().enumerate().map(|(i, &l)| (i, l)).collect();
    let d = g.pair_distances(feats, centers, &pairs, DIST_EPS)?;
    let total = g.sum_all(d)?;
    let half = g.scale(total, 0.5)?;
    reduce(g, half, n, reduction)
}

/// Summed distance between the visible and thermal center of each identity.
pub fn hetero_center_loss<T: Real>(g: &mut Graph<T>, centers: &CenterSet) -> Result<Var> {
    hetero_center_loss_with(g, centers, Reduction::Sum)
}

pub fn hetero_center_loss_with<T: Real>(g: &mut Graph<T>, centers: &CenterSet, reduction: Reduction) -> Result<Var> {
    let p = centers.len();
    let pairs: Vec<(usize, usize)> = (0..p).map(|i| (i, i)).collect();
    let d = g.pair_distances(centers.visible, centers.thermal, &pairs, DIST_EPS)?;
    let total = g.sum_all(d)?;
    reduce(g, total, p, reduction)
}

/// Label-smoothed cross-entropy, averaged over the rows of `logits` (`[B, N]`).
pub fn id_loss_label_smooth<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[usize], xi: f64) -> Result<Var> {
    g.cross_entropy_smooth(logits, labels, xi)
}

/// Smoothed target distribution for one sample.
pub fn smoothed_targets(num_classes: usize, label: usize, xi: f64) -> Result<Vec<f64>> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if label >= num_classes {
        return Err(Error::invalid(format!("label {label} >= {num_classes}")));
    }
    let n = num_classes as f64;
    Ok((0..num_classes)
        .map(|i| {
            if i == label {
                1.0 - (n - 1.0) / n * xi
            } else {
                xi / n
            }
        })
        .collect())
}

/// Values of the individual terms of the overall loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub global_metric: f64,
    pub part_id: f64,
    pub part_metric: f64,
}

#[derive(Clone, Debug)]
pub struct OverallLoss {
    pub total: Var,
    pub terms: LossTerms,
}

/// Learned center parameters for the `lc` variant: one `[N, p*d]` matrix for
/// the global feature and one `[N, d]` per part.
#[derive(Clone, Debug)]
pub struct LearnedCenters {
    pub global: Var,
    pub parts: Vec<Var>,
}

fn metric_term<T: Real>(
    g: &mut Graph<T>,
    feats: Var,
    labels: &[usize],
    modalities: &[Modality],
    variant: LossVariant,
    cfg: &LossConfig,
    center_param: Option<Var>,
) -> Result<Option<Var>> {
    let v = match variant {
        LossVariant::IdOnly => return Ok(None),
        LossVariant::BhTri => batch_hard_triplet_with(g, feats, labels, cfg.rho, cfg.reduction)?.loss,
        LossVariant::HcTri => {
            let c = modality_centers(g, feats, labels, modalities)?;
            hetero_center_triplet_with(g, &c, cfg.rho, cfg.reduction)?.loss
        }
        LossVariant::Hc => {
            let c = modality_centers(g, feats, labels, modalities)?;
            hetero_center_loss_with(g, &c, cfg.reduction)?
        }
        LossVariant::Lc => {
            let centers = center_param.ok_or_else(|| Error::invalid("lc variant needs learned centers"))?;
            learned_center_loss_with(g, feats, labels, centers, cfg.reduction)?
        }
    };
    Ok(Some(v))
}

/// `M(global) + sum_i (ID_i + lambda * M(part_i))`, where `M` is the metric
/// term selected by `variant` (absent for `id_only`).
pub fn overall_loss<T: Real>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    labels: &[usize],
    modalities: &[Modality],
    cfg: &LossConfig,
    variant: LossVariant,
    centers: Option<&LearnedCenters>,
) -> Result<OverallLoss> {
    if out.parts.is_empty() || out.parts.len() != out.logits.len() {
        return Err(Error::invalid("forward output has no part heads"));
    }
    if let Some(c) = centers {
        if c.parts.len() != out.parts.len() {
            return Err(Error::invalid("learned centers do not match the part count"));
        }
    }
    let mut terms = LossTerms::default();
    let mut acc: Option<Var> = None;
    let mut push = |g: &mut Graph<T>, v: Var| -> Result<()> {
        acc = Some(match acc {
            Some(a) => g.add(a, v)?,
            None => v,
        });
        Ok(())
    };
    if let Some(m) = metric_term(
        g,
        out.concatenated,
        labels,
        modalities,
        variant,
        cfg,
        centers.map(|c| c.global),
    )? {
        terms.global_metric = g.scalar_value(m).as_f64();
        push(g, m)?;
    }
    for (i, (&feat, &logits)) in out.parts.iter().zip(&out.logits).enumerate() {
        let id = id_loss_label_smooth(g, logits, labels, cfg.xi)?;
        terms.part_id += g.scalar_value(id).as_f64();
        push(g, id)?;
        if let Some(m) = metric_term(g, feat, labels, modalities, variant, cfg, centers.map(|c| c.parts[i]))? {
            terms.part_metric += g.scalar_value(m).as_f64();
            let weighted = g.scale(m, cfg.lambda)?;
            push(g, weighted)?;
        }
    }
    let total = acc.expect("at least one part");
    terms.total = g.scalar_value(total).as_f64();
    Ok(OverallLoss { total, terms })
}

/// Pairwise-distance evaluations needed for hard mining in one batch of
/// `2PK` samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonCounts {
    pub bh_positive: usize,
    pub bh_negative: usize,
    pub hc_positive: usize,
    pub hc_negative: usize,
}

pub fn comparison_counts(p: usize, k: usize) -> Result<ComparisonCounts> {
    if p < 2 || k < 1 {
        return Err(Error::invalid(format!("need P >= 2 and K >= 1, got P={p}, K={k}")));
    }
    Ok(ComparisonCounts {
        bh_positive: 2 * p * k * (2 * k - 1),
        bh_negative: 2 * p * k * 2 * (p - 1) * k,
        hc_positive: 2 * p,
        hc_negative: 2 * p * 2 * (p - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn feats(g: &mut Graph<f64>, rows: &[&[f64]]) -> Var {
        let d = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        g.param(Tensor::new(vec![rows.len(), d], data).unwrap())
    }

    fn centers_1d(g: &mut Graph<f64>, v: &[f64], t: &[f64]) -> CenterSet {
        let vis = g.param(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap());
        let th = g.param(Tensor::new(vec![t.len(), 1], t.to_vec()).unwrap());
        CenterSet {
            visible: vis,
            thermal: th,
            identities: (0..v.len()).collect(),
        }
    }

    #[test]
    fn hetero_center_triplet_hand_example() {
        let mut g = Graph::new();
        let c = centers_1d(&mut g, &[0.0, 0.5], &[0.4, 0.9]);
        let out = hetero_center_triplet(&mut g, &c, 0.3).unwrap();
        assert!((g.scalar_value(out.loss) - 1.6).abs() < 1e-9);
    }

    #[test]
    fn hetero_center_triplet_needs_two_identities() {
        let mut g = Graph::new();
        let c = centers_1d(&mut g, &[0.0], &[0.4]);
        assert!(hetero_center_triplet(&mut g, &c, 0.3).is_err());
    }

    #[test]
    fn separated_clusters_give_zero_triplet_losses() {
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[0.0, 0.0], &[0.0, 0.01], &[10.0, 0.0], &[10.0, 0.01]]);
        let out = batch_hard_triplet(&mut g, x, &[0, 0, 1, 1], 0.3).unwrap();
        assert_eq!(g.scalar_value(out.loss), 0.0);

        let c = centers_1d(&mut g, &[0.0, 10.0], &[0.0, 10.0]);
        let out = hetero_center_triplet(&mut g, &c, 0.3).unwrap();
        assert_eq!(g.scalar_value(out.loss), 0.0);
    }

    #[test]
    fn collapsed_features_give_margin_per_anchor() {
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[0.0], &[0.0], &[0.0], &[0.0], &[0.0], &[0.0]]);
        let out = batch_hard_triplet(&mut g, x, &[0, 0, 1, 1, 2, 2], 0.3).unwrap();
        assert!((g.scalar_value(out.loss) - 6.0 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn batch_hard_rejects_singletons() {
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[0.0], &[1.0], &[2.0]]);
        assert!(batch_hard_triplet(&mut g, x, &[0, 0, 1], 0.3).is_err());
        assert!(batch_hard_triplet(&mut g, x, &[0, 0, 0], 0.3).is_err());
    }

    #[test]
    fn batch_hard_1d_example() {
        // A at {0, 0.4}, B at {0.5, 0.9}
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[0.0], &[0.4], &[0.5], &[0.9]]);
        let out = batch_hard_triplet(&mut g, x, &[0, 0, 1, 1], 0.3).unwrap();
        // anchors: 0 -> 0.3+0.4-0.5, 0.4 -> 0.3+0.4-0.1, 0.5 -> 0.3+0.4-0.1, 0.9 -> 0.3+0.4-0.5
        assert!((g.scalar_value(out.loss) - 1.6).abs() < 1e-9);
    }

    #[test]
    fn learned_center_loss_direct_evaluation() {
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[2.0, 0.0], &[0.0, 4.0]]);
        let c = g.param(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let l = learned_center_loss(&mut g, x, &[0, 0], c).unwrap();
        assert!((g.scalar_value(l) - 3.0).abs() < 1e-9);
        assert!(learned_center_loss(&mut g, x, &[0, 1], c).is_err());
    }

    #[test]
    fn learned_center_loss_zero_at_centers() {
        let mut g = Graph::new();
        let x = feats(&mut g, &[&[1.0, 2.0], &[1.0, 2.0], &[-1.0, 0.5]]);
        let c = g.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let l = learned_center_loss(&mut g, x, &[0, 0, 1], c).unwrap();
        assert!(g.scalar_value(l).abs() < 1e-5);
    }

    #[test]
    fn hetero_center_loss_direct_evaluation() {
        let mut g = Graph::new();
        let c = centers_1d(&mut g, &[0.0, 1.0], &[0.4, 1.5]);
        let l = hetero_center_loss(&mut g, &c).unwrap();
        assert!((g.scalar_value(l) - 0.9).abs() < 1e-9);

        let c3 = centers_1d(&mut g, &[0.0, 1.0, 7.0], &[0.4, 1.5, 7.0]);
        let l3 = hetero_center_loss(&mut g, &c3).unwrap();
        assert!((g.scalar_value(l3) - 0.9).abs() < 1e-5);

        let same = centers_1d(&mut g, &[3.0, -2.0], &[3.0, -2.0]);
        let l0 = hetero_center_loss(&mut g, &same).unwrap();
        assert!(g.scalar_value(l0).abs() < 1e-5);
    }

    #[test]
    fn smoothed_target_values() {
        let q = smoothed_targets(10, 3, 0.1).unwrap();
        assert!((q[3] - 0.91).abs() < 1e-12);
        assert!((q[0] - 0.01).abs() < 1e-12);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(smoothed_targets(10, 10, 0.1).is_err());
    }

    #[test]
    fn id_loss_uniform_logits_is_log_n() {
        let mut g = Graph::<f64>::new();
        let l = g.param(Tensor::zeros(vec![1, 7]));
        let loss = id_loss_label_smooth(&mut g, l, &[2], 0.0).unwrap();
        assert!((g.scalar_value(loss) - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn id_loss_unsmoothed_matches_naive_log_softmax() {
        let logits = [0.3, -1.2, 2.0, 0.7];
        let mut g = Graph::new();
        let l = g.param(Tensor::new(vec![1, 4], logits.to_vec()).unwrap());
        let loss = id_loss_label_smooth(&mut g, l, &[1], 0.0).unwrap();
        let z: f64 = logits.iter().map(|v: &f64| v.exp()).sum();
        let naive = -(logits[1].exp() / z).ln();
        assert!((g.scalar_value(loss) - naive).abs() < 1e-12);
        assert!(id_loss_label_smooth(&mut g, l, &[4], 0.1).is_err());
    }

    #[test]
    fn comparison_count_formulas() {
        let c = comparison_counts(8, 4).unwrap();
        assert_eq!(
            (c.bh_positive, c.bh_negative, c.hc_positive, c.hc_negative),
            (448, 3584, 16, 224)
        );
        // K = 1: both losses see one positive and 2(P-1) negatives per anchor
        let c = comparison_counts(2, 1).unwrap();
        assert_eq!((c.bh_positive, c.bh_negative, c.hc_positive, c.hc_negative), (4, 8, 4, 8));
        assert!(comparison_counts(1, 4).is_err());
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in LossVariant::ALL {
            assert_eq!(v.as_str().parse::<LossVariant>().unwrap(), v);
        }
        assert!("triplet".parse::<LossVariant>().is_err());
    }
}
