mod common;

use common::{lcg_tensor, tiny_config};
use vtreid_core::encoder::{gem_pool, partition_strips, NUM_STAGES};
use vtreid_core::losses::{overall_loss, LossConfig, LossVariant};
use vtreid_core::{Graph, Mode, Modality, Network, PoolingKind, ReduceKind, Tensor};

fn eval_features(net: &Network<f64>, input: &Tensor<f64>, mods: &[Modality]) -> Vec<f64> {
    let mut g = Graph::new();
    let bound = net.bind_frozen(&mut g);
    let x = g.constant(input.clone());
    let out = net.forward_eval(&mut g, &bound, x, mods).unwrap();
    g.value(out.concatenated).data().to_vec()
}

#[test]
fn split_zero_treats_modalities_identically() {
    let net = Network::<f64>::new(tiny_config(0), 1).unwrap();
    let img = lcg_tensor(vec![1, 8, 4, 2], 9);
    let v = eval_features(&net, &img, &[Modality::Visible]);
    let t = eval_features(&net, &img, &[Modality::Thermal]);
    assert_eq!(v, t);
    assert_eq!(net.config().specific_parameter_count(), 0);
    assert!(!net.params().iter().any(|p| p.name.starts_with("visible") || p.name.starts_with("thermal")));
}

#[test]
fn split_five_streams_are_independent() {
    let net = Network::<f64>::new(tiny_config(NUM_STAGES), 1).unwrap();
    assert!(!net.params().iter().any(|p| p.name.starts_with("shared")));
    let input = lcg_tensor(vec![4, 8, 4, 2], 2);
    let mods = [Modality::Visible, Modality::Thermal, Modality::Visible, Modality::Thermal];
    let before = eval_features(&net, &input, &mods);
    let mut changed = net.clone();
    for p in changed.params_mut().iter_mut().filter(|p| p.name.starts_with("thermal")) {
        p.value.data_mut().iter_mut().for_each(|x| *x *= -1.5);
    }
    let after = eval_features(&changed, &input, &mods);
    let width = net.config().feature_dim();
    for (row, (a, b)) in before.chunks(width).zip(after.chunks(width)).enumerate() {
        if mods[row] == Modality::Visible {
            assert_eq!(a, b, "visible row {row} changed");
        } else {
            assert_ne!(a, b, "thermal row {row} unchanged");
        }
    }
}

#[test]
fn specific_stages_get_gradients_only_from_their_modality() {
    let mut net = Network::<f64>::new(tiny_config(2), 4).unwrap();
    let input = lcg_tensor(vec![4, 8, 4, 2], 3);
    let mods = [Modality::Visible; 4];
    let labels = [0, 0, 1, 1];
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let x = g.constant(input);
    let out = net.forward(&mut g, &bound, x, &mods, Mode::Train).unwrap();
    let cfg = LossConfig {
        num_classes: 3,
        ..LossConfig::default()
    };
    let loss = overall_loss(&mut g, &out, &labels, &mods, &cfg, LossVariant::BhTri, None).unwrap();
    g.backward(loss.total).unwrap();
    let grads = net.grads(&g, &bound);
    for (p, gr) in net.params().iter().zip(&grads) {
        let nonzero = gr.iter().any(|&x| x != 0.0);
        if p.name.starts_with("thermal") {
            assert!(!nonzero, "{} received a gradient", p.name);
        }
        if p.name.starts_with("visible") && p.name.ends_with("weight") {
            assert!(nonzero, "{} received no gradient", p.name);
        }
    }
}

#[test]
fn forward_shapes_and_part_outputs() {
    let mut net = Network::<f64>::new(tiny_config(2), 5).unwrap();
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let x = g.constant(lcg_tensor(vec![3, 8, 4, 2], 1));
    let mods = [Modality::Thermal, Modality::Visible, Modality::Thermal];
    let out = net.forward(&mut g, &bound, x, &mods, Mode::Train).unwrap();
    assert_eq!(out.parts.len(), 2);
    assert_eq!(g.shape(out.concatenated), &[3, 6]);
    for l in &out.logits {
        assert_eq!(g.shape(*l), &[3, 3]);
    }
    let per = out.per_image(&g);
    assert_eq!(per.len(), 3);
    assert_eq!(per[1].concatenated.len(), 6);
}

#[test]
fn batch_order_does_not_change_eval_features() {
    let net = Network::<f64>::new(tiny_config(3), 8).unwrap();
    let input = lcg_tensor(vec![3, 8, 4, 2], 4);
    let mods = [Modality::Thermal, Modality::Visible, Modality::Thermal];
    let all = eval_features(&net, &input, &mods);
    let w = net.config().feature_dim();
    let img = input.data().chunks(8 * 4 * 2).collect::<Vec<_>>();
    for i in 0..3 {
        let single = Tensor::new(vec![1, 8, 4, 2], img[i].to_vec()).unwrap();
        let f = eval_features(&net, &single, &mods[i..=i]);
        for (a, b) in f.iter().zip(&all[i * w..(i + 1) * w]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn positive_strip(seed: u64) -> Tensor<f64> {
    let t = lcg_tensor(vec![2, 1, 3, 4], seed);
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| 0.05 + x.abs()).collect()).unwrap()
}

fn pooled(kind: Option<ReduceKind>, strip: &Tensor<f64>, p: f64) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g.constant(strip.clone());
    let y = match kind {
        None => {
            let pv = g.constant(Tensor::scalar(p));
            gem_pool(&mut g, x, pv).unwrap()
        }
        Some(k) => {
            let s = g.shape(x).to_vec();
            let r = g.reshape(x, vec![s[0], s[1] * s[2], s[3]]).unwrap();
            g.reduce(r, k, 1).unwrap()
        }
    };
    g.value(y).data().to_vec()
}

#[test]
fn gem_with_p_one_is_mean_pooling() {
    for seed in 0..20 {
        let s = positive_strip(seed);
        assert_eq!(pooled(None, &s, 1.0), pooled(Some(ReduceKind::Mean), &s, 1.0));
    }
}

#[test]
fn gem_lies_between_mean_and_max_and_grows_with_p() {
    for seed in 0..20 {
        let s = positive_strip(seed);
        let mean = pooled(Some(ReduceKind::Mean), &s, 1.0);
        let max = pooled(Some(ReduceKind::Max), &s, 1.0);
        let mut prev = mean.clone();
        for p in [1.5, 2.0, 3.0, 6.0, 16.0, 64.0] {
            let cur = pooled(None, &s, p);
            for c in 0..cur.len() {
                assert!(cur[c] >= prev[c] - 1e-12, "not monotone at p={p}");
                assert!(cur[c] <= max[c] + 1e-12);
                // lower bound: max * n^(-1/p) with n = 3 cells
                assert!(cur[c] >= max[c] * 3f64.powf(-1.0 / p) - 1e-12);
            }
            prev = cur;
        }
    }
}

#[test]
fn gem_below_one_is_rejected() {
    let mut g = Graph::new();
    let x = g.constant(positive_strip(0));
    let p = g.constant(Tensor::scalar(0.5));
    assert!(gem_pool(&mut g, x, p).is_err());
}

#[test]
fn strips_cover_rows_top_to_bottom() {
    let mut g = Graph::new();
    let map = g.constant(lcg_tensor(vec![2, 6, 3, 2], 6));
    let strips = partition_strips(&mut g, map, 3).unwrap();
    assert_eq!(strips.len(), 3);
    let full = g.value(map).clone();
    for (i, s) in strips.iter().enumerate() {
        assert_eq!(g.shape(*s), &[2, 2, 3, 2]);
        let got = g.value(*s).data();
        let row = 3 * 2;
        for b in 0..2 {
            let src = &full.data()[b * 6 * row + 2 * i * row..b * 6 * row + 2 * (i + 1) * row];
            assert_eq!(&got[b * 2 * row..(b + 1) * 2 * row], src);
        }
    }
    assert!(partition_strips(&mut g, map, 4).is_err());
}

#[test]
fn pooling_kinds_and_fixed_gem_change_parameter_set() {
    let mut cfg = tiny_config(2);
    let learnable = Network::<f64>::new(cfg.clone(), 0).unwrap();
    assert_eq!(learnable.gem_param_names().len(), 2);
    cfg.learnable_gem = false;
    let fixed = Network::<f64>::new(cfg.clone(), 0).unwrap();
    assert!(fixed.gem_param_names().is_empty());
    assert_eq!(learnable.parameter_count(), fixed.parameter_count() + 2);
    cfg.pooling = PoolingKind::Max;
    let max = Network::<f64>::new(cfg, 0).unwrap();
    assert_eq!(max.parameter_count(), fixed.parameter_count());
    assert_eq!(learnable.parameter_count(), learnable.config().parameter_count());
}

#[test]
fn checkpoint_roundtrip_restores_outputs() {
    let net = Network::<f32>::new(vtreid_core::TwoStreamConfig::default(), 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ck");
    net.to_checkpoint().save(&path).unwrap();
    let mut other = Network::<f32>::new(vtreid_core::TwoStreamConfig::default(), 99).unwrap();
    other
        .load_checkpoint(&vtreid_core::encoder::Checkpoint::load(&path).unwrap())
        .unwrap();
    for (a, b) in net.params().iter().zip(other.params()) {
        assert_eq!(a.value, b.value);
    }
    let wrong = vtreid_core::TwoStreamConfig {
        embed_dim: 128,
        ..Default::default()
    };
    let mut mismatched = Network::<f32>::new(wrong, 0).unwrap();
    assert!(mismatched.load_checkpoint(&net.to_checkpoint()).is_err());
}
