mod common;

use common::{lcg_tensor, tiny_config};
use vtreid_core::losses::{overall_loss, LossConfig, LossVariant};
use vtreid_core::verify::{run_suite, Suite, GRAD_TOLERANCE};
use vtreid_core::{Graph, Mode, Modality, Network, Tensor};

#[test]
fn gradient_suite_passes() {
    let report = run_suite(Suite::Grad, 11);
    assert!(report.passed(), "{report}");
    assert!(report.checks.len() >= 30);
}

fn network_loss(net: &Network<f64>, input: &Tensor<f64>, variant: LossVariant) -> (f64, Vec<Vec<f64>>) {
    let mut net = net.clone();
    let labels = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2];
    let mods: Vec<Modality> = labels
        .iter()
        .enumerate()
        .map(|(i, _)| if i % 4 < 2 { Modality::Visible } else { Modality::Thermal })
        .collect();
    let cfg = LossConfig {
        num_classes: 3,
        ..LossConfig::default()
    };
    let mut g = Graph::new();
    let bound = net.bind(&mut g);
    let x = g.constant(input.clone());
    let out = net.forward(&mut g, &bound, x, &mods, Mode::Train).unwrap();
    let loss = overall_loss(&mut g, &out, &labels, &mods, &cfg, variant, None).unwrap();
    g.backward(loss.total).unwrap();
    let grads = net.grads(&g, &bound);
    (g.value(loss.total).item(), grads)
}

#[test]
fn whole_network_gradient_matches_finite_differences() {
    for split in [0, 2, 5] {
        let net = Network::<f64>::new(tiny_config(split), 3).unwrap();
        let input = lcg_tensor(vec![12, 8, 4, 2], 5);
        let (_, analytic) = network_loss(&net, &input, LossVariant::HcTri);
        let h = 1e-6;
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for (pi, p) in net.params().iter().enumerate() {
            // a few entries per tensor keep the check quick
            for j in (0..p.value.len()).step_by((p.value.len() / 3).max(1)) {
                let mut up = net.clone();
                up.params_mut()[pi].value.data_mut()[j] += h;
                let mut down = net.clone();
                down.params_mut()[pi].value.data_mut()[j] -= h;
                let fd = (network_loss(&up, &input, LossVariant::HcTri).0
                    - network_loss(&down, &input, LossVariant::HcTri).0)
                    / (2.0 * h);
                a.push(analytic[pi][j]);
                n.push(fd);
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&n).map(|(x, y)| x - y).collect();
        let rel = norm(&diff) / norm(&a).max(norm(&n));
        assert!(rel <= GRAD_TOLERANCE, "split {split}: rel err {rel:e}");
    }
}

#[test]
fn two_backward_passes_double_leaf_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let y = g.mul(x, x).unwrap();
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    let once = g.grad(x).unwrap().to_vec();
    g.backward(s).unwrap();
    let twice = g.grad(x).unwrap().to_vec();
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
}
