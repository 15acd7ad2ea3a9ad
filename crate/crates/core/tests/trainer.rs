mod common;

use common::small_config;
use vtreid_core::data::{generate_synthetic, DatasetIndex, ModalityShift, SyntheticSpec};
use vtreid_core::encoder::Checkpoint;
use vtreid_core::losses::LossVariant;
use vtreid_core::trainer::{
    prepare_split, run_ablation, train, write_history_csv, AblationAxis, TrainConfig, Trainer,
};
use vtreid_core::Error;

fn dataset(appearance: f32) -> DatasetIndex {
    let mut spec = SyntheticSpec::new(8, 4, 17);
    spec.grid = vtreid_core::encoder::Grid::new(8, 4, 2);
    spec.shift = ModalityShift::standard(2);
    spec.bands = 4;
    spec.appearance_sigma = appearance;
    spec.noise_sigma = 0.5;
    generate_synthetic(&spec).unwrap()
}

fn config(variant: LossVariant, epochs: usize) -> TrainConfig {
    TrainConfig {
        p: 3,
        k: 2,
        epochs,
        variant,
        model: small_config(2),
        seed: 4,
        holdout: 0.25,
        eval_every: 0,
        ..TrainConfig::default()
    }
    .with_num_classes(6)
}

#[test]
fn id_only_loss_decreases_on_separable_data() {
    let mut spec = SyntheticSpec::new(40, 20, 7);
    spec.appearance_sigma = 0.0;
    let d = generate_synthetic(&spec).unwrap();
    let cfg = TrainConfig {
        variant: LossVariant::IdOnly,
        epochs: 5,
        seed: 7,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &d).unwrap();
    let losses: Vec<f64> = out.trainer.history().iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn seed_fixed_runs_are_identical() {
    let d = dataset(0.5);
    let a = train(&config(LossVariant::HcTri, 3), &d).unwrap();
    let b = train(&config(LossVariant::HcTri, 3), &d).unwrap();
    assert_eq!(a.trainer.history(), b.trainer.history());
    assert_eq!(a.report, b.report);
    for (x, y) in a.trainer.network().params().iter().zip(b.trainer.network().params()) {
        assert_eq!(x.value, y.value);
    }
    let c = train(&TrainConfig { seed: 5, ..config(LossVariant::HcTri, 3) }, &d).unwrap();
    assert_ne!(a.trainer.history(), c.trainer.history());
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    for variant in [LossVariant::HcTri, LossVariant::Lc] {
        let d = dataset(0.5);
        let (cfg, train_set, _) = prepare_split(&config(variant, 3), &d).unwrap();
        let mut straight = Trainer::new(cfg.clone()).unwrap();
        straight.fit(&train_set, None).unwrap();

        let mut first = Trainer::new(cfg.clone()).unwrap();
        first.run_epoch(&train_set, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trainer.ck");
        first.to_checkpoint().save(&path).unwrap();
        let mut resumed = Trainer::from_checkpoint(cfg, &Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(resumed.next_epoch(), 1);
        resumed.fit(&train_set, None).unwrap();

        for (x, y) in straight.network().params().iter().zip(resumed.network().params()) {
            assert_eq!(x.value, y.value, "{variant}: {}", x.name);
        }
        assert_eq!(straight.optimizer(), resumed.optimizer());
        assert_eq!(&straight.history()[1..], resumed.history());
    }
}

#[test]
fn learned_centers_are_checkpointed() {
    let d = dataset(0.5);
    let (cfg, train_set, _) = prepare_split(&config(LossVariant::Lc, 1), &d).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    t.fit(&train_set, None).unwrap();
    let ck = t.to_checkpoint();
    let centers = ck.get("centers.global").unwrap();
    assert_eq!(centers.shape(), &[6, 32]);
    assert!(centers.data().iter().any(|&x| x != 0.0));
    assert!(ck.get("centers.part1").is_some());
    assert!(ck.get("optim.centers.part0").is_some());
}

#[test]
fn zero_lr_without_momentum_keeps_parameters() {
    let d = dataset(0.5);
    let (cfg, train_set, _) = prepare_split(&config(LossVariant::HcTri, 2), &d).unwrap();
    let cfg = TrainConfig {
        base_lr: 0.0,
        momentum: 0.0,
        ..cfg
    };
    let before = Trainer::new(cfg.clone()).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    t.fit(&train_set, None).unwrap();
    for (x, y) in before.network().params().iter().zip(t.network().params()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn exploding_lr_aborts_with_location() {
    let d = dataset(0.5);
    let cfg = TrainConfig {
        base_lr: 1e30,
        ..config(LossVariant::BhTri, 3)
    };
    match train(&cfg, &d) {
        Err(e @ Error::Diverged { .. }) => assert!(e.is_numeric()),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with lr 1e30 did not diverge"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let d = dataset(0.5);
    assert!(Trainer::new(TrainConfig { p: 1, ..config(LossVariant::HcTri, 1) }).is_err());
    assert!(Trainer::new(TrainConfig { epochs: 0, ..config(LossVariant::HcTri, 1) }).is_err());
    let mut wrong = config(LossVariant::HcTri, 1);
    wrong.loss.num_classes = 9;
    assert!(matches!(Trainer::new(wrong), Err(Error::Config(_))));
    let mut t = Trainer::new(config(LossVariant::HcTri, 1).with_num_classes(5)).unwrap();
    assert!(t.run_epoch(&d, None).is_err());
}

#[test]
fn validation_and_history_csv() {
    let d = dataset(0.5);
    let cfg = TrainConfig {
        eval_every: 2,
        ..config(LossVariant::HcTri, 3)
    };
    let out = train(&cfg, &d).unwrap();
    let h = out.trainer.history();
    assert!(h[0].val.is_none());
    assert!(h[1].val.is_some());
    assert!(h[2].val.is_some());
    assert_eq!(h[0].batches, 4);
    let report = out.report.unwrap();
    assert_eq!(report.num_queries, 8);
    let mut csv = Vec::new();
    write_history_csv(h, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("epoch,lr,batches,loss,"));
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().ends_with(",,,"));
}

#[test]
fn ablation_tables_have_one_row_per_value() {
    let d = dataset(0.5);
    let base = config(LossVariant::HcTri, 1);
    let split = run_ablation(&base, AblationAxis::Split, None, &d, 1).unwrap();
    let names: Vec<&str> = split.rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(names, ["s0", "s1", "s2", "s3", "s4", "s5"]);
    for r in &split.rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        assert!(r.rank1.is_some() && r.map.is_some() && r.minp.is_some());
        assert_eq!(r.config_echo["split"], r.value);
    }
    let pool = run_ablation(&base, AblationAxis::Pool, None, &d, 1).unwrap();
    let names: Vec<&str> = pool.rows.iter().map(|r| r.config_echo["pool"].as_str()).collect();
    assert_eq!(names, ["gem", "mean", "max"]);

    let values = ["1".to_string(), "3".to_string(), "2".to_string()];
    let parts = run_ablation(&base, AblationAxis::Parts, Some(&values), &d, 1).unwrap();
    assert!(parts.rows[0].error.is_none());
    assert!(parts.rows[1].error.as_deref().unwrap().contains("strips"));
    assert!(parts.rows[2].error.is_none());
    let mut csv = Vec::new();
    parts.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
}
