use pmdp_core::schedule::{train, train_from_config, Trainer};
use pmdp_core::synthdata::product_distance;
use pmdp_core::{Checkpoint, Dataset, Streams, Tensor, TrainConfig};

fn small(steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(steps);
    cfg.model.latent_dim = 6;
    cfg.model.num_subspaces = 4;
    cfg.model.encoder_hidden = vec![16];
    cfg.model.decoder_hidden = vec![16];
    cfg.batch_size = 8;
    cfg
}

fn mean_sq_error(x: &Tensor, xh: &Tensor) -> f64 {
    let s: f64 = x
        .data()
        .iter()
        .zip(xh.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    s / x.rows() as f64
}

#[test]
fn single_reconstruction_step_does_not_increase_loss() {
    let cfg = TrainConfig::new(1);
    let dataset = Dataset::new(cfg.dataset.clone()).unwrap();
    // The trainer's first batch, drawn from the same labeled stream.
    let batch = dataset
        .sample_batch(
            cfg.batch_size,
            cfg.dataset.policy,
            &mut Streams::new(cfg.seed).stream("data"),
        )
        .unwrap();

    let mut trainer = Trainer::new(&cfg, &dataset).unwrap();
    // Reconstruction is averaged over both elements of each pair.
    let rec = |t: &Trainer| {
        let e1 = mean_sq_error(&batch.x1, &t.model.reconstruct(&batch.x1).unwrap());
        let e2 = mean_sq_error(&batch.x2, &t.model.reconstruct(&batch.x2).unwrap());
        0.5 * (e1 + e2)
    };
    let before = rec(&trainer);
    let (record, _, _) = trainer.step().unwrap();
    assert!(!record.flags.reg && !record.flags.dis && !record.flags.cons);
    assert!((record.breakdown.rec - before).abs() <= 1e-12 * before.max(1.0));
    let after = rec(&trainer);
    assert!(after <= before + 1e-9, "{before} -> {after}");
}

#[test]
fn identical_configs_give_bit_identical_checkpoints() {
    let cfg = small(300);
    let (_, a) = train_from_config(&cfg).unwrap();
    let (_, b) = train_from_config(&cfg).unwrap();
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    assert_eq!(a.history, b.history);

    let mut other = cfg.clone();
    other.seed = 1;
    let (_, c) = train_from_config(&other).unwrap();
    assert_ne!(a.checkpoint().to_bytes(), c.checkpoint().to_bytes());
}

#[test]
fn checkpoint_round_trip_preserves_the_model() {
    let cfg = small(50);
    let dataset = Dataset::new(cfg.dataset.clone()).unwrap();
    let out = train(&cfg, &dataset).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pmdp");
    out.checkpoint().save(&path).unwrap();
    let back = Checkpoint::load(&cfg.model, &path).unwrap();
    assert_eq!(back.params, out.model.params);
    assert_eq!(back.tracker.mean_norms(), out.tracker.mean_norms());
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());

    let (_, x) = dataset
        .sample_observations(16, &mut Streams::new(5).stream("x"))
        .unwrap();
    let z1 = out.model.encode_batch(&x).unwrap().z;
    let z2 = back.model(&cfg.model).encode_batch(&x).unwrap().z;
    assert_eq!(z1, z2);

    let mut wrong = cfg.model.clone();
    wrong.latent_dim = 5;
    assert!(Checkpoint::load(&wrong, &path).is_err());
}

#[test]
fn loss_terms_enter_in_order() {
    let cfg = small(200);
    let dataset = Dataset::new(cfg.dataset.clone()).unwrap();
    let out = train(&cfg, &dataset).unwrap();
    let first = |f: &dyn Fn(&pmdp_core::losses::PhaseFlags) -> bool| {
        out.history.steps.iter().position(|r| f(&r.flags)).unwrap()
    };
    let reg = first(&|f| f.reg);
    let dis = first(&|f| f.dis);
    let cons = first(&|f| f.cons);
    assert_eq!((reg, dis, cons), (40, 60, 80));
    for r in &out.history.steps[..40] {
        let b = &r.breakdown;
        assert_eq!((b.beta1, b.beta2, b.beta3), (0.0, 0.0, 0.0));
    }
}

#[test]
fn embedding_is_injective_on_separated_samples() {
    let cfg = TrainConfig::new(1).dataset;
    let dataset = Dataset::new(cfg).unwrap();
    let mut rng = Streams::new(11).stream("injectivity");
    let factors: Vec<Vec<f64>> = (0..10_000)
        .map(|_| dataset.sample_factors(&mut rng))
        .collect();
    let points: Vec<Vec<f64>> = factors.iter().map(|f| dataset.embed(f)).collect();
    let mut smallest = f64::INFINITY;
    for i in 0..factors.len() {
        for j in i + 1..factors.len() {
            if product_distance(dataset.spec(), &factors[i], &factors[j]).unwrap() > 0.1 {
                let d2: f64 = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                smallest = smallest.min(d2);
            }
        }
    }
    assert!(
        smallest > 0.0,
        "two separated factor tuples share an embedding"
    );
}
