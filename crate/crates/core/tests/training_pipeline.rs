use std::fs;

use redsr::models::{load_checkpoint, ModelParams, Part};
use redsr::training::{build_batch, step_gradients, train, TrainConfig, TrainData, CHECKPOINT_FILE, LOG_FILE, LOG_HEADER};
use redsr::Tensor;

fn tiny() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        patch: 16,
        target_samples: 8,
        epochs: 2,
        iters_per_epoch: 2,
        schedule_period: 1,
        c_repr: 4,
        blocks: 1,
        degrader_width: 4,
        generator_width: 4,
        mlp_width: 8,
        synthetic_count: 3,
        synthetic_size: 64,
        log_wall_time: false,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_empty_log() {
    let cfg = TrainConfig { epochs: 0, ..tiny() };
    let data = TrainData::from_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = train(&cfg, &data, dir.path(), false).unwrap();
    assert!(s.records.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join(LOG_FILE)).unwrap(), format!("{LOG_HEADER}\n"));
    let ck = load_checkpoint(dir.path().join(CHECKPOINT_FILE), None).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.model, ModelParams::init(cfg.architecture(), cfg.init_seed).unwrap());
}

#[test]
fn one_log_row_per_step_and_lr_schedule() {
    let cfg = tiny();
    let data = TrainData::from_config(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = train(&cfg, &data, dir.path(), false).unwrap();
    let log = fs::read_to_string(&s.log).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], LOG_HEADER);
    assert_eq!(rows.len(), 1 + cfg.total_steps());
    let lrs: Vec<f64> = s.records.iter().map(|r| r.lr).collect();
    assert_eq!(lrs, [1e-4, 1e-4, 5e-5, 5e-5]);
    assert!(s.records.iter().all(|r| r.loss_total.is_finite() && r.ms == 0.0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = tiny();
    let data = TrainData::from_config(&cfg).unwrap();
    let full = tempfile::tempdir().unwrap();
    train(&cfg, &data, full.path(), false).unwrap();

    let split = tempfile::tempdir().unwrap();
    train(&TrainConfig { epochs: 1, ..cfg.clone() }, &data, split.path(), false).unwrap();
    let resumed = train(&cfg, &data, split.path(), true).unwrap();
    assert_eq!(resumed.records.len(), 2);
    for name in [CHECKPOINT_FILE, LOG_FILE] {
        assert_eq!(fs::read(full.path().join(name)).unwrap(), fs::read(split.path().join(name)).unwrap(), "{name}");
    }
}

fn grads_of(model: &ModelParams, part: Part) -> Vec<(String, Tensor)> {
    model
        .params
        .iter()
        .filter(|p| Part::of(&p.name) == Some(part))
        .map(|p| (p.name.clone(), p.grad.clone().expect("gradient collected")))
        .collect()
}

/// A model whose generator output layer is not at its zero init, so every
/// generator tensor receives gradient.
fn warm_model(cfg: &TrainConfig) -> ModelParams {
    let mut m = ModelParams::init(cfg.architecture(), 11).unwrap();
    let p = m.params.get_mut("gen.tail.w").unwrap();
    let shape = p.value.shape().to_vec();
    p.value = Tensor::from_fn(&shape, |i| ((i * 7919) % 97) as f64 / 970.0 - 0.05);
    m
}

#[test]
fn forced_perfect_reproduction_doubles_reconstruction_gradient() {
    let cfg = tiny();
    let data = TrainData::from_config(&cfg).unwrap();
    let batch = build_batch(&data, &cfg, 3).unwrap();

    let mut on = warm_model(&cfg);
    let l_on = step_gradients(&mut on, &batch, &cfg, 3, Some(0.0)).unwrap();
    assert!(l_on.weights.iter().all(|w| w.weight == 2.0));

    let off_cfg = TrainConfig { modulated_sr: false, ..cfg.clone() };
    let mut off = warm_model(&cfg);
    let l_off = step_gradients(&mut off, &batch, &off_cfg, 3, None).unwrap();
    assert_eq!(l_on.sr, 2.0 * l_off.sr);

    let mut nonzero = 0;
    for ((name, a), (_, b)) in grads_of(&on, Part::Generator).iter().zip(grads_of(&off, Part::Generator)) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x, 2.0 * y, "{name}");
            nonzero += usize::from(*y != 0.0);
        }
    }
    assert!(nonzero > 0);
}

#[test]
fn losses_reach_only_their_own_networks() {
    let cfg = TrainConfig { modulated_sr: false, loss_ed: false, ..tiny() };
    let data = TrainData::from_config(&cfg).unwrap();
    let batch = build_batch(&data, &cfg, 0).unwrap();

    let mut with_rd = warm_model(&cfg);
    step_gradients(&mut with_rd, &batch, &cfg, 0, None).unwrap();
    let mut sr_only = warm_model(&cfg);
    let sr_cfg = TrainConfig { loss_rd: false, ..cfg.clone() };
    step_gradients(&mut sr_only, &batch, &sr_cfg, 0, None).unwrap();

    // The reproduction loss leaves the generator's gradient untouched...
    assert_eq!(grads_of(&with_rd, Part::Generator), grads_of(&sr_only, Part::Generator));
    // ...and the reconstruction loss never reaches the degrader.
    assert!(grads_of(&sr_only, Part::Degrader).iter().all(|(_, g)| g.data().iter().all(|v| *v == 0.0)));

    let mut modulated = warm_model(&cfg);
    let mod_cfg = TrainConfig { modulated_sr: true, ..cfg.clone() };
    step_gradients(&mut modulated, &batch, &mod_cfg, 0, None).unwrap();
    assert_eq!(grads_of(&with_rd, Part::Degrader), grads_of(&modulated, Part::Degrader));
}

#[test]
fn identical_seeds_give_identical_steps() {
    let cfg = tiny();
    let data = TrainData::from_config(&cfg).unwrap();
    let batch = build_batch(&data, &cfg, 1).unwrap();
    let mut a = warm_model(&cfg);
    let mut b = warm_model(&cfg);
    let la = step_gradients(&mut a, &batch, &cfg, 1, None).unwrap();
    let lb = step_gradients(&mut b, &batch, &cfg, 1, None).unwrap();
    assert_eq!((la.total, la.rd, la.ed, la.sr), (lb.total, lb.rd, lb.ed, lb.sr));
    assert_eq!(a, b);
}
