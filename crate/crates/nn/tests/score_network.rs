mod common;

use common::{examples, schedule, tiny};
use sldm::rng;
use sldm::sde::ScheduleConfig;
use sldm::{AugmentedState, ImageGrid};
use sldm_nn::{
    predict_noise, training_loss, training_loss_with, AlignmentConfig, AlignmentModel, Checkpoint, Embedding, Error,
    LossNorm, ScoreNetConfig, ScoreNetwork, SemanticContext, TrainingConfig,
};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

fn state(size: usize, seed: u64) -> AugmentedState {
    let mut r = rng::seeded(seed);
    let img = ImageGrid::from_fn(size, size, |_, _| 0.5 + 0.1 * rng::standard_normal(&mut r));
    let edges = ImageGrid::from_fn(size, size, |y, x| ((y + x) % 5 == 0) as u8 as f64);
    AugmentedState::new(&img, &edges).unwrap()
}

fn bits_hash(g: &ImageGrid) -> u64 {
    let mut h = DefaultHasher::new();
    g.data().iter().for_each(|v| v.to_bits().hash(&mut h));
    h.finish()
}

fn context(seed: u64) -> SemanticContext {
    let mut r = rng::seeded(seed);
    let v = (0..sldm_nn::semantic::EMBED_DIM).map(|_| rng::standard_normal(&mut r)).collect();
    SemanticContext::from_embedding(Embedding::normalized(v).unwrap())
}

#[test]
fn untrained_output_is_reproducible() {
    let sched = schedule();
    let (x, mu) = (state(16, 1), state(16, 2));
    let a = ScoreNetwork::new(tiny(), &sched, 5).unwrap();
    let b = ScoreNetwork::new(tiny(), &sched, 5).unwrap();
    let c = ScoreNetwork::new(tiny(), &sched, 6).unwrap();
    let ha = bits_hash(&predict_noise(&a, &x, &mu, 40, None).unwrap());
    assert_eq!(ha, bits_hash(&predict_noise(&a, &x, &mu, 40, None).unwrap()));
    assert_eq!(ha, bits_hash(&predict_noise(&b, &x, &mu, 40, None).unwrap()));
    assert_ne!(ha, bits_hash(&predict_noise(&c, &x, &mu, 40, None).unwrap()));
}

#[test]
fn output_shape_matches_state() {
    let sched = schedule();
    let net = ScoreNetwork::new(ScoreNetConfig::desk(), &sched, 1).unwrap();
    for size in [32, 64] {
        let (x, mu) = (state(size, 3), state(size, 4));
        let eps = predict_noise(&net, &x, &mu, 1, None).unwrap();
        assert_eq!((eps.height(), eps.width(), eps.channels()), (size, size, 3));
        assert!(eps.all_finite());
    }
}

#[test]
fn default_network_fits_the_parameter_budget() {
    let net = ScoreNetwork::new(ScoreNetConfig::default(), &schedule(), 0).unwrap();
    assert!(net.parameter_count() <= 5_000_000, "{}", net.parameter_count());
    assert!(net.parameter_count() > 100_000);
}

#[test]
fn rejects_bad_inputs() {
    let sched = schedule();
    let net = ScoreNetwork::new(tiny(), &sched, 0).unwrap();
    let (x, mu) = (state(16, 1), state(16, 2));
    assert!(matches!(predict_noise(&net, &x, &mu, 0, None), Err(Error::Core(sldm::Error::StepRange { .. }))));
    assert!(predict_noise(&net, &x, &mu, sched.steps() + 1, None).is_err());
    assert!(predict_noise(&net, &x, &state(20, 2), 3, None).is_err());
    assert!(predict_noise(&net, &state(18, 1), &state(18, 2), 3, None).is_err());
    assert!(ScoreNetwork::new(ScoreNetConfig { widths: vec![], ..tiny() }, &sched, 0).is_err());
    assert!(ScoreNetwork::new(ScoreNetConfig { time_dim: 7, ..tiny() }, &sched, 0).is_err());
}

#[test]
fn semantic_embedding_changes_the_prediction() {
    let sched = schedule();
    let net = ScoreNetwork::new(tiny(), &sched, 2).unwrap();
    let (x, mu) = (state(16, 1), state(16, 2));
    let a = predict_noise(&net, &x, &mu, 30, Some(&context(1))).unwrap();
    let b = predict_noise(&net, &x, &mu, 30, Some(&context(2))).unwrap();
    assert!(a.l2_distance(&b).unwrap() > 1e-6);

    let plain = ScoreNetwork::new(ScoreNetConfig { cross_attention: false, ..tiny() }, &sched, 2).unwrap();
    let a = predict_noise(&plain, &x, &mu, 30, Some(&context(1))).unwrap();
    let b = predict_noise(&plain, &x, &mu, 30, Some(&context(2))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oracle_predictors_give_closed_form_losses() {
    let sched = schedule();
    let batch = examples(32, 16, 0);
    let exact = |_: &[ImageGrid], _: &[ImageGrid], _: &[usize], d: &sldm_nn::LossDraws| Ok(d.noise.clone());
    let zero = |x: &[ImageGrid], _: &[ImageGrid], _: &[usize], _: &sldm_nn::LossDraws| {
        Ok(x.iter().map(|g| g.map(|_| 0.0)).collect())
    };
    assert_eq!(training_loss_with(&exact, &batch, &sched, 3, LossNorm::L1, 1.0).unwrap(), 0.0);
    // E|ε| = √(2/π); 49k draws put the standard error near 0.003.
    let l1 = training_loss_with(&zero, &batch, &sched, 3, LossNorm::L1, 1.0).unwrap();
    assert!((l1 - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.015, "{l1}");
    let l2 = training_loss_with(&zero, &batch, &sched, 3, LossNorm::L2, 1.0).unwrap();
    assert!((l2 - 1.0).abs() < 0.03, "{l2}");
    let weighted = training_loss_with(&zero, &batch, &sched, 3, LossNorm::L1, 2.5).unwrap();
    assert!((weighted - 2.5 * l1).abs() < 1e-12);
    assert!(training_loss_with(&exact, &[], &sched, 3, LossNorm::L1, 1.0).is_err());
}

#[test]
fn network_loss_matches_generic_loss() {
    let sched = schedule();
    let batch = examples(16, 4, 10);
    let net = ScoreNetwork::new(tiny(), &sched, 4).unwrap();
    let predict = |x: &[ImageGrid], mu: &[ImageGrid], t: &[usize], _: &sldm_nn::LossDraws| {
        let mut out = Vec::new();
        for i in 0..x.len() {
            out.extend(net.predict_noise_batch(&x[i..=i], &mu[i..=i], t[i], &[None])?);
        }
        Ok(out)
    };
    for norm in [LossNorm::L1, LossNorm::L2] {
        let cfg = TrainingConfig { network: tiny(), loss: norm, ..Default::default() };
        let a = training_loss(&net, &batch, 9, &cfg).unwrap();
        let b = training_loss_with(&predict, &batch, &sched, 9, norm, 1.0).unwrap();
        assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let sched = schedule();
    let net = ScoreNetwork::new(tiny(), &sched, 8).unwrap();
    let ckpt = net.to_checkpoint(12, 8, serde_json::json!({"note": "x"}), vec![0.5, 0.25], None);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("score.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let back = ScoreNetwork::from_checkpoint(&loaded, &sched).unwrap();
    let (x, mu) = (state(16, 1), state(16, 2));
    assert_eq!(predict_noise(&net, &x, &mu, 7, None).unwrap(), predict_noise(&back, &x, &mu, 7, None).unwrap());
    assert_eq!(loaded.loss_curve_csv(), "iteration,loss\n1,0.50000000\n2,0.25000000\n");

    let other = ScheduleConfig { steps: 50, ..ScheduleConfig::default() }.build().unwrap();
    assert!(matches!(ScoreNetwork::from_checkpoint(&loaded, &other), Err(Error::Checkpoint(_))));
    let align = AlignmentModel::new(AlignmentConfig::default(), 0).unwrap().to_checkpoint(0, 0, vec![], None);
    assert!(ScoreNetwork::from_checkpoint(&align, &sched).is_err());
}
