use super::*;
use crate::types::Record;

fn triple(a: f64, b: f64, label: bool) -> PreferenceTriple {
    PreferenceTriple::new(vec![a], vec![b], label)
}

fn tiny(kind: ModelKind) -> RewardModel {
    let mut cfg = ModelConfig::new(kind, 1).with_hidden(2).with_latent_dim(1);
    cfg.n_bins = 3;
    RewardModel::new(cfg, 11).unwrap()
}

fn toy_records() -> Vec<Record> {
    vec![
        Record {
            user_id: 0,
            ctx: vec![triple(0.1, 0.9, true), triple(0.3, 0.2, false)],
            target: triple(0.2, 0.8, true),
        },
        Record {
            user_id: 1,
            ctx: vec![triple(0.7, 0.4, true)],
            target: triple(0.6, 0.1, false),
        },
        Record {
            user_id: 1,
            ctx: vec![triple(0.5, 0.55, false), triple(0.9, 0.0, true), triple(0.25, 0.75, false)],
            target: triple(0.35, 0.4, true),
        },
    ]
}

fn loss_value(model: &RewardModel, records: &[&Record], beta: f64, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let mut rng = SeededRng::new(seed);
    let terms = model.loss(&mut tape, &vars, records, beta, &mut rng).unwrap();
    tape.value(terms.total).item()
}

/// Central differences (h = 1e-5) against the reverse pass.
fn check_gradients(model: &RewardModel, beta: f64) {
    let records = toy_records();
    let refs: Vec<&Record> = records.iter().collect();
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let mut rng = SeededRng::new(5);
    let terms = model.loss(&mut tape, &vars, &refs, beta, &mut rng).unwrap();
    let grads = tape.backward(terms.total).unwrap();
    let analytic: Vec<f64> = vars.iter().flat_map(|v| grads.wrt(*v).into_data()).collect();

    let base = model.params().flatten();
    assert!(base.len() < 100, "toy model has {} parameters", base.len());
    let h = 1e-5;
    for i in 0..base.len() {
        let mut plus = model.clone();
        let mut p = base.clone();
        p[i] += h;
        plus.params_mut().load_flat(&p).unwrap();
        let mut minus = model.clone();
        p[i] -= 2.0 * h;
        minus.params_mut().load_flat(&p).unwrap();
        let numeric = (loss_value(&plus, &refs, beta, 5) - loss_value(&minus, &refs, beta, 5)) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic[i] - numeric).abs() / denom;
        assert!(
            rel < 1e-4,
            "{:?} param {} ({}): analytic {} numeric {}",
            model.kind(),
            i,
            model.params().name(0),
            analytic[i],
            numeric
        );
    }
}

#[test]
fn elbo_gradients_match_finite_differences() {
    check_gradients(&tiny(ModelKind::Vpl), 0.7);
}

#[test]
fn baseline_gradients_match_finite_differences() {
    check_gradients(&tiny(ModelKind::Btl), 0.0);
    check_gradients(&tiny(ModelKind::DplMeanVar), 0.0);
    check_gradients(&tiny(ModelKind::DplCategorical), 0.0);
}

#[test]
fn zero_beta_leaves_only_the_conditional_cross_entropy() {
    let model = tiny(ModelKind::Vpl);
    let records = toy_records();
    let refs: Vec<&Record> = records.iter().collect();
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let terms = model.loss(&mut tape, &vars, &refs, 0.0, &mut SeededRng::new(3)).unwrap();
    assert_eq!(tape.value(terms.total).item(), terms.recon);
    assert!(terms.kl >= 0.0);
}

#[test]
fn encoder_ignores_context_order() {
    let model = RewardModel::new(ModelConfig::new(ModelKind::Vpl, 1).with_hidden(16), 2).unwrap();
    let ctx = toy_records()[2].ctx.clone();
    let a = model.encode_context(&ctx).unwrap();
    let mut rev = ctx.clone();
    rev.reverse();
    let b = model.encode_context(&rev).unwrap();
    assert_eq!(a, b);
}

#[test]
fn duplicated_triple_encodes_like_single() {
    let model = RewardModel::new(ModelConfig::new(ModelKind::Vpl, 1).with_hidden(16), 2).unwrap();
    let t = triple(0.3, 0.6, true);
    let once = model.encode_context(std::slice::from_ref(&t)).unwrap();
    let many = model.encode_context(&vec![t; 5]).unwrap();
    for (x, y) in once.mean.iter().zip(&many.mean).chain(once.stddev.iter().zip(&many.stddev)) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn empty_context_falls_back_to_prior() {
    let model = RewardModel::new(ModelConfig::new(ModelKind::Vpl, 2).with_hidden(8).with_latent_dim(4), 1).unwrap();
    let prior = model.posterior_or_prior(&[]).unwrap();
    assert_eq!(prior, LatentPosterior::standard(4));
    let t = PreferenceTriple::new(vec![0.0, 1.0], vec![1.0, 0.0], false);
    let post = model.posterior_or_prior(std::slice::from_ref(&t)).unwrap();
    assert_eq!(post, model.encode_context(&[t]).unwrap());
    assert!(model.encode_context(&[]).is_err());
}

#[test]
fn feature_dim_mismatch_is_a_shape_error() {
    let model = RewardModel::new(ModelConfig::new(ModelKind::Vpl, 2).with_hidden(4), 1).unwrap();
    let bad = triple(0.1, 0.2, true);
    assert!(matches!(model.encode_context(&[bad]), Err(Error::Shape { .. })));
}

#[test]
fn identical_states_are_a_coin_flip() {
    let model = RewardModel::new(ModelConfig::new(ModelKind::Vpl, 3).with_hidden(8).with_latent_dim(2), 4).unwrap();
    let mut rng = SeededRng::new(0);
    for _ in 0..20 {
        let s = rng.normals(3);
        let z = rng.normals(2);
        assert_eq!(model.preference(&s, &s, Some(&z)).unwrap(), 0.5);
    }
}

#[test]
fn checkpoint_roundtrip_restores_model() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::Btl, ModelKind::DplMeanVar, ModelKind::DplCategorical, ModelKind::Vpl] {
        let mut model = RewardModel::new(ModelConfig::new(kind, 2).with_hidden(4), 8).unwrap();
        model.set_step(17);
        let path = dir.path().join(format!("{}.ckpt", kind.name()));
        model.to_checkpoint().save(&path).unwrap();
        let back = RewardModel::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_checkpoint().header.model_kind, kind.name());
    }
}

#[test]
fn categorical_needs_two_bins() {
    let mut cfg = ModelConfig::new(ModelKind::DplCategorical, 1);
    cfg.n_bins = 1;
    assert!(matches!(RewardModel::new(cfg, 0), Err(Error::Contract(_))));
}

#[test]
fn kind_names_roundtrip() {
    for kind in [ModelKind::Btl, ModelKind::DplMeanVar, ModelKind::DplCategorical, ModelKind::Vpl] {
        assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
    }
    assert!(ModelKind::parse("gpt").is_err());
}
