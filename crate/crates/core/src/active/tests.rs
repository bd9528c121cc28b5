use super::*;
use crate::models::ModelConfig;
use crate::worlds::LabelingMode;

/// 1-D posterior centred at `-a` for label true and `+a` for false, taken
/// from the first triple; any other context maps to the standard normal.
struct SignEncoder {
    a: f64,
    eps: f64,
}

impl ContextEncoder for SignEncoder {
    fn prior(&self) -> LatentPosterior {
        LatentPosterior::standard(1)
    }

    fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        Ok(ctxs
            .iter()
            .map(|c| LatentPosterior {
                mean: vec![if c[0].label { -self.a } else { self.a }],
                stddev: vec![self.eps],
            })
            .collect())
    }
}

/// Reacts only to pairs whose first state exceeds 0.5: their label moves
/// the posterior; every other pair leaves it at the prior.
struct ThresholdEncoder;

impl ContextEncoder for ThresholdEncoder {
    fn prior(&self) -> LatentPosterior {
        LatentPosterior::standard(1)
    }

    fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        Ok(ctxs
            .iter()
            .map(|c| {
                let shift: f64 = c
                    .iter()
                    .filter(|t| t.sa[0] > 0.5)
                    .map(|t| if t.label { 2.0 } else { -2.0 })
                    .sum();
                LatentPosterior {
                    mean: vec![shift],
                    stddev: vec![0.5],
                }
            })
            .collect())
    }
}

struct ConstantEncoder;

impl ContextEncoder for ConstantEncoder {
    fn prior(&self) -> LatentPosterior {
        LatentPosterior::standard(2)
    }

    fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        Ok(vec![
            LatentPosterior {
                mean: vec![0.3, -0.1],
                stddev: vec![0.7, 0.2],
            };
            ctxs.len()
        ])
    }
}

fn pair(a: f64, b: f64) -> QueryPair {
    (vec![a], vec![b])
}

fn gauss(x: f64, m: f64, s: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// Mutual information of the equal-weight two-component 1-D mixture by
/// trapezoid quadrature.
fn quadrature_mi(a: f64, eps: f64) -> f64 {
    let (lo, hi) = (-a - 15.0 * eps, a + 15.0 * eps);
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let mut h_mix = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let p = 0.5 * gauss(x, -a, eps) + 0.5 * gauss(x, a, eps);
        let f = if p > 0.0 { -p * p.ln() } else { 0.0 };
        h_mix += if i == 0 || i == n { 0.5 * f } else { f };
    }
    h_mix *= h;
    let h_comp = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * eps * eps).ln();
    h_mix - h_comp
}

#[test]
fn separated_binary_mixture_carries_ln_two() {
    let enc = SignEncoder { a: 4.0, eps: 0.5 };
    let oracle = quadrature_mi(4.0, 0.5);
    assert!((oracle - std::f64::consts::LN_2).abs() < 1e-6);
    let est = mutual_information(&enc, &[pair(0.1, 0.2)], 65536, &SeededRng::new(3)).unwrap();
    assert!((est.value - oracle).abs() / oracle < 0.02, "{} vs {oracle}", est.value);
}

#[test]
fn overlapping_binary_mixture_matches_quadrature() {
    let enc = SignEncoder { a: 0.6, eps: 1.0 };
    let oracle = quadrature_mi(0.6, 1.0);
    let est = mutual_information(&enc, &[pair(0.1, 0.2)], 8192, &SeededRng::new(5)).unwrap();
    assert!((est.value - oracle).abs() <= est.tolerance().max(0.02 * oracle), "{} vs {oracle}", est.value);
}

#[test]
fn identical_components_give_exactly_zero() {
    let batch = vec![pair(0.1, 0.9), pair(0.4, 0.3), pair(0.8, 0.2)];
    let est = mutual_information(&ConstantEncoder, &batch, 512, &SeededRng::new(1)).unwrap();
    assert_eq!(est.value, 0.0);
}

#[test]
fn oversized_batches_and_small_sample_counts_are_rejected() {
    let batch: Vec<QueryPair> = (0..9).map(|i| pair(i as f64 / 10.0, 0.5)).collect();
    let rng = SeededRng::new(0);
    assert!(matches!(
        mutual_information(&ConstantEncoder, &batch, 512, &rng),
        Err(Error::Contract(_))
    ));
    assert!(mutual_information(&ConstantEncoder, &batch[..2], 10, &rng).is_err());
    assert!(select_queries(&ConstantEncoder, &batch[..2], 3, SearchMode::Sampled(5), 512, &rng).is_err());
}

fn untrained_vpl(seed: u64) -> RewardModel {
    RewardModel::new(ModelConfig::new(ModelKind::Vpl, 1).with_hidden(8).with_latent_dim(2), seed).unwrap()
}

fn random_posteriors(g: &mut SeededRng, seed: u64) -> Vec<LatentPosterior> {
    let model = untrained_vpl(seed);
    let q = 1 + g.below(4);
    let batch: Vec<QueryPair> = (0..q).map(|_| pair(g.uniform(), g.uniform())).collect();
    labeled_posteriors(&model, &batch).unwrap()
}

#[test]
fn estimates_are_nonnegative_within_tolerance_on_random_encoders() {
    // a calibrated estimator falls below -3 se about 0.13% of the time
    let mut g = SeededRng::new(11);
    let mut violations = 0;
    for seed in 0..100 {
        let posts = random_posteriors(&mut g, seed);
        let est = mixture_information(&posts, 512, &g.fork(seed)).unwrap();
        violations += usize::from(est.value < -est.tolerance());
    }
    assert!(violations <= 2, "{violations} of 100 estimates below tolerance");
}

#[test]
fn standard_errors_are_calibrated() {
    let mut g = SeededRng::new(12);
    let zs: Vec<f64> = (0..100)
        .map(|seed| {
            let posts = random_posteriors(&mut g, seed);
            let est = mixture_information(&posts, 512, &g.fork(seed)).unwrap();
            let reference = mixture_information(&posts, 32768, &g.fork(1000 + seed)).unwrap();
            (est.value - reference.value) / est.stderr
        })
        .collect();
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / zs.len() as f64;
    assert!(mean.abs() < 0.35, "z mean {mean}");
    assert!((0.6..1.6).contains(&var), "z variance {var}");
}

#[test]
fn pair_order_only_relabels_the_enumerated_posteriors() {
    let model = untrained_vpl(2);
    let batch = vec![pair(0.1, 0.7), pair(0.5, 0.2), pair(0.9, 0.4)];
    let perm = [2, 0, 1];
    let permuted: Vec<QueryPair> = perm.iter().map(|&i| batch[i].clone()).collect();
    let a = labeled_posteriors(&model, &batch).unwrap();
    let b = labeled_posteriors(&model, &permuted).unwrap();
    for bits in 0..8usize {
        let mut mapped = 0;
        for (j, &i) in perm.iter().enumerate() {
            mapped |= (bits >> i & 1) << j;
        }
        assert_eq!(a[bits], b[mapped]);
    }
}

#[test]
fn single_candidate_search_returns_the_sampled_batch() {
    let pool: Vec<QueryPair> = (0..10).map(|i| pair(i as f64 / 10.0, 0.05)).collect();
    let rng = SeededRng::new(4);
    let sel = select_queries(&ThresholdEncoder, &pool, 3, SearchMode::Sampled(1), 256, &rng).unwrap();
    let expected = rng.fork(0).sample_indices(pool.len(), 3);
    assert_eq!(sel.indices, expected);
}

#[test]
fn exhaustive_search_finds_the_only_informative_pair() {
    let mut pool: Vec<QueryPair> = (0..9).map(|i| pair(i as f64 / 20.0, 0.1)).collect();
    pool.insert(6, pair(0.9, 0.1));
    let rng = SeededRng::new(8);
    let sel = select_queries(&ThresholdEncoder, &pool, 1, SearchMode::Exhaustive, 512, &rng).unwrap();
    assert_eq!(sel.indices, vec![6]);
    let again = select_queries(&ThresholdEncoder, &pool, 1, SearchMode::Exhaustive, 512, &rng).unwrap();
    assert_eq!(again, sel);
}

#[test]
fn duplicated_pairs_carry_no_more_than_fresh_informative_ones() {
    let pool = vec![pair(0.9, 0.1), pair(0.7, 0.2), pair(0.2, 0.3)];
    let rng = SeededRng::new(2);
    let dup = mutual_information(&ThresholdEncoder, &[pool[0].clone(), pool[0].clone()], 2048, &rng).unwrap();
    let fresh = mutual_information(&ThresholdEncoder, &[pool[0].clone(), pool[1].clone()], 2048, &rng).unwrap();
    assert!(dup.value <= fresh.value + dup.tolerance() + fresh.tolerance());
}

#[test]
fn combinations_are_lexicographic_and_complete() {
    let c = combinations(5, 3);
    assert_eq!(c.len(), 10);
    assert_eq!(c[0], vec![0, 1, 2]);
    assert_eq!(c[9], vec![2, 3, 4]);
    assert!(combinations(2, 3).is_empty());
}

#[test]
fn adaptation_falls_back_to_the_prior_and_is_deterministic() {
    let model = untrained_vpl(6);
    let ann = Annotator::new(0, LabelingMode::Deterministic, |s: &[f64]| Ok(s[0]));
    let mut rng = SeededRng::new(0);
    assert_eq!(adapt_to_user(&model, &[], &ann, &mut rng).unwrap(), model.prior().mean);
    let batch = vec![pair(0.1, 0.7), pair(0.5, 0.2)];
    let a = adapt_to_user(&model, &batch, &ann, &mut SeededRng::new(1)).unwrap();
    let b = adapt_to_user(&model, &batch, &ann, &mut SeededRng::new(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn context_free_models_cannot_drive_selection() {
    let btl = RewardModel::new(ModelConfig::new(ModelKind::Btl, 1), 0).unwrap();
    assert!(mutual_information(&btl, &[pair(0.1, 0.2)], 512, &SeededRng::new(0)).is_err());
}
