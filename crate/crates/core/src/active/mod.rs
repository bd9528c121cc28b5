//! Query selection by mutual information between the user latent and the
//! labels of a candidate batch, and posterior adaptation to a test user.

use serde::{Deserialize, Serialize};

use crate::autodiff::SeededRng;
use crate::error::{Error, Result};
use crate::models::{sample_latent, ModelKind, RewardModel};
use crate::types::{LatentPosterior, PreferenceTriple, StateFeatures};
use crate::worlds::{annotate, Annotator};

pub const MAX_QUERIES: usize = 8;
pub const MIN_MC_SAMPLES: usize = 64;
pub const DEFAULT_MC_SAMPLES: usize = 512;
pub const MAX_EXHAUSTIVE_POOL: usize = 500;

pub type QueryPair = (StateFeatures, StateFeatures);

/// Maps a labeled context to a latent posterior.
pub trait ContextEncoder {
    fn prior(&self) -> LatentPosterior;

    fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>>;

    fn posterior_or_prior(&self, ctx: &[PreferenceTriple]) -> Result<LatentPosterior> {
        if ctx.is_empty() {
            Ok(self.prior())
        } else {
            Ok(self.encode_many(&[ctx])?.remove(0))
        }
    }
}

impl ContextEncoder for RewardModel {
    fn prior(&self) -> LatentPosterior {
        RewardModel::prior(self)
    }

    fn encode_many(&self, ctxs: &[&[PreferenceTriple]]) -> Result<Vec<LatentPosterior>> {
        if self.kind() != ModelKind::Vpl {
            return Err(Error::contract("query selection needs a latent-variable model"));
        }
        RewardModel::encode_many(self, ctxs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Nats.
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    pub stderr: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl MiEstimate {
    pub fn tolerance(&self) -> f64 {
        3.0 * self.stderr
    }
}

fn labelings(batch: &[QueryPair]) -> Vec<Vec<PreferenceTriple>> {
    let q = batch.len();
    (0..1usize << q)
        .map(|bits| {
            batch
                .iter()
                .enumerate()
                .map(|(i, (a, b))| PreferenceTriple::new(a.clone(), b.clone(), bits >> i & 1 == 1))
                .collect()
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mutual information between the latent and the labels of `batch`.
///
/// Every labeling is weighted uniformly. Component entropies are exact;
/// the mixture entropy is a stratified Monte Carlo estimate with
/// `mc_samples / 2^Q` draws per labeling.
pub fn mutual_information(
    encoder: &impl ContextEncoder,
    batch: &[QueryPair],
    mc_samples: usize,
    rng: &SeededRng,
) -> Result<MiEstimate> {
    let posts = labeled_posteriors(encoder, batch)?;
    mixture_information(&posts, mc_samples, rng)
}

/// Posterior for each of the `2^Q` labelings of `batch`, indexed by the
/// labeling's bit pattern.
pub fn labeled_posteriors(encoder: &impl ContextEncoder, batch: &[QueryPair]) -> Result<Vec<LatentPosterior>> {
    if batch.len() > MAX_QUERIES {
        return Err(Error::contract(format!(
            "query batch of {} exceeds the limit of {MAX_QUERIES}",
            batch.len()
        )));
    }
    if batch.is_empty() {
        return Ok(vec![encoder.prior()]);
    }
    let labeled = labelings(batch);
    let refs: Vec<&[PreferenceTriple]> = labeled.iter().map(|c| c.as_slice()).collect();
    encoder.encode_many(&refs)
}

/// Information of a uniform mixture of diagonal Gaussians about its
/// component index: mixture entropy minus mean component entropy.
pub fn mixture_information(posts: &[LatentPosterior], mc_samples: usize, rng: &SeededRng) -> Result<MiEstimate> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::contract(format!("need at least {MIN_MC_SAMPLES} Monte Carlo samples")));
    }
    if posts.is_empty() {
        return Err(Error::contract("mixture with no components"));
    }
    let seed = rng.seed();
    if posts.iter().all(|p| p == &posts[0]) {
        return Ok(MiEstimate {
            value: 0.0,
            stderr: 0.0,
            mc_samples,
            seed,
        });
    }
    let k = posts.len();
    let per = (mc_samples / k).max(1);
    let log_w = -(k as f64).ln();
    let mean_component_entropy = posts.iter().map(|p| p.entropy()).sum::<f64>() / k as f64;
    let mut h_mix = 0.0;
    let mut var = 0.0;
    let mut logs = vec![0.0; k];
    for (c, post) in posts.iter().enumerate() {
        let mut g = rng.fork(c as u64);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..per {
            let z = sample_latent(post, &mut g);
            for (l, p) in logs.iter_mut().zip(posts) {
                *l = log_w + p.log_density(&z);
            }
            let v = -log_sum_exp(&logs);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / per as f64;
        h_mix += mean / k as f64;
        if per > 1 {
            let s2 = (sum_sq - per as f64 * mean * mean).max(0.0) / (per - 1) as f64;
            var += s2 / per as f64 / (k * k) as f64;
        }
    }
    let value = h_mix - mean_component_entropy;
    if !value.is_finite() {
        return Err(Error::numerical("non-finite mutual information estimate"));
    }
    Ok(MiEstimate {
        value,
        stderr: var.sqrt(),
        mc_samples: per * k,
        seed,
    })
}

/// How candidate batches are proposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// `S` uniformly sampled batches.
    Sampled(usize),
    /// Every size-`Q` subset of the pool, in lexicographic order.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub batch: Vec<QueryPair>,
    pub mi: MiEstimate,
}

fn combinations(n: usize, q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..q).collect();
    if q > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..q).rev().find(|&i| cur[i] < n - q + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..q {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

const MAX_EXHAUSTIVE_BATCHES: usize = 200_000;

/// Candidate batch with the largest estimated information; the earliest
/// candidate wins ties.
pub fn select_queries(
    encoder: &impl ContextEncoder,
    pool: &[QueryPair],
    q: usize,
    mode: SearchMode,
    mc_samples: usize,
    rng: &SeededRng,
) -> Result<Selection> {
    if q == 0 || q > MAX_QUERIES {
        return Err(Error::contract(format!("query batch size must lie in [1, {MAX_QUERIES}], got {q}")));
    }
    if pool.len() < q {
        return Err(Error::contract(format!("pool of {} pairs cannot fill a batch of {q}", pool.len())));
    }
    let candidates = match mode {
        SearchMode::Sampled(s) => {
            if s == 0 {
                return Err(Error::contract("need at least one candidate batch"));
            }
            let mut g = rng.fork(0);
            (0..s).map(|_| g.sample_indices(pool.len(), q)).collect()
        }
        SearchMode::Exhaustive => {
            if pool.len() > MAX_EXHAUSTIVE_POOL {
                return Err(Error::contract(format!(
                    "exhaustive search supports pools of at most {MAX_EXHAUSTIVE_POOL} pairs"
                )));
            }
            let c = combinations(pool.len(), q);
            if c.len() > MAX_EXHAUSTIVE_BATCHES {
                return Err(Error::contract(format!("{} candidate batches is too many to enumerate", c.len())));
            }
            c
        }
    };
    let mut best: Option<Selection> = None;
    for (i, idx) in candidates.into_iter().enumerate() {
        let batch: Vec<QueryPair> = idx.iter().map(|&j| pool[j].clone()).collect();
        let mi = mutual_information(encoder, &batch, mc_samples, &rng.fork(1 + i as u64))?;
        if best.as_ref().is_none_or(|b| mi.value > b.mi.value) {
            best = Some(Selection {
                indices: idx,
                batch,
                mi,
            });
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Labels `batch` with the test annotator and returns the posterior mean
/// (the prior mean for an empty batch).
pub fn adapt_to_user(
    encoder: &impl ContextEncoder,
    batch: &[QueryPair],
    annotator: &Annotator,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let ctx = label_batch(batch, annotator, rng)?;
    Ok(encoder.posterior_or_prior(&ctx)?.mean)
}

pub fn label_batch(batch: &[QueryPair], annotator: &Annotator, rng: &mut SeededRng) -> Result<Vec<PreferenceTriple>> {
    batch
        .iter()
        .map(|(a, b)| Ok(PreferenceTriple::new(a.clone(), b.clone(), annotate(annotator, a, b, rng)?)))
        .collect()
}

#[cfg(test)]
mod tests;
