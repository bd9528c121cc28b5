use serde::{Deserialize, Serialize};

use crate::active::{label_batch, select_queries, QueryPair, SearchMode};
use crate::autodiff::SeededRng;
use crate::error::{Error, Result};
use crate::models::{sample_latent, ModelKind, RewardModel};
use crate::policy::{
    choice_sets, deploy_policy, eval_one_step, eval_per_user, eval_success, infer_latent, one_step_success,
    sample_start, train_policy, SuccessReport, ZBankPolicy,
};
use crate::types::{PreferenceTriple, Record, StateFeatures};
use crate::worlds::{build_dataset, inject_label_noise, make_world, AnnotatorWorld, PreferenceDataset};

use super::config::ExperimentConfig;
use super::metrics::MetricsRecord;
use super::train::{eval_reward_accuracy, split_by_target, train_model, AccuracyReport, TrainReport};

// Stream ids under the config seed.
const WORLD_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;
const TRAIN_STREAM: u64 = 5;
const POLICY_STREAM: u64 = 6;
const EVAL_STREAM: u64 = 7;
const EXPORT_STREAM: u64 = 8;
const FRESH_STREAM: u64 = 9;
const QUERY_STREAM: u64 = 10;

pub fn root_rng(cfg: &ExperimentConfig) -> SeededRng {
    SeededRng::new(cfg.seed)
}

pub fn build_world(cfg: &ExperimentConfig) -> Result<AnnotatorWorld> {
    make_world(&cfg.world, &mut root_rng(cfg).fork(WORLD_STREAM))
}

/// World and preference dataset for `cfg`, with label noise applied.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<(AnnotatorWorld, PreferenceDataset)> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    let root = root_rng(cfg);
    let d = &cfg.data;
    let mut ds = build_dataset(&world, d.n_records, d.n, d.k, d.m, d.labeling_mode, &root.fork(DATA_STREAM))?;
    if d.noise_rate > 0.0 {
        ds = inject_label_noise(&ds, d.noise_rate, d.noise_scope, &root.fork(NOISE_STREAM))?;
    }
    Ok((world, ds))
}

/// World, dataset and its train / held-out split.
pub struct PreparedData {
    pub world: AnnotatorWorld,
    pub dataset: PreferenceDataset,
    pub train: Vec<Record>,
    pub heldout: Vec<Record>,
}

impl PreparedData {
    pub fn new(cfg: &ExperimentConfig, world: AnnotatorWorld, dataset: PreferenceDataset) -> Self {
        let (tr, ho) = split_by_target(&dataset.records, cfg.data.heldout_fraction, &root_rng(cfg).fork(SPLIT_STREAM));
        let train = tr.iter().map(|&i| dataset.records[i].clone()).collect();
        let heldout = ho.iter().map(|&i| dataset.records[i].clone()).collect();
        PreparedData {
            world,
            dataset,
            train,
            heldout,
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (world, ds) = generate_data(cfg)?;
    Ok(PreparedData::new(cfg, world, ds))
}

/// Freshly initialized model for `cfg`.
pub fn init_model(cfg: &ExperimentConfig, feature_dim: usize) -> Result<RewardModel> {
    let seed = root_rng(cfg).fork(INIT_STREAM).next_u64();
    RewardModel::new(cfg.model_config(feature_dim), seed)
}

/// Trains `model` on the prepared split. On failure `model` keeps its last
/// finite parameters.
pub fn train_reward(
    cfg: &ExperimentConfig,
    model: &mut RewardModel,
    data: &PreparedData,
) -> Result<(MetricsRecord, TrainReport)> {
    let mut metrics = MetricsRecord::new();
    let report = train_model(
        model,
        &data.train,
        &data.heldout,
        &cfg.train,
        &root_rng(cfg).fork(TRAIN_STREAM),
        &mut metrics,
        &cfg.hash(),
    )?;
    Ok((metrics, report))
}

/// `n_records` new records (one copy per target) from a stream disjoint from
/// the training data, minus any whose target pair occurs in `exclude`.
pub fn fresh_eval_records(
    cfg: &ExperimentConfig,
    world: &AnnotatorWorld,
    n_records: usize,
    exclude: &[Record],
) -> Result<Vec<Record>> {
    let d = &cfg.data;
    let ds = build_dataset(world, n_records, d.n, d.k, 1, d.labeling_mode, &root_rng(cfg).fork(FRESH_STREAM))?;
    let ds = if d.noise_rate > 0.0 {
        inject_label_noise(&ds, d.noise_rate, d.noise_scope, &root_rng(cfg).fork(FRESH_STREAM).fork(1))?
    } else {
        ds
    };
    let seen: std::collections::HashSet<String> = exclude.iter().map(|r| unordered_key(&r.target)).collect();
    Ok(ds.records.into_iter().filter(|r| !seen.contains(&unordered_key(&r.target))).collect())
}

fn unordered_key(t: &PreferenceTriple) -> String {
    let (a, b) = (format!("{:?}", t.sa), format!("{:?}", t.sb));
    if a <= b {
        format!("{a}|{b}")
    } else {
        format!("{b}|{a}")
    }
}

/// Records whose target pair splits the annotators.
pub fn divergent_records(world: &AnnotatorWorld, records: &[Record]) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for r in records {
        if world.is_divergent(&r.target.sa, &r.target.sb)? {
            out.push(r.clone());
        }
    }
    Ok(out)
}

pub fn divergent_accuracy(model: &RewardModel, world: &AnnotatorWorld, records: &[Record]) -> Result<AccuracyReport> {
    let div = divergent_records(world, records)?;
    if div.is_empty() {
        return Err(Error::contract("no divergent records to score"));
    }
    eval_reward_accuracy(model, &div)
}

pub fn policy_rng(cfg: &ExperimentConfig) -> SeededRng {
    root_rng(cfg).fork(POLICY_STREAM)
}

pub fn eval_rng(cfg: &ExperimentConfig) -> SeededRng {
    root_rng(cfg).fork(EVAL_STREAM)
}

pub fn train_policy_for(cfg: &ExperimentConfig, world: &AnnotatorWorld, model: &RewardModel) -> Result<ZBankPolicy> {
    let grid = world.grid().ok_or_else(|| Error::config("policy training needs a grid world"))?;
    train_policy(grid, model, &cfg.policy, &policy_rng(cfg))
}

/// Per-user success: greedy rollouts for grid worlds, top-1 choice for
/// one-step worlds.
pub fn eval_policy(
    cfg: &ExperimentConfig,
    world: &AnnotatorWorld,
    model: &RewardModel,
    policy: Option<&ZBankPolicy>,
) -> Result<SuccessReport> {
    let rng = eval_rng(cfg);
    match (world.grid(), policy) {
        (Some(_), Some(p)) => eval_success(p, world, model, cfg.test_ctx_len(), cfg.eval.episodes, &rng),
        (Some(_), None) => Err(Error::config("grid worlds need a trained policy")),
        (None, _) => eval_one_step(world, model, cfg.test_ctx_len(), cfg.eval.episodes, &rng),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStrategy {
    Active,
    Random,
}

impl QueryStrategy {
    pub fn name(self) -> &'static str {
        match self {
            QueryStrategy::Active => "active",
            QueryStrategy::Random => "random",
        }
    }
}

/// Unlabeled query pool shared by every test user of a run.
pub fn query_pool(cfg: &ExperimentConfig, world: &AnnotatorWorld, q: usize) -> Result<Vec<QueryPair>> {
    let mut rng = root_rng(cfg).fork(QUERY_STREAM).fork(0);
    (0..cfg.active.pool_size.max(q)).map(|_| world.sample_context_pair(&mut rng)).collect()
}

/// The batch with the largest mutual information among `S` sampled
/// candidates. Selection happens once per trained model; every test user
/// then labels the same batch.
pub fn choose_active_queries(
    cfg: &ExperimentConfig,
    model: &RewardModel,
    pool: &[QueryPair],
    q: usize,
) -> Result<Vec<QueryPair>> {
    let rng = root_rng(cfg).fork(QUERY_STREAM).fork(1).fork(q as u64);
    let sel = select_queries(model, pool, q, SearchMode::Sampled(cfg.active.s), cfg.active.mc_samples, &rng)?;
    Ok(sel.batch)
}

/// Success when each episode's context is `q` labeled queries: the
/// mutual-information batch for [`QueryStrategy::Active`], a fresh uniform
/// draw from the same pool per episode for [`QueryStrategy::Random`].
pub fn eval_active(
    cfg: &ExperimentConfig,
    world: &AnnotatorWorld,
    model: &RewardModel,
    policy: Option<&ZBankPolicy>,
    q: usize,
    strategy: QueryStrategy,
) -> Result<SuccessReport> {
    let sets = choice_sets(world);
    let pool = query_pool(cfg, world, q)?;
    let chosen = match strategy {
        QueryStrategy::Active => Some(choose_active_queries(cfg, model, &pool, q)?),
        QueryStrategy::Random => None,
    };
    eval_per_user(world.num_users(), cfg.eval.episodes, &eval_rng(cfg), |u, g| {
        let batch = match &chosen {
            Some(b) => b.clone(),
            None => g.sample_indices(pool.len(), q).into_iter().map(|i| pool[i].clone()).collect(),
        };
        let ctx = label_batch(&batch, world.annotator(u)?, g)?;
        match (world.grid(), policy) {
            (Some(grid), Some(p)) => {
                let start = sample_start(grid, g);
                deploy_policy(p, world, u, &ctx, model, start)
            }
            (Some(_), None) => Err(Error::config("grid worlds need a trained policy")),
            (None, _) => {
                let options = &sets[g.below(sets.len())];
                one_step_success(world, model, u, options, &infer_latent(model, &ctx)?)
            }
        }
    })
}

/// Posterior mean for each user, averaged over up to `max_ctx` of that
/// user's record contexts. Context-free models get an empty latent.
pub fn user_latents(model: &RewardModel, n_users: usize, records: &[Record], max_ctx: usize) -> Result<Vec<Vec<f64>>> {
    (0..n_users)
        .map(|u| {
            let ctxs: Vec<&[PreferenceTriple]> = records
                .iter()
                .filter(|r| r.user_id == u && !r.ctx.is_empty())
                .take(max_ctx)
                .map(|r| r.ctx.as_slice())
                .collect();
            if model.kind() != ModelKind::Vpl || ctxs.is_empty() {
                return Ok(model.prior().mean);
            }
            let posts = model.encode_many(&ctxs)?;
            let dim = posts[0].dim();
            let mut mean = vec![0.0; dim];
            for p in &posts {
                for (m, v) in mean.iter_mut().zip(&p.mean) {
                    *m += v / posts.len() as f64;
                }
            }
            Ok(mean)
        })
        .collect()
}

/// One point of an exported reward surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub state_index: usize,
    pub state: StateFeatures,
    pub z_label: String,
    pub reward: f64,
}

pub const MAX_SURFACE_CTX: usize = 64;

/// Learned rewards over the world's enumerable states under each user's
/// posterior mean (`user_<id>`), the prior mean (`prior`) and
/// `prior_samples` prior draws (`prior_<i>`).
pub fn export_reward_surface(
    model: &RewardModel,
    world: &AnnotatorWorld,
    records: &[Record],
    prior_samples: usize,
    rng: &SeededRng,
) -> Result<Vec<SurfaceRow>> {
    let states = world.states();
    let mut sources: Vec<(String, Vec<f64>)> = user_latents(model, world.num_users(), records, MAX_SURFACE_CTX)?
        .into_iter()
        .enumerate()
        .map(|(u, z)| (format!("user_{u}"), z))
        .collect();
    let prior = model.prior();
    sources.push(("prior".into(), prior.mean.clone()));
    let mut g = rng.fork(EXPORT_STREAM);
    for i in 0..prior_samples {
        sources.push((format!("prior_{i}"), sample_latent(&prior, &mut g)));
    }
    let mut rows = Vec::with_capacity(states.len() * sources.len());
    for (label, z) in &sources {
        let zarg = (model.kind() == ModelKind::Vpl).then_some(z.as_slice());
        let r = model.rewards(&states, zarg)?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite reward on the exported surface"));
        }
        for (i, (s, v)) in states.iter().zip(r).enumerate() {
            rows.push(SurfaceRow {
                state_index: i,
                state: s.clone(),
                z_label: label.clone(),
                reward: v,
            });
        }
    }
    Ok(rows)
}

pub fn surface_csv(rows: &[SurfaceRow], seed: u64, config_hash: &str) -> String {
    let mut out = String::from("state_index,state,z_label,reward,seed,config_hash\n");
    for r in rows {
        let state: Vec<String> = r.state.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{},{seed},{config_hash}\n",
            r.state_index,
            state.join(" "),
            r.z_label,
            r.reward
        ));
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Pearson correlation, per user, between the learned reward under that
/// user's posterior mean and the user's true reward over the world states.
pub fn user_correlations(model: &RewardModel, world: &AnnotatorWorld, records: &[Record]) -> Result<Vec<f64>> {
    let states = world.states();
    let latents = user_latents(model, world.num_users(), records, MAX_SURFACE_CTX)?;
    latents
        .iter()
        .enumerate()
        .map(|(u, z)| {
            let zarg = (model.kind() == ModelKind::Vpl).then_some(z.as_slice());
            let learned = model.rewards(&states, zarg)?;
            let truth = states.iter().map(|s| world.true_reward(u, s)).collect::<Result<Vec<_>>>()?;
            Ok(pearson(&learned, &truth))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub user_id: usize,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentExport {
    pub rows: Vec<LatentRow>,
    /// Mean distance between user centroids over mean distance of a
    /// posterior mean to its user's centroid.
    pub separation: f64,
    /// Set when the ratio is undefined and `separation` was reported as 0.
    pub degenerate: bool,
}

/// Posterior mean of every record's context, tagged with its user.
pub fn export_latents(model: &RewardModel, records: &[Record]) -> Result<LatentExport> {
    if model.kind() != ModelKind::Vpl {
        return Err(Error::contract("latent export needs a latent-variable model"));
    }
    let mut rows = Vec::with_capacity(records.len());
    for chunk in records.chunks(512) {
        let ctxs: Vec<&[PreferenceTriple]> = chunk.iter().map(|r| r.ctx.as_slice()).collect();
        for (r, p) in chunk.iter().zip(model.posteriors_or_prior(&ctxs)?) {
            rows.push(LatentRow {
                user_id: r.user_id,
                mean: p.mean,
            });
        }
    }
    let (separation, degenerate) = separation_ratio(&rows);
    Ok(LatentExport {
        rows,
        separation,
        degenerate,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn separation_ratio(rows: &[LatentRow]) -> (f64, bool) {
    let mut groups: std::collections::BTreeMap<usize, Vec<&[f64]>> = Default::default();
    for r in rows {
        groups.entry(r.user_id).or_default().push(&r.mean);
    }
    let centroids: Vec<(usize, Vec<f64>)> = groups
        .iter()
        .map(|(u, pts)| {
            let dim = pts[0].len();
            let mut c = vec![0.0; dim];
            for p in pts {
                for (ci, v) in c.iter_mut().zip(p.iter()) {
                    *ci += v / pts.len() as f64;
                }
            }
            (*u, c)
        })
        .collect();
    let mut spread = 0.0;
    for (u, c) in &centroids {
        for p in &groups[u] {
            spread += dist(p, c) / rows.len() as f64;
        }
    }
    let (mut inter, mut pairs) = (0.0, 0usize);
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += dist(&centroids[i].1, &centroids[j].1);
            pairs += 1;
        }
    }
    if pairs == 0 || !(spread > 0.0) {
        return (0.0, true);
    }
    (inter / pairs as f64 / spread, false)
}

pub fn latents_csv(export: &LatentExport, seed: u64, config_hash: &str) -> String {
    let mut out = String::from("user_id,posterior_mean,seed,config_hash\n");
    for r in &export.rows {
        let m: Vec<String> = r.mean.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("{},{},{seed},{config_hash}\n", r.user_id, m.join(" ")));
    }
    out
}
