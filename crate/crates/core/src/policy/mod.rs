//! Reward relabeling, reward scaling, tabular planning and per-user
//! evaluation of latent-conditioned policies.

mod vi;

use serde::{Deserialize, Serialize};

use crate::autodiff::SeededRng;
use crate::error::{Error, Result};
use crate::models::{sample_latent, ModelKind, RewardModel};
use crate::types::{LatentPosterior, PreferenceTriple, StateFeatures};
use crate::worlds::gridworld::{Gridworld, ACTIONS};
use crate::worlds::{annotate, AnnotatorWorld, WorldKind, TIDY_LOCATIONS};

pub use vi::{
    goal_mask, greedy_action, rollout, successor, value_iteration, value_iteration_from, QTable, Rollout, MAX_SWEEPS,
};

pub const MAX_EPISODE_STEPS: usize = 200;

/// One offline move on a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub cell: usize,
    pub action: usize,
    pub next: usize,
}

pub type Trajectory = Vec<Transition>;

/// Uniform random walks from uniform open start cells.
pub fn random_walks(grid: &Gridworld, n_traj: usize, len: usize, rng: &mut SeededRng) -> Vec<Trajectory> {
    let open: Vec<usize> = grid.open_cells().collect();
    (0..n_traj)
        .map(|_| {
            let mut cell = open[rng.below(open.len())];
            (0..len)
                .map(|_| {
                    let action = rng.below(ACTIONS.len());
                    let next = grid.step(cell, action);
                    let t = Transition { cell, action, next };
                    cell = next;
                    t
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMode {
    State,
    NextState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTransition {
    pub cell: usize,
    pub action: usize,
    pub next: usize,
    pub reward: f64,
    /// Index into [`LabeledTransitionSet::latents`].
    pub latent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTransitionSet {
    pub transitions: Vec<LabeledTransition>,
    pub latents: Vec<Vec<f64>>,
    pub gamma: f64,
}

/// Labels every transition with the model's reward. Each trajectory draws
/// one latent with `draw_latent`; `mode` picks whether `s_t` or `s_{t+1}`
/// is scored.
pub fn relabel_dataset(
    grid: &Gridworld,
    trajectories: &[Trajectory],
    model: &RewardModel,
    mode: RelabelMode,
    gamma: f64,
    mut draw_latent: impl FnMut(usize) -> Vec<f64>,
) -> Result<LabeledTransitionSet> {
    let mut transitions = Vec::new();
    let mut latents = Vec::with_capacity(trajectories.len());
    for (i, traj) in trajectories.iter().enumerate() {
        let z = draw_latent(i);
        let states: Vec<StateFeatures> = traj
            .iter()
            .map(|t| grid.features(if mode == RelabelMode::State { t.cell } else { t.next }))
            .collect();
        let rewards = model.rewards(&states, latent_arg(model, &z))?;
        for (t, r) in traj.iter().zip(rewards) {
            transitions.push(LabeledTransition {
                cell: t.cell,
                action: t.action,
                next: t.next,
                reward: r,
                latent: i,
            });
        }
        latents.push(z);
    }
    Ok(LabeledTransitionSet {
        transitions,
        latents,
        gamma,
    })
}

/// Labels the whole offline dataset once per bank latent, so every latent
/// sees the same state coverage. Transition copies for latent `b` carry
/// `latent == b`.
pub fn relabel_with_bank(
    grid: &Gridworld,
    trajectories: &[Trajectory],
    model: &RewardModel,
    mode: RelabelMode,
    gamma: f64,
    bank: &[Vec<f64>],
) -> Result<LabeledTransitionSet> {
    let open: Vec<usize> = grid.open_cells().collect();
    let states: Vec<StateFeatures> = open.iter().map(|&c| grid.features(c)).collect();
    let mut cell_reward = vec![0.0; grid.num_cells()];
    let n: usize = trajectories.iter().map(|t| t.len()).sum();
    let mut transitions = Vec::with_capacity(n * bank.len());
    for (b, z) in bank.iter().enumerate() {
        let rewards = model.rewards(&states, latent_arg(model, z))?;
        for (&c, r) in open.iter().zip(rewards) {
            cell_reward[c] = r;
        }
        for t in trajectories.iter().flatten() {
            let c = if mode == RelabelMode::State { t.cell } else { t.next };
            transitions.push(LabeledTransition {
                cell: t.cell,
                action: t.action,
                next: t.next,
                reward: cell_reward[c],
                latent: b,
            });
        }
    }
    Ok(LabeledTransitionSet {
        transitions,
        latents: bank.to_vec(),
        gamma,
    })
}

/// Prior draws for latent-conditioned models; one empty latent otherwise.
pub fn latent_bank(model: &RewardModel, size: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    if model.kind() == ModelKind::Vpl {
        let prior = model.prior();
        (0..size.max(1)).map(|_| sample_latent(&prior, rng)).collect()
    } else {
        vec![Vec::new()]
    }
}

fn latent_arg<'a>(model: &RewardModel, z: &'a [f64]) -> Option<&'a [f64]> {
    if model.kind() == ModelKind::Vpl {
        Some(z)
    } else {
        None
    }
}

/// Mean preference probability of `s` against every comparator.
pub fn spo_reward(model: &RewardModel, s: &[f64], z: &[f64], comps: &[StateFeatures]) -> Result<f64> {
    Ok(spo_rewards(model, std::slice::from_ref(&s.to_vec()), z, comps)?[0])
}

/// [`spo_reward`] for many states under one latent.
pub fn spo_rewards(model: &RewardModel, states: &[StateFeatures], z: &[f64], comps: &[StateFeatures]) -> Result<Vec<f64>> {
    if comps.is_empty() {
        return Err(Error::contract("spo_reward needs a nonempty comparison set"));
    }
    let mut all: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
    all.extend(comps.iter().map(|s| s.as_slice()));
    let heads = model.heads(&all, latent_arg(model, z))?;
    let n = states.len();
    (0..n)
        .map(|i| {
            let mut total = 0.0;
            for j in 0..comps.len() {
                total += heads.prefer(i, n + j)?;
            }
            Ok(total / comps.len() as f64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingVariant {
    None,
    BatchNorm,
    MaxNorm,
    Spo,
}

impl ScalingVariant {
    pub const ALL: [ScalingVariant; 4] = [
        ScalingVariant::None,
        ScalingVariant::BatchNorm,
        ScalingVariant::MaxNorm,
        ScalingVariant::Spo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalingVariant::None => "none",
            ScalingVariant::BatchNorm => "batch_norm",
            ScalingVariant::MaxNorm => "max_norm",
            ScalingVariant::Spo => "spo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scaling variant {s:?}")))
    }
}

const SCALE_EPS: f64 = 1e-8;

fn guard(x: f64) -> f64 {
    if x.abs() < SCALE_EPS {
        if x < 0.0 {
            -SCALE_EPS
        } else {
            SCALE_EPS
        }
    } else {
        x
    }
}

/// What the SPO variant needs to recompute labels.
pub struct SpoInputs<'a> {
    pub grid: &'a Gridworld,
    pub model: &'a RewardModel,
    pub comps: &'a [StateFeatures],
    pub mode: RelabelMode,
}

/// Rescales transition labels.
///
/// `batch_norm` divides each latent's labels by their mean, `max_norm`
/// divides everything by the global maximum (its magnitude when negative),
/// and `spo` replaces each label with the SPO reward of the scored state.
pub fn scale_rewards(
    labels: &LabeledTransitionSet,
    variant: ScalingVariant,
    spo: Option<&SpoInputs>,
) -> Result<LabeledTransitionSet> {
    if labels.transitions.is_empty() {
        return Err(Error::contract("scale_rewards on an empty label set"));
    }
    let mut out = labels.clone();
    match variant {
        ScalingVariant::None => {}
        ScalingVariant::BatchNorm => {
            let nl = labels.latents.len();
            let (mut sum, mut count) = (vec![0.0; nl], vec![0usize; nl]);
            for t in &labels.transitions {
                sum[t.latent] += t.reward;
                count[t.latent] += 1;
            }
            for t in &mut out.transitions {
                t.reward /= guard(sum[t.latent] / count[t.latent] as f64);
            }
        }
        ScalingVariant::MaxNorm => {
            let max = labels.transitions.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max);
            let d = guard(max).abs();
            for t in &mut out.transitions {
                t.reward /= d;
            }
        }
        ScalingVariant::Spo => {
            let inputs = spo.ok_or_else(|| Error::contract("spo scaling needs a model and comparison set"))?;
            let cells: Vec<usize> = inputs.grid.open_cells().collect();
            let feats: Vec<StateFeatures> = cells.iter().map(|&c| inputs.grid.features(c)).collect();
            let mut table = vec![0.0; inputs.grid.num_cells()];
            for (li, z) in labels.latents.iter().enumerate() {
                if !out.transitions.iter().any(|t| t.latent == li) {
                    continue;
                }
                let spo = spo_rewards(inputs.model, &feats, z, inputs.comps)?;
                for (&c, v) in cells.iter().zip(spo) {
                    table[c] = v;
                }
                for t in out.transitions.iter_mut().filter(|t| t.latent == li) {
                    t.reward = table[if inputs.mode == RelabelMode::State { t.cell } else { t.next }];
                }
            }
        }
    }
    Ok(out)
}

/// One Q-table per bank latent; deployment plans with the entry closest
/// to the inferred latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZBankPolicy {
    pub bank: Vec<Vec<f64>>,
    pub tables: Vec<QTable>,
}

impl ZBankPolicy {
    /// Index of the bank entry nearest to `z` (Euclidean, lowest index on
    /// ties).
    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, b) in self.bank.iter().enumerate() {
            let d: f64 = b.iter().zip(z).map(|(x, y)| (x - y) * (x - y)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    pub fn act(&self, cell: usize, z: &[f64]) -> usize {
        self.tables[self.nearest(z)].greedy(cell)
    }
}

/// Per-cell reward tables, one per latent, from labeled transitions. Cells
/// never scored for a latent get that latent's lowest label.
pub fn reward_tables(grid: &Gridworld, labels: &LabeledTransitionSet, mode: RelabelMode) -> Vec<Vec<f64>> {
    let n = grid.num_cells();
    let mut tables = vec![vec![f64::NAN; n]; labels.latents.len()];
    for t in &labels.transitions {
        let c = if mode == RelabelMode::State { t.cell } else { t.next };
        tables[t.latent][c] = t.reward;
    }
    for table in &mut tables {
        let min = table.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
        let fill = if min.is_finite() { min } else { 0.0 };
        for v in table.iter_mut().filter(|v| v.is_nan()) {
            *v = fill;
        }
    }
    tables
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySettings {
    pub zbank: usize,
    pub scaling: ScalingVariant,
    pub comparison_size: usize,
    pub gamma: f64,
    pub tol: f64,
    pub mode: RelabelMode,
    /// Offline random-walk trajectories, shared by every bank latent.
    pub walks: usize,
    pub walk_len: usize,
}

impl Default for PolicySettings {
    fn default() -> Self {
        PolicySettings {
            zbank: 32,
            scaling: ScalingVariant::Spo,
            comparison_size: 1000,
            gamma: 0.99,
            tol: 1e-8,
            mode: RelabelMode::NextState,
            walks: 200,
            walk_len: 100,
        }
    }
}

/// Offline pipeline: random walks, relabeling with bank latents, reward
/// scaling and value iteration per latent.
pub fn train_policy(
    grid: &Gridworld,
    model: &RewardModel,
    settings: &PolicySettings,
    rng: &SeededRng,
) -> Result<ZBankPolicy> {
    let bank = latent_bank(model, settings.zbank, &mut rng.fork(0));
    let trajectories = random_walks(grid, settings.walks.max(1), settings.walk_len.max(1), &mut rng.fork(1));
    let labels = relabel_with_bank(grid, &trajectories, model, settings.mode, settings.gamma, &bank)?;
    let mut comp_rng = rng.fork(2);
    let visited: Vec<usize> = trajectories.iter().flatten().map(|t| t.next).collect();
    let comps: Vec<StateFeatures> = (0..settings.comparison_size.max(1))
        .map(|_| grid.features(visited[comp_rng.below(visited.len())]))
        .collect();
    let spo = SpoInputs {
        grid,
        model,
        comps: &comps,
        mode: settings.mode,
    };
    let scaled = scale_rewards(&labels, settings.scaling, Some(&spo))?;
    let tables = reward_tables(grid, &scaled, settings.mode)
        .into_iter()
        .map(|r| value_iteration(grid, &r, settings.gamma, settings.tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZBankPolicy { bank, tables })
}

/// Policy acting on the true reward of each user.
pub fn oracle_policy(world: &AnnotatorWorld, gamma: f64, tol: f64) -> Result<Vec<QTable>> {
    let grid = world.grid().ok_or_else(|| Error::contract("oracle policy needs a grid world"))?;
    world
        .annotators()
        .iter()
        .map(|ann| {
            let r = (0..grid.num_cells())
                .map(|c| if grid.is_wall(c) { Ok(0.0) } else { ann.true_reward(&grid.features(c)) })
                .collect::<Result<Vec<_>>>()?;
            value_iteration(grid, &r, gamma, tol)
        })
        .collect()
}

/// Goal cell of the annotator, taken as its highest-reward cell.
pub fn user_goal(world: &AnnotatorWorld, user: usize) -> Result<usize> {
    let grid = world.grid().ok_or_else(|| Error::contract("user_goal needs a grid world"))?;
    let mut best = (grid.goals()[0], f64::NEG_INFINITY);
    for &g in grid.goals() {
        let r = world.true_reward(user, &grid.features(g))?;
        if r > best.1 {
            best = (g, r);
        }
    }
    Ok(best.0)
}

/// Labeled context of `n` fresh comparisons from one user.
pub fn sample_test_context(
    world: &AnnotatorWorld,
    user: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Vec<PreferenceTriple>> {
    let ann = world.annotator(user)?;
    (0..n)
        .map(|_| {
            let (a, b) = world.sample_context_pair(rng)?;
            let y = annotate(ann, &a, &b, rng)?;
            Ok(PreferenceTriple::new(a, b, y))
        })
        .collect()
}

/// Posterior mean latent for deployment; the prior mean for an empty
/// context.
pub fn infer_latent(model: &RewardModel, ctx: &[PreferenceTriple]) -> Result<Vec<f64>> {
    let post: LatentPosterior = model.posterior_or_prior(ctx)?;
    Ok(post.mean)
}

/// Greedy episode of `policy` for a user whose latent was inferred from
/// `ctx`. Success means the episode ends on that user's goal.
pub fn deploy_policy(
    policy: &ZBankPolicy,
    world: &AnnotatorWorld,
    user: usize,
    ctx: &[PreferenceTriple],
    model: &RewardModel,
    start: usize,
) -> Result<bool> {
    let grid = world.grid().ok_or_else(|| Error::contract("deploy_policy needs a grid world"))?;
    let z = infer_latent(model, ctx)?;
    let out = rollout(grid, start, MAX_EPISODE_STEPS, |c| policy.act(c, &z));
    Ok(out.reached_goal && out.terminal == user_goal(world, user)?)
}

/// Uniform non-goal open start cell.
pub fn sample_start(grid: &Gridworld, rng: &mut SeededRng) -> usize {
    let starts: Vec<usize> = grid.open_cells().filter(|&c| !grid.is_goal(c)).collect();
    starts[rng.below(starts.len())]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub per_user: Vec<f64>,
    pub mean: f64,
    pub episodes: usize,
}

impl SuccessReport {
    pub fn from_per_user(per_user: Vec<f64>, episodes: usize) -> Self {
        let mean = per_user.iter().sum::<f64>() / per_user.len().max(1) as f64;
        SuccessReport {
            per_user,
            mean,
            episodes,
        }
    }

    /// CSV rows `user_id,success_rate,episodes,seed`.
    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = String::from("user_id,success_rate,episodes,seed\n");
        for (u, r) in self.per_user.iter().enumerate() {
            out.push_str(&format!("{u},{r},{},{seed}\n", self.episodes));
        }
        out
    }
}

/// Runs `episode(user, rng)` `n_episodes` times per user. Episode `e` of
/// user `u` uses the stream `rng.fork(u * n_episodes + e)`.
pub fn eval_per_user(
    n_users: usize,
    n_episodes: usize,
    rng: &SeededRng,
    mut episode: impl FnMut(usize, &mut SeededRng) -> Result<bool>,
) -> Result<SuccessReport> {
    if n_episodes == 0 {
        return Err(Error::config("need at least one evaluation episode"));
    }
    let mut per_user = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut wins = 0;
        for e in 0..n_episodes {
            let mut g = rng.fork((u * n_episodes + e) as u64);
            wins += usize::from(episode(u, &mut g)?);
        }
        per_user.push(wins as f64 / n_episodes as f64);
    }
    Ok(SuccessReport::from_per_user(per_user, n_episodes))
}

/// Success of `policy` with fresh `ctx_n`-pair test contexts per episode.
pub fn eval_success(
    policy: &ZBankPolicy,
    world: &AnnotatorWorld,
    model: &RewardModel,
    ctx_n: usize,
    n_episodes: usize,
    rng: &SeededRng,
) -> Result<SuccessReport> {
    let grid = world.grid().ok_or_else(|| Error::contract("eval_success needs a grid world"))?;
    eval_per_user(world.num_users(), n_episodes, rng, |u, g| {
        let ctx = sample_test_context(world, u, ctx_n, g)?;
        let start = sample_start(grid, g);
        deploy_policy(policy, world, u, &ctx, model, start)
    })
}

/// Success of the per-user oracle planners.
pub fn eval_oracle(world: &AnnotatorWorld, n_episodes: usize, rng: &SeededRng) -> Result<SuccessReport> {
    let grid = world.grid().ok_or_else(|| Error::contract("eval_oracle needs a grid world"))?;
    let tables = oracle_policy(world, 0.99, 1e-8)?;
    eval_per_user(world.num_users(), n_episodes, rng, |u, g| {
        let start = sample_start(grid, g);
        let out = rollout(grid, start, MAX_EPISODE_STEPS, |c| tables[u].greedy(c));
        Ok(out.reached_goal && out.terminal == user_goal(world, u)?)
    })
}

/// Success of a uniformly random walker.
pub fn eval_random(world: &AnnotatorWorld, n_episodes: usize, rng: &SeededRng) -> Result<SuccessReport> {
    let grid = world.grid().ok_or_else(|| Error::contract("eval_random needs a grid world"))?;
    eval_per_user(world.num_users(), n_episodes, rng, |u, g| {
        let start = sample_start(grid, g);
        let mut walker = g.fork(1);
        let out = rollout(grid, start, MAX_EPISODE_STEPS, |_| walker.below(ACTIONS.len()));
        Ok(out.reached_goal && out.terminal == user_goal(world, u)?)
    })
}

/// Greedy one-step choice: among `options`, the state with the highest
/// reward under `z` (lowest index on ties).
pub fn greedy_choice(model: &RewardModel, options: &[StateFeatures], z: &[f64]) -> Result<usize> {
    let r = model.rewards(options, latent_arg(model, z))?;
    Ok(crate::worlds::argmax(&r))
}

/// Option sets for one-step decisions: one set of every location for the
/// rearrangement world, one set of locations per object for the tidy world,
/// and the whole state list otherwise.
pub fn choice_sets(world: &AnnotatorWorld) -> Vec<Vec<StateFeatures>> {
    let states = world.states();
    match world.kind() {
        WorldKind::TidySort => states.chunks(TIDY_LOCATIONS).map(|c| c.to_vec()).collect(),
        _ => vec![states],
    }
}

/// Top-1 success in one-step worlds. Each episode draws a choice set; the
/// agent picks the option with the highest inferred reward and succeeds iff
/// it is also the user's best option (lowest index on ties for both).
pub fn eval_one_step(
    world: &AnnotatorWorld,
    model: &RewardModel,
    ctx_n: usize,
    n_episodes: usize,
    rng: &SeededRng,
) -> Result<SuccessReport> {
    let sets = choice_sets(world);
    let n_states = world.states().len();
    eval_per_user(world.num_users(), n_episodes, rng, |u, g| {
        let options = &sets[g.below(sets.len())];
        let ctx = if options.len() < n_states {
            sample_test_context_avoiding(world, u, ctx_n, options, g)?
        } else {
            sample_test_context(world, u, ctx_n, g)?
        };
        let z = infer_latent(model, &ctx)?;
        one_step_success(world, model, u, options, &z)
    })
}

/// Like [`sample_test_context`], but no query compares two states of
/// `avoid`, just as a training context never holds its own target pair.
pub fn sample_test_context_avoiding(
    world: &AnnotatorWorld,
    user: usize,
    n: usize,
    avoid: &[StateFeatures],
    rng: &mut SeededRng,
) -> Result<Vec<PreferenceTriple>> {
    let ann = world.annotator(user)?;
    let mut ctx = Vec::with_capacity(n);
    let mut tries = 0;
    while ctx.len() < n {
        tries += 1;
        if tries > 1000 * n.max(1) {
            return Err(Error::config("no context pair avoids the decision options"));
        }
        let (a, b) = world.sample_context_pair(rng)?;
        if avoid.contains(&a) && avoid.contains(&b) {
            continue;
        }
        let y = annotate(ann, &a, &b, rng)?;
        ctx.push(PreferenceTriple::new(a, b, y));
    }
    Ok(ctx)
}

/// Whether the greedy choice under `z` is the user's best option.
pub fn one_step_success(
    world: &AnnotatorWorld,
    model: &RewardModel,
    user: usize,
    options: &[StateFeatures],
    z: &[f64],
) -> Result<bool> {
    let truth = options.iter().map(|s| world.true_reward(user, s)).collect::<Result<Vec<_>>>()?;
    Ok(greedy_choice(model, options, z)? == crate::worlds::argmax(&truth))
}
