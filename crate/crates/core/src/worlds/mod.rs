//! Synthetic worlds with known per-user rewards and simulated annotators.

mod dataset;
pub mod gridworld;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, SeededRng};
use crate::error::{Error, Result};
use crate::types::StateFeatures;

pub use dataset::{build_dataset, inject_label_noise, DatasetMeta, NoiseScope, PreferenceDataset};
pub use gridworld::{maze_preference_score, Gridworld, MAZE10_GOALS, MAZE2_GOALS};

/// Tries before a pair sampler gives up.
const MAX_SAMPLER_TRIES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelingMode {
    Deterministic,
    StochasticBtl,
}

impl LabelingMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(LabelingMode::Deterministic),
            "stochastic_btl" => Ok(LabelingMode::StochasticBtl),
            other => Err(Error::config(format!("unknown labeling mode {other:?}"))),
        }
    }
}

/// A simulated user: a ground-truth reward over state features and a rule
/// for turning reward gaps into labels.
#[derive(Clone)]
pub struct Annotator {
    pub user_id: usize,
    pub labeling_mode: LabelingMode,
    reward: Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>,
}

impl fmt::Debug for Annotator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Annotator")
            .field("user_id", &self.user_id)
            .field("labeling_mode", &self.labeling_mode)
            .finish_non_exhaustive()
    }
}

impl Annotator {
    pub fn new(
        user_id: usize,
        labeling_mode: LabelingMode,
        reward: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    ) -> Self {
        Annotator {
            user_id,
            labeling_mode,
            reward: Arc::new(reward),
        }
    }

    pub fn true_reward(&self, s: &[f64]) -> Result<f64> {
        (self.reward)(s)
    }

    pub fn with_mode(&self, labeling_mode: LabelingMode) -> Self {
        Annotator {
            labeling_mode,
            ..self.clone()
        }
    }
}

/// Label for `(s_a, s_b)`; `true` means `s_a` is preferred.
pub fn annotate(ann: &Annotator, sa: &[f64], sb: &[f64], rng: &mut SeededRng) -> Result<bool> {
    let (ra, rb) = (ann.true_reward(sa)?, ann.true_reward(sb)?);
    Ok(match ann.labeling_mode {
        LabelingMode::Deterministic => {
            if ra == rb {
                rng.bernoulli(0.5)
            } else {
                ra > rb
            }
        }
        LabelingMode::StochasticBtl => rng.bernoulli(sigmoid(ra - rb)),
    })
}

/// `r_i(x) = log N(x; mean, stddev)`.
pub fn didactic_true_reward(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    -0.5 * z * z - (stddev * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldKind {
    DidacticGaussians,
    Maze,
    Rearrange,
    PetsLike,
    TidySort,
}

impl WorldKind {
    pub fn name(self) -> &'static str {
        match self {
            WorldKind::DidacticGaussians => "didactic_gaussians",
            WorldKind::Maze => "maze",
            WorldKind::Rearrange => "rearrange",
            WorldKind::PetsLike => "pets_like",
            WorldKind::TidySort => "tidy_sort",
        }
    }
}

/// Construction parameters, tagged by world kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldParams {
    DidacticGaussians {
        means: Vec<f64>,
        stddevs: Vec<f64>,
    },
    Maze {
        goals: Vec<(usize, usize)>,
        /// Goal indices that get an annotator; all goals when absent.
        #[serde(default)]
        users: Option<Vec<usize>>,
    },
    Rearrange {
        n_users: usize,
    },
    PetsLike {
        group_a_fraction: f64,
        /// Draw context pairs from the divergent category pair only.
        informative_context: bool,
        instances_per_category: usize,
        noise_scale: f64,
    },
    TidySort,
}

impl WorldParams {
    pub fn kind(&self) -> WorldKind {
        match self {
            WorldParams::DidacticGaussians { .. } => WorldKind::DidacticGaussians,
            WorldParams::Maze { .. } => WorldKind::Maze,
            WorldParams::Rearrange { .. } => WorldKind::Rearrange,
            WorldParams::PetsLike { .. } => WorldKind::PetsLike,
            WorldParams::TidySort => WorldKind::TidySort,
        }
    }

    /// Named configurations used by the command line and the suites.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "didactic" | "didactic_gaussians" => WorldParams::DidacticGaussians {
                means: vec![0.2, 0.4, 0.6, 0.8],
                stddevs: vec![0.05; 4],
            },
            "maze2" | "maze" => WorldParams::Maze {
                goals: MAZE2_GOALS.to_vec(),
                users: None,
            },
            "maze2_single" => WorldParams::Maze {
                goals: MAZE2_GOALS.to_vec(),
                users: Some(vec![0]),
            },
            "maze10" => WorldParams::Maze {
                goals: MAZE10_GOALS.to_vec(),
                users: None,
            },
            "rearrange" => WorldParams::Rearrange { n_users: 5 },
            "rearrange100" => WorldParams::Rearrange { n_users: 100 },
            "pets" | "pets_like" => WorldParams::PetsLike {
                group_a_fraction: 0.5,
                informative_context: true,
                instances_per_category: 20,
                noise_scale: 0.2,
            },
            "tidy" | "tidy_sort" => WorldParams::TidySort,
            other => return Err(Error::config(format!("unknown world {other:?}"))),
        })
    }
}

/// Pets-like category rewards for the two groups. Both rank category 0 best
/// and category 1 worst; they disagree on categories 2 and 3.
pub const PETS_REWARDS: [[f64; 4]; 2] = [[3.0, 0.0, 2.0, 1.0], [3.0, 0.0, 1.0, 2.0]];
const PETS_NOISE_DIMS: usize = 16;

/// Tidy objects as `(name, function bit, material bit)`. Function 0 is
/// tableware, 1 is cookware; material 0 is metal, 1 is plastic.
pub const TIDY_OBJECTS: [(&str, usize, usize); 5] = [
    ("spoon", 0, 0),
    ("fork", 0, 0),
    ("plate", 0, 1),
    ("pan", 1, 0),
    ("spatula", 1, 1),
];
pub const TIDY_LOCATIONS: usize = 2;
pub const REARRANGE_LOCATIONS: usize = 5;

#[derive(Clone, Debug)]
enum Space {
    Interval,
    Grid(Arc<Gridworld>),
    OneHot(usize),
    Pets {
        instances: Arc<Vec<Vec<Vec<f64>>>>,
        informative_context: bool,
    },
    Tidy,
}

/// A state space, an annotator roster and a pair sampler.
#[derive(Clone, Debug)]
pub struct AnnotatorWorld {
    params: WorldParams,
    feature_dim: usize,
    annotators: Vec<Annotator>,
    user_weights: Vec<f64>,
    space: Space,
}

pub fn make_world(params: &WorldParams, rng: &mut SeededRng) -> Result<AnnotatorWorld> {
    let det = LabelingMode::Deterministic;
    let (feature_dim, annotators, user_weights, space) = match params {
        WorldParams::DidacticGaussians { means, stddevs } => {
            if means.is_empty() || means.len() != stddevs.len() || stddevs.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::config("didactic world needs matching means and positive stddevs"));
            }
            let anns = means
                .iter()
                .zip(stddevs)
                .enumerate()
                .map(|(i, (&m, &s))| {
                    Annotator::new(i, LabelingMode::StochasticBtl, move |f: &[f64]| {
                        expect_dim(f, 1)?;
                        Ok(didactic_true_reward(f[0], m, s))
                    })
                })
                .collect();
            (1, anns, vec![1.0; means.len()], Space::Interval)
        }
        WorldParams::Maze { goals, users } => {
            let grid = Arc::new(Gridworld::maze(goals)?);
            let users = users.clone().unwrap_or_else(|| (0..goals.len()).collect());
            if users.is_empty() || users.iter().any(|&g| g >= goals.len()) {
                return Err(Error::config("maze users must name existing goals"));
            }
            let anns = users
                .iter()
                .enumerate()
                .map(|(uid, &gi)| {
                    let grid = Arc::clone(&grid);
                    Annotator::new(uid, det, move |f: &[f64]| {
                        let cell = grid.cell_from_features(f)?;
                        Ok(-(grid.goal_distance(gi, cell)? as f64))
                    })
                })
                .collect();
            (2, anns, vec![1.0; users.len()], Space::Grid(grid))
        }
        WorldParams::Rearrange { n_users } => {
            let mut perms = permutations(REARRANGE_LOCATIONS);
            if *n_users == 0 || *n_users > perms.len() {
                return Err(Error::config(format!("rearrange supports 1..={} users", perms.len())));
            }
            rng.shuffle(&mut perms);
            let anns = perms
                .into_iter()
                .take(*n_users)
                .enumerate()
                .map(|(uid, order)| {
                    // order[rank] = location
                    let mut reward = vec![0.0; REARRANGE_LOCATIONS];
                    for (rank, &loc) in order.iter().enumerate() {
                        reward[loc] = (REARRANGE_LOCATIONS - rank) as f64;
                    }
                    Annotator::new(uid, det, move |f: &[f64]| {
                        expect_dim(f, REARRANGE_LOCATIONS)?;
                        Ok(reward[argmax(f)])
                    })
                })
                .collect();
            (REARRANGE_LOCATIONS, anns, vec![1.0; *n_users], Space::OneHot(REARRANGE_LOCATIONS))
        }
        WorldParams::PetsLike {
            group_a_fraction,
            informative_context,
            instances_per_category,
            noise_scale,
        } => {
            if !(0.0..=1.0).contains(group_a_fraction) || *instances_per_category == 0 {
                return Err(Error::config("pets world needs a group fraction in [0, 1] and instances"));
            }
            let instances = (0..4)
                .map(|c| {
                    (0..*instances_per_category)
                        .map(|_| {
                            let mut f = vec![0.0; 4];
                            f[c] = 1.0;
                            f.extend(rng.normals(PETS_NOISE_DIMS).into_iter().map(|v| v * noise_scale));
                            f
                        })
                        .collect()
                })
                .collect();
            let anns = PETS_REWARDS
                .iter()
                .enumerate()
                .map(|(uid, table)| {
                    let table = *table;
                    Annotator::new(uid, det, move |f: &[f64]| {
                        expect_dim(f, 4 + PETS_NOISE_DIMS)?;
                        Ok(table[argmax(&f[..4])])
                    })
                })
                .collect();
            let space = Space::Pets {
                instances: Arc::new(instances),
                informative_context: *informative_context,
            };
            (4 + PETS_NOISE_DIMS, anns, vec![*group_a_fraction, 1.0 - group_a_fraction], space)
        }
        WorldParams::TidySort => {
            let anns = (0..2)
                .map(|uid| {
                    Annotator::new(uid, det, move |f: &[f64]| {
                        let (obj, loc) = tidy_decode(f)?;
                        let (_, function, material) = TIDY_OBJECTS[obj];
                        let wanted = if uid == 0 { function } else { material };
                        Ok(if loc == wanted { 1.0 } else { 0.0 })
                    })
                })
                .collect();
            (TIDY_OBJECTS.len() + 2 + TIDY_LOCATIONS, anns, vec![1.0; 2], Space::Tidy)
        }
    };
    Ok(AnnotatorWorld {
        params: params.clone(),
        feature_dim,
        annotators,
        user_weights,
        space,
    })
}

fn expect_dim(f: &[f64], d: usize) -> Result<()> {
    if f.len() != d {
        return Err(Error::shape("state features", &[d], &[f.len()]));
    }
    Ok(())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Features of placing tidy object `obj` at location `loc`.
pub fn tidy_features(obj: usize, loc: usize) -> Vec<f64> {
    let (_, function, material) = TIDY_OBJECTS[obj];
    let mut f = one_hot(TIDY_OBJECTS.len(), obj);
    f.push(function as f64);
    f.push(material as f64);
    f.extend(one_hot(TIDY_LOCATIONS, loc));
    f
}

fn tidy_decode(f: &[f64]) -> Result<(usize, usize)> {
    expect_dim(f, TIDY_OBJECTS.len() + 2 + TIDY_LOCATIONS)?;
    let obj = argmax(&f[..TIDY_OBJECTS.len()]);
    let loc = argmax(&f[TIDY_OBJECTS.len() + 2..]);
    Ok((obj, loc))
}

impl AnnotatorWorld {
    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn kind(&self) -> WorldKind {
        self.params.kind()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn annotators(&self) -> &[Annotator] {
        &self.annotators
    }

    pub fn num_users(&self) -> usize {
        self.annotators.len()
    }

    pub fn annotator(&self, user_id: usize) -> Result<&Annotator> {
        self.annotators
            .get(user_id)
            .ok_or_else(|| Error::contract(format!("no annotator {user_id}")))
    }

    pub fn user_weights(&self) -> &[f64] {
        &self.user_weights
    }

    pub fn grid(&self) -> Option<&Gridworld> {
        match &self.space {
            Space::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn true_reward(&self, user_id: usize, s: &[f64]) -> Result<f64> {
        self.annotator(user_id)?.true_reward(s)
    }

    /// Draws a user according to the roster weights.
    pub fn sample_user(&self, rng: &mut SeededRng) -> usize {
        let total: f64 = self.user_weights.iter().sum();
        let mut u = rng.uniform() * total;
        for (i, w) in self.user_weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        self.user_weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Uniform draw from the state support.
    fn sample_state(&self, rng: &mut SeededRng) -> StateFeatures {
        match &self.space {
            Space::Interval => vec![rng.uniform()],
            Space::Grid(g) => {
                let open: Vec<usize> = g.open_cells().collect();
                g.features(open[rng.below(open.len())])
            }
            Space::OneHot(n) => one_hot(*n, rng.below(*n)),
            Space::Pets { instances, .. } => {
                let c = rng.below(4);
                instances[c][rng.below(instances[c].len())].clone()
            }
            Space::Tidy => tidy_features(rng.below(TIDY_OBJECTS.len()), rng.below(TIDY_LOCATIONS)),
        }
    }

    fn pets_pair(instances: &[Vec<Vec<f64>>], ca: usize, cb: usize, rng: &mut SeededRng) -> (StateFeatures, StateFeatures) {
        let a = instances[ca][rng.below(instances[ca].len())].clone();
        let b = instances[cb][rng.below(instances[cb].len())].clone();
        (a, b)
    }

    /// An unlabeled comparison. Maze pairs on which every annotator ties are
    /// redrawn; the other worlds compare distinct states.
    pub fn sample_pair(&self, rng: &mut SeededRng) -> Result<(StateFeatures, StateFeatures)> {
        for _ in 0..MAX_SAMPLER_TRIES {
            let pair = match &self.space {
                Space::Pets { instances, .. } => {
                    let ca = rng.below(4);
                    let cb = (ca + 1 + rng.below(3)) % 4;
                    Self::pets_pair(instances, ca, cb, rng)
                }
                Space::Tidy => {
                    let obj = rng.below(TIDY_OBJECTS.len());
                    let loc = rng.below(TIDY_LOCATIONS);
                    (tidy_features(obj, loc), tidy_features(obj, 1 - loc))
                }
                _ => (self.sample_state(rng), self.sample_state(rng)),
            };
            if pair.0 != pair.1 && !self.all_tie(&pair.0, &pair.1)? {
                return Ok(pair);
            }
        }
        Err(Error::config("world state sampler exhausted"))
    }

    /// A pair for a user's context set. Pets worlds with informative context
    /// compare the two middle categories; other worlds use [`Self::sample_pair`].
    pub fn sample_context_pair(&self, rng: &mut SeededRng) -> Result<(StateFeatures, StateFeatures)> {
        match &self.space {
            Space::Pets {
                instances,
                informative_context: true,
            } => {
                let (ca, cb) = if rng.bernoulli(0.5) { (2, 3) } else { (3, 2) };
                Ok(Self::pets_pair(instances, ca, cb, rng))
            }
            _ => self.sample_pair(rng),
        }
    }

    fn all_tie(&self, a: &[f64], b: &[f64]) -> Result<bool> {
        if !matches!(self.space, Space::Grid(_)) {
            return Ok(false);
        }
        for ann in &self.annotators {
            if ann.true_reward(a)? != ann.true_reward(b)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Every state for discrete and grid worlds; a 201-point grid on
    /// `[0, 1]` for the didactic world.
    pub fn states(&self) -> Vec<StateFeatures> {
        match &self.space {
            Space::Interval => (0..=200).map(|i| vec![i as f64 / 200.0]).collect(),
            Space::Grid(g) => g.open_cells().map(|c| g.features(c)).collect(),
            Space::OneHot(n) => (0..*n).map(|i| one_hot(*n, i)).collect(),
            Space::Pets { instances, .. } => instances.iter().flatten().cloned().collect(),
            Space::Tidy => (0..TIDY_OBJECTS.len())
                .flat_map(|o| (0..TIDY_LOCATIONS).map(move |l| tidy_features(o, l)))
                .collect(),
        }
    }

    /// True when at least one annotator strictly prefers `a` and another
    /// strictly prefers `b`.
    pub fn is_divergent(&self, a: &[f64], b: &[f64]) -> Result<bool> {
        let (mut prefers_a, mut prefers_b) = (false, false);
        for ann in &self.annotators {
            let d = ann.true_reward(a)? - ann.true_reward(b)?;
            prefers_a |= d > 0.0;
            prefers_b |= d < 0.0;
        }
        Ok(prefers_a && prefers_b)
    }
}

/// Keeps the pairs on which at least two annotators disagree.
pub fn filter_divergent(
    world: &AnnotatorWorld,
    pairs: &[(StateFeatures, StateFeatures)],
) -> Result<Vec<(StateFeatures, StateFeatures)>> {
    let mut out = Vec::new();
    for (a, b) in pairs {
        if world.is_divergent(a, b)? {
            out.push((a.clone(), b.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
