use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::worlds::gridworld::{Gridworld, ACTIONS};

pub const MAX_SWEEPS: usize = 100_000;

/// Action values for every cell of a grid, `q[cell * 4 + action]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<f64>,
    pub sweeps: usize,
}

impl QTable {
    pub fn values(&self, cell: usize) -> &[f64] {
        &self.q[cell * ACTIONS.len()..(cell + 1) * ACTIONS.len()]
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values(cell).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self, cell: usize) -> usize {
        greedy_action(self.values(cell))
    }
}

pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = a;
        }
    }
    best
}

/// Successor of `cell` under `a`, with absorbing cells mapping to
/// themselves.
pub fn successor(grid: &Gridworld, absorbing: &[bool], cell: usize, a: usize) -> usize {
    if absorbing[cell] {
        cell
    } else {
        grid.step(cell, a)
    }
}

/// Value iteration for `Q(s, a) = r(s') + gamma * max_a' Q(s', a')`.
///
/// `reward[cell]` is collected on entering `cell`; cells flagged in
/// `absorbing` keep the agent forever. Sweeps stop once the sup-norm change
/// times `gamma / (1 - gamma)` drops below `tol`, which bounds the distance
/// to the fixed point by `tol`. `init` seeds the table (zeros when `None`).
pub fn value_iteration_from(
    grid: &Gridworld,
    reward: &[f64],
    absorbing: &[bool],
    gamma: f64,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<QTable> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::config(format!("tol must be positive, got {tol}")));
    }
    let cells = grid.num_cells();
    if reward.len() != cells || absorbing.len() != cells {
        return Err(Error::shape("value_iteration", &[cells], &[reward.len(), absorbing.len()]));
    }
    if reward.iter().any(|r| !r.is_finite()) {
        return Err(Error::numerical("non-finite reward passed to value_iteration"));
    }
    let na = ACTIONS.len();
    let open: Vec<usize> = grid.open_cells().collect();
    let succ: Vec<[usize; 4]> = (0..cells)
        .map(|c| std::array::from_fn(|a| if grid.is_wall(c) { c } else { successor(grid, absorbing, c, a) }))
        .collect();
    let mut q = match init {
        Some(v) if v.len() == cells * na => v.to_vec(),
        Some(v) => return Err(Error::shape("value_iteration init", &[cells * na], &[v.len()])),
        None => vec![0.0; cells * na],
    };
    for c in (0..cells).filter(|&c| grid.is_wall(c)) {
        q[c * na..(c + 1) * na].fill(0.0);
    }
    let threshold = tol * (1.0 - gamma) / gamma;
    let mut v: Vec<f64> = (0..cells).map(|c| max4(&q[c * na..(c + 1) * na])).collect();
    for sweep in 1..=MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for &c in &open {
            for a in 0..na {
                let s2 = succ[c][a];
                let new = reward[s2] + gamma * v[s2];
                delta = delta.max((new - q[c * na + a]).abs());
                q[c * na + a] = new;
            }
        }
        for &c in &open {
            v[c] = max4(&q[c * na..(c + 1) * na]);
        }
        if !delta.is_finite() {
            return Err(Error::numerical("value iteration diverged"));
        }
        if delta < threshold {
            return Ok(QTable { q, sweeps: sweep });
        }
    }
    Err(Error::numerical(format!("value iteration did not converge in {MAX_SWEEPS} sweeps")))
}

fn max4(q: &[f64]) -> f64 {
    q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Value iteration from a zero table with the grid's goals absorbing.
pub fn value_iteration(grid: &Gridworld, reward: &[f64], gamma: f64, tol: f64) -> Result<QTable> {
    let absorbing = goal_mask(grid);
    value_iteration_from(grid, reward, &absorbing, gamma, tol, None)
}

pub fn goal_mask(grid: &Gridworld) -> Vec<bool> {
    (0..grid.num_cells()).map(|c| grid.is_goal(c)).collect()
}

/// Outcome of one greedy episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    pub terminal: usize,
    pub steps: usize,
    /// Whether the episode ended on a goal rather than at the step cap.
    pub reached_goal: bool,
}

/// Follows `act` from `start` until a goal is entered or `max_steps` moves
/// have been made.
pub fn rollout(grid: &Gridworld, start: usize, max_steps: usize, mut act: impl FnMut(usize) -> usize) -> Rollout {
    let mut cell = start;
    if grid.is_goal(cell) {
        return Rollout {
            terminal: cell,
            steps: 0,
            reached_goal: true,
        };
    }
    for step in 1..=max_steps {
        cell = grid.step(cell, act(cell));
        if grid.is_goal(cell) {
            return Rollout {
                terminal: cell,
                steps: step,
                reached_goal: true,
            };
        }
    }
    Rollout {
        terminal: cell,
        steps: max_steps,
        reached_goal: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_reward_gives_zero_q() {
        let g = Gridworld::open_grid(4, 4, &[(3, 3)]).unwrap();
        let q = value_iteration(&g, &vec![0.0; 16], 0.9, 1e-10).unwrap();
        assert!(q.q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn greedy_rollouts_take_shortest_paths() {
        let g = Gridworld::maze(&[(10, 10)]).unwrap();
        let goal = g.goals()[0];
        let mut r = vec![0.0; g.num_cells()];
        r[goal] = 1.0;
        let q = value_iteration(&g, &r, 0.99, 1e-8).unwrap();
        let dist = g.bfs(goal);
        for c in g.open_cells() {
            let out = rollout(&g, c, 200, |s| q.greedy(s));
            assert_eq!(out.terminal, goal);
            assert_eq!(out.steps, dist[c].unwrap());
        }
    }

    #[test]
    fn rejects_bad_gamma() {
        let g = Gridworld::open_grid(2, 2, &[(0, 0)]).unwrap();
        assert!(value_iteration(&g, &[0.0; 4], 1.0, 1e-8).is_err());
        assert!(value_iteration(&g, &[0.0; 4], 0.9, 0.0).is_err());
    }

    #[test]
    fn greedy_ties_pick_lowest_index() {
        assert_eq!(greedy_action(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(greedy_action(&[0.0; 4]), 0);
    }
}
