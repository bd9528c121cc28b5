use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Moves in action-index order: up, down, left, right.
pub const ACTIONS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// The 11x11 navigation maze. `#` is a wall.
pub const MAZE_11: [&str; 11] = [
    "...........",
    ".###.#.###.",
    ".#.......#.",
    ".#.##.##.#.",
    "...#...#...",
    ".#...#...#.",
    "...#...#...",
    ".#.##.##.#.",
    ".#.......#.",
    ".###.#.###.",
    "...........",
];

/// Goal cells `(row, col)` of the two-goal maze.
pub const MAZE2_GOALS: [(usize, usize); 2] = [(0, 0), (10, 10)];

/// Goal cells `(row, col)` of the ten-goal maze.
pub const MAZE10_GOALS: [(usize, usize); 10] = [
    (0, 0),
    (0, 10),
    (10, 0),
    (10, 10),
    (0, 5),
    (10, 5),
    (4, 0),
    (6, 10),
    (2, 4),
    (8, 6),
];

/// Deterministic 4-connected grid; moving into a wall or off the grid leaves
/// the agent in place.
#[derive(Clone, Debug, PartialEq)]
pub struct Gridworld {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    goals: Vec<usize>,
    /// `distances[g][cell]`: BFS steps from goal `g`, `None` for walls.
    distances: Vec<Vec<Option<usize>>>,
}

impl Gridworld {
    pub fn from_ascii(rows: &[&str], goals: &[(usize, usize)]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::config("grid rows must be nonempty and equally long"));
        }
        let walls = rows.iter().flat_map(|r| r.bytes().map(|b| b == b'#')).collect();
        let goals = goals.iter().map(|&(r, c)| r * width + c).collect();
        Self::new(width, height, walls, goals)
    }

    pub fn new(width: usize, height: usize, walls: Vec<bool>, goals: Vec<usize>) -> Result<Self> {
        if walls.len() != width * height {
            return Err(Error::config("wall mask does not match grid size"));
        }
        let mut grid = Gridworld {
            width,
            height,
            walls,
            goals,
            distances: Vec::new(),
        };
        for &g in &grid.goals {
            if g >= width * height || grid.walls[g] {
                return Err(Error::config(format!("goal cell {g} is a wall or off the grid")));
            }
        }
        grid.distances = grid.goals.iter().map(|&g| grid.bfs(g)).collect();
        for (gi, d) in grid.distances.iter().enumerate() {
            if grid.open_cells().any(|c| d[c].is_none()) {
                return Err(Error::config(format!("goal {gi} is not reachable from every open cell")));
            }
        }
        Ok(grid)
    }

    pub fn maze(goals: &[(usize, usize)]) -> Result<Self> {
        Self::from_ascii(&MAZE_11, goals)
    }

    pub fn open_grid(width: usize, height: usize, goals: &[(usize, usize)]) -> Result<Self> {
        let goals = goals.iter().map(|&(r, c)| r * width + c).collect();
        Self::new(width, height, vec![false; width * height], goals)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn goals(&self) -> &[usize] {
        &self.goals
    }

    pub fn is_wall(&self, cell: usize) -> bool {
        self.walls[cell]
    }

    pub fn is_goal(&self, cell: usize) -> bool {
        self.goals.contains(&cell)
    }

    pub fn open_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_cells()).filter(|&c| !self.walls[c])
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn cell(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Successor of `cell` under action `a`.
    pub fn step(&self, cell: usize, a: usize) -> usize {
        let (r, c) = self.coords(cell);
        let (dr, dc) = ACTIONS[a];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            return cell;
        }
        let next = self.cell(nr as usize, nc as usize);
        if self.walls[next] {
            cell
        } else {
            next
        }
    }

    /// BFS step counts from `source` to every cell.
    pub fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_cells()];
        if self.walls[source] {
            return dist;
        }
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(c) = queue.pop_front() {
            let d = dist[c].expect("visited");
            for a in 0..ACTIONS.len() {
                let n = self.step(c, a);
                if dist[n].is_none() {
                    dist[n] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// BFS distance from `cell` to goal number `goal`.
    pub fn goal_distance(&self, goal: usize, cell: usize) -> Result<usize> {
        if self.distances.len() != self.goals.len() {
            return Err(Error::contract("grid distances not initialised"));
        }
        self.distances[goal][cell]
            .ok_or_else(|| Error::contract(format!("cell {cell} is a wall or cannot reach goal {goal}")))
    }

    /// Position features in `[0, 1]^2`.
    pub fn features(&self, cell: usize) -> Vec<f64> {
        let (r, c) = self.coords(cell);
        vec![
            r as f64 / (self.height.max(2) - 1) as f64,
            c as f64 / (self.width.max(2) - 1) as f64,
        ]
    }

    pub fn cell_from_features(&self, f: &[f64]) -> Result<usize> {
        if f.len() != 2 {
            return Err(Error::shape("grid features", &[2], &[f.len()]));
        }
        let r = (f[0] * (self.height.max(2) - 1) as f64).round();
        let c = (f[1] * (self.width.max(2) - 1) as f64).round();
        if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
            return Err(Error::contract(format!("features {f:?} fall outside the grid")));
        }
        Ok(self.cell(r as usize, c as usize))
    }
}

/// Preference score of `cell` for an annotator heading to `goal`: minus the
/// BFS distance.
pub fn maze_preference_score(grid: &Gridworld, cell: usize, goal: usize) -> Result<f64> {
    if grid.is_wall(cell) {
        return Err(Error::contract(format!("cell {cell} is a wall")));
    }
    let gi = grid
        .goals()
        .iter()
        .position(|&g| g == goal)
        .ok_or_else(|| Error::contract(format!("cell {goal} is not a goal")))?;
    Ok(-(grid.goal_distance(gi, cell)? as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maze_goals_are_open_and_reachable() {
        let m2 = Gridworld::maze(&MAZE2_GOALS).unwrap();
        let m10 = Gridworld::maze(&MAZE10_GOALS).unwrap();
        assert_eq!(m2.goals().len(), 2);
        assert_eq!(m10.goals().len(), 10);
        assert_eq!(m10.open_cells().count(), m2.open_cells().count());
    }

    #[test]
    fn scores_on_open_grid() {
        let g = Gridworld::open_grid(5, 5, &[(4, 4)]).unwrap();
        let goal = g.cell(4, 4);
        assert_eq!(maze_preference_score(&g, goal, goal).unwrap(), 0.0);
        assert_eq!(maze_preference_score(&g, g.cell(3, 4), goal).unwrap(), -1.0);
        assert_eq!(maze_preference_score(&g, g.cell(0, 0), goal).unwrap(), -8.0);
    }

    #[test]
    fn wall_cells_are_rejected() {
        let g = Gridworld::maze(&MAZE2_GOALS).unwrap();
        let wall = g.cell(1, 1);
        assert!(matches!(
            maze_preference_score(&g, wall, g.goals()[0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unreachable_goal_is_a_config_error() {
        let rows = [".#.", ".#.", ".#."];
        assert!(Gridworld::from_ascii(&rows, &[(0, 0)]).is_err());
    }

    #[test]
    fn features_roundtrip() {
        let g = Gridworld::maze(&MAZE2_GOALS).unwrap();
        for c in g.open_cells() {
            assert_eq!(g.cell_from_features(&g.features(c)).unwrap(), c);
        }
    }
}
