use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Direction, GridCoord, Plan, PlanVerdict, SearchDomain, WallGrid, RESAMPLE_BUDGET};
use crate::astar::oracle_shortest_cost;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MazeTask {
    grid: WallGrid,
    start: GridCoord,
    goal: GridCoord,
}

impl MazeTask {
    pub fn new(
        width: i32,
        height: i32,
        walls: impl IntoIterator<Item = GridCoord>,
        start: GridCoord,
        goal: GridCoord,
    ) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::InvalidTask(format!("maze size {width}x{height}")));
        }
        let mut grid = WallGrid::new(width, height);
        for w in walls {
            if !grid.in_bounds(w) {
                return Err(Error::InvalidTask(format!("wall {w} out of bounds")));
            }
            grid.set(w);
        }
        for (name, c) in [("start", start), ("goal", goal)] {
            if !grid.in_bounds(c) {
                return Err(Error::InvalidTask(format!("{name} {c} out of bounds")));
            }
            if grid.is_wall(c) {
                return Err(Error::InvalidTask(format!("{name} {c} is a wall")));
            }
        }
        Ok(MazeTask { grid, start, goal })
    }

    pub fn width(&self) -> i32 {
        self.grid.width
    }

    pub fn height(&self) -> i32 {
        self.grid.height
    }

    pub fn start(&self) -> GridCoord {
        self.start
    }

    pub fn goal(&self) -> GridCoord {
        self.goal
    }

    /// Walls in ascending `(x, y)` order.
    pub fn walls(&self) -> Vec<GridCoord> {
        self.grid.walls()
    }

    pub fn wall_count(&self) -> usize {
        self.grid.wall_count()
    }

    pub fn is_wall(&self, c: GridCoord) -> bool {
        self.grid.in_bounds(c) && self.grid.is_wall(c)
    }

    pub fn is_open(&self, c: GridCoord) -> bool {
        self.grid.is_open(c)
    }

    pub fn validate_plan(&self, plan: &Plan, oracle_cost: u32) -> PlanVerdict {
        let Some(&first) = plan.steps.first() else {
            return PlanVerdict::Invalid;
        };
        if first != self.start {
            return PlanVerdict::Invalid;
        }
        for pair in plan.steps.windows(2) {
            if !pair[0].is_adjacent(pair[1]) || !self.grid.is_open(pair[1]) {
                return PlanVerdict::Invalid;
            }
        }
        if plan.steps.last() != Some(&self.goal) {
            return PlanVerdict::Invalid;
        }
        PlanVerdict::from_cost(plan.cost(), oracle_cost)
    }
}

impl SearchDomain for MazeTask {
    type State = GridCoord;

    fn initial_state(&self) -> GridCoord {
        self.start
    }

    fn successors(&self, state: &GridCoord) -> Vec<(GridCoord, u32)> {
        Direction::ALL
            .iter()
            .map(|&d| state.step(d))
            .filter(|&c| self.grid.is_open(c))
            .map(|c| (c, 1))
            .collect()
    }

    fn heuristic(&self, state: &GridCoord) -> u32 {
        state.manhattan(self.goal)
    }

    fn is_goal(&self, state: &GridCoord) -> bool {
        *state == self.goal
    }

    fn agent_cell(state: &GridCoord) -> GridCoord {
        *state
    }
}

/// Samples a random maze: 30-50% wall cells, random distinct start and
/// goal, admitted only when the shortest plan needs at least
/// `max(width, height)` moves.
pub fn generate_maze(width: i32, height: i32, seed: u64) -> Result<MazeTask> {
    if width < 3 || height < 3 {
        return Err(Error::Precondition(format!(
            "maze must be at least 3x3, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells: Vec<GridCoord> = (0..height)
        .flat_map(|y| (0..width).map(move |x| GridCoord::new(x, y)))
        .collect();
    let n = cells.len();
    let min_walls = (0.30 * n as f64).ceil() as usize;
    let max_walls = (0.50 * n as f64).floor() as usize;
    let min_cost = width.max(height) as u32;

    for _ in 0..RESAMPLE_BUDGET {
        let fraction: f64 = rng.gen_range(0.30..=0.50);
        let n_walls = ((fraction * n as f64).round() as usize).clamp(min_walls, max_walls);
        let mut order = cells.clone();
        order.shuffle(&mut rng);
        let (walls, free) = order.split_at(n_walls);
        if free.len() < 2 {
            continue;
        }
        let picked: Vec<&GridCoord> = free.choose_multiple(&mut rng, 2).collect();
        let task = MazeTask::new(width, height, walls.iter().copied(), *picked[0], *picked[1])?;
        match oracle_shortest_cost(&task) {
            Ok(cost) if cost >= min_cost => return Ok(task),
            _ => continue,
        }
    }
    Err(Error::GenerationFailed {
        attempts: RESAMPLE_BUDGET,
        reason: format!("no admissible {width}x{height} maze"),
    })
}
