use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Direction, GridCoord, Plan, PlanVerdict, SearchDomain, WallGrid, RESAMPLE_BUDGET};
use crate::astar::oracle_shortest_cost;
use crate::error::{Error, Result};

pub const SOKOBAN_SIDE: i32 = 7;
pub const SOKOBAN_BOXES: usize = 2;
const INTERIOR_OBSTACLES: usize = 2;

/// Worker position plus box positions; boxes are kept sorted by `(x, y)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SokobanState {
    pub worker: GridCoord,
    boxes: Vec<GridCoord>,
}

impl SokobanState {
    pub fn new(worker: GridCoord, boxes: impl IntoIterator<Item = GridCoord>) -> Self {
        let mut boxes: Vec<GridCoord> = boxes.into_iter().collect();
        boxes.sort_unstable();
        SokobanState { worker, boxes }
    }

    pub fn boxes(&self) -> &[GridCoord] {
        &self.boxes
    }

    pub fn has_box(&self, c: GridCoord) -> bool {
        self.boxes.binary_search(&c).is_ok()
    }

    fn move_box(&mut self, from: GridCoord, to: GridCoord) {
        if let Ok(i) = self.boxes.binary_search(&from) {
            self.boxes[i] = to;
            self.boxes.sort_unstable();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SokobanTask {
    grid: WallGrid,
    docks: Vec<GridCoord>,
    initial: SokobanState,
}

impl SokobanTask {
    pub fn new(
        width: i32,
        height: i32,
        walls: impl IntoIterator<Item = GridCoord>,
        docks: impl IntoIterator<Item = GridCoord>,
        initial: SokobanState,
    ) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::InvalidTask(format!("sokoban size {width}x{height}")));
        }
        let mut grid = WallGrid::new(width, height);
        for w in walls {
            if !grid.in_bounds(w) {
                return Err(Error::InvalidTask(format!("wall {w} out of bounds")));
            }
            grid.set(w);
        }
        let mut docks: Vec<GridCoord> = docks.into_iter().collect();
        docks.sort_unstable();
        if docks.len() != SOKOBAN_BOXES || initial.boxes.len() != SOKOBAN_BOXES {
            return Err(Error::InvalidTask(format!(
                "expected {SOKOBAN_BOXES} docks and boxes, got {} and {}",
                docks.len(),
                initial.boxes.len()
            )));
        }
        let mut occupied: Vec<GridCoord> = docks.clone();
        occupied.extend(initial.boxes.iter().copied());
        occupied.push(initial.worker);
        for &c in &occupied {
            if !grid.is_open(c) {
                return Err(Error::InvalidTask(format!("{c} is a wall or out of bounds")));
            }
        }
        let mut unique = occupied.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != occupied.len() {
            return Err(Error::InvalidTask(
                "docks, boxes and worker must occupy distinct cells".into(),
            ));
        }
        Ok(SokobanTask {
            grid,
            docks,
            initial,
        })
    }

    pub fn width(&self) -> i32 {
        self.grid.width
    }

    pub fn height(&self) -> i32 {
        self.grid.height
    }

    pub fn walls(&self) -> Vec<GridCoord> {
        self.grid.walls()
    }

    /// Docks in ascending `(x, y)` order.
    pub fn docks(&self) -> &[GridCoord] {
        &self.docks
    }

    pub fn is_dock(&self, c: GridCoord) -> bool {
        self.docks.binary_search(&c).is_ok()
    }

    pub fn initial(&self) -> &SokobanState {
        &self.initial
    }

    /// Boxes of `state` that are not resting on a dock, in ascending order.
    pub fn boxes_off_dock<'a>(&'a self, state: &'a SokobanState) -> impl Iterator<Item = GridCoord> + 'a {
        state.boxes.iter().copied().filter(|&b| !self.is_dock(b))
    }

    fn is_free(&self, state: &SokobanState, c: GridCoord) -> bool {
        self.grid.is_open(c) && !state.has_box(c)
    }

    /// Applies one worker move, pushing a box when the worker walks into it.
    pub fn apply_move(&self, state: &SokobanState, dir: Direction) -> Option<SokobanState> {
        let target = state.worker.step(dir);
        if !self.grid.is_open(target) {
            return None;
        }
        let mut next = state.clone();
        if state.has_box(target) {
            let beyond = target.step(dir);
            if !self.is_free(state, beyond) {
                return None;
            }
            next.move_box(target, beyond);
        }
        next.worker = target;
        Some(next)
    }

    pub fn validate_plan(&self, plan: &Plan, oracle_cost: u32) -> PlanVerdict {
        let Some(&first) = plan.steps.first() else {
            return PlanVerdict::Invalid;
        };
        if first != self.initial.worker {
            return PlanVerdict::Invalid;
        }
        let mut state = self.initial.clone();
        for pair in plan.steps.windows(2) {
            let Some(dir) = pair[0].direction_to(pair[1]) else {
                return PlanVerdict::Invalid;
            };
            match self.apply_move(&state, dir) {
                Some(next) => state = next,
                None => return PlanVerdict::Invalid,
            }
        }
        if !self.is_goal(&state) {
            return PlanVerdict::Invalid;
        }
        PlanVerdict::from_cost(plan.cost(), oracle_cost)
    }
}

impl SearchDomain for SokobanTask {
    type State = SokobanState;

    fn initial_state(&self) -> SokobanState {
        self.initial.clone()
    }

    fn successors(&self, state: &SokobanState) -> Vec<(SokobanState, u32)> {
        Direction::ALL
            .iter()
            .filter_map(|&d| self.apply_move(state, d))
            .map(|s| (s, 1))
            .collect()
    }

    /// Each box is matched to its nearest dock (docks may be shared) and the
    /// Manhattan distances are summed.
    fn heuristic(&self, state: &SokobanState) -> u32 {
        state
            .boxes
            .iter()
            .map(|b| self.docks.iter().map(|&d| b.manhattan(d)).min().unwrap_or(0))
            .sum()
    }

    fn is_goal(&self, state: &SokobanState) -> bool {
        state.boxes.iter().all(|&b| self.is_dock(b))
    }

    fn agent_cell(state: &SokobanState) -> GridCoord {
        state.worker
    }
}

/// Samples a 7x7 level: perimeter walls plus two interior obstacles, then
/// two docks, two boxes and the worker on distinct free cells. Admitted only
/// when the level is solvable.
pub fn generate_sokoban(seed: u64) -> Result<SokobanTask> {
    let side = SOKOBAN_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perimeter: Vec<GridCoord> = (0..side)
        .flat_map(|x| (0..side).map(move |y| GridCoord::new(x, y)))
        .filter(|c| c.x == 0 || c.y == 0 || c.x == side - 1 || c.y == side - 1)
        .collect();
    let interior: Vec<GridCoord> = (1..side - 1)
        .flat_map(|x| (1..side - 1).map(move |y| GridCoord::new(x, y)))
        .collect();

    for _ in 0..RESAMPLE_BUDGET {
        let mut cells = interior.clone();
        cells.shuffle(&mut rng);
        let (obstacles, rest) = cells.split_at(INTERIOR_OBSTACLES);
        let docks = &rest[0..SOKOBAN_BOXES];
        let boxes = &rest[SOKOBAN_BOXES..2 * SOKOBAN_BOXES];
        let worker = rest[2 * SOKOBAN_BOXES];
        let walls = perimeter.iter().chain(obstacles).copied();
        let task = SokobanTask::new(
            side,
            side,
            walls,
            docks.iter().copied(),
            SokobanState::new(worker, boxes.iter().copied()),
        )?;
        if oracle_shortest_cost(&task).is_ok() {
            return Ok(task);
        }
    }
    Err(Error::GenerationFailed {
        attempts: RESAMPLE_BUDGET,
        reason: "no solvable sokoban level".into(),
    })
}
