//! Maze and Sokoban task semantics.
//!
//! Coordinates follow one convention everywhere: `x` is the column index
//! growing rightward, `y` is the row index growing upward, and the origin is
//! the bottom-left cell. Tokens encode a cell as `x y`.

mod maze;
mod sokoban;

use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub use maze::{generate_maze, MazeTask};
pub use sokoban::{generate_sokoban, SokobanState, SokobanTask, SOKOBAN_SIDE};

/// Attempts a generator makes before giving up on a task.
pub const RESAMPLE_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: i32,
    pub y: i32,
}

impl GridCoord {
    pub const fn new(x: i32, y: i32) -> Self {
        GridCoord { x, y }
    }

    pub fn step(self, dir: Direction) -> GridCoord {
        let (dx, dy) = dir.delta();
        GridCoord::new(self.x + dx, self.y + dy)
    }

    pub fn manhattan(self, other: GridCoord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn is_adjacent(self, other: GridCoord) -> bool {
        self.manhattan(other) == 1
    }

    /// Direction that moves `self` onto `other`, if they are 4-adjacent.
    pub fn direction_to(self, other: GridCoord) -> Option<Direction> {
        Direction::ALL.into_iter().find(|&d| self.step(d) == other)
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl From<(i32, i32)> for GridCoord {
    fn from((x, y): (i32, i32)) -> Self {
        GridCoord::new(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    /// Fixed successor order used before any randomization.
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }
}

/// Rectangular wall occupancy shared by both domains.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) struct WallGrid {
    width: i32,
    height: i32,
    cells: Vec<bool>,
}

impl WallGrid {
    pub(crate) fn new(width: i32, height: i32) -> Self {
        WallGrid {
            width,
            height,
            cells: vec![false; (width * height) as usize],
        }
    }

    pub(crate) fn in_bounds(&self, c: GridCoord) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    fn index(&self, c: GridCoord) -> usize {
        (c.y * self.width + c.x) as usize
    }

    pub(crate) fn set(&mut self, c: GridCoord) {
        let i = self.index(c);
        self.cells[i] = true;
    }

    pub(crate) fn is_wall(&self, c: GridCoord) -> bool {
        self.cells[self.index(c)]
    }

    /// In bounds and not a wall.
    pub(crate) fn is_open(&self, c: GridCoord) -> bool {
        self.in_bounds(c) && !self.is_wall(c)
    }

    /// Walls in ascending `(x, y)` order.
    pub(crate) fn walls(&self) -> Vec<GridCoord> {
        let mut out = Vec::new();
        for x in 0..self.width {
            for y in 0..self.height {
                let c = GridCoord::new(x, y);
                if self.is_wall(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub(crate) fn wall_count(&self) -> usize {
        self.cells.iter().filter(|&&w| w).count()
    }
}

/// A deterministic planning problem with unit-cost transitions.
pub trait SearchDomain {
    type State: Clone + Eq + Hash + fmt::Debug;

    fn initial_state(&self) -> Self::State;

    /// Successors in the fixed (up, down, left, right) order of the moving
    /// agent, each with its transition cost.
    fn successors(&self, state: &Self::State) -> Vec<(Self::State, u32)>;

    fn heuristic(&self, state: &Self::State) -> u32;

    fn is_goal(&self, state: &Self::State) -> bool;

    /// Cell occupied by the agent (maze) or worker (Sokoban); a plan is the
    /// sequence of these cells.
    fn agent_cell(state: &Self::State) -> GridCoord;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Maze,
    Sokoban,
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "maze" => Ok(TaskKind::Maze),
            "sokoban" => Ok(TaskKind::Sokoban),
            _ => Err(format!("unknown task kind {s:?}; expected maze or sokoban")),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Maze => "maze",
            TaskKind::Sokoban => "sokoban",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Maze(MazeTask),
    Sokoban(SokobanTask),
}

impl Task {
    pub fn kind(&self) -> TaskKind {
        match self {
            Task::Maze(_) => TaskKind::Maze,
            Task::Sokoban(_) => TaskKind::Sokoban,
        }
    }

    /// Largest of width and height.
    pub fn side(&self) -> i32 {
        match self {
            Task::Maze(m) => m.width().max(m.height()),
            Task::Sokoban(s) => s.width().max(s.height()),
        }
    }

    pub fn validate_plan(&self, plan: &Plan, oracle_cost: u32) -> PlanVerdict {
        match self {
            Task::Maze(m) => m.validate_plan(plan, oracle_cost),
            Task::Sokoban(s) => s.validate_plan(plan, oracle_cost),
        }
    }
}

impl From<MazeTask> for Task {
    fn from(t: MazeTask) -> Self {
        Task::Maze(t)
    }
}

impl From<SokobanTask> for Task {
    fn from(t: SokobanTask) -> Self {
        Task::Sokoban(t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Maze(GridCoord),
    Sokoban(SokobanState),
}

impl SearchDomain for Task {
    type State = State;

    fn initial_state(&self) -> State {
        match self {
            Task::Maze(m) => State::Maze(m.initial_state()),
            Task::Sokoban(s) => State::Sokoban(s.initial_state()),
        }
    }

    fn successors(&self, state: &State) -> Vec<(State, u32)> {
        match (self, state) {
            (Task::Maze(m), State::Maze(c)) => m
                .successors(c)
                .into_iter()
                .map(|(s, w)| (State::Maze(s), w))
                .collect(),
            (Task::Sokoban(t), State::Sokoban(s)) => t
                .successors(s)
                .into_iter()
                .map(|(s, w)| (State::Sokoban(s), w))
                .collect(),
            _ => panic!("state kind does not match task kind"),
        }
    }

    fn heuristic(&self, state: &State) -> u32 {
        match (self, state) {
            (Task::Maze(m), State::Maze(c)) => m.heuristic(c),
            (Task::Sokoban(t), State::Sokoban(s)) => t.heuristic(s),
            _ => panic!("state kind does not match task kind"),
        }
    }

    fn is_goal(&self, state: &State) -> bool {
        match (self, state) {
            (Task::Maze(m), State::Maze(c)) => m.is_goal(c),
            (Task::Sokoban(t), State::Sokoban(s)) => t.is_goal(s),
            _ => panic!("state kind does not match task kind"),
        }
    }

    fn agent_cell(state: &State) -> GridCoord {
        match state {
            State::Maze(c) => *c,
            State::Sokoban(s) => s.worker,
        }
    }
}

/// Sequence of agent (maze) or worker (Sokoban) cells, start cell included.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<GridCoord>,
}

impl Plan {
    pub fn new(steps: Vec<GridCoord>) -> Self {
        Plan { steps }
    }

    /// Number of moves; an empty plan has no cost.
    pub fn cost(&self) -> u32 {
        self.steps.len().saturating_sub(1) as u32
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl<C: Into<GridCoord>> FromIterator<C> for Plan {
    fn from_iter<I: IntoIterator<Item = C>>(iter: I) -> Self {
        Plan::new(iter.into_iter().map(Into::into).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "cost", rename_all = "snake_case")]
pub enum PlanVerdict {
    Invalid,
    Feasible(u32),
    Optimal(u32),
}

impl PlanVerdict {
    pub(crate) fn from_cost(cost: u32, oracle_cost: u32) -> Self {
        if cost <= oracle_cost {
            PlanVerdict::Optimal(cost)
        } else {
            PlanVerdict::Feasible(cost)
        }
    }

    pub fn is_optimal(self) -> bool {
        matches!(self, PlanVerdict::Optimal(_))
    }

    /// Feasible or optimal.
    pub fn is_solved(self) -> bool {
        !matches!(self, PlanVerdict::Invalid)
    }

    pub fn cost(self) -> Option<u32> {
        match self {
            PlanVerdict::Invalid => None,
            PlanVerdict::Feasible(c) | PlanVerdict::Optimal(c) => Some(c),
        }
    }
}

/// Derives a well-mixed sub-seed; used wherever a stream of independent
/// seeds is needed from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
