//! A* with an execution trace of every frontier insertion (`create`) and
//! closed-set insertion (`close`).
//!
//! Deterministic mode expands children in the fixed (up, down, left, right)
//! order and selects the frontier node with the smallest `(f, h, insertion
//! index)`. Non-deterministic mode shuffles children per expansion and breaks
//! `f` ties uniformly at random, driven by the seed.

use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Plan, SearchDomain, State, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Deterministic,
    NonDeterministic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Create,
    Close,
}

/// Snapshot of a search node at the time of an event.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TraceEvent<S> {
    pub kind: EventKind,
    pub state: S,
    /// Cost since start, `c(n)`.
    pub cost: u32,
    /// Heuristic value, `h(n)`.
    pub heuristic: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ExecutionTrace<S> {
    pub events: Vec<TraceEvent<S>>,
}

impl<S> ExecutionTrace<S> {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn closes(&self) -> impl Iterator<Item = &TraceEvent<S>> {
        self.events.iter().filter(|e| e.kind == EventKind::Close)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AStarResult<S> {
    pub trace: ExecutionTrace<S>,
    pub plan: Plan,
    pub optimal_cost: u32,
}

struct Node<S> {
    state: S,
    cost: u32,
    heuristic: u32,
    parent: Option<usize>,
}

pub fn run_astar<D: SearchDomain>(
    domain: &D,
    mode: SearchMode,
    seed: u64,
) -> Result<AStarResult<D::State>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<Node<D::State>> = Vec::new();
    // (f, secondary key, insertion index)
    let mut frontier: BinaryHeap<Reverse<(u32, u64, usize)>> = BinaryHeap::new();
    let mut best_cost: HashMap<D::State, u32> = HashMap::new();
    let mut closed: HashSet<D::State> = HashSet::new();
    let mut events = Vec::new();

    let insert = |nodes: &mut Vec<Node<D::State>>,
                      frontier: &mut BinaryHeap<Reverse<(u32, u64, usize)>>,
                      events: &mut Vec<TraceEvent<D::State>>,
                      rng: &mut ChaCha8Rng,
                      node: Node<D::State>| {
        let idx = nodes.len();
        let f = node.cost + node.heuristic;
        let secondary = match mode {
            SearchMode::Deterministic => node.heuristic as u64,
            SearchMode::NonDeterministic => rng.gen(),
        };
        events.push(TraceEvent {
            kind: EventKind::Create,
            state: node.state.clone(),
            cost: node.cost,
            heuristic: node.heuristic,
        });
        nodes.push(node);
        frontier.push(Reverse((f, secondary, idx)));
    };

    let start = domain.initial_state();
    let h0 = domain.heuristic(&start);
    best_cost.insert(start.clone(), 0);
    insert(
        &mut nodes,
        &mut frontier,
        &mut events,
        &mut rng,
        Node {
            state: start,
            cost: 0,
            heuristic: h0,
            parent: None,
        },
    );

    let mut expansions = 0usize;
    while let Some(Reverse((_, _, idx))) = frontier.pop() {
        if closed.contains(&nodes[idx].state) {
            // stale duplicate of an already expanded state
            continue;
        }
        closed.insert(nodes[idx].state.clone());
        expansions += 1;
        let (cost, heuristic) = (nodes[idx].cost, nodes[idx].heuristic);
        events.push(TraceEvent {
            kind: EventKind::Close,
            state: nodes[idx].state.clone(),
            cost,
            heuristic,
        });
        if domain.is_goal(&nodes[idx].state) {
            let plan = reconstruct::<D>(&nodes, idx);
            return Ok(AStarResult {
                trace: ExecutionTrace { events },
                plan,
                optimal_cost: cost,
            });
        }

        let mut children = domain.successors(&nodes[idx].state);
        if mode == SearchMode::NonDeterministic {
            children.shuffle(&mut rng);
        }
        for (child, step_cost) in children {
            let child_cost = cost + step_cost;
            match best_cost.entry(child.clone()) {
                Entry::Occupied(mut e) => {
                    // same state already in closed or frontier with f <= f(child)
                    if *e.get() <= child_cost {
                        continue;
                    }
                    e.insert(child_cost);
                }
                Entry::Vacant(e) => {
                    e.insert(child_cost);
                }
            }
            let h = domain.heuristic(&child);
            insert(
                &mut nodes,
                &mut frontier,
                &mut events,
                &mut rng,
                Node {
                    state: child,
                    cost: child_cost,
                    heuristic: h,
                    parent: Some(idx),
                },
            );
        }
    }
    Err(Error::NoPlan { expansions })
}

fn reconstruct<D: SearchDomain>(nodes: &[Node<D::State>], mut idx: usize) -> Plan {
    let mut steps = vec![D::agent_cell(&nodes[idx].state)];
    while let Some(parent) = nodes[idx].parent {
        idx = parent;
        steps.push(D::agent_cell(&nodes[idx].state));
    }
    steps.reverse();
    Plan::new(steps)
}

/// Breadth-first shortest plan cost over the same successor function.
pub fn oracle_shortest_cost<D: SearchDomain>(domain: &D) -> Result<u32> {
    let start = domain.initial_state();
    let mut seen: HashSet<D::State> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start.clone());
    queue.push_back((start, 0u32));
    while let Some((state, depth)) = queue.pop_front() {
        if domain.is_goal(&state) {
            return Ok(depth);
        }
        for (next, _) in domain.successors(&state) {
            if seen.insert(next.clone()) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    Err(Error::NoPlan {
        expansions: seen.len(),
    })
}

/// Number of response tokens the trace portion of `result` encodes to.
pub fn trace_token_length(result: &AStarResult<State>, task: &Task) -> usize {
    crate::tokens::trace_token_count(&result.trace, task)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_maze, generate_sokoban, GridCoord, MazeTask, SokobanTask};

    fn c(x: i32, y: i32) -> GridCoord {
        GridCoord::new(x, y)
    }

    fn reference_maze() -> MazeTask {
        MazeTask::new(3, 3, [c(1, 2), c(2, 0)], c(0, 2), c(1, 0)).unwrap()
    }

    fn ev(kind: EventKind, x: i32, y: i32, cost: u32, heuristic: u32) -> TraceEvent<GridCoord> {
        TraceEvent {
            kind,
            state: c(x, y),
            cost,
            heuristic,
        }
    }

    #[test]
    fn reference_maze_deterministic_trace_and_plan() {
        use EventKind::*;
        let r = run_astar(&reference_maze(), SearchMode::Deterministic, 0).unwrap();
        assert_eq!(r.plan, [(0, 2), (0, 1), (0, 0), (1, 0)].into_iter().collect());
        assert_eq!(r.optimal_cost, 3);
        let expected = vec![
            ev(Create, 0, 2, 0, 3),
            ev(Close, 0, 2, 0, 3),
            ev(Create, 0, 1, 1, 2),
            ev(Close, 0, 1, 1, 2),
            ev(Create, 0, 0, 2, 1),
            ev(Create, 1, 1, 2, 1),
            ev(Close, 0, 0, 2, 1),
            ev(Create, 1, 0, 3, 0),
            ev(Close, 1, 0, 3, 0),
        ];
        assert_eq!(r.trace.events, expected);
    }

    #[test]
    fn corridor_single_expansion() {
        use EventKind::*;
        let m = MazeTask::new(2, 1, [], c(0, 0), c(1, 0)).unwrap();
        let r = run_astar(&m, SearchMode::Deterministic, 0).unwrap();
        assert_eq!(
            r.trace.events,
            vec![ev(Create, 0, 0, 0, 1), ev(Close, 0, 0, 0, 1), ev(Create, 1, 0, 1, 0), ev(Close, 1, 0, 1, 0)]
        );
        assert_eq!(r.plan.len(), 2);
    }

    #[test]
    fn start_equals_goal() {
        let m = MazeTask::new(3, 3, [], c(1, 1), c(1, 1)).unwrap();
        assert_eq!(oracle_shortest_cost(&m).unwrap(), 0);
        let r = run_astar(&m, SearchMode::Deterministic, 0).unwrap();
        assert_eq!(r.plan.steps, vec![c(1, 1)]);
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn unsolvable_reports_no_plan() {
        let m = MazeTask::new(3, 1, [c(1, 0)], c(0, 0), c(2, 0)).unwrap();
        assert!(matches!(
            run_astar(&m, SearchMode::Deterministic, 0),
            Err(Error::NoPlan { .. })
        ));
        assert!(matches!(oracle_shortest_cost(&m), Err(Error::NoPlan { .. })));
    }

    #[test]
    fn reference_maze_oracle_cost() {
        assert_eq!(oracle_shortest_cost(&reference_maze()).unwrap(), 3);
    }

    #[test]
    fn random_mazes_match_oracle_both_modes() {
        for i in 0..100u64 {
            let m = generate_maze(5, 5, i).unwrap();
            let oracle = oracle_shortest_cost(&m).unwrap();
            let det = run_astar(&m, SearchMode::Deterministic, 0).unwrap();
            assert_eq!(det.optimal_cost, oracle);
            assert_eq!(det.plan.cost(), oracle);
            assert!(m.validate_plan(&det.plan, oracle).is_optimal());
            for s in 0..8 {
                let nd = run_astar(&m, SearchMode::NonDeterministic, s).unwrap();
                assert_eq!(nd.plan.cost(), oracle, "maze {i} seed {s}");
                assert!(m.validate_plan(&nd.plan, oracle).is_optimal());
            }
        }
    }

    fn check_well_formed<S: Clone + Eq + std::hash::Hash + std::fmt::Debug>(trace: &ExecutionTrace<S>) {
        let first = &trace.events[0];
        assert_eq!(first.kind, EventKind::Create);
        assert_eq!(first.cost, 0);
        let mut created: HashSet<(S, u32, u32)> = HashSet::new();
        let mut closed: HashSet<S> = HashSet::new();
        for e in &trace.events {
            match e.kind {
                EventKind::Create => {
                    created.insert((e.state.clone(), e.cost, e.heuristic));
                }
                EventKind::Close => {
                    assert!(created.contains(&(e.state.clone(), e.cost, e.heuristic)));
                    assert!(closed.insert(e.state.clone()), "closed twice: {:?}", e.state);
                }
            }
        }
    }

    #[test]
    fn traces_are_well_formed() {
        for i in 0..50u64 {
            let m = generate_maze(7, 7, i).unwrap();
            let det = run_astar(&m, SearchMode::Deterministic, 0).unwrap();
            check_well_formed(&det.trace);
            let fs: Vec<u32> = det.trace.closes().map(|e| e.cost + e.heuristic).collect();
            assert!(fs.windows(2).all(|w| w[0] <= w[1]), "f not monotone: {fs:?}");
            check_well_formed(&run_astar(&m, SearchMode::NonDeterministic, i).unwrap().trace);
        }
    }

    #[test]
    fn deterministic_mode_ignores_seed() {
        let m = generate_maze(8, 8, 11).unwrap();
        assert_eq!(
            run_astar(&m, SearchMode::Deterministic, 1).unwrap(),
            run_astar(&m, SearchMode::Deterministic, 2).unwrap()
        );
    }

    #[test]
    fn nondeterministic_reproducible_and_varied() {
        let open = MazeTask::new(6, 6, [], c(0, 0), c(5, 5)).unwrap();
        let a = run_astar(&open, SearchMode::NonDeterministic, 7).unwrap();
        assert_eq!(a, run_astar(&open, SearchMode::NonDeterministic, 7).unwrap());
        let distinct: HashSet<Vec<TraceEvent<GridCoord>>> = (0..8)
            .map(|s| run_astar(&open, SearchMode::NonDeterministic, s).unwrap().trace.events)
            .collect();
        assert!(distinct.len() >= 2);
        for s in 0..8 {
            assert_eq!(run_astar(&open, SearchMode::NonDeterministic, s).unwrap().optimal_cost, 10);
        }
    }

    #[test]
    fn sokoban_matches_oracle() {
        let tasks: Vec<SokobanTask> = (0..20).map(|i| generate_sokoban(i).unwrap()).collect();
        for t in &tasks {
            let oracle = oracle_shortest_cost(t).unwrap();
            let det = run_astar(t, SearchMode::Deterministic, 0).unwrap();
            assert_eq!(det.plan.cost(), oracle);
            assert!(t.validate_plan(&det.plan, oracle).is_optimal());
            check_well_formed(&det.trace);
            let nd = run_astar(t, SearchMode::NonDeterministic, 3).unwrap();
            assert_eq!(nd.plan.cost(), oracle);
        }
    }
}
