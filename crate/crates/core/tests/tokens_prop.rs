use proptest::prelude::*;
use searchtrace::astar::{run_astar, SearchMode};
use searchtrace::grid::{generate_maze, generate_sokoban, Task};
use searchtrace::tokens::{build_vocabulary, decode_prompt, decode_response_ids, encode_prompt, encode_response, ParsedEvent};

fn check(task: Task, seed: u64) {
    let vocab = build_vocabulary(task.kind(), task.side() as u16, 2000);
    let r = run_astar(&task, SearchMode::NonDeterministic, seed).unwrap();
    let prompt = encode_prompt(&task, &vocab).unwrap();
    let back = decode_prompt(&prompt.tokens, task.kind(), task.side(), task.side()).unwrap();
    assert_eq!(back, task);
    let resp = encode_response(Some(&r.trace), &r.plan, &task, &vocab).unwrap();
    let parsed = decode_response_ids(&vocab.ids(&resp.tokens).unwrap(), &vocab, task.kind()).unwrap();
    assert_eq!(parsed.plan, r.plan);
    let events: Vec<ParsedEvent> = r.trace.events.iter().map(|e| ParsedEvent::project(e, &task)).collect();
    assert_eq!(parsed.events, events);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maze_sequences_round_trip(side in 3i32..=10, seed in any::<u64>(), run in any::<u64>()) {
        check(Task::Maze(generate_maze(side, side, seed).unwrap()), run);
    }

    #[test]
    fn sokoban_sequences_round_trip(seed in 0u64..10_000, run in any::<u64>()) {
        check(Task::Sokoban(generate_sokoban(seed).unwrap()), run);
    }

    #[test]
    fn truncated_responses_never_parse(side in 4i32..=8, seed in any::<u64>(), cut in 1usize..1000) {
        let task = Task::Maze(generate_maze(side, side, seed).unwrap());
        let vocab = build_vocabulary(task.kind(), side as u16, 2000);
        let r = run_astar(&task, SearchMode::Deterministic, 0).unwrap();
        let ids = vocab.ids(&encode_response(Some(&r.trace), &r.plan, &task, &vocab).unwrap().tokens).unwrap();
        let keep = cut % ids.len();
        prop_assert!(decode_response_ids(&ids[..keep], &vocab, task.kind()).is_err());
    }
}
