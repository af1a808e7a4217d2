//! Token language for prompts, execution traces and plans.
//!
//! Maze prompt: `bos start x y goal x y (wall x y)* eos`.
//! Sokoban prompt: `bos worker x y (box x y){2} (dock x y){2} (wall x y)* eos`.
//! Response: `bos (event)* (plan x y)+ eos`, where a maze event is
//! `create|close x y c<cost> c<heuristic>` and a Sokoban event is
//! `create|close worker x y (box x y)* c<cost> c<heuristic>` listing only
//! boxes that are not resting on a dock. Walls, boxes and docks are listed in
//! ascending `(x, y)` order.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astar::{EventKind, ExecutionTrace, TraceEvent};
use crate::error::{Error, Result};
use crate::grid::{GridCoord, MazeTask, Plan, SokobanState, SokobanTask, State, Task, TaskKind};

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    Bos,
    Eos,
    Start,
    Goal,
    Wall,
    Plan,
    Create,
    Close,
    Worker,
    Box,
    Dock,
    Num(u16),
    Cost(u32),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Bos => f.write_str("bos"),
            Token::Eos => f.write_str("eos"),
            Token::Start => f.write_str("start"),
            Token::Goal => f.write_str("goal"),
            Token::Wall => f.write_str("wall"),
            Token::Plan => f.write_str("plan"),
            Token::Create => f.write_str("create"),
            Token::Close => f.write_str("close"),
            Token::Worker => f.write_str("worker"),
            Token::Box => f.write_str("box"),
            Token::Dock => f.write_str("dock"),
            Token::Num(n) => write!(f, "{n}"),
            Token::Cost(c) => write!(f, "c{c}"),
        }
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "bos" => Token::Bos,
            "eos" => Token::Eos,
            "start" => Token::Start,
            "goal" => Token::Goal,
            "wall" => Token::Wall,
            "plan" => Token::Plan,
            "create" => Token::Create,
            "close" => Token::Close,
            "worker" => Token::Worker,
            "box" => Token::Box,
            "dock" => Token::Dock,
            _ => {
                if let Some(rest) = s.strip_prefix('c') {
                    Token::Cost(rest.parse().map_err(|_| format!("unknown token {s:?}"))?)
                } else {
                    Token::Num(s.parse().map_err(|_| format!("unknown token {s:?}"))?)
                }
            }
        })
    }
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prompt,
    Response,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub role: Role,
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Dense symbol indexing; `bos` is index 0 and `eos` index 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<Token>,
    index: HashMap<Token, u32>,
}

impl Vocabulary {
    pub fn from_symbols(symbols: Vec<Token>) -> Result<Self> {
        if symbols.first() != Some(&Token::Bos) || symbols.get(1) != Some(&Token::Eos) {
            return Err(Error::Encoding("vocabulary must start with bos, eos".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &t) in symbols.iter().enumerate() {
            if index.insert(t, i as u32).is_some() {
                return Err(Error::Encoding(format!("duplicate vocabulary symbol {t}")));
            }
        }
        Ok(Vocabulary { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Token] {
        &self.symbols
    }

    pub fn contains(&self, t: Token) -> bool {
        self.index.contains_key(&t)
    }

    pub fn id(&self, t: Token) -> Result<u32> {
        self.index
            .get(&t)
            .copied()
            .ok_or_else(|| Error::Encoding(format!("token {t} is not in the vocabulary")))
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        self.symbols.get(id as usize).copied()
    }

    pub fn ids(&self, tokens: &[Token]) -> Result<Vec<u32>> {
        tokens.iter().map(|&t| self.id(t)).collect()
    }

    /// Maps ids back to tokens; out-of-range ids are reported by position.
    pub fn tokens(&self, ids: &[u32]) -> Result<Vec<Token>, ParseError> {
        ids.iter()
            .enumerate()
            .map(|(pos, &id)| {
                self.token(id).ok_or(ParseError {
                    position: pos,
                    expected: "vocabulary token",
                    found: format!("id {id}"),
                })
            })
            .collect()
    }

    /// Number of coordinate numerals (`0..side`).
    pub fn side(&self) -> u16 {
        self.symbols
            .iter()
            .filter_map(|t| match t {
                Token::Num(n) => Some(n + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Largest cost token present.
    pub fn max_cost(&self) -> Option<u32> {
        self.symbols
            .iter()
            .filter_map(|t| match t {
                Token::Cost(c) => Some(*c),
                _ => None,
            })
            .max()
    }

    /// One symbol per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.symbols {
            s.push_str(&t.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let symbols = text
            .lines()
            .map(|l| l.parse::<Token>().map_err(Error::Encoding))
            .collect::<Result<Vec<_>>>()?;
        Vocabulary::from_symbols(symbols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Minimal vocabulary for a task kind, grid side and largest cost token.
pub fn build_vocabulary(kind: TaskKind, side: u16, max_cost: u32) -> Vocabulary {
    let mut symbols = vec![Token::Bos, Token::Eos];
    match kind {
        TaskKind::Maze => symbols.extend([Token::Start, Token::Goal]),
        TaskKind::Sokoban => symbols.extend([Token::Worker, Token::Box, Token::Dock]),
    }
    symbols.extend([Token::Wall, Token::Plan, Token::Create, Token::Close]);
    symbols.extend((0..side).map(Token::Num));
    symbols.extend((0..=max_cost).map(Token::Cost));
    Vocabulary::from_symbols(symbols).expect("generated vocabulary is well formed")
}

fn push_coord(out: &mut Vec<Token>, c: GridCoord) {
    out.push(Token::Num(c.x as u16));
    out.push(Token::Num(c.y as u16));
}

/// Prompt tokens without a vocabulary check.
pub fn prompt_tokens(task: &Task) -> Vec<Token> {
    let mut out = vec![Token::Bos];
    match task {
        Task::Maze(m) => {
            out.push(Token::Start);
            push_coord(&mut out, m.start());
            out.push(Token::Goal);
            push_coord(&mut out, m.goal());
            for w in m.walls() {
                out.push(Token::Wall);
                push_coord(&mut out, w);
            }
        }
        Task::Sokoban(s) => {
            out.push(Token::Worker);
            push_coord(&mut out, s.initial().worker);
            for &b in s.initial().boxes() {
                out.push(Token::Box);
                push_coord(&mut out, b);
            }
            for &d in s.docks() {
                out.push(Token::Dock);
                push_coord(&mut out, d);
            }
            for w in s.walls() {
                out.push(Token::Wall);
                push_coord(&mut out, w);
            }
        }
    }
    out.push(Token::Eos);
    out
}

fn check_in_vocab(tokens: &[Token], vocab: &Vocabulary) -> Result<()> {
    match tokens.iter().find(|t| !vocab.contains(**t)) {
        Some(t) => Err(Error::Encoding(format!("token {t} is outside the vocabulary"))),
        None => Ok(()),
    }
}

pub fn encode_prompt(task: &Task, vocab: &Vocabulary) -> Result<TokenSequence> {
    let tokens = prompt_tokens(task);
    check_in_vocab(&tokens, vocab)?;
    Ok(TokenSequence {
        role: Role::Prompt,
        tokens,
    })
}

fn push_state(out: &mut Vec<Token>, state: &State, task: &Task) {
    match (state, task) {
        (State::Maze(c), _) => push_coord(out, *c),
        (State::Sokoban(s), Task::Sokoban(t)) => {
            out.push(Token::Worker);
            push_coord(out, s.worker);
            for b in t.boxes_off_dock(s) {
                out.push(Token::Box);
                push_coord(out, b);
            }
        }
        (State::Sokoban(_), Task::Maze(_)) => panic!("sokoban state for a maze task"),
    }
}

/// Tokens one event encodes to.
pub fn event_token_count(event: &TraceEvent<State>, task: &Task) -> usize {
    match (&event.state, task) {
        (State::Maze(_), _) => 5,
        (State::Sokoban(s), Task::Sokoban(t)) => 6 + 3 * t.boxes_off_dock(s).count(),
        (State::Sokoban(_), Task::Maze(_)) => panic!("sokoban state for a maze task"),
    }
}

pub fn trace_token_count(trace: &ExecutionTrace<State>, task: &Task) -> usize {
    trace.events.iter().map(|e| event_token_count(e, task)).sum()
}

/// Response tokens without a vocabulary check.
pub fn response_tokens(trace: Option<&ExecutionTrace<State>>, plan: &Plan, task: &Task) -> Vec<Token> {
    let mut out = vec![Token::Bos];
    if let Some(trace) = trace {
        for e in &trace.events {
            out.push(match e.kind {
                EventKind::Create => Token::Create,
                EventKind::Close => Token::Close,
            });
            push_state(&mut out, &e.state, task);
            out.push(Token::Cost(e.cost));
            out.push(Token::Cost(e.heuristic));
        }
    }
    for &step in &plan.steps {
        out.push(Token::Plan);
        push_coord(&mut out, step);
    }
    out.push(Token::Eos);
    out
}

pub fn encode_response(
    trace: Option<&ExecutionTrace<State>>,
    plan: &Plan,
    task: &Task,
    vocab: &Vocabulary,
) -> Result<TokenSequence> {
    if plan.is_empty() {
        return Err(Error::Encoding("cannot encode an empty plan".into()));
    }
    let tokens = response_tokens(trace, plan, task);
    check_in_vocab(&tokens, vocab)?;
    Ok(TokenSequence {
        role: Role::Response,
        tokens,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("malformed sequence at token {position}: expected {expected}, found {found}")]
pub struct ParseError {
    pub position: usize,
    pub expected: &'static str,
    pub found: String,
}

/// State as it appears in the token stream. Sokoban states list only boxes
/// that are not on a dock.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TokenState {
    Maze(GridCoord),
    Sokoban {
        worker: GridCoord,
        boxes: Vec<GridCoord>,
    },
}

impl TokenState {
    pub fn project(state: &State, task: &Task) -> TokenState {
        match (state, task) {
            (State::Maze(c), _) => TokenState::Maze(*c),
            (State::Sokoban(s), Task::Sokoban(t)) => TokenState::Sokoban {
                worker: s.worker,
                boxes: t.boxes_off_dock(s).collect(),
            },
            (State::Sokoban(_), Task::Maze(_)) => panic!("sokoban state for a maze task"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParsedEvent {
    pub kind: EventKind,
    pub state: TokenState,
    pub cost: u32,
    pub heuristic: u32,
}

impl ParsedEvent {
    pub fn project(event: &TraceEvent<State>, task: &Task) -> ParsedEvent {
        ParsedEvent {
            kind: event.kind,
            state: TokenState::project(&event.state, task),
            cost: event.cost,
            heuristic: event.heuristic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedResponse {
    pub events: Vec<ParsedEvent>,
    pub plan: Plan,
    /// Tokens between `bos` and the first plan token.
    pub trace_len: usize,
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).copied()
    }

    fn error(&self, expected: &'static str) -> ParseError {
        ParseError {
            position: self.pos,
            expected,
            found: self
                .peek()
                .map(|t| t.to_string())
                .unwrap_or_else(|| "end of sequence".into()),
        }
    }

    fn expect(&mut self, want: Token, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn num(&mut self) -> Result<i32, ParseError> {
        match self.peek() {
            Some(Token::Num(n)) => {
                self.pos += 1;
                Ok(n as i32)
            }
            _ => Err(self.error("coordinate numeral")),
        }
    }

    fn coord(&mut self) -> Result<GridCoord, ParseError> {
        let x = self.num()?;
        let y = self.num()?;
        Ok(GridCoord::new(x, y))
    }

    fn cost(&mut self) -> Result<u32, ParseError> {
        match self.peek() {
            Some(Token::Cost(c)) => {
                self.pos += 1;
                Ok(c)
            }
            _ => Err(self.error("cost token")),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        self.expect(Token::Eos, "eos")?;
        if self.pos != self.tokens.len() {
            return Err(self.error("end of sequence after eos"));
        }
        Ok(())
    }
}

/// Strict grammar parse of a (possibly model-generated) response.
pub fn decode_response(tokens: &[Token], kind: TaskKind) -> Result<ParsedResponse, ParseError> {
    let mut cur = Cursor { tokens, pos: 0 };
    cur.expect(Token::Bos, "bos")?;
    let mut events = Vec::new();
    loop {
        let kind_token = match cur.peek() {
            Some(Token::Create) => EventKind::Create,
            Some(Token::Close) => EventKind::Close,
            _ => break,
        };
        cur.pos += 1;
        let state = match kind {
            TaskKind::Maze => TokenState::Maze(cur.coord()?),
            TaskKind::Sokoban => {
                cur.expect(Token::Worker, "worker")?;
                let worker = cur.coord()?;
                let mut boxes = Vec::new();
                while cur.peek() == Some(Token::Box) {
                    cur.pos += 1;
                    boxes.push(cur.coord()?);
                }
                TokenState::Sokoban { worker, boxes }
            }
        };
        let cost = cur.cost()?;
        let heuristic = cur.cost()?;
        events.push(ParsedEvent {
            kind: kind_token,
            state,
            cost,
            heuristic,
        });
    }
    let trace_len = cur.pos - 1;
    let mut steps = Vec::new();
    while cur.peek() == Some(Token::Plan) {
        cur.pos += 1;
        steps.push(cur.coord()?);
    }
    if matches!(cur.peek(), Some(Token::Create | Token::Close)) {
        return Err(cur.error("plan step or eos (trace event after plan)"));
    }
    cur.finish()?;
    Ok(ParsedResponse {
        events,
        plan: Plan::new(steps),
        trace_len,
    })
}

/// Decodes token ids through `vocab`, then parses.
pub fn decode_response_ids(
    ids: &[u32],
    vocab: &Vocabulary,
    kind: TaskKind,
) -> Result<ParsedResponse, ParseError> {
    let tokens = vocab.tokens(ids)?;
    decode_response(&tokens, kind)
}

/// Grid dimensions are not part of the prompt and must be supplied.
pub fn decode_prompt(tokens: &[Token], kind: TaskKind, width: i32, height: i32) -> Result<Task> {
    let mut cur = Cursor { tokens, pos: 0 };
    cur.expect(Token::Bos, "bos")?;
    let task = match kind {
        TaskKind::Maze => {
            cur.expect(Token::Start, "start")?;
            let start = cur.coord()?;
            cur.expect(Token::Goal, "goal")?;
            let goal = cur.coord()?;
            let walls = walls(&mut cur)?;
            Task::Maze(MazeTask::new(width, height, walls, start, goal)?)
        }
        TaskKind::Sokoban => {
            cur.expect(Token::Worker, "worker")?;
            let worker = cur.coord()?;
            let mut boxes = Vec::new();
            while cur.peek() == Some(Token::Box) {
                cur.pos += 1;
                boxes.push(cur.coord()?);
            }
            let mut docks = Vec::new();
            while cur.peek() == Some(Token::Dock) {
                cur.pos += 1;
                docks.push(cur.coord()?);
            }
            let walls = walls(&mut cur)?;
            Task::Sokoban(SokobanTask::new(
                width,
                height,
                walls,
                docks,
                SokobanState::new(worker, boxes),
            )?)
        }
    };
    cur.finish()?;
    Ok(task)
}

fn walls(cur: &mut Cursor<'_>) -> Result<Vec<GridCoord>, ParseError> {
    let mut out = Vec::new();
    while cur.peek() == Some(Token::Wall) {
        cur.pos += 1;
        out.push(cur.coord()?);
    }
    Ok(out)
}

/// Parses whitespace-separated symbols, e.g. `"bos plan 0 2 eos"`.
pub fn parse_symbols(text: &str) -> Result<Vec<Token>> {
    text.split_whitespace()
        .map(|s| s.parse::<Token>().map_err(Error::Encoding))
        .collect()
}

pub fn join_symbols(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}
