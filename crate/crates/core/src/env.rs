//! Procedurally generated gridworld with a controllable distribution shift.
//!
//! A task is a square room bordered by walls. The agent starts in the
//! top-left quadrant and must reach a goal in the bottom-right quadrant while
//! avoiding hazard cells, which end the episode with zero reward. Policies see
//! only an egocentric window of fixed radius, so one parameterisation runs on
//! every grid size.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const ACTION_COUNT: usize = 4;
pub const CHANNELS: usize = 3;
pub const DEFAULT_WINDOW_RADIUS: usize = 3;
pub const MIN_GRID_SIZE: usize = 5;
pub const MAX_LAYOUT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    /// `(drow, dcol)` displacement.
    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// A single task. The layout is a pure function of these fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub grid_size: usize,
    pub hazard_density: f64,
    pub max_steps: usize,
    pub layout_seed: u64,
}

impl TaskSpec {
    pub fn new(grid_size: usize, hazard_density: f64, layout_seed: u64) -> Self {
        TaskSpec {
            grid_size,
            hazard_density,
            max_steps: 4 * grid_size,
            layout_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < MIN_GRID_SIZE {
            return Err(Error::Config(format!(
                "grid_size {} below minimum {MIN_GRID_SIZE}",
                self.grid_size
            )));
        }
        if !(0.0..=1.0).contains(&self.hazard_density) {
            return Err(Error::Config(format!(
                "hazard_density {} outside [0, 1]",
                self.hazard_density
            )));
        }
        if self.max_steps < 4 * self.grid_size {
            return Err(Error::Config(format!(
                "max_steps {} below 4 * grid_size",
                self.max_steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistName {
    Train,
    Test,
}

impl fmt::Display for DistName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistName::Train => f.write_str("train"),
            DistName::Test => f.write_str("test"),
        }
    }
}

/// Sampler over tasks. Both ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDistribution {
    pub name: DistName,
    pub grid_size_range: (usize, usize),
    pub hazard_density_range: (f64, f64),
}

impl TaskDistribution {
    pub fn validate(&self) -> Result<()> {
        let (gl, gh) = self.grid_size_range;
        let (hl, hh) = self.hazard_density_range;
        if gl > gh || gl < MIN_GRID_SIZE {
            return Err(Error::Config(format!(
                "{}: grid_size_range ({gl}, {gh}) must be nonempty with minimum >= {MIN_GRID_SIZE}",
                self.name
            )));
        }
        if !(hl <= hh && (0.0..=1.0).contains(&hl) && (0.0..=1.0).contains(&hh)) {
            return Err(Error::Config(format!(
                "{}: hazard_density_range ({hl}, {hh}) must be a nonempty subinterval of [0, 1]",
                self.name
            )));
        }
        Ok(())
    }

    /// True when the two distributions do not overlap in at least one dimension.
    pub fn is_disjoint_from(&self, other: &TaskDistribution) -> bool {
        let (a0, a1) = self.grid_size_range;
        let (b0, b1) = other.grid_size_range;
        let (c0, c1) = self.hazard_density_range;
        let (d0, d1) = other.hazard_density_range;
        a1 < b0 || b1 < a0 || c1 < d0 || d1 < c0
    }
}

/// Draws a task from `dist`. Deterministic in `(dist, seed)`.
pub fn sample_task(dist: &TaskDistribution, seed: u64) -> Result<TaskSpec> {
    dist.validate()?;
    let mut rng = seed::rng(seed);
    let (gl, gh) = dist.grid_size_range;
    let (hl, hh) = dist.hazard_density_range;
    let grid_size = rng.random_range(gl..=gh);
    let hazard_density = if hl == hh { hl } else { rng.random_range(hl..=hh) };
    let spec = TaskSpec::new(grid_size, hazard_density, rng.random());
    // Surfaces unsatisfiable ranges here rather than at reset.
    Layout::generate(&spec)?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Wall,
    Hazard,
    Goal,
}

/// Concrete grid. Row-major, `(row, col)` coordinates, border cells are walls.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    size: usize,
    cells: Vec<Cell>,
    start: (usize, usize),
    goal: (usize, usize),
}

impl Layout {
    /// Rejection-samples hazard placements until the goal is reachable.
    pub fn generate(spec: &TaskSpec) -> Result<Layout> {
        spec.validate()?;
        let n = spec.grid_size;
        let interior = n - 2;
        let quadrant = (interior / 2).max(1);
        let mut rng = seed::rng(spec.layout_seed);
        for _ in 0..MAX_LAYOUT_ATTEMPTS {
            let start = (1 + rng.random_range(0..quadrant), 1 + rng.random_range(0..quadrant));
            let goal = (
                n - 2 - rng.random_range(0..quadrant),
                n - 2 - rng.random_range(0..quadrant),
            );
            let mut layout = Layout::empty(n, start, goal);
            for r in 1..n - 1 {
                for c in 1..n - 1 {
                    let hazard = rng.random::<f64>() < spec.hazard_density;
                    if hazard && (r, c) != start && (r, c) != goal {
                        layout.cells[r * n + c] = Cell::Hazard;
                    }
                }
            }
            if layout.shortest_path_len().is_some() {
                return Ok(layout);
            }
        }
        Err(Error::Generation {
            attempts: MAX_LAYOUT_ATTEMPTS,
            grid_size: n,
            hazard_density: spec.hazard_density,
        })
    }

    /// Walled room with no hazards.
    pub fn empty(size: usize, start: (usize, usize), goal: (usize, usize)) -> Layout {
        let mut cells = vec![Cell::Empty; size * size];
        for i in 0..size {
            cells[i] = Cell::Wall;
            cells[(size - 1) * size + i] = Cell::Wall;
            cells[i * size] = Cell::Wall;
            cells[i * size + size - 1] = Cell::Wall;
        }
        cells[goal.0 * size + goal.1] = Cell::Goal;
        Layout {
            size,
            cells,
            start,
            goal,
        }
    }

    pub fn set(&mut self, pos: (usize, usize), cell: Cell) {
        self.cells[pos.0 * self.size + pos.1] = cell;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn goal(&self) -> (usize, usize) {
        self.goal
    }

    /// Cells outside the grid read as walls.
    pub fn cell(&self, row: isize, col: isize) -> Cell {
        let n = self.size as isize;
        if row < 0 || col < 0 || row >= n || col >= n {
            Cell::Wall
        } else {
            self.cells[row as usize * self.size + col as usize]
        }
    }

    /// BFS over non-wall, non-hazard cells.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let n = self.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::new();
        dist[self.start.0 * n + self.start.1] = 0;
        queue.push_back(self.start);
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r * n + c];
            if (r, c) == self.goal {
                return Some(d);
            }
            for action in Action::ALL {
                let (dr, dc) = action.delta();
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                match self.cell(nr, nc) {
                    Cell::Wall | Cell::Hazard => continue,
                    Cell::Empty | Cell::Goal => {}
                }
                let idx = nr as usize * n + nc as usize;
                if dist[idx] == usize::MAX {
                    dist[idx] = d + 1;
                    queue.push_back((nr as usize, nc as usize));
                }
            }
        }
        None
    }
}

pub fn obs_dim(window_radius: usize) -> usize {
    let side = 2 * window_radius + 1;
    side * side * CHANNELS
}

/// Egocentric binary window, flattened channel-major (wall, hazard, goal).
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    radius: usize,
    values: Vec<f64>,
}

impl Observation {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Value of `channel` at window offset `(drow, dcol)` from the agent.
    pub fn at(&self, channel: usize, drow: isize, dcol: isize) -> f64 {
        let side = 2 * self.radius + 1;
        let r = (drow + self.radius as isize) as usize;
        let c = (dcol + self.radius as isize) as usize;
        self.values[channel * side * side + r * side + c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Goal,
    Hazard,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Steps taken so far in this episode.
    pub steps: usize,
    pub outcome: Option<Outcome>,
}

#[derive(Clone, Debug)]
pub struct GridEnv {
    layout: Layout,
    max_steps: usize,
    radius: usize,
    pos: (usize, usize),
    steps: usize,
    done: bool,
}

impl GridEnv {
    pub fn new(spec: &TaskSpec, window_radius: usize) -> Result<Self> {
        Ok(Self::from_layout(
            Layout::generate(spec)?,
            spec.max_steps,
            window_radius,
        ))
    }

    pub fn from_layout(layout: Layout, max_steps: usize, window_radius: usize) -> Self {
        let pos = layout.start;
        GridEnv {
            layout,
            max_steps,
            radius: window_radius,
            pos,
            steps: 0,
            done: false,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(self.radius)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self) -> Observation {
        self.pos = self.layout.start;
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (dr, dc) = action.delta();
        let (nr, nc) = (self.pos.0 as isize + dr, self.pos.1 as isize + dc);
        let target = self.layout.cell(nr, nc);
        if target != Cell::Wall {
            self.pos = (nr as usize, nc as usize);
        }
        self.steps += 1;

        let (reward, outcome) = match target {
            Cell::Goal => (
                1.0 - 0.9 * (self.steps as f64 / self.max_steps as f64),
                Some(Outcome::Goal),
            ),
            Cell::Hazard => (0.0, Some(Outcome::Hazard)),
            _ if self.steps >= self.max_steps => (0.0, Some(Outcome::Timeout)),
            _ => (0.0, None),
        };
        self.done = outcome.is_some();
        Ok(StepResult {
            observation: self.observe(),
            reward,
            done: self.done,
            steps: self.steps,
            outcome,
        })
    }

    fn observe(&self) -> Observation {
        let k = self.radius as isize;
        let side = 2 * self.radius + 1;
        let plane = side * side;
        let mut values = vec![0.0; plane * CHANNELS];
        for dr in -k..=k {
            for dc in -k..=k {
                let cell = self.layout.cell(self.pos.0 as isize + dr, self.pos.1 as isize + dc);
                let offset = (dr + k) as usize * side + (dc + k) as usize;
                let channel = match cell {
                    Cell::Wall => 0,
                    Cell::Hazard => 1,
                    Cell::Goal => 2,
                    Cell::Empty => continue,
                };
                values[channel * plane + offset] = 1.0;
            }
        }
        Observation {
            radius: self.radius,
            values,
        }
    }
}
