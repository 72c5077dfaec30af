use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data_err, NavError, Result};

/// Grid coordinate, `row` grows downwards (+y), `col` rightwards (+x).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// World-space centre of the cell.
    pub fn center(self) -> [f64; 2] {
        [self.col as f64 + 0.5, self.row as f64 + 0.5]
    }

    /// Cell containing world point `(x, y)`; `None` for negative coordinates.
    pub fn containing(x: f64, y: f64) -> Option<Self> {
        if x < 0.0 || y < 0.0 || !x.is_finite() || !y.is_finite() {
            return None;
        }
        Some(Self::new(y.floor() as usize, x.floor() as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FruitKind {
    Apple,
    Strawberry,
}

impl FruitKind {
    pub fn reward(self) -> f32 {
        match self {
            FruitKind::Apple => 1.0,
            FruitKind::Strawberry => 2.0,
        }
    }
}

pub const GOAL_REWARD: f32 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MazeKind {
    StaticSmall,
    RandomSmall,
    StaticLarge,
    RandomLarge,
    #[serde(rename = "imaze")]
    IMaze,
    /// 5x5 open room with a fixed goal, used for quick experiments.
    Mini,
}

impl MazeKind {
    pub const ALL: [MazeKind; 6] = [
        MazeKind::StaticSmall,
        MazeKind::RandomSmall,
        MazeKind::StaticLarge,
        MazeKind::RandomLarge,
        MazeKind::IMaze,
        MazeKind::Mini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MazeKind::StaticSmall => "static_small",
            MazeKind::RandomSmall => "random_small",
            MazeKind::StaticLarge => "static_large",
            MazeKind::RandomLarge => "random_large",
            MazeKind::IMaze => "imaze",
            MazeKind::Mini => "mini",
        }
    }

    /// Interior size (rows, cols), border walls excluded.
    pub fn interior(self) -> (usize, usize) {
        match self {
            MazeKind::StaticSmall | MazeKind::RandomSmall => (5, 10),
            MazeKind::StaticLarge | MazeKind::RandomLarge => (9, 15),
            MazeKind::IMaze => (IMAZE.len(), IMAZE[0].len()),
            MazeKind::Mini => (5, 5),
        }
    }

    /// Episode length in environment steps.
    pub fn budget(self) -> u32 {
        match self {
            MazeKind::StaticSmall | MazeKind::RandomSmall | MazeKind::IMaze => 3600,
            MazeKind::StaticLarge | MazeKind::RandomLarge => 10800,
            MazeKind::Mini => 900,
        }
    }

    /// Goal and fruit are resampled on every episode.
    pub fn random_goal(self) -> bool {
        matches!(self, MazeKind::RandomSmall | MazeKind::RandomLarge)
    }
}

impl fmt::Display for MazeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MazeKind {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Self> {
        MazeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NavError::Config(format!("unknown maze kind `{s}`")))
    }
}

const IMAZE: [&str; 11] = [
    "...............",
    "..####...####..",
    "..####...####..",
    "######...######",
    "######...######",
    "####.......####",
    "######...######",
    "######...######",
    "..####...####..",
    "..####...####..",
    "...............",
];

/// Fraction of floor cells carrying an apple in the generated kinds.
pub const APPLE_DENSITY: f64 = 0.15;

/// Number of wall-texture bases; the low nibble of a face texture id.
pub const NUM_BASE_TEXTURES: u8 = 8;
/// Number of cue decals (plus "none"); the high nibble of a face texture id.
pub const NUM_DECALS: u8 = 5;

/// Static geometry and reward placements of one maze.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeLayout {
    pub kind: MazeKind,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    walls: Vec<bool>,
    /// Texture id per cell and face (north, east, south, west); only wall cells are drawn.
    pub face_textures: Vec<[u8; 4]>,
    /// Palette index for floor and ceiling colours.
    pub palette: u8,
    pub spawn_cells: Vec<Cell>,
    pub goal_cells: Vec<Cell>,
    pub fruit: Vec<(Cell, FruitKind)>,
    floor_ids: Vec<Option<usize>>,
    floor_cells: Vec<Cell>,
}

impl MazeLayout {
    fn from_grid(
        kind: MazeKind,
        seed: u64,
        walls: Vec<Vec<bool>>,
        spawn_cells: Vec<Cell>,
        goal_cells: Vec<Cell>,
        fruit: Vec<(Cell, FruitKind)>,
    ) -> Result<Self> {
        let rows = walls.len();
        let cols = walls.first().map_or(0, Vec::len);
        if rows < 3 || cols < 3 || walls.iter().any(|r| r.len() != cols) {
            return data_err("maze grid must be a rectangle of at least 3x3");
        }
        let walls: Vec<bool> = walls.into_iter().flatten().collect();
        let mut floor_ids = vec![None; rows * cols];
        let mut floor_cells = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let border = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
                if border && !walls[r * cols + c] {
                    return data_err(format!("border cell ({r}, {c}) must be a wall"));
                }
                if !walls[r * cols + c] {
                    floor_ids[r * cols + c] = Some(floor_cells.len());
                    floor_cells.push(Cell::new(r, c));
                }
            }
        }
        let mut layout = Self {
            kind,
            seed,
            rows,
            cols,
            walls,
            face_textures: Vec::new(),
            palette: 0,
            spawn_cells,
            goal_cells,
            fruit,
            floor_ids,
            floor_cells,
        };
        layout.validate()?;
        layout.paint();
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        if self.floor_cells.is_empty() {
            return data_err("maze has no floor");
        }
        if !self.is_connected() {
            return data_err("floor cells are not all reachable from each other");
        }
        if self.spawn_cells.is_empty() || self.goal_cells.is_empty() {
            return data_err("maze needs at least one spawn cell and one goal cell");
        }
        let all = self.spawn_cells.iter().chain(&self.goal_cells).chain(self.fruit.iter().map(|(c, _)| c));
        for &c in all {
            if !self.is_floor(c) {
                return data_err(format!("marked cell ({}, {}) is not floor", c.row, c.col));
            }
        }
        Ok(())
    }

    /// Deterministic per-face textures derived from the seed: each outer side
    /// of the maze gets its own base texture and a sparse set of faces carry
    /// cue decals.
    fn paint(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7e57_u64);
        let mut bases: Vec<u8> = (0..NUM_BASE_TEXTURES).collect();
        bases.shuffle(&mut rng);
        self.palette = rng.random_range(0..4);
        let decal_p = if self.kind == MazeKind::IMaze { 0.04 } else { 0.15 };
        let (rows, cols) = (self.rows as f64, self.cols as f64);
        self.face_textures = (0..self.rows * self.cols)
            .map(|i| {
                let (r, c) = ((i / self.cols) as f64 + 0.5, (i % self.cols) as f64 + 0.5);
                // quadrant of the maze picks the base, so opposite walls differ
                let q = usize::from(r > rows / 2.0) * 2 + usize::from(c > cols / 2.0);
                let mut faces = [0u8; 4];
                for (f, face) in faces.iter_mut().enumerate() {
                    let base = bases[(q + f) % bases.len()];
                    let decal = if rng.random_bool(decal_p) { rng.random_range(1..NUM_DECALS) } else { 0 };
                    *face = base | (decal << 4);
                }
                faces
            })
            .collect();
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        c.row >= self.rows || c.col >= self.cols || self.walls[c.row * self.cols + c.col]
    }

    /// Wall test for signed coordinates; everything outside the grid is wall.
    pub fn is_wall_at(&self, row: i64, col: i64) -> bool {
        row < 0 || col < 0 || self.is_wall(Cell::new(row as usize, col as usize))
    }

    pub fn is_floor(&self, c: Cell) -> bool {
        !self.is_wall(c)
    }

    pub fn num_floor(&self) -> usize {
        self.floor_cells.len()
    }

    /// Floor cells in row-major order; the position in this slice is the cell id.
    pub fn floor_cells(&self) -> &[Cell] {
        &self.floor_cells
    }

    pub fn floor_id(&self, c: Cell) -> Option<usize> {
        if c.row >= self.rows || c.col >= self.cols {
            return None;
        }
        self.floor_ids[c.row * self.cols + c.col]
    }

    pub fn budget(&self) -> u32 {
        self.kind.budget()
    }

    pub fn texture(&self, c: Cell, face: usize) -> u8 {
        self.face_textures[c.row * self.cols + c.col][face]
    }

    pub fn set_texture(&mut self, c: Cell, face: usize, tex: u8) {
        self.face_textures[c.row * self.cols + c.col][face] = tex;
    }

    /// Number of floor cells reachable from the first floor cell by 4-connected moves.
    pub fn reachable_from(&self, start: Cell) -> usize {
        if self.is_wall(start) {
            return 0;
        }
        let mut seen = vec![false; self.rows * self.cols];
        let mut queue = VecDeque::from([start]);
        seen[start.row * self.cols + start.col] = true;
        let mut count = 0;
        while let Some(c) = queue.pop_front() {
            count += 1;
            let neighbours = [(c.row + 1, c.col), (c.row - 1, c.col), (c.row, c.col + 1), (c.row, c.col - 1)];
            for (r, cc) in neighbours {
                let n = Cell::new(r, cc);
                if self.is_floor(n) && !seen[r * self.cols + cc] {
                    seen[r * self.cols + cc] = true;
                    queue.push_back(n);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.floor_cells.first().is_some_and(|&c| self.reachable_from(c) == self.floor_cells.len())
    }

    /// Plain-text form: a header line followed by one line per grid row.
    pub fn to_text(&self) -> String {
        let mut out = format!("kind={} seed={}\n", self.kind, self.seed);
        let mut chars = vec![b'.'; self.rows * self.cols];
        for (i, w) in self.walls.iter().enumerate() {
            if *w {
                chars[i] = b'#';
            }
        }
        if !self.kind.random_goal() {
            let at = |c: Cell| c.row * self.cols + c.col;
            for &c in &self.spawn_cells {
                chars[at(c)] = b'S';
            }
            for &(c, k) in &self.fruit {
                chars[at(c)] = if k == FruitKind::Apple { b'A' } else { b'B' };
            }
            for &c in &self.goal_cells {
                chars[at(c)] = b'G';
            }
        }
        for row in chars.chunks(self.cols) {
            out.push_str(std::str::from_utf8(row).expect("ascii"));
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`MazeLayout::to_text`]. In random-goal
    /// kinds every floor cell is both a spawn and a goal candidate and role
    /// marks are ignored; other kinds need explicit `S` and `G` marks.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim_end).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| NavError::Data("empty layout".into()))?;
        let (mut kind, mut seed) = (None, None);
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("kind", v)) => kind = Some(v.parse::<MazeKind>().map_err(|e| NavError::Data(e.to_string()))?),
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|_| NavError::Data(format!("bad seed `{v}`")))?)
                }
                _ => return data_err(format!("unexpected header field `{field}`")),
            }
        }
        let (Some(kind), Some(seed)) = (kind, seed) else {
            return data_err("layout header needs kind= and seed=");
        };
        let mut walls = Vec::new();
        let (mut spawn, mut goal, mut fruit) = (Vec::new(), Vec::new(), Vec::new());
        for (r, line) in lines.enumerate() {
            let mut row = Vec::with_capacity(line.len());
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::new(r, c);
                row.push(ch == '#');
                match ch {
                    '#' | '.' => {}
                    'S' => spawn.push(cell),
                    'G' => goal.push(cell),
                    'A' => fruit.push((cell, FruitKind::Apple)),
                    'B' => fruit.push((cell, FruitKind::Strawberry)),
                    other => return data_err(format!("unexpected character `{other}` at row {r}, col {c}")),
                }
            }
            walls.push(row);
        }
        if kind.random_goal() {
            let floor: Vec<Cell> = floor_of(&walls);
            return MazeLayout::from_grid(kind, seed, walls, floor.clone(), floor, Vec::new());
        }
        MazeLayout::from_grid(kind, seed, walls, spawn, goal, fruit)
    }
}

fn floor_of(walls: &[Vec<bool>]) -> Vec<Cell> {
    let mut out = Vec::new();
    for (r, row) in walls.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            if !w {
                out.push(Cell::new(r, c));
            }
        }
    }
    out
}

fn bordered(interior: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let cols = interior[0].len() + 2;
    let mut grid = vec![vec![true; cols]];
    for row in interior {
        let mut r = vec![true];
        r.extend_from_slice(row);
        r.push(true);
        grid.push(r);
    }
    grid.push(vec![true; cols]);
    grid
}

/// Builds the layout for `kind`. The same `(kind, seed)` always yields the
/// same layout.
pub fn generate_layout(kind: MazeKind, seed: u64) -> MazeLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = match kind {
        MazeKind::IMaze => {
            let interior: Vec<Vec<bool>> = IMAZE.iter().map(|r| r.bytes().map(|b| b == b'#').collect()).collect();
            let walls = bordered(&interior);
            let at = |r: usize, c: usize| Cell::new(r + 1, c + 1);
            let goals = vec![at(2, 0), at(2, 14), at(8, 0), at(8, 14)];
            let apples: Vec<_> = (1..10).step_by(2).map(|r| (at(r, 7), FruitKind::Apple)).collect();
            let spawn: Vec<_> = (1..10).flat_map(|r| [at(r, 6), at(r, 8)]).collect();
            MazeLayout::from_grid(kind, seed, walls, spawn, goals, apples)
        }
        _ => {
            let (rows, cols) = kind.interior();
            let walls = bordered(&vec![vec![false; cols]; rows]);
            let floor = floor_of(&walls);
            if kind.random_goal() {
                MazeLayout::from_grid(kind, seed, walls, floor.clone(), floor, Vec::new())
            } else {
                let mut cells = floor;
                cells.shuffle(&mut rng);
                let goal = cells.pop().expect("floor");
                let fruit = if kind == MazeKind::Mini { Vec::new() } else { fixed_fruit(kind, &mut cells) };
                let taken: Vec<Cell> = fruit.iter().map(|(c, _)| *c).collect();
                let mut spawn: Vec<Cell> = cells.into_iter().filter(|c| !taken.contains(c)).collect();
                spawn.sort();
                MazeLayout::from_grid(kind, seed, walls, spawn, vec![goal], fruit)
            }
        }
    };
    layout.expect("built-in layouts are valid")
}

fn fixed_fruit(kind: MazeKind, shuffled: &mut Vec<Cell>) -> Vec<(Cell, FruitKind)> {
    let total = shuffled.len() + 1;
    let n_apples = (total as f64 * APPLE_DENSITY).round() as usize;
    let n_straw = if matches!(kind, MazeKind::StaticLarge | MazeKind::RandomLarge) { 2 } else { 0 };
    let mut fruit: Vec<_> = shuffled.drain(..n_apples).map(|c| (c, FruitKind::Apple)).collect();
    fruit.extend(shuffled.drain(..n_straw).map(|c| (c, FruitKind::Strawberry)));
    fruit.sort_by_key(|(c, _)| *c);
    fruit
}

/// Per-episode goal, fruit and spawn sets.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodePlan {
    pub goal: Cell,
    pub fruit: Vec<(Cell, FruitKind)>,
    pub spawn: Vec<Cell>,
}

/// Draws the goal and fruit for one episode. Static kinds keep the layout's
/// placements; random kinds redraw goal and apples every episode.
pub fn plan_episode<R: Rng>(layout: &MazeLayout, rng: &mut R) -> EpisodePlan {
    let goal = *layout.goal_cells.choose(rng).expect("validated layout has goals");
    let fruit = if layout.kind.random_goal() {
        let mut cells: Vec<Cell> = layout.floor_cells().iter().copied().filter(|&c| c != goal).collect();
        cells.shuffle(rng);
        fixed_fruit(layout.kind, &mut cells)
    } else {
        layout.fruit.clone()
    };
    let mut spawn: Vec<Cell> =
        layout.spawn_cells.iter().copied().filter(|&c| c != goal && !fruit.iter().any(|(f, _)| *f == c)).collect();
    if spawn.is_empty() {
        spawn = layout.spawn_cells.iter().copied().filter(|&c| c != goal).collect();
    }
    if spawn.is_empty() {
        spawn = layout.floor_cells().iter().copied().filter(|&c| c != goal).collect();
    }
    EpisodePlan { goal, fruit, spawn }
}
