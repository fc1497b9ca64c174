//! Gridworld MDPs: the classic four-rooms layout and corridor mazes whose
//! junctions act as natural decision points.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;

pub const NORTH: usize = 0;
pub const SOUTH: usize = 1;
pub const EAST: usize = 2;
pub const WEST: usize = 3;
pub const N_MOVES: usize = 4;

const MOVES: [(isize, isize); N_MOVES] = [(-1, 0), (1, 0), (0, 1), (0, -1)];

pub const DEFAULT_SLIP: f64 = 1.0 / 3.0;

/// The canonical four-rooms map: an 11x11 interior inside a wall border.
pub const FOUR_ROOMS: &str = "\
#############
#S    #     #
#     #     #
#           #
#     #     #
#     #     #
## ####     #
#     ### ###
#     #     #
#     #     #
#           #
#     #    G#
#############
";

pub type Cell = (usize, usize);

/// Walls, goal and dynamics parameters of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `true` where the cell is blocked.
    pub walls: Vec<bool>,
    pub goal: Cell,
    pub start: Option<Cell>,
    pub slip: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
}

impl GridLayout {
    /// Parses an ASCII map: `#` wall, `.` or space floor, `G` goal, `S` start.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.trim().is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::InvalidLayout("empty layout".into()));
        }
        let rows = lines.len();
        let cols = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
        let mut walls = vec![true; rows * cols];
        let mut goal = None;
        let mut start = None;
        for (r, line) in lines.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                let open = match ch {
                    '#' => false,
                    '.' | ' ' => true,
                    'G' => {
                        if goal.replace((r, c)).is_some() {
                            return Err(Error::InvalidLayout("more than one goal".into()));
                        }
                        true
                    }
                    'S' => {
                        if start.replace((r, c)).is_some() {
                            return Err(Error::InvalidLayout("more than one start".into()));
                        }
                        true
                    }
                    other => {
                        return Err(Error::InvalidLayout(format!(
                            "unexpected character {other:?} at row {r}, column {c}"
                        )))
                    }
                };
                walls[r * cols + c] = !open;
            }
        }
        let goal = goal.ok_or_else(|| Error::InvalidLayout("layout has no goal".into()))?;
        Ok(Self {
            rows,
            cols,
            walls,
            goal,
            start,
            slip: DEFAULT_SLIP,
            step_reward: 0.0,
            goal_reward: 1.0,
        })
    }

    pub fn four_rooms() -> Self {
        Self::parse(FOUR_ROOMS).expect("built-in layout parses")
    }

    /// A grid of `n_horizontal` by `n_vertical` straight corridors, `spacing`
    /// cells apart, inside a wall border. Start top-left, goal bottom-right.
    pub fn ladder(n_horizontal: usize, n_vertical: usize, spacing: usize) -> Self {
        assert!(n_horizontal >= 1 && n_vertical >= 1 && spacing >= 1);
        let rows = (n_horizontal - 1) * spacing + 3;
        let cols = (n_vertical - 1) * spacing + 3;
        let mut walls = vec![true; rows * cols];
        for r in 1..rows - 1 {
            for c in 1..cols - 1 {
                if (r - 1) % spacing == 0 || (c - 1) % spacing == 0 {
                    walls[r * cols + c] = false;
                }
            }
        }
        Self {
            rows,
            cols,
            walls,
            goal: (rows - 2, cols - 2),
            start: Some((1, 1)),
            slip: DEFAULT_SLIP,
            step_reward: 0.0,
            goal_reward: 1.0,
        }
    }

    /// The default intersection maze: three horizontal by three vertical
    /// corridors.
    pub fn default_maze() -> Self {
        Self::ladder(3, 3, 4)
    }

    /// A plus-shaped corridor with arms of length `arm` around one junction.
    pub fn plus(arm: usize) -> Self {
        assert!(arm >= 1);
        let size = 2 * arm + 3;
        let centre = arm + 1;
        let mut walls = vec![true; size * size];
        for i in 1..size - 1 {
            walls[centre * size + i] = false;
            walls[i * size + centre] = false;
        }
        Self {
            rows: size,
            cols: size,
            walls,
            goal: (centre, size - 2),
            start: Some((centre, 1)),
            slip: DEFAULT_SLIP,
            step_reward: 0.0,
            goal_reward: 1.0,
        }
    }

    pub fn with_slip(mut self, slip: f64) -> Self {
        self.slip = slip;
        self
    }

    pub fn is_wall(&self, (r, c): Cell) -> bool {
        r >= self.rows || c >= self.cols || self.walls[r * self.cols + c]
    }

    fn neighbour(&self, (r, c): Cell, action: usize) -> Option<Cell> {
        let (dr, dc) = MOVES[action];
        let nr = r.checked_add_signed(dr)?;
        let nc = c.checked_add_signed(dc)?;
        (!self.is_wall((nr, nc))).then_some((nr, nc))
    }

    /// Walkable cells in row-major order; position in this list is the state index.
    pub fn walkable_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&cell| !self.is_wall(cell))
            .collect()
    }

    /// Number of walkable 4-neighbours of a cell.
    pub fn degree(&self, cell: Cell) -> usize {
        (0..N_MOVES).filter(|&a| self.neighbour(cell, a).is_some()).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.walls.len() != self.rows * self.cols {
            return Err(Error::InvalidLayout("wall mask has wrong size".into()));
        }
        if !(0.0..1.0).contains(&self.slip) {
            return Err(Error::InvalidLayout(format!("slip {} outside [0, 1)", self.slip)));
        }
        if self.is_wall(self.goal) {
            return Err(Error::InvalidLayout("goal is not walkable".into()));
        }
        if let Some(start) = self.start {
            if self.is_wall(start) {
                return Err(Error::InvalidLayout("start is not walkable".into()));
            }
        }
        let cells = self.walkable_cells();
        let mut seen = vec![false; self.rows * self.cols];
        let mut queue = VecDeque::from([self.goal]);
        seen[self.goal.0 * self.cols + self.goal.1] = true;
        let mut reached = 1;
        while let Some(cell) = queue.pop_front() {
            for a in 0..N_MOVES {
                if let Some(next) = self.neighbour(cell, a) {
                    let k = next.0 * self.cols + next.1;
                    if !seen[k] {
                        seen[k] = true;
                        reached += 1;
                        queue.push_back(next);
                    }
                }
            }
        }
        if reached != cells.len() {
            return Err(Error::InvalidLayout(format!(
                "walkable cells are disconnected ({reached} of {} reachable from the goal)",
                cells.len()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for GridLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let ch = if (r, c) == self.goal {
                    'G'
                } else if Some((r, c)) == self.start {
                    'S'
                } else if self.is_wall((r, c)) {
                    '#'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A gridworld MDP together with its cell/state correspondence.
#[derive(Debug, Clone)]
pub struct GridWorld {
    pub layout: GridLayout,
    pub mdp: Mdp,
    cells: Vec<Cell>,
    state_of: Vec<Option<usize>>,
    pub goal_state: usize,
    pub start_state: Option<usize>,
}

impl GridWorld {
    /// Builds the MDP for a layout. Moving into a wall keeps the agent in
    /// place; with probability `slip` the action is replaced by a uniformly
    /// random one. Entering the goal pays `goal_reward`; the goal is absorbing
    /// with zero reward.
    pub fn new(layout: GridLayout, gamma: f64) -> Result<Self> {
        layout.validate()?;
        let cells = layout.walkable_cells();
        let n = cells.len();
        let mut state_of = vec![None; layout.rows * layout.cols];
        for (s, &(r, c)) in cells.iter().enumerate() {
            state_of[r * layout.cols + c] = Some(s);
        }
        let lookup = |cell: Cell| state_of[cell.0 * layout.cols + cell.1].expect("walkable");
        let goal_state = lookup(layout.goal);
        let start_state = layout.start.map(lookup);

        let mut transition = vec![0.0; n * N_MOVES * n];
        let mut reward = vec![0.0; n * N_MOVES];
        for (s, &cell) in cells.iter().enumerate() {
            for a in 0..N_MOVES {
                let row = &mut transition[(s * N_MOVES + a) * n..(s * N_MOVES + a + 1) * n];
                if s == goal_state {
                    row[s] = 1.0;
                    continue;
                }
                for actual in 0..N_MOVES {
                    let p = if actual == a {
                        1.0 - layout.slip + layout.slip / N_MOVES as f64
                    } else {
                        layout.slip / N_MOVES as f64
                    };
                    if p == 0.0 {
                        continue;
                    }
                    let next = layout.neighbour(cell, actual).map_or(s, lookup);
                    row[next] += p;
                }
                reward[s * N_MOVES + a] = layout.step_reward + layout.goal_reward * row[goal_state];
            }
        }
        let initial = match start_state {
            Some(start) => {
                let mut d = vec![0.0; n];
                d[start] = 1.0;
                d
            }
            None => {
                let w = 1.0 / (n - 1).max(1) as f64;
                (0..n).map(|s| if s == goal_state && n > 1 { 0.0 } else { w }).collect()
            }
        };
        let mdp = Mdp::new(n, N_MOVES, gamma, transition, reward, initial)?;
        Ok(Self {
            layout,
            mdp,
            cells,
            state_of,
            goal_state,
            start_state,
        })
    }

    pub fn n_states(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, s: usize) -> Option<Cell> {
        self.cells.get(s).copied()
    }

    pub fn state(&self, cell: Cell) -> Option<usize> {
        if cell.0 >= self.layout.rows || cell.1 >= self.layout.cols {
            return None;
        }
        self.state_of[cell.0 * self.layout.cols + cell.1]
    }

    /// `true` for absorbing states that end an episode.
    pub fn terminal_mask(&self) -> Vec<bool> {
        (0..self.n_states()).map(|s| s == self.goal_state).collect()
    }

    /// States whose cell has at least three walkable neighbours.
    pub fn intersections(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &cell)| self.layout.degree(cell) >= 3)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn is_intersection(&self, s: usize) -> bool {
        self.cell(s).is_some_and(|cell| self.layout.degree(cell) >= 3)
    }
}

/// The 104-cell four-rooms MDP.
pub fn build_four_rooms(slip: f64, gamma: f64) -> Result<GridWorld> {
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::InvalidLayout(format!("slip {slip} outside [0, 1)")));
    }
    GridWorld::new(GridLayout::four_rooms().with_slip(slip), gamma)
}

/// Builds a corridor maze. Every walkable cell must lie on a corridor: the
/// layout is rejected if some open cell has more than two open neighbours on
/// a 2x2 block, i.e. if it contains open rooms rather than corridors.
pub fn build_intersection_maze(layout: GridLayout, gamma: f64) -> Result<GridWorld> {
    layout.validate()?;
    for r in 0..layout.rows.saturating_sub(1) {
        for c in 0..layout.cols.saturating_sub(1) {
            let block = [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)];
            if block.iter().all(|&cell| !layout.is_wall(cell)) {
                return Err(Error::InvalidLayout(format!(
                    "open 2x2 block at row {r}, column {c}: not a corridor maze"
                )));
            }
        }
    }
    GridWorld::new(layout, gamma)
}
