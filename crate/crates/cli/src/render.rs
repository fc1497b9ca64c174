//! ASCII and SVG pictures of a recorded rollout on its grid.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use clap::ValueEnum;
use delib_core::gridworld::{Cell, GridLayout};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStep {
    pub row: usize,
    pub col: usize,
    pub option: usize,
    pub action: usize,
    /// The option ended on arrival in `(next_row, next_col)`.
    pub switched: bool,
    pub next_row: usize,
    pub next_col: usize,
}

impl CellStep {
    pub fn cell(&self) -> Cell {
        (self.row, self.col)
    }

    pub fn next_cell(&self) -> Cell {
        (self.next_row, self.next_col)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub steps: Vec<CellStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RenderMode {
    /// Colour each visited cell by the option acting there.
    Options,
    /// Mark the cells where an option ended.
    Terminations,
}

fn check_cell(layout: &GridLayout, cell: Cell, step: usize) -> Result<()> {
    if cell.0 >= layout.rows || cell.1 >= layout.cols {
        bail!("step {step}: cell {cell:?} is outside the {}x{} grid", layout.rows, layout.cols);
    }
    if layout.is_wall(cell) {
        bail!("step {step}: cell {cell:?} is a wall");
    }
    Ok(())
}

pub fn validate_trajectory(layout: &GridLayout, trajectory: &TrajectoryFile) -> Result<()> {
    for (i, step) in trajectory.steps.iter().enumerate() {
        check_cell(layout, step.cell(), i)?;
        check_cell(layout, step.next_cell(), i)?;
    }
    Ok(())
}

/// Fraction of switches that land on a cell with three or more open
/// neighbours; `None` when the rollout has no switch.
pub fn intersection_share(layout: &GridLayout, trajectory: &TrajectoryFile) -> Result<Option<f64>> {
    validate_trajectory(layout, trajectory)?;
    let switches: Vec<Cell> = trajectory
        .steps
        .iter()
        .filter(|s| s.switched)
        .map(CellStep::next_cell)
        .collect();
    if switches.is_empty() {
        return Ok(None);
    }
    let at = switches.iter().filter(|&&c| layout.degree(c) >= 3).count();
    Ok(Some(at as f64 / switches.len() as f64))
}

/// Per-cell marks: the last option seen on the cell, and whether the policy
/// over options chose there (the first cell, or an option ended there).
fn cell_marks(layout: &GridLayout, trajectory: &TrajectoryFile) -> (Vec<Option<usize>>, Vec<bool>) {
    let mut option = vec![None; layout.rows * layout.cols];
    let mut switched = vec![false; layout.rows * layout.cols];
    if let Some(first) = trajectory.steps.first() {
        switched[first.row * layout.cols + first.col] = true;
    }
    for step in &trajectory.steps {
        option[step.row * layout.cols + step.col] = Some(step.option);
        if step.switched {
            switched[step.next_row * layout.cols + step.next_col] = true;
        }
    }
    (option, switched)
}

/// Walls `#`, goal `G`, unvisited floor `.`. Options mode writes the option
/// index (base 36); terminations mode writes `o` on visited cells and `x`
/// where an option was chosen.
pub fn render_ascii(layout: &GridLayout, trajectory: &TrajectoryFile, mode: RenderMode) -> Result<String> {
    validate_trajectory(layout, trajectory)?;
    let (option, switched) = cell_marks(layout, trajectory);
    let mut out = String::with_capacity((layout.cols + 1) * layout.rows);
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let i = r * layout.cols + c;
            let ch = if layout.is_wall((r, c)) {
                '#'
            } else {
                match mode {
                    RenderMode::Options => match option[i] {
                        Some(o) => std::char::from_digit((o % 36) as u32, 36).unwrap_or('?'),
                        None if (r, c) == layout.goal => 'G',
                        None => '.',
                    },
                    RenderMode::Terminations if switched[i] => 'x',
                    RenderMode::Terminations if (r, c) == layout.goal => 'G',
                    RenderMode::Terminations if option[i].is_some() => 'o',
                    RenderMode::Terminations => '.',
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    Ok(out)
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f",
];
const CELL: usize = 24;

pub fn render_svg(layout: &GridLayout, trajectory: &TrajectoryFile, mode: RenderMode) -> Result<String> {
    validate_trajectory(layout, trajectory)?;
    let (option, switched) = cell_marks(layout, trajectory);
    let (w, h) = (layout.cols * CELL, layout.rows * CELL);
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#)?;
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            let i = r * layout.cols + c;
            let fill = if layout.is_wall((r, c)) {
                "#333333"
            } else if mode == RenderMode::Options {
                option[i].map_or("#ffffff", |o| PALETTE[o % PALETTE.len()])
            } else if option[i].is_some() {
                "#dddddd"
            } else {
                "#ffffff"
            };
            writeln!(
                out,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#999999" stroke-width="0.5"/>"##,
                c * CELL,
                r * CELL
            )?;
        }
    }
    let centre = |(r, c): Cell| (c * CELL + CELL / 2, r * CELL + CELL / 2);
    if let Some(first) = trajectory.steps.first() {
        let mut points = vec![centre(first.cell())];
        points.extend(trajectory.steps.iter().map(|s| centre(s.next_cell())));
        let path: Vec<String> = points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#000000" stroke-opacity="0.5" stroke-width="2"/>"##,
            path.join(" ")
        )?;
    }
    let (gx, gy) = centre(layout.goal);
    writeln!(
        out,
        r##"<text x="{gx}" y="{gy}" font-size="14" text-anchor="middle" dominant-baseline="central">G</text>"##
    )?;
    if mode == RenderMode::Terminations {
        for r in 0..layout.rows {
            for c in 0..layout.cols {
                if switched[r * layout.cols + c] {
                    let (x, y) = centre((r, c));
                    writeln!(out, r##"<circle cx="{x}" cy="{y}" r="6" fill="#e15759"/>"##)?;
                }
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}
