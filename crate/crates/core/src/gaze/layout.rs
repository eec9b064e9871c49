use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fixation::valid_samples;
use super::GazeSample;

pub const GRID_COLUMNS: usize = 5;
pub const GRID_ROWS: usize = 3;
pub const DEFAULT_SCREEN: (f64, f64) = (1280.0, 1024.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    /// Half-open containment: `[x, x + w) x [y, y + h)`.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub image: String,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollageLayout {
    pub screen: (f64, f64),
    pub cells: Vec<Cell>,
}

impl CollageLayout {
    /// Row-major 5x3 tiling of the screen; the image in position `k` goes
    /// to row `k / 5`, column `k % 5`.
    pub fn grid(images: &[String], screen: (f64, f64)) -> Self {
        let w = screen.0 / GRID_COLUMNS as f64;
        let h = screen.1 / GRID_ROWS as f64;
        let cells = images
            .iter()
            .enumerate()
            .map(|(k, id)| Cell {
                image: id.clone(),
                rect: Rect {
                    x: (k % GRID_COLUMNS) as f64 * w,
                    y: (k / GRID_COLUMNS) as f64 * h,
                    w,
                    h,
                },
            })
            .collect();
        CollageLayout { screen, cells }
    }

    pub fn cell_at(&self, x: f64, y: f64) -> Option<usize> {
        self.cells.iter().position(|c| c.rect.contains(x, y))
    }

    pub fn cell(&self, image: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.image == image)
    }
}

/// A maximal run of consecutive valid samples inside one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub first: usize,
    pub last: usize,
    pub entry: f64,
    pub exit: f64,
}

impl Visit {
    pub fn duration(&self) -> f64 {
        self.exit - self.entry
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageViewing {
    /// Indices into the valid-sample stream.
    pub samples: Vec<usize>,
    pub visits: Vec<Visit>,
}

impl ImageViewing {
    pub fn viewed(&self) -> bool {
        !self.samples.is_empty()
    }

    /// Gaps between consecutive visits, in ms.
    pub fn breaks(&self) -> Vec<f64> {
        self.visits.windows(2).map(|w| w[1].entry - w[0].exit).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamAssignment {
    pub samples: Vec<GazeSample>,
    /// Cell index of each valid sample, `None` when outside every cell.
    pub cell_of: Vec<Option<usize>>,
    pub per_image: BTreeMap<String, ImageViewing>,
}

impl StreamAssignment {
    pub fn outside(&self) -> impl Iterator<Item = usize> + '_ {
        self.cell_of
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.is_none().then_some(i))
    }
}

/// Assigns each valid sample to at most one cell and segments visits.
pub fn assign_to_images(stream: &[GazeSample], layout: &CollageLayout) -> StreamAssignment {
    let samples = valid_samples(stream);
    let cell_of: Vec<_> = samples.iter().map(|s| layout.cell_at(s.x, s.y)).collect();
    let mut per_image: BTreeMap<String, ImageViewing> = layout
        .cells
        .iter()
        .map(|c| (c.image.clone(), ImageViewing::default()))
        .collect();

    let mut i = 0;
    while i < samples.len() {
        let Some(cell) = cell_of[i] else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j + 1 < samples.len() && cell_of[j + 1] == Some(cell) {
            j += 1;
        }
        let viewing = per_image
            .get_mut(&layout.cells[cell].image)
            .expect("every cell has an entry");
        viewing.samples.extend(i..=j);
        viewing.visits.push(Visit {
            first: i,
            last: j,
            entry: samples[i].t,
            exit: samples[j].t,
        });
        i = j + 1;
    }

    StreamAssignment {
        samples,
        cell_of,
        per_image,
    }
}
