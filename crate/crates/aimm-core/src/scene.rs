//! Synthetic 2-D scene generation: rectangular buildings, one BS, one UE.
//!
//! Generation is fully deterministic given (seed, area_index): every draw
//! comes from a derived SplitMix64 stream, so datasets regenerate
//! byte-identically on any platform.

use crate::rng::{domain, SplitMix64};

/// Axis-aligned rectangle (building footprint).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }

    fn expanded(&self, pad: f64) -> Rect {
        Rect {
            x_min: self.x_min - pad,
            y_min: self.y_min - pad,
            x_max: self.x_max + pad,
            y_max: self.y_max + pad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// A generated area: square side, buildings, BS position and array axis
/// orientation, and the current UE position.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub side_length: f64,
    pub buildings: Vec<Rect>,
    pub bs_pos: Point,
    /// Orientation angle of the ULA axis, radians.
    pub bs_boresight: f64,
    pub ue_pos: Point,
}

const MIN_SIDE: f64 = 100.0;
const MAX_SIDE: f64 = 200.0;
const MIN_RECTS: u64 = 3;
const MAX_RECTS: u64 = 8;
const PLACEMENT_ATTEMPTS: usize = 1000;
/// Required gap between rectangles and to the area border, relative to side.
const GAP_FRAC: f64 = 0.01;
/// Clearance of BS/UE from any building, relative to side.
const CLEARANCE_FRAC: f64 = 0.005;

/// Deterministic scene for (seed, area_index).
///
/// side_length ~ U[100, 200] m; 3-8 mutually disjoint rectangles placed by
/// rejection sampling (at most 1000 attempts per sub-seed); BS and UE placed
/// in free space. Placement failure restarts with an incremented sub-seed,
/// so the call never fails outward.
pub fn generate_scene(seed: u64, area_index: u64) -> Scene {
    for sub_seed in 0u64.. {
        let mut rng = SplitMix64::stream(seed, &[domain::SCENE, area_index, sub_seed]);
        let side = rng.range_f64(MIN_SIDE, MAX_SIDE);
        let n_rects = (MIN_RECTS + rng.below(MAX_RECTS - MIN_RECTS + 1)) as usize;
        let gap = GAP_FRAC * side;

        let mut rects: Vec<Rect> = Vec::with_capacity(n_rects);
        let mut attempts = 0;
        while rects.len() < n_rects && attempts < PLACEMENT_ATTEMPTS {
            attempts += 1;
            let w = side * rng.range_f64(0.05, 0.20);
            let h = side * rng.range_f64(0.05, 0.20);
            let x0 = rng.range_f64(gap, side - gap - w);
            let y0 = rng.range_f64(gap, side - gap - h);
            let cand = Rect { x_min: x0, y_min: y0, x_max: x0 + w, y_max: y0 + h };
            if rects.iter().all(|r| !r.expanded(gap).overlaps(&cand)) {
                rects.push(cand);
            }
        }
        if rects.len() < n_rects {
            continue; // regenerate with incremented sub-seed
        }

        let bs_pos = match place_free_point(&mut rng, side, &rects) {
            Some(p) => p,
            None => continue,
        };
        let bs_boresight = rng.range_f64(0.0, 2.0 * std::f64::consts::PI);
        let ue_pos = match place_free_point(&mut rng, side, &rects) {
            Some(p) => p,
            None => continue,
        };

        return Scene { side_length: side, buildings: rects, bs_pos, bs_boresight, ue_pos };
    }
    unreachable!("scene generation loop is unbounded")
}

/// Sample a point in free space: inside the area with a border gap, outside
/// every (slightly expanded) building.
pub fn place_free_point(rng: &mut SplitMix64, side: f64, rects: &[Rect]) -> Option<Point> {
    let gap = GAP_FRAC * side;
    let clearance = CLEARANCE_FRAC * side;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let p = Point::new(rng.range_f64(gap, side - gap), rng.range_f64(gap, side - gap));
        if rects.iter().all(|r| !r.expanded(clearance).contains(p)) {
            return Some(p);
        }
    }
    None
}

/// Segment p-q strictly crosses the rectangle interior (edge-by-edge test;
/// endpoint grazes are excluded so reflection points on a wall don't count
/// as blockage).
pub fn segment_blocked_by_rect(p: Point, q: Point, r: &Rect) -> bool {
    const T_EPS: f64 = 1e-9;
    // either endpoint strictly inside is an immediate hit
    let inner = r.expanded(-1e-12);
    if inner.contains(p) || inner.contains(q) {
        return true;
    }
    let dx = q.x - p.x;
    let dy = q.y - p.y;
    // check crossing of each of the four edge lines within the open segment
    let check = |t: f64, coord: f64, lo: f64, hi: f64| -> bool {
        t > T_EPS && t < 1.0 - T_EPS && coord > lo && coord < hi
    };
    if dx.abs() > 0.0 {
        for x_edge in [r.x_min, r.x_max] {
            let t = (x_edge - p.x) / dx;
            let y = p.y + t * dy;
            if check(t, y, r.y_min, r.y_max) {
                return true;
            }
        }
    }
    if dy.abs() > 0.0 {
        for y_edge in [r.y_min, r.y_max] {
            let t = (y_edge - p.y) / dy;
            let x = p.x + t * dx;
            if check(t, x, r.x_min, r.x_max) {
                return true;
            }
        }
    }
    false
}

/// Segment p-q is blocked by any building.
pub fn segment_blocked(p: Point, q: Point, rects: &[Rect]) -> bool {
    rects.iter().any(|r| segment_blocked_by_rect(p, q, r))
}

/// Rasterize buildings onto a GRID x GRID occupancy map over [0, side]^2.
/// A cell is occupied when its center lies inside a building.
pub const GRID: usize = 16;

pub fn occupancy_grid(scene: &Scene) -> [u8; GRID * GRID] {
    let mut grid = [0u8; GRID * GRID];
    let cell = scene.side_length / GRID as f64;
    for iy in 0..GRID {
        for ix in 0..GRID {
            let center = Point::new((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell);
            if scene.buildings.iter().any(|r| r.contains(center)) {
                grid[iy * GRID + ix] = 1;
            }
        }
    }
    grid
}
