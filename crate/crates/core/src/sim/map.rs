use std::f64::consts::PI;

/// Occupancy class of a map cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Cell {
    Free = 0,
    Wall = 1,
    Door = 2,
    CabinWall = 3,
}

/// Axis-aligned occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub origin: (f64, f64),
    pub cell: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
}

/// First solid cell met by a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub distance: f64,
    pub cell: Cell,
    /// True when the hit face is perpendicular to the x axis.
    pub x_face: bool,
}

impl GridMap {
    /// All-solid map covering `[x0, x1] × [y0, y1]`.
    pub fn solid(x0: f64, y0: f64, x1: f64, y1: f64, cell: f64) -> Self {
        let width = ((x1 - x0) / cell).ceil() as usize;
        let height = ((y1 - y0) / cell).ceil() as usize;
        GridMap {
            origin: (x0, y0),
            cell,
            width,
            height,
            cells: vec![Cell::Wall; width * height],
        }
    }

    fn index_range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> std::ops::Range<usize> {
        let a = ((lo - origin) / self.cell + 1e-9).floor().max(0.0) as usize;
        let b = ((hi - origin) / self.cell - 1e-9).ceil().max(0.0) as usize;
        a.min(n)..b.min(n)
    }

    /// Sets every cell whose square lies inside the rectangle.
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, kind: Cell) {
        let xs = self.index_range(x0.min(x1), x0.max(x1), self.origin.0, self.width);
        let ys = self.index_range(y0.min(y1), y0.max(y1), self.origin.1, self.height);
        for j in ys {
            for i in xs.clone() {
                self.cells[j * self.width + i] = kind;
            }
        }
    }

    pub fn at(&self, i: i64, j: i64) -> Cell {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            Cell::Wall
        } else {
            self.cells[j as usize * self.width + i as usize]
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            ((x - self.origin.0) / self.cell).floor() as i64,
            ((y - self.origin.1) / self.cell).floor() as i64,
        )
    }

    pub fn kind_at(&self, x: f64, y: f64) -> Cell {
        let (i, j) = self.cell_of(x, y);
        self.at(i, j)
    }

    /// Whether a disc overlaps any cell for which `solid` holds.
    pub fn disc_hits(&self, x: f64, y: f64, r: f64, solid: impl Fn(Cell) -> bool) -> bool {
        let (i0, j0) = self.cell_of(x - r, y - r);
        let (i1, j1) = self.cell_of(x + r, y + r);
        for j in j0..=j1 {
            for i in i0..=i1 {
                if !solid(self.at(i, j)) {
                    continue;
                }
                let cx0 = self.origin.0 + i as f64 * self.cell;
                let cy0 = self.origin.1 + j as f64 * self.cell;
                let dx = x - x.clamp(cx0, cx0 + self.cell);
                let dy = y - y.clamp(cy0, cy0 + self.cell);
                if dx * dx + dy * dy < r * r {
                    return true;
                }
            }
        }
        false
    }

    /// Grid traversal from `(x, y)` along `angle` up to `max_range`.
    pub fn raycast(&self, x: f64, y: f64, angle: f64, max_range: f64, solid: impl Fn(Cell) -> bool) -> Option<RayHit> {
        let (dx, dy) = (angle.cos(), angle.sin());
        let (mut i, mut j) = self.cell_of(x, y);
        let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_j: i64 = if dy > 0.0 { 1 } else { -1 };
        let gx = (x - self.origin.0) / self.cell;
        let gy = (y - self.origin.1) / self.cell;
        let inv = |d: f64| if d.abs() < 1e-12 { f64::INFINITY } else { 1.0 / d.abs() };
        let (tdx, tdy) = (inv(dx) * self.cell, inv(dy) * self.cell);
        let mut tx = if tdx.is_infinite() {
            f64::INFINITY
        } else if dx > 0.0 {
            ((i + 1) as f64 - gx) * tdx
        } else {
            (gx - i as f64) * tdx
        };
        let mut ty = if tdy.is_infinite() {
            f64::INFINITY
        } else if dy > 0.0 {
            ((j + 1) as f64 - gy) * tdy
        } else {
            (gy - j as f64) * tdy
        };
        loop {
            let (t, x_face) = if tx < ty {
                i += step_i;
                let t = tx;
                tx += tdx;
                (t, true)
            } else {
                j += step_j;
                let t = ty;
                ty += tdy;
                (t, false)
            };
            if t > max_range {
                return None;
            }
            let c = self.at(i, j);
            if solid(c) {
                return Some(RayHit {
                    distance: t,
                    cell: c,
                    x_face,
                });
            }
        }
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> GridMap {
        let mut m = GridMap::solid(-1.0, -2.0, 11.0, 2.0, 0.25);
        m.fill_rect(0.0, -1.25, 10.0, 1.25, Cell::Free);
        m
    }

    #[test]
    fn raycast_finds_walls() {
        let m = corridor();
        let hit = m.raycast(1.0, 0.0, 0.0, 20.0, |c| c != Cell::Free).unwrap();
        assert!((hit.distance - 9.0).abs() < 1e-9);
        assert!(hit.x_face);
        let up = m.raycast(1.0, 0.0, PI / 2.0, 20.0, |c| c != Cell::Free).unwrap();
        assert!((up.distance - 1.25).abs() < 1e-9);
        assert!(m.raycast(1.0, 0.0, 0.0, 5.0, |c| c != Cell::Free).is_none());
        let diag = m.raycast(1.0, 0.0, PI / 4.0, 20.0, |c| c != Cell::Free).unwrap();
        assert!((diag.distance - 1.25 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn disc_collision() {
        let m = corridor();
        assert!(!m.disc_hits(5.0, 0.0, 0.25, |c| c != Cell::Free));
        assert!(m.disc_hits(5.0, 1.1, 0.25, |c| c != Cell::Free));
        assert!(!m.disc_hits(5.0, 0.99, 0.25, |c| c != Cell::Free));
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI / 2.0 - 2.0 * PI) + PI / 2.0).abs() < 1e-12);
    }
}
