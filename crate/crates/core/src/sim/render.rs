use std::f64::consts::FRAC_PI_2;

use super::map::Cell;
use super::world::{Disc, DiscKind, WorldState};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Camera model for the forward view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Image side length in pixels.
    pub size: usize,
    /// Horizontal (and vertical) field of view in radians.
    pub fov: f64,
    pub range: f64,
    /// Objects whose whole footprint lies within this distance are not seen.
    pub blind_radius: f64,
    pub camera_height: f64,
    pub wall_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            size: 112,
            fov: FRAC_PI_2,
            range: 8.0,
            blind_radius: 0.6,
            camera_height: 0.6,
            wall_height: 2.0,
        }
    }
}

/// RGB image stored as bytes in channel-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    size: usize,
    data: Vec<u8>,
}

impl Observation {
    pub fn new(size: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * size * size {
            return Err(Error::Data(format!(
                "observation of side {size} needs {} bytes, got {}",
                3 * size * size,
                data.len()
            )));
        }
        Ok(Observation { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[(channel * self.size + row) * self.size + col]
    }

    /// `3×size×size` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&b| b as f64 / 255.0).collect();
        Tensor::new(&[3, self.size, self.size], data).expect("observation shape")
    }
}

type Rgb = [f64; 3];

const CEILING: Rgb = [0.30, 0.32, 0.38];
const FLOOR: Rgb = [0.50, 0.44, 0.36];
const FOG: Rgb = [0.05, 0.05, 0.06];
const WALL: Rgb = [0.78, 0.78, 0.76];
const DOOR: Rgb = [0.20, 0.45, 0.85];
const CABIN: Rgb = [0.80, 0.68, 0.30];
const BASKET: Rgb = [0.92, 0.30, 0.10];
const ADVERSARY: Rgb = [0.15, 0.70, 0.25];

fn shade(c: Rgb, distance: f64, factor: f64) -> Rgb {
    let k = factor / (1.0 + 0.12 * distance);
    [c[0] * k, c[1] * k, c[2] * k]
}

fn ray_disc(ox: f64, oy: f64, dx: f64, dy: f64, d: &Disc) -> Option<f64> {
    let (px, py) = (ox - d.x, oy - d.y);
    let b = px * dx + py * dy;
    let c = px * px + py * py - d.radius * d.radius;
    let disc = b * b - c;
    if c <= 0.0 || disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t > 0.0).then_some(t)
}

/// Raycast view from the robot.
pub fn render(world: &WorldState, cfg: &RenderConfig) -> Observation {
    let n = cfg.size;
    let mut img = vec![0u8; 3 * n * n];
    let focal = (n as f64 / 2.0) / (cfg.fov / 2.0).tan();
    let pose = world.pose;

    let mut visible: Vec<&Disc> = world
        .discs
        .iter()
        .filter(|d| {
            let dist = pose.distance_to(d.x, d.y);
            dist + d.radius > cfg.blind_radius && dist - d.radius < cfg.range
        })
        .collect();
    visible.sort_by(|a, b| {
        pose.distance_to(b.x, b.y)
            .partial_cmp(&pose.distance_to(a.x, a.y))
            .expect("finite distances")
    });

    let mut column = vec![[0.0; 3]; n];
    for col in 0..n {
        let rel = cfg.fov / 2.0 - (col as f64 + 0.5) / n as f64 * cfg.fov;
        let angle = pose.theta + rel;
        let (dx, dy) = (angle.cos(), angle.sin());
        let cos_rel = rel.cos();
        let hit = world.map.raycast(pose.x, pose.y, angle, cfg.range, |c| world.solid(c));
        for (row, px) in column.iter_mut().enumerate() {
            let v = row as f64 + 0.5 - n as f64 / 2.0;
            *px = if v < 0.0 { CEILING } else { FLOOR };
            if v.abs() > 1e-9 {
                let along = if v > 0.0 { cfg.camera_height } else { cfg.wall_height - cfg.camera_height };
                let depth = along * focal / v.abs();
                *px = if depth / cos_rel > cfg.range { FOG } else { shade(*px, depth, 1.0) };
            } else {
                *px = FOG;
            }
        }
        let wall_t = match hit {
            Some(h) => {
                let z = h.distance * cos_rel;
                let base = match h.cell {
                    Cell::Door => DOOR,
                    Cell::CabinWall => CABIN,
                    _ => WALL,
                };
                let color = shade(base, h.distance, if h.x_face { 1.0 } else { 0.8 });
                paint(&mut column, z, 0.0, cfg.wall_height, focal, cfg, color);
                h.distance
            }
            None => {
                paint(&mut column, cfg.range * cos_rel, 0.0, cfg.wall_height, focal, cfg, FOG);
                f64::INFINITY
            }
        };
        for d in &visible {
            let Some(t) = ray_disc(pose.x, pose.y, dx, dy, d) else { continue };
            if t >= wall_t || t > cfg.range {
                continue;
            }
            let base = match d.kind {
                DiscKind::Basket => BASKET,
                DiscKind::Adversary => ADVERSARY,
            };
            paint(&mut column, t * cos_rel, 0.0, d.height, focal, cfg, shade(base, t, 1.0));
        }
        for (row, px) in column.iter().enumerate() {
            for ch in 0..3 {
                img[(ch * n + row) * n + col] = (px[ch].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Observation { size: n, data: img }
}

/// Fills the rows covered by a vertical span `[bottom, top]` at depth `z`.
fn paint(column: &mut [Rgb], z: f64, bottom: f64, top: f64, focal: f64, cfg: &RenderConfig, color: Rgb) {
    let n = column.len() as f64;
    let row_of = |h: f64| n / 2.0 - focal * (h - cfg.camera_height) / z;
    let r0 = row_of(top).max(0.0);
    let r1 = row_of(bottom).min(n);
    let (a, b) = (r0.round() as usize, r1.round() as usize);
    for px in column.iter_mut().take(b).skip(a) {
        *px = color;
    }
}
