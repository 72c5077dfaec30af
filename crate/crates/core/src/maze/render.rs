//! Column raycaster over the maze grid.
//!
//! One ray per pixel column is marched through the grid with a DDA walk. Walls
//! are one unit tall, the eye sits half a unit above the floor and the
//! horizontal field of view is 90 degrees. Depth is the perpendicular distance
//! along the view direction, so flat walls do not bulge.

use serde::{Deserialize, Serialize};

use super::layout::{Cell, MazeLayout, NUM_BASE_TEXTURES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// Far plane; depth is clamped to this value.
    pub max_range: f32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 84, height: 84, max_range: 20.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpriteKind {
    Goal,
    Apple,
    Strawberry,
}

/// Billboard standing on the floor at `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sprite {
    pub x: f64,
    pub y: f64,
    pub kind: SpriteKind,
}

impl Sprite {
    pub fn at_cell(c: Cell, kind: SpriteKind) -> Self {
        let [x, y] = c.center();
        Self { x, y, kind }
    }

    fn size(self) -> (f64, f64) {
        match self.kind {
            SpriteKind::Goal => (0.6, 0.8),
            SpriteKind::Apple | SpriteKind::Strawberry => (0.3, 0.3),
        }
    }
}

/// RGB bytes in row-major HWC order and per-pixel depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub depth: Vec<f32>,
}

const HUES: [[u8; 3]; NUM_BASE_TEXTURES as usize] = [
    [176, 64, 48],
    [64, 128, 176],
    [200, 180, 80],
    [80, 160, 90],
    [150, 90, 170],
    [210, 130, 60],
    [120, 120, 120],
    [60, 170, 170],
];

const DECALS: [[u8; 3]; 4] = [[250, 230, 40], [245, 245, 245], [230, 40, 200], [30, 220, 240]];

const FLOORS: [([u8; 3], [u8; 3]); 4] = [
    ([92, 84, 70], [200, 200, 210]),
    ([70, 80, 90], [210, 200, 180]),
    ([85, 95, 70], [190, 210, 220]),
    ([100, 80, 80], [200, 210, 200]),
];

fn shade(c: [u8; 3], k: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * k).round().clamp(0.0, 255.0) as u8)
}

/// Procedural colour of wall texture `tex` at face coordinates `u, v` in `[0, 1)`.
pub fn wall_color(tex: u8, u: f64, v: f64) -> [u8; 3] {
    let base = HUES[(tex & 0x0f) as usize % HUES.len()];
    let decal = tex >> 4;
    if decal > 0 {
        let (du, dv) = (u - 0.5, v - 0.5);
        let hit = match decal {
            1 => du * du + dv * dv < 0.04,
            2 => (du.abs() < 0.05 && dv.abs() < 0.2) || (dv.abs() < 0.05 && du.abs() < 0.2),
            3 => du.abs() + dv.abs() < 0.2,
            _ => du.abs() < 0.25 && dv.abs() < 0.07,
        };
        if hit {
            return DECALS[(decal as usize - 1) % DECALS.len()];
        }
    }
    let dark = match tex & 0x0f {
        0 => {
            let row = (v * 4.0).floor();
            let off = if row as i64 % 2 == 0 { 0.0 } else { 0.25 };
            (v * 4.0).fract() < 0.1 || ((u + off) * 2.0).fract() < 0.05
        }
        1 => (u * 6.0).fract() < 0.5,
        2 => ((u * 4.0).floor() + (v * 4.0).floor()) as i64 % 2 == 0,
        3 => (v * 5.0).fract() < 0.4,
        4 => ((u + v) * 4.0).fract() < 0.5,
        5 => ((u * 5.0).fract() - 0.5).powi(2) + ((v * 5.0).fract() - 0.5).powi(2) < 0.06,
        6 => !(0.08..0.92).contains(&u) || !(0.08..0.92).contains(&v),
        _ => (u * 5.0).fract() < 0.12 || (v * 5.0).fract() < 0.12,
    };
    if dark {
        shade(base, 0.6)
    } else {
        base
    }
}

fn sprite_color(kind: SpriteKind, u: f64, v: f64) -> Option<[u8; 3]> {
    let (du, dv) = (u - 0.5, v - 0.5);
    match kind {
        SpriteKind::Goal => {
            let stripe = ((u + v) * 4.0).fract() < 0.5;
            Some(if stripe { [240, 40, 40] } else { [250, 210, 40] })
        }
        SpriteKind::Apple => (du * du + dv * dv < 0.25).then_some([60, 200, 40]),
        SpriteKind::Strawberry => (du * du + dv * dv < 0.25).then(|| {
            let seed = ((u * 6.0).fract() - 0.5).powi(2) + ((v * 6.0).fract() - 0.5).powi(2) < 0.03;
            if seed {
                [250, 240, 120]
            } else {
                [220, 20, 60]
            }
        }),
    }
}

/// Result of marching a single ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance along the view direction (not along the ray).
    pub perp: f64,
    pub cell: Cell,
    /// 0 north, 1 east, 2 south, 3 west face of the hit cell.
    pub face: usize,
    /// Horizontal texture coordinate along the face.
    pub u: f64,
}

/// Walks the grid from `(x, y)` along `(rdx, rdy)` until a wall cell is hit.
/// The perpendicular distance is measured against a view direction whose
/// component along the ray parameter is one, as in a camera-plane setup.
pub fn cast_ray(layout: &MazeLayout, x: f64, y: f64, rdx: f64, rdy: f64) -> Option<RayHit> {
    let (mut mx, mut my) = (x.floor() as i64, y.floor() as i64);
    let ddx = if rdx == 0.0 { f64::INFINITY } else { (1.0 / rdx).abs() };
    let ddy = if rdy == 0.0 { f64::INFINITY } else { (1.0 / rdy).abs() };
    let (sx, mut side_x) = if rdx < 0.0 { (-1, (x - mx as f64) * ddx) } else { (1, (mx as f64 + 1.0 - x) * ddx) };
    let (sy, mut side_y) = if rdy < 0.0 { (-1, (y - my as f64) * ddy) } else { (1, (my as f64 + 1.0 - y) * ddy) };
    let limit = 4 * (layout.rows + layout.cols);
    for _ in 0..limit {
        let vertical = side_x < side_y;
        if vertical {
            side_x += ddx;
            mx += sx;
        } else {
            side_y += ddy;
            my += sy;
        }
        if layout.is_wall_at(my, mx) {
            let (perp, face, u) = if vertical {
                let perp = (mx as f64 - x + (1 - sx) as f64 / 2.0) / rdx;
                let hy = y + perp * rdy;
                (perp, if sx > 0 { 3 } else { 1 }, hy - hy.floor())
            } else {
                let perp = (my as f64 - y + (1 - sy) as f64 / 2.0) / rdy;
                let hx = x + perp * rdx;
                (perp, if sy > 0 { 0 } else { 2 }, hx - hx.floor())
            };
            let cell = Cell::new(my.max(0) as usize, mx.max(0) as usize);
            return Some(RayHit { perp, cell, face, u });
        }
    }
    None
}

impl RenderConfig {
    fn focal(&self) -> f64 {
        self.width as f64 / 2.0
    }

    /// Renders the view from `(x, y)` facing `heading` (radians, 0 = +x,
    /// positive turns towards +y).
    pub fn render(&self, layout: &MazeLayout, x: f64, y: f64, heading: f64, sprites: &[Sprite]) -> Frame {
        let (w, h) = (self.width, self.height);
        let f = self.focal();
        let far = self.max_range as f64;
        let (dx, dy) = (heading.cos(), heading.sin());
        let (rx, ry) = (-dy, dx);
        let (floor_a, ceiling) = FLOORS[layout.palette as usize % FLOORS.len()];
        let floor_b = shade(floor_a, 0.8);
        let mut rgb = vec![0u8; w * h * 3];
        let mut depth = vec![0f32; w * h];
        let mut column_perp = vec![far; w];
        for i in 0..w {
            let cam = 2.0 * (i as f64 + 0.5) / w as f64 - 1.0;
            let (rdx, rdy) = (dx + rx * cam, dy + ry * cam);
            let hit = cast_ray(layout, x, y, rdx, rdy);
            let perp = hit.map_or(far, |hh| hh.perp.max(1e-3));
            column_perp[i] = perp;
            let half = 0.5 * f / perp;
            for j in 0..h {
                let yc = j as f64 + 0.5 - h as f64 / 2.0;
                let px = j * w + i;
                let (color, d) = match hit {
                    Some(hit) if yc.abs() < half => {
                        let v = (yc + half) / (2.0 * half);
                        let c = wall_color(layout.texture(hit.cell, hit.face), hit.u, v);
                        let c = if hit.face % 2 == 0 { shade(c, 0.85) } else { c };
                        (c, perp)
                    }
                    _ => {
                        let d = 0.5 * f / yc.abs().max(1e-9);
                        if yc > 0.0 {
                            let (wx, wy) = (x + rdx * d, y + rdy * d);
                            let check = (wx.floor() as i64 + wy.floor() as i64).rem_euclid(2) == 0;
                            (if check { floor_a } else { floor_b }, d)
                        } else {
                            (ceiling, d)
                        }
                    }
                };
                rgb[px * 3..px * 3 + 3].copy_from_slice(&color);
                depth[px] = d.min(far) as f32;
            }
        }
        self.draw_sprites(x, y, (dx, dy), sprites, &mut rgb, &mut depth);
        Frame { width: w, height: h, rgb, depth }
    }

    fn draw_sprites(&self, x: f64, y: f64, dir: (f64, f64), sprites: &[Sprite], rgb: &mut [u8], depth: &mut [f32]) {
        let (w, h) = (self.width as i64, self.height as i64);
        let f = self.focal();
        let (dx, dy) = dir;
        let (rx, ry) = (-dy, dx);
        let mut visible: Vec<(f64, f64, Sprite)> = sprites
            .iter()
            .filter_map(|s| {
                let (ox, oy) = (s.x - x, s.y - y);
                let d = ox * dx + oy * dy;
                (d > 0.1 && d < self.max_range as f64).then_some((d, ox * rx + oy * ry, *s))
            })
            .collect();
        visible.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (d, lat, s) in visible {
            let (sw, sh) = s.size();
            let cx = w as f64 / 2.0 + lat / d * f;
            let half_w = sw / 2.0 * f / d;
            let top = h as f64 / 2.0 + (0.5 - sh) * f / d;
            let bottom = h as f64 / 2.0 + 0.5 * f / d;
            let (i0, i1) = (((cx - half_w).floor() as i64).max(0), ((cx + half_w).ceil() as i64).min(w));
            let (j0, j1) = ((top.floor() as i64).max(0), (bottom.ceil() as i64).min(h));
            for i in i0..i1 {
                let u = (i as f64 + 0.5 - (cx - half_w)) / (2.0 * half_w);
                if !(0.0..1.0).contains(&u) {
                    continue;
                }
                for j in j0..j1 {
                    let v = (j as f64 + 0.5 - top) / (bottom - top);
                    if !(0.0..1.0).contains(&v) {
                        continue;
                    }
                    let px = (j * w + i) as usize;
                    if (d as f32) >= depth[px] {
                        continue;
                    }
                    if let Some(c) = sprite_color(s.kind, u, v) {
                        rgb[px * 3..px * 3 + 3].copy_from_slice(&c);
                        depth[px] = d as f32;
                    }
                }
            }
        }
    }
}
