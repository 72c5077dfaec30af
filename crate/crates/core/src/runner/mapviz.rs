use std::fmt::Write as _;
use std::io::Write;

use crate::analysis::EpisodeLog;
use crate::error::{NavError, Result};
use crate::maze::{Cell, FruitKind, MazeLayout};

/// Pixels per maze cell in raster maps.
pub const MAP_SCALE: usize = 24;

const WALL: [u8; 3] = [60, 60, 70];
const FLOOR: [u8; 3] = [235, 235, 230];
const GOAL: [u8; 3] = [220, 60, 60];
const APPLE: [u8; 3] = [90, 170, 60];
const STRAWBERRY: [u8; 3] = [200, 80, 160];

/// Grey level of the segment `i` of `n`; later segments are darker.
fn segment_grey(i: usize, n: usize) -> u8 {
    if n <= 1 {
        90
    } else {
        (190 - 140 * i / (n - 1)) as u8
    }
}

fn goal_cell(layout: &MazeLayout, log: &EpisodeLog) -> Option<Cell> {
    layout.floor_cells().get(log.meta.goal).copied()
}

/// SVG with one polyline per respawn segment of the trajectory.
pub fn render_map_svg(layout: &MazeLayout, log: &EpisodeLog) -> String {
    let s = MAP_SCALE as f64;
    let mut out = String::new();
    let (w, h) = (layout.cols as f64 * s, layout.rows as f64 * s);
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let rgb = |c: [u8; 3]| format!("rgb({},{},{})", c[0], c[1], c[2]);
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="{}"/>"#, rgb(FLOOR));
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            if layout.is_wall(Cell { row, col }) {
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{s}" height="{s}" fill="{}"/>"#,
                    col as f64 * s,
                    row as f64 * s,
                    rgb(WALL)
                );
            }
        }
    }
    if let Some(g) = goal_cell(layout, log) {
        let [x, y] = g.center();
        let _ = writeln!(out, r#"<circle class="goal" cx="{}" cy="{}" r="{}" fill="{}"/>"#, x * s, y * s, s * 0.35, rgb(GOAL));
    }
    for (cell, kind) in &layout.fruit {
        let [x, y] = cell.center();
        let c = if *kind == FruitKind::Apple { APPLE } else { STRAWBERRY };
        let _ = writeln!(out, r#"<circle class="fruit" cx="{}" cy="{}" r="{}" fill="{}"/>"#, x * s, y * s, s * 0.2, rgb(c));
    }
    let segs = log.segments();
    for (i, seg) in segs.iter().enumerate() {
        let g = segment_grey(i, segs.len());
        let pts: Vec<String> = seg.iter().map(|p| format!("{:.2},{:.2}", p[0] * s, p[1] * s)).collect();
        let _ = writeln!(
            out,
            r#"<polyline class="segment" points="{}" fill="none" stroke="rgb({g},{g},{g})" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

/// RGB raster of the same map, row-major HWC.
pub fn render_map_rgb(layout: &MazeLayout, log: &EpisodeLog) -> (usize, usize, Vec<u8>) {
    let (w, h) = (layout.cols * MAP_SCALE, layout.rows * MAP_SCALE);
    let mut img = vec![0u8; w * h * 3];
    let put = |img: &mut Vec<u8>, x: i64, y: i64, c: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            let o = (y as usize * w + x as usize) * 3;
            img[o..o + 3].copy_from_slice(&c);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let cell = Cell { row: y / MAP_SCALE, col: x / MAP_SCALE };
            put(&mut img, x as i64, y as i64, if layout.is_wall(cell) { WALL } else { FLOOR });
        }
    }
    let s = MAP_SCALE as f64;
    let disc = |img: &mut Vec<u8>, cell: Cell, r: f64, c: [u8; 3]| {
        let [cx, cy] = cell.center();
        let (cx, cy) = (cx * s, cy * s);
        let r2 = (r * s).powi(2);
        for y in (cy - r * s) as i64..=(cy + r * s) as i64 {
            for x in (cx - r * s) as i64..=(cx + r * s) as i64 {
                if (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r2 {
                    put(img, x, y, c);
                }
            }
        }
    };
    if let Some(g) = goal_cell(layout, log) {
        disc(&mut img, g, 0.35, GOAL);
    }
    for (cell, kind) in &layout.fruit {
        disc(&mut img, *cell, 0.2, if *kind == FruitKind::Apple { APPLE } else { STRAWBERRY });
    }
    let segs = log.segments();
    for (i, seg) in segs.iter().enumerate() {
        let g = segment_grey(i, segs.len());
        for pair in seg.windows(2) {
            let (x0, y0) = (pair[0][0] * s, pair[0][1] * s);
            let (x1, y1) = (pair[1][0] * s, pair[1][1] * s);
            let n = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for k in 0..=n {
                let t = k as f64 / n as f64;
                put(&mut img, (x0 + t * (x1 - x0)) as i64, (y0 + t * (y1 - y0)) as i64, [g, g, g]);
            }
        }
    }
    (w, h, img)
}

pub fn write_png<W: Write>(out: W, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| NavError::Io(std::io::Error::other(e));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{EpisodeMeta, StepLog};
    use crate::maze::{generate_layout, MazeKind};

    fn log_with_goals(goal_steps: &[usize], n: usize) -> EpisodeLog {
        let steps = (0..n)
            .map(|i| StepLog {
                step: i,
                env_step: 4 * i as u32,
                x: 1.5 + (i % 5) as f64 * 0.5,
                y: 2.5,
                cell: 0,
                action: 0,
                reward: if goal_steps.contains(&i) { 10.0 } else { 0.0 },
                goals: if goal_steps.contains(&i) { vec![4 * i as u32 + 2] } else { vec![] },
                fruit_reward: 0.0,
                value: 0.0,
                entropy: 0.0,
                loop_logit: None,
                loop_label: false,
                activations: None,
            })
            .collect();
        EpisodeLog {
            meta: EpisodeMeta { episode: 0, maze: MazeKind::Mini, layout_seed: 0, episode_seed: 0, goal: 24, score: 0.0, steps: n },
            steps,
        }
    }

    #[test]
    fn one_polyline_per_segment() {
        let layout = generate_layout(MazeKind::Mini, 0);
        for goals in [vec![], vec![3], vec![2, 5, 7]] {
            let svg = render_map_svg(&layout, &log_with_goals(&goals, 10));
            assert_eq!(svg.matches("<polyline").count(), goals.len() + 1);
            assert_eq!(svg.matches("class=\"goal\"").count(), 1);
        }
    }

    #[test]
    fn raster_has_walls_goal_and_path() {
        let layout = generate_layout(MazeKind::Mini, 0);
        let (w, h, img) = render_map_rgb(&layout, &log_with_goals(&[4], 10));
        assert_eq!((w, h), (7 * MAP_SCALE, 7 * MAP_SCALE));
        assert_eq!(&img[..3], &WALL);
        let px = |x: usize, y: usize| [img[(y * w + x) * 3], img[(y * w + x) * 3 + 1], img[(y * w + x) * 3 + 2]];
        let goal = layout.floor_cells()[24].center();
        assert_eq!(px((goal[0] * 24.0) as usize, (goal[1] * 24.0) as usize), GOAL);
        let grey = px((1.5 * 24.0) as usize, (2.5 * 24.0) as usize);
        assert!(grey[0] == grey[1] && grey[1] == grey[2] && grey[0] < 200);
        let mut buf = Vec::new();
        write_png(&mut buf, w, h, &img).unwrap();
        assert_eq!(&buf[1..4], b"PNG");
    }
}
