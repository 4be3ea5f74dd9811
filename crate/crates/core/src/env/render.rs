//! Pixel rendering and PNG export.

use std::io::Write;

use rand::Rng as _;

use super::{Cell, EnvState};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const AGENT_COLOR: [u8; 3] = [255, 255, 255];

/// Per-level colors. Walls are greyish, items greenish and hazards reddish;
/// none of them can reach the white of the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Palette {
    pub background: [u8; 3],
    pub speckle: [u8; 3],
    pub wall: [u8; 3],
    pub item: [u8; 3],
    pub hazard: [u8; 3],
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
}

impl Palette {
    pub fn random(rng: &mut Rng) -> Self {
        let bg_h = rng.random::<f64>();
        let bg_s = 0.3 + 0.5 * rng.random::<f64>();
        let bg_v = 0.15 + 0.2 * rng.random::<f64>();
        let background = hsv(bg_h, bg_s, bg_v);
        let speckle = hsv(bg_h + 0.1 * (rng.random::<f64>() - 0.5), bg_s, bg_v + 0.12);
        // Entity kinds keep a recognisable hue band; brightness, saturation
        // and the exact hue still change from level to level.
        let mut tile = |h0: f64, h_span: f64, s0: f64, s_span: f64| {
            hsv(
                h0 + h_span * rng.random::<f64>(),
                s0 + s_span * rng.random::<f64>(),
                0.65 + 0.3 * rng.random::<f64>(),
            )
        };
        let wall = tile(0.0, 1.0, 0.0, 0.2);
        let item = tile(0.22, 0.2, 0.6, 0.4);
        let hazard = tile(0.95, 0.1, 0.7, 0.3);
        Self {
            background,
            speckle,
            wall,
            item,
            hazard,
        }
    }
}

/// Whether pixel `(y, x)` of a `c × c` cell belongs to the entity's sprite.
fn sprite(cell: Cell, c: usize, y: usize, x: usize) -> bool {
    match cell {
        Cell::Empty => false,
        Cell::Wall => true,
        _ if c == 2 => match cell {
            Cell::Fruit => y == x,
            Cell::Hazard => y + x == 1,
            _ => y == 0,
        },
        Cell::Fruit => {
            let m = (c - 1) as f64 / 2.0;
            (y as f64 - m).abs() + (x as f64 - m).abs() <= m
        }
        Cell::Hazard => y == x || y + x == c - 1,
        Cell::Exit => y == 0 || x == 0 || y == c - 1 || x == c - 1,
    }
}

pub(super) fn render(s: &EnvState, out: &mut [u8]) {
    let n = s.obs_size;
    let c = n / s.grid;
    assert_eq!(out.len(), 3 * n * n, "render buffer size");
    let p = &s.palette;
    for py in 0..n {
        for px in 0..n {
            let (r, col) = (py / c, px / c);
            let (y, x) = (py % c, px % c);
            let cell = s.cell(r, col);
            let rgb = if (r, col) == s.agent {
                AGENT_COLOR
            } else if sprite(cell, c, y, x) {
                match cell {
                    Cell::Wall => p.wall,
                    Cell::Fruit | Cell::Exit => p.item,
                    Cell::Hazard => p.hazard,
                    Cell::Empty => unreachable!(),
                }
            } else if s.speckle[py * n + px] {
                p.speckle
            } else {
                p.background
            };
            for ch in 0..3 {
                out[ch * n * n + py * n + px] = rgb[ch];
            }
        }
    }
}

/// Write a `[3, H, W]` observation with values in `[0, 1]` as an RGB PNG.
pub fn write_png<W: Write>(obs: &[f64], size: usize, w: W) -> Result<()> {
    if obs.len() != 3 * size * size {
        return Err(Error::Shape(format!(
            "observation of {} values is not 3x{size}x{size}",
            obs.len()
        )));
    }
    let mut enc = png::Encoder::new(w, size as u32, size as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let plane = size * size;
    let mut rgb = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            rgb.push((obs[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    writer
        .write_image_data(&rgb)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_level, EnvConfig, GameId, LevelSeed};
    use crate::rng::rng_from_seed;

    #[test]
    fn tile_colors_never_white() {
        let mut rng = rng_from_seed(4);
        for _ in 0..1000 {
            let p = Palette::random(&mut rng);
            for c in [p.background, p.speckle, p.wall, p.item, p.hazard] {
                assert_ne!(c, AGENT_COLOR);
            }
        }
    }

    #[test]
    fn small_cell_sprites_are_distinct() {
        let masks: Vec<Vec<bool>> = [Cell::Wall, Cell::Fruit, Cell::Hazard, Cell::Exit]
            .iter()
            .map(|&k| (0..4).map(|i| sprite(k, 2, i / 2, i % 2)).collect())
            .collect();
        for a in 0..masks.len() {
            for b in a + 1..masks.len() {
                assert_ne!(masks[a], masks[b]);
            }
        }
    }

    #[test]
    fn png_round_trip_header() {
        let s = make_level(LevelSeed::new(GameId::Corridor, 0), &EnvConfig::for_game(GameId::Corridor)).unwrap();
        let mut buf = Vec::new();
        write_png(&s.observation(), 32, &mut buf).unwrap();
        assert_eq!(&buf[..8], b"\x89PNG\r\n\x1a\n");
        assert!(write_png(&[0.0; 5], 32, Vec::new()).is_err());
    }
}
