//! Value predictions over the convex hull of three observations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    /// Barycentric weights of anchors a, b, c.
    pub weights: [f64; 3],
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub resolution: usize,
    pub points: Vec<SurfacePoint>,
}

/// Weights `(u, v, w)` on the triangular grid with spacing `1/k`.
pub fn barycentric_grid(k: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity((k + 1) * (k + 2) / 2);
    for i in 0..=k {
        for j in 0..=k - i {
            let l = k - i - j;
            out.push([i as f64 / k as f64, j as f64 / k as f64, l as f64 / k as f64]);
        }
    }
    out
}

/// Evaluate `value` (a batched map from observations to scalars) on every
/// grid point's convex combination of the anchors.
pub fn value_surface(
    anchors: [&[f64]; 3],
    k: usize,
    mut value: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<ValueSurface> {
    if k < 2 {
        return Err(Error::Config("surface resolution must be at least 2".into()));
    }
    let len = anchors[0].len();
    if anchors.iter().any(|a| a.len() != len) {
        return Err(Error::Shape("surface anchors differ in shape".into()));
    }
    let grid = barycentric_grid(k);
    let mut obs = Vec::with_capacity(grid.len() * len);
    for w in &grid {
        obs.extend((0..len).map(|p| w[0] * anchors[0][p] + w[1] * anchors[1][p] + w[2] * anchors[2][p]));
    }
    let mut values = Vec::with_capacity(grid.len());
    for chunk in obs.chunks(64 * len) {
        values.extend(value(chunk, chunk.len() / len)?);
    }
    Ok(ValueSurface {
        resolution: k,
        points: grid
            .into_iter()
            .zip(values)
            .map(|(weights, value)| SurfacePoint { weights, value })
            .collect(),
    })
}

/// Linear blue-to-red color ramp.
pub(crate) fn ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let r = (40.0 + 215.0 * t) as u8;
    let b = (255.0 - 215.0 * t) as u8;
    let g = (60.0 + 80.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

impl ValueSurface {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("w_a,w_b,w_c,value\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{}", p.weights[0], p.weights[1], p.weights[2], p.value);
        }
        s
    }

    /// Heatmap of the triangle: anchor a at the top, b bottom-left, c bottom-right.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h) = (420.0, 400.0);
        let corner = [(210.0, 40.0), (30.0, 350.0), (390.0, 350.0)];
        let lo = self.points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let r = 170.0 / self.resolution as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"210\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
        );
        for p in &self.points {
            let x: f64 = (0..3).map(|i| p.weights[i] * corner[i].0).sum();
            let y: f64 = (0..3).map(|i| p.weights[i] * corner[i].1).sum();
            let _ = writeln!(
                s,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" fill=\"{}\"><title>{:.4}</title></circle>",
                ramp((p.value - lo) / span),
                p.value
            );
        }
        for (name, (x, y)) in ["a", "b", "c"].iter().zip(corner) {
            let _ = writeln!(
                s,
                "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>",
                if y < 100.0 { y - 8.0 } else { y + 22.0 }
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"10\" y=\"392\" font-family=\"sans-serif\" font-size=\"11\">V in [{lo:.3}, {hi:.3}]</text>\n</svg>"
        );
        s
    }
}
