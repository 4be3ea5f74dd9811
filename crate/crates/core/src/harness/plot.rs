//! SVG figures from run artifacts: learning curves, final-score bars,
//! value surfaces and Lipschitz box plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::run::RunArtifact;
use crate::analysis::{LipschitzReport, ValueSurface};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Mean and sample standard deviation across seeds.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    pub timesteps: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub seeds: usize,
}

/// Runs grouped by config name, in first-seen order.
fn group(runs: &[RunArtifact]) -> Result<Vec<(String, Vec<&RunArtifact>)>> {
    if runs.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let game = runs[0].config.env.game;
    if let Some(r) = runs.iter().find(|r| r.config.env.game != game) {
        return Err(Error::Config(format!(
            "mismatched games: {} vs {}",
            game.name(),
            r.config.env.game.name()
        )));
    }
    let mut out: Vec<(String, Vec<&RunArtifact>)> = Vec::new();
    for r in runs {
        match out.iter_mut().find(|(l, _)| *l == r.config.name) {
            Some((_, v)) => v.push(r),
            None => out.push((r.config.name.clone(), vec![r])),
        }
    }
    Ok(out)
}

/// Test-return curves, aligned on the eval points shared by every seed.
pub fn aggregate_curves(runs: &[RunArtifact], metric: fn(&super::run::MetricsRecord) -> f64) -> Result<Vec<CurveSeries>> {
    group(runs)?
        .into_iter()
        .map(|(label, rs)| {
            let n = rs.iter().map(|r| r.records.len()).min().unwrap_or(0);
            let mut s = CurveSeries {
                label,
                timesteps: Vec::with_capacity(n),
                mean: Vec::with_capacity(n),
                std: Vec::with_capacity(n),
                seeds: rs.len(),
            };
            for i in 0..n {
                let t = rs[0].records[i].timestep;
                if rs.iter().any(|r| r.records[i].timestep != t) {
                    return Err(Error::Config(format!("`{}`: seeds disagree on eval points", s.label)));
                }
                let xs: Vec<f64> = rs.iter().map(|r| metric(&r.records[i])).collect();
                let (m, sd) = mean_std(&xs);
                s.timesteps.push(t);
                s.mean.push(m);
                s.std.push(sd);
            }
            Ok(s)
        })
        .collect()
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        Self { x0, x1, y0, y1 }
    }
    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }
    fn y(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    )
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{b}\" stroke=\"black\"/>",
        b = H - BOTTOM,
        r = W - RIGHT
    );
    for k in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>",
            LEFT - 4.0,
            f.y(v) + 3.0
        );
    }
    for k in 0..=4 {
        let v = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{v:.3e}</text>",
            f.x(v),
            H - BOTTOM + 14.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{xlabel}</text>\n\
         <text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{ylabel}</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 12.0,
        H / 2.0,
        H / 2.0
    );
}

fn legend(s: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 6.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{l}</text>",
            LEFT + 10.0,
            y - 8.0,
            COLORS[i % COLORS.len()],
            LEFT + 24.0,
            y + 1.0
        );
    }
}

/// Zero-shot test return vs. timesteps, mean ± sample std shading.
pub fn curves_svg(runs: &[RunArtifact]) -> Result<String> {
    let series = aggregate_curves(runs, |r| r.test_return)?;
    let t_max = series.iter().flat_map(|s| s.timesteps.iter().copied()).max().unwrap_or(1) as f64;
    let lo = series.iter().flat_map(|s| s.mean.iter().zip(&s.std).map(|(m, d)| m - d)).fold(0.0, f64::min);
    let hi = series.iter().flat_map(|s| s.mean.iter().zip(&s.std).map(|(m, d)| m + d)).fold(f64::NEG_INFINITY, f64::max);
    let f = Frame::new(0.0, t_max, lo, hi);
    let mut s = header(&format!("{}: test return", runs[0].config.env.game.name()));
    axes(&mut s, &f, "timesteps", "return");
    for (i, c) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = c.timesteps.iter().zip(&c.mean).zip(&c.std).map(|((t, m), d)| format!("{:.2},{:.2}", f.x(*t as f64), f.y(m + d))).collect();
        let lower: Vec<String> = c.timesteps.iter().zip(&c.mean).zip(&c.std).rev().map(|((t, m), d)| format!("{:.2},{:.2}", f.x(*t as f64), f.y(m - d))).collect();
        let _ = writeln!(s, "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", upper.join(" "), lower.join(" "));
        let line: Vec<String> = c.timesteps.iter().zip(&c.mean).map(|(t, m)| format!("{:.2},{:.2}", f.x(*t as f64), f.y(*m))).collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", line.join(" "));
    }
    legend(&mut s, &series.iter().map(|c| format!("{} (n={})", c.label, c.seeds)).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    Ok(s)
}

/// Final train and test returns per configuration with ± std error bars.
pub fn bars_svg(runs: &[RunArtifact]) -> Result<String> {
    let groups = group(runs)?;
    let mut rows = Vec::new();
    for (label, rs) in &groups {
        let last: Vec<_> = rs.iter().filter_map(|r| r.last()).collect();
        if last.is_empty() {
            return Err(Error::Config(format!("`{label}` has no metrics")));
        }
        let train = mean_std(&last.iter().map(|r| r.train_eval_return).collect::<Vec<_>>());
        let test = mean_std(&last.iter().map(|r| r.test_return).collect::<Vec<_>>());
        rows.push((label.clone(), train, test));
    }
    let hi = rows.iter().map(|(_, a, b)| (a.0 + a.1).max(b.0 + b.1)).fold(0.0, f64::max);
    let f = Frame::new(0.0, rows.len() as f64, 0.0, hi);
    let mut s = header(&format!("{}: final returns", runs[0].config.env.game.name()));
    let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>", b = H - BOTTOM, r = W - RIGHT);
    let slot = (W - LEFT - RIGHT) / rows.len() as f64;
    for (i, (label, train, test)) in rows.iter().enumerate() {
        for (k, (m, d)) in [*train, *test].iter().enumerate() {
            let x = LEFT + slot * i as f64 + slot * (0.15 + 0.35 * k as f64);
            let w = slot * 0.3;
            let y = f.y(*m);
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n\
                 <line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                (H - BOTTOM - y).max(0.0),
                if k == 0 { "#9ecae1" } else { "#3182bd" },
                f.y(m + d),
                f.y(m - d),
                cx = x + w / 2.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{label}</text>",
            LEFT + slot * (i as f64 + 0.5),
            H - BOTTOM + 14.0
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">light: train, dark: test</text>", LEFT + 10.0, TOP + 10.0);
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn surface_svg(surface: &ValueSurface, title: &str) -> String {
    surface.to_svg(title)
}

/// One box per labelled report: whiskers at min and max, box at the
/// quartiles, a bar at the median.
pub fn lipschitz_box_svg(reports: &[(String, LipschitzReport)]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    let hi = reports.iter().map(|(_, r)| r.max).fold(0.0, f64::max);
    let f = Frame::new(0.0, reports.len() as f64, 0.0, hi);
    let mut s = header("empirical Lipschitz ratios");
    let _ = writeln!(s, "<line x1=\"{LEFT}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>", b = H - BOTTOM, r = W - RIGHT);
    let slot = (W - LEFT - RIGHT) / reports.len() as f64;
    let mut colors: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, (label, r)) in reports.iter().enumerate() {
        let group = label.split('/').next().unwrap_or(label);
        let n = colors.len();
        let color = COLORS[*colors.entry(group).or_insert(n) % COLORS.len()];
        let cx = LEFT + slot * (i as f64 + 0.5);
        let w = slot * 0.4;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <rect x=\"{:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.6\" stroke=\"black\"/>\n\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>\n\
             <text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{label}</text>",
            f.y(r.max),
            f.y(r.min),
            cx - w / 2.0,
            f.y(r.q3),
            (f.y(r.q1) - f.y(r.q3)).max(0.0),
            cx - w / 2.0,
            f.y(r.median),
            cx + w / 2.0,
            f.y(r.median),
            H - BOTTOM + 14.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
