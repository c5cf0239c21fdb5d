//! Minimal SVG line charts for traces and episode logs.

use std::fmt::Write as _;

use anyhow::{bail, Context};

/// Numeric CSV with a header row.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .context("file is empty")?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("row {} is not numeric", i + 2))?;
            if row.len() != header.len() {
                bail!(
                    "row {} has {} fields, header has {}",
                    i + 2,
                    row.len(),
                    header.len()
                );
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> anyhow::Result<Vec<f64>> {
        let k = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub colour: &'a str,
    pub y: Vec<f64>,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub x: Vec<f64>,
    pub series: Vec<Series<'a>>,
}

const W: f64 = 720.0;
const PANEL_H: f64 = 260.0;
const M_LEFT: f64 = 70.0;
const M_RIGHT: f64 = 20.0;
const M_TOP: f64 = 30.0;
const M_BOTTOM: f64 = 40.0;

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x), b.max(x))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Stacks the panels vertically in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let h = PANEL_H * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" viewBox="0 0 {W} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        let top = k as f64 * PANEL_H;
        let (x0, x1) = bounds(p.x.iter().copied());
        let (y0, y1) = bounds(p.series.iter().flat_map(|s| s.y.iter().copied()));
        let pw = W - M_LEFT - M_RIGHT;
        let ph = PANEL_H - M_TOP - M_BOTTOM;
        let sx = |x: f64| M_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| top + M_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
            W / 2.0,
            top + 18.0,
            p.title
        );
        let _ = writeln!(
            s,
            r#"<rect x="{M_LEFT}" y="{}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#,
            top + M_TOP
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = y0 + f * (y1 - y0);
            let xv = x0 + f * (x1 - x0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                M_LEFT - 6.0,
                sy(yv) + 4.0,
                tick(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                sx(xv),
                top + PANEL_H - M_BOTTOM + 16.0,
                tick(xv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            M_LEFT + pw / 2.0,
            top + PANEL_H - 6.0,
            p.x_label
        );
        for (j, ser) in p.series.iter().enumerate() {
            let pts: Vec<String> =
                p.x.iter()
                    .zip(&ser.y)
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                    .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                ser.colour,
                pts.join(" ")
            );
            let ly = top + M_TOP + 14.0 + 14.0 * j as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{}">{}</text>"#,
                M_LEFT + 8.0,
                ser.colour,
                ser.label
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Reward and cost learning curves from a training trace.
pub fn trace_svg(table: &Table) -> anyhow::Result<String> {
    let x = table.column("epoch")?;
    Ok(render(&[
        Panel {
            title: "Reward",
            x_label: "epoch",
            x: x.clone(),
            series: vec![Series {
                label: "mean J_r",
                colour: "#1f77b4",
                y: table.column("mean_Jr")?,
            }],
        },
        Panel {
            title: "Cost",
            x_label: "epoch",
            x,
            series: vec![Series {
                label: "mean J_c",
                colour: "#d62728",
                y: table.column("mean_Jc")?,
            }],
        },
    ]))
}

/// SOC against the corridor from an episode log or oracle trajectory.
pub fn episode_svg(table: &Table) -> anyhow::Result<String> {
    Ok(render(&[Panel {
        title: "SOC",
        x_label: "t [s]",
        x: table.column("t")?,
        series: vec![
            Series {
                label: "soc",
                colour: "#1f77b4",
                y: table.column("soc")?,
            },
            Series {
                label: "upper",
                colour: "#7f7f7f",
                y: table.column("upper")?,
            },
            Series {
                label: "lower",
                colour: "#7f7f7f",
                y: table.column("lower")?,
            },
        ],
    }]))
}
