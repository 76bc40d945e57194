//! Static SVG figures plus the CSV data behind each of them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::agreement::{mean, sample_sd};
use super::report::Evaluation;
use super::stats::bland_altman;
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Linear map from a data range onto the plot area.
#[derive(Debug, Clone, Copy)]
struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi - lo > 1e-12 {
                (lo, hi)
            } else {
                (lo - 1.0, hi + 1.0)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn padded(r: (f64, f64)) -> (f64, f64) {
    if !r.0.is_finite() {
        return (0.0, 1.0);
    }
    let pad = 0.05 * (r.1 - r.0).max(1e-9);
    (r.0 - pad, r.1 + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg {
    body: String,
    axes: Axes,
}

impl Svg {
    fn new(title: &str, x_label: &str, y_label: &str, axes: Axes) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>
<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>
"#,
            WIDTH / 2.0,
            escape(title),
            WIDTH / 2.0,
            HEIGHT - 14.0,
            escape(x_label),
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
        let mut svg = Self { body, axes };
        svg.frame();
        svg
    }

    fn frame(&mut self) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            self.body,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.axes.x.0 + f * (self.axes.x.1 - self.axes.x.0);
            let yv = self.axes.y.0 + f * (self.axes.y.1 - self.axes.y.0);
            let (x, y) = (self.axes.px(xv), self.axes.py(yv));
            let _ = writeln!(
                self.body,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"#,
                b + 14.0,
                tick(xv),
                l - 4.0,
                y + 3.0,
                tick(yv)
            );
        }
    }

    fn points(&mut self, pts: &[(f64, f64)], colour: &str) {
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{colour}" fill-opacity="0.6"/>"#,
                self.axes.px(x),
                self.axes.py(y)
            );
        }
    }

    fn hline(&mut self, y: f64, dash: &str, label: &str) {
        let py = self.axes.py(y);
        let _ = writeln!(
            self.body,
            r#"<line x1="{MARGIN}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="black" stroke-dasharray="{dash}"/>
<text x="{}" y="{:.2}" font-size="10">{}</text>"#,
            WIDTH - MARGIN,
            WIDTH - MARGIN + 4.0,
            py + 3.0,
            escape(label)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], colour: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.axes.px(x), self.axes.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            coords.join(" ")
        );
    }

    fn polygon(&mut self, pts: &[(f64, f64)], colour: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.axes.px(x), self.axes.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon points="{}" fill="{colour}" fill-opacity="0.5" stroke="{colour}"/>"#,
            coords.join(" ")
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, colour: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{colour}" text-anchor="middle">{}</text>"#,
            self.axes.px(x),
            self.axes.py(y),
            escape(s)
        );
    }

    fn finish(self) -> String {
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">
{}</svg>
"#,
            self.body
        )
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Gaussian kernel density on `grid` with Silverman's bandwidth.
fn density(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let sd = sample_sd(values);
    let h = if sd > 0.0 { 1.06 * sd * n.powf(-0.2) } else { 0.1 };
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| values.iter().map(|v| (-0.5 * ((g - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// One written figure: the SVG and its data table.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub name: String,
    pub svg: String,
    pub csv: String,
}

fn bland_altman_figure(ev: &Evaluation, axis: char) -> Result<Figure> {
    let pick = |p: &crate::frame::Point| if axis == 'x' { p.x } else { p.y };
    let extent = if axis == 'x' {
        ev.options.image_width
    } else {
        ev.options.image_height
    };
    let m: Vec<f64> = ev
        .frames
        .iter()
        .map(|f| pick(&f.prediction) * f.pixel_spacing_mm)
        .collect();
    let r: Vec<f64> = ev
        .frames
        .iter()
        .map(|f| pick(&f.agreement.reference) * f.pixel_spacing_mm)
        .collect();
    let ba = bland_altman(&m, &r, 1.0)?;
    // abscissa normalized by the image extent in pixels of each frame
    let pairs: Vec<(f64, f64)> = ev
        .frames
        .iter()
        .zip(&ba.pairs)
        .map(|(f, &(_, d))| ((pick(&f.prediction) + pick(&f.agreement.reference)) / 2.0 / extent, d))
        .collect();

    let mut csv = String::from("video_id,frame_idx,normalized_mean,difference_mm\n");
    for (f, (x, d)) in ev.frames.iter().zip(&pairs) {
        let _ = writeln!(csv, "{},{},{x:?},{d:?}", f.key.video_id, f.key.frame_idx);
    }
    let yr = range(pairs.iter().map(|p| p.1).chain([ba.loa_low, ba.loa_high]));
    let mut svg = Svg::new(
        &format!("Bland-Altman, {axis} axis"),
        &format!("mean {axis} / image extent"),
        "model - reference [mm]",
        Axes::new((0.0, 1.0), padded(yr)),
    );
    svg.points(&pairs, PALETTE[0]);
    svg.hline(ba.bias, "6,3", "bias");
    svg.hline(ba.loa_low, "2,3", "-1.96 SD");
    svg.hline(ba.loa_high, "2,3", "+1.96 SD");
    Ok(Figure {
        name: format!("bland_altman_{axis}"),
        svg: svg.finish(),
        csv,
    })
}

fn tolerance_figure(ev: &Evaluation) -> Figure {
    let curve = &ev.report.tolerance_curve;
    let mut csv = String::from("n_star,model_pct,specialist_pct\n");
    for p in curve {
        let _ = writeln!(csv, "{:?},{:?},{:?}", p.n_star, p.model_pct, p.specialist_pct);
    }
    let xr = range(curve.iter().map(|p| p.n_star));
    let mut svg = Svg::new(
        "Frames within tolerance",
        "tolerance [multiples of mean specialist SD]",
        "valid frames [%]",
        Axes::new(if xr.0.is_finite() { xr } else { (0.0, 1.0) }, (0.0, 105.0)),
    );
    let model: Vec<(f64, f64)> = curve.iter().map(|p| (p.n_star, p.model_pct)).collect();
    let spec: Vec<(f64, f64)> = curve.iter().map(|p| (p.n_star, p.specialist_pct)).collect();
    svg.polyline(&model, PALETTE[0]);
    svg.polyline(&spec, PALETTE[1]);
    let x_mid = svg.axes.x.0 + 0.8 * (svg.axes.x.1 - svg.axes.x.0);
    svg.text(x_mid, 30.0, "model", PALETTE[0]);
    svg.text(x_mid, 20.0, "specialists", PALETTE[1]);
    Figure {
        name: "tolerance_curve".into(),
        svg: svg.finish(),
        csv,
    }
}

/// Distance distributions of the model and of each held-out specialist.
fn distribution_figure(ev: &Evaluation) -> Figure {
    let mut groups: Vec<(String, Vec<f64>)> = vec![(
        "model".into(),
        ev.frames.iter().map(|f| f.model_distance_mm()).collect(),
    )];
    let mut annotators: Vec<&String> = ev.frames.iter().flat_map(|f| &f.annotators).collect();
    annotators.sort();
    annotators.dedup();
    for a in annotators {
        let d = ev
            .frames
            .iter()
            .flat_map(|f| {
                f.annotators
                    .iter()
                    .zip(&f.agreement.loo_distances)
                    .filter(|(b, _)| *b == a)
                    .map(|(_, d)| d * f.pixel_spacing_mm)
            })
            .collect();
        groups.push((a.clone(), d));
    }

    let mut csv = String::from("group,distance_mm\n");
    for (g, d) in &groups {
        for v in d {
            let _ = writeln!(csv, "{g},{v:?}");
        }
    }
    let yr = padded(range(groups.iter().flat_map(|(_, d)| d.iter().copied()).chain([0.0])));
    let mut svg = Svg::new(
        "Distance to reference",
        "",
        "distance [mm]",
        Axes::new((0.0, groups.len() as f64), yr),
    );
    let grid: Vec<f64> = (0..=64).map(|i| yr.0 + (yr.1 - yr.0) * i as f64 / 64.0).collect();
    for (i, (g, d)) in groups.iter().enumerate() {
        let centre = i as f64 + 0.5;
        let colour = PALETTE[i % PALETTE.len()];
        if !d.is_empty() {
            let dens = density(d, &grid);
            let peak = dens.iter().cloned().fold(0.0, f64::max).max(1e-12);
            let mut outline: Vec<(f64, f64)> = grid
                .iter()
                .zip(&dens)
                .map(|(y, v)| (centre + 0.4 * v / peak, *y))
                .collect();
            outline.extend(grid.iter().zip(&dens).rev().map(|(y, v)| (centre - 0.4 * v / peak, *y)));
            svg.polygon(&outline, colour);
            let m = mean(d);
            svg.polyline(&[(centre - 0.2, m), (centre + 0.2, m)], "black");
        }
        svg.text(centre, yr.0 + 0.02 * (yr.1 - yr.0), g, "black");
    }
    Figure {
        name: "distance_distributions".into(),
        svg: svg.finish(),
        csv,
    }
}

pub fn figures(ev: &Evaluation) -> Result<Vec<Figure>> {
    Ok(vec![
        bland_altman_figure(ev, 'x')?,
        bland_altman_figure(ev, 'y')?,
        tolerance_figure(ev),
        distribution_figure(ev),
    ])
}

/// Writes every figure as `<name>.svg` and `<name>.csv` into `dir`.
pub fn write_figures(ev: &Evaluation, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for f in figures(ev)? {
        for (ext, body) in [("svg", &f.svg), ("csv", &f.csv)] {
            let path = dir.join(format!("{}.{ext}", f.name));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
