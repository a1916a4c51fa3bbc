//! Static SVG figures rendered straight from the CSV records, with no
//! plotting dependency. Coordinates are written with fixed precision and
//! the palette is constant, so a given record always produces the same
//! bytes. Boxplots read the quartiles CSV rather than recomputing from
//! raw runs, keeping one source of truth.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::csvio::Table;

const TRUTH: &str = "#000000";
const MEAN: &str = "#1f6fb4";
const ALT: &str = "#d95f02";
const GREEN: &str = "#2ca02c";
const BOX_FILL: &str = "#9ecae1";
const GRID: &str = "#cccccc";

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 190.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 28.0;
const PANEL_GAP: f64 = 34.0;
const MARGIN_B: f64 = 42.0;

fn px(v: f64) -> String {
    format!("{v:.2}")
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, w: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{w}"/>"#,
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    fn poly(&mut self, tag: &str, points: &[(f64, f64)], attrs: &str) {
        let pts: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{},{}", px(*x), px(*y)))
            .collect();
        let _ = writeln!(self.body, r#"<{tag} points="{}" {attrs}/>"#, pts.join(" "));
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, w: f64) {
        self.poly(
            "polyline",
            points,
            &format!(r#"fill="none" stroke="{stroke}" stroke-width="{w}""#),
        );
    }

    fn polygon(&mut self, points: &[(f64, f64)], fill: &str, opacity: f64) {
        self.poly(
            "polygon",
            points,
            &format!(r#"fill="{fill}" fill-opacity="{opacity}" stroke="none""#),
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            px(x),
            px(y),
            px(w),
            px(h)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{content}</text>"#,
            px(x),
            px(y)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n{}</svg>\n",
            px(self.width),
            px(self.height),
            px(self.width),
            px(self.height),
            px(self.width),
            px(self.height),
            self.body
        )
    }
}

/// Pixel mapping for one panel, optionally log-scaled on y.
struct Axes {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    log_y: bool,
}

impl Axes {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let tx = if self.xmax > self.xmin {
            (x - self.xmin) / (self.xmax - self.xmin)
        } else {
            0.5
        };
        let (ya, yb, yv) = if self.log_y {
            (self.ymin.log10(), self.ymax.log10(), y.log10())
        } else {
            (self.ymin, self.ymax, y)
        };
        let ty = if yb > ya { (yv - ya) / (yb - ya) } else { 0.5 };
        (self.x0 + tx * self.w, self.y0 + self.h - ty * self.h)
    }
}

/// Round tick step to a 1/2/5 decade multiple.
fn nice_step(range: f64, target: usize) -> f64 {
    if range <= 0.0 || !range.is_finite() {
        return 1.0;
    }
    let raw = range / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn linear_ticks(min: f64, max: f64) -> Vec<f64> {
    let step = nice_step(max - min, 5);
    let mut t = (min / step).ceil() * step;
    let mut out = Vec::new();
    while t <= max + step * 1e-9 {
        // Snap near-zero ticks so labels print as 0.
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn decade_ticks(min: f64, max: f64) -> Vec<i32> {
    let lo = min.log10().floor() as i32;
    let hi = max.log10().ceil() as i32;
    (lo..=hi).collect()
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s.is_empty() || s == "-" {
            "0".into()
        } else {
            s.into()
        }
    }
}

/// Frame, ticks, and labels for one panel; data drawing is the caller's.
fn draw_axes(svg: &mut Svg, ax: &Axes, title: &str) {
    svg.rect(ax.x0, ax.y0, ax.w, ax.h, "none", "#444444");
    svg.text(ax.x0 + ax.w / 2.0, ax.y0 - 8.0, 13.0, "middle", title);
    for t in linear_ticks(ax.xmin, ax.xmax) {
        let (xp, _) = ax.map(t, ax.ymin.max(1e-300));
        svg.line(xp, ax.y0 + ax.h, xp, ax.y0 + ax.h + 4.0, "#444444", 1.0);
        svg.text(xp, ax.y0 + ax.h + 16.0, 11.0, "middle", &tick_label(t));
    }
    if ax.log_y {
        for e in decade_ticks(ax.ymin, ax.ymax) {
            let v = 10f64.powi(e);
            if v < ax.ymin * 0.999 || v > ax.ymax * 1.001 {
                continue;
            }
            let (_, yp) = ax.map(ax.xmin, v);
            svg.line(ax.x0, yp, ax.x0 + ax.w, yp, GRID, 0.5);
            svg.line(ax.x0 - 4.0, yp, ax.x0, yp, "#444444", 1.0);
            svg.text(ax.x0 - 6.0, yp + 4.0, 11.0, "end", &format!("1e{e}"));
        }
    } else {
        for t in linear_ticks(ax.ymin, ax.ymax) {
            let (_, yp) = ax.map(ax.xmin, t);
            svg.line(ax.x0, yp, ax.x0 + ax.w, yp, GRID, 0.5);
            svg.line(ax.x0 - 4.0, yp, ax.x0, yp, "#444444", 1.0);
            svg.text(ax.x0 - 6.0, yp + 4.0, 11.0, "end", &tick_label(t));
        }
    }
}

fn finite_min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo <= hi).then_some((lo, hi))
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).max(1e-12);
    (lo - 0.05 * span, hi + 0.05 * span)
}

struct Panel<'a> {
    title: String,
    /// (label, color, series); bands drawn first as (center, halfwidth).
    band: Option<(Vec<f64>, Vec<f64>)>,
    series: Vec<(&'a str, &'a str, Vec<f64>)>,
}

/// Stacked time panels sharing one x axis.
fn render_panels(t: &[f64], panels: &[Panel], path: &Path) -> Result<()> {
    if t.is_empty() || panels.is_empty() {
        bail!("nothing to plot");
    }
    let width = MARGIN_L + PANEL_W + MARGIN_R;
    let height = MARGIN_T + panels.len() as f64 * (PANEL_H + PANEL_GAP) - PANEL_GAP + MARGIN_B;
    let mut svg = Svg::new(width, height);
    let (xmin, xmax) = finite_min_max(t.iter().copied()).context("time axis has no data")?;
    for (i, panel) in panels.iter().enumerate() {
        let mut values: Vec<f64> = panel.series.iter().flat_map(|s| s.2.clone()).collect();
        if let Some((center, half)) = &panel.band {
            values.extend(center.iter().zip(half).map(|(c, h)| c - h));
            values.extend(center.iter().zip(half).map(|(c, h)| c + h));
        }
        let (lo, hi) = finite_min_max(values.into_iter()).context("panel has no finite data")?;
        let (ymin, ymax) = pad_range(lo, hi);
        let ax = Axes {
            x0: MARGIN_L,
            y0: MARGIN_T + i as f64 * (PANEL_H + PANEL_GAP),
            w: PANEL_W,
            h: PANEL_H,
            xmin,
            xmax,
            ymin,
            ymax,
            log_y: false,
        };
        draw_axes(&mut svg, &ax, &panel.title);
        if let Some((center, half)) = &panel.band {
            let mut pts: Vec<(f64, f64)> = t
                .iter()
                .zip(center.iter().zip(half))
                .map(|(x, (c, h))| ax.map(*x, (c + h).clamp(ymin, ymax)))
                .collect();
            let lower: Vec<(f64, f64)> = t
                .iter()
                .zip(center.iter().zip(half))
                .map(|(x, (c, h))| ax.map(*x, (c - h).clamp(ymin, ymax)))
                .rev()
                .collect();
            pts.extend(lower);
            svg.polygon(&pts, MEAN, 0.18);
        }
        let mut legend_x = ax.x0 + 8.0;
        for (label, color, series) in &panel.series {
            let pts: Vec<(f64, f64)> = t
                .iter()
                .zip(series)
                .filter(|(_, v)| v.is_finite())
                .map(|(x, v)| ax.map(*x, *v))
                .collect();
            svg.polyline(&pts, color, 1.4);
            svg.line(legend_x, ax.y0 + 12.0, legend_x + 18.0, ax.y0 + 12.0, color, 2.0);
            svg.text(legend_x + 22.0, ax.y0 + 16.0, 11.0, "start", label);
            legend_x += 26.0 + 7.0 * label.len() as f64;
        }
    }
    let last = panels.len() as f64;
    svg.text(
        MARGIN_L + PANEL_W / 2.0,
        MARGIN_T + last * (PANEL_H + PANEL_GAP) - PANEL_GAP + 32.0,
        12.0,
        "middle",
        "t",
    );
    fs::write(path, svg.finish()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn count_cols(table: &Table, prefix: &str) -> usize {
    table
        .columns
        .iter()
        .filter(|c| {
            c.strip_prefix(prefix)
                .and_then(|s| s.strip_prefix('_'))
                .is_some_and(|s| !s.is_empty() && s.chars().all(|ch| ch.is_ascii_digit()))
        })
        .count()
}

fn stem_of(path: &Path) -> Result<String> {
    Ok(path
        .file_stem()
        .and_then(|s| s.to_str())
        .context("record path has no stem")?
        .to_owned())
}

/// Filter-run record: state panels with 95% bands plus, when the record
/// carries parameters, a parameter-trace figure (first eight slots).
pub fn plot_run_record(record_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let table = Table::read(record_csv)?;
    if table.rows.is_empty() {
        bail!("empty record: {}", record_csv.display());
    }
    let stem = stem_of(record_csv)?;
    let t = table.column("t")?;
    let nx = count_cols(&table, "x_mean");
    if nx == 0 {
        bail!("record has no state estimate columns");
    }
    let mut outputs = Vec::new();

    let mut panels = Vec::new();
    for i in 1..=nx {
        let mean = table.column(&format!("x_mean_{i}"))?;
        let std = table.column(&format!("x_std_{i}"))?;
        let half: Vec<f64> = std.iter().map(|s| 1.96 * s).collect();
        let mut series = Vec::new();
        if table.col(&format!("x_true_{i}")).is_ok() {
            series.push(("true", TRUTH, table.column(&format!("x_true_{i}"))?));
        }
        series.push(("mean", MEAN, mean.clone()));
        panels.push(Panel {
            title: format!("state x{i}"),
            band: Some((mean, half)),
            series,
        });
    }
    let states_path = out_dir.join(format!("{stem}_states.svg"));
    render_panels(&t, &panels, &states_path)?;
    outputs.push(states_path);

    let ntp = count_cols(&table, "theta_mean");
    if ntp > 0 {
        let mut panels = Vec::new();
        for j in 1..=ntp.min(8) {
            let mean = table.column(&format!("theta_mean_{j}"))?;
            let std = table.column(&format!("theta_std_{j}"))?;
            let half: Vec<f64> = std.iter().map(|s| 1.96 * s).collect();
            let mut series = vec![("mean", MEAN, mean.clone())];
            if table.col(&format!("theta_true_{j}")).is_ok() {
                series.insert(0, ("true", TRUTH, table.column(&format!("theta_true_{j}"))?));
            }
            panels.push(Panel {
                title: format!("parameter {j}"),
                band: Some((mean, half)),
                series,
            });
        }
        let params_path = out_dir.join(format!("{stem}_params.svg"));
        render_panels(&t, &panels, &params_path)?;
        outputs.push(params_path);
    }
    Ok(outputs)
}

/// Log-scaled CRPS boxplot from the Monte Carlo quartiles file. Rows with
/// coord 0 carry the per-run coordinate-averaged score; filter_id follows
/// the study's rbpf/rbsgd/rbfsgd order.
pub fn plot_mc_quartiles(quartiles_csv: &Path, out_dir: &Path) -> Result<PathBuf> {
    let table = Table::read(quartiles_csv)?;
    if table.rows.is_empty() {
        bail!("empty quartiles file: {}", quartiles_csv.display());
    }
    let names = ["rbpf", "rbsgd", "rbfsgd"];
    let fid = table.col("filter_id")?;
    let coord = table.col("coord")?;
    let mut cols = [0usize; 5];
    for (k, name) in ["min", "q1", "median", "q3", "max"].iter().enumerate() {
        cols[k] = table.col(name)?;
    }
    let mut boxes: Vec<(usize, [f64; 5])> = Vec::new();
    for row in &table.rows {
        if row[coord] == 0.0 {
            let id = row[fid] as usize;
            boxes.push((id, cols.map(|c| row[c])));
        }
    }
    if boxes.is_empty() {
        bail!("quartiles file has no coordinate-averaged rows");
    }
    boxes.sort_by_key(|(id, _)| *id);

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, q) in &boxes {
        lo = lo.min(q[0]);
        hi = hi.max(q[4]);
    }
    // Log axis needs a positive floor even if a run scored ~0.
    lo = lo.max(1e-12);
    hi = hi.max(lo * 10.0);
    let width = MARGIN_L + PANEL_W + MARGIN_R;
    let height = MARGIN_T + PANEL_H + MARGIN_B;
    let mut svg = Svg::new(width, height);
    let ax = Axes {
        x0: MARGIN_L,
        y0: MARGIN_T,
        w: PANEL_W,
        h: PANEL_H,
        xmin: 0.0,
        xmax: boxes.len() as f64,
        ymin: lo / 1.5,
        ymax: hi * 1.5,
        log_y: true,
    };
    svg.rect(ax.x0, ax.y0, ax.w, ax.h, "none", "#444444");
    svg.text(
        ax.x0 + ax.w / 2.0,
        ax.y0 - 8.0,
        13.0,
        "middle",
        "time-averaged CRPS across runs (log scale)",
    );
    for e in decade_ticks(ax.ymin, ax.ymax) {
        let v = 10f64.powi(e);
        if v < ax.ymin || v > ax.ymax {
            continue;
        }
        let (_, yp) = ax.map(0.0, v);
        svg.line(ax.x0, yp, ax.x0 + ax.w, yp, GRID, 0.5);
        svg.text(ax.x0 - 6.0, yp + 4.0, 11.0, "end", &format!("1e{e}"));
    }
    let slot = ax.w / boxes.len() as f64;
    for (i, (id, q)) in boxes.iter().enumerate() {
        let cx = ax.x0 + (i as f64 + 0.5) * slot;
        let half = (slot * 0.18).min(45.0);
        let y = |v: f64| ax.map(0.0, v.clamp(ax.ymin, ax.ymax)).1;
        // Whiskers, box, median.
        svg.line(cx, y(q[0]), cx, y(q[1]), TRUTH, 1.0);
        svg.line(cx, y(q[3]), cx, y(q[4]), TRUTH, 1.0);
        svg.line(cx - half * 0.6, y(q[0]), cx + half * 0.6, y(q[0]), TRUTH, 1.0);
        svg.line(cx - half * 0.6, y(q[4]), cx + half * 0.6, y(q[4]), TRUTH, 1.0);
        svg.rect(cx - half, y(q[3]), 2.0 * half, y(q[1]) - y(q[3]), BOX_FILL, MEAN);
        svg.line(cx - half, y(q[2]), cx + half, y(q[2]), "#08306b", 2.0);
        let label = names.get(*id).copied().unwrap_or("?");
        svg.text(cx, ax.y0 + ax.h + 16.0, 12.0, "middle", label);
    }
    let stem = stem_of(quartiles_csv)?;
    let path = out_dir.join(format!("{stem}_boxplot.svg"));
    fs::write(&path, svg.finish()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Reconstruction figure: learned vs true nonlinearity, and the running
/// measurement-variance estimate.
pub fn plot_fnl(fnl_csv: &Path, out_dir: &Path) -> Result<PathBuf> {
    let table = Table::read(fnl_csv)?;
    if table.rows.is_empty() {
        bail!("empty record: {}", fnl_csv.display());
    }
    let t = table.column("t")?;
    let panels = vec![
        Panel {
            title: "hidden nonlinearity along the true trajectory".into(),
            band: None,
            series: vec![
                ("true", TRUTH, table.column("fnl_true")?),
                ("network", ALT, table.column("fnl_pred")?),
            ],
        },
        Panel {
            title: "measurement variance estimate".into(),
            band: None,
            series: vec![("R estimate", GREEN, table.column("r_hat")?)],
        },
    ];
    let stem = stem_of(fnl_csv)?;
    let path = out_dir.join(format!("{stem}_traces.svg"));
    render_panels(&t, &panels, &path)?;
    Ok(path)
}

/// Trajectory file: one panel per state coordinate plus measurements.
pub fn plot_trajectory(traj_csv: &Path, out_dir: &Path) -> Result<PathBuf> {
    let table = Table::read(traj_csv)?;
    if table.rows.is_empty() {
        bail!("empty record: {}", traj_csv.display());
    }
    let t = table.column("t")?;
    let nx = table
        .columns
        .iter()
        .filter(|c| {
            c.strip_prefix('x')
                .is_some_and(|s| !s.is_empty() && s.chars().all(|ch| ch.is_ascii_digit()))
        })
        .count();
    if nx == 0 {
        bail!("trajectory has no state columns");
    }
    let mut panels = Vec::new();
    for i in 1..=nx {
        panels.push(Panel {
            title: format!("state x{i}"),
            band: None,
            series: vec![("true", TRUTH, table.column(&format!("x{i}"))?)],
        });
    }
    let stem = stem_of(traj_csv)?;
    let path = out_dir.join(format!("{stem}.svg"));
    render_panels(&t, &panels, &path)?;
    Ok(path)
}

/// `plot`: route each input file to the figure its name declares.
pub fn cmd_plot(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        bail!("no input records given");
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut outputs = Vec::new();
    for input in inputs {
        let name = input
            .file_name()
            .and_then(|s| s.to_str())
            .context("input path has no file name")?;
        if name.contains("quartiles") {
            outputs.push(plot_mc_quartiles(input, out_dir)?);
        } else if name.contains("fnl") {
            outputs.push(plot_fnl(input, out_dir)?);
        } else if name.contains("trajectory") {
            outputs.push(plot_trajectory(input, out_dir)?);
        } else {
            outputs.extend(plot_run_record(input, out_dir)?);
        }
    }
    Ok(outputs)
}
