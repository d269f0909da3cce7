//! Standalone SVG charts. Data points are `<circle class="point">`, heatmap
//! cells `<rect class="cell">` and bars `<rect class="bar">`, so tests can
//! count them.

use std::fmt::Write;

use hsicgru::training::{InfoPlaneRow, PredictionRow};

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Compact number label.
fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut svg = Svg {
            width,
            height,
            body: String::new(),
        };
        svg.text(width / 2.0, 24.0, title, "middle", 16.0);
        svg
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            escape(s)
        );
    }

    fn vertical_text(&mut self, x: f64, y: f64, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            escape(s)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, class: &str) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    fn point(&mut self, x: f64, y: f64, r: f64, fill: &str, title: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="point" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"><title>{}</title></circle>"#,
            escape(title)
        );
    }

    fn rect(&mut self, class: &str, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{extra}/>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

/// Finite data range, widened when degenerate and padded by 5 %.
fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1e-300) {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn new(top: f64, width: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        Panel {
            left: MARGIN_LEFT,
            top,
            width: width - MARGIN_LEFT - MARGIN_RIGHT,
            height: PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
            x,
            y,
        }
    }

    fn px(&self, v: f64) -> f64 {
        self.left + (v - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, v: f64) -> f64 {
        self.top + self.height - (v - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, svg: &mut Svg, xlabel: &str, ylabel: &str) {
        let bottom = self.top + self.height;
        let right = self.left + self.width;
        svg.line(self.left, bottom, right, bottom, "black");
        svg.line(self.left, self.top, self.left, bottom, "black");
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let x = self.px(xv);
            svg.line(x, bottom, x, bottom + 5.0, "black");
            svg.text(x, bottom + 18.0, &fmt_num(xv), "middle", 11.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let y = self.py(yv);
            svg.line(self.left - 5.0, y, self.left, y, "black");
            svg.line(self.left, y, right, y, "#e0e0e0");
            svg.text(self.left - 8.0, y + 4.0, &fmt_num(yv), "end", 11.0);
        }
        svg.text(self.left + self.width / 2.0, bottom + 38.0, xlabel, "middle", 12.0);
        svg.vertical_text(self.left - 58.0, self.top + self.height / 2.0, ylabel);
    }

    fn legend(&self, svg: &mut Svg, entries: &[(String, &str)]) {
        let x = self.left + self.width + 15.0;
        for (k, (label, color)) in entries.iter().enumerate() {
            let y = self.top + 10.0 + 18.0 * k as f64;
            svg.line(x, y, x + 20.0, y, color);
            svg.text(x + 26.0, y + 4.0, label, "start", 11.0);
        }
    }
}

/// Truth and prediction per cycle with the relative error below, one color
/// per battery. Each prediction is one point.
pub fn capacity(rows: &[PredictionRow]) -> String {
    let mut svg = Svg::new(WIDTH, 2.0 * PANEL_HEIGHT, "Capacity and relative errors");
    let xr = range(rows.iter().map(|r| r.cycle_index as f64));
    let top = Panel::new(MARGIN_TOP, WIDTH, xr, range(rows.iter().flat_map(|r| [r.truth, r.prediction])));
    let bottom = Panel::new(PANEL_HEIGHT + MARGIN_TOP, WIDTH, xr, range(rows.iter().map(|r| r.relative_error)));
    top.axes(&mut svg, "cycle", "capacity (Ah)");
    bottom.axes(&mut svg, "cycle", "relative error (Ah)");

    let mut batteries: Vec<&str> = Vec::new();
    for r in rows {
        if !batteries.contains(&r.battery_id.as_str()) {
            batteries.push(&r.battery_id);
        }
    }
    let mut legend = Vec::new();
    for (b, id) in batteries.iter().enumerate() {
        let color = PALETTE[b % PALETTE.len()];
        let mine: Vec<&PredictionRow> = rows.iter().filter(|r| r.battery_id == *id).collect();
        let truth: Vec<(f64, f64)> = mine.iter().map(|r| (top.px(r.cycle_index as f64), top.py(r.truth))).collect();
        svg.polyline(&truth, "black", "truth");
        for r in &mine {
            let title = format!("{id} cycle {}: {}", r.cycle_index, fmt_num(r.prediction));
            svg.point(top.px(r.cycle_index as f64), top.py(r.prediction), 2.5, color, &title);
        }
        let err: Vec<(f64, f64)> = mine
            .iter()
            .map(|r| (bottom.px(r.cycle_index as f64), bottom.py(r.relative_error)))
            .collect();
        svg.polyline(&err, color, "error");
        legend.push((format!("{id} prediction"), color));
    }
    legend.push(("truth".to_string(), "black"));
    top.legend(&mut svg, &legend);
    svg.finish()
}

pub struct HeatCell {
    pub row: String,
    pub col: String,
    pub value: f64,
}

/// Light for low values, dark for high.
fn shade(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 1.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(247.0, 48.0), lerp(236.0, 107.0))
}

/// Grid of `value` with rows and columns in order of first appearance.
/// Cells are emitted in the order given.
pub fn heatmap(cells: &[HeatCell], row_label: &str, col_label: &str, metric: &str) -> String {
    let mut rows: Vec<&str> = Vec::new();
    let mut cols: Vec<&str> = Vec::new();
    for c in cells {
        if !rows.contains(&c.row.as_str()) {
            rows.push(&c.row);
        }
        if !cols.contains(&c.col.as_str()) {
            cols.push(&c.col);
        }
    }
    let cell_w = 90.0;
    let cell_h = 40.0;
    let left = 120.0;
    let top = 60.0;
    let width = left + cell_w * cols.len() as f64 + 40.0;
    let height = top + cell_h * rows.len() as f64 + 70.0;
    let mut svg = Svg::new(width.max(320.0), height, &format!("{metric} by {row_label} and {col_label}"));
    let (lo, hi) = range(cells.iter().map(|c| c.value));
    for (k, c) in cells.iter().enumerate() {
        let i = rows.iter().position(|r| *r == c.row).unwrap_or(0);
        let j = cols.iter().position(|r| *r == c.col).unwrap_or(0);
        let t = (c.value - lo) / (hi - lo);
        let x = left + cell_w * j as f64;
        let y = top + cell_h * i as f64;
        let extra = format!(
            r#" data-index="{k}" data-row="{}" data-col="{}" data-value="{}" stroke="white""#,
            escape(&c.row),
            escape(&c.col),
            c.value
        );
        svg.rect("cell", x, y, cell_w, cell_h, &shade(t), &extra);
        let ink = if t > 0.5 { "white" } else { "black" };
        let _ = writeln!(
            svg.body,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" fill="{ink}">{}</text>"#,
            x + cell_w / 2.0,
            y + cell_h / 2.0 + 4.0,
            escape(&fmt_num(c.value))
        );
    }
    for (i, r) in rows.iter().enumerate() {
        svg.text(left - 8.0, top + cell_h * (i as f64 + 0.5) + 4.0, r, "end", 11.0);
    }
    for (j, c) in cols.iter().enumerate() {
        svg.text(left + cell_w * (j as f64 + 0.5), top + cell_h * rows.len() as f64 + 18.0, c, "middle", 11.0);
    }
    svg.text(left + cell_w * cols.len() as f64 / 2.0, top + cell_h * rows.len() as f64 + 42.0, col_label, "middle", 12.0);
    svg.vertical_text(24.0, top + cell_h * rows.len() as f64 / 2.0, row_label);
    svg.finish()
}

/// HSIC(X;H) against training MSE, one point per epoch, with the smoothed
/// trace and its peak marked.
pub fn info_plane(rows: &[InfoPlaneRow]) -> String {
    let mut svg = Svg::new(WIDTH, PANEL_HEIGHT + 20.0, "Information plane");
    let panel = Panel::new(
        MARGIN_TOP,
        WIDTH,
        range(rows.iter().flat_map(|r| [r.hsic_xh, r.hsic_smoothed])),
        range(rows.iter().map(|r| r.train_mse)),
    );
    panel.axes(&mut svg, "HSIC(X;H)", "training MSE");
    let n = rows.len().max(2) - 1;
    for (k, r) in rows.iter().enumerate() {
        let color = shade(k as f64 / n as f64);
        svg.point(panel.px(r.hsic_xh), panel.py(r.train_mse), 2.5, &color, &format!("epoch {}", r.epoch));
    }
    let smooth: Vec<(f64, f64)> = rows.iter().map(|r| (panel.px(r.hsic_smoothed), panel.py(r.train_mse))).collect();
    svg.polyline(&smooth, PALETTE[1], "smoothed");
    let mut peak: Option<&InfoPlaneRow> = None;
    for r in rows {
        if peak.is_none_or(|p| r.hsic_smoothed > p.hsic_smoothed) {
            peak = Some(r);
        }
    }
    if let Some(p) = peak {
        let (x, y) = (panel.px(p.hsic_smoothed), panel.py(p.train_mse));
        let _ = writeln!(
            svg.body,
            r#"<circle class="turning-point" cx="{x:.2}" cy="{y:.2}" r="6" fill="none" stroke="{}" stroke-width="2"/>"#,
            PALETTE[1]
        );
        svg.text(x + 8.0, y - 8.0, &format!("epoch {}", p.epoch), "start", 11.0);
    }
    panel.legend(
        &mut svg,
        &[("epoch (light to dark)".to_string(), "#08306b"), ("smoothed".to_string(), PALETTE[1])],
    );
    svg.finish()
}

pub struct EpochRow {
    pub epoch: f64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub hsic_xh: f64,
}

/// Training and validation MSE per epoch above HSIC(X;H) per epoch.
pub fn training(rows: &[EpochRow]) -> String {
    let mut svg = Svg::new(WIDTH, 2.0 * PANEL_HEIGHT, "Training curves");
    let xr = range(rows.iter().map(|r| r.epoch));
    let top = Panel::new(MARGIN_TOP, WIDTH, xr, range(rows.iter().flat_map(|r| [r.train_mse, r.val_mse])));
    let bottom = Panel::new(PANEL_HEIGHT + MARGIN_TOP, WIDTH, xr, range(rows.iter().map(|r| r.hsic_xh)));
    top.axes(&mut svg, "epoch", "MSE");
    bottom.axes(&mut svg, "epoch", "HSIC(X;H)");
    let series = |p: &Panel, f: &dyn Fn(&EpochRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (p.px(r.epoch), p.py(f(r)))).collect()
    };
    svg.polyline(&series(&top, &|r| r.train_mse), PALETTE[0], "train");
    svg.polyline(&series(&top, &|r| r.val_mse), PALETTE[1], "val");
    svg.polyline(&series(&bottom, &|r| r.hsic_xh), PALETTE[2], "hsic");
    top.legend(
        &mut svg,
        &[("train".to_string(), PALETTE[0]), ("validation".to_string(), PALETTE[1])],
    );
    svg.finish()
}

/// One bar per named metric.
pub fn metrics(values: &[(String, f64)]) -> String {
    let bar_w = 70.0;
    let width = MARGIN_LEFT + bar_w * 1.5 * values.len() as f64 + 40.0;
    let mut svg = Svg::new(width.max(320.0), PANEL_HEIGHT, "Error metrics");
    let hi = values.iter().map(|(_, v)| *v).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let hi = if hi > 0.0 { hi * 1.1 } else { 1.0 };
    let base = PANEL_HEIGHT - MARGIN_BOTTOM;
    let span = base - MARGIN_TOP - 10.0;
    svg.line(MARGIN_LEFT - 10.0, base, width - 20.0, base, "black");
    for (k, (name, v)) in values.iter().enumerate() {
        let h = if v.is_finite() { (v.max(0.0) / hi) * span } else { 0.0 };
        let x = MARGIN_LEFT + bar_w * 1.5 * k as f64;
        let extra = format!(r#" data-metric="{}" data-value="{v}""#, escape(name));
        svg.rect("bar", x, base - h, bar_w, h, PALETTE[k % PALETTE.len()], &extra);
        svg.text(x + bar_w / 2.0, base - h - 6.0, &fmt_num(*v), "middle", 11.0);
        svg.text(x + bar_w / 2.0, base + 18.0, name, "middle", 12.0);
    }
    svg.finish()
}
