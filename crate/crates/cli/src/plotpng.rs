//! Minimal raster plotting: line charts and box-and-whisker charts rendered
//! straight into an RGB buffer and saved as PNG. Numeric tick labels use a
//! built-in 3x5 pixel font; anything textual beyond numbers belongs in the
//! CSV emitted next to each image.

use std::path::Path;

use ddff_core::data_io::save_image;
use ndarray::Array3;

pub const BLACK: [f32; 3] = [0.05, 0.05, 0.05];
pub const GRID: [f32; 3] = [0.85, 0.85, 0.85];

/// Distinguishable series colors, cycled.
pub const PALETTE: [[f32; 3]; 6] = [
    [0.12, 0.35, 0.80], // blue
    [0.85, 0.20, 0.15], // red
    [0.13, 0.60, 0.25], // green
    [0.90, 0.55, 0.10], // orange
    [0.50, 0.25, 0.70], // purple
    [0.10, 0.62, 0.65], // teal
];

/// 3x5 glyphs for numeric labels; each entry is five rows of three bits
/// (most significant bit = left pixel).
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '+' => [0b000, 0b010, 0b111, 0b010, 0b000],
        'e' | 'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        ' ' => [0; 5],
        _ => return None,
    })
}

/// White-background RGB canvas with integer pixel drawing.
pub struct Canvas {
    pub px: Array3<f32>,
    pub w: i64,
    pub h: i64,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Canvas {
        Canvas {
            px: Array3::from_elem((h, w, 3), 1.0),
            w: w as i64,
            h: h as i64,
        }
    }

    pub fn set(&mut self, x: i64, y: i64, rgb: [f32; 3]) {
        if x >= 0 && x < self.w && y >= 0 && y < self.h {
            for c in 0..3 {
                self.px[[y as usize, x as usize, c]] = rgb[c];
            }
        }
    }

    /// Bresenham line segment.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [f32; 3]) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Filled 3x3 marker.
    pub fn marker(&mut self, x: i64, y: i64, rgb: [f32; 3]) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                self.set(x + dx, y + dy, rgb);
            }
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [f32; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y, rgb);
            }
        }
    }

    pub fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [f32; 3]) {
        self.line(x0, y0, x1, y0, rgb);
        self.line(x0, y1, x1, y1, rgb);
        self.line(x0, y0, x0, y1, rgb);
        self.line(x1, y0, x1, y1, rgb);
    }

    /// Draws numeric text at 2x scale; returns the width consumed.
    pub fn text(&mut self, x: i64, y: i64, s: &str, rgb: [f32; 3]) -> i64 {
        const SCALE: i64 = 2;
        let mut cx = x;
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..3 {
                        if bits & (0b100 >> rx) != 0 {
                            self.fill_rect(
                                cx + rx as i64 * SCALE,
                                y + ry as i64 * SCALE,
                                cx + rx as i64 * SCALE + SCALE - 1,
                                y + ry as i64 * SCALE + SCALE - 1,
                                rgb,
                            );
                        }
                    }
                }
            }
            cx += 4 * SCALE;
        }
        cx - x
    }

    pub fn text_width(s: &str) -> i64 {
        s.chars().count() as i64 * 8
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        save_image(path, self.px.view())?;
        Ok(())
    }
}

/// Compact tick label: plain decimal in a friendly range, scientific
/// notation outside it.
pub fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() || s == "-" {
            "0".to_string()
        } else {
            s
        }
    } else {
        format!("{v:.1e}")
    }
}

/// Axis range with padding; degenerate spans widen symmetrically.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

/// One plotted polyline.
pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub color: [f32; 3],
}

impl Series {
    pub fn new(points: Vec<(f64, f64)>, color: [f32; 3]) -> Series {
        Series { points, color }
    }
}

const W: usize = 640;
const H: usize = 420;
const LEFT: i64 = 64;
const RIGHT: i64 = W as i64 - 16;
const TOP: i64 = 16;
const BOTTOM: i64 = H as i64 - 32;

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn map_x(&self, v: f64) -> i64 {
        let t = (v - self.x_lo) / (self.x_hi - self.x_lo);
        LEFT + (t * (RIGHT - LEFT) as f64).round() as i64
    }

    fn map_y(&self, v: f64) -> i64 {
        let t = (v - self.y_lo) / (self.y_hi - self.y_lo);
        BOTTOM - (t * (BOTTOM - TOP) as f64).round() as i64
    }

    /// Grid, axis frame, and 5 labelled ticks per axis.
    fn draw_axes(&self, c: &mut Canvas) {
        for i in 0..=4 {
            let fx = self.x_lo + (self.x_hi - self.x_lo) * i as f64 / 4.0;
            let px = self.map_x(fx);
            c.line(px, TOP, px, BOTTOM, GRID);
            let label = tick_label(fx);
            let tw = Canvas::text_width(&label);
            c.text(px - tw / 2, BOTTOM + 6, &label, BLACK);

            let fy = self.y_lo + (self.y_hi - self.y_lo) * i as f64 / 4.0;
            let py = self.map_y(fy);
            c.line(LEFT, py, RIGHT, py, GRID);
            let label = tick_label(fy);
            let tw = Canvas::text_width(&label);
            c.text(LEFT - 6 - tw, py - 5, &label, BLACK);
        }
        c.rect(LEFT, TOP, RIGHT, BOTTOM, BLACK);
    }
}

/// Renders polyline series over shared axes and writes the PNG.
pub fn line_plot(path: &Path, series: &[Series]) -> anyhow::Result<()> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    if xs.is_empty() {
        anyhow::bail!("nothing to plot: no finite points");
    }
    let (x_lo, x_hi) = padded_range(
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = padded_range(
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
    };
    let mut canvas = Canvas::new(W, H);
    frame.draw_axes(&mut canvas);
    for s in series {
        let pts: Vec<(i64, i64)> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| (frame.map_x(x), frame.map_y(y)))
            .collect();
        for w in pts.windows(2) {
            canvas.line(w[0].0, w[0].1, w[1].0, w[1].1, s.color);
        }
        for &(x, y) in &pts {
            canvas.marker(x, y, s.color);
        }
    }
    canvas.save(path)
}

/// Five-number summary `[min, q1, median, q3, max]` per category. Categories
/// are drawn left to right and labelled by index; index-to-name mapping goes
/// in the accompanying CSV.
pub fn box_plot(path: &Path, summaries: &[[f64; 5]]) -> anyhow::Result<()> {
    if summaries.is_empty() {
        anyhow::bail!("nothing to plot: no summaries");
    }
    let y_min = summaries
        .iter()
        .map(|s| s[0])
        .fold(f64::INFINITY, f64::min);
    let y_max = summaries
        .iter()
        .map(|s| s[4])
        .fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = padded_range(y_min, y_max);
    let n = summaries.len() as f64;
    let frame = Frame {
        x_lo: -0.6,
        x_hi: n - 0.4,
        y_lo,
        y_hi,
    };
    let mut canvas = Canvas::new(W, H);
    // Only the y axis carries value ticks; x is categorical.
    for i in 0..=4 {
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let py = frame.map_y(fy);
        canvas.line(LEFT, py, RIGHT, py, GRID);
        let label = tick_label(fy);
        let tw = Canvas::text_width(&label);
        canvas.text(LEFT - 6 - tw, py - 5, &label, BLACK);
    }
    canvas.rect(LEFT, TOP, RIGHT, BOTTOM, BLACK);

    let half_w = ((RIGHT - LEFT) as f64 / n * 0.2).max(3.0) as i64;
    for (i, s) in summaries.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = frame.map_x(i as f64);
        let [lo, q1, med, q3, hi] = *s;
        let (ylo, yq1, ymed, yq3, yhi) = (
            frame.map_y(lo),
            frame.map_y(q1),
            frame.map_y(med),
            frame.map_y(q3),
            frame.map_y(hi),
        );
        canvas.line(cx, ylo, cx, yq1, color);
        canvas.line(cx, yq3, cx, yhi, color);
        canvas.line(cx - half_w / 2, ylo, cx + half_w / 2, ylo, color);
        canvas.line(cx - half_w / 2, yhi, cx + half_w / 2, yhi, color);
        canvas.rect(cx - half_w, yq3, cx + half_w, yq1, color);
        canvas.line(cx - half_w, ymed, cx + half_w, ymed, BLACK);
        let label = format!("{i}");
        let tw = Canvas::text_width(&label);
        canvas.text(cx - tw / 2, BOTTOM + 6, &label, BLACK);
    }
    canvas.save(path)
}
