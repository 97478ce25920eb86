//! Minimal static charting: a scene of primitives rendered to SVG text or
//! to a PNG raster with an 8x8 bitmap font. Output is a pure function of
//! the scene, so repeated renders are byte-identical.

use std::fmt::Write;

use font8x8::legacy::BASIC_LEGACY;
use leafscope_core::imgproc::RawImage;

use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub const WHITE: Rgb = Rgb(255, 255, 255);
    pub const BLACK: Rgb = Rgb(0, 0, 0);
    pub const GRID: Rgb = Rgb(221, 221, 221);
    pub const BLUE: Rgb = Rgb(31, 119, 180);
    pub const ORANGE: Rgb = Rgb(255, 127, 14);

    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }

    /// White-to-`self` blend at `t` in [0, 1].
    pub fn tint(self, t: f64) -> Rgb {
        let t = t.clamp(0.0, 1.0);
        let mix = |c: u8| (255.0 + (c as f64 - 255.0) * t).round() as u8;
        Rgb(mix(self.0), mix(self.1), mix(self.2))
    }

    pub fn is_dark(self) -> bool {
        0.299 * f64::from(self.0) + 0.587 * f64::from(self.1) + 0.114 * f64::from(self.2) < 128.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Start,
    Middle,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Rect { x: f64, y: f64, w: f64, h: f64, fill: Rgb },
    Line { x1: f64, y1: f64, x2: f64, y2: f64, color: Rgb, width: f64 },
    Polyline { points: Vec<(f64, f64)>, color: Rgb, width: f64 },
    /// Square marker centred on `(x, y)`.
    Marker { x: f64, y: f64, size: f64, color: Rgb },
    /// `y` is the text's vertical centre; `scale` multiplies the 8 px glyphs.
    Text { x: f64, y: f64, text: String, scale: u32, anchor: Anchor, color: Rgb },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub shapes: Vec<Shape>,
}

pub const GLYPH: f64 = 8.0;

fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn text_width(text: &str, scale: u32) -> f64 {
    text.chars().count() as f64 * GLYPH * scale as f64
}

fn anchor_left(x: f64, text: &str, scale: u32, anchor: Anchor) -> f64 {
    let w = text_width(text, scale);
    match anchor {
        Anchor::Start => x,
        Anchor::Middle => x - w / 2.0,
        Anchor::End => x - w,
    }
}

impl Scene {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            shapes: vec![Shape::Rect {
                x: 0.0,
                y: 0.0,
                w: width as f64,
                h: height as f64,
                fill: Rgb::WHITE,
            }],
        }
    }

    pub fn push(&mut self, shape: Shape) {
        self.shapes.push(shape);
    }

    pub fn text(&mut self, x: f64, y: f64, text: impl Into<String>, anchor: Anchor) {
        self.push(Shape::Text {
            x,
            y,
            text: text.into(),
            scale: 1,
            anchor,
            color: Rgb::BLACK,
        });
    }

    pub fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), color: Rgb, width: f64) {
        self.push(Shape::Line { x1, y1, x2, y2, color, width });
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.width,
            h = self.height
        );
        for shape in &self.shapes {
            let _ = match shape {
                Shape::Rect { x, y, w, h, fill } => writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                    n(*x),
                    n(*y),
                    n(*w),
                    n(*h),
                    fill.hex()
                ),
                Shape::Line { x1, y1, x2, y2, color, width } => writeln!(
                    s,
                    r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="{}"/>"#,
                    n(*x1),
                    n(*y1),
                    n(*x2),
                    n(*y2),
                    color.hex(),
                    n(*width)
                ),
                Shape::Polyline { points, color, width } => {
                    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{},{}", n(*x), n(*y))).collect();
                    writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
                        pts.join(" "),
                        color.hex(),
                        n(*width)
                    )
                }
                Shape::Marker { x, y, size, color } => writeln!(
                    s,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
                    n(x - size / 2.0),
                    n(y - size / 2.0),
                    n(*size),
                    n(*size),
                    color.hex()
                ),
                Shape::Text { x, y, text, scale, anchor, color } => {
                    let a = match anchor {
                        Anchor::Start => "start",
                        Anchor::Middle => "middle",
                        Anchor::End => "end",
                    };
                    writeln!(
                        s,
                        r#"<text x="{}" y="{}" font-family="monospace" font-size="{}" text-anchor="{a}" dominant-baseline="central" fill="{}">{}</text>"#,
                        n(*x),
                        n(*y),
                        n(GLYPH * 1.25 * *scale as f64),
                        color.hex(),
                        escape(text)
                    )
                }
            };
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn rasterize(&self) -> RawImage {
        let mut c = Canvas::new(self.width as usize, self.height as usize);
        for shape in &self.shapes {
            match shape {
                Shape::Rect { x, y, w, h, fill } => c.fill_rect(*x, *y, *w, *h, *fill),
                Shape::Line { x1, y1, x2, y2, color, width } => c.line(*x1, *y1, *x2, *y2, *color, *width),
                Shape::Polyline { points, color, width } => {
                    for w in points.windows(2) {
                        c.line(w[0].0, w[0].1, w[1].0, w[1].1, *color, *width);
                    }
                    if let [(x, y)] = points.as_slice() {
                        c.fill_rect(x - width / 2.0, y - width / 2.0, *width, *width, *color);
                    }
                }
                Shape::Marker { x, y, size, color } => c.fill_rect(x - size / 2.0, y - size / 2.0, *size, *size, *color),
                Shape::Text { x, y, text, scale, anchor, color } => {
                    let left = anchor_left(*x, text, *scale, *anchor);
                    c.text(left, y - GLYPH * *scale as f64 / 2.0, text, *scale, *color);
                }
            }
        }
        RawImage::new(c.height, c.width, 3, c.pixels).expect("canvas dimensions match its buffer")
    }

    pub fn to_png(&self) -> Vec<u8> {
        io::encode_png(&self.rasterize())
    }
}

struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width * height * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, color: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            let i = (y as usize * self.width + x as usize) * 3;
            self.pixels[i..i + 3].copy_from_slice(&[color.0, color.1, color.2]);
        }
    }

    fn fill_rect(&mut self, x: f64, y: f64, w: f64, h: f64, color: Rgb) {
        let (x0, y0) = (x.round() as i64, y.round() as i64);
        let (x1, y1) = ((x + w).round() as i64, (y + h).round() as i64);
        for yy in y0..y1.max(y0 + 1) {
            for xx in x0..x1.max(x0 + 1) {
                self.set(xx, yy, color);
            }
        }
    }

    /// Stamps a `width`-wide square brush along the segment.
    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: Rgb, width: f64) {
        let steps = ((x2 - x1).abs().max((y2 - y1).abs()) * 2.0).ceil().max(1.0) as usize;
        let half = width.max(1.0) / 2.0;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let (x, y) = (x1 + (x2 - x1) * t, y1 + (y2 - y1) * t);
            self.fill_rect(x - half, y - half, half * 2.0, half * 2.0, color);
        }
    }

    fn text(&mut self, left: f64, top: f64, text: &str, scale: u32, color: Rgb) {
        let s = scale as i64;
        let (left, top) = (left.round() as i64, top.round() as i64);
        for (k, ch) in text.chars().enumerate() {
            let glyph = BASIC_LEGACY[if ch.is_ascii() { ch as usize } else { '?' as usize }];
            let ox = left + k as i64 * 8 * s;
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        for dy in 0..s {
                            for dx in 0..s {
                                self.set(ox + col * s + dx, top + row as i64 * s + dy, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Smallest "round" number (1, 1.5, 2, 2.5, 3, 4, 5, 6, 8, 10 times a power
/// of ten) that is at least `v`. Non-positive input gives 1.
pub fn nice_ceil(v: f64) -> f64 {
    if !(v > 0.0 && v.is_finite()) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0] {
        if m * mag >= v * (1.0 - 1e-12) {
            return m * mag;
        }
    }
    10.0 * mag
}

/// Short tick label: up to three decimals, trailing zeros removed.
pub fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Plot rectangle with linear data-to-pixel mapping.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    pub fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        let t = if hi > lo { (x - lo) / (hi - lo) } else { 0.5 };
        self.left + t * self.width
    }

    pub fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        let t = if hi > lo { (y - lo) / (hi - lo) } else { 0.5 };
        self.top + (1.0 - t) * self.height
    }

    /// Border, horizontal grid lines and y tick labels.
    pub fn draw_axes(&self, scene: &mut Scene, y_ticks: usize, title: &str) {
        let (lo, hi) = self.y_range;
        for i in 0..=y_ticks {
            let v = lo + (hi - lo) * i as f64 / y_ticks as f64;
            let y = self.py(v);
            scene.line((self.left, y), (self.left + self.width, y), Rgb::GRID, 1.0);
            scene.text(self.left - 6.0, y, tick_label(v), Anchor::End);
        }
        let (l, t, r, b) = (self.left, self.top, self.left + self.width, self.top + self.height);
        for (p, q) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
            scene.line(p, q, Rgb::BLACK, 1.0);
        }
        scene.text(self.left, self.top - 14.0, title, Anchor::Start);
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    pub color: Rgb,
}

/// Draws series as polylines with markers, plus a legend right-aligned in
/// the margin above the frame.
pub fn plot_series(scene: &mut Scene, frame: &Frame, series: &[Series]) {
    let entry = |s: &Series| text_width(s.label, 1) + 30.0;
    let mut lx = frame.left + frame.width - series.iter().map(entry).sum::<f64>() + 16.0;
    let ly = frame.top - 14.0;
    for s in series {
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| (frame.px(x), frame.py(y))).collect();
        for &(x, y) in &pts {
            scene.push(Shape::Marker { x, y, size: 5.0, color: s.color });
        }
        scene.push(Shape::Polyline {
            points: pts,
            color: s.color,
            width: 2.0,
        });
        scene.push(Shape::Marker { x: lx + 4.0, y: ly, size: 8.0, color: s.color });
        scene.text(lx + 12.0, ly, s.label, Anchor::Start);
        lx += entry(s);
    }
}
