use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::SketchImage;
use crate::sketch::{Point2, Primitive, Shape, Sketch};

/// Largest spacing, in pixels, between consecutive curve samples.
const CURVE_STEP_PX: f64 = 0.5;
/// Cross-product magnitude below which three points count as collinear.
const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circumcircle {
    pub center: Point2,
    pub radius: f64,
    /// Start angle of `a` around the center, radians.
    pub start_angle: f64,
    /// Signed sweep from `a` to `c` through `b`, radians.
    pub sweep: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Collinear;

/// Circle through three points and the signed sweep from `a` to `c` that
/// passes through `b`.
pub fn circumcircle(a: Point2, b: Point2, c: Point2) -> Result<Circumcircle, Collinear> {
    let (bx, by) = (b.x - a.x, b.y - a.y);
    let (cx, cy) = (c.x - a.x, c.y - a.y);
    let cross = bx * cy - by * cx;
    if cross.abs() < COLLINEAR_EPS {
        return Err(Collinear);
    }
    let d = 2.0 * cross;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    let center = Point2::new(a.x + ux, a.y + uy);
    let radius = ux.hypot(uy);
    let angle = |p: Point2| (p.y - center.y).atan2(p.x - center.x);
    let (ta, tb, tc) = (angle(a), angle(b), angle(c));
    let ccw_to_c = (tc - ta).rem_euclid(TAU);
    let ccw_to_b = (tb - ta).rem_euclid(TAU);
    let sweep = if ccw_to_b < ccw_to_c { ccw_to_c } else { ccw_to_c - TAU };
    Ok(Circumcircle { center, radius, start_angle: ta, sweep })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rounding {
    HalfUp,
    HalfDown,
}

impl Rounding {
    #[inline]
    pub(crate) fn apply(self, v: f64) -> i64 {
        match self {
            Rounding::HalfUp => (v + 0.5).floor() as i64,
            Rounding::HalfDown => (v - 0.5).ceil() as i64,
        }
    }
}

/// One point of a stroke in pixel space with its normalized arclength `u`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StrokeSample {
    pub x: f64,
    pub y: f64,
    pub u: f64,
}

/// A pixel-space drawing instruction for one piece of a primitive.
#[derive(Debug, Clone)]
pub(crate) enum Stroke {
    /// Consecutive samples are joined; rounding modes apply per axis.
    Path { samples: Vec<StrokeSample>, rx: Rounding, ry: Rounding },
    /// A 3x3 block centered on the rounded position.
    Glyph { x: f64, y: f64 },
}

pub(crate) struct PixelMap {
    sx: f64,
    sy: f64,
}

impl PixelMap {
    pub(crate) fn new(width: usize, height: usize) -> Self {
        Self { sx: (width.max(2) - 1) as f64, sy: (height.max(2) - 1) as f64 }
    }

    fn px(&self, p: Point2) -> (f64, f64) {
        (p.x * self.sx, p.y * self.sy)
    }
}

fn line_stroke(map: &PixelMap, a: Point2, b: Point2) -> Stroke {
    let (ax, ay) = map.px(a);
    let (bx, by) = map.px(b);
    let r = Rounding::HalfUp;
    let pixels = bresenham((r.apply(ax), r.apply(ay)), (r.apply(bx), r.apply(by)));
    let last = (pixels.len() - 1).max(1) as f64;
    let samples = pixels
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| StrokeSample { x: x as f64, y: y as f64, u: i as f64 / last })
        .collect();
    Stroke::Path { samples, rx: r, ry: r }
}

/// Circle strokes are generated one quadrant at a time with mirrored
/// rounding so that a circle centered on a pixel boundary renders with
/// exact mirror symmetry.
fn circle_strokes(map: &PixelMap, center: Point2, radius: f64) -> Vec<Stroke> {
    let (cx, cy) = map.px(center);
    let (rx, ry) = (radius * map.sx, radius * map.sy);
    let steps = ((FRAC_PI_2 * rx.max(ry)) / CURVE_STEP_PX).ceil().max(1.0) as usize;
    let quadrants = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    quadrants
        .iter()
        .enumerate()
        .map(|(q, &(sx, sy)): (usize, &(f64, f64))| {
            let samples = (0..=steps)
                .map(|i| {
                    let theta = FRAC_PI_2 * i as f64 / steps as f64;
                    let phi = match q {
                        0 => theta,
                        1 => PI - theta,
                        2 => PI + theta,
                        _ => TAU - theta,
                    };
                    StrokeSample {
                        x: cx + sx * rx * theta.cos(),
                        y: cy + sy * ry * theta.sin(),
                        u: phi / TAU,
                    }
                })
                .collect();
            let mode = |s: f64| if s > 0.0 { Rounding::HalfUp } else { Rounding::HalfDown };
            Stroke::Path { samples, rx: mode(sx), ry: mode(sy) }
        })
        .collect()
}

fn arc_strokes(map: &PixelMap, a: Point2, b: Point2, c: Point2) -> Vec<Stroke> {
    let Ok(circle) = circumcircle(a, b, c) else {
        return vec![line_stroke(map, a, c)];
    };
    let (cx, cy) = map.px(circle.center);
    let (rx, ry) = (circle.radius * map.sx, circle.radius * map.sy);
    let steps = ((circle.sweep.abs() * rx.max(ry)) / CURVE_STEP_PX).ceil().max(1.0) as usize;
    let samples = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64;
            let phi = circle.start_angle + circle.sweep * t;
            StrokeSample { x: cx + rx * phi.cos(), y: cy + ry * phi.sin(), u: t }
        })
        .collect();
    vec![Stroke::Path { samples, rx: Rounding::HalfUp, ry: Rounding::HalfUp }]
}

pub(crate) fn primitive_strokes(map: &PixelMap, p: &Primitive) -> Vec<Stroke> {
    match p.shape {
        Shape::Line { start, end } => vec![line_stroke(map, start, end)],
        Shape::Circle { center, radius } => circle_strokes(map, center, radius),
        Shape::Arc { start, mid, end } => arc_strokes(map, start, mid, end),
        Shape::Point { at } => {
            let (x, y) = map.px(at);
            vec![Stroke::Glyph { x, y }]
        }
    }
}

/// Integer line stepping between two pixels, endpoints included.
pub(crate) fn bresenham(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == to {
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
    out
}

/// Draws a stroke whose samples have been displaced by `offset(u)` pixels.
pub(crate) fn draw_stroke(img: &mut SketchImage, stroke: &Stroke, offset: impl Fn(f64) -> (f64, f64)) {
    match stroke {
        Stroke::Path { samples, rx, ry } => {
            let mut prev: Option<(i64, i64)> = None;
            for s in samples {
                let (dx, dy) = offset(s.u);
                let p = (rx.apply(s.x + dx), ry.apply(s.y + dy));
                match prev {
                    Some(q) if q == p => {}
                    Some(q) => {
                        for (x, y) in bresenham(q, p) {
                            img.plot(x, y);
                        }
                    }
                    None => img.plot(p.0, p.1),
                }
                prev = Some(p);
            }
        }
        Stroke::Glyph { x, y } => {
            let (dx, dy) = offset(0.0);
            let (px, py) = (Rounding::HalfUp.apply(x + dx), Rounding::HalfUp.apply(y + dy));
            for oy in -1..=1 {
                for ox in -1..=1 {
                    img.plot(px + ox, py + oy);
                }
            }
        }
    }
}

/// Renders a sketch with 1-pixel strokes; coordinate `v` maps to pixel `v * (dim - 1)`.
pub fn rasterize(sketch: &Sketch, width: usize, height: usize) -> SketchImage {
    let mut img = SketchImage::zeros(width, height);
    let map = PixelMap::new(width, height);
    for p in sketch {
        for stroke in primitive_strokes(&map, p) {
            draw_stroke(&mut img, &stroke, |_| (0.0, 0.0));
        }
    }
    img
}
