//! Primitive domain model: typed geometric primitives, sketches, coordinate
//! normalization, quantized tokens and the JSON Lines dataset format.

pub mod dataset;
pub mod quantize;
pub mod tokens;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use quantize::{dequantize, quantize, BIN_COUNT, BIN_WIDTH};
pub use tokens::{detokenize, tokenize, Detokenized, SlotStatus, TokenGrid};

/// Maximum number of primitives per sketch.
pub const MAX_PRIMITIVES: usize = 16;

#[derive(Debug, Error)]
pub enum SketchError {
    #[error("sketch has {0} primitives, at most {MAX_PRIMITIVES} are allowed")]
    TooManyPrimitives(usize),
    #[error("bin index {0} outside 0..64")]
    BinOutOfRange(u8),
    #[error("bounding box has zero extent")]
    ZeroExtent,
    #[error("cannot normalize an empty sketch")]
    EmptySketch,
    #[error("primitive {index} is degenerate after quantization")]
    Degenerate { index: usize },
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: unknown primitive kind {kind:?}")]
    UnknownKind { line: usize, kind: String },
    #[error("token stream of length {0} is not {expected} tokens", expected = tokens::STREAM_LEN)]
    BadStream(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Arc,
    Circle,
    Line,
    Point,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [Self::Arc, Self::Circle, Self::Line, Self::Point];

    /// Number of real parameters carried by this kind.
    pub const fn param_count(self) -> usize {
        match self {
            Self::Arc => 6,
            Self::Circle => 3,
            Self::Line => 4,
            Self::Point => 2,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Self::Arc => "arc",
            Self::Circle => "circle",
            Self::Line => "line",
            Self::Point => "point",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Geometry of a primitive in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Line { start: Point2, end: Point2 },
    Circle { center: Point2, radius: f64 },
    Arc { start: Point2, mid: Point2, end: Point2 },
    Point { at: Point2 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub is_construction: bool,
}

impl Primitive {
    pub fn new(shape: Shape) -> Self {
        Self { shape, is_construction: false }
    }

    pub fn construction(mut self, flag: bool) -> Self {
        self.is_construction = flag;
        self
    }

    pub fn line(xs: f64, ys: f64, xe: f64, ye: f64) -> Self {
        Self::new(Shape::Line { start: Point2::new(xs, ys), end: Point2::new(xe, ye) })
    }

    pub fn circle(xc: f64, yc: f64, r: f64) -> Self {
        Self::new(Shape::Circle { center: Point2::new(xc, yc), radius: r })
    }

    pub fn arc(start: (f64, f64), mid: (f64, f64), end: (f64, f64)) -> Self {
        Self::new(Shape::Arc {
            start: Point2::new(start.0, start.1),
            mid: Point2::new(mid.0, mid.1),
            end: Point2::new(end.0, end.1),
        })
    }

    pub fn point(x: f64, y: f64) -> Self {
        Self::new(Shape::Point { at: Point2::new(x, y) })
    }

    pub fn kind(&self) -> PrimitiveKind {
        match self.shape {
            Shape::Line { .. } => PrimitiveKind::Line,
            Shape::Circle { .. } => PrimitiveKind::Circle,
            Shape::Arc { .. } => PrimitiveKind::Arc,
            Shape::Point { .. } => PrimitiveKind::Point,
        }
    }

    /// Flat parameter list in token order.
    pub fn params(&self) -> Vec<f64> {
        match self.shape {
            Shape::Line { start, end } => vec![start.x, start.y, end.x, end.y],
            Shape::Circle { center, radius } => vec![center.x, center.y, radius],
            Shape::Arc { start, mid, end } => {
                vec![start.x, start.y, mid.x, mid.y, end.x, end.y]
            }
            Shape::Point { at } => vec![at.x, at.y],
        }
    }

    /// Inverse of [`Primitive::params`]; `None` when the count does not fit the kind.
    pub fn from_params(kind: PrimitiveKind, p: &[f64], is_construction: bool) -> Option<Self> {
        if p.len() != kind.param_count() {
            return None;
        }
        let shape = match kind {
            PrimitiveKind::Line => Shape::Line {
                start: Point2::new(p[0], p[1]),
                end: Point2::new(p[2], p[3]),
            },
            PrimitiveKind::Circle => Shape::Circle { center: Point2::new(p[0], p[1]), radius: p[2] },
            PrimitiveKind::Arc => Shape::Arc {
                start: Point2::new(p[0], p[1]),
                mid: Point2::new(p[2], p[3]),
                end: Point2::new(p[4], p[5]),
            },
            PrimitiveKind::Point => Shape::Point { at: Point2::new(p[0], p[1]) },
        };
        Some(Self { shape, is_construction })
    }

    /// Control points plus, for circles, the axis-aligned extremes.
    fn extent_points(&self) -> Vec<Point2> {
        match self.shape {
            Shape::Line { start, end } => vec![start, end],
            Shape::Circle { center, radius } => vec![
                Point2::new(center.x - radius, center.y - radius),
                Point2::new(center.x + radius, center.y + radius),
            ],
            Shape::Arc { start, mid, end } => vec![start, mid, end],
            Shape::Point { at } => vec![at],
        }
    }

    fn map_points(&self, f: impl Fn(Point2) -> Point2, scale: f64) -> Self {
        let shape = match self.shape {
            Shape::Line { start, end } => Shape::Line { start: f(start), end: f(end) },
            Shape::Circle { center, radius } => Shape::Circle { center: f(center), radius: radius * scale },
            Shape::Arc { start, mid, end } => Shape::Arc { start: f(start), mid: f(mid), end: f(end) },
            Shape::Point { at } => Shape::Point { at: f(at) },
        };
        Self { shape, is_construction: self.is_construction }
    }
}

/// An ordered collection of at most [`MAX_PRIMITIVES`] primitives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sketch {
    primitives: Vec<Primitive>,
}

impl Sketch {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self, SketchError> {
        if primitives.len() > MAX_PRIMITIVES {
            return Err(SketchError::TooManyPrimitives(primitives.len()));
        }
        Ok(Self { primitives })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Primitive> {
        self.primitives.iter()
    }
}

impl<'a> IntoIterator for &'a Sketch {
    type Item = &'a Primitive;
    type IntoIter = std::slice::Iter<'a, Primitive>;

    fn into_iter(self) -> Self::IntoIter {
        self.primitives.iter()
    }
}

/// Isotropically scales and translates `sketch` so its bounding box fits in
/// `[margin, 1 - margin]²`, centered on both axes.
///
/// The bounding box covers control points and circle extents. An axis with
/// zero extent is centered at 0.5.
pub fn normalize_sketch(sketch: &Sketch, margin: f64) -> Result<Sketch, SketchError> {
    if sketch.is_empty() {
        return Err(SketchError::EmptySketch);
    }
    let (mut lo, mut hi) = (Point2::new(f64::MAX, f64::MAX), Point2::new(f64::MIN, f64::MIN));
    for p in sketch.iter().flat_map(Primitive::extent_points) {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if !(extent > 0.0) {
        return Err(SketchError::ZeroExtent);
    }
    let scale = (1.0 - 2.0 * margin) / extent;
    let center = Point2::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y));
    let f = |p: Point2| Point2::new((p.x - center.x) * scale + 0.5, (p.y - center.y) * scale + 0.5);
    let primitives = sketch.iter().map(|p| p.map_points(f, scale)).collect();
    Ok(Sketch { primitives })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn normalize_square() {
        let s = Sketch::new(vec![
            Primitive::line(0.0, 0.0, 10.0, 0.0),
            Primitive::line(10.0, 0.0, 10.0, 10.0),
            Primitive::line(10.0, 10.0, 0.0, 10.0),
            Primitive::line(0.0, 10.0, 0.0, 0.0),
        ])
        .unwrap();
        let n = normalize_sketch(&s, 0.05).unwrap();
        let p = n.primitives()[1].params();
        assert!(close(p[0], 0.95) && close(p[1], 0.05) && close(p[2], 0.95) && close(p[3], 0.95));
    }

    #[test]
    fn normalize_flat_axis_is_centered() {
        let s = Sketch::new(vec![Primitive::line(0.0, 0.0, 4.0, 0.0)]).unwrap();
        let p = normalize_sketch(&s, 0.0).unwrap().primitives()[0].params();
        assert_eq!(p, vec![0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let s = Sketch::new(vec![
            Primitive::circle(0.3, 0.4, 0.1),
            Primitive::arc((0.2, 0.2), (0.5, 0.3), (0.7, 0.2)),
            Primitive::point(0.9, 0.6),
        ])
        .unwrap();
        let once = normalize_sketch(&s, 0.05).unwrap();
        let twice = normalize_sketch(&once, 0.05).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            for (x, y) in a.params().iter().zip(b.params()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_errors() {
        let s = Sketch::new(vec![Primitive::point(3.0, 3.0)]).unwrap();
        assert!(matches!(normalize_sketch(&s, 0.05), Err(SketchError::ZeroExtent)));
        assert!(matches!(normalize_sketch(&Sketch::empty(), 0.05), Err(SketchError::EmptySketch)));
    }

    #[test]
    fn too_many_primitives() {
        let prims = vec![Primitive::point(0.5, 0.5); 17];
        assert!(matches!(Sketch::new(prims), Err(SketchError::TooManyPrimitives(17))));
    }
}
