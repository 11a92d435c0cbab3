//! Endpoint remappings applied to particle trail segments before rasterising.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;
use std::str::FromStr;

use super::ImageGenError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: Point,
    pub to: Point,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            from: Point::new(x0, y0),
            to: Point::new(x1, y1),
        }
    }

    pub fn length(&self) -> f64 {
        (self.to.x - self.from.x).hypot(self.to.y - self.from.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Line(Segment),
    /// Ellipse given by its foci and the length of its major axis.
    Ellipse {
        focus_a: Point,
        focus_b: Point,
        major_axis: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineTransform {
    Identity,
    Diamond,
    Grid { cell_size: u32 },
    Kaleidoscope { sectors: u32 },
    Necklace { beads: u32, pull: f64 },
    Oval { axis_factor: f64 },
    Polar,
    Tron,
}

impl LineTransform {
    pub const DEFAULT_NECKLACE_PULL: f64 = 0.6;
    pub const DEFAULT_OVAL_FACTOR: f64 = 1.5;

    pub fn necklace(beads: u32) -> Self {
        LineTransform::Necklace {
            beads,
            pull: Self::DEFAULT_NECKLACE_PULL,
        }
    }

    pub fn oval() -> Self {
        LineTransform::Oval {
            axis_factor: Self::DEFAULT_OVAL_FACTOR,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LineTransform::Identity => "identity",
            LineTransform::Diamond => "diamond",
            LineTransform::Grid { .. } => "grid",
            LineTransform::Kaleidoscope { .. } => "kaleidoscope",
            LineTransform::Necklace { .. } => "necklace",
            LineTransform::Oval { .. } => "oval",
            LineTransform::Polar => "polar",
            LineTransform::Tron => "tron",
        }
    }

    pub fn validate(&self) -> Result<(), ImageGenError> {
        let bad = |msg: &str| Err(ImageGenError::InvalidTransform(msg.to_string()));
        match *self {
            LineTransform::Grid { cell_size } if cell_size < 4 => bad("grid cell_size must be >= 4"),
            LineTransform::Kaleidoscope { sectors } if sectors < 2 => bad("kaleidoscope sectors must be >= 2"),
            LineTransform::Necklace { beads, .. } if beads < 2 => bad("necklace beads must be >= 2"),
            LineTransform::Necklace { pull, .. } if !(0.0..=1.0).contains(&pull) => {
                bad("necklace pull must lie in [0, 1]")
            }
            LineTransform::Oval { axis_factor } if !(axis_factor >= 1.0 && axis_factor.is_finite()) => {
                bad("oval axis factor must be >= 1")
            }
            _ => Ok(()),
        }
    }
}

/// `kind` or `kind:param`, e.g. `necklace:8`, `grid:16`, `kaleidoscope:6`, `oval:1.5`.
impl FromStr for LineTransform {
    type Err = ImageGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let bad = || ImageGenError::InvalidTransform(format!("cannot parse transform `{s}`"));
        let int = |default: u32| -> Result<u32, ImageGenError> {
            param.map_or(Ok(default), |p| p.parse().map_err(|_| bad()))
        };
        let t = match kind {
            "identity" | "none" => LineTransform::Identity,
            "diamond" => LineTransform::Diamond,
            "grid" => LineTransform::Grid { cell_size: int(16)? },
            "kaleidoscope" => LineTransform::Kaleidoscope { sectors: int(6)? },
            "necklace" => LineTransform::necklace(int(8)?),
            "oval" => LineTransform::Oval {
                axis_factor: param.map_or(Ok(Self::DEFAULT_OVAL_FACTOR), |p| p.parse().map_err(|_| bad()))?,
            },
            "polar" => LineTransform::Polar,
            "tron" => LineTransform::Tron,
            _ => return Err(bad()),
        };
        t.validate()?;
        Ok(t)
    }
}

impl fmt::Display for LineTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineTransform::Grid { cell_size } => write!(f, "grid:{cell_size}"),
            LineTransform::Kaleidoscope { sectors } => write!(f, "kaleidoscope:{sectors}"),
            LineTransform::Necklace { beads, .. } => write!(f, "necklace:{beads}"),
            LineTransform::Oval { axis_factor } => write!(f, "oval:{axis_factor}"),
            other => f.write_str(other.kind()),
        }
    }
}

/// Canvas geometry shared by the transforms.
#[derive(Debug, Clone, Copy)]
struct Frame {
    width: f64,
    height: f64,
    cx: f64,
    cy: f64,
    r_max: f64,
}

impl Frame {
    fn new(width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            width: w,
            height: h,
            cx: w / 2.0,
            cy: h / 2.0,
            r_max: (w / 2.0).hypot(h / 2.0),
        }
    }
}

/// Reflects `v` into `[0, span]` with period `2 * span`.
pub(crate) fn triangle_fold(v: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let m = v.rem_euclid(2.0 * span);
    if m <= span {
        m
    } else {
        2.0 * span - m
    }
}

fn polar(p: Point, f: &Frame) -> Point {
    let (dx, dy) = (p.x - f.cx, p.y - f.cy);
    let r = dx.hypot(dy);
    let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    Point::new(f.width * (theta + PI) / TAU, f.height * r / f.r_max)
}

fn diamond(p: Point, f: &Frame) -> Point {
    let (dx, dy) = (p.x - f.cx, p.y - f.cy);
    let l1 = dx.abs() + dy.abs();
    let limit = f.r_max / 2.0;
    if l1 <= limit {
        return p;
    }
    let scale = triangle_fold(l1, limit) / l1;
    Point::new(f.cx + dx * scale, f.cy + dy * scale)
}

fn grid_cell_origin(p: Point, cell: f64) -> Point {
    Point::new((p.x / cell).floor() * cell, (p.y / cell).floor() * cell)
}

fn grid(p: Point, origin: Point, cell: f64) -> Point {
    // rem_euclid may round up to `cell` for tiny negative inputs
    let local = |v: f64| {
        let r = v.rem_euclid(cell);
        if r >= cell {
            0.0
        } else {
            r
        }
    };
    Point::new(origin.x + local(p.x), origin.y + local(p.y))
}

fn kaleidoscope(p: Point, f: &Frame, sectors: u32) -> Point {
    let (dx, dy) = (p.x - f.cx, p.y - f.cy);
    let r = dx.hypot(dy);
    let theta = if r == 0.0 { 0.0 } else { dy.atan2(dx).rem_euclid(TAU) };
    let folded = triangle_fold(theta, TAU / sectors as f64);
    Point::new(f.cx + r * folded.cos(), f.cy + r * folded.sin())
}

fn necklace(p: Point, f: &Frame, beads: u32, pull: f64) -> Point {
    let radius = f.width.min(f.height) / 3.0;
    let step = TAU / beads as f64;
    let (dx, dy) = (p.x - f.cx, p.y - f.cy);
    let theta = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx).rem_euclid(TAU) };
    // Nearest bead by angle is nearest by distance for points on rays from the centre.
    let j = (theta / step).round() % beads as f64;
    let angle = j * step;
    let bead = Point::new(f.cx + radius * angle.cos(), f.cy + radius * angle.sin());
    Point::new(p.x + pull * (bead.x - p.x), p.y + pull * (bead.y - p.y))
}

fn tron(s: Segment) -> Segment {
    let (mx, my) = ((s.from.x + s.to.x) / 2.0, (s.from.y + s.to.y) / 2.0);
    let (dx, dy) = (s.to.x - s.from.x, s.to.y - s.from.y);
    let half = dx.hypot(dy) / 2.0;
    if half == 0.0 {
        return s;
    }
    let phi = (dy.atan2(dx) / FRAC_PI_4).round() * FRAC_PI_4;
    let (ux, uy) = (half * phi.cos(), half * phi.sin());
    Segment::new(mx - ux, my - uy, mx + ux, my + uy)
}

/// Maps a segment in canvas coordinates to the primitives that should be
/// drawn in its place. Results are not clipped; the rasteriser clamps.
pub fn apply_line_transform(
    t: &LineTransform,
    segment: Segment,
    width: u32,
    height: u32,
) -> Result<Primitive, ImageGenError> {
    if !(segment.from.is_finite() && segment.to.is_finite()) {
        return Err(ImageGenError::InvalidSegment);
    }
    let f = Frame::new(width, height);
    let map = |g: &dyn Fn(Point) -> Point| Primitive::Line(Segment {
        from: g(segment.from),
        to: g(segment.to),
    });
    Ok(match *t {
        LineTransform::Identity => Primitive::Line(segment),
        LineTransform::Polar => map(&|p| polar(p, &f)),
        LineTransform::Diamond => map(&|p| diamond(p, &f)),
        LineTransform::Grid { cell_size } => {
            let cell = cell_size as f64;
            let origin = grid_cell_origin(segment.from, cell);
            map(&|p| grid(p, origin, cell))
        }
        LineTransform::Kaleidoscope { sectors } => map(&|p| kaleidoscope(p, &f, sectors)),
        LineTransform::Necklace { beads, pull } => map(&|p| necklace(p, &f, beads, pull)),
        LineTransform::Tron => Primitive::Line(tron(segment)),
        LineTransform::Oval { axis_factor } => Primitive::Ellipse {
            focus_a: segment.from,
            focus_b: segment.to,
            major_axis: axis_factor * segment.length(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;

    fn line(p: Primitive) -> Segment {
        match p {
            Primitive::Line(s) => s,
            other => panic!("expected line, got {other:?}"),
        }
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_keeps_segment() {
        let s = Segment::new(10.0, 10.0, 20.0, 20.0);
        assert_eq!(apply_line_transform(&LineTransform::Identity, s, 100, 100).unwrap(), Primitive::Line(s));
    }

    #[test]
    fn polar_hand_value() {
        let s = Segment::new(100.0, 50.0, 50.0, 50.0);
        let out = line(apply_line_transform(&LineTransform::Polar, s, 100, 100).unwrap());
        assert!(close(out.from.x, 50.0, 1e-9));
        assert!(close(out.from.y, 100.0 * 50.0 / 5000f64.sqrt(), 1e-9));
        assert!(close(out.from.y, 70.71, 5e-3));
        // centre maps to theta = 0, r = 0
        assert!(close(out.to.x, 50.0, 1e-9) && out.to.y == 0.0);
    }

    #[test]
    fn oval_definition() {
        let s = Segment::new(0.0, 0.0, 10.0, 0.0);
        let out = apply_line_transform(&LineTransform::oval(), s, 100, 100).unwrap();
        assert_eq!(
            out,
            Primitive::Ellipse {
                focus_a: Point::new(0.0, 0.0),
                focus_b: Point::new(10.0, 0.0),
                major_axis: 15.0
            }
        );
    }

    #[test]
    fn non_finite_rejected() {
        let s = Segment::new(f64::NAN, 0.0, 1.0, 1.0);
        assert!(matches!(
            apply_line_transform(&LineTransform::Identity, s, 10, 10),
            Err(ImageGenError::InvalidSegment)
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!("necklace:1".parse::<LineTransform>().is_err());
        assert!("grid:3".parse::<LineTransform>().is_err());
        assert!("kaleidoscope:1".parse::<LineTransform>().is_err());
        assert!("spiral".parse::<LineTransform>().is_err());
        assert_eq!("necklace:5".parse::<LineTransform>().unwrap(), LineTransform::necklace(5));
        for s in ["identity", "diamond", "grid:8", "kaleidoscope:6", "necklace:8", "oval:1.5", "polar", "tron"] {
            assert_eq!(s.parse::<LineTransform>().unwrap().to_string(), s);
        }
    }

    fn random_segments(n: usize, w: f64, h: f64) -> Vec<Segment> {
        let mut rng = seeds::rng(17);
        (0..n)
            .map(|_| {
                Segment::new(
                    rng.gen_range(-0.5 * w..1.5 * w),
                    rng.gen_range(-0.5 * h..1.5 * h),
                    rng.gen_range(-0.5 * w..1.5 * w),
                    rng.gen_range(-0.5 * h..1.5 * h),
                )
            })
            .collect()
    }

    #[test]
    fn polar_sends_origin_radius_to_top_row() {
        let f = Frame::new(64, 48);
        let p = polar(Point::new(f.cx, f.cy), &f);
        assert_eq!(p.y, 0.0);
    }

    #[test]
    fn kaleidoscope_angles_within_one_wedge() {
        let (w, h) = (120u32, 80u32);
        let f = Frame::new(w, h);
        for sectors in [2u32, 3, 6, 12] {
            let t = LineTransform::Kaleidoscope { sectors };
            let wedge = TAU / sectors as f64;
            for s in random_segments(10_000, w as f64, h as f64) {
                let out = line(apply_line_transform(&t, s, w, h).unwrap());
                for p in [out.from, out.to] {
                    let (dx, dy) = (p.x - f.cx, p.y - f.cy);
                    if dx.hypot(dy) < 1e-9 {
                        continue;
                    }
                    let theta = dy.atan2(dx).rem_euclid(TAU);
                    assert!(theta <= wedge + 1e-9 || theta >= TAU - 1e-9, "{theta} > {wedge}");
                }
            }
        }
    }

    #[test]
    fn kaleidoscope_preserves_radius() {
        let f = Frame::new(100, 100);
        for s in random_segments(1000, 100.0, 100.0) {
            let p = kaleidoscope(s.from, &f, 5);
            let r0 = (s.from.x - f.cx).hypot(s.from.y - f.cy);
            let r1 = (p.x - f.cx).hypot(p.y - f.cy);
            assert!(close(r0, r1, 1e-9));
        }
    }

    #[test]
    fn grid_endpoints_share_start_cell() {
        let cell = 16u32;
        let t = LineTransform::Grid { cell_size: cell };
        for s in random_segments(10_000, 128.0, 96.0) {
            let out = line(apply_line_transform(&t, s, 128, 96).unwrap());
            let origin = grid_cell_origin(s.from, cell as f64);
            for p in [out.from, out.to] {
                let (lx, ly) = (p.x - origin.x, p.y - origin.y);
                let inside = |v: f64| (-1e-9..cell as f64 + 1e-9).contains(&v);
                assert!(inside(lx) && inside(ly), "({lx}, {ly})");
            }
            assert!(close(out.from.x, s.from.x, 1e-9) && close(out.from.y, s.from.y, 1e-9));
        }
    }

    #[test]
    fn diamond_points_inside_l1_ball() {
        let f = Frame::new(90, 60);
        for s in random_segments(10_000, 90.0, 60.0) {
            let out = line(apply_line_transform(&LineTransform::Diamond, s, 90, 60).unwrap());
            for p in [out.from, out.to] {
                assert!((p.x - f.cx).abs() + (p.y - f.cy).abs() <= f.r_max / 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn necklace_pulls_toward_bead() {
        let f = Frame::new(90, 90);
        let t = LineTransform::necklace(4);
        // A point on the x-axis ray is pulled toward the bead at angle 0.
        let s = Segment::new(f.cx + 40.0, f.cy, f.cx, f.cy);
        let out = line(apply_line_transform(&t, s, 90, 90).unwrap());
        let bead_x = f.cx + 30.0;
        assert!(close(out.from.x, f.cx + 40.0 + 0.6 * (bead_x - f.cx - 40.0), 1e-9));
        assert!(close(out.from.y, f.cy, 1e-9));
        for s in random_segments(2000, 90.0, 90.0) {
            let out = line(apply_line_transform(&t, s, 90, 90).unwrap());
            let before = (s.from.x - f.cx).hypot(s.from.y - f.cy);
            let after = (out.from.x - f.cx).hypot(out.from.y - f.cy);
            // pulled points move toward the bead circle
            assert!((after - 30.0).abs() <= (before - 30.0).abs() + 30.0 * 0.6 + 1e-9);
        }
    }

    #[test]
    fn tron_snaps_direction_and_keeps_length() {
        for s in random_segments(10_000, 100.0, 100.0) {
            let out = line(apply_line_transform(&LineTransform::Tron, s, 100, 100).unwrap());
            assert!(close(out.length(), s.length(), 1e-6));
            if out.length() > 1e-9 {
                let phi = (out.to.y - out.from.y).atan2(out.to.x - out.from.x);
                let k = phi / FRAC_PI_4;
                assert!(close(k, k.round(), 1e-6));
            }
            assert!(close(out.from.x + out.to.x, s.from.x + s.to.x, 1e-9));
        }
    }

    #[test]
    fn fold_is_triangular() {
        assert_eq!(triangle_fold(0.0, 10.0), 0.0);
        assert_eq!(triangle_fold(12.0, 10.0), 8.0);
        assert_eq!(triangle_fold(-3.0, 10.0), 3.0);
        assert_eq!(triangle_fold(20.0, 10.0), 0.0);
        assert_eq!(triangle_fold(10.0, 10.0), 10.0);
    }
}
