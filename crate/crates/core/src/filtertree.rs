//! Tree-structured image filters: unary adjustments and binary compositors
//! over a single source photograph.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::raster::{box_blur, RasterImage, Rgb};
use crate::seeds;
use crate::sexpr::{self, Sexpr};

/// Operator layers allowed above the source leaf.
pub const MAX_FILTER_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter depth {depth} exceeds limit {MAX_FILTER_DEPTH}")]
    DepthExceeded { depth: usize },
    #[error("filter count must be >= 1")]
    EmptyLibrary,
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryFilter {
    Blur { radius: u32 },
    Sharpen,
    Emboss,
    Invert,
    Grayscale,
    Threshold { level: u8 },
    /// Output channel `i` takes input channel `order[i]`.
    ChannelSwap { order: [u8; 3] },
    Posterize { levels: u8 },
    HueRotate { degrees: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryFilter {
    And,
    Or,
    Xor,
    AddSat,
    SubtractSat,
    Multiply,
    Screen,
    Min,
    Max,
}

impl BinaryFilter {
    pub const ALL: [BinaryFilter; 9] = [
        BinaryFilter::And,
        BinaryFilter::Or,
        BinaryFilter::Xor,
        BinaryFilter::AddSat,
        BinaryFilter::SubtractSat,
        BinaryFilter::Multiply,
        BinaryFilter::Screen,
        BinaryFilter::Min,
        BinaryFilter::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryFilter::And => "and",
            BinaryFilter::Or => "or",
            BinaryFilter::Xor => "xor",
            BinaryFilter::AddSat => "add_sat",
            BinaryFilter::SubtractSat => "subtract_sat",
            BinaryFilter::Multiply => "multiply",
            BinaryFilter::Screen => "screen",
            BinaryFilter::Min => "min",
            BinaryFilter::Max => "max",
        }
    }

    pub fn is_commutative(self) -> bool {
        self != BinaryFilter::SubtractSat
    }

    #[inline]
    fn apply(self, a: u8, b: u8) -> u8 {
        match self {
            BinaryFilter::And => a & b,
            BinaryFilter::Or => a | b,
            BinaryFilter::Xor => a ^ b,
            BinaryFilter::AddSat => a.saturating_add(b),
            BinaryFilter::SubtractSat => a.saturating_sub(b),
            BinaryFilter::Multiply => ((a as u32 * b as u32 + 127) / 255) as u8,
            BinaryFilter::Screen => {
                255 - (((255 - a as u32) * (255 - b as u32) + 127) / 255) as u8
            }
            BinaryFilter::Min => a.min(b),
            BinaryFilter::Max => a.max(b),
        }
    }
}

const CHANNEL_NAMES: [char; 3] = ['r', 'g', 'b'];
const SWAP_ORDERS: [[u8; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

#[inline]
fn luma(c: Rgb) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn convolve3(img: &RasterImage, kernel: [[i32; 3]; 3]) -> RasterImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    RasterImage::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0i32; 3];
        for (ky, row) in kernel.iter().enumerate() {
            for (kx, k) in row.iter().enumerate() {
                let sx = (x as i64 + kx as i64 - 1).clamp(0, w - 1) as u32;
                let sy = (y as i64 + ky as i64 - 1).clamp(0, h - 1) as u32;
                let c = img.get(sx, sy);
                for ch in 0..3 {
                    acc[ch] += k * c[ch] as i32;
                }
            }
        }
        acc.map(|v| v.clamp(0, 255) as u8)
    })
}

fn hue_rotation_matrix(degrees: f64) -> [[f64; 3]; 3] {
    // Luminance-preserving rotation about the grey axis.
    let (s, c) = degrees.to_radians().sin_cos();
    [
        [0.213 + c * 0.787 - s * 0.213, 0.715 - c * 0.715 - s * 0.715, 0.072 - c * 0.072 + s * 0.928],
        [0.213 - c * 0.213 + s * 0.143, 0.715 + c * 0.285 + s * 0.140, 0.072 - c * 0.072 - s * 0.283],
        [0.213 - c * 0.213 - s * 0.787, 0.715 - c * 0.715 + s * 0.715, 0.072 + c * 0.928 + s * 0.072],
    ]
}

impl UnaryFilter {
    pub fn name(&self) -> &'static str {
        match self {
            UnaryFilter::Blur { .. } => "blur",
            UnaryFilter::Sharpen => "sharpen",
            UnaryFilter::Emboss => "emboss",
            UnaryFilter::Invert => "invert",
            UnaryFilter::Grayscale => "grayscale",
            UnaryFilter::Threshold { .. } => "threshold",
            UnaryFilter::ChannelSwap { .. } => "channel_swap",
            UnaryFilter::Posterize { .. } => "posterize",
            UnaryFilter::HueRotate { .. } => "hue_rotate",
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: &str| Err(FilterError::InvalidParameter(m.into()));
        match *self {
            UnaryFilter::Blur { radius } if !(1..=3).contains(&radius) => bad("blur radius must be 1..=3"),
            UnaryFilter::Threshold { level } if !(64..=192).contains(&level) => bad("threshold must be 64..=192"),
            UnaryFilter::Posterize { levels } if !(2..=6).contains(&levels) => bad("posterize levels must be 2..=6"),
            UnaryFilter::HueRotate { degrees } if !(0.0..360.0).contains(&degrees) => {
                bad("hue rotation must be in [0, 360)")
            }
            UnaryFilter::ChannelSwap { order } => {
                let mut seen = [false; 3];
                for c in order {
                    if c > 2 || seen[c as usize] {
                        return bad("channel order must be a permutation");
                    }
                    seen[c as usize] = true;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn apply(&self, img: &RasterImage) -> RasterImage {
        match *self {
            UnaryFilter::Blur { radius } => box_blur(img, radius),
            UnaryFilter::Sharpen => convolve3(img, [[0, -1, 0], [-1, 5, -1], [0, -1, 0]]),
            UnaryFilter::Emboss => convolve3(img, [[-2, -1, 0], [-1, 1, 1], [0, 1, 2]]),
            UnaryFilter::Invert => img.map_pixels(|c| c.map(|v| 255 - v)),
            UnaryFilter::Grayscale => img.map_pixels(|c| [clamp_u8(luma(c)); 3]),
            UnaryFilter::Threshold { level } => {
                img.map_pixels(|c| if luma(c) >= level as f64 { [255; 3] } else { [0; 3] })
            }
            UnaryFilter::ChannelSwap { order } => {
                img.map_pixels(|c| [c[order[0] as usize], c[order[1] as usize], c[order[2] as usize]])
            }
            UnaryFilter::Posterize { levels } => {
                let steps = (levels - 1) as f64;
                img.map_pixels(|c| c.map(|v| clamp_u8((v as f64 * steps / 255.0).round() * 255.0 / steps)))
            }
            UnaryFilter::HueRotate { degrees } => {
                let m = hue_rotation_matrix(degrees);
                img.map_pixels(|c| {
                    let v = c.map(|x| x as f64);
                    std::array::from_fn(|i| clamp_u8(m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2]))
                })
            }
        }
    }

    fn params(&self) -> Option<String> {
        match *self {
            UnaryFilter::Blur { radius } => Some(radius.to_string()),
            UnaryFilter::Threshold { level } => Some(level.to_string()),
            UnaryFilter::ChannelSwap { order } => Some(order.iter().map(|&c| CHANNEL_NAMES[c as usize]).collect()),
            UnaryFilter::Posterize { levels } => Some(levels.to_string()),
            UnaryFilter::HueRotate { degrees } => Some(format!("{degrees:?}")),
            _ => None,
        }
    }

    fn parse(name: &str, param: Option<&str>) -> Result<Self, FilterError> {
        let bad = || FilterError::Parse(format!("bad unary filter `{name}` {param:?}"));
        let num = |p: Option<&str>| p.ok_or_else(bad)?.parse::<u32>().map_err(|_| bad());
        let f = match (name, param) {
            ("blur", p) => UnaryFilter::Blur { radius: num(p)? },
            ("sharpen", None) => UnaryFilter::Sharpen,
            ("emboss", None) => UnaryFilter::Emboss,
            ("invert", None) => UnaryFilter::Invert,
            ("grayscale", None) => UnaryFilter::Grayscale,
            ("threshold", p) => UnaryFilter::Threshold {
                level: u8::try_from(num(p)?).map_err(|_| bad())?,
            },
            ("posterize", p) => UnaryFilter::Posterize {
                levels: u8::try_from(num(p)?).map_err(|_| bad())?,
            },
            ("hue_rotate", Some(p)) => UnaryFilter::HueRotate {
                degrees: p.parse().map_err(|_| bad())?,
            },
            ("channel_swap", Some(p)) => {
                let idx: Vec<u8> = p
                    .chars()
                    .map(|ch| CHANNEL_NAMES.iter().position(|&n| n == ch).map(|i| i as u8))
                    .collect::<Option<_>>()
                    .ok_or_else(bad)?;
                UnaryFilter::ChannelSwap {
                    order: idx.try_into().map_err(|_| bad())?,
                }
            }
            _ => return Err(bad()),
        };
        f.validate()?;
        Ok(f)
    }

    fn random<R: Rng>(rng: &mut R) -> Self {
        match rng.gen_range(0..9) {
            0 => UnaryFilter::Blur {
                radius: rng.gen_range(1..=3),
            },
            1 => UnaryFilter::Sharpen,
            2 => UnaryFilter::Emboss,
            3 => UnaryFilter::Invert,
            4 => UnaryFilter::Grayscale,
            5 => UnaryFilter::Threshold {
                level: rng.gen_range(64..=192),
            },
            6 => UnaryFilter::ChannelSwap {
                order: SWAP_ORDERS[rng.gen_range(0..SWAP_ORDERS.len())],
            },
            7 => UnaryFilter::Posterize {
                levels: rng.gen_range(2..=6),
            },
            _ => UnaryFilter::HueRotate {
                // whole degrees keep sidecars short
                degrees: rng.gen_range(0..360) as f64,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterNode {
    Source,
    Unary(UnaryFilter, Box<FilterNode>),
    Binary(BinaryFilter, Box<FilterNode>, Box<FilterNode>),
}

impl FilterNode {
    pub fn unary(f: UnaryFilter, child: FilterNode) -> Self {
        FilterNode::Unary(f, Box::new(child))
    }

    pub fn binary(f: BinaryFilter, l: FilterNode, r: FilterNode) -> Self {
        FilterNode::Binary(f, Box::new(l), Box::new(r))
    }

    /// Operator layers above the source; a bare `Source` has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            FilterNode::Source => 0,
            FilterNode::Unary(_, c) => 1 + c.depth(),
            FilterNode::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    fn eval(&self, src: &RasterImage) -> RasterImage {
        match self {
            FilterNode::Source => src.clone(),
            FilterNode::Unary(f, c) => f.apply(&c.eval(src)),
            FilterNode::Binary(f, l, r) => {
                let (a, b) = (l.eval(src), r.eval(src));
                let pixels = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| f.apply(x, y)).collect();
                RasterImage::from_pixels(src.width(), src.height(), pixels).expect("same-size operands")
            }
        }
    }

    fn to_sexpr(&self) -> Sexpr {
        match self {
            FilterNode::Source => Sexpr::Atom("src".into()),
            FilterNode::Unary(f, c) => {
                let mut items = vec![Sexpr::Atom(f.name().into())];
                items.extend(f.params().map(Sexpr::Atom));
                items.push(c.to_sexpr());
                Sexpr::List(items)
            }
            FilterNode::Binary(f, l, r) => Sexpr::List(vec![Sexpr::Atom(f.name().into()), l.to_sexpr(), r.to_sexpr()]),
        }
    }

    fn from_sexpr(e: &Sexpr) -> Result<Self, FilterError> {
        match e {
            Sexpr::Atom(a) if a == "src" => Ok(FilterNode::Source),
            Sexpr::Atom(a) => Err(FilterError::Parse(format!("unknown atom `{a}`"))),
            Sexpr::List(items) => {
                let head = items
                    .first()
                    .and_then(Sexpr::as_atom)
                    .ok_or_else(|| FilterError::Parse(format!("bad form `{e}`")))?;
                if let Some(op) = BinaryFilter::ALL.into_iter().find(|b| b.name() == head) {
                    if items.len() != 3 {
                        return Err(FilterError::Parse(format!("`{head}` takes two operands")));
                    }
                    return Ok(FilterNode::binary(op, Self::from_sexpr(&items[1])?, Self::from_sexpr(&items[2])?));
                }
                let (param, child) = match items.len() {
                    2 => (None, &items[1]),
                    3 => (items[1].as_atom(), &items[2]),
                    _ => return Err(FilterError::Parse(format!("bad form `{e}`"))),
                };
                Ok(FilterNode::unary(UnaryFilter::parse(head, param)?, Self::from_sexpr(child)?))
            }
        }
    }

    /// A random tree whose root is an operator.
    fn random_root<R: Rng>(rng: &mut R, budget: usize) -> Self {
        loop {
            let f = Self::random(rng, budget);
            if f != FilterNode::Source {
                return f;
            }
        }
    }

    fn random<R: Rng>(rng: &mut R, budget: usize) -> Self {
        if budget == 0 {
            return FilterNode::Source;
        }
        let roll: f64 = rng.gen();
        if roll < 0.1 {
            FilterNode::Source
        } else if budget >= 2 && roll < 0.4 {
            let op = BinaryFilter::ALL[rng.gen_range(0..BinaryFilter::ALL.len())];
            let l = Self::random(rng, budget - 1);
            let r = Self::random(rng, budget - 1);
            FilterNode::binary(op, l, r)
        } else {
            let f = UnaryFilter::random(rng);
            FilterNode::unary(f, Self::random(rng, budget - 1))
        }
    }
}

impl fmt::Display for FilterNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_sexpr())
    }
}

impl FromStr for FilterNode {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let e = sexpr::parse(s).map_err(|e| FilterError::Parse(e.to_string()))?;
        let node = Self::from_sexpr(&e)?;
        let depth = node.depth();
        if depth > MAX_FILTER_DEPTH {
            return Err(FilterError::DepthExceeded { depth });
        }
        Ok(node)
    }
}

/// Evaluates the filter bottom-up over `src`.
pub fn apply_filter(f: &FilterNode, src: &RasterImage) -> Result<RasterImage, FilterError> {
    let depth = f.depth();
    if depth > MAX_FILTER_DEPTH {
        return Err(FilterError::DepthExceeded { depth });
    }
    Ok(f.eval(src))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterLibrary {
    pub filters: Vec<FilterNode>,
    pub seed: u64,
}

impl FilterLibrary {
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// One s-expression per line, in library order.
    pub fn to_sidecar(&self) -> String {
        let mut out = format!("# seed {}\n", self.seed);
        for f in &self.filters {
            out.push_str(&f.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_sidecar(text: &str) -> Result<Self, FilterError> {
        let mut seed = 0;
        let mut filters = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(s) = rest.trim().strip_prefix("seed ") {
                    seed = s.trim().parse().map_err(|_| FilterError::Parse(format!("bad seed `{s}`")))?;
                }
                continue;
            }
            filters.push(line.parse()?);
        }
        Ok(Self { filters, seed })
    }
}

/// Redraws allowed per library slot before a degenerate filter is kept.
const SCREEN_ATTEMPTS: u64 = 32;

fn probe_images() -> [RasterImage; 2] {
    let ramp = RasterImage::from_fn(32, 32, |x, y| [(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]);
    let rings = RasterImage::from_fn(32, 32, |x, y| {
        let (dx, dy) = (x as i32 - 13, y as i32 - 18);
        let r = ((dx * dx + dy * dy) as f64).sqrt();
        [(r * 23.0) as u8, 200 - (r * 5.0) as u8, if (x / 4 + y / 4) % 2 == 0 { 40 } else { 220 }]
    });
    [ramp, rings]
}

fn is_constant(img: &RasterImage) -> bool {
    let px = img.pixels();
    px.chunks_exact(3).all(|c| c == &px[..3])
}

/// Samples `count` filter trees with at least one operator each, screened
/// against two built-in probe images.
pub fn random_filter_library(seed: u64, count: usize, max_depth: usize) -> Result<FilterLibrary, FilterError> {
    random_filter_library_for(seed, count, max_depth, &probe_images())
}

/// As [`random_filter_library`], screened against `probes`.
///
/// A candidate is redrawn when its output on any probe is a single flat
/// colour, equals its own output on another probe, or equals any earlier
/// filter's output. The library is
/// a deterministic function of the arguments.
pub fn random_filter_library_for(
    seed: u64,
    count: usize,
    max_depth: usize,
    probes: &[RasterImage],
) -> Result<FilterLibrary, FilterError> {
    if count == 0 {
        return Err(FilterError::EmptyLibrary);
    }
    if max_depth == 0 {
        return Err(FilterError::InvalidParameter("max_depth must be >= 1".into()));
    }
    if max_depth > MAX_FILTER_DEPTH {
        return Err(FilterError::DepthExceeded { depth: max_depth });
    }
    // Identical probes necessarily give identical outputs, so screen each image once.
    let mut distinct: Vec<&RasterImage> = Vec::with_capacity(probes.len());
    for p in probes {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    let mut seen: std::collections::HashSet<RasterImage> = Default::default();
    let mut filters = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let slot = seeds::derive_seed(seed, i);
        for attempt in 0..SCREEN_ATTEMPTS {
            let f = FilterNode::random_root(&mut seeds::rng_for(slot, attempt), max_depth);
            let outs: Vec<RasterImage> = distinct.iter().map(|p| f.eval(p)).collect();
            let novel = outs
                .iter()
                .enumerate()
                .all(|(j, o)| !is_constant(o) && !seen.contains(o) && !outs[..j].contains(o));
            if novel || attempt + 1 == SCREEN_ATTEMPTS {
                seen.extend(outs);
                filters.push(f);
                break;
            }
        }
    }
    Ok(FilterLibrary { filters, seed })
}
