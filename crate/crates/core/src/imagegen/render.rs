use rand::Rng;

use super::expr::{Bindings, ExpressionTree, Symbol};
use super::genome::ParticleGenome;
use super::transform::{apply_line_transform, triangle_fold, LineTransform, Point, Primitive, Segment};
use super::ImageGenError;
use crate::raster::{box_blur, RasterImage, Rgb};
use crate::seeds;

const BACKGROUND_STREAM: u64 = 0xB6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Fixed(Rgb),
    /// A single colour drawn from the genome's seed.
    RandomMonotone,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    pub particle_count: u32,
    pub timesteps: u32,
    pub blur_radius: u32,
    pub background: Background,
}

impl Default for CanvasSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            particle_count: 1000,
            timesteps: 100,
            blur_radius: 1,
            background: Background::RandomMonotone,
        }
    }
}

impl CanvasSpec {
    pub const MIN_EDGE: u32 = 16;

    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImageGenError> {
        if self.width < Self::MIN_EDGE || self.height < Self::MIN_EDGE {
            return Err(ImageGenError::InvalidCanvas(format!(
                "canvas {}x{} is smaller than {min}x{min}",
                self.width,
                self.height,
                min = Self::MIN_EDGE
            )));
        }
        if self.particle_count == 0 || self.timesteps == 0 {
            return Err(ImageGenError::InvalidCanvas("particle_count and timesteps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Background colour a particle render will use.
pub fn background_color(genome: &ParticleGenome, canvas: &CanvasSpec) -> Rgb {
    match canvas.background {
        Background::Fixed(c) => c,
        Background::RandomMonotone => {
            let mut rng = seeds::rng_for(genome.rng_seed, BACKGROUND_STREAM);
            [rng.gen(), rng.gen(), rng.gen()]
        }
    }
}

#[inline]
fn fold_channel(v: f64) -> u8 {
    triangle_fold(v, 255.0).round() as u8
}

/// Integer midpoint line between two pixel positions; both ends inclusive.
fn draw_pixel_line(img: &mut RasterImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put(x as u32, y as u32, color);
        }
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

fn clamp_to_canvas(p: Point, img: &RasterImage) -> (i64, i64) {
    let x = p.x.clamp(0.0, (img.width() - 1) as f64).round() as i64;
    let y = p.y.clamp(0.0, (img.height() - 1) as f64).round() as i64;
    (x, y)
}

fn draw_segment(img: &mut RasterImage, s: Segment, color: Rgb) {
    let (x0, y0) = clamp_to_canvas(s.from, img);
    let (x1, y1) = clamp_to_canvas(s.to, img);
    draw_pixel_line(img, x0, y0, x1, y1, color);
}

fn draw_ellipse(img: &mut RasterImage, fa: Point, fb: Point, major_axis: f64, color: Rgb) {
    let a = major_axis / 2.0;
    let c = (fb.x - fa.x).hypot(fb.y - fa.y) / 2.0;
    let b = (a * a - c * c).max(0.0).sqrt();
    let (mx, my) = ((fa.x + fb.x) / 2.0, (fa.y + fb.y) / 2.0);
    let phi = (fb.y - fa.y).atan2(fb.x - fa.x);
    let (cos, sin) = (phi.cos(), phi.sin());
    let steps = ((std::f64::consts::TAU * a).ceil() as usize).clamp(8, 4096);
    let at = |i: usize| {
        let t = std::f64::consts::TAU * i as f64 / steps as f64;
        let (ex, ey) = (a * t.cos(), b * t.sin());
        Point::new(mx + ex * cos - ey * sin, my + ex * sin + ey * cos)
    };
    let mut prev = at(0);
    for i in 1..=steps {
        let next = at(i);
        draw_segment(img, Segment { from: prev, to: next }, color);
        prev = next;
    }
}

pub(crate) fn draw_primitive(img: &mut RasterImage, p: Primitive, color: Rgb) {
    match p {
        Primitive::Line(s) => draw_segment(img, s, color),
        Primitive::Ellipse {
            focus_a,
            focus_b,
            major_axis,
        } => draw_ellipse(img, focus_a, focus_b, major_axis, color),
    }
}

struct Particle {
    /// Raw values of f1..f10.
    values: [f64; 10],
    x: f64,
    y: f64,
}

impl Particle {
    fn place(&mut self, canvas: &CanvasSpec, raw_x: f64, raw_y: f64) {
        self.x = triangle_fold(raw_x, (canvas.width - 1) as f64);
        self.y = triangle_fold(raw_y, (canvas.height - 1) as f64);
    }
}

/// Renders a particle-trail image.
///
/// Particles start at the folded outputs of the initialisation functions.
/// At each timestep the update functions run in order, each seeing the
/// previous state plus the updates already computed this step; the segment
/// from old to new position is transformed and drawn in the new colour, then
/// the whole canvas is blurred.
pub fn render_particle_image(
    genome: &ParticleGenome,
    canvas: &CanvasSpec,
    transform: &LineTransform,
) -> Result<RasterImage, ImageGenError> {
    canvas.validate()?;
    transform.validate()?;
    let bg = background_color(genome, canvas);
    let mut img = RasterImage::filled(canvas.width, canvas.height, bg);

    let mut particles: Vec<Particle> = Vec::with_capacity(canvas.particle_count as usize);
    for p in 1..=canvas.particle_count {
        let env = Bindings::new().with(Symbol::P, p as f64);
        let mut values = [0.0; 10];
        for k in 0..5 {
            values[k] = genome.init[k].eval(&env)?;
        }
        // Until the first update, u1..u5 report the initial state.
        let (head, tail) = values.split_at_mut(5);
        tail.copy_from_slice(head);
        let mut particle = Particle { values, x: 0.0, y: 0.0 };
        particle.place(canvas, values[0], values[1]);
        particles.push(particle);
    }

    for t in 1..=canvas.timesteps {
        for (i, particle) in particles.iter_mut().enumerate() {
            let mut env = Bindings::new().with(Symbol::P, (i + 1) as f64).with(Symbol::T, t as f64);
            for (k, v) in particle.values.iter().enumerate() {
                env.set(Symbol::F(k as u8 + 1), *v);
            }
            for k in 0..5 {
                let v = genome.update[k].eval(&env)?;
                env.set(Symbol::F(k as u8 + 6), v);
                particle.values[5 + k] = v;
            }
            let from = Point::new(particle.x, particle.y);
            let [_, _, _, _, _, ux, uy, ur, ug, ub] = particle.values;
            particle.place(canvas, ux, uy);
            let color = [fold_channel(ur), fold_channel(ug), fold_channel(ub)];
            let seg = Segment {
                from,
                to: Point::new(particle.x, particle.y),
            };
            let prim = apply_line_transform(transform, seg, canvas.width, canvas.height)?;
            draw_primitive(&mut img, prim, color);
        }
        img = box_blur(&img, canvas.blur_radius);
    }
    Ok(img)
}

/// Per-pixel colour from three trees over normalised `(x, y)`.
pub fn render_coordinate_image(
    red: &ExpressionTree,
    green: &ExpressionTree,
    blue: &ExpressionTree,
    width: u32,
    height: u32,
) -> Result<RasterImage, ImageGenError> {
    if width < CanvasSpec::MIN_EDGE || height < CanvasSpec::MIN_EDGE {
        return Err(ImageGenError::InvalidCanvas(format!("canvas {width}x{height} too small")));
    }
    let allowed = [Symbol::X, Symbol::Y];
    for tree in [red, green, blue] {
        if let Some(s) = tree.symbols().into_iter().find(|s| !allowed.contains(s)) {
            return Err(ImageGenError::UnboundInput(s));
        }
    }
    let unit = |v: f64| (triangle_fold(v, 1.0) * 255.0).round() as u8;
    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    for j in 0..height {
        for i in 0..width {
            let env = Bindings::new()
                .with(Symbol::X, i as f64 / (width - 1) as f64)
                .with(Symbol::Y, j as f64 / (height - 1) as f64);
            pixels.push(unit(red.eval(&env)?));
            pixels.push(unit(green.eval(&env)?));
            pixels.push(unit(blue.eval(&env)?));
        }
    }
    Ok(RasterImage::from_pixels(width, height, pixels).expect("sized buffer"))
}

/// Per-channel deviation a pixel needs before it counts as painted.
pub const COVERAGE_THRESHOLD: u8 = 8;

/// Fraction of pixels whose largest channel deviation from `background`
/// exceeds [`COVERAGE_THRESHOLD`].
pub fn coverage_score(img: &RasterImage, background: Rgb) -> f64 {
    let total = img.width() as usize * img.height() as usize;
    if total == 0 {
        return 0.0;
    }
    let painted = img
        .pixels()
        .chunks_exact(3)
        .filter(|px| (0..3).any(|c| px[c].abs_diff(background[c]) > COVERAGE_THRESHOLD))
        .count();
    painted as f64 / total as f64
}

/// Accept/reject band for automatically curated renders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurationThresholds {
    pub min_coverage: f64,
    pub max_coverage: f64,
}

impl Default for CurationThresholds {
    fn default() -> Self {
        Self {
            min_coverage: 0.02,
            max_coverage: 0.90,
        }
    }
}

impl CurationThresholds {
    pub fn accepts(&self, coverage: f64) -> bool {
        (self.min_coverage..=self.max_coverage).contains(&coverage)
    }
}
