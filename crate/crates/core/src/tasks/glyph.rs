//! Procedural glyph classification on a 16×16 grid.
//!
//! Each class id owns a base glyph of 3 or 4 straight strokes drawn from a
//! stream keyed only by the id. An instance shifts the whole glyph and
//! every stroke endpoint by integers in `[-jitter, jitter]`, rasterizes with
//! Bresenham lines two pixels wide (the pixel right of each line pixel is
//! also set), and then flips each pixel independently with probability
//! `noise`. Pixels are exactly 0 or 1; nothing is anti-aliased.

use serde::{Deserialize, Serialize};

use super::{class_episode, Episode};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SIDE: usize = 16;
pub const PIXELS: usize = SIDE * SIDE;
/// Total number of procedural classes.
pub const ALPHABET: usize = 256;

const GLYPH_STREAM: u64 = 0x0067_6c79_7068;

/// Disjoint class ranges for meta-training, validation and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSplit {
    Train,
    Validation,
    Test,
}

impl ClassSplit {
    pub fn classes(self) -> std::ops::Range<usize> {
        match self {
            ClassSplit::Train => 0..192,
            ClassSplit::Validation => 192..224,
            ClassSplit::Test => 224..ALPHABET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlyphSpec {
    pub jitter: i64,
    pub noise: f64,
    pub targets_per_class: usize,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            jitter: 1,
            noise: 0.02,
            targets_per_class: 15,
        }
    }
}

/// Stroke endpoints as `(x0, y0, x1, y1)` grid coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    pub strokes: Vec<[i64; 4]>,
}

pub fn base_glyph(class_id: usize) -> Glyph {
    let mut rng = SeededRng::keyed(GLYPH_STREAM, class_id as u64, 0);
    let count = 3 + rng.below(2);
    let coord = |rng: &mut SeededRng| 2 + rng.below(12) as i64;
    let strokes = (0..count)
        .map(|_| loop {
            let s = [coord(&mut rng), coord(&mut rng), coord(&mut rng), coord(&mut rng)];
            if (s[0] - s[2]).abs() + (s[1] - s[3]).abs() >= 4 {
                break s;
            }
        })
        .collect();
    Glyph { strokes }
}

fn offset(rng: &mut SeededRng, jitter: i64) -> i64 {
    if jitter <= 0 {
        0
    } else {
        rng.below((2 * jitter + 1) as usize) as i64 - jitter
    }
}

fn plot(img: &mut [f64], x: i64, y: i64) {
    for (px, py) in [(x, y), (x + 1, y)] {
        if (0..SIDE as i64).contains(&px) && (0..SIDE as i64).contains(&py) {
            img[py as usize * SIDE + px as usize] = 1.0;
        }
    }
}

fn bresenham(img: &mut [f64], [x0, y0, x1, y1]: [i64; 4]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot(img, x, y);
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

/// One jittered, noisy instance of `glyph` as a flattened row-major image.
pub fn render_instance(glyph: &Glyph, spec: &GlyphSpec, rng: &mut SeededRng) -> Vec<f64> {
    let mut img = vec![0.0; PIXELS];
    let (gx, gy) = (offset(rng, spec.jitter), offset(rng, spec.jitter));
    for s in &glyph.strokes {
        let mut p = *s;
        for (i, v) in p.iter_mut().enumerate() {
            *v += offset(rng, spec.jitter) + if i % 2 == 0 { gx } else { gy };
        }
        bresenham(&mut img, p);
    }
    if spec.noise > 0.0 {
        for px in img.iter_mut() {
            if rng.uniform() < spec.noise {
                *px = 1.0 - *px;
            }
        }
    }
    img
}

/// A `way`-way episode over distinct classes drawn from `split`. Episode
/// labels are `0..way` in the order the classes were drawn.
pub fn sample_glyph_episode(
    spec: &GlyphSpec,
    split: ClassSplit,
    way: usize,
    shot: usize,
    task_id: u64,
    rng: &mut SeededRng,
) -> Result<Episode> {
    let mut pool: Vec<usize> = split.classes().collect();
    if way == 0 || way > pool.len() {
        return Err(Error::contract(format!(
            "glyph way {way} exceeds the {} classes of the {split:?} split",
            pool.len()
        )));
    }
    let seed = rng.next_u64();
    rng.shuffle(&mut pool);
    let glyphs: Vec<Glyph> = pool[..way].iter().map(|&c| base_glyph(c)).collect();
    Ok(class_episode(task_id, seed, way, shot, spec.targets_per_class, |c| {
        render_instance(&glyphs[c], spec, rng)
    }))
}
