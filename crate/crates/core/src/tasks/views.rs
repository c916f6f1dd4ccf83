//! Rotated-sprite view regression.
//!
//! A sprite is a convex polygon whose vertices sit on an ellipse, with an
//! intensity ramp along its long axis. A view at integer azimuth `deg`
//! is rendered by testing each pixel centre against the polygon rotated by
//! the base orientation plus `deg` (reduced modulo 360), so views 360°
//! apart are bit-identical. Pixels outside the polygon are 0; there is no
//! anti-aliasing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Episode, Example, Target};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SIDE: usize = 16;
pub const PIXELS: usize = SIDE * SIDE;
pub const VIEW_COUNT: usize = 36;
pub const VIEW_STEP_DEGREES: i64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    /// Counter-clockwise vertices in the sprite's body frame.
    pub vertices: Vec<(f64, f64)>,
    pub major: f64,
    pub base_degrees: f64,
    pub intensity: f64,
    pub slope: f64,
}

pub fn random_sprite(rng: &mut SeededRng) -> Sprite {
    let major = rng.uniform_range(4.5, 7.0);
    let minor = rng.uniform_range(2.0, 3.5);
    let count = 5 + rng.below(4);
    let mut angles: Vec<f64> = (0..count)
        .map(|i| (i as f64 + rng.uniform_range(0.15, 0.85)) * 2.0 * PI / count as f64)
        .collect();
    angles.sort_by(f64::total_cmp);
    Sprite {
        vertices: angles.iter().map(|a| (major * a.cos(), minor * a.sin())).collect(),
        major,
        base_degrees: rng.uniform_range(0.0, 360.0),
        intensity: rng.uniform_range(0.45, 0.75),
        slope: rng.uniform_range(-0.25, 0.25),
    }
}

fn inside(vertices: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = vertices.len();
    (0..n).all(|i| {
        let (ax, ay) = vertices[i];
        let (bx, by) = vertices[(i + 1) % n];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

/// Flattened row-major view at azimuth `degrees`.
pub fn render(sprite: &Sprite, degrees: i64) -> Vec<f64> {
    let theta = (sprite.base_degrees + degrees.rem_euclid(360) as f64).to_radians();
    let (s, c) = theta.sin_cos();
    let half = SIDE as f64 / 2.0;
    let mut img = vec![0.0; PIXELS];
    for row in 0..SIDE {
        for col in 0..SIDE {
            let x = col as f64 + 0.5 - half;
            let y = half - (row as f64 + 0.5);
            // Inverse rotation into the body frame.
            let bx = c * x + s * y;
            let by = -s * x + c * y;
            if inside(&sprite.vertices, bx, by) {
                img[row * SIDE + col] = (sprite.intensity + sprite.slope * bx / sprite.major).clamp(0.05, 1.0);
            }
        }
    }
    img
}

pub fn view_degrees(index: usize) -> i64 {
    index as i64 * VIEW_STEP_DEGREES
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewTask {
    pub episode: Episode,
    pub sprite: Sprite,
}

/// `shot` random views as context and the remaining views as targets. The
/// input of each example is the azimuth in radians.
pub fn sample_view_episode(shot: usize, task_id: u64, rng: &mut SeededRng) -> Result<ViewTask> {
    if shot == 0 || shot >= VIEW_COUNT {
        return Err(Error::contract(format!("view shot must be in 1..{VIEW_COUNT}, got {shot}")));
    }
    let seed = rng.next_u64();
    let sprite = random_sprite(rng);
    let mut order: Vec<usize> = (0..VIEW_COUNT).collect();
    rng.shuffle(&mut order);
    let (ctx, tgt) = order.split_at(shot);
    let mut tgt = tgt.to_vec();
    tgt.sort_unstable();
    let example = |i: usize| Example {
        input: vec![(view_degrees(i) as f64).to_radians()],
        target: Target::Values(render(&sprite, view_degrees(i))),
    };
    let episode = Episode {
        task_id,
        seed,
        way: 0,
        shot,
        context: ctx.iter().map(|&i| example(i)).collect(),
        target: tgt.iter().map(|&i| example(i)).collect(),
        context_ids: ctx.to_vec(),
        target_ids: tgt,
    };
    Ok(ViewTask { episode, sprite })
}
