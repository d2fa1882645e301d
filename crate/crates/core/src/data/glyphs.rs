// SPDX-License-Identifier: Apache-2.0

//! Procedural H/K/U glyphs, a stand-in for EMNIST when it is not on disk.

use rand::Rng;

use super::ImageDataset;
use crate::latent::IMAGE_SIDE;
use crate::rng::{normal, SimRng};

type Seg = ((f64, f64), (f64, f64));

/// Strokes in a unit box, x to the right and y down.
fn strokes(class: usize) -> &'static [Seg] {
    const H: [Seg; 3] = [
        ((0.2, 0.1), (0.2, 0.9)),
        ((0.8, 0.1), (0.8, 0.9)),
        ((0.2, 0.5), (0.8, 0.5)),
    ];
    const K: [Seg; 3] = [
        ((0.25, 0.1), (0.25, 0.9)),
        ((0.25, 0.55), (0.8, 0.1)),
        ((0.42, 0.42), (0.8, 0.9)),
    ];
    const U: [Seg; 5] = [
        ((0.2, 0.1), (0.2, 0.65)),
        ((0.8, 0.1), (0.8, 0.65)),
        ((0.2, 0.65), (0.35, 0.87)),
        ((0.35, 0.87), (0.65, 0.87)),
        ((0.65, 0.87), (0.8, 0.65)),
    ];
    match class {
        0 => &H,
        1 => &K,
        _ => &U,
    }
}

fn seg_dist(p: (f64, f64), s: &Seg) -> f64 {
    let ((ax, ay), (bx, by)) = *s;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let u = if len2 > 0.0 {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - ax - u * dx).hypot(p.1 - ay - u * dy)
}

/// One jittered glyph of `class` (0 = H, 1 = K, 2 = U).
pub fn draw_glyph(class: usize, rng: &mut SimRng) -> Vec<f64> {
    let scale = rng.random_range(0.85..1.1);
    let angle = rng.random_range(-0.12..0.12);
    let (shift_x, shift_y) = (rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06));
    let width = rng.random_range(0.07..0.11);
    let (sin, cos) = f64::sin_cos(angle);
    let segs: Vec<Seg> = strokes(class)
        .iter()
        .map(|&(a, b)| {
            let tf = |(x, y): (f64, f64)| {
                let (cx, cy) = ((x - 0.5) * scale, (y - 0.5) * scale);
                (0.5 + cx * cos - cy * sin + shift_x, 0.5 + cx * sin + cy * cos + shift_y)
            };
            (tf(a), tf(b))
        })
        .collect();
    let n = IMAGE_SIDE as f64;
    let mut img = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for i in 0..IMAGE_SIDE {
        for j in 0..IMAGE_SIDE {
            let p = ((j as f64 + 0.5) / n, (i as f64 + 0.5) / n);
            let d = segs.iter().map(|s| seg_dist(p, s)).fold(f64::INFINITY, f64::min);
            // ink 1 inside the stroke, fading over one pixel
            let ink = (1.0 - (d - width) * n).clamp(0.0, 1.0);
            img.push((2.0 * ink - 1.0 + 0.05 * normal(rng)).clamp(-1.0, 1.0));
        }
    }
    img
}

/// `per_class` glyphs of each of H, K and U, interleaved by class.
pub fn synthetic_glyphs(per_class: usize, rng: &mut SimRng) -> ImageDataset {
    let mut ds = ImageDataset {
        images: Vec::with_capacity(3 * per_class),
        labels: Vec::with_capacity(3 * per_class),
    };
    for _ in 0..per_class {
        for class in 0..3 {
            ds.images.push(draw_glyph(class, rng));
            ds.labels.push(class);
        }
    }
    ds
}
