//! Synthetic fshapes: icospheres, flat grids, circles, midpoint subdivision.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{DiscreteFshape, Point};

/// Icosahedron subdivided `level` times and projected on the sphere of the
/// given radius (12, 42, 162, 642, 2562, ... vertices). Faces are oriented
/// with outward normals.
pub fn icosphere(level: usize, radius: f64, signal: impl Fn(&Point) -> f64) -> Result<DiscreteFshape> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Point::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = |a: usize, b: usize, verts: &mut Vec<Point>| {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                    verts.len() - 1
                })
            };
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let verts: Vec<Point> = verts.into_iter().map(|v| v * radius).collect();
    let signals = verts.iter().map(&signal).collect();
    DiscreteFshape::triangles(verts, signals, &faces)
}

/// `nx × ny` vertices on `[0, width] × [0, height]` in the `z = 0` plane,
/// two triangles per quad.
pub fn grid(nx: usize, ny: usize, width: f64, height: f64, signal: impl Fn(&Point) -> f64) -> Result<DiscreteFshape> {
    let mut verts = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            verts.push(Point::new(
                width * i as f64 / (nx - 1) as f64,
                height * j as f64 / (ny - 1) as f64,
                0.0,
            ));
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v = j * nx + i;
            faces.push([v, v + 1, v + nx + 1]);
            faces.push([v, v + nx + 1, v + nx]);
        }
    }
    let signals = verts.iter().map(&signal).collect();
    DiscreteFshape::triangles(verts, signals, &faces)
}

/// Closed polygon with `n` vertices in the plane.
pub fn circle(n: usize, radius: f64, signal: impl Fn(&Point) -> f64) -> Result<DiscreteFshape> {
    let verts: Vec<Point> = (0..n)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            Point::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect();
    let segs: Vec<[usize; 2]> = (0..n).map(|k| [k, (k + 1) % n]).collect();
    let signals = verts.iter().map(&signal).collect();
    DiscreteFshape::segments(verts, signals, &segs, 2)
}

/// Splits every triangle into four (every segment into two) at edge
/// midpoints; signals are interpolated linearly.
pub fn subdivide(fs: &DiscreteFshape) -> Result<DiscreteFshape> {
    let mut verts = fs.vertices().to_vec();
    let mut signals = fs.signals().to_vec();
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, verts: &mut Vec<Point>, signals: &mut Vec<f64>| {
        *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
            verts.push((verts[a] + verts[b]) * 0.5);
            signals.push(0.5 * (signals[a] + signals[b]));
            verts.len() - 1
        })
    };
    let mut cells = Vec::new();
    for c in fs.cells() {
        if c.len() == 2 {
            let m = mid(c[0], c[1], &mut verts, &mut signals);
            cells.extend_from_slice(&[c[0], m, m, c[1]]);
        } else {
            let ab = mid(c[0], c[1], &mut verts, &mut signals);
            let bc = mid(c[1], c[2], &mut verts, &mut signals);
            let ca = mid(c[2], c[0], &mut verts, &mut signals);
            cells.extend_from_slice(&[c[0], ab, ca, c[1], bc, ab, c[2], ca, bc, ab, bc, ca]);
        }
    }
    DiscreteFshape::new(verts, signals, cells, fs.dim_d(), fs.dim_n())
}

/// Random perturbation of positions (uniform in `±amp_x` per in-space
/// coordinate) and signals (uniform in `±amp_f`), deterministic in `seed`.
pub fn jitter(fs: &DiscreteFshape, amp_x: f64, amp_f: f64, seed: u64) -> DiscreteFshape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planar = fs.dim_n() == 2;
    let verts = fs
        .vertices()
        .iter()
        .map(|v| {
            let mut d = Point::new(
                rng.gen_range(-amp_x..=amp_x),
                rng.gen_range(-amp_x..=amp_x),
                rng.gen_range(-amp_x..=amp_x),
            );
            if planar {
                d.z = 0.0;
            }
            v + d
        })
        .collect();
    let signals = fs.signals().iter().map(|f| f + rng.gen_range(-amp_f..=amp_f)).collect();
    fs.with_data(verts, signals).expect("same vertex count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cell_geometry, validate_fshape};

    #[test]
    fn icosphere_counts_and_orientation() {
        for (level, p, t) in [(0, 12, 20), (1, 42, 80), (2, 162, 320), (3, 642, 1280)] {
            let s = icosphere(level, 2.0, |_| 1.0).unwrap();
            assert_eq!(s.num_vertices(), p);
            assert_eq!(s.num_cells(), t);
            assert!(validate_fshape(&s).is_empty());
            let g = cell_geometry(&s).unwrap();
            for (c, n) in g.centers.iter().zip(&g.frames) {
                assert!(c.dot(n) > 0.0, "inward normal");
            }
            for v in s.vertices() {
                assert!((v.norm() - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_and_circle() {
        let g = grid(5, 2, 1.0, 0.25, |p| p.x).unwrap();
        assert_eq!((g.num_vertices(), g.num_cells()), (10, 8));
        assert!(validate_fshape(&g).is_empty());
        assert!((g.total_volume().unwrap() - 0.25).abs() < 1e-15);
        let c = circle(12, 1.0, |_| 0.0).unwrap();
        assert_eq!((c.num_vertices(), c.num_cells(), c.dim_d(), c.dim_n()), (12, 12, 1, 2));
        assert!(validate_fshape(&c).is_empty());
    }

    #[test]
    fn subdivision_preserves_area() {
        let g = grid(3, 3, 1.0, 1.0, |p| p.x + p.y).unwrap();
        let s = subdivide(&g).unwrap();
        assert_eq!(s.num_cells(), 4 * g.num_cells());
        assert_eq!(s.num_vertices(), 25);
        assert!((s.total_volume().unwrap() - 1.0).abs() < 1e-14);
        assert!(validate_fshape(&s).is_empty());
    }
}
