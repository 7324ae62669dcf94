//! Discrete functional shapes and the per-cell geometry shared by the
//! fidelity, finite-element and dynamics modules.
//!
//! Points are stored as [`Point`] (three components) regardless of the
//! ambient dimension; shapes living in the plane keep `z = 0` everywhere.

use std::fmt;

use nalgebra::Vector3;

use crate::error::{FshapeError, Result};

pub type Point = Vector3<f64>;

/// Relative d-volume below which a cell counts as degenerate, scaled by the
/// bounding-box diagonal raised to the power d.
pub const DEGENERACY_RATIO: f64 = 1e-12;

/// A polyhedral mesh (`d = 1` polyline, `d = 2` triangulated surface)
/// carrying one scalar signal value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFshape {
    vertices: Vec<Point>,
    signals: Vec<f64>,
    cells: Vec<usize>,
    dim_d: usize,
    dim_n: usize,
}

impl DiscreteFshape {
    /// Builds an fshape from flat cell indices (stride `dim_d + 1`).
    ///
    /// Only structural consistency is checked here; use [`validate_fshape`]
    /// for the full list of invariants.
    pub fn new(vertices: Vec<Point>, signals: Vec<f64>, cells: Vec<usize>, dim_d: usize, dim_n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim_d) {
            return Err(FshapeError::InvalidShape(format!(
                "simplex dimension must be 1 or 2, got {dim_d}"
            )));
        }
        if !(2..=3).contains(&dim_n) || dim_d > dim_n {
            return Err(FshapeError::InvalidShape(format!(
                "ambient dimension {dim_n} incompatible with simplex dimension {dim_d}"
            )));
        }
        if !cells.len().is_multiple_of(dim_d + 1) {
            return Err(FshapeError::InvalidShape(format!(
                "cell index list of length {} is not a multiple of {}",
                cells.len(),
                dim_d + 1
            )));
        }
        Ok(Self {
            vertices,
            signals,
            cells,
            dim_d,
            dim_n,
        })
    }

    /// Convenience constructor for triangle meshes in 3-D.
    pub fn triangles(vertices: Vec<Point>, signals: Vec<f64>, tris: &[[usize; 3]]) -> Result<Self> {
        let cells = tris.iter().flatten().copied().collect();
        Self::new(vertices, signals, cells, 2, 3)
    }

    /// Convenience constructor for polylines.
    pub fn segments(vertices: Vec<Point>, signals: Vec<f64>, segs: &[[usize; 2]], dim_n: usize) -> Result<Self> {
        let cells = segs.iter().flatten().copied().collect();
        Self::new(vertices, signals, cells, 1, dim_n)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn signals(&self) -> &[f64] {
        &self.signals
    }

    pub fn flat_cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn cells(&self) -> std::slice::ChunksExact<'_, usize> {
        self.cells.chunks_exact(self.dim_d + 1)
    }

    pub fn cell(&self, t: usize) -> &[usize] {
        let k = self.dim_d + 1;
        &self.cells[t * k..(t + 1) * k]
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim_d + 1)
    }

    /// Same connectivity, new vertices and signals.
    pub fn with_data(&self, vertices: Vec<Point>, signals: Vec<f64>) -> Result<Self> {
        if vertices.len() != self.vertices.len() || signals.len() != self.vertices.len() {
            return Err(FshapeError::ShapeMismatch(format!(
                "expected {} vertices and signals, got {} and {}",
                self.vertices.len(),
                vertices.len(),
                signals.len()
            )));
        }
        Ok(Self {
            vertices,
            signals,
            cells: self.cells.clone(),
            dim_d: self.dim_d,
            dim_n: self.dim_n,
        })
    }

    pub fn bounding_diagonal(&self) -> f64 {
        bounding_diagonal(&self.vertices)
    }

    /// Threshold on the d-volume below which a cell is degenerate.
    pub fn degeneracy_threshold(&self) -> f64 {
        DEGENERACY_RATIO * self.bounding_diagonal().powi(self.dim_d as i32)
    }

    pub fn total_volume(&self) -> Result<f64> {
        Ok(cell_geometry(self)?.volumes.iter().sum())
    }
}

pub fn bounding_diagonal(points: &[Point]) -> f64 {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewVertices { count: usize, needed: usize },
    NoCells,
    SignalLength { signals: usize, vertices: usize },
    IndexOutOfRange { cell: usize, index: usize },
    RepeatedIndex { cell: usize, index: usize },
    DegenerateCell { cell: usize, volume: f64 },
    NonFiniteVertex { vertex: usize },
    NonFiniteSignal { vertex: usize },
    OutOfPlane { vertex: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewVertices { count, needed } => {
                write!(f, "{count} vertices, at least {needed} required")
            }
            Violation::NoCells => write!(f, "no cells"),
            Violation::SignalLength { signals, vertices } => {
                write!(f, "{signals} signal values for {vertices} vertices")
            }
            Violation::IndexOutOfRange { cell, index } => {
                write!(f, "cell {cell}: vertex index {index} out of range")
            }
            Violation::RepeatedIndex { cell, index } => {
                write!(f, "cell {cell}: vertex index {index} repeated")
            }
            Violation::DegenerateCell { cell, volume } => {
                write!(f, "cell {cell}: degenerate (d-volume {volume:e})")
            }
            Violation::NonFiniteVertex { vertex } => {
                write!(f, "vertex {vertex}: non-finite coordinate")
            }
            Violation::NonFiniteSignal { vertex } => write!(f, "vertex {vertex}: non-finite signal"),
            Violation::OutOfPlane { vertex } => {
                write!(f, "vertex {vertex}: nonzero z coordinate in a planar shape")
            }
        }
    }
}

/// Lists every broken invariant of `fs`. Never fails.
pub fn validate_fshape(fs: &DiscreteFshape) -> Vec<Violation> {
    let mut out = Vec::new();
    let p = fs.num_vertices();
    let k = fs.dim_d + 1;
    if p < k {
        out.push(Violation::TooFewVertices { count: p, needed: k });
    }
    if fs.num_cells() == 0 {
        out.push(Violation::NoCells);
    }
    if fs.signals.len() != p {
        out.push(Violation::SignalLength {
            signals: fs.signals.len(),
            vertices: p,
        });
    }
    for (i, v) in fs.vertices.iter().enumerate() {
        if !v.iter().all(|c| c.is_finite()) {
            out.push(Violation::NonFiniteVertex { vertex: i });
        } else if fs.dim_n == 2 && v.z != 0.0 {
            out.push(Violation::OutOfPlane { vertex: i });
        }
    }
    for (i, s) in fs.signals.iter().enumerate() {
        if !s.is_finite() {
            out.push(Violation::NonFiniteSignal { vertex: i });
        }
    }
    let threshold = fs.degeneracy_threshold();
    for (t, cell) in fs.cells().enumerate() {
        let mut indexable = true;
        for (j, &idx) in cell.iter().enumerate() {
            if idx >= p {
                out.push(Violation::IndexOutOfRange { cell: t, index: idx });
                indexable = false;
            } else if cell[..j].contains(&idx) {
                out.push(Violation::RepeatedIndex { cell: t, index: idx });
                indexable = false;
            }
        }
        if indexable {
            let raw = raw_frame(&fs.vertices, cell);
            let volume = simplex_volume(&raw, fs.dim_d);
            if !(volume >= threshold) || volume == 0.0 {
                out.push(Violation::DegenerateCell { cell: t, volume });
            }
        }
    }
    out
}

/// Unnormalized frame of a cell: the edge vector for segments, the cross
/// product of the two edges leaving the first vertex for triangles.
#[inline]
pub fn raw_frame(x: &[Point], cell: &[usize]) -> Point {
    match cell.len() {
        2 => x[cell[1]] - x[cell[0]],
        _ => {
            let a = x[cell[1]] - x[cell[0]];
            let b = x[cell[2]] - x[cell[0]];
            a.cross(&b)
        }
    }
}

#[inline]
fn simplex_volume(raw: &Point, dim_d: usize) -> f64 {
    if dim_d == 1 {
        raw.norm()
    } else {
        0.5 * raw.norm()
    }
}

/// Barycenters, d-volumes, unit frames and mean signals of every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGeometry {
    pub centers: Vec<Point>,
    pub volumes: Vec<f64>,
    /// Unit normals for triangles, unit tangents for segments.
    pub frames: Vec<Point>,
    pub cell_signals: Vec<f64>,
}

impl CellGeometry {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

pub fn cell_geometry(fs: &DiscreteFshape) -> Result<CellGeometry> {
    cell_geometry_of(fs, &fs.vertices, &fs.signals)
}

/// Cell geometry of `fs`'s connectivity evaluated at arbitrary vertex
/// positions and signals (used along trajectories).
pub fn cell_geometry_of(fs: &DiscreteFshape, x: &[Point], f: &[f64]) -> Result<CellGeometry> {
    let t = fs.num_cells();
    let threshold = DEGENERACY_RATIO * bounding_diagonal(x).powi(fs.dim_d as i32);
    let inv = 1.0 / (fs.dim_d + 1) as f64;
    let mut geo = CellGeometry {
        centers: Vec::with_capacity(t),
        volumes: Vec::with_capacity(t),
        frames: Vec::with_capacity(t),
        cell_signals: Vec::with_capacity(t),
    };
    for (i, cell) in fs.cells().enumerate() {
        let raw = raw_frame(x, cell);
        let norm = raw.norm();
        let volume = simplex_volume(&raw, fs.dim_d);
        if !(volume >= threshold) || norm == 0.0 {
            return Err(FshapeError::DegenerateCell {
                cell: i,
                volume,
                threshold,
            });
        }
        let center = cell.iter().fold(Point::zeros(), |acc, &k| acc + x[k]) * inv;
        let signal = cell.iter().map(|&k| f[k]).sum::<f64>() * inv;
        geo.centers.push(center);
        geo.volumes.push(volume);
        geo.frames.push(raw / norm);
        geo.cell_signals.push(signal);
    }
    Ok(geo)
}

/// Pulls gradients with respect to (d-volume, unit frame) of one cell back
/// to its raw frame vector.
///
/// `d_frame` may contain a normal component; only its projection onto the
/// tangent space of the unit sphere at the frame contributes.
#[inline]
pub fn raw_frame_gradient(raw: &Point, dim_d: usize, d_volume: f64, d_frame: &Point) -> Point {
    let norm = raw.norm();
    let u = raw / norm;
    let volume_scale = if dim_d == 1 { 1.0 } else { 0.5 };
    let tangential = d_frame - u * u.dot(d_frame);
    u * (volume_scale * d_volume) + tangential / norm
}

/// Scatters a gradient with respect to a cell's raw frame vector onto the
/// cell's vertices (accumulating into `grad`).
#[inline]
pub fn scatter_raw_frame_gradient(x: &[Point], cell: &[usize], g_raw: &Point, grad: &mut [Point]) {
    match cell.len() {
        2 => {
            grad[cell[1]] += g_raw;
            grad[cell[0]] -= g_raw;
        }
        _ => {
            let a = x[cell[1]] - x[cell[0]];
            let b = x[cell[2]] - x[cell[0]];
            let ga = b.cross(g_raw);
            let gb = g_raw.cross(&a);
            grad[cell[1]] += ga;
            grad[cell[2]] += gb;
            grad[cell[0]] -= ga + gb;
        }
    }
}

/// Deformed copy of `fs`: vertices replaced by `x1`, signals shifted by `zeta`.
pub fn apply_end_transform(fs: &DiscreteFshape, x1: &[Point], zeta: &[f64]) -> Result<DiscreteFshape> {
    if zeta.len() != fs.num_vertices() {
        return Err(FshapeError::ShapeMismatch(format!(
            "signal increment of length {} for {} vertices",
            zeta.len(),
            fs.num_vertices()
        )));
    }
    let signals = fs.signals.iter().zip(zeta).map(|(f, z)| f + z).collect();
    fs.with_data(x1.to_vec(), signals)
}

macro_rules! phase_state {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub x: Vec<Point>,
            pub f: Vec<f64>,
            pub p: Vec<Point>,
            pub pf: Vec<f64>,
        }

        impl $name {
            pub fn zeros(num_vertices: usize) -> Self {
                Self {
                    x: vec![Point::zeros(); num_vertices],
                    f: vec![0.0; num_vertices],
                    p: vec![Point::zeros(); num_vertices],
                    pf: vec![0.0; num_vertices],
                }
            }

            pub fn num_vertices(&self) -> usize {
                self.x.len()
            }

            /// Flat layout `[x (3P) | f (P) | p (3P) | pf (P)]`.
            pub fn to_flat(&self) -> Vec<f64> {
                let n = self.x.len();
                let mut out = Vec::with_capacity(8 * n);
                out.extend(self.x.iter().flat_map(|v| v.iter().copied()));
                out.extend_from_slice(&self.f);
                out.extend(self.p.iter().flat_map(|v| v.iter().copied()));
                out.extend_from_slice(&self.pf);
                out
            }

            pub fn from_flat(flat: &[f64]) -> Self {
                assert_eq!(flat.len() % 8, 0, "flat phase vector length must be 8P");
                let n = flat.len() / 8;
                let points = |s: &[f64]| {
                    s.chunks_exact(3)
                        .map(|c| Point::new(c[0], c[1], c[2]))
                        .collect::<Vec<_>>()
                };
                Self {
                    x: points(&flat[..3 * n]),
                    f: flat[3 * n..4 * n].to_vec(),
                    p: points(&flat[4 * n..7 * n]),
                    pf: flat[7 * n..].to_vec(),
                }
            }

            pub fn is_finite(&self) -> bool {
                self.x.iter().chain(&self.p).all(|v| v.iter().all(|c| c.is_finite()))
                    && self.f.iter().chain(&self.pf).all(|c| c.is_finite())
            }
        }
    };
}

phase_state!(
    /// Positions, signals and their co-states `(x, f, p, pf)`.
    ShootingState
);

phase_state!(
    /// Adjoint variables `(X, F, P, Pf)` of the linearized flow.
    AdjointState
);

impl ShootingState {
    /// Initial state at the template with the given momenta.
    pub fn from_template(fs: &DiscreteFshape, p0: &[Point], pf: &[f64]) -> Result<Self> {
        let n = fs.num_vertices();
        if p0.len() != n || pf.len() != n {
            return Err(FshapeError::ShapeMismatch(format!(
                "momenta of length {} and {} for {} vertices",
                p0.len(),
                pf.len(),
                n
            )));
        }
        Ok(Self {
            x: fs.vertices().to_vec(),
            f: fs.signals().to_vec(),
            p: p0.to_vec(),
            pf: pf.to_vec(),
        })
    }
}
