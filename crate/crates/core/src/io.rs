//! Mesh, matrix and trajectory files.
//!
//! Formats, chosen by extension:
//! - `.fsh`: `fshape d n P T`, then `P` lines `x y z f`, then `T` lines of
//!   `d + 1` zero-based vertex indices. `#` starts a comment.
//! - `.ply`: ASCII PLY, per-vertex `x y z [signal]`, triangular faces.
//! - `.off`: OFF triangle mesh; signals in a sidecar `<stem>.signal` with one
//!   value per line.
//!
//! Floats are written with 17 significant digits so every `f64` round trips.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::dynamics::{reduced_hamiltonian, DynamicsConfig, Trajectory};
use crate::error::{FshapeError, Result};
use crate::model::{DiscreteFshape, Point};

/// `f64` with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FshapeError {
    FshapeError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines with comments stripped, paired with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn parse_fields<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    text: &str,
    expected: usize,
    what: &str,
) -> Result<Vec<T>> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != expected {
        return Err(parse_err(
            path,
            line,
            format!("expected {expected} {what}, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_err(path, line, format!("cannot parse '{f}' as {what}")))
        })
        .collect()
}

fn check_indices(path: &Path, line: usize, cell: &[usize], num_vertices: usize) -> Result<()> {
    if let Some(&bad) = cell.iter().find(|&&i| i >= num_vertices) {
        return Err(parse_err(
            path,
            line,
            format!("vertex index {bad} out of range for {num_vertices} vertices (indices are zero-based)"),
        ));
    }
    Ok(())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads an fshape, choosing the format from the file extension.
pub fn read_fshape(path: &Path) -> Result<DiscreteFshape> {
    match extension(path).as_str() {
        "fsh" => parse_fsh(path, &fs::read_to_string(path)?),
        "ply" => parse_ply(path, &fs::read_to_string(path)?),
        "off" => {
            let text = fs::read_to_string(path)?;
            let sidecar = signal_sidecar(path);
            let signals = if sidecar.exists() {
                Some(parse_signal_file(&sidecar, &fs::read_to_string(&sidecar)?)?)
            } else {
                warn!(
                    "{}: no sidecar {}; signals default to 0",
                    path.display(),
                    sidecar.display()
                );
                None
            };
            parse_off(path, &text, signals)
        }
        other => Err(FshapeError::UnsupportedFormat(format!(
            "{}: unknown extension '{other}' (expected .fsh, .ply or .off)",
            path.display()
        ))),
    }
}

/// Writes an fshape in the format implied by the extension.
pub fn write_fshape(path: &Path, fs: &DiscreteFshape) -> Result<()> {
    match extension(path).as_str() {
        "fsh" => Ok(fs::write(path, format_fsh(fs))?),
        "ply" => Ok(fs::write(path, format_ply(fs)?)?),
        "off" => {
            fs::write(path, format_off(fs)?)?;
            let mut s = String::new();
            for f in fs.signals() {
                writeln!(s, "{}", fmt_f64(*f)).unwrap();
            }
            Ok(fs::write(signal_sidecar(path), s)?)
        }
        other => Err(FshapeError::UnsupportedFormat(format!(
            "{}: cannot write extension '{other}'",
            path.display()
        ))),
    }
}

/// `<dir>/<stem>.signal` next to an OFF file.
pub fn signal_sidecar(path: &Path) -> PathBuf {
    path.with_extension("signal")
}

pub fn parse_fsh(path: &Path, text: &str) -> Result<DiscreteFshape> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&"fshape") || fields.len() != 5 {
        return Err(parse_err(path, hline, "header must be 'fshape d n P T'"));
    }
    let nums: Vec<usize> = parse_fields(path, hline, &fields[1..].join(" "), 4, "header integers")?;
    let (d, n, p, t) = (nums[0], nums[1], nums[2], nums[3]);
    if !(1..=2).contains(&d) || !(2..=3).contains(&n) || d > n {
        return Err(parse_err(path, hline, format!("unsupported dimensions d={d}, n={n}")));
    }
    let mut vertices = Vec::with_capacity(p);
    let mut signals = Vec::with_capacity(p);
    for k in 0..p {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, hline, format!("expected {p} vertex lines, found {k}")))?;
        let v: Vec<f64> = parse_fields(path, ln, l, 4, "numbers (x y z f)")?;
        if n == 2 && v[2] != 0.0 {
            return Err(parse_err(path, ln, "planar shape (n=2) with nonzero z"));
        }
        vertices.push(Point::new(v[0], v[1], v[2]));
        signals.push(v[3]);
    }
    let mut cells = Vec::with_capacity(t * (d + 1));
    for k in 0..t {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, hline, format!("expected {t} cell lines, found {k}")))?;
        let c: Vec<usize> = parse_fields(path, ln, l, d + 1, "vertex indices")?;
        check_indices(path, ln, &c, p)?;
        cells.extend(c);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(path, ln, "unexpected content after the last cell"));
    }
    DiscreteFshape::new(vertices, signals, cells, d, n)
}

pub fn format_fsh(fs: &DiscreteFshape) -> String {
    let mut s = format!(
        "fshape {} {} {} {}\n",
        fs.dim_d(),
        fs.dim_n(),
        fs.num_vertices(),
        fs.num_cells()
    );
    for (v, f) in fs.vertices().iter().zip(fs.signals()) {
        writeln!(s, "{} {} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z), fmt_f64(*f)).unwrap();
    }
    for c in fs.cells() {
        let idx: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        writeln!(s, "{}", idx.join(" ")).unwrap();
    }
    s
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    list: bool,
}

pub fn parse_ply(path: &Path, text: &str) -> Result<DiscreteFshape> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_end = 0;
    for (ln, l) in lines.by_ref() {
        let f: Vec<&str> = l.split_whitespace().collect();
        match f.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(FshapeError::UnsupportedFormat(format!(
                    "{}:{ln}: PLY format '{other}' (only ascii is supported)",
                    path.display()
                )))
            }
            ["element", name, count] => elements.push(PlyElement {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| parse_err(path, ln, format!("bad element count '{count}'")))?,
                properties: Vec::new(),
                list: false,
            }),
            ["property", "list", _, _, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, ln, "property before any element"))?;
                e.properties.push(name.to_string());
                e.list = true;
            }
            ["property", _, name] => elements
                .last_mut()
                .ok_or_else(|| parse_err(path, ln, "property before any element"))?
                .properties
                .push(name.to_string()),
            ["end_header"] => {
                header_end = ln;
                break;
            }
            _ => return Err(parse_err(path, ln, format!("unrecognised header line '{l}'"))),
        }
    }
    if header_end == 0 {
        return Err(parse_err(path, 1, "missing end_header"));
    }
    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut vertices = Vec::new();
    let mut signals = Vec::new();
    let mut cells = Vec::new();
    let mut have_faces = false;
    for e in &elements {
        match e.name.as_str() {
            "vertex" => {
                let pos = |name: &str| e.properties.iter().position(|p| p == name);
                let (ix, iy, iz) = match (pos("x"), pos("y"), pos("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(path, header_end, "vertex element needs x, y and z")),
                };
                let is = pos("signal");
                if is.is_none() {
                    warn!("{}: no 'signal' vertex property; signals default to 0", path.display());
                }
                for k in 0..e.count {
                    let (ln, l) = body.next().ok_or_else(|| {
                        parse_err(path, header_end, format!("expected {} vertices, found {k}", e.count))
                    })?;
                    let v: Vec<f64> = parse_fields(path, ln, l, e.properties.len(), "vertex properties")?;
                    vertices.push(Point::new(v[ix], v[iy], v[iz]));
                    signals.push(is.map_or(0.0, |i| v[i]));
                }
            }
            "face" => {
                if !e.list || e.properties.len() != 1 {
                    return Err(FshapeError::UnsupportedFormat(format!(
                        "{}: face element must carry exactly one index list",
                        path.display()
                    )));
                }
                have_faces = true;
                for k in 0..e.count {
                    let (ln, l) = body
                        .next()
                        .ok_or_else(|| parse_err(path, header_end, format!("expected {} faces, found {k}", e.count)))?;
                    let f: Vec<usize> = l
                        .split_whitespace()
                        .map(|x| x.parse().map_err(|_| parse_err(path, ln, format!("bad index '{x}'"))))
                        .collect::<Result<_>>()?;
                    if f.first() != Some(&3) || f.len() != 4 {
                        return Err(parse_err(path, ln, "only triangular faces are supported"));
                    }
                    check_indices(path, ln, &f[1..], vertices.len())?;
                    cells.extend_from_slice(&f[1..]);
                }
            }
            other => {
                return Err(FshapeError::UnsupportedFormat(format!(
                    "{}: unsupported PLY element '{other}'",
                    path.display()
                )))
            }
        }
    }
    if !have_faces {
        return Err(FshapeError::UnsupportedFormat(format!(
            "{}: PLY without faces",
            path.display()
        )));
    }
    DiscreteFshape::new(vertices, signals, cells, 2, 3)
}

fn require_surface(fs: &DiscreteFshape, what: &str) -> Result<()> {
    if fs.dim_d() != 2 || fs.dim_n() != 3 {
        return Err(FshapeError::UnsupportedFormat(format!(
            "{what} stores triangle surfaces in 3-D only; use .fsh for curves"
        )));
    }
    Ok(())
}

pub fn format_ply(fs: &DiscreteFshape) -> Result<String> {
    require_surface(fs, "PLY")?;
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty double signal\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        fs.num_vertices(),
        fs.num_cells()
    );
    for (v, f) in fs.vertices().iter().zip(fs.signals()) {
        writeln!(s, "{} {} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z), fmt_f64(*f)).unwrap();
    }
    for c in fs.cells() {
        writeln!(s, "3 {} {} {}", c[0], c[1], c[2]).unwrap();
    }
    Ok(s)
}

pub fn parse_signal_file(path: &Path, text: &str) -> Result<Vec<f64>> {
    content_lines(text)
        .map(|(ln, l)| {
            l.parse::<f64>()
                .map_err(|_| parse_err(path, ln, format!("cannot parse '{l}' as a signal value")))
        })
        .collect()
}

pub fn parse_off(path: &Path, text: &str, signals: Option<Vec<f64>>) -> Result<DiscreteFshape> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, "OFF")) => {}
        Some((ln, _)) => return Err(parse_err(path, ln, "missing 'OFF' magic")),
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let (cln, counts) = lines.next().ok_or_else(|| parse_err(path, 1, "missing counts line"))?;
    let counts: Vec<usize> = parse_fields(path, cln, counts, 3, "counts (vertices faces edges)")?;
    let (nv, nf) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, cln, format!("expected {nv} vertices, found {k}")))?;
        let v: Vec<f64> = parse_fields(path, ln, l, 3, "coordinates")?;
        vertices.push(Point::new(v[0], v[1], v[2]));
    }
    let mut cells = Vec::with_capacity(3 * nf);
    let mut face_lines = Vec::with_capacity(nf);
    for k in 0..nf {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, cln, format!("expected {nf} faces, found {k}")))?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| parse_err(path, ln, format!("bad index '{x}'"))))
            .collect::<Result<_>>()?;
        if f.first() != Some(&3) || f.len() != 4 {
            return Err(parse_err(path, ln, "only triangular faces are supported"));
        }
        face_lines.push(ln);
        cells.extend_from_slice(&f[1..]);
    }
    if !cells.is_empty() && !cells.contains(&0) && cells.iter().all(|&i| i <= nv) && cells.contains(&nv) {
        return Err(parse_err(
            path,
            face_lines[cells.iter().position(|&i| i == nv).unwrap() / 3],
            "face indices appear to be 1-based; OFF indices must start at 0",
        ));
    }
    for (k, c) in cells.chunks_exact(3).enumerate() {
        check_indices(path, face_lines[k], c, nv)?;
    }
    let signals = match signals {
        Some(s) if s.len() != nv => {
            return Err(FshapeError::ShapeMismatch(format!(
                "{}: {} signal values for {nv} vertices",
                signal_sidecar(path).display(),
                s.len()
            )))
        }
        Some(s) => s,
        None => vec![0.0; nv],
    };
    DiscreteFshape::new(vertices, signals, cells, 2, 3)
}

pub fn format_off(fs: &DiscreteFshape) -> Result<String> {
    require_surface(fs, "OFF")?;
    let mut s = format!("OFF\n{} {} 0\n", fs.num_vertices(), fs.num_cells());
    for v in fs.vertices() {
        writeln!(s, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
    }
    for c in fs.cells() {
        writeln!(s, "3 {} {} {}", c[0], c[1], c[2]).unwrap();
    }
    Ok(s)
}

/// One row of whitespace-separated numbers per line.
pub fn format_matrix<R: AsRef<[f64]>>(rows: &[R]) -> String {
    let mut s = String::new();
    for r in rows {
        let cols: Vec<String> = r.as_ref().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(s, "{}", cols.join(" ")).unwrap();
    }
    s
}

pub fn read_matrix(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    content_lines(&text)
        .map(|(ln, l)| parse_fields(path, ln, l, cols, "numbers"))
        .collect()
}

pub fn write_points(path: &Path, p: &[Point]) -> Result<()> {
    let rows: Vec<[f64; 3]> = p.iter().map(|v| [v.x, v.y, v.z]).collect();
    Ok(fs::write(path, format_matrix(&rows))?)
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    Ok(read_matrix(path, 3)?
        .into_iter()
        .map(|r| Point::new(r[0], r[1], r[2]))
        .collect())
}

pub fn write_reals(path: &Path, v: &[f64]) -> Result<()> {
    let rows: Vec<[f64; 1]> = v.iter().map(|x| [*x]).collect();
    Ok(fs::write(path, format_matrix(&rows))?)
}

pub fn read_reals(path: &Path) -> Result<Vec<f64>> {
    Ok(read_matrix(path, 1)?.into_iter().map(|r| r[0]).collect())
}

/// Legacy ASCII VTK PolyData with the signal as point scalars.
pub fn format_vtk(fs: &DiscreteFshape, x: &[Point], f: &[f64], title: &str) -> String {
    let mut s = format!(
        "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET POLYDATA\nPOINTS {} double\n",
        x.len()
    );
    for v in x {
        writeln!(s, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)).unwrap();
    }
    let k = fs.dim_d() + 1;
    let keyword = if fs.dim_d() == 1 { "LINES" } else { "POLYGONS" };
    writeln!(s, "{keyword} {} {}", fs.num_cells(), fs.num_cells() * (k + 1)).unwrap();
    for c in fs.cells() {
        let idx: Vec<String> = c.iter().map(|i| i.to_string()).collect();
        writeln!(s, "{k} {}", idx.join(" ")).unwrap();
    }
    writeln!(
        s,
        "POINT_DATA {}\nSCALARS signal double 1\nLOOKUP_TABLE default",
        x.len()
    )
    .unwrap();
    for v in f {
        writeln!(s, "{}", fmt_f64(*v)).unwrap();
    }
    s
}

/// Writes `frame_NNNN.vtk` per sample and `index.csv` with
/// `t, H_r, volume, min_signal, max_signal` into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, template: &DiscreteFshape, cfg: &DynamicsConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = String::from("t,H_r,volume,min_signal,max_signal,file\n");
    for (k, (s, t)) in traj.states.iter().zip(traj.times()).enumerate() {
        let name = format!("frame_{k:04}.vtk");
        fs::write(dir.join(&name), format_vtk(template, &s.x, &s.f, &format!("t = {t}")))?;
        let h = reduced_hamiltonian(s, template, cfg)?;
        let volume = template.with_data(s.x.clone(), s.f.clone())?.total_volume()?;
        let lo = s.f.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(
            csv,
            "{},{},{},{},{},{name}",
            fmt_f64(t),
            fmt_f64(h),
            fmt_f64(volume),
            fmt_f64(lo),
            fmt_f64(hi)
        )
        .unwrap();
    }
    fs::write(dir.join("index.csv"), csv)?;
    Ok(())
}

/// Output directory populated in a hidden sibling and renamed into place
/// by [`StagedDir::commit`]; dropped without commit, it leaves nothing.
pub struct StagedDir {
    staging: tempfile::TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() && fs::read_dir(target)?.next().is_some() {
            return Err(FshapeError::Config(format!(
                "output directory {} exists and is not empty",
                target.display()
            )));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let staging = tempfile::Builder::new()
            .prefix(".fshapes-staging-")
            .tempdir_in(&parent)?;
        Ok(Self {
            staging,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.staging.path()
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target)?;
        }
        let staged = self.staging.keep();
        fs::rename(&staged, &self.target)?;
        Ok(self.target)
    }
}

/// Writes a single file through a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| FshapeError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn p() -> &'static Path {
        Path::new("test.fsh")
    }

    #[test]
    fn fsh_round_trip_is_exact() {
        let tri = "fshape 2 3 3 1\n0 0 0 0.1\n1 0 0 0.2\n0 1 0 0.30000000000000004\n0 1 2\n";
        let a = parse_fsh(p(), tri).unwrap();
        let b = parse_fsh(p(), &format_fsh(&a)).unwrap();
        assert_eq!(a, b);
        let s = shapes::jitter(&shapes::icosphere(1, 1.3, |q| q.x.sin()).unwrap(), 0.01, 0.1, 4);
        assert_eq!(parse_fsh(p(), &format_fsh(&s)).unwrap(), s);
        let c = shapes::circle(7, 2.0, |q| q.y).unwrap();
        assert_eq!(parse_fsh(p(), &format_fsh(&c)).unwrap(), c);
    }

    #[test]
    fn fsh_errors_carry_line_numbers() {
        let bad = "# comment\nfshape 2 3 3 1\n0 0 0 0\n1 0 0\n0 1 0 0\n0 1 2\n";
        match parse_fsh(p(), bad) {
            Err(FshapeError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let oob = "fshape 2 3 3 1\n0 0 0 0\n1 0 0 0\n0 1 0 0\n0 1 3\n";
        assert!(matches!(parse_fsh(p(), oob), Err(FshapeError::Parse { line: 5, .. })));
        let planar = "fshape 1 2 2 1\n0 0 1 0\n1 0 0 0\n0 1\n";
        assert!(matches!(
            parse_fsh(p(), planar),
            Err(FshapeError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn ply_round_trip_and_missing_signal() {
        let s = shapes::jitter(&shapes::icosphere(1, 1.0, |q| q.z).unwrap(), 0.01, 0.1, 5);
        let text = format_ply(&s).unwrap();
        assert_eq!(parse_ply(Path::new("a.ply"), &text).unwrap(), s);
        let plain = "ply\nformat ascii 1.0\ncomment no signal\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let fs = parse_ply(Path::new("a.ply"), plain).unwrap();
        assert_eq!(fs.signals(), &[0.0; 3]);
        let binary = plain.replace("ascii", "binary_little_endian");
        assert!(matches!(
            parse_ply(Path::new("a.ply"), &binary),
            Err(FshapeError::UnsupportedFormat(_))
        ));
        let quad = plain
            .replace("element vertex 3", "element vertex 4")
            .replace("0 1 0\n3 0 1 2", "0 1 0\n1 1 0\n4 0 1 3 2");
        assert!(matches!(
            parse_ply(Path::new("a.ply"), &quad),
            Err(FshapeError::Parse { .. })
        ));
    }

    #[test]
    fn off_round_trip_and_one_based_rejection() {
        let s = shapes::icosphere(0, 1.0, |q| q.x).unwrap();
        let text = format_off(&s).unwrap();
        let back = parse_off(Path::new("a.off"), &text, Some(s.signals().to_vec())).unwrap();
        assert_eq!(back, s);
        let one_based = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 1 2 3\n";
        match parse_off(Path::new("a.off"), one_based, None) {
            Err(FshapeError::Parse { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("1-based"));
            }
            other => panic!("{other:?}"),
        }
        let short = parse_off(Path::new("a.off"), &text, Some(vec![0.0; 3]));
        assert!(matches!(short, Err(FshapeError::ShapeMismatch(_))));
    }

    #[test]
    fn files_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let s = shapes::jitter(&shapes::icosphere(1, 1.0, |q| q.x * q.y).unwrap(), 0.01, 0.1, 6);
        for name in ["a.fsh", "a.ply", "a.off"] {
            let path = dir.path().join(name);
            write_fshape(&path, &s).unwrap();
            assert_eq!(read_fshape(&path).unwrap(), s, "{name}");
        }
        assert!(matches!(
            read_fshape(&dir.path().join("a.obj")),
            Err(FshapeError::UnsupportedFormat(_))
        ));
        let pts = vec![Point::new(0.1, -2.0, 1e-300), Point::new(f64::MAX, 0.0, -0.0)];
        write_points(&dir.path().join("p.txt"), &pts).unwrap();
        assert_eq!(read_points(&dir.path().join("p.txt")).unwrap(), pts);
    }

    #[test]
    fn staged_dir_leaves_nothing_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        {
            let staged = StagedDir::new(&target).unwrap();
            fs::write(staged.path().join("x"), "1").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let staged = StagedDir::new(&target).unwrap();
        fs::write(staged.path().join("x"), "1").unwrap();
        staged.commit().unwrap();
        assert_eq!(fs::read_to_string(target.join("x")).unwrap(), "1");
        assert!(StagedDir::new(&target).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn text_formats_round_trip_bitwise(seed in 0u64..10_000, amp in 1e-8f64..10.0) {
            let fs = shapes::jitter(&shapes::icosphere(0, 1.0, |p| p.x).unwrap(), amp, amp, seed);
            let path = Path::new("p.fsh");
            proptest::prop_assert_eq!(&parse_fsh(path, &format_fsh(&fs)).unwrap(), &fs);
            let ply = parse_ply(Path::new("p.ply"), &format_ply(&fs).unwrap()).unwrap();
            proptest::prop_assert_eq!(&ply, &fs);
            let off = parse_off(Path::new("p.off"), &format_off(&fs).unwrap(), Some(fs.signals().to_vec())).unwrap();
            proptest::prop_assert_eq!(&off, &fs);
        }
    }
}
