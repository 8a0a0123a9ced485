//! Point clouds: synthetic manifolds with known intrinsic coordinates, CSV
//! files and IDX image archives.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// `N` samples in `M` ambient dimensions, plus optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    /// `N x M`, one sample per row.
    pub points: DMatrix<f64>,
    /// `N x K_true` intrinsic coordinates, when the generator knows them.
    pub intrinsic: Option<DMatrix<f64>>,
    pub labels: Option<Vec<u8>>,
    pub name: String,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            intrinsic: None,
            labels: None,
            name: name.into(),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_intrinsic(mut self, intrinsic: DMatrix<f64>) -> Result<Self> {
        self.intrinsic = Some(intrinsic);
        self.validate()?;
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        self.labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = self.points.shape();
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "point cloud must be non-empty, got {n}x{m}"
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "point cloud has non-finite entries".into(),
            ));
        }
        if let Some(intr) = &self.intrinsic {
            if intr.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "intrinsic has {} rows, cloud has {n}",
                    intr.nrows()
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    /// Keep only the rows in `rows`, in that order.
    pub fn select(&self, rows: &[usize]) -> Result<PointCloud> {
        let pick =
            |m: &DMatrix<f64>| DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)]);
        let cloud = PointCloud {
            points: pick(&self.points),
            intrinsic: self.intrinsic.as_ref().map(pick),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            name: self.name.clone(),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    /// Rows whose label equals `label`.
    pub fn filter_label(&self, label: u8) -> Result<PointCloud> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("cloud has no labels".into()))?;
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no sample has label {label}"
            )));
        }
        self.select(&rows)
    }
}

/// Synthetic manifolds that the CLI knows by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    SwissRoll,
    SwissHole,
    SShape,
}

impl Generator {
    pub const NAMES: [&'static str; 3] = ["swiss-roll", "swiss-hole", "s-shape"];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "swiss-roll" => Ok(Generator::SwissRoll),
            "swiss-hole" => Ok(Generator::SwissHole),
            "s-shape" => Ok(Generator::SShape),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset '{other}', expected one of: {}",
                Generator::NAMES.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Generator::SwissRoll => "swiss-roll",
            Generator::SwissHole => "swiss-hole",
            Generator::SShape => "s-shape",
        }
    }

    /// Intrinsic dimensionality of the generated manifold.
    pub fn intrinsic_dim(self) -> usize {
        match self {
            Generator::SShape => 1,
            _ => 2,
        }
    }

    pub fn generate(self, n: usize, noise_sigma: f64, seed: u64) -> Result<PointCloud> {
        match self {
            Generator::SwissRoll => generate_swiss_roll(n, noise_sigma, seed),
            Generator::SwissHole => generate_swiss_hole(n, noise_sigma, seed),
            Generator::SShape => generate_s_shape(n, noise_sigma, seed),
        }
    }
}

/// Swiss-roll angle range and height.
pub const SWISS_T_MIN: f64 = 1.5 * PI;
pub const SWISS_T_MAX: f64 = 4.5 * PI;
pub const SWISS_HEIGHT: f64 = 21.0;

/// Arc length of the spiral `(t cos t, t sin t)` from 0 to `t`.
fn spiral_arc(t: f64) -> f64 {
    0.5 * (t * (1.0 + t * t).sqrt() + t.asinh())
}

/// Unrolled coordinate of angle `t`, zero at [`SWISS_T_MIN`].
pub fn swiss_unrolled(t: f64) -> f64 {
    spiral_arc(t) - spiral_arc(SWISS_T_MIN)
}

/// Total unrolled length of the roll.
pub fn swiss_length() -> f64 {
    swiss_unrolled(SWISS_T_MAX)
}

/// Angle whose unrolled coordinate is `s` (Newton on a monotone function).
pub fn swiss_angle(s: f64) -> f64 {
    let target = s + spiral_arc(SWISS_T_MIN);
    let mut t = SWISS_T_MIN + s / (1.0 + SWISS_T_MIN * SWISS_T_MIN).sqrt();
    for _ in 0..60 {
        let step = (spiral_arc(t) - target) / (1.0 + t * t).sqrt();
        t -= step;
        if step.abs() <= 1e-15 * t.abs() {
            break;
        }
    }
    t
}

/// Ambient point of the roll at unrolled coordinate `s` and height `h`.
pub fn swiss_point(s: f64, h: f64) -> [f64; 3] {
    let t = swiss_angle(s);
    [t * t.cos(), h, t * t.sin()]
}

/// The hole of the Swiss-Hole: `[s0, s1] x [h0, h1]` in intrinsic coordinates.
pub fn swiss_hole_rect() -> [f64; 4] {
    let len = swiss_length();
    [0.4 * len, 0.6 * len, 0.4 * SWISS_HEIGHT, 0.6 * SWISS_HEIGHT]
}

fn check_n(n: usize, noise_sigma: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 samples, got {n}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and >= 0, got {noise_sigma}"
        )));
    }
    Ok(())
}

fn roll_samples(
    n: usize,
    noise_sigma: f64,
    seed: u64,
    keep: impl Fn(f64, f64) -> bool,
) -> Vec<([f64; 3], [f64; 2])> {
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = SWISS_T_MIN + (SWISS_T_MAX - SWISS_T_MIN) * rng::unit(&mut rng);
        let h = SWISS_HEIGHT * rng::unit(&mut rng);
        let mut p = [t * t.cos(), h, t * t.sin()];
        for c in &mut p {
            let z: f64 = StandardNormal.sample(&mut rng);
            *c += noise_sigma * z;
        }
        let s = swiss_unrolled(t);
        if keep(s, h) {
            out.push((p, [s, h]));
        }
    }
    out
}

fn roll_cloud(samples: Vec<([f64; 3], [f64; 2])>, name: &str) -> Result<PointCloud> {
    let n = samples.len();
    let points = DMatrix::from_fn(n, 3, |i, j| samples[i].0[j]);
    let intrinsic = DMatrix::from_fn(n, 2, |i, j| samples[i].1[j]);
    PointCloud::new(points, name)?.with_intrinsic(intrinsic)
}

/// Swiss roll `(t cos t, h, t sin t)` with `t` uniform in `[1.5 pi, 4.5 pi]`
/// and `h` uniform in `[0, 21]`. The intrinsic coordinates are the exact
/// unrolled arc length and the height, so they are isometric to the surface.
pub fn generate_swiss_roll(n: usize, noise_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_n(n, noise_sigma)?;
    roll_cloud(
        roll_samples(n, noise_sigma, seed, |_, _| true),
        "swiss-roll",
    )
}

/// Swiss roll with the rectangle [`swiss_hole_rect`] rejected.
pub fn generate_swiss_hole(n: usize, noise_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_n(n, noise_sigma)?;
    let [s0, s1, h0, h1] = swiss_hole_rect();
    let samples = roll_samples(n, noise_sigma, seed, |s, h| {
        !(s >= s0 && s <= s1 && h >= h0 && h <= h1)
    });
    roll_cloud(samples, "swiss-hole")
}

/// Total arc length of the S curve (two half circles of unit radius).
pub const S_SHAPE_LENGTH: f64 = 2.0 * PI;

/// Point of the S curve at arc length `u` in `[0, 2 pi]`.
///
/// The upper lobe is the left half of the unit circle around `(0, 1)`,
/// traversed from `(0, 2)` down to the origin; the lower lobe is the right
/// half of the unit circle around `(0, -1)`, from the origin to `(0, -2)`.
pub fn s_shape_point(u: f64) -> [f64; 2] {
    if u <= PI {
        let phi = PI / 2.0 + u;
        [phi.cos(), 1.0 + phi.sin()]
    } else {
        let phi = PI / 2.0 - (u - PI);
        [phi.cos(), -1.0 + phi.sin()]
    }
}

/// Noisy one-dimensional S curve in the plane, unit speed, arc length as the
/// intrinsic coordinate.
pub fn generate_s_shape(n: usize, noise_sigma: f64, seed: u64) -> Result<PointCloud> {
    check_n(n, noise_sigma)?;
    let mut rng = rng::seeded(seed);
    let mut points = DMatrix::zeros(n, 2);
    let mut intrinsic = DMatrix::zeros(n, 1);
    for i in 0..n {
        let u = S_SHAPE_LENGTH * rng::unit(&mut rng);
        let p = s_shape_point(u);
        for (j, c) in p.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            points[(i, j)] = c + noise_sigma * z;
        }
        intrinsic[(i, 0)] = u;
    }
    PointCloud::new(points, "s-shape")?.with_intrinsic(intrinsic)
}

/// Sidecar path holding intrinsic coordinates: `c.csv` -> `c.intrinsic.csv`.
pub fn intrinsic_sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cloud");
    path.with_file_name(format!("{stem}.intrinsic.csv"))
}

/// Write a matrix as CSV with header `{prefix}0,...`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    let mut row = Vec::with_capacity(m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        row.extend((0..m.ncols()).map(|j| format!("{}", m[(i, j)])));
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Read a numeric CSV with a header row. Rows and columns in errors are
/// 1-based, counting data rows only.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |row, col, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let width = reader
        .headers()
        .map_err(|e| parse_err(0, 0, e.to_string()))?
        .len();
    if text.trim().is_empty() || width == 0 {
        return Err(parse_err(0, 0, "empty file".into()));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(r + 1, 0, e.to_string()))?;
        if record.len() != width {
            return Err(parse_err(
                r + 1,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(r + 1, c + 1, format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(r + 1, c + 1, format!("'{cell}' is not finite")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(1, 0, "no data rows".into()));
    }
    Ok(DMatrix::from_row_slice(rows, width, &data))
}

/// Write `points` to `path` and, when present, intrinsic coordinates to the
/// sidecar file.
pub fn save_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_matrix_csv(path, &cloud.points, "x")?;
    if let Some(intr) = &cloud.intrinsic {
        write_matrix_csv(&intrinsic_sidecar(path), intr, "t")?;
    }
    Ok(())
}

/// Load a cloud from CSV, picking up the intrinsic sidecar when it exists.
pub fn load_csv(path: &Path) -> Result<PointCloud> {
    let points = read_matrix_csv(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("csv")
        .to_string();
    let cloud = PointCloud::new(points, name)?;
    let sidecar = intrinsic_sidecar(path);
    if sidecar.exists() {
        cloud.with_intrinsic(read_matrix_csv(&sidecar)?)
    } else {
        Ok(cloud)
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Decode an IDX image archive: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("images: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("images: size overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::Format(format!(
            "images: truncated payload, need {need} bytes, have {}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, &payload[..need]))
}

/// Decode an IDX label archive.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("labels: bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::Format(format!(
            "labels: truncated payload, need {n} bytes, have {}",
            payload.len()
        )));
    }
    Ok(&payload[..n])
}

/// Load IDX images (pixels rescaled to `[0, 1]`) with optional labels.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<PointCloud> {
    let bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let (n, rows, cols, pixels) = parse_idx_images(&bytes)?;
    if n == 0 || rows * cols == 0 {
        return Err(Error::Format("images: empty archive".into()));
    }
    let dim = rows * cols;
    let points = DMatrix::from_fn(n, dim, |i, j| f64::from(pixels[i * dim + j]) / 255.0);
    let name = images_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("idx")
        .to_string();
    let cloud = PointCloud::new(points, name)?;
    match labels_path {
        None => Ok(cloud),
        Some(lp) => {
            let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
            let labels = parse_idx_labels(&lbytes)?;
            if labels.len() != n {
                return Err(Error::Format(format!(
                    "{} labels for {n} images",
                    labels.len()
                )));
            }
            cloud.with_labels(labels.to_vec())
        }
    }
}
