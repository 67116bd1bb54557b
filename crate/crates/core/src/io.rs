//! File formats: binary cube, occupancy and attention-weight bundles, and
//! line-oriented text for detections and point clouds.
//!
//! Binary files are little-endian. Text files hold one record per line with
//! space-separated numbers printed to 9 significant digits; blank lines and
//! lines starting with `#` are ignored on input.

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use crate::bdaf::{AttentionWeights, Matrix};
use crate::detect::PolarDetection;
use crate::error::{Error, Result};
use crate::groundtruth::OccupancyGrid;
use crate::radar::{CartesianPoint, PolarCoord, RadarCube, RadarIntrinsics};
use crate::uncertainty::{Covariance3, UncertainPoint};

pub const CUBE_MAGIC: &[u8; 4] = b"RCUB";
pub const OCCUPANCY_MAGIC: &[u8; 4] = b"ROCC";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"BDAF";
pub const FORMAT_VERSION: u32 = 1;

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-5, 1e9)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn join(values: &[f64]) -> String {
    let mut line = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        line.push_str(&fmt_num(*v));
    }
    line
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} does not fit in u32")))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf)?;
        if got != len {
            return Err(Error::Format(format!("truncated body: expected {len} bytes, got {got}")));
        }
        Ok(buf)
    }

    fn expect_end(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after body".into())),
        }
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated header".into())
    } else {
        Error::Io(e)
    }
}

fn grid_header(out: &mut Vec<u8>, magic: &[u8; 4], intr: &RadarIntrinsics) -> Result<()> {
    out.extend_from_slice(magic);
    put_u32(out, FORMAT_VERSION);
    put_u32(out, dim(intr.range_bins)?);
    put_u32(out, dim(intr.azimuth_bins)?);
    put_u32(out, dim(intr.elevation_bins)?);
    put_f64(out, intr.range_resolution);
    for v in [intr.azimuth_min, intr.azimuth_max, intr.elevation_min, intr.elevation_max] {
        put_f64(out, v);
    }
    Ok(())
}

fn read_grid_header<R: Read>(r: &mut Reader<R>, magic: &[u8; 4]) -> Result<RadarIntrinsics> {
    let m: [u8; 4] = r.bytes()?;
    if &m != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (nr, na, ne) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let res = r.f64()?;
    let (amin, amax, emin, emax) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    RadarIntrinsics::new(nr, na, ne, res, (amin, amax), (emin, emax))
}

fn body_len(intr: &RadarIntrinsics, width: usize) -> Result<usize> {
    intr.range_bins
        .checked_mul(intr.azimuth_bins)
        .and_then(|n| n.checked_mul(intr.elevation_bins))
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::Format("cube dimensions overflow".into()))
}

pub fn write_cube<W: Write>(w: &mut W, cube: &RadarCube) -> Result<()> {
    let mut out = Vec::with_capacity(52 + 8 * cube.intensity().len());
    grid_header(&mut out, CUBE_MAGIC, cube.intrinsics())?;
    for v in cube.intensity().iter().chain(cube.doppler()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&out)?;
    Ok(())
}

pub fn read_cube<R: Read>(r: R) -> Result<RadarCube> {
    let mut r = Reader { inner: r };
    let intr = read_grid_header(&mut r, CUBE_MAGIC)?;
    let n = intr.cell_count();
    let body = r.vec(body_len(&intr, 8)?)?;
    r.expect_end()?;
    let mut values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let intensity: Vec<f32> = values.by_ref().take(n).collect();
    let doppler: Vec<f32> = values.collect();
    RadarCube::from_parts(intr, intensity, doppler)
}

/// Occupancy counts are stored as `u8` and saturate at 255.
pub fn write_occupancy<W: Write>(w: &mut W, grid: &OccupancyGrid) -> Result<()> {
    let mut out = Vec::with_capacity(52 + grid.counts().len());
    grid_header(&mut out, OCCUPANCY_MAGIC, grid.intrinsics())?;
    out.extend(grid.counts().iter().map(|&c| c.min(u8::MAX as u32) as u8));
    w.write_all(&out)?;
    Ok(())
}

pub fn read_occupancy<R: Read>(r: R) -> Result<OccupancyGrid> {
    let mut r = Reader { inner: r };
    let intr = read_grid_header(&mut r, OCCUPANCY_MAGIC)?;
    let body = r.vec(body_len(&intr, 1)?)?;
    r.expect_end()?;
    let counts = body.into_iter().map(u32::from).collect();
    OccupancyGrid::from_counts(intr, counts).ok_or_else(|| Error::Format("occupancy size mismatch".into()))
}

/// Attention weights together with the token count they were exported for.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub tokens: usize,
    pub weights: AttentionWeights,
}

pub fn write_weights<W: Write>(w: &mut W, bundle: &WeightBundle) -> Result<()> {
    let mut out = Vec::with_capacity(20 + 8 * bundle.weights.param_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, dim(bundle.tokens)?);
    put_u32(&mut out, dim(bundle.weights.channels())?);
    put_u32(&mut out, dim(bundle.weights.key_dim())?);
    for v in bundle.weights.to_flat() {
        put_f64(&mut out, v);
    }
    w.write_all(&out)?;
    Ok(())
}

pub fn read_weights<R: Read>(r: R) -> Result<WeightBundle> {
    let mut r = Reader { inner: r };
    let m: [u8; 4] = r.bytes()?;
    if &m != WEIGHTS_MAGIC {
        return Err(Error::Format("bad magic, expected BDAF".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let tokens = r.u32()? as usize;
    let (c, d) = (r.u32()? as usize, r.u32()? as usize);
    if c == 0 || d == 0 {
        return Err(Error::Format("channels and key dimension must be positive".into()));
    }
    let shapes = AttentionWeights::shapes(c, d);
    let total: usize = shapes.iter().map(|(a, b)| a * b).sum();
    let body = r.vec(total.checked_mul(8).ok_or_else(|| Error::Format("weight size overflow".into()))?)?;
    r.expect_end()?;
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mats = shapes
        .iter()
        .map(|&(rows, cols)| Matrix::from_row_iterator(rows, cols, values.by_ref().take(rows * cols)))
        .collect();
    Ok(WeightBundle { tokens, weights: AttentionWeights::from_matrices(mats)? })
}

/// Parses whitespace-separated numeric records, skipping blanks and `#`
/// comments. Each record must have at least `min_cols` columns.
pub fn read_records<R: BufRead>(r: R, min_cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for (no, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let values = t
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", no + 1)))?;
        if values.len() < min_cols {
            return Err(Error::Format(format!(
                "line {}: expected at least {min_cols} columns, got {}",
                no + 1,
                values.len()
            )));
        }
        out.push(values);
    }
    Ok(out)
}

/// Detections as `r alpha beta intensity doppler`, optionally followed by a
/// residual column.
pub fn format_detections(dets: &[PolarDetection], residuals: Option<&[f64]>) -> String {
    let mut s = String::new();
    for (i, d) in dets.iter().enumerate() {
        let mut row = vec![d.coord.r, d.coord.alpha, d.coord.beta, d.intensity, d.doppler];
        if let Some(res) = residuals {
            row.push(res[i]);
        }
        writeln!(s, "{}", join(&row)).expect("string write");
    }
    s
}

pub fn read_detections<R: BufRead>(r: R) -> Result<Vec<PolarDetection>> {
    Ok(read_records(r, 5)?
        .into_iter()
        .map(|v| PolarDetection {
            coord: PolarCoord::new(v[0], v[1], v[2]),
            intensity: v[3],
            doppler: v[4],
            source_bins: None,
        })
        .collect())
}

pub fn format_cloud(points: &[CartesianPoint]) -> String {
    let mut s = String::new();
    for p in points {
        writeln!(s, "{}", join(&[p.x, p.y, p.z])).expect("string write");
    }
    s
}

pub fn read_cloud<R: BufRead>(r: R) -> Result<Vec<CartesianPoint>> {
    Ok(read_records(r, 3)?.into_iter().map(|v| CartesianPoint::new(v[0], v[1], v[2])).collect())
}

/// `x y z sxx sxy sxz syy syz szz` per point.
pub fn format_uncertain_cloud(points: &[UncertainPoint]) -> String {
    let mut s = String::new();
    for p in points {
        let u = p.cov.upper();
        let row = [p.mean.x, p.mean.y, p.mean.z, u[0], u[1], u[2], u[3], u[4], u[5]];
        writeln!(s, "{}", join(&row)).expect("string write");
    }
    s
}

pub fn read_uncertain_cloud<R: BufRead>(r: R) -> Result<Vec<UncertainPoint>> {
    read_records(r, 9)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let cov = Covariance3::from_upper([v[3], v[4], v[5], v[6], v[7], v[8]])
                .map_err(|_| Error::NotPositiveDefinite { index: i })?;
            Ok(UncertainPoint { mean: CartesianPoint::new(v[0], v[1], v[2]), cov, jittered: false })
        })
        .collect()
}

pub fn format_numbers(values: &[f64]) -> String {
    join(values)
}
