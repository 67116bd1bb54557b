//! Point-cloud evaluation: Chamfer distance, F-score and clutter point ratio.
//!
//! Chamfer distance here is the symmetric sum of mean unsquared nearest
//! neighbour distances. Nearest neighbours come from a uniform hash grid that
//! is exact: rings are scanned outward until no unseen cell can hold a closer
//! point, with a brute-force fallback for queries far from the data.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::par;
use crate::radar::CartesianPoint;

/// Clutter distance threshold in meters.
pub const DEFAULT_ZETA: f64 = 0.5;
/// F-score distance threshold in meters.
pub const DEFAULT_TAU: f64 = 0.5;

pub fn distance(a: &CartesianPoint, b: &CartesianPoint) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Exact nearest-neighbour index over a borrowed cloud.
pub struct NearestIndex<'a> {
    points: &'a [CartesianPoint],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> NearestIndex<'a> {
    pub fn new(points: &'a [CartesianPoint], cell: f64) -> Self {
        let cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i);
        }
        Self { points, cell, cells, lo, hi }
    }

    /// Cell edge chosen so an average cell holds a handful of points.
    pub fn with_auto_cell(points: &'a [CartesianPoint]) -> Self {
        if points.is_empty() {
            return Self::new(points, 1.0);
        }
        let mut min = points[0].coords;
        let mut max = points[0].coords;
        for p in points {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        }
        let ext = (max - min).map(|e| e.max(1e-3));
        let cell = (ext.x * ext.y * ext.z * 4.0 / points.len() as f64).cbrt();
        Self::new(points, cell)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn brute(&self, q: &CartesianPoint) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let d = distance(q, p);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }

    /// Index and distance of the nearest point.
    pub fn nearest(&self, q: &CartesianPoint) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let k0 = key(q, self.cell);
        let max_ring = (0..3).map(|a| (k0[a] - self.lo[a]).abs().max((self.hi[a] - k0[a]).abs())).max().unwrap_or(0);
        let mut best: Option<(usize, f64)> = None;
        let mut visited = 0usize;
        for ring in 0..=max_ring {
            visited += ring_size(ring);
            if visited > 8 * self.points.len() + 64 {
                return self.brute(q);
            }
            self.scan_ring(k0, ring, q, &mut best);
            if let Some((_, d)) = best {
                if d <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }

    fn scan_ring(&self, k0: [i64; 3], ring: i64, q: &CartesianPoint, best: &mut Option<(usize, f64)>) {
        let clip = |a: usize| ((k0[a] - ring).max(self.lo[a]), (k0[a] + ring).min(self.hi[a]));
        let (x0, x1) = clip(0);
        let (y0, y1) = clip(1);
        let (z0, z1) = clip(2);
        let mut visit = |cell: [i64; 3]| {
            let Some(ids) = self.cells.get(&cell) else { return };
            for &i in ids {
                let d = distance(q, &self.points[i]);
                let take = match *best {
                    None => true,
                    Some((bi, bd)) => d < bd || (d == bd && i < bi),
                };
                if take {
                    *best = Some((i, d));
                }
            }
        };
        for x in x0..=x1 {
            for y in y0..=y1 {
                if (x - k0[0]).abs() == ring || (y - k0[1]).abs() == ring {
                    for z in z0..=z1 {
                        visit([x, y, z]);
                    }
                } else {
                    // Only the two z caps of this column lie on the shell.
                    let bottom = k0[2] - ring;
                    let top = k0[2] + ring;
                    if bottom >= z0 && bottom <= z1 {
                        visit([x, y, bottom]);
                    }
                    if top != bottom && top >= z0 && top <= z1 {
                        visit([x, y, top]);
                    }
                }
            }
        }
    }

    /// Nearest distance of every query, in query order.
    pub fn nearest_distances(&self, queries: &[CartesianPoint]) -> Vec<f64> {
        par::map(queries, |q| self.nearest(q).map_or(f64::INFINITY, |(_, d)| d))
    }
}

fn ring_size(ring: i64) -> usize {
    if ring == 0 {
        1
    } else {
        let outer = (2 * ring + 1) as usize;
        let inner = (2 * ring - 1) as usize;
        outer.pow(3) - inner.pow(3)
    }
}

fn key(p: &CartesianPoint, cell: f64) -> [i64; 3] {
    [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn non_empty(p: &[CartesianPoint]) -> Result<()> {
    if p.is_empty() {
        Err(Error::EmptyCloud)
    } else {
        Ok(())
    }
}

/// Nearest distances from each of `from` to `to`, using a fresh index.
fn directed(from: &[CartesianPoint], to: &[CartesianPoint], cell: Option<f64>) -> Vec<f64> {
    let index = match cell {
        Some(c) => NearestIndex::new(to, c),
        None => NearestIndex::with_auto_cell(to),
    };
    index.nearest_distances(from)
}

pub fn chamfer_distance(p: &[CartesianPoint], q: &[CartesianPoint]) -> Result<f64> {
    non_empty(p)?;
    non_empty(q)?;
    Ok(mean(&directed(p, q, None)) + mean(&directed(q, p, None)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
}

fn fraction_within(dists: &[f64], tau: f64) -> f64 {
    dists.iter().filter(|&&d| d <= tau).count() as f64 / dists.len() as f64
}

fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision: share of `p` within `tau` of `q`. Recall: share of `q` within
/// `tau` of `p`.
pub fn f_score(p: &[CartesianPoint], q: &[CartesianPoint], tau: f64) -> Result<FScore> {
    non_empty(p)?;
    non_empty(q)?;
    if !(tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    let precision = fraction_within(&directed(p, q, Some(tau)), tau);
    let recall = fraction_within(&directed(q, p, Some(tau)), tau);
    Ok(FScore { f: harmonic(precision, recall), precision, recall })
}

/// Share of predicted points farther than `zeta` from every reference point.
/// An empty reference makes every prediction clutter.
pub fn cpr(p: &[CartesianPoint], q: &[CartesianPoint], zeta: f64) -> Result<f64> {
    non_empty(p)?;
    if q.is_empty() {
        return Ok(1.0);
    }
    Ok(clutter_ratio(&directed(p, q, Some(zeta)), zeta))
}

fn clutter_ratio(dists: &[f64], zeta: f64) -> f64 {
    dists.iter().filter(|&&d| d > zeta).count() as f64 / dists.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub chamfer: f64,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub cpr: f64,
    pub tau: f64,
    pub zeta: f64,
    /// The reference cloud was empty, so `cpr` is 1 by convention and the
    /// other metrics are undefined (NaN).
    pub empty_reference: bool,
}

/// All metrics from one pair of index builds (cell edge `max(tau, zeta)`).
pub fn evaluate(pred: &[CartesianPoint], truth: &[CartesianPoint], tau: f64, zeta: f64) -> Result<MetricReport> {
    non_empty(pred)?;
    if !(tau > 0.0) || !(zeta > 0.0) {
        return Err(Error::Config("tau and zeta must be positive".into()));
    }
    if truth.is_empty() {
        return Ok(MetricReport {
            chamfer: f64::NAN,
            f_score: f64::NAN,
            precision: f64::NAN,
            recall: f64::NAN,
            cpr: 1.0,
            tau,
            zeta,
            empty_reference: true,
        });
    }
    let cell = tau.max(zeta);
    let to_truth = directed(pred, truth, Some(cell));
    let to_pred = directed(truth, pred, Some(cell));
    let precision = fraction_within(&to_truth, tau);
    let recall = fraction_within(&to_pred, tau);
    Ok(MetricReport {
        chamfer: mean(&to_truth) + mean(&to_pred),
        f_score: harmonic(precision, recall),
        precision,
        recall,
        cpr: clutter_ratio(&to_truth, zeta),
        tau,
        zeta,
        empty_reference: false,
    })
}
