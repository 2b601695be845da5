//! Outlier handling: threshold split for write records, density-based
//! noise removal for read records.

use std::collections::HashMap;

use crate::bench::PerfRecord;
use crate::error::{Error, Result};

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Surge label per write record: flagged, or slower than `k` times the
/// median per-row time.
pub fn surge_labels(records: &[PerfRecord], k: f64) -> Result<Vec<bool>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut t: Vec<f64> = records.iter().map(|r| r.elapsed_per_row_us).collect();
    let cut = k * median(&mut t);
    Ok(records.iter().map(|r| r.surge || r.elapsed_per_row_us > cut).collect())
}

/// Splits write records into (regular, surge points).
pub fn split_outliers_write(records: &[PerfRecord], k: f64) -> Result<(Vec<PerfRecord>, Vec<PerfRecord>)> {
    let labels = surge_labels(records, k)?;
    let (mut regular, mut surges) = (Vec::new(), Vec::new());
    for (r, s) in records.iter().zip(labels) {
        if s {
            surges.push(r.clone())
        } else {
            regular.push(r.clone())
        }
    }
    Ok((regular, surges))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
    /// Largest share of points that may be dropped.
    pub max_drop: f64,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            eps: 0.5,
            min_pts: 8,
            max_drop: 0.2,
        }
    }
}

/// DBSCAN noise labels for 2-D points. A point counts itself among its
/// neighbours.
pub fn dbscan_noise(points: &[(f64, f64)], p: &DbscanParams) -> Vec<bool> {
    let n = points.len();
    // cell side eps/sqrt(2): any two points in one cell are neighbours
    let side = p.eps / std::f64::consts::SQRT_2;
    let cell = |(x, y): (f64, f64)| ((x / side).floor() as i64, (y / side).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &pt) in points.iter().enumerate() {
        grid.entry(cell(pt)).or_default().push(i);
    }
    let eps2 = p.eps * p.eps;
    let near = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) <= eps2;
    let neighbour_cells = |c: (i64, i64)| (-2..=2).flat_map(move |dx| (-2..=2).map(move |dy| (c.0 + dx, c.1 + dy)));
    let mut core = vec![false; n];
    for (&c, members) in &grid {
        if members.len() >= p.min_pts {
            members.iter().for_each(|&i| core[i] = true);
            continue;
        }
        for &i in members {
            let mut count = 0;
            'cells: for nc in neighbour_cells(c) {
                if let Some(other) = grid.get(&nc) {
                    for &j in other {
                        if near(points[i], points[j]) {
                            count += 1;
                            if count >= p.min_pts {
                                break 'cells;
                            }
                        }
                    }
                }
            }
            core[i] = count >= p.min_pts;
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                return false;
            }
            let c = cell(points[i]);
            !neighbour_cells(c).any(|nc| {
                grid.get(&nc)
                    .is_some_and(|o| o.iter().any(|&j| core[j] && near(points[i], points[j])))
            })
        })
        .collect()
}

/// Indices of points to drop: DBSCAN noise, capped at the `max_drop`
/// share farthest from any core point.
pub fn noise_to_drop(points: &[(f64, f64)], p: &DbscanParams) -> Vec<usize> {
    let noise = dbscan_noise(points, p);
    let mut idx: Vec<usize> = (0..points.len()).filter(|&i| noise[i]).collect();
    let cap = (p.max_drop * points.len() as f64).floor() as usize;
    if idx.len() <= cap {
        return idx;
    }
    let cores: Vec<(f64, f64)> = (0..points.len()).filter(|&i| !noise[i]).map(|i| points[i]).collect();
    if cores.is_empty() {
        return Vec::new();
    }
    let dist = |a: (f64, f64)| {
        cores
            .iter()
            .map(|b| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2))
            .fold(f64::INFINITY, f64::min)
    };
    let mut scored: Vec<(f64, usize)> = idx.iter().map(|&i| (dist(points[i]), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    idx = scored.into_iter().take(cap).map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// The plane read records are clustered in.
pub fn read_point(r: &PerfRecord) -> (f64, f64) {
    (r.features.values()[12].ln_1p(), r.elapsed_per_row_us.ln())
}

/// Removes density-noise read records.
pub fn drop_outliers_read(records: &[PerfRecord], p: &DbscanParams) -> Result<Vec<PerfRecord>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pts: Vec<(f64, f64)> = records.iter().map(read_point).collect();
    let drop = noise_to_drop(&pts, p);
    let mut keep = vec![true; records.len()];
    drop.iter().for_each(|&i| keep[i] = false);
    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}
