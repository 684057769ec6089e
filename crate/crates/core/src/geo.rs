//! Spherical geometry: great-circle distance and the geodesic median.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in statute miles.
pub const EARTH_RADIUS_MILES: f64 = 3958.7613;

const MEDIAN_MAX_ITER: usize = 500;
const MEDIAN_TOL_RAD: f64 = 1e-6;
const COINCIDENCE_EPS_RAD: f64 = 1e-9;
// Above this many distinct inputs only the closest ones are checked in the
// final data-point comparison.
const EXHAUSTIVE_POLISH_LIMIT: usize = 4000;

/// A coordinate pair in degrees. Longitude is kept in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lat, lon });
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && self.lon > -180.0
            && self.lon <= 180.0
    }

    /// Total order on (lat, lon); used wherever deterministic sorting of points is needed.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.lat
            .total_cmp(&other.lat)
            .then(self.lon.total_cmp(&other.lon))
    }

    fn to_unit(self) -> [f64; 3] {
        let (phi, lam) = (self.lat.to_radians(), self.lon.to_radians());
        [phi.cos() * lam.cos(), phi.cos() * lam.sin(), phi.sin()]
    }

    fn from_unit(v: [f64; 3]) -> Self {
        let lat = v[2].clamp(-1.0, 1.0).asin().to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: normalize_lon(lon),
        }
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4})", self.lat, self.lon)
    }
}

/// Maps any finite longitude into `(-180, 180]`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    if l > 180.0 {
        l - 360.0
    } else {
        l
    }
}

pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let half_dphi = (p2 - p1) / 2.0;
    let half_dlam = (b.lon - a.lon).to_radians() / 2.0;
    let h = half_dphi.sin().powi(2) + p1.cos() * p2.cos() * half_dlam.sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

/// Sum of great-circle distances (miles) from `center` to weighted points.
pub fn weighted_distance_sum(center: GeoPoint, points: &[(GeoPoint, f64)]) -> f64 {
    points
        .iter()
        .map(|&(p, w)| w * haversine_miles(center, p))
        .sum()
}

/// Result of a median computation together with its iteration history.
#[derive(Debug, Clone)]
pub struct MedianTrace {
    pub point: GeoPoint,
    pub iterations: usize,
    /// Objective (summed miles) at the starting point and after each accepted step.
    pub objective: Vec<f64>,
}

/// Point minimizing the summed great-circle distance to `points`.
pub fn geodesic_median(points: &[GeoPoint]) -> Result<GeoPoint> {
    let weighted: Vec<(GeoPoint, f64)> = points.iter().map(|&p| (p, 1.0)).collect();
    weighted_geodesic_median(&weighted).map(|t| t.point)
}

/// Weighted geodesic median by Weiszfeld iteration on the unit sphere.
///
/// Iterates are computed in the 3-D embedding and projected back onto the
/// sphere after every step. A step that would increase the objective is
/// halved towards the previous iterate; if that fails the iteration stops.
/// Inputs are merged by exact coordinate first, so the result does not
/// depend on input order.
pub fn weighted_geodesic_median(points: &[(GeoPoint, f64)]) -> Result<MedianTrace> {
    let distinct = merge_duplicates(points);
    match distinct.len() {
        0 => return Err(Error::EmptyPointSet),
        1 => {
            return Ok(MedianTrace {
                point: distinct[0].0,
                iterations: 0,
                objective: vec![0.0],
            })
        }
        2 => return Ok(two_point_median(&distinct)),
        _ => {}
    }

    let units: Vec<([f64; 3], f64)> = distinct.iter().map(|&(p, w)| (p.to_unit(), w)).collect();
    let total_w: f64 = units.iter().map(|(_, w)| w).sum();
    let centroid = units.iter().fold([0.0; 3], |acc, (x, w)| {
        [acc[0] + w * x[0], acc[1] + w * x[1], acc[2] + w * x[2]]
    });
    let mut y = match normalize(scale(centroid, 1.0 / total_w)) {
        Some(v) => v,
        None => heaviest(&units),
    };
    let mut obj = angular_objective(y, &units);
    let mut history = vec![obj * EARTH_RADIUS_MILES];
    let mut iterations = 0;

    for _ in 0..MEDIAN_MAX_ITER {
        iterations += 1;
        let mut num = [0.0; 3];
        for (x, w) in &units {
            let d = angle(y, *x).max(COINCIDENCE_EPS_RAD);
            let c = w / d;
            num[0] += c * x[0];
            num[1] += c * x[1];
            num[2] += c * x[2];
        }
        let Some(mut cand) = normalize(num) else { break };
        let mut cand_obj = angular_objective(cand, &units);
        let mut halvings = 0;
        while cand_obj > obj && halvings < 30 {
            match normalize([y[0] + cand[0], y[1] + cand[1], y[2] + cand[2]]) {
                Some(mid) => cand = mid,
                None => break,
            }
            cand_obj = angular_objective(cand, &units);
            halvings += 1;
        }
        if cand_obj > obj {
            break;
        }
        let moved = angle(y, cand);
        y = cand;
        obj = cand_obj;
        history.push(obj * EARTH_RADIUS_MILES);
        if moved < MEDIAN_TOL_RAD {
            break;
        }
    }

    // The minimum may sit exactly on a data point, where the Weiszfeld map is
    // singular; compare against the inputs and keep whichever is lower.
    let best = best_data_point(y, &units);
    if let Some((x, x_obj)) = best {
        if x_obj < obj {
            y = x;
            obj = x_obj;
            history.push(obj * EARTH_RADIUS_MILES);
        }
    }

    Ok(MedianTrace {
        point: GeoPoint::from_unit(y),
        iterations,
        objective: history,
    })
}

fn merge_duplicates(points: &[(GeoPoint, f64)]) -> Vec<(GeoPoint, f64)> {
    let mut sorted: Vec<(GeoPoint, f64)> = points
        .iter()
        .copied()
        .filter(|(_, w)| *w > 0.0)
        .collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(GeoPoint, f64)> = Vec::with_capacity(sorted.len());
    for (p, w) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == p => last.1 += w,
            _ => out.push((p, w)),
        }
    }
    out
}

fn two_point_median(distinct: &[(GeoPoint, f64)]) -> MedianTrace {
    let (a, wa) = distinct[0];
    let (b, wb) = distinct[1];
    let point = if wa > wb {
        a
    } else if wb > wa {
        b
    } else {
        let (ua, ub) = (a.to_unit(), b.to_unit());
        match normalize([ua[0] + ub[0], ua[1] + ub[1], ua[2] + ub[2]]) {
            Some(mid) => GeoPoint::from_unit(mid),
            None => a,
        }
    };
    let objective = weighted_distance_sum(point, distinct);
    MedianTrace {
        point,
        iterations: 0,
        objective: vec![objective],
    }
}

fn best_data_point(y: [f64; 3], units: &[([f64; 3], f64)]) -> Option<([f64; 3], f64)> {
    let mut idx: Vec<usize> = (0..units.len()).collect();
    if units.len() > EXHAUSTIVE_POLISH_LIMIT {
        idx.sort_by(|&i, &j| angle(y, units[i].0).total_cmp(&angle(y, units[j].0)));
        idx.truncate(64);
    }
    idx.into_iter()
        .map(|i| (units[i].0, angular_objective(units[i].0, units)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn angular_objective(y: [f64; 3], units: &[([f64; 3], f64)]) -> f64 {
    units.iter().map(|(x, w)| w * angle(y, *x)).sum()
}

fn heaviest(units: &[([f64; 3], f64)]) -> [f64; 3] {
    units
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(x, _)| *x)
        .unwrap_or([1.0, 0.0, 0.0])
}

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

fn scale(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n < 1e-12 || !n.is_finite() {
        None
    } else {
        Some(scale(v, 1.0 / n))
    }
}
