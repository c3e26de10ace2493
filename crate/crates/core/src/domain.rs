use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial domain of the problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Ball { center: Vec<f64>, radius: f64, dim: usize },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    FullSpace { dim: usize },
}

/// Distances of a step's endpoints to the boundary face most likely to
/// have been crossed, with the face's unit normal.
#[derive(Clone, Debug)]
pub struct FaceDistances {
    pub start: f64,
    pub end: f64,
    pub normal: Vec<f64>,
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Self {
        Domain::Interval { a, b }
    }

    pub fn unit_interval() -> Self {
        Domain::Interval { a: 0.0, b: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidDomain(format!("interval needs a < b, got ({a}, {b})")));
                }
            }
            Domain::Ball { center, radius, dim } => {
                if *dim == 0 || center.len() != *dim {
                    return Err(Error::InvalidDomain(format!(
                        "ball center has {} coordinates, dim is {dim}",
                        center.len()
                    )));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidDomain(format!("ball radius must be > 0, got {radius}")));
                }
            }
            Domain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidDomain("box corners must have equal nonzero length".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
                    return Err(Error::InvalidDomain("box needs lo < hi componentwise".into()));
                }
            }
            Domain::FullSpace { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidDomain("dimension must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Ball { dim, .. } | Domain::FullSpace { dim } => *dim,
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Domain::FullSpace { .. })
    }

    /// Membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { a, b } => x[0] > *a && x[0] < *b,
            Domain::Ball { center, radius, .. } => {
                let r2: f64 = x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                r2 < radius * radius
            }
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(xi, (l, h))| xi > l && xi < h),
            Domain::FullSpace { .. } => x.iter().all(|v| v.is_finite()),
        }
    }

    /// Membership in the closed domain.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { a, b } => x[0] >= *a && x[0] <= *b,
            Domain::Ball { center, radius, .. } => {
                let r2: f64 = x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                r2 <= radius * radius
            }
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(xi, (l, h))| xi >= l && xi <= h),
            Domain::FullSpace { .. } => x.iter().all(|v| v.is_finite()),
        }
    }

    /// Axis-aligned bounding box of a bounded domain.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Domain::Interval { a, b } => Some((vec![*a], vec![*b])),
            Domain::Ball { center, radius, .. } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            Domain::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            Domain::FullSpace { .. } => None,
        }
    }

    /// Distance to the boundary (infinite for the full space).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Interval { a, b } => (x[0] - a).min(b - x[0]),
            Domain::Ball { center, radius, .. } => {
                let r: f64 = x.iter().zip(center).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum::<f64>().sqrt();
                radius - r
            }
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xi, (l, h))| (xi - l).min(h - xi))
                .fold(f64::INFINITY, f64::min),
            Domain::FullSpace { .. } => f64::INFINITY,
        }
    }

    /// Face of the boundary minimising `d(start)·d(end)` for a step that
    /// stayed inside; `None` for the full space.
    pub fn nearest_face(&self, start: &[f64], end: &[f64]) -> Option<FaceDistances> {
        match self {
            Domain::Interval { a, b } => {
                let (la, lb) = ((start[0] - a) * (end[0] - a), (b - start[0]) * (b - end[0]));
                Some(if la <= lb {
                    FaceDistances { start: start[0] - a, end: end[0] - a, normal: vec![-1.0] }
                } else {
                    FaceDistances { start: b - start[0], end: b - end[0], normal: vec![1.0] }
                })
            }
            Domain::Box { lo, hi } => {
                let d = lo.len();
                let mut best: Option<(f64, FaceDistances)> = None;
                for k in 0..d {
                    for (sign, s0, s1) in [
                        (-1.0, start[k] - lo[k], end[k] - lo[k]),
                        (1.0, hi[k] - start[k], hi[k] - end[k]),
                    ] {
                        let prod = s0 * s1;
                        if best.as_ref().is_none_or(|(p, _)| prod < *p) {
                            let mut normal = vec![0.0; d];
                            normal[k] = sign;
                            best = Some((prod, FaceDistances { start: s0, end: s1, normal }));
                        }
                    }
                }
                best.map(|(_, f)| f)
            }
            Domain::Ball { center, radius, .. } => {
                let r0: f64 = start.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt();
                let r1: f64 = end.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt();
                let normal = if r1 > 0.0 {
                    end.iter().zip(center).map(|(x, c)| (x - c) / r1).collect()
                } else {
                    let mut n = vec![0.0; center.len()];
                    n[0] = 1.0;
                    n
                };
                Some(FaceDistances { start: radius - r0, end: radius - r1, normal })
            }
            Domain::FullSpace { .. } => None,
        }
    }

    /// Lebesgue volume of a bounded domain.
    pub fn volume(&self) -> Option<f64> {
        match self {
            Domain::Interval { a, b } => Some(b - a),
            Domain::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(l, h)| h - l).product()),
            Domain::Ball { radius, dim, .. } => {
                let d = *dim as f64;
                let unit = std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0);
                Some(unit * radius.powf(d))
            }
            Domain::FullSpace { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rejects_degenerate_domains() {
        assert!(Domain::interval(1.0, 0.0).validate().is_err());
        assert!(Domain::Ball { center: vec![0.0], radius: 0.0, dim: 1 }.validate().is_err());
        assert!(Domain::Ball { center: vec![0.0, 0.0], radius: 1.0, dim: 1 }.validate().is_err());
        assert!(Domain::Box { lo: vec![0.0, 1.0], hi: vec![1.0, 1.0] }.validate().is_err());
        assert!(Domain::FullSpace { dim: 0 }.validate().is_err());
        assert!(Domain::unit_interval().validate().is_ok());
    }

    #[test]
    fn membership_and_distance() {
        let d = Domain::unit_interval();
        assert!(d.contains(&[0.5]));
        assert!(!d.contains(&[0.0]));
        assert!(d.contains_closed(&[0.0]));
        assert!((d.boundary_distance(&[0.2]) - 0.2).abs() < 1e-15);
        let ball = Domain::Ball { center: vec![0.0, 0.0], radius: 1.0, dim: 2 };
        assert!(ball.contains(&[0.5, 0.5]));
        assert!(!ball.contains(&[0.8, 0.8]));
        assert!((ball.volume().unwrap() - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn nearest_face_picks_closer_side() {
        let d = Domain::unit_interval();
        let f = d.nearest_face(&[0.9], &[0.95]).unwrap();
        assert_eq!(f.normal, vec![1.0]);
        assert!((f.end - 0.05).abs() < 1e-12);
        let b = Domain::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] };
        let f = b.nearest_face(&[0.5, 0.1], &[0.5, 0.05]).unwrap();
        assert_eq!(f.normal, vec![0.0, -1.0]);
    }
}
