//! One-dimensional interval arithmetic on temporal segments.
//!
//! Segments are usually normalized to the `[0, 1]` video timeline, but IOU
//! and gIOU are scale invariant, so the same functions serve segments
//! expressed in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid segment [{start}, {end}]: start must not exceed end and both must be finite")]
    InvalidSegment { start: f64, end: f64 },
    #[error("segment [{start}, {end}] lies outside the normalized timeline [0, 1]")]
    OutOfRange { start: f64, end: f64 },
}

/// A closed interval `[start, end]` on the video timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment<T = f64> {
    pub start: T,
    pub end: T,
}

/// Center / length parameterization of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterLength<T = f64> {
    pub center: T,
    pub length: T,
}

impl<T: Scalar> Segment<T> {
    /// Any finite interval with `start <= end`.
    pub fn new(start: T, end: T) -> Result<Self, GeometryError> {
        let seg = Self { start, end };
        seg.validate()?;
        Ok(seg)
    }

    /// An interval inside `[0, 1]`.
    pub fn normalized(start: T, end: T) -> Result<Self, GeometryError> {
        let seg = Self::new(start, end)?;
        if start < T::zero() || end > T::one() {
            return Err(GeometryError::OutOfRange {
                start: start.as_f64(),
                end: end.as_f64(),
            });
        }
        Ok(seg)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.start.is_finite() || !self.end.is_finite() || self.start > self.end {
            return Err(GeometryError::InvalidSegment {
                start: self.start.as_f64(),
                end: self.end.as_f64(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn length(&self) -> T {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> T {
        (self.start + self.end) * lit(0.5)
    }

    pub fn to_center_length(&self) -> CenterLength<T> {
        CenterLength {
            center: self.center(),
            length: self.length(),
        }
    }

    /// Multiplies both endpoints, e.g. to convert normalized time to seconds.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            start: self.start * factor,
            end: self.end * factor,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Segment<U> {
        Segment {
            start: U::from_f64_lossy(self.start.as_f64()),
            end: U::from_f64_lossy(self.end.as_f64()),
        }
    }
}

/// Converts center/length to start/end, clamping both endpoints into `[0, 1]`.
pub fn segment_from_center_length<T: Scalar>(c: CenterLength<T>) -> Segment<T> {
    let half = c.length * lit(0.5);
    let start = clamp01(c.center - half);
    let end = clamp01(c.center + half);
    // A negative length can only come from a malformed caller; collapse it.
    if start > end {
        let mid = clamp01(c.center);
        return Segment { start: mid, end: mid };
    }
    Segment { start, end }
}

#[inline]
fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

#[inline]
fn intersection<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> T {
    (a.end.min(b.end) - a.start.max(b.start)).max(T::zero())
}

/// Intersection over union. Two identical zero-length segments have IOU 1;
/// any other pair with zero union has IOU 0.
pub fn iou<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> Result<T, GeometryError> {
    a.validate()?;
    b.validate()?;
    Ok(iou_unchecked(a, b))
}

pub(crate) fn iou_unchecked<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> T {
    let inter = intersection(a, b);
    let union = a.length() + b.length() - inter;
    if union <= T::zero() {
        return if a.start == b.start && a.end == b.end {
            T::one()
        } else {
            T::zero()
        };
    }
    inter / union
}

/// Generalized IOU: `iou - (|hull| - |union|) / |hull|`.
pub fn giou<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> Result<T, GeometryError> {
    a.validate()?;
    b.validate()?;
    Ok(giou_unchecked(a, b))
}

pub(crate) fn giou_unchecked<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> T {
    giou_with_grad(a, b).0
}

/// gIOU together with its gradient with respect to
/// `[a.start, a.end, b.start, b.end]`.
///
/// At ties (equal endpoints, exact touching) the subgradient treats the pair
/// as overlapping with zero measure and attributes shared extrema to `a`.
pub fn giou_with_grad<T: Scalar>(a: &Segment<T>, b: &Segment<T>) -> (T, [T; 4]) {
    let zero = T::zero();
    let one = T::one();
    let iou = iou_unchecked(a, b);

    let raw_inter = a.end.min(b.end) - a.start.max(b.start);
    let inter = raw_inter.max(zero);
    let union = a.length() + b.length() - inter;
    let hull = a.end.max(b.end) - a.start.min(b.start);
    if hull <= zero {
        // Both segments are the same point.
        return (iou, [zero; 4]);
    }
    if union <= zero {
        return (iou - one, [zero; 4]);
    }

    // d(inter) / d[as, ae, bs, be]
    let mut d_inter = [zero; 4];
    if raw_inter >= zero {
        if a.end <= b.end {
            d_inter[1] = one;
        } else {
            d_inter[3] = one;
        }
        if a.start >= b.start {
            d_inter[0] = -one;
        } else {
            d_inter[2] = -one;
        }
    }
    let d_len = [-one, one, -one, one];
    let mut d_hull = [zero; 4];
    if a.end >= b.end {
        d_hull[1] = one;
    } else {
        d_hull[3] = one;
    }
    if a.start <= b.start {
        d_hull[0] = -one;
    } else {
        d_hull[2] = -one;
    }

    let value = inter / union + union / hull - one;
    let mut grad = [zero; 4];
    for i in 0..4 {
        let d_union = d_len[i] - d_inter[i];
        let d_iou = (d_inter[i] * union - inter * d_union) / (union * union);
        let d_ratio = (d_union * hull - union * d_hull[i]) / (hull * hull);
        grad[i] = d_iou + d_ratio;
    }
    (value, grad)
}
