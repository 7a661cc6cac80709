//! Shrinkage operators applied at every unrolled layer.
//!
//! `support_select_threshold` passes the `p` largest-magnitude entries that
//! exceed `theta` through unchanged, zeroes everything inside `[-theta,
//! theta]` and soft-thresholds the rest. `p = 0` is soft thresholding and
//! `p = n` is hard thresholding.

use std::cmp::Ordering;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    pub theta: f64,
    pub p: usize,
}

impl ThresholdSpec {
    pub fn new(theta: f64, p: usize, n: usize) -> Result<Self> {
        if !(theta >= 0.0) {
            return Err(Error::config(format!("theta must be nonnegative, got {theta}")));
        }
        if p > n {
            return Err(Error::config(format!("p = {p} exceeds vector length {n}")));
        }
        Ok(ThresholdSpec { theta, p })
    }
}

#[inline]
fn shrink(v: f64, theta: f64) -> f64 {
    if v > theta {
        v - theta
    } else if v < -theta {
        v + theta
    } else {
        0.0
    }
}

/// `sign(v)·max(0, |v| − θ)` entrywise.
pub fn soft_threshold(v: &DVector<f64>, theta: f64) -> DVector<f64> {
    v.map(|x| shrink(x, theta))
}

pub fn hard_threshold(v: &DVector<f64>, theta: f64) -> DVector<f64> {
    v.map(|x| if x.abs() > theta { x } else { 0.0 })
}

/// Orders indices by decreasing magnitude, lower index first on ties.
fn magnitude_order(v: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j))
}

/// Indices of the `p` largest-magnitude entries, returned in ascending index
/// order. Ties are broken towards the lower index.
pub fn top_p_support(v: &[f64], p: usize) -> Vec<usize> {
    let p = p.min(v.len());
    if p == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    let order = magnitude_order(v);
    if p < idx.len() {
        idx.select_nth_unstable_by(p - 1, &order);
        idx.truncate(p);
    }
    idx.sort_unstable();
    idx
}

/// In-place support-selection thresholding on a raw slice.
pub fn support_select_threshold_in_place(v: &mut [f64], spec: ThresholdSpec) {
    let theta = spec.theta;
    if spec.p == 0 {
        v.iter_mut().for_each(|x| *x = shrink(*x, theta));
        return;
    }
    if spec.p >= v.len() {
        v.iter_mut().for_each(|x| {
            if x.abs() <= theta {
                *x = 0.0
            }
        });
        return;
    }
    let selected = top_p_support(v, spec.p);
    let mut next = selected.iter().peekable();
    for (i, x) in v.iter_mut().enumerate() {
        let keep = next.peek() == Some(&&i);
        if keep {
            next.next();
        }
        if x.abs() <= theta {
            *x = 0.0;
        } else if !keep {
            *x = shrink(*x, theta);
        }
    }
}

pub fn support_select_threshold(v: &DVector<f64>, spec: ThresholdSpec) -> DVector<f64> {
    let mut out = v.clone();
    support_select_threshold_in_place(out.as_mut_slice(), spec);
    out
}
