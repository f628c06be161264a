//! First principal stress extraction and area-weighted slice statistics.
//!
//! Conventions:
//! - quantiles use the weighted lower-edge inverse CDF, `Q(q) = min { v : F(v) >= q }`,
//!   so two equal-area values 10 and 100 give `Q(0.8) = 100` and `Q(0.5) = 10`;
//! - area fractions count strictly greater values, `A(sigma_1 > tau) / A`.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::fe::SolveState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StressError {
    #[error("stress tensor is not symmetric (asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error("state did not converge")]
    UnconvergedState,
    #[error("empty input")]
    EmptyInput,
}

/// Eigenvalues of a symmetric 3x3 tensor, sorted descending.
pub fn principal_stresses(sigma: &Matrix3<f64>) -> Result<[f64; 3], StressError> {
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-9 * scale.max(1.0) {
        return Err(StressError::NonSymmetric(asym));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// A scalar field sample with its integration weight (area).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedValue {
    pub value: f64,
    pub weight: f64,
}

/// Weighted lower-edge quantile.
pub fn weighted_quantile(samples: &[WeightedValue], q: f64) -> Result<f64, StressError> {
    let mut v: Vec<WeightedValue> = samples.iter().copied().filter(|s| s.weight > 0.0).collect();
    if v.is_empty() {
        return Err(StressError::EmptyInput);
    }
    v.sort_by(|a, b| a.value.total_cmp(&b.value));
    let total: f64 = v.iter().map(|s| s.weight).sum();
    let target = q.clamp(0.0, 1.0) * total;
    let mut cum = 0.0;
    for s in &v {
        cum += s.weight;
        if cum >= target {
            return Ok(s.value);
        }
    }
    Ok(v[v.len() - 1].value)
}

/// Area fraction with value strictly above `tau`.
pub fn fraction_above(samples: &[WeightedValue], tau: f64) -> f64 {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if total <= 0.0 {
        return 0.0;
    }
    samples
        .iter()
        .filter(|s| s.value > tau)
        .map(|s| s.weight)
        .sum::<f64>()
        / total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceStressSummary {
    pub slice_index: usize,
    pub mean_p1: f64,
    pub p95_p1: f64,
    /// `(threshold kPa, fraction)` in ascending threshold order.
    pub area_fraction_above: Vec<(f64, f64)>,
    pub total_area: f64,
}

impl SliceStressSummary {
    /// Stored fraction for `tau`, matched within 1e-9 kPa.
    pub fn fraction_above(&self, tau: f64) -> f64 {
        self.area_fraction_above
            .iter()
            .find(|(t, _)| (t - tau).abs() < 1e-9)
            .map(|&(_, f)| f)
            .unwrap_or_else(|| panic!("threshold {tau} kPa not present in slice summary"))
    }
}

/// Aggregates a weighted first-principal-stress field.
pub fn summarize_field(slice_index: usize, field: &[WeightedValue], thresholds: &[f64]) -> Result<SliceStressSummary, StressError> {
    let total: f64 = field.iter().map(|s| s.weight).sum();
    if field.is_empty() || !(total > 0.0) {
        return Err(StressError::EmptyInput);
    }
    let mean = field.iter().map(|s| s.value * s.weight).sum::<f64>() / total;
    let p95 = weighted_quantile(field, 0.95)?;
    let mut th: Vec<f64> = thresholds.to_vec();
    th.sort_by(f64::total_cmp);
    let area_fraction_above = th.iter().map(|&t| (t, fraction_above(field, t))).collect();
    Ok(SliceStressSummary {
        slice_index,
        mean_p1: mean,
        p95_p1: p95,
        area_fraction_above,
        total_area: total,
    })
}

/// First principal stress at every quadrature point of the elements accepted
/// by `filter`, weighted by the deformed quadrature area.
pub fn principal_field(state: &SolveState, filter: impl Fn(usize) -> bool) -> Result<Vec<WeightedValue>, StressError> {
    if !state.converged {
        return Err(StressError::UnconvergedState);
    }
    state
        .quad
        .iter()
        .filter(|q| filter(q.element))
        .map(|q| {
            Ok(WeightedValue {
                value: principal_stresses(&q.cauchy)?[0],
                weight: q.area,
            })
        })
        .collect()
}

/// Per-slice summary over the elements accepted by `filter`.
pub fn slice_summary(
    slice_index: usize,
    state: &SolveState,
    thresholds: &[f64],
    filter: impl Fn(usize) -> bool,
) -> Result<SliceStressSummary, StressError> {
    let field = principal_field(state, filter)?;
    summarize_field(slice_index, &field, thresholds)
}

/// Area-weighted quantiles of the pooled fields of all slices.
pub fn global_percentile_thresholds(fields: &[Vec<WeightedValue>], quantiles: &[f64]) -> Result<Vec<f64>, StressError> {
    let pooled: Vec<WeightedValue> = fields.iter().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(StressError::EmptyInput);
    }
    quantiles.iter().map(|&q| weighted_quantile(&pooled, q)).collect()
}

/// Stress map band for a value given the two global thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StressBand {
    None,
    Light,
    Dark,
}

pub fn band_of(value: f64, light: f64, dark: f64) -> StressBand {
    if value >= dark {
        StressBand::Dark
    } else if value >= light {
        StressBand::Light
    } else {
        StressBand::None
    }
}
