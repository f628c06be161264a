//! Restenosis quantification and stress/restenosis correlation.

use serde::Serialize;
use thiserror::Error;

use crate::config::{IsrConfig, Pooling};
use crate::stress::SliceStressSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsrError {
    #[error("reference diameter at index {0} is zero or missing")]
    ZeroReference(usize),
    #[error("missing {field} diameter at slice {index}")]
    MissingDiameter { field: &'static str, index: usize },
    #[error("input is constant; correlation undefined")]
    ConstantInput,
    #[error("length mismatch: {0} vs {1} (need equal lengths >= 3)")]
    LengthMismatch(usize, usize),
    #[error("empty threshold grid")]
    EmptyGrid,
}

/// Diameters sampled along the centerline. Missing values are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileSample {
    pub s: f64,
    pub d_pre: Option<f64>,
    pub d_post: Option<f64>,
    pub d_followup: Option<f64>,
    pub in_stent: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CenterlineProfile {
    pub samples: Vec<ProfileSample>,
}

/// Uniformly rescales `raw` so that `raw[reference_index]` equals
/// `reference_diameter`.
pub fn rescale_diameters(raw: &[f64], reference_index: usize, reference_diameter: f64) -> Result<Vec<f64>, IsrError> {
    let r = *raw.get(reference_index).ok_or(IsrError::ZeroReference(reference_index))?;
    if !(r > 0.0) || !(reference_diameter > 0.0) {
        return Err(IsrError::ZeroReference(reference_index));
    }
    let scale = reference_diameter / r;
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, &d)| if i == reference_index { reference_diameter } else { d * scale })
        .collect())
}

/// Rescales each diameter series of the profile to the same physical
/// reference diameter at `reference_index`. Series lacking a value there are
/// left untouched.
pub fn rescale_profile(profile: &CenterlineProfile, reference_index: usize, reference_diameter: f64) -> Result<CenterlineProfile, IsrError> {
    let sample = profile
        .samples
        .get(reference_index)
        .ok_or(IsrError::ZeroReference(reference_index))?;
    if !(reference_diameter > 0.0) {
        return Err(IsrError::ZeroReference(reference_index));
    }
    let factor = |d: Option<f64>| -> Result<Option<f64>, IsrError> {
        match d {
            Some(v) if v > 0.0 => Ok(Some(reference_diameter / v)),
            Some(_) => Err(IsrError::ZeroReference(reference_index)),
            None => Ok(None),
        }
    };
    let (fp, fq, ff) = (factor(sample.d_pre)?, factor(sample.d_post)?, factor(sample.d_followup)?);
    let apply = |d: Option<f64>, f: Option<f64>| match (d, f) {
        (Some(d), Some(f)) => Some(d * f),
        (d, None) => d,
        (None, _) => None,
    };
    let samples = profile
        .samples
        .iter()
        .map(|s| ProfileSample {
            d_pre: apply(s.d_pre, fp),
            d_post: apply(s.d_post, fq),
            d_followup: apply(s.d_followup, ff),
            ..*s
        })
        .collect();
    Ok(CenterlineProfile { samples })
}

/// `100 (1 - d_followup / d_post)`, clamped below at 0 so lumen gain reads as
/// no restenosis.
pub fn restenosis_of(d_post: f64, d_followup: f64) -> f64 {
    (100.0 * (1.0 - d_followup / d_post)).max(0.0)
}

/// Per-slice restenosis for in-stent slices; `None` outside the stent.
pub fn restenosis_percent(profile: &CenterlineProfile) -> Result<Vec<Option<f64>>, IsrError> {
    profile
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.in_stent {
                return Ok(None);
            }
            let post = s.d_post.ok_or(IsrError::MissingDiameter {
                field: "d_post",
                index: i,
            })?;
            let fu = s.d_followup.ok_or(IsrError::MissingDiameter {
                field: "d_followup",
                index: i,
            })?;
            Ok(Some(restenosis_of(post, fu)))
        })
        .collect()
}

/// Like [`restenosis_percent`], but records slices with missing diameters
/// instead of failing. Returns `(values, skipped slice indices)`.
pub fn restenosis_lenient(profile: &CenterlineProfile) -> (Vec<Option<f64>>, Vec<usize>) {
    let mut skipped = Vec::new();
    let vals = profile
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if !s.in_stent {
                return None;
            }
            match (s.d_post, s.d_followup) {
                (Some(p), Some(f)) if p > 0.0 => Some(restenosis_of(p, f)),
                _ => {
                    skipped.push(i);
                    None
                }
            }
        })
        .collect();
    (vals, skipped)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, IsrError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(IsrError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // relative guard: a column equal up to rounding is constant
    let scale = |m: f64, v: &[f64]| v.iter().map(|a| a.abs()).fold(m.abs(), f64::max);
    if sxx <= (1e-14 * scale(mx, x)).powi(2) * n || syy <= (1e-14 * scale(my, y)).powi(2) * n {
        return Err(IsrError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Default sweep grid: 5 to 100 kPa in 5 kPa steps.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=20).map(|k| 5.0 * k as f64).collect()
}

/// One table row of the correlation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub slice_index: usize,
    pub restenosis: f64,
    pub mean_p1: f64,
    pub p95_p1: f64,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub r_mean: Option<f64>,
    pub r_p95: Option<f64>,
    /// `(tau, r_tau)`; `None` when the fraction column is constant.
    pub sweep: Vec<(f64, Option<f64>)>,
    pub argmax_tau: Option<f64>,
    pub n_points: usize,
    pub rows: Vec<CorrelationRow>,
}

fn optional(r: Result<f64, IsrError>) -> Result<Option<f64>, IsrError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(IsrError::ConstantInput) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Pearson sweep of area-fraction-above-threshold against restenosis.
///
/// `summaries` and `restenosis` are paired per slice; pass only in-stent
/// slices. Every `tau` in the grid must be present in each summary's
/// threshold list.
pub fn threshold_sweep(summaries: &[SliceStressSummary], restenosis: &[f64], tau_grid: &[f64]) -> Result<CorrelationReport, IsrError> {
    if tau_grid.is_empty() {
        return Err(IsrError::EmptyGrid);
    }
    if summaries.len() != restenosis.len() || summaries.len() < 3 {
        return Err(IsrError::LengthMismatch(summaries.len(), restenosis.len()));
    }
    let means: Vec<f64> = summaries.iter().map(|s| s.mean_p1).collect();
    let p95s: Vec<f64> = summaries.iter().map(|s| s.p95_p1).collect();
    let r_mean = optional(pearson(&means, restenosis))?;
    let r_p95 = optional(pearson(&p95s, restenosis))?;
    let mut sweep = Vec::with_capacity(tau_grid.len());
    let columns: Vec<Vec<f64>> = tau_grid
        .iter()
        .map(|&t| summaries.iter().map(|s| s.fraction_above(t)).collect())
        .collect();
    for (&tau, col) in tau_grid.iter().zip(&columns) {
        sweep.push((tau, optional(pearson(col, restenosis))?));
    }
    let mut argmax: Option<(f64, f64)> = None;
    for &(tau, r) in &sweep {
        if let Some(r) = r {
            // strict comparison keeps the lowest tau on ties
            if argmax.map_or(true, |(_, best)| r > best) {
                argmax = Some((tau, r));
            }
        }
    }
    let rows = summaries
        .iter()
        .zip(restenosis)
        .enumerate()
        .map(|(i, (s, &r))| CorrelationRow {
            slice_index: s.slice_index,
            restenosis: r,
            mean_p1: s.mean_p1,
            p95_p1: s.p95_p1,
            fractions: columns.iter().map(|c| c[i]).collect(),
        })
        .collect();
    Ok(CorrelationReport {
        r_mean,
        r_p95,
        sweep,
        argmax_tau: argmax.map(|(t, _)| t),
        n_points: summaries.len(),
        rows,
    })
}

/// Z-scores a column in place (population standard deviation). Constant
/// columns are centered only.
pub fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x -= m;
        if sd > 0.0 {
            *x /= sd;
        }
    }
}

/// Stress summaries and diameter profile of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInput {
    pub summaries: Vec<SliceStressSummary>,
    pub profile: CenterlineProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledCorrelation {
    pub report: CorrelationReport,
    /// `(case, slice)` of in-stent slices left out for missing diameters or a
    /// missing stress summary.
    pub skipped: Vec<(usize, usize)>,
}

/// Restenosis/stress pairs of every in-stent slice of every case, pooled raw
/// or after per-case standardization of each column, then swept.
pub fn correlate_cases(cases: &[CaseInput], cfg: &IsrConfig) -> Result<PooledCorrelation, IsrError> {
    let grid = cfg.tau_grid();
    let mut pooled_summaries = Vec::new();
    let mut pooled_restenosis = Vec::new();
    let mut skipped = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let profile = if cfg.reference_diameter > 0.0 {
            rescale_profile(&case.profile, cfg.reference_index, cfg.reference_diameter)?
        } else {
            case.profile.clone()
        };
        let (values, missing) = restenosis_lenient(&profile);
        skipped.extend(missing.into_iter().map(|s| (ci, s)));
        let mut sums = Vec::new();
        let mut rest = Vec::new();
        for (slice, v) in values.iter().enumerate() {
            let Some(v) = *v else { continue };
            match case.summaries.iter().find(|s| s.slice_index == slice) {
                Some(s) => {
                    sums.push(s.clone());
                    rest.push(v);
                }
                None => skipped.push((ci, slice)),
            }
        }
        if cfg.pooling == Pooling::Normalized && !sums.is_empty() {
            standardize(&mut rest);
            let mut means: Vec<f64> = sums.iter().map(|s| s.mean_p1).collect();
            let mut p95s: Vec<f64> = sums.iter().map(|s| s.p95_p1).collect();
            standardize(&mut means);
            standardize(&mut p95s);
            for &tau in &grid {
                let mut col: Vec<f64> = sums.iter().map(|s| s.fraction_above(tau)).collect();
                standardize(&mut col);
                for (s, v) in sums.iter_mut().zip(col) {
                    if let Some(e) = s.area_fraction_above.iter_mut().find(|(t, _)| (t - tau).abs() < 1e-9) {
                        e.1 = v;
                    }
                }
            }
            for (s, (m, p)) in sums.iter_mut().zip(means.into_iter().zip(p95s)) {
                s.mean_p1 = m;
                s.p95_p1 = p;
            }
        }
        pooled_summaries.extend(sums);
        pooled_restenosis.extend(rest);
    }
    let report = threshold_sweep(&pooled_summaries, &pooled_restenosis, &grid)?;
    Ok(PooledCorrelation { report, skipped })
}
