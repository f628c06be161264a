//! CSV report writers. Numbers use the shortest round-trip form and missing
//! values are empty cells.

use std::io::Write;

use thiserror::Error;

use crate::fe::SolveState;
use crate::gmm::{MixtureModel, PlaqueComponent};
use crate::mesh::{self, CrossSectionMesh};
use crate::isr::CorrelationReport;
use crate::simulate::ScenarioResult;
use crate::stress::{self, SliceStressSummary, StressError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{file}: {reason}")]
    Malformed { file: String, reason: String },
    #[error(transparent)]
    Stress(#[from] StressError),
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn tau_column(tau: f64) -> String {
    format!("frac_above_{tau}")
}

/// One row per slice: mean, p95, total area and one fraction per threshold.
pub fn write_summary_csv<W: Write>(w: W, summaries: &[SliceStressSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let taus: Vec<f64> = summaries
        .first()
        .map(|s| s.area_fraction_above.iter().map(|&(t, _)| t).collect())
        .unwrap_or_default();
    let mut header = vec!["slice".to_string(), "mean_p1".into(), "p95_p1".into(), "total_area".into()];
    header.extend(taus.iter().map(|&t| tau_column(t)));
    out.write_record(&header)?;
    for s in summaries {
        let mut row = vec![s.slice_index.to_string(), s.mean_p1.to_string(), s.p95_p1.to_string(), s.total_area.to_string()];
        row.extend(s.area_fraction_above.iter().map(|&(_, f)| f.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn malformed(file: &str, reason: impl Into<String>) -> ReportError {
    ReportError::Malformed {
        file: file.into(),
        reason: reason.into(),
    }
}

/// Reads a table written by [`write_summary_csv`].
pub fn read_summary_csv(name: &str, text: &str) -> Result<Vec<SliceStressSummary>, ReportError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let fixed = ["slice", "mean_p1", "p95_p1", "total_area"];
    if header.len() < 4 || header.iter().take(4).ne(fixed) {
        return Err(malformed(name, format!("expected leading columns {}", fixed.join(","))));
    }
    let taus = header
        .iter()
        .skip(4)
        .map(|h| {
            h.strip_prefix("frac_above_")
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| malformed(name, format!("bad column `{h}`")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, ReportError> {
            rec.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| malformed(name, format!("row {}: column {} is not a number", i + 1, k + 1)))
        };
        let slice_index = rec
            .get(0)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| malformed(name, format!("row {}: bad slice index", i + 1)))?;
        let mut fr = Vec::with_capacity(taus.len());
        for (k, &t) in taus.iter().enumerate() {
            fr.push((t, num(4 + k)?));
        }
        out.push(SliceStressSummary {
            slice_index,
            mean_p1: num(1)?,
            p95_p1: num(2)?,
            total_area: num(3)?,
            area_fraction_above: fr,
        });
    }
    Ok(out)
}

/// First principal stress of one quadrature point at both snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub element: usize,
    pub material: String,
    pub intima: bool,
    pub calcified: bool,
    pub area_max: f64,
    pub sigma1_max: f64,
    pub area_residual: f64,
    pub sigma1_residual: f64,
}

const FIELD_COLUMNS: [&str; 8] = [
    "element",
    "material",
    "intima",
    "calcified",
    "area_max",
    "sigma1_max",
    "area_residual",
    "sigma1_residual",
];

/// Quadrature-point stress dump of one simulated slice.
pub fn write_field_csv<W: Write>(w: W, mesh: &CrossSectionMesh, at_max: &SolveState, residual: &SolveState) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(FIELD_COLUMNS)?;
    for (a, b) in at_max.quad.iter().zip(&residual.quad) {
        let e = a.element;
        out.write_record([
            e.to_string(),
            mesh::material_name(mesh.element_material[e]).to_string(),
            u8::from(mesh.is_intima(e)).to_string(),
            u8::from(mesh.is_calcified(e)).to_string(),
            a.area.to_string(),
            stress::principal_stresses(&a.cauchy)?[0].to_string(),
            b.area.to_string(),
            stress::principal_stresses(&b.cauchy)?[0].to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_field_csv(name: &str, text: &str) -> Result<Vec<FieldRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    if rdr.headers()?.iter().ne(FIELD_COLUMNS) {
        return Err(malformed(name, format!("expected columns {}", FIELD_COLUMNS.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |k: usize| malformed(name, format!("row {}: bad {}", i + 1, FIELD_COLUMNS[k]));
        let f = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(k));
        let flag = |k: usize| match &rec[k] {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(k)),
        };
        if rec.len() != FIELD_COLUMNS.len() {
            return Err(malformed(name, format!("row {}: expected {} fields", i + 1, FIELD_COLUMNS.len())));
        }
        out.push(FieldRow {
            element: rec[0].parse().map_err(|_| bad(0))?,
            material: rec[1].to_string(),
            intima: flag(2)?,
            calcified: flag(3)?,
            area_max: f(4)?,
            sigma1_max: f(5)?,
            area_residual: f(6)?,
            sigma1_residual: f(7)?,
        });
    }
    Ok(out)
}

/// Threshold sweep: `tau,r` plus the mean and p95 correlations as rows.
pub fn write_sweep_csv<W: Write>(w: W, report: &CorrelationReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["statistic", "tau", "r"])?;
    out.write_record(["mean", "", &opt(report.r_mean)])?;
    out.write_record(["p95", "", &opt(report.r_p95)])?;
    for &(tau, r) in &report.sweep {
        out.write_record(["frac_above", &tau.to_string(), &opt(r)])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-slice table of the correlation report.
pub fn write_correlation_table_csv<W: Write>(w: W, report: &CorrelationReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["slice".to_string(), "restenosis_percent".into(), "mean_p1".into(), "p95_p1".into()];
    header.extend(report.sweep.iter().map(|&(t, _)| tau_column(t)));
    out.write_record(&header)?;
    for r in &report.rows {
        let mut row = vec![r.slice_index.to_string(), r.restenosis.to_string(), r.mean_p1.to_string(), r.p95_p1.to_string()];
        row.extend(r.fractions.iter().map(|f| f.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_gmm_model_csv<W: Write>(w: W, model: &MixtureModel) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["component", "mean", "variance", "sd", "weight"])?;
    for c in PlaqueComponent::ALL {
        let g = model.components[c.index()];
        out.write_record([c.name(), &g.mean.to_string(), &g.variance.to_string(), &g.variance.sqrt().to_string(), &g.weight.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// HU histogram of the samples with the fitted mixture density per bin.
pub fn write_histogram_csv<W: Write>(w: W, samples: &[f64], model: &MixtureModel, bin_width: f64) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["hu_lo".to_string(), "hu_hi".into(), "count".into(), "density".into(), "model_density".into()];
    header.extend(PlaqueComponent::ALL.iter().map(|c| format!("density_{}", c.name())));
    out.write_record(&header)?;
    if samples.is_empty() {
        out.flush()?;
        return Ok(());
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = (lo / bin_width).floor() as i64;
    let n_bins = ((hi / bin_width).floor() as i64 - start + 1).max(1) as usize;
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        let b = ((x / bin_width).floor() as i64 - start) as usize;
        counts[b.min(n_bins - 1)] += 1;
    }
    let total = samples.len() as f64;
    for (b, &c) in counts.iter().enumerate() {
        let a = (start + b as i64) as f64 * bin_width;
        let mid = a + bin_width / 2.0;
        let mut row = vec![
            a.to_string(),
            (a + bin_width).to_string(),
            c.to_string(),
            (c as f64 / (total * bin_width)).to_string(),
            model.density(mid).to_string(),
        ];
        row.extend(PlaqueComponent::ALL.iter().map(|&k| model.component_density(k, mid).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Ordered morphology scenario table.
pub fn write_scenarios_csv<W: Write>(w: W, results: &[ScenarioResult]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["scenario", "p95_residual", "mean_residual", "p95_at_max", "mean_behind_block", "elements"])?;
    for r in results {
        out.write_record([
            r.scenario.clone(),
            r.p95_residual.to_string(),
            r.mean_residual.to_string(),
            r.p95_at_max.to_string(),
            r.mean_behind_block.to_string(),
            r.element_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
