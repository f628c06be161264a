//! Stage implementations behind the subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use vascmech::case_io::{self, CaseBundle};
use vascmech::config::{LayerFilter, RunConfig};
use vascmech::fe::ProgramResult;
use vascmech::geometry::Vec2;
use vascmech::gmm::{self, MixtureModel, PlaqueComponent};
use vascmech::isr::{self, CaseInput, PooledCorrelation};
use vascmech::mesh::{self, CrossSectionMesh};
use vascmech::plot::{LineChart, Series};
use vascmech::report::{self, FieldRow};
use vascmech::simulate::{self, LameCheck, ScenarioResult, SliceResult};
use vascmech::stress::{self, SliceStressSummary, StressBand, WeightedValue};
use vascmech::synth::{self, SynthCaseParams};

use crate::output::{internal, OutDir};
use crate::{CliError, Command, GlobalArgs, Outcome};

/// HU bin width of the segmentation histogram.
pub const HISTOGRAM_BIN_HU: f64 = 10.0;

pub fn dispatch(cli: &crate::Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth { slices } => cmd_synth(g, *slices),
        Command::Segment { case } => {
            let (bundle, cfg) = load(g, case)?;
            let mut out = OutDir::create(&g.out, "segment")?;
            let seg = segment_stage(&bundle, &cfg, &mut out)?;
            out.finish(g.threads, seg.details())?;
            Ok(Outcome::Success)
        }
        Command::Mesh { case } => {
            let (bundle, cfg) = load(g, case)?;
            let model = fit_model(&bundle, &cfg)?;
            let mut out = OutDir::create(&g.out, "mesh")?;
            let statuses = mesh_stage(&bundle, &model, &cfg, g.threads, &mut out)?;
            let outcome = outcome_of(&statuses);
            out.finish(g.threads, statuses)?;
            Ok(outcome)
        }
        Command::Simulate { case, self_test } => cmd_simulate(g, case.as_deref(), *self_test),
        Command::Analyze { sim_dir } => {
            let cfg = resolve_config(g, Some(read_config(sim_dir)?))?;
            let mut out = OutDir::create(&g.out, "analyze")?;
            let details = analyze_stage(sim_dir, &cfg, &mut out)?;
            out.finish(g.threads, details)?;
            Ok(Outcome::Success)
        }
        Command::Correlate { summaries, profiles } => {
            if summaries.len() != profiles.len() {
                return Err(CliError::Input(format!(
                    "{} --summary files but {} --profiles files",
                    summaries.len(),
                    profiles.len()
                )));
            }
            let cfg = resolve_config(g, None)?;
            let mut cases = Vec::new();
            for (s, p) in summaries.iter().zip(profiles) {
                cases.push(CaseInput {
                    summaries: read_summaries(s)?,
                    profile: case_io::read_profiles(p)?,
                });
            }
            let mut out = OutDir::create(&g.out, "correlate")?;
            let pooled = correlate_stage(&cases, &cfg, &mut out)?;
            out.finish(g.threads, CorrelateDetails::of(&pooled, &cfg))?;
            Ok(Outcome::Success)
        }
        Command::MorphologyStudy => {
            let cfg = resolve_config(g, None)?;
            let mut out = OutDir::create(&g.out, "morphology-study")?;
            let study = morphology_stage(&cfg, &mut out)?;
            out.finish(g.threads, study.orderings)?;
            Ok(Outcome::Success)
        }
        Command::Pipeline { case } => cmd_pipeline(g, case),
    }
}

/// Defaults, then the case (or simulate-output) config, then `--config`,
/// then each `--set`.
pub fn resolve_config(g: &GlobalArgs, base: Option<RunConfig>) -> Result<RunConfig, CliError> {
    let mut cfg = base.unwrap_or_default();
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn read_config(dir: &Path) -> Result<RunConfig, CliError> {
    let path = dir.join(case_io::CONFIG_TXT);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(RunConfig::parse(&text)?)
}

fn load(g: &GlobalArgs, case: &Path) -> Result<(CaseBundle, RunConfig), CliError> {
    let bundle = case_io::load_case_deferred(case)?;
    let cfg = resolve_config(g, Some(bundle.config.clone()))?;
    Ok((bundle, cfg))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// Runs `f` on every slice index in parallel, keeping slice order.
fn per_slice<T: Send>(threads: usize, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>, CliError> {
    Ok(pool(threads)?.install(|| (0..n).into_par_iter().map(f).collect()))
}

fn cmd_synth(g: &GlobalArgs, slices: usize) -> Result<Outcome, CliError> {
    if slices == 0 {
        return Err(CliError::Input("--slices must be at least 1".into()));
    }
    let cfg = resolve_config(g, None)?;
    let params = SynthCaseParams {
        n_slices: slices,
        seed: g.seed,
        ..SynthCaseParams::default()
    };
    let mut case = synth::synth_case(&params);
    case.bundle.config = cfg;
    let mut out = OutDir::create(&g.out, "synth")?;
    case_io::save_case(&case.bundle, &out.root).map_err(|e| CliError::Internal(e.to_string()))?;
    out.write("truth_labels.raw", &case.truth)?;
    #[derive(Serialize)]
    struct Details {
        slices: usize,
        seed: u64,
    }
    out.finish(g.threads, Details { slices, seed: g.seed })?;
    Ok(Outcome::Success)
}

pub fn fit_model(bundle: &CaseBundle, cfg: &RunConfig) -> Result<MixtureModel, CliError> {
    let samples = gmm::masked_samples(bundle);
    gmm::fit(&samples, &cfg.gmm).map_err(|e| CliError::Input(format!("segmentation: {e}")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub component: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub weight: f64,
    pub voxels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentSummary {
    pub samples: usize,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub log_likelihood_history: Vec<f64>,
    pub components: Vec<ComponentSummary>,
    pub label_dims: [usize; 3],
    #[serde(skip)]
    pub model: Option<MixtureModel>,
}

impl SegmentSummary {
    fn details(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([("samples", self.samples as f64), ("iterations", self.iterations as f64)])
    }
}

/// Fits the mixture, labels the volume and writes `gmm_model.csv`,
/// `histogram.csv`, `labels.raw` and `segment.json`.
pub fn segment_stage(bundle: &CaseBundle, cfg: &RunConfig, out: &mut OutDir) -> Result<SegmentSummary, CliError> {
    out.write_config(cfg)?;
    let samples = gmm::masked_samples(bundle);
    let model = out.time("fit", || gmm::fit(&samples, &cfg.gmm)).map_err(|e| CliError::Input(format!("segmentation: {e}")))?;
    let labels = out.time("classify", || gmm::classify_volume(bundle, &model));
    out.write_with("gmm_model.csv", |w| report::write_gmm_model_csv(w, &model))?;
    out.write_with("histogram.csv", |w| report::write_histogram_csv(w, &samples, &model, HISTOGRAM_BIN_HU))?;
    out.write("labels.raw", &labels.labels)?;
    let counts = labels.histogram();
    let summary = SegmentSummary {
        samples: samples.len(),
        iterations: model.iterations,
        log_likelihood: model.log_likelihood,
        log_likelihood_history: model.history.clone(),
        components: PlaqueComponent::ALL
            .iter()
            .map(|&c| {
                let g = model.components[c.index()];
                ComponentSummary {
                    component: c.name(),
                    mean: g.mean,
                    sd: g.variance.sqrt(),
                    weight: g.weight,
                    voxels: counts[c.index()],
                }
            })
            .collect(),
        label_dims: labels.dims,
        model: Some(model),
    };
    out.write_json("segment.json", &summary)?;
    Ok(summary)
}

/// Per-slice completion record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceStatus {
    pub slice: usize,
    pub ok: bool,
    pub elements: usize,
    pub error: Option<String>,
}

fn outcome_of(statuses: &[SliceStatus]) -> Outcome {
    if statuses.iter().all(|s| s.ok) {
        Outcome::Success
    } else {
        Outcome::Partial
    }
}

fn slice_name(slice: usize, suffix: &str) -> String {
    format!("slices/slice_{slice:03}_{suffix}")
}

/// Builds every slice mesh; writes node/element tables, VTK and
/// `mesh_quality.csv`.
pub fn mesh_stage(bundle: &CaseBundle, model: &MixtureModel, cfg: &RunConfig, threads: usize, out: &mut OutDir) -> Result<Vec<SliceStatus>, CliError> {
    out.write_config(cfg)?;
    let meshes = per_slice(threads, bundle.n_slices(), |s| simulate::case_slice_mesh(bundle, s, model, cfg))?;
    let mut table = String::from("slice,status,elements,min_jacobian,max_aspect_ratio,total_area,error\n");
    let mut statuses = Vec::new();
    for (slice, m) in meshes.iter().enumerate() {
        match m {
            Ok(m) => {
                let q = mesh::mesh_quality(m);
                table += &format!(
                    "{slice},ok,{},{},{},{},\n",
                    m.elements.len(),
                    q.min_jacobian,
                    q.max_aspect_ratio,
                    q.total_area
                );
                out.write_with(&slice_name(slice, "nodes.csv"), |w| m.write_nodes_csv(w))?;
                out.write_with(&slice_name(slice, "elements.csv"), |w| m.write_elements_csv(w))?;
                out.write_with(&slice_name(slice, "mesh.vtk"), |w| m.write_vtk(w, None, &[]))?;
                statuses.push(SliceStatus {
                    slice,
                    ok: true,
                    elements: m.elements.len(),
                    error: None,
                });
            }
            Err(e) => {
                table += &format!("{slice},failed,0,,,,{}\n", csv_text(&e.to_string()));
                statuses.push(SliceStatus {
                    slice,
                    ok: false,
                    elements: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    out.write("mesh_quality.csv", table.as_bytes())?;
    Ok(statuses)
}

fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

/// Area-weighted element average of the first principal stress.
fn element_sigma1(n_elements: usize, quad: &[vascmech::fe::QuadState]) -> Result<Vec<f64>, CliError> {
    let mut sum = vec![0.0; n_elements];
    let mut area = vec![0.0; n_elements];
    for q in quad {
        let s1 = stress::principal_stresses(&q.cauchy).map_err(|e| CliError::Internal(e.to_string()))?[0];
        sum[q.element] += s1 * q.area;
        area[q.element] += q.area;
    }
    Ok(sum.iter().zip(&area).map(|(s, a)| if *a > 0.0 { s / a } else { 0.0 }).collect())
}

fn deformed(mesh: &CrossSectionMesh, u: &[f64]) -> Vec<Vec2> {
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(i, p)| Vec2::new(p.x + u[2 * i], p.y + u[2 * i + 1]))
        .collect()
}

/// Per-slice outcome of the simulate stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedSlice {
    pub slice: usize,
    pub ok: bool,
    pub elements: usize,
    pub newton_iterations: usize,
    pub max_penetration: Option<f64>,
    pub p95_at_max: Option<f64>,
    pub p95_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateDetails {
    pub slices: Vec<SimulatedSlice>,
    pub self_test: Option<LameCheck>,
}

type SliceRun = Result<(CrossSectionMesh, ProgramResult, SliceResult), simulate::SimulationError>;

/// Simulates every slice; writes field dumps, deformed VTK, the two summary
/// tables and `slice_status.csv`.
pub fn simulate_stage(bundle: &CaseBundle, model: &MixtureModel, cfg: &RunConfig, threads: usize, out: &mut OutDir) -> Result<Vec<SimulatedSlice>, CliError> {
    out.write_config(cfg)?;
    let runs: Vec<SliceRun> = out.time("slices", || per_slice(threads, bundle.n_slices(), |s| simulate::run_case_slice(bundle, s, model, cfg)))?;
    let mut at_max = Vec::new();
    let mut residual = Vec::new();
    let mut records = Vec::new();
    for (slice, run) in runs.iter().enumerate() {
        match run {
            Ok((mesh, res, summary)) => {
                let ne = mesh.elements.len();
                out.write_with(&slice_name(slice, "field.csv"), |w| {
                    report::write_field_csv(w, mesh, &res.state_max, &res.state_residual)
                })?;
                let s_max = element_sigma1(ne, &res.state_max.quad)?;
                let s_res = element_sigma1(ne, &res.state_residual.quad)?;
                let pts = deformed(mesh, &res.state_residual.u);
                out.write_with(&slice_name(slice, "residual.vtk"), |w| {
                    mesh.write_vtk(w, Some(&pts), &[("sigma1_max", s_max), ("sigma1_residual", s_res)])
                })?;
                at_max.push(summary.at_max.clone());
                residual.push(summary.residual.clone());
                records.push(SimulatedSlice {
                    slice,
                    ok: true,
                    elements: ne,
                    newton_iterations: summary.newton_steps,
                    max_penetration: cfg.solver.stent.then_some(summary.max_penetration),
                    p95_at_max: Some(summary.at_max.p95_p1),
                    p95_residual: Some(summary.residual.p95_p1),
                    error: None,
                });
            }
            Err(e) => records.push(SimulatedSlice {
                slice,
                ok: false,
                elements: 0,
                newton_iterations: 0,
                max_penetration: None,
                p95_at_max: None,
                p95_residual: None,
                error: Some(e.to_string()),
            }),
        }
    }
    out.write_with("summary_max.csv", |w| report::write_summary_csv(w, &at_max))?;
    out.write_with("summary_residual.csv", |w| report::write_summary_csv(w, &residual))?;
    let mut table = String::from("slice,status,elements,newton_iterations,max_penetration,p95_at_max,p95_residual,error\n");
    let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in &records {
        table += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.slice,
            if r.ok { "ok" } else { "failed" },
            r.elements,
            r.newton_iterations,
            o(r.max_penetration),
            o(r.p95_at_max),
            o(r.p95_residual),
            r.error.as_deref().map(csv_text).unwrap_or_default()
        );
    }
    out.write("slice_status.csv", table.as_bytes())?;
    Ok(records)
}

fn self_test(out: &mut OutDir) -> Result<LameCheck, CliError> {
    let check = out
        .time("self_test", simulate::lame_check)
        .map_err(|e| CliError::Internal(format!("self-test: {e}")))?;
    out.write_json("self_test.json", &check)?;
    Ok(check)
}

fn cmd_simulate(g: &GlobalArgs, case: Option<&Path>, run_self_test: bool) -> Result<Outcome, CliError> {
    let case = match case {
        Some(c) => Some(load(g, c)?),
        None if run_self_test => None,
        None => return Err(CliError::Input("simulate needs a CASE directory unless --self-test is given".into())),
    };
    let mut out = OutDir::create(&g.out, "simulate")?;
    let check = if run_self_test { Some(self_test(&mut out)?) } else { None };
    let mut outcome = Outcome::Success;
    let mut slices = Vec::new();
    match &case {
        Some((bundle, cfg)) => {
            let model = out.time("segment", || fit_model(bundle, cfg))?;
            slices = simulate_stage(bundle, &model, cfg, g.threads, &mut out)?;
            if slices.iter().any(|s| !s.ok) {
                outcome = Outcome::Partial;
            }
        }
        None => out.write_config(&resolve_config(g, None)?)?,
    }
    let failed_self_test = check.is_some_and(|c| !c.passed);
    out.finish(g.threads, SimulateDetails { slices, self_test: check })?;
    if failed_self_test {
        return Err(CliError::Internal("Lamé self-test outside tolerance".into()));
    }
    Ok(outcome)
}

/// Slice indices with a field dump under `sim_dir/slices`, ascending.
fn field_files(sim_dir: &Path) -> Result<Vec<(usize, PathBuf)>, CliError> {
    let dir = sim_dir.join("slices");
    let entries = fs::read_dir(&dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Input(e.to_string()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(idx) = name.strip_prefix("slice_").and_then(|n| n.strip_suffix("_field.csv")) {
            if let Ok(i) = idx.parse() {
                out.push((i, path));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Input(format!("no slice field dumps in {}", dir.display())));
    }
    Ok(out)
}

fn keep(row: &FieldRow, layers: LayerFilter) -> bool {
    match layers {
        LayerFilter::All => true,
        LayerFilter::Intima => row.intima,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MapThresholds {
    pub quantiles: [f64; 2],
    pub light: f64,
    pub dark: f64,
    pub elements_light: usize,
    pub elements_dark: usize,
}

/// Recomputes per-slice summaries from the field dumps with the configured
/// layer filter and thresholds; derives global stress-map bands.
pub fn analyze_stage(sim_dir: &Path, cfg: &RunConfig, out: &mut OutDir) -> Result<MapThresholds, CliError> {
    out.write_config(cfg)?;
    let taus = cfg.isr.tau_grid();
    let stress_err = |e: stress::StressError| CliError::Input(e.to_string());
    let mut at_max = Vec::new();
    let mut residual = Vec::new();
    let mut fields = Vec::new();
    let mut rows_per_slice = Vec::new();
    for (slice, path) in field_files(sim_dir)? {
        let text = fs::read_to_string(&path).map_err(internal(&path))?;
        let rows = report::read_field_csv(&path.display().to_string(), &text)?;
        let kept: Vec<&FieldRow> = rows.iter().filter(|r| keep(r, cfg.analysis.layers)).collect();
        let f_max: Vec<WeightedValue> = kept.iter().map(|r| WeightedValue { value: r.sigma1_max, weight: r.area_max }).collect();
        let f_res: Vec<WeightedValue> = kept
            .iter()
            .map(|r| WeightedValue {
                value: r.sigma1_residual,
                weight: r.area_residual,
            })
            .collect();
        at_max.push(stress::summarize_field(slice, &f_max, &taus).map_err(stress_err)?);
        residual.push(stress::summarize_field(slice, &f_res, &taus).map_err(stress_err)?);
        fields.push(f_res);
        rows_per_slice.push((slice, rows));
    }
    out.write_with("summary_max.csv", |w| report::write_summary_csv(w, &at_max))?;
    out.write_with("summary_residual.csv", |w| report::write_summary_csv(w, &residual))?;

    let q = cfg.analysis.map_quantiles;
    let th = stress::global_percentile_thresholds(&fields, &q).map_err(stress_err)?;
    let (light, dark) = (th[0], th[1]);
    let mut bands = String::from("slice,element,sigma1_residual,band\n");
    let (mut n_light, mut n_dark) = (0, 0);
    for (slice, rows) in &rows_per_slice {
        let mut acc: BTreeMap<usize, (f64, f64, bool)> = BTreeMap::new();
        for r in rows {
            let e = acc.entry(r.element).or_insert((0.0, 0.0, keep(r, cfg.analysis.layers)));
            e.0 += r.sigma1_residual * r.area_residual;
            e.1 += r.area_residual;
        }
        for (element, (s, a, kept)) in acc {
            if !kept || a <= 0.0 {
                continue;
            }
            let v = s / a;
            let band = stress::band_of(v, light, dark);
            let name = match band {
                StressBand::None => "none",
                StressBand::Light => {
                    n_light += 1;
                    "light"
                }
                StressBand::Dark => {
                    n_dark += 1;
                    "dark"
                }
            };
            bands += &format!("{slice},{element},{v},{name}\n");
        }
    }
    out.write("stress_bands.csv", bands.as_bytes())?;
    let thresholds = MapThresholds {
        quantiles: q,
        light,
        dark,
        elements_light: n_light,
        elements_dark: n_dark,
    };
    out.write_json("map_thresholds.json", &thresholds)?;
    out.write("stress_profile.svg", stress_profile_chart(&at_max, &residual).to_svg().as_bytes())?;
    Ok(thresholds)
}

fn stress_profile_chart(at_max: &[SliceStressSummary], residual: &[SliceStressSummary]) -> LineChart {
    let pts = |v: &[SliceStressSummary], f: fn(&SliceStressSummary) -> f64| v.iter().map(|s| (s.slice_index as f64, Some(f(s)))).collect();
    LineChart {
        title: "First principal stress per slice".into(),
        x_label: "slice".into(),
        y_label: "sigma1 (kPa)".into(),
        series: vec![
            Series::new("p95 at max", pts(at_max, |s| s.p95_p1)),
            Series::new("p95 residual", pts(residual, |s| s.p95_p1)),
            Series::new("mean residual", pts(residual, |s| s.mean_p1)),
        ],
        y_range: None,
    }
}

fn read_summaries(path: &Path) -> Result<Vec<SliceStressSummary>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(report::read_summary_csv(&path.display().to_string(), &text)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelateDetails {
    pub pooling: &'static str,
    pub n_points: usize,
    pub argmax_tau: Option<f64>,
    pub skipped: usize,
}

impl CorrelateDetails {
    fn of(p: &PooledCorrelation, cfg: &RunConfig) -> Self {
        Self {
            pooling: match cfg.isr.pooling {
                vascmech::config::Pooling::Raw => "raw",
                vascmech::config::Pooling::Normalized => "normalized",
            },
            n_points: p.report.n_points,
            argmax_tau: p.report.argmax_tau,
            skipped: p.skipped.len(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SkippedSlice {
    case: usize,
    slice: usize,
}

#[derive(Debug, Serialize)]
struct CorrelationJson<'a> {
    #[serde(flatten)]
    report: &'a isr::CorrelationReport,
    argmax_r: Option<f64>,
    skipped_slices: Vec<SkippedSlice>,
}

/// Pools the cases, sweeps the thresholds and writes `correlation.json`,
/// `correlation_table.csv`, `sweep.csv` and `correlation.svg`.
pub fn correlate_stage(cases: &[CaseInput], cfg: &RunConfig, out: &mut OutDir) -> Result<PooledCorrelation, CliError> {
    out.write_config(cfg)?;
    let grid = cfg.isr.tau_grid();
    for (ci, case) in cases.iter().enumerate() {
        for s in &case.summaries {
            if let Some(tau) = grid.iter().find(|&&t| !s.area_fraction_above.iter().any(|(x, _)| (x - t).abs() < 1e-9)) {
                return Err(CliError::Input(format!(
                    "case {ci} slice {}: summary has no frac_above_{tau} column",
                    s.slice_index
                )));
            }
        }
    }
    let pooled = out.time("correlate", || isr::correlate_cases(cases, &cfg.isr))?;
    let r = &pooled.report;
    let argmax_r = r
        .argmax_tau
        .and_then(|t| r.sweep.iter().find(|(x, _)| *x == t).and_then(|(_, v)| *v));
    out.write_json(
        "correlation.json",
        &CorrelationJson {
            report: r,
            argmax_r,
            skipped_slices: pooled.skipped.iter().map(|&(case, slice)| SkippedSlice { case, slice }).collect(),
        },
    )?;
    out.write_with("correlation_table.csv", |w| report::write_correlation_table_csv(w, r))?;
    out.write_with("sweep.csv", |w| report::write_sweep_csv(w, r))?;
    out.write("correlation.svg", correlation_chart(r, &grid).to_svg().as_bytes())?;
    Ok(pooled)
}

fn correlation_chart(r: &isr::CorrelationReport, grid: &[f64]) -> LineChart {
    let (x0, x1) = (grid.first().copied().unwrap_or(0.0), grid.last().copied().unwrap_or(1.0));
    let mut series = vec![Series::new("r(frac above tau)", r.sweep.clone())];
    if let Some(v) = r.r_mean {
        series.push(Series::horizontal("r(mean)", v, x0, x1));
    }
    if let Some(v) = r.r_p95 {
        series.push(Series::horizontal("r(p95)", v, x0, x1));
    }
    LineChart {
        title: "Stress vs restenosis correlation".into(),
        x_label: "tau (kPa)".into(),
        y_label: "Pearson r".into(),
        series,
        y_range: Some((-1.0, 1.0)),
    }
}

/// Pass/fail of the expected scenario orderings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Orderings {
    pub circumferential_above_block: bool,
    pub block_above_homogeneous: bool,
    pub behind_block_below_homogeneous: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Study {
    pub scenarios: Vec<ScenarioResult>,
    pub orderings: Orderings,
}

/// Orderings over the results of [`simulate::study_patterns`], in that order.
pub fn orderings(results: &[ScenarioResult]) -> Orderings {
    let (homog, block, circ) = (&results[0], &results[1], &results[3]);
    Orderings {
        circumferential_above_block: circ.p95_residual > block.p95_residual,
        block_above_homogeneous: block.p95_residual > homog.p95_residual,
        behind_block_below_homogeneous: block.mean_behind_block < homog.mean_behind_block,
    }
}

/// Runs the four calcification patterns and writes `scenarios.csv` and
/// `scenarios.json`.
pub fn morphology_stage(cfg: &RunConfig, out: &mut OutDir) -> Result<Study, CliError> {
    out.write_config(cfg)?;
    let patterns = simulate::study_patterns();
    let geo = mesh::SynthGeometry::default();
    let scenarios = out
        .time("study", || simulate::morphology_study(&patterns, &geo, cfg))
        .map_err(|e| CliError::Internal(format!("morphology study: {e}")))?;
    let study = Study {
        orderings: orderings(&scenarios),
        scenarios,
    };
    out.write_with("scenarios.csv", |w| report::write_scenarios_csv(w, &study.scenarios))?;
    out.write_json("scenarios.json", &study)?;
    Ok(study)
}

#[derive(Debug, Serialize)]
struct PipelineDetails {
    segment: BTreeMap<&'static str, f64>,
    slices_ok: usize,
    slices_failed: usize,
    map_thresholds: MapThresholds,
    correlation: Option<CorrelateDetails>,
    correlation_error: Option<String>,
}

fn cmd_pipeline(g: &GlobalArgs, case: &Path) -> Result<Outcome, CliError> {
    let (bundle, cfg) = load(g, case)?;
    let mut root = OutDir::create(&g.out, "pipeline")?;
    root.write_config(&cfg)?;

    let mut seg_out = OutDir::create(&g.out.join("segment"), "segment")?;
    let seg = root.time("segment", || segment_stage(&bundle, &cfg, &mut seg_out))?;
    seg_out.finish(g.threads, seg.details())?;
    let model = seg.model.clone().expect("segment stage returns its model");

    let mut sim_out = OutDir::create(&g.out.join("simulate"), "simulate")?;
    let slices = root.time("simulate", || simulate_stage(&bundle, &model, &cfg, g.threads, &mut sim_out))?;
    let ok = slices.iter().filter(|s| s.ok).count();
    let failed = slices.len() - ok;
    sim_out.finish(
        g.threads,
        SimulateDetails {
            slices,
            self_test: None,
        },
    )?;

    let mut an_out = OutDir::create(&g.out.join("analyze"), "analyze")?;
    let thresholds = root.time("analyze", || analyze_stage(&g.out.join("simulate"), &cfg, &mut an_out))?;
    an_out.finish(g.threads, thresholds.clone())?;

    let summaries = read_summaries(&g.out.join("analyze").join("summary_residual.csv"))?;
    let cases = [CaseInput {
        summaries,
        profile: bundle.profiles.clone(),
    }];
    let mut co_out = OutDir::create(&g.out.join("correlate"), "correlate")?;
    let (correlation, correlation_error) = match root.time("correlate", || correlate_stage(&cases, &cfg, &mut co_out)) {
        Ok(p) => {
            let d = CorrelateDetails::of(&p, &cfg);
            co_out.finish(g.threads, d.clone())?;
            (Some(d), None)
        }
        Err(CliError::Input(e)) => (None, Some(e)),
        Err(e) => return Err(e),
    };

    root.finish(
        g.threads,
        PipelineDetails {
            segment: seg.details(),
            slices_ok: ok,
            slices_failed: failed,
            map_thresholds: thresholds,
            correlation,
            correlation_error,
        },
    )?;
    Ok(if failed > 0 || ok == 0 { Outcome::Partial } else { Outcome::Success })
}
