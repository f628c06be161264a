//! Slice-level orchestration: load programs from the run configuration,
//! patient-slice meshing with GMM labels, and the synthetic morphology study.

use serde::Serialize;
use thiserror::Error;

use crate::case_io::{self, CaseBundle, CaseError};
use crate::config::{InflateMode, LayerFilter, RunConfig, SolverConfig};
use crate::fe::{FeError, LoadProgram, Model, Phase, ProgramResult, SolverSettings, Stent};
use crate::gmm::{MixtureModel, PlaqueComponent};
use crate::mesh::{self, CrossSectionMesh, MeshError, MorphologyPattern, SynthGeometry};
use crate::stress::{self, SliceStressSummary, StressError, WeightedValue};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Stress(#[from] StressError),
}

pub fn solver_settings(cfg: &SolverConfig) -> SolverSettings {
    SolverSettings {
        abs_tol: cfg.abs_tol,
        rel_tol: cfg.rel_tol,
        max_iter: cfg.max_iter,
        line_search_cuts: cfg.line_search_cuts,
        max_halvings: cfg.max_halvings,
    }
}

/// Inflation followed by unloading, optionally against a stent, scaled to
/// the reference lumen mean radius `r_ref`.
pub fn load_program(cfg: &SolverConfig, r_ref: f64) -> LoadProgram {
    let inflate = match cfg.inflate_mode {
        InflateMode::MeanRadius => Phase::InflateToMeanRadius {
            r_target: cfg.inflate_radius_factor * r_ref,
            n_steps: cfg.inflate_steps,
        },
        InflateMode::Pressure => Phase::InflateToPressure {
            p_max: cfg.inflate_pressure,
            n_steps: cfg.inflate_steps,
        },
    };
    let stent = cfg.stent.then(|| Stent {
        radius: cfg.stent_radius_factor * r_ref,
        k_penalty: cfg.k_penalty,
    });
    LoadProgram {
        phases: vec![
            inflate,
            Phase::Unload {
                n_steps: cfg.unload_steps,
                stent,
            },
        ],
        outer_spring_stiffness: cfg.spring_stiffness,
    }
}

/// Runs the configured load program on a labeled mesh.
pub fn simulate_mesh(mesh: &CrossSectionMesh, cfg: &RunConfig) -> Result<ProgramResult, FeError> {
    let model = Model::new(mesh, mesh.materials(&cfg.materials), cfg.solver.spring_stiffness)?;
    let program = load_program(&cfg.solver, mesh.lumen_mean_radius());
    model.run_program(&program, &solver_settings(&cfg.solver))
}

/// Mesh of one case slice with intima labels from the mixture model.
pub fn case_slice_mesh(bundle: &CaseBundle, slice: usize, model: &MixtureModel, cfg: &RunConfig) -> Result<CrossSectionMesh, SimulationError> {
    let contour = bundle.contours.get(slice).ok_or(CaseError::IndexOutOfRange(slice))?;
    let mesh = mesh::build_slice_mesh(&contour.lumen, &contour.intima_outer, &cfg.mesh)?;
    let samples: Vec<_> = case_io::slice_samples(bundle, slice)?
        .into_iter()
        .map(|(p, hu)| (p, model.classify(hu as f64)))
        .collect();
    Ok(mesh::assign_regions(&mesh, &samples)?)
}

/// Element filter for the stress statistics.
pub fn layer_filter(mesh: &CrossSectionMesh, layers: LayerFilter) -> impl Fn(usize) -> bool + '_ {
    move |e| match layers {
        LayerFilter::All => true,
        LayerFilter::Intima => mesh.is_intima(e),
    }
}

/// Stress results of one simulated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub slice: usize,
    pub at_max: SliceStressSummary,
    pub residual: SliceStressSummary,
    /// Residual first principal stress field used for the global map bands.
    pub residual_field: Vec<WeightedValue>,
    pub element_count: usize,
    pub max_penetration: f64,
    pub newton_steps: usize,
}

/// Meshes, simulates and summarizes one case slice.
pub fn run_case_slice(bundle: &CaseBundle, slice: usize, model: &MixtureModel, cfg: &RunConfig) -> Result<(CrossSectionMesh, ProgramResult, SliceResult), SimulationError> {
    let mesh = case_slice_mesh(bundle, slice, model, cfg)?;
    let res = simulate_mesh(&mesh, cfg)?;
    let out = {
        let fe_model = Model::new(&mesh, mesh.materials(&cfg.materials), cfg.solver.spring_stiffness)?;
        let thresholds = cfg.isr.tau_grid();
        let filter = layer_filter(&mesh, cfg.analysis.layers);
        let at_max = stress::slice_summary(slice, &res.state_max, &thresholds, &filter)?;
        let residual_field = stress::principal_field(&res.state_residual, &filter)?;
        let residual = stress::summarize_field(slice, &residual_field, &thresholds)?;
        let stent_radius = cfg.solver.stent.then(|| cfg.solver.stent_radius_factor * mesh.lumen_mean_radius());
        SliceResult {
            slice,
            at_max,
            residual,
            residual_field,
            element_count: mesh.elements.len(),
            max_penetration: stent_radius.map_or(0.0, |r| fe_model.max_penetration(&res.state_residual.u, r)),
            newton_steps: res.trace.iter().map(|t| t.residuals.len()).sum(),
        }
    };
    Ok((mesh, res, out))
}

/// Pressurized thick-walled homogeneous annulus against the plane-strain
/// Lamé solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LameCheck {
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub pressure: f64,
    /// Lumen hoop stress from the finite element solution (kPa).
    pub hoop: f64,
    /// `p (a^2 + b^2) / (b^2 - a^2)` (kPa).
    pub exact: f64,
    pub rel_error: f64,
    pub passed: bool,
}

/// Relative tolerance of the Lamé check.
pub const LAME_TOLERANCE: f64 = 0.02;

/// Annulus `a = 1.5`, `b = 3.0` mm, `E = 0.16` MPa, `nu = 0.45`, `p = 1` kPa,
/// springs off, 64 sectors and rings (4, 4, 4).
pub fn lame_check() -> Result<LameCheck, SimulationError> {
    let (a, b, p) = (1.5, 3.0, 1.0);
    let params = mesh::MeshParams {
        t_media: 0.3,
        t_adventitia: 0.3,
        n_sectors: 64,
        rings: [4, 4, 4],
    };
    let lumen = crate::geometry::circle(crate::geometry::Vec2::zeros(), a, 256, 0.0);
    let outer = crate::geometry::circle(crate::geometry::Vec2::zeros(), b - params.t_media - params.t_adventitia, 256, 0.0);
    let m = mesh::build_slice_mesh(&lumen, &outer, &params)?;
    let materials = vec![crate::constitutive::MaterialParams::isotropic(0.16, 0.45); m.elements.len()];
    let model = Model::new(&m, materials, 0.0)?;
    let program = LoadProgram {
        phases: vec![Phase::InflateToPressure { p_max: p, n_steps: 1 }],
        outer_spring_stiffness: 0.0,
    };
    let res = model.run_program(&program, &SolverSettings::default())?;
    let hoop = model.lumen_hoop_stress(&res.state_max);
    let exact = p * (a * a + b * b) / (b * b - a * a);
    let rel_error = (hoop / exact - 1.0).abs();
    Ok(LameCheck {
        inner_radius: a,
        outer_radius: b,
        pressure: p,
        hoop,
        exact,
        rel_error,
        passed: rel_error < LAME_TOLERANCE,
    })
}

/// The four scenarios of the morphology study.
pub fn study_patterns() -> [MorphologyPattern; 4] {
    [
        MorphologyPattern::Homogeneous(PlaqueComponent::Fibrotic),
        MorphologyPattern::AsymmetricBlock {
            arc: 90.0,
            behind: PlaqueComponent::Fibrotic,
        },
        MorphologyPattern::OpposingBlocks(60.0),
        MorphologyPattern::CircumferentialCalc(270.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario: String,
    /// p95 residual first principal stress in non-calcified intima (kPa).
    pub p95_residual: f64,
    pub mean_residual: f64,
    /// p95 first principal stress at maximum inflation, same region (kPa).
    pub p95_at_max: f64,
    /// Mean residual first principal stress over the elements behind the
    /// asymmetric block (same element set in every scenario).
    pub mean_behind_block: f64,
    pub element_count: usize,
}

/// Residual-state first principal stress averaged over `elements`.
fn mean_over(res: &ProgramResult, elements: &[usize]) -> Result<f64, StressError> {
    let mut set = vec![false; res.state_residual.quad.iter().map(|q| q.element + 1).max().unwrap_or(0)];
    for &e in elements {
        set[e] = true;
    }
    let field = stress::principal_field(&res.state_residual, |e| set[e])?;
    Ok(stress::summarize_field(0, &field, &[])?.mean_p1)
}

/// Runs every pattern under one load program derived from the shared
/// reference geometry.
pub fn morphology_study(patterns: &[MorphologyPattern], geo: &SynthGeometry, cfg: &RunConfig) -> Result<Vec<ScenarioResult>, SimulationError> {
    let block = MorphologyPattern::AsymmetricBlock {
        arc: 90.0,
        behind: PlaqueComponent::Fibrotic,
    };
    patterns
        .iter()
        .map(|p| {
            let mesh = mesh::synth_slice(p, geo)?;
            let behind = mesh::behind_block_elements(&mesh, &block);
            let res = simulate_mesh(&mesh, cfg)?;
            let soft = |e: usize| mesh.is_intima(e) && !mesh.is_calcified(e);
            let residual = stress::slice_summary(0, &res.state_residual, &[], soft)?;
            let at_max = stress::slice_summary(0, &res.state_max, &[], soft)?;
            Ok(ScenarioResult {
                scenario: p.name(),
                p95_residual: residual.p95_p1,
                mean_residual: residual.mean_p1,
                p95_at_max: at_max.p95_p1,
                mean_behind_block: mean_over(&res, &behind)?,
                element_count: mesh.elements.len(),
            })
        })
        .collect()
}
