//! Quasi-static plane-strain finite elements for balloon inflation, unloading
//! and a rigid-circle stent.
//!
//! The lumen pressure acts on the closed lumen loop and always follows the
//! deformed boundary. For a closed loop its virtual work equals `p dA`, where
//! `A` is the enclosed lumen area, so the load is conservative and the whole
//! problem derives from the potential
//!
//! ```text
//! Pi(u) = sum_e [sum_q W~(F_q) a_q + V_e U(v_e / V_e)] + springs + stent penalty - p A(u)
//! ```
//!
//! where `W~` is the strain energy without its volumetric `lambda` term and
//! `U` carries that term on the element-mean area change `v_e / V_e`, which
//! keeps nearly incompressible layers free of volumetric locking.
//!
//! and the tangent is symmetric. Forces are per unit out-of-plane length
//! (kPa mm), displacements in mm.

use nalgebra::{Matrix2, Matrix3, Vector2};
use thiserror::Error;

use crate::banded::{BandMatrix, SolveError};
use crate::constitutive::{self, ConstitutiveError, DeformationState, MaterialParams};
use crate::element::{self, QuadPoint};
use crate::geometry::{self, Vec2};
use crate::mesh::CrossSectionMesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeError {
    #[error("element {0} has a non-positive Jacobian")]
    NonPositiveJacobian(usize),
    #[error("Newton diverged after {iterations} iterations (residual {residual:e})")]
    DivergedNewton { iterations: usize, residual: f64 },
    #[error(transparent)]
    Singular(#[from] SolveError),
    #[error("phase {phase} step {step}: step halving exhausted")]
    AbortedStep { phase: usize, step: usize },
    #[error("invalid load program: {0}")]
    InvalidProgram(String),
    #[error("material of element {element}: {source}")]
    Material {
        element: usize,
        #[source]
        source: ConstitutiveError,
    },
}

/// Rigid-circle stent centered on the reference lumen centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stent {
    /// Radius (mm).
    pub radius: f64,
    /// Penalty stiffness per unit lumen boundary length (kPa/mm).
    pub k_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Ramp the lumen pressure linearly to `p_max` (kPa).
    InflateToPressure { p_max: f64, n_steps: usize },
    /// Raise the lumen mean radius to `r_target` (mm); the pressure is an
    /// unknown of the solve.
    InflateToMeanRadius { r_target: f64, n_steps: usize },
    /// Ramp the pressure to zero, optionally against a stent.
    Unload { n_steps: usize, stent: Option<Stent> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadProgram {
    pub phases: Vec<Phase>,
    /// Radial spring stiffness on the outer boundary (kPa/mm). Zero switches
    /// to minimal tangential pins against rigid-body motion.
    pub outer_spring_stiffness: f64,
}

impl LoadProgram {
    pub fn validate(&self) -> Result<(), FeError> {
        let bad = |m: String| Err(FeError::InvalidProgram(m));
        if !(self.outer_spring_stiffness >= 0.0) {
            return bad(format!("spring stiffness {}", self.outer_spring_stiffness));
        }
        for (i, ph) in self.phases.iter().enumerate() {
            let n = match *ph {
                Phase::InflateToPressure { p_max, n_steps } => {
                    if !(p_max >= 0.0) {
                        return bad(format!("phase {i}: p_max {p_max} < 0"));
                    }
                    n_steps
                }
                Phase::InflateToMeanRadius { r_target, n_steps } => {
                    if !(r_target > 0.0) {
                        return bad(format!("phase {i}: r_target {r_target} <= 0"));
                    }
                    n_steps
                }
                Phase::Unload { n_steps, stent } => {
                    if let Some(s) = stent {
                        if !(s.radius > 0.0 && s.k_penalty > 0.0) {
                            return bad(format!("phase {i}: stent radius and penalty must be positive"));
                        }
                    }
                    n_steps
                }
            };
            if n == 0 {
                return bad(format!("phase {i}: n_steps must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub line_search_cuts: usize,
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_iter: 25,
            line_search_cuts: 10,
            max_halvings: 6,
        }
    }
}

/// Gap to the stent surface and the penalty traction per unit boundary
/// length, pushing radially outward from `center`.
pub fn contact_gap(x: Vec2, center: Vec2, r_stent: f64, k_penalty: f64) -> (f64, Vec2) {
    let d = x - center;
    let rho = d.norm();
    let g = r_stent - rho;
    if g <= 0.0 || rho == 0.0 {
        return (g, Vec2::zeros());
    }
    (g, d / rho * (k_penalty * g))
}

/// Enclosed area of a closed loop of points.
pub fn loop_area(x: &[Vec2]) -> f64 {
    geometry::signed_area(x)
}

/// Nodal forces of a uniform pressure `p` acting outward on every edge of a
/// counterclockwise closed loop, lumped half to each edge end. Equals
/// `p dA/dx`.
pub fn loop_pressure_forces(x: &[Vec2], p: f64) -> Vec<Vec2> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let prev = x[(i + n - 1) % n];
            let next = x[(i + 1) % n];
            Vec2::new(next.y - prev.y, prev.x - next.x) * (0.5 * p)
        })
        .collect()
}

/// Converged (or trial) solution with quadrature-point results.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadState {
    pub element: usize,
    /// Deformation gradient (plane strain embedding).
    pub f: Matrix3<f64>,
    /// Cauchy stress (kPa).
    pub cauchy: Matrix3<f64>,
    /// Deformed quadrature area share (mm^2).
    pub area: f64,
    /// Deformed position (mm).
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveState {
    /// Nodal displacements, `[ux0, uy0, ux1, ...]` (mm).
    pub u: Vec<f64>,
    /// Lumen pressure (kPa).
    pub pressure: f64,
    /// Fraction of the current phase completed.
    pub load_factor: f64,
    pub converged: bool,
    /// Residual norms of the last Newton solve.
    pub history: Vec<f64>,
    pub quad: Vec<QuadState>,
}

impl SolveState {
    pub fn displacement(&self, node: usize) -> Vec2 {
        Vec2::new(self.u[2 * node], self.u[2 * node + 1])
    }
}

/// One load step record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub phase: usize,
    pub step: usize,
    pub load_factor: f64,
    pub pressure: f64,
    pub mean_radius: f64,
    pub halvings: usize,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramResult {
    pub state_max: SolveState,
    pub state_residual: SolveState,
    pub trace: Vec<StepRecord>,
}

/// Load control of a Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Pressure(f64),
    /// Target lumen mean radius (mm); pressure is solved for.
    MeanRadius(f64),
}

#[derive(Debug, Clone, Copy)]
struct Spring {
    node: usize,
    dir: Vec2,
    k: f64,
}

/// Discretized problem for one slice.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    pub mesh: &'a CrossSectionMesh,
    pub materials: Vec<MaterialParams>,
    quad: Vec<[QuadPoint; 4]>,
    /// Reference element areas.
    volume: Vec<f64>,
    circumferential: Vec<[Vector2<f64>; 4]>,
    springs: Vec<Spring>,
    /// Lumped reference lumen length per lumen node.
    lumen_length: Vec<f64>,
    /// Zeroed tangent with the model's sparsity and ordering.
    pattern: BandMatrix,
}

const PIN_STIFFNESS_FACTOR: f64 = 1e3;

fn radial(center: Vec2, x: Vec2) -> Vec2 {
    (x - center).normalize()
}

impl<'a> Model<'a> {
    pub fn new(mesh: &'a CrossSectionMesh, materials: Vec<MaterialParams>, spring_stiffness: f64) -> Result<Self, FeError> {
        assert_eq!(materials.len(), mesh.elements.len(), "one material per element");
        for (e, m) in materials.iter().enumerate() {
            m.validate().map_err(|source| FeError::Material { element: e, source })?;
        }
        let mut quad = Vec::with_capacity(mesh.elements.len());
        let mut circumferential = Vec::with_capacity(mesh.elements.len());
        for e in 0..mesh.elements.len() {
            let qp = element::quad_points(&mesh.element_nodes(e)).ok_or(FeError::NonPositiveJacobian(e))?;
            circumferential.push(qp.map(|q| {
                let r = radial(mesh.center, q.position);
                Vector2::new(-r.y, r.x)
            }));
            quad.push(qp);
        }
        let outer = &mesh.outer_boundary;
        let no = outer.len();
        let edge = |a: usize, b: usize| (mesh.nodes[b] - mesh.nodes[a]).norm();
        let mut springs = Vec::new();
        if spring_stiffness > 0.0 {
            for i in 0..no {
                let (p, c, n) = (outer[(i + no - 1) % no], outer[i], outer[(i + 1) % no]);
                let len = 0.5 * (edge(p, c) + edge(c, n));
                springs.push(Spring {
                    node: c,
                    dir: radial(mesh.center, mesh.nodes[c]),
                    k: spring_stiffness * len,
                });
            }
        }
        // tangential pins remove the rigid modes the springs leave free
        let e_max = materials.iter().map(|m| m.e * 1e3).fold(0.0, f64::max);
        let pin_k = PIN_STIFFNESS_FACTOR * e_max;
        let pins: Vec<usize> = if spring_stiffness > 0.0 {
            vec![0]
        } else {
            vec![0, no / 4, no / 2]
        };
        for i in pins {
            let c = outer[i];
            let r = radial(mesh.center, mesh.nodes[c]);
            springs.push(Spring {
                node: c,
                dir: Vec2::new(-r.y, r.x),
                k: pin_k,
            });
        }
        let lumen = &mesh.lumen_boundary;
        let nl = lumen.len();
        let lumen_length = (0..nl)
            .map(|i| 0.5 * (edge(lumen[(i + nl - 1) % nl], lumen[i]) + edge(lumen[i], lumen[(i + 1) % nl])))
            .collect();
        let ndof = 2 * mesh.nodes.len();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); ndof];
        for c in &mesh.elements {
            for &a in c {
                for &b in c {
                    for i in 0..2 {
                        for k in 0..2 {
                            adjacency[2 * a + i].push(2 * b + k);
                        }
                    }
                }
            }
        }
        for i in 0..nl {
            let (a, b) = (lumen[i], lumen[(i + 1) % nl]);
            for d in 0..2 {
                for f in 0..2 {
                    adjacency[2 * a + d].push(2 * b + f);
                    adjacency[2 * b + f].push(2 * a + d);
                }
            }
        }
        for v in adjacency.iter_mut() {
            v.sort_unstable();
            v.dedup();
        }
        let volume = quad.iter().map(|qp| qp.iter().map(|q| q.area).sum()).collect();
        Ok(Self {
            mesh,
            materials,
            quad,
            volume,
            circumferential,
            springs,
            lumen_length,
            pattern: BandMatrix::new(&adjacency),
        })
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.mesh.nodes.len()
    }

    fn deformed(&self, u: &[f64], node: usize) -> Vec2 {
        self.mesh.nodes[node] + Vec2::new(u[2 * node], u[2 * node + 1])
    }

    fn lumen_points(&self, u: &[f64]) -> Vec<Vec2> {
        self.mesh.lumen_boundary.iter().map(|&n| self.deformed(u, n)).collect()
    }

    /// Enclosed lumen area of the deformed configuration.
    pub fn lumen_area(&self, u: &[f64]) -> f64 {
        loop_area(&self.lumen_points(u))
    }

    /// Mean distance of the deformed lumen nodes from the reference centroid.
    pub fn mean_radius(&self, u: &[f64]) -> f64 {
        let c = self.mesh.center;
        let pts = self.lumen_points(u);
        pts.iter().map(|p| (p - c).norm()).sum::<f64>() / pts.len() as f64
    }

    fn deformation(&self, e: usize, q: usize, u: &[f64]) -> Matrix2<f64> {
        let conn = self.mesh.elements[e];
        let mut f = Matrix2::identity();
        for (a, &n) in conn.iter().enumerate() {
            let ua = Vector2::new(u[2 * n], u[2 * n + 1]);
            f += ua * self.quad[e][q].grad[a].transpose();
        }
        f
    }

    /// Rejects elements whose deformed corners fold over.
    fn check_corners(&self, e: usize, u: &[f64]) -> Result<(), FeError> {
        let x = self.mesh.elements[e].map(|n| self.deformed(u, n));
        for a in 0..4 {
            let d1 = x[(a + 1) % 4] - x[a];
            let d2 = x[(a + 3) % 4] - x[a];
            if !(d1.perp(&d2) > 0.0) {
                return Err(FeError::NonPositiveJacobian(e));
            }
        }
        Ok(())
    }

    fn state(&self, e: usize, q: usize, u: &[f64]) -> Result<DeformationState, FeError> {
        let f = self.deformation(e, q, u);
        if !(f.determinant() > 0.0) {
            return Err(FeError::NonPositiveJacobian(e));
        }
        Ok(DeformationState::plane_strain(f, self.circumferential[e][q]))
    }

    /// Total potential energy `Pi(u)` (kPa mm^2 per mm).
    pub fn potential(&self, u: &[f64], pressure: f64, stent: Option<Stent>) -> Result<f64, FeError> {
        let mut pi = 0.0;
        for e in 0..self.mesh.elements.len() {
            self.check_corners(e, u)?;
            let mut v = 0.0;
            for q in 0..4 {
                let st = self.state(e, q, u)?;
                let w = constitutive::strain_energy_without_dilatation(&st, &self.materials[e]).map_err(|_| FeError::NonPositiveJacobian(e))?;
                pi += w * self.quad[e][q].area;
                v += st.jacobian() * self.quad[e][q].area;
            }
            let vol = self.volume[e];
            pi += vol * constitutive::dilatation_energy(v / vol, &self.materials[e])[0];
        }
        for s in &self.springs {
            let d = s.dir.dot(&Vec2::new(u[2 * s.node], u[2 * s.node + 1]));
            pi += 0.5 * s.k * d * d;
        }
        if let Some(st) = stent {
            for (i, &n) in self.mesh.lumen_boundary.iter().enumerate() {
                let (g, _) = contact_gap(self.deformed(u, n), self.mesh.center, st.radius, st.k_penalty);
                if g > 0.0 {
                    pi += 0.5 * st.k_penalty * self.lumen_length[i] * g * g;
                }
            }
        }
        Ok(pi - pressure * self.lumen_area(u))
    }

    /// Out-of-balance force vector `R = f_int + f_springs + f_stent - p dA/du`.
    pub fn residual(&self, u: &[f64], pressure: f64, stent: Option<Stent>) -> Result<Vec<f64>, FeError> {
        Ok(self.evaluate(u, pressure, stent, false)?.0)
    }

    /// Residual and tangent stiffness.
    pub fn assemble(&self, u: &[f64], pressure: f64, stent: Option<Stent>) -> Result<(Vec<f64>, BandMatrix), FeError> {
        let (r, k) = self.evaluate(u, pressure, stent, true)?;
        Ok((r, k.expect("tangent requested")))
    }

    fn evaluate(&self, u: &[f64], pressure: f64, stent: Option<Stent>, tangent: bool) -> Result<(Vec<f64>, Option<BandMatrix>), FeError> {
        let ndof = self.n_dofs();
        let mut r = vec![0.0; ndof];
        let mut k = tangent.then(|| self.pattern.clone());
        for (e, conn) in self.mesh.elements.iter().enumerate() {
            self.check_corners(e, u)?;
            let mut fe = [0.0; 8];
            let mut ke = [[0.0; 8]; 8];
            // deformed element area and its first and second derivatives
            let mut v = 0.0;
            let mut dv = [0.0; 8];
            let mut hv = [[0.0; 8]; 8];
            for q in 0..4 {
                let qp = &self.quad[e][q];
                let st = self.state(e, q, u)?;
                let resp = constitutive::plane_response_without_dilatation(&st, &self.materials[e]).map_err(|_| FeError::NonPositiveJacobian(e))?;
                let p = resp.first_pk;
                let f = &st.f;
                let cof = [[f[(1, 1)], -f[(1, 0)]], [-f[(0, 1)], f[(0, 0)]]];
                v += st.jacobian() * qp.area;
                for a in 0..4 {
                    let g = qp.grad[a];
                    for i in 0..2 {
                        fe[2 * a + i] += (p[(i, 0)] * g.x + p[(i, 1)] * g.y) * qp.area;
                        dv[2 * a + i] += (cof[i][0] * g.x + cof[i][1] * g.y) * qp.area;
                    }
                }
                if tangent {
                    let t = &resp.tangent;
                    for a in 0..4 {
                        let ga = qp.grad[a];
                        for b in 0..4 {
                            let gb = qp.grad[b];
                            let cross = (ga.x * gb.y - ga.y * gb.x) * qp.area;
                            hv[2 * a][2 * b + 1] += cross;
                            hv[2 * a + 1][2 * b] -= cross;
                            for i in 0..2 {
                                for kk in 0..2 {
                                    let mut val = 0.0;
                                    for jj in 0..2 {
                                        for l in 0..2 {
                                            val += ga[jj] * t[i][jj][kk][l] * gb[l];
                                        }
                                    }
                                    ke[2 * a + i][2 * b + kk] += val * qp.area;
                                }
                            }
                        }
                    }
                }
            }
            let vol = self.volume[e];
            if !(v > 0.0) {
                return Err(FeError::NonPositiveJacobian(e));
            }
            let [_, u1, u2] = constitutive::dilatation_energy(v / vol, &self.materials[e]);
            for i in 0..8 {
                fe[i] += u1 * dv[i];
                if tangent {
                    for j in 0..8 {
                        ke[i][j] += u2 / vol * dv[i] * dv[j] + u1 * hv[i][j];
                    }
                }
            }
            for a in 0..4 {
                for i in 0..2 {
                    r[2 * conn[a] + i] += fe[2 * a + i];
                }
            }
            if let Some(k) = k.as_mut() {
                for a in 0..4 {
                    for i in 0..2 {
                        for b in 0..4 {
                            for kk in 0..2 {
                                k.add(2 * conn[a] + i, 2 * conn[b] + kk, ke[2 * a + i][2 * b + kk]);
                            }
                        }
                    }
                }
            }
        }
        for s in &self.springs {
            let n = s.node;
            let d = s.dir.dot(&Vec2::new(u[2 * n], u[2 * n + 1]));
            for i in 0..2 {
                r[2 * n + i] += s.k * d * s.dir[i];
            }
            if let Some(k) = k.as_mut() {
                for i in 0..2 {
                    for j in 0..2 {
                        k.add(2 * n + i, 2 * n + j, s.k * s.dir[i] * s.dir[j]);
                    }
                }
            }
        }
        if let Some(st) = stent {
            for (idx, &n) in self.mesh.lumen_boundary.iter().enumerate() {
                let x = self.deformed(u, n);
                let (g, force) = contact_gap(x, self.mesh.center, st.radius, st.k_penalty);
                if g <= 0.0 {
                    continue;
                }
                let len = self.lumen_length[idx];
                for i in 0..2 {
                    r[2 * n + i] -= force[i] * len;
                }
                if let Some(k) = k.as_mut() {
                    let d = x - self.mesh.center;
                    let rho = d.norm();
                    let nn = d / rho;
                    let c = st.k_penalty * len;
                    for i in 0..2 {
                        for j in 0..2 {
                            let id = if i == j { 1.0 } else { 0.0 };
                            k.add(2 * n + i, 2 * n + j, c * (nn[i] * nn[j] - g / rho * (id - nn[i] * nn[j])));
                        }
                    }
                }
            }
        }
        if pressure != 0.0 {
            let lumen = &self.mesh.lumen_boundary;
            let pts = self.lumen_points(u);
            let forces = loop_pressure_forces(&pts, pressure);
            for (i, &n) in lumen.iter().enumerate() {
                r[2 * n] -= forces[i].x;
                r[2 * n + 1] -= forces[i].y;
            }
            if let Some(k) = k.as_mut() {
                // Hessian of A: d2A / dx_i dy_{i+1} = 1/2, d2A / dx_i dy_{i-1} = -1/2
                let nl = lumen.len();
                for i in 0..nl {
                    let a = lumen[i];
                    let b = lumen[(i + 1) % nl];
                    let v = -pressure * 0.5;
                    k.add(2 * a, 2 * b + 1, v);
                    k.add(2 * b + 1, 2 * a, v);
                    k.add(2 * b, 2 * a + 1, -v);
                    k.add(2 * a + 1, 2 * b, -v);
                }
            }
        }
        Ok((r, k))
    }

    /// `dA/du` of the lumen area.
    fn area_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_dofs()];
        let pts = self.lumen_points(u);
        for (i, f) in loop_pressure_forces(&pts, 1.0).iter().enumerate() {
            let n = self.mesh.lumen_boundary[i];
            g[2 * n] = f.x;
            g[2 * n + 1] = f.y;
        }
        g
    }

    fn radius_gradient(&self, u: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_dofs()];
        let nl = self.mesh.lumen_boundary.len() as f64;
        for &n in &self.mesh.lumen_boundary {
            let d = radial(self.mesh.center, self.deformed(u, n)) / nl;
            g[2 * n] = d.x;
            g[2 * n + 1] = d.y;
        }
        g
    }

    /// Quadrature-point results for a displacement field.
    pub fn quad_states(&self, u: &[f64]) -> Result<Vec<QuadState>, FeError> {
        let mut out = Vec::with_capacity(4 * self.mesh.elements.len());
        for (e, conn) in self.mesh.elements.iter().enumerate() {
            let states = (0..4).map(|q| self.state(e, q, u)).collect::<Result<Vec<_>, _>>()?;
            let v: f64 = (0..4).map(|q| states[q].jacobian() * self.quad[e][q].area).sum();
            let pressure = constitutive::dilatation_energy(v / self.volume[e], &self.materials[e])[1];
            for (q, &(xi, eta)) in element::GAUSS_2X2.iter().enumerate() {
                let st = states[q];
                let resp = constitutive::plane_response_without_dilatation(&st, &self.materials[e]).map_err(|_| FeError::NonPositiveJacobian(e))?;
                let cauchy = resp.cauchy + Matrix3::identity() * pressure;
                let nsh = element::shape(xi, eta);
                let mut pos = Vec2::zeros();
                for (a, &n) in conn.iter().enumerate() {
                    pos += self.deformed(u, n) * nsh[a];
                }
                out.push(QuadState {
                    element: e,
                    f: st.f,
                    cauchy,
                    area: self.quad[e][q].area * st.jacobian(),
                    position: pos,
                });
            }
        }
        Ok(out)
    }

    /// Reference state: zero displacement and pressure.
    pub fn reference_state(&self) -> Result<SolveState, FeError> {
        let u = vec![0.0; self.n_dofs()];
        Ok(SolveState {
            quad: self.quad_states(&u)?,
            u,
            pressure: 0.0,
            load_factor: 0.0,
            converged: true,
            history: Vec::new(),
        })
    }

    /// Newton iterations with backtracking line search from `start`.
    pub fn newton_solve(&self, start: &SolveState, control: Control, stent: Option<Stent>, settings: &SolverSettings) -> Result<SolveState, FeError> {
        let mut u = start.u.clone();
        let mut p = match control {
            Control::Pressure(p) => p,
            Control::MeanRadius(_) => start.pressure,
        };
        let gap = |u: &[f64]| match control {
            Control::MeanRadius(r) => self.mean_radius(u) - r,
            Control::Pressure(_) => 0.0,
        };
        let (mut r, mut k) = self.assemble(&u, p, stent)?;
        let r0 = norm(&r);
        let tol = settings.abs_tol.max(settings.rel_tol * r0);
        let g_tol = 1e-10;
        let mut g = gap(&u);
        let mut history = vec![r0];
        // weight of the constraint violation in the line-search merit
        let k_ref = (0..self.n_dofs()).map(|i| k.get(i, i).abs()).fold(0.0, f64::max);
        let merit = |r: &[f64], g: f64| norm(r) + k_ref * g.abs();
        for it in 0..settings.max_iter {
            if norm(&r) <= tol && g.abs() <= g_tol {
                let quad = self.quad_states(&u)?;
                return Ok(SolveState {
                    u,
                    pressure: p,
                    load_factor: start.load_factor,
                    converged: true,
                    history,
                    quad,
                });
            }
            let fac = k.factor()?;
            let neg_r: Vec<f64> = r.iter().map(|x| -x).collect();
            let a = fac.solve(&neg_r);
            let (du, dp) = match control {
                Control::Pressure(_) => (a, 0.0),
                Control::MeanRadius(_) => {
                    let ga = self.area_gradient(&u);
                    let b = fac.solve(&ga);
                    let gr = self.radius_gradient(&u);
                    let dp = (-g - dot(&gr, &a)) / dot(&gr, &b);
                    (a.iter().zip(&b).map(|(x, y)| x + dp * y).collect(), dp)
                }
            };
            let m0 = merit(&r, g);
            // under pressure control the step is also judged by the potential
            let slope = dot(&r, &du);
            let pi0 = match control {
                Control::Pressure(_) if slope < 0.0 => Some(self.potential(&u, p, stent)?),
                _ => None,
            };
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..=settings.line_search_cuts {
                let ut: Vec<f64> = u.iter().zip(&du).map(|(x, d)| x + alpha * d).collect();
                let pt = p + alpha * dp;
                let descends = pi0.is_some_and(|pi0| self.potential(&ut, pt, stent).is_ok_and(|pi| pi <= pi0 + 1e-4 * alpha * slope));
                if let Ok((rt, kt)) = self.assemble(&ut, pt, stent) {
                    let gt = gap(&ut);
                    let mt = merit(&rt, gt);
                    if mt.is_finite() && (descends || mt < m0 || (norm(&rt) <= tol && gt.abs() <= g_tol)) {
                        accepted = Some((ut, pt, rt, kt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((ut, pt, rt, kt)) = accepted else {
                return Err(FeError::DivergedNewton {
                    iterations: it + 1,
                    residual: norm(&r),
                });
            };
            u = ut;
            p = pt;
            (r, k) = (rt, kt);
            g = gap(&u);
            history.push(norm(&r));
        }
        if norm(&r) <= tol && g.abs() <= g_tol {
            let quad = self.quad_states(&u)?;
            return Ok(SolveState {
                u,
                pressure: p,
                load_factor: start.load_factor,
                converged: true,
                history,
                quad,
            });
        }
        Err(FeError::DivergedNewton {
            iterations: settings.max_iter,
            residual: norm(&r),
        })
    }

    /// Runs all phases with adaptive step halving.
    pub fn run_program(&self, program: &LoadProgram, settings: &SolverSettings) -> Result<ProgramResult, FeError> {
        program.validate()?;
        let mut state = self.reference_state()?;
        let mut trace = Vec::new();
        let mut state_max = None;
        let mut state_residual = None;
        for (pi, phase) in program.phases.iter().enumerate() {
            let p_start = state.pressure;
            let r_start = self.mean_radius(&state.u);
            let (n_steps, stent) = match *phase {
                Phase::InflateToPressure { n_steps, .. } | Phase::InflateToMeanRadius { n_steps, .. } => (n_steps, None),
                Phase::Unload { n_steps, stent } => (n_steps, stent),
            };
            let control_at = |lam: f64| match *phase {
                Phase::InflateToPressure { p_max, .. } => Control::Pressure(p_start + lam * (p_max - p_start)),
                Phase::InflateToMeanRadius { r_target, .. } => Control::MeanRadius(r_start + lam * (r_target - r_start)),
                Phase::Unload { .. } => Control::Pressure(p_start * (1.0 - lam)),
            };
            let base = 1.0 / n_steps as f64;
            let mut lam = 0.0;
            let mut step = 0;
            let mut halvings = 0;
            let mut prev_dp = 0.0;
            // last converged increment and its load-factor span
            let mut prev_du: Option<(Vec<f64>, f64)> = None;
            let mut streak = 0;
            while lam < 1.0 - 1e-12 {
                let dl = (base / f64::powi(2.0, halvings as i32)).min(1.0 - lam);
                let target = if lam + dl >= 1.0 - 1e-12 { 1.0 } else { lam + dl };
                let mut start = state.clone();
                start.load_factor = target;
                if let Control::MeanRadius(_) = control_at(target) {
                    // linear pressure predictor
                    start.pressure += prev_dp;
                }
                if let Some((du, span)) = &prev_du {
                    // secant displacement predictor
                    let s = dl / span;
                    let u: Vec<f64> = state.u.iter().zip(du).map(|(x, d)| x + s * d).collect();
                    if self.residual(&u, start.pressure, stent).is_ok() {
                        start.u = u;
                    }
                }
                match self.newton_solve(&start, control_at(target), stent, settings) {
                    Ok(next) => {
                        prev_dp = next.pressure - state.pressure;
                        prev_du = Some((next.u.iter().zip(&state.u).map(|(a, b)| a - b).collect(), dl));
                        trace.push(StepRecord {
                            phase: pi,
                            step,
                            load_factor: target,
                            pressure: next.pressure,
                            mean_radius: self.mean_radius(&next.u),
                            halvings,
                            residuals: next.history.clone(),
                        });
                        state = next;
                        lam = target;
                        step += 1;
                        streak += 1;
                        if streak >= 2 && halvings > 0 {
                            halvings -= 1;
                            streak = 0;
                            prev_du = None;
                        }
                    }
                    Err(FeError::DivergedNewton { .. } | FeError::NonPositiveJacobian(_) | FeError::Singular(_)) => {
                        halvings += 1;
                        streak = 0;
                        prev_dp *= 0.5;
                        prev_du = None;
                        if halvings > settings.max_halvings {
                            return Err(FeError::AbortedStep { phase: pi, step });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            match phase {
                Phase::Unload { .. } => state_residual = Some(state.clone()),
                _ => state_max = Some(state.clone()),
            }
        }
        let state_max = state_max.unwrap_or_else(|| state.clone());
        let state_residual = state_residual.unwrap_or(state);
        Ok(ProgramResult {
            state_max,
            state_residual,
            trace,
        })
    }

    /// Largest stent penetration over the lumen nodes (mm, >= 0).
    pub fn max_penetration(&self, u: &[f64], r_stent: f64) -> f64 {
        self.mesh
            .lumen_boundary
            .iter()
            .map(|&n| (r_stent - (self.deformed(u, n) - self.mesh.center).norm()).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Nodal Cauchy stress: Gauss-point values extrapolated bilinearly to the
    /// element corners and averaged over the elements sharing each node.
    pub fn nodal_stress(&self, state: &SolveState) -> Vec<Matrix3<f64>> {
        let n = self.mesh.nodes.len();
        let mut sum = vec![Matrix3::zeros(); n];
        let mut count = vec![0usize; n];
        let s3 = 3f64.sqrt();
        for (e, conn) in self.mesh.elements.iter().enumerate() {
            let qs = &state.quad[4 * e..4 * e + 4];
            for (a, &(xa, ya)) in element::CORNERS.iter().enumerate() {
                // corner in Gauss-point coordinates sits at (+-sqrt 3, +-sqrt 3)
                let w = element::shape(xa * s3, ya * s3);
                let mut s = Matrix3::zeros();
                for q in 0..4 {
                    s += qs[q].cauchy * w[q];
                }
                sum[conn[a]] += s;
                count[conn[a]] += 1;
            }
        }
        sum.into_iter().zip(count).map(|(s, c)| s / c.max(1) as f64).collect()
    }

    /// Mean hoop stress over the lumen nodes (kPa).
    pub fn lumen_hoop_stress(&self, state: &SolveState) -> f64 {
        let ns = self.nodal_stress(state);
        let lumen = &self.mesh.lumen_boundary;
        lumen
            .iter()
            .map(|&n| {
                let r = radial(self.mesh.center, self.deformed(&state.u, n));
                let t = nalgebra::Vector3::new(-r.y, r.x, 0.0);
                t.dot(&(ns[n] * t))
            })
            .sum::<f64>()
            / lumen.len() as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
