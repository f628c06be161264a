//! Compressible Neo-Hookean base with tension-only exponential fiber families.
//!
//! Strain energy per unit reference volume:
//!
//! ```text
//! W = mu/2 (I1 - 3) - mu ln J + lambda/2 (ln J)^2
//!   + sum_{a = +phi, -phi} k1/(2 k2) [exp(k2 (I4 - 1)^2) - 1]   (only where I4 > 1)
//! ```
//!
//! The two fiber families lie in the circumferential-axial plane at `+phi` and
//! `-phi` from the local circumferential direction. All stresses and energies
//! are returned in kPa; Young's moduli are stored in MPa as tabulated.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::gmm::PlaqueComponent;

/// Fourth-order tensor with full index freedom, `t[i][j][k][l]`.
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("non-positive Jacobian J = {0}")]
    NonPositiveJacobian(f64),
    #[error("invalid material parameter {field}: {value}")]
    InvalidParameter { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Young's modulus (MPa).
    pub e: f64,
    pub nu: f64,
    /// Fiber stiffness (kPa).
    pub k1: f64,
    pub k2: f64,
    /// Fiber angle from the circumferential direction (degrees).
    pub phi: f64,
    pub has_fibers: bool,
}

impl MaterialParams {
    pub const fn isotropic(e: f64, nu: f64) -> Self {
        Self {
            e,
            nu,
            k1: 0.0,
            k2: 0.0,
            phi: 0.0,
            has_fibers: false,
        }
    }

    pub const fn fibered(e: f64, nu: f64, k1: f64, k2: f64, phi: f64) -> Self {
        Self {
            e,
            nu,
            k1,
            k2,
            phi,
            has_fibers: true,
        }
    }

    pub fn validate(&self) -> Result<(), ConstitutiveError> {
        let bad = |field, value| Err(ConstitutiveError::InvalidParameter { field, value });
        if !(self.e > 0.0) {
            return bad("e", self.e);
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return bad("nu", self.nu);
        }
        if self.has_fibers {
            if !(self.k1 > 0.0) {
                return bad("k1", self.k1);
            }
            if !(self.k2 > 0.0) {
                return bad("k2", self.k2);
            }
            if !(0.0..90.0).contains(&self.phi) {
                return bad("phi", self.phi);
            }
        }
        Ok(())
    }

    /// Lamé parameters `(lambda, mu)` in kPa.
    pub fn lame(&self) -> (f64, f64) {
        let e = self.e * 1e3;
        let mu = e / (2.0 * (1.0 + self.nu));
        let lambda = e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu));
        (lambda, mu)
    }
}

/// Wall layer of the cross-section model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Intima,
    Media,
    Adventitia,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::Intima => "intima",
            Layer::Media => "media",
            Layer::Adventitia => "adventitia",
        }
    }
}

/// Material lookup key: a plaque component (intima) or a fixed wall layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaterialKey {
    Plaque(PlaqueComponent),
    Layer(Layer),
}

/// Tabulated artery materials, overridable per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    pub adventitia: MaterialParams,
    pub media: MaterialParams,
    pub normal_intima: MaterialParams,
    pub lipid_rich: MaterialParams,
    pub fibrotic: MaterialParams,
    pub calcification: MaterialParams,
}

impl Default for MaterialTable {
    fn default() -> Self {
        Self {
            adventitia: MaterialParams::fibered(0.016, 0.45, 5.1, 15.4, 56.3),
            media: MaterialParams::fibered(0.16, 0.45, 0.64, 3.54, 5.76),
            normal_intima: MaterialParams::isotropic(0.16, 0.45),
            lipid_rich: MaterialParams::isotropic(0.08, 0.45),
            fibrotic: MaterialParams::isotropic(0.16, 0.45),
            calcification: MaterialParams::isotropic(1.6, 0.45),
        }
    }
}

impl MaterialTable {
    pub const NAMES: [&'static str; 6] = [
        "adventitia",
        "media",
        "normal_intima",
        "lipid_rich",
        "fibrotic",
        "calcification",
    ];

    pub fn material_of(&self, key: MaterialKey) -> MaterialParams {
        match key {
            MaterialKey::Layer(Layer::Adventitia) => self.adventitia,
            MaterialKey::Layer(Layer::Media) => self.media,
            MaterialKey::Layer(Layer::Intima) => self.normal_intima,
            MaterialKey::Plaque(PlaqueComponent::NormalIntima) => self.normal_intima,
            MaterialKey::Plaque(PlaqueComponent::LipidRich) => self.lipid_rich,
            MaterialKey::Plaque(PlaqueComponent::Fibrotic) => self.fibrotic,
            MaterialKey::Plaque(PlaqueComponent::Calcification) => self.calcification,
        }
    }

    pub fn by_name(&self, name: &str) -> Option<&MaterialParams> {
        Some(match name {
            "adventitia" => &self.adventitia,
            "media" => &self.media,
            "normal_intima" => &self.normal_intima,
            "lipid_rich" => &self.lipid_rich,
            "fibrotic" => &self.fibrotic,
            "calcification" => &self.calcification,
            _ => return None,
        })
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut MaterialParams> {
        Some(match name {
            "adventitia" => &mut self.adventitia,
            "media" => &mut self.media,
            "normal_intima" => &mut self.normal_intima,
            "lipid_rich" => &mut self.lipid_rich,
            "fibrotic" => &mut self.fibrotic,
            "calcification" => &mut self.calcification,
            _ => return None,
        })
    }
}

/// Table lookup with the default parameters.
pub fn material_of(key: MaterialKey) -> MaterialParams {
    MaterialTable::default().material_of(key)
}

/// Deformation gradient plus the reference circumferential direction used to
/// orient the fiber families. The axial direction is always `e_z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformationState {
    pub f: Matrix3<f64>,
    pub circumferential: Vector3<f64>,
}

impl DeformationState {
    pub fn new(f: Matrix3<f64>, circumferential: Vector3<f64>) -> Self {
        Self { f, circumferential }
    }

    /// Plane-strain embedding: `F33 = 1`, no out-of-plane shear.
    pub fn plane_strain(f: Matrix2<f64>, circumferential: Vector2<f64>) -> Self {
        let mut f3 = Matrix3::identity();
        f3.fixed_view_mut::<2, 2>(0, 0).copy_from(&f);
        let c = circumferential.normalize();
        Self {
            f: f3,
            circumferential: Vector3::new(c.x, c.y, 0.0),
        }
    }

    pub fn jacobian(&self) -> f64 {
        self.f.determinant()
    }

    pub fn right_cauchy_green(&self) -> Matrix3<f64> {
        self.f.transpose() * self.f
    }

    /// Reference fiber directions `cos(phi) e_theta +/- sin(phi) e_z`.
    pub fn fiber_directions(&self, phi_deg: f64) -> [Vector3<f64>; 2] {
        let (s, c) = phi_deg.to_radians().sin_cos();
        let ez = Vector3::z();
        [
            self.circumferential * c + ez * s,
            self.circumferential * c - ez * s,
        ]
    }

    fn checked_jacobian(&self) -> Result<f64, ConstitutiveError> {
        let j = self.jacobian();
        if j > 0.0 && j.is_finite() {
            Ok(j)
        } else {
            Err(ConstitutiveError::NonPositiveJacobian(j))
        }
    }
}

/// Energy of one fiber family as a function of its invariant `I4` (kPa).
pub fn fiber_family_energy(i4: f64, k1: f64, k2: f64) -> f64 {
    fiber_energy(i4 - 1.0, k1, k2)
}

/// `I4 - 1 = a0 . (C - I) a0` for a unit `a0`, formed from `C - I` so the
/// reference state gives exactly zero.
fn fiber_excess(a0: &Vector3<f64>, c: &Matrix3<f64>) -> f64 {
    a0.dot(&((c - Matrix3::identity()) * a0))
}

fn fiber_energy(e: f64, k1: f64, k2: f64) -> f64 {
    if e <= 0.0 {
        return 0.0;
    }
    k1 / (2.0 * k2) * ((k2 * e * e).exp() - 1.0)
}

/// First and second derivatives of the family energy with respect to `I4`,
/// given `e = I4 - 1`.
fn fiber_derivatives(e: f64, k1: f64, k2: f64) -> (f64, f64) {
    if e <= 0.0 {
        return (0.0, 0.0);
    }
    let ex = (k2 * e * e).exp();
    (k1 * e * ex, k1 * (1.0 + 2.0 * k2 * e * e) * ex)
}

pub fn strain_energy(state: &DeformationState, mat: &MaterialParams) -> Result<f64, ConstitutiveError> {
    let (lambda, mu) = mat.lame();
    strain_energy_with(state, mat, lambda, mu)
}

fn strain_energy_with(state: &DeformationState, mat: &MaterialParams, lambda: f64, mu: f64) -> Result<f64, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let c = state.right_cauchy_green();
    let ln_j = j.ln();
    let mut w = 0.5 * mu * (c.trace() - 3.0) - mu * ln_j + 0.5 * lambda * ln_j * ln_j;
    if mat.has_fibers {
        for a in state.fiber_directions(mat.phi) {
            w += fiber_energy(fiber_excess(&a, &c), mat.k1, mat.k2);
        }
    }
    Ok(w)
}

/// Second Piola-Kirchhoff stress (kPa).
pub fn second_pk(state: &DeformationState, mat: &MaterialParams) -> Result<Matrix3<f64>, ConstitutiveError> {
    let (lambda, mu) = mat.lame();
    second_pk_with(state, mat, lambda, mu)
}

fn second_pk_with(state: &DeformationState, mat: &MaterialParams, lambda: f64, mu: f64) -> Result<Matrix3<f64>, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let c = state.right_cauchy_green();
    let c_inv = c.try_inverse().ok_or(ConstitutiveError::NonPositiveJacobian(j))?;
    let mut s = (Matrix3::identity() - c_inv) * mu + c_inv * (lambda * j.ln());
    if mat.has_fibers {
        for a in state.fiber_directions(mat.phi) {
            let (d1, _) = fiber_derivatives(fiber_excess(&a, &c), mat.k1, mat.k2);
            if d1 != 0.0 {
                s += a * a.transpose() * (2.0 * d1);
            }
        }
    }
    Ok(s)
}

/// Cauchy stress `sigma = J^-1 F S F^T` (kPa).
pub fn cauchy_stress(state: &DeformationState, mat: &MaterialParams) -> Result<Matrix3<f64>, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let (lambda, mu) = mat.lame();
    let b = state.f * state.f.transpose();
    let mut sigma = (b - Matrix3::identity()) * (mu / j) + Matrix3::identity() * (lambda * j.ln() / j);
    if mat.has_fibers {
        let c = state.right_cauchy_green();
        for a0 in state.fiber_directions(mat.phi) {
            let (d1, _) = fiber_derivatives(fiber_excess(&a0, &c), mat.k1, mat.k2);
            if d1 != 0.0 {
                let a = state.f * a0;
                sigma += a * a.transpose() * (2.0 * d1 / j);
            }
        }
    }
    Ok(sigma)
}

/// Material elasticity tensor `4 d^2 W / dC dC`.
pub fn material_tangent(state: &DeformationState, mat: &MaterialParams) -> Result<Tensor4, ConstitutiveError> {
    let (lambda, mu) = mat.lame();
    material_tangent_with(state, mat, lambda, mu)
}

fn material_tangent_with(state: &DeformationState, mat: &MaterialParams, lambda: f64, mu: f64) -> Result<Tensor4, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let c = state.right_cauchy_green();
    let ci = c.try_inverse().ok_or(ConstitutiveError::NonPositiveJacobian(j))?;
    let coef = mu - lambda * j.ln();
    let mut t = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t[a][b][k][l] = lambda * ci[(a, b)] * ci[(k, l)]
                        + coef * (ci[(a, k)] * ci[(b, l)] + ci[(a, l)] * ci[(b, k)]);
                }
            }
        }
    }
    if mat.has_fibers {
        for a0 in state.fiber_directions(mat.phi) {
            let (_, d2) = fiber_derivatives(fiber_excess(&a0, &c), mat.k1, mat.k2);
            if d2 != 0.0 {
                add_outer4(&mut t, &a0, 4.0 * d2);
            }
        }
    }
    Ok(t)
}

fn add_outer4(t: &mut Tensor4, a: &Vector3<f64>, scale: f64) {
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t[i][j][k][l] += scale * a[i] * a[j] * a[k] * a[l];
                }
            }
        }
    }
}

/// Spatial elasticity tensor, the push-forward `J^-1 F F F F : C`.
///
/// Minor and major symmetric. It relates the Truesdell rate of the Cauchy
/// stress to the rate of deformation `D`; the plain directional derivative
/// along `dF = L F` is `c : D + L sigma + sigma L^T - tr(L) sigma`.
pub fn spatial_tangent(state: &DeformationState, mat: &MaterialParams) -> Result<Tensor4, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let (lambda, mu) = mat.lame();
    let coef = (mu - lambda * j.ln()) / j;
    let id = Matrix3::<f64>::identity();
    let mut t = [[[[0.0; 3]; 3]; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t[a][b][k][l] = lambda / j * id[(a, b)] * id[(k, l)]
                        + coef * (id[(a, k)] * id[(b, l)] + id[(a, l)] * id[(b, k)]);
                }
            }
        }
    }
    if mat.has_fibers {
        let c = state.right_cauchy_green();
        for a0 in state.fiber_directions(mat.phi) {
            let (_, d2) = fiber_derivatives(fiber_excess(&a0, &c), mat.k1, mat.k2);
            if d2 != 0.0 {
                let a = state.f * a0;
                add_outer4(&mut t, &a, 4.0 * d2 / j);
            }
        }
    }
    Ok(t)
}

/// In-plane response used by the plane-strain element: first Piola-Kirchhoff
/// stress, its derivative with respect to `F` and the full Cauchy stress.
#[derive(Debug, Clone, Copy)]
pub struct PlaneResponse {
    pub first_pk: Matrix2<f64>,
    /// `d P_iJ / d F_kL` for in-plane indices, stored `[i][J][k][L]`.
    pub tangent: [[[[f64; 2]; 2]; 2]; 2],
    pub cauchy: Matrix3<f64>,
}

pub fn plane_response(state: &DeformationState, mat: &MaterialParams) -> Result<PlaneResponse, ConstitutiveError> {
    let (lambda, mu) = mat.lame();
    plane_response_with(state, mat, lambda, mu)
}

/// [`plane_response`] without the dilatational term `lambda/2 (ln J)^2`,
/// which a mixed element evaluates separately (see [`dilatation_energy`]).
pub fn plane_response_without_dilatation(state: &DeformationState, mat: &MaterialParams) -> Result<PlaneResponse, ConstitutiveError> {
    let (_, mu) = mat.lame();
    plane_response_with(state, mat, 0.0, mu)
}

/// Strain energy without the dilatational term.
pub fn strain_energy_without_dilatation(state: &DeformationState, mat: &MaterialParams) -> Result<f64, ConstitutiveError> {
    let (_, mu) = mat.lame();
    strain_energy_with(state, mat, 0.0, mu)
}

/// Dilatational energy `U(theta) = lambda/2 (ln theta)^2` with its first
/// and second derivatives in `theta`.
pub fn dilatation_energy(theta: f64, mat: &MaterialParams) -> [f64; 3] {
    let (lambda, _) = mat.lame();
    let l = theta.ln();
    [
        0.5 * lambda * l * l,
        lambda * l / theta,
        lambda * (1.0 - l) / (theta * theta),
    ]
}

fn plane_response_with(state: &DeformationState, mat: &MaterialParams, lambda: f64, mu: f64) -> Result<PlaneResponse, ConstitutiveError> {
    let j = state.checked_jacobian()?;
    let s = second_pk_with(state, mat, lambda, mu)?;
    let cm = material_tangent_with(state, mat, lambda, mu)?;
    let f = &state.f;
    let p3 = f * s;
    let first_pk = p3.fixed_view::<2, 2>(0, 0).into_owned();
    let mut tangent = [[[[0.0; 2]; 2]; 2]; 2];
    for i in 0..2 {
        for jj in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    let mut v = if i == k { s[(jj, l)] } else { 0.0 };
                    for a in 0..2 {
                        for b in 0..2 {
                            v += f[(i, a)] * f[(k, b)] * cm[a][jj][b][l];
                        }
                    }
                    tangent[i][jj][k][l] = v;
                }
            }
        }
    }
    let cauchy = p3 * f.transpose() / j;
    Ok(PlaneResponse {
        first_pk,
        tangent,
        cauchy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn media_base() -> MaterialParams {
        MaterialParams::isotropic(0.16, 0.45)
    }

    #[test]
    fn reference_state_is_stress_free() {
        let st = DeformationState::new(Matrix3::identity(), Vector3::x());
        for name in MaterialTable::NAMES {
            let m = *MaterialTable::default().by_name(name).unwrap();
            assert_eq!(strain_energy(&st, &m).unwrap(), 0.0);
            assert_eq!(cauchy_stress(&st, &m).unwrap(), Matrix3::zeros());
        }
    }

    #[test]
    fn simple_shear_energy_matches_hand_value() {
        let mut f = Matrix3::identity();
        f[(0, 1)] = 0.1;
        let st = DeformationState::new(f, Vector3::x());
        let m = media_base();
        let (_, mu) = m.lame();
        assert!((mu - 55.172_413_793).abs() < 1e-8);
        let w_mpa = strain_energy(&st, &m).unwrap() * 1e-3;
        assert!((w_mpa - 2.759e-4).abs() < 5e-8, "{w_mpa}");
    }

    #[test]
    fn adventitia_fiber_family_energy_at_ten_percent_stretch() {
        let adv = MaterialTable::default().adventitia;
        let per_family = fiber_family_energy(1.1f64 * 1.1, adv.k1, adv.k2);
        assert!((per_family - 0.1610).abs() < 5e-5, "{per_family}");
        // both families coincide at phi = 0
        let mut m = adv;
        m.phi = 0.0;
        let f = Matrix3::new(1.1, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let st = DeformationState::new(f, Vector3::x());
        let base = strain_energy(&st, &MaterialParams::isotropic(adv.e, adv.nu)).unwrap();
        let total = strain_energy(&st, &m).unwrap();
        assert!((total - base - 2.0 * per_family).abs() < 1e-12);
    }

    #[test]
    fn compressed_fibers_do_not_contribute() {
        let media = MaterialTable::default().media;
        let f = Matrix3::new(0.95, 0.0, 0.0, 0.0, 1.02, 0.0, 0.0, 0.0, 1.0);
        let st = DeformationState::new(f, Vector3::x());
        let iso = MaterialParams::isotropic(media.e, media.nu);
        assert_eq!(cauchy_stress(&st, &media).unwrap(), cauchy_stress(&st, &iso).unwrap());
        let ta = spatial_tangent(&st, &media).unwrap();
        let tb = spatial_tangent(&st, &iso).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn tangent_at_identity_is_linear_elasticity() {
        let m = media_base();
        let (lambda, mu) = m.lame();
        let st = DeformationState::new(Matrix3::identity(), Vector3::x());
        let t = spatial_tangent(&st, &m).unwrap();
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let expect = lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
                        assert!((t[i][j][k][l] - expect).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn calcification_to_lipid_stress_ratio_is_modulus_ratio() {
        let tab = MaterialTable::default();
        let f = Matrix3::new(1.001, 0.0, 0.0, 0.0, 1.001, 0.0, 0.0, 0.0, 1.0);
        let st = DeformationState::new(f, Vector3::x());
        let sc = cauchy_stress(&st, &tab.calcification).unwrap();
        let sl = cauchy_stress(&st, &tab.lipid_rich).unwrap();
        assert!((sc[(0, 0)] / sl[(0, 0)] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn inverted_state_is_rejected() {
        let f = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let st = DeformationState::new(f, Vector3::x());
        assert!(matches!(
            strain_energy(&st, &media_base()),
            Err(ConstitutiveError::NonPositiveJacobian(_))
        ));
    }

    #[test]
    fn table_values() {
        let t = MaterialTable::default();
        assert_eq!(material_of(MaterialKey::Plaque(PlaqueComponent::Calcification)).e, 1.6);
        assert!(!t.calcification.has_fibers);
        assert_eq!(material_of(MaterialKey::Layer(Layer::Media)).phi, 5.76);
        assert_eq!(t.normal_intima, t.fibrotic);
        for name in MaterialTable::NAMES {
            t.by_name(name).unwrap().validate().unwrap();
        }
    }
}
