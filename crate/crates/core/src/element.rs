//! Bilinear quadrilateral on the reference square `[-1, 1]^2` with 2x2 Gauss
//! quadrature. `det J` follows the reference-square convention, so a unit
//! square element has `det J = 0.25` and quadrature weights of 1.

use nalgebra::{Matrix2, Vector2};

use crate::geometry::Vec2;

const G: f64 = 0.577_350_269_189_625_8;

/// Gauss points `(xi, eta)`, all with weight 1.
pub const GAUSS_2X2: [(f64, f64); 4] = [(-G, -G), (G, -G), (G, G), (-G, G)];

/// Reference corner coordinates in counterclockwise order.
pub const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
        n[a] = 0.25 * (1.0 + xa * xi) * (1.0 + ya * eta);
    }
    n
}

/// Shape function derivatives `[dN/dxi, dN/deta]` per node.
pub fn shape_derivatives(xi: f64, eta: f64) -> [Vector2<f64>; 4] {
    let mut d = [Vector2::zeros(); 4];
    for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
        d[a] = Vector2::new(0.25 * xa * (1.0 + ya * eta), 0.25 * ya * (1.0 + xa * xi));
    }
    d
}

/// Jacobian `dX/dxi` (columns are the xi and eta tangents).
pub fn jacobian(x: &[Vec2; 4], xi: f64, eta: f64) -> Matrix2<f64> {
    let d = shape_derivatives(xi, eta);
    let mut j = Matrix2::zeros();
    for a in 0..4 {
        j += x[a] * d[a].transpose();
    }
    j
}

/// Precomputed reference-configuration data at one quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    /// Spatial gradients `dN/dX` of the four shape functions.
    pub grad: [Vector2<f64>; 4],
    /// Quadrature weight times `det J` (reference area share).
    pub area: f64,
    /// Reference position.
    pub position: Vec2,
    pub det_j: f64,
}

/// Quadrature data for an element; `None` if any `det J <= 0`.
pub fn quad_points(x: &[Vec2; 4]) -> Option<[QuadPoint; 4]> {
    let mut out = [QuadPoint {
        grad: [Vector2::zeros(); 4],
        area: 0.0,
        position: Vec2::zeros(),
        det_j: 0.0,
    }; 4];
    for (q, &(xi, eta)) in GAUSS_2X2.iter().enumerate() {
        let j = jacobian(x, xi, eta);
        let det = j.determinant();
        if !(det > 0.0) {
            return None;
        }
        let jinv_t = j.try_inverse()?.transpose();
        let d = shape_derivatives(xi, eta);
        let n = shape(xi, eta);
        let mut grad = [Vector2::zeros(); 4];
        let mut pos = Vec2::zeros();
        for a in 0..4 {
            grad[a] = jinv_t * d[a];
            pos += x[a] * n[a];
        }
        out[q] = QuadPoint {
            grad,
            area: det,
            position: pos,
            det_j: det,
        };
    }
    Some(out)
}

/// `det J` at the four Gauss points.
pub fn gauss_jacobians(x: &[Vec2; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (q, &(xi, eta)) in GAUSS_2X2.iter().enumerate() {
        out[q] = jacobian(x, xi, eta).determinant();
    }
    out
}

/// Exact area of the bilinear element (sum of Gauss weights times `det J`).
pub fn area(x: &[Vec2; 4]) -> f64 {
    gauss_jacobians(x).iter().sum()
}
