//! Layered cross-section meshes.
//!
//! A slice mesh is a structured annular grid of bilinear quads: `n_sectors`
//! rays from the lumen centroid, and along each ray the intima rings (lumen to
//! intima-outer contour), then media and adventitia rings offset along the
//! outward normal of the intima-outer contour. Sectors run counterclockwise
//! starting at the direction of the first lumen contour point.
//!
//! Numbering is sector-major: node `(s, r)` is `s * (rings + 1) + r` and
//! element `(s, r)` is `s * rings + r`, with `r = 0` at the lumen.

use std::f64::consts::TAU;
use std::io::{self, Write};

use thiserror::Error;

use crate::constitutive::{Layer, MaterialKey, MaterialParams, MaterialTable};
use crate::element;
use crate::geometry::{self, Vec2};
use crate::gmm::PlaqueComponent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("sector {sector}: lumen and intima-outer contours cross along the ray")]
    ContourCrossing { sector: usize },
    #[error("element {element} has a non-positive Jacobian")]
    DegenerateElement { element: usize },
    #[error("no labeled samples for this slice")]
    NoSamplesForSlice,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshParams {
    /// Media thickness (mm).
    pub t_media: f64,
    /// Adventitia thickness (mm).
    pub t_adventitia: f64,
    pub n_sectors: usize,
    /// Ring counts for intima, media, adventitia.
    pub rings: [usize; 3],
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            t_media: 0.32,
            t_adventitia: 0.34,
            n_sectors: 128,
            rings: [8, 4, 4],
        }
    }
}

impl MeshParams {
    pub fn total_rings(&self) -> usize {
        self.rings.iter().sum()
    }
}

/// Structured topology of a slice mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Structure {
    pub n_sectors: usize,
    pub rings: [usize; 3],
    /// Angle of the first ray (radians).
    pub theta0: f64,
}

impl Structure {
    pub fn total_rings(&self) -> usize {
        self.rings.iter().sum()
    }

    /// `(sector, ring)` of an element.
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        let nr = self.total_rings();
        (e / nr, e % nr)
    }

    pub fn element_index(&self, sector: usize, ring: usize) -> usize {
        sector * self.total_rings() + ring
    }

    pub fn layer_of_ring(&self, ring: usize) -> Layer {
        if ring < self.rings[0] {
            Layer::Intima
        } else if ring < self.rings[0] + self.rings[1] {
            Layer::Media
        } else {
            Layer::Adventitia
        }
    }

    /// Center angle of a sector (radians).
    pub fn sector_angle(&self, sector: usize) -> f64 {
        self.theta0 + TAU * (sector as f64 + 0.5) / self.n_sectors as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionMesh {
    pub nodes: Vec<Vec2>,
    /// Counterclockwise node indices.
    pub elements: Vec<[usize; 4]>,
    pub element_layer: Vec<Layer>,
    pub element_material: Vec<MaterialKey>,
    /// Lumen loop, counterclockwise.
    pub lumen_boundary: Vec<usize>,
    /// Outer adventitia loop, counterclockwise.
    pub outer_boundary: Vec<usize>,
    /// Reference lumen centroid; origin of rays, stent and radius measures.
    pub center: Vec2,
    pub structure: Option<Structure>,
}

impl CrossSectionMesh {
    pub fn element_nodes(&self, e: usize) -> [Vec2; 4] {
        let c = self.elements[e];
        [self.nodes[c[0]], self.nodes[c[1]], self.nodes[c[2]], self.nodes[c[3]]]
    }

    pub fn element_centroid(&self, e: usize) -> Vec2 {
        let x = self.element_nodes(e);
        (x[0] + x[1] + x[2] + x[3]) * 0.25
    }

    pub fn element_area(&self, e: usize) -> f64 {
        element::area(&self.element_nodes(e))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.elements.len()).map(|e| self.element_area(e)).sum()
    }

    /// Mean distance of the lumen nodes from `center`.
    pub fn lumen_mean_radius(&self) -> f64 {
        self.lumen_boundary
            .iter()
            .map(|&i| (self.nodes[i] - self.center).norm())
            .sum::<f64>()
            / self.lumen_boundary.len() as f64
    }

    pub fn materials(&self, table: &MaterialTable) -> Vec<MaterialParams> {
        self.element_material.iter().map(|&k| table.material_of(k)).collect()
    }

    pub fn is_intima(&self, e: usize) -> bool {
        self.element_layer[e] == Layer::Intima
    }

    pub fn is_calcified(&self, e: usize) -> bool {
        self.element_material[e] == MaterialKey::Plaque(PlaqueComponent::Calcification)
    }

    pub fn write_nodes_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "node,x,y")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{i},{},{}", p.x, p.y)?;
        }
        Ok(())
    }

    pub fn write_elements_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "element,n0,n1,n2,n3,layer,material")?;
        for (e, c) in self.elements.iter().enumerate() {
            writeln!(
                w,
                "{e},{},{},{},{},{},{}",
                c[0],
                c[1],
                c[2],
                c[3],
                self.element_layer[e].name(),
                material_name(self.element_material[e])
            )?;
        }
        Ok(())
    }

    /// Legacy VTK unstructured grid; `points` overrides node positions (e.g.
    /// deformed), `cell_scalars` are written as named cell data.
    pub fn write_vtk<W: Write>(&self, mut w: W, points: Option<&[Vec2]>, cell_scalars: &[(&str, Vec<f64>)]) -> io::Result<()> {
        let pts = points.unwrap_or(&self.nodes);
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "vascmech cross-section")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", pts.len())?;
        for p in pts {
            writeln!(w, "{} {} 0", p.x, p.y)?;
        }
        let ne = self.elements.len();
        writeln!(w, "CELLS {} {}", ne, ne * 5)?;
        for c in &self.elements {
            writeln!(w, "4 {} {} {} {}", c[0], c[1], c[2], c[3])?;
        }
        writeln!(w, "CELL_TYPES {ne}")?;
        for _ in 0..ne {
            writeln!(w, "9")?;
        }
        writeln!(w, "CELL_DATA {ne}")?;
        writeln!(w, "SCALARS material int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for k in &self.element_material {
            writeln!(w, "{}", material_code(*k))?;
        }
        for (name, vals) in cell_scalars {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in vals {
                writeln!(w, "{v}")?;
            }
        }
        Ok(())
    }
}

pub fn material_name(k: MaterialKey) -> &'static str {
    match k {
        MaterialKey::Plaque(c) => c.name(),
        MaterialKey::Layer(l) => l.name(),
    }
}

fn material_code(k: MaterialKey) -> u8 {
    match k {
        MaterialKey::Plaque(c) => c as u8,
        MaterialKey::Layer(Layer::Intima) => PlaqueComponent::NormalIntima as u8,
        MaterialKey::Layer(Layer::Media) => 4,
        MaterialKey::Layer(Layer::Adventitia) => 5,
    }
}

/// Checks the contour invariants: at least 8 points, simple,
/// counterclockwise, lumen strictly inside the intima-outer contour.
pub fn validate_contours(lumen: &[Vec2], outer: &[Vec2]) -> Result<(), MeshError> {
    for (name, c) in [("lumen", lumen), ("intima_outer", outer)] {
        if c.len() < 8 {
            return Err(MeshError::InvalidContour(format!("{name} has {} points (< 8)", c.len())));
        }
        if c.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(MeshError::InvalidContour(format!("{name} has non-finite points")));
        }
        if !geometry::is_simple(c) {
            return Err(MeshError::InvalidContour(format!("{name} self-intersects")));
        }
        if geometry::signed_area(c) <= 0.0 {
            return Err(MeshError::InvalidContour(format!("{name} is not counterclockwise")));
        }
    }
    if !geometry::strictly_inside(lumen, outer) {
        return Err(MeshError::InvalidContour("lumen not strictly inside intima_outer".into()));
    }
    Ok(())
}

fn ray_dir(theta: f64) -> Vec2 {
    Vec2::new(theta.cos(), theta.sin())
}

/// Builds the layered slice mesh. Every intima element is labeled
/// `NormalIntima` until [`assign_regions`] runs.
pub fn build_slice_mesh(lumen: &[Vec2], intima_outer: &[Vec2], params: &MeshParams) -> Result<CrossSectionMesh, MeshError> {
    validate_contours(lumen, intima_outer)?;
    if params.n_sectors < 8 {
        return Err(MeshError::InvalidParameter(format!("n_sectors = {} < 8", params.n_sectors)));
    }
    if params.rings.iter().any(|&r| r == 0) {
        return Err(MeshError::InvalidParameter(format!("ring counts {:?} must be >= 1", params.rings)));
    }
    if !(params.t_media > 0.0 && params.t_adventitia > 0.0) {
        return Err(MeshError::InvalidParameter("layer thicknesses must be positive".into()));
    }
    let center = geometry::centroid(lumen);
    let d0 = lumen[0] - center;
    let theta0 = d0.y.atan2(d0.x);
    let n = params.n_sectors;

    let mut inner = Vec::with_capacity(n);
    let mut outer = Vec::with_capacity(n);
    for s in 0..n {
        let dir = ray_dir(theta0 + TAU * s as f64 / n as f64);
        let rl = geometry::ray_hit(lumen, center, dir);
        let ro = geometry::ray_hit(intima_outer, center, dir);
        match (rl, ro) {
            (Some(a), Some(b)) if b > a => {
                inner.push(center + dir * a);
                outer.push(center + dir * b);
            }
            _ => return Err(MeshError::ContourCrossing { sector: s }),
        }
    }
    // the first ray passes through lumen[0]; pin it to the exact point
    inner[0] = lumen[0];

    let mut normals = outward_normals(&outer);
    let structure = Structure {
        n_sectors: n,
        rings: params.rings,
        theta0,
    };
    const SMOOTHING_PASSES: usize = 20;
    for pass in 0..=SMOOTHING_PASSES {
        let mesh = assemble_grid(&inner, &outer, &normals, params, center, structure);
        match first_degenerate(&mesh) {
            None => return Ok(mesh),
            Some(e) if pass == SMOOTHING_PASSES => return Err(MeshError::DegenerateElement { element: e }),
            Some(_) => normals = smooth_normals(&normals),
        }
    }
    unreachable!()
}

fn outward_normals(loop_pts: &[Vec2]) -> Vec<Vec2> {
    let n = loop_pts.len();
    (0..n)
        .map(|i| {
            let t = loop_pts[(i + 1) % n] - loop_pts[(i + n - 1) % n];
            Vec2::new(t.y, -t.x).normalize()
        })
        .collect()
}

fn smooth_normals(normals: &[Vec2]) -> Vec<Vec2> {
    let n = normals.len();
    (0..n)
        .map(|i| (normals[(i + n - 1) % n] + normals[i] * 2.0 + normals[(i + 1) % n]).normalize())
        .collect()
}

fn assemble_grid(
    inner: &[Vec2],
    outer: &[Vec2],
    normals: &[Vec2],
    params: &MeshParams,
    center: Vec2,
    structure: Structure,
) -> CrossSectionMesh {
    let n = params.n_sectors;
    let [ri, rm, ra] = params.rings;
    let nr = ri + rm + ra;
    let mut nodes = Vec::with_capacity(n * (nr + 1));
    for s in 0..n {
        let (a, b, nrm) = (inner[s], outer[s], normals[s]);
        for j in 0..=ri {
            if j == ri {
                nodes.push(b);
            } else {
                nodes.push(a + (b - a) * (j as f64 / ri as f64));
            }
        }
        for j in 1..=rm {
            nodes.push(b + nrm * (params.t_media * j as f64 / rm as f64));
        }
        for j in 1..=ra {
            nodes.push(b + nrm * (params.t_media + params.t_adventitia * j as f64 / ra as f64));
        }
    }
    let node = |s: usize, r: usize| (s % n) * (nr + 1) + r;
    let mut elements = Vec::with_capacity(n * nr);
    let mut element_layer = Vec::with_capacity(n * nr);
    let mut element_material = Vec::with_capacity(n * nr);
    for s in 0..n {
        for r in 0..nr {
            elements.push([node(s, r), node(s, r + 1), node(s + 1, r + 1), node(s + 1, r)]);
            let layer = structure.layer_of_ring(r);
            element_layer.push(layer);
            element_material.push(match layer {
                Layer::Intima => MaterialKey::Plaque(PlaqueComponent::NormalIntima),
                l => MaterialKey::Layer(l),
            });
        }
    }
    CrossSectionMesh {
        nodes,
        elements,
        element_layer,
        element_material,
        lumen_boundary: (0..n).map(|s| node(s, 0)).collect(),
        outer_boundary: (0..n).map(|s| node(s, nr)).collect(),
        center,
        structure: Some(structure),
    }
}

fn first_degenerate(mesh: &CrossSectionMesh) -> Option<usize> {
    (0..mesh.elements.len()).find(|&e| element::gauss_jacobians(&mesh.element_nodes(e)).iter().any(|&d| !(d > 0.0)))
}

/// Labels each intima element with the component of the labeled sample
/// nearest to its centroid. Exact distance ties go to the lowest sample index.
pub fn assign_regions(mesh: &CrossSectionMesh, samples: &[(Vec2, PlaqueComponent)]) -> Result<CrossSectionMesh, MeshError> {
    if samples.is_empty() {
        return Err(MeshError::NoSamplesForSlice);
    }
    let mut out = mesh.clone();
    for e in 0..mesh.elements.len() {
        if mesh.element_layer[e] != Layer::Intima {
            continue;
        }
        let c = mesh.element_centroid(e);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, (p, _)) in samples.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        out.element_material[e] = MaterialKey::Plaque(samples[best].1);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshQuality {
    /// Minimum `det J` over all Gauss points (reference-square convention).
    pub min_jacobian: f64,
    /// Largest ratio of longest to shortest element edge.
    pub max_aspect_ratio: f64,
    pub total_area: f64,
}

pub fn mesh_quality(mesh: &CrossSectionMesh) -> MeshQuality {
    let mut min_j = f64::INFINITY;
    let mut max_ar: f64 = 0.0;
    let mut area = 0.0;
    for e in 0..mesh.elements.len() {
        let x = mesh.element_nodes(e);
        let dets = element::gauss_jacobians(&x);
        for d in dets {
            min_j = min_j.min(d);
            area += d;
        }
        let edges: Vec<f64> = (0..4).map(|i| (x[(i + 1) % 4] - x[i]).norm()).collect();
        let lo = edges.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = edges.iter().cloned().fold(0.0, f64::max);
        max_ar = max_ar.max(hi / lo);
    }
    MeshQuality {
        min_jacobian: min_j,
        max_aspect_ratio: max_ar,
        total_area: area,
    }
}

/// Synthetic calcification layouts for the morphology study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MorphologyPattern {
    Homogeneous(PlaqueComponent),
    /// Full-thickness calcified arc (degrees, > 180) starting at the first
    /// ray; the rest of the intima is fibrotic.
    CircumferentialCalc(f64),
    /// Calcified block centered at 0 degrees occupying the lumen-side half of
    /// the intima, with `behind` toward the media; the rest is fibrotic.
    AsymmetricBlock { arc: f64, behind: PlaqueComponent },
    /// Two full-thickness calcified blocks centered at 0 and 180 degrees.
    OpposingBlocks(f64),
}

impl MorphologyPattern {
    pub fn validate(&self) -> Result<(), MeshError> {
        let arc = match *self {
            MorphologyPattern::Homogeneous(_) => return Ok(()),
            MorphologyPattern::CircumferentialCalc(a) => {
                if a <= 180.0 {
                    return Err(MeshError::InvalidParameter(format!("circumferential arc {a} <= 180 degrees")));
                }
                a
            }
            MorphologyPattern::AsymmetricBlock { arc, .. } => arc,
            MorphologyPattern::OpposingBlocks(a) => {
                if a > 180.0 {
                    return Err(MeshError::InvalidParameter(format!("opposing blocks arc {a} > 180 degrees")));
                }
                a
            }
        };
        if !(arc > 0.0 && arc <= 360.0) {
            return Err(MeshError::InvalidParameter(format!("arc {arc} outside (0, 360]")));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match *self {
            MorphologyPattern::Homogeneous(c) => format!("homogeneous_{}", c.name()),
            MorphologyPattern::CircumferentialCalc(a) => format!("circumferential_{a}"),
            MorphologyPattern::AsymmetricBlock { arc, .. } => format!("asymmetric_block_{arc}"),
            MorphologyPattern::OpposingBlocks(a) => format!("opposing_blocks_{a}"),
        }
    }
}

/// Number of sectors covering `arc_deg` of `n` sectors.
pub fn arc_sectors(arc_deg: f64, n: usize) -> usize {
    ((arc_deg / 360.0 * n as f64).round() as usize).min(n)
}

/// Sectors of a block of `count` sectors centered on sector boundary/center
/// nearest to `center_deg`.
fn centered_block(center_deg: f64, count: usize, n: usize) -> Vec<usize> {
    let c = center_deg / 360.0 * n as f64;
    let start = (c - count as f64 / 2.0).round() as i64;
    (0..count as i64).map(|k| (start + k).rem_euclid(n as i64) as usize).collect()
}

/// Per-sector membership in the calcified part of a pattern.
pub fn calcified_sectors(pattern: &MorphologyPattern, n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    match *pattern {
        MorphologyPattern::Homogeneous(c) => {
            if c == PlaqueComponent::Calcification {
                mask.iter_mut().for_each(|m| *m = true);
            }
        }
        MorphologyPattern::CircumferentialCalc(a) => {
            for k in 0..arc_sectors(a, n) {
                mask[k] = true;
            }
        }
        MorphologyPattern::AsymmetricBlock { arc, .. } => {
            for k in centered_block(0.0, arc_sectors(arc, n), n) {
                mask[k] = true;
            }
        }
        MorphologyPattern::OpposingBlocks(a) => {
            let m = arc_sectors(a, n);
            for k in centered_block(0.0, m, n).into_iter().chain(centered_block(180.0, m, n)) {
                mask[k] = true;
            }
        }
    }
    mask
}

/// Geometry of a synthetic slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthGeometry {
    pub lumen_radius: f64,
    pub intima_thickness: f64,
    /// Relative thickness variation `t(theta) = t0 (1 + e cos theta)`; `e < 1`.
    pub eccentricity: f64,
    pub contour_points: usize,
    pub mesh: MeshParams,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self {
            lumen_radius: 1.5,
            intima_thickness: 0.6,
            eccentricity: 0.0,
            contour_points: 144,
            mesh: MeshParams {
                n_sectors: 72,
                rings: [6, 3, 3],
                ..MeshParams::default()
            },
        }
    }
}

impl SynthGeometry {
    pub fn contours(&self) -> (Vec<Vec2>, Vec<Vec2>) {
        let lumen = geometry::circle(Vec2::zeros(), self.lumen_radius, self.contour_points, 0.0);
        let outer = (0..self.contour_points)
            .map(|k| {
                let th = TAU * k as f64 / self.contour_points as f64;
                let r = self.lumen_radius + self.intima_thickness * (1.0 + self.eccentricity * th.cos());
                Vec2::new(r * th.cos(), r * th.sin())
            })
            .collect();
        (lumen, outer)
    }
}

/// Intima rings of a block belonging to the calcified (lumen-side) part.
pub fn block_calc_rings(intima_rings: usize) -> usize {
    intima_rings.div_ceil(2)
}

/// Synthetic slice realizing `pattern`.
pub fn synth_slice(pattern: &MorphologyPattern, geo: &SynthGeometry) -> Result<CrossSectionMesh, MeshError> {
    pattern.validate()?;
    let (lumen, outer) = geo.contours();
    let mut mesh = build_slice_mesh(&lumen, &outer, &geo.mesh)?;
    let st = mesh.structure.expect("structured mesh");
    let calc = calcified_sectors(pattern, st.n_sectors);
    let ri = st.rings[0];
    for e in 0..mesh.elements.len() {
        let (s, r) = st.element_position(e);
        if r >= ri {
            continue;
        }
        let comp = match *pattern {
            MorphologyPattern::Homogeneous(c) => c,
            MorphologyPattern::AsymmetricBlock { behind, .. } if calc[s] => {
                if r < block_calc_rings(ri) {
                    PlaqueComponent::Calcification
                } else {
                    behind
                }
            }
            _ if calc[s] => PlaqueComponent::Calcification,
            _ => PlaqueComponent::Fibrotic,
        };
        mesh.element_material[e] = MaterialKey::Plaque(comp);
    }
    Ok(mesh)
}

/// Elements radially behind the calcified part of an asymmetric block
/// (the non-calcified intima rings of the block sectors).
pub fn behind_block_elements(mesh: &CrossSectionMesh, pattern: &MorphologyPattern) -> Vec<usize> {
    let Some(st) = mesh.structure else { return vec![] };
    let calc = calcified_sectors(pattern, st.n_sectors);
    let ri = st.rings[0];
    (0..mesh.elements.len())
        .filter(|&e| {
            let (s, r) = st.element_position(e);
            calc[s] && r >= block_calc_rings(ri) && r < ri
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circles(r1: f64, r2: f64, n: usize) -> (Vec<Vec2>, Vec<Vec2>) {
        (
            geometry::circle(Vec2::zeros(), r1, n, 0.0),
            geometry::circle(Vec2::zeros(), r2, n, 0.0),
        )
    }

    fn params(n: usize, rings: [usize; 3]) -> MeshParams {
        MeshParams {
            t_media: 0.3,
            t_adventitia: 0.3,
            n_sectors: n,
            rings,
        }
    }

    #[test]
    fn counts_for_minimal_rings() {
        let (l, o) = circles(1.5, 2.0, 32);
        let m = build_slice_mesh(&l, &o, &params(8, [1, 1, 1])).unwrap();
        assert_eq!(m.nodes.len(), 32);
        assert_eq!(m.elements.len(), 24);
        assert!(mesh_quality(&m).min_jacobian > 0.0);
        let m = build_slice_mesh(&l, &o, &params(8, [2, 2, 2])).unwrap();
        assert_eq!(m.nodes.len(), 56);
        assert_eq!(m.elements.len(), 48);
    }

    #[test]
    fn eccentric_lumen_area() {
        let l = geometry::circle(Vec2::new(0.3, 0.0), 1.5, 256, 0.0);
        let o = geometry::circle(Vec2::zeros(), 2.4, 256, 0.0);
        let m = build_slice_mesh(&l, &o, &params(64, [4, 2, 2])).unwrap();
        let q = mesh_quality(&m);
        assert!(q.min_jacobian > 0.0);
        // intima area only: annulus between the two circles
        let intima: f64 = (0..m.elements.len()).filter(|&e| m.is_intima(e)).map(|e| m.element_area(e)).sum();
        let exact = std::f64::consts::PI * (2.4f64.powi(2) - 1.5f64.powi(2));
        assert!((intima / exact - 1.0).abs() < 0.01, "{intima} vs {exact}");
    }

    #[test]
    fn areas_match_polygon_difference() {
        let (l, o) = circles(1.5, 2.1, 96);
        let m = build_slice_mesh(&l, &o, &params(48, [3, 2, 2])).unwrap();
        let outer: Vec<Vec2> = m.outer_boundary.iter().map(|&i| m.nodes[i]).collect();
        let lumen: Vec<Vec2> = m.lumen_boundary.iter().map(|&i| m.nodes[i]).collect();
        let poly = geometry::signed_area(&outer) - geometry::signed_area(&lumen);
        assert!((m.total_area() / poly - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_square_quality() {
        let m = CrossSectionMesh {
            nodes: vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(1.0, 1.0),
                Vec2::new(0.0, 1.0),
            ],
            elements: vec![[0, 1, 2, 3]],
            element_layer: vec![Layer::Intima],
            element_material: vec![MaterialKey::Plaque(PlaqueComponent::Fibrotic)],
            lumen_boundary: vec![],
            outer_boundary: vec![],
            center: Vec2::zeros(),
            structure: None,
        };
        let q = mesh_quality(&m);
        assert!((q.min_jacobian - 0.25).abs() < 1e-15);
        assert!((q.max_aspect_ratio - 1.0).abs() < 1e-15);
        let mut inv = m.clone();
        inv.elements[0] = [0, 3, 2, 1];
        assert!(mesh_quality(&inv).min_jacobian < 0.0);
    }

    #[test]
    fn crossing_and_short_contours_are_rejected() {
        let (l, o) = circles(1.5, 2.0, 32);
        assert!(matches!(
            build_slice_mesh(&o, &l, &params(8, [1, 1, 1])),
            Err(MeshError::InvalidContour(_))
        ));
        let short = geometry::circle(Vec2::zeros(), 1.0, 6, 0.0);
        assert!(matches!(
            build_slice_mesh(&short, &o, &params(8, [1, 1, 1])),
            Err(MeshError::InvalidContour(_))
        ));
        assert!(matches!(
            build_slice_mesh(&l, &o, &params(6, [1, 1, 1])),
            Err(MeshError::InvalidParameter(_))
        ));
    }

    #[test]
    fn assign_all_fibrotic_and_bisected() {
        let (l, o) = circles(1.5, 2.1, 64);
        let m = build_slice_mesh(&l, &o, &params(32, [2, 1, 1])).unwrap();
        let all = assign_regions(&m, &[(Vec2::new(1.8, 0.0), PlaqueComponent::Fibrotic)]).unwrap();
        for e in 0..m.elements.len() {
            if m.is_intima(e) {
                assert_eq!(all.element_material[e], MaterialKey::Plaque(PlaqueComponent::Fibrotic));
            } else {
                assert_eq!(all.element_material[e], m.element_material[e]);
            }
        }
        let two = assign_regions(
            &m,
            &[
                (Vec2::new(1.8, 0.0), PlaqueComponent::Calcification),
                (Vec2::new(-1.8, 0.0), PlaqueComponent::LipidRich),
            ],
        )
        .unwrap();
        for e in (0..m.elements.len()).filter(|&e| m.is_intima(e)) {
            let c = m.element_centroid(e);
            let expect = if c.x > 0.0 {
                PlaqueComponent::Calcification
            } else {
                PlaqueComponent::LipidRich
            };
            assert_eq!(two.element_material[e], MaterialKey::Plaque(expect));
        }
        assert_eq!(assign_regions(&m, &[]), Err(MeshError::NoSamplesForSlice));
    }

    fn intima_calc_sectors(m: &CrossSectionMesh) -> Vec<usize> {
        let st = m.structure.unwrap();
        let mut v: Vec<usize> = (0..m.elements.len())
            .filter(|&e| m.is_calcified(e))
            .map(|e| st.element_position(e).0)
            .collect();
        v.dedup();
        v
    }

    #[test]
    fn synthetic_patterns() {
        let mut geo = SynthGeometry::default();
        geo.mesh.n_sectors = 36;
        let h = synth_slice(&MorphologyPattern::Homogeneous(PlaqueComponent::Fibrotic), &geo).unwrap();
        assert!((0..h.elements.len())
            .filter(|&e| h.is_intima(e))
            .all(|e| h.element_material[e] == MaterialKey::Plaque(PlaqueComponent::Fibrotic)));

        let c = synth_slice(&MorphologyPattern::CircumferentialCalc(270.0), &geo).unwrap();
        assert_eq!(intima_calc_sectors(&c).len(), 27);
        let ri = geo.mesh.rings[0];
        assert_eq!((0..c.elements.len()).filter(|&e| c.is_calcified(e)).count(), 27 * ri);

        let o = synth_slice(&MorphologyPattern::OpposingBlocks(60.0), &geo).unwrap();
        let s = intima_calc_sectors(&o);
        assert_eq!(s.len(), 12);
        // two antipodal bands of six
        let mut bands = calcified_sectors(&MorphologyPattern::OpposingBlocks(60.0), 36);
        assert!(bands[0] && bands[18] && bands[33] && bands[20]);
        bands.rotate_left(18);
        assert_eq!(bands, calcified_sectors(&MorphologyPattern::OpposingBlocks(60.0), 36));

        assert!(MorphologyPattern::CircumferentialCalc(120.0).validate().is_err());
        assert!(MorphologyPattern::AsymmetricBlock {
            arc: 0.0,
            behind: PlaqueComponent::LipidRich
        }
        .validate()
        .is_err());
    }

    #[test]
    fn asymmetric_block_layers() {
        let geo = SynthGeometry::default();
        let p = MorphologyPattern::AsymmetricBlock {
            arc: 90.0,
            behind: PlaqueComponent::LipidRich,
        };
        let m = synth_slice(&p, &geo).unwrap();
        let behind = behind_block_elements(&m, &p);
        assert_eq!(behind.len(), 18 * (geo.mesh.rings[0] - block_calc_rings(geo.mesh.rings[0])));
        for e in behind {
            assert_eq!(m.element_material[e], MaterialKey::Plaque(PlaqueComponent::LipidRich));
            assert!(m.element_centroid(e).x > 0.0);
        }
    }
}
