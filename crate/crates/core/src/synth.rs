//! Seeded synthetic case bundles: a straight vessel along `z` with a
//! variable-thickness intima whose plaque layout changes from slice to slice.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::case_io::{CaseBundle, Centerline, CenterlinePoint, HuVolume, IntimaMask, SliceContour};
use crate::config::RunConfig;
use crate::geometry::Vec2;
use crate::gmm::{PlaqueComponent, UNLABELED};
use crate::isr::{CenterlineProfile, ProfileSample};

/// Nominal HU mean and standard deviation per component.
pub const HU_MODEL: [(f64, f64); 4] = [(20.0, 10.0), (90.0, 20.0), (180.0, 25.0), (500.0, 40.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCaseParams {
    pub n_slices: usize,
    /// Voxels between consecutive slices.
    pub slice_stride: usize,
    /// Isotropic voxel size (mm).
    pub voxel: f64,
    pub lumen_radius: f64,
    pub intima_thickness: f64,
    pub contour_points: usize,
    pub seed: u64,
}

impl Default for SynthCaseParams {
    fn default() -> Self {
        Self {
            n_slices: 20,
            slice_stride: 6,
            voxel: 0.2,
            lumen_radius: 1.5,
            intima_thickness: 0.6,
            contour_points: 96,
            seed: 1,
        }
    }
}

/// A synthetic bundle plus its generating per-voxel labels.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub bundle: CaseBundle,
    pub truth: Vec<u8>,
}

/// Plaque layout of one slice.
#[derive(Debug, Clone, Copy)]
struct SliceLayout {
    lumen_radius: f64,
    thickness: f64,
    eccentricity: f64,
    /// Calcified arc (degrees) centered at 0 degrees.
    calc_arc: f64,
    /// Lipid-rich arc (degrees) centered at 180 degrees.
    lipid_arc: f64,
}

impl SliceLayout {
    fn outer_radius(&self, theta: f64) -> f64 {
        self.lumen_radius + self.thickness * (1.0 + self.eccentricity * theta.cos())
    }

    fn component(&self, theta: f64, depth: f64) -> PlaqueComponent {
        let ang = angle_deg(theta);
        let from0 = ang.min(360.0 - ang);
        let from180 = (ang - 180.0).abs();
        if from0 <= self.calc_arc / 2.0 {
            PlaqueComponent::Calcification
        } else if from180 <= self.lipid_arc / 2.0 && depth > 0.3 {
            PlaqueComponent::LipidRich
        } else if depth < 0.3 {
            PlaqueComponent::NormalIntima
        } else {
            PlaqueComponent::Fibrotic
        }
    }
}

fn angle_deg(theta: f64) -> f64 {
    theta.rem_euclid(TAU).to_degrees()
}

fn layout(params: &SynthCaseParams, k: usize) -> SliceLayout {
    let t = if params.n_slices > 1 {
        k as f64 / (params.n_slices - 1) as f64
    } else {
        0.5
    };
    let bump = (PI * t).sin();
    SliceLayout {
        lumen_radius: params.lumen_radius * (1.0 - 0.15 * bump),
        thickness: params.intima_thickness * (1.0 + 0.5 * bump),
        eccentricity: 0.4 * bump,
        calc_arc: 30.0 + 210.0 * bump * bump,
        lipid_arc: 40.0 + 60.0 * (2.0 * PI * t).sin().abs(),
    }
}

/// Generates a bundle with `n_slices` slices.
pub fn synth_case(params: &SynthCaseParams) -> SynthCase {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let h = params.voxel;
    let max_r = params.lumen_radius + 1.6 * params.intima_thickness + 1.0;
    let nxy = (2.0 * max_r / h).ceil() as usize + 1;
    let half = (nxy - 1) as f64 * h / 2.0;
    let nz = (params.n_slices.max(1) - 1) * params.slice_stride + 1 + 2 * params.slice_stride;
    let dims = [nxy, nxy, nz];
    let origin = [-half, -half, 0.0];
    let n = nxy * nxy * nz;
    let mut volume = HuVolume {
        dims,
        spacing: [h; 3],
        origin,
        values: vec![0; n],
    };
    let mut flags = vec![0u8; n];
    let mut truth = vec![UNLABELED; n];
    let layouts: Vec<SliceLayout> = (0..params.n_slices).map(|k| layout(params, k)).collect();
    let noise: Vec<Normal<f64>> = HU_MODEL.iter().map(|&(m, s)| Normal::new(m, s).expect("positive sd")).collect();
    let blood = Normal::new(350.0, 30.0).expect("positive sd");
    let fat = Normal::new(-80.0, 20.0).expect("positive sd");

    for idx in 0..n {
        let p = volume.position(idx);
        let kz = idx / (nxy * nxy);
        // nearest slice layout governs the voxel
        let slice = ((kz as f64 - params.slice_stride as f64) / params.slice_stride as f64)
            .round()
            .clamp(0.0, params.n_slices as f64 - 1.0) as usize;
        let lay = &layouts[slice];
        let r = (p.x * p.x + p.y * p.y).sqrt();
        let theta = p.y.atan2(p.x);
        let ro = lay.outer_radius(theta);
        let hu = if r < lay.lumen_radius {
            blood.sample(&mut rng)
        } else if r <= ro {
            let depth = (r - lay.lumen_radius) / (ro - lay.lumen_radius);
            let c = lay.component(theta, depth);
            flags[idx] = 1;
            truth[idx] = c as u8;
            noise[c.index()].sample(&mut rng)
        } else {
            fat.sample(&mut rng)
        };
        volume.values[idx] = hu.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    }

    let mut points = Vec::with_capacity(params.n_slices);
    let mut contours = Vec::with_capacity(params.n_slices);
    let mut samples = Vec::with_capacity(params.n_slices);
    let np = params.contour_points;
    for (k, lay) in layouts.iter().enumerate() {
        let kz = params.slice_stride * (k + 1);
        let z = origin[2] + kz as f64 * h;
        let s = if k == 0 { 0.0 } else { z - (origin[2] + params.slice_stride as f64 * h) };
        points.push(CenterlinePoint {
            s,
            position: Vector3::new(0.0, 0.0, z),
            tangent: Vector3::z(),
        });
        let lumen = (0..np)
            .map(|i| {
                let th = TAU * i as f64 / np as f64;
                Vec2::new(lay.lumen_radius * th.cos(), lay.lumen_radius * th.sin())
            })
            .collect();
        let outer = (0..np)
            .map(|i| {
                let th = TAU * i as f64 / np as f64;
                let r = lay.outer_radius(th);
                Vec2::new(r * th.cos(), r * th.sin())
            })
            .collect();
        contours.push(SliceContour {
            lumen,
            intima_outer: outer,
        });
        let d_pre = 2.0 * lay.lumen_radius;
        let d_post = 2.0 * params.lumen_radius * 1.05;
        let loss = 0.05 + 0.3 * (lay.calc_arc / 360.0) + rng.random_range(0.0..0.1);
        let in_stent = k >= 2 && k + 2 < params.n_slices;
        samples.push(ProfileSample {
            s,
            d_pre: Some(d_pre),
            d_post: Some(d_post),
            d_followup: in_stent.then(|| d_post * (1.0 - loss)),
            in_stent,
        });
    }

    SynthCase {
        bundle: CaseBundle {
            volume,
            mask: IntimaMask { dims, flags },
            centerline: Centerline { points },
            contours,
            profiles: CenterlineProfile { samples },
            config: RunConfig::default(),
        },
        truth,
    }
}
