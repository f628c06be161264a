//! Vascular cross-section mechanics: plaque segmentation of HU volumes with
//! Gaussian mixtures, layered slice meshes, hyperelastic fiber-reinforced
//! wall materials, plane-strain balloon/stent simulation, stress statistics
//! and stress/restenosis correlation.

pub mod banded;
pub mod case_io;
pub mod config;
pub mod constitutive;
pub mod element;
pub mod fe;
pub mod geometry;
pub mod gmm;
pub mod isr;
pub mod mesh;
pub mod plot;
pub mod report;
pub mod simulate;
pub mod stress;
pub mod synth;
