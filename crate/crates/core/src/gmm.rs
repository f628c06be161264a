//! Four-component 1D Gaussian mixture over intimal HU samples.
//!
//! Fitting is fully deterministic: a Lloyd k-means pass seeded from fixed
//! per-component means provides the starting point, then EM runs to
//! convergence. After fitting, components are relabeled by ascending mean so
//! the k-th component is always the k-th [`PlaqueComponent`].

use std::f64::consts::PI;

use thiserror::Error;

use crate::case_io::CaseBundle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("empty or too small sample set ({0} samples)")]
    EmptySampleSet(usize),
    #[error("initial means must be finite and strictly ascending: {0:?}")]
    InvalidSeeds([f64; 4]),
    #[error("invalid setting {name} = {value}")]
    InvalidSetting { name: &'static str, value: f64 },
    #[error("log-likelihood became non-finite at iteration {0}")]
    NonFiniteLikelihood(usize),
}

/// Plaque tissue classes in ascending nominal HU order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PlaqueComponent {
    LipidRich = 0,
    Fibrotic = 1,
    NormalIntima = 2,
    Calcification = 3,
}

impl PlaqueComponent {
    pub const ALL: [PlaqueComponent; 4] = [
        PlaqueComponent::LipidRich,
        PlaqueComponent::Fibrotic,
        PlaqueComponent::NormalIntima,
        PlaqueComponent::Calcification,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PlaqueComponent::LipidRich => "lipid_rich",
            PlaqueComponent::Fibrotic => "fibrotic",
            PlaqueComponent::NormalIntima => "normal_intima",
            PlaqueComponent::Calcification => "calcification",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

impl GaussianComponent {
    fn log_weighted_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.weight.ln() - 0.5 * (2.0 * PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

/// Tunables for initialization and EM.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSettings {
    pub initial_means: [f64; 4],
    pub variance_floor: f64,
    pub weight_epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            initial_means: [20.0, 90.0, 180.0, 500.0],
            variance_floor: 1.0,
            weight_epsilon: 1e-6,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

const KMEANS_MAX_ITER: usize = 100;

fn nearest(means: &[f64; 4], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = (x - means[0]).abs();
    for (k, &m) in means.iter().enumerate().skip(1) {
        let d = (x - m).abs();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Lloyd k-means from fixed seeds; returns per-cluster (mean, variance, weight).
pub fn kmeans_init(samples: &[f64], settings: &GmmSettings) -> Result<[GaussianComponent; 4], GmmError> {
    if samples.is_empty() {
        return Err(GmmError::EmptySampleSet(0));
    }
    let seeds = settings.initial_means;
    if seeds.iter().any(|m| !m.is_finite()) || seeds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GmmError::InvalidSeeds(seeds));
    }
    let mut means = seeds;
    let mut assign: Vec<usize> = samples.iter().map(|&x| nearest(&means, x)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sum = [0.0; 4];
        let mut count = [0usize; 4];
        for (&x, &k) in samples.iter().zip(&assign) {
            sum[k] += x;
            count[k] += 1;
        }
        for k in 0..4 {
            if count[k] > 0 {
                means[k] = sum[k] / count[k] as f64;
            }
        }
        let mut changed = false;
        for (a, &x) in assign.iter_mut().zip(samples) {
            let k = nearest(&means, x);
            if k != *a {
                *a = k;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut sum = [0.0; 4];
    let mut count = [0usize; 4];
    for (&x, &k) in samples.iter().zip(&assign) {
        sum[k] += x;
        count[k] += 1;
    }
    let mut sq = [0.0; 4];
    let mut comps = [GaussianComponent {
        mean: 0.0,
        variance: settings.variance_floor,
        weight: settings.weight_epsilon,
    }; 4];
    for k in 0..4 {
        if count[k] > 0 {
            comps[k].mean = sum[k] / count[k] as f64;
        } else {
            comps[k].mean = seeds[k];
        }
    }
    for (&x, &k) in samples.iter().zip(&assign) {
        let d = x - comps[k].mean;
        sq[k] += d * d;
    }
    let n = samples.len() as f64;
    for k in 0..4 {
        if count[k] > 0 {
            comps[k].variance = (sq[k] / count[k] as f64).max(settings.variance_floor);
            comps[k].weight = count[k] as f64 / n;
        }
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    Ok(comps)
}

/// Fitted mixture, components indexed by [`PlaqueComponent`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub components: [GaussianComponent; 4],
    /// Mean per-sample log-likelihood at the returned parameters.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Mean log-likelihood before each M-step, then at the final parameters.
    pub history: Vec<f64>,
}

fn sort_by_mean(comps: &mut [GaussianComponent; 4]) {
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
}

/// E-step: accumulates responsibility-weighted sufficient statistics and
/// returns the mean log-likelihood.
fn e_step(samples: &[f64], comps: &[GaussianComponent; 4], stats: &mut [[f64; 3]; 4]) -> f64 {
    *stats = [[0.0; 3]; 4];
    let mut ll = 0.0;
    for &x in samples {
        let mut lp = [0.0; 4];
        let mut mx = f64::NEG_INFINITY;
        for k in 0..4 {
            lp[k] = comps[k].log_weighted_density(x);
            mx = mx.max(lp[k]);
        }
        let mut z = 0.0;
        for v in lp.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        ll += mx + z.ln();
        for k in 0..4 {
            let r = lp[k] / z;
            stats[k][0] += r;
            stats[k][1] += r * x;
            stats[k][2] += r * x * x;
        }
    }
    ll / samples.len() as f64
}

/// Standard EM for a 1D four-component mixture.
///
/// Stops when the change in mean log-likelihood drops below `tol` or after
/// `max_iter` M-steps. Variances are clamped at `variance_floor`; the clamp is
/// the constrained maximizer, so the likelihood stays monotone.
pub fn fit_em(
    samples: &[f64],
    init: &[GaussianComponent; 4],
    tol: f64,
    max_iter: usize,
    variance_floor: f64,
) -> Result<MixtureModel, GmmError> {
    if samples.len() < 4 {
        return Err(GmmError::EmptySampleSet(samples.len()));
    }
    if !(tol > 0.0) {
        return Err(GmmError::InvalidSetting { name: "tol", value: tol });
    }
    if !(variance_floor > 0.0) {
        return Err(GmmError::InvalidSetting {
            name: "variance_floor",
            value: variance_floor,
        });
    }
    let mut comps = *init;
    sort_by_mean(&mut comps);
    for c in comps.iter_mut() {
        c.variance = c.variance.max(variance_floor);
    }
    let mut stats = [[0.0; 3]; 4];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut ll = e_step(samples, &comps, &mut stats);
    if !ll.is_finite() {
        return Err(GmmError::NonFiniteLikelihood(0));
    }
    history.push(ll);
    let n = samples.len() as f64;
    while iterations < max_iter {
        for k in 0..4 {
            let [nk, sx, sxx] = stats[k];
            if nk <= 0.0 || !nk.is_normal() {
                // component lost all mass; keep its location, floor its spread
                comps[k].weight = f64::MIN_POSITIVE;
                comps[k].variance = comps[k].variance.max(variance_floor);
                continue;
            }
            let mean = sx / nk;
            let var = (sxx / nk - mean * mean).max(0.0);
            comps[k] = GaussianComponent {
                mean,
                variance: var.max(variance_floor),
                weight: nk / n,
            };
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        for c in comps.iter_mut() {
            c.weight /= total;
        }
        iterations += 1;
        let next = e_step(samples, &comps, &mut stats);
        if !next.is_finite() {
            return Err(GmmError::NonFiniteLikelihood(iterations));
        }
        history.push(next);
        let delta = (next - ll).abs();
        ll = next;
        if delta < tol {
            break;
        }
    }
    sort_by_mean(&mut comps);
    Ok(MixtureModel {
        components: comps,
        log_likelihood: ll,
        iterations,
        history,
    })
}

/// k-means initialization followed by EM, using `settings` throughout.
pub fn fit(samples: &[f64], settings: &GmmSettings) -> Result<MixtureModel, GmmError> {
    let init = kmeans_init(samples, settings)?;
    fit_em(samples, &init, settings.tol, settings.max_iter, settings.variance_floor)
}

impl MixtureModel {
    /// Posterior membership probabilities, evaluated with a max-shifted
    /// log-sum-exp so far tails never underflow to 0/0.
    pub fn posteriors(&self, hu: f64) -> [f64; 4] {
        let mut lp = [0.0; 4];
        let mut mx = f64::NEG_INFINITY;
        for k in 0..4 {
            lp[k] = self.components[k].log_weighted_density(hu);
            mx = mx.max(lp[k]);
        }
        let mut z = 0.0;
        for v in lp.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in lp.iter_mut() {
            *v /= z;
        }
        lp
    }

    /// Most probable component; exact ties go to the lower-HU component.
    pub fn classify(&self, hu: f64) -> PlaqueComponent {
        let p = self.posteriors(hu);
        let mut best = 0;
        for k in 1..4 {
            if p[k] > p[best] {
                best = k;
            }
        }
        PlaqueComponent::ALL[best]
    }

    /// Mixture density at `hu`.
    pub fn density(&self, hu: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.log_weighted_density(hu).exp())
            .sum()
    }

    /// Weighted density of a single component at `hu`.
    pub fn component_density(&self, k: PlaqueComponent, hu: f64) -> f64 {
        self.components[k.index()].log_weighted_density(hu).exp()
    }

    /// HU values in `(lo, hi)` where the hard classification changes, sorted.
    ///
    /// Each pairwise equal-score locus is a root of a quadratic; a root is kept
    /// when the two labels on either side of it differ.
    pub fn decision_boundaries(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut roots = Vec::new();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let (a, b) = (&self.components[i], &self.components[j]);
                // log w N(x) = -x^2/(2v) + x m/v + const
                let qa = -0.5 / a.variance + 0.5 / b.variance;
                let qb = a.mean / a.variance - b.mean / b.variance;
                let qc = (a.weight.ln() - 0.5 * (2.0 * PI * a.variance).ln() - a.mean * a.mean / (2.0 * a.variance))
                    - (b.weight.ln() - 0.5 * (2.0 * PI * b.variance).ln() - b.mean * b.mean / (2.0 * b.variance));
                if qa.abs() < 1e-300 {
                    if qb != 0.0 {
                        roots.push(-qc / qb);
                    }
                } else {
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        let q = -0.5 * (qb + qb.signum() * sq);
                        if q != 0.0 {
                            roots.push(q / qa);
                            roots.push(qc / q);
                        } else {
                            roots.push(-qb / (2.0 * qa));
                        }
                    }
                }
            }
        }
        roots.retain(|r| r.is_finite() && *r > lo && *r < hi);
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        roots
            .into_iter()
            .filter(|&r| {
                let h = 1e-6 * (1.0 + r.abs());
                self.classify(r - h) != self.classify(r + h)
            })
            .collect()
    }
}

/// Voxel label value for voxels outside the intima mask.
pub const UNLABELED: u8 = u8::MAX;

/// Dense per-voxel label map aligned with the volume; unmasked voxels hold
/// [`UNLABELED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn get(&self, index: usize) -> Option<PlaqueComponent> {
        PlaqueComponent::from_index(self.labels[index] as usize)
    }

    pub fn histogram(&self) -> [usize; 4] {
        let mut h = [0; 4];
        for &l in &self.labels {
            if (l as usize) < 4 {
                h[l as usize] += 1;
            }
        }
        h
    }
}

/// HU values of every masked voxel, in voxel order.
pub fn masked_samples(bundle: &CaseBundle) -> Vec<f64> {
    bundle
        .volume
        .values
        .iter()
        .zip(&bundle.mask.flags)
        .filter(|(_, &m)| m != 0)
        .map(|(&v, _)| v as f64)
        .collect()
}

pub fn classify_volume(bundle: &CaseBundle, model: &MixtureModel) -> LabelVolume {
    // HU is a 16-bit integer; classify each distinct value once
    let mut cache = std::collections::HashMap::new();
    let labels = bundle
        .volume
        .values
        .iter()
        .zip(&bundle.mask.flags)
        .map(|(&v, &m)| {
            if m == 0 {
                UNLABELED
            } else {
                *cache.entry(v).or_insert_with(|| model.classify(v as f64) as u8)
            }
        })
        .collect();
    LabelVolume {
        dims: bundle.volume.dims,
        labels,
    }
}
