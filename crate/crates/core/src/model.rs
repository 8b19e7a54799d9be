//! Ground-truth sources, sample grids and measurement synthesis.
//!
//! Measurement noise follows the uniform-positive protocol `w_j = w_c * X_j`
//! with `X_j ~ U[0, 1)`. It is *not* zero mean: it shifts `y` upwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::Kernel;

fn strictly_increasing_in_unit(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)) && xs.windows(2).all(|w| w[0] < w[1])
}

/// Point sources `x = sum_i a_i delta_{t_i}` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    locations: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl SourceModel {
    pub fn new(locations: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::InvalidArgument("need at least one source".into()));
        }
        if locations.len() != amplitudes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} locations but {} amplitudes",
                locations.len(),
                amplitudes.len()
            )));
        }
        if !strictly_increasing_in_unit(&locations) {
            return Err(Error::InvalidArgument("source locations must be strictly increasing in [0, 1]".into()));
        }
        if !amplitudes.iter().all(|a| a.is_finite() && *a > 0.0) {
            return Err(Error::InvalidArgument("amplitudes must be positive".into()));
        }
        Ok(Self { locations, amplitudes })
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// TV norm of the measure, i.e. the sum of amplitudes.
    pub fn l1_norm(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    pub fn amplitude_l2_norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Sample locations `s_1 < ... < s_m` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    samples: Vec<f64>,
}

impl SampleGrid {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("sample grid is empty".into()));
        }
        if !strictly_increasing_in_unit(&samples) {
            return Err(Error::InvalidArgument("samples must be strictly increasing in [0, 1]".into()));
        }
        Ok(Self { samples })
    }

    /// `m` equispaced samples including both endpoints; `m = 1` gives `{0.5}`.
    pub fn equispaced(m: usize) -> Result<Self> {
        match m {
            0 => Err(Error::InvalidArgument("sample grid is empty".into())),
            1 => Self::new(vec![0.5]),
            _ => Self::new((0..m).map(|j| j as f64 / (m - 1) as f64).collect()),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `Phi(t) = [phi(t - s_1), ..., phi(t - s_m)]`.
    pub fn feature_vector(&self, kernel: &Kernel, t: f64) -> Vec<f64> {
        self.samples.iter().map(|s| kernel.phi(t - s)).collect()
    }
}

/// Observations `y = sum_i a_i Phi(t_i) + w` together with the noise that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub grid: SampleGrid,
}

impl MeasurementSet {
    /// Measurements taken verbatim, with no record of noise.
    pub fn from_observations(grid: SampleGrid, y: Vec<f64>) -> Result<Self> {
        if y.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "observation length {} does not match grid size {}",
                y.len(),
                grid.len()
            )));
        }
        let w = vec![0.0; y.len()];
        Ok(Self { y, w, grid })
    }

    /// Clean part `y - w`.
    pub fn clean(&self) -> Vec<f64> {
        self.y.iter().zip(&self.w).map(|(y, w)| y - w).collect()
    }
}

pub fn synthesize(
    src: &SourceModel,
    grid: &SampleGrid,
    kernel: &Kernel,
    noise: Option<&[f64]>,
) -> Result<MeasurementSet> {
    let m = grid.len();
    let w = match noise {
        Some(w) if w.len() != m => {
            return Err(Error::InvalidArgument(format!("noise length {} does not match grid size {m}", w.len())))
        }
        Some(w) => w.to_vec(),
        None => vec![0.0; m],
    };
    let y = grid
        .samples()
        .iter()
        .zip(&w)
        .map(|(s, wj)| {
            let clean: f64 = src.locations().iter().zip(src.amplitudes()).map(|(t, a)| a * kernel.phi(t - s)).sum();
            clean + wj
        })
        .collect();
    Ok(MeasurementSet { y, w, grid: grid.clone() })
}

/// `w_j = w_c * X_j`, `X_j ~ U[0, 1)` i.i.d. from a ChaCha8 stream seeded with `seed`.
pub fn uniform_noise(m: usize, w_c: f64, seed: u64) -> Result<Vec<f64>> {
    if !(w_c.is_finite() && w_c >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise coefficient must be >= 0, got {w_c}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| w_c * rng.gen::<f64>()).collect())
}

/// The 33 noise coefficients of the sweep, ascending.
pub fn noise_grid() -> Vec<f64> {
    let mut out = Vec::with_capacity(33);
    for exp in [6, 5, 4] {
        let scale = 10f64.powi(-exp);
        out.extend([2.0, 4.0, 6.0, 8.0, 10.0].iter().map(|c| c * scale));
    }
    for exp in [3, 2] {
        let scale = 10f64.powi(-exp);
        out.extend((2..=10).map(|c| c as f64 * scale));
    }
    out
}
