//! Support and amplitude recovery from a dual certificate.

use std::io::Write;

use nalgebra::DMatrix;

use crate::certificate::{Certificate, DEFAULT_GRID_POINTS, DEFAULT_MERGE_TOL};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::SampleGrid;
use crate::numerics::{self, DenseMatrix};

/// Maximisers with `q >= 1 - SUPPORT_TOL` are taken as recovered sources.
pub const SUPPORT_TOL: f64 = 1e-3;
/// Relative singular-value floor below which `Phi(t)` counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub locations: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// `||Phi(t) a - y||_2`.
    pub residual_norm: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

/// `m x k` matrix with columns `Phi(t_i)`.
pub fn build_phi(grid: &SampleGrid, kernel: &Kernel, locations: &[f64]) -> DenseMatrix {
    DMatrix::from_fn(grid.len(), locations.len(), |j, i| kernel.phi(locations[i] - grid.samples()[j]))
}

/// Least-squares amplitudes `argmin ||Phi(t) a - y||`.
pub fn recover_amplitudes(grid: &SampleGrid, kernel: &Kernel, locations: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if locations.is_empty() {
        return Err(Error::EmptySupport);
    }
    if locations.len() > grid.len() {
        return Err(Error::InsufficientSamples { needed: locations.len(), available: grid.len() });
    }
    if y.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "observation length {} does not match grid size {}",
            y.len(),
            grid.len()
        )));
    }
    let phi = build_phi(grid, kernel, locations);
    let sv = numerics::singular_values(&phi)?;
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    if smin <= RANK_TOL * smax {
        return Err(Error::RankDeficient { sigma_min: smin, sigma_max: smax });
    }
    numerics::least_squares(&phi, y)
}

/// Support from the near-1 maximisers of `q`, then least-squares amplitudes.
pub fn recover(cert: &Certificate<'_>, y: &[f64]) -> Result<RecoveryResult> {
    let ms = cert.global_maximizers(DEFAULT_GRID_POINTS, DEFAULT_MERGE_TOL)?;
    let locations: Vec<f64> =
        ms.locations.iter().zip(&ms.values).filter(|(_, v)| **v >= 1.0 - SUPPORT_TOL).map(|(t, _)| *t).collect();
    if locations.is_empty() {
        return Err(Error::EmptySupport);
    }
    let (grid, kernel) = (cert.grid(), cert.kernel());
    let amplitudes = recover_amplitudes(grid, &kernel, &locations, y)?;
    let phi = build_phi(grid, &kernel, &locations);
    let s = numerics::svd(&phi)?;
    let fit = &phi * nalgebra::DVector::from_column_slice(&amplitudes);
    let residual_norm = fit.iter().zip(y).map(|(f, y)| (f - y).powi(2)).sum::<f64>().sqrt();
    Ok(RecoveryResult { locations, amplitudes, residual_norm, sigma_max: s.sigma_max(), sigma_min: s.sigma_min() })
}

impl RecoveryResult {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// `(index, t, a)` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "t", "a"])?;
        for (i, (t, a)) in self.locations.iter().zip(&self.amplitudes).enumerate() {
            w.write_record([(i + 1).to_string(), t.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "sources={} residual_norm={:e} sigma_max={:e} sigma_min={:e}",
            self.len(),
            self.residual_norm,
            self.sigma_max,
            self.sigma_min
        )
    }
}
