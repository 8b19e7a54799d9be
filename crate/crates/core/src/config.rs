//! Plain-text `key = value` experiment configuration.
//!
//! ```text
//! # five spikes
//! sources = 0.2, 0.4, 0.6, 0.7, 0.75
//! amplitudes = 1, 1, 1, 1, 1
//! sigma = 0.1
//! m = 15
//! pi = 10
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated
//! keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::bounds::PVariant;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::model::{noise_grid, SampleGrid, SourceModel};

pub const KEYS: &[&str] = &[
    "sources",
    "amplitudes",
    "sigma",
    "m",
    "samples",
    "tau",
    "pi",
    "alpha",
    "iterations",
    "reference_iterations",
    "noise_iterations",
    "seed",
    "window_start",
    "window_end",
    "noise_grid",
    "p_variant",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sources: SourceModel,
    pub grid: SampleGrid,
    pub kernel: Kernel,
    pub tau: f64,
    pub pi: f64,
    pub alpha: f64,
    /// Iterations for `solve`.
    pub iterations: usize,
    /// Iterations of the run that fixes `lambda*_best` for the ratio experiments and bounds.
    pub reference_iterations: usize,
    /// Iterations of every clean and noisy solve in the noise sweep.
    pub noise_iterations: usize,
    pub seed: u64,
    /// Inclusive iterate window `(p_0, p_1)`.
    pub window: (usize, usize),
    pub noise_grid: Vec<f64>,
    pub p_variant: PVariant,
}

fn cfg_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), message: message.into() }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|_| cfg_err(key, format!("expected a number, got `{}`", v.trim())))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse::<usize>().map_err(|_| cfg_err(key, format!("expected a non-negative integer, got `{}`", v.trim())))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let items: Vec<&str> = v.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(cfg_err(key, "empty list"));
    }
    items.into_iter().map(|s| parse_f64(key, s)).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(cfg_err(&format!("line {}", n + 1), "expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(cfg_err(k, "unknown key"));
            }
            if kv.iter().any(|(e, _)| e == k) {
                return Err(cfg_err(k, "given more than once"));
            }
            kv.push((k.to_string(), v.to_string()));
        }
        let get = |k: &str| kv.iter().find(|(e, _)| e == k).map(|(_, v)| v.as_str());

        let locations = parse_list("sources", get("sources").ok_or_else(|| cfg_err("sources", "missing"))?)?;
        let amplitudes = parse_list("amplitudes", get("amplitudes").ok_or_else(|| cfg_err("amplitudes", "missing"))?)?;
        if locations.len() != amplitudes.len() {
            return Err(cfg_err(
                "amplitudes",
                format!("{} amplitudes for {} sources", amplitudes.len(), locations.len()),
            ));
        }
        let sources = SourceModel::new(locations, amplitudes).map_err(|e| cfg_err("sources", e.to_string()))?;

        let sigma = parse_f64("sigma", get("sigma").ok_or_else(|| cfg_err("sigma", "missing"))?)?;
        let kernel = Kernel::new(sigma).map_err(|e| cfg_err("sigma", e.to_string()))?;

        let grid = match (get("m"), get("samples")) {
            (Some(_), Some(_)) => return Err(cfg_err("samples", "give either `m` or `samples`, not both")),
            (Some(m), None) => SampleGrid::equispaced(parse_usize("m", m)?).map_err(|e| cfg_err("m", e.to_string()))?,
            (None, Some(s)) => {
                SampleGrid::new(parse_list("samples", s)?).map_err(|e| cfg_err("samples", e.to_string()))?
            }
            (None, None) => return Err(cfg_err("m", "missing (or give `samples`)")),
        };

        let num = |k: &str, default: f64| get(k).map_or(Ok(default), |v| parse_f64(k, v));
        let int = |k: &str, default: usize| get(k).map_or(Ok(default), |v| parse_usize(k, v));

        let tau = num("tau", 1e5)?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(cfg_err("tau", "must be positive"));
        }
        let pi = num("pi", 2.0 * sources.l1_norm())?;
        if !(pi.is_finite() && pi > 0.0) {
            return Err(cfg_err("pi", "must be positive"));
        }
        let alpha = num("alpha", 0.25)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(cfg_err("alpha", "must lie in (0, 1)"));
        }
        let iterations = int("iterations", 500)?;
        let reference_iterations = int("reference_iterations", 500)?;
        let noise_iterations = int("noise_iterations", 100)?;
        let seed = match get("seed") {
            Some(v) => {
                v.trim().parse::<u64>().map_err(|_| cfg_err("seed", format!("expected an integer, got `{v}`")))?
            }
            None => 0,
        };
        let window = (int("window_start", 20)?, int("window_end", 270)?);
        if window.0 < 1 || window.0 > window.1 {
            return Err(cfg_err("window_start", "need 1 <= window_start <= window_end"));
        }
        if window.1 >= reference_iterations {
            return Err(cfg_err("window_end", "must be below reference_iterations"));
        }
        let noise_grid = match get("noise_grid") {
            Some(v) => {
                let g = parse_list("noise_grid", v)?;
                if g.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(cfg_err("noise_grid", "values must be >= 0"));
                }
                g
            }
            None => noise_grid(),
        };
        let p_variant = match get("p_variant").unwrap_or("theorem") {
            "theorem" => PVariant::Theorem,
            "lemma" => PVariant::Lemma,
            other => return Err(cfg_err("p_variant", format!("expected `theorem` or `lemma`, got `{other}`"))),
        };

        Ok(Self {
            sources,
            grid,
            kernel,
            tau,
            pi,
            alpha,
            iterations,
            reference_iterations,
            noise_iterations,
            seed,
            window,
            noise_grid,
            p_variant,
        })
    }

    /// Every setting except the seed, one `key=value` per line in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sources={}", fmt_list(self.sources.locations()));
        let _ = writeln!(s, "amplitudes={}", fmt_list(self.sources.amplitudes()));
        let _ = writeln!(s, "sigma={}", self.kernel.sigma());
        let _ = writeln!(s, "samples={}", fmt_list(self.grid.samples()));
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "pi={}", self.pi);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "reference_iterations={}", self.reference_iterations);
        let _ = writeln!(s, "noise_iterations={}", self.noise_iterations);
        let _ = writeln!(s, "window_start={}", self.window.0);
        let _ = writeln!(s, "window_end={}", self.window.1);
        let _ = writeln!(s, "noise_grid={}", fmt_list(&self.noise_grid));
        let _ = writeln!(s, "p_variant={}", if self.p_variant == PVariant::Lemma { "lemma" } else { "theorem" });
        s
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Comment line written at the top of every output file.
    pub fn provenance_line(&self) -> String {
        format!("# config_hash={} seed={}", self.hash(), self.seed)
    }
}
