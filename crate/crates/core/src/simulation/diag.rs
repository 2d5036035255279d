use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::forest::{build_forest, leaf_diameter_profile, ForestConfig};
use crate::numeric::{derive_seed, mean_var};

/// Leaf-diameter study on uniform covariates: for every subsample size,
/// `forests` independent forests of `trees` trees grown on `n` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestDiagSpec {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<usize>,
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default = "default_forests")]
    pub forests: usize,
    #[serde(default = "default_theta")]
    pub theta: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
}

fn default_d() -> usize {
    1
}
fn default_n() -> usize {
    2048
}
fn default_s_grid() -> Vec<usize> {
    vec![64, 256, 1024]
}
fn default_trees() -> usize {
    4
}
fn default_forests() -> usize {
    50
}
fn default_theta() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.25
}
fn default_phi() -> f64 {
    0.9
}

impl Default for ForestDiagSpec {
    fn default() -> Self {
        ForestDiagSpec {
            d: default_d(),
            n: default_n(),
            s_grid: default_s_grid(),
            trees: default_trees(),
            forests: default_forests(),
            theta: default_theta(),
            alpha: default_alpha(),
            phi: default_phi(),
        }
    }
}

impl ForestDiagSpec {
    pub fn validate(&self, base: &str) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                pointer: format!("{base}/{field}"),
                message,
            })
        };
        if self.d == 0 {
            return bad("d", "d must be at least 1".into());
        }
        if self.forests < 2 {
            return bad("forests", "need at least 2 forests for a standard error".into());
        }
        if self.s_grid.is_empty() {
            return bad("s_grid", "s_grid is empty".into());
        }
        for (k, &s) in self.s_grid.iter().enumerate() {
            self.config(s, 0)
                .validate(self.n, self.n)
                .or_else(|e| bad(&format!("s_grid/{k}"), e.to_string()))?;
        }
        Ok(())
    }

    fn config(&self, s: usize, seed: u64) -> ForestConfig {
        ForestConfig {
            trees: self.trees,
            s,
            theta: self.theta,
            alpha: self.alpha,
            phi: self.phi,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagRow {
    pub s: usize,
    /// Average over forests of the mean (clipped) leaf diameter.
    pub mean_diameter: f64,
    pub se: f64,
    pub mean_max_diameter: f64,
    pub mean_axis_diameter: Vec<f64>,
    pub min_occupancy: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestDiagReport {
    pub spec: ForestDiagSpec,
    pub seed: u64,
    pub rows: Vec<DiagRow>,
    /// Gap over its standard error for each consecutive pair of `s` values.
    pub decrease_z: Vec<f64>,
}

impl ForestDiagReport {
    /// Every step decreases by more than `z` standard errors.
    pub fn strictly_decreasing(&self, z: f64) -> bool {
        self.decrease_z.iter().all(|&v| v > z)
    }
}

fn uniform_sample(d: usize, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cov: Vec<f64> = (0..2 * n * d).map(|_| rng.random::<f64>()).collect();
    let arms = (0..2 * n).map(|i| if i % 2 == 0 { Arm::Treated } else { Arm::Control }).collect();
    Dataset::from_parts(d, cov, arms, vec![0.0; 2 * n])
}

/// Grows the forests of the study and summarizes leaf diameters. Forest `r`
/// uses a fresh uniform sample, shared across the `s` grid.
pub fn forest_diag(spec: &ForestDiagSpec, seed: u64) -> Result<ForestDiagReport> {
    spec.validate("")?;
    let mut per_s: Vec<Vec<(f64, f64, Vec<f64>, usize)>> = vec![Vec::new(); spec.s_grid.len()];
    for r in 0..spec.forests {
        let ds = uniform_sample(spec.d, spec.n, derive_seed(seed, &[0xd1a6, r as u64]))?;
        let support: Vec<Vec<f64>> = ds.units(Arm::Treated).iter().map(|&i| ds.x(i).to_vec()).collect();
        for (k, &s) in spec.s_grid.iter().enumerate() {
            let cfg = spec.config(s, derive_seed(seed, &[r as u64, s as u64]));
            let f = build_forest(&ds, Arm::Treated, &cfg)?;
            let p = leaf_diameter_profile(&f, &support)?;
            let max_mean = p.per_tree_max.iter().sum::<f64>() / p.per_tree_max.len() as f64;
            per_s[k].push((p.mean_diameter, max_mean, p.mean_axis_diameter, p.min_occupancy));
        }
    }
    let rows: Vec<DiagRow> = spec
        .s_grid
        .iter()
        .zip(&per_s)
        .map(|(&s, v)| {
            let means: Vec<f64> = v.iter().map(|t| t.0).collect();
            let (m, var) = mean_var(&means);
            let r = means.len() as f64;
            let mut axis = vec![0.0; spec.d];
            for t in v {
                for p in 0..spec.d {
                    axis[p] += t.2[p] / r;
                }
            }
            DiagRow {
                s,
                mean_diameter: m,
                se: (var / (r - 1.0)).sqrt(),
                mean_max_diameter: v.iter().map(|t| t.1).sum::<f64>() / r,
                mean_axis_diameter: axis,
                min_occupancy: v.iter().map(|t| t.3).min().unwrap_or(0),
            }
        })
        .collect();
    let decrease_z = rows
        .windows(2)
        .map(|w| (w[0].mean_diameter - w[1].mean_diameter) / (w[0].se.powi(2) + w[1].se.powi(2)).sqrt())
        .collect();
    Ok(ForestDiagReport {
        spec: spec.clone(),
        seed,
        rows,
        decrease_z,
    })
}
