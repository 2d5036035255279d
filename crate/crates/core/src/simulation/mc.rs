use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bound::{efficiency_bound, BoundReport};
use super::dgp::{draw_dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::estimators::EstimatorSpec;
use crate::numeric::{derive_seed, mean_var, ols_slope};
use crate::smoothers::{density_ratio_target, SmootherSpec};

const ESTIMATOR_STREAM: u64 = 0xe571;

/// One replication. Failed replications keep their seed and error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub tau_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub covered: Option<bool>,
    pub redraws: usize,
    pub error: Option<String>,
}

/// A statistic with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithSe {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    pub mean_tau_hat: f64,
    pub bias: WithSe,
    /// Population standard deviation of `tau_hat` across replications.
    pub sd: WithSe,
    pub rmse: WithSe,
    pub mean_sigma2_hat: WithSe,
    pub coverage: WithSe,
    /// `n * sd^2 / sigma^2`.
    pub efficiency_ratio: WithSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub n: usize,
    pub summary: McSummary,
    pub rows: Vec<McRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub dgp: DgpSpec,
    pub estimator: EstimatorSpec,
    pub seed: u64,
    pub replications: usize,
    pub bound: BoundReport,
    pub results: Vec<McResult>,
}

impl McReport {
    pub fn result(&self, n: usize) -> Option<&McResult> {
        self.results.iter().find(|r| r.n == n)
    }

    /// All rows, in `(n, replication)` order.
    pub fn rows(&self) -> impl Iterator<Item = &McRow> {
        self.results.iter().flat_map(|r| r.rows.iter())
    }

    /// Slope of `ln RMSE` on `ln n`.
    pub fn rmse_slope(&self) -> f64 {
        let x: Vec<f64> = self.results.iter().map(|r| (r.n as f64).ln()).collect();
        let y: Vec<f64> = self.results.iter().map(|r| r.summary.rmse.value.ln()).collect();
        ols_slope(&x, &y)
    }
}

/// Seed of replication `r` at sample size `n`.
pub fn replication_seed(seed: u64, n: usize, r: usize) -> u64 {
    derive_seed(seed, &[n as u64, r as u64])
}

/// Runs one replication: draws a sample and estimates on it.
pub fn run_replication(dgp: &DgpSpec, est: &EstimatorSpec, n: usize, r: usize, seed: u64, tau: f64) -> McRow {
    let s = replication_seed(seed, n, r);
    let mut row = McRow {
        n,
        replication: r,
        seed: s,
        tau_hat: None,
        sigma2_hat: None,
        covered: None,
        redraws: 0,
        error: None,
    };
    let sample = match draw_dataset(dgp, n, s) {
        Ok(x) => x,
        Err(e) => {
            row.redraws = super::dgp::MAX_REDRAWS;
            row.error = Some(e.to_string());
            return row;
        }
    };
    row.redraws = sample.redraws;
    match est.run(&sample.dataset, derive_seed(s, &[ESTIMATOR_STREAM])) {
        Ok(e) => {
            row.tau_hat = Some(e.tau_hat);
            row.sigma2_hat = Some(e.sigma2_hat);
            row.covered = Some(e.covers(tau));
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Summary statistics of a set of replications against the truth.
pub fn summarize(rows: &[McRow], n: usize, tau: f64, sigma2: f64) -> McSummary {
    let ok: Vec<&McRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let rr = ok.len() as f64;
    let taus: Vec<f64> = ok.iter().map(|r| r.tau_hat.unwrap()).collect();
    let sig: Vec<f64> = ok.iter().map(|r| r.sigma2_hat.unwrap()).collect();
    let sq: Vec<f64> = taus.iter().map(|t| (t - tau) * (t - tau)).collect();
    let (m, v) = mean_var(&taus);
    let sd = v.sqrt();
    let (mse, mse_var) = mean_var(&sq);
    let rmse = mse.sqrt();
    let (ms, vs) = mean_var(&sig);
    let cov = ok.iter().filter(|r| r.covered == Some(true)).count() as f64 / rr;
    let ratio = n as f64 * v / sigma2;
    McSummary {
        replications: ok.len(),
        failures: rows.len() - ok.len(),
        mean_tau_hat: m,
        bias: WithSe {
            value: m - tau,
            se: sd / rr.sqrt(),
        },
        sd: WithSe {
            value: sd,
            se: sd / (2.0 * (rr - 1.0)).sqrt(),
        },
        rmse: WithSe {
            value: rmse,
            se: (mse_var / rr).sqrt() / (2.0 * rmse),
        },
        mean_sigma2_hat: WithSe {
            value: ms,
            se: (vs / rr).sqrt(),
        },
        coverage: WithSe {
            value: cov,
            se: (cov * (1.0 - cov) / rr).sqrt(),
        },
        efficiency_ratio: WithSe {
            value: ratio,
            se: ratio * (2.0 / (rr - 1.0)).sqrt(),
        },
    }
}

/// `replications` independent estimates per sample size. Replications run in
/// parallel with seeds fixed by `(seed, n, r)`, and are collected in index
/// order, so reruns are bitwise identical.
pub fn run_mc(
    dgp: &DgpSpec,
    est: &EstimatorSpec,
    n_grid: &[usize],
    replications: usize,
    seed: u64,
) -> Result<McReport> {
    if replications < 2 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least 2 replications".into()));
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter("n_grid is empty".into()));
    }
    est.validate("")?;
    let bound = efficiency_bound(dgp)?;
    let results = n_grid
        .iter()
        .map(|&n| {
            let rows: Vec<McRow> = (0..replications)
                .into_par_iter()
                .map(|r| run_replication(dgp, est, n, r, seed, bound.tau))
                .collect();
            McResult {
                n,
                summary: summarize(&rows, n, bound.tau, bound.sigma2),
                rows,
            }
        })
        .collect();
    Ok(McReport {
        dgp: dgp.clone(),
        estimator: est.clone(),
        seed,
        replications,
        bound,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityRatioMse {
    pub n: usize,
    pub replications: usize,
    /// Mean over replications of the per-sample average squared error.
    pub mse: f64,
    pub se: f64,
}

/// Mean squared error of column sums against `(1-e)/e` (treated) and
/// `e/(1-e)` (control).
pub fn density_ratio_mse(
    dgp: &DgpSpec,
    smoother: &SmootherSpec,
    n: usize,
    replications: usize,
    seed: u64,
) -> Result<DensityRatioMse> {
    let per: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let s = replication_seed(seed, n, r);
            let ds = draw_dataset(dgp, n, s)?.dataset;
            let sm = smoother.build(&ds, derive_seed(s, &[ESTIMATOR_STREAM]))?;
            let cs = sm.col_sum();
            let err: f64 = (0..ds.n())
                .map(|i| {
                    let t = density_ratio_target(ds.arm(i), dgp.propensity_at(ds.x(i)));
                    (cs[i] - t) * (cs[i] - t)
                })
                .sum();
            Ok(err / ds.n() as f64)
        })
        .collect::<Result<_>>()?;
    let (m, v) = mean_var(&per);
    Ok(DensityRatioMse {
        n,
        replications,
        mse: m,
        se: (v / replications as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcome::AdjusterSpec;

    fn small_spec() -> EstimatorSpec {
        EstimatorSpec {
            smoother: SmootherSpec::wnn(Default::default()),
            adjuster: AdjusterSpec::Polynomial { degree: 1 },
            mode: Default::default(),
        }
    }

    #[test]
    fn replay_is_bitwise() {
        let dgp = DgpSpec::benchmark();
        let a = run_mc(&dgp, &small_spec(), &[40, 80], 12, 5).unwrap();
        let b = run_mc(&dgp, &small_spec(), &[40, 80], 12, 5).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.rows().zip(b.rows()) {
            assert_eq!(x.tau_hat.map(f64::to_bits), y.tau_hat.map(f64::to_bits));
        }
        assert_eq!(a.rows().count(), 24);
    }

    #[test]
    fn summary_identities() {
        let rows: Vec<McRow> = [0.1, 0.4, 0.9, 0.6]
            .iter()
            .enumerate()
            .map(|(r, &t)| McRow {
                n: 10,
                replication: r,
                seed: 0,
                tau_hat: Some(t),
                sigma2_hat: Some(1.0),
                covered: Some(r % 2 == 0),
                redraws: 0,
                error: None,
            })
            .collect();
        let s = summarize(&rows, 10, 0.5, 2.0);
        assert!((s.bias.value - 0.0).abs() < 1e-15);
        assert!((s.rmse.value.powi(2) - s.bias.value.powi(2) - s.sd.value.powi(2)).abs() < 1e-14);
        assert_eq!(s.coverage.value, 0.5);
        assert!((s.coverage.se - 0.25f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((s.efficiency_ratio.value - 10.0 * 0.085 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn failures_are_recorded() {
        let dgp = DgpSpec::benchmark();
        let spec = EstimatorSpec {
            smoother: SmootherSpec::wnn(Default::default()),
            adjuster: AdjusterSpec::Polynomial { degree: 9 },
            mode: Default::default(),
        };
        let rep = run_mc(&dgp, &spec, &[6], 3, 1).unwrap();
        let res = rep.result(6).unwrap();
        assert_eq!(res.summary.failures, 3);
        assert!(res.rows.iter().all(|r| r.error.is_some() && r.tau_hat.is_none()));
    }
}
