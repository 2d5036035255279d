//! Imputation-based ATE estimators and their AIPW form.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::outcome::{AdjusterSpec, ModelDescriptor, OutcomeModel};
use crate::smoothers::{SmootherSpec, SmoothingMatrix};

/// Normal quantile for the default 95% interval.
pub const Z95: f64 = 1.96;

/// Absolute tolerance of the direct-versus-reassembled check, before scaling.
pub const IDENTITY_TOL: f64 = 1e-10;

/// `(Y_hat_i(0), Y_hat_i(1))` for every unit; the observed arm is `Y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

/// The four sums whose combination equals the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AipwComponents {
    /// `(1/n) sum [mu_1(X_i) - mu_0(X_i)]`.
    pub tau_reg: f64,
    /// `(1/n) sum_{D_i=1} (1 + K_i) R_i`.
    pub treated_residual_term: f64,
    /// `(1/n) sum_{D_i=0} (1 + K_i) R_i`.
    pub control_residual_term: f64,
    /// `(1/n) sum (2D_i - 1)(1 - sum_j w(i <- j)) mu_{1-D_i}(X_i)`.
    pub unnormalized_bias_term: f64,
}

impl AipwComponents {
    pub fn reassemble(&self) -> f64 {
        self.tau_reg + self.treated_residual_term - self.control_residual_term + self.unnormalized_bias_term
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub smoother: String,
    pub adjuster: ModelDescriptor,
    /// `full` or `crossfit-N`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub n: usize,
    pub tau_hat: f64,
    pub components: AipwComponents,
    pub sigma2_hat: f64,
    pub std_error: f64,
    pub ci95: [f64; 2],
    pub method: MethodDescriptor,
    /// Per-fold estimates in cross-fit mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_estimates: Option<Vec<f64>>,
}

impl AteEstimate {
    /// `tau_hat +- z sqrt(sigma2_hat / n)` at the given two-sided level.
    pub fn interval(&self, level: f64) -> Result<[f64; 2]> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidParameter(format!("confidence level {level} outside (0, 1)")));
        }
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        Ok(interval(self.tau_hat, self.sigma2_hat, self.n, z))
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.ci95[0] <= tau && tau <= self.ci95[1]
    }
}

fn interval(tau: f64, sigma2: f64, n: usize, z: f64) -> [f64; 2] {
    let half = z * (sigma2 / n as f64).sqrt();
    [tau - half, tau + half]
}

fn check_shapes(ds: &Dataset, sm: &SmoothingMatrix) -> Result<()> {
    if sm.n() != ds.n() {
        return Err(Error::InvalidParameter(format!(
            "smoothing matrix has {} rows for {} units",
            sm.n(),
            ds.n()
        )));
    }
    Ok(())
}

/// `Y_hat_i(1-D_i) = sum_j w(i <- j) (Y_j + mu(X_i) - mu(X_j))` with `mu` the
/// adjuster for arm `1 - D_i`.
pub fn impute(ds: &Dataset, sm: &SmoothingMatrix, om: &OutcomeModel) -> ImputedOutcomes {
    let n = ds.n();
    let opposite_fit: Vec<f64> = (0..n).map(|i| om.predict(ds.arm(i).opposite(), ds.x(i))).collect();
    let mut y0 = ds.outcome().to_vec();
    let mut y1 = ds.outcome().to_vec();
    for i in 0..n {
        let mi = opposite_fit[i];
        let v: f64 = sm
            .row(i)
            .map(|(j, w)| {
                // mu(X_j) for arm 1 - D_i is the own-arm fit at j.
                let mj = om.predict(ds.arm(j), ds.x(j));
                w * (ds.y(j) + (mi - mj))
            })
            .sum();
        match ds.arm(i) {
            Arm::Treated => y0[i] = v,
            Arm::Control => y1[i] = v,
        }
    }
    ImputedOutcomes { y0, y1 }
}

fn direct_tau(imp: &ImputedOutcomes) -> f64 {
    let n = imp.y0.len() as f64;
    imp.y1.iter().zip(&imp.y0).map(|(a, b)| a - b).sum::<f64>() / n
}

/// The four sums of the AIPW rewrite.
pub fn aipw_decompose(ds: &Dataset, sm: &SmoothingMatrix, om: &OutcomeModel) -> AipwComponents {
    let n = ds.n() as f64;
    let mut c = AipwComponents {
        tau_reg: 0.0,
        treated_residual_term: 0.0,
        control_residual_term: 0.0,
        unnormalized_bias_term: 0.0,
    };
    for i in 0..ds.n() {
        let x = ds.x(i);
        let arm = ds.arm(i);
        let m1 = om.predict(Arm::Treated, x);
        let m0 = om.predict(Arm::Control, x);
        c.tau_reg += m1 - m0;
        let resid = ds.y(i) - om.predict(arm, x);
        let term = (1.0 + sm.col_sum()[i]) * resid;
        match arm {
            Arm::Treated => c.treated_residual_term += term,
            Arm::Control => c.control_residual_term += term,
        }
        c.unnormalized_bias_term += arm.sign() * (1.0 - sm.row_sum()[i]) * om.predict(arm.opposite(), x);
    }
    c.tau_reg /= n;
    c.treated_residual_term /= n;
    c.control_residual_term /= n;
    c.unnormalized_bias_term /= n;
    c
}

/// `(1/n) sum [mu_1 - mu_0 + (2D_i - 1)(1 + K_i) R_i - tau]^2`, with `K_i` the
/// column sum of unit `i`.
pub fn variance_estimate(ds: &Dataset, sm: &SmoothingMatrix, om: &OutcomeModel, tau_hat: f64) -> f64 {
    let terms: Vec<f64> = (0..ds.n())
        .map(|i| {
            let x = ds.x(i);
            let arm = ds.arm(i);
            let resid = ds.y(i) - om.predict(arm, x);
            om.predict(Arm::Treated, x) - om.predict(Arm::Control, x) + arm.sign() * (1.0 + sm.col_sum()[i]) * resid
        })
        .collect();
    influence_variance(&terms, tau_hat)
}

pub(crate) fn influence_variance(terms: &[f64], tau: f64) -> f64 {
    terms.iter().map(|t| (t - tau).powi(2)).sum::<f64>() / terms.len() as f64
}

/// Tolerance for the identity check, scaled by the magnitude of the inputs.
pub fn identity_tolerance(ds: &Dataset, om: &OutcomeModel) -> f64 {
    let mut scale = 1.0f64;
    for i in 0..ds.n() {
        scale = scale
            .max(ds.y(i).abs())
            .max(om.predict(Arm::Treated, ds.x(i)).abs())
            .max(om.predict(Arm::Control, ds.x(i)).abs());
    }
    IDENTITY_TOL * scale
}

/// Verifies that the AIPW reassembly reproduces `direct`.
pub fn check_identity(direct: f64, components: &AipwComponents, tol: f64) -> Result<()> {
    let reassembled = components.reassemble();
    let diff = (direct - reassembled).abs();
    if !(diff <= tol) {
        return Err(Error::Consistency {
            direct,
            reassembled,
            diff,
        });
    }
    Ok(())
}

/// `tau_hat = (1/n) sum [Y_hat_i(1) - Y_hat_i(0)]` with its AIPW breakdown,
/// variance estimate and interval.
pub fn estimate_ate_direct(ds: &Dataset, sm: &SmoothingMatrix, om: &OutcomeModel) -> Result<AteEstimate> {
    estimate_with_label(ds, sm, om, "custom")
}

pub(crate) fn estimate_with_label(
    ds: &Dataset,
    sm: &SmoothingMatrix,
    om: &OutcomeModel,
    smoother: &str,
) -> Result<AteEstimate> {
    check_shapes(ds, sm)?;
    let tau_hat = direct_tau(&impute(ds, sm, om));
    let components = aipw_decompose(ds, sm, om);
    check_identity(tau_hat, &components, identity_tolerance(ds, om))?;
    let sigma2_hat = variance_estimate(ds, sm, om, tau_hat);
    Ok(AteEstimate {
        n: ds.n(),
        tau_hat,
        components,
        sigma2_hat,
        std_error: (sigma2_hat / ds.n() as f64).sqrt(),
        ci95: interval(tau_hat, sigma2_hat, ds.n(), Z95),
        method: MethodDescriptor {
            smoother: smoother.into(),
            adjuster: om.descriptor().clone(),
            mode: "full".into(),
        },
        fold_estimates: None,
    })
}

/// Builds the smoother and adjuster from their specs and runs the full-sample
/// estimator.
pub fn estimate_ate(
    ds: &Dataset,
    smoother: &SmootherSpec,
    adjuster: &AdjusterSpec,
    seed: u64,
) -> Result<(AteEstimate, SmoothingMatrix)> {
    let sm = smoother.build(ds, seed)?;
    let om = adjuster.fit(ds, None)?;
    let est = estimate_with_label(ds, &sm, &om, smoother.name())?;
    Ok((est, sm))
}

/// Full-sample or cross-fitted estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModeSpec {
    #[default]
    Full,
    Crossfit {
        folds: usize,
        #[serde(default)]
        variance: crate::crossfit::CrossFitVariance,
    },
}

/// Smoother, adjuster and mode: everything needed to produce one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub smoother: SmootherSpec,
    #[serde(default)]
    pub adjuster: AdjusterSpec,
    #[serde(default)]
    pub mode: ModeSpec,
}

impl EstimatorSpec {
    pub fn run(&self, ds: &Dataset, seed: u64) -> Result<AteEstimate> {
        match self.mode {
            ModeSpec::Full => estimate_ate(ds, &self.smoother, &self.adjuster, seed).map(|(e, _)| e),
            ModeSpec::Crossfit { folds, variance } => {
                crate::crossfit::estimate_ate_crossfit(ds, &self.smoother, &self.adjuster, folds, seed, variance)
            }
        }
    }

    /// Data-independent checks, reporting JSON pointers under `base`.
    pub fn validate(&self, base: &str) -> Result<()> {
        self.smoother.validate(&format!("{base}/smoother"))?;
        if let ModeSpec::Crossfit { folds, .. } = self.mode {
            if folds < 2 {
                return Err(Error::Config {
                    pointer: format!("{base}/mode/folds"),
                    message: "cross-fitting needs at least 2 folds".into(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn assemble(
    n: usize,
    tau_hat: f64,
    components: AipwComponents,
    sigma2_hat: f64,
    method: MethodDescriptor,
    fold_estimates: Option<Vec<f64>>,
) -> AteEstimate {
    AteEstimate {
        n,
        tau_hat,
        components,
        sigma2_hat,
        std_error: (sigma2_hat / n as f64).sqrt(),
        ci95: interval(tau_hat, sigma2_hat, n, Z95),
        method,
        fold_estimates,
    }
}
