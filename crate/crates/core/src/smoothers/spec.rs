use serde::{Deserialize, Serialize};

use super::{kernel_weights, local_linear_weights, wnn_weights, BandwidthMatrix, KernelFamily, SmoothingMatrix, WnnGamma};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{build_forest_pair, forest_weights, ForestConfig};
use crate::neighbors::NeighborSearch;

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Bandwidth choice: a scalar `h` (`H = h^2 I`), a full matrix, or the rate
/// default `h = bandwidth_scale * n^(-1/(d+4))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    /// Multiplies whichever bandwidth is in effect.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub bandwidth_scale: f64,
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec {
            h: None,
            matrix: None,
            bandwidth_scale: 1.0,
        }
    }
}

impl BandwidthSpec {
    /// Resolves `H` for a construction sample of size `n` in dimension `d`.
    pub fn resolve(&self, n: usize, d: usize) -> Result<BandwidthMatrix> {
        let s = self.bandwidth_scale;
        match (&self.h, &self.matrix) {
            (Some(_), Some(_)) => Err(Error::InvalidParameter("give either h or H, not both".into())),
            (Some(h), None) => BandwidthMatrix::isotropic(d, h * s),
            (None, Some(rows)) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidParameter(format!("H must be {d}x{d}")));
                }
                BandwidthMatrix::new(d, rows.iter().flatten().map(|v| v * s * s).collect())
            }
            (None, None) => BandwidthMatrix::rate(n, d, s),
        }
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.bandwidth_scale > 0.0 && self.bandwidth_scale.is_finite()) {
            return Err(("bandwidth_scale", "bandwidth_scale must be positive".into()));
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(("h", "h must be positive".into()));
            }
        }
        if self.h.is_some() && self.matrix.is_some() {
            return Err(("H", "give either h or H, not both".into()));
        }
        if let Some(rows) = &self.matrix {
            let d = rows.len();
            if d == 0 || rows.iter().any(|r| r.len() != d) {
                return Err(("H", "H must be a square matrix".into()));
            }
            BandwidthMatrix::new(d, rows.iter().flatten().copied().collect()).map_err(|e| ("H", e.to_string()))?;
        }
        Ok(())
    }
}

/// Weighted nearest-neighbor configuration. `gamma` wins over `M`; `M` gives
/// uniform weights; with neither, `M = ceil(m_scale * n^m_exponent)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WnnSpec {
    #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default = "default_m_exponent")]
    pub m_exponent: f64,
    #[serde(default = "one")]
    pub m_scale: f64,
    #[serde(default)]
    pub search: NeighborSearch,
}

fn default_m_exponent() -> f64 {
    2.0 / 3.0
}

impl Default for WnnSpec {
    fn default() -> Self {
        WnnSpec {
            m: None,
            gamma: None,
            m_exponent: default_m_exponent(),
            m_scale: 1.0,
            search: NeighborSearch::default(),
        }
    }
}

impl WnnSpec {
    pub fn uniform(m: usize) -> Self {
        WnnSpec {
            m: Some(m),
            ..Default::default()
        }
    }

    /// The weight vector for a construction sample of size `n`.
    pub fn resolve(&self, n: usize) -> Result<WnnGamma> {
        if let Some(g) = &self.gamma {
            return WnnGamma::new(g.clone());
        }
        let m = match self.m {
            Some(m) => m,
            None => (self.m_scale * (n as f64).powf(self.m_exponent)).ceil().max(1.0) as usize,
        };
        WnnGamma::uniform(m)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if let Some(g) = &self.gamma {
            WnnGamma::new(g.clone()).map_err(|e| ("gamma", strip(e)))?;
            if let Some(m) = self.m {
                if m != g.len() {
                    return Err(("M", format!("M = {m} disagrees with gamma length {}", g.len())));
                }
            }
        }
        if self.m == Some(0) {
            return Err(("M", "M must be at least 1".into()));
        }
        if !(self.m_scale > 0.0 && self.m_scale.is_finite()) {
            return Err(("m_scale", "m_scale must be positive".into()));
        }
        if !(self.m_exponent.is_finite() && (0.0..1.0).contains(&self.m_exponent)) {
            return Err(("m_exponent", "m_exponent must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Forest parameters; unset fields take the sample-size-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSpec {
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Overrides the run seed for tree construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ForestSpec {
    /// Concrete configuration for arms of sizes `n0`, `n1`.
    pub fn resolve(&self, n0: usize, n1: usize, seed: u64) -> Result<ForestConfig> {
        let mut cfg = ForestConfig::defaults(n0, n1, self.seed.unwrap_or(seed));
        if let Some(b) = self.trees {
            cfg.trees = b;
        }
        if let Some(s) = self.s {
            cfg.s = s;
        }
        if let Some(t) = self.theta {
            cfg.theta = t;
        } else {
            cfg.theta = cfg.theta.min(cfg.s);
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(p) = self.phi {
            cfg.phi = p;
        }
        cfg.validate(n0, n1)?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.trees == Some(0) {
            return Err(("B", "B must be at least 1".into()));
        }
        if self.s == Some(0) {
            return Err(("s", "s must be at least 1".into()));
        }
        if self.theta == Some(0) {
            return Err(("theta", "theta must be at least 1".into()));
        }
        if let (Some(s), Some(t)) = (self.s, self.theta) {
            if s < t {
                return Err(("theta", format!("theta = {t} exceeds subsample size s = {s}")));
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a <= 0.5) {
                return Err(("alpha", "alpha must lie in (0, 0.5]".into()));
            }
        }
        if let Some(p) = self.phi {
            if !(p > 0.0 && p < 1.0) {
                return Err(("phi", "phi must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Which linear smoother produces the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SmootherSpec {
    Kernel {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
        #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default = "one")]
        bandwidth_scale: f64,
        #[serde(default)]
        kernel: KernelFamily,
        #[serde(default)]
        search: NeighborSearch,
    },
    Wnn {
        #[serde(default, rename = "M", skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<Vec<f64>>,
        #[serde(default = "default_m_exponent")]
        m_exponent: f64,
        #[serde(default = "one")]
        m_scale: f64,
        #[serde(default)]
        search: NeighborSearch,
    },
    LocalLinear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h: Option<f64>,
        #[serde(default, rename = "H", skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default = "one")]
        bandwidth_scale: f64,
        #[serde(default)]
        kernel: KernelFamily,
        #[serde(default)]
        search: NeighborSearch,
    },
    Forest {
        #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
        trees: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// A smoother spec unpacked into its typed parameter block.
#[derive(Debug, Clone, PartialEq)]
pub enum SmootherParams {
    Kernel(BandwidthSpec, KernelFamily, NeighborSearch),
    Wnn(WnnSpec),
    LocalLinear(BandwidthSpec, KernelFamily, NeighborSearch),
    Forest(ForestSpec),
}

impl SmootherSpec {
    pub fn kernel(bandwidth: BandwidthSpec, kernel: KernelFamily, search: NeighborSearch) -> Self {
        SmootherSpec::Kernel {
            h: bandwidth.h,
            matrix: bandwidth.matrix,
            bandwidth_scale: bandwidth.bandwidth_scale,
            kernel,
            search,
        }
    }

    pub fn local_linear(bandwidth: BandwidthSpec, kernel: KernelFamily, search: NeighborSearch) -> Self {
        SmootherSpec::LocalLinear {
            h: bandwidth.h,
            matrix: bandwidth.matrix,
            bandwidth_scale: bandwidth.bandwidth_scale,
            kernel,
            search,
        }
    }

    pub fn wnn(spec: WnnSpec) -> Self {
        SmootherSpec::Wnn {
            m: spec.m,
            gamma: spec.gamma,
            m_exponent: spec.m_exponent,
            m_scale: spec.m_scale,
            search: spec.search,
        }
    }

    pub fn forest(spec: ForestSpec) -> Self {
        SmootherSpec::Forest {
            trees: spec.trees,
            s: spec.s,
            theta: spec.theta,
            alpha: spec.alpha,
            phi: spec.phi,
            seed: spec.seed,
        }
    }

    pub fn params(&self) -> SmootherParams {
        match self.clone() {
            SmootherSpec::Kernel {
                h,
                matrix,
                bandwidth_scale,
                kernel,
                search,
            } => SmootherParams::Kernel(
                BandwidthSpec {
                    h,
                    matrix,
                    bandwidth_scale,
                },
                kernel,
                search,
            ),
            SmootherSpec::LocalLinear {
                h,
                matrix,
                bandwidth_scale,
                kernel,
                search,
            } => SmootherParams::LocalLinear(
                BandwidthSpec {
                    h,
                    matrix,
                    bandwidth_scale,
                },
                kernel,
                search,
            ),
            SmootherSpec::Wnn {
                m,
                gamma,
                m_exponent,
                m_scale,
                search,
            } => SmootherParams::Wnn(WnnSpec {
                m,
                gamma,
                m_exponent,
                m_scale,
                search,
            }),
            SmootherSpec::Forest {
                trees,
                s,
                theta,
                alpha,
                phi,
                seed,
            } => SmootherParams::Forest(ForestSpec {
                trees,
                s,
                theta,
                alpha,
                phi,
                seed,
            }),
        }
    }

    /// Short label for reports: `kernel`, `wnn`, `local-linear`, `forest`.
    pub fn name(&self) -> &'static str {
        match self {
            SmootherSpec::Kernel { .. } => "kernel",
            SmootherSpec::Wnn { .. } => "wnn",
            SmootherSpec::LocalLinear { .. } => "local-linear",
            SmootherSpec::Forest { .. } => "forest",
        }
    }

    /// Checks parameter ranges that do not depend on the data. Errors carry a
    /// JSON pointer relative to `base`.
    pub fn validate(&self, base: &str) -> Result<()> {
        let res = match self.params() {
            SmootherParams::Kernel(b, ..) | SmootherParams::LocalLinear(b, ..) => b.validate(),
            SmootherParams::Wnn(w) => w.validate(),
            SmootherParams::Forest(f) => f.validate(),
        };
        res.map_err(|(field, message)| Error::Config {
            pointer: format!("{base}/{field}"),
            message,
        })
    }

    /// Builds the full-sample smoothing matrix. `seed` drives forest
    /// construction and is ignored by the deterministic smoothers.
    pub fn build(&self, ds: &Dataset, seed: u64) -> Result<SmoothingMatrix> {
        match self.params() {
            SmootherParams::Kernel(b, k, s) => kernel_weights(ds, &b.resolve(ds.n(), ds.d())?, k, s),
            SmootherParams::LocalLinear(b, k, s) => local_linear_weights(ds, &b.resolve(ds.n(), ds.d())?, k, s),
            SmootherParams::Wnn(w) => wnn_weights(ds, &w.resolve(ds.n())?, w.search),
            SmootherParams::Forest(f) => {
                let cfg = f.resolve(ds.n0(), ds.n1(), seed)?;
                let (f0, f1) = build_forest_pair(ds, &cfg)?;
                forest_weights(&f0, &f1, ds)
            }
        }
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidParameter(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wnn_m_defaults_to_uniform() {
        let s: SmootherSpec = serde_json::from_str(r#"{"type":"wnn","M":5}"#).unwrap();
        let SmootherParams::Wnn(w) = s.params() else { panic!() };
        assert_eq!(w.resolve(100).unwrap(), WnnGamma::uniform(5).unwrap());
    }

    #[test]
    fn wnn_rate_default() {
        let w = WnnSpec::default();
        assert_eq!(w.resolve(2000).unwrap().m(), 159);
    }

    #[test]
    fn gamma_sum_violation_names_field() {
        let s: SmootherSpec = serde_json::from_str(r#"{"type":"wnn","gamma":[0.5,0.6]}"#).unwrap();
        let e = s.validate("/smoother").unwrap_err();
        assert!(e.to_string().contains("gamma must sum to 1"));
        assert!(e.to_string().contains("/smoother/gamma"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<SmootherSpec>(r#"{"type":"kernel","bandwidth":0.1}"#).is_err());
        assert!(serde_json::from_str::<SmootherSpec>(r#"{"type":"knn"}"#).is_err());
    }

    #[test]
    fn round_trip() {
        for text in [
            r#"{"type":"kernel","h":0.2,"bandwidth_scale":10.0,"kernel":"epanechnikov-product","search":"kd-tree"}"#,
            r#"{"type":"local-linear","H":[[0.04,0.01],[0.01,0.04]]}"#,
            r#"{"type":"forest","B":50,"s":64,"theta":8}"#,
            r#"{"type":"wnn","gamma":[0.75,0.25]}"#,
        ] {
            let s: SmootherSpec = serde_json::from_str(text).unwrap();
            let back: SmootherSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            assert_eq!(s, back);
        }
    }

    #[test]
    fn bandwidth_resolution() {
        let b = BandwidthSpec {
            h: Some(0.1),
            bandwidth_scale: 10.0,
            ..Default::default()
        };
        assert_eq!(b.resolve(50, 2).unwrap().matrix(), &[1.0, 0.0, 0.0, 1.0]);
        let r = BandwidthSpec::default().resolve(1000, 1).unwrap();
        assert!((r.matrix()[0] - 1000f64.powf(-0.4)).abs() < 1e-15);
    }
}
