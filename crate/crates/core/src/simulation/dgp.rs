use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Arm, Dataset};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;

/// Maximum redraws after an empty-arm sample.
pub const MAX_REDRAWS: usize = 100;

/// A scalar function of the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Curve {
    Constant {
        value: f64,
    },
    /// `intercept + slope . x`.
    Linear {
        intercept: f64,
        slope: Vec<f64>,
    },
    /// `intercept + linear . x + sum_p quadratic_p x_p^2`.
    Quadratic {
        intercept: f64,
        linear: Vec<f64>,
        quadratic: Vec<f64>,
    },
    /// `offset + amplitude * sin(frequency * x_axis)`.
    Sine {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        axis: usize,
    },
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Linear { intercept, slope } => intercept + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            Curve::Quadratic {
                intercept,
                linear,
                quadratic,
            } => {
                intercept
                    + linear.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + quadratic.iter().zip(x).map(|(a, b)| a * b * b).sum::<f64>()
            }
            Curve::Sine {
                offset,
                amplitude,
                frequency,
                axis,
            } => offset + amplitude * (frequency * x[*axis]).sin(),
        }
    }

    fn check_dim(&self, d: usize, name: &str) -> Result<()> {
        let ok = match self {
            Curve::Constant { .. } => true,
            Curve::Linear { slope, .. } => slope.len() == d,
            Curve::Quadratic { linear, quadratic, .. } => linear.len() == d && quadratic.len() == d,
            Curve::Sine { axis, .. } => *axis < d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} does not match covariate dimension {d}")))
        }
    }
}

/// Covariate distribution on a compact box, independent across coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovariateLaw {
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Normal coordinates truncated to `[lo, hi]`.
    TruncatedGaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl CovariateLaw {
    pub fn unit_cube(d: usize) -> Self {
        CovariateLaw::UniformBox {
            lo: vec![0.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::UniformBox { lo, .. } | CovariateLaw::TruncatedGaussian { lo, .. } => lo.len(),
        }
    }

    /// Maps `u` in the unit cube to a draw from the law (coordinatewise
    /// inverse CDF).
    pub fn transform(&self, u: &[f64], out: &mut [f64]) {
        match self {
            CovariateLaw::UniformBox { lo, hi } => {
                for p in 0..u.len() {
                    out[p] = lo[p] + u[p] * (hi[p] - lo[p]);
                }
            }
            CovariateLaw::TruncatedGaussian { mean, sd, lo, hi } => {
                let z = Normal::standard();
                for p in 0..u.len() {
                    let a = z.cdf((lo[p] - mean[p]) / sd[p]);
                    let b = z.cdf((hi[p] - mean[p]) / sd[p]);
                    let q = (a + u[p] * (b - a)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    out[p] = (mean[p] + sd[p] * z.inverse_cdf(q)).clamp(lo[p], hi[p]);
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("covariate law: {m}")));
        let (lo, hi) = match self {
            CovariateLaw::UniformBox { lo, hi } => (lo, hi),
            CovariateLaw::TruncatedGaussian { mean, sd, lo, hi } => {
                if mean.len() != lo.len() || sd.len() != lo.len() {
                    return bad("mean, sd, lo, hi must have equal length");
                }
                if sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return bad("sd must be positive");
                }
                (lo, hi)
            }
        };
        if lo.is_empty() || lo.len() != hi.len() {
            return bad("lo and hi must be nonempty and of equal length");
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return bad("each lo must be finite and below hi");
        }
        Ok(())
    }
}

/// A synthetic data-generating process with known nuisances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub covariates: CovariateLaw,
    pub propensity: Curve,
    pub mu0: Curve,
    pub mu1: Curve,
    pub noise_sd0: Curve,
    pub noise_sd1: Curve,
}

impl DgpSpec {
    /// `X ~ U[0,1]`, `e = 0.5`, `mu1(x) = x`, `mu0 = 0`, unit noise:
    /// `tau = 1/2`, bound `49/12`.
    pub fn benchmark() -> Self {
        DgpSpec {
            name: Some("benchmark".into()),
            covariates: CovariateLaw::unit_cube(1),
            propensity: Curve::constant(0.5),
            mu0: Curve::constant(0.0),
            mu1: Curve::Linear {
                intercept: 0.0,
                slope: vec![1.0],
            },
            noise_sd0: Curve::constant(1.0),
            noise_sd1: Curve::constant(1.0),
        }
    }

    /// `X ~ U[0,1]`, `e(x) = 0.3 + 0.4x`, `mu1 = 1 + x + x^2`, `mu0 = x^2`,
    /// unit noise: `tau = 3/2`.
    pub fn quadratic_propensity() -> Self {
        DgpSpec {
            name: Some("quadratic-propensity".into()),
            covariates: CovariateLaw::unit_cube(1),
            propensity: Curve::Linear {
                intercept: 0.3,
                slope: vec![0.4],
            },
            mu0: Curve::Quadratic {
                intercept: 0.0,
                linear: vec![0.0],
                quadratic: vec![1.0],
            },
            mu1: Curve::Quadratic {
                intercept: 1.0,
                linear: vec![1.0],
                quadratic: vec![1.0],
            },
            noise_sd0: Curve::constant(1.0),
            noise_sd1: Curve::constant(1.0),
        }
    }

    /// Built-in processes by id.
    pub fn named(id: &str) -> Option<Self> {
        match id {
            "benchmark" => Some(Self::benchmark()),
            "quadratic-propensity" => Some(Self::quadratic_propensity()),
            _ => None,
        }
    }

    pub fn d(&self) -> usize {
        self.covariates.dim()
    }

    pub fn mu(&self, arm: Arm, x: &[f64]) -> f64 {
        match arm {
            Arm::Treated => self.mu1.eval(x),
            Arm::Control => self.mu0.eval(x),
        }
    }

    pub fn noise_sd(&self, arm: Arm, x: &[f64]) -> f64 {
        match arm {
            Arm::Treated => self.noise_sd1.eval(x),
            Arm::Control => self.noise_sd0.eval(x),
        }
    }

    pub fn propensity_at(&self, x: &[f64]) -> f64 {
        self.propensity.eval(x)
    }

    /// Structural checks plus overlap and noise bounds on a probe grid of
    /// the support.
    pub fn validate(&self) -> Result<()> {
        self.covariates.validate()?;
        let d = self.d();
        for (c, name) in [
            (&self.propensity, "propensity"),
            (&self.mu0, "mu0"),
            (&self.mu1, "mu1"),
            (&self.noise_sd0, "noise_sd0"),
            (&self.noise_sd1, "noise_sd1"),
        ] {
            c.check_dim(d, name)?;
        }
        let probes = super::bound::halton_points(d, 4096, &vec![0.0; d]);
        let mut x = vec![0.0; d];
        for u in probes.chunks(d).chain(corners(d).chunks(d)) {
            self.covariates.transform(u, &mut x);
            let e = self.propensity.eval(&x);
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidParameter(format!("propensity {e} outside (0, 1) at {x:?}")));
            }
            for arm in [Arm::Control, Arm::Treated] {
                let s = self.noise_sd(arm, &x);
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(format!("negative noise sd {s} at {x:?}")));
                }
                if !self.mu(arm, &x).is_finite() {
                    return Err(Error::InvalidParameter(format!("non-finite mean at {x:?}")));
                }
            }
        }
        Ok(())
    }
}

fn corners(d: usize) -> Vec<f64> {
    if d > 12 {
        return Vec::new();
    }
    (0..1usize << d)
        .flat_map(|mask| (0..d).map(move |p| if mask >> p & 1 == 1 { 1.0 } else { 0.0 }))
        .collect()
}

/// A simulated sample and the number of empty-arm redraws it took.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample {
    pub dataset: Dataset,
    pub redraws: usize,
}

/// `n` i.i.d. draws of `(X, D, Y)`; attempt `a` uses the stream
/// `derive_seed(seed, [a])`, so the same seed reproduces the same sample.
pub fn draw_dataset(dgp: &DgpSpec, n: usize, seed: u64) -> Result<SimulatedSample> {
    if n < 2 {
        return Err(Error::TooFewUnits(n));
    }
    let d = dgp.d();
    for attempt in 0..=MAX_REDRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[attempt as u64]));
        let mut cov = Vec::with_capacity(n * d);
        let mut arms = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut u = vec![0.0; d];
        let mut x = vec![0.0; d];
        for _ in 0..n {
            for v in u.iter_mut() {
                *v = rng.random::<f64>();
            }
            dgp.covariates.transform(&u, &mut x);
            let arm = if rng.random::<f64>() < dgp.propensity.eval(&x) {
                Arm::Treated
            } else {
                Arm::Control
            };
            let z: f64 = rng.sample(StandardNormal);
            y.push(dgp.mu(arm, &x) + dgp.noise_sd(arm, &x) * z);
            cov.extend_from_slice(&x);
            arms.push(arm);
        }
        if arms.contains(&Arm::Treated) && arms.contains(&Arm::Control) {
            return Ok(SimulatedSample {
                dataset: Dataset::from_parts(d, cov, arms, y)?,
                redraws: attempt,
            });
        }
    }
    Err(Error::InvalidParameter(format!(
        "every draw of {n} units left an arm empty after {MAX_REDRAWS} redraws"
    )))
}
