use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use crate::data::Arm;
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, mean_var};

/// Relative tolerance for one-dimensional quadrature.
pub const QUAD_RTOL: f64 = 1e-6;
const QUAD_ATOL: f64 = 1e-13;
const MAX_INTERVALS: usize = 4096;

/// Quasi-Monte Carlo layout for `d > 1`: shifted Halton replicates.
pub const QMC_SHIFTS: usize = 16;
pub const QMC_POINTS_PER_SHIFT: usize = 62_500;

/// The efficiency bound together with the effect it is centred on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub tau: f64,
    pub sigma2: f64,
    pub tau_error: f64,
    pub sigma2_error: f64,
    pub method: String,
    pub nodes: usize,
}

struct Quad {
    value: f64,
    error: f64,
    nodes: usize,
}

// Kronrod 15-point abscissae (positive half) and weights, with the
// embedded 7-point Gauss weights on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = h * XGK[k];
        let pair = f(c - dx) + f(c + dx);
        kron += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod on `[a, b]`; bisects the interval with
/// the largest error estimate until the total error meets the tolerance.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, what: &str) -> Result<Quad> {
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    loop {
        let value: f64 = parts.iter().map(|p| p.2 .0).sum();
        let error: f64 = parts.iter().map(|p| p.2 .1).sum();
        if !value.is_finite() {
            return Err(Error::Integration(format!("{what}: non-finite integrand")));
        }
        if error <= (QUAD_RTOL * value.abs()).max(QUAD_ATOL) {
            return Ok(Quad {
                value,
                error,
                nodes: parts.len() * 15,
            });
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(Error::Integration(format!(
                "{what}: error estimate {error:e} above relative tolerance {QUAD_RTOL:e} after {MAX_INTERVALS} intervals"
            )));
        }
        let worst = (0..parts.len())
            .max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1))
            .expect("nonempty");
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` Halton points in `[0,1)^d` (row-major), skipping the origin, with
/// a Cranley-Patterson rotation by `shift`.
pub fn halton_points(d: usize, count: usize, shift: &[f64]) -> Vec<f64> {
    assert!(d <= PRIMES.len(), "Halton sequence supports at most {} dimensions", PRIMES.len());
    let mut out = Vec::with_capacity(count * d);
    for i in 1..=count as u64 {
        for p in 0..d {
            let u = radical_inverse(i, PRIMES[p]) + shift[p];
            out.push(u - u.floor());
        }
    }
    out
}

fn integrands(dgp: &DgpSpec, x: &[f64], tau: f64) -> (f64, f64) {
    let diff = dgp.mu(Arm::Treated, x) - dgp.mu(Arm::Control, x);
    let e = dgp.propensity_at(x);
    let s1 = dgp.noise_sd(Arm::Treated, x);
    let s0 = dgp.noise_sd(Arm::Control, x);
    (diff, (diff - tau).powi(2) + s1 * s1 / e + s0 * s0 / (1.0 - e))
}

/// `sigma^2 = E[(mu1 - mu0 - tau)^2] + E[s1^2/e + s0^2/(1-e)]`, by adaptive
/// quadrature in one dimension and shifted Halton points otherwise.
pub fn efficiency_bound(dgp: &DgpSpec) -> Result<BoundReport> {
    dgp.validate()?;
    let d = dgp.d();
    if d == 1 {
        let at = |u: f64| {
            let mut x = [0.0];
            dgp.covariates.transform(&[u], &mut x);
            x
        };
        let t = integrate(|u| integrands(dgp, &at(u), 0.0).0, 0.0, 1.0, "treatment effect")?;
        let s = integrate(|u| integrands(dgp, &at(u), t.value).1, 0.0, 1.0, "efficiency bound")?;
        return Ok(BoundReport {
            tau: t.value,
            sigma2: s.value,
            tau_error: t.error,
            sigma2_error: s.error,
            method: "gauss-kronrod-15".into(),
            nodes: t.nodes + s.nodes,
        });
    }
    let shifts: Vec<Vec<f64>> = (0..QMC_SHIFTS)
        .map(|k| {
            (0..d)
                .map(|p| crate::numeric::mix64(derive_seed(0x51ed_5eed, &[k as u64, p as u64])) as f64 / 2f64.powi(64))
                .collect()
        })
        .collect();
    let mut x = vec![0.0; d];
    let mut point_sets = Vec::with_capacity(QMC_SHIFTS);
    let mut tau_est = Vec::with_capacity(QMC_SHIFTS);
    for shift in &shifts {
        let pts = halton_points(d, QMC_POINTS_PER_SHIFT, shift);
        let mut acc = 0.0;
        for u in pts.chunks(d) {
            dgp.covariates.transform(u, &mut x);
            acc += integrands(dgp, &x, 0.0).0;
        }
        tau_est.push(acc / QMC_POINTS_PER_SHIFT as f64);
        point_sets.push(pts);
    }
    let (tau, tau_var) = mean_var(&tau_est);
    let mut sig_est = Vec::with_capacity(QMC_SHIFTS);
    for pts in &point_sets {
        let mut acc = 0.0;
        for u in pts.chunks(d) {
            dgp.covariates.transform(u, &mut x);
            acc += integrands(dgp, &x, tau).1;
        }
        sig_est.push(acc / QMC_POINTS_PER_SHIFT as f64);
    }
    let (sigma2, sig_var) = mean_var(&sig_est);
    let r = QMC_SHIFTS as f64;
    Ok(BoundReport {
        tau,
        sigma2,
        tau_error: (tau_var * r / (r - 1.0) / r).sqrt(),
        sigma2_error: (sig_var * r / (r - 1.0) / r).sqrt(),
        method: "randomized-halton".into(),
        nodes: QMC_SHIFTS * QMC_POINTS_PER_SHIFT,
    })
}
