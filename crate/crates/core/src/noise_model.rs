//! White-noise observations of the Cauchy data and Monte-Carlo MISE.
//!
//! Observed coefficients are ⟨u_i, φ_p⟩ + ε ξ_p for p = 1..=N with ξ_p i.i.d.
//! standard normal. Every (seed, replicate, field) triple owns its own
//! ChaCha20 stream, so replicates can be generated in any order or in
//! parallel without changing a single bit.

use std::io::Write;

use rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{domain, Error, Result};
use crate::spectral::{hq_norm_sq, CoeffVector, EigenSystem};

/// Which stream feeds the velocity observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSharing {
    /// Separate ξ for u₀ and u₁.
    #[default]
    Independent,
    /// One ξ reused for both fields.
    Shared,
}

/// Standard-normal stream for one (seed, replicate, field).
pub struct GaussianStream {
    rng: ChaCha20Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, replicate: u64, field: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(replicate.wrapping_mul(2).wrapping_add(field));
        Self { rng }
    }

    /// Uniform on the open interval (0, 1) from 53 random bits.
    fn open_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Inverse-CDF draw: Φ⁻¹(u) = −√2 erfc⁻¹(2u).
    pub fn next_normal(&mut self) -> f64 {
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * self.open_uniform())
    }

    pub fn take(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyObservation {
    pub eps: f64,
    pub n: usize,
    pub obs0: Vec<f64>,
    pub obs1: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
}

impl NoisyObservation {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,obs0,obs1")?;
        for p in 0..self.n {
            writeln!(w, "{},{},{}", p + 1, self.obs0[p], self.obs1[p])?;
        }
        Ok(())
    }
}

fn check_eps_n(eps: f64, n: usize) -> Result<()> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return domain(format!("noise level must be finite and >= 0, got {eps}"));
    }
    if n == 0 {
        return domain("need at least one observed mode");
    }
    Ok(())
}

/// Observation for one Monte-Carlo replicate.
pub fn observe_replicate(
    u0: &CoeffVector,
    u1: &CoeffVector,
    eps: f64,
    n: usize,
    seed: u64,
    replicate: u64,
    sharing: NoiseSharing,
) -> Result<NoisyObservation> {
    check_eps_n(eps, n)?;
    let xi0 = GaussianStream::new(seed, replicate, 0).take(n);
    let xi1 = match sharing {
        NoiseSharing::Independent => GaussianStream::new(seed, replicate, 1).take(n),
        NoiseSharing::Shared => xi0.clone(),
    };
    let obs0 = (0..n).map(|p| u0.get(p + 1) + eps * xi0[p]).collect();
    let obs1 = (0..n).map(|p| u1.get(p + 1) + eps * xi1[p]).collect();
    Ok(NoisyObservation {
        eps,
        n,
        obs0,
        obs1,
        seed,
        replicate,
    })
}

/// Replicate 0 with independent noise streams.
pub fn observe(u0: &CoeffVector, u1: &CoeffVector, eps: f64, n: usize, seed: u64) -> Result<NoisyObservation> {
    observe_replicate(u0, u1, eps, n, seed, 0, NoiseSharing::Independent)
}

/// Ū⁰, Ū¹ as length-N coefficient vectors.
pub fn truncated_data(obs: &NoisyObservation) -> Result<(CoeffVector, CoeffVector)> {
    Ok((CoeffVector::new(obs.obs0.clone())?, CoeffVector::new(obs.obs1.clone())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiseEstimate {
    pub mean_sq_err: f64,
    pub std_err: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Sample mean and standard error (sample std / √R) of each component of
/// a vector-valued statistic over replicates 0..R. Replicates run in
/// parallel; the sums are taken in replicate order.
pub fn mc_moments(
    replicates: usize,
    stat: impl Fn(u64) -> Result<Vec<f64>> + Sync,
) -> Result<Vec<(f64, f64)>> {
    if replicates < 2 {
        return domain(format!("need at least two replicates, got {replicates}"));
    }
    let samples: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(&stat)
        .collect::<Result<_>>()?;
    let k = samples[0].len();
    if samples.iter().any(|s| s.len() != k) {
        return Err(Error::InvariantViolated("statistic length varies across replicates".into()));
    }
    let r = replicates as f64;
    Ok((0..k)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / r;
            let var = samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            (mean, (var / r).sqrt())
        })
        .collect())
}

/// Monte-Carlo mean of ‖estimator(replicate) − truth‖² over `replicates`
/// replicates. The estimator receives (seed, replicate).
pub fn mise_mc(
    truth: &CoeffVector,
    estimator: impl Fn(u64, u64) -> Result<CoeffVector> + Sync,
    replicates: usize,
    seed: u64,
) -> Result<MiseEstimate> {
    let m = mc_moments(replicates, |r| {
        let est = estimator(seed, r)?;
        Ok(vec![crate::spectral::l2_dist_sq(est.as_slice(), truth.as_slice())])
    })?;
    Ok(MiseEstimate {
        mean_sq_err: m[0].0,
        std_err: m[0].1,
        replicates,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiseBound {
    /// ε²N + Σ_{p>N} c_p²
    pub analytic_mise: f64,
    /// ε²N + λ_N^{−2γ} ‖u₀‖²_{H^{2γ}}
    pub variance_bias_bound: f64,
}

/// Exact expectation of ‖Ū⁰ − u₀‖² and the variance-plus-bias bound.
/// Fails with `InvariantViolated` if the bound is below the exact value.
pub fn mise_bound_check(u0: &CoeffVector, gamma: f64, eps: f64, n: usize, eig: &EigenSystem) -> Result<MiseBound> {
    check_eps_n(eps, n)?;
    if !(gamma >= 0.0) {
        return domain(format!("smoothness index must be >= 0, got {gamma}"));
    }
    let lambda_n = eig.lambda(n)?;
    let variance = eps * eps * n as f64;
    let tail: f64 = u0.as_slice().iter().skip(n).map(|c| c * c).sum();
    let smooth = hq_norm_sq(u0, 2.0 * gamma, eig)?;
    let out = MiseBound {
        analytic_mise: variance + tail,
        variance_bias_bound: variance + lambda_n.powf(-2.0 * gamma) * smooth,
    };
    if !(out.analytic_mise <= out.variance_bias_bound) {
        return Err(Error::InvariantViolated(format!(
            "exact MISE {} exceeds the bound {}",
            out.analytic_mise, out.variance_bias_bound
        )));
    }
    Ok(out)
}
