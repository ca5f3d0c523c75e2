//! Two-parameter Mittag-Leffler function on the nonnegative real axis.
//!
//! E_{β,γ}(z) = Σ_{k≥0} z^k / Γ(βk + γ)
//!
//! For z ≥ 0 every term of the series is nonnegative, so plain double
//! precision with compensated summation is enough below the switchover
//! z^{1/β} = 25. Above it the exponential asymptotic expansion
//!
//! E_{β,γ}(z) ≈ (1/β) z^{(1−γ)/β} exp(z^{1/β}) − Σ_{k=1..5} z^{−k} / Γ(γ − βk)
//!
//! is used instead.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Series/asymptotic switchover on the scale z^{1/β}.
pub const SWITCHOVER: f64 = 25.0;
/// Number of algebraic correction terms in the asymptotic expansion.
pub const ASYMPTOTIC_TERMS: usize = 5;
/// Hard cap on the number of series terms.
pub const MAX_SERIES_TERMS: usize = 10_000;
/// Relative tail tolerance used by [`ml`] in series mode.
pub const DEFAULT_SERIES_TOL: f64 = 1e-16;

const EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlQuery {
    pub beta: f64,
    pub gamma: f64,
    pub z: f64,
}

impl MlQuery {
    pub fn new(beta: f64, gamma: f64, z: f64) -> Result<Self> {
        validate_params(beta, gamma)?;
        if !(z >= 0.0) || !z.is_finite() {
            return domain(format!("Mittag-Leffler argument must be finite and >= 0, got {z}"));
        }
        Ok(Self { beta, gamma, z })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlValue {
    pub value: f64,
    pub est_abs_err: f64,
}

fn validate_params(beta: f64, gamma: f64) -> Result<()> {
    if !(beta > 0.0 && beta <= 2.0) {
        return domain(format!("beta must lie in (0, 2], got {beta}"));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return domain(format!("gamma must be positive, got {gamma}"));
    }
    Ok(())
}

/// Reciprocal Gamma, zero at the poles 0, −1, −2, …
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        0.0
    } else {
        1.0 / libm::tgamma(x)
    }
}

/// Neumaier compensated accumulator.
#[derive(Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums the power series with a rigorous geometric tail bound.
///
/// The ratio of consecutive terms z·Γ(βk+γ)/Γ(βk+β+γ) is nonincreasing in k
/// (log-convexity of Γ), so once it drops below one the remaining tail is
/// bounded by t_{k+1} / (1 − r_{k+1}).
fn series_core(z: f64, ln_gamma_at: impl Fn(usize) -> f64, tol: f64) -> Result<MlValue> {
    if z == 0.0 {
        let value = (-ln_gamma_at(0)).exp();
        return Ok(MlValue {
            value,
            est_abs_err: 4.0 * EPS * value * (1.0 + ln_gamma_at(0).abs()),
        });
    }
    let ln_z = z.ln();
    let ln_term = |k: usize| k as f64 * ln_z - ln_gamma_at(k);

    let mut acc = Compensated::default();
    let mut rounding = 0.0;
    let mut ln_current = ln_term(0);
    let mut current = ln_current.exp();
    for k in 0..MAX_SERIES_TERMS {
        acc.add(current);
        rounding += current * EPS * (2.0 + (k as f64 * ln_z).abs() + ln_gamma_at(k).abs());

        let ln_next = ln_term(k + 1);
        let next = ln_next.exp();
        let sum = acc.value();
        if !sum.is_finite() {
            return Err(Error::Overflow(format!("series sum at z = {z}")));
        }
        let ratio = (ln_next - ln_current).exp();
        if ratio < 1.0 {
            let tail = next / (1.0 - ratio);
            if tail <= tol * sum.max(1.0) {
                return Ok(MlValue {
                    value: sum,
                    est_abs_err: tail + rounding + 2.0 * EPS * sum,
                });
            }
        }
        ln_current = ln_next;
        current = next;
    }
    Err(Error::NonConvergence {
        terms: MAX_SERIES_TERMS,
        z,
    })
}

/// Power-series evaluation with relative tail tolerance `tol`.
///
/// Terms are summed until the tail bound falls below `tol · max(1, |sum|)`;
/// `est_abs_err` adds a rounding estimate to the tail bound.
pub fn ml_series(q: &MlQuery, tol: f64) -> Result<MlValue> {
    if !(tol > 0.0) {
        return domain(format!("series tolerance must be positive, got {tol}"));
    }
    let (beta, gamma) = (q.beta, q.gamma);
    series_core(q.z, |k| libm::lgamma(beta * k as f64 + gamma), tol)
}

fn asymptotic(beta: f64, gamma: f64, z: f64) -> Result<MlValue> {
    let root = z.powf(1.0 / beta);
    let ln_z = z.ln();
    let lead = (root + (1.0 - gamma) / beta * ln_z - beta.ln()).exp();
    if !lead.is_finite() {
        return Err(Error::Overflow(format!(
            "E_{{{beta},{gamma}}}({z}) exceeds the f64 range"
        )));
    }
    let mut algebraic = 0.0;
    for k in 1..=ASYMPTOTIC_TERMS {
        algebraic += (-(k as f64) * ln_z).exp() * rgamma(gamma - beta * k as f64);
    }
    let omitted = ((-(ASYMPTOTIC_TERMS as f64 + 1.0)) * ln_z).exp()
        * rgamma(gamma - beta * (ASYMPTOTIC_TERMS as f64 + 1.0)).abs();
    Ok(MlValue {
        value: lead - algebraic,
        est_abs_err: omitted + EPS * lead * (2.0 + root) + EPS * algebraic.abs(),
    })
}

/// E_{β,γ}(z) for z ≥ 0, dispatching between the power series and the
/// large-argument expansion at z^{1/β} = [`SWITCHOVER`].
pub fn ml(q: &MlQuery) -> Result<MlValue> {
    MlQuery::new(q.beta, q.gamma, q.z)?;
    if q.z == 0.0 || q.z.powf(1.0 / q.beta) < SWITCHOVER {
        ml_series(q, DEFAULT_SERIES_TOL)
    } else {
        asymptotic(q.beta, q.gamma, q.z)
    }
}

/// Shorthand for `ml(&MlQuery::new(beta, gamma, z)?)?.value`.
pub fn mittag_leffler(beta: f64, gamma: f64, z: f64) -> Result<f64> {
    Ok(ml(&MlQuery::new(beta, gamma, z)?)?.value)
}

/// Evaluator for a fixed (β, γ) pair with the log-Gamma coefficients
/// tabulated once. Produces the same values as [`ml`].
#[derive(Debug, Clone)]
pub struct MittagLeffler {
    beta: f64,
    gamma: f64,
    ln_gamma: Vec<f64>,
}

impl MittagLeffler {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        validate_params(beta, gamma)?;
        // Below the switchover every term with βk + γ beyond ~130 is
        // negligible against the peak term; tabulate that far.
        let needed = ((130.0 - gamma).max(0.0) / beta).ceil() as usize + 2;
        let len = needed.min(MAX_SERIES_TERMS + 1);
        let ln_gamma = (0..len)
            .map(|k| libm::lgamma(beta * k as f64 + gamma))
            .collect();
        Ok(Self {
            beta,
            gamma,
            ln_gamma,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eval(&self, z: f64) -> Result<MlValue> {
        if !(z >= 0.0) || !z.is_finite() {
            return domain(format!("Mittag-Leffler argument must be finite and >= 0, got {z}"));
        }
        if z == 0.0 || z.powf(1.0 / self.beta) < SWITCHOVER {
            let (beta, gamma) = (self.beta, self.gamma);
            let table = &self.ln_gamma;
            series_core(
                z,
                |k| match table.get(k) {
                    Some(v) => *v,
                    None => libm::lgamma(beta * k as f64 + gamma),
                },
                DEFAULT_SERIES_TOL,
            )
        } else {
            asymptotic(self.beta, self.gamma, z)
        }
    }

    pub fn value(&self, z: f64) -> Result<f64> {
        Ok(self.eval(z)?.value)
    }
}

fn check_kernel_beta(beta: f64) -> Result<()> {
    if !(beta > 1.0 && beta < 2.0) {
        return domain(format!("kernel order beta must lie in (1, 2), got {beta}"));
    }
    Ok(())
}

fn check_kernel_args(lambda: f64, s: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return domain(format!("eigenvalue must be finite and >= 0, got {lambda}"));
    }
    if !(s >= 0.0) || !s.is_finite() {
        return domain(format!("integration length must be finite and >= 0, got {s}"));
    }
    Ok(())
}

/// ∫₀^s τ^{β−1} E_{β,β}(λτ^β) dτ = s^β E_{β,β+1}(λ s^β).
pub fn kernel_primitive(beta: f64, lambda: f64, s: f64) -> Result<f64> {
    check_kernel_beta(beta)?;
    check_kernel_args(lambda, s)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    let sb = s.powf(beta);
    Ok(sb * mittag_leffler(beta, beta + 1.0, lambda * sb)?)
}

/// Primitive of [`kernel_primitive`]: ∫₀^s σ^β E_{β,β+1}(λσ^β) dσ = s^{β+1} E_{β,β+2}(λ s^β).
pub fn kernel_second_primitive(beta: f64, lambda: f64, s: f64) -> Result<f64> {
    check_kernel_beta(beta)?;
    check_kernel_args(lambda, s)?;
    if s == 0.0 {
        return Ok(0.0);
    }
    let sb = s.powf(beta);
    Ok(sb * s * mittag_leffler(beta, beta + 2.0, lambda * sb)?)
}

/// The Volterra kernel k(s) = s^{β−1} E_{β,β}(λ s^β) of one spectral mode,
/// with its first two primitives prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct VolterraKernel {
    beta: f64,
    lambda: f64,
    kernel: MittagLeffler,
    first: MittagLeffler,
    second: MittagLeffler,
}

impl VolterraKernel {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        check_kernel_beta(beta)?;
        check_kernel_args(lambda, 0.0)?;
        Ok(Self {
            beta,
            lambda,
            kernel: MittagLeffler::new(beta, beta)?,
            first: MittagLeffler::new(beta, beta + 1.0)?,
            second: MittagLeffler::new(beta, beta + 2.0)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let sb = s.powf(self.beta);
        Ok(sb / s * self.kernel.value(self.lambda * sb)?)
    }

    pub fn primitive(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let sb = s.powf(self.beta);
        Ok(sb * self.first.value(self.lambda * sb)?)
    }

    pub fn second_primitive(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        let sb = s.powf(self.beta);
        Ok(sb * s * self.second.value(self.lambda * sb)?)
    }
}

/// Constants of the three exponential kernel bounds
///
/// E_{β,1}(λt^β) ≤ C₁ e^{λ^{1/β} t},
/// t E_{β,2}(λt^β) ≤ C₂ (1 + λ^{−1/β}) e^{λ^{1/β} t},
/// t^{β−1} E_{β,β}(λt^β) ≤ C₃ e^{λ^{1/β} t}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Prepared evaluator for the three bound ratios at a fixed β.
#[derive(Debug, Clone)]
pub struct KernelBoundRatios {
    beta: f64,
    e1: MittagLeffler,
    e2: MittagLeffler,
    eb: MittagLeffler,
}

impl KernelBoundRatios {
    pub fn new(beta: f64) -> Result<Self> {
        check_kernel_beta(beta)?;
        Ok(Self {
            beta,
            e1: MittagLeffler::new(beta, 1.0)?,
            e2: MittagLeffler::new(beta, 2.0)?,
            eb: MittagLeffler::new(beta, beta)?,
        })
    }

    /// Left-hand sides divided by their exponential envelopes, at (λ, t).
    pub fn ratios(&self, lambda: f64, t: f64) -> Result<[f64; 3]> {
        if !(lambda > 0.0) {
            return domain(format!("eigenvalue must be positive, got {lambda}"));
        }
        if !(t >= 0.0) {
            return domain(format!("time must be >= 0, got {t}"));
        }
        let z = lambda * t.powf(self.beta);
        let root = lambda.powf(1.0 / self.beta);
        let damp = (-root * t).exp();
        let r1 = self.e1.value(z)? * damp;
        let r2 = t * self.e2.value(z)? * damp / (1.0 + 1.0 / root);
        let r3 = if t == 0.0 {
            0.0
        } else {
            t.powf(self.beta - 1.0) * self.eb.value(z)? * damp
        };
        Ok([r1, r2, r3])
    }
}

/// Empirical suprema of the three bound ratios over `lambdas × times`.
pub fn kernel_bound_constants(beta: f64, lambdas: &[f64], times: &[f64]) -> Result<KernelBounds> {
    let ratios = KernelBoundRatios::new(beta)?;
    let mut sup = [0.0f64; 3];
    for &lambda in lambdas {
        for &t in times {
            let r = ratios.ratios(lambda, t)?;
            for (s, v) in sup.iter_mut().zip(r) {
                *s = s.max(v);
            }
        }
    }
    Ok(KernelBounds {
        c1: sup[0],
        c2: sup[1],
        c3: sup[2],
    })
}
