//! Fourier-truncation regularization.
//!
//! The regularized solution keeps only the modes with λ_p ≤ B_N, feeds
//! them the truncated noisy data Ū⁰, Ū¹ and solves the same mild-solution
//! fixed point as [`crate::mild_solver`] on that mode set.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::mild_solver::{InitialData, MildSolver, PicardSolution, ProblemSpec, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::noise_model::{truncated_data, NoisyObservation};
use crate::spectral::{CoeffVector, EigenSystem};

/// R(λ, B): 1 if λ ≤ B else 0, compared exactly.
pub fn cutoff(lambda: f64, b_n: f64) -> u8 {
    u8::from(lambda <= b_n)
}

/// Zeroes every coefficient whose eigenvalue exceeds B.
pub fn project_cutoff(c: &CoeffVector, b_n: f64, eig: &EigenSystem) -> Result<CoeffVector> {
    if c.len() > eig.count() {
        return domain(format!("{} coefficients but {} eigenvalues", c.len(), eig.count()));
    }
    CoeffVector::new(
        c.as_slice()
            .iter()
            .zip(eig.eigenvalues())
            .map(|(&x, &l)| if cutoff(l, b_n) == 1 { x } else { 0.0 })
            .collect(),
    )
}

/// Smoothness and rate parameters of the a-priori parameter choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub b: f64,
    pub m: f64,
    pub k: f64,
    pub gamma: f64,
    pub d: u32,
    pub mu: f64,
}

impl RateParams {
    pub fn new(b: f64, m: f64, k: f64, gamma: f64, d: u32, mu: f64) -> Result<Self> {
        let rp = Self { b, m, k, gamma, d, mu };
        rp.validate()?;
        Ok(rp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b", self.b), ("m", self.m), ("k", self.k), ("mu", self.mu)] {
            if !(v > 0.0) || !v.is_finite() {
                return domain(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gamma >= 0.0) {
            return domain(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if self.d == 0 {
            return domain("dimension d must be positive");
        }
        if !(self.m < 2.0 * self.gamma / self.d as f64) {
            return domain(format!(
                "need m < 2 gamma / d, got m = {} with 2 gamma / d = {}",
                self.m,
                2.0 * self.gamma / self.d as f64
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub eps: f64,
    pub beta: f64,
    pub a: f64,
    pub n: usize,
    pub b_n: f64,
    pub lambda_n: f64,
    pub p_retained: usize,
    pub picard_tol: f64,
    pub max_iter: usize,
    pub m_steps: usize,
}

/// N = ⌊ε^{−2b/(2m+1)}⌋ and B_N = ((m/(k a)) ln N)^β, so that
/// exp(k a B_N^{1/β}) = N^m.
pub fn choose_params(eps: f64, rp: &RateParams, a: f64, beta: f64, eig: &EigenSystem, m_steps: usize) -> Result<RegConfig> {
    rp.validate()?;
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("noise level must lie in (0, 1), got {eps}"));
    }
    if !(a > 0.0) || !(beta > 0.0) {
        return domain("horizon and order must be positive");
    }
    let n_real = eps.powf(-2.0 * rp.b / (2.0 * rp.m + 1.0)).floor();
    if n_real < 2.0 {
        return domain(format!("eps = {eps} gives N = {n_real}; the rule needs N >= 2"));
    }
    if n_real > eig.count() as f64 {
        return domain(format!("N = {n_real} exceeds the {} available eigenvalues", eig.count()));
    }
    let n = n_real as usize;
    let b_n = (rp.m / (rp.k * a) * (n as f64).ln()).powf(beta);
    let lambdas = eig.eigenvalues();
    let p_retained = lambdas.iter().take_while(|&&l| cutoff(l, b_n) == 1).count();
    if p_retained == lambdas.len() {
        return domain(format!(
            "cutoff B_N = {b_n} retains every available eigenvalue; enlarge the eigensystem"
        ));
    }
    Ok(RegConfig {
        eps,
        beta,
        a,
        n,
        b_n,
        lambda_n: eig.lambda(n)?,
        p_retained,
        picard_tol: DEFAULT_TOL,
        max_iter: DEFAULT_MAX_ITER,
        m_steps,
    })
}

/// The three quantities constrained by the admissibility conditions,
/// evaluated along a decreasing noise sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityScan {
    pub eps: Vec<f64>,
    pub b_n: Vec<f64>,
    /// exp(2 a B_N^{1/β}) ε² N
    pub noise_amplification: Vec<f64>,
    /// exp(2 a B_N^{1/β}) / λ_N^{2γ}
    pub bias_amplification: Vec<f64>,
}

impl AdmissibilityScan {
    /// B_N nondecreasing and unbounded in trend, both amplifications
    /// nonincreasing and strictly smaller at the end than at the start.
    pub fn admissible(&self) -> bool {
        let nondecreasing = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
        let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
        let shrinks = |v: &[f64]| v.last() < v.first();
        nondecreasing(&self.b_n)
            && self.b_n.last() > self.b_n.first()
            && nonincreasing(&self.noise_amplification)
            && shrinks(&self.noise_amplification)
            && nonincreasing(&self.bias_amplification)
            && shrinks(&self.bias_amplification)
    }
}

pub fn admissibility_scan(eps_seq: &[f64], rp: &RateParams, a: f64, beta: f64, eig: &EigenSystem) -> Result<AdmissibilityScan> {
    if eps_seq.windows(2).any(|w| w[1] >= w[0]) {
        return domain("noise sequence must be strictly decreasing");
    }
    let mut scan = AdmissibilityScan {
        eps: eps_seq.to_vec(),
        b_n: Vec::new(),
        noise_amplification: Vec::new(),
        bias_amplification: Vec::new(),
    };
    for &eps in eps_seq {
        let cfg = choose_params(eps, rp, a, beta, eig, 1)?;
        let growth = (2.0 * a * cfg.b_n.powf(1.0 / beta)).exp();
        scan.b_n.push(cfg.b_n);
        scan.noise_amplification.push(growth * eps * eps * cfg.n as f64);
        scan.bias_amplification.push(growth / cfg.lambda_n.powf(2.0 * rp.gamma));
    }
    Ok(scan)
}

/// Prepared truncated solver for one configuration.
#[derive(Debug, Clone)]
pub struct RegularizedSolver {
    solver: MildSolver,
    cfg: RegConfig,
}

impl RegularizedSolver {
    /// The field spans every mode of the eigensystem; modes with λ_p > B_N
    /// stay identically zero.
    pub fn new(spec: &ProblemSpec, cfg: &RegConfig) -> Result<Self> {
        let eig = spec.eig();
        let retained = eig.eigenvalues().iter().take_while(|&&l| cutoff(l, cfg.b_n) == 1).count();
        if retained != cfg.p_retained {
            return domain(format!(
                "config retains {} modes but the eigensystem gives {retained}",
                cfg.p_retained
            ));
        }
        Ok(Self {
            solver: MildSolver::with_cutoff(spec, eig.count(), retained, cfg.m_steps)?,
            cfg: *cfg,
        })
    }

    pub fn config(&self) -> &RegConfig {
        &self.cfg
    }

    pub fn t_grid(&self) -> &[f64] {
        self.solver.t_grid()
    }

    /// Solves with arbitrary initial coefficients (for instance the exact
    /// data, which gives the noiseless regularized solution).
    pub fn solve_data(&self, data: &InitialData) -> Result<PicardSolution> {
        let w = self.solver.width();
        let data = InitialData::new(data.u0.resized(w), data.u1.resized(w))?;
        self.solver.solve(&data, self.cfg.picard_tol, self.cfg.max_iter)
    }

    pub fn solve(&self, obs: &NoisyObservation) -> Result<PicardSolution> {
        if obs.n != self.cfg.n {
            return domain(format!("observation has N = {} but config N = {}", obs.n, self.cfg.n));
        }
        let (u0, u1) = truncated_data(obs)?;
        self.solve_data(&InitialData::new(u0, u1)?)
    }
}

pub fn regularized_solve(spec: &ProblemSpec, obs: &NoisyObservation, cfg: &RegConfig) -> Result<PicardSolution> {
    RegularizedSolver::new(spec, cfg)?.solve(obs)
}

/// Which power of the cutoff scale multiplies the truncation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationScale {
    /// |B_N|^{−μ}
    #[default]
    Cutoff,
    /// λ_N^{−μ}
    Eigenvalue,
}

/// Problem-dependent constants entering the error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub m0: f64,
    /// source-condition constant of the L² bound
    pub m_cal: f64,
    /// source-condition constant of the H^q bound
    pub m1: f64,
    pub c1: f64,
    pub d1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub noise_term: f64,
    pub bias_term: f64,
    pub truncation_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryBound {
    pub t: f64,
    pub l2_bound: Option<f64>,
    pub hq_bound: Option<f64>,
    pub terms: BoundTerms,
    /// For the H^q bound: whether λ^q exp(−2(a−t+r)λ^{1/β}) is decreasing on
    /// [B_N, ∞).
    pub envelope_decreasing: Option<bool>,
}

fn check_bound_inputs(cfg: &RegConfig, t: f64, k: &BoundConstants) -> Result<()> {
    if !(0.0..=cfg.a).contains(&t) {
        return domain(format!("t = {t} outside [0, {}]", cfg.a));
    }
    for (name, v) in [("M0", k.m0), ("M", k.m_cal), ("M1", k.m1), ("C1", k.c1), ("D1", k.d1)] {
        if !(v >= 0.0) || !v.is_finite() {
            return domain(format!("{name} must be finite and >= 0, got {v}"));
        }
    }
    Ok(())
}

/// 2C₁ e^{2B^{1/β}t}(2ε²N + M₀/λ_N^{2γ}) + 2D₁ e^{−2(a−t)B^{1/β}} S^{−μ} 𝓜²,
/// with S = B_N or λ_N per `scale`.
pub fn theory_bound_l2(rp: &RateParams, cfg: &RegConfig, t: f64, k: &BoundConstants, scale: TruncationScale) -> Result<TheoryBound> {
    check_bound_inputs(cfg, t, k)?;
    let root = cfg.b_n.powf(1.0 / cfg.beta);
    let grow = 2.0 * k.c1 * (2.0 * root * t).exp();
    let s = match scale {
        TruncationScale::Cutoff => cfg.b_n,
        TruncationScale::Eigenvalue => cfg.lambda_n,
    };
    let terms = BoundTerms {
        noise_term: grow * 2.0 * cfg.eps * cfg.eps * cfg.n as f64,
        bias_term: grow * k.m0 / cfg.lambda_n.powf(2.0 * rp.gamma),
        truncation_term: 2.0 * k.d1 * (-2.0 * (cfg.a - t) * root).exp() * s.powf(-rp.mu) * k.m_cal * k.m_cal,
    };
    Ok(TheoryBound {
        t,
        l2_bound: Some(terms.noise_term + terms.bias_term + terms.truncation_term),
        hq_bound: None,
        terms,
        envelope_decreasing: None,
    })
}

/// λ ↦ λ^q exp(−D λ^{1/β}) is decreasing on [B, ∞) iff D B^{1/β} ≥ β q.
pub fn envelope_decreasing_beyond(q: f64, d: f64, beta: f64, b: f64) -> bool {
    d * b.powf(1.0 / beta) >= beta * q
}

/// 4B^q e^{2B^{1/β}t} C₁(2ε²N + M₀/λ_N^{2γ}) + M₁²(2D₁+1) B^q e^{−2(a−t+r)B^{1/β}}.
pub fn theory_bound_hq(rp: &RateParams, cfg: &RegConfig, t: f64, r: f64, q: f64, k: &BoundConstants) -> Result<TheoryBound> {
    check_bound_inputs(cfg, t, k)?;
    if !(q >= 0.0) {
        return domain(format!("q must be >= 0, got {q}"));
    }
    if !(r > 0.0) {
        return domain(format!("r must be positive, got {r}"));
    }
    let root = cfg.b_n.powf(1.0 / cfg.beta);
    let bq = cfg.b_n.powf(q);
    let grow = 4.0 * bq * (2.0 * root * t).exp() * k.c1;
    let d = 2.0 * (cfg.a - t + r);
    let terms = BoundTerms {
        noise_term: grow * 2.0 * cfg.eps * cfg.eps * cfg.n as f64,
        bias_term: grow * k.m0 / cfg.lambda_n.powf(2.0 * rp.gamma),
        truncation_term: k.m1 * k.m1 * (2.0 * k.d1 + 1.0) * bq * (-d * root).exp(),
    };
    Ok(TheoryBound {
        t,
        l2_bound: None,
        hq_bound: Some(terms.noise_term + terms.bias_term + terms.truncation_term),
        terms,
        envelope_decreasing: Some(envelope_decreasing_beyond(q, d, cfg.beta, cfg.b_n)),
    })
}

/// Exponent ρ of MISE ≍ ε^ρ implied by the L² bound under the parameter
/// choice, with λ_N ≍ N^{2/d} and s = 2b/(2m+1):
///
/// ρ = min( s(2μ/d + 2m(a−t)/(ka)),  2 − s(1 + 2mt/(ka)),  s(4γ/d − 2mt/(ka)) ).
pub fn predicted_rate_exponent(rp: &RateParams, a: f64, t: f64) -> f64 {
    let s = 2.0 * rp.b / (2.0 * rp.m + 1.0);
    let d = rp.d as f64;
    let ka = rp.k * a;
    let truncation = s * (2.0 * rp.mu / d + 2.0 * rp.m * (a - t) / ka);
    let noise = 2.0 - s * (1.0 + 2.0 * rp.m * t / ka);
    let bias = s * (4.0 * rp.gamma / d - 2.0 * rp.m * t / ka);
    truncation.min(noise).min(bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mild_solver::{solve_mild, Lipschitz, NonlinearitySpec};
    use crate::noise_model::observe;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rp(b: f64, m: f64, k: f64) -> RateParams {
        RateParams::new(b, m, k, 2.0, 1, 1.0).unwrap()
    }

    #[test]
    fn cutoff_boundary() {
        assert_eq!(cutoff(4.0, 4.0), 1);
        assert_eq!(cutoff(4.0001, 4.0), 0);
        assert_eq!(cutoff(3.0, 4.0), 1);
    }

    #[test]
    fn rate_params_validation() {
        assert!(RateParams::new(1.0, 1.0, 1.0, 0.5, 1, 1.0).is_err());
        assert!(RateParams::new(1.0, 0.9, 1.0, 0.5, 1, 1.0).is_ok());
        assert!(RateParams::new(1.0, 0.9, 1.0, 0.5, 2, 1.0).is_err());
        assert!(RateParams::new(0.0, 0.5, 1.0, 1.0, 1, 1.0).is_err());
    }

    #[test]
    fn choose_params_examples() {
        let eig = EigenSystem::dirichlet_laplace_1d(64).unwrap();
        let cfg = choose_params(0.01, &rp(1.0, 1.0, 1.0), 1.0, 1.5, &eig, 32).unwrap();
        assert_eq!(cfg.n, 21);
        assert_relative_eq!(cfg.b_n, 21f64.ln().powf(1.5), max_relative = 1e-15);
        assert_relative_eq!(cfg.b_n, 5.31225, max_relative = 1e-5);
        assert_eq!(cfg.p_retained, 2);
        assert_eq!(cfg.lambda_n, 441.0);
        assert!(choose_params(0.9, &rp(1.0, 1.0, 1.0), 1.0, 1.5, &eig, 32).is_err());
        assert!(choose_params(1.0, &rp(1.0, 1.0, 1.0), 1.0, 1.5, &eig, 32).is_err());
        assert!(choose_params(1e-6, &rp(1.0, 1.0, 1.0), 1.0, 1.5, &eig, 32).is_err());
    }

    #[test]
    fn admissibility_depends_on_b_and_k() {
        let eig = EigenSystem::dirichlet_laplace_1d(20_000).unwrap();
        let eps: Vec<f64> = (1..=6).map(|i| 10f64.powi(-i)).collect();
        // b = 1, k = 1: exp(2aB^{1/β}) ε²N = ε² N^{2m+1} stays near 1
        let flat = admissibility_scan(&eps, &rp(1.0, 1.0, 1.0), 1.0, 1.5, &eig).unwrap();
        assert!(!flat.admissible());
        let slow = admissibility_scan(&eps, &rp(0.5, 1.0, 1.0), 1.0, 1.5, &eig).unwrap();
        assert!(slow.admissible(), "{slow:?}");
        let fast_k = admissibility_scan(&eps, &rp(1.0, 1.0, 2.0), 1.0, 1.5, &eig).unwrap();
        assert!(fast_k.admissible(), "{fast_k:?}");
    }

    #[test]
    fn noiseless_untruncated_matches_mild_solution() {
        let eig = EigenSystem::dirichlet_laplace_1d(6).unwrap();
        let spec = ProblemSpec::new(1.5, 1.0, eig, NonlinearitySpec::Lipschitz(Lipschitz::sine(0.3).unwrap())).unwrap();
        let u0 = CoeffVector::new(vec![0.5, 0.2, -0.1, 0.05]).unwrap();
        let u1 = CoeffVector::new(vec![0.1, 0.0, 0.2, 0.0]).unwrap();
        let obs = observe(&u0, &u1, 0.0, 4, 0).unwrap();
        let cfg = RegConfig {
            eps: 0.0,
            beta: 1.5,
            a: 1.0,
            n: 4,
            b_n: 16.0,
            lambda_n: 16.0,
            p_retained: 4,
            picard_tol: 1e-12,
            max_iter: 200,
            m_steps: 32,
        };
        let reg = regularized_solve(&spec, &obs, &cfg).unwrap().field;
        let data = InitialData::new(u0, u1).unwrap();
        let mild = solve_mild(&spec, &data, 4, 32, 1e-12, 200).unwrap().field;
        for i in 0..=32 {
            for p in 0..4 {
                assert!((reg.coeffs()[[i, p]] - mild.coeffs()[[i, p]]).abs() <= 1e-11);
            }
            assert_eq!(reg.coeffs()[[i, 4]], 0.0);
            assert_eq!(reg.coeffs()[[i, 5]], 0.0);
        }
    }

    #[test]
    fn zero_nonlinearity_is_mode_wise_homogeneous() {
        let eig = EigenSystem::dirichlet_laplace_1d(10).unwrap();
        let spec = ProblemSpec::new(1.5, 1.0, eig, NonlinearitySpec::Zero).unwrap();
        let obs = observe(&CoeffVector::unit(2, 1).unwrap(), &CoeffVector::zeros(2), 0.1, 5, 4).unwrap();
        let cfg = choose_params(0.2, &rp(2.0, 1.0, 1.0), 1.0, 1.5, &EigenSystem::dirichlet_laplace_1d(10).unwrap(), 8).unwrap();
        let cfg = RegConfig { n: 5, ..cfg };
        let f = regularized_solve(&spec, &obs, &cfg).unwrap().field;
        for (i, &t) in f.t_grid().iter().enumerate() {
            for p in 1..=10 {
                let expect = if p <= cfg.p_retained {
                    crate::mild_solver::homogeneous_mode(&spec, p, t, obs.obs0[p - 1], obs.obs1[p - 1]).unwrap()
                } else {
                    0.0
                };
                assert_relative_eq!(f.coeffs()[[i, p - 1]], expect, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn l2_bound_structure() {
        let cfg = RegConfig {
            eps: 1e-3,
            beta: 1.5,
            a: 1.0,
            n: 10,
            b_n: 6.0,
            lambda_n: 100.0,
            p_retained: 2,
            picard_tol: 1e-10,
            max_iter: 200,
            m_steps: 16,
        };
        let k = BoundConstants { m0: 2.0, m_cal: 3.0, m1: 1.0, c1: 1.5, d1: 1.2 };
        let r = rp(1.0, 1.0, 1.0);
        let at_a = theory_bound_l2(&r, &cfg, 1.0, &k, TruncationScale::Cutoff).unwrap();
        assert_relative_eq!(at_a.terms.truncation_term, 2.0 * 1.2 * 6f64.powf(-1.0) * 9.0, max_relative = 1e-15);
        let lam = theory_bound_l2(&r, &cfg, 1.0, &k, TruncationScale::Eigenvalue).unwrap();
        assert_relative_eq!(lam.terms.truncation_term, 2.0 * 1.2 / 100.0 * 9.0, max_relative = 1e-15);

        let mid = theory_bound_l2(&r, &cfg, 0.5, &k, TruncationScale::Cutoff).unwrap();
        let total = mid.terms.noise_term + mid.terms.bias_term + mid.terms.truncation_term;
        assert_eq!(mid.l2_bound, Some(total));
        assert!(total.is_finite() && mid.terms.noise_term > 0.0 && mid.terms.bias_term > 0.0);

        let quiet = theory_bound_l2(&r, &RegConfig { eps: 1e-200, ..cfg }, 0.5, &k, TruncationScale::Cutoff).unwrap();
        assert!(quiet.terms.noise_term < 1e-300);
        assert_eq!(quiet.terms.bias_term, mid.terms.bias_term);
        assert_eq!(quiet.terms.truncation_term, mid.terms.truncation_term);
        assert!(theory_bound_l2(&r, &cfg, 1.5, &k, TruncationScale::Cutoff).is_err());
    }

    #[test]
    fn hq_bound_structure() {
        let cfg = RegConfig {
            eps: 1e-4,
            beta: 1.5,
            a: 1.0,
            n: 12,
            b_n: 9.0,
            lambda_n: 144.0,
            p_retained: 3,
            picard_tol: 1e-10,
            max_iter: 200,
            m_steps: 16,
        };
        let k = BoundConstants { m0: 2.0, m_cal: 3.0, m1: 1.5, c1: 1.5, d1: 1.2 };
        let r = rp(1.0, 1.0, 1.0);
        let h0 = theory_bound_hq(&r, &cfg, 0.5, 0.1, 0.0, &k).unwrap();
        let l2 = theory_bound_l2(&r, &cfg, 0.5, &k, TruncationScale::Cutoff).unwrap();
        assert_relative_eq!(h0.terms.noise_term, 2.0 * l2.terms.noise_term, max_relative = 1e-15);
        assert_relative_eq!(
            h0.terms.truncation_term,
            1.5 * 1.5 * 3.4 * (-2.0 * 0.6 * 9f64.powf(1.0 / 1.5)).exp(),
            max_relative = 1e-15
        );
        let at_a = theory_bound_hq(&r, &cfg, 1.0, 1.0, 1.0, &k).unwrap();
        assert_eq!(theory_bound_hq(&r, &cfg, 1.0, 0.1, 1.0, &k).unwrap().envelope_decreasing, Some(false));
        assert!(at_a.hq_bound.unwrap().is_finite() && at_a.hq_bound.unwrap() > 0.0);
        assert_eq!(at_a.envelope_decreasing, Some(true));
        assert!(theory_bound_hq(&r, &cfg, 0.5, 0.0, 1.0, &k).is_err());
    }

    #[test]
    fn envelope_threshold_is_sharp() {
        let (q, beta): (f64, f64) = (1.0, 1.5);
        let d: f64 = 0.2;
        let b_star = (beta * q / d).powf(beta);
        let g = |l: f64| l.powf(q) * (-d * l.powf(1.0 / beta)).exp();
        assert!(envelope_decreasing_beyond(q, d, beta, b_star * 1.0001));
        assert!(!envelope_decreasing_beyond(q, d, beta, b_star * 0.9));
        assert!(g(b_star * 0.9) < g(b_star));
    }

    #[test]
    fn predicted_rate_matches_product_form() {
        // at k = 1 the three branches reproduce
        // ε^{4bm(a−t)/((2m+1)a)} · max(ε^{2−2b}, ε^{2b(4γ−2md)/((2m+1)d)}, ε^{4bμ/((2m+1)d)})
        let r = RateParams::new(0.8, 1.5, 1.0, 2.0, 1, 0.7).unwrap();
        let (a, t) = (1.2, 0.3);
        let lead = 4.0 * r.b * r.m * (a - t) / ((2.0 * r.m + 1.0) * a);
        let s2m = 2.0 * r.m + 1.0;
        let d = r.d as f64;
        let product = [
            2.0 - 2.0 * r.b,
            2.0 * r.b * (4.0 * r.gamma - 2.0 * r.m * d) / (s2m * d),
            4.0 * r.b * r.mu / (s2m * d),
        ]
        .iter()
        .map(|e| lead + e)
        .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(predicted_rate_exponent(&r, a, t), product, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn cutoff_projection_is_idempotent(
            c in proptest::collection::vec(-3.0f64..3.0, 1..20),
            b in 0.5f64..500.0,
        ) {
            let eig = EigenSystem::dirichlet_laplace_1d(20).unwrap();
            let c = CoeffVector::new(c).unwrap();
            let once = project_cutoff(&c, b, &eig).unwrap();
            let twice = project_cutoff(&once, b, &eig).unwrap();
            prop_assert_eq!(&once, &twice);
            for (p, v) in once.as_slice().iter().enumerate() {
                if ((p + 1) * (p + 1)) as f64 > b {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }
}
