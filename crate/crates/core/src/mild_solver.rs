//! Mild solution in coefficient space.
//!
//! Each mode satisfies
//!
//! u_p(t) = E_{β,1}(λ_p t^β) u0_p + t E_{β,2}(λ_p t^β) u1_p
//!        + ∫₀^t (t−η)^{β−1} E_{β,β}(λ_p (t−η)^β) G_p(η, u(η)) dη,
//!
//! which is solved by Picard iteration on a uniform time grid. The
//! Volterra term uses product integration: G_p is interpolated linearly on
//! each cell and the kernel is integrated exactly through its first two
//! primitives, which gives second-order accuracy in the step.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mittag_leffler::{kernel_bound_constants, MittagLeffler, VolterraKernel};
use crate::spectral::{CoeffVector, EigenSystem};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

type CoeffMap = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// A globally Lipschitz nonlinearity acting on coefficient vectors.
#[derive(Clone)]
pub struct Lipschitz {
    k: f64,
    eval: Arc<CoeffMap>,
}

impl Lipschitz {
    /// `eval` must satisfy ‖eval(t, v) − eval(t, w)‖ ≤ k ‖v − w‖ and return a
    /// vector of the same length as its input.
    pub fn new(k: f64, eval: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return domain(format!("Lipschitz constant must be finite and >= 0, got {k}"));
        }
        Ok(Self {
            k,
            eval: Arc::new(eval),
        })
    }

    /// Mode-wise G_p(t, v) = k sin(v_p).
    pub fn sine(k: f64) -> Result<Self> {
        Self::new(k, move |_, v| v.iter().map(|x| k * x.sin()).collect())
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn eval(&self, t: f64, v: &[f64]) -> Vec<f64> {
        (self.eval)(t, v)
    }
}

impl fmt::Debug for Lipschitz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lipschitz").field("k", &self.k).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum NonlinearitySpec {
    Zero,
    Lipschitz(Lipschitz),
    /// Linear mode-wise map v_p ↦ exp(λ_p^{1/β}(t − a)) v_p / (2 a C₃).
    GBar { c3: f64 },
}

impl NonlinearitySpec {
    /// The damped linear map with C₃ taken as the supremum of
    /// t^{β−1} E_{β,β}(λ t^β) e^{−λ^{1/β} t} over the given eigenvalues and a
    /// 2001-point grid on [0, a]. With this constant the Picard map is a
    /// 1/2-contraction in the sup-in-time L² norm.
    pub fn gbar_calibrated(beta: f64, a: f64, lambdas: &[f64]) -> Result<Self> {
        let times: Vec<f64> = (0..=2000).map(|i| a * i as f64 / 2000.0).collect();
        let c3 = kernel_bound_constants(beta, lambdas, &times)?.c3;
        Ok(Self::GBar { c3 })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    beta: f64,
    a: f64,
    eig: EigenSystem,
    nonlinearity: NonlinearitySpec,
}

impl ProblemSpec {
    pub fn new(beta: f64, a: f64, eig: EigenSystem, nonlinearity: NonlinearitySpec) -> Result<Self> {
        if !(beta > 1.0 && beta < 2.0) {
            return domain(format!("fractional order must lie in (1, 2), got {beta}"));
        }
        if !(a > 0.0) || !a.is_finite() {
            return domain(format!("horizon must be positive, got {a}"));
        }
        if let NonlinearitySpec::GBar { c3 } = nonlinearity {
            if !(c3 > 0.0) || !c3.is_finite() {
                return domain(format!("C3 must be positive, got {c3}"));
            }
        }
        Ok(Self {
            beta,
            a,
            eig,
            nonlinearity,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn eig(&self) -> &EigenSystem {
        &self.eig
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.nonlinearity
    }

    pub fn with_nonlinearity(&self, nonlinearity: NonlinearitySpec) -> Result<Self> {
        Self::new(self.beta, self.a, self.eig.clone(), nonlinearity)
    }

    /// G(t, v) for a coefficient vector v whose entries are modes 1..=len.
    fn apply_g(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        match &self.nonlinearity {
            NonlinearitySpec::Zero => Ok(vec![0.0; v.len()]),
            NonlinearitySpec::Lipschitz(g) => {
                let out = g.eval(t, v);
                if out.len() != v.len() {
                    return Err(Error::InvariantViolated(format!(
                        "nonlinearity returned {} coefficients for {} inputs",
                        out.len(),
                        v.len()
                    )));
                }
                Ok(out)
            }
            NonlinearitySpec::GBar { c3 } => Ok(v
                .iter()
                .zip(self.eig.eigenvalues())
                .map(|(x, l)| (l.powf(1.0 / self.beta) * (t - self.a)).exp() / (2.0 * self.a * c3) * x)
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub u0: CoeffVector,
    pub u1: CoeffVector,
}

impl InitialData {
    pub fn new(u0: CoeffVector, u1: CoeffVector) -> Result<Self> {
        if u0.len() != u1.len() {
            return domain(format!(
                "initial data lengths differ: {} vs {}",
                u0.len(),
                u1.len()
            ));
        }
        Ok(Self { u0, u1 })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

/// Coefficients u_p(t_i) on a uniform grid t_i = i a / M.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierField {
    t_grid: Vec<f64>,
    coeffs: Array2<f64>,
}

pub fn uniform_grid(a: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| a * i as f64 / steps as f64).collect()
}

impl FourierField {
    pub fn new(t_grid: Vec<f64>, coeffs: Array2<f64>) -> Result<Self> {
        if t_grid.len() < 2 || t_grid[0] != 0.0 {
            return domain("time grid must start at 0 and have at least two points");
        }
        if coeffs.nrows() != t_grid.len() {
            return domain("coefficient rows must match the time grid");
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Overflow("field coefficients are not finite".into()));
        }
        Ok(Self { t_grid, coeffs })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn steps(&self) -> usize {
        self.t_grid.len() - 1
    }

    pub fn width(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn row(&self, i: usize) -> CoeffVector {
        CoeffVector::from_finite(self.coeffs.row(i).to_vec())
    }

    pub fn row_slice(&self, i: usize) -> Vec<f64> {
        self.coeffs.row(i).to_vec()
    }

    /// Grid index of `t`, which must coincide with a node to 1e−9 relative
    /// to the horizon.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let a = *self.t_grid.last().unwrap();
        let i = (t / a * self.steps() as f64).round();
        if i < 0.0 || i > self.steps() as f64 || (self.t_grid[i as usize] - t).abs() > 1e-9 * a {
            return domain(format!("t = {t} is not a node of the time grid"));
        }
        Ok(i as usize)
    }

    /// Keeps every `factor`-th row.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps().is_multiple_of(factor) {
            return domain(format!("cannot subsample {} steps by {factor}", self.steps()));
        }
        let rows: Vec<usize> = (0..=self.steps()).step_by(factor).collect();
        let coeffs = self.coeffs.select(ndarray::Axis(0), &rows);
        let t_grid = rows.iter().map(|&i| self.t_grid[i]).collect();
        Self::new(t_grid, coeffs)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,p,coeff")?;
        for (i, t) in self.t_grid.iter().enumerate() {
            for p in 0..self.width() {
                writeln!(w, "{},{},{}", t, p + 1, self.coeffs[[i, p]])?;
            }
        }
        Ok(())
    }
}

fn check_time(spec: &ProblemSpec, t: f64) -> Result<()> {
    if !(0.0..=spec.a).contains(&t) {
        return domain(format!("t = {t} outside [0, {}]", spec.a));
    }
    Ok(())
}

/// E_{β,1}(λ_p t^β) u0_p + t E_{β,2}(λ_p t^β) u1_p.
pub fn homogeneous_mode(spec: &ProblemSpec, p: usize, t: f64, u0_p: f64, u1_p: f64) -> Result<f64> {
    check_time(spec, t)?;
    let lambda = spec.eig.lambda(p)?;
    let z = lambda * t.powf(spec.beta);
    let e1 = MittagLeffler::new(spec.beta, 1.0)?.value(z)?;
    let e2 = MittagLeffler::new(spec.beta, 2.0)?.value(z)?;
    Ok(e1 * u0_p + t * e2 * u1_p)
}

/// Lag weights of the product-trapezoid rule for one mode.
///
/// With K₁, K₂ the first and second primitives of the kernel and h the
/// step, lag n ≥ 1 contributes A(n) to the left node of its cell and B(n)
/// to the right node:
///
/// A(n) = K₁(nh) − (K₂(nh) − K₂((n−1)h))/h
/// B(n) = (K₂(nh) − K₂((n−1)h))/h − K₁((n−1)h)
#[derive(Debug, Clone)]
struct LagWeights {
    left: Vec<f64>,
    right: Vec<f64>,
}

impl LagWeights {
    fn new(beta: f64, lambda: f64, h: f64, steps: usize) -> Result<Self> {
        let kernel = VolterraKernel::new(beta, lambda)?;
        let mut k1 = Vec::with_capacity(steps + 1);
        let mut k2 = Vec::with_capacity(steps + 1);
        for n in 0..=steps {
            let s = n as f64 * h;
            k1.push(kernel.primitive(s)?);
            k2.push(kernel.second_primitive(s)?);
        }
        let mut left = vec![0.0; steps + 1];
        let mut right = vec![0.0; steps + 1];
        for n in 1..=steps {
            let dk2 = (k2[n] - k2[n - 1]) / h;
            left[n] = k1[n] - dk2;
            right[n] = dk2 - k1[n - 1];
        }
        Ok(Self { left, right })
    }

    /// ∫₀^{t_i} k(t_i − η) g(η) dη with g given at t_0..t_i.
    fn apply(&self, i: usize, g: impl Fn(usize) -> f64) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let mut s = self.left[i] * g(0);
        for j in 1..i {
            s += (self.left[i - j] + self.right[i - j + 1]) * g(j);
        }
        s + self.right[1] * g(i)
    }
}

/// Volterra term of mode p at t_i = the last sample time, with g sampled on
/// the uniform grid t_0 = 0, …, t_i.
pub fn volterra_step(spec: &ProblemSpec, p: usize, g_history: &[f64], t_i: f64) -> Result<f64> {
    check_time(spec, t_i)?;
    if g_history.is_empty() {
        return domain("g_history needs at least the sample at t = 0");
    }
    let i = g_history.len() - 1;
    if i == 0 {
        return Ok(0.0);
    }
    let lambda = spec.eig.lambda(p)?;
    let w = LagWeights::new(spec.beta, lambda, t_i / i as f64, i)?;
    Ok(w.apply(i, |j| g_history[j]))
}

/// Fixed point together with the Picard history.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub field: FourierField,
    /// max_i ‖u^{(k)}(t_i) − u^{(k−1)}(t_i)‖ for sweeps k = 1, 2, …
    pub diffs: Vec<f64>,
}

/// Per-mode tables for repeated solves on one grid.
#[derive(Debug, Clone)]
pub struct MildSolver {
    spec: ProblemSpec,
    width: usize,
    retained: usize,
    t_grid: Vec<f64>,
    /// E_{β,1}(λ_p t_i^β), rows = time, cols = retained modes
    hom0: Array2<f64>,
    /// t_i E_{β,2}(λ_p t_i^β)
    hom1: Array2<f64>,
    weights: Vec<LagWeights>,
}

impl MildSolver {
    /// Solver for modes 1..=width on M = `steps` uniform steps.
    pub fn new(spec: &ProblemSpec, width: usize, steps: usize) -> Result<Self> {
        Self::with_cutoff(spec, width, width, steps)
    }

    /// Modes past `retained` are held at zero: the truncated scheme.
    pub fn with_cutoff(spec: &ProblemSpec, width: usize, retained: usize, steps: usize) -> Result<Self> {
        if width == 0 || width > spec.eig.count() {
            return domain(format!(
                "field width {width} must lie in 1..={}",
                spec.eig.count()
            ));
        }
        if retained > width {
            return domain(format!("retained modes {retained} exceed width {width}"));
        }
        if steps == 0 {
            return domain("need at least one time step");
        }
        let t_grid = uniform_grid(spec.a, steps);
        let h = spec.a / steps as f64;
        let beta = spec.beta;
        let lambdas = &spec.eig.eigenvalues()[..retained];
        let e1 = MittagLeffler::new(beta, 1.0)?;
        let e2 = MittagLeffler::new(beta, 2.0)?;

        let per_mode: Vec<(Vec<f64>, Vec<f64>, LagWeights)> = lambdas
            .par_iter()
            .map(|&lambda| {
                let mut c0 = Vec::with_capacity(steps + 1);
                let mut c1 = Vec::with_capacity(steps + 1);
                for &t in &t_grid {
                    let z = lambda * t.powf(beta);
                    c0.push(e1.value(z)?);
                    c1.push(t * e2.value(z)?);
                }
                Ok((c0, c1, LagWeights::new(beta, lambda, h, steps)?))
            })
            .collect::<Result<_>>()?;

        let mut hom0 = Array2::zeros((steps + 1, retained));
        let mut hom1 = Array2::zeros((steps + 1, retained));
        let mut weights = Vec::with_capacity(retained);
        for (p, (c0, c1, w)) in per_mode.into_iter().enumerate() {
            for i in 0..=steps {
                hom0[[i, p]] = c0[i];
                hom1[[i, p]] = c1[i];
            }
            weights.push(w);
        }
        Ok(Self {
            spec: spec.clone(),
            width,
            retained,
            t_grid,
            hom0,
            hom1,
            weights,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    /// Picard iteration from the homogeneous part. Convergence is declared
    /// when the sup-in-time L² difference of two sweeps is at most
    /// `tol · max(1, ‖u‖)`.
    pub fn solve(&self, data: &InitialData, tol: f64, max_iter: usize) -> Result<PicardSolution> {
        if !(tol > 0.0) {
            return domain(format!("Picard tolerance must be positive, got {tol}"));
        }
        if data.len() > self.width {
            return domain(format!(
                "initial data has {} modes but the field has {}",
                data.len(),
                self.width
            ));
        }
        let rows = self.t_grid.len();
        let mut base = Array2::<f64>::zeros((rows, self.width));
        for p in 0..self.retained {
            let (u0, u1) = (data.u0.get(p + 1), data.u1.get(p + 1));
            for i in 0..rows {
                base[[i, p]] = self.hom0[[i, p]] * u0 + self.hom1[[i, p]] * u1;
            }
        }
        if base.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("homogeneous part is not finite".into()));
        }

        let mut u = base.clone();
        let mut diffs = Vec::new();
        if self.spec.nonlinearity.is_zero() || self.retained == 0 {
            diffs.push(0.0);
            return Ok(PicardSolution {
                field: FourierField::new(self.t_grid.clone(), u)?,
                diffs,
            });
        }

        for _ in 0..max_iter {
            let g: Vec<Vec<f64>> = (0..rows)
                .into_par_iter()
                .map(|i| self.spec.apply_g(self.t_grid[i], u.row(i).as_slice().unwrap()))
                .collect::<Result<_>>()?;
            let columns: Vec<Vec<f64>> = (0..self.retained)
                .into_par_iter()
                .map(|p| {
                    let w = &self.weights[p];
                    (0..rows)
                        .map(|i| base[[i, p]] + w.apply(i, |j| g[j][p]))
                        .collect()
                })
                .collect();
            let mut next = Array2::<f64>::zeros((rows, self.width));
            for (p, col) in columns.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    next[[i, p]] = *v;
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow("Picard iterate is not finite".into()));
            }
            let mut diff = 0.0f64;
            let mut size = 0.0f64;
            for i in 0..rows {
                let mut d = 0.0;
                let mut s = 0.0;
                for p in 0..self.width {
                    let e = next[[i, p]] - u[[i, p]];
                    d += e * e;
                    s += next[[i, p]] * next[[i, p]];
                }
                diff = diff.max(d.sqrt());
                size = size.max(s.sqrt());
            }
            diffs.push(diff);
            u = next;
            if diff <= tol * size.max(1.0) {
                return Ok(PicardSolution {
                    field: FourierField::new(self.t_grid.clone(), u)?,
                    diffs,
                });
            }
        }
        Err(Error::NoConvergence {
            max_iter,
            last_diff: diffs.last().copied().unwrap_or(f64::NAN),
            diffs,
        })
    }
}

/// Mild solution for modes 1..=P on M uniform steps.
pub fn solve_mild(
    spec: &ProblemSpec,
    data: &InitialData,
    modes: usize,
    steps: usize,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    MildSolver::new(spec, modes, steps)?.solve(data, tol, max_iter)
}

/// Coefficient profile of a manufactured solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Profile {
    /// u0 = amplitude · e_p, u1 = 0.
    SingleMode { p: usize, amplitude: f64 },
    /// u0_p = p^{−s} for p ≤ modes, u1 = 0.
    PowerDecay { modes: usize, s: f64 },
    Explicit { u0: Vec<f64>, u1: Vec<f64> },
}

impl Profile {
    pub fn data(&self, width: usize) -> Result<InitialData> {
        let (u0, u1) = match self {
            Profile::SingleMode { p, amplitude } => {
                let mut u0 = vec![0.0; width];
                if *p == 0 || *p > width {
                    return domain(format!("mode {p} outside 1..={width}"));
                }
                u0[p - 1] = *amplitude;
                (u0, vec![0.0; width])
            }
            Profile::PowerDecay { modes, s } => {
                if *modes > width {
                    return domain(format!("{modes} profile modes exceed width {width}"));
                }
                let mut u0 = vec![0.0; width];
                for (p, c) in u0.iter_mut().enumerate().take(*modes) {
                    *c = ((p + 1) as f64).powf(-s);
                }
                (u0, vec![0.0; width])
            }
            Profile::Explicit { u0, u1 } => {
                if u0.len() > width || u1.len() > width {
                    return domain(format!("explicit profile longer than width {width}"));
                }
                let mut a = u0.clone();
                let mut b = u1.clone();
                a.resize(width, 0.0);
                b.resize(width, 0.0);
                (a, b)
            }
        };
        InitialData::new(CoeffVector::new(u0)?, CoeffVector::new(u1)?)
    }
}

/// Initial data for `profile` and its solution on M steps, computed on the
/// refined 2M grid and sampled back at the M grid nodes.
pub fn manufacture(
    spec: &ProblemSpec,
    modes: usize,
    profile: &Profile,
    steps: usize,
    tol: f64,
) -> Result<(InitialData, FourierField)> {
    let data = profile.data(modes)?;
    let fine = solve_mild(spec, &data, modes, 2 * steps, tol, DEFAULT_MAX_ITER)?;
    Ok((data, fine.field.subsample(2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mittag_leffler::{kernel_primitive, mittag_leffler};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn laplace(beta: f64, a: f64, count: usize, g: NonlinearitySpec) -> ProblemSpec {
        ProblemSpec::new(beta, a, EigenSystem::dirichlet_laplace_1d(count).unwrap(), g).unwrap()
    }

    #[test]
    fn problem_spec_validation() {
        let eig = EigenSystem::dirichlet_laplace_1d(2).unwrap();
        assert!(ProblemSpec::new(1.0, 1.0, eig.clone(), NonlinearitySpec::Zero).is_err());
        assert!(ProblemSpec::new(2.0, 1.0, eig.clone(), NonlinearitySpec::Zero).is_err());
        assert!(ProblemSpec::new(1.5, 0.0, eig.clone(), NonlinearitySpec::Zero).is_err());
        assert!(ProblemSpec::new(1.5, 1.0, eig, NonlinearitySpec::GBar { c3: 0.0 }).is_err());
    }

    #[test]
    fn homogeneous_mode_examples() {
        let spec = laplace(1.5, 1.0, 4, NonlinearitySpec::Zero);
        assert_eq!(homogeneous_mode(&spec, 1, 0.0, 0.3, 7.0).unwrap(), 0.3);
        assert_relative_eq!(
            homogeneous_mode(&spec, 1, 1.0, 1.0, 0.0).unwrap(),
            1.939487261433749,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            homogeneous_mode(&spec, 1, 1.0, 0.0, 1.0).unwrap(),
            1.346248462295925,
            max_relative = 1e-13
        );
        assert!(homogeneous_mode(&spec, 1, 1.5, 1.0, 0.0).is_err());
        assert!(homogeneous_mode(&spec, 5, 0.5, 1.0, 0.0).is_err());
    }

    #[test]
    fn volterra_step_examples() {
        let spec = laplace(1.5, 1.0, 4, NonlinearitySpec::Zero);
        assert_eq!(volterra_step(&spec, 2, &[0.0; 9], 1.0).unwrap(), 0.0);
        // λ = 4, constant history: the rule is exact for linear g
        let v = volterra_step(&spec, 2, &[1.0; 17], 1.0).unwrap();
        assert_relative_eq!(v, kernel_primitive(1.5, 4.0, 1.0).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(v, 1.834929881017449, max_relative = 1e-12);
        // linear history is integrated exactly too
        let g: Vec<f64> = (0..=8).map(|i| 2.0 - i as f64 / 8.0).collect();
        let k = VolterraKernel::new(1.5, 4.0).unwrap();
        let exact = 2.0 * k.primitive(1.0).unwrap() - k.second_primitive(1.0).unwrap();
        assert_relative_eq!(volterra_step(&spec, 2, &g, 1.0).unwrap(), exact, max_relative = 1e-12);
    }

    #[test]
    fn volterra_step_at_zero_eigenvalue() {
        let spec = ProblemSpec::new(
            1.3,
            2.0,
            EigenSystem::user_supplied(vec![f64::MIN_POSITIVE]).unwrap(),
            NonlinearitySpec::Zero,
        )
        .unwrap();
        let v = volterra_step(&spec, 1, &[1.0; 11], 1.7).unwrap();
        assert_relative_eq!(v, 1.7f64.powf(1.3) / libm::tgamma(2.3), max_relative = 1e-12);
    }

    #[test]
    fn zero_nonlinearity_gives_closed_form_modes() {
        let spec = laplace(1.5, 1.0, 3, NonlinearitySpec::Zero);
        let data = InitialData::new(
            CoeffVector::new(vec![1.0, 0.0, 0.0]).unwrap(),
            CoeffVector::new(vec![0.0, 1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let sol = solve_mild(&spec, &data, 3, 16, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        for (i, &t) in sol.field.t_grid().iter().enumerate() {
            let c = sol.field.coeffs();
            let e1 = mittag_leffler(1.5, 1.0, t.powf(1.5)).unwrap();
            let e2 = t * mittag_leffler(1.5, 2.0, 4.0 * t.powf(1.5)).unwrap();
            assert!((c[[i, 0]] - e1).abs() <= 1e-12 * e1);
            assert!((c[[i, 1]] - e2).abs() <= 1e-12 * e2.max(1e-300));
            assert_eq!(c[[i, 2]], 0.0);
        }
    }

    #[test]
    fn gbar_contracts_by_half() {
        let beta = 1.5;
        let a = 1.0;
        let lambdas: Vec<f64> = (1..=4).map(|p| (p * p) as f64).collect();
        let g = NonlinearitySpec::gbar_calibrated(beta, a, &lambdas).unwrap();
        let spec = laplace(beta, a, 4, g);
        let data = InitialData::new(
            CoeffVector::new(vec![1e-2, 0.0, 0.0, 0.0]).unwrap(),
            CoeffVector::zeros(4),
        )
        .unwrap();
        let sol = solve_mild(&spec, &data, 4, 64, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.diffs.len() >= 3);
        for w in sol.diffs.windows(2).skip(1) {
            if w[0] > 0.0 {
                assert!(w[1] / w[0] <= 0.6, "ratio {}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn no_convergence_reports_history() {
        let g = Lipschitz::new(50.0, |_, v| v.iter().map(|x| 50.0 * x).collect()).unwrap();
        let spec = laplace(1.5, 2.0, 2, NonlinearitySpec::Lipschitz(g));
        let data = InitialData::new(CoeffVector::new(vec![1.0, 1.0]).unwrap(), CoeffVector::zeros(2)).unwrap();
        match solve_mild(&spec, &data, 2, 16, 1e-14, 3) {
            Err(Error::NoConvergence { max_iter, diffs, .. }) => {
                assert_eq!(max_iter, 3);
                assert_eq!(diffs.len(), 3);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_nonlinearity_output_length() {
        let g = Lipschitz::new(1.0, |_, _| vec![0.0]).unwrap();
        let spec = laplace(1.5, 1.0, 3, NonlinearitySpec::Lipschitz(g));
        let data = InitialData::new(CoeffVector::unit(3, 1).unwrap(), CoeffVector::zeros(3)).unwrap();
        assert!(matches!(
            solve_mild(&spec, &data, 3, 8, 1e-10, 10),
            Err(Error::InvariantViolated(_))
        ));
    }

    #[test]
    fn initial_row_and_slope() {
        let spec = laplace(1.4, 1.0, 3, NonlinearitySpec::Lipschitz(Lipschitz::sine(0.5).unwrap()));
        let data = InitialData::new(
            CoeffVector::new(vec![0.4, -0.2, 0.1]).unwrap(),
            CoeffVector::new(vec![0.3, 0.5, -0.7]).unwrap(),
        )
        .unwrap();
        let mut errs = Vec::new();
        for steps in [64, 128] {
            let sol = solve_mild(&spec, &data, 3, steps, 1e-12, 200).unwrap();
            let f = &sol.field;
            assert_eq!(f.row(0), data.u0);
            let h = f.t_grid()[1];
            let err = (0..3)
                .map(|p| ((f.coeffs()[[1, p]] - f.coeffs()[[0, p]]) / h - data.u1.get(p + 1)).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // the leading correction is λ u0 t^β / Γ(β+1), so the one-sided
        // slope converges like h^{β−1}
        assert!(errs[1] < errs[0] * 0.8, "{errs:?}");
    }

    #[test]
    fn manufacture_single_mode_is_closed_form() {
        let spec = laplace(1.5, 1.0, 2, NonlinearitySpec::Zero);
        let (data, field) = manufacture(&spec, 2, &Profile::SingleMode { p: 1, amplitude: 2.0 }, 8, 1e-10).unwrap();
        assert_eq!(data.u0.as_slice(), &[2.0, 0.0]);
        assert_eq!(field.steps(), 8);
        for (i, &t) in field.t_grid().iter().enumerate() {
            let e = 2.0 * mittag_leffler(1.5, 1.0, t.powf(1.5)).unwrap();
            assert_relative_eq!(field.coeffs()[[i, 0]], e, max_relative = 1e-13);
        }
    }

    #[test]
    fn manufacture_superposition() {
        let spec = laplace(1.6, 0.8, 4, NonlinearitySpec::Zero);
        let (_, field) = manufacture(&spec, 4, &Profile::PowerDecay { modes: 4, s: 2.0 }, 10, 1e-10).unwrap();
        for (i, &t) in field.t_grid().iter().enumerate() {
            for p in 1..=4 {
                let lam = (p * p) as f64;
                let e = mittag_leffler(1.6, 1.0, lam * t.powf(1.6)).unwrap() / lam;
                assert_relative_eq!(field.coeffs()[[i, p - 1]], e, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn field_csv_and_time_index() {
        let f = FourierField::new(uniform_grid(1.0, 2), Array2::from_elem((3, 2), 0.5)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,p,coeff\n0,1,0.5\n0,2,0.5\n0.5,1,0.5\n"));
        assert_eq!(s.lines().count(), 7);
        assert_eq!(f.time_index(0.5).unwrap(), 1);
        assert!(f.time_index(0.3).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn linear_superposition(
            a in proptest::collection::vec(-1.0f64..1.0, 12),
            b in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let spec = laplace(1.5, 1.0, 3, NonlinearitySpec::Zero);
            let mk = |v: &[f64]| InitialData::new(
                CoeffVector::new(v[..3].to_vec()).unwrap(),
                CoeffVector::new(v[3..6].to_vec()).unwrap(),
            ).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let solver = MildSolver::new(&spec, 3, 16).unwrap();
            let fa = solver.solve(&mk(&a), 1e-10, 200).unwrap().field;
            let fb = solver.solve(&mk(&b), 1e-10, 200).unwrap().field;
            let fs = solver.solve(&mk(&sum), 1e-10, 200).unwrap().field;
            for ((x, y), s) in fa.coeffs().iter().zip(fb.coeffs()).zip(fs.coeffs()) {
                prop_assert!((x + y - s).abs() <= 1e-9);
            }
        }

        #[test]
        fn mode_decoupling(p in 1usize..=4, delta in -1.0f64..1.0) {
            let spec = laplace(1.3, 1.0, 4, NonlinearitySpec::Zero);
            let base = InitialData::new(
                CoeffVector::new(vec![0.5, -0.25, 0.1, 0.2]).unwrap(),
                CoeffVector::new(vec![0.0, 0.3, 0.0, -0.1]).unwrap(),
            ).unwrap();
            let mut u0 = base.u0.clone().into_vec();
            u0[p - 1] += delta;
            let pert = InitialData::new(CoeffVector::new(u0).unwrap(), base.u1.clone()).unwrap();
            let solver = MildSolver::new(&spec, 4, 8).unwrap();
            let f0 = solver.solve(&base, 1e-10, 10).unwrap().field;
            let f1 = solver.solve(&pert, 1e-10, 10).unwrap().field;
            for q in 0..4 {
                if q + 1 != p {
                    prop_assert_eq!(f0.coeffs().column(q), f1.coeffs().column(q));
                }
            }
        }

        #[test]
        fn sine_nonlinearity_is_lipschitz(
            k in 0.0f64..3.0,
            v in proptest::collection::vec(-5.0f64..5.0, 6),
            w in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let g = Lipschitz::sine(k).unwrap();
            let d_out = crate::spectral::l2_dist_sq(&g.eval(0.3, &v), &g.eval(0.3, &w)).sqrt();
            let d_in = crate::spectral::l2_dist_sq(&v, &w).sqrt();
            prop_assert!(d_out <= k * d_in + 1e-12);
        }
    }
}
