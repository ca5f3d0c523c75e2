//! Sine eigenbasis of the Dirichlet Laplacian on (0, π), coefficient
//! transforms, and spectral norms.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Default number of Simpson nodes on [0, π].
pub const DEFAULT_GRID_POINTS: usize = 1025;
/// Nodes required per retained mode by [`project`].
pub const POINTS_PER_MODE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    DirichletLaplace1D,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    kind: BasisKind,
}

impl EigenSystem {
    /// λ_p = p², p = 1..=count.
    pub fn dirichlet_laplace_1d(count: usize) -> Result<Self> {
        if count == 0 {
            return domain("eigensystem needs at least one mode");
        }
        Ok(Self {
            eigenvalues: (1..=count).map(|p| (p * p) as f64).collect(),
            kind: BasisKind::DirichletLaplace1D,
        })
    }

    pub fn user_supplied(eigenvalues: Vec<f64>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return domain("eigensystem needs at least one mode");
        }
        if !eigenvalues.iter().all(|l| l.is_finite() && *l > 0.0) {
            return domain("eigenvalues must be finite and positive");
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return domain("eigenvalues must be nondecreasing");
        }
        Ok(Self {
            eigenvalues,
            kind: BasisKind::UserSupplied,
        })
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// λ_p for a 1-based mode index.
    pub fn lambda(&self, p: usize) -> Result<f64> {
        if p == 0 || p > self.count() {
            return domain(format!(
                "mode {p} outside 1..={} of the eigensystem",
                self.count()
            ));
        }
        Ok(self.eigenvalues[p - 1])
    }
}

/// Coefficients c_1..c_P in the eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CoeffVector(Vec<f64>);

impl TryFrom<Vec<f64>> for CoeffVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CoeffVector> for Vec<f64> {
    fn from(c: CoeffVector) -> Self {
        c.0
    }
}

impl CoeffVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return domain(format!("coefficient {} is not finite", i + 1));
        }
        Ok(Self(coeffs))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// e_p of length `len`.
    pub fn unit(len: usize, p: usize) -> Result<Self> {
        if p == 0 || p > len {
            return domain(format!("unit mode {p} outside 1..={len}"));
        }
        let mut c = vec![0.0; len];
        c[p - 1] = 1.0;
        Ok(Self(c))
    }

    pub(crate) fn from_finite(coeffs: Vec<f64>) -> Self {
        debug_assert!(coeffs.iter().all(|c| c.is_finite()));
        Self(coeffs)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// c_p for a 1-based index; zero past the end.
    pub fn get(&self, p: usize) -> f64 {
        if p == 0 {
            return 0.0;
        }
        self.0.get(p - 1).copied().unwrap_or(0.0)
    }

    /// Zero-padded or truncated copy of length `len`.
    pub fn resized(&self, len: usize) -> Self {
        let mut c = self.0.clone();
        c.resize(len, 0.0);
        Self(c)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,c_p")?;
        for (i, c) in self.0.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, c)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim) != Some("p,c_p") {
            return Err(Error::Parse("expected header `p,c_p`".into()));
        }
        let mut coeffs = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (p, c) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("row {}: expected two fields", row + 1)))?;
            let p: usize = p
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            if p != coeffs.len() + 1 {
                return Err(Error::Parse(format!("row {}: modes must be 1, 2, ... in order", row + 1)));
            }
            coeffs.push(
                c.trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?,
            );
        }
        Self::new(coeffs)
    }
}

/// Squared L² distance between two coefficient sequences, padding the
/// shorter one with zeros.
pub fn l2_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let mut s = 0.0;
    for i in 0..n {
        let d = a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0);
        s += d * d;
    }
    s
}

/// Uniform composite-Simpson grid on [0, π] (endpoints included).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl SpatialGrid {
    pub fn simpson(n: usize) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return domain(format!("Simpson grid needs an odd point count >= 3, got {n}"));
        }
        let h = PI / (n - 1) as f64;
        let points = (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect();
        let weights = (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * h / 3.0
            })
            .collect();
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&y| f(y)).collect()
    }

    /// Quadrature of sampled values.
    pub fn integrate(&self, samples: &[f64]) -> f64 {
        self.weights.iter().zip(samples).map(|(w, f)| w * f).sum()
    }
}

impl Default for SpatialGrid {
    fn default() -> Self {
        Self::simpson(DEFAULT_GRID_POINTS).expect("default grid is valid")
    }
}

/// φ_p(y) = √(2/π) sin(p y).
pub fn basis_eval(p: usize, y: f64) -> Result<f64> {
    if p == 0 {
        return domain("basis index starts at 1");
    }
    if !(0.0..=PI).contains(&y) {
        return domain(format!("y = {y} outside [0, π]"));
    }
    Ok((2.0 / PI).sqrt() * (p as f64 * y).sin())
}

fn phi(p: usize, y: f64) -> f64 {
    (2.0 / PI).sqrt() * (p as f64 * y).sin()
}

/// c_p = ∫ f φ_p for p = 1..=P by grid quadrature.
pub fn project(samples: &[f64], grid: &SpatialGrid, modes: usize) -> Result<CoeffVector> {
    if samples.len() != grid.len() {
        return domain(format!(
            "{} samples for a grid of {} points",
            samples.len(),
            grid.len()
        ));
    }
    let required = POINTS_PER_MODE * modes + 1;
    if grid.len() < required {
        return Err(Error::Resolution {
            points: grid.len(),
            mode: modes,
            required,
        });
    }
    let coeffs = (1..=modes)
        .map(|p| {
            grid.points
                .iter()
                .zip(&grid.weights)
                .zip(samples)
                .map(|((&y, &w), &f)| w * f * phi(p, y))
                .sum()
        })
        .collect();
    CoeffVector::new(coeffs)
}

/// Σ_p c_p φ_p(y) at every grid point.
pub fn synthesize(c: &CoeffVector, grid: &SpatialGrid) -> Vec<f64> {
    grid.points
        .iter()
        .map(|&y| {
            c.0.iter()
                .enumerate()
                .map(|(i, &cp)| cp * phi(i + 1, y))
                .sum()
        })
        .collect()
}

pub fn write_function_csv<W: Write>(mut w: W, grid: &SpatialGrid, samples: &[f64]) -> Result<()> {
    writeln!(w, "y,f(y)")?;
    for (y, f) in grid.points.iter().zip(samples) {
        writeln!(w, "{y},{f}")?;
    }
    Ok(())
}

pub fn l2_norm_sq(c: &CoeffVector) -> f64 {
    c.0.iter().map(|x| x * x).sum()
}

pub fn l2_norm(c: &CoeffVector) -> f64 {
    l2_norm_sq(c).sqrt()
}

/// Σ λ_p^q c_p². At q = 0 every weight is exactly 1, so the sum is
/// bit-identical to [`l2_norm_sq`].
pub fn hq_norm_sq(c: &CoeffVector, q: f64, eig: &EigenSystem) -> Result<f64> {
    if !(q >= 0.0) {
        return domain(format!("Sobolev index must be >= 0, got {q}"));
    }
    if c.len() > eig.count() {
        return domain(format!(
            "{} coefficients but only {} eigenvalues",
            c.len(),
            eig.count()
        ));
    }
    Ok(c
        .0
        .iter()
        .zip(&eig.eigenvalues)
        .map(|(x, l)| l.powf(q) * (x * x))
        .sum())
}

pub fn hq_norm(c: &CoeffVector, q: f64, eig: &EigenSystem) -> Result<f64> {
    Ok(hq_norm_sq(c, q, eig)?.sqrt())
}
