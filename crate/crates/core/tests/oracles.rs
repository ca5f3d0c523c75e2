//! Kernel primitives against direct double-exponential quadrature of the
//! kernel, with the kernel itself summed from a plain statrs-based series.

use fracreg::mittag_leffler::{kernel_primitive, kernel_second_primitive, VolterraKernel};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use statrs::function::gamma::ln_gamma;

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// τ^{β−1} E_{β,β}(λ τ^β) as a positive power series.
fn kernel(beta: f64, lambda: f64, tau: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let z = lambda * tau.powf(beta);
    let mut sum = 0.0;
    for k in 0..2000 {
        let term = if k == 0 {
            (-ln_gamma(beta)).exp()
        } else if z == 0.0 {
            0.0
        } else {
            (k as f64 * z.ln() - ln_gamma(beta * k as f64 + beta)).exp()
        };
        sum += term;
        if k > 5 && term < 1e-18 * sum {
            break;
        }
    }
    tau.powf(beta - 1.0) * sum
}

fn triples(seed: u64) -> Vec<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..100)
        .map(|_| {
            let beta = 1.05 + 0.9 * uniform(&mut rng);
            let lambda = 50.0 * uniform(&mut rng);
            let s = 0.01 + 0.99 * uniform(&mut rng);
            (beta, lambda, s)
        })
        .collect()
}

#[test]
fn first_primitive_matches_quadrature() {
    for (beta, lambda, s) in triples(11) {
        let want = quadrature::integrate(|tau| kernel(beta, lambda, tau), 0.0, s, 1e-13).integral;
        let got = kernel_primitive(beta, lambda, s).unwrap();
        assert!(
            (got - want).abs() <= 1e-8 * want.abs().max(1.0),
            "beta {beta} lambda {lambda} s {s}: {got} vs {want}"
        );
    }
}

#[test]
fn second_primitive_matches_quadrature() {
    for (beta, lambda, s) in triples(12) {
        let want = quadrature::integrate(|tau| (s - tau) * kernel(beta, lambda, tau), 0.0, s, 1e-13).integral;
        let got = kernel_second_primitive(beta, lambda, s).unwrap();
        assert!(
            (got - want).abs() <= 1e-8 * want.abs().max(1.0),
            "beta {beta} lambda {lambda} s {s}: {got} vs {want}"
        );
    }
}

#[test]
fn kernel_matches_series() {
    for (beta, lambda, s) in triples(13) {
        let k = VolterraKernel::new(beta, lambda).unwrap();
        let want = kernel(beta, lambda, s);
        assert!((k.eval(s).unwrap() - want).abs() <= 1e-12 * want.max(1.0));
    }
}
