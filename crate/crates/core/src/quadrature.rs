//! Quadrature rules used to discretize kernels on an interval.

use crate::error::{Error, Result};

/// Nodes and weights of a rule on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// `n`-point Gauss–Legendre rule on `[a, b]`, exact for polynomials of degree `2n - 1`.
///
/// Roots of `P_n` are found by Newton iteration from the Chebyshev guess.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Rule> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::invalid(format!("bad interval [{a}, {b}]")));
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::QuadratureNonConvergence(format!(
                "Legendre root {i} of degree {n}"
            )));
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = mid - half * z;
        nodes[n - 1 - i] = mid + half * z;
        weights[i] = half * w;
        weights[n - 1 - i] = half * w;
    }
    Ok(Rule { nodes, weights })
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite trapezoid rule on `[a, b]` with spacing `h`; `(b - a)/h` must be an integer.
pub fn trapezoid(a: f64, b: f64, h: f64) -> Result<Rule> {
    if !(a.is_finite() && b.is_finite() && a < b && h > 0.0) {
        return Err(Error::invalid(format!("bad grid [{a}, {b}] with step {h}")));
    }
    let cells = (b - a) / h;
    let m = cells.round();
    if (cells - m).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::invalid(format!("step {h} does not divide [{a}, {b}]")));
    }
    let m = m as usize;
    let nodes: Vec<f64> = (0..=m).map(|i| a + i as f64 * h).collect();
    let mut weights = vec![h; m + 1];
    weights[0] = 0.5 * h;
    weights[m] = 0.5 * h;
    Ok(Rule { nodes, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..=12 {
            let r = gauss_legendre(n, -1.0, 3.0).unwrap();
            for deg in 0..2 * n {
                let exact = (3f64.powi(deg as i32 + 1) - (-1f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                let got = r.integrate(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-11 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_legendre_gaussian_integral() {
        let r = gauss_legendre(80, -10.0, 10.0).unwrap();
        let got = r.integrate(|x| (-x * x / 2.0).exp());
        assert!((got - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
        assert!(r.weights.iter().all(|&w| w > 0.0));
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn trapezoid_grid() {
        let r = trapezoid(-1.0, 1.0, 0.25).unwrap();
        assert_eq!(r.len(), 9);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert!(trapezoid(0.0, 1.0, 0.3).is_err());
    }
}
