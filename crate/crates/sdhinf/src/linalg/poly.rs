//! Dense polynomial helpers. Coefficients are stored in descending powers
//! of the indeterminate, matching the transfer-function convention used
//! throughout the crate.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::complex_eigenvalues;

/// Multiply two coefficient vectors (descending powers).
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Evaluate a real-coefficient polynomial at a complex point (Horner).
pub fn eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Evaluate a complex-coefficient polynomial at a complex point.
pub fn eval_complex(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Strip leading coefficients below `tol` relative to the largest magnitude.
pub fn trim_leading(coeffs: &[f64], tol: f64) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return vec![0.0];
    }
    let start = coeffs
        .iter()
        .position(|c| c.abs() > tol * scale)
        .unwrap_or(coeffs.len() - 1);
    coeffs[start..].to_vec()
}

/// Expand a polynomial from its roots; the result is monic. Complex roots
/// must come in conjugate pairs for the imaginary residue to cancel.
pub fn from_roots(roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.iter().map(|z| z.re).collect()
}

/// Roots of a real-coefficient polynomial via the companion matrix.
///
/// Leading near-zero coefficients are trimmed (they correspond to roots at
/// infinity); trailing zeros contribute roots at the origin.
pub fn roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    let c = trim_leading(coeffs, 1e-300);
    if c.len() <= 1 {
        return Ok(Vec::new());
    }
    // Trailing zeros: factor out z^k exactly.
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tail = c.iter().rev().take_while(|x| x.abs() == 0.0).count();
    let c = &c[..c.len() - tail];
    let mut out: Vec<Complex64> = std::iter::repeat(Complex64::new(0.0, 0.0))
        .take(tail)
        .collect();
    let n = c.len() - 1;
    if n == 0 {
        return Ok(out);
    }
    let lead = c[0];
    if !lead.is_finite() || scale == 0.0 {
        return Err(Error::Numerical("non-finite polynomial".into()));
    }
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        comp[(0, i)] = -c[i + 1] / lead;
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    out.extend(complex_eigenvalues(&comp)?);
    Ok(out)
}

/// Derivative coefficients (descending powers).
pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    if n <= 1 {
        return vec![0.0];
    }
    coeffs[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (n - 1 - i) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_and_eval() {
        // (z+1)(z+2) = z^2+3z+2
        let p = mul(&[1.0, 1.0], &[1.0, 2.0]);
        assert_eq!(p, vec![1.0, 3.0, 2.0]);
        let v = eval(&p, Complex64::new(1.0, 0.0));
        assert!((v.re - 6.0).abs() < 1e-14);
    }

    #[test]
    fn roots_of_quadratic() {
        let r = roots(&[1.0, -3.0, 2.0]).unwrap();
        let mut re: Vec<f64> = r.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] - 1.0).abs() < 1e-10);
        assert!((re[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn roots_with_trailing_zero() {
        // z^2 + z = z(z+1)
        let r = roots(&[1.0, 1.0, 0.0]).unwrap();
        let mut mags: Vec<f64> = r.iter().map(|z| z.norm()).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(mags[0] < 1e-14);
        assert!((mags[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn from_roots_round_trip() {
        let rs = [
            Complex64::new(-0.5, 0.25),
            Complex64::new(-0.5, -0.25),
            Complex64::new(0.9, 0.0),
        ];
        let p = from_roots(&rs);
        for r in rs {
            assert!(eval(&p, r).norm() < 1e-12);
        }
    }
}
