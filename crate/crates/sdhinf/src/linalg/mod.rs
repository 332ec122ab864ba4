//! Internal dense numerical kernels: matrix exponential, eigensolvers,
//! matrix sign function, algebraic Riccati equations, and the system-matrix
//! pencil used for transmission zeros.
//!
//! Documented tolerance: 1e-9 on balanced matrices up to n ~ 200.

pub mod poly;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Matrix exponential by scaling-and-squaring with a degree-13 Pade
/// approximant (Higham's method, always using the highest order).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!(
            "expm requires a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("expm: non-finite entries".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }

    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371_920_351_148_152;

    // 1-norm of A decides the scaling power.
    let norm1 = (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let s = if norm1 > THETA_13 {
        (norm1 / THETA_13).log2().ceil() as u32
    } else {
        0
    };
    let m = a / 2f64.powi(s as i32);

    let ident = DMatrix::<f64>::identity(n, n);
    let m2 = &m * &m;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;

    let u_inner = &m6 * (B[13] * &m6 + B[11] * &m4 + B[9] * &m2)
        + B[7] * &m6
        + B[5] * &m4
        + B[3] * &m2
        + B[1] * &ident;
    let u = &m * u_inner;
    let v = &m6 * (B[12] * &m6 + B[10] * &m4 + B[8] * &m2)
        + B[6] * &m6
        + B[4] * &m4
        + B[2] * &m2
        + B[0] * &ident;

    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .ok_or_else(|| Error::Numerical("expm: Pade denominator singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn complex_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("eigenvalues: non-finite entries".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration failed to converge".into()))?;
    let eigs = schur
        .complex_eigenvalues();
    Ok(eigs.iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(complex_eigenvalues(a)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn mat_norm1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Matrix sign function by Newton iteration with determinantal scaling.
///
/// Fails if the matrix has eigenvalues on (or numerically glued to) the
/// imaginary axis, which is exactly the infeasibility signal the Riccati
/// callers rely on.
pub fn sign_newton(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::Dimension("sign: matrix must be square".into()));
    }
    let mut s = h.clone();
    let mut converged = false;
    for _ in 0..120 {
        let lu = s.clone().lu();
        let det: f64 = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(Error::Numerical("sign: singular iterate".into()));
        }
        let sinv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("sign: singular iterate".into()))?;
        let c = det.abs().powf(1.0 / n as f64).max(1e-300);
        let next = 0.5 * (&s / c + c * sinv);
        let diff = mat_norm1(&(&next - &s));
        let scale = mat_norm1(&next).max(1e-300);
        s = next;
        if diff <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "sign: no convergence (eigenvalues on the imaginary axis)".into(),
        ));
    }
    // Certificate: S^2 = I.
    let res = mat_norm1(&(&s * &s - DMatrix::<f64>::identity(n, n)));
    if res > 1e-6 * (1.0 + mat_norm1(&s)) {
        return Err(Error::Numerical(format!(
            "sign: involution residual {res:.3e} too large"
        )));
    }
    Ok(s)
}

/// Stabilizing solution of the continuous Riccati equation encoded by a
/// 2n x 2n Hamiltonian matrix `h`: returns the symmetric X with
/// `H [I; X] = [I; X] L` and `L` Hurwitz, obtained from the stable
/// invariant subspace computed via the matrix sign function.
pub fn ric_from_hamiltonian(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let two_n = h.nrows();
    if two_n % 2 != 0 || h.ncols() != two_n {
        return Err(Error::Dimension("ric: Hamiltonian must be 2n x 2n".into()));
    }
    let n = two_n / 2;
    let s = sign_newton(h)?;
    let p = 0.5 * (DMatrix::<f64>::identity(two_n, two_n) - s);
    // The stable spectral projector has rank n; an SVD exposes the subspace.
    let svd = p.svd(true, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let rank = sv.iter().filter(|x| **x > 1e-8 * smax).count();
    if rank != n {
        return Err(Error::Numerical(format!(
            "ric: stable subspace has dimension {rank}, expected {n}"
        )));
    }
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("ric: SVD failed".into()))?;
    let basis = u.columns(0, n).into_owned();
    let u1 = basis.rows(0, n).into_owned();
    let u2 = basis.rows(n, n).into_owned();
    // X = U2 U1^{-1}; solve U1' X' = U2'.
    let lu = u1.transpose().lu();
    let xt = lu
        .solve(&u2.transpose())
        .ok_or_else(|| Error::Numerical("ric: singular subspace projection".into()))?;
    let x = xt.transpose();
    let x = 0.5 * (&x + &x.transpose());
    // Residual against the Hamiltonian blocks: H21 + H22 X - X H11 - X H12 X = 0.
    let h11 = h.view((0, 0), (n, n));
    let h12 = h.view((0, n), (n, n));
    let h21 = h.view((n, 0), (n, n));
    let h22 = h.view((n, n), (n, n));
    let res = h21 + h22 * &x - &x * h11 - &x * h12 * &x;
    let scale = mat_norm1(h) * (1.0 + mat_norm1(&x)).powi(2);
    if mat_norm1(&res) > 1e-6 * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "ric: residual {:.3e} too large",
            mat_norm1(&res)
        )));
    }
    Ok(x)
}

/// Orthonormal basis of the orthogonal complement of range(m).
/// Returns an `r x (r - rank)` matrix with orthonormal columns where
/// `r = m.nrows()`.
pub fn orth_complement(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = m.nrows();
    let svd = m.clone().svd(true, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|x| **x > 1e-12 * smax).count()
    };
    let u = svd
        .u
        .ok_or_else(|| Error::Numerical("orth_complement: SVD failed".into()))?;
    // Eigen-decompose the projector I - U_r U_r' to pull out the complement.
    let ur = u.columns(0, rank.min(u.ncols())).into_owned();
    let proj = DMatrix::<f64>::identity(r, r) - &ur * ur.transpose();
    let se = nalgebra::linalg::SymmetricEigen::new(proj);
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for (i, ev) in se.eigenvalues.iter().enumerate() {
        if *ev > 0.5 {
            cols.push(se.eigenvectors.column(i).into_owned());
        }
    }
    if cols.len() != r - rank {
        return Err(Error::Numerical(
            "orth_complement: rank detection inconsistent".into(),
        ));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Finite generalized eigenvalues of the SISO system-matrix pencil
/// `([[A - zI, B], [C, D]], diag(I, 0))`, i.e. the transmission zeros.
///
/// The pencil determinant is a polynomial of degree at most n in z; it is
/// evaluated on a scaled circle and recovered exactly by an inverse DFT,
/// then rooted via the companion matrix. Leading coefficients that vanish
/// correspond to zeros at infinity and are discarded.
pub fn system_pencil_zeros(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if b.ncols() != 1 || c.nrows() != 1 {
        return Err(Error::Unsupported(
            "transmission zeros are implemented for SISO systems only".into(),
        ));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = n + 1;
    let m = n + 1; // number of coefficients of a degree-<=n polynomial

    // Radius balancing the coefficient recovery.
    let rho = mat_norm1(a).max(1.0);

    let mut samples = Vec::with_capacity(m);
    for j in 0..m {
        let theta = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
        let z = Complex64::from_polar(rho, theta);
        let mut pencil = DMatrix::<Complex64>::zeros(dim, dim);
        for r in 0..n {
            for cc in 0..n {
                pencil[(r, cc)] = Complex64::new(a[(r, cc)], 0.0);
            }
            pencil[(r, r)] -= z;
            pencil[(r, n)] = Complex64::new(b[(r, 0)], 0.0);
        }
        for cc in 0..n {
            pencil[(n, cc)] = Complex64::new(c[(0, cc)], 0.0);
        }
        pencil[(n, n)] = Complex64::new(d[(0, 0)], 0.0);
        samples.push(pencil.lu().determinant());
    }

    // Inverse DFT recovers coefficients of p(z) = sum_k c_k z^k, k=0..n.
    let mut coeffs_asc = Vec::with_capacity(m);
    for k in 0..m {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, s) in samples.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (j * k) as f64 / m as f64;
            acc += s * Complex64::from_polar(1.0, ang);
        }
        acc /= m as f64;
        acc /= rho.powi(k as i32);
        coeffs_asc.push(acc);
    }
    let max_im = coeffs_asc.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    let max_re = coeffs_asc.iter().map(|z| z.re.abs()).fold(0.0f64, f64::max);
    if max_re == 0.0 {
        return Err(Error::Numerical(
            "degenerate system pencil: determinant identically zero".into(),
        ));
    }
    if max_im > 1e-7 * max_re {
        return Err(Error::Numerical(
            "system pencil interpolation lost reality".into(),
        ));
    }
    let mut coeffs_desc: Vec<f64> = coeffs_asc.iter().rev().map(|z| z.re).collect();
    // Zeros at infinity: drop leading coefficients that vanished.
    coeffs_desc = poly::trim_leading(&coeffs_desc, 1e-9);
    poly::roots(&coeffs_desc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_scalar() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn expm_nilpotent() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.5, 0.0, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], 1.0, epsilon = 1e-13);
        assert_relative_eq!(e[(0, 1)], 2.5, epsilon = 1e-13);
        assert_relative_eq!(e[(1, 1)], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn expm_semigroup() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, 0.0, -3.0, 1.0, 0.2, 0.0, -0.5]);
        let e2 = expm(&(2.0 * &a)).unwrap();
        let e1 = expm(&a).unwrap();
        let prod = &e1 * &e1;
        assert!(mat_norm1(&(&e2 - &prod)) < 1e-9 * mat_norm1(&e2));
    }

    #[test]
    fn sign_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 3.0]);
        let s = sign_newton(&a).unwrap();
        assert_relative_eq!(s[(0, 0)], -1.0, epsilon = 1e-10);
        assert_relative_eq!(s[(1, 1)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sign_rejects_imaginary_axis() {
        // Pure rotation: eigenvalues +-i.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(sign_newton(&a).is_err());
    }

    #[test]
    fn ric_lqr_scalar() {
        // x' = x + u, cost x^2 + u^2: X solves 2X + 1 - X^2 = 0 -> X = 1+sqrt(2).
        let h = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, -1.0]);
        let x = ric_from_hamiltonian(&h).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0 + 2.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn pencil_zeros_match_numerator_roots() {
        // Controller-canonical realization of (z + 0.5) / (z^2 + 0.3 z + 0.02).
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, -0.02, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let d = DMatrix::from_row_slice(1, 1, &[0.0]);
        let zs = system_pencil_zeros(&a, &b, &c, &d).unwrap();
        assert_eq!(zs.len(), 1);
        assert_relative_eq!(zs[0].re, -0.5, epsilon = 1e-9);
        assert!(zs[0].im.abs() < 1e-9);
    }
}
