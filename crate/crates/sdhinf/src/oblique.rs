//! Consistent-reconstruction (oblique-projection) filter: construction by
//! system inversion of the step-invariant discretization, the independent
//! localization/beta-coefficient construction, causal/anti-causal
//! splitting, the instability locus in the post-filter parameter, and
//! consistency residuals.
//!
//! Sampling period is normalized to h = 1 throughout this module.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::poly;
use crate::pipeline::SampledSignal;
use crate::statespace::{ContinuousSS, RationalTF};

/// Fast simulation rate used for the beta-coefficient construction;
/// documented accuracy on the reference example is well below 1e-7.
const BETA_FAST_RATE: usize = 256;

/// The consistent-reconstruction filter and its certificates.
///
/// `k_op` stores the proper, implementable form 1/(z H_d(z)); the pure
/// inversion 1/H_d(z) is recovered by advancing `shift` steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistentFilter {
    pub k_op: RationalTF,
    /// Causality shift in unit delays carried by `k_op` relative to the
    /// exact inverse of `h_d`.
    pub shift: usize,
    pub h_d: RationalTF,
    /// Localization polynomial of the acquisition filter, ascending powers
    /// of z^{-1}.
    pub delta1: Vec<f64>,
    /// Localization polynomial of the post filter, ascending powers of
    /// z^{-1}.
    pub delta2: Vec<f64>,
    /// Sampled beta(k), k = 0 ..= n1 + n2 + 1.
    pub beta: Vec<f64>,
    pub unstable_poles: Vec<Complex64>,
}

impl ConsistentFilter {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

fn require_siso(sys: &ContinuousSS, what: &str) -> Result<()> {
    if sys.input_dim() != 1 || sys.output_dim() != 1 {
        return Err(Error::Unsupported(format!("{what} must be SISO")));
    }
    Ok(())
}

/// Localization polynomial prod_n (1 - e^{alpha_n} z^{-1}) for the poles
/// of an analog filter, returned in ascending powers of z^{-1}.
fn localization(sys: &ContinuousSS) -> Result<Vec<f64>> {
    let alphas = sys.poles()?;
    let mut coeffs = vec![Complex64::new(1.0, 0.0)];
    for a in &alphas {
        let root = a.exp();
        let mut next = vec![Complex64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, &ci) in coeffs.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * root;
        }
        coeffs = next;
    }
    let max_im = coeffs.iter().map(|c| c.im.abs()).fold(0.0f64, f64::max);
    let max_re = coeffs.iter().map(|c| c.re.abs()).fold(1e-300f64, f64::max);
    if max_im > 1e-9 * max_re {
        return Err(Error::Numerical(
            "localization polynomial is not real (unpaired complex poles)".into(),
        ));
    }
    Ok(coeffs.iter().map(|c| c.re).collect())
}

/// The filter obtained by inverting the step-invariant discretization
/// H_d(z) of F_a(s) P(s), shifted by one step for properness.
pub fn consistent_filter(fa: &ContinuousSS, p: &ContinuousSS) -> Result<ConsistentFilter> {
    require_siso(fa, "acquisition filter F_a(s)")?;
    require_siso(p, "post filter P(s)")?;
    let cascade = fa.series(p)?;
    let hd_ss = cascade.c2d_step_invariant(1.0)?;
    let hd = hd_ss.to_rational()?;
    let num_scale = hd.num.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let den_scale = hd.den.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    if num_scale <= 1e-14 * den_scale {
        return Err(Error::Numerical(
            "degenerate discretization: H_d numerator is identically zero".into(),
        ));
    }
    // k_op = 1 / (z H_d): numerator den_H, denominator z * num_H.
    let mut den = poly::trim_leading(&hd.num, 1e-14);
    den.push(0.0);
    let k_op = RationalTF::new(hd.den.clone(), den, 1.0)?;
    let unstable_poles: Vec<Complex64> = hd
        .zeros()?
        .into_iter()
        .filter(|z| z.norm() >= 1.0 - crate::statespace::STABILITY_TOL)
        .collect();
    let delta1 = localization(fa)?;
    let delta2 = localization(p)?;
    let beta = beta_coefficients(fa, p)?;
    Ok(ConsistentFilter {
        k_op,
        shift: 1,
        h_d: hd,
        delta1,
        delta2,
        beta,
        unstable_poles,
    })
}

/// Sampled beta coefficients: the zero-order-hold box response of
/// F_a(s)P(s) convolved with the one-sample-delay FIR expansion of the
/// localization product, evaluated at the integers. Computed by exact
/// fast-rate time-domain simulation.
pub fn beta_coefficients(fa: &ContinuousSS, p: &ContinuousSS) -> Result<Vec<f64>> {
    let cascade = fa.series(p)?;
    let n_total = cascade.state_dim(); // n1 + n2
    let count = n_total + 2; // beta(0) .. beta(n1+n2+1)
    let dt = 1.0 / BETA_FAST_RATE as f64;
    let fast = cascade.c2d_step_invariant(dt)?;
    // Box response: unit input held on [0, 1).
    let total_steps = count * BETA_FAST_RATE + 1;
    let input: Vec<f64> = (0..total_steps)
        .map(|k| if k < BETA_FAST_RATE { 1.0 } else { 0.0 })
        .collect();
    let box_resp = fast.simulate_siso(&input)?;

    // FIR coefficients of prod (1 - e^{alpha} e^{-s}) over all poles.
    let c1 = localization(fa)?;
    let c2 = localization(p)?;
    let fir = convolve(&c1, &c2);

    let mut beta = Vec::with_capacity(count);
    for k in 0..count {
        let mut acc = 0.0;
        for (j, &cj) in fir.iter().enumerate() {
            if k >= j {
                acc += cj * box_resp[(k - j) * BETA_FAST_RATE];
            }
        }
        beta.push(acc);
    }
    Ok(beta)
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// The oblique-projection filter in its localization/beta form:
/// Delta_1(z) Delta_2(z) / sum_k beta(k) z^{-k}. Equal to the inversion
/// form up to the causality shift; the two constructions share no code
/// path beyond the localization polynomials.
pub fn consistent_filter_via_beta(fa: &ContinuousSS, p: &ContinuousSS) -> Result<RationalTF> {
    require_siso(fa, "acquisition filter F_a(s)")?;
    require_siso(p, "post filter P(s)")?;
    let delta = convolve(&localization(fa)?, &localization(p)?);
    let beta = beta_coefficients(fa, p)?;
    // Both polynomials live in z^{-1}; pad to a common length so the ratio
    // becomes a descending-power rational function in z.
    let len = delta.len().max(beta.len());
    let mut num = delta;
    num.resize(len, 0.0);
    let mut den = beta;
    den.resize(len, 0.0);
    let den_scale = den.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if den_scale == 0.0 {
        return Err(Error::Numerical("beta coefficients vanished".into()));
    }
    RationalTF::new(num, den, 1.0)
}

/// Causal/anti-causal split of a rational filter by partial fractions.
#[derive(Debug, Clone)]
pub struct SplitFilter {
    /// Stable part: polynomial (current-and-past taps) plus poles strictly
    /// inside the unit circle.
    pub causal: RationalTF,
    /// Anti-causal impulse response taps h[0], h[-1], ..., h[-(trunc-1)];
    /// the n = 0 entry overlaps the causal feedthrough and is kept zero
    /// there.
    pub anticausal_taps: Vec<f64>,
    /// Energy of the discarded anti-causal tail beyond the truncation.
    pub truncation_tail_energy: f64,
}

/// Split by pole magnitude; poles with |z| > 1 expand as a stable
/// recursion in reversed time, truncated to `trunc` taps. Refuses poles on
/// the unit circle (within 1e-9): the split is undefined there, which is
/// exactly the boundary pathology of the instability locus.
pub fn split_causal_anticausal(f: &RationalTF, trunc: usize) -> Result<SplitFilter> {
    if trunc == 0 {
        return Err(Error::Parameter("truncation length must be >= 1".into()));
    }
    let num = poly::trim_leading(&f.num, 1e-14);
    let den = poly::trim_leading(&f.den, 1e-14);
    let poles = poly::roots(&den)?;
    for z in &poles {
        if (z.norm() - 1.0).abs() < 1e-9 {
            return Err(Error::Numerical(format!(
                "pole at {z} lies on the unit circle; the causal/anti-causal split is undefined"
            )));
        }
    }
    for (i, zi) in poles.iter().enumerate() {
        for zj in poles.iter().skip(i + 1) {
            if (zi - zj).norm() < 1e-6 {
                return Err(Error::Unsupported(
                    "repeated poles are not supported by the residue split".into(),
                ));
            }
        }
    }

    // Long division for the polynomial part: num = q * den + r.
    let (q, r) = poly_divmod(&num, &den);

    // Residues of the strictly proper remainder r / den.
    let dden = poly::derivative(&den);
    let mut stable_poles: Vec<Complex64> = Vec::new();
    let mut stable_residues: Vec<Complex64> = Vec::new();
    let mut anti_poles: Vec<Complex64> = Vec::new();
    let mut anti_residues: Vec<Complex64> = Vec::new();
    for &z in &poles {
        let res = poly::eval(&r, z) / poly::eval(&dden, z);
        if z.norm() < 1.0 {
            stable_poles.push(z);
            stable_residues.push(res);
        } else {
            anti_poles.push(z);
            anti_residues.push(res);
        }
    }

    // Reassemble the causal rational part: q(z) + sum r_i/(z - p_i).
    // q(z) carries non-negative powers; a nonzero q beyond the constant
    // means the original filter anticipates, which the callers avoid by
    // shifting first.
    if q.len() > 1 {
        return Err(Error::Unsupported(
            "improper filter: apply the causality shift before splitting".into(),
        ));
    }
    let q0 = q.first().copied().unwrap_or(0.0);
    let mut c_num = vec![Complex64::new(0.0, 0.0); stable_poles.len() + 1];
    c_num[0] = Complex64::new(q0, 0.0);
    let mut c_den = vec![Complex64::new(1.0, 0.0)];
    for (i, &pi) in stable_poles.iter().enumerate() {
        // multiply denominator by (z - p_i)
        c_den = mul_c(&c_den, &[Complex64::new(1.0, 0.0), -pi]);
        // numerator: q0 * (z - p_i) product handled at the end; add residue
        // times the product of the other stable factors.
        let mut term = vec![Complex64::new(1.0, 0.0)];
        for (j, &pj) in stable_poles.iter().enumerate() {
            if j != i {
                term = mul_c(&term, &[Complex64::new(1.0, 0.0), -pj]);
            }
        }
        let shiftlen = c_num.len() - term.len();
        for (k, &t) in term.iter().enumerate() {
            c_num[k + shiftlen] += stable_residues[i] * t;
        }
    }
    // Fold q0 * den_stable into the numerator.
    if q0 != 0.0 {
        let scaled: Vec<Complex64> = c_den.iter().map(|c| c * q0).collect();
        let shiftlen = c_num.len() - scaled.len();
        for (k, &t) in scaled.iter().enumerate() {
            c_num[k + shiftlen] += t;
        }
        c_num[0] -= Complex64::new(q0, 0.0); // placed twice otherwise
    }
    let causal = RationalTF::new(
        realify(&c_num)?,
        realify(&c_den)?,
        f.sample_period,
    )?;

    // Anti-causal taps: r/(z - p), |p| > 1 expands as
    // h[n] = -r p^{n-1} for n <= 0.
    let mut taps = vec![0.0f64; trunc];
    let mut tail = 0.0f64;
    for (&pz, &rz) in anti_poles.iter().zip(anti_residues.iter()) {
        let pinv = Complex64::new(1.0, 0.0) / pz;
        let mut term = -rz * pinv; // n = 0
        for (j, t) in taps.iter_mut().enumerate() {
            let _ = j;
            *t += term.re;
            term *= pinv;
        }
        // Tail energy beyond the truncation: |term| keeps shrinking by
        // |1/p| per step; sum the square closed-form.
        let ratio2 = pinv.norm_sqr();
        tail += term.norm_sqr() / (1.0 - ratio2);
    }
    Ok(SplitFilter {
        causal,
        anticausal_taps: taps,
        truncation_tail_energy: tail,
    })
}

fn mul_c(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn realify(v: &[Complex64]) -> Result<Vec<f64>> {
    let max_im = v.iter().map(|c| c.im.abs()).fold(0.0f64, f64::max);
    let max_re = v.iter().map(|c| c.re.abs()).fold(1e-300f64, f64::max);
    if max_im > 1e-8 * max_re.max(1.0) {
        return Err(Error::Numerical(
            "complex residues did not pair into a real filter".into(),
        ));
    }
    Ok(v.iter().map(|c| c.re).collect())
}

/// Polynomial division num = q * den + r with deg r < deg den.
fn poly_divmod(num: &[f64], den: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut rem: Vec<f64> = num.to_vec();
    let dlen = den.len();
    if rem.len() < dlen {
        return (vec![0.0], rem);
    }
    let qlen = rem.len() - dlen + 1;
    let mut q = vec![0.0; qlen];
    for i in 0..qlen {
        let coef = rem[i] / den[0];
        q[i] = coef;
        for j in 0..dlen {
            rem[i + j] -= coef * den[j];
        }
    }
    (q, rem[qlen - 1 + 1..].to_vec())
}

/// One point of the instability locus: the post-filter parameter and the
/// largest-magnitude pole of the consistent filter there.
#[derive(Debug, Clone, Serialize)]
pub struct LocusPoint {
    pub d: f64,
    pub pole_re: f64,
    pub pole_im: f64,
}

#[derive(Debug, Clone)]
pub struct PoleLocus {
    pub points: Vec<LocusPoint>,
    /// Parameters where the dominant pole crosses z = -1, refined to high
    /// accuracy.
    pub crossings: Vec<f64>,
}

/// Sweep a post-filter family P_d(s) over `d_range`, tracking the dominant
/// pole of the consistent filter, and refine any crossing of z = -1.
pub fn pole_locus<F>(
    fa: &ContinuousSS,
    p_family: F,
    d_range: (f64, f64),
    steps: usize,
) -> Result<PoleLocus>
where
    F: Fn(f64) -> Result<ContinuousSS> + Sync,
{
    if steps < 2 || !(d_range.1 > d_range.0) {
        return Err(Error::Parameter("locus needs an increasing range and >= 2 steps".into()));
    }
    // H_d numerator evaluated at z = -1; its sign change marks the pole of
    // 1/H_d passing through -1.
    let num_at_minus1 = |d: f64| -> Result<f64> {
        let hd = fa.series(&p_family(d)?)?.c2d_step_invariant(1.0)?.to_rational()?;
        Ok(poly::eval(&hd.num, Complex64::new(-1.0, 0.0)).re)
    };

    let ds: Vec<f64> = (0..steps)
        .map(|i| d_range.0 + (d_range.1 - d_range.0) * i as f64 / (steps - 1) as f64)
        .collect();
    let points: Vec<LocusPoint> = ds
        .par_iter()
        .map(|&d| -> Result<LocusPoint> {
            let filt = consistent_filter(fa, &p_family(d)?)?;
            let dominant = filt
                .k_op
                .poles()?
                .into_iter()
                .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
                .unwrap_or_else(|| Complex64::new(0.0, 0.0));
            Ok(LocusPoint {
                d,
                pole_re: dominant.re,
                pole_im: dominant.im,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut crossings = Vec::new();
    let mut prev = num_at_minus1(ds[0])?;
    for w in ds.windows(2) {
        let cur = num_at_minus1(w[1])?;
        if prev == 0.0 {
            crossings.push(w[0]);
        } else if prev.signum() != cur.signum() && cur != 0.0 {
            // Bisection refinement.
            let (mut a, mut b) = (w[0], w[1]);
            let mut fa_val = prev;
            for _ in 0..80 {
                let mid = 0.5 * (a + b);
                let fm = num_at_minus1(mid)?;
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fm.signum() == fa_val.signum() {
                    a = mid;
                    fa_val = fm;
                } else {
                    b = mid;
                }
            }
            crossings.push(0.5 * (a + b));
        }
        prev = cur;
    }
    Ok(PoleLocus { points, crossings })
}

/// Inner products <y_c - y_p, phi(. - k)> with phi the time-reversed
/// impulse response of the acquisition filter, by trapezoidal quadrature
/// at the signals' common fast rate. Shifts k are in units of the
/// normalized sampling period (1 second).
pub fn consistency_residual(
    y_c: &SampledSignal,
    y_p: &SampledSignal,
    fa: &ContinuousSS,
    k_range: (i64, i64),
) -> Result<Vec<f64>> {
    require_siso(fa, "acquisition filter F_a(s)")?;
    if (y_c.rate - y_p.rate).abs() > 1e-9 * y_c.rate {
        return Err(Error::Dimension("signals must share a fast rate".into()));
    }
    let rate = y_c.rate;
    let per_unit = rate.round() as i64;
    if (rate - per_unit as f64).abs() > 1e-9 || per_unit <= 0 {
        return Err(Error::Parameter(
            "fast rate must be an integer number of samples per unit time".into(),
        ));
    }
    if k_range.1 < k_range.0 {
        return Err(Error::Parameter("empty shift range".into()));
    }

    // Impulse response of F_a at the fast rate, truncated where it decays
    // below 1e-8 of its peak.
    let dt = 1.0 / rate;
    let phi_step = crate::statespace::mat_exp(&fa.a, dt)?;
    let mut v = fa.b.clone();
    let mut imp: Vec<f64> = Vec::new();
    let hard_cap = 4_000_000usize;
    let mut peak = 0.0f64;
    loop {
        let val = (&fa.c * &v)[(0, 0)];
        imp.push(val);
        peak = peak.max(val.abs());
        v = &phi_step * v;
        if imp.len() > 16 && (&fa.c * &v)[(0, 0)].abs() < 1e-8 * peak.max(1e-300) {
            break;
        }
        if imp.len() >= hard_cap {
            return Err(Error::Numerical(
                "acquisition impulse response does not decay".into(),
            ));
        }
    }
    let support = imp.len() as i64;

    // Error signal on the common grid; signals are aligned through their
    // origin indices.
    let len = y_c.samples.len().min(y_p.samples.len());
    if y_c.origin_index != y_p.origin_index {
        return Err(Error::Dimension(
            "signals must share an origin for the residual computation".into(),
        ));
    }
    let origin = y_c.origin_index;
    let e: Vec<f64> = (0..len)
        .map(|j| y_c.samples[j] - y_p.samples[j])
        .collect();

    // residual_k = integral e(t) phi(t - k) dt, phi(t - k) = f(k - t):
    // nonzero for t in [k - support*dt, k].
    let mut out = Vec::new();
    for k in k_range.0..=k_range.1 {
        let center = k * per_unit + origin; // sample index of t = k
        let lo = center - (support - 1);
        if lo < 0 || center >= len as i64 {
            return Err(Error::Parameter(format!(
                "signal support does not cover shift k = {k}"
            )));
        }
        let mut acc = 0.0;
        for (m, &fv) in imp.iter().enumerate() {
            let j = center - m as i64;
            let w = if m == 0 || m == imp.len() - 1 { 0.5 } else { 1.0 };
            acc += w * e[j as usize] * fv;
        }
        out.push(acc * dt);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fa_ref() -> ContinuousSS {
        ContinuousSS::from_tf(&[1.0], &[1.0, 1.0]).unwrap()
    }

    fn p_ref() -> ContinuousSS {
        // 1/((s+1.5)(s+2))
        ContinuousSS::from_tf(&[1.0], &[1.0, 3.5, 3.0]).unwrap()
    }

    #[test]
    fn reference_filter_golden_numbers() {
        let filt = consistent_filter(&fa_ref(), &p_ref()).unwrap();
        // Unstable pole at -1.28549 and the small zero -0.0816767.
        assert_eq!(filt.unstable_poles.len(), 1);
        assert_relative_eq!(filt.unstable_poles[0].re, -1.28549, epsilon = 1e-4);
        let zeros = filt.h_d.zeros().unwrap();
        let mut mags: Vec<f64> = zeros.iter().map(|z| z.re).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(mags[0], -1.28549, epsilon = 1e-4);
        assert_relative_eq!(mags[1], -0.0816767, epsilon = 1e-4);

        // Printed coefficients: (z^3 - 0.7263 z^2 + 0.1621 z - 0.01111) /
        // (0.05725 z^2 + 0.07827 z + 0.006011).
        let num = &filt.h_d.den; // numerator of 1/H_d
        let den = &filt.h_d.num;
        assert_relative_eq!(num[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(num[1], -0.7263, epsilon = 1e-3);
        assert_relative_eq!(num[2], 0.1621, epsilon = 1e-3);
        assert_relative_eq!(num[3], -0.01111, epsilon = 1e-3);
        let dent = poly::trim_leading(den, 1e-12);
        assert_relative_eq!(dent[0], 0.05725, epsilon = 1e-3);
        assert_relative_eq!(dent[1], 0.07827, epsilon = 1e-3);
        assert_relative_eq!(dent[2], 0.006011, epsilon = 1e-3);

        // k_op poles are exactly the zeros of H_d.
        let kp = filt.k_op.poles().unwrap();
        for z in zeros {
            assert!(kp.iter().any(|p| (p - z).norm() < 1e-9));
        }
    }

    #[test]
    fn beta_identity_with_hd_numerator() {
        // Appendix identity: sum beta(k) z^{-k} = Delta1 Delta2 H_d(z), so
        // the beta list equals the H_d numerator shifted by the relative
        // degree.
        let filt = consistent_filter(&fa_ref(), &p_ref()).unwrap();
        assert_eq!(filt.beta.len(), 5); // n1 + n2 + 2
        assert_relative_eq!(filt.beta[0], 0.0, epsilon = 1e-9);
        assert_relative_eq!(filt.beta[1], 0.05725, epsilon = 1e-4);
        assert_relative_eq!(filt.beta[2], 0.07827, epsilon = 1e-4);
        assert_relative_eq!(filt.beta[3], 0.006011, epsilon = 1e-4);
        assert_relative_eq!(filt.beta[4], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn via_beta_equals_inversion_construction() {
        let filt = consistent_filter(&fa_ref(), &p_ref()).unwrap();
        let via = consistent_filter_via_beta(&fa_ref(), &p_ref()).unwrap();
        let delay = via.equal_up_to_delay(&filt.k_op, 1e-6);
        assert_eq!(delay, Some(-(filt.shift as i64)));
    }

    #[test]
    fn gain_filter_has_trivial_localization() {
        let g = ContinuousSS::from_gain(DMatrix::from_element(1, 1, 1.0));
        let fa = fa_ref();
        // Relative degree 1 cascade: no unstable limiting zero at h = 1.
        let filt = consistent_filter(&fa, &g).unwrap();
        assert!(filt.unstable_poles.is_empty());
        assert_eq!(filt.delta2, vec![1.0]);
    }

    #[test]
    fn split_all_stable_has_empty_anticausal() {
        let f = RationalTF::new(vec![1.0, 0.2], vec![1.0, -0.9, 0.2], 1.0).unwrap();
        let s = split_causal_anticausal(&f, 8).unwrap();
        assert!(s.anticausal_taps.iter().all(|t| t.abs() < 1e-14));
        assert!(s.truncation_tail_energy < 1e-20);
    }

    #[test]
    fn split_unstable_factor_alternates() {
        // 1/(z + 1.28549): anti-causal expansion alternates in sign with
        // ratio 1/1.28549.
        let p = 1.28549;
        let f = RationalTF::new(vec![1.0], vec![1.0, p], 1.0).unwrap();
        let s = split_causal_anticausal(&f, 12).unwrap();
        for w in s.anticausal_taps.windows(2) {
            assert_relative_eq!(w[1] / w[0], -1.0 / p, epsilon = 1e-9);
        }
        assert!(s.truncation_tail_energy > 0.0);
    }

    #[test]
    fn split_reproduces_two_sided_expansion() {
        // f with one stable and one unstable pole.
        let f = RationalTF::new(vec![1.0, 0.3], vec![1.0, 0.9, -0.5], 1.0).unwrap();
        let trunc = 24;
        let s = split_causal_anticausal(&f, trunc).unwrap();
        // Causal side by forward long division of the causal part.
        let causal_ss = s.causal.to_state_space().unwrap();
        let mut impulse = vec![0.0; trunc];
        impulse[0] = 1.0;
        let fwd = causal_ss.simulate_siso(&impulse).unwrap();
        // Direct two-sided expansion from residues.
        let poles = f.poles().unwrap();
        let dden = poly::derivative(&f.den);
        let mut want_fwd = vec![0.0f64; trunc];
        let mut want_bwd = vec![0.0f64; trunc];
        for &z in &poles {
            let r = poly::eval(&f.num, z) / poly::eval(&dden, z);
            if z.norm() < 1.0 {
                // r/(z-p): h[n] = r p^{n-1}, n >= 1
                let mut term = r;
                for t in want_fwd.iter_mut().skip(1) {
                    *t += term.re;
                    term *= z;
                }
            } else {
                let pinv = Complex64::new(1.0, 0.0) / z;
                let mut term = -r * pinv;
                for t in want_bwd.iter_mut() {
                    *t += term.re;
                    term *= pinv;
                }
            }
        }
        for n in 0..trunc {
            assert_relative_eq!(fwd[n], want_fwd[n], epsilon = 1e-8);
            assert_relative_eq!(s.anticausal_taps[n], want_bwd[n], epsilon = 1e-8);
        }
    }

    #[test]
    fn split_refuses_unit_circle_pole() {
        let f = RationalTF::new(vec![1.0], vec![1.0, 1.0], 1.0).unwrap();
        assert!(split_causal_anticausal(&f, 8).is_err());
    }

    #[test]
    fn locus_finds_reference_crossing() {
        let fa = fa_ref();
        let family = |d: f64| ContinuousSS::from_tf(&[1.0], &[1.0, 2.0 + d, 2.0 * d]);
        let locus = pole_locus(&fa, family, (2.0, 3.5), 60).unwrap();
        assert_eq!(locus.crossings.len(), 1);
        assert_relative_eq!(locus.crossings[0], 2.72778, epsilon = 1e-3);
        // Locus continuity.
        for w in locus.points.windows(2) {
            let jump = ((w[1].pole_re - w[0].pole_re).powi(2)
                + (w[1].pole_im - w[0].pole_im).powi(2))
            .sqrt();
            assert!(jump < 0.1, "dominant pole jumped by {jump}");
        }
    }

    #[test]
    fn residual_zero_for_identical_signals() {
        let sig = SampledSignal {
            samples: (0..4096).map(|i| (i as f64 * 0.01).sin()).collect(),
            rate: 256.0,
            origin_index: 0,
        };
        let r = consistency_residual(&sig, &sig, &fa_ref(), (4, 8)).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15));
    }

    use nalgebra::DMatrix;
}
