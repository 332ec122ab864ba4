//! Discrete-time lifting (polyphase decomposition), the fast-sample /
//! fast-hold reduction of the multirate error system to a single-rate
//! model, and assembly of the generalized plant used for synthesis.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{periods_match, ContinuousSS, DiscreteSS, SsJson};

/// Full design parameter set: signal generator F(s), post-filter P(s),
/// sampling period h, upsampling ratio L, preview steps m, and the
/// fast-sample/fast-hold resolution N = L*l.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub f_model: ContinuousSS,
    pub p_model: ContinuousSS,
    pub h: f64,
    pub upsample_l: usize,
    pub delay_m: usize,
    pub fsfh_n: usize,
}

impl DesignSpec {
    pub fn new(
        f_model: ContinuousSS,
        p_model: ContinuousSS,
        h: f64,
        upsample_l: usize,
        delay_m: usize,
        fsfh_n: usize,
    ) -> Result<Self> {
        if f_model.d.iter().any(|x| *x != 0.0) {
            return Err(Error::Parameter(
                "signal generator F(s) must be strictly proper".into(),
            ));
        }
        Self::for_simulation(f_model, p_model, h, upsample_l, delay_m, fsfh_n)
    }

    /// Same validation except that F(s) may have a feedthrough. Simulation
    /// experiments (e.g. driving the chain with a raw test signal by taking
    /// F = 1) need this; synthesis specs should use [`DesignSpec::new`].
    pub fn for_simulation(
        f_model: ContinuousSS,
        p_model: ContinuousSS,
        h: f64,
        upsample_l: usize,
        delay_m: usize,
        fsfh_n: usize,
    ) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Parameter(format!("sampling period must be positive, got {h}")));
        }
        if upsample_l == 0 || fsfh_n == 0 {
            return Err(Error::Parameter("L and N must be positive".into()));
        }
        if fsfh_n % upsample_l != 0 {
            return Err(Error::Parameter(format!(
                "N = {fsfh_n} must be an integer multiple of L = {upsample_l}"
            )));
        }
        if f_model.input_dim() != 1 || f_model.output_dim() != 1 {
            return Err(Error::Unsupported("F(s) must be SISO".into()));
        }
        if p_model.input_dim() != 1 || p_model.output_dim() != 1 {
            return Err(Error::Unsupported("P(s) must be SISO".into()));
        }
        Ok(Self {
            f_model,
            p_model,
            h,
            upsample_l,
            delay_m,
            fsfh_n,
        })
    }

    /// Default FSFH resolution for a given upsampling ratio; N ~ 5L works
    /// fairly well and is the shipped default.
    pub fn default_fsfh_n(upsample_l: usize) -> usize {
        5 * upsample_l
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DesignSpecJson::from(self)).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dto: DesignSpecJson = serde_json::from_str(text)?;
        dto.into_spec()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DesignSpecJson {
    pub f_model: SsJson,
    pub p_model: SsJson,
    pub h: f64,
    pub upsample_l: usize,
    pub delay_m: usize,
    pub fsfh_n: usize,
}

impl From<&DesignSpec> for DesignSpecJson {
    fn from(s: &DesignSpec) -> Self {
        DesignSpecJson {
            f_model: SsJson::from_continuous(&s.f_model),
            p_model: SsJson::from_continuous(&s.p_model),
            h: s.h,
            upsample_l: s.upsample_l,
            delay_m: s.delay_m,
            fsfh_n: s.fsfh_n,
        }
    }
}

impl DesignSpecJson {
    pub fn into_spec(self) -> Result<DesignSpec> {
        DesignSpec::new(
            self.f_model.into_continuous()?,
            self.p_model.into_continuous()?,
            self.h,
            self.upsample_l,
            self.delay_m,
            self.fsfh_n,
        )
    }
}

/// Discrete lifting of a system by a factor n: blocks n consecutive scalar
/// steps into one vector step. The lifted system has state map A^n, the
/// block-row input map [A^{n-1}B ... B], the stacked output map
/// [C; CA; ...; CA^{n-1}] and a block-Toeplitz feedthrough carrying the
/// first n impulse-response samples.
pub fn lift(sys: &DiscreteSS, n: usize) -> Result<DiscreteSS> {
    if n == 0 {
        return Err(Error::Parameter("lifting factor must be >= 1".into()));
    }
    let s = sys.state_dim();
    let m = sys.input_dim();
    let p = sys.output_dim();

    // Powers of A up to n.
    let mut pows: Vec<DMatrix<f64>> = Vec::with_capacity(n + 1);
    pows.push(DMatrix::identity(s, s));
    for k in 1..=n {
        pows.push(&pows[k - 1] * &sys.a);
    }

    let a_l = pows[n].clone();
    let mut b_l = DMatrix::zeros(s, n * m);
    for j in 0..n {
        b_l.view_mut((0, j * m), (s, m))
            .copy_from(&(&pows[n - 1 - j] * &sys.b));
    }
    let mut c_l = DMatrix::zeros(n * p, s);
    for i in 0..n {
        c_l.view_mut((i * p, 0), (p, s)).copy_from(&(&sys.c * &pows[i]));
    }
    let mut d_l = DMatrix::zeros(n * p, n * m);
    for i in 0..n {
        for j in 0..=i {
            let blk = if i == j {
                sys.d.clone()
            } else {
                &sys.c * &pows[i - j - 1] * &sys.b
            };
            d_l.view_mut((i * p, j * m), (p, m)).copy_from(&blk);
        }
    }
    DiscreteSS::new(a_l, b_l, c_l, d_l, sys.sample_period * n as f64)
}

/// Fast-sample/fast-hold lifting of a continuous system: step-invariant
/// discretization at period h/N followed by N-fold lifting, so one lifted
/// step covers one sampling period h.
pub fn fsfh_lift(sys: &ContinuousSS, h: f64, n: usize) -> Result<DiscreteSS> {
    if n == 0 {
        return Err(Error::Parameter("N must be >= 1".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Parameter("h must be positive".into()));
    }
    lift(&sys.c2d_step_invariant(h / n as f64)?, n)
}

/// Polyphase decomposition of a single-input filter by a factor L: the
/// 1-input/L-output lifted filter whose branches carry the L phases.
pub fn polyphase_decompose(k: &DiscreteSS, l: usize) -> Result<DiscreteSS> {
    if k.input_dim() != 1 {
        return Err(Error::Dimension(
            "polyphase decomposition requires a single-input filter".into(),
        ));
    }
    let lifted = lift(k, l)?;
    // Keep only the first lifted input channel.
    let b = lifted.b.column(0).into_owned();
    let d = lifted.d.column(0).into_owned();
    DiscreteSS::new(
        lifted.a,
        DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
        lifted.c,
        DMatrix::from_column_slice(d.len(), 1, d.as_slice()),
        lifted.sample_period,
    )
}

/// Polyphase recomposition: realize K(z) = [1, z^{-1}, ..., z^{-L+1}]
/// Ktilde(z^L) as a single-rate filter at the fast period h/L.
pub fn polyphase_recompose(k_tilde: &DiscreteSS, l: usize) -> Result<DiscreteSS> {
    if l == 0 {
        return Err(Error::Parameter("L must be >= 1".into()));
    }
    if k_tilde.input_dim() != 1 || k_tilde.output_dim() != l {
        return Err(Error::Dimension(format!(
            "recomposition expects a 1-input/{l}-output filter, got {}x{}",
            k_tilde.output_dim(),
            k_tilde.input_dim()
        )));
    }
    let nt = k_tilde.state_dim();
    let fast_h = k_tilde.sample_period / l as f64;
    if l == 1 {
        return DiscreteSS::new(
            k_tilde.a.clone(),
            k_tilde.b.clone(),
            k_tilde.c.clone(),
            k_tilde.d.clone(),
            fast_h,
        );
    }

    // Block-cyclic realization of Ktilde(z^L): L blocks of the slow state,
    // rotated one block per fast step with A applied on wrap-around.
    let ng = nt * l;
    let extra = l - 1; // output-assembly delay line
    let dim = ng + extra;
    let mut a = DMatrix::zeros(dim, dim);
    for blk in 0..l - 1 {
        // block `blk` receives block `blk+1`
        for i in 0..nt {
            a[(blk * nt + i, (blk + 1) * nt + i)] = 1.0;
        }
    }
    a.view_mut(((l - 1) * nt, 0), (nt, nt)).copy_from(&k_tilde.a);
    let mut b = DMatrix::zeros(dim, 1);
    b.view_mut(((l - 1) * nt, 0), (nt, 1)).copy_from(&k_tilde.b);

    // Delay line: d_j' = d_{j+1} + branch_{j+1}(state, input), j = 1..L-1.
    for j in 0..extra {
        let row = ng + j;
        if j + 1 < extra {
            a[(row, ng + j + 1)] = 1.0;
        }
        for s in 0..nt {
            a[(row, s)] = k_tilde.c[(j + 1, s)];
        }
        b[(row, 0)] = k_tilde.d[(j + 1, 0)];
    }

    let mut c = DMatrix::zeros(1, dim);
    for s in 0..nt {
        c[(0, s)] = k_tilde.c[(0, s)];
    }
    c[(0, ng)] = 1.0;
    let d = DMatrix::from_element(1, 1, k_tilde.d[(0, 0)]);
    DiscreteSS::new(a, b, c, d, fast_h)
}

/// Lifted building blocks of the single-rate error system: F_N, P_N, the
/// hold selector H (N x L zero/one block of l-high columns of ones) and the
/// sampling selector S = [1, 0, ..., 0].
#[derive(Debug, Clone)]
pub struct LiftedBlocks {
    pub f_n: DiscreteSS,
    pub p_n: DiscreteSS,
    pub h_mat: DMatrix<f64>,
    pub s_mat: DMatrix<f64>,
    pub h: f64,
    pub upsample_l: usize,
    pub delay_m: usize,
}

pub fn lifted_blocks(spec: &DesignSpec) -> Result<LiftedBlocks> {
    let n = spec.fsfh_n;
    let l = spec.upsample_l;
    let f_n = fsfh_lift(&spec.f_model, spec.h, n)?;
    let p_n = fsfh_lift(&spec.p_model, spec.h, n)?;
    let h_mat = hold_matrix(n, l);
    let mut s_mat = DMatrix::zeros(1, n);
    s_mat[(0, 0)] = 1.0;
    Ok(LiftedBlocks {
        f_n,
        p_n,
        h_mat,
        s_mat,
        h: spec.h,
        upsample_l: l,
        delay_m: spec.delay_m,
    })
}

pub fn hold_matrix(n: usize, l: usize) -> DMatrix<f64> {
    let step = n / l;
    let mut h = DMatrix::zeros(n, l);
    for j in 0..l {
        for i in j * step..(j + 1) * step {
            h[(i, j)] = 1.0;
        }
    }
    h
}

/// Partitioned discrete two-port plant: exogenous input w (dim N), control
/// input u (dim L), regulated output e (dim N), measurement y (dim 1).
/// Closing the lower loop with a filter Ktilde realizes
/// T_N(z) = z^{-m} F_N(z) - P_N(z) H Ktilde(z) S F_N(z).
#[derive(Debug, Clone)]
pub struct GeneralizedPlant {
    pub a: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
    pub sample_period: f64,
}

impl GeneralizedPlant {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn w_dim(&self) -> usize {
        self.b1.ncols()
    }

    pub fn u_dim(&self) -> usize {
        self.b2.ncols()
    }

    pub fn e_dim(&self) -> usize {
        self.c1.nrows()
    }

    pub fn y_dim(&self) -> usize {
        self.c2.nrows()
    }

    /// The w -> e channel with the control loop open (Ktilde = 0).
    pub fn open_loop(&self) -> DiscreteSS {
        DiscreteSS {
            a: self.a.clone(),
            b: self.b1.clone(),
            c: self.c1.clone(),
            d: self.d11.clone(),
            sample_period: self.sample_period,
        }
    }

    /// Joint system mapping [w; u] to [e; y]; used by the synthesis layer.
    pub fn joint(&self) -> DiscreteSS {
        let n = self.state_dim();
        let m = self.w_dim() + self.u_dim();
        let p = self.e_dim() + self.y_dim();
        let mut b = DMatrix::zeros(n, m);
        b.view_mut((0, 0), (n, self.w_dim())).copy_from(&self.b1);
        b.view_mut((0, self.w_dim()), (n, self.u_dim())).copy_from(&self.b2);
        let mut c = DMatrix::zeros(p, n);
        c.view_mut((0, 0), (self.e_dim(), n)).copy_from(&self.c1);
        c.view_mut((self.e_dim(), 0), (self.y_dim(), n)).copy_from(&self.c2);
        let mut d = DMatrix::zeros(p, m);
        d.view_mut((0, 0), (self.e_dim(), self.w_dim())).copy_from(&self.d11);
        d.view_mut((0, self.w_dim()), (self.e_dim(), self.u_dim()))
            .copy_from(&self.d12);
        d.view_mut((self.e_dim(), 0), (self.y_dim(), self.w_dim()))
            .copy_from(&self.d21);
        d.view_mut((self.e_dim(), self.w_dim()), (self.y_dim(), self.u_dim()))
            .copy_from(&self.d22);
        DiscreteSS {
            a: self.a.clone(),
            b,
            c,
            d,
            sample_period: self.sample_period,
        }
    }

    /// Close the lower loop with the filter `k` (u = k y). The plants built
    /// here have no feedback path (D22 = 0, the y channel does not see u),
    /// so the interconnection is affine in `k`.
    pub fn close_with(&self, k: &DiscreteSS) -> Result<DiscreteSS> {
        if self.d22.iter().any(|x| x.abs() > 0.0) {
            return Err(Error::Unsupported(
                "closing is implemented for plants with D22 = 0".into(),
            ));
        }
        if k.input_dim() != self.y_dim() || k.output_dim() != self.u_dim() {
            return Err(Error::Dimension(format!(
                "controller is {}x{}, plant expects {}x{}",
                k.output_dim(),
                k.input_dim(),
                self.u_dim(),
                self.y_dim()
            )));
        }
        if !periods_match(k.sample_period, self.sample_period) {
            return Err(Error::Dimension("controller sample period mismatch".into()));
        }
        let n = self.state_dim();
        let nk = k.state_dim();
        let mut a = DMatrix::zeros(n + nk, n + nk);
        a.view_mut((0, 0), (n, n))
            .copy_from(&(&self.a + &self.b2 * &k.d * &self.c2));
        a.view_mut((0, n), (n, nk)).copy_from(&(&self.b2 * &k.c));
        a.view_mut((n, 0), (nk, n)).copy_from(&(&k.b * &self.c2));
        a.view_mut((n, n), (nk, nk)).copy_from(&k.a);
        let mut b = DMatrix::zeros(n + nk, self.w_dim());
        b.view_mut((0, 0), (n, self.w_dim()))
            .copy_from(&(&self.b1 + &self.b2 * &k.d * &self.d21));
        b.view_mut((n, 0), (nk, self.w_dim())).copy_from(&(&k.b * &self.d21));
        let mut c = DMatrix::zeros(self.e_dim(), n + nk);
        c.view_mut((0, 0), (self.e_dim(), n))
            .copy_from(&(&self.c1 + &self.d12 * &k.d * &self.c2));
        c.view_mut((0, n), (self.e_dim(), nk)).copy_from(&(&self.d12 * &k.c));
        let d = &self.d11 + &self.d12 * &k.d * &self.d21;
        DiscreteSS::new(a, b, c, d, self.sample_period)
    }

    /// Export with partition index metadata alongside the joint matrices.
    pub fn to_json(&self) -> String {
        let joint = self.joint();
        let doc = serde_json::json!({
            "system": serde_json::from_str::<serde_json::Value>(&joint.to_json()).expect("valid"),
            "partition": {
                "w_dim": self.w_dim(),
                "u_dim": self.u_dim(),
                "e_dim": self.e_dim(),
                "y_dim": self.y_dim(),
            }
        });
        serde_json::to_string_pretty(&doc).expect("serializable")
    }
}

/// Build the generalized plant for a design spec: the preview delay z^{-m}
/// is realized as a chain of m unit delays of the lifted N-vector.
pub fn assemble_plant(spec: &DesignSpec) -> Result<GeneralizedPlant> {
    let blocks = lifted_blocks(spec)?;
    let n = spec.fsfh_n;
    let m = spec.delay_m;
    let f_n = &blocks.f_n;
    let p_n = &blocks.p_n;

    let nf = f_n.state_dim();
    let np = p_n.state_dim();
    let nd = m * n;
    let dim = nf + nd + np;

    let mut a = DMatrix::zeros(dim, dim);
    a.view_mut((0, 0), (nf, nf)).copy_from(&f_n.a);
    a.view_mut((nf + nd, nf + nd), (np, np)).copy_from(&p_n.a);
    if m > 0 {
        // First delay block receives the lifted F output.
        a.view_mut((nf, 0), (n, nf)).copy_from(&f_n.c);
        for j in 1..m {
            for i in 0..n {
                a[(nf + j * n + i, nf + (j - 1) * n + i)] = 1.0;
            }
        }
    }

    let mut b1 = DMatrix::zeros(dim, n);
    b1.view_mut((0, 0), (nf, n)).copy_from(&f_n.b);
    if m > 0 {
        b1.view_mut((nf, 0), (n, n)).copy_from(&f_n.d);
    }

    let b2_blk = &p_n.b * &blocks.h_mat;
    let mut b2 = DMatrix::zeros(dim, spec.upsample_l);
    b2.view_mut((nf + nd, 0), (np, spec.upsample_l)).copy_from(&b2_blk);

    let mut c1 = DMatrix::zeros(n, dim);
    if m > 0 {
        for i in 0..n {
            c1[(i, nf + (m - 1) * n + i)] = 1.0;
        }
    } else {
        c1.view_mut((0, 0), (n, nf)).copy_from(&f_n.c);
    }
    c1.view_mut((0, nf + nd), (n, np)).copy_from(&(-&p_n.c));

    let d11 = if m > 0 {
        DMatrix::zeros(n, n)
    } else {
        f_n.d.clone()
    };
    let d12 = -(&p_n.d * &blocks.h_mat);

    let mut c2 = DMatrix::zeros(1, dim);
    c2.view_mut((0, 0), (1, nf)).copy_from(&(&blocks.s_mat * &f_n.c));
    let d21 = &blocks.s_mat * &f_n.d;
    let d22 = DMatrix::zeros(1, spec.upsample_l);

    let plant = GeneralizedPlant {
        a,
        b1,
        b2,
        c1,
        c2,
        d11,
        d12,
        d21,
        d22,
        sample_period: spec.h,
    };
    Ok(plant)
}

/// Largest singular value of the closed error system T_N(e^{j omega h}) at
/// each grid frequency. Refuses unstable filters: the gain of an unstable
/// loop is not an H-infinity quantity.
pub fn error_system_gain(
    spec: &DesignSpec,
    k_tilde: &DiscreteSS,
    omega_grid: &[f64],
) -> Result<Vec<f64>> {
    if !k_tilde.is_stable() {
        return Err(Error::Parameter(
            "error_system_gain requires a stable filter".into(),
        ));
    }
    let plant = assemble_plant(spec)?;
    let closed = plant.close_with(k_tilde)?;
    Ok(omega_grid
        .par_iter()
        .map(|&w| closed.freq_response(w).max_singular_value())
        .collect())
}

/// Default evaluation grid: mixed logarithmic and linear points over
/// [0, pi/h], endpoints included.
pub fn default_grid(h: f64, points: usize) -> Vec<f64> {
    let top = std::f64::consts::PI / h;
    let half = points / 2;
    let mut grid = Vec::with_capacity(points + 1);
    for i in 0..half {
        grid.push(top * i as f64 / half as f64);
    }
    let lo = (top * 1e-3).ln();
    let hi = top.ln();
    let rest = points - half;
    for i in 0..rest {
        let t = lo + (hi - lo) * i as f64 / (rest - 1).max(1) as f64;
        grid.push(t.exp());
    }
    grid.push(top);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * top);
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn example1_spec() -> DesignSpec {
        // F(s) = 1/((Ts+1)(0.1Ts+1)), T = 7.0187; P(s) = 1.
        let t = 7.0187;
        let f = ContinuousSS::from_tf(&[1.0], &[0.1 * t * t, 1.1 * t, 1.0]).unwrap();
        let p = ContinuousSS::from_gain(DMatrix::from_element(1, 1, 1.0));
        DesignSpec::new(f, p, 1.0, 2, 4, 10).unwrap()
    }

    #[test]
    fn spec_validation() {
        let f = ContinuousSS::from_tf(&[1.0], &[1.0, 1.0]).unwrap();
        let p = ContinuousSS::identity();
        assert!(DesignSpec::new(f.clone(), p.clone(), 1.0, 2, 0, 10).is_ok());
        assert!(DesignSpec::new(f.clone(), p.clone(), 1.0, 2, 0, 9).is_err());
        assert!(DesignSpec::new(f.clone(), p.clone(), 0.0, 2, 0, 10).is_err());
        // proper-but-not-strict F rejected by the design constructor
        let fp = ContinuousSS::identity();
        assert!(DesignSpec::new(fp.clone(), p.clone(), 1.0, 2, 0, 10).is_err());
        assert!(DesignSpec::for_simulation(fp, p, 1.0, 2, 0, 10).is_ok());
    }

    #[test]
    fn lift_n1_matches_c2d() {
        let f = ContinuousSS::from_tf(&[1.0], &[1.0, 1.0]).unwrap();
        let direct = f.c2d_step_invariant(1.0).unwrap();
        let lifted = fsfh_lift(&f, 1.0, 1).unwrap();
        assert_relative_eq!(lifted.a[(0, 0)], direct.a[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(lifted.b[(0, 0)], direct.b[(0, 0)], epsilon = 1e-14);
        assert_relative_eq!(lifted.d[(0, 0)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lift_pure_gain() {
        let g = ContinuousSS::from_gain(DMatrix::from_element(1, 1, 3.0));
        let lifted = fsfh_lift(&g, 1.0, 4).unwrap();
        assert_eq!(lifted.state_dim(), 0);
        // Feedthrough must be 3 I_4.
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 3.0 } else { 0.0 };
                assert_relative_eq!(lifted.d[(i, j)], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn lifted_response_matches_fast_simulation() {
        let f = ContinuousSS::from_tf(&[1.0], &[1.0, 0.8, 1.0]).unwrap();
        let h = 0.7;
        let n = 6;
        let lifted = fsfh_lift(&f, h, n).unwrap();
        let fast = f.c2d_step_invariant(h / n as f64).unwrap();

        let input: Vec<f64> = (0..4 * n).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let fast_out = fast.simulate_siso(&input).unwrap();

        let blocks: Vec<nalgebra::DVector<f64>> = input
            .chunks(n)
            .map(|c| nalgebra::DVector::from_column_slice(c))
            .collect();
        let lifted_out = lifted.simulate(&blocks).unwrap();
        for (k, blk) in lifted_out.iter().enumerate() {
            for i in 0..n {
                assert_relative_eq!(blk[i], fast_out[k * n + i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn polyphase_identity_and_delay() {
        let ident = DiscreteSS::from_gain(DMatrix::from_element(1, 1, 1.0), 0.5).unwrap();
        let kt = polyphase_decompose(&ident, 2).unwrap();
        assert_relative_eq!(kt.d[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(kt.d[(1, 0)], 0.0, epsilon = 1e-14);

        let delay = DiscreteSS::from_tf(&[1.0], &[1.0, 0.0], 0.5).unwrap();
        let ktd = polyphase_decompose(&delay, 2).unwrap();
        // Branch filter values at z=1: [0, 1].
        let r = ktd.freq_response(0.0).value;
        assert_relative_eq!(r[(0, 0)].re, 0.0, epsilon = 1e-12);
        assert_relative_eq!(r[(1, 0)].re, 1.0, epsilon = 1e-12);
        // Recompose returns z^{-1} at the fast rate.
        let k = polyphase_recompose(&ktd, 2).unwrap();
        let y = k.simulate_siso(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(y[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(y[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(y[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn polyphase_fir_split() {
        // 4-tap FIR, L = 2: branches carry even/odd taps.
        let taps = [1.0, -2.0, 3.0, 0.5];
        let k = DiscreteSS::from_fir(&taps, 0.5).unwrap();
        let kt = polyphase_decompose(&k, 2).unwrap();
        // Impulse through each branch at the slow rate.
        let imp: Vec<nalgebra::DVector<f64>> = (0..3)
            .map(|i| nalgebra::DVector::from_element(1, if i == 0 { 1.0 } else { 0.0 }))
            .collect();
        let resp = kt.simulate(&imp).unwrap();
        // branch 0: taps 0, 2; branch 1: taps 1, 3
        assert_relative_eq!(resp[0][0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(resp[1][0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(resp[0][1], -2.0, epsilon = 1e-14);
        assert_relative_eq!(resp[1][1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn polyphase_round_trip_on_grid() {
        // Random-ish stable 1-in/2-out filter.
        let kt = DiscreteSS::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.2, -0.1, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, -0.4]),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.1, -0.3, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.2, -0.6]),
            1.0,
        )
        .unwrap();
        let k = polyphase_recompose(&kt, 2).unwrap();
        let back = polyphase_decompose(&k, 2).unwrap();
        for i in 0..64 {
            let w = std::f64::consts::PI * i as f64 / 64.0;
            let r1 = kt.freq_response(w).value;
            let r2 = back.freq_response(w).value;
            for row in 0..2 {
                assert!(
                    (r1[(row, 0)] - r2[(row, 0)]).norm() < 1e-8,
                    "round trip mismatch at grid point {i}"
                );
            }
        }
    }

    #[test]
    fn recompose_matches_direct_formula() {
        let kt = DiscreteSS::new(
            DMatrix::from_row_slice(1, 1, &[0.4]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, -0.5]),
            DMatrix::from_row_slice(2, 1, &[0.3, 0.8]),
            1.0,
        )
        .unwrap();
        let k = polyphase_recompose(&kt, 2).unwrap();
        for i in 0..33 {
            let w = 2.0 * std::f64::consts::PI * i as f64 / 33.0;
            // K(e^{jwh'}) = [1, e^{-jwh'}] Ktilde(e^{jwh'L}), h' = h/L
            let zf = num_complex::Complex64::from_polar(1.0, w * 0.5);
            let kt_resp = kt.freq_response(w).value;
            let want = kt_resp[(0, 0)] + kt_resp[(1, 0)] / zf;
            let got = k.freq_response(w).scalar();
            assert!((want - got).norm() < 1e-10);
        }
    }

    #[test]
    fn hold_matrix_shape() {
        let h = hold_matrix(10, 2);
        for j in 0..2 {
            for i in 0..10 {
                let want = if i / 5 == j { 1.0 } else { 0.0 };
                assert_eq!(h[(i, j)], want);
            }
        }
    }

    #[test]
    fn plant_dimensions_example1() {
        let spec = example1_spec();
        let plant = assemble_plant(&spec).unwrap();
        assert_eq!(plant.w_dim(), 10);
        assert_eq!(plant.e_dim(), 10);
        assert_eq!(plant.u_dim(), 2);
        assert_eq!(plant.y_dim(), 1);
        // F has 2 states, the delay chain m*N = 40, P has none.
        assert_eq!(plant.state_dim(), 42);
        let radius = crate::linalg::spectral_radius(&plant.a).unwrap();
        assert!(radius < 1.0, "open-loop plant must be stable, rho = {radius}");
    }

    #[test]
    fn closed_loop_equals_formula_term_by_term() {
        let spec = example1_spec();
        let plant = assemble_plant(&spec).unwrap();
        let blocks = lifted_blocks(&spec).unwrap();
        // A small stable test filter with 2 outputs.
        let kt = DiscreteSS::new(
            DMatrix::from_row_slice(1, 1, &[0.2]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5, -0.25]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.4]),
            1.0,
        )
        .unwrap();
        let closed = plant.close_with(&kt).unwrap();
        for i in 0..9 {
            let w = std::f64::consts::PI * i as f64 / 9.0;
            let z = num_complex::Complex64::from_polar(1.0, w * spec.h);
            let fr = blocks.f_n.freq_response(w).value;
            let pr = blocks.p_n.freq_response(w).value;
            let kr = kt.freq_response(w).value;
            let hm = blocks.h_mat.map(|x| num_complex::Complex64::new(x, 0.0));
            let sm = blocks.s_mat.map(|x| num_complex::Complex64::new(x, 0.0));
            let zm = z.powi(-(spec.delay_m as i32));
            let direct = &fr * zm - &pr * hm * kr * sm * &fr;
            let got = closed.freq_response(w).value;
            let err = (&direct - &got).iter().map(|x| x.norm()).fold(0.0f64, f64::max);
            assert!(err < 1e-9, "mismatch {err} at grid {i}");
        }
    }

    #[test]
    fn open_loop_is_delayed_f_when_k_zero() {
        let spec = example1_spec();
        let plant = assemble_plant(&spec).unwrap();
        let blocks = lifted_blocks(&spec).unwrap();
        let kt0 = DiscreteSS::from_gain(DMatrix::zeros(2, 1), 1.0).unwrap();
        let closed = plant.close_with(&kt0).unwrap();
        for w in [0.0, 0.5, 2.0] {
            let a = closed.freq_response(w).value;
            let b = blocks.f_n.freq_response(w).value;
            // |z^{-m}| = 1 on the circle, so the gains agree.
            let ga = a.svd(false, false).singular_values[0];
            let gb = b.svd(false, false).singular_values[0];
            assert_relative_eq!(ga, gb, max_relative = 1e-9);
        }
    }

    #[test]
    fn gain_grid_is_periodic_and_refuses_unstable() {
        let spec = example1_spec();
        let kt = DiscreteSS::from_gain(DMatrix::zeros(2, 1), 1.0).unwrap();
        let w0 = 0.37;
        let g = error_system_gain(&spec, &kt, &[w0, w0 + 2.0 * std::f64::consts::PI / spec.h])
            .unwrap();
        assert_relative_eq!(g[0], g[1], max_relative = 1e-9);

        let unstable = DiscreteSS::from_tf(&[1.0], &[1.0, -1.5], 1.0).unwrap();
        let kt_bad = polyphase_decompose(&unstable, 2).unwrap();
        assert!(error_system_gain(&spec, &kt_bad, &[0.0]).is_err());
    }

    #[test]
    fn default_grid_endpoints() {
        let g = default_grid(1.0, 512);
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(*g.last().unwrap(), std::f64::consts::PI, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
