//! Numerical checks of the `m = 1` gain conditions.
//!
//! The normalized `m = 1` error system is analysed with the Lyapunov
//! function
//!
//! ```text
//! V(z) = 1/2 z0' H z0 - z0' |z1|^2 sign(z1) + h/4 sum |z1_i|^4
//! ```
//!
//! whose derivative is bounded by `-k0 eta0(z) + gamma0(z)`. The suprema that
//! define admissible `h` and `k0` have no closed form; they are estimated on a
//! seeded sample of the unit sphere followed by a short coordinate polish.
//! The results are estimates, never certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NetworkSpectra;
use crate::numerics::{self, sign, signed_power_unchecked, Cholesky, Mat};
use crate::protocol::GainSchedule;

/// Points with `eta0` at or below this are treated as lying on `{eta0 = 0}`.
pub const ETA0_ZERO_TOL: f64 = 1e-8;
/// Multiplier applied to `max(2 lambda_max(H^-1), h*)`.
pub const DEFAULT_H_SAFETY: f64 = 1.1;
const POLISH_POINTS: usize = 10;
const POLISH_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub h: f64,
    pub k1: f64,
    pub k_tilde1: f64,
}

impl LyapunovParams {
    pub fn from_gains(g: &GainSchedule, h: f64) -> Result<Self> {
        if g.m != 1 {
            return Err(Error::Parameter(format!(
                "Lyapunov analysis covers m = 1 only, got m = {}",
                g.m
            )));
        }
        Ok(Self {
            h,
            k1: g.k[1],
            k_tilde1: g.k_tilde[1],
        })
    }
}

/// `H` together with its factorization, reused across many evaluations.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    h: Mat,
    factor: Cholesky,
    h_inv_max_eig: f64,
}

impl InfluenceMatrix {
    pub fn new(h: &Mat) -> Result<Self> {
        let factor = Cholesky::new(h)?;
        let eig = numerics::symmetric_eigen(h)?;
        if !(eig.min() > 0.0) {
            return Err(Error::NotSpd {
                pivot: 0,
                value: eig.min(),
            });
        }
        Ok(Self {
            h: h.clone(),
            factor,
            h_inv_max_eig: 1.0 / eig.min(),
        })
    }

    pub fn from_spectra(s: &NetworkSpectra) -> Result<Self> {
        Self::new(&s.h)
    }

    pub fn matrix(&self) -> &Mat {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    /// `lambda_max(H^-1)`.
    pub fn inverse_max_eig(&self) -> f64 {
        self.h_inv_max_eig
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.h.matvec(v).expect("dimension checked by caller")
    }

    fn solve(&self, v: &[f64]) -> Vec<f64> {
        self.factor.solve(v).expect("dimension checked by caller")
    }
}

fn check_dims(h: &InfluenceMatrix, vs: &[&[f64]]) -> Result<()> {
    for v in vs {
        if v.len() != h.dim() {
            return Err(Error::Shape(format!(
                "vector of length {} for an {}-agent network",
                v.len(),
                h.dim()
            )));
        }
    }
    Ok(())
}

fn check_k1(k1: f64) -> Result<()> {
    if !(k1 > 1.0) {
        return Err(Error::Parameter(format!("k1 must exceed 1, got {k1}")));
    }
    Ok(())
}

/// `V(z) = 1/2 z0' H z0 - z0' |z1|^2 sign(z1) + h/4 sum |z1_i|^4`.
pub fn lyapunov_v(z0: &[f64], z1: &[f64], h_mat: &Mat, h: f64) -> Result<f64> {
    if z0.len() != h_mat.rows() || z1.len() != h_mat.rows() || !h_mat.is_square() {
        return Err(Error::Shape("lyapunov_v dimensions".into()));
    }
    let hz0 = h_mat.matvec(z0)?;
    Ok(lyapunov_v_with(z0, z1, &hz0, h))
}

fn lyapunov_v_with(z0: &[f64], z1: &[f64], hz0: &[f64], h: f64) -> f64 {
    let quad = 0.5 * numerics::dot(z0, hz0);
    let cross: f64 = z0
        .iter()
        .zip(z1)
        .map(|(a, b)| a * signed_power_unchecked(*b, 2.0))
        .sum();
    let quartic: f64 = z1.iter().map(|v| v.powi(4)).sum();
    quad - cross + 0.25 * h * quartic
}

/// `M(h) = [[H/2, -I/2], [-I/2, h I/4]]`.
pub fn m_matrix(h_mat: &Mat, h: f64) -> Mat {
    let n = h_mat.rows();
    let mut m = Mat::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = 0.5 * h_mat[(i, j)];
        }
        m[(i, n + i)] = -0.5;
        m[(n + i, i)] = -0.5;
        m[(n + i, n + i)] = 0.25 * h;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdCheck {
    pub positive_definite: bool,
    /// Smallest eigenvalue of the Schur complement `h I/4 - (H/2)^-1 / 4`.
    pub margin: f64,
}

/// Positive definiteness of `M(h)` through its Schur complement.
pub fn m_matrix_pd(h_mat: &Mat, h: f64) -> Result<PdCheck> {
    let factor = Cholesky::new(h_mat)?;
    let h_inv = factor.inverse()?;
    let n = h_mat.rows();
    let mut schur = h_inv.scale(-0.5);
    for i in 0..n {
        schur[(i, i)] += 0.25 * h;
    }
    let margin = numerics::symmetric_eigen(&schur)?.min();
    Ok(PdCheck {
        positive_definite: margin > 0.0,
        margin,
    })
}

/// `sup_{xi in [-1,1]^N} -a'(s + xi / k1) = -a's + ||a||_1 / k1`.
fn adversarial_sup(a: &[f64], s: &[f64], k1: f64) -> f64 {
    let lin: f64 = a.iter().zip(s).map(|(x, y)| x * y).sum();
    let l1: f64 = a.iter().map(|x| x.abs()).sum();
    -lin + l1 / k1
}

/// `(eta0, gamma0)`.
///
/// `eta0 = (H z0 - |z1|^2 sign(z1))' (|H z0|^(1/2) sign(H z0) - z1)` and
/// `gamma0 = sup_xi -a'(sign(H z0) + xi/k1)` with
/// `a = k~1 (2 z0 . |z1| + h |z1|^3 sign(z1))`.
pub fn eta0_gamma0(z0: &[f64], z1: &[f64], h_mat: &Mat, g: &GainSchedule, h: f64) -> Result<(f64, f64)> {
    let p = LyapunovParams::from_gains(g, h)?;
    check_k1(p.k1)?;
    if z0.len() != h_mat.rows() || z1.len() != h_mat.rows() {
        return Err(Error::Shape("eta0_gamma0 dimensions".into()));
    }
    let hz0 = h_mat.matvec(z0)?;
    Ok(eta0_gamma0_with(z0, z1, &hz0, &p))
}

fn eta0_gamma0_with(z0: &[f64], z1: &[f64], hz0: &[f64], p: &LyapunovParams) -> (f64, f64) {
    let mut eta0 = 0.0;
    for i in 0..z0.len() {
        let left = hz0[i] - signed_power_unchecked(z1[i], 2.0);
        let right = signed_power_unchecked(hz0[i], 0.5) - z1[i];
        eta0 += left * right;
    }
    let a = gamma0_weights(z0, z1, p);
    let s: Vec<f64> = hz0.iter().map(|v| sign(*v)).collect();
    (eta0, adversarial_sup(&a, &s, p.k1))
}

/// `a = k~1 (2 z0 . |z1| + h |z1|^3 sign(z1))`, exposed for brute-force checks.
pub fn gamma0_weights(z0: &[f64], z1: &[f64], p: &LyapunovParams) -> Vec<f64> {
    z0.iter()
        .zip(z1)
        .map(|(a, b)| p.k_tilde1 * (2.0 * a * b.abs() + p.h * signed_power_unchecked(*b, 3.0)))
        .collect()
}

/// `(eta1, gamma1)` with `eta1 = sum |z1_i|^3 (1 - 1/k1)` and
/// `gamma1 = sup_xi -b'(sign(z1) + xi/k1)`, `b = 2 (H^-1 |z1|^2 sign(z1)) . |z1|`.
pub fn eta1_gamma1(z1: &[f64], h_mat: &Mat, k1: f64) -> Result<(f64, f64)> {
    check_k1(k1)?;
    let hm = InfluenceMatrix::new(h_mat)?;
    check_dims(&hm, &[z1])?;
    Ok(eta1_gamma1_with(z1, &hm, k1))
}

fn eta1_gamma1_with(z1: &[f64], hm: &InfluenceMatrix, k1: f64) -> (f64, f64) {
    let eta1 = z1.iter().map(|v| v.abs().powi(3)).sum::<f64>() * (1.0 - 1.0 / k1);
    let b = gamma1_weights_with(z1, hm);
    let s: Vec<f64> = z1.iter().map(|v| sign(*v)).collect();
    (eta1, adversarial_sup(&b, &s, k1))
}

/// `b = 2 (H^-1 |z1|^2 sign(z1)) . |z1|`, exposed for brute-force checks.
pub fn gamma1_weights(z1: &[f64], h_mat: &Mat) -> Result<Vec<f64>> {
    let hm = InfluenceMatrix::new(h_mat)?;
    check_dims(&hm, &[z1])?;
    Ok(gamma1_weights_with(z1, &hm))
}

fn gamma1_weights_with(z1: &[f64], hm: &InfluenceMatrix) -> Vec<f64> {
    let sq: Vec<f64> = z1.iter().map(|v| signed_power_unchecked(*v, 2.0)).collect();
    let w = hm.solve(&sq);
    w.iter().zip(z1).map(|(a, b)| 2.0 * a * b.abs()).collect()
}

/// A sampled supremum over the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub samples: usize,
}

fn sample_and_polish<F>(dim: usize, samples: usize, seed: u64, f: F) -> Result<SupEstimate>
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let points = numerics::unit_sphere_grid(dim, samples, seed)?;
    let n_points = points.len();
    let mut scored: Vec<(f64, Vec<f64>)> = points.into_iter().filter_map(|p| f(&p).map(|v| (v, p))).collect();
    if scored.is_empty() {
        return Err(Error::Parameter("no admissible sample point on the sphere".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].clone();
    for (value, start) in scored.into_iter().take(POLISH_POINTS) {
        let (v, p) = polish(start, value, &f);
        if v > best.0 {
            best = (v, p);
        }
    }
    Ok(SupEstimate {
        value: best.0,
        argmax: best.1,
        samples: n_points,
    })
}

/// Coordinate ascent restricted to the unit sphere.
fn polish<F>(mut x: Vec<f64>, mut value: f64, f: &F) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut step = 0.1;
    for _ in 0..POLISH_ITERS {
        let mut improved = false;
        for c in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut cand = x.clone();
                cand[c] += dir * step;
                if !numerics::normalize(&mut cand) {
                    continue;
                }
                if let Some(v) = f(&cand) {
                    if v > value {
                        value = v;
                        x = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (value, x)
}

/// Estimate of `h* = sup_{||z1|| = 1} gamma1(z1) / eta1(z1)`; a lower bound on
/// the true supremum.
pub fn estimate_h_star(h_mat: &Mat, k1: f64, samples: usize, seed: u64) -> Result<SupEstimate> {
    check_k1(k1)?;
    let hm = InfluenceMatrix::new(h_mat)?;
    estimate_h_star_with(&hm, k1, samples, seed)
}

fn estimate_h_star_with(hm: &InfluenceMatrix, k1: f64, samples: usize, seed: u64) -> Result<SupEstimate> {
    sample_and_polish(hm.dim(), samples, seed, |z1| {
        let (eta1, gamma1) = eta1_gamma1_with(z1, hm, k1);
        (eta1 > 0.0).then(|| gamma1 / eta1)
    })
}

/// `max(2 lambda_max(H^-1), h*) * safety`.
pub fn recommended_h(h_inv_max_eig: f64, h_star: f64, safety: f64) -> f64 {
    (2.0 * h_inv_max_eig).max(h_star) * safety
}

/// Outcome of the `k0` supremum estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct K0Estimate {
    pub k0_star: f64,
    pub argmax: Vec<f64>,
    /// Sample points found with `eta0 <= ETA0_ZERO_TOL` (all had `gamma0 < 0`).
    pub near_zero_points: usize,
    /// Points sampled directly on `{H z0 = |z1|^2 sign(z1)}`.
    pub zero_set_points: usize,
    /// Largest `gamma0` over the zero-set samples (negative when the
    /// hypothesis holds).
    pub zero_set_max_gamma0: f64,
    pub samples: usize,
}

/// Estimate of `k0* = sup_{||z|| = 1} gamma0(z) / eta0(z)`.
///
/// Requires `M(h) > 0` and `-h eta1 + gamma1 < 0` at the sampled `z1`; points
/// with vanishing `eta0` must have `gamma0 < 0`. Violations are reported as
/// [`Error::Hypothesis`] carrying the witness point.
pub fn estimate_k0_star(h_mat: &Mat, g: &GainSchedule, h: f64, samples: usize, seed: u64) -> Result<K0Estimate> {
    let p = LyapunovParams::from_gains(g, h)?;
    check_k1(p.k1)?;
    let hm = InfluenceMatrix::new(h_mat)?;
    let n = hm.dim();

    let pd = m_matrix_pd(h_mat, h)?;
    if !pd.positive_definite {
        return Err(Error::Hypothesis(format!(
            "M(h) is not positive definite for h = {h} (Schur margin {:.3e})",
            pd.margin
        )));
    }
    for z1 in numerics::unit_sphere_grid(n, samples, seed ^ 0x5eed_0001)? {
        let (eta1, gamma1) = eta1_gamma1_with(&z1, &hm, p.k1);
        if -h * eta1 + gamma1 >= 0.0 {
            return Err(Error::Hypothesis(format!(
                "-h eta1 + gamma1 >= 0 at z1 = {z1:?} (h = {h} too small)"
            )));
        }
    }

    // Directly on the zero set of eta0: z0 = H^-1 |z1|^2 sign(z1), then
    // rescaled along the weighted dilation onto the unit sphere.
    let mut zero_set_max_gamma0 = f64::NEG_INFINITY;
    let zs_count = (samples / 4).max(2 * n);
    let mut zero_set_points = 0;
    for z1 in numerics::unit_sphere_grid(n, zs_count, seed ^ 0x5eed_0002)? {
        let sq: Vec<f64> = z1.iter().map(|v| signed_power_unchecked(*v, 2.0)).collect();
        let z0 = hm.solve(&sq);
        let r0 = numerics::dot(&z0, &z0);
        let lam2 = if r0 == 0.0 {
            1.0
        } else {
            (-1.0 + (1.0 + 4.0 * r0).sqrt()) / (2.0 * r0)
        };
        let z0: Vec<f64> = z0.iter().map(|v| v * lam2).collect();
        let z1: Vec<f64> = z1.iter().map(|v| v * lam2.sqrt()).collect();
        let hz0 = hm.apply(&z0);
        let (_, gamma0) = eta0_gamma0_with(&z0, &z1, &hz0, &p);
        zero_set_points += 1;
        zero_set_max_gamma0 = zero_set_max_gamma0.max(gamma0);
        if gamma0 >= 0.0 {
            let mut witness = z0;
            witness.extend(z1);
            return Err(Error::Hypothesis(format!(
                "gamma0 = {gamma0:e} >= 0 on the set eta0 = 0 at z = {witness:?}"
            )));
        }
    }

    let near_zero = std::cell::Cell::new(0usize);
    let violation = std::cell::RefCell::new(None::<(f64, Vec<f64>)>);
    let est = sample_and_polish(2 * n, samples, seed, |z| {
        let (z0, z1) = z.split_at(n);
        let hz0 = hm.apply(z0);
        let (eta0, gamma0) = eta0_gamma0_with(z0, z1, &hz0, &p);
        if eta0 > ETA0_ZERO_TOL {
            Some(gamma0 / eta0)
        } else {
            near_zero.set(near_zero.get() + 1);
            if gamma0 >= 0.0 && violation.borrow().is_none() {
                *violation.borrow_mut() = Some((gamma0, z.to_vec()));
            }
            None
        }
    })?;
    if let Some((gamma0, z)) = violation.into_inner() {
        return Err(Error::Hypothesis(format!(
            "gamma0 = {gamma0:e} >= 0 where eta0 ~ 0 at z = {z:?}"
        )));
    }
    Ok(K0Estimate {
        k0_star: est.value,
        argmax: est.argmax,
        near_zero_points: near_zero.get(),
        zero_set_points,
        zero_set_max_gamma0,
        samples: est.samples,
    })
}

/// `-k eta0(z) + gamma0(z)` at one point, for checking the gain contract.
pub fn decrease_margin(z: &[f64], h_mat: &Mat, g: &GainSchedule, h: f64, k: f64) -> Result<f64> {
    let n = h_mat.rows();
    if z.len() != 2 * n {
        return Err(Error::Shape("decrease_margin expects a 2N vector".into()));
    }
    let (eta0, gamma0) = eta0_gamma0(&z[..n], &z[n..], h_mat, g, h)?;
    Ok(-k * eta0 + gamma0)
}

/// Normalized `m = 1` error field without disturbance:
/// `z0' = -k0 (|H z0|^(1/2) sign(H z0) - z1)`, `z1' = -k~1 sign(H z0)`.
pub fn normalized_m1_field(z0: &[f64], z1: &[f64], h_mat: &Mat, g: &GainSchedule) -> Result<(Vec<f64>, Vec<f64>)> {
    let hz0 = h_mat.matvec(z0)?;
    let k0 = g.k[0];
    let kt1 = g.k_tilde[1];
    let d0 = hz0
        .iter()
        .zip(z1)
        .map(|(a, b)| -k0 * (signed_power_unchecked(*a, 0.5) - b))
        .collect();
    let d1 = hz0.iter().map(|a| -kt1 * sign(*a)).collect();
    Ok((d0, d1))
}

/// One named pass/fail item of a gain verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<f64>>,
}

impl Condition {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
            witness: None,
        }
    }
}

/// Full report of a gain check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub m: usize,
    pub mode: String,
    pub k: Vec<f64>,
    pub k_tilde: Vec<f64>,
    pub h: Option<f64>,
    pub h_star: Option<f64>,
    pub k0_star: Option<f64>,
    pub m_margin: Option<f64>,
    pub two_lambda_max_h_inv: f64,
    /// Smallest `k0` passing with `k1` held fixed. `gamma0` is linear in
    /// `k~1 = k1 / k0`, so the condition reads `k0^2 > k0* k0`.
    pub k0_required_fixed_k1: Option<f64>,
    /// `true` if `k0*` re-estimated at larger `h` was observed to increase.
    pub k0_star_increases_with_h: Option<bool>,
    /// For explicit gains with a declared `k~`: whether `k` matches the recursion.
    pub recursion_conforming: Option<bool>,
    pub recursion_detail: Option<String>,
    pub conditions: Vec<Condition>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    pub safety: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 20_000,
            seed: 1,
            safety: DEFAULT_H_SAFETY,
        }
    }
}

/// Checks a gain schedule against the conditions of the stability theorem.
///
/// For `m = 1` the Lyapunov conditions are evaluated (`k1 > 1`, `M(h) > 0`,
/// `h > h*`, the zero-set hypothesis and `k0 > k0*`). For `m > 1` only the
/// recursion form of the schedule is checked. `declared_tilde`, when given
/// alongside explicit gains, is compared against the recursion.
pub fn verify_gains(
    spectra: &NetworkSpectra,
    g: &GainSchedule,
    declared_tilde: Option<&[f64]>,
    opts: &VerifyOptions,
) -> Result<GainReport> {
    let two_lmax = 2.0 * spectra.h_inv_max_eig;
    let mut report = GainReport {
        m: g.m,
        mode: if g.m == 1 {
            "lyapunov".into()
        } else {
            "recursion-form check only".into()
        },
        k: g.k.clone(),
        k_tilde: g.k_tilde.clone(),
        h: None,
        h_star: None,
        k0_star: None,
        k0_required_fixed_k1: None,
        m_margin: None,
        two_lambda_max_h_inv: two_lmax,
        k0_star_increases_with_h: None,
        recursion_conforming: None,
        recursion_detail: None,
        conditions: Vec::new(),
        passed: false,
    };
    let conds = &mut report.conditions;
    conds.push(Condition::new(
        "gains>0",
        g.k.iter().all(|k| *k > 0.0) && g.k_tilde.iter().all(|k| *k > 0.0),
        format!("k = {:?}", g.k),
    ));
    conds.push(Condition::new(
        "H>0",
        spectra.h_min_eig > 0.0,
        format!("lambda_min(H) = {:.6e}", spectra.h_min_eig),
    ));
    let residual = g.recursion_residual();
    conds.push(Condition::new(
        "schedule-recursion",
        residual <= 1e-12,
        format!("relative residual {residual:.3e}"),
    ));
    if let Some(declared) = declared_tilde {
        let designed = crate::protocol::design_gains(g.m, declared, g.l_tilde)?;
        let mismatch: Vec<String> = (0..=g.m)
            .filter(|&mu| (designed.k[mu] - g.k[mu]).abs() > 1e-12 * designed.k[mu])
            .map(|mu| format!("k_{mu}: recursion {:.6} vs given {:.6}", designed.k[mu], g.k[mu]))
            .collect();
        report.recursion_conforming = Some(mismatch.is_empty());
        report.recursion_detail = Some(if mismatch.is_empty() {
            "gains follow the recursion from the declared k~".into()
        } else {
            mismatch.join("; ")
        });
    }

    if g.m == 1 {
        let k1 = g.k[1];
        conds.push(Condition::new("k1>1", k1 > 1.0, format!("k1 = {k1}")));
        if k1 > 1.0 {
            verify_m1(spectra, g, opts, &mut report)?;
        }
    }
    report.passed = report.conditions.iter().all(|c| c.passed);
    Ok(report)
}

fn verify_m1(spectra: &NetworkSpectra, g: &GainSchedule, opts: &VerifyOptions, report: &mut GainReport) -> Result<()> {
    let k1 = g.k[1];
    let hm = InfluenceMatrix::from_spectra(spectra)?;
    let h_star = estimate_h_star_with(&hm, k1, opts.samples, opts.seed)?;
    let h = recommended_h(hm.inverse_max_eig(), h_star.value, opts.safety);
    report.h_star = Some(h_star.value);
    report.h = Some(h);

    let pd = m_matrix_pd(&spectra.h, h)?;
    report.m_margin = Some(pd.margin);
    report.conditions.push(Condition::new(
        "M(h)>0",
        pd.positive_definite,
        format!("h = {h:.6}, Schur margin {:.6e}", pd.margin),
    ));

    match estimate_k0_star(&spectra.h, g, h, opts.samples, opts.seed) {
        Ok(est) => {
            report.conditions.push(Condition::new(
                "h>h*",
                true,
                format!("h = {h:.6} > h* estimate {:.6}", h_star.value),
            ));
            report.conditions.push(Condition::new(
                "eta0=0=>gamma0<0",
                true,
                format!(
                    "{} zero-set points, max gamma0 {:.6e}",
                    est.zero_set_points, est.zero_set_max_gamma0
                ),
            ));
            let k0 = g.k[0];
            let mut c = Condition::new(
                "k0>k0*",
                k0 > est.k0_star,
                format!("k0 = {k0} vs k0* estimate {:.6}", est.k0_star),
            );
            if !c.passed {
                c.witness = Some(est.argmax.clone());
            }
            report.conditions.push(c);
            report.k0_star = Some(est.k0_star);
            report.k0_required_fixed_k1 = Some((est.k0_star * k0).sqrt());
            // Re-estimate at a larger h to expose how k0* trends with h.
            if let Ok(bigger) = estimate_k0_star(&spectra.h, g, 2.0 * h, opts.samples, opts.seed) {
                report.k0_star_increases_with_h = Some(bigger.k0_star > est.k0_star);
            }
        }
        Err(Error::Hypothesis(msg)) => {
            report
                .conditions
                .push(Condition::new("lyapunov-hypotheses", false, msg));
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle_graph, path_graph, spectra, LTildeMode};
    use crate::protocol::GainSchedule;

    fn m1_gains(k0: f64, k1: f64) -> GainSchedule {
        GainSchedule::explicit(1, &[k0, k1], 1.0).unwrap()
    }

    #[test]
    fn lyapunov_examples() {
        let h1 = Mat::from_rows(&[[1.0]]).unwrap();
        assert_eq!(lyapunov_v(&[0.0], &[0.0], &h1, 4.0).unwrap(), 0.0);
        assert!((lyapunov_v(&[1.0], &[1.0], &h1, 4.0).unwrap() - 0.5).abs() < 1e-15);
        let h = path_graph(3).unwrap().with_leaders([0]).unwrap();
        let s = spectra(&h, 1.0, LTildeMode::Singular).unwrap();
        let z0 = [0.3, -1.0, 0.2];
        let v = lyapunov_v(&z0, &[0.0; 3], &s.h, 1.0).unwrap();
        let quad = 0.5 * numerics::dot(&z0, &s.h.matvec(&z0).unwrap());
        assert!((v - quad).abs() < 1e-15 && v > 0.0);
    }

    #[test]
    fn m_matrix_examples() {
        let net = cycle_graph(6).unwrap().with_leaders([0, 3]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let boundary = 2.0 * s.h_inv_max_eig;
        assert!(m_matrix_pd(&s.h, boundary * 1.01).unwrap().positive_definite);
        assert!(!m_matrix_pd(&s.h, boundary * 0.99).unwrap().positive_definite);

        let id = Mat::identity(3);
        let pd = m_matrix_pd(&id, 2.1).unwrap();
        assert!(pd.positive_definite);
        assert!((pd.margin - 0.1 / 4.0).abs() < 1e-14);

        // Schur result agrees with the full 2N x 2N matrix.
        let full = numerics::symmetric_eigen(&m_matrix(&s.h, boundary * 1.01)).unwrap();
        assert!(full.min() > 0.0);
        let full = numerics::symmetric_eigen(&m_matrix(&s.h, boundary * 0.99)).unwrap();
        assert!(full.min() < 0.0);
    }

    #[test]
    fn eta0_vanishes_on_zero_set() {
        let net = cycle_graph(5).unwrap().with_leaders([1]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let g = m1_gains(3.0, 1.5);
        let z1 = [0.4, -0.2, 0.9, -0.7, 0.1];
        let sq: Vec<f64> = z1.iter().map(|v| signed_power_unchecked(*v, 2.0)).collect();
        let z0 = s.solve_h(&sq).unwrap();
        let (eta0, _) = eta0_gamma0(&z0, &z1, &s.h, &g, 10.0).unwrap();
        assert!(eta0.abs() < 1e-14);
    }

    #[test]
    fn eta1_examples() {
        let h = Mat::identity(3);
        assert_eq!(eta1_gamma1(&[0.0; 3], &h, 1.5).unwrap(), (0.0, 0.0));
        let (eta1, _) = eta1_gamma1(&[0.1, -0.3, 0.0], &h, 1.5).unwrap();
        assert!(eta1 > 0.0);
        assert!(eta1_gamma1(&[1.0, 0.0, 0.0], &h, 0.9).is_err());
    }

    #[test]
    fn scalar_h_star_matches_hand_value() {
        // N = 1, H = [1]: b = 2 z1^3 sign(z1) |z1| ... at z1 = +-1 the ratio
        // gamma1 / eta1 = -2 (1 - 1/k1) / (1 - 1/k1) = -2.
        let h = Mat::identity(1);
        for k1 in [1.1, 2.0, 5.0] {
            for z in [1.0, -1.0] {
                let (eta1, gamma1) = eta1_gamma1(&[z], &h, k1).unwrap();
                assert!((gamma1 / eta1 + 2.0).abs() < 1e-14);
            }
            let est = estimate_h_star(&h, k1, 16, 3).unwrap();
            assert!((est.value + 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn h_star_is_monotone_in_samples_and_deterministic() {
        let net = cycle_graph(5).unwrap().with_leaders([0, 2]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let a = estimate_h_star(&s.h, 1.5, 200, 9).unwrap();
        let b = estimate_h_star(&s.h, 1.5, 200, 9).unwrap();
        assert_eq!(a, b);
        // Without polish the sample max is monotone in the sample superset.
        let pts = numerics::unit_sphere_grid(5, 400, 9).unwrap();
        let hm = InfluenceMatrix::new(&s.h).unwrap();
        let ratio = |z: &[f64]| {
            let (e, g) = eta1_gamma1_with(z, &hm, 1.5);
            g / e
        };
        let small = pts[..200].iter().map(|p| ratio(p)).fold(f64::MIN, f64::max);
        let large = pts.iter().map(|p| ratio(p)).fold(f64::MIN, f64::max);
        assert!(large >= small);
    }

    #[test]
    fn k0_star_deterministic() {
        let net = path_graph(3).unwrap().with_leaders([0]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let g = m1_gains(4.0, 2.0);
        let h = recommended_h(s.h_inv_max_eig, estimate_h_star(&s.h, 2.0, 500, 2).unwrap().value, 1.1);
        let a = estimate_k0_star(&s.h, &g, h, 500, 4).unwrap();
        let b = estimate_k0_star(&s.h, &g, h, 500, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.zero_set_max_gamma0 < 0.0);
    }

    #[test]
    fn k0_star_rejects_small_h() {
        let net = path_graph(3).unwrap().with_leaders([0]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        let g = m1_gains(4.0, 2.0);
        let h = 2.0 * s.h_inv_max_eig * 0.9;
        assert!(matches!(
            estimate_k0_star(&s.h, &g, h, 200, 1),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn verify_flags_small_k1() {
        let net = cycle_graph(10).unwrap().with_leaders([0, 2, 4]).unwrap();
        let s = spectra(&net, 0.25, LTildeMode::Explicit(2.5)).unwrap();
        let g = GainSchedule::explicit(1, &[2.0, 0.9], 2.5).unwrap();
        let report = verify_gains(
            &s,
            &g,
            None,
            &VerifyOptions {
                samples: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!report.passed);
        let c = report.conditions.iter().find(|c| c.name == "k1>1").unwrap();
        assert!(!c.passed);
    }
}
