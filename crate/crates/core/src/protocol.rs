//! The distributed differentiator: gain design, continuous-time right-hand
//! sides, the error dynamics and the exact sampled-data update.
//!
//! Every agent `i` keeps `m + 1` states `x_{i,0..=m}` and only ever reads the
//! scalar `x_{j,0}` of its neighbours plus, for leader-access agents, a
//! measurement `u_i` of the leader output. The only coupling term is the
//! innovation
//!
//! ```text
//! sigma_i = sum_{j in N_i} (x_{i,0} - x_{j,0}) + b_i (x_{i,0} - u_i)
//! ```
//!
//! which enters order `mu` through `k_mu L~^((mu+1)/(m+1)) |sigma_i|^((m-mu)/(m+1)) sign(sigma_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Network, NetworkSpectra};
use crate::numerics::{sign, signed_power_unchecked, Mat};

/// Protocol gains `k_0..=k_m`, their normalized counterparts and `L~`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub m: usize,
    pub k: Vec<f64>,
    pub k_tilde: Vec<f64>,
    pub l_tilde: f64,
    /// `true` when `k` was produced from `k_tilde` by [`design_gains`].
    pub from_recursion: bool,
}

/// Exponent applied to `k_{mu-1}` when forming `k_mu` from `k~_mu`.
///
/// For `m > 1` this is `(m - mu) / (m - mu + 1)`. For `m = 1` the normalization
/// `k~_1 = k_1 / k_0` is used instead, i.e. an exponent of one.
fn recursion_exponent(m: usize, mu: usize) -> f64 {
    if m == 1 {
        1.0
    } else {
        (m - mu) as f64 / (m - mu + 1) as f64
    }
}

fn check_gains(m: usize, values: &[f64], what: &str) -> Result<()> {
    if m < 1 {
        return Err(Error::Parameter("differentiation order m must be >= 1".into()));
    }
    if values.len() != m + 1 {
        return Err(Error::Parameter(format!(
            "{what} needs m + 1 = {} entries, got {}",
            m + 1,
            values.len()
        )));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter(format!(
            "{what}[{i}] = {v} must be positive and finite"
        )));
    }
    Ok(())
}

fn check_l_tilde(l_tilde: f64) -> Result<()> {
    if !(l_tilde >= 0.0) || !l_tilde.is_finite() {
        return Err(Error::Parameter(format!("L~ must be finite and >= 0, got {l_tilde}")));
    }
    Ok(())
}

/// Builds `k` from normalized gains: `k_0 = k~_0` and
/// `k_mu = k~_mu * k_{mu-1}^((m-mu)/(m-mu+1))` (for `m = 1`, `k_1 = k~_1 k_0`).
pub fn design_gains(m: usize, k_tilde: &[f64], l_tilde: f64) -> Result<GainSchedule> {
    check_gains(m, k_tilde, "k_tilde")?;
    check_l_tilde(l_tilde)?;
    let mut k = Vec::with_capacity(m + 1);
    k.push(k_tilde[0]);
    for mu in 1..=m {
        let prev: f64 = k[mu - 1];
        k.push(k_tilde[mu] * prev.powf(recursion_exponent(m, mu)));
    }
    Ok(GainSchedule {
        m,
        k,
        k_tilde: k_tilde.to_vec(),
        l_tilde,
        from_recursion: true,
    })
}

/// Inverse of the recursion in [`design_gains`].
pub fn back_compute_tilde(m: usize, k: &[f64]) -> Result<Vec<f64>> {
    check_gains(m, k, "k")?;
    let mut kt = Vec::with_capacity(m + 1);
    kt.push(k[0]);
    for mu in 1..=m {
        kt.push(k[mu] / k[mu - 1].powf(recursion_exponent(m, mu)));
    }
    Ok(kt)
}

impl GainSchedule {
    /// Caller-supplied gains; the recursion is skipped and `k~` back-computed.
    pub fn explicit(m: usize, k: &[f64], l_tilde: f64) -> Result<Self> {
        check_l_tilde(l_tilde)?;
        let k_tilde = back_compute_tilde(m, k)?;
        Ok(Self {
            m,
            k: k.to_vec(),
            k_tilde,
            l_tilde,
            from_recursion: false,
        })
    }

    /// Largest relative mismatch between `k` and the recursion applied to `k~`.
    pub fn recursion_residual(&self) -> f64 {
        (1..=self.m)
            .map(|mu| {
                let expected = self.k_tilde[mu] * self.k[mu - 1].powf(recursion_exponent(self.m, mu));
                (self.k[mu] - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
            })
            .fold((self.k[0] - self.k_tilde[0]).abs() / self.k[0], f64::max)
    }

    /// Exponent on `sigma` for order `mu`: `(m - mu) / (m + 1)`.
    pub fn sigma_exponent(&self, mu: usize) -> f64 {
        (self.m - mu) as f64 / (self.m + 1) as f64
    }

    /// Exponent on `L~` for order `mu`: `(mu + 1) / (m + 1)`.
    pub fn l_tilde_exponent(&self, mu: usize) -> f64 {
        (mu + 1) as f64 / (self.m + 1) as f64
    }

    /// Injection gain `k_mu L~^((mu+1)/(m+1))`.
    pub fn injection_gain(&self, mu: usize) -> f64 {
        if mu == self.m {
            self.k[mu] * self.l_tilde
        } else {
            self.k[mu] * self.l_tilde.powf(self.l_tilde_exponent(mu))
        }
    }
}

/// `N x (m + 1)` matrix of per-agent states, `x[i][mu] = x_{i,mu}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBlock {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

/// State layout shared by agent states and error variables.
pub type AgentStateBlock = StateBlock;
pub type ErrorBlock = StateBlock;

impl StateBlock {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            data: vec![0.0; n * (m + 1)],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Shape("state block needs at least one agent".into()));
        }
        let width = rows[0].as_ref().len();
        if width < 2 {
            return Err(Error::Shape("state rows need at least two entries (m >= 1)".into()));
        }
        let mut data = Vec::with_capacity(n * width);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != width {
                return Err(Error::Shape(format!("state row {i} has length {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("state entries must be finite".into()));
        }
        Ok(Self { n, m: width - 1, data })
    }

    /// Every agent holds the same stack.
    pub fn broadcast(n: usize, stack: &[f64]) -> Self {
        let mut data = Vec::with_capacity(n * stack.len());
        for _ in 0..n {
            data.extend_from_slice(stack);
        }
        Self {
            n,
            m: stack.len() - 1,
            data,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, agent: usize, mu: usize) -> f64 {
        self.data[agent * (self.m + 1) + mu]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, mu: usize, v: f64) {
        self.data[agent * (self.m + 1) + mu] = v;
    }

    pub fn agent(&self, agent: usize) -> &[f64] {
        &self.data[agent * (self.m + 1)..(agent + 1) * (self.m + 1)]
    }

    /// Column `mu` across agents.
    pub fn order_column(&self, mu: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, mu)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Agent `i` of the result is agent `perm^-1(i)` of `self`, i.e. agent
    /// `i` moves to slot `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n, self.m);
        for i in 0..self.n {
            for mu in 0..=self.m {
                out.set(perm[i], mu, self.get(i, mu));
            }
        }
        out
    }

    fn check_shape(&self, n: usize, m: usize) -> Result<()> {
        if self.n != n || self.m != m {
            return Err(Error::Shape(format!(
                "state block is {}x{}, expected {}x{}",
                self.n,
                self.m + 1,
                n,
                m + 1
            )));
        }
        Ok(())
    }
}

/// Innovation `sigma_i = sum_{j in N_i} (x_{i,0} - x_{j,0}) + b_i (x_{i,0} - u_i)`.
///
/// `u_meas[i]` is only read for leader-access agents.
pub fn innovation(x0: &[f64], u_meas: &[f64], net: &Network) -> Result<Vec<f64>> {
    let n = net.n_agents();
    if x0.len() != n || u_meas.len() != n {
        return Err(Error::Shape(format!(
            "innovation expects vectors of length {n}, got {} and {}",
            x0.len(),
            u_meas.len()
        )));
    }
    let mut out = vec![0.0; n];
    innovation_into(x0, u_meas, net, &mut out);
    Ok(out)
}

fn innovation_into(x0: &[f64], u_meas: &[f64], net: &Network, out: &mut [f64]) {
    for (i, s) in out.iter_mut().enumerate() {
        let xi = x0[i];
        let mut acc = 0.0;
        for &j in net.neighbors(i) {
            acc += xi - x0[j];
        }
        if net.has_leader_access(i) {
            acc += xi - u_meas[i];
        }
        *s = acc;
    }
}

/// Precomputed per-order constants plus scratch buffers for repeated
/// evaluation of the protocol on one network.
#[derive(Debug, Clone)]
pub struct Protocol<'a> {
    net: &'a Network,
    gains: &'a GainSchedule,
    injection: Vec<f64>,
    exponents: Vec<f64>,
    x0: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Protocol<'a> {
    pub fn new(net: &'a Network, gains: &'a GainSchedule) -> Self {
        let m = gains.m;
        let n = net.n_agents();
        Self {
            net,
            gains,
            injection: (0..=m).map(|mu| gains.injection_gain(mu)).collect(),
            exponents: (0..=m).map(|mu| gains.sigma_exponent(mu)).collect(),
            x0: vec![0.0; n],
            sigma: vec![0.0; n],
        }
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn gains(&self) -> &GainSchedule {
        self.gains
    }

    fn check(&self, x: &StateBlock, u_meas: &[f64]) -> Result<()> {
        x.check_shape(self.net.n_agents(), self.gains.m)?;
        if u_meas.len() != self.net.n_agents() {
            return Err(Error::Shape(format!(
                "{} leader measurements for {} agents",
                u_meas.len(),
                self.net.n_agents()
            )));
        }
        Ok(())
    }

    fn refresh_sigma(&mut self, x: &StateBlock, u_meas: &[f64]) {
        for i in 0..x.n {
            self.x0[i] = x.get(i, 0);
        }
        innovation_into(&self.x0, u_meas, self.net, &mut self.sigma);
    }

    /// Right-hand side of the continuous-time protocol with per-agent
    /// measurements, written into `out`.
    pub fn rhs_into(&mut self, x: &StateBlock, u_meas: &[f64], out: &mut StateBlock) -> Result<()> {
        self.check(x, u_meas)?;
        out.check_shape(x.n, x.m)?;
        self.refresh_sigma(x, u_meas);
        let m = self.gains.m;
        for i in 0..x.n {
            let s = self.sigma[i];
            for mu in 0..m {
                let v = x.get(i, mu + 1) - self.injection[mu] * signed_power_unchecked(s, self.exponents[mu]);
                out.set(i, mu, v);
            }
            out.set(i, m, -self.injection[m] * sign(s));
        }
        Ok(())
    }

    /// One sampled-data update, in place.
    ///
    /// `x_mu[k+1] = sum_{nu=0}^{m-mu} dt^nu/nu! x_{mu+nu}[k] - dt k_mu L~^((mu+1)/(m+1)) |sigma|^((m-mu)/(m+1)) sign(sigma)`,
    /// and `x_m[k+1] = x_m[k] - dt k_m L~ sign(sigma)`.
    pub fn step_in_place(&mut self, x: &mut StateBlock, u_meas: &[f64], dt: f64) -> Result<()> {
        check_dt(dt)?;
        self.check(x, u_meas)?;
        self.refresh_sigma(x, u_meas);
        let m = self.gains.m;
        let taylor = taylor_coefficients(dt, m);
        let width = m + 1;
        for i in 0..x.n {
            let s = self.sigma[i];
            let row = &mut x.data[i * width..(i + 1) * width];
            // Ascending mu only reads orders >= mu, which are still at step k.
            for mu in 0..m {
                let mut acc = row[mu];
                for nu in 1..=(m - mu) {
                    acc += taylor[nu] * row[mu + nu];
                }
                row[mu] = acc - dt * self.injection[mu] * signed_power_unchecked(s, self.exponents[mu]);
            }
            row[m] -= dt * self.injection[m] * sign(s);
        }
        Ok(())
    }

    /// Last computed innovation vector.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Parameter(format!("sampling step must be > 0, got {dt}")));
    }
    Ok(())
}

/// `dt^nu / nu!` for `nu = 0..=m`, with exact integer factorials.
pub fn taylor_coefficients(dt: f64, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut factorial = 1.0f64;
    for nu in 0..=m {
        if nu > 0 {
            factorial *= nu as f64;
        }
        out.push(dt.powi(nu as i32) / factorial);
    }
    out
}

/// Continuous-time protocol with a single, noiseless leader output `u`.
pub fn continuous_rhs(x: &StateBlock, u: f64, net: &Network, g: &GainSchedule) -> Result<StateBlock> {
    let u_meas = vec![u; net.n_agents()];
    continuous_rhs_measured(x, &u_meas, net, g)
}

/// Continuous-time protocol with per-agent measurements `u_i = u + eps_i`.
pub fn continuous_rhs_measured(x: &StateBlock, u_meas: &[f64], net: &Network, g: &GainSchedule) -> Result<StateBlock> {
    let mut out = StateBlock::zeros(x.n, x.m);
    Protocol::new(net, g).rhs_into(x, u_meas, &mut out)?;
    Ok(out)
}

/// One step of the exact sampled-data protocol.
pub fn sampled_step(x: &StateBlock, u_meas: &[f64], dt: f64, net: &Network, g: &GainSchedule) -> Result<StateBlock> {
    let mut next = x.clone();
    Protocol::new(net, g).step_in_place(&mut next, u_meas, dt)?;
    Ok(next)
}

/// `e_mu = x_mu - H^-1 B 1 u^(mu)`.
pub fn error_block(x: &StateBlock, spectra: &NetworkSpectra, stack: &[f64]) -> Result<ErrorBlock> {
    x.check_shape(spectra.n_agents(), stack.len().saturating_sub(1))?;
    let mut e = x.clone();
    for i in 0..x.n {
        for (mu, u) in stack.iter().enumerate() {
            e.set(i, mu, x.get(i, mu) - spectra.h_inv_b_one[i] * u);
        }
    }
    Ok(e)
}

fn h_times_column0(h: &Mat, e: &StateBlock) -> Vec<f64> {
    (0..e.n)
        .map(|i| (0..e.n).map(|j| h[(i, j)] * e.get(j, 0)).sum())
        .collect()
}

/// Error dynamics:
/// `e_mu' = e_{mu+1} - k_mu L~^((mu+1)/(m+1)) |H e_0|^((m-mu)/(m+1)) sign(H e_0)` and
/// `e_m' = -H^-1 B 1 u^(m+1) - k_m L~ sign(H e_0)`.
pub fn error_rhs(e: &ErrorBlock, u_m1: f64, spectra: &NetworkSpectra, g: &GainSchedule) -> Result<ErrorBlock> {
    e.check_shape(spectra.n_agents(), g.m)?;
    let he0 = h_times_column0(&spectra.h, e);
    let m = g.m;
    let mut out = StateBlock::zeros(e.n, m);
    for i in 0..e.n {
        for mu in 0..m {
            out.set(
                i,
                mu,
                e.get(i, mu + 1) - g.injection_gain(mu) * signed_power_unchecked(he0[i], g.sigma_exponent(mu)),
            );
        }
        out.set(
            i,
            m,
            -spectra.h_inv_b_one[i] * u_m1 - g.injection_gain(m) * sign(he0[i]),
        );
    }
    Ok(out)
}

/// Noiseless normalized error field with unit `L~`:
/// `F_mu(z) = z_{mu+1} - k_mu |H z_0|^((m-mu)/(m+1)) sign(H z_0)`, `F_m(z) = -k_m sign(H z_0)`.
///
/// Homogeneous of degree `-1` with weights `r_mu = m + 1 - mu`.
pub fn normalized_field(z: &StateBlock, h: &Mat, k: &[f64]) -> Result<StateBlock> {
    let m = z.m;
    if k.len() != m + 1 || h.rows() != z.n || h.cols() != z.n {
        return Err(Error::Shape("normalized field dimensions".into()));
    }
    let hz0 = h_times_column0(h, z);
    let mut out = StateBlock::zeros(z.n, m);
    let denom = (m + 1) as f64;
    for i in 0..z.n {
        for mu in 0..m {
            let alpha = (m - mu) as f64 / denom;
            out.set(i, mu, z.get(i, mu + 1) - k[mu] * signed_power_unchecked(hz0[i], alpha));
        }
        out.set(i, m, -k[m] * sign(hz0[i]));
    }
    Ok(out)
}

/// Weighted dilation `z_mu -> lambda^(m + 1 - mu) z_mu`.
pub fn dilate(z: &StateBlock, lambda: f64) -> StateBlock {
    let mut out = z.clone();
    for i in 0..z.n {
        for mu in 0..=z.m {
            out.set(i, mu, z.get(i, mu) * lambda.powi((z.m + 1 - mu) as i32));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle_graph, path_graph, spectra, LTildeMode};

    #[test]
    fn design_m1_uses_ratio_normalization() {
        let g = design_gains(1, &[2.0, 0.55], 2.5).unwrap();
        assert_eq!(g.k[0], 2.0);
        assert!((g.k[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn design_m3_recursion() {
        let g = design_gains(3, &[50.0, 1.1, 1.5, 2.0], 0.625).unwrap();
        assert_eq!(g.k[0], 50.0);
        assert!((g.k[1] - 1.1 * 50f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert!((g.k[1] - 14.93).abs() < 5e-3);
        // Recursion from k_1, not k_0.
        assert!((g.k[2] - 1.5 * g.k[1].sqrt()).abs() < 1e-12);
        assert!((g.k[2] - 5.80).abs() < 5e-3);
        assert_eq!(g.k[3], 2.0);
        assert!(g.recursion_residual() < 1e-12);
    }

    #[test]
    fn explicit_gains_back_compute() {
        let g = GainSchedule::explicit(3, &[50.0, 14.92, 10.6, 2.0], 0.625).unwrap();
        assert_eq!(g.k, vec![50.0, 14.92, 10.6, 2.0]);
        assert!(!g.from_recursion);
        let again = design_gains(3, &g.k_tilde, 0.625).unwrap();
        for (a, b) in again.k.iter().zip(&g.k) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn gain_errors() {
        assert!(design_gains(1, &[2.0, 0.0], 1.0).is_err());
        assert!(design_gains(1, &[2.0, -1.0], 1.0).is_err());
        assert!(design_gains(2, &[2.0, 1.0], 1.0).is_err());
        assert!(design_gains(0, &[2.0], 1.0).is_err());
        assert!(design_gains(1, &[2.0, 1.0], -1.0).is_err());
    }

    #[test]
    fn innovation_examples() {
        let net = cycle_graph(5).unwrap().with_leaders([0, 3]).unwrap();
        let sigma = innovation(&[0.7; 5], &[0.7; 5], &net).unwrap();
        assert!(sigma.iter().all(|s| *s == 0.0));

        let p2 = path_graph(2).unwrap().with_leaders([0]).unwrap();
        assert_eq!(innovation(&[1.0, 0.0], &[0.0, 0.0], &p2).unwrap(), vec![2.0, -1.0]);
        assert!(innovation(&[1.0], &[0.0, 0.0], &p2).is_err());
    }

    #[test]
    fn continuous_rhs_scalar_red() {
        let net = crate::graph::Network::new(1, [], [0]).unwrap();
        let g = GainSchedule::explicit(1, &[2.0, 1.1], 1.0).unwrap();
        let x = StateBlock::from_rows(&[[1.0, 0.0]]).unwrap();
        let dx = continuous_rhs(&x, 0.0, &net, &g).unwrap();
        assert_eq!(dx.get(0, 0), -2.0);
        assert!((dx.get(0, 1) + 1.1).abs() < 1e-15);
    }

    #[test]
    fn continuous_rhs_at_consensus_is_integrator_chain() {
        let net = cycle_graph(6).unwrap().with_leaders([1]).unwrap();
        let g = design_gains(2, &[3.0, 1.5, 2.0], 1.0).unwrap();
        let stack = [0.4, -1.0, 2.0];
        let x = StateBlock::broadcast(6, &stack);
        let dx = continuous_rhs(&x, stack[0], &net, &g).unwrap();
        for i in 0..6 {
            assert_eq!(dx.agent(i), &[-1.0, 2.0, 0.0]);
        }
    }

    #[test]
    fn exponents_for_m3() {
        let g = design_gains(3, &[50.0, 1.1, 1.5, 2.0], 0.625).unwrap();
        let l: Vec<f64> = (0..4).map(|mu| g.l_tilde_exponent(mu)).collect();
        let s: Vec<f64> = (0..4).map(|mu| g.sigma_exponent(mu)).collect();
        assert_eq!(l, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s, vec![0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn sampled_step_m1_is_forward_euler() {
        let net = cycle_graph(4).unwrap().with_leaders([0]).unwrap();
        let g = GainSchedule::explicit(1, &[2.0, 1.1], 2.5).unwrap();
        let x = StateBlock::from_rows(&[[1.0, 0.5], [-2.0, 0.0], [0.3, 1.0], [4.0, -1.0]]).unwrap();
        let u = vec![0.2; 4];
        let dt = 1e-3;
        let next = sampled_step(&x, &u, dt, &net, &g).unwrap();
        let dx = continuous_rhs_measured(&x, &u, &net, &g).unwrap();
        for i in 0..4 {
            for mu in 0..2 {
                let euler = x.get(i, mu) + dt * dx.get(i, mu);
                assert!((next.get(i, mu) - euler).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sampled_step_m3_taylor_terms() {
        // Single agent sitting on its leader: sigma = 0, so only the Taylor
        // prediction acts.
        let net = crate::graph::Network::new(1, [], [0]).unwrap();
        let g = GainSchedule::explicit(3, &[50.0, 14.92, 10.6, 2.0], 0.625).unwrap();
        let x = StateBlock::from_rows(&[[0.0, 1.0, 2.0, 3.0]]).unwrap();
        let dt = 0.1;
        let next = sampled_step(&x, &[0.0], dt, &net, &g).unwrap();
        let expected0 = 0.0 + dt * 1.0 + dt * dt / 2.0 * 2.0 + dt.powi(3) / 6.0 * 3.0;
        assert!((next.get(0, 0) - expected0).abs() < 1e-15);
        assert!((next.get(0, 1) - (1.0 + dt * 2.0 + dt * dt / 2.0 * 3.0)).abs() < 1e-15);
        assert!((next.get(0, 2) - (2.0 + dt * 3.0)).abs() < 1e-15);
        assert_eq!(next.get(0, 3), 3.0);
        assert!(sampled_step(&x, &[0.0], 0.0, &net, &g).is_err());
    }

    #[test]
    fn sampled_step_exact_on_polynomial_leader() {
        // Dyadic step and integer coefficients keep every operation exact.
        let net = cycle_graph(5).unwrap().with_leaders([2]).unwrap();
        let g = design_gains(2, &[4.0, 1.5, 2.0], 3.0).unwrap();
        let coeffs = [1.0, -2.0, 3.0];
        let stack = |t: f64| {
            [
                coeffs[0] + coeffs[1] * t + coeffs[2] * t * t,
                coeffs[1] + 2.0 * coeffs[2] * t,
                2.0 * coeffs[2],
            ]
        };
        let dt = 1.0 / 1024.0;
        let x = StateBlock::broadcast(5, &stack(0.0));
        let next = sampled_step(&x, &[stack(0.0)[0]; 5], dt, &net, &g).unwrap();
        let expected = stack(dt);
        for i in 0..5 {
            assert_eq!(next.agent(i), &expected);
        }
    }

    #[test]
    fn error_rhs_equilibrium_and_consistency() {
        let net = cycle_graph(6).unwrap().with_leaders([0, 3]).unwrap();
        let sp = spectra(&net, 0.3, LTildeMode::Singular).unwrap();
        let g = design_gains(2, &[5.0, 1.5, 2.0], sp.l_tilde).unwrap();
        let e0 = StateBlock::zeros(6, 2);
        assert!(error_rhs(&e0, 0.0, &sp, &g).unwrap().max_abs() == 0.0);

        // e' = x' - H^-1 B 1 u^(mu+1).
        let x = StateBlock::from_rows(&[
            [0.1, 0.2, -0.3],
            [1.0, -1.0, 0.5],
            [-0.4, 0.0, 0.9],
            [2.0, 0.3, 0.1],
            [0.0, 0.0, 0.0],
            [-1.5, 0.7, -0.2],
        ])
        .unwrap();
        let u_stack = [0.25, -0.5, 0.75, 0.1];
        let dx = continuous_rhs(&x, u_stack[0], &net, &g).unwrap();
        let e = error_block(&x, &sp, &u_stack[..3]).unwrap();
        let de = error_rhs(&e, u_stack[3], &sp, &g).unwrap();
        for i in 0..6 {
            for mu in 0..=2 {
                let shifted = dx.get(i, mu) - sp.h_inv_b_one[i] * u_stack[mu + 1];
                assert!((de.get(i, mu) - shifted).abs() < 1e-12, "agent {i} order {mu}");
            }
        }
    }

    #[test]
    fn taylor_coefficients_are_exact_factorials() {
        let c = taylor_coefficients(0.5, 4);
        assert_eq!(c, vec![1.0, 0.5, 0.125, 0.125 / 6.0, 0.0625 / 24.0]);
    }
}
