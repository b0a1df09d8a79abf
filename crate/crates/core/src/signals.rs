//! Leader signals with analytic derivatives, and bounded measurement noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    /// `A sin(omega t)`.
    Sinusoid { amplitude: f64, omega: f64 },
    /// `c_0 + c_1 t + ... + c_d t^d`.
    Polynomial { coeffs: Vec<f64> },
    /// Natural cubic spline through tabulated samples. Derivatives above
    /// order three vanish, so this kind carries no exactness guarantees.
    Table(CubicTable),
}

/// Leader output `u(t)` together with the differentiation order `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSignal {
    kind: SignalKind,
    m: usize,
}

impl LeaderSignal {
    pub fn new(kind: SignalKind, m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::Parameter("differentiation order m must be >= 1".into()));
        }
        match &kind {
            SignalKind::Sinusoid { amplitude, omega } => {
                if !amplitude.is_finite() || !omega.is_finite() {
                    return Err(Error::Parameter("sinusoid parameters must be finite".into()));
                }
            }
            SignalKind::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parameter("polynomial coefficients must be finite".into()));
                }
            }
            SignalKind::Table(_) => {}
        }
        Ok(Self { kind, m })
    }

    pub fn sinusoid(amplitude: f64, omega: f64, m: usize) -> Result<Self> {
        Self::new(SignalKind::Sinusoid { amplitude, omega }, m)
    }

    pub fn polynomial(coeffs: Vec<f64>, m: usize) -> Result<Self> {
        Self::new(SignalKind::Polynomial { coeffs }, m)
    }

    pub fn kind(&self) -> &SignalKind {
        &self.kind
    }

    pub fn order(&self) -> usize {
        self.m
    }

    /// `u^(mu)(t)` for `0 <= mu <= m + 1`.
    pub fn derivative(&self, mu: usize, t: f64) -> Result<f64> {
        if mu > self.m + 1 {
            return Err(Error::Parameter(format!(
                "derivative order {mu} exceeds m + 1 = {}",
                self.m + 1
            )));
        }
        Ok(self.derivative_unchecked(mu, t))
    }

    pub(crate) fn derivative_unchecked(&self, mu: usize, t: f64) -> f64 {
        match &self.kind {
            SignalKind::Sinusoid { amplitude, omega } => {
                // sin(x + mu pi/2) cycles through sin, cos, -sin, -cos; using
                // the cycle avoids the rounding of a large phase shift.
                let x = omega * t;
                let base = match mu % 4 {
                    0 => x.sin(),
                    1 => x.cos(),
                    2 => -x.sin(),
                    _ => -x.cos(),
                };
                amplitude * omega.powi(mu as i32) * base
            }
            SignalKind::Polynomial { coeffs } => poly_derivative(coeffs, mu, t),
            SignalKind::Table(table) => table.derivative(mu, t),
        }
    }

    /// Stack `[u(t), u'(t), ..., u^(m)(t)]`.
    pub fn derivative_stack(&self, t: f64) -> Vec<f64> {
        (0..=self.m).map(|mu| self.derivative_unchecked(mu, t)).collect()
    }

    /// Upper bound `L` on `|u^(m+1)(t)|`.
    ///
    /// Polynomials of degree above `m` (and tables) are only bounded over a
    /// finite horizon `[0, horizon]`; without one they are rejected.
    pub fn deriv_bound(&self, horizon: Option<f64>) -> Result<f64> {
        let order = self.m + 1;
        match &self.kind {
            SignalKind::Sinusoid { amplitude, omega } => Ok(amplitude.abs() * omega.abs().powi(order as i32)),
            SignalKind::Polynomial { coeffs } => {
                let q = poly_derivative_coeffs(coeffs, order);
                if q.iter().all(|c| *c == 0.0) {
                    return Ok(0.0);
                }
                if q.len() == 1 {
                    return Ok(q[0].abs());
                }
                let horizon = finite_horizon(horizon)?;
                Ok(poly_sup_abs(&q, horizon))
            }
            SignalKind::Table(table) => table.derivative_bound(order),
        }
    }
}

fn finite_horizon(horizon: Option<f64>) -> Result<f64> {
    match horizon {
        Some(h) if h.is_finite() && h >= 0.0 => Ok(h),
        _ => Err(Error::Parameter(
            "derivative of order m+1 is unbounded without a finite time horizon".into(),
        )),
    }
}

fn poly_derivative_coeffs(coeffs: &[f64], mu: usize) -> Vec<f64> {
    if mu >= coeffs.len() {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(mu)
        .map(|(j, c)| {
            let falling: f64 = ((j - mu + 1)..=j).map(|v| v as f64).product();
            c * falling
        })
        .collect()
}

fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn poly_derivative(coeffs: &[f64], mu: usize, t: f64) -> f64 {
    poly_eval(&poly_derivative_coeffs(coeffs, mu), t)
}

/// Upper bound on `sup_{t in [0, T]} |q(t)|`: the maximum over a uniform grid
/// plus half a grid step times a bound on `|q'|`.
fn poly_sup_abs(q: &[f64], horizon: f64) -> f64 {
    const GRID: usize = 100_000;
    let step = horizon / GRID as f64;
    let grid_max = (0..=GRID)
        .map(|i| poly_eval(q, i as f64 * step).abs())
        .fold(0.0, f64::max);
    let dq = poly_derivative_coeffs(q, 1);
    let slope_bound: f64 = dq
        .iter()
        .enumerate()
        .map(|(j, c)| c.abs() * horizon.powi(j as i32))
        .sum();
    grid_max + 0.5 * step * slope_bound
}

/// Natural cubic spline over strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicTable {
    times: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicTable {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Parameter(
                "table needs at least two (time, value) pairs of equal length".into(),
            ));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("table entries must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("table times must be strictly increasing".into()));
        }
        let second = natural_spline_second_derivatives(&times, &values);
        Ok(Self { times, values, second })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.times.len();
        match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        }
    }

    /// Local cubic coefficients of segment `i` in powers of `(t - t_i)`.
    fn segment_coeffs(&self, i: usize) -> [f64; 4] {
        let h = self.times[i + 1] - self.times[i];
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let b = (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0;
        [y0, b, m0 / 2.0, (m1 - m0) / (6.0 * h)]
    }

    pub fn derivative(&self, mu: usize, t: f64) -> f64 {
        let i = self.segment(t);
        let c = self.segment_coeffs(i);
        poly_derivative(&c, mu, t - self.times[i])
    }

    fn derivative_bound(&self, order: usize) -> Result<f64> {
        // Per segment the order-`order` derivative is a polynomial of degree
        // at most 3 - order; for order >= 2 it is linear or constant, so the
        // extremes sit at the knots.
        if order < 2 {
            return Err(Error::Parameter("table bound requires derivative order >= 2".into()));
        }
        let mut bound = 0.0f64;
        for i in 0..self.times.len() - 1 {
            let c = self.segment_coeffs(i);
            let h = self.times[i + 1] - self.times[i];
            bound = bound
                .max(poly_derivative(&c, order, 0.0).abs())
                .max(poly_derivative(&c, order, h).abs());
        }
        Ok(bound)
    }
}

fn natural_spline_second_derivatives(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior knots.
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        let h0 = t[i] - t[i - 1];
        let h1 = t[i + 1] - t[i];
        diag[j] = 2.0 * (h0 + h1);
        upper[j] = h1;
        rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for j in 1..k {
        let lower = t[j + 1] - t[j];
        let w = lower / diag[j - 1];
        diag[j] -= w * upper[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    let mut x = vec![0.0; k];
    x[k - 1] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        x[j] = (rhs[j] - upper[j] * x[j + 1]) / diag[j];
    }
    m[1..=k].copy_from_slice(&x);
    m
}

/// Uniform bounded measurement noise, `eps_bar * [-1, 1)`.
///
/// Samples are a pure function of `(seed, agent, k)`: ChaCha8 keyed by
/// `seed`, stream `agent`, 64-bit word `k`, mapped to `[0, 1)` with the
/// usual 53-bit conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub eps_bar: f64,
    pub seed: u64,
}

impl NoiseSource {
    pub fn new(eps_bar: f64, seed: u64) -> Result<Self> {
        if !(eps_bar >= 0.0) || !eps_bar.is_finite() {
            return Err(Error::Parameter(format!(
                "noise bound must be finite and >= 0, got {eps_bar}"
            )));
        }
        Ok(Self { eps_bar, seed })
    }

    pub fn silent() -> Self {
        Self { eps_bar: 0.0, seed: 0 }
    }

    pub fn sample(&self, agent: usize, k: u64) -> f64 {
        if self.eps_bar == 0.0 {
            return 0.0;
        }
        let mut rng = self.rng(agent);
        rng.set_word_pos(2 * k as u128);
        self.map(rng.gen::<f64>())
    }

    /// Sequential samples `k = 0, 1, 2, ...` for one agent; identical to
    /// repeated [`NoiseSource::sample`] calls.
    pub fn stream(&self, agent: usize) -> NoiseStream {
        NoiseStream {
            source: *self,
            rng: self.rng(agent),
        }
    }

    fn rng(&self, agent: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(agent as u64);
        rng
    }

    fn map(&self, unit: f64) -> f64 {
        self.eps_bar * (2.0 * unit - 1.0)
    }
}

pub struct NoiseStream {
    source: NoiseSource,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn next_sample(&mut self) -> f64 {
        if self.source.eps_bar == 0.0 {
            return 0.0;
        }
        let u = self.rng.gen::<f64>();
        self.source.map(u)
    }
}
