//! Scenario execution, trajectory logs, accuracy metrics and scaling fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::protocol::{GainSchedule, Protocol, StateBlock};
use crate::signals::{LeaderSignal, NoiseSource};

/// States with magnitude above this abort the run.
pub const BLOW_UP_LIMIT: f64 = 1e12;
pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;
pub const DEFAULT_SUBSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    /// Every entry drawn uniformly from `[lo, hi)` with a seeded ChaCha8 stream,
    /// agent-major.
    Uniform {
        lo: f64,
        hi: f64,
        seed: u64,
    },
    Explicit(StateBlock),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Mode {
    Sampled,
    /// Forward Euler on the continuous protocol with `substeps` steps per
    /// sampling interval. The leader is evaluated at every substep; noise is
    /// held over each sampling interval.
    Continuous {
        substeps: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Record {
    /// Keep agent states for every sample.
    #[default]
    Full,
    /// Keep only times, references and errors.
    ErrorsOnly,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub network: Network,
    pub signal: LeaderSignal,
    pub gains: GainSchedule,
    pub m: usize,
    pub dt: f64,
    pub t_final: f64,
    pub noise: NoiseSource,
    pub init: InitialStates,
    pub mode: Mode,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.network.ensure_valid()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_final > self.dt) || !self.t_final.is_finite() {
            return Err(Error::Parameter(format!(
                "t_final = {} must exceed dt = {}",
                self.t_final, self.dt
            )));
        }
        if self.gains.m != self.m || self.signal.order() != self.m {
            return Err(Error::Parameter(format!(
                "order mismatch: scenario m = {}, gains m = {}, signal m = {}",
                self.m,
                self.gains.m,
                self.signal.order()
            )));
        }
        if let Mode::Continuous { substeps } = self.mode {
            if substeps == 0 {
                return Err(Error::Parameter("substeps must be >= 1".into()));
            }
        }
        match &self.init {
            InitialStates::Uniform { lo, hi, .. } => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Parameter(format!("bad init range [{lo}, {hi}]")));
                }
            }
            InitialStates::Explicit(x) => {
                if x.n_agents() != self.network.n_agents() || x.order() != self.m {
                    return Err(Error::Shape(format!(
                        "initial states are {}x{}, expected {}x{}",
                        x.n_agents(),
                        x.order() + 1,
                        self.network.n_agents(),
                        self.m + 1
                    )));
                }
                if !x.is_finite() {
                    return Err(Error::Parameter("initial states must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Number of sampling steps, `floor(t_final / dt)`.
    pub fn steps(&self) -> usize {
        // The small slack keeps e.g. 60 / 1e-3 from rounding down to 59999.
        (self.t_final / self.dt * (1.0 + 1e-12)).floor() as usize
    }

    pub fn initial_states(&self) -> StateBlock {
        let n = self.network.n_agents();
        match &self.init {
            InitialStates::Explicit(x) => x.clone(),
            InitialStates::Uniform { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut x = StateBlock::zeros(n, self.m);
                for i in 0..n {
                    for mu in 0..=self.m {
                        x.set(i, mu, lo + (hi - lo) * rng.gen::<f64>());
                    }
                }
                x
            }
        }
    }

    fn metadata(&self) -> RunMetadata {
        let (init_kind, init_seed) = match &self.init {
            InitialStates::Uniform { seed, .. } => ("uniform".to_string(), Some(*seed)),
            InitialStates::Explicit(_) => ("explicit".to_string(), None),
        };
        RunMetadata {
            n_agents: self.network.n_agents(),
            m: self.m,
            dt: self.dt,
            t_final: self.t_final,
            steps: self.steps(),
            mode: self.mode,
            eps_bar: self.noise.eps_bar,
            noise_seed: self.noise.seed,
            init: init_kind,
            init_seed,
            l_tilde: self.gains.l_tilde,
            k: self.gains.k.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub n_agents: usize,
    pub m: usize,
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
    pub mode: Mode,
    pub eps_bar: f64,
    pub noise_seed: u64,
    pub init: String,
    pub init_seed: Option<u64>,
    pub l_tilde: f64,
    pub k: Vec<f64>,
    pub version: String,
}

/// Samples at `t_k = k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    m: usize,
    times: Vec<f64>,
    states: Vec<StateBlock>,
    refs: Vec<f64>,
    errors: Vec<f64>,
    pub metadata: RunMetadata,
}

impl TrajectoryLog {
    fn with_capacity(m: usize, samples: usize, record: Record, metadata: RunMetadata) -> Self {
        let width = m + 1;
        Self {
            m,
            times: Vec::with_capacity(samples),
            states: Vec::with_capacity(if record == Record::Full { samples } else { 0 }),
            refs: Vec::with_capacity(samples * width),
            errors: Vec::with_capacity(samples * width),
            metadata,
        }
    }

    fn push(&mut self, t: f64, x: &StateBlock, refs: &[f64], record: Record) {
        self.times.push(t);
        for (mu, r) in refs.iter().enumerate() {
            let mut worst = 0.0f64;
            for i in 0..x.n_agents() {
                worst = worst.max((x.get(i, mu) - r).abs());
            }
            self.errors.push(worst);
        }
        self.refs.extend_from_slice(refs);
        if record == Record::Full {
            self.states.push(x.clone());
        }
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Agent states at sample `k`; `None` when the run kept errors only.
    pub fn state(&self, k: usize) -> Option<&StateBlock> {
        self.states.get(k)
    }

    pub fn has_states(&self) -> bool {
        !self.states.is_empty()
    }

    /// `[u(t_k), ..., u^(m)(t_k)]`.
    pub fn refs(&self, k: usize) -> &[f64] {
        let w = self.m + 1;
        &self.refs[k * w..(k + 1) * w]
    }

    /// `max_i |x_{i,mu}(t_k) - u^(mu)(t_k)|` for each `mu`.
    pub fn errors(&self, k: usize) -> &[f64] {
        let w = self.m + 1;
        &self.errors[k * w..(k + 1) * w]
    }

    pub fn error_series(&self, mu: usize) -> Vec<f64> {
        self.errors.iter().skip(mu).step_by(self.m + 1).copied().collect()
    }

    /// Builds a log from precomputed series; used for synthetic fixtures.
    pub fn from_errors(times: Vec<f64>, errors: Vec<Vec<f64>>, metadata: RunMetadata) -> Result<Self> {
        let m = metadata.m;
        if errors.len() != times.len() || errors.iter().any(|e| e.len() != m + 1) {
            return Err(Error::Shape(
                "error rows must match times and have m + 1 entries".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("times must be strictly increasing".into()));
        }
        Ok(Self {
            m,
            refs: vec![0.0; times.len() * (m + 1)],
            errors: errors.into_iter().flatten().collect(),
            times,
            states: Vec::new(),
            metadata,
        })
    }
}

fn check_blow_up(x: &StateBlock, step: usize, time: f64) -> Result<()> {
    for i in 0..x.n_agents() {
        for mu in 0..=x.order() {
            let v = x.get(i, mu);
            if !(v.abs() <= BLOW_UP_LIMIT) {
                return Err(Error::BlowUp {
                    step,
                    time,
                    agent: i,
                    order: mu,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

pub fn run(sc: &Scenario) -> Result<TrajectoryLog> {
    run_with(sc, Record::Full)
}

/// Runs the scenario for `floor(t_final / dt)` sampling steps.
///
/// Noise for agent `i` at step `k` is the `k`-th draw of the agent's stream,
/// so results do not depend on how many agents have leader access.
pub fn run_with(sc: &Scenario, record: Record) -> Result<TrajectoryLog> {
    sc.validate()?;
    let n = sc.network.n_agents();
    let m = sc.m;
    let steps = sc.steps();
    let mut log = TrajectoryLog::with_capacity(m, steps + 1, record, sc.metadata());
    let mut protocol = Protocol::new(&sc.network, &sc.gains);
    let mut x = sc.initial_states();
    let mut streams: Vec<_> = (0..n).map(|i| sc.noise.stream(i)).collect();
    let leader: Vec<bool> = sc.network.leader_access().to_vec();
    let mut eps = vec![0.0; n];
    let mut u_meas = vec![0.0; n];
    let mut rhs = StateBlock::zeros(n, m);

    log.push(0.0, &x, &sc.signal.derivative_stack(0.0), record);
    for k in 0..steps {
        let t = k as f64 * sc.dt;
        for i in 0..n {
            // Every agent's stream advances once per step, used or not.
            let e = streams[i].next_sample();
            eps[i] = if leader[i] { e } else { 0.0 };
        }
        match sc.mode {
            Mode::Sampled => {
                let u = sc.signal.derivative_unchecked(0, t);
                for i in 0..n {
                    u_meas[i] = u + eps[i];
                }
                protocol.step_in_place(&mut x, &u_meas, sc.dt)?;
            }
            Mode::Continuous { substeps } => {
                let h = sc.dt / substeps as f64;
                for j in 0..substeps {
                    let u = sc.signal.derivative_unchecked(0, t + j as f64 * h);
                    for i in 0..n {
                        u_meas[i] = u + eps[i];
                    }
                    protocol.rhs_into(&x, &u_meas, &mut rhs)?;
                    euler_update(&mut x, &rhs, h);
                }
            }
        }
        let t_next = (k + 1) as f64 * sc.dt;
        check_blow_up(&x, k + 1, t_next)?;
        log.push(t_next, &x, &sc.signal.derivative_stack(t_next), record);
    }
    Ok(log)
}

fn euler_update(x: &mut StateBlock, rhs: &StateBlock, h: f64) {
    for i in 0..x.n_agents() {
        for mu in 0..=x.order() {
            x.set(i, mu, x.get(i, mu) + h * rhs.get(i, mu));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steady_state_err: Vec<f64>,
    /// `None` when the error never settles below its threshold.
    pub convergence_time: Vec<Option<f64>>,
    pub thresholds: Vec<f64>,
    pub tail_fraction: f64,
}

/// `10 dt^(m - mu + 1)` for each `mu`.
pub fn default_thresholds(m: usize, dt: f64) -> Vec<f64> {
    (0..=m).map(|mu| 10.0 * dt.powi((m - mu + 1) as i32)).collect()
}

pub fn metrics(log: &TrajectoryLog, tail_fraction: f64, thresholds: &[f64]) -> Result<RunMetrics> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "tail_fraction must lie in (0, 1), got {tail_fraction}"
        )));
    }
    let m = log.order();
    if thresholds.len() != m + 1 {
        return Err(Error::Parameter(format!(
            "{} thresholds for m + 1 = {} orders",
            thresholds.len(),
            m + 1
        )));
    }
    let len = log.len();
    let tail = (tail_fraction * len as f64).floor() as usize;
    if tail == 0 {
        return Err(Error::Parameter("tail window is empty".into()));
    }
    let start = len - tail;
    let mut steady = vec![0.0f64; m + 1];
    let mut conv = vec![None; m + 1];
    for mu in 0..=m {
        for k in start..len {
            steady[mu] = steady[mu].max(log.errors(k)[mu]);
        }
        let last_violation = (0..len).rev().find(|&k| log.errors(k)[mu] > thresholds[mu]);
        conv[mu] = match last_violation {
            None => Some(log.times()[0]),
            Some(k) if k + 1 < len => Some(log.times()[k + 1]),
            Some(_) => None,
        };
    }
    Ok(RunMetrics {
        steady_state_err: steady,
        convergence_time: conv,
        thresholds: thresholds.to_vec(),
        tail_fraction,
    })
}

/// Metrics with the default tail fraction and thresholds.
pub fn default_metrics(log: &TrajectoryLog) -> Result<RunMetrics> {
    metrics(
        log,
        DEFAULT_TAIL_FRACTION,
        &default_thresholds(log.order(), log.metadata.dt),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares slope of `ln(err)` against `ln(scale)`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::Parameter(format!(
            "scaling fit needs >= 3 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|(s, e)| !(*s > 0.0 && *e > 0.0) || !s.is_finite() || !e.is_finite())
    {
        return Err(Error::Parameter(format!(
            "scaling fit needs positive finite values, got {p:?}"
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("scaling fit needs distinct scales".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(ScalingFit {
        exponent: slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Dt,
    EpsBar,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Dt => "dt",
            SweepParam::EpsBar => "eps",
        }
    }

    /// Exponent expected for order `mu`: `m - mu + 1` for the sampling step,
    /// `(m - mu + 1) / (m + 1)` for the noise level.
    pub fn predicted_exponent(self, m: usize, mu: usize) -> f64 {
        let r = (m - mu + 1) as f64;
        match self {
            SweepParam::Dt => r,
            SweepParam::EpsBar => r / (m + 1) as f64,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(SweepParam::Dt),
            "eps" | "eps_bar" => Ok(SweepParam::EpsBar),
            other => Err(Error::Parameter(format!(
                "unknown sweep parameter {other:?} (expected dt or eps)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub mu: usize,
    pub exponent: f64,
    pub r_squared: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Noise seeds whose steady-state errors were averaged per value.
    pub seeds: Vec<u64>,
    /// Mean steady-state error per value, per order.
    pub steady_state_err: Vec<Vec<f64>>,
    pub fits: Vec<OrderFit>,
}

/// Re-runs `base` for each value and fits the steady-state error per order.
pub fn sweep(base: &Scenario, param: SweepParam, values: &[f64]) -> Result<SweepResult> {
    sweep_seeds(base, param, values, &[base.noise.seed])
}

/// As [`sweep`], averaging steady-state errors over several noise seeds.
///
/// Each member run uses a fresh noise stream from the given seed; initial
/// states are left as configured.
pub fn sweep_seeds(base: &Scenario, param: SweepParam, values: &[f64], seeds: &[u64]) -> Result<SweepResult> {
    if values.len() < 3 {
        return Err(Error::Parameter(format!(
            "a sweep needs >= 3 values, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Parameter(format!("sweep values must be positive, got {v}")));
    }
    if seeds.is_empty() {
        return Err(Error::Parameter("at least one seed required".into()));
    }
    let m = base.m;
    let mut table = Vec::with_capacity(values.len());
    for &v in values {
        let mut mean = vec![0.0; m + 1];
        for &seed in seeds {
            let mut sc = base.clone();
            match param {
                SweepParam::Dt => {
                    sc.dt = v;
                    sc.noise = NoiseSource::new(base.noise.eps_bar, seed)?;
                }
                SweepParam::EpsBar => sc.noise = NoiseSource::new(v, seed)?,
            }
            let log = run_with(&sc, Record::ErrorsOnly)?;
            let met = default_metrics(&log)?;
            for (acc, e) in mean.iter_mut().zip(&met.steady_state_err) {
                *acc += e / seeds.len() as f64;
            }
        }
        table.push(mean);
    }
    let mut fits = Vec::with_capacity(m + 1);
    for mu in 0..=m {
        let pts: Vec<(f64, f64)> = values.iter().zip(&table).map(|(v, e)| (*v, e[mu])).collect();
        let fit = scaling_fit(&pts)?;
        fits.push(OrderFit {
            mu,
            exponent: fit.exponent,
            r_squared: fit.r_squared,
            predicted: param.predicted_exponent(m, mu),
        });
    }
    Ok(SweepResult {
        param,
        values: values.to_vec(),
        seeds: seeds.to_vec(),
        steady_state_err: table,
        fits,
    })
}

/// Rounding allowance in units of `EPSILON * sum |terms|`.
const ROUNDING_ALLOWANCE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheck {
    /// Largest `|r_mu| / (L dt^(m-mu+1) / (m-mu+1)!)`; infinite if the bound
    /// is zero while a remainder is not.
    pub max_ratio: f64,
    pub max_abs_remainder: f64,
}

/// Compares `r_mu = u^(mu)(t + dt) - sum_nu dt^nu/nu! u^(mu+nu)(t)` with
/// `L dt^(m-mu+1) / (m-mu+1)!` over `t_grid`.
///
/// The bound is widened by the rounding error of forming `r_mu` in floating
/// point, which dominates once the true remainder falls near `1e-15`.
pub fn taylor_remainder_check(sig: &LeaderSignal, dt: f64, t_grid: &[f64], deriv_bound: f64) -> TaylorCheck {
    let m = sig.order();
    let coeff = crate::protocol::taylor_coefficients(dt, m);
    let mut max_ratio = 0.0f64;
    let mut max_abs = 0.0f64;
    for &t in t_grid {
        let now = sig.derivative_stack(t);
        let next = sig.derivative_stack(t + dt);
        for mu in 0..=m {
            let predicted: f64 = (0..=m - mu).map(|nu| coeff[nu] * now[mu + nu]).sum();
            let magnitude: f64 = next[mu].abs() + (0..=m - mu).map(|nu| (coeff[nu] * now[mu + nu]).abs()).sum::<f64>();
            let r = (next[mu] - predicted).abs();
            let order = m - mu + 1;
            let factorial: f64 = (1..=order).map(|v| v as f64).product();
            let bound = deriv_bound * dt.powi(order as i32) / factorial + ROUNDING_ALLOWANCE * f64::EPSILON * magnitude;
            let ratio = if bound > 0.0 {
                r / bound
            } else if r == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            max_ratio = max_ratio.max(ratio);
            max_abs = max_abs.max(r);
        }
    }
    TaylorCheck {
        max_ratio,
        max_abs_remainder: max_abs,
    }
}
