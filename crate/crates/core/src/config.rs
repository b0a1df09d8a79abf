//! JSON scenario files.
//!
//! Agent labels in files are 1-based; they are converted to 0-based indices
//! here and nowhere else.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, LTildeMode, Network, NetworkSpectra};
use crate::protocol::{design_gains, GainSchedule, StateBlock};
use crate::signals::{CubicTable, LeaderSignal, NoiseSource, SignalKind};
use crate::simulator::{InitialStates, Mode, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub m: usize,
    pub topology: TopologySpec,
    pub leaders: Vec<usize>,
    pub signal: SignalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deriv_bound: Option<f64>,
    pub l_tilde: LTildeSpec,
    pub gains: GainsSpec,
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub init: InitSpec,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Sampled
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Cycle,
    Path,
    Complete,
    Star,
}

/// `{preset, n}` or `{edges, n?}` with 1-based edge endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Sinusoid { amplitude: f64, omega: f64 },
    Polynomial { coeffs: Vec<f64> },
    Table { times: Vec<f64>, values: Vec<f64> },
}

/// `{mode: singular | spectral_radius}` or `{explicit: value}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LTildeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<LTildeModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LTildeModeName {
    Singular,
    SpectralRadius,
}

/// `{tilde}` (gains from the recursion) or `{explicit, tilde?}`. With
/// explicit gains, a declared `tilde` is only compared against the recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilde: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub eps_bar: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { eps_bar: 0.0, seed: 0 }
    }
}

/// `{range: [lo, hi], seed}` or `{matrix}` (one row per agent, `m + 1` columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

/// A scenario file turned into runnable objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: ScenarioFile,
    pub scenario: Scenario,
    pub spectra: NetworkSpectra,
    pub deriv_bound: f64,
    /// `k~` declared next to explicit gains, if any.
    pub declared_tilde: Option<Vec<f64>>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.check_finite()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check_finite(&self) -> Result<()> {
        let mut values = vec![self.dt, self.t_final, self.noise.eps_bar];
        values.extend(self.deriv_bound);
        values.extend(self.l_tilde.explicit);
        values.extend(self.gains.tilde.iter().flatten());
        values.extend(self.gains.explicit.iter().flatten());
        match &self.signal {
            SignalSpec::Sinusoid { amplitude, omega } => values.extend([*amplitude, *omega]),
            SignalSpec::Polynomial { coeffs } => values.extend(coeffs),
            SignalSpec::Table { times, values: v } => {
                values.extend(times);
                values.extend(v);
            }
        }
        values.extend(self.init.range.iter().flatten());
        values.extend(self.init.matrix.iter().flatten().flatten());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("all numeric values must be finite".into()));
        }
        Ok(())
    }

    fn network(&self) -> Result<Network> {
        let t = &self.topology;
        let (n, edges): (usize, Vec<(usize, usize)>) = match (&t.preset, &t.edges) {
            (Some(preset), None) => {
                let n = t.n.ok_or_else(|| Error::Config("topology preset needs n".into()))?;
                let net = match preset {
                    Preset::Cycle => graph::cycle_graph(n),
                    Preset::Path => graph::path_graph(n),
                    Preset::Complete => graph::complete_graph(n),
                    Preset::Star => graph::star_graph(n),
                }
                .map_err(|e| Error::Config(e.to_string()))?;
                (n, net.edges().collect())
            }
            (None, Some(edges)) => {
                let max_label = edges.iter().flatten().copied().max().unwrap_or(0);
                let n = t.n.unwrap_or(max_label);
                let mut out = Vec::with_capacity(edges.len());
                for [a, b] in edges {
                    out.push((to_index(*a, n, "edge endpoint")?, to_index(*b, n, "edge endpoint")?));
                }
                (n, out)
            }
            _ => return Err(Error::Config("topology needs exactly one of preset or edges".into())),
        };
        let leaders = self
            .leaders
            .iter()
            .map(|l| to_index(*l, n, "leader"))
            .collect::<Result<Vec<_>>>()?;
        Network::new(n, edges, leaders).map_err(|e| Error::Config(e.to_string()))
    }

    fn signal(&self) -> Result<LeaderSignal> {
        let kind = match &self.signal {
            SignalSpec::Sinusoid { amplitude, omega } => SignalKind::Sinusoid {
                amplitude: *amplitude,
                omega: *omega,
            },
            SignalSpec::Polynomial { coeffs } => SignalKind::Polynomial { coeffs: coeffs.clone() },
            SignalSpec::Table { times, values } => SignalKind::Table(CubicTable::new(times.clone(), values.clone())?),
        };
        LeaderSignal::new(kind, self.m)
    }

    fn l_tilde_mode(&self) -> Result<LTildeMode> {
        match (&self.l_tilde.mode, self.l_tilde.explicit) {
            (Some(LTildeModeName::Singular), None) => Ok(LTildeMode::Singular),
            (Some(LTildeModeName::SpectralRadius), None) => Ok(LTildeMode::SpectralRadius),
            (None, Some(v)) => Ok(LTildeMode::Explicit(v)),
            _ => Err(Error::Config("l_tilde needs exactly one of mode or explicit".into())),
        }
    }

    fn init(&self) -> Result<InitialStates> {
        match (&self.init.range, &self.init.matrix) {
            (Some([lo, hi]), None) => Ok(InitialStates::Uniform {
                lo: *lo,
                hi: *hi,
                seed: self.init.seed.unwrap_or(0),
            }),
            (None, Some(rows)) => {
                if self.init.seed.is_some() {
                    return Err(Error::Config("init seed applies to range only".into()));
                }
                Ok(InitialStates::Explicit(StateBlock::from_rows(rows)?))
            }
            _ => Err(Error::Config("init needs exactly one of range or matrix".into())),
        }
    }

    /// Builds the network, signal, spectra and gains.
    ///
    /// Network assumption failures come back as [`Error::Validation`]; every
    /// other inconsistency as [`Error::Config`] or [`Error::Parameter`].
    pub fn resolve(&self) -> Result<Resolved> {
        let network = self.network()?;
        network.ensure_valid()?;
        let signal = self.signal()?;
        let deriv_bound = match self.deriv_bound {
            Some(b) if b >= 0.0 => b,
            Some(b) => return Err(Error::Config(format!("deriv_bound must be >= 0, got {b}"))),
            None => signal.deriv_bound(Some(self.t_final))?,
        };
        let spectra = graph::spectra(&network, deriv_bound, self.l_tilde_mode()?)?;
        let l_tilde = spectra.l_tilde;
        let (gains, declared_tilde) = match (&self.gains.tilde, &self.gains.explicit) {
            (Some(tilde), None) => (design_gains(self.m, tilde, l_tilde)?, None),
            (tilde, Some(k)) => (GainSchedule::explicit(self.m, k, l_tilde)?, tilde.clone()),
            (None, None) => {
                return Err(Error::Config("gains need tilde or explicit".into()));
            }
        };
        if let Some(t) = &declared_tilde {
            if t.len() != self.m + 1 {
                return Err(Error::Config(format!(
                    "declared tilde needs m + 1 = {} entries",
                    self.m + 1
                )));
            }
        }
        let noise = NoiseSource::new(self.noise.eps_bar, self.noise.seed)?;
        let scenario = Scenario {
            network,
            signal,
            gains,
            m: self.m,
            dt: self.dt,
            t_final: self.t_final,
            noise,
            init: self.init()?,
            mode: self.mode,
        };
        scenario.validate()?;
        Ok(Resolved {
            file: self.clone(),
            scenario,
            spectra,
            deriv_bound,
            declared_tilde,
        })
    }
}

fn to_index(label: usize, n: usize, what: &str) -> Result<usize> {
    if label == 0 || label > n {
        return Err(Error::Config(format!(
            "{what} {label} outside 1..={n} (labels are 1-based)"
        )));
    }
    Ok(label - 1)
}

/// Parses and resolves a scenario from JSON text.
pub fn resolve_json(text: &str) -> Result<Resolved> {
    ScenarioFile::from_json(text)?.resolve()
}
