//! Communication graphs, their validation, and the spectral quantities the
//! protocol depends on (`H = L + B`, the disturbance scale `L~`).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, Cholesky, Mat};

/// Undirected graph plus the per-agent leader-access flags.
///
/// Agent indices are 0-based. Edges are stored once, as `(min, max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    leader_access: Vec<bool>,
    neighbors: Vec<Vec<usize>>,
}

/// Reasons a network cannot host the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    SelfLoop { agent: usize },
    Disconnected,
    NoLeaderAccess,
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::SelfLoop { .. } => "SelfLoop",
            Violation::Disconnected => "Disconnected",
            Violation::NoLeaderAccess => "NoLeaderAccess",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { agent } => write!(f, "SelfLoop (agent {agent})"),
            other => f.write_str(other.name()),
        }
    }
}

impl Network {
    /// Builds a network from 0-based edges. Indices must be in range;
    /// structural problems (self-loops, disconnection, no leader) are
    /// reported by [`Network::validate`], not here.
    pub fn new(
        n_agents: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        leaders: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::Parameter("network needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_agents || b >= n_agents {
                return Err(Error::Parameter(format!(
                    "edge ({a}, {b}) out of range for {n_agents} agents"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut leader_access = vec![false; n_agents];
        for l in leaders {
            if l >= n_agents {
                return Err(Error::Parameter(format!(
                    "leader-access agent {l} out of range for {n_agents} agents"
                )));
            }
            leader_access[l] = true;
        }
        let mut neighbors = vec![Vec::new(); n_agents];
        for &(a, b) in &set {
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self {
            n_agents,
            edges: set,
            leader_access,
            neighbors,
        })
    }

    pub fn with_leaders(&self, leaders: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(self.n_agents, self.edges.iter().copied(), leaders)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn leader_access(&self) -> &[bool] {
        &self.leader_access
    }

    pub fn has_leader_access(&self, agent: usize) -> bool {
        self.leader_access[agent]
    }

    pub fn leaders(&self) -> Vec<usize> {
        (0..self.n_agents).filter(|&i| self.leader_access[i]).collect()
    }

    /// Returns the first violated requirement, checked in the order
    /// self-loops, connectivity, leader access.
    pub fn validate(&self) -> Result<(), Violation> {
        if let Some(&(a, _)) = self.edges.iter().find(|(a, b)| a == b) {
            return Err(Violation::SelfLoop { agent: a });
        }
        let mut seen = vec![false; self.n_agents];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        if reached != self.n_agents {
            return Err(Violation::Disconnected);
        }
        if !self.leader_access.iter().any(|&b| b) {
            return Err(Violation::NoLeaderAccess);
        }
        Ok(())
    }

    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().map_err(Error::Validation)
    }

    pub fn laplacian(&self) -> Mat {
        let n = self.n_agents;
        let mut l = Mat::zeros(n, n);
        for &(a, b) in &self.edges {
            if a == b {
                continue;
            }
            l[(a, b)] = -1.0;
            l[(b, a)] = -1.0;
        }
        for i in 0..n {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }

    /// `B = diag(b_1, ..., b_N)`.
    pub fn leader_matrix(&self) -> Mat {
        let b: Vec<f64> = self.leader_access.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        Mat::diag(&b)
    }

    /// Relabels agents: agent `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_agents {
            return Err(Error::Shape("permutation length".into()));
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b]));
        let leaders = self.leaders().into_iter().map(|l| perm[l]);
        Self::new(self.n_agents, edges, leaders)
    }
}

/// Cycle `0 - 1 - ... - (n-1) - 0`, no leader access set.
pub fn cycle_graph(n: usize) -> Result<Network> {
    if n < 3 {
        return Err(Error::Parameter(format!("cycle needs n >= 3, got {n}")));
    }
    Network::new(n, (0..n).map(|i| (i, (i + 1) % n)), [])
}

pub fn path_graph(n: usize) -> Result<Network> {
    if n < 1 {
        return Err(Error::Parameter("path needs n >= 1".into()));
    }
    Network::new(n, (1..n).map(|i| (i - 1, i)), [])
}

pub fn complete_graph(n: usize) -> Result<Network> {
    if n < 1 {
        return Err(Error::Parameter("complete graph needs n >= 1".into()));
    }
    let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
    Network::new(n, edges, [])
}

/// Agent 0 is the hub.
pub fn star_graph(n: usize) -> Result<Network> {
    if n < 2 {
        return Err(Error::Parameter("star needs n >= 2".into()));
    }
    Network::new(n, (1..n).map(|i| (0, i)), [])
}

/// Random connected network: a random spanning tree, each remaining pair
/// joined with probability `p_extra`, and `n_leaders` distinct agents given
/// leader access.
pub fn random_connected(n: usize, p_extra: f64, n_leaders: usize, seed: u64) -> Result<Network> {
    if n < 1 || n_leaders < 1 || n_leaders > n {
        return Err(Error::Parameter(format!(
            "random network needs 1 <= n_leaders <= n, got n = {n}, n_leaders = {n_leaders}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = BTreeSet::new();
    for i in 1..n {
        let parent = order[rng.gen_range(0..i)];
        let child = order[i];
        edges.insert((parent.min(child), parent.max(child)));
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.gen::<f64>() < p_extra {
                edges.insert((a, b));
            }
        }
    }
    order.shuffle(&mut rng);
    Network::new(n, edges, order[..n_leaders].iter().copied())
}

/// Laplacian of a network, `diag(A 1) - A`.
pub fn laplacian(net: &Network) -> Mat {
    net.laplacian()
}

/// How `lambda_max(H^-1 B)` is read when forming `L~ = N L lambda_max(H^-1 B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LTildeMode {
    /// Largest singular value of `H^-1 B`.
    #[default]
    Singular,
    /// Largest eigenvalue magnitude of `H^-1 B`, by power iteration.
    SpectralRadius,
    /// Caller-pinned value of `L~`.
    Explicit(f64),
}

#[derive(Debug, Clone)]
pub struct NetworkSpectra {
    pub laplacian: Mat,
    pub b_diag: Mat,
    pub h: Mat,
    pub h_inv: Mat,
    pub h_min_eig: f64,
    pub h_max_eig: f64,
    /// `lambda_max(H^-1) = 1 / lambda_min(H)`.
    pub h_inv_max_eig: f64,
    pub sigma_max_hinvb: f64,
    pub rho_hinvb: f64,
    /// `H^-1 B 1`; equals `1` for a valid network.
    pub h_inv_b_one: Vec<f64>,
    pub deriv_bound: f64,
    pub l_tilde: f64,
    pub l_tilde_mode: LTildeMode,
    h_factor: Cholesky,
}

impl NetworkSpectra {
    pub fn n_agents(&self) -> usize {
        self.h.rows()
    }

    pub fn solve_h(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.h_factor.solve(b)
    }
}

/// Computes `L`, `B`, `H = L + B`, their spectra and `L~`.
pub fn spectra(net: &Network, deriv_bound: f64, mode: LTildeMode) -> Result<NetworkSpectra> {
    net.ensure_valid()?;
    if !(deriv_bound >= 0.0) || !deriv_bound.is_finite() {
        return Err(Error::Parameter(format!(
            "derivative bound must be finite and >= 0, got {deriv_bound}"
        )));
    }
    let n = net.n_agents();
    let laplacian = net.laplacian();
    let b_diag = net.leader_matrix();
    let h = laplacian.add(&b_diag)?;
    let eig = numerics::symmetric_eigen(&h)?;
    let h_factor = Cholesky::new(&h)?;
    let h_inv = h_factor.inverse()?;
    let h_inv_b = h_inv.matmul(&b_diag)?;
    let sigma_max_hinvb = numerics::largest_singular_value(&h_inv_b)?;
    let rho_hinvb = spectral_radius_hinvb(&h_factor, net)?;
    let b_one: Vec<f64> = net.leader_access().iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let h_inv_b_one = h_factor.solve(&b_one)?;

    let l_tilde = match mode {
        LTildeMode::Singular => n as f64 * deriv_bound * sigma_max_hinvb,
        LTildeMode::SpectralRadius => n as f64 * deriv_bound * rho_hinvb,
        LTildeMode::Explicit(v) => {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!(
                    "explicit L~ must be finite and >= 0, got {v}"
                )));
            }
            v
        }
    };

    Ok(NetworkSpectra {
        laplacian,
        b_diag,
        h,
        h_inv,
        h_min_eig: eig.min(),
        h_max_eig: eig.max(),
        h_inv_max_eig: 1.0 / eig.min(),
        sigma_max_hinvb,
        rho_hinvb,
        h_inv_b_one,
        deriv_bound,
        l_tilde,
        l_tilde_mode: mode,
        h_factor,
    })
}

/// Power iteration on `H^-1 B`, applied through the Cholesky factor.
fn spectral_radius_hinvb(h: &Cholesky, net: &Network) -> Result<f64> {
    let n = net.n_agents();
    let b = net.leader_access();
    // Deterministic start that is not aligned with the all-ones eigenvector.
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt()).collect();
    numerics::normalize(&mut x);
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let bx: Vec<f64> = x.iter().zip(b).map(|(v, &f)| if f { *v } else { 0.0 }).collect();
        let mut y = h.solve(&bx)?;
        let growth = numerics::norm(&y);
        if growth == 0.0 {
            return Ok(0.0);
        }
        y.iter_mut().for_each(|v| *v /= growth);
        let converged = (growth - estimate).abs() <= 1e-14 * growth;
        estimate = growth;
        x = y;
        if converged {
            break;
        }
    }
    Ok(estimate)
}

/// `||H^-1 B 1 - 1||_inf`, recomputed through a fresh SPD solve.
pub fn check_prop1(spectra: &NetworkSpectra) -> Result<f64> {
    let b_one: Vec<f64> = (0..spectra.n_agents()).map(|i| spectra.b_diag[(i, i)]).collect();
    let v = numerics::spd_solve(&spectra.h, &b_one)?;
    Ok(v.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2_leader0() -> Network {
        path_graph(2).unwrap().with_leaders([0]).unwrap()
    }

    #[test]
    fn cycle_examples() {
        let c = cycle_graph(4).unwrap();
        let edges: Vec<_> = c.edges().collect();
        assert_eq!(edges, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        let c = cycle_graph(10).unwrap();
        assert!((0..10).all(|i| c.degree(i) == 2));
        let tri = cycle_graph(3).unwrap().with_leaders([0]).unwrap();
        assert_eq!(tri.validate(), Ok(()));
        assert!(cycle_graph(2).is_err());
    }

    #[test]
    fn validation_examples() {
        let net = cycle_graph(10).unwrap().with_leaders([0, 2, 4]).unwrap();
        assert_eq!(net.validate(), Ok(()));
        let split = Network::new(4, [(0, 1), (2, 3)], [0]).unwrap();
        assert_eq!(split.validate(), Err(Violation::Disconnected));
        let no_leader = cycle_graph(5).unwrap();
        assert_eq!(no_leader.validate(), Err(Violation::NoLeaderAccess));
        let looped = Network::new(3, [(0, 1), (1, 2), (1, 1)], [0]).unwrap();
        assert_eq!(looped.validate(), Err(Violation::SelfLoop { agent: 1 }));
        assert!(Network::new(3, [(0, 3)], [0]).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let l = path_graph(2).unwrap().laplacian();
        assert_eq!(l, Mat::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]).unwrap());
        let l = cycle_graph(4).unwrap().laplacian();
        assert_eq!(l.row(0), &[2.0, -1.0, 0.0, -1.0]);
        for i in 0..4 {
            assert_eq!(l.row(i).iter().sum::<f64>(), 0.0);
        }
    }

    #[test]
    fn spectra_path2_singular() {
        let s = spectra(&path2_leader0(), 1.0, LTildeMode::Singular).unwrap();
        assert_eq!(s.h, Mat::from_rows(&[[2.0, -1.0], [-1.0, 1.0]]).unwrap());
        let hinvb = s.h_inv.matmul(&s.b_diag).unwrap();
        let expected = [1.0, 0.0, 1.0, 0.0];
        for (a, b) in hinvb.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((s.sigma_max_hinvb - 2f64.sqrt()).abs() < 1e-12);
        assert!((s.l_tilde - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spectra_path2_spectral_radius() {
        let s = spectra(&path2_leader0(), 1.0, LTildeMode::SpectralRadius).unwrap();
        assert!((s.rho_hinvb - 1.0).abs() < 1e-12);
        assert!((s.l_tilde - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spectra_cycle10_explicit() {
        let net = cycle_graph(10).unwrap().with_leaders([0, 2, 4]).unwrap();
        let s = spectra(&net, 0.25, LTildeMode::Explicit(2.5)).unwrap();
        assert_eq!(s.l_tilde, 2.5);
        assert!(s.h_min_eig > 0.0);
        // The all-ones vector is an eigenvector of H^-1 B with eigenvalue 1.
        let s = spectra(&net, 0.25, LTildeMode::SpectralRadius).unwrap();
        assert!((s.l_tilde - 2.5).abs() < 1e-9);
    }

    #[test]
    fn spectra_rejects_invalid() {
        let net = cycle_graph(5).unwrap();
        assert!(matches!(
            spectra(&net, 1.0, LTildeMode::Singular),
            Err(Error::Validation(Violation::NoLeaderAccess))
        ));
    }

    #[test]
    fn hinvb_is_ones_on_examples() {
        let s = spectra(&path2_leader0(), 1.0, LTildeMode::Singular).unwrap();
        assert!(check_prop1(&s).unwrap() <= 1e-12);
        let net = cycle_graph(10).unwrap().with_leaders([0, 2, 4]).unwrap();
        let s = spectra(&net, 1.0, LTildeMode::Singular).unwrap();
        assert!(check_prop1(&s).unwrap() <= 1e-9);
        let k5 = complete_graph(5).unwrap().with_leaders([3]).unwrap();
        let s = spectra(&k5, 1.0, LTildeMode::Singular).unwrap();
        assert!(check_prop1(&s).unwrap() <= 1e-9);
    }
}
