//! DC power-flow sensitivities: susceptance matrices, PTDF, controllability
//! vectors, series-reactance sensitivity and line outage distribution factors.
//!
//! Every matrix is indexed by position in `Network::lines` (rows) and
//! `Network::buses` (columns). Out-of-service lines keep their row, which is
//! identically zero, so line indexing is stable across outages.
//!
//! The inverse of the bus susceptance matrix is always the "slack-reduced"
//! inverse: delete the slack row and column, invert, and put a zero row and
//! column back. Consequently the slack column of the PTDF is exactly zero.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{BusId, LineId, Network};

/// Injections must sum to zero within this many per-unit.
pub const BALANCE_TOL: f64 = 1e-9;

/// Denominators of LODF columns below this are treated as islanding outages.
const ISLANDING_TOL: f64 = 1e-9;

/// Unordered-by-meaning but oriented node pair `(m, n)`: an HVDC link injecting
/// at `m` and withdrawing at `n` for positive setpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodePair {
    pub m: BusId,
    pub n: BusId,
}

impl NodePair {
    pub fn new(m: BusId, n: BusId) -> Self {
        NodePair { m, n }
    }

    /// Same pair with `m < n`.
    pub fn canonical(self) -> Self {
        NodePair {
            m: self.m.min(self.n),
            n: self.m.max(self.n),
        }
    }
}

impl fmt::Display for NodePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.m, self.n)
    }
}

/// All pairs `m < n` over the network's bus ids, in lexicographic order.
pub fn all_pairs(bus_ids: &[BusId]) -> Vec<NodePair> {
    let mut ids = bus_ids.to_vec();
    ids.sort_unstable();
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for (i, &m) in ids.iter().enumerate() {
        for &n in &ids[i + 1..] {
            out.push(NodePair { m, n });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SusceptanceMatrices {
    /// n_L x n_B; row of line (i, j) holds `+1/x` at i and `-1/x` at j.
    pub b_line: DMatrix<f64>,
    /// n_B x n_B weighted Laplacian.
    pub b_bus: DMatrix<f64>,
    pub slack_index: usize,
}

pub fn build_susceptance(net: &Network) -> Result<SusceptanceMatrices> {
    let slack_index = net.slack_position()?;
    let ends = net.line_ends()?;
    let (nl, nb) = (net.n_lines(), net.n_buses());
    let mut b_line = DMatrix::zeros(nl, nb);
    let mut b_bus = DMatrix::zeros(nb, nb);
    for (k, (line, &(f, t))) in net.lines.iter().zip(&ends).enumerate() {
        if !line.in_service {
            continue;
        }
        if !(line.reactance > 0.0) || !line.reactance.is_finite() {
            return Err(Error::Model(format!("line {} has non-positive reactance", line.id)));
        }
        if f == t {
            return Err(Error::Model(format!("line {} connects a bus to itself", line.id)));
        }
        let b = line.susceptance();
        b_line[(k, f)] = b;
        b_line[(k, t)] = -b;
        b_bus[(f, f)] += b;
        b_bus[(t, t)] += b;
        b_bus[(f, t)] -= b;
        b_bus[(t, f)] -= b;
    }
    Ok(SusceptanceMatrices {
        b_line,
        b_bus,
        slack_index,
    })
}

impl SusceptanceMatrices {
    /// Slack-reduced inverse of `b_bus`, zero-filled at the slack row/column.
    pub fn reduced_inverse(&self) -> Result<DMatrix<f64>> {
        let nb = self.b_bus.nrows();
        let s = self.slack_index;
        let keep: Vec<usize> = (0..nb).filter(|&i| i != s).collect();
        let reduced = self.b_bus.select_rows(&keep).select_columns(&keep);
        let inv = if keep.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            reduced.cholesky().ok_or(Error::Singular)?.inverse()
        };
        let mut full = DMatrix::zeros(nb, nb);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                full[(i, j)] = inv[(a, b)];
            }
        }
        Ok(full)
    }
}

#[derive(Clone, Debug)]
pub struct PtdfMatrix {
    /// n_L x n_B.
    pub values: DMatrix<f64>,
    pub slack_index: usize,
    pub bus_ids: Vec<BusId>,
    pub line_ids: Vec<LineId>,
}

impl PtdfMatrix {
    pub fn n_lines(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.values.ncols()
    }

    pub fn bus_index(&self, id: BusId) -> Result<usize> {
        self.bus_ids.iter().position(|&b| b == id).ok_or(Error::UnknownBus(id))
    }

    pub fn line_index(&self, id: LineId) -> Result<usize> {
        self.line_ids
            .iter()
            .position(|&l| l == id)
            .ok_or(Error::UnknownLine(id))
    }

    /// All `m < n` pairs of this matrix's buses.
    pub fn pairs(&self) -> Vec<NodePair> {
        all_pairs(&self.bus_ids)
    }

    /// Flows for a per-unit injection vector, without the balance check.
    pub(crate) fn flows_unchecked(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.values * p
    }
}

fn require_connected(net: &Network) -> Result<()> {
    if net.unreachable_buses().is_empty() {
        Ok(())
    } else {
        Err(Error::Singular)
    }
}

pub fn ptdf(net: &Network) -> Result<PtdfMatrix> {
    require_connected(net)?;
    let sm = build_susceptance(net)?;
    let inv = sm.reduced_inverse()?;
    Ok(PtdfMatrix {
        values: &sm.b_line * inv,
        slack_index: sm.slack_index,
        bus_ids: net.buses.iter().map(|b| b.id).collect(),
        line_ids: net.lines.iter().map(|l| l.id).collect(),
    })
}

/// Balanced vector of per-unit net bus injections, ordered as `Network::buses`.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionProfile {
    p: DVector<f64>,
}

impl InjectionProfile {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if sum.abs() > BALANCE_TOL || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unbalanced(sum));
        }
        Ok(InjectionProfile {
            p: DVector::from_vec(p),
        })
    }

    pub fn zeros(n_buses: usize) -> Self {
        InjectionProfile {
            p: DVector::zeros(n_buses),
        }
    }

    /// `+amount` at bus position `from`, `-amount` at `to`.
    pub fn transfer(n_buses: usize, from: usize, to: usize, amount: f64) -> Self {
        let mut p = DVector::zeros(n_buses);
        p[from] += amount;
        p[to] -= amount;
        InjectionProfile { p }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

fn check_len(net: &Network, inj: &InjectionProfile) -> Result<()> {
    if inj.len() != net.n_buses() {
        return Err(Error::Dimension {
            what: "injection profile",
            expected: net.n_buses(),
            found: inj.len(),
        });
    }
    Ok(())
}

/// Line flows (per-unit, positive from `from_bus` to `to_bus`).
pub fn dc_flow(net: &Network, inj: &InjectionProfile) -> Result<DVector<f64>> {
    check_len(net, inj)?;
    Ok(ptdf(net)?.flows_unchecked(inj.values()))
}

/// Flow change on every line per unit of HVDC transfer from `m` to `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllabilityVector {
    pub pair: NodePair,
    pub values: DVector<f64>,
}

pub fn cv(ptdf: &PtdfMatrix, m: BusId, n: BusId) -> Result<ControllabilityVector> {
    if m == n {
        return Err(Error::InvalidArgument(format!(
            "controllability vector needs two distinct buses, got {m} twice"
        )));
    }
    let (im, in_) = (ptdf.bus_index(m)?, ptdf.bus_index(n)?);
    Ok(ControllabilityVector {
        pair: NodePair { m, n },
        values: ptdf.values.column(im) - ptdf.values.column(in_),
    })
}

/// Controllability vectors of `pairs`, stacked as columns (n_L x pairs).
pub fn cv_matrix(ptdf: &PtdfMatrix, pairs: &[NodePair]) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(ptdf.n_lines(), pairs.len());
    for (j, p) in pairs.iter().enumerate() {
        out.set_column(j, &cv(ptdf, p.m, p.n)?.values);
    }
    Ok(out)
}

/// Flow change from HVDC setpoints `p_dc` on `placements` (losses neglected).
pub fn apply_hvdc(ptdf: &PtdfMatrix, placements: &[NodePair], p_dc: &[f64]) -> Result<DVector<f64>> {
    if placements.len() != p_dc.len() {
        return Err(Error::Dimension {
            what: "HVDC setpoints",
            expected: placements.len(),
            found: p_dc.len(),
        });
    }
    let mut delta = DVector::zeros(ptdf.n_lines());
    for (pair, &p) in placements.iter().zip(p_dc) {
        delta += cv(ptdf, pair.m, pair.n)?.values * p;
    }
    Ok(delta)
}

/// Derivative of all line flows with respect to the reactance of `line`,
/// at the operating point `inj`, evaluated in closed form:
///
/// `dP_L/dx = dB_L/dx * θ - PTDF * dB_B/dx * θ`, with `θ = B̃_B⁻¹ P_B`.
pub fn tcsc_sensitivity(net: &Network, inj: &InjectionProfile, line: LineId) -> Result<DVector<f64>> {
    check_len(net, inj)?;
    let k = net.line_position(line).ok_or(Error::UnknownLine(line))?;
    let l = &net.lines[k];
    if !l.in_service {
        return Err(Error::InvalidArgument(format!("line {line} is out of service")));
    }
    require_connected(net)?;
    let sm = build_susceptance(net)?;
    let inv = sm.reduced_inverse()?;
    let ptdf = &sm.b_line * &inv;
    let theta = &inv * inj.values();

    let (f, t) = net.line_ends()?[k];
    // d(1/x)/dx
    let db = -1.0 / (l.reactance * l.reactance);
    let angle_diff = theta[f] - theta[t];

    // dB_L/dx θ: only row k is nonzero.
    let mut out = DVector::zeros(net.n_lines());
    out[k] = db * angle_diff;

    // dB_B/dx θ = db * (e_f - e_t) * (θ_f - θ_t); PTDF's zero slack column
    // drops the slack entry exactly as the reduced derivative would.
    let dtheta_col = ptdf.column(f) - ptdf.column(t);
    out -= dtheta_col * (db * angle_diff);
    Ok(out)
}

/// Line outage distribution factors.
#[derive(Clone, Debug)]
pub struct Lodf {
    /// n_L x n_L; column k is the change of every line flow per unit of
    /// pre-outage flow on line k. Diagonal entries are -1. Columns of
    /// islanding or out-of-service lines are zero.
    pub values: DMatrix<f64>,
    /// True where the outage of that line would split the network.
    pub islanding: Vec<bool>,
    pub line_ids: Vec<LineId>,
}

impl Lodf {
    /// Post-outage flows for pre-outage `flows` and outaged line index `k`.
    pub fn post_outage(&self, flows: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        if self.islanding[k] {
            return Err(Error::Islanding(self.line_ids[k]));
        }
        let mut out = flows + self.values.column(k) * flows[k];
        out[k] = 0.0;
        Ok(out)
    }

    /// Ids of lines whose outage islands the network.
    pub fn bridges(&self) -> Vec<LineId> {
        self.line_ids
            .iter()
            .zip(&self.islanding)
            .filter(|(_, &b)| b)
            .map(|(&id, _)| id)
            .collect()
    }
}

pub fn lodf(net: &Network) -> Result<Lodf> {
    let p = ptdf(net)?;
    let ends = net.line_ends()?;
    let nl = net.n_lines();
    let mut values = DMatrix::zeros(nl, nl);
    let mut islanding = vec![false; nl];
    for (k, line) in net.lines.iter().enumerate() {
        if !line.in_service {
            continue;
        }
        let (f, t) = ends[k];
        let transfer = p.values.column(f) - p.values.column(t);
        let denom = 1.0 - transfer[k];
        if denom.abs() < ISLANDING_TOL {
            islanding[k] = true;
            continue;
        }
        let mut col = transfer / denom;
        col[k] = -1.0;
        values.set_column(k, &col);
    }
    Ok(Lodf {
        values,
        islanding,
        line_ids: p.line_ids,
    })
}
