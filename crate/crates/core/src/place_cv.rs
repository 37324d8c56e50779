//! Placement by controllability-vector geometry.
//!
//! A controllability vector `c` spans, together with the origin, the simplex
//! `{0, c_1 e_1, ..., c_n e_n}` whose volume `Π|c_i| / n!` measures how
//! strongly and how broadly the link moves line flows. The first link
//! maximizes that volume. Each further link is picked among the candidates
//! most orthogonal to the links already chosen, by the total volume of the
//! per-orthant extreme simplices spanned by all signed combinations of the
//! chosen vectors and the candidate.
//!
//! Volumes are handled as logarithms: the products underflow for realistic
//! line counts, and the common `1/n!` factor is dropped.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dcsens::{cv, NodePair, PtdfMatrix};
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_columns, RANK_RTOL};

/// Component magnitudes at or below this count as zero.
pub const DEFAULT_EPS: f64 = 1e-9;
pub const DEFAULT_COS_THRESHOLD: f64 = 0.2;
pub const DEFAULT_CANDIDATE_CAP: usize = 10;

/// Log-volume of a (possibly degenerate) coordinate simplex.
///
/// Ordered first by `dimension`, then by `log_volume`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VolumeScore {
    pub log_volume: f64,
    pub dimension: usize,
}

impl VolumeScore {
    pub fn cmp_score(&self, other: &Self) -> Ordering {
        self.dimension
            .cmp(&other.dimension)
            .then(self.log_volume.total_cmp(&other.log_volume))
    }
}

/// `Σ log max(|v_i|, ε)` and the count of components above `ε`.
pub fn conical_log_volume(v: &[f64], eps: f64) -> VolumeScore {
    debug_assert!(eps > 0.0);
    let mut log_volume = 0.0;
    let mut dimension = 0;
    for &c in v {
        let a = c.abs();
        if a > eps {
            dimension += 1;
        }
        log_volume += a.max(eps).ln();
    }
    VolumeScore { log_volume, dimension }
}

fn best_first(a: &(NodePair, VolumeScore), b: &(NodePair, VolumeScore)) -> Ordering {
    b.1.cmp_score(&a.1).then(a.0.cmp(&b.0))
}

/// Every pair scored by the volume of its own simplex, best first.
pub fn first_placement(ptdf: &PtdfMatrix) -> Result<Vec<(NodePair, VolumeScore)>> {
    first_placement_eps(ptdf, DEFAULT_EPS)
}

pub fn first_placement_eps(ptdf: &PtdfMatrix, eps: f64) -> Result<Vec<(NodePair, VolumeScore)>> {
    let mut scored = ptdf
        .pairs()
        .into_iter()
        .map(|p| {
            let c = cv(ptdf, p.m, p.n)?;
            Ok((p, conical_log_volume(c.values.as_slice(), eps)))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(best_first);
    Ok(scored)
}

/// Every pair with the 1-norm of its controllability vector, largest first.
pub fn rank_by_norm1(ptdf: &PtdfMatrix) -> Result<Vec<(NodePair, f64)>> {
    let mut scored = ptdf
        .pairs()
        .into_iter()
        .map(|p| Ok((p, cv(ptdf, p.m, p.n)?.values.lp_norm(1))))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Spearman rank correlation between the 1-norm and the log-volume of every pair.
pub fn metric_correlation(ptdf: &PtdfMatrix) -> Result<f64> {
    let pairs = ptdf.pairs();
    let mut norms = Vec::with_capacity(pairs.len());
    let mut vols = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let c = cv(ptdf, p.m, p.n)?;
        norms.push(c.values.lp_norm(1));
        vols.push(conical_log_volume(c.values.as_slice(), DEFAULT_EPS).log_volume);
    }
    Ok(spearman(&norms, &vols))
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Cosine of the angle between `v` and the column span of `basis`.
pub fn orthogonality(basis: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero controllability vector".into()));
    }
    let q = orthonormal_columns(basis).ok_or_else(|| Error::InvalidArgument("basis is rank deficient".into()))?;
    let proj = q.transpose() * v;
    Ok((proj.norm() / norm).clamp(0.0, 1.0))
}

/// Relative distance of `v` from the span of the orthonormal `q`.
fn residual_ratio(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let r = v - q * (q.transpose() * v);
    r.norm() / v.norm()
}

fn same_direction(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    (a - b).amax() <= tol || (a + b).amax() <= tol
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Total volume of the orthant-extreme simplices spanned by all nonzero
/// `{-1, 0, +1}` combinations of `selected` and `candidate`.
///
/// A candidate equal to a selected vector or its negation adds no direction
/// and is ignored. Zero components are binned with the positive sign.
pub fn orthant_volume_sum(selected: &[DVector<f64>], candidate: &DVector<f64>, eps: f64) -> VolumeScore {
    let mut vectors: Vec<&DVector<f64>> = selected.iter().collect();
    if !selected.iter().any(|s| same_direction(s, candidate)) {
        vectors.push(candidate);
    }
    let dim = candidate.len();
    let k = vectors.len();

    let mut extremes: BTreeMap<Vec<bool>, Vec<f64>> = BTreeMap::new();
    let mut coeffs = vec![0i8; k];
    let mut column = vec![0.0; dim];
    let total = 3usize.pow(k as u32);
    for _ in 1..total {
        // Increment the balanced-ternary-like counter over {-1, 0, 1}^k.
        for c in coeffs.iter_mut() {
            if *c == 1 {
                *c = -1;
            } else {
                *c += 1;
                break;
            }
        }
        column.iter_mut().for_each(|v| *v = 0.0);
        for (&c, v) in coeffs.iter().zip(&vectors) {
            match c {
                1 => column.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b),
                -1 => column.iter_mut().zip(v.iter()).for_each(|(a, b)| *a -= b),
                _ => {}
            }
        }
        let key: Vec<bool> = column.iter().map(|&v| v >= 0.0).collect();
        let slot = extremes.entry(key).or_insert_with(|| vec![0.0; dim]);
        for (e, &v) in slot.iter_mut().zip(&column) {
            *e = e.max(v.abs());
        }
    }

    let scores: Vec<VolumeScore> = extremes.values().map(|e| conical_log_volume(e, eps)).collect();
    let logs: Vec<f64> = scores.iter().map(|s| s.log_volume).collect();
    VolumeScore {
        log_volume: log_sum_exp(&logs),
        dimension: scores.iter().map(|s| s.dimension).max().unwrap_or(0),
    }
}

#[derive(Clone, Debug)]
pub struct PlacementState {
    pub selected: Vec<NodePair>,
    /// Controllability vectors of `selected`, as columns in order.
    pub basis: DMatrix<f64>,
    pub cos_threshold: f64,
    pub candidate_cap: usize,
    pub eps: f64,
}

impl PlacementState {
    pub fn new(ptdf: &PtdfMatrix, first: NodePair) -> Result<Self> {
        let c = cv(ptdf, first.m, first.n)?;
        Ok(PlacementState {
            selected: vec![first],
            basis: DMatrix::from_columns(&[c.values]),
            cos_threshold: DEFAULT_COS_THRESHOLD,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            eps: DEFAULT_EPS,
        })
    }

    pub fn with_threshold(mut self, cos_threshold: f64) -> Self {
        self.cos_threshold = cos_threshold;
        self
    }

    pub fn with_cap(mut self, candidate_cap: usize) -> Self {
        self.candidate_cap = candidate_cap;
        self
    }

    fn is_selected(&self, p: NodePair) -> bool {
        self.selected.iter().any(|s| s.canonical() == p.canonical())
    }
}

/// One row of a step's candidate table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateRow {
    pub pair: NodePair,
    /// `None` for the first placement, which has no basis.
    pub cosphi: Option<f64>,
    /// `None` when the candidate was filtered out before volume scoring.
    pub score: Option<VolumeScore>,
    pub selected: bool,
}

/// Candidate table of one placement step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvStep {
    pub step: usize,
    pub chosen: NodePair,
    pub rows: Vec<CandidateRow>,
}

/// Pairs passing the orthogonality filter, ascending by `cosφ`, with all cosines.
/// Candidates with their cosφ.
type Scored = Vec<(NodePair, f64)>;

fn filtered_candidates(state: &PlacementState, ptdf: &PtdfMatrix) -> Result<(Scored, Scored)> {
    let q = orthonormal_columns(&state.basis)
        .ok_or_else(|| Error::InvalidArgument("placement basis is rank deficient".into()))?;
    let mut eligible = Vec::new();
    let mut all = Vec::new();
    for p in ptdf.pairs() {
        if state.is_selected(p) {
            continue;
        }
        let v = cv(ptdf, p.m, p.n)?.values;
        if v.norm() == 0.0 {
            continue;
        }
        let cos = ((q.transpose() * &v).norm() / v.norm()).clamp(0.0, 1.0);
        all.push((p, cos));
        if residual_ratio(&q, &v) > RANK_RTOL {
            eligible.push((p, cos));
        }
    }
    eligible.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let passing: Vec<(NodePair, f64)> = eligible
        .iter()
        .copied()
        .filter(|&(_, c)| c <= state.cos_threshold)
        .collect();
    let pool = if passing.is_empty() { eligible } else { passing };
    Ok((pool.into_iter().take(state.candidate_cap).collect(), all))
}

/// Chooses the next controller; returns the pair, the updated state and the
/// candidate table of this step.
pub fn place_next(state: &PlacementState, ptdf: &PtdfMatrix) -> Result<(NodePair, PlacementState, CvStep)> {
    if state.selected.is_empty() {
        return Err(Error::InvalidArgument("place_next needs an initial placement".into()));
    }
    let (pool, all) = filtered_candidates(state, ptdf)?;
    if pool.is_empty() {
        return Err(Error::Infeasible(
            "no candidate pair adds a new control direction".into(),
        ));
    }
    let selected_cvs: Vec<DVector<f64>> = state.basis.column_iter().map(|c| c.into_owned()).collect();
    let scored: Vec<(NodePair, VolumeScore)> = pool
        .par_iter()
        .map(|&(p, _)| {
            let v = cv(ptdf, p.m, p.n)?.values;
            Ok((p, orthant_volume_sum(&selected_cvs, &v, state.eps)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (chosen, _) = *scored
        .iter()
        .min_by(|a, b| best_first(a, b))
        .expect("pool is non-empty");

    let mut next = state.clone();
    next.selected.push(chosen);
    let c = cv(ptdf, chosen.m, chosen.n)?.values;
    let cols = next.basis.ncols();
    next.basis = next.basis.insert_column(cols, 0.0);
    let last = next.basis.ncols() - 1;
    next.basis.set_column(last, &c);

    let rows = all
        .into_iter()
        .map(|(p, cos)| CandidateRow {
            pair: p,
            cosphi: Some(cos),
            score: scored.iter().find(|(q, _)| *q == p).map(|(_, s)| *s),
            selected: p == chosen,
        })
        .collect();
    let step = CvStep {
        step: next.selected.len(),
        chosen,
        rows,
    };
    Ok((chosen, next, step))
}

/// Places `count` controllers; returns them with every step's candidate table.
pub fn place_cv_sequence(
    ptdf: &PtdfMatrix,
    count: usize,
    cos_threshold: f64,
    candidate_cap: usize,
) -> Result<(Vec<NodePair>, Vec<CvStep>)> {
    if count == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if candidate_cap == 0 {
        return Err(Error::InvalidArgument("candidate cap must be at least 1".into()));
    }
    let ranking = first_placement(ptdf)?;
    let (first, _) = *ranking
        .first()
        .ok_or_else(|| Error::InvalidArgument("network needs at least two buses".into()))?;
    let mut steps = vec![CvStep {
        step: 1,
        chosen: first,
        rows: ranking
            .iter()
            .map(|&(pair, score)| CandidateRow {
                pair,
                cosphi: None,
                score: Some(score),
                selected: pair == first,
            })
            .collect(),
    }];
    let mut state = PlacementState::new(ptdf, first)?
        .with_threshold(cos_threshold)
        .with_cap(candidate_cap);
    while state.selected.len() < count {
        let (_, next, step) = place_next(&state, ptdf)?;
        steps.push(step);
        state = next;
    }
    Ok((state.selected, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcsens::ptdf;
    use crate::netmodel::tests::triangle;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn all_ones_has_zero_log_volume() {
        let s = conical_log_volume(&[1.0; 5], DEFAULT_EPS);
        assert_eq!(
            s,
            VolumeScore {
                log_volume: 0.0,
                dimension: 5
            }
        );
    }

    #[test]
    fn degenerate_component_lowers_dimension() {
        let full = conical_log_volume(&[1e-3, 1e-3, 1e-3], DEFAULT_EPS);
        let flat = conical_log_volume(&[0.0, 10.0, 10.0], DEFAULT_EPS);
        assert_eq!(flat.dimension, 2);
        assert_eq!(flat.cmp_score(&full), Ordering::Less);
    }

    #[test]
    fn orthogonality_cases() {
        let a = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!((orthogonality(&a, &dv(&[2.0, 0.0, 0.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(orthogonality(&a, &dv(&[0.0, 1.0, 1.0])).unwrap(), 0.0);
        let c = orthogonality(&a, &dv(&[1.0, 1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(orthogonality(&a, &dv(&[0.0, 0.0, 0.0])).is_err());
        let bad = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(orthogonality(&bad, &dv(&[0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn orthogonal_unit_vectors_fill_four_orthants() {
        let s = orthant_volume_sum(&[dv(&[1.0, 0.0])], &dv(&[0.0, 1.0]), DEFAULT_EPS);
        assert_eq!(s.dimension, 2);
        assert!((s.log_volume - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_and_negated_candidates_add_nothing() {
        let c = dv(&[0.3, -0.5, 0.2]);
        let alone = orthant_volume_sum(std::slice::from_ref(&c), &c, DEFAULT_EPS);
        let neg = orthant_volume_sum(std::slice::from_ref(&c), &(-&c), DEFAULT_EPS);
        assert_eq!(alone, neg);
        // Selected only: the two orthants of ±c.
        let expected = log_sum_exp(&[conical_log_volume(c.as_slice(), DEFAULT_EPS).log_volume; 2]);
        assert!((alone.log_volume - expected).abs() < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn two_bus_network_has_one_pair() {
        let mut net = triangle();
        net.buses.truncate(2);
        net.lines.truncate(1);
        let p = ptdf(&net).unwrap();
        let r = first_placement(&p).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, NodePair::new(1, 2));
    }

    #[test]
    fn triangle_sequence_never_repeats() {
        let p = ptdf(&triangle()).unwrap();
        let (chosen, steps) = place_cv_sequence(&p, 2, DEFAULT_COS_THRESHOLD, DEFAULT_CANDIDATE_CAP).unwrap();
        assert_eq!(chosen.len(), 2);
        assert_ne!(chosen[0].canonical(), chosen[1].canonical());
        assert_eq!(steps.len(), 2);
        // Third would exceed the rank n_B - 1 = 2.
        assert!(place_cv_sequence(&p, 3, DEFAULT_COS_THRESHOLD, DEFAULT_CANDIDATE_CAP).is_err());
    }
}
