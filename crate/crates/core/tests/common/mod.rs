//! Test oracles that avoid the library's PTDF code path.
#![allow(dead_code)]

use std::path::PathBuf;

use gridctrl::netmodel::{merge_parallel_lines, parse_case, CaseFormat, Network};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const FIXTURES: [&str; 4] = ["triangle.json", "fixture10.json", "ieee14.m", "parallel.json"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

/// Parsed and merged fixture.
pub fn fixture(name: &str) -> Network {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    let format = if name.ends_with(".m") {
        CaseFormat::Matpower
    } else {
        CaseFormat::NativeJson
    };
    merge_parallel_lines(&parse_case(&text, format).unwrap())
}

/// DC flows by solving the reduced Laplacian for bus angles.
pub fn angle_flows(net: &Network, p: &[f64]) -> Vec<f64> {
    let nb = net.n_buses();
    let pos = |id| net.buses.iter().position(|b| b.id == id).unwrap();
    let slack = net.buses.iter().position(|b| b.is_slack).unwrap();
    let mut lap = DMatrix::zeros(nb, nb);
    for l in net.lines.iter().filter(|l| l.in_service) {
        let (f, t, b) = (pos(l.from_bus), pos(l.to_bus), 1.0 / l.reactance);
        lap[(f, f)] += b;
        lap[(t, t)] += b;
        lap[(f, t)] -= b;
        lap[(t, f)] -= b;
    }
    let keep: Vec<usize> = (0..nb).filter(|&i| i != slack).collect();
    let reduced = lap.select_rows(&keep).select_columns(&keep);
    let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p[i]));
    let sol = reduced.lu().solve(&rhs).expect("connected network");
    let mut theta = vec![0.0; nb];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = sol[k];
    }
    net.lines
        .iter()
        .map(|l| {
            if l.in_service {
                (theta[pos(l.from_bus)] - theta[pos(l.to_bus)]) / l.reactance
            } else {
                0.0
            }
        })
        .collect()
}

/// Balanced random injections in per-unit.
pub fn random_balanced(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    for v in &mut p {
        *v -= mean;
    }
    p
}

/// Minimum of `c·x` subject to `a x <= b` by enumerating every vertex.
/// Only sensible for a handful of variables.
pub fn vertex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let m = a.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        return None;
    }
    loop {
        let mat = DMatrix::from_fn(n, n, |i, j| a[idx[i]][j]);
        let rhs = DVector::from_iterator(n, idx.iter().map(|&i| b[i]));
        if mat.determinant().abs() > 1e-12 {
            if let Some(x) = mat.lu().solve(&rhs) {
                let feasible =
                    (0..m).all(|i| a[i].iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= b[i] + 1e-9);
                if feasible {
                    let obj: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                    if best.as_ref().is_none_or(|(v, _)| obj < *v) {
                        best = Some((obj, x.iter().copied().collect()));
                    }
                }
            }
        }
        let Some(i) = (0..n).rev().find(|&i| idx[i] < m - n + i) else {
            return best;
        };
        idx[i] += 1;
        for j in i + 1..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
