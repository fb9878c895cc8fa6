//! Weak Poincare constants on balls.
//!
//! The weak Poincare inequality on B = B(x,r) with enlargement factor C_W
//! asks for the smallest C_P with
//!
//!   sum_{y in B} (f(y) - fbar)^2 mu_y  <=  C_P r^2 E(f; B(x, C_W r))
//!
//! for every f, where fbar is the mu-mean of f over B and E sums
//! mu_e (f(i)-f(j))^2 over each edge of the enlarged ball once. The optimum
//! is the top generalized eigenvalue of the variance form against the
//! Dirichlet form, computed on the range of the Dirichlet matrix. A null
//! direction of the Dirichlet form with positive variance (inner ball split
//! across components of the enlarged ball) makes the constant infinite.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct PoincareResult {
    pub x: u32,
    pub r: u32,
    pub c_w: f64,
    /// Smallest constant; f64::INFINITY when flagged infinite.
    pub c_p: f64,
    pub infinite: bool,
    pub inner_size: usize,
    pub outer_size: usize,
}

/// Extremal function achieving the constant, for cross-checks.
#[derive(Debug, Clone)]
pub struct PoincareSolution {
    pub result: PoincareResult,
    /// Outer-ball vertices in sorted order; `extremal[i]` is f at `outer[i]`.
    pub outer: Vec<u32>,
    pub extremal: Vec<f64>,
}

/// Variance of f over the inner ball (mu-weighted, mean-centered).
pub fn variance_form(field: &ConductanceField, inner: &[u32], f: &[f64], outer: &[u32]) -> f64 {
    let mass: f64 = inner.iter().map(|&v| field.vertex_weight(v as usize)).sum();
    if mass == 0.0 {
        return 0.0;
    }
    let pos = |v: u32| outer.binary_search(&v).expect("inner inside outer");
    let mean: f64 = inner
        .iter()
        .map(|&v| field.vertex_weight(v as usize) * f[pos(v)])
        .sum::<f64>()
        / mass;
    inner
        .iter()
        .map(|&v| {
            let d = f[pos(v)] - mean;
            field.vertex_weight(v as usize) * d * d
        })
        .sum()
}

/// Dirichlet energy of f over the enlarged ball, each edge once.
pub fn dirichlet_form(field: &ConductanceField, outer: &[u32], f: &[f64]) -> f64 {
    let d = field.bbox.d;
    let mut acc = 0.0;
    for (i, &v) in outer.iter().enumerate() {
        for a in 0..d {
            let w = field.weights[v as usize * d + a];
            if w == 0.0 {
                continue;
            }
            let u = field.bbox.neighbor(v as usize, a, 1).unwrap() as u32;
            if let Ok(j) = outer.binary_search(&u) {
                let df = f[i] - f[j];
                acc += w * df * df;
            }
        }
    }
    acc
}

pub fn poincare_constant(
    field: &ConductanceField,
    x: usize,
    r: u32,
    c_w: f64,
) -> Result<PoincareResult> {
    Ok(poincare_solution(field, x, r, c_w)?.result)
}

pub fn poincare_solution(
    field: &ConductanceField,
    x: usize,
    r: u32,
    c_w: f64,
) -> Result<PoincareSolution> {
    if r < 1 {
        return Err(Error::config("poincare constant needs r >= 1"));
    }
    if !(c_w >= 1.0) || !c_w.is_finite() {
        return Err(Error::config(format!("enlargement factor c_w={c_w} must be >= 1")));
    }
    let r_out = (c_w * r as f64 + 1e-9).floor() as u32;
    if field.bbox.boundary == Boundary::Torus && 2 * r_out as usize >= field.bbox.side {
        return Err(Error::config(format!(
            "enlarged ball radius {r_out} wraps the torus (side {})",
            field.bbox.side
        )));
    }
    let inner = field.ball(x, r);
    let outer = field.ball(x, r_out);
    let m = outer.len();

    let mut result = PoincareResult {
        x: x as u32,
        r,
        c_w,
        c_p: 0.0,
        infinite: false,
        inner_size: inner.len(),
        outer_size: m,
    };
    let mass: f64 = inner.iter().map(|&v| field.vertex_weight(v as usize)).sum();
    if inner.len() < 2 || mass == 0.0 {
        // Variance form vanishes identically.
        return Ok(PoincareSolution {
            result,
            outer,
            extremal: vec![0.0; m],
        });
    }

    // Variance matrix V = D_{mu'} - mu' mu'^T / mass, mu' supported on inner.
    let mut mu_in = vec![0.0f64; m];
    for &v in &inner {
        let i = outer.binary_search(&v).expect("inner inside outer");
        mu_in[i] = field.vertex_weight(v as usize);
    }
    let mut vmat = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            vmat[(i, j)] = -mu_in[i] * mu_in[j] / mass;
        }
        vmat[(i, i)] += mu_in[i];
    }

    // Dirichlet matrix over the enlarged ball, each edge once.
    let d = field.bbox.d;
    let mut wmat = DMatrix::<f64>::zeros(m, m);
    for (i, &v) in outer.iter().enumerate() {
        for a in 0..d {
            let w = field.weights[v as usize * d + a];
            if w == 0.0 {
                continue;
            }
            let u = field.bbox.neighbor(v as usize, a, 1).unwrap() as u32;
            if let Ok(j) = outer.binary_search(&u) {
                wmat[(i, i)] += w;
                wmat[(j, j)] += w;
                wmat[(i, j)] -= w;
                wmat[(j, i)] -= w;
            }
        }
    }

    let eig = SymmetricEigen::new(wmat);
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let thresh = lam_max * 1e-12 * m as f64;

    // Null directions with positive variance make the constant infinite.
    for k in 0..m {
        if eig.eigenvalues[k] <= thresh {
            let u = eig.eigenvectors.column(k);
            let vu = &vmat * u;
            let quad: f64 = u.dot(&vu);
            if quad > mass * 1e-10 {
                result.infinite = true;
                result.c_p = f64::INFINITY;
                return Ok(PoincareSolution {
                    result,
                    outer,
                    extremal: u.iter().cloned().collect(),
                });
            }
        }
    }

    let pos: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] > thresh).collect();
    if pos.is_empty() {
        return Ok(PoincareSolution {
            result,
            outer,
            extremal: vec![0.0; m],
        });
    }
    // M = L^{-1/2} U^T V U L^{-1/2} on the positive eigenspace of W; the top
    // eigenvalue of M is sup V(f)/W(f).
    let p = pos.len();
    let mut basis = DMatrix::<f64>::zeros(m, p);
    for (c, &k) in pos.iter().enumerate() {
        let scale = eig.eigenvalues[k].sqrt().recip();
        for i in 0..m {
            basis[(i, c)] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    let mmat = basis.transpose() * &vmat * &basis;
    let meig = SymmetricEigen::new(mmat);
    let (mut top_k, mut top) = (0usize, f64::NEG_INFINITY);
    for k in 0..p {
        if meig.eigenvalues[k] > top {
            top = meig.eigenvalues[k];
            top_k = k;
        }
    }
    result.c_p = top.max(0.0) / (r as f64 * r as f64);
    let fvec = &basis * meig.eigenvectors.column(top_k);
    Ok(PoincareSolution {
        result,
        outer,
        extremal: fvec.iter().cloned().collect(),
    })
}
