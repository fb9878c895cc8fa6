//! Gaussian on/off-diagonal envelopes fitted to kernel decay.
//!
//! Over a grid of times and radii the kernel is bracketed by
//!
//!   c3 t^{-d/2} e^{-c4 r^2/t}  <=  q_t(x,y)  <=  c1 t^{-d/2} e^{-c2 r^2/t},
//!
//! the upper bound on the window r <= t, the lower on r^{3/2} <= t. The
//! exponents come from regressing log(q t^{d/2}) on r^2/t (max of q over the
//! sphere of radius r for the upper bound, min for the lower); the
//! multiplicative constants are then enveloped so the bounds hold at every
//! grid point by construction.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::spectral::kernel::kernel_row;
use crate::stats::{linear_fit, LinearFit};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct GaussPoint {
    pub t: f64,
    pub r: u32,
    /// Extremes of q_t(x, .) over the sphere at graph distance r.
    pub q_max: f64,
    pub q_min: f64,
    pub in_upper_window: bool,
    pub in_lower_window: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    pub x: u32,
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub upper_fit: Option<LinearFit>,
    pub lower_fit: Option<LinearFit>,
    pub violations_upper: usize,
    pub violations_lower: usize,
    /// q_t(x,x) t^{d/2} per grid time, in grid order.
    pub on_diagonal: Vec<f64>,
    pub points: Vec<GaussPoint>,
}

pub fn gaussian_bound_fit(
    field: &ConductanceField,
    x: usize,
    t_grid: &[f64],
    r_grid: &[u32],
    tol: f64,
) -> Result<GaussianFit> {
    if t_grid.is_empty() || r_grid.is_empty() {
        return Err(Error::config("gaussian fit needs nonempty grids"));
    }
    for &t in t_grid {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::config(format!("grid time {t} must be positive")));
        }
    }
    let d = field.bbox.d;
    let dh = d as f64 / 2.0;
    let mut rs = r_grid.to_vec();
    rs.sort_unstable();
    rs.dedup();
    if rs[0] < 1 {
        return Err(Error::config("gaussian fit radii must be >= 1"));
    }
    let r_max = *rs.last().unwrap();
    let dist = field.bfs_distances(x, r_max);
    let spheres: Vec<Vec<u32>> = rs
        .iter()
        .map(|&r| {
            (0..field.vertex_count() as u32)
                .filter(|&v| dist[v as usize] == r)
                .collect()
        })
        .collect();

    let mut points = Vec::new();
    let mut on_diagonal = Vec::new();
    for &t in t_grid {
        let row = kernel_row(field, x, t, tol)?;
        on_diagonal.push(row[x] * t.powf(dh));
        for (i, &r) in rs.iter().enumerate() {
            if spheres[i].is_empty() {
                continue;
            }
            let mut q_max = f64::NEG_INFINITY;
            let mut q_min = f64::INFINITY;
            for &y in &spheres[i] {
                let q = row[y as usize];
                q_max = q_max.max(q);
                q_min = q_min.min(q);
            }
            points.push(GaussPoint {
                t,
                r,
                q_max,
                q_min,
                in_upper_window: (r as f64) <= t,
                in_lower_window: (r as f64).powf(1.5) <= t,
            });
        }
    }

    let fit_on = |sel: &dyn Fn(&GaussPoint) -> Option<f64>| -> Option<LinearFit> {
        let mut us = Vec::new();
        let mut ys = Vec::new();
        for p in &points {
            if let Some(q) = sel(p) {
                if q > 0.0 {
                    us.push((p.r as f64).powi(2) / p.t);
                    ys.push((q * p.t.powf(dh)).ln());
                }
            }
        }
        linear_fit(&us, &ys)
    };
    let upper_fit = fit_on(&|p| p.in_upper_window.then_some(p.q_max));
    let lower_fit = fit_on(&|p| p.in_lower_window.then_some(p.q_min));
    let c2 = upper_fit.as_ref().map(|f| -f.slope).unwrap_or(0.0);
    let c4 = lower_fit.as_ref().map(|f| -f.slope).unwrap_or(0.0);

    // Envelope the constants so both bounds hold on their whole windows.
    let mut c1 = 0.0f64;
    let mut c3 = f64::INFINITY;
    for p in &points {
        let u = (p.r as f64).powi(2) / p.t;
        if p.in_upper_window {
            c1 = c1.max(p.q_max * p.t.powf(dh) * (c2 * u).exp());
        }
        if p.in_lower_window {
            c3 = c3.min(p.q_min * p.t.powf(dh) * (c4 * u).exp());
        }
    }
    if !c3.is_finite() {
        c3 = 0.0;
    }

    let mut violations_upper = 0;
    let mut violations_lower = 0;
    for p in &points {
        let u = (p.r as f64).powi(2) / p.t;
        if p.in_upper_window && p.q_max > c1 * p.t.powf(-dh) * (-c2 * u).exp() * (1.0 + 1e-9) {
            violations_upper += 1;
        }
        if p.in_lower_window && p.q_min < c3 * p.t.powf(-dh) * (-c4 * u).exp() * (1.0 - 1e-9) {
            violations_lower += 1;
        }
    }
    Ok(GaussianFit {
        x: x as u32,
        d,
        c1,
        c2,
        c3,
        c4,
        upper_fit,
        lower_fit,
        violations_upper,
        violations_lower,
        on_diagonal,
        points,
    })
}
