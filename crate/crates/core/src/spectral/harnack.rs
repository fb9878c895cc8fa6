//! Parabolic Harnack ratios and oscillation decay.
//!
//! For a nonnegative caloric u on the cylinder Q = B(x,R) x (0,T], T = R^2,
//! the Harnack inequality bounds sup over Q_- = B(x,R/2) x [T/4,T/2] by C_H
//! times inf over Q_+ = B(x,R/2) x [3T/4,T]. C_H is estimated as the max of
//! that ratio over a finite caloric family: heat kernels from a spread of
//! sources, their complements sup u - u and u - inf u on each dyadic
//! sub-cylinder (also nonnegative caloric there), evaluated over the dyadic
//! chain Q(k) = (r0^2 - r_k^2) + Q(x, r_k, r_k^2), r_k = 2^{-k} r0.
//!
//! The same chain drives the oscillation check: the upper box Q_+(k) bounds
//! Osc(u, Q_+(k)) <= (1 - 1/C_H) Osc(u, Q(k)) whenever C_H dominates the
//! family ratios, and Theta = log2(C_H/(C_H-1)) converts the constant into
//! a decay exponent.
//!
//! Cylinders are discretized on a shared uniform grid with 64 points per
//! smallest sub-cylinder, so every box's extrema scan the same time points.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField};
use crate::spectral::kernel::kernel_series;
use serde::Serialize;

/// A function on (time grid) x (all vertices), e.g. a heat kernel in its
/// second argument.
#[derive(Debug, Clone)]
pub struct SpaceTimeFunction {
    pub times: Vec<f64>,
    /// One full vertex row per time.
    pub values: Vec<Vec<f64>>,
}

impl SpaceTimeFunction {
    /// Heat kernel t -> q_t(source, .) on the given grid.
    pub fn kernel_from(
        field: &ConductanceField,
        source: usize,
        times: &[f64],
        tol: f64,
    ) -> Result<Self> {
        Ok(SpaceTimeFunction {
            times: times.to_vec(),
            values: kernel_series(field, source, times, tol)?,
        })
    }

    pub fn constant(times: &[f64], n: usize, value: f64) -> Self {
        SpaceTimeFunction {
            times: times.to_vec(),
            values: vec![vec![value; n]; times.len()],
        }
    }

    /// (min, max) over ball x {t: lo < t <= hi or lo <= t <= hi}.
    fn extrema(&self, ball: &[u32], lo: f64, hi: f64, lo_open: bool) -> Option<(f64, f64)> {
        let eps = 1e-9;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut seen = false;
        for (i, &t) in self.times.iter().enumerate() {
            let above = if lo_open { t > lo + eps } else { t >= lo - eps };
            if !above || t > hi + eps {
                continue;
            }
            for &y in ball {
                let v = self.values[i][y as usize];
                min = min.min(v);
                max = max.max(v);
            }
            seen = true;
        }
        seen.then_some((min, max))
    }
}

/// Uniform grid on (0, r^2] whose step gives 64 points per interval of the
/// smallest dyadic sub-cylinder (length r_min^2).
pub fn phi_time_grid(r: u32, r_min: u32) -> Vec<f64> {
    let t_end = (r as f64) * (r as f64);
    let step = (r_min as f64) * (r_min as f64) / 64.0;
    let n = (t_end / step).round() as usize;
    (1..=n).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy)]
struct Cylinder {
    r: u32,
    /// Time window (lo, hi] of the full box; sub-boxes are closed.
    lo: f64,
    hi: f64,
}

/// Dyadic chain inside Q(x, r0, r0^2): scales r0, r0/2, ..., down to 2.
fn dyadic_chain(r0: u32) -> Vec<Cylinder> {
    let t = (r0 as f64) * (r0 as f64);
    let mut out = Vec::new();
    let mut r = r0;
    while r >= 2 {
        let r2 = (r as f64) * (r as f64);
        out.push(Cylinder {
            r,
            lo: t - r2,
            hi: t,
        });
        r /= 2;
    }
    out
}

fn validate_scale(field: &ConductanceField, x: usize, r0: u32) -> Result<()> {
    if !r0.is_power_of_two() || r0 < 4 {
        return Err(Error::config(format!(
            "dyadic cylinder radius {r0} must be a power of two >= 4"
        )));
    }
    if field.bbox.boundary == Boundary::Torus && 2 * r0 as usize >= field.bbox.side {
        return Err(Error::config(format!(
            "ball of radius {r0} wraps the torus (side {})",
            field.bbox.side
        )));
    }
    if x >= field.vertex_count() {
        return Err(Error::config(format!("vertex {x} out of range")));
    }
    Ok(())
}

/// Default caloric test family: sources at x and at distances R/2, R, 3R/2
/// along each axis.
pub fn default_source_spread(field: &ConductanceField, x: usize, r: u32) -> Vec<usize> {
    let b = &field.bbox;
    let side = b.side as i64;
    let cx = b.coords(x);
    let mut out = vec![x];
    for a in 0..b.d {
        for &dist in &[r as i64 / 2, r as i64, 3 * r as i64 / 2] {
            for &sgn in &[1i64, -1] {
                let mut c: Vec<usize> = cx.clone();
                let mut v = cx[a] as i64 + sgn * dist;
                match b.boundary {
                    Boundary::Torus => v = v.rem_euclid(side),
                    Boundary::HardWall => v = v.clamp(0, side - 1),
                }
                c[a] = v as usize;
                out.push(b.index(&c));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out.retain(|&z| field.vertex_weight(z) > 0.0);
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackMember {
    pub source: u32,
    pub scale_k: u32,
    /// "kernel", "comp-above" (sup u - u), or "comp-below" (u - inf u).
    pub kind: &'static str,
    pub sup_minus: f64,
    pub inf_plus: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub x: u32,
    pub r: u32,
    pub c_h: f64,
    pub theta: f64,
    pub members: Vec<HarnackMember>,
    pub skipped: Vec<String>,
}

/// Decay exponent Theta = log2(C_H/(C_H - 1)), with C_H clamped above
/// 1 + 1e-9.
pub fn theta(c_h: f64) -> f64 {
    let c = c_h.max(1.0 + 1e-9);
    (c / (c - 1.0)).log2()
}

pub struct HarnackOptions {
    /// Caloric family sources; None picks the default spread.
    pub sources: Option<Vec<usize>>,
    /// Evaluate ratios on every dyadic sub-cylinder, not just the top one.
    pub sub_scales: bool,
    /// Include the complements sup u - u and u - inf u per cylinder.
    pub include_complements: bool,
    pub tol: f64,
}

impl Default for HarnackOptions {
    fn default() -> Self {
        HarnackOptions {
            sources: None,
            sub_scales: true,
            include_complements: true,
            tol: 1e-12,
        }
    }
}

pub fn harnack_constant(
    field: &ConductanceField,
    x: usize,
    r: u32,
    opts: &HarnackOptions,
) -> Result<HarnackReport> {
    validate_scale(field, x, r)?;
    if field.vertex_weight(x) == 0.0 {
        return Err(Error::config(format!("center {x} is isolated")));
    }
    let sources = opts
        .sources
        .clone()
        .unwrap_or_else(|| default_source_spread(field, x, r));
    if sources.is_empty() {
        return Err(Error::config("caloric family has no usable sources"));
    }
    let grid = phi_time_grid(r, if opts.sub_scales { 2 } else { r });
    let chain = dyadic_chain(r);
    let scales: &[Cylinder] = if opts.sub_scales { &chain } else { &chain[..1] };
    let balls: Vec<(Vec<u32>, Vec<u32>)> = scales
        .iter()
        .map(|c| (field.ball(x, c.r), field.ball(x, c.r / 2)))
        .collect();

    let mut members = Vec::new();
    let mut skipped = Vec::new();
    let mut c_h: f64 = 1.0;
    for &z in &sources {
        let u = SpaceTimeFunction::kernel_from(field, z, &grid, opts.tol)?;
        for (k, cyl) in scales.iter().enumerate() {
            let (ball, half) = &balls[k];
            let len = cyl.hi - cyl.lo;
            let q_minus = (cyl.lo + len / 4.0, cyl.lo + len / 2.0);
            let q_plus = (cyl.lo + 3.0 * len / 4.0, cyl.hi);
            let full = u.extrema(ball, cyl.lo, cyl.hi, true);
            let minus = u.extrema(half, q_minus.0, q_minus.1, false);
            let plus = u.extrema(half, q_plus.0, q_plus.1, false);
            let (Some((m_lo, m_hi)), Some(minus), Some(plus)) = (full, minus, plus) else {
                skipped.push(format!("source {z} scale {k}: empty discretization"));
                continue;
            };
            let mut push = |kind: &'static str, sup_minus: f64, inf_plus: f64| {
                if inf_plus <= 0.0 {
                    if sup_minus > 0.0 {
                        skipped.push(format!(
                            "source {z} scale {k} ({kind}): inf over upper box is 0"
                        ));
                    }
                    return;
                }
                let ratio = sup_minus / inf_plus;
                c_h = c_h.max(ratio);
                members.push(HarnackMember {
                    source: z as u32,
                    scale_k: k as u32,
                    kind,
                    sup_minus,
                    inf_plus,
                    ratio,
                });
            };
            push("kernel", minus.1, plus.0);
            if opts.include_complements {
                // sup_Q u - u and u - inf_Q u are nonnegative caloric on the
                // cylinder; their ratios drive the oscillation bound.
                push("comp-above", m_hi - minus.0, m_hi - plus.1);
                push("comp-below", minus.1 - m_lo, plus.0 - m_lo);
            }
        }
    }
    if members.is_empty() {
        return Err(Error::abort(
            "all caloric family members were skipped; no Harnack ratio available",
        ));
    }
    Ok(HarnackReport {
        x: x as u32,
        r,
        c_h,
        theta: theta(c_h),
        members,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationScale {
    pub k: u32,
    pub r_k: u32,
    pub osc_full: f64,
    pub osc_upper: f64,
    /// 0 when the full oscillation vanishes.
    pub ratio: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationReport {
    pub x: u32,
    pub r0: u32,
    pub c_h: f64,
    pub slack: f64,
    pub scales: Vec<OscillationScale>,
    pub all_ok: bool,
}

/// Per-scale oscillation decay of a caloric u along the dyadic chain:
/// Osc(u, Q_+(k)) / Osc(u, Q(k)) against 1 - 1/C_H plus slack.
pub fn oscillation_decay_check(
    field: &ConductanceField,
    x: usize,
    r0: u32,
    u: &SpaceTimeFunction,
    c_h: f64,
    slack: f64,
) -> Result<OscillationReport> {
    validate_scale(field, x, r0)?;
    if !(c_h > 1.0) {
        return Err(Error::config(format!("oscillation bound needs c_h > 1, got {c_h}")));
    }
    let t_end = (r0 as f64) * (r0 as f64);
    if u.times.is_empty() || (u.times.last().unwrap() - t_end).abs() > 1e-6 {
        return Err(Error::config(
            "caloric grid must end exactly at r0^2 (use phi_time_grid)",
        ));
    }
    let bound = 1.0 - 1.0 / c_h + slack;
    let mut scales = Vec::new();
    let mut all_ok = true;
    for (k, cyl) in dyadic_chain(r0).iter().enumerate() {
        let ball = field.ball(x, cyl.r);
        let half = field.ball(x, cyl.r / 2);
        let len = cyl.hi - cyl.lo;
        let Some((lo_f, hi_f)) = u.extrema(&ball, cyl.lo, cyl.hi, true) else {
            return Err(Error::config("caloric grid misses a dyadic cylinder"));
        };
        let Some((lo_u, hi_u)) =
            u.extrema(&half, cyl.lo + 3.0 * len / 4.0, cyl.hi, false)
        else {
            return Err(Error::config("caloric grid misses an upper box"));
        };
        let osc_full = hi_f - lo_f;
        let osc_upper = hi_u - lo_u;
        let ratio = if osc_full > 0.0 { osc_upper / osc_full } else { 0.0 };
        let ok = ratio <= bound + 1e-12;
        all_ok &= ok;
        scales.push(OscillationScale {
            k: k as u32,
            r_k: cyl.r,
            osc_full,
            osc_upper,
            ratio,
            bound,
            ok,
        });
    }
    Ok(OscillationReport {
        x: x as u32,
        r0,
        c_h,
        slack,
        scales,
        all_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ConductanceLaw, LatticeBox};

    fn constant_field(side: usize) -> ConductanceField {
        let b = LatticeBox::new(2, side, Boundary::Torus).unwrap();
        ConductanceField::sample(b, ConductanceLaw::Constant { c: 1.0 }, 1).unwrap()
    }

    #[test]
    fn theta_formula() {
        assert!((theta(2.0) - 1.0).abs() < 1e-12);
        // C_H -> 1+ blows up but stays finite thanks to the clamp.
        assert!(theta(1.0).is_finite());
        assert!(theta(1.0) > 25.0);
        // Large C_H: Theta ~ 1/(C_H ln 2) -> 0.
        assert!(theta(1e9) < 1e-8);
    }

    #[test]
    fn grid_has_64_points_per_smallest_cylinder() {
        let g = phi_time_grid(4, 2);
        assert_eq!(g.len(), 256); // 16 / (4/64)
        assert!((g.last().unwrap() - 16.0).abs() < 1e-12);
        // Smallest cylinder (2, r=2): (12,16] contains exactly 64 points.
        let inside = g.iter().filter(|&&t| t > 12.0 && t <= 16.0).count();
        assert_eq!(inside, 64);
    }

    #[test]
    fn harnack_constant_on_constant_field() {
        let f = constant_field(12);
        let x = f.bbox.index(&[6, 6]);
        let rep = harnack_constant(&f, x, 4, &HarnackOptions::default()).unwrap();
        assert!(rep.c_h.is_finite() && rep.c_h > 1.0, "c_h = {}", rep.c_h);
        assert!(rep.theta > 0.0);
        assert!(!rep.members.is_empty());
        // Every recorded ratio is at most the reported constant.
        for m in &rep.members {
            assert!(m.ratio <= rep.c_h + 1e-12);
        }
    }

    #[test]
    fn family_shrink_cannot_increase_the_constant() {
        let f = constant_field(16);
        let x = f.bbox.index(&[8, 8]);
        let full = harnack_constant(&f, x, 4, &HarnackOptions::default()).unwrap();
        let interior = harnack_constant(
            &f,
            x,
            4,
            &HarnackOptions {
                sources: Some(vec![x]),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(interior.c_h <= full.c_h + 1e-12);
    }

    #[test]
    fn oscillation_ratios_bounded_by_construction() {
        let f = constant_field(12);
        let x = f.bbox.index(&[6, 6]);
        let rep = harnack_constant(&f, x, 4, &HarnackOptions::default()).unwrap();
        let grid = phi_time_grid(4, 2);
        let u = SpaceTimeFunction::kernel_from(&f, x, &grid, 1e-12).unwrap();
        let osc = oscillation_decay_check(&f, x, 4, &u, rep.c_h, 0.0).unwrap();
        assert!(osc.all_ok, "{:?}", osc.scales);
        assert_eq!(osc.scales.len(), 2); // r = 4, 2
        for s in &osc.scales {
            assert!(s.ratio <= 1.0 + 1e-12); // upper box is a subset
        }
    }

    #[test]
    fn constant_function_has_zero_ratios() {
        let f = constant_field(12);
        let x = f.bbox.index(&[6, 6]);
        let grid = phi_time_grid(4, 2);
        let u = SpaceTimeFunction::constant(&grid, f.vertex_count(), 3.0);
        let osc = oscillation_decay_check(&f, x, 4, &u, 2.0, 0.0).unwrap();
        for s in &osc.scales {
            assert_eq!(s.ratio, 0.0);
            assert_eq!(s.osc_full, 0.0);
        }
        assert!(osc.all_ok);
    }

    #[test]
    fn rejects_bad_scales() {
        let f = constant_field(12);
        assert!(harnack_constant(&f, 0, 3, &HarnackOptions::default()).is_err());
        assert!(harnack_constant(&f, 0, 2, &HarnackOptions::default()).is_err());
        assert!(harnack_constant(&f, 0, 8, &HarnackOptions::default()).is_err()); // wraps
        let grid = phi_time_grid(4, 2);
        let u = SpaceTimeFunction::constant(&grid, f.vertex_count(), 1.0);
        assert!(oscillation_decay_check(&f, 0, 4, &u, 1.0, 0.0).is_err());
        let bad_grid: Vec<f64> = grid.iter().map(|t| t * 0.5).collect();
        let v = SpaceTimeFunction::constant(&bad_grid, f.vertex_count(), 1.0);
        assert!(oscillation_decay_check(&f, 0, 4, &v, 2.0, 0.0).is_err());
    }
}
