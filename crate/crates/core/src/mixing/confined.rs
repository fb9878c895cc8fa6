//! Exact confined kernels.
//!
//! g(x,y) = P_x[Y_Delta = y | displacement stays in Q_rho on [0,Delta]] is
//! computed by uniformization with the complement of the displacement cube
//! absorbing: a_Delta(x,y) collects the mass of paths that never leave, and
//! g = a_Delta(x,.)/p_E with p_E = sum_y a_Delta(x,y) the staying
//! probability. On translation-invariant fields the entry is computed once
//! and translated to every other start.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField};
use crate::spectral::kernel::poisson_weights;
use crate::stats::{linear_fit, LinearFit};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ConfinedEntry {
    /// Vertices of the displacement cube, sorted.
    pub support: Vec<u32>,
    /// g values aligned with `support`.
    pub g: Vec<f64>,
    /// Staying probability p_E(rho), up to truncation tol.
    pub p_e: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfinedKernel {
    pub delta: f64,
    pub rho: f64,
    /// Half-width floor(rho/2) of the displacement cube.
    pub m: i64,
    pub starts: Vec<u32>,
    /// entries[entry_of[j]] is the kernel for starts[j].
    pub entry_of: Vec<usize>,
    pub entries: Vec<ConfinedEntry>,
}

impl ConfinedKernel {
    pub fn entry(&self, j: usize) -> &ConfinedEntry {
        &self.entries[self.entry_of[j]]
    }

    pub fn g_at(&self, j: usize, y: u32) -> f64 {
        let e = self.entry(j);
        match e.support.binary_search(&y) {
            Ok(i) => e.g[i],
            Err(_) => 0.0,
        }
    }
}

/// Vertices within unwrapped linf-distance m of x, sorted; on a hard wall
/// the cube is clipped to the box.
fn cube_around(field: &ConductanceField, x: usize, m: i64) -> Vec<u32> {
    let bbox = &field.bbox;
    let d = bbox.d;
    let side = bbox.side as i64;
    let cx = bbox.coords(x);
    let mut out = Vec::new();
    let mut off = vec![-m; d];
    'outer: loop {
        let mut coords = Vec::with_capacity(d);
        let mut ok = true;
        for a in 0..d {
            let c = cx[a] as i64 + off[a];
            match bbox.boundary {
                Boundary::Torus => coords.push(c.rem_euclid(side) as usize),
                Boundary::HardWall => {
                    if c < 0 || c >= side {
                        ok = false;
                        break;
                    }
                    coords.push(c as usize);
                }
            }
        }
        if ok {
            out.push(bbox.index(&coords) as u32);
        }
        let mut a = 0;
        loop {
            off[a] += 1;
            if off[a] <= m {
                break;
            }
            off[a] = -m;
            a += 1;
            if a == d {
                break 'outer;
            }
        }
    }
    out.sort_unstable();
    out
}

fn confined_entry(
    field: &ConductanceField,
    x: usize,
    delta: f64,
    m: i64,
    tol: f64,
) -> Result<ConfinedEntry> {
    let support = cube_around(field, x, m);
    let n = field.vertex_count();
    let mut loc = vec![u32::MAX; n];
    for (i, &v) in support.iter().enumerate() {
        loc[v as usize] = i as u32;
    }
    let ws = poisson_weights(delta, tol)?;
    let k = support.len();
    let mut cur = vec![0.0f64; k];
    cur[loc[x] as usize] = 1.0;
    let mut acc: Vec<f64> = cur.iter().map(|&c| ws[0] * c).collect();
    let mut next = vec![0.0f64; k];
    let mu = field.mu();
    for &w in &ws[1..] {
        for (i, &y) in support.iter().enumerate() {
            let mut s = 0.0;
            for slot in 0..field.slots() {
                let wgt = field.slot_weight(y as usize, slot);
                if wgt > 0.0 {
                    let (z, _) = field.neighbor_slot(y as usize, slot).unwrap();
                    let zi = loc[z];
                    if zi != u32::MAX {
                        s += cur[zi as usize] * wgt / mu[z];
                    }
                }
            }
            next[i] = s;
        }
        std::mem::swap(&mut cur, &mut next);
        if w > 0.0 {
            for (a, &c) in acc.iter_mut().zip(cur.iter()) {
                *a += w * c;
            }
        }
    }
    let p_e: f64 = acc.iter().sum();
    if p_e < 1e-6 {
        return Err(Error::config(format!(
            "staying probability {p_e:.3e} below 1e-6 for rho cube {m} at delta {delta}"
        )));
    }
    for a in acc.iter_mut() {
        *a /= p_e;
    }
    Ok(ConfinedEntry {
        support,
        g: acc,
        p_e,
    })
}

pub fn confined_kernel(
    field: &ConductanceField,
    delta: f64,
    rho: f64,
    starts: &[usize],
    tol: f64,
) -> Result<ConfinedKernel> {
    if starts.is_empty() {
        return Err(Error::config("confined kernel needs at least one start"));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::config("confinement cube side must be positive"));
    }
    let m = (rho / 2.0).floor() as i64;
    if field.bbox.boundary == Boundary::Torus && 2 * m + 1 > field.bbox.side as i64 {
        return Err(Error::config(format!(
            "displacement cube of width {} wraps the torus (side {})",
            2 * m + 1,
            field.bbox.side
        )));
    }
    for &x in starts {
        if field.vertex_weight(x) <= 0.0 {
            return Err(Error::config(format!("start vertex {x} is isolated")));
        }
    }
    let mut uniq: Vec<usize> = starts.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let mut entries = Vec::with_capacity(uniq.len());
    let translated = field.is_translation_invariant();
    for (i, &x) in uniq.iter().enumerate() {
        if translated && i > 0 {
            let map = field.translation_map(uniq[0], x);
            let base = &entries[0] as &ConfinedEntry;
            let mut pairs: Vec<(u32, f64)> = base
                .support
                .iter()
                .zip(&base.g)
                .map(|(&v, &g)| (map[v as usize], g))
                .collect();
            pairs.sort_unstable_by_key(|p| p.0);
            entries.push(ConfinedEntry {
                support: pairs.iter().map(|p| p.0).collect(),
                g: pairs.iter().map(|p| p.1).collect(),
                p_e: base.p_e,
            });
        } else {
            entries.push(confined_entry(field, x, delta, m, tol)?);
        }
    }
    let entry_of: Vec<usize> = starts
        .iter()
        .map(|&x| uniq.binary_search(&x).unwrap())
        .collect();
    Ok(ConfinedKernel {
        delta,
        rho,
        m,
        starts: starts.iter().map(|&x| x as u32).collect(),
        entry_of,
        entries,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OscillationPoint {
    pub delta: f64,
    /// max over start pairs (x,z) and vertices y of |g(x,y) - g(z,y)|/mu_y.
    pub max_osc: f64,
    /// Smallest C with max_osc <= C ell^theta delta^{-(d+theta)/2}.
    pub fitted_c: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelOscillationReport {
    pub ell: usize,
    pub rho: f64,
    pub theta: f64,
    pub points: Vec<OscillationPoint>,
    /// log-log regression of max_osc against delta.
    pub fit: Option<LinearFit>,
}

/// Starts range over the cube of side ell at `corner`; deltas must each be
/// at least ell^2 so the kernels have had time to overlap.
pub fn kernel_oscillation_check(
    field: &ConductanceField,
    corner: &[usize],
    ell: usize,
    rho: f64,
    deltas: &[f64],
    theta: f64,
    tol: f64,
) -> Result<KernelOscillationReport> {
    if deltas.is_empty() {
        return Err(Error::config("oscillation check needs deltas"));
    }
    if !(theta > 0.0) {
        return Err(Error::config("oscillation check needs theta > 0"));
    }
    let d = field.bbox.d;
    if corner.len() != d || ell < 2 {
        return Err(Error::config("start cube needs matching dimension, ell >= 2"));
    }
    for &dl in deltas {
        if dl < (ell * ell) as f64 {
            return Err(Error::config(format!(
                "delta {dl} below ell^2 = {}",
                ell * ell
            )));
        }
    }
    // Enumerate the start cube.
    let mut starts = Vec::with_capacity(ell.pow(d as u32));
    let mut off = vec![0usize; d];
    'outer: loop {
        let coords: Vec<usize> = (0..d)
            .map(|a| (corner[a] + off[a]) % field.bbox.side)
            .collect();
        starts.push(field.bbox.index(&coords));
        let mut a = 0;
        loop {
            off[a] += 1;
            if off[a] < ell {
                break;
            }
            off[a] = 0;
            a += 1;
            if a == d {
                break 'outer;
            }
        }
    }

    let n = field.vertex_count();
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let ck = confined_kernel(field, delta, rho, &starts, tol)?;
        // Dense rows over the whole field keep the pair loop simple.
        let mut dense = vec![0.0f64; starts.len() * n];
        for j in 0..starts.len() {
            let e = ck.entry(j);
            let row = &mut dense[j * n..(j + 1) * n];
            for (&v, &g) in e.support.iter().zip(&e.g) {
                row[v as usize] = g;
            }
        }
        let mut max_osc = 0.0f64;
        for i in 0..starts.len() {
            for j in (i + 1)..starts.len() {
                let (ri, rj) = (&dense[i * n..(i + 1) * n], &dense[j * n..(j + 1) * n]);
                for y in 0..n {
                    let mu = field.vertex_weight(y);
                    if mu > 0.0 {
                        max_osc = max_osc.max((ri[y] - rj[y]).abs() / mu);
                    }
                }
            }
        }
        let fitted_c =
            max_osc * delta.powf((d as f64 + theta) / 2.0) / (ell as f64).powf(theta);
        points.push(OscillationPoint {
            delta,
            max_osc,
            fitted_c,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|p| p.max_osc.max(1e-300).ln())
        .collect();
    Ok(KernelOscillationReport {
        ell,
        rho,
        theta,
        points,
        fit: linear_fit(&xs, &ys),
    })
}
