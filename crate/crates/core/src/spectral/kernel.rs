//! Heat kernel tables by uniformization of the jump chain.
//!
//! The walk has total jump rate 1, so p_t = e^{-t} sum_k t^k/k! P^k with P
//! the jump matrix. Truncating the Poisson weights at tail mass <= tol gives
//! total-variation error <= tol because P is row-stochastic. Weights are
//! computed in log space, so large t underflows term-by-term but never the
//! retained mass. Isolated vertices carry a self-loop P(z,z) = 1.
//!
//! The mu-normalized kernel is q_t(x,y) = P_x(Y_t = y)/mu_y, symmetric in
//! (x,y) by reversibility.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::stats::poisson_log_pmf;

/// Poisson(t) weights 0..=k_max with total mass >= 1 - tol and k_max >= t.
pub(crate) fn poisson_weights(t: f64, tol: f64) -> Result<Vec<f64>> {
    let cap = (t + 15.0 * (t + 30.0).sqrt() + 150.0).ceil();
    if cap > 5.0e6 {
        return Err(Error::abort(format!(
            "uniformization at t={t} needs ~{cap} matrix applications; refusing"
        )));
    }
    let mut ws = Vec::with_capacity(t as usize + 64);
    let mut cum = 0.0f64;
    let mut k = 0u64;
    loop {
        let w = poisson_log_pmf(t, k).exp();
        ws.push(w);
        cum += w;
        if cum >= 1.0 - tol && k as f64 >= t {
            return Ok(ws);
        }
        k += 1;
        if k as f64 > cap {
            return Err(Error::abort(format!(
                "Poisson weights at t={t} did not reach mass 1-{tol} by k={k}"
            )));
        }
    }
}

fn clamp_tol(tol: f64) -> f64 {
    tol.clamp(1e-15, 1e-3)
}

/// dst = src P (one jump of a distribution), gather form. Isolated vertices
/// keep their mass.
pub fn apply_jump_distribution(field: &ConductanceField, src: &[f64], dst: &mut [f64]) {
    let n = field.vertex_count();
    let slots = field.slots();
    let mu = field.mu();
    for y in 0..n {
        let mut acc = if mu[y] == 0.0 { src[y] } else { 0.0 };
        for s in 0..slots {
            let w = field.slot_weight(y, s);
            if w > 0.0 {
                let (z, _) = field.neighbor_slot(y, s).unwrap();
                acc += src[z] * w / mu[z];
            }
        }
        dst[y] = acc;
    }
}

/// dst = P src (one jump acting on a function). Isolated vertices keep
/// their value.
pub fn apply_jump_function(field: &ConductanceField, src: &[f64], dst: &mut [f64]) {
    let n = field.vertex_count();
    let slots = field.slots();
    let mu = field.mu();
    for x in 0..n {
        if mu[x] == 0.0 {
            dst[x] = src[x];
            continue;
        }
        let mut acc = 0.0;
        for s in 0..slots {
            let w = field.slot_weight(x, s);
            if w > 0.0 {
                let (z, _) = field.neighbor_slot(x, s).unwrap();
                acc += w * src[z];
            }
        }
        dst[x] = acc / mu[x];
    }
}

fn evolve(
    field: &ConductanceField,
    init: &[f64],
    t: f64,
    tol: f64,
    function_mode: bool,
) -> Result<Vec<f64>> {
    let n = field.vertex_count();
    if init.len() != n {
        return Err(Error::config("initial vector length mismatch"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::config(format!("time {t} must be finite and >= 0")));
    }
    if t == 0.0 {
        return Ok(init.to_vec());
    }
    let tol = clamp_tol(tol);
    let ws = poisson_weights(t, tol)?;
    let mut cur = init.to_vec();
    let mut next = vec![0.0f64; n];
    let mut out = vec![0.0f64; n];
    for (o, &c) in out.iter_mut().zip(cur.iter()) {
        *o = ws[0] * c;
    }
    for &w in &ws[1..] {
        if function_mode {
            apply_jump_function(field, &cur, &mut next);
        } else {
            apply_jump_distribution(field, &cur, &mut next);
        }
        std::mem::swap(&mut cur, &mut next);
        if w > 0.0 {
            for (o, &c) in out.iter_mut().zip(cur.iter()) {
                *o += w * c;
            }
        }
    }
    Ok(out)
}

/// nu P_t: push a mass vector forward time t. Error <= tol in total
/// variation (for probability vectors).
pub fn evolve_distribution(
    field: &ConductanceField,
    init: &[f64],
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    evolve(field, init, t, tol, false)
}

/// P_t f: apply the semigroup to a function, (P_t f)(x) = E_x f(Y_t).
/// Error <= tol * max|f|.
pub fn evolve_function(
    field: &ConductanceField,
    f: &[f64],
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    evolve(field, f, t, tol, true)
}

fn require_live(field: &ConductanceField, x: usize) -> Result<()> {
    if x >= field.vertex_count() {
        return Err(Error::config(format!("vertex {x} out of range")));
    }
    if field.vertex_weight(x) == 0.0 {
        return Err(Error::config(format!(
            "vertex {x} is isolated (mu = 0); the walk is undefined there"
        )));
    }
    Ok(())
}

/// P_x(Y_t = .) as a full row.
pub fn distribution_row(
    field: &ConductanceField,
    x: usize,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    require_live(field, x)?;
    let mut init = vec![0.0f64; field.vertex_count()];
    init[x] = 1.0;
    evolve_distribution(field, &init, t, tol)
}

/// q_t(x, .) = P_x(Y_t = .)/mu, with 0 at isolated vertices.
pub fn kernel_row(field: &ConductanceField, x: usize, t: f64, tol: f64) -> Result<Vec<f64>> {
    let mut row = distribution_row(field, x, t, tol)?;
    for (p, &m) in row.iter_mut().zip(field.mu()) {
        *p = if m > 0.0 { *p / m } else { 0.0 };
    }
    Ok(row)
}

/// q_t(x, .) along a strictly increasing time grid, computed by stepping the
/// distribution forward between consecutive times. The per-step tolerance is
/// tol / times.len(), so the accumulated truncation error stays <= tol.
pub fn kernel_series(
    field: &ConductanceField,
    x: usize,
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    require_live(field, x)?;
    if times.is_empty() {
        return Err(Error::config("kernel series needs at least one time"));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::config("kernel series times must be strictly increasing"));
        }
    }
    if !(times[0] > 0.0) {
        return Err(Error::config("kernel series times must be positive"));
    }
    let tol = clamp_tol(tol) / times.len() as f64;
    let n = field.vertex_count();
    let mu = field.mu();
    let mut cur = vec![0.0f64; n];
    cur[x] = 1.0;
    let mut prev_t = 0.0f64;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        cur = evolve_distribution(field, &cur, t - prev_t, tol)?;
        prev_t = t;
        out.push(
            cur.iter()
                .zip(mu)
                .map(|(&p, &m)| if m > 0.0 { p / m } else { 0.0 })
                .collect(),
        );
    }
    Ok(out)
}

/// Dense table of endpoint distributions from many sources at one time.
///
/// On an exactly translation-invariant torus field every source row is an
/// index translation of the row from vertex 0 (the gather sums visit slots
/// in the same order with equal weights), so the table is built from a
/// single uniformization sweep and is bit-identical to per-source
/// recomputation.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub t: f64,
    pub tol: f64,
    pub sources: Vec<u32>,
    pub translated: bool,
    n: usize,
    rows: Vec<f64>,
}

impl KernelTable {
    pub fn build(
        field: &ConductanceField,
        sources: &[usize],
        t: f64,
        tol: f64,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::config("kernel table needs at least one source"));
        }
        for &x in sources {
            require_live(field, x)?;
        }
        let n = field.vertex_count();
        let mut rows = vec![0.0f64; sources.len() * n];
        let translated = field.is_translation_invariant() && field.vertex_weight(0) > 0.0;
        if translated {
            let base = distribution_row(field, 0, t, tol)?;
            for (i, &x) in sources.iter().enumerate() {
                let map = field.translation_map(0, x);
                let row = &mut rows[i * n..(i + 1) * n];
                for (y, &py) in base.iter().enumerate() {
                    row[map[y] as usize] = py;
                }
            }
        } else {
            for (i, &x) in sources.iter().enumerate() {
                let r = distribution_row(field, x, t, tol)?;
                rows[i * n..(i + 1) * n].copy_from_slice(&r);
            }
        }
        Ok(KernelTable {
            t,
            tol: clamp_tol(tol),
            sources: sources.iter().map(|&x| x as u32).collect(),
            translated,
            n,
            rows,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// P_{x_i}(Y_t = y) for source index i.
    #[inline]
    pub fn mass(&self, i: usize, y: usize) -> f64 {
        self.rows[i * self.n + y]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    /// q_t(x_i, y).
    #[inline]
    pub fn q(&self, i: usize, y: usize, field: &ConductanceField) -> f64 {
        let m = field.vertex_weight(y);
        if m > 0.0 {
            self.mass(i, y) / m
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CaloricCheck {
    pub t: f64,
    pub dt: f64,
    /// max over sources and live vertices of
    /// |(q_{t+dt} - q_{t-dt})/(2 dt) - (L q_t)|.
    pub max_residual: f64,
}

/// Checks that t -> q_t(x, .) solves the heat equation d/dt q = L q, with the
/// time derivative replaced by a central difference of width dt.
pub fn check_caloric(
    field: &ConductanceField,
    sources: &[usize],
    t: f64,
    dt: f64,
    tol: f64,
) -> Result<CaloricCheck> {
    if !(dt > 0.0) || !(t - dt > 0.0) {
        return Err(Error::config("caloric check needs 0 < dt < t"));
    }
    if sources.is_empty() {
        return Err(Error::config("caloric check needs at least one source"));
    }
    let times = [t - dt, t, t + dt];
    let n = field.vertex_count();
    let mu = field.mu();
    let mut max_residual = 0.0f64;
    let mut pq = vec![0.0f64; n];
    for &x in sources {
        let rows = kernel_series(field, x, &times, tol)?;
        apply_jump_function(field, &rows[1], &mut pq);
        for y in 0..n {
            if mu[y] <= 0.0 {
                continue;
            }
            let dq = (rows[2][y] - rows[0][y]) / (2.0 * dt);
            let lq = pq[y] - rows[1][y];
            max_residual = max_residual.max((dq - lq).abs());
        }
    }
    Ok(CaloricCheck {
        t,
        dt,
        max_residual,
    })
}
