//! Space-time cell occupation statistics.
//!
//! The cell geometry anchors the super cube at the lattice corner: with
//! overlap eta and cube side ell, the super cube Q* is [0, (2 eta + 1) ell)^d,
//! the center cube is [eta ell, (eta + 1) ell)^d, and the infection window is
//! T = ell^(5/3) inside a time cell of length beta_time. Paths are tracked in
//! unwrapped coordinates, so particles that wrap the torus count as having
//! left Q* and co-location means equality in Z^d, not just on the quotient.

use crate::error::{Error, Result};
use crate::lattice::{ConductanceField};
use crate::rng::{derive_seed, rng_from};
use crate::stats::{linear_fit, wilson_interval, LinearFit, WilsonInterval};
use rand::rngs::SmallRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::Serialize;
use std::collections::HashMap;

/// Geometry and rates for one space-time cell. `beta_time` is the time-cell
/// length, unrelated to the mass fraction that the density certificate also
/// calls beta. `t_infect` defaults to ell^(5/3) and must stay below
/// `beta_time`; `confinement_w` is the Q_{w ell} displacement width used by
/// the associated-probability estimate; `gamma` > 0 additionally requires
/// the involved particles not to recover during the cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellEventSpec {
    pub ell: usize,
    pub eta: usize,
    pub beta_time: f64,
    pub t_infect: f64,
    pub lambda0: f64,
    pub gamma: f64,
    pub confinement_w: Option<f64>,
}

impl CellEventSpec {
    /// Defaults: T = ell^(5/3), beta_time = 4 ell^2 (the fixed-ratio policy),
    /// no recovery, no confinement.
    pub fn new(ell: usize, eta: usize, lambda0: f64) -> Self {
        let t = (ell as f64).powf(5.0 / 3.0);
        CellEventSpec {
            ell,
            eta,
            beta_time: 4.0 * (ell * ell) as f64,
            t_infect: t,
            lambda0,
            gamma: 0.0,
            confinement_w: None,
        }
    }

    /// Side of the super cube (2 eta + 1) ell.
    pub fn super_side(&self) -> usize {
        (2 * self.eta + 1) * self.ell
    }

    pub fn validate(&self, field: &ConductanceField) -> Result<()> {
        if self.ell < 2 {
            return Err(Error::config(format!("ell {} must be at least 2", self.ell)));
        }
        if self.eta < 1 {
            return Err(Error::config("overlap eta must be at least 1"));
        }
        if !(self.t_infect > 0.0) || !(self.t_infect < self.beta_time) {
            return Err(Error::config(format!(
                "need 0 < T < beta_time, got T={} beta_time={}",
                self.t_infect, self.beta_time
            )));
        }
        if !(self.lambda0 >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::config("lambda0 and gamma must be nonnegative"));
        }
        if let Some(w) = self.confinement_w {
            if !(w > 0.0) {
                return Err(Error::config(format!("confinement width {w} must be positive")));
            }
        }
        if self.super_side() > field.bbox.side {
            return Err(Error::config(format!(
                "super cube side {} exceeds the box side {}",
                self.super_side(),
                field.bbox.side
            )));
        }
        Ok(())
    }
}

/// One jump of the walk tracked in unwrapped coordinates.
fn jump_step<R: Rng>(
    field: &ConductanceField,
    v: &mut usize,
    coords: &mut [i64],
    rng: &mut R,
) {
    let u: f64 = rng.random();
    let slot = field.sample_jump_slot(*v, u);
    let (w, _) = field.neighbor_slot(*v, slot).expect("sampled slot exists");
    let axis = slot / 2;
    coords[axis] += if slot % 2 == 0 { 1 } else { -1 };
    *v = w;
}

fn inside(coords: &[i64], lo: i64, hi: i64) -> bool {
    coords.iter().all(|&c| lo <= c && c < hi)
}

/// Collision census over one cell: a tagged path confined to the middle of
/// the super cube, a Poisson(lambda0 mu / 2) background, and the counts of
/// background particles that stay in Q* over [0, T] (Upsilon) and
/// additionally collide with the tagged path (Upsilon').
#[derive(Debug, Clone, Serialize)]
pub struct CollisionCensus {
    pub ell: usize,
    pub eta: usize,
    pub lambda0: f64,
    pub t_infect: f64,
    /// Spacing ell^(4/3) between the coarse collision-sampling times.
    pub w_spacing: f64,
    pub n_background: u64,
    /// Particles that never leave Q* during [0, T].
    pub upsilon: u64,
    /// Contained particles sharing a site with the tagged path at some time.
    pub upsilon_prime: u64,
    /// Contained particles on the tagged path at one of the times jW for
    /// j = 1, 2, ...; checking only every ell^(4/3) time units is what makes
    /// the count scale like ell^(1/3), while `upsilon_prime` grows like
    /// T / log T in d = 2.
    pub upsilon_sampled: u64,
    pub tagged_trials: u64,
}

/// Tagged path confined to `[lo, hi)^d` by rejection, as bare jump times
/// and vertices. Aborts when acceptance looks hopeless.
fn confined_tagged_path<R: Rng>(
    field: &ConductanceField,
    start: usize,
    horizon: f64,
    lo: i64,
    hi: i64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<u32>, u64)> {
    
    let max_trials = 200_000u64;
    let start_coords: Vec<i64> =
        field.bbox.coords(start).iter().map(|&c| c as i64).collect();
    let mut trials = 0;
    'attempt: loop {
        trials += 1;
        if trials > max_trials {
            return Err(Error::abort(format!(
                "tagged path rejection exhausted {max_trials} trials \
                 (containment [{lo}, {hi}), horizon {horizon})"
            )));
        }
        let mut times = vec![0.0f64];
        let mut verts = vec![start as u32];
        let mut v = start;
        let mut coords = start_coords.clone();
        let mut t = 0.0;
        loop {
            let dt: f64 = Exp1.sample(rng);
            t += dt;
            if t > horizon {
                return Ok((times, verts, trials));
            }
            jump_step(field, &mut v, &mut coords, rng);
            if !inside(&coords, lo, hi) {
                continue 'attempt;
            }
            times.push(t);
            verts.push(v as u32);
        }
    }
}

pub fn collision_census(
    field: &ConductanceField,
    spec: &CellEventSpec,
    seed: u64,
) -> Result<CollisionCensus> {
    spec.validate(field)?;
    let d = field.bbox.d;
    let ell = spec.ell as i64;
    let eta = spec.eta as i64;
    let s = (2 * eta + 1) * ell;
    let t_end = spec.t_infect;
    let mut rng = rng_from(seed, "collision-census", 0);

    // Tagged start: uniform over the center cube.
    let start_coords: Vec<usize> = (0..d)
        .map(|_| rng.random_range((eta * ell) as usize..((eta + 1) * ell) as usize))
        .collect();
    let start = field.bbox.index(&start_coords);
    if field.vertex_weight(start) == 0.0 {
        return Err(Error::config(format!(
            "tagged start {start_coords:?} is isolated"
        )));
    }
    // Containment cube [ell, 2 eta ell)^d relative to the super-cube corner,
    // one ell-layer in from the boundary; for eta = 1 it is the center cube.
    let (times, verts, tagged_trials) =
        confined_tagged_path(field, start, t_end, ell, 2 * eta * ell, &mut rng)?;

    // Sojourn intervals of the tagged path per vertex, clipped to [0, T].
    let mut visits: Vec<Vec<(f64, f64)>> = vec![Vec::new(); field.vertex_count()];
    for k in 0..verts.len() {
        let t0 = times[k];
        let t1 = if k + 1 < times.len() { times[k + 1] } else { t_end };
        visits[verts[k] as usize].push((t0, t1));
    }
    // Tagged position at the sampling times jW, W = ell^(4/3).
    let w_spacing = (spec.ell as f64).powf(4.0 / 3.0);
    let n_samples = (t_end / w_spacing).floor() as usize;
    let sample_times: Vec<f64> = (1..=n_samples).map(|j| j as f64 * w_spacing).collect();
    let rho_at: Vec<u32> = sample_times
        .iter()
        .map(|&tj| {
            let k = times.partition_point(|&u| u <= tj);
            verts[k - 1]
        })
        .collect();

    let mut census = CollisionCensus {
        ell: spec.ell,
        eta: spec.eta,
        lambda0: spec.lambda0,
        t_infect: t_end,
        w_spacing,
        n_background: 0,
        upsilon: 0,
        upsilon_prime: 0,
        upsilon_sampled: 0,
        tagged_trials,
    };

    // Background cloud on Q* minus the tagged start vertex.
    let mut origin = vec![0usize; d];
    for x_off in cube_offsets(d, s as usize) {
        for a in 0..d {
            origin[a] = x_off[a];
        }
        let x = field.bbox.index(&origin);
        if x == start {
            continue;
        }
        let mu = field.vertex_weight(x);
        if mu == 0.0 || spec.lambda0 == 0.0 {
            continue;
        }
        let count = Poisson::new(spec.lambda0 * mu / 2.0)
            .map_err(|e| Error::config(format!("bad intensity at {x}: {e}")))?
            .sample(&mut rng) as u64;
        for _ in 0..count {
            census.n_background += 1;
            let (contained, collided, sampled) = background_particle(
                field,
                x,
                t_end,
                s,
                &visits,
                &sample_times,
                &rho_at,
                &mut rng,
            );
            if contained {
                census.upsilon += 1;
                if collided {
                    census.upsilon_prime += 1;
                }
                if sampled {
                    census.upsilon_sampled += 1;
                }
            }
        }
    }
    Ok(census)
}

/// Run one background particle to time T with early exit on leaving Q*.
/// Returns (stayed in Q*, collided continuously, collided at a sample time).
#[allow(clippy::too_many_arguments)]
fn background_particle(
    field: &ConductanceField,
    start: usize,
    t_end: f64,
    s: i64,
    visits: &[Vec<(f64, f64)>],
    sample_times: &[f64],
    rho_at: &[u32],
    rng: &mut SmallRng,
) -> (bool, bool, bool) {
    
    let mut v = start;
    let mut coords: Vec<i64> = field.bbox.coords(start).iter().map(|&c| c as i64).collect();
    let mut t = 0.0f64;
    let mut collided = false;
    let mut sampled = false;
    let mut j = 0usize;
    loop {
        let dt: f64 = Exp1.sample(rng);
        let t_next = t + dt;
        let t_clip = t_next.min(t_end);
        if !collided {
            // Overlap of the sojourn [t, t_clip] with any tagged visit to v.
            let vs = &visits[v];
            if !vs.is_empty() {
                let idx = vs.partition_point(|&(_, b)| b < t);
                if idx < vs.len() && vs[idx].0 <= t_clip {
                    collided = true;
                }
            }
        }
        while j < sample_times.len() && sample_times[j] < t_next {
            if rho_at[j] as usize == v {
                sampled = true;
            }
            j += 1;
        }
        if t_next > t_end {
            return (true, collided, sampled);
        }
        jump_step(field, &mut v, &mut coords, rng);
        if !inside(&coords, 0, s) {
            return (false, false, false);
        }
        t = t_next;
    }
}

/// Row-major enumeration of the offsets of a d-dimensional cube of the
/// given side.
fn cube_offsets(d: usize, side: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = side.pow(d as u32);
    (0..total).map(move |mut k| {
        let mut off = vec![0usize; d];
        for a in (0..d).rev() {
            off[a] = k % side;
            k /= side;
        }
        off
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Independent uniform vertices of the super cube.
    Uniform,
    /// Everyone at the corner of Q* diagonally opposite the target cube.
    WorstCorner,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadPoint {
    pub n: u64,
    pub reps: u64,
    pub hits: u64,
    pub frequency: f64,
    pub failure: f64,
    pub wilson: WilsonInterval,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpreadReport {
    pub ell: usize,
    pub eta: usize,
    pub beta_time: f64,
    pub t_infect: f64,
    pub z: Vec<i64>,
    pub placement: Placement,
    pub points: Vec<SpreadPoint>,
    /// ln(failure frequency) regressed on N over the points with failures.
    pub fit: Option<LinearFit>,
    /// Minus the fitted slope, the empirical c_p of the exp(-N c_p) bound.
    pub c_p_hat: Option<f64>,
}

/// Spread experiment: N particles dropped in the super cube at time T,
/// evolved freely for beta_time - T, success when at least one ends in the
/// target cube shifted by z. Reps share one prefix-coupled particle batch
/// per rep, so the failure frequency is exactly nonincreasing in N.
#[allow(clippy::too_many_arguments)]
pub fn spread_probability(
    field: &ConductanceField,
    ns: &[u64],
    ell: usize,
    eta: usize,
    beta_time: f64,
    z: &[i64],
    placement: Placement,
    reps: u64,
    seed: u64,
) -> Result<SpreadReport> {
    let spec = CellEventSpec {
        beta_time,
        ..CellEventSpec::new(ell, eta, 0.0)
    };
    spec.validate(field)?;
    let d = field.bbox.d;
    if z.len() != d {
        return Err(Error::config(format!("z has {} entries, need {d}", z.len())));
    }
    if z.iter().any(|&za| za.unsigned_abs() as usize > eta) {
        return Err(Error::config(format!("z {z:?} must lie in {{-eta..eta}}^d")));
    }
    if ns.is_empty() || reps == 0 {
        return Err(Error::config("need at least one N and one rep"));
    }
    let s = spec.super_side() as i64;
    let ell_i = ell as i64;
    let eta_i = eta as i64;
    let target_lo: Vec<i64> = z.iter().map(|&za| (eta_i + za) * ell_i).collect();
    let n_max = *ns.iter().max().unwrap() as usize;
    let evolve = beta_time - spec.t_infect;

    let corner: Vec<usize> = z
        .iter()
        .map(|&za| if za >= 0 { 0usize } else { (s - 1) as usize })
        .collect();

    // hits_at[k][r] = rank (1-based) of the first successful particle in
    // rep r, or 0; a prefix of n particles succeeds iff rank <= n.
    let mut first_hit = vec![0u64; reps as usize];
    let mut origin = vec![0usize; d];
    for r in 0..reps {
        let mut rng = rng_from(derive_seed(seed, "spread", r), "particles", 0);
        for k in 0..n_max {
            for a in 0..d {
                origin[a] = match placement {
                    Placement::Uniform => rng.random_range(0..s as usize),
                    Placement::WorstCorner => corner[a],
                };
            }
            let v0 = field.bbox.index(&origin);
            let mut v = v0;
            let mut coords: Vec<i64> = origin.iter().map(|&c| c as i64).collect();
            if field.vertex_weight(v) > 0.0 {
                let mut t = 0.0f64;
                loop {
                    let dt: f64 = Exp1.sample(&mut rng);
                    t += dt;
                    if t > evolve {
                        break;
                    }
                    jump_step(field, &mut v, &mut coords, &mut rng);
                }
            }
            let in_target = (0..d).all(|a| {
                coords[a] >= target_lo[a] && coords[a] < target_lo[a] + ell_i
            });
            if in_target && first_hit[r as usize] == 0 {
                first_hit[r as usize] = k as u64 + 1;
                break;
            }
        }
    }

    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let hits = first_hit
            .iter()
            .filter(|&&rank| rank != 0 && rank <= n)
            .count() as u64;
        let frequency = hits as f64 / reps as f64;
        points.push(SpreadPoint {
            n,
            reps,
            hits,
            frequency,
            failure: 1.0 - frequency,
            wilson: wilson_interval(hits, reps),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &points {
        if p.failure > 0.0 {
            xs.push(p.n as f64);
            ys.push(p.failure.ln());
        }
    }
    let fit = linear_fit(&xs, &ys);
    let c_p_hat = fit.as_ref().map(|f| -f.slope);
    Ok(SpreadReport {
        ell,
        eta,
        beta_time,
        t_infect: spec.t_infect,
        z: z.to_vec(),
        placement,
        points,
        fit,
        c_p_hat,
    })
}

/// Per-rep outcome of the cell event.
#[derive(Debug, Clone, Serialize)]
pub struct CellRep {
    /// Every cube of the super cube held a collided particle at beta_time.
    pub e_st: bool,
    /// Background particles that collided with the tagged particle in [0, T].
    pub upsilon_prime: u64,
    /// Tagged particle stayed one ell-layer inside Q* during [0, T]
    /// (diagnostic only; the event itself does not require it).
    pub tagged_confined: bool,
    /// Collided particles still inside Q* at time T.
    pub present_at_t: u64,
    pub covered: u64,
    pub n_cubes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellEventReport {
    pub ell: usize,
    pub eta: usize,
    pub beta_time: f64,
    pub t_infect: f64,
    pub lambda0: f64,
    pub gamma: f64,
    /// Density reduction: particles are Poisson((1-eps) lambda0 mu / 2).
    pub eps: f64,
    /// Displacement confinement side rho = w ell, when estimating nu.
    pub confinement: Option<f64>,
    pub reps: u64,
    pub successes: u64,
    pub frequency: f64,
    pub wilson: WilsonInterval,
    pub outcomes: Vec<CellRep>,
}

/// Pack unwrapped coordinates into a hash key (16-bit signed lanes).
fn coord_key(coords: &[i64]) -> u64 {
    let mut key = 0u64;
    for &c in coords {
        debug_assert!((-32768..32768).contains(&c));
        key = (key << 16) | ((c + 32768) as u64 & 0xffff);
    }
    key
}

/// Free or displacement-confined walk to `horizon`, recording the sojourn
/// intervals (key -> spans) clipped to [0, t_index], the unwrapped position
/// at `t_mid`, and the final position. Confinement is by rejection on
/// max displacement rho/2 with a trial cap.
struct PathSummary {
    coords_mid: Vec<i64>,
    coords_end: Vec<i64>,
    stayed_inner: bool,
}

#[allow(clippy::too_many_arguments)]
fn cell_walk(
    field: &ConductanceField,
    start: usize,
    horizon: f64,
    t_index: f64,
    t_mid: f64,
    rho: Option<f64>,
    inner: Option<(i64, i64)>,
    mut on_sojourn: impl FnMut(&[i64], f64, f64),
    rng: &mut SmallRng,
) -> Result<PathSummary> {
    let d = field.bbox.d;
    let start_coords: Vec<i64> =
        field.bbox.coords(start).iter().map(|&c| c as i64).collect();
    let half = rho.map(|r| r / 2.0);
    let max_trials = if rho.is_some() { 20_000u64 } else { 1 };
    let mut trials = 0u64;
    'attempt: loop {
        trials += 1;
        if trials > max_trials {
            return Err(Error::abort(format!(
                "confined cell walk exhausted {max_trials} trials (rho {rho:?})"
            )));
        }
        let mut v = start;
        let mut coords = start_coords.clone();
        let mut t = 0.0f64;
        let mut sojourns: Vec<(Vec<i64>, f64, f64)> = Vec::new();
        let mut coords_mid: Option<Vec<i64>> = None;
        let mut stayed_inner = true;
        loop {
            let dt: f64 = Exp1.sample(rng);
            let t_next = t + dt;
            if t < t_index {
                sojourns.push((coords.clone(), t, t_next.min(t_index)));
            }
            if let Some((lo, hi)) = inner {
                if t < t_index && !inside(&coords, lo, hi) {
                    stayed_inner = false;
                }
            }
            if coords_mid.is_none() && t_next > t_mid {
                coords_mid = Some(coords.clone());
            }
            if t_next > horizon {
                for (c, a, b) in &sojourns {
                    on_sojourn(c, *a, *b);
                }
                return Ok(PathSummary {
                    coords_mid: coords_mid.unwrap_or_else(|| coords.clone()),
                    coords_end: coords,
                    stayed_inner,
                });
            }
            jump_step(field, &mut v, &mut coords, rng);
            if let Some(h) = half {
                let dev = (0..d)
                    .map(|a| (coords[a] - start_coords[a]).abs())
                    .max()
                    .unwrap_or(0);
                if dev as f64 > h {
                    continue 'attempt;
                }
            }
            t = t_next;
        }
    }
}

/// Shared Monte Carlo body for the cell event and its associated
/// probability. `eps` thins the background density, `rho` confines every
/// motion (the tagged one included) to a displacement cube by rejection.
fn run_cell(
    field: &ConductanceField,
    spec: &CellEventSpec,
    eps: f64,
    rho: Option<f64>,
    rng: &mut SmallRng,
) -> Result<CellRep> {
    let d = field.bbox.d;
    let ell = spec.ell as i64;
    let eta = spec.eta as i64;
    let s = (2 * eta + 1) * ell;
    let t_infect = spec.t_infect;
    let beta = spec.beta_time;

    // Tagged particle: uniform start in the center cube.
    let start_coords: Vec<usize> = (0..d)
        .map(|_| rng.random_range((eta * ell) as usize..((eta + 1) * ell) as usize))
        .collect();
    let start = field.bbox.index(&start_coords);
    if field.vertex_weight(start) == 0.0 {
        return Err(Error::config(format!("tagged start {start_coords:?} is isolated")));
    }
    let tagged_recovery: f64 = if spec.gamma > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / spec.gamma
    } else {
        f64::INFINITY
    };

    let mut visits: HashMap<u64, Vec<(f64, f64)>> = HashMap::new();
    let tagged = cell_walk(
        field,
        start,
        beta,
        t_infect,
        t_infect,
        rho,
        Some((ell, 2 * eta * ell)),
        |coords, a, b| visits.entry(coord_key(coords)).or_default().push((a, b)),
        rng,
    )?;

    let n_cubes = ((2 * eta + 1) as u64).pow(d as u32);
    let mut covered = vec![false; n_cubes as usize];
    let mut rep = CellRep {
        e_st: false,
        upsilon_prime: 0,
        tagged_confined: tagged.stayed_inner,
        present_at_t: 0,
        covered: 0,
        n_cubes,
    };

    let density = (1.0 - eps) * spec.lambda0 / 2.0;
    let mut origin = vec![0usize; d];
    for off in cube_offsets(d, s as usize) {
        for a in 0..d {
            origin[a] = off[a];
        }
        let x = field.bbox.index(&origin);
        let mu = field.vertex_weight(x);
        if mu == 0.0 || density == 0.0 {
            continue;
        }
        let count = Poisson::new(density * mu)
            .map_err(|e| Error::config(format!("bad intensity at {x}: {e}")))?
            .sample(rng) as u64;
        for _ in 0..count {
            let recovery: f64 = if spec.gamma > 0.0 {
                let e: f64 = Exp1.sample(rng);
                e / spec.gamma
            } else {
                f64::INFINITY
            };
            let mut collided = false;
            let summary = cell_walk(
                field,
                x,
                beta,
                t_infect,
                t_infect,
                rho,
                None,
                |coords, a, b| {
                    if !collided {
                        if let Some(vs) = visits.get(&coord_key(coords)) {
                            if vs.iter().any(|&(va, vb)| va <= b && a <= vb) {
                                collided = true;
                            }
                        }
                    }
                },
                rng,
            )?;
            if !collided {
                continue;
            }
            rep.upsilon_prime += 1;
            if inside(&summary.coords_mid, 0, s) {
                rep.present_at_t += 1;
            }
            // Under recovery, only particles that do not recover during the
            // cell may carry the infection onward.
            if recovery <= beta {
                continue;
            }
            let cube: Option<usize> = {
                let mut idx = 0usize;
                let mut ok = true;
                for a in 0..d {
                    let k = summary.coords_end[a].div_euclid(ell);
                    if k < 0 || k > 2 * eta {
                        ok = false;
                        break;
                    }
                    idx = idx * (2 * eta as usize + 1) + k as usize;
                }
                ok.then_some(idx)
            };
            if let Some(c) = cube {
                covered[c] = true;
            }
        }
    }
    rep.covered = covered.iter().filter(|&&c| c).count() as u64;
    rep.e_st = rep.covered == n_cubes && tagged_recovery > beta;
    Ok(rep)
}

fn cell_report(
    field: &ConductanceField,
    spec: &CellEventSpec,
    eps: f64,
    rho: Option<f64>,
    reps: u64,
    seed: u64,
) -> Result<CellEventReport> {
    spec.validate(field)?;
    if reps == 0 {
        return Err(Error::config("need at least one rep"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::config(format!("eps {eps} must lie in [0, 1]")));
    }
    let mut outcomes = Vec::with_capacity(reps as usize);
    let mut successes = 0u64;
    for r in 0..reps {
        let mut rng = rng_from(derive_seed(seed, "cell", r), "rep", 0);
        let rep = run_cell(field, spec, eps, rho, &mut rng)?;
        if rep.e_st {
            successes += 1;
        }
        outcomes.push(rep);
    }
    Ok(CellEventReport {
        ell: spec.ell,
        eta: spec.eta,
        beta_time: spec.beta_time,
        t_infect: spec.t_infect,
        lambda0: spec.lambda0,
        gamma: spec.gamma,
        eps,
        confinement: rho,
        reps,
        successes,
        frequency: successes as f64 / reps as f64,
        wilson: wilson_interval(successes, reps),
        outcomes,
    })
}

/// Empirical P[E_st]: a tagged particle in the center cube, a
/// Poisson(lambda0 mu / 2) background on the super cube, free motion; the
/// event asks every cube of the super cube to hold, at time beta_time, a
/// particle that collided with the tagged one during [0, T].
pub fn estimate_cell_event(
    field: &ConductanceField,
    spec: &CellEventSpec,
    reps: u64,
    seed: u64,
) -> Result<CellEventReport> {
    cell_report(field, spec, 0.0, None, reps, seed)
}

/// Worst-case variant of the cell event: density thinned to
/// (1 - eps) lambda0 and every motion confined by rejection to the
/// displacement cube Q_{w ell}.
pub fn estimate_nu(
    field: &ConductanceField,
    spec: &CellEventSpec,
    eps: f64,
    reps: u64,
    seed: u64,
) -> Result<CellEventReport> {
    let w = spec.confinement_w.ok_or_else(|| {
        Error::config("estimate_nu needs the confinement width w")
    })?;
    let rho = w * spec.ell as f64;
    cell_report(field, spec, eps, Some(rho), reps, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, ConductanceLaw, LatticeBox};

    fn torus(side: usize, seed: u64) -> ConductanceField {
        let bbox = LatticeBox::new(2, side, Boundary::Torus).unwrap();
        ConductanceField::sample(bbox, ConductanceLaw::Constant { c: 1.0 }, seed).unwrap()
    }

    #[test]
    fn census_with_no_background_counts_nothing() {
        let f = torus(24, 1);
        let spec = CellEventSpec::new(8, 1, 0.0);
        let c = collision_census(&f, &spec, 5).unwrap();
        assert_eq!(c.n_background, 0);
        assert_eq!(c.upsilon, 0);
        assert_eq!(c.upsilon_prime, 0);
        assert_eq!(c.upsilon_sampled, 0);
    }

    #[test]
    fn census_with_vanishing_window_sees_no_collisions() {
        let f = torus(24, 2);
        let spec = CellEventSpec {
            t_infect: 1e-9,
            ..CellEventSpec::new(8, 1, 1.0)
        };
        let c = collision_census(&f, &spec, 9).unwrap();
        assert!(c.n_background > 0);
        // Nobody moves, the tagged start vertex is excluded, so everyone is
        // contained and nobody collides.
        assert_eq!(c.upsilon, c.n_background);
        assert_eq!(c.upsilon_prime, 0);
        assert_eq!(c.upsilon_sampled, 0);
    }

    #[test]
    fn census_counts_nest_and_collisions_happen() {
        let f = torus(24, 3);
        let spec = CellEventSpec::new(8, 1, 1.0);
        let mut total_prime = 0;
        for r in 0..5 {
            let c = collision_census(&f, &spec, 100 + r).unwrap();
            assert!(c.upsilon <= c.n_background);
            assert!(c.upsilon_prime <= c.upsilon);
            assert!(
                c.upsilon_sampled <= c.upsilon_prime,
                "a sampled collision is a collision"
            );
            total_prime += c.upsilon_prime;
        }
        assert!(total_prime > 0, "no collisions in five censuses");
    }

    #[test]
    #[ignore = "prints collision scaling exponents for tuning the census experiment"]
    fn probe_collision_scaling() {
        let lambda0 = 0.05;
        let reps = 30u64;
        let mut pts_prime = Vec::new();
        let mut pts_sampled = Vec::new();
        for &ell in &[27usize, 64, 125] {
            let f = torus(3 * ell + 2, 9);
            let spec = CellEventSpec::new(ell, 1, lambda0);
            let t0 = std::time::Instant::now();
            let (mut p, mut s, mut bg) = (0u64, 0u64, 0u64);
            for r in 0..reps {
                let c = collision_census(&f, &spec, 900 + r).unwrap();
                p += c.upsilon_prime;
                s += c.upsilon_sampled;
                bg += c.n_background;
            }
            let mp = p as f64 / reps as f64;
            let ms = s as f64 / reps as f64;
            println!(
                "ell {ell}: mean prime {mp:.2} mean sampled {ms:.3} bg/rep {:.0} ({:.1}s)",
                bg as f64 / reps as f64,
                t0.elapsed().as_secs_f64()
            );
            pts_prime.push(((ell as f64).ln(), mp.max(1e-9).ln()));
            pts_sampled.push(((ell as f64).ln(), ms.max(1e-9).ln()));
        }
        let xs: Vec<f64> = pts_prime.iter().map(|p| p.0).collect();
        let fit_p = linear_fit(&xs, &pts_prime.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
        let fit_s = linear_fit(&xs, &pts_sampled.iter().map(|p| p.1).collect::<Vec<_>>()).unwrap();
        println!(
            "exponent prime {:.3} (r2 {:.3}) sampled {:.3} (r2 {:.3})",
            fit_p.slope, fit_p.r2, fit_s.slope, fit_s.r2
        );
    }

    #[test]
    fn census_rejects_oversized_super_cube() {
        let f = torus(16, 4);
        let spec = CellEventSpec::new(8, 1, 1.0);
        let err = collision_census(&f, &spec, 1).unwrap_err();
        assert!(err.to_string().contains("super cube"));
    }

    #[test]
    fn spread_failure_is_log_linear_in_n() {
        // Desk scale: ell = 8, eta = 2, beta = 4 ell^2, target shift z = (2, 2).
        let f = torus(40, 5);
        let report = spread_probability(
            &f,
            &[0, 5, 10, 20],
            8,
            2,
            256.0,
            &[2, 2],
            Placement::Uniform,
            400,
            17,
        )
        .unwrap();
        assert_eq!(report.points[0].frequency, 0.0);
        for w in report.points.windows(2) {
            assert!(
                w[1].failure <= w[0].failure,
                "failure not monotone: {:?}",
                report.points
            );
        }
        let fit = report.fit.as_ref().unwrap();
        assert!(fit.slope < 0.0, "slope {fit:?}");
        assert!(fit.r2 >= 0.8, "fit too loose: {fit:?}");
        assert!(report.c_p_hat.unwrap() > 0.0);
    }

    #[test]
    fn spread_from_the_worst_corner_fails_more() {
        let f = torus(40, 6);
        let ns = [10u64];
        let uniform = spread_probability(
            &f, &ns, 8, 2, 256.0, &[2, 2], Placement::Uniform, 300, 23,
        )
        .unwrap();
        let corner = spread_probability(
            &f, &ns, 8, 2, 256.0, &[2, 2], Placement::WorstCorner, 300, 23,
        )
        .unwrap();
        assert!(
            corner.points[0].failure >= uniform.points[0].failure - 0.05,
            "corner {} vs uniform {}",
            corner.points[0].failure,
            uniform.points[0].failure
        );
    }

    #[test]
    fn spread_rejects_bad_z() {
        let f = torus(40, 6);
        assert!(spread_probability(
            &f, &[5], 8, 2, 256.0, &[3, 0], Placement::Uniform, 10, 1
        )
        .is_err());
        assert!(spread_probability(
            &f, &[5], 8, 2, 256.0, &[1], Placement::Uniform, 10, 1
        )
        .is_err());
    }

    #[test]
    fn cell_event_probability_grows_with_density() {
        let f = torus(20, 7);
        let reps = 25;
        let lo = estimate_cell_event(&f, &CellEventSpec::new(6, 1, 1.0), reps, 40).unwrap();
        let hi = estimate_cell_event(&f, &CellEventSpec::new(6, 1, 4.0), reps, 40).unwrap();
        assert!(
            hi.frequency >= lo.frequency - 0.1,
            "frequency dropped with density: {} -> {}",
            lo.frequency,
            hi.frequency
        );
        for rep in hi.outcomes.iter().chain(&lo.outcomes) {
            assert_eq!(rep.n_cubes, 9);
            assert_eq!(rep.e_st, rep.covered == rep.n_cubes);
            assert!(rep.present_at_t <= rep.upsilon_prime);
        }
        // At lambda0 = 4 the small cell should usually fill.
        assert!(hi.frequency > 0.5, "hi frequency {}", hi.frequency);
    }

    #[test]
    fn immediate_recovery_kills_the_cell_event() {
        let f = torus(20, 8);
        let spec = CellEventSpec {
            gamma: 5.0,
            ..CellEventSpec::new(6, 1, 4.0)
        };
        let report = estimate_cell_event(&f, &spec, 5, 3).unwrap();
        assert_eq!(report.successes, 0);
    }

    #[test]
    fn nu_with_no_particles_is_zero_and_decreases_in_eps() {
        let f = torus(20, 9);
        let spec = CellEventSpec {
            confinement_w: Some(6.0),
            ..CellEventSpec::new(6, 1, 4.0)
        };
        let all_gone = estimate_nu(&f, &spec, 1.0, 5, 11).unwrap();
        assert_eq!(all_gone.successes, 0);

        let reps = 25;
        let dense = estimate_nu(&f, &spec, 0.0, reps, 12).unwrap();
        let thin = estimate_nu(&f, &spec, 0.8, reps, 12).unwrap();
        assert!(
            thin.frequency <= dense.frequency + 0.1,
            "nu increased with eps: {} -> {}",
            dense.frequency,
            thin.frequency
        );
    }

    #[test]
    fn huge_confinement_matches_the_unconfined_estimate() {
        let f = torus(20, 10);
        let reps = 30;
        let free = estimate_cell_event(&f, &CellEventSpec::new(6, 1, 2.0), reps, 31).unwrap();
        let spec = CellEventSpec {
            confinement_w: Some(50.0),
            ..CellEventSpec::new(6, 1, 2.0)
        };
        let confined = estimate_nu(&f, &spec, 0.0, reps, 31).unwrap();
        assert!(
            (confined.frequency - free.frequency).abs() <= 0.25,
            "confined {} vs free {}",
            confined.frequency,
            free.frequency
        );
    }

    #[test]
    fn nu_requires_a_confinement_width() {
        let f = torus(20, 11);
        let err = estimate_nu(&f, &CellEventSpec::new(6, 1, 2.0), 0.0, 3, 1).unwrap_err();
        assert!(err.to_string().contains("confinement"));
    }

    #[test]
    fn spec_validation_catches_bad_windows() {
        let f = torus(20, 12);
        let bad = CellEventSpec {
            t_infect: 200.0,
            beta_time: 100.0,
            ..CellEventSpec::new(6, 1, 1.0)
        };
        assert!(bad.validate(&f).is_err());
        let bad = CellEventSpec {
            eta: 0,
            ..CellEventSpec::new(6, 1, 1.0)
        };
        assert!(bad.validate(&f).is_err());
    }
}
