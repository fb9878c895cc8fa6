//! Continuous-time random walk among the conductances.
//!
//! From x the walk waits an Exp(1) time (the jump rates mu_{x,y}/mu_x sum
//! to one) and then jumps to a neighbor chosen with probability
//! mu_{x,y}/mu_x. Confined walks condition on the displacement staying in
//! the cube Q_rho = [-rho/2, rho/2]^d by rejection, which samples the
//! conditioned law exactly.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField};
use crate::stats::{linear_fit, LinearFit};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WalkConfig {
    pub horizon: f64,
    pub seed: u64,
    /// Side of the displacement cube Q_rho (l-infinity, centered at the
    /// start); None runs unconfined.
    pub confinement: Option<f64>,
}

/// One sampled path: jump times and the vertex after each jump.
/// `states[0]` is the start vertex at time 0; jump k (1-based) happens at
/// `times[k-1]` landing in `states[k]`.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub start: u32,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub states: Vec<u32>,
    /// Net torus windings per axis accumulated along the path, so
    /// unwrapped displacement is recoverable on periodic boxes.
    pub windings: Vec<i32>,
    /// Start vertex had mu = 0: the walk never moves.
    pub isolated_start: bool,
}

impl Trajectory {
    /// State at time t (right-continuous), t in [0, horizon].
    pub fn state_at(&self, t: f64) -> u32 {
        debug_assert!(t >= 0.0);
        let k = self.times.partition_point(|&s| s <= t);
        self.states[k]
    }

    pub fn jump_count(&self) -> usize {
        self.times.len()
    }
}

fn validate_horizon(horizon: f64) -> Result<()> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config(format!("horizon {horizon} must be finite and >= 0")));
    }
    Ok(())
}

/// Simulate the walk from `start` up to time `horizon` using the supplied
/// RNG stream. An isolated start yields a flagged, jumpless trajectory.
pub fn simulate<R: Rng>(
    field: &ConductanceField,
    start: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    validate_horizon(horizon)?;
    let d = field.bbox.d;
    let mut traj = Trajectory {
        start: start as u32,
        horizon,
        times: Vec::new(),
        states: vec![start as u32],
        windings: vec![0i32; d],
        isolated_start: field.vertex_weight(start) == 0.0,
    };
    if traj.isolated_start {
        return Ok(traj);
    }
    let mut t = 0.0f64;
    let mut v = start;
    loop {
        let dt: f64 = Exp1.sample(rng);
        t += dt;
        if t > horizon {
            break;
        }
        let u: f64 = rng.random();
        let slot = field.sample_jump_slot(v, u);
        let (next, _) = field.neighbor_slot(v, slot).expect("sampled slot exists");
        let axis = slot / 2;
        let dir: i8 = if slot % 2 == 0 { 1 } else { -1 };
        traj.windings[axis] += field.bbox.wrap_of_step(v, axis, dir) as i32;
        v = next;
        traj.times.push(t);
        traj.states.push(v as u32);
    }
    Ok(traj)
}

/// Simulate under a WalkConfig (fresh RNG from its seed), dispatching to the
/// confined sampler when a displacement cube is configured.
pub fn simulate_walk(field: &ConductanceField, x: usize, cfg: &WalkConfig) -> Result<Trajectory> {
    let mut rng = crate::rng::rng_from_seed(cfg.seed);
    match cfg.confinement {
        None => simulate(field, x, cfg.horizon, &mut rng),
        Some(rho) => {
            let out = simulate_confined(field, x, cfg.horizon, rho, 1e-4, &mut rng)?;
            Ok(out.trajectory)
        }
    }
}

/// Unwrapped displacement of the endpoint from the start, per axis.
pub fn displacement(field: &ConductanceField, traj: &Trajectory) -> Vec<i64> {
    let side = field.bbox.side as i64;
    let cs = field.bbox.coords(traj.start as usize);
    let ce = field.bbox.coords(*traj.states.last().unwrap() as usize);
    (0..field.bbox.d)
        .map(|a| ce[a] as i64 - cs[a] as i64 + traj.windings[a] as i64 * side)
        .collect()
}

/// First jump time whose destination leaves B(x,r), if any.
pub fn exit_time(
    field: &ConductanceField,
    traj: &Trajectory,
    x: usize,
    r: u32,
) -> Option<f64> {
    let dist = field.bfs_distances(x, r);
    for (k, &y) in traj.states.iter().enumerate().skip(1) {
        if dist[y as usize] > r {
            return Some(traj.times[k - 1]);
        }
    }
    None
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitTailCell {
    pub r: u32,
    pub t: f64,
    pub exits: u64,
    pub frequency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitTailReport {
    pub x: u32,
    pub n: u64,
    pub cells: Vec<ExitTailCell>,
    /// ln f regressed on r^2/t over cells with enough exits.
    pub fit: Option<LinearFit>,
    pub c3: f64,
    pub c4: f64,
}

/// Fraction of n walks leaving B(x,r) before t.
pub fn empirical_exit_tail(
    field: &ConductanceField,
    x: usize,
    r: u32,
    t: f64,
    n: u64,
    seed: u64,
) -> Result<f64> {
    let rep = exit_tail_scan(field, x, &[r], &[t], n, seed)?;
    Ok(rep.cells[0].frequency)
}

/// Exit frequencies over an (r,t) grid from n walks (each walk simulated
/// once to the largest t), with an envelope fit of the tail shape
/// f <= c3 exp(-c4 r^2/t).
pub fn exit_tail_scan(
    field: &ConductanceField,
    x: usize,
    rs: &[u32],
    ts: &[f64],
    n: u64,
    seed: u64,
) -> Result<ExitTailReport> {
    if n == 0 || rs.is_empty() || ts.is_empty() {
        return Err(Error::config("exit tail needs n >= 1 and nonempty grids"));
    }
    if field.vertex_weight(x) == 0.0 {
        return Err(Error::config(format!("start vertex {x} is isolated")));
    }
    let mut rs = rs.to_vec();
    rs.sort_unstable();
    rs.dedup();
    let mut ts = ts.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    let t_max = *ts.last().unwrap();
    validate_horizon(t_max)?;
    let r_max = *rs.last().unwrap();
    let dist = field.bfs_distances(x, r_max);
    // exit_at[i][j]: count of walks with tau(x, rs[i]) < ts[j].
    let mut exits = vec![vec![0u64; ts.len()]; rs.len()];
    for rep in 0..n {
        let mut rng = crate::rng::rng_from(seed, "exit-tail", rep);
        let traj = simulate(field, x, t_max, &mut rng)?;
        let mut next_r = 0usize; // first radius index not yet exited
        for (k, &y) in traj.states.iter().enumerate().skip(1) {
            if next_r >= rs.len() {
                break;
            }
            let dy = dist[y as usize];
            let tk = traj.times[k - 1];
            while next_r < rs.len() && dy > rs[next_r] {
                for (j, &t) in ts.iter().enumerate() {
                    if tk < t {
                        exits[next_r][j] += 1;
                    }
                }
                next_r += 1;
            }
            let _ = tk;
        }
    }
    let mut cells = Vec::new();
    let mut pts = Vec::new();
    for (i, &r) in rs.iter().enumerate() {
        for (j, &t) in ts.iter().enumerate() {
            let e = exits[i][j];
            let f = e as f64 / n as f64;
            cells.push(ExitTailCell {
                r,
                t,
                exits: e,
                frequency: f,
            });
            if e >= 10 {
                pts.push(((r as f64 * r as f64) / t, f.ln()));
            }
        }
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let fit = linear_fit(&xs, &ys);
    let c4 = fit.as_ref().map(|f| -f.slope).unwrap_or(0.0);
    // Envelope constant: smallest c3 making the bound hold on every cell.
    let mut c3 = 0.0f64;
    for c in &cells {
        let u = (c.r as f64 * c.r as f64) / c.t;
        c3 = c3.max(c.frequency * (c4 * u).exp());
    }
    Ok(ExitTailReport {
        x: x as u32,
        n,
        cells,
        fit,
        c3,
        c4,
    })
}

/// On the torus the displacement cube must not wrap onto itself; in a
/// hard-wall box any positive rho is fine (a cube larger than the box is
/// just a sure event).
fn validate_rho(field: &ConductanceField, rho: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::config(format!(
            "confinement cube side {rho} must be positive"
        )));
    }
    if field.bbox.boundary == Boundary::Torus && rho >= field.bbox.side as f64 {
        return Err(Error::config(format!(
            "confinement cube side {rho} must be below the torus side"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfinedWalk {
    pub trajectory: Trajectory,
    /// Acceptance frequency over the rejection trials, estimating p_E(rho).
    pub acceptance: f64,
    pub trials: u64,
}

/// Walk conditioned on sup_t ||Y_t - x||_inf <= rho/2, by rejection.
/// Aborts when the acceptance estimate falls below `floor`.
pub fn simulate_confined<R: Rng>(
    field: &ConductanceField,
    x: usize,
    horizon: f64,
    rho: f64,
    floor: f64,
    rng: &mut R,
) -> Result<ConfinedWalk> {
    validate_horizon(horizon)?;
    validate_rho(field, rho)?;
    if field.vertex_weight(x) == 0.0 {
        return Err(Error::config(format!("start vertex {x} is isolated")));
    }
    let floor = floor.clamp(1e-12, 1.0);
    let max_trials = (20.0 / floor).ceil() as u64;
    let half = rho / 2.0;
    let d = field.bbox.d;
    let side = field.bbox.side as i64;
    let mut trials = 0u64;
    loop {
        trials += 1;
        if trials > max_trials {
            return Err(Error::abort(format!(
                "confined walk acceptance fell below {floor} after {max_trials} trials \
                 (rho={rho}, horizon={horizon})"
            )));
        }
        // Simulate with an on-line displacement check; bail out of the
        // attempt at the first jump leaving the cube.
        let mut traj = Trajectory {
            start: x as u32,
            horizon,
            times: Vec::new(),
            states: vec![x as u32],
            windings: vec![0i32; d],
            isolated_start: false,
        };
        let mut disp = vec![0i64; d];
        let mut t = 0.0f64;
        let mut v = x;
        let mut ok = true;
        loop {
            let dt: f64 = Exp1.sample(rng);
            t += dt;
            if t > horizon {
                break;
            }
            let u: f64 = rng.random();
            let slot = field.sample_jump_slot(v, u);
            let (next, _) = field.neighbor_slot(v, slot).expect("sampled slot exists");
            let axis = slot / 2;
            let dir: i8 = if slot % 2 == 0 { 1 } else { -1 };
            let wrap = field.bbox.wrap_of_step(v, axis, dir) as i64;
            let cv = field.bbox.coord(v, axis) as i64;
            let cn = field.bbox.coord(next, axis) as i64;
            disp[axis] += cn - cv + wrap * side;
            traj.windings[axis] += wrap as i32;
            v = next;
            traj.times.push(t);
            traj.states.push(v as u32);
            if disp[axis].abs() as f64 > half {
                ok = false;
                break;
            }
        }
        if ok {
            let acceptance = 1.0 / trials as f64;
            return Ok(ConfinedWalk {
                trajectory: traj,
                acceptance,
                trials,
            });
        }
    }
}

/// Acceptance probability p_E(rho) of the confinement event, estimated from
/// n independent unconditioned walks.
pub fn confinement_acceptance(
    field: &ConductanceField,
    x: usize,
    horizon: f64,
    rho: f64,
    n: u64,
    seed: u64,
) -> Result<f64> {
    validate_horizon(horizon)?;
    validate_rho(field, rho)?;
    let half = rho / 2.0;
    let mut stayed = 0u64;
    for rep in 0..n {
        let mut rng = crate::rng::rng_from(seed, "confinement", rep);
        let traj = simulate(field, x, horizon, &mut rng)?;
        if max_abs_displacement(field, &traj) as f64 <= half {
            stayed += 1;
        }
    }
    Ok(stayed as f64 / n as f64)
}

/// sup over jumps of ||Y_t - start||_inf in unwrapped coordinates.
pub fn max_abs_displacement(field: &ConductanceField, traj: &Trajectory) -> i64 {
    let d = field.bbox.d;
    let side = field.bbox.side as i64;
    let mut disp = vec![0i64; d];
    let mut best = 0i64;
    for w in traj.states.windows(2) {
        let (a, b) = (w[0] as usize, w[1] as usize);
        let ca = field.bbox.coords(a);
        let cb = field.bbox.coords(b);
        for ax in 0..d {
            let mut delta = cb[ax] as i64 - ca[ax] as i64;
            if delta > 1 {
                delta -= side;
            } else if delta < -1 {
                delta += side;
            }
            disp[ax] += delta;
            best = best.max(disp[ax].abs());
        }
    }
    best
}

/// Monte Carlo endpoint histogram: counts of Y_t over `n` independent runs.
pub fn endpoint_counts<R: Rng>(
    field: &ConductanceField,
    start: usize,
    t: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; field.vertex_count()];
    for _ in 0..n {
        let traj = simulate(field, start, t, rng)?;
        counts[*traj.states.last().unwrap() as usize] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, ConductanceLaw, LatticeBox};
    use crate::rng::rng_from_seed;
    use crate::stats::ks_test_exp1;

    fn field2(side: usize, seed: u64) -> ConductanceField {
        let b = LatticeBox::new(2, side, Boundary::Torus).unwrap();
        ConductanceField::sample(b, ConductanceLaw::UniformElliptic { c_m: 3.0 }, seed).unwrap()
    }

    #[test]
    fn isolated_start_is_flagged_not_fatal() {
        let b = LatticeBox::new(2, 4, Boundary::Torus).unwrap();
        let mut w = vec![1.0; b.vertex_count() * 2];
        let v = 5usize;
        for a in 0..2 {
            w[v * 2 + a] = 0.0;
            let back = b.neighbor(v, a, -1).unwrap();
            w[back * 2 + a] = 0.0;
        }
        let f = ConductanceField::from_weights(b, w).unwrap();
        let traj = simulate(&f, v, 10.0, &mut rng_from_seed(1)).unwrap();
        assert!(traj.isolated_start);
        assert_eq!(traj.jump_count(), 0);
    }

    #[test]
    fn zero_horizon_never_jumps() {
        let f = field2(4, 1);
        let traj = simulate(&f, 0, 0.0, &mut rng_from_seed(2)).unwrap();
        assert_eq!(traj.jump_count(), 0);
        assert!(!traj.isolated_start);
        assert!(simulate(&f, 0, -1.0, &mut rng_from_seed(2)).is_err());
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let f = field2(8, 3);
        let a = simulate(&f, 0, 50.0, &mut rng_from_seed(42)).unwrap();
        let b = simulate(&f, 0, 50.0, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(
            a.times.iter().map(|t| t.to_bits()).collect::<Vec<_>>(),
            b.times.iter().map(|t| t.to_bits()).collect::<Vec<_>>()
        );
        let c = simulate(&f, 0, 50.0, &mut rng_from_seed(43)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn holding_times_are_exp1() {
        let f = field2(8, 5);
        let mut rng = rng_from_seed(7);
        let traj = simulate(&f, 0, 4000.0, &mut rng).unwrap();
        let mut gaps = vec![traj.times[0]];
        gaps.extend(traj.times.windows(2).map(|w| w[1] - w[0]));
        let ks = ks_test_exp1(&gaps);
        assert!(ks.p_value > 0.01, "KS p={}", ks.p_value);
        let n = traj.jump_count() as f64;
        assert!((n - 4000.0).abs() < 4.0 * 4000.0f64.sqrt());
    }

    #[test]
    fn jump_distribution_matches_edge_weights() {
        let f = field2(6, 9);
        let v = 7usize;
        let mut rng = rng_from_seed(11);
        let n = 200_000;
        let mut counts = vec![0u64; f.slots()];
        for _ in 0..n {
            let u: f64 = rng.random();
            counts[f.sample_jump_slot(v, u)] += 1;
        }
        for s in 0..f.slots() {
            let p = f.slot_weight(v, s) / f.vertex_weight(v);
            let freq = counts[s] as f64 / n as f64;
            assert!(
                (freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-9,
                "slot {s}: freq {freq} vs p {p}"
            );
        }
    }

    #[test]
    fn jump_counts_are_poisson_on_single_edge() {
        // Two vertices joined by one unit edge: jumps by time t ~ Poisson(t).
        let b = LatticeBox::new(2, 2, Boundary::HardWall).unwrap();
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let f = ConductanceField::from_weights(b, w).unwrap();
        let t = 5.0;
        let n = 10_000;
        let mut total = 0u64;
        let mut rng = rng_from_seed(3);
        for _ in 0..n {
            total += simulate(&f, 0, t, &mut rng).unwrap().jump_count() as u64;
        }
        let mean = total as f64 / n as f64;
        let sigma = (t / n as f64).sqrt();
        assert!((mean - t).abs() < 3.0 * sigma, "mean {mean} vs {t}");
    }

    #[test]
    fn exit_time_matches_replay_scan() {
        let f = field2(16, 13);
        let traj = simulate(&f, 0, 60.0, &mut rng_from_seed(5)).unwrap();
        let r = 3u32;
        let got = exit_time(&f, &traj, 0, r);
        // Oracle: linear scan with an independently computed ball.
        let ball = f.ball(0, r);
        let mut want = None;
        for (k, &y) in traj.states.iter().enumerate().skip(1) {
            if ball.binary_search(&y).is_err() {
                want = Some(traj.times[k - 1]);
                break;
            }
        }
        assert_eq!(got, want);
        assert!(got.is_some(), "walk of ~60 jumps should leave B(0,3)");
        // Huge radius: never exits.
        assert_eq!(exit_time(&f, &traj, 0, 1000), None);
    }

    #[test]
    fn exit_tail_grid_is_monotone() {
        let f = field2(32, 2);
        let rep = exit_tail_scan(&f, 0, &[2, 4, 6], &[2.0, 5.0, 9.0], 2000, 77).unwrap();
        // Frequency nonincreasing in r at fixed t, nondecreasing in t at fixed r.
        let get = |r: u32, t: f64| {
            rep.cells
                .iter()
                .find(|c| c.r == r && c.t == t)
                .unwrap()
                .frequency
        };
        for &t in &[2.0, 5.0, 9.0] {
            assert!(get(2, t) >= get(4, t));
            assert!(get(4, t) >= get(6, t));
        }
        for &r in &[2u32, 4, 6] {
            assert!(get(r, 2.0) <= get(r, 5.0));
            assert!(get(r, 5.0) <= get(r, 9.0));
        }
        // Envelope: every cell satisfies f <= c3 exp(-c4 r^2/t).
        for c in &rep.cells {
            let u = (c.r as f64).powi(2) / c.t;
            assert!(c.frequency <= rep.c3 * (-rep.c4 * u).exp() + 1e-12);
        }
    }

    #[test]
    fn tiny_time_never_exits() {
        let f = field2(8, 4);
        let freq = empirical_exit_tail(&f, 0, 1, 1e-6, 1000, 5).unwrap();
        assert_eq!(freq, 0.0);
    }

    #[test]
    fn confined_walk_stays_in_cube() {
        let f = field2(16, 6);
        let mut rng = rng_from_seed(9);
        let out = simulate_confined(&f, 0, 9.0, 6.0, 1e-4, &mut rng).unwrap();
        assert!(max_abs_displacement(&f, &out.trajectory) as f64 <= 3.0);
        assert!(out.acceptance > 0.0 && out.acceptance <= 1.0);
        // A cube wider than any possible wandering accepts immediately.
        let easy = simulate_confined(&f, 0, 0.5, 15.0, 1e-4, &mut rng).unwrap();
        assert_eq!(easy.trials, 1);
    }

    #[test]
    fn confined_walk_aborts_when_acceptance_collapses() {
        let f = field2(16, 6);
        let mut rng = rng_from_seed(10);
        // Walking 400 expected steps inside a 2-cube is hopeless.
        let res = simulate_confined(&f, 0, 400.0, 2.0, 0.05, &mut rng);
        assert!(res.is_err());
    }

    #[test]
    fn windings_track_unwrapped_displacement() {
        let f = field2(4, 13);
        let traj = simulate(&f, 5, 200.0, &mut rng_from_seed(21)).unwrap();
        let disp = displacement(&f, &traj);
        let side = f.bbox.side as i64;
        let mut pos: Vec<i64> = f.bbox.coords(5).iter().map(|&c| c as i64).collect();
        for w in traj.states.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            let ca = f.bbox.coords(a);
            let cb = f.bbox.coords(b);
            for ax in 0..2 {
                let mut delta = cb[ax] as i64 - ca[ax] as i64;
                if delta > 1 {
                    delta -= side;
                } else if delta < -1 {
                    delta += side;
                }
                pos[ax] += delta;
            }
        }
        let start: Vec<i64> = f.bbox.coords(5).iter().map(|&c| c as i64).collect();
        let manual: Vec<i64> = (0..2).map(|a| pos[a] - start[a]).collect();
        assert_eq!(disp, manual);
        assert!(traj.windings.iter().any(|&w| w != 0), "walk should wrap on side 4");
    }

    #[test]
    fn long_horizon_occupation_is_uniform_on_constant_weights() {
        let b = LatticeBox::new(2, 4, Boundary::Torus).unwrap();
        let f = ConductanceField::sample(b, ConductanceLaw::Constant { c: 1.0 }, 1).unwrap();
        let n = 8000usize;
        let counts = endpoint_counts(&f, 0, 50.0, n, &mut rng_from_seed(12)).unwrap();
        let expect = n as f64 / f.vertex_count() as f64;
        let sigma = (expect * (1.0 - 1.0 / f.vertex_count() as f64)).sqrt();
        for (v, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 4.0 * sigma,
                "vertex {v}: {c} vs {expect}"
            );
        }
    }

    #[test]
    fn walk_config_dispatches_confinement() {
        let f = field2(12, 3);
        let cfg = WalkConfig {
            horizon: 4.0,
            seed: 31,
            confinement: Some(4.0),
        };
        let traj = simulate_walk(&f, 0, &cfg).unwrap();
        assert!(max_abs_displacement(&f, &traj) <= 2);
        let unconfined = simulate_walk(
            &f,
            0,
            &WalkConfig {
                horizon: 4.0,
                seed: 31,
                confinement: None,
            },
        )
        .unwrap();
        assert_eq!(unconfined.start, 0);
    }
}
