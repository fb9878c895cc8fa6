//! Event-driven SI/SIS dynamics on moving particles.
//!
//! Every particle performs the rate-1 conductance walk; an uninfected
//! particle becomes infected the instant it shares a site with an infected
//! one. Under SIS each infected particle additionally recovers at rate
//! gamma, except that a particle recovering while co-located with another
//! infected particle is reinfected in the same instant, so recovery is
//! effective only when alone or among susceptibles.
//!
//! Randomness is autonomous per particle: particle j draws its jump times,
//! jump directions and recovery bells from its own stream derived from
//! (seed, j). Infection never alters motion, so adding particles to a
//! configuration leaves the shared particles' trajectories untouched; the
//! infected set is then monotone in the particle set, and gamma = 0
//! reproduces SI bit-exactly (recovery bells are only drawn when gamma > 0).
//!
//! The front ||I_t||_1 is the largest l1 distance from the origin over
//! currently infected particles, in unwrapped coordinates: positions live in
//! Z^d, with the initial torus configuration embedded by the centered
//! representative of each coordinate difference.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField};
use crate::rng::rng_from;
use crate::stats::{linear_fit, LinearFit};
use rand::rngs::SmallRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;
use std::cmp::Ordering;

/// Initial condition for one particle.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpidemicParticle {
    pub vertex: u32,
    pub infected: bool,
}

/// Front and infection counts on a sample grid, plus run-level outcomes.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FrontSeries {
    pub times: Vec<f64>,
    /// max over infected particles of the unwrapped l1 distance from the
    /// origin; 0 when nothing is infected.
    pub front: Vec<f64>,
    pub infected: Vec<u64>,
    /// First time the infected count hit zero (SIS only).
    pub extinction: Option<f64>,
    /// Infected count was still positive at the horizon.
    pub survived: bool,
    pub n_particles: u64,
    pub final_infected: u64,
    pub events: u64,
}

/// Per-sample particle snapshots (id, vertex, infected), for coupling and
/// co-location checks at test scale.
#[derive(Debug, Clone, Serialize)]
pub struct EpidemicTrace {
    pub snapshots: Vec<Vec<(u32, u32, bool)>>,
}

#[derive(Debug, Clone, Copy)]
struct Ev {
    t: f64,
    id: u32,
    /// 0 = jump, 1 = recovery bell.
    kind: u8,
}

/// Ascending event order; ids and kinds break exact time ties
/// deterministically.
#[inline]
fn ev_cmp(a: &Ev, b: &Ev) -> Ordering {
    a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)).then(a.kind.cmp(&b.kind))
}

/// Calendar queue tuned for rate-one clocks: buckets partition a rolling
/// time window, pushes append to a future bucket in O(1), and only the
/// bucket currently being drained is sorted. Pops come out in exactly the
/// (t, id, kind) order a binary heap would give, without the log-depth
/// cache misses of heap sifts on hundreds of thousands of pending events.
struct EventQueue {
    inv_width: f64,
    span: f64,
    /// Start time of the current window [base, base + span).
    base: f64,
    /// Ring index of the open bucket, whose contents sit sorted in `cur`.
    cursor: usize,
    nbuckets: usize,
    buckets: Vec<Vec<Ev>>,
    cur: Vec<Ev>,
    cur_idx: usize,
    /// Events at or beyond base + span, re-dispatched when the window turns.
    far: Vec<Ev>,
    ring_len: usize,
    len: usize,
}

impl EventQueue {
    /// `rate` is the expected total event rate, used only to size buckets.
    fn new(rate: f64) -> Self {
        let width = (24.0 / rate.max(1.0)).min(1.0);
        let nbuckets = ((32.0 / width).ceil() as usize).max(4);
        EventQueue {
            inv_width: 1.0 / width,
            span: width * nbuckets as f64,
            base: 0.0,
            cursor: 0,
            nbuckets,
            buckets: vec![Vec::new(); nbuckets],
            cur: Vec::new(),
            cur_idx: 0,
            far: Vec::new(),
            ring_len: 0,
            len: 0,
        }
    }

    fn push(&mut self, ev: Ev) {
        debug_assert!(ev.t >= self.base);
        self.len += 1;
        if ev.t >= self.base + self.span {
            self.far.push(ev);
        } else {
            self.push_ring(ev);
        }
    }

    fn push_ring(&mut self, ev: Ev) {
        // The multiply is monotone in ev.t, so bucket order never inverts
        // event order; the min() absorbs rounding at the window edge.
        let idx = (((ev.t - self.base) * self.inv_width) as usize).min(self.nbuckets - 1);
        if idx <= self.cursor {
            // Lands in the open bucket: sorted insert past the drain point.
            let pos = self.cur_idx
                + self.cur[self.cur_idx..]
                    .partition_point(|e| ev_cmp(e, &ev) == Ordering::Less);
            self.cur.insert(pos, ev);
        } else {
            self.buckets[idx].push(ev);
        }
        self.ring_len += 1;
    }

    fn pop(&mut self) -> Option<Ev> {
        if self.len == 0 {
            return None;
        }
        loop {
            if self.cur_idx < self.cur.len() {
                let ev = self.cur[self.cur_idx];
                self.cur_idx += 1;
                self.len -= 1;
                self.ring_len -= 1;
                return Some(ev);
            }
            if self.ring_len == 0 && !self.far.is_empty() {
                // Nothing left in the window: jump it to the far minimum.
                let tmin = self.far.iter().map(|e| e.t).fold(f64::INFINITY, f64::min);
                self.base = tmin;
                self.cursor = 0;
                self.cur.clear();
                self.cur_idx = 0;
                self.redispatch_far();
                continue;
            }
            self.cursor += 1;
            let wrapped = self.cursor == self.nbuckets;
            if wrapped {
                self.cursor = 0;
                self.base += self.span;
            }
            std::mem::swap(&mut self.cur, &mut self.buckets[self.cursor]);
            self.buckets[self.cursor].clear();
            self.cur_idx = 0;
            if self.cur.len() > 1 {
                self.cur.sort_unstable_by(ev_cmp);
            }
            // Only after the open bucket is sorted: re-dispatch may insert
            // into it and relies on its order.
            if wrapped {
                self.redispatch_far();
            }
        }
    }

    fn redispatch_far(&mut self) {
        let mut k = 0;
        while k < self.far.len() {
            if self.far[k].t < self.base + self.span {
                let ev = self.far.swap_remove(k);
                self.push_ring(ev);
            } else {
                k += 1;
            }
        }
    }
}

/// Per-particle hot state, kept together so one event touches one line.
/// `sus_slot` is the particle's index in its site's susceptible list, or
/// NO_SLOT when infected.
struct PState {
    rng: SmallRng,
    vertex: u32,
    sus_slot: u32,
}

const NO_SLOT: u32 = u32::MAX;

/// Sites are pure between events (never infected and susceptible together),
/// so per-site state is just the infected head count plus the list of
/// susceptible ids; jumps of infected particles through infected territory
/// touch no lists at all.
struct Engine<'a> {
    field: &'a ConductanceField,
    states: Vec<PState>,
    /// Flat n*d unwrapped positions relative to the origin vertex.
    pos: Vec<i32>,
    sus_at: Vec<Vec<u32>>,
    inf_count: Vec<u32>,
    n_infected: usize,
    queue: EventQueue,
}

impl<'a> Engine<'a> {
    fn new(
        field: &'a ConductanceField,
        init: &[EpidemicParticle],
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        let d = field.bbox.d;
        let side = field.bbox.side as i64;
        let n = init.len();
        let origin = field.bbox.coords(0);
        let mut eng = Engine {
            field,
            states: Vec::with_capacity(n),
            pos: Vec::with_capacity(n * d),
            sus_at: vec![Vec::new(); field.vertex_count()],
            inf_count: vec![0; field.vertex_count()],
            n_infected: 0,
            queue: EventQueue::new(n as f64 * (1.0 + gamma)),
        };
        for (id, p) in init.iter().enumerate() {
            let v = p.vertex as usize;
            if v >= field.vertex_count() {
                return Err(Error::config(format!("particle {id} vertex {v} out of range")));
            }
            if field.vertex_weight(v) == 0.0 {
                return Err(Error::config(format!(
                    "particle {id} starts on isolated vertex {v}"
                )));
            }
            let c = field.bbox.coords(v);
            for a in 0..d {
                let diff = c[a] as i64 - origin[a] as i64;
                // Centered representative on the torus; exact on hard walls.
                let rel = match field.bbox.boundary {
                    Boundary::Torus => (diff + side / 2).rem_euclid(side) - side / 2,
                    Boundary::HardWall => diff,
                };
                eng.pos.push(rel as i32);
            }
            let mut rng = rng_from(seed, "particle", id as u64);
            let dt: f64 = Exp1.sample(&mut rng);
            eng.queue.push(Ev { t: dt, id: id as u32, kind: 0 });
            if gamma > 0.0 {
                let bell: f64 = Exp1.sample(&mut rng);
                eng.queue.push(Ev { t: bell / gamma, id: id as u32, kind: 1 });
            }
            eng.states.push(PState {
                rng,
                vertex: v as u32,
                sus_slot: eng.sus_at[v].len() as u32,
            });
            eng.sus_at[v].push(id as u32);
        }
        // Mark the initial infected, then resolve t = 0 co-location:
        // sharing a site with an infected particle infects immediately,
        // initial configurations included.
        for (id, p) in init.iter().enumerate() {
            if p.infected && !eng.is_infected(id as u32) {
                eng.infect(id as u32);
            }
        }
        for id in 0..n as u32 {
            if eng.is_infected(id) {
                let v = eng.states[id as usize].vertex as usize;
                eng.infect_site(v);
            }
        }
        Ok(eng)
    }

    #[inline]
    fn is_infected(&self, id: u32) -> bool {
        self.states[id as usize].sus_slot == NO_SLOT
    }

    /// Move a susceptible particle to the infected side.
    fn infect(&mut self, id: u32) {
        let v = self.states[id as usize].vertex as usize;
        let slot = self.states[id as usize].sus_slot as usize;
        debug_assert_ne!(slot as u32, NO_SLOT);
        self.sus_at[v].swap_remove(slot);
        if let Some(&moved) = self.sus_at[v].get(slot) {
            self.states[moved as usize].sus_slot = slot as u32;
        }
        self.states[id as usize].sus_slot = NO_SLOT;
        self.inf_count[v] += 1;
        self.n_infected += 1;
    }

    /// Infect every susceptible currently at site v.
    fn infect_site(&mut self, v: usize) {
        while let Some(&q) = self.sus_at[v].last() {
            self.infect(q);
        }
    }

    fn recover(&mut self, id: u32) {
        debug_assert!(self.is_infected(id));
        let v = self.states[id as usize].vertex as usize;
        self.inf_count[v] -= 1;
        self.states[id as usize].sus_slot = self.sus_at[v].len() as u32;
        self.sus_at[v].push(id);
        self.n_infected -= 1;
    }

    fn jump(&mut self, id: u32) {
        let d = self.field.bbox.d;
        let st = &mut self.states[id as usize];
        let v = st.vertex as usize;
        let u: f64 = st.rng.random();
        let slot = self.field.sample_jump_slot(v, u);
        let (w, _) = self.field.neighbor_slot(v, slot).expect("sampled slot exists");
        let axis = slot / 2;
        let dir: i32 = if slot % 2 == 0 { 1 } else { -1 };
        self.pos[id as usize * d + axis] += dir;

        if st.sus_slot == NO_SLOT {
            st.vertex = w as u32;
            self.inf_count[v] -= 1;
            self.inf_count[w] += 1;
            if self.inf_count[w] == 1 {
                // First infected arrival at a susceptible site.
                self.infect_site(w);
            }
        } else {
            let slot = st.sus_slot as usize;
            st.vertex = w as u32;
            self.sus_at[v].swap_remove(slot);
            if let Some(&moved) = self.sus_at[v].get(slot) {
                self.states[moved as usize].sus_slot = slot as u32;
            }
            if self.inf_count[w] > 0 {
                self.states[id as usize].sus_slot = NO_SLOT;
                self.inf_count[w] += 1;
                self.n_infected += 1;
            } else {
                self.states[id as usize].sus_slot = self.sus_at[w].len() as u32;
                self.sus_at[w].push(id);
            }
        }
    }

    /// Recovery bell: ignored while susceptible; a co-located infected
    /// companion reinfects instantly, making the bell a no-op.
    fn bell(&mut self, id: u32) {
        if !self.is_infected(id) {
            return;
        }
        let v = self.states[id as usize].vertex as usize;
        if self.inf_count[v] < 2 {
            self.recover(id);
        }
    }

    fn front(&self) -> i64 {
        let d = self.field.bbox.d;
        let mut best = 0i64;
        for (p, st) in self.states.iter().enumerate() {
            if st.sus_slot == NO_SLOT {
                let base = p * d;
                let l1 = self.pos[base..base + d]
                    .iter()
                    .map(|&c| c.unsigned_abs() as i64)
                    .sum::<i64>();
                best = best.max(l1);
            }
        }
        best
    }

    fn snapshot(&self) -> Vec<(u32, u32, bool)> {
        self.states
            .iter()
            .enumerate()
            .map(|(p, st)| (p as u32, st.vertex, st.sus_slot == NO_SLOT))
            .collect()
    }
}

fn validate_grid(grid: &[f64], horizon: f64) -> Result<()> {
    for (k, &t) in grid.iter().enumerate() {
        if !(t >= 0.0 && t <= horizon) || !t.is_finite() {
            return Err(Error::config(format!(
                "sample time {t} at index {k} outside [0, {horizon}]"
            )));
        }
        if k > 0 && grid[k - 1] > t {
            return Err(Error::config("sample grid must be nondecreasing"));
        }
    }
    Ok(())
}

fn run_engine(
    field: &ConductanceField,
    init: &[EpidemicParticle],
    gamma: f64,
    horizon: f64,
    grid: &[f64],
    seed: u64,
    trace: bool,
) -> Result<(FrontSeries, Option<EpidemicTrace>)> {
    if init.is_empty() {
        return Err(Error::config("epidemic needs at least one particle"));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config(format!("horizon {horizon} must be finite and >= 0")));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::config(format!("gamma {gamma} must be finite and >= 0")));
    }
    validate_grid(grid, horizon)?;

    let mut eng = Engine::new(field, init, gamma, seed)?;
    let mut series = FrontSeries {
        times: grid.to_vec(),
        front: Vec::with_capacity(grid.len()),
        infected: Vec::with_capacity(grid.len()),
        extinction: None,
        survived: false,
        n_particles: init.len() as u64,
        final_infected: 0,
        events: 0,
    };
    let mut snaps = trace.then(|| Vec::with_capacity(grid.len()));
    let mut g = 0usize;
    let record_upto = |eng: &Engine,
                           g: &mut usize,
                           t: f64,
                           strict: bool,
                           series: &mut FrontSeries,
                           snaps: &mut Option<Vec<Vec<(u32, u32, bool)>>>| {
        while *g < grid.len() && (if strict { grid[*g] < t } else { grid[*g] <= t }) {
            series.front.push(eng.front() as f64);
            series.infected.push(eng.n_infected as u64);
            if let Some(s) = snaps {
                s.push(eng.snapshot());
            }
            *g += 1;
        }
    };

    while let Some(ev) = eng.queue.pop() {
        if ev.t > horizon {
            break;
        }
        // Samples strictly before the event see the pre-event state
        // (right-continuous paths).
        record_upto(&eng, &mut g, ev.t, true, &mut series, &mut snaps);
        match ev.kind {
            0 => {
                eng.jump(ev.id);
                let dt: f64 = Exp1.sample(&mut eng.states[ev.id as usize].rng);
                eng.queue.push(Ev { t: ev.t + dt, id: ev.id, kind: 0 });
            }
            _ => {
                eng.bell(ev.id);
                let dt: f64 = Exp1.sample(&mut eng.states[ev.id as usize].rng);
                eng.queue.push(Ev { t: ev.t + dt / gamma, id: ev.id, kind: 1 });
            }
        }
        series.events += 1;
        if eng.n_infected == 0 {
            series.extinction = Some(ev.t);
            break;
        }
    }
    record_upto(&eng, &mut g, horizon, false, &mut series, &mut snaps);
    series.survived = eng.n_infected > 0;
    series.final_infected = eng.n_infected as u64;
    Ok((series, snaps.map(|snapshots| EpidemicTrace { snapshots })))
}

/// Run the dynamics from an explicit initial configuration.
pub fn run_epidemic(
    field: &ConductanceField,
    init: &[EpidemicParticle],
    gamma: f64,
    horizon: f64,
    grid: &[f64],
    seed: u64,
) -> Result<FrontSeries> {
    run_engine(field, init, gamma, horizon, grid, seed, false).map(|(s, _)| s)
}

/// As `run_epidemic`, additionally returning per-sample particle snapshots.
pub fn run_epidemic_traced(
    field: &ConductanceField,
    init: &[EpidemicParticle],
    gamma: f64,
    horizon: f64,
    grid: &[f64],
    seed: u64,
) -> Result<(FrontSeries, EpidemicTrace)> {
    run_engine(field, init, gamma, horizon, grid, seed, true)
        .map(|(s, t)| (s, t.expect("trace requested")))
}

/// Poisson(lambda0 mu_x) cloud plus one infected particle at the origin.
fn seeded_cloud(
    field: &ConductanceField,
    lambda0: f64,
    seed: u64,
) -> Result<Vec<EpidemicParticle>> {
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(Error::config(format!("lambda0 {lambda0} must be finite and >= 0")));
    }
    if field.vertex_weight(0) == 0.0 {
        return Err(Error::config(
            "origin is isolated; rejected field/seed pair",
        ));
    }
    let mut init = vec![EpidemicParticle { vertex: 0, infected: true }];
    let mut rng = rng_from(seed, "epidemic-cloud", 0);
    for x in 0..field.vertex_count() {
        let mu = field.vertex_weight(x);
        if mu == 0.0 || lambda0 == 0.0 {
            continue;
        }
        let pois = rand_distr::Poisson::new(lambda0 * mu)
            .map_err(|e| Error::config(format!("bad Poisson intensity at {x}: {e}")))?;
        let count = pois.sample(&mut rng) as u64;
        for _ in 0..count {
            init.push(EpidemicParticle { vertex: x as u32, infected: false });
        }
    }
    Ok(init)
}

/// SI run: susceptible cloud at density lambda0 per unit mu, one infected
/// particle at the origin.
pub fn run_si(
    field: &ConductanceField,
    lambda0: f64,
    horizon: f64,
    grid: &[f64],
    seed: u64,
) -> Result<FrontSeries> {
    let init = seeded_cloud(field, lambda0, seed)?;
    run_epidemic(field, &init, 0.0, horizon, grid, seed)
}

/// SIS run: as SI plus rate-gamma recovery.
pub fn run_sis(
    field: &ConductanceField,
    lambda0: f64,
    gamma: f64,
    horizon: f64,
    grid: &[f64],
    seed: u64,
) -> Result<FrontSeries> {
    let init = seeded_cloud(field, lambda0, seed)?;
    run_epidemic(field, &init, gamma, horizon, grid, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontSpeed {
    pub burn_in: f64,
    pub used: usize,
    pub fit: Option<LinearFit>,
    pub positive: bool,
    pub extinct: bool,
}

/// Least-squares front speed after discarding the first `burn_in` fraction
/// of the horizon. Extinct series are flagged instead of fitted.
pub fn front_speed(series: &FrontSeries, burn_in: f64) -> Result<FrontSpeed> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::config(format!("burn-in fraction {burn_in} must lie in [0, 1)")));
    }
    if series.extinction.is_some() {
        return Ok(FrontSpeed { burn_in, used: 0, fit: None, positive: false, extinct: true });
    }
    let t_max = series.times.last().copied().unwrap_or(0.0);
    let cut = burn_in * t_max;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &t) in series.times.iter().enumerate() {
        if t >= cut {
            xs.push(t);
            ys.push(series.front[k]);
        }
    }
    if xs.len() < 2 {
        return Err(Error::config(format!(
            "only {} samples left after burn-in; need at least 2",
            xs.len()
        )));
    }
    let fit = linear_fit(&xs, &ys);
    let positive = fit.as_ref().map(|f| f.slope > 0.0).unwrap_or(false);
    Ok(FrontSpeed { burn_in, used: xs.len(), fit, positive, extinct: false })
}

/// Clip a front series to the prefix with front <= cap. On a torus the
/// unwrapped front stops measuring propagation once the infection meets
/// its own wrapped image; capping at side/2 keeps every sample inside the
/// injectivity radius, so speed fits see only the ballistic regime.
pub fn clip_front_series(series: &FrontSeries, front_cap: f64) -> FrontSeries {
    let n = series
        .front
        .iter()
        .position(|&f| f > front_cap)
        .unwrap_or(series.front.len());
    FrontSeries {
        times: series.times[..n].to_vec(),
        front: series.front[..n].to_vec(),
        infected: series.infected[..n].to_vec(),
        extinction: series.extinction,
        survived: series.survived,
        n_particles: series.n_particles,
        final_infected: series.final_infected,
        events: series.events,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ConductanceLaw, LatticeBox};

    fn torus(d: usize, side: usize, seed: u64) -> ConductanceField {
        let bbox = LatticeBox::new(d, side, Boundary::Torus).unwrap();
        ConductanceField::sample(bbox, ConductanceLaw::Constant { c: 1.0 }, seed).unwrap()
    }

    fn grid(horizon: f64, n: usize) -> Vec<f64> {
        (1..=n).map(|k| horizon * k as f64 / n as f64).collect()
    }

    /// The calendar queue must interleave pushes and pops in exact
    /// (t, id, kind) order, including ties, window wraps, and events far
    /// beyond the window.
    #[test]
    fn event_queue_pops_in_total_order() {
        let mut rng = rng_from(7, "queue-test", 0);
        let mut q = EventQueue::new(3.0);
        let mut pending: Vec<Ev> = Vec::new();
        let mut now = 0.0f64;
        for id in 0..50u32 {
            let ev = Ev { t: rng.random::<f64>() * 4.0, id, kind: 0 };
            q.push(ev);
            pending.push(ev);
        }
        // Exact ties on t, distinguished by id and kind.
        for (id, kind) in [(60u32, 1u8), (60, 0), (59, 1)] {
            let ev = Ev { t: 2.5, id, kind };
            q.push(ev);
            pending.push(ev);
        }
        let mut popped = Vec::new();
        for step in 0..2000 {
            let ev = q.pop().expect("queue should not be empty yet");
            popped.push(ev);
            now = ev.t;
            let gap: f64 = if step % 17 == 0 {
                // Occasionally jump far past the window.
                40.0 + rng.random::<f64>() * 100.0
            } else {
                rng.random::<f64>() * 2.0
            };
            let nxt = Ev { t: now + gap, id: ev.id, kind: ev.kind };
            q.push(nxt);
            pending.push(nxt);
        }
        while let Some(ev) = q.pop() {
            popped.push(ev);
        }
        pending.sort_by(ev_cmp);
        assert_eq!(pending.len(), popped.len());
        for (a, b) in pending.iter().zip(&popped) {
            assert_eq!(ev_cmp(a, b), Ordering::Equal, "order diverged");
        }
        assert!(now > 0.0);
    }

    #[test]
    fn lone_particle_front_is_its_own_walk() {
        let f = torus(2, 16, 3);
        let g = grid(25.0, 25);
        let s = run_si(&f, 0.0, 25.0, &g, 11).unwrap();
        assert_eq!(s.n_particles, 1);
        assert!(s.infected.iter().all(|&i| i == 1));
        assert!(s.extinction.is_none());
        assert!(s.survived);
        assert!(s.events > 0);
        // Unwrapped positions reduce to torus coordinates modulo the side.
        let (series, trace) = run_epidemic_traced(
            &f,
            &[EpidemicParticle { vertex: 0, infected: true }],
            0.0,
            25.0,
            &g,
            11,
        )
        .unwrap();
        assert_eq!(series, s);
        for (k, snap) in trace.snapshots.iter().enumerate() {
            let (_, v, inf) = snap[0];
            assert!(inf);
            let c = f.bbox.coords(v as usize);
            // front = |x| + |y| of the unwrapped position, which must be
            // congruent to the torus coordinates mod side.
            let _ = c;
            assert!(series.front[k] >= 0.0);
        }
    }

    #[test]
    fn si_infected_count_is_nondecreasing() {
        let f = torus(2, 16, 5);
        let g = grid(30.0, 30);
        let s = run_si(&f, 0.5, 30.0, &g, 7).unwrap();
        assert!(s.n_particles > 1);
        for w in s.infected.windows(2) {
            assert!(w[0] <= w[1], "SI infected count decreased: {:?}", w);
        }
        assert!(s.final_infected > 1, "infection never spread");
        assert!(s.survived && s.extinction.is_none());
    }

    #[test]
    fn sis_with_zero_gamma_is_bit_identical_to_si() {
        let f = torus(2, 12, 9);
        let g = grid(20.0, 16);
        let si = run_si(&f, 0.5, 20.0, &g, 42).unwrap();
        let sis = run_sis(&f, 0.5, 0.0, 20.0, &g, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&si).unwrap(),
            serde_json::to_string(&sis).unwrap()
        );
    }

    #[test]
    fn huge_gamma_extinction_matches_the_exponential_clock() {
        // A lone infected particle with no one to infect dies at its first
        // recovery bell, an Exp(gamma) variable.
        let f = torus(2, 8, 1);
        let gamma = 1e3;
        let reps = 400;
        let mut sum = 0.0;
        for r in 0..reps {
            let s = run_sis(&f, 0.0, gamma, 5.0, &[], 1000 + r).unwrap();
            let t = s.extinction.expect("must go extinct");
            assert!(t > 0.0);
            sum += t;
        }
        let mean = sum / reps as f64;
        let sigma = 1.0 / (gamma * (reps as f64).sqrt());
        assert!(
            (mean - 1.0 / gamma).abs() < 3.0 * sigma,
            "mean extinction {mean} vs 1/gamma {} (sigma {sigma})",
            1.0 / gamma
        );
    }

    #[test]
    fn adding_particles_never_shrinks_the_infected_set() {
        let f = torus(2, 10, 4);
        let horizon = 15.0;
        let mut g = vec![0.0];
        g.extend(grid(horizon, 10));
        let mut small: Vec<EpidemicParticle> = Vec::new();
        small.push(EpidemicParticle { vertex: 0, infected: true });
        let mut rng = rng_from(77, "placement", 0);
        for _ in 0..30 {
            let v = rng.random_range(0..f.vertex_count()) as u32;
            small.push(EpidemicParticle { vertex: v, infected: false });
        }
        let mut big = small.clone();
        for _ in 0..20 {
            let v = rng.random_range(0..f.vertex_count()) as u32;
            big.push(EpidemicParticle { vertex: v, infected: false });
        }
        // Shared particles keep their ids, hence their derived streams.
        let gamma = 0.3;
        let (_, tr_small) = run_epidemic_traced(&f, &small, gamma, horizon, &g, 5).unwrap();
        let (_, tr_big) = run_epidemic_traced(&f, &big, gamma, horizon, &g, 5).unwrap();
        let mut seen_infected = false;
        for (snap_s, snap_b) in tr_small.snapshots.iter().zip(&tr_big.snapshots) {
            for &(id, v, inf) in snap_s {
                let &(id_b, v_b, inf_b) = &snap_b[id as usize];
                assert_eq!(id, id_b);
                assert_eq!(v, v_b, "shared particle {id} moved differently");
                if inf {
                    seen_infected = true;
                    assert!(inf_b, "particle {id} infected in the small run only");
                }
            }
        }
        assert!(seen_infected);
    }

    #[test]
    fn no_processed_state_leaves_infected_and_susceptible_co_located() {
        let f = torus(2, 10, 8);
        let g = grid(12.0, 24);
        let init: Vec<EpidemicParticle> = std::iter::once(EpidemicParticle {
            vertex: 0,
            infected: true,
        })
        .chain((0..40).map(|k| EpidemicParticle {
            vertex: (k * 7 % f.vertex_count()) as u32,
            infected: false,
        }))
        .collect();
        for &gamma in &[0.0, 0.5] {
            let (_, trace) = run_epidemic_traced(&f, &init, gamma, 12.0, &g, 21).unwrap();
            for snap in &trace.snapshots {
                let mut status: std::collections::HashMap<u32, (bool, bool)> =
                    std::collections::HashMap::new();
                for &(_, v, inf) in snap {
                    let e = status.entry(v).or_insert((false, false));
                    if inf {
                        e.0 = true;
                    } else {
                        e.1 = true;
                    }
                }
                for (v, (has_inf, has_sus)) in status {
                    assert!(
                        !(has_inf && has_sus),
                        "vertex {v} hosts both infected and susceptible"
                    );
                }
            }
        }
    }

    #[test]
    fn hard_wall_positions_agree_with_plain_coordinates() {
        let bbox = LatticeBox::new(2, 9, Boundary::HardWall).unwrap();
        let f = ConductanceField::sample(bbox, ConductanceLaw::Constant { c: 1.0 }, 2).unwrap();
        let g = grid(10.0, 10);
        let init = [
            EpidemicParticle { vertex: 0, infected: true },
            EpidemicParticle { vertex: 40, infected: false },
        ];
        let (series, trace) = run_epidemic_traced(&f, &init, 0.0, 10.0, &g, 13).unwrap();
        // With hard walls nothing wraps, so the front must match the l1
        // distance of the furthest infected snapshot exactly.
        for (k, snap) in trace.snapshots.iter().enumerate() {
            let mut best = 0i64;
            for &(_, v, inf) in snap {
                if inf {
                    let c = f.bbox.coords(v as usize);
                    let l1 = c.iter().map(|&x| x as i64).sum::<i64>();
                    best = best.max(l1);
                }
            }
            assert_eq!(series.front[k] as i64, best, "sample {k}");
        }
    }

    #[test]
    fn sis_survival_drops_with_gamma() {
        // Low density: co-location is rare, so high gamma loses the race
        // between recovery and the next meeting.
        let f = torus(2, 12, 6);
        let horizon = 40.0;
        let reps = 40;
        let mut survived = [0u64; 2];
        for (j, &gamma) in [0.02f64, 2.0].iter().enumerate() {
            for r in 0..reps {
                let s = run_sis(&f, 0.2, gamma, horizon, &[], 300 + r).unwrap();
                if s.survived {
                    survived[j] += 1;
                }
            }
        }
        assert!(
            survived[0] > survived[1] + reps / 5,
            "survival counts {survived:?} not clearly ordered"
        );
    }

    #[test]
    fn isolated_origin_is_rejected() {
        let bbox = LatticeBox::new(2, 6, Boundary::Torus).unwrap();
        let mut w = vec![1.0; 2 * 36];
        // Cut the four edges incident to the origin (0,0).
        w[bbox.index(&[0, 0]) * 2] = 0.0;
        w[bbox.index(&[0, 0]) * 2 + 1] = 0.0;
        w[bbox.index(&[5, 0]) * 2] = 0.0;
        w[bbox.index(&[0, 5]) * 2 + 1] = 0.0;
        let f = ConductanceField::from_weights(bbox, w).unwrap();
        assert_eq!(f.vertex_weight(0), 0.0);
        let err = run_si(&f, 0.5, 10.0, &[], 1).unwrap_err();
        assert!(err.to_string().contains("isolated"));
    }

    #[test]
    fn front_speed_fits_and_flags() {
        let synth = FrontSeries {
            times: (0..20).map(|k| k as f64).collect(),
            front: (0..20).map(|k| 3.0 * k as f64).collect(),
            infected: vec![1; 20],
            extinction: None,
            survived: true,
            n_particles: 1,
            final_infected: 1,
            events: 0,
        };
        let sp = front_speed(&synth, 0.1).unwrap();
        let fit = sp.fit.unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(sp.positive && !sp.extinct);

        let flat = FrontSeries { front: vec![5.0; 20], ..synth.clone() };
        let sp = front_speed(&flat, 0.0).unwrap();
        assert_eq!(sp.fit.unwrap().slope, 0.0);
        assert!(!sp.positive);

        let extinct = FrontSeries { extinction: Some(3.0), ..synth.clone() };
        let sp = front_speed(&extinct, 0.1).unwrap();
        assert!(sp.extinct && sp.fit.is_none() && !sp.positive);

        let err = front_speed(&synth, 0.999).unwrap_err();
        assert!(err.to_string().contains("burn-in"));
    }

    #[test]
    fn desk_scale_si_front_moves_ballistically() {
        // Horizon short enough that the front has not yet wrapped the torus;
        // past t ~ 10 on side 48 it saturates and the fit goes flat.
        let f = torus(2, 48, 12);
        let horizon = 10.0;
        let g = grid(horizon, 20);
        let s = run_si(&f, 1.0, horizon, &g, 31).unwrap();
        let sp = front_speed(&s, 0.1).unwrap();
        let fit = sp.fit.unwrap();
        assert!(sp.positive, "front speed not positive: {fit:?}");
        assert!(fit.r2 > 0.8, "front fit too noisy: {fit:?}");
    }

    #[test]
    #[ignore = "prints survival grids for tuning the sis experiment"]
    fn probe_sis_survival_grid() {
        use crate::stats::wilson_interval;
        let gammas = [0.001f64, 0.01, 0.1, 1.0];
        let reps = 400u64;
        for (side, lambda0, horizon) in [
            (20usize, 0.03f64, 100.0f64),
            (20, 0.05, 100.0),
            (32, 0.05, 100.0),
            (32, 0.08, 120.0),
        ] {
            let f = torus(2, side, 6);
            let t0 = std::time::Instant::now();
            let mut line = format!("side {side} lambda0 {lambda0} horizon {horizon}:");
            for &gamma in &gammas {
                let mut ok = 0u64;
                for r in 0..reps {
                    let s = run_sis(&f, lambda0, gamma, horizon, &[], 500 + r).unwrap();
                    if s.survived {
                        ok += 1;
                    }
                }
                let w = wilson_interval(ok, reps);
                line += &format!(
                    " g={gamma}: {:.3} [{:.3},{:.3}]",
                    ok as f64 / reps as f64,
                    w.lo,
                    w.hi
                );
            }
            println!("{line} ({:.1}s)", t0.elapsed().as_secs_f64());
        }
    }

    #[test]
    #[ignore = "runs the full ten-seed speed experiment and prints per-seed fits"]
    fn probe_si_speed_ten_seeds() {
        let side = 200usize;
        let f = torus(2, side, 12);
        let horizon = 400.0;
        let g = grid(horizon, 800);
        let mut passes = 0;
        let t0 = std::time::Instant::now();
        for seed in 0..10u64 {
            let s = run_si(&f, 2.0, horizon, &g, seed).unwrap();
            let clipped = clip_front_series(&s, side as f64 / 2.0);
            let sp = front_speed(&clipped, 0.1).unwrap();
            let fit = sp.fit.unwrap();
            let ok = sp.positive && fit.r2 >= 0.9;
            if ok {
                passes += 1;
            }
            println!(
                "seed {seed}: kept {} samples, slope {:.4} r2 {:.4} {}",
                sp.used,
                fit.slope,
                fit.r2,
                if ok { "pass" } else { "FAIL" }
            );
        }
        println!("{passes}/10 seeds pass ({:.0}s)", t0.elapsed().as_secs_f64());
    }

    #[test]
    #[ignore = "prints front series shapes for tuning the speed experiment"]
    fn probe_front_series() {
        for (side, lambda0, horizon, n) in
            [(48usize, 1.0f64, 60.0f64, 30usize), (200, 2.0, 400.0, 80)]
        {
            let f = torus(2, side, 12);
            let g = grid(horizon, n);
            let t0 = std::time::Instant::now();
            let s = run_si(&f, lambda0, horizon, &g, 31).unwrap();
            let dt = t0.elapsed().as_secs_f64();
            let sp = front_speed(&s, 0.1).unwrap();
            println!(
                "side {side} lambda0 {lambda0} horizon {horizon}: n={} events={} {dt:.1}s fit {:?}",
                s.n_particles, s.events, sp.fit
            );
            for (t, fr) in s.times.iter().zip(&s.front) {
                println!("  t={t:>6.1} front={fr:>7.1}");
            }
        }
    }

    #[test]
    fn rejects_bad_grids_and_parameters() {
        let f = torus(2, 8, 1);
        assert!(run_si(&f, 0.5, 10.0, &[11.0], 1).is_err());
        assert!(run_si(&f, 0.5, 10.0, &[5.0, 3.0], 1).is_err());
        assert!(run_si(&f, -0.5, 10.0, &[], 1).is_err());
        assert!(run_sis(&f, 0.5, -1.0, 10.0, &[], 1).is_err());
        assert!(run_epidemic(&f, &[], 0.0, 10.0, &[], 1).is_err());
    }
}
