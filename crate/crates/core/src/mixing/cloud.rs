//! Poisson particle clouds and their evolution.
//!
//! At intensity lambda0 the number of particles at x is an independent
//! Poisson variable of mean lambda0 * mu_x, which is the stationary law for
//! the system of independent walks on the torus.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::rng::{rng_from, rng_from_seed};
use crate::walk::{simulate, simulate_confined, Trajectory};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Particle {
    pub id: u64,
    pub vertex: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParticleCloud {
    pub time: f64,
    /// Generating intensity per unit mu-mass.
    pub lambda0: f64,
    pub particles: Vec<Particle>,
}

impl ParticleCloud {
    pub fn counts(&self, n_vertices: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_vertices];
        for p in &self.particles {
            counts[p.vertex as usize] += 1;
        }
        counts
    }
}

/// Poisson(lambda0 * mu_x) particles at every x in `region`, ids sequential
/// in region order.
pub fn sample_cloud(
    field: &ConductanceField,
    lambda0: f64,
    region: &[u32],
    seed: u64,
) -> Result<ParticleCloud> {
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(Error::config("cloud intensity lambda0 must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    let mut particles = Vec::new();
    let mut id = 0u64;
    for &x in region {
        let mean = lambda0 * field.vertex_weight(x as usize);
        if mean <= 0.0 {
            continue;
        }
        let pois = Poisson::new(mean).map_err(|e| Error::config(e.to_string()))?;
        let count = pois.sample(&mut rng) as u64;
        for _ in 0..count {
            particles.push(Particle { id, vertex: x });
            id += 1;
        }
    }
    Ok(ParticleCloud {
        time: 0.0,
        lambda0,
        particles,
    })
}

/// Advances every particle by an independent walk over [0, delta]; with
/// confinement each particle is conditioned to keep its displacement inside
/// the rho-cube (rejection per particle). Per-particle RNG streams are
/// derived from (seed, particle id), so the result is independent of
/// iteration order.
pub fn evolve_cloud(
    field: &ConductanceField,
    cloud: &ParticleCloud,
    delta: f64,
    confinement: Option<f64>,
    seed: u64,
) -> Result<(ParticleCloud, Vec<Trajectory>)> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::config("evolution span must be >= 0"));
    }
    let mut particles = Vec::with_capacity(cloud.particles.len());
    let mut trajectories = Vec::with_capacity(cloud.particles.len());
    for p in &cloud.particles {
        let mut rng = rng_from(seed, "evolve-cloud", p.id);
        let traj = match confinement {
            None => simulate(field, p.vertex as usize, delta, &mut rng)?,
            Some(rho) => {
                simulate_confined(field, p.vertex as usize, delta, rho, 1e-4, &mut rng)
                    .map_err(|e| match e {
                        Error::RuntimeAbort(msg) => {
                            Error::abort(format!("particle {}: {msg}", p.id))
                        }
                        other => other,
                    })?
                    .trajectory
            }
        };
        particles.push(Particle {
            id: p.id,
            vertex: *traj.states.last().unwrap(),
        });
        trajectories.push(traj);
    }
    Ok((
        ParticleCloud {
            time: cloud.time + delta,
            lambda0: cloud.lambda0,
            particles,
        },
        trajectories,
    ))
}

/// Histogram of per-vertex counts tested against the Poisson(lambda0 mu)
/// stationary law, pooling all vertices with equal mu into one group.
pub fn stationarity_chi_square(
    field: &ConductanceField,
    cloud: &ParticleCloud,
    region: &[u32],
) -> Result<crate::stats::ChiSquareTest> {
    let counts = cloud.counts(field.vertex_count());
    // Group vertices by mu so each group is i.i.d. Poisson.
    let mut mus: Vec<f64> = region
        .iter()
        .map(|&v| field.vertex_weight(v as usize))
        .collect();
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mus.dedup();
    if mus.len() != 1 {
        return Err(Error::config(
            "stationarity test needs a mu-homogeneous region",
        ));
    }
    let mean = cloud.lambda0 * mus[0];
    let max_count = region
        .iter()
        .map(|&v| counts[v as usize])
        .max()
        .unwrap_or(0);
    let mut observed = vec![0.0f64; max_count as usize + 2];
    for &v in region {
        observed[counts[v as usize] as usize] += 1.0;
    }
    let n = region.len() as f64;
    let mut expected: Vec<f64> = (0..=max_count)
        .map(|k| n * crate::stats::poisson_pmf(mean, k))
        .collect();
    // Tail bucket soaks up the remaining mass.
    expected.push(n - expected.iter().sum::<f64>());
    crate::stats::chi_square_gof(&observed, &expected, 5.0, 0)
        .ok_or_else(|| Error::config("too few occupied count bins for a chi-square"))
}

/// Convenience sampler: standalone endpoint draw for one particle.
pub fn endpoint<R: Rng>(
    field: &ConductanceField,
    x: usize,
    delta: f64,
    rng: &mut R,
) -> Result<u32> {
    let traj = simulate(field, x, delta, rng)?;
    Ok(*traj.states.last().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, ConductanceLaw, LatticeBox};
    use crate::walk::displacement;

    fn constant_torus(side: usize) -> ConductanceField {
        let b = LatticeBox::new(2, side, Boundary::Torus).unwrap();
        ConductanceField::sample(b, ConductanceLaw::Constant { c: 1.0 }, 5).unwrap()
    }

    #[test]
    fn cloud_counts_match_poisson_moments() {
        let f = constant_torus(100);
        let region: Vec<u32> = (0..10_000u32).collect();
        let cloud = sample_cloud(&f, 0.5, &region, 42).unwrap();
        // mean count per vertex = lambda0 mu = 2, sd over 10^4 vertices
        // = sqrt(2/10^4) = 0.0141.
        let mean = cloud.particles.len() as f64 / 10_000.0;
        assert!((mean - 2.0).abs() < 3.0 * 0.01415, "mean {mean}");
        // Ids unique and sequential.
        assert!(cloud
            .particles
            .iter()
            .enumerate()
            .all(|(i, p)| p.id == i as u64));
    }

    #[test]
    fn tiny_intensity_gives_empty_cloud() {
        let f = constant_torus(100);
        let region: Vec<u32> = (0..10_000u32).collect();
        let cloud = sample_cloud(&f, 1e-9, &region, 7).unwrap();
        assert!(cloud.particles.len() <= 1);
        assert!(sample_cloud(&f, 1.0, &[], 7).unwrap().particles.is_empty());
        assert!(sample_cloud(&f, 0.0, &region, 7).is_err());
    }

    #[test]
    fn zero_span_evolution_is_identity() {
        let f = constant_torus(8);
        let region: Vec<u32> = (0..64u32).collect();
        let cloud = sample_cloud(&f, 1.0, &region, 3).unwrap();
        let (after, trajs) = evolve_cloud(&f, &cloud, 0.0, None, 11).unwrap();
        assert_eq!(after.time, 0.0);
        for (a, b) in cloud.particles.iter().zip(&after.particles) {
            assert_eq!((a.id, a.vertex), (b.id, b.vertex));
        }
        assert!(trajs.iter().all(|t| t.times.is_empty()));
    }

    #[test]
    fn evolution_is_stationary_on_the_torus() {
        let f = constant_torus(24);
        let region: Vec<u32> = (0..(24 * 24) as u32).collect();
        let cloud = sample_cloud(&f, 2.0, &region, 17).unwrap();
        let (after, _) = evolve_cloud(&f, &cloud, 10.0, None, 18).unwrap();
        assert_eq!(after.time, 10.0);
        assert_eq!(after.particles.len(), cloud.particles.len());
        let chi = stationarity_chi_square(&f, &after, &region).unwrap();
        assert!(chi.p_value > 0.01, "p = {}", chi.p_value);
    }

    #[test]
    fn sure_event_confinement_matches_unconfined_bitwise() {
        let b = LatticeBox::new(2, 6, Boundary::HardWall).unwrap();
        let f = ConductanceField::sample(b, ConductanceLaw::Constant { c: 1.0 }, 2).unwrap();
        let region: Vec<u32> = (0..36u32).collect();
        let cloud = sample_cloud(&f, 0.5, &region, 9).unwrap();
        // rho = 2 * linf-diameter makes confinement a sure event, so the
        // rejection sampler accepts the first attempt with identical draws.
        let (free, _) = evolve_cloud(&f, &cloud, 5.0, None, 33).unwrap();
        let (conf, trajs) = evolve_cloud(&f, &cloud, 5.0, Some(20.0), 33).unwrap();
        for (a, b) in free.particles.iter().zip(&conf.particles) {
            assert_eq!((a.id, a.vertex), (b.id, b.vertex));
        }
        for tr in &trajs {
            let disp = displacement(&f, tr);
            assert!(disp.iter().all(|&dx| dx.abs() <= 10));
        }
    }

    #[test]
    fn hopeless_confinement_names_the_particle() {
        let f = constant_torus(12);
        let cloud = ParticleCloud {
            time: 0.0,
            lambda0: 1.0,
            particles: vec![Particle { id: 7, vertex: 0 }],
        };
        let err = evolve_cloud(&f, &cloud, 600.0, Some(2.0), 1).unwrap_err();
        match err {
            Error::RuntimeAbort(msg) => assert!(msg.contains("particle 7"), "{msg}"),
            other => panic!("wrong error kind: {other}"),
        }
    }
}
