//! Local-mixing experiment: does an initially dense particle cloud, evolved
//! for time Delta, dominate a fresh Poisson cloud on the retained inner
//! cube?
//!
//! Each replica samples a Poisson(lambda0 mu) cloud on Q_K, certifies the
//! beta-density per subcube (resampling until the certificate passes), and
//! runs the soft-local-times coupling against the target intensity
//! zeta = beta (1-eps) mu on Q_K'. The coupling uses only the guaranteed
//! density: each subcube contributes exactly ceil(beta mu(T_i)) particles,
//! chosen uniformly from those present, so the surplus from lambda0 > beta
//! cannot mask the Delta-dependence of the domination. In confined mode
//! every particle keeps its displacement inside a rho-cube and the margin
//! K - K' >= c1 sqrt(Delta log Delta) is enforced.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::mixing::cloud::sample_cloud;
use crate::mixing::confined::confined_kernel;
use crate::mixing::slt::{
    soft_local_time_coupling, CouplingReport, DenseKernels, TranslatedKernels,
};
use crate::mixing::tess::{density_check, Tessellation};
use crate::rng::derive_seed;
use crate::stats::{wilson_interval, WilsonInterval};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ConfinementMode {
    Free,
    Confined {
        /// Margin coefficient in K - K' >= c1 sqrt(Delta log Delta).
        c1: f64,
        /// Displacement cube side; defaults to K - K'.
        rho: Option<f64>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingParams {
    pub k: usize,
    pub ell: usize,
    pub k_prime: usize,
    pub eps: f64,
    pub beta: f64,
    pub delta: f64,
    pub confinement: ConfinementMode,
    pub reps: u32,
    pub seed: u64,
    /// Cloud intensity; defaults to 2 beta so the density certificate
    /// passes with overwhelming probability.
    pub lambda0: Option<f64>,
    /// Oscillation exponent used only for the advisory Delta floor
    /// c0 ell^2 eps^{-4/theta}.
    pub theta: f64,
    pub c0: f64,
    pub tol: f64,
}

impl MixingParams {
    pub fn new(k: usize, ell: usize, k_prime: usize, eps: f64, beta: f64, delta: f64) -> Self {
        MixingParams {
            k,
            ell,
            k_prime,
            eps,
            beta,
            delta,
            confinement: ConfinementMode::Free,
            reps: 50,
            seed: 1,
            lambda0: None,
            theta: 1.0,
            c0: 1.0,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub k: usize,
    pub ell: usize,
    pub k_prime: usize,
    pub eps: f64,
    pub beta: f64,
    pub delta: f64,
    pub lambda0: f64,
    pub confined: bool,
    pub reps: u32,
    pub successes: u32,
    pub frequency: f64,
    pub wilson: WilsonInterval,
    /// Replicas whose initial cloud had to be redrawn for density.
    pub density_resamples: u32,
    /// Advisory floor c0 ell^2 eps^{-4/theta}; not enforced.
    pub recommended_delta: f64,
    /// Per-vertex count of failed dominations across replicas.
    pub failure_profile: Vec<u32>,
    /// Exact psi-in-endpoints containment held on every successful rep.
    pub containment_ok: bool,
    /// Mean cloud size before and after the beta-thinning.
    pub mean_particles: f64,
    pub mean_coupled: f64,
}

/// Retains exactly ceil(beta mu(T_i)) uniformly chosen particles per
/// subcube: the worst configuration the density certificate still allows.
fn thin_to_density(
    field: &ConductanceField,
    tess: &Tessellation,
    beta: f64,
    particles: &[crate::mixing::cloud::Particle],
    seed: u64,
) -> Vec<(u32, u64)> {
    use rand::Rng;
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut in_subcube: Vec<Vec<usize>> = vec![Vec::new(); tess.n_subcubes()];
    let mut subcube_of = std::collections::HashMap::new();
    for i in 0..tess.n_subcubes() {
        for v in tess.subcube_vertices(&field.bbox, i) {
            subcube_of.insert(v, i);
        }
    }
    for (idx, p) in particles.iter().enumerate() {
        if let Some(&i) = subcube_of.get(&p.vertex) {
            in_subcube[i].push(idx);
        }
    }
    let mut kept = Vec::new();
    for i in 0..tess.n_subcubes() {
        let required: f64 = tess
            .subcube_vertices(&field.bbox, i)
            .iter()
            .map(|&v| beta * field.vertex_weight(v as usize))
            .sum();
        let want = (required - 1e-9).ceil().max(0.0) as usize;
        let bucket = &mut in_subcube[i];
        let take = want.min(bucket.len());
        for t in 0..take {
            let j = rng.random_range(t..bucket.len());
            bucket.swap(t, j);
        }
        for &idx in bucket.iter().take(take) {
            kept.push((particles[idx].vertex, particles[idx].id));
        }
    }
    kept
}

fn couple_one(
    field: &ConductanceField,
    params: &MixingParams,
    positions: &[u32],
    ids: &[u64],
    zeta: &[f64],
    slt_seed: u64,
) -> Result<CouplingReport> {
    match params.confinement {
        ConfinementMode::Free => {
            if field.is_translation_invariant() {
                let k = TranslatedKernels::new(field, positions, params.delta, params.tol)?;
                soft_local_time_coupling(&k, ids, zeta, slt_seed)
            } else {
                let k = DenseKernels::from_walk(field, positions, params.delta, params.tol)?;
                soft_local_time_coupling(&k, ids, zeta, slt_seed)
            }
        }
        ConfinementMode::Confined { rho, .. } => {
            let rho = rho.unwrap_or((params.k - params.k_prime) as f64);
            let starts: Vec<usize> = positions.iter().map(|&v| v as usize).collect();
            let k = confined_kernel(field, params.delta, rho, &starts, params.tol)?;
            soft_local_time_coupling(&k, ids, zeta, slt_seed)
        }
    }
}

pub fn mixing_experiment(
    field: &ConductanceField,
    params: &MixingParams,
) -> Result<MixingReport> {
    if !(params.eps > 0.0 && params.eps < 1.0) {
        return Err(Error::config("eps must lie in (0,1)"));
    }
    if !(params.beta > 0.0) || !(params.delta > 0.0) || params.reps == 0 {
        return Err(Error::config("mixing needs beta > 0, delta > 0, reps >= 1"));
    }
    let tess = Tessellation::new(
        &field.bbox,
        &vec![0; field.bbox.d],
        params.k,
        params.ell,
        params.k_prime,
    )?;
    if let ConfinementMode::Confined { c1, .. } = params.confinement {
        let margin = (params.k - params.k_prime) as f64;
        let need = c1 * (params.delta * params.delta.ln().max(1.0)).sqrt();
        if margin < need {
            return Err(Error::config(format!(
                "margin K - K' = {margin} below c1 sqrt(Delta log Delta) = {need:.2}"
            )));
        }
    }
    let lambda0 = params.lambda0.unwrap_or(2.0 * params.beta);
    let cube = tess.cube_vertices(&field.bbox);
    let inner = tess.inner_vertices(&field.bbox);
    let n = field.vertex_count();
    let mut zeta = vec![0.0f64; n];
    for &y in &inner {
        zeta[y as usize] = params.beta * (1.0 - params.eps) * field.vertex_weight(y as usize);
    }

    let mut successes = 0u32;
    let mut density_resamples = 0u32;
    let mut failure_profile = vec![0u32; n];
    let mut containment_ok = true;
    let mut total_particles = 0usize;
    let mut total_coupled = 0usize;
    for rep in 0..params.reps {
        let rep_seed = derive_seed(params.seed, "mixing", rep as u64);
        let mut cloud = None;
        for attempt in 0..200u64 {
            let c = sample_cloud(field, lambda0, &cube, derive_seed(rep_seed, "cloud", attempt))?;
            if density_check(field, &c, &tess, params.beta)?.pass {
                cloud = Some(c);
                break;
            }
            density_resamples += 1;
        }
        let cloud = cloud.ok_or_else(|| {
            Error::abort("density certificate failed 200 times; raise lambda0 or lower beta")
        })?;
        total_particles += cloud.particles.len();
        let kept = thin_to_density(
            field,
            &tess,
            params.beta,
            &cloud.particles,
            derive_seed(rep_seed, "thin", 0),
        );
        total_coupled += kept.len();
        let positions: Vec<u32> = kept.iter().map(|&(v, _)| v).collect();
        let ids: Vec<u64> = kept.iter().map(|&(_, id)| id).collect();
        let report = couple_one(
            field,
            params,
            &positions,
            &ids,
            &zeta,
            derive_seed(rep_seed, "slt", 0),
        )?;
        if report.success {
            successes += 1;
            containment_ok &= report.containment_holds();
        } else {
            for &y in &report.failures {
                failure_profile[y as usize] += 1;
            }
        }
    }

    Ok(MixingReport {
        k: tess.k,
        ell: params.ell,
        k_prime: params.k_prime,
        eps: params.eps,
        beta: params.beta,
        delta: params.delta,
        lambda0,
        confined: matches!(params.confinement, ConfinementMode::Confined { .. }),
        reps: params.reps,
        successes,
        frequency: successes as f64 / params.reps as f64,
        wilson: wilson_interval(successes as u64, params.reps as u64),
        density_resamples,
        recommended_delta: params.c0
            * (params.ell * params.ell) as f64
            * params.eps.powf(-4.0 / params.theta),
        failure_profile,
        containment_ok,
        mean_particles: total_particles as f64 / params.reps as f64,
        mean_coupled: total_coupled as f64 / params.reps as f64,
    })
}
