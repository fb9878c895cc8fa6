//! Cloud-coupling experiments: soft-local-times domination across mixing
//! times and the equalization of confined kernels.

use super::diffusion::{base_csv, field_on_torus};
use super::RunOutput;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::lattice::ConductanceLaw;
use crate::mixing::{kernel_oscillation_check, mixing_experiment, ConfinementMode, MixingParams};
use crate::report::fmt_f64;
use crate::rng::derive_seed;
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MixingRunParams {
    side: usize,
    k: usize,
    ell: usize,
    k_prime: usize,
    eps: f64,
    beta: f64,
    deltas: Vec<f64>,
    lambda0: Option<f64>,
    confined: bool,
    c1: f64,
    rho: Option<f64>,
    theta: f64,
    c0: f64,
    tol: f64,
}

impl Default for MixingRunParams {
    fn default() -> Self {
        MixingRunParams {
            side: 64,
            k: 64,
            ell: 8,
            k_prime: 16,
            eps: 0.5,
            beta: 1.0,
            deltas: vec![64.0, 256.0, 1024.0],
            lambda0: None,
            confined: false,
            c1: 1.0,
            rho: None,
            theta: 1.0,
            c0: 1.0,
            tol: 1e-12,
        }
    }
}

pub(super) fn run_mixing(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: MixingRunParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(50) as u32;
    let field = field_on_torus(
        p.side,
        ConductanceLaw::Constant { c: 1.0 },
        derive_seed(cfg.seed, "field", 0),
    )?;

    let mut csv = base_csv(
        cfg,
        &[
            "delta",
            "reps",
            "successes",
            "frequency",
            "wilson_lo",
            "wilson_hi",
            "containment_ok",
            "density_resamples",
            "mean_particles",
            "mean_coupled",
            "recommended_delta",
        ],
    );
    let mut replica_seeds = Vec::new();
    for (i, &delta) in p.deltas.iter().enumerate() {
        let seed = derive_seed(cfg.seed, "mixing", i as u64);
        replica_seeds.push(seed);
        let mut params = MixingParams::new(p.k, p.ell, p.k_prime, p.eps, p.beta, delta);
        params.reps = reps;
        params.seed = seed;
        params.lambda0 = p.lambda0;
        params.theta = p.theta;
        params.c0 = p.c0;
        params.tol = p.tol;
        if p.confined {
            params.confinement = ConfinementMode::Confined { c1: p.c1, rho: p.rho };
        }
        let rep = mixing_experiment(&field, &params)?;
        csv.row(&[
            fmt_f64(delta),
            rep.reps.to_string(),
            rep.successes.to_string(),
            fmt_f64(rep.frequency),
            fmt_f64(rep.wilson.lo),
            fmt_f64(rep.wilson.hi),
            rep.containment_ok.to_string(),
            rep.density_resamples.to_string(),
            fmt_f64(rep.mean_particles),
            fmt_f64(rep.mean_coupled),
            fmt_f64(rep.recommended_delta),
        ]);
    }
    Ok(RunOutput {
        files: vec![("dominations.csv".into(), csv.as_str().into())],
        replica_seeds,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfinedMixingParams {
    side: usize,
    ell: usize,
    rho: f64,
    deltas: Vec<f64>,
    theta: f64,
    tol: f64,
}

impl Default for ConfinedMixingParams {
    fn default() -> Self {
        ConfinedMixingParams {
            side: 64,
            ell: 4,
            rho: 32.0,
            deltas: vec![64.0, 128.0, 256.0],
            theta: 1.0,
            tol: 1e-12,
        }
    }
}

pub(super) fn run_confined_mixing(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: ConfinedMixingParams = cfg.params_as()?;
    let field = field_on_torus(
        p.side,
        ConductanceLaw::Constant { c: 1.0 },
        derive_seed(cfg.seed, "field", 0),
    )?;
    let corner = vec![(p.side - p.ell) / 2; 2];
    let report = kernel_oscillation_check(&field, &corner, p.ell, p.rho, &p.deltas, p.theta, p.tol)?;

    let mut csv = base_csv(cfg, &["delta", "max_osc", "fitted_c"]);
    for pt in &report.points {
        csv.row(&[fmt_f64(pt.delta), fmt_f64(pt.max_osc), fmt_f64(pt.fitted_c)]);
    }
    let mut fits = base_csv(cfg, &["slope", "intercept", "r2", "n", "theta", "rho"]);
    if let Some(f) = &report.fit {
        fits.row(&[
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2),
            f.n.to_string(),
            fmt_f64(p.theta),
            fmt_f64(p.rho),
        ]);
    }
    Ok(RunOutput {
        files: vec![
            ("oscillation.csv".into(), csv.as_str().into()),
            ("fits.csv".into(), fits.as_str().into()),
        ],
        replica_seeds: vec![],
    })
}
