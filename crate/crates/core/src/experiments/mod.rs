//! Experiment registry: every runnable experiment by name, the one
//! mathematical statement it exercises, and the dispatch that turns a
//! validated config into output files plus a manifest.
//!
//! Replica seeds are derived as hash(master seed, experiment name, replica
//! index), replicas may run in parallel, and outputs are merged in replica
//! order, so reruns of the same config are byte-identical.

mod diffusion;
mod epidemic_runs;
mod mixing_runs;
mod spectra;
mod surface_runs;

use crate::config::{validate, ExperimentConfig};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use std::path::Path;

/// Files an experiment produced, still in memory, plus the replica seeds
/// it consumed. Writing and digesting happen in [`run_experiment`].
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub replica_seeds: Vec<u64>,
}

pub struct ExperimentInfo {
    pub name: &'static str,
    /// Plain-math statement the experiment exercises; goes in every output
    /// header.
    pub statement: &'static str,
    pub run: fn(&ExperimentConfig) -> Result<RunOutput>,
}

pub fn registry() -> &'static [ExperimentInfo] {
    &[
        ExperimentInfo {
            name: "stationarity",
            statement: "a Poisson(lambda0 mu_x) cloud of independent conductance walks keeps \
                        the same per-vertex occupancy law at every later time",
            run: diffusion::run_stationarity,
        },
        ExperimentInfo {
            name: "exit-tail",
            statement: "P[walk leaves B(x, r) before t] <= c3 exp(-c4 r^2 / t): box exit times \
                        have gaussian-order upper tails",
            run: diffusion::run_exit_tail,
        },
        ExperimentInfo {
            name: "gaussian-fit",
            statement: "log q_t(x, y) is affine in |x - y|^2 / t inside the diffusive window, \
                        with two-sided gaussian envelopes and no violations",
            run: diffusion::run_gaussian_fit,
        },
        ExperimentInfo {
            name: "phi",
            statement: "caloric functions contract: oscillation over the upper half of each \
                        dyadic cylinder is at most (1 - 1/C_H) of the full oscillation",
            run: spectra::run_phi,
        },
        ExperimentInfo {
            name: "poincare",
            statement: "variance of f over the r-ball is at most C_P r^2 times the Dirichlet \
                        energy of f over the c_w r-ball",
            run: spectra::run_poincare,
        },
        ExperimentInfo {
            name: "mixing",
            statement: "after mixing time Delta, a beta-density cloud couples so that it \
                        dominates an eps-thinned stationary cloud on the inner K'-box",
            run: mixing_runs::run_mixing,
        },
        ExperimentInfo {
            name: "confined-mixing",
            statement: "kernels of rho-confined walks equalize: the worst pairwise kernel \
                        difference decays like Delta^(-(d + theta)/2)",
            run: mixing_runs::run_confined_mixing,
        },
        ExperimentInfo {
            name: "si-speed",
            statement: "the SI front grows linearly: liminf over t of |I_t|_1 / t is positive \
                        when the cloud is dense enough",
            run: epidemic_runs::run_si_speed,
        },
        ExperimentInfo {
            name: "sis-survival",
            statement: "SIS survival at a fixed horizon is nonincreasing in the recovery rate \
                        gamma, and fast recovery extinguishes the infection",
            run: epidemic_runs::run_sis_survival,
        },
        ExperimentInfo {
            name: "cell-event",
            statement: "background particles that collide with an infected tagged particle \
                        spread to every neighbor cell by the cell end with positive frequency",
            run: epidemic_runs::run_cell_event,
        },
        ExperimentInfo {
            name: "nu",
            statement: "the worst-case cell probability nu stays positive after thinning the \
                        density by eps and confining every motion to the w ell cube",
            run: epidemic_runs::run_nu,
        },
        ExperimentInfo {
            name: "surface",
            statement: "when bad cells are sparse, a two-sided Lipschitz surface of good \
                        cells exists and surrounds the origin cell",
            run: surface_runs::run_surface,
        },
    ]
}

pub fn find(name: &str) -> Option<&'static ExperimentInfo> {
    registry().iter().find(|e| e.name == name)
}

/// Comment headers shared by every output file of a run.
pub(crate) fn base_headers(cfg: &ExperimentConfig, statement: &str) -> Vec<(&'static str, String)> {
    vec![
        ("schema", "1".to_string()),
        ("experiment", cfg.experiment.clone()),
        ("statement", statement.to_string()),
        ("seed", cfg.seed.to_string()),
        ("config_sha256", cfg.sha256()),
    ]
}

pub(crate) fn statement_of(name: &str) -> &'static str {
    find(name).map(|e| e.statement).unwrap_or("")
}

/// Run one experiment end to end: dispatch, write outputs under `out_dir`,
/// digest them, and drop `manifest.json` alongside.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let info = find(&config.experiment).ok_or_else(|| {
        let known: Vec<&str> = registry().iter().map(|e| e.name).collect();
        Error::config(format!(
            "unknown experiment '{}'; known: {}",
            config.experiment,
            known.join(", ")
        ))
    })?;
    let advisories = validate(config).violations;
    let mut manifest = RunManifest::new(config, advisories);
    let t0 = std::time::Instant::now();
    let out = (info.run)(config)?;
    manifest.replica_seeds = out.replica_seeds;
    std::fs::create_dir_all(out_dir)?;
    for (name, bytes) in &out.files {
        let path = out_dir.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        manifest.record_output(name, bytes);
    }
    manifest.wall_clock_seconds = t0.elapsed().as_secs_f64();
    manifest.write_to(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_complete_and_unique() {
        let names: Vec<&str> = registry().iter().map(|e| e.name).collect();
        let expected = [
            "stationarity",
            "exit-tail",
            "gaussian-fit",
            "phi",
            "poincare",
            "mixing",
            "confined-mixing",
            "si-speed",
            "sis-survival",
            "cell-event",
            "nu",
            "surface",
        ];
        assert_eq!(names, expected);
        for e in registry() {
            assert!(!e.statement.is_empty());
            assert!(find(e.name).is_some());
        }
        assert!(find("no-such").is_none());
    }

    #[test]
    fn unknown_experiment_is_a_config_error() {
        let cfg = ExperimentConfig::minimal("warp-drive", 1);
        let dir = tempfile::tempdir().unwrap();
        let err = run_experiment(&cfg, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("known:"));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let mut cfg = ExperimentConfig::minimal("stationarity", 11);
        cfg.params = serde_json::json!({"side": 12, "lambda0": 1.0, "times": [2.0]});
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = run_experiment(&cfg, d1.path()).unwrap();
        let m2 = run_experiment(&cfg, d2.path()).unwrap();
        assert_eq!(m1.output_digests(), m2.output_digests());
        assert_eq!(m1.replica_seeds, m2.replica_seeds);
        assert!(!m1.outputs.is_empty());
        // The files landed where the manifest says.
        for o in &m1.outputs {
            assert!(d1.path().join(&o.path).is_file());
        }
    }

    #[test]
    fn different_seeds_change_monte_carlo_outputs() {
        let mut a = ExperimentConfig::minimal("stationarity", 1);
        a.params = serde_json::json!({"side": 12, "lambda0": 1.0, "times": [2.0]});
        let mut b = a.clone();
        b.seed = 2;
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = run_experiment(&a, d1.path()).unwrap();
        let m2 = run_experiment(&b, d2.path()).unwrap();
        assert_ne!(m1.output_digests(), m2.output_digests());
    }

    #[test]
    fn advisories_land_in_the_manifest() {
        let mut cfg = ExperimentConfig::minimal("surface", 3);
        cfg.params = serde_json::json!({
            "p_bad": 0.7, "base": [4, 4], "height": 2, "surround_d": 2
        });
        cfg.reps = Some(2);
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(m.advisories.len(), 1);
        assert!(m.advisories[0].contains("0.5"));
    }
}
