//! Surface experiment: sample iid cell fields, build the two sided
//! Lipschitz surface, and check whether it surrounds a start cell.

use super::diffusion::base_csv;
use super::RunOutput;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::fmt_f64;
use crate::rng::derive_seed;
use crate::surface::{simulate_iid_field, surrounds, two_sided_surface};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SurfaceParams {
    p_bad: f64,
    base: Vec<usize>,
    height: usize,
    surround_d: usize,
    /// Start cell for the surrounding check; None means the base center.
    start: Option<Vec<usize>>,
    start_h: i64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            p_bad: 0.01,
            base: vec![32, 32],
            height: 16,
            surround_d: 8,
            start: None,
            start_h: 0,
        }
    }
}

pub(super) fn run_surface(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: SurfaceParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(100);
    let start: Vec<usize> = match &p.start {
        Some(s) => s.clone(),
        None => p.base.iter().map(|&n| n / 2).collect(),
    };

    let mut csv = base_csv(
        cfg,
        &["rep", "seed", "exists", "surrounds", "f_plus_max", "f_minus_min"],
    );
    let mut replica_seeds = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        let seed = derive_seed(cfg.seed, "surface", rep);
        replica_seeds.push(seed);
        let field = simulate_iid_field(p.p_bad, &p.base, p.height, seed)?;
        let surface = two_sided_surface(&field);
        let surrounded = if surface.exists {
            surrounds(&field, &surface, &start, p.start_h, p.surround_d as i64)?
        } else {
            false
        };
        let f_plus_max = surface.f_plus.iter().copied().max();
        let f_minus_min = surface.f_minus.iter().copied().min();
        csv.row(&[
            rep.to_string(),
            seed.to_string(),
            surface.exists.to_string(),
            surrounded.to_string(),
            f_plus_max.map_or_else(|| fmt_f64(f64::NAN), |v| v.to_string()),
            f_minus_min.map_or_else(|| fmt_f64(f64::NAN), |v| v.to_string()),
        ]);
    }
    Ok(RunOutput {
        files: vec![("fields.csv".into(), csv.as_str().into())],
        replica_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_fields_surround_the_center() {
        let mut cfg = ExperimentConfig::minimal("surface", 5);
        cfg.params = serde_json::json!({
            "p_bad": 0.005, "base": [16, 16], "height": 8, "surround_d": 4
        });
        cfg.reps = Some(10);
        let out = run_surface(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 10);
        let surrounded = rows
            .iter()
            .filter(|r| r.split(',').nth(3).unwrap() == "true")
            .count();
        assert!(surrounded >= 8, "only {surrounded}/10 fields surrounded the center");
    }

    #[test]
    fn dense_bad_cells_kill_the_surface() {
        let mut cfg = ExperimentConfig::minimal("surface", 5);
        cfg.params = serde_json::json!({
            "p_bad": 0.9, "base": [8, 8], "height": 2, "surround_d": 2
        });
        cfg.reps = Some(5);
        let out = run_surface(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        for row in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
            assert_eq!(row.split(',').nth(2).unwrap(), "false", "{row}");
        }
    }
}
