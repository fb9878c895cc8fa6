//! Walk-level experiments: cloud stationarity, box exit tails, and the
//! gaussian shape of the heat kernel.

use super::{base_headers, statement_of, RunOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::lattice::{Boundary, ConductanceField, ConductanceLaw, LatticeBox};
use crate::mixing::{evolve_cloud, sample_cloud, stationarity_chi_square};
use crate::report::{fmt_f64, CsvWriter};
use crate::rng::derive_seed;
use crate::spectral::gaussian_bound_fit;
use crate::walk::exit_tail_scan;
use serde::Deserialize;

pub(super) fn field_on_torus(
    side: usize,
    law: ConductanceLaw,
    seed: u64,
) -> Result<ConductanceField> {
    let bbox = LatticeBox::new(2, side, Boundary::Torus)?;
    ConductanceField::sample(bbox, law, seed)
}

fn constant_law() -> ConductanceLaw {
    ConductanceLaw::Constant { c: 1.0 }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StationarityParams {
    side: usize,
    lambda0: f64,
    times: Vec<f64>,
}

impl Default for StationarityParams {
    fn default() -> Self {
        StationarityParams { side: 40, lambda0: 2.0, times: vec![10.0, 50.0] }
    }
}

pub(super) fn run_stationarity(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: StationarityParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(1);
    let field = field_on_torus(p.side, constant_law(), derive_seed(cfg.seed, "field", 0))?;
    let region: Vec<u32> = (0..field.vertex_count() as u32).collect();

    let mut csv = base_csv(cfg, &["rep", "time", "particles", "statistic", "dof", "p_value"]);
    let mut replica_seeds = Vec::new();
    for rep in 0..reps {
        let rep_seed = derive_seed(cfg.seed, "stationarity", rep);
        replica_seeds.push(rep_seed);
        let cloud = sample_cloud(&field, p.lambda0, &region, derive_seed(rep_seed, "cloud", 0))?;
        for (i, &t) in p.times.iter().enumerate() {
            let (evolved, _) =
                evolve_cloud(&field, &cloud, t, None, derive_seed(rep_seed, "evolve", i as u64))?;
            let test = stationarity_chi_square(&field, &evolved, &region)?;
            csv.row(&[
                rep.to_string(),
                fmt_f64(t),
                cloud.particles.len().to_string(),
                fmt_f64(test.statistic),
                test.dof.to_string(),
                fmt_f64(test.p_value),
            ]);
        }
    }
    Ok(RunOutput {
        files: vec![("tests.csv".into(), csv.as_str().into())],
        replica_seeds,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ExitTailParams {
    side: usize,
    law: ConductanceLaw,
    rs: Vec<u32>,
    ts: Vec<f64>,
    walkers: u64,
}

impl Default for ExitTailParams {
    fn default() -> Self {
        ExitTailParams {
            side: 64,
            law: constant_law(),
            rs: vec![4, 6, 8, 10, 12],
            ts: vec![8.0, 16.0, 32.0],
            walkers: 20_000,
        }
    }
}

pub(super) fn run_exit_tail(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: ExitTailParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(1);
    let field = field_on_torus(p.side, p.law, derive_seed(cfg.seed, "field", 0))?;
    let x = field.bbox.index(&vec![p.side / 2; 2]);

    let mut cells = base_csv(cfg, &["rep", "r", "t", "exits", "frequency"]);
    let mut fits = base_csv(cfg, &["rep", "slope", "intercept", "r2", "n", "c3", "c4"]);
    let mut replica_seeds = Vec::new();
    for rep in 0..reps {
        let rep_seed = derive_seed(cfg.seed, "exit-tail", rep);
        replica_seeds.push(rep_seed);
        let report = exit_tail_scan(&field, x, &p.rs, &p.ts, p.walkers, rep_seed)?;
        for c in &report.cells {
            cells.row(&[
                rep.to_string(),
                c.r.to_string(),
                fmt_f64(c.t),
                c.exits.to_string(),
                fmt_f64(c.frequency),
            ]);
        }
        if let Some(f) = &report.fit {
            fits.row(&[
                rep.to_string(),
                fmt_f64(f.slope),
                fmt_f64(f.intercept),
                fmt_f64(f.r2),
                f.n.to_string(),
                fmt_f64(report.c3),
                fmt_f64(report.c4),
            ]);
        }
    }
    Ok(RunOutput {
        files: vec![
            ("cells.csv".into(), cells.as_str().into()),
            ("fits.csv".into(), fits.as_str().into()),
        ],
        replica_seeds,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GaussianFitParams {
    side: usize,
    law: ConductanceLaw,
    ts: Vec<f64>,
    r_max: u32,
    tol: f64,
}

impl Default for GaussianFitParams {
    fn default() -> Self {
        GaussianFitParams {
            side: 64,
            law: constant_law(),
            ts: vec![16.0, 24.0, 32.0],
            r_max: 10,
            tol: 1e-12,
        }
    }
}

pub(super) fn run_gaussian_fit(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: GaussianFitParams = cfg.params_as()?;
    let field = field_on_torus(p.side, p.law, derive_seed(cfg.seed, "field", 0))?;
    let x = field.bbox.index(&vec![p.side / 2; 2]);
    let rs: Vec<u32> = (1..=p.r_max).collect();
    let fit = gaussian_bound_fit(&field, x, &p.ts, &rs, p.tol)?;

    let mut points = base_csv(
        cfg,
        &["t", "r", "q_max", "q_min", "in_upper_window", "in_lower_window"],
    );
    for pt in &fit.points {
        points.row(&[
            fmt_f64(pt.t),
            pt.r.to_string(),
            fmt_f64(pt.q_max),
            fmt_f64(pt.q_min),
            pt.in_upper_window.to_string(),
            pt.in_lower_window.to_string(),
        ]);
    }
    let mut fits = base_csv(
        cfg,
        &["envelope", "slope", "intercept", "r2", "n", "violations"],
    );
    if let Some(f) = &fit.upper_fit {
        fits.row(&[
            "upper".into(),
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2),
            f.n.to_string(),
            fit.violations_upper.to_string(),
        ]);
    }
    if let Some(f) = &fit.lower_fit {
        fits.row(&[
            "lower".into(),
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2),
            f.n.to_string(),
            fit.violations_lower.to_string(),
        ]);
    }
    Ok(RunOutput {
        files: vec![
            ("points.csv".into(), points.as_str().into()),
            ("fits.csv".into(), fits.as_str().into()),
        ],
        replica_seeds: vec![],
    })
}

pub(super) fn base_csv(cfg: &ExperimentConfig, columns: &[&str]) -> CsvWriter {
    let headers = base_headers(cfg, statement_of(&cfg.experiment));
    let refs: Vec<(&str, String)> = headers.iter().map(|(k, v)| (*k, v.clone())).collect();
    CsvWriter::new(&refs, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationarity_defaults_pass_at_desk_scale() {
        let mut cfg = ExperimentConfig::minimal("stationarity", 4);
        cfg.params = serde_json::json!({"side": 16, "lambda0": 1.5, "times": [3.0]});
        let out = run_stationarity(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        assert!(text.contains("# statement="));
        let last = text.lines().last().unwrap();
        let p: f64 = last.split(',').last().unwrap().parse().unwrap();
        assert!(p > 0.001, "stationary cloud rejected: p = {p}\n{text}");
    }

    #[test]
    fn exit_tail_emits_cells_and_a_fit() {
        let mut cfg = ExperimentConfig::minimal("exit-tail", 4);
        cfg.params = serde_json::json!({
            "side": 24, "rs": [2, 4, 6], "ts": [2.0, 5.0, 9.0], "walkers": 1500
        });
        let out = run_exit_tail(&cfg).unwrap();
        assert_eq!(out.files.len(), 2);
        let cells = String::from_utf8(out.files[0].1.clone()).unwrap();
        assert_eq!(cells.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);
        let fits = String::from_utf8(out.files[1].1.clone()).unwrap();
        assert!(fits.lines().filter(|l| !l.starts_with('#')).count() >= 2);
    }

    #[test]
    fn gaussian_fit_rejects_unknown_params() {
        let mut cfg = ExperimentConfig::minimal("gaussian-fit", 4);
        cfg.params = serde_json::json!({"sides": 24});
        assert!(run_gaussian_fit(&cfg).is_err());
    }
}
