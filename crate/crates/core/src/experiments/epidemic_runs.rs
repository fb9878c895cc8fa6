//! Infection experiments: SI front speed, SIS survival, the space-time
//! cell event with its collision and spread variants, and nu.

use super::diffusion::{base_csv, field_on_torus};
use super::RunOutput;
use crate::config::ExperimentConfig;
use crate::epidemic::{
    clip_front_series, collision_census, estimate_cell_event, estimate_nu, front_speed, run_si,
    run_sis, spread_probability, CellEventSpec, FrontSeries, Placement,
};
use crate::error::{Error, Result};
use crate::lattice::ConductanceLaw;
use crate::report::{fmt_f64, JsonlWriter};
use crate::rng::derive_seed;
use crate::stats::linear_fit;
use rayon::prelude::*;
use serde::Deserialize;

fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    (0..=points).map(|i| horizon * i as f64 / points as f64).collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SiSpeedParams {
    side: usize,
    lambda0: f64,
    horizon: f64,
    grid_points: usize,
    burn_in: f64,
    /// Fit window cap on the front; None means side/2, the torus
    /// injectivity radius. Past it the front measures the box, not the
    /// spread.
    front_cap: Option<f64>,
}

impl Default for SiSpeedParams {
    fn default() -> Self {
        SiSpeedParams {
            side: 200,
            lambda0: 2.0,
            horizon: 400.0,
            grid_points: 800,
            burn_in: 0.1,
            front_cap: None,
        }
    }
}

pub(super) fn run_si_speed(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: SiSpeedParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(10);
    let field = field_on_torus(
        p.side,
        ConductanceLaw::Constant { c: 1.0 },
        derive_seed(cfg.seed, "field", 0),
    )?;
    let grid = uniform_grid(p.horizon, p.grid_points);
    let cap = p.front_cap.unwrap_or(p.side as f64 / 2.0);

    let replica_seeds: Vec<u64> =
        (0..reps).map(|r| derive_seed(cfg.seed, "si-speed", r)).collect();
    let runs: Vec<Result<FrontSeries>> = replica_seeds
        .par_iter()
        .map(|&seed| run_si(&field, p.lambda0, p.horizon, &grid, seed))
        .collect();

    let mut fits = base_csv(
        cfg,
        &[
            "rep",
            "seed",
            "particles",
            "events",
            "kept_samples",
            "slope",
            "intercept",
            "r2",
            "positive",
        ],
    );
    let mut series = base_csv(cfg, &["rep", "t", "front", "infected"]);
    for (rep, run) in runs.into_iter().enumerate() {
        let s = run?;
        for ((&t, &front), &infected) in s.times.iter().zip(&s.front).zip(&s.infected) {
            series.row(&[rep.to_string(), fmt_f64(t), fmt_f64(front), infected.to_string()]);
        }
        let clipped = clip_front_series(&s, cap);
        let sp = front_speed(&clipped, p.burn_in)?;
        let (slope, intercept, r2) = match &sp.fit {
            Some(f) => (f.slope, f.intercept, f.r2),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        fits.row(&[
            rep.to_string(),
            replica_seeds[rep].to_string(),
            s.n_particles.to_string(),
            s.events.to_string(),
            sp.used.to_string(),
            fmt_f64(slope),
            fmt_f64(intercept),
            fmt_f64(r2),
            sp.positive.to_string(),
        ]);
    }
    Ok(RunOutput {
        files: vec![
            ("fits.csv".into(), fits.as_str().into()),
            ("series.csv".into(), series.as_str().into()),
        ],
        replica_seeds,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SisSurvivalParams {
    side: usize,
    lambda0: f64,
    horizon: f64,
    gammas: Vec<f64>,
}

impl Default for SisSurvivalParams {
    fn default() -> Self {
        SisSurvivalParams {
            side: 20,
            lambda0: 0.03,
            horizon: 100.0,
            gammas: vec![0.001, 0.01, 0.1, 1.0],
        }
    }
}

pub(super) fn run_sis_survival(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: SisSurvivalParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(400);
    let field = field_on_torus(
        p.side,
        ConductanceLaw::Constant { c: 1.0 },
        derive_seed(cfg.seed, "field", 0),
    )?;
    let grid = [p.horizon];

    let mut csv = base_csv(
        cfg,
        &[
            "gamma",
            "reps",
            "survivors",
            "frequency",
            "wilson_lo",
            "wilson_hi",
            "extinct",
            "mean_extinction_time",
        ],
    );
    let mut replica_seeds = Vec::new();
    for (gi, &gamma) in p.gammas.iter().enumerate() {
        let seeds: Vec<u64> = (0..reps)
            .map(|r| derive_seed(cfg.seed, "sis-survival", gi as u64 * reps + r))
            .collect();
        let outcomes: Vec<Result<FrontSeries>> = seeds
            .par_iter()
            .map(|&seed| run_sis(&field, p.lambda0, gamma, p.horizon, &grid, seed))
            .collect();
        let mut survivors = 0u64;
        let mut extinct = 0u64;
        let mut extinction_sum = 0.0;
        for o in outcomes {
            let s = o?;
            if s.survived {
                survivors += 1;
            }
            if let Some(t) = s.extinction {
                extinct += 1;
                extinction_sum += t;
            }
        }
        let wilson = crate::stats::wilson_interval(survivors, reps);
        let mean_ext = if extinct > 0 { extinction_sum / extinct as f64 } else { f64::NAN };
        csv.row(&[
            fmt_f64(gamma),
            reps.to_string(),
            survivors.to_string(),
            fmt_f64(survivors as f64 / reps as f64),
            fmt_f64(wilson.lo),
            fmt_f64(wilson.hi),
            extinct.to_string(),
            fmt_f64(mean_ext),
        ]);
        replica_seeds.extend(seeds);
    }
    Ok(RunOutput {
        files: vec![("survival.csv".into(), csv.as_str().into())],
        replica_seeds,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CellEventParams {
    /// "event" estimates the cell event frequency, "census" the collision
    /// counts across scales, "spread" the landing probability.
    variant: String,
    ell: usize,
    eta: usize,
    lambda0: f64,
    gamma: f64,
    /// Torus side; 0 means the smallest box that fits the super cube.
    side: usize,
    beta_time: Option<f64>,
    t_infect: Option<f64>,
    /// Census only: scales to sweep (overrides ell).
    ells: Vec<usize>,
    /// Spread only: particle counts, target shift, placement.
    ns: Vec<u64>,
    z: Vec<i64>,
    placement: String,
}

impl Default for CellEventParams {
    fn default() -> Self {
        CellEventParams {
            variant: "event".into(),
            ell: 6,
            eta: 1,
            lambda0: 4.0,
            gamma: 0.0,
            side: 0,
            beta_time: None,
            t_infect: None,
            ells: vec![27, 64, 125],
            ns: vec![5, 10, 20],
            z: vec![2, 2],
            placement: "uniform".into(),
        }
    }
}

fn cell_spec(p: &CellEventParams, ell: usize) -> CellEventSpec {
    let mut spec = CellEventSpec::new(ell, p.eta, p.lambda0);
    spec.gamma = p.gamma;
    if let Some(b) = p.beta_time {
        spec.beta_time = b;
    }
    if let Some(t) = p.t_infect {
        spec.t_infect = t;
    }
    spec
}

fn cell_field(
    cfg: &ExperimentConfig,
    side_param: usize,
    super_side: usize,
) -> Result<crate::lattice::ConductanceField> {
    let side = if side_param == 0 { super_side } else { side_param };
    field_on_torus(side, ConductanceLaw::Constant { c: 1.0 }, derive_seed(cfg.seed, "field", 0))
}

pub(super) fn run_cell_event(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: CellEventParams = cfg.params_as()?;
    match p.variant.as_str() {
        "event" => cell_event_frequency(cfg, &p),
        "census" => cell_collision_census(cfg, &p),
        "spread" => cell_spread(cfg, &p),
        other => Err(Error::config(format!(
            "cell-event variant '{other}' is not one of event, census, spread"
        ))),
    }
}

fn cell_event_frequency(cfg: &ExperimentConfig, p: &CellEventParams) -> Result<RunOutput> {
    let reps = cfg.reps.unwrap_or(25);
    let spec = cell_spec(p, p.ell);
    let field = cell_field(cfg, p.side, spec.super_side())?;
    let seed = derive_seed(cfg.seed, "cell-event", 0);
    let report = estimate_cell_event(&field, &spec, reps, seed)?;

    let mut csv = base_csv(
        cfg,
        &["ell", "eta", "lambda0", "reps", "successes", "frequency", "wilson_lo", "wilson_hi"],
    );
    csv.row(&[
        spec.ell.to_string(),
        spec.eta.to_string(),
        fmt_f64(spec.lambda0),
        report.reps.to_string(),
        report.successes.to_string(),
        fmt_f64(report.frequency),
        fmt_f64(report.wilson.lo),
        fmt_f64(report.wilson.hi),
    ]);
    let mut jsonl = JsonlWriter::new();
    for rep in &report.outcomes {
        jsonl.push(rep)?;
    }
    Ok(RunOutput {
        files: vec![
            ("event.csv".into(), csv.as_str().into()),
            ("reps.jsonl".into(), jsonl.as_str().into()),
        ],
        replica_seeds: vec![seed],
    })
}

fn cell_collision_census(cfg: &ExperimentConfig, p: &CellEventParams) -> Result<RunOutput> {
    let reps = cfg.reps.unwrap_or(200);
    let mut csv = base_csv(
        cfg,
        &[
            "ell",
            "reps",
            "mean_contained",
            "mean_colliding",
            "mean_sampled",
            "mean_background",
        ],
    );
    let mut replica_seeds = Vec::new();
    let mut means_prime = Vec::new();
    let mut means_sampled = Vec::new();
    for (i, &ell) in p.ells.iter().enumerate() {
        let spec = cell_spec(p, ell);
        let field = cell_field(cfg, p.side, spec.super_side() + 2)?;
        let seeds: Vec<u64> = (0..reps)
            .map(|r| derive_seed(cfg.seed, "cell-census", i as u64 * reps + r))
            .collect();
        let censuses: Vec<_> = seeds
            .par_iter()
            .map(|&seed| collision_census(&field, &spec, seed))
            .collect();
        let mut upsilon = 0.0;
        let mut prime = 0.0;
        let mut sampled = 0.0;
        let mut background = 0.0;
        for c in censuses {
            let c = c?;
            upsilon += c.upsilon as f64;
            prime += c.upsilon_prime as f64;
            sampled += c.upsilon_sampled as f64;
            background += c.n_background as f64;
        }
        let n = reps as f64;
        csv.row(&[
            ell.to_string(),
            reps.to_string(),
            fmt_f64(upsilon / n),
            fmt_f64(prime / n),
            fmt_f64(sampled / n),
            fmt_f64(background / n),
        ]);
        means_prime.push(prime / n);
        means_sampled.push(sampled / n);
        replica_seeds.extend(seeds);
    }

    let mut fits = base_csv(cfg, &["count", "exponent", "intercept", "r2", "n"]);
    let ln_ells: Vec<f64> = p.ells.iter().map(|&l| (l as f64).ln()).collect();
    for (name, means) in [("colliding", &means_prime), ("sampled", &means_sampled)] {
        if means.iter().all(|&m| m > 0.0) {
            let ln_means: Vec<f64> = means.iter().map(|&m| m.ln()).collect();
            if let Some(f) = linear_fit(&ln_ells, &ln_means) {
                fits.row(&[
                    name.into(),
                    fmt_f64(f.slope),
                    fmt_f64(f.intercept),
                    fmt_f64(f.r2),
                    f.n.to_string(),
                ]);
            }
        }
    }
    Ok(RunOutput {
        files: vec![
            ("census.csv".into(), csv.as_str().into()),
            ("fits.csv".into(), fits.as_str().into()),
        ],
        replica_seeds,
    })
}

fn cell_spread(cfg: &ExperimentConfig, p: &CellEventParams) -> Result<RunOutput> {
    let reps = cfg.reps.unwrap_or(200);
    let spec = cell_spec(p, p.ell);
    let field = cell_field(cfg, p.side, spec.super_side())?;
    let placement = match p.placement.as_str() {
        "uniform" => Placement::Uniform,
        "worst-corner" => Placement::WorstCorner,
        other => {
            return Err(Error::config(format!(
                "placement '{other}' is not one of uniform, worst-corner"
            )))
        }
    };
    let seed = derive_seed(cfg.seed, "cell-spread", 0);
    let report = spread_probability(
        &field,
        &p.ns,
        spec.ell,
        spec.eta,
        spec.beta_time,
        &p.z,
        placement,
        reps,
        seed,
    )?;

    let mut csv = base_csv(
        cfg,
        &["n", "reps", "hits", "frequency", "failure", "wilson_lo", "wilson_hi"],
    );
    for pt in &report.points {
        csv.row(&[
            pt.n.to_string(),
            pt.reps.to_string(),
            pt.hits.to_string(),
            fmt_f64(pt.frequency),
            fmt_f64(pt.failure),
            fmt_f64(pt.wilson.lo),
            fmt_f64(pt.wilson.hi),
        ]);
    }
    let mut fits = base_csv(cfg, &["slope", "intercept", "r2", "n", "c_p_hat"]);
    if let Some(f) = &report.fit {
        fits.row(&[
            fmt_f64(f.slope),
            fmt_f64(f.intercept),
            fmt_f64(f.r2),
            f.n.to_string(),
            fmt_f64(report.c_p_hat.unwrap_or(f64::NAN)),
        ]);
    }
    Ok(RunOutput {
        files: vec![
            ("spread.csv".into(), csv.as_str().into()),
            ("fits.csv".into(), fits.as_str().into()),
        ],
        replica_seeds: vec![seed],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NuParams {
    ell: usize,
    eta: usize,
    lambda0: f64,
    eps: f64,
    /// Confinement width: every motion stays inside the w ell cube.
    w: f64,
    side: usize,
}

impl Default for NuParams {
    fn default() -> Self {
        NuParams { ell: 6, eta: 1, lambda0: 4.0, eps: 0.5, w: 3.0, side: 0 }
    }
}

pub(super) fn run_nu(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: NuParams = cfg.params_as()?;
    let reps = cfg.reps.unwrap_or(25);
    let mut spec = CellEventSpec::new(p.ell, p.eta, p.lambda0);
    spec.confinement_w = Some(p.w);
    let field = cell_field(
        cfg,
        p.side,
        spec.super_side(),
    )?;
    let seed = derive_seed(cfg.seed, "nu", 0);
    let report = estimate_nu(&field, &spec, p.eps, reps, seed)?;

    let mut csv = base_csv(
        cfg,
        &[
            "ell",
            "eta",
            "lambda0",
            "eps",
            "w",
            "reps",
            "successes",
            "frequency",
            "wilson_lo",
            "wilson_hi",
        ],
    );
    csv.row(&[
        spec.ell.to_string(),
        spec.eta.to_string(),
        fmt_f64(spec.lambda0),
        fmt_f64(p.eps),
        fmt_f64(p.w),
        report.reps.to_string(),
        report.successes.to_string(),
        fmt_f64(report.frequency),
        fmt_f64(report.wilson.lo),
        fmt_f64(report.wilson.hi),
    ]);
    Ok(RunOutput {
        files: vec![("nu.csv".into(), csv.as_str().into())],
        replica_seeds: vec![seed],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn si_speed_fits_are_ballistic_at_desk_scale() {
        let mut cfg = ExperimentConfig::minimal("si-speed", 3);
        cfg.params = serde_json::json!({
            "side": 48, "lambda0": 1.0, "horizon": 12.0, "grid_points": 24
        });
        cfg.reps = Some(2);
        let out = run_si_speed(&cfg).unwrap();
        let fits = String::from_utf8(out.files[0].1.clone()).unwrap();
        let rows: Vec<&str> = fits.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 2);
        for r in rows {
            assert!(r.ends_with("true"), "front speed not positive: {r}");
        }
        let series = String::from_utf8(out.files[1].1.clone()).unwrap();
        assert_eq!(series.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 25);
    }

    #[test]
    fn sis_survival_emits_one_row_per_gamma() {
        let mut cfg = ExperimentConfig::minimal("sis-survival", 3);
        cfg.params = serde_json::json!({
            "side": 10, "lambda0": 0.05, "horizon": 5.0, "gammas": [0.01, 5.0]
        });
        cfg.reps = Some(20);
        let out = run_sis_survival(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(out.replica_seeds.len(), 40);
        let freqs: Vec<f64> = rows
            .iter()
            .map(|r| r.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert!(freqs[0] >= freqs[1], "survival not monotone: {freqs:?}");
    }

    #[test]
    fn cell_event_variants_dispatch() {
        let mut cfg = ExperimentConfig::minimal("cell-event", 3);
        cfg.params = serde_json::json!({"variant": "event", "ell": 4, "lambda0": 2.0});
        cfg.reps = Some(4);
        let out = run_cell_event(&cfg).unwrap();
        assert_eq!(out.files[0].0, "event.csv");
        assert_eq!(
            String::from_utf8(out.files[1].1.clone()).unwrap().lines().count(),
            4
        );

        cfg.params = serde_json::json!({"variant": "nope"});
        assert!(run_cell_event(&cfg).is_err());
    }

    #[test]
    fn spread_variant_reports_monotone_failures() {
        let mut cfg = ExperimentConfig::minimal("cell-event", 9);
        cfg.params = serde_json::json!({
            "variant": "spread", "ell": 4, "eta": 1, "ns": [1, 4], "z": [1, 1]
        });
        cfg.reps = Some(30);
        let out = run_cell_event(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        let failures: Vec<f64> = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect();
        assert!(failures[0] >= failures[1]);
    }

    #[test]
    fn nu_frequency_stays_positive_at_desk_scale() {
        let mut cfg = ExperimentConfig::minimal("nu", 3);
        cfg.params = serde_json::json!({"ell": 4, "lambda0": 6.0, "w": 3.0});
        cfg.reps = Some(6);
        let out = run_nu(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        let row = text.lines().last().unwrap();
        let freq: f64 = row.split(',').nth(7).unwrap().parse().unwrap();
        assert!(freq > 0.0, "{text}");
    }
}
