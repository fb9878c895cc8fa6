//! Regularity experiments: oscillation decay of caloric functions and
//! Poincaré constants on balls.

use super::diffusion::{base_csv, field_on_torus};
use super::RunOutput;
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::lattice::ConductanceLaw;
use crate::report::fmt_f64;
use crate::rng::derive_seed;
use crate::spectral::{
    harnack_constant, oscillation_decay_check, phi_time_grid, poincare_constant, HarnackOptions,
    SpaceTimeFunction,
};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PhiParams {
    side: usize,
    law: ConductanceLaw,
    r0: u32,
    slack: f64,
    tol: f64,
}

impl Default for PhiParams {
    fn default() -> Self {
        PhiParams {
            side: 48,
            law: ConductanceLaw::Constant { c: 1.0 },
            r0: 16,
            slack: 0.05,
            tol: 1e-12,
        }
    }
}

pub(super) fn run_phi(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: PhiParams = cfg.params_as()?;
    let field = field_on_torus(p.side, p.law, derive_seed(cfg.seed, "field", 0))?;
    let x = field.bbox.index(&vec![p.side / 2; 2]);
    let opts = HarnackOptions { tol: p.tol, ..Default::default() };
    let harnack = harnack_constant(&field, x, p.r0, &opts)?;
    let grid = phi_time_grid(p.r0, 2);
    let u = SpaceTimeFunction::kernel_from(&field, x, &grid, p.tol)?;
    let osc = oscillation_decay_check(&field, x, p.r0, &u, harnack.c_h, p.slack)?;

    let mut csv = base_csv(
        cfg,
        &["k", "r_k", "osc_full", "osc_upper", "ratio", "bound", "ok"],
    );
    for s in &osc.scales {
        csv.row(&[
            s.k.to_string(),
            s.r_k.to_string(),
            fmt_f64(s.osc_full),
            fmt_f64(s.osc_upper),
            fmt_f64(s.ratio),
            fmt_f64(s.bound),
            s.ok.to_string(),
        ]);
    }
    let mut summary = base_csv(cfg, &["c_h", "theta", "r0", "slack", "all_ok"]);
    summary.row(&[
        fmt_f64(harnack.c_h),
        fmt_f64(harnack.theta),
        p.r0.to_string(),
        fmt_f64(p.slack),
        osc.all_ok.to_string(),
    ]);
    Ok(RunOutput {
        files: vec![
            ("scales.csv".into(), csv.as_str().into()),
            ("summary.csv".into(), summary.as_str().into()),
        ],
        replica_seeds: vec![],
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PoincareParams {
    side: usize,
    law: ConductanceLaw,
    rs: Vec<u32>,
    c_w: f64,
}

impl Default for PoincareParams {
    fn default() -> Self {
        PoincareParams {
            side: 40,
            law: ConductanceLaw::Constant { c: 1.0 },
            rs: vec![2, 4, 8],
            c_w: 2.0,
        }
    }
}

pub(super) fn run_poincare(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let p: PoincareParams = cfg.params_as()?;
    let field = field_on_torus(p.side, p.law, derive_seed(cfg.seed, "field", 0))?;
    let x = field.bbox.index(&vec![p.side / 2; 2]);

    let mut csv = base_csv(
        cfg,
        &["r", "c_w", "c_p", "inner_size", "outer_size", "infinite"],
    );
    for &r in &p.rs {
        let res = poincare_constant(&field, x, r, p.c_w)?;
        csv.row(&[
            r.to_string(),
            fmt_f64(res.c_w),
            fmt_f64(res.c_p),
            res.inner_size.to_string(),
            res.outer_size.to_string(),
            res.infinite.to_string(),
        ]);
    }
    Ok(RunOutput {
        files: vec![("constants.csv".into(), csv.as_str().into())],
        replica_seeds: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_scales_stay_under_the_bound_at_desk_scale() {
        let mut cfg = ExperimentConfig::minimal("phi", 2);
        cfg.params = serde_json::json!({"side": 14, "r0": 4, "slack": 0.05});
        let out = run_phi(&cfg).unwrap();
        let summary = String::from_utf8(out.files[1].1.clone()).unwrap();
        let last = summary.lines().last().unwrap();
        assert!(last.ends_with("true"), "{summary}");
    }

    #[test]
    fn poincare_constants_scale_like_r_squared() {
        let mut cfg = ExperimentConfig::minimal("poincare", 2);
        cfg.params = serde_json::json!({"side": 24, "rs": [2, 4]});
        let out = run_poincare(&cfg).unwrap();
        let text = String::from_utf8(out.files[0].1.clone()).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 2);
        let c_p: Vec<f64> = rows
            .iter()
            .map(|r| r.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        // c_p is already the r^2-normalized constant, so it is the same
        // order at both radii.
        assert!(c_p[0] > 0.0 && c_p[1] > 0.0, "{c_p:?}");
        assert!(c_p[1] / c_p[0] < 4.0 && c_p[0] / c_p[1] < 4.0, "{c_p:?}");
    }
}
