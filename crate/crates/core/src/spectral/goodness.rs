//! Good-ball classification.
//!
//! A ball B(y,r) is good when its measure is at least C_V r^d and the weak
//! Poincare inequality on it holds with constant at most C_P (enlargement
//! factor C_W). B(x,R) is very good when some N <= R^{1/(d+2)} exists such
//! that every contained sub-ball of radius >= N is good; N_B is the smallest
//! such N, and is at least 1 by convention.
//!
//! The scan walks every center y in B(x,R) and every radius r with
//! B(y,r) contained in B(x,R), so the verdict is exhaustive rather than
//! sampled. The scale surrogate records the largest failing threshold
//! R1 log R1 over a family of radii R1, with 1 meaning no failures.

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::spectral::poincare::poincare_constant;
use serde::Serialize;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GoodnessConstants {
    pub c_v: f64,
    pub c_p: f64,
    pub c_w: f64,
}

impl GoodnessConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_v > 0.0) || !(self.c_p > 0.0) || !(self.c_w >= 1.0) {
            return Err(Error::config(
                "goodness constants need c_v > 0, c_p > 0, c_w >= 1",
            ));
        }
        Ok(())
    }
}

/// Volume and Poincare thresholds calibrated on a constant-weight torus:
/// C_V slightly below the exact ball measure growth, C_P at twice the
/// largest constant-weight value over small radii, C_W = 2.
pub fn reference_constants(d: usize, r_max: u32) -> Result<GoodnessConstants> {
    use crate::lattice::{Boundary, ConductanceLaw, LatticeBox};
    let c_w = 2.0;
    let r_max = r_max.max(1);
    let side = (2.0 * c_w * r_max as f64) as usize + 2;
    let bbox = LatticeBox::new(d, side, Boundary::Torus)?;
    let field = ConductanceField::sample(bbox, ConductanceLaw::Constant { c: 1.0 }, 1)?;
    let mut worst: f64 = 0.0;
    for r in 1..=r_max {
        let res = poincare_constant(&field, 0, r, c_w)?;
        worst = worst.max(res.c_p);
    }
    Ok(GoodnessConstants {
        c_v: d as f64 * 0.9 * 2.0,
        c_p: 2.0 * worst,
        c_w,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubBallRow {
    pub y: u32,
    pub r: u32,
    pub volume: f64,
    pub volume_ok: bool,
    pub c_p: f64,
    pub poincare_ok: bool,
    pub good: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GoodnessReport {
    pub x: u32,
    pub r_big: u32,
    pub c_v: f64,
    pub c_p: f64,
    pub c_w: f64,
    /// Only the sub-balls contained in B(x, r_big) are listed.
    pub rows: Vec<SubBallRow>,
    /// Smallest N >= 1 with every contained sub-ball of radius >= N good.
    pub n_b: u32,
    /// R^{1/(d+2)}.
    pub n_b_limit: f64,
    pub very_good: bool,
}

pub fn goodness_scan(
    field: &ConductanceField,
    x: usize,
    r_big: u32,
    consts: &GoodnessConstants,
) -> Result<GoodnessReport> {
    consts.validate()?;
    if r_big < 1 {
        return Err(Error::config("goodness scan needs radius >= 1"));
    }
    if field.vertex_weight(x) <= 0.0 {
        return Err(Error::config(format!("center {x} is isolated")));
    }
    let d = field.bbox.d;
    let big = field.ball(x, r_big);
    let mut rows = Vec::new();
    let mut worst_bad_r = 0u32;
    for &y in &big {
        let dist = field.bfs_distances(y as usize, r_big);
        for r in 1..=r_big {
            // Containment check; balls are monotone in r, so stop at the
            // first radius that spills outside B(x, r_big).
            let sub: Vec<u32> = (0..field.vertex_count() as u32)
                .filter(|&v| dist[v as usize] <= r)
                .collect();
            if sub.iter().any(|v| big.binary_search(v).is_err()) {
                break;
            }
            let volume: f64 = sub.iter().map(|&v| field.vertex_weight(v as usize)).sum();
            let volume_ok = volume >= consts.c_v * (r as f64).powi(d as i32);
            let res = poincare_constant(field, y as usize, r, consts.c_w)?;
            let poincare_ok = !res.infinite && res.c_p <= consts.c_p;
            let good = volume_ok && poincare_ok;
            if !good {
                worst_bad_r = worst_bad_r.max(r);
            }
            rows.push(SubBallRow {
                y,
                r,
                volume,
                volume_ok,
                c_p: res.c_p,
                poincare_ok,
                good,
            });
        }
    }
    let n_b = (worst_bad_r + 1).max(1);
    let n_b_limit = (r_big as f64).powf(1.0 / (d as f64 + 2.0));
    Ok(GoodnessReport {
        x: x as u32,
        r_big,
        c_v: consts.c_v,
        c_p: consts.c_p,
        c_w: consts.c_w,
        rows,
        n_b,
        n_b_limit,
        very_good: (n_b as f64) <= n_b_limit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurrogateRow {
    pub r1: u32,
    pub very_good: bool,
    pub n_b: u32,
    /// N_B^{2d+4} <= R1, the exponent the very-good radius has to beat.
    pub n_power_ok: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SurrogateReport {
    pub x: u32,
    pub rows: Vec<SurrogateRow>,
    /// Largest failing R1 log R1, or 1 when every radius passes.
    pub s: f64,
}

pub fn s_surrogate(
    field: &ConductanceField,
    x: usize,
    r1_list: &[u32],
    consts: &GoodnessConstants,
) -> Result<SurrogateReport> {
    if r1_list.is_empty() {
        return Err(Error::config("surrogate needs at least one radius"));
    }
    let d = field.bbox.d as i32;
    let mut rows = Vec::new();
    let mut s = 1.0f64;
    for &r1 in r1_list {
        let rep = goodness_scan(field, x, r1, consts)?;
        let n_power_ok = (rep.n_b as f64).powi(2 * d + 4) <= r1 as f64;
        let pass = rep.very_good && n_power_ok;
        if !pass {
            s = s.max((r1 as f64) * (r1 as f64).ln());
        }
        rows.push(SurrogateRow {
            r1,
            very_good: rep.very_good,
            n_b: rep.n_b,
            n_power_ok,
            pass,
        });
    }
    Ok(SurrogateReport {
        x: x as u32,
        rows,
        s: s.max(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, ConductanceLaw, LatticeBox};

    fn field(side: usize, law: ConductanceLaw, seed: u64) -> ConductanceField {
        let b = LatticeBox::new(2, side, Boundary::Torus).unwrap();
        ConductanceField::sample(b, law, seed).unwrap()
    }

    #[test]
    fn reference_constants_make_constant_fields_uniformly_good() {
        let k = reference_constants(2, 4).unwrap();
        assert!(k.c_v > 0.0 && k.c_p > 0.0);
        let f = field(26, ConductanceLaw::Constant { c: 1.0 }, 3);
        let rep = goodness_scan(&f, f.bbox.index(&[13, 13]), 5, &k).unwrap();
        assert!(rep.rows.iter().all(|row| row.good));
        assert_eq!(rep.n_b, 1);
        assert!(rep.very_good);
    }

    #[test]
    fn scan_lists_every_contained_subball() {
        let k = GoodnessConstants {
            c_v: 1.0,
            c_p: 100.0,
            c_w: 1.0,
        };
        let f = field(12, ConductanceLaw::Constant { c: 1.0 }, 1);
        let rep = goodness_scan(&f, 0, 3, &k).unwrap();
        // Center x itself admits all radii up to r_big.
        let at_x: Vec<u32> = rep
            .rows
            .iter()
            .filter(|row| row.y == 0)
            .map(|row| row.r)
            .collect();
        assert_eq!(at_x, vec![1, 2, 3]);
        // Every listed sub-ball really is contained in the big ball.
        let big = f.ball(0, 3);
        for row in &rep.rows {
            let sub = f.ball(row.y as usize, row.r);
            assert!(sub.iter().all(|v| big.binary_search(v).is_ok()));
        }
        // A sphere-boundary center only fits radius 0, so it lists nothing.
        let edge = *big.iter().find(|&&v| f.bfs_distances(0, 3)[v as usize] == 3).unwrap();
        assert!(rep.rows.iter().all(|row| row.y != edge));
    }

    #[test]
    fn harsh_volume_threshold_defeats_goodness() {
        let k = GoodnessConstants {
            c_v: 1e6,
            c_p: 1e6,
            c_w: 1.0,
        };
        let f = field(12, ConductanceLaw::Constant { c: 1.0 }, 1);
        let rep = goodness_scan(&f, 0, 3, &k).unwrap();
        assert!(rep.rows.iter().all(|row| !row.volume_ok));
        assert_eq!(rep.n_b, 4);
        assert!(!rep.very_good);
    }

    #[test]
    fn weak_pendant_defeats_goodness_nearby() {
        let b = LatticeBox::new(2, 14, Boundary::Torus).unwrap();
        let mut w = vec![1.0f64; b.vertex_count() * 2];
        let z = b.index(&[7, 7]);
        // Leave z hanging from a single 0.01 bridge along +e_0.
        w[z * 2] = 0.01;
        w[z * 2 + 1] = 0.0;
        w[b.index(&[6, 7]) * 2] = 0.0;
        w[b.index(&[7, 6]) * 2 + 1] = 0.0;
        let f = ConductanceField::from_weights(b, w).unwrap();
        let k = reference_constants(2, 4).unwrap();
        let rep = goodness_scan(&f, z, 3, &k).unwrap();
        let at_z1 = rep
            .rows
            .iter()
            .find(|row| row.y == z as u32 && row.r == 1)
            .unwrap();
        assert!(!at_z1.volume_ok, "thin ball passed: vol {}", at_z1.volume);
        assert!(rep.n_b > 1);
        assert!(!rep.very_good);
    }

    #[test]
    fn surrogate_is_one_when_all_radii_pass() {
        let k = reference_constants(2, 4).unwrap();
        let f = field(26, ConductanceLaw::Constant { c: 1.0 }, 3);
        let rep = s_surrogate(&f, 0, &[2, 4], &k).unwrap();
        assert!(rep.rows.iter().all(|row| row.pass));
        assert_eq!(rep.s, 1.0);
    }

    #[test]
    fn surrogate_records_largest_failing_threshold() {
        let k = GoodnessConstants {
            c_v: 1e6,
            c_p: 1e6,
            c_w: 1.0,
        };
        let f = field(12, ConductanceLaw::Constant { c: 1.0 }, 1);
        let rep = s_surrogate(&f, 0, &[2, 3], &k).unwrap();
        assert!(rep.rows.iter().all(|row| !row.pass));
        let expect = 3.0 * 3.0f64.ln();
        assert!((rep.s - expect).abs() < 1e-12);
    }
}
