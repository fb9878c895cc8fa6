//! Cube tessellation and particle-density certificates.
//!
//! The outer cube Q_K (side K, rounded down to a multiple of the subcube
//! side l) is split into (K/l)^d subcubes; an inner cube Q_K' of side
//! K' < K sits centered inside it. A density certificate compares the
//! particle count of every subcube against the mass beta * sum of mu over
//! the subcube.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, ConductanceField, LatticeBox};
use crate::mixing::cloud::ParticleCloud;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Tessellation {
    pub d: usize,
    /// Lower corner of Q_K in box coordinates.
    pub corner: Vec<usize>,
    /// Outer side, a multiple of ell.
    pub k: usize,
    pub ell: usize,
    /// Side of the retained inner cube.
    pub k_prime: usize,
    /// Subcubes per axis, k / ell.
    pub per_axis: usize,
}

impl Tessellation {
    pub fn new(
        bbox: &LatticeBox,
        corner: &[usize],
        k: usize,
        ell: usize,
        k_prime: usize,
    ) -> Result<Self> {
        if corner.len() != bbox.d {
            return Err(Error::config("tessellation corner has wrong dimension"));
        }
        if ell < 1 || k < ell {
            return Err(Error::config("tessellation needs 1 <= ell <= K"));
        }
        let per_axis = k / ell;
        let k = per_axis * ell;
        if k_prime >= k || k_prime < 1 {
            return Err(Error::config(format!(
                "inner cube side {k_prime} must be in [1, K) with K={k}"
            )));
        }
        match bbox.boundary {
            Boundary::Torus => {
                if k > bbox.side {
                    return Err(Error::config(format!(
                        "outer cube side {k} exceeds torus side {}",
                        bbox.side
                    )));
                }
            }
            Boundary::HardWall => {
                if corner.iter().any(|&c| c + k > bbox.side) {
                    return Err(Error::config("outer cube leaves the box"));
                }
            }
        }
        Ok(Tessellation {
            d: bbox.d,
            corner: corner.to_vec(),
            k,
            ell,
            k_prime,
            per_axis,
        })
    }

    pub fn n_subcubes(&self) -> usize {
        self.per_axis.pow(self.d as u32)
    }

    fn vertex_at(&self, bbox: &LatticeBox, offset: &[usize]) -> u32 {
        let coords: Vec<usize> = (0..self.d)
            .map(|a| (self.corner[a] + offset[a]) % bbox.side)
            .collect();
        bbox.index(&coords) as u32
    }

    fn cube_block(&self, bbox: &LatticeBox, lo: &[usize], side: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(side.pow(self.d as u32));
        let mut off = vec![0usize; self.d];
        loop {
            let shifted: Vec<usize> = (0..self.d).map(|a| lo[a] + off[a]).collect();
            out.push(self.vertex_at(bbox, &shifted));
            let mut a = 0;
            loop {
                off[a] += 1;
                if off[a] < side {
                    break;
                }
                off[a] = 0;
                a += 1;
                if a == self.d {
                    out.sort_unstable();
                    return out;
                }
            }
        }
    }

    /// All vertices of Q_K, sorted.
    pub fn cube_vertices(&self, bbox: &LatticeBox) -> Vec<u32> {
        self.cube_block(bbox, &vec![0; self.d], self.k)
    }

    /// Vertices of subcube i (row-major over per-axis indices), sorted.
    pub fn subcube_vertices(&self, bbox: &LatticeBox, i: usize) -> Vec<u32> {
        let mut idx = i;
        let mut lo = vec![0usize; self.d];
        for a in 0..self.d {
            lo[a] = (idx % self.per_axis) * self.ell;
            idx /= self.per_axis;
        }
        self.cube_block(bbox, &lo, self.ell)
    }

    /// Vertices of the centered inner cube Q_K', sorted.
    pub fn inner_vertices(&self, bbox: &LatticeBox) -> Vec<u32> {
        let margin = (self.k - self.k_prime) / 2;
        self.cube_block(bbox, &vec![margin; self.d], self.k_prime)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SubcubeDensity {
    pub index: usize,
    /// beta * sum of mu over the subcube.
    pub required: f64,
    pub count: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityCertificate {
    pub beta: f64,
    pub rows: Vec<SubcubeDensity>,
    pub pass: bool,
}

pub fn density_check(
    field: &ConductanceField,
    cloud: &ParticleCloud,
    tess: &Tessellation,
    beta: f64,
) -> Result<DensityCertificate> {
    if !(beta >= 0.0) {
        return Err(Error::config("density check needs beta >= 0"));
    }
    let mut per_vertex = vec![0u64; field.vertex_count()];
    for p in &cloud.particles {
        per_vertex[p.vertex as usize] += 1;
    }
    let mut rows = Vec::with_capacity(tess.n_subcubes());
    let mut pass = true;
    for i in 0..tess.n_subcubes() {
        let vs = tess.subcube_vertices(&field.bbox, i);
        let required: f64 = beta
            * vs.iter()
                .map(|&v| field.vertex_weight(v as usize))
                .sum::<f64>();
        let count: u64 = vs.iter().map(|&v| per_vertex[v as usize]).sum();
        let ok = count as f64 >= required;
        pass &= ok;
        rows.push(SubcubeDensity {
            index: i,
            required,
            count,
            pass: ok,
        });
    }
    Ok(DensityCertificate { beta, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ConductanceLaw;
    use crate::mixing::cloud::sample_cloud;

    fn torus(side: usize) -> LatticeBox {
        LatticeBox::new(2, side, Boundary::Torus).unwrap()
    }

    #[test]
    fn subcubes_partition_the_outer_cube() {
        let b = torus(16);
        let t = Tessellation::new(&b, &[0, 0], 16, 4, 8).unwrap();
        assert_eq!(t.n_subcubes(), 16);
        let mut seen = Vec::new();
        for i in 0..t.n_subcubes() {
            let vs = t.subcube_vertices(&b, i);
            assert_eq!(vs.len(), 16);
            seen.extend(vs);
        }
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(seen, t.cube_vertices(&b));
    }

    #[test]
    fn inner_cube_is_centered_and_contained() {
        let b = torus(16);
        let t = Tessellation::new(&b, &[0, 0], 16, 4, 8).unwrap();
        let inner = t.inner_vertices(&b);
        assert_eq!(inner.len(), 64);
        let outer = t.cube_vertices(&b);
        assert!(inner.iter().all(|v| outer.binary_search(v).is_ok()));
        // Margin of (16-8)/2 = 4 on each side.
        assert!(inner.contains(&(b.index(&[4, 4]) as u32)));
        assert!(!inner.contains(&(b.index(&[3, 4]) as u32)));
        assert!(inner.contains(&(b.index(&[11, 11]) as u32)));
        assert!(!inner.contains(&(b.index(&[12, 11]) as u32)));
    }

    #[test]
    fn outer_side_rounds_down_to_multiple_of_ell() {
        let b = torus(16);
        let t = Tessellation::new(&b, &[0, 0], 15, 4, 8).unwrap();
        assert_eq!(t.k, 12);
        assert!(Tessellation::new(&b, &[0, 0], 16, 4, 16).is_err());
        assert!(Tessellation::new(&b, &[0, 0], 20, 4, 8).is_err());
        let hw = LatticeBox::new(2, 16, Boundary::HardWall).unwrap();
        assert!(Tessellation::new(&hw, &[4, 4], 16, 4, 8).is_err());
        assert!(Tessellation::new(&hw, &[4, 4], 12, 4, 8).is_ok());
    }

    #[test]
    fn wrapped_cube_on_torus_still_partitions() {
        let b = torus(8);
        let t = Tessellation::new(&b, &[6, 6], 8, 4, 4).unwrap();
        let vs = t.cube_vertices(&b);
        assert_eq!(vs.len(), 64);
    }

    #[test]
    fn density_certificate_compares_exactly() {
        let b = torus(8);
        let f = ConductanceField::sample(b, ConductanceLaw::Constant { c: 1.0 }, 1).unwrap();
        let t = Tessellation::new(&f.bbox, &[0, 0], 8, 4, 4).unwrap();
        let cloud = sample_cloud(&f, 2.0, &t.cube_vertices(&f.bbox), 99).unwrap();
        let cert = density_check(&f, &cloud, &t, 0.5).unwrap();
        assert_eq!(cert.rows.len(), 4);
        for row in &cert.rows {
            // mu = 4 per vertex, 16 vertices per subcube: requirement 32.
            assert!((row.required - 32.0).abs() < 1e-12);
            assert_eq!(row.pass, row.count as f64 >= row.required);
        }
        assert_eq!(cert.pass, cert.rows.iter().all(|r| r.pass));

        // beta = 0 always passes; an empty cloud fails every massive subcube.
        let empty = ParticleCloud {
            time: 0.0,
            lambda0: 2.0,
            particles: Vec::new(),
        };
        assert!(density_check(&f, &empty, &t, 0.0).unwrap().pass);
        let cert = density_check(&f, &empty, &t, 0.5).unwrap();
        assert!(cert.rows.iter().all(|r| !r.pass));
    }
}
