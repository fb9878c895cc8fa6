//! Soft local times coupling.
//!
//! A Poisson field eta lives on V x [0, inf) with unit intensity in the
//! height coordinate. Particle j grows the level set
//! H_{j-1}(y) + xi g_j(y) until it first touches an unclaimed eta point;
//! that first touch simultaneously fixes xi_j (exponential(1) in law) and
//! the endpoint Y_j (law g_j), and the level advances to
//! H_j = H_{j-1} + xi_j g_j. The target cloud psi consists of the eta
//! points below zeta; when H_J dominates zeta everywhere, every psi point
//! has been claimed, so psi is a subset of the endpoints (with an explicit
//! injective matching).

use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::rng::rng_from_seed;
use crate::spectral::kernel::distribution_row;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

/// Endpoint kernels g_j, one probability mass function per particle.
pub trait ParticleKernels {
    fn len(&self) -> usize;
    fn n_vertices(&self) -> usize;
    /// Visits (vertex, g_j(vertex)) over the support of g_j in a fixed
    /// deterministic order.
    fn for_each_support<F: FnMut(usize, f64)>(&self, j: usize, f: F);

    fn validate(&self) -> Result<()> {
        for j in 0..self.len() {
            let mut total = 0.0;
            self.for_each_support(j, |_, g| total += g);
            if (total - 1.0).abs() > 1e-4 {
                return Err(Error::config(format!(
                    "kernel {j} has mass {total}, not a probability density"
                )));
            }
        }
        Ok(())
    }
}

/// Explicit per-particle rows.
#[derive(Debug, Clone)]
pub struct DenseKernels {
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl DenseKernels {
    pub fn new(n: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        for row in &rows {
            if row.len() != n {
                return Err(Error::config("kernel row length mismatch"));
            }
            if row.iter().any(|&g| g < 0.0 || !g.is_finite()) {
                return Err(Error::config("kernel rows must be nonnegative"));
            }
        }
        Ok(DenseKernels { n, rows })
    }

    /// Unconfined endpoint kernels p_delta(x_j, .), one exact row per
    /// distinct start.
    pub fn from_walk(
        field: &ConductanceField,
        starts: &[u32],
        delta: f64,
        tol: f64,
    ) -> Result<Self> {
        let mut uniq: Vec<u32> = starts.to_vec();
        uniq.sort_unstable();
        uniq.dedup();
        let mut by_start = std::collections::HashMap::new();
        for &x in &uniq {
            by_start.insert(x, distribution_row(field, x as usize, delta, tol)?);
        }
        let rows = starts
            .iter()
            .map(|x| by_start.get(x).unwrap().clone())
            .collect();
        DenseKernels::new(field.vertex_count(), rows)
    }
}

impl ParticleKernels for DenseKernels {
    fn len(&self) -> usize {
        self.rows.len()
    }
    fn n_vertices(&self) -> usize {
        self.n
    }
    fn for_each_support<F: FnMut(usize, f64)>(&self, j: usize, mut f: F) {
        for (y, &g) in self.rows[j].iter().enumerate() {
            f(y, g);
        }
    }
}

/// One uniformization row translated to every start; valid only on exactly
/// translation-invariant torus fields.
#[derive(Debug, Clone)]
pub struct TranslatedKernels {
    base: Vec<f64>,
    starts: Vec<u32>,
    d: usize,
    side: usize,
    strides: Vec<usize>,
}

impl TranslatedKernels {
    pub fn new(
        field: &ConductanceField,
        starts: &[u32],
        delta: f64,
        tol: f64,
    ) -> Result<Self> {
        if !field.is_translation_invariant() {
            return Err(Error::config(
                "translated kernels need a translation-invariant torus field",
            ));
        }
        let base = distribution_row(field, 0, delta, tol)?;
        let d = field.bbox.d;
        let side = field.bbox.side;
        let strides = (0..d).map(|a| side.pow(a as u32)).collect();
        Ok(TranslatedKernels {
            base,
            starts: starts.to_vec(),
            d,
            side,
            strides,
        })
    }
}

impl ParticleKernels for TranslatedKernels {
    fn len(&self) -> usize {
        self.starts.len()
    }
    fn n_vertices(&self) -> usize {
        self.base.len()
    }
    fn for_each_support<F: FnMut(usize, f64)>(&self, j: usize, mut f: F) {
        // Walk vertices in flat order while tracking the translated index
        // base-point incrementally (an odometer per axis).
        let x = self.starts[j] as usize;
        let side = self.side;
        let d = self.d;
        let mut cy = vec![0usize; d];
        let mut tc = vec![0usize; d];
        let mut ti = 0usize;
        for a in 0..d {
            let cx = (x / self.strides[a]) % side;
            tc[a] = (side - cx) % side;
            ti += tc[a] * self.strides[a];
        }
        let n = self.base.len();
        for v in 0..n {
            f(v, self.base[ti]);
            if v + 1 == n {
                break;
            }
            let mut a = 0;
            loop {
                cy[a] += 1;
                tc[a] += 1;
                ti += self.strides[a];
                if tc[a] == side {
                    tc[a] = 0;
                    ti -= side * self.strides[a];
                }
                if cy[a] < side {
                    break;
                }
                cy[a] = 0;
                a += 1;
            }
        }
    }
}

impl ParticleKernels for crate::mixing::confined::ConfinedKernel {
    fn len(&self) -> usize {
        self.starts.len()
    }
    fn n_vertices(&self) -> usize {
        // Supports store global vertex ids; the coupling only iterates them.
        self.entries
            .iter()
            .flat_map(|e| e.support.iter())
            .map(|&v| v as usize + 1)
            .max()
            .unwrap_or(0)
    }
    fn for_each_support<F: FnMut(usize, f64)>(&self, j: usize, mut f: F) {
        let e = self.entry(j);
        for (&v, &g) in e.support.iter().zip(&e.g) {
            f(v as usize, g);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiPoint {
    pub vertex: u32,
    pub height: f64,
    /// Claiming particle id; Some on every point whenever the coupling
    /// succeeds.
    pub particle: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    /// Exponential increments, one per particle in input order.
    pub xi: Vec<f64>,
    /// Claimed endpoint Y_j per particle.
    pub endpoints: Vec<u32>,
    /// Final soft local time per vertex.
    pub h: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Target-cloud points (eta below zeta), sorted by (vertex, height).
    pub psi: Vec<PsiPoint>,
    pub success: bool,
    /// Vertices with H < zeta.
    pub failures: Vec<u32>,
}

impl CouplingReport {
    /// Exact multiset containment: per vertex, #psi points <= #endpoints.
    pub fn containment_holds(&self) -> bool {
        let mut psi_counts = std::collections::HashMap::new();
        for p in &self.psi {
            *psi_counts.entry(p.vertex).or_insert(0u64) += 1;
        }
        let mut end_counts = std::collections::HashMap::new();
        for &y in &self.endpoints {
            *end_counts.entry(y).or_insert(0u64) += 1;
        }
        psi_counts
            .iter()
            .all(|(v, &c)| end_counts.get(v).copied().unwrap_or(0) >= c)
    }
}

/// Runs the coupling for particles with ids `ids` (used only to label the
/// psi matching) against target intensity zeta.
pub fn soft_local_time_coupling<K: ParticleKernels>(
    kernels: &K,
    ids: &[u64],
    zeta: &[f64],
    seed: u64,
) -> Result<CouplingReport> {
    let n = kernels.n_vertices();
    let j_total = kernels.len();
    if ids.len() != j_total {
        return Err(Error::config("one id per particle required"));
    }
    if zeta.len() < n {
        return Err(Error::config("zeta must cover every vertex"));
    }
    if zeta.iter().any(|&z| z < 0.0 || !z.is_finite()) {
        return Err(Error::config("zeta must be nonnegative and finite"));
    }
    kernels.validate()?;
    let n = zeta.len();

    let mut rng = rng_from_seed(seed);
    let mut next_h = vec![0.0f64; n];
    for v in next_h.iter_mut() {
        *v = Exp1.sample(&mut rng);
    }
    let mut h = vec![0.0f64; n];
    let mut xi = Vec::with_capacity(j_total);
    let mut endpoints = Vec::with_capacity(j_total);
    let mut claims: Vec<(u32, f64, u64)> = Vec::with_capacity(j_total);

    for j in 0..j_total {
        // argmin over the support of (next_h - H)/g, compared by
        // cross-multiplication to keep the scan division-free.
        let mut best_a = 1.0f64;
        let mut best_g = 0.0f64;
        let mut best_y = usize::MAX;
        kernels.for_each_support(j, |y, g| {
            if g > 0.0 {
                // Clamp shields against 1-ulp overshoot of H past a
                // near-tied eta point.
                let a = (next_h[y] - h[y]).max(0.0);
                if a * best_g < best_a * g {
                    best_a = a;
                    best_g = g;
                    best_y = y;
                }
            }
        });
        if best_y == usize::MAX {
            return Err(Error::config(format!("kernel {j} is identically zero")));
        }
        let xi_j = best_a / best_g;
        kernels.for_each_support(j, |y, g| {
            if g > 0.0 {
                h[y] += xi_j * g;
            }
        });
        // The touched level is exact by construction; pin it against
        // round-off so the touched point cannot be double-claimed.
        let height = next_h[best_y];
        h[best_y] = height;
        next_h[best_y] += {
            let e: f64 = Exp1.sample(&mut rng);
            e
        };
        xi.push(xi_j);
        endpoints.push(best_y as u32);
        claims.push((best_y as u32, height, ids[j]));
    }

    let failures: Vec<u32> = (0..n)
        .filter(|&y| h[y] < zeta[y])
        .map(|y| y as u32)
        .collect();
    let success = failures.is_empty();

    let mut psi: Vec<PsiPoint> = claims
        .iter()
        .filter(|&&(v, ht, _)| ht < zeta[v as usize])
        .map(|&(v, ht, id)| PsiPoint {
            vertex: v,
            height: ht,
            particle: Some(id),
        })
        .collect();
    // Unclaimed eta points below zeta (only possible on failure).
    for y in 0..n {
        while next_h[y] < zeta[y] {
            psi.push(PsiPoint {
                vertex: y as u32,
                height: next_h[y],
                particle: None,
            });
            let e: f64 = Exp1.sample(&mut rng);
            next_h[y] += e;
        }
    }
    psi.sort_by(|a, b| {
        (a.vertex, a.height)
            .partial_cmp(&(b.vertex, b.height))
            .unwrap()
    });
    debug_assert!(!success || psi.iter().all(|p| p.particle.is_some()));

    Ok(CouplingReport {
        xi,
        endpoints,
        h,
        zeta: zeta.to_vec(),
        psi,
        success,
        failures,
    })
}
