//! Boxes of Z^d and random conductance fields on their edges.
//!
//! A field assigns a weight mu_{x,y} >= 0 to every nearest-neighbor edge;
//! mu_x = sum_{y ~ x} mu_{x,y} is the vertex weight. Weight 0 means the edge
//! is absent, so dilute laws induce holes: balls use graph distance through
//! positive-weight edges only.
//!
//! Canonical edge storage is one f64 per (vertex, axis) for the edge in the
//! positive axis direction, iterated in vertex-index order. Sampling draws
//! in exactly that order, so a (box, law, seed) triple reproduces the field
//! bit-for-bit.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

pub const DIST_UNREACHABLE: u32 = u32::MAX;
const NO_NEIGHBOR: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Periodic wrapping in every axis.
    Torus,
    /// Edges leaving the box are absent.
    HardWall,
}

/// Finite box {0,...,side-1}^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub d: usize,
    pub side: usize,
    pub boundary: Boundary,
}

impl LatticeBox {
    pub fn new(d: usize, side: usize, boundary: Boundary) -> Result<Self> {
        if d < 2 {
            return Err(Error::config(format!("dimension d={d} must be >= 2")));
        }
        if side < 2 {
            return Err(Error::config(format!("side={side} must be >= 2")));
        }
        let mut n: usize = 1;
        for _ in 0..d {
            n = n
                .checked_mul(side)
                .ok_or_else(|| Error::config("box too large for this platform"))?;
        }
        Ok(LatticeBox { d, side, boundary })
    }

    pub fn vertex_count(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    pub fn coords(&self, v: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.d];
        let mut rem = v;
        for item in c.iter_mut() {
            *item = rem % self.side;
            rem /= self.side;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let mut v = 0usize;
        for (a, &c) in coords.iter().enumerate().rev() {
            debug_assert!(c < self.side);
            v = v * self.side + c;
            let _ = a;
        }
        v
    }

    fn stride(&self, axis: usize) -> usize {
        self.side.pow(axis as u32)
    }

    pub fn coord(&self, v: usize, axis: usize) -> usize {
        (v / self.stride(axis)) % self.side
    }

    /// Neighbor of v one step along `axis` in direction `dir` (+1/-1),
    /// None if the step leaves a hard-wall box.
    pub fn neighbor(&self, v: usize, axis: usize, dir: i8) -> Option<usize> {
        let stride = self.stride(axis);
        let c = (v / stride) % self.side;
        let c2 = match (dir, self.boundary) {
            (1, Boundary::Torus) => (c + 1) % self.side,
            (-1, Boundary::Torus) => (c + self.side - 1) % self.side,
            (1, Boundary::HardWall) => {
                if c + 1 >= self.side {
                    return None;
                }
                c + 1
            }
            (-1, Boundary::HardWall) => {
                if c == 0 {
                    return None;
                }
                c - 1
            }
            _ => unreachable!("dir must be +1 or -1"),
        };
        Some(v - c * stride + c2 * stride)
    }

    /// Vertex motion in unwrapped coordinates: does stepping `dir` along
    /// `axis` from v wrap around the torus? (+1 wrap, -1 wrap, 0 none)
    pub fn wrap_of_step(&self, v: usize, axis: usize, dir: i8) -> i8 {
        if self.boundary != Boundary::Torus {
            return 0;
        }
        let c = (v / self.stride(axis)) % self.side;
        match dir {
            1 if c + 1 == self.side => 1,
            -1 if c == 0 => -1,
            _ => 0,
        }
    }
}

/// Edge-weight law. `c_m >= 1` is the uniform ellipticity constant: positive
/// weights lie in [1/c_m, c_m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConductanceLaw {
    Constant { c: f64 },
    UniformElliptic { c_m: f64 },
    Dilute { p0: f64, c_m: f64 },
    /// Weights supplied explicitly (tests, custom instances).
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConductanceField {
    pub bbox: LatticeBox,
    pub law: ConductanceLaw,
    pub seed: u64,
    /// Canonical per-(vertex, axis) weight of the positive-direction edge;
    /// 0.0 where the edge is absent (hard-wall boundary or dilution).
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,

    #[serde(skip)]
    derived: Derived,
}

#[derive(Debug, Clone, Default)]
struct Derived {
    /// n * 2d neighbor table; slot 2a = +e_a, 2a+1 = -e_a; NO_NEIGHBOR absent.
    nbrs: Vec<u32>,
    /// Weight carried by each slot (0.0 where absent).
    nbr_w: Vec<f64>,
    /// Per-vertex cumulative slot weights, for inverse-cdf neighbor sampling.
    cum: Vec<f64>,
    mu: Vec<f64>,
}

impl ConductanceField {
    /// Draw a field from (box, law, seed). Rejects supercritical dilution in
    /// d=2 (p0 >= 1/2); for d >= 3 the threshold is advisory and only warns.
    pub fn sample(bbox: LatticeBox, law: ConductanceLaw, seed: u64) -> Result<Self> {
        let mut warnings = Vec::new();
        match law {
            ConductanceLaw::Constant { c } => {
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::config(format!("constant law needs c > 0, got {c}")));
                }
            }
            ConductanceLaw::UniformElliptic { c_m } => {
                if !(c_m >= 1.0) || !c_m.is_finite() {
                    return Err(Error::config(format!(
                        "uniform-elliptic law needs c_m >= 1, got {c_m}"
                    )));
                }
            }
            ConductanceLaw::Dilute { p0, c_m } => {
                if !(c_m >= 1.0) || !c_m.is_finite() {
                    return Err(Error::config(format!(
                        "dilute law needs c_m >= 1, got {c_m}"
                    )));
                }
                if !(0.0..1.0).contains(&p0) {
                    return Err(Error::config(format!("dilute law needs 0 <= p0 < 1, got {p0}")));
                }
                if bbox.d == 2 && p0 >= 0.5 {
                    return Err(Error::config(format!(
                        "p0={p0} >= 1/2, the bond percolation threshold in d=2; \
                         the positive-weight graph would have no infinite cluster"
                    )));
                }
                if bbox.d >= 3 && p0 >= 0.2488 {
                    warnings.push(format!(
                        "p0={p0} is at or above the approximate d=3 bond threshold 0.2488; \
                         proceeding (advisory only for d >= 3)"
                    ));
                }
            }
            ConductanceLaw::Custom => {
                return Err(Error::config(
                    "custom law has no sampler; use from_weights",
                ));
            }
        }
        let n = bbox.vertex_count();
        let d = bbox.d;
        let mut rng = rng_from_seed(seed);
        let mut weights = vec![0.0f64; n * d];
        for v in 0..n {
            for a in 0..d {
                if bbox.neighbor(v, a, 1).is_none() {
                    continue;
                }
                weights[v * d + a] = match law {
                    ConductanceLaw::Constant { c } => c,
                    ConductanceLaw::UniformElliptic { c_m } => {
                        let u: f64 = rng.random();
                        1.0 / c_m + u * (c_m - 1.0 / c_m)
                    }
                    ConductanceLaw::Dilute { p0, c_m } => {
                        let z: f64 = rng.random();
                        if z < p0 {
                            0.0
                        } else {
                            let u: f64 = rng.random();
                            1.0 / c_m + u * (c_m - 1.0 / c_m)
                        }
                    }
                    ConductanceLaw::Custom => unreachable!(),
                };
            }
        }
        let mut field = ConductanceField {
            bbox,
            law,
            seed,
            weights,
            warnings,
            derived: Derived::default(),
        };
        field.rebuild();
        Ok(field)
    }

    /// Field from explicit canonical weights (length n*d, nonnegative,
    /// zero on absent hard-wall slots).
    pub fn from_weights(bbox: LatticeBox, weights: Vec<f64>) -> Result<Self> {
        let n = bbox.vertex_count();
        if weights.len() != n * bbox.d {
            return Err(Error::config(format!(
                "expected {} canonical weights, got {}",
                n * bbox.d,
                weights.len()
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(format!("weight[{i}]={w} must be finite and >= 0")));
            }
            let (v, a) = (i / bbox.d, i % bbox.d);
            if w > 0.0 && bbox.neighbor(v, a, 1).is_none() {
                return Err(Error::config(format!(
                    "weight[{i}] > 0 on an absent hard-wall edge"
                )));
            }
        }
        let mut field = ConductanceField {
            bbox,
            law: ConductanceLaw::Custom,
            seed: 0,
            weights,
            warnings: Vec::new(),
            derived: Derived::default(),
        };
        field.rebuild();
        Ok(field)
    }

    /// Rebuild derived tables (after deserialization or construction).
    pub fn rebuild(&mut self) {
        let n = self.bbox.vertex_count();
        let d = self.bbox.d;
        let slots = 2 * d;
        let mut nbrs = vec![NO_NEIGHBOR; n * slots];
        let mut nbr_w = vec![0.0f64; n * slots];
        for v in 0..n {
            for a in 0..d {
                if let Some(u) = self.bbox.neighbor(v, a, 1) {
                    let w = self.weights[v * d + a];
                    nbrs[v * slots + 2 * a] = u as u32;
                    nbr_w[v * slots + 2 * a] = w;
                    nbrs[u * slots + 2 * a + 1] = v as u32;
                    nbr_w[u * slots + 2 * a + 1] = w;
                }
            }
        }
        let mut mu = vec![0.0f64; n];
        let mut cum = vec![0.0f64; n * slots];
        for v in 0..n {
            let mut acc = 0.0;
            for s in 0..slots {
                acc += nbr_w[v * slots + s];
                cum[v * slots + s] = acc;
            }
            mu[v] = acc;
        }
        self.derived = Derived { nbrs, nbr_w, cum, mu };
    }

    pub fn vertex_count(&self) -> usize {
        self.bbox.vertex_count()
    }

    pub fn slots(&self) -> usize {
        2 * self.bbox.d
    }

    /// mu_x = sum of incident edge weights (0 for isolated vertices).
    pub fn vertex_weight(&self, v: usize) -> f64 {
        self.derived.mu[v]
    }

    pub fn mu(&self) -> &[f64] {
        &self.derived.mu
    }

    /// Total mass sum_x mu_x.
    pub fn total_weight(&self) -> f64 {
        self.derived.mu.iter().sum()
    }

    /// Neighbor in slot s (2a = +e_a, 2a+1 = -e_a), with its edge weight.
    #[inline]
    pub fn neighbor_slot(&self, v: usize, s: usize) -> Option<(usize, f64)> {
        let u = self.derived.nbrs[v * self.slots() + s];
        if u == NO_NEIGHBOR {
            None
        } else {
            Some((u as usize, self.derived.nbr_w[v * self.slots() + s]))
        }
    }

    #[inline]
    pub fn slot_weight(&self, v: usize, s: usize) -> f64 {
        self.derived.nbr_w[v * self.slots() + s]
    }

    /// Sample a jump destination slot from vertex v by inverse cdf over the
    /// cumulative slot weights. Panics if v is isolated.
    #[inline]
    pub fn sample_jump_slot(&self, v: usize, u01: f64) -> usize {
        let slots = self.slots();
        let base = v * slots;
        let target = u01 * self.derived.mu[v];
        let cum = &self.derived.cum[base..base + slots];
        for (s, &c) in cum.iter().enumerate() {
            if target < c {
                return s;
            }
        }
        // u01 == 1.0 edge case: last positive slot.
        (0..slots)
            .rev()
            .find(|&s| self.derived.nbr_w[base + s] > 0.0)
            .expect("sample_jump_slot on isolated vertex")
    }

    /// Graph distances from x through positive-weight edges, capped at
    /// `cap` (distances beyond cap are reported unreachable).
    pub fn bfs_distances(&self, x: usize, cap: u32) -> Vec<u32> {
        let n = self.vertex_count();
        let mut dist = vec![DIST_UNREACHABLE; n];
        let mut q = VecDeque::new();
        dist[x] = 0;
        q.push_back(x);
        while let Some(v) = q.pop_front() {
            let dv = dist[v];
            if dv >= cap {
                continue;
            }
            for s in 0..self.slots() {
                if self.slot_weight(v, s) > 0.0 {
                    if let Some((u, _)) = self.neighbor_slot(v, s) {
                        if dist[u] == DIST_UNREACHABLE {
                            dist[u] = dv + 1;
                            q.push_back(u);
                        }
                    }
                }
            }
        }
        dist
    }

    /// Ball B(x,r) in graph distance through positive-weight edges,
    /// as a sorted vertex list. B(x,0) = {x}.
    pub fn ball(&self, x: usize, r: u32) -> Vec<u32> {
        let dist = self.bfs_distances(x, r);
        let mut out: Vec<u32> = (0..self.vertex_count() as u32)
            .filter(|&v| dist[v as usize] <= r)
            .collect();
        out.sort_unstable();
        out
    }

    /// mu(B(x,r)) = sum of vertex weights over the ball.
    pub fn ball_volume(&self, x: usize, r: u32) -> f64 {
        self.ball(x, r)
            .iter()
            .map(|&v| self.vertex_weight(v as usize))
            .sum()
    }

    /// True iff the field is exactly invariant under coordinate translation
    /// on the torus: per axis, all canonical weights are bit-equal.
    pub fn is_translation_invariant(&self) -> bool {
        if self.bbox.boundary != Boundary::Torus {
            return false;
        }
        let d = self.bbox.d;
        let n = self.vertex_count();
        for a in 0..d {
            let w0 = self.weights[a].to_bits();
            for v in 1..n {
                if self.weights[v * d + a].to_bits() != w0 {
                    return false;
                }
            }
        }
        true
    }

    /// Permutation mapping y -> y + (to - from) on the torus, as indices.
    pub fn translation_map(&self, from: usize, to: usize) -> Vec<u32> {
        assert_eq!(self.bbox.boundary, Boundary::Torus);
        let n = self.vertex_count();
        let side = self.bbox.side;
        let cf = self.bbox.coords(from);
        let ct = self.bbox.coords(to);
        let delta: Vec<usize> = cf
            .iter()
            .zip(&ct)
            .map(|(&f, &t)| (t + side - f) % side)
            .collect();
        let mut map = vec![0u32; n];
        for (y, item) in map.iter_mut().enumerate() {
            let mut cy = self.bbox.coords(y);
            for (a, c) in cy.iter_mut().enumerate() {
                *c = (*c + delta[a]) % side;
            }
            *item = self.bbox.index(&cy) as u32;
        }
        map
    }

    // ---- serialization ----

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut f: ConductanceField = serde_json::from_str(s)?;
        let n = f.bbox.vertex_count();
        if f.weights.len() != n * f.bbox.d {
            return Err(Error::config("field json has wrong weight count"));
        }
        f.rebuild();
        Ok(f)
    }

    const MAGIC: &'static [u8; 4] = b"CLAB";
    const VERSION: u16 = 1;

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.weights.len() * 8);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.bbox.d as u16).to_le_bytes());
        out.extend_from_slice(&(self.bbox.side as u32).to_le_bytes());
        out.push(match self.bbox.boundary {
            Boundary::Torus => 0,
            Boundary::HardWall => 1,
        });
        let (tag, p0, cm): (u8, f64, f64) = match self.law {
            ConductanceLaw::Constant { c } => (0, 0.0, c),
            ConductanceLaw::UniformElliptic { c_m } => (1, 0.0, c_m),
            ConductanceLaw::Dilute { p0, c_m } => (2, p0, c_m),
            ConductanceLaw::Custom => (3, 0.0, 0.0),
        };
        out.push(tag);
        out.extend_from_slice(&p0.to_le_bytes());
        out.extend_from_slice(&cm.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::config("malformed field binary");
        if bytes.len() < 40 || &bytes[0..4] != Self::MAGIC {
            return Err(bad());
        }
        let rd_u16 = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let rd_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let rd_u64 = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let rd_f64 = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if rd_u16(4) != Self::VERSION {
            return Err(bad());
        }
        let d = rd_u16(6) as usize;
        let side = rd_u32(8) as usize;
        let boundary = match bytes[12] {
            0 => Boundary::Torus,
            1 => Boundary::HardWall,
            _ => return Err(bad()),
        };
        let tag = bytes[13];
        let p0 = rd_f64(14);
        let cm = rd_f64(22);
        let seed = rd_u64(30);
        let m = rd_u64(38) as usize;
        if bytes.len() != 46 + 8 * m {
            return Err(bad());
        }
        let law = match tag {
            0 => ConductanceLaw::Constant { c: cm },
            1 => ConductanceLaw::UniformElliptic { c_m: cm },
            2 => ConductanceLaw::Dilute { p0, c_m: cm },
            3 => ConductanceLaw::Custom,
            _ => return Err(bad()),
        };
        let bbox = LatticeBox::new(d, side, boundary)?;
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            weights.push(rd_f64(46 + 8 * i));
        }
        if weights.len() != bbox.vertex_count() * d {
            return Err(bad());
        }
        let mut f = ConductanceField {
            bbox,
            law,
            seed,
            weights,
            warnings: Vec::new(),
            derived: Derived::default(),
        };
        f.rebuild();
        Ok(f)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_binary())?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_binary(&std::fs::read(path)?)
    }
}

/// Connected components of the positive-weight graph.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterMap {
    /// Component label per vertex; isolated vertices get their own label.
    pub labels: Vec<u32>,
    /// Vertex count per label.
    pub sizes: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterReport {
    pub n_clusters: usize,
    pub largest_label: u32,
    pub largest_size: u64,
    /// Label of the component containing the all-zero vertex.
    pub origin_label: u32,
    pub origin_in_largest: bool,
    /// Vertices with mu = 0.
    pub isolated: u64,
    /// Whether callers wanting a live origin should resample the field.
    pub resample_recommended: bool,
}

pub fn largest_cluster(field: &ConductanceField) -> (ClusterMap, ClusterReport) {
    let n = field.vertex_count();
    let mut labels = vec![u32::MAX; n];
    let mut sizes = Vec::new();
    let mut q = VecDeque::new();
    for start in 0..n {
        if labels[start] != u32::MAX {
            continue;
        }
        let label = sizes.len() as u32;
        let mut count = 0u64;
        labels[start] = label;
        q.push_back(start);
        while let Some(v) = q.pop_front() {
            count += 1;
            for s in 0..field.slots() {
                if field.slot_weight(v, s) > 0.0 {
                    if let Some((u, _)) = field.neighbor_slot(v, s) {
                        if labels[u] == u32::MAX {
                            labels[u] = label;
                            q.push_back(u);
                        }
                    }
                }
            }
        }
        sizes.push(count);
    }
    let largest_label = (0..sizes.len())
        .max_by_key(|&i| sizes[i])
        .expect("at least one vertex") as u32;
    let isolated = (0..n).filter(|&v| field.vertex_weight(v) == 0.0).count() as u64;
    let origin_label = labels[0];
    let report = ClusterReport {
        n_clusters: sizes.len(),
        largest_label,
        largest_size: sizes[largest_label as usize],
        origin_label,
        origin_in_largest: origin_label == largest_label,
        isolated,
        resample_recommended: origin_label != largest_label,
    };
    (ClusterMap { labels, sizes }, report)
}

/// Volume growth report against mu(B(x,r)) <= C_U r^d: per-(x,r) volumes
/// and the smallest C_U making the bound hold over the whole sample.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeReport {
    pub c_u_given: f64,
    pub rows: Vec<VolumeRow>,
    pub holds_for_given: bool,
    pub smallest_c_u: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeRow {
    pub x: u32,
    pub r: u32,
    pub volume: f64,
    pub ratio: f64,
}

pub fn check_volume_bound(
    field: &ConductanceField,
    centers: &[usize],
    radii: &[u32],
    c_u_given: f64,
) -> VolumeReport {
    let d = field.bbox.d as i32;
    let mut rows = Vec::new();
    let mut c_u = 0.0f64;
    for &x in centers {
        for &r in radii {
            assert!(r >= 1, "volume bound needs r >= 1");
            let vol = field.ball_volume(x, r);
            let ratio = vol / (r as f64).powi(d);
            c_u = c_u.max(ratio);
            rows.push(VolumeRow {
                x: x as u32,
                r,
                volume: vol,
                ratio,
            });
        }
    }
    VolumeReport {
        c_u_given,
        rows,
        holds_for_given: c_u <= c_u_given,
        smallest_c_u: c_u,
    }
}
