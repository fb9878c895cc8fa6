//! Two-sided Lipschitz surfaces over fields of good and bad space-time
//! cells.
//!
//! A space-time cell (i, tau) is relabeled in base-height coordinates by
//! singling out one spatial axis as height: the base collects the remaining
//! d-1 spatial coordinates plus tau, and h is the chosen coordinate. A
//! height function F is Lipschitz when |F(x) - F(y)| <= 1 for base
//! neighbors x, y with ||x - y||_1 = 1. The two-sided surface is a pair
//! F_plus >= 0 >= F_minus of Lipschitz functions whose graph cells are all
//! good; the minimal one is found by raising heights from zero until every
//! graph cell is good and no Lipschitz constraint is violated. Since
//! admissible functions are closed under pointwise minimum, that fixpoint
//! is the unique pointwise-minimal surface, which a small transfer-matrix
//! oracle certifies exhaustively.

use crate::epidemic::{estimate_cell_event, CellEventSpec};
use crate::error::{Error, Result};
use crate::lattice::ConductanceField;
use crate::rng::{derive_seed, rng_from};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Map a space-time cell (i, tau) to base-height coordinates. `height_dim`
/// is 1-based in {1..d}; the base is i with that coordinate removed and tau
/// appended.
pub fn to_base_height(i: &[i64], tau: i64, height_dim: usize) -> Result<(Vec<i64>, i64)> {
    if height_dim == 0 || height_dim > i.len() {
        return Err(Error::config(format!(
            "height_dim {height_dim} not in 1..={}",
            i.len()
        )));
    }
    let h = i[height_dim - 1];
    let mut b: Vec<i64> = Vec::with_capacity(i.len());
    for (a, &c) in i.iter().enumerate() {
        if a != height_dim - 1 {
            b.push(c);
        }
    }
    b.push(tau);
    Ok((b, h))
}

/// Inverse of [`to_base_height`]: reinsert h as the height coordinate and
/// split off tau.
pub fn from_base_height(b: &[i64], h: i64, height_dim: usize) -> Result<(Vec<i64>, i64)> {
    if b.is_empty() {
        return Err(Error::config("base must contain at least the time axis"));
    }
    let d = b.len();
    if height_dim == 0 || height_dim > d {
        return Err(Error::config(format!("height_dim {height_dim} not in 1..={d}")));
    }
    let tau = b[d - 1];
    let mut i: Vec<i64> = Vec::with_capacity(d);
    for (a, &c) in b[..d - 1].iter().enumerate() {
        if a == height_dim - 1 {
            i.push(h);
        }
        i.push(c);
    }
    if height_dim == d {
        i.push(h);
    }
    Ok((i, tau))
}

/// Where a cell field's flags came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Iid { p_bad: f64 },
    /// Flags estimated by per-cell simulation. Adjacent super cells overlap
    /// spatially, so the flags are dependent; `dependent_flags` records
    /// that the i.i.d. reading would be wrong.
    Simulated { dependent_flags: bool },
}

/// Good/bad flags on a finite base-height box: base coordinates run over
/// `base_dims` (axis 0 fastest), heights over [-height_extent,
/// height_extent].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellField {
    pub base_dims: Vec<usize>,
    pub height_extent: usize,
    /// good = true, indexed by base_flat * (2H + 1) + (h + H).
    flags: Vec<bool>,
    pub provenance: Provenance,
}

impl CellField {
    pub fn new(
        base_dims: &[usize],
        height_extent: usize,
        all_good: bool,
        provenance: Provenance,
    ) -> Result<Self> {
        if base_dims.is_empty() || base_dims.iter().any(|&n| n == 0) {
            return Err(Error::config(format!("bad base dims {base_dims:?}")));
        }
        let nb: usize = base_dims.iter().product();
        let nh = 2 * height_extent + 1;
        Ok(CellField {
            base_dims: base_dims.to_vec(),
            height_extent,
            flags: vec![all_good; nb * nh],
            provenance,
        })
    }

    pub fn base_count(&self) -> usize {
        self.base_dims.iter().product()
    }

    /// Flat base index, axis 0 fastest.
    pub fn base_index(&self, b: &[usize]) -> usize {
        debug_assert_eq!(b.len(), self.base_dims.len());
        let mut idx = 0usize;
        for a in (0..b.len()).rev() {
            debug_assert!(b[a] < self.base_dims[a]);
            idx = idx * self.base_dims[a] + b[a];
        }
        idx
    }

    pub fn base_coords(&self, mut idx: usize) -> Vec<usize> {
        let mut b = Vec::with_capacity(self.base_dims.len());
        for &n in &self.base_dims {
            b.push(idx % n);
            idx /= n;
        }
        b
    }

    fn flag_index(&self, b_flat: usize, h: i64) -> usize {
        let hh = self.height_extent as i64;
        debug_assert!(-hh <= h && h <= hh);
        b_flat * (2 * self.height_extent + 1) + (h + hh) as usize
    }

    pub fn good(&self, b_flat: usize, h: i64) -> bool {
        self.flags[self.flag_index(b_flat, h)]
    }

    pub fn set_good(&mut self, b_flat: usize, h: i64, good: bool) {
        let k = self.flag_index(b_flat, h);
        self.flags[k] = good;
    }

    /// Base neighbors of a flat index (one step along one axis, clipped at
    /// the box faces).
    fn base_neighbors(&self, b_flat: usize) -> Vec<usize> {
        let coords = self.base_coords(b_flat);
        let mut out = Vec::with_capacity(2 * coords.len());
        let mut stride = 1usize;
        for (a, &n) in self.base_dims.iter().enumerate() {
            if coords[a] + 1 < n {
                out.push(b_flat + stride);
            }
            if coords[a] > 0 {
                out.push(b_flat - stride);
            }
            stride *= n;
        }
        out
    }
}

/// i.i.d. Bernoulli(p_bad) flags.
pub fn simulate_iid_field(
    p_bad: f64,
    base_dims: &[usize],
    height_extent: usize,
    seed: u64,
) -> Result<CellField> {
    if !(0.0..=1.0).contains(&p_bad) {
        return Err(Error::config(format!("p_bad {p_bad} must lie in [0, 1]")));
    }
    let mut field = CellField::new(
        base_dims,
        height_extent,
        true,
        Provenance::Iid { p_bad },
    )?;
    let mut rng = rng_from(seed, "iid-cells", 0);
    let hh = height_extent as i64;
    for b in 0..field.base_count() {
        for h in -hh..=hh {
            if rng.random::<f64>() < p_bad {
                field.set_good(b, h, false);
            }
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn sign(self) -> i64 {
        match self {
            Side::Plus => 1,
            Side::Minus => -1,
        }
    }
}

/// Pointwise-minimal (in |h|) Lipschitz height function with every graph
/// cell good, or None when the height extent is exhausted. Heights are
/// signed: >= 0 for [`Side::Plus`], <= 0 for [`Side::Minus`].
///
/// Raise-until-fixpoint from zero: each base point is lifted past bad cells
/// and up to one below its highest neighbor, monotonically, so the fixpoint
/// is the least admissible function.
pub fn min_lipschitz_surface(cells: &CellField, side: Side) -> Option<Vec<i64>> {
    let sign = side.sign();
    let nb = cells.base_count();
    let hmax = cells.height_extent as i64;
    let mut f = vec![0i64; nb];
    let mut queue: VecDeque<usize> = (0..nb).collect();
    let mut queued = vec![true; nb];
    while let Some(b) = queue.pop_front() {
        queued[b] = false;
        let mut t = f[b];
        for nbr in cells.base_neighbors(b) {
            t = t.max(f[nbr] - 1);
        }
        while t <= hmax && !cells.good(b, sign * t) {
            t += 1;
        }
        if t > hmax {
            return None;
        }
        if t != f[b] {
            f[b] = t;
            for nbr in cells.base_neighbors(b) {
                if !queued[nbr] && f[nbr] < t - 1 {
                    queued[nbr] = true;
                    queue.push_back(nbr);
                }
            }
        }
    }
    for v in &mut f {
        *v *= sign;
    }
    Some(f)
}

/// Two-sided surface: both one-sided minimal surfaces, existence iff both
/// fit the height extent. A pair with only one side inside the box is not
/// a two-sided surface, so non-existence leaves both vectors empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSurface {
    pub f_plus: Vec<i64>,
    pub f_minus: Vec<i64>,
    pub exists: bool,
}

pub fn two_sided_surface(cells: &CellField) -> LipschitzSurface {
    match (
        min_lipschitz_surface(cells, Side::Plus),
        min_lipschitz_surface(cells, Side::Minus),
    ) {
        (Some(f_plus), Some(f_minus)) => LipschitzSurface { f_plus, f_minus, exists: true },
        _ => LipschitzSurface { f_plus: vec![], f_minus: vec![], exists: false },
    }
}

/// Exhaustive oracle for [`min_lipschitz_surface`] on tiny instances
/// (base box within 4x4, height extent <= 4). Admissible functions are
/// closed under pointwise min, so the unique sum-minimal one found by
/// transfer-matrix search over per-column height profiles is the pointwise
/// minimum.
pub fn brute_force_min_surface(cells: &CellField, side: Side) -> Result<Option<Vec<i64>>> {
    let dims = &cells.base_dims;
    if dims.len() > 2 || dims.iter().any(|&n| n > 4) || cells.height_extent > 4 {
        return Err(Error::config(format!(
            "oracle limited to base boxes within 4x4 and height extent 4, got {dims:?} / {}",
            cells.height_extent
        )));
    }
    let sign = side.sign();
    let m = dims[0];
    let ncols = if dims.len() == 2 { dims[1] } else { 1 };
    let hmax = cells.height_extent as i64;
    let nlevels = (hmax + 1) as usize;

    // All height profiles over one column that are Lipschitz along it.
    let nprof = nlevels.pow(m as u32);
    let mut profiles: Vec<Vec<i64>> = Vec::with_capacity(nprof);
    'outer: for code in 0..nprof {
        let mut p = Vec::with_capacity(m);
        let mut c = code;
        for _ in 0..m {
            p.push((c % nlevels) as i64);
            c /= nlevels;
        }
        for w in p.windows(2) {
            if (w[0] - w[1]).abs() > 1 {
                continue 'outer;
            }
        }
        profiles.push(p);
    }
    let admissible = |col: usize, p: &[i64]| -> bool {
        p.iter().enumerate().all(|(i, &h)| {
            let b_flat = col * m + i;
            cells.good(b_flat, sign * h)
        })
    };
    let cost = |p: &[i64]| -> i64 { p.iter().sum() };
    let compatible =
        |p: &[i64], q: &[i64]| -> bool { p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 1) };

    const INF: i64 = i64::MAX / 4;
    let mut best: Vec<i64> = profiles
        .iter()
        .map(|p| if admissible(0, p) { cost(p) } else { INF })
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(ncols);
    for col in 1..ncols {
        let mut next = vec![INF; profiles.len()];
        let mut arg = vec![usize::MAX; profiles.len()];
        for (j, q) in profiles.iter().enumerate() {
            if !admissible(col, q) {
                continue;
            }
            let cq = cost(q);
            for (i, p) in profiles.iter().enumerate() {
                if best[i] < INF && compatible(p, q) && best[i] + cq < next[j] {
                    next[j] = best[i] + cq;
                    arg[j] = i;
                }
            }
        }
        best = next;
        back.push(arg);
    }
    let (last, &total) = match best
        .iter()
        .enumerate()
        .min_by_key(|&(_, &c)| c)
    {
        Some(x) => x,
        None => return Ok(None),
    };
    if total >= INF {
        return Ok(None);
    }
    let mut chain = vec![last];
    for col in (1..ncols).rev() {
        let prev = back[col - 1][*chain.last().expect("chain nonempty")];
        chain.push(prev);
    }
    chain.reverse();
    let mut f = vec![0i64; m * ncols];
    for (col, &j) in chain.iter().enumerate() {
        for (i, &h) in profiles[j].iter().enumerate() {
            f[col * m + i] = sign * h;
        }
    }
    Ok(Some(f))
}

/// Whether the surface blocks every base-height path from `(b, h)` within
/// distance `d_max`: BFS through non-surface cells over steps of
/// ||.||_1 = 1; true iff no reachable cell lies farther than `d_max` in
/// ||.||_1 from the start. A start on a surface cell is vacuously blocked.
pub fn surrounds(
    cells: &CellField,
    surface: &LipschitzSurface,
    b: &[usize],
    h: i64,
    d_max: i64,
) -> Result<bool> {
    if b.len() != cells.base_dims.len() || b.iter().zip(&cells.base_dims).any(|(&c, &n)| c >= n) {
        return Err(Error::config(format!("base cell {b:?} outside the box")));
    }
    let hmax = cells.height_extent as i64;
    if h.abs() > hmax {
        return Err(Error::config(format!("height {h} outside [-{hmax}, {hmax}]")));
    }
    let nb = cells.base_count();
    let on_surface = |b_flat: usize, hh: i64| -> bool {
        (surface.f_plus.len() == nb && surface.f_plus[b_flat] == hh)
            || (surface.f_minus.len() == nb && surface.f_minus[b_flat] == hh)
    };
    let start_flat = cells.base_index(b);
    if on_surface(start_flat, h) {
        return Ok(true);
    }
    let nh = 2 * cells.height_extent + 1;
    let key = |b_flat: usize, hh: i64| -> usize { b_flat * nh + (hh + hmax) as usize };
    let start_coords = cells.base_coords(start_flat);
    let dist = |b_flat: usize, hh: i64| -> i64 {
        let c = cells.base_coords(b_flat);
        let base: i64 = c
            .iter()
            .zip(&start_coords)
            .map(|(&a, &b)| (a as i64 - b as i64).abs())
            .sum();
        base + (hh - h).abs()
    };
    let mut seen = vec![false; nb * nh];
    let mut queue = VecDeque::new();
    seen[key(start_flat, h)] = true;
    queue.push_back((start_flat, h));
    while let Some((bf, hh)) = queue.pop_front() {
        if dist(bf, hh) > d_max {
            return Ok(false);
        }
        let push = |nbf: usize, nhh: i64, seen: &mut Vec<bool>, queue: &mut VecDeque<(usize, i64)>| {
            if !seen[key(nbf, nhh)] && !on_surface(nbf, nhh) {
                seen[key(nbf, nhh)] = true;
                queue.push_back((nbf, nhh));
            }
        };
        for nbf in cells.base_neighbors(bf) {
            push(nbf, hh, &mut seen, &mut queue);
        }
        if hh + 1 <= hmax {
            push(bf, hh + 1, &mut seen, &mut queue);
        }
        if hh - 1 >= -hmax {
            push(bf, hh - 1, &mut seen, &mut queue);
        }
    }
    Ok(true)
}

/// Classify space-time cells by simulating the cell event per cell with
/// derived seeds. `cell_dims` lists the d spatial extents then the time
/// extent; the height axis (1-based spatial index) must have odd length
/// 2H + 1 so heights center on zero. With `reps_per_cell` = 1 a cell is
/// good iff its single designated rep saw the event; more reps switch to
/// majority vote.
pub fn classify_cells_from_sim(
    field: &ConductanceField,
    spec: &CellEventSpec,
    cell_dims: &[usize],
    height_dim: usize,
    reps_per_cell: u64,
    seed: u64,
) -> Result<CellField> {
    let d = field.bbox.d;
    if cell_dims.len() != d + 1 {
        return Err(Error::config(format!(
            "cell_dims {cell_dims:?} must list {d} spatial extents plus time"
        )));
    }
    if height_dim == 0 || height_dim > d {
        return Err(Error::config(format!("height_dim {height_dim} not in 1..={d}")));
    }
    let total: usize = cell_dims.iter().product();
    let budget = 8usize.pow((d + 1) as u32);
    if total > budget {
        return Err(Error::config(format!(
            "{total} cells exceed the desk-scale budget {budget}"
        )));
    }
    if reps_per_cell == 0 {
        return Err(Error::config("need at least one rep per cell"));
    }
    let hlen = cell_dims[height_dim - 1];
    if hlen % 2 == 0 {
        return Err(Error::config(format!(
            "height axis length {hlen} must be odd so heights center on zero"
        )));
    }
    let hext = hlen / 2;
    let base_dims: Vec<usize> = cell_dims
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != height_dim - 1)
        .map(|(_, &n)| n)
        .collect();
    let mut out = CellField::new(
        &base_dims,
        hext,
        false,
        Provenance::Simulated { dependent_flags: true },
    )?;
    for flat in 0..total {
        let mut idx = flat;
        let mut coords = Vec::with_capacity(d + 1);
        for &n in cell_dims {
            coords.push((idx % n) as i64);
            idx /= n;
        }
        let tau = coords[d];
        let i = &coords[..d];
        let (b, h_raw) = to_base_height(i, tau, height_dim)?;
        let h = h_raw - hext as i64;
        let cell_seed = derive_seed(seed, "cell", flat as u64);
        let report = estimate_cell_event(field, spec, reps_per_cell, cell_seed)?;
        let good = if reps_per_cell == 1 {
            report.outcomes[0].e_st
        } else {
            2 * report.successes > reps_per_cell
        };
        let b_usize: Vec<usize> = b.iter().map(|&c| c as usize).collect();
        let b_flat = out.base_index(&b_usize);
        out.set_good(b_flat, h, good);
    }
    Ok(out)
}
