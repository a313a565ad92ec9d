//! Radial projections, direction sets, grid measures and the tube condition.
//!
//! Directions of oriented vectors live on the circle `[0,1)` (angle / 2π).
//! Line directions in tube families use the half circle (angle / π).

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::grid::{Domain2D, GridSet1D, GridSet2D};
use crate::refine::hyperdyadic_ladder;
use crate::tube::{Line, Tube};

/// Nonnegative weights on the cells of a grid set, summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure2D {
    support: GridSet2D,
    weights: Vec<f64>,
    pub s: f64,
    pub c: f64,
}

impl DiscreteMeasure2D {
    /// Weights listed per cell. Every weight must be positive and the total
    /// must be within `2^-40` of one.
    pub fn from_weights(dom: Domain2D, cells: &[((i64, i64), f64)], s: f64, c: f64) -> Result<Self> {
        let mut support = GridSet2D::empty(dom);
        let mut weights = vec![0.0; dom.nx() * dom.ny()];
        let mut total = 0.0;
        for &((x, y), w) in cells {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Parameter(format!("weight {w} at ({x},{y}) not positive")));
            }
            if !support.in_domain(x, y) {
                return Err(Error::Domain(format!("cell ({x},{y}) outside the domain")));
            }
            if support.contains(x, y) {
                return Err(Error::Parameter(format!("cell ({x},{y}) listed twice")));
            }
            support.insert(x, y);
            weights[Self::slot(&dom, x, y)] = w;
            total += w;
        }
        if support.is_empty() {
            return Err(Error::Empty("measure with empty support".into()));
        }
        if (total - 1.0).abs() > 2f64.powi(-40) {
            return Err(Error::Parameter(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure2D { support, weights, s, c })
    }

    /// Uniform probability measure on `support`.
    pub fn uniform(support: &GridSet2D, s: f64, c: f64) -> Result<Self> {
        let n = support.count();
        if n == 0 {
            return Err(Error::Empty("uniform measure on empty set".into()));
        }
        let w = 1.0 / n as f64;
        let cells: Vec<_> = support.cells().map(|p| (p, w)).collect();
        let mut m = Self::from_weights(support.domain(), &cells, s, c)?;
        m.support = support.clone();
        Ok(m)
    }

    fn slot(dom: &Domain2D, x: i64, y: i64) -> usize {
        (y - dom.y0) as usize * dom.nx() + (x - dom.x0) as usize
    }

    pub fn support(&self) -> &GridSet2D {
        &self.support
    }

    pub fn domain(&self) -> Domain2D {
        self.support.domain()
    }

    pub fn weight(&self, x: i64, y: i64) -> f64 {
        if self.support.in_domain(x, y) {
            self.weights[Self::slot(&self.domain(), x, y)]
        } else {
            0.0
        }
    }

    /// Support cells with weights, row-major.
    pub fn cells(&self) -> Vec<((i64, i64), f64)> {
        self.support.cells().map(|(x, y)| ((x, y), self.weight(x, y))).collect()
    }

    pub fn total(&self) -> f64 {
        self.cells().iter().map(|c| c.1).sum()
    }
}

fn cell_center(c: (i64, i64), d: f64) -> (f64, f64) {
    ((c.0 as f64 + 0.5) * d, (c.1 as f64 + 0.5) * d)
}

fn rect_distance(p: (f64, f64), c: (i64, i64), d: f64) -> f64 {
    let (x0, x1, y0, y1) = (c.0 as f64 * d, (c.0 + 1) as f64 * d, c.1 as f64 * d, (c.1 + 1) as f64 * d);
    let dx = (x0 - p.0).max(0.0).max(p.0 - x1);
    let dy = (y0 - p.1).max(0.0).max(p.1 - y1);
    dx.hypot(dy)
}

/// Cells of the circle meeting the open angular range `(lo, hi)` (radians, `hi − lo < 2π`).
fn cover_angles(out: &mut GridSet1D, lo: f64, hi: f64) {
    let n = 1i64 << out.m();
    let scale = n as f64 / (2.0 * PI);
    let a = (lo * scale).floor() as i64;
    let b = (hi * scale).ceil() as i64 - 1;
    if b - a + 1 >= n {
        out.insert_range(0, n - 1);
        return;
    }
    for k in a..=b {
        out.insert(k.rem_euclid(n));
    }
}

/// Angular range of the nonzero points of a closed polygon, seen from the origin.
/// Requires the origin not to be interior.
fn angular_range(corners: &[(f64, f64)], toward: (f64, f64)) -> (f64, f64) {
    let base = toward.1.atan2(toward.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in corners {
        if x == 0.0 && y == 0.0 {
            continue;
        }
        let mut a = y.atan2(x) - base;
        while a > PI {
            a -= 2.0 * PI;
        }
        while a <= -PI {
            a += 2.0 * PI;
        }
        lo = lo.min(a);
        hi = hi.max(a);
    }
    (base + lo, base + hi)
}

/// Conservative cover of the directions from `y` to the cells of `s`, on the
/// full circle at the resolution of `s`.
pub fn radial_project(y: (f64, f64), s: &GridSet2D) -> Result<GridSet1D> {
    let m = s.m();
    let d = s.delta();
    let mut out = GridSet1D::empty(m, 0, 1 << m)?;
    for c in s.cells() {
        if rect_distance(y, c, d) < d {
            return Err(Error::Domain(format!("point ({}, {}) within δ of cell {c:?}", y.0, y.1)));
        }
        let (x0, x1, y0, y1) = (c.0 as f64 * d - y.0, (c.0 + 1) as f64 * d - y.0, c.1 as f64 * d - y.1, (c.1 + 1) as f64 * d - y.1);
        let ctr = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let (lo, hi) = angular_range(&[(x0, y0), (x1, y0), (x0, y1), (x1, y1)], ctr);
        cover_angles(&mut out, lo, hi);
    }
    Ok(out)
}

/// Difference vectors `a − b` (in cells) over distinct member cells.
pub fn cell_differences(e: &GridSet2D) -> Vec<(i64, i64)> {
    let (nx, ny) = (e.nx() as i64, e.ny() as i64);
    let w = 2 * nx;
    let h = 2 * ny;
    // Reflected copy placed so that shifting by a cell's offset yields a − b + (nx, ny).
    let mut refl = Bits::new((w * h) as usize);
    let dom = e.domain();
    for (x, y) in e.cells() {
        let (rx, ry) = (nx - 1 - (x - dom.x0), ny - 1 - (y - dom.y0));
        refl.set((ry * w + rx) as usize);
    }
    let cells: Vec<(i64, i64)> = e.cells().collect();
    let acc = cells
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = Bits::new((w * h) as usize);
            for &(x, y) in chunk {
                acc.or_shifted(&refl, ((y - dom.y0) * w + (x - dom.x0)) as usize);
            }
            acc
        })
        .reduce(
            || Bits::new((w * h) as usize),
            |mut a, b| {
                a.union_with(&b);
                a
            },
        );
    acc.iter_ones()
        .map(|k| ((k as i64 % w) - (nx - 1), (k as i64 / w) - (ny - 1)))
        .filter(|&v| v != (0, 0))
        .collect()
}

/// Directions of the closed square `[dx−1, dx+1]×[dy−1, dy+1]` (cell units):
/// every difference of points from two cells at offset `(dx, dy)`.
fn difference_range(dx: i64, dy: i64) -> (f64, f64) {
    let (a, b) = (dx as f64, dy as f64);
    angular_range(&[(a - 1.0, b - 1.0), (a + 1.0, b - 1.0), (a - 1.0, b + 1.0), (a + 1.0, b + 1.0)], (a, b))
}

/// `S(E)`: conservative cover of the directions between distinct member cells.
/// Antipodally symmetric by construction.
pub fn direction_set(e: &GridSet2D) -> Result<GridSet1D> {
    if e.count() < 2 {
        return Err(Error::Empty("direction set needs at least two cells".into()));
    }
    let m = e.m();
    let n = 1i64 << m;
    let diffs = cell_differences(e);
    let half: Vec<(i64, i64)> = diffs.into_iter().filter(|&(dx, dy)| dy > 0 || (dy == 0 && dx > 0)).collect();
    let out = half
        .par_chunks(4096)
        .map(|chunk| {
            let mut g = GridSet1D::empty(m, 0, n).expect("valid circle");
            for &(dx, dy) in chunk {
                let (lo, hi) = difference_range(dx, dy);
                cover_angles(&mut g, lo, hi);
            }
            g
        })
        .reduce(|| GridSet1D::empty(m, 0, n).expect("valid circle"), |a, b| a.union(&b).expect("same circle"));
    let mut sym = out.clone();
    for k in out.cells() {
        sym.insert((k + n / 2).rem_euclid(n));
    }
    Ok(sym)
}

/// Least-squares fit of `log₂ N` against `log₂(1/r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentReport {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<f64>,
}

impl ExponentReport {
    pub fn refit(&self) -> Result<ExponentReport> {
        exponent_fit(&self.scales.iter().copied().zip(self.counts.iter().copied()).collect::<Vec<_>>())
    }
}

pub fn exponent_fit(data: &[(f64, f64)]) -> Result<ExponentReport> {
    if data.len() < 3 {
        return Err(Error::Parameter(format!("need at least 3 scales, got {}", data.len())));
    }
    if data.iter().any(|&(r, n)| !(r > 0.0) || !(n > 0.0)) {
        return Err(Error::Parameter("scales and counts must be positive".into()));
    }
    let xs: Vec<f64> = data.iter().map(|&(r, _)| -r.log2()).collect();
    let ys: Vec<f64> = data.iter().map(|&(_, n)| n.log2()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all scales equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(ExponentReport { slope, intercept, max_residual, scales: data.iter().map(|d| d.0).collect(), counts: data.iter().map(|d| d.1).collect() })
}

/// Covering numbers of `g` at `r = 2^{-j}` for each `j`, fitted.
pub fn covering_exponent(g: &GridSet1D, exps: &[i32]) -> Result<ExponentReport> {
    let data: Vec<(f64, f64)> = exps.iter().map(|&j| Ok((2f64.powi(-j), g.covering_number_exp(j)? as f64))).collect::<Result<_>>()?;
    exponent_fit(&data)
}

/// `max μ([a, a+r)²) / r^s` over grid corners `a` and dyadic `r ≥ δ`.
pub fn ball_condition_check(mu: &DiscreteMeasure2D, s: f64) -> Result<f64> {
    if !(s > 0.0 && s <= 2.0) {
        return Err(Error::Parameter(format!("s = {s} not in (0, 2]")));
    }
    let dom = mu.domain();
    let (nx, ny) = (dom.nx(), dom.ny());
    let mut pre = vec![0.0f64; (nx + 1) * (ny + 1)];
    for y in 0..ny {
        for x in 0..nx {
            let w = mu.weight(dom.x0 + x as i64, dom.y0 + y as i64);
            pre[(y + 1) * (nx + 1) + x + 1] = w + pre[y * (nx + 1) + x + 1] + pre[(y + 1) * (nx + 1) + x] - pre[y * (nx + 1) + x];
        }
    }
    let at = |x: i64, y: i64| pre[(y.clamp(0, ny as i64) as usize) * (nx + 1) + x.clamp(0, nx as i64) as usize];
    let d = dom.delta();
    let mut best = 0.0f64;
    let mut r = 1i64;
    while r <= nx.max(ny) as i64 {
        let denom = (r as f64 * d).powf(s);
        for ay in (1 - r)..ny as i64 {
            for ax in (1 - r)..nx as i64 {
                let mass = at(ax + r, ay + r) - at(ax, ay + r) - at(ax + r, ay) + at(ax, ay);
                best = best.max(mass / denom);
            }
        }
        r *= 2;
    }
    Ok(best)
}

/// Mass of the cells at distance `< radius` from the tube's line.
pub fn tube_mass(mu: &DiscreteMeasure2D, t: &Tube) -> f64 {
    let d = mu.domain().delta();
    mu.cells()
        .iter()
        .filter(|((x, y), _)| t.meets_rect(*x as f64 * d, (*x + 1) as f64 * d, *y as f64 * d, (*y + 1) as f64 * d))
        .map(|c| c.1)
        .sum()
}

/// Parameters of the tube-condition refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeConditionParams {
    pub eta: f64,
    pub rho: f64,
    pub eps: f64,
    pub k0: u32,
    pub kmax: u32,
    /// Lag with `ρ/2 ≈ (1+ε)^{-Γ}`.
    pub gamma: i32,
    /// Allowed mass of one tube of radius `δ_{k0−Γ}`.
    pub m0: f64,
}

impl TubeConditionParams {
    pub fn new(eta: f64, rho: f64, eps: f64, k0: u32, kmax: u32) -> Result<Self> {
        if !(eta > 0.0) || !(rho > 0.0 && rho < 1.0) || !(eps > 0.0 && eps <= 1.0) || k0 > kmax {
            return Err(Error::Parameter(format!("invalid tube-condition parameters η={eta} ρ={rho} ε={eps} k={k0}..{kmax}")));
        }
        let gamma = (-(rho / 2.0).ln() / (1.0 + eps).ln()).round() as i32;
        if gamma < 1 {
            return Err(Error::Parameter(format!("Γ = {gamma} < 1")));
        }
        Ok(TubeConditionParams { eta, rho, eps, k0, kmax, gamma, m0: 1.0 })
    }

    pub fn with_m0(mut self, m0: f64) -> Self {
        self.m0 = m0;
        self
    }

    /// `s_μ(1−ρ) > 2η` and `s_ν ρ/2 > 2η`.
    pub fn validate(&self, s_mu: f64, s_nu: f64) -> Result<()> {
        if !(s_mu * (1.0 - self.rho) > 2.0 * self.eta) {
            return Err(Error::Parameter(format!("s_μ(1−ρ) = {} ≤ 2η = {}", s_mu * (1.0 - self.rho), 2.0 * self.eta)));
        }
        if !(s_nu * self.rho / 2.0 > 2.0 * self.eta) {
            return Err(Error::Parameter(format!("s_ν ρ/2 = {} ≤ 2η = {}", s_nu * self.rho / 2.0, 2.0 * self.eta)));
        }
        Ok(())
    }

    pub fn ladder(&self) -> Result<Vec<u32>> {
        hyperdyadic_ladder(self.eps, self.k0, self.kmax)
    }

    /// Exponent of `δ_{k0−Γ}`, clamped at 0.
    pub fn coarse_exp(&self) -> u32 {
        (1.0 + self.eps).powi(self.k0 as i32 - self.gamma).round().max(0.0) as u32
    }
}

/// Retained pairs `(x, y)` of `supp μ × supp ν`.
#[derive(Clone, Debug, PartialEq)]
pub struct GoodPairMask {
    pub m: u32,
    xs: Vec<(i64, i64)>,
    ys: Vec<(i64, i64)>,
    bits: Bits,
    retained_mass: f64,
}

impl GoodPairMask {
    pub fn xs(&self) -> &[(i64, i64)] {
        &self.xs
    }
    pub fn ys(&self) -> &[(i64, i64)] {
        &self.ys
    }
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits.get(i * self.ys.len() + j)
    }
    pub fn retained_pairs(&self) -> usize {
        self.bits.count_ones()
    }
    pub fn retained_mass(&self) -> f64 {
        self.retained_mass
    }
    /// `Σ μ(x)ν(y)` over retained pairs, summed in row-major pair order.
    pub fn recompute_mass(&self, mu: &DiscreteMeasure2D, nu: &DiscreteMeasure2D) -> f64 {
        let mut total = 0.0;
        for (i, x) in self.xs.iter().enumerate() {
            let wx = mu.weight(x.0, x.1);
            let mut row = 0.0;
            for (j, y) in self.ys.iter().enumerate() {
                if self.contains(i, j) {
                    row += nu.weight(y.0, y.1);
                }
            }
            total += wx * row;
        }
        total
    }
}

/// Per-scale counts from one side of the refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SideReport {
    pub bad: usize,
    pub mbad: usize,
    pub badbad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleReport {
    pub exp: u32,
    pub family: usize,
    pub mbad_bound: f64,
    pub mu_side: SideReport,
    pub nu_side: SideReport,
    pub removed_pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeCertificate {
    pub scales: Vec<ScaleReport>,
    pub coarse_exp: u32,
    pub coarse_sup_mass: f64,
    pub m0_ok: bool,
    pub mbad_ok: bool,
    pub violations: usize,
    pub max_mu_ratio: f64,
    pub max_nu_ratio: f64,
}

/// Line-tube family at one scale: angle `πiδ_k/8`, offset `c_min + jδ_k/2`, radius `2δ_k`.
struct Family {
    pitch: f64,
    h: f64,
    r: f64,
    c_min: f64,
    n_off: usize,
    n_ang: usize,
}

impl Family {
    fn new(dom: &Domain2D, e: u32, radius_factor: f64) -> Self {
        let dk = 2f64.powi(-(e as i32));
        let (x0, x1, y0, y1) = dom.bounds();
        let reach = x0.abs().max(x1.abs()).hypot(y0.abs().max(y1.abs()));
        let r = radius_factor * dk;
        let h = dk / 2.0;
        let c_min = -reach - r;
        let n_off = ((2.0 * (reach + r)) / h).ceil() as usize + 1;
        Family { pitch: dk / 8.0, h, r, c_min, n_off, n_ang: 8usize << e }
    }

    fn normal(&self, i: usize) -> (f64, f64) {
        let th = PI * i as f64 * self.pitch;
        (-th.sin(), th.cos())
    }

    fn theta(&self, i: usize) -> f64 {
        PI * i as f64 * self.pitch
    }

    fn offset(&self, j: usize) -> f64 {
        self.c_min + j as f64 * self.h
    }

    /// Offsets `j` whose open tube meets the closed projection interval `[lo, hi]`.
    fn offsets_meeting(&self, lo: f64, hi: f64) -> (usize, usize) {
        let a = ((lo - self.r - self.c_min) / self.h).floor() as i64 + 1;
        let b = ((hi + self.r - self.c_min) / self.h).ceil() as i64 - 1;
        (a.max(0) as usize, (b.max(-1) + 1).min(self.n_off as i64) as usize)
    }
}

fn cell_projection(n: (f64, f64), c: (i64, i64), d: f64) -> (f64, f64) {
    let xs = [c.0 as f64 * d, (c.0 + 1) as f64 * d];
    let ys = [c.1 as f64 * d, (c.1 + 1) as f64 * d];
    let (ax0, ax1) = (n.0 * xs[0], n.0 * xs[1]);
    let (by0, by1) = (n.1 * ys[0], n.1 * ys[1]);
    (ax0.min(ax1) + by0.min(by1), ax0.max(ax1) + by0.max(by1))
}

/// Masses of every family tube, per angle, by a difference-array sweep.
fn family_masses(f: &Family, cells: &[((i64, i64), f64)], d: f64) -> Vec<Vec<f64>> {
    (0..f.n_ang)
        .into_par_iter()
        .map(|i| {
            let n = f.normal(i);
            let mut diff = vec![0.0f64; f.n_off + 1];
            for &(c, w) in cells {
                let (lo, hi) = cell_projection(n, c, d);
                let (a, b) = f.offsets_meeting(lo, hi);
                if a < b {
                    diff[a] += w;
                    diff[b] -= w;
                }
            }
            let mut run = 0.0;
            diff[..f.n_off]
                .iter()
                .map(|v| {
                    run += v;
                    run
                })
                .collect()
        })
        .collect()
}

fn tube_members(f: &Family, i: usize, j: usize, cells: &[((i64, i64), f64)], d: f64) -> Vec<bool> {
    let n = f.normal(i);
    let c = f.offset(j);
    cells
        .iter()
        .map(|&(cell, _)| {
            let (lo, hi) = cell_projection(n, cell, d);
            lo < c + f.r && hi > c - f.r
        })
        .collect()
}

fn line_angle_gap(a: f64, b: f64) -> f64 {
    let g = (a - b).rem_euclid(PI);
    g.min(PI - g)
}

/// One side of the refinement: bad tubes by the mass of `heavy`, points from
/// `light`. Returns the per-side counts and a removal predicate over
/// `(heavy index, light index)`.
fn refine_side(
    f: &Family,
    e: u32,
    p: &TubeConditionParams,
    heavy: &[((i64, i64), f64)],
    light: &[((i64, i64), f64)],
    d: f64,
) -> (SideReport, Vec<Bits>) {
    let dk = 2f64.powi(-(e as i32));
    let thr = dk.powf(p.eta);
    let masses = family_masses(f, heavy, d);
    let mut bad: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in masses.iter().enumerate() {
        for (j, &mass) in row.iter().enumerate() {
            if mass > thr {
                bad.push((i, j, mass));
            }
        }
    }
    let mut bad_set: Vec<Bits> = (0..f.n_ang).map(|_| Bits::new(f.n_off)).collect();
    for &(i, j, _) in &bad {
        bad_set[i].set(j);
    }
    let mut order = bad.clone();
    order.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    // Greedy maximal family with pairwise overlap mass below δ^{2η}/2.
    let overlap_cap = dk.powf(2.0 * p.eta) / 2.0;
    let overlap = |a: &[bool], b: &[bool]| -> f64 { heavy.iter().zip(a.iter().zip(b)).filter(|(_, (x, y))| **x && **y).map(|(c, _)| c.1).sum() };
    let mut chosen: Vec<(usize, usize, Vec<bool>)> = Vec::new();
    for &(i, j, _) in &order {
        let mem = tube_members(f, i, j, heavy, d);
        if chosen.iter().all(|c| overlap(&c.2, &mem) < overlap_cap) {
            chosen.push((i, j, mem));
        }
    }
    // Representatives of each bad tube.
    let reps: Vec<Vec<usize>> = order
        .par_iter()
        .map(|&(i, j, _)| {
            let mem = tube_members(f, i, j, heavy, d);
            chosen.iter().enumerate().filter(|(_, c)| (c.0 == i && c.1 == j) || overlap(&c.2, &mem) >= overlap_cap).map(|(k, _)| k).collect()
        })
        .collect();
    let mut rep_of = std::collections::HashMap::new();
    for (k, &(i, j, _)) in order.iter().enumerate() {
        rep_of.insert((i, j), k);
    }

    let sep = dk.powf(p.rho / 2.0);
    let light_centers: Vec<(f64, f64)> = light.iter().map(|c| cell_center(c.0, d)).collect();
    let heavy_centers: Vec<(f64, f64)> = heavy.iter().map(|c| cell_center(c.0, d)).collect();
    // Association and BadBad per light point.
    let assoc: Vec<(Vec<usize>, bool)> = light_centers
        .par_iter()
        .map(|&y| {
            let mut set: Vec<usize> = Vec::new();
            for i in 0..f.n_ang {
                let n = f.normal(i);
                let py = n.0 * y.0 + n.1 * y.1;
                let (a, b) = f.offsets_meeting(py, py);
                for j in a..b {
                    if bad_set[i].get(j) {
                        set.extend(&reps[rep_of[&(i, j)]]);
                    }
                }
            }
            set.sort_unstable();
            set.dedup();
            let mut bb = false;
            'outer: for (u, &a) in set.iter().enumerate() {
                for &b in &set[u + 1..] {
                    if line_angle_gap(f.theta(chosen[a].0), f.theta(chosen[b].0)) > sep {
                        bb = true;
                        break 'outer;
                    }
                }
            }
            (set, bb)
        })
        .collect();

    // Removal per (heavy x, light y).
    let removed: Vec<Bits> = heavy_centers
        .par_iter()
        .map(|&x| {
            let mut row = Bits::new(light.len());
            for (jy, &y) in light_centers.iter().enumerate() {
                let (set, bb) = &assoc[jy];
                if *bb {
                    row.set(jy);
                    continue;
                }
                let near_mbad = set.iter().any(|&k| {
                    let n = f.normal(chosen[k].0);
                    (n.0 * x.0 + n.1 * x.1 - f.offset(chosen[k].1)).abs() < sep
                });
                if near_mbad || shares_bad_tube(f, &bad_set, x, y) {
                    row.set(jy);
                }
            }
            row
        })
        .collect();
    let badbad = assoc.iter().filter(|a| a.1).count();
    (SideReport { bad: bad.len(), mbad: chosen.len(), badbad }, removed)
}

/// Whether some bad family tube contains both points.
fn shares_bad_tube(f: &Family, bad: &[Bits], x: (f64, f64), y: (f64, f64)) -> bool {
    let dist = (x.0 - y.0).hypot(x.1 - y.1);
    let th = (y.1 - x.1).atan2(y.0 - x.0).rem_euclid(PI);
    let span = if dist <= 2.0 * f.r { PI } else { (2.0 * f.r / dist).asin() };
    let steps = (span / (PI * f.pitch)).ceil() as i64 + 1;
    let centre = (th / (PI * f.pitch)).round() as i64;
    let n = f.n_ang as i64;
    let count = (2 * steps + 1).min(n);
    for s in 0..count {
        let i = (centre - steps.min(n / 2) + s).rem_euclid(n) as usize;
        let nv = f.normal(i);
        let (px, py) = (nv.0 * x.0 + nv.1 * x.1, nv.0 * y.0 + nv.1 * y.1);
        let (a, b) = f.offsets_meeting(px.max(py), px.min(py));
        for j in a..b {
            if bad[i].get(j) {
                return true;
            }
        }
    }
    false
}

/// Tube condition refinement of `μ × ν`.
///
/// At every ladder scale, tubes of a fixed line family whose `μ`-mass exceeds
/// `δ_k^η` are bad. A greedy maximal family of bad tubes with small pairwise
/// overlap gives the associated tubes of each point of `supp ν`; points with
/// two well separated associated tubes are removed, and for the others every
/// `x` near an associated tube or sharing a bad tube with `y` is removed.
/// The same runs with the roles of `μ` and `ν` exchanged. The certificate
/// re-checks every retained pair at every scale.
pub fn tube_condition_refine(mu: &DiscreteMeasure2D, nu: &DiscreteMeasure2D, p: &TubeConditionParams) -> Result<(GoodPairMask, TubeCertificate)> {
    let dom = mu.domain();
    if dom != nu.domain() {
        return Err(Error::ResolutionMismatch("μ and ν live on different domains".into()));
    }
    p.validate(mu.s, nu.s)?;
    let d = dom.delta();
    let mc = mu.cells();
    let nc = nu.cells();
    for &(a, _) in &mc {
        for &(b, _) in &nc {
            let gx = ((a.0 - b.0).abs() - 1).max(0) as f64 * d;
            let gy = ((a.1 - b.1).abs() - 1).max(0) as f64 * d;
            if gx.hypot(gy) < 0.25 {
                return Err(Error::Domain("supports of μ and ν closer than 1/4".into()));
            }
        }
    }
    let ladder = p.ladder()?;
    if let Some(&e) = ladder.iter().find(|&&e| e > dom.m) {
        return Err(Error::Parameter(format!("ladder scale 2^-{e} finer than δ = 2^-{}", dom.m)));
    }
    let (nx, ny) = (mc.len(), nc.len());
    let mut keep = Bits::full(nx * ny);
    let mut reports = Vec::new();
    let mut mbad_ok = true;
    for &e in &ladder {
        let f = Family::new(&dom, e, 2.0);
        let bound = 2.0 * 2f64.powf(p.eta * e as f64);
        let (mu_side, rem_mu) = refine_side(&f, e, p, &mc, &nc, d);
        let (nu_side, rem_nu) = refine_side(&f, e, p, &nc, &mc, d);
        mbad_ok &= mu_side.mbad as f64 <= bound && nu_side.mbad as f64 <= bound;
        let before = keep.count_ones();
        for i in 0..nx {
            for j in 0..ny {
                if rem_mu[i].get(j) || rem_nu[j].get(i) {
                    keep.clear(i * ny + j);
                }
            }
        }
        reports.push(ScaleReport {
            exp: e,
            family: f.n_ang * f.n_off,
            mbad_bound: bound,
            mu_side,
            nu_side,
            removed_pairs: before - keep.count_ones(),
        });
    }
    let mut mask = GoodPairMask { m: dom.m, xs: mc.iter().map(|c| c.0).collect(), ys: nc.iter().map(|c| c.0).collect(), bits: keep, retained_mass: 0.0 };
    mask.retained_mass = mask.recompute_mass(mu, nu);

    let (violations, max_mu_ratio, max_nu_ratio) = verify_tube_condition(mu, nu, &mask, &ladder, p.eta);
    let ce = p.coarse_exp();
    let cf = Family::new(&dom, ce, 1.0);
    let coarse_sup_mass = family_masses(&cf, &mc, d).iter().flatten().cloned().fold(0.0, f64::max);
    let cert = TubeCertificate {
        scales: reports,
        coarse_exp: ce,
        coarse_sup_mass,
        m0_ok: coarse_sup_mass <= p.m0,
        mbad_ok,
        violations,
        max_mu_ratio,
        max_nu_ratio,
    };
    Ok((mask, cert))
}

/// Exhaustive check: for every retained pair and scale, both tube masses of
/// `T(l_{x,y}, δ_k)` are at most `δ_k^η`. Returns the violation count and the
/// largest `mass / δ_k^η` seen for each measure.
pub fn verify_tube_condition(mu: &DiscreteMeasure2D, nu: &DiscreteMeasure2D, mask: &GoodPairMask, exps: &[u32], eta: f64) -> (usize, f64, f64) {
    let d = mu.domain().delta();
    let pairs: Vec<(usize, usize)> = (0..mask.xs.len()).flat_map(|i| (0..mask.ys.len()).map(move |j| (i, j))).filter(|&(i, j)| mask.contains(i, j)).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (cell_center(mask.xs[i], d), cell_center(mask.ys[j], d));
            let line = Line::from_f64(y.1 - x.1, x.0 - y.0, (y.0 - x.0) * x.1 - (y.1 - x.1) * x.0).expect("distinct centres");
            let mut v = 0usize;
            let (mut rm, mut rn) = (0.0f64, 0.0f64);
            for &e in exps {
                let dk = 2f64.powi(-(e as i32));
                let t = Tube { line: line.clone(), radius: dk };
                let cap = dk.powf(eta);
                let (a, b) = (tube_mass(mu, &t), tube_mass(nu, &t));
                v += (a > cap) as usize + (b > cap) as usize;
                rm = rm.max(a / cap);
                rn = rn.max(b / cap);
            }
            (v, rm, rn)
        })
        .reduce(|| (0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1), a.2.max(b.2)))
}

/// Fitted covering exponent of `radial_project(y, E)` at `r = 2^{-j}`.
pub fn pinned_exponent(y: (f64, f64), e: &GridSet2D, exps: &[i32]) -> Result<ExponentReport> {
    let d = e.delta();
    for c in e.cells() {
        if rect_distance(y, c, d) < 0.25 {
            return Err(Error::Domain("pin closer than 1/4 to E".into()));
        }
    }
    covering_exponent(&radial_project(y, e)?, exps)
}

/// `μ×ν` mass of retained pairs whose direction `y − x` (cell centres) lies in `x_set`.
pub fn direction_preimage_mass(mu: &DiscreteMeasure2D, nu: &DiscreteMeasure2D, mask: Option<&GoodPairMask>, x_set: &GridSet1D) -> f64 {
    let d = mu.domain().delta();
    let n = (1i64 << x_set.m()) as f64;
    let mc = mu.cells();
    let nc = nu.cells();
    let mut total = 0.0;
    for (i, &(a, wa)) in mc.iter().enumerate() {
        let pa = cell_center(a, d);
        let mut row = 0.0;
        for (j, &(b, wb)) in nc.iter().enumerate() {
            if mask.is_some_and(|m| !m.contains(i, j)) {
                continue;
            }
            let pb = cell_center(b, d);
            let u = (pb.1 - pa.1).atan2(pb.0 - pa.0).rem_euclid(2.0 * PI) / (2.0 * PI);
            let k = ((u * n).floor() as i64).min(n as i64 - 1);
            if x_set.contains(k) {
                row += wb;
            }
        }
        total += wa * row;
    }
    total
}
