//! Hyperdyadic scales, Katz–Tao refinement and pigeonholing.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSet1D, GridSet2D, NonConcentrationSpec};

/// Exponents `e_k = round((1+ε)^k)` for `k0 ≤ k ≤ kmax`, deduplicated, so
/// that `δ_k = 2^{-e_k}` is strictly decreasing.
pub fn hyperdyadic_ladder(eps: f64, k0: u32, kmax: u32) -> Result<Vec<u32>> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Parameter(format!("eps = {eps} not in (0, 1]")));
    }
    if k0 > kmax {
        return Err(Error::Parameter(format!("empty range k0 = {k0} > kmax = {kmax}")));
    }
    let mut out: Vec<u32> = Vec::new();
    for k in k0..=kmax {
        let e = (1.0 + eps).powi(k as i32).round();
        if e > 62.0 {
            return Err(Error::Parameter(format!("scale 2^-{e} below representable range")));
        }
        let e = e as u32;
        if out.last() != Some(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub sigma: f64,
    pub k: f64,
    pub eps: f64,
    /// Heavy scales range over `δ < δ′ ≤ 2^{-upper_exp}`.
    pub upper_exp: u32,
}

impl RefineParams {
    pub fn new(sigma: f64, k: f64, eps: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) || !(k >= 1.0) || !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Parameter(format!("need σ ∈ (0,1), K ≥ 1, ε ∈ (0,1); got σ={sigma}, K={k}, ε={eps}")));
        }
        Ok(RefineParams { sigma, k, eps, upper_exp: 0 })
    }

    pub fn with_upper_exp(mut self, e: u32) -> Self {
        self.upper_exp = e;
        self
    }

    /// `δ^{-Kε}` at resolution `m`.
    pub fn amplification(&self, m: u32) -> f64 {
        2f64.powf(self.k * self.eps * m as f64)
    }

    /// Heavy threshold in cells for windows of `r` cells.
    pub fn threshold(&self, m: u32, r: u64) -> f64 {
        self.amplification(m) * (r as f64).powf(self.sigma)
    }
}

/// `A ⊂ A* ∪ ⋃ A_{δ′}`, with heavy parts keyed by `e` where `δ′ = 2^{-e}`.
#[derive(Clone, Debug, PartialEq)]
pub struct KtDecomposition {
    pub a_star: GridSet1D,
    pub heavy_parts: BTreeMap<u32, GridSet1D>,
}

impl KtDecomposition {
    /// `A ⊆ A* ∪ ⋃ heavy`, checked cellwise.
    pub fn covers(&self, a: &GridSet1D) -> bool {
        a.cells().all(|c| self.a_star.contains(c) || self.heavy_parts.values().any(|h| h.contains(c)))
    }
}

/// Cells of `a` lying in some window `[w, w+r)` that holds at least `thr` cells of `a`.
fn heavy_cells(a: &GridSet1D, r: i64, thr: f64) -> GridSet1D {
    let (lo, hi) = (a.lo(), a.hi());
    let n = (hi - lo) as usize;
    let mut pre = vec![0u32; n + 1];
    for (k, c) in (lo..hi).enumerate() {
        pre[k + 1] = pre[k] + a.contains(c) as u32;
    }
    let count = |w: i64| {
        let s = (w - lo).clamp(0, n as i64) as usize;
        let e = (w + r - lo).clamp(0, n as i64) as usize;
        pre[e] - pre[s]
    };
    let mut cover = vec![0i32; n + 1];
    for w in (lo - r + 1)..hi {
        if count(w) as f64 >= thr {
            let s = (w - lo).max(0) as usize;
            let e = (w + r - lo).min(n as i64) as usize;
            cover[s] += 1;
            cover[e] -= 1;
        }
    }
    let mut out = GridSet1D::empty(a.m(), lo, hi).expect("domain of a");
    let mut run = 0;
    for (k, c) in (lo..hi).enumerate() {
        run += cover[k];
        if run > 0 && a.contains(c) {
            out.insert(c);
        }
    }
    out
}

/// Katz–Tao refinement of `A`.
///
/// For each dyadic `δ′ = rδ` with `2 ≤ r` and `δ′ ≤ 2^{-upper_exp}`, the heavy part
/// collects the cells of `A` inside windows of `r` cells holding at least
/// `δ^{-Kε} r^σ` cells of `A`. The rest, inflated by one cell, is `A*`. Because
/// inflation can merge nearby light windows, any window where `A*` still
/// exceeds `2δ^{-Kε} r^σ` has its cells of `A` moved into the heavy part of that
/// scale until `A*` passes.
pub fn kt_refine(a: &GridSet1D, p: &RefineParams) -> Result<KtDecomposition> {
    if a.is_empty() {
        return Err(Error::Empty("kt_refine of empty set".into()));
    }
    let m = a.m();
    let delta = a.delta();
    let cap = 4.0 * delta.powf(1.0 - p.sigma);
    if a.measure() > cap {
        return Err(Error::Hypothesis(format!("measure(A) = {} > 4·δ^(1−σ) = {cap}", a.measure())));
    }
    if p.upper_exp >= m {
        return Err(Error::Parameter(format!("upper scale 2^-{} not above δ = 2^-{m}", p.upper_exp)));
    }
    let exps: Vec<u32> = (p.upper_exp..m).collect();
    let mut heavy: BTreeMap<u32, GridSet1D> = exps
        .par_iter()
        .map(|&e| (e, heavy_cells(a, 1i64 << (m - e), p.threshold(m, 1 << (m - e)))))
        .collect();

    let spec = NonConcentrationSpec::new(p.sigma, 2.0 * p.amplification(m))?;
    let mut light = a.clone();
    for h in heavy.values() {
        light = light.difference(h)?;
    }
    loop {
        let a_star = light.inflate(1);
        match a_star.nonconcentration_check(&spec) {
            Ok(()) => return Ok(KtDecomposition { a_star, heavy_parts: heavy }),
            Err(w) => {
                let r = w.r_cells as i64;
                let e = m - (r.max(2) as u64).trailing_zeros().min(m - p.upper_exp);
                let part = heavy.get_mut(&e).expect("scale in range");
                let mut moved = false;
                for c in (w.start - 1)..=(w.start + r) {
                    if light.contains(c) {
                        light.remove(c);
                        part.insert(c);
                        moved = true;
                    }
                }
                assert!(moved, "failing window must contain light cells");
            }
        }
    }
}

/// Sets with a measure and pairwise intersections.
pub trait Measured: Sized {
    fn measure(&self) -> f64;
    fn intersect_measure(&self, other: &Self) -> Result<f64>;
    fn subset_of(&self, other: &Self) -> bool;
}

impl Measured for GridSet1D {
    fn measure(&self) -> f64 {
        GridSet1D::measure(self)
    }
    fn intersect_measure(&self, other: &Self) -> Result<f64> {
        Ok(self.intersect(other)?.measure())
    }
    fn subset_of(&self, other: &Self) -> bool {
        self.is_subset_of(other)
    }
}

impl Measured for GridSet2D {
    fn measure(&self) -> f64 {
        GridSet2D::measure(self)
    }
    fn intersect_measure(&self, other: &Self) -> Result<f64> {
        Ok(self.intersection_count(other)? as f64 * self.delta().powi(2))
    }
    fn subset_of(&self, other: &Self) -> bool {
        self.is_subset_of(other)
    }
}

/// First pair `i < j` (1-based, lexicographic) with `|Xᵢ ∩ Xⱼ| ≥ (λ²/2)|X|`.
pub fn pigeonhole_pair<S: Measured>(x: &S, parts: &[S], lambda: f64) -> Result<(usize, usize, f64)> {
    let mx = x.measure();
    if parts.len() as f64 * lambda <= 2.0 {
        return Err(Error::Hypothesis(format!("M·λ = {} ≤ 2", parts.len() as f64 * lambda)));
    }
    for (i, p) in parts.iter().enumerate() {
        if !p.subset_of(x) {
            return Err(Error::Domain(format!("part {} is not a subset of X", i + 1)));
        }
        if p.measure() < lambda * mx {
            return Err(Error::Hypothesis(format!("part {} has measure {} < λ|X| = {}", i + 1, p.measure(), lambda * mx)));
        }
    }
    let need = lambda * lambda / 2.0 * mx;
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            let v = parts[i].intersect_measure(&parts[j])?;
            if v >= need {
                return Ok((i + 1, j + 1, v));
            }
        }
    }
    Err(Error::Hypothesis("no pair reaches λ²|X|/2".into()))
}
