//! Lines, δ-tubes, pencils and projective maps.
//!
//! Tubes are two-sided strips. A cell belongs to a rasterized tube iff the
//! distance from the closed cell rectangle to the line is strictly below the
//! radius, which is the same as the closed strip meeting the half-open cell
//! away from its far edges.

use std::fmt;

use num::bigint::BigInt;
use num::{BigRational, One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Domain2D, GridSet1D, GridSet2D};

pub type Big = BigRational;

pub fn big(n: i64, d: i64) -> Big {
    Big::new(BigInt::from(n), BigInt::from(d))
}

fn to_f(x: &Big) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Homogeneous point `[x : y : w]`; `w = 0` is a point at infinity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjPoint {
    pub x: Big,
    pub y: Big,
    pub w: Big,
}

impl ProjPoint {
    pub fn new(x: Big, y: Big, w: Big) -> Result<Self> {
        if x.is_zero() && y.is_zero() && w.is_zero() {
            return Err(Error::Degenerate("projective point with all coordinates zero".into()));
        }
        Ok(ProjPoint { x, y, w })
    }

    pub fn finite(x: Big, y: Big) -> Self {
        ProjPoint { x, y, w: Big::one() }
    }

    pub fn int(x: i64, y: i64) -> Self {
        Self::finite(big(x, 1), big(y, 1))
    }

    pub fn infinite(dx: i64, dy: i64) -> Result<Self> {
        Self::new(big(dx, 1), big(dy, 1), Big::zero())
    }

    pub fn is_infinite(&self) -> bool {
        self.w.is_zero()
    }

    /// Affine coordinates, if finite.
    pub fn affine(&self) -> Option<(Big, Big)> {
        if self.is_infinite() {
            None
        } else {
            Some((&self.x / &self.w, &self.y / &self.w))
        }
    }

    pub fn affine_f64(&self) -> Option<(f64, f64)> {
        self.affine().map(|(x, y)| (to_f(&x), to_f(&y)))
    }

    /// Equality up to nonzero scaling.
    pub fn same_as(&self, other: &ProjPoint) -> bool {
        let c = [&self.x, &self.y, &self.w];
        let d = [&other.x, &other.y, &other.w];
        (0..3).all(|i| (0..3).all(|j| c[i] * d[j] == c[j] * d[i]))
    }

    fn coords(&self) -> [Big; 3] {
        [self.x.clone(), self.y.clone(), self.w.clone()]
    }
}

impl fmt::Display for ProjPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.x, self.y, self.w)
    }
}

/// Line `ax + by + c = 0` with a unit-normal floating copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub exact: [Big; 3],
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line {
    pub fn new(a: Big, b: Big, c: Big) -> Result<Self> {
        if a.is_zero() && b.is_zero() {
            return Err(Error::Degenerate("line with a = b = 0".into()));
        }
        let (fa, fb, fc) = (to_f(&a), to_f(&b), to_f(&c));
        let n = fa.hypot(fb);
        Ok(Line { exact: [a, b, c], a: fa / n, b: fb / n, c: fc / n })
    }

    pub fn from_f64(a: f64, b: f64, c: f64) -> Result<Self> {
        let conv = |v: f64| Big::from_float(v).ok_or_else(|| Error::Parameter(format!("non-finite coefficient {v}")));
        Line::new(conv(a)?, conv(b)?, conv(c)?)
    }

    /// Line through two distinct projective points.
    pub fn through(p: &ProjPoint, q: &ProjPoint) -> Result<Self> {
        let (u, v) = (p.coords(), q.coords());
        let a = &u[1] * &v[2] - &u[2] * &v[1];
        let b = &u[2] * &v[0] - &u[0] * &v[2];
        let c = &u[0] * &v[1] - &u[1] * &v[0];
        Line::new(a, b, c)
    }

    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tube {
    pub line: Line,
    pub radius: f64,
}

impl Tube {
    pub fn new(line: Line, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter(format!("tube radius {radius} must be positive")));
        }
        Ok(Tube { line, radius })
    }

    /// Whether the closed rectangle `[x0,x1]×[y0,y1]` lies at distance `< radius`.
    pub fn meets_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
        let l = &self.line;
        let (ax0, ax1) = (l.a * x0, l.a * x1);
        let (by0, by1) = (l.b * y0, l.b * y1);
        let lo = ax0.min(ax1) + by0.min(by1) + l.c;
        let hi = ax0.max(ax1) + by0.max(by1) + l.c;
        lo < self.radius && hi > -self.radius
    }
}

/// Tubes through a common tip, one per direction cell.
///
/// A finite tip reads the direction cell `t` as the line angle `π(t+½)δ'`.
/// An infinite tip `[dx:dy:0]` reads it as an offset: the `y` where the line
/// crosses `x = δ'/2` when `|dx| ≥ |dy|`, otherwise the `x` where it crosses
/// `y = δ'/2`, with value `(t+½)δ'`. Here `δ'` is the direction grid's own step.
#[derive(Clone, Debug, PartialEq)]
pub struct Pencil {
    pub tip: ProjPoint,
    pub directions: GridSet1D,
    pub radius: f64,
}

impl Pencil {
    pub fn new(tip: ProjPoint, directions: GridSet1D, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Parameter(format!("pencil radius {radius} must be positive")));
        }
        Ok(Pencil { tip, directions, radius })
    }

    fn dir_delta(&self) -> f64 {
        self.directions.delta()
    }

    fn horizontalish(&self) -> bool {
        self.tip.x.abs() >= self.tip.y.abs()
    }

    /// Line of the pencil at continuous parameter `v`.
    pub fn line_at(&self, v: f64) -> Result<Line> {
        let d = self.dir_delta();
        match self.tip.affine_f64() {
            Some((px, py)) => {
                let th = std::f64::consts::PI * v;
                let (s, c) = th.sin_cos();
                Line::from_f64(-s, c, s * px - c * py)
            }
            None => {
                let (dx, dy) = (to_f(&self.tip.x), to_f(&self.tip.y));
                // Direction (dx, dy), normal (-dy, dx).
                let (px, py) = if self.horizontalish() { (d / 2.0, v) } else { (v, d / 2.0) };
                Line::from_f64(-dy, dx, dy * px - dx * py)
            }
        }
    }

    /// Parameter of a line through the tip, inverse of [`Pencil::line_at`].
    pub fn param_of(&self, l: &Line) -> f64 {
        let d = self.dir_delta();
        if self.tip.is_infinite() {
            if self.horizontalish() {
                -(l.c + l.a * d / 2.0) / l.b
            } else {
                -(l.c + l.b * d / 2.0) / l.a
            }
        } else {
            (-l.a).atan2(l.b).rem_euclid(std::f64::consts::PI) / std::f64::consts::PI
        }
    }

    pub fn tube(&self, cell: i64) -> Result<Tube> {
        let v = (cell as f64 + 0.5) * self.dir_delta();
        Tube::new(self.line_at(v)?, self.radius)
    }

    pub fn tubes(&self) -> Result<Vec<Tube>> {
        self.directions.cells().map(|t| self.tube(t)).collect()
    }
}

/// Cells of `dom` within distance `< radius` of the tube's line.
pub fn rasterize_tube(t: &Tube, dom: &Domain2D) -> GridSet2D {
    let mut out = GridSet2D::empty(*dom);
    fill_tube(&mut out, t);
    out
}

fn fill_tube(out: &mut GridSet2D, t: &Tube) {
    let dom = out.domain();
    let d = dom.delta();
    let l = &t.line;
    for y in dom.y0..dom.y1 {
        let (y0, y1) = (y as f64 * d, (y + 1) as f64 * d);
        let (cand_lo, cand_hi) = if l.a.abs() < 1e-300 {
            (dom.x0, dom.x1 - 1)
        } else {
            // a·x ∈ (−r − c − max(b y), r − c − min(b y)).
            let (b0, b1) = (l.b * y0, l.b * y1);
            let lo = (-t.radius - l.c - b0.max(b1)) / l.a;
            let hi = (t.radius - l.c - b0.min(b1)) / l.a;
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            if !lo.is_finite() || !hi.is_finite() {
                (dom.x0, dom.x1 - 1)
            } else {
                let lo = ((lo / d).floor() as i64 - 1).max(dom.x0);
                let hi = ((hi / d).floor() as i64 + 1).min(dom.x1 - 1);
                (lo, hi)
            }
        };
        let mut first = None;
        let mut last = None;
        for x in cand_lo..=cand_hi {
            if t.meets_rect(x as f64 * d, (x + 1) as f64 * d, y0, y1) {
                first.get_or_insert(x);
                last = Some(x);
            }
        }
        if let (Some(a), Some(b)) = (first, last) {
            out.insert_row_span(y, a, b);
        }
    }
}

/// Union of the pencil's tubes over `dom`.
pub fn rasterize_pencil(p: &Pencil, dom: &Domain2D) -> Result<GridSet2D> {
    if let Some((x, y)) = p.tip.affine() {
        let d = big(1, 1 << dom.m);
        let inside = |v: &Big, lo: i64, hi: i64| *v > big(lo, 1) * &d && *v < big(hi, 1) * &d;
        if inside(&x, dom.x0, dom.x1) && inside(&y, dom.y0, dom.y1) {
            return Err(Error::Unsupported("pencil tip strictly inside the domain".into()));
        }
    }
    let tubes = p.tubes()?;
    let out = tubes
        .par_iter()
        .fold(
            || GridSet2D::empty(*dom),
            |mut acc, t| {
                fill_tube(&mut acc, t);
                acc
            },
        )
        .reduce(
            || GridSet2D::empty(*dom),
            |mut a, b| {
                a.union_in_place(&b);
                a
            },
        );
    Ok(out)
}

/// `δ² · #(⋂ sets)`.
pub fn intersection_measure(sets: &[GridSet2D]) -> Result<f64> {
    let Some(first) = sets.first() else {
        return Err(Error::Empty("intersection of no sets".into()));
    };
    let mut acc = first.clone();
    for s in &sets[1..] {
        acc = acc.intersect(s)?;
    }
    Ok(acc.measure())
}

/// Projective map given by an invertible 3×3 rational matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Homography {
    pub m: [[Big; 3]; 3],
}

fn det3(m: &[[Big; 3]; 3]) -> Big {
    &m[0][0] * (&m[1][1] * &m[2][2] - &m[1][2] * &m[2][1]) - &m[0][1] * (&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0])
        + &m[0][2] * (&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0])
}

fn inv3(m: &[[Big; 3]; 3]) -> Option<[[Big; 3]; 3]> {
    let d = det3(m);
    if d.is_zero() {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| &m[r0][c0] * &m[r1][c1] - &m[r0][c1] * &m[r1][c0];
    let adj = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    Some(adj.map(|row| row.map(|v| v / &d)))
}

fn mul3(a: &[[Big; 3]; 3], b: &[[Big; 3]; 3]) -> [[Big; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).fold(Big::zero(), |s, k| s + &a[i][k] * &b[k][j])))
}

fn columns(p: [&ProjPoint; 3]) -> [[Big; 3]; 3] {
    let c = p.map(|q| q.coords());
    std::array::from_fn(|i| std::array::from_fn(|j| c[j][i].clone()))
}

impl Homography {
    pub fn new(m: [[Big; 3]; 3]) -> Result<Self> {
        if det3(&m).is_zero() {
            return Err(Error::Degenerate("singular homography".into()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Self {
        Homography { m: std::array::from_fn(|i| std::array::from_fn(|j| if i == j { Big::one() } else { Big::zero() })) }
    }

    pub fn from_i64(m: [[i64; 3]; 3]) -> Result<Self> {
        Self::new(m.map(|r| r.map(|v| big(v, 1))))
    }

    pub fn inverse(&self) -> Self {
        Homography { m: inv3(&self.m).expect("invertible by construction") }
    }

    pub fn compose(&self, then: &Homography) -> Self {
        Homography { m: mul3(&then.m, &self.m) }
    }

    pub fn apply(&self, p: &ProjPoint) -> ProjPoint {
        let c = p.coords();
        let r: [Big; 3] = std::array::from_fn(|i| (0..3).fold(Big::zero(), |s, k| s + &self.m[i][k] * &c[k]));
        let [x, y, w] = r;
        ProjPoint { x, y, w }
    }

    /// Equality up to a nonzero scalar.
    pub fn same_as(&self, other: &Homography) -> bool {
        let a: Vec<&Big> = self.m.iter().flatten().collect();
        let b: Vec<&Big> = other.m.iter().flatten().collect();
        (0..9).all(|i| (0..9).all(|j| a[i] * b[j] == a[j] * b[i]))
    }

    fn f64_matrix(&self) -> [[f64; 3]; 3] {
        self.m.clone().map(|r| r.map(|v| to_f(&v)))
    }

    /// Image of a line: coefficients transform by `H^{-T}`.
    pub fn apply_line(&self, l: &Line) -> Result<Line> {
        let inv = self.inverse().m;
        let e: [Big; 3] = std::array::from_fn(|j| (0..3).fold(Big::zero(), |s, i| s + &inv[i][j] * &l.exact[i]));
        let [a, b, c] = e;
        Line::new(a, b, c)
    }

    fn apply_f64(m: &[[f64; 3]; 3], x: f64, y: f64) -> (f64, f64, f64) {
        let r = |i: usize| m[i][0] * x + m[i][1] * y + m[i][2];
        (r(0), r(1), r(2))
    }
}

/// Basis-scaling matrix `[λ₁p₁ λ₂p₂ λ₃p₃]` with `Σ λᵢpᵢ = p₄`.
fn projective_basis(p: [&ProjPoint; 4]) -> Result<[[Big; 3]; 3]> {
    let m = columns([p[0], p[1], p[2]]);
    let inv = inv3(&m).ok_or_else(|| Error::Degenerate("three of the points are collinear".into()))?;
    let c = p[3].coords();
    let lam: [Big; 3] = std::array::from_fn(|i| (0..3).fold(Big::zero(), |s, k| s + &inv[i][k] * &c[k]));
    if lam.iter().any(|l| l.is_zero()) {
        return Err(Error::Degenerate("three of the points are collinear".into()));
    }
    Ok(std::array::from_fn(|i| std::array::from_fn(|j| &m[i][j] * &lam[j])))
}

/// The homography sending `src[i]` to `dst[i]`, exact.
pub fn homography_from_points(src: [&ProjPoint; 4], dst: [&ProjPoint; 4]) -> Result<Homography> {
    let s = projective_basis(src)?;
    let d = projective_basis(dst)?;
    let h = Homography::new(mul3(&d, &inv3(&s).expect("basis invertible")))?;
    for (p, q) in src.iter().zip(dst.iter()) {
        debug_assert!(h.apply(p).same_as(q));
    }
    Ok(h)
}

/// Map sending `p₁ → [1:0:0]`, `p₂ → [0:1:0]`, `p₃ → (0,0)` and `p₄ → (t₀, 1)`.
pub fn normalize_tips(p: [&ProjPoint; 4]) -> Result<(Homography, Big)> {
    let m = columns([p[0], p[1], p[2]]);
    let h0 = inv3(&m).ok_or_else(|| Error::Degenerate("tips p1, p2, p3 are collinear".into()))?;
    let h0 = Homography { m: h0 };
    let q = h0.apply(p[3]);
    if q.x.is_zero() || q.y.is_zero() || q.w.is_zero() {
        return Err(Error::Degenerate("three of the tips are collinear".into()));
    }
    let s0 = &q.y / &q.w;
    let mut diag = Homography::identity();
    diag.m[1][1] = s0.recip();
    let h = h0.compose(&diag);
    let t0 = &q.x / &q.w;
    Ok((h, t0))
}

/// Cell-image diameters of a map over a domain, plus cells clipped by the target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistortionReport {
    pub min_diam: f64,
    pub max_diam: f64,
    pub ratio: f64,
    pub clipped: usize,
}

fn check_finite_image(h: &Homography, dom: &Domain2D) -> Result<[[f64; 3]; 3]> {
    let mf = h.f64_matrix();
    let (x0, x1, y0, y1) = dom.bounds();
    let ws: Vec<f64> = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].iter().map(|&(x, y)| Homography::apply_f64(&mf, x, y).2).collect();
    if !(ws.iter().all(|&w| w > 0.0) || ws.iter().all(|&w| w < 0.0)) {
        return Err(Error::Domain("image of the domain meets the line at infinity".into()));
    }
    Ok(mf)
}

fn cell_image(mf: &[[f64; 3]; 3], x: i64, y: i64, d: f64) -> [(f64, f64); 4] {
    let corner = |cx: i64, cy: i64| {
        let (u, v, w) = Homography::apply_f64(mf, cx as f64 * d, cy as f64 * d);
        (u / w, v / w)
    };
    [corner(x, y), corner(x + 1, y), corner(x + 1, y + 1), corner(x, y + 1)]
}

fn diameter(q: &[(f64, f64); 4]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            best = best.max((q[i].0 - q[j].0).hypot(q[i].1 - q[j].1));
        }
    }
    best
}

fn distortion(mf: &[[f64; 3]; 3], dom: &Domain2D, cells: impl Iterator<Item = (i64, i64)>) -> DistortionReport {
    let d = dom.delta();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (x, y) in cells {
        let dm = diameter(&cell_image(mf, x, y, d));
        lo = lo.min(dm);
        hi = hi.max(dm);
    }
    let ratio = if lo.is_finite() && lo > 0.0 { hi / lo } else { 1.0 };
    DistortionReport { min_diam: lo, max_diam: hi, ratio, clipped: 0 }
}

/// Closed convex quadrilateral against closed rectangle, by separating axes.
fn quad_meets_rect(q: &[(f64, f64); 4], x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    let eps = 1e-12;
    let (qx0, qx1) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (qy0, qy1) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if qx1 < x0 - eps || qx0 > x1 + eps || qy1 < y0 - eps || qy0 > y1 + eps {
        return false;
    }
    let rect = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
    for i in 0..4 {
        let (a, b) = (q[i], q[(i + 1) % 4]);
        let n = (b.1 - a.1, a.0 - b.0);
        let proj = |p: &(f64, f64)| n.0 * p.0 + n.1 * p.1;
        let (ql, qh) = q.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let (rl, rh) = rect.iter().map(proj).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let tol = eps * (n.0.abs() + n.1.abs() + 1.0);
        if qh < rl - tol || rh < ql - tol {
            return false;
        }
    }
    true
}

/// Forward cover of a grid set's image; cells landing outside `target` are counted as clipped.
pub fn apply_homography_grid(h: &Homography, g: &GridSet2D, target: &Domain2D) -> Result<(GridSet2D, DistortionReport)> {
    let src = g.domain();
    let mf = check_finite_image(h, &src)?;
    let d = src.delta();
    let td = target.delta();
    let mut out = GridSet2D::empty(*target);
    let mut clipped = 0usize;
    for (x, y) in g.cells() {
        let q = cell_image(&mf, x, y, d);
        let bx0 = q.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let bx1 = q.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let by0 = q.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let by1 = q.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let (cx0, cx1) = ((bx0 / td).floor() as i64 - 1, (bx1 / td).floor() as i64 + 1);
        let (cy0, cy1) = ((by0 / td).floor() as i64 - 1, (by1 / td).floor() as i64 + 1);
        let mut lost = false;
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                if quad_meets_rect(&q, cx as f64 * td, (cx + 1) as f64 * td, cy as f64 * td, (cy + 1) as f64 * td) {
                    if out.in_domain(cx, cy) {
                        out.insert(cx, cy);
                    } else {
                        lost = true;
                    }
                }
            }
        }
        clipped += lost as usize;
    }
    let mut rep = distortion(&mf, &src, g.cells());
    rep.clipped = clipped;
    Ok((out, rep))
}

/// Image pencil. The tip maps exactly; each direction cell is replaced by the
/// cells covering the image of its parameter interval, so the result is a
/// superset of the exact image. Distortion is measured over `dom` when given.
pub fn apply_homography_pencil(h: &Homography, p: &Pencil, dom: Option<&Domain2D>) -> Result<(Pencil, Option<DistortionReport>)> {
    let mf = dom.map(|d| check_finite_image(h, d)).transpose()?;
    let tip = h.apply(&p.tip);
    let m = p.directions.m();
    let dd = p.directions.delta();
    let probe = Pencil { tip: tip.clone(), directions: GridSet1D::unit(m), radius: p.radius };
    let image_param = |v: f64| -> Result<f64> { Ok(probe.param_of(&h.apply_line(&p.line_at(v)?)?)) };
    // Shrink by a rounding tolerance so exact cell boundaries do not spill.
    let pad = 1e-9;
    let mut spans: Vec<(i64, i64)> = Vec::new();
    for t in p.directions.cells() {
        let v0 = t as f64 * dd;
        let (w0, wm, w1) = (image_param(v0)?, image_param(v0 + dd / 2.0)?, image_param(v0 + dd)?);
        let (lo, hi) = if tip.is_infinite() {
            if !((w0 <= wm && wm <= w1) || (w1 <= wm && wm <= w0)) {
                return Err(Error::Domain("direction cell maps across the line at infinity".into()));
            }
            (w0.min(w1), w0.max(w1))
        } else {
            let arc = (w1 - w0).rem_euclid(1.0);
            if (wm - w0).rem_euclid(1.0) <= arc {
                (w0, w0 + arc)
            } else {
                (w1, w1 + (1.0 - arc))
            }
        };
        let (lo, hi) = if hi - lo > 4.0 * pad { (lo + pad, hi - pad) } else { (lo, hi) };
        spans.push(((lo / dd).floor() as i64, (hi / dd).ceil() as i64 - 1));
    }
    let directions = if tip.is_infinite() {
        let lo = spans.iter().map(|s| s.0).min().unwrap_or(0);
        let hi = spans.iter().map(|s| s.1 + 1).max().unwrap_or(1);
        let mut g = GridSet1D::empty(m, lo, hi)?;
        for (a, b) in spans {
            g.insert_range(a, b);
        }
        g
    } else {
        let n = 1i64 << m;
        let mut g = GridSet1D::empty(m, 0, n)?;
        for (a, b) in spans {
            if b - a + 1 >= n {
                g.insert_range(0, n - 1);
                continue;
            }
            for k in a..=b {
                g.insert(k.rem_euclid(n));
            }
        }
        g
    };
    let rep = match (mf, dom) {
        (Some(mf), Some(dom)) => Some(distortion(&mf, dom, (dom.y0..dom.y1).flat_map(|y| (dom.x0..dom.x1).map(move |x| (x, y))))),
        _ => None,
    };
    Ok((Pencil { tip, directions, radius: p.radius }, rep))
}

/// Outcome of the tip-separation hypotheses.
#[derive(Clone, Debug, PartialEq)]
pub enum Admissibility {
    Pass,
    Fail(String),
}

fn point_rect_distance(x: f64, y: f64, r: (f64, f64, f64, f64)) -> f64 {
    let dx = (r.0 - x).max(0.0).max(x - r.1);
    let dy = (r.2 - y).max(0.0).max(y - r.3);
    dx.hypot(dy)
}

fn segment_line_distance_to_square(l: &Line, r: (f64, f64, f64, f64)) -> f64 {
    let v = [(r.0, r.2), (r.1, r.2), (r.0, r.3), (r.1, r.3)].map(|(x, y)| l.signed_distance(x, y));
    let (lo, hi) = (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

/// Checks the separation hypotheses for four finite tips against `[0,1]²`.
///
/// Pairwise and tip-to-square distances must lie in `[c, 1/c]`, lines through
/// two tips must come within `1/c` of the square, and the four tips must not
/// fit in a tube of radius `c`.
pub fn tips_admissible(p: [&ProjPoint; 4], c: f64) -> Admissibility {
    let mut pts = Vec::with_capacity(4);
    for (i, q) in p.iter().enumerate() {
        match q.affine_f64() {
            Some(v) => pts.push(v),
            None => return Admissibility::Fail(format!("tip {} is at infinity", i + 1)),
        }
    }
    let sq = (0.0, 1.0, 0.0, 1.0);
    let within = |v: f64| v >= c && v <= 1.0 / c;
    for i in 0..4 {
        let dd = point_rect_distance(pts[i].0, pts[i].1, sq);
        if !within(dd) {
            return Admissibility::Fail(format!("dist(p{}, [0,1]^2) = {dd:.4} not in [c, 1/c]", i + 1));
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            let dd = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
            if !within(dd) {
                return Admissibility::Fail(format!("dist(p{}, p{}) = {dd:.4} not in [c, 1/c]", i + 1, j + 1));
            }
        }
    }
    let mut width = f64::INFINITY;
    for i in 0..4 {
        for j in i + 1..4 {
            let Ok(l) = Line::through(p[i], p[j]) else {
                return Admissibility::Fail(format!("tips p{} and p{} coincide", i + 1, j + 1));
            };
            let dd = segment_line_distance_to_square(&l, sq);
            if dd > 1.0 / c {
                return Admissibility::Fail(format!("dist(l(p{}, p{}), [0,1]^2) = {dd:.4} > 1/c", i + 1, j + 1));
            }
            let s: Vec<f64> = pts.iter().map(|&(x, y)| l.signed_distance(x, y)).collect();
            let span = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - s.iter().cloned().fold(f64::INFINITY, f64::min);
            width = width.min(span);
        }
    }
    if width <= 2.0 * c {
        return Admissibility::Fail(format!("tips fit in a tube of radius c (width {width:.4})"));
    }
    Admissibility::Pass
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-cell distance oracle: closed-rectangle distance via nearest point.
    fn oracle(l: &Line, r: f64, dom: &Domain2D) -> Vec<(i64, i64)> {
        let d = dom.delta();
        let mut v = Vec::new();
        for y in dom.y0..dom.y1 {
            for x in dom.x0..dom.x1 {
                let (x0, x1, y0, y1) = (x as f64 * d, (x + 1) as f64 * d, y as f64 * d, (y + 1) as f64 * d);
                let vals = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].map(|(a, b)| l.signed_distance(a, b));
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let dist = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                if dist < r {
                    v.push((x, y));
                }
            }
        }
        v
    }

    fn hline(y: Big) -> Line {
        Line::new(Big::zero(), Big::one(), -y).unwrap()
    }

    #[test]
    fn horizontal_tube_two_rows() {
        let dom = Domain2D::unit(4);
        let t = Tube::new(hline(big(1, 2)), 1.0 / 16.0).unwrap();
        let g = rasterize_tube(&t, &dom);
        assert_eq!(g.count(), 32);
        assert!(g.cells().all(|(_, y)| y == 7 || y == 8));
    }

    #[test]
    fn boundary_tube_one_column() {
        let dom = Domain2D::unit(4);
        let l = Line::new(Big::one(), Big::zero(), Big::zero()).unwrap();
        let g = rasterize_tube(&Tube::new(l, 1.0 / 16.0).unwrap(), &dom);
        assert_eq!(g.count(), 16);
        assert!(g.cells().all(|(x, _)| x == 0));
    }

    #[test]
    fn diagonal_matches_oracle() {
        let dom = Domain2D::unit(6);
        let l = Line::new(Big::one(), -Big::one(), Big::zero()).unwrap();
        let g = rasterize_tube(&Tube::new(l.clone(), 1.0 / 64.0).unwrap(), &dom);
        assert_eq!(g.cells().collect::<Vec<_>>(), oracle(&l, 1.0 / 64.0, &dom));
    }

    #[test]
    fn pencil_examples() {
        let dom = Domain2D::unit(4);
        let dirs = GridSet1D::from_cells(4, 0, 16, [5]).unwrap();
        let p = Pencil::new(ProjPoint::infinite(1, 0).unwrap(), dirs, 1.0 / 16.0).unwrap();
        let g = rasterize_pencil(&p, &dom).unwrap();
        // Line y = 11/32 meets rows 4, 5 and 6.
        assert_eq!(g.count(), 48);
        assert_eq!(g, rasterize_tube(&p.tube(5).unwrap(), &dom));

        let p = Pencil::new(ProjPoint::int(2, 2), GridSet1D::empty(4, 0, 16).unwrap(), 1.0 / 16.0).unwrap();
        assert!(rasterize_pencil(&p, &dom).unwrap().is_empty());

        let quarter = Domain2D::square(4, 0.25, 0.75).unwrap();
        let p = Pencil::new(ProjPoint::int(0, 0), GridSet1D::full(4, 0, 8).unwrap(), 1.0 / 16.0).unwrap();
        let g = rasterize_pencil(&p, &quarter).unwrap();
        let mut want = GridSet2D::empty(quarter);
        for t in p.tubes().unwrap() {
            for (x, y) in oracle(&t.line, t.radius, &quarter) {
                want.insert(x, y);
            }
        }
        assert_eq!(g, want);

        let inside = Pencil::new(ProjPoint::finite(big(1, 2), big(1, 2)), GridSet1D::full(4, 0, 16).unwrap(), 1.0 / 16.0).unwrap();
        assert!(matches!(rasterize_pencil(&inside, &dom), Err(Error::Unsupported(_))));
    }

    #[test]
    fn param_round_trip() {
        let g = GridSet1D::full(5, -32, 32).unwrap();
        for tip in [ProjPoint::int(-1, 3), ProjPoint::infinite(1, 1).unwrap(), ProjPoint::infinite(1, -3).unwrap()] {
            let p = Pencil::new(tip, g.clone(), 0.03).unwrap();
            for v in [0.1, 0.37, 0.9] {
                let w = p.param_of(&p.line_at(v).unwrap());
                assert!((w - v).abs() < 1e-9, "{v} {w}");
            }
        }
    }

    #[test]
    fn intersection_examples() {
        let dom = Domain2D::unit(5);
        let d = 1.0 / 32.0;
        let a = rasterize_tube(&Tube::new(hline(big(1, 4)), d).unwrap(), &dom);
        let b = rasterize_tube(&Tube::new(hline(big(3, 4)), d).unwrap(), &dom);
        assert_eq!(intersection_measure(&[a.clone(), b]).unwrap(), 0.0);
        assert_eq!(intersection_measure(&[a.clone(), a.clone()]).unwrap(), a.measure());
        let v = Line::new(Big::one(), Big::zero(), -big(33, 64)).unwrap();
        let h = hline(big(33, 64));
        let x = intersection_measure(&[rasterize_tube(&Tube::new(v, d).unwrap(), &dom), rasterize_tube(&Tube::new(h, d).unwrap(), &dom)]).unwrap();
        assert!(x >= 4.0 * d * d && x <= 16.0 * d * d);
        let other = GridSet2D::empty(Domain2D::unit(4));
        assert!(intersection_measure(&[a, other]).is_err());
    }

    fn corners() -> [ProjPoint; 4] {
        [ProjPoint::int(0, 0), ProjPoint::int(1, 0), ProjPoint::int(1, 1), ProjPoint::int(0, 1)]
    }

    #[test]
    fn homography_square_cases() {
        let c = corners();
        fn r(v: &[ProjPoint; 4]) -> [&ProjPoint; 4] {
            [&v[0], &v[1], &v[2], &v[3]]
        }
        let h = homography_from_points(r(&c), r(&c)).unwrap();
        assert!(h.same_as(&Homography::identity()));
        let rot = [c[1].clone(), c[2].clone(), c[3].clone(), c[0].clone()];
        let h = homography_from_points(r(&c), r(&rot)).unwrap();
        // (x, y) ↦ (1 − y, x).
        let want = Homography::from_i64([[0, -1, 1], [1, 0, 0], [0, 0, 1]]).unwrap();
        assert!(h.same_as(&want));
        let col = [ProjPoint::int(0, 0), ProjPoint::int(1, 1), ProjPoint::int(2, 2), ProjPoint::int(0, 1)];
        assert!(matches!(homography_from_points(r(&col), r(&c)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn homography_random_apply_and_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut done = 0;
        while done < 50 {
            let mut pt = || ProjPoint::finite(big(rng.gen_range(-20..20), rng.gen_range(1..7)), big(rng.gen_range(-20..20), rng.gen_range(1..7)));
            let s = [pt(), pt(), pt(), pt()];
            let d = [pt(), pt(), pt(), pt()];
            let Ok(h) = homography_from_points([&s[0], &s[1], &s[2], &s[3]], [&d[0], &d[1], &d[2], &d[3]]) else {
                continue;
            };
            for i in 0..4 {
                assert!(h.apply(&s[i]).same_as(&d[i]));
            }
            done += 1;
        }
    }

    #[test]
    fn normalize_tips_cases() {
        let std = [ProjPoint::infinite(1, 0).unwrap(), ProjPoint::infinite(0, 1).unwrap(), ProjPoint::int(0, 0), ProjPoint::int(1, 1)];
        let (h, t0) = normalize_tips([&std[0], &std[1], &std[2], &std[3]]).unwrap();
        assert!(h.same_as(&Homography::identity()));
        assert_eq!(t0, big(1, 1));

        let tips = [ProjPoint::int(2, 0), ProjPoint::int(0, 2), ProjPoint::int(-1, -1), ProjPoint::int(3, 3)];
        let (h, t0) = normalize_tips([&tips[0], &tips[1], &tips[2], &tips[3]]).unwrap();
        assert!(h.apply(&tips[0]).same_as(&std[0]));
        assert!(h.apply(&tips[1]).same_as(&std[1]));
        assert!(h.apply(&tips[2]).same_as(&std[2]));
        assert!(h.apply(&tips[3]).same_as(&ProjPoint::finite(t0, big(1, 1))));

        let col = [ProjPoint::int(0, 0), ProjPoint::int(1, 1), ProjPoint::int(2, 2), ProjPoint::int(5, 0)];
        assert!(matches!(normalize_tips([&col[0], &col[1], &col[2], &col[3]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn apply_identity_and_translation() {
        let dom = Domain2D::unit(4);
        let g = GridSet2D::from_cells(dom, [(1, 1), (5, 9), (15, 15)]).unwrap();
        let (img, rep) = apply_homography_grid(&Homography::identity(), &g, &dom).unwrap();
        assert_eq!(rep.ratio, 1.0);
        // Closed cell images touch their neighbours; the exact cells are inside.
        assert!(g.is_subset_of(&img));
        let t = Homography::from_i64([[1, 0, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
        let mut tm = t.m.clone();
        tm[0][2] = big(1, 4);
        let t = Homography::new(tm).unwrap();
        let wide = Domain2D::new(4, 0, 32, 0, 16).unwrap();
        let (img, rep) = apply_homography_grid(&t, &g, &wide).unwrap();
        assert_eq!(rep.ratio, 1.0);
        assert!(img.contains(5, 1) && img.contains(9, 9) && img.contains(19, 15));
        assert!(img.count() >= g.count());

        let p = Pencil::new(ProjPoint::int(-1, 2), GridSet1D::from_cells(5, 0, 32, [3, 17]).unwrap(), 1.0 / 16.0).unwrap();
        let (q, rep) = apply_homography_pencil(&Homography::identity(), &p, Some(&dom)).unwrap();
        assert_eq!(rep.unwrap().ratio, 1.0);
        assert_eq!(q, p);
    }

    #[test]
    fn pencil_round_trip_is_superset() {
        let dom = Domain2D::unit(4);
        let tips = [ProjPoint::int(3, 0), ProjPoint::int(0, 3), ProjPoint::int(-1, -1), ProjPoint::int(4, 4)];
        let (h, _) = normalize_tips([&tips[0], &tips[1], &tips[2], &tips[3]]).unwrap();
        for tip in [tips[2].clone(), tips[3].clone(), ProjPoint::int(-2, 1)] {
            let p = Pencil::new(tip, GridSet1D::from_cells(6, 0, 64, [9, 10, 11, 20]).unwrap(), 1.0 / 16.0).unwrap();
            let (q, rep) = apply_homography_pencil(&h, &p, Some(&dom)).unwrap();
            let rep = rep.unwrap();
            assert!(rep.ratio.is_finite() && rep.ratio >= 1.0);
            let (back, _) = apply_homography_pencil(&h.inverse(), &q, None).unwrap();
            assert!(back.tip.same_as(&p.tip));
            assert!(p.directions.is_subset_of(&back.directions));
        }
    }

    #[test]
    fn grid_image_meeting_infinity_rejected() {
        let dom = Domain2D::unit(3);
        // w = x − 1/2 changes sign on the domain.
        let mut m = Homography::identity().m;
        m[2] = [big(1, 1), big(0, 1), big(-1, 2)];
        let h = Homography::new(m).unwrap();
        let g = GridSet2D::full(dom);
        assert!(matches!(apply_homography_grid(&h, &g, &dom), Err(Error::Domain(_))));
    }

    #[test]
    fn admissibility_cases() {
        let t = [ProjPoint::int(-1, -1), ProjPoint::int(2, -1), ProjPoint::int(-1, 2), ProjPoint::int(2, 2)];
        let r = [&t[0], &t[1], &t[2], &t[3]];
        // The diagonal pair is 3√2 > 4 apart.
        assert!(matches!(tips_admissible(r, 0.25), Admissibility::Fail(s) if s.contains("dist(p1, p4)")));
        assert_eq!(tips_admissible(r, 0.2), Admissibility::Pass);
        let col = [ProjPoint::int(-1, -1), ProjPoint::int(2, 2), ProjPoint::int(3, 3), ProjPoint::int(-2, -2)];
        assert!(matches!(tips_admissible([&col[0], &col[1], &col[2], &col[3]], 0.1), Admissibility::Fail(s) if s.contains("tube")));
        let ins = [ProjPoint::finite(big(1, 2), big(1, 2)), t[1].clone(), t[2].clone(), t[3].clone()];
        assert!(matches!(tips_admissible([&ins[0], &ins[1], &ins[2], &ins[3]], 0.2), Admissibility::Fail(s) if s.contains("[0,1]^2")));
    }

    /// Transversal two-pencil bound on random admissible configurations.
    #[test]
    fn transversal_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = 6;
        let dom = Domain2D::unit(m);
        let d = dom.delta();
        for _ in 0..40 {
            let p1 = Pencil::new(ProjPoint::int(-1, rng.gen_range(-1..=2)), GridSet1D::from_cells(m, 0, 64, (0..6).map(|_| rng.gen_range(54..64))).unwrap(), d).unwrap();
            let p2 = Pencil::new(ProjPoint::int(rng.gen_range(-1..=2), -1), GridSet1D::from_cells(m, 0, 64, (0..6).map(|_| rng.gen_range(22..42))).unwrap(), d).unwrap();
            let (t1, t2) = (p1.tubes().unwrap(), p2.tubes().unwrap());
            let mut theta0 = f64::INFINITY;
            for a in &t1 {
                for b in &t2 {
                    let s = (a.line.a * b.line.b - a.line.b * b.line.a).abs();
                    theta0 = theta0.min(s.asin());
                }
            }
            let x = intersection_measure(&[rasterize_pencil(&p1, &dom).unwrap(), rasterize_pencil(&p2, &dom).unwrap()]).unwrap();
            let (n1, n2) = (p1.directions.count() as f64, p2.directions.count() as f64);
            assert!(x <= 16.0 * n1 * n2 * d * d / theta0, "measure {x} bound {}", 16.0 * n1 * n2 * d * d / theta0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn raster_matches_oracle_and_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, r in 1.0f64..3.0) {
            prop_assume!(a.abs() + b.abs() > 1e-3);
            let dom = Domain2D::unit(5);
            let l = Line::from_f64(a, b, c).unwrap();
            let rad = r / 32.0;
            let g = rasterize_tube(&Tube::new(l.clone(), rad).unwrap(), &dom);
            prop_assert_eq!(g.cells().collect::<Vec<_>>(), oracle(&l, rad, &dom));
            let g2 = rasterize_tube(&Tube::new(l, rad * 1.5).unwrap(), &dom);
            prop_assert!(g.is_subset_of(&g2));
        }

        #[test]
        fn intersection_is_permutation_invariant(ys in proptest::collection::vec(1i64..31, 3)) {
            let dom = Domain2D::unit(5);
            let sets: Vec<GridSet2D> = ys.iter().enumerate().map(|(i, &y)| {
                let l = if i % 2 == 0 { hline(big(y, 32)) } else { Line::new(Big::one(), Big::one(), -big(y, 16)).unwrap() };
                rasterize_tube(&Tube::new(l, 2.0 / 32.0).unwrap(), &dom)
            }).collect();
            let fwd = intersection_measure(&sets).unwrap();
            let rev: Vec<GridSet2D> = sets.iter().rev().cloned().collect();
            prop_assert_eq!(fwd, intersection_measure(&rev).unwrap());
        }
    }
}
