//! Canonical δ-grid sets over dyadic intervals and squares.
//!
//! A grid set at resolution `m` lives on cells of side `δ = 2^-m`. Domain
//! bounds are stored as absolute cell indices, so a cell with absolute index
//! `i` is the half-open interval `[iδ, (i+1)δ)`. All binary operations require
//! operands on the same resolution and domain.

use crate::bits::Bits;
use crate::error::{Error, Result};

/// Exponent `j` of a power of two `r = 2^-j`, or an error when `r` is not one.
pub fn dyadic_exponent(r: f64) -> Result<i32> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidScale(format!("{r} is not positive")));
    }
    let e = -r.log2().round() as i32;
    if 2f64.powi(-e) != r {
        return Err(Error::InvalidScale(format!("{r} is not a power of two")));
    }
    Ok(e)
}

/// Formats `cells · 2^-m` as a reduced fraction `p/q`.
pub fn fmt_dyadic(cells: i64, m: u32) -> String {
    let mut p = cells;
    let mut q: i64 = 1 << m;
    while q > 1 && p % 2 == 0 {
        p /= 2;
        q /= 2;
    }
    format!("{p}/{q}")
}

/// Parses `p/q` (or `p`) as a multiple of `2^-m`, returning the cell index.
pub fn parse_dyadic(s: &str, m: u32) -> Result<i64> {
    let (p, q) = match s.split_once('/') {
        Some((p, q)) => (p.trim(), q.trim()),
        None => (s.trim(), "1"),
    };
    let p: i128 = p.parse().map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
    let q: i128 = q.parse().map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
    if q <= 0 {
        return Err(Error::Parse(format!("nonpositive denominator in {s:?}")));
    }
    let num = p * (1i128 << m);
    if num % q != 0 {
        return Err(Error::Parse(format!("{s} is not a multiple of 2^-{m}")));
    }
    i64::try_from(num / q).map_err(|_| Error::Parse(format!("{s} out of range")))
}

/// Non-concentration parameters: exponent σ and constant C.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonConcentrationSpec {
    pub sigma: f64,
    pub c: f64,
}

impl NonConcentrationSpec {
    pub fn new(sigma: f64, c: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::Parameter(format!("sigma = {sigma} not in (0,1)")));
        }
        if !(c >= 1.0) {
            return Err(Error::Parameter(format!("C = {c} < 1")));
        }
        Ok(NonConcentrationSpec { sigma, c })
    }

    /// Largest admissible cell count in a window of side `r_cells · δ`.
    pub fn bound(&self, r_cells: u64) -> f64 {
        self.c * (r_cells as f64).powf(self.sigma)
    }
}

/// Failure witness of a non-concentration check. The window is the
/// half-open box of side `r_cells` cells whose lower corner is `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness<P> {
    pub start: P,
    pub r_cells: u64,
    pub count: u64,
    pub bound: f64,
}

impl<P> Witness<P> {
    pub fn radius(&self, m: u32) -> f64 {
        self.r_cells as f64 / (1u64 << m) as f64
    }
}

pub type CheckResult<P> = std::result::Result<(), Witness<P>>;

fn check_same(m1: u32, m2: u32, d1: &[i64], d2: &[i64]) -> Result<()> {
    if m1 != m2 {
        return Err(Error::ResolutionMismatch(format!("m={m1} vs m={m2}")));
    }
    if d1 != d2 {
        return Err(Error::ResolutionMismatch(format!(
            "domain {d1:?} vs {d2:?}"
        )));
    }
    Ok(())
}

/// A set of δ-cells of a dyadic interval `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridSet1D {
    m: u32,
    lo: i64,
    bits: Bits,
}

impl GridSet1D {
    /// Empty set on the cell range `lo..hi` (absolute indices at resolution `m`).
    pub fn empty(m: u32, lo: i64, hi: i64) -> Result<Self> {
        if hi <= lo {
            return Err(Error::Domain(format!("empty domain [{lo},{hi}) at m={m}")));
        }
        if m > 40 {
            return Err(Error::Parameter(format!("resolution m={m} too fine")));
        }
        Ok(GridSet1D { m, lo, bits: Bits::new((hi - lo) as usize) })
    }

    pub fn full(m: u32, lo: i64, hi: i64) -> Result<Self> {
        let mut s = Self::empty(m, lo, hi)?;
        s.bits = Bits::full(s.bits.len());
        Ok(s)
    }

    /// Empty set on the unit interval `[0, 1)`.
    pub fn unit(m: u32) -> Self {
        Self::empty(m, 0, 1 << m).expect("unit domain")
    }

    /// Builds a set on `lo..hi` from absolute cell indices; out-of-domain indices are an error.
    pub fn from_cells(m: u32, lo: i64, hi: i64, cells: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut s = Self::empty(m, lo, hi)?;
        for c in cells {
            if c < lo || c >= hi {
                return Err(Error::Domain(format!("cell {c} outside [{lo},{hi})")));
            }
            s.insert(c);
        }
        Ok(s)
    }

    pub fn m(&self) -> u32 {
        self.m
    }
    pub fn lo(&self) -> i64 {
        self.lo
    }
    pub fn hi(&self) -> i64 {
        self.lo + self.bits.len() as i64
    }
    pub fn len(&self) -> usize {
        self.bits.len()
    }
    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    #[allow(dead_code)]
    pub(crate) fn bits(&self) -> &Bits {
        &self.bits
    }

    pub fn contains(&self, cell: i64) -> bool {
        cell >= self.lo && cell < self.hi() && self.bits.get((cell - self.lo) as usize)
    }

    /// Sets an absolute cell; indices outside the domain are ignored.
    pub fn insert(&mut self, cell: i64) {
        if cell >= self.lo && cell < self.hi() {
            self.bits.set((cell - self.lo) as usize);
        }
    }

    pub fn remove(&mut self, cell: i64) {
        if cell >= self.lo && cell < self.hi() {
            self.bits.clear((cell - self.lo) as usize);
        }
    }

    /// Sets every absolute cell in `lo..=hi` that lies in the domain.
    pub fn insert_range(&mut self, lo: i64, hi: i64) {
        let a = lo.max(self.lo);
        let b = hi.min(self.hi() - 1);
        if a <= b {
            self.bits.set_range((a - self.lo) as usize, (b - self.lo + 1) as usize);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.any()
    }

    pub fn measure(&self) -> f64 {
        self.count() as f64 * self.delta()
    }

    /// Absolute indices of member cells in increasing order.
    pub fn cells(&self) -> impl Iterator<Item = i64> + '_ {
        self.bits.iter_ones().map(move |i| self.lo + i as i64)
    }

    fn same_domain(&self, other: &Self) -> Result<()> {
        check_same(self.m, other.m, &[self.lo, self.hi()], &[other.lo, other.hi()])
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.union_with(&other.bits);
        Ok(out)
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.intersect_with(&other.bits);
        Ok(out)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.difference_with(&other.bits);
        Ok(out)
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.bits.complement();
        out
    }

    /// All cells within `k` cells of a member, clipped to the domain.
    pub fn inflate(&self, k: u64) -> Self {
        let mut out = GridSet1D { m: self.m, lo: self.lo, bits: Bits::new(self.len()) };
        let k = k as i64;
        for c in self.cells() {
            out.insert_range(c - k, c + k);
        }
        out
    }

    /// Subset test by absolute cell, valid across different domains.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.m == other.m && self.cells().all(|c| other.contains(c))
    }

    /// Re-embeds the set in the domain `lo..hi`, dropping cells that fall outside.
    pub fn reframe(&self, lo: i64, hi: i64) -> Result<Self> {
        let mut out = Self::empty(self.m, lo, hi)?;
        for c in self.cells() {
            out.insert(c);
        }
        Ok(out)
    }

    /// Number of aligned dyadic intervals of length `r` meeting the set.
    pub fn covering_number(&self, r: f64) -> Result<usize> {
        self.covering_number_exp(dyadic_exponent(r)?)
    }

    /// Covering number at `r = 2^-j`.
    pub fn covering_number_exp(&self, j: i32) -> Result<usize> {
        let shift = self.m as i32 - j;
        if shift < 0 {
            return Err(Error::InvalidScale(format!("r = 2^-{j} finer than δ = 2^-{}", self.m)));
        }
        if shift > 62 {
            return Err(Error::InvalidScale(format!("r = 2^-{j} too coarse")));
        }
        let mut last = None;
        let mut n = 0;
        for c in self.cells() {
            let b = c.div_euclid(1i64 << shift);
            if last != Some(b) {
                n += 1;
                last = Some(b);
            }
        }
        Ok(n)
    }

    /// Checks `#(S ∩ W) ≤ C·(r/δ)^σ` over every window `W = [a, a + r)` with
    /// `a` on the δ-grid and dyadic `r` from `δ` up to the domain length.
    /// The first failing window (smallest `r`, then smallest `a`) is returned.
    pub fn nonconcentration_check(&self, spec: &NonConcentrationSpec) -> CheckResult<i64> {
        let n = self.len();
        let mut prefix = vec![0u32; n + 1];
        for i in 0..n {
            prefix[i + 1] = prefix[i] + self.bits.get(i) as u32;
        }
        let count = |a: i64, b: i64| -> u64 {
            let a = a.clamp(0, n as i64) as usize;
            let b = b.clamp(0, n as i64) as usize;
            (prefix[b] - prefix[a]) as u64
        };
        let mut r: u64 = 1;
        while r as usize <= n {
            let bound = spec.bound(r);
            let ri = r as i64;
            for s in (1 - ri)..(n as i64) {
                let c = count(s, s + ri);
                if c as f64 > bound {
                    return Err(Witness { start: self.lo + s, r_cells: r, count: c, bound });
                }
            }
            r *= 2;
        }
        Ok(())
    }
}

/// A set of δ-cells of a dyadic rectangle, stored row-major (`y` outer).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridSet2D {
    m: u32,
    lo: (i64, i64),
    nx: usize,
    ny: usize,
    bits: Bits,
}

/// Axis-aligned dyadic rectangle `[x0, x1) × [y0, y1)` in cell units at resolution `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Domain2D {
    pub m: u32,
    pub x0: i64,
    pub x1: i64,
    pub y0: i64,
    pub y1: i64,
}

impl Domain2D {
    pub fn new(m: u32, x0: i64, x1: i64, y0: i64, y1: i64) -> Result<Self> {
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::Domain(format!("empty domain [{x0},{x1})×[{y0},{y1})")));
        }
        Ok(Domain2D { m, x0, x1, y0, y1 })
    }

    /// The square `[lo, hi)²` with bounds given as real dyadic numbers.
    pub fn square(m: u32, lo: f64, hi: f64) -> Result<Self> {
        let s = (m as f64).exp2();
        let (a, b) = (lo * s, hi * s);
        if a.fract() != 0.0 || b.fract() != 0.0 {
            return Err(Error::Domain(format!("[{lo},{hi}) not aligned to 2^-{m}")));
        }
        Self::new(m, a as i64, b as i64, a as i64, b as i64)
    }

    pub fn unit(m: u32) -> Self {
        Self::new(m, 0, 1 << m, 0, 1 << m).expect("unit square")
    }

    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    pub fn nx(&self) -> usize {
        (self.x1 - self.x0) as usize
    }

    pub fn ny(&self) -> usize {
        (self.y1 - self.y0) as usize
    }

    /// Real-coordinate bounds `(x0, x1, y0, y1)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let d = self.delta();
        (self.x0 as f64 * d, self.x1 as f64 * d, self.y0 as f64 * d, self.y1 as f64 * d)
    }
}

impl GridSet2D {
    pub fn empty(dom: Domain2D) -> Self {
        GridSet2D {
            m: dom.m,
            lo: (dom.x0, dom.y0),
            nx: dom.nx(),
            ny: dom.ny(),
            bits: Bits::new(dom.nx() * dom.ny()),
        }
    }

    pub fn full(dom: Domain2D) -> Self {
        let mut s = Self::empty(dom);
        s.bits = Bits::full(s.bits.len());
        s
    }

    pub fn from_cells(dom: Domain2D, cells: impl IntoIterator<Item = (i64, i64)>) -> Result<Self> {
        let mut s = Self::empty(dom);
        for (x, y) in cells {
            if !s.in_domain(x, y) {
                return Err(Error::Domain(format!("cell ({x},{y}) outside domain")));
            }
            s.insert(x, y);
        }
        Ok(s)
    }

    /// Cartesian product `A × B` of two 1D sets on the same resolution.
    pub fn product(a: &GridSet1D, b: &GridSet1D) -> Result<Self> {
        if a.m() != b.m() {
            return Err(Error::ResolutionMismatch(format!("m={} vs m={}", a.m(), b.m())));
        }
        let dom = Domain2D::new(a.m(), a.lo(), a.hi(), b.lo(), b.hi())?;
        let mut s = Self::empty(dom);
        for y in b.cells() {
            for x in a.cells() {
                s.insert(x, y);
            }
        }
        Ok(s)
    }

    pub fn domain(&self) -> Domain2D {
        Domain2D {
            m: self.m,
            x0: self.lo.0,
            x1: self.lo.0 + self.nx as i64,
            y0: self.lo.1,
            y1: self.lo.1 + self.ny as i64,
        }
    }

    pub fn m(&self) -> u32 {
        self.m
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn delta(&self) -> f64 {
        (-(self.m as f64)).exp2()
    }

    #[allow(dead_code)]
    pub(crate) fn bits(&self) -> &Bits {
        &self.bits
    }

    #[inline]
    pub fn in_domain(&self, x: i64, y: i64) -> bool {
        x >= self.lo.0 && y >= self.lo.1 && x < self.lo.0 + self.nx as i64 && y < self.lo.1 + self.ny as i64
    }

    #[inline]
    fn offset(&self, x: i64, y: i64) -> usize {
        (y - self.lo.1) as usize * self.nx + (x - self.lo.0) as usize
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        self.in_domain(x, y) && self.bits.get(self.offset(x, y))
    }

    pub fn insert(&mut self, x: i64, y: i64) {
        if self.in_domain(x, y) {
            let o = self.offset(x, y);
            self.bits.set(o);
        }
    }

    pub fn remove(&mut self, x: i64, y: i64) {
        if self.in_domain(x, y) {
            let o = self.offset(x, y);
            self.bits.clear(o);
        }
    }

    /// Sets cells `x0..=x1` of row `y`, clipped to the domain.
    pub fn insert_row_span(&mut self, y: i64, x0: i64, x1: i64) {
        if y < self.lo.1 || y >= self.lo.1 + self.ny as i64 {
            return;
        }
        let a = x0.max(self.lo.0);
        let b = x1.min(self.lo.0 + self.nx as i64 - 1);
        if a <= b {
            let base = (y - self.lo.1) as usize * self.nx;
            self.bits.set_range(base + (a - self.lo.0) as usize, base + (b - self.lo.0) as usize + 1);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.any()
    }

    pub fn measure(&self) -> f64 {
        let d = self.delta();
        self.count() as f64 * d * d
    }

    /// Member cells as absolute `(x, y)` indices, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.bits.iter_ones().map(move |o| {
            (self.lo.0 + (o % self.nx) as i64, self.lo.1 + (o / self.nx) as i64)
        })
    }

    fn same_domain(&self, other: &Self) -> Result<()> {
        let d = self.domain();
        let e = other.domain();
        check_same(d.m, e.m, &[d.x0, d.x1, d.y0, d.y1], &[e.x0, e.x1, e.y0, e.y1])
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.union_with(&other.bits);
        Ok(out)
    }

    pub fn intersect(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.intersect_with(&other.bits);
        Ok(out)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_domain(other)?;
        let mut out = self.clone();
        out.bits.difference_with(&other.bits);
        Ok(out)
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.bits.complement();
        out
    }

    pub(crate) fn union_in_place(&mut self, other: &Self) {
        debug_assert_eq!(self.domain(), other.domain());
        self.bits.union_with(&other.bits);
    }

    pub fn intersection_count(&self, other: &Self) -> Result<usize> {
        self.same_domain(other)?;
        Ok(self.bits.intersection_count(&other.bits))
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        if self.domain() == other.domain() {
            return self.bits.is_subset(&other.bits);
        }
        self.m == other.m && self.cells().all(|(x, y)| other.contains(x, y))
    }

    /// All cells within Chebyshev distance `k` of a member, clipped to the domain.
    pub fn inflate(&self, k: u64) -> Self {
        let k = k as i64;
        // Horizontal dilation, then vertical.
        let mut h = Self::empty(self.domain());
        for (x, y) in self.cells() {
            h.insert_row_span(y, x - k, x + k);
        }
        let mut out = Self::empty(self.domain());
        for y in 0..self.ny as i64 {
            let base = y as usize * self.nx;
            for x in 0..self.nx {
                if h.bits.get(base + x) {
                    for yy in (y - k).max(0)..=(y + k).min(self.ny as i64 - 1) {
                        out.bits.set(yy as usize * self.nx + x);
                    }
                }
            }
        }
        out
    }

    pub fn reframe(&self, dom: Domain2D) -> Result<Self> {
        if dom.m != self.m {
            return Err(Error::ResolutionMismatch(format!("m={} vs m={}", self.m, dom.m)));
        }
        let mut out = Self::empty(dom);
        for (x, y) in self.cells() {
            out.insert(x, y);
        }
        Ok(out)
    }

    pub fn covering_number(&self, r: f64) -> Result<usize> {
        self.covering_number_exp(dyadic_exponent(r)?)
    }

    pub fn covering_number_exp(&self, j: i32) -> Result<usize> {
        let shift = self.m as i32 - j;
        if shift < 0 {
            return Err(Error::InvalidScale(format!("r = 2^-{j} finer than δ = 2^-{}", self.m)));
        }
        if shift > 62 {
            return Err(Error::InvalidScale(format!("r = 2^-{j} too coarse")));
        }
        let mut boxes: Vec<(i64, i64)> = self
            .cells()
            .map(|(x, y)| (x.div_euclid(1 << shift), y.div_euclid(1 << shift)))
            .collect();
        boxes.sort_unstable();
        boxes.dedup();
        Ok(boxes.len())
    }

    /// Two-dimensional analogue of [`GridSet1D::nonconcentration_check`]:
    /// windows are squares `[a, a + r)²`, the bound is `C·(r/δ)^σ` cells, and
    /// the witness order is smallest `r`, then smallest `(a_x, a_y)`.
    pub fn nonconcentration_check(&self, spec: &NonConcentrationSpec) -> CheckResult<(i64, i64)> {
        let (nx, ny) = (self.nx, self.ny);
        let w = nx + 1;
        let mut prefix = vec![0u32; (nx + 1) * (ny + 1)];
        for y in 0..ny {
            let mut row = 0u32;
            for x in 0..nx {
                row += self.bits.get(y * nx + x) as u32;
                prefix[(y + 1) * w + x + 1] = prefix[y * w + x + 1] + row;
            }
        }
        let rect = |x0: i64, x1: i64, y0: i64, y1: i64| -> u64 {
            let cx = |v: i64| v.clamp(0, nx as i64) as usize;
            let cy = |v: i64| v.clamp(0, ny as i64) as usize;
            let (x0, x1, y0, y1) = (cx(x0), cx(x1), cy(y0), cy(y1));
            (prefix[y1 * w + x1] + prefix[y0 * w + x0] - prefix[y0 * w + x1] - prefix[y1 * w + x0]) as u64
        };
        let mut r: u64 = 1;
        while r as usize <= nx.max(ny) {
            let bound = spec.bound(r);
            let ri = r as i64;
            // Skip scales where no window can exceed the bound.
            if (self.count() as f64) > bound {
                for ax in (1 - ri)..(nx as i64) {
                    for ay in (1 - ri)..(ny as i64) {
                        let c = rect(ax, ax + ri, ay, ay + ri);
                        if c as f64 > bound {
                            return Err(Witness {
                                start: (self.lo.0 + ax, self.lo.1 + ay),
                                r_cells: r,
                                count: c,
                                bound,
                            });
                        }
                    }
                }
            }
            r *= 2;
        }
        Ok(())
    }
}
