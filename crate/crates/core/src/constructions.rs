//! Generators for structured sets and pencil configurations.

use num::rational::Ratio;

use crate::error::{Error, Result};
use crate::grid::{Domain2D, GridSet1D, GridSet2D};
use crate::tube::{big, rasterize_pencil, Pencil, ProjPoint};

/// Digit-restricted self-similar set.
///
/// Each of `depth` levels splits a block into `subdivision` parts and keeps
/// the `digits`. The set sits in `[origin, origin + 2^{-shrink})` and every
/// finest block is refined into `2^refine` cells, so the resolution is
/// `m = shrink + depth·log₂ℓ + refine`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CantorSpec {
    pub branching: u32,
    pub subdivision: u32,
    pub depth: u32,
    pub digits: Vec<u32>,
    pub shrink: u32,
    pub refine: u32,
    /// Left end in cells at the final resolution.
    pub origin: i64,
}

impl CantorSpec {
    pub fn new(subdivision: u32, depth: u32, digits: Vec<u32>) -> Self {
        CantorSpec { branching: digits.len() as u32, subdivision, depth, digits, shrink: 0, refine: 0, origin: 0 }
    }

    /// Digits `{0, 3}` base 4: σ = 1/2.
    pub fn middle_half(depth: u32) -> Self {
        Self::new(4, depth, vec![0, 3])
    }

    pub fn shrink(mut self, k: u32) -> Self {
        self.shrink = k;
        self
    }

    pub fn refine(mut self, k: u32) -> Self {
        self.refine = k;
        self
    }

    pub fn origin(mut self, cells: i64) -> Self {
        self.origin = cells;
        self
    }

    fn level_bits(&self) -> Result<u32> {
        let l = self.subdivision;
        if l < 2 || !l.is_power_of_two() {
            return Err(Error::Parameter(format!("subdivision {l} is not a power of two ≥ 2")));
        }
        Ok(l.trailing_zeros())
    }

    pub fn m(&self) -> Result<u32> {
        Ok(self.shrink + self.depth * self.level_bits()? + self.refine)
    }

    /// `log b / log ℓ`.
    pub fn sigma(&self) -> f64 {
        (self.branching as f64).ln() / (self.subdivision as f64).ln()
    }
}

pub fn cantor_set(spec: &CantorSpec) -> Result<GridSet1D> {
    let bits = spec.level_bits()?;
    if spec.depth < 1 {
        return Err(Error::Parameter("depth must be ≥ 1".into()));
    }
    if spec.branching < 1 || spec.branching as usize != spec.digits.len() || spec.branching > spec.subdivision {
        return Err(Error::Parameter(format!("branching {} inconsistent with digits {:?}", spec.branching, spec.digits)));
    }
    let mut digits = spec.digits.clone();
    digits.sort_unstable();
    digits.dedup();
    if digits.len() != spec.digits.len() || digits.iter().any(|&d| d >= spec.subdivision) {
        return Err(Error::Parameter(format!("invalid digit pattern {:?}", spec.digits)));
    }
    let m = spec.m()?;
    if m > 40 {
        return Err(Error::Parameter(format!("resolution m = {m} too fine")));
    }
    let mut blocks = vec![0i64];
    for _ in 0..spec.depth {
        blocks = blocks.iter().flat_map(|&b| digits.iter().map(move |&d| (b << bits) + d as i64)).collect();
    }
    let span = 1i64 << (m - spec.shrink);
    let per = 1i64 << spec.refine;
    let mut out = GridSet1D::empty(m, spec.origin, spec.origin + span)?;
    for b in blocks {
        let s = spec.origin + b * per;
        out.insert_range(s, s + per - 1);
    }
    Ok(out)
}

/// `{0, gap, …, (n−1)·gap}` on `[0, 1)`.
pub fn ap_set(n: usize, gap: i64, m: u32) -> Result<GridSet1D> {
    if n == 0 || gap < 1 {
        return Err(Error::Parameter(format!("ap_set needs n ≥ 1 and gap ≥ 1, got n={n} gap={gap}")));
    }
    let last = (n as i64 - 1).checked_mul(gap).filter(|&v| v < 1i64 << m);
    if last.is_none() {
        return Err(Error::Domain(format!("progression of {n} terms with gap {gap} leaves [0,1) at m={m}")));
    }
    GridSet1D::from_cells(m, 0, 1 << m, (0..n as i64).map(|k| k * gap))
}

/// Cells containing `ratio^k / 4` for `k < count`, on `[smallest cell, 1)`.
pub fn gp_set(ratio: Ratio<i64>, count: usize, m: u32) -> Result<GridSet1D> {
    if ratio <= Ratio::from_integer(0) || ratio >= Ratio::from_integer(1) || count == 0 {
        return Err(Error::Parameter(format!("gp_set needs 0 < ratio < 1 and count ≥ 1, got {ratio}, {count}")));
    }
    let mut cells = Vec::with_capacity(count);
    let mut v = Ratio::new(1i128 << m, 4);
    let r = Ratio::new(*ratio.numer() as i128, *ratio.denom() as i128);
    for _ in 0..count {
        let c = v.floor().to_integer() as i64;
        if c < 1 || cells.last() == Some(&c) {
            return Err(Error::Domain(format!("progression term below resolution at m={m}")));
        }
        cells.push(c);
        v *= r;
    }
    let lo = *cells.last().expect("count ≥ 1");
    GridSet1D::from_cells(m, lo, 1 << m, cells)
}

/// Four parallel families with slopes ∞, 0, 1, −1, each of `n` tubes of
/// radius δ through an `n×n` lattice of cell centres in `[0,1)²`.
///
/// The diagonal families keep the `n` central offsets, so about half of the
/// lattice points are 4-rich.
pub fn collinear_tip_config(n: usize, m: u32) -> Result<[Pencil; 4]> {
    let size = 1i64 << m;
    if n == 0 || n as i64 > size / 4 {
        return Err(Error::Parameter(format!("need 1 ≤ n ≤ 2^m/4, got n={n} at m={m}")));
    }
    let n = n as i64;
    let s = size / n;
    let off = s / 2;
    let lattice: Vec<i64> = (0..n).map(|k| off + s * k).collect();
    let delta = 1.0 / size as f64;
    let d0 = -(n / 2);
    let e0 = n - 1 - n / 2;
    let vertical = GridSet1D::from_cells(m, 0, size, lattice.iter().copied())?;
    let horizontal = vertical.clone();
    // Slope 1 through (x_k, y_l): offset y_l − x_k = s(l − k).
    let up = GridSet1D::from_cells(m, -size, size, (d0..d0 + n).map(|d| s * d))?;
    // Slope −1: offset x_k + y_l = s(k + l) + 2·off.
    let down = GridSet1D::from_cells(m, 0, 2 * size, (e0..e0 + n).map(|e| s * e + 2 * off))?;
    Ok([
        Pencil::new(ProjPoint::infinite(0, 1)?, vertical, delta)?,
        Pencil::new(ProjPoint::infinite(1, 0)?, horizontal, delta)?,
        Pencil::new(ProjPoint::infinite(1, 1)?, up, delta)?,
        Pencil::new(ProjPoint::infinite(1, -1)?, down, delta)?,
    ])
}

/// Lattice `{(2^{i−n−1}, 2^{j−n−1}) : i, j < n}`, snapped to cells.
pub fn geometric_lattice(n: usize, m: u32) -> Result<Vec<i64>> {
    if n == 0 || n as u32 >= m {
        return Err(Error::Parameter(format!("need 1 ≤ n < m for the rescaled lattice, got n={n}, m={m}")));
    }
    Ok((0..n as u32).map(|i| 1i64 << (m + i - n as u32 - 1)).collect())
}

/// Extra resolution of the origin pencil's angle grid.
pub const ORIGIN_ANGLE_BITS: u32 = 3;

/// A finite tip at the origin plus horizontal and vertical families through a
/// geometric lattice.
pub fn noncollinear_three_config(n: usize, m: u32) -> Result<[Pencil; 3]> {
    let lat = geometric_lattice(n, m)?;
    let size = 1i64 << m;
    let delta = 1.0 / size as f64;
    let am = m + ORIGIN_ANGLE_BITS;
    let mut angles = GridSet1D::empty(am, 0, 1 << am)?;
    for &x in &lat {
        for &y in &lat {
            let u = (y as f64 + 0.5).atan2(x as f64 + 0.5) / std::f64::consts::PI;
            angles.insert((u * (1i64 << am) as f64).floor() as i64);
        }
    }
    let axis = GridSet1D::from_cells(m, 0, size, lat.iter().copied())?;
    Ok([
        Pencil::new(ProjPoint::int(0, 0), angles, delta)?,
        Pencil::new(ProjPoint::infinite(0, 1)?, axis.clone(), delta)?,
        Pencil::new(ProjPoint::infinite(1, 0)?, axis, delta)?,
    ])
}

fn angle_cover(out: &mut GridSet1D, lo: f64, hi: f64) {
    let n = (1i64 << out.m()) as f64;
    let (a, b) = ((lo / std::f64::consts::PI * n).floor() as i64, (hi / std::f64::consts::PI * n).ceil() as i64 - 1);
    out.insert_range(a.max(0), b.min(n as i64 - 1));
}

/// The four pencils whose intersection contains `A × A`:
/// `A × ℝ`, `ℝ × A`, lines through `(0,0)` meeting `A × A`, and lines
/// through `(1,1)` meeting `A × A`. Angle covers use one angle cell per grid
/// cell and are taken over the closed cells, so they are supersets.
pub fn product_pencils(a: &GridSet1D) -> Result<[Pencil; 4]> {
    let m = a.m();
    if m < 2 || a.lo() < 1 << (m - 2) || a.hi() > 1 << (m - 1) {
        return Err(Error::Domain("A must lie in [1/4, 1/2)".into()));
    }
    if a.is_empty() {
        return Err(Error::Empty("product_pencils of empty set".into()));
    }
    let d = a.delta();
    let mut p3 = GridSet1D::empty(m, 0, 1 << m)?;
    let mut p4 = GridSet1D::empty(m, 0, 1 << m)?;
    let cells: Vec<i64> = a.cells().collect();
    for &i in &cells {
        for &j in &cells {
            let (x0, x1, y0, y1) = (i as f64 * d, (i + 1) as f64 * d, j as f64 * d, (j + 1) as f64 * d);
            angle_cover(&mut p3, y0.atan2(x1), y1.atan2(x0));
            angle_cover(&mut p4, (1.0 - y1).atan2(1.0 - x0), (1.0 - y0).atan2(1.0 - x1));
        }
    }
    Ok([
        Pencil::new(ProjPoint::infinite(0, 1)?, a.clone(), d)?,
        Pencil::new(ProjPoint::infinite(1, 0)?, a.clone(), d)?,
        Pencil::new(ProjPoint::int(0, 0), p3, d)?,
        Pencil::new(ProjPoint::finite(big(1, 1), big(1, 1)), p4, d)?,
    ])
}

/// Rasterizes `A × A` and the pencils on the square of `A`'s domain and checks
/// `A × A ⊂ ⋂ inflate(raster(Pᵢ), 1)` cellwise.
pub fn product_containment(a: &GridSet1D, pencils: &[Pencil]) -> Result<bool> {
    let dom = Domain2D::new(a.m(), a.lo(), a.hi(), a.lo(), a.hi())?;
    let aa = GridSet2D::product(a, a)?;
    for p in pencils {
        let r = rasterize_pencil(p, &dom)?.inflate(1);
        if !aa.is_subset_of(&r) {
            return Ok(false);
        }
    }
    Ok(true)
}
