//! Discretized sumsets, productsets and the additive-combinatorics engine.
//!
//! Every arithmetic image is an interval-arithmetic cover: a cell joins the
//! image iff its half-open interval meets the open image interval of some
//! member pair. Index-level operations (energy, restricted sumsets, BSG)
//! work on absolute cell indices with no interval spill.

use std::collections::BTreeSet;

use num::rational::Ratio;
use num::{Integer, Signed, Zero};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::grid::GridSet1D;

pub type Rational = Ratio<i64>;
type Q = Ratio<i128>;

fn same_m(a: &GridSet1D, b: &GridSet1D) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::ResolutionMismatch(format!("m={} vs m={}", a.m(), b.m())));
    }
    Ok(())
}

fn fdiv(a: i128, b: &i128) -> i128 {
    Integer::div_floor(&a, b)
}

fn cdiv(a: i128, b: &i128) -> i128 {
    Integer::div_ceil(&a, b)
}

fn widen(r: &Rational) -> Q {
    Q::new(*r.numer() as i128, *r.denom() as i128)
}

fn to_i64(v: i128) -> Result<i64> {
    i64::try_from(v).map_err(|_| Error::Domain(format!("index {v} out of range")))
}

/// Cells `kmin..=kmax` at resolution `m` meeting the open interval `(lo, hi)`.
fn open_cover(lo: &Q, hi: &Q, m: u32) -> (i128, i128) {
    let s = Q::from_integer(1i128 << m);
    let kmin = (lo * s).floor().to_integer();
    let kmax = (hi * s).ceil().to_integer() - 1;
    (kmin, kmax)
}

/// `A + B` on `[lo_A + lo_B, hi_A + hi_B)`. Cells `i`, `j` contribute `{i+j, i+j+1}`.
pub fn sumset(a: &GridSet1D, b: &GridSet1D) -> Result<GridSet1D> {
    same_m(a, b)?;
    let mut out = GridSet1D::empty(a.m(), a.lo() + b.lo(), a.hi() + b.hi())?;
    let mut acc = Bits::new(out.len());
    for i in a.cells() {
        let s = (i - a.lo()) as usize;
        acc.or_shifted(b.bits(), s);
        acc.or_shifted(b.bits(), s + 1);
    }
    for k in acc.iter_ones() {
        out.insert(out.lo() + k as i64);
    }
    Ok(out)
}

/// `A − B` on `[lo_A − hi_B, hi_A − lo_B)`. Cells `i`, `j` contribute `{i−j−1, i−j}`.
pub fn difference_set(a: &GridSet1D, b: &GridSet1D) -> Result<GridSet1D> {
    same_m(a, b)?;
    let mut out = GridSet1D::empty(a.m(), a.lo() - b.hi(), a.hi() - b.lo())?;
    let mut reflected = Bits::new(b.len());
    for j in b.cells() {
        reflected.set((b.hi() - 1 - j) as usize);
    }
    let mut acc = Bits::new(out.len());
    for i in a.cells() {
        let s = (i - a.lo()) as usize;
        acc.or_shifted(&reflected, s);
        acc.or_shifted(&reflected, s + 1);
    }
    for k in acc.iter_ones() {
        out.insert(out.lo() + k as i64);
    }
    Ok(out)
}

/// `A · B` for nonnegative domains, on the aligned hull of `[lo_A lo_B, hi_A hi_B)`.
pub fn productset(a: &GridSet1D, b: &GridSet1D) -> Result<GridSet1D> {
    same_m(a, b)?;
    if a.lo() < 0 || b.lo() < 0 {
        return Err(Error::Domain("productset needs nonnegative domains".into()));
    }
    let m = a.m();
    let sh = 1i128 << m;
    let lo = fdiv(a.lo() as i128 * b.lo() as i128, &sh);
    let hi = cdiv(a.hi() as i128 * b.hi() as i128, &sh);
    let mut out = GridSet1D::empty(m, to_i64(lo)?, to_i64(hi)?)?;
    let bc: Vec<i128> = b.cells().map(|j| j as i128).collect();
    for i in a.cells() {
        let i = i as i128;
        for &j in &bc {
            let kmin = fdiv(i * j, &sh);
            let kmax = cdiv((i + 1) * (j + 1), &sh) - 1;
            out.insert_range(kmin as i64, kmax as i64);
        }
    }
    Ok(out)
}

/// `A / B` for `lo_A ≥ 0`, `lo_B > 0`, on the aligned hull of `[lo_A/hi_B, hi_A/lo_B)`.
pub fn quotientset(a: &GridSet1D, b: &GridSet1D) -> Result<GridSet1D> {
    same_m(a, b)?;
    if a.lo() < 0 || b.lo() <= 0 {
        return Err(Error::Domain("quotientset needs lo_A ≥ 0 and lo_B > 0".into()));
    }
    let m = a.m();
    let sh = 1i128 << m;
    let lo = fdiv(a.lo() as i128 * sh, &(b.hi() as i128));
    let hi = cdiv(a.hi() as i128 * sh, &(b.lo() as i128));
    let mut out = GridSet1D::empty(m, to_i64(lo)?, to_i64(hi)?)?;
    let bc: Vec<i128> = b.cells().map(|j| j as i128).collect();
    for i in a.cells() {
        let i = i as i128;
        for &j in &bc {
            let kmin = fdiv(i * sh, &(j + 1));
            let kmax = cdiv((i + 1) * sh, &j) - 1;
            out.insert_range(kmin as i64, kmax as i64);
        }
    }
    Ok(out)
}

/// Cover of `{p·x + q : x ∈ A}` on the aligned hull of the image of the domain.
pub fn affine_image(a: &GridSet1D, p: Rational, q: Rational) -> Result<GridSet1D> {
    if p.is_zero() {
        return Err(Error::Parameter("affine_image with p = 0".into()));
    }
    let m = a.m();
    let (p, q) = (widen(&p), widen(&q));
    let d = Q::new(1, 1i128 << m);
    let image = |lo: i64, hi: i64| {
        let e1 = &p * Q::from_integer(lo as i128) * d + q;
        let e2 = &p * Q::from_integer(hi as i128) * d + q;
        if e1 <= e2 { (e1, e2) } else { (e2, e1) }
    };
    let (dl, dh) = image(a.lo(), a.hi());
    let s = Q::from_integer(1i128 << m);
    let lo = (dl * s).floor().to_integer();
    let hi = (dh * s).ceil().to_integer();
    let mut out = GridSet1D::empty(m, to_i64(lo)?, to_i64(hi)?)?;
    for i in a.cells() {
        let (l, h) = image(i, i + 1);
        let (kmin, kmax) = open_cover(&l, &h, m);
        out.insert_range(kmin as i64, kmax as i64);
    }
    Ok(out)
}

/// Number of index quadruples `(a, b, a', b')` with `a + b = a' + b'`.
pub fn additive_energy(a: &GridSet1D, b: &GridSet1D) -> Result<u64> {
    same_m(a, b)?;
    let r = representation_counts(a.cells(), b.cells().collect::<Vec<_>>().as_slice(), a.lo() + b.lo(), a.len() + b.len());
    Ok(r.iter().map(|&c| c * c).sum())
}

fn representation_counts(a: impl Iterator<Item = i64>, b: &[i64], base: i64, len: usize) -> Vec<u64> {
    let mut r = vec![0u64; len];
    for i in a {
        for &j in b {
            r[(i + j - base) as usize] += 1;
        }
    }
    r
}

/// Peak of the index-level self-convolution: the smallest `z` maximizing
/// `#{(a, b) ∈ A × A : a + b = z}` together with that count.
pub fn convolution_peak(a: &GridSet1D) -> Result<(i64, u64)> {
    if a.is_empty() {
        return Err(Error::Empty("convolution_peak of empty set".into()));
    }
    let cells: Vec<i64> = a.cells().collect();
    let base = 2 * a.lo();
    let r = representation_counts(cells.iter().copied(), &cells, base, 2 * a.len());
    let (z, c) = r
        .iter()
        .enumerate()
        .fold((0usize, 0u64), |best, (k, &c)| if c > best.1 { (k, c) } else { best });
    Ok((base + z as i64, c))
}

/// Index-level sumset `{i + j}` of two cell lists.
pub fn index_sumset(a: &[i64], b: &[i64]) -> BTreeSet<i64> {
    let mut s = BTreeSet::new();
    for &i in a {
        for &j in b {
            s.insert(i + j);
        }
    }
    s
}

/// Bipartite graph `G ⊂ A × B` on absolute cell indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGraph {
    a_set: GridSet1D,
    b_set: GridSet1D,
    edges: Vec<(i64, i64)>,
}

impl PairGraph {
    /// Validates endpoints and removes duplicate edges.
    pub fn new(a_set: GridSet1D, b_set: GridSet1D, edges: impl IntoIterator<Item = (i64, i64)>) -> Result<Self> {
        same_m(&a_set, &b_set)?;
        let set: BTreeSet<(i64, i64)> = edges.into_iter().collect();
        for &(i, j) in &set {
            if !a_set.contains(i) || !b_set.contains(j) {
                return Err(Error::Domain(format!("edge ({i},{j}) has an endpoint outside A × B")));
            }
        }
        Ok(PairGraph { a_set, b_set, edges: set.into_iter().collect() })
    }

    pub fn complete(a_set: GridSet1D, b_set: GridSet1D) -> Result<Self> {
        let edges: Vec<_> = a_set.cells().flat_map(|i| b_set.cells().map(move |j| (i, j))).collect();
        Self::new(a_set, b_set, edges)
    }

    pub fn a_set(&self) -> &GridSet1D {
        &self.a_set
    }
    pub fn b_set(&self) -> &GridSet1D {
        &self.b_set
    }
    pub fn edges(&self) -> &[(i64, i64)] {
        &self.edges
    }
}

/// `A +_G B = {i + j : (i, j) ∈ G}` on `[lo_A + lo_B, hi_A + hi_B − 1)`.
pub fn restricted_sumset(g: &PairGraph) -> Result<GridSet1D> {
    let (a, b) = (&g.a_set, &g.b_set);
    let mut out = GridSet1D::empty(a.m(), a.lo() + b.lo(), a.hi() + b.hi() - 1)?;
    for &(i, j) in &g.edges {
        out.insert(i + j);
    }
    Ok(out)
}

/// Constants of the extraction contract: `#A' ≥ #A/(C₀K)`, `#B' ≥ #B/(C₀K)`,
/// `#(A'+B') ≤ C₀ K^{c₀} #A^{1/2} #B^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsgConstants {
    pub c0: f64,
    pub exponent: f64,
}

impl Default for BsgConstants {
    fn default() -> Self {
        BsgConstants { c0: 4096.0, exponent: 5.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractionPath {
    PathCounting,
    CandidateScan,
}

/// `(#A'/#A, #B'/#B, #(A'+B')/(#A^{1/2} #B^{1/2}))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsgRatios {
    pub a: f64,
    pub b: f64,
    pub sum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BsgResult {
    pub a_prime: GridSet1D,
    pub b_prime: GridSet1D,
    pub k: f64,
    pub achieved: BsgRatios,
    pub path: ExtractionPath,
}

/// Recomputes the achieved ratios of a candidate pair.
pub fn bsg_ratios(a: &GridSet1D, b: &GridSet1D, a_prime: &GridSet1D, b_prime: &GridSet1D) -> BsgRatios {
    let ac: Vec<i64> = a_prime.cells().collect();
    let bc: Vec<i64> = b_prime.cells().collect();
    let s = index_sumset(&ac, &bc).len() as f64;
    let (na, nb) = (a.count() as f64, b.count() as f64);
    BsgRatios { a: ac.len() as f64 / na, b: bc.len() as f64 / nb, sum: s / (na.sqrt() * nb.sqrt()) }
}

/// Whether `(A', B')` satisfies the extraction contract for richness `k`.
pub fn bsg_contract_holds(a: &GridSet1D, b: &GridSet1D, a_prime: &GridSet1D, b_prime: &GridSet1D, k: f64, c: &BsgConstants) -> bool {
    if a_prime.is_empty() || b_prime.is_empty() || !a_prime.is_subset_of(a) || !b_prime.is_subset_of(b) {
        return false;
    }
    let r = bsg_ratios(a, b, a_prime, b_prime);
    r.a >= 1.0 / (c.c0 * k) && r.b >= 1.0 / (c.c0 * k) && r.sum <= c.c0 * k.powf(c.exponent)
}

/// Constructive Balog–Szemerédi–Gowers extraction.
///
/// The primary route is the popularity/path-counting argument: keep popular
/// vertices of `A`, choose a pivot `b` whose neighbourhood has few pairs with
/// small common neighbourhood, prune vertices in many such pairs, then keep
/// the vertices of `B` that see a constant fraction of what remains. When that
/// candidate misses the contract and `#A·#B ≤ 2¹⁶`, every pivot/threshold
/// candidate plus `(A, B)` itself is scanned.
pub fn bsg_extract(g: &PairGraph, k: f64, consts: &BsgConstants) -> Result<BsgResult> {
    let (a, b) = (&g.a_set, &g.b_set);
    let (na, nb) = (a.count(), b.count());
    if !(k >= 1.0) {
        return Err(Error::Parameter(format!("K = {k} < 1")));
    }
    let ne = g.edges.len();
    if na == 0 || nb == 0 || !(ne as f64 > (na * nb) as f64 / k) {
        return Err(Error::Hypothesis(format!("#(G) > #(A)#(B)/K fails: {ne} ≤ {}", (na * nb) as f64 / k)));
    }
    let rs = restricted_sumset(g)?.count();
    let cap = k * (na as f64).sqrt() * (nb as f64).sqrt();
    if rs as f64 > cap {
        return Err(Error::Hypothesis(format!("#(A +_G B) ≤ K #(A)^1/2 #(B)^1/2 fails: {rs} > {cap}")));
    }

    let ac: Vec<i64> = a.cells().collect();
    let bc: Vec<i64> = b.cells().collect();
    let a_rank = |i: i64| ac.binary_search(&i).expect("edge endpoint in A");
    let b_rank = |j: i64| bc.binary_search(&j).expect("edge endpoint in B");
    let mut nbr_a = vec![Bits::new(nb); na];
    let mut nbr_b = vec![Bits::new(na); nb];
    for &(i, j) in &g.edges {
        let (ia, jb) = (a_rank(i), b_rank(j));
        nbr_a[ia].set(jb);
        nbr_b[jb].set(ia);
    }
    let alpha = ne as f64 / (na * nb) as f64;
    let popular: Vec<usize> = (0..na).filter(|&x| nbr_a[x].count_ones() as f64 >= alpha * nb as f64 / 2.0).collect();
    let codeg_floor = alpha * alpha * nb as f64 / (8.0 * k);

    let build = |xs: &[usize], ys: &[usize]| -> Result<(GridSet1D, GridSet1D)> {
        let ap = GridSet1D::from_cells(a.m(), a.lo(), a.hi(), xs.iter().map(|&x| ac[x]))?;
        let bp = GridSet1D::from_cells(b.m(), b.lo(), b.hi(), ys.iter().map(|&y| bc[y]))?;
        Ok((ap, bp))
    };
    let candidate = |pivot: usize, degree_frac: f64| -> (Vec<usize>, Vec<usize>) {
        let x: Vec<usize> = popular.iter().copied().filter(|&v| nbr_b[pivot].get(v)).collect();
        let bad_deg: Vec<usize> = x
            .iter()
            .map(|&u| x.iter().filter(|&&v| (nbr_a[u].intersection_count(&nbr_a[v]) as f64) < codeg_floor).count())
            .collect();
        let a1: Vec<usize> = x.iter().zip(&bad_deg).filter(|(_, &d)| 2 * d <= x.len()).map(|(&u, _)| u).collect();
        let mut mask = Bits::new(na);
        for &u in &a1 {
            mask.set(u);
        }
        let b1: Vec<usize> = (0..nb)
            .filter(|&y| !a1.is_empty() && nbr_b[y].intersection_count(&mask) as f64 >= degree_frac * alpha * a1.len() as f64)
            .collect();
        (a1, b1)
    };

    // Pivot: the vertex of B with the most popular neighbours; ties by index.
    let pivot = (0..nb)
        .max_by_key(|&y| (popular.iter().filter(|&&v| nbr_b[y].get(v)).count(), std::cmp::Reverse(y)))
        .expect("B nonempty");
    let (xs, ys) = candidate(pivot, 0.25);
    let (ap, bp) = build(&xs, &ys)?;
    if bsg_contract_holds(a, b, &ap, &bp, k, consts) {
        let achieved = bsg_ratios(a, b, &ap, &bp);
        return Ok(BsgResult { a_prime: ap, b_prime: bp, k, achieved, path: ExtractionPath::PathCounting });
    }
    if na * nb <= 1 << 16 {
        let mut cands: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
        for y in 0..nb {
            for frac in [0.25, 0.125, 0.0] {
                cands.push(candidate(y, frac));
            }
        }
        cands.push(((0..na).collect(), (0..nb).collect()));
        for (xs, ys) in cands {
            let (ap, bp) = build(&xs, &ys)?;
            if bsg_contract_holds(a, b, &ap, &bp, k, consts) {
                let achieved = bsg_ratios(a, b, &ap, &bp);
                return Ok(BsgResult { a_prime: ap, b_prime: bp, k, achieved, path: ExtractionPath::CandidateScan });
            }
        }
    }
    Err(Error::Hypothesis("no candidate pair satisfies the extraction contract".into()))
}

fn quarter_half(a: &GridSet1D) -> Result<()> {
    let m = a.m();
    if m < 2 || a.lo() != 1 << (m - 2) || a.hi() != 1 << (m - 1) {
        return Err(Error::Domain("A must live on [1/4, 1/2)".into()));
    }
    Ok(())
}

/// `A_z = A/z ∩ (1 − A/z)` on `[0, 1)` for `A ⊂ [1/4, 1/2)` and `z ∈ [1/2, 1)`.
pub fn az_construct(a: &GridSet1D, z: Rational) -> Result<GridSet1D> {
    quarter_half(a)?;
    if a.is_empty() {
        return Err(Error::Empty("az_construct of empty set".into()));
    }
    if z < Rational::new(1, 2) || z >= Rational::from_integer(1) {
        return Err(Error::Domain(format!("z = {z} not in [1/2, 1)")));
    }
    let unit = 1i64 << a.m();
    let inv = z.recip();
    let over = affine_image(a, inv, Rational::zero())?.reframe(0, unit)?;
    let flip = affine_image(a, -inv, Rational::from_integer(1))?.reframe(0, unit)?;
    over.intersect(&flip)
}

/// Checks `A_z·A_z ⊂ N₁(A·A/z²)` and `(1−A_z)(1−A_z) ⊂ N₁(A·A/z²)`, where
/// `N₁` inflates by one cell.
pub fn az_containments(a: &GridSet1D, z: Rational, az: &GridSet1D) -> Result<(bool, bool)> {
    if az.is_empty() {
        return Ok((true, true));
    }
    let unit = 1i64 << a.m();
    let aa = productset(a, a)?;
    let target = affine_image(&aa, (z * z).recip(), Rational::zero())?;
    let target = target.reframe(target.lo().min(0), target.hi().max(unit))?.inflate(1);
    let p1 = productset(az, az)?;
    let one_minus = affine_image(az, Rational::from_integer(-1), Rational::from_integer(1))?.reframe(0, unit)?;
    let p2 = productset(&one_minus, &one_minus)?;
    Ok((p1.is_subset_of(&target), p2.is_subset_of(&target)))
}

/// How `e^a` is snapped to the δ-grid when moving to logarithmic coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LogRounding {
    #[default]
    Nearest,
    Floor,
}

/// Logarithmic discretization `{round(ln x / δ)}` over member cell centres,
/// on the aligned hull of `ln` of the domain. Requires `lo > 0`.
pub fn log_discretize(a: &GridSet1D, mode: LogRounding) -> Result<GridSet1D> {
    if a.lo() <= 0 {
        return Err(Error::Domain("log_discretize needs a positive domain".into()));
    }
    let d = a.delta();
    let snap = |v: f64| match mode {
        LogRounding::Nearest => v.round(),
        LogRounding::Floor => v.floor(),
    } as i64;
    let lo = ((a.lo() as f64 * d).ln() / d).floor() as i64 - 1;
    let hi = ((a.hi() as f64 * d).ln() / d).ceil() as i64 + 1;
    let mut out = GridSet1D::empty(a.m(), lo, hi)?;
    for i in a.cells() {
        out.insert(snap((((i as f64) + 0.5) * d).ln() / d));
    }
    Ok(out)
}

/// Largest value of `|x|` over a rational slice, used by callers that size domains.
pub fn max_abs(v: &[Rational]) -> Rational {
    v.iter().map(|x| x.abs()).max().unwrap_or_else(Rational::zero)
}
