//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_UNATTAINABLE` are expected to fail; the run
//! exits nonzero if any other criterion fails or if one of those passes.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pencil_core::arith::{
    bsg_contract_holds, bsg_extract, difference_set, productset, quotientset, restricted_sumset, sumset, BsgConstants, ExtractionPath, PairGraph,
};
use pencil_core::constructions::{ap_set, cantor_set, gp_set, CantorSpec};
use pencil_core::experiments::{self, collinear_measure, tube_condition_reference, ExperimentConfig, Outcome, EXPERIMENTS};
use pencil_core::radial::{direction_set, pinned_exponent, radial_project, ExponentReport};
use pencil_core::tube::{intersection_measure, rasterize_pencil, rasterize_tube, Line, Pencil, ProjPoint, Tube};
use pencil_core::{CheckResult, Domain2D, GridSet1D, GridSet2D, NonConcentrationSpec, Witness};

/// The GP half of the dichotomy fixtures: six cells have at most 21 pairwise
/// sums, each spilling into two cells, so |A+A| ≤ 42 < 48 = 8|A|.
const KNOWN_UNATTAINABLE: &[u32] = &[10];

const FROZEN_RETAINED_MASS: f64 = 1.0;
const FROZEN_K0: u32 = 2;
const FROZEN_DIRECTION_SLOPE: f64 = 1.0;
const FROZEN_PINNED_SLOPE: f64 = 0.7755724642335172;

type Verdict = (bool, String);

// ---------- oracles ----------

fn cells(g: &GridSet1D) -> Vec<i64> {
    g.cells().collect()
}

fn sum_oracle(a: &[i64], b: &[i64]) -> BTreeSet<i64> {
    let mut s = BTreeSet::new();
    for &i in a {
        for &j in b {
            s.insert(i + j);
            s.insert(i + j + 1);
        }
    }
    s
}

fn diff_oracle(a: &[i64], b: &[i64]) -> BTreeSet<i64> {
    let mut s = BTreeSet::new();
    for &i in a {
        for &j in b {
            s.insert(i - j - 1);
            s.insert(i - j);
        }
    }
    s
}

/// Cells `k` with `[k, k+1)·2^-m` meeting `[i, i+1)·[j, j+1)·2^-2m`.
fn prod_oracle(a: &[i64], b: &[i64], m: u32) -> BTreeSet<i64> {
    let u = 1i128 << m;
    let mut s = BTreeSet::new();
    for &i in a {
        for &j in b {
            let (i, j) = (i as i128, j as i128);
            for k in (i * j / u - 1)..=((i + 1) * (j + 1) / u + 1) {
                if (k + 1) * u > i * j && k * u < (i + 1) * (j + 1) {
                    s.insert(k as i64);
                }
            }
        }
    }
    s
}

/// Cells `k` meeting `[i, i+1) / [j, j+1)`, i.e. the open interval `(i/(j+1), (i+1)/j)`.
fn quot_oracle(a: &[i64], b: &[i64], m: u32) -> BTreeSet<i64> {
    let u = 1i128 << m;
    let mut s = BTreeSet::new();
    for &i in a {
        for &j in b {
            let (i, j) = (i as i128, j as i128);
            for k in (i * u / (j + 1) - 1)..=((i + 1) * u / j + 1) {
                if (k + 1) * (j + 1) > i * u && k * j < (i + 1) * u {
                    s.insert(k as i64);
                }
            }
        }
    }
    s
}

fn raster_oracle(l: &Line, r: f64, dom: &Domain2D) -> Vec<(i64, i64)> {
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

/// Open wedge `(a0, a1)` from `y` against a closed rectangle.
fn wedge_meets(y: (f64, f64), a0: f64, a1: f64, r: (f64, f64, f64, f64)) -> bool {
    let inside = |ang: f64| {
        let t = (ang - a0).rem_euclid(2.0 * PI);
        t > 0.0 && t < a1 - a0
    };
    let corners = [(r.0, r.2), (r.1, r.2), (r.0, r.3), (r.1, r.3)];
    if corners.iter().any(|&(x, z)| inside((z - y.1).atan2(x - y.0))) {
        return true;
    }
    let mid = 0.5 * (a0 + a1);
    let (dx, dy) = (mid.cos(), mid.sin());
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for (o, dd, lo, hi) in [(y.0, dx, r.0, r.1), (y.1, dy, r.2, r.3)] {
        if dd.abs() < 1e-15 {
            if o < lo || o > hi {
                return false;
            }
        } else {
            let (u, v) = ((lo - o) / dd, (hi - o) / dd);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
    }
    t0 <= t1 && t1 > 0.0
}

fn radial_oracle(y: (f64, f64), s: &GridSet2D) -> Vec<i64> {
    let d = s.delta();
    let n = 1i64 << s.m();
    (0..n)
        .filter(|&k| {
            let (a0, a1) = (2.0 * PI * k as f64 / n as f64, 2.0 * PI * (k + 1) as f64 / n as f64);
            s.cells().any(|c| wedge_meets(y, a0, a1, (c.0 as f64 * d, (c.0 + 1) as f64 * d, c.1 as f64 * d, (c.1 + 1) as f64 * d)))
        })
        .collect()
}

/// Direction cover by brute force over ordered pairs of distinct cells.
fn direction_oracle(e: &GridSet2D) -> BTreeSet<i64> {
    let n = 1i64 << e.m();
    let scale = n as f64 / (2.0 * PI);
    let cs: Vec<(i64, i64)> = e.cells().collect();
    let mut out = BTreeSet::new();
    let mut seen = BTreeSet::new();
    for &a in &cs {
        for &b in &cs {
            let (dx, dy) = (a.0 - b.0, a.1 - b.1);
            if (dx, dy) == (0, 0) || !seen.insert((dx, dy)) {
                continue;
            }
            let (fx, fy) = (dx as f64, dy as f64);
            let base = fy.atan2(fx);
            let mut angs = Vec::new();
            for (cx, cy) in [(fx - 1.0, fy - 1.0), (fx + 1.0, fy - 1.0), (fx - 1.0, fy + 1.0), (fx + 1.0, fy + 1.0)] {
                if cx != 0.0 || cy != 0.0 {
                    let t = (cy.atan2(cx) - base + PI).rem_euclid(2.0 * PI) - PI;
                    angs.push(base + t);
                }
            }
            let lo = angs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = angs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for k in (lo * scale).floor() as i64..(hi * scale).ceil() as i64 {
                out.insert(k.rem_euclid(n));
            }
        }
    }
    out
}

fn covering_oracle(members: &BTreeSet<i64>, m: u32, j: u32) -> f64 {
    members.iter().map(|&k| k >> (m - j)).collect::<BTreeSet<_>>().len() as f64
}

fn slope_oracle(js: &[u32], counts: &[f64]) -> (f64, f64) {
    let xs: Vec<f64> = js.iter().map(|&j| j as f64).collect();
    let ys: Vec<f64> = counts.iter().map(|c| c.log2()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let b = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let a = my - b * mx;
    (b, xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).abs()).fold(0.0, f64::max))
}

fn nc1_oracle(s: &GridSet1D, spec: &NonConcentrationSpec) -> CheckResult<i64> {
    let mut r = 1u64;
    while r as usize <= s.len() {
        for a in (s.lo() - r as i64 + 1)..s.hi() {
            let c = (a..a + r as i64).filter(|&i| s.contains(i)).count() as u64;
            if c as f64 > spec.c * (r as f64).powf(spec.sigma) {
                return Err(Witness { start: a, r_cells: r, count: c, bound: spec.bound(r) });
            }
        }
        r *= 2;
    }
    Ok(())
}

fn nc2_oracle(s: &GridSet2D, spec: &NonConcentrationSpec) -> CheckResult<(i64, i64)> {
    let d = s.domain();
    let mut r = 1i64;
    while r as usize <= d.nx().max(d.ny()) {
        for ax in (d.x0 - r + 1)..d.x1 {
            for ay in (d.y0 - r + 1)..d.y1 {
                let c = (ax..ax + r).flat_map(|x| (ay..ay + r).map(move |y| (x, y))).filter(|&(x, y)| s.contains(x, y)).count() as u64;
                if c as f64 > spec.c * (r as f64).powf(spec.sigma) {
                    return Err(Witness { start: (ax, ay), r_cells: r as u64, count: c, bound: spec.bound(r as u64) });
                }
            }
        }
        r *= 2;
    }
    Ok(())
}

fn random_cells(rng: &mut ChaCha8Rng, lo: i64, hi: i64, max: usize) -> Vec<i64> {
    let k = rng.gen_range(1..=max);
    (0..k).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---------- criteria ----------

fn c1_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc1);
    let mut fails: Vec<String> = Vec::new();
    let mut note = |op: &str, k: usize, ok: bool| {
        if !ok {
            fails.push(format!("{op}#{k}"));
        }
    };
    for k in 0..200 {
        let m = rng.gen_range(3..=10u32);
        let n = 1i64 << m;
        let (alo, blo) = (rng.gen_range(0..n / 2), rng.gen_range(n / 8..n / 2));
        let a = GridSet1D::from_cells(m, alo, n, random_cells(&mut rng, alo, n, 40)).unwrap();
        let b = GridSet1D::from_cells(m, blo, n, random_cells(&mut rng, blo, n, 40)).unwrap();
        let (ac, bc) = (cells(&a), cells(&b));
        note("sumset", k, cells(&sumset(&a, &b).unwrap()).into_iter().collect::<BTreeSet<_>>() == sum_oracle(&ac, &bc));
        note("difference_set", k, cells(&difference_set(&a, &b).unwrap()).into_iter().collect::<BTreeSet<_>>() == diff_oracle(&ac, &bc));
        note("productset", k, cells(&productset(&a, &b).unwrap()).into_iter().collect::<BTreeSet<_>>() == prod_oracle(&ac, &bc, m));
        note("quotientset", k, cells(&quotientset(&a, &b).unwrap()).into_iter().collect::<BTreeSet<_>>() == quot_oracle(&ac, &bc, m));

        let dom = Domain2D::unit(m);
        let l = loop {
            let (p, q) = (rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0f64));
            if p.abs() + q.abs() > 1e-2 {
                break Line::from_f64(p, q, rng.gen_range(-1.0..1.0)).unwrap();
            }
        };
        let rad = dom.delta() * rng.gen_range(0.5..4.0);
        let t = Tube::new(l.clone(), rad).unwrap();
        note("rasterize_tube", k, rasterize_tube(&t, &dom).cells().collect::<Vec<_>>() == raster_oracle(&l, rad, &dom));

        let rm = rng.gen_range(3..=8u32);
        let rn = 1i64 << rm;
        let s = GridSet2D::from_cells(Domain2D::unit(rm), (0..rng.gen_range(1..12)).map(|_| (rng.gen_range(0..rn), rng.gen_range(0..rn)))).unwrap();
        let y = (rng.gen_range(1.2..2.5), rng.gen_range(-1.0..2.0));
        note("radial_project", k, cells(&radial_project(y, &s).unwrap()) == radial_oracle(y, &s));

        let spec = NonConcentrationSpec::new(rng.gen_range(0.2..1.0), rng.gen_range(1.0..4.0)).unwrap();
        let g = if rng.gen_bool(0.5) {
            a.clone()
        } else {
            let s0 = rng.gen_range(0..n / 2);
            GridSet1D::from_cells(m, 0, n, s0..s0 + rng.gen_range(1..n / 2)).unwrap()
        };
        note("nonconcentration_check 1D", k, g.nonconcentration_check(&spec) == nc1_oracle(&g, &spec));
        let m2 = rng.gen_range(2..=4u32);
        let n2 = 1i64 << m2;
        let g2 = GridSet2D::from_cells(Domain2D::unit(m2), (0..rng.gen_range(1..(n2 * n2) as usize)).map(|_| (rng.gen_range(0..n2), rng.gen_range(0..n2)))).unwrap();
        note("nonconcentration_check 2D", k, g2.nonconcentration_check(&spec) == nc2_oracle(&g2, &spec));
    }
    (fails.is_empty(), if fails.is_empty() { "7 operations × 200 instances match".into() } else { format!("mismatches: {}", fails.join(" ")) })
}

fn c2_trivial_bound() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [8u32, 10, 12] {
        let n = 1usize << (m / 2 - 2);
        let x = collinear_measure(n, m).unwrap();
        let d2 = 4f64.powi(-(m as i32));
        let n2 = (n * n) as f64;
        let pass = x >= n2 * d2 / 4.0 && x <= 64.0 * n2 * d2;
        ok &= pass;
        parts.push(format!("m={m} n={n} measure/(n²δ²)={}", x / (n2 * d2)));
    }
    (ok, parts.join("; "))
}

fn c3_transversality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc3);
    let m = 6;
    let dom = Domain2D::unit(m);
    let d = dom.delta();
    let mut worst = 0.0f64;
    let mut violations = 0;
    for _ in 0..100 {
        let p1 = Pencil::new(ProjPoint::int(-1, rng.gen_range(-1..=2)), GridSet1D::from_cells(m, 0, 64, (0..6).map(|_| rng.gen_range(54..64))).unwrap(), d).unwrap();
        let p2 = Pencil::new(ProjPoint::int(rng.gen_range(-1..=2), -1), GridSet1D::from_cells(m, 0, 64, (0..6).map(|_| rng.gen_range(22..42))).unwrap(), d).unwrap();
        let (t1, t2) = (p1.tubes().unwrap(), p2.tubes().unwrap());
        let mut theta0 = f64::INFINITY;
        for a in &t1 {
            for b in &t2 {
                theta0 = theta0.min((a.line.a * b.line.b - a.line.b * b.line.a).abs().asin());
            }
        }
        let x = intersection_measure(&[rasterize_pencil(&p1, &dom).unwrap(), rasterize_pencil(&p2, &dom).unwrap()]).unwrap();
        let bound = 16.0 * p1.directions.count() as f64 * p2.directions.count() as f64 * d * d / theta0;
        violations += (x > bound) as usize;
        worst = worst.max(x / bound);
    }
    (violations == 0, format!("{violations} violations in 100; max measure/bound = {worst:.3}"))
}

fn assertion(o: &Outcome, name: &str) -> Verdict {
    let a = o.assertions.iter().find(|a| a.name == name).unwrap_or_else(|| panic!("no assertion `{name}`"));
    (a.passed, format!("{}: {}", a.name, a.detail))
}

fn both(a: Verdict, b: Verdict) -> Verdict {
    (a.0 && b.0, format!("{}; {}", a.1, b.1))
}

fn c7_bsg() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc7);
    let c = BsgConstants::default();
    let mut fixtures: Vec<(String, PairGraph, f64)> = Vec::new();
    for n in [8usize, 16, 32, 64] {
        let ap = ap_set(n, 8, 10).unwrap();
        fixtures.push((format!("ap{n}-complete"), PairGraph::complete(ap.clone(), ap.clone()).unwrap(), 4.0));
        let ac = cells(&ap);
        let edges: Vec<(i64, i64)> = ac.iter().flat_map(|&i| ac.iter().map(move |&j| (i, j))).filter(|_| rng.gen_bool(0.6)).collect();
        fixtures.push((format!("ap{n}-random"), PairGraph::new(ap.clone(), ap, edges).unwrap(), 4.0));
    }
    let gp = gp_set(num::rational::Ratio::new(1, 2), 6, 12).unwrap();
    fixtures.push(("gp6-complete".into(), PairGraph::complete(gp.clone(), gp).unwrap(), 8.0));
    for k in 0..12 {
        let a = GridSet1D::from_cells(10, 0, 1024, random_cells(&mut rng, 0, 1024, 64)).unwrap();
        let b = GridSet1D::from_cells(10, 0, 1024, random_cells(&mut rng, 0, 1024, 64)).unwrap();
        let g = PairGraph::complete(a.clone(), b.clone()).unwrap();
        let rs = restricted_sumset(&g).unwrap().count() as f64;
        let kk = (rs / ((a.count() * b.count()) as f64).sqrt()).ceil().max(2.0) + 1.0;
        fixtures.push((format!("random{k}"), g, kk));
    }
    let mut bad = Vec::new();
    let mut scans = 0;
    for (name, g, k) in &fixtures {
        let (a, b) = (g.a_set(), g.b_set());
        let (na, nb) = (a.count() as f64, b.count() as f64);
        let hyp = g.edges().len() as f64 > na * nb / k && restricted_sumset(g).unwrap().count() as f64 <= k * (na * nb).sqrt();
        if !hyp || a.count() > 64 || b.count() > 64 {
            bad.push(format!("{name}: fixture misses hypotheses"));
            continue;
        }
        match bsg_extract(g, *k, &c) {
            Ok(r) => {
                // Independent recomputation of the three inequalities.
                let (ap, bp) = (cells(&r.a_prime), cells(&r.b_prime));
                let sums: BTreeSet<i64> = ap.iter().flat_map(|&i| bp.iter().map(move |&j| i + j)).collect();
                let ok = r.a_prime.is_subset_of(a)
                    && r.b_prime.is_subset_of(b)
                    && ap.len() as f64 >= na / (c.c0 * k)
                    && bp.len() as f64 >= nb / (c.c0 * k)
                    && sums.len() as f64 <= c.c0 * k.powf(c.exponent) * (na * nb).sqrt();
                if !ok || !bsg_contract_holds(a, b, &r.a_prime, &r.b_prime, *k, &c) {
                    bad.push(format!("{name}: contract fails"));
                }
                scans += (r.path == ExtractionPath::CandidateScan) as usize;
            }
            Err(e) => bad.push(format!("{name}: {e}")),
        }
        // Exhaustive certificate: the full pair is a candidate of the scan.
        if !bsg_contract_holds(a, b, a, b, *k, &c) {
            bad.push(format!("{name}: no certified pair"));
        }
    }
    (bad.is_empty(), format!("{} fixtures, {} via candidate scan; {}", fixtures.len(), scans, if bad.is_empty() { "all contracts hold".into() } else { bad.join(", ") }))
}

/// Largest family-tube mass at scale `2^-e` by direct line-distance tests.
fn max_family_mass(cells: &[((i64, i64), f64)], m: u32, e: u32, dom: &Domain2D) -> f64 {
    let d = 2f64.powi(-(m as i32));
    let dk = 2f64.powi(-(e as i32));
    let r = 2.0 * dk;
    let (x0, x1, y0, y1) = dom.bounds();
    let reach = x0.abs().max(x1.abs()).hypot(y0.abs().max(y1.abs()));
    let c_min = -reach - r;
    let h = dk / 2.0;
    let n_off = ((2.0 * (reach + r)) / h).ceil() as usize + 1;
    let mut best = 0.0f64;
    for i in 0..(8usize << e) {
        let th = PI * i as f64 * dk / 8.0;
        let (a, b) = (-th.sin(), th.cos());
        let mut proj: Vec<(f64, usize)> = cells.iter().enumerate().map(|(k, c)| (a * (c.0 .0 as f64 + 0.5) * d + b * (c.0 .1 as f64 + 0.5) * d, k)).collect();
        proj.sort_by(|p, q| p.0.total_cmp(&q.0));
        for j in 0..n_off {
            let c = c_min + j as f64 * h;
            let lo = proj.partition_point(|p| p.0 < c - r - d);
            let hi = proj.partition_point(|p| p.0 < c + r + d);
            if lo == hi {
                continue;
            }
            let t = Tube::new(Line::from_f64(a, b, -c).unwrap(), r).unwrap();
            let mass: f64 = proj[lo..hi]
                .iter()
                .map(|p| cells[p.1])
                .filter(|((x, y), _)| t.meets_rect(*x as f64 * d, (*x + 1) as f64 * d, *y as f64 * d, (*y + 1) as f64 * d))
                .map(|c| c.1)
                .sum();
            best = best.max(mass);
        }
    }
    best
}

fn c8_tube_condition() -> Verdict {
    let cfg = ExperimentConfig::new("tube-condition");
    let (p, mask, cert) = tube_condition_reference(&cfg).unwrap();
    let mbad = cert.scales.iter().all(|s| (s.mu_side.mbad.max(s.nu_side.mbad) as f64) <= s.mbad_bound);
    // Oracle: no family tube is bad at any ladder scale, so nothing is removed.
    let (mu, nu) = experiments::reference_measures().unwrap();
    let dom = mu.domain();
    let mut oracle_mass = 1.0;
    for &e in &p.ladder().unwrap() {
        let cap = 2f64.powi(-(e as i32)).powf(p.eta);
        let worst = max_family_mass(&mu.cells(), dom.m, e, &dom).max(max_family_mass(&nu.cells(), dom.m, e, &dom));
        if worst > cap {
            oracle_mass = f64::NAN;
        }
    }
    let mass = mask.retained_mass();
    let ok = cert.violations == 0
        && mbad
        && cert.mbad_ok
        && p.k0 == FROZEN_K0
        && (mass - FROZEN_RETAINED_MASS).abs() <= 1e-9
        && (oracle_mass - FROZEN_RETAINED_MASS).abs() <= 1e-9;
    (ok, format!("k0={} violations={} M-Bad bound ok={} retained mass={mass} (frozen {FROZEN_RETAINED_MASS}, oracle {oracle_mass})", p.k0, cert.violations, mbad))
}

fn c9_direction_exponent(o: &Outcome) -> Verdict {
    let js: Vec<u32> = (2..=8).collect();
    let c = cantor_set(&CantorSpec::middle_half(5)).unwrap();
    let e = GridSet2D::product(&c, &c).unwrap();
    let s = direction_set(&e).unwrap();
    let full = pencil_core::radial::covering_exponent(&s, &js.iter().map(|&j| j as i32).collect::<Vec<_>>()).unwrap();
    let pinned: ExponentReport = pinned_exponent((2.0, 2.0), &e, &js.iter().map(|&j| j as i32).collect::<Vec<_>>()).unwrap();
    let dir_o = direction_oracle(&e);
    let pin_o: BTreeSet<i64> = radial_oracle((2.0, 2.0), &e).into_iter().collect();
    let dc: Vec<f64> = js.iter().map(|&j| covering_oracle(&dir_o, 10, j)).collect();
    let pc: Vec<f64> = js.iter().map(|&j| covering_oracle(&pin_o, 10, j)).collect();
    let (ds, dr) = slope_oracle(&js, &dc);
    let (ps, _) = slope_oracle(&js, &pc);
    let counts_ok = dc == full.counts && pc == pinned.counts;
    let frozen_ok = (full.slope - FROZEN_DIRECTION_SLOPE).abs() <= 1e-9 && (pinned.slope - FROZEN_PINNED_SLOPE).abs() <= 1e-9;
    let oracle_ok = (ds - full.slope).abs() <= 1e-9 && (ps - pinned.slope).abs() <= 1e-9 && (dr - full.max_residual).abs() <= 1e-9;
    let crit = full.slope >= 0.5 && full.max_residual <= 0.15 && pinned.slope >= 0.4;
    let exp_ok = o.passed();
    (
        counts_ok && frozen_ok && oracle_ok && crit && exp_ok,
        format!("S(E) slope={} residual={}; pinned slope={}; oracle counts match={counts_ok}", full.slope, full.max_residual, pinned.slope),
    )
}

fn c10_dichotomy() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut check = |label: &str, a: &GridSet1D, sum_le: Option<usize>, prod_ge: Option<usize>, sum_ge: Option<usize>, prod_le: Option<usize>, max_ge: Option<usize>| {
        let (ac, m) = (cells(a), a.m());
        let s = sumset(a, a).unwrap().count();
        let p = productset(a, a).unwrap().count();
        assert_eq!(s, sum_oracle(&ac, &ac).len(), "{label} sumset oracle");
        assert_eq!(p, prod_oracle(&ac, &ac, m).len(), "{label} productset oracle");
        let n = a.count();
        let mut pass = true;
        if let Some(k) = sum_le {
            pass &= s <= k * n;
        }
        if let Some(k) = prod_ge {
            pass &= p >= k * n;
        }
        if let Some(k) = sum_ge {
            pass &= s >= k * n;
        }
        if let Some(k) = prod_le {
            pass &= p <= k * n;
        }
        if let Some(k) = max_ge {
            pass &= s.max(p) >= k * n;
        }
        ok &= pass;
        parts.push(format!("{label} |A|={n} |A+A|={s} |AA|={p} {}", if pass { "ok" } else { "fails" }));
    };
    check("AP16", &ap_set(16, 256, 12).unwrap(), Some(4), Some(8), None, None, None);
    check("GP6", &gp_set(num::rational::Ratio::new(1, 2), 6, 12).unwrap(), None, None, Some(8), Some(4), None);
    check("Cantor", &cantor_set(&CantorSpec::middle_half(6)).unwrap(), None, None, None, None, Some(8));
    (ok, parts.join("; "))
}

fn c11_determinism(first: &[(String, Outcome)]) -> Verdict {
    let mut diff = Vec::new();
    for (name, o) in first {
        let again = experiments::run(&ExperimentConfig::new(name)).unwrap();
        if again.csv != o.csv {
            diff.push(name.clone());
        }
    }
    (diff.is_empty(), if diff.is_empty() { format!("{} experiments byte-identical", first.len()) } else { format!("differs: {}", diff.join(", ")) })
}

fn main() {
    let t0 = Instant::now();
    let runs: Vec<(String, Outcome)> = EXPERIMENTS.iter().map(|n| (n.to_string(), experiments::run(&ExperimentConfig::new(n)).expect("experiment runs"))).collect();
    let out = |n: &str| &runs.iter().find(|r| r.0 == n).unwrap().1;

    type Job<'a> = (u32, &'a str, Box<dyn FnOnce() -> Verdict + 'a>);
    let jobs: Vec<Job> = vec![
        (1, "oracle equivalence", Box::new(c1_oracles)),
        (2, "trivial-bound reproduction", Box::new(c2_trivial_bound)),
        (3, "transversality upper bound", Box::new(c3_transversality)),
        (4, "four-pencil product containment", Box::new(|| assertion(out("equiv-constructions"), "product containment"))),
        (
            5,
            "A_z identities and convolution peak",
            Box::new(|| both(assertion(out("equiv-constructions"), "A_z product containments"), assertion(out("equiv-constructions"), "convolution peak >= #A²/#(A+A)"))),
        ),
        (6, "Katz-Tao refinement", Box::new(|| both(assertion(out("kt-refine"), "cover property"), assertion(out("kt-refine"), "A* non-concentration")))),
        (7, "BSG contract", Box::new(c7_bsg)),
        (8, "tube-condition refinement", Box::new(c8_tube_condition)),
        (9, "direction-set exponent", Box::new(|| c9_direction_exponent(out("direction-exponent")))),
        (10, "sum-product dichotomy fixtures", Box::new(c10_dichotomy)),
        (11, "determinism", Box::new(|| c11_determinism(&runs))),
    ];
    let mut unexpected = Vec::new();
    for (id, name, job) in jobs {
        let t = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(job)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        let known = KNOWN_UNATTAINABLE.contains(&id);
        println!(
            "{} criterion {id:>2} ({name}): {detail} [{:.1}s]{}",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            if known { " (documented as unattainable)" } else { "" }
        );
        if pass == known {
            unexpected.push(id);
        }
    }
    println!("acceptance finished in {:.1}s", t0.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
