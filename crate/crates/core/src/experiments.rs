//! Named experiments with CSV output and declared assertions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num::rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arith::{az_construct, az_containments, convolution_peak, productset, sumset, Rational};
use crate::constructions::{ap_set, cantor_set, collinear_tip_config, gp_set, product_containment, product_pencils, CantorSpec};
use crate::error::{Error, Result};
use crate::grid::{Domain2D, GridSet1D, GridSet2D, NonConcentrationSpec};
use crate::radial::{
    covering_exponent, direction_preimage_mass, direction_set, exponent_fit, pinned_exponent, tube_condition_refine, DiscreteMeasure2D,
    ExponentReport, GoodPairMask, TubeCertificate, TubeConditionParams,
};
use crate::refine::{kt_refine, RefineParams};
use crate::tube::{intersection_measure, rasterize_pencil};

pub const EXPERIMENTS: [&str; 7] =
    ["sumprod-growth", "pencil-intersect", "trivial-bound", "equiv-constructions", "kt-refine", "tube-condition", "direction-exponent"];

/// Experiment name, flat parameters and output directory.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ExperimentConfig {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(name: &str) -> Self {
        ExperimentConfig { name: name.to_string(), ..Default::default() }
    }

    /// `key=value` lines; `#` starts a comment. `experiment=` sets the name
    /// and `out=` the output directory.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            c.set_pair(line)?;
        }
        Ok(c)
    }

    pub fn set_pair(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("expected key=value, got `{kv}`")))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "experiment" => self.name = v.to_string(),
            "out" => self.out = Some(PathBuf::from(v)),
            _ => {
                self.params.insert(k.to_string(), v.to_string());
            }
        }
        Ok(())
    }

    pub fn set(&mut self, k: &str, v: impl ToString) {
        self.params.insert(k.to_string(), v.to_string());
    }

    fn raw(&self, k: &str) -> Option<&str> {
        self.params.get(k).map(String::as_str)
    }

    pub fn get<T: std::str::FromStr>(&self, k: &str, default: T) -> Result<T> {
        match self.raw(k) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Parameter(format!("bad value `{v}` for `{k}`"))),
        }
    }

    pub fn get_list<T: std::str::FromStr>(&self, k: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
    {
        match self.raw(k) {
            None => Ok(default.to_vec()),
            Some(v) => v.split(',').map(|s| s.trim().parse().map_err(|_| Error::Parameter(format!("bad list item `{s}` for `{k}`")))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub csv: String,
    pub svg: Option<String>,
    pub summary: String,
    pub assertions: Vec<Assertion>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn failures(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }

    /// Writes `<name>.csv`, `<name>.svg` and `<name>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{}.csv", self.name)), &self.csv)?;
        if let Some(svg) = &self.svg {
            fs::write(dir.join(format!("{}.svg", self.name)), svg)?;
        }
        fs::write(dir.join(format!("{}.txt", self.name)), &self.summary)?;
        Ok(())
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(cols: &[&str]) -> Self {
        Table { header: cols.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    fn column(&self, name: &str) -> Vec<f64> {
        let k = self.header.iter().position(|h| h == name).expect("known column");
        self.rows.iter().map(|r| r[k].parse().unwrap_or(f64::NAN)).collect()
    }
}

macro_rules! row {
    ($($e:expr),* $(,)?) => { vec![$($e.to_string()),*] };
}

struct Run {
    assertions: Vec<Assertion>,
    notes: Vec<String>,
}

impl Run {
    fn new() -> Self {
        Run { assertions: Vec::new(), notes: Vec::new() }
    }

    fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion { name: name.to_string(), passed, detail: detail.into() });
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn finish(self, name: &str, table: Table, plot: Option<(&str, &[&str])>) -> Outcome {
        let svg = plot.map(|(x, ys)| {
            let series: Vec<(String, Vec<f64>)> = ys.iter().map(|y| (y.to_string(), table.column(y))).collect();
            svg_plot(name, x, &table.column(x), &series)
        });
        let mut summary = format!("experiment {name}\n");
        for n in &self.notes {
            writeln!(summary, "{n}").unwrap();
        }
        for a in &self.assertions {
            writeln!(summary, "{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail).unwrap();
        }
        Outcome { name: name.to_string(), csv: table.csv(), svg, summary, assertions: self.assertions }
    }
}

pub fn run(c: &ExperimentConfig) -> Result<Outcome> {
    match c.name.as_str() {
        "sumprod-growth" => sumprod_growth(c),
        "pencil-intersect" => pencil_intersect(c),
        "trivial-bound" => trivial_bound(c),
        "equiv-constructions" => equiv_constructions(c),
        "kt-refine" => kt_refine_exp(c),
        "tube-condition" => tube_condition(c),
        "direction-exponent" => direction_exponent(c),
        other => Err(Error::Parameter(format!("unknown experiment `{other}`"))),
    }
}

/// Growth fixtures at resolution `m`: `ap16`, `gp6`, `cantor` or `random`.
pub fn growth_fixture(kind: &str, m: u32, seed: u64) -> Result<GridSet1D> {
    match kind {
        "ap16" => {
            if m < 4 {
                return Err(Error::Parameter("ap16 needs m ≥ 4".into()));
            }
            ap_set(16, 1 << (m - 4), m)
        }
        "gp6" => gp_set(Ratio::new(1, 2), 6, m),
        "cantor" => {
            if m % 2 != 0 {
                return Err(Error::Parameter("cantor fixture needs even m".into()));
            }
            cantor_set(&CantorSpec::middle_half(m / 2))
        }
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ m as u64);
            let n = 1i64 << m;
            let k = 1usize << (m / 2);
            GridSet1D::from_cells(m, 0, n, (0..k).map(|_| rng.gen_range(0..n)))
        }
        _ => Err(Error::Parameter(format!("unknown fixture `{kind}`"))),
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn fit_note(run: &mut Run, label: &str, rep: &Result<ExponentReport>) {
    match rep {
        Ok(r) => run.note(format!("{label}: slope={} intercept={} max_residual={}", r.slope, r.intercept, r.max_residual)),
        Err(e) => run.note(format!("{label}: no fit ({e})")),
    }
}

fn sumprod_growth(c: &ExperimentConfig) -> Result<Outcome> {
    let fixture: String = c.get("fixture", "cantor".to_string())?;
    let seed: u64 = c.get("seed", 0)?;
    let ms: Vec<u32> = match c.raw("m") {
        Some(_) => vec![c.get("m", 12)?],
        None => c.get_list("ms", &[8, 10, 12])?,
    };
    let mut rows: Vec<(u32, usize, usize, usize)> = ms
        .par_iter()
        .map(|&m| {
            let a = growth_fixture(&fixture, m, seed)?;
            Ok((m, a.count(), sumset(&a, &a)?.count(), productset(&a, &a)?.count()))
        })
        .collect::<Result<_>>()?;
    rows.sort();
    let mut t = Table::new(&["m", "n_a", "n_sum", "n_prod", "sum_ratio", "prod_ratio", "max_ratio"]);
    let mut run = Run::new();
    let mut data = Vec::new();
    for &(m, n, s, p) in &rows {
        let (rs, rp) = (s as f64 / n as f64, p as f64 / n as f64);
        t.push(row![m, n, s, p, fmt_f(rs), fmt_f(rp), fmt_f(rs.max(rp))]);
        data.push((2f64.powi(-(m as i32)), rs.max(rp)));
        match fixture.as_str() {
            "ap16" => {
                run.check(&format!("m={m}: |A+A| <= 4|A|"), s <= 4 * n, format!("{s} vs {}", 4 * n));
                run.check(&format!("m={m}: |AA| >= 8|A|"), p >= 8 * n, format!("{p} vs {}", 8 * n));
            }
            "gp6" => {
                run.check(&format!("m={m}: |AA| <= 4|A|"), p <= 4 * n, format!("{p} vs {}", 4 * n));
                run.check(&format!("m={m}: |A+A| >= 8|A|"), s >= 8 * n, format!("{s} vs {}", 8 * n));
            }
            "cantor" => run.check(&format!("m={m}: max(|A+A|,|AA|) >= 8|A|"), s.max(p) >= 8 * n, format!("{} vs {}", s.max(p), 8 * n)),
            _ => {}
        }
    }
    if data.len() >= 3 {
        fit_note(&mut run, "growth exponent", &exponent_fit(&data));
    }
    Ok(run.finish("sumprod-growth", t, Some(("m", &["sum_ratio", "prod_ratio"]))))
}

/// `A` = middle-half Cantor set placed in `[1/4, 1/2)` at even `m ≥ 4`.
pub fn quarter_cantor(m: u32) -> Result<GridSet1D> {
    if m < 4 || m % 2 != 0 {
        return Err(Error::Parameter(format!("quarter Cantor needs even m ≥ 4, got {m}")));
    }
    let c = cantor_set(&CantorSpec::middle_half((m - 2) / 2).shrink(2).origin(1 << (m - 2)))?;
    c.reframe(1 << (m - 2), 1 << (m - 1))
}

/// Random subset of `[1/4, 1/2)` with each cell kept with probability `p`.
pub fn random_quarter_set(rng: &mut impl Rng, m: u32, p: f64) -> Result<GridSet1D> {
    let (lo, hi) = (1i64 << (m - 2), 1i64 << (m - 1));
    let mut cells: Vec<i64> = (lo..hi).filter(|_| rng.gen_bool(p)).collect();
    if cells.is_empty() {
        cells.push(rng.gen_range(lo..hi));
    }
    GridSet1D::from_cells(m, lo, hi, cells)
}

fn pencil_intersect(c: &ExperimentConfig) -> Result<Outcome> {
    let ms: Vec<u32> = c.get_list("ms", &[6, 8, 10])?;
    let sigma: f64 = c.get("sigma", 0.5)?;
    let mut rows: Vec<(u32, f64, f64, bool)> = ms
        .par_iter()
        .map(|&m| {
            let a = quarter_cantor(m)?;
            let ps = product_pencils(&a)?;
            let dom = Domain2D::new(m, a.lo(), a.hi(), a.lo(), a.hi())?;
            let rs: Vec<GridSet2D> = ps.iter().map(|p| rasterize_pencil(p, &dom)).collect::<Result<_>>()?;
            let meas = intersection_measure(&rs)?;
            let aa = GridSet2D::product(&a, &a)?.measure();
            Ok((m, meas, aa, product_containment(&a, &ps)?))
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|r| r.0);
    let mut t = Table::new(&["m", "delta", "measure", "product_measure", "reference", "ratio"]);
    let mut run = Run::new();
    let mut data = Vec::new();
    for &(m, meas, aa, ok) in &rows {
        let d = 2f64.powi(-(m as i32));
        let reference = d.powf(2.0 - 2.0 * sigma);
        t.push(row![m, fmt_f(d), fmt_f(meas), fmt_f(aa), fmt_f(reference), fmt_f(meas / reference)]);
        run.check(&format!("m={m}: A×A inside inflated pencils"), ok, "cellwise containment");
        data.push((d, meas / (d * d)));
    }
    if data.len() >= 3 {
        fit_note(&mut run, "intersection cells vs 1/δ", &exponent_fit(&data));
    }
    Ok(run.finish("pencil-intersect", t, Some(("m", &["ratio"]))))
}

/// Measure of the four-way intersection of the collinear configuration on `[0,1)²`.
pub fn collinear_measure(n: usize, m: u32) -> Result<f64> {
    let dom = Domain2D::unit(m);
    let rs: Vec<GridSet2D> = collinear_tip_config(n, m)?.iter().map(|p| rasterize_pencil(p, &dom)).collect::<Result<_>>()?;
    intersection_measure(&rs)
}

fn trivial_bound(c: &ExperimentConfig) -> Result<Outcome> {
    let pts: Vec<(usize, u32)> = match (c.raw("n"), c.raw("m")) {
        (Some(_), _) | (_, Some(_)) => vec![(c.get("n", 4)?, c.get("m", 6)?)],
        _ => c.get_list::<u32>("ms", &[8, 10, 12])?.into_iter().map(|m| (1usize << (m / 2 - 2), m)).collect(),
    };
    let mut rows: Vec<(u32, usize, f64)> = pts.par_iter().map(|&(n, m)| Ok((m, n, collinear_measure(n, m)?))).collect::<Result<_>>()?;
    rows.sort_by_key(|r| (r.0, r.1));
    let mut t = Table::new(&["m", "n", "measure", "lower", "upper"]);
    let mut run = Run::new();
    for &(m, n, meas) in &rows {
        let d2 = 4f64.powi(-(m as i32));
        let n2 = (n * n) as f64;
        let (lo, hi) = (n2 * d2 / 4.0, 64.0 * n2 * d2);
        t.push(row![m, n, fmt_f(meas), fmt_f(lo), fmt_f(hi)]);
        run.check(&format!("m={m} n={n}: measure >= n²δ²/4"), meas >= lo, format!("{meas} vs {lo}"));
        run.check(&format!("m={m} n={n}: measure <= 64n²δ²"), meas <= hi, format!("{meas} vs {hi}"));
    }
    Ok(run.finish("trivial-bound", t, Some(("m", &["measure", "lower"]))))
}

/// Random `(A, z)` with `A ⊂ [1/4, 1/2)` at `m ∈ [6, 10]` and `z = p/2^q ∈ [1/2, 1)`
/// or `z = p/q` with small odd `q`.
pub fn az_fixture(rng: &mut impl Rng) -> Result<(GridSet1D, Rational)> {
    let m = rng.gen_range(6..=10u32);
    let p = rng.gen_range(0.05..0.6);
    let a = random_quarter_set(rng, m, p)?;
    let z = if rng.gen_bool(0.5) {
        let q = rng.gen_range(2..=8u32);
        Rational::new(rng.gen_range(1i64 << (q - 1)..1i64 << q), 1 << q)
    } else {
        let q = 2 * rng.gen_range(1..=12i64) + 1;
        Rational::new(rng.gen_range((q + 1) / 2..q), q)
    };
    Ok((a, z))
}

fn equiv_constructions(c: &ExperimentConfig) -> Result<Outcome> {
    let seed: u64 = c.get("seed", 0)?;
    let count: usize = c.get("count", 50)?;
    let az_count: usize = c.get("az_count", 200)?;
    let ms: Vec<u32> = c.get_list("ms", &[8, 10])?;
    let mut cases: Vec<(String, u32, usize, u64)> = Vec::new();
    for &m in &ms {
        cases.push(("cantor".into(), m, 0, 0));
        for k in 0..count {
            cases.push(("random".into(), m, k, seed.wrapping_mul(1_000_003).wrapping_add((m as u64) << 32 | k as u64)));
        }
    }
    let prod: Vec<(String, u32, usize, usize, bool)> = cases
        .par_iter()
        .map(|(kind, m, k, s)| {
            let a = if kind == "cantor" {
                quarter_cantor(*m)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(*s);
                let p = rng.gen_range(0.02..0.3);
                random_quarter_set(&mut rng, *m, p)?
            };
            Ok((kind.clone(), *m, *k, a.count(), product_containment(&a, &product_pencils(&a)?)?))
        })
        .collect::<Result<_>>()?;
    let az: Vec<(usize, u32, usize, String, bool, bool, u64, usize, usize)> = (0..az_count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0xa2 << 40) ^ k as u64);
            let (a, z) = az_fixture(&mut rng)?;
            let azs = az_construct(&a, z)?;
            let (c1, c2) = az_containments(&a, z, &azs)?;
            let (_, peak) = convolution_peak(&a)?;
            let ss = sumset(&a, &a)?.count();
            Ok((k, a.m(), a.count(), format!("{}/{}", z.numer(), z.denom()), c1, c2, peak, ss, a.count()))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["kind", "m", "index", "n_a", "z", "check1", "check2", "peak", "n_sum"]);
    let mut run = Run::new();
    let mut bad = (0, 0, 0);
    for (kind, m, k, n, ok) in &prod {
        t.push(row![format!("product-{kind}"), m, k, n, "-", *ok as u8, "-", "-", "-"]);
        bad.0 += !ok as usize;
    }
    for (k, m, n, z, c1, c2, peak, ss, na) in &az {
        t.push(row!["az", m, k, n, z, *c1 as u8, *c2 as u8, peak, ss]);
        bad.1 += !(c1 & c2) as usize;
        bad.2 += (peak * (*ss as u64) < (na * na) as u64) as usize;
    }
    run.check("product containment", bad.0 == 0, format!("{} failures of {}", bad.0, prod.len()));
    run.check("A_z product containments", bad.1 == 0, format!("{} failures of {}", bad.1, az.len()));
    run.check("convolution peak >= #A²/#(A+A)", bad.2 == 0, format!("{} failures of {}", bad.2, az.len()));
    Ok(run.finish("equiv-constructions", t, None))
}

/// Union of an interval, a shifted Cantor set and random cells in `[0, 2^m)`,
/// trimmed so that `measure ≤ 4δ^{1−σ}`.
pub fn kt_fixture(rng: &mut impl Rng, m: u32, sigma: f64) -> Result<GridSet1D> {
    let n = 1i64 << m;
    let cap = (4.0 * 2f64.powf(m as f64 * sigma)).floor() as usize;
    let mut cells: Vec<i64> = Vec::new();
    let kind = rng.gen_range(0..4);
    if kind != 1 {
        let len = rng.gen_range(1..=cap as i64 / 2);
        let s = rng.gen_range(0..n - len);
        cells.extend(s..s + len);
    }
    if kind != 2 && m >= 4 {
        let depth = rng.gen_range(1..=(m / 2).min(5));
        let spec = CantorSpec::middle_half(depth);
        let c = cantor_set(&spec)?;
        let span = 1i64 << c.m();
        let scale = m - c.m().min(m);
        let off = rng.gen_range(0..=n - (span << scale));
        let step = if rng.gen_bool(0.5) { 1 } else { 1i64 << scale };
        cells.extend(c.cells().map(|k| off + k * step));
    }
    if kind != 3 {
        for _ in 0..rng.gen_range(1..=cap / 3) {
            cells.push(rng.gen_range(0..n));
        }
    }
    cells.sort_unstable();
    cells.dedup();
    while cells.len() > cap {
        let k = rng.gen_range(0..cells.len());
        cells.remove(k);
    }
    GridSet1D::from_cells(m, 0, n, cells)
}

fn kt_refine_exp(c: &ExperimentConfig) -> Result<Outcome> {
    let seed: u64 = c.get("seed", 0)?;
    let count: usize = c.get("count", 200)?;
    let m: u32 = c.get("m", 10)?;
    let sigma: f64 = c.get("sigma", 0.5)?;
    let k: f64 = c.get("K", 2.0)?;
    let eps: f64 = c.get("eps", 0.05)?;
    let p = RefineParams::new(sigma, k, eps)?;
    let spec = NonConcentrationSpec::new(sigma, c.get("const", 2.0 * p.amplification(m))?)?;
    let rows: Vec<(usize, usize, usize, usize, bool, bool)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6b74 << 32).wrapping_add(i as u64));
            let a = kt_fixture(&mut rng, m, sigma)?;
            let d = kt_refine(&a, &p)?;
            let heavy: usize = d.heavy_parts.values().map(|h| h.count()).sum();
            Ok((i, a.count(), d.a_star.count(), heavy, d.covers(&a), d.a_star.nonconcentration_check(&spec).is_ok()))
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&["index", "n_a", "n_star", "n_heavy", "cover", "star_ok"]);
    let mut run = Run::new();
    let (mut cov, mut ok) = (0, 0);
    for &(i, n, s, h, cv, st) in &rows {
        t.push(row![i, n, s, h, cv as u8, st as u8]);
        cov += !cv as usize;
        ok += !st as usize;
    }
    run.check("cover property", cov == 0, format!("{cov} failures of {count}"));
    run.check("A* non-concentration", ok == 0, format!("{ok} failures of {count}"));
    Ok(run.finish("kt-refine", t, Some(("index", &["n_a", "n_star"]))))
}

/// `μ` uniform on `C×C ⊂ [0,1/2)²` and `ν` its translate by `(3/2, 3/2)`, with
/// `C` the middle-half Cantor set of depth 3 refined once, on `[0,2)²` at `m = 8`.
pub fn reference_measures() -> Result<(DiscreteMeasure2D, DiscreteMeasure2D)> {
    let spec = CantorSpec::middle_half(3).shrink(1).refine(1);
    let c = cantor_set(&spec)?;
    let m = c.m();
    let dom = Domain2D::new(m, 0, 2 << m, 0, 2 << m)?;
    let shift = 3i64 << (m - 1);
    let a: Vec<(i64, i64)> = c.cells().flat_map(|x| c.cells().map(move |y| (x, y))).collect();
    let b: Vec<(i64, i64)> = a.iter().map(|&(x, y)| (x + shift, y + shift)).collect();
    let s = spec.sigma() * 2.0;
    Ok((
        DiscreteMeasure2D::uniform(&GridSet2D::from_cells(dom, a)?, s, 1.0)?,
        DiscreteMeasure2D::uniform(&GridSet2D::from_cells(dom, b)?, s, 1.0)?,
    ))
}

/// Smallest `k0 ≤ kmax` whose refinement keeps at least half the mass.
pub fn calibrate_k0(mu: &DiscreteMeasure2D, nu: &DiscreteMeasure2D, eta: f64, rho: f64, eps: f64, kmax: u32) -> Result<u32> {
    for k0 in 1..=kmax {
        let p = TubeConditionParams::new(eta, rho, eps, k0, kmax)?;
        if tube_condition_refine(mu, nu, &p)?.0.retained_mass() >= 0.5 {
            return Ok(k0);
        }
    }
    Err(Error::Hypothesis(format!("no k0 ≤ {kmax} keeps half the mass")))
}

/// Runs the reference fixture. Returns the parameters used with the results.
pub fn tube_condition_reference(c: &ExperimentConfig) -> Result<(TubeConditionParams, GoodPairMask, TubeCertificate)> {
    let (mu, nu) = reference_measures()?;
    let eta: f64 = c.get("eta", 0.1)?;
    let rho: f64 = c.get("rho", 0.5)?;
    let eps: f64 = c.get("eps", 1.0)?;
    let kmax: u32 = c.get("kmax", 3)?;
    let k0: u32 = match c.raw("k0") {
        Some(_) => c.get("k0", 1)?,
        None => calibrate_k0(&mu, &nu, eta, rho, eps, kmax)?,
    };
    let p = TubeConditionParams::new(eta, rho, eps, k0, kmax)?.with_m0(c.get("m0", 1.0)?);
    let (mask, cert) = tube_condition_refine(&mu, &nu, &p)?;
    Ok((p, mask, cert))
}

fn tube_condition(c: &ExperimentConfig) -> Result<Outcome> {
    let (p, mask, cert) = tube_condition_reference(c)?;
    let mut t = Table::new(&["exp", "family", "mbad_bound", "bad_mu", "mbad_mu", "badbad_nu_points", "bad_nu", "mbad_nu", "badbad_mu_points", "removed_pairs"]);
    let mut run = Run::new();
    for s in &cert.scales {
        t.push(row![s.exp, s.family, fmt_f(s.mbad_bound), s.mu_side.bad, s.mu_side.mbad, s.mu_side.badbad, s.nu_side.bad, s.nu_side.mbad, s.nu_side.badbad, s.removed_pairs]);
        run.check(
            &format!("exp={}: #M-Bad <= 2δ^-η", s.exp),
            (s.mu_side.mbad.max(s.nu_side.mbad) as f64) <= s.mbad_bound,
            format!("{} / {} vs {}", s.mu_side.mbad, s.nu_side.mbad, s.mbad_bound),
        );
    }
    run.note(format!("k0={} kmax={} gamma={} eta={} rho={} eps={}", p.k0, p.kmax, p.gamma, p.eta, p.rho, p.eps));
    run.note(format!("retained_pairs={} retained_mass={}", mask.retained_pairs(), mask.retained_mass()));
    run.note(format!("coarse exp={} sup tube mass={} m0={}", cert.coarse_exp, cert.coarse_sup_mass, p.m0));
    run.check("certificate", cert.violations == 0, format!("{} violations", cert.violations));
    run.check("coarse tube mass <= m0", cert.m0_ok, format!("{} vs {}", cert.coarse_sup_mass, p.m0));
    Ok(run.finish("tube-condition", t, None))
}

fn direction_exponent(c: &ExperimentConfig) -> Result<Outcome> {
    let m: u32 = c.get("m", 10)?;
    let exps: Vec<i32> = c.get_list("exps", &[2, 3, 4, 5, 6, 7, 8])?;
    let pin: Vec<f64> = c.get_list("pin", &[2.0, 2.0])?;
    if pin.len() != 2 || m % 2 != 0 {
        return Err(Error::Parameter("need even m and pin=x,y".into()));
    }
    let cs = cantor_set(&CantorSpec::middle_half(m / 2))?;
    let e = GridSet2D::product(&cs, &cs)?;
    let s = direction_set(&e)?;
    let full = covering_exponent(&s, &exps)?;
    let pinned = pinned_exponent((pin[0], pin[1]), &e, &exps)?;
    let mut t = Table::new(&["j", "r", "n_direction", "n_pinned"]);
    for (k, &j) in exps.iter().enumerate() {
        t.push(row![j, fmt_f(full.scales[k]), full.counts[k], pinned.counts[k]]);
    }
    let mut run = Run::new();
    let dim = 2.0 * CantorSpec::middle_half(1).sigma();
    run.note(format!("direction set: slope={} intercept={} max_residual={}", full.slope, full.intercept, full.max_residual));
    run.note(format!("pinned from ({}, {}): slope={} intercept={} max_residual={}", pin[0], pin[1], pinned.slope, pinned.intercept, pinned.max_residual));
    run.check("direction slope >= dim/2", full.slope >= dim / 2.0, format!("{} vs {}", full.slope, dim / 2.0));
    run.check("direction residual <= 0.15", full.max_residual <= 0.15, fmt_f(full.max_residual));
    run.check("pinned slope >= dim/2 - 0.1", pinned.slope >= dim / 2.0 - 0.1, format!("{} vs {}", pinned.slope, dim / 2.0 - 0.1));

    // Mass of direction preimages of Cantor-type sets X on the circle.
    let (mu, nu) = reference_measures()?;
    let mut beta = Vec::new();
    for depth in c.get_list::<u32>("x_depths", &[1, 2, 3])? {
        let spec = CantorSpec::middle_half(depth).shrink(3);
        let xm = spec.m()?;
        let spec = spec.origin(1 << (xm - 4));
        let x = cantor_set(&spec)?.reframe(0, 1 << xm)?;
        let mass = direction_preimage_mass(&mu, &nu, None, &x);
        run.note(format!("X depth {depth} (m={xm}): preimage mass {mass}"));
        if mass > 0.0 {
            beta.push((2f64.powi(-(xm as i32)), mass));
        }
    }
    match exponent_fit(&beta) {
        Ok(r) => run.note(format!("beta={} max_residual={}", -r.slope, r.max_residual)),
        Err(e) => run.note(format!("beta: no fit ({e})")),
    }
    Ok(run.finish("direction-exponent", t, Some(("j", &["n_direction", "n_pinned"]))))
}

/// Line plot of `series` against `xs` on log₂ y-axes where all values are positive.
pub fn svg_plot(title: &str, xlabel: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    let all: Vec<f64> = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite()).collect();
    let logy = !all.is_empty() && all.iter().all(|&v| v > 0.0);
    let ty = |v: f64| if logy { v.log2() } else { v };
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    let (ymin, ymax) = all.iter().map(|&v| ty(v)).fold((f64::INFINITY, f64::NEG_INFINITY), |a, y| (a.0.min(y), a.1.max(y)));
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| PAD + (x - xmin) / span(xmin, xmax) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (ty(y) - ymin) / span(ymin, ymax) * (H - 2.0 * PAD);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n");
    writeln!(s, "<text x=\"{}\" y=\"16\" text-anchor=\"middle\">{title}</text>", W / 2.0).unwrap();
    writeln!(s, "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>", W - 2.0 * PAD, H - 2.0 * PAD).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>", W / 2.0, H - 12.0).unwrap();
    if all.is_empty() || xs.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    for (k, (name, ys)) in series.iter().enumerate() {
        let col = colours[k % colours.len()];
        let pts: Vec<String> = xs.iter().zip(ys).filter(|(_, y)| y.is_finite() && (!logy || **y > 0.0)).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, "<polyline fill=\"none\" stroke=\"{col}\" points=\"{}\"/>", pts.join(" ")).unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{col}\">{name}{}</text>", PAD + 6.0, PAD + 14.0 * (k + 1) as f64, if logy { " (log2)" } else { "" }).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
