//! Plain-text serialization.
//!
//! Grid sets: `gridset <dim> m=<int> lo=<p/q> hi=<p/q>` then one hex line of
//! the membership array (row-major, most significant bit first). In 2D the
//! bounds are `x,y` pairs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num::rational::Ratio;
use num::BigRational;

use crate::arith::PairGraph;
use crate::error::{Error, Result};
use crate::grid::{Domain2D, GridSet1D, GridSet2D};
use crate::radial::DiscreteMeasure2D;
use crate::refine::KtDecomposition;
use crate::tube::{Pencil, ProjPoint};

fn coord(i: i64, m: u32) -> String {
    let r = Ratio::new(i as i128, 1i128 << m);
    format!("{}/{}", r.numer(), r.denom())
}

fn parse_coord(s: &str, m: u32) -> Result<i64> {
    let r: Ratio<i128> = s.parse().map_err(|_| Error::Parse(format!("bad rational `{s}`")))?;
    let v = r * Ratio::from_integer(1i128 << m);
    if !v.is_integer() {
        return Err(Error::Parse(format!("`{s}` is not on the 2^-{m} grid")));
    }
    i64::try_from(v.to_integer()).map_err(|_| Error::Parse(format!("`{s}` out of range")))
}

fn encode_hex(bits: impl Iterator<Item = bool>) -> String {
    let mut out = String::new();
    let mut nib = 0u8;
    let mut k = 0;
    for b in bits {
        nib = (nib << 1) | b as u8;
        k += 1;
        if k == 4 {
            out.push(char::from_digit(nib as u32, 16).unwrap());
            nib = 0;
            k = 0;
        }
    }
    if k > 0 {
        out.push(char::from_digit((nib << (4 - k)) as u32, 16).unwrap());
    }
    out
}

fn decode_hex(s: &str, len: usize) -> Result<Vec<bool>> {
    let s = s.trim();
    if s.len() != len.div_ceil(4) {
        return Err(Error::Parse(format!("hex line has {} digits, expected {}", s.len(), len.div_ceil(4))));
    }
    let mut out = Vec::with_capacity(s.len() * 4);
    for ch in s.chars() {
        let v = ch.to_digit(16).ok_or_else(|| Error::Parse(format!("bad hex digit `{ch}`")))?;
        for sh in (0..4).rev() {
            out.push((v >> sh) & 1 == 1);
        }
    }
    if out[len..].iter().any(|&b| b) {
        return Err(Error::Parse("nonzero padding bits".into()));
    }
    out.truncate(len);
    Ok(out)
}

struct Header {
    dim: u32,
    m: u32,
    lo: Vec<i64>,
    hi: Vec<i64>,
    extra: Vec<(String, String)>,
}

fn parse_header(line: &str) -> Result<Header> {
    let mut it = line.split_whitespace();
    if it.next() != Some("gridset") {
        return Err(Error::Parse(format!("expected `gridset` header, got `{line}`")));
    }
    let dim: u32 = it.next().and_then(|d| d.parse().ok()).ok_or_else(|| Error::Parse("missing dimension".into()))?;
    if dim != 1 && dim != 2 {
        return Err(Error::Parse(format!("dimension {dim} not supported")));
    }
    let mut kv = Vec::new();
    for tok in it {
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("bad token `{tok}`")))?;
        kv.push((k.to_string(), v.to_string()));
    }
    let get = |k: &str| kv.iter().find(|p| p.0 == k).map(|p| p.1.clone()).ok_or_else(|| Error::Parse(format!("missing `{k}=`")));
    let m: u32 = get("m")?.parse().map_err(|_| Error::Parse("bad m".into()))?;
    if m > 40 {
        return Err(Error::Parse(format!("m = {m} too large")));
    }
    let split = |s: String| -> Result<Vec<i64>> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != dim as usize {
            return Err(Error::Parse(format!("`{s}` does not have {dim} coordinates")));
        }
        parts.iter().map(|p| parse_coord(p, m)).collect()
    };
    let lo = split(get("lo")?)?;
    let hi = split(get("hi")?)?;
    let extra = kv.into_iter().filter(|p| !["m", "lo", "hi"].contains(&p.0.as_str())).collect();
    Ok(Header { dim, m, lo, hi, extra })
}

fn header_2d(dom: &Domain2D) -> String {
    format!("gridset 2 m={} lo={},{} hi={},{}", dom.m, coord(dom.x0, dom.m), coord(dom.y0, dom.m), coord(dom.x1, dom.m), coord(dom.y1, dom.m))
}

pub fn write_grid1(g: &GridSet1D) -> String {
    let bits = (g.lo()..g.hi()).map(|i| g.contains(i));
    format!("gridset 1 m={} lo={} hi={}\n{}\n", g.m(), coord(g.lo(), g.m()), coord(g.hi(), g.m()), encode_hex(bits))
}

pub fn write_grid2(g: &GridSet2D) -> String {
    let dom = g.domain();
    let bits = (dom.y0..dom.y1).flat_map(|y| (dom.x0..dom.x1).map(move |x| (x, y))).map(|(x, y)| g.contains(x, y));
    format!("{}\n{}\n", header_2d(&dom), encode_hex(bits))
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn read_grid1_lines<'a>(it: &mut impl Iterator<Item = &'a str>) -> Result<GridSet1D> {
    let h = parse_header(it.next().ok_or_else(|| Error::Parse("empty input".into()))?)?;
    if h.dim != 1 {
        return Err(Error::Parse("expected a 1D grid set".into()));
    }
    let len = usize::try_from(h.hi[0] - h.lo[0]).map_err(|_| Error::Parse("hi < lo".into()))?;
    let bits = decode_hex(it.next().ok_or_else(|| Error::Parse("missing hex line".into()))?, len)?;
    GridSet1D::from_cells(h.m, h.lo[0], h.hi[0], bits.iter().enumerate().filter(|b| *b.1).map(|(k, _)| h.lo[0] + k as i64))
}

pub fn read_grid1(text: &str) -> Result<GridSet1D> {
    read_grid1_lines(&mut lines(text))
}

pub fn read_grid2(text: &str) -> Result<GridSet2D> {
    let mut it = lines(text);
    let h = parse_header(it.next().ok_or_else(|| Error::Parse("empty input".into()))?)?;
    if h.dim != 2 {
        return Err(Error::Parse("expected a 2D grid set".into()));
    }
    let dom = Domain2D::new(h.m, h.lo[0], h.hi[0], h.lo[1], h.hi[1])?;
    let bits = decode_hex(it.next().ok_or_else(|| Error::Parse("missing hex line".into()))?, dom.nx() * dom.ny())?;
    let nx = dom.nx();
    GridSet2D::from_cells(dom, bits.iter().enumerate().filter(|b| *b.1).map(|(k, _)| (dom.x0 + (k % nx) as i64, dom.y0 + (k / nx) as i64)))
}

/// `pairgraph m=<int>`, then `i j` per edge. Vertices of A or B lying on no
/// edge are listed as `a i` or `b j`.
pub fn write_pair_graph(g: &PairGraph) -> String {
    let mut s = format!("pairgraph m={}\n", g.a_set().m());
    for &(i, j) in g.edges() {
        writeln!(s, "{i} {j}").unwrap();
    }
    let ea: std::collections::BTreeSet<i64> = g.edges().iter().map(|e| e.0).collect();
    let eb: std::collections::BTreeSet<i64> = g.edges().iter().map(|e| e.1).collect();
    for i in g.a_set().cells().filter(|i| !ea.contains(i)) {
        writeln!(s, "a {i}").unwrap();
    }
    for j in g.b_set().cells().filter(|j| !eb.contains(j)) {
        writeln!(s, "b {j}").unwrap();
    }
    s
}

pub fn read_pair_graph(text: &str) -> Result<PairGraph> {
    let mut it = lines(text);
    let head = it.next().ok_or_else(|| Error::Parse("empty input".into()))?;
    let m: u32 = head
        .strip_prefix("pairgraph m=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad pairgraph header `{head}`")))?;
    let (mut a, mut b, mut edges) = (Vec::new(), Vec::new(), Vec::new());
    let num = |t: &str| t.parse::<i64>().map_err(|_| Error::Parse(format!("bad integer `{t}`")));
    for l in it {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["a", i] => a.push(num(i)?),
            ["b", j] => b.push(num(j)?),
            [i, j] => {
                let e = (num(i)?, num(j)?);
                a.push(e.0);
                b.push(e.1);
                edges.push(e);
            }
            _ => return Err(Error::Parse(format!("bad line `{l}`"))),
        }
    }
    let set = |v: &[i64]| -> Result<GridSet1D> {
        let lo = *v.iter().min().ok_or_else(|| Error::Parse("graph with no vertices".into()))?;
        let hi = *v.iter().max().unwrap() + 1;
        GridSet1D::from_cells(m, lo, hi, v.iter().copied())
    };
    PairGraph::new(set(&a)?, set(&b)?, edges)
}

/// `pencil tip=<x>:<y>:<w> radius=<p/q>` followed by a 1D grid-set block.
pub fn write_pencil(p: &Pencil) -> Result<String> {
    let r = BigRational::from_float(p.radius).ok_or_else(|| Error::Parameter("radius not finite".into()))?;
    Ok(format!("pencil tip={} radius={}\n{}", p.tip, r, write_grid1(&p.directions)))
}

pub fn read_pencil(text: &str) -> Result<Pencil> {
    let mut it = lines(text);
    let head = it.next().ok_or_else(|| Error::Parse("empty input".into()))?;
    let mut toks = head.split_whitespace();
    if toks.next() != Some("pencil") {
        return Err(Error::Parse(format!("bad pencil header `{head}`")));
    }
    let (mut tip, mut radius) = (None, None);
    for t in toks {
        match t.split_once('=') {
            Some(("tip", v)) => {
                let parts: Vec<BigRational> = v.split(':').map(|c| c.parse().map_err(|_| Error::Parse(format!("bad tip coordinate `{c}`")))).collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(Error::Parse(format!("tip `{v}` needs three coordinates")));
                }
                let [x, y, w]: [BigRational; 3] = parts.try_into().unwrap();
                tip = Some(ProjPoint::new(x, y, w)?);
            }
            Some(("radius", v)) => {
                let r: Ratio<i128> = v.parse().map_err(|_| Error::Parse(format!("bad radius `{v}`")))?;
                radius = Some(*r.numer() as f64 / *r.denom() as f64);
            }
            _ => return Err(Error::Parse(format!("bad token `{t}`"))),
        }
    }
    let dirs = read_grid1_lines(&mut it)?;
    Pencil::new(tip.ok_or_else(|| Error::Parse("missing tip".into()))?, dirs, radius.ok_or_else(|| Error::Parse("missing radius".into()))?)
}

/// Grid-set header (with `s=` and `c=`), then `i j weight` per support cell.
pub fn write_measure(mu: &DiscreteMeasure2D) -> String {
    let mut s = format!("{} s={} c={}\n", header_2d(&mu.domain()), mu.s, mu.c);
    for ((i, j), w) in mu.cells() {
        writeln!(s, "{i} {j} {w}").unwrap();
    }
    s
}

pub fn read_measure(text: &str) -> Result<DiscreteMeasure2D> {
    let mut it = lines(text);
    let h = parse_header(it.next().ok_or_else(|| Error::Parse("empty input".into()))?)?;
    if h.dim != 2 {
        return Err(Error::Parse("measure needs a 2D header".into()));
    }
    let dom = Domain2D::new(h.m, h.lo[0], h.hi[0], h.lo[1], h.hi[1])?;
    let num = |k: &str, d: f64| -> Result<f64> {
        match h.extra.iter().find(|p| p.0 == k) {
            Some((_, v)) => v.parse().map_err(|_| Error::Parse(format!("bad `{k}={v}`"))),
            None => Ok(d),
        }
    };
    let (s, c) = (num("s", 2.0)?, num("c", 1.0)?);
    let mut cells = Vec::new();
    for l in it {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 3 {
            return Err(Error::Parse(format!("bad measure line `{l}`")));
        }
        let p = |x: &str| x.parse::<i64>().map_err(|_| Error::Parse(format!("bad index `{x}`")));
        let w: f64 = t[2].parse().map_err(|_| Error::Parse(format!("bad weight `{}`", t[2])))?;
        cells.push(((p(t[0])?, p(t[1])?), w));
    }
    DiscreteMeasure2D::from_weights(dom, &cells, s, c)
}

/// One grid-set file per part: `a_star.grid` and `heavy_<e>.grid`.
pub fn write_kt_dir(k: &KtDecomposition, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("a_star.grid"), write_grid1(&k.a_star))?;
    for (e, g) in &k.heavy_parts {
        fs::write(dir.join(format!("heavy_{e}.grid")), write_grid1(g))?;
    }
    Ok(())
}

pub fn read_kt_dir(dir: &Path) -> Result<KtDecomposition> {
    let a_star = read_grid1(&fs::read_to_string(dir.join("a_star.grid"))?)?;
    let mut heavy_parts = std::collections::BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(e) = name.strip_prefix("heavy_").and_then(|r| r.strip_suffix(".grid")) {
            let e: u32 = e.parse().map_err(|_| Error::Parse(format!("bad part name `{name}`")))?;
            heavy_parts.insert(e, read_grid1(&fs::read_to_string(dir.join(&name))?)?);
        }
    }
    Ok(KtDecomposition { a_star, heavy_parts })
}
