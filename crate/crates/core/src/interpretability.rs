//! Post-training pruning by edge norm, symbolic fitting of surviving edges
//! and the text, tab-separated and graph reports built from them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::autodiff::{Graph, Tensor};
use crate::data::Windows;
use crate::error::{Error, Result};
use crate::model::{ForecastModel, Probe};
use crate::params::Bindings;
use crate::scalar::Scalar;
use crate::taylorkan::{Injection, KanNetwork, TaylorEdge, TaylorKanLayer};

pub const DEFAULT_TAU: f64 = 5e-4;
pub const DEFAULT_TOP_M: usize = 3;
pub const SAMPLE_POINTS: usize = 64;
pub const GRID_POINTS: usize = 41;
pub const REFINE_ROUNDS: usize = 3;
/// Fraction of the observed input range added on each side.
pub const CALIBRATION_PAD: f64 = 0.1;
/// Fits whose R² differ by at most this much are treated as ties.
pub const R2_TIE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneConfig {
    pub tau: f64,
}

impl PruneConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::invalid("prune", format!("tau must be >= 0, got {tau}")));
        }
        Ok(Self { tau })
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU }
    }
}

/// Counts for one layer; injected edges are not counted.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneRow {
    pub network: String,
    pub layer: usize,
    pub pruned: usize,
    pub preserved: usize,
    pub total: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneReport {
    pub rows: Vec<PruneRow>,
}

impl PruneReport {
    pub fn row(&self, network: &str, layer: usize) -> Option<&PruneRow> {
        self.rows.iter().find(|r| r.network == network && r.layer == layer)
    }

    pub fn preserved(&self) -> usize {
        self.rows.iter().map(|r| r.preserved).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("network\tlayer\tpruned\tpreserved\ttotal\tratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.4}",
                r.network, r.layer, r.pruned, r.preserved, r.total, r.ratio
            );
        }
        s
    }
}

/// Current pruning status. The per-patch time-frequency networks are
/// reported together as network `tfkan`.
pub fn prune_status<T: Scalar>(model: &ForecastModel<T>) -> PruneReport {
    let mut rows = Vec::new();
    let mut push = |network: &str, layer: usize, layers: &[&TaylorKanLayer<T>]| {
        let total: usize = layers.iter().map(|l| l.adjustable_count()).sum();
        let preserved: usize = layers.iter().map(|l| l.preserved_count()).sum();
        let pruned = total - preserved;
        rows.push(PruneRow {
            network: network.into(),
            layer,
            pruned,
            preserved,
            total,
            ratio: if total == 0 { 0.0 } else { pruned as f64 / total as f64 },
        });
    };
    for (name, net) in [("trend", &model.trend), ("seasonal", &model.seasonal)] {
        for (k, layer) in net.layers.iter().enumerate() {
            push(name, k, &[layer]);
        }
    }
    let depth = model.tf.kans.first().map_or(0, |k| k.depth());
    for k in 0..depth {
        let layers: Vec<_> = model.tf.kans.iter().map(|n| &n.layers[k]).collect();
        push("tfkan", k, &layers);
    }
    PruneReport { rows }
}

/// Masks every adjustable edge whose norm is below `tau`.
pub fn prune<T: Scalar>(model: &mut ForecastModel<T>, cfg: PruneConfig) -> PruneReport {
    let tau = if cfg.tau.is_infinite() { T::infinity() } else { T::lit(cfg.tau) };
    for (_, net) in model.networks_mut() {
        for layer in &mut net.layers {
            layer.prune_below(tau);
        }
    }
    prune_status(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Identity,
    Square,
    Cube,
    Sin,
    Cos,
    Exp,
    Gaussian,
    Silu,
    Constant,
    /// `x^q` for injected polynomial terms beyond the cube.
    Power(u32),
}

/// The fitting library, in tie-break order.
pub const LIBRARY: [Family; 9] = [
    Family::Identity,
    Family::Square,
    Family::Cube,
    Family::Sin,
    Family::Cos,
    Family::Exp,
    Family::Gaussian,
    Family::Silu,
    Family::Constant,
];

impl Family {
    pub fn name(self) -> String {
        match self {
            Family::Identity => "x".into(),
            Family::Square => "x^2".into(),
            Family::Cube => "x^3".into(),
            Family::Sin => "sin".into(),
            Family::Cos => "cos".into(),
            Family::Exp => "exp".into(),
            Family::Gaussian => "gaussian".into(),
            Family::Silu => "silu".into(),
            Family::Constant => "constant".into(),
            Family::Power(q) => format!("x^{q}"),
        }
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            Family::Identity => z,
            Family::Square => z * z,
            Family::Cube => z * z * z,
            Family::Sin => z.sin(),
            Family::Cos => z.cos(),
            Family::Exp => z.exp(),
            Family::Gaussian => (-z * z).exp(),
            Family::Silu => z / (1.0 + (-z).exp()),
            Family::Constant => 0.0,
            Family::Power(q) => z.powi(q as i32),
        }
    }

    fn polynomial(q: usize) -> Self {
        match q {
            1 => Family::Identity,
            2 => Family::Square,
            3 => Family::Cube,
            _ => Family::Power(q as u32),
        }
    }
}

/// `c·f(a·x + b) + d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymbolicFit {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Held-out coefficient of determination, clamped at 0.
    pub r2: f64,
}

impl SymbolicFit {
    pub fn eval(&self, x: f64) -> f64 {
        match self.family {
            Family::Constant => self.d,
            f => self.c * f.eval(self.a * x + self.b) + self.d,
        }
    }

    /// Two-decimal rendering, e.g. `114.33sin(-0.02x-4.70)-114.31`.
    pub fn render(&self) -> String {
        let (a, b, c, d) = (self.a, self.b, self.c, self.d);
        let arg = format!("{a:.2}x{b:+.2}");
        match self.family {
            Family::Constant => format!("{d:.2}"),
            Family::Identity => format!("{c:.2}({arg}){d:+.2}"),
            Family::Square | Family::Cube | Family::Power(_) => {
                let q = match self.family {
                    Family::Square => 2,
                    Family::Cube => 3,
                    Family::Power(q) => q,
                    _ => unreachable!(),
                };
                format!("{c:.2}({arg})^{q}{d:+.2}")
            }
            Family::Gaussian => format!("{c:.2}exp(-({arg})^2){d:+.2}"),
            f => format!("{c:.2}{}({arg}){d:+.2}", f.name()),
        }
    }
}

/// Fitting points: `SAMPLE_POINTS` evenly spaced over `[lo, hi]`.
pub fn sample_points(lo: f64, hi: f64) -> Vec<f64> {
    let n = SAMPLE_POINTS;
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Scoring points: midpoints between consecutive fitting points.
pub fn held_out_points(lo: f64, hi: f64) -> Vec<f64> {
    let n = SAMPLE_POINTS;
    (0..n - 1).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / (n - 1) as f64).collect()
}

/// `1 − SSres/SStot`; a constant target scores 1 when matched exactly.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> f64 {
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let sst: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    let sse: f64 = pred.iter().zip(actual).map(|(p, y)| (p - y) * (p - y)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - sse / sst
}

fn is_constant(ys: &[f64]) -> bool {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().all(|y| (y - mean).abs() <= 1e-12 * mean.abs().max(1.0))
}

/// Least-squares `(c, d, train R²)` for fixed `(a, b)`.
fn linear_fit(family: Family, a: f64, b: f64, xs: &[f64], ys: &[f64], syy: f64, ybar: f64) -> Option<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mut g = [0.0; SAMPLE_POINTS];
    let mut gsum = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        g[k] = family.eval(a * x + b);
        gsum += g[k];
    }
    let gbar = gsum / n;
    let (mut sgg, mut sgy) = (0.0, 0.0);
    for (k, &y) in ys.iter().enumerate() {
        let dg = g[k] - gbar;
        sgg += dg * dg;
        sgy += dg * (y - ybar);
    }
    if !(sgg.is_finite() && sgy.is_finite()) {
        return None;
    }
    if sgg <= f64::MIN_POSITIVE {
        return Some((0.0, ybar, 0.0));
    }
    let c = sgy / sgg;
    let sse = (syy - sgy * sgy / sgg).max(0.0);
    Some((c, ybar - c * gbar, 1.0 - sse / syy))
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

const A_MIN: f64 = 1e-2;
const A_MAX: f64 = 1e1;

fn a_grid() -> Vec<f64> {
    let mags: Vec<f64> = linspace(A_MIN.log10(), A_MAX.log10(), GRID_POINTS).map(|e| 10f64.powf(e)).collect();
    mags.iter().map(|m| -m).rev().chain(mags.iter().copied()).collect()
}

/// Shift grid for scale `a`: sin and cos use one period, the other
/// families place `a·x + b = 0` anywhere within the mapped domain widened
/// by half its width on each side.
fn b_grid(family: Family, a: f64, lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let (lo_b, hi_b) = match family {
        Family::Sin | Family::Cos => (-PI, PI),
        Family::Exp => return (vec![0.0], 0.0),
        _ => {
            let (p, q) = (-a * lo, -a * hi);
            let (m, x) = (p.min(q), p.max(q));
            let w = (x - m) / 2.0;
            (m - w, x + w)
        }
    };
    let step = (hi_b - lo_b) / (GRID_POINTS - 1) as f64;
    (linspace(lo_b, hi_b, GRID_POINTS).collect(), step)
}

fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..48 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        x1
    } else {
        x2
    }
}

/// Residuals `y − c·g − d` with `(c, d)` solved by least squares.
fn projected_residuals(family: Family, a: f64, b: f64, xs: &[f64], ys: &[f64]) -> Option<Vec<f64>> {
    let n = xs.len() as f64;
    let g: Vec<f64> = xs.iter().map(|&x| family.eval(a * x + b)).collect();
    let gbar = g.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sgg, mut sgy) = (0.0, 0.0);
    for (gk, y) in g.iter().zip(ys) {
        sgg += (gk - gbar) * (gk - gbar);
        sgy += (gk - gbar) * (y - ybar);
    }
    let c = if sgg > f64::MIN_POSITIVE { sgy / sgg } else { 0.0 };
    let d = ybar - c * gbar;
    let r: Vec<f64> = g.iter().zip(ys).map(|(gk, y)| y - c * gk - d).collect();
    r.iter().all(|v| v.is_finite()).then_some(r)
}

/// Levenberg-Marquardt on `(a, b)` over the projected residuals, with a
/// finite-difference Jacobian. Steps are kept only when they lower the
/// residual sum of squares and leave `|a|` inside the grid's range. Resolves the long curved valleys that
/// coordinate steps crawl along.
fn polish(family: Family, a: f64, b: f64, free_b: bool, xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sse = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let Some(mut r) = projected_residuals(family, a, b, xs, ys) else {
        return (a, b);
    };
    let (mut a, mut b, mut cur) = (a, b, sse(&r));
    let mut lambda = 1e-3;
    for _ in 0..100 {
        if cur == 0.0 {
            break;
        }
        let ha = 1e-7 * a.abs().max(1e-3);
        let hb = 1e-7 * b.abs().max(1.0);
        let col = |da: f64, db: f64, h: f64| -> Option<Vec<f64>> {
            let p = projected_residuals(family, a + da, b + db, xs, ys)?;
            let m = projected_residuals(family, a - da, b - db, xs, ys)?;
            Some(p.iter().zip(&m).map(|(u, v)| (u - v) / (2.0 * h)).collect())
        };
        let Some(ja) = col(ha, 0.0, ha) else { break };
        let jb = if free_b { col(0.0, hb, hb) } else { Some(vec![0.0; xs.len()]) };
        let Some(jb) = jb else { break };
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
        let (aa, ab, bb) = (dot(&ja, &ja), dot(&ja, &jb), dot(&jb, &jb));
        let (ga, gb) = (dot(&ja, &r), dot(&jb, &r));
        let mut improved = false;
        while lambda < 1e12 {
            let (m11, m22) = (aa * (1.0 + lambda), bb * (1.0 + lambda) + if free_b { 0.0 } else { 1.0 });
            let det = m11 * m22 - ab * ab;
            if det.abs() > 0.0 && det.is_finite() {
                let da = -(m22 * ga - ab * gb) / det;
                let db = if free_b { -(m11 * gb - ab * ga) / det } else { 0.0 };
                let inside = (A_MIN..=A_MAX).contains(&(a + da).abs());
                if let Some(rn) = projected_residuals(family, a + da, b + db, xs, ys).filter(|_| inside) {
                    let next = sse(&rn);
                    if next < cur {
                        let gain = (cur - next) / cur;
                        (a, b, r, cur) = (a + da, b + db, rn, next);
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = gain > 1e-14;
                        break;
                    }
                }
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// Rewrites equivalent parameterizations into one form: unit scale for
/// the polynomial families, no shift for `exp`, positive scale for the
/// symmetric ones, and for `sin`/`cos` a positive amplitude with the shift
/// in `(−π, π]`.
fn canonicalize(mut f: SymbolicFit) -> SymbolicFit {
    match f.family {
        Family::Identity => {
            f.d += f.c * f.b;
            f.c *= f.a;
            f.a = 1.0;
            f.b = 0.0;
        }
        Family::Square | Family::Cube => {
            let q = if f.family == Family::Square { 2 } else { 3 };
            f.c *= f.a.powi(q);
            f.b /= f.a;
            f.a = 1.0;
        }
        Family::Exp => {
            f.c *= f.b.exp();
            f.b = 0.0;
        }
        Family::Gaussian | Family::Cos | Family::Sin => {
            if f.a < 0.0 {
                f.a = -f.a;
                f.b = -f.b;
                if f.family == Family::Sin {
                    f.c = -f.c;
                }
            }
            if f.family != Family::Gaussian {
                if f.c < 0.0 {
                    f.c = -f.c;
                    f.b += PI;
                }
                f.b = f.b.rem_euclid(2.0 * PI);
                if f.b > PI {
                    f.b -= 2.0 * PI;
                }
            }
        }
        _ => {}
    }
    f
}

fn fit_family(family: Family, lo: f64, hi: f64, xs: &[f64], ys: &[f64], syy: f64, ybar: f64) -> Option<SymbolicFit> {
    let score = |a: f64, b: f64| linear_fit(family, a, b, xs, ys, syy, ybar).map_or(f64::NEG_INFINITY, |v| v.2);
    let (mut a, mut b, mut b_step) = match family {
        Family::Identity => (1.0, 0.0, 0.0),
        _ => {
            let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
            for a in a_grid() {
                let (bs, step) = b_grid(family, a, lo, hi);
                for b in bs {
                    let r = score(a, b);
                    if r > best.0 {
                        best = (r, a, b, step);
                    }
                }
            }
            if best.0 == f64::NEG_INFINITY {
                return None;
            }
            (best.1, best.2, best.3)
        }
    };
    if family != Family::Identity {
        let ratio = 10f64.powf(3.0 / (GRID_POINTS - 1) as f64);
        let mut a_span = ratio;
        for _ in 0..REFINE_ROUNDS {
            let (x, y) = (a / a_span, a * a_span);
            a = golden_max(x.min(y), x.max(y), |t| score(t, b));
            if b_step > 0.0 {
                b = golden_max(b - b_step, b + b_step, |t| score(a, t));
            }
            a_span = a_span.sqrt();
            b_step /= 2.0;
        }
    }
    if family != Family::Identity {
        (a, b) = polish(family, a, b, b_step > 0.0, xs, ys);
    }
    let (c, d, _) = linear_fit(family, a, b, xs, ys, syy, ybar)?;
    Some(canonicalize(SymbolicFit { family, a, b, c, d, r2: 0.0 }))
}

/// Fits `f` on `[lo, hi]` against every library family and keeps the best
/// held-out R². Ties within `R2_TIE` go to the smaller `|b|`, then to the
/// earlier family in `LIBRARY`.
pub fn symbolify_edge(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> SymbolicFit {
    let constant = |v: f64| SymbolicFit {
        family: Family::Constant,
        a: 0.0,
        b: 0.0,
        c: 0.0,
        d: v,
        r2: 1.0,
    };
    if !(hi - lo).is_finite() || hi - lo <= 1e-12 * lo.abs().max(1.0) {
        return constant(f(lo));
    }
    let xs = sample_points(lo, hi);
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    if is_constant(&ys) {
        return constant(ybar);
    }
    let syy: f64 = ys.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let hx = held_out_points(lo, hi);
    let hy: Vec<f64> = hx.iter().map(|&x| f(x)).collect();
    let mut best: Option<SymbolicFit> = None;
    for family in LIBRARY {
        let fit = match family {
            Family::Constant => Some(SymbolicFit { r2: 0.0, ..constant(ybar) }),
            _ => fit_family(family, lo, hi, &xs, &ys, syy, ybar),
        };
        let Some(mut fit) = fit else { continue };
        let pred: Vec<f64> = hx.iter().map(|&x| fit.eval(x)).collect();
        let r2 = r_squared(&pred, &hy);
        fit.r2 = if r2.is_finite() { r2.max(0.0) } else { 0.0 };
        let better = match &best {
            None => true,
            Some(b) => fit.r2 > b.r2 + R2_TIE || ((fit.r2 - b.r2).abs() <= R2_TIE && fit.b.abs() < b.b.abs()),
        };
        if better {
            best = Some(fit);
        }
    }
    best.unwrap_or_else(|| constant(ybar))
}

/// Exact symbolic form of injected term `q` on input node `i`.
pub fn injected_fit<T: Scalar>(inj: &Injection<T>, i: usize, q: usize) -> SymbolicFit {
    match inj {
        Injection::Trend { m } => SymbolicFit {
            family: Family::polynomial(q),
            a: 1.0,
            b: 0.0,
            c: m.at(&[q, i]).as_f64(),
            d: if q == 1 { m.at(&[0, i]).as_f64() } else { 0.0 },
            r2: 1.0,
        },
        Injection::Seasonal { freqs, a, b, .. } => {
            let (ak, bk) = (a.at(&[q, i]).as_f64(), b.at(&[q - 1, i]).as_f64());
            canonicalize(SymbolicFit {
                family: Family::Cos,
                a: freqs[q - 1].as_f64() * PI,
                b: -bk.atan2(ak),
                c: ak.hypot(bk),
                d: if q == 1 { a.at(&[0, i]).as_f64() / 2.0 } else { 0.0 },
                r2: 1.0,
            })
        }
    }
}

/// Observed input range of every node of every layer, keyed by network
/// name (`trend`, `seasonal`, `tf.kan.{p}`) and layer index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Calibration {
    pub ranges: BTreeMap<(String, usize), Vec<(f64, f64)>>,
}

impl Calibration {
    /// Padded fitting domain of input node `i`.
    pub fn domain(&self, network: &str, layer: usize, i: usize) -> Option<(f64, f64)> {
        let (lo, hi) = *self.ranges.get(&(network.to_string(), layer))?.get(i)?;
        if lo > hi {
            return None;
        }
        let pad = (hi - lo) * CALIBRATION_PAD;
        Some((lo - pad, hi + pad))
    }
}

/// Forward passes over every window of `windows`, recording the min and
/// max input seen by each node.
pub fn calibrate<T: Scalar>(model: &ForecastModel<T>, windows: &Windows<T>) -> Result<Calibration> {
    let mut cal = Calibration::default();
    let l = model.cfg.lookback;
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(model.cfg.batch_size.max(1)) {
        let batch = windows.batch(chunk);
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let x = g.constant(batch.inputs.clone());
        let x = g.reshape(x, &[batch.inputs.numel() / l, l])?;
        let mut probe = Probe::default();
        model.forward_var(&mut g, &mut b, x, Some(&mut probe))?;
        let mut record = |name: String, k: usize, t: &Tensor<T>| {
            let cols = t.shape()[1];
            let entry = cal
                .ranges
                .entry((name, k))
                .or_insert_with(|| vec![(f64::INFINITY, f64::NEG_INFINITY); cols]);
            for (n, v) in t.data().iter().enumerate() {
                let v = v.as_f64();
                let r = &mut entry[n % cols];
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        };
        for (k, &v) in probe.trend.iter().enumerate() {
            record("trend".into(), k, &g.tensor(v));
        }
        for (k, &v) in probe.seasonal.iter().enumerate() {
            record("seasonal".into(), k, &g.tensor(v));
        }
        let mut tf = probe.tf.iter();
        for (p, kan) in model.tf.kans.iter().enumerate() {
            for k in 0..kan.depth() {
                let v = *tf.next().ok_or_else(|| Error::invalid("calibrate", "probe too short"))?;
                record(format!("tf.kan.{p}"), k, &g.tensor(v));
            }
        }
    }
    Ok(cal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub network: String,
    pub layer: usize,
    pub i: usize,
    pub j: usize,
    pub injected: bool,
    pub fit: SymbolicFit,
    pub norm: f64,
    pub highlight: bool,
}

impl EdgeRecord {
    /// `network:layer`
    pub fn layer_key(&self) -> String {
        format!("{}:{}", self.network, self.layer)
    }

    pub fn family_label(&self) -> String {
        let name = self.fit.family.name();
        if self.injected {
            format!("inject-{name}")
        } else {
            name
        }
    }
}

/// Surviving edges grouped by layer, each group sorted by descending norm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SymbolicReport {
    pub records: Vec<EdgeRecord>,
}

impl SymbolicReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("layer\ti\tj\tfamily\ta\tb\tc\td\tr2\tl2norm\n");
        for r in &self.records {
            let f = &r.fit;
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
                r.layer_key(),
                r.i,
                r.j,
                r.family_label(),
                f.a,
                f.b,
                f.c,
                f.d,
                f.r2,
                r.norm
            );
        }
        s
    }

    pub fn render_text(&self, prune: &PruneReport) -> String {
        let mut s = String::from("Pruning\n");
        s.push_str(&prune.render());
        let mut current = String::new();
        for r in &self.records {
            let key = r.layer_key();
            if key != current {
                let _ = write!(s, "\nLayer {key}\n{:>5} {:>5}  {:<44} {:>12} {:>8}\n", "i", "j", "formula", "l2norm", "r2");
                current = key;
            }
            let mark = if r.highlight { " *" } else { "" };
            let formula = if r.injected {
                format!("{} [injected]", r.fit.render())
            } else {
                r.fit.render()
            };
            let _ = writeln!(s, "{:>5} {:>5}  {:<44} {:>12.4e} {:>8.4}{mark}", r.i, r.j, formula, r.norm, r.fit.r2);
        }
        s.push_str("\n* top edges by norm in each network\n");
        s
    }

    /// Node and edge lines for external plotting tools.
    pub fn graph<T: Scalar>(&self, model: &ForecastModel<T>) -> String {
        let mut s = String::from("# node\tnetwork\tlevel\tindex\n# edge\tnetwork\tlayer\ti\tj\tl2norm\thighlight\n");
        for (name, net) in model.networks() {
            for level in 0..=net.depth() {
                let width = if level == 0 { net.in_dim() } else { net.layers[level - 1].out_dim() };
                for n in 0..width {
                    let _ = writeln!(s, "node\t{name}\t{level}\t{n}");
                }
            }
        }
        for r in &self.records {
            let _ = writeln!(
                s,
                "edge\t{}\t{}\t{}\t{}\t{:?}\t{}",
                r.network, r.layer, r.i, r.j, r.norm, r.highlight as u8
            );
        }
        s
    }

    pub fn highlighted(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.records.iter().filter(|r| r.highlight)
    }
}

struct Job {
    edge: TaylorEdge<f64>,
    domain: (f64, f64),
}

fn run_jobs(jobs: &[Job]) -> Vec<SymbolicFit> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|j| symbolify_edge(|x| j.edge.eval(x), j.domain.0, j.domain.1))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("symbolify worker")).collect()
    })
}

fn network_records<T: Scalar>(
    name: &str,
    net: &KanNetwork<T>,
    cal: &Calibration,
    records: &mut Vec<EdgeRecord>,
    jobs: &mut Vec<(usize, Job)>,
) -> Result<()> {
    for (k, layer) in net.layers.iter().enumerate() {
        for i in 0..layer.in_dim() {
            for j in 0..layer.out_dim() {
                let norm = layer.edge_norm(i, j).as_f64();
                let term = layer.injection.as_ref().and_then(|inj| inj.term_at(j).map(|q| (inj, q)));
                let (injected, fit) = match term {
                    Some((inj, q)) => (true, injected_fit(inj, i, q)),
                    None if layer.is_active(i, j) => {
                        let e = layer.edge(i, j);
                        let domain = cal.domain(name, k, i).ok_or_else(|| {
                            Error::invalid("report", format!("no calibration range for {name}:{k} node {i}"))
                        })?;
                        let edge = TaylorEdge { w: e.w.as_f64(), a: e.a.map(|v| v.as_f64()) };
                        jobs.push((records.len(), Job { edge, domain }));
                        (false, SymbolicFit { family: Family::Constant, a: 0.0, b: 0.0, c: 0.0, d: 0.0, r2: 0.0 })
                    }
                    None => continue,
                };
                records.push(EdgeRecord { network: name.into(), layer: k, i, j, injected, fit, norm, highlight: false });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Report<T> {
    pub model: ForecastModel<T>,
    pub prune: PruneReport,
    pub symbolic: SymbolicReport,
}

/// Prunes a copy of `model` at `tau`, calibrates the pruned model on
/// `windows`, fits every surviving edge and flags the `top_m` largest
/// edges of each network.
pub fn generate_report<T: Scalar>(
    model: &ForecastModel<T>,
    windows: &Windows<T>,
    tau: f64,
    top_m: usize,
) -> Result<Report<T>> {
    let cfg = PruneConfig::new(tau)?;
    let mut pruned = model.clone();
    let prune_rep = prune(&mut pruned, cfg);
    let cal = calibrate(&pruned, windows)?;
    let mut records = Vec::new();
    let mut jobs = Vec::new();
    let mut spans = Vec::new();
    for (name, net) in pruned.networks() {
        let start = records.len();
        network_records(&name, net, &cal, &mut records, &mut jobs)?;
        spans.push((start, records.len()));
    }
    let (slots, work): (Vec<usize>, Vec<Job>) = jobs.into_iter().unzip();
    for (slot, fit) in slots.into_iter().zip(run_jobs(&work)) {
        records[slot].fit = fit;
    }
    for (start, end) in spans {
        let group = &mut records[start..end];
        group.sort_by(|x, y| x.layer.cmp(&y.layer).then(y.norm.total_cmp(&x.norm)));
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by(|&x, &y| group[y].norm.total_cmp(&group[x].norm));
        for &k in order.iter().take(top_m) {
            group[k].highlight = true;
        }
    }
    Ok(Report {
        model: pruned,
        prune: prune_rep,
        symbolic: SymbolicReport { records },
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::Stats;
    use crate::model::ModelConfig;
    use crate::taylorkan::SpectralPeaks;

    fn tiny(seed: u64) -> ForecastModel<f64> {
        let cfg = ModelConfig {
            lookback: 8,
            horizon: 4,
            width: 2,
            kernel: 3,
            trend_degree: 2,
            top_k: 2,
            patch_len: 4,
            stride: 2,
            lambda: 0.01,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 1,
            patience: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ForecastModel::new(&mut rng, cfg, SpectralPeaks::from_bins(vec![1, 3], 8)).unwrap()
    }

    fn windows(seed: u64) -> Windows<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = Tensor::from_fn(&[20, 2], |k| ((k / 2) as f64 * 0.7).sin() + rng.gen_range(-0.2..0.2));
        let st = Stats { variates: vec!["a".into(), "b".into()], mean: vec![0.0; 2], std: vec![1.0; 2] };
        Windows::new(series, 8, 4, st).unwrap()
    }

    #[test]
    fn sine_recovers_itself() {
        let f = symbolify_edge(f64::sin, -PI, PI);
        assert_eq!(f.family, Family::Sin);
        assert!((f.a - 1.0).abs() < 1e-3 && f.b.abs() < 1e-3, "{f:?}");
        assert!((f.c - 1.0).abs() < 1e-3 && f.d.abs() < 1e-3, "{f:?}");
        assert!(f.r2 > 0.999);
    }

    #[test]
    fn constants() {
        let f = symbolify_edge(|_| 5.0, -1.0, 2.0);
        assert_eq!((f.family, f.r2, f.d), (Family::Constant, 1.0, 5.0));
        let f = symbolify_edge(|x| x * x, 0.5, 0.5);
        assert_eq!((f.family, f.r2, f.d), (Family::Constant, 1.0, 0.25));
    }

    #[test]
    fn reported_r2_matches_residual_oracle() {
        let edge = TaylorEdge { w: 2.0, a: [0.5, 0.5, 0.5] };
        let (lo, hi) = (-2.5, 1.5);
        let fit = symbolify_edge(|x| edge.eval(x), lo, hi);
        let n = 63;
        let xs: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * (2 * k + 1) as f64 / (2 * n) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 2.0 * (x / (1.0 + (-x).exp())) + 1.0 + x + x * x).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let sst: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        let sse: f64 = xs.iter().zip(&ys).map(|(&x, y)| (fit.eval(x) - y).powi(2)).sum();
        assert!((fit.r2 - (1.0 - sse / sst).max(0.0)).abs() < 1e-6, "{fit:?}");
        assert!(fit.r2 > 0.9);
    }

    #[test]
    fn families_recover_under_disguise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for family in [Family::Identity, Family::Square, Family::Cube, Family::Exp, Family::Gaussian, Family::Silu] {
            for _ in 0..3 {
                let (a, b) = (rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0));
                let (c, d) = (rng.gen_range(0.5..5.0), rng.gen_range(-5.0..5.0));
                let f = symbolify_edge(|x| c * family.eval(a * x + b) + d, -PI, PI);
                assert_eq!(f.family, family, "{a} {b} {c} {d}: {f:?}");
                assert!(f.r2 > 0.99);
            }
        }
    }

    #[test]
    fn canonical_forms_preserve_values() {
        for family in LIBRARY {
            let raw = SymbolicFit { family, a: -1.3, b: 7.9, c: 0.7, d: -0.4, r2: 0.0 };
            let can = canonicalize(raw);
            for x in [-1.0, -0.2, 0.3, 1.1] {
                assert!((raw.eval(x) - can.eval(x)).abs() < 1e-9 * raw.eval(x).abs().max(1.0), "{family:?}");
            }
        }
    }

    #[test]
    fn rendering() {
        let f = SymbolicFit { family: Family::Sin, a: -0.02, b: -4.70, c: 114.33, d: -114.31, r2: 1.0 };
        assert_eq!(f.render(), "114.33sin(-0.02x-4.70)-114.31");
        let g = SymbolicFit { family: Family::Constant, a: 0.0, b: 0.0, c: 0.0, d: 5.0, r2: 1.0 };
        assert_eq!(g.render(), "5.00");
        let h = SymbolicFit { family: Family::Gaussian, a: 1.0, b: 0.5, c: 2.0, d: 0.0, r2: 1.0 };
        assert_eq!(h.render(), "2.00exp(-(1.00x+0.50)^2)+0.00");
    }

    #[test]
    fn injected_fits_are_exact() {
        let m = tiny(1);
        for net in [&m.trend, &m.seasonal] {
            let layer = &net.layers[0];
            let inj = layer.injection.as_ref().unwrap();
            for i in 0..layer.in_dim() {
                for q in 1..=inj.terms() {
                    let fit = injected_fit(inj, i, q);
                    for x in [-2.0, -0.3, 0.0, 1.7] {
                        let want = layer.eval_edge(i, inj.target(q), x);
                        assert!((fit.eval(x) - want).abs() < 1e-12, "{fit:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn pruning_properties() {
        let base = tiny(2);
        let total: usize = prune_status(&base).rows.iter().map(|r| r.total).sum();
        let mut last = usize::MAX;
        for tau in [0.0, 1e-6, 1e-4, 1e-2, f64::INFINITY] {
            let mut m = base.clone();
            let rep = prune(&mut m, PruneConfig::new(tau).unwrap());
            for r in &rep.rows {
                assert_eq!(r.pruned + r.preserved, r.total);
            }
            let kept = rep.preserved();
            assert!(kept <= last);
            last = kept;
            if tau == 0.0 {
                assert_eq!(kept, total);
            }
            if tau.is_infinite() {
                assert_eq!(kept, 0);
                assert!(rep.rows.iter().all(|r| r.ratio == 1.0));
            }
        }
        assert!(PruneConfig::new(-1e-9).is_err());
        assert!(PruneConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn masked_forward_equals_zeroed_forward() {
        let base = tiny(3);
        let mut pruned = base.clone();
        prune(&mut pruned, PruneConfig::new(2e-3).unwrap());
        let mut zeroed = base.clone();
        let mut any = false;
        for ((_, p), (_, z)) in pruned.networks().into_iter().zip(zeroed.networks_mut()) {
            for (lp, lz) in p.layers.iter().zip(z.layers.iter_mut()) {
                for i in 0..lp.in_dim() {
                    for j in 0..lp.out_dim() {
                        if !lp.is_injected(i, j) && !lp.is_active(i, j) {
                            lz.set_edge(i, j, TaylorEdge { w: 0.0, a: [0.0; 3] });
                            any = true;
                        }
                    }
                }
            }
        }
        assert!(any);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_fn(&[5, 8], |_| rng.gen_range(-2.0..2.0));
        let a = pruned.forward(&x).unwrap();
        let b = zeroed.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn etth1_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let peaks = SpectralPeaks::<f64>::from_bins(vec![4, 8, 12, 16, 20], 96);
        let m = ForecastModel::new(&mut rng, ModelConfig::etth1(), peaks).unwrap();
        let totals: Vec<usize> = prune_status(&m).rows.iter().map(|r| r.total).collect();
        assert_eq!(totals, vec![8928, 9216, 8736, 9216, 1377]);
    }

    #[test]
    fn untrained_infinite_threshold_leaves_injected_edges() {
        let m = tiny(6);
        let rep = generate_report(&m, &windows(7), f64::INFINITY, 3).unwrap();
        assert!(rep.symbolic.records.iter().all(|r| r.injected));
        assert_eq!(rep.symbolic.records.len(), 2 * 8 + 2 * 8);
        let highlighted: Vec<_> = rep.symbolic.highlighted().collect();
        assert_eq!(highlighted.len(), 6);
    }

    #[test]
    fn report_consistency() {
        let m = tiny(8);
        let rep = generate_report(&m, &windows(9), 1e-3, 3).unwrap();
        let live = rep.symbolic.records.iter().filter(|r| !r.injected).count();
        assert_eq!(live, rep.prune.preserved());
        let tsv = rep.symbolic.to_tsv();
        assert_eq!(tsv.lines().count(), rep.symbolic.records.len() + 1);
        for (name, net) in rep.model.networks() {
            let recs: Vec<_> = rep.symbolic.records.iter().filter(|r| r.network == name).collect();
            let hl = recs.iter().filter(|r| r.highlight).count();
            assert_eq!(hl, recs.len().min(3), "{name}");
            for k in 0..net.depth() {
                let norms: Vec<f64> = recs.iter().filter(|r| r.layer == k).map(|r| r.norm).collect();
                assert!(norms.windows(2).all(|w| w[0] >= w[1]));
            }
        }
        for r in &rep.symbolic.records {
            assert!((0.0..=1.0).contains(&r.fit.r2));
        }
        let text = rep.symbolic.render_text(&rep.prune);
        assert!(text.contains("Layer trend:0"));
        let graph = rep.symbolic.graph(&rep.model);
        assert_eq!(graph.lines().filter(|l| l.starts_with("edge\t")).count(), rep.symbolic.records.len());
        let zero = generate_report(&m, &windows(9), 0.0, 3).unwrap();
        let adjustable: usize = zero.prune.rows.iter().map(|r| r.total).sum();
        assert_eq!(zero.symbolic.records.iter().filter(|r| !r.injected).count(), adjustable);
    }
}
