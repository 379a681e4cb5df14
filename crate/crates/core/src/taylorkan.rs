//! Taylor-parameterized KAN layers.
//!
//! Every edge of a layer carries `φ(x) = w·(silu(x) + a₀ + a₁x + a₂x²)`.
//! The first layer of the trend and seasonal networks additionally carries
//! fixed-form injected edges (a polynomial in the input node, or a short
//! Fourier series at extracted frequencies). Injected terms occupy grid
//! positions: the Taylor edge at such a position is masked out, so a layer
//! always has exactly `I·J` edges of which `I·n_injected` are fixed.
//!
//! Parameter grids are stored as `(I, J)` so a batch `(B, I)` maps to
//! `(B, J)` by plain matrix products.

use rand::Rng;

use crate::autodiff::{silu, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{param_zeros, uniform, Bindings};
use crate::scalar::Scalar;

pub const TAYLOR_ORDER: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorEdge<T> {
    pub w: T,
    pub a: [T; 3],
}

impl<T: Scalar> TaylorEdge<T> {
    pub fn eval(&self, x: T) -> T {
        let [a0, a1, a2] = self.a;
        self.w * (silu(x) + a0 + a1 * x + a2 * x * x)
    }

    /// `(a₁² + a₂²) / 2`; the constant term carries no shape.
    pub fn l2_norm(&self) -> T {
        (self.a[1] * self.a[1] + self.a[2] * self.a[2]) / T::lit(2.0)
    }
}

/// Differentiable Taylor edge applied elementwise; `w` and each `a` are
/// rank-0 vars.
pub fn taylor_edge_eval<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, a: [Var; 3]) -> Result<Var> {
    let s = g.silu(x);
    let x2 = g.square(x);
    let t1 = g.mul(x, a[1])?;
    let t2 = g.mul(x2, a[2])?;
    let poly = g.add(t1, t2)?;
    let poly = g.add(poly, a[0])?;
    let inner = g.add(s, poly)?;
    g.mul(inner, w)
}

/// Polynomial prior `m₀ + m₁x + … + m_p x^p` on one input node.
#[derive(Clone, Debug, PartialEq)]
pub struct TrendInjectEdge<T> {
    pub m: Vec<T>,
}

impl<T: Scalar> TrendInjectEdge<T> {
    pub fn degree(&self) -> usize {
        self.m.len() - 1
    }

    pub fn eval(&self, x: T) -> T {
        self.m.iter().enumerate().map(|(q, &c)| c * x.powi(q as i32)).sum()
    }

    pub fn l2_norm(&self) -> T {
        let p = self.degree();
        self.m[1..].iter().map(|&c| c * c).sum::<T>() / T::from_count(p)
    }
}

/// Fourier prior `a₀/2 + Σ a_k cos(f_kπx) + b_k sin(f_kπx)` on one input node.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonalInjectEdge<T> {
    pub freqs: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> SeasonalInjectEdge<T> {
    pub fn eval(&self, x: T) -> T {
        let mut y = self.a[0] / T::lit(2.0);
        for (k, &f) in self.freqs.iter().enumerate() {
            let u = f * T::PI() * x;
            y += self.a[k + 1] * u.cos() + self.b[k] * u.sin();
        }
        y
    }

    pub fn l2_norm(&self) -> T {
        let k = self.freqs.len();
        let s: T = self.a[1..].iter().chain(&self.b).map(|&c| c * c).sum();
        s / T::from_count(2 * k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Edge<T> {
    Taylor(TaylorEdge<T>),
    Trend(TrendInjectEdge<T>),
    Seasonal(SeasonalInjectEdge<T>),
}

pub fn edge_l2_norm<T: Scalar>(edge: &Edge<T>) -> T {
    match edge {
        Edge::Taylor(e) => e.l2_norm(),
        Edge::Trend(e) => e.l2_norm(),
        Edge::Seasonal(e) => e.l2_norm(),
    }
}

/// Fixed-form first-layer edges. Term `q` (1-based) of every input node
/// feeds output node `target(q)`; the constant term rides on term 1.
#[derive(Clone, Debug, PartialEq)]
pub enum Injection<T> {
    /// `m`: `(p+1, I)`, row `q` holds the coefficient of `x^q`.
    Trend { m: Tensor<T> },
    /// `a`: `(K+1, I)` with row 0 the constant `a₀`; `b`: `(K, I)`.
    Seasonal {
        bins: Vec<usize>,
        freqs: Vec<T>,
        a: Tensor<T>,
        b: Tensor<T>,
    },
}

impl<T: Scalar> Injection<T> {
    pub fn trend<R: Rng + ?Sized>(rng: &mut R, input: usize, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::invalid("trend_inject", "degree must be at least 1"));
        }
        Ok(Injection::Trend {
            m: uniform(rng, &[degree + 1, input], 0.1),
        })
    }

    pub fn seasonal<R: Rng + ?Sized>(rng: &mut R, input: usize, peaks: &SpectralPeaks<T>) -> Result<Self> {
        let k = peaks.bins.len();
        if k == 0 {
            return Err(Error::invalid("seasonal_inject", "at least one frequency is required"));
        }
        Ok(Injection::Seasonal {
            bins: peaks.bins.clone(),
            freqs: peaks.freqs.clone(),
            a: uniform(rng, &[k + 1, input], 0.1),
            b: uniform(rng, &[k, input], 0.1),
        })
    }

    /// Number of injected terms per input node (`p` or `K`).
    pub fn terms(&self) -> usize {
        match self {
            Injection::Trend { m } => m.shape()[0] - 1,
            Injection::Seasonal { bins, .. } => bins.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Injection::Trend { m } => m.shape()[1],
            Injection::Seasonal { a, .. } => a.shape()[1],
        }
    }

    pub fn target(&self, q: usize) -> usize {
        match self {
            Injection::Trend { .. } => q - 1,
            Injection::Seasonal { bins, .. } => bins[q - 1],
        }
    }

    pub fn targets(&self) -> Vec<usize> {
        (1..=self.terms()).map(|q| self.target(q)).collect()
    }

    /// Term index (1-based) that lands on output node `j`, if any.
    pub fn term_at(&self, j: usize) -> Option<usize> {
        (1..=self.terms()).find(|&q| self.target(q) == j)
    }

    /// Whole injected set of input node `i` as one edge.
    pub fn node_edge(&self, i: usize) -> Edge<T> {
        match self {
            Injection::Trend { m } => {
                let p = m.shape()[0];
                Edge::Trend(TrendInjectEdge {
                    m: (0..p).map(|q| m.at(&[q, i])).collect(),
                })
            }
            Injection::Seasonal { freqs, a, b, .. } => {
                let k = freqs.len();
                Edge::Seasonal(SeasonalInjectEdge {
                    freqs: freqs.clone(),
                    a: (0..=k).map(|r| a.at(&[r, i])).collect(),
                    b: (0..k).map(|r| b.at(&[r, i])).collect(),
                })
            }
        }
    }

    /// Value of term `q` of node `i`, including the constant on term 1.
    pub fn term_eval(&self, i: usize, q: usize, x: T) -> T {
        match self {
            Injection::Trend { m } => {
                let c = if q == 1 { m.at(&[0, i]) } else { T::zero() };
                m.at(&[q, i]) * x.powi(q as i32) + c
            }
            Injection::Seasonal { freqs, a, b, .. } => {
                let c = if q == 1 { a.at(&[0, i]) / T::lit(2.0) } else { T::zero() };
                let u = freqs[q - 1] * T::PI() * x;
                a.at(&[q, i]) * u.cos() + b.at(&[q - 1, i]) * u.sin() + c
            }
        }
    }

    /// Norm of the single term `q` of node `i`.
    pub fn term_norm(&self, i: usize, q: usize) -> T {
        match self {
            Injection::Trend { m } => m.at(&[q, i]) * m.at(&[q, i]),
            Injection::Seasonal { a, b, .. } => {
                let (ak, bk) = (a.at(&[q, i]), b.at(&[q - 1, i]));
                (ak * ak + bk * bk) / T::lit(2.0)
            }
        }
    }

    fn validate(&self, input: usize, output: usize) -> Result<()> {
        if self.input_dim() != input {
            return Err(Error::invalid(
                "injection",
                format!("covers {} input nodes, layer has {input}", self.input_dim()),
            ));
        }
        let targets = self.targets();
        for (n, &t) in targets.iter().enumerate() {
            if t >= output {
                return Err(Error::invalid("injection", format!("target node {t} outside layer width {output}")));
            }
            if targets[..n].contains(&t) {
                return Err(Error::invalid("injection", format!("target node {t} used twice")));
            }
        }
        if let Injection::Seasonal { bins, freqs, a, b } = self {
            let k = bins.len();
            if freqs.len() != k || a.shape() != [k + 1, input] || b.shape() != [k, input] {
                return Err(Error::invalid("injection", "seasonal coefficient shapes disagree"));
            }
        }
        Ok(())
    }

    fn params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        match self {
            Injection::Trend { m } => vec![(format!("{prefix}.m"), m)],
            Injection::Seasonal { a, b, .. } => vec![(format!("{prefix}.fa"), a), (format!("{prefix}.fb"), b)],
        }
    }

    fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        match self {
            Injection::Trend { m } => vec![(format!("{prefix}.m"), m)],
            Injection::Seasonal { a, b, .. } => vec![(format!("{prefix}.fa"), a), (format!("{prefix}.fb"), b)],
        }
    }

    /// `(B, I) → (B, J)` contribution of all injected terms.
    fn forward(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str, x: Var, output: usize) -> Result<Var> {
        let input = self.input_dim();
        let n = self.terms();
        let mut cols = Vec::with_capacity(n);
        match self {
            Injection::Trend { m } => {
                let mv = bnd.fetch(g, format!("{prefix}.m"), m);
                for q in 1..=n {
                    let row = g.slice(mv, 0, q, 1)?;
                    let row = g.reshape(row, &[input, 1])?;
                    let xq = g.pow_int(x, q as i32);
                    cols.push(g.matmul(xq, row)?);
                }
                let m0 = g.slice(mv, 0, 0, 1)?;
                let c = g.sum_all(m0);
                cols[0] = g.add(cols[0], c)?;
            }
            Injection::Seasonal { freqs, a, b, .. } => {
                let av = bnd.fetch(g, format!("{prefix}.fa"), a);
                let bv = bnd.fetch(g, format!("{prefix}.fb"), b);
                for (k, &f) in freqs.iter().enumerate() {
                    let u = g.scale(x, f * T::PI());
                    let cu = g.cos(u);
                    let su = g.sin(u);
                    let ak = g.slice(av, 0, k + 1, 1)?;
                    let ak = g.reshape(ak, &[input, 1])?;
                    let bk = g.slice(bv, 0, k, 1)?;
                    let bk = g.reshape(bk, &[input, 1])?;
                    let ca = g.matmul(cu, ak)?;
                    let sb = g.matmul(su, bk)?;
                    cols.push(g.add(ca, sb)?);
                }
                let a0 = g.slice(av, 0, 0, 1)?;
                let c = g.sum_all(a0);
                let c = g.scale(c, T::lit(0.5));
                cols[0] = g.add(cols[0], c)?;
            }
        }
        let cat = g.concat(&cols, 1)?;
        let mut place = Tensor::zeros(&[n, output]);
        for q in 1..=n {
            place.data_mut()[(q - 1) * output + self.target(q)] = T::one();
        }
        let place = g.constant(place);
        g.matmul(cat, place)
    }

    fn reg(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str) -> Result<Var> {
        let n = self.terms();
        match self {
            Injection::Trend { m } => {
                let mv = bnd.fetch(g, format!("{prefix}.m"), m);
                let rows = g.slice(mv, 0, 1, n)?;
                let sq = g.square(rows);
                let s = g.sum_all(sq);
                Ok(g.scale(s, T::one() / T::from_count(n)))
            }
            Injection::Seasonal { a, b, .. } => {
                let av = bnd.fetch(g, format!("{prefix}.fa"), a);
                let bv = bnd.fetch(g, format!("{prefix}.fb"), b);
                let rows = g.slice(av, 0, 1, n)?;
                let sa = g.square(rows);
                let sa = g.sum_all(sa);
                let sb = g.square(bv);
                let sb = g.sum_all(sb);
                let s = g.add(sa, sb)?;
                Ok(g.scale(s, T::one() / T::from_count(2 * n)))
            }
        }
    }
}

/// Dense `I → J` grid of Taylor edges, plus optional injected terms.
#[derive(Clone, Debug, PartialEq)]
pub struct TaylorKanLayer<T> {
    /// `(I, J)` edge weights.
    pub w: Tensor<T>,
    pub a0: Tensor<T>,
    pub a1: Tensor<T>,
    pub a2: Tensor<T>,
    /// `(I, J)`, 1 for a live Taylor edge, 0 for pruned or injected positions.
    pub mask: Tensor<T>,
    pub injection: Option<Injection<T>>,
}

impl<T: Scalar> TaylorKanLayer<T> {
    /// `w ~ U(±1/√I)`, `a ~ U(±0.1/√I)`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let shape = [input, output];
        Self {
            w: uniform(rng, &shape, bound),
            a0: uniform(rng, &shape, 0.1 * bound),
            a1: uniform(rng, &shape, 0.1 * bound),
            a2: uniform(rng, &shape, 0.1 * bound),
            mask: Tensor::full(&shape, T::one()),
            injection: None,
        }
    }

    /// All weights and coefficients zero, every edge live.
    pub fn zeros(input: usize, output: usize) -> Self {
        let shape = [input, output];
        Self {
            w: param_zeros(&shape),
            a0: param_zeros(&shape),
            a1: param_zeros(&shape),
            a2: param_zeros(&shape),
            mask: Tensor::full(&shape, T::one()),
            injection: None,
        }
    }

    /// Attaches injected terms, masking the Taylor edges they replace.
    pub fn with_injection(mut self, injection: Injection<T>) -> Result<Self> {
        let (input, output) = (self.in_dim(), self.out_dim());
        injection.validate(input, output)?;
        for j in injection.targets() {
            for i in 0..input {
                self.set_edge(i, j, TaylorEdge { w: T::zero(), a: [T::zero(); 3] });
                self.mask.data_mut()[i * output + j] = T::zero();
            }
        }
        self.injection = Some(injection);
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[1]
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.out_dim() + j
    }

    pub fn edge(&self, i: usize, j: usize) -> TaylorEdge<T> {
        let k = self.idx(i, j);
        TaylorEdge {
            w: self.w.data()[k],
            a: [self.a0.data()[k], self.a1.data()[k], self.a2.data()[k]],
        }
    }

    pub fn set_edge(&mut self, i: usize, j: usize, e: TaylorEdge<T>) {
        let k = self.idx(i, j);
        self.w.data_mut()[k] = e.w;
        self.a0.data_mut()[k] = e.a[0];
        self.a1.data_mut()[k] = e.a[1];
        self.a2.data_mut()[k] = e.a[2];
    }

    pub fn is_injected(&self, _i: usize, j: usize) -> bool {
        self.injection.as_ref().is_some_and(|inj| inj.term_at(j).is_some())
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.mask.data()[self.idx(i, j)] != T::zero()
    }

    /// Edges subject to training and pruning (injected positions excluded).
    pub fn adjustable_count(&self) -> usize {
        let fixed = self.injection.as_ref().map_or(0, |inj| inj.terms() * self.in_dim());
        self.in_dim() * self.out_dim() - fixed
    }

    pub fn injected_count(&self) -> usize {
        self.in_dim() * self.out_dim() - self.adjustable_count()
    }

    pub fn preserved_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != T::zero()).count()
    }

    /// Norm of the edge at `(i, j)`: the Taylor norm, or the injected
    /// term's norm at injected positions.
    pub fn edge_norm(&self, i: usize, j: usize) -> T {
        if let Some(inj) = &self.injection {
            if let Some(q) = inj.term_at(j) {
                return inj.term_norm(i, q);
            }
        }
        if self.is_active(i, j) {
            self.edge(i, j).l2_norm()
        } else {
            T::zero()
        }
    }

    /// Scalar function carried by edge `(i, j)`.
    pub fn eval_edge(&self, i: usize, j: usize, x: T) -> T {
        if let Some(inj) = &self.injection {
            if let Some(q) = inj.term_at(j) {
                return inj.term_eval(i, q, x);
            }
        }
        if self.is_active(i, j) {
            self.edge(i, j).eval(x)
        } else {
            T::zero()
        }
    }

    /// Zeroes and masks every live Taylor edge with norm below `tau`.
    /// Returns how many edges were pruned by this call.
    pub fn prune_below(&mut self, tau: T) -> usize {
        let mut pruned = 0;
        for i in 0..self.in_dim() {
            for j in 0..self.out_dim() {
                if self.is_active(i, j) && self.edge(i, j).l2_norm() < tau {
                    self.set_edge(i, j, TaylorEdge { w: T::zero(), a: [T::zero(); 3] });
                    let k = self.idx(i, j);
                    self.mask.data_mut()[k] = T::zero();
                    pruned += 1;
                }
            }
        }
        pruned
    }

    /// `(B, I) → (B, J)`.
    pub fn forward(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 2 || xs[1] != self.in_dim() {
            return Err(Error::shape("layer_forward", &xs, self.w.shape()));
        }
        let w = bnd.fetch(g, format!("{prefix}.w"), &self.w);
        let a0 = bnd.fetch(g, format!("{prefix}.a0"), &self.a0);
        let a1 = bnd.fetch(g, format!("{prefix}.a1"), &self.a1);
        let a2 = bnd.fetch(g, format!("{prefix}.a2"), &self.a2);
        let mask = g.constant(self.mask.clone());
        let wm = g.mul(w, mask)?;
        let w1 = g.mul(wm, a1)?;
        let w2 = g.mul(wm, a2)?;
        let stacked = g.concat(&[wm, w1, w2], 0)?;
        let s = g.silu(x);
        let x2 = g.square(x);
        let feats = g.concat(&[s, x, x2], 1)?;
        let y = g.matmul(feats, stacked)?;
        let c = g.mul(wm, a0)?;
        let c = g.sum_axis(c, 0)?;
        let y = g.add(y, c)?;
        match &self.injection {
            Some(inj) => {
                let yi = inj.forward(g, bnd, &format!("{prefix}.inj"), x, self.out_dim())?;
                g.add(y, yi)
            }
            None => Ok(y),
        }
    }

    /// Sum of all edge norms as a graph scalar.
    pub fn reg(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str) -> Result<Var> {
        let a1 = bnd.fetch(g, format!("{prefix}.a1"), &self.a1);
        let a2 = bnd.fetch(g, format!("{prefix}.a2"), &self.a2);
        let mask = g.constant(self.mask.clone());
        let s1 = g.square(a1);
        let s2 = g.square(a2);
        let s = g.add(s1, s2)?;
        let s = g.mul(s, mask)?;
        let s = g.sum_all(s);
        let taylor = g.scale(s, T::lit(0.5));
        match &self.injection {
            Some(inj) => {
                let r = inj.reg(g, bnd, &format!("{prefix}.inj"))?;
                g.add(taylor, r)
            }
            None => Ok(taylor),
        }
    }

    /// Brute-force per-edge sum matching [`TaylorKanLayer::reg`].
    pub fn reg_value(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.in_dim() {
            for j in 0..self.out_dim() {
                if self.is_active(i, j) {
                    s += self.edge(i, j).l2_norm();
                }
            }
            if let Some(inj) = &self.injection {
                s += edge_l2_norm(&inj.node_edge(i));
            }
        }
        s
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut v = vec![
            (format!("{prefix}.w"), &self.w),
            (format!("{prefix}.a0"), &self.a0),
            (format!("{prefix}.a1"), &self.a1),
            (format!("{prefix}.a2"), &self.a2),
        ];
        if let Some(inj) = &self.injection {
            v.extend(inj.params(&format!("{prefix}.inj")));
        }
        v
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = vec![
            (format!("{prefix}.w"), &mut self.w),
            (format!("{prefix}.a0"), &mut self.a0),
            (format!("{prefix}.a1"), &mut self.a1),
            (format!("{prefix}.a2"), &mut self.a2),
        ];
        if let Some(inj) = &mut self.injection {
            v.extend(inj.params_mut(&format!("{prefix}.inj")));
        }
        v
    }
}

/// Applies one layer to `(…, I)` values.
pub fn layer_forward<T: Scalar>(x: &Tensor<T>, layer: &TaylorKanLayer<T>) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    let i = *shape.last().unwrap_or(&0);
    if shape.is_empty() || i != layer.in_dim() {
        return Err(Error::shape("layer_forward", &shape, layer.w.shape()));
    }
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let xv = g.constant(x.clone());
    let flat = g.reshape(xv, &[x.numel() / i, i])?;
    let y = layer.forward(&mut g, &mut b, "layer", flat)?;
    let mut out = shape;
    *out.last_mut().unwrap() = layer.out_dim();
    let y = g.reshape(y, &out)?;
    Ok(g.tensor(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KanNetwork<T> {
    pub layers: Vec<TaylorKanLayer<T>>,
}

impl<T: Scalar> KanNetwork<T> {
    pub fn new(layers: Vec<TaylorKanLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("kan_network", "at least one layer is required"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::invalid(
                    "kan_network",
                    format!(
                        "layer {k} emits {} nodes, layer {} expects {}",
                        pair[0].out_dim(),
                        k + 1,
                        pair[1].in_dim()
                    ),
                ));
            }
            if pair[1].injection.is_some() {
                return Err(Error::invalid("kan_network", "injected edges are only allowed on the first layer"));
            }
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.in_dim() * l.out_dim()).sum()
    }

    /// `(…, I) → (…, J)`; the input of every layer is pushed onto `probe`
    /// as a `(B, ·)` var when one is given.
    pub fn forward_probe(
        &self,
        g: &mut Graph<T>,
        bnd: &mut Bindings,
        prefix: &str,
        x: Var,
        mut probe: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let i = *shape.last().unwrap_or(&0);
        if shape.is_empty() || i != self.in_dim() {
            return Err(Error::shape("kan_forward", &shape, &[self.in_dim()]));
        }
        let rows = shape.iter().product::<usize>() / i;
        let mut h = g.reshape(x, &[rows, i])?;
        for (k, layer) in self.layers.iter().enumerate() {
            if let Some(p) = probe.as_deref_mut() {
                p.push(h);
            }
            h = layer.forward(g, bnd, &format!("{prefix}.{k}"), h)?;
        }
        let mut out = shape;
        *out.last_mut().unwrap() = self.out_dim();
        g.reshape(h, &out)
    }

    pub fn forward(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str, x: Var) -> Result<Var> {
        self.forward_probe(g, bnd, prefix, x, None)
    }

    pub fn reg(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str) -> Result<Var> {
        let mut total = self.layers[0].reg(g, bnd, &format!("{prefix}.0"))?;
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            let r = layer.reg(g, bnd, &format!("{prefix}.{k}"))?;
            total = g.add(total, r)?;
        }
        Ok(total)
    }

    pub fn reg_value(&self) -> T {
        self.layers.iter().map(|l| l.reg_value()).sum()
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| l.params(&format!("{prefix}.{k}")))
            .collect()
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(k, l)| l.params_mut(&format!("{prefix}.{k}")))
            .collect()
    }
}

/// Sparsification penalty of a whole network, as a graph scalar.
pub fn reg_loss<T: Scalar>(g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str, net: &KanNetwork<T>) -> Result<Var> {
    net.reg(g, bnd, prefix)
}

/// Dominant non-DC frequencies of a seasonal signal.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPeaks<T> {
    /// DFT bin indices, strongest first.
    pub bins: Vec<usize>,
    /// `2·bin/L`, so `cos(fπt)` completes `bin` cycles over `L` steps.
    pub freqs: Vec<T>,
}

impl<T: Scalar> SpectralPeaks<T> {
    pub fn from_bins(bins: Vec<usize>, len: usize) -> Self {
        let freqs = bins
            .iter()
            .map(|&b| T::from_count(2 * b) / T::from_count(len))
            .collect();
        Self { bins, freqs }
    }
}

/// Top-`k` bins of the amplitude spectrum along the last axis, averaged
/// over every leading index. Ties go to the lower bin.
pub fn top_k_frequencies<T: Scalar>(seasonal: &Tensor<T>, k: usize) -> Result<SpectralPeaks<T>> {
    let len = *seasonal.shape().last().unwrap_or(&0);
    let nbins = len / 2;
    if k == 0 || k > nbins {
        return Err(Error::invalid(
            "top_k_frequencies",
            format!("K = {k} not in 1..={nbins} for series length {len}"),
        ));
    }
    let rows = seasonal.numel() / len;
    let mut cos = vec![0.0f64; (nbins + 1) * len];
    let mut sin = vec![0.0f64; (nbins + 1) * len];
    for b in 0..=nbins {
        for t in 0..len {
            let ang = 2.0 * std::f64::consts::PI * ((b * t) % len) as f64 / len as f64;
            cos[b * len + t] = ang.cos();
            sin[b * len + t] = ang.sin();
        }
    }
    let mut amp = vec![0.0f64; nbins + 1];
    let data = seasonal.data();
    let mut scale = 0.0f64;
    for r in 0..rows {
        let row = &data[r * len..(r + 1) * len];
        for b in 0..=nbins {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in row.iter().enumerate() {
                let v = v.as_f64();
                re += v * cos[b * len + t];
                im -= v * sin[b * len + t];
            }
            amp[b] += (re * re + im * im).sqrt();
        }
        scale += row.iter().map(|v| v.as_f64().abs()).sum::<f64>();
    }
    let peak = amp[1..].iter().copied().fold(0.0, f64::max);
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(peak > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NoSpectralEnergy);
    }
    // amplitudes within rounding noise of each other count as tied
    let tol = 1e-9 * peak;
    let mut left: Vec<usize> = (1..=nbins).collect();
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let best = left.iter().map(|&b| amp[b]).fold(f64::NEG_INFINITY, f64::max);
        let pos = left.iter().position(|&b| amp[b] >= best - tol).unwrap_or(0);
        order.push(left.remove(pos));
    }
    Ok(SpectralPeaks::from_bins(order, len))
}

/// `len → hidden → len` network whose first layer carries `x¹..x^p` on every
/// input node.
pub fn build_trend_kan<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    hidden: usize,
    degree: usize,
) -> Result<KanNetwork<T>> {
    let inj = Injection::trend(rng, len, degree)?;
    let first = TaylorKanLayer::new(rng, len, hidden).with_injection(inj)?;
    let second = TaylorKanLayer::new(rng, hidden, len);
    KanNetwork::new(vec![first, second])
}

/// `len → hidden → len` network whose first layer carries the Fourier
/// prior at `peaks` on every input node.
pub fn build_seasonal_kan<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    hidden: usize,
    peaks: &SpectralPeaks<T>,
) -> Result<KanNetwork<T>> {
    let inj = Injection::seasonal(rng, len, peaks)?;
    let first = TaylorKanLayer::new(rng, len, hidden).with_injection(inj)?;
    let second = TaylorKanLayer::new(rng, hidden, len);
    KanNetwork::new(vec![first, second])
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::max_relative_error;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| r.gen_range(-bound..bound))
    }

    #[test]
    fn edge_examples() {
        let silu_only = TaylorEdge { w: 1.0f64, a: [0.0; 3] };
        assert_eq!(silu_only.eval(0.0), 0.0);
        let dead = TaylorEdge { w: 0.0f64, a: [3.0, -1.0, 2.0] };
        for x in [-2.0, 0.0, 5.0] {
            assert_eq!(dead.eval(x), 0.0);
        }
        let e = TaylorEdge { w: 2.0f64, a: [1.0, 1.0, 1.0] };
        assert!((e.eval(1.0) - 7.4621171573).abs() < 1e-9);
    }

    #[test]
    fn edge_graph_matches_scalar_and_gradients() {
        let mut r = rng(3);
        for _ in 0..20 {
            let w: f64 = r.gen_range(-2.0..2.0);
            let a = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let xs = random_tensor(&mut r, &[5], 3.0);
            let params = Tensor::new(&[4], vec![w, a[0], a[1], a[2]]).unwrap();
            let run = |p: &[f64], x: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
                let mut g = Graph::new();
                let pv = g.leaf(&Tensor::new(&[4], p.to_vec()).unwrap().into_param());
                let xv = g.leaf(&Tensor::new(&[5], x.to_vec()).unwrap().into_param());
                let parts: Vec<Var> = (0..4)
                    .map(|k| {
                        let s = g.slice(pv, 0, k, 1).unwrap();
                        g.reshape(s, &[]).unwrap()
                    })
                    .collect();
                let y = taylor_edge_eval(&mut g, xv, parts[0], [parts[1], parts[2], parts[3]]).unwrap();
                let vals = g.value(y).to_vec();
                let l = g.sum_all(y);
                g.backward(l).unwrap();
                (g.item(l), g.grad(pv).unwrap().to_vec(), vals.to_vec())
            };
            let (_, gp, vals) = run(params.data(), xs.data());
            let edge = TaylorEdge { w, a };
            for (v, x) in vals.iter().zip(xs.data()) {
                assert!((v - edge.eval(*x)).abs() < 1e-14);
            }
            let err = max_relative_error(|p| Ok(run(p, xs.data()).0), params.data(), &gp, 1e-5).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn norms() {
        let e = TaylorEdge { w: 1.0, a: [7.0, 3.0, 4.0] };
        assert_eq!(edge_l2_norm(&Edge::Taylor(e)), 12.5);
        let c = TaylorEdge { w: 1.0, a: [5.0, 0.0, 0.0] };
        assert_eq!(c.l2_norm(), 0.0);
        let t = TrendInjectEdge { m: vec![0.0, 2.0, 2.0] };
        assert_eq!(edge_l2_norm(&Edge::Trend(t)), 4.0);
        let s = SeasonalInjectEdge { freqs: vec![0.5], a: vec![9.0, 1.0], b: vec![3.0] };
        assert_eq!(edge_l2_norm(&Edge::Seasonal(s)), 5.0);
    }

    #[test]
    fn single_edge_layer() {
        let mut layer = TaylorKanLayer::<f64>::zeros(1, 1);
        layer.set_edge(0, 0, TaylorEdge { w: 1.0, a: [0.75, 0.0, 0.0] });
        let x = Tensor::new(&[4, 1], vec![-1.0, 0.0, 0.5, 3.0]).unwrap();
        let y = layer_forward(&x, &layer).unwrap();
        for (yv, xv) in y.data().iter().zip(x.data()) {
            assert!((yv - (silu(*xv) + 0.75)).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_trend_edge() {
        let m = Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap().into_param();
        let layer = TaylorKanLayer::<f64>::zeros(2, 3)
            .with_injection(Injection::Trend { m })
            .unwrap();
        let mut r = rng(1);
        let x = random_tensor(&mut r, &[3, 5, 2], 2.0);
        let y = layer_forward(&x, &layer).unwrap();
        assert_eq!(y.shape(), &[3, 5, 3]);
        for row in 0..15 {
            assert_eq!(y.data()[row * 3], x.data()[row * 2]);
            assert_eq!(y.data()[row * 3 + 1], 0.0);
            assert_eq!(y.data()[row * 3 + 2], 0.0);
        }
    }

    #[test]
    fn two_inputs_sum_independent_edges() {
        let mut r = rng(2);
        let layer = TaylorKanLayer::<f64>::new(&mut r, 2, 1);
        let x = random_tensor(&mut r, &[10, 2], 2.0);
        let y = layer_forward(&x, &layer).unwrap();
        let (e0, e1) = (layer.edge(0, 0), layer.edge(1, 0));
        for n in 0..10 {
            let want = e0.eval(x.at(&[n, 0])) + e1.eval(x.at(&[n, 1]));
            assert!((y.data()[n] - want).abs() < 1e-14);
        }
    }

    fn injected_layers(r: &mut ChaCha8Rng) -> Vec<TaylorKanLayer<f64>> {
        let trend = TaylorKanLayer::new(r, 4, 5).with_injection(Injection::trend(r, 4, 3).unwrap()).unwrap();
        let peaks = SpectralPeaks::from_bins(vec![3, 1], 8);
        let seasonal = TaylorKanLayer::new(r, 4, 5)
            .with_injection(Injection::seasonal(r, 4, &peaks).unwrap())
            .unwrap();
        vec![trend, seasonal, TaylorKanLayer::new(r, 4, 5)]
    }

    #[test]
    fn layer_matches_per_edge_oracle() {
        let mut r = rng(4);
        for layer in injected_layers(&mut r) {
            let x = random_tensor(&mut r, &[7, 4], 1.5);
            let y = layer_forward(&x, &layer).unwrap();
            for n in 0..7 {
                for j in 0..5 {
                    let want: f64 = (0..4).map(|i| layer.eval_edge(i, j, x.at(&[n, i]))).sum();
                    assert!((y.at(&[n, j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn layer_gradients() {
        let mut r = rng(5);
        for layer in injected_layers(&mut r) {
            let x = random_tensor(&mut r, &[6, 4], 1.5);
            let wts = random_tensor(&mut r, &[6, 5], 1.0);
            let names: Vec<String> = layer.params("l").into_iter().map(|(n, _)| n).collect();
            for name in &names {
                let loss_and_grad = |lay: &TaylorKanLayer<f64>| -> (f64, Vec<f64>) {
                    let mut g = Graph::new();
                    let mut b = Bindings::new();
                    let xv = g.constant(x.clone());
                    let y = lay.forward(&mut g, &mut b, "l", xv).unwrap();
                    let wv = g.constant(wts.clone());
                    let y = g.mul(y, wv).unwrap();
                    let y = g.sum_all(y);
                    let reg = lay.reg(&mut g, &mut b, "l").unwrap();
                    let l = g.add(y, reg).unwrap();
                    g.backward(l).unwrap();
                    (g.item(l), g.grad(b.get(name).unwrap()).unwrap().to_vec())
                };
                let (_, grad) = loss_and_grad(&layer);
                let x0: Vec<f64> = layer.params("l").into_iter().find(|(n, _)| n == name).unwrap().1.data().to_vec();
                let err = max_relative_error(
                    |p| {
                        let mut l2 = layer.clone();
                        for (n, t) in l2.params_mut("l") {
                            if &n == name {
                                t.data_mut().copy_from_slice(p);
                            }
                        }
                        Ok(loss_and_grad(&l2).0)
                    },
                    &x0,
                    &grad,
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }

    #[test]
    fn graph_reg_matches_brute_force() {
        let mut r = rng(6);
        for layer in injected_layers(&mut r) {
            let net = KanNetwork::new(vec![layer, TaylorKanLayer::new(&mut r, 5, 3)]).unwrap();
            let mut g = Graph::new();
            let mut b = Bindings::new();
            let v = reg_loss(&mut g, &mut b, "n", &net).unwrap();
            assert!((g.item(v) - net.reg_value()).abs() < 1e-12);
        }
    }

    #[test]
    fn reg_additivity_example() {
        let m = Tensor::new(&[3, 1], vec![0.0, 2.0, 2.0]).unwrap().into_param();
        let mut layer = TaylorKanLayer::<f64>::zeros(1, 3).with_injection(Injection::Trend { m }).unwrap();
        layer.set_edge(0, 2, TaylorEdge { w: 1.0, a: [7.0, 3.0, 4.0] });
        let net = KanNetwork::new(vec![layer]).unwrap();
        assert_eq!(net.reg_value(), 16.5);
        assert_eq!(KanNetwork::new(vec![TaylorKanLayer::<f64>::zeros(4, 4)]).unwrap().reg_value(), 0.0);
    }

    #[test]
    fn table_two_counts() {
        let mut r = rng(7);
        let trend = build_trend_kan::<f64, _>(&mut r, 96, 96, 3).unwrap();
        let peaks = SpectralPeaks::from_bins(vec![4, 8, 12, 16, 20], 96);
        let seasonal = build_seasonal_kan::<f64, _>(&mut r, 96, 96, &peaks).unwrap();
        assert_eq!(trend.layers[0].in_dim() * trend.layers[0].out_dim(), 9216);
        assert_eq!(trend.layers[0].adjustable_count(), 8928);
        assert_eq!(trend.layers[0].injected_count(), 288);
        assert_eq!(trend.layers[1].adjustable_count(), 9216);
        assert_eq!(seasonal.layers[0].adjustable_count(), 8736);
        assert_eq!(seasonal.layers[1].adjustable_count(), 9216);
        assert_eq!(trend.layers[0].preserved_count(), 8928);
    }

    #[test]
    fn degree_one_trend() {
        let mut r = rng(8);
        let net = build_trend_kan::<f64, _>(&mut r, 6, 6, 1).unwrap();
        assert_eq!(net.layers[0].injected_count(), 6);
        assert!(build_trend_kan::<f64, _>(&mut r, 6, 6, 0).is_err());
    }

    #[test]
    fn pure_tone_peak() {
        let l = 96;
        let x = Tensor::from_fn(&[3, l], |k| {
            let t = (k % l) as f64;
            (2.0 * std::f64::consts::PI * 4.0 * t / l as f64).sin()
        });
        let p = top_k_frequencies(&x, 1).unwrap();
        assert_eq!(p.bins, vec![4]);
        assert!((p.freqs[0] - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_errors_and_ties() {
        let flat = Tensor::full(&[2, 16], 3.0f64);
        assert!(matches!(top_k_frequencies(&flat, 1), Err(Error::NoSpectralEnergy)));
        let x = Tensor::from_fn(&[16], |t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / 16.0).cos());
        assert!(top_k_frequencies(&x, 9).is_err());
        assert!(top_k_frequencies(&x, 0).is_err());
        // equal energy at bins 2 and 5
        let y = Tensor::from_fn(&[16], |t| {
            let t = t as f64;
            (2.0 * std::f64::consts::PI * 5.0 * t / 16.0).cos() + (2.0 * std::f64::consts::PI * 2.0 * t / 16.0).cos()
        });
        let p = top_k_frequencies(&y, 3).unwrap();
        assert_eq!(&p.bins[..2], &[2, 5]);
        assert_eq!(p.bins[2], 1);
    }

    #[test]
    fn zero_fourier_coefficients_leave_offset() {
        let peaks = SpectralPeaks::from_bins(vec![2], 8);
        let a = Tensor::new(&[2, 3], vec![0.4, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap().into_param();
        let b = param_zeros(&[1, 3]);
        let inj = Injection::Seasonal { bins: peaks.bins.clone(), freqs: peaks.freqs.clone(), a, b };
        let layer = TaylorKanLayer::<f64>::zeros(3, 4).with_injection(inj).unwrap();
        let mut r = rng(9);
        let x = random_tensor(&mut r, &[5, 3], 2.0);
        let y = layer_forward(&x, &layer).unwrap();
        for n in 0..5 {
            assert!((y.at(&[n, 2]) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn single_cosine_oracle() {
        let peaks = SpectralPeaks::from_bins(vec![1], 8);
        let f = peaks.freqs[0];
        let a = Tensor::new(&[2, 3], vec![0.6, 0.6, 0.6, 1.0, 1.0, 1.0]).unwrap().into_param();
        let b = param_zeros(&[1, 3]);
        let inj = Injection::Seasonal { bins: peaks.bins.clone(), freqs: peaks.freqs.clone(), a, b };
        let layer = TaylorKanLayer::<f64>::zeros(3, 2).with_injection(inj).unwrap();
        let mut r = rng(10);
        let x = random_tensor(&mut r, &[6, 3], 4.0);
        let y = layer_forward(&x, &layer).unwrap();
        for n in 0..6 {
            let want: f64 = (0..3).map(|i| (f * std::f64::consts::PI * x.at(&[n, i])).cos()).sum::<f64>() + 0.9;
            assert!((y.at(&[n, 1]) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn trend_layer_is_polynomial_per_node() {
        let mut r = rng(11);
        let p = 3;
        let inj = Injection::trend(&mut r, 4, p).unwrap();
        let layer = TaylorKanLayer::<f64>::zeros(4, 4).with_injection(inj).unwrap();
        let base = random_tensor(&mut r, &[4], 1.0);
        for node in 0..4 {
            let xs: Vec<f64> = (0..12).map(|k| -2.0 + 0.35 * k as f64).collect();
            let x = Tensor::from_fn(&[12, 4], |k| if k % 4 == node { xs[k / 4] } else { base.data()[k % 4] });
            let y = layer_forward(&x, &layer).unwrap();
            for j in 0..4 {
                let ys: Vec<f64> = (0..12).map(|n| y.at(&[n, j])).collect();
                assert!(poly_fit_residual(&xs, &ys, p) < 1e-10);
            }
        }
    }

    /// Max residual of the least-squares polynomial of `degree` through the points.
    fn poly_fit_residual(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
        let n = degree + 1;
        let mut ata = vec![0.0; n * n];
        let mut aty = vec![0.0; n];
        for (&x, &y) in xs.iter().zip(ys) {
            for r in 0..n {
                aty[r] += x.powi(r as i32) * y;
                for c in 0..n {
                    ata[r * n + c] += x.powi((r + c) as i32);
                }
            }
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&a, &b| ata[a * n + col].abs().total_cmp(&ata[b * n + col].abs())).unwrap();
            for c in 0..n {
                ata.swap(col * n + c, piv * n + c);
            }
            aty.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = ata[row * n + col] / ata[col * n + col];
                    for c in 0..n {
                        ata[row * n + c] -= f * ata[col * n + c];
                    }
                    aty[row] -= f * aty[col];
                }
            }
        }
        let coef: Vec<f64> = (0..n).map(|r| aty[r] / ata[r * n + r]).collect();
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| (coef.iter().enumerate().map(|(q, c)| c * x.powi(q as i32)).sum::<f64>() - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn network_dims_must_chain() {
        assert!(KanNetwork::new(vec![TaylorKanLayer::<f64>::zeros(3, 4), TaylorKanLayer::zeros(5, 2)]).is_err());
        let mut r = rng(12);
        let late = TaylorKanLayer::new(&mut r, 4, 4).with_injection(Injection::trend(&mut r, 4, 2).unwrap()).unwrap();
        assert!(KanNetwork::new(vec![TaylorKanLayer::<f64>::zeros(3, 4), late]).is_err());
        let x = Tensor::<f64>::zeros(&[2, 5]);
        assert!(layer_forward(&x, &TaylorKanLayer::zeros(4, 4)).is_err());
    }

    #[test]
    fn pruning_masks_edges() {
        let mut r = rng(13);
        let mut net = build_trend_kan::<f64, _>(&mut r, 8, 8, 2).unwrap();
        let before = net.layers[0].preserved_count();
        assert_eq!(net.layers[0].prune_below(0.0), 0);
        let pruned = net.layers[0].prune_below(f64::INFINITY);
        assert_eq!(pruned, before);
        assert_eq!(net.layers[0].preserved_count(), 0);
        assert_eq!(net.layers[0].adjustable_count(), 48);
    }

    proptest! {
        #[test]
        fn reg_scales_quadratically(seed in 0u64..1000, s in -3.0f64..3.0) {
            let mut r = rng(seed);
            let mut layers = injected_layers(&mut r);
            let base: Vec<f64> = layers.iter().map(|l| l.reg_value()).collect();
            for (layer, b) in layers.iter_mut().zip(base) {
                for (name, t) in layer.params_mut("l") {
                    if !name.ends_with(".w") {
                        t.data_mut().iter_mut().for_each(|v| *v *= s);
                    }
                }
                prop_assert!(b >= 0.0);
                prop_assert!((layer.reg_value() - s * s * b).abs() <= 1e-10 * (1.0 + b));
            }
        }

        #[test]
        fn reg_zero_iff_shape_coefficients_zero(seed in 0u64..1000, keep in 0usize..4) {
            let mut r = rng(seed);
            let mut layers = injected_layers(&mut r);
            for layer in layers.iter_mut() {
                layer.a1.data_mut().iter_mut().for_each(|v| *v = 0.0);
                layer.a2.data_mut().iter_mut().for_each(|v| *v = 0.0);
                match &mut layer.injection {
                    Some(Injection::Trend { m }) => {
                        let i = m.shape()[1];
                        m.data_mut()[i..].iter_mut().for_each(|v| *v = 0.0);
                    }
                    Some(Injection::Seasonal { a, b, .. }) => {
                        let i = a.shape()[1];
                        a.data_mut()[i..].iter_mut().for_each(|v| *v = 0.0);
                        b.data_mut().iter_mut().for_each(|v| *v = 0.0);
                    }
                    None => {}
                }
                prop_assert_eq!(layer.reg_value(), 0.0);
                let j = keep % 5;
                if layer.is_active(keep, j) {
                    layer.a2.data_mut()[keep * 5 + j] = 0.5;
                    prop_assert!(layer.reg_value() > 0.0);
                }
            }
        }
    }
}
