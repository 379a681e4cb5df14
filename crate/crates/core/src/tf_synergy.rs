//! Time-frequency branch: patch the seasonal component, take a DFT across
//! patches, expand each bin back over the patch axis, and run one small
//! KAN per patch over the frequency axis.
//!
//! Patch positions are numbered `p = 1..𝒫` in every transform.

use rand::Rng;

use crate::autodiff::{atan2_phase, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, Linear};
use crate::scalar::Scalar;
use crate::taylorkan::{KanNetwork, TaylorKanLayer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchConfig {
    pub fn new(patch_len: usize, stride: usize) -> Self {
        Self { patch_len, stride }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let (p, s) = (self.patch_len, self.stride);
        if s == 0 || s > p || p > len {
            return Err(Error::invalid(
                "patch",
                format!("need 1 <= S <= P <= L, got S = {s}, P = {p}, L = {len}"),
            ));
        }
        Ok(())
    }

    /// `⌊(L − P)/S⌋ + 2`
    pub fn num_patches(&self, len: usize) -> usize {
        (len - self.patch_len) / self.stride + 2
    }
}

/// Number of one-sided frequency bins for `patches` samples.
pub fn num_freqs(patches: usize) -> usize {
    patches / 2 + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchedSeries<T> {
    /// `(N, 𝒫, d)`
    pub values: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult<T> {
    /// `(N, 𝒦, d)`
    pub amplitude: Tensor<T>,
    /// `(N, 𝒦, d)`, in (-π, π]
    pub phase: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeFreqGrid<T> {
    /// `(N, 𝒦, 𝒫, d)`
    pub values: Tensor<T>,
}

/// `(cos, sin)` of `2π·r/n`, exact on quarter turns.
fn unit_angle<T: Scalar>(r: usize, n: usize) -> (T, T) {
    let r = r % n;
    if (4 * r).is_multiple_of(n) {
        return match 4 * r / n {
            0 => (T::one(), T::zero()),
            1 => (T::zero(), T::one()),
            2 => (-T::one(), T::zero()),
            _ => (T::zero(), -T::one()),
        };
    }
    let ang = T::lit(2.0) * T::PI() * T::from_count(r) / T::from_count(n);
    (ang.cos(), ang.sin())
}

/// Angle `2π·kp/𝒫` reduced into [0, 2π).
fn bin_angle<T: Scalar>(k: usize, p: usize, n: usize) -> T {
    T::lit(2.0) * T::PI() * T::from_count((k * p) % n) / T::from_count(n)
}

/// Inverse-DFT weight of one-sided bin `k`, divided by `𝒫`.
pub fn reconstruction_weight<T: Scalar>(k: usize, patches: usize) -> T {
    let w = if k == 0 || 2 * k == patches { 1.0 } else { 2.0 };
    T::lit(w) / T::from_count(patches)
}

/// `(N, L, d) → (N, 𝒫, P·d)` windows after replicating the last step `S` times.
pub fn patch_windows<T: Scalar>(g: &mut Graph<T>, x: Var, cfg: PatchConfig) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::invalid("patch", format!("expected (N, L, d), got {shape:?}")));
    }
    let (n, len, d) = (shape[0], shape[1], shape[2]);
    cfg.validate(len)?;
    let last = g.slice(x, 1, len - 1, 1)?;
    let mut parts = vec![x];
    parts.extend(std::iter::repeat_n(last, cfg.stride));
    let padded = g.concat(&parts, 1)?;
    let count = cfg.num_patches(len);
    let mut wins = Vec::with_capacity(count);
    for p in 0..count {
        let w = g.slice(padded, 1, p * cfg.stride, cfg.patch_len)?;
        wins.push(g.reshape(w, &[n, 1, cfg.patch_len * d])?);
    }
    g.concat(&wins, 1)
}

/// Patch and compress each window with the shared `P·d → d` map.
pub fn patch<T: Scalar>(seasonal: &Tensor<T>, cfg: PatchConfig, compress: &Linear<T>) -> Result<PatchedSeries<T>> {
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.constant(seasonal.clone());
    let w = patch_windows(&mut g, x, cfg)?;
    let y = compress.forward(&mut g, &mut b, "patch", w)?;
    Ok(PatchedSeries { values: g.tensor(y) })
}

/// Differentiable spectrum of `(N, 𝒫, d)` patches, returned as
/// `(amplitude, phase)` each shaped `(N, d, 𝒦)`.
pub fn spectrum_var<T: Scalar>(g: &mut Graph<T>, patches: Var) -> Result<(Var, Var)> {
    let shape = g.shape(patches).to_vec();
    if shape.len() != 3 || shape[1] < 2 {
        return Err(Error::invalid("dft_patches", format!("expected (N, 𝒫 >= 2, d), got {shape:?}")));
    }
    let np = shape[1];
    let nk = num_freqs(np);
    let mut cos = Tensor::zeros(&[np, nk]);
    let mut sin = Tensor::zeros(&[np, nk]);
    for p in 1..=np {
        for k in 0..nk {
            let (c, s) = unit_angle::<T>(k * p, np);
            cos.data_mut()[(p - 1) * nk + k] = c;
            sin.data_mut()[(p - 1) * nk + k] = -s;
        }
    }
    let xt = g.permute(patches, &[0, 2, 1])?;
    let cos = g.constant(cos);
    let sin = g.constant(sin);
    let re = g.matmul(xt, cos)?;
    let im = g.matmul(xt, sin)?;
    let re2 = g.square(re);
    let im2 = g.square(im);
    let pow = g.add(re2, im2)?;
    let amp = g.sqrt(pow);
    let phase = g.atan2(im, re)?;
    Ok((amp, phase))
}

pub fn dft_patches<T: Scalar>(patches: &PatchedSeries<T>) -> Result<SpectrumResult<T>> {
    let mut g = Graph::new();
    let x = g.constant(patches.values.clone());
    let (amp, phase) = spectrum_var(&mut g, x)?;
    let amp = g.permute(amp, &[0, 2, 1])?;
    let phase = g.permute(phase, &[0, 2, 1])?;
    Ok(SpectrumResult {
        amplitude: g.tensor(amp),
        phase: g.tensor(phase),
    })
}

/// Column `p` (1-based) of the TF grid: `A·cos(φ + 2πkp/𝒫)` shaped like `amp`.
pub fn tf_column_var<T: Scalar>(g: &mut Graph<T>, amp: Var, phase: Var, p: usize, patches: usize) -> Result<Var> {
    let nk = *g.shape(amp).last().unwrap_or(&0);
    let theta = Tensor::from_fn(&[nk], |k| bin_angle(k, p, patches));
    let theta = g.constant(theta);
    let u = g.add(phase, theta)?;
    let c = g.cos(u);
    g.mul(amp, c)
}

pub fn tf_expand<T: Scalar>(spec: &SpectrumResult<T>, patches: usize) -> Result<TimeFreqGrid<T>> {
    let shape = spec.amplitude.shape().to_vec();
    if shape.len() != 3 || spec.phase.shape() != shape.as_slice() {
        return Err(Error::shape("tf_expand", &shape, spec.phase.shape()));
    }
    let (n, nk, d) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(&[n, nk, patches, d]);
    let (a, ph) = (spec.amplitude.data(), spec.phase.data());
    let o = out.data_mut();
    for ni in 0..n {
        for k in 0..nk {
            for p in 1..=patches {
                let th: T = bin_angle(k, p, patches);
                for c in 0..d {
                    let src = (ni * nk + k) * d + c;
                    o[((ni * nk + k) * patches + p - 1) * d + c] = a[src] * (ph[src] + th).cos();
                }
            }
        }
    }
    Ok(TimeFreqGrid { values: out })
}

/// Weighted sum over bins of the grid, giving back the patch sequence
/// `(N, 𝒫, d)`.
pub fn inverse_from_grid<T: Scalar>(grid: &TimeFreqGrid<T>) -> Tensor<T> {
    let s = grid.values.shape();
    let (n, nk, np, d) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[n, np, d]);
    let v = grid.values.data();
    let o = out.data_mut();
    for ni in 0..n {
        for k in 0..nk {
            let w: T = reconstruction_weight(k, np);
            for p in 0..np {
                for c in 0..d {
                    o[(ni * np + p) * d + c] += w * v[((ni * nk + k) * np + p) * d + c];
                }
            }
        }
    }
    out
}

/// Per-patch KANs over grid columns shaped `(N, d, 𝒦)`; each output is
/// averaged over its `𝒦` nodes. Returns `(N, d, 𝒫)`.
pub fn tfkan_var<T: Scalar>(
    g: &mut Graph<T>,
    bnd: &mut Bindings,
    prefix: &str,
    columns: &[Var],
    kans: &[KanNetwork<T>],
    mut probe: Option<&mut Vec<Var>>,
) -> Result<Var> {
    if columns.len() != kans.len() || columns.is_empty() {
        return Err(Error::invalid(
            "tfkan_forward",
            format!("{} patches but {} networks", columns.len(), kans.len()),
        ));
    }
    let mut outs = Vec::with_capacity(columns.len());
    for (p, (&col, kan)) in columns.iter().zip(kans).enumerate() {
        let shape = g.shape(col).to_vec();
        let y = kan.forward_probe(g, bnd, &format!("{prefix}.{p}"), col, probe.as_deref_mut())?;
        let m = g.mean_axis(y, shape.len() - 1)?;
        let mut one = shape;
        *one.last_mut().unwrap() = 1;
        outs.push(g.reshape(m, &one)?);
    }
    let rank = g.shape(outs[0]).len();
    g.concat(&outs, rank - 1)
}

/// Runs the per-patch KANs on a materialized grid; returns `(N, 𝒫, d)`.
pub fn tfkan_forward<T: Scalar>(tf: &TimeFreqGrid<T>, kans: &[KanNetwork<T>]) -> Result<Tensor<T>> {
    let s = tf.values.shape().to_vec();
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.constant(tf.values.clone());
    // (N, 𝒦, 𝒫, d) → (N, 𝒫, d, 𝒦)
    let xt = g.permute(x, &[0, 2, 3, 1])?;
    let mut cols = Vec::with_capacity(s[2]);
    for p in 0..s[2] {
        let c = g.slice(xt, 1, p, 1)?;
        cols.push(g.reshape(c, &[s[0], s[3], s[1]])?);
    }
    let h = tfkan_var(&mut g, &mut b, "tfkan", &cols, kans, None)?;
    let h = g.permute(h, &[0, 2, 1])?;
    Ok(g.tensor(h))
}

/// `(N, 𝒫, d) → (N, L, d)` with a shared `𝒫 → L` affine map.
pub fn unpatch<T: Scalar>(h: &Tensor<T>, map: &Linear<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let x = g.constant(h.clone());
    let y = unpatch_var(&mut g, &mut b, "unpatch", x, map)?;
    Ok(g.tensor(y))
}

fn unpatch_var<T: Scalar>(g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str, h: Var, map: &Linear<T>) -> Result<Var> {
    let xt = g.permute(h, &[0, 2, 1])?;
    let y = map.forward(g, bnd, prefix, xt)?;
    g.permute(y, &[0, 2, 1])
}

/// Trainable parts of the time-frequency branch.
#[derive(Clone, Debug, PartialEq)]
pub struct TfSynergy<T> {
    pub cfg: PatchConfig,
    /// `P·d → d`
    pub compress: Linear<T>,
    /// One `𝒦 → 𝒦` network per patch.
    pub kans: Vec<KanNetwork<T>>,
    /// `𝒫 → L`
    pub unpatch: Linear<T>,
}

impl<T: Scalar> TfSynergy<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, len: usize, width: usize, cfg: PatchConfig) -> Result<Self> {
        cfg.validate(len)?;
        let np = cfg.num_patches(len);
        let nk = num_freqs(np);
        let compress = Linear::new(rng, cfg.patch_len * width, width);
        let kans = (0..np)
            .map(|_| KanNetwork::new(vec![TaylorKanLayer::new(rng, nk, nk)]))
            .collect::<Result<Vec<_>>>()?;
        let unpatch = Linear::new(rng, np, len);
        Ok(Self {
            cfg,
            compress,
            kans,
            unpatch,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.kans.len()
    }

    pub fn edge_count(&self) -> usize {
        self.kans.iter().map(|k| k.edge_count()).sum()
    }

    /// `(N, L, d)` seasonal component → `(N, L, d)`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bnd: &mut Bindings,
        prefix: &str,
        seasonal: Var,
        probe: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let wins = patch_windows(g, seasonal, self.cfg)?;
        let patched = self.compress.forward(g, bnd, &format!("{prefix}.compress"), wins)?;
        let np = g.shape(patched)[1];
        if np != self.kans.len() {
            return Err(Error::invalid(
                "tf_synergy",
                format!("{np} patches but {} networks", self.kans.len()),
            ));
        }
        let (amp, phase) = spectrum_var(g, patched)?;
        let cols = (1..=np)
            .map(|p| tf_column_var(g, amp, phase, p, np))
            .collect::<Result<Vec<_>>>()?;
        let h = tfkan_var(g, bnd, &format!("{prefix}.kan"), &cols, &self.kans, probe)?;
        let h = g.permute(h, &[0, 2, 1])?;
        unpatch_var(g, bnd, &format!("{prefix}.unpatch"), h, &self.unpatch)
    }

    pub fn reg(&self, g: &mut Graph<T>, bnd: &mut Bindings, prefix: &str) -> Result<Var> {
        let mut total = self.kans[0].reg(g, bnd, &format!("{prefix}.kan.0"))?;
        for (p, kan) in self.kans.iter().enumerate().skip(1) {
            let r = kan.reg(g, bnd, &format!("{prefix}.kan.{p}"))?;
            total = g.add(total, r)?;
        }
        Ok(total)
    }

    pub fn reg_value(&self) -> T {
        self.kans.iter().map(|k| k.reg_value()).sum()
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.compress.params(&format!("{prefix}.compress"));
        for (p, kan) in self.kans.iter().enumerate() {
            v.extend(kan.params(&format!("{prefix}.kan.{p}")));
        }
        v.extend(self.unpatch.params(&format!("{prefix}.unpatch")));
        v
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let mut v = self.compress.params_mut(&format!("{prefix}.compress"));
        for (p, kan) in self.kans.iter_mut().enumerate() {
            v.extend(kan.params_mut(&format!("{prefix}.kan.{p}")));
        }
        v.extend(self.unpatch.params_mut(&format!("{prefix}.unpatch")));
        v
    }
}

/// Naive complex DFT `F_k = Σ_{p=1}^{n} x_p e^{-j2πkp/n}` for `k < 𝒦`.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..num_freqs(n))
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &v) in x.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * (k * (i + 1)) as f64 / n as f64;
                re += v * ang.cos();
                im -= v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Phase convention shared with the graph: `atan2` in (-π, π], 0 at the origin.
pub fn phase_of<T: Scalar>(re: T, im: T) -> T {
    atan2_phase(im, re)
}
