//! Binary checkpoints: `ITFK`, a `u32` format version, the run configuration
//! as length-prefixed `key = value` text, then named tensors stored as
//! name, rank, `u64` dims and little-endian `f64` data.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::ForecastModel;
use crate::scalar::Scalar;
use crate::taylorkan::SpectralPeaks;

pub const MAGIC: &[u8; 4] = b"ITFK";
pub const VERSION: u32 = 1;
const PEAKS: &str = "peaks.bins";

/// Parameters plus the non-trainable masks, in a fixed order.
fn named_tensors<T: Scalar>(model: &ForecastModel<T>) -> Vec<(String, Tensor<f64>)> {
    let mut out: Vec<(String, Tensor<f64>)> = model.params().into_iter().map(|(n, t)| (n, t.cast())).collect();
    for (net, kan) in model.networks() {
        for (k, layer) in kan.layers.iter().enumerate() {
            out.push((format!("{net}.{k}.mask"), layer.mask.cast()));
        }
    }
    let bins: Vec<f64> = model.peaks.bins.iter().map(|&b| b as f64).collect();
    out.push((PEAKS.into(), Tensor::new(&[bins.len()], bins).expect("bins shape")));
    out
}

pub fn encode<T: Scalar>(model: &ForecastModel<T>, run: &RunConfig) -> Vec<u8> {
    let mut run = run.clone();
    run.model = model.cfg.clone();
    let text = run.echo();
    let tensors = named_tensors(model);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible length {v}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(RunConfig, ForecastModel<T>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let run = RunConfig::parse(&r.string()?)?;
    let count = r.len()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.len()?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("{name}: implausible shape {shape:?}")))?;
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if tensors.insert(name.clone(), Tensor::new(&shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let bins = tensors
        .remove(PEAKS)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {PEAKS}")))?;
    let bins: Vec<usize> = bins.data().iter().map(|&b| b as usize).collect();
    let peaks = SpectralPeaks::from_bins(bins, run.model.lookback);
    let mut model = ForecastModel::new(&mut ChaCha8Rng::seed_from_u64(0), run.model.clone(), peaks)?;
    let mut fill = |name: &str, dst: &mut Tensor<T>| -> Result<()> {
        let src = tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape() != dst.shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {:?}, model expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = T::lit(s);
        }
        Ok(())
    };
    for (name, t) in model.params_mut() {
        fill(&name, t)?;
    }
    for (net, kan) in model.networks_mut() {
        for (k, layer) in kan.layers.iter_mut().enumerate() {
            fill(&format!("{net}.{k}.mask"), &mut layer.mask)?;
        }
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok((run, model))
}

pub fn save<T: Scalar>(path: &Path, model: &ForecastModel<T>, run: &RunConfig) -> Result<()> {
    write_atomic(path, &encode(model, run))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(RunConfig, ForecastModel<T>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> (RunConfig, ForecastModel<f64>) {
        let cfg = ModelConfig {
            lookback: 12,
            horizon: 4,
            width: 3,
            kernel: 5,
            trend_degree: 2,
            top_k: 2,
            patch_len: 4,
            stride: 4,
            lambda: 0.1,
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 1,
            patience: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = ForecastModel::new(&mut rng, cfg.clone(), SpectralPeaks::from_bins(vec![2, 5], 12)).unwrap();
        m.trend.layers[1].prune_below(0.05);
        let run = RunConfig { model: cfg, data: Some("d.csv".into()), ..RunConfig::default() };
        (run, m)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (run, m) = small();
        let bytes = encode(&m, &run);
        let (run2, m2) = decode::<f64>(&bytes).unwrap();
        assert_eq!(run2, run);
        assert_eq!(m2, m);
        for ((_, a), (_, b)) in m.params().iter().zip(m2.params()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode(&m2, &run2), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &m, &run).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(load::<f64>(&p).unwrap().1, m);
    }

    #[test]
    fn corrupt_inputs() {
        let (run, m) = small();
        let bytes = encode(&m, &run);
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode::<f64>(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode::<f64>(&long).is_err());
        assert!(decode::<f64>(b"").is_err());
    }
}
