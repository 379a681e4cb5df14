//! CSV ingestion, chronological splits, z-scoring and sliding windows.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frequency {
    Yearly,
    Quarterly,
    Monthly,
    Weekly,
    Daily,
    Hourly,
}

impl Frequency {
    /// Seasonal period used by MASE and the naive2 reference.
    pub fn period(self) -> usize {
        match self {
            Frequency::Yearly | Frequency::Weekly | Frequency::Daily => 1,
            Frequency::Quarterly => 4,
            Frequency::Monthly => 12,
            Frequency::Hourly => 24,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Frequency::Yearly => "yearly",
            Frequency::Quarterly => "quarterly",
            Frequency::Monthly => "monthly",
            Frequency::Weekly => "weekly",
            Frequency::Daily => "daily",
            Frequency::Hourly => "hourly",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "yearly" => Frequency::Yearly,
            "quarterly" => Frequency::Quarterly,
            "monthly" => Frequency::Monthly,
            "weekly" => Frequency::Weekly,
            "daily" => Frequency::Daily,
            "hourly" => Frequency::Hourly,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub variates: Vec<String>,
    /// `(T, N)` raw observations.
    pub values: Tensor<f64>,
}

impl SeriesDataset {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_variates(&self) -> usize {
        self.values.shape()[1]
    }
}

fn csv_err(path: &Path, row: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        msg: msg.into(),
    }
}

/// Reads a `timestamp, v1, …, vN` file. Rows and columns in errors are
/// 1-based file positions (the header is row 1).
pub fn ingest_csv(path: &Path) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, 0, 0, e.to_string()))?;
    let header = rdr.headers().map_err(|e| csv_err(path, 1, 0, e.to_string()))?.clone();
    if header.len() < 2 {
        return Err(csv_err(path, 1, header.len(), "need a timestamp column and at least one variate"));
    }
    let width = header.len();
    let variates: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_err(path, line, 0, e.to_string()))?;
        if rec.len() != width {
            return Err(csv_err(path, line, rec.len(), format!("expected {width} fields, found {}", rec.len())));
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(path, line, c + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(csv_err(path, line, c + 1, format!("non-finite value {cell:?}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(csv_err(path, 2, 0, "no data rows"));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SeriesDataset {
        name,
        variates,
        values: Tensor::new(&[rows, width - 1], data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// 12/4/4 months of `rows_per_month` rows each.
    Ett { rows_per_month: usize },
    /// Chronological train/val fractions; the test split takes the rest.
    Ratio { train: f64, test: f64 },
}

impl SplitRule {
    pub const ETT_HOURLY: SplitRule = SplitRule::Ett { rows_per_month: 30 * 24 };
    pub const ETT_QUARTER_HOURLY: SplitRule = SplitRule::Ett { rows_per_month: 30 * 24 * 4 };
    pub const DEFAULT_RATIO: SplitRule = SplitRule::Ratio { train: 0.7, test: 0.2 };

    /// ETT rules for `ETTh*` / `ETTm*` datasets, ratio split otherwise.
    pub fn for_dataset(name: &str) -> Self {
        if name.starts_with("ETTh") {
            Self::ETT_HOURLY
        } else if name.starts_with("ETTm") {
            Self::ETT_QUARTER_HOURLY
        } else {
            Self::DEFAULT_RATIO
        }
    }

    /// `[(start, end); 3]` row ranges. The val and test ranges begin
    /// `lookback` rows early so their first window can see a full history.
    pub fn borders(&self, rows: usize, lookback: usize) -> Result<[(usize, usize); 3]> {
        let (a, b, c) = match *self {
            SplitRule::Ett { rows_per_month: m } => (12 * m, 16 * m, 20 * m),
            SplitRule::Ratio { train, test } => {
                let n_train = (rows as f64 * train) as usize;
                let n_test = (rows as f64 * test) as usize;
                (n_train, rows - n_test, rows)
            }
        };
        if c > rows || a < lookback || b < a + 1 {
            return Err(Error::Data(format!(
                "{rows} rows cannot hold the split borders {a}/{b}/{c} with lookback {lookback}"
            )));
        }
        Ok([(0, a), (a - lookback, b), (b - lookback, c)])
    }
}

/// Per-variate standardization statistics from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub variates: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Stats {
    /// Population mean and std of each column of `(T, N)`, std floored.
    pub fn fit(values: &Tensor<f64>, variates: &[String]) -> Self {
        let (t, n) = (values.shape()[0], values.shape()[1]);
        let d = values.data();
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for c in 0..n {
            let m = (0..t).map(|r| d[r * n + c]).sum::<f64>() / t as f64;
            let v = (0..t).map(|r| (d[r * n + c] - m).powi(2)).sum::<f64>() / t as f64;
            mean[c] = m;
            std[c] = v.sqrt().max(STD_FLOOR);
        }
        Self {
            variates: variates.to_vec(),
            mean,
            std,
        }
    }

    pub fn standardize(&self, values: &Tensor<f64>) -> Tensor<f64> {
        let n = self.mean.len();
        let mut out = values.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[k % n]) / self.std[k % n];
        }
        out
    }

    pub fn destandardize(&self, values: &Tensor<f64>) -> Tensor<f64> {
        let n = self.mean.len();
        let mut out = values.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.std[k % n] + self.mean[k % n];
        }
        out
    }

    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for ((name, m), sd) in self.variates.iter().zip(&self.mean).zip(&self.std) {
            s.push_str(&format!("{name}\t{m:?}\t{sd:?}\n"));
        }
        s
    }

    pub fn parse_sidecar(text: &str) -> Result<Self> {
        let mut st = Stats {
            variates: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
        };
        for (k, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("stats line {}: expected variate<TAB>mean<TAB>std", k + 1));
            if f.len() != 3 {
                return Err(bad());
            }
            st.variates.push(f[0].to_string());
            st.mean.push(f[1].parse().map_err(|_| bad())?);
            st.std.push(f[2].parse().map_err(|_| bad())?);
        }
        Ok(st)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_sidecar().as_bytes())
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        Self::parse_sidecar(&fs::read_to_string(path)?)
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = tmp.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One batch of windows: `(B, N, L)` inputs and `(B, N, F)` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch<T> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
}

/// All stride-1 windows of one standardized split.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows<T> {
    /// `(rows, N)` standardized values.
    pub series: Tensor<T>,
    pub lookback: usize,
    pub horizon: usize,
    pub stats: Stats,
}

impl<T: Scalar> Windows<T> {
    pub fn new(series: Tensor<T>, lookback: usize, horizon: usize, stats: Stats) -> Result<Self> {
        if series.rank() != 2 || series.shape()[1] != stats.mean.len() {
            return Err(Error::Data(format!(
                "series shape {:?} does not match {} variates",
                series.shape(),
                stats.mean.len()
            )));
        }
        Ok(Self {
            series,
            lookback,
            horizon,
            stats,
        })
    }

    pub fn variates(&self) -> usize {
        self.series.shape()[1]
    }

    pub fn len(&self) -> usize {
        (self.series.shape()[0] + 1).saturating_sub(self.lookback + self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, starts: &[usize]) -> WindowBatch<T> {
        let n = self.variates();
        let (l, f) = (self.lookback, self.horizon);
        let d = self.series.data();
        let b = starts.len();
        let mut inputs = Vec::with_capacity(b * n * l);
        let mut targets = Vec::with_capacity(b * n * f);
        for &s in starts {
            for c in 0..n {
                inputs.extend((s..s + l).map(|r| d[r * n + c]));
                targets.extend((s + l..s + l + f).map(|r| d[r * n + c]));
            }
        }
        WindowBatch {
            inputs: Tensor::new(&[b, n, l], inputs).expect("window shapes are consistent"),
            targets: Tensor::new(&[b, n, f], targets).expect("window shapes are consistent"),
        }
    }

    /// Mean and std for each `(b, n)` row of a batch of `b` windows.
    pub fn row_scale(&self, batch: usize) -> (Vec<T>, Vec<T>) {
        let n = self.variates();
        let mean = (0..batch * n).map(|k| T::lit(self.stats.mean[k % n])).collect();
        let std = (0..batch * n).map(|k| T::lit(self.stats.std[k % n])).collect();
        (mean, std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<T> {
    pub train: Windows<T>,
    pub val: Windows<T>,
    pub test: Windows<T>,
    pub stats: Stats,
}

/// Splits chronologically, z-scores every split with training statistics
/// and checks each split holds at least one full window.
pub fn split_standardize<T: Scalar>(
    ds: &SeriesDataset,
    rule: SplitRule,
    lookback: usize,
    horizon: usize,
) -> Result<Splits<T>> {
    let rows = ds.rows();
    let n = ds.num_variates();
    let borders = rule.borders(rows, lookback)?;
    let slice = |(a, b): (usize, usize)| -> Tensor<f64> {
        Tensor::new(&[b - a, n], ds.values.data()[a * n..b * n].to_vec()).expect("slice shape")
    };
    let stats = Stats::fit(&slice(borders[0]), &ds.variates);
    let mut out = Vec::with_capacity(3);
    for (name, range) in ["train", "val", "test"].iter().zip(borders) {
        if range.1 - range.0 < lookback + horizon {
            return Err(Error::Data(format!(
                "{name} split has {} rows, needs at least L + F = {}",
                range.1 - range.0,
                lookback + horizon
            )));
        }
        let z = stats.standardize(&slice(range)).cast::<T>();
        out.push(Windows::new(z, lookback, horizon, stats.clone())?);
    }
    let test = out.pop().expect("three splits");
    let val = out.pop().expect("three splits");
    let train = out.pop().expect("three splits");
    Ok(Splits {
        train,
        val,
        test,
        stats,
    })
}
