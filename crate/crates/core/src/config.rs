//! Line-oriented `key = value` run configuration with `#` comments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Frequency, SplitRule};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitChoice {
    /// ETT borders for `ETTh*` / `ETTm*` file names, ratio split otherwise.
    Auto,
    EttHourly,
    EttQuarterHourly,
    Ratio,
}

impl SplitChoice {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "auto" => SplitChoice::Auto,
            "ett-hourly" => SplitChoice::EttHourly,
            "ett-15min" => SplitChoice::EttQuarterHourly,
            "ratio" => SplitChoice::Ratio,
            _ => return Err(Error::Config(format!("split: unknown value {s:?}"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            SplitChoice::Auto => "auto",
            SplitChoice::EttHourly => "ett-hourly",
            SplitChoice::EttQuarterHourly => "ett-15min",
            SplitChoice::Ratio => "ratio",
        }
    }

    pub fn rule(self, dataset: &str) -> SplitRule {
        match self {
            SplitChoice::Auto => SplitRule::for_dataset(dataset),
            SplitChoice::EttHourly => SplitRule::ETT_HOURLY,
            SplitChoice::EttQuarterHourly => SplitRule::ETT_QUARTER_HOURLY,
            SplitChoice::Ratio => SplitRule::DEFAULT_RATIO,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub task: Task,
    pub frequency: Option<Frequency>,
    pub split: SplitChoice,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::etth1(),
            data: None,
            task: Task::Long,
            frequency: None,
            split: SplitChoice::Auto,
            seed: 0,
            out: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

pub const PRESETS: &[&str] = &["etth1"];

const KEYS: &[&str] = &[
    "preset",
    "data",
    "task",
    "frequency",
    "split",
    "seed",
    "out",
    "checkpoint",
    "lookback",
    "horizon",
    "width",
    "kernel",
    "trend_degree",
    "top_k",
    "patch_len",
    "stride",
    "lambda",
    "learning_rate",
    "batch_size",
    "epochs",
    "patience",
];

fn number<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "etth1" => Ok(Self::default()),
            _ => Err(Error::Config(format!("preset: unknown preset {name:?}"))),
        }
    }

    /// Parses `key = value` lines. A `preset` line, wherever it appears,
    /// supplies the defaults every other line overrides.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", n + 1)));
            }
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            pairs.push((k.to_string(), v.to_string()));
        }
        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) => Self::preset(v)?,
            None => Self::default(),
        };
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "preset" => {}
            "data" => self.data = Some(PathBuf::from(v)),
            "task" => self.task = Task::parse(v)?,
            "frequency" => {
                self.frequency = match v {
                    "none" => None,
                    _ => Some(
                        Frequency::parse(v)
                            .ok_or_else(|| Error::Config(format!("frequency: unknown value {v:?}")))?,
                    ),
                }
            }
            "split" => self.split = SplitChoice::parse(v)?,
            "seed" => self.seed = number(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "lookback" => m.lookback = number(key, v)?,
            "horizon" => m.horizon = number(key, v)?,
            "width" => m.width = number(key, v)?,
            "kernel" => m.kernel = number(key, v)?,
            "trend_degree" => m.trend_degree = number(key, v)?,
            "top_k" => m.top_k = number(key, v)?,
            "patch_len" => m.patch_len = number(key, v)?,
            "stride" => m.stride = number(key, v)?,
            "lambda" => m.lambda = number(key, v)?,
            "learning_rate" => m.learning_rate = number(key, v)?,
            "batch_size" => m.batch_size = number(key, v)?,
            "epochs" => m.epochs = number(key, v)?,
            "patience" => m.patience = number(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("missing required key \"data\" (dataset path)".into()))
    }

    /// Seasonal period for MASE; 1 when no frequency is configured.
    pub fn season(&self) -> usize {
        self.frequency.map_or(1, Frequency::period)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    /// Every resolved key, one per line; parses back to an equal config.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        if let Some(d) = &self.data {
            put("data", d.display().to_string());
        }
        put("task", self.task.name().into());
        put("frequency", self.frequency.map_or("none", Frequency::name).into());
        put("split", self.split.name().into());
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        if let Some(c) = &self.checkpoint {
            put("checkpoint", c.display().to_string());
        }
        put("lookback", m.lookback.to_string());
        put("horizon", m.horizon.to_string());
        put("width", m.width.to_string());
        put("kernel", m.kernel.to_string());
        put("trend_degree", m.trend_degree.to_string());
        put("top_k", m.top_k.to_string());
        put("patch_len", m.patch_len.to_string());
        put("stride", m.stride.to_string());
        put("lambda", format!("{:?}", m.lambda));
        put("learning_rate", format!("{:?}", m.learning_rate));
        put("batch_size", m.batch_size.to_string());
        put("epochs", m.epochs.to_string());
        put("patience", m.patience.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn preset_values() {
        let c = RunConfig::parse("preset = etth1\ndata = ETTh1.csv\n").unwrap();
        let echo = c.echo();
        for line in ["width = 32", "batch_size = 64", "learning_rate = 0.0005", "stride = 6", "patch_len = 6"] {
            assert!(echo.lines().any(|l| l == line), "{line} missing from\n{echo}");
        }
        assert_eq!(c.data.as_deref(), Some(Path::new("ETTh1.csv")));
    }

    #[test]
    fn comments_overrides_and_errors() {
        let c = RunConfig::parse("# header\nwidth = 8 # narrow\n\npreset = etth1\ntask = short\n").unwrap();
        assert_eq!(c.model.width, 8);
        assert_eq!(c.task, Task::Short);
        let e = RunConfig::parse("widht = 8").unwrap_err().to_string();
        assert!(e.contains("widht"), "{e}");
        assert!(RunConfig::parse("width = 8\nwidth = 9").is_err());
        assert!(RunConfig::parse("width 8").is_err());
        assert!(RunConfig::parse("width = -1").is_err());
        assert!(RunConfig::parse("kernel = 4").is_err());
        assert!(RunConfig::parse("preset = weather").is_err());
        let missing = RunConfig::parse("").unwrap().require_data().unwrap_err().to_string();
        assert!(missing.contains("data"), "{missing}");
    }

    proptest! {
        #[test]
        fn echo_round_trips(width in 1usize..64, lambda in 0.0f64..1.0, lr in 1e-6f64..1.0,
                            seed in any::<u64>(), short in any::<bool>(), ckpt in any::<bool>()) {
            let mut c = RunConfig::default();
            c.model.width = width;
            c.model.lambda = lambda;
            c.model.learning_rate = lr;
            c.seed = seed;
            c.data = Some(PathBuf::from("some dir/data.csv"));
            c.task = if short { Task::Short } else { Task::Long };
            c.frequency = if short { Some(Frequency::Monthly) } else { None };
            c.checkpoint = ckpt.then(|| PathBuf::from("x.ckpt"));
            prop_assert_eq!(RunConfig::parse(&c.echo()).unwrap(), c);
        }
    }
}
