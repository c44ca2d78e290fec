use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{generate_sbm, load_dataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::PatchConfig;
use crate::optim::AdamConfig;

/// Where a run gets its graph from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Sbm(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Dir(dir) => load_dataset(dir),
            DataSource::Sbm(spec) => generate_sbm(spec),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Dir(dir) => write!(f, "{}", dir.display()),
            DataSource::Sbm(spec) => write!(f, "sbm:{spec}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of graph convolution layers, output layer included.
    pub depth: usize,
    pub width: usize,
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_epochs: usize,
    pub runs: usize,
    /// Run `k` uses seed `seed + k`.
    pub seed: u64,
    pub patch: PatchConfig,
    pub normalize_features: bool,
    /// Keep per-column energies in the traces.
    pub keep_columns: bool,
    pub data: Option<DataSource>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            depth: 10,
            width: 16,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 5e-4,
                decay_biases: true,
                ..AdamConfig::default()
            },
            patience: 200,
            max_epochs: 10_000,
            runs: 20,
            seed: 0,
            patch: PatchConfig::default(),
            normalize_features: true,
            keep_columns: false,
            data: None,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key} expects a boolean, got {value:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<f64>> {
    if value.eq_ignore_ascii_case("none") || value.is_empty() {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn show_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "data",
        "sbm",
        "depth",
        "width",
        "lr",
        "weight-decay",
        "dropout",
        "patience",
        "max-epochs",
        "runs",
        "seed",
        "resolution",
        "skip",
        "weight-norm",
        "weight-norm-init-only",
        "energy-norm",
        "init",
        "init-const",
        "normalize-features",
        "keep-columns",
        "adam-eps",
        "decay-biases",
    ];

    /// Widths `F_0 … F_{n+1}` for the given input and output sizes.
    pub fn widths(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut w = vec![features];
        w.extend(std::iter::repeat_n(self.width, self.depth.saturating_sub(1)));
        w.push(classes);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max-epochs must be at least 1");
        }
        self.adam.validate()?;
        self.patch.validate()
    }

    /// Sets one option by its command-line name. Underscores are accepted in
    /// place of dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "data" => self.data = Some(DataSource::Dir(PathBuf::from(value))),
            "sbm" => self.data = Some(DataSource::Sbm(value.parse()?)),
            "depth" => self.depth = parse_num(k, value)?,
            "width" => self.width = parse_num(k, value)?,
            "lr" => self.adam.lr = parse_num(k, value)?,
            "weight-decay" => self.adam.weight_decay = parse_num(k, value)?,
            "adam-eps" => self.adam.eps = parse_num(k, value)?,
            "decay-biases" => self.adam.decay_biases = parse_bool(k, value)?,
            "dropout" => self.patch.dropout = parse_num(k, value)?,
            "patience" => self.patience = parse_num(k, value)?,
            "max-epochs" => self.max_epochs = parse_num(k, value)?,
            "runs" => self.runs = parse_num(k, value)?,
            "seed" => self.seed = parse_num(k, value)?,
            "resolution" => self.patch.resolution = parse_opt(k, value)?,
            "skip" => self.patch.skip = parse_bool(k, value)?,
            "weight-norm" => self.patch.weight_norm = parse_opt(k, value)?,
            "weight-norm-init-only" => self.patch.weight_norm_init_only = parse_bool(k, value)?,
            "energy-norm" => self.patch.energy_norm = parse_opt(k, value)?,
            "init" => self.patch.init_scheme = value.parse()?,
            "init-const" => self.patch.init_const = parse_num(k, value)?,
            "normalize-features" => self.normalize_features = parse_bool(k, value)?,
            "keep-columns" => self.keep_columns = parse_bool(k, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    /// Every option as `(key, value)` pairs that [`TrainConfig::set`] accepts.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::with_capacity(Self::KEYS.len());
        match &self.data {
            Some(DataSource::Dir(d)) => out.push(("data", d.display().to_string())),
            Some(DataSource::Sbm(s)) => out.push(("sbm", s.to_string())),
            None => {}
        }
        let p = &self.patch;
        out.extend([
            ("depth", self.depth.to_string()),
            ("width", self.width.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("weight-decay", self.adam.weight_decay.to_string()),
            ("adam-eps", self.adam.eps.to_string()),
            ("decay-biases", self.adam.decay_biases.to_string()),
            ("dropout", p.dropout.to_string()),
            ("patience", self.patience.to_string()),
            ("max-epochs", self.max_epochs.to_string()),
            ("runs", self.runs.to_string()),
            ("seed", self.seed.to_string()),
            ("resolution", show_opt(p.resolution)),
            ("skip", p.skip.to_string()),
            ("weight-norm", show_opt(p.weight_norm)),
            ("weight-norm-init-only", p.weight_norm_init_only.to_string()),
            ("energy-norm", show_opt(p.energy_norm)),
            ("init", p.init_scheme.to_string()),
            ("init-const", p.init_const.to_string()),
            ("normalize-features", self.normalize_features.to_string()),
            ("keep-columns", self.keep_columns.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Applies `key = value` lines over `self`. Blank lines and `#` comments
    /// are skipped; later lines win.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, k + 1, "expected `key = value`"))?;
            self.set(key, value)
                .map_err(|e| Error::parse(origin, k + 1, e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn load_data(&self) -> Result<Dataset> {
        let source = self
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no dataset given (use data or sbm)".into()))?;
        let dataset = source.load()?;
        Ok(if self.normalize_features {
            dataset.row_normalized()
        } else {
            dataset
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;

    #[test]
    fn defaults_follow_the_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.depth, c.width, c.patience, c.runs), (10, 16, 200, 20));
        assert_eq!(c.max_epochs, 10_000);
        assert_eq!(c.adam.lr, 1e-3);
        assert_eq!(c.adam.weight_decay, 5e-4);
        assert!(c.adam.decay_biases);
        assert_eq!(c.patch.dropout, 0.0);
        assert_eq!(c.widths(1433, 7), [vec![1433], vec![16; 9], vec![7]].concat());
        c.validate().unwrap();
    }

    #[test]
    fn pairs_round_trip_through_set() {
        let mut c = TrainConfig {
            depth: 4,
            keep_columns: true,
            data: Some(DataSource::Sbm("blocks=3,nodes=10,dim=5".parse().unwrap())),
            ..TrainConfig::default()
        };
        c.patch.resolution = Some(0.1 + 0.2);
        c.patch.energy_norm = Some(800.0);
        c.patch.init_scheme = InitScheme::Normal;
        c.patch.init_const = 1.8;
        c.adam.lr = 3.3e-5;
        c.adam.decay_biases = false;
        let mut back = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn text_overrides_and_errors() {
        let mut c = TrainConfig::default();
        c.apply_text("# comment\nwidth = 32\n\nweight_norm = 7 # trailing\nskip = yes\n", Path::new("cfg"))
            .unwrap();
        assert_eq!(c.width, 32);
        assert_eq!(c.patch.weight_norm, Some(7.0));
        assert!(c.patch.skip);
        let err = c.apply_text("width = 8\ncolour = red\n", Path::new("cfg")).unwrap_err();
        assert!(err.to_string().starts_with("cfg:2:"), "{err}");
        assert!(c.set("depth", "ten").is_err());
        assert!(c.set("skip", "maybe").is_err());
    }

    #[test]
    fn invalid_counts_are_rejected() {
        for (k, v) in [("patience", "0"), ("runs", "0"), ("depth", "0"), ("max-epochs", "0")] {
            let mut c = TrainConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}");
        }
    }
}
