//! Run configuration: flat `key = value` files merged with command-line overrides.

use std::path::PathBuf;
use std::str::FromStr;

use gradmatch_core::{Algo, ModelFamily, TrainerConfig};

use crate::CliError;

/// Every setting as an unparsed-but-typed option; `None` means "use the default".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<String>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub n: Option<usize>,
    pub n_domains: Option<usize>,
    pub per_domain: Option<usize>,
    pub noise_dim: Option<usize>,
    pub test_size: Option<usize>,
    pub color_gain: Option<f64>,
    pub model: Option<String>,
    pub hidden: Option<usize>,
    pub algo: Option<Algo>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub meta_steps: Option<usize>,
    pub outer_iters: Option<usize>,
    pub batch_size: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub normalize_gip: Option<bool>,
    pub early_stop: Option<bool>,
    pub hvp_step: Option<f64>,
    pub track_gip: Option<bool>,
    pub theorem_probe: Option<Vec<f64>>,
    pub n_mc: Option<usize>,
    pub out: Option<PathBuf>,
    pub dump_params: Option<bool>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| CliError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

/// Accepts `0,1,2` and inclusive ranges such as `0..4`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = parse("seeds", a)?;
            let b: u64 = parse("seeds", b)?;
            if b < a {
                return Err(CliError::Config(format!("seeds: empty range `{part}`")));
            }
            out.extend(a..=b);
        } else {
            out.push(parse("seeds", part)?);
        }
    }
    Ok(out)
}

/// Step sizes for the expansion probe, largest first.
pub const PROBE_ALPHAS: [f64; 5] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];

/// `a1,a2,...`; `true` or `default` selects [`PROBE_ALPHAS`], `false` disables the probe.
pub fn parse_alphas(value: &str) -> Result<Option<Vec<f64>>, CliError> {
    match value {
        "true" | "default" => return Ok(Some(PROBE_ALPHAS.to_vec())),
        "false" | "off" => return Ok(None),
        _ => {}
    }
    let grid =
        value.split(',').map(str::trim).map(|a| parse::<f64>("theorem_probe", a)).collect::<Result<Vec<_>, _>>()?;
    if grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) || grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config(format!("theorem_probe: `{value}` must be positive and strictly decreasing")));
    }
    Ok(Some(grid))
}

impl Overrides {
    /// Single entry point for every key, from files and from flags alike.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "dataset" => self.dataset = Some(v.to_string()),
            "train_data" => self.train_data = Some(PathBuf::from(v)),
            "test_data" => self.test_data = Some(PathBuf::from(v)),
            "n" => self.n = Some(parse(k, v)?),
            "n_domains" => self.n_domains = Some(parse(k, v)?),
            "per_domain" => self.per_domain = Some(parse(k, v)?),
            "noise_dim" => self.noise_dim = Some(parse(k, v)?),
            "test_size" => self.test_size = Some(parse(k, v)?),
            "color_gain" => self.color_gain = Some(parse(k, v)?),
            "model" => self.model = Some(v.to_string()),
            "hidden" => self.hidden = Some(parse(k, v)?),
            "algo" => self.algo = Some(parse(k, v)?),
            "alpha" => self.alpha = Some(parse(k, v)?),
            "epsilon" => self.epsilon = Some(parse(k, v)?),
            "gamma" => self.gamma = Some(parse(k, v)?),
            "meta_steps" | "inner_steps" => self.meta_steps = Some(parse(k, v)?),
            "outer_iters" => self.outer_iters = Some(parse(k, v)?),
            "batch_size" => self.batch_size = Some(parse(k, v)?),
            "seeds" | "seed" => self.seeds = Some(parse_seeds(v)?),
            "normalize_gip" => self.normalize_gip = Some(parse_bool(k, v)?),
            "early_stop" => self.early_stop = Some(parse_bool(k, v)?),
            "hvp_step" => self.hvp_step = Some(parse(k, v)?),
            "track_gip" => self.track_gip = Some(parse_bool(k, v)?),
            "theorem_probe" => self.theorem_probe = parse_alphas(v)?,
            "n_mc" => self.n_mc = Some(parse(k, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "dump_params" => self.dump_params = Some(parse_bool(k, v)?),
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Flat `key = value` lines; `#` starts a comment.
    pub fn parse_file(text: &str) -> Result<Self, CliError> {
        let mut o = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            o.set(k, v).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(o)
    }

    /// Fields set in `over` win.
    pub fn merge(self, over: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            dataset,
            train_data,
            test_data,
            n,
            n_domains,
            per_domain,
            noise_dim,
            test_size,
            color_gain,
            model,
            hidden,
            algo,
            alpha,
            epsilon,
            gamma,
            meta_steps,
            outer_iters,
            batch_size,
            seeds,
            normalize_gip,
            early_stop,
            hvp_step,
            track_gip,
            theorem_probe,
            n_mc,
            out,
            dump_params
        )
    }

    pub fn resolve(&self) -> Result<ExperimentSpec, CliError> {
        let dataset = match self.dataset.as_deref().unwrap_or("linear") {
            "linear" => DatasetSpec::Linear { n: self.n.unwrap_or(100) },
            "vecsprites" => DatasetSpec::VecSprites {
                n_domains: self.n_domains.unwrap_or(10),
                per_domain: self.per_domain.unwrap_or(32),
                noise_dim: self.noise_dim.unwrap_or(4),
                test_size: self.test_size,
                color_gain: self.color_gain.unwrap_or(1.0),
            },
            "file" => DatasetSpec::File {
                train: self
                    .train_data
                    .clone()
                    .ok_or_else(|| CliError::Config("dataset=file needs train_data".into()))?,
                test: self.test_data.clone(),
            },
            other => return Err(CliError::Config(format!("unknown dataset `{other}` (linear|vecsprites|file)"))),
        };
        let model = match self.model.as_deref().unwrap_or("linear") {
            "linear" => ModelFamily::LinearSigmoidBce,
            "mlp1" => ModelFamily::Mlp1 { hidden: self.hidden.unwrap_or(16) },
            other => return Err(CliError::Config(format!("unknown model `{other}` (linear|mlp1)"))),
        };

        let mut t = TrainerConfig::new(self.algo.unwrap_or(Algo::Fish));
        if let DatasetSpec::VecSprites { .. } = dataset {
            t.epsilon = 0.1;
            t.outer_iters = 500;
            t.batch_size = 8;
        }
        if let Some(v) = self.alpha {
            t.alpha = v;
        }
        if let Some(v) = self.epsilon {
            t.epsilon = v;
        }
        if let Some(v) = self.gamma {
            t.gamma = v;
        }
        if let Some(v) = self.outer_iters {
            t.outer_iters = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.normalize_gip {
            t.normalize_gip = v;
        }
        if let Some(v) = self.early_stop {
            t.early_stop = v;
        }
        t.inner_steps = self.meta_steps;
        t.hvp_step = self.hvp_step;
        t.record_gip = self.track_gip.unwrap_or(false);

        let seeds = self.seeds.clone().unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(CliError::Config("seeds: at least one seed is required".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("seeds: duplicates are not allowed".into()));
        }
        let n_mc = self.n_mc.unwrap_or(1);
        if n_mc == 0 {
            return Err(CliError::Config("n_mc must be at least 1".into()));
        }
        Ok(ExperimentSpec {
            dataset,
            model,
            trainer: t,
            seeds,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            track_gip: self.track_gip.unwrap_or(false),
            theorem_probe: self.theorem_probe.clone(),
            n_mc,
            dump_params: self.dump_params.unwrap_or(false),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Linear { n: usize },
    VecSprites { n_domains: usize, per_domain: usize, noise_dim: usize, test_size: Option<usize>, color_gain: f64 },
    File { train: PathBuf, test: Option<PathBuf> },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Linear { .. } => "linear",
            DatasetSpec::VecSprites { .. } => "vecsprites",
            DatasetSpec::File { .. } => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub model: ModelFamily,
    pub trainer: TrainerConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub track_gip: bool,
    /// Alpha grid for the expansion probe at initialization.
    pub theorem_probe: Option<Vec<f64>>,
    pub n_mc: usize,
    pub dump_params: bool,
}
