use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tailrisk::asymptotics::Variant;
use tailrisk::diagnostics::geometric_grid;
use tailrisk::oracle::Which;
use tailrisk::{Dependence, ModelSpec, TailLaw};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DependenceKind {
    #[default]
    Independent,
    Comonotone,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Horizon `n`; single-law lists are repeated to this length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub dependence: DependenceKind,
    #[serde(default = "default_which")]
    pub which: Which,
    /// Declared range `[a, b]` of the weights; defaults to their min and max.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_range: Option<[f64; 2]>,
    /// `lim P(X > x) / P(Y > x)`; derived from the laws when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

fn default_which() -> Which {
    Which::S
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            horizon: None,
            dependence: DependenceKind::default(),
            which: default_which(),
            weight_range: None,
            theta: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    /// `lo:hi:points`, geometric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// How expansion base tails are evaluated: oracle, conditional-mc or asymptote.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_tilt")]
    pub tilt: f64,
}

fn default_seed() -> u64 {
    1
}
fn default_workers() -> usize {
    1
}
fn default_budget() -> usize {
    100_000
}
fn default_tolerance() -> f64 {
    0.3
}
fn default_tilt() -> f64 {
    0.3
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            workers: default_workers(),
            budget: default_budget(),
            x: None,
            grid: None,
            method: None,
            base: None,
            variant: None,
            tolerance: default_tolerance(),
            tilt: default_tilt(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub x_laws: Vec<TailLaw>,
    pub y_laws: Vec<TailLaw>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
    #[serde(default)]
    pub run: RunSection,
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub budget: Option<usize>,
    pub x: Option<f64>,
    pub grid: Option<String>,
    pub method: Option<String>,
    pub base: Option<String>,
    pub variant: Option<Variant>,
    pub which: Option<Which>,
    pub tolerance: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("at `{path}`: {}", e.into_inner())
        })
    }

    pub fn apply(&mut self, o: Overrides) {
        let run = &mut self.run;
        if let Some(v) = o.seed {
            run.seed = v;
        }
        if let Some(v) = o.workers {
            run.workers = v;
        }
        if let Some(v) = o.budget {
            run.budget = v;
        }
        if o.x.is_some() {
            run.x = o.x;
        }
        if o.grid.is_some() {
            run.grid = o.grid;
        }
        if o.method.is_some() {
            run.method = o.method;
        }
        if o.base.is_some() {
            run.base = o.base;
        }
        if o.variant.is_some() {
            run.variant = o.variant;
        }
        if let Some(v) = o.which {
            self.model.which = v;
        }
        if let Some(v) = o.tolerance {
            run.tolerance = v;
        }
    }

    /// The resolved configuration as one line of JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configs serialize")
    }

    pub fn horizon(&self) -> Result<usize> {
        let lens = [self.x_laws.len(), self.y_laws.len(), self.weights.len()];
        let n = match self.model.horizon {
            Some(n) => n,
            None => lens.into_iter().max().unwrap_or(0),
        };
        if n == 0 {
            bail!("the model needs at least one period");
        }
        Ok(n)
    }

    pub fn is_weighted(&self) -> bool {
        !self.weights.is_empty()
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let n = self.horizon()?;
        let ys = expand("y_laws", &self.y_laws, n)?;
        if self.is_weighted() {
            if !self.x_laws.is_empty() {
                bail!("`x_laws` and `weights` are mutually exclusive");
            }
            let weights = expand("weights", &self.weights, n)?;
            let [a, b] = match self.model.weight_range {
                Some(r) => r,
                None => [
                    weights.iter().cloned().fold(f64::INFINITY, f64::min),
                    weights.iter().cloned().fold(0.0, f64::max),
                ],
            };
            return Ok(ModelSpec::weighted(ys, weights, a, b)?);
        }
        let xs = expand("x_laws", &self.x_laws, n)?;
        let dependence = match self.model.dependence {
            DependenceKind::Independent => Dependence::Independent,
            DependenceKind::Comonotone => Dependence::Comonotone,
        };
        Ok(ModelSpec::with_dependence(xs, ys, dependence)?)
    }

    pub fn x(&self) -> Result<f64> {
        self.run.x.context("a threshold is required (--x or run.x)")
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        let text = self
            .run
            .grid
            .as_deref()
            .context("a threshold grid is required (--grid or run.grid)")?;
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("grid `{text}` must have the form lo:hi:points");
        }
        let lo: f64 = parts[0].trim().parse().with_context(|| format!("bad grid start `{}`", parts[0]))?;
        let hi: f64 = parts[1].trim().parse().with_context(|| format!("bad grid end `{}`", parts[1]))?;
        let points: usize = parts[2].trim().parse().with_context(|| format!("bad point count `{}`", parts[2]))?;
        Ok(geometric_grid(lo, hi, points)?)
    }
}

fn expand<T: Clone>(name: &str, items: &[T], n: usize) -> Result<Vec<T>> {
    match items.len() {
        0 => bail!("`{name}` is empty"),
        1 => Ok(vec![items[0].clone(); n]),
        k if k == n => Ok(items.to_vec()),
        k => bail!("`{name}` has {k} entries but the horizon is {n}"),
    }
}
