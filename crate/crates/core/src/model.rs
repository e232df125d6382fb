//! The discounted loss recursion `S_n = Σ X_i Π_{j≤i} Y_j`, its running
//! maximum `M_n`, and the shifted quantities `S_m^{(l)}`, `M_m^{(l)}`.
//!
//! Every path is drawn period by period starting at period 1 (the discount
//! deviate, then the loss deviate), so quantities over different horizons or
//! starting periods computed from the same stream share common random numbers.
//! Sums are evaluated backwards, `S = Y_l (X_l + S')` and
//! `M = Y_l (X_l + M')_+`, which makes the shift recursion hold bitwise.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use crate::distributions::TailLaw;
use crate::error::{domain, Error, Result};
use crate::rng::{fan_out, UniformSource};

/// Fills the vector of losses `X_1..X_n` for one path.
pub trait JointSampler: Send + Sync {
    /// Number of losses produced per call.
    fn dimension(&self) -> usize;
    fn fill(&self, stream: &mut dyn UniformSource, out: &mut [f64]);
}

/// Dependence among the losses. Discount factors are always independent.
#[derive(Clone, Default)]
pub enum Dependence {
    #[default]
    Independent,
    /// One uniform deviate drives every loss quantile.
    Comonotone,
    Joint(Arc<dyn JointSampler>),
}

impl fmt::Debug for Dependence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Independent => f.write_str("Independent"),
            Self::Comonotone => f.write_str("Comonotone"),
            Self::Joint(s) => write!(f, "Joint(dimension = {})", s.dimension()),
        }
    }
}

/// Constant weights `c_i` with their declared range `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub values: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    x_laws: Vec<TailLaw>,
    y_laws: Vec<TailLaw>,
    dependence: Dependence,
    weights: Option<Weights>,
}

impl ModelSpec {
    /// Model with independent losses.
    pub fn new(x_laws: Vec<TailLaw>, y_laws: Vec<TailLaw>) -> Result<Self> {
        Self::with_dependence(x_laws, y_laws, Dependence::Independent)
    }

    pub fn with_dependence(
        x_laws: Vec<TailLaw>,
        y_laws: Vec<TailLaw>,
        dependence: Dependence,
    ) -> Result<Self> {
        if y_laws.is_empty() {
            return Err(domain("the horizon must be at least 1"));
        }
        if x_laws.len() != y_laws.len() {
            return Err(domain(format!(
                "{} loss laws for {} discount laws",
                x_laws.len(),
                y_laws.len()
            )));
        }
        for law in x_laws.iter().chain(&y_laws) {
            law.validate()?;
        }
        for (i, law) in y_laws.iter().enumerate() {
            if !(law.support().0 > 0.0) {
                return Err(domain(format!(
                    "discount law {} ({}) must have support in (0, ∞)",
                    i + 1,
                    law.family()
                )));
            }
        }
        if let Dependence::Joint(s) = &dependence {
            if s.dimension() != x_laws.len() {
                return Err(Error::Config(format!(
                    "joint sampler produces {} losses for a horizon of {}",
                    s.dimension(),
                    x_laws.len()
                )));
            }
        }
        Ok(Self {
            x_laws,
            y_laws,
            dependence,
            weights: None,
        })
    }

    /// Weighted-sum model `Σ c_i Π_{j≤i} Y_j` with weights in `[lower, upper]`.
    pub fn weighted(y_laws: Vec<TailLaw>, weights: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= upper && upper.is_finite()) {
            return Err(domain(format!(
                "weight range [{lower}, {upper}] must satisfy 0 < a <= b < ∞"
            )));
        }
        for (i, &c) in weights.iter().enumerate() {
            if !(c >= lower && c <= upper) {
                return Err(domain(format!(
                    "weight c_{} = {c} lies outside [{lower}, {upper}]",
                    i + 1
                )));
            }
        }
        let x_laws = weights
            .iter()
            .map(|&c| TailLaw::point_mass(c))
            .collect::<Result<Vec<_>>>()?;
        let mut spec = Self::new(x_laws, y_laws)?;
        spec.weights = Some(Weights {
            values: weights,
            lower,
            upper,
        });
        Ok(spec)
    }

    pub fn horizon(&self) -> usize {
        self.y_laws.len()
    }

    pub fn x_laws(&self) -> &[TailLaw] {
        &self.x_laws
    }

    pub fn y_laws(&self) -> &[TailLaw] {
        &self.y_laws
    }

    pub fn dependence(&self) -> &Dependence {
        &self.dependence
    }

    pub fn weights(&self) -> Option<&Weights> {
        self.weights.as_ref()
    }

    pub fn has_independent_losses(&self) -> bool {
        matches!(self.dependence, Dependence::Independent)
            || self.x_laws.iter().all(|l| !l.is_continuous())
    }

    /// Whether the horizon uses one law for every loss and one for every discount.
    pub fn is_iid(&self) -> bool {
        self.has_independent_losses()
            && self.x_laws.iter().all(|l| *l == self.x_laws[0])
            && self.y_laws.iter().all(|l| *l == self.y_laws[0])
    }

    /// Same model restricted to the first `n` periods.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.horizon() {
            return Err(domain(format!(
                "cannot truncate a horizon of {} to {n}",
                self.horizon()
            )));
        }
        if matches!(self.dependence, Dependence::Joint(_)) && n != self.horizon() {
            return Err(Error::Config(
                "a joint loss sampler fixes the horizon".into(),
            ));
        }
        let mut spec = self.clone();
        spec.x_laws.truncate(n);
        spec.y_laws.truncate(n);
        if let Some(w) = spec.weights.as_mut() {
            w.values.truncate(n);
        }
        Ok(spec)
    }

    /// Draws one path into `draws`.
    pub fn draw<R: UniformSource>(&self, stream: &mut R, draws: &mut Draws) {
        let n = self.horizon();
        draws.x.resize(n, 0.0);
        draws.y.resize(n, 0.0);
        match &self.dependence {
            Dependence::Independent => {
                for i in 0..n {
                    draws.y[i] = self.y_laws[i].sample(stream);
                    draws.x[i] = self.x_laws[i].sample(stream);
                }
            }
            Dependence::Comonotone => {
                let mut u = 0.0;
                for i in 0..n {
                    draws.y[i] = self.y_laws[i].sample(stream);
                    if i == 0 {
                        u = stream.uniform();
                    }
                    draws.x[i] = self.x_laws[i]
                        .quantile(u)
                        .expect("uniform deviates lie in (0, 1)");
                }
            }
            Dependence::Joint(sampler) => {
                for i in 0..n {
                    draws.y[i] = self.y_laws[i].sample(stream);
                }
                sampler.fill(stream, &mut draws.x);
            }
        }
    }

    /// Draws one path with every continuous coordinate except `Y_1` taken
    /// from the tilted law with survival `S^theta`, and returns the
    /// likelihood ratio `Π S(z)^{1-theta} / theta` of the tilted coordinates.
    ///
    /// Uses the same deviates as [`draw`](Self::draw). Losses from a joint
    /// sampler are never tilted.
    pub fn draw_tilted<R: UniformSource>(&self, stream: &mut R, draws: &mut Draws, theta: f64) -> f64 {
        let n = self.horizon();
        draws.x.resize(n, 0.0);
        draws.y.resize(n, 0.0);
        let mut weight = 1.0;
        let tilt = |law: &TailLaw, u: f64, weight: &mut f64| -> f64 {
            if !law.is_continuous() {
                return law.quantile(u).expect("uniform deviates lie in (0, 1)");
            }
            let v = u.powf(theta.recip());
            *weight *= v.powf(1.0 - theta) / theta;
            law.quantile(v).expect("tilted deviates lie in (0, 1)")
        };
        match &self.dependence {
            Dependence::Joint(sampler) => {
                for i in 0..n {
                    let u = stream.uniform();
                    draws.y[i] = if i == 0 {
                        self.y_laws[0].quantile(u).expect("valid deviate")
                    } else {
                        tilt(&self.y_laws[i], u, &mut weight)
                    };
                }
                sampler.fill(stream, &mut draws.x);
            }
            dependence => {
                let comonotone = matches!(dependence, Dependence::Comonotone);
                let mut shared = 0.0;
                for i in 0..n {
                    let u = stream.uniform();
                    draws.y[i] = if i == 0 {
                        self.y_laws[0].quantile(u).expect("valid deviate")
                    } else {
                        tilt(&self.y_laws[i], u, &mut weight)
                    };
                    if !comonotone {
                        draws.x[i] = tilt(&self.x_laws[i], stream.uniform(), &mut weight);
                        continue;
                    }
                    if i == 0 {
                        let u = stream.uniform();
                        // The shared deviate is tilted once.
                        shared = if self.x_laws.iter().any(|l| l.is_continuous()) {
                            let v = u.powf(theta.recip());
                            weight *= v.powf(1.0 - theta) / theta;
                            v
                        } else {
                            u
                        };
                    }
                    draws.x[i] = self.x_laws[i].quantile(shared).expect("valid deviate");
                }
            }
        }
        weight
    }

    /// Draws `count` paths of `(S_n, M_n)`.
    pub fn simulate(&self, count: usize, seed: u64, workers: usize) -> Result<Vec<PathSample>> {
        if count == 0 {
            return Err(domain("count must be at least 1"));
        }
        Ok(fan_out(
            count,
            workers,
            seed,
            Vec::new,
            |acc: &mut Vec<PathSample>, _, stream| {
                let mut d = Draws::default();
                self.draw(stream, &mut d);
                acc.push(d.path_sample());
            },
            concat,
        ))
    }

    /// Draws `count` samples of `(S_m^{(l)}, M_m^{(l)})`, periods `l..l+m-1`.
    pub fn simulate_shifted(
        &self,
        l: usize,
        m: usize,
        count: usize,
        seed: u64,
        workers: usize,
    ) -> Result<Vec<ShiftedSample>> {
        self.check_shift(l, m)?;
        if count == 0 {
            return Err(domain("count must be at least 1"));
        }
        Ok(fan_out(
            count,
            workers,
            seed,
            Vec::new,
            |acc: &mut Vec<ShiftedSample>, _, stream| {
                let mut d = Draws::default();
                self.draw(stream, &mut d);
                acc.push(d.shifted(l, m));
            },
            concat,
        ))
    }

    pub(crate) fn check_shift(&self, l: usize, m: usize) -> Result<()> {
        if l < 1 || l + m > self.horizon() + 1 {
            return Err(domain(format!(
                "shift l = {l}, length m = {m} does not fit a horizon of {}",
                self.horizon()
            )));
        }
        Ok(())
    }
}

fn concat<T>(mut a: Vec<T>, b: Vec<T>) -> Vec<T> {
    a.extend(b);
    a
}

/// One drawn path: losses and discount factors indexed from period 1.
#[derive(Debug, Clone, Default)]
pub struct Draws {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Draws {
    /// `(S_m^{(l)}, M_m^{(l)})` with 1-based `l`.
    pub fn shifted(&self, l: usize, m: usize) -> ShiftedSample {
        let (mut s, mut mx) = (0.0, 0.0);
        for k in (l - 1..l - 1 + m).rev() {
            s = self.y[k] * (self.x[k] + s);
            mx = self.y[k] * (self.x[k] + mx).max(0.0);
        }
        ShiftedSample { s, m: mx }
    }

    pub fn path_sample(&self) -> PathSample {
        let n = self.y.len();
        let ShiftedSample { s, m } = self.shifted(1, n);
        let mut discounts = Vec::with_capacity(n);
        let mut prod = 1.0;
        for &y in &self.y {
            prod *= y;
            discounts.push(prod);
        }
        PathSample {
            s_n: s,
            m_n: m,
            discounts,
            losses: self.x.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedSample {
    pub s: f64,
    pub m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub s_n: f64,
    pub m_n: f64,
    /// `Π_{j≤i} Y_j` for `i = 1..n`.
    pub discounts: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Writes samples as CSV with columns `index,s_n,m_n`.
pub fn write_samples_csv<W: Write>(samples: &[PathSample], mut out: W) -> io::Result<()> {
    writeln!(out, "index,s_n,m_n")?;
    for (i, p) in samples.iter().enumerate() {
        writeln!(out, "{i},{},{}", p.s_n, p.m_n)?;
    }
    Ok(())
}
