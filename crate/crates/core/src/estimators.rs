//! Monte Carlo estimators of model tails and truncated-power moments.
//!
//! All estimators draw sample `i` from the counter-based stream `i` of the
//! seed, so results depend only on `(inputs, seed, workers)`; the worker
//! count only regroups the floating-point merge.

use serde::Serialize;

use crate::distributions::{TailLaw, TailShape};
use crate::error::{domain, Result};
use crate::model::{Draws, ModelSpec};
use crate::oracle::Which;
use crate::rng::{fan_out, SampleStream};

/// Streaming mean and variance with pairwise merging.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub(crate) fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub(crate) fn merge(self, other: Self) -> Self {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Self {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    pub(crate) fn mean(&self) -> f64 {
        self.mean
    }

    pub(crate) fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

/// Estimator used for a tail probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum TailMethod {
    Crude,
    Conditional,
    /// Conditional estimator under survival tilting `S -> S^theta`.
    ConditionalTilted { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub x: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub method: TailMethod,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceValidity {
    FiniteVarianceProven,
    HeavyVarianceWarning,
}

/// Cap applied by the truncated moment estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    /// Exceedance level of the empirical quantile used as the cap.
    pub level: f64,
    pub cap: f64,
    /// Bound on the downward bias from capping; `+∞` if the tail index does
    /// not make it finite.
    pub bias_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
    pub variance_validity: VarianceValidity,
    pub n_samples: usize,
    pub seed: u64,
    pub truncation: Option<Truncation>,
}

fn check_count(count: usize) -> Result<()> {
    if count < 100 {
        return Err(domain(format!("at least 100 samples are required, got {count}")));
    }
    Ok(())
}

fn tail_value(d: &Draws, which: Which) -> f64 {
    let s = d.shifted(1, d.y.len());
    match which {
        Which::S => s.s,
        Which::M => s.m,
    }
}

/// Empirical frequency of `{S_n > x}` or `{M_n > x}`.
pub fn crude_tail(
    spec: &ModelSpec,
    which: Which,
    x: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<TailEstimate> {
    check_count(count)?;
    let hits = fan_out(
        count,
        workers,
        seed,
        || (0u64, Draws::default()),
        |acc, _, stream| {
            spec.draw(stream, &mut acc.1);
            if tail_value(&acc.1, which) > x {
                acc.0 += 1;
            }
        },
        |a, b| (a.0 + b.0, a.1),
    )
    .0;
    let p = hits as f64 / count as f64;
    Ok(TailEstimate {
        x,
        p_hat: p,
        stderr: (p * (1.0 - p) / count as f64).sqrt(),
        method: TailMethod::Crude,
        n_samples: count,
        seed,
    })
}

/// `E Ḡ_1(x / T)` with `T = X_1 + S_{n-1}^{(2)}` (or the maximum version):
/// the first discount factor is integrated out exactly. Thresholds `x <= 0`
/// fall back to [`crude_tail`].
pub fn conditional_tail(
    spec: &ModelSpec,
    which: Which,
    x: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<TailEstimate> {
    conditional_impl(spec, which, x, count, seed, workers, None)
}

/// [`conditional_tail`] with every other continuous coordinate drawn from
/// the survival-tilted law `S^theta` and reweighted by the likelihood ratio.
/// `theta < 1` makes large values more frequent.
pub fn tilted_conditional_tail(
    spec: &ModelSpec,
    which: Which,
    x: f64,
    theta: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<TailEstimate> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(domain(format!("tilt exponent {theta} must lie in (0, 1]")));
    }
    conditional_impl(spec, which, x, count, seed, workers, Some(theta))
}

fn conditional_impl(
    spec: &ModelSpec,
    which: Which,
    x: f64,
    count: usize,
    seed: u64,
    workers: usize,
    theta: Option<f64>,
) -> Result<TailEstimate> {
    check_count(count)?;
    if x <= 0.0 {
        return crude_tail(spec, which, x, count, seed, workers);
    }
    let n = spec.horizon();
    let y1 = &spec.y_laws()[0];
    let acc = fan_out(
        count,
        workers,
        seed,
        || (Welford::default(), Draws::default()),
        |acc, _, stream| {
            let w = match theta {
                Some(t) => spec.draw_tilted(stream, &mut acc.1, t),
                None => {
                    spec.draw(stream, &mut acc.1);
                    1.0
                }
            };
            let d = &acc.1;
            let rest = d.shifted(2, n - 1);
            let t = d.x[0]
                + match which {
                    Which::S => rest.s,
                    Which::M => rest.m,
                };
            let v = if t > 0.0 { y1.survival(x / t) } else { 0.0 };
            acc.0.push(w * v);
        },
        |a, b| (a.0.merge(b.0), a.1),
    )
    .0;
    Ok(TailEstimate {
        x,
        p_hat: acc.mean().clamp(0.0, 1.0),
        stderr: acc.stderr(),
        method: match theta {
            Some(theta) => TailMethod::ConditionalTilted { theta },
            None => TailMethod::Conditional,
        },
        n_samples: count,
        seed,
    })
}

/// `P(Π Z_i > x)` by integrating the heaviest positive factor out exactly.
/// At most one factor may take non-positive values.
pub fn product_conditional_tail(
    laws: &[TailLaw],
    x: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<TailEstimate> {
    check_count(count)?;
    if laws.is_empty() {
        return Err(domain("product of zero factors"));
    }
    if !(x > 0.0) {
        return Err(domain(format!("product tails need a positive threshold, got {x}")));
    }
    let positive = |l: &TailLaw| l.support().0 > 0.0;
    if laws.iter().filter(|l| !positive(l)).count() > 1 {
        return Err(domain("at most one factor may take non-positive values"));
    }
    let key = |l: &TailLaw| {
        let s = l.upper_tail_shape();
        (-s.index, s.log_power)
    };
    let inner = laws
        .iter()
        .enumerate()
        .filter(|(_, l)| positive(l))
        .max_by(|a, b| key(a.1).partial_cmp(&key(b.1)).unwrap())
        .map(|(i, _)| i);
    let acc = fan_out(
        count,
        workers,
        seed,
        Welford::default,
        |acc, _, stream| {
            let mut prod = 1.0;
            for (k, law) in laws.iter().enumerate() {
                let z = law.sample(stream);
                if Some(k) != inner {
                    prod *= z;
                }
            }
            let v = match inner {
                Some(k) if prod > 0.0 => laws[k].survival(x / prod),
                Some(_) => 0.0,
                None => f64::from(u8::from(prod > x)),
            };
            acc.push(v);
        },
        Welford::merge,
    );
    Ok(TailEstimate {
        x,
        p_hat: acc.mean().clamp(0.0, 1.0),
        stderr: acc.stderr(),
        method: TailMethod::Conditional,
        n_samples: count,
        seed,
    })
}

/// `(z)_+^alpha` with `(z)_+^0 = 1{z > 0}`.
pub fn plus_power(z: f64, alpha: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if alpha == 0.0 {
        1.0
    } else {
        z.powf(alpha)
    }
}

/// A random variable evaluated from one sample stream.
pub trait PathFunctional: Sync {
    fn eval(&self, stream: &mut SampleStream, draws: &mut Draws) -> f64;

    /// Shape of the right tail of the functional, when known from the laws.
    fn tail_shape(&self) -> Option<TailShape>;
}

/// A single law as a functional.
pub struct LawFunctional(pub TailLaw);

impl PathFunctional for LawFunctional {
    fn eval(&self, stream: &mut SampleStream, _: &mut Draws) -> f64 {
        self.0.sample(stream)
    }

    fn tail_shape(&self) -> Option<TailShape> {
        Some(self.0.upper_tail_shape())
    }
}

/// `S_m^{(l)}` or `M_m^{(l)}` of a model, drawn with the model's own deviates.
pub struct ShiftedFunctional<'a> {
    spec: &'a ModelSpec,
    which: Which,
    l: usize,
    m: usize,
}

impl<'a> ShiftedFunctional<'a> {
    pub fn new(spec: &'a ModelSpec, which: Which, l: usize, m: usize) -> Result<Self> {
        spec.check_shift(l, m)?;
        Ok(Self { spec, which, l, m })
    }
}

/// Heaviest upper tail among the laws of periods `l..l+m-1`.
fn heaviest_shape(spec: &ModelSpec, l: usize, m: usize) -> Option<TailShape> {
    if m == 0 {
        return None;
    }
    let laws = spec.x_laws()[l - 1..l - 1 + m]
        .iter()
        .chain(&spec.y_laws()[l - 1..l - 1 + m]);
    laws.map(|law| law.upper_tail_shape())
        .reduce(|a, b| if a.negligible_against(&b) { b } else { a })
}

impl PathFunctional for ShiftedFunctional<'_> {
    fn eval(&self, stream: &mut SampleStream, draws: &mut Draws) -> f64 {
        self.spec.draw(stream, draws);
        let s = draws.shifted(self.l, self.m);
        match self.which {
            Which::S => s.s,
            Which::M => s.m,
        }
    }

    fn tail_shape(&self) -> Option<TailShape> {
        heaviest_shape(self.spec, self.l, self.m)
    }
}

fn validity_from(finite: bool) -> VarianceValidity {
    if finite {
        VarianceValidity::FiniteVarianceProven
    } else {
        VarianceValidity::HeavyVarianceWarning
    }
}

/// Monte Carlo mean of `(Z)_+^alpha`.
pub fn plus_moment<F: PathFunctional + ?Sized>(
    functional: &F,
    alpha: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentEstimate> {
    if !(alpha >= 0.0) {
        return Err(domain(format!("alpha = {alpha} must be non-negative")));
    }
    if count == 0 {
        return Err(domain("count must be at least 1"));
    }
    let acc = fan_out(
        count,
        workers,
        seed,
        || (Welford::default(), Draws::default()),
        |acc, _, stream| {
            let z = functional.eval(stream, &mut acc.1);
            acc.0.push(plus_power(z, alpha));
        },
        |a, b| (a.0.merge(b.0), a.1),
    )
    .0;
    let finite = alpha == 0.0
        || functional
            .tail_shape()
            .is_none_or(|s| s.moment_finite(2.0 * alpha));
    Ok(MomentEstimate {
        value: acc.mean(),
        stderr: acc.stderr(),
        variance_validity: validity_from(finite),
        n_samples: count,
        seed,
        truncation: None,
    })
}

/// Default exceedance level for [`truncated_plus_moment`].
pub const TRUNCATION_LEVEL: f64 = 1e-4;

/// `E min(Z_+, q)^alpha` with `q` the empirical `1 - level` quantile.
///
/// Meant for `alpha >= 2`, where `(Z)_+^alpha` typically has no second
/// moment. The reported bias bound assumes a Pareto tail beyond `q` with the
/// functional's index `κ`: `level · q^alpha · alpha / (κ - alpha)`.
pub fn truncated_plus_moment<F: PathFunctional + ?Sized>(
    functional: &F,
    alpha: f64,
    level: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentEstimate> {
    if !(alpha > 0.0) {
        return Err(domain("truncation needs a positive moment order"));
    }
    if !(level > 0.0 && level < 1.0) || (count as f64 * level) < 1.0 {
        return Err(domain(format!(
            "level {level} needs at least {} samples",
            (1.0 / level).ceil()
        )));
    }
    let mut values = fan_out(
        count,
        workers,
        seed,
        || (Vec::new(), Draws::default()),
        |acc, _, stream| {
            let z = functional.eval(stream, &mut acc.1);
            acc.0.push(z.max(0.0));
        },
        |mut a, b| {
            a.0.extend(b.0);
            a
        },
    )
    .0;
    let k = ((count as f64) * (1.0 - level)).floor() as usize;
    let k = k.min(count - 1);
    let (_, &mut cap, _) = values.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap());
    let mut acc = Welford::default();
    for z in values {
        acc.push(plus_power(z.min(cap), alpha));
    }
    let bias_bound = match functional.tail_shape() {
        Some(s) if s.is_light() => 0.0,
        Some(s) if s.index > alpha => level * cap.powf(alpha) * alpha / (s.index - alpha),
        Some(_) => f64::INFINITY,
        None => 0.0,
    };
    Ok(MomentEstimate {
        value: acc.mean(),
        stderr: acc.stderr(),
        variance_validity: VarianceValidity::FiniteVarianceProven,
        n_samples: count,
        seed,
        truncation: Some(Truncation {
            level,
            cap,
            bias_bound,
        }),
    })
}

/// `B_{n,i}` (which = S) or `D_{n,i}` (which = M) as the single expectation
/// `E[(X_i + T)_+^alpha - (T)_+^alpha]`, `T = S_{n-i}^{(i+1)}` or its maximum,
/// with both terms evaluated on the same path.
pub fn paired_difference_moment(
    spec: &ModelSpec,
    which: Which,
    i: usize,
    alpha: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentEstimate> {
    paired_moment(spec, which, i, alpha, false, count, seed, workers)
}

/// `E[(X_i + T)_+^alpha - (T)_+^alpha - (X_i)_+^alpha]`, the coefficient of the
/// discount-product term when the loss-weighted terms are kept separately.
pub fn paired_excess_moment(
    spec: &ModelSpec,
    which: Which,
    i: usize,
    alpha: f64,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentEstimate> {
    paired_moment(spec, which, i, alpha, true, count, seed, workers)
}

#[allow(clippy::too_many_arguments)]
fn paired_moment(
    spec: &ModelSpec,
    which: Which,
    i: usize,
    alpha: f64,
    minus_loss: bool,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<MomentEstimate> {
    let n = spec.horizon();
    if i < 1 || i > n {
        return Err(domain(format!("index {i} is outside 1..={n}")));
    }
    if !(alpha >= 0.0) {
        return Err(domain(format!("alpha = {alpha} must be non-negative")));
    }
    if count == 0 {
        return Err(domain("count must be at least 1"));
    }
    let acc = fan_out(
        count,
        workers,
        seed,
        || (Welford::default(), Draws::default()),
        |acc, _, stream| {
            spec.draw(stream, &mut acc.1);
            let d = &acc.1;
            let rest = d.shifted(i + 1, n - i);
            let t = match which {
                Which::S => rest.s,
                Which::M => rest.m,
            };
            let x = d.x[i - 1];
            let mut v = plus_power(x + t, alpha) - plus_power(t, alpha);
            if minus_loss {
                v -= plus_power(x, alpha);
            }
            acc.0.push(v);
        },
        |a, b| (a.0.merge(b.0), a.1),
    )
    .0;
    let x_shape = spec.x_laws()[i - 1].abs_tail_shape();
    let t_shape = heaviest_shape(spec, i + 1, n - i);
    let finite = alpha == 0.0
        || (x_shape.moment_finite(2.0 * alpha)
            && (alpha <= 1.0
                || (x_shape.moment_finite(2.0)
                    && t_shape.is_none_or(|s| s.moment_finite(2.0 * (alpha - 1.0))))));
    Ok(MomentEstimate {
        value: acc.mean(),
        stderr: acc.stderr(),
        variance_validity: validity_from(finite),
        n_samples: count,
        seed,
        truncation: None,
    })
}
