//! Catalog of one-dimensional laws with exact survival, density, quantile,
//! sampling and truncated-power moments.
//!
//! Heavy families have survival functions of the form
//! `C (ln x)^κ x^{-α}` on their support. [`TailShape`] records `(α, κ, C)`
//! so that tail comparisons (`o(·)` relations, limits of ratios) are decided
//! from parameters rather than estimated.

use std::f64::consts::{E, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::rng::UniformSource;

fn unit() -> f64 {
    1.0
}

/// A one-dimensional law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum TailLaw {
    /// Survival `(x0/x)^alpha` for `x >= x0`.
    Pareto { alpha: f64, x0: f64 },
    /// Survival `min(1, K (ln x)^(gamma-1) x^(-alpha))` for `x >= x1`, where
    /// `x1 = max(x0, e^((gamma-1)/alpha))` and
    /// `K = sv_scale * x1^alpha * (ln x1)^(1-gamma)`.
    LogPowerPareto {
        alpha: f64,
        gamma: f64,
        x0: f64,
        #[serde(default = "unit")]
        sv_scale: f64,
    },
    /// Survival `(ln x0 / ln x)^beta (x0/x)^alpha` for `x >= x0 > 1`.
    LogFactorPareto { alpha: f64, beta: f64, x0: f64 },
    /// Survival `(ln x0 / ln x)^beta` for `x >= x0 > 1`; slowly varying.
    SuperHeavyLog { beta: f64, x0: f64 },
    Lognormal { mu: f64, sigma: f64 },
    PointMass { value: f64 },
    /// `law - shift`, or `shift - law` when `negate` is set.
    NegatedShifted {
        law: Box<TailLaw>,
        shift: f64,
        #[serde(default)]
        negate: bool,
    },
}

/// Asymptotic tail `constant * (ln x)^log_power * x^(-index)`.
///
/// `index = +∞` marks a tail lighter than every power (bounded or
/// lognormal-type), in which case the other fields are unused.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailShape {
    pub index: f64,
    pub log_power: f64,
    pub constant: f64,
}

impl TailShape {
    pub fn light() -> Self {
        Self {
            index: f64::INFINITY,
            log_power: 0.0,
            constant: 0.0,
        }
    }

    pub fn is_light(&self) -> bool {
        self.index.is_infinite()
    }

    /// Whether this tail is `o(other)`.
    pub fn negligible_against(&self, other: &TailShape) -> bool {
        if other.is_light() {
            return false;
        }
        self.index > other.index || (self.index == other.index && self.log_power < other.log_power)
    }

    /// `lim self(x) / other(x)`, `+∞` when this tail is heavier.
    pub fn ratio_limit(&self, other: &TailShape) -> f64 {
        if self.negligible_against(other) {
            0.0
        } else if self.index == other.index && self.log_power == other.log_power {
            self.constant / other.constant
        } else {
            f64::INFINITY
        }
    }

    /// Whether `E Z^p` is finite for a positive variable with this tail.
    pub fn moment_finite(&self, p: f64) -> bool {
        if p == 0.0 || self.is_light() {
            return true;
        }
        p < self.index || (p == self.index && self.log_power < -1.0)
    }
}

/// Parameters of a log-power tail `ell (ln x)^(gamma-1) x^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPowerForm {
    pub alpha: f64,
    pub gamma: f64,
    pub ell: f64,
}

#[derive(Debug, Clone, Copy)]
struct LogPower {
    alpha: f64,
    gamma: f64,
    x1: f64,
    ln_x1: f64,
    ln_scale: f64,
}

impl LogPower {
    fn new(alpha: f64, gamma: f64, x0: f64, sv_scale: f64) -> Self {
        let x1 = x0.max(((gamma - 1.0) / alpha).exp());
        Self {
            alpha,
            gamma,
            x1,
            ln_x1: x1.ln(),
            ln_scale: sv_scale.ln(),
        }
    }

    /// `ln K(ln x)^(gamma-1) x^(-alpha)` and its derivative in `t = ln x`.
    fn ln_tail(&self, t: f64) -> (f64, f64) {
        let mut v = self.ln_scale - self.alpha * (t - self.ln_x1);
        let mut d = -self.alpha;
        if self.gamma != 1.0 {
            v += (self.gamma - 1.0) * (t.ln() - self.ln_x1.ln());
            d += (self.gamma - 1.0) / t;
        }
        (v, d)
    }

    fn ell(&self) -> f64 {
        let mut k = self.ln_scale.exp() * (self.alpha * self.ln_x1).exp();
        if self.gamma != 1.0 {
            k *= self.ln_x1.powf(1.0 - self.gamma);
        }
        k
    }

    fn start(&self) -> f64 {
        if self.ln_scale <= 0.0 {
            return self.x1;
        }
        solve_decreasing(|t| self.ln_tail(t), self.ln_x1, 0.0).exp()
    }
}

/// Finds `t >= t_lo` with `h(t) = target` for a decreasing `h` satisfying
/// `h(t_lo) >= target`. Safeguarded Newton iteration with bisection.
fn solve_decreasing<H: Fn(f64) -> (f64, f64)>(h: H, t_lo: f64, target: f64) -> f64 {
    let mut lo = t_lo;
    let mut step = 1.0f64.max(t_lo.abs());
    let mut hi = t_lo + step;
    while h(hi).0 > target {
        lo = hi;
        step *= 2.0;
        hi += step;
    }
    solve_bracketed(&h, lo, hi, target)
}

fn solve_bracketed<H: Fn(f64) -> (f64, f64)>(h: &H, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (v, d) = h(t);
        let g = v - target;
        if g == 0.0 {
            return t;
        }
        if g > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - g / d;
        let next = if d < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-15 * t.abs().max(1.0) || hi - lo <= 1e-15 * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

fn upper_normal_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

fn normal_density(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl TailLaw {
    pub fn pareto(alpha: f64, x0: f64) -> Result<Self> {
        let law = Self::Pareto { alpha, x0 };
        law.validate()?;
        Ok(law)
    }

    pub fn log_power_pareto(alpha: f64, gamma: f64, x0: f64, sv_scale: f64) -> Result<Self> {
        let law = Self::LogPowerPareto {
            alpha,
            gamma,
            x0,
            sv_scale,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn log_factor_pareto(alpha: f64, beta: f64, x0: f64) -> Result<Self> {
        let law = Self::LogFactorPareto { alpha, beta, x0 };
        law.validate()?;
        Ok(law)
    }

    pub fn super_heavy_log(beta: f64, x0: f64) -> Result<Self> {
        let law = Self::SuperHeavyLog { beta, x0 };
        law.validate()?;
        Ok(law)
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        let law = Self::Lognormal { mu, sigma };
        law.validate()?;
        Ok(law)
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        let law = Self::PointMass { value };
        law.validate()?;
        Ok(law)
    }

    /// `law - shift`, or `shift - law` when `negate` is true.
    pub fn negated_shifted(law: TailLaw, shift: f64, negate: bool) -> Result<Self> {
        let law = Self::NegatedShifted {
            law: Box::new(law),
            shift,
            negate,
        };
        law.validate()?;
        Ok(law)
    }

    pub fn family(&self) -> &'static str {
        match self {
            Self::Pareto { .. } => "Pareto",
            Self::LogPowerPareto { .. } => "LogPowerPareto",
            Self::LogFactorPareto { .. } => "LogFactorPareto",
            Self::SuperHeavyLog { .. } => "SuperHeavyLog",
            Self::Lognormal { .. } => "Lognormal",
            Self::PointMass { .. } => "PointMass",
            Self::NegatedShifted { .. } => "NegatedShifted",
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<()> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value,
                    reason,
                })
            }
        }
        match *self {
            Self::Pareto { alpha, x0 } => {
                check(alpha > 0.0, "alpha", alpha, "must be positive")?;
                check(x0 > 0.0, "x0", x0, "must be positive")
            }
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => {
                check(alpha > 0.0, "alpha", alpha, "must be positive")?;
                check(gamma > 0.0, "gamma", gamma, "must be positive")?;
                check(x0 > 0.0, "x0", x0, "must be positive")?;
                check(
                    sv_scale >= 1.0,
                    "sv_scale",
                    sv_scale,
                    "must be at least 1 so the survival starts at 1",
                )?;
                let lp = LogPower::new(alpha, gamma, x0, sv_scale);
                check(
                    gamma == 1.0 || lp.x1 > 1.0,
                    "x0",
                    x0,
                    "must exceed 1 when gamma != 1",
                )
            }
            Self::LogFactorPareto { alpha, beta, x0 } => {
                check(alpha > 0.0, "alpha", alpha, "must be positive")?;
                check(beta > 1.0, "beta", beta, "must exceed 1")?;
                check(x0 > 1.0, "x0", x0, "must exceed 1")
            }
            Self::SuperHeavyLog { beta, x0 } => {
                check(beta > 0.0, "beta", beta, "must be positive")?;
                check(x0 > 1.0, "x0", x0, "must exceed 1")
            }
            Self::Lognormal { mu, sigma } => {
                check(true, "mu", mu, "must be finite")?;
                check(sigma > 0.0, "sigma", sigma, "must be positive")
            }
            Self::PointMass { value } => check(true, "value", value, "must be finite"),
            Self::NegatedShifted {
                ref law, shift, ..
            } => {
                check(true, "shift", shift, "must be finite")?;
                law.validate()
            }
        }
    }

    /// Support endpoints `(lower, upper)`; either may be infinite.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Pareto { x0, .. }
            | Self::LogFactorPareto { x0, .. }
            | Self::SuperHeavyLog { x0, .. } => (x0, f64::INFINITY),
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => (LogPower::new(alpha, gamma, x0, sv_scale).start(), f64::INFINITY),
            Self::Lognormal { .. } => (0.0, f64::INFINITY),
            Self::PointMass { value } => (value, value),
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                let (lo, hi) = law.support();
                if negate {
                    (shift - hi, shift - lo)
                } else {
                    (lo - shift, hi - shift)
                }
            }
        }
    }

    /// The value of a degenerate law.
    pub fn atom(&self) -> Option<f64> {
        match self {
            Self::PointMass { value } => Some(*value),
            Self::NegatedShifted { law, shift, negate } => law
                .atom()
                .map(|v| if *negate { shift - v } else { v - shift }),
            _ => None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.atom().is_none()
    }

    /// `P(X > 0)`.
    pub fn prob_positive(&self) -> f64 {
        self.survival(0.0)
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        match *self {
            Self::Pareto { alpha, x0 } => {
                if x <= x0 {
                    1.0
                } else {
                    (x0 / x).powf(alpha)
                }
            }
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => {
                let lp = LogPower::new(alpha, gamma, x0, sv_scale);
                if x <= lp.x1 {
                    1.0
                } else {
                    lp.ln_tail(x.ln()).0.min(0.0).exp()
                }
            }
            Self::LogFactorPareto { alpha, beta, x0 } => {
                if x <= x0 {
                    1.0
                } else {
                    (x0.ln() / x.ln()).powf(beta) * (x0 / x).powf(alpha)
                }
            }
            Self::SuperHeavyLog { beta, x0 } => {
                if x <= x0 {
                    1.0
                } else {
                    (x0.ln() / x.ln()).powf(beta)
                }
            }
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    1.0
                } else {
                    upper_normal_tail((x.ln() - mu) / sigma)
                }
            }
            Self::PointMass { value } => {
                if x < value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                if negate {
                    1.0 - law.survival_closed(shift - x)
                } else {
                    law.survival(x + shift)
                }
            }
        }
    }

    /// `P(X >= x)`; differs from [`survival`](Self::survival) only at atoms.
    pub fn survival_closed(&self, x: f64) -> f64 {
        match *self {
            Self::PointMass { value } => {
                if x <= value {
                    1.0
                } else {
                    0.0
                }
            }
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                if negate {
                    1.0 - law.survival(shift - x)
                } else {
                    law.survival_closed(x + shift)
                }
            }
            _ => self.survival(x),
        }
    }

    /// `P(X <= x)`, accurate in the lower tail of the lognormal family.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    upper_normal_tail((mu - x.ln()) / sigma)
                }
            }
            _ => 1.0 - self.survival(x),
        }
    }

    /// Density of an absolutely continuous law.
    pub fn density(&self, x: f64) -> Result<f64> {
        if x.is_infinite() && self.is_continuous() {
            return Ok(0.0);
        }
        let value = match *self {
            Self::Pareto { alpha, x0 } => {
                if x < x0 {
                    0.0
                } else {
                    alpha / x * (x0 / x).powf(alpha)
                }
            }
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => {
                let lp = LogPower::new(alpha, gamma, x0, sv_scale);
                if x < lp.start() {
                    0.0
                } else {
                    let (ln_s, d) = lp.ln_tail(x.ln());
                    -d * ln_s.exp() / x
                }
            }
            Self::LogFactorPareto { alpha, beta, .. } => {
                let (lo, _) = self.support();
                if x < lo {
                    0.0
                } else {
                    self.survival(x) / x * (alpha + beta / x.ln())
                }
            }
            Self::SuperHeavyLog { beta, x0 } => {
                if x < x0 {
                    0.0
                } else {
                    self.survival(x) * beta / (x * x.ln())
                }
            }
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_density((x.ln() - mu) / sigma) / (sigma * x)
                }
            }
            Self::PointMass { .. } => {
                return Err(Error::UnsupportedFamily {
                    op: "density",
                    family: "PointMass",
                })
            }
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                if negate {
                    law.density(shift - x)?
                } else {
                    law.density(x + shift)?
                }
            }
        };
        Ok(value)
    }

    /// The `x` with `P(X > x) = u` for a survival level `u` in `(0, 1]`.
    /// `u = 1` returns the lower support endpoint.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(domain(format!("survival level {u} is outside (0, 1]")));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Self::Pareto { alpha, x0 } => x0 * u.powf(-1.0 / alpha),
            Self::SuperHeavyLog { beta, x0 } => (x0.ln() * u.powf(-1.0 / beta)).exp(),
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => {
                if u <= 0.0 {
                    return f64::INFINITY;
                }
                let lp = LogPower::new(alpha, gamma, x0, sv_scale);
                let start = lp.start();
                if u >= 1.0 {
                    return start;
                }
                if gamma == 1.0 {
                    return (lp.ln_x1 + (lp.ln_scale - u.ln()) / alpha).exp();
                }
                solve_decreasing(|t| lp.ln_tail(t), start.ln(), u.ln()).exp()
            }
            Self::LogFactorPareto { alpha, beta, x0 } => {
                if u <= 0.0 {
                    return f64::INFINITY;
                }
                if u >= 1.0 {
                    return x0;
                }
                let l0 = x0.ln();
                let h = |t: f64| {
                    (
                        beta * (l0.ln() - t.ln()) + alpha * (l0 - t),
                        -beta / t - alpha,
                    )
                };
                solve_decreasing(h, l0, u.ln()).exp()
            }
            Self::Lognormal { mu, sigma } => {
                if u <= 0.0 {
                    return f64::INFINITY;
                }
                if u >= 1.0 {
                    return 0.0;
                }
                let h = |t: f64| {
                    let z = (t - mu) / sigma;
                    let q = upper_normal_tail(z);
                    (q.ln(), -normal_density(z) / (sigma * q))
                };
                // Bracket in units of sigma around the median.
                let target = u.ln();
                let mut lo = mu - sigma;
                while h(lo).0 < target {
                    lo -= 4.0 * sigma;
                }
                let mut hi = mu + sigma;
                while h(hi).0 > target {
                    hi += 4.0 * sigma;
                }
                solve_bracketed(&h, lo, hi, target).exp()
            }
            Self::PointMass { value } => value,
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                if negate {
                    if u >= 1.0 {
                        shift - law.support().1
                    } else {
                        shift - law.lower_quantile_unchecked(u)
                    }
                } else {
                    law.quantile_unchecked(u) - shift
                }
            }
        }
    }

    /// The `x` with `P(X <= x) = p`, accurate for tiny `p`.
    pub fn lower_quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!("probability {p} is outside (0, 1)")));
        }
        Ok(self.lower_quantile_unchecked(p))
    }

    fn lower_quantile_unchecked(&self, p: f64) -> f64 {
        match *self {
            Self::Lognormal { mu, .. } => (2.0 * mu - self.quantile_unchecked(p).ln()).exp(),
            Self::PointMass { value } => value,
            Self::NegatedShifted {
                ref law,
                shift,
                negate,
            } => {
                if negate {
                    shift - law.quantile_unchecked(p)
                } else {
                    law.lower_quantile_unchecked(p) - shift
                }
            }
            _ => self.quantile_unchecked(1.0 - p),
        }
    }

    /// Inverse-transform draw: exactly one deviate is consumed per call.
    pub fn sample<R: UniformSource + ?Sized>(&self, stream: &mut R) -> f64 {
        let u = stream.uniform();
        self.quantile_unchecked(u)
    }

    /// Regular-variation index of the right tail, when the family is
    /// regularly varying.
    pub fn rv_index(&self) -> Option<f64> {
        match *self {
            Self::Pareto { alpha, .. }
            | Self::LogPowerPareto { alpha, .. }
            | Self::LogFactorPareto { alpha, .. } => Some(alpha),
            Self::SuperHeavyLog { .. } => Some(0.0),
            Self::NegatedShifted {
                ref law,
                negate: false,
                ..
            } => law.rv_index(),
            _ => None,
        }
    }

    /// Shape of `P(X > x)`.
    pub fn upper_tail_shape(&self) -> TailShape {
        match *self {
            Self::Pareto { alpha, x0 } => TailShape {
                index: alpha,
                log_power: 0.0,
                constant: x0.powf(alpha),
            },
            Self::LogPowerPareto {
                alpha,
                gamma,
                x0,
                sv_scale,
            } => TailShape {
                index: alpha,
                log_power: gamma - 1.0,
                constant: LogPower::new(alpha, gamma, x0, sv_scale).ell(),
            },
            Self::LogFactorPareto { alpha, beta, x0 } => TailShape {
                index: alpha,
                log_power: -beta,
                constant: x0.ln().powf(beta) * x0.powf(alpha),
            },
            Self::SuperHeavyLog { beta, x0 } => TailShape {
                index: 0.0,
                log_power: -beta,
                constant: x0.ln().powf(beta),
            },
            Self::Lognormal { .. } | Self::PointMass { .. } => TailShape::light(),
            Self::NegatedShifted {
                ref law, negate, ..
            } => {
                if negate {
                    TailShape::light()
                } else {
                    law.upper_tail_shape()
                }
            }
        }
    }

    /// Shape of `P(|X| > x)`.
    pub fn abs_tail_shape(&self) -> TailShape {
        match self {
            Self::NegatedShifted { law, .. } => law.abs_tail_shape(),
            _ => self.upper_tail_shape(),
        }
    }

    /// Log-power parameters `(alpha, gamma, ell)` of the families covered by
    /// the product-tail formula; Pareto is the case `gamma = 1`.
    pub fn log_power_form(&self) -> Option<LogPowerForm> {
        match *self {
            Self::Pareto { alpha, x0 } => Some(LogPowerForm {
                alpha,
                gamma: 1.0,
                ell: x0.powf(alpha),
            }),
            Self::LogPowerPareto { alpha, gamma, .. } => Some(LogPowerForm {
                alpha,
                gamma,
                ell: self.upper_tail_shape().constant,
            }),
            _ => None,
        }
    }

    /// The index `alpha` for which `ln Y` is certified to lie in the
    /// convolution-equivalent class `S(alpha)`.
    ///
    /// `P(ln Y > t) = c t^{-beta} e^{-alpha t}` with `beta > 1` is in
    /// `S(alpha)`; for `alpha = 0` a Pareto tail in `t` is subexponential.
    pub fn log_class_index(&self) -> Option<f64> {
        match *self {
            Self::LogFactorPareto { alpha, .. } => Some(alpha),
            Self::SuperHeavyLog { .. } => Some(0.0),
            _ => None,
        }
    }

    /// `E (X)_+^p`, with `(z)_+^0 = 1{z > 0}`. Returns `+∞` when the moment
    /// diverges.
    pub fn alpha_moment(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) {
            return Err(domain(format!("moment order {p} must be non-negative")));
        }
        if p == 0.0 {
            return Ok(self.prob_positive());
        }
        if !self.upper_tail_shape().moment_finite(p) {
            return Ok(f64::INFINITY);
        }
        let closed = match *self {
            Self::Pareto { alpha, x0 } => Some(x0.powf(p) * alpha / (alpha - p)),
            Self::LogFactorPareto { alpha, beta, x0 } if p == alpha => {
                Some(x0.powf(alpha) * (1.0 + alpha * x0.ln() / (beta - 1.0)))
            }
            Self::Lognormal { mu, sigma } => Some((p * mu + 0.5 * p * p * sigma * sigma).exp()),
            Self::PointMass { value } => Some(if value > 0.0 { value.powf(p) } else { 0.0 }),
            _ => self.atom().map(|v| if v > 0.0 { v.powf(p) } else { 0.0 }),
        };
        match closed {
            Some(v) => Ok(v),
            None => Ok(self.alpha_moment_by_quadrature(p)?.value),
        }
    }

    /// `E (X)_+^p = ∫_0^∞ p x^{p-1} P(X > x) dx` by adaptive quadrature in
    /// `t = ln x`.
    pub fn alpha_moment_by_quadrature(&self, p: f64) -> Result<quadrature::Integral> {
        if !(p > 0.0) {
            return Err(domain("quadrature moments need a positive order"));
        }
        if !self.upper_tail_shape().moment_finite(p) {
            return Err(domain(format!(
                "E X_+^{p} diverges for the {} family",
                self.family()
            )));
        }
        let tol = Tolerance::new(1e-300, 1e-11);
        let (lo, hi) = self.support();
        if hi <= 0.0 {
            return Ok(quadrature::Integral {
                value: 0.0,
                error: 0.0,
                evaluations: 0,
                converged: true,
            });
        }
        let f = |t: f64| {
            let s = self.survival(t.exp());
            if s == 0.0 {
                0.0
            } else {
                p * (p * t + s.ln()).exp()
            }
        };
        let mut total = quadrature::Integral {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
        let mut add = |r: quadrature::Integral| {
            total.value += r.value;
            total.error += r.error;
            total.evaluations += r.evaluations;
            total.converged &= r.converged;
        };
        let t_hi = if hi.is_finite() { Some(hi.ln()) } else { None };
        let t_lo = if lo > 0.0 {
            add(quadrature::Integral {
                value: lo.powf(p),
                error: 0.0,
                evaluations: 0,
                converged: true,
            });
            lo.ln()
        } else {
            // Below the centre the integrand is at most p e^{pt}.
            let centre = t_hi.map_or(0.0, |h| h.min(0.0));
            add(quadrature::integrate_lower_tail(f, centre, tol));
            centre
        };
        match t_hi {
            Some(h) => add(quadrature::integrate(f, t_lo, h, tol)),
            None => add(quadrature::integrate_upper_tail(f, t_lo, tol)),
        }
        Ok(total)
    }
}

/// `E Y` of `LogFactorPareto(1, 2, e)`, used in several tests.
pub const LOG_FACTOR_UNIT_MEAN: f64 = 2.0 * E;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{FixedUniforms, StreamFactory};

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn catalog() -> Vec<TailLaw> {
        vec![
            TailLaw::pareto(2.0, 1.0).unwrap(),
            TailLaw::pareto(0.7, 3.0).unwrap(),
            TailLaw::log_power_pareto(2.0, 2.0, E, 1.0).unwrap(),
            TailLaw::log_power_pareto(1.0, 0.5, 2.0, 1.0).unwrap(),
            TailLaw::log_power_pareto(1.5, 3.0, 1.5, 2.0).unwrap(),
            TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap(),
            TailLaw::log_factor_pareto(0.5, 3.0, 2.0).unwrap(),
            TailLaw::super_heavy_log(2.0, E).unwrap(),
            TailLaw::lognormal(0.0, 1.0).unwrap(),
            TailLaw::lognormal(1.0, 0.5).unwrap(),
        ]
    }

    #[test]
    fn survival_examples() {
        let p = TailLaw::pareto(2.0, 1.0).unwrap();
        assert_eq!(p.survival(2.0), 0.25);
        for law in catalog() {
            let (lo, _) = law.support();
            assert_eq!(law.survival(lo), 1.0, "{law:?}");
        }
        let lf = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let x = E * E;
        let expected = 0.25 * (-1.0f64).exp();
        assert!(rel(lf.survival(x), expected) < 1e-14);
        assert!((lf.survival(x) - 0.09197).abs() < 1e-5);
    }

    #[test]
    fn density_examples() {
        let p = TailLaw::pareto(2.0, 1.0).unwrap();
        assert!((p.density(2.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(p.density(0.5).unwrap(), 0.0);
        assert!(matches!(
            TailLaw::point_mass(1.0).unwrap().density(1.0),
            Err(Error::UnsupportedFamily { .. })
        ));
        // Central finite difference of the survival function.
        let lf = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let x = E * E;
        let h = 1e-5 * x;
        let fd = (lf.survival(x - h) - lf.survival(x + h)) / (2.0 * h);
        assert!(rel(lf.density(x).unwrap(), fd) < 1e-6);
    }

    #[test]
    fn densities_match_finite_differences_everywhere() {
        for law in catalog() {
            let (lo, _) = law.support();
            let start = lo.max(1e-3) * 1.01;
            for k in 0..40 {
                let x = start * 1.37f64.powi(k);
                let h = 1e-6 * x;
                let fd = if law.survival(x) < 0.5 {
                    (law.survival(x - h) - law.survival(x + h)) / (2.0 * h)
                } else {
                    (law.cdf(x + h) - law.cdf(x - h)) / (2.0 * h)
                };
                let d = law.density(x).unwrap();
                if d > 1e-250 {
                    assert!(rel(d, fd) < 1e-5, "{law:?} x={x} d={d} fd={fd}");
                }
            }
        }
    }

    #[test]
    fn densities_integrate_to_one() {
        let tol = Tolerance::new(1e-300, 1e-12);
        for law in catalog() {
            let (lo, _) = law.support();
            let mass = if lo > 0.0 {
                quadrature::integrate_upper_tail(
                    |t| {
                        let x = t.exp();
                        let d = law.density(x).unwrap();
                        if d == 0.0 { 0.0 } else { d * x }
                    },
                    lo.ln(),
                    tol,
                )
            } else {
                let f = |t: f64| {
                    let x = t.exp();
                    let d = law.density(x).unwrap();
                    if d == 0.0 { 0.0 } else { d * x }
                };
                let a = quadrature::integrate_lower_tail(f, 0.0, tol);
                let b = quadrature::integrate_upper_tail(f, 0.0, tol);
                quadrature::Integral {
                    value: a.value + b.value,
                    ..a
                }
            };
            assert!((mass.value - 1.0).abs() < 1e-8, "{law:?}: {}", mass.value);
        }
    }

    #[test]
    fn quantile_examples() {
        let p = TailLaw::pareto(2.0, 1.0).unwrap();
        assert!((p.quantile(0.25).unwrap() - 2.0).abs() < 1e-15);
        for law in catalog() {
            assert_eq!(law.quantile(1.0).unwrap(), law.support().0);
        }
        assert!(p.quantile(0.0).is_err());
        assert!(p.quantile(1.5).is_err());
        let lp = TailLaw::log_power_pareto(2.0, 2.0, E, 1.0).unwrap();
        let x = lp.quantile(1e-6).unwrap();
        assert!(rel(lp.survival(x), 1e-6) < 1e-12);
    }

    #[test]
    fn quantile_inverts_survival_on_log_grid() {
        for law in catalog() {
            let (lo, _) = law.support();
            let start = if lo > 0.0 { lo } else { 1e-3 };
            for k in 1..=100 {
                let x = start * (1.0 + 0.35 * k as f64).powf(3.0);
                let s = law.survival(x);
                if s <= 1e-300 || s >= 1.0 {
                    continue;
                }
                let back = law.quantile(s).unwrap();
                // Near the lower end the level carries too few significant digits.
                let ok = rel(back, x) < 1e-9 || (law.survival(back) - s).abs() < 1e-15;
                assert!(ok, "{law:?}: x={x} back={back}");
            }
        }
    }

    #[test]
    fn log_power_normalization() {
        // gamma < 1 keeps x1 = x0; sv_scale > 1 moves the support start up.
        let law = TailLaw::log_power_pareto(1.5, 3.0, 1.5, 2.0).unwrap();
        let (start, _) = law.support();
        let x1: f64 = (2.0f64 / 1.5).exp();
        assert!(start > x1);
        assert!((law.survival(start) - 1.0).abs() < 1e-12);
        let unit = TailLaw::log_power_pareto(1.0, 1.0, 1.0, 1.0).unwrap();
        let pareto = TailLaw::pareto(1.0, 1.0).unwrap();
        for x in [1.5, 10.0, 1e6] {
            assert!(rel(unit.survival(x), pareto.survival(x)) < 1e-14);
        }
        assert!(TailLaw::log_power_pareto(1.0, 0.5, 1.0, 1.0).is_err());
        assert!(TailLaw::log_power_pareto(1.0, 2.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn regular_variation_on_geometric_grid() {
        for law in catalog() {
            let Some(alpha) = law.rv_index() else { continue };
            for t in [2.0f64, 10.0] {
                let target = t.powf(-alpha);
                let mut prev = f64::INFINITY;
                for k in [1e2f64, 1e8, 1e32, 1e128] {
                    let x = law.support().0 * k;
                    let err = (law.survival(x * t) / law.survival(x) - target).abs();
                    assert!(err <= prev * (1.0 + 1e-9) + 1e-13, "{law:?} t={t}");
                    prev = err;
                }
                assert!(prev / target < 0.05, "{law:?} t={t} err={prev}");
            }
        }
    }

    #[test]
    fn slowly_varying_part_tends_to_constant() {
        for law in catalog() {
            let shape = law.upper_tail_shape();
            if shape.is_light() {
                continue;
            }
            let x: f64 = 1e150;
            let sv = x.ln().powf(shape.log_power) * x.powf(-shape.index);
            assert!(rel(law.survival(x) / sv, shape.constant) < 1e-9, "{law:?}");
        }
    }

    #[test]
    fn sampling_examples() {
        let mut fixed = FixedUniforms::new(vec![0.5]);
        assert_eq!(TailLaw::pareto(1.0, 1.0).unwrap().sample(&mut fixed), 2.0);
        let factory = StreamFactory::new(1);
        let mut s = factory.stream(0);
        let pm = TailLaw::point_mass(3.0).unwrap();
        assert!((0..10).all(|_| pm.sample(&mut s) == 3.0));
    }

    #[test]
    fn empirical_survival_passes_ks_bound() {
        let factory = StreamFactory::new(99);
        let n = 100_000;
        // 1% critical value of the Kolmogorov–Smirnov statistic.
        let crit = 1.63 / (n as f64).sqrt();
        for law in catalog() {
            let mut s = factory.stream(law.family().len() as u64);
            let mut xs: Vec<f64> = (0..n).map(|_| law.sample(&mut s)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let d = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let cdf = 1.0 - law.survival(x);
                    (cdf - i as f64 / n as f64)
                        .abs()
                        .max(((i + 1) as f64 / n as f64 - cdf).abs())
                })
                .fold(0.0, f64::max);
            assert!(d < crit, "{law:?}: D = {d}");
        }
    }

    #[test]
    fn log_factor_sample_mean() {
        let law = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let factory = StreamFactory::new(2024);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for i in 0..n {
            let x = law.sample(&mut factory.stream(i));
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let stderr = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - LOG_FACTOR_UNIT_MEAN).abs() < 3.0 * stderr, "{mean} ± {stderr}");
    }

    #[test]
    fn alpha_moment_examples() {
        let p = TailLaw::pareto(2.0, 1.0).unwrap();
        assert_eq!(p.alpha_moment(1.0).unwrap(), 2.0);
        assert_eq!(p.alpha_moment(2.0).unwrap(), f64::INFINITY);
        let lf = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let closed = lf.alpha_moment(1.0).unwrap();
        assert!(rel(closed, 2.0 * E) < 1e-15);
        assert!((closed - 5.43656).abs() < 1e-5);
        let quad = lf.alpha_moment_by_quadrature(1.0).unwrap();
        assert!(rel(quad.value, closed) < 1e-9);
        assert_eq!(TailLaw::super_heavy_log(2.0, E).unwrap().alpha_moment(0.1).unwrap(), f64::INFINITY);
        assert_eq!(
            TailLaw::log_power_pareto(1.0, 2.0, E, 1.0).unwrap().alpha_moment(1.0).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn closed_form_moments_agree_with_quadrature() {
        let cases = [
            (TailLaw::pareto(2.0, 1.0).unwrap(), 1.0),
            (TailLaw::pareto(3.0, 2.0).unwrap(), 0.5),
            (TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap(), 1.0),
            (TailLaw::log_factor_pareto(0.5, 3.0, 2.0).unwrap(), 0.5),
            (TailLaw::lognormal(0.0, 1.0).unwrap(), 1.0),
            (TailLaw::lognormal(0.3, 0.5).unwrap(), 2.5),
        ];
        for (law, p) in cases {
            let closed = law.alpha_moment(p).unwrap();
            let quad = law.alpha_moment_by_quadrature(p).unwrap();
            assert!(rel(quad.value, closed) < 1e-6, "{law:?} p={p}: {closed} vs {}", quad.value);
        }
    }

    #[test]
    fn shifted_and_negated_laws() {
        let base = TailLaw::lognormal(0.0, 1.0).unwrap();
        let minus = TailLaw::negated_shifted(base.clone(), 1.0, false).unwrap();
        let flipped = TailLaw::negated_shifted(base.clone(), 1.0, true).unwrap();
        assert!((minus.survival(0.5) - base.survival(1.5)).abs() < 1e-15);
        assert!((flipped.survival(0.5) - (1.0 - base.survival(0.5))).abs() < 1e-15);
        assert_eq!(flipped.support(), (f64::NEG_INFINITY, 1.0));
        let x = flipped.quantile(0.3).unwrap();
        assert!((flipped.survival(x) - 0.3).abs() < 1e-12);
        // E (1 - L)_+ for L lognormal by quadrature is strictly below 1.
        let m = flipped.alpha_moment(1.0).unwrap();
        assert!(m > 0.0 && m < 1.0);
        let atom = TailLaw::negated_shifted(TailLaw::point_mass(3.0).unwrap(), 1.0, true).unwrap();
        assert_eq!(atom.atom(), Some(-2.0));
        assert_eq!(atom.survival(-2.0), 0.0);
        assert_eq!(atom.survival(-2.5), 1.0);
        assert_eq!(atom.quantile(0.4).unwrap(), -2.0);
        assert_eq!(atom.alpha_moment(1.0).unwrap(), 0.0);
    }

    #[test]
    fn tail_shape_relations() {
        let y = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap().upper_tail_shape();
        let x = TailLaw::log_factor_pareto(1.0, 3.0, E).unwrap().upper_tail_shape();
        let light = TailLaw::lognormal(0.0, 1.0).unwrap().upper_tail_shape();
        assert!(x.negligible_against(&y));
        assert!(light.negligible_against(&y));
        assert!(!y.negligible_against(&x));
        assert_eq!(x.ratio_limit(&y), 0.0);
        assert_eq!(y.ratio_limit(&y), 1.0);
        assert_eq!(y.ratio_limit(&x), f64::INFINITY);
    }

    #[test]
    fn config_round_trip() {
        let law: TailLaw =
            serde_json::from_str(r#"{"family":"LogFactorPareto","alpha":1,"beta":2,"x0":2.718281828459045}"#)
                .unwrap();
        assert_eq!(law, TailLaw::LogFactorPareto { alpha: 1.0, beta: 2.0, x0: std::f64::consts::E });
        let bad = serde_json::from_str::<TailLaw>(r#"{"family":"Pareto","alpha":1,"x0":1,"beta":2}"#);
        assert!(bad.is_err());
        let nested: TailLaw = serde_json::from_str(
            r#"{"family":"NegatedShifted","law":{"family":"PointMass","value":2},"shift":1}"#,
        )
        .unwrap();
        assert_eq!(nested.atom(), Some(1.0));
    }
}
