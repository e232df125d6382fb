//! Exact tail probabilities by nested adaptive quadrature.
//!
//! The innermost variable is always integrated in closed form through its
//! survival function. Every other variable is integrated against its density,
//! in `ln |z|` away from the origin and linearly on `[-1, 1]`. Where the
//! integrand is known to be constant beyond a point the remaining mass is
//! added exactly; otherwise an unbounded support is truncated at mass
//! [`TRUNCATION_MASS`] and that mass is added to the error bound.

use std::cell::Cell;

use crate::distributions::TailLaw;
use crate::error::{domain, Error, Result};
use crate::model::ModelSpec;
use crate::quadrature::{integrate_partition, Tolerance, DEFAULT_MAX_SEGMENTS};

/// Mass discarded when an unbounded support has to be truncated.
pub const TRUNCATION_MASS: f64 = 1e-30;

/// Which tail of the model is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Which {
    S,
    M,
}

/// A probability with an error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    pub error: f64,
}

impl OracleValue {
    fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }
}

/// Largest horizon handled by [`model_tail`].
pub const MAX_MODEL_HORIZON: usize = 2;

/// Default accuracy: the requested tails are often below 1e-8, so the
/// target is relative.
pub fn default_tolerance() -> Tolerance {
    Tolerance::new(1e-300, 1e-10)
}

#[derive(Clone, Copy)]
struct Cut {
    at: f64,
    value: f64,
}

/// Tracks the worst relative error reported by nested integrals.
#[derive(Default)]
struct Inner {
    worst_rel: Cell<f64>,
}

impl Inner {
    fn take(&self, r: OracleValue) -> f64 {
        if r.value > 0.0 {
            self.worst_rel.set(self.worst_rel.get().max(r.error / r.value));
        }
        r.value
    }
}

#[derive(Clone, Copy)]
enum Var {
    Linear,
    Log,
    NegLog,
}

impl Var {
    fn to_z(self, s: f64) -> (f64, f64) {
        match self {
            Var::Linear => (s, 1.0),
            Var::Log => {
                let z = s.exp();
                (z, z)
            }
            Var::NegLog => {
                let z = s.exp();
                (-z, z)
            }
        }
    }

    fn coordinate_of(self, z: f64) -> f64 {
        match self {
            Var::Linear => z,
            Var::Log => z.ln(),
            Var::NegLog => (-z).ln(),
        }
    }
}

/// `E g(Z)` for `g` with values in `[0, 1]`.
///
/// `g` must equal `lo.value` below `lo.at` and `hi.value` above `hi.at`
/// whenever those cuts are given. `breaks` lists interior kinks of `g`.
fn expect<G: FnMut(f64) -> f64>(
    law: &TailLaw,
    mut g: G,
    breaks: &[f64],
    lo: Option<Cut>,
    hi: Option<Cut>,
    tol: Tolerance,
) -> OracleValue {
    if let Some(c) = law.atom() {
        return OracleValue::exact(g(c));
    }
    let (s_lo, s_hi) = law.support();
    let mut value = 0.0;
    let mut error = 0.0;
    let zu = match hi {
        Some(c) => {
            let at = c.at.clamp(s_lo, s_hi);
            value += c.value * law.survival(at);
            at
        }
        None if s_hi.is_finite() => s_hi,
        None => {
            error += TRUNCATION_MASS;
            law.quantile(TRUNCATION_MASS).expect("valid level")
        }
    };
    let zl = match lo {
        Some(c) => {
            let at = c.at.clamp(s_lo, s_hi);
            value += c.value * law.cdf(at);
            at
        }
        None if s_lo.is_finite() => s_lo,
        None => {
            error += TRUNCATION_MASS;
            law.lower_quantile(TRUNCATION_MASS).expect("valid level")
        }
    };
    if zl >= zu {
        return OracleValue { value, error };
    }

    let mut pieces: Vec<(Var, f64, f64)> = Vec::new();
    let mut edges = vec![zl];
    edges.extend([-1.0, 0.0, 1.0].into_iter().filter(|&e| e > zl && e < zu));
    edges.push(zu);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let var = if b <= 1.0 && a >= -1.0 {
            Var::Linear
        } else if a >= 1.0 {
            Var::Log
        } else {
            Var::NegLog
        };
        pieces.push((var, a, b));
    }

    for (var, a, b) in pieces {
        let (sa, sb) = {
            let (u, v) = (var.coordinate_of(a), var.coordinate_of(b));
            (u.min(v), u.max(v))
        };
        let mut points = vec![sa];
        let mut interior: Vec<f64> = breaks
            .iter()
            .filter(|&&z| z > a && z < b)
            .map(|&z| var.coordinate_of(z))
            .collect();
        if !matches!(var, Var::Linear) {
            let pieces = ((sb - sa) / 4.0).ceil().clamp(1.0, 8.0) as usize;
            interior.extend((1..pieces).map(|k| sa + (sb - sa) * k as f64 / pieces as f64));
        }
        interior.sort_by(|p, q| p.partial_cmp(q).unwrap());
        points.extend(interior);
        points.push(sb);
        points.dedup();
        let r = integrate_partition(
            |s| {
                let (z, jac) = var.to_z(s);
                let d = law.density(z).unwrap_or(0.0);
                if d == 0.0 {
                    0.0
                } else {
                    d * jac * g(z)
                }
            },
            &points,
            tol,
            DEFAULT_MAX_SEGMENTS,
        );
        value += r.value;
        error += r.error;
    }
    OracleValue { value, error }
}

/// `P(Y t > x)` for a positive `Y` and a fixed real `t`.
fn scaled_tail(y: &TailLaw, t: f64, x: f64) -> f64 {
    if t > 0.0 {
        y.survival(x / t)
    } else if t == 0.0 {
        if x < 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - y.survival_closed(x / t)
    }
}

fn heaviness_key(law: &TailLaw) -> (f64, f64) {
    let s = law.upper_tail_shape();
    (-s.index, s.log_power)
}

/// `P(Π Z_i > x)` for at most three independent factors.
///
/// All factors but one must have positive support; the remaining one may
/// take any sign. The heaviest factor is integrated innermost.
pub fn product_tail(laws: &[TailLaw], x: f64) -> Result<OracleValue> {
    product_tail_with(laws, x, default_tolerance())
}

pub fn product_tail_with(laws: &[TailLaw], x: f64, tol: Tolerance) -> Result<OracleValue> {
    if laws.is_empty() {
        return Err(domain("product of zero factors"));
    }
    if laws.len() > 3 {
        return Err(Error::UnsupportedSize(format!(
            "exact product tails take at most 3 factors, got {}",
            laws.len()
        )));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(format!("product tails need a positive finite threshold, got {x}")));
    }
    let signed = laws.iter().filter(|l| !(l.support().0 > 0.0)).count();
    if signed > 1 {
        return Err(domain("at most one factor may take non-positive values"));
    }
    let mut x = x;
    let mut rest: Vec<&TailLaw> = Vec::new();
    for law in laws {
        match law.atom() {
            Some(c) if c > 0.0 => x /= c,
            Some(_) => return Ok(OracleValue::exact(0.0)),
            None => rest.push(law),
        }
    }
    if rest.is_empty() {
        return Ok(OracleValue::exact(if 1.0 > x { 1.0 } else { 0.0 }));
    }
    // Lightest factor outermost.
    rest.sort_by(|a, b| heaviness_key(a).partial_cmp(&heaviness_key(b)).unwrap());
    Ok(nested_product(&rest, x, tol))
}

fn nested_product(laws: &[&TailLaw], x: f64, tol: Tolerance) -> OracleValue {
    let (outer, inner) = laws.split_first().expect("non-empty");
    if inner.is_empty() {
        return OracleValue::exact(outer.survival(x));
    }
    let floor: f64 = inner.iter().map(|l| l.support().0).product();
    let cut = x / floor;
    let tracker = Inner::default();
    let inner_tol = tol.halved().halved();
    let mut r = expect(
        outer,
        |z| tracker.take(nested_product(inner, x / z, inner_tol)),
        &[cut],
        Some(Cut { at: 0.0, value: 0.0 }),
        Some(Cut { at: cut, value: 1.0 }),
        tol,
    );
    r.error += tracker.worst_rel.get() * r.value;
    r
}

/// `P(X Π Y_j > x)` with `X` of any sign and positive `Y_j`; used for the
/// loss-weighted base tails of the expansions.
pub fn signed_product_tail(x_law: &TailLaw, y_laws: &[TailLaw], x: f64) -> Result<OracleValue> {
    let mut laws = vec![x_law.clone()];
    laws.extend_from_slice(y_laws);
    product_tail(&laws, x)
}

/// `P(S_n > x)` or `P(M_n > x)` for horizons up to 2 with independent losses.
pub fn model_tail(spec: &ModelSpec, which: Which, x: f64) -> Result<OracleValue> {
    model_tail_with(spec, which, x, default_tolerance())
}

pub fn model_tail_with(spec: &ModelSpec, which: Which, x: f64, tol: Tolerance) -> Result<OracleValue> {
    let n = spec.horizon();
    if n > MAX_MODEL_HORIZON {
        return Err(Error::UnsupportedSize(format!(
            "exact model tails are available for horizons up to {MAX_MODEL_HORIZON}, got {n}"
        )));
    }
    if !spec.has_independent_losses() {
        return Err(domain("exact model tails require independent losses"));
    }
    if !x.is_finite() {
        return Err(domain(format!("threshold {x} must be finite")));
    }
    if which == Which::M && x < 0.0 {
        return Ok(OracleValue::exact(1.0));
    }
    let y1 = &spec.y_laws()[0];
    let x1 = &spec.x_laws()[0];
    let lo1 = y1.support().0;
    // `P(Y_1 t > x)` is 0 below and 1 above these values of t.
    let t_zero = 0.0f64.min(x / lo1);
    let t_one = 0.0f64.max(x / lo1);
    if n == 1 {
        return Ok(expect(
            x1,
            |a| scaled_tail(y1, a, x),
            &[0.0, x / lo1],
            Some(Cut { at: t_zero, value: 0.0 }),
            Some(Cut { at: t_one, value: 1.0 }),
            tol,
        ));
    }
    let x2 = &spec.x_laws()[1];
    let y2 = &spec.y_laws()[1];
    let lo2 = y2.support().0;
    let mid_tol = tol.halved().halved();
    let inner_tol = mid_tol.halved().halved();
    let tracker = Inner::default();

    // E over Y_2 of P(Y_1 (a + Y_2 b) > x).
    let over_y2 = |a: f64, b: f64| -> OracleValue {
        if b == 0.0 {
            return OracleValue::exact(scaled_tail(y1, a, x));
        }
        let y_zero = (t_zero - a) / b;
        let y_one = (t_one - a) / b;
        let (lo, hi) = if b > 0.0 {
            (Cut { at: y_zero, value: 0.0 }, Cut { at: y_one, value: 1.0 })
        } else {
            (Cut { at: y_one, value: 1.0 }, Cut { at: y_zero, value: 0.0 })
        };
        let kinks = [(0.0 - a) / b, (x / lo1 - a) / b];
        expect(y2, |y| scaled_tail(y1, a + y * b, x), &kinks, Some(lo), Some(hi), inner_tol)
    };

    let over_x2 = |a: f64| -> OracleValue {
        let kinks = [0.0, (x / lo1 - a) / lo2, -a / lo2];
        let hi = Cut {
            at: 0.0f64.max((t_one - a) / lo2),
            value: 1.0,
        };
        let lo = match which {
            Which::S => Cut {
                at: 0.0f64.min((t_zero - a) / lo2),
                value: 0.0,
            },
            Which::M => Cut {
                at: 0.0,
                value: scaled_tail(y1, a, x),
            },
        };
        let r = expect(
            x2,
            |b| {
                let b = match which {
                    Which::S => b,
                    Which::M => b.max(0.0),
                };
                tracker.take(over_y2(a, b))
            },
            &kinks,
            Some(lo),
            Some(hi),
            mid_tol,
        );
        OracleValue {
            value: r.value,
            error: r.error,
        }
    };

    let mid_err = Cell::new(0.0f64);
    let mut r = expect(
        x1,
        |a| {
            let v = over_x2(a);
            if v.value > 0.0 {
                mid_err.set(mid_err.get().max(v.error / v.value));
            }
            v.value
        },
        &[0.0, x / lo1],
        None,
        None,
        tol,
    );
    r.error += (mid_err.get() + tracker.worst_rel.get()) * r.value;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn unit_pareto() -> TailLaw {
        TailLaw::pareto(1.0, 1.0).unwrap()
    }

    #[test]
    fn single_factor_is_survival() {
        let law = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let r = product_tail(std::slice::from_ref(&law), 50.0).unwrap();
        assert_eq!(r.value, law.survival(50.0));
    }

    #[test]
    fn pareto_pair_matches_convolution() {
        let laws = [unit_pareto(), unit_pareto()];
        for t in [1.0f64, 10.0, 20.0] {
            let x = t.exp();
            let exact = (1.0 + t) / x;
            let r = product_tail(&laws, x).unwrap();
            assert!(rel(r.value, exact) < 1e-8, "t={t}: {} vs {exact}", r.value);
            assert!(r.error < 1e-8 * exact);
        }
        let r = product_tail(&laws, 20f64.exp()).unwrap();
        assert!((r.value - 4.32842e-8).abs() < 1e-12);
    }

    #[test]
    fn pareto_triple_matches_closed_form() {
        // P(Z1 Z2 Z3 > x) = x^{-1}(1 + t + t^2/2) for unit Pareto factors.
        let laws = [unit_pareto(), unit_pareto(), unit_pareto()];
        for t in [2.0f64, 15.0] {
            let exact = (1.0 + t + 0.5 * t * t) * (-t).exp();
            let r = product_tail(&laws, t.exp()).unwrap();
            assert!(rel(r.value, exact) < 1e-8, "{} vs {exact}", r.value);
        }
    }

    #[test]
    fn size_and_domain_errors() {
        let laws = vec![unit_pareto(); 4];
        assert!(matches!(product_tail(&laws, 10.0), Err(Error::UnsupportedSize(_))));
        assert!(product_tail(&laws[..2], -1.0).is_err());
        let spec = ModelSpec::new(
            vec![TailLaw::point_mass(1.0).unwrap(); 3],
            vec![unit_pareto(); 3],
        )
        .unwrap();
        assert!(matches!(model_tail(&spec, Which::S, 10.0), Err(Error::UnsupportedSize(_))));
    }

    #[test]
    fn point_mass_factors_rescale_the_threshold() {
        let y = TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap();
        let with = product_tail(&[y.clone(), TailLaw::point_mass(3.0).unwrap(), y.clone()], 600.0).unwrap();
        let without = product_tail(&[y.clone(), y], 200.0).unwrap();
        assert!(rel(with.value, without.value) < 1e-14);
    }

    #[test]
    fn one_period_model() {
        let spec = ModelSpec::new(vec![TailLaw::point_mass(1.0).unwrap()], vec![TailLaw::pareto(2.0, 1.0).unwrap()]).unwrap();
        let r = model_tail(&spec, Which::S, 10.0).unwrap();
        assert!((r.value - 0.01).abs() < 1e-15);
        assert_eq!(model_tail(&spec, Which::M, -3.0).unwrap().value, 1.0);
        // Lognormal loss against a Pareto discount: E min(1, (X/x)^2) in closed form.
        let x_law = TailLaw::lognormal(0.0, 1.0).unwrap();
        let spec = ModelSpec::new(vec![x_law.clone()], vec![TailLaw::pareto(2.0, 1.0).unwrap()]).unwrap();
        let x: f64 = 5.0;
        let r = model_tail(&spec, Which::S, x).unwrap();
        let z = x.ln();
        let phi = |t: f64| 0.5 * libm::erfc(-t / std::f64::consts::SQRT_2);
        let exact = (1.0 - phi(z)) + (2.0 - 2.0 * z).exp() * phi(z - 2.0);
        assert!(rel(r.value, exact) < 1e-9, "{} vs {exact}", r.value);
    }

    #[test]
    fn negative_thresholds_for_the_sum() {
        // X = -1, Y = Pareto(1, 1): P(-Y > x) = P(Y < -x).
        let spec = ModelSpec::new(vec![TailLaw::point_mass(-1.0).unwrap()], vec![unit_pareto()]).unwrap();
        let r = model_tail(&spec, Which::S, -4.0).unwrap();
        assert!((r.value - 0.75).abs() < 1e-15);
        assert_eq!(model_tail(&spec, Which::M, 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn two_period_point_masses() {
        // S_2 = Y1 (1 + Y2), unit Pareto: compare with a one-dimensional integral.
        let spec = ModelSpec::new(
            vec![TailLaw::point_mass(1.0).unwrap(); 2],
            vec![unit_pareto(); 2],
        )
        .unwrap();
        let x = 1e4;
        let r = model_tail(&spec, Which::S, x).unwrap();
        let direct = crate::quadrature::integrate_upper_tail(
            |t: f64| {
                let y2 = t.exp();
                y2.recip() * (x / (1.0 + y2)).recip().min(1.0)
            },
            0.0,
            Tolerance::new(1e-300, 1e-12),
        );
        assert!(rel(r.value, direct.value) < 1e-9, "{} vs {}", r.value, direct.value);
        let m = model_tail(&spec, Which::M, x).unwrap();
        assert!(rel(m.value, r.value) < 1e-12);
    }

    #[test]
    fn sum_is_below_maximum() {
        let spec = ModelSpec::new(
            vec![TailLaw::negated_shifted(TailLaw::lognormal(0.0, 1.0).unwrap(), 1.2, false).unwrap(); 2],
            vec![TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap(); 2],
        )
        .unwrap();
        let tol = Tolerance::new(1e-300, 1e-8);
        for x in [1.0, 30.0, 1e3] {
            let s = model_tail_with(&spec, Which::S, x, tol).unwrap();
            let m = model_tail_with(&spec, Which::M, x, tol).unwrap();
            assert!(s.value <= m.value + s.error + m.error, "x={x}");
            assert!(m.value > s.value);
        }
    }

    #[test]
    fn refinement_stays_within_reported_error() {
        let spec = ModelSpec::new(
            vec![TailLaw::lognormal(0.0, 1.0).unwrap(); 2],
            vec![TailLaw::log_factor_pareto(1.0, 2.0, E).unwrap(); 2],
        )
        .unwrap();
        let x = 1e4;
        let tol = Tolerance::new(1e-300, 1e-8);
        let a = model_tail_with(&spec, Which::S, x, tol).unwrap();
        let b = model_tail_with(&spec, Which::S, x, tol.halved()).unwrap();
        assert!((a.value - b.value).abs() <= a.error, "{a:?} {b:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn product_tail_is_monotone(t1 in 0.5..30.0f64, dt in 0.01..5.0f64, alpha in 0.5..2.0f64) {
            let laws = [TailLaw::pareto(alpha, 1.0).unwrap(), TailLaw::log_factor_pareto(alpha, 2.0, E).unwrap()];
            let a = product_tail(&laws, t1.exp()).unwrap();
            let b = product_tail(&laws, (t1 + dt).exp()).unwrap();
            prop_assert!(b.value <= a.value + a.error + b.error);
            prop_assert!((0.0..=1.0).contains(&a.value));
        }

        #[test]
        fn atoms_factor_out(c in 0.1..10.0f64, t in 1.0..20.0f64) {
            let y = TailLaw::lognormal(0.0, 1.0).unwrap();
            let z = TailLaw::pareto(1.5, 1.0).unwrap();
            let x = t.exp();
            let a = product_tail(&[y.clone(), TailLaw::point_mass(c).unwrap(), z.clone()], x).unwrap();
            let b = product_tail(&[y, z], x / c).unwrap();
            prop_assert!(rel(a.value, b.value) < 1e-12);
        }
    }
}
