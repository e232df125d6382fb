//! Asymptotic tail formulas: product tails of log-power laws, expansions of
//! the model tails in terms of discount-product tails, the constants those
//! expansions need, and their numerical evaluation.
//!
//! Constants of the form `E(W + T)_+^α - E(T)_+^α` are estimated as a single
//! paired expectation (see [`crate::estimators::paired_difference_moment`]).
//! For `α = 0` the convention `(z)_+^0 = 1{z > 0}` applies throughout.

use serde::{Deserialize, Serialize};

use crate::distributions::{TailLaw, TailShape};
use crate::error::{domain, hypothesis, Error, Result};
use crate::estimators::{
    paired_difference_moment, paired_excess_moment, product_conditional_tail, VarianceValidity,
};
use crate::model::{ModelSpec, Weights};
use crate::oracle::{self, OracleValue, Which};
use crate::rng::derive_seed;

/// Monte Carlo effort for a coefficient or a base tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl McBudget {
    pub fn new(samples: usize, seed: u64, workers: usize) -> Self {
        Self {
            samples,
            seed,
            workers,
        }
    }

    fn derived(&self, tag: u64) -> Self {
        Self {
            seed: derive_seed(self.seed, tag),
            ..*self
        }
    }
}

/// `α^{n-1} Π Γ(γ_i) / Γ(Σ γ_i)`: the constant in the tail of a product of
/// independent laws with tails `ℓ_i (ln x)^{γ_i - 1} x^{-α}`.
pub fn log_power_product_coefficient(gammas: &[f64], alpha: f64) -> Result<f64> {
    if gammas.is_empty() {
        return Err(domain("at least one exponent is required"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(domain(format!("alpha = {alpha} must be positive")));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(domain(format!("exponent {g} must be positive")));
    }
    // Sorting makes the result independent of the input order.
    let mut sorted = gammas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let total: f64 = sorted.iter().sum();
    let ln = (sorted.len() - 1) as f64 * alpha.ln() + sorted.iter().map(|&g| libm::lgamma(g)).sum::<f64>()
        - libm::lgamma(total);
    Ok(ln.exp())
}

/// Asymptotic tail of a product of independent Pareto / log-power laws
/// sharing one index: `coefficient · Π ℓ_i · (ln x)^{Σγ_i - 1} x^{-α}`.
pub fn product_tail_asymptote(laws: &[TailLaw], x: f64) -> Result<f64> {
    if !(x > std::f64::consts::E) {
        return Err(domain(format!("threshold {x} must exceed e")));
    }
    let forms = laws
        .iter()
        .map(|l| {
            l.log_power_form().ok_or(Error::UnsupportedFamily {
                op: "product_tail_asymptote",
                family: l.family(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha = forms.first().ok_or_else(|| domain("empty product"))?.alpha;
    if forms.iter().any(|f| f.alpha != alpha) {
        return Err(domain("all factors must share one tail index"));
    }
    let gammas: Vec<f64> = forms.iter().map(|f| f.gamma).collect();
    let coefficient = log_power_product_coefficient(&gammas, alpha)?;
    let ln_x = x.ln();
    let ln_ell: f64 = forms.iter().map(|f| f.ell.ln()).sum();
    let g: f64 = gammas.iter().sum();
    Ok(coefficient * (ln_ell + (g - 1.0) * ln_x.ln() - alpha * ln_x).exp())
}

/// Common asymptote of `P(S_n > x)`, `P(M_n > x)` and `P(X_n Π Y_j > x)` when
/// every loss and discount law has a log-power tail with one index `α` and
/// the losses share one log exponent.
pub fn log_power_model_tail(spec: &ModelSpec, x: f64) -> Result<f64> {
    if !spec.has_independent_losses() {
        return Err(hypothesis("independent losses", "the losses must be independent"));
    }
    let forms = spec
        .x_laws()
        .iter()
        .chain(spec.y_laws())
        .map(|l| {
            l.log_power_form().ok_or_else(|| {
                hypothesis(
                    "log-power tails",
                    format!("the {} family has no log-power tail", l.family()),
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha = forms[0].alpha;
    if forms.iter().any(|f| f.alpha != alpha) {
        return Err(domain("all laws must share one tail index"));
    }
    let n = spec.horizon();
    if forms[..n].iter().any(|f| f.gamma != forms[0].gamma) {
        return Err(hypothesis(
            "common loss log exponent",
            "every loss law must have the same gamma",
        ));
    }
    let mut laws = vec![spec.x_laws()[n - 1].clone()];
    laws.extend_from_slice(spec.y_laws());
    product_tail_asymptote(&laws, x)
}

/// First-order asymptote of `P(Π Z_i > x)` for independent factors with at
/// least one regularly varying right tail.
///
/// With `α` the smallest index present: factors with a lighter tail enter
/// through `E Z_+^α`; among the factors of index `α`, those with an infinite
/// `α`-moment (log-power tails) are combined by the log-power product
/// formula, and otherwise the tails add as `Σ_j Π_{k≠j} E Z_k^α · P(Z_j > x)`.
pub fn product_asymptote(laws: &[TailLaw], x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(domain(format!("threshold {x} must be positive")));
    }
    let mut x = x;
    let mut rest = Vec::new();
    for law in laws {
        match law.atom() {
            Some(c) if c > 0.0 => x /= c,
            Some(_) => return Ok(0.0),
            None => rest.push(law),
        }
    }
    if rest.is_empty() {
        return Ok(f64::from(u8::from(1.0 > x)));
    }
    let shapes: Vec<TailShape> = rest.iter().map(|l| l.upper_tail_shape()).collect();
    let alpha = shapes
        .iter()
        .map(|s| s.index)
        .fold(f64::INFINITY, f64::min);
    if alpha.is_infinite() {
        return Err(domain("no factor has a regularly varying tail"));
    }
    let mut scale = 1.0;
    let mut group = Vec::new();
    for (law, shape) in rest.iter().zip(&shapes) {
        if shape.index > alpha {
            let m = law.alpha_moment(alpha)?;
            if !m.is_finite() {
                return Err(hypothesis(
                    "finite moment of lighter factors",
                    format!("E Z_+^{alpha} diverges for the {} family", law.family()),
                ));
            }
            scale *= m;
        } else {
            group.push(*law);
        }
    }
    let (infinite, finite): (Vec<&TailLaw>, Vec<&TailLaw>) = group
        .iter()
        .partition(|l| !l.upper_tail_shape().moment_finite(alpha));
    if !infinite.is_empty() {
        for law in &finite {
            scale *= law.alpha_moment(alpha)?;
        }
        let owned: Vec<TailLaw> = infinite.into_iter().cloned().collect();
        return Ok(scale * product_tail_asymptote(&owned, x)?);
    }
    let moments = finite
        .iter()
        .map(|l| l.alpha_moment(alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut sum = 0.0;
    for (j, law) in finite.iter().enumerate() {
        let others: f64 = moments
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, m)| m)
            .product();
        sum += others * law.survival(x);
    }
    Ok(scale * sum)
}

/// The tail probability multiplying a coefficient in an [`Expansion`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum BaseTail {
    /// `P(Π_{j≤i} Y_j > x)`.
    ProductOfY { i: usize },
    /// `P(X_i Π_{j≤i} Y_j > x)`.
    XProduct { i: usize },
    /// `P(Y_i > x)`.
    PlainG { i: usize },
    /// `P(Π Z > x)` for explicitly given independent laws.
    Product { laws: Vec<TailLaw> },
}

impl BaseTail {
    fn laws(&self, spec: Option<&ModelSpec>) -> Result<Vec<TailLaw>> {
        let need = |i: usize| -> Result<&ModelSpec> {
            let spec = spec.ok_or_else(|| domain("a model is needed to resolve indexed terms"))?;
            if i < 1 || i > spec.horizon() {
                return Err(domain(format!("term index {i} is outside 1..={}", spec.horizon())));
            }
            Ok(spec)
        };
        Ok(match self {
            Self::ProductOfY { i } => need(*i)?.y_laws()[..*i].to_vec(),
            Self::XProduct { i } => {
                let spec = need(*i)?;
                let mut v = vec![spec.x_laws()[i - 1].clone()];
                v.extend_from_slice(&spec.y_laws()[..*i]);
                v
            }
            Self::PlainG { i } => vec![need(*i)?.y_laws()[i - 1].clone()],
            Self::Product { laws } => laws.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub coefficient: f64,
    /// Monte Carlo standard error of the coefficient; 0 for exact values.
    pub stderr: f64,
    pub base: BaseTail,
}

impl Term {
    pub fn exact(coefficient: f64, base: BaseTail) -> Self {
        Self {
            coefficient,
            stderr: 0.0,
            base,
        }
    }
}

/// `Σ coefficient · base tail`, an asymptotic equivalent of a tail probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Expansion {
    pub terms: Vec<Term>,
}

impl Expansion {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(domain("an expansion needs at least one term"));
        }
        if let Some(t) = terms.iter().find(|t| !t.coefficient.is_finite()) {
            return Err(domain(format!("coefficient {} is not finite", t.coefficient)));
        }
        Ok(Self { terms })
    }
}

/// `P(Y Σ Z_i > x) ≈ (E(ΣZ)_+^α - Σ c_i E(Z_i)_+^α) P(Y > x) + Σ c_i P(Y Z_i > x)`,
/// assembled from the supplied moments; `c_i` are the weights in the sum
/// tail `P(ΣZ > x) ~ Σ c_i P(Z_i > x)`.
pub fn product_sum_expansion(
    y_law: &TailLaw,
    z: &[(f64, TailLaw)],
    moments: &[f64],
    sum_moment: f64,
) -> Result<Expansion> {
    if z.len() != moments.len() || z.is_empty() {
        return Err(domain("one moment is needed per summand"));
    }
    if z.iter().any(|(c, _)| !(*c >= 0.0)) {
        return Err(domain("weights must be non-negative"));
    }
    if !z.iter().any(|(c, _)| *c > 0.0) {
        return Err(domain("at least one weight must be positive"));
    }
    if !sum_moment.is_finite() || moments.iter().any(|m| !m.is_finite()) {
        return Err(domain("moments must be finite"));
    }
    let plain = sum_moment - z.iter().zip(moments).map(|((c, _), m)| c * m).sum::<f64>();
    let mut terms = vec![Term::exact(
        plain,
        BaseTail::Product {
            laws: vec![y_law.clone()],
        },
    )];
    for (c, law) in z {
        terms.push(Term::exact(
            *c,
            BaseTail::Product {
                laws: vec![y_law.clone(), law.clone()],
            },
        ));
    }
    Expansion::new(terms)
}

/// Which form of the model-tail expansion to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Losses negligible against the next discount factor; any dependence.
    /// Terms `Σ_{i<n} B_{n,i} P(Π_{j≤i} Y_j > x) + P(X_n Π_{j≤n} Y_j > x)`.
    DominatedLosses,
    /// Independent losses regularly varying with the discount index. Terms
    /// `Σ_{i<n} (B_{n,i} - E(X_i)_+^α) P(Π_{j≤i} Y_j > x) + Σ_i P(X_i Π_{j≤i} Y_j > x)`.
    RegularlyVaryingLosses,
}

/// Index shared by every discount law, with `E Y_i^α < ∞` for `i >= 2`.
pub fn discount_index(spec: &ModelSpec) -> Result<f64> {
    let ys = spec.y_laws();
    let alpha = ys[0].rv_index().ok_or_else(|| {
        hypothesis(
            "regularly varying discount factors",
            format!("the {} family is not regularly varying", ys[0].family()),
        )
    })?;
    for (i, y) in ys.iter().enumerate() {
        if y.rv_index() != Some(alpha) {
            return Err(hypothesis(
                "regularly varying discount factors",
                format!("Y_{} does not have tail index {alpha}", i + 1),
            ));
        }
        if i >= 1 && !y.alpha_moment(alpha)?.is_finite() {
            return Err(hypothesis(
                "finite discount moments",
                format!("E Y_{}^{alpha} is infinite", i + 1),
            ));
        }
    }
    Ok(alpha)
}

fn losses_positive(spec: &ModelSpec, from: usize) -> bool {
    spec.x_laws()[from - 1..].iter().all(|l| l.prob_positive() == 1.0)
}

fn certify(spec: &ModelSpec, variant: Variant, alpha: f64) -> Result<()> {
    let n = spec.horizon();
    let xs = spec.x_laws();
    let ys = spec.y_laws();
    for (i, x) in xs.iter().enumerate() {
        if x.prob_positive() == 0.0 {
            return Err(hypothesis(
                "losses not concentrated on (-∞, 0]",
                format!("X_{} is never positive", i + 1),
            ));
        }
    }
    match variant {
        Variant::DominatedLosses => {
            let independent = spec.has_independent_losses();
            for i in 0..n {
                let x_shape = if independent {
                    xs[i].upper_tail_shape()
                } else {
                    xs[i].abs_tail_shape()
                };
                let y_shape = ys[i].upper_tail_shape();
                if !(x_shape.negligible_against(&y_shape) || xs[i].rv_index() == Some(alpha)) {
                    return Err(hypothesis(
                        "X_i Y_i regularly varying",
                        format!("X_{} has a heavier tail than Y_{}", i + 1, i + 1),
                    ));
                }
                if i + 1 < n && !x_shape.negligible_against(&ys[i + 1].upper_tail_shape()) {
                    return Err(hypothesis(
                        "P(|X_i| > x) = o(P(Y_{i+1} > x))",
                        format!("X_{} is not negligible against Y_{}", i + 1, i + 2),
                    ));
                }
            }
        }
        Variant::RegularlyVaryingLosses => {
            if !spec.has_independent_losses() {
                return Err(hypothesis("independent losses", "the losses must be independent"));
            }
            for (i, x) in xs.iter().enumerate() {
                if x.rv_index() != Some(alpha) {
                    return Err(hypothesis(
                        "regularly varying losses",
                        format!("X_{} does not have tail index {alpha}", i + 1),
                    ));
                }
                if !x.alpha_moment(alpha)?.is_finite() {
                    return Err(hypothesis(
                        "finite loss moments",
                        format!("E(X_{})_+^{alpha} is infinite", i + 1),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// A named constant with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constant {
    pub label: String,
    pub index: usize,
    pub value: f64,
    pub stderr: f64,
    /// `None` for closed-form values.
    pub validity: Option<VarianceValidity>,
}

impl Constant {
    fn exact(label: String, index: usize, value: f64) -> Self {
        Self {
            label,
            index,
            value,
            stderr: 0.0,
            validity: None,
        }
    }
}

/// `B_{n,i}` (which = S) or `D_{n,i}` (which = M) for `i = 1..n`, using the
/// discount index as the moment order.
pub fn loss_constants(spec: &ModelSpec, which: Which, budget: McBudget) -> Result<Vec<Constant>> {
    let alpha = discount_index(spec)?;
    loss_constants_at(spec, which, alpha, false, budget)
}

fn loss_constants_at(
    spec: &ModelSpec,
    which: Which,
    alpha: f64,
    minus_loss: bool,
    budget: McBudget,
) -> Result<Vec<Constant>> {
    let n = spec.horizon();
    let letter = match which {
        Which::S => "B",
        Which::M => "D",
    };
    (1..=n)
        .map(|i| {
            let label = if minus_loss {
                format!("{letter}_{{{n},{i}}} - E(X_{i})_+^a")
            } else {
                format!("{letter}_{{{n},{i}}}")
            };
            if alpha == 0.0 && losses_positive(spec, i) {
                // Every partial sum from period i on is positive.
                let value = match (i == n, minus_loss) {
                    (true, false) => 1.0,
                    (true, true) | (false, false) => 0.0,
                    (false, true) => -1.0,
                };
                return Ok(Constant::exact(label, i, value));
            }
            if alpha == 1.0 && losses_positive(spec, i) {
                // (X_i + T) - T = X_i on every path.
                let value = if minus_loss { 0.0 } else { spec.x_laws()[i - 1].alpha_moment(1.0)? };
                return Ok(Constant::exact(label, i, value));
            }
            let b = budget.derived(i as u64);
            let e = if minus_loss {
                paired_excess_moment(spec, which, i, alpha, b.samples, b.seed, b.workers)?
            } else {
                paired_difference_moment(spec, which, i, alpha, b.samples, b.seed, b.workers)?
            };
            Ok(Constant {
                label,
                index: i,
                value: e.value,
                stderr: e.stderr,
                validity: Some(e.variance_validity),
            })
        })
        .collect()
}

/// Expansion of `P(S_n > x)` or `P(M_n > x)` after certifying the
/// hypotheses of the chosen variant from the law catalog.
pub fn model_expansion(
    spec: &ModelSpec,
    which: Which,
    variant: Variant,
    budget: McBudget,
) -> Result<Expansion> {
    let alpha = discount_index(spec)?;
    certify(spec, variant, alpha)?;
    let n = spec.horizon();
    let minus_loss = variant == Variant::RegularlyVaryingLosses;
    let constants = if n > 1 {
        let head = spec.clone();
        let mut c = loss_constants_at(&head, which, alpha, minus_loss, budget)?;
        c.truncate(n - 1);
        c
    } else {
        Vec::new()
    };
    let mut terms: Vec<Term> = constants
        .into_iter()
        .filter(|c| !(c.value == 0.0 && c.validity.is_none()))
        .map(|c| Term {
            coefficient: c.value,
            stderr: c.stderr,
            base: BaseTail::ProductOfY { i: c.index },
        })
        .collect();
    match variant {
        Variant::DominatedLosses => terms.push(Term::exact(1.0, BaseTail::XProduct { i: n })),
        Variant::RegularlyVaryingLosses => {
            terms.extend((1..=n).map(|i| Term::exact(1.0, BaseTail::XProduct { i })))
        }
    }
    Expansion::new(terms)
}

/// Constants `K_n`, `L_n` with `P(S_n > x) ~ K_n Ḡ(x)` and
/// `P(M_n > x) ~ L_n Ḡ(x)` for iid losses and discounts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IidConstants {
    pub alpha: f64,
    pub theta: f64,
    /// `E Y^α`.
    pub y_moment: f64,
    pub k: f64,
    pub k_stderr: f64,
    pub l: f64,
    pub l_stderr: f64,
    pub closed_form: bool,
}

/// `lim P(X > x) / P(Y > x)` from the tail shapes of the two laws.
pub fn derived_theta(x_law: &TailLaw, y_law: &TailLaw) -> Result<f64> {
    let t = x_law.upper_tail_shape().ratio_limit(&y_law.upper_tail_shape());
    if t.is_finite() {
        Ok(t)
    } else {
        Err(hypothesis(
            "finite limit of P(X > x) / P(Y > x)",
            format!("the {} loss tail is heavier than the discount tail", x_law.family()),
        ))
    }
}

fn log_class(y: &TailLaw, alpha: f64) -> Result<()> {
    if y.log_class_index() == Some(alpha) {
        Ok(())
    } else {
        Err(hypothesis(
            "ln Y in S(alpha)",
            format!(
                "the {} family is not certified to have a convolution-equivalent logarithm",
                y.family()
            ),
        ))
    }
}

/// `K_n` and `L_n` through `E(S_k)_+^α = Σ_{j≤k} m^{k-j+1} B_j`, `m = E Y^α`,
/// which gives `K_n = Σ_j (n-j+1) m^{n-j} B_j + θ Σ_i m^i`, and likewise for
/// `L_n` with `D_j`. Each `B_j`, `D_j` pair shares its own derived seed.
pub fn iid_tail_constants(spec: &ModelSpec, theta: Option<f64>, budget: McBudget) -> Result<IidConstants> {
    if !spec.is_iid() {
        return Err(domain("iid losses and discounts are required"));
    }
    let x = &spec.x_laws()[0];
    let y = &spec.y_laws()[0];
    let alpha = discount_index(spec)?;
    log_class(y, alpha)?;
    let theta = match theta {
        Some(t) if t >= 0.0 && t.is_finite() => t,
        Some(t) => return Err(domain(format!("theta = {t} must be a finite non-negative number"))),
        None => derived_theta(x, y)?,
    };
    let m = y.alpha_moment(alpha)?;
    if !m.is_finite() {
        return Err(hypothesis("finite discount moments", "E Y^alpha is infinite"));
    }
    let n = spec.horizon();
    let theta_part: f64 = theta * (1..=n).map(|i| m.powi(i as i32)).sum::<f64>();
    let weight = |j: usize| (n - j + 1) as f64 * m.powi((n - j) as i32);
    let positive = x.prob_positive() == 1.0;
    if positive && (alpha == 0.0 || alpha == 1.0) {
        // All partial sums are positive, so B_1 = E X^α and B_j = 0 (α = 0)
        // or B_j = E X (α = 1) for j >= 2; and M_k = S_k.
        let b = |j: usize| -> Result<f64> {
            Ok(if alpha == 0.0 {
                f64::from(u8::from(j == 1))
            } else {
                x.alpha_moment(1.0)?
            })
        };
        let mut k = theta_part;
        for j in 1..=n {
            k += weight(j) * b(j)?;
        }
        return Ok(IidConstants {
            alpha,
            theta,
            y_moment: m,
            k,
            k_stderr: 0.0,
            l: k,
            l_stderr: 0.0,
            closed_form: true,
        });
    }
    let (mut k, mut k_var, mut l, mut l_var) = (theta_part, 0.0, theta_part, 0.0);
    for j in 1..=n {
        let b = budget.derived(j as u64);
        let i = n - j + 1;
        let bj = paired_difference_moment(spec, Which::S, i, alpha, b.samples, b.seed, b.workers)?;
        let dj = paired_difference_moment(spec, Which::M, i, alpha, b.samples, b.seed, b.workers)?;
        let w = weight(j);
        k += w * bj.value;
        k_var += (w * bj.stderr).powi(2);
        l += w * dj.value;
        l_var += (w * dj.stderr).powi(2);
    }
    Ok(IidConstants {
        alpha,
        theta,
        y_moment: m,
        k,
        k_stderr: k_var.sqrt(),
        l,
        l_stderr: l_var.sqrt(),
        closed_form: false,
    })
}

/// `A_{n,i} = E(c_i + V_i)^α - E V_i^α` with `V_i = Σ_{k>i} c_k Π_{j=i+1}^k Y_j`.
///
/// `α = 1` gives `c_i` and `α = 0` gives `1{i = n}` exactly; other orders are
/// paired Monte Carlo estimates. No hypothesis on the discount laws is checked.
pub fn weighted_sum_coefficients(
    y_laws: &[TailLaw],
    weights: &[f64],
    alpha: f64,
    budget: McBudget,
) -> Result<Vec<Constant>> {
    if !(alpha >= 0.0) {
        return Err(domain(format!("alpha = {alpha} must be non-negative")));
    }
    if weights.len() != y_laws.len() {
        return Err(domain("one weight is needed per discount law"));
    }
    if let Some(c) = weights.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(domain(format!("weight {c} must be positive")));
    }
    let n = weights.len();
    let label = |i: usize| format!("A_{{{n},{i}}}");
    if alpha == 1.0 || alpha == 0.0 {
        return Ok((1..=n)
            .map(|i| {
                let v = if alpha == 1.0 {
                    weights[i - 1]
                } else {
                    f64::from(u8::from(i == n))
                };
                Constant::exact(label(i), i, v)
            })
            .collect());
    }
    let spec = ModelSpec::new(
        weights
            .iter()
            .map(|&c| TailLaw::point_mass(c))
            .collect::<Result<Vec<_>>>()?,
        y_laws.to_vec(),
    )?;
    (1..=n)
        .map(|i| {
            let b = budget.derived(i as u64);
            let e = paired_difference_moment(&spec, Which::S, i, alpha, b.samples, b.seed, b.workers)?;
            Ok(Constant {
                label: label(i),
                index: i,
                value: e.value,
                stderr: e.stderr,
                validity: Some(e.variance_validity),
            })
        })
        .collect()
}

/// `P(Σ c_i Π_{j≤i} Y_j > x) ≈ Σ A_{n,i} P(Π_{j≤i} Y_j > x)` for weights in
/// their declared range.
pub fn weighted_sum_expansion(
    y_laws: &[TailLaw],
    weights: &Weights,
    alpha: f64,
    budget: McBudget,
) -> Result<Expansion> {
    let spec = ModelSpec::weighted(y_laws.to_vec(), weights.values.clone(), weights.lower, weights.upper)?;
    let index = discount_index(&spec)?;
    if index != alpha {
        return Err(hypothesis(
            "regularly varying discount factors",
            format!("discount laws have index {index}, not {alpha}"),
        ));
    }
    let coefficients = weighted_sum_coefficients(y_laws, &weights.values, alpha, budget)?;
    let terms = coefficients
        .into_iter()
        .filter(|c| !(c.value == 0.0 && c.validity.is_none()))
        .map(|c| Term {
            coefficient: c.value,
            stderr: c.stderr,
            base: BaseTail::ProductOfY { i: c.index },
        })
        .collect();
    Expansion::new(terms)
}

/// Constant `C` with `P(Σ c_i Π_{j≤i} Y_j > x) ~ C Ḡ(x)` for iid discounts:
/// `C = Σ_i i m^{i-1} A_{n,i}`, `m = E Y^α`. Returns `(C, stderr)`.
pub fn iid_weighted_constant(y_law: &TailLaw, weights: &[f64], alpha: f64, budget: McBudget) -> Result<(f64, f64)> {
    if y_law.rv_index() != Some(alpha) {
        return Err(hypothesis(
            "regularly varying discount factors",
            format!("the discount law does not have tail index {alpha}"),
        ));
    }
    log_class(y_law, alpha)?;
    let m = y_law.alpha_moment(alpha)?;
    if !m.is_finite() {
        return Err(hypothesis("finite discount moments", "E Y^alpha is infinite"));
    }
    let n = weights.len();
    let laws = vec![y_law.clone(); n];
    let a = weighted_sum_coefficients(&laws, weights, alpha, budget)?;
    let (mut value, mut var) = (0.0, 0.0);
    for c in &a {
        let w = c.index as f64 * m.powi(c.index as i32 - 1);
        value += w * c.value;
        var += (w * c.stderr).powi(2);
    }
    Ok((value, var.sqrt()))
}

/// How base tails are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseMethod {
    Oracle,
    ConditionalMc(McBudget),
    Asymptote,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    /// Base-tail error bounds plus coefficient standard errors, combined.
    pub error: f64,
    pub bases: Vec<f64>,
}

/// `Σ coefficient · base(x)`.
pub fn evaluate_expansion(
    expansion: &Expansion,
    spec: Option<&ModelSpec>,
    x: f64,
    method: BaseMethod,
) -> Result<Evaluation> {
    let mut value = 0.0;
    let mut bound = 0.0;
    let mut var = 0.0;
    let mut bases = Vec::with_capacity(expansion.terms.len());
    for (k, term) in expansion.terms.iter().enumerate() {
        let laws = term.base.laws(spec)?;
        let base = base_tail(&laws, x, method, k as u64)?;
        value += term.coefficient * base.value;
        match method {
            BaseMethod::ConditionalMc(_) => var += (term.coefficient * base.error).powi(2),
            _ => bound += term.coefficient.abs() * base.error,
        }
        var += (term.stderr * base.value).powi(2);
        bases.push(base.value);
    }
    Ok(Evaluation {
        value,
        error: bound + var.sqrt(),
        bases,
    })
}

fn base_tail(laws: &[TailLaw], x: f64, method: BaseMethod, tag: u64) -> Result<OracleValue> {
    if let [single] = laws {
        return Ok(OracleValue {
            value: single.survival(x),
            error: 0.0,
        });
    }
    match method {
        BaseMethod::Oracle => oracle::product_tail(laws, x),
        BaseMethod::ConditionalMc(b) => {
            let b = b.derived(tag);
            let e = product_conditional_tail(laws, x, b.samples, b.seed, b.workers)?;
            Ok(OracleValue {
                value: e.p_hat,
                error: e.stderr,
            })
        }
        BaseMethod::Asymptote => Ok(OracleValue {
            value: product_asymptote(laws, x)?,
            error: 0.0,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{plus_moment, ShiftedFunctional};
    use crate::model::Dependence;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn lf(alpha: f64, beta: f64) -> TailLaw {
        TailLaw::log_factor_pareto(alpha, beta, E).unwrap()
    }

    fn pm(c: f64) -> TailLaw {
        TailLaw::point_mass(c).unwrap()
    }

    fn ln01() -> TailLaw {
        TailLaw::lognormal(0.0, 1.0).unwrap()
    }

    fn budget(samples: usize, seed: u64) -> McBudget {
        McBudget::new(samples, seed, 2)
    }

    #[test]
    fn coefficient_examples() {
        assert!((log_power_product_coefficient(&[2.0], 3.7).unwrap() - 1.0).abs() < 1e-15);
        assert!((log_power_product_coefficient(&[1.0, 1.0], 1.0).unwrap() - 1.0).abs() < 1e-15);
        // Γ(2)Γ(2)/Γ(4) = 1/6 from factorials.
        let c = log_power_product_coefficient(&[2.0, 2.0], 2.0).unwrap();
        assert!(rel(c, 1.0 / 3.0) < 1e-12);
        assert!(log_power_product_coefficient(&[0.0, 1.0], 1.0).is_err());
        assert!(log_power_product_coefficient(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn coefficient_is_symmetric(mut gammas in proptest::collection::vec(0.1..8.0f64, 1..6), alpha in 0.1..4.0f64) {
            let a = log_power_product_coefficient(&gammas, alpha).unwrap();
            gammas.reverse();
            let b = log_power_product_coefficient(&gammas, alpha).unwrap();
            gammas.rotate_left(1);
            let c = log_power_product_coefficient(&gammas, alpha).unwrap();
            prop_assert!(rel(a, b) <= 1e-12 && rel(a, c) <= 1e-12);
        }
    }

    #[test]
    fn product_asymptote_examples() {
        let p = TailLaw::pareto(1.0, 1.0).unwrap();
        let x = 20f64.exp();
        assert!(rel(product_tail_asymptote(std::slice::from_ref(&p), x).unwrap(), (-20f64).exp()) < 1e-13);
        let two = product_tail_asymptote(&[p.clone(), p.clone()], x).unwrap();
        assert!(rel(two, 20.0 * (-20f64).exp()) < 1e-13);
        let exact = oracle::product_tail(&[p.clone(), p.clone()], x).unwrap().value;
        assert!((exact / two - 1.05).abs() < 1e-6);
        let x = 40f64.exp();
        let exact = oracle::product_tail(&[p.clone(), p.clone()], x).unwrap().value;
        assert!((exact / product_tail_asymptote(&[p.clone(), p.clone()], x).unwrap() - 1.025).abs() < 1e-6);
        assert!(product_tail_asymptote(&[p.clone(), TailLaw::pareto(2.0, 1.0).unwrap()], x).is_err());
        assert!(product_tail_asymptote(&[lf(1.0, 2.0)], x).is_err());
    }

    #[test]
    fn log_power_model_tail_examples() {
        let l = |alpha: f64| TailLaw::log_power_pareto(alpha, 1.0, 1.0, 1.0).unwrap();
        let spec = ModelSpec::new(vec![l(2.0)], vec![l(2.0)]).unwrap();
        let x: f64 = 1e5;
        let v = log_power_model_tail(&spec, x).unwrap();
        assert!(rel(v, 2.0 * x.ln() / (x * x)) < 1e-12);
        assert_eq!(v, product_tail_asymptote(&[l(2.0), l(2.0)], x).unwrap());
        let laws = [
            TailLaw::log_power_pareto(1.0, 2.0, E, 1.0).unwrap(),
            TailLaw::log_power_pareto(1.0, 1.5, 2.0, 1.0).unwrap(),
            TailLaw::log_power_pareto(1.0, 0.5, 3.0, 2.0).unwrap(),
        ];
        let spec = ModelSpec::new(vec![laws[0].clone(); 2], vec![laws[1].clone(), laws[2].clone()]).unwrap();
        let v = log_power_model_tail(&spec, x).unwrap();
        let direct = product_tail_asymptote(&laws, x).unwrap();
        assert!(rel(v, direct) <= 1e-12);
        let mixed = ModelSpec::new(vec![l(1.0)], vec![l(2.0)]).unwrap();
        assert!(log_power_model_tail(&mixed, x).is_err());
    }

    #[test]
    fn product_sum_examples() {
        let y = TailLaw::pareto(1.0, 1.0).unwrap();
        let e = product_sum_expansion(&y, &[(1.0, pm(1.0))], &[1.0], 1.0).unwrap();
        assert_eq!(e.terms[0].coefficient, 0.0);
        assert_eq!(e.terms[1].coefficient, 1.0);
        let e = product_sum_expansion(&y, &[(1.0, pm(1.0)), (1.0, pm(1.0))], &[1.0, 1.0], 2.0).unwrap();
        let x = 50.0;
        let v = evaluate_expansion(&e, None, x, BaseMethod::Oracle).unwrap();
        assert!(rel(v.value, 2.0 / x) < 1e-14);
        assert!(product_sum_expansion(&y, &[(0.0, pm(1.0))], &[1.0], 1.0).is_err());
    }

    #[test]
    fn dominated_losses_at_index_zero_keep_one_term() {
        let spec = ModelSpec::new(vec![ln01(); 3], vec![TailLaw::super_heavy_log(2.0, E).unwrap(); 3]).unwrap();
        let e = model_expansion(&spec, Which::S, Variant::DominatedLosses, budget(1000, 1)).unwrap();
        assert_eq!(e.terms, vec![Term::exact(1.0, BaseTail::XProduct { i: 3 })]);
        // The same collapse for the maximum, and under comonotone losses.
        let co = ModelSpec::with_dependence(
            vec![ln01(); 3],
            vec![TailLaw::super_heavy_log(2.0, E).unwrap(); 3],
            Dependence::Comonotone,
        )
        .unwrap();
        let e = model_expansion(&co, Which::M, Variant::DominatedLosses, budget(1000, 1)).unwrap();
        assert_eq!(e.terms.len(), 1);
    }

    #[test]
    fn positive_losses_at_index_one_are_exact() {
        let spec = ModelSpec::new(vec![ln01(); 3], vec![lf(1.0, 2.0); 3]).unwrap();
        for which in [Which::S, Which::M] {
            let c = loss_constants(&spec, which, budget(1000, 1)).unwrap();
            assert!(c.iter().all(|c| c.validity.is_none() && rel(c.value, 0.5f64.exp()) < 1e-12));
        }
        let e = model_expansion(&spec, Which::S, Variant::RegularlyVaryingLosses, budget(1000, 1));
        assert!(e.is_err());
        let x = lf(1.0, 3.0);
        let spec = ModelSpec::new(vec![x.clone(); 2], vec![lf(1.0, 2.0); 2]).unwrap();
        let e = model_expansion(&spec, Which::S, Variant::RegularlyVaryingLosses, budget(1000, 1)).unwrap();
        assert_eq!(e.terms.len(), 2);
    }

    #[test]
    fn one_period_expansions() {
        let spec = ModelSpec::new(vec![lf(1.0, 3.0)], vec![lf(1.0, 2.0)]).unwrap();
        for variant in [Variant::DominatedLosses, Variant::RegularlyVaryingLosses] {
            let e = model_expansion(&spec, Which::S, variant, budget(1000, 1)).unwrap();
            assert_eq!(e.terms, vec![Term::exact(1.0, BaseTail::XProduct { i: 1 })]);
        }
    }

    #[test]
    fn hypotheses_are_certified() {
        let heavy_x = ModelSpec::new(vec![TailLaw::pareto(0.5, 1.0).unwrap(); 2], vec![lf(1.0, 2.0); 2]).unwrap();
        let err = model_expansion(&heavy_x, Which::S, Variant::DominatedLosses, budget(1000, 1));
        assert!(matches!(err, Err(Error::Hypothesis { .. })), "{err:?}");
        let light_x = ModelSpec::new(vec![ln01(); 2], vec![lf(1.0, 2.0); 2]).unwrap();
        let err = model_expansion(&light_x, Which::S, Variant::RegularlyVaryingLosses, budget(1000, 1));
        assert!(matches!(err, Err(Error::Hypothesis { hypothesis: "regularly varying losses", .. })));
        let pareto_y = ModelSpec::new(vec![ln01(); 2], vec![TailLaw::pareto(1.0, 1.0).unwrap(); 2]).unwrap();
        let err = model_expansion(&pareto_y, Which::S, Variant::DominatedLosses, budget(1000, 1));
        assert!(matches!(err, Err(Error::Hypothesis { hypothesis: "finite discount moments", .. })));
        let negative = ModelSpec::new(vec![pm(-1.0); 2], vec![lf(1.0, 2.0); 2]).unwrap();
        assert!(model_expansion(&negative, Which::S, Variant::DominatedLosses, budget(1000, 1)).is_err());
    }

    #[test]
    fn last_constant_is_the_loss_moment() {
        let x = TailLaw::negated_shifted(ln01(), 0.5, false).unwrap();
        let spec = ModelSpec::new(vec![x.clone(); 3], vec![lf(1.0, 2.0); 3]).unwrap();
        let c = loss_constants(&spec, Which::S, budget(200_000, 3)).unwrap();
        let exact = x.alpha_moment(1.0).unwrap();
        assert!((c[2].value - exact).abs() < 3.0 * c[2].stderr, "{:?} vs {exact}", c[2]);
        let d = loss_constants(&spec, Which::M, budget(200_000, 3)).unwrap();
        assert_eq!(c[2].value, d[2].value);
    }

    #[test]
    fn iid_constants_at_index_zero() {
        let spec = ModelSpec::new(vec![ln01(); 4], vec![TailLaw::super_heavy_log(2.0, E).unwrap(); 4]).unwrap();
        let k = iid_tail_constants(&spec, None, budget(1000, 1)).unwrap();
        assert!(k.closed_form);
        assert_eq!((k.k, k.l, k.theta), (4.0, 4.0, 0.0));
        let k = iid_tail_constants(&spec, Some(0.5), budget(1000, 1)).unwrap();
        assert_eq!(k.k, 6.0);
    }

    #[test]
    fn iid_constant_for_one_period_factorizes() {
        // K_1 = E(S_1)_+^α / E Y^α = E X_+^α when θ = 0.
        let x = TailLaw::negated_shifted(ln01(), 0.8, false).unwrap();
        let spec = ModelSpec::new(vec![x.clone()], vec![lf(0.5, 3.0)]).unwrap();
        let k = iid_tail_constants(&spec, Some(0.0), budget(200_000, 9)).unwrap();
        let exact = x.alpha_moment(0.5).unwrap();
        assert!((k.k - exact).abs() < 3.0 * k.k_stderr, "{k:?} vs {exact}");
        assert!(k.l >= k.k);
    }

    #[test]
    fn iid_constants_closed_form_at_index_one() {
        let spec = ModelSpec::new(vec![ln01(); 3], vec![lf(1.0, 2.0); 3]).unwrap();
        let k = iid_tail_constants(&spec, None, budget(1000, 1)).unwrap();
        let m = 2.0 * E;
        let ex = 0.5f64.exp();
        assert!(k.closed_form);
        assert!(rel(k.k, ex * (3.0 * m * m + 2.0 * m + 1.0)) < 1e-12);
        assert_eq!(k.l, k.k);
    }

    #[test]
    fn theta_from_tail_shapes() {
        assert_eq!(derived_theta(&ln01(), &lf(1.0, 2.0)).unwrap(), 0.0);
        assert_eq!(derived_theta(&lf(1.0, 2.0), &lf(1.0, 2.0)).unwrap(), 1.0);
        let p = TailLaw::pareto(1.0, 2.0).unwrap();
        let q = TailLaw::pareto(1.0, 1.0).unwrap();
        assert_eq!(derived_theta(&p, &q).unwrap(), 2.0);
        assert!(derived_theta(&lf(1.0, 1.5), &lf(1.0, 2.0)).is_err());
    }

    #[test]
    fn weighted_examples() {
        let ys = vec![lf(1.0, 2.0); 3];
        let w = [0.7, 1.3, 2.0];
        let a = weighted_sum_coefficients(&ys, &w, 1.0, budget(10, 1)).unwrap();
        assert_eq!(a.iter().map(|c| c.value).collect::<Vec<_>>(), w.to_vec());
        let a = weighted_sum_coefficients(&ys, &w, 0.0, budget(10, 1)).unwrap();
        assert_eq!(a.iter().map(|c| c.value).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0]);
        let a = weighted_sum_coefficients(&ys[..1], &[1.7], 0.5, budget(1000, 1)).unwrap();
        assert!(rel(a[0].value, 1.7f64.sqrt()) < 1e-14);
        let weights = Weights {
            values: w.to_vec(),
            lower: 0.5,
            upper: 2.0,
        };
        let e = weighted_sum_expansion(&ys, &weights, 1.0, budget(10, 1)).unwrap();
        assert_eq!(e.terms.len(), 3);
        let bad = Weights { upper: 1.5, ..weights };
        assert!(weighted_sum_expansion(&ys, &bad, 1.0, budget(10, 1)).is_err());
    }

    #[test]
    fn weighted_coefficients_scale_with_weights() {
        let ys = vec![lf(0.5, 3.0); 3];
        let w = [0.6, 1.1, 1.9];
        let w2: Vec<f64> = w.iter().map(|c| 2.0 * c).collect();
        let alpha = 0.5;
        let a = weighted_sum_coefficients(&ys, &w, alpha, budget(20_000, 4)).unwrap();
        let b = weighted_sum_coefficients(&ys, &w2, alpha, budget(20_000, 4)).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!(rel(q.value, 2f64.powf(alpha) * p.value) < 1e-12);
        }
    }

    #[test]
    fn iid_weighted_constant_examples() {
        let y = lf(1.0, 2.0);
        let (c, se) = iid_weighted_constant(&y, &[1.0, 1.0], 1.0, budget(10, 1)).unwrap();
        assert!(rel(c, 1.0 + 4.0 * E) < 1e-12 && se == 0.0);
        assert!((c - 11.8731).abs() < 1e-4);
        let (c, _) = iid_weighted_constant(&y, &[1.7], 1.0, budget(10, 1)).unwrap();
        assert!(rel(c, 1.7) < 1e-15);
        let (c, _) = iid_weighted_constant(&TailLaw::super_heavy_log(2.0, E).unwrap(), &[1.0, 2.0, 0.5], 0.0, budget(10, 1))
            .unwrap();
        assert_eq!(c, 3.0);
        assert!(iid_weighted_constant(&TailLaw::pareto(1.0, 1.0).unwrap(), &[1.0], 1.0, budget(10, 1)).is_err());
    }

    #[test]
    fn iid_weighted_constant_matches_its_definition() {
        // Σ_i E(Σ_{k≥i} c_k Π_{j≤k-i+1} Y_j)^α m^{i-2}, each moment by plain Monte Carlo.
        let y = lf(0.5, 3.0);
        let alpha = 0.5;
        let w = [1.0, 0.5];
        let (c, se) = iid_weighted_constant(&y, &w, alpha, budget(200_000, 5)).unwrap();
        let m = y.alpha_moment(alpha).unwrap();
        let full = ModelSpec::new(vec![pm(w[0]), pm(w[1])], vec![y.clone(); 2]).unwrap();
        let tail = ModelSpec::new(vec![pm(w[1])], vec![y.clone()]).unwrap();
        let e1 = plus_moment(&ShiftedFunctional::new(&full, Which::S, 1, 2).unwrap(), alpha, 400_000, 6, 2).unwrap();
        let e2 = plus_moment(&ShiftedFunctional::new(&tail, Which::S, 1, 1).unwrap(), alpha, 400_000, 7, 2).unwrap();
        let direct = e1.value / m + e2.value;
        let direct_se = (e1.stderr.powi(2) / (m * m) + e2.stderr.powi(2)).sqrt();
        assert!((c - direct).abs() < 3.0 * (se * se + direct_se * direct_se).sqrt(), "{c} ± {se} vs {direct} ± {direct_se}");
    }

    #[test]
    fn evaluation_is_linear() {
        let spec = ModelSpec::new(vec![ln01(); 2], vec![lf(1.0, 2.0); 2]).unwrap();
        let x = 1e4;
        let single = Expansion::new(vec![Term::exact(1.0, BaseTail::PlainG { i: 1 })]).unwrap();
        let v = evaluate_expansion(&single, Some(&spec), x, BaseMethod::Oracle).unwrap();
        assert_eq!(v.value, spec.y_laws()[0].survival(x));
        let a = Term::exact(0.7, BaseTail::ProductOfY { i: 2 });
        let b = Term::exact(1.3, BaseTail::XProduct { i: 2 });
        let both = Expansion::new(vec![a.clone(), b.clone()]).unwrap();
        let va = evaluate_expansion(&Expansion::new(vec![a]).unwrap(), Some(&spec), x, BaseMethod::Oracle).unwrap();
        let vb = evaluate_expansion(&Expansion::new(vec![b]).unwrap(), Some(&spec), x, BaseMethod::Oracle).unwrap();
        let v = evaluate_expansion(&both, Some(&spec), x, BaseMethod::Oracle).unwrap();
        assert_eq!(v.value, va.value + vb.value);
        assert!(Expansion::new(vec![]).is_err());
        let far = Expansion::new(vec![Term::exact(1.0, BaseTail::ProductOfY { i: 3 })]).unwrap();
        assert!(evaluate_expansion(&far, Some(&spec), x, BaseMethod::Oracle).is_err());
    }

    #[test]
    fn asymptotic_bases_at_index_zero() {
        // P(X_n Π Y_j > x) ~ n Ḡ(x) for positive light losses and iid slowly varying discounts.
        let y = TailLaw::super_heavy_log(2.0, E).unwrap();
        let n = 3;
        let spec = ModelSpec::new(vec![ln01(); n], vec![y.clone(); n]).unwrap();
        let e = model_expansion(&spec, Which::S, Variant::DominatedLosses, budget(1000, 1)).unwrap();
        for x in [1e10, 1e100] {
            let v = evaluate_expansion(&e, Some(&spec), x, BaseMethod::Asymptote).unwrap();
            assert!(rel(v.value, n as f64 * y.survival(x)) < 1e-12);
        }
    }

    #[test]
    fn asymptotic_bases_for_log_factor_products() {
        let y = lf(1.0, 2.0);
        let m = 2.0 * E;
        let x = 1e8;
        let v = product_asymptote(&[y.clone(), y.clone(), y.clone()], x).unwrap();
        assert!(rel(v, 3.0 * m * m * y.survival(x)) < 1e-12);
        let v = product_asymptote(&[ln01(), y.clone()], x).unwrap();
        assert!(rel(v, 0.5f64.exp() * y.survival(x)) < 1e-12);
        let p = TailLaw::pareto(1.0, 1.0).unwrap();
        let v = product_asymptote(&[p.clone(), y.clone()], x).unwrap();
        assert!(rel(v, m * product_tail_asymptote(&[p], x).unwrap()) < 1e-12);
    }
}
