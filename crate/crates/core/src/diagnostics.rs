//! Ratio-convergence tables: a tail estimate divided by its asymptotic
//! equivalent over a growing threshold grid, with a verdict on the trend.

use std::io::{self, Write};

use serde::Serialize;

use crate::asymptotics::{evaluate_expansion, BaseMethod, Expansion, McBudget};
use crate::error::{domain, Error, Result};
use crate::estimators::{conditional_tail, tilted_conditional_tail};
use crate::model::ModelSpec;
use crate::oracle::{self, Which};

/// Two-sided 95% normal quantile used for Monte Carlo intervals.
const Z95: f64 = 1.959963984540054;

/// `points` thresholds spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) || points < 2 {
        return Err(domain(format!(
            "grid {lo}:{hi}:{points} needs 0 < lo < hi and at least 2 points"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points).map(|k| (a + step * k as f64).exp()).collect();
    grid[0] = lo;
    grid[points - 1] = hi;
    Ok(grid)
}

/// How an estimate's error is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    /// Deterministic bound; intervals are `±error`.
    Bound,
    /// Standard error; intervals are normal 95%.
    Stderr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioRow {
    pub x: f64,
    pub estimate: f64,
    pub est_err: f64,
    pub asymptote: f64,
    pub ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    /// `|ratio - 1|` at the largest threshold.
    pub final_ratio_error: f64,
    /// `|ratio - 1|` never grows by more than the interval half-widths allow.
    pub monotone: bool,
    /// `|ratio - 1|` strictly decreases at every step.
    pub strictly_decreasing: bool,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioTable {
    pub rows: Vec<RatioRow>,
    pub verdict: Verdict,
}

/// Evaluates `estimate(x) -> (value, error)` and `asymptote(x) -> (value,
/// error)` on each grid point, `workers` points at a time. The verdict passes
/// when the final `|ratio - 1|` is within `tolerance` and the trend is
/// monotone, or when every point is already within `tolerance`.
pub fn ratio_table<E, A>(
    grid: &[f64],
    estimate: E,
    asymptote: A,
    kind: ErrorKind,
    tolerance: f64,
    workers: usize,
) -> Result<RatioTable>
where
    E: Fn(f64) -> Result<(f64, f64)> + Sync,
    A: Fn(f64) -> Result<(f64, f64)> + Sync,
{
    if grid.len() < 4 {
        return Err(domain(format!("a ratio table needs at least 4 thresholds, got {}", grid.len())));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("thresholds must be strictly increasing"));
    }
    if !(tolerance >= 0.0) {
        return Err(domain(format!("tolerance {tolerance} must be non-negative")));
    }
    let row = |x: f64| -> Result<RatioRow> {
        let (est, est_err) = estimate(x)?;
        let (asym, asym_err) = asymptote(x)?;
        if !(asym > 0.0) {
            return Err(domain(format!("asymptote {asym} at x = {x} is not positive")));
        }
        let ratio = est / asym;
        let half = match kind {
            ErrorKind::Bound => (est_err + ratio * asym_err) / asym,
            ErrorKind::Stderr => Z95 * (est_err * est_err + (ratio * asym_err).powi(2)).sqrt() / asym,
        };
        Ok(RatioRow {
            x,
            estimate: est,
            est_err,
            asymptote: asym,
            ratio,
            ci_low: ratio - half,
            ci_high: ratio + half,
        })
    };
    let workers = workers.clamp(1, grid.len());
    let chunk = grid.len().div_ceil(workers);
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = grid
            .chunks(chunk)
            .map(|xs| scope.spawn(|| xs.iter().map(|&x| row(x)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("grid worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let verdict = verdict(&rows, tolerance);
    Ok(RatioTable { rows, verdict })
}

fn verdict(rows: &[RatioRow], tolerance: f64) -> Verdict {
    let dev: Vec<f64> = rows.iter().map(|r| (r.ratio - 1.0).abs()).collect();
    let half: Vec<f64> = rows.iter().map(|r| 0.5 * (r.ci_high - r.ci_low)).collect();
    let monotone = (1..rows.len()).all(|k| dev[k] <= dev[k - 1] + half[k] + half[k - 1]);
    let strictly_decreasing = dev.windows(2).all(|w| w[1] < w[0]);
    let final_ratio_error = dev[dev.len() - 1];
    Verdict {
        final_ratio_error,
        monotone,
        strictly_decreasing,
        tolerance,
        pass: final_ratio_error <= tolerance && (monotone || dev.iter().all(|d| *d <= tolerance)),
    }
}

/// Estimator of the model tail used in [`model_ratio_table`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailEstimator {
    Oracle,
    ConditionalMc(McBudget),
    /// Conditional Monte Carlo under the survival tilt `S -> S^theta`.
    ConditionalTilted(McBudget, f64),
}

/// Ratio of `P(S_n > x)` or `P(M_n > x)` to the evaluated `expansion`.
#[allow(clippy::too_many_arguments)]
pub fn model_ratio_table(
    spec: &ModelSpec,
    which: Which,
    expansion: &Expansion,
    grid: &[f64],
    estimator: TailEstimator,
    base: BaseMethod,
    tolerance: f64,
    workers: usize,
) -> Result<RatioTable> {
    let kind = match estimator {
        TailEstimator::Oracle => {
            if spec.horizon() > oracle::MAX_MODEL_HORIZON {
                return Err(Error::UnsupportedSize(format!(
                    "the model-tail oracle handles horizons up to {}, got {}",
                    oracle::MAX_MODEL_HORIZON,
                    spec.horizon()
                )));
            }
            ErrorKind::Bound
        }
        TailEstimator::ConditionalMc(_) | TailEstimator::ConditionalTilted(..) => ErrorKind::Stderr,
    };
    let estimate = |x: f64| -> Result<(f64, f64)> {
        match estimator {
            TailEstimator::Oracle => oracle::model_tail(spec, which, x).map(|v| (v.value, v.error)),
            TailEstimator::ConditionalMc(b) => {
                conditional_tail(spec, which, x, b.samples, b.seed, b.workers).map(|e| (e.p_hat, e.stderr))
            }
            TailEstimator::ConditionalTilted(b, theta) => {
                tilted_conditional_tail(spec, which, x, theta, b.samples, b.seed, b.workers)
                    .map(|e| (e.p_hat, e.stderr))
            }
        }
    };
    let asymptote = |x: f64| -> Result<(f64, f64)> {
        evaluate_expansion(expansion, Some(spec), x, base).map(|e| (e.value, e.error))
    };
    ratio_table(grid, estimate, asymptote, kind, tolerance, workers)
}

/// Least-squares fit `ratio ≈ limit + slope / ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrapolation {
    pub limit: f64,
    pub slope: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    /// Set when the ratios are not monotone or the fit residual is large.
    pub low_confidence: bool,
}

/// Residual above which a fit is flagged, relative to `max(1, |limit|)`.
const RESIDUAL_FLAG: f64 = 1e-2;

pub fn extrapolate_limit(table: &RatioTable) -> Result<Extrapolation> {
    let rows = &table.rows;
    if rows.len() < 3 {
        return Err(domain(format!("extrapolation needs at least 3 rows, got {}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| !(r.x > 1.0)) {
        return Err(domain(format!("threshold {} must exceed 1", r.x)));
    }
    let t: Vec<f64> = rows.iter().map(|r| 1.0 / r.x.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let k = t.len() as f64;
    let tm = t.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(&y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let limit = ym - slope * tm;
    let residual = (t
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - limit - slope * a).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let monotone = y.windows(2).all(|w| w[1] <= w[0]) || y.windows(2).all(|w| w[1] >= w[0]);
    Ok(Extrapolation {
        limit,
        slope,
        residual,
        low_confidence: !monotone || residual > RESIDUAL_FLAG * limit.abs().max(1.0),
    })
}

/// Writes the table as CSV, preceded by `# `-prefixed comment lines.
pub fn write_ratio_csv<W: Write>(table: &RatioTable, comments: &[String], mut out: W) -> io::Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "x,estimate,est_err,asymptote,ratio,ci_low,ci_high")?;
    for r in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.x, r.estimate, r.est_err, r.asymptote, r.ratio, r.ci_low, r.ci_high
        )?;
    }
    Ok(())
}
