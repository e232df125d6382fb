use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::json;
use tailrisk::asymptotics::{
    discount_index, evaluate_expansion, iid_tail_constants, iid_weighted_constant, loss_constants,
    model_expansion, weighted_sum_coefficients, weighted_sum_expansion, BaseMethod, Constant,
    Expansion, McBudget, Variant,
};
use tailrisk::diagnostics::{extrapolate_limit, model_ratio_table, TailEstimator};
use tailrisk::estimators::{conditional_tail, crude_tail, tilted_conditional_tail, VarianceValidity};
use tailrisk::model::write_samples_csv;
use tailrisk::oracle::{self, Which};
use tailrisk::rng::derive_seed;
use tailrisk::ModelSpec;

use crate::config::Config;

/// Output of a subcommand and whether its verdict (if any) passed.
pub struct Outcome {
    pub output: String,
    pub pass: bool,
}

impl Outcome {
    fn ok(output: String) -> Self {
        Self { output, pass: true }
    }
}

fn csv_header(command: &str, config: &Config) -> String {
    format!(
        "# tailrisk {command}\n# seed: {} workers: {}\n# config: {}\n",
        config.run.seed,
        config.run.workers,
        config.to_json()
    )
}

fn json_output(command: &str, config: &Config, payload: serde_json::Value) -> String {
    let mut doc = json!({
        "command": command,
        "provenance": {
            "seed": config.run.seed,
            "workers": config.run.workers,
            "config": config,
        },
    });
    if let (Some(doc), serde_json::Value::Object(extra)) = (doc.as_object_mut(), payload) {
        doc.extend(extra);
    }
    let mut s = serde_json::to_string_pretty(&doc).expect("outputs serialize");
    s.push('\n');
    s
}

fn budget(config: &Config, tag: u64) -> McBudget {
    McBudget::new(config.run.budget, derive_seed(config.run.seed, tag), config.run.workers)
}

pub fn simulate(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let samples = spec.simulate(config.run.budget, config.run.seed, config.run.workers)?;
    let mut out = csv_header("simulate", config).into_bytes();
    write_samples_csv(&samples, &mut out)?;
    Ok(Outcome::ok(String::from_utf8(out)?))
}

pub fn tail(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let x = config.x()?;
    let (which, r) = (config.model.which, &config.run);
    let estimate = match r.method.as_deref().unwrap_or("conditional") {
        "crude" => crude_tail(&spec, which, x, r.budget, r.seed, r.workers)?,
        "conditional" => conditional_tail(&spec, which, x, r.budget, r.seed, r.workers)?,
        "tilted" => tilted_conditional_tail(&spec, which, x, r.tilt, r.budget, r.seed, r.workers)?,
        other => bail!("unknown tail method `{other}` (expected crude, conditional or tilted)"),
    };
    Ok(Outcome::ok(json_output("tail", config, json!({ "estimate": estimate }))))
}

pub fn oracle(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let x = config.x()?;
    let v = oracle::model_tail(&spec, config.model.which, x)?;
    Ok(Outcome::ok(json_output(
        "oracle",
        config,
        json!({ "x": x, "which": config.model.which, "value": v.value, "error": v.error }),
    )))
}

fn expansion(config: &Config, spec: &ModelSpec) -> Result<(Expansion, Option<Variant>)> {
    if let Some(w) = spec.weights() {
        let alpha = discount_index(spec)?;
        let e = weighted_sum_expansion(spec.y_laws(), w, alpha, budget(config, 1))?;
        return Ok((e, None));
    }
    let variant = config.run.variant.unwrap_or(Variant::DominatedLosses);
    let e = model_expansion(spec, config.model.which, variant, budget(config, 1))?;
    Ok((e, Some(variant)))
}

fn base_method(config: &Config, spec: &ModelSpec, default: &str) -> Result<BaseMethod> {
    let default = if default == "auto" {
        if spec.horizon() <= oracle::MAX_MODEL_HORIZON {
            "oracle"
        } else {
            "conditional-mc"
        }
    } else {
        default
    };
    Ok(match config.run.base.as_deref().unwrap_or(default) {
        "oracle" => BaseMethod::Oracle,
        "conditional-mc" => BaseMethod::ConditionalMc(budget(config, 2)),
        "asymptote" => BaseMethod::Asymptote,
        other => bail!("unknown base method `{other}` (expected oracle, conditional-mc or asymptote)"),
    })
}

pub fn asympt(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let (e, variant) = expansion(config, &spec)?;
    let mut payload = json!({ "variant": variant, "expansion": e });
    if let Some(x) = config.run.x {
        let base = base_method(config, &spec, "asymptote")?;
        let v = evaluate_expansion(&e, Some(&spec), x, base)?;
        payload["evaluation"] = json!({ "x": x, "value": v.value, "error": v.error, "bases": v.bases });
    }
    Ok(Outcome::ok(json_output("asympt", config, payload)))
}

#[derive(Serialize)]
struct ConstantRow<'a> {
    label: &'a str,
    index: usize,
    value: f64,
    stderr: f64,
    validity: &'a str,
}

fn validity(c: &Constant) -> &'static str {
    match c.validity {
        None => "exact",
        Some(VarianceValidity::FiniteVarianceProven) => "finite-variance",
        Some(VarianceValidity::HeavyVarianceWarning) => "heavy-variance-warning",
    }
}

pub fn constants(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let mut rows: Vec<(Constant, &str)> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let alpha = discount_index(&spec)?;
    let n = spec.horizon();
    let summary = |label: String, value: f64, stderr: f64, exact: bool| {
        let kind = if exact { "exact" } else { "monte-carlo" };
        (
            Constant {
                label,
                index: n,
                value,
                stderr,
                validity: None,
            },
            kind,
        )
    };
    if let Some(w) = spec.weights() {
        for c in weighted_sum_coefficients(spec.y_laws(), &w.values, alpha, budget(config, 1))? {
            let kind = validity(&c);
            rows.push((c, kind));
        }
        if spec.is_iid() {
            match iid_weighted_constant(&spec.y_laws()[0], &w.values, alpha, budget(config, 1)) {
                Ok((value, stderr)) => rows.push(summary(format!("C_{n}"), value, stderr, stderr == 0.0)),
                Err(e) => notes.push(format!("C_n unavailable: {e}")),
            }
        }
    } else {
        for which in [Which::S, Which::M] {
            for c in loss_constants(&spec, which, budget(config, 1))? {
                let kind = validity(&c);
                rows.push((c, kind));
            }
        }
        if spec.is_iid() {
            match iid_tail_constants(&spec, config.model.theta, budget(config, 3)) {
                Ok(k) => {
                    notes.push(format!("theta = {}, E Y^alpha = {}", k.theta, k.y_moment));
                    rows.push(summary(format!("K_{n}"), k.k, k.k_stderr, k.closed_form));
                    rows.push(summary(format!("L_{n}"), k.l, k.l_stderr, k.closed_form));
                }
                Err(e) => notes.push(format!("K_n, L_n unavailable: {e}")),
            }
        }
    }
    let mut out = csv_header("constants", config);
    for note in &notes {
        out.push_str(&format!("# {note}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for (c, kind) in &rows {
        w.serialize(ConstantRow {
            label: &c.label,
            index: c.index,
            value: c.value,
            stderr: c.stderr,
            validity: kind,
        })?;
    }
    out.push_str(&String::from_utf8(w.into_inner()?)?);
    Ok(Outcome::ok(out))
}

pub fn compare(config: &Config) -> Result<Outcome> {
    let spec = config.spec()?;
    let grid = config.grid()?;
    let (e, _) = expansion(config, &spec)?;
    let r = &config.run;
    let mc = McBudget::new(r.budget, r.seed, r.workers);
    let oracle_ok = spec.horizon() <= oracle::MAX_MODEL_HORIZON && spec.has_independent_losses();
    let estimator = match r.method.as_deref().unwrap_or(if oracle_ok { "oracle" } else { "conditional" }) {
        "oracle" => TailEstimator::Oracle,
        "conditional" => TailEstimator::ConditionalMc(mc),
        "tilted" => TailEstimator::ConditionalTilted(mc, r.tilt),
        other => bail!("unknown estimator `{other}` (expected oracle, conditional or tilted)"),
    };
    let base = base_method(config, &spec, "auto")?;
    let table = model_ratio_table(&spec, config.model.which, &e, &grid, estimator, base, r.tolerance, r.workers)?;
    let limit = extrapolate_limit(&table)?;
    let v = table.verdict;
    let verdict = format!(
        "verdict: {} final_ratio_error={} tolerance={} monotone={} strictly_decreasing={} extrapolated_limit={} low_confidence={}",
        if v.pass { "pass" } else { "fail" },
        v.final_ratio_error,
        v.tolerance,
        v.monotone,
        v.strictly_decreasing,
        limit.limit,
        limit.low_confidence
    );
    let mut out = csv_header("compare", config);
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &table.rows {
        w.serialize(row)?;
    }
    out.push_str(&String::from_utf8(w.into_inner()?)?);
    out.push_str(&format!("# {verdict}\n"));
    eprintln!("{verdict}");
    Ok(Outcome { output: out, pass: v.pass })
}
