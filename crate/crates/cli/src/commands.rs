use std::collections::BTreeMap;
use std::fs;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use pandora_delegation::agents::{default_agent, simulate_interaction, AgentKind, AgentPolicy};
use pandora_delegation::harness::{generate_family, gap_sweep, FamilySpec, GapMethod, GapOptions, GapRow};
use pandora_delegation::mechanisms::{
    build_binary_matroid, build_free_agent_kuniform, build_free_agent_ocrs, build_shared_cost, BuildPlan, Mechanism,
};
use pandora_delegation::model::{validate_instance, CapValues, Instance, ModelKind};
use pandora_delegation::ocrs::{build_greedy_ocrs, estimate_selectability, ex_ante_membership, ocrs_scale, SelectMode, EXHAUSTIVE_SELECTABILITY_LIMIT};
use pandora_delegation::solvers::{exact_optimal_dp, opt_surrogate, weitzman_expected, DP_LIMIT};
use pandora_delegation::stats::{EvalMode, Estimate, EXACT_HARD_LIMIT, EXACT_PROFILE_LIMIT};
use pandora_delegation::Error;

use crate::{
    AgentArg, Command, DelegateArgs, FamilyArgs, Format, GapArgs, MethodArg, Output, Sampling, SelectArgs, SolveArgs, Source,
    UsageError, ValidateArgs, SCHEMA_VERSION,
};

pub fn run(cmd: &Command) -> Result<u8> {
    let config = serde_json::to_value(cmd)?;
    match cmd {
        Command::Solve(a) => solve(a, config),
        Command::Delegate(a) => delegate(a, config),
        Command::Gap(a) => gap(a, config),
        Command::Selectability(a) => selectability(a, config),
        Command::Family(a) => family(a),
        Command::Validate(a) => validate(a, config),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json(output: &Output, value: &Value) -> Result<()> {
    if output.format == Some(Format::Csv) {
        return Err(usage("this command only writes JSON"));
    }
    emit(output, &format!("{}\n", serde_json::to_string_pretty(value)?))
}

/// CSV with the schema version and config echo as leading comment lines.
fn emit_csv(output: &Output, config: &Value, header: &str, rows: &[String]) -> Result<()> {
    let mut text = format!("# schema_version: {SCHEMA_VERSION}\n# config: {}\n{header}\n", serde_json::to_string(config)?);
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    emit(output, &text)
}

fn report(config: Value, body: Value) -> Value {
    let mut out = json!({ "schema_version": SCHEMA_VERSION, "config": config });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

/// Exact value as a number, estimate as `[mean, lo, hi]`.
fn estimate_json(e: &Estimate) -> Value {
    if e.exact {
        json!(e.mean)
    } else {
        json!([e.mean, e.lo(), e.hi()])
    }
}

fn family_spec(family: pandora_delegation::harness::FamilyKind, n: usize, params: &[(String, String)], seed: u64) -> Result<FamilySpec> {
    let mut spec = FamilySpec::new(family, n);
    spec.seed = seed;
    for (k, v) in params {
        if k == "model" {
            let kind: ModelKind =
                serde_json::from_value(json!(v)).map_err(|_| usage(format!("unknown model {v:?}")))?;
            spec.model = Some(kind);
        } else {
            let x: f64 = v.parse().map_err(|_| usage(format!("parameter {k} needs a number, got {v:?}")))?;
            spec.params.insert(k.clone(), x);
        }
    }
    Ok(spec)
}

fn load(source: &Source, seed: Option<u64>) -> Result<Instance> {
    match (&source.instance, source.family) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Instance::from_json(&text)?)
        }
        (None, Some(family)) => {
            let n = source.n.ok_or_else(|| usage("--family needs --n"))?;
            Ok(generate_family(&family_spec(family, n, &source.params, seed.unwrap_or(0))?)?)
        }
        (None, None) => Err(usage("give --instance PATH or --family NAME")),
    }
}

/// Evaluation mode for `profiles` outcomes; sampling needs a seed.
fn eval_mode(sampling: &Sampling, profiles: f64) -> Result<EvalMode> {
    if sampling.exact {
        if profiles > EXACT_HARD_LIMIT {
            return Err(Error::TooLarge { what: "exact enumeration", size: profiles, limit: EXACT_HARD_LIMIT }.into());
        }
        return Ok(EvalMode::Exact);
    }
    if profiles <= EXACT_PROFILE_LIMIT {
        return Ok(EvalMode::Exact);
    }
    let seed = sampling.seed.ok_or_else(|| usage(format!("{profiles} profiles need sampling; pass --seed")))?;
    Ok(EvalMode::Sampled { samples: sampling.samples, seed })
}

fn plan(mode: EvalMode, sampling: &Sampling) -> BuildPlan {
    match mode {
        EvalMode::Exact => BuildPlan { samples: sampling.samples, seed: 0 },
        EvalMode::Sampled { samples, seed } => BuildPlan { samples, seed },
    }
}

fn solve(a: &SolveArgs, config: Value) -> Result<u8> {
    let inst = load(&a.source, a.sampling.seed)?;
    let caps = CapValues::compute(&inst)?;
    let mode = eval_mode(&a.sampling, inst.profile_count())?;
    let fits = inst.profile_count() * 2f64.powi(inst.n() as i32) <= DP_LIMIT;
    let opt_dp = if fits { Some(exact_optimal_dp(&inst)?) } else { None };
    let weitzman = if inst.constraint.is_matroid() { Some(weitzman_expected(&inst, &caps, mode)?) } else { None };
    let s = opt_surrogate(&inst, &caps, mode)?;
    let body = json!({
        "opt_dp": opt_dp,
        "weitzman": weitzman.as_ref().map(estimate_json),
        "surrogate": [s.mean, s.lo(), s.hi()],
        "seed": seed_if_sampled(mode),
    });
    emit_json(&a.output, &report(config, body))?;
    Ok(0)
}

fn seed_if_sampled(mode: EvalMode) -> Option<u64> {
    match mode {
        EvalMode::Exact => None,
        EvalMode::Sampled { seed, .. } => Some(seed),
    }
}

fn build_mechanism(a: &DelegateArgs, inst: &Instance, plan: BuildPlan) -> Result<Mechanism> {
    let name = match &a.mechanism {
        Some(m) => m.as_str(),
        None => match inst.model.kind {
            ModelKind::Binary => "binary",
            ModelKind::FreeAgent => "free-agent-ocrs",
            ModelKind::SharedCost => "shared-cost",
            ModelKind::Standard => return Err(usage("the standard model has no constructor; pass --mechanism FILE")),
        },
    };
    let mech = match name {
        "binary" => build_binary_matroid(inst, plan)?,
        "free-agent-kuniform" => build_free_agent_kuniform(inst, a.delta)?,
        "free-agent-ocrs" => build_free_agent_ocrs(inst, plan)?,
        "shared-cost" => build_shared_cost(inst, plan)?,
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading mechanism {path}"))?;
            let mech = Mechanism::from_json(&text)?;
            mech.check(inst)?;
            mech
        }
    };
    Ok(mech)
}

fn delegate(a: &DelegateArgs, config: Value) -> Result<u8> {
    let inst = load(&a.source, a.sampling.seed)?;
    let build_mode = eval_mode(&a.sampling, inst.profile_count())?;
    let mech = build_mechanism(a, &inst, plan(build_mode, &a.sampling))?;
    let agent = match a.agent {
        None => default_agent(&inst, &mech),
        Some(kind) => AgentPolicy::new(match kind {
            AgentArg::Dp => AgentKind::ExactDp,
            AgentArg::Index => AgentKind::WeitzmanIndex,
            AgentArg::Adversarial => AgentKind::AdversarialMaximal,
            AgentArg::Favor => AgentKind::FavorPrincipalMaximal,
        }),
    };
    let mode = eval_mode(&a.sampling, mech.outcome_space(&inst).size())?;
    let keep = if a.traces.is_some() { a.trace_limit } else { 0 };
    let r = simulate_interaction(&inst, &mech, agent, mode, keep)?;
    if let Some(path) = &a.traces {
        fs::write(path, serde_json::to_string_pretty(&r.traces)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.save_mechanism {
        fs::write(path, mech.to_json()? + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    let body = json!({
        "mechanism": mech.provenance,
        "agent": agent,
        "del": estimate_json(&r.del),
        "agent_utility": estimate_json(&r.agent_utility),
        "heuristic": r.heuristic,
        "seed": seed_if_sampled(mode).or(seed_if_sampled(build_mode)),
        "traces": a.traces,
    });
    emit_json(&a.output, &report(config, body))?;
    Ok(0)
}

fn gap(a: &GapArgs, config: Value) -> Result<u8> {
    let method = match a.method {
        Some(MethodArg::Brute) => GapMethod::BruteForce { max_classes: a.max_classes.max(1) },
        Some(MethodArg::Constructor) => GapMethod::Constructor,
        None => match GapMethod::default_for(a.family) {
            GapMethod::BruteForce { .. } => GapMethod::BruteForce { max_classes: a.max_classes.max(1) },
            m => m,
        },
    };
    let seed = match (method, a.sampling.seed) {
        (GapMethod::Constructor, None) => return Err(usage("the constructor method samples; pass --seed")),
        (_, s) => s.unwrap_or(0),
    };
    if a.sampling.exact {
        return Err(usage("gap picks exact evaluation itself; --exact is not accepted"));
    }
    let base = family_spec(a.family, 0, &a.params, seed)?;
    let opts = GapOptions { method, samples: a.sampling.samples, seed, timing: a.timing };
    let report_rows = gap_sweep(&base, &a.n, &opts)?;
    match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let rows: Vec<String> = report_rows.rows.iter().map(GapRow::csv).collect();
            let mut text_rows = rows;
            if let Some(slope) = report_rows.slope {
                text_rows.push(format!("# slope: {slope:.12e}"));
            }
            emit_csv(&a.output, &config, GapRow::CSV_HEADER, &text_rows)?;
        }
        Format::Json => {
            let body = json!({ "rows": report_rows.rows, "slope": report_rows.slope, "seed": seed });
            emit_json(&a.output, &report(config, body))?;
        }
    }
    Ok(0)
}

fn selectability(a: &SelectArgs, config: Value) -> Result<u8> {
    let inst = load(&a.source, a.sampling.seed)?;
    let caps = CapValues::compute(&inst)?;
    let mode = eval_mode(&a.sampling, inst.profile_count())?;
    let scale = ocrs_scale(&inst.constraint)?;
    let p: Vec<f64> = ex_ante_membership(&inst, &caps, mode)?.iter().map(|e| scale * e.mean).collect();
    let ocrs = build_greedy_ocrs(&inst, &caps, &p)?;
    let select = if inst.n() <= EXHAUSTIVE_SELECTABILITY_LIMIT {
        SelectMode::Exhaustive
    } else {
        let seed = a.sampling.seed.ok_or_else(|| usage("sampled selectability needs --seed"))?;
        SelectMode::Sampled { samples: a.sampling.samples, seed }
    };
    let est = estimate_selectability(&ocrs, &p, select)?;
    let (mode_name, samples, seed) = match select {
        SelectMode::Exhaustive => ("exhaustive", String::new(), String::new()),
        SelectMode::Sampled { samples, seed } => ("sampled", samples.to_string(), seed.to_string()),
    };
    #[derive(Serialize)]
    struct Row {
        element_id: usize,
        estimate: f64,
        mode: &'static str,
        samples: String,
        seed: String,
    }
    let rows: Vec<Row> = est
        .iter()
        .enumerate()
        .map(|(i, e)| Row { element_id: i, estimate: e.mean, mode: mode_name, samples: samples.clone(), seed: seed.clone() })
        .collect();
    match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let lines: Vec<String> = rows
                .iter()
                .map(|r| format!("{},{:.12e},{},{},{}", r.element_id, r.estimate, r.mode, r.samples, r.seed))
                .collect();
            emit_csv(&a.output, &config, "element_id,estimate,mode,samples,seed", &lines)?;
        }
        Format::Json => {
            let body = json!({ "rows": rows, "ex_ante": p });
            emit_json(&a.output, &report(config, body))?;
        }
    }
    Ok(0)
}

fn family(a: &FamilyArgs) -> Result<u8> {
    let inst = generate_family(&family_spec(a.family, a.n, &a.params, a.seed)?)?;
    emit(&a.output, &(inst.to_json()? + "\n"))?;
    Ok(0)
}

fn validate(a: &ValidateArgs, config: Value) -> Result<u8> {
    let text = fs::read_to_string(&a.path).with_context(|| format!("reading {}", a.path.display()))?;
    let (violations, parse_error) = match Instance::from_json_unchecked(&text) {
        Ok(inst) => (validate_instance(&inst), None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let valid = violations.is_empty() && parse_error.is_none();
    let listed: Vec<BTreeMap<&str, Value>> = violations
        .iter()
        .map(|v| BTreeMap::from([("element", json!(v.element)), ("kind", json!(v.kind)), ("detail", json!(v.detail))]))
        .collect();
    let body = json!({ "valid": valid, "violations": listed, "parse_error": parse_error });
    emit_json(&a.output, &report(config, body))?;
    if !valid {
        for v in &violations {
            eprintln!("{v}");
        }
        if let Some(e) = &parse_error {
            eprintln!("{e}");
        }
    }
    Ok(if valid { 0 } else { 2 })
}
