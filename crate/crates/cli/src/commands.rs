use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::{json, Value};
use seqred::designs::{nested_template, Tournament};
use seqred::graph::build_dependence_graph;
use seqred::inference::{fit_mle_with, importance_sampling_loglik, FitOptions, FitResult};
use seqred::model::simulate as simulate_model;
use seqred::{laplace_loglik, loglik_surface, sequential_reduction_loglik, Approximation, ModelSpec, SrConfig, Theta};

use crate::data::{read_multilevel, read_tournament, tournament_model, write_multilevel, write_tournament};
use crate::{CliError, ModelArgs, ModelKind, ReductionArgs};

const WARM_START_SCALE_FLOOR: f64 = 0.1;

struct Loaded {
    spec: ModelSpec,
    /// One label per random effect.
    labels: Vec<String>,
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, kind: ModelKind) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Input(format!("--{flag} is required for --model {}", kind.name())))
}

fn load(args: &ModelArgs) -> Result<Loaded, CliError> {
    if !(args.residual_sd > 0.0 && args.residual_sd.is_finite()) {
        return Err(CliError::Input("--residual-sd must be positive".into()));
    }
    let family = args.model.family(args.residual_sd);
    if args.model.is_pairwise() {
        let contests = require(&args.contests, "contests", args.model)?;
        let players = require(&args.players, "players", args.model)?;
        let data = read_tournament(contests, players)?;
        let spec = tournament_model(&data, family)?;
        Ok(Loaded {
            spec,
            labels: data.players,
        })
    } else {
        let path = require(&args.data, "data", args.model)?;
        let (spec, labels) = read_multilevel(path, family)?;
        Ok(Loaded { spec, labels })
    }
}

fn sr_config(reduction: &ReductionArgs, k: usize) -> SrConfig {
    SrConfig::new(k)
        .with_nodes(reduction.nodes as usize)
        .with_max_width(reduction.max_width)
}

fn parameter_names(spec: &ModelSpec) -> Vec<String> {
    spec.fixed_names().iter().chain(spec.scale_names()).cloned().collect()
}

fn named(names: &[String], values: &[f64]) -> Value {
    let map: serde_json::Map<String, Value> = names.iter().cloned().zip(values.iter().map(|v| json!(v))).collect();
    Value::Object(map)
}

fn fit_section(names: &[String], fit: &FitResult) -> (Value, Value, Value) {
    let estimates = named(names, &fit.theta_hat.to_vec());
    let se = match fit.standard_errors.as_ref().and_then(|s| s.values.as_ref()) {
        Some(v) => named(names, v),
        None => Value::Null,
    };
    let timing = json!({
        "total": fit.elapsed_ms,
        "evaluations": fit.evaluations,
        "per_evaluation": fit.ms_per_evaluation(),
    });
    (estimates, se, timing)
}

fn write_text(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn fit(
    model: &ModelArgs,
    reduction: &ReductionArgs,
    k: usize,
    with_se: bool,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = load(model)?;
    let spec = &loaded.spec;
    let graph = build_dependence_graph(spec);
    let plan = graph.elimination_ordering();
    let config = sr_config(reduction, k);
    if plan.width > config.max_width {
        return Err(seqred::Error::WidthExceeded {
            width: plan.width,
            max: config.max_width,
            level: k,
            cost_exponent: 2 * k,
        }
        .into());
    }
    let options = FitOptions {
        standard_errors: with_se,
        ..FitOptions::default()
    };
    let init = Theta::new(vec![0.0; spec.num_fixed()], vec![1.0; spec.num_scales()])?;
    let laplace = fit_mle_with(spec, Approximation::Laplace, &init, &options)?;
    let sr = fit_mle_with(spec, Approximation::SequentialReduction(config), &laplace.theta_hat.with_scale_floor(WARM_START_SCALE_FLOOR), &options)?;

    let names = parameter_names(spec);
    let (le, ls, lt) = fit_section(&names, &laplace);
    let (se_, ss, st) = fit_section(&names, &sr);
    let diagnostics = |f: &FitResult| f.standard_errors.as_ref().and_then(|s| s.diagnostic.clone());
    let report = json!({
        "model": model.model.name(),
        "parameters": names,
        "k": k,
        "nodes": reduction.nodes,
        "estimates": { "laplace": le, "sr": se_ },
        "se": { "laplace": ls, "sr": ss },
        "se_diagnostic": { "laplace": diagnostics(&laplace), "sr": diagnostics(&sr) },
        "loglik": { "laplace": laplace.loglik, "sr": sr.loglik },
        "converged": { "laplace": laplace.converged, "sr": sr.converged },
        "width": plan.width,
        "width_lower_bound": graph.width_lower_bound(),
        "timings_ms": { "laplace": lt, "sr": st },
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(output, &text)
}

pub struct LoglikRequest<'a> {
    pub model: &'a ModelArgs,
    pub reduction: &'a ReductionArgs,
    pub theta: Option<&'a str>,
    pub levels: &'a [usize],
    pub laplace: bool,
    pub is_budget: Option<usize>,
    pub seed: u64,
    pub sigma_grid: Option<&'a str>,
}

fn parse_theta(text: Option<&str>, spec: &ModelSpec) -> Result<Theta, CliError> {
    let (p, s) = (spec.num_fixed(), spec.num_scales());
    let Some(text) = text else {
        return Ok(Theta::new(vec![0.0; p], vec![1.0; s])?);
    };
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("--theta: cannot parse {v:?} as a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.len() != p + s {
        return Err(CliError::Input(format!(
            "--theta needs {} values ({}), got {}",
            p + s,
            parameter_names(spec).join(", "),
            values.len()
        )));
    }
    Ok(Theta::from_slice(&values, p)?)
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Input(format!("--sigma-grid expects from:to:count, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let from: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let to: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !(from > 0.0) || !(to > 0.0) || !from.is_finite() || !to.is_finite() {
        return Err(CliError::Input(format!(
            "--sigma-grid needs positive endpoints and a positive count, got {text:?}"
        )));
    }
    if count == 1 {
        return Ok(vec![from]);
    }
    Ok((0..count)
        .map(|i| from + (to - from) * i as f64 / (count - 1) as f64)
        .collect())
}

fn cell(v: &seqred::Result<f64>, what: &str, sigma: f64) -> String {
    match v {
        Ok(x) => format!("{x}"),
        Err(e) => {
            eprintln!("seqred: {what} failed at sigma={sigma}: {e}");
            "NaN".to_string()
        }
    }
}

pub fn loglik(req: &LoglikRequest<'_>) -> Result<(), CliError> {
    let loaded = load(req.model)?;
    let spec = &loaded.spec;
    let base = parse_theta(req.theta, spec)?;
    let mut out = String::new();
    if let Some(grid) = req.sigma_grid {
        let sigmas = parse_grid(grid)?;
        let thetas: Vec<Theta> = sigmas
            .iter()
            .map(|s| {
                let mut t = base.clone();
                t.psi[0] = *s;
                t
            })
            .collect();
        let mut header = vec!["sigma".to_string()];
        let mut columns: Vec<(String, Vec<seqred::Result<f64>>)> = Vec::new();
        if req.laplace {
            columns.push(("laplace".into(), thetas.iter().map(|t| laplace_loglik(spec, t)).collect()));
        }
        for k in req.levels {
            let values = loglik_surface(spec, &thetas, sr_config(req.reduction, *k));
            columns.push((format!("sr_k{k}"), values));
        }
        if let Some(n) = req.is_budget {
            let values = thetas
                .iter()
                .map(|t| importance_sampling_loglik(spec, t, n, req.seed).map(|r| r.estimate))
                .collect();
            columns.push((format!("is_n{n}"), values));
        }
        header.extend(columns.iter().map(|(h, _)| h.clone()));
        out.push_str(&header.join("\t"));
        out.push('\n');
        for (i, s) in sigmas.iter().enumerate() {
            let mut row = vec![format!("{s}")];
            row.extend(columns.iter().map(|(h, v)| cell(&v[i], h, *s)));
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    } else {
        out.push_str("method\tloglik\tse\tnote\n");
        if req.laplace {
            let v = laplace_loglik(spec, &base)?;
            out.push_str(&format!("laplace\t{v}\t\t\n"));
        }
        for k in req.levels {
            let v = sequential_reduction_loglik(spec, &base, sr_config(req.reduction, *k))?;
            out.push_str(&format!("sr(k={k})\t{v}\t\t\n"));
        }
        if let Some(n) = req.is_budget {
            let r = importance_sampling_loglik(spec, &base, n, req.seed)?;
            let note = if r.unreliable {
                format!("unreliable: weight cv {:.3}", r.weight_cv)
            } else {
                format!("weight cv {:.3}", r.weight_cv)
            };
            out.push_str(&format!(
                "is(n={n},seed={})\t{}\t{}\t{note}\n",
                req.seed, r.estimate, r.standard_error
            ));
        }
    }
    write_text(None, &out)
}

pub fn graph(model: &ModelArgs, k: usize) -> Result<(), CliError> {
    let loaded = load(model)?;
    let graph = build_dependence_graph(&loaded.spec);
    let plan = graph.elimination_ordering();
    let ordering: Vec<&str> = plan.ordering.iter().map(|v| loaded.labels[*v].as_str()).collect();
    let rows = [
        ("vertices", graph.num_vertices().to_string()),
        ("edges", graph.num_edges().to_string()),
        ("maximal_cliques", graph.maximal_cliques().len().to_string()),
        ("ordering", ordering.join(",")),
        ("width", plan.width.to_string()),
        ("width_convention", "largest closed neighbourhood (treewidth + 1)".to_string()),
        ("lower_bound", graph.width_lower_bound().to_string()),
        ("level", k.to_string()),
        ("cost_exponent", (2 * k).to_string()),
        ("cost_per_step", format!("O({}^{})", plan.width, 2 * k)),
    ];
    let mut out = String::from("key\tvalue\n");
    for (key, value) in rows {
        out.push_str(&format!("{key}\t{value}\n"));
    }
    write_text(None, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Structure {
    /// Player i > 0 meets player (i - 1) / 2.
    Tree,
    RoundRobin,
    /// Random pairs drawn from a graph of bounded width (see --clique-size).
    Sparse,
    /// Items in groups.
    TwoLevel,
    /// Items in pairs of level-1 groups inside level-2 groups.
    ThreeLevel,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    structure: Structure,
    /// Defaults to pairwise-probit for tournaments and multilevel-logit otherwise.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    #[arg(long, default_value_t = 16)]
    players: usize,
    #[arg(long, default_value_t = 2)]
    matches_per_pair: usize,
    /// Width bound for --structure sparse.
    #[arg(long, default_value_t = 5)]
    clique_size: usize,
    /// Distinct pairs for --structure sparse.
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Top-level groups for multilevel structures.
    #[arg(long, default_value_t = 100)]
    groups: usize,
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0.5)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    residual_sd: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let tournament = matches!(args.structure, Structure::Tree | Structure::RoundRobin | Structure::Sparse);
    let kind = args.model.unwrap_or(if tournament {
        ModelKind::PairwiseProbit
    } else {
        ModelKind::MultilevelLogit
    });
    if kind.is_pairwise() != tournament {
        return Err(CliError::Input(format!(
            "--model {} does not fit --structure {:?}",
            kind.name(),
            args.structure
        )));
    }
    let family = kind.family(args.residual_sd);
    let covariate_seed = args.seed.wrapping_mul(2).wrapping_add(1);
    let response_seed = args.seed.wrapping_mul(2);
    fs::create_dir_all(&args.out_dir)?;
    let mut files = Vec::new();
    let (names, theta) = if tournament {
        let t = match args.structure {
            Structure::Tree => Tournament::tree(args.players, args.matches_per_pair, covariate_seed),
            Structure::RoundRobin => Tournament::round_robin(args.players, args.matches_per_pair, covariate_seed),
            _ => Tournament::sparse_random(args.players, args.clique_size, args.pairs, covariate_seed),
        };
        let theta = Theta::new(vec![args.beta], vec![args.sigma])?;
        let spec = simulate_model(&t.template(family)?, &theta, response_seed)?;
        let y = spec.response().unwrap_or_default();
        write_tournament(&args.out_dir, &t, y)?;
        files.extend(["contests.csv", "players.csv"]);
        (vec!["beta", "sigma"], theta)
    } else {
        let (levels, psi, names) = match args.structure {
            Structure::TwoLevel => (2, vec![args.sigma1], vec!["alpha", "beta", "sigma1"]),
            _ => (3, vec![args.sigma1, args.sigma2], vec!["alpha", "beta", "sigma1", "sigma2"]),
        };
        let template = nested_template(levels, args.groups, 2, family, covariate_seed)?;
        let theta = Theta::new(vec![args.alpha, args.beta], psi)?;
        let spec = simulate_model(&template, &theta, response_seed)?;
        write_multilevel(&args.out_dir.join("data.csv"), &spec)?;
        files.push("data.csv");
        (names, theta)
    };
    let parameters: BTreeMap<&str, f64> = names.iter().copied().zip(theta.to_vec()).collect();
    let meta = json!({
        "structure": format!("{:?}", args.structure).to_lowercase(),
        "model": kind.name(),
        "seed": args.seed,
        "parameters": parameters,
        "beta": theta.beta,
        "psi": theta.psi,
        "residual_sd": if matches!(kind, ModelKind::MultilevelGaussian) { json!(args.residual_sd) } else { Value::Null },
        "files": files,
    });
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(args.out_dir.join("theta.json"), text)?;
    Ok(())
}
