use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maialab::ablation::{rows_to_csv, run_ablation, STANDARD_CONFIGS};
use maialab::audit::{
    run_bias_audit, run_spurious_audit, write_dataset_bundle, SpuriousAuditOptions,
};
use maialab::config::{AblationFlags, RunConfig};
use maialab::eval::{evaluate, EvalManifest};
use maialab::fsutil::{write_atomic, write_json};
use maialab::run::{describe, RunError, Target, Workspace};
use maialab::system::System;
use maialab_core::audit::{PlantedBiasSpec, PlantedDataset, PlantedDatasetSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "maialab", version, about = "Describe and audit units of vision models with an experimenting agent")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `scripted` or a playbook name.
    #[arg(long, global = true)]
    backbone: Option<String>,
    /// Round budget per session.
    #[arg(long, global = true)]
    budget: Option<u32>,
    /// Run directory (default: <output_dir>/<run_id>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Units {
    /// Neuron address, e.g. synthetic:table_a2:stripes or resnet152:layer3:7.
    #[arg(long)]
    neuron: Vec<String>,
    /// `table_a2` or a file with one address per line.
    #[arg(long)]
    roster: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run description sessions.
    Describe(Units),
    /// Score reports listed in an evaluation manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
    },
    #[command(subcommand)]
    Audit(Audit),
    /// Describe units under tool ablations and compare.
    Ablate {
        #[command(flatten)]
        units: Units,
        /// Comma-separated subset of full, exemplars-only, generation-only.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<String>,
    },
    #[command(subcommand)]
    Exemplars(ExemplarsCmd),
}

#[derive(Subcommand)]
enum Audit {
    /// Filter a planted final layer with the agent and compare readouts.
    Spurious {
        /// `default` or a JSON planted-dataset spec.
        #[arg(long)]
        planted: Option<String>,
        #[arg(long)]
        random_subsets: Option<usize>,
    },
    /// Look for the context a planted classifier depends on.
    Bias {
        #[arg(long)]
        class: Option<String>,
        /// Context concept, or `none` for an unbiased classifier.
        #[arg(long)]
        planted_bias: Option<String>,
    },
}

#[derive(Subcommand)]
enum ExemplarsCmd {
    /// Compute and cache top exemplars, writing their masked PNGs.
    Build(Units),
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(g: &Global) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(g.config.as_deref(), std::env::vars())
        .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(b) = &g.backbone {
        config.backbone = b.clone();
    }
    if let Some(b) = g.budget {
        config.round_budget = b;
    }
    config.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(config)
}

fn targets(ws: &Workspace, units: &Units) -> Result<Vec<Target>, Failure> {
    let mut out = Vec::new();
    if let Some(r) = &units.roster {
        out.extend(ws.resolve_roster(r)?);
    }
    for n in &units.neuron {
        out.push(ws.resolve(n)?);
    }
    if out.is_empty() {
        return Err(Failure::Config("no neurons given; use --neuron or --roster".into()));
    }
    Ok(out)
}

/// Outcome printed on stdout: the run directory and whether anything failed.
struct Done {
    run_dir: PathBuf,
    partial: bool,
    summary: serde_json::Value,
}

fn finish(ws: Workspace, partial: bool, summary: serde_json::Value) -> Result<Done, Failure> {
    let run_dir = ws.run_dir.clone();
    let manifest = ws.finish()?;
    Ok(Done {
        run_dir,
        partial: partial || !manifest.failures.is_empty(),
        summary,
    })
}

fn check_playbook(config: &RunConfig, kind: maialab_core::ReportKind) -> Result<(), Failure> {
    maialab::backbone::Playbook::resolve(&config.backbone, kind)
        .map(|_| ())
        .map_err(|e| Failure::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<Done, Failure> {
    let config = load_config(&cli.global)?;
    let out = cli.global.out.as_deref();
    match cli.command {
        Command::Describe(units) => {
            check_playbook(&config, maialab_core::ReportKind::NeuronDescription)?;
            let mut ws = Workspace::open(config, "describe", out)?;
            let t = targets(&ws, &units)?;
            let results = describe(&mut ws, &t)?;
            let partial = results
                .iter()
                .any(|r| r.error.is_some() || r.report.as_ref().is_some_and(|r| !r.parse_ok));
            let summary = json!(results
                .iter()
                .map(|r| json!({
                    "neuron": r.neuron,
                    "labels": r.report.as_ref().map(|r| r.labels.clone()),
                    "agreement": r.agreement,
                    "error": r.error,
                }))
                .collect::<Vec<_>>());
            finish(ws, partial, summary)
        }
        Command::Eval { manifest } => {
            let text = std::fs::read_to_string(&manifest)
                .map_err(|e| Failure::Config(format!("eval manifest {}: {e}", manifest.display())))?;
            let m: EvalManifest = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("eval manifest {}: {e}", manifest.display())))?;
            if m.entries.is_empty() {
                return Err(Failure::Config("eval manifest has no entries".into()));
            }
            let mut ws = Workspace::open(config, "eval", out)?;
            let resolve = |n: &str| -> Result<std::sync::Arc<dyn System>, String> {
                ws.resolve(n).map(|t| t.system).map_err(|e| e.to_string())
            };
            let report = evaluate(&m, &ws.vocab, ws.clients.generator.dispatch(), &resolve, ws.config.seed);
            report.write(&ws.run_dir).map_err(runtime)?;
            let (j, c) = (ws.run_dir.join("eval.json"), ws.run_dir.join("eval.csv"));
            ws.artifact(&j);
            ws.artifact(&c);
            ws.manifest.failures.extend(report.failures.iter().cloned());
            let summary = json!({ "rows": report.rows, "partial": report.partial });
            finish(ws, report.partial, summary)
        }
        Command::Audit(Audit::Spurious {
            planted,
            random_subsets,
        }) => {
            check_playbook(&config, maialab_core::ReportKind::SpuriousClassification)?;
            let spec = match planted.as_deref() {
                None => return Err(Failure::Config("no dataset: pass --planted default or a spec file".into())),
                Some("default") => PlantedDatasetSpec::with_seed(config.seed),
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| Failure::Config(format!("planted spec {path}: {e}")))?;
                    serde_json::from_str(&text)
                        .map_err(|e| Failure::Config(format!("planted spec {path}: {e}")))?
                }
            };
            let data = PlantedDataset::generate(&spec).map_err(|e| Failure::Config(e.to_string()))?;
            let mut ws = Workspace::open(config, "audit spurious", out)?;
            let bundle = ws.run_dir.join("dataset");
            write_dataset_bundle(&data, &bundle).map_err(runtime)?;
            for f in ["features.csv", "labels.csv", "tags.json", "pairings.json"] {
                ws.artifact(&bundle.join(f));
            }
            let mut opts = SpuriousAuditOptions::with_seed(spec.seed);
            opts.dataset = spec;
            if let Some(n) = random_subsets {
                opts.random_subsets = n;
            }
            let setup = ws.agent_setup(None);
            let units = ws.run_dir.join("units");
            let audit = run_spurious_audit(&setup, &opts, Some(&units)).map_err(runtime)?;
            let (csv_path, json_path) = (ws.run_dir.join("results.csv"), ws.run_dir.join("results.json"));
            write_atomic(&csv_path, audit.to_csv().map_err(runtime)?.as_bytes()).map_err(runtime)?;
            write_json(&json_path, &audit).map_err(runtime)?;
            ws.artifact(&csv_path);
            ws.artifact(&json_path);
            for v in &audit.verdicts {
                let dir = units.join(format!("planted_final_{}", v.column));
                for f in ["transcript.jsonl", "report.json", "log.jsonl"] {
                    if dir.join(f).exists() {
                        ws.artifact(&dir.join(f));
                    }
                }
            }
            let partial = !audit.exact_sparsity || audit.verdicts.iter().any(|v| v.excluded_because.is_some());
            finish(ws, partial, json!({ "rows": audit.rows }))
        }
        Command::Audit(Audit::Bias {
            class,
            planted_bias,
        }) => {
            check_playbook(&config, maialab_core::ReportKind::BiasIdentification)?;
            let spec = match (class, planted_bias) {
                (None, None) => PlantedBiasSpec::for_seed(config.seed),
                (Some(c), ctx) => {
                    let ctx = ctx.filter(|c| c != "none");
                    PlantedBiasSpec::new(&c, ctx.as_deref(), config.seed)
                }
                (None, Some(_)) => return Err(Failure::Config("--planted-bias needs --class".into())),
            };
            let mut ws = Workspace::open(config, "audit bias", out)?;
            for c in std::iter::once(&spec.class_concept).chain(&spec.context) {
                if !ws.vocab.is_canonical(c) {
                    return Err(Failure::Config(format!("`{c}` is not a vocabulary concept")));
                }
            }
            let setup = ws.agent_setup(None);
            let dir = ws.run_dir.join("units").join(format!("planted_bias_{}", spec.class_concept));
            let audit = run_bias_audit(&setup, spec, Some(&dir)).map_err(runtime)?;
            let path = ws.run_dir.join("bias_report.json");
            write_json(&path, &audit).map_err(runtime)?;
            ws.artifact(&path);
            for f in ["transcript.jsonl", "report.json", "log.jsonl"] {
                ws.artifact(&dir.join(f));
            }
            let partial = !audit.report.parse_ok;
            finish(ws, partial, json!({ "bias": audit.report.bias_text, "found": audit.found }))
        }
        Command::Ablate { units, configs } => {
            check_playbook(&config, maialab_core::ReportKind::NeuronDescription)?;
            let flags: Vec<AblationFlags> = if configs.is_empty() {
                STANDARD_CONFIGS.to_vec()
            } else {
                configs
                    .iter()
                    .map(|c| {
                        STANDARD_CONFIGS
                            .iter()
                            .copied()
                            .find(|f| f.name() == c)
                            .ok_or_else(|| Failure::Config(format!("unknown ablation config `{c}`")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let mut ws = Workspace::open(config, "ablate", out)?;
            let t = targets(&ws, &units)?;
            let index = if flags.iter().any(|f| f.exemplars) {
                Some(ws.exemplar_index()?)
            } else {
                None
            };
            let rows = run_ablation(&ws, &t, &flags, index)?;
            let (csv_path, json_path) = (ws.run_dir.join("ablation.csv"), ws.run_dir.join("ablation.json"));
            write_atomic(&csv_path, rows_to_csv(&rows).map_err(runtime)?.as_bytes()).map_err(runtime)?;
            write_json(&json_path, &rows).map_err(runtime)?;
            ws.artifact(&csv_path);
            ws.artifact(&json_path);
            let partial = rows.iter().any(|r| !r.failures.is_empty() || r.parsed < r.units);
            for r in &rows {
                ws.manifest.failures.extend(r.failures.iter().map(|f| format!("{}: {f}", r.config)));
            }
            finish(ws, partial, json!(rows_to_csv(&rows).map_err(runtime)?))
        }
        Command::Exemplars(ExemplarsCmd::Build(units)) => {
            let mut config = config;
            if config.cache_dir.is_none() {
                let base = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
                config.cache_dir = Some(base.join("cache"));
            }
            let mut ws = Workspace::open(config, "exemplars build", out)?;
            let t = targets(&ws, &units)?;
            let index = ws.exemplar_index()?;
            let mut built = Vec::new();
            for target in &t {
                let set = index.build(target.system.as_ref()).map_err(runtime)?;
                if let Some(dir) = index.write_pngs(target.system.as_ref()).map_err(runtime)? {
                    built.push(json!({
                        "neuron": target.address.to_string(),
                        "dir": dir,
                        "floor": set.activation_floor,
                        "top": set.records.first().map(|r| r.image_id.clone()),
                    }));
                }
            }
            let path = ws.run_dir.join("exemplars.json");
            write_json(&path, &built).map_err(runtime)?;
            ws.artifact(&path);
            finish(ws, false, json!(built))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(done) => {
            let out = json!({
                "run_dir": done.run_dir,
                "status": if done.partial { "partial" } else { "ok" },
                "summary": done.summary,
            });
            println!("{}", serde_json::to_string_pretty(&out).expect("json"));
            if done.partial {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(Failure::Config(message)) => {
            eprintln!("{}", json!({ "error": "config", "message": message }));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(message)) => {
            eprintln!("{}", json!({ "error": "runtime", "message": message }));
            ExitCode::from(3)
        }
    }
}
