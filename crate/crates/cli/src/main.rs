//! `foodauth`: simulate, fit, classify, cross-validate, compare and run
//! prior-sensitivity sweeps for the Bayesian semiparametric food
//! authentication model.
//!
//! Every command that writes files also writes `<out>.manifest.json`,
//! which `foodauth replay` reruns and verifies byte for byte.

mod manifest;
mod summary;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use foodauth_core::classify::{classify_dataset, loocv, Classifier, ClassificationReport, GroupPriors, LoocvOptions};
use foodauth_core::datagen::{load_csv, simulation_design, save_csv, simulate, validate, MixtureSpec};
use foodauth_core::diagnostics::{compare_model, ModelComparison};
use foodauth_core::domain::{
    Dataset, HyperSpec, Hyperparameters, MatrixSpec, McmcSettings, ModelKind, PosteriorChain, RUpdate, Reassign,
};
use foodauth_core::dpmm::{run_chain, run_chain_on_stream};
use foodauth_core::randmat::RngStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use manifest::{sibling, FileDigest, Manifest};
use summary::SummaryRow;

#[derive(Debug, Parser)]
#[command(name = "foodauth", version, about = "Bayesian semiparametric classification for food authentication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Draw a labelled dataset from a Gaussian mixture.
    Simulate(SimulateArgs),
    /// Run a BSP or BP chain and store its draws.
    Fit(FitArgs),
    /// Classify a dataset with a stored chain.
    Classify(ClassifyArgs),
    /// Leave-one-out cross-validation of BSP, BP or LDA.
    Loocv(LoocvArgs),
    /// LPML, DIC1-3 and AUC for several chains on the same data.
    Compare(CompareArgs),
    /// Refit over a grid of prior settings and tabulate posterior summaries.
    Sweep(SweepArgs),
    /// Check a dataset against the CSV schema and report its structure.
    Validate(ValidateArgs),
    /// Rerun a command from its manifest and verify every output digest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    Bsp,
    Bp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bsp => ModelKind::Bsp,
            ModelArg::Bp => ModelKind::Bp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierArg {
    Bsp,
    Bp,
    Lda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RUpdateArg {
    Atoms,
    Units,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReassignArg {
    Conditional,
    Marginal,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Mixture description JSON.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    pub spec: Option<PathBuf>,
    /// Use the shipped eight-component, two-group, two-level design.
    #[arg(long = "paper-sim")]
    pub builtin: bool,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Prior and sampler settings shared by every command that runs chains.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChainArgs {
    /// Hyperparameter JSON file or shipped preset name (`sim-s5`, `wine-s6`).
    #[arg(long)]
    pub hyper: Option<String>,
    /// MCMC settings JSON; individual flags below override its fields.
    #[arg(long)]
    pub mcmc: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thinning: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub r_update: Option<RUpdateArg>,
    #[arg(long, value_enum)]
    pub reassign: Option<ReassignArg>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Take natural logs of the responses on load.
    #[arg(long)]
    pub log: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Chain header path; draws go to `<out>.draws.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Summarize every parameter instead of `M`, two `tau` diagonals and two fixed effects.
    #[arg(long)]
    pub summary_all: bool,
    /// 1-based responses for the default summary.
    #[arg(long, value_delimiter = ',')]
    pub responses: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log: bool,
    /// `empirical`, `uniform`, or a JSON file holding one weight per group.
    #[arg(long, default_value = "empirical")]
    pub priors: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LoocvArgs {
    #[arg(long, value_enum)]
    pub model: ClassifierArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value = "empirical")]
    pub priors: String,
    /// Classify each unit with the full-data chain instead of refitting
    /// (an in-sample approximation).
    #[arg(long)]
    pub fast_loocv: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "FOODAUTH_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Comma-separated chain headers.
    #[arg(long, value_delimiter = ',', required = true)]
    pub chains: Vec<PathBuf>,
    /// Display names, one per chain; defaults to the chain model tags.
    #[arg(long, value_delimiter = ',')]
    pub names: Option<Vec<String>>,
    /// Classification reports, one per chain, to add an AUC column.
    #[arg(long, value_delimiter = ',')]
    pub reports: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    /// Grid JSON: `{"schema_version": 1, "rows": [{"a1": .., "a2": .., "tau0": ..}, ...]}`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, value_enum, default_value = "bsp")]
    pub model: ModelArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, value_delimiter = ',')]
    pub responses: Option<Vec<usize>>,
    #[arg(long, env = "FOODAUTH_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// CSV table; the full JSON goes to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub log: bool,
    /// Write the report as JSON (and a manifest).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Where the rerun writes its outputs; defaults to `<manifest dir>/replay`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Replay(args) => replay(&args),
        other => execute(other).map(|_| ()),
    }
}

/// Runs a command, writes its manifest and returns the output digests.
fn execute(command: Command) -> Result<Vec<FileDigest>> {
    let (inputs, outputs, primary) = match &command {
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Fit(a) => cmd_fit(a)?,
        Command::Classify(a) => cmd_classify(a)?,
        Command::Loocv(a) => cmd_loocv(a)?,
        Command::Compare(a) => cmd_compare(a)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::Validate(a) => match cmd_validate(a)? {
            Some(r) => r,
            None => return Ok(Vec::new()),
        },
        Command::Replay(_) => bail!("replay cannot be nested"),
    };
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let m = Manifest::new(command, &inputs, &outputs)?;
    let path = m.write(&primary)?;
    eprintln!("manifest: {}", path.display());
    Ok(m.outputs)
}

type Written = (Vec<PathBuf>, Vec<PathBuf>, PathBuf);

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn load_data(path: &Path, log: bool) -> Result<Dataset> {
    let loaded = load_csv(path, log).with_context(|| format!("loading {}", path.display()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(loaded.dataset)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build()?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Written> {
    let mut inputs = Vec::new();
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            inputs.push(path.clone());
            MixtureSpec::from_json(&text).with_context(|| format!("invalid mixture spec {}", path.display()))?
        }
        None => simulation_design(),
    };
    let data = simulate(&spec, a.n, &mut RngStream::new(a.seed, 0))?;
    save_csv(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} units to {}", data.n(), a.out.display());
    Ok((inputs, vec![a.out.clone()], a.out.clone()))
}

/// Resolved prior and sampler settings plus the files they came from.
struct ChainSetup {
    hyper: Hyperparameters,
    hyper_spec: HyperSpec,
    settings: McmcSettings,
    inputs: Vec<PathBuf>,
}

fn resolve_hyper_spec(name: Option<&str>) -> Result<(HyperSpec, Option<PathBuf>)> {
    let Some(name) = name else {
        eprintln!("warning: no --hyper given; using preset sim-s5");
        return Ok((HyperSpec::simulation_preset(), None));
    };
    let path = Path::new(name);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let spec = HyperSpec::from_json(&text).with_context(|| format!("invalid hyperparameter file {name}"))?;
        return Ok((spec, Some(path.to_path_buf())));
    }
    HyperSpec::preset(name)
        .map(|s| (s, None))
        .ok_or_else(|| anyhow!("`{name}` is neither a file nor a shipped preset (sim-s5, wine-s6)"))
}

fn resolve_chain(args: &ChainArgs, data: &Dataset) -> Result<ChainSetup> {
    let (hyper_spec, hyper_file) = resolve_hyper_spec(args.hyper.as_deref())?;
    let mut inputs: Vec<PathBuf> = hyper_file.into_iter().collect();
    let mut settings = match &args.mcmc {
        Some(path) => {
            inputs.push(path.clone());
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid MCMC settings {}", path.display()))?
        }
        None => McmcSettings::default(),
    };
    if let Some(v) = args.iterations {
        settings.iterations = v;
    }
    if let Some(v) = args.burn_in {
        settings.burn_in = v;
    }
    if let Some(v) = args.thinning {
        settings.thinning = v;
    }
    if let Some(v) = args.seed {
        settings.seed = v;
    }
    if let Some(v) = args.r_update {
        settings.r_update = match v {
            RUpdateArg::Atoms => RUpdate::Atoms,
            RUpdateArg::Units => RUpdate::Units,
        };
    }
    if let Some(v) = args.reassign {
        settings.reassign = match v {
            ReassignArg::Conditional => Reassign::Conditional,
            ReassignArg::Marginal => Reassign::Marginal,
        };
    }
    settings.validate()?;
    let hyper = hyper_spec.resolve(data.p(), data.k())?;
    Ok(ChainSetup {
        hyper,
        hyper_spec,
        settings,
        inputs,
    })
}

fn check_responses(responses: &[usize], p: usize) -> Result<()> {
    if let Some(bad) = responses.iter().find(|&&r| r == 0 || r > p) {
        bail!("response {bad} is outside 1..={p}");
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<Written> {
    let data = load_data(&a.data, a.log)?;
    let setup = resolve_chain(&a.chain, &data)?;
    let responses = a.responses.clone().unwrap_or_else(|| summary::default_responses(data.p()));
    check_responses(&responses, data.p())?;
    let chain = run_chain(&data, &setup.hyper, &setup.settings, a.model.into())?;
    let (header, draws) = chain.save(&a.out)?;
    let rows = if a.summary_all {
        summary::full_summary(&chain)
    } else {
        summary::table_summary(&chain, &responses)
    };
    print!("{}", summary::render(&rows));
    let summary_path = sibling(&a.out, ".summary.json");
    write_json(&summary_path, &rows)?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(setup.inputs);
    Ok((inputs, vec![header, draws, summary_path], a.out.clone()))
}

fn resolve_priors(spec: &str, inputs: &mut Vec<PathBuf>) -> Result<GroupPriors> {
    match spec {
        "empirical" => Ok(GroupPriors::Empirical),
        "uniform" => Ok(GroupPriors::Uniform),
        file => {
            let path = PathBuf::from(file);
            let text = fs::read_to_string(&path).with_context(|| format!("reading priors {file}"))?;
            let weights: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("priors {file} must be a JSON array"))?;
            inputs.push(path);
            Ok(GroupPriors::Explicit(weights))
        }
    }
}

fn file_stub(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the report JSON, the confusion CSV and one ROC CSV per group.
fn write_report(report: &ClassificationReport, out: &Path) -> Result<Vec<PathBuf>> {
    write_json(out, report)?;
    let confusion = sibling(out, ".confusion.csv");
    write_text(&confusion, &report.confusion_csv())?;
    let mut written = vec![out.to_path_buf(), confusion];
    for curve in &report.roc {
        let path = sibling(out, &format!(".roc-{}.csv", file_stub(&report.group_names[curve.positive])));
        write_text(&path, &curve.to_csv())?;
        written.push(path);
    }
    Ok(written)
}

fn print_report(report: &ClassificationReport) {
    println!("classifier: {}", report.classifier);
    for (u, name) in report.group_names.iter().enumerate() {
        println!("  error[{name}] = {:.4}", report.class_error[u]);
    }
    println!("  total error = {:.4}", report.total_error);
    for curve in &report.roc {
        println!("  AUC[{}] = {:.4}", report.group_names[curve.positive], curve.auc);
    }
}

fn chain_inputs(path: &Path) -> Vec<PathBuf> {
    vec![path.to_path_buf(), PosteriorChain::draws_path(path)]
}

fn cmd_classify(a: &ClassifyArgs) -> Result<Written> {
    let chain = PosteriorChain::load(&a.chain).with_context(|| format!("loading chain {}", a.chain.display()))?;
    let data = load_data(&a.data, a.log)?;
    let mut inputs = chain_inputs(&a.chain);
    inputs.push(a.data.clone());
    let priors = resolve_priors(&a.priors, &mut inputs)?;
    let report = classify_dataset(&chain, &data, &priors)?;
    print_report(&report);
    let outputs = write_report(&report, &a.out)?;
    Ok((inputs, outputs, a.out.clone()))
}

fn cmd_loocv(a: &LoocvArgs) -> Result<Written> {
    let data = load_data(&a.data, a.log)?;
    let setup = resolve_chain(&a.chain, &data)?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(setup.inputs.iter().cloned());
    let priors = resolve_priors(&a.priors, &mut inputs)?;
    let classifier = match a.model {
        ClassifierArg::Bsp => Classifier::Bsp,
        ClassifierArg::Bp => Classifier::Bp,
        ClassifierArg::Lda => Classifier::Lda,
    };
    let options = LoocvOptions { priors, fast: a.fast_loocv };
    let report = with_threads(a.threads, || loocv(&data, &setup.hyper, &setup.settings, classifier, &options))??;
    print_report(&report);
    let outputs = write_report(&report, &a.out)?;
    Ok((inputs, outputs, a.out.clone()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComparisonRow {
    #[serde(flatten)]
    metrics: ModelComparison,
    /// Mean of the one-vs-rest AUCs of the matching classification report.
    auc: Option<f64>,
}

fn mean_auc(report: &ClassificationReport) -> Option<f64> {
    (!report.roc.is_empty()).then(|| report.roc.iter().map(|c| c.auc).sum::<f64>() / report.roc.len() as f64)
}

fn render_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.metrics.name.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>12}  {:>12}  {:>12}  {:>12}  {:>8}\n",
        "model", "LPML", "DIC1", "DIC2", "DIC3", "AUC"
    );
    for r in rows {
        out.push_str(&format!("{:<width$}  {:>12.2}", r.metrics.name, r.metrics.lpml));
        for d in &r.metrics.dic {
            out.push_str(&format!("  {:>12.2}", d.dic));
        }
        match r.auc {
            Some(a) => out.push_str(&format!("  {a:>8.4}\n")),
            None => out.push_str(&format!("  {:>8}\n", "-")),
        }
    }
    out
}

fn cmd_compare(a: &CompareArgs) -> Result<Written> {
    let data = load_data(&a.data, a.log)?;
    if let Some(names) = &a.names {
        if names.len() != a.chains.len() {
            bail!("{} names given for {} chains", names.len(), a.chains.len());
        }
    }
    if let Some(reports) = &a.reports {
        if reports.len() != a.chains.len() {
            bail!("{} reports given for {} chains", reports.len(), a.chains.len());
        }
    }
    let mut inputs = Vec::new();
    let mut rows = Vec::new();
    for (i, path) in a.chains.iter().enumerate() {
        let chain = PosteriorChain::load(path).with_context(|| format!("loading chain {}", path.display()))?;
        inputs.extend(chain_inputs(path));
        let name = a
            .names
            .as_ref()
            .map(|n| n[i].clone())
            .unwrap_or_else(|| chain.model.to_string());
        let metrics = compare_model(&name, &chain, &data).with_context(|| format!("chain {}", path.display()))?;
        let auc = match &a.reports {
            Some(reports) => {
                let text = fs::read_to_string(&reports[i]).with_context(|| format!("reading {}", reports[i].display()))?;
                inputs.push(reports[i].clone());
                let report: ClassificationReport = serde_json::from_str(&text)?;
                mean_auc(&report)
            }
            None => None,
        };
        rows.push(ComparisonRow { metrics, auc });
    }
    inputs.push(a.data.clone());
    let table = render_comparison(&rows);
    print!("{table}");
    write_json(&a.out, &rows)?;
    let text_path = sibling(&a.out, ".txt");
    write_text(&text_path, &table)?;
    Ok((inputs, vec![a.out.clone(), text_path], a.out.clone()))
}

/// `tau0` override in a sweep grid: a scalar multiple of the identity or a
/// full matrix entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Tau0Override {
    Scale(f64),
    Matrix(MatrixSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridRow {
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    a1: Option<f64>,
    #[serde(default)]
    a2: Option<f64>,
    #[serde(default)]
    tau0: Option<Tau0Override>,
}

#[derive(Debug, Clone, Deserialize)]
struct Grid {
    schema_version: u32,
    rows: Vec<GridRow>,
}

#[derive(Debug, Clone, Serialize)]
struct SweepResult {
    row: usize,
    label: String,
    summary: Vec<SummaryRow>,
    error: Option<String>,
}

fn grid_label(r: &GridRow) -> String {
    if let Some(l) = &r.label {
        return l.clone();
    }
    let mut parts = Vec::new();
    if let Some(v) = r.a1 {
        parts.push(format!("a1={v}"));
    }
    if let Some(v) = r.a2 {
        parts.push(format!("a2={v}"));
    }
    match &r.tau0 {
        Some(Tau0Override::Scale(s)) => parts.push(format!("tau0={s}I")),
        Some(Tau0Override::Matrix(_)) => parts.push("tau0=matrix".into()),
        None => {}
    }
    if parts.is_empty() {
        "base".into()
    } else {
        parts.join(" ")
    }
}

fn apply_row(base: &HyperSpec, r: &GridRow) -> HyperSpec {
    let mut spec = base.clone();
    if let Some(v) = r.a1 {
        spec.a1 = v;
    }
    if let Some(v) = r.a2 {
        spec.a2 = v;
    }
    match &r.tau0 {
        Some(Tau0Override::Scale(s)) => spec.tau0 = MatrixSpec::ScaledIdentity { scaled_identity: *s },
        Some(Tau0Override::Matrix(m)) => spec.tau0 = m.clone(),
        None => {}
    }
    spec
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn sweep_csv(results: &[SweepResult], columns: &[String]) -> String {
    let mut out = String::from("row,label,status");
    for c in columns {
        out.push_str(&format!(",{0} mean,{0} sd", csv_quote(c)));
    }
    out.push('\n');
    for r in results {
        out.push_str(&format!("{},{}", r.row + 1, csv_quote(&r.label)));
        match &r.error {
            Some(e) => {
                out.push_str(&format!(",{}", csv_quote(&format!("error: {e}"))));
                for _ in columns {
                    out.push_str(",,");
                }
            }
            None => {
                out.push_str(",ok");
                for s in &r.summary {
                    out.push_str(&format!(",{:?},{:?}", s.mean, s.sd));
                }
            }
        }
        out.push('\n');
    }
    out
}

fn cmd_sweep(a: &SweepArgs) -> Result<Written> {
    let text = fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let grid: Grid = serde_json::from_str(&text).with_context(|| format!("invalid grid {}", a.grid.display()))?;
    if grid.schema_version != 1 {
        bail!("unsupported grid schema_version {}", grid.schema_version);
    }
    let data = load_data(&a.data, a.log)?;
    let setup = resolve_chain(&a.chain, &data)?;
    let responses = a.responses.clone().unwrap_or_else(|| summary::default_responses(data.p()));
    check_responses(&responses, data.p())?;
    let model: ModelKind = a.model.into();
    let run_row = |(i, row): (usize, &GridRow)| -> SweepResult {
        let outcome = apply_row(&setup.hyper_spec, row)
            .resolve(data.p(), data.k())
            .and_then(|h| run_chain_on_stream(&data, &h, &setup.settings, model, i as u64))
            .map(|chain| summary::table_summary(&chain, &responses));
        let (summary, error) = match outcome {
            Ok(s) => (s, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        SweepResult {
            row: i,
            label: grid_label(row),
            summary,
            error,
        }
    };
    let results: Vec<SweepResult> =
        with_threads(a.threads, || grid.rows.par_iter().enumerate().map(run_row).collect())?;
    for r in &results {
        if let Some(e) = &r.error {
            eprintln!("warning: row {} ({}) failed: {e}", r.row + 1, r.label);
        }
    }
    let columns: Vec<String> = {
        let mut c = Vec::new();
        if model == ModelKind::Bsp {
            c.push("M".to_string());
        }
        for r in &responses {
            c.push(format!("beta[{r},1]"));
            c.push(format!("tau[{r},{r}]"));
        }
        c
    };
    let table = sweep_csv(&results, &columns);
    print!("{table}");
    write_text(&a.out, &table)?;
    let json_path = sibling(&a.out, ".json");
    write_json(&json_path, &results)?;
    let mut inputs = vec![a.grid.clone(), a.data.clone()];
    inputs.extend(setup.inputs);
    Ok((inputs, vec![a.out.clone(), json_path], a.out.clone()))
}

fn cmd_validate(a: &ValidateArgs) -> Result<Option<Written>> {
    let data = load_data(&a.data, a.log)?;
    let report = validate(&data);
    println!(
        "n = {}, p = {}, q = {}, groups = {}, levels = {}",
        report.n, report.p, report.q, report.m, report.k
    );
    for (g, name) in data.group_names().iter().enumerate() {
        println!("  {name}: {} units", report.group_counts[g]);
    }
    for f in &report.findings {
        println!("  finding: {f}");
    }
    match &a.out {
        Some(out) => {
            write_json(out, &report)?;
            Ok(Some((vec![a.data.clone()], vec![out.clone()], out.clone())))
        }
        None => Ok(None),
    }
}

fn retarget(path: &Path, dir: &Path) -> PathBuf {
    dir.join(path.file_name().unwrap_or(path.as_os_str()))
}

/// Points the primary output of `command` into `dir`; every other output
/// is derived from it.
fn retarget_command(command: &mut Command, dir: &Path) {
    match command {
        Command::Simulate(a) => a.out = retarget(&a.out, dir),
        Command::Fit(a) => a.out = retarget(&a.out, dir),
        Command::Classify(a) => a.out = retarget(&a.out, dir),
        Command::Loocv(a) => a.out = retarget(&a.out, dir),
        Command::Compare(a) => a.out = retarget(&a.out, dir),
        Command::Sweep(a) => a.out = retarget(&a.out, dir),
        Command::Validate(a) => a.out = a.out.as_ref().map(|o| retarget(o, dir)),
        Command::Replay(_) => {}
    }
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    for input in &manifest.inputs {
        let now = manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            bail!("input {} changed since the manifest was written", input.path.display());
        }
    }
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.manifest.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut command = manifest.command.clone();
    retarget_command(&mut command, &dir);
    let outputs = execute(command)?;
    if outputs.len() != manifest.outputs.len() {
        bail!(
            "rerun wrote {} outputs, manifest lists {}",
            outputs.len(),
            manifest.outputs.len()
        );
    }
    let mut mismatches = 0;
    for (old, new) in manifest.outputs.iter().zip(&outputs) {
        let ok = old.sha256 == new.sha256;
        println!(
            "{} {} -> {}",
            if ok { "MATCH" } else { "DIFF " },
            old.path.display(),
            new.path.display()
        );
        mismatches += usize::from(!ok);
    }
    if mismatches > 0 {
        bail!("{mismatches} output(s) differ from the manifest");
    }
    Ok(())
}
