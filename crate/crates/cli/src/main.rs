//! Command-line front end: fit, predict, evaluate, simulate and diagnose.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aspect_bias::diagnostics::{self, GewekeConfig, TraceSummary};
use aspect_bias::evaluation::{
    self, FcpAggregation, MetricOptions, TieCredit, DEFAULT_MAX_RATINGS, DEFAULT_MIN_GAP,
};
use aspect_bias::io::{self, FittedModel, Manifest};
use aspect_bias::synthetic::{self, SimulationConfig};
use aspect_bias::{
    BaselineKind, ColdStart, CutPoints, Error, Hyperparameters, LatentState, PosteriorSamples,
    RatingsDataset, RunConfig, Sampler, SamplerFailure, Snapshot,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aspect-bias", version, about = "Ordinal multi-aspect ratings with user-group biases")]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, env = "ASPECT_BIAS_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write a posterior archive.
    Fit(FitArgs),
    /// Expected ratings and bias labels for user-item pairs.
    Predict(PredictArgs),
    /// K-fold cross-validation plus report tables.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic ratings file and its ground truth.
    Simulate(SimulateArgs),
    /// Sampler self-checks.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct ModelOpts {
    /// Model variant.
    #[arg(long)]
    model: Option<BaselineKind>,
    /// Number of user groups.
    #[arg(long)]
    groups: Option<usize>,
    /// Number of rating levels K.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with optional `model`, `[run]` and `[hyperparameters]`
    /// entries; an archive sidecar works as is.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field delimiter of the ratings file.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// Sample independent blocks on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Ratings file: user_id, item_id, then one column per aspect.
    #[arg(long)]
    input: PathBuf,
    /// Model archive to write.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    opts: ModelOpts,
}

#[derive(Args)]
struct PredictArgs {
    /// Model archive written by `fit`.
    #[arg(long)]
    archive: PathBuf,
    /// Pairs file with user_id and item_id columns.
    #[arg(long)]
    input: PathBuf,
    /// Prediction table to write (tab-separated).
    #[arg(long)]
    output: PathBuf,
    /// Reject users and items absent from training.
    #[arg(long)]
    strict: bool,
    /// Bias components within this distance of zero are neutral.
    #[arg(long, default_value_t = 0.5)]
    bias_threshold: f64,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ties {
    None,
    Half,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory for report tables.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Further variants to cross-validate and test against `--model`.
    #[arg(long, value_delimiter = ',')]
    compare: Vec<BaselineKind>,
    /// Credit for pairs with tied predictions in FCP.
    #[arg(long, value_enum, default_value_t = Ties::None)]
    ties: Ties,
    /// Average FCP per user instead of pooling pairs.
    #[arg(long)]
    fcp_per_user: bool,
    #[command(flatten)]
    opts: ModelOpts,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ratings file to write; ground truth goes next to it.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 50)]
    items: usize,
    #[arg(long, default_value_t = 4)]
    aspects: usize,
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Probability that a user rates an item.
    #[arg(long, default_value_t = 0.2)]
    density: f64,
    /// True cut-points; evenly spaced over [-5, 7] when unset.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    cutpoints: Vec<f64>,
    /// Minimum distance between true group biases.
    #[arg(long, default_value_t = 0.0)]
    separation: f64,
    /// Cap on ratings per item.
    #[arg(long)]
    max_per_item: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draws per Pólya-Gamma moment check.
    #[arg(long, default_value_t = 1_000_000)]
    pg_draws: usize,
    /// Forward draws and chain sweeps of the joint-distribution test; 0 skips it.
    #[arg(long, default_value_t = 50_000)]
    geweke_iters: usize,
    /// Summarise the log-density trace of this archive.
    #[arg(long)]
    archive: Option<PathBuf>,
    /// Table to write (tab-separated); stdout when unset.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// A failed command: the error plus, for numerical failures, a dump file.
struct Failure {
    error: Error,
    dump: Option<PathBuf>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { error, dump: None }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "Usage", "message": first }));
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({ "error": "Threads", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Simulate(a) => simulate(a),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut line = serde_json::json!({
                "error": f.error.kind(),
                "message": f.error.to_string(),
            });
            if let Some(path) = &f.dump {
                line["state_dump"] = path.display().to_string().into();
            }
            eprintln!("{line}");
            ExitCode::from(if f.error.is_numerical() { 2 } else { 1 })
        }
    }
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Overlays the keys of `patch` onto the serialized form of `base`.
fn overlay<T>(base: &T, patch: Option<&toml::Table>) -> Result<T, Error>
where
    T: Clone + serde::Serialize + serde::de::DeserializeOwned,
{
    let Some(patch) = patch else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).map_err(parse_err)?;
    for (k, v) in patch {
        table.insert(k.clone(), v.clone());
    }
    table.try_into().map_err(parse_err)
}

fn parse_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(e.to_string())
}

struct Resolved {
    kind: BaselineKind,
    hp: Hyperparameters,
    cfg: RunConfig,
}

/// Defaults, then the config file, then explicit flags.
fn resolve(opts: &ModelOpts, num_aspects: usize) -> Result<Resolved, Error> {
    let file: Option<toml::Table> = match &opts.config {
        Some(path) => Some(std::fs::read_to_string(path)?.parse().map_err(parse_err)?),
        None => None,
    };
    let section = |name: &str| -> Result<Option<&toml::Table>, Error> {
        match file.as_ref().and_then(|f| f.get(name)) {
            None => Ok(None),
            Some(toml::Value::Table(t)) => Ok(Some(t)),
            Some(_) => Err(Error::Parse(format!("`{name}` must be a table"))),
        }
    };
    let file_kind = match file.as_ref().and_then(|f| f.get("model")) {
        Some(toml::Value::String(s)) => Some(s.parse::<BaselineKind>()?),
        Some(_) => return Err(Error::Parse("`model` must be a string".into())),
        None => None,
    };
    let kind = opts.model.or(file_kind).unwrap_or(BaselineKind::FULL);

    let hp_patch = section("hyperparameters")?;
    let mut hp = overlay(&Hyperparameters::default_for(num_aspects), hp_patch)?;
    let alpha_given = hp_patch.is_some_and(|t| t.contains_key("alpha"));
    if let Some(g) = opts.groups {
        hp = hp.regrouped(g);
    } else if !alpha_given && hp.alpha.len() != hp.num_groups {
        hp = hp.regrouped(hp.num_groups);
    }

    let mut defaults = RunConfig::default_for(opts.levels);
    defaults.parallel_blocks = true;
    let mut cfg = overlay(&defaults, section("run")?)?;
    if let Some(x) = opts.burn_in {
        cfg.burn_in = x;
    }
    if let Some(x) = opts.samples {
        cfg.num_samples = x;
    }
    if let Some(x) = opts.thin {
        cfg.thinning = x;
    }
    if let Some(x) = opts.seed {
        cfg.seed = x;
    }
    if opts.serial {
        cfg.parallel_blocks = false;
    }
    hp.validate(num_aspects)?;
    cfg.validate(opts.levels)?;
    Ok(Resolved { kind, hp, cfg })
}

fn manifest(command: &str, seed: u64, config_hash: String, dataset_hash: String) -> Manifest {
    Manifest {
        command: command.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_hash,
        dataset_hash,
        git_describe: io::git_describe(),
    }
}

fn dump_state(path: &Path, error: &Error, state: &LatentState) -> Option<PathBuf> {
    let value = serde_json::json!({
        "error": error.to_string(),
        "snapshot": Snapshot::of(state, false),
        "latent_responses": state.v.iter().map(|v| v.as_slice().to_vec()).collect::<Vec<_>>(),
        "auxiliaries": state.omega,
    });
    std::fs::write(path, serde_json::to_string_pretty(&value).ok()? + "\n").ok()?;
    Some(path.to_path_buf())
}

/// Runs one chain; numerical failures leave a state dump at `dump`.
fn run_chain(
    data: &RatingsDataset,
    r: &Resolved,
    dump: &Path,
) -> CliResult<PosteriorSamples> {
    let sampler = Sampler::new(data, &r.hp, &r.cfg, r.kind)?;
    let state = sampler.init_state()?;
    sampler.run_capturing(state).map_err(|SamplerFailure { error, state }| {
        let dump = error.is_numerical().then(|| dump_state(dump, &error, &state)).flatten();
        Failure { error, dump }
    })
}

fn write_fit_log(path: &Path, samples: &PosteriorSamples, burn_in: usize) -> Result<(), Error> {
    let mut text = String::from("sweep\tstage\tlog_density\n");
    for (t, lp) in samples.sweep_log.iter().enumerate() {
        let stage = if t < burn_in { "burn-in" } else { "sample" };
        text.push_str(&format!("{}\t{stage}\t{lp}\n", t + 1));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn fit(a: FitArgs) -> CliResult<()> {
    let data = io::read_ratings(&a.input, a.opts.levels, a.opts.delimiter)?;
    let r = resolve(&a.opts, data.num_aspects())?;
    let samples = run_chain(&data, &r, &sibling(&a.output, ".failure.json"))?;
    write_fit_log(&sibling(&a.output, ".log.tsv"), &samples, r.cfg.burn_in)?;
    io::write_model(&a.output, &FittedModel::new(samples, &data))?;
    io::write_sidecar(&io::sidecar_path(&a.output), r.kind, &r.hp, &r.cfg)?;
    io::write_manifest(
        &sibling(&a.output, ".manifest.json"),
        &manifest("fit", r.cfg.seed, r.cfg.config_hash(&r.hp), data.content_hash()),
    )?;
    Ok(())
}

fn predict(a: PredictArgs) -> CliResult<()> {
    let model = io::read_model(&a.archive)?;
    let pairs = io::read_pairs(&a.input, a.delimiter)?;
    let cold = if a.strict { ColdStart::Strict } else { ColdStart::Marginal };
    let rows = pairs
        .into_iter()
        .map(|(user, item)| {
            let p = model.predict(&user, &item, cold)?;
            let labels = model.bias_labels(&user, a.bias_threshold, cold)?;
            Ok((user, item, p.expected, labels))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    io::write_predictions(&a.output, &model.aspect_names, &rows)?;
    let s = &model.samples;
    io::write_manifest(
        &sibling(&a.output, ".manifest.json"),
        &manifest(
            "predict",
            s.seed,
            io::file_hash(&a.archive)?,
            io::file_hash(&a.input)?,
        ),
    )?;
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let data = io::read_ratings(&a.input, a.opts.levels, a.opts.delimiter)?;
    let r = resolve(&a.opts, data.num_aspects())?;
    std::fs::create_dir_all(&a.output).map_err(Error::from)?;
    let out = |name: &str| a.output.join(name);
    let opts = MetricOptions {
        ties: match a.ties {
            Ties::None => TieCredit::None,
            Ties::Half => TieCredit::Half,
        },
        aggregation: if a.fcp_per_user { FcpAggregation::PerUser } else { FcpAggregation::Pooled },
    };
    let numerical = |error: Error| -> Failure {
        let dump = error.is_numerical().then(|| {
            let path = out("failure.json");
            let value = serde_json::json!({
                "error": error.to_string(),
                "model": r.kind.name(),
                "run": &r.cfg,
                "hyperparameters": &r.hp,
            });
            std::fs::write(&path, value.to_string()).ok().map(|_| path)
        });
        Failure { error, dump: dump.flatten() }
    };

    let mut kinds = vec![r.kind];
    kinds.extend(a.compare.iter().copied().filter(|k| *k != r.kind));
    let mut runs = Vec::new();
    for &kind in &kinds {
        runs.push(
            evaluation::cross_validate(kind, &data, &r.hp, &r.cfg, a.folds, r.cfg.seed, opts)
                .map_err(numerical)?,
        );
    }
    let mut reports = Vec::new();
    for cv in &runs {
        reports.push(cv.summary());
        for (f, fold) in cv.folds.iter().enumerate() {
            let mut fold = fold.clone();
            fold.model = format!("{}:fold{}", cv.model, f + 1);
            reports.push(fold);
        }
    }
    io::write_evaluation_report(&out("report.tsv"), &reports, data.aspect_names())?;

    let mut ll = String::from("observation\tuser_id\titem_id");
    for cv in &runs {
        ll.push('\t');
        ll.push_str(&cv.model);
    }
    ll.push('\n');
    for (n, obs) in data.observations().iter().enumerate() {
        ll.push_str(&format!("{n}\t{}\t{}", data.user_ids()[obs.user], data.item_ids()[obs.item]));
        for cv in &runs {
            ll.push_str(&format!("\t{}", cv.per_observation_loglik[n]));
        }
        ll.push('\n');
    }
    std::fs::write(out("test_loglik.tsv"), ll).map_err(Error::from)?;

    if runs.len() > 1 {
        let mut text = String::from("model\tbaseline\tmean_difference\tt\tp_greater\n");
        for cv in &runs[1..] {
            let (t, p) = aspect_bias::stats::paired_t_test_greater(
                &runs[0].per_observation_loglik,
                &cv.per_observation_loglik,
            );
            let diff = aspect_bias::stats::mean(&runs[0].per_observation_loglik)
                - aspect_bias::stats::mean(&cv.per_observation_loglik);
            text.push_str(&format!("{}\t{}\t{diff}\t{t}\t{p}\n", runs[0].model, cv.model));
        }
        std::fs::write(out("loglik_tests.tsv"), text).map_err(Error::from)?;
    }

    // Plot data from one fit on every rating.
    let samples = run_chain(&data, &r, &out("failure.json"))?;
    let c = CutPoints::new(samples.mean_cutpoints()?)?;
    let cs = c.as_slice();
    let (lo, hi) = match (cs.first(), cs.last()) {
        (Some(&f), Some(&l)) => (f - 3.0, l + 3.0),
        _ => (-3.0, 3.0),
    };
    io::write_category_curves(&out("category_curves.tsv"), &c, lo, hi, 200)?;
    let groups = samples.modal_groups()?;
    let mut sizes = vec![0; samples.num_groups()];
    for &g in &groups {
        sizes[g] += 1;
    }
    io::write_group_bias(&out("group_bias.tsv"), &samples.mean_group_bias()?, &sizes, data.aspect_names())?;
    io::write_group_sd(
        &out("group_sd.tsv"),
        &evaluation::group_sd_points(&groups, &data),
        data.item_ids(),
        data.aspect_names(),
    )?;
    let deltas = evaluation::intrinsic_delta_analysis(&samples, &data, DEFAULT_MAX_RATINGS, DEFAULT_MIN_GAP)?;
    io::write_intrinsic_deltas(
        &out("intrinsic_deltas.tsv"),
        &deltas.deltas,
        data.user_ids(),
        data.item_ids(),
        data.aspect_names(),
    )?;
    io::write_delta_bins(&out("delta_bins.tsv"), &deltas.bins_int, &deltas.bins_avg)?;
    io::write_manifest(
        &out("manifest.json"),
        &manifest("evaluate", r.cfg.seed, r.cfg.config_hash(&r.hp), data.content_hash()),
    )?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let hp = Hyperparameters::with_groups(a.aspects, a.groups);
    let mut cfg = SimulationConfig::new(a.users, a.items, a.levels, a.density);
    if !a.cutpoints.is_empty() {
        cfg.cutpoints = a.cutpoints.clone();
    }
    cfg.min_bias_separation = a.separation;
    cfg.max_ratings_per_item = a.max_per_item;
    cfg.seed = a.seed;
    let (data, truth) = synthetic::generate(&hp, &cfg)?;
    io::write_ratings(&a.output, &data, a.delimiter)?;
    let truth_json = serde_json::json!({ "simulation": cfg, "hyperparameters": hp, "truth": truth });
    std::fs::write(sibling(&a.output, ".truth.json"), truth_json.to_string() + "\n").map_err(Error::from)?;
    let config_hash = RunConfig::default_for(a.levels).config_hash(&hp);
    io::write_manifest(
        &sibling(&a.output, ".manifest.json"),
        &manifest("simulate", a.seed, config_hash, data.content_hash()),
    )?;
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> CliResult<()> {
    let mut rows = vec!["check\tname\tstatistic\tvalue\tpass".to_string()];
    for c in [0.0, 0.1, 1.0, 4.0] {
        let r = diagnostics::pg_moment_check(c, a.pg_draws, a.seed);
        rows.push(format!(
            "pg_mean\tc={c}\tz\t{}\t{}",
            r.z,
            r.z.abs() <= 3.0
        ));
    }
    if a.geweke_iters > 0 {
        let mut cfg = GewekeConfig::small(a.seed);
        cfg.forward_draws = a.geweke_iters;
        cfg.chain_sweeps = a.geweke_iters;
        cfg.num_batches = cfg.num_batches.min(a.geweke_iters / 2).max(2);
        let report = diagnostics::geweke_test(&cfg)?;
        for s in &report.stats {
            rows.push(format!(
                "geweke\t{}\tz_moment{}\t{}\t{}",
                s.name,
                s.moment,
                s.z,
                s.z.abs() <= 4.0
            ));
        }
    }
    if let Some(path) = &a.archive {
        let model = io::read_model(path)?;
        let t = TraceSummary::of(&model.samples.sweep_log, 20)?;
        for (stat, v) in [
            ("mean", t.mean),
            ("sd", t.sd),
            ("std_error", t.std_error),
            ("effective_size", t.effective_size),
            ("slope", t.slope),
        ] {
            rows.push(format!("trace\tlog_density\t{stat}\t{v}\t"));
        }
    }
    let text = rows.join("\n") + "\n";
    match &a.output {
        Some(path) => {
            std::fs::write(path, text).map_err(Error::from)?;
            io::write_manifest(
                &sibling(path, ".manifest.json"),
                &manifest("diagnose", a.seed, String::new(), String::new()),
            )?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
