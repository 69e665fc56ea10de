mod settings;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use gestation_core::analytics::{self, ConceptSet, IndexEvents};
use gestation_core::concepts::{self, VocabularyEntry};
use gestation_core::eval::{self, Weighting};
use gestation_core::ingest::{self, EventTable, PersonTable};
use gestation_core::pipeline::{self, RunOptions};
use gestation_core::{synth, ConceptId, Domain, Error, Registries};

use settings::{resolve_input, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "gestation", version, about = "Infer pregnancy episodes from dated clinical events")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(long, global = true)]
    persons: Option<PathBuf>,
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    /// GA concept file; the bundled set is used when omitted.
    #[arg(long, global = true)]
    ga_concepts: Option<PathBuf>,
    /// Delivery concept file; the bundled set is used when omitted.
    #[arg(long, global = true)]
    dod_concepts: Option<PathBuf>,
    #[arg(long, global = true)]
    index_events: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    window_days: Option<i64>,
    #[arg(long, global = true)]
    match_min: Option<i64>,
    #[arg(long, global = true)]
    match_max: Option<i64>,
    /// First delivery date counted as peri-pandemic.
    #[arg(long, global = true, value_parser = parse_date)]
    cutoff: Option<NaiveDate>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base directory for inputs not found relative to the working directory.
    #[arg(long, global = true, env = settings::DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keyword search over a vocabulary table.
    Phenotype(PhenotypeArgs),
    /// Infer gestation starts, deliveries and episodes.
    Infer(InferArgs),
    /// Place index events on episode timelines.
    Timeline(TimelineArgs),
    /// Week histogram and stratified cohort table.
    Stats(StatsArgs),
    /// Generate a synthetic cohort with ground truth.
    Simulate(SimulateArgs),
    /// Cohen's kappa for a confusion matrix, or scoring against truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct PhenotypeArgs {
    #[arg(long)]
    vocabulary: Option<PathBuf>,
    /// Repeatable; defaults to trimester, gestation, pregnan.
    #[arg(long = "keyword")]
    keywords: Vec<String>,
    /// Repeatable; defaults to Condition, Observation, Procedure, Measurement.
    #[arg(long = "domain")]
    domains: Vec<String>,
    #[arg(long)]
    include_nonstandard: bool,
    #[arg(long)]
    include_invalid: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// Also write ga_cohort.csv and dod_cohort.csv.
    #[arg(long)]
    debug_cohorts: bool,
}

#[derive(Debug, Args)]
struct TimelineArgs {
    #[arg(long)]
    episodes: Option<PathBuf>,
    /// Concept-set file restricting which index events are used.
    #[arg(long)]
    index_concepts: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    episodes: Option<PathBuf>,
    #[arg(long)]
    index_concepts: Option<PathBuf>,
    /// NAME=PATH of a comorbidity concept set; repeatable.
    #[arg(long = "comorbidity")]
    comorbidities: Vec<String>,
    /// TOML file with cutoff, optional windows and threshold.
    #[arg(long)]
    strata: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<u64>,
    /// Write raw counts instead of masking small cells.
    #[arg(long)]
    unsuppressed: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n_persons: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, conflicts_with_all = ["truth", "episodes"])]
    matrix: Option<PathBuf>,
    #[arg(long, default_value = "linear")]
    weighting: Weighting,
    #[arg(long, requires = "episodes")]
    truth: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<PathBuf>,
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    gestation_core::parse_iso_date(s).ok_or_else(|| format!("`{s}` is not a YYYY-MM-DD date"))
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    MissingInput(String),
    Output(PathBuf, std::io::Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Config(_) | Error::Generation(_)) => 3,
            CliError::Core(Error::Invariant(_)) => 4,
            CliError::Core(_) | CliError::MissingInput(_) => 2,
            CliError::Output(..) => 1,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "input error",
            3 => "configuration error",
            4 => "internal invariant violated",
            _ => "output error",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::MissingInput(what) => write!(f, "{what}"),
            CliError::Output(path, e) => write!(f, "cannot write {}: {e}", path.display()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gestation: {}: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}

fn effective_config(common: &CommonArgs) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let set = |slot: &mut Option<PathBuf>, flag: &Option<PathBuf>| {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    };
    set(&mut cfg.persons, &common.persons);
    set(&mut cfg.events, &common.events);
    set(&mut cfg.ga_concepts, &common.ga_concepts);
    set(&mut cfg.dod_concepts, &common.dod_concepts);
    set(&mut cfg.index_events, &common.index_events);
    set(&mut cfg.out, &common.out);
    if let Some(v) = common.window_days {
        cfg.engine.window_days = v;
    }
    if let Some(v) = common.match_min {
        cfg.engine.match_min_days = v;
    }
    if let Some(v) = common.match_max {
        cfg.engine.match_max_days = v;
    }
    if let Some(v) = common.cutoff {
        cfg.strata.cutoff = v;
    }
    if let Some(v) = common.threads {
        cfg.threads = v;
    }
    if let Some(v) = common.seed {
        cfg.simulate.seed = v;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult {
    let mut cfg = effective_config(&cli.common)?;
    if let Command::Stats(args) = &cli.command {
        if let Some(path) = &args.strata {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg.strata = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if let Some(c) = cli.common.cutoff {
                cfg.strata.cutoff = c;
            }
        }
        if let Some(t) = args.threshold {
            cfg.strata.threshold = t;
        }
    }
    if let Command::Simulate(SimulateArgs { n_persons: Some(n) }) = &cli.command {
        cfg.simulate.n_persons = *n;
    }
    if cli.common.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate()?;

    let data_dir = cli.common.data_dir.as_deref();
    let ctx = Context { cfg, data_dir };
    match cli.command {
        Command::Phenotype(args) => phenotype(&ctx, args),
        Command::Infer(args) => infer(&ctx, args),
        Command::Timeline(args) => timeline(&ctx, args),
        Command::Stats(args) => stats(&ctx, args),
        Command::Simulate(_) => simulate(&ctx),
        Command::Evaluate(args) => evaluate(&ctx, args),
    }
}

struct Context<'a> {
    cfg: RunConfig,
    data_dir: Option<&'a Path>,
}

impl Context<'_> {
    fn input(&self, given: Option<&Path>, default_name: &str, flag: &str) -> CliResult<PathBuf> {
        resolve_input(given, default_name, self.data_dir)
            .ok_or_else(|| CliError::MissingInput(format!("no {flag} given (use {flag} or set {})", settings::DATA_DIR_ENV)))
    }

    fn optional_input(&self, given: Option<&Path>) -> Option<PathBuf> {
        given.map(|p| resolve_input(Some(p), "", self.data_dir).expect("path given"))
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Output(dir.clone(), e))?;
        Ok(dir)
    }

    fn registries(&self) -> CliResult<Registries> {
        let ga = match self.optional_input(self.cfg.ga_concepts.as_deref()) {
            Some(p) => concepts::load_ga_concepts(&p)?,
            None => concepts::GaRegistry::shipped(),
        };
        let dod = match self.optional_input(self.cfg.dod_concepts.as_deref()) {
            Some(p) => concepts::load_dod_concepts(&p)?,
            None => concepts::DodRegistry::shipped(),
        };
        Ok(Registries { ga, dod })
    }

    fn persons(&self) -> CliResult<PersonTable> {
        let path = self.input(self.cfg.persons.as_deref(), "persons.csv", "--persons")?;
        Ok(ingest::load_persons(&path)?)
    }

    fn episodes(&self, given: Option<&Path>) -> CliResult<Vec<gestation_core::PregnancyEpisode>> {
        let fallback = self.cfg.out.as_ref().map(|d| d.join("episodes.csv"));
        let path = match given {
            Some(p) => self.optional_input(Some(p)).expect("path given"),
            None => fallback
                .filter(|p| p.exists())
                .map_or_else(|| self.input(None, "episodes.csv", "--episodes"), Ok)?,
        };
        Ok(pipeline::read_episodes(&path)?)
    }

    fn index_events(&self, concepts: Option<&Path>) -> CliResult<Vec<gestation_core::ClinicalEvent>> {
        let path = self.input(self.cfg.index_events.as_deref(), "index_events.csv", "--index-events")?;
        let mut events = ingest::load_event_list(&path)?;
        if let Some(set) = concepts {
            let set = analytics::load_concept_set("index", set)?;
            events.retain(|e| set.concepts.contains(&e.concept_id));
        }
        Ok(events)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
    let file = File::create(path).map_err(|e| CliError::Output(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Output(path.to_path_buf(), e))
}

fn phenotype(ctx: &Context, args: PhenotypeArgs) -> CliResult {
    let path = ctx.input(args.vocabulary.as_deref(), "vocabulary.csv", "--vocabulary")?;
    let vocabulary: Vec<VocabularyEntry> = concepts::load_vocabulary(&path)?;
    let keywords: Vec<String> = if args.keywords.is_empty() {
        concepts::DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
    } else {
        args.keywords
    };
    let domains: BTreeSet<Domain> = if args.domains.is_empty() {
        concepts::DEFAULT_PHENOTYPE_DOMAINS.into_iter().collect()
    } else {
        args.domains
            .iter()
            .map(|d| d.parse().map_err(Error::Config))
            .collect::<Result<_, _>>()?
    };
    let hits = concepts::phenotype_search(
        &vocabulary,
        &keywords,
        &domains,
        !args.include_nonstandard,
        !args.include_invalid,
    )?;
    let out = ctx.out_dir()?.join("phenotype.csv");
    write_file(&out, |w| concepts::write_vocabulary(&hits, w))?;
    eprintln!("{} of {} vocabulary entries matched; wrote {}", hits.len(), vocabulary.len(), out.display());
    Ok(())
}

fn infer(ctx: &Context, args: InferArgs) -> CliResult {
    let started = Instant::now();
    let registries = ctx.registries()?;
    let persons = ctx.persons()?;
    let events_path = ctx.input(ctx.cfg.events.as_deref(), "events.csv", "--events")?;
    let events: EventTable = ingest::load_events(&events_path, &persons, &registries)?;
    let options = RunOptions {
        engine: ctx.cfg.engine.clone(),
        cohort: ctx.cfg.cohort.clone(),
        threads: Some(ctx.cfg.worker_threads()),
    };
    let output = pipeline::run_inference(&events, &persons, &registries, &options)?;

    let dir = ctx.out_dir()?;
    write_file(&dir.join("episodes.csv"), |w| pipeline::write_episodes(&output.episodes, w))?;
    write_file(&dir.join("diagnostics.csv"), |w| pipeline::write_diagnostics(&output.diagnostics, w))?;
    if args.debug_cohorts {
        write_file(&dir.join("ga_cohort.csv"), |w| pipeline::write_ga_cohort(&output.ga_cohort, w))?;
        write_file(&dir.join("dod_cohort.csv"), |w| pipeline::write_dod_cohort(&output.dod_cohort, w))?;
    }
    eprintln!(
        "{} persons, {} events, {} gestation starts, {} deliveries, {} episodes, {} diagnostics in {:.2?}",
        persons.len(),
        events.row_count,
        output.ga_cohort.len(),
        output.dod_cohort.len(),
        output.episodes.len(),
        output.diagnostics.len(),
        started.elapsed()
    );
    Ok(())
}

fn timeline(ctx: &Context, args: TimelineArgs) -> CliResult {
    let episodes = ctx.episodes(args.episodes.as_deref())?;
    let index_events = ctx.index_events(args.index_concepts.as_deref())?;
    let rows = analytics::timeline(&episodes, &index_events);
    let out = ctx.out_dir()?.join("timing.csv");
    write_file(&out, |w| analytics::write_timeline(&rows, w))?;
    eprintln!("{} index events placed on {} episodes; wrote {}", rows.len(), episodes.len(), out.display());
    Ok(())
}

fn parse_comorbidity(spec: &str) -> CliResult<(String, PathBuf)> {
    spec.split_once('=')
        .filter(|(name, path)| !name.is_empty() && !path.is_empty())
        .map(|(name, path)| (name.to_string(), PathBuf::from(path)))
        .ok_or_else(|| CliError::Core(Error::Config(format!("--comorbidity expects NAME=PATH, got `{spec}`"))))
}

fn stats(ctx: &Context, args: StatsArgs) -> CliResult {
    let episodes = ctx.episodes(args.episodes.as_deref())?;
    let persons = ctx.persons()?;
    let index_list = ctx.index_events(args.index_concepts.as_deref())?;
    let index = IndexEvents::from_events(&index_list, None);

    let mut sets: Vec<ConceptSet> = Vec::new();
    for spec in &args.comorbidities {
        let (name, path) = parse_comorbidity(spec)?;
        let path = ctx.optional_input(Some(&path)).expect("path given");
        sets.push(analytics::load_concept_set(&name, &path)?);
    }
    let events = if sets.is_empty() {
        EventTable::default()
    } else {
        let path = ctx.input(ctx.cfg.events.as_deref(), "events.csv", "--events")?;
        let wanted: BTreeSet<ConceptId> = sets.iter().flat_map(|s| s.concepts.iter().copied()).collect();
        let mut list = ingest::load_event_list(&path)?;
        list.retain(|e| wanted.contains(&e.concept_id));
        EventTable::from_events(list, &persons, &Registries::default())
    };

    let histogram = analytics::infection_week_histogram(&episodes, &index);
    let table = analytics::stratified_table(&episodes, &persons, &index, &events, &sets, &ctx.cfg.strata);
    let threshold = (!args.unsuppressed).then_some(ctx.cfg.strata.threshold);
    let dir = ctx.out_dir()?;
    write_file(&dir.join("report.md"), |w| {
        w.write_all(analytics::render_markdown(&table, Some(&histogram), threshold).as_bytes())
    })?;
    write_file(&dir.join("report.csv"), |w| analytics::write_table_csv(&table, threshold, w))?;
    write_file(&dir.join("histogram.csv"), |w| analytics::write_histogram_csv(&histogram, threshold, w))?;
    eprintln!(
        "{} episodes, {} with an index event; wrote report.md, report.csv, histogram.csv to {}",
        episodes.len(),
        histogram.total(),
        dir.display()
    );
    Ok(())
}

fn simulate(ctx: &Context) -> CliResult {
    let registries = ctx.registries()?;
    let cohort = synth::generate_cohort(&ctx.cfg.simulate, &registries)?;
    let dir = ctx.out_dir()?;
    synth::write_cohort(&cohort, &dir)?;
    eprintln!(
        "{} persons, {} gestations, {} events, {} noise records written to {}",
        cohort.persons.len(),
        cohort.truth.len(),
        cohort.events.len(),
        cohort.noise_log.len(),
        dir.display()
    );
    Ok(())
}

fn evaluate(ctx: &Context, args: EvaluateArgs) -> CliResult {
    if let Some(matrix) = &args.matrix {
        let path = ctx.optional_input(Some(matrix)).expect("path given");
        let m = eval::load_matrix(&path)?;
        let r = eval::cohen_kappa(&m, args.weighting)?;
        println!("categories: {}", m.labels().join(","));
        println!("n: {}", m.total());
        println!("weighting: {}", r.weighting);
        println!("observed_agreement: {:.4}", r.observed_agreement);
        println!("expected_agreement: {:.4}", r.expected_agreement);
        println!("kappa: {:.4}", r.kappa);
        return Ok(());
    }
    let Some(truth) = &args.truth else {
        return Err(CliError::MissingInput("evaluate needs --matrix, or --truth with --episodes".into()));
    };
    let truth = eval::load_truth(&ctx.optional_input(Some(truth)).expect("path given"))?;
    let episodes = ctx.episodes(args.episodes.as_deref())?;
    let s = eval::round_trip_score(&episodes, &truth);
    println!("truth_episodes: {}", s.truth_episodes);
    println!("inferred_episodes: {}", s.inferred_episodes);
    println!("truth_persons: {}", s.truth_persons);
    println!("exact_start: {:.4}", s.exact_start);
    println!("start_within_7_days: {:.4}", s.start_within_7);
    println!("exact_dod: {:.4}", s.exact_dod);
    println!("dod_within_1_day: {:.4}", s.dod_within_1);
    println!("episode_count_match: {:.4}", s.episode_count_match);
    Ok(())
}
