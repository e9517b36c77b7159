use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use flipfeed_core::dataset::{DEFAULT_MAX_WORDS, DEFAULT_MIN_WORDS};
use flipfeed_core::domain::Strategy;
use flipfeed_core::harness::Harness;
use flipfeed_core::pack::ingest_problem_pack;
use flipfeed_core::rubric::{read_annotation_lines, render_report, write_annotation_lines, GroupBy, ReportFormat, SizeColumn};
use flipfeed_core::store::Store;
use flipfeed_genai::{batch_generate, BatchOptions, CellStatus, EndpointsFile, GenAiClient};
use flipfeed_server::auth::Auth;
use flipfeed_server::config::ServerConfig;
use flipfeed_server::{build_state, demo, ops, serve, shutdown_signal};

#[derive(Parser)]
#[command(name = "flipfeed", version, about = "Collect, annotate and export programming feedback")]
struct Cli {
    /// Settings file (TOML).
    #[arg(long, global = true, env = "FLIPFEED_CONFIG")]
    config: Option<PathBuf>,
    /// Store journal; overrides the settings file.
    #[arg(long, global = true, env = "FLIPFEED_STORE")]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a problem pack and load it into the store.
    Ingest { pack: Option<PathBuf> },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write the length-filtered fine-tuning dataset.
    ExportFinetune(ExportArgs),
    /// Generate model feedback for every buggy program.
    GenFeedback(GenArgs),
    /// Print rubric summaries.
    Report(ReportArgs),
    /// Inter-rater agreement of two annotators.
    Kappa {
        #[arg(long)]
        annotator_a: String,
        #[arg(long)]
        annotator_b: String,
    },
    /// Load the fixture pack and a synthetic annotated corpus.
    SeedDemo,
    /// Move manual labels in and out as JSON lines.
    #[command(subcommand)]
    Annotations(AnnotationsCommand),
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, default_value_t = DEFAULT_MIN_WORDS)]
    min_words: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_WORDS)]
    max_words: usize,
    #[arg(long, default_value = "finetune.jsonl")]
    out: PathBuf,
    /// Route this share of records to a validation file.
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    endpoints: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "basic,engineered")]
    strategies: Vec<Strategy>,
    #[arg(long)]
    dry_run: bool,
    /// Skip cells whose feedback is already stored.
    #[arg(long)]
    skip_existing: bool,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value = "generation-run.jsonl")]
    manifest: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "problem")]
    group_by: GroupBy,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    /// Count distinct programs instead of annotations in the size column.
    #[arg(long)]
    programs: bool,
}

#[derive(Subcommand)]
enum AnnotationsCommand {
    Import {
        file: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    Export {
        file: PathBuf,
        #[arg(long)]
        annotator: Option<String>,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn open_store(config: &ServerConfig) -> Result<Arc<Store>, Box<dyn std::error::Error>> {
    Ok(Arc::new(Store::open(&config.store_path)?))
}

fn harness(config: &ServerConfig) -> Result<Arc<Harness>, Box<dyn std::error::Error>> {
    Ok(Arc::new(Harness::new(config.harness.clone())?))
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

fn run(cli: Cli) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    };
    if let Some(store) = cli.store {
        config.store_path = store;
    }

    match cli.command {
        Command::Ingest { pack } => {
            let path = pack.or(config.pack_path.clone()).ok_or("no pack file given")?;
            let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let pack = match ingest_problem_pack(&text, &*harness(&config)?) {
                Ok(p) => p,
                Err(e) => {
                    for issue in e.issues() {
                        eprintln!("  {issue}");
                    }
                    return Err(e.into());
                }
            };
            open_store(&config)?.put_pack(&pack)?;
            println!(
                "ingested pack {} ({} problems, {} programs), digest {}",
                pack.id,
                pack.problems.len(),
                pack.programs.len(),
                pack.digest
            );
        }
        Command::Serve { bind } => {
            let bind = bind.unwrap_or(config.bind.clone());
            let state = build_state(
                open_store(&config)?,
                harness(&config)?,
                Auth::from_env(),
                config.endpoints_path.clone(),
                config.export_dir.clone(),
            )?;
            runtime()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&bind).await.map_err(|e| format!("cannot bind {bind}: {e}"))?;
                log::info!("listening on {}", listener.local_addr()?);
                eprintln!("listening on {}", listener.local_addr()?);
                serve(listener, state, shutdown_signal()).await?;
                Ok::<_, Box<dyn std::error::Error>>(())
            })?;
        }
        Command::ExportFinetune(args) => {
            let store = open_store(&config)?;
            let m = ops::export_finetune(&store, args.min_words, args.max_words, &args.out, args.split)?;
            println!("{} records written to {}", m.record_count, args.out.display());
            for (problem, n) in &m.counts_per_problem {
                println!("  {problem}: {n}");
            }
            println!("digest {}", m.digest);
        }
        Command::GenFeedback(args) => {
            let path = args.endpoints.or(config.endpoints_path.clone()).ok_or("no endpoint config given (--endpoints)")?;
            let endpoints = EndpointsFile::load(&path)?.endpoints;
            let store = open_store(&config)?;
            let pack = ops::current_pack(&store)?;
            let options =
                BatchOptions { concurrency: args.concurrency, dry_run: args.dry_run, skip_existing: args.skip_existing };
            let manifest = runtime()?.block_on(batch_generate(
                &GenAiClient::new(),
                &endpoints,
                &args.strategies,
                &pack,
                &store,
                &options,
            ));
            manifest.write_jsonl(&args.manifest)?;
            let counts = manifest.counts();
            let n = |s| counts.get(&s).copied().unwrap_or(0);
            println!(
                "{} cells: {} planned, {} succeeded, {} failed, {} skipped; manifest {}",
                manifest.cells.len(),
                n(CellStatus::Planned),
                n(CellStatus::Succeeded),
                n(CellStatus::Failed),
                n(CellStatus::Skipped),
                args.manifest.display()
            );
            if n(CellStatus::Failed) > 0 {
                return Err(format!("{} cells failed", n(CellStatus::Failed)).into());
            }
        }
        Command::Report(args) => {
            let store = open_store(&config)?;
            let rows = ops::summary(&store, args.group_by)?;
            let column = if args.programs { SizeColumn::NumPrograms } else { SizeColumn::SampleSize };
            print!("{}", render_report(&rows, args.format, column));
        }
        Command::Kappa { annotator_a, annotator_b } => {
            let store = open_store(&config)?;
            let m = ops::agreement(&store, &annotator_a, &annotator_b)?;
            println!(
                "pooled kappa {:.4} ({}), {} labels, observed {:.4}, chance {:.4}",
                m.pooled.kappa, m.pooled.band, m.pooled.n_items, m.pooled.observed_agreement, m.pooled.chance_agreement
            );
            for r in &m.per_attribute {
                println!("  {}: {:.4} ({})", r.attributes.join(","), r.kappa, r.band);
            }
        }
        Command::SeedDemo => {
            let store = open_store(&config)?;
            let s = demo::seed_demo(&store, &*harness(&config)?)?;
            println!(
                "seeded pack {} with {} feedback instances and {} annotations",
                s.pack_id, s.feedback, s.annotations
            );
        }
        Command::Annotations(AnnotationsCommand::Import { file, overwrite }) => {
            let store = open_store(&config)?;
            let lines = read_annotation_lines(BufReader::new(File::open(&file)?))?;
            let n = ops::import_annotations(&store, &lines, overwrite)?;
            println!("{n} annotations imported");
        }
        Command::Annotations(AnnotationsCommand::Export { file, annotator }) => {
            let store = open_store(&config)?;
            let all = match &annotator {
                Some(a) => store.annotations_by(a)?,
                None => store.annotations()?,
            };
            write_annotation_lines(BufWriter::new(File::create(&file)?), &all)?;
            println!("{} annotations written to {}", all.len(), file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
