use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use smstriage_cli::client::{HttpLabeling, HttpPusher, ServiceClient};
use smstriage_cli::config::ServiceConfig;
use smstriage_core::harness::{
    auto_label, generate, read_corpus, replay, write_corpus, AutoLabelConfig, Rate, ReplayPlan,
    SyntheticSpec, TruthTable,
};
use smstriage_core::learn::{ClassifierSchema, SchemaSpec, SelectionPolicy};
use smstriage_core::{Error, Result};
use tracing_subscriber::EnvFilter;

const DEFAULT_URL: &str = "http://127.0.0.1:8080";

#[derive(Parser)]
#[command(name = "smstriage", version, about = "SMS triage service and harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// TOML config file; SMSTRIAGE_* environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Push a JSON-lines corpus into a collection's endpoint.
    Replay {
        #[arg(long)]
        file: PathBuf,
        /// Full push URL, e.g. http://host:8080/push/<endpointPath>.
        #[arg(long)]
        endpoint: String,
        /// Messages per second, or "max".
        #[arg(long, default_value = "max")]
        rate: Rate,
        /// Shuffle lines with this seed before sending.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate a seeded synthetic corpus.
    Synth {
        /// SyntheticSpec JSON; without it the 8-category health preset is used.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Preset size (ignored with --spec).
        #[arg(long, default_value_t = 8000)]
        count: usize,
        /// Preset seed (ignored with --spec).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run scripted labelers that vote from a corpus's true categories.
    Autolabel {
        #[command(flatten)]
        service: ServiceArg,
        /// Corpus with trueCategory per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        labelers: usize,
        #[arg(long, default_value_t = 1.0)]
        accuracy: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Only take tasks from this classifier.
        #[arg(long)]
        schema: Option<String>,
        #[arg(long)]
        max_resolved: Option<usize>,
        /// Empty polling rounds tolerated before exiting.
        #[arg(long, default_value_t = 20)]
        idle_rounds: usize,
        #[arg(long, default_value_t = 100)]
        poll_ms: u64,
    },
    /// Counters and category proportions for a collection.
    Stats {
        #[command(flatten)]
        service: ServiceArg,
        #[arg(long)]
        collection: String,
        /// Limit to one classifier; default is every classifier of the collection.
        #[arg(long)]
        schema: Option<String>,
    },
    /// Manage collections.
    #[command(subcommand)]
    Collection(CollectionCmd),
    /// Manage classifiers.
    #[command(subcommand)]
    Classifier(ClassifierCmd),
}

#[derive(Args)]
struct ServiceArg {
    /// Service base URL.
    #[arg(long = "endpoint", env = "SMSTRIAGE_URL", default_value = DEFAULT_URL)]
    url: String,
}

#[derive(Subcommand)]
enum CollectionCmd {
    Create {
        #[command(flatten)]
        service: ServiceArg,
        #[arg(long)]
        name: String,
        #[arg(long)]
        char_limit: Option<usize>,
    },
    Show {
        #[command(flatten)]
        service: ServiceArg,
        #[arg(long)]
        id: String,
    },
}

#[derive(Subcommand)]
enum ClassifierCmd {
    Create {
        #[command(flatten)]
        service: ServiceArg,
        #[arg(long)]
        collection: String,
        #[arg(long)]
        name: String,
        /// SchemaSpec JSON with categories; default is the health categories.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        retrain_every: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// "uncertainty" or "random".
        #[arg(long)]
        selection: Option<String>,
    },
    Metrics {
        #[command(flatten)]
        service: ServiceArg,
        #[arg(long)]
        id: String,
    },
}

#[derive(Serialize)]
struct ErrorOut<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: String,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let out = ErrorOut {
                error: ErrorDetail {
                    code: e.code(),
                    message: e.to_string(),
                },
            };
            eprintln!(
                "{}",
                serde_json::to_string(&out).expect("serializable error")
            );
            ExitCode::FAILURE
        }
    }
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Serve { config } => {
            let config = ServiceConfig::load(config.as_deref())?;
            smstriage_cli::serve(&config)
        }
        Command::Replay {
            file,
            endpoint,
            rate,
            seed,
            limit,
        } => {
            let plan = ReplayPlan {
                source_file: file,
                rate,
                shuffle_seed: seed,
                limit,
            };
            let report = replay(&plan, &HttpPusher::new(&endpoint)?)?;
            print(&report)?;
            match report.aborted {
                Some(reason) => Err(Error::Io(std::io::Error::other(reason))),
                None => Ok(()),
            }
        }
        Command::Synth {
            spec,
            out,
            count,
            seed,
        } => {
            let spec = match spec {
                Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
                None => SyntheticSpec::health(count, seed),
            };
            let lines = generate(&spec)?;
            write_corpus(&lines, BufWriter::new(File::create(&out)?))?;
            let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
            for l in &lines {
                *per_category
                    .entry(l.true_category.as_deref().unwrap_or(""))
                    .or_default() += 1;
            }
            print(&serde_json::json!({
                "out": out,
                "lines": lines.len(),
                "perCategory": per_category,
            }))
        }
        Command::Autolabel {
            service,
            corpus,
            labelers,
            accuracy,
            seed,
            schema,
            max_resolved,
            idle_rounds,
            poll_ms,
        } => {
            let lines = read_corpus(BufReader::new(File::open(corpus)?))?;
            let backend = HttpLabeling {
                client: ServiceClient::new(&service.url)?,
                schema,
            };
            let config = AutoLabelConfig {
                labelers,
                accuracy,
                seed,
                max_resolved,
                idle_rounds,
                poll_interval_ms: poll_ms,
            };
            let report = auto_label(&backend, &TruthTable::from_corpus(&lines), &config, |_| {
                true
            })?;
            print(&report)
        }
        Command::Stats {
            service,
            collection,
            schema,
        } => {
            let client = ServiceClient::new(&service.url)?;
            let schemas = match schema {
                Some(s) => vec![s],
                None => client
                    .classifiers(&collection)?
                    .into_iter()
                    .map(|s| s.id)
                    .collect(),
            };
            let stats = schemas
                .iter()
                .map(|s| client.stats(&collection, s))
                .collect::<Result<Vec<_>>>()?;
            print(&serde_json::json!({
                "collection": client.collection(&collection)?,
                "classifiers": stats,
            }))
        }
        Command::Collection(CollectionCmd::Create {
            service,
            name,
            char_limit,
        }) => print(&ServiceClient::new(&service.url)?.create_collection(&name, char_limit)?),
        Command::Collection(CollectionCmd::Show { service, id }) => {
            print(&ServiceClient::new(&service.url)?.collection(&id)?)
        }
        Command::Classifier(ClassifierCmd::Create {
            service,
            collection,
            name,
            spec,
            retrain_every,
            seed,
            selection,
        }) => {
            let mut spec: SchemaSpec = match spec {
                Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
                None => SchemaSpec::new(&name, ClassifierSchema::health_categories()),
            };
            spec.name = name;
            spec.retrain_every = retrain_every.or(spec.retrain_every);
            spec.seed = seed.or(spec.seed);
            if let Some(sel) = selection {
                spec.selection = Some(match sel.as_str() {
                    "uncertainty" => SelectionPolicy::Uncertainty,
                    "random" => SelectionPolicy::Random,
                    other => return Err(Error::Validation(format!("unknown selection {other:?}"))),
                });
            }
            print(&ServiceClient::new(&service.url)?.create_classifier(&collection, &spec)?)
        }
        Command::Classifier(ClassifierCmd::Metrics { service, id }) => {
            print(&ServiceClient::new(&service.url)?.metrics(&id)?)
        }
    }
}
