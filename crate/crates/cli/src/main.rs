use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use storesel_core::advisor::{advise, Decision, Recommendation};
use storesel_core::bench::{read_perfdata, run_benchmark, write_perfdata};
use storesel_core::config::PipelineConfig;
use storesel_core::convert::PartitionDir;
use storesel_core::learn::CostModel;
use storesel_core::scenario::{lineitem_scenario, observe, parse_structure, simulate, LineitemScale, ScenarioSpec};
use storesel_core::schema::{DataLayout, StorageStructure};
use storesel_core::sim::Partition;
use storesel_core::Error;

/// Storage-structure advisor over simulated storage engines.
#[derive(Parser)]
#[command(name = "storesel", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the benchmark and write performance-data files.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a cost model from performance data.
    Train {
        /// Directory of performance-data files.
        #[arg(long)]
        data: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Retrain from this model, bumping its version.
        #[arg(long)]
        from: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank storage structures for a scenario and optionally apply the best.
    Recommend {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Convert the partition when the decision is to apply.
        #[arg(long, requires = "partition", conflicts_with = "dry_run")]
        apply: bool,
        /// Report only (the default).
        #[arg(long)]
        dry_run: bool,
        /// Partition directory; created from the scenario when absent.
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the recommendation as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Measure a scenario's workload under one structure.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// `engine:layout`, e.g. `lsm:nsm` or `bplus:(V1,V2)(V3)`; the
        /// scenario's current structure when omitted.
        #[arg(long)]
        structure: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a partition directory to another structure.
    Convert {
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        target: String,
        /// Scenario used to create the partition when the directory is empty.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write one of the built-in LineItem scenarios.
    Scenario {
        /// transactional, transactional-mixed, analytical-mixed or analytical.
        #[arg(long)]
        mix: String,
        /// Divisor applied to table sizes and op counts.
        #[arg(long, default_value_t = LineitemScale::default().divisor)]
        divisor: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default pipeline config.
    DefaultConfig,
}

enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConversionVerifyFailed(_) => Failure::Internal(e.to_string()),
            _ => Failure::User(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn config(common: &Common) -> Result<PipelineConfig, Failure> {
    match &common.config {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioSpec, Failure> {
    let mut s = ScenarioSpec::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn bench(out: &Path, seed: Option<u64>, common: &Common) -> Outcome {
    let mut cfg = config(common)?.bench;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let records = run_benchmark(&cfg)?;
    let files = write_perfdata(out, &records)?;
    println!(
        "{} records in {} files under {}",
        records.len(),
        files.len(),
        out.display()
    );
    Ok(())
}

fn train(data: &Path, out: &Path, from: Option<&Path>, common: &Common) -> Outcome {
    let cfg = config(common)?;
    let records = read_perfdata(data)?;
    let model = match from {
        Some(p) => CostModel::load(p)?.retrain(&records)?,
        None => CostModel::train(&records, &cfg.learn)?,
    };
    model.save(out)?;
    println!(
        "model version {} trained on {} records -> {}",
        model.model_version,
        records.len(),
        out.display()
    );
    Ok(())
}

fn open_or_create(
    dir: &Path,
    spec: &ScenarioSpec,
    structure: &StorageStructure,
    cfg: &PipelineConfig,
) -> Result<PartitionDir, Failure> {
    if dir.join("manifest.json").exists() {
        return Ok(PartitionDir::open(dir)?);
    }
    let p = Partition::with_rows(&spec.schema, structure, &cfg.params, spec.initial_table_rows)?;
    Ok(PartitionDir::create(dir, &spec.name, &p)?)
}

#[allow(clippy::too_many_arguments)]
fn recommend(
    scenario: &Path,
    model: &Path,
    epsilon: Option<f64>,
    apply: bool,
    partition: Option<&Path>,
    seed: Option<u64>,
    json: bool,
    common: &Common,
) -> Outcome {
    let mut cfg = config(common)?;
    if let Some(e) = epsilon {
        if !(0.0..=1.0).contains(&e) {
            return Err(Failure::User(format!("--epsilon {e} outside [0,1]")));
        }
        cfg.advisor.epsilon = e;
    }
    let spec = load_scenario(scenario, seed)?;
    let model = CostModel::load(model)?;
    let existing = match partition {
        Some(d) if d.join("manifest.json").exists() => Some(PartitionDir::open(d)?),
        _ => None,
    };
    let current = match &existing {
        Some(d) => {
            let s = d.manifest().structure.clone();
            s.validate(&spec.schema)?;
            s
        }
        None => spec.current_structure()?,
    };
    let workload = spec.workload()?;
    let (_, observed) = observe(&spec, &current, &cfg.params)?;
    let (layouts, rec) = advise(
        &workload,
        &spec.schema,
        &model,
        &current,
        &observed,
        &cfg.params,
        &cfg.advisor,
    )?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&rec).expect("recommendation serializes")
        );
    } else {
        print_report(&layouts, &rec);
    }
    if apply {
        if let (Decision::Apply, Some(target)) = (&rec.decision, &rec.chosen) {
            let dir = partition.expect("clap enforces --partition with --apply");
            let mut pd = match existing {
                Some(d) => d,
                None => open_or_create(dir, &spec, &current, &cfg)?,
            };
            pd.convert(target, &cfg.params, None)?;
            eprintln!("applied {target} as generation {}", pd.manifest().generation);
        } else {
            eprintln!("nothing applied");
        }
    }
    Ok(())
}

fn print_report(layouts: &[DataLayout], rec: &Recommendation) {
    println!("layouts (coarse to fine):");
    for l in layouts {
        println!("  {l}");
    }
    println!("candidates by predicted cost:");
    print!("{}", rec.table());
}

fn simulate_cmd(scenario: &Path, structure: Option<&str>, seed: Option<u64>, common: &Common) -> Outcome {
    let cfg = config(common)?;
    let spec = load_scenario(scenario, seed)?;
    let st = match structure {
        Some(t) => parse_structure(t, &spec.schema)?,
        None => spec.current_structure()?,
    };
    let cost = simulate(&spec, &st, &cfg.params)?;
    println!("{cost:.1} us  {st}");
    Ok(())
}

fn convert_cmd(dir: &Path, target: &str, scenario: Option<&Path>, common: &Common) -> Outcome {
    let cfg = config(common)?;
    let mut pd = if dir.join("manifest.json").exists() {
        PartitionDir::open(dir)?
    } else {
        let Some(path) = scenario else {
            return Err(Failure::User(format!(
                "{} holds no partition; pass --scenario to create one",
                dir.display()
            )));
        };
        let spec = load_scenario(path, None)?;
        open_or_create(dir, &spec, &spec.current_structure()?, &cfg)?
    };
    let schema = pd.snapshot()?.schema;
    let target = parse_structure(target, &schema)?;
    let from = pd.manifest().structure.clone();
    pd.convert(&target, &cfg.params, None)?;
    println!("{from} -> {target} (generation {})", pd.manifest().generation);
    Ok(())
}

fn scenario_cmd(mix: &str, divisor: u64, out: Option<&Path>) -> Outcome {
    if divisor == 0 {
        return Err(Failure::User("--divisor must be positive".into()));
    }
    let text = lineitem_scenario(mix, LineitemScale { divisor })?.to_toml();
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::User(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.cmd {
        Cmd::Bench { out, seed, common } => bench(&out, seed, &common),
        Cmd::Train {
            data,
            out,
            from,
            common,
        } => train(&data, &out, from.as_deref(), &common),
        Cmd::Recommend {
            scenario,
            model,
            epsilon,
            apply,
            dry_run: _,
            partition,
            seed,
            json,
            common,
        } => recommend(
            &scenario,
            &model,
            epsilon,
            apply,
            partition.as_deref(),
            seed,
            json,
            &common,
        ),
        Cmd::Simulate {
            scenario,
            structure,
            seed,
            common,
        } => simulate_cmd(&scenario, structure.as_deref(), seed, &common),
        Cmd::Convert {
            partition,
            target,
            scenario,
            common,
        } => convert_cmd(&partition, &target, scenario.as_deref(), &common),
        Cmd::Scenario { mix, divisor, out } => scenario_cmd(&mix, divisor, out.as_deref()),
        Cmd::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            eprintln!("usage: storesel <COMMAND> [OPTIONS]; see `storesel --help`");
            ExitCode::from(1)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(2)
        }
    }
}
