use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retention::camsim::{cost_report, random_instances, CamSimulator};
use retention::datasets::Profile;
use retention::ensemble::{oob_accuracy, train_forest, Dataset, Ensemble, TrainParams};
use retention::mapping::{map, Strategy};
use retention::pathspace::extract_paths;
use retention::pruning::{purity_threshold_prune_with, PruneConfig, SearchStrategy};
use retention::toolkit::format::{load_document, save_document};
use retention::toolkit::report::{read_report_json, summarize, write_report_csv};
use retention::toolkit::sweep::{DEFAULT_SPLIT_SEED, DEFAULT_TRAIN_FRACTION};
use retention::toolkit::{run_sweep, save_layout, write_report, EnsembleDocument, SplitInfo, SweepConfig};
use retention::Error;

#[derive(Parser)]
#[command(name = "retention", version, about = "Tree-ensemble to TCAM mapping toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a bagged forest on the training split and save it.
    Train(TrainArgs),
    /// Purity-threshold prune a trained forest under an OOB tolerance.
    Prune(PruneArgs),
    /// Path and condition statistics of a model.
    Paths(ModelArgs),
    /// Map a model onto TCAM blocks.
    Map(MapArgs),
    /// Run instances through the simulated CAM.
    Simulate(SimulateArgs),
    /// Run a config-driven experiment sweep.
    Sweep(SweepArgs),
    /// Print the block-count pivot of a JSON report.
    Report(ReportArgs),
    /// Write a synthetic dataset profile as CSV.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file: header row, last column is the label.
    #[arg(long, conflicts_with = "profile")]
    data: Option<PathBuf>,
    /// Built-in synthetic profile instead of a CSV.
    #[arg(long)]
    profile: Option<Profile>,
    /// Instance count for --profile.
    #[arg(long)]
    size: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, Error> {
        match (&self.data, self.profile) {
            (Some(p), _) => Dataset::from_csv_path(p),
            (None, Some(profile)) => profile.generate(self.size.unwrap_or(profile.desk_size()), DEFAULT_SPLIT_SEED),
            (None, None) => Err(Error::Config("give --data or --profile".into())),
        }
    }

    fn given(&self) -> bool {
        self.data.is_some() || self.profile.is_some()
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// The dataset the model was trained from; the stored split is replayed.
    #[command(flatten)]
    data: DataArgs,
    /// Allowed OOB accuracy loss, in percent.
    #[arg(long)]
    tolerance: f64,
    /// Scan every candidate threshold instead of binary search.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 64)]
    tcam_size: usize,
    /// Write the layout as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    strategy: Strategy,
    #[arg(long, default_value_t = 64)]
    tcam_size: usize,
    /// Instances to simulate; random queries are used when no data is given.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    random: usize,
    #[arg(long, default_value_t = 7)]
    query_seed: u64,
    /// Compare every CAM prediction with tree traversal; exit 3 on any mismatch.
    #[arg(long)]
    check_oracle: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Also convert the rows to CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    profile: Profile,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SPLIT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_invariant_violation() { 3 } else { 2 })
        }
    }
}

fn load_model(path: &Path) -> Result<(EnsembleDocument, Ensemble), Error> {
    let doc = load_document(path)?;
    let e = doc.to_ensemble().map_err(|e| match e {
        Error::Format { context, message } => Error::Format {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })?;
    Ok((doc, e))
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(a) => {
            let data = a.data.load()?;
            let (train, test) = data.split(a.train_fraction, a.split_seed)?;
            let params = TrainParams {
                mtry: a.mtry,
                max_depth: a.max_depth,
                ..TrainParams::new(a.trees, a.seed)
            };
            let e = train_forest(&train, &params)?;
            println!(
                "trained {} trees, {} nodes; oob accuracy {:.4}, test accuracy {:.4}",
                e.trees().len(),
                e.node_count(),
                oob_accuracy(&e, &train)?,
                e.accuracy(&test)?
            );
            let split = SplitInfo {
                train_fraction: a.train_fraction,
                seed: a.split_seed,
            };
            save_document(&EnsembleDocument::from_ensemble(&e).with_split(split), &a.out)
        }
        Command::Prune(a) => {
            let (doc, e) = load_model(&a.model)?;
            let split = doc.split.unwrap_or(SplitInfo {
                train_fraction: DEFAULT_TRAIN_FRACTION,
                seed: DEFAULT_SPLIT_SEED,
            });
            let (train, test) = a.data.load()?.split(split.train_fraction, split.seed)?;
            let search = if a.exhaustive {
                SearchStrategy::Exhaustive
            } else {
                SearchStrategy::Binary
            };
            let cfg = PruneConfig::new(a.tolerance / 100.0).with_search(search);
            let r = purity_threshold_prune_with(&e, &train, &cfg)?;
            println!(
                "threshold {:.6}; oob {:.4} -> {:.4}; test {:.4} -> {:.4}; nodes {} -> {}; {} evaluations",
                r.threshold,
                r.oob_before,
                r.oob_after,
                e.accuracy(&test)?,
                r.pruned.accuracy(&test)?,
                e.node_count(),
                r.pruned.node_count(),
                r.evaluations
            );
            save_document(&EnsembleDocument::from_ensemble(&r.pruned).with_split(split), &a.out)
        }
        Command::Paths(a) => {
            let (_, e) = load_model(&a.model)?;
            let paths = extract_paths(&e);
            let st = paths.stats();
            let size = paths.size();
            println!("paths              {}", st.path_count);
            println!("unique conditions  {}", st.unique_condition_count);
            println!("avg path length    {:.2}", st.avg_path_length);
            println!("max path length    {}", st.max_path_length);
            println!("redundancy         {:.2}%", paths.redundancy() * 100.0);
            println!("nominal size       {:.2} MB", size.nominal_mib());
            println!("physical size      {:.2} MB", size.physical_mib());
            Ok(())
        }
        Command::Map(a) => {
            let (_, e) = load_model(&a.model)?;
            let paths = extract_paths(&e);
            let layout = map(&paths, a.strategy, a.tcam_size)?;
            layout.validate(&paths)?;
            let c = cost_report(&layout, &paths);
            println!(
                "{} S={}: {} TCAMs ({} units); query bits {}, shared {}; condition checks {:.1}; retrieval ops {}",
                a.strategy,
                a.tcam_size,
                c.tcam_count,
                layout.units.len(),
                c.query_bits_total,
                c.shared_query_bits,
                c.condition_checks,
                c.retrieval_ops
            );
            if let Some(out) = a.out {
                save_layout(&layout, out)?;
            }
            Ok(())
        }
        Command::Simulate(a) => {
            let (_, e) = load_model(&a.model)?;
            let paths = extract_paths(&e);
            let layout = map(&paths, a.strategy, a.tcam_size)?;
            let sim = CamSimulator::new(&layout, &paths)?;
            let instances: Vec<Vec<f64>> = if a.data.given() {
                a.data.load()?.rows().map(<[f64]>::to_vec).collect()
            } else {
                random_instances(paths.index(), a.random, a.query_seed)
            };
            let mut mismatches = 0;
            for x in &instances {
                let cam = sim.predict(x)?;
                if a.check_oracle && cam != e.predict(x)? {
                    mismatches += 1;
                }
            }
            println!(
                "{} instances through {} blocks ({} S={}); {}",
                instances.len(),
                sim.block_count(),
                a.strategy,
                a.tcam_size,
                if a.check_oracle {
                    format!("{mismatches} oracle mismatches")
                } else {
                    "oracle not checked".into()
                }
            );
            if mismatches > 0 {
                return Err(Error::Invariant(format!(
                    "{mismatches} CAM predictions differ from traversal"
                )));
            }
            Ok(())
        }
        Command::Sweep(a) => {
            let cfg = SweepConfig::from_path(&a.config)?;
            let base = a.config.parent().unwrap_or(Path::new("."));
            let rows = run_sweep(&cfg, base)?;
            print!("{}", summarize(&rows));
            match a.out {
                Some(out) => write_report(&rows, out),
                None => Ok(()),
            }
        }
        Command::Report(a) => {
            let rows = read_report_json(&a.input)?;
            print!("{}", summarize(&rows));
            if let Some(out) = a.csv {
                let file = std::fs::File::create(&out).map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
                write_report_csv(&rows, file)?;
            }
            Ok(())
        }
        Command::Synth(a) => {
            let d = a.profile.generate(a.size.unwrap_or(a.profile.desk_size()), a.seed)?;
            let file = std::fs::File::create(&a.out).map_err(|e| Error::Io {
                path: a.out.clone(),
                source: e,
            })?;
            d.write_csv(file)
        }
    }
}
