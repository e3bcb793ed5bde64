//! Command-line interface: dataset synthesis, training, encoding, Hamming
//! search, and retrieval evaluation.
//!
//! Exit codes: 0 on success, 2 for usage or validation errors, 1 for runtime
//! failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    self, load_dataset, load_from_manifest, read_matrix, save_dataset, Dataset, FileFormat,
    Manifest,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cross_modal, rank_all, DbCodeSource, Direction, EvalOptions};
use crate::factorization::Hyperparameters;
use crate::hashing::BinaryCodes;
use crate::trainer::{load_model, save_model, train};

#[derive(Parser)]
#[command(
    name = "smfh",
    version,
    about = "Supervised matrix factorization hashing: multi-modal binary codes and cross-modal Hamming retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled multi-modal dataset
    Synth(SynthArgs),
    /// Learn codes and per-modality hash functions from a dataset
    Train(TrainArgs),
    /// Encode one modality of a dataset into packed binary codes
    Encode(EncodeArgs),
    /// Rank database codes by Hamming distance to query codes
    Search(SearchArgs),
    /// Evaluate cross-modal retrieval quality
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of classes
    #[arg(long)]
    classes: usize,
    /// Samples per class
    #[arg(long = "per-class")]
    per_class: usize,
    /// Per-modality feature dimensions, comma-separated (e.g. 32,24)
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Uniform non-negative noise amplitude
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the files and manifest
    #[arg(long)]
    out: PathBuf,
    /// Matrix file format: csv or smfd
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file
    #[arg(long)]
    model: PathBuf,
    /// Code length r
    #[arg(long)]
    bits: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Per-modality weights, comma-separated; must sum to 1
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Subgraph sample size m (default min(N, 1000))
    #[arg(long = "sample-size")]
    sample_size: Option<usize>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subtract each feature row's minimum (when negative) before training
    /// and record the offsets in a sibling .shifted.json manifest
    #[arg(long = "shift-nonneg")]
    shift_nonneg: bool,
    /// Rescale every feature column to unit l2 norm before training
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Which modality of the dataset to encode
    #[arg(long)]
    modality: usize,
    /// Output codes file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Query codes file
    #[arg(long)]
    queries: PathBuf,
    /// Database codes file
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Retrieval direction: t2i, i2t, or QtoD (e.g. 1to0)
    #[arg(long)]
    direction: String,
    /// Curve depths, comma-separated
    #[arg(long = "k", value_delimiter = ',', default_value = "1,5,10,25,50,100")]
    ks: Vec<usize>,
    /// Database code source: projected (re-encode the database modality
    /// through its hash function) or factorized (binarized training codes
    /// stored in the model)
    #[arg(long = "db-codes", default_value = "projected")]
    db_codes: String,
    /// Emit the report as JSON instead of CSV
    #[arg(long)]
    json: bool,
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Writes to stdout, treating a closed pipe as normal termination.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Error::io("<stdout>", e)),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let format = match a.format.as_str() {
        "csv" => FileFormat::Csv,
        "smfd" => FileFormat::Binary,
        other => {
            return Err(Error::Invalid(format!(
                "unknown format {other:?}; use csv or smfd"
            )))
        }
    };
    let ds = data::generate_synthetic(a.classes, a.per_class, &a.dims, a.noise, a.seed)?;
    let manifest = save_dataset(&ds, &a.out, format)?;
    emit(&format!("{}\n", manifest.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut dataset = load_for_training(&a.manifest, a.shift_nonneg)?;
    if a.normalize {
        dataset.normalize_features();
    }
    let mut hyper = Hyperparameters::defaults(dataset.n_modalities(), dataset.n_samples());
    if let Some(v) = a.bits {
        hyper.bits = v;
    }
    if let Some(v) = a.alpha {
        hyper.alpha = v;
    }
    if let Some(v) = a.mu {
        hyper.mu = v;
    }
    if let Some(v) = a.eta {
        hyper.eta = v;
    }
    if let Some(v) = a.beta {
        hyper.beta = v;
    }
    if let Some(v) = a.gamma {
        hyper.gamma = v;
    }
    if let Some(v) = a.lambda {
        hyper.lambdas = v;
    }
    if let Some(v) = a.sample_size {
        hyper.sample_size = v;
    }
    if let Some(v) = a.max_iters {
        hyper.max_iters = v;
    }
    if let Some(v) = a.tol {
        hyper.tol = v;
    }
    if let Some(v) = a.seed {
        hyper.seed = v;
    }
    let model = train(&dataset, &hyper)?;
    save_model(&model, &a.model)?;
    let mut out = String::from("iter,objective\n");
    for (i, obj) in model.history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, obj));
    }
    emit(&out)
}

/// Loads the training dataset, optionally making features non-negative by
/// per-row shifting. The applied offsets are recorded in a sibling
/// `<name>.shifted.json` manifest so the transform stays auditable and the
/// shifted manifest reproduces the exact training inputs.
fn load_for_training(manifest_path: &Path, shift_nonneg: bool) -> Result<Dataset> {
    if !shift_nonneg {
        return load_dataset(manifest_path);
    }
    let mut manifest = Manifest::read(manifest_path)?;
    let base_shift = manifest.shift.clone();
    let mut offsets = Vec::with_capacity(manifest.modalities.len());
    for (t, entry) in manifest.modalities.iter().enumerate() {
        let path = resolve(manifest_path, &entry.path);
        let raw = read_matrix(&path)?;
        let mut rows = Vec::with_capacity(raw.nrows());
        for (r, row) in raw.rows().into_iter().enumerate() {
            let prior = base_shift
                .as_ref()
                .and_then(|s| s.get(t))
                .and_then(|v| v.get(r))
                .copied()
                .unwrap_or(0.0);
            let min = row
                .iter()
                .map(|&v| v - prior)
                .fold(f64::INFINITY, f64::min);
            rows.push(prior + min.min(0.0));
        }
        offsets.push(rows);
    }
    manifest.shift = Some(offsets);
    let shifted_path = manifest_path.with_extension("shifted.json");
    manifest.write(&shifted_path)?;
    load_from_manifest(&manifest, manifest_path)
}

fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let dataset = load_dataset(&a.manifest)?;
    if a.modality >= model.n_modalities() {
        return Err(Error::Invalid(format!(
            "modality {} out of range for {}-modality model",
            a.modality,
            model.n_modalities()
        )));
    }
    let codes = crate::hashing::encode(
        &model.modalities[a.modality].projection,
        dataset.modality(a.modality),
    )?;
    codes.save(&a.out)?;
    eprintln!("encoded {} items at {} bits", codes.n_items(), codes.bits());
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let queries = BinaryCodes::load(&a.queries)?;
    let db = BinaryCodes::load(&a.db)?;
    let rankings = rank_all(&queries, &db, a.k)?;
    let mut out = String::from("query_id,rank,db_id,distance\n");
    for (q, ranking) in rankings.iter().enumerate() {
        for (pos, &(idx, dist)) in ranking.iter().enumerate() {
            out.push_str(&format!("{q},{},{idx},{dist}\n", pos + 1));
        }
    }
    emit(&out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let dataset = load_dataset(&a.manifest)?;
    let direction = Direction::parse(&a.direction)?;
    let db_codes = match a.db_codes.as_str() {
        "projected" => DbCodeSource::Projected,
        "factorized" => DbCodeSource::Factorized,
        other => {
            return Err(Error::Invalid(format!(
                "unknown db-codes source {other:?}; use projected or factorized"
            )))
        }
    };
    let opts = EvalOptions {
        map_cutoff: 100,
        ks: a.ks,
        db_codes,
    };
    let report = evaluate_cross_modal(&model, &dataset, &dataset, direction, &opts)?;
    if a.json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        emit(&format!("{text}\n"))
    } else {
        emit(&report.to_csv())
    }
}
