use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{DatasetSpec, RunConfig, Splits};
use crate::diagnostics::{
    eigen_shift, fim_histogram, fisher_mae, gershgorin_report, histogram, kf_fisher_diag, landscape_export,
    perturb_offdiag, snr_offdiag, true_fisher_diag_mc, Histogram, LandscapeExport,
};
use crate::error::{Error, Result};
use crate::kfactor::KfSnapshot;
use crate::nn::Network;
use crate::optim::{Optimizer, OptimizerName, OptimizerSpec};
use crate::tensor::{dft2_magnitude, SeededRng, Tensor};
use crate::train::{check_worker_split, train, write_metrics, write_timing, Event, TrainOutcome, TrainSettings};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "kronfisher", version, about = "Kronecker-factored Fisher optimizer experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model with one optimizer.
    Train(RunArgs),
    /// Train the same model with every optimizer in `optimizers`.
    Compare(RunArgs),
    /// Gershgorin and perturbation reports for a factor snapshot.
    Diagnose(DiagnoseArgs),
    /// Export the trajectory of two tracked weights.
    Landscape(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub optimizer: Option<OptimizerName>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Standard deviation of the off-diagonal perturbation.
    #[arg(long, default_value_t = 1e-3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write DFT magnitude spectra of both factors.
    #[arg(long)]
    pub dft: bool,
}

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: Error,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for CliError {}

trait ExitCode<T> {
    fn code(self, code: i32) -> std::result::Result<T, CliError>;
}

impl<T> ExitCode<T> for Result<T> {
    fn code(self, code: i32) -> std::result::Result<T, CliError> {
        self.map_err(|error| CliError { code, error })
    }
}

fn training_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Loads the config and applies flag overrides.
pub fn load_config(args: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&args.config).code(EXIT_CONFIG)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(name) = args.optimizer {
        cfg.optimizer = OptimizerSpec::named(name);
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    cfg.validate().code(EXIT_CONFIG)?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).code(EXIT_FAILURE)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn prepare(cfg: &RunConfig) -> CliResult<(Splits, Network)> {
    let splits = cfg.load_data().code(EXIT_DATA)?;
    let net = cfg
        .model
        .build(splits.train.sample_shape(), splits.train.class_count, cfg.seed)
        .code(EXIT_CONFIG)?;
    check_worker_split(splits.train.len(), cfg.batch_size, cfg.workers).code(EXIT_CONFIG)?;
    Ok((splits, net))
}

fn settings(cfg: &RunConfig, optimizer: &OptimizerSpec) -> TrainSettings {
    TrainSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        workers: cfg.workers,
        schedule: cfg.schedule.clone(),
        optimizer: optimizer.clone(),
    }
}

/// Appends CSV lines to a lazily created file.
struct CsvSink {
    path: PathBuf,
    header: &'static str,
    file: Option<std::io::BufWriter<fs::File>>,
}

impl CsvSink {
    fn new(path: PathBuf, header: &'static str) -> Self {
        Self { path, header, file: None }
    }

    fn open(&mut self) -> Result<()> {
        if self.file.is_none() {
            let f = fs::File::create(&self.path).map_err(|e| Error::io(&self.path, e))?;
            let mut w = std::io::BufWriter::new(f);
            writeln!(w, "{}", self.header).map_err(|e| Error::io(&self.path, e))?;
            self.file = Some(w);
        }
        Ok(())
    }

    fn line(&mut self, line: String) -> Result<()> {
        self.open()?;
        let w = self.file.as_mut().expect("opened above");
        writeln!(w, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        match self.file.as_mut() {
            Some(w) => w.flush().map_err(|e| Error::io(&self.path, e)),
            None => Ok(()),
        }
    }
}

fn hist_lines(step: u64, hists: &[Histogram], sink: &mut CsvSink) -> Result<()> {
    for h in hists {
        for (b, count) in h.counts.iter().enumerate() {
            sink.line(format!("{step},{},{},{},{count}", h.layer, h.edges[b], h.edges[b + 1]))?;
        }
    }
    Ok(())
}

/// Adam's bias-corrected second moment per layer, over its own range.
fn adam_proxy_histograms(net: &Network, opt: &Optimizer, bins: usize) -> Result<Vec<Histogram>> {
    let Some(adam) = opt.as_adam() else {
        return Ok(Vec::new());
    };
    let v = adam.v_hat();
    let mut blocks = v.iter();
    let mut out = Vec::new();
    for (layer, l) in net.layers().iter().enumerate() {
        let n = l.params().len();
        if n == 0 {
            continue;
        }
        let values: Vec<f64> = blocks.by_ref().take(n).flat_map(|t| t.data().to_vec()).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push(histogram(layer, &values, lo, hi, bins)?);
    }
    Ok(out)
}

fn write_snapshots(dir: &Path, step: u64, net: &Network, opt: &Optimizer) -> Result<()> {
    let Some(af) = opt.as_adafisher() else {
        return Ok(());
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (layer, st)) in net.layers().iter().zip(af.kf_states()).enumerate() {
        let Some(st) = st else { continue };
        let mut snap = KfSnapshot::from_state(i, layer.kind(), st);
        if let Some(cap) = layer.capture() {
            snap = snap.with_full(cap)?;
        }
        write_json(&dir.join(format!("step{step:06}_layer{i:02}.json")), &snap)?;
    }
    Ok(())
}

fn final_model_json(net: &Network, cfg: &RunConfig, optimizer: &OptimizerSpec) -> serde_json::Value {
    let layers: Vec<_> = net
        .layers()
        .iter()
        .map(|l| {
            let blocks: Vec<_> = l.params().iter().map(|t| json!({"shape": t.shape(), "data": t.data()})).collect();
            json!({"kind": l.kind().name(), "params": blocks})
        })
        .collect();
    json!({
        "optimizer": optimizer.name,
        "seed": cfg.seed,
        "input_shape": net.input_shape(),
        "layers": layers,
    })
}

/// Trains with `optimizer`, writing all artifacts into `dir`.
pub fn run_training(cfg: &RunConfig, optimizer: &OptimizerSpec, dir: &Path) -> CliResult<TrainOutcome> {
    let (splits, net) = prepare(cfg)?;
    create_dir(dir)?;
    let log = &cfg.logging;
    let mae_inputs = match &log.fisher_mae {
        Some(spec) => {
            let n = spec.inputs.min(splits.train.len());
            let idx: Vec<usize> = (0..n).collect();
            Some(splits.train.gather(&idx).code(EXIT_DATA)?.0)
        }
        None => None,
    };
    let mut hist_sink = CsvSink::new(dir.join("fim_hist.csv"), "step,layer,bin_lo,bin_hi,count");
    let mut mae_sink = CsvSink::new(dir.join("fisher_mae.csv"), "epoch,mae");
    let snap_dir = dir.join("snapshots");
    let mut mae_rng = SeededRng::new(cfg.seed).fork(0xF15E);

    let result = train(net, &splits.train, splits.test.as_ref(), &settings(cfg, optimizer), |ev| match ev {
        Event::Step { step, net, opt, .. } => {
            if log.snapshot_every.is_some_and(|k| step % k == 0) {
                write_snapshots(&snap_dir, step, net, opt)?;
            }
            if let Some(h) = &log.fim_hist {
                if step % h.every == 0 {
                    let hists = match opt.as_adafisher() {
                        Some(af) => fim_histogram(&af.efims()?, h.bins)?,
                        None => adam_proxy_histograms(net, opt, h.bins)?,
                    };
                    hist_lines(step, &hists, &mut hist_sink)?;
                }
            }
            Ok(())
        }
        Event::Epoch { row, net, opt } => {
            if let (Some(spec), Some(inputs), Some(af)) = (&log.fisher_mae, &mae_inputs, opt.as_adafisher()) {
                let truth = true_fisher_diag_mc(net, inputs, spec.samples, &mut mae_rng)?;
                let approx = kf_fisher_diag(net, af.kf_states())?;
                let mae = fisher_mae(&truth, &approx)?;
                if !mae.is_finite() {
                    return Err(Error::NonFinite("fisher MAE"));
                }
                mae_sink.line(format!("{},{mae}", row.epoch))?;
            }
            Ok(())
        }
    });
    let outcome = result.map_err(|error| CliError {
        code: training_code(&error),
        error,
    })?;
    hist_sink.finish().code(EXIT_FAILURE)?;
    mae_sink.finish().code(EXIT_FAILURE)?;
    write_metrics(&dir.join("metrics.csv"), &outcome.rows).code(EXIT_FAILURE)?;
    write_timing(&dir.join("timing.csv"), &outcome.timings).code(EXIT_FAILURE)?;
    write_json(&dir.join("final_model.json"), &final_model_json(&outcome.net, cfg, optimizer)).code(EXIT_FAILURE)?;
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    run_training(cfg, &cfg.optimizer, &out_dir(cfg))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub optimizer: String,
    pub best_accuracy: f64,
    pub final_loss: f64,
    pub mean_step_ms: f64,
}

/// Runs every listed optimizer from the same seed and writes
/// `comparison.csv`. Failed runs are skipped; the first failure's exit code
/// is returned after the table is written.
pub fn cmd_compare(cfg: &RunConfig) -> CliResult<Vec<ComparisonRow>> {
    if cfg.optimizers.len() < 2 {
        return Err(Error::invalid("compare needs at least two entries in `optimizers`")).code(EXIT_CONFIG);
    }
    let dir = out_dir(cfg);
    create_dir(&dir)?;
    let mut rows = Vec::new();
    let mut failure = None;
    for (i, spec) in cfg.optimizers.iter().enumerate() {
        match run_training(cfg, spec, &dir.join(format!("{i}_{}", spec.name))) {
            Ok(out) => rows.push(ComparisonRow {
                optimizer: spec.name.to_string(),
                best_accuracy: out.best_accuracy(),
                final_loss: out.rows.last().map_or(f64::NAN, |r| r.loss),
                mean_step_ms: out.mean_step_ms(),
            }),
            Err(e) => {
                log::error!("{} run failed: {e}", spec.name);
                failure.get_or_insert(e);
            }
        }
    }
    let path = dir.join("comparison.csv");
    let mut sink = CsvSink::new(path, "optimizer,best_accuracy,final_loss,mean_step_ms");
    for r in &rows {
        sink.line(format!("{},{},{},{}", r.optimizer, r.best_accuracy, r.final_loss, r.mean_step_ms))
            .code(EXIT_FAILURE)?;
    }
    sink.open().code(EXIT_FAILURE)?;
    sink.finish().code(EXIT_FAILURE)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

fn snapshot_matrix(full: &Option<Vec<Vec<f64>>>, diag: &[f64]) -> Result<Tensor> {
    match full {
        Some(rows) => Tensor::from_rows(rows),
        None => Ok(Tensor::from_diag(diag)),
    }
}

fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let mut text = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(f64::to_string).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `gershgorin.json` and `snr.json` (and DFT spectra on request) for
/// both factors of a snapshot. Uses the full factors when the snapshot has
/// them and the diagonal ones otherwise.
pub fn cmd_diagnose(args: &DiagnoseArgs) -> CliResult<(serde_json::Value, serde_json::Value)> {
    if !(args.sigma >= 0.0 && args.sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and non-negative")).code(EXIT_CONFIG);
    }
    let path = &args.snapshot;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e)).code(EXIT_DATA)?;
    let snap: KfSnapshot = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, e.to_string()))
        .code(EXIT_DATA)?;
    let factors = [
        ("H", snapshot_matrix(&snap.h_full, &snap.h_diag).code(EXIT_DATA)?),
        ("S", snapshot_matrix(&snap.s_full, &snap.s_diag).code(EXIT_DATA)?),
    ];
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let mut rng = SeededRng::new(args.seed);
    let mut gersh = json!({"layer_id": snap.layer_id, "kind": snap.kind, "step": snap.step});
    let mut snr = json!({"layer_id": snap.layer_id, "sigma": args.sigma, "seed": args.seed});
    for (name, m) in &factors {
        let analyse = |rng: &mut SeededRng| -> Result<_> {
            let mut report = gershgorin_report(m)?;
            let perturbed = perturb_offdiag(m, args.sigma, rng)?;
            let db = snr_offdiag(m, &perturbed)?;
            report.snr_db = Some(db);
            let shift = eigen_shift(m, &perturbed)?;
            Ok((report, db, shift))
        };
        let (report, db, shift) = analyse(&mut rng).code(EXIT_DATA)?;
        gersh[*name] = serde_json::to_value(&report).map_err(Error::from).code(EXIT_FAILURE)?;
        snr[*name] = json!({
            "snr_db": if db.is_finite() { json!(db) } else { serde_json::Value::Null },
            "eigen_shift": shift,
        });
        if args.dft {
            let spec = dft2_magnitude(m).code(EXIT_FAILURE)?;
            write_matrix_csv(&dir.join(format!("dft_{name}.csv")), &spec).code(EXIT_FAILURE)?;
        }
    }
    write_json(&dir.join("gershgorin.json"), &gersh).code(EXIT_FAILURE)?;
    write_json(&dir.join("snr.json"), &snr).code(EXIT_FAILURE)?;
    Ok((gersh, snr))
}

/// Trains on a CSV dataset and exports the per-epoch trajectory of the two
/// tracked parameters with the epoch losses.
pub fn cmd_landscape(cfg: &RunConfig) -> CliResult<LandscapeExport> {
    let track = match cfg.track.as_deref() {
        Some(&[a, b]) => [a, b],
        _ => {
            return Err(Error::invalid("landscape needs exactly two tracked parameter indices")).code(EXIT_CONFIG);
        }
    };
    if !matches!(cfg.dataset, DatasetSpec::Csv { .. }) {
        return Err(Error::invalid("landscape runs on a csv dataset")).code(EXIT_CONFIG);
    }
    let (splits, net) = prepare(cfg)?;
    let count = net.param_count();
    if track.iter().any(|&i| i >= count) {
        return Err(Error::invalid(format!("tracked index out of range for {count} parameters"))).code(EXIT_CONFIG);
    }
    let dir = out_dir(cfg);
    create_dir(&dir)?;
    let mut w = Vec::new();
    let mut loss = Vec::new();
    let result = train(net, &splits.train, splits.test.as_ref(), &settings(cfg, &cfg.optimizer), |ev| {
        if let Event::Epoch { row, net, .. } = ev {
            let p = net.params_flat();
            w.push([p[track[0]], p[track[1]]]);
            loss.push(row.loss);
        }
        Ok(())
    });
    let outcome = result.map_err(|error| CliError {
        code: training_code(&error),
        error,
    })?;
    write_metrics(&dir.join("metrics.csv"), &outcome.rows).code(EXIT_FAILURE)?;
    let export = landscape_export(w, loss).code(EXIT_CONFIG)?;
    write_json(&dir.join("landscape.json"), &export).code(EXIT_FAILURE)?;
    Ok(export)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("KRONFISHER_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    init_logging();
    let result = match &cli.command {
        Command::Train(args) => load_config(args).and_then(|c| cmd_train(&c)).map(|_| ()),
        Command::Compare(args) => load_config(args).and_then(|c| cmd_compare(&c)).map(|_| ()),
        Command::Diagnose(args) => cmd_diagnose(args).map(|_| ()),
        Command::Landscape(args) => load_config(args).and_then(|c| cmd_landscape(&c)).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
