use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::data::{batch_iter, Dataset};
use crate::dist::{ShardMode, WorkerPool};
use crate::error::{Error, Result};
use crate::nn::{nll_softmax_loss, Network};
use crate::optim::{Optimizer, OptimizerSpec, Schedule};
use crate::tensor::SeededRng;

pub const METRICS_HEADER: &str = "step,epoch,split,loss,accuracy,train_loss,lr,optimizer,seed";

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub schedule: Schedule,
    pub optimizer: OptimizerSpec,
}

/// One row per epoch, evaluated on the test split when there is one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: u64,
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    pub lr: f64,
    pub optimizer: String,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepTiming {
    pub step: u64,
    pub epoch: usize,
    pub step_time_ms: f64,
}

pub enum Event<'a> {
    /// After every optimizer step. `net` still holds that step's captures.
    Step {
        step: u64,
        epoch: usize,
        net: &'a Network,
        opt: &'a Optimizer,
    },
    Epoch {
        row: &'a MetricRow,
        net: &'a mut Network,
        opt: &'a Optimizer,
    },
}

pub struct TrainOutcome {
    pub rows: Vec<MetricRow>,
    pub timings: Vec<StepTiming>,
    pub net: Network,
    pub opt: Optimizer,
}

impl TrainOutcome {
    pub fn mean_step_ms(&self) -> f64 {
        if self.timings.is_empty() {
            return 0.0;
        }
        self.timings.iter().map(|t| t.step_time_ms).sum::<f64>() / self.timings.len() as f64
    }

    pub fn best_accuracy(&self) -> f64 {
        self.rows.iter().map(|r| r.accuracy).fold(f64::NAN, f64::max)
    }
}

/// Mean loss and accuracy in evaluation mode.
pub fn evaluate(net: &mut Network, ds: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for batch in batch_iter(ds.len(), batch_size, 0, false)? {
        let (x, y) = ds.gather(&batch)?;
        let logits = net.forward(&x, false)?;
        let (l, _) = nll_softmax_loss(&logits, &y)?;
        loss += l * y.len() as f64;
        for (i, &t) in y.iter().enumerate() {
            if argmax(logits.row(i)) == t {
                correct += 1;
            }
        }
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Every batch size of an epoch must split evenly over the workers.
pub fn check_worker_split(n: usize, batch_size: usize, workers: usize) -> Result<()> {
    if workers <= 1 {
        return Ok(());
    }
    let short = n % batch_size;
    for b in [batch_size.min(n), short] {
        if b != 0 && b % workers != 0 {
            return Err(Error::invalid(format!(
                "a batch of {b} samples does not split over {workers} workers"
            )));
        }
    }
    Ok(())
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    SeededRng::new(seed).fork(epoch as u64).next_u64()
}

/// Trains `net` on `train` for `settings.epochs` epochs, calling `on_event`
/// after every step and every epoch.
pub fn train(
    net: Network,
    train: &Dataset,
    test: Option<&Dataset>,
    settings: &TrainSettings,
    mut on_event: impl FnMut(Event<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    if settings.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    settings.schedule.validate()?;
    check_worker_split(train.len(), settings.batch_size, settings.workers)?;
    let mut opt = Optimizer::build(&settings.optimizer, &net)?;
    let mut pool = if settings.workers > 1 {
        Some(WorkerPool::new(&net, settings.workers, ShardMode::Strict)?)
    } else {
        None
    };
    let mut net = net;
    let alpha0 = settings.optimizer.lr();
    let name = settings.optimizer.name.to_string();
    let mut rows = Vec::with_capacity(settings.epochs);
    let mut timings = Vec::new();
    let mut step = 0u64;

    for epoch in 0..settings.epochs {
        let lr = settings.schedule.lr(epoch as u64, alpha0);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batch_iter(train.len(), settings.batch_size, epoch_seed(settings.seed, epoch), true)? {
            let (x, y) = train.gather(&batch)?;
            let start = Instant::now();
            let loss = match pool.as_mut() {
                Some(pool) => pool.step(&x, &y, &mut opt, lr)?.loss,
                None => {
                    let (loss, _) = net.forward_backward(&x, &y)?;
                    opt.step(&mut net, lr)?;
                    loss
                }
            };
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            step += 1;
            let current = pool.as_ref().map_or(&net, |p| p.primary());
            if !loss.is_finite() || current.params_flat().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training step"));
            }
            timings.push(StepTiming {
                step,
                epoch,
                step_time_ms: elapsed,
            });
            loss_sum += loss * y.len() as f64;
            seen += y.len();
            on_event(Event::Step {
                step,
                epoch,
                net: current,
                opt: &opt,
            })?;
        }
        if let Some(pool) = &pool {
            net.copy_state_from(pool.primary())?;
        }
        let (split, ds) = match test {
            Some(t) => ("test", t),
            None => ("train", train),
        };
        let (loss, accuracy) = evaluate(&mut net, ds, settings.batch_size)?;
        let row = MetricRow {
            step,
            epoch,
            split,
            loss,
            accuracy,
            train_loss: loss_sum / seen as f64,
            lr,
            optimizer: name.clone(),
            seed: settings.seed,
        };
        log::info!(
            "{name} epoch {epoch}: {split} loss {loss:.4} acc {:.2}% lr {lr:e}",
            accuracy * 100.0
        );
        on_event(Event::Epoch {
            row: &row,
            net: &mut net,
            opt: &opt,
        })?;
        rows.push(row);
    }
    Ok(TrainOutcome {
        rows,
        timings,
        net,
        opt,
    })
}

/// Writes `rows` as CSV with a single header line. Floats use Rust's
/// shortest round-trip formatting.
pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(METRICS_HEADER.split(',')).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            r.split.to_string(),
            r.loss.to_string(),
            r.accuracy.to_string(),
            r.train_loss.to_string(),
            r.lr.to_string(),
            r.optimizer.clone(),
            r.seed.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timing(path: &Path, timings: &[StepTiming]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    put("step,epoch,step_time_ms".into())?;
    for t in timings {
        put(format!("{},{},{}", t.step, t.epoch, t.step_time_ms))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}
