//! In-process simulation of data-parallel training.
//!
//! A global batch is split into `K` contiguous shards, each processed by its
//! own network replica on a scoped thread. Gradients and Kronecker factors
//! are averaged in worker-id order, so results do not depend on thread
//! scheduling, and one optimizer step is applied to the primary replica and
//! broadcast to the rest.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::kfactor::collect_layer_factors;
use crate::nn::Network;
use crate::optim::Optimizer;
use crate::tensor::Tensor;

type LayerFactors = Vec<Option<(Vec<f64>, Vec<f64>)>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ShardMode {
    /// Batch size must divide evenly; workers are weighted `1/K`.
    #[default]
    Strict,
    /// Near-equal shards weighted by their size.
    Weighted,
}

/// Weighted sum `sum_k w_k v_k`, accumulated in index order.
fn ordered_mean(vectors: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    if vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::dim("aggregated vectors differ in length"));
    }
    let mut acc: Vec<f64> = first.iter().map(|v| v * weights[0]).collect();
    for (v, &w) in vectors.iter().zip(weights).skip(1) {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x * w;
        }
    }
    Ok(acc)
}

/// Arithmetic mean of per-worker factors, summed in worker-id order.
pub fn aggregate_kfs(locals: &[(Vec<f64>, Vec<f64>)]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = locals.len();
    if k == 0 {
        return Err(Error::invalid("no worker factors to aggregate"));
    }
    let hs: Vec<&[f64]> = locals.iter().map(|(h, _)| h.as_slice()).collect();
    let ss: Vec<&[f64]> = locals.iter().map(|(_, s)| s.as_slice()).collect();
    let (h, s) = (sum_in_order(&hs)?, sum_in_order(&ss)?);
    let kf = k as f64;
    Ok((h.iter().map(|v| v / kf).collect(), s.iter().map(|v| v / kf).collect()))
}

fn sum_in_order(vectors: &[&[f64]]) -> Result<Vec<f64>> {
    ordered_mean(vectors, &vec![1.0; vectors.len()])
}

/// Per-step output of [`WorkerPool::step`], kept for verification.
#[derive(Clone, Debug)]
pub struct DistStep {
    /// Mean training loss over the global batch.
    pub loss: f64,
    /// Aggregated gradient in flat parameter order.
    pub grads: Vec<f64>,
    /// Aggregated per-layer factors before the EMA.
    pub factors: LayerFactors,
    pub shards: Vec<Range<usize>>,
}

struct WorkerResult {
    loss: f64,
    grads: Vec<f64>,
    factors: LayerFactors,
}

/// `K` network replicas kept in lock-step.
#[derive(Clone, Debug)]
pub struct WorkerPool {
    replicas: Vec<Network>,
    mode: ShardMode,
}

impl WorkerPool {
    pub fn new(net: &Network, workers: usize, mode: ShardMode) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("need at least one worker"));
        }
        Ok(Self {
            replicas: vec![net.clone(); workers],
            mode,
        })
    }

    pub fn workers(&self) -> usize {
        self.replicas.len()
    }

    pub fn mode(&self) -> ShardMode {
        self.mode
    }

    /// Worker 0's replica; identical in parameters to every other replica.
    pub fn primary(&self) -> &Network {
        &self.replicas[0]
    }

    pub fn primary_mut(&mut self) -> &mut Network {
        &mut self.replicas[0]
    }

    pub fn replicas(&self) -> &[Network] {
        &self.replicas
    }

    /// Contiguous shard ranges for a batch of `n`.
    pub fn shards(&self, n: usize) -> Result<Vec<Range<usize>>> {
        let k = self.workers();
        if n < k {
            return Err(Error::invalid(format!("batch of {n} cannot feed {k} workers")));
        }
        if self.mode == ShardMode::Strict && n % k != 0 {
            return Err(Error::invalid(format!(
                "batch of {n} does not split evenly across {k} workers"
            )));
        }
        let (base, extra) = (n / k, n % k);
        let mut start = 0;
        Ok((0..k)
            .map(|w| {
                let len = base + usize::from(w < extra);
                let r = start..start + len;
                start += len;
                r
            })
            .collect())
    }

    /// Local forward/backward on every shard, then ordered reduction.
    pub fn compute(&mut self, x: &Tensor, targets: &[usize]) -> Result<DistStep> {
        let n = x.rows();
        if targets.len() != n {
            return Err(Error::dim("targets do not match batch"));
        }
        let shards = self.shards(n)?;
        let d = x.cols();
        let mut per_sample_shape = x.shape().to_vec();

        let results: Vec<Result<WorkerResult>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .replicas
                .iter_mut()
                .zip(&shards)
                .map(|(net, r)| {
                    per_sample_shape[0] = r.len();
                    let shape = per_sample_shape.clone();
                    let xs = &x.data()[r.start * d..r.end * d];
                    let ys = &targets[r.clone()];
                    scope.spawn(move || -> Result<WorkerResult> {
                        let xb = Tensor::new(&shape, xs.to_vec())?;
                        let (loss, _) = net.forward_backward(&xb, ys)?;
                        Ok(WorkerResult {
                            loss,
                            grads: net.grads_flat(),
                            factors: collect_layer_factors(net)?,
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::state("worker thread panicked"))))
                .collect()
        });
        let results: Vec<WorkerResult> = results.into_iter().collect::<Result<_>>()?;

        let k = results.len();
        let weights: Vec<f64> = match self.mode {
            ShardMode::Strict => vec![1.0 / k as f64; k],
            ShardMode::Weighted => shards.iter().map(|r| r.len() as f64 / n as f64).collect(),
        };
        let reduce = |vs: Vec<&[f64]>| -> Result<Vec<f64>> {
            if self.mode == ShardMode::Strict {
                let sum = sum_in_order(&vs)?;
                let kf = k as f64;
                Ok(sum.into_iter().map(|v| v / kf).collect())
            } else {
                ordered_mean(&vs, &weights)
            }
        };

        let grads = reduce(results.iter().map(|r| r.grads.as_slice()).collect())?;
        let loss = if self.mode == ShardMode::Strict {
            results.iter().map(|r| r.loss).sum::<f64>() / k as f64
        } else {
            results.iter().zip(&weights).map(|(r, w)| r.loss * w).sum()
        };
        let layers = results[0].factors.len();
        let mut factors = Vec::with_capacity(layers);
        for li in 0..layers {
            match &results[0].factors[li] {
                None => factors.push(None),
                Some(_) => {
                    let pairs: Vec<&(Vec<f64>, Vec<f64>)> = results
                        .iter()
                        .map(|r| r.factors[li].as_ref().ok_or_else(|| Error::state("worker missing factors")))
                        .collect::<Result<_>>()?;
                    let h = reduce(pairs.iter().map(|p| p.0.as_slice()).collect())?;
                    let s = reduce(pairs.iter().map(|p| p.1.as_slice()).collect())?;
                    factors.push(Some((h, s)));
                }
            }
        }
        Ok(DistStep {
            loss,
            grads,
            factors,
            shards,
        })
    }

    /// One global step: shard, reduce, update the primary replica with the
    /// aggregated gradient (and, for AdaFisher, one EMA update on the
    /// aggregated factors), then broadcast its state.
    pub fn step(&mut self, x: &Tensor, targets: &[usize], opt: &mut Optimizer, lr: f64) -> Result<DistStep> {
        let out = self.compute(x, targets)?;
        let primary = &mut self.replicas[0];
        primary.set_grads_flat(&out.grads)?;
        match opt {
            Optimizer::AdaFisher(af) => {
                af.update_curvature(&out.factors)?;
                af.apply(primary, lr)?;
            }
            other => other.step(primary, lr)?,
        }
        let (head, tail) = self.replicas.split_at_mut(1);
        for r in tail {
            r.copy_state_from(&head[0])?;
        }
        Ok(out)
    }
}
