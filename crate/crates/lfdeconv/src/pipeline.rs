//! Layer-partitioned parallel execution of the RL loop.
//!
//! The volume is split by z-layer: each worker owns a contiguous slab and
//! never ships it anywhere during iterations. Per iteration a worker sends
//! only image-sized payloads — its fixed-point partial of the forward
//! projection and its local maximum projection — and receives the shared
//! ratio image back, so inter-worker traffic per iteration is proportional
//! to `H·W` and independent of the layer count.
//!
//! Because the forward partials are quantized integers (see
//! [`crate::lfmodel::accum`]) the merged projection is bit-identical for
//! every worker count, and the coordinator replays exactly the bookkeeping
//! of the sequential loop — a run with `W` workers reproduces
//! [`crate::deconv::deconvolve`] bit for bit.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deconv::apply_rl_update;
use crate::error::{Error, Result};
use crate::lfmodel::conv::{engine_by_name, ConvEngine};
use crate::lfmodel::{accum, check_geometry, LightFieldImage, PsfStack, Volume};
use crate::metric::Image2D;
use crate::optics::OpticsParams;

/// Contiguous z-range assigned to one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub len: usize,
}

/// How a run's layers are divided among workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub worker_count: usize,
    /// Contiguous, disjoint, ascending ranges covering `[0, nz)`; sizes
    /// differ by at most one with the larger slabs first (possibly zero
    /// when workers outnumber layers).
    pub assignments: Vec<LayerRange>,
}

impl WorkerPlan {
    /// Estimated peak bytes any single worker needs under this plan, from
    /// the per-worker memory model at the given element size.
    pub fn bytes_per_worker(
        &self,
        height: usize,
        width: usize,
        nnum: usize,
        kh: usize,
        kw: usize,
        precision_bytes: usize,
    ) -> Result<u64> {
        let mut peak = 0u64;
        for r in &self.assignments {
            let est = estimate_memory(r.len, height, width, nnum, kh, kw, precision_bytes)?;
            peak = peak.max(est.total_bytes);
        }
        Ok(peak)
    }
}

/// Splits `nz` layers over `workers` as evenly as possible: the first
/// `nz mod workers` workers take `⌈nz/workers⌉` layers, the rest take
/// `⌊nz/workers⌋` (possibly zero when workers outnumber layers).
pub fn partition_layers(nz: usize, workers: usize) -> Result<WorkerPlan> {
    if nz == 0 {
        return Err(Error::invalid("nz", "cannot partition zero layers"));
    }
    if workers == 0 {
        return Err(Error::invalid("workers", "need at least one worker"));
    }
    let base = nz / workers;
    let extra = nz % workers;
    let mut assignments = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        assignments.push(LayerRange { start, len });
        start += len;
    }
    debug_assert_eq!(start, nz);
    Ok(WorkerPlan {
        worker_count: workers,
        assignments,
    })
}

/// Peak per-worker memory model, in bytes at the caller's element size:
///
/// * `volume_bytes` — `3·nz_local·H·W` elements: current slab,
///   best-snapshot slab, update denominator
/// * `psf_bytes` — `nz_local·nnum²·kh·kw` elements: the worker's share of
///   PSF kernels
/// * `image_bytes` — `2·H·W` elements: forward/ratio image buffers
/// * `workspace_bytes` — `4·(H+kh−1)·(W+kw−1)` elements: padded transform
///   scratch
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub volume_bytes: u64,
    pub psf_bytes: u64,
    pub image_bytes: u64,
    pub workspace_bytes: u64,
    /// Exactly the sum of the four component terms.
    pub total_bytes: u64,
}

impl MemoryEstimate {
    /// The largest single term — what to shrink first when over budget.
    pub fn limiting_term(&self) -> &'static str {
        let terms = [
            (self.volume_bytes, "volume slabs"),
            (self.psf_bytes, "psf kernels"),
            (self.image_bytes, "image buffers"),
            (self.workspace_bytes, "transform workspace"),
        ];
        terms
            .iter()
            .max_by_key(|(v, _)| *v)
            .map(|&(_, name)| name)
            .unwrap()
    }
}

/// Evaluates the per-worker memory model with overflow-checked arithmetic.
/// `precision_bytes` is the element size the caller plans to compute in.
pub fn estimate_memory(
    nz_local: usize,
    height: usize,
    width: usize,
    nnum: usize,
    kh: usize,
    kw: usize,
    precision_bytes: usize,
) -> Result<MemoryEstimate> {
    if height == 0 || width == 0 || nnum == 0 || kh == 0 || kw == 0 {
        return Err(Error::invalid(
            "memory estimate",
            "height, width, nnum and kernel dims must be >= 1",
        ));
    }
    if precision_bytes == 0 {
        return Err(Error::invalid("precision_bytes", "must be >= 1"));
    }

    let overflow = |term: &'static str| Error::MemoryOverflow { term };
    let mul = |a: u64, b: u64, term: &'static str| -> Result<u64> {
        a.checked_mul(b).ok_or_else(|| overflow(term))
    };

    let (nz_l, h, w) = (nz_local as u64, height as u64, width as u64);
    let (nn, khh, kww) = (nnum as u64, kh as u64, kw as u64);
    let prec = precision_bytes as u64;

    let hw = mul(h, w, "image buffers")?;
    let volume_bytes = mul(
        prec,
        mul(3, mul(nz_l, hw, "volume slabs")?, "volume slabs")?,
        "volume slabs",
    )?;
    let psf_bytes = mul(
        prec,
        mul(
            mul(nz_l, mul(nn, nn, "psf kernels")?, "psf kernels")?,
            mul(khh, kww, "psf kernels")?,
            "psf kernels",
        )?,
        "psf kernels",
    )?;
    let image_bytes = mul(prec, mul(2, hw, "image buffers")?, "image buffers")?;
    let hp = h
        .checked_add(khh - 1)
        .ok_or_else(|| overflow("transform workspace"))?;
    let wp = w
        .checked_add(kww - 1)
        .ok_or_else(|| overflow("transform workspace"))?;
    let workspace_bytes = mul(
        prec,
        mul(4, mul(hp, wp, "transform workspace")?, "transform workspace")?,
        "transform workspace",
    )?;

    let total_bytes = volume_bytes
        .checked_add(psf_bytes)
        .and_then(|v| v.checked_add(image_bytes))
        .and_then(|v| v.checked_add(workspace_bytes))
        .ok_or_else(|| overflow("total"))?;

    Ok(MemoryEstimate {
        volume_bytes,
        psf_bytes,
        image_bytes,
        workspace_bytes,
        total_bytes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelOptions {
    pub workers: usize,
    /// Per-worker budget checked against [`estimate_memory`] (at f64
    /// precision) before any thread starts.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            memory_budget_bytes: None,
        }
    }
}

/// Logical bytes moved between the coordinator and workers.
///
/// Counted as payload sizes of the channel messages (16 bytes per fixed-point
/// pixel, 8 per f64 pixel, and the ratio image once per receiving worker);
/// in-process channels move pointers, but the ledger reflects what a
/// distributed transport would ship.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub workers: usize,
    pub iterations: usize,
    /// Bytes exchanged during one RL iteration; identical every iteration
    /// and independent of the volume's layer count.
    pub per_iteration_bytes: u64,
    /// One-time setup bytes (initialization round).
    pub setup_bytes: u64,
    /// One-time teardown bytes (result slabs returning to the coordinator);
    /// this part scales with nz, the per-iteration part does not.
    pub teardown_bytes: u64,
    pub total_bytes: u64,
}

const I128_BYTES: u64 = 16;
const F64_BYTES: u64 = 8;
/// Accounted size of a control message (`Init`/`Proceed`).
const CONTROL_BYTES: u64 = 16;

enum ToWorker {
    /// Uniform starting level for the slab.
    Init { u0: f64 },
    /// Shared measurement ratio for the backward half of the iteration.
    Ratio(Arc<Vec<f64>>),
    /// Outcome of the iteration: optionally snapshot the slab as current
    /// best, then either continue or return the result slab and exit.
    Proceed { snapshot: bool, more: bool },
}

enum ToCoord {
    OnesPartial { worker: usize, acc: Vec<i128> },
    ForwardPartial { worker: usize, acc: Vec<i128> },
    MaxProj { worker: usize, data: Vec<f64> },
    Slab { worker: usize, start: usize, data: Vec<f64> },
    Failed { worker: usize, reason: String },
}

struct WorkerCtx<'a> {
    id: usize,
    range: LayerRange,
    psf: &'a PsfStack,
    engine: Arc<dyn ConvEngine>,
    height: usize,
    width: usize,
    epsilon: f64,
    /// This worker's slab of a caller-supplied starting volume; when absent
    /// the run opens with the uniform-level handshake instead.
    init_slab: Option<&'a [f64]>,
}

fn worker_body(ctx: &WorkerCtx<'_>, rx: &Receiver<ToWorker>, tx: &Sender<ToCoord>) -> Result<()> {
    let WorkerCtx {
        id,
        range,
        psf,
        engine,
        height,
        width,
        epsilon,
        init_slab,
    } = ctx;
    let (h, w) = (*height, *width);
    let npix = h * w;
    let zs = range.start..range.start + range.len;

    // Per-layer update denominator max(Hᵀ1, ε); same arithmetic as the
    // sequential normalizer, restricted to this worker's layers.
    let ones_img = vec![1.0f64; npix];
    let mut denom = vec![0.0f64; range.len * npix];
    for (i, z) in zs.clone().enumerate() {
        engine.backward_layer(psf, z, &ones_img, h, w, &mut denom[i * npix..(i + 1) * npix]);
    }
    for d in &mut denom {
        *d = d.max(*epsilon);
    }

    let mut layer_buf = vec![0.0f64; npix];
    let mut slab = match init_slab {
        Some(s) => s.to_vec(),
        None => {
            // Setup round: partial forward projection of an all-ones
            // volume, for the coordinator's uniform starting level.
            let mut acc = vec![0i128; npix];
            for z in zs.clone() {
                layer_buf.iter_mut().for_each(|v| *v = 0.0);
                engine.forward_layer(psf, z, &ones_img, h, w, &mut layer_buf);
                accum::accumulate(&mut acc, &layer_buf)?;
            }
            let _ = tx.send(ToCoord::OnesPartial { worker: *id, acc });

            match rx.recv() {
                Ok(ToWorker::Init { u0 }) => vec![u0; range.len * npix],
                // Coordinator bailed out during setup.
                _ => return Ok(()),
            }
        }
    };
    let mut best_slab: Option<Vec<f64>> = None;
    let mut num_buf = vec![0.0f64; npix];

    loop {
        // Forward phase: fixed-point partial of H·x over local layers.
        let mut acc = vec![0i128; npix];
        for (i, z) in zs.clone().enumerate() {
            layer_buf.iter_mut().for_each(|v| *v = 0.0);
            engine.forward_layer(psf, z, &slab[i * npix..(i + 1) * npix], h, w, &mut layer_buf);
            accum::accumulate(&mut acc, &layer_buf)?;
        }
        let _ = tx.send(ToCoord::ForwardPartial { worker: *id, acc });

        // Backward phase: update local layers from the shared ratio.
        let ratio = match rx.recv() {
            Ok(ToWorker::Ratio(r)) => r,
            _ => return Ok(()),
        };
        for (i, z) in zs.clone().enumerate() {
            num_buf.iter_mut().for_each(|v| *v = 0.0);
            engine.backward_layer(psf, z, &ratio, h, w, &mut num_buf);
            apply_rl_update(
                &mut slab[i * npix..(i + 1) * npix],
                &num_buf,
                &denom[i * npix..(i + 1) * npix],
            );
        }
        drop(ratio);

        // Projection phase: local max projection (zeros when the slab is
        // empty — a neutral element, since volumes are nonnegative).
        let mut proj = vec![0.0f64; npix];
        for i in 0..range.len {
            for (p, &v) in proj.iter_mut().zip(&slab[i * npix..(i + 1) * npix]) {
                *p = p.max(v);
            }
        }
        let _ = tx.send(ToCoord::MaxProj { worker: *id, data: proj });

        // Decision phase.
        match rx.recv() {
            Ok(ToWorker::Proceed { snapshot, more }) => {
                if snapshot {
                    best_slab = Some(slab.clone());
                }
                if !more {
                    // The first iteration always improves on "no score yet",
                    // so a snapshot exists by the time the run ends.
                    let _ = tx.send(ToCoord::Slab {
                        worker: *id,
                        start: range.start,
                        data: best_slab.unwrap_or(slab),
                    });
                    return Ok(());
                }
            }
            _ => return Ok(()),
        }
    }
}

fn spawn_worker<'scope, 'env>(
    scope: &'scope thread::Scope<'scope, 'env>,
    ctx: WorkerCtx<'env>,
    rx: Receiver<ToWorker>,
    tx: Sender<ToCoord>,
) where
    'env: 'scope,
{
    scope.spawn(move || {
        let id = ctx.id;
        match catch_unwind(AssertUnwindSafe(|| worker_body(&ctx, &rx, &tx))) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => {
                let _ = tx.send(ToCoord::Failed {
                    worker: id,
                    reason: e.to_string(),
                });
            }
            Err(payload) => {
                let reason = payload
                    .downcast_ref::<&str>()
                    .map(|s| (*s).to_string())
                    .or_else(|| payload.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "worker panicked".to_string());
                let _ = tx.send(ToCoord::Failed { worker: id, reason });
            }
        }
    });
}

/// Collects exactly one phase message from every worker, dispatched by
/// worker id. Any `Failed` message aborts the run.
fn collect_phase<T>(
    rx: &Receiver<ToCoord>,
    workers: usize,
    mut extract: impl FnMut(ToCoord) -> Result<(usize, T)>,
) -> Result<Vec<T>> {
    let mut slots: Vec<Option<T>> = (0..workers).map(|_| None).collect();
    for _ in 0..workers {
        let msg = rx.recv().map_err(|_| Error::WorkerFailure {
            worker: usize::MAX,
            reason: "worker channel closed unexpectedly".to_string(),
        })?;
        if let ToCoord::Failed { worker, reason } = msg {
            return Err(Error::WorkerFailure { worker, reason });
        }
        let (worker, value) = extract(msg)?;
        if slots[worker].replace(value).is_some() {
            return Err(Error::WorkerFailure {
                worker,
                reason: "duplicate phase message".to_string(),
            });
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

fn protocol_error(context: &'static str) -> Error {
    Error::WorkerFailure {
        worker: usize::MAX,
        reason: format!("protocol violation: unexpected message during {context}"),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Parallel RL with an injected evaluator; returns the reconstruction and
/// the transfer ledger. Mirrors `deconvolve_with` decision-for-decision.
pub fn run_parallel_with(
    y: &LightFieldImage,
    psf: &PsfStack,
    settings: &crate::deconv::DeconvSettings,
    init: Option<&Volume>,
    evaluator: &dyn crate::deconv::IterationEvaluator,
    options: &ParallelOptions,
    progress: &mut dyn crate::deconv::ProgressSink,
) -> Result<(crate::deconv::DeconvResult, TransferReport)> {
    use crate::deconv::{DeconvResult, MetricSample, MetricSeries, StopMode};

    settings.validate()?;
    check_geometry(y.height(), y.width(), psf)?;
    if y.nnum() != psf.nnum() {
        return Err(Error::DimensionMismatch {
            context: "run_parallel",
            expected: format!("nnum {}", psf.nnum()),
            found: format!("{}", y.nnum()),
        });
    }
    if let Some(v) = init {
        v.ensure_nonnegative("initial volume")?;
        if v.nz() != psf.nz() || v.height() != y.height() || v.width() != y.width() {
            return Err(Error::DimensionMismatch {
                context: "initial volume",
                expected: format!("{}x{}x{}", psf.nz(), y.height(), y.width()),
                found: format!("{}x{}x{}", v.nz(), v.height(), v.width()),
            });
        }
    }
    // Fail fast on a bad engine name before starting threads.
    engine_by_name(&settings.engine)?;

    let plan = partition_layers(psf.nz(), options.workers)?;
    if let Some(budget) = options.memory_budget_bytes {
        for range in &plan.assignments {
            let est = estimate_memory(
                range.len,
                y.height(),
                y.width(),
                psf.nnum(),
                psf.kh(),
                psf.kw(),
                std::mem::size_of::<f64>(),
            )?;
            if est.total_bytes > budget {
                return Err(Error::BudgetExceeded {
                    required: est.total_bytes,
                    budget,
                    limiting_term: est.limiting_term(),
                });
            }
        }
    }

    let workers = options.workers;
    let npix = y.height() * y.width();
    let eps = settings.epsilon;

    let mut setup_bytes = 0u64;
    let mut iteration_bytes = 0u64;
    let mut teardown_bytes = 0u64;

    let mut coordinate = |scope: &thread::Scope<'_, '_>,
                      to_workers: Vec<Sender<ToWorker>>,
                      from_workers: Receiver<ToCoord>,
                      setup_bytes: &mut u64,
                      iteration_bytes: &mut u64,
                      teardown_bytes: &mut u64|
     -> Result<DeconvResult> {
        let _ = scope;
        if init.is_some() {
            // Workers were handed their slabs at spawn; a distributed
            // transport would ship the whole starting volume once.
            *setup_bytes += (psf.nz() * npix) as u64 * F64_BYTES;
        } else {
            // ---- Setup: uniform starting level from the merged
            // ones-forward, exactly as the sequential initializer does.
            let ones_partials = collect_phase(&from_workers, workers, |msg| match msg {
                ToCoord::OnesPartial { worker, acc } => Ok((worker, acc)),
                _ => Err(protocol_error("setup")),
            })?;
            *setup_bytes += workers as u64 * npix as u64 * I128_BYTES;

            let mut merged = vec![0i128; npix];
            for part in &ones_partials {
                accum::merge(&mut merged, part)?;
            }
            let h_ones = accum::resolve_nonneg(&merged);

            let mean_y = mean(y.data());
            if mean_y <= 0.0 {
                return Err(Error::invalid(
                    "measurement",
                    "all pixels are zero; nothing to reconstruct",
                ));
            }
            let mean_h1 = mean(&h_ones);
            if mean_h1 <= 0.0 {
                return Err(Error::invalid(
                    "psf",
                    "forward projection of a uniform volume is zero",
                ));
            }
            let u0 = mean_y / mean_h1;
            for tx in &to_workers {
                tx.send(ToWorker::Init { u0 })
                    .map_err(|_| protocol_error("init"))?;
            }
            *setup_bytes += workers as u64 * CONTROL_BYTES;
        }

        // ---- Iterations: identical bookkeeping to the sequential loop.
        let mut series = MetricSeries::default();
        let mut best: Option<(usize, f64)> = None;
        let mut decreases = 0usize;
        let mut prev_entropy = f64::NEG_INFINITY;
        let limit = settings.policy.iteration_limit();
        let mut iterations_run = 0;
        let mut ratio = Vec::with_capacity(npix);

        for k in 1..=limit {
            let t0 = Instant::now();

            let partials = collect_phase(&from_workers, workers, |msg| match msg {
                ToCoord::ForwardPartial { worker, acc } => Ok((worker, acc)),
                _ => Err(protocol_error("forward")),
            })?;
            *iteration_bytes += workers as u64 * npix as u64 * I128_BYTES;

            let mut merged = vec![0i128; npix];
            for part in &partials {
                accum::merge(&mut merged, part)?;
            }
            let fwd = accum::resolve_nonneg(&merged);

            crate::deconv::measurement_ratio(y.data(), &fwd, eps, &mut ratio);
            let shared = Arc::new(std::mem::take(&mut ratio));
            for tx in &to_workers {
                tx.send(ToWorker::Ratio(Arc::clone(&shared)))
                    .map_err(|_| protocol_error("ratio"))?;
            }
            *iteration_bytes += workers as u64 * npix as u64 * F64_BYTES;

            let projections = collect_phase(&from_workers, workers, |msg| match msg {
                ToCoord::MaxProj { worker, data } => Ok((worker, data)),
                _ => Err(protocol_error("projection")),
            })?;
            *iteration_bytes += workers as u64 * npix as u64 * F64_BYTES;

            let mut proj = vec![0.0f64; npix];
            for p in &projections {
                for (dst, &v) in proj.iter_mut().zip(p) {
                    *dst = dst.max(v);
                }
            }
            let image = Image2D::from_vec(y.height(), y.width(), proj)?;
            let entropy = evaluator.evaluate_projection(k, &image)?;
            if !entropy.is_finite() {
                return Err(Error::invalid(
                    "metric",
                    format!("evaluator returned non-finite score {entropy} at iteration {k}"),
                ));
            }

            let sample = MetricSample {
                iteration: k,
                entropy,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            };
            series.samples.push(sample);
            progress.on_iteration(&sample);
            iterations_run = k;

            let improved = !matches!(best, Some((_, e)) if entropy <= e);
            if improved {
                best = Some((k, entropy));
            }
            if entropy < prev_entropy {
                decreases += 1;
            } else {
                decreases = 0;
            }
            prev_entropy = entropy;

            let stop = k == limit
                || (matches!(settings.policy.mode, StopMode::Auto)
                    && k >= settings.policy.min_iters
                    && decreases >= settings.policy.patience);
            for tx in &to_workers {
                tx.send(ToWorker::Proceed {
                    snapshot: improved,
                    more: !stop,
                })
                .map_err(|_| protocol_error("proceed"))?;
            }
            *iteration_bytes += workers as u64 * CONTROL_BYTES;

            if stop {
                break;
            }
        }

        // ---- Teardown: collect result slabs.
        let slabs = collect_phase(&from_workers, workers, |msg| match msg {
            ToCoord::Slab { worker, start, data } => Ok((worker, (start, data))),
            _ => Err(protocol_error("teardown")),
        })?;
        let mut volume = Volume::zeros(psf.nz(), y.height(), y.width());
        for (start, data) in &slabs {
            *teardown_bytes += data.len() as u64 * F64_BYTES;
            volume.data_mut()[start * npix..start * npix + data.len()].copy_from_slice(data);
        }

        let (best_iteration, _) = best.expect("at least one iteration always runs");
        Ok(DeconvResult {
            volume,
            best_iteration,
            iterations_run,
            series,
        })
    };

    let npix_full = npix;
    let result = thread::scope(|scope| {
        let (to_coord, from_workers) = channel::<ToCoord>();
        let mut to_workers = Vec::with_capacity(workers);
        for (id, range) in plan.assignments.iter().enumerate() {
            let (tx, rx) = channel::<ToWorker>();
            to_workers.push(tx);
            let ctx = WorkerCtx {
                id,
                range: *range,
                psf,
                engine: engine_by_name(&settings.engine).expect("validated above"),
                height: y.height(),
                width: y.width(),
                epsilon: eps,
                init_slab: init.map(|v| {
                    &v.data()[range.start * npix_full..(range.start + range.len) * npix_full]
                }),
            };
            spawn_worker(scope, ctx, rx, to_coord.clone());
        }
        drop(to_coord);

        coordinate(
            scope,
            to_workers,
            from_workers,
            &mut setup_bytes,
            &mut iteration_bytes,
            &mut teardown_bytes,
        )
    })?;

    let iterations = result.iterations_run;
    debug_assert_eq!(iteration_bytes % iterations as u64, 0);
    let report = TransferReport {
        workers,
        iterations,
        per_iteration_bytes: iteration_bytes / iterations as u64,
        setup_bytes,
        teardown_bytes,
        total_bytes: setup_bytes + iteration_bytes + teardown_bytes,
    };
    Ok((result, report))
}

/// Parallel reconstruction with the production DCT-entropy evaluator.
pub fn run_parallel(
    y: &LightFieldImage,
    psf: &PsfStack,
    optics: &OpticsParams,
    settings: &crate::deconv::DeconvSettings,
    init: Option<&Volume>,
    options: &ParallelOptions,
    progress: &mut dyn crate::deconv::ProgressSink,
) -> Result<crate::deconv::DeconvResult> {
    run_parallel_instrumented(y, psf, optics, settings, init, options, progress).map(|(r, _)| r)
}

/// [`run_parallel`] plus the transfer ledger.
pub fn run_parallel_instrumented(
    y: &LightFieldImage,
    psf: &PsfStack,
    optics: &OpticsParams,
    settings: &crate::deconv::DeconvSettings,
    init: Option<&Volume>,
    options: &ParallelOptions,
    progress: &mut dyn crate::deconv::ProgressSink,
) -> Result<(crate::deconv::DeconvResult, TransferReport)> {
    let evaluator =
        crate::deconv::DctEvaluator::new(optics, y.height(), y.width(), settings.metric)?;
    run_parallel_with(y, psf, settings, init, &evaluator, options, progress)
}
