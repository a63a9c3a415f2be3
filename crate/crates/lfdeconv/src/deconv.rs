//! Richardson–Lucy deconvolution with entropy-guided iteration selection.
//!
//! The estimate advances by the multiplicative update
//! `x ← x · Hᵀ(y ⊘ (Hx + ε)) / max(Hᵀ1, ε)` from a uniform initial volume.
//! Every iterate is scored with the band-limited DCT entropy of its maximum
//! z-projection; in [`StopMode::Auto`] the loop ends once the score has
//! dropped for `patience` consecutive iterations. Either mode returns the
//! best-scoring snapshot along with the full score series.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfmodel::conv::{engine_by_name, ConvEngine, DEFAULT_ENGINE};
use crate::lfmodel::{
    backward_project, compute_normalizer, forward_project, LightFieldImage, PsfStack, Volume,
};
use crate::metric::{dct_entropy, max_project_z, Image2D, MetricConfig};
use crate::optics::{cutoff_region, CutoffRegion, OpticsParams};

/// How many RL iterations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopMode {
    /// Stop at the first iteration `k ≥ min_iters` whose entropy has fallen
    /// for `patience` consecutive iterations, or at `max_iters`.
    Auto,
    /// Run exactly this many iterations; `max_iters` is ignored.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopPolicy {
    pub mode: StopMode,
    pub max_iters: usize,
    pub min_iters: usize,
    /// Consecutive strict entropy decreases required to stop in Auto mode.
    pub patience: usize,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self {
            mode: StopMode::Auto,
            max_iters: 50,
            min_iters: 2,
            patience: 1,
        }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if self.min_iters == 0 {
            return Err(Error::invalid("min_iters", "must be >= 1"));
        }
        if self.min_iters > self.max_iters {
            return Err(Error::invalid(
                "min_iters",
                format!(
                    "min_iters {} exceeds max_iters {}",
                    self.min_iters, self.max_iters
                ),
            ));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be >= 1"));
        }
        if let StopMode::Fixed(n) = self.mode {
            if n == 0 {
                return Err(Error::invalid("iterations", "fixed mode needs >= 1 iteration"));
            }
        }
        Ok(())
    }

    /// Hard upper bound on iterations in either mode.
    pub fn iteration_limit(&self) -> usize {
        match self.mode {
            StopMode::Auto => self.max_iters,
            StopMode::Fixed(n) => n,
        }
    }
}

/// Score of one RL iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    /// 1-based RL iteration index.
    pub iteration: usize,
    pub entropy: f64,
    /// Wall-clock duration of the iteration (update plus evaluation).
    /// Timing is environment noise — reproducibility comparisons must look
    /// at `iteration` and `entropy` only.
    pub wall_ms: f64,
}

/// Entropy trace of a full run, one sample per executed iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub samples: Vec<MetricSample>,
}

impl MetricSeries {
    /// Iteration with the highest entropy; earliest wins ties.
    pub fn best_iteration(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for s in &self.samples {
            match best {
                Some((_, e)) if s.entropy <= e => {}
                _ => best = Some((s.iteration, s.entropy)),
            }
        }
        best.map(|(k, _)| k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvSettings {
    pub policy: StopPolicy,
    /// Flooring constant ε for the RL ratio and the normalizer.
    pub epsilon: f64,
    pub metric: MetricConfig,
    /// Convolution engine name from the registry.
    pub engine: String,
}

impl Default for DeconvSettings {
    fn default() -> Self {
        Self {
            policy: StopPolicy::default(),
            epsilon: 1e-12,
            metric: MetricConfig::default(),
            engine: DEFAULT_ENGINE.to_string(),
        }
    }
}

impl DeconvSettings {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be a positive finite value, got {}", self.epsilon),
            ));
        }
        Ok(())
    }
}

/// Scores one iterate. The volume-level entry point has a default route
/// through the maximum z-projection so that a sequential run (which holds
/// the whole volume) and a partitioned run (whose coordinator only sees the
/// merged projection) execute the identical scoring arithmetic.
pub trait IterationEvaluator: Send + Sync {
    fn evaluate_projection(&self, iteration: usize, projection: &Image2D) -> Result<f64>;

    fn evaluate(&self, iteration: usize, volume: &Volume) -> Result<f64> {
        self.evaluate_projection(iteration, &max_project_z(volume))
    }
}

/// The production evaluator: band-limited DCT entropy over the cutoff region.
pub struct DctEvaluator {
    region: CutoffRegion,
    config: MetricConfig,
}

impl DctEvaluator {
    pub fn new(
        params: &OpticsParams,
        height: usize,
        width: usize,
        config: MetricConfig,
    ) -> Result<Self> {
        Ok(Self {
            region: cutoff_region(params, height, width)?,
            config,
        })
    }

    pub fn region(&self) -> &CutoffRegion {
        &self.region
    }
}

impl IterationEvaluator for DctEvaluator {
    fn evaluate_projection(&self, _iteration: usize, projection: &Image2D) -> Result<f64> {
        dct_entropy(projection, &self.region, &self.config)
    }
}

/// Scores one iterate directly: the DCT entropy of its maximum z-projection.
pub fn evaluate_iteration(
    x: &Volume,
    region: &CutoffRegion,
    config: &MetricConfig,
) -> Result<f64> {
    dct_entropy(&max_project_z(x), region, config)
}

/// Receives per-iteration samples as they are produced.
pub trait ProgressSink {
    fn on_iteration(&mut self, sample: &MetricSample);
}

/// Discards progress events.
pub struct SilentProgress;

impl ProgressSink for SilentProgress {
    fn on_iteration(&mut self, _sample: &MetricSample) {}
}

/// `max(normalizer, ε)` — the update denominator.
pub(crate) fn clamped_denominator(normalizer: &[f64], epsilon: f64) -> Vec<f64> {
    normalizer.iter().map(|&v| v.max(epsilon)).collect()
}

/// `out = y ⊘ (forward + ε)`, elementwise.
pub(crate) fn measurement_ratio(y: &[f64], forward: &[f64], epsilon: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(y.iter().zip(forward).map(|(&yv, &fv)| yv / (fv + epsilon)));
}

/// `x ← x · numerator / denominator`, clamping sub-round-off negatives from
/// FFT-based numerators to an exact 0 so zeros stay zeros bit-for-bit.
pub(crate) fn apply_rl_update(x: &mut [f64], numerator: &[f64], denominator: &[f64]) {
    for ((xv, &n), &d) in x.iter_mut().zip(numerator).zip(denominator) {
        let t = *xv * n / d;
        *xv = if t <= 0.0 { 0.0 } else { t };
    }
}

/// One multiplicative Richardson–Lucy update
/// `x ← x · Hᵀ(y ⊘ (Hx + ε)) / max(normalizer, ε)`.
pub fn rl_step(
    x: &Volume,
    y: &LightFieldImage,
    normalizer: &Volume,
    psf: &PsfStack,
    engine: &dyn ConvEngine,
    epsilon: f64,
) -> Result<Volume> {
    let fwd = forward_project(x, psf, engine)?;
    let mut ratio = Vec::new();
    measurement_ratio(y.data(), fwd.data(), epsilon, &mut ratio);
    let ratio_img = LightFieldImage::new(y.height(), y.width(), y.nnum(), ratio)?;
    let numerator = backward_project(&ratio_img, psf, engine)?;
    let denominator = clamped_denominator(normalizer.data(), epsilon);
    let mut out = x.clone();
    apply_rl_update(out.data_mut(), numerator.data(), &denominator);
    Ok(out)
}

/// Poisson log-likelihood of the measurement under `Hx`, up to the
/// x-independent `ln y!` term and with the update's ε flooring:
/// `Σ y·ln(Hx+ε) − (Hx+ε)`. RL never decreases this.
pub fn poisson_log_likelihood(
    y: &LightFieldImage,
    x: &Volume,
    psf: &PsfStack,
    engine: &dyn ConvEngine,
    epsilon: f64,
) -> Result<f64> {
    let fwd = forward_project(x, psf, engine)?;
    let mut acc = 0.0;
    for (&yv, &fv) in y.data().iter().zip(fwd.data()) {
        let lam = fv + epsilon;
        acc += yv * lam.ln() - lam;
    }
    Ok(acc)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Uniform starting level `mean(y) / mean(H·1)`; rejects all-zero input.
pub(crate) fn initial_level(
    y: &LightFieldImage,
    psf: &PsfStack,
    engine: &dyn ConvEngine,
) -> Result<f64> {
    let mean_y = mean(y.data());
    if mean_y <= 0.0 {
        return Err(Error::invalid(
            "measurement",
            "all pixels are zero; nothing to reconstruct",
        ));
    }
    let ones = Volume::filled(psf.nz(), y.height(), y.width(), 1.0);
    let h_ones = forward_project(&ones, psf, engine)?;
    let mean_h1 = mean(h_ones.data());
    if mean_h1 <= 0.0 {
        return Err(Error::invalid(
            "psf",
            "forward projection of a uniform volume is zero",
        ));
    }
    Ok(mean_y / mean_h1)
}

/// Full reconstruction result.
#[derive(Debug, Clone)]
pub struct DeconvResult {
    /// The iterate recorded at `best_iteration` (in both stop modes).
    pub volume: Volume,
    /// Iteration with the highest entropy (earliest on ties).
    pub best_iteration: usize,
    /// Last iteration executed before stopping.
    pub iterations_run: usize,
    pub series: MetricSeries,
}

/// Runs RL with an injected evaluator; the production path wraps this with
/// [`DctEvaluator`] via [`deconvolve`].
pub fn deconvolve_with(
    y: &LightFieldImage,
    psf: &PsfStack,
    settings: &DeconvSettings,
    init: Option<&Volume>,
    evaluator: &dyn IterationEvaluator,
    progress: &mut dyn ProgressSink,
) -> Result<DeconvResult> {
    settings.validate()?;
    let engine = engine_by_name(&settings.engine)?;
    let engine = engine.as_ref();
    let eps = settings.epsilon;

    let normalizer = compute_normalizer(psf, y.height(), y.width(), engine)?;
    let mut x = match init {
        Some(v) => {
            check_init(v, y, psf)?;
            v.clone()
        }
        None => {
            let u0 = initial_level(y, psf, engine)?;
            Volume::filled(psf.nz(), y.height(), y.width(), u0)
        }
    };

    let mut series = MetricSeries::default();
    let mut best: Option<(usize, f64)> = None;
    let mut best_volume: Option<Volume> = None;
    let mut decreases = 0usize;
    let mut prev_entropy = f64::NEG_INFINITY;
    let limit = settings.policy.iteration_limit();
    let mut iterations_run = 0;

    for k in 1..=limit {
        let t0 = Instant::now();
        x = rl_step(&x, y, &normalizer, psf, engine, eps)?;
        let entropy = evaluator.evaluate(k, &x)?;
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
            best_volume = Some(x.clone());
        }

        if entropy < prev_entropy {
            decreases += 1;
        } else {
            decreases = 0;
        }
        prev_entropy = entropy;

        if matches!(settings.policy.mode, StopMode::Auto)
            && k >= settings.policy.min_iters
            && decreases >= settings.policy.patience
        {
            break;
        }
    }

    let (best_iteration, _) = best.expect("at least one iteration always runs");
    let volume = best_volume.expect("snapshot kept alongside best score");
    Ok(DeconvResult {
        volume,
        best_iteration,
        iterations_run,
        series,
    })
}

/// Validates a caller-supplied starting volume against the problem geometry.
fn check_init(init: &Volume, y: &LightFieldImage, psf: &PsfStack) -> Result<()> {
    init.ensure_nonnegative("initial volume")?;
    if init.nz() != psf.nz() || init.height() != y.height() || init.width() != y.width() {
        return Err(Error::DimensionMismatch {
            context: "initial volume",
            expected: format!("{}x{}x{}", psf.nz(), y.height(), y.width()),
            found: format!("{}x{}x{}", init.nz(), init.height(), init.width()),
        });
    }
    Ok(())
}

/// Reconstructs `y` with the DCT-entropy evaluator derived from `optics`.
pub fn deconvolve(
    y: &LightFieldImage,
    psf: &PsfStack,
    optics: &OpticsParams,
    settings: &DeconvSettings,
    init: Option<&Volume>,
    progress: &mut dyn ProgressSink,
) -> Result<DeconvResult> {
    let evaluator = DctEvaluator::new(optics, y.height(), y.width(), settings.metric)?;
    deconvolve_with(y, psf, settings, init, &evaluator, progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfmodel::conv::DirectConv;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Evaluator that replays a fixed entropy script, ignoring the volume.
    struct Scripted(Vec<f64>);

    impl IterationEvaluator for Scripted {
        fn evaluate_projection(&self, iteration: usize, _: &Image2D) -> Result<f64> {
            Ok(self.0[(iteration - 1).min(self.0.len() - 1)])
        }
    }

    fn tiny_problem(seed: u64) -> (LightFieldImage, PsfStack) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nz, nnum, h, w) = (2, 3, 9, 9);
        let kernels = (0..nz * nnum * nnum * 9)
            .map(|_| rng.gen_range(0.05..1.0))
            .collect();
        let psf = PsfStack::new(nz, nnum, 3, 3, kernels).unwrap();
        let y_data = (0..h * w).map(|_| rng.gen_range(0.1..5.0)).collect();
        let y = LightFieldImage::new(h, w, nnum, y_data).unwrap();
        (y, psf)
    }

    fn auto_settings(max: usize, min: usize, patience: usize) -> DeconvSettings {
        DeconvSettings {
            policy: StopPolicy {
                mode: StopMode::Auto,
                max_iters: max,
                min_iters: min,
                patience,
            },
            ..DeconvSettings::default()
        }
    }

    #[test]
    fn stop_policy_validation() {
        assert!(StopPolicy::default().validate().is_ok());
        for bad in [
            StopPolicy { max_iters: 0, ..StopPolicy::default() },
            StopPolicy { min_iters: 0, ..StopPolicy::default() },
            StopPolicy { patience: 0, ..StopPolicy::default() },
            StopPolicy { min_iters: 51, ..StopPolicy::default() },
            StopPolicy { mode: StopMode::Fixed(0), ..StopPolicy::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn settings_validation() {
        assert!(DeconvSettings::default().validate().is_ok());
        let bad = DeconvSettings { epsilon: 0.0, ..DeconvSettings::default() };
        assert!(bad.validate().is_err());
        let bad = DeconvSettings { epsilon: f64::NAN, ..DeconvSettings::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_engine_rejected() {
        let (y, psf) = tiny_problem(50);
        let settings = DeconvSettings { engine: "warp-drive".into(), ..DeconvSettings::default() };
        assert!(deconvolve_with(&y, &psf, &settings, None, &Scripted(vec![1.0]), &mut SilentProgress)
            .is_err());
    }

    #[test]
    fn auto_stops_on_first_decrease() {
        let (y, psf) = tiny_problem(51);
        let script = Scripted(vec![1.0, 2.0, 3.0, 2.5, 2.4, 9.0]);
        let r = deconvolve_with(&y, &psf, &auto_settings(20, 2, 1), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(r.iterations_run, 4);
        assert_eq!(r.best_iteration, 3);
        assert_eq!(r.series.samples.len(), 4);
        assert_eq!(r.series.best_iteration(), Some(3));
    }

    #[test]
    fn patience_requires_consecutive_decreases() {
        let (y, psf) = tiny_problem(52);
        // Dips at k=3, recovers at k=4, then falls at 5 and 6.
        let script = Scripted(vec![1.0, 5.0, 4.0, 6.0, 5.5, 5.0, 4.5]);
        let r = deconvolve_with(&y, &psf, &auto_settings(20, 2, 2), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(r.iterations_run, 6);
        assert_eq!(r.best_iteration, 4);
    }

    #[test]
    fn min_iters_defers_stopping() {
        let (y, psf) = tiny_problem(53);
        let script = Scripted(vec![9.0, 8.0, 7.0, 6.0, 5.0]);
        let r = deconvolve_with(&y, &psf, &auto_settings(20, 4, 1), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(r.iterations_run, 4);
        assert_eq!(r.best_iteration, 1);
    }

    #[test]
    fn max_iters_caps_monotone_series() {
        let (y, psf) = tiny_problem(54);
        let script = Scripted((1..=100).map(|k| k as f64).collect());
        let r = deconvolve_with(&y, &psf, &auto_settings(6, 2, 1), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(r.iterations_run, 6);
        assert_eq!(r.best_iteration, 6);
    }

    #[test]
    fn ties_resolve_to_earliest_iteration() {
        let (y, psf) = tiny_problem(55);
        let script = Scripted(vec![2.0, 7.0, 7.0, 7.0, 1.0]);
        let r = deconvolve_with(&y, &psf, &auto_settings(20, 2, 1), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(r.best_iteration, 2);
    }

    #[test]
    fn fixed_mode_runs_exact_count() {
        let (y, psf) = tiny_problem(56);
        let settings = DeconvSettings {
            policy: StopPolicy { mode: StopMode::Fixed(7), ..StopPolicy::default() },
            ..DeconvSettings::default()
        };
        // Decreasing script would stop Auto immediately; Fixed must ignore it.
        let script = Scripted(vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0]);
        let r = deconvolve_with(&y, &psf, &settings, None, &script, &mut SilentProgress).unwrap();
        assert_eq!(r.iterations_run, 7);
        assert_eq!(r.series.samples.len(), 7);
        assert_eq!(r.best_iteration, 1);
    }

    #[test]
    fn auto_snapshot_equals_fixed_rerun() {
        // The snapshot returned by Auto must be bit-identical to simply
        // rerunning the same number of iterations in Fixed mode.
        let (y, psf) = tiny_problem(57);
        let script = Scripted(vec![1.0, 3.0, 2.0, 5.0]);
        let auto = deconvolve_with(&y, &psf, &auto_settings(20, 2, 1), None, &script, &mut SilentProgress)
            .unwrap();
        assert_eq!(auto.iterations_run, 3);
        assert_eq!(auto.best_iteration, 2);

        let fixed = DeconvSettings {
            policy: StopPolicy { mode: StopMode::Fixed(2), ..StopPolicy::default() },
            ..DeconvSettings::default()
        };
        // A strictly rising script makes the rerun's best iterate its final
        // one, so its returned volume is exactly iterate 2.
        let rerun = deconvolve_with(&y, &psf, &fixed, None, &Scripted(vec![1.0, 2.0]), &mut SilentProgress)
            .unwrap();
        assert_eq!(rerun.best_iteration, 2);
        assert_eq!(auto.volume.data(), rerun.volume.data());
    }

    #[test]
    fn custom_init_is_honored_and_zeros_stay_zero() {
        let (y, psf) = tiny_problem(59);
        let mut data = vec![1.0; 2 * 9 * 9];
        data[5] = 0.0;
        data[100] = 0.0;
        let init = Volume::new(2, 9, 9, data).unwrap();
        let fixed = DeconvSettings {
            policy: StopPolicy { mode: StopMode::Fixed(3), ..StopPolicy::default() },
            ..DeconvSettings::default()
        };
        let r = deconvolve_with(&y, &psf, &fixed, Some(&init), &Scripted(vec![1.0, 2.0, 3.0]), &mut SilentProgress)
            .unwrap();
        assert_eq!(r.volume.data()[5], 0.0);
        assert_eq!(r.volume.data()[100], 0.0);

        // Same run from the default uniform start differs, proving the
        // supplied start actually participates.
        let uniform = deconvolve_with(&y, &psf, &fixed, None, &Scripted(vec![1.0, 2.0, 3.0]), &mut SilentProgress)
            .unwrap();
        assert_ne!(r.volume.data(), uniform.volume.data());

        // Geometry mismatches are rejected up front.
        let bad = Volume::filled(3, 9, 9, 1.0);
        assert!(deconvolve_with(&y, &psf, &fixed, Some(&bad), &Scripted(vec![1.0]), &mut SilentProgress)
            .is_err());
    }

    #[test]
    fn evaluate_iteration_matches_composition() {
        let (y, psf) = tiny_problem(60);
        let optics = OpticsParams {
            wavelength_um: 0.52,
            na: 0.5,
            mla_pitch_um: 150.0,
            magnification: 40.0,
            nnum: 3,
        };
        let region = cutoff_region(&optics, y.height(), y.width()).unwrap();
        let config = MetricConfig::default();
        let x = Volume::new(
            2,
            9,
            9,
            (0..2 * 81).map(|i| (i % 7) as f64 + 0.25).collect(),
        )
        .unwrap();
        let direct = evaluate_iteration(&x, &region, &config).unwrap();
        let composed = dct_entropy(&max_project_z(&x), &region, &config).unwrap();
        assert_eq!(direct, composed);

        // A constant volume concentrates all DCT mass at (0,0), whose
        // normalized weight is 1 and contributes -1*log2(1) = 0.
        let flat = Volume::filled(1, 9, 9, 4.0);
        assert_eq!(evaluate_iteration(&flat, &region, &config).unwrap(), 0.0);
    }

    #[test]
    fn rl_fixed_point() {
        // If y = Hx exactly, x is (to ε accuracy) a fixed point.
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let (nz, nnum, h, w) = (2, 3, 9, 9);
        let kernels = (0..nz * nnum * nnum * 9)
            .map(|_| rng.gen_range(0.1..1.0))
            .collect();
        let psf = PsfStack::new(nz, nnum, 3, 3, kernels).unwrap();
        let x_data: Vec<f64> = (0..nz * h * w).map(|_| rng.gen_range(0.5..2.0)).collect();
        let x = Volume::new(nz, h, w, x_data).unwrap();
        let y = forward_project(&x, &psf, &DirectConv).unwrap();
        let norm = compute_normalizer(&psf, h, w, &DirectConv).unwrap();

        let next = rl_step(&x, &y, &norm, &psf, &DirectConv, 1e-12).unwrap();
        for (a, b) in x.data().iter().zip(next.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn likelihood_never_decreases() {
        let (y, psf) = tiny_problem(59);
        let engine = DirectConv;
        let norm = compute_normalizer(&psf, y.height(), y.width(), &engine).unwrap();
        let u0 = initial_level(&y, &psf, &engine).unwrap();
        let mut x = Volume::filled(psf.nz(), y.height(), y.width(), u0);

        let mut prev = poisson_log_likelihood(&y, &x, &psf, &engine, 1e-12).unwrap();
        for k in 0..12 {
            x = rl_step(&x, &y, &norm, &psf, &engine, 1e-12).unwrap();
            let cur = poisson_log_likelihood(&y, &x, &psf, &engine, 1e-12).unwrap();
            assert!(
                cur >= prev - 1e-10 * prev.abs().max(1.0),
                "iteration {k}: likelihood fell {prev} -> {cur}"
            );
            prev = cur;
        }
    }

    #[test]
    fn zeros_are_preserved() {
        let (y, psf) = tiny_problem(60);
        let engine = DirectConv;
        let norm = compute_normalizer(&psf, y.height(), y.width(), &engine).unwrap();
        let mut x = Volume::filled(psf.nz(), y.height(), y.width(), 1.0);
        let zero_voxels = [(0usize, 0usize, 0usize), (1, 4, 7), (0, 8, 8), (1, 3, 3)];
        for &(z, p, q) in &zero_voxels {
            x.set(z, p, q, 0.0);
        }
        for _ in 0..3 {
            x = rl_step(&x, &y, &norm, &psf, &engine, 1e-12).unwrap();
            for &(z, p, q) in &zero_voxels {
                assert_eq!(x.get(z, p, q), 0.0);
            }
        }
    }

    #[test]
    fn rejects_all_zero_measurement() {
        let (_, psf) = tiny_problem(61);
        let y = LightFieldImage::zeros(9, 9, 3);
        let r = deconvolve_with(
            &y,
            &psf,
            &DeconvSettings::default(),
            None,
            &Scripted(vec![1.0]),
            &mut SilentProgress,
        );
        assert!(r.is_err());
    }

    #[test]
    fn production_evaluator_end_to_end() {
        let (y, psf) = tiny_problem(62);
        let optics = OpticsParams {
            wavelength_um: 0.52,
            na: 0.5,
            mla_pitch_um: 150.0,
            magnification: 40.0,
            nnum: 3,
        };
        let settings = auto_settings(8, 2, 1);
        let mut seen = Vec::new();
        struct Collect<'a>(&'a mut Vec<usize>);
        impl ProgressSink for Collect<'_> {
            fn on_iteration(&mut self, s: &MetricSample) {
                self.0.push(s.iteration);
            }
        }
        let r = deconvolve(&y, &psf, &optics, &settings, None, &mut Collect(&mut seen)).unwrap();
        assert!(r.iterations_run >= 2 && r.iterations_run <= 8);
        assert_eq!(seen.len(), r.iterations_run);
        assert!(r.volume.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(r.best_iteration >= 1 && r.best_iteration <= r.iterations_run);
        assert!(r.series.samples.iter().all(|s| s.wall_ms >= 0.0));
    }
}
