//! Experiment drivers: the single-neuron dynamics-matching study, synthetic
//! temporal classification data, and the end-to-end train/adapt/evaluate
//! pipeline.
//!
//! Every experiment derives one task seed per unit of work (pair, seed
//! index) from the master seed, so reports are bit-reproducible regardless
//! of worker count.

use serde::Serialize;

use crate::adapt::{adapt_neuron, AdaptError, AdaptMethod, NeuronForm, ResolutionRatio};
use crate::metrics::{q_metrics, subsample, MetricsError};
use crate::network::{
    adapt_model, evaluate, init_model, train, ModelConfig, ModelMeta, NetworkError, TrainConfig,
    TrainResult,
};
use crate::neuron::{AdLifParams, GeneralNeuron};
use crate::normstats::StatAdaptRule;
use crate::resample::{
    resample_dataset, sum_bin_real, ResampleError, ResampleKind, Sample, SpikeTensor,
};
use crate::rng::{derive_seed, Xoshiro256pp};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Bin factor between the two resolutions of the single-neuron study.
pub const NEURON_STUDY_BIN: usize = 2;

// ---------------------------------------------------------------------------
// Inputs

/// Sum-of-sinusoids excitation: `K` components with amplitudes, angular
/// frequencies and one shared phase divisor drawn uniformly from the stated
/// ranges; evaluated on the integer grid `t = 0..=t_max`, giving
/// `t_max + 1` samples of `sum_k A_k sin(w_k t + pi/phi)`.
#[derive(Clone, Debug)]
pub struct SinExcitation {
    pub sinusoids: usize,
    pub amp_range: (f64, f64),
    pub freq_range: (f64, f64),
    pub phase_div_range: (f64, f64),
    pub t_max: usize,
    pub seed: u64,
}

impl Default for SinExcitation {
    fn default() -> Self {
        Self {
            sinusoids: 3,
            amp_range: (0.1, 0.2),
            freq_range: (1.0, 10.0),
            phase_div_range: (1.0, 20.0),
            t_max: 100,
            seed: 0,
        }
    }
}

/// Draws the excitation parameters from `rng` (amplitudes, then frequencies,
/// then the phase divisor) and evaluates the signal.
fn sin_input_from(rng: &mut Xoshiro256pp, cfg: &SinExcitation) -> Vec<f64> {
    let amps: Vec<f64> = (0..cfg.sinusoids)
        .map(|_| rng.uniform(cfg.amp_range.0, cfg.amp_range.1))
        .collect();
    let freqs: Vec<f64> = (0..cfg.sinusoids)
        .map(|_| rng.uniform(cfg.freq_range.0, cfg.freq_range.1))
        .collect();
    let phase_div = rng.uniform(cfg.phase_div_range.0, cfg.phase_div_range.1);
    let phase = std::f64::consts::PI / phase_div;
    (0..=cfg.t_max)
        .map(|t| {
            let t = t as f64;
            amps.iter()
                .zip(&freqs)
                .map(|(&a, &w)| a * (w * t + phase).sin())
                .sum()
        })
        .collect()
}

/// Deterministic excitation for a given configuration (and its seed).
pub fn gen_sin_input(cfg: &SinExcitation) -> Vec<f64> {
    let mut rng = Xoshiro256pp::from_seed(cfg.seed);
    sin_input_from(&mut rng, cfg)
}

/// Uniform adLIF draw from the single-neuron study ranges:
/// `alpha, beta in [0.6, 0.98]`, `a, b in [0.2, 0.5]`, threshold 1.
pub fn random_adlif_from(rng: &mut Xoshiro256pp) -> AdLifParams<f64> {
    AdLifParams::new(
        rng.uniform(0.6, 0.98),
        rng.uniform(0.6, 0.98),
        rng.uniform(0.2, 0.5),
        rng.uniform(0.2, 0.5),
    )
    .expect("ranges are valid")
}

pub fn random_adlif(seed: u64) -> AdLifParams<f64> {
    random_adlif_from(&mut Xoshiro256pp::from_seed(seed))
}

// ---------------------------------------------------------------------------
// Single-neuron study

/// Deployment direction relative to the training resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Trained fine (bin 1), deployed coarse (bin 2): ratio 2.
    FineToCoarse,
    /// Trained coarse (bin 2), deployed fine (bin 1): ratio 1/2.
    CoarseToFine,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::FineToCoarse => "fine2coarse",
            Direction::CoarseToFine => "coarse2fine",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fine2coarse" | "fine-to-coarse" => Ok(Direction::FineToCoarse),
            "coarse2fine" | "coarse-to-fine" => Ok(Direction::CoarseToFine),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

/// Aggregated quality scores for one adaptation method.
#[derive(Clone, Debug, Serialize)]
pub struct MethodStats {
    pub method: String,
    pub mean_q1: f64,
    pub std_q1: f64,
    pub mean_q2: f64,
    pub std_q2: f64,
    /// Pairs skipped for this method (failed adaptation or degenerate
    /// traces).
    pub skipped: usize,
    pub pairs_used: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub direction: Direction,
    pub n_pairs: usize,
    pub seed: u64,
    pub bin_factor: usize,
    pub methods: Vec<MethodStats>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Aligned text table, one row per method.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "direction: {}   pairs: {}   seed: {}   bin factor: {}\n",
            self.direction.name(),
            self.n_pairs,
            self.seed,
            self.bin_factor
        ));
        out.push_str(&format!(
            "{:<12} {:>7} {:>7} {:>9} {:>7} {:>9}\n",
            "method", "Q1", "+-", "Q2", "+-", "skipped"
        ));
        for m in &self.methods {
            out.push_str(&format!(
                "{:<12} {:>7.3} {:>7.3} {:>9.3} {:>7.3} {:>9}\n",
                m.method, m.mean_q1, m.std_q1, m.mean_q2, m.std_q2, m.skipped
            ));
        }
        out
    }

    pub fn stats_for(&self, method: AdaptMethod) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.method == method.name())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Drops the trailing samples so the trace length is a multiple of `factor`.
fn truncate_to_multiple(xs: &[f64], factor: usize) -> &[f64] {
    &xs[..xs.len() - xs.len() % factor]
}

/// One pair of the study: simulate the reference and the adapted candidate,
/// and score their membrane traces.
///
/// The coarse excitation is the per-bin mean of the fine one. The window
/// mean (not the raw window sum) is what keeps the coarse drive on the scale
/// the adaptation methods assume: the expectation-matching derivation takes
/// the coarse input sample to have the same expected value as the fine
/// samples inside its bin, and the zero-order-hold view takes it to be the
/// held value itself.
///
/// Scoring follows the quality-function convention of always subsampling the
/// finer trace and normalizing by it: the subsampled fine trace is the first
/// argument of [`q_metrics`] in both directions.
fn run_pair(
    p: &AdLifParams<f64>,
    fine_input: &[f64],
    direction: Direction,
    method: AdaptMethod,
) -> std::result::Result<(f64, f64), PairSkip> {
    let (fine_sub, coarse) = pair_traces(p, fine_input, direction, method)?;
    let scores = q_metrics(&fine_sub, &coarse).map_err(PairSkip::Metrics)?;
    Ok((scores.q1, scores.q2))
}

/// Simulates one study pair and returns `(subsampled fine trace, coarse
/// trace)`, both of coarse length.
fn pair_traces(
    p: &AdLifParams<f64>,
    fine_input: &[f64],
    direction: Direction,
    method: AdaptMethod,
) -> std::result::Result<(Vec<f64>, Vec<f64>), PairSkip> {
    let bin = NEURON_STUDY_BIN;
    let mut coarse_input = sum_bin_real(fine_input, bin);
    for x in &mut coarse_input {
        *x /= bin as f64;
    }
    let base = NeuronForm::AdLif(*p);
    let ratio = match direction {
        Direction::FineToCoarse => ResolutionRatio::new(bin as u64, 1),
        Direction::CoarseToFine => ResolutionRatio::new(1, bin as u64),
    }
    .expect("static ratio");
    let adapted = adapt_neuron(&base, method, &ratio)
        .map_err(PairSkip::Adapt)?
        .to_general();

    let simulate = |form: &GeneralNeuron<f64>, input: &[f64]| {
        form.simulate(input, None)
            .expect("finite excitation")
            .membrane_trace()
    };

    Ok(match direction {
        Direction::FineToCoarse => {
            let fine = simulate(&base.to_general(), fine_input);
            let fine_sub =
                subsample(truncate_to_multiple(&fine, bin), bin).expect("length is a multiple");
            let coarse = simulate(&adapted, &coarse_input);
            (fine_sub, coarse)
        }
        Direction::CoarseToFine => {
            let coarse = simulate(&base.to_general(), &coarse_input);
            let fine = simulate(&adapted, fine_input);
            let fine_sub =
                subsample(truncate_to_multiple(&fine, bin), bin).expect("length is a multiple");
            (fine_sub, coarse)
        }
    })
}

/// Reference and candidate membrane traces for one study pair, for
/// plotting. The reference is the trace of the unadapted neuron at its
/// native resolution (the fine one in the fine-to-coarse direction, the
/// coarse one otherwise).
#[derive(Clone, Debug)]
pub struct PairTraces {
    pub pair_index: usize,
    pub method: String,
    pub reference: Vec<f64>,
    pub candidate: Vec<f64>,
}

impl PairTraces {
    /// CSV dump: `step,reference,candidate`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,reference,candidate\n");
        for (i, (r, c)) in self.reference.iter().zip(&self.candidate).enumerate() {
            out.push_str(&format!("{i},{r},{c}\n"));
        }
        out
    }
}

/// Re-derives the traces of pair `pair_index` from the same per-pair seed
/// stream the study uses.
pub fn study_pair_traces(
    pair_index: usize,
    direction: Direction,
    method: AdaptMethod,
    seed: u64,
) -> Result<PairTraces> {
    let mut rng = Xoshiro256pp::from_seed(derive_seed(seed, pair_index as u64));
    let p = random_adlif_from(&mut rng);
    let fine_input = sin_input_from(&mut rng, &SinExcitation::default());
    let (fine_sub, coarse) = pair_traces(&p, &fine_input, direction, method).map_err(|_| {
        HarnessError::InvalidConfig(format!(
            "pair {pair_index} cannot be adapted with {}",
            method.name()
        ))
    })?;
    let (reference, candidate) = match direction {
        Direction::FineToCoarse => (fine_sub, coarse),
        Direction::CoarseToFine => (coarse, fine_sub),
    };
    Ok(PairTraces {
        pair_index,
        method: method.name().to_string(),
        reference,
        candidate,
    })
}

/// Why a (pair, method) combination was skipped; retained for debuggability
/// even though the study only counts them.
#[allow(dead_code)]
enum PairSkip {
    Adapt(AdaptError),
    Metrics(MetricsError),
}

/// Runs `n_pairs` random (input, neuron) pairs through every method and
/// aggregates mean and standard deviation of the quality scores. Pairs where
/// a method fails (singular adaptation, degenerate trace) are skipped for
/// that method and counted.
pub fn single_neuron_experiment(
    n_pairs: usize,
    direction: Direction,
    methods: &[AdaptMethod],
    seed: u64,
    jobs: usize,
) -> Result<ExperimentReport> {
    if n_pairs == 0 {
        return Err(HarnessError::InvalidConfig("need at least one pair".into()));
    }
    if methods.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "need at least one method".into(),
        ));
    }
    let input_cfg = SinExcitation::default();
    let per_pair: Vec<Vec<Option<(f64, f64)>>> = run_indexed(n_pairs, jobs, |i| {
        // Draw order per pair: neuron parameters, then the excitation.
        let mut rng = Xoshiro256pp::from_seed(derive_seed(seed, i as u64));
        let p = random_adlif_from(&mut rng);
        let fine_input = sin_input_from(&mut rng, &input_cfg);
        methods
            .iter()
            .map(|&m| run_pair(&p, &fine_input, direction, m).ok())
            .collect()
    });

    let methods_out = methods
        .iter()
        .enumerate()
        .map(|(mi, &method)| {
            let mut q1s = Vec::with_capacity(n_pairs);
            let mut q2s = Vec::with_capacity(n_pairs);
            let mut skipped = 0usize;
            for pair in &per_pair {
                match pair[mi] {
                    Some((q1, q2)) => {
                        q1s.push(q1);
                        q2s.push(q2);
                    }
                    None => skipped += 1,
                }
            }
            let (mean_q1, std_q1) = mean_std(&q1s);
            let (mean_q2, std_q2) = mean_std(&q2s);
            MethodStats {
                method: method.name().to_string(),
                mean_q1,
                std_q1,
                mean_q2,
                std_q2,
                skipped,
                pairs_used: q1s.len(),
            }
        })
        .collect();

    Ok(ExperimentReport {
        direction,
        n_pairs,
        seed,
        bin_factor: NEURON_STUDY_BIN,
        methods: methods_out,
    })
}

// ---------------------------------------------------------------------------
// Synthetic temporal dataset

/// Generates a balanced dataset whose class identity is carried by the
/// temporal ORDER in which channel groups burst. Channels are split into
/// `classes` groups; time is split into `classes` slots; in class `y`, slot
/// `k` activates group `(k + y) mod classes` with a Poisson burst. Summed
/// over time every class looks identical in expectation, so classification
/// requires temporal information.
pub fn gen_synthetic_dataset(
    classes: usize,
    samples_per_class: usize,
    channels: usize,
    timesteps: usize,
    seed: u64,
) -> Vec<Sample> {
    assert!(classes >= 1 && samples_per_class >= 1 && channels >= 1 && timesteps >= 1);
    let burst_rate = 1.0;
    let background_rate = 0.02;
    let slot_len = (timesteps / classes).max(1);
    let mut rng = Xoshiro256pp::from_seed(seed);
    let mut data = Vec::with_capacity(classes * samples_per_class);
    for class in 0..classes {
        for _ in 0..samples_per_class {
            let mut counts = vec![0u32; channels * timesteps];
            for c in 0..channels {
                let group = c * classes / channels;
                for t in 0..timesteps {
                    let slot = (t / slot_len).min(classes - 1);
                    let active = (slot + class) % classes == group;
                    let rate = if active { burst_rate } else { background_rate };
                    counts[c * timesteps + t] = rng.poisson(rate);
                }
            }
            data.push(Sample {
                tensor: SpikeTensor::new(channels, timesteps, counts, 1.0)
                    .expect("shape by construction"),
                label: class,
            });
        }
    }
    data
}

// ---------------------------------------------------------------------------
// End-to-end experiment

#[derive(Clone, Debug)]
pub struct E2eConfig {
    pub direction: Direction,
    pub method: AdaptMethod,
    pub bin_source: u32,
    pub bin_target: u32,
    pub seeds: usize,
    pub master_seed: u64,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub timesteps: usize,
    pub hidden: Vec<usize>,
    pub recurrent: bool,
    pub train: TrainConfig,
    pub jobs: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            direction: Direction::CoarseToFine,
            method: AdaptMethod::Integral,
            bin_source: 2,
            bin_target: 1,
            seeds: 10,
            master_seed: 0,
            classes: 4,
            train_per_class: 200,
            test_per_class: 50,
            channels: 16,
            timesteps: 64,
            hidden: vec![64, 64],
            recurrent: false,
            train: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct E2eSeedResult {
    pub seed_index: usize,
    /// Accuracy of the adapted model on target-resolution test data.
    pub adapted_acc: f64,
    /// Accuracy of the unadapted source model on target-resolution data.
    pub none_acc: f64,
    /// Accuracy of a model retrained from scratch at the target resolution.
    pub baseline_acc: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct E2eReport {
    pub direction: Direction,
    pub method: String,
    pub bin_source: u32,
    pub bin_target: u32,
    pub master_seed: u64,
    pub per_seed: Vec<E2eSeedResult>,
    pub mean_adapted: f64,
    pub mean_none: f64,
    pub mean_baseline: f64,
}

impl E2eReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "direction: {}   method: {}   b_S={} -> b_T={}   seeds: {}\n",
            self.direction.name(),
            self.method,
            self.bin_source,
            self.bin_target,
            self.per_seed.len()
        ));
        out.push_str(&format!(
            "{:<6} {:>10} {:>10} {:>10}\n",
            "seed", "adapted", "none", "baseline"
        ));
        for r in &self.per_seed {
            out.push_str(&format!(
                "{:<6} {:>10.4} {:>10.4} {:>10.4}\n",
                r.seed_index, r.adapted_acc, r.none_acc, r.baseline_acc
            ));
        }
        out.push_str(&format!(
            "{:<6} {:>10.4} {:>10.4} {:>10.4}\n",
            "mean", self.mean_adapted, self.mean_none, self.mean_baseline
        ));
        out
    }
}

fn bin_dataset(data: &[Sample], bin: u32) -> Result<Vec<Sample>> {
    if bin <= 1 {
        return Ok(data.to_vec());
    }
    Ok(resample_dataset(data, ResampleKind::SumBin, bin as usize)?)
}

/// Trains at the source bin, then evaluates the unadapted model, the adapted
/// model and a retrained target-resolution baseline on target-bin test data,
/// for `seeds` independent initializations.
pub fn e2e_experiment(cfg: &E2eConfig) -> Result<E2eReport> {
    if cfg.seeds == 0 {
        return Err(HarnessError::InvalidConfig("need at least one seed".into()));
    }
    match cfg.direction {
        Direction::CoarseToFine if cfg.bin_source < cfg.bin_target => {
            return Err(HarnessError::InvalidConfig(
                "coarse-to-fine needs bin_source > bin_target".into(),
            ));
        }
        Direction::FineToCoarse if cfg.bin_source > cfg.bin_target => {
            return Err(HarnessError::InvalidConfig(
                "fine-to-coarse needs bin_source <= bin_target".into(),
            ));
        }
        _ => {}
    }
    let ratio = ResolutionRatio::from_bins(cfg.bin_source as u64, cfg.bin_target as u64)?;
    let rule = StatAdaptRule::theoretical(ResampleKind::SumBin);

    let runs: Vec<Result<E2eSeedResult>> = run_indexed(cfg.seeds, cfg.jobs, |s| {
        let base = derive_seed(cfg.master_seed, s as u64);
        let train_fine = gen_synthetic_dataset(
            cfg.classes,
            cfg.train_per_class,
            cfg.channels,
            cfg.timesteps,
            derive_seed(base, 1),
        );
        let test_fine = gen_synthetic_dataset(
            cfg.classes,
            cfg.test_per_class,
            cfg.channels,
            cfg.timesteps,
            derive_seed(base, 2),
        );
        let source_train = bin_dataset(&train_fine, cfg.bin_source)?;
        let target_train = bin_dataset(&train_fine, cfg.bin_target)?;
        let target_test = bin_dataset(&test_fine, cfg.bin_target)?;

        let arch = ModelConfig {
            input_channels: cfg.channels,
            hidden: cfg.hidden.clone(),
            classes: cfg.classes,
            recurrent: cfg.recurrent,
        };
        let init_seed = derive_seed(base, 3);
        let train_seed = derive_seed(base, 4);
        let train_cfg = TrainConfig {
            seed: train_seed,
            ..cfg.train.clone()
        };

        let source_model = init_model(
            &arch,
            ModelMeta {
                dt_ms: cfg.bin_source as f64,
                bin_size: cfg.bin_source,
                seed: init_seed,
            },
        );
        let TrainResult { model: trained, .. } =
            train(&source_model, &source_train, None, &train_cfg)?;

        let none_acc = evaluate(&trained, &target_test)?;
        let adapted = adapt_model(&trained, cfg.method, &ratio, &rule)?;
        let adapted_acc = evaluate(&adapted, &target_test)?;

        let baseline_model = init_model(
            &arch,
            ModelMeta {
                dt_ms: cfg.bin_target as f64,
                bin_size: cfg.bin_target,
                seed: init_seed,
            },
        );
        let TrainResult {
            model: baseline, ..
        } = train(&baseline_model, &target_train, None, &train_cfg)?;
        let baseline_acc = evaluate(&baseline, &target_test)?;

        Ok(E2eSeedResult {
            seed_index: s,
            adapted_acc,
            none_acc,
            baseline_acc,
        })
    });

    let mut per_seed = Vec::with_capacity(cfg.seeds);
    for run in runs {
        per_seed.push(run?);
    }
    let mean =
        |f: fn(&E2eSeedResult) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len() as f64;
    let mean_adapted = mean(|r| r.adapted_acc);
    let mean_none = mean(|r| r.none_acc);
    let mean_baseline = mean(|r| r.baseline_acc);
    Ok(E2eReport {
        direction: cfg.direction,
        method: cfg.method.name().to_string(),
        bin_source: cfg.bin_source,
        bin_target: cfg.bin_target,
        master_seed: cfg.master_seed,
        per_seed,
        mean_adapted,
        mean_none,
        mean_baseline,
    })
}

// ---------------------------------------------------------------------------
// Deterministic fan-out

/// Runs `f(0..n)` across up to `jobs` workers; results come back in index
/// order so aggregation is scheduling-independent.
fn run_indexed<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let slot_ptr = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for worker in 0..jobs {
            let f = &f;
            let slot_ptr = &slot_ptr;
            scope.spawn(move || {
                let mut local: Vec<(usize, T)> = Vec::new();
                let mut i = worker;
                while i < n {
                    local.push((i, f(i)));
                    i += jobs;
                }
                let mut guard = slot_ptr.lock().expect("no poisoned workers");
                for (i, value) in local {
                    guard[i] = Some(value);
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("all slots filled"))
        .collect()
}
