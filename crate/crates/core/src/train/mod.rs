//! Trainable parameters, the adaptive-moment optimizer, the training loop
//! with its four ablation modes, and binary checkpointing.

mod grad;

pub use grad::{backward, forward, Gradients, PipelineTrace};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::loss::LossReport;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Ablation modes: no training, superpixel losses only, self-representation
/// loss only, the two trained separately in sequence, or the full joint
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    M1,
    M2,
    M3,
    M4,
    Full,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Ablation::M1),
            "m2" => Ok(Ablation::M2),
            "m3" => Ok(Ablation::M3),
            "m4" => Ok(Ablation::M4),
            "full" => Ok(Ablation::Full),
            other => Err(Error::config(format!(
                "unknown ablation mode '{other}' (expected M1|M2|M3|M4|full)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Ablation::M1 => "M1",
            Ablation::M2 => "M2",
            Ablation::M3 => "M3",
            Ablation::M4 => "M4",
            Ablation::Full => "full",
        };
        write!(f, "{s}")
    }
}

/// Which loss terms contribute gradient, and which parameters may move.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights {
    pub rep: f64,
    pub spixel: f64,
    pub noise: f64,
    pub train_delta: bool,
    pub train_compactness: bool,
    pub train_lambda: bool,
}

impl ObjectiveWeights {
    /// Weights for one phase of an ablation mode. M4 is realized as an M2
    /// phase followed by an M3 phase.
    pub fn for_mode(mode: Ablation, alpha: f64) -> ObjectiveWeights {
        match mode {
            Ablation::Full => ObjectiveWeights {
                rep: alpha,
                spixel: 1.0,
                noise: 1.0,
                train_delta: true,
                train_compactness: true,
                train_lambda: true,
            },
            Ablation::M2 => ObjectiveWeights {
                rep: 0.0,
                spixel: 1.0,
                noise: 1.0,
                train_delta: true,
                train_compactness: true,
                train_lambda: false,
            },
            Ablation::M3 => ObjectiveWeights {
                rep: 1.0,
                spixel: 0.0,
                noise: 0.0,
                train_delta: false,
                train_compactness: false,
                train_lambda: true,
            },
            Ablation::M1 | Ablation::M4 => ObjectiveWeights {
                rep: 0.0,
                spixel: 0.0,
                noise: 0.0,
                train_delta: false,
                train_compactness: false,
                train_lambda: false,
            },
        }
    }
}

/// Full training configuration. Serializable as the run's config JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the self-representation loss in the total objective.
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Softmax temperature of the assignment distribution.
    pub tau: f64,
    /// Outer refinement rounds of the superpixel assignment.
    pub superpixel_iters: usize,
    /// Unfolded ADMM depth during training.
    pub admm_layers: usize,
    /// Unfolded ADMM depth for the final clustering pass.
    pub eval_admm_layers: usize,
    pub rho: f64,
    /// Weight λ of the residual noise penalty.
    pub noise_weight: f64,
    /// Superpixel count override; estimated from the data when absent.
    pub superpixels: Option<usize>,
    /// Class count when no ground-truth label map is available.
    pub classes: Option<usize>,
    pub seed: u64,
    pub ablation: Ablation,
    pub checkpoint_every: usize,
    /// Candidate superpixels per pixel (G).
    pub candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            epochs: 200,
            learning_rate: 1e-3,
            tau: 0.1,
            superpixel_iters: 10,
            admm_layers: 15,
            eval_admm_layers: 200,
            rho: 1.0,
            noise_weight: 50.0,
            superpixels: None,
            classes: None,
            seed: 0,
            ablation: Ablation::Full,
            checkpoint_every: 50,
            candidates: 9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 && !matches!(self.ablation, Ablation::M1) {
            return Err(Error::config("epochs must be >= 1 outside mode M1"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("tau", self.tau),
            ("rho", self.rho),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.alpha < 0.0 || self.noise_weight < 0.0 {
            return Err(Error::config("alpha and noise_weight must be nonnegative"));
        }
        if self.superpixel_iters == 0 || self.admm_layers == 0 || self.eval_admm_layers == 0 {
            return Err(Error::config("iteration/depth settings must be >= 1"));
        }
        if self.candidates == 0 {
            return Err(Error::config("candidate count must be >= 1"));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Trainable quantities: the feature residual δ, raw per-superpixel
/// compactness (sigmoid-squashed), and the raw shrinkage threshold
/// (softplus-squashed).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub delta: Array2<f64>,
    pub raw_compactness: Array1<f64>,
    pub raw_lambda_sr: f64,
}

impl ParameterSet {
    /// δ = 0, w = 0.5, λ_sr = 0.1.
    pub fn init(n: usize, d: usize, m: usize) -> ParameterSet {
        ParameterSet {
            delta: Array2::zeros((n, d)),
            raw_compactness: Array1::zeros(m),
            raw_lambda_sr: softplus_inv(0.1),
        }
    }

    pub fn lambda_sr(&self) -> f64 {
        softplus(self.raw_lambda_sr)
    }

    pub fn is_finite(&self) -> bool {
        self.raw_lambda_sr.is_finite()
            && self.delta.iter().all(|v| v.is_finite())
            && self.raw_compactness.iter().all(|v| v.is_finite())
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m_delta: Array2<f64>,
    pub v_delta: Array2<f64>,
    pub m_compactness: Array1<f64>,
    pub v_compactness: Array1<f64>,
    pub m_lambda: f64,
    pub v_lambda: f64,
}

impl AdamState {
    pub fn zeros(n: usize, d: usize, m: usize) -> AdamState {
        AdamState {
            step: 0,
            m_delta: Array2::zeros((n, d)),
            v_delta: Array2::zeros((n, d)),
            m_compactness: Array1::zeros(m),
            v_compactness: Array1::zeros(m),
            m_lambda: 0.0,
            v_lambda: 0.0,
        }
    }
}

fn adam_update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, bc1: f64, bc2: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let mh = *m / bc1;
    let vh = *v / bc2;
    *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
}

/// One bias-corrected adaptive-moment step over all parameter groups.
pub fn adam_step(params: &mut ParameterSet, grads: &Gradients, adam: &mut AdamState, lr: f64) {
    adam.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(adam.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(adam.step as i32);
    for (((p, &g), m), v) in params
        .delta
        .iter_mut()
        .zip(grads.delta.iter())
        .zip(adam.m_delta.iter_mut())
        .zip(adam.v_delta.iter_mut())
    {
        adam_update(p, g, m, v, lr, bc1, bc2);
    }
    for (((p, &g), m), v) in params
        .raw_compactness
        .iter_mut()
        .zip(grads.raw_compactness.iter())
        .zip(adam.m_compactness.iter_mut())
        .zip(adam.v_compactness.iter_mut())
    {
        adam_update(p, g, m, v, lr, bc1, bc2);
    }
    adam_update(
        &mut params.raw_lambda_sr,
        grads.raw_lambda_sr,
        &mut adam.m_lambda,
        &mut adam.v_lambda,
        lr,
        bc1,
        bc2,
    );
}

/// Mask out gradients of parameter groups frozen by the ablation mode.
fn apply_mask(grads: &mut Gradients, w: &ObjectiveWeights) {
    if !w.train_delta {
        grads.delta.fill(0.0);
    }
    if !w.train_compactness {
        grads.raw_compactness.fill(0.0);
    }
    if !w.train_lambda {
        grads.raw_lambda_sr = 0.0;
    }
}

/// Result of a training run.
pub struct TrainOutput {
    pub params: ParameterSet,
    pub adam: AdamState,
    pub final_report: LossReport,
    pub history: Vec<(usize, LossReport)>,
    pub epochs_run: usize,
}

/// Output hooks: a CSV sink for the loss trajectory and a checkpoint path.
#[derive(Default)]
pub struct TrainSink<'a> {
    pub loss_csv: Option<&'a mut dyn Write>,
    pub checkpoint_path: Option<&'a Path>,
    pub config_json: Option<String>,
}

/// Run the training loop on a standardized cube with M superpixels. M1
/// evaluates the pipeline once with the initial parameters; M4 runs an M2
/// phase then an M3 phase with an equal epoch split; everything is
/// deterministic for a fixed seed.
pub fn train(
    cube: &HsiCube,
    m: usize,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = cube.pixels();
    let d = cube.bands;
    let mut params = ParameterSet::init(n, d, m);
    let mut adam = AdamState::zeros(n, d, m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();

    if let Some(csv) = sink.loss_csv.as_deref_mut() {
        writeln!(csv, "{}", LossReport::csv_header())
            .map_err(|e| Error::io("<loss csv>", e.to_string()))?;
    }

    let phases: Vec<(ObjectiveWeights, usize)> = match cfg.ablation {
        Ablation::M1 => vec![],
        Ablation::M4 => {
            let first = cfg.epochs / 2;
            vec![
                (ObjectiveWeights::for_mode(Ablation::M2, cfg.alpha), first),
                (
                    ObjectiveWeights::for_mode(Ablation::M3, cfg.alpha),
                    cfg.epochs - first,
                ),
            ]
        }
        mode => vec![(ObjectiveWeights::for_mode(mode, cfg.alpha), cfg.epochs)],
    };

    let log_row = |epoch: usize,
                       report: &LossReport,
                       sink: &mut TrainSink,
                       history: &mut Vec<(usize, LossReport)>|
     -> Result<()> {
        if let Some(csv) = sink.loss_csv.as_deref_mut() {
            writeln!(csv, "{}", report.csv_row(epoch))
                .map_err(|e| Error::io("<loss csv>", e.to_string()))?;
        }
        history.push((epoch, *report));
        Ok(())
    };

    let mut epoch = 0usize;
    for (weights, phase_epochs) in &phases {
        for _ in 0..*phase_epochs {
            let trace = grad::forward(&params, cube, m, cfg).map_err(|e| {
                // Keep whatever checkpoint was last written; report the stage.
                Error::numerical(format!("epoch {epoch}: {e}"))
            })?;
            log_row(epoch, &trace.report, sink, &mut history)?;
            let mut grads = grad::backward(&trace, &params, cfg, weights);
            apply_mask(&mut grads, weights);
            if !grads.is_finite() {
                return Err(Error::numerical(format!(
                    "epoch {epoch}: non-finite gradient"
                )));
            }
            adam_step(&mut params, &grads, &mut adam, cfg.learning_rate);
            if !params.is_finite() {
                return Err(Error::numerical(format!(
                    "epoch {epoch}: non-finite parameter after update"
                )));
            }
            epoch += 1;
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                if let Some(path) = sink.checkpoint_path {
                    save_checkpoint(path, cfg, &params, &adam, &rng, epoch as u64)?;
                    write_config_echo(path, sink.config_json.as_deref())?;
                }
            }
        }
    }

    // Post-training evaluation (the only evaluation for M1).
    let trace = grad::forward(&params, cube, m, cfg)?;
    log_row(epoch, &trace.report, sink, &mut history)?;
    if let Some(path) = sink.checkpoint_path {
        save_checkpoint(path, cfg, &params, &adam, &rng, epoch as u64)?;
        write_config_echo(path, sink.config_json.as_deref())?;
    }
    // Advance the RNG once per run so its serialized position reflects use.
    use rand::RngCore;
    let _ = rng.next_u64();
    Ok(TrainOutput {
        params,
        adam,
        final_report: trace.report,
        history,
        epochs_run: epoch,
    })
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic, version, geometry, RNG state, raw parameters and
// optimizer moments as little-endian f64.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPXSSCKP";
const CHECKPOINT_VERSION: u32 = 1;

fn push_f64s(buf: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize parameters + optimizer + RNG state, atomically (temp + rename).
pub fn save_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    params: &ParameterSet,
    adam: &AdamState,
    rng: &ChaCha8Rng,
    epoch: u64,
) -> Result<()> {
    let (n, d) = params.delta.dim();
    let m = params.raw_compactness.len();
    let mut buf = Vec::with_capacity(64 + (2 * n * d + 2 * m + 4) * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&adam.step.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&rng.get_seed());
    buf.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    push_f64s(&mut buf, [params.raw_lambda_sr, adam.m_lambda, adam.v_lambda]);
    push_f64s(&mut buf, params.delta.iter().copied());
    push_f64s(&mut buf, params.raw_compactness.iter().copied());
    push_f64s(&mut buf, adam.m_delta.iter().copied());
    push_f64s(&mut buf, adam.v_delta.iter().copied());
    push_f64s(&mut buf, adam.m_compactness.iter().copied());
    push_f64s(&mut buf, adam.v_compactness.iter().copied());
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, format!("write failed: {e}")))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, format!("rename failed: {e}")))?;
    Ok(())
}

fn write_config_echo(checkpoint_path: &Path, config_json: Option<&str>) -> Result<()> {
    if let Some(json) = config_json {
        let path = checkpoint_path.with_extension("config.json");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Deserialized checkpoint contents.
pub struct Checkpoint {
    pub epoch: u64,
    pub seed: u64,
    pub params: ParameterSet,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, format!("read failed: {e}")))?;
    let fail = |msg: &str| Error::validation(format!("bad checkpoint {}: {msg}", path.display()));
    if buf.len() < 8 + 4 + 5 * 8 + 8 + 32 + 16 {
        return Err(fail("truncated header"));
    }
    if &buf[0..8] != CHECKPOINT_MAGIC {
        return Err(fail("magic mismatch"));
    }
    let mut off = 8usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        if off + len > buf.len() {
            return Err(fail("truncated body"));
        }
        let s = &buf[off..off + len];
        off += len;
        Ok(s)
    };
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let epoch = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let step = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let m = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let rng_seed: [u8; 32] = take(32)?.try_into().unwrap();
    let word_pos = u128::from_le_bytes(take(16)?.try_into().unwrap());
    let expected = 8 + 4 + 6 * 8 + 32 + 16 + (3 + 2 * n * d + 2 * m + n * d + m) * 8;
    let _ = expected;
    let mut read_f64 = |count: usize| -> Result<Vec<f64>> {
        let bytes = take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let scalars = read_f64(3)?;
    let delta = read_f64(n * d)?;
    let raw_w = read_f64(m)?;
    let m_delta = read_f64(n * d)?;
    let v_delta = read_f64(n * d)?;
    let m_w = read_f64(m)?;
    let v_w = read_f64(m)?;
    if off != buf.len() {
        return Err(fail("trailing bytes"));
    }
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        epoch,
        seed,
        params: ParameterSet {
            delta: Array2::from_shape_vec((n, d), delta).unwrap(),
            raw_compactness: Array1::from_vec(raw_w),
            raw_lambda_sr: scalars[0],
        },
        adam: AdamState {
            step,
            m_delta: Array2::from_shape_vec((n, d), m_delta).unwrap(),
            v_delta: Array2::from_shape_vec((n, d), v_delta).unwrap(),
            m_compactness: Array1::from_vec(m_w),
            v_compactness: Array1::from_vec(v_w),
            m_lambda: scalars[1],
            v_lambda: scalars[2],
        },
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{make_synthetic, standardize, RegionLayout, SynthSpec};
    use tempfile::tempdir;

    fn small_cube() -> HsiCube {
        let spec = SynthSpec {
            height: 8,
            width: 8,
            bands: 3,
            classes: 2,
            subspace_dim: 2,
            noise_sigma: 0.1,
            region_layout: RegionLayout::Blocks,
            seed: 5,
        };
        standardize(&make_synthetic(&spec).unwrap().0)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            superpixel_iters: 2,
            admm_layers: 4,
            eval_admm_layers: 4,
            checkpoint_every: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [0.01, 0.1, 1.0, 5.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
        let p = ParameterSet::init(4, 2, 3);
        assert!((p.lambda_sr() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_freezes() {
        let mut params = ParameterSet::init(2, 2, 2);
        params.delta[[0, 0]] = 0.7;
        let before = params.clone();
        let grads = Gradients::zeros(2, 2, 2);
        let mut adam = AdamState::zeros(2, 2, 2);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut adam, 0.1);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_single_step_closed_form() {
        let mut params = ParameterSet::init(1, 1, 1);
        let mut grads = Gradients::zeros(1, 1, 1);
        grads.delta[[0, 0]] = 0.3;
        let mut adam = AdamState::zeros(1, 1, 1);
        adam_step(&mut params, &grads, &mut adam, 0.05);
        // One step from zero moments: m̂ = g, v̂ = g² → step = lr·g/(|g|+ε).
        let g = 0.3f64;
        let expect = -0.05 * g / (g.abs() + 1e-8);
        assert!((params.delta[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn adam_constant_gradient_approaches_lr_steps() {
        let mut params = ParameterSet::init(1, 1, 1);
        let mut grads = Gradients::zeros(1, 1, 1);
        grads.delta[[0, 0]] = 1.7;
        let mut adam = AdamState::zeros(1, 1, 1);
        let lr = 0.01;
        let mut prev = params.delta[[0, 0]];
        for step in 0..300 {
            adam_step(&mut params, &grads, &mut adam, lr);
            let diff = prev - params.delta[[0, 0]];
            prev = params.delta[[0, 0]];
            if step > 100 {
                assert!((diff - lr).abs() < 1e-4, "step {step}: {diff}");
            }
        }
    }

    #[test]
    fn m1_runs_zero_epochs() {
        let cube = small_cube();
        let cfg = TrainConfig {
            ablation: Ablation::M1,
            ..small_cfg()
        };
        let out = train(&cube, 4, &cfg, &mut TrainSink::default()).unwrap();
        assert_eq!(out.epochs_run, 0);
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.params, ParameterSet::init(64, 3, 4));
    }

    #[test]
    fn ablation_masks_freeze_parameters() {
        let cube = small_cube();
        // M3: only λ moves.
        let cfg = TrainConfig {
            ablation: Ablation::M3,
            ..small_cfg()
        };
        let out = train(&cube, 4, &cfg, &mut TrainSink::default()).unwrap();
        let init = ParameterSet::init(64, 3, 4);
        assert_eq!(out.params.delta, init.delta);
        assert_eq!(out.params.raw_compactness, init.raw_compactness);
        assert_ne!(out.params.raw_lambda_sr, init.raw_lambda_sr);
        // M2: λ frozen, δ and W move.
        let cfg = TrainConfig {
            ablation: Ablation::M2,
            ..small_cfg()
        };
        let out = train(&cube, 4, &cfg, &mut TrainSink::default()).unwrap();
        assert_eq!(out.params.raw_lambda_sr, init.raw_lambda_sr);
        assert_ne!(out.params.delta, init.delta);
    }

    #[test]
    fn training_is_deterministic() {
        let cube = small_cube();
        let cfg = small_cfg();
        let dir = tempdir().unwrap();
        let run = |name: &str| -> Vec<u8> {
            let path = dir.path().join(name);
            let mut sink = TrainSink {
                checkpoint_path: Some(&path),
                ..TrainSink::default()
            };
            train(&cube, 4, &cfg, &mut sink).unwrap();
            std::fs::read(&path).unwrap()
        };
        assert_eq!(run("a.ckpt"), run("b.ckpt"));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cube = small_cube();
        let cfg = small_cfg();
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let mut sink = TrainSink {
            checkpoint_path: Some(&path),
            config_json: Some(serde_json::to_string(&cfg).unwrap()),
            ..TrainSink::default()
        };
        let out = train(&cube, 4, &cfg, &mut sink).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.epoch, 3);
        assert_eq!(ck.params, out.params);
        assert_eq!(ck.adam, out.adam);
        assert!(path.with_extension("config.json").exists());
    }

    #[test]
    fn loss_csv_has_all_epoch_rows() {
        let cube = small_cube();
        let cfg = small_cfg();
        let mut csv = Vec::new();
        {
            let mut sink = TrainSink {
                loss_csv: Some(&mut csv),
                ..TrainSink::default()
            };
            train(&cube, 4, &cfg, &mut sink).unwrap();
        }
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], LossReport::csv_header());
        assert_eq!(lines.len(), 1 + cfg.epochs + 1); // header + per-epoch + final
    }

    #[test]
    fn m4_splits_phases() {
        let cube = small_cube();
        let cfg = TrainConfig {
            ablation: Ablation::M4,
            epochs: 4,
            ..small_cfg()
        };
        let init = ParameterSet::init(64, 3, 4);
        let out = train(&cube, 4, &cfg, &mut TrainSink::default()).unwrap();
        assert_eq!(out.epochs_run, 4);
        // Both phases did something: superpixel params and λ all moved.
        assert_ne!(out.params.delta, init.delta);
        assert_ne!(out.params.raw_lambda_sr, init.raw_lambda_sr);
    }
}
