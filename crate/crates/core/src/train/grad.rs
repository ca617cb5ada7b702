//! Forward evaluation of the full pipeline with a replayable trace, and the
//! hand-written reverse-mode pass over it.
//!
//! The pipeline graph is fixed: X′ = X + δ → iterative superpixel assignment
//! → quantized features → column normalization → unfolded ADMM → losses.
//! Candidate sets, hard labels, and the grid cell map are index structures
//! with zero gradient; everything else is differentiated exactly.

use super::{ObjectiveWeights, ParameterSet, TrainConfig};
use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::loss::{self, LossReport};
use crate::selfrep::{self, AdmmTrace, NormalizedFeatures};
use crate::spixel::{self, AdaptedFeatures, CandidateIndex, SpixelTrace};
use ndarray::{Array1, Array2};

/// Every intermediate needed to replay the forward pass in reverse.
pub struct PipelineTrace {
    pub feat: AdaptedFeatures,
    pub w_eff: Array1<f64>,
    pub lambda_sr: f64,
    pub spixel: SpixelTrace,
    pub f_quant: Array2<f64>,
    pub norm: NormalizedFeatures,
    pub admm: AdmmTrace,
    pub z: Array2<f64>,
    pub report: LossReport,
    pub height: usize,
    pub width: usize,
    pub m: usize,
}

/// Gradients of the training objective with respect to the raw parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub delta: Array2<f64>,
    pub raw_compactness: Array1<f64>,
    pub raw_lambda_sr: f64,
}

impl Gradients {
    pub fn zeros(n: usize, d: usize, m: usize) -> Gradients {
        Gradients {
            delta: Array2::zeros((n, d)),
            raw_compactness: Array1::zeros(m),
            raw_lambda_sr: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.raw_lambda_sr.is_finite()
            && self.delta.iter().all(|v| v.is_finite())
            && self.raw_compactness.iter().all(|v| v.is_finite())
    }
}

fn ensure_finite<'a>(stage: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite value produced by stage '{stage}'"
        )));
    }
    Ok(())
}

/// Run the full pipeline once. Fails with the first offending stage name if
/// any intermediate turns non-finite.
pub fn forward(
    params: &ParameterSet,
    cube: &HsiCube,
    m: usize,
    cfg: &TrainConfig,
) -> Result<PipelineTrace> {
    let (height, width) = (cube.height, cube.width);
    let mut features = cube.values.clone();
    features.zip_mut_with(&params.delta, |x, &d| *x += d);
    ensure_finite("adapted features", features.iter())?;
    let feat = AdaptedFeatures {
        features,
        coords: spixel::pixel_coords(height, width, m),
    };
    let weights = spixel::CompactnessWeights {
        raw: params.raw_compactness.clone(),
    };
    let w_eff = weights.effective();
    let spixel_trace = spixel::run_superpixels(
        &feat,
        &weights,
        height,
        width,
        m,
        cfg.superpixel_iters,
        cfg.candidates,
        cfg.tau,
    )?;
    ensure_finite("superpixel assignment", spixel_trace.assignment.probs.iter())?;
    ensure_finite("superpixel centers", spixel_trace.final_state().spectral.iter())?;
    let f_quant = spixel::quantized_features(spixel_trace.final_state(), &spixel_trace.assignment.hard);
    let norm = selfrep::normalize_features(&spixel_trace.final_state().spectral);
    ensure_finite("feature normalization", norm.shat.iter())?;
    let lambda_sr = params.lambda_sr();
    let (rep_state, admm) =
        selfrep::unfold_forward_traced(&norm.shat, cfg.admm_layers, cfg.rho, lambda_sr)?;
    ensure_finite("unfolded admm", rep_state.z.iter())?;
    let (compact, consistency) = loss::spixel_loss(
        &feat.features,
        &f_quant,
        &spixel_trace.assignment.probs,
        &spixel_trace.assignment.candidates,
        height,
        width,
    );
    let recon = loss::recon_loss(&norm.shat, &rep_state.z);
    let l1 = loss::l1_loss(&rep_state.z);
    let entropy = loss::entropy_loss(&rep_state.z);
    let noise = loss::noise_loss(&params.delta, cfg.noise_weight);
    let report = LossReport::assemble(compact, consistency, recon, l1, entropy, noise, cfg.alpha);
    ensure_finite(
        "loss assembly",
        [
            report.spixel_compact,
            report.spixel_consistency,
            report.recon,
            report.l1,
            report.entropy,
            report.noise,
            report.total,
        ]
        .iter(),
    )?;
    Ok(PipelineTrace {
        feat,
        w_eff,
        lambda_sr,
        spixel: spixel_trace,
        f_quant,
        norm,
        admm,
        z: rep_state.z,
        report,
        height,
        width,
        m,
    })
}

/// Exact reverse-mode pass over a forward trace under the given objective
/// weights. Returns raw-parameter gradients (sigmoid / softplus chains
/// applied).
pub fn backward(
    trace: &PipelineTrace,
    params: &ParameterSet,
    cfg: &TrainConfig,
    weights: &ObjectiveWeights,
) -> Gradients {
    let (n, d) = trace.feat.features.dim();
    let m = trace.m;
    let g_cols = trace.spixel.assignment.candidates.ncols();

    let mut g_features = Array2::<f64>::zeros((n, d));
    let mut g_delta = Array2::<f64>::zeros((n, d));
    let mut g_w_eff = Array1::<f64>::zeros(m);
    let mut g_lambda = 0.0f64;

    // Gradients flowing into the final superpixel state.
    let mut g_spectral = Array2::<f64>::zeros((m, d));
    let mut g_spatial = Array2::<f64>::zeros((m, 2));
    let mut g_probs = Array2::<f64>::zeros((n, g_cols));

    // Noise penalty acts on δ directly.
    if weights.noise != 0.0 {
        loss::noise_backward(&params.delta, cfg.noise_weight, weights.noise, &mut g_delta);
    }

    // Self-representation losses → gZ and gŜ, then back through the ADMM
    // unfolding and the column normalization into the final centroids.
    if weights.rep != 0.0 {
        let mut g_z = Array2::<f64>::zeros((m, m));
        let mut g_shat = Array2::<f64>::zeros(trace.norm.shat.dim());
        loss::recon_backward(
            &trace.norm.shat,
            &trace.z,
            weights.rep * 2.0,
            &mut g_shat,
            &mut g_z,
        );
        loss::l1_backward(&trace.z, weights.rep, &mut g_z);
        loss::entropy_backward(&trace.z, weights.rep, &mut g_z);
        let (g_shat_admm, g_lam) = selfrep::unfold_backward(&trace.admm, &trace.norm.shat, &g_z);
        g_shat.zip_mut_with(&g_shat_admm, |a, &b| *a += b);
        g_lambda += g_lam;
        let g_s = selfrep::normalize_backward(&trace.norm, &g_shat);
        g_spectral.zip_mut_with(&g_s, |a, &b| *a += b);
    }

    // Superpixel losses → gX′, final centroids, final probabilities.
    if weights.spixel != 0.0 {
        loss::compact_backward(
            &trace.feat.features,
            &trace.f_quant,
            &trace.spixel.assignment.hard,
            weights.spixel,
            &mut g_features,
            &mut g_spectral,
        );
        loss::consistency_backward(
            &trace.spixel.assignment.probs,
            &trace.spixel.assignment.candidates,
            trace.height,
            trace.width,
            weights.spixel,
            &mut g_probs,
        );
    }

    // Walk the refinement rounds backwards.
    for it in trace.spixel.iterations.iter().rev() {
        let index = CandidateIndex::build(&it.candidates, m);
        spixel::centers_backward(
            &trace.feat,
            &it.state_out,
            &it.probs,
            &it.candidates,
            &it.den,
            &g_spectral,
            &g_spatial,
            &mut g_probs,
            &mut g_features,
        );
        let g_dist = spixel::soft_assign_backward(&it.probs, &g_probs, cfg.tau);
        let mut g_spectral_prev = Array2::<f64>::zeros((m, d));
        let mut g_spatial_prev = Array2::<f64>::zeros((m, 2));
        spixel::distances_backward(
            &trace.feat,
            &it.state_in,
            &trace.w_eff,
            &it.candidates,
            &index,
            &g_dist,
            &mut g_features,
            &mut g_spectral_prev,
            &mut g_spatial_prev,
            &mut g_w_eff,
        );
        g_spectral = g_spectral_prev;
        g_spatial = g_spatial_prev;
        g_probs.fill(0.0);
    }

    // Grid seeding: spectral centroid gradients spread over cell pixels;
    // spatial seeds are geometry constants.
    spixel::init_grid_backward(&trace.spixel.grid, &g_spectral, &mut g_features);

    // X′ = X + δ.
    g_delta.zip_mut_with(&g_features, |a, &b| *a += b);

    // Raw-parameter chains: w = σ(raw), λ = softplus(raw).
    let mut g_raw_w = Array1::<f64>::zeros(m);
    for j in 0..m {
        let w = trace.w_eff[j];
        g_raw_w[j] = g_w_eff[j] * w * (1.0 - w);
    }
    let g_raw_lambda = g_lambda * spixel::sigmoid(params.raw_lambda_sr);

    Gradients {
        delta: g_delta,
        raw_compactness: g_raw_w,
        raw_lambda_sr: g_raw_lambda,
    }
}
