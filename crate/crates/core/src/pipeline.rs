//! End-to-end batch pipeline: standardize → train → connectivity cleanup →
//! region features → deep self-representation pass → spectral clustering →
//! pixel labels → metrics.

use crate::cluster::{self, ClusterResult};
use crate::cube::{self, HsiCube, LabelMap};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::selfrep;
use crate::spixel;
use crate::train::{self, TrainConfig, TrainOutput, TrainSink};
use ndarray::Array2;
use serde::Serialize;
use std::time::Instant;

/// Everything a run produces, ready for the CLI (or a test) to serialize.
pub struct PipelineArtifacts {
    /// Superpixel count used during training.
    pub m_train: usize,
    /// Superpixel count after connectivity cleanup.
    pub m_final: usize,
    /// Cleaned per-pixel superpixel labels, dense 0-based.
    pub superpixel_labels: Vec<u32>,
    pub cluster: ClusterResult,
    /// Coefficient matrix of the final deep self-representation pass.
    pub z: Array2<f64>,
    /// Present when ground truth was supplied.
    pub metrics: Option<MetricReport>,
    pub train: TrainOutput,
    pub stage_seconds: Vec<(String, f64)>,
}

/// Run manifest: config snapshot, input hashes, outputs, timings, seed.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub input_hashes: std::collections::BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub stage_seconds: Vec<(String, f64)>,
    pub seed: u64,
    pub superpixels_trained: usize,
    pub superpixels_final: usize,
}

/// Mean adapted-feature spectrum per cleaned superpixel region.
fn region_means(features: &Array2<f64>, labels: &[u32], count: usize) -> Array2<f64> {
    let d = features.ncols();
    let mut sums = Array2::<f64>::zeros((count, d));
    let mut sizes = vec![0u32; count];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l as usize] += 1;
        for b in 0..d {
            sums[[l as usize, b]] += features[[i, b]];
        }
    }
    for j in 0..count {
        let inv = 1.0 / (sizes[j].max(1) as f64);
        for b in 0..d {
            sums[[j, b]] *= inv;
        }
    }
    sums
}

/// Execute the full pipeline on a raw (unstandardized) cube.
pub fn run_pipeline(
    cube_raw: &HsiCube,
    labels: Option<&LabelMap>,
    cfg: &TrainConfig,
    sink: &mut TrainSink,
) -> Result<PipelineArtifacts> {
    cfg.validate()?;
    let mut stage_seconds = Vec::new();
    let timed = |name: &str, start: Instant, stages: &mut Vec<(String, f64)>| {
        stages.push((name.to_string(), start.elapsed().as_secs_f64()));
    };

    if let Some(map) = labels {
        if map.len() != cube_raw.pixels() {
            return Err(Error::validation(format!(
                "label map has {} pixels, cube has {}",
                map.len(),
                cube_raw.pixels()
            )));
        }
    }
    let dense_labels = labels.map(|l| l.densify());
    let classes = match (&dense_labels, cfg.classes) {
        (Some(map), _) if map.classes() > 0 => map.classes(),
        (_, Some(c)) if c > 0 => c,
        _ => {
            return Err(Error::config(
                "class count unknown: provide labels or set classes in the config",
            ))
        }
    };

    let t = Instant::now();
    let cube = cube::standardize(cube_raw);
    timed("standardize", t, &mut stage_seconds);

    let m_train =
        cube::choose_superpixel_count(&cube, dense_labels.as_ref(), Some(classes), cfg.superpixels)?;
    if m_train < classes {
        return Err(Error::config(format!(
            "superpixel count {m_train} is below the class count {classes}"
        )));
    }

    let t = Instant::now();
    let train_out = train::train(&cube, m_train, cfg, sink)?;
    timed("train", t, &mut stage_seconds);

    // Final segmentation with the trained parameters.
    let t = Instant::now();
    let feat = spixel::AdaptedFeatures {
        features: {
            let mut f = cube.values.clone();
            f.zip_mut_with(&train_out.params.delta, |x, &d| *x += d);
            f
        },
        coords: spixel::pixel_coords(cube.height, cube.width, m_train),
    };
    let weights = spixel::CompactnessWeights {
        raw: train_out.params.raw_compactness.clone(),
    };
    let trace = spixel::run_superpixels(
        &feat,
        &weights,
        cube.height,
        cube.width,
        m_train,
        cfg.superpixel_iters,
        cfg.candidates,
        cfg.tau,
    )?;
    let cleaned = spixel::enforce_connectivity(
        &trace.assignment.hard,
        cube.height,
        cube.width,
        m_train,
    );
    let m_final = cleaned.iter().copied().max().unwrap_or(0) as usize + 1;
    timed("segment", t, &mut stage_seconds);
    if m_final < classes {
        return Err(Error::numerical(format!(
            "connectivity cleanup left {m_final} superpixels for {classes} classes"
        )));
    }

    // Deep self-representation pass over the cleaned region features.
    let t = Instant::now();
    let means = region_means(&feat.features, &cleaned, m_final);
    let norm = selfrep::normalize_features(&means);
    let rep = selfrep::unfold_forward(
        &norm.shat,
        cfg.eval_admm_layers,
        cfg.rho,
        train_out.params.lambda_sr(),
    )?;
    timed("selfrep", t, &mut stage_seconds);

    let t = Instant::now();
    let a = selfrep::affinity(&rep.z);
    let (sp_labels, eigengap) = cluster::spectral_cluster(&a, classes, cfg.seed)?;
    let pixel_labels = cluster::propagate(&sp_labels, &cleaned);
    timed("cluster", t, &mut stage_seconds);

    let t = Instant::now();
    let metrics = match &dense_labels {
        Some(map) => Some(metrics::evaluate(&pixel_labels, &map.labels)?),
        None => None,
    };
    timed("evaluate", t, &mut stage_seconds);

    Ok(PipelineArtifacts {
        m_train,
        m_final,
        superpixel_labels: cleaned,
        cluster: ClusterResult {
            superpixel_labels: sp_labels,
            pixel_labels,
            eigengap,
        },
        z: rep.z,
        metrics,
        train: train_out,
        stage_seconds,
    })
}
