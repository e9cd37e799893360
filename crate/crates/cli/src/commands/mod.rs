//! Command implementations. Each returns an [`Outcome`] the binary folds
//! into the run manifest; artifacts land on disk as pure functions of
//! (config, seed, input files).

pub mod eval;
pub mod plot;
pub mod predict;
pub mod refocus;
pub mod synth;
pub mod train;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use ddff_core::data_io::{Groundtruth, StackData};
use ddff_core::lightfield::{disparity_from_depth, DisparityMap};
use ddff_core::metrics::MetricsReport;
use ddff_net::train::EpochStats;
use ndarray::Array2;

use crate::manifest::StackReport;

/// Everything a command reports back for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub epochs: Vec<EpochStats>,
    pub reports: Vec<StackReport>,
    pub aggregate: Option<MetricsReport>,
    pub timings: Vec<(String, f64)>,
}

/// Wall-clock phase timer.
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Timer {
        Timer(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Disparity groundtruth of a dataset stack; depth groundtruth converts
/// through the stack's camera model (invalid where depth is missing or
/// non-positive).
pub fn groundtruth_disparity(sd: &StackData) -> anyhow::Result<DisparityMap> {
    match &sd.groundtruth {
        Groundtruth::Disparity(d) => Ok(d.clone()),
        Groundtruth::Depth(depth) => {
            let intr = &sd.stack.intrinsics;
            let (h, w) = depth.dim();
            let mut values = Array2::<f32>::zeros((h, w));
            let mut mask = Array2::from_elem((h, w), false);
            for y in 0..h {
                for x in 0..w {
                    let z = depth.values[[y, x]] as f64;
                    if depth.mask[[y, x]] && z > 0.0 {
                        values[[y, x]] = disparity_from_depth(z, intr)
                            .context("converting depth groundtruth to disparity")?
                            as f32;
                        mask[[y, x]] = true;
                    }
                }
            }
            Ok(DisparityMap::masked(values, mask)?)
        }
    }
}

/// Valid-pixel-pooled aggregate of per-stack reports: pixel-count weighted
/// means, with the two RMS metrics pooled in their squared domain so the
/// result equals the metric computed over the concatenation of all pixels.
/// Ratio-based metrics weight by ratio-eligible counts (valid minus
/// clamped). All reports must share the same threshold list.
pub fn aggregate_reports(reports: &[&MetricsReport]) -> anyhow::Result<MetricsReport> {
    anyhow::ensure!(!reports.is_empty(), "no reports to aggregate");
    let taus: Vec<f64> = reports[0].badpix.iter().map(|(t, _)| *t).collect();
    for r in reports {
        let rt: Vec<f64> = r.badpix.iter().map(|(t, _)| *t).collect();
        anyhow::ensure!(rt == taus, "reports carry different threshold lists");
    }
    let mut n_valid = 0.0f64;
    let mut n_ratio = 0.0f64;
    let mut mse = 0.0;
    let mut log_ms = 0.0;
    let mut abs_rel = 0.0;
    let mut sqr_rel = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    let mut d3 = 0.0;
    let mut badpix = vec![0.0f64; taus.len()];
    let mut bump = 0.0;
    let mut clamped = 0usize;
    let mut valid = 0usize;
    for r in reports {
        if r.empty {
            continue;
        }
        let nv = r.valid_pixel_count as f64;
        let ne = (r.valid_pixel_count - r.clamped_pixels) as f64;
        n_valid += nv;
        n_ratio += ne;
        valid += r.valid_pixel_count;
        clamped += r.clamped_pixels;
        mse += nv * r.mse;
        bump += nv * r.bumpiness;
        for (i, (_, pct)) in r.badpix.iter().enumerate() {
            badpix[i] += nv * pct;
        }
        log_ms += ne * r.log_rms * r.log_rms;
        abs_rel += ne * r.abs_rel;
        sqr_rel += ne * r.sqr_rel;
        d1 += ne * r.accuracy_d1;
        d2 += ne * r.accuracy_d2;
        d3 += ne * r.accuracy_d3;
    }
    if n_valid == 0.0 {
        return Ok(MetricsReport {
            mse: 0.0,
            rms: 0.0,
            log_rms: 0.0,
            abs_rel: 0.0,
            sqr_rel: 0.0,
            accuracy_d1: 0.0,
            accuracy_d2: 0.0,
            accuracy_d3: 0.0,
            badpix: taus.iter().map(|&t| (t, 0.0)).collect(),
            bumpiness: 0.0,
            valid_pixel_count: 0,
            clamped_pixels: 0,
            empty: true,
        });
    }
    let rdiv = if n_ratio > 0.0 { n_ratio } else { 1.0 };
    Ok(MetricsReport {
        mse: mse / n_valid,
        rms: (mse / n_valid).sqrt(),
        log_rms: (log_ms / rdiv).sqrt(),
        abs_rel: abs_rel / rdiv,
        sqr_rel: sqr_rel / rdiv,
        accuracy_d1: d1 / rdiv,
        accuracy_d2: d2 / rdiv,
        accuracy_d3: d3 / rdiv,
        badpix: taus
            .iter()
            .zip(badpix.iter())
            .map(|(&t, &b)| (t, b / n_valid))
            .collect(),
        bumpiness: bump / n_valid,
        valid_pixel_count: valid,
        clamped_pixels: clamped,
        empty: false,
    })
}
