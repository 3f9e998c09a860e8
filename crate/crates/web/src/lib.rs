//! Browser bindings over a small synthetic scenario. Every exported function
//! regenerates its data from the seed and returns a JSON string.

use noisyfeat::detect::{
    compute_delta, compute_deltas, detect_noisy_feature, DeltaSource, EmdMode,
};
use noisyfeat::harness::{Experiment, ExperimentConfig, Replicate, TrainSize};
use noisyfeat::knn::IndexSet;
use noisyfeat::noise::{inject_gaussian, sigma_ladder, NoiseSpec};
use noisyfeat::recover::{baseline_threshold, flag_recoverable, RecoverabilityCriterion};
use noisyfeat::synth::{latent_factor_table, LatentFactorSpec};
use noisyfeat::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub const N_ROWS: usize = 2_000;
pub const N_FEATURES: usize = 8;

struct Scenario {
    replicate: Replicate,
    index: IndexSet,
}

impl Scenario {
    fn new(seed: u64, train_rows: usize) -> Result<Self> {
        let table = latent_factor_table(&LatentFactorSpec {
            n_rows: N_ROWS,
            n_features: N_FEATURES,
            n_latent: 3,
            seed,
            ..Default::default()
        })?;
        let config = ExperimentConfig {
            prune_threshold: 1.0,
            seeds: vec![seed],
            train_sizes: vec![TrainSize::Full],
            ..Default::default()
        };
        let exp = Experiment::from_table(config, table)?;
        let replicate = exp.replicate(seed)?;
        let size = train_rows.clamp(exp.config().knn.k, replicate.full_train_size());
        let index = IndexSet::build(&replicate.train_subset(size), exp.config().knn)?;
        Ok(Self { replicate, index })
    }

    fn feature(&self, j: usize) -> Result<&str> {
        self.index
            .feature_names()
            .get(j)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("feature index {j} out of range")))
    }

    fn noisy_test(&self, feature: &str, sigma: f64, seed: u64) -> Result<noisyfeat::FeatureTable> {
        inject_gaussian(
            &self.replicate.data.split.test,
            &NoiseSpec::new(feature, sigma, seed),
        )
    }
}

#[derive(Debug, Serialize)]
pub struct Detection {
    pub features: Vec<String>,
    pub emd: Vec<f64>,
    pub injected: String,
    pub detected: String,
    pub hit: bool,
}

/// Corrupts feature `feature` of the test set and ranks every feature by EMD.
pub fn detect_scenario(
    seed: u64,
    sigma: f64,
    feature: usize,
    train_rows: usize,
) -> Result<Detection> {
    let sc = Scenario::new(seed, train_rows)?;
    let name = sc.feature(feature)?.to_owned();
    let base = compute_deltas(
        &sc.index,
        &sc.replicate.data.split.validation,
        DeltaSource::Base,
    )?;
    let noisy = sc.noisy_test(&name, sigma, seed)?;
    let noise = compute_deltas(&sc.index, &noisy, DeltaSource::Noise)?;
    let report = detect_noisy_feature(&base, &noise, Some(&name), EmdMode::Signed)?;
    Ok(Detection {
        features: report.per_feature_emd.keys().cloned().collect(),
        emd: report.per_feature_emd.values().copied().collect(),
        hit: report.hit == Some(true),
        detected: report.detected_feature,
        injected: name,
    })
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub feature: String,
    pub sigma: Vec<f64>,
    pub recoverability: Vec<f64>,
    pub threshold: f64,
}

/// Recoverability of one feature over the sigma ladder `[0.0078125, 0.5]`.
pub fn recoverability_scenario(seed: u64, feature: usize) -> Result<Curve> {
    let sc = Scenario::new(seed, usize::MAX)?;
    let name = sc.feature(feature)?.to_owned();
    let idx = &sc.index.indices()[feature];
    let criterion = RecoverabilityCriterion::default();
    let base = compute_delta(idx, &sc.replicate.data.split.validation, DeltaSource::Base)?;
    let threshold = baseline_threshold(&base, &criterion)?;
    let sigma = sigma_ladder(0.0078125, 0.5)?;
    let recoverability = sigma
        .iter()
        .map(|&s| {
            let noise = compute_delta(idx, &sc.noisy_test(&name, s, seed)?, DeltaSource::Noise)?;
            Ok(flag_recoverable(&noise, threshold, &criterion).1)
        })
        .collect::<Result<_>>()?;
    Ok(Curve {
        feature: name,
        sigma,
        recoverability,
        threshold,
    })
}

#[derive(Debug, Serialize)]
pub struct Histograms {
    pub feature: String,
    pub edges: Vec<f64>,
    pub base: Vec<usize>,
    pub noise: Vec<usize>,
    pub emd: f64,
}

/// Shared-bin histograms of Δ_base and Δ_noise for one corrupted feature.
pub fn histogram_scenario(
    seed: u64,
    sigma: f64,
    feature: usize,
    bins: usize,
) -> Result<Histograms> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let sc = Scenario::new(seed, usize::MAX)?;
    let name = sc.feature(feature)?.to_owned();
    let idx = &sc.index.indices()[feature];
    let base = compute_delta(idx, &sc.replicate.data.split.validation, DeltaSource::Base)?;
    let noise = compute_delta(idx, &sc.noisy_test(&name, sigma, seed)?, DeltaSource::Noise)?;
    let all = base.deltas.iter().chain(&noise.deltas);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let count = |d: &[f64]| {
        let mut h = vec![0; bins];
        for v in d {
            h[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
        h
    };
    Ok(Histograms {
        feature: name,
        edges,
        base: count(&base.deltas),
        noise: count(&noise.deltas),
        emd: base.emd(&noise)?,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.and_then(|v| Ok(serde_json::to_string(&v)?))
        .map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn feature_count() -> usize {
    N_FEATURES
}

#[wasm_bindgen]
pub fn detect(
    seed: u32,
    sigma: f64,
    feature: usize,
    train_rows: usize,
) -> std::result::Result<String, JsValue> {
    to_js(detect_scenario(seed.into(), sigma, feature, train_rows))
}

#[wasm_bindgen]
pub fn recoverability_curve(seed: u32, feature: usize) -> std::result::Result<String, JsValue> {
    to_js(recoverability_scenario(seed.into(), feature))
}

#[wasm_bindgen]
pub fn delta_histograms(
    seed: u32,
    sigma: f64,
    feature: usize,
    bins: usize,
) -> std::result::Result<String, JsValue> {
    to_js(histogram_scenario(seed.into(), sigma, feature, bins))
}
