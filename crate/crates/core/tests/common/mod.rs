//! Random instance generators and invariant checks shared by the property
//! tests and the acceptance suite. Every check returns `Err(description)`
//! instead of panicking so callers can report or assert as they like.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;

use indexmap::IndexMap;
use noisyfeat::detect::{argmax_feature, emd_1d, DetectionReport};
use noisyfeat::harness::seeds::{derive_seed, SeedKey, Stream};
use noisyfeat::harness::{DetectionRun, Experiment, SweepReport};
use noisyfeat::ingest::{
    minmax_scale, pearson_matrix, prune_correlated, split_dataset, split_sizes, ScalerParams,
};
use noisyfeat::knn::{brute_force_neighbors, build_index, KnnConfig, NeighborIndex};
use noisyfeat::noise::{gaussian_draws, inject_gaussian, NoiseSpec};
use noisyfeat::recover::{
    baseline_threshold, mape, RecoverabilityCriterion, RecoveryOutcome, ACCURATE_MAPE,
};
use noisyfeat::stats::pearson;
use noisyfeat::FeatureTable;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn s(e: impl Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- generators

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [0, 1); with `grid = Some(g)` values are multiples of `1/g`
/// (exact dyadics when `g` is a power of two), which forces distance ties.
pub fn table(rng: &mut ChaCha8Rng, n: usize, d: usize, grid: Option<u32>) -> FeatureTable {
    let values = (0..n * d)
        .map(|_| match grid {
            Some(g) => rng.random_range(0..g) as f64 / g as f64,
            None => rng.random::<f64>(),
        })
        .collect();
    // Non-contiguous, shuffled ids so tie-breaks by id differ from tie-breaks by position.
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 7).collect();
    ids.shuffle(rng);
    FeatureTable::new((0..d).map(|j| format!("x{j}")).collect(), values, ids).expect("valid table")
}

pub fn sample(rng: &mut ChaCha8Rng, n: usize, grid: Option<u32>) -> Vec<f64> {
    (0..n)
        .map(|_| match grid {
            Some(g) => rng.random_range(0..g) as f64 / g as f64 * 2.0 - 1.0,
            None => rng.random_range(-1.0..1.0),
        })
        .collect()
}

pub fn query(rng: &mut ChaCha8Rng, dims: usize, grid: Option<u32>) -> Vec<f64> {
    sample(rng, dims, grid)
        .into_iter()
        .map(|v| (v + 1.0) / 2.0)
        .collect()
}

// ---------------------------------------------------------------- data_ingest

pub fn scale_round_trip(t: &FeatureTable) -> Check {
    let (scaled, params) = minmax_scale(t).map_err(s)?;
    let back = params.inverse_transform(&scaled).map_err(s)?;
    for j in 0..t.n_features() {
        if params.per_feature_max[j] == params.per_feature_min[j] {
            continue;
        }
        for i in 0..t.n_rows() {
            let (a, b) = (t.value(i, j), back.value(i, j));
            ensure!((a - b).abs() <= 1e-12, "round trip {a} -> {b} at ({i},{j})");
        }
    }
    Ok(())
}

pub fn scaler_bounds(t: &FeatureTable) -> Check {
    let params = ScalerParams::fit(t).map_err(s)?;
    let scaled = params.transform(t).map_err(s)?;
    for j in 0..t.n_features() {
        let (lo, hi) = (params.per_feature_min[j], params.per_feature_max[j]);
        ensure!(lo <= hi, "min {lo} > max {hi} for feature {j}");
        for i in 0..t.n_rows() {
            let v = scaled.value(i, j);
            if lo == hi {
                ensure!(v == 0.0, "degenerate feature {j} maps to {v}");
            } else {
                ensure!((0.0..=1.0).contains(&v), "scaled value {v} outside [0,1]");
            }
        }
    }
    Ok(())
}

pub fn prune_idempotent(t: &FeatureTable, threshold: f64) -> Check {
    let (once, _) = prune_correlated(t, threshold).map_err(s)?;
    let (twice, dropped) = prune_correlated(&once, threshold).map_err(s)?;
    ensure!(dropped.is_empty(), "second prune dropped {dropped:?}");
    ensure!(twice == once, "second prune changed the table");
    Ok(())
}

pub fn split_partitions(t: &FeatureTable, seed: u64) -> Check {
    let split = split_dataset(t, [0.8, 0.1, 0.1], seed).map_err(s)?;
    let sizes = split_sizes(t.n_rows(), [0.8, 0.1, 0.1]).map_err(s)?;
    let parts = [&split.train, &split.validation, &split.test];
    let got: Vec<usize> = parts.iter().map(|p| p.n_rows()).collect();
    ensure!(got == sizes, "subset sizes {got:?}, expected {sizes:?}");
    let n = t.n_rows() as f64;
    ensure!(
        sizes[0] == (0.8 * n + 1e-9).floor() as usize
            && sizes[1] == (0.1 * n + 1e-9).floor() as usize,
        "sizes {sizes:?} for n = {n}"
    );
    let mut all = Vec::new();
    for p in parts {
        all.extend_from_slice(p.row_ids());
        for i in 0..p.n_rows() {
            let src = t.row_position(p.row_ids()[i]).ok_or("unknown id")?;
            ensure!(
                p.row(i) == t.row(src),
                "row content moved with the wrong id"
            );
        }
    }
    let unique: BTreeSet<u64> = all.iter().copied().collect();
    ensure!(unique.len() == all.len(), "row ids repeated across subsets");
    ensure!(
        unique == t.row_ids().iter().copied().collect(),
        "union differs from input ids"
    );
    Ok(())
}

pub fn pearson_affine(t: &FeatureTable, col: usize, slope: f64, offset: f64) -> Check {
    let before = pearson_matrix(t).map_err(s)?;
    let moved: Vec<f64> = t.column(col).iter().map(|v| slope * v + offset).collect();
    let after = pearson_matrix(&t.with_column(col, &moved).map_err(s)?).map_err(s)?;
    for j in 0..t.n_features() {
        let (a, b) = (before.get(col, j), after.get(col, j));
        ensure!((a - b).abs() <= 1e-9, "r({col},{j}) changed {a} -> {b}");
    }
    Ok(())
}

// ---------------------------------------------------------------- knn

pub fn config(k: usize, p: u32, leaf_size: usize) -> KnnConfig {
    KnnConfig {
        k,
        minkowski_p: p,
        leaf_size,
        ..Default::default()
    }
}

pub fn kd_matches_brute(
    train: &FeatureTable,
    target: &str,
    queries: &[Vec<f64>],
    cfg: KnnConfig,
) -> Check {
    let idx = build_index(train, target, cfg).map_err(s)?;
    for q in queries {
        let tree = idx.query_neighbors(q, cfg.k).map_err(s)?;
        let brute = brute_force_neighbors(train, target, q, cfg.k, cfg).map_err(s)?;
        ensure!(
            tree.len() == brute.len(),
            "{} vs {} neighbors",
            tree.len(),
            brute.len()
        );
        for (a, b) in tree.iter().zip(&brute) {
            ensure!(
                a.row_id == b.row_id,
                "row {} vs {} (query {q:?})",
                a.row_id,
                b.row_id
            );
            ensure!(
                (a.distance - b.distance).abs() <= 1e-12,
                "distance {} vs {}",
                a.distance,
                b.distance
            );
        }
    }
    Ok(())
}

fn target_of(train: &FeatureTable, idx: &NeighborIndex, row_id: u64) -> Result<f64, String> {
    let j = train.require_feature(idx.target_feature()).map_err(s)?;
    let p = train
        .row_position(row_id)
        .ok_or_else(|| format!("unknown row {row_id}"))?;
    Ok(train.value(p, j))
}

/// Imputed value lies within the neighbors' target range.
pub fn imputation_convex(train: &FeatureTable, idx: &NeighborIndex, q: &[f64]) -> Check {
    let nn = idx.query_neighbors(q, idx.config().k).map_err(s)?;
    let targets = nn
        .iter()
        .map(|n| target_of(train, idx, n.row_id))
        .collect::<Result<Vec<_>, _>>()?;
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let v = idx.impute_one(q).map_err(s)?;
    ensure!(
        v >= lo - 1e-12 && v <= hi + 1e-12,
        "imputed {v} outside [{lo}, {hi}]"
    );
    Ok(())
}

/// Shifting one input column of train and queries by `c` changes nothing.
/// Use dyadic data and shifts so the shifted arithmetic is exact.
pub fn translation_invariant(
    train: &FeatureTable,
    target: &str,
    queries: &[Vec<f64>],
    col: usize,
    c: f64,
    cfg: KnnConfig,
) -> Check {
    let t = train.require_feature(target).map_err(s)?;
    ensure!(col != t, "shift column must be an input");
    let shifted: Vec<f64> = train.column(col).iter().map(|v| v + c).collect();
    let moved = train.with_column(col, &shifted).map_err(s)?;
    let a = build_index(train, target, cfg).map_err(s)?;
    let b = build_index(&moved, target, cfg).map_err(s)?;
    let qcol = if col < t { col } else { col - 1 };
    for q in queries {
        let mut q2 = q.clone();
        q2[qcol] += c;
        let na: Vec<u64> = a
            .query_neighbors(q, cfg.k)
            .map_err(s)?
            .iter()
            .map(|n| n.row_id)
            .collect();
        let nb: Vec<u64> = b
            .query_neighbors(&q2, cfg.k)
            .map_err(s)?
            .iter()
            .map(|n| n.row_id)
            .collect();
        ensure!(na == nb, "neighbors {na:?} vs {nb:?}");
        let (va, vb) = (a.impute_one(q).map_err(s)?, b.impute_one(&q2).map_err(s)?);
        ensure!(va == vb, "imputed {va} vs {vb}");
    }
    Ok(())
}

pub fn prefix_refinement(idx: &NeighborIndex, q: &[f64], k: usize) -> Check {
    let a = idx.query_neighbors(q, k).map_err(s)?;
    let b = idx.query_neighbors(q, k + 1).map_err(s)?;
    ensure!(b[..k] == a[..], "top-{k} is not a prefix of top-{}", k + 1);
    Ok(())
}

/// A k = n query returns every row once, sorted by distance, and repeats exactly.
pub fn complete_and_sorted(train: &FeatureTable, idx: &NeighborIndex, q: &[f64]) -> Check {
    let n = train.n_rows();
    let all = idx.query_neighbors(q, n).map_err(s)?;
    ensure!(all.len() == n, "k = n returned {} of {n}", all.len());
    let ids: BTreeSet<u64> = all.iter().map(|x| x.row_id).collect();
    ensure!(
        ids == train.row_ids().iter().copied().collect(),
        "some rows unreachable"
    );
    ensure!(all.iter().all(|x| x.distance >= 0.0), "negative distance");
    ensure!(
        all.windows(2).all(|w| w[0].distance <= w[1].distance),
        "not sorted"
    );
    ensure!(
        idx.query_neighbors(q, n).map_err(s)? == all,
        "repeat query differs"
    );
    Ok(())
}

// ---------------------------------------------------------------- noise

pub fn single_column(t: &FeatureTable, feature: usize, sigma: f64, seed: u64) -> Check {
    let name = &t.feature_names()[feature];
    let noisy = inject_gaussian(t, &NoiseSpec::new(name.as_str(), sigma, seed)).map_err(s)?;
    ensure!(noisy.row_ids() == t.row_ids(), "row ids changed");
    ensure!(noisy.feature_names() == t.feature_names(), "names changed");
    for i in 0..t.n_rows() {
        for j in 0..t.n_features() {
            if j != feature {
                ensure!(
                    noisy.value(i, j).to_bits() == t.value(i, j).to_bits(),
                    "column {j} touched at row {i}"
                );
            }
        }
    }
    Ok(())
}

pub fn sigma_continuity(t: &FeatureTable, feature: usize, seed: u64) -> Check {
    let name = t.feature_names()[feature].as_str();
    let mut last = f64::INFINITY;
    for sigma in [1e-1, 1e-3, 1e-6, 1e-9, 0.0] {
        let noisy = inject_gaussian(t, &NoiseSpec::new(name, sigma, seed)).map_err(s)?;
        let max = (0..t.n_rows())
            .map(|i| (noisy.value(i, feature) - t.value(i, feature)).abs())
            .fold(0.0, f64::max);
        ensure!(
            max <= last,
            "max |noisy - clean| grew to {max} at sigma {sigma}"
        );
        ensure!(max <= 10.0 * sigma, "max deviation {max} at sigma {sigma}");
        last = max;
    }
    ensure!(last == 0.0, "sigma 0 changed values");
    Ok(())
}

/// Distinct cells get distinct seeds and uncorrelated draws.
pub fn seed_streams_independent(master: u64, features: &[&str], sigmas: &[f64], n: usize) -> Check {
    let mut seeds = BTreeMap::new();
    for f in features {
        for &sigma in sigmas {
            for rep in 0..3u64 {
                let key = SeedKey {
                    stream: Stream::Noise,
                    feature: f,
                    sigma,
                    size: 100,
                    replicate: rep,
                };
                let seed = derive_seed(master, &key);
                if let Some(prev) = seeds.insert(seed, (f.to_string(), sigma, rep)) {
                    return Err(format!(
                        "seed collision between {prev:?} and {:?}",
                        (f, sigma, rep)
                    ));
                }
            }
        }
    }
    let streams: Vec<Vec<f64>> = seeds
        .keys()
        .map(|&sd| gaussian_draws(n, 1.0, sd).unwrap())
        .collect();
    let bound = 5.0 / (n as f64).sqrt();
    for a in 0..streams.len() {
        for b in a + 1..streams.len() {
            let r = pearson(&streams[a], &streams[b]);
            ensure!(r.abs() < bound, "streams {a} and {b} correlate at r = {r}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- detect

pub fn emd_metric(a: &[f64], b: &[f64], c: &[f64]) -> Check {
    let d = |x: &[f64], y: &[f64]| emd_1d(x, y).unwrap();
    let (ab, ba, bc, ac) = (d(a, b), d(b, a), d(b, c), d(a, c));
    ensure!(ab >= 0.0 && bc >= 0.0 && ac >= 0.0, "negative distance");
    ensure!(d(a, a) == 0.0, "d(a, a) = {}", d(a, a));
    ensure!((ab - ba).abs() <= 1e-12, "asymmetric: {ab} vs {ba}");
    ensure!(ac <= ab + bc + 1e-9, "triangle: {ac} > {ab} + {bc}");
    if a.len() == b.len() {
        let sort = |x: &[f64]| {
            let mut v = x.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        ensure!(
            (ab == 0.0) == (sort(a) == sort(b)),
            "zero iff equal multisets violated (d = {ab})"
        );
    }
    Ok(())
}

pub fn emd_shift(a: &[f64], b: &[f64], c: f64) -> Check {
    let base = emd_1d(a, b).map_err(s)?;
    let sa: Vec<f64> = a.iter().map(|v| v + c).collect();
    let sb: Vec<f64> = b.iter().map(|v| v + c).collect();
    let moved = emd_1d(&sa, &sb).map_err(s)?;
    ensure!(
        (base - moved).abs() <= 1e-9,
        "shift by {c}: {base} vs {moved}"
    );
    Ok(())
}

pub fn emd_equal_n(a: &[f64], b: &[f64]) -> Check {
    ensure!(a.len() == b.len(), "needs equal sizes");
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let direct = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64;
    let emd = emd_1d(a, b).map_err(s)?;
    ensure!(
        (emd - direct).abs() <= 1e-9,
        "integral {emd} vs sorted-pairs {direct}"
    );
    Ok(())
}

pub fn argmax_scale(values: &[f64], c: f64) -> Check {
    let map: IndexMap<String, f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (format!("f{i}"), *v))
        .collect();
    let scaled: IndexMap<String, f64> = map.iter().map(|(k, v)| (k.clone(), v * c)).collect();
    let (a, b) = (argmax_feature(&map), argmax_feature(&scaled));
    ensure!(a == b, "argmax {a:?} became {b:?} after scaling by {c}");
    Ok(())
}

/// EMD to `base` is non-decreasing in the shift once the shifted sample clears it,
/// and equals the shift exactly when `noise` is `base` itself.
pub fn shift_monotone(base: &[f64], noise: &[f64], shifts: &[f64]) -> Check {
    let clear = base.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - noise.iter().copied().fold(f64::INFINITY, f64::min);
    let mut last_self = -1.0;
    let mut last_other = -1.0;
    for &sh in shifts {
        let same: Vec<f64> = base.iter().map(|v| v + sh).collect();
        let d = emd_1d(base, &same).map_err(s)?;
        ensure!(
            d >= last_self - 1e-12,
            "self-shift EMD fell to {d} at shift {sh}"
        );
        ensure!((d - sh.abs()).abs() <= 1e-9, "self-shift EMD {d} != |{sh}|");
        last_self = d;
        let other: Vec<f64> = noise.iter().map(|v| v + clear.max(0.0) + sh).collect();
        let d = emd_1d(base, &other).map_err(s)?;
        ensure!(d >= last_other - 1e-12, "EMD fell to {d} at shift {sh}");
        last_other = d;
    }
    Ok(())
}

pub fn report_consistent(r: &DetectionReport) -> Check {
    let max = r
        .per_feature_emd
        .values()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let first = r
        .per_feature_emd
        .iter()
        .find(|(_, v)| **v == max)
        .map(|(k, _)| k.as_str());
    ensure!(
        first == Some(r.detected_feature.as_str()),
        "detected {} but first max is {first:?}",
        r.detected_feature
    );
    let expect = r
        .injected_feature
        .as_ref()
        .map(|f| *f == r.detected_feature);
    ensure!(r.hit == expect, "hit {:?} but expected {expect:?}", r.hit);
    Ok(())
}

// ---------------------------------------------------------------- recover

pub fn threshold_monotone(deltas: &[f64], p1: f64, p2: f64) -> Check {
    let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
    let base = noisyfeat::detect::DeltaDistribution::new(
        "f",
        noisyfeat::detect::DeltaSource::Base,
        deltas.to_vec(),
        (0..deltas.len() as u64).collect(),
    )
    .map_err(s)?;
    for on_absolute in [true, false] {
        let crit = |p| RecoverabilityCriterion {
            percentile: p,
            on_absolute,
        };
        let a = baseline_threshold(&base, &crit(lo)).map_err(s)?;
        let b = baseline_threshold(&base, &crit(hi)).map_err(s)?;
        ensure!(
            a <= b,
            "threshold at {lo} ({a}) above threshold at {hi} ({b})"
        );
    }
    Ok(())
}

pub fn mape_scale(corrected: &BTreeMap<u64, f64>, clean: &BTreeMap<u64, f64>, c: f64) -> Check {
    let a = mape(corrected, clean).map_err(s)?;
    let scale = |m: &BTreeMap<u64, f64>| {
        m.iter()
            .map(|(k, v)| (*k, v * c))
            .collect::<BTreeMap<_, _>>()
    };
    let b = mape(&scale(corrected), &scale(clean)).map_err(s)?;
    ensure!(
        a.per_sample.len() == b.per_sample.len(),
        "exclusions changed under scaling"
    );
    for (id, v) in &a.per_sample {
        let w = b.per_sample[id];
        ensure!(
            (v - w).abs() <= 1e-9 * v.abs().max(1.0),
            "row {id}: {v} vs {w}"
        );
    }
    Ok(())
}

/// Report fields agree with each other and every corrected value is inside its neighbors' target range.
pub fn recovery_consistent(
    outcome: &RecoveryOutcome,
    idx: &NeighborIndex,
    train: &FeatureTable,
    noisy: &FeatureTable,
) -> Check {
    let r = &outcome.report;
    ensure!(
        r.recoverable_ids.len() == r.n_recoverable,
        "id count mismatch"
    );
    let ratio = r.n_recoverable as f64 / r.n_test as f64;
    ensure!(
        r.recoverability == ratio,
        "recoverability {} != {ratio}",
        r.recoverability
    );
    let ids: BTreeSet<u64> = r.recoverable_ids.iter().copied().collect();
    ensure!(
        r.per_sample_mape.keys().all(|k| ids.contains(k)),
        "MAPE scored outside the recoverable set"
    );
    ensure!(
        r.per_sample_mape.len() + r.n_mape_excluded == r.n_recoverable,
        "scored + excluded != recoverable"
    );
    if !r.per_sample_mape.is_empty() {
        let under = r
            .per_sample_mape
            .values()
            .filter(|m| **m < ACCURATE_MAPE)
            .count() as f64;
        let expect = under / r.per_sample_mape.len() as f64;
        ensure!(
            r.fraction_under_20pct == Some(expect),
            "fraction {:?} != {expect}",
            r.fraction_under_20pct
        );
    }
    ensure!(
        outcome.samples.len() == r.n_recoverable,
        "sample records missing"
    );
    for rec in &outcome.samples {
        let p = noisy.row_position(rec.row_id).ok_or("unknown row")?;
        let q = idx.project_row(noisy, p).map_err(s)?;
        let nn = idx.query_neighbors(&q, idx.config().k).map_err(s)?;
        let targets = nn
            .iter()
            .map(|n| target_of(train, idx, n.row_id))
            .collect::<Result<Vec<_>, _>>()?;
        let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure!(
            rec.corrected >= lo - 1e-12 && rec.corrected <= hi + 1e-12,
            "corrected {} outside [{lo}, {hi}]",
            rec.corrected
        );
    }
    Ok(())
}

/// Per-feature mean recoverability over seeds never drops from one sigma to the next.
pub fn recoverability_monotone(report: &SweepReport) -> Check {
    for f in &report.features {
        let curve: Vec<(f64, f64)> = report
            .seed_aggregates()
            .filter(|c| c.feature.as_ref() == Some(f))
            .map(|c| (c.sigma.unwrap(), c.metric("mean_recoverability").unwrap()))
            .collect();
        ensure!(
            curve.len() == report.config.sigma_ladder.len(),
            "missing sigmas for {f}"
        );
        for w in curve.windows(2) {
            ensure!(
                w[1].1 >= w[0].1,
                "{f}: recoverability {} at sigma {} < {} at sigma {}",
                w[1].1,
                w[1].0,
                w[0].1,
                w[0].0
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- harness

pub fn subsample_nesting(exp: &Experiment, seed: u64) -> Check {
    let rep = exp.replicate(seed).map_err(s)?;
    let full = rep.full_train_size();
    let mut z = 1;
    while z <= full {
        let small = rep.train_subset(z);
        let big = rep.train_subset((2 * z).min(full));
        ensure!(
            big.row_ids()[..z] == *small.row_ids(),
            "size {z} is not a prefix of size {}",
            2 * z
        );
        ensure!(
            small.values() == &big.values()[..small.values().len()],
            "prefix rows differ at size {z}"
        );
        z *= 2;
    }
    Ok(())
}

/// Per-(sigma, size, seed) detectability equals the rate recomputed from the trials and from the hit cells.
pub fn detection_consistent(run: &DetectionRun) -> Check {
    let mut groups: BTreeMap<(u64, usize, u64), Vec<DetectionReport>> = BTreeMap::new();
    for t in &run.trials {
        report_consistent(&t.report)?;
        groups
            .entry((t.sigma.to_bits(), t.train_size, t.seed))
            .or_default()
            .push(t.report.clone());
    }
    let mut checked = 0;
    for c in run.report.summaries.iter().filter(|c| c.seed.is_some()) {
        let key = (
            c.sigma.unwrap().to_bits(),
            c.train_size.unwrap(),
            c.seed.unwrap(),
        );
        let trials = groups.get(&key).ok_or("summary without trials")?;
        let rate = noisyfeat::detect::detectability_rate(trials).map_err(s)?;
        ensure!(
            c.metric("detectability") == Some(rate),
            "summary {:?} vs trials {rate}",
            c.metric("detectability")
        );
        let hits: Vec<f64> = run
            .report
            .cells
            .iter()
            .filter(|x| {
                (
                    x.sigma.unwrap().to_bits(),
                    x.train_size.unwrap(),
                    x.seed.unwrap(),
                ) == key
            })
            .map(|x| x.metric("hit").unwrap())
            .collect();
        let mean = hits.iter().sum::<f64>() / hits.len() as f64;
        ensure!(mean == rate, "hit cells average {mean}, summary {rate}");
        checked += 1;
    }
    ensure!(
        checked == groups.len(),
        "{} groups but {checked} summaries",
        groups.len()
    );
    Ok(())
}

pub fn cell_count(report: &SweepReport, expected: usize) -> Check {
    ensure!(
        report.cells.len() == expected,
        "{} cells, expected {expected}",
        report.cells.len()
    );
    Ok(())
}

/// Cells shared by two detection sweeps whose sigma ladders differ are identical.
pub fn cells_unperturbed(narrow: &SweepReport, wide: &SweepReport) -> Check {
    let key = |c: &noisyfeat::harness::Cell| {
        (
            c.feature.clone(),
            c.sigma.map(f64::to_bits),
            c.train_size,
            c.seed,
        )
    };
    let wide: BTreeMap<_, _> = wide.cells.iter().map(|c| (key(c), c)).collect();
    for c in &narrow.cells {
        let other = wide.get(&key(c)).ok_or("cell missing from wider sweep")?;
        ensure!(*other == c, "cell {:?} differs between sweeps", key(c));
    }
    Ok(())
}

/// Serialized forms of `a` and `b` are byte-identical.
pub fn same_bytes(a: &SweepReport, b: &SweepReport) -> Check {
    ensure!(
        a.to_json().map_err(s)? == b.to_json().map_err(s)?,
        "{} JSON differs",
        a.kind
    );
    ensure!(
        a.to_csv().map_err(s)? == b.to_csv().map_err(s)?,
        "{} CSV differs",
        a.kind
    );
    Ok(())
}

// ---------------------------------------------------------------- oracles

/// Exact 1-D optimal transport cost between two uniform empirical measures,
/// solved as a linear program over the full `n × m` coupling.
///
/// Masses are scaled to integers (`m` per source point, `n` per sink point)
/// to keep the constraint matrix well conditioned; the cost is rescaled after.
pub fn lp_emd(a: &[f64], b: &[f64]) -> f64 {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let (n, m) = (a.len(), b.len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<minilp::Variable>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| lp.add_var((x - y).abs(), (0.0, f64::INFINITY)))
                .collect()
        })
        .collect();
    for row in &vars {
        let terms: Vec<_> = row.iter().map(|v| (*v, 1.0)).collect();
        lp.add_constraint(&terms, ComparisonOp::Eq, m as f64);
    }
    for j in 0..m {
        let terms: Vec<_> = vars.iter().map(|row| (row[j], 1.0)).collect();
        lp.add_constraint(&terms, ComparisonOp::Eq, n as f64);
    }
    let solution = lp.solve().expect("transport LP is feasible and bounded");
    solution.objective() / (n as f64 * m as f64)
}
