//! kNN imputation of one feature from the remaining ones.
//!
//! A [`NeighborIndex`] is built over the training rows with the target feature
//! masked out; queries return the `k` nearest rows under a Minkowski metric
//! (Manhattan by default), ties broken by the lower row id, and imputation is
//! the inverse-distance weighted mean of the neighbors' target values.

mod kdtree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::FeatureTable;
use kdtree::{Candidate, KdTree, TopK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    InverseDistance,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchAlgorithm {
    KdTree,
    BruteForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub minkowski_p: u32,
    pub leaf_size: usize,
    pub weighting: Weighting,
    pub algorithm: SearchAlgorithm,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            minkowski_p: 1,
            leaf_size: 30,
            weighting: Weighting::InverseDistance,
            algorithm: SearchAlgorithm::KdTree,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("knn.k must be at least 1".into()));
        }
        if self.minkowski_p == 0 {
            return Err(Error::Config("knn.minkowski_p must be at least 1".into()));
        }
        if self.leaf_size == 0 {
            return Err(Error::Config("knn.leaf_size must be at least 1".into()));
        }
        Ok(())
    }

    fn metric(&self) -> Metric {
        Metric {
            p: self.minkowski_p,
        }
    }
}

/// Minkowski metric evaluated in "reduced" form `Σ|xᵢ − qᵢ|ᵖ`, which orders
/// points the same way as the true distance and is exact for `p = 1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Metric {
    p: u32,
}

impl Metric {
    #[inline]
    fn term(&self, gap: f64) -> f64 {
        match self.p {
            1 => gap,
            2 => gap * gap,
            p => gap.powi(p as i32),
        }
    }

    #[inline]
    fn reduced(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += self.term((x - y).abs());
        }
        acc
    }

    #[inline]
    fn finish(&self, reduced: f64) -> f64 {
        match self.p {
            1 => reduced,
            2 => reduced.sqrt(),
            p => reduced.powf(1.0 / f64::from(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub row_id: u64,
    pub distance: f64,
}

/// Immutable nearest-neighbor index over the training rows, with one feature masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex {
    target_feature: String,
    input_features: Vec<String>,
    config: KnnConfig,
    tree: KdTree,
    /// Row ids and target values in tree order.
    row_ids: Vec<u64>,
    targets: Vec<f64>,
}

/// Training coordinates with `target` masked out, plus that column's values.
fn masked_columns(train: &FeatureTable, target: usize) -> (Vec<f64>, Vec<f64>) {
    let mut coords = Vec::with_capacity(train.n_rows() * (train.n_features() - 1));
    let mut targets = Vec::with_capacity(train.n_rows());
    for row in train.rows() {
        coords.extend_from_slice(&row[..target]);
        coords.extend_from_slice(&row[target + 1..]);
        targets.push(row[target]);
    }
    (coords, targets)
}

fn check_index_inputs(
    train: &FeatureTable,
    target_feature: &str,
    config: &KnnConfig,
) -> Result<usize> {
    config.validate()?;
    let target = train.require_feature(target_feature)?;
    if train.n_features() < 2 {
        return Err(Error::InvalidArgument(
            "imputation needs at least one input feature besides the target".into(),
        ));
    }
    if train.n_rows() < config.k {
        return Err(Error::TooFewRows {
            needed: config.k,
            got: train.n_rows(),
        });
    }
    Ok(target)
}

/// Builds the index over every feature except `target_feature`.
pub fn build_index(
    train: &FeatureTable,
    target_feature: &str,
    config: KnnConfig,
) -> Result<NeighborIndex> {
    let target = check_index_inputs(train, target_feature, &config)?;
    let dims = train.n_features() - 1;
    let (coords, targets) = masked_columns(train, target);
    let leaf_size = match config.algorithm {
        SearchAlgorithm::KdTree => config.leaf_size,
        SearchAlgorithm::BruteForce => usize::MAX,
    };
    let tree = KdTree::build(dims, &coords, leaf_size);
    let row_ids = (0..tree.len())
        .map(|s| train.row_ids()[tree.original(s)])
        .collect();
    let targets = (0..tree.len()).map(|s| targets[tree.original(s)]).collect();
    let mut input_features = train.feature_names().to_vec();
    input_features.remove(target);
    Ok(NeighborIndex {
        target_feature: target_feature.to_owned(),
        input_features,
        config,
        tree,
        row_ids,
        targets,
    })
}

impl NeighborIndex {
    pub fn target_feature(&self) -> &str {
        &self.target_feature
    }

    pub fn input_features(&self) -> &[String] {
        &self.input_features
    }

    pub fn dims(&self) -> usize {
        self.input_features.len()
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn config(&self) -> &KnnConfig {
        &self.config
    }

    /// Sizes of the tree's leaf buckets.
    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.tree.leaves().map(|(s, e)| e - s).collect()
    }

    fn search(&self, query: &[f64], k: usize) -> Result<Vec<Candidate>> {
        if query.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: query.len(),
            });
        }
        if k == 0 || k > self.len() {
            return Err(Error::KTooLarge {
                k,
                available: self.len(),
            });
        }
        let mut top = TopK::new(k);
        self.tree
            .search(query, self.config.metric(), &self.row_ids, &mut top);
        Ok(top.into_sorted())
    }

    /// The `k` nearest training rows, ascending by distance, ties by row id.
    pub fn query_neighbors(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        let metric = self.config.metric();
        Ok(self
            .search(query, k)?
            .into_iter()
            .map(|c| Neighbor {
                row_id: c.row_id,
                distance: metric.finish(c.dist),
            })
            .collect())
    }

    /// Imputes the target feature for one query from its `config.k` neighbors.
    pub fn impute_one(&self, query: &[f64]) -> Result<f64> {
        let metric = self.config.metric();
        let found = self.search(query, self.config.k)?;
        let pairs = found
            .iter()
            .map(|c| (metric.finish(c.dist), self.targets[c.slot]));
        Ok(weighted_target(pairs, self.config.weighting))
    }

    pub fn impute_feature(&self, queries: &[Vec<f64>]) -> Result<Vec<f64>> {
        queries.par_iter().map(|q| self.impute_one(q)).collect()
    }

    /// Imputes the target feature for every row of `table`, reading the index's
    /// input features from it by name.
    pub fn impute_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let cols = self.input_columns(table)?;
        (0..table.n_rows())
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(cols.len()),
                |buf, i| {
                    buf.clear();
                    let row = table.row(i);
                    buf.extend(cols.iter().map(|&j| row[j]));
                    self.impute_one(buf)
                },
            )
            .collect()
    }

    /// Positions in `table` of this index's input features.
    pub fn input_columns(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        self.input_features
            .iter()
            .map(|name| {
                table.feature_index(name).ok_or_else(|| {
                    Error::FeatureMismatch(format!("table lacks index input feature `{name}`"))
                })
            })
            .collect()
    }

    /// Query coordinates for row `i` of `table`.
    pub fn project_row(&self, table: &FeatureTable, i: usize) -> Result<Vec<f64>> {
        let row = table.row(i);
        Ok(self.input_columns(table)?.iter().map(|&j| row[j]).collect())
    }
}

/// One [`NeighborIndex`] per feature of a training table, each imputing its
/// feature from all the others.
#[derive(Debug, Clone)]
pub struct IndexSet {
    feature_names: Vec<String>,
    indices: Vec<NeighborIndex>,
}

impl IndexSet {
    /// Builds the per-feature indices in parallel.
    pub fn build(train: &FeatureTable, config: KnnConfig) -> Result<Self> {
        let indices = train
            .feature_names()
            .par_iter()
            .map(|name| build_index(train, name, config))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            feature_names: train.feature_names().to_vec(),
            indices,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn indices(&self) -> &[NeighborIndex] {
        &self.indices
    }

    pub fn get(&self, feature: &str) -> Option<&NeighborIndex> {
        self.indices.iter().find(|i| i.target_feature() == feature)
    }

    pub fn require(&self, feature: &str) -> Result<&NeighborIndex> {
        self.get(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_owned()))
    }
}

/// Weighted mean of `(distance, target)` pairs. Any zero-distance neighbor
/// short-circuits to the plain mean of the zero-distance targets.
pub(crate) fn weighted_target(
    pairs: impl Iterator<Item = (f64, f64)> + Clone,
    weighting: Weighting,
) -> f64 {
    let (mut zero_sum, mut zero_n) = (0.0, 0usize);
    for (d, t) in pairs.clone() {
        if d == 0.0 {
            zero_sum += t;
            zero_n += 1;
        }
    }
    if zero_n > 0 && weighting == Weighting::InverseDistance {
        return zero_sum / zero_n as f64;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (d, t) in pairs {
        let w = match weighting {
            Weighting::InverseDistance => 1.0 / d,
            Weighting::Uniform => 1.0,
        };
        num += w * t;
        den += w;
    }
    num / den
}

/// Exhaustive reference search with the same metric and tie rule as [`NeighborIndex`].
pub fn brute_force_neighbors(
    train: &FeatureTable,
    target_feature: &str,
    query: &[f64],
    k: usize,
    config: KnnConfig,
) -> Result<Vec<Neighbor>> {
    let target = check_index_inputs(
        train,
        target_feature,
        &KnnConfig {
            k: k.max(1),
            ..config
        },
    )?;
    let dims = train.n_features() - 1;
    if query.len() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            got: query.len(),
        });
    }
    if k == 0 || k > train.n_rows() {
        return Err(Error::KTooLarge {
            k,
            available: train.n_rows(),
        });
    }
    let metric = config.metric();
    let (coords, _) = masked_columns(train, target);
    let mut all: Vec<(f64, u64)> = coords
        .chunks_exact(dims)
        .zip(train.row_ids())
        .map(|(p, &id)| (metric.reduced(p, query), id))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(all
        .into_iter()
        .take(k)
        .map(|(d, row_id)| Neighbor {
            row_id,
            distance: metric.finish(d),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(rows: &[Vec<f64>]) -> FeatureTable {
        let d = rows[0].len();
        FeatureTable::from_rows((0..d).map(|j| format!("f{j}")).collect(), rows).unwrap()
    }

    #[test]
    fn manhattan_hand_example() {
        // Inputs are f0,f1; f2 is the masked target.
        let t = points(&[vec![0., 0., 10.], vec![1., 0., 20.], vec![0., 3., 30.]]);
        let idx = build_index(
            &t,
            "f2",
            KnnConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let nn = idx.query_neighbors(&[0.4, 0.0], 2).unwrap();
        assert_eq!(nn[0].row_id, 0);
        assert!((nn[0].distance - 0.4).abs() < 1e-15);
        assert_eq!(nn[1].row_id, 1);
        assert!((nn[1].distance - 0.6).abs() < 1e-15);
    }

    #[test]
    fn exact_match_is_first_and_short_circuits() {
        let t = points(&[
            vec![0., 0., 1.],
            vec![1., 1., 2.],
            vec![2., 2., 3.],
            vec![3., 3., 4.],
            vec![4., 4., 5.],
        ]);
        let idx = build_index(&t, "f2", KnnConfig::default()).unwrap();
        let nn = idx.query_neighbors(&[2., 2.], 1).unwrap();
        assert_eq!((nn[0].row_id, nn[0].distance), (2, 0.0));
        assert_eq!(idx.impute_one(&[2., 2.]).unwrap(), 3.0);
    }

    #[test]
    fn inverse_distance_hand_example() {
        // d = 1 and 3, targets 0 and 8: (0 + 8/3) / (1 + 1/3) = 2.
        let t = points(&[vec![1., 0.], vec![3., 8.]]);
        let idx = build_index(
            &t,
            "f1",
            KnnConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((idx.impute_one(&[0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_weighting_is_arithmetic_mean() {
        let t = points(&[vec![0., 1.], vec![1., 2.], vec![5., 3.]]);
        let cfg = KnnConfig {
            k: 3,
            weighting: Weighting::Uniform,
            ..Default::default()
        };
        let idx = build_index(&t, "f1", cfg).unwrap();
        assert_eq!(idx.impute_one(&[0.3]).unwrap(), 2.0);
    }

    #[test]
    fn full_k_returns_every_row() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 * 0.1, (i * i) as f64, 1.0])
            .collect();
        let t = points(&rows);
        let idx = build_index(
            &t,
            "f1",
            KnnConfig {
                leaf_size: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut ids: Vec<u64> = idx
            .query_neighbors(&[0.5, 1.0], 10)
            .unwrap()
            .iter()
            .map(|n| n.row_id)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        assert!(idx.leaf_sizes().iter().all(|&s| s <= 2));
    }

    #[test]
    fn ties_prefer_lower_row_id() {
        let t = points(&[vec![1., 0.], vec![-1., 0.], vec![1., 0.]]);
        let idx = build_index(
            &t,
            "f1",
            KnnConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let nn = idx.query_neighbors(&[0.0], 3).unwrap();
        assert_eq!(nn.iter().map(|n| n.row_id).collect::<Vec<_>>(), [0, 1, 2]);
        let bf = brute_force_neighbors(&t, "f1", &[0.0], 3, KnnConfig::default()).unwrap();
        assert_eq!(nn, bf);
    }

    #[test]
    fn brute_force_single_row() {
        let t = points(&[vec![7., 1.]]);
        let nn = brute_force_neighbors(&t, "f1", &[-100.0], 1, KnnConfig::default()).unwrap();
        assert_eq!(nn[0].row_id, 0);
    }

    #[test]
    fn errors() {
        let t = points(&[vec![0., 1.], vec![1., 2.]]);
        assert!(matches!(
            build_index(&t, "nope", KnnConfig::default()),
            Err(Error::UnknownFeature(_))
        ));
        assert!(matches!(
            build_index(&t, "f1", KnnConfig::default()),
            Err(Error::TooFewRows { .. })
        ));
        let idx = build_index(
            &t,
            "f1",
            KnnConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(matches!(
            idx.query_neighbors(&[0., 0.], 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            idx.query_neighbors(&[0.], 3),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn euclidean_metric_supported() {
        let t = points(&[vec![3., 4., 1.], vec![1., 1., 2.]]);
        let cfg = KnnConfig {
            k: 2,
            minkowski_p: 2,
            ..Default::default()
        };
        let idx = build_index(&t, "f2", cfg).unwrap();
        let nn = idx.query_neighbors(&[0., 0.], 2).unwrap();
        assert_eq!(nn[0].row_id, 1);
        assert!((nn[1].distance - 5.0).abs() < 1e-12);
    }
}
