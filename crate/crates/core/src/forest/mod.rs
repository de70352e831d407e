//! Random forest classifier, impurity-based importances and the
//! cross-validation evaluation harness.

mod eval;
mod tree;

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_indexed, digest_bytes, rng_from};

pub use eval::{
    average_precision, cross_validate, equal_error_rate, threshold_curve, CurvePoint, CvConfig,
    CvMode, EvalReport, RoundResult,
};
pub use tree::{Node, SplitRule, Tree};

pub const FORMAT_VERSION: &str = "ioforge-forest/1";

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training matrix has no rows or no columns")]
    Empty,
    #[error("{what}: expected length {expected}, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix contains a non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature schema mismatch: model trained on {expected}, input has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("no positive examples among the scored items")]
    NoPositives,
    #[error("could not draw a test fold containing both classes after {0} attempts")]
    FoldRetries(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ForestError> = std::result::Result<T, E>;

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(ForestError::LengthMismatch {
                    what: "matrix row",
                    expected: n_cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n_cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Matrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(p) => Err(ForestError::NonFinite {
                row: p / self.n_cols.max(1),
                col: p % self.n_cols.max(1),
            }),
            None => Ok(()),
        }
    }
}

/// SHA-256 over the ordered feature names.
pub fn schema_fingerprint(names: &[String]) -> String {
    digest_bytes(names.join("\n").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split; `None` means ceil(sqrt(F)).
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub split_rule: SplitRule,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
            bootstrap: true,
            split_rule: SplitRule::Best,
            seed: 0,
        }
    }
}

impl ForestParams {
    /// Extremely-randomized trees: random thresholds, no resampling.
    pub fn extra_trees(n_trees: usize, seed: u64) -> Self {
        ForestParams {
            n_trees,
            bootstrap: false,
            split_rule: SplitRule::Random,
            seed,
            ..Default::default()
        }
    }

    fn resolved_max_features(&self, f: usize) -> Result<usize> {
        let m = self.max_features.unwrap_or_else(|| (f as f64).sqrt().ceil() as usize);
        if m == 0 || m > f {
            return Err(ForestError::InvalidParams(format!(
                "max_features must lie in [1, {f}], got {m}"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: String,
    pub schema_fingerprint: String,
    pub feature_names: Vec<String>,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn train(x: &Matrix, y: &[bool], names: &[String], params: &ForestParams) -> Result<Forest> {
        if x.n_rows() == 0 || x.n_cols() == 0 {
            return Err(ForestError::Empty);
        }
        if y.len() != x.n_rows() {
            return Err(ForestError::LengthMismatch {
                what: "labels",
                expected: x.n_rows(),
                found: y.len(),
            });
        }
        if names.len() != x.n_cols() {
            return Err(ForestError::LengthMismatch {
                what: "feature names",
                expected: x.n_cols(),
                found: names.len(),
            });
        }
        if params.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
        }
        if params.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
            return Err(ForestError::SingleClass);
        }
        x.check_finite()?;
        let grow = tree::GrowParams {
            max_features: params.resolved_max_features(x.n_cols())?,
            min_samples_leaf: params.min_samples_leaf,
            max_depth: params.max_depth,
            rule: params.split_rule,
        };
        let n = x.n_rows();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_from(derive_indexed(params.seed, "tree", t as u64));
                let samples = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                Tree::grow(x, y, samples, &grow, &mut rng)
            })
            .collect();
        Ok(Forest {
            version: FORMAT_VERSION.to_string(),
            schema_fingerprint: schema_fingerprint(names),
            feature_names: names.to_vec(),
            params: params.clone(),
            trees,
        })
    }

    /// Mean over trees of the leaf positive fraction; no schema check.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_proba(&self, x: &Matrix, names: &[String]) -> Result<Vec<f64>> {
        let found = schema_fingerprint(names);
        if found != self.schema_fingerprint || x.n_cols() != self.feature_names.len() {
            return Err(ForestError::SchemaMismatch {
                expected: self.schema_fingerprint.clone(),
                found,
            });
        }
        x.check_finite()?;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict_row(x.row(i)))
            .collect())
    }

    /// Mean decrease in Gini impurity, normalized per tree, averaged and
    /// renormalized to sum to one.
    pub fn feature_importance(&self) -> Vec<f64> {
        let f = self.feature_names.len();
        let mut acc = vec![0.0; f];
        for t in &self.trees {
            let dec = t.impurity_decrease(f);
            let total: f64 = dec.iter().sum();
            if total > 0.0 {
                for (a, d) in acc.iter_mut().zip(dec) {
                    *a += d / total;
                }
            }
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            acc.iter_mut().for_each(|a| *a /= total);
            acc
        } else {
            vec![1.0 / f as f64; f]
        }
    }

    /// Feature name to importance, sorted by decreasing weight.
    pub fn importance_table(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.feature_names.iter().cloned().zip(self.feature_importance()).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    pub fn write_importance_json<W: Write>(&self, out: W) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> = self
            .importance_table()
            .into_iter()
            .map(|(k, v)| (k, serde_json::Value::from(v)))
            .collect();
        serde_json::to_writer_pretty(out, &map)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let f: Forest = serde_json::from_str(text)?;
        if f.version != FORMAT_VERSION {
            return Err(ForestError::InvalidParams(format!(
                "unsupported model version {}",
                f.version
            )));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::ProptestConfig;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    pub(crate) fn names(f: usize) -> Vec<String> {
        (0..f).map(|i| format!("f{i}")).collect()
    }

    /// Two Gaussian-free clusters split by x0 + x1 > 1.
    pub(crate) fn separable(n: usize, seed: u64) -> (Matrix, Vec<bool>) {
        let mut rng = rng_from(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while rows.len() < n {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            if (a + b - 1.0).abs() < 0.05 {
                continue;
            }
            rows.push(vec![a, b]);
            y.push(a + b > 1.0);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = separable(200, 1);
        let f = Forest::train(&x, &y, &names(2), &ForestParams::default()).unwrap();
        let p = f.predict_proba(&x, &names(2)).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == **y).count() as f64 / 200.0;
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn constant_labels_and_empty_input_are_errors() {
        let (x, _) = separable(10, 1);
        assert!(matches!(
            Forest::train(&x, &[true; 10], &names(2), &ForestParams::default()),
            Err(ForestError::SingleClass)
        ));
        let empty = Matrix::zeros(0, 2);
        assert!(matches!(
            Forest::train(&empty, &[], &names(2), &ForestParams::default()),
            Err(ForestError::Empty)
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let (mut x, y) = separable(10, 1);
        x.set(3, 1, f64::NAN);
        assert!(matches!(
            Forest::train(&x, &y, &names(2), &ForestParams::default()),
            Err(ForestError::NonFinite { row: 3, col: 1 })
        ));
    }

    #[test]
    fn same_seed_same_predictions() {
        let (x, y) = separable(100, 2);
        let (xt, _) = separable(50, 3);
        let p = ForestParams {
            n_trees: 20,
            seed: 9,
            ..Default::default()
        };
        let a = Forest::train(&x, &y, &names(2), &p).unwrap();
        let b = Forest::train(&x, &y, &names(2), &p).unwrap();
        assert_eq!(
            a.predict_proba(&xt, &names(2)).unwrap(),
            b.predict_proba(&xt, &names(2)).unwrap()
        );
    }

    #[test]
    fn schema_mismatch_rejected() {
        let (x, y) = separable(50, 2);
        let f = Forest::train(&x, &y, &names(2), &ForestParams::default()).unwrap();
        let other = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(f.predict_proba(&x, &other), Err(ForestError::SchemaMismatch { .. })));
    }

    fn leaf_forest(leaves: &[(u32, u32)]) -> Forest {
        Forest {
            version: FORMAT_VERSION.into(),
            schema_fingerprint: schema_fingerprint(&names(1)),
            feature_names: names(1),
            params: ForestParams::default(),
            trees: leaves
                .iter()
                .map(|&(neg, pos)| Tree {
                    nodes: vec![Node::Leaf { neg, pos }],
                })
                .collect(),
        }
    }

    #[test]
    fn leaf_fraction_averaging() {
        assert_eq!(leaf_forest(&[(1, 3)]).predict_row(&[0.0]), 0.75);
        let two = leaf_forest(&[(4, 1), (2, 3)]).predict_row(&[0.0]);
        assert!((two - 0.4).abs() < 1e-15);
        assert_eq!(leaf_forest(&[(0, 2), (0, 7)]).predict_row(&[0.0]), 1.0);
        assert_eq!(leaf_forest(&[(1, 1)]).feature_importance(), vec![1.0]);
    }

    #[test]
    fn importance_concentrates_on_the_only_split_feature() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 5.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let f = Forest::train(&x, &y, &names(2), &ForestParams::default()).unwrap();
        assert_eq!(f.feature_importance(), vec![1.0, 0.0]);
    }

    #[test]
    fn noise_importances_are_near_uniform() {
        let f_count = 5;
        let seeds = 20;
        let mut per_seed = Vec::new();
        for s in 0..seeds {
            let mut rng = rng_from(100 + s);
            let rows: Vec<Vec<f64>> = (0..200)
                .map(|_| (0..f_count).map(|_| rng.random()).collect())
                .collect();
            let y: Vec<bool> = (0..200).map(|_| rng.random::<f64>() < 0.5).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let p = ForestParams {
                n_trees: 30,
                seed: s,
                ..Default::default()
            };
            per_seed.push(Forest::train(&x, &y, &names(f_count), &p).unwrap().feature_importance());
        }
        for j in 0..f_count {
            let v: Vec<f64> = per_seed.iter().map(|w| w[j]).collect();
            let mean = v.iter().sum::<f64>() / seeds as f64;
            let sd = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64).sqrt();
            let se = sd / (seeds as f64).sqrt();
            assert!((mean - 0.2).abs() <= 3.0 * se + 1e-3, "feature {j}: {mean} ± {se}");
        }
    }

    #[test]
    fn json_round_trip() {
        let (x, y) = separable(60, 5);
        let f = Forest::train(&x, &y, &names(2), &ForestParams { n_trees: 5, ..Default::default() }).unwrap();
        let back = Forest::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let mut buf = Vec::new();
        f.write_importance_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let total: f64 = v.as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn row_permutation_invariance_without_bootstrap(seed in 0u64..1000, shift in 1usize..59) {
            let (x, y) = separable(60, seed);
            let perm: Vec<usize> = (0..60).map(|i| (i + shift) % 60).collect();
            let xp = x.select_rows(&perm);
            let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
            let p = ForestParams { n_trees: 5, bootstrap: false, max_features: Some(1), seed, ..Default::default() };
            let a = Forest::train(&x, &y, &names(2), &p).unwrap();
            let b = Forest::train(&xp, &yp, &names(2), &p).unwrap();
            prop_assert_eq!(a.trees, b.trees);
        }

        #[test]
        fn importances_sum_to_one(seed in 0u64..1000) {
            let (x, y) = separable(40, seed);
            let f = Forest::train(&x, &y, &names(2), &ForestParams { n_trees: 4, seed, ..Default::default() }).unwrap();
            let s: f64 = f.feature_importance().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
