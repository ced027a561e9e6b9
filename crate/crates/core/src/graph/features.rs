use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::GraphError;
use crate::numeric::Tensor;
use crate::rng::{phase_rng, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// Fixed attribute vectors read from disk; never trained.
    File,
    /// A trainable embedding table.
    Table,
}

/// Input features `h_i`, one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSource {
    mode: FeatureMode,
    values: Tensor,
}

impl FeatureSource {
    pub fn new(mode: FeatureMode, values: Tensor) -> Result<Self, GraphError> {
        if values.cols() == 0 {
            return Err(GraphError::Config("feature dimension must be at least 1".into()));
        }
        if !values.is_finite() {
            return Err(GraphError::Config("features contain non-finite values".into()));
        }
        Ok(Self { mode, values })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn num_entities(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn is_trainable(&self) -> bool {
        self.mode == FeatureMode::Table
    }
}

/// A trainable `num_entities × dim` table, Glorot-uniform initialized
/// from the `Init` stream of `seed`.
pub fn init_random_features(num_entities: usize, dim: usize, seed: u64) -> Result<FeatureSource, GraphError> {
    if dim == 0 {
        return Err(GraphError::Config("embedding dimension must be at least 1".into()));
    }
    let mut rng = phase_rng(seed, Phase::Init);
    let values = Tensor::glorot_uniform(num_entities, dim, &mut rng);
    FeatureSource::new(FeatureMode::Table, values)
}

/// Writes `N d` then one `id v_1 … v_d` line per row. Values use the
/// shortest representation that parses back to the same double.
pub fn write_features(path: &Path, ids: &[String], values: &Tensor) -> Result<(), GraphError> {
    assert_eq!(ids.len(), values.rows(), "one id per feature row");
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", values.rows(), values.cols());
    for (i, id) in ids.iter().enumerate() {
        out.push_str(id);
        for v in values.row(i) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_features, Vocab};

    #[test]
    fn same_seed_same_table() {
        let a = init_random_features(5, 4, 7).unwrap();
        let b = init_random_features(5, 4, 7).unwrap();
        let c = init_random_features(5, 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
        assert!(a.is_trainable());
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(init_random_features(5, 0, 1), Err(GraphError::Config(_))));
    }

    #[test]
    fn sample_moments_match_glorot_uniform() {
        let (n, d) = (10_000, 100);
        let f = init_random_features(n, d, 3).unwrap();
        let limit = (6.0 / (n + d) as f64).sqrt();
        let nominal_var = limit * limit / 3.0;
        let vals = f.values().data();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        // The nominal mean is 0, so it is compared on the scale of the standard deviation.
        assert!(mean.abs() < 0.05 * nominal_var.sqrt(), "mean {mean}");
        assert!((var - nominal_var).abs() < 0.05 * nominal_var, "var {var} vs {nominal_var}");
        assert!(vals.iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.txt");
        let f = init_random_features(6, 3, 11).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("e{i}")).collect();
        write_features(&path, &ids, f.values()).unwrap();
        let back = load_features(&path, &Vocab::from_ids(ids).unwrap()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.mode(), FeatureMode::File);
    }
}
