//! Synthetic data: build `Sigma` from a ground truth and draw subject rows
//! from `N(0, Sigma)`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_dense, EntryMap, Partition, RhoParams};
use crate::edges::NodeCount;
use crate::error::{Error, Result};
use crate::likelihood::EdgeData;

/// Node layout of the classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Arrangement {
    /// Classes occupy contiguous node ranges in order.
    Clustered,
    /// Members are scattered: the reference vectors below when they fit
    /// the requested sizes, otherwise a shuffle with the given seed.
    Scattered { seed: u64 },
}

/// Scattered reference layouts (1-based) for the standard benchmark sizes.
const SCATTERED_10: [usize; 10] = [1, 2, 3, 1, 2, 3, 1, 2, 3, 3];
const SCATTERED_20: [usize; 20] = [1, 5, 2, 4, 1, 3, 4, 5, 3, 2, 5, 1, 4, 3, 2, 5, 1, 4, 2, 3];
const SCATTERED_30: [usize; 30] = [
    3, 5, 2, 4, 1, 6, 1, 5, 3, 2, 4, 6, 1, 3, 5, 2, 4, 6, 1, 3, 5, 2, 4, 6, 1, 3, 5, 2, 4, 6,
];
const SCATTERED_40: [usize; 40] = [
    6, 1, 7, 7, 4, 8, 2, 5, 8, 5, 2, 3, 2, 4, 3, 1, 6, 7, 4, 3, 5, 4, 7, 1, 6, 2, 8, 1, 4, 1, 8, 6, 6,
    3, 2, 5, 7, 5, 8, 3,
];

fn reference_layout(v: usize) -> Option<&'static [usize]> {
    match v {
        10 => Some(&SCATTERED_10),
        20 => Some(&SCATTERED_20),
        30 => Some(&SCATTERED_30),
        40 => Some(&SCATTERED_40),
        _ => None,
    }
}

/// Inputs of [`make_ground_truth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub sizes: Vec<usize>,
    pub rho: Vec<f64>,
    pub rho0: f64,
    pub lambda: f64,
    pub map: EntryMap,
    pub arrangement: Arrangement,
}

impl TruthSpec {
    /// Benchmark settings for `v` in {10, 20, 30, 40}: the reference group
    /// sizes and within-class values under the identity map, no cross-class
    /// correlation and a `1e-8` ridge.
    pub fn benchmark(v: usize, arrangement: Arrangement) -> Result<Self> {
        let (sizes, rho): (Vec<usize>, Vec<f64>) = match v {
            10 => (vec![3, 3, 4], vec![0.2, 0.4, 0.9]),
            20 => (vec![4; 5], vec![0.2, 0.4, 0.6, 0.8, 0.9]),
            30 => (vec![5; 6], vec![0.001, 0.2, 0.4, 0.5, 0.6, 0.8]),
            40 => (vec![5; 8], vec![0.001, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "no benchmark configuration for V = {v} (use 10, 20, 30 or 40)"
                )))
            }
        };
        Ok(Self {
            sizes,
            rho,
            rho0: 0.0,
            lambda: 1e-8,
            map: EntryMap::Identity,
            arrangement,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub partition: Partition,
    pub rho: RhoParams,
    pub lambda: f64,
    pub v: NodeCount,
    pub map: EntryMap,
    pub group_sizes: Vec<usize>,
}

impl GroundTruth {
    pub fn sigma(&self) -> Result<DMatrix<f64>> {
        build_dense(&self.partition, &self.rho, self.lambda, self.v, self.map)
    }

    /// `Lambda` without the ridge.
    pub fn lambda_matrix(&self) -> Result<DMatrix<f64>> {
        build_dense(&self.partition, &self.rho, 0.0, self.v, self.map)
    }
}

pub fn make_ground_truth(spec: &TruthSpec) -> Result<GroundTruth> {
    if spec.sizes.is_empty() {
        return Err(Error::Infeasible("at least one group is required".into()));
    }
    if let Some(&n) = spec.sizes.iter().find(|&&n| n < 3) {
        return Err(Error::Infeasible(format!(
            "group of size {n}: every group needs at least 3 nodes"
        )));
    }
    if spec.rho.len() != spec.sizes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rho values for {} groups",
            spec.rho.len(),
            spec.sizes.len()
        )));
    }
    let k = spec.sizes.len();
    let n: usize = spec.sizes.iter().sum();
    let v = NodeCount::new(n)?;
    let contiguous: Vec<usize> = spec
        .sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
        .collect();
    let labels = match spec.arrangement {
        Arrangement::Clustered => contiguous,
        Arrangement::Scattered { seed } => match reference_layout(n) {
            Some(layout) if class_sizes_one_based(layout, k) == spec.sizes => {
                layout.iter().map(|c| c - 1).collect()
            }
            _ => {
                let mut labels = contiguous;
                labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                labels
            }
        },
    };
    let partition = Partition::new(labels, k)?;
    let rho = RhoParams::new(spec.rho0, spec.rho.clone());
    if !rho.is_finite() || !spec.lambda.is_finite() || spec.lambda < 0.0 {
        return Err(Error::InvalidArgument("rho and lambda must be finite, lambda >= 0".into()));
    }
    Ok(GroundTruth {
        group_sizes: partition.class_sizes(),
        partition,
        rho,
        lambda: spec.lambda,
        v,
        map: spec.map,
    })
}

fn class_sizes_one_based(layout: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k.max(layout.iter().copied().max().unwrap_or(0))];
    for &c in layout {
        sizes[c - 1] += 1;
    }
    sizes
}

/// Draws `s` rows `L z` with `L L^T = Sigma` and `z` standard normal.
pub fn generate<R: Rng + ?Sized>(gt: &GroundTruth, s: usize, rng: &mut R) -> Result<EdgeData> {
    if s == 0 {
        return Err(Error::InvalidArgument("subject count must be at least 1".into()));
    }
    let sigma = gt.sigma()?;
    let chol = nalgebra::Cholesky::new(sigma).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "ground truth sigma (labels {:?}, rho0 {}, rho {:?}, lambda {}, map {}) has no Cholesky factor",
            gt.partition.to_one_based(),
            gt.rho.rho0,
            gt.rho.rho,
            gt.lambda,
            gt.map
        ))
    })?;
    let l = chol.l();
    let e = l.nrows();
    let mut z = DMatrix::zeros(e, s);
    for col in 0..s {
        for row in 0..e {
            z[(row, col)] = rng.sample(StandardNormal);
        }
    }
    let r = (l * z).transpose();
    EdgeData::new(r)
}
