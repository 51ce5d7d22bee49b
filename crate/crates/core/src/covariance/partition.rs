use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of every node to one of `K` classes (0-based internally).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("class budget K must be at least 1".into()));
        }
        if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= k) {
            return Err(Error::InvalidArgument(format!(
                "node {i} has class {c} but K = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    /// Builds from 1-based labels. `k` defaults to the largest label.
    pub fn from_one_based(labels: &[usize], k: Option<usize>) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::InvalidArgument(
                "1-based labels must be at least 1".into(),
            ));
        }
        let max = labels.iter().copied().max().unwrap_or(1);
        Self::new(labels.iter().map(|&c| c - 1).collect(), k.unwrap_or(max))
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|&c| c + 1).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub(crate) fn set_label(&mut self, node: usize, class: usize) {
        debug_assert!(class < self.k);
        self.labels[node] = class;
    }

    /// Class budget `K`.
    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.k];
        for &c in &self.labels {
            n[c] += 1;
        }
        n
    }

    pub fn nonempty_classes(&self) -> Vec<usize> {
        self.class_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Number of occupied classes.
    pub fn occupied(&self) -> usize {
        self.class_sizes().iter().filter(|&&n| n > 0).count()
    }

    /// All `K` classes occupied with at least three nodes each.
    pub fn is_init_valid(&self) -> bool {
        self.class_sizes().iter().all(|&n| n >= 3)
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    /// Renames class `c` to `perm[c]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "permutation has {} entries, K = {}",
                perm.len(),
                self.k
            )));
        }
        Self::new(self.labels.iter().map(|&c| perm[c]).collect(), self.k)
    }
}

/// Correlation parameters `(rho_0, rho_1, ..., rho_K)`.
///
/// Component index 0 is the cross-class parameter; index `k + 1` belongs to
/// class `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoParams {
    pub rho0: f64,
    pub rho: Vec<f64>,
}

impl RhoParams {
    pub fn new(rho0: f64, rho: Vec<f64>) -> Self {
        Self { rho0, rho }
    }

    /// From `[rho_0, rho_1, ..., rho_K]`.
    pub fn from_components(all: &[f64]) -> Result<Self> {
        match all.split_first() {
            Some((&rho0, rest)) if !rest.is_empty() => Ok(Self::new(rho0, rest.to_vec())),
            _ => Err(Error::InvalidArgument(
                "rho needs rho_0 and at least one class component".into(),
            )),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.rho.len()
    }

    pub fn num_components(&self) -> usize {
        self.rho.len() + 1
    }

    pub fn component(&self, index: usize) -> f64 {
        if index == 0 {
            self.rho0
        } else {
            self.rho[index - 1]
        }
    }

    pub fn set_component(&mut self, index: usize, value: f64) {
        if index == 0 {
            self.rho0 = value;
        } else {
            self.rho[index - 1] = value;
        }
    }

    pub fn components(&self) -> Vec<f64> {
        std::iter::once(self.rho0).chain(self.rho.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.rho0.is_finite() && self.rho.iter().all(|x| x.is_finite())
    }

    /// Applies the class permutation used by [`Partition::relabel`].
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut rho = vec![0.0; self.rho.len()];
        for (c, &x) in self.rho.iter().enumerate() {
            rho[perm[c]] = x;
        }
        Self::new(self.rho0, rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_round_trip() {
        let p = Partition::from_one_based(&[1, 1, 1, 2, 2, 2, 3, 3, 3, 3], None).unwrap();
        assert_eq!(p.num_classes(), 3);
        assert_eq!(p.class_sizes(), vec![3, 3, 4]);
        assert_eq!(p.to_one_based(), vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 3]);
        assert!(p.is_init_valid());
        assert!(Partition::from_one_based(&[0, 1], None).is_err());
    }

    #[test]
    fn rejects_out_of_range_labels() {
        assert!(Partition::new(vec![0, 3], 3).is_err());
        assert!(Partition::new(vec![0], 0).is_err());
    }

    #[test]
    fn init_validity_requires_every_class_with_three() {
        let p = Partition::new(vec![0, 0, 0, 1, 1, 1, 1], 3).unwrap();
        assert!(!p.is_init_valid());
        assert_eq!(p.occupied(), 2);
        assert_eq!(p.nonempty_classes(), vec![0, 1]);
    }

    #[test]
    fn relabel_moves_rho_with_classes() {
        let p = Partition::new(vec![0, 1, 2, 2], 3).unwrap();
        let r = RhoParams::new(1.0, vec![0.1, 0.2, 0.3]);
        let perm = [2, 0, 1];
        let q = p.relabel(&perm).unwrap();
        let s = r.relabel(&perm);
        for i in 0..4 {
            assert_eq!(s.rho[q.label(i)], r.rho[p.label(i)]);
        }
    }

    #[test]
    fn rho_components() {
        let mut r = RhoParams::from_components(&[0.5, 0.1, 0.2]).unwrap();
        assert_eq!(r.component(0), 0.5);
        assert_eq!(r.component(2), 0.2);
        r.set_component(1, 0.7);
        assert_eq!(r.components(), vec![0.5, 0.7, 0.2]);
        assert!(RhoParams::from_components(&[0.5]).is_err());
    }
}
