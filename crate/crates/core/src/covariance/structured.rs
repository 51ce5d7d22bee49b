use nalgebra::DMatrix;

use super::{validate_inputs, EntryMap, Partition, RhoParams, SampleCov};
use crate::edges::NodeCount;
use crate::error::{Error, Result};

/// Symbolic `Sigma = Lambda(omega, rho) + lambda I`.
///
/// Edges split into disjoint groups: one block per class holding the edges
/// with both endpoints in that class, plus a remainder group with every
/// other edge. With `u_g` the 0/1 indicator of group `g` and
/// `q_g = u_g / sqrt(m_g)`,
///
/// ```text
/// Lambda = c0 * 1 1^T + sum_k (c_k - c0) u_k u_k^T = Q C Q^T
/// C[g][h] = c0 * sqrt(m_g m_h)            (g != h)
/// C[g][g] = c_g * m_g  (block)   c0 * m_g  (remainder)
/// ```
///
/// so `Sigma = lambda (I - Q Q^T) + Q (C + lambda I) Q^T`. The determinant
/// lemma and the Woodbury identity then only need a Cholesky factor of the
/// `r x r` core `C + lambda I`, where `r <= K + 1` is the number of
/// non-empty groups.
#[derive(Debug, Clone)]
pub struct StructuredCov {
    partition: Partition,
    rho: RhoParams,
    lambda: f64,
    v: NodeCount,
    map: EntryMap,
    block_members: Vec<Vec<usize>>,
    block_sizes: Vec<usize>,
    e: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum GroupKind {
    Block(usize),
    Remainder,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Group {
    pub(crate) kind: GroupKind,
    pub(crate) size: usize,
}

/// Outcome of the positive-definiteness check.
#[derive(Debug, Clone, PartialEq)]
pub struct PdCheck {
    pub positive_definite: bool,
    pub diagnostic: Option<String>,
}

/// Factored core system shared by the log-determinant, trace and
/// per-subject quadratic forms.
#[derive(Debug, Clone)]
pub(crate) struct Core {
    pub(crate) groups: Vec<Group>,
    /// `(C + lambda I)^-1`, row-major `r x r`.
    pub(crate) inverse: Vec<f64>,
    pub(crate) logdet: f64,
}

impl Core {
    pub(crate) fn rank(&self) -> usize {
        self.groups.len()
    }
}

impl StructuredCov {
    pub fn new(
        partition: Partition,
        rho: RhoParams,
        lambda: f64,
        v: NodeCount,
        map: EntryMap,
    ) -> Result<Self> {
        validate_inputs(&partition, &rho, lambda, v)?;
        let n = v.get();
        let labels = partition.labels();
        let mut block_members = vec![Vec::new(); partition.num_classes()];
        let mut idx = 0;
        for i in 0..n {
            for j in i + 1..n {
                if labels[i] == labels[j] {
                    block_members[labels[i]].push(idx);
                }
                idx += 1;
            }
        }
        let block_sizes = block_members.iter().map(Vec::len).collect();
        Ok(Self {
            partition,
            rho,
            lambda,
            v,
            map,
            block_members,
            block_sizes,
            e: idx,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn rho(&self) -> &RhoParams {
        &self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nodes(&self) -> NodeCount {
        self.v
    }

    pub fn map(&self) -> EntryMap {
        self.map
    }

    /// `E`, the side length of `Sigma`.
    pub fn dim(&self) -> usize {
        self.e
    }

    /// Sorted edge ids of each class block.
    pub fn block_members(&self) -> &[Vec<usize>] {
        &self.block_members
    }

    /// `m_k = n_k (n_k - 1) / 2`.
    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    fn cross_strength(&self) -> f64 {
        self.map.strength(self.rho.rho0)
    }

    fn block_strength(&self, k: usize) -> f64 {
        self.map.strength(self.rho.rho[k])
    }

    /// Dense `Sigma`; entrywise identical to [`super::build_dense`].
    pub fn materialize(&self) -> DMatrix<f64> {
        self.materialize_with_ridge(self.lambda)
    }

    /// Dense `Lambda` without the ridge.
    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        self.materialize_with_ridge(0.0)
    }

    fn materialize_with_ridge(&self, ridge: f64) -> DMatrix<f64> {
        let cross = self.cross_strength();
        let mut m = DMatrix::from_element(self.e, self.e, cross);
        for (k, members) in self.block_members.iter().enumerate() {
            let c = self.block_strength(k);
            for &a in members {
                for &b in members {
                    m[(a, b)] = c;
                }
            }
        }
        if ridge != 0.0 {
            for a in 0..self.e {
                m[(a, a)] += ridge;
            }
        }
        m
    }

    /// Groups in a label-independent order: blocks by their smallest edge
    /// id, then the remainder.
    pub(crate) fn groups(&self) -> Vec<Group> {
        let mut blocks: Vec<(usize, usize)> = self
            .block_members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(k, m)| (m[0], k))
            .collect();
        blocks.sort_unstable();
        let mut groups: Vec<Group> = blocks
            .into_iter()
            .map(|(_, k)| Group {
                kind: GroupKind::Block(k),
                size: self.block_sizes[k],
            })
            .collect();
        let covered: usize = self.block_sizes.iter().sum();
        if covered < self.e {
            groups.push(Group {
                kind: GroupKind::Remainder,
                size: self.e - covered,
            });
        }
        groups
    }

    fn describe(&self, kind: GroupKind) -> String {
        match kind {
            GroupKind::Block(k) => format!("block of class {} (m = {})", k + 1, self.block_sizes[k]),
            GroupKind::Remainder => "cross-class remainder".to_string(),
        }
    }

    pub(crate) fn core(&self) -> std::result::Result<Core, String> {
        let groups = self.groups();
        let r = groups.len();
        if r < self.e && self.lambda <= 0.0 {
            return Err(format!(
                "ridge lambda is {} and Lambda has rank at most {r} < E = {}",
                self.lambda, self.e
            ));
        }
        let cross = self.cross_strength();
        let mut a = vec![0.0; r * r];
        for (g, gi) in groups.iter().enumerate() {
            for (h, hi) in groups.iter().enumerate() {
                a[g * r + h] = if g == h {
                    let c = match gi.kind {
                        GroupKind::Block(k) => self.block_strength(k),
                        GroupKind::Remainder => cross,
                    };
                    c * gi.size as f64 + self.lambda
                } else {
                    cross * ((gi.size * hi.size) as f64).sqrt()
                };
            }
        }
        let l = cholesky(&a, r).map_err(|(g, pivot)| {
            format!(
                "core pivot {pivot:e} at {} is not positive",
                self.describe(groups[g].kind)
            )
        })?;
        let mut logdet = 0.0;
        for g in 0..r {
            logdet += l[g * r + g].ln();
        }
        logdet *= 2.0;
        if r < self.e {
            logdet += (self.e - r) as f64 * self.lambda.ln();
        }
        Ok(Core {
            groups,
            inverse: cholesky_inverse(&l, r),
            logdet,
        })
    }

    pub fn is_positive_definite(&self) -> PdCheck {
        match self.core() {
            Ok(_) => PdCheck {
                positive_definite: true,
                diagnostic: None,
            },
            Err(msg) => PdCheck {
                positive_definite: false,
                diagnostic: Some(msg),
            },
        }
    }

    /// `log det Sigma` via the determinant lemma.
    pub fn logdet(&self) -> Result<f64> {
        self.core()
            .map(|c| c.logdet)
            .map_err(Error::NotPositiveDefinite)
    }

    /// `tr(H Sigma^-1)` via the Woodbury identity.
    pub fn trace_quad(&self, h: &SampleCov) -> Result<f64> {
        self.check_dim(h)?;
        let core = self.core().map_err(Error::NotPositiveDefinite)?;
        Ok(self.trace_with_core(&core, h))
    }

    /// `(log det Sigma, tr(H Sigma^-1))` sharing one core factorization.
    pub fn logdet_and_trace(&self, h: &SampleCov) -> Result<(f64, f64)> {
        self.check_dim(h)?;
        let core = self.core().map_err(Error::NotPositiveDefinite)?;
        Ok((core.logdet, self.trace_with_core(&core, h)))
    }

    pub(crate) fn check_dim(&self, h: &SampleCov) -> Result<()> {
        if h.dim() != self.e {
            return Err(Error::DimensionMismatch(format!(
                "H is {0}x{0} but Sigma is {1}x{1}",
                h.dim(),
                self.e
            )));
        }
        Ok(())
    }

    /// `G = Q^T H Q` over the core groups, row-major.
    fn projected(&self, core: &Core, h: &SampleCov) -> Vec<f64> {
        let r = core.rank();
        let e = self.e;
        let hs = h.matrix().as_slice();
        let rows = h.row_sums();
        let blocks: Vec<&[usize]> = core
            .groups
            .iter()
            .filter_map(|g| match g.kind {
                GroupKind::Block(k) => Some(self.block_members[k].as_slice()),
                GroupKind::Remainder => None,
            })
            .collect();
        let nb = blocks.len();
        // Raw sums u_g^T H u_h.
        let mut raw = vec![0.0; r * r];
        for g in 0..nb {
            for hh in g..nb {
                let mut s = 0.0;
                for &b in blocks[hh] {
                    let col = &hs[b * e..(b + 1) * e];
                    for &a in blocks[g] {
                        s += col[a];
                    }
                }
                raw[g * r + hh] = s;
                raw[hh * r + g] = s;
            }
        }
        if nb < r {
            let rest = nb;
            let mut rest_rest = h.total();
            for g in 0..nb {
                let row_total: f64 = blocks[g].iter().map(|&a| rows[a]).sum();
                let in_blocks: f64 = (0..nb).map(|hh| raw[g * r + hh]).sum();
                let x = row_total - in_blocks;
                raw[g * r + rest] = x;
                raw[rest * r + g] = x;
                rest_rest -= 2.0 * row_total - in_blocks;
            }
            raw[rest * r + rest] = rest_rest;
        }
        for g in 0..r {
            for hh in 0..r {
                let scale = ((core.groups[g].size * core.groups[hh].size) as f64).sqrt();
                raw[g * r + hh] /= scale;
            }
        }
        raw
    }

    pub(crate) fn trace_with_core(&self, core: &Core, h: &SampleCov) -> f64 {
        let r = core.rank();
        let g = self.projected(core, h);
        let in_span: f64 = (0..r).map(|i| g[i * r + i]).sum();
        let complement = if r < self.e {
            (h.trace() - in_span) / self.lambda
        } else {
            0.0
        };
        let core_part: f64 = core.inverse.iter().zip(&g).map(|(x, y)| x * y).sum();
        complement + core_part
    }

    /// `x^T Sigma^-1 x` from the row plus its cached squared norm and sum.
    pub(crate) fn quad_form_with_core(&self, core: &Core, row: &[f64], norm2: f64, total: f64) -> f64 {
        let r = core.rank();
        let mut y = vec![0.0; r];
        let mut covered = 0.0;
        for (g, grp) in core.groups.iter().enumerate() {
            if let GroupKind::Block(k) = grp.kind {
                let s: f64 = self.block_members[k].iter().map(|&a| row[a]).sum();
                covered += s;
                y[g] = s;
            }
        }
        for (g, grp) in core.groups.iter().enumerate() {
            if grp.kind == GroupKind::Remainder {
                y[g] = total - covered;
            }
            y[g] /= (grp.size as f64).sqrt();
        }
        let in_span: f64 = y.iter().map(|x| x * x).sum();
        let complement = if r < self.e {
            (norm2 - in_span) / self.lambda
        } else {
            0.0
        };
        let mut core_part = 0.0;
        for i in 0..r {
            let acc: f64 = core.inverse[i * r..(i + 1) * r].iter().zip(&y).map(|(a, b)| a * b).sum();
            core_part += y[i] * acc;
        }
        complement + core_part
    }

    /// Mahalanobis form `x^T Sigma^-1 x` for one row.
    pub fn quad_form(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.e {
            return Err(Error::DimensionMismatch(format!(
                "row has {} entries, E = {}",
                row.len(),
                self.e
            )));
        }
        let core = self.core().map_err(Error::NotPositiveDefinite)?;
        let norm2 = row.iter().map(|x| x * x).sum();
        let total = row.iter().sum();
        Ok(self.quad_form_with_core(&core, row, norm2, total))
    }
}

/// Row-major Cholesky; on failure returns the offending pivot.
fn cholesky(a: &[f64], n: usize) -> std::result::Result<Vec<f64>, (usize, f64)> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for p in 0..j {
            d -= l[j * n + p] * l[j * n + p];
        }
        let scale = a[j * n + j].abs();
        if !d.is_finite() || d <= 0.0 || d <= 1e-13 * scale {
            return Err((j, d));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    // Solve L L^T X = I column by column.
    let mut inv = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for p in 0..i {
                s -= l[i * n + p] * y[p];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for p in i + 1..n {
                s -= l[p * n + i] * inv[p * n + c];
            }
            inv[i * n + c] = s / l[i * n + i];
        }
    }
    inv
}
