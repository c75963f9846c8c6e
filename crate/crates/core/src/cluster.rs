//! Density-peaks clustering and a classical MDS embedding.
//!
//! Items are compared by `l2` distance. The local density of an item is a
//! Gaussian-kernel sum over the others, its separation is the distance to the
//! nearest denser item, and centers are items where both are large. Remaining
//! items follow their nearest denser neighbour into its cluster.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

/// Read access to a symmetric distance table.
pub trait Metric {
    fn n(&self) -> usize;
    fn get(&self, i: usize, j: usize) -> f64;
}

/// Dense symmetric `n x n` distance matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Wraps a row-major table after checking shape, symmetry, diagonal and sign.
    pub fn from_row_major(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                got: d.len(),
            });
        }
        check_finite(&d)?;
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Degenerate(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if d[i * n + j] != d[j * n + i] {
                    return Err(Error::Degenerate(format!("asymmetric at ({i}, {j})")));
                }
                if d[i * n + j] < 0.0 {
                    return Err(Error::Degenerate(format!("negative distance at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Distances `d_ij` for `i < j`.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n.saturating_sub(1)) / 2);
        for i in 0..self.n {
            out.extend_from_slice(&self.row(i)[i + 1..]);
        }
        out
    }
}

impl Metric for DistanceMatrix {
    fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// A distance matrix extended by one extra item placed at index `n`.
#[derive(Debug, Clone, Copy)]
pub struct Augmented<'a> {
    pub base: &'a DistanceMatrix,
    /// Distances from the extra item to each base item.
    pub extra: &'a [f64],
}

impl Metric for Augmented<'_> {
    fn n(&self) -> usize {
        self.base.n + 1
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        let n = self.base.n;
        match (i == n, j == n) {
            (true, true) => 0.0,
            (true, false) => self.extra[j],
            (false, true) => self.extra[i],
            (false, false) => self.base.get(i, j),
        }
    }
}

/// Euclidean distance.
pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn pairwise_distances<V: AsRef<[f64]>>(vectors: &[V]) -> Result<DistanceMatrix> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::TooShort { len: n, min: 2 });
    }
    let len = vectors[0].as_ref().len();
    for v in vectors {
        let v = v.as_ref();
        if v.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: v.len(),
            });
        }
        check_finite(v)?;
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let x = l2(vectors[i].as_ref(), vectors[j].as_ref());
            d[i * n + j] = x;
            d[j * n + i] = x;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// Nearest-rank percentile of the pairwise distances, `pct` in `(0, 100]`.
/// Falls back to the smallest positive distance when the percentile is zero.
pub fn percentile_cutoff(d: &DistanceMatrix, pct: f64) -> Result<f64> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::InvalidParameter {
            name: "dc_percentile",
            reason: format!("must lie in (0, 100], got {pct}"),
        });
    }
    let mut all = d.upper_triangle();
    if all.is_empty() {
        return Err(Error::TooShort { len: d.n, min: 2 });
    }
    all.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * all.len() as f64).ceil().max(1.0) as usize;
    let dc = all[rank - 1];
    if dc > 0.0 {
        return Ok(dc);
    }
    all.into_iter()
        .find(|&x| x > 0.0)
        .ok_or_else(|| Error::Degenerate("all items coincide".into()))
}

fn check_dc(dc: f64) -> Result<()> {
    if dc > 0.0 && dc.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "d_c",
            reason: format!("must be finite and > 0, got {dc}"),
        })
    }
}

/// `rho_i = sum_{j != i} exp(-(d_ij / d_c)^2)`.
pub fn local_density<M: Metric + ?Sized>(d: &M, dc: f64) -> Result<Vec<f64>> {
    check_dc(dc)?;
    let n = d.n();
    let mut rho = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = d.get(i, j) / dc;
            let w = (-r * r).exp();
            rho[i] += w;
            rho[j] += w;
        }
    }
    Ok(rho)
}

/// Items ordered from densest to sparsest; equal densities keep index order.
pub fn density_order(rho: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rho.len()).collect();
    order.sort_by(|&a, &b| rho[b].total_cmp(&rho[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub delta: Vec<f64>,
    /// Nearest denser item; `None` only for the densest.
    pub neighbor: Vec<Option<usize>>,
}

/// Distance to the nearest denser item. An item is denser than another when its
/// density is larger, or equal with a lower index. The densest item gets its
/// largest distance. Equidistant neighbours resolve to the denser one.
pub fn separation<M: Metric + ?Sized>(d: &M, rho: &[f64]) -> Result<Separation> {
    let n = d.n();
    if rho.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: rho.len(),
        });
    }
    let order = density_order(rho);
    let mut delta = vec![0.0; n];
    let mut neighbor = vec![None; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 {
            delta[i] = (0..n).map(|j| d.get(i, j)).fold(0.0, f64::max);
            continue;
        }
        let mut best = f64::INFINITY;
        let mut arg = order[0];
        for &j in &order[..rank] {
            let x = d.get(i, j);
            if x < best {
                best = x;
                arg = j;
            }
        }
        delta[i] = best;
        neighbor[i] = Some(arg);
    }
    Ok(Separation { delta, neighbor })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFlag {
    /// Every `gamma` is equal; a single center was chosen.
    FlatDecisionGraph,
    /// The densest item was not among the top `gamma` and replaced the last center.
    DensestPromoted,
    /// The distance table is not Euclidean; the embedding uses the positive spectrum only.
    NonEuclidean,
}

/// Largest number of centers considered by the automatic choice.
pub const MAX_AUTO_CENTERS: usize = 10;

/// Item indices by decreasing `gamma`, ties by index.
pub fn gamma_order(gamma: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gamma.len()).collect();
    order.sort_by(|&a, &b| gamma[b].total_cmp(&gamma[a]).then(a.cmp(&b)));
    order
}

/// Number of centers at the largest relative drop of the sorted `gamma`.
/// `None` when every candidate gap is zero.
pub fn auto_k(sorted_gamma: &[f64]) -> Option<usize> {
    let n = sorted_gamma.len();
    let mut best: Option<(usize, f64)> = None;
    for p in 1..=(n.saturating_sub(1)).min(MAX_AUTO_CENTERS) {
        let (hi, lo) = (sorted_gamma[p - 1], sorted_gamma[p]);
        let gap = hi - lo;
        if gap <= 0.0 {
            continue;
        }
        let ratio = if lo > 0.0 { gap / lo } else { f64::INFINITY };
        if best.is_none_or(|(_, r)| ratio > r) {
            best = Some((p, ratio));
        }
    }
    best.map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSelection {
    /// Center indices; cluster `c` (1-based) is centered at `centers[c - 1]`.
    pub centers: Vec<usize>,
    pub flags: Vec<ClusterFlag>,
}

/// Picks centers by `gamma = rho * delta`, either the top `k` or at the largest
/// relative gap. The densest item is always a center.
pub fn select_centers(rho: &[f64], delta: &[f64], k: Option<usize>) -> Result<CenterSelection> {
    let n = rho.len();
    if delta.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: delta.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("no items to cluster"));
    }
    let gamma: Vec<f64> = rho.iter().zip(delta).map(|(r, d)| r * d).collect();
    let order = gamma_order(&gamma);
    let mut flags = Vec::new();
    let k = match k {
        Some(k) if k == 0 || k > n => {
            return Err(Error::InvalidParameter {
                name: "k",
                reason: format!("must lie in 1..={n}, got {k}"),
            })
        }
        Some(k) => k,
        None => {
            let sorted: Vec<f64> = order.iter().map(|&i| gamma[i]).collect();
            auto_k(&sorted).unwrap_or_else(|| {
                flags.push(ClusterFlag::FlatDecisionGraph);
                1
            })
        }
    };
    let mut centers = order[..k].to_vec();
    let densest = density_order(rho)[0];
    if !centers.contains(&densest) {
        centers[k - 1] = densest;
        flags.push(ClusterFlag::DensestPromoted);
    }
    Ok(CenterSelection { centers, flags })
}

/// 1-based cluster ids: centers label their own cluster, every other item takes
/// the label of its nearest denser neighbour, scanning from the densest down.
pub fn assign(rho: &[f64], sep: &Separation, centers: &[usize]) -> Result<Vec<usize>> {
    let n = rho.len();
    if centers.is_empty() {
        return Err(Error::Empty("no centers"));
    }
    let mut label = vec![0usize; n];
    for (c, &i) in centers.iter().enumerate() {
        if i >= n {
            return Err(Error::InvalidParameter {
                name: "centers",
                reason: format!("index {i} out of range"),
            });
        }
        label[i] = c + 1;
    }
    for i in density_order(rho) {
        if label[i] != 0 {
            continue;
        }
        match sep.neighbor[i] {
            Some(j) => label[i] = label[j],
            None => {
                return Err(Error::Degenerate(
                    "densest item is not a center".into(),
                ))
            }
        }
    }
    Ok(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaloSplit {
    pub is_core: Vec<bool>,
    /// Average density of each cluster's border region, indexed by `id - 1`.
    pub border_density: Vec<f64>,
}

/// Border region of a cluster: members with a member of another cluster within
/// `d_c`. Members at or above the region's average density are core.
pub fn halo_split<M: Metric + ?Sized>(
    d: &M,
    rho: &[f64],
    assignment: &[usize],
    dc: f64,
) -> Result<HaloSplit> {
    check_dc(dc)?;
    let n = d.n();
    if rho.len() != n || assignment.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: rho.len().min(assignment.len()),
        });
    }
    let k = assignment.iter().copied().max().unwrap_or(0);
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    if k > 1 {
        for i in 0..n {
            let on_border = (0..n).any(|j| assignment[j] != assignment[i] && d.get(i, j) <= dc);
            if on_border {
                sum[assignment[i] - 1] += rho[i];
                count[assignment[i] - 1] += 1;
            }
        }
    }
    let border_density: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let is_core = (0..n)
        .map(|i| rho[i] >= border_density[assignment[i] - 1])
        .collect();
    Ok(HaloSplit {
        is_core,
        border_density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<[f64; 2]>,
    /// The two leading eigenvalues of the double-centred Gram matrix.
    pub eigenvalues: [f64; 2],
    pub flags: Vec<ClusterFlag>,
}

/// Classical MDS into the plane. Axes follow decreasing eigenvalue; each axis is
/// signed so its first clearly nonzero coordinate is positive.
pub fn embed_2d<M: Metric + ?Sized>(d: &M) -> Result<Embedding> {
    let n = d.n();
    if n < 3 {
        return Err(Error::TooShort { len: n, min: 3 });
    }
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j).powi(2));
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));

    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut flags = Vec::new();
    if eig.eigenvalues.iter().any(|&v| v < -1e-9 * scale.max(1.0)) {
        flags.push(ClusterFlag::NonEuclidean);
    }
    let mut coords = vec![[0.0; 2]; n];
    let mut eigenvalues = [0.0; 2];
    for (axis, &e) in idx.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[e];
        eigenvalues[axis] = lambda;
        let s = lambda.max(0.0).sqrt();
        let col: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, e)] * s).collect();
        let tol = 1e-10 * col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let sign = match col.iter().find(|v| v.abs() > tol) {
            Some(v) if *v < 0.0 => -1.0,
            _ => 1.0,
        };
        for (c, v) in coords.iter_mut().zip(col) {
            c[axis] = sign * v;
        }
    }
    Ok(Embedding {
        coords,
        eigenvalues,
        flags,
    })
}

/// How the cutoff distance is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Percentile(f64),
    Fixed(f64),
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff::Percentile(2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub cutoff: Cutoff,
    pub k: Option<usize>,
    pub embed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub dc: f64,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub centers: Vec<usize>,
    pub assignment: Vec<usize>,
    pub is_core: Vec<bool>,
    pub border_density: Vec<f64>,
    pub embedding: Option<Vec<[f64; 2]>>,
    pub flags: Vec<ClusterFlag>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

/// Runs the whole pipeline on a distance matrix.
pub fn cluster(d: &DistanceMatrix, cfg: &ClusterConfig) -> Result<ClusterResult> {
    let dc = match cfg.cutoff {
        Cutoff::Percentile(p) => percentile_cutoff(d, p)?,
        Cutoff::Fixed(x) => {
            check_dc(x)?;
            x
        }
    };
    let rho = local_density(d, dc)?;
    let sep = separation(d, &rho)?;
    let sel = select_centers(&rho, &sep.delta, cfg.k)?;
    let assignment = assign(&rho, &sep, &sel.centers)?;
    let halo = halo_split(d, &rho, &assignment, dc)?;
    let mut flags = sel.flags;
    let embedding = if cfg.embed {
        let e = embed_2d(d)?;
        flags.extend(e.flags);
        Some(e.coords)
    } else {
        None
    };
    let gamma = rho.iter().zip(&sep.delta).map(|(r, d)| r * d).collect();
    Ok(ClusterResult {
        dc,
        rho,
        delta: sep.delta,
        gamma,
        centers: sel.centers,
        assignment,
        is_core: halo.is_core,
        border_density: halo.border_density,
        embedding,
        flags,
    })
}
