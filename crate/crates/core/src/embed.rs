//! Laplacian eigenmaps over joint `(s, ξ)` points, with Nyström extension
//! for points outside the fitted graph.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub k_nn: usize,
    /// Heat-kernel denominator; `None` uses the median squared pairwise distance.
    pub heat_bandwidth: Option<f64>,
    pub out_dim: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            k_nn: 10,
            heat_bandwidth: None,
            out_dim: 2,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_nn == 0 {
            return Err(Error::invalid("k_nn must be at least 1"));
        }
        if self.out_dim == 0 {
            return Err(Error::invalid("embedding out_dim must be at least 1"));
        }
        if let Some(b) = self.heat_bandwidth {
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::invalid(format!(
                    "heat bandwidth must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// One row per embedded point, in the order of `index`.
    pub coords: DMatrix<f64>,
    /// Input row of each embedded point (the largest connected component).
    pub index: Vec<usize>,
    /// Generalized eigenvalues of the returned coordinates.
    pub eigenvalues: Vec<f64>,
    pub bandwidth: f64,
    k_nn: usize,
    train: DMatrix<f64>,
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let d = a[(i, c)] - b[(j, c)];
        s += d * d;
    }
    s
}

fn pairwise_sq(points: &DMatrix<f64>) -> DMatrix<f64> {
    let n = points.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(points, i, points, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn median_sq(d2: &DMatrix<f64>) -> f64 {
    let n = d2.nrows();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)])
        .collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// `k` nearest rows of `d2` row `i`, excluding `i`; ties go to lower index.
fn nearest(d2_row: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = d2_row.collect();
    cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    cand.into_iter().take(k).map(|(j, _)| j).collect()
}

/// Symmetrized k-NN heat-kernel weight matrix.
pub fn knn_heat_weights(points: &DMatrix<f64>, k_nn: usize, bandwidth: f64) -> DMatrix<f64> {
    let d2 = pairwise_sq(points);
    knn_from_sq(&d2, k_nn, bandwidth)
}

fn knn_from_sq(d2: &DMatrix<f64>, k_nn: usize, bandwidth: f64) -> DMatrix<f64> {
    let n = d2.nrows();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in nearest((0..n).filter(|&j| j != i).map(|j| (j, d2[(i, j)])), k_nn) {
            let v = (-d2[(i, j)] / bandwidth).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Components of the graph with nonzero-weight edges, largest first
/// (ties broken by smallest member).
fn components(w: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = w.nrows();
    let mut label = vec![usize::MAX; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if w[(i, j)] > 0.0 && label[j] == usize::MAX {
                    label[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

/// Solves `L v = λ D v` for a connected weight matrix. Eigenvalues ascend;
/// eigenvector columns are D-orthonormal with the largest-magnitude entry
/// of each made positive.
pub fn generalized_spectrum(w: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = w.nrows();
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    if deg.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::numerical(
            "laplacian eigenmaps",
            "isolated vertex in graph",
        ));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    // I − D^{-1/2} L D^{-1/2} = D^{-1/2} W D^{-1/2}
    let m = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or_else(|| {
        Error::numerical(
            "laplacian eigenmaps",
            "symmetric eigensolver did not converge",
        )
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let vals: Vec<f64> = order.iter().map(|&k| 1.0 - eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        let mut v = DVector::from_fn(n, |i, _| eig.eigenvectors[(i, k)] * inv_sqrt[i]);
        let mut arg = 0;
        for i in 1..n {
            if v[i].abs() > v[arg].abs() + 1e-12 {
                arg = i;
            }
        }
        if v[arg] < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

pub fn laplacian_eigenmaps(points: &DMatrix<f64>, cfg: &EmbeddingConfig) -> Result<Embedding> {
    cfg.validate()?;
    let n = points.nrows();
    if n <= cfg.out_dim + 1 {
        return Err(Error::invalid(format!(
            "embedding needs more than out_dim + 1 = {} points, got {n}",
            cfg.out_dim + 1
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite point in embedding input"));
    }
    let d2 = pairwise_sq(points);
    let bandwidth = match cfg.heat_bandwidth {
        Some(b) => b,
        None => median_sq(&d2).max(1e-12),
    };
    let w = knn_from_sq(&d2, cfg.k_nn, bandwidth);
    let comps = components(&w);
    let index = comps[0].clone();
    if comps.len() > 1 {
        log::warn!(
            "k-NN graph has {} components; embedding the largest ({} of {n} points)",
            comps.len(),
            index.len()
        );
    }
    if index.len() <= cfg.out_dim + 1 {
        return Err(Error::numerical(
            "laplacian eigenmaps",
            format!("largest component has only {} points", index.len()),
        ));
    }
    let wc = w.select_rows(&index).select_columns(&index);
    let (vals, vecs) = generalized_spectrum(&wc)?;
    let coords = vecs.columns(1, cfg.out_dim).into_owned();
    Ok(Embedding {
        coords,
        eigenvalues: vals[1..=cfg.out_dim].to_vec(),
        index: index.clone(),
        bandwidth,
        k_nn: cfg.k_nn,
        train: points.select_rows(&index),
    })
}

impl Embedding {
    pub fn out_dim(&self) -> usize {
        self.coords.ncols()
    }

    /// Nyström extension: `v(x) = Σ_j w_j v_j / ((1 − λ) Σ_j w_j)` over the
    /// `k_nn` nearest embedded points.
    pub fn extend(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.train.ncols() {
            return Err(Error::invalid("out-of-sample point dimension mismatch"));
        }
        let q = DMatrix::from_row_slice(1, x.len(), x);
        let nbrs = nearest(
            (0..self.train.nrows()).map(|j| (j, sq_dist(&q, 0, &self.train, j))),
            self.k_nn,
        );
        // Shift by the nearest distance so a far point still gets finite weights.
        let dmin = sq_dist(&q, 0, &self.train, nbrs[0]);
        let ws: Vec<f64> = nbrs
            .iter()
            .map(|&j| (-(sq_dist(&q, 0, &self.train, j) - dmin) / self.bandwidth).exp())
            .collect();
        let z: f64 = ws.iter().sum();
        Ok((0..self.out_dim())
            .map(|c| {
                let s: f64 = nbrs
                    .iter()
                    .zip(&ws)
                    .map(|(&j, w)| w * self.coords[(j, c)])
                    .sum();
                s / (z * (1.0 - self.eigenvalues[c]).max(1e-12))
            })
            .collect())
    }

    /// Coordinates for every input row: graph rows directly, the rest by
    /// Nyström extension.
    pub fn embed_all(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.nrows(), self.out_dim());
        let mut done = vec![false; points.nrows()];
        for (r, &i) in self.index.iter().enumerate() {
            if i < points.nrows() {
                out.set_row(i, &self.coords.row(r));
                done[i] = true;
            }
        }
        for i in (0..points.nrows()).filter(|&i| !done[i]) {
            let row: Vec<f64> = points.row(i).iter().copied().collect();
            let v = self.extend(&row)?;
            for c in 0..v.len() {
                out[(i, c)] = v[c];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::f64::consts::PI;

    fn ring(n: usize, phase: f64) -> (DMatrix<f64>, Vec<f64>) {
        let theta: Vec<f64> = (0..n)
            .map(|i| phase + 2.0 * PI * i as f64 / n as f64)
            .collect();
        let pts = DMatrix::from_fn(n, 2, |i, c| {
            if c == 0 {
                theta[i].cos()
            } else {
                theta[i].sin()
            }
        });
        (pts, theta)
    }

    fn random_points(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = RngStream::new(seed, 0);
        DMatrix::from_fn(n, d, |_, _| rng.normal())
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    /// Procrustes-aligns 2-column `v` to targets and returns per-column correlations.
    fn aligned_corr(v: &DMatrix<f64>, targets: &DMatrix<f64>) -> Vec<f64> {
        let center = |m: &DMatrix<f64>| {
            let mut c = m.clone();
            for j in 0..m.ncols() {
                let mu = m.column(j).mean();
                let sd = m.column(j).map(|x| (x - mu) * (x - mu)).mean().sqrt();
                for i in 0..m.nrows() {
                    c[(i, j)] = (m[(i, j)] - mu) / sd;
                }
            }
            c
        };
        let a = center(v);
        let b = center(targets);
        let svd = (a.transpose() * &b).svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        let al = a * r;
        (0..2)
            .map(|c| corr(al.column(c).as_slice(), b.column(c).as_slice()))
            .collect()
    }

    #[test]
    fn weights_symmetric_exactly() {
        let p = random_points(40, 3, 1);
        let w = knn_heat_weights(&p, 5, 2.0);
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(w[(i, j)], w[(j, i)]);
            }
            assert_eq!(w[(i, i)], 0.0);
        }
    }

    #[test]
    fn null_space_is_constant() {
        let p = random_points(50, 2, 2);
        let w = knn_heat_weights(&p, 8, 1.0);
        let (vals, vecs) = generalized_spectrum(&w).unwrap();
        assert!(vals[0].abs() < 1e-10);
        let c = vecs.column(0);
        for i in 1..50 {
            assert!((c[i] - c[0]).abs() < 1e-8);
        }
        assert!(vals.windows(2).all(|p| p[0] <= p[1] + 1e-12));
    }

    #[test]
    fn generalized_equation_holds() {
        let p = random_points(30, 2, 3);
        let w = knn_heat_weights(&p, 6, 1.0);
        let (vals, vecs) = generalized_spectrum(&w).unwrap();
        let d = DMatrix::from_diagonal(&DVector::from_fn(30, |i, _| w.row(i).sum()));
        let l = &d - &w;
        for k in 0..5 {
            let v = vecs.column(k);
            let res = &l * v - vals[k] * (&d * v);
            assert!(res.amax() < 1e-9);
        }
    }

    #[test]
    fn ring_recovers_circle_coordinates() {
        let (p, theta) = ring(64, 0.0);
        let cfg = EmbeddingConfig {
            k_nn: 4,
            heat_bandwidth: None,
            out_dim: 2,
        };
        let e = laplacian_eigenmaps(&p, &cfg).unwrap();
        assert_eq!(e.index.len(), 64);
        let t = DMatrix::from_fn(64, 2, |i, c| {
            if c == 0 {
                theta[i].cos()
            } else {
                theta[i].sin()
            }
        });
        for c in aligned_corr(&e.coords, &t) {
            assert!(c.abs() >= 0.99, "correlation {c}");
        }
    }

    #[test]
    fn d_orthonormal_coordinates() {
        let p = random_points(80, 4, 4);
        let cfg = EmbeddingConfig {
            k_nn: 10,
            heat_bandwidth: None,
            out_dim: 3,
        };
        let e = laplacian_eigenmaps(&p, &cfg).unwrap();
        let w = knn_heat_weights(&p, 10, e.bandwidth);
        let deg: Vec<f64> = (0..80).map(|i| w.row(i).sum()).collect();
        for a in 0..3 {
            for b in 0..3 {
                let s: f64 = (0..80)
                    .map(|i| e.coords[(i, a)] * deg[i] * e.coords[(i, b)])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((s - target).abs() < 1e-8, "({a},{b}) -> {s}");
            }
        }
    }

    #[test]
    fn relabeling_permutes_embedding() {
        let p = random_points(40, 3, 5);
        let cfg = EmbeddingConfig::default();
        let e = laplacian_eigenmaps(&p, &cfg).unwrap();
        let perm: Vec<usize> = (0..40).map(|i| (i * 7 + 3) % 40).collect();
        let q = p.select_rows(&perm);
        let eq = laplacian_eigenmaps(&q, &cfg).unwrap();
        for c in 0..2 {
            let sign = if (0..40)
                .map(|r| eq.coords[(r, c)] * e.coords[(perm[r], c)])
                .sum::<f64>()
                < 0.0
            {
                -1.0
            } else {
                1.0
            };
            for r in 0..40 {
                assert!((sign * eq.coords[(r, c)] - e.coords[(perm[r], c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn disconnected_graph_uses_largest_component() {
        let mut p = random_points(30, 2, 6);
        let far = DMatrix::from_fn(5, 2, |i, c| 1000.0 + (i + c) as f64 * 0.01);
        p = DMatrix::from_fn(
            35,
            2,
            |i, c| if i < 30 { p[(i, c)] } else { far[(i - 30, c)] },
        );
        let cfg = EmbeddingConfig {
            k_nn: 4,
            heat_bandwidth: Some(2.0),
            out_dim: 2,
        };
        let e = laplacian_eigenmaps(&p, &cfg).unwrap();
        assert_eq!(e.index, (0..30).collect::<Vec<_>>());
        let all = e.embed_all(&p).unwrap();
        assert_eq!(all.nrows(), 35);
        assert!(all.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nystrom_places_new_ring_points_by_angle() {
        let (p, _) = ring(64, 0.0);
        let cfg = EmbeddingConfig {
            k_nn: 4,
            heat_bandwidth: None,
            out_dim: 2,
        };
        let e = laplacian_eigenmaps(&p, &cfg).unwrap();
        let angle = |v: &[f64]| v[1].atan2(v[0]);
        // The embedded ring is a rotated (possibly reflected) circle, so a new
        // point halfway between two neighbors lands halfway between them.
        for i in [3usize, 17, 40] {
            let th = 2.0 * PI * (i as f64 + 0.5) / 64.0;
            let v = e.extend(&[th.cos(), th.sin()]).unwrap();
            let lo = angle(e.coords.row(i).transpose().as_slice());
            let hi = angle(e.coords.row((i + 1) % 64).transpose().as_slice());
            let wrap = |x: f64| (x + PI).rem_euclid(2.0 * PI) - PI;
            let mid = lo + 0.5 * wrap(hi - lo);
            assert!(wrap(angle(&v) - mid).abs() < 0.05, "point {i}");
        }
    }

    #[test]
    fn rejects_too_few_points() {
        let p = random_points(3, 2, 7);
        assert!(laplacian_eigenmaps(&p, &EmbeddingConfig::default()).is_err());
        let bad = EmbeddingConfig {
            k_nn: 0,
            ..EmbeddingConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
