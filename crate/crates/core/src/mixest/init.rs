use nalgebra::DMatrix;

use crate::rng::RngStream;

/// Weighted k-means++ seeding: the first center is drawn with probability
/// proportional to `w_i`, later ones proportional to `w_i · D_i²`. When all
/// remaining mass is zero, further centers repeat the first one.
pub fn weighted_kmeans_pp(
    points: &DMatrix<f64>,
    weights: &[f64],
    k: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let n = points.nrows();
    let draw = |mass: &[f64], rng: &mut RngStream| -> Option<usize> {
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let u = rng.uniform() * total;
        let mut acc = 0.0;
        for (i, m) in mass.iter().enumerate() {
            acc += m;
            if u < acc && *m > 0.0 {
                return Some(i);
            }
        }
        mass.iter().rposition(|m| *m > 0.0)
    };
    let first = draw(weights, rng).unwrap_or(0);
    let mut centers = vec![first];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (points.row(i) - points.row(first)).norm_squared())
        .collect();
    while centers.len() < k {
        let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = draw(&mass, rng).unwrap_or(first);
        centers.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            let v = (points.row(i) - points.row(next)).norm_squared();
            if v < *d {
                *d = v;
            }
        }
    }
    centers
}

/// One-hot responsibilities to the nearest center, ties to the lowest index.
pub(crate) fn hard_assign(points: &DMatrix<f64>, centers: &[usize]) -> DMatrix<f64> {
    let n = points.nrows();
    let mut r = DMatrix::zeros(n, centers.len());
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (l, &c) in centers.iter().enumerate() {
            let d = (points.row(i) - points.row(c)).norm_squared();
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        r[(i, best)] = 1.0;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_points_never_seeded() {
        let pts = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 5.0, 9.0]);
        let w = [1.0, 0.0, 1.0, 0.0];
        for seed in 0..50 {
            let mut rng = RngStream::new(seed, 0);
            let c = weighted_kmeans_pp(&pts, &w, 2, &mut rng);
            assert!(c.iter().all(|&i| i == 0 || i == 2));
            assert_ne!(c[0], c[1]);
        }
    }

    #[test]
    fn single_point_repeats() {
        let pts = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(weighted_kmeans_pp(&pts, &[1.0], 3, &mut rng), vec![0, 0, 0]);
    }
}
