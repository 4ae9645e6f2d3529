//! Two-component PCA of feature vectors, for scatter plots of learned features.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// One `(pc1, pc2)` pair per input row.
    pub points: Vec<[f64; 2]>,
    /// Variance captured by each component, descending.
    pub explained: [f64; 2],
    /// Unit principal directions.
    pub components: [Vec<f64>; 2],
}

/// Mean-centers `rows`, eigen-decomposes their sample covariance, and
/// projects onto the two leading eigenvectors. Each direction's sign is fixed
/// so that its largest-magnitude entry is positive.
pub fn project_2d(rows: &[Vec<f64>]) -> Result<Projection> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("PCA rows must be non-empty and equally long"));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let direction = |k: usize| -> Vec<f64> {
        let Some(&col) = order.get(k) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        v
    };
    let components = [direction(0), direction(1)];
    let variance = |k: usize| order.get(k).map_or(0.0, |&c| eig.eigenvalues[c].max(0.0));
    let points = (0..n)
        .map(|i| {
            let row = x.row(i);
            let dot = |v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [dot(&components[0]), dot(&components[1])]
        })
        .collect();
    Ok(Projection {
        points,
        explained: [variance(0), variance(1)],
        components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_axis_aligned_features() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 - 9.5;
                vec![3.0 * t, if i % 4 == 0 || i % 4 == 3 { 1.0 } else { -1.0 }]
            })
            .collect();
        let p = project_2d(&rows).unwrap();
        assert!(p.explained[0] >= p.explained[1]);
        for (row, pt) in rows.iter().zip(&p.points) {
            assert!((pt[0].abs() - row[0].abs()).abs() < 1e-9);
            assert!((pt[1].abs() - row[1].abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_one_has_no_second_component() {
        let dir = [0.3, -1.2, 0.5, 2.0];
        let rows: Vec<Vec<f64>> = (0..15).map(|i| dir.iter().map(|d| d * (i as f64 * 0.7 - 2.0)).collect()).collect();
        let p = project_2d(&rows).unwrap();
        assert!(p.explained[1] < 1e-12 * p.explained[0]);
        assert!(p.points.iter().all(|pt| pt[1].abs() < 1e-9));
    }

    fn residual(rows: &[Vec<f64>], basis: &[Vec<f64>; 2]) -> f64 {
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
        rows.iter()
            .map(|r| {
                let c: Vec<f64> = r.iter().zip(&mean).map(|(a, m)| a - m).collect();
                let mut rec = vec![0.0; d];
                for b in basis {
                    let coef: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
                    rec.iter_mut().zip(b).for_each(|(e, y)| *e += coef * y);
                }
                c.iter().zip(&rec).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn top_two_minimize_reconstruction_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let p = project_2d(&rows).unwrap();
        let best = residual(&rows, &p.components);
        for _ in 0..2000 {
            // random orthonormal pair via Gram-Schmidt
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let a: Vec<f64> = a.iter().map(|v| v / na).collect();
            let proj: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let b: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - proj * x).collect();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let b: Vec<f64> = b.iter().map(|v| v / nb).collect();
            assert!(residual(&rows, &[a, b]) >= best - 1e-9);
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(project_2d(&[vec![1.0]]).is_err());
        assert!(project_2d(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
