//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

/// A scalar objective over a flat parameter vector.
pub trait GradCheckable {
    fn num_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, value: f64);
    fn loss(&self) -> f64;
    fn gradient(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub eps: f64,
    pub coords: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient with `(f(θ+ε) − f(θ−ε)) / 2ε` on
/// `n_coords` distinct coordinates drawn from `rng` (all of them if fewer
/// exist). Parameters are restored before returning.
pub fn finite_difference_check<M, R>(
    model: &mut M,
    eps: f64,
    n_coords: usize,
    rng: &mut R,
) -> FdReport
where
    M: GradCheckable + ?Sized,
    R: Rng + ?Sized,
{
    assert!(eps > 0.0, "eps must be positive");
    let n = model.num_params();
    let grad = model.gradient();
    assert_eq!(grad.len(), n, "gradient length must match parameter count");
    let mut coords: Vec<usize> = if n_coords >= n {
        (0..n).collect()
    } else {
        sample(rng, n, n_coords).into_vec()
    };
    coords.sort_unstable();
    let mut worst = (0.0f64, 0usize);
    let mut total = 0.0;
    for &i in &coords {
        let orig = model.param(i);
        model.set_param(i, orig + eps);
        let up = model.loss();
        model.set_param(i, orig - eps);
        let down = model.loss();
        model.set_param(i, orig);
        let err = relative_error(grad[i], (up - down) / (2.0 * eps));
        total += err;
        if err > worst.0 {
            worst = (err, i);
        }
    }
    FdReport {
        eps,
        coords: coords.len(),
        max_rel_error: worst.0,
        mean_rel_error: if coords.is_empty() {
            0.0
        } else {
            total / coords.len() as f64
        },
        worst_index: worst.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `½ xᵀAx + bᵀx` with symmetric `A`.
    struct Quadratic {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        x: Vec<f64>,
    }

    impl GradCheckable for Quadratic {
        fn num_params(&self) -> usize {
            self.x.len()
        }
        fn param(&self, i: usize) -> f64 {
            self.x[i]
        }
        fn set_param(&mut self, i: usize, value: f64) {
            self.x[i] = value;
        }
        fn loss(&self) -> f64 {
            let n = self.x.len();
            let mut s = 0.0;
            for i in 0..n {
                s += self.b[i] * self.x[i];
                for j in 0..n {
                    s += 0.5 * self.x[i] * self.a[i][j] * self.x[j];
                }
            }
            s
        }
        fn gradient(&self) -> Vec<f64> {
            (0..self.x.len())
                .map(|i| {
                    self.b[i]
                        + self.a[i]
                            .iter()
                            .zip(&self.x)
                            .map(|(a, x)| a * x)
                            .sum::<f64>()
                })
                .collect()
        }
    }

    /// `Σ exp(cᵢ xᵢ)`: every derivative order is nonzero, so the central
    /// difference has a visible `ε²` truncation term.
    struct Exponential {
        c: Vec<f64>,
        x: Vec<f64>,
    }

    impl GradCheckable for Exponential {
        fn num_params(&self) -> usize {
            self.x.len()
        }
        fn param(&self, i: usize) -> f64 {
            self.x[i]
        }
        fn set_param(&mut self, i: usize, value: f64) {
            self.x[i] = value;
        }
        fn loss(&self) -> f64 {
            self.c.iter().zip(&self.x).map(|(c, x)| (c * x).exp()).sum()
        }
        fn gradient(&self) -> Vec<f64> {
            self.c
                .iter()
                .zip(&self.x)
                .map(|(c, x)| c * (c * x).exp())
                .collect()
        }
    }

    fn quadratic(rng: &mut ChaCha8Rng, n: usize) -> Quadratic {
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
        Quadratic {
            a,
            b: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            x: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = quadratic(&mut rng, 12);
        let before = q.x.clone();
        let report = finite_difference_check(&mut q, 1e-3, 100, &mut rng);
        assert_eq!(report.coords, 12);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(q.x, before);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Broken(Quadratic);
        impl GradCheckable for Broken {
            fn num_params(&self) -> usize {
                self.0.num_params()
            }
            fn param(&self, i: usize) -> f64 {
                self.0.param(i)
            }
            fn set_param(&mut self, i: usize, v: f64) {
                self.0.set_param(i, v)
            }
            fn loss(&self) -> f64 {
                self.0.loss()
            }
            fn gradient(&self) -> Vec<f64> {
                let mut g = self.0.gradient();
                g[3] *= 1.01;
                g
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = Broken(quadratic(&mut rng, 6));
        let report = finite_difference_check(&mut m, 1e-5, 6, &mut rng);
        assert!(report.max_rel_error > 1e-3);
        assert_eq!(report.worst_index, 3);
    }

    #[test]
    fn error_shrinks_with_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = Exponential {
            c: (0..10).map(|_| rng.random_range(0.5..2.0)).collect(),
            x: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let errs: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&eps| {
                finite_difference_check(&mut m, eps, 10, &mut ChaCha8Rng::seed_from_u64(0))
                    .max_rel_error
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
        assert!(errs[4] < 1e-9);
    }

    #[test]
    fn subset_is_distinct_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = quadratic(&mut rng, 40);
        let a = finite_difference_check(&mut q, 1e-4, 15, &mut ChaCha8Rng::seed_from_u64(9));
        let b = finite_difference_check(&mut q, 1e-4, 15, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.coords, 15);
    }
}
