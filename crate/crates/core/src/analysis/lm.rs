//! Damped Gauss-Newton with a Levenberg-Marquardt damping schedule.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// A scalar model `y = f(x; p)` with an analytic gradient in `p`.
pub trait CurveModel {
    fn num_params(&self) -> usize;

    fn value(&self, x: f64, params: &[f64]) -> f64;

    /// Writes `df/dp_j` into `out[j]`.
    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]);
}

#[derive(Clone, Debug)]
pub struct LevenbergMarquardt {
    pub max_iterations: usize,
    /// Stop when `|dp| <= tol * (|p| + tol)`.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LevenbergMarquardt {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub params: Vec<f64>,
    pub ssr: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `J^T J` at `params` (unweighted).
    pub normal_matrix: DMatrix<f64>,
}

const MAX_DAMPING: f64 = 1e16;

pub(crate) fn sum_sq_residuals<M: CurveModel>(model: &M, xs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model.value(x, p);
            r * r
        })
        .sum()
}

fn normal_equations<M: CurveModel>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    p: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let n = model.num_params();
    let mut a = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut row = vec![0.0; n];
    for (&x, &y) in xs.iter().zip(ys) {
        model.gradient(x, p, &mut row);
        let r = y - model.value(x, p);
        for i in 0..n {
            g[i] += row[i] * r;
            for j in i..n {
                a[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    (a, g)
}

impl LevenbergMarquardt {
    pub fn minimize<M: CurveModel>(
        &self,
        model: &M,
        xs: &[f64],
        ys: &[f64],
        initial: Vec<f64>,
    ) -> Minimum {
        let n = model.num_params();
        let mut p = initial;
        let mut ssr = sum_sq_residuals(model, xs, ys, &p);
        let mut lambda = self.initial_damping;
        let mut converged = ssr == 0.0;
        let mut iterations = 0;
        let (mut a, mut g) = normal_equations(model, xs, ys, &p);

        while !converged && iterations < self.max_iterations {
            iterations += 1;
            let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
            let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);
            loop {
                let mut damped = a.clone();
                for i in 0..n {
                    damped[(i, i)] += lambda * a[(i, i)].max(floor);
                }
                let step = damped.cholesky().map(|c| c.solve(&g));
                let Some(step) = step else {
                    lambda *= 10.0;
                    if lambda > MAX_DAMPING {
                        converged = true;
                        break;
                    }
                    continue;
                };
                let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let trial_ssr = sum_sq_residuals(model, xs, ys, &trial);
                if trial_ssr.is_finite() && trial_ssr <= ssr {
                    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let small =
                        step.norm() <= self.step_tolerance * (p_norm + self.step_tolerance);
                    p = trial;
                    ssr = trial_ssr;
                    lambda = (lambda / 10.0).max(1e-15);
                    (a, g) = normal_equations(model, xs, ys, &p);
                    converged = small || ssr == 0.0;
                    break;
                }
                lambda *= 10.0;
                if lambda > MAX_DAMPING {
                    // no descent direction left at working precision
                    converged = true;
                    break;
                }
            }
        }
        Minimum {
            params: p,
            ssr,
            iterations,
            converged,
            normal_matrix: a,
        }
    }
}

/// Diagonal of `scale * (J^T J)^-1`; directions the data cannot constrain map
/// to infinite variance on every parameter they touch.
pub(crate) fn parameter_variances(normal: &DMatrix<f64>, scale: f64) -> Vec<f64> {
    let n = normal.nrows();
    let eig = SymmetricEigen::new(normal.clone());
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut var = vec![0.0; n];
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        let singular = !(ev > 1e-13 * max_ev) || max_ev == 0.0;
        for (j, v) in var.iter_mut().enumerate() {
            let w = eig.eigenvectors[(j, k)].powi(2);
            if singular {
                if w > 1e-10 {
                    *v = f64::INFINITY;
                }
            } else {
                *v += scale * w / ev;
            }
        }
    }
    var
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;

    impl CurveModel for Line {
        fn num_params(&self) -> usize {
            2
        }
        fn value(&self, x: f64, p: &[f64]) -> f64 {
            p[0] + p[1] * x
        }
        fn gradient(&self, x: f64, _p: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = x;
        }
    }

    #[test]
    fn solves_linear_problem() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 2.0 * x).collect();
        let m = LevenbergMarquardt::default().minimize(&Line, &xs, &ys, vec![0.0, 0.0]);
        assert!(m.converged);
        assert!((m.params[0] - 3.0).abs() < 1e-9 && (m.params[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn singular_direction_is_unbounded() {
        let normal = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let var = parameter_variances(&normal, 1.0);
        assert_eq!(var[0], 1.0);
        assert!(var[1].is_infinite());
    }
}
