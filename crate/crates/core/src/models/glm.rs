//! Elastic-net logistic regression.
//!
//! Minimizes `(1/n) sum logloss + lambda * (alpha |b|_1 + (1 - alpha)/2 |b|^2)`
//! with an unpenalized intercept. Each outer iteration forms the IRLS
//! quadratic model; it is solved exactly by Cholesky when `alpha = 0` and by
//! coordinate descent otherwise. A backtracking step on the true objective
//! keeps the iteration monotone.

use super::tree::Columns;
use super::{log_loss, sigmoid, LinearModel};

pub(crate) struct GlmFit {
    pub model: LinearModel,
    pub converged: bool,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GlmParams {
    pub alpha: f64,
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

pub(crate) fn objective(cols: &Columns, y: &[f64], b0: f64, beta: &[f64], p: GlmParams) -> f64 {
    let eta = linear(cols, b0, beta);
    let loss = y
        .iter()
        .zip(&eta)
        .map(|(&yi, &e)| log_loss(yi, sigmoid(e)))
        .sum::<f64>()
        / cols.n as f64;
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    loss + p.lambda * (p.alpha * l1 + (1.0 - p.alpha) / 2.0 * l2)
}

fn linear(cols: &Columns, b0: f64, beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![b0; cols.n];
    for (c, &b) in cols.cols.iter().zip(beta) {
        if b != 0.0 {
            for (e, &x) in eta.iter_mut().zip(c) {
                *e += b * x;
            }
        }
    }
    eta
}

fn soft(g: f64, t: f64) -> f64 {
    g.signum() * (g.abs() - t).max(0.0)
}

/// Solve `a x = b` for symmetric positive definite `a` (row-major, k x k).
fn cholesky_solve(mut a: Vec<f64>, mut b: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d -= a[j * k + m] * a[j * k + m];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    for i in 0..k {
        for m in 0..i {
            b[i] -= a[i * k + m] * b[m];
        }
        b[i] /= a[i * k + i];
    }
    for i in (0..k).rev() {
        for m in i + 1..k {
            b[i] -= a[m * k + i] * b[m];
        }
        b[i] /= a[i * k + i];
    }
    Some(b)
}

/// Exact minimizer of the ridge-penalized IRLS quadratic.
fn newton_step(cols: &Columns, w: &[f64], z: &[f64], lambda: f64) -> Option<(f64, Vec<f64>)> {
    let n = cols.n as f64;
    let p = cols.p();
    let k = p + 1;
    // column 0 is the intercept
    let col = |j: usize, i: usize| if j == 0 { 1.0 } else { cols.cols[j - 1][i] };
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for r in 0..k {
        for c in r..k {
            let s: f64 = (0..cols.n).map(|i| w[i] * col(r, i) * col(c, i)).sum::<f64>() / n;
            a[r * k + c] = s;
            a[c * k + r] = s;
        }
        b[r] = (0..cols.n).map(|i| w[i] * col(r, i) * z[i]).sum::<f64>() / n;
    }
    for j in 1..k {
        a[j * k + j] += lambda;
    }
    let sol = cholesky_solve(a.clone(), b.clone(), k).or_else(|| {
        for j in 0..k {
            a[j * k + j] += 1e-10;
        }
        cholesky_solve(a, b, k)
    })?;
    Some((sol[0], sol[1..].to_vec()))
}

/// Coordinate descent on the elastic-net IRLS quadratic, warm-started.
fn cd_step(cols: &Columns, w: &[f64], z: &[f64], b0: f64, beta: &[f64], p: GlmParams) -> (f64, Vec<f64>) {
    let n = cols.n as f64;
    let mut b0 = b0;
    let mut beta = beta.to_vec();
    let eta = linear(cols, b0, &beta);
    let mut r: Vec<f64> = z.iter().zip(&eta).map(|(zi, e)| zi - e).collect();
    let wsum: f64 = w.iter().sum();
    let xw2: Vec<f64> = cols
        .cols
        .iter()
        .map(|c| c.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / n)
        .collect();
    for _ in 0..10_000 {
        let d0 = r.iter().zip(w).map(|(ri, wi)| wi * ri).sum::<f64>() / wsum;
        b0 += d0;
        r.iter_mut().for_each(|ri| *ri -= d0);
        let mut max_delta = d0.abs();
        for (j, c) in cols.cols.iter().enumerate() {
            let denom = xw2[j] + p.lambda * (1.0 - p.alpha);
            if denom <= 0.0 {
                continue;
            }
            let g = c
                .iter()
                .zip(w)
                .zip(&r)
                .map(|((x, wi), ri)| wi * x * ri)
                .sum::<f64>()
                / n
                + xw2[j] * beta[j];
            let new = soft(g, p.lambda * p.alpha) / denom;
            let d = new - beta[j];
            if d != 0.0 {
                for (ri, x) in r.iter_mut().zip(c) {
                    *ri -= d * x;
                }
                beta[j] = new;
                max_delta = max_delta.max(d.abs());
            }
        }
        if max_delta < p.tolerance * 0.01 {
            break;
        }
    }
    (b0, beta)
}

pub(crate) fn train(cols: &Columns, y: &[f64], p: GlmParams) -> GlmFit {
    let n = cols.n;
    let p_bar = (y.iter().sum::<f64>() / n as f64).clamp(1e-15, 1.0 - 1e-15);
    let mut b0 = (p_bar / (1.0 - p_bar)).ln();
    let mut beta = vec![0.0; cols.p()];
    let mut obj = objective(cols, y, b0, &beta, p);
    let mut loss_curve = vec![obj];
    let mut converged = false;

    for _ in 0..p.max_iterations {
        let eta = linear(cols, b0, &beta);
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            w[i] = (pi * (1.0 - pi)).max(1e-10);
            z[i] = eta[i] + (y[i] - pi) / w[i];
        }
        let (nb0, nbeta) = if p.alpha == 0.0 {
            newton_step(cols, &w, &z, p.lambda).unwrap_or_else(|| cd_step(cols, &w, &z, b0, &beta, p))
        } else {
            cd_step(cols, &w, &z, b0, &beta, p)
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cb0 = b0 + t * (nb0 - b0);
            let cbeta: Vec<f64> = beta.iter().zip(&nbeta).map(|(o, nw)| o + t * (nw - o)).collect();
            let cobj = objective(cols, y, cb0, &cbeta, p);
            if cobj <= obj + 1e-13 * obj.abs() {
                accepted = Some((cb0, cbeta, cobj));
                break;
            }
            t /= 2.0;
        }
        let Some((cb0, cbeta, cobj)) = accepted else {
            converged = true;
            break;
        };
        let change = beta
            .iter()
            .zip(&cbeta)
            .map(|(a, b)| (a - b).abs())
            .fold((b0 - cb0).abs(), f64::max);
        b0 = cb0;
        beta = cbeta;
        obj = cobj;
        loss_curve.push(obj);
        if change < p.tolerance {
            converged = true;
            break;
        }
    }
    GlmFit {
        model: LinearModel {
            intercept: b0,
            coefficients: beta,
        },
        converged,
        loss_curve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, p: usize) -> (Columns, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        // both classes always present
        let y = (0..n)
            .map(|i| {
                if i < 2 {
                    i as f64
                } else {
                    f64::from(rng.random_bool(0.5) as u8)
                }
            })
            .collect();
        (Columns { n, cols }, y)
    }

    /// Plain gradient descent on the smooth objective.
    fn gradient_descent(cols: &Columns, y: &[f64], lambda: f64) -> Vec<f64> {
        let n = cols.n as f64;
        let mut w = vec![0.0; cols.p() + 1];
        for _ in 0..200_000 {
            let eta = linear(cols, w[0], &w[1..]);
            let resid: Vec<f64> = eta.iter().zip(y).map(|(e, yi)| sigmoid(*e) - yi).collect();
            let mut g = vec![resid.iter().sum::<f64>() / n];
            for (j, c) in cols.cols.iter().enumerate() {
                g.push(c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n + lambda * w[j + 1]);
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= 0.5 * gi;
            }
            if g.iter().all(|x| x.abs() < 1e-12) {
                break;
            }
        }
        w
    }

    /// Proximal gradient (ISTA) on the elastic-net objective.
    fn ista(cols: &Columns, y: &[f64], lambda: f64, alpha: f64) -> Vec<f64> {
        let n = cols.n as f64;
        let step = 0.5;
        let mut w = vec![0.0; cols.p() + 1];
        for _ in 0..200_000 {
            let eta = linear(cols, w[0], &w[1..]);
            let resid: Vec<f64> = eta.iter().zip(y).map(|(e, yi)| sigmoid(*e) - yi).collect();
            let g0 = resid.iter().sum::<f64>() / n;
            let prev = w.clone();
            w[0] -= step * g0;
            for (j, c) in cols.cols.iter().enumerate() {
                let g = c.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n
                    + lambda * (1.0 - alpha) * w[j + 1];
                w[j + 1] = soft(w[j + 1] - step * g, step * lambda * alpha);
            }
            if w.iter().zip(&prev).all(|(a, b)| (a - b).abs() < 1e-14) {
                break;
            }
        }
        w
    }

    #[test]
    fn ridge_matches_gradient_descent() {
        for seed in 0..20 {
            let (cols, y) = random_problem(seed, 5, 3);
            let p = GlmParams {
                alpha: 0.0,
                lambda: 0.1,
                max_iterations: 100,
                tolerance: 1e-12,
            };
            let fit = train(&cols, &y, p);
            assert!(fit.converged, "seed {seed}");
            let oracle = gradient_descent(&cols, &y, 0.1);
            assert!((fit.model.intercept - oracle[0]).abs() < 1e-4);
            for (a, b) in fit.model.coefficients.iter().zip(&oracle[1..]) {
                assert!((a - b).abs() < 1e-4, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn elastic_net_matches_proximal_gradient() {
        for seed in 0..10 {
            let (cols, y) = random_problem(100 + seed, 12, 3);
            let p = GlmParams {
                alpha: 0.5,
                lambda: 0.05,
                max_iterations: 200,
                tolerance: 1e-12,
            };
            let fit = train(&cols, &y, p);
            let oracle = ista(&cols, &y, 0.05, 0.5);
            assert!((fit.model.intercept - oracle[0]).abs() < 1e-4);
            for (a, b) in fit.model.coefficients.iter().zip(&oracle[1..]) {
                assert!((a - b).abs() < 1e-4, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn heavy_penalty_on_symmetric_data_gives_zero() {
        let cols = Columns {
            n: 2,
            cols: vec![vec![-1.0, 1.0]],
        };
        let fit = train(
            &cols,
            &[0.0, 1.0],
            GlmParams {
                alpha: 0.0,
                lambda: 1e6,
                max_iterations: 50,
                tolerance: 1e-12,
            },
        );
        assert!(fit.model.intercept.abs() < 1e-9);
        assert!(fit.model.coefficients[0].abs() < 1e-5);
    }

    #[test]
    fn objective_never_increases() {
        let (cols, y) = random_problem(7, 40, 4);
        let fit = train(
            &cols,
            &y,
            GlmParams {
                alpha: 0.3,
                lambda: 0.01,
                max_iterations: 50,
                tolerance: 1e-10,
            },
        );
        for w in fit.loss_curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }
}
