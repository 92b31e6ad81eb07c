//! PCA by orthogonal power iteration with deflation.
//!
//! Each component is found by power iteration on the deflated covariance,
//! re-orthogonalized against the components already accepted. A final
//! Rayleigh–Ritz rotation inside the recovered subspace makes the projected
//! columns exactly uncorrelated even when close eigenvalues stop the power
//! iteration short of convergence.

use crate::tensor::Tensor;

use super::{Result, TextError};

#[derive(Clone, Copy, Debug)]
pub struct PcaOptions {
    pub max_iter: usize,
    /// Stop once `‖C v − λ v‖` falls below this.
    pub tol: f64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PcaResult {
    /// `V×d` projected rows.
    pub projected: Tensor<f32>,
    /// `d` unit-length principal directions of length `D`.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Centers `table` (`V×D`) by its column means and projects it onto the top
/// `d` eigenvectors of the `D×D` covariance. Each eigenvector's
/// largest-magnitude entry is made positive.
pub fn pca_project(table: &Tensor<f32>, d: usize, opts: PcaOptions) -> Result<PcaResult> {
    let (v, dim) = table.dims2()?;
    if d == 0 || d > dim {
        return Err(TextError::TooManyComponents {
            requested: d,
            available: dim,
        });
    }
    if v < 2 {
        return Err(TextError::TooFewRows(v));
    }
    let x = table.to_f64_vec();
    let mut mean = vec![0.0; dim];
    for row in x.chunks(dim) {
        for (m, &xv) in mean.iter_mut().zip(row) {
            *m += xv;
        }
    }
    mean.iter_mut().for_each(|m| *m /= v as f64);
    let centered: Vec<f64> = x
        .chunks(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(a, m)| a - m))
        .collect();

    let mut cov = vec![0.0; dim * dim];
    for row in centered.chunks(dim) {
        for i in 0..dim {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[i * dim + j] += ri * row[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let c = cov[i * dim + j] / (v - 1) as f64;
            cov[i * dim + j] = c;
            cov[j * dim + i] = c;
        }
    }

    let mut deflated = cov.clone();
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(d);
    for c in 0..d {
        let mut vec: Vec<f64> = (0..dim)
            .map(|j| 1.0 + 0.5 * (((j + 1) * (c + 3)) as f64 * 0.618_033_988_7).fract())
            .collect();
        if !orthonormalize(&mut vec, &comps) {
            vec = completion(&comps, dim);
        }
        for _ in 0..opts.max_iter {
            let mut w = symv(&deflated, &vec, dim);
            let lambda = dotf(&vec, &w);
            let resid: f64 = w
                .iter()
                .zip(&vec)
                .map(|(a, b)| (a - lambda * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if resid < opts.tol {
                break;
            }
            if !orthonormalize(&mut w, &comps) {
                // Remaining variance is numerically zero; any orthogonal
                // direction is an eigenvector.
                vec = completion(&comps, dim);
                break;
            }
            vec = w;
        }
        let lambda = dotf(&vec, &symv(&deflated, &vec, dim));
        for i in 0..dim {
            for j in 0..dim {
                deflated[i * dim + j] -= lambda * vec[i] * vec[j];
            }
        }
        comps.push(vec);
    }

    // Rayleigh–Ritz: diagonalize the covariance restricted to the subspace.
    let mut small = vec![0.0; d * d];
    let cv: Vec<Vec<f64>> = comps.iter().map(|u| symv(&cov, u, dim)).collect();
    for a in 0..d {
        for b in 0..d {
            small[a * d + b] = dotf(&comps[a], &cv[b]);
        }
    }
    let (evals, evecs) = jacobi_eigen(&small, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| evals[b].total_cmp(&evals[a]));
    let mut components = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &k in &order {
        let mut u = vec![0.0; dim];
        for (a, comp) in comps.iter().enumerate() {
            let w = evecs[a * d + k];
            for (ui, ci) in u.iter_mut().zip(comp) {
                *ui += w * ci;
            }
        }
        let norm = dotf(&u, &u).sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        let lead = u.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(u);
        eigenvalues.push(evals[k].max(0.0));
    }

    let mut proj = Vec::with_capacity(v * d);
    for row in centered.chunks(dim) {
        for u in &components {
            proj.push(dotf(row, u) as f32);
        }
    }
    Ok(PcaResult {
        projected: Tensor::new([v, d], proj)?,
        components,
        eigenvalues,
        mean,
    })
}

fn dotf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn symv(m: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dotf(&m[i * n..(i + 1) * n], x)).collect()
}

/// Two passes of Gram–Schmidt against `basis`, then normalization. Returns
/// false when nothing of `v` survives.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let start = dotf(v, v).sqrt();
    for _ in 0..2 {
        for b in basis {
            let p = dotf(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let norm = dotf(v, v).sqrt();
    if norm <= 1e-12 * start.max(1e-300) || norm == 0.0 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn completion(basis: &[Vec<f64>], n: usize) -> Vec<f64> {
    (0..n)
        .find_map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            orthonormalize(&mut e, basis).then_some(e)
        })
        .expect("basis has fewer than n vectors")
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// eigenvalues and column eigenvectors (row-major `n×n`).
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
