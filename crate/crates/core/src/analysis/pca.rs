use crate::error::{Error, Result};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;

/// Principal components of a row-major data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// `eigenvalue / trace` per component.
    pub fractions: Vec<f64>,
    /// `[rows, components.len()]` projections of the centred data.
    pub projected: Vec<f64>,
    pub trace: f64,
    /// Fewer than the requested components carry variance.
    pub rank_deficient: bool,
}

/// Sample covariance (divisor `n - 1`) of `rows x cols` data, plus column means.
pub fn covariance(data: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if rows < 2 || cols == 0 || data.len() != rows * cols {
        return Err(Error::config(format!(
            "covariance needs at least 2 rows of width {cols}, got {} values",
            data.len()
        )));
    }
    let mut mean = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut cov = vec![0.0; cols * cols];
    let mut centred = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (c, (v, m)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..cols {
            let ci = centred[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..cols {
                cov[i * cols + j] += ci * centred[j];
            }
        }
    }
    let denom = (rows - 1) as f64;
    for i in 0..cols {
        for j in i..cols {
            let v = cov[i * cols + j] / denom;
            cov[i * cols + j] = v;
            cov[j * cols + i] = v;
        }
    }
    Ok((cov, mean))
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = crate::nn::dot(&m[i * n..(i + 1) * n], v);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Leading eigenpairs of a symmetric matrix by power iteration with
/// deflation. Stops early once the remaining spectrum is numerically zero.
pub fn top_eigenpairs(matrix: &[f64], n: usize, k: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if matrix.len() != n * n {
        return Err(Error::config("matrix is not n x n"));
    }
    let mut m = matrix.to_vec();
    let scale = (0..n).map(|i| matrix[i * n + i].abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    let mut w = vec![0.0; n];
    for _ in 0..k.min(n) {
        // Start from the column with the largest norm; it cannot be orthogonal
        // to the dominant eigenspace unless the matrix is zero.
        let col = (0..n)
            .map(|j| (j, (0..n).map(|i| m[i * n + j].powi(2)).sum::<f64>()))
            .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
        if col.1.sqrt() <= 1e-12 * scale {
            break;
        }
        let mut v: Vec<f64> = (0..n).map(|i| m[i * n + col.0]).collect();
        normalize(&mut v);
        for _ in 0..POWER_MAX_ITERS {
            mat_vec(&m, &v, &mut w);
            let norm = normalize(&mut w);
            if norm == 0.0 {
                break;
            }
            // Fix the sign so the convergence test is not fooled by flips.
            let s = crate::nn::dot(&w, &v).signum();
            if s < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            let diff = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v.copy_from_slice(&w);
            if diff < POWER_TOL {
                break;
            }
        }
        mat_vec(&m, &v, &mut w);
        let lambda = crate::nn::dot(&v, &w);
        if lambda <= 1e-12 * scale {
            break;
        }
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v.clone()));
    }
    Ok(out)
}

/// Top-`k` principal components of `rows x cols` data (centred internally).
pub fn pca_embed(data: &[f64], rows: usize, cols: usize, k: usize) -> Result<Pca> {
    if k == 0 || rows < k + 1 {
        return Err(Error::config(format!("PCA of {k} components needs at least {} rows, got {rows}", k + 1)));
    }
    let (cov, mean) = covariance(data, rows, cols)?;
    let trace: f64 = (0..cols).map(|i| cov[i * cols + i]).sum();
    let pairs = top_eigenpairs(&cov, cols, k)?;
    let rank_deficient = pairs.len() < k;
    let mut projected = Vec::with_capacity(rows * pairs.len());
    let mut centred = vec![0.0; cols];
    for row in data.chunks_exact(cols) {
        for (c, (v, m)) in centred.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        projected.extend(pairs.iter().map(|(_, v)| crate::nn::dot(v, &centred)));
    }
    Ok(Pca {
        fractions: pairs
            .iter()
            .map(|(l, _)| if trace > 0.0 { (l / trace).clamp(0.0, 1.0) } else { 0.0 })
            .collect(),
        eigenvalues: pairs.iter().map(|(l, _)| *l).collect(),
        components: pairs.into_iter().map(|(_, v)| v).collect(),
        projected,
        trace,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_in_3d_has_one_component() {
        let data: Vec<f64> = (0..20).flat_map(|t| {
            let t = t as f64;
            [t, 2.0 * t, -t]
        }).collect();
        let p = pca_embed(&data, 20, 3, 3).unwrap();
        assert!((p.fractions[0] - 1.0).abs() < 1e-9);
        assert!(p.rank_deficient);
        assert_eq!(p.components.len(), 1);
    }

    #[test]
    fn diagonal_covariance() {
        let m = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let pairs = top_eigenpairs(&m, 3, 3).unwrap();
        let vals: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        for (a, b) in vals.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-10, "{vals:?}");
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(pca_embed(&[1.0, 2.0], 2, 1, 2).is_err());
    }
}
