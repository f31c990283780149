//! Symmetric in-batch contrastive loss and its analytic gradients.

use super::EmbedError;

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copy with every row scaled to unit L2 norm.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.rows {
            let r = out.row_mut(i);
            let n = dot(r, r).sqrt();
            if n > 0.0 {
                r.iter_mut().for_each(|x| *x /= n);
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check(u: &Matrix, v: &Matrix) -> Result<(), EmbedError> {
    if u.rows != v.rows || u.cols != v.cols {
        return Err(EmbedError::Shape(format!(
            "rule batch {}x{} vs sentence batch {}x{}",
            u.rows, u.cols, v.rows, v.cols
        )));
    }
    Ok(())
}

/// `U Vᵀ`.
fn similarities(u: &Matrix, v: &Matrix) -> Vec<f64> {
    let b = u.rows;
    let mut s = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            s[i * b + j] = dot(u.row(i), v.row(j));
        }
    }
    s
}

/// Row-wise and column-wise softmax of `scale * sims`.
fn softmaxes(sims: &[f64], b: usize, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut row = vec![0.0; b * b];
    let mut col = vec![0.0; b * b];
    for i in 0..b {
        let m = (0..b).map(|j| scale * sims[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).map(|j| (scale * sims[i * b + j] - m).exp()).sum();
        for j in 0..b {
            row[i * b + j] = (scale * sims[i * b + j] - m).exp() / z;
        }
    }
    for j in 0..b {
        let m = (0..b).map(|i| scale * sims[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).map(|i| (scale * sims[i * b + j] - m).exp()).sum();
        for i in 0..b {
            col[i * b + j] = (scale * sims[i * b + j] - m).exp() / z;
        }
    }
    (row, col)
}

fn loss_from(sims: &[f64], b: usize, scale: f64) -> f64 {
    let mut rows = 0.0;
    let mut cols = 0.0;
    for i in 0..b {
        let m = (0..b).map(|j| scale * sims[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..b).map(|j| (scale * sims[i * b + j] - m).exp()).sum::<f64>().ln();
        rows += lse - scale * sims[i * b + i];
    }
    for j in 0..b {
        let m = (0..b).map(|i| scale * sims[i * b + j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..b).map(|i| (scale * sims[i * b + j] - m).exp()).sum::<f64>().ln();
        cols += lse - scale * sims[j * b + j];
    }
    0.5 * (rows / b as f64 + cols / b as f64)
}

/// Symmetric cross-entropy over `exp(log_scale) · U Vᵀ` with diagonal
/// targets. `U` and `V` are expected to be row-normalized.
pub fn contrastive_loss(u: &Matrix, v: &Matrix, log_scale: f64) -> Result<f64, EmbedError> {
    check(u, v)?;
    if u.rows == 0 {
        return Ok(0.0);
    }
    Ok(loss_from(&similarities(u, v), u.rows, log_scale.exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub loss: f64,
    /// Gradient w.r.t. the raw (pre-normalization) rule vectors.
    pub d_u: Matrix,
    /// Gradient w.r.t. the raw sentence vectors.
    pub d_v: Matrix,
    /// Gradient w.r.t. the log scale.
    pub d_log_scale: f64,
}

/// Loss and gradients for raw vectors that are L2-normalized row by row
/// before entering [`contrastive_loss`].
pub fn loss_gradients(zu: &Matrix, zv: &Matrix, log_scale: f64) -> Result<LossGradients, EmbedError> {
    check(zu, zv)?;
    let b = zu.rows;
    let d = zu.cols;
    let u = zu.normalized();
    let v = zv.normalized();
    let scale = log_scale.exp();
    let sims = similarities(&u, &v);
    let loss = if b == 0 { 0.0 } else { loss_from(&sims, b, scale) };
    let (row, col) = softmaxes(&sims, b, scale);
    // dL/dlogit
    let mut g = vec![0.0; b * b];
    let inv = 0.5 / b.max(1) as f64;
    for i in 0..b {
        for j in 0..b {
            let delta = if i == j { 1.0 } else { 0.0 };
            g[i * b + j] = inv * ((row[i * b + j] - delta) + (col[i * b + j] - delta));
        }
    }
    let d_log_scale = scale * g.iter().zip(&sims).map(|(a, s)| a * s).sum::<f64>();
    let mut du = Matrix::zeros(b, d);
    let mut dv = Matrix::zeros(b, d);
    for i in 0..b {
        for j in 0..b {
            let w = scale * g[i * b + j];
            if w == 0.0 {
                continue;
            }
            for k in 0..d {
                du.data[i * d + k] += w * v.data[j * d + k];
                dv.data[j * d + k] += w * u.data[i * d + k];
            }
        }
    }
    Ok(LossGradients {
        loss,
        d_u: through_normalization(zu, &u, du),
        d_v: through_normalization(zv, &v, dv),
        d_log_scale,
    })
}

/// Maps gradients w.r.t. unit vectors back to the raw vectors:
/// `(g − u (u·g)) / ‖z‖`.
fn through_normalization(z: &Matrix, unit: &Matrix, mut grad: Matrix) -> Matrix {
    for i in 0..z.rows {
        let n = dot(z.row(i), z.row(i)).sqrt();
        let u = unit.row(i);
        let g = grad.row_mut(i);
        let ug = dot(u, g);
        for (gk, uk) in g.iter_mut().zip(u) {
            *gk = if n > 0.0 { (*gk - uk * ug) / n } else { 0.0 };
        }
    }
    grad
}
