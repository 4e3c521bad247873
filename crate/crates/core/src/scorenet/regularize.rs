//! Weight constraints applied after optimizer steps. Both act on the affine
//! weight matrices only; biases and embeddings are left alone.

use super::ScoreNetwork;
use crate::error::{Error, Result};

/// Top singular value of a row-major `rows x cols` matrix by power iteration on
/// `W^T W`, from a fixed start vector.
pub fn spectral_norm_estimate(w: &[f64], rows: usize, cols: usize, iters: usize) -> f64 {
    let mut v: Vec<f64> = (0..cols)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_75).fract())
        .collect();
    let mut u = vec![0.0; rows];
    normalize(&mut v);
    let mut sigma = 0.0;
    for _ in 0..iters.max(1) {
        matvec(w, rows, cols, &v, &mut u);
        let nu = normalize(&mut u);
        if nu == 0.0 {
            return 0.0;
        }
        matvec_t(w, rows, cols, &u, &mut v);
        sigma = normalize(&mut v);
        if sigma == 0.0 {
            return 0.0;
        }
    }
    sigma
}

fn matvec(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] = w[r * cols..(r + 1) * cols]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in 0..rows {
        let ur = u[r];
        for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += a * ur;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Divides every weight matrix by its estimated top singular value.
pub fn spectral_normalize(net: &mut ScoreNetwork, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::InvalidArgument(
            "power iteration needs at least one step".into(),
        ));
    }
    for layer in &mut net.params.layers {
        let sigma = spectral_norm_estimate(&layer.weight, layer.out_dim, layer.in_dim, iters);
        if sigma > 0.0 {
            layer.weight.iter_mut().for_each(|w| *w /= sigma);
        }
    }
    Ok(())
}

/// Clamps every weight entry to `[-threshold, threshold]`.
pub fn weight_clip(net: &mut ScoreNetwork, threshold: f64) -> Result<()> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold {threshold}")));
    }
    for layer in &mut net.params.layers {
        layer
            .weight
            .iter_mut()
            .for_each(|w| *w = w.clamp(-threshold, threshold));
    }
    Ok(())
}
