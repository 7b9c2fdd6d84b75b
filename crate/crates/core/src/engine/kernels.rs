//! Reference kernels for the five compute operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::design_space::Reducer;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("sample k={k} needs more than {n} nodes")]
    KTooLarge { k: usize, n: usize },
    #[error("edge index {index} out of range for {n} nodes")]
    IndexOutOfRange { index: i64, n: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("expected a {0} tensor")]
    WrongDtype(&'static str),
    #[error("aggregate without an edge set")]
    MissingEdges,
    #[error("pooling over zero nodes")]
    Empty,
}

fn matrix(t: &Tensor) -> Result<(usize, usize, &[f32]), KernelError> {
    let (n, f) = t.shape2().ok_or_else(|| KernelError::DimMismatch(format!("{:?} is not rank 2", t.dims())))?;
    let data = t.as_f32().ok_or(KernelError::WrongDtype("f32"))?;
    Ok((n, f, data))
}

/// k nearest rows of each row by Euclidean distance, excluding the row
/// itself. Ties go to the lower index. Returns an `[N, k]` i32 index tensor.
pub fn sample(features: &Tensor, k: usize) -> Result<Tensor, KernelError> {
    let (n, f, x) = matrix(features)?;
    if k >= n {
        return Err(KernelError::KTooLarge { k, n });
    }
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f32, u32)> = Vec::with_capacity(n);
    let by_dist = |a: &(f32, u32), b: &(f32, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for i in 0..n {
        let row = &x[i * f..(i + 1) * f];
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let other = &x[j * f..(j + 1) * f];
            let d: f32 = row.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d, j as u32));
        }
        if k > 0 && k < cand.len() {
            cand.select_nth_unstable_by(k - 1, by_dist);
        }
        let nearest = &mut cand[..k];
        nearest.sort_unstable_by(by_dist);
        out.extend(nearest.iter().map(|&(_, j)| j as i32));
    }
    Ok(Tensor::i32(vec![n, k], out))
}

/// `out[i] = reduce(features[j] for j in edges[i])`. Empty neighbourhoods
/// give zeros; `Mean` divides by the neighbour count.
pub fn aggregate(features: &Tensor, edges: &Tensor, reducer: Reducer) -> Result<Tensor, KernelError> {
    let (n, f, x) = matrix(features)?;
    let (rows, k) = edges.shape2().ok_or_else(|| KernelError::DimMismatch("edge index must be rank 2".into()))?;
    if rows != n {
        return Err(KernelError::DimMismatch(format!("{rows} edge rows for {n} nodes")));
    }
    let idx = edges.as_i32().ok_or(KernelError::WrongDtype("i32"))?;
    if let Some(&bad) = idx.iter().find(|&&j| j < 0 || j as usize >= n) {
        return Err(KernelError::IndexOutOfRange { index: bad as i64, n });
    }
    let mut out = vec![0.0f32; n * f];
    if k == 0 {
        return Ok(Tensor::f32(vec![n, f], out));
    }
    for i in 0..n {
        let acc = &mut out[i * f..(i + 1) * f];
        let neigh = &idx[i * k..(i + 1) * k];
        if reducer == Reducer::Max {
            acc.fill(f32::NEG_INFINITY);
        }
        for &j in neigh {
            let row = &x[j as usize * f..(j as usize + 1) * f];
            for (a, &v) in acc.iter_mut().zip(row) {
                match reducer {
                    Reducer::Max => *a = a.max(v),
                    Reducer::Mean | Reducer::Sum => *a += v,
                }
            }
        }
        if reducer == Reducer::Mean {
            let inv = 1.0 / k as f32;
            acc.iter_mut().for_each(|a| *a *= inv);
        }
    }
    Ok(Tensor::f32(vec![n, f], out))
}

/// Weights of the `Combine` at `layer_index`, derived from `(seed,
/// layer_index, dims)` so both ends of a split agree without shipping them.
pub fn combine_weights(seed: u64, layer_index: usize, f_in: usize, f_out: usize) -> (Tensor, Tensor) {
    let mix = seed
        ^ (layer_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (f_in as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (f_out as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let bound = (6.0 / (f_in + f_out) as f32).sqrt();
    let w = (0..f_in * f_out).map(|_| rng.random_range(-bound..bound)).collect();
    let b = (0..f_out).map(|_| rng.random_range(-0.1f32..0.1)).collect();
    (Tensor::f32(vec![f_in, f_out], w), Tensor::f32(vec![f_out], b))
}

/// `max(0, features · weights + bias)`.
pub fn combine(features: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, KernelError> {
    let (n, f_in, x) = matrix(features)?;
    let (w_in, f_out, w) = matrix(weights)?;
    let b = bias.as_f32().ok_or(KernelError::WrongDtype("f32"))?;
    if w_in != f_in || b.len() != f_out {
        return Err(KernelError::DimMismatch(format!(
            "features [{n}, {f_in}] x weights [{w_in}, {f_out}] + bias [{}]",
            b.len()
        )));
    }
    let mut out = vec![0.0f32; n * f_out];
    for i in 0..n {
        let acc = &mut out[i * f_out..(i + 1) * f_out];
        acc.copy_from_slice(b);
        for (c, &xv) in x[i * f_in..(i + 1) * f_in].iter().enumerate() {
            let wrow = &w[c * f_out..(c + 1) * f_out];
            for (a, &wv) in acc.iter_mut().zip(wrow) {
                *a += xv * wv;
            }
        }
        acc.iter_mut().for_each(|a| *a = a.max(0.0));
    }
    Ok(Tensor::f32(vec![n, f_out], out))
}

/// Column-wise max or mean, giving `[1, F]`.
pub fn global_pool(features: &Tensor, reducer: Reducer) -> Result<Tensor, KernelError> {
    let (n, f, x) = matrix(features)?;
    if n == 0 {
        return Err(KernelError::Empty);
    }
    let mut out = x[..f].to_vec();
    for row in x.chunks_exact(f.max(1)).skip(1).take(n - 1) {
        for (a, &v) in out.iter_mut().zip(row) {
            match reducer {
                Reducer::Max => *a = a.max(v),
                Reducer::Mean | Reducer::Sum => *a += v,
            }
        }
    }
    if reducer == Reducer::Mean {
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(Tensor::f32(vec![1, f], out))
}
