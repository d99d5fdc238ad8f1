use crate::autodiff::{Graph, Real, Var};
use crate::error::{Error, Result};

/// Rows further than this from unit norm violate the loss contract.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Positive-pair index list for rows ordered `(x_1, x̂_1, x_2, x̂_2, ...)`.
pub fn positive_pairs(n_rows: usize) -> Vec<(usize, usize)> {
    (0..n_rows / 2)
        .flat_map(|k| [(2 * k, 2 * k + 1), (2 * k + 1, 2 * k)])
        .collect()
}

/// Contrastive loss over `2N` unit rows whose positives are adjacent. Each row's softmax runs
/// over every other row; the result is the mean negative log-probability of the positives.
pub fn ntxent_loss<T: Real>(g: &mut Graph<T>, z: Var, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let (rows, cols) = g.value(z).dims2()?;
    if rows < 2 || rows % 2 != 0 {
        return Err(Error::Shape(format!(
            "loss needs an even number >= 2 of rows, got {rows}"
        )));
    }
    for (r, row) in g.value(z).data().chunks_exact(cols).enumerate() {
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().as_f64();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Contract(format!("embedding row {r} has norm {n}")));
        }
    }
    let sim = g.matmul_nt(z, z)?;
    let logits = g.scale(sim, T::from_f64(1.0 / tau))?;
    let logp = g.masked_log_softmax(logits)?;
    let pos = g.pick(logp, &positive_pairs(rows))?;
    let mean = g.mean(pos)?;
    g.scale(mean, -T::one())
}

/// Loss value only, for plain embedding matrices.
pub fn ntxent_value(z: &[Vec<f32>], tau: f64) -> Result<f64> {
    let cols = z.first().map_or(0, Vec::len);
    let mut g = Graph::<f64>::new();
    let data = z.iter().flatten().map(|&v| v as f64).collect();
    let zv = g.constant(crate::autodiff::Tensor::matrix(z.len(), cols, data)?);
    let l = ntxent_loss(&mut g, zv, tau)?;
    Ok(g.value(l).item())
}
