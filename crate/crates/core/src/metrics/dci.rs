//! DCI disentanglement with importances taken from ridge-regression weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RIDGE_LAMBDA: f64 = 1e-3;
const MAX_ESCALATIONS: usize = 3;

fn standardize(columns: &mut [Vec<f64>]) {
    for col in columns {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        for x in col.iter_mut() {
            *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
        }
    }
}

/// `D×F` matrix of `|w|` from one ridge regression per factor on the
/// standardized latents. Factor targets are standardized level indices.
pub fn importance_matrix(latents: &Tensor, factors: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let (m, d) = (latents.rows(), latents.cols());
    if factors.len() != m || m == 0 {
        return Err(Error::dim(
            "importance_matrix",
            format!("{m} latent rows, {} factor rows", factors.len()),
        ));
    }
    let num_factors = factors[0].len();
    let mut z: Vec<Vec<f64>> = (0..d).map(|j| latents.column(j)).collect();
    standardize(&mut z);
    let mut y: Vec<Vec<f64>> = (0..num_factors)
        .map(|f| factors.iter().map(|row| row[f] as f64).collect())
        .collect();
    standardize(&mut y);

    let zm = DMatrix::from_fn(m, d, |r, j| z[j][r]);
    let gram = zm.transpose() * &zm / m as f64;
    let mut lambda = RIDGE_LAMBDA;
    let mut escalations = 0;
    let chol = loop {
        let reg = &gram + DMatrix::identity(d, d) * lambda;
        if let Some(c) = reg.cholesky() {
            break c;
        }
        if escalations == MAX_ESCALATIONS {
            return Err(Error::Degenerate(format!(
                "ridge system singular up to lambda {lambda}"
            )));
        }
        escalations += 1;
        lambda *= 10.0;
        log::warn!("ridge system singular; raising lambda to {lambda}");
    };

    let mut r = vec![vec![0.0; num_factors]; d];
    for (f, target) in y.iter().enumerate() {
        let rhs = zm.transpose() * DVector::from_column_slice(target) / m as f64;
        let w = chol.solve(&rhs);
        for j in 0..d {
            r[j][f] = w[j].abs();
        }
    }
    Ok(r)
}

/// Importance-weighted mean over latent dimensions of one minus the
/// normalized entropy of each row of `importance`.
pub fn dci_from_importance(importance: &[Vec<f64>]) -> Result<f64> {
    let num_factors = importance.first().map_or(0, |r| r.len());
    if num_factors < 2 {
        return Err(Error::Contract("DCI needs at least 2 factors".into()));
    }
    if importance
        .iter()
        .flatten()
        .any(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(Error::Contract(
            "importances must be finite and >= 0".into(),
        ));
    }
    let total: f64 = importance.iter().flatten().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let log_f = (num_factors as f64).ln();
    let mut score = 0.0;
    for row in importance {
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            continue;
        }
        let h: f64 = row
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let p = v / s;
                -p * p.ln()
            })
            .sum();
        score += (s / total) * (1.0 - h / log_f);
    }
    Ok(score.clamp(0.0, 1.0))
}

pub fn dci_disentanglement(latents: &Tensor, factors: &[Vec<usize>]) -> Result<f64> {
    dci_from_importance(&importance_matrix(latents, factors)?)
}
