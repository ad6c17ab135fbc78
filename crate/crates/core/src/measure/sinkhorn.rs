//! Log-domain Sinkhorn iterations for entropic transport.
//!
//! The returned value is the transport cost `<P, C>` of the entropic plan,
//! which overestimates the exact optimum; the gap shrinks with `epsilon`.

use crate::error::{Error, Result};

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn entropic_cost(
    supply: &[f64],
    demand: &[f64],
    costs: &[f64],
    epsilon: f64,
    max_iter: usize,
) -> Result<f64> {
    if epsilon <= 0.0 {
        return Err(Error::param("epsilon", "must be positive"));
    }
    let (n1, n2) = (supply.len(), demand.len());
    let log_a: Vec<f64> = supply.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = demand.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n1];
    let mut g = vec![0.0; n2];
    let c = |i: usize, j: usize| costs[i * n2 + j];
    for it in 0..max_iter {
        for i in 0..n1 {
            f[i] = -epsilon * log_sum_exp((0..n2).map(|j| (g[j] - c(i, j)) / epsilon + log_b[j]));
        }
        for j in 0..n2 {
            g[j] = -epsilon * log_sum_exp((0..n1).map(|i| (f[i] - c(i, j)) / epsilon + log_a[i]));
        }
        // Row marginal error after the column update.
        if it % 10 == 9 || it + 1 == max_iter {
            let err: f64 = (0..n1)
                .map(|i| {
                    let row: f64 = (0..n2)
                        .map(|j| ((f[i] + g[j] - c(i, j)) / epsilon + log_a[i] + log_b[j]).exp())
                        .sum();
                    (row - supply[i]).abs()
                })
                .sum();
            if err < 1e-10 {
                break;
            }
        }
    }
    let mut cost = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let p = ((f[i] + g[j] - c(i, j)) / epsilon + log_a[i] + log_b[j]).exp();
            cost += p * c(i, j);
        }
    }
    Ok(cost)
}
