use crate::{Error, Result};

/// Fleiss' kappa for a matrix of per-item category counts. Every row must sum
/// to the same rater count `n >= 2`.
///
/// When all ratings fall in a single category, expected agreement is 1 and
/// the statistic is taken as 1 (observed agreement is then perfect too).
pub fn fleiss_kappa(counts: &[Vec<u32>]) -> Result<f64> {
    let first = counts
        .first()
        .ok_or_else(|| Error::Validation("fleiss kappa needs at least one item".into()))?;
    let k = first.len();
    let n: u64 = first.iter().map(|&c| c as u64).sum();
    if n < 2 {
        return Err(Error::Validation(format!(
            "fleiss kappa needs at least 2 raters per item, got {n}"
        )));
    }
    let mut category_totals = vec![0u64; k];
    let mut p_bar = 0f64;
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Validation(format!(
                "item {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let sum: u64 = row.iter().map(|&c| c as u64).sum();
        if sum != n {
            return Err(Error::Validation(format!(
                "item {i} has {sum} ratings, expected {n}"
            )));
        }
        let sq: u64 = row.iter().map(|&c| c as u64 * c as u64).sum();
        p_bar += (sq - n) as f64 / (n * (n - 1)) as f64;
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c as u64;
        }
    }
    let items = counts.len() as f64;
    p_bar /= items;
    let all = items * n as f64;
    let p_e: f64 = category_totals
        .iter()
        .map(|&t| {
            let p = t as f64 / all;
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}
