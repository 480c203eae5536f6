use super::{MrmcError, Result};

/// Category counts per case from a case x rater matrix of category indices.
pub fn category_counts(ratings: &[Vec<usize>], categories: usize) -> Result<Vec<Vec<usize>>> {
    ratings
        .iter()
        .map(|row| {
            let mut c = vec![0; categories];
            for &k in row {
                *c.get_mut(k).ok_or_else(|| MrmcError::Invalid(format!("category {k} out of range")))? += 1;
            }
            Ok(c)
        })
        .collect()
}

/// Fleiss' kappa from per-case category counts; every case needs the same
/// number of raters (at least two).
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64> {
    let first = counts.first().ok_or_else(|| MrmcError::Invalid("no cases".into()))?;
    let n: usize = first.iter().sum();
    if n < 2 {
        return Err(MrmcError::Invalid("need at least two raters per case".into()));
    }
    let k = first.len();
    let mut p_j = vec![0.0; k];
    let mut p_bar = 0.0;
    for row in counts {
        if row.len() != k || row.iter().sum::<usize>() != n {
            return Err(MrmcError::Invalid("every case must be rated by the same raters over the same categories".into()));
        }
        let agree: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += agree as f64 / (n * (n - 1)) as f64;
        for (j, &c) in row.iter().enumerate() {
            p_j[j] += c as f64;
        }
    }
    let total = (counts.len() * n) as f64;
    p_bar /= counts.len() as f64;
    let p_e: f64 = p_j.iter().map(|&c| (c / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(MrmcError::KappaUndefined);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement_is_one() {
        let ratings = vec![vec![0, 0, 0], vec![1, 1, 1], vec![0, 0, 0], vec![2, 2, 2]];
        assert_eq!(fleiss_kappa(&category_counts(&ratings, 3).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn single_category_is_undefined() {
        let ratings = vec![vec![1, 1], vec![1, 1]];
        assert_eq!(fleiss_kappa(&category_counts(&ratings, 2).unwrap()), Err(MrmcError::KappaUndefined));
    }

    #[test]
    fn chance_agreement_is_zero() {
        // Two raters, two categories: P = 1/2 and Pe = 1/2.
        let ratings = vec![vec![0, 0], vec![1, 1], vec![0, 1], vec![1, 0]];
        assert_eq!(fleiss_kappa(&category_counts(&ratings, 2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn unequal_rater_counts_rejected() {
        assert!(fleiss_kappa(&[vec![2, 0], vec![1, 2]]).is_err());
        assert!(fleiss_kappa(&[vec![1, 0]]).is_err());
    }

    #[test]
    fn invariant_to_row_and_column_permutation() {
        let ratings = vec![vec![0, 1, 1], vec![2, 2, 1], vec![0, 0, 0], vec![1, 2, 0], vec![1, 1, 2]];
        let k = fleiss_kappa(&category_counts(&ratings, 3).unwrap()).unwrap();
        let mut rows = ratings.clone();
        rows.reverse();
        let cols: Vec<Vec<usize>> = ratings.iter().map(|r| vec![r[2], r[0], r[1]]).collect();
        for m in [rows, cols] {
            let k2 = fleiss_kappa(&category_counts(&m, 3).unwrap()).unwrap();
            assert!((k - k2).abs() < 1e-15);
        }
    }
}
