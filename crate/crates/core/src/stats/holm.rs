use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolmDecision {
    pub adjusted: f64,
    pub significant: bool,
}

/// Holm step-down adjustment at α = 0.05.
pub fn holm_correct(p_values: &[f64]) -> Result<Vec<HolmDecision>> {
    holm_correct_at(p_values, 0.05)
}

/// `adjusted_(i) = min(1, max_{j ≤ i} (m − j + 1)·p_(j))` over the ascending
/// order, returned in input order. A hypothesis is rejected when its
/// adjusted p is below `alpha`, which is exactly the step-down rule.
pub fn holm_correct_at(p_values: &[f64], alpha: f64) -> Result<Vec<HolmDecision>> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("p value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut out = vec![
        HolmDecision {
            adjusted: 0.0,
            significant: false
        };
        m
    ];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p_values[i]).min(1.0));
        out[i] = HolmDecision {
            adjusted: running,
            significant: running < alpha,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adjusted(p: &[f64]) -> Vec<f64> {
        holm_correct(p).unwrap().into_iter().map(|d| d.adjusted).collect()
    }

    #[test]
    fn examples() {
        let a = adjusted(&[0.01, 0.03, 0.04]);
        let want = [0.03, 0.06, 0.06];
        for (x, w) in a.iter().zip(want) {
            assert!((x - w).abs() < 1e-15);
        }
        assert_eq!(adjusted(&[0.2]), vec![0.2]);
        let zeros = holm_correct(&[0.0; 3]).unwrap();
        assert!(zeros.iter().all(|d| d.adjusted == 0.0 && d.significant));
        assert!(holm_correct(&[]).unwrap().is_empty());
        assert!(holm_correct(&[1.2]).is_err());
    }

    #[test]
    fn original_order_is_kept() {
        let a = adjusted(&[0.04, 0.01, 0.03]);
        assert!((a[0] - 0.06).abs() < 1e-15 && (a[1] - 0.03).abs() < 1e-15);
    }
}
