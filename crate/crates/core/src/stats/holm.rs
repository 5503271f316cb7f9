use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmResult {
    pub p_adjusted: Vec<f64>,
    pub reject: Vec<bool>,
}

/// Holm step-down adjustment; output is in input order.
pub fn holm_bonferroni(p_values: &[f64], alpha: f64) -> Result<HolmResult, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidArgument(format!("p-value {p} outside [0,1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));

    let mut p_adjusted = vec![0.0; m];
    let mut reject = vec![false; m];
    let mut running = 0.0f64;
    let mut stopped = false;
    for (rank, &i) in order.iter().enumerate() {
        let k = (m - rank) as f64;
        running = running.max((k * p_values[i]).min(1.0));
        p_adjusted[i] = running;
        stopped |= p_values[i] > alpha / k;
        reject[i] = !stopped;
    }
    Ok(HolmResult { p_adjusted, reject })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_down_example() {
        let h = holm_bonferroni(&[0.01, 0.04, 0.03], 0.05).unwrap();
        for (a, b) in h.p_adjusted.iter().zip([0.03, 0.06, 0.06]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(h.reject, [true, false, false]);
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(holm_bonferroni(&[0.2], 0.05).unwrap().p_adjusted, [0.2]);
        let h = holm_bonferroni(&[0.0, 0.0, 0.0], 0.05).unwrap();
        assert_eq!(h.p_adjusted, [0.0; 3]);
        assert_eq!(h.reject, [true; 3]);
        assert!(holm_bonferroni(&[], 0.05).unwrap().p_adjusted.is_empty());
        assert!(holm_bonferroni(&[1.5], 0.05).is_err());
        assert!(holm_bonferroni(&[0.5], 1.0).is_err());
    }
}
