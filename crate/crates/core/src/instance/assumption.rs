use serde::Serialize;

use super::ArrivalProcess;
use crate::error::InstanceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVerdict {
    Pass,
    RatioBelow,
    RatioAbove,
    /// The feature never arrives over the full horizon.
    ZeroOccurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureBalance {
    pub feature: usize,
    /// Expected arrivals over the first half, `f_j(n/2)`.
    pub half_count: f64,
    /// Expected arrivals over the full horizon, `f_j(n)`.
    pub full_count: f64,
    /// `f_j(n) / f_j(n/2)`; `None` when the first-half count is zero.
    pub ratio: Option<f64>,
    pub verdict: FeatureVerdict,
}

/// Outcome of checking the seasonal-balance condition on an arrival process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub horizon: u64,
    pub c1: f64,
    pub c2: f64,
    pub log_floor_coeff: f64,
    pub features: Vec<FeatureBalance>,
    pub f_min: f64,
    /// `log_floor_coeff * ln(n)`.
    pub log_floor: f64,
    pub floor_pass: bool,
    pub pass: bool,
}

/// Checks `c1 < f_j(n)/f_j(n/2) < c2` for every feature and
/// `f_min(n) >= log_floor_coeff * ln n`, using exact expected counts.
pub fn validate_assumption(
    arrival: &ArrivalProcess,
    c1: f64,
    c2: f64,
    log_floor_coeff: f64,
) -> Result<AssumptionReport, InstanceError> {
    if !(c1 > 1.0 && c2 > 1.0 && c1 < c2) {
        return Err(InstanceError::InvalidParameter(format!(
            "need 1 < C1 < C2, got C1={c1}, C2={c2}"
        )));
    }
    if !(log_floor_coeff > 0.0) {
        return Err(InstanceError::InvalidParameter(format!(
            "log floor coefficient must be positive, got {log_floor_coeff}"
        )));
    }
    let n = arrival.horizon();
    let half = n / 2;
    let features: Vec<FeatureBalance> = (0..arrival.features())
        .map(|j| {
            let half_count = arrival.expected_count(j, half);
            let full_count = arrival.expected_count(j, n);
            let ratio = (half_count > 0.0).then(|| full_count / half_count);
            let verdict = if full_count == 0.0 {
                FeatureVerdict::ZeroOccurrence
            } else {
                match ratio {
                    None => FeatureVerdict::RatioAbove,
                    Some(r) if r <= c1 => FeatureVerdict::RatioBelow,
                    Some(r) if r >= c2 => FeatureVerdict::RatioAbove,
                    Some(_) => FeatureVerdict::Pass,
                }
            };
            FeatureBalance { feature: j, half_count, full_count, ratio, verdict }
        })
        .collect();
    let f_min = features.iter().map(|f| f.full_count).fold(f64::INFINITY, f64::min);
    let log_floor = log_floor_coeff * (n as f64).ln();
    let floor_pass = f_min >= log_floor;
    let pass = floor_pass && features.iter().all(|f| f.verdict == FeatureVerdict::Pass);
    Ok(AssumptionReport { horizon: n, c1, c2, log_floor_coeff, features, f_min, log_floor, floor_pass, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::ArrivalKind;

    #[test]
    fn balanced_stationary_pair_passes() {
        let a = ArrivalProcess::stationary(1000, vec![0.5, 0.5]).unwrap();
        let r = validate_assumption(&a, 1.5, 3.0, 1.0).unwrap();
        for f in &r.features {
            assert_eq!(f.ratio, Some(2.0));
        }
        assert_eq!(r.f_min, 500.0);
        assert!((r.log_floor - 1000f64.ln()).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn feature_confined_to_first_half_fails() {
        let seq: Vec<usize> = (0..100).map(|t| if t < 50 && t % 2 == 1 { 1 } else { 0 }).collect();
        let a = ArrivalProcess::new(100, 2, ArrivalKind::ObliviousSequence { sequence: seq }).unwrap();
        let r = validate_assumption(&a, 1.5, 3.0, 1.0).unwrap();
        assert_eq!(r.features[1].ratio, Some(1.0));
        assert_eq!(r.features[1].verdict, FeatureVerdict::RatioBelow);
        assert!(!r.pass);
    }

    #[test]
    fn single_feature_ratio_is_two() {
        for n in [10u64, 1000, 65536] {
            let a = ArrivalProcess::stationary(n, vec![1.0]).unwrap();
            let r = validate_assumption(&a, 1.1, 5.0, 0.5).unwrap();
            assert_eq!(r.features[0].ratio, Some(2.0));
        }
    }

    #[test]
    fn zero_occurrence_is_an_explicit_failure() {
        let seq = vec![0usize; 20];
        let a = ArrivalProcess::new(20, 2, ArrivalKind::ObliviousSequence { sequence: seq }).unwrap();
        let r = validate_assumption(&a, 1.5, 3.0, 1.0).unwrap();
        assert_eq!(r.features[1].verdict, FeatureVerdict::ZeroOccurrence);
        assert_eq!(r.f_min, 0.0);
        assert!(!r.pass);
    }

    #[test]
    fn bad_constants_are_rejected() {
        let a = ArrivalProcess::uniform(100, 2).unwrap();
        assert!(validate_assumption(&a, 3.0, 1.5, 1.0).is_err());
        assert!(validate_assumption(&a, 0.5, 1.5, 1.0).is_err());
        assert!(validate_assumption(&a, 1.5, 3.0, 0.0).is_err());
    }
}
