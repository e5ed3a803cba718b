use std::fmt;

use serde::Serialize;

use super::HarnessError;

/// Supported two-sided confidence levels with their standard-normal z values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Confidence {
    P90,
    P95,
    P99,
}

impl Confidence {
    pub fn z(self) -> f64 {
        match self {
            Confidence::P90 => 1.645,
            Confidence::P95 => 1.96,
            Confidence::P99 => 2.576,
        }
    }

    pub fn level(self) -> f64 {
        match self {
            Confidence::P90 => 0.90,
            Confidence::P95 => 0.95,
            Confidence::P99 => 0.99,
        }
    }
}

impl TryFrom<f64> for Confidence {
    type Error = HarnessError;

    fn try_from(level: f64) -> Result<Self, Self::Error> {
        [Confidence::P90, Confidence::P95, Confidence::P99]
            .into_iter()
            .find(|c| (c.level() - level).abs() < 1e-9)
            .ok_or(HarnessError::UnsupportedConfidence(level))
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.0}%", self.level() * 100.0)
    }
}

/// Cochran sample size with worst-case proportion 0.5 and finite-population
/// correction, rounded up and capped at the population.
pub fn required_sample_size(
    population: u64,
    margin: f64,
    confidence: Confidence,
) -> Result<u64, HarnessError> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(HarnessError::BadMargin(margin));
    }
    if population == 0 {
        return Err(HarnessError::EmptyPopulation);
    }
    let z = confidence.z();
    let n0 = z * z * 0.25 / (margin * margin);
    let corrected = n0 / (1.0 + (n0 - 1.0) / population as f64);
    Ok((corrected.ceil() as u64).min(population))
}

/// Cochran size without the finite-population correction.
pub fn infinite_population_sample_size(margin: f64, confidence: Confidence) -> Result<u64, HarnessError> {
    if !(margin > 0.0 && margin < 1.0) {
        return Err(HarnessError::BadMargin(margin));
    }
    let z = confidence.z();
    Ok((z * z * 0.25 / (margin * margin)).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        // n0 = 1.96^2 * 0.25 / 0.05^2 = 384.16; 384.16 / (1 + 383.16/14740) = 374.43
        assert_eq!(required_sample_size(14_740, 0.05, Confidence::P95).unwrap(), 375);
        assert_eq!(required_sample_size(u64::MAX, 0.05, Confidence::P95).unwrap(), 385);
        assert_eq!(infinite_population_sample_size(0.05, Confidence::P95).unwrap(), 385);
        assert_eq!(required_sample_size(10, 0.05, Confidence::P95).unwrap(), 10);
        assert_eq!(required_sample_size(1, 0.05, Confidence::P95).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(required_sample_size(100, 0.0, Confidence::P95).is_err());
        assert!(required_sample_size(100, 1.0, Confidence::P95).is_err());
        assert!(required_sample_size(0, 0.05, Confidence::P95).is_err());
        assert!(Confidence::try_from(0.8).is_err());
        assert_eq!(Confidence::try_from(0.99).unwrap(), Confidence::P99);
    }

    #[test]
    fn monotone_on_grid() {
        let margins = [0.01, 0.02, 0.03, 0.05, 0.08, 0.1, 0.2];
        let pops = [1u64, 5, 10, 50, 100, 375, 1000, 14_740, 100_000, 10_000_000];
        let levels = [Confidence::P90, Confidence::P95, Confidence::P99];
        for &c in &levels {
            for &p in &pops {
                for w in margins.windows(2) {
                    assert!(required_sample_size(p, w[1], c).unwrap() <= required_sample_size(p, w[0], c).unwrap());
                }
            }
            for &m in &margins {
                for w in pops.windows(2) {
                    assert!(required_sample_size(w[0], m, c).unwrap() <= required_sample_size(w[1], m, c).unwrap());
                }
            }
        }
        for &m in &margins {
            for &p in &pops {
                for w in levels.windows(2) {
                    assert!(required_sample_size(p, m, w[0]).unwrap() <= required_sample_size(p, m, w[1]).unwrap());
                }
            }
        }
    }
}
