use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use super::pair_by_id;
use crate::error::Result;
use crate::llm::PredictionRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMode {
    /// Continuity-corrected chi-square with one degree of freedom.
    #[default]
    Corrected,
    /// Two-sided exact binomial test on the discordant pairs.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Only the first set correct.
    pub b: u64,
    /// Only the second set correct.
    pub c: u64,
    pub statistic: f64,
    pub p: f64,
}

/// One row of a pairwise comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pair: [String; 2],
    pub statistic: f64,
    pub p: f64,
    pub stars: String,
}

impl Comparison {
    pub fn new(a: impl Into<String>, b: impl Into<String>, result: &McNemarResult) -> Self {
        Comparison {
            pair: [a.into(), b.into()],
            statistic: result.statistic,
            p: result.p,
            stars: stars(result.p).to_string(),
        }
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Test statistic and p-value from the discordant counts.
pub fn mcnemar_counts(b: u64, c: u64, mode: McNemarMode) -> McNemarResult {
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            b,
            c,
            statistic: 0.0,
            p: 1.0,
        };
    }
    let (statistic, p) = match mode {
        McNemarMode::Corrected => {
            let diff = (b as f64 - c as f64).abs() - 1.0;
            let stat = diff * diff / n as f64;
            let chi = ChiSquared::new(1.0).expect("one degree of freedom is valid");
            (stat, chi.sf(stat))
        }
        McNemarMode::Exact => {
            let low = b.min(c);
            let binom = Binomial::new(0.5, n).expect("p = 0.5 is valid");
            (low as f64, (2.0 * binom.cdf(low)).min(1.0))
        }
    };
    McNemarResult { b, c, statistic, p }
}

/// Paired test between two prediction sets over the same query ids.
/// Parse failures count as wrong.
pub fn mcnemar(a: &[PredictionRecord], b: &[PredictionRecord], mode: McNemarMode) -> Result<McNemarResult> {
    let (mut only_a, mut only_b) = (0, 0);
    for (ra, rb) in pair_by_id(a, b)? {
        match (ra.is_correct(), rb.is_correct()) {
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    Ok(mcnemar_counts(only_a, only_b, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Ideology::*;
    use crate::evaluation::tests::rec;

    #[test]
    fn unit_values() {
        let r = mcnemar_counts(5, 15, McNemarMode::Corrected);
        assert!((r.statistic - 4.05).abs() < 1e-12);
        assert!(r.p < 0.05 && r.p > 0.01);
        assert_eq!(stars(r.p), "*");

        let r = mcnemar_counts(7, 7, McNemarMode::Corrected);
        assert!((r.statistic - 1.0 / 14.0).abs() < 1e-12);
        assert!(r.p > 0.5);
        assert_eq!(stars(r.p), "");

        let r = mcnemar_counts(0, 0, McNemarMode::Corrected);
        assert_eq!((r.statistic, r.p), (0.0, 1.0));

        let r = mcnemar_counts(0, 1, McNemarMode::Corrected);
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
    }

    #[test]
    fn chi_square_survival_matches_tables() {
        let chi = ChiSquared::new(1.0).unwrap();
        let table = [
            (1.0, 0.31731050786291415),
            (3.841458820694124, 0.05),
            (6.634896601021214, 0.01),
            (10.827566170662733, 0.001),
        ];
        for (x, p) in table {
            assert!((chi.sf(x) - p).abs() < 1e-12, "x={x} sf={}", chi.sf(x));
        }
    }

    #[test]
    fn exact_mode() {
        // 2 * P(X <= 1), X ~ Bin(10, 1/2) = 2 * 11 / 1024.
        let r = mcnemar_counts(1, 9, McNemarMode::Exact);
        assert_eq!(r.statistic, 1.0);
        assert!((r.p - 22.0 / 1024.0).abs() < 1e-12);
        assert_eq!(mcnemar_counts(4, 4, McNemarMode::Exact).p, 1.0);
    }

    #[test]
    fn from_records() {
        let a = vec![rec("x", Liberal, Some(Liberal)), rec("y", Neutral, Some(Liberal)), rec("z", Neutral, None)];
        let mut b = a.clone();
        b[1].pred = Some(Neutral);
        let r = mcnemar(&a, &b, McNemarMode::Corrected).unwrap();
        assert_eq!((r.b, r.c, r.statistic, r.p), (0, 1, 0.0, 1.0));
        let r = mcnemar(&a, &a, McNemarMode::Corrected).unwrap();
        assert_eq!((r.statistic, r.p), (0.0, 1.0));
        assert!(mcnemar(&a, &b[..2], McNemarMode::Corrected).is_err());
    }

    #[test]
    fn comparison_json_shape() {
        let c = Comparison::new("A", "B", &mcnemar_counts(5, 15, McNemarMode::Corrected));
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["pair"], serde_json::json!(["A", "B"]));
        assert_eq!(v["stars"], "*");
    }
}
