//! Accuracy, UAR, confusion matrices and the one-tailed two-proportion
//! z-test used for significance reporting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// K x K counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Metrics(format!("{} counts for a {k}x{k} matrix", counts.len())));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        if true_class >= self.k || predicted >= self.k {
            return Err(Error::Metrics(format!(
                "class pair ({true_class}, {predicted}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[true_class * self.k + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        self.counts[true_class * self.k..(true_class + 1) * self.k].iter().sum()
    }

    /// CSV grid, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.k {
            let row: Vec<String> =
                (0..self.k).map(|c| self.counts[r * self.k + c].to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Unweighted average recall: mean over classes of diagonal / row sum.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    let k = cm.num_classes();
    let mut sum = 0.0;
    for c in 0..k {
        let support = cm.row_sum(c);
        if support == 0 {
            return Err(Error::Metrics(format!("class {c} has no test samples")));
        }
        sum += cm.count(c, c) as f64 / support as f64;
    }
    Ok(sum / k as f64)
}

/// Weighted average recall: trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Metrics("empty confusion matrix".into()));
    }
    let trace: u64 = (0..cm.num_classes()).map(|c| cm.count(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// erf via Maclaurin series for small |x| and a Lentz continued fraction for
/// the complementary function at large |x|; accurate to well under 1e-7.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 6.0 {
        return 1.0;
    }
    if x <= 2.0 {
        // erf(x) = 2/sqrt(pi) * sum_{n} (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-17 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        1.0 - erfc_cf(x)
    }
}

/// erfc(x) for x >= 2 by the Laplace continued fraction
/// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
/// evaluated by backward recursion.
fn erfc_cf(x: f64) -> f64 {
    let mut tail = 0.0;
    for n in (1..=80).rev() {
        tail = (n as f64 / 2.0) / (x + tail);
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + tail)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Pooled two-proportion z statistic with the one-tailed upper-tail p-value
/// for the alternative "proportion b exceeds proportion a".
///
/// A degenerate pooled proportion (0 or 1) has zero variance; p is defined as
/// 1 when the proportions are equal and 0 otherwise.
pub fn one_tailed_z_test(
    successes_a: u64,
    n_a: u64,
    successes_b: u64,
    n_b: u64,
) -> Result<(f64, f64)> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Metrics("z-test needs non-empty groups".into()));
    }
    if successes_a > n_a || successes_b > n_b {
        return Err(Error::Metrics("successes exceed group size".into()));
    }
    let pa = successes_a as f64 / n_a as f64;
    let pb = successes_b as f64 / n_b as f64;
    let pooled = (successes_a + successes_b) as f64 / (n_a + n_b) as f64;
    if pooled == 0.0 || pooled == 1.0 {
        let p = if pa == pb { 1.0 } else { 0.0 };
        let z = if pa == pb { 0.0 } else { f64::INFINITY };
        return Ok((z, p));
    }
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let z = (pb - pa) / se;
    Ok((z, 1.0 - normal_cdf(z)))
}

/// Evaluation condition of a metrics record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Original,
    Randomised,
    Adversarial,
    RandomisedAdversarial,
}

impl Condition {
    pub const ALL: [Condition; 4] =
        [Condition::Original, Condition::Randomised, Condition::Adversarial, Condition::RandomisedAdversarial];

    pub fn name(&self) -> &'static str {
        match self {
            Condition::Original => "original",
            Condition::Randomised => "randomised",
            Condition::Adversarial => "adversarial",
            Condition::RandomisedAdversarial => "randomised_adversarial",
        }
    }

    pub fn is_adversarial(&self) -> bool {
        matches!(self, Condition::Adversarial | Condition::RandomisedAdversarial)
    }
}

/// Per-evaluation summary written to the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: usize,
    pub condition: Condition,
    /// Attack family name for adversarial conditions, "none" otherwise.
    pub attack: String,
    pub uar: f64,
    pub accuracy: f64,
    pub mean_perturbation_norm: Option<f64>,
    pub attack_success_rate: Option<f64>,
    pub confusion: ConfusionMatrix,
}

pub const RUN_LOG_HEADER: &str =
    "round,condition,attack,uar,accuracy,mean_perturbation_norm,attack_success_rate";

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: &Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{:.6},{},{}",
            self.round,
            self.condition.name(),
            self.attack,
            self.uar,
            self.accuracy,
            opt(&self.mean_perturbation_norm),
            opt(&self.attack_success_rate),
        )
    }
}
