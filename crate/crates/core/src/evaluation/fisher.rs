use statrs::function::factorial::ln_binomial;

use super::EvaluationError;

/// `[[a, b], [c, d]]` counts, rows = configurations, columns = detected / missed.
pub type FisherTable = [[u64; 2]; 2];

/// Relative tolerance when comparing point probabilities against the
/// observed table's, so equal-probability tables are not lost to rounding.
const TIE_SLACK: f64 = 1e-7;

/// Two-sided Fisher exact test: sums the hypergeometric probabilities of all
/// tables with the observed margins that are no more likely than the
/// observed one.
pub fn fisher_exact(table: FisherTable) -> Result<f64, EvaluationError> {
    let [[a, b], [c, d]] = table;
    let row1 = a + b;
    let row2 = c + d;
    let col1 = a + c;
    let col2 = b + d;
    if row1 == 0 || row2 == 0 || col1 == 0 || col2 == 0 {
        return Err(EvaluationError::DegenerateTable(table));
    }
    let total = row1 + row2;
    let ln_denominator = ln_binomial(total, col1);
    let ln_p = |x: u64| ln_binomial(row1, x) + ln_binomial(row2, col1 - x) - ln_denominator;

    let lo = col1.saturating_sub(row2);
    let hi = row1.min(col1);
    let observed = ln_p(a);
    let threshold = observed + TIE_SLACK.ln_1p();
    let p: f64 = (lo..=hi)
        .map(ln_p)
        .filter(|&lp| lp <= threshold)
        .map(f64::exp)
        .sum();
    Ok(p.min(1.0))
}
