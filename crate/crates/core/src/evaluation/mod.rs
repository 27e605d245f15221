//! Effectiveness and efficiency metrics for minimized suites.

mod fisher;
mod regression;
mod report;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{VersionKey, VersionSuite};
use crate::minimizer::{Chromosome, Minimizer, RunRecord};

pub use fisher::{fisher_exact, FisherTable};
pub use regression::{fit_quadratic, QuadraticFit, SIGNIFICANCE_ALPHA};
pub use report::{
    build_report, ConfigGroup, EvaluationReport, FisherComparison, GridSpec, ProjectRow,
    RegressionEntry, RegressionSet, ReportConfig, StatsBlock, FISHER_UNIT,
};
pub use stats::{describe, quantile, Descriptive};

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("project has no versions")]
    EmptyProject,
    #[error("full suite of {0} has zero total execution time")]
    ZeroTotalTime(VersionKey),
    #[error("degenerate contingency table {0:?}: a margin is zero")]
    DegenerateTable([[u64; 2]; 2]),
    #[error("design matrix is rank deficient: need at least 3 distinct sizes, got {distinct}")]
    RankDeficient { distinct: usize },
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("empty sample")]
    EmptySample,
    #[error("selected index {index} out of range for {key}")]
    IndexOutOfRange { key: VersionKey, index: usize },
    #[error("record for {0} has no matching suite in the corpus")]
    UnknownVersion(VersionKey),
    #[error("duplicate grid cell {0}")]
    DuplicateCell(String),
    #[error("experiment grid incomplete, missing {} cell(s): {}", missing.len(), missing.join(", "))]
    GridIncomplete { missing: Vec<String> },
}

/// Fraction of versions whose fault was detected.
pub fn fdr(detected: &[bool]) -> Result<f64, EvaluationError> {
    if detected.is_empty() {
        return Err(EvaluationError::EmptyProject);
    }
    Ok(detected.iter().filter(|&&d| d).count() as f64 / detected.len() as f64)
}

/// True iff the selection retains at least one failing test.
pub fn detects_fault(suite: &VersionSuite, selected: &Chromosome) -> bool {
    selected
        .indices()
        .iter()
        .any(|&i| suite.tests.get(i).is_some_and(|t| t.fails_on_fault))
}

/// Time saving rate in percent: `(1 - after / before) * 100`.
pub fn tsr(suite: &VersionSuite, selected: &Chromosome) -> Result<f64, EvaluationError> {
    let before = suite.total_time_ms();
    if before <= 0.0 {
        return Err(EvaluationError::ZeroTotalTime(suite.key()));
    }
    let mut after = 0.0;
    for &i in selected.indices() {
        let t = suite
            .tests
            .get(i)
            .ok_or_else(|| EvaluationError::IndexOutOfRange {
                key: suite.key(),
                index: i,
            })?;
        after += t.exec_time_ms;
    }
    Ok((1.0 - after / before) * 100.0)
}

/// Outcome of one (version, budget, run) cell under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionOutcome {
    pub project: String,
    pub version: String,
    pub config: String,
    pub budget: f64,
    pub run: usize,
    pub n_tests: usize,
    pub detected: bool,
    /// `None` when the full suite's execution time is zero.
    pub tsr_percent: Option<f64>,
    pub generations: usize,
    pub prep_time_ms: f64,
    pub search_time_ms: f64,
    pub total_time_ms: f64,
}

impl VersionOutcome {
    pub fn key(&self) -> VersionKey {
        VersionKey::new(&self.project, &self.version)
    }

    pub fn from_record(
        suite: &VersionSuite,
        record: &RunRecord,
        prep_time_ms: f64,
    ) -> Result<Self, EvaluationError> {
        if let Some(&index) = record
            .selected
            .indices()
            .iter()
            .find(|&&i| i >= suite.len())
        {
            return Err(EvaluationError::IndexOutOfRange {
                key: suite.key(),
                index,
            });
        }
        let tsr_percent = match tsr(suite, &record.selected) {
            Ok(v) => Some(v),
            Err(EvaluationError::ZeroTotalTime(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            project: suite.project.clone(),
            version: suite.version.clone(),
            config: config_label(record),
            budget: record.budget,
            run: record.run,
            n_tests: suite.len(),
            detected: detects_fault(suite, &record.selected),
            tsr_percent,
            generations: record.generations,
            prep_time_ms,
            search_time_ms: record.search_time_ms,
            total_time_ms: prep_time_ms + record.search_time_ms,
        })
    }
}

/// Configuration label used to group records: `ga/cos`, `ga/euc`, or
/// `random`, which does not depend on the measure.
pub fn config_label(record: &RunRecord) -> String {
    match record.minimizer {
        Minimizer::Ga => format!("ga/{}", record.measure),
        Minimizer::Random => "random".to_string(),
    }
}
