use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    describe, fdr, fisher_exact, fit_quadratic, Descriptive, EvaluationError, QuadraticFit,
    VersionOutcome, SIGNIFICANCE_ALPHA,
};
use crate::corpus::VersionKey;

pub const FISHER_UNIT: &str = "detection outcomes pooled over every (version, run) cell of the \
compared configurations at the same budget, across all projects";

const QUANTILE_METHOD: &str = "linear interpolation between closest ranks, h = (n - 1) q";

/// Expected experiment grid; missing cells are an error unless `partial`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub versions: Vec<VersionKey>,
    pub configs: Vec<String>,
    pub budgets: Vec<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub config_hash: String,
    pub grid: Option<GridSpec>,
    pub partial: bool,
    /// Pairs of configuration labels to compare; empty means every pair.
    pub comparisons: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRow {
    pub project: String,
    pub versions: usize,
    pub runs: usize,
    /// Mean over runs of the per-run FDR.
    pub fdr: f64,
    pub fdr_per_run: Vec<f64>,
    /// Mean per-version minimization time (preparation + search).
    pub mt_minutes: f64,
    pub prep_minutes: f64,
    pub search_minutes: f64,
    /// `None` when every version of the project has zero total time.
    pub tsr_percent: Option<f64>,
    pub zero_time_versions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBlock {
    pub fdr: Descriptive,
    pub mt_minutes: Descriptive,
    pub tsr_percent: Option<Descriptive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEntry {
    pub points: usize,
    pub fit: Option<QuadraticFit>,
    pub quadratic_significant: Option<bool>,
    pub error: Option<String>,
}

impl RegressionEntry {
    fn from_points(points: &[(f64, f64)]) -> Self {
        match fit_quadratic(points) {
            Ok(fit) => Self {
                points: points.len(),
                quadratic_significant: Some(fit.quadratic_significant(SIGNIFICANCE_ALPHA)),
                fit: Some(fit),
                error: None,
            },
            Err(e) => Self {
                points: points.len(),
                fit: None,
                quadratic_significant: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Time in minutes against suite size, one point per version (mean over runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSet {
    pub prep: RegressionEntry,
    pub search: RegressionEntry,
    pub total: RegressionEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigGroup {
    pub config: String,
    pub budget: f64,
    pub projects: Vec<ProjectRow>,
    pub stats: StatsBlock,
    pub regressions: RegressionSet,
    pub mean_generations: f64,
    pub max_generations: usize,
    /// Versions excluded from TSR aggregates because their full suite takes 0 ms.
    pub zero_time_versions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherComparison {
    pub budget: f64,
    pub config_a: String,
    pub config_b: String,
    /// `[[detected_a, missed_a], [detected_b, missed_b]]`
    pub table: [[u64; 2]; 2],
    pub p_value: f64,
    /// A margin was zero; `p_value` is 1 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub partial: bool,
    pub fisher_unit: String,
    pub quantile_method: String,
    pub significance_alpha: f64,
    pub groups: Vec<ConfigGroup>,
    pub fisher: Vec<FisherComparison>,
    pub missing_cells: Vec<String>,
}

fn cell_label(config: &str, budget: f64, key: &VersionKey, run: usize) -> String {
    format!("{config}@{budget}:{key}#{run}")
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn ms_to_minutes(ms: f64) -> f64 {
    ms / 60_000.0
}

type GroupKey = (String, u64);

fn group_key(o: &VersionOutcome) -> GroupKey {
    (o.config.clone(), o.budget.to_bits())
}

fn project_row(project: &str, outcomes: &[&VersionOutcome]) -> Result<ProjectRow, EvaluationError> {
    let mut by_run: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for o in outcomes {
        by_run.entry(o.run).or_default().push(o.detected);
    }
    let fdr_per_run = by_run
        .values()
        .map(|flags| fdr(flags))
        .collect::<Result<Vec<_>, _>>()?;
    let fdr_mean = mean(fdr_per_run.iter().copied()).ok_or(EvaluationError::EmptyProject)?;
    let versions: BTreeSet<&str> = outcomes.iter().map(|o| o.version.as_str()).collect();
    let zero_time: BTreeSet<&str> = outcomes
        .iter()
        .filter(|o| o.tsr_percent.is_none())
        .map(|o| o.version.as_str())
        .collect();
    Ok(ProjectRow {
        project: project.to_string(),
        versions: versions.len(),
        runs: by_run.len(),
        fdr: fdr_mean,
        fdr_per_run,
        mt_minutes: ms_to_minutes(mean(outcomes.iter().map(|o| o.total_time_ms)).unwrap_or(0.0)),
        prep_minutes: ms_to_minutes(mean(outcomes.iter().map(|o| o.prep_time_ms)).unwrap_or(0.0)),
        search_minutes: ms_to_minutes(
            mean(outcomes.iter().map(|o| o.search_time_ms)).unwrap_or(0.0),
        ),
        tsr_percent: mean(outcomes.iter().filter_map(|o| o.tsr_percent)),
        zero_time_versions: zero_time.len(),
    })
}

fn regressions(outcomes: &[&VersionOutcome]) -> RegressionSet {
    let mut per_version: BTreeMap<VersionKey, (usize, Vec<&VersionOutcome>)> = BTreeMap::new();
    for o in outcomes {
        per_version
            .entry(o.key())
            .or_insert_with(|| (o.n_tests, Vec::new()))
            .1
            .push(o);
    }
    let series = |f: fn(&VersionOutcome) -> f64| -> Vec<(f64, f64)> {
        per_version
            .values()
            .map(|(n, os)| {
                let t = mean(os.iter().map(|o| f(o))).unwrap_or(0.0);
                (*n as f64, ms_to_minutes(t))
            })
            .collect()
    };
    RegressionSet {
        prep: RegressionEntry::from_points(&series(|o| o.prep_time_ms)),
        search: RegressionEntry::from_points(&series(|o| o.search_time_ms)),
        total: RegressionEntry::from_points(&series(|o| o.total_time_ms)),
    }
}

fn config_group(
    config: &str,
    budget: f64,
    outcomes: &[&VersionOutcome],
) -> Result<ConfigGroup, EvaluationError> {
    let mut by_project: BTreeMap<&str, Vec<&VersionOutcome>> = BTreeMap::new();
    for o in outcomes {
        by_project.entry(o.project.as_str()).or_default().push(o);
    }
    let projects = by_project
        .iter()
        .map(|(p, os)| project_row(p, os))
        .collect::<Result<Vec<_>, _>>()?;

    let fdrs: Vec<f64> = projects.iter().map(|p| p.fdr).collect();
    let mts: Vec<f64> = projects.iter().map(|p| p.mt_minutes).collect();
    let tsrs: Vec<f64> = projects.iter().filter_map(|p| p.tsr_percent).collect();
    let stats = StatsBlock {
        fdr: describe(&fdrs)?,
        mt_minutes: describe(&mts)?,
        tsr_percent: describe(&tsrs).ok(),
    };

    let zero_time_versions: BTreeSet<String> = outcomes
        .iter()
        .filter(|o| o.tsr_percent.is_none())
        .map(|o| o.key().to_string())
        .collect();

    Ok(ConfigGroup {
        config: config.to_string(),
        budget,
        projects,
        stats,
        regressions: regressions(outcomes),
        mean_generations: mean(outcomes.iter().map(|o| o.generations as f64)).unwrap_or(0.0),
        max_generations: outcomes.iter().map(|o| o.generations).max().unwrap_or(0),
        zero_time_versions: zero_time_versions.into_iter().collect(),
    })
}

fn fisher_comparison(
    budget: f64,
    a: (&str, &[&VersionOutcome]),
    b: (&str, &[&VersionOutcome]),
) -> FisherComparison {
    let count = |os: &[&VersionOutcome]| {
        let detected = os.iter().filter(|o| o.detected).count() as u64;
        [detected, os.len() as u64 - detected]
    };
    let table = [count(a.1), count(b.1)];
    let (p_value, degenerate) = match fisher_exact(table) {
        Ok(p) => (p, false),
        Err(_) => (1.0, true),
    };
    FisherComparison {
        budget,
        config_a: a.0.to_string(),
        config_b: b.0.to_string(),
        table,
        p_value,
        degenerate,
    }
}

fn missing_cells(
    grid: &GridSpec,
    present: &BTreeSet<(String, u64, VersionKey, usize)>,
) -> Vec<String> {
    let mut missing = Vec::new();
    for config in &grid.configs {
        for &budget in &grid.budgets {
            for key in &grid.versions {
                for run in 0..grid.runs {
                    let cell = (config.clone(), budget.to_bits(), key.clone(), run);
                    if !present.contains(&cell) {
                        missing.push(cell_label(config, budget, key, run));
                    }
                }
            }
        }
    }
    missing
}

/// Aggregates outcomes per (configuration, budget). Duplicate cells are
/// rejected; cells outside a declared grid are ignored only in partial mode.
pub fn build_report(
    outcomes: &[VersionOutcome],
    config: &ReportConfig,
) -> Result<EvaluationReport, EvaluationError> {
    let mut present = BTreeSet::new();
    for o in outcomes {
        if !present.insert((o.config.clone(), o.budget.to_bits(), o.key(), o.run)) {
            return Err(EvaluationError::DuplicateCell(cell_label(
                &o.config,
                o.budget,
                &o.key(),
                o.run,
            )));
        }
    }
    let missing = match &config.grid {
        Some(grid) => {
            let missing = missing_cells(grid, &present);
            if !missing.is_empty() && !config.partial {
                return Err(EvaluationError::GridIncomplete { missing });
            }
            missing
        }
        None => Vec::new(),
    };

    let mut groups: BTreeMap<GroupKey, Vec<&VersionOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry(group_key(o)).or_default().push(o);
    }

    let mut report_groups = Vec::with_capacity(groups.len());
    for ((cfg, bits), os) in &groups {
        report_groups.push(config_group(cfg, f64::from_bits(*bits), os)?);
    }
    report_groups.sort_by(|a, b| a.budget.total_cmp(&b.budget).then(a.config.cmp(&b.config)));

    let budgets: BTreeSet<u64> = groups.keys().map(|(_, b)| *b).collect();
    let mut fisher = Vec::new();
    for bits in budgets {
        let at_budget: BTreeMap<&str, &[&VersionOutcome]> = groups
            .iter()
            .filter(|((_, b), _)| *b == bits)
            .map(|((c, _), os)| (c.as_str(), os.as_slice()))
            .collect();
        let pairs: Vec<(String, String)> = if config.comparisons.is_empty() {
            let names: Vec<&str> = at_budget.keys().copied().collect();
            names
                .iter()
                .enumerate()
                .flat_map(|(i, a)| {
                    names[i + 1..]
                        .iter()
                        .map(|b| (a.to_string(), b.to_string()))
                })
                .collect()
        } else {
            config.comparisons.clone()
        };
        for (a, b) in pairs {
            if let (Some(oa), Some(ob)) = (at_budget.get(a.as_str()), at_budget.get(b.as_str())) {
                fisher.push(fisher_comparison(f64::from_bits(bits), (&a, oa), (&b, ob)));
            }
        }
    }

    Ok(EvaluationReport {
        config_hash: config.config_hash.clone(),
        partial: config.partial,
        fisher_unit: FISHER_UNIT.to_string(),
        quantile_method: QUANTILE_METHOD.to_string(),
        significance_alpha: SIGNIFICANCE_ALPHA,
        groups: report_groups,
        fisher,
        missing_cells: missing,
    })
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

impl EvaluationReport {
    pub fn group(&self, config: &str, budget: f64) -> Option<&ConfigGroup> {
        self.groups
            .iter()
            .find(|g| g.config == config && g.budget.to_bits() == budget.to_bits())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Wide table: one row per project, then the descriptive-statistics rows;
    /// three columns (FDR, MT minutes, TSR percent) per configuration and
    /// budget. FDR and TSR are rounded to two decimals, MT to four; empty cells
    /// mean NA.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["project".to_string()];
        for g in &self.groups {
            let tag = format!("{}@{}", g.config, g.budget);
            header.push(format!("{tag} FDR"));
            header.push(format!("{tag} MT_min"));
            header.push(format!("{tag} TSR_pct"));
        }
        out.write_record(&header)?;

        let projects: BTreeSet<&str> = self
            .groups
            .iter()
            .flat_map(|g| g.projects.iter().map(|p| p.project.as_str()))
            .collect();
        for project in projects {
            let mut row = vec![project.to_string()];
            for g in &self.groups {
                match g.projects.iter().find(|p| p.project == project) {
                    Some(p) => {
                        row.push(fmt2(p.fdr));
                        row.push(fmt4(p.mt_minutes));
                        row.push(p.tsr_percent.map(fmt2).unwrap_or_default());
                    }
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            out.write_record(&row)?;
        }

        type Pick = fn(&Descriptive) -> f64;
        let stat_rows: [(&str, Pick); 6] = [
            ("Min", |d| d.min),
            ("25%", |d| d.q25),
            ("Mean", |d| d.mean),
            ("Median", |d| d.median),
            ("75%", |d| d.q75),
            ("Max", |d| d.max),
        ];
        for (name, pick) in stat_rows {
            let mut row = vec![name.to_string()];
            for g in &self.groups {
                row.push(fmt2(pick(&g.stats.fdr)));
                row.push(fmt4(pick(&g.stats.mt_minutes)));
                row.push(
                    g.stats
                        .tsr_percent
                        .as_ref()
                        .map(|d| fmt2(pick(d)))
                        .unwrap_or_default(),
                );
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(
        project: &str,
        version: &str,
        config: &str,
        run: usize,
        detected: bool,
    ) -> VersionOutcome {
        VersionOutcome {
            project: project.into(),
            version: version.into(),
            config: config.into(),
            budget: 0.5,
            run,
            n_tests: 10,
            detected,
            tsr_percent: Some(50.0),
            generations: 12,
            prep_time_ms: 60_000.0,
            search_time_ms: 30_000.0,
            total_time_ms: 90_000.0,
        }
    }

    #[test]
    fn two_versions_one_run() {
        let os = vec![
            outcome("P", "1", "ga/cos", 0, true),
            outcome("P", "2", "ga/cos", 0, false),
        ];
        let r = build_report(&os, &ReportConfig::default()).unwrap();
        let g = r.group("ga/cos", 0.5).unwrap();
        assert_eq!(g.projects[0].fdr, 0.5);
        assert_eq!(g.projects[0].mt_minutes, 1.5);
        assert_eq!(g.stats.fdr.median, 0.5);
        assert_eq!(r.fisher_unit, FISHER_UNIT);
    }

    #[test]
    fn worked_example_reports_081() {
        let mut os = Vec::new();
        for run in 0..10 {
            for v in 0..26 {
                os.push(outcome("Lang", &v.to_string(), "ga/cos", run, v < 21));
            }
        }
        let r = build_report(&os, &ReportConfig::default()).unwrap();
        let row = &r.group("ga/cos", 0.5).unwrap().projects[0];
        assert!((row.fdr - 21.0 / 26.0).abs() < 1e-12);
        assert_eq!(row.fdr_per_run.len(), 10);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let lang = csv.lines().find(|l| l.starts_with("Lang,")).unwrap();
        assert_eq!(lang, "Lang,0.81,1.5000,50.00");
        assert_eq!(csv.lines().count(), 1 + 1 + 6);
    }

    #[test]
    fn identical_configs_fisher_one() {
        let mut os = Vec::new();
        for cfg in ["ga/cos", "ga/euc"] {
            for v in 0..6 {
                os.push(outcome("P", &v.to_string(), cfg, 0, v % 2 == 0));
            }
        }
        let r = build_report(&os, &ReportConfig::default()).unwrap();
        assert_eq!(r.fisher.len(), 1);
        assert!((r.fisher[0].p_value - 1.0).abs() < 1e-12);
        assert!(!r.fisher[0].degenerate);
    }

    #[test]
    fn all_detected_is_degenerate_fisher() {
        let os = vec![
            outcome("P", "1", "a", 0, true),
            outcome("P", "1", "b", 0, true),
        ];
        let r = build_report(&os, &ReportConfig::default()).unwrap();
        assert!(r.fisher[0].degenerate);
        assert_eq!(r.fisher[0].p_value, 1.0);
    }

    #[test]
    fn grid_completeness() {
        let os = vec![outcome("P", "1", "ga/cos", 0, true)];
        let grid = GridSpec {
            versions: vec![VersionKey::new("P", "1")],
            configs: vec!["ga/cos".into()],
            budgets: vec![0.5],
            runs: 2,
        };
        let cfg = ReportConfig {
            grid: Some(grid),
            ..Default::default()
        };
        match build_report(&os, &cfg) {
            Err(EvaluationError::GridIncomplete { missing }) => {
                assert_eq!(missing, vec!["ga/cos@0.5:P/1#1".to_string()])
            }
            other => panic!("{other:?}"),
        }
        let partial = ReportConfig {
            partial: true,
            ..cfg
        };
        let r = build_report(&os, &partial).unwrap();
        assert_eq!(r.missing_cells.len(), 1);
        assert!(r.partial);
    }

    #[test]
    fn duplicate_cells_rejected() {
        let os = vec![
            outcome("P", "1", "ga/cos", 0, true),
            outcome("P", "1", "ga/cos", 0, false),
        ];
        assert!(matches!(
            build_report(&os, &ReportConfig::default()),
            Err(EvaluationError::DuplicateCell(_))
        ));
    }

    #[test]
    fn zero_time_versions_excluded_from_tsr() {
        let mut a = outcome("P", "1", "ga/cos", 0, true);
        a.tsr_percent = None;
        let mut b = outcome("P", "2", "ga/cos", 0, true);
        b.tsr_percent = Some(20.0);
        let r = build_report(&[a, b], &ReportConfig::default()).unwrap();
        let g = r.group("ga/cos", 0.5).unwrap();
        assert_eq!(g.projects[0].tsr_percent, Some(20.0));
        assert_eq!(g.projects[0].zero_time_versions, 1);
        assert_eq!(g.zero_time_versions, vec!["P/1".to_string()]);
    }

    #[test]
    fn fdr_invariant_under_version_permutation() {
        let mut os: Vec<_> = (0..9)
            .map(|v| outcome("P", &v.to_string(), "c", 0, v % 3 == 0))
            .collect();
        let a = build_report(&os, &ReportConfig::default()).unwrap();
        os.reverse();
        let b = build_report(&os, &ReportConfig::default()).unwrap();
        assert_eq!(a.groups[0].projects[0].fdr, b.groups[0].projects[0].fdr);
    }
}
