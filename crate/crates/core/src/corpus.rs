//! Test-suite corpora: line-delimited JSON records grouped into per-version suites.
//!
//! Each line of a corpus file describes one test method of one project version:
//!
//! ```text
//! {"project":"Chart","version":"1","test_id":"FooTest::bar","code":"...","fails_on_fault":false,"exec_time_ms":12.5}
//! ```
//!
//! Records are grouped by `(project, version)`. Within a version the file
//! order is the canonical test index used by similarity matrices and
//! chromosomes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("duplicate test id `{test_id}` in version {version}")]
    DuplicateTestId {
        version: VersionKey,
        test_id: String,
    },
    #[error("version {0} has no tests")]
    EmptyVersion(VersionKey),
    #[error("duplicate version {0} in corpus")]
    DuplicateVersion(VersionKey),
}

/// `(project, version)` pair identifying one suite.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionKey {
    pub project: String,
    pub version: String,
}

impl VersionKey {
    pub fn new(project: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            project: project.into(),
            version: version.into(),
        }
    }
}

impl fmt::Display for VersionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.project, self.version)
    }
}

/// One test method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub test_id: String,
    pub code: String,
    pub fails_on_fault: bool,
    pub exec_time_ms: f64,
}

/// All tests of one project version, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionSuite {
    pub project: String,
    pub version: String,
    pub tests: Vec<TestCase>,
}

impl VersionSuite {
    /// Validates the suite invariants and builds it.
    pub fn new(
        project: impl Into<String>,
        version: impl Into<String>,
        tests: Vec<TestCase>,
    ) -> Result<Self, CorpusError> {
        let suite = Self {
            project: project.into(),
            version: version.into(),
            tests,
        };
        suite.validate()?;
        Ok(suite)
    }

    pub fn key(&self) -> VersionKey {
        VersionKey::new(&self.project, &self.version)
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    /// Sum of execution times of every test, in milliseconds.
    pub fn total_time_ms(&self) -> f64 {
        self.tests.iter().map(|t| t.exec_time_ms).sum()
    }

    pub fn failing_indices(&self) -> Vec<usize> {
        self.tests
            .iter()
            .enumerate()
            .filter(|(_, t)| t.fails_on_fault)
            .map(|(i, _)| i)
            .collect()
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.tests.is_empty() {
            return Err(CorpusError::EmptyVersion(self.key()));
        }
        let mut seen = HashSet::with_capacity(self.tests.len());
        for (i, t) in self.tests.iter().enumerate() {
            if t.test_id.is_empty() || t.code.is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line_no: i + 1,
                    reason: "empty test_id or code".into(),
                });
            }
            if !(t.exec_time_ms.is_finite() && t.exec_time_ms >= 0.0) {
                return Err(CorpusError::MalformedRecord {
                    line_no: i + 1,
                    reason: format!(
                        "exec_time_ms must be finite and >= 0, got {}",
                        t.exec_time_ms
                    ),
                });
            }
            if !seen.insert(t.test_id.as_str()) {
                return Err(CorpusError::DuplicateTestId {
                    version: self.key(),
                    test_id: t.test_id.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub source: Option<PathBuf>,
    /// Hex SHA-256 of the raw input bytes.
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub suites: Vec<VersionSuite>,
    pub manifest: CorpusManifest,
}

/// Wire form of one corpus line. Unknown keys are ignored.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    project: String,
    version: String,
    test_id: String,
    code: String,
    fails_on_fault: bool,
    exec_time_ms: f64,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut corpus = parse_corpus(&bytes)?;
    corpus.manifest.source = Some(path.to_path_buf());
    Ok(corpus)
}

/// Parses a corpus from raw bytes. Versions appear in order of first occurrence.
pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line_no = bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        CorpusError::MalformedRecord {
            line_no,
            reason: "invalid UTF-8".into(),
        }
    })?;

    let mut order: Vec<VersionKey> = Vec::new();
    let mut groups: HashMap<VersionKey, Vec<TestCase>> = HashMap::new();
    let mut ids: HashMap<VersionKey, HashSet<String>> = HashMap::new();
    let mut records = 0usize;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line_no,
            reason: e.to_string(),
        })?;
        if rec.project.is_empty() || rec.version.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line_no,
                reason: "empty project or version".into(),
            });
        }
        if rec.test_id.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line_no,
                reason: "empty test_id".into(),
            });
        }
        if rec.code.is_empty() {
            return Err(CorpusError::MalformedRecord {
                line_no,
                reason: "empty code".into(),
            });
        }
        if !(rec.exec_time_ms.is_finite() && rec.exec_time_ms >= 0.0) {
            return Err(CorpusError::MalformedRecord {
                line_no,
                reason: format!(
                    "exec_time_ms must be finite and >= 0, got {}",
                    rec.exec_time_ms
                ),
            });
        }
        let key = VersionKey::new(rec.project, rec.version);
        if !ids
            .entry(key.clone())
            .or_default()
            .insert(rec.test_id.clone())
        {
            return Err(CorpusError::DuplicateTestId {
                version: key,
                test_id: rec.test_id,
            });
        }
        let tests = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            Vec::new()
        });
        tests.push(TestCase {
            test_id: rec.test_id,
            code: rec.code,
            fails_on_fault: rec.fails_on_fault,
            exec_time_ms: rec.exec_time_ms,
        });
        records += 1;
    }

    let suites = order
        .into_iter()
        .map(|key| {
            let tests = groups.remove(&key).unwrap_or_default();
            VersionSuite::new(key.project, key.version, tests)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Corpus {
        suites,
        manifest: CorpusManifest {
            source: None,
            sha256: hex::encode(Sha256::digest(bytes)),
            records,
        },
    })
}

impl Corpus {
    /// Builds a corpus from in-memory suites, rejecting duplicate versions.
    pub fn from_suites(suites: Vec<VersionSuite>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for s in &suites {
            s.validate()?;
            if !seen.insert(s.key()) {
                return Err(CorpusError::DuplicateVersion(s.key()));
            }
        }
        let mut corpus = Self {
            suites,
            manifest: CorpusManifest {
                source: None,
                sha256: String::new(),
                records: 0,
            },
        };
        let bytes = corpus.to_jsonl();
        corpus.manifest.sha256 = hex::encode(Sha256::digest(bytes.as_bytes()));
        corpus.manifest.records = corpus.suites.iter().map(|s| s.len()).sum();
        Ok(corpus)
    }

    /// Serializes back to the line-delimited record format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for suite in &self.suites {
            for t in &suite.tests {
                let rec = Record {
                    project: suite.project.clone(),
                    version: suite.version.clone(),
                    test_id: t.test_id.clone(),
                    code: t.code.clone(),
                    fails_on_fault: t.fails_on_fault,
                    exec_time_ms: t.exec_time_ms,
                };
                // Record holds only strings, bools and finite floats.
                out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn suite(&self, key: &VersionKey) -> Option<&VersionSuite> {
        self.suites
            .iter()
            .find(|s| s.project == key.project && s.version == key.version)
    }

    pub fn projects(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.suites {
            if !out.contains(&s.project) {
                out.push(s.project.clone());
            }
        }
        out
    }
}

/// Number of tests retained for a budget fraction: `round_half_up(budget * n)`
/// clamped to `[1, n - 1]` (or 1 for a single-test suite).
pub fn suite_budget_size(n: usize, budget: f64) -> usize {
    assert!(n >= 1, "suite size must be positive");
    assert!(
        budget > 0.0 && budget < 1.0,
        "budget must lie in (0, 1), got {budget}"
    );
    if n == 1 {
        return 1;
    }
    let raw = (budget * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}
