//! Binary embedding files and the provider that serves them.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LTME" | u32 version = 1 | u32 dim = 768 | u32 count
//! count x ( u16 id_len | id bytes (UTF-8) | 768 x f32 )
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{
    EmbeddedBatch, Embedding, EmbeddingError, EmbeddingProvider, EmbeddingSet,
    ProviderCapabilities, EMBEDDING_DIM,
};
use crate::corpus::{TestCase, VersionSuite};

const MAGIC: &[u8; 4] = b"LTME";
const VERSION: u32 = 1;

pub fn write_embeddings<W: Write>(set: &EmbeddingSet, mut w: W) -> Result<(), EmbeddingError> {
    let count = u32::try_from(set.len()).map_err(|_| EmbeddingError::CorruptFile {
        offset: 12,
        reason: "too many records".into(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(EMBEDDING_DIM as u32).to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for (id, e) in set.entries() {
        let len = u16::try_from(id.len()).map_err(|_| EmbeddingError::CorruptFile {
            offset: 0,
            reason: format!("test id longer than {} bytes: {id}", u16::MAX),
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        let mut buf = Vec::with_capacity(EMBEDDING_DIM * 4);
        for v in e.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn store_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(path)?;
    write_embeddings(set, std::io::BufWriter::new(file))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbeddingError> {
        if self.bytes.len() - self.pos < n {
            return Err(EmbeddingError::CorruptFile {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, EmbeddingError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses an embedding file. The returned set carries `model_tag` and a zero
/// `prep_time_ms`; neither is stored on disk.
pub fn read_embeddings<R: Read>(mut r: R, model_tag: &str) -> Result<EmbeddingSet, EmbeddingError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if c.take(4, "magic")? != MAGIC {
        return Err(EmbeddingError::CorruptFile {
            offset: 0,
            reason: "bad magic".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(EmbeddingError::CorruptFile {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let dim = c.u32("dim")? as usize;
    if dim != EMBEDDING_DIM {
        return Err(EmbeddingError::DimensionMismatch { got: dim });
    }
    let count = c.u32("count")? as usize;

    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = c.pos as u64;
        let len = c.take(2, "id length")?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let id = std::str::from_utf8(c.take(len, "id")?)
            .map_err(|_| EmbeddingError::CorruptFile {
                offset: at + 2,
                reason: "id is not UTF-8".into(),
            })?
            .to_string();
        let raw = c.take(EMBEDDING_DIM * 4, "vector")?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let e = Embedding::new(values).map_err(|e| EmbeddingError::CorruptFile {
            offset: at,
            reason: e.to_string(),
        })?;
        entries.push((id, e));
    }
    if c.pos != bytes.len() {
        return Err(EmbeddingError::CorruptFile {
            offset: c.pos as u64,
            reason: "trailing bytes".into(),
        });
    }
    EmbeddingSet::new(model_tag, entries, 0.0)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, EmbeddingError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_embeddings(
        std::io::BufReader::new(file),
        &format!("file:{}", path.display()),
    )
}

/// Serves precomputed vectors by test id.
///
/// Backed either by a single file used for every version, or by a directory
/// laid out as `<dir>/<project>/<version>.ltme`.
pub struct FileProvider {
    root: PathBuf,
    caps: ProviderCapabilities,
    cache: Mutex<HashMap<PathBuf, std::sync::Arc<EmbeddingSet>>>,
}

impl FileProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            caps: ProviderCapabilities {
                model_tag: format!("file:{}", root.display()),
                max_batch: usize::MAX,
                deterministic: true,
                max_concurrent: usize::MAX,
            },
            root,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn path_for(&self, suite: &VersionSuite) -> PathBuf {
        if self.root.is_dir() {
            version_file(&self.root, &suite.project, &suite.version)
        } else {
            self.root.clone()
        }
    }

    fn set_for(
        &self,
        suite: &VersionSuite,
    ) -> Result<std::sync::Arc<EmbeddingSet>, EmbeddingError> {
        let path = self.path_for(suite);
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(set) = cache.get(&path) {
            return Ok(set.clone());
        }
        let set = std::sync::Arc::new(load_embeddings(&path).map_err(|e| match e {
            EmbeddingError::Io(io) => {
                EmbeddingError::ProviderUnavailable(format!("cannot open {}: {io}", path.display()))
            }
            other => other,
        })?);
        cache.insert(path, set.clone());
        Ok(set)
    }
}

/// Canonical file name for one version's vectors under `dir`.
pub(crate) fn version_file(dir: &Path, project: &str, version: &str) -> PathBuf {
    dir.join(sanitize(project))
        .join(format!("{}.ltme", sanitize(version)))
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl EmbeddingProvider for FileProvider {
    fn capabilities(&self) -> &ProviderCapabilities {
        &self.caps
    }

    fn embed_batch(
        &self,
        suite: &VersionSuite,
        tests: &[TestCase],
    ) -> Result<EmbeddedBatch, EmbeddingError> {
        let set = self.set_for(suite)?;
        Ok(EmbeddedBatch {
            vectors: tests.iter().map(|t| set.get(&t.test_id).cloned()).collect(),
            truncated: vec![false; tests.len()],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{embed_suite, hash_embed};

    fn two_vector_set() -> EmbeddingSet {
        let mut v = vec![0.0f32; EMBEDDING_DIM];
        v[0] = 1.5;
        v[767] = -2.25e-7;
        EmbeddingSet::new(
            "t",
            vec![
                ("alpha".into(), Embedding::new(v).unwrap()),
                ("βeta::test".into(), hash_embed("assertNull(x);").unwrap()),
            ],
            0.0,
        )
        .unwrap()
    }

    fn encode(set: &EmbeddingSet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_embeddings(set, &mut buf).unwrap();
        buf
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/set.ltme");
        let set = two_vector_set();
        store_embeddings(&set, &path).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.entries(), set.entries());
    }

    #[test]
    fn header_layout_is_exact() {
        let buf = encode(&two_vector_set());
        assert_eq!(&buf[0..4], b"LTME");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &768u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..18], &5u16.to_le_bytes());
        assert_eq!(&buf[18..23], b"alpha");
        assert_eq!(&buf[23..27], &1.5f32.to_le_bytes());
        let id2 = "βeta::test".len();
        assert_eq!(buf.len(), 16 + 2 * (2 + 768 * 4) + 5 + id2);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let buf = encode(&two_vector_set());
        let cut = &buf[..buf.len() - 10];
        match read_embeddings(cut, "t") {
            Err(EmbeddingError::CorruptFile { offset, .. }) => {
                assert!(offset > 16 && (offset as usize) < cut.len())
            }
            other => panic!("expected CorruptFile, got {other:?}"),
        }
        assert!(matches!(
            read_embeddings(&buf[..10], "t"),
            Err(EmbeddingError::CorruptFile { offset: 8, .. })
        ));
    }

    #[test]
    fn wrong_dim_and_magic() {
        let mut buf = encode(&two_vector_set());
        buf[8..12].copy_from_slice(&512u32.to_le_bytes());
        assert!(matches!(
            read_embeddings(&buf[..], "t"),
            Err(EmbeddingError::DimensionMismatch { got: 512 })
        ));
        buf[0] = b'X';
        assert!(matches!(
            read_embeddings(&buf[..], "t"),
            Err(EmbeddingError::CorruptFile { offset: 0, .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = encode(&two_vector_set());
        buf.push(0);
        assert!(matches!(
            read_embeddings(&buf[..], "t"),
            Err(EmbeddingError::CorruptFile { .. })
        ));
    }

    #[test]
    fn file_provider_reports_missing_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.ltme");
        let set = EmbeddingSet::new(
            "t",
            vec![
                ("a".into(), hash_embed("x").unwrap()),
                ("b".into(), hash_embed("y").unwrap()),
            ],
            0.0,
        )
        .unwrap();
        store_embeddings(&set, &path).unwrap();

        let tests = ["a", "b", "c"]
            .iter()
            .map(|id| TestCase {
                test_id: id.to_string(),
                code: "x".into(),
                fails_on_fault: false,
                exec_time_ms: 0.0,
            })
            .collect();
        let suite = VersionSuite::new("P", "1", tests).unwrap();
        match embed_suite(&FileProvider::new(&path), &suite) {
            Err(EmbeddingError::PartialResult { missing }) => assert_eq!(missing, vec!["c"]),
            other => panic!("expected PartialResult, got {other:?}"),
        }
    }

    #[test]
    fn file_provider_directory_layout() {
        let dir = tempfile::tempdir().unwrap();
        let tests = vec![TestCase {
            test_id: "a".into(),
            code: "x".into(),
            fails_on_fault: false,
            exec_time_ms: 0.0,
        }];
        let suite = VersionSuite::new("Proj X", "1b", tests).unwrap();
        let set =
            EmbeddingSet::new("t", vec![("a".into(), hash_embed("z").unwrap())], 0.0).unwrap();
        store_embeddings(&set, version_file(dir.path(), "Proj X", "1b")).unwrap();
        let got = embed_suite(&FileProvider::new(dir.path()), &suite).unwrap();
        assert_eq!(got.get("a"), set.get("a"));

        let other = VersionSuite::new("Proj X", "2", suite.tests.clone()).unwrap();
        assert!(matches!(
            embed_suite(&FileProvider::new(dir.path()), &other),
            Err(EmbeddingError::ProviderUnavailable(_))
        ));
    }
}
