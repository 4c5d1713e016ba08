//! Output directory with provenance: every JSON artifact is wrapped in an
//! envelope and every CSV starts with a `# config_hash=...` comment line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Identifies the campaign an artifact belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    config_hash: String,
    master_seed: u64,
    artifact: String,
    data: T,
}

#[derive(Deserialize)]
struct Header {
    config_hash: String,
    master_seed: u64,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone)]
pub struct ArtifactDir {
    root: PathBuf,
    provenance: Provenance,
}

impl ArtifactDir {
    /// Creates the directory if needed. An existing directory written by a
    /// different config is refused.
    pub fn open(root: &Path, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
        let dir = Self { root: root.to_path_buf(), provenance };
        let marker = dir.path(PROVENANCE_FILE);
        if marker.exists() {
            let found: Provenance = read_plain(&marker)?;
            dir.check(&marker, &found.config_hash, found.master_seed)?;
        } else {
            let text = serde_json::to_string_pretty(&dir.provenance).expect("provenance serializes") + "\n";
            fs::write(&marker, text).map_err(|e| HarnessError::io(&marker, e))?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    fn check(&self, path: &Path, hash: &str, seed: u64) -> Result<()> {
        if hash != self.provenance.config_hash || seed != self.provenance.master_seed {
            return Err(HarnessError::HashMismatch {
                path: path.to_path_buf(),
                expected: format!("{} (seed {})", self.provenance.config_hash, self.provenance.master_seed),
                found: format!("{hash} (seed {seed})"),
            });
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let env = Envelope {
            config_hash: self.provenance.config_hash.clone(),
            master_seed: self.provenance.master_seed,
            artifact: name.to_string(),
            data,
        };
        let path = self.path(name);
        let text = serde_json::to_string_pretty(&env).map_err(|e| HarnessError::json(&path, e))? + "\n";
        self.write_bytes(name, text.as_bytes())?;
        Ok(path)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let path = self.path(name);
        let text = self.read_text(name)?;
        let header: Header = serde_json::from_str(&text).map_err(|e| HarnessError::json(&path, e))?;
        self.check(&path, &header.config_hash, header.master_seed)?;
        let env: Envelope<T> = serde_json::from_str(&text).map_err(|e| HarnessError::json(&path, e))?;
        Ok(env.data)
    }

    /// Like [`read_json`](Self::read_json) but `None` when the file is absent.
    pub fn read_json_opt<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        if self.exists(name) {
            self.read_json(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn csv_header_line(&self) -> String {
        format!("# config_hash={},master_seed={}\n", self.provenance.config_hash, self.provenance.master_seed)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let text = self.csv_header_line() + &csv_body(header, rows);
        self.write_bytes(name, text.as_bytes())
    }

    /// Data rows of a CSV artifact (header row included), after checking its
    /// provenance line.
    pub fn read_csv(&self, name: &str) -> Result<Vec<Vec<String>>> {
        let path = self.path(name);
        let text = self.read_text(name)?;
        let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
        let meta = first
            .strip_prefix("# config_hash=")
            .and_then(|r| r.split_once(",master_seed="))
            .ok_or_else(|| HarnessError::format(&path, "missing provenance line"))?;
        let seed = meta.1.trim().parse().map_err(|_| HarnessError::format(&path, "bad master_seed"))?;
        self.check(&path, meta.0, seed)?;
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
        reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()).map_err(|e| HarnessError::format(&path, e.to_string())))
            .collect()
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }

    pub fn read_text(&self, name: &str) -> Result<String> {
        let path = self.path(name);
        if !path.exists() {
            return Err(HarnessError::MissingArtifact(path));
        }
        fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))
    }
}

fn read_plain<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::json(path, e))
}

/// RFC 4180 CSV text without a provenance line.
pub fn csv_body(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Shortest decimal that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov(h: &str) -> Provenance {
        Provenance { config_hash: h.into(), master_seed: 7 }
    }

    #[test]
    fn json_round_trip_and_mixing_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ArtifactDir::open(tmp.path(), prov("aa")).unwrap();
        dir.write_json("x.json", &vec![1.5, 2.0]).unwrap();
        let back: Vec<f64> = dir.read_json("x.json").unwrap();
        assert_eq!(back, vec![1.5, 2.0]);
        assert!(matches!(ArtifactDir::open(tmp.path(), prov("bb")), Err(HarnessError::HashMismatch { .. })));

        let other = tempfile::tempdir().unwrap();
        let foreign = ArtifactDir::open(other.path(), prov("bb")).unwrap();
        foreign.write_json("x.json", &vec![0.0]).unwrap();
        fs::copy(foreign.path("x.json"), dir.path("y.json")).unwrap();
        assert!(matches!(dir.read_json::<Vec<f64>>("y.json"), Err(HarnessError::HashMismatch { .. })));
    }

    #[test]
    fn csv_carries_provenance() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ArtifactDir::open(tmp.path(), prov("cc")).unwrap();
        dir.write_csv("t.csv", &["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        let text = fs::read_to_string(dir.path("t.csv")).unwrap();
        assert!(text.starts_with("# config_hash=cc,master_seed=7\n"));
        let rows = dir.read_csv("t.csv").unwrap();
        assert_eq!(rows, vec![vec!["a".to_string(), "b".into()], vec!["1".into(), "x,y".into()]]);
    }

    #[test]
    fn missing_artifact_names_the_file() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = ArtifactDir::open(tmp.path(), prov("dd")).unwrap();
        let err = dir.read_json::<u8>("split.json").unwrap_err();
        assert!(err.to_string().contains("split.json"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2e-5, 0.9121, 1e300] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
