//! Pair manifests: CSV with header `clean,noisy,snr`. Relative paths are
//! resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{data, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub clean: String,
    pub noisy: String,
    /// Mixing SNR in dB, when known.
    pub snr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    base: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| data(path.display(), e))?;
        let headers = reader.headers().map_err(|e| data(path.display(), e))?.clone();
        if headers.get(0) != Some("clean") || headers.get(1) != Some("noisy") {
            return Err(data(path.display(), "header must start with clean,noisy"));
        }
        let rows = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| data(format!("{} row {}", path.display(), i + 1), e)))
            .collect::<CliResult<Vec<ManifestRow>>>()?;
        Ok(Manifest {
            rows,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn write(path: &Path, rows: &[ManifestRow]) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| data(path.display(), e))?;
        for r in rows {
            w.serialize(r).map_err(|e| data(path.display(), e))?;
        }
        w.flush().map_err(|e| data(path.display(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            ManifestRow {
                clean: "c/0.wav".into(),
                noisy: "n/0.wav".into(),
                snr: Some(5.0),
            },
            ManifestRow {
                clean: "/abs/c.wav".into(),
                noisy: "n/1.wav".into(),
                snr: None,
            },
        ];
        Manifest::write(&path, &rows).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.rows, rows);
        assert_eq!(m.resolve("c/0.wav"), dir.path().join("c/0.wav"));
        assert_eq!(m.resolve("/abs/c.wav"), PathBuf::from("/abs/c.wav"));
    }

    #[test]
    fn bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a,b\nx,y\n").unwrap();
        assert!(Manifest::read(&path).is_err());
        std::fs::write(&path, "clean,noisy,snr\nx,y,loud\n").unwrap();
        assert!(Manifest::read(&path).is_err());
        assert!(Manifest::read(&dir.path().join("missing.csv")).is_err());
    }
}
