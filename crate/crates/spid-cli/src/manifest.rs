use std::path::{Path, PathBuf};

use serde::Deserialize;
use spid_chain::sim::Emit;

/// Seeds to run each scenario with.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    /// `count` consecutive seeds starting at the scenario's own `seed`.
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn expand(&self, base: u64) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).map(|i| base.wrapping_add(i)).collect(),
            Seeds::List(v) => v.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Seeds::Count(n) => *n == 0,
            Seeds::List(v) => v.is_empty(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(1)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Scenario files, relative to the manifest's directory.
    pub scenarios: Vec<PathBuf>,
    /// Falls back to the default output directory when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Seeds,
    /// Worker threads; 0 or absent means one per available core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default = "all_emit")]
    pub emit: Vec<Emit>,
}

fn all_emit() -> Vec<Emit> {
    Emit::ALL.to_vec()
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut m.scenarios {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        if let Some(o) = &mut m.output {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.scenarios.is_empty() {
            return Err(ManifestError::Invalid(
                "scenarios: must list at least one file".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(ManifestError::Invalid("seeds: must be non-empty".into()));
        }
        if self.emit.is_empty() {
            return Err(ManifestError::Invalid(
                "emit: must select at least one artifact".into(),
            ));
        }
        let mut stems: Vec<String> = self.scenarios.iter().map(|p| scenario_label(p)).collect();
        stems.sort();
        if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
            return Err(ManifestError::Invalid(format!(
                "scenarios: two files share the name `{}`",
                w[0]
            )));
        }
        Ok(())
    }
}

/// Output subdirectory name for a scenario file.
pub fn scenario_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_forms() {
        let m: RunManifest = serde_json::from_str(r#"{"scenarios":["a.json"],"seeds":3}"#).unwrap();
        assert_eq!(m.seeds.expand(7), vec![7, 8, 9]);
        assert_eq!(m.emit, Emit::ALL.to_vec());
        let m: RunManifest =
            serde_json::from_str(r#"{"scenarios":["a.json"],"seeds":[4,2],"emit":["csv-series"]}"#)
                .unwrap();
        assert_eq!(m.seeds.expand(7), vec![4, 2]);
        assert_eq!(m.emit, vec![Emit::CsvSeries]);
    }

    #[test]
    fn rejects_bad_manifests() {
        let m: RunManifest =
            serde_json::from_str(r#"{"scenarios":["a.json"],"seeds":[]}"#).unwrap();
        assert!(m.validate().is_err());
        let m: RunManifest =
            serde_json::from_str(r#"{"scenarios":["x/a.json","y/a.json"]}"#).unwrap();
        assert!(m.validate().is_err());
        assert!(serde_json::from_str::<RunManifest>(r#"{"scenarios":[],"speed":2}"#).is_err());
    }
}
