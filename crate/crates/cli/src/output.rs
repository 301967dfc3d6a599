//! Output bundles: built in memory, staged next to the destination, then
//! renamed into place so a failed command never leaves a partial directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LCSIM_OUT";
pub const DEFAULT_OUT: &str = "lcsim-out";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default)]
pub struct Bundle {
    files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
        s.push('\n');
        self.add(name, s);
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every file under `dir`, replacing it if it exists.
    pub fn commit(&self, dir: &Path) -> std::io::Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        let leaf = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let staging = parent.join(format!(".{leaf}.staging-{}", std::process::id()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging)?;
        }
        std::fs::create_dir_all(&staging)?;
        let written = self.files.iter().try_for_each(|(name, bytes)| {
            let p = staging.join(name);
            if let Some(d) = p.parent() {
                std::fs::create_dir_all(d)?;
            }
            std::fs::write(p, bytes)
        });
        if let Err(e) = written {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
        if dir.exists() {
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::rename(&staging, dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStatus {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub lcsim: String,
    pub manifest_format: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub spec: PathBuf,
    pub seeds: Vec<u64>,
    pub points: usize,
    pub warmup: Option<f64>,
    pub output_dir: PathBuf,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
    pub sweeps: Vec<SweepStatus>,
    /// Every file written alongside the manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_replaces_existing_directory() {
        let root = std::env::temp_dir().join(format!("lcsim-bundle-{}", std::process::id()));
        let dir = root.join("run");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("stale.csv"), "old").unwrap();
        let mut b = Bundle::default();
        b.add("a.csv", "x\n1\n");
        b.add("sub/b.svg", "<svg/>");
        b.commit(&dir).unwrap();
        assert!(!dir.join("stale.csv").exists());
        assert_eq!(std::fs::read_to_string(dir.join("a.csv")).unwrap(), "x\n1\n");
        assert!(dir.join("sub/b.svg").exists());
        let leftovers: Vec<_> = std::fs::read_dir(&root)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("staging"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&root).ok();
    }
}
