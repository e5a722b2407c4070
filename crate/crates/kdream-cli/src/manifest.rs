//! Run manifests: a small text record written next to each artifact listing
//! the command, seed, input/output hashes, and timing. Two runs with the same
//! config and seed produce manifests that are identical after stripping the
//! timing lines ([`determinism_key`]).

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub struct Manifest {
    command: String,
    seed: u64,
    entries: Vec<(String, PathBuf, String)>,
    notes: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            seed,
            entries: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        self.add("input", path)
    }

    pub fn add_output(&mut self, path: &Path) -> std::io::Result<()> {
        self.add("output", path)
    }

    fn add(&mut self, kind: &str, path: &Path) -> std::io::Result<()> {
        let digest = sha256_file(path)?;
        self.entries.push((kind.to_string(), path.to_path_buf(), digest));
        Ok(())
    }

    /// Free-form deterministic metadata (e.g. final loss, metric values).
    pub fn note(&mut self, key: &str, value: &str) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self, wall: Duration) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (key, value) in &self.notes {
            let _ = writeln!(s, "{key} = {value}");
        }
        for (kind, path, digest) in &self.entries {
            let _ = writeln!(s, "{kind} {} sha256={digest}", path.display());
        }
        let unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let _ = writeln!(s, "timestamp_unix = {unix}");
        let _ = writeln!(s, "wall_time_ms = {}", wall.as_millis());
        s
    }

    /// Write the manifest next to the artifact as `<artifact>.manifest`.
    pub fn write_for(&self, artifact: &Path, wall: Duration) -> std::io::Result<PathBuf> {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest");
        let path = artifact.with_file_name(name);
        std::fs::write(&path, self.render(wall))?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Manifest text minus the timing lines; equal keys mean equal runs.
#[cfg_attr(not(test), allow(dead_code))]
pub fn determinism_key(manifest_text: &str) -> String {
    manifest_text
        .lines()
        .filter(|l| !(l.starts_with("timestamp_unix") || l.starts_with("wall_time_ms")))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_key_ignores_timing_only() {
        let mut m = Manifest::new("demo", 3);
        m.note("final_loss", "0.5");
        let a = m.render(Duration::from_millis(10));
        let b = m.render(Duration::from_millis(9999));
        assert_ne!(a, b);
        assert_eq!(determinism_key(&a), determinism_key(&b));
        assert!(a.contains("command = demo"));
        assert!(a.contains("seed = 3"));
        assert!(a.contains("final_loss = 0.5"));
    }

    #[test]
    fn file_hashes_land_in_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.txt");
        std::fs::write(&f, b"hello").unwrap();
        let mut m = Manifest::new("demo", 0);
        m.add_input(&f).unwrap();
        let text = m.render(Duration::ZERO);
        // sha256("hello")
        assert!(text.contains("2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"));
    }
}
