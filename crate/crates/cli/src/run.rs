use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Component, Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Replaces fields of `value` with the entries of a config table. Keys may
/// use dashes or underscores; unknown keys are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(value: &T, table: Option<&toml::Table>, section: &str) -> Result<T> {
    let mut json = serde_json::to_value(value)?;
    if let Some(table) = table {
        let obj = json.as_object_mut().expect("argument structs serialize to objects");
        for (key, v) in table {
            let field = key.replace('-', "_");
            if !obj.contains_key(&field) {
                bail!("config: unknown key {key:?} in [{section}]");
            }
            obj.insert(field, serde_json::to_value(v)?);
        }
    }
    serde_json::from_value(json).with_context(|| format!("config: invalid value in [{section}]"))
}

/// Removes `.` and `..` components without touching the file system.
fn lexical_normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct InputRecord {
    path: PathBuf,
    sha256: Option<String>,
}

/// Bookkeeping for one subcommand invocation: validated inputs, outputs
/// confined to the output root, and the run manifest written at the end.
pub struct Run {
    command: String,
    root: PathBuf,
    snapshot: String,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(command: &str, root: &Path, snapshot: &serde_json::Value) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("output: cannot create {}", root.display()))?;
        let root = fs::canonicalize(root).with_context(|| format!("output: cannot resolve {}", root.display()))?;
        let snapshot = serde_json::to_string_pretty(snapshot)? + "\n";
        Ok(Self {
            command: command.to_string(),
            root,
            snapshot,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Registers an input file or directory; it must exist.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let meta = fs::metadata(path).with_context(|| format!("input: {} does not exist", path.display()))?;
        let sha256 = if meta.is_file() {
            let bytes = fs::read(path).with_context(|| format!("input: cannot read {}", path.display()))?;
            Some(sha256_hex(&bytes))
        } else {
            None
        };
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(path.to_path_buf())
    }

    /// Resolves an output path below the root and creates its parent directory.
    pub fn output(&mut self, path: &Path) -> Result<PathBuf> {
        let full = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        };
        let normalized = lexical_normalize(&full);
        if !normalized.starts_with(&self.root) {
            bail!(
                "output: {} lies outside the output root {}",
                path.display(),
                self.root.display()
            );
        }
        if let Some(parent) = normalized.parent() {
            fs::create_dir_all(parent).with_context(|| format!("output: cannot create {}", parent.display()))?;
        }
        self.outputs.push(normalized.strip_prefix(&self.root).unwrap_or(&normalized).to_path_buf());
        Ok(normalized)
    }

    /// Like [`Run::output`] for a directory, which is created.
    pub fn output_dir(&mut self, path: &Path) -> Result<PathBuf> {
        let full = self.output(&path.join("."))?;
        fs::create_dir_all(&full).with_context(|| format!("output: cannot create {}", full.display()))?;
        Ok(full)
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let full = self.output(path)?;
        fs::write(&full, contents).with_context(|| format!("output: cannot write {}", full.display()))?;
        Ok(full)
    }

    /// Writes the resolved-config snapshot and the run manifest, also after a failure.
    pub fn finish(mut self, error: Option<&anyhow::Error>) -> Result<()> {
        let config_name = PathBuf::from(format!("{}.config.json", self.command));
        let snapshot = self.snapshot.clone();
        self.write(&config_name, &snapshot)?;
        let manifest = serde_json::json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "status": if error.is_some() { "error" } else { "ok" },
            "error": error.map(|e| format!("{e:#}")),
            "config_sha256": sha256_hex(snapshot.as_bytes()),
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let name = self.root.join(format!("{}.run.json", self.command));
        fs::write(&name, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("output: cannot write {}", name.display()))?;
        Ok(())
    }
}
