//! `artifacts.json`: a sorted list of every file under a directory with its
//! SHA-256 and size.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "artifacts.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).with_context(|| format!("read {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn walk(dir: &Path, skip_dirs: &[&str], out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("list {}", dir.display()))? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            let name = entry.file_name();
            if !skip_dirs.iter().any(|s| name == *s) {
                walk(&path, skip_dirs, out)?;
            }
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `root` except manifests, error records and the
/// top-level directories named in `skip_dirs`.
pub fn collect(root: &Path, skip_dirs: &[&str]) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    walk(root, skip_dirs, &mut files)?;
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name == MANIFEST || name == crate::ERROR_FILE {
            continue;
        }
        let rel = f
            .strip_prefix(root)
            .expect("walked below root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        out.push(Artifact {
            bytes: fs::metadata(&f)?.len(),
            sha256: sha256_file(&f)?,
            path: rel,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn write_manifest(root: &Path, skip_dirs: &[&str]) -> Result<Vec<Artifact>> {
    let list = collect(root, skip_dirs)?;
    let path = root.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&list)? + "\n")
        .with_context(|| format!("write {}", path.display()))?;
    Ok(list)
}

pub fn read_manifest(root: &Path) -> Result<Vec<Artifact>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("read {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
