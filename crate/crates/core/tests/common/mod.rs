#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riskmap::pipeline::SequenceManifest;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub const MANIFESTS: [&str; 2] = ["manifests/bcn-01.json", "manifests/bom-01.json"];

pub fn manifests() -> Vec<SequenceManifest> {
    MANIFESTS
        .iter()
        .map(|m| SequenceManifest::load(&fixture(m)).unwrap())
        .collect()
}

pub fn manifest_args() -> Vec<String> {
    MANIFESTS
        .iter()
        .flat_map(|m| ["--manifest".to_string(), fixture(m).display().to_string()])
        .collect()
}

pub fn riskmap<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_riskmap"))
        .args(args)
        .env_remove("RISKMAP_BACKEND_URL")
        .output()
        .expect("riskmap binary runs")
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
