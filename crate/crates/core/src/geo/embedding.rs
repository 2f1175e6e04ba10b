use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{great_circle_distance, GeoError, GpsPoint};

/// One record of the store file (JSON Lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub key: String,
    pub lat: f64,
    pub lon: f64,
    pub model_id: String,
    pub vector: Vec<f64>,
}

impl EmbeddingEntry {
    pub fn new(key: impl Into<String>, position: GpsPoint, model_id: impl Into<String>, vector: Vec<f64>) -> Self {
        Self {
            key: key.into(),
            lat: position.lat,
            lon: position.lon,
            model_id: model_id.into(),
            vector,
        }
    }

    pub fn position(&self) -> GpsPoint {
        GpsPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    entries: BTreeMap<String, EmbeddingEntry>,
    dims: HashMap<String, usize>,
    log: Option<File>,
}

impl Inner {
    fn insert(&mut self, entry: EmbeddingEntry) -> Result<(), GeoError> {
        GpsPoint::new(entry.lat, entry.lon)?;
        match self.dims.get(&entry.model_id) {
            Some(&expected) if expected != entry.vector.len() => {
                return Err(GeoError::DimensionMismatch {
                    model_id: entry.model_id,
                    expected,
                    got: entry.vector.len(),
                })
            }
            Some(_) => {}
            None => {
                self.dims.insert(entry.model_id.clone(), entry.vector.len());
            }
        }
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }
}

/// Spatial key-value store of embeddings. Writes are serialized behind a
/// lock; reads see a consistent snapshot. A later entry with the same key
/// replaces the earlier one.
#[derive(Debug, Default)]
pub struct EmbeddingStore {
    inner: RwLock<Inner>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads `path` (if present) and appends every later `put` to it.
    pub fn open(path: &Path) -> Result<Self, GeoError> {
        let store = if path.exists() { Self::load(path)? } else { Self::new() };
        let log = OpenOptions::new().create(true).append(true).open(path)?;
        store.inner.write().unwrap().log = Some(log);
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        let store = Self::new();
        {
            let mut inner = store.inner.write().unwrap();
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: EmbeddingEntry = serde_json::from_str(&line)
                    .map_err(|e| GeoError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
                inner.insert(entry)?;
            }
        }
        Ok(store)
    }

    /// Writes every entry, sorted by key, as a compacted file.
    pub fn save(&self, path: &Path) -> Result<(), GeoError> {
        let inner = self.inner.read().unwrap();
        let mut out = String::new();
        for entry in inner.entries.values() {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        crate::io::write_atomic(path, out.as_bytes())?;
        Ok(())
    }

    pub fn put(&self, entry: EmbeddingEntry) -> Result<(), GeoError> {
        let mut inner = self.inner.write().unwrap();
        let line = serde_json::to_string(&entry).expect("entry serializes");
        inner.insert(entry)?;
        if let Some(log) = inner.log.as_mut() {
            writeln!(log, "{line}")?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingEntry> {
        self.inner.read().unwrap().entries.get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.read().unwrap().entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries within `radius` meters (great circle) of `p`, nearest first,
    /// ties by key.
    pub fn query_nearby(&self, p: GpsPoint, radius: f64) -> Result<Vec<EmbeddingEntry>, GeoError> {
        Ok(self
            .query_nearby_with_distance(p, radius)?
            .into_iter()
            .map(|(_, e)| e)
            .collect())
    }

    pub fn query_nearby_with_distance(&self, p: GpsPoint, radius: f64) -> Result<Vec<(f64, EmbeddingEntry)>, GeoError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(GeoError::InvalidRadius(radius));
        }
        let inner = self.inner.read().unwrap();
        let mut hits: Vec<(f64, EmbeddingEntry)> = inner
            .entries
            .values()
            .filter_map(|e| {
                let d = great_circle_distance(p, e.position());
                (d <= radius).then(|| (d, e.clone()))
            })
            .collect();
        hits.sort_by(|(da, ea), (db, eb)| da.total_cmp(db).then_with(|| ea.key.cmp(&eb.key)));
        Ok(hits)
    }
}
