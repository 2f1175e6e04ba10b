// Spatial embedding store: put, persist, reload, and radius queries.

use std::error::Error;

use riskmap::geo::{EmbeddingEntry, EmbeddingStore, GpsPoint};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let store = EmbeddingStore::new();
    let frames = [
        ("bcn-a", 41.3900, 2.1650),
        ("bcn-b", 41.3902, 2.1655),
        ("bcn-c", 41.3950, 2.1700),
        ("bom-a", 19.0760, 72.8777),
    ];
    for (i, (key, lat, lon)) in frames.into_iter().enumerate() {
        store.put(EmbeddingEntry::new(
            key,
            GpsPoint::new(lat, lon)?,
            "demo-vlm",
            vec![i as f64, 0.5, -0.25],
        ))?;
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("embeddings.jsonl");
    store.save(&path)?;
    let reloaded = EmbeddingStore::load(&path)?;
    println!("{} entries persisted to {}", reloaded.len(), path.display());

    let here = GpsPoint::new(41.3901, 2.1652)?;
    for radius in [25.0, 30.0, 1000.0] {
        let hits = reloaded.query_nearby_with_distance(here, radius)?;
        let listed: Vec<String> = hits.iter().map(|(d, e)| format!("{} @ {d:.1} m", e.key)).collect();
        println!("within {radius:>6} m: {}", listed.join(", "));
    }

    let wrong = store.put(EmbeddingEntry::new("bcn-d", here, "demo-vlm", vec![1.0]));
    println!("mixed dimensions: {}", wrong.unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
