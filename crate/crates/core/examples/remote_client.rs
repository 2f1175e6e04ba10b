// Asks a running model server one question per Level-1 category.
//
// ```text
// RISKMAP_BACKEND_URL=http://127.0.0.1:8000 cargo run --example remote_client -- photo.jpg
// ```
//
// Without a server URL the example only prints what it would send.

use std::error::Error;

use riskmap::gateway::{Gateway, ImageRef, PromptEnvelope, RemoteBackend, RemoteConfig, BASE_CONTEXT};
use riskmap::QuestionCatalog;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let catalog = QuestionCatalog::default_catalog();
    let image = match std::env::args().nth(1) {
        Some(path) => ImageRef::Inline {
            image_id: path.clone(),
            bytes: std::fs::read(&path)?,
        },
        None => ImageRef::Id("bcn-01-00".into()),
    };

    let Ok(url) = std::env::var("RISKMAP_BACKEND_URL") else {
        println!("set RISKMAP_BACKEND_URL to query a server; request body would carry");
        println!("  context:  {BASE_CONTEXT}");
        println!("  question: {}", catalog.level_one_questions().next().unwrap().text);
        println!("  image_id: {}", image.image_id());
        return Ok(());
    };

    let gateway = Gateway::new(RemoteBackend::new(RemoteConfig::new(url))?);
    let requests: Vec<_> = catalog
        .level_one_questions()
        .map(|q| (PromptEnvelope::new(image.clone(), q.text.clone()), q.id.clone()))
        .collect();
    for ((_, qid), answered) in requests.iter().zip(gateway.batch_ask(&requests)) {
        match answered {
            Ok(a) => println!(
                "{qid:<14} {:<10} {:?} ms  {}",
                a.answer.as_str(),
                a.raw.latency_ms.map(|l| l.round()),
                a.raw.text
            ),
            Err(e) => println!("{qid:<14} error: {e}"),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
