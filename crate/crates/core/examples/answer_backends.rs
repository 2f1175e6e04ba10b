// Recorded and mock-oracle backends behind the gateway, and how free-text
// replies are normalized.

use std::error::Error;
use std::path::Path;

use riskmap::gateway::{
    normalize_answer, Gateway, ImageRef, MockOracleBackend, PromptEnvelope, RawAnswer, RecordedBackend, BASE_CONTEXT,
};
use riskmap::pipeline::load_ground_truth;
use riskmap::QuestionCatalog;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let catalog = QuestionCatalog::default_catalog();
    println!("context: {BASE_CONTEXT}\n");

    for text in ["Yes.", "no, the path is clear", "There is no crossing", "I cannot tell"] {
        println!("{text:<24} -> {}", normalize_answer(&RawAnswer::text(text)).as_str());
    }

    let recorded = Gateway::new(RecordedBackend::from_file(&fixtures.join("recorded_answers.json"))?);
    let gt = load_ground_truth(&fixtures.join("gt.json"))?;
    let oracle = Gateway::new(MockOracleBackend::new(gt.sessions()));

    let requests: Vec<(PromptEnvelope, String)> = catalog
        .level_one_questions()
        .map(|q| {
            (
                PromptEnvelope::new(ImageRef::Id("bcn-01-02".into()), q.text.clone()),
                q.id.clone(),
            )
        })
        .collect();
    let model = recorded.batch_ask(&requests);
    let truth = oracle.batch_ask(&requests);

    println!("\n{:<14} {:<28} {:<10} truth", "question", "recorded reply", "parsed");
    for (((_, qid), m), t) in requests.iter().zip(model).zip(truth) {
        let (m, t) = (m?, t?);
        println!(
            "{qid:<14} {:<28} {:<10} {}",
            m.raw.text,
            m.answer.as_str(),
            t.answer.as_str()
        );
    }

    let missing = recorded.ask(&requests[0].0, "no.such.question");
    println!("\nmissing key: {}", missing.unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
