// Walks the conditional question cascade for one image.
//
// Follow-up questions unlock only when their parent is answered Yes, so an
// image with no hazards is done after the eight Level-1 questions.

use std::error::Error;

use riskmap::{BinaryAnswer, QuestionCatalog};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let catalog = QuestionCatalog::default_catalog();
    let mut session = catalog.new_session("corner-42");

    let script = |qid: &str| match qid {
        "crossings" | "crossings.occupied" | "vehicles" | "vehicles.car" => BinaryAnswer::Yes,
        _ => BinaryAnswer::No,
    };

    while let Some(qid) = catalog.next_questions(&session).first().map(|q| q.to_string()) {
        let question = catalog.get(&qid).expect("pending ids are in the catalog");
        let answer = script(&qid);
        println!(
            "L{} {:<28} {:<10} {}",
            question.level,
            qid,
            answer.as_str(),
            question.text
        );
        session = session.record_answer(&catalog, &qid, answer)?;
    }

    assert!(catalog.is_complete(&session));
    println!(
        "\n{} questions answered out of {} in the catalog",
        session.answers.len(),
        catalog.len()
    );

    // Follow-ups of a No stay locked.
    let err = session.record_answer(&catalog, "vehicles.bicycle.approaching", BinaryAnswer::Yes);
    println!("locked follow-up: {}", err.unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
