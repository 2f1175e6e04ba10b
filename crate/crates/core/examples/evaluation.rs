// Scores recorded model answers against ground truth, including the
// conditional follow-up rule.

use std::collections::BTreeMap;
use std::error::Error;
use std::path::Path;

use riskmap::eval::{align_pairs, build_report, confusion, metrics, render_tables, ConfusionCounts, EvalOptions};
use riskmap::gateway::{Gateway, RecordedBackend};
use riskmap::pipeline::{cmd_query, load_ground_truth, load_sessions, RunConfig};
use riskmap::{BinaryAnswer, QuestionCatalog, WeightConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let catalog = QuestionCatalog::default_catalog();

    // A model that cascades on a ground-truth negative is only judged on Level 1.
    let mut truth = catalog.new_session("img");
    for q in catalog.level_one_questions() {
        truth.answers.insert(q.id.clone(), BinaryAnswer::No);
    }
    let mut predicted = truth.clone();
    predicted.answers.insert("vehicles".into(), BinaryAnswer::Yes);
    predicted.answers.insert("vehicles.car".into(), BinaryAnswer::Yes);
    let pairs = align_pairs(&truth, &predicted, &catalog)?;
    println!("{} aligned pairs, counts {:?}", pairs.len(), confusion(&pairs));

    let hand = metrics(&ConfusionCounts {
        tp: 2,
        fp: 1,
        fn_: 1,
        tn: 6,
    });
    println!("tp=2 fp=1 fn=1 tn=6 -> {hand:?}\n");

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let manifests = ["bcn-01", "bom-01"]
        .map(|s| riskmap::pipeline::SequenceManifest::load(&fixtures.join(format!("manifests/{s}.json"))));
    let manifests = manifests.into_iter().collect::<Result<Vec<_>, _>>()?;
    let out = tempfile::tempdir()?;
    let config = RunConfig::new(out.path());
    let gateway = Gateway::new(RecordedBackend::from_file(&fixtures.join("recorded_answers.json"))?);
    cmd_query(&manifests, &gateway, &config)?;

    let gt = load_ground_truth(&fixtures.join("gt.json"))?;
    let preds: BTreeMap<_, _> = load_sessions(&config.sessions_dir(), &catalog)?;
    let report = build_report(&gt, &preds, &catalog, &WeightConfig::default(), EvalOptions::default())?;
    print!("{}", render_tables(&report));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
