// All four stages over the fixture sequences, as the CLI runs them:
// query (mock oracle), score, map, eval.

use std::error::Error;
use std::path::Path;

use riskmap::gateway::{Gateway, MockOracleBackend};
use riskmap::pipeline::{cmd_eval, cmd_map, cmd_query, cmd_score, load_ground_truth, RunConfig, SequenceManifest};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let manifests = vec![
        SequenceManifest::load(&fixtures.join("manifests/bcn-01.json"))?,
        SequenceManifest::load(&fixtures.join("manifests/bom-01.json"))?,
    ];
    let gt = load_ground_truth(&fixtures.join("gt.json"))?;

    let out = tempfile::tempdir()?;
    let mut config = RunConfig::new(out.path());
    config.jobs = 4;

    let gateway = Gateway::new(MockOracleBackend::new(gt.sessions()));
    let queried = cmd_query(&manifests, &gateway, &config)?;
    println!("query: {} sessions", queried.completed.len());

    let risks = cmd_score(&config)?;
    let worst = risks.iter().max_by(|a, b| a.1.value().total_cmp(&b.1.value())).unwrap();
    println!(
        "score: {} images, worst {} at {:.4}",
        risks.len(),
        worst.0,
        worst.1.value()
    );

    let (_, summary) = cmd_map(&manifests, &fixtures.join("streets.osm"), &config)?;
    println!(
        "map: {:?}, unmatched {:?}",
        summary.by_category, summary.unmatched_keyframes
    );

    let report = cmd_eval(&gt, &config)?;
    println!("eval: F1 {:?}, MAE_R {}", report.overall.metrics.f1, report.mae_risk);

    let mut files: Vec<_> = std::fs::read_dir(out.path())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()?;
    files.sort();
    println!("outputs: {files:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
