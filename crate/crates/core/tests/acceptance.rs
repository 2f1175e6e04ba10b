//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed regardless of outcome.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riskmap::eval::{align_pairs, confusion, metrics, AlignedPair, ConfusionCounts, MetricSet};
use riskmap::gateway::{Gateway, MockOracleBackend};
use riskmap::pipeline::{cmd_eval, cmd_map, cmd_query, load_ground_truth, RunConfig, SequenceManifest};
use riskmap::risk::{segment_risk, weighted_sum};
use riskmap::{
    classify, image_risk, BinaryAnswer, CategoryAnswers, QuestionCatalog, RiskCategory, RiskScore, WeightConfig,
};

use common::{fixture, manifest_args, manifests, riskmap, snapshot};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const ANSWERS: [BinaryAnswer; 3] = [BinaryAnswer::Yes, BinaryAnswer::No, BinaryAnswer::Unanswered];

/// Direct evaluation of the image risk formula with literal weights.
fn direct_image_risk(answers: &[BinaryAnswer; 8]) -> f64 {
    // stairs, crossings, construction, obstacles, crowding, vehicles, surface, non_sidewalk
    let w = [0.6, 0.6, 1.0, 0.6, 0.3, 0.3, 1.0, 1.0];
    let q = 8.0;
    let mut num = 0.0;
    for (wi, a) in w.iter().zip(answers) {
        let x = match a {
            BinaryAnswer::Yes => 1.0,
            BinaryAnswer::No => -1.0 / q,
            BinaryAnswer::Unanswered => 0.0,
        };
        num += wi * x;
    }
    let den: f64 = w.iter().sum();
    f64::max(0.0, num) / den
}

fn exhaustive_oracle() -> Outcome {
    let start = Instant::now();
    let weights = WeightConfig::default();
    let mut worst = 0.0f64;
    for code in 0..3usize.pow(8) {
        let mut answers = [BinaryAnswer::Unanswered; 8];
        let mut c = code;
        for a in answers.iter_mut() {
            *a = ANSWERS[c % 3];
            c /= 3;
        }
        let got = image_risk(&CategoryAnswers::new(answers), &weights).value();
        worst = worst.max((got - direct_image_risk(&answers)).abs());
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))
}

fn boundaries() -> Outcome {
    let cases = [
        (0.15, RiskCategory::Safe),
        (0.15 + 1e-9, RiskCategory::Caution),
        (0.4, RiskCategory::Danger),
        (0.7, RiskCategory::HighRisk),
    ];
    for (r, want) in cases {
        let got = classify(r).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("classify({r}) = {got:?}, want {want:?}"))?;
    }
    Ok(())
}

fn figure_values() -> Outcome {
    let got = classify(0.66).map_err(|e| e.to_string())?;
    ensure(got == RiskCategory::Danger, || format!("0.66 -> {got:?}"))?;
    let weights = WeightConfig::default();
    let yes = CategoryAnswers::uniform(BinaryAnswer::Yes);
    let no = CategoryAnswers::uniform(BinaryAnswer::No);
    ensure(image_risk(&yes, &weights).value() == 1.0, || {
        "all-Yes is not 1.0".into()
    })?;
    ensure(image_risk(&no, &weights).value() == 0.0, || "all-No is not 0.0".into())?;
    let numerator = weighted_sum(&no, &weights);
    ensure(numerator < 0.0, || {
        format!("all-No numerator {numerator} is not negative")
    })
}

fn segment_conservatism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..2000 {
        let n = rng.gen_range(1..12);
        let mut risks: Vec<(String, RiskScore)> = (0..n)
            .map(|i| (format!("img{i}"), RiskScore::new(rng.gen_range(0.0..=1.0)).unwrap()))
            .collect();
        let before = segment_risk("s", &risks).map_err(|e| e.to_string())?.value.value();
        let max = risks.iter().map(|(_, r)| r.value()).fold(f64::NEG_INFINITY, f64::max);
        ensure(before == max, || format!("case {case}: {before} != max {max}"))?;

        let extra = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.0..=1.0)
        };
        let pos = rng.gen_range(0..=risks.len());
        risks.insert(pos, ("extra".into(), RiskScore::new(extra).unwrap()));
        let after = segment_risk("s", &risks).map_err(|e| e.to_string())?.value.value();
        ensure(after >= before, || {
            format!("case {case}: adding {extra} lowered {before} to {after}")
        })?;
        ensure(after == before.max(extra), || format!("case {case}: {after} != max"))?;
    }
    Ok(())
}

fn cascade_soundness() -> Outcome {
    let catalog = QuestionCatalog::default_catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..1000 {
        let mut session = catalog.new_session(format!("img{case}"));
        loop {
            let pending = catalog.next_questions(&session);
            if pending.is_empty() {
                break;
            }
            let qid = pending[rng.gen_range(0..pending.len())].to_string();
            let answer = ANSWERS[rng.gen_range(0..3)];
            session = session
                .record_answer(&catalog, &qid, answer)
                .map_err(|e| e.to_string())?;
        }
        for (qid, answer) in &session.answers {
            let q = catalog.get(qid).ok_or_else(|| format!("unknown {qid}"))?;
            if let Some(parent) = &q.parent {
                let parent_q = catalog.get(parent).unwrap();
                ensure(session.answer(parent) == Some(parent_q.trigger), || {
                    format!(
                        "case {case}: {qid}={answer:?} recorded while {parent} is {:?}",
                        session.answer(parent)
                    )
                })?;
            }
        }
    }

    let mut session = catalog.new_session("all-no");
    while let Some(qid) = catalog.next_questions(&session).first().map(|q| q.to_string()) {
        session = session
            .record_answer(&catalog, &qid, BinaryAnswer::No)
            .map_err(|e| e.to_string())?;
    }
    ensure(session.answers.len() == 8, || {
        format!("all-No session has {} answers", session.answers.len())
    })
}

fn conditional_evaluation() -> Outcome {
    let catalog = QuestionCatalog::default_catalog();
    let mut truth = catalog.new_session("img");
    for q in catalog.level_one_questions() {
        truth.answers.insert(q.id.clone(), BinaryAnswer::No);
    }
    // The prediction says Yes on crossings and follows the cascade down.
    let mut predicted = truth.clone();
    predicted.answers.insert("crossings".into(), BinaryAnswer::Yes);
    for deep in [
        "crossings.signalized",
        "crossings.occupied",
        "crossings.occupied.moving",
    ] {
        predicted.answers.insert(deep.into(), BinaryAnswer::Yes);
    }
    predicted.validate(&catalog).map_err(|e| e.to_string())?;

    let pairs = align_pairs(&truth, &predicted, &catalog).map_err(|e| e.to_string())?;
    ensure(pairs.len() == 8, || format!("{} aligned pairs", pairs.len()))?;
    ensure(
        pairs.iter().all(|p| catalog.get(&p.question_id).unwrap().level == 1),
        || "a follow-up question was aligned".into(),
    )?;
    let counts = confusion(&pairs);
    let want = ConfusionCounts {
        tp: 0,
        fp: 1,
        fn_: 0,
        tn: 7,
    };
    ensure(counts == want, || format!("counts {counts:?}"))?;

    // Flipping the deeper predictions cannot change anything.
    let mut flipped = predicted.clone();
    for deep in ["crossings.signalized", "crossings.occupied"] {
        flipped.answers.insert(deep.into(), BinaryAnswer::No);
    }
    flipped.answers.remove("crossings.occupied.moving");
    let again = align_pairs(&truth, &flipped, &catalog).map_err(|e| e.to_string())?;
    ensure(again == pairs, || "deeper predictions changed the aligned pairs".into())
}

fn brute_force_metrics(pairs: &[AlignedPair]) -> MetricSet {
    let (mut tp, mut fp, mut fneg, mut tn) = (0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        let predicted_yes = p.predicted == BinaryAnswer::Yes;
        let truly_yes = p.truth == BinaryAnswer::Yes;
        match (truly_yes, predicted_yes) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fneg += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fneg);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    MetricSet {
        accuracy: div(tp + tn, tp + tn + fp + fneg),
        precision,
        recall,
        specificity: div(tn, tn + fp),
        f1,
    }
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let n = rng.gen_range(0..40);
        let pairs: Vec<AlignedPair> = (0..n)
            .map(|i| AlignedPair {
                question_id: format!("q{i}"),
                truth: if rng.gen_bool(0.4) {
                    BinaryAnswer::Yes
                } else {
                    BinaryAnswer::No
                },
                predicted: ANSWERS[rng.gen_range(0..3)],
            })
            .collect();
        let got = metrics(&confusion(&pairs));
        let want = brute_force_metrics(&pairs);
        for (g, w) in got.values().into_iter().zip(want.values()) {
            ensure(close(g, w, 1e-12), || format!("case {case}: {got:?} vs {want:?}"))?;
        }
    }

    let got = metrics(&ConfusionCounts {
        tp: 2,
        fp: 1,
        fn_: 1,
        tn: 6,
    });
    let want = [0.8, 0.6667, 0.6667, 0.8571, 0.6667];
    for (g, w) in got.values().into_iter().zip(want) {
        ensure(close(g, Some(w), 1e-4), || format!("hand case: {got:?}"))?;
    }
    Ok(())
}

fn mock_oracle_identity() -> Outcome {
    let start = Instant::now();
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gt = load_ground_truth(&fixture("gt.json")).map_err(|e| e.to_string())?;
    let cities: std::collections::BTreeSet<_> = gt.images.iter().map(|i| i.city.as_str()).collect();
    ensure(gt.images.len() >= 20 && cities.len() >= 2, || {
        "fixture set too small".into()
    })?;

    let mut config = RunConfig::new(out.path());
    config.jobs = 4;
    let gateway = Gateway::new(MockOracleBackend::new(gt.sessions()));
    cmd_query(&manifests(), &gateway, &config).map_err(|e| e.to_string())?;
    let report = cmd_eval(&gt, &config).map_err(|e| e.to_string())?;

    let mut defined = 0;
    let mut blocks: Vec<(String, &MetricSet)> = vec![("overall".into(), &report.overall.metrics)];
    blocks.extend(report.per_category.iter().map(|(c, b)| (c.to_string(), &b.metrics)));
    blocks.extend(report.per_continent.iter().map(|(c, b)| (c.clone(), &b.metrics)));
    for (name, m) in blocks {
        for v in m.values().into_iter().flatten() {
            defined += 1;
            ensure(v == 1.0, || format!("{name}: {m:?}"))?;
        }
    }
    ensure(defined > 0, || "no metric was defined".into())?;
    ensure(report.mae_risk == 0.0, || format!("MAE_R {}", report.mae_risk))?;
    ensure(report.n_images == gt.images.len(), || {
        "not every image evaluated".into()
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))
}

fn map_golden() -> Outcome {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::copy(fixture("map/risks.json"), out.path().join("risks.json")).map_err(|e| e.to_string())?;
    let manifest = SequenceManifest::load(&fixture("map/manifest.json")).map_err(|e| e.to_string())?;
    let config = RunConfig::new(out.path());
    let (map, _) = cmd_map(&[manifest], &fixture("map/single_segment.osm"), &config).map_err(|e| e.to_string())?;

    let rendered = std::fs::read(out.path().join("event_map.geojson")).map_err(|e| e.to_string())?;
    let golden = std::fs::read(fixture("map/golden.geojson")).map_err(|e| e.to_string())?;
    ensure(rendered == golden, || {
        format!("GeoJSON differs from golden:\n{}", String::from_utf8_lossy(&rendered))
    })?;
    let danger: Vec<_> = map
        .segments
        .iter()
        .filter(|s| s.category == RiskCategory::Danger)
        .collect();
    ensure(danger.len() == 1, || format!("{} Danger segments", danger.len()))?;
    ensure(
        map.segments
            .iter()
            .filter(|s| s.category == RiskCategory::Unobserved)
            .count()
            == 1,
        || "gray remainder missing".into(),
    )
}

fn run_all(out: &std::path::Path, jobs: &str) -> Outcome {
    let out_s = out.display().to_string();
    let steps: Vec<Vec<String>> = vec![
        [
            vec!["query".into()],
            manifest_args(),
            vec![
                "--backend".into(),
                "recorded".into(),
                "--answers".into(),
                fixture("recorded_answers.json").display().to_string(),
                "--jobs".into(),
                jobs.into(),
            ],
        ]
        .concat(),
        vec!["score".into()],
        [
            vec!["map".into()],
            manifest_args(),
            vec!["--osm".into(), fixture("streets.osm").display().to_string()],
        ]
        .concat(),
        vec!["eval".into(), "--gt".into(), fixture("gt.json").display().to_string()],
    ];
    for mut step in steps {
        step.extend(["--out".to_string(), out_s.clone()]);
        let o = riskmap(&step);
        ensure(o.status.success(), || {
            format!("{} failed: {}", step[0], String::from_utf8_lossy(&o.stderr))
        })?;
    }
    Ok(())
}

fn parallel_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_all(a.path(), "1")?;
    run_all(b.path(), "8")?;
    // The run log holds wall-clock latencies and is excluded by design.
    let strip = |mut m: BTreeMap<String, Vec<u8>>| {
        m.remove("query_log.json");
        m
    };
    let (sa, sb) = (strip(snapshot(a.path())), strip(snapshot(b.path())));
    ensure(sa.keys().eq(sb.keys()), || {
        format!("file sets differ: {:?} vs {:?}", sa.keys(), sb.keys())
    })?;
    for name in [
        "risks.json",
        "event_map.geojson",
        "report.json",
        "report.txt",
        "events.json",
    ] {
        ensure(sa.contains_key(name), || format!("{name} missing"))?;
    }
    ensure(sa.keys().filter(|k| k.starts_with("sessions")).count() == 24, || {
        "expected 24 sessions".into()
    })?;
    for (name, bytes) in &sa {
        ensure(sb[name] == *bytes, || {
            format!("{name} differs between --jobs 1 and --jobs 8")
        })?;
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("exhaustive 3^8 image-risk oracle", exhaustive_oracle),
        ("category boundary fidelity", boundaries),
        ("0.66 is Danger, all-Yes 1.0, all-No clamped 0.0", figure_values),
        (
            "segment risk is the contributor maximum and never decreases",
            segment_conservatism,
        ),
        ("cascade soundness", cascade_soundness),
        ("conditional evaluation aligns exactly 8 pairs", conditional_evaluation),
        ("metric oracle and hand-derived case", metric_oracle),
        ("mock oracle end-to-end identity", mock_oracle_identity),
        ("single-segment map golden file", map_golden),
        ("--jobs 1 and --jobs 8 outputs byte-identical", parallel_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(()) => println!("PASS  {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("\nacceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
