// Image risk from Level-1 answers, worst-case segment risk, and categories.

use std::error::Error;

use riskmap::risk::{segment_risk, weighted_sum};
use riskmap::{classify, image_risk, BinaryAnswer, CategoryAnswers, HazardCategory, WeightConfig};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let weights = WeightConfig::default();
    println!("total weight {}", weights.total());

    let no = CategoryAnswers::uniform(BinaryAnswer::No);
    let cases = [
        ("all no", no),
        (
            "crossing and vehicle",
            no.with(HazardCategory::Crossings, BinaryAnswer::Yes)
                .with(HazardCategory::Vehicles, BinaryAnswer::Yes),
        ),
        (
            "construction only",
            no.with(HazardCategory::Construction, BinaryAnswer::Yes),
        ),
        (
            "construction, surface, stairs",
            no.with(HazardCategory::Construction, BinaryAnswer::Yes)
                .with(HazardCategory::Surface, BinaryAnswer::Yes)
                .with(HazardCategory::Stairs, BinaryAnswer::Yes),
        ),
        ("all yes", CategoryAnswers::uniform(BinaryAnswer::Yes)),
    ];

    let mut on_segment = Vec::new();
    for (name, answers) in cases {
        let r = image_risk(&answers, &weights);
        println!(
            "{name:<32} sum {:>8.4}  risk {:.4}  {}",
            weighted_sum(&answers, &weights),
            r.value(),
            r.category().as_str()
        );
        on_segment.push((name.to_string(), r));
    }

    let seg = segment_risk("1000:2", &on_segment)?;
    println!(
        "\nsegment {} takes the worst image: {} ({})",
        seg.segment_id,
        seg.value.value(),
        seg.value.category().as_str()
    );

    for r in [0.15, 0.150000001, 0.4, 0.66, 0.7] {
        println!("classify({r}) = {}", classify(r)?.as_str());
    }

    // Regional calibration: crowding matters more in this city.
    let tuned = weights.with_weight(HazardCategory::Crowding, 0.8)?;
    let crowded = no.with(HazardCategory::Crowding, BinaryAnswer::Yes);
    println!(
        "\ncrowding yes: default {:.4}, tuned {:.4}",
        image_risk(&crowded, &WeightConfig::default()).value(),
        image_risk(&crowded, &tuned).value()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
