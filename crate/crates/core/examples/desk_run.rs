//! Trains a three-member ensemble on ten phantoms and scores four held-out
//! ones with the desk profile.
//!
//! `cargo run --release --example desk_run [steps_per_epoch] [lr]`

use std::time::Instant;

use dla_cascade::data::{generate_dataset, PhantomSpec, Volume};
use dla_cascade::eval::{evaluate, Region};
use dla_cascade::infer::{
    derive_threshold, ensemble_predict, postprocess_volume, Connectivity, PostprocConfig, DEFAULT_THRESHOLD_PERCENTILE,
};
use dla_cascade::train::{train_ensemble, TrainConfig};

fn main() -> dla_cascade::Result<()> {
    let mut cfg = TrainConfig {
        steps_per_epoch: 40,
        lr_start: 1e-3,
        lr_end: 5e-4,
        ..Default::default()
    };
    if let Some(steps) = std::env::args().nth(1) {
        cfg.steps_per_epoch = steps.parse().expect("steps per epoch");
    }
    if let Some(lr) = std::env::args().nth(2) {
        cfg.lr_start = lr.parse().expect("learning rate");
        cfg.lr_end = cfg.lr_start / 2.0;
    }
    let all = generate_dataset(&PhantomSpec::default(), 14, 2024)?;
    let (train, test) = all.split_at(10);

    let t0 = Instant::now();
    let members = train_ensemble::<f32>(train, &cfg, 3)?;
    for (i, (_, h)) in members.iter().enumerate() {
        let (a, b) = (h.first().unwrap(), h.last().unwrap());
        println!("member {i}: L3 {:.4} -> {:.4}", a.l3, b.l3);
    }
    println!("training took {:.1?}", t0.elapsed());

    let nets = members.iter().map(|(c, _)| c.to_net()).collect::<dla_cascade::Result<Vec<_>>>()?;
    let threshold = derive_threshold(train, DEFAULT_THRESHOLD_PERCENTILE, Connectivity::Corners)?;
    let post = PostprocConfig::new(threshold, Connectivity::Corners)?;
    let mut preds = Vec::new();
    for v in test {
        let labels = ensemble_predict(v, &nets, cfg.patch_extent)?.argmax(Some(&v.brain_mask()));
        let pred = Volume::from_labels(v.subject.clone(), v.dims, v.spacing, labels)?;
        preds.push(postprocess_volume(&pred, &post)?);
    }
    let report = evaluate(&preds, test)?;
    for r in Region::ALL {
        println!("{} dice {:.4}", r.name(), report.mean_dice(r).unwrap());
    }
    println!("threshold {threshold} voxels, total {:.1?}", t0.elapsed());
    Ok(())
}
