//! Trains and evaluates one method on a synthetic texture dataset.
//!
//! `cargo run --release -p texdistill --example synthetic_run -- reduced 30 grating [checkpoint-dir]`
//!
//! When the checkpoint directory already holds `best.safetensors`, training
//! is skipped and that checkpoint is evaluated.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use texdistill::data::{generate_synthetic_texture_dataset, TextureFamily};
use texdistill::distill::{load_model, train, Teachers, BEST_CHECKPOINT};
use texdistill::eval::{evaluate, image_auroc};
use texdistill::{FusionRule, Label, Method, TrainConfig};

fn main() -> texdistill::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let method: Method = args.first().map_or("reduced", String::as_str).parse()?;
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let family: TextureFamily = args.get(2).map_or("grating", String::as_str).parse()?;
    let dir = args.get(3).map(PathBuf::from);

    let data = generate_synthetic_texture_dataset(family, 200, 25, 25, 0);
    let existing = dir
        .as_ref()
        .map(|d| d.join(BEST_CHECKPOINT))
        .filter(|p| p.is_file());
    let model = match existing {
        Some(path) => load_model(&path, FusionRule::default())?.1,
        None => {
            let mut config = TrainConfig::for_method(method);
            config.epochs = epochs;
            config.resnet_weights = "seeded:0".into();
            config.effnet_weights = "seeded:0".into();
            config.checkpoint_dir = dir;
            let teachers = Teachers::load(&config)?;
            let t0 = Instant::now();
            let outcome = train(&config, &data.train_good, &teachers)?;
            for e in &outcome.history {
                println!(
                    "epoch {:>3} train {:.5} val {:.5} {:.1}s",
                    e.epoch, e.train_loss, e.val_loss, e.seconds
                );
            }
            println!(
                "trained in {:.1}s, best epoch {}",
                t0.elapsed().as_secs_f64(),
                outcome.checkpoint.epoch
            );
            outcome
                .checkpoint
                .into_model(&teachers, FusionRule::default())?
        }
    };
    let (report, rows) = evaluate(&model, &data, 8)?;
    print!("{}", report.to_table());

    let good: Vec<f64> = rows
        .iter()
        .filter(|r| r.label == Label::Good)
        .map(|r| r.score)
        .collect();
    let mut kinds: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (r, s) in rows.iter().zip(&data.test) {
        if r.label == Label::Defect {
            kinds.entry(s.defect_type()).or_default().push(r.score);
        }
    }
    for (kind, scores) in kinds {
        let all: Vec<f64> = good.iter().chain(&scores).copied().collect();
        let labels: Vec<bool> = good
            .iter()
            .map(|_| false)
            .chain(scores.iter().map(|_| true))
            .collect();
        println!(
            "{kind:<14} n={:<3} auroc {:.4}",
            scores.len(),
            image_auroc(&all, &labels)?
        );
    }
    Ok(())
}
