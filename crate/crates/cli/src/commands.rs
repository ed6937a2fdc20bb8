use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use texdistill::anomaly::{self, write_overlay, write_pfm};
use texdistill::backbone::TapPreset;
use texdistill::data::{
    decode_image, generate_synthetic_texture_dataset, load_mvtec_category_with, materialize,
    MaskPolicy, TextureFamily,
};
use texdistill::distill::{load_model, train as run_training, Teachers};
use texdistill::eval::{benchmark_interleaved, evaluate, write_scores_csv, EvalReport};
use texdistill::{DatasetSplits, FusionRule, Method, TrainConfig};

use crate::config::Settings;
use crate::error::{CliError, CliResult};

const DEFAULT_DATA: &str = "synthetic:grating";
const DEFAULT_OUT: &str = "runs";
const EVAL_BATCH: usize = 8;

fn configure_threads(s: &Settings) -> CliResult<()> {
    let n: usize = s.parse_or("threads", 0)?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Creates a fresh `run_<timestamp>_<seed>` directory under `out_dir`.
fn run_dir(s: &Settings, seed: u64) -> CliResult<PathBuf> {
    let root = PathBuf::from(s.get_or("out_dir", DEFAULT_OUT));
    fs::create_dir_all(&root)?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("run_{stamp}_{seed}");
    let mut dir = root.join(&base);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = root.join(format!("{base}_{n}"));
    }
    fs::create_dir(&dir)?;
    log::info!("writing outputs to {}", dir.display());
    Ok(dir)
}

fn write_config(dir: &Path, s: &Settings) -> CliResult<()> {
    fs::write(dir.join("config.txt"), s.render())?;
    Ok(())
}

/// Loads `synthetic:<family>` or an MVTec-style category directory.
fn load_data(s: &mut Settings) -> CliResult<DatasetSplits> {
    let data = s.get_or("data", DEFAULT_DATA).to_string();
    s.set("data", &data);
    if let Some(family) = data.strip_prefix("synthetic:") {
        let family: TextureFamily = family
            .parse()
            .map_err(|e| CliError::config(format!("invalid value for `data`: {e}")))?;
        let n_train = s.parse_or("n_train", 200usize)?;
        let n_good = s.parse_or("n_test_good", 25usize)?;
        let n_defect = s.parse_or("n_test_defect", 25usize)?;
        let seed = s.parse_or("data_seed", 0u64)?;
        for (k, v) in [
            ("n_train", n_train as u64),
            ("n_test_good", n_good as u64),
            ("n_test_defect", n_defect as u64),
            ("data_seed", seed),
        ] {
            s.set(k, v);
        }
        log::info!(
            "generating synthetic {family} data ({n_train} train, {n_good}+{n_defect} test)"
        );
        return Ok(generate_synthetic_texture_dataset(
            family, n_train, n_good, n_defect, seed,
        ));
    }
    let path = PathBuf::from(&data);
    let (root, category) = match s.get("category") {
        Some(c) => (path, c.to_string()),
        None => {
            let category = path
                .file_name()
                .and_then(|c| c.to_str())
                .ok_or_else(|| {
                    CliError::config(format!("cannot infer `category` from {}", path.display()))
                })?
                .to_string();
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                category,
            )
        }
    };
    s.set("category", &category);
    Ok(load_mvtec_category_with(
        &root,
        &category,
        MaskPolicy::Optional,
    )?)
}

fn train_config(s: &mut Settings) -> CliResult<TrainConfig> {
    let method: Method = s.parse_or("method", Method::Reduced)?;
    let mut c = TrainConfig::for_method(method);
    c.learning_rate = s.parse_or("learning_rate", c.learning_rate)?;
    c.epochs = s.parse_or("epochs", c.epochs)?;
    c.batch_size = s.parse_or("batch_size", c.batch_size)?;
    c.alpha = s.parse_or("alpha", c.alpha)?;
    c.input_size = s.parse_or("input_size", c.input_size)?;
    c.split_ratio = s.parse_or("split_ratio", c.split_ratio)?;
    c.seed = s.parse_or("seed", c.seed)?;
    if s.get("preset").is_some() {
        c.resnet_preset = s.parse("preset")?.expect("present");
    }
    if let Some(w) = s.get("resnet_weights") {
        c.resnet_weights = w.to_string();
    }
    if let Some(w) = s.get("effnet_weights") {
        c.effnet_weights = w.to_string();
    }
    c.validate()?;
    record_train_config(s, &c);
    Ok(c)
}

fn record_train_config(s: &mut Settings, c: &TrainConfig) {
    s.set("method", c.method);
    s.set("learning_rate", c.learning_rate);
    s.set("epochs", c.epochs);
    s.set("batch_size", c.batch_size);
    s.set("alpha", c.alpha);
    s.set("input_size", c.input_size);
    s.set("split_ratio", c.split_ratio);
    s.set("seed", c.seed);
    s.set("preset", c.resnet_preset);
    s.set("resnet_weights", &c.resnet_weights);
    if c.method == Method::Mixed {
        s.set("effnet_weights", &c.effnet_weights);
    }
}

fn write_curve(dir: &Path, outcome: &texdistill::distill::TrainOutcome) -> CliResult<()> {
    let mut w = csv::Writer::from_path(dir.join("curve.csv"))?;
    w.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
    for e in &outcome.history {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
            format!("{:.3}", e.seconds),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("steps.csv"))?;
    w.write_record(["step", "loss"])?;
    for (i, l) in outcome.step_losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(mut s: Settings) -> CliResult<()> {
    let mut config = train_config(&mut s)?;
    configure_threads(&s)?;
    let splits = load_data(&mut s)?;
    let dir = run_dir(&s, config.seed)?;
    write_config(&dir, &s)?;
    config.checkpoint_dir = Some(dir.clone());
    let teachers = Teachers::load(&config)?;
    let outcome = run_training(&config, &splits.train_good, &teachers)?;
    write_curve(&dir, &outcome)?;
    let path = outcome
        .checkpoint_path
        .clone()
        .ok_or_else(|| CliError::runtime("training produced no checkpoint"))?;
    log::info!(
        "best epoch {} with validation loss {:.6}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.validation_loss
    );
    println!("{}", path.display());
    Ok(())
}

fn checkpoint_arg(s: &Settings) -> CliResult<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = s
        .require("checkpoint")?
        .split(',')
        .map(|p| PathBuf::from(p.trim()))
        .collect();
    for p in &paths {
        if !p.is_file() {
            return Err(CliError::data(format!(
                "checkpoint {} not found",
                p.display()
            )));
        }
    }
    Ok(paths)
}

fn single_checkpoint(s: &Settings) -> CliResult<PathBuf> {
    let mut paths = checkpoint_arg(s)?;
    if paths.len() != 1 {
        return Err(CliError::config("`checkpoint` takes a single path here"));
    }
    Ok(paths.remove(0))
}

fn fusion(s: &mut Settings) -> CliResult<FusionRule> {
    let f: FusionRule = s.parse_or("fusion", FusionRule::default())?;
    s.set("fusion", f.name());
    Ok(f)
}

pub fn eval(mut s: Settings) -> CliResult<()> {
    let ckpt = single_checkpoint(&s)?;
    let rule = fusion(&mut s)?;
    let batch = s.parse_or("batch_size", EVAL_BATCH)?;
    if batch == 0 {
        return Err(CliError::config("`batch_size` must be at least 1"));
    }
    s.set("batch_size", batch);
    configure_threads(&s)?;
    let (checkpoint, model) = load_model(&ckpt, rule)?;
    let splits = load_data(&mut s)?;
    if !splits.has_masks() {
        log::warn!("no ground-truth masks found; pixel AUROC will be omitted");
    }
    let dir = run_dir(&s, checkpoint.config.seed)?;
    write_config(&dir, &s)?;
    let (report, rows) = evaluate(&model, &splits, batch)?;
    fs::write(dir.join("report.txt"), report.to_table())?;
    fs::write(dir.join("report.kv"), report.to_key_values())?;
    write_scores_csv(&dir.join("scores.csv"), &rows)?;
    print!("{}", report.to_table());
    Ok(())
}

fn collect_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::data(format!(
            "{} does not exist",
            input.display()
        )));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(
                        e.to_ascii_lowercase().as_str(),
                        "png" | "jpg" | "jpeg" | "bmp"
                    )
                })
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("no images in {}", input.display())));
    }
    Ok(files)
}

pub fn infer(mut s: Settings) -> CliResult<()> {
    let ckpt = single_checkpoint(&s)?;
    let input = PathBuf::from(s.require("input")?);
    let rule = fusion(&mut s)?;
    configure_threads(&s)?;
    let (checkpoint, model) = load_model(&ckpt, rule)?;
    let files = collect_inputs(&input)?;
    let dir = run_dir(&s, checkpoint.config.seed)?;
    write_config(&dir, &s)?;
    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    w.write_record(["path", "score"])?;
    let mut failures = 0;
    for path in &files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let result = decode_image(path).and_then(|img| {
            let r = anomaly::infer(&model, &img)?;
            write_pfm(&dir.join(format!("{stem}_map.pfm")), &r.map)?;
            write_overlay(&dir.join(format!("{stem}_overlay.png")), &img, &r.map)?;
            Ok(r.score)
        });
        match result {
            Ok(score) => w.write_record([path.display().to_string(), score.to_string()])?,
            Err(e) => {
                failures += 1;
                log::error!("{}: {e}", path.display());
            }
        }
    }
    w.flush()?;
    log::info!(
        "{} of {} images processed",
        files.len() - failures,
        files.len()
    );
    if failures == files.len() {
        return Err(CliError::data("every input failed"));
    }
    Ok(())
}

pub fn bench(mut s: Settings) -> CliResult<()> {
    let ckpts = checkpoint_arg(&s)?;
    let runs = s.parse_or("runs", 100usize)?;
    let warmup = s.parse_or("warmup", 10usize)?;
    s.set("runs", runs);
    s.set("warmup", warmup);
    let rule = fusion(&mut s)?;
    configure_threads(&s)?;
    let mut loaded = Vec::new();
    for p in &ckpts {
        loaded.push(load_model(p, rule)?);
    }
    let input_size = s.parse_or("input_size", loaded[0].1.input_size)?;
    s.set("input_size", input_size);
    let dir = run_dir(&s, loaded[0].0.config.seed)?;
    write_config(&dir, &s)?;
    let models: Vec<_> = loaded.iter().map(|(_, m)| m).collect();
    let reports = benchmark_interleaved(&models, input_size, runs, warmup)?;

    let mut table = String::new();
    let mut w = csv::Writer::from_path(dir.join("latency.csv"))?;
    w.write_record([
        "checkpoint",
        "method",
        "fps",
        "mean_ms",
        "median_ms",
        "p95_ms",
        "std_ms",
        "n_runs",
        "warmup_runs",
        "noisy",
        "device",
    ])?;
    for ((path, (ckpt, _)), r) in ckpts.iter().zip(&loaded).zip(&reports) {
        let _ = writeln!(
            table,
            "checkpoint    {} ({})",
            path.display(),
            ckpt.config.method
        );
        table.push_str(&r.to_table());
        table.push('\n');
        w.write_record([
            path.display().to_string(),
            ckpt.config.method.to_string(),
            format!("{:.3}", r.fps),
            format!("{:.4}", r.latency_mean_ms),
            format!("{:.4}", r.latency_median_ms),
            format!("{:.4}", r.latency_p95_ms),
            format!("{:.4}", r.latency_std_ms),
            r.n_runs.to_string(),
            r.warmup_runs.to_string(),
            r.noisy.to_string(),
            r.device_descriptor.clone(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join("latency.txt"), &table)?;
    fs::write(dir.join("latency.kv"), reports[0].to_key_values())?;
    print!("{table}");
    Ok(())
}

/// Parses a comma-separated preset list, dropping repeats with a warning.
pub fn parse_presets(list: &str) -> CliResult<Vec<TapPreset>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let p: TapPreset = item.parse()?;
        if seen.insert(p.name()) {
            out.push(p);
        } else {
            log::warn!("preset {p} listed more than once; ignoring the repeat");
        }
    }
    if out.len() < 2 {
        return Err(CliError::config(
            "`presets` needs at least two distinct tap presets",
        ));
    }
    Ok(out)
}

fn ablation_row(preset: TapPreset, result: &Result<EvalReport, String>) -> String {
    match result {
        Ok(r) => format!(
            "{:<16} {:>11.4} {:>11}",
            preset.name(),
            r.image_auroc,
            r.pixel_auroc
                .map_or("n/a".to_string(), |v| format!("{v:.4}"))
        ),
        Err(e) => format!(
            "{:<16} {:>11} {:>11}  ({e})",
            preset.name(),
            "FAILED",
            "FAILED"
        ),
    }
}

pub fn ablate_layers(mut s: Settings) -> CliResult<()> {
    let presets = parse_presets(s.get_or("presets", "ablation_l12,ablation_l23"))?;
    s.set(
        "presets",
        presets
            .iter()
            .map(|p| p.name())
            .collect::<Vec<_>>()
            .join(","),
    );
    let base = train_config(&mut s)?;
    for p in &presets {
        let mut c = base.clone();
        c.resnet_preset = *p;
        c.validate()?;
    }
    configure_threads(&s)?;
    let splits = load_data(&mut s)?;
    let dir = run_dir(&s, base.seed)?;
    write_config(&dir, &s)?;
    let teachers = Teachers::load(&base)?;

    let mut results = Vec::new();
    for &preset in &presets {
        log::info!("training with tap preset {preset}");
        let mut c = base.clone();
        c.resnet_preset = preset;
        c.checkpoint_dir = Some(dir.join(preset.name()));
        let result = run_training(&c, &splits.train_good, &teachers)
            .and_then(|o| {
                let model = o.checkpoint.into_model(&teachers, FusionRule::default())?;
                evaluate(&model, &splits, EVAL_BATCH)
            })
            .map(|(report, _)| report)
            .map_err(|e| {
                log::error!("preset {preset}: {e}");
                e.to_string()
            });
        results.push((preset, result));
    }

    let mut table = format!("category: {}\n", splits.category);
    let _ = writeln!(
        table,
        "{:<16} {:>11} {:>11}",
        "preset", "image_auroc", "pixel_auroc"
    );
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record(["preset", "image_auroc", "pixel_auroc", "status"])?;
    for (preset, r) in &results {
        let _ = writeln!(table, "{}", ablation_row(*preset, r));
        match r {
            Ok(r) => w.write_record([
                preset.name().to_string(),
                r.image_auroc.to_string(),
                r.pixel_auroc.map_or(String::new(), |v| v.to_string()),
                "ok".into(),
            ])?,
            Err(e) => w.write_record([preset.name(), "", "", &format!("failed: {e}")])?,
        }
    }
    w.flush()?;
    fs::write(dir.join("ablation.txt"), &table)?;
    print!("{table}");
    if results.iter().all(|(_, r)| r.is_err()) {
        return Err(CliError::runtime("every preset failed"));
    }
    Ok(())
}

pub fn make_synthetic(mut s: Settings) -> CliResult<()> {
    let family: TextureFamily = s.parse_or("family", TextureFamily::Grating)?;
    let n_train = s.parse_or("n_train", 200usize)?;
    let n_good = s.parse_or("n_test_good", 25usize)?;
    let n_defect = s.parse_or("n_test_defect", 25usize)?;
    let seed = s.parse_or("data_seed", 0u64)?;
    let root = PathBuf::from(s.get_or("out_dir", "data"));
    s.set("family", family);
    s.set("n_train", n_train);
    s.set("n_test_good", n_good);
    s.set("n_test_defect", n_defect);
    s.set("data_seed", seed);
    s.set("out_dir", root.display());
    let splits = generate_synthetic_texture_dataset(family, n_train, n_good, n_defect, seed);
    let dir = materialize(&splits, &root)?;
    write_config(&dir, &s)?;
    println!("{}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_deduplicated() {
        let p = parse_presets("ablation_l12, ablation_l23,ablation_l12").unwrap();
        assert_eq!(p, vec![TapPreset::AblationL12, TapPreset::AblationL23]);
        assert!(parse_presets("ablation_l12,ablation_l12").is_err());
        assert!(parse_presets("layer9,ablation_l12").is_err());
    }

    #[test]
    fn mixed_defaults_to_200_epochs() {
        let mut s =
            Settings::resolve(&["method"], None, vec![("method", Some("mixed".into()))]).unwrap();
        let c = train_config(&mut s).unwrap();
        assert_eq!(c.epochs, 200);
        assert_eq!(s.get("epochs"), Some("200"));
    }

    #[test]
    fn invalid_split_ratio_names_the_field() {
        let mut s = Settings::resolve(
            &["split_ratio"],
            None,
            vec![("split_ratio", Some("1.5".into()))],
        )
        .unwrap();
        let err = train_config(&mut s).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG);
        assert!(err.message.contains("split_ratio"), "{}", err.message);
    }
}
