use minidiff::data::Checkpoint;
use minidiff::trainer::{LATEST_CHECKPOINT, METRICS_FILE};
use minidiff::{Dataset, DatasetKind, ScheduleTable, TrainConfig, Trainer};

use crate::cli::TrainArgs;
use crate::{print_config, Failure};

fn pairs(args: &TrainArgs, kind: DatasetKind) -> Vec<(String, Option<String>)> {
    let s = |v: &dyn ToString| Some(v.to_string());
    let path = |p: &std::path::Path| Some(p.display().to_string());
    vec![
        ("dataset".into(), s(&kind)),
        ("data-dir".into(), path(&args.data_dir)),
        ("epochs".into(), s(&args.epochs)),
        ("timesteps".into(), s(&args.timesteps)),
        ("batch-size".into(), s(&args.batch_size)),
        ("lr".into(), s(&args.lr)),
        ("model-channels".into(), s(&args.model_channels)),
        ("deeper".into(), s(&args.deeper)),
        ("conditional".into(), s(&args.conditional)),
        ("p-uncond".into(), s(&args.p_uncond)),
        ("seed".into(), s(&args.seed)),
        ("checkpoint-every".into(), s(&args.checkpoint_every)),
        ("out-dir".into(), path(&args.out_dir)),
        ("grad-clip".into(), args.grad_clip.map(|v| v.to_string())),
        ("limit".into(), args.limit.map(|v| v.to_string())),
        ("resume".into(), args.resume.as_deref().and_then(path)),
    ]
}

fn check_dataset_files(kind: DatasetKind, args: &TrainArgs) -> Result<(), Failure> {
    if !args.data_dir.is_dir() {
        return Err(Failure::Usage(format!(
            "dataset directory {} does not exist",
            args.data_dir.display()
        )));
    }
    let files = kind.files(&args.data_dir);
    let present = files.iter().filter(|p| p.is_file()).count();
    let complete = match kind {
        DatasetKind::Cifar10 => present > 0,
        _ => present == files.len(),
    };
    if !complete {
        let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
        return Err(Failure::Usage(format!(
            "missing {kind} files; expected {}",
            names.join(", ")
        )));
    }
    Ok(())
}

pub fn run(args: TrainArgs) -> Result<(), Failure> {
    let kind: DatasetKind = args.dataset.into();
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        timesteps: args.timesteps,
        dataset: kind,
        conditional: args.conditional,
        p_uncond: args.p_uncond,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        out_dir: Some(args.out_dir.clone()),
        model_channels: args.model_channels,
        depth_extension: args.deeper,
        grad_clip: args.grad_clip,
    };
    config.validate()?;
    ScheduleTable::linear(config.timesteps)?;
    if args.limit == Some(0) {
        return Err(Failure::Usage("--limit must be at least 1".into()));
    }
    let pairs = pairs(&args, kind);
    let shown: Vec<(String, String)> = pairs
        .iter()
        .map(|(k, v)| (k.clone(), v.clone().unwrap_or_else(|| "none".into())))
        .collect();
    print_config("resolved config", &shown);
    check_dataset_files(kind, &args)?;

    let mut data = Dataset::load(kind, &args.data_dir)?;
    if let Some(limit) = args.limit {
        data.truncate(limit);
    }
    let [c, h, w] = data.image_shape();
    std::fs::create_dir_all(&args.out_dir)?;
    let saved: String = pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}\n")))
        .filter(|line| !line.starts_with("resume="))
        .collect();
    std::fs::write(args.out_dir.join("config.txt"), saved)?;

    let mut trainer = match &args.resume {
        Some(path) => Trainer::<f32>::resume(config, &Checkpoint::load(path)?)?,
        None => Trainer::<f32>::new(config)?,
    };
    println!(
        "data: {} images of {c}x{h}x{w}; model: {} parameters; starting at epoch {}",
        data.len(),
        trainer.model().parameter_count(),
        trainer.epochs_done()
    );
    let epochs = args.epochs;
    trainer.run(
        &data,
        &mut |s| {
            println!(
                "epoch {}/{epochs} step {} loss {:.5} ({:.1}s)",
                s.epoch, s.step, s.mean_loss, s.wallclock_s
            )
        },
        &mut |_| {},
    )?;
    println!(
        "wrote {} and {}",
        args.out_dir.join(LATEST_CHECKPOINT).display(),
        args.out_dir.join(METRICS_FILE).display()
    );
    Ok(())
}
