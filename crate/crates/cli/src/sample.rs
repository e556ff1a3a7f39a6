use minidiff::data::{trajectory_grid, write_image_grid, Checkpoint};
use minidiff::{Conditioning, DatasetKind, DdimPlan, Diffusion, GuidanceConfig, Rng, SampleShape};

use crate::cli::{SampleArgs, SamplerArg};
use crate::{print_config, Failure};

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(args: SampleArgs) -> Result<(), Failure> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    if let Some(t) = args.timesteps {
        ck.check_schedule(t)?;
    }
    let total = ck.timesteps;
    let steps = match (args.sampler, args.steps) {
        (SamplerArg::Ddim, None) => return Err(usage("--sampler ddim requires --steps")),
        (SamplerArg::Ddpm, Some(_)) => return Err(usage("--steps only applies to --sampler ddim")),
        (SamplerArg::Ddim, Some(s)) => {
            DdimPlan::new(total, s)?;
            s
        }
        (SamplerArg::Ddpm, None) => total,
    };
    if args.batch == 0 {
        return Err(usage("--batch must be at least 1"));
    }
    if args.cols == Some(0) {
        return Err(usage("--cols must be at least 1"));
    }
    let classes = ck.unet.class_count;
    let cond = match classes {
        None => {
            if args.label.is_some() || args.guidance.is_some() {
                return Err(usage("--label and --guidance need a conditional checkpoint"));
            }
            Conditioning::unconditional()
        }
        Some(k) => {
            if let Some(l) = args.label.filter(|&l| l >= k) {
                return Err(usage(format!("label {l} out of range for {k} classes")));
            }
            let labels: Vec<usize> = (0..args.batch).map(|i| args.label.unwrap_or(i % k)).collect();
            match args.guidance {
                Some(w) if !(w >= 0.0 && w.is_finite()) => {
                    return Err(usage(format!("guidance weight must be finite and non-negative, got {w}")))
                }
                Some(w) => Conditioning::guided(labels, GuidanceConfig { weight: w, null_label: k }),
                None => Conditioning::labels(labels),
            }
        }
    };
    let image_size = ck
        .meta("dataset")
        .and_then(DatasetKind::from_name)
        .map(DatasetKind::image_size)
        .ok_or_else(|| Failure::Runtime("checkpoint does not record its dataset".into()))?;
    let cols = args.cols.unwrap_or_else(|| (args.batch as f64).sqrt().ceil() as usize);
    let record_every = match (args.trajectory, args.record_every) {
        (false, _) => 0,
        (true, Some(0)) => return Err(usage("--record-every must be at least 1")),
        (true, Some(k)) => k,
        (true, None) => (steps / 10).max(1),
    };

    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
    let sampler = match args.sampler {
        SamplerArg::Ddpm => "ddpm",
        SamplerArg::Ddim => "ddim",
    };
    let pairs: Vec<(String, String)> = [
        ("checkpoint", args.checkpoint.display().to_string()),
        ("timesteps", total.to_string()),
        ("sampler", sampler.to_string()),
        ("steps", steps.to_string()),
        ("batch", args.batch.to_string()),
        ("label", opt(args.label.map(|l| l.to_string()))),
        ("guidance", opt(args.guidance.map(|w| w.to_string()))),
        ("seed", args.seed.to_string()),
        ("out-dir", args.out_dir.display().to_string()),
        ("trajectory", args.trajectory.to_string()),
        ("record-every", record_every.to_string()),
        ("cols", cols.to_string()),
        ("image-size", image_size.to_string()),
        ("conditional", classes.is_some().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    print_config("resolved config", &pairs);

    let model = ck.to_model::<f32>()?;
    let diffusion = Diffusion::linear(total)?;
    let shape = SampleShape {
        batch: args.batch,
        channels: ck.unet.io_channels,
        image_size,
    };
    let mut rng = Rng::seed_from_u64(args.seed);
    let trajectory = match args.sampler {
        SamplerArg::Ddpm => diffusion.sample_loop(&model, shape, &mut rng, &cond, record_every)?,
        SamplerArg::Ddim => diffusion.ddim_sample_loop(&model, shape, steps, &mut rng, &cond, record_every)?,
    };

    std::fs::create_dir_all(&args.out_dir)?;
    let ext = if shape.channels == 3 { "ppm" } else { "pgm" };
    let grid = args.out_dir.join(format!("samples.{ext}"));
    write_image_grid(trajectory.final_sample(), cols, &grid)?;
    println!("wrote {}", grid.display());
    if args.trajectory {
        let (frames, frame_cols) = trajectory_grid(&trajectory.frames)?;
        let path = args.out_dir.join(format!("trajectory.{ext}"));
        write_image_grid(&frames, frame_cols, &path)?;
        println!("wrote {} ({} frames per sample)", path.display(), frame_cols);
    }
    Ok(())
}
