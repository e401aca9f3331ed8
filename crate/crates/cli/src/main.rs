use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use gausstalk::checkpoint::Checkpoint;
use gausstalk::commands::{eval_cmd, render_cmd, Drive};
use gausstalk::config::RunConfig;
use gausstalk::io::{load_bundle, read_manifest, save_bundle};
use gausstalk::render::BlendMode;
use gausstalk::synth::gen_scene;
use gausstalk::train::Trainer;
use gausstalk::{par, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "gausstalk", version, about = "Audio/AU-driven Gaussian talking heads on a synthetic benchmark")]
struct Cli {
    /// TOML run configuration; every field is optional
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides both the scene seed and the training seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Use the long 50000/15000-step schedule
    #[arg(long, global = true)]
    paper_scale: bool,

    #[arg(long, global = true, value_enum)]
    blend: Option<BlendArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BlendArg {
    AsWritten,
    FaceComplement,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DriveArg {
    Audio,
    Image,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene bundle
    GenData {
        /// Output directory (default: paths.bundle)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the three training stages
    Train {
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Run directory (default: paths.output)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render frames from a checkpoint
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "audio")]
        drive: DriveArg,
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Exclusive end frame (default: bundle length)
        #[arg(long)]
        end: Option<usize>,
    },
    /// Score rendered frames against the bundle
    Eval {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// JSONL report path (default: <rendered>/metrics.jsonl); a text
        /// table is written next to it
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the default configuration or summarize artifacts
    Inspect {
        #[arg(long)]
        default_config: bool,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.synth.seed = s;
        c.train.seed = s;
    }
    if let Some(t) = cli.threads {
        c.train.threads = t;
    }
    if cli.paper_scale {
        c.paper_scale();
    }
    if let Some(b) = cli.blend {
        let mode = match b {
            BlendArg::AsWritten => BlendMode::AsWritten,
            BlendArg::FaceComplement => BlendMode::FaceComplement,
        };
        c.synth.blend_mode = mode;
        c.blend_mode = Some(mode);
    }
    c.validate()?;
    Ok(c)
}

fn gen_data(c: &RunConfig, out: Option<PathBuf>, frames: Option<usize>) -> Result<()> {
    let mut synth = c.synth.clone();
    if let Some(f) = frames {
        synth.frames = f;
    }
    let out = out.unwrap_or_else(|| c.paths.bundle.clone());
    let start = Instant::now();
    let bundle = gen_scene(&synth)?;
    save_bundle(&out, &bundle)?;
    eprintln!("wrote {} frames to {} in {:.1}s", bundle.len(), out.display(), start.elapsed().as_secs_f64());
    Ok(())
}

fn train(c: &RunConfig, bundle: Option<PathBuf>, out: Option<PathBuf>, resume: Option<PathBuf>) -> Result<()> {
    let bundle = load_bundle(&bundle.unwrap_or_else(|| c.paths.bundle.clone()))?;
    let out = out.unwrap_or_else(|| c.paths.output.clone());
    let mut trainer = match &resume {
        Some(p) => Trainer::resume(c, &bundle, &Checkpoint::load(p)?)?,
        None => Trainer::new(c, &bundle)?,
    };
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), c.to_toml())?;
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(out.join("log.jsonl"))?;
    let total = trainer.total_iters();
    let every = c.train.checkpoint_every;
    let start = Instant::now();
    eprintln!("training {} steps from step {} ({})", total, trainer.iteration, trainer.config_hash());
    trainer.run(total, |t, r| {
        writeln!(log, "{}", r.to_json())?;
        if every > 0 && t.iteration % every == 0 {
            t.checkpoint().save(&out.join(format!("checkpoint-{:06}.hmtc", t.iteration)))?;
        }
        if t.iteration % 100 == 0 || t.iteration == total {
            eprintln!(
                "step {:>6}/{total} {:<8} loss {:.5} l1 {:.5} align {:.4} {:.0}s",
                t.iteration,
                r.stage.name(),
                r.loss.total,
                r.loss.l1,
                r.loss.align,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let path = out.join("checkpoint.hmtc");
    trainer.checkpoint().save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn eval(c: &RunConfig, rendered: &Path, bundle: Option<PathBuf>, report: Option<PathBuf>) -> Result<()> {
    let bundle = load_bundle(&bundle.unwrap_or_else(|| c.paths.bundle.clone()))?;
    let r = eval_cmd(rendered, &bundle)?;
    let jsonl = report.unwrap_or_else(|| rendered.join("metrics.jsonl"));
    std::fs::write(&jsonl, r.to_jsonl())?;
    std::fs::write(jsonl.with_extension("txt"), r.to_text())?;
    print!("{}", r.to_text());
    Ok(())
}

fn inspect(default_config: bool, bundle: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<()> {
    if default_config {
        print!("{}", RunConfig::default().to_toml());
    }
    if let Some(b) = bundle {
        let m = read_manifest(&b)?;
        println!("bundle {} ({} v{})", b.display(), m.format, m.version);
        println!("  frames {}  {}x{}  blend {}", m.frames, m.config.width, m.config.height, m.config.blend_mode.name());
        println!("  primitives face {} mouth {}", m.config.face_prims, m.config.mouth_prims);
        for (name, hash) in &m.files {
            println!("  {name:<14} {}", &hash[..16]);
        }
    }
    if let Some(p) = checkpoint {
        let c = Checkpoint::load(&p)?;
        let values: usize = c.params.iter().map(|e| e.value.len()).sum();
        println!("checkpoint {}", p.display());
        println!("  stage {}  iteration {}  seed {}", c.stage.name(), c.iteration, c.train_seed);
        println!("  config hash {}", c.config_hash);
        println!("  {} tensors, {values} values", c.params.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Inspect { default_config, bundle, checkpoint } = cli.command {
        if !default_config && bundle.is_none() && checkpoint.is_none() {
            return Err(Error::Config("inspect needs --default-config, --bundle or --checkpoint".into()));
        }
        return inspect(default_config, bundle, checkpoint);
    }
    let c = load_config(&cli)?;
    par::with_threads(c.train.threads, || match cli.command {
        Command::GenData { out, frames } => gen_data(&c, out, frames),
        Command::Train { bundle, out, resume } => train(&c, bundle, out, resume),
        Command::Render { checkpoint, bundle, out, drive, start, end } => {
            let bundle = load_bundle(&bundle.unwrap_or_else(|| c.paths.bundle.clone()))?;
            let drive = match drive {
                DriveArg::Audio => Drive::Audio,
                DriveArg::Image => Drive::Image,
            };
            let end = end.unwrap_or(bundle.len());
            let n = render_cmd(&Checkpoint::load(&checkpoint)?, &bundle, start..end.max(start), drive, &out)?;
            eprintln!("rendered {n} frames ({}) to {}", drive.name(), out.display());
            Ok(())
        }
        Command::Eval { rendered, bundle, report } => eval(&c, &rendered, bundle, report),
        Command::Inspect { .. } => unreachable!("handled above"),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
