use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use sfmfusion::io::{
    list_images, load_dataset, luma_to_tensor, merge_ycbcr, read_image, split_ycbcr,
    tensor_to_luma, write_image, write_synthetic_dataset, Image8, RunConfig,
};
use sfmfusion::metrics::{evaluate_triple, GrayImage, MetricTable, Report};
use sfmfusion::model::{load_checkpoint, save_checkpoint, Branch, FusionModel};
use sfmfusion::trainer::{loss_csv, train};
use sfmfusion::{Error, Result, Tensor};

const EXIT_IO: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "sfmfusion",
    version,
    about = "Multi-modal image fusion with selective-scan blocks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on `DATA/visible` and `DATA/infrared` pairs with matching names.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` overrides applied after the config file.
        #[arg(long = "set")]
        overrides: Vec<String>,
        /// Write a checkpoint every this many epochs.
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
    },
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a visible/infrared pair. Color visible input keeps its chroma.
    Fuse {
        #[arg(long)]
        visible: PathBuf,
        #[arg(long)]
        infrared: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resize both inputs to `WIDTHxHEIGHT` first.
        #[arg(long)]
        resize: Option<String>,
    },
    /// Run one reconstruction branch on an image.
    Reconstruct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        branch: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics for every fused image against the same-named sources.
    Eval {
        #[arg(long)]
        fused: PathBuf,
        #[arg(long = "src-a")]
        src_a: PathBuf,
        #[arg(long = "src-b")]
        src_b: PathBuf,
        /// CSV report; a JSON copy is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-metric competition ranks and average rank of method tables.
    Rank {
        #[arg(long, num_args = 1.., required = true)]
        tables: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic visible/infrared dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Image { .. } => EXIT_IO,
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_VALIDATION,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run_config(config: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for item in overrides {
        cfg.apply_override(item)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_size(text: &str) -> Result<(u32, u32)> {
    let bad = || Error::Usage(format!("--resize expects WIDTHxHEIGHT, got {text:?}"));
    let (w, h) = text.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            data,
            config,
            out,
            overrides,
            checkpoint_every,
        } => {
            let cfg = run_config(config.as_deref(), &overrides)?;
            let pairs: Vec<(Tensor, Tensor)> = load_dataset(&data, cfg.train.size)?
                .into_iter()
                .map(|(_, v, i)| (v, i))
                .collect();
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            write_text(&out.join("config.txt"), &cfg.to_text())?;
            let mut model = FusionModel::new(cfg.model)?;
            eprintln!(
                "training {} parameters on {} pairs",
                model.num_parameters(),
                pairs.len()
            );
            let every = checkpoint_every.max(1);
            let logs = train(
                &mut model,
                &pairs,
                &cfg.train,
                &cfg.loss,
                |log| {
                    eprintln!(
                        "iter {} epoch {} lr {:.3e} total {:.6}",
                        log.iter, log.epoch, log.lr, log.report.l_total
                    );
                    Ok(())
                },
                |epoch, model| {
                    if (epoch + 1) % every == 0 {
                        save_checkpoint(&out.join(format!("epoch_{:03}.ckpt", epoch + 1)), model)?;
                    }
                    Ok(())
                },
            )?;
            write_text(&out.join("loss.csv"), &loss_csv(&logs))?;
            save_checkpoint(&out.join("model.ckpt"), &model)?;
            if let (Some(first), Some(last)) = (logs.first(), logs.last()) {
                println!(
                    "iterations {} first loss {:.6} last loss {:.6}",
                    logs.len(),
                    first.report.l_total,
                    last.report.l_total
                );
            }
            Ok(())
        }
        Command::Init {
            config,
            overrides,
            out,
        } => {
            let cfg = run_config(config.as_deref(), &overrides)?;
            save_checkpoint(&out, &FusionModel::new(cfg.model)?)
        }
        Command::Fuse {
            visible,
            infrared,
            checkpoint,
            out,
            resize,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let mut vis = read_image(&visible)?;
            let mut ir = read_image(&infrared)?;
            if let Some(size) = resize {
                let (w, h) = parse_size(&size)?;
                vis = vis.resized(w, h);
                ir = ir.resized(w, h);
            }
            if vis.dimensions() != ir.dimensions() {
                return Err(Error::Dimension(format!(
                    "visible is {:?} but infrared is {:?}",
                    vis.dimensions(),
                    ir.dimensions()
                )));
            }
            let fused =
                model.fuse_only(&luma_to_tensor(&vis.luma()), &luma_to_tensor(&ir.luma()))?;
            let y = tensor_to_luma(&fused)?;
            let image = match (&vis, out.extension().and_then(|e| e.to_str())) {
                (Image8::Rgb(rgb), Some(ext)) if !ext.eq_ignore_ascii_case("pgm") => {
                    let (_, cb, cr) = split_ycbcr(rgb);
                    Image8::Rgb(merge_ycbcr(&y, &cb, &cr))
                }
                _ => Image8::Gray(y),
            };
            write_image(&out, &image)
        }
        Command::Reconstruct {
            input,
            branch,
            checkpoint,
            out,
        } => {
            let branch: Branch = branch.parse()?;
            let model = load_checkpoint(&checkpoint)?;
            let x = luma_to_tensor(&read_image(&input)?.luma());
            let y = model.reconstruct(branch, &x)?;
            write_image(&out, &Image8::Gray(tensor_to_luma(&y)?))
        }
        Command::Eval {
            fused,
            src_a,
            src_b,
            report,
        } => {
            let names = list_images(&fused)?;
            let (in_a, in_b) = (list_images(&src_a)?, list_images(&src_b)?);
            let unmatched: Vec<&String> = names
                .iter()
                .filter(|n| !in_a.contains(n) || !in_b.contains(n))
                .collect();
            if !unmatched.is_empty() {
                for n in &unmatched {
                    eprintln!("unmatched: {n}");
                }
                return Err(Error::Invalid(format!(
                    "{} fused images lack a source pair",
                    unmatched.len()
                )));
            }
            let load = |dir: &Path, name: &str| -> Result<GrayImage> {
                let img = read_image(&dir.join(name))?.luma();
                GrayImage::from_u8(img.height() as usize, img.width() as usize, img.as_raw())
            };
            let rows = names
                .par_iter()
                .map(|name| {
                    let row = evaluate_triple(
                        &load(&fused, name)?,
                        &load(&src_a, name)?,
                        &load(&src_b, name)?,
                    )?;
                    Ok((name.clone(), row))
                })
                .collect::<Result<Vec<_>>>()?;
            let report_data = Report { rows };
            write_text(&report, &report_data.to_csv()?)?;
            write_text(&report.with_extension("json"), &report_data.to_json())?;
            if let Some(mean) = report_data.mean() {
                println!("mean {:?}", mean.0);
            }
            Ok(())
        }
        Command::Rank { tables, out } => {
            let mut text = String::new();
            for (k, path) in tables.iter().enumerate() {
                let raw = fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let table = MetricTable::from_csv(&raw)?;
                let csv = table.rank_csv()?;
                let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
                for (j, line) in csv.lines().enumerate() {
                    if j == 0 && k > 0 {
                        continue;
                    }
                    let prefix = if j == 0 { "table" } else { label };
                    text.push_str(prefix);
                    text.push(',');
                    text.push_str(line);
                    text.push('\n');
                }
                if let Some(reference) = &table.reference_rank {
                    let computed = sfmfusion::metrics::avg_rank(&table);
                    let matched = computed
                        .iter()
                        .zip(reference)
                        .filter(|(c, r)| (*c - *r).abs() <= 0.01)
                        .count();
                    println!(
                        "{label}: {matched}/{} average ranks match the avg_rank column",
                        reference.len()
                    );
                }
            }
            write_text(&out, &text)
        }
        Command::Synth {
            out,
            count,
            size,
            seed,
        } => {
            if size == 0 || count == 0 {
                return Err(Error::Usage("count and size must be positive".into()));
            }
            let names = write_synthetic_dataset(&out, count, size, seed)?;
            println!("wrote {} pairs", names.len());
            Ok(())
        }
    }
}
