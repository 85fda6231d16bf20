//! `tda`: synthesise domains, run the adaptation procedure, and drive the
//! individual stages from the command line.
//!
//! Exit codes: 0 success, 2 configuration / I/O / format, 3 shape, 4 numeric
//! divergence, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tda_core::io::{self, config::train_block, fmt_real, KvFile, RunConfig, SynthConfig};
use tda_core::metrics::{compute_all, MetricsReport, DEFAULT_BINS};
use tda_core::mpca::{fit_joint, project, reconstruct};
use tda_core::nn::{build_type, finetune, train, Samples, TrainConfig};
use tda_core::pipeline::{rmse, run_procedure, split, DomainDataset, SplitSpec, Stage};
use tda_core::signal::build_domain;
use tda_core::signal::synth::PLATE_DIMS;
use tda_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tda", version, about = "MPCA domain adaptation for guided-wave damage localisation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    X,
    Y,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one domain and write it as a dataset directory.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        copies: Option<usize>,
    },
    /// Run the full eight-step procedure from an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        paper_split: bool,
    },
    /// Histogram distances between the pixel values of two datasets.
    Metrics {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Joint mode-2 MPCA of two datasets; writes the basis and both projections.
    Mpca {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, default_value_t = 99.0)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a fresh single-axis regressor on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// CNN architecture (1, 2 or 3).
        #[arg(long = "type", default_value_t = 1)]
        kind: u8,
        /// key = value file with lr, batch_size, max_epochs, patience, lr_drop_period, lr_drop_factor.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        paper_split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrain the fully connected part of a checkpoint on a dataset.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        paper_split: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-axis RMSE of a model pair on a dataset, or the reconstruction error
    /// of a projected dataset when `--original` is given.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, requires = "model_y")]
        model_x: Option<PathBuf>,
        #[arg(long, requires = "model_x")]
        model_y: Option<PathBuf>,
        /// Project `data` through this basis first, or reconstruct through it with `--original`.
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, requires = "basis")]
        original: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn set_threads() -> Result<()> {
    let Ok(v) = std::env::var("TDA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::config("TDA_THREADS", format!("expected a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("TDA_THREADS", e.to_string()))?;
    let _ = n;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_config(path: Option<&Path>, seed: u64) -> Result<TrainConfig> {
    let mut c = TrainConfig { seed, ..TrainConfig::default() };
    if let Some(p) = path {
        let mut kv = KvFile::read(p)?;
        c = train_block(&mut kv, "", c)?;
        kv.finish()?;
    }
    Ok(c)
}

/// Flat inputs and one axis of targets scaled by the plate size.
fn samples_of(ds: &DomainDataset, idx: &[usize], axis: Axis) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    for &k in idx {
        x.extend_from_slice(ds.images.slice_values(k));
    }
    let t = idx
        .iter()
        .map(|&k| match axis {
            Axis::X => ds.labels[k].0 / PLATE_DIMS.0,
            Axis::Y => ds.labels[k].1 / PLATE_DIMS.1,
        })
        .collect();
    (x, t)
}

fn fit_split(ds: &DomainDataset, spec: SplitSpec, axis: Axis) -> Result<[(Vec<f64>, Vec<f64>); 2]> {
    let p = split(ds, &spec)?;
    Ok([samples_of(ds, &p.train, axis), samples_of(ds, &p.val, axis)])
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { config, out, seed, copies } => {
            let mut kv = KvFile::read(&config)?;
            if let Some(s) = seed {
                kv.set("seed", s);
            }
            if let Some(c) = copies {
                kv.set("copies", c);
            }
            let c = SynthConfig::from_kv(kv)?;
            let ds = build_domain(&c.scenario, c.network, c.copies)?;
            io::write_dataset(&out, &ds)?;
            let (i1, i2) = ds.image_dims();
            println!(
                "{}: {} images of {i1}x{i2} ({} network, {} damage sites x {} copies) -> {}",
                ds.material,
                ds.len(),
                ds.network.as_str(),
                ds.group_ids().len(),
                c.copies,
                out.display()
            );
        }
        Cmd::Run { config, out, seed, q, paper_split } => {
            let mut rc = RunConfig::read(&config)?;
            if let Some(o) = out {
                rc.out = o;
            }
            if let Some(s) = seed {
                rc.experiment.seed = s;
            }
            if let Some(q) = q {
                rc.experiment.q_percent = q;
            }
            rc.experiment.paper_split |= paper_split;
            rc.experiment.validate()?;
            let a = io::read_dataset(&rc.source)?;
            let b = io::read_dataset(&rc.target)?;
            if rc.experiment.case_id.is_empty() {
                rc.experiment.case_id = format!(
                    "{}/{}->{}/{}",
                    a.material,
                    a.network.as_str(),
                    b.material,
                    b.network.as_str()
                );
            }
            let report = run_procedure(&a, &b, &rc.experiment)?;
            io::write_report(&rc.out, &report)?;
            print!("{}", report.to_text());
            println!("reports written to {}", rc.out.display());
        }
        Cmd::Metrics { source, target, out, bins } => {
            let a = io::read_dataset(&source)?;
            let b = io::read_dataset(&target)?;
            let m = compute_all(a.images.as_slice(), b.images.as_slice(), bins)?;
            emit(out.as_deref(), &format!("{}\n{}\n", MetricsReport::csv_header(), m.csv_row()))?;
        }
        Cmd::Mpca { source, target, q, out } => {
            let a = io::read_dataset(&source)?;
            let b = io::read_dataset(&target)?;
            let f = fit_joint(&a.images, &b.images, q)?;
            io::write_basis(&out.join("basis"), &f.basis)?;
            io::write_dataset(&out.join("source"), &a.with_images(f.projected_source, Stage::Projected)?)?;
            io::write_dataset(&out.join("target"), &b.with_images(f.projected_target, Stage::Projected)?)?;
            println!(
                "i2 {} -> p2 {} (retained {}), written to {}",
                f.basis.i2(),
                f.p2,
                fmt_real(f.basis.retained_fraction),
                out.display()
            );
        }
        Cmd::Train { data, axis, kind, config, seed, paper_split, out } => {
            let ds = io::read_dataset(&data)?;
            let cfg = train_config(config.as_deref(), seed)?;
            let spec = SplitSpec {
                ungrouped: paper_split,
                ..SplitSpec::training(tda_core::seed::derive(seed, "split"))
            };
            let [(xt, tt), (xv, tv)] = fit_split(&ds, spec, axis)?;
            let m = train(build_type(kind, ds.image_dims())?, Samples::new(&xt, &tt)?, Samples::new(&xv, &tv)?, &cfg)?;
            io::save_model(&out, &m)?;
            let best = m.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
            println!("trained {} epochs, best val loss {}, -> {}", m.history.len(), fmt_real(best), out.display());
        }
        Cmd::Finetune { model, data, axis, config, seed, paper_split, out } => {
            let base = io::load_model(&model)?;
            let ds = io::read_dataset(&data)?;
            let cfg = train_config(config.as_deref(), seed)?;
            let spec = SplitSpec {
                ungrouped: paper_split,
                ..SplitSpec::finetuning(tda_core::seed::derive(seed, "split"))
            };
            let [(xt, tt), (xv, tv)] = fit_split(&ds, spec, axis)?;
            let m = finetune(&base, Samples::new(&xt, &tt)?, Samples::new(&xv, &tv)?, &cfg)?;
            io::save_model(&out, &m)?;
            println!("fine-tuned {} epochs -> {}", m.history.len(), out.display());
        }
        Cmd::Eval { data, model_x, model_y, basis, original, out } => {
            let ds = io::read_dataset(&data)?;
            match (model_x, model_y, original) {
                (Some(mx), Some(my), None) => {
                    let images = match &basis {
                        Some(b) => project(&ds.images, &io::read_basis(b)?)?,
                        None => ds.images.clone(),
                    };
                    let (mx, my) = (io::load_model(&mx)?, io::load_model(&my)?);
                    let n = ds.len();
                    let px = mx.predict(images.as_slice(), n)?;
                    let py = my.predict(images.as_slice(), n)?;
                    let pred: Vec<(f64, f64)> =
                        px.iter().zip(&py).map(|(a, b)| (a * PLATE_DIMS.0, b * PLATE_DIMS.1)).collect();
                    let (rx, ry) = rmse(&pred, &ds.labels)?;
                    let mut text = format!("n,rmse_x_mm,rmse_y_mm\n{n},{},{}\n", fmt_real(rx), fmt_real(ry));
                    text.push_str("\nindex,group,true_x,true_y,pred_x,pred_y\n");
                    for (k, p) in pred.iter().enumerate() {
                        let t = ds.labels[k];
                        text.push_str(&format!(
                            "{k},{},{},{},{},{}\n",
                            ds.groups[k],
                            fmt_real(t.0),
                            fmt_real(t.1),
                            fmt_real(p.0),
                            fmt_real(p.1)
                        ));
                    }
                    emit(out.as_deref(), &text)?;
                }
                (None, None, Some(orig)) => {
                    let b = io::read_basis(basis.as_deref().expect("clap enforces --basis"))?;
                    let back = reconstruct(&ds.images, &b)?;
                    let o = io::read_dataset(&orig)?;
                    if o.images.dims() != back.dims() {
                        return Err(Error::shape(format!(
                            "reconstruction is {:?}, original is {:?}",
                            back.dims(),
                            o.images.dims()
                        )));
                    }
                    let err = back
                        .as_slice()
                        .iter()
                        .zip(o.images.as_slice())
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    emit(out.as_deref(), &format!("max_abs_reconstruction_error\n{}\n", fmt_real(err)))?;
                }
                _ => {
                    return Err(Error::config(
                        "eval",
                        "give either --model-x and --model-y, or --basis with --original",
                    ))
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match set_threads().and_then(|_| execute(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
