//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsal_core::dataset::{load_dir, read_image, read_prob, save_dir, write_mask};
use dsal_core::harness::experiment::{load_samples, run_experiment};
use dsal_core::harness::{report, ExperimentConfig};
use dsal_core::segmenter::{checkpoint, DeepSupervisedNet, Segmenter};
use dsal_core::selection::{
    score_sample, select_queries, write_scores, SelectionConfig, SCORES_HEADER,
};
use dsal_core::synthetic::{generate, ShapeKind};
use dsal_core::weaklabeler::{build_ensemble, CrfEnsemble};
use dsal_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dsal",
    version,
    about = "Active learning for binary segmentation"
)]
struct Cli {
    /// Master seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (flat `key = value` text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (images/, masks/, manifest.txt).
    Generate {
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        shape: Option<ShapeKind>,
        #[arg(long)]
        noise_level: Option<f64>,
        #[arg(long)]
        occlusion_prob: Option<f64>,
    },
    /// Run the configured experiment and write its reports.
    Run,
    /// Score every sample of a corpus with a checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory; defaults to the configured dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Refine a probability map with the CRF ensemble.
    Refine {
        #[arg(long)]
        image: PathBuf,
        /// Foreground probabilities as 8-bit grayscale.
        #[arg(long)]
        prob: PathBuf,
        /// Ensemble snapshot; defaults to one built from the config.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rebuild correlation reports from the held-out pairs under --out.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or(Error::InvalidParameter {
        name: "--out",
        reason: "an output directory is required".into(),
    })
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate {
            n_samples,
            image_size,
            shape,
            noise_level,
            occlusion_prob,
        } => {
            let spec = &mut cfg.synthetic;
            spec.n_samples = n_samples.unwrap_or(spec.n_samples);
            spec.image_size = image_size.unwrap_or(spec.image_size);
            spec.shape = shape.unwrap_or(spec.shape);
            spec.noise_level = noise_level.unwrap_or(spec.noise_level);
            spec.occlusion_prob = occlusion_prob.unwrap_or(spec.occlusion_prob);
            let out = out_dir(cli)?;
            save_dir(&generate(spec)?, out)?;
            println!("wrote {} samples to {}", spec.n_samples, out.display());
        }
        Command::Run => {
            let out = out_dir(cli)?;
            let results = run_experiment(&cfg, out)?;
            for v in &results.variants {
                println!(
                    "{:<32} final_dsc={:.4} oracle={} pseudo={}",
                    v.name,
                    v.final_dsc(),
                    v.oracle_labels(),
                    v.pseudo_labels()
                );
            }
            if let Some(d) = results.full_supervision_dsc {
                println!("{:<32} final_dsc={d:.4}", "full_supervision");
            }
        }
        Command::Score {
            checkpoint: ckpt,
            data,
        } => {
            let model = DeepSupervisedNet {
                params: checkpoint::load(ckpt)?,
            };
            let samples = match data {
                Some(dir) => load_dir(dir)?,
                None => load_samples(&cfg)?,
            };
            let scores = samples
                .iter()
                .map(|s| score_sample(s.id.clone(), &model.predict(&s.image)?))
                .collect::<Result<Vec<_>>>()?;
            let split = select_queries(
                &scores,
                &SelectionConfig {
                    k_strong: cfg.al.k_strong,
                    k_weak: cfg.al.k_weak,
                    bins: cfg.al.bins,
                    pseudo_enabled: cfg.al.ablation.pseudo_labels,
                    confidence_filter: cfg.al.ablation.confidence_filter,
                },
            )?;
            let out = out_dir(cli)?;
            create(out)?;
            let path = out.join("scores.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(SCORES_HEADER)?;
            write_scores(&mut w, 0, &scores, &split)?;
            w.flush().map_err(|e| Error::Io { path, source: e })?;
            println!("scored {} samples", scores.len());
        }
        Command::Refine {
            image,
            prob,
            ensemble,
            output,
        } => {
            let ensemble = match ensemble {
                Some(path) => {
                    CrfEnsemble::from_snapshot(&fs::read_to_string(path).map_err(|e| {
                        Error::Io {
                            path: path.clone(),
                            source: e,
                        }
                    })?)?
                }
                None => {
                    let e = &cfg.al.ensemble;
                    build_ensemble(e.center, e.members, e.perturb, e.seed)?
                }
            };
            let mask = ensemble.refine(&read_image(image)?, &read_prob(prob)?)?;
            write_mask(output, &mask)?;
            println!("foreground pixels: {}", mask.foreground_count());
        }
        Command::Report => {
            for d in report::regenerate(out_dir(cli)?)? {
                println!("updated {d}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dsal: error: {e}");
            ExitCode::FAILURE
        }
    }
}
