//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::augment::{expand_training_set, materialize, parse_manifest, write_manifest, AugmentOptions};
use crate::config::{Clock, ConfigError, PipelineConfig};
use crate::dataset::{generate_synthetic, Dataset, DatasetError, SplitFractions, SynthMix, SynthOptions, SPLIT_DIR};
use crate::detect::{BackendError, CalibrationError};
use crate::eval::{heatmap, heatmap_text, letter_histogram, write_heatmap_png};
use crate::netspec;
use crate::pipeline::{self, PipelineError};

/// Exit codes by error category.
pub mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATASET: u8 = 3;
    pub const BACKEND: u8 = 4;
    pub const CALIBRATION: u8 = 5;
}

#[derive(Debug, Parser)]
#[command(name = "alpr", version, about = "Cascaded license plate recognition pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset root.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClockArg {
    Wall,
    Fixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Profile {
    Ufpr,
    Ssig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeatTarget {
    Vehicles,
    Plates,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline on a dataset split and write records and reports.
    Run {
        /// train, test, validation or all.
        #[arg(long)]
        split: Option<String>,
        /// Miss rate applied to every simulated detection stage.
        #[arg(long)]
        miss_rate: Option<f64>,
        #[arg(long, value_enum)]
        clock: Option<ClockArg>,
        /// Start from a preset instead of the default config.
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// Write the output files without printing the report.
        #[arg(long)]
        quiet: bool,
    },
    /// Calibrate thresholds and margins on the validation split.
    Calibrate {
        #[arg(long, default_value = "validation")]
        split: String,
        /// Where to write the calibrated config (default: <out>/calibrated.toml).
        #[arg(long)]
        write: Option<PathBuf>,
    },
    /// Print shape tables and validate builtin or descriptor-file architectures.
    Netspec {
        /// Builtin names or descriptor files.
        #[arg(required = true)]
        archs: Vec<String>,
    },
    /// Expand a character manifest with flips, negatives and digit seeds.
    Augment {
        manifest: PathBuf,
        #[arg(long)]
        no_flips: bool,
        #[arg(long)]
        no_negatives: bool,
        #[arg(long)]
        no_seed_letters: bool,
        /// Directory holding the source images; when given, augmented images
        /// are written next to the manifest output.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Generate a synthetic dataset tree.
    Synth {
        #[arg(long, default_value_t = 150)]
        tracks: usize,
        /// car-gray,car-red,moto-gray proportions.
        #[arg(long, default_value = "0.6,0.2,0.2")]
        mix: SynthMix,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 0.0)]
        protrusion: f64,
        /// Also write the train/test/validation split.
        #[arg(long)]
        split: bool,
    },
    /// Write the stratified train/test/validation split of a dataset.
    Split {
        #[arg(long, default_value = "0.4,0.4,0.2")]
        fractions: String,
    },
    /// Log-normalized position heat maps of a split.
    Heatmap {
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long, value_enum, default_value = "vehicles")]
        target: HeatTarget,
        #[arg(long, default_value_t = 32)]
        bins: usize,
    },
    /// Recompute the report from a saved frames.jsonl, or print the letter histogram.
    Report {
        /// Saved per-frame records (default: <out>/frames.jsonl).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Print the letter histogram of the dataset split instead.
        #[arg(long)]
        letters: Option<String>,
    },
}

fn category(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Config(_) => exit::CONFIG,
                PipelineError::Dataset(_) => exit::DATASET,
                PipelineError::Backend(_) => exit::BACKEND,
                PipelineError::Calibration(_) => exit::CALIBRATION,
                _ => exit::FAILURE,
            };
        }
        if cause.is::<ConfigError>() {
            return exit::CONFIG;
        }
        if cause.is::<DatasetError>() {
            return exit::DATASET;
        }
        if cause.is::<BackendError>() {
            return exit::BACKEND;
        }
        if cause.is::<CalibrationError>() {
            return exit::CALIBRATION;
        }
    }
    exit::FAILURE
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(category(&e))
        }
    }
}

fn base_config(g: &Global, profile: Option<Profile>) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match (&g.config, profile) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(Profile::Ssig)) => PipelineConfig::ssig(),
        (None, _) => PipelineConfig::ufpr(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(o) = &g.out {
        cfg.output = o.clone();
    }
    if let Some(d) = &g.dataset {
        cfg.dataset = d.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn execute(cli: &Cli) -> anyhow::Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Run {
            split,
            miss_rate,
            clock,
            profile,
            quiet,
        } => {
            let mut cfg = base_config(g, *profile)?;
            if let Some(s) = split {
                cfg.split = s.clone();
            }
            if let Some(m) = miss_rate {
                for n in [&mut cfg.backend.noise.vehicle, &mut cfg.backend.noise.plate, &mut cfg.backend.noise.characters] {
                    n.miss_rate = *m;
                }
            }
            match clock {
                Some(ClockArg::Wall) => cfg.clock = Clock::Wall,
                Some(ClockArg::Fixed) if matches!(cfg.clock, Clock::Wall) => cfg.clock = Clock::default(),
                _ => {}
            }
            let out = pipeline::run(&cfg)?;
            out.write(&cfg.output)?;
            if !quiet {
                print!("{}", out.report.to_table());
            }
            Ok(0)
        }
        Command::Calibrate { split, write: target } => {
            let cfg = base_config(g, None)?;
            cfg.check().map_err(PipelineError::from)?;
            let dataset = pipeline::load_dataset(&cfg)?;
            let tracks = pipeline::select_tracks(&cfg, &dataset, split)?;
            let (summary, calibrated) = pipeline::calibrate_tracks(&cfg, &tracks)?;
            let path = target.clone().unwrap_or_else(|| cfg.output.join("calibrated.toml"));
            write(&path, &calibrated.to_toml())?;
            println!("frames             {}", summary.frames);
            println!("vehicle threshold  {}", summary.vehicle_threshold);
            println!(
                "vehicle margin     {} (required {})",
                summary.vehicle_margin, summary.vehicle_margin_required
            );
            println!(
                "plate margin       {} (required {})",
                summary.plate_margin, summary.plate_margin_required
            );
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Netspec { archs } => {
            let mut failed = false;
            for name in archs {
                let arch = match netspec::builtin(name) {
                    Ok(a) => a,
                    Err(_) => {
                        let text = fs::read_to_string(name).with_context(|| format!("'{name}' is neither a builtin nor a readable file"))?;
                        netspec::parse_descriptor(&text).with_context(|| format!("parsing {name}"))?
                    }
                };
                match netspec::shape_table(&arch) {
                    Ok(t) => print!("{t}"),
                    Err(e) => println!("{}: {e}", arch.name),
                }
                let report = netspec::validate(&arch);
                if report.is_ok() {
                    println!("ok");
                } else {
                    failed = true;
                    for v in &report.violations {
                        println!("violation: {v}");
                    }
                }
                println!();
            }
            Ok(if failed { exit::FAILURE } else { 0 })
        }
        Command::Augment {
            manifest,
            no_flips,
            no_negatives,
            no_seed_letters,
            images,
        } => {
            let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let entries = parse_manifest(&text).with_context(|| format!("parsing {}", manifest.display()))?;
            let opts = AugmentOptions {
                flips: !no_flips,
                negatives: !no_negatives,
                seed_letters: !no_seed_letters,
            };
            let expanded = expand_training_set(&entries, opts);
            let out_dir = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            write(&out_dir.join("augmented.txt"), &write_manifest(&expanded))?;
            if let Some(dir) = images {
                let img_dir = out_dir.join("images");
                fs::create_dir_all(&img_dir)?;
                for e in &expanded {
                    let src = dir.join(&e.source);
                    let img = image::open(&src).with_context(|| format!("opening {}", src.display()))?;
                    let stem = Path::new(&e.source).file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
                    let name = format!("{stem}_{}_{}.png", e.transform.to_string().replace('+', "_"), e.label);
                    materialize(&img, e.transform).save(img_dir.join(name))?;
                }
            }
            println!("{} entries -> {}", expanded.len(), out_dir.join("augmented.txt").display());
            Ok(0)
        }
        Command::Synth {
            tracks,
            mix,
            frames,
            protrusion,
            split,
        } => {
            let cfg = base_config(g, None)?;
            let opts = SynthOptions {
                frame: cfg.frame,
                frames_per_track: *frames,
                mix: *mix,
                protrusion: *protrusion,
                ..SynthOptions::default()
            };
            let generated = generate_synthetic(cfg.seed, *tracks, &opts).map_err(PipelineError::from)?;
            let ds = Dataset { tracks: generated };
            ds.write(&cfg.dataset).map_err(PipelineError::from)?;
            if *split {
                let s = crate::dataset::split_dataset(&ds.tracks, SplitFractions::default(), cfg.seed).map_err(PipelineError::from)?;
                s.write(&cfg.dataset.join(SPLIT_DIR)).map_err(PipelineError::from)?;
            }
            println!("{} tracks -> {}", ds.tracks.len(), cfg.dataset.display());
            Ok(0)
        }
        Command::Split { fractions } => {
            let cfg = base_config(g, None)?;
            let f: Vec<f64> = fractions
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ConfigError::Invalid(format!("bad fractions '{fractions}'")))?;
            let [train, test, validation] = f[..] else {
                return Err(ConfigError::Invalid(format!("need three fractions, got '{fractions}'")).into());
            };
            let dataset = pipeline::load_dataset(&cfg)?;
            let s = crate::dataset::split_dataset(&dataset.tracks, SplitFractions { train, test, validation }, cfg.seed)
                .map_err(PipelineError::from)?;
            s.write(&cfg.dataset.join(SPLIT_DIR)).map_err(PipelineError::from)?;
            println!("train {} / test {} / validation {}", s.train.len(), s.test.len(), s.validation.len());
            Ok(0)
        }
        Command::Heatmap { split, target, bins } => {
            let cfg = base_config(g, None)?;
            let dataset = pipeline::load_dataset(&cfg)?;
            let tracks = pipeline::select_tracks(&cfg, &dataset, split)?;
            let boxes: Vec<_> = tracks
                .iter()
                .flat_map(|t| t.frames.iter())
                .map(|f| match target {
                    HeatTarget::Vehicles => f.vehicle.bbox,
                    HeatTarget::Plates => f.plate.bbox,
                })
                .collect();
            let grid = heatmap(&boxes, cfg.frame, *bins);
            let name = match target {
                HeatTarget::Vehicles => "vehicles",
                HeatTarget::Plates => "plates",
            };
            let txt = cfg.output.join(format!("heatmap_{name}.txt"));
            write(&txt, &heatmap_text(&grid))?;
            let png = cfg.output.join(format!("heatmap_{name}.png"));
            write_heatmap_png(&grid, 8, &png).with_context(|| format!("writing {}", png.display()))?;
            println!("{} boxes -> {} and {}", boxes.len(), txt.display(), png.display());
            Ok(0)
        }
        Command::Report { records, letters } => {
            let cfg = base_config(g, None)?;
            if let Some(split) = letters {
                let dataset = pipeline::load_dataset(&cfg)?;
                let tracks = pipeline::select_tracks(&cfg, &dataset, split)?;
                let plates: Vec<_> = tracks.iter().filter_map(|t| t.plate_text()).collect();
                let h = letter_histogram(&plates);
                for (i, n) in h.iter().enumerate() {
                    println!("{} {n}", (b'A' + i as u8) as char);
                }
                return Ok(0);
            }
            let path = records.clone().unwrap_or_else(|| cfg.output.join("frames.jsonl"));
            let recs = pipeline::read_records(&path)?;
            let (report, _) = pipeline::evaluate(&recs);
            print!("{}", report.to_table());
            Ok(0)
        }
    }
}
