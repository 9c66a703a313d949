use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use shearwave::eval::{
    calibrate_q, damping_study, evaluate_suite, Estimator, FilePairs, FileSource, PredictionTable,
    VolumeSource,
};
use shearwave::io;
use shearwave::preprocess::{
    crop_below_surface, median_filter_3d, resize_frames, DEFAULT_CROP_DEPTH, DEFAULT_MEDIAN_KERNEL,
};
use shearwave::{
    generate_benchmark_suite, generate_damping_pair, generate_wavefield, ConventionalEstimator,
    DominantFrequencyOptions, KspaceOptions, MaterialModel, SuiteConfig, Window,
};

#[derive(Parser)]
#[command(name = "shearwave", version, about = "Shear-wave elastography toolkit")]
struct Cli {
    /// Worker threads for batch work (0 = all cores).
    #[arg(long, global = true, env = "SHEARWAVE_WORKERS", default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark suite.
    Generate {
        /// Suite configuration (TOML); built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write only manifest.json, no volumes.
        #[arg(long)]
        manifest_only: bool,
        /// Write undamped/ and damped/ volume pairs.
        #[arg(long)]
        pairs: bool,
    },
    /// Crop, median-filter and optionally resize volumes.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CROP_DEPTH)]
        crop_depth: usize,
        /// Median kernel edge (1 disables).
        #[arg(long, default_value_t = DEFAULT_MEDIAN_KERNEL)]
        kernel: usize,
        /// Output frame size as WIDTHxDEPTH.
        #[arg(long, value_parser = parse_size)]
        resize: Option<(usize, usize)>,
    },
    /// Estimate elasticity for every volume in a directory.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Fit the empirical constant q against ground truth.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Score an estimator against ground truth.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// `conventional` or a CSV of predictions in report format.
        #[arg(long, default_value = "conventional")]
        estimator: String,
        #[arg(long)]
        output: PathBuf,
        /// Also write summary statistics as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        options: EstimatorArgs,
    },
    /// Compare matched undamped and damped acquisitions.
    Damping {
        #[arg(long)]
        undamped: PathBuf,
        #[arg(long)]
        damped: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
}

#[derive(Args, Clone)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 0.84)]
    q: f64,
    #[arg(long, default_value_t = 4)]
    padding: usize,
    #[arg(long, default_value_t = 0.10)]
    threshold: f64,
    /// Accepted velocity range in m/s as LOW,HIGH.
    #[arg(long, value_parser = parse_band, default_value = "1,10")]
    band: (f64, f64),
    #[arg(long, default_value = "hann")]
    window: Window,
    /// Use the strongest padded bin without sub-bin refinement.
    #[arg(long)]
    no_refine: bool,
    #[arg(long, default_value_t = 40.0)]
    min_contrast: f64,
    /// Rows kept below the surface (0 = use volumes as they are).
    #[arg(long, default_value_t = DEFAULT_CROP_DEPTH)]
    crop_depth: usize,
    /// Median kernel edge (1 disables).
    #[arg(long, default_value_t = DEFAULT_MEDIAN_KERNEL)]
    kernel: usize,
}

impl EstimatorArgs {
    fn build(&self) -> Result<ConventionalEstimator> {
        let kspace = KspaceOptions {
            padding: self.padding,
            threshold: self.threshold,
            band: self.band,
            window: self.window,
            refine_wavenumber: !self.no_refine,
            min_peak_contrast: self.min_contrast,
        };
        kspace.validate()?;
        Ok(ConventionalEstimator {
            crop_depth: (self.crop_depth > 0).then_some(self.crop_depth),
            median_kernel: Some(self.kernel),
            kspace,
            model: MaterialModel::default().with_q(self.q)?,
        })
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxDEPTH")?;
    Ok((
        w.trim().parse().map_err(|e| format!("width: {e}"))?,
        h.trim().parse().map_err(|e| format!("depth: {e}"))?,
    ))
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LOW,HIGH")?;
    Ok((
        lo.trim().parse().map_err(|e| format!("low: {e}"))?,
        hi.trim().parse().map_err(|e| format!("high: {e}"))?,
    ))
}

fn volumes_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let paths = io::list_volumes(dir)?;
    if paths.is_empty() {
        bail!("no volumes found in {}", dir.display());
    }
    Ok(paths)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(config: Option<&Path>, out: &Path, manifest_only: bool, pairs: bool) -> Result<()> {
    let config = match config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SuiteConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SuiteConfig::default(),
    };
    let scenes = generate_benchmark_suite(&config)?;
    create_dir(out)?;
    if !manifest_only {
        let (undamped, damped) = (out.join("undamped"), out.join("damped"));
        if pairs {
            create_dir(&undamped)?;
            create_dir(&damped)?;
        }
        scenes.par_iter().try_for_each(|scene| -> Result<()> {
            let stem = scene.file_stem();
            if pairs {
                let (u, d) = generate_damping_pair(&scene.spec)?;
                io::write_volume(&u, &io::header_path(&undamped, &stem))?;
                io::write_volume(&d, &io::header_path(&damped, &stem))?;
            } else {
                let volume = generate_wavefield(&scene.spec)?;
                io::write_volume(&volume, &io::header_path(out, &stem))?;
            }
            Ok(())
        })?;
    }
    let entries: Vec<io::ManifestEntry> = scenes.into_iter().map(io::ManifestEntry::new).collect();
    io::write_manifest(&entries, &out.join("manifest.json"))?;
    eprintln!("{} scenes -> {}", entries.len(), out.display());
    Ok(())
}

fn preprocess(
    input: &Path,
    output: &Path,
    crop_depth: usize,
    kernel: usize,
    resize: Option<(usize, usize)>,
) -> Result<()> {
    let paths = volumes_in(input)?;
    create_dir(output)?;
    paths.par_iter().try_for_each(|path| -> Result<()> {
        let volume = io::read_volume(path)?;
        let mut volume =
            crop_below_surface(&volume, crop_depth).with_context(|| path.display().to_string())?;
        if kernel > 1 {
            volume = median_filter_3d(&volume, kernel)?;
        }
        if let Some((w, h)) = resize {
            volume = resize_frames(&volume, w, h)?;
        }
        io::write_volume(
            &volume,
            &output.join(path.file_name().expect("listed file")),
        )?;
        Ok(())
    })?;
    eprintln!("{} volumes -> {}", paths.len(), output.display());
    Ok(())
}

fn estimate(input: &Path, output: &Path, args: &EstimatorArgs) -> Result<()> {
    let estimator = args.build()?;
    let source = FileSource(volumes_in(input)?);
    let mut rows = (0..source.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let volume = source.load(i)?;
            let est = Estimator::estimate(&estimator, &volume)?;
            Ok(shearwave::eval::ReportRow {
                source_id: volume.meta.source_id.clone(),
                frequency_hz: volume
                    .meta
                    .excitation_frequency_hz
                    .unwrap_or(est.dominant_frequency_hz),
                e_true_pa: volume.meta.ground_truth_e_pa.unwrap_or(f64::NAN),
                e_est_pa: est.e_pa,
                valid: est.e_pa.is_some(),
                v_mps: est.v_mps,
                dominant_frequency_hz: est.dominant_frequency_hz,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        a.source_id
            .cmp(&b.source_id)
            .then(a.frequency_hz.total_cmp(&b.frequency_hz))
    });
    io::write_report_rows(&rows, output)?;
    let valid = rows.iter().filter(|r| r.valid).count();
    eprintln!(
        "{valid}/{} valid estimates -> {}",
        rows.len(),
        output.display()
    );
    Ok(())
}

fn calibrate(input: &Path, args: &EstimatorArgs) -> Result<f64> {
    let estimator = args.build()?;
    let report = evaluate_suite(&FileSource(volumes_in(input)?), &estimator)?;
    let (v, e): (Vec<f64>, Vec<f64>) = report
        .per_dataset
        .iter()
        .filter(|r| r.valid)
        .map(|r| (r.v_mps, r.e_true_pa))
        .unzip();
    if v.is_empty() {
        bail!("no valid estimates to calibrate against");
    }
    Ok(calibrate_q(&v, &e, &estimator.model)?)
}

fn evaluate(
    input: &Path,
    which: &str,
    output: &Path,
    summary: Option<&Path>,
    args: &EstimatorArgs,
) -> Result<()> {
    let source = FileSource(volumes_in(input)?);
    let report = if which == "conventional" {
        evaluate_suite(&source, &args.build()?)?
    } else {
        let rows = io::read_report_rows(Path::new(which))
            .with_context(|| format!("reading predictions {which}"))?;
        evaluate_suite(&source, &PredictionTable::from_rows(&rows))?
    };
    io::write_report(&report, output)?;
    let text = report.summary_json();
    if let Some(path) = summary {
        fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn damping(undamped: &Path, damped: &Path, output: &Path, args: &EstimatorArgs) -> Result<()> {
    let estimator = args.build()?;
    let mut pairs = Vec::new();
    for u in volumes_in(undamped)? {
        let d = damped.join(u.file_name().expect("listed file"));
        if !d.exists() {
            bail!("{} has no damped counterpart {}", u.display(), d.display());
        }
        pairs.push((u, d));
    }
    let options = DominantFrequencyOptions {
        padding: args.padding,
        window: args.window,
        ..Default::default()
    };
    let report = damping_study(&FilePairs(pairs), &estimator, &options)?;
    io::write_damping_report(&report, output)?;
    for s in &report.per_frequency {
        println!(
            "{} Hz: pairs {}, mean |offset| {} Pa, median |f - f0| undamped {} Hz, damped {} Hz",
            s.frequency_hz,
            s.pairs,
            s.mean_abs_offset_pa
                .map_or("n/a".to_string(), |v| v.to_string()),
            s.median_deviation_undamped_hz,
            s.median_deviation_damped_hz
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .context("starting worker pool")?;
    match cli.command {
        Command::Generate {
            config,
            out,
            manifest_only,
            pairs,
        } => generate(config.as_deref(), &out, manifest_only, pairs),
        Command::Preprocess {
            input,
            output,
            crop_depth,
            kernel,
            resize,
        } => preprocess(&input, &output, crop_depth, kernel, resize),
        Command::Estimate {
            input,
            output,
            estimator,
        } => estimate(&input, &output, &estimator),
        Command::Calibrate { input, estimator } => {
            let q = calibrate(&input, &estimator)?;
            println!("{q}");
            Ok(())
        }
        Command::Evaluate {
            input,
            estimator,
            output,
            summary,
            options,
        } => evaluate(&input, &estimator, &output, summary.as_deref(), &options),
        Command::Damping {
            undamped,
            damped,
            output,
            estimator,
        } => damping(&undamped, &damped, &output, &estimator),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
