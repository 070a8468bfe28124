use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mbsniff::harness::{
    eval_ber, eval_modulation, eval_sensing, eval_somp_optimum, evaluate_model, load_checkpoint,
    save_checkpoint, Dataset, Demodulator, ModelPipeline, NyquistReceiver, OracleLevel,
    FrameRecord, SompReceiver, SompSensor, SpectrumSensor,
};
use mbsniff::csrecover::SompConfig;
use mbsniff::scene::{frame_seed, SamplingGrid, SceneGenerator, WaveformMenu};
use mbsniff::sigformer::{ModelConfig, ModelParams};
use mbsniff::training::{
    gradcheck, synthetic_batch, train, AdamConfig, FocalPairing, FrameLabels, LossWeights,
    StepLog, TrainConfig, TrainFrame,
};

#[derive(Parser)]
#[command(name = "mbsniff", version, about = "Multiband sub-Nyquist sensing, classification and demodulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridName {
    Standard,
    Reduced,
    Toy,
}

impl GridName {
    fn grid(self) -> SamplingGrid {
        match self {
            GridName::Standard => SamplingGrid::standard(),
            GridName::Reduced => SamplingGrid::reduced(),
            GridName::Toy => SamplingGrid::toy(),
        }
    }

    fn menu(self) -> WaveformMenu {
        match self {
            GridName::Toy => WaveformMenu::toy(),
            _ => WaveformMenu::standard(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Somp,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum Receiver {
    Nyquist,
    Somp,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    None,
    Occupancy,
    Full,
}

impl From<Oracle> for OracleLevel {
    fn from(o: Oracle) -> Self {
        match o {
            Oracle::None => OracleLevel::None,
            Oracle::Occupancy => OracleLevel::Occupancy,
            Oracle::Full => OracleLevel::Full,
        }
    }
}

#[derive(clap::Args)]
struct DataArgs {
    /// SUMS dataset to read.
    #[arg(long)]
    data: PathBuf,
    /// Keep only the first N cosets of every frame.
    #[arg(long)]
    channels: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let ds = Dataset::load(&self.data)
            .with_context(|| format!("reading {}", self.data.display()))?;
        if ds.is_empty() {
            bail!("{} holds no frames", self.data.display());
        }
        match self.channels {
            None => Ok(ds),
            Some(n) => {
                if n == 0 || n > ds.grid.p() {
                    bail!("--channels must be in 1..={}", ds.grid.p());
                }
                Ok(ds.with_channels(&(0..n).collect::<Vec<_>>())?)
            }
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a dataset of random frames.
    Generate {
        #[arg(long, value_enum, default_value = "standard")]
        grid: GridName,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-band SNR range in dB.
        #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
        snr_lo: f64,
        #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
        snr_hi: f64,
        /// Rescale every frame to this multiband SNR in dB.
        #[arg(long, allow_hyphen_values = true)]
        multiband_snr: Option<f64>,
        #[arg(long)]
        noise_free: bool,
        /// Also store the Nyquist-rate frames.
        #[arg(long)]
        nyquist: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectrum sensing accuracy per SNR bin.
    Sense {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "somp")]
        method: Method,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fixed SOMP residual threshold; by default the best one for the data.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Modulation confusion matrix and accuracy per SNR bin.
    Classify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use the network's own sensing instead of true occupancy.
        #[arg(long)]
        sensed: bool,
    },
    /// Train a network and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Total encoders, split evenly between the two stages.
        #[arg(long, default_value_t = 8)]
        encoders: usize,
        #[arg(long, default_value_t = 256)]
        d_model: usize,
        #[arg(long, default_value_t = 8)]
        heads: usize,
        #[arg(long, default_value_t = 1024)]
        d_ff: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0.02)]
        init_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train the spectrum sensor only.
        #[arg(long)]
        sensing_only: bool,
        /// Use the focal-loss pairing exactly as printed.
        #[arg(long)]
        printed_focal: bool,
        /// Append step losses to this TSV file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Sensing, classification and BER summary for a checkpoint.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        oracle: Oracle,
    },
    /// BER per modulation, waveform and SNR bin.
    BerCurve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "nyquist")]
        receiver: Receiver,
        #[arg(long, value_enum, default_value = "full")]
        oracle: Oracle,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on the tiny config.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn model(path: &PathBuf) -> Result<ModelPipeline> {
    let params = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ModelPipeline { params })
}

fn require_model(path: &Option<PathBuf>) -> Result<ModelPipeline> {
    match path {
        Some(p) => model(p),
        None => bail!("--checkpoint is required for the model pipeline"),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Generate {
            grid,
            count,
            seed,
            snr_lo,
            snr_hi,
            multiband_snr,
            noise_free,
            nyquist,
            out,
        } => {
            if count == 0 {
                bail!("--count must be at least 1");
            }
            if snr_hi < snr_lo {
                bail!("--snr-hi is below --snr-lo");
            }
            let mut gen = SceneGenerator::new(grid.grid()).with_snr_range(snr_lo, snr_hi);
            gen.menu = grid.menu();
            if noise_free {
                gen = gen.noise_free();
            }
            let records = (0..count as u64)
                .map(|i| {
                    let mut scene = gen.generate(frame_seed(seed, i))?;
                    if let Some(db) = multiband_snr {
                        scene.rescale_to_multiband_snr(db);
                    }
                    FrameRecord::from_scene(scene, nyquist)
                })
                .collect::<mbsniff::Result<Vec<_>>>()?;
            let ds = Dataset {
                grid: gen.grid,
                records,
            };
            ds.save(&out).with_context(|| format!("writing {}", out.display()))?;
        }
        Cmd::Sense {
            data,
            method,
            checkpoint,
            threshold,
        } => {
            let ds = data.load()?;
            let report = match (method, threshold) {
                (Method::Somp, None) => {
                    let (sensor, report) = eval_somp_optimum(&ds.records, ds.grid.n_band)?;
                    eprintln!("somp threshold {}", sensor.config.residual_threshold);
                    report
                }
                (Method::Somp, Some(t)) => {
                    let sensor = SompSensor {
                        config: SompConfig::new(ds.grid.n_band, t, &ds.grid)?,
                    };
                    eval_sensing(&sensor, &ds.records)?
                }
                (Method::Model, _) => eval_sensing(&require_model(&checkpoint)?, &ds.records)?,
            };
            print!("{}", report.to_tsv());
            eprintln!("accuracy {:.4}", report.accuracy());
        }
        Cmd::Classify {
            data,
            checkpoint,
            sensed,
        } => {
            let ds = data.load()?;
            let m = model(&checkpoint)?;
            let sensor = sensed.then_some(&m as &dyn SpectrumSensor);
            let report = eval_modulation(sensor, &m, &ds.records)?;
            print!("{}", report.confusion.to_tsv());
            println!();
            print!("{}", report.accuracy_tsv());
            eprintln!(
                "accuracy {:.4}, frames skipped after wrong sensing {}",
                report.accuracy(),
                report.skipped_frames
            );
        }
        Cmd::Train {
            data,
            out,
            init,
            encoders,
            d_model,
            heads,
            d_ff,
            steps,
            batch_size,
            lr,
            init_std,
            seed,
            sensing_only,
            printed_focal,
            log,
        } => {
            let ds = data.load()?;
            let mut params = match &init {
                Some(p) => load_checkpoint(p)?,
                None => {
                    if encoders < 2 {
                        bail!("--encoders must be at least 2");
                    }
                    let ss = encoders / 2;
                    let cfg = ModelConfig::for_grid(&ds.grid, d_model, heads, d_ff, ss, encoders - ss)?;
                    ModelParams::init(&cfg, seed, init_std)?
                }
            };
            let mut weights = LossWeights::default();
            if sensing_only {
                weights = LossWeights {
                    alpha: 1.0,
                    beta: 0.0,
                    gamma: 0.0,
                    ..weights
                };
            }
            if printed_focal {
                weights.pairing = FocalPairing::Printed;
            }
            let frames: Vec<TrainFrame> = ds
                .records
                .iter()
                .map(|r| TrainFrame::new(&r.coset, FrameLabels::from_scene(&r.scene)))
                .collect();
            let cfg = TrainConfig {
                batch_size,
                steps,
                seed,
                adam: AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
                weights,
            };
            eprintln!(
                "desk-scale schedule: {} frames, {steps} steps of {batch_size}, constant lr {lr}",
                frames.len()
            );
            let mut sink = match &log {
                Some(p) => {
                    let fresh = !p.exists();
                    let mut f = OpenOptions::new().create(true).append(true).open(p)?;
                    if fresh {
                        writeln!(f, "{}", StepLog::TSV_HEADER)?;
                    }
                    Some(f)
                }
                None => None,
            };
            let mut io_error = None;
            let result = train(&mut params, &frames, &cfg, |s| {
                if let Some(f) = sink.as_mut() {
                    if let Err(e) = writeln!(f, "{}", s.tsv()) {
                        io_error.get_or_insert(e);
                    }
                }
                if s.step % 100 == 0 || s.step + 1 == steps {
                    eprintln!("{}", s.tsv());
                }
            });
            if let Some(e) = io_error {
                return Err(e.into());
            }
            save_checkpoint(&params, &out).with_context(|| format!("writing {}", out.display()))?;
            result?;
        }
        Cmd::Eval {
            data,
            checkpoint,
            oracle,
        } => {
            let ds = data.load()?;
            let report = evaluate_model(&model(&checkpoint)?, &ds.records, oracle.into())?;
            print!("{}", report.to_tsv());
        }
        Cmd::BerCurve {
            data,
            receiver,
            oracle,
            checkpoint,
        } => {
            let ds = data.load()?;
            let level: OracleLevel = oracle.into();
            let report = match receiver {
                Receiver::Nyquist | Receiver::Somp => {
                    if level != OracleLevel::Full {
                        bail!("classical receivers run with --oracle full only");
                    }
                    let demod: &dyn Demodulator = match receiver {
                        Receiver::Nyquist => &NyquistReceiver,
                        _ => &SompReceiver,
                    };
                    eval_ber(None, None, demod, &ds.records, level)?
                }
                Receiver::Model => {
                    let m = require_model(&checkpoint)?;
                    eval_ber(Some(&m), Some(&m), &m, &ds.records, level)?
                }
            };
            print!("{}", report.to_tsv());
            let t = report.totals();
            eprintln!("{} errors in {} bits", t.errors, t.bits);
        }
        Cmd::Gradcheck { seed, step } => {
            let cfg = ModelConfig::tiny();
            let params = ModelParams::init(&cfg, seed, 0.3)?;
            let batch = synthetic_batch(&cfg, 4, seed);
            let report = gradcheck(&params, &batch, &LossWeights::default(), step)?;
            println!("tensor\tgrad_norm\trel_err");
            for b in &report.blocks {
                println!("{}\t{:.3e}\t{:.3e}", b.name, b.analytic_norm, b.rel_err);
            }
            eprintln!("max relative error {:.3e}", report.max_rel_err);
            return Ok(report.max_rel_err < GRADCHECK_TOLERANCE);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
