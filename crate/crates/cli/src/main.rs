use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vlcbc::grid::Grid;
use vlcbc::harness::{self, MonteCarloResult, SimConfig};
use vlcbc::receiver::{self, BerMapSpec, Receiver};
use vlcbc::{rf, vlc, waveform, Point2, Scenario};

#[derive(Parser)]
#[command(name = "vlcbc", version, about = "Joint VLC / RF-backscatter tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Simulation config (TOML). Defaults to the reference deployment.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Received-power, harvested-power or expected-RSS map over the room.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = HeatmapKind::Power)]
        kind: HeatmapKind,
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
    },
    /// Waveform-level BER map per LED.
    BerMap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.2)]
        resolution: f64,
        /// Frames observed per grid point.
        #[arg(long, default_value_t = 63)]
        frames: usize,
    },
    /// Monte-Carlo tracking at the configured heights.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        reps: Option<usize>,
        /// Write one trace file per trial.
        #[arg(long)]
        traces: bool,
    },
    /// Tracking error versus device height.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        reps: Option<usize>,
        /// Comma-separated heights in m; defaults to 1.00..1.70 plus 1.57.
        #[arg(long, value_delimiter = ',')]
        heights: Option<Vec<f64>>,
    },
    /// Pooled tracking-error CDF.
    Cdf {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        reps: Option<usize>,
    },
    /// Writes reader I/Q for a device parked at one position.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        /// Seconds of signal.
        #[arg(long, default_value_t = 0.2)]
        duration: f64,
        #[arg(long)]
        noiseless: bool,
    },
    /// Decodes an I/Q file into (epoch, id, rss_db) rows on stdout.
    Decode {
        /// Simulation config (TOML); its scenario and receiver sections are used.
        #[arg(short, long)]
        config: Option<PathBuf>,
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeatmapKind {
    /// Aggregate received optical power, W.
    Power,
    /// Harvested electrical power, W.
    Harvest,
    /// Expected backscatter RSS at the reader, dBm.
    Rss,
}

fn load_config(path: Option<&Path>) -> Result<SimConfig> {
    match path {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(SimConfig::default()),
    }
}

struct Run {
    config: SimConfig,
    scenario: Scenario,
    out: PathBuf,
}

impl Run {
    /// Loads the config, applies command-line overrides and records the
    /// resolved result in the manifest.
    fn new(common: &Common, adjust: impl FnOnce(&mut SimConfig)) -> Result<Self> {
        let mut config = load_config(common.config.as_deref())?;
        if let Some(s) = common.seed {
            config.experiment.seed = s;
        }
        adjust(&mut config);
        let scenario = Scenario::from_config(&config.scenario)?;
        fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
        let run = Self { config, scenario, out: common.out.clone() };
        let args: Vec<String> = std::env::args().collect();
        harness::write_manifest(&args.join(" "), run.config.experiment.seed, &run.config, run.create("manifest.toml")?)?;
        Ok(run)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn write_grid(&self, name: &str, grid: &Grid) -> Result<()> {
        let mut w = self.create(name)?;
        grid.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn monte_carlo(&self) -> Result<MonteCarloResult> {
        let c = &self.config;
        Ok(harness::run_monte_carlo(&self.scenario, &c.tracker, &c.simulation, &c.receiver, &c.experiment)?)
    }

    fn write_metrics(&self, res: &MonteCarloResult) -> Result<()> {
        let mut w = self.create("metrics.csv")?;
        harness::write_metrics_table(res, &mut w)?;
        w.flush()?;
        if res.failures() > 0 {
            log::warn!("{} trials failed; see metrics.csv", res.failures());
        }
        Ok(())
    }
}

fn summarize(res: &MonteCarloResult, heights: &[f64], paths: &[harness::PathSpec]) {
    for &h in heights {
        for (p, spec) in paths.iter().enumerate() {
            if let Some(a) = res.mean_metrics(|t| t.height == h && t.path == p) {
                println!(
                    "h={h:.2} {:<8} trials={:<4} rmse={:.3} mae_x={:.3} mae_y={:.3}",
                    spec.name, a.trials, a.rmse, a.mae_x, a.mae_y
                );
            }
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Heatmap { common, kind, resolution } => {
            let run = Run::new(&common, |_| {})?;
            let sc = &run.scenario;
            let grid = match kind {
                HeatmapKind::Power => vlc::vlc_power_heatmap(sc, resolution)?,
                HeatmapKind::Harvest | HeatmapKind::Rss => {
                    let units = if matches!(kind, HeatmapKind::Rss) { "dBm" } else { "W" };
                    let mut g = Grid::covering(&sc.room, resolution, units)?;
                    g.values = g
                        .points()
                        .into_iter()
                        .map(|p| match kind {
                            HeatmapKind::Harvest => vlc::harvested_power(sc, p),
                            _ => rf::expected_rss_db(sc, p).unwrap_or(f64::NAN),
                        })
                        .collect();
                    g
                }
            };
            let name = match kind {
                HeatmapKind::Power => "heatmap_power.grid",
                HeatmapKind::Harvest => "heatmap_harvest.grid",
                HeatmapKind::Rss => "heatmap_rss.grid",
            };
            run.write_grid(name, &grid)?;
            println!("wrote {} ({}x{}, max {:e} {})", run.out.join(name).display(), grid.nx, grid.ny, grid.max(), grid.units);
        }
        Command::BerMap { common, resolution, frames } => {
            let run = Run::new(&common, |_| {})?;
            let spec = BerMapSpec { resolution, frames, comparator: run.config.simulation.comparator, ..Default::default() };
            let map = receiver::ber_map(&run.scenario, &run.config.receiver, &spec, run.config.experiment.seed)?;
            for (id, g) in &map.grids {
                run.write_grid(&format!("ber_led{id}.grid"), g)?;
            }
            println!("wrote {} BER grids, {} bits per point", map.grids.len(), map.bits_per_point);
        }
        Command::Track { common, reps, traces } => {
            let run = Run::new(&common, |c| {
                if let Some(r) = reps {
                    c.experiment.repetitions = r;
                }
                c.experiment.keep_traces |= traces;
            })?;
            let res = run.monte_carlo()?;
            run.write_metrics(&res)?;
            if run.config.experiment.keep_traces {
                let dir = run.out.join("traces");
                fs::create_dir_all(&dir)?;
                for t in &res.trials {
                    if let Ok(s) = &t.outcome {
                        let name = format!("{}_h{:.2}_rep{:04}.csv", t.path_name, t.height, t.rep);
                        let mut w = BufWriter::new(File::create(dir.join(name))?);
                        harness::write_trace(s.trace.as_deref().unwrap_or_default(), &mut w)?;
                        w.flush()?;
                    }
                }
            }
            let mut w = run.create("cdf.csv")?;
            harness::write_cdf(&res.pooled_errors(|_| true), &mut w)?;
            w.flush()?;
            summarize(&res, &run.config.experiment.heights, &run.config.experiment.paths);
        }
        Command::Sweep { common, reps, heights } => {
            let run = Run::new(&common, |c| {
                c.experiment.heights = heights.unwrap_or_else(harness::sweep_heights);
                if let Some(r) = reps {
                    c.experiment.repetitions = r;
                }
            })?;
            let res = run.monte_carlo()?;
            run.write_metrics(&res)?;
            let rows = harness::height_sweep(&res, &run.config.experiment.heights);
            let mut w = run.create("sweep.csv")?;
            harness::write_sweep(&rows, &mut w)?;
            w.flush()?;
            for r in rows {
                let a = r.aggregate;
                println!("h={:.2} rmse={:.3} mae_x={:.3} mae_y={:.3}", r.height, a.rmse, a.mae_x, a.mae_y);
            }
        }
        Command::Cdf { common, reps } => {
            let run = Run::new(&common, |c| {
                if let Some(r) = reps {
                    c.experiment.repetitions = r;
                }
            })?;
            let res = run.monte_carlo()?;
            run.write_metrics(&res)?;
            let errors = res.pooled_errors(|_| true);
            let mut w = run.create("cdf.csv")?;
            harness::write_cdf(&errors, &mut w)?;
            w.flush()?;
            let (lo, hi) = errors.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
            println!(
                "{} errors: median {:.3} m, p90 {:.3} m, range [{lo:.3}, {hi:.3}] m",
                errors.len(),
                harness::percentile(&errors, 0.5),
                harness::percentile(&errors, 0.9)
            );
        }
        Command::Synth { common, x, y, duration, noiseless } => {
            let run = Run::new(&common, |_| {})?;
            let sc = &run.scenario;
            let p = Point2::new(x, y);
            if !sc.room.contains(p) {
                bail!("({x}, {y}) is outside the room");
            }
            let mut rng = ChaCha8Rng::seed_from_u64(run.config.experiment.seed);
            let offsets = waveform::random_offsets(sc, &mut rng);
            let len = (duration * sc.modulation.sample_rate).round() as usize;
            let sim = &run.config.simulation;
            let stream = waveform::reader_stream(sc, p, len, &offsets, 0.0, &sim.comparator, sim.pathloss, !noiseless, &mut rng)?;
            let path = run.out.join("reader.iq");
            waveform::write_iq(&path, &stream)?;
            println!("wrote {} ({} samples at {} Hz)", path.display(), stream.len(), stream.rate);
        }
        Command::Decode { config, input } => {
            let config = load_config(config.as_deref())?;
            let sc = Scenario::from_config(&config.scenario)?;
            let stream = waveform::read_iq(&input).with_context(|| format!("reading {}", input.display()))?;
            let rx = Receiver::new(&sc, &config.receiver)?;
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            writeln!(w, "epoch,id,rss_db")?;
            for d in rx.detect(&stream)? {
                writeln!(w, "{:.6},{},{}", d.epoch, d.led_id, d.rss_db.map_or_else(String::new, |r| format!("{r:.3}")))?;
            }
        }
    }
    Ok(())
}
