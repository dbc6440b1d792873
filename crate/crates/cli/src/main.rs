use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use msc_core::bench::{
    log_spaced, read_csv, run_experiment_gamma_sweep, run_experiment_scaling, write_csv, Backend, GammaSweepConfig,
    ParallelRunner, ScalingConfig, ThreadRunner, DEFAULT_REPS,
};
use msc_core::cluster::{build_eigen_matrix, normalize, similarity};
use msc_core::comm::{run_local, socket};
use msc_core::eval::{mode_recovery, mode_similarity, wishart_diagnostic, QualityReport};
use msc_core::parallel::{
    parallel_msc, read_timings_csv, write_timings_csv, ParallelMode, ParallelResult, RankOutcome, SliceSource,
};
use msc_core::synth::DEFAULT_CLUSTER_FRAC;
use msc_core::tensor::{load_tensor, save_tensor, TensorFile};
use msc_core::{msc, GroundTruth, Mode, MscConfig, MscReport, SpectralSettings, Synthetic};

#[derive(Parser)]
#[command(name = "msc", version, about = "Multi-slice clustering of 3-order tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tensor with a planted cluster.
    #[command(alias = "gen")]
    Generate(GenArgs),
    /// Cluster a tensor on this process.
    Run(RunArgs),
    /// Cluster a tensor on several processes.
    Par(ParArgs),
    /// Score a result against a ground truth.
    Eval(EvalArgs),
    /// Experiment drivers.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Standardized top eigenvalues of pure-noise slices.
    Wishart(WishartArgs),
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, num_args = 3, value_names = ["M1", "M2", "M3"])]
    dims: Vec<usize>,
    /// Planted cluster size; overrides --cluster-frac.
    #[arg(long)]
    l: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_FRAC)]
    cluster_frac: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthArgs {
    fn dims(&self) -> Result<[usize; 3]> {
        match self.dims[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => bail!("--dims takes three sizes"),
        }
    }

    fn build(&self) -> Result<Synthetic> {
        let dims = self.dims()?;
        Ok(match self.l {
            Some(l) => Synthetic::new(dims, l, self.gamma, self.seed)?,
            None => Synthetic::with_fraction(dims, self.cluster_frac, self.gamma, self.seed)?,
        })
    }

    fn to_args(&self) -> Vec<String> {
        let mut a = vec!["--dims".to_string()];
        a.extend(self.dims.iter().map(usize::to_string));
        if let Some(l) = self.l {
            a.extend(["--l".into(), l.to_string()]);
        }
        a.extend([
            "--cluster-frac".into(),
            self.cluster_frac.to_string(),
            "--gamma".into(),
            self.gamma.to_string(),
            "--seed".into(),
            self.seed.to_string(),
        ]);
        a
    }
}

#[derive(Args, Clone)]
struct MscArgs {
    /// Refinement tolerance; per-mode default when omitted.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = msc_core::spectral::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = msc_core::spectral::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Seed of the power-iteration start vectors.
    #[arg(long, default_value_t = msc_core::spectral::DEFAULT_SEED)]
    power_seed: u64,
}

impl MscArgs {
    fn config(&self) -> MscConfig {
        MscConfig {
            eps: self.eps,
            spectral: SpectralSettings {
                tol: self.tol,
                max_iter: self.max_iter,
                seed: self.power_seed,
            },
        }
    }

    fn to_args(&self) -> Vec<String> {
        let mut a = Vec::new();
        if let Some(e) = self.eps {
            a.extend(["--eps".into(), e.to_string()]);
        }
        a.extend([
            "--tol".into(),
            self.tol.to_string(),
            "--max-iter".into(),
            self.max_iter.to_string(),
            "--power-seed".into(),
            self.power_seed.to_string(),
        ]);
        a
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// MSC3 tensor file.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    msc: MscArgs,
    /// Result JSON; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Launcher {
    Processes,
    Threads,
}

#[derive(Args)]
struct ParArgs {
    /// Number of ranks, a multiple of 3.
    #[arg(long, default_value_t = 3)]
    np: usize,
    #[arg(long, value_enum, default_value_t = Launcher::Processes)]
    launcher: Launcher,
    /// MSC3 tensor file; each rank reads only its own slices.
    #[arg(long, conflicts_with = "dims")]
    input: Option<PathBuf>,
    /// Without --input, every rank regenerates its slices from these.
    #[command(flatten)]
    synth: Option<SynthArgs>,
    #[command(flatten)]
    msc: MscArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-rank phase timings; defaults to the result path with a
    /// `.timings.csv` suffix.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    result: PathBuf,
    /// The clustered tensor, needed for the similarity index.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    msc: MscArgs,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Recovery and similarity against signal strength.
    Gamma(GammaArgs),
    /// Clustering time against process count.
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long, num_args = 3, default_values_t = [100, 100, 100])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    l: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma_min: f64,
    #[arg(long, default_value_t = 1000.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// In-process ranks; 0 runs the sequential pipeline.
    #[arg(long, default_value_t = 0)]
    np: usize,
    #[command(flatten)]
    msc: MscArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    /// Cube side lengths.
    #[arg(long, num_args = 1.., default_values_t = [200])]
    sizes: Vec<usize>,
    #[arg(long, num_args = 1.., default_values_t = [3, 6, 12])]
    procs: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: usize,
    /// Defaults to the cube side.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_FRAC)]
    cluster_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Launcher::Processes)]
    launcher: Launcher,
    #[command(flatten)]
    msc: MscArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WishartArgs {
    #[arg(long, default_value_t = 100)]
    m2: usize,
    #[arg(long, default_value_t = 200)]
    m3: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Par(a) => par(a),
        Command::Eval(a) => eval(a),
        Command::Bench(BenchCommand::Gamma(a)) => bench_gamma(a),
        Command::Bench(BenchCommand::Scaling(a)) => bench_scaling(a),
        Command::Wishart(a) => {
            let s = wishart_diagnostic(a.m2, a.m3, a.samples, a.seed)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("create {}", p.display()))?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
            w.flush()?;
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parse {}", path.display()))
}

fn gen(a: GenArgs) -> Result<()> {
    let data = a.synth.build()?;
    save_tensor(&data.tensor()?, &a.out)?;
    if let Some(p) = &a.ground_truth {
        write_json(&data.ground_truth(), Some(p))?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let t = load_tensor(&a.input)?;
    let r = msc(&t, &a.msc.config())?;
    write_json(&r.to_report(), a.out.as_deref())
}

fn check_world_size(np: usize) -> Result<()> {
    if np == 0 || !np.is_multiple_of(3) {
        bail!("process count must be a positive multiple of 3, got {np}");
    }
    Ok(())
}

fn timings_path(a: &ParArgs) -> PathBuf {
    a.timings.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".timings.csv");
        s.into()
    })
}

fn par(a: ParArgs) -> Result<()> {
    if a.input.is_none() && a.synth.is_none() {
        bail!("give either --input or --dims");
    }
    if let Some(world) = socket::world_from_env()? {
        return par_rank(&a, world);
    }
    check_world_size(a.np)?;
    match a.launcher {
        Launcher::Threads => {
            let outcomes = run_local(a.np, |world| par_job(&a, world));
            let mut failed = None;
            for (rank, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(Some(result)) => write_root_output(&a, &result)?,
                    Ok(None) => {}
                    Err(e) => {
                        failed.get_or_insert(anyhow::Error::from(e).context(format!("rank {rank}")));
                    }
                }
            }
            failed.map_or(Ok(()), Err)
        }
        Launcher::Processes => {
            let exe = std::env::current_exe()?;
            let args: Vec<String> = std::env::args().skip(1).collect();
            let report = socket::launch(a.np, &exe, &args)?;
            if !report.success() {
                bail!("parallel run failed: {:?}", report.statuses);
            }
            Ok(())
        }
    }
}

fn par_job(a: &ParArgs, mut world: Box<dyn msc_core::comm::Communicator>) -> msc_core::Result<Option<ParallelResult>> {
    let config = a.msc.config();
    let outcome: RankOutcome = match (&a.input, &a.synth) {
        (Some(path), _) => parallel_msc(world.as_mut(), &mut TensorFile::open(path)?, &config)?,
        (None, Some(s)) => {
            let mut data = s.build().map_err(|e| msc_core::MscError::Startup(format!("{e:#}")))?;
            parallel_msc(world.as_mut(), &mut data as &mut dyn SliceSource, &config)?
        }
        (None, None) => unreachable!("checked by the caller"),
    };
    Ok(outcome.result)
}

fn par_rank(a: &ParArgs, world: Box<dyn msc_core::comm::Communicator>) -> Result<()> {
    let rank = world.rank();
    match par_job(a, world).with_context(|| format!("rank {rank}"))? {
        Some(result) => write_root_output(a, &result),
        None => Ok(()),
    }
}

fn write_root_output(a: &ParArgs, result: &ParallelResult) -> Result<()> {
    let tpath = timings_path(a);
    let w = BufWriter::new(File::create(&tpath).with_context(|| format!("create {}", tpath.display()))?);
    write_timings_csv(&result.timings, w)?;
    let report = result.to_report(Some(tpath.display().to_string()));
    write_json(&report, Some(&a.out))
}

fn eval(a: EvalArgs) -> Result<()> {
    let truth: GroundTruth = read_json(&a.truth)?;
    let result: MscReport = read_json(&a.result)?;
    let truth_sets = truth.sets();
    let mut rec = [0.0; 3];
    for (m, r) in result.modes().iter().enumerate() {
        rec[m] = mode_recovery(truth_sets[m], &r.j)?;
    }
    let mut sim = [f64::NAN; 3];
    if let Some(input) = &a.input {
        let t = load_tensor(input)?;
        let settings = a.msc.config().spectral;
        for (m, r) in result.modes().iter().enumerate() {
            let v = normalize(build_eigen_matrix(&t, Mode::ALL[m], &settings)?)?;
            sim[m] = mode_similarity(&similarity(&v), &r.j)?;
        }
    }
    write_json(&QualityReport::from_modes(rec, sim), None)
}

fn bench_gamma(a: GammaArgs) -> Result<()> {
    let dims = match a.dims[..] {
        [x, y, z] => [x, y, z],
        _ => bail!("--dims takes three sizes"),
    };
    let backend = match a.np {
        0 => Backend::Sequential,
        p => {
            check_world_size(p)?;
            Backend::Parallel(p)
        }
    };
    let cfg = GammaSweepConfig {
        dims,
        l: a.l,
        gammas: log_spaced(a.gamma_min, a.gamma_max, a.steps),
        reps: a.reps,
        seed: a.seed,
        msc: a.msc.config(),
        backend,
    };
    let sweep = run_experiment_gamma_sweep(&cfg, &ThreadRunner)?;
    write_csv(&sweep.rows, File::create(&a.out)?)?;
    Ok(())
}

/// Ranks as separate processes of this executable, talking over TCP.
struct ProcessRunner {
    exe: PathBuf,
    msc: MscArgs,
    workdir: PathBuf,
}

impl ParallelRunner for ProcessRunner {
    fn run(&self, p: usize, data: &Synthetic, config: &MscConfig) -> msc_core::Result<ParallelResult> {
        debug_assert_eq!(config, &self.msc.config());
        let synth = SynthArgs {
            dims: data.dims().to_vec(),
            l: Some(data.l()),
            cluster_frac: DEFAULT_CLUSTER_FRAC,
            gamma: data.gamma(),
            seed: data.seed(),
        };
        let out = self.workdir.join("result.json");
        let tfile = self.workdir.join("timings.csv");
        let mut args = vec!["par".to_string(), "--np".into(), p.to_string()];
        args.extend(synth.to_args());
        args.extend(self.msc.to_args());
        args.extend([
            "--out".into(),
            out.display().to_string(),
            "--timings".into(),
            tfile.display().to_string(),
        ]);
        let report = socket::launch(p, &self.exe, &args)?;
        if !report.success() {
            return Err(msc_core::MscError::Comm(format!("ranks exited with {:?}", report.statuses)));
        }
        let file = |path: &Path| File::open(path).map_err(msc_core::MscError::from);
        let json: MscReport = serde_json::from_reader(BufReader::new(file(&out)?))?;
        let timings = read_timings_csv(file(&tfile)?)?;
        let mode = |r: &msc_core::ModeReport| ParallelMode {
            report: r.clone(),
            gap_found: r.j.len() < r.d.len(),
            // not carried by the result file
            cohesion: f64::NAN,
        };
        Ok(ParallelResult {
            modes: [mode(&json.j1), mode(&json.j2), mode(&json.j3)],
            timings,
        })
    }
}

fn bench_scaling(a: ScalingArgs) -> Result<()> {
    for &p in &a.procs {
        check_world_size(p)?;
    }
    let cfg = ScalingConfig {
        dims: a.sizes.iter().map(|&n| [n, n, n]).collect(),
        procs: a.procs.clone(),
        reps: a.reps,
        gamma: a.gamma,
        cluster_frac: a.cluster_frac,
        seed: a.seed,
        msc: a.msc.config(),
    };
    let rows = match a.launcher {
        Launcher::Threads => run_experiment_scaling(&cfg, &ThreadRunner)?,
        Launcher::Processes => {
            let workdir = std::env::temp_dir().join(format!("msc-scaling-{}", std::process::id()));
            fs::create_dir_all(&workdir)?;
            let runner = ProcessRunner {
                exe: std::env::current_exe()?,
                msc: a.msc.clone(),
                workdir: workdir.clone(),
            };
            let rows = run_experiment_scaling(&cfg, &runner);
            let _ = fs::remove_dir_all(&workdir);
            rows?
        }
    };
    write_csv(&rows, File::create(&a.out)?)?;
    // echo what was written, as read back
    let back: Vec<msc_core::bench::ScalingRow> = read_csv(File::open(&a.out)?)?;
    for r in back {
        println!("{} p={} {:.4}s speedup {:.2}", r.dims, r.p, r.seconds_mean, r.speedup_vs_sequential);
    }
    Ok(())
}
