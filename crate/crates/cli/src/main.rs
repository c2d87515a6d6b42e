use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use timebin_core::config::{ArmChoice, Config};
use timebin_core::discretize::Arm;
use timebin_core::report::{read_toml, write_toml, Manifest};
use timebin_core::scan::{
    analyze_clicks, discretize_runs, load_runs, run_scan, save_runs, simulate_and_scan,
    simulate_dataset, Discretized, DiscretizedReport, Run, ScanSpec, RUN_INDEX,
};
use timebin_core::tagstream::Format;
use timebin_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "timebin",
    version,
    about = "Time-bin entanglement certification from time-tag data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one tag-stream pair per setting combination
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Stream file format: binary or csv
        #[arg(long, default_value = "binary")]
        format: Format,
    },
    /// Discretise tag streams into normalised click matrices
    Analyze(WithInput),
    /// Certify Schmidt number, entanglement of formation and entanglement rate
    Certify(WithInput),
    /// Bound the asymptotic key rate
    Keyrate(WithInput),
    /// Scan dimensions and arms over one dataset
    Scan {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; simulated from the config when absent
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated dimensions to visit
        #[arg(long, value_delimiter = ',')]
        dimensions: Option<Vec<usize>>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau_ps: Option<u64>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    delay_multiple: Option<u64>,
    /// single, nested or both
    #[arg(long)]
    arm: Option<ArmChoice>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence-interval half width in standard deviations
    #[arg(long)]
    z_width: Option<f64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct WithInput {
    #[command(flatten)]
    common: Common,
    /// Dataset directory or click-matrix report from `analyze`
    #[arg(long)]
    input: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let d = &mut cfg.discretization;
        if let Some(v) = self.tau_ps {
            d.tau_ps = v;
        }
        if let Some(v) = self.dimension {
            d.dimension = v;
        }
        if let Some(v) = self.delay_multiple {
            d.delay_multiple = v;
        }
        if let Some(v) = self.arm {
            d.arm = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = self.z_width {
            cfg.certify.z_width = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn manifest(&self, command: &str, cfg: &Config) -> Manifest {
        Manifest {
            seed: Some(cfg.run.seed),
            config: self.config.clone(),
            ..Manifest::new(command)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { common, format } => simulate(&common, format),
        Command::Analyze(args) => analyze(&args),
        Command::Certify(args) => certify(&args),
        Command::Keyrate(args) => keyrate(&args),
        Command::Scan {
            common,
            input,
            dimensions,
        } => scan(&common, input.as_deref(), dimensions),
    }
}

fn finish(out: &Path, mut manifest: Manifest, outputs: Vec<PathBuf>) -> Result<()> {
    manifest.outputs = outputs;
    write_toml(&out.join("manifest.toml"), &manifest)
}

fn simulate(common: &Common, format: Format) -> Result<()> {
    let cfg = common.load()?;
    let d = cfg.discretization.dimension;
    let runs = simulate_dataset(&cfg, d)?;
    let index = save_runs(&common.out, &runs, format, Some(d))?;
    let mut outputs = vec![PathBuf::from(RUN_INDEX)];
    for f in &index.runs {
        outputs.push(f.alice.clone());
        outputs.push(f.bob.clone());
    }
    println!(
        "simulated {} runs at d = {d} into {}",
        runs.len(),
        common.out.display()
    );
    finish(&common.out, common.manifest("simulate", &cfg), outputs)
}

/// Click matrices for every requested arm, from a dataset directory or a
/// saved report.
fn load_input(args: &WithInput, cfg: &Config) -> Result<Vec<Discretized>> {
    if args.input.is_dir() {
        let (_, runs) = load_runs(&args.input)?;
        cfg.discretization
            .arm
            .arms()
            .into_iter()
            .map(|arm| discretize(&runs, cfg, arm))
            .collect()
    } else {
        let report: DiscretizedReport = read_toml(&args.input)?;
        Ok(vec![Discretized::from_report(&report, cfg)?])
    }
}

fn discretize(runs: &[Run], cfg: &Config, arm: Arm) -> Result<Discretized> {
    let dcfg = cfg.discretization(cfg.discretization.dimension, arm);
    dcfg.validate()?;
    discretize_runs(runs, &dcfg)
}

fn stem(kind: &str, d: &Discretized) -> PathBuf {
    PathBuf::from(format!(
        "{kind}_d{}_{}.toml",
        d.clicks.dimension, d.clicks.arm
    ))
}

fn analyze(args: &WithInput) -> Result<()> {
    let cfg = args.common.load()?;
    let mut outputs = Vec::new();
    for d in load_input(args, &cfg)? {
        let name = stem("clicks", &d);
        write_toml(&args.common.out.join(&name), &d.to_report())?;
        println!(
            "d = {} {}: {} coincidences, toa rate {:.4e}/s",
            d.clicks.dimension,
            d.clicks.arm,
            d.clicks.total_counts(),
            d.toa_rate
        );
        outputs.push(name);
    }
    let mut m = args.common.manifest("analyze", &cfg);
    m.inputs.push(args.input.clone());
    finish(&args.common.out, m, outputs)
}

fn certify(args: &WithInput) -> Result<()> {
    let cfg = args.common.load()?;
    let mut outputs = Vec::new();
    for d in load_input(args, &cfg)? {
        let name = stem("certify", &d);
        let r = analyze_clicks(d, &cfg)?;
        let c = &r.certification;
        write_toml(&args.common.out.join(&name), c)?;
        println!(
            "d = {} {}: W_min {:.6}, Schmidt number {}, EoF {:.6}, entanglement rate {:.4e} ebit/s",
            c.dimension, c.arm, c.w_min, c.schmidt_number, c.eof, c.entanglement_rate
        );
        outputs.push(name);
    }
    let mut m = args.common.manifest("certify", &cfg);
    m.inputs.push(args.input.clone());
    finish(&args.common.out, m, outputs)
}

fn keyrate(args: &WithInput) -> Result<()> {
    let cfg = args.common.load()?;
    let mut outputs = Vec::new();
    for d in load_input(args, &cfg)? {
        let name = stem("keyrate", &d);
        let arm = d.clicks.arm;
        let r = analyze_clicks(d, &cfg)?;
        let k = &r.key;
        write_toml(&args.common.out.join(&name), k)?;
        println!(
            "d = {} {arm}: p_guess {:.6}, H(X|Y) {:.6}, key rate {:.4e} bit/s",
            k.dimension, k.p_guess, k.h_x_given_y, k.key_rate
        );
        outputs.push(name);
    }
    let mut m = args.common.manifest("keyrate", &cfg);
    m.inputs.push(args.input.clone());
    finish(&args.common.out, m, outputs)
}

fn scan(common: &Common, input: Option<&Path>, dimensions: Option<Vec<usize>>) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(ds) = dimensions {
        cfg.discretization.dimensions = ds;
        cfg.validate()?;
    }
    let spec = ScanSpec::from_config(&cfg);
    let report = match input {
        Some(dir) => {
            let (index, runs) = load_runs(dir)?;
            let mut r = run_scan(&spec, &runs);
            r.simulated_dimension = index.dimension;
            r
        }
        None => simulate_and_scan(&spec)?,
    };
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    report.write_csv(&common.out.join("scan.csv"))?;
    write_toml(&common.out.join("scan.toml"), &report)?;
    for row in &report.rows {
        match row.schmidt_number {
            Some(k) => println!(
                "d = {} {}: Schmidt number {k}, entanglement rate {:.4e}, key rate {:.4e}",
                row.dimension,
                row.arm,
                row.entanglement_rate.unwrap_or(0.0),
                row.key_rate.unwrap_or(0.0)
            ),
            None => println!(
                "d = {} {}: {:?} ({})",
                row.dimension, row.arm, row.status, row.reason
            ),
        }
    }
    if let Some(d) = report.simulated_dimension {
        println!("data simulated at d = {d}");
    }
    let mut m = common.manifest("scan", &cfg);
    m.inputs.extend(input.map(Path::to_path_buf));
    finish(&common.out, m, vec!["scan.csv".into(), "scan.toml".into()])
}
