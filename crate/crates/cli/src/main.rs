use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use disbec::harness::{self, ExperimentConfig, Mode, OutputFormat, Scaling};
use disbec::{ScattererConfig, Strength};

/// Ground states of a 1D Bose gas among random delta scatterers.
#[derive(Parser, Debug)]
#[command(name = "disbec", version)]
struct Cli {
    #[command(subcommand)]
    mode: Command,

    /// Experiment configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Extra path for the primary JSON result.
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Default)]
struct Physical {
    #[arg(long)]
    gamma: Option<f64>,
    /// Scatterer strength, a number or `inf`.
    #[arg(long)]
    sigma: Option<Strength>,
    #[arg(long)]
    nu: Option<f64>,
    /// Interior grid nodes.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-interval problem e(kappa, alpha), or a table of it.
    Aux {
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        alpha: Option<Strength>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        table: bool,
        #[arg(long)]
        kappa_max: Option<f64>,
        #[arg(long)]
        knots: Option<usize>,
    },
    /// Deterministic energy, chemical potential and phase.
    Thermo {
        #[command(flatten)]
        physical: Physical,
    },
    /// GP minimization for one configuration.
    Gp {
        #[command(flatten)]
        physical: Physical,
        /// Scatterer configuration (JSON); sampled from nu and seed when absent.
        #[arg(long)]
        config_json: Option<PathBuf>,
    },
    /// Disorder ensemble over one or more densities.
    Ensemble {
        #[command(flatten)]
        physical: Physical,
        /// Densities, comma separated.
        #[arg(long, value_delimiter = ',')]
        nus: Vec<f64>,
        #[arg(long)]
        samples: Option<usize>,
        /// gamma as a function of nu: a number or `c*nu^p`.
        #[arg(long)]
        gamma_rule: Option<Scaling>,
        /// sigma as a function of nu: a number, `inf`, `c*nu^p` or `default`.
        #[arg(long)]
        sigma_rule: Option<Scaling>,
    },
    /// Low spectrum and gap bound.
    Gap {
        #[command(flatten)]
        physical: Physical,
        #[arg(long)]
        config_json: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Depletion bounds for k = 1 .. K - 1.
    Depletion {
        #[command(flatten)]
        physical: Physical,
        #[arg(long)]
        config_json: Option<PathBuf>,
        /// Particle number.
        #[arg(long = "N")]
        particles: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        constant: Option<f64>,
    },
    /// Poisson sampler tests.
    PoissonStats {
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Lengths for the max-gap law, comma separated.
        #[arg(long, value_delimiter = ',')]
        max_gap_lengths: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Phase labels over a (gamma, nu) grid.
    PhaseDiagram {
        #[arg(long, value_delimiter = ',')]
        nus: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// gamma / nu^2 values, comma separated.
        #[arg(long, value_delimiter = ',')]
        gamma_ratios: Vec<f64>,
        #[arg(long)]
        sigma_rule: Option<Scaling>,
        #[arg(long)]
        gp_max_nu: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn load_scatterers(path: &Path) -> Result<ScattererConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid scatterer configuration {}: {e}", path.display()))
}

fn apply_physical(c: &mut ExperimentConfig, p: &Physical) {
    if let Some(v) = p.gamma {
        c.params.gamma = v;
    }
    if let Some(v) = p.sigma {
        c.params.sigma = v;
    }
    if let Some(v) = p.nu {
        c.params.nu = v;
        c.ensemble.nu = v;
    }
    if let Some(v) = p.grid {
        c.params.grid_points = v;
    }
    if let Some(v) = p.seed {
        c.ensemble.base_seed = v;
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut c = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        c.output_dir = out.clone();
    }
    if let Some(f) = cli.format {
        c.format = match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        };
    }
    if cli.json_out.is_some() {
        c.json_out = cli.json_out.clone();
    }
    match &cli.mode {
        Command::Aux { kappa, alpha, grid, table, kappa_max, knots } => {
            c.mode = Mode::Aux;
            c.aux.kappa = kappa.unwrap_or(c.aux.kappa);
            c.aux.alpha = alpha.unwrap_or(c.aux.alpha);
            c.params.grid_points = grid.unwrap_or(c.params.grid_points);
            c.aux.table |= *table;
            c.aux.kappa_max = kappa_max.unwrap_or(c.aux.kappa_max);
            c.aux.knots = knots.unwrap_or(c.aux.knots);
        }
        Command::Thermo { physical } => {
            c.mode = Mode::Thermo;
            apply_physical(&mut c, physical);
        }
        Command::Gp { physical, config_json } => {
            c.mode = Mode::Gp;
            apply_physical(&mut c, physical);
            if let Some(path) = config_json {
                c.scatterers = Some(load_scatterers(path)?);
            }
        }
        Command::Ensemble { physical, nus, samples, gamma_rule, sigma_rule } => {
            c.mode = Mode::Ensemble;
            apply_physical(&mut c, physical);
            if !nus.is_empty() {
                c.sweep.nus = nus.clone();
            }
            c.ensemble.samples = samples.unwrap_or(c.ensemble.samples);
            if gamma_rule.is_some() {
                c.sweep.gamma_rule = *gamma_rule;
            }
            if sigma_rule.is_some() {
                c.sweep.sigma_rule = *sigma_rule;
            }
        }
        Command::Gap { physical, config_json, k } => {
            c.mode = Mode::Gap;
            apply_physical(&mut c, physical);
            if let Some(path) = config_json {
                c.scatterers = Some(load_scatterers(path)?);
            }
            c.spectrum.k = k.unwrap_or(c.spectrum.k);
        }
        Command::Depletion { physical, config_json, particles, k, constant } => {
            c.mode = Mode::Depletion;
            apply_physical(&mut c, physical);
            if let Some(path) = config_json {
                c.scatterers = Some(load_scatterers(path)?);
            }
            c.spectrum.particles = particles.unwrap_or(c.spectrum.particles);
            c.spectrum.k = k.unwrap_or(c.spectrum.k);
            c.spectrum.constant = constant.unwrap_or(c.spectrum.constant);
        }
        Command::PoissonStats { nu, samples, seed, max_gap_lengths, trials } => {
            c.mode = Mode::PoissonStats;
            c.ensemble.nu = nu.unwrap_or(c.ensemble.nu);
            c.ensemble.samples = samples.unwrap_or(c.ensemble.samples);
            c.ensemble.base_seed = seed.unwrap_or(c.ensemble.base_seed);
            if let Some(l) = max_gap_lengths {
                c.poisson.max_gap_lengths = l.clone();
            }
            c.poisson.trials = trials.unwrap_or(c.poisson.trials);
        }
        Command::PhaseDiagram { nus, gammas, gamma_ratios, sigma_rule, gp_max_nu, seed, grid } => {
            c.mode = Mode::PhaseDiagram;
            if !nus.is_empty() {
                c.sweep.nus = nus.clone();
            }
            if !gammas.is_empty() {
                c.sweep.gammas = gammas.clone();
            }
            if !gamma_ratios.is_empty() {
                c.sweep.gamma_ratios = gamma_ratios.clone();
            }
            if sigma_rule.is_some() {
                c.sweep.sigma_rule = *sigma_rule;
            }
            c.sweep.gp_max_nu = gp_max_nu.unwrap_or(c.sweep.gp_max_nu);
            c.ensemble.base_seed = seed.unwrap_or(c.ensemble.base_seed);
            c.params.grid_points = grid.unwrap_or(c.params.grid_points);
        }
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match harness::run(&config) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(outcome.summary.as_bytes());
            for f in &outcome.files {
                let _ = writeln!(stdout, "wrote {}", f.display());
            }
            if outcome.too_many_failures(config.failure_threshold) {
                eprintln!(
                    "error: {} of {} samples failed (threshold {})",
                    outcome.failures, outcome.samples, config.failure_threshold
                );
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
