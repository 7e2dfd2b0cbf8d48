use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedres::bandit::Policy;
use fedres::datagen::{partition_federated, read_libsvm_file, PartitionConfig};
use fedres::harness::{
    appendix_c_csv, bandit_csv, run_appendix_c, run_bandit_experiment, run_experiment, sweep, to_csv, Algo,
    AppendixCConfig, BanditExperiment, DataSource, ExperimentConfig, SweepAxis, DEFAULT_RADIUS,
};
use fedres::{Error, Result};

/// Federated residual learning simulator.
#[derive(Debug, Parser)]
#[command(name = "fedres", version)]
struct Cli {
    /// Directory for output files when --output is relative or absent.
    #[arg(long, global = true, env = "FEDRES_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    /// Output file; "-" writes to stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Seeded rollouts of one learner.
    Run(ExperimentArgs),
    /// Rollouts at each client count.
    SweepClients {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Rollouts at each round-trip delay, split as evenly as possible.
    SweepDelay {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Residual SGD, residual ERM and fictitious play on the two-block stream.
    Appendixc {
        #[arg(long, default_value_t = 50)]
        rollouts: usize,
        #[arg(long, default_value_t = 20_000)]
        rounds: usize,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,20000")]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Epsilon-greedy federated contextual bandit on a random linear environment.
    Bandit {
        #[arg(long, default_value_t = 4)]
        actions: usize,
        #[arg(long, default_value_t = 5)]
        clients: usize,
        #[arg(long, default_value_t = 3)]
        global_dim: usize,
        #[arg(long, default_value_t = 2)]
        local_dim: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        /// Exploration period B.
        #[arg(long, default_value_t = 10)]
        period: usize,
        #[arg(long, default_value_t = PolicyArg::EpsilonGreedy, value_enum)]
        policy: PolicyArg,
        #[arg(long, default_value_t = 5000)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        delay_up: usize,
        #[arg(long, default_value_t = 0)]
        delay_down: usize,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 1)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes the client/line/role manifest of one partition.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        clients: usize,
        #[arg(long, default_value_t = 30)]
        max_per_label: usize,
        #[arg(long, default_value_t = 0.25)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    EpsilonGreedy,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetArg {
    Example2,
    Libsvm,
    Appendixc,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, default_value = "fedres-sgd")]
    algo: String,
    #[arg(long, default_value_t = 10)]
    clients: usize,
    #[arg(long, default_value_t = 500)]
    rounds: usize,
    #[arg(long, default_value_t = 0)]
    delay_up: usize,
    #[arg(long, default_value_t = 0)]
    delay_down: usize,
    /// Per-client uplink delays; overrides --delay-up.
    #[arg(long, value_delimiter = ',')]
    delays_up: Option<Vec<usize>>,
    /// Per-client downlink delays; overrides --delay-down.
    #[arg(long, value_delimiter = ',')]
    delays_down: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Global step size; 0.5/sqrt(rounds) when unset.
    #[arg(long)]
    eta: Option<f64>,
    /// Local step size; same as --eta when unset.
    #[arg(long)]
    eta_local: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = 50)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DatasetArg::Example2, value_enum)]
    dataset: DatasetArg,
    /// LIBSVM file, plain or gzip.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    max_per_label: usize,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    shift_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    global_norm: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 200)]
    test_per_client: usize,
    /// Run rollouts one after another.
    #[arg(long)]
    sequential: bool,
    /// Skip the offline comparator fit; avg_regret is reported as NaN.
    #[arg(long)]
    no_regret: bool,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let source = match self.dataset {
            DatasetArg::Example2 => DataSource::Example2 {
                dim: self.dim,
                shift_norm: self.shift_norm,
                global_norm: self.global_norm,
                noise_std: self.noise_std,
                test_per_client: self.test_per_client,
            },
            DatasetArg::Libsvm => DataSource::Libsvm {
                path: self
                    .data
                    .clone()
                    .ok_or_else(|| Error::config("--dataset libsvm needs --data"))?,
                max_per_label: self.max_per_label,
                test_fraction: self.test_fraction,
            },
            DatasetArg::Appendixc => DataSource::AppendixC {
                test_size: self.test_per_client,
            },
        };
        let mut cfg = ExperimentConfig::new(self.algo.parse::<Algo>()?, self.clients, self.rounds, source);
        cfg.delay_up = self.delay_up;
        cfg.delay_down = self.delay_down;
        if self.delays_up.is_some() || self.delays_down.is_some() {
            let mut d = cfg.delays();
            if let Some(u) = &self.delays_up {
                d.uplink = u.clone();
            }
            if let Some(v) = &self.delays_down {
                d.downlink = v.clone();
            }
            cfg.per_client_delays = Some(d);
        }
        cfg.batch = self.batch;
        cfg.eta = self.eta;
        cfg.eta_local = self.eta_local;
        cfg.radius = self.radius;
        cfg.rollouts = self.rollouts;
        cfg.base_seed = self.seed;
        cfg.parallel = !self.sequential;
        cfg.with_regret = !self.no_regret;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: &Cli) -> Result<(String, &'static str)> {
    match &cli.command {
        Command::Run(exp) => Ok((to_csv(&run_experiment(&exp.config()?)?), "run.csv")),
        Command::SweepClients { exp, values } => {
            Ok((to_csv(&sweep(&exp.config()?, SweepAxis::Clients, values)?), "sweep-clients.csv"))
        }
        Command::SweepDelay { exp, values } => {
            Ok((to_csv(&sweep(&exp.config()?, SweepAxis::Delay, values)?), "sweep-delay.csv"))
        }
        Command::Appendixc {
            rollouts,
            rounds,
            eta,
            radius,
            checkpoints,
            seed,
        } => {
            let cfg = AppendixCConfig {
                rollouts: *rollouts,
                rounds: *rounds,
                eta: *eta,
                radius: *radius,
                checkpoints: checkpoints.clone(),
                base_seed: *seed,
                parallel: true,
            };
            Ok((appendix_c_csv(&run_appendix_c(&cfg)?), "appendixc.csv"))
        }
        Command::Bandit {
            actions,
            clients,
            global_dim,
            local_dim,
            noise_std,
            period,
            policy,
            rounds,
            delay_up,
            delay_down,
            eta,
            radius,
            rollouts,
            seed,
        } => {
            let cfg = BanditExperiment {
                actions: *actions,
                clients: *clients,
                global_dim: *global_dim,
                local_dim: *local_dim,
                noise_std: *noise_std,
                rounds: *rounds,
                delay_up: *delay_up,
                delay_down: *delay_down,
                eta: *eta,
                radius: *radius,
                policy: match policy {
                    PolicyArg::EpsilonGreedy => Policy::EpsilonGreedy { period: *period },
                    PolicyArg::Uniform => Policy::Uniform,
                },
                rollouts: *rollouts,
                base_seed: *seed,
            };
            Ok((bandit_csv(&run_bandit_experiment(&cfg)?), "bandit.csv"))
        }
        Command::Partition {
            data,
            clients,
            max_per_label,
            test_fraction,
            seed,
        } => {
            let corpus = read_libsvm_file(data)?;
            let cfg = PartitionConfig {
                clients: *clients,
                max_per_label: *max_per_label,
                test_fraction: *test_fraction,
            };
            Ok((partition_federated(&corpus, &cfg, *seed)?.manifest(), "partition.csv"))
        }
    }
}

fn output_path(cli: &Cli, default_name: &str) -> Option<PathBuf> {
    match (&cli.output, &cli.output_dir) {
        (Some(p), _) if p.as_os_str() == "-" => None,
        (Some(p), Some(dir)) if p.is_relative() => Some(dir.join(p)),
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = execute(&cli).and_then(|(csv, name)| match output_path(&cli, name) {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
