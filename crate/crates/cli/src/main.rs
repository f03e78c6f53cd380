use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradmatch::config::Overrides;
use gradmatch::formats::read_file;
use gradmatch::runner::{self, SweepAxis};
use gradmatch::CliError;
use gradmatch_core::Algo;

#[derive(Parser)]
#[command(
    name = "gradmatch",
    version,
    about = "Train and analyze gradient-matching algorithms on multi-domain toy datasets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm over a list of seeds.
    Run(Settings),
    /// Cross a hyperparameter grid with several algorithms.
    Sweep {
        #[command(flatten)]
        settings: Settings,
        /// n_domains, gamma or alpha.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma-separated algorithms.
        #[arg(long, value_delimiter = ',', default_value = "erm,fish")]
        algos: Vec<String>,
    },
    /// Write the generated train and test splits as text files.
    Gen(Settings),
}

/// Flags mirror config keys; a flag overrides the same key in `--config`.
#[derive(Args)]
struct Settings {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// linear, vecsprites or file.
    #[arg(long)]
    dataset: Option<String>,
    /// erm, fish, idgm, smoothfish, reptile or fish_rg.
    #[arg(long)]
    algo: Option<String>,
    /// linear or mlp1.
    #[arg(long)]
    model: Option<String>,
    /// Inner-loop learning rate.
    #[arg(long)]
    alpha: Option<String>,
    /// Outer (meta) step size.
    #[arg(long)]
    epsilon: Option<String>,
    /// GIP scaling for idgm and smoothfish.
    #[arg(long)]
    gamma: Option<String>,
    /// Inner steps per outer iteration (defaults to the number of train domains).
    #[arg(long)]
    meta_steps: Option<String>,
    #[arg(long)]
    outer_iters: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// `0,1,2` or `0..4`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    n_domains: Option<String>,
    #[arg(long)]
    per_domain: Option<String>,
    #[arg(long)]
    noise_dim: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Also write the paired fish/erm GIP trace per seed.
    #[arg(long)]
    track_gip: bool,
    /// Alpha grid `a1,a2,...` for the expansion probe; bare flag uses the default grid.
    #[arg(long, num_args = 0..=1, default_missing_value = "default", value_name = "ALPHAS")]
    theorem_probe: Option<String>,
    /// Write the final parameters per seed.
    #[arg(long)]
    dump_params: bool,
}

impl Settings {
    fn overrides(&self) -> Result<Overrides, CliError> {
        let base = match &self.config {
            Some(p) => {
                Overrides::parse_file(&read_file(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Overrides::default(),
        };
        let mut flags = Overrides::default();
        let named = [
            ("dataset", &self.dataset),
            ("algo", &self.algo),
            ("model", &self.model),
            ("alpha", &self.alpha),
            ("epsilon", &self.epsilon),
            ("gamma", &self.gamma),
            ("meta_steps", &self.meta_steps),
            ("outer_iters", &self.outer_iters),
            ("batch_size", &self.batch_size),
            ("seeds", &self.seeds),
            ("n_domains", &self.n_domains),
            ("per_domain", &self.per_domain),
            ("noise_dim", &self.noise_dim),
            ("theorem_probe", &self.theorem_probe),
            ("out", &self.out),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                flags.set(key, v)?;
            }
        }
        for (key, on) in [("track_gip", self.track_gip), ("dump_params", self.dump_params)] {
            if on {
                flags.set(key, "true")?;
            }
        }
        for kv in &self.set {
            let (k, v) =
                kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set `{kv}`: expected KEY=VALUE")))?;
            flags.set(k, v)?;
        }
        Ok(base.merge(flags))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(s) => {
            let spec = s.overrides()?.resolve()?;
            let summary = runner::run(&spec)?;
            let test = summary.mean_test_acc.map(|m| format!("{m:.4}")).unwrap_or_else(|| "n/a".into());
            println!(
                "{} on {}: train {:.4}, test {} over {} seed(s); wrote {}",
                summary.algo,
                summary.dataset,
                summary.mean_train_acc,
                test,
                summary.seeds.len(),
                spec.out.display()
            );
        }
        Command::Sweep { settings, axis, values, algos } => {
            let spec = settings.overrides()?.resolve()?;
            let axis: SweepAxis = axis.parse()?;
            let algos = algos.iter().map(|a| a.parse::<Algo>()).collect::<Result<Vec<_>, _>>()?;
            for row in runner::sweep(&spec, axis, &values, &algos)? {
                println!("{} {:<10} {:.4} ± {:.4}", row.value, row.algo, row.mean_test_acc, row.std_test_acc);
            }
        }
        Command::Gen(s) => {
            let spec = s.overrides()?.resolve()?;
            let (a, b) = runner::generate(&spec.dataset, spec.seeds[0], &spec.out)?;
            println!("wrote {} and {}", a.display(), b.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
