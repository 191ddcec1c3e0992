use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueHint};
use lssid::benchmark::{a_for_gamma, two_mode_model, two_mode_selection};
use lssid::bounds::{certify, find_p, BoundInputs, StabilityCertificate};
use lssid::experiment::{run_experiment, summarize, summary_table, write_outputs, ExperimentConfig};
use lssid::hokalman::{
    est_err, find_selection, find_selection_exhaustive, identify, reference_realization, required_words,
    EXHAUSTIVE_MAX_N,
};
use lssid::simulate::{simulate, SimConfig, DEFAULT_BURN_IN};
use lssid::{linalg, LssError, ModelSpec, SampleSet, Selection, SignalSpec};
use nalgebra::DMatrix;

/// Identification of linear switched systems from a single trajectory.
#[derive(Parser)]
#[command(name = "lssid", version)]
struct Cli {
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate(SimulateOpts),
    /// Estimate Markov parameters from a trajectory and realize a model.
    Identify(IdentifyOpts),
    /// Evaluate the finite-sample error bound over a grid of N.
    Bound(BoundOpts),
    /// Run the Monte Carlo study.
    Experiment(ExperimentOpts),
    /// Search for a row/column selection with invertible Hankel block.
    Selection(SelectionOpts),
    /// Find or validate a quadratic-stability certificate.
    Stability(StabilityOpts),
}

#[derive(Args)]
struct ModelArgs {
    /// Model file (JSON). Without it the two-mode benchmark is used.
    #[arg(long, value_hint = ValueHint::FilePath)]
    model: Option<PathBuf>,
    /// Stability exponent: sets a = 0.9 gamma / 2 for the benchmark and is
    /// the certificate target for a user model.
    #[arg(long, default_value_t = 0.6)]
    gamma: f64,
}

impl ModelArgs {
    fn is_benchmark(&self) -> bool {
        self.model.is_none()
    }

    fn spec(&self) -> Result<ModelSpec, LssError> {
        match &self.model {
            Some(path) => ModelSpec::load(path),
            None => {
                if !(self.gamma > 0.0 && self.gamma < 1.0) {
                    return Err(LssError::Parameter(format!("gamma = {} outside (0, 1)", self.gamma)));
                }
                Ok(ModelSpec::new(two_mode_model(a_for_gamma(self.gamma))))
            }
        }
    }

    fn selection(&self, spec: &ModelSpec, file: Option<&Path>) -> Result<Selection, LssError> {
        match file {
            Some(path) => Selection::load(path),
            None if self.is_benchmark() => Ok(two_mode_selection()),
            None => Ok(find_selection(&spec.model)?.selection),
        }
    }
}

#[derive(Args)]
struct SignalArgs {
    /// Input amplitude bound (overrides the model file).
    #[arg(long)]
    ku_input: Option<f64>,
    /// Noise amplitude bound (overrides the model file).
    #[arg(long)]
    ku_noise: Option<f64>,
}

impl SignalArgs {
    fn resolve(&self, spec: &ModelSpec) -> Result<SignalSpec, LssError> {
        let m = spec.model.m();
        match (&spec.signal, self.ku_input, self.ku_noise) {
            (Some(s), None, None) => Ok(s.clone()),
            (Some(s), inp, noise) => {
                SignalSpec::uniform(m, inp.unwrap_or(s.ku_input()), noise.unwrap_or(s.ku_noise()))
            }
            (None, inp, noise) => SignalSpec::uniform(m, inp.unwrap_or(0.8), noise.unwrap_or(1.0)),
        }
    }
}

#[derive(Args)]
struct SimulateOpts {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    signal: SignalArgs,
    /// Number of retained samples N.
    #[arg(long, short = 'n', default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Output directory; receives trajectory.csv.
    #[arg(long, default_value = ".", value_hint = ValueHint::DirPath)]
    out: PathBuf,
}

#[derive(Args)]
struct IdentifyOpts {
    /// Trajectory CSV as written by `simulate`.
    #[arg(long, value_hint = ValueHint::FilePath)]
    trajectory: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    signal: SignalArgs,
    /// Selection file; searched from the model when absent.
    #[arg(long, value_hint = ValueHint::FilePath)]
    selection: Option<PathBuf>,
    /// Output directory; receives realization.json and markov.json.
    #[arg(long, default_value = ".", value_hint = ValueHint::DirPath)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundOpts {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, value_hint = ValueHint::FilePath)]
    selection: Option<PathBuf>,
    /// Certificate target exponent (defaults to --gamma).
    #[arg(long)]
    target: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Comma-separated trajectory lengths.
    #[arg(long = "n-grid", value_delimiter = ',', default_value = "1000,3000,10000,30000,100000")]
    n_grid: Vec<u64>,
    /// Output directory; receives bound.csv and certificate.json.
    #[arg(long, default_value = ".", value_hint = ValueHint::DirPath)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentOpts {
    /// Experiment configuration (JSON); defaults apply to missing fields.
    #[arg(long, value_hint = ValueHint::FilePath)]
    config: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::DirPath)]
    out: Option<PathBuf>,
    /// Overrides seed_base.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Write wall_ms as 0 so the CSV is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct SelectionOpts {
    #[command(flatten)]
    model: ModelArgs,
    /// Exhaustive search (n <= 3) instead of the greedy one.
    #[arg(long)]
    exhaustive: bool,
    /// Output directory; receives selection.json.
    #[arg(long, value_hint = ValueHint::DirPath)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StabilityOpts {
    #[command(flatten)]
    model: ModelArgs,
    /// Target exponent for the search (defaults to --gamma).
    #[arg(long)]
    target: Option<f64>,
    /// Candidate P as a JSON array of rows; validated without search.
    #[arg(long = "p", value_hint = ValueHint::FilePath)]
    p_file: Option<PathBuf>,
    /// Output directory; receives certificate.json.
    #[arg(long, value_hint = ValueHint::DirPath)]
    out: Option<PathBuf>,
}

fn write_into(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, LssError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn describe_selection(sel: &Selection) -> String {
    let rows: Vec<String> = sel.alpha().iter().map(|w| format!("{w:?}")).collect();
    let cols: Vec<String> =
        sel.beta().iter().map(|c| format!("({:?}, {}, {})", c.mu, c.q + 1, c.l + 1)).collect();
    format!("alpha = {{{}}}\nbeta  = {{{}}}", rows.join(", "), cols.join(", "))
}

fn print_certificate(cert: &StabilityCertificate) {
    println!("gamma        {:.9}", cert.gamma);
    println!("margin       {:.6e}", cert.margin);
    println!("schur radius {:.9}", cert.schur_radius);
    println!("P            {:?}", linalg::to_rows(&cert.p));
}

fn cmd_simulate(o: &SimulateOpts) -> Result<(), LssError> {
    let spec = o.model.spec()?;
    let dist = spec.dist_or_uniform();
    let signal = o.signal.resolve(&spec)?;
    let mut cfg = SimConfig::new(spec.model.clone(), dist.clone(), signal.clone(), o.samples, o.seed);
    cfg.burn_in = o.burn_in;
    let sample = simulate(&cfg)?;
    fs::create_dir_all(&o.out)?;
    let path = o.out.join("trajectory.csv");
    sample.write_csv(std::io::BufWriter::new(fs::File::create(&path)?))?;

    println!("wrote {} ({} samples, seed {})", path.display(), sample.n(), o.seed);
    println!("max |y| = {:.6e}", sample.max_abs_y());
    let freqs: Vec<String> = sample.mode_frequencies(spec.model.n_q()).iter().map(|f| format!("{f:.4}")).collect();
    println!("mode frequencies = [{}]", freqs.join(", "));
    if let Ok(cert) = find_p(&spec.model, &dist, o.model.gamma) {
        let sel = o.model.selection(&spec, None);
        if let Ok(sel) = sel {
            let sigma_n = reference_realization(&spec.model, &sel)?.sigma_n;
            if let Ok(inputs) = BoundInputs::new(&spec.model, &dist, &signal, cert, &sel, sigma_n) {
                println!("K_y = {:.6e}", inputs.constants.k_y);
            }
        }
    }
    Ok(())
}

fn cmd_identify(o: &IdentifyOpts) -> Result<(), LssError> {
    let spec = o.model.spec()?;
    let dist = spec.dist_or_uniform();
    let signal = o.signal.resolve(&spec)?;
    let sel = o.model.selection(&spec, o.selection.as_deref())?;
    let sample = SampleSet::read_csv(fs::File::open(&o.trajectory)?)?;
    let id = match identify(&sample, &sel, spec.model.n_q(), signal.sigma_u(), &dist) {
        Ok(id) => id,
        Err(e @ LssError::SingularHankel { .. }) => {
            eprintln!("error: {e}");
            if let Ok(cert) = find_p(&spec.model, &dist, o.model.gamma) {
                let sigma_n = reference_realization(&spec.model, &sel)?.sigma_n;
                let inputs = BoundInputs::new(&spec.model, &dist, &signal, cert, &sel, sigma_n)?;
                let need = inputs.constants.min_valid_n(0.05);
                eprintln!(
                    "diagnosis: N = {} while the error bound needs N >= {need} (delta = 0.05) for the \
                     empirical Hankel matrix to be guaranteed invertible",
                    sample.n()
                );
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let rr = &id.realization;
    let realization = write_into(&o.out, "realization.json", &rr.to_json(&sel)?)?;
    let markov = write_into(&o.out, "markov.json", &id.markov.to_json()?)?;
    println!("N = {}, |W| = {}", sample.n(), required_words(&sel, spec.model.n_q()).len() - 1);
    println!("sigma_n(H_ab estimate) = {:.6e}", linalg::sigma_min(&id.hankels.h_ab));
    let reference = reference_realization(&spec.model, &sel)?;
    println!("EstErr = {:.6e}", est_err(rr, &reference)?);
    println!("wrote {} and {}", realization.display(), markov.display());
    Ok(())
}

fn cmd_bound(o: &BoundOpts) -> Result<(), LssError> {
    let spec = o.model.spec()?;
    let dist = spec.dist_or_uniform();
    let signal = o.signal.resolve(&spec)?;
    let sel = o.model.selection(&spec, o.selection.as_deref())?;
    let cert = find_p(&spec.model, &dist, o.target.unwrap_or(o.model.gamma))?;
    let sigma_n = reference_realization(&spec.model, &sel)?.sigma_n;
    let inputs = BoundInputs::new(&spec.model, &dist, &signal, cert, &sel, sigma_n)?;
    if o.n_grid.is_empty() {
        return Err(LssError::Parameter("empty N grid".into()));
    }
    let mut csv = String::from("N,delta,K_tilde,K_deltaN,K_2,bound,valid_n,valid_hankel\n");
    let mut certificates = Vec::new();
    for &n in &o.n_grid {
        let c = inputs.certificate(o.delta, n)?;
        csv.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{},{}\n",
            c.n,
            c.delta,
            c.k_tilde,
            c.k_delta_n,
            c.k_2,
            c.bound_est_err,
            u8::from(c.valid_n),
            u8::from(c.valid_hankel)
        ));
        certificates.push(c);
    }
    let table = write_into(&o.out, "bound.csv", &csv)?;
    let json = write_into(&o.out, "certificate.json", &serde_json::to_string_pretty(&certificates)?)?;
    print!("{}", certificates.last().expect("grid is non-empty").table());
    println!();
    println!("{:>10}  {:>12}  {:>5}", "N", "bound", "valid");
    for c in &certificates {
        println!("{:>10}  {:>12.4e}  {:>5}", c.n, c.bound_est_err, if c.valid() { "yes" } else { "no" });
    }
    println!("wrote {} and {}", table.display(), json.display());
    Ok(())
}

fn cmd_experiment(o: &ExperimentOpts) -> Result<(), LssError> {
    let mut cfg = match &o.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.seed_base = seed;
    }
    if let Some(trials) = o.trials {
        cfg.trials = trials;
    }
    if let Some(delta) = o.delta {
        cfg.delta = delta;
    }
    if o.no_timing {
        cfg.record_timing = false;
    }
    cfg.validate()?;
    let rows = run_experiment(&cfg)?;
    let written = write_outputs(&cfg, &rows)?;
    print!("{}", summary_table(&summarize(&rows)));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_selection(o: &SelectionOpts) -> Result<(), LssError> {
    let spec = o.model.spec()?;
    let found = if o.exhaustive {
        if spec.model.n() > EXHAUSTIVE_MAX_N {
            return Err(LssError::Parameter(format!("exhaustive search needs n <= {EXHAUSTIVE_MAX_N}")));
        }
        find_selection_exhaustive(&spec.model)?
    } else {
        find_selection(&spec.model)?
    };
    println!("{}", describe_selection(&found.selection));
    println!("sigma_n(H_ab) = {:.6e}", found.sigma_n);
    println!("|W| = {}", required_words(&found.selection, spec.model.n_q()).len() - 1);
    if let Some(dir) = &o.out {
        let path = write_into(dir, "selection.json", &found.selection.to_json()?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_stability(o: &StabilityOpts) -> Result<(), LssError> {
    let spec = o.model.spec()?;
    let dist = spec.dist_or_uniform();
    let cert = match &o.p_file {
        Some(path) => {
            let rows: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(path)?)?;
            let n = spec.model.n();
            let p: DMatrix<f64> = linalg::from_rows(&rows, n, n, "P")?;
            certify(&spec.model, &dist, &p)?
        }
        None => find_p(&spec.model, &dist, o.target.unwrap_or(o.model.gamma))?,
    };
    print_certificate(&cert);
    if let Some(dir) = &o.out {
        let path = write_into(dir, "certificate.json", &cert.to_json()?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn exit_code(e: &LssError) -> u8 {
    if e.is_io() {
        3
    } else if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(o) => cmd_simulate(o),
        Command::Identify(o) => cmd_identify(o),
        Command::Bound(o) => cmd_bound(o),
        Command::Experiment(o) => cmd_experiment(o),
        Command::Selection(o) => cmd_selection(o),
        Command::Stability(o) => cmd_stability(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&LssError::Io(std::io::Error::other("x"))), 3);
        assert_eq!(exit_code(&LssError::NoCertificate { schur_radius: 2.0 }), 2);
        assert_eq!(exit_code(&LssError::Parameter("x".into())), 1);
    }

    #[test]
    fn signal_overrides() {
        let spec = ModelSpec::new(two_mode_model(0.27));
        let args = SignalArgs { ku_input: Some(0.5), ku_noise: None };
        let s = args.resolve(&spec).unwrap();
        assert_eq!((s.ku_input(), s.ku_noise()), (0.5, 1.0));
        let uniform = lssid::SwitchingDistribution::uniform(2);
        assert_eq!(spec.dist_or_uniform(), uniform);
    }
}
