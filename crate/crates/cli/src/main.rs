use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use missbart::diagnostics::{pdp_ice, range_grid, CurveKind, PdpRequest};
use missbart::fit::fit;
use missbart::io::{
    curve_table, export_chain, load_chain, load_csv, metrics_table, save_chain, save_dataset_csv, ExportKind,
    RunConfig,
};
use missbart::sim::{
    calibrate_intercepts, fixture, generate_with_seed, metric_rows, run_cv, SimRecipe, FIXTURES,
};
use missbart::{Dataset, Error, ModelKind, Result, SamplerConfig};

#[derive(Parser)]
#[command(name = "missbart", version, about = "Joint BART models for responses missing not at random")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model with a probit regression missingness component.
    FitMissbart1(FitArgs),
    /// Fit the model with a probit BART missingness component.
    FitMissbart2(FitArgs),
    /// Generate a dataset from a recipe or a bundled fixture.
    Simulate(SimulateArgs),
    /// Cross-validate models on a simulated dataset.
    Cv(CvArgs),
    /// Export summaries from a saved chain.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column names.
    #[arg(long, value_delimiter = ',')]
    responses: Vec<String>,
    /// Covariate column names; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Token marking a missing cell. Empty fields are always missing.
    #[arg(long)]
    marker: Option<String>,
    /// Responses to replace by their natural log.
    #[arg(long, value_delimiter = ',')]
    log: Vec<String>,
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long)]
    k_trees: Option<usize>,
    #[arg(long)]
    k_miss_trees: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Post-burn-in iterations per chain.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Keep every k-th stored draw's forests; 0 keeps none.
    #[arg(long)]
    forest_thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    rho_tau: Option<f64>,
    #[arg(long)]
    rho_mu: Option<f64>,
    /// Random-walk step for imputed responses (missbart2).
    #[arg(long)]
    sigma_y: Option<f64>,
}

impl SamplerArgs {
    fn apply(&self, c: &mut SamplerConfig) {
        macro_rules! set {
            ($($f:ident => $t:expr),*) => {$(if let Some(v) = self.$f { $t = v; })*};
        }
        set!(k_trees => c.k_trees, k_miss_trees => c.k_miss_trees, burn_in => c.burn_in, draws => c.n_draws,
             thin => c.thin, forest_thin => c.forest_thin, chains => c.chains, seed => c.seed,
             nu => c.priors.nu, rho_tau => c.priors.rho_tau, rho_mu => c.priors.rho_mu);
        if self.sigma_y.is_some() {
            c.sigma_y = self.sigma_y;
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Where to write the chain (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Directory for imputation, importance and interaction tables.
    #[arg(long)]
    export_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RecipeArgs {
    /// Name of a bundled fixture.
    #[arg(long, conflicts_with = "recipe")]
    fixture: Option<String>,
    /// Recipe file (TOML).
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Replicate seed; defaults to the recipe seed.
    #[arg(long)]
    sim_seed: Option<u64>,
    /// Override the recipe's row count.
    #[arg(long)]
    n: Option<usize>,
}

impl RecipeArgs {
    fn recipe(&self) -> Result<SimRecipe> {
        let mut r = match (&self.fixture, &self.recipe) {
            (Some(name), _) => fixture(name)?,
            (None, Some(path)) => SimRecipe::from_toml(&read_text(path)?)?,
            (None, None) => {
                let names: Vec<&str> = FIXTURES.iter().map(|(n, _)| *n).collect();
                return Err(Error::Usage(format!("give --recipe or --fixture (one of {})", names.join(", "))));
            }
        };
        if let Some(n) = self.n {
            r.n = n;
        }
        r.validate()?;
        Ok(r)
    }

    fn seed(&self, r: &SimRecipe) -> u64 {
        self.sim_seed.unwrap_or(r.seed)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    recipe: RecipeArgs,
    /// Dataset as an analyst would see it, missing cells as NA.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Complete covariates and responses before any missingness.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Print the recipe with intercepts tuned to its target proportions.
    #[arg(long)]
    calibrate: bool,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    recipe: RecipeArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Sampler settings file (TOML, `[sampler]` table).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Models to compare: missbart1, missbart2, mvbart.
    #[arg(long, value_delimiter = ',', default_value = "missbart1,missbart2,mvbart")]
    models: Vec<String>,
    /// Defaults to the recipe's fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Metric table output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Saved chain.
    #[arg(long)]
    chain: PathBuf,
    /// Tables to write: imputations, intervals, importance, interactions, pdp, detection.
    #[arg(long, value_delimiter = ',', required = true)]
    export: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Training data, needed for pdp and detection curves.
    #[command(flatten)]
    data: DataArgs,
    /// Predictor varied by the curves.
    #[arg(long)]
    var: Option<String>,
    /// Response the curves describe.
    #[arg(long)]
    response: Option<String>,
    #[arg(long, default_value_t = 20)]
    grid_points: usize,
    /// Rows sampled for ICE curves.
    #[arg(long, default_value_t = 50)]
    ice_rows: usize,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
}

fn run_config(args: &DataArgs) -> Result<RunConfig> {
    let mut rc = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if args.data.is_some() {
        rc.data = args.data.clone();
    }
    if !args.responses.is_empty() {
        rc.load.responses = args.responses.clone();
    }
    if args.covariates.is_some() {
        rc.load.covariates = args.covariates.clone();
    }
    if let Some(m) = &args.marker {
        rc.load.marker = m.clone();
    }
    if !args.log.is_empty() {
        rc.load.log = args.log.clone();
    }
    Ok(rc)
}

fn load_data(rc: &RunConfig) -> Result<Dataset> {
    let path = rc.data.as_ref().ok_or_else(|| Error::Usage("no data file given".into()))?;
    load_csv(path, &rc.load)
}

fn write_chain_tables(chain: &missbart::ChainOutput, dir: &Path, kinds: &[ExportKind]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for &k in kinds {
        export_chain(chain, k)?.save(&dir.join(format!("{}.csv", k.name())))?;
    }
    Ok(())
}

fn cmd_fit(model: ModelKind, args: &FitArgs) -> Result<()> {
    let mut rc = run_config(&args.data)?;
    args.sampler.apply(&mut rc.sampler);
    let data = load_data(&rc)?;
    let chain = fit(model, &data, &rc.sampler, None)?;
    save_chain(&args.out, &chain)?;
    eprintln!(
        "{}: {} draws from {} chain(s), {} imputed cells, {:.1}s",
        model.name(),
        chain.n_draws(),
        chain.n_chains,
        chain.missing_cells.len(),
        chain.wall_time_secs
    );
    if let Some(dir) = &args.export_dir {
        let mut kinds = vec![ExportKind::Imputations, ExportKind::Importance, ExportKind::Interactions];
        if model == ModelKind::MissBart1 {
            kinds.push(ExportKind::Intervals);
        }
        write_chain_tables(&chain, dir, &kinds)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let recipe = args.recipe.recipe()?;
    if args.calibrate {
        print!("{}", calibrate_intercepts(&recipe)?.to_toml()?);
        return Ok(());
    }
    let g = generate_with_seed(&recipe, args.recipe.seed(&recipe))?;
    let frac: Vec<String> = g.observed_fraction().iter().map(|f| format!("{:.4}", f)).collect();
    eprintln!("{}: n = {}, observed fraction per response [{}]", recipe.name, g.n(), frac.join(", "));
    if let Some(out) = &args.out {
        save_dataset_csv(&g.to_dataset()?, out)?;
    }
    if let Some(truth) = &args.truth {
        let complete = Dataset::new(
            missbart::tree::Design::from_columns((0..g.x.ncols()).map(|j| g.x.column(j).iter().copied().collect()).collect())?,
            g.y.clone(),
        )?;
        save_dataset_csv(&complete, truth)?;
    }
    Ok(())
}

fn parse_model(s: &str) -> Result<ModelKind> {
    match s {
        "missbart1" => Ok(ModelKind::MissBart1),
        "missbart2" => Ok(ModelKind::MissBart2),
        "mvbart" => Ok(ModelKind::MvBart),
        _ => Err(Error::Usage(format!("unknown model {s:?}"))),
    }
}

fn cmd_cv(args: &CvArgs) -> Result<()> {
    let recipe = args.recipe.recipe()?;
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?.sampler,
        None => SamplerConfig::default(),
    };
    args.sampler.apply(&mut cfg);
    cfg.validate()?;
    let models = args.models.iter().map(|m| parse_model(m)).collect::<Result<Vec<_>>>()?;
    let seed = args.recipe.seed(&recipe);
    let g = generate_with_seed(&recipe, seed)?;
    let results = run_cv(&g, &models, args.folds.unwrap_or(recipe.folds), &cfg, seed)?;
    let rows = metric_rows(&results)?;
    metrics_table(&rows).save(&args.out)?;
    for m in &models {
        let ss: f64 = rows
            .iter()
            .filter(|r| r.model == m.name() && r.split == "missing" && r.metric == "frobenius")
            .map(|r| r.value * r.value)
            .sum();
        eprintln!("{}: missing-cell Frobenius norm {:.4}", m.name(), ss.sqrt());
    }
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let chain = load_chain(&args.chain)?;
    chain.require_draws()?;
    let kinds = args.export.iter().map(|k| k.parse::<ExportKind>()).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&args.out_dir)?;
    for k in kinds {
        let path = args.out_dir.join(format!("{}.csv", k.name()));
        match k {
            ExportKind::Pdp | ExportKind::Detection => {
                let rc = run_config(&args.data)?;
                let data = load_data(&rc)?;
                let var_name = args.var.as_ref().ok_or_else(|| Error::Usage("curves need --var".into()))?;
                let detection = k == ExportKind::Detection;
                let names = if detection { chain.miss_predictor_names() } else { chain.x_names.clone() };
                let var = names
                    .iter()
                    .position(|n| n == var_name)
                    .ok_or_else(|| Error::Usage(format!("unknown predictor {var_name}")))?;
                let response = match &args.response {
                    Some(r) => chain
                        .y_names
                        .iter()
                        .position(|n| n == r)
                        .ok_or_else(|| Error::Usage(format!("unknown response {r}")))?,
                    None => 0,
                };
                let column: Vec<f64> = if var < data.q() {
                    data.x.column(var).to_vec()
                } else {
                    data.y.column(var - data.q()).iter().copied().collect()
                };
                let kind = if detection { CurveKind::DetectionPdp } else { CurveKind::Pdp };
                let grid = range_grid(&column, args.grid_points);
                // response predictors enter the missingness forest on the scaled axis
                let scaled_grid = if var >= data.q() {
                    grid.iter().map(|&v| chain.scaler.scale_value(var - data.q(), v)).collect()
                } else {
                    grid.clone()
                };
                let mut req = PdpRequest::new(var, scaled_grid, response, kind);
                req.ice_rows = args.ice_rows;
                let mut curves = pdp_ice(&chain, &data.x, &data.y, &req)?;
                curves.grid = grid;
                curve_table(&curves, detection).save(&path)?;
            }
            ExportKind::Metrics => return Err(Error::Usage("metrics come from the cv command".into())),
            _ => export_chain(&chain, k)?.save(&path)?,
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match &cli.command {
        Command::FitMissbart1(a) => cmd_fit(ModelKind::MissBart1, a),
        Command::FitMissbart2(a) => cmd_fit(ModelKind::MissBart2, a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
