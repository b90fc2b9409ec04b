//! The `survey` command-line harness.
//!
//! Every verb writes plain CSV (or JSON for fitted models) so results can be
//! plotted with external tools.

pub mod io;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use survey_core::active::{offline_order, Criterion};
use survey_core::data::{load_dataset, load_schema, Holdout, ResponseMatrix, SplitSpec};
use survey_core::harness::{
    error_reduction_distribution, generate_order_data, generate_synthetic, kfold_per_question, loocv_per_question,
    pairwise_order_effects, position_effect_estimate, sample_complexity_curve, simulate_strategies, ModelKind,
    PairParity, SideInfo, SimulationConfig, SimulationReport, Strategy, SynthModel,
};
use survey_core::model_file::ModelFile;

#[derive(Debug, Parser)]
#[command(name = "survey", version, about = "Active question selection and imputation for short surveys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train question factors and priors and save them as a model file.
    Fit(FitArgs),
    /// Emit the offline active question ordering.
    Order(OrderArgs),
    /// Run question-selection strategies against a dataset and emit reports.
    Simulate(SimulateArgs),
    /// Estimate position and pairwise order effects from administered surveys.
    OrderEffects(OrderEffectsArgs),
    /// Generate synthetic responses with known factors.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Respondent-by-question CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema CSV with columns id,num_categories,kind[,text,source_column].
    #[arg(long)]
    pub schema: PathBuf,
    /// Read real-valued responses instead of integer categories.
    #[arg(long)]
    pub continuous: bool,
}

impl DataArgs {
    pub fn load(&self) -> Result<ResponseMatrix> {
        let schema = load_schema(&self.schema)?;
        if self.continuous {
            io::load_continuous(&self.data, &schema)
        } else {
            Ok(load_dataset(&self.data, &schema)?)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "gaussian")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Response precision of the Gaussian model, or `residual` to estimate it from the fit.
    #[arg(long, default_value = "1")]
    pub alpha: AlphaArg,
    /// Comma-separated SoftImpute penalties; defaults to a grid derived from the data.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn config(&self) -> SimulationConfig {
        let lambda_grid = self.lambda_grid.clone().map(|mut grid| {
            grid.sort_by(|a, b| b.total_cmp(a));
            grid.dedup();
            grid
        });
        let (alpha, alpha_from_residuals) = match self.alpha {
            AlphaArg::Fixed(a) => (a, false),
            AlphaArg::Residual => (1.0, true),
        };
        SimulationConfig { rank: self.rank, alpha, alpha_from_residuals, lambda_grid, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaArg {
    Fixed(f64),
    Residual,
}

impl std::str::FromStr for AlphaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("residual") {
            return Ok(Self::Residual);
        }
        match s.trim().parse::<f64>() {
            Ok(a) if a > 0.0 && a.is_finite() => Ok(Self::Fixed(a)),
            _ => Err(format!("alpha must be a positive number or \"residual\", got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Covariate question ids whose joint values define subgroup priors.
    #[arg(long, value_delimiter = ',')]
    pub subgroups: Vec<String>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    /// A model file written by `fit`.
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long, default_value = "A")]
    pub criterion: Criterion,
    /// Number of questions to order; defaults to all.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HoldoutArg {
    Sparse(f64),
    Loocv,
    KFold(usize),
}

impl std::str::FromStr for HoldoutArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        match (name.trim().to_ascii_lowercase().as_str(), arg) {
            ("sparse", None) => Ok(Self::Sparse(0.2)),
            ("sparse", Some(f)) => f.parse().map(Self::Sparse).map_err(|e| format!("sparse fraction: {e}")),
            ("loocv", None) => Ok(Self::Loocv),
            ("kfold", None) => Ok(Self::KFold(5)),
            ("kfold", Some(k)) => k.parse().map(Self::KFold).map_err(|e| format!("fold count: {e}")),
            _ => Err(format!("unknown holdout {s:?}; use sparse:F, loocv or kfold:K")),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated strategies: active, random, fixed, epsilon_greedy, adaptive.
    #[arg(long, value_delimiter = ',', default_value = "active,random")]
    pub strategy: Vec<String>,
    #[arg(long, default_value = "A")]
    pub criterion: Criterion,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub budget: usize,
    #[arg(long, default_value = "sparse:0.2")]
    pub holdout: HoldoutArg,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    /// Covariate ids defining subgroup priors.
    #[arg(long, value_delimiter = ',', conflicts_with = "free_covariates")]
    pub subgroups: Vec<String>,
    /// Covariate ids revealed before the first question.
    #[arg(long, value_delimiter = ',')]
    pub free_covariates: Vec<String>,
    /// Comma-separated ranks; each combination with `--alpha-sweep` is written to `r<rank>_alpha<alpha>/`.
    #[arg(long, value_delimiter = ',')]
    pub rank_sweep: Vec<usize>,
    /// Comma-separated response precisions to sweep.
    #[arg(long, value_delimiter = ',')]
    pub alpha_sweep: Vec<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OrderEffectsArgs {
    /// Long-format log with columns respondent,position,question_id,value,completed.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = survey_core::harness::order_effects::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = survey_core::harness::order_effects::DEFAULT_CV_FOLDS)]
    pub cv_folds: usize,
    /// Restrict pairs to current questions at all, odd or even positions.
    #[arg(long, default_value = "all")]
    pub parity: PairParity,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 30)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Noise standard deviation of the Gaussian model.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value = "gaussian")]
    pub model: ModelKind,
    /// Categories per question for ordered-logit data.
    #[arg(long, default_value_t = 5)]
    pub categories: u32,
    /// Emit an administered-survey log for `order-effects` instead of a matrix.
    #[arg(long)]
    pub order_log: bool,
    /// Start-to-end position drift in standard deviations (order logs).
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    /// Injected pair effect `question,previous,effect` with 1-based question numbers (order logs).
    #[arg(long = "pair", value_parser = parse_pair)]
    pub pairs: Vec<(usize, usize, f64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [q, p, e] = parts.as_slice() else {
        return Err(format!("expected question,previous,effect; got {s:?}"));
    };
    let idx = |x: &str| match x.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(format!("question numbers are 1-based integers; got {x:?}")),
    };
    Ok((idx(q)?, idx(p)?, e.parse().map_err(|err| format!("effect: {err}"))?))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit(&a),
        Command::Order(a) => order(&a),
        Command::Simulate(a) => simulate(&a),
        Command::OrderEffects(a) => order_effects(&a),
        Command::Synth(a) => synth(&a),
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let data = args.data.load()?;
    let model = ModelFile::fit(&data, args.model.model, &args.model.config(), args.model.seed, &args.subgroups)?;
    model.save(&args.out).with_context(|| format!("saving {}", args.out.display()))?;
    info!("fitted {} model on {} respondents x {} questions", args.model.model, data.nrows(), data.ncols());
    Ok(())
}

pub fn order(args: &OrderArgs) -> Result<()> {
    let model = ModelFile::load(&args.model_file)?;
    let Some(g) = &model.gaussian else {
        bail!("offline orders need a gaussian model; ordered-logit orders depend on the answers");
    };
    let steps = args.budget.unwrap_or(model.num_questions());
    let order = offline_order(&g.prior, g.factors.question_factors(), &g.noise, args.criterion, steps)?;
    let text = order.to_tsv(&model.questions);
    match &args.out {
        Some(path) => io::write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn split_spec(args: &SimulateArgs) -> SplitSpec {
    let holdout = match args.holdout {
        HoldoutArg::Sparse(fraction) => Holdout::Sparse { fraction },
        HoldoutArg::Loocv => Holdout::Loocv { question: 0 },
        HoldoutArg::KFold(folds) => Holdout::KFold { folds, fold: 0 },
    };
    SplitSpec { seed: args.model.seed, train_fraction: args.train_fraction, holdout }
}

fn strategies(args: &SimulateArgs, k: usize) -> Result<Vec<Strategy>> {
    let side = if !args.subgroups.is_empty() {
        SideInfo::SubgroupPriors(args.subgroups.clone())
    } else if !args.free_covariates.is_empty() {
        SideInfo::FreeCovariates(args.free_covariates.clone())
    } else {
        SideInfo::None
    };
    args.strategy
        .iter()
        .map(|name| {
            Ok(Strategy::parse(name, args.criterion, args.epsilon, args.model.seed, k)?.with_side_info(side.clone()))
        })
        .collect()
}

fn file_name(strategy: &str) -> String {
    strategy.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' }).collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let data = args.data.load()?;
    if args.rank_sweep.is_empty() && args.alpha_sweep.is_empty() {
        return simulate_one(args, &data, &args.model.config(), &args.out);
    }
    let base = args.model.config();
    let ranks = if args.rank_sweep.is_empty() { vec![base.rank] } else { args.rank_sweep.clone() };
    let alphas = if args.alpha_sweep.is_empty() { vec![base.alpha] } else { args.alpha_sweep.clone() };
    for &rank in &ranks {
        for &alpha in &alphas {
            if alpha <= 0.0 || !alpha.is_finite() {
                bail!("swept alpha must be positive, got {alpha}");
            }
            let config = SimulationConfig { rank, alpha, alpha_from_residuals: false, ..base.clone() };
            let out = args.out.join(format!("r{rank}_alpha{alpha}"));
            info!("sweep: rank {rank}, alpha {alpha} -> {}", out.display());
            simulate_one(args, &data, &config, &out)?;
        }
    }
    Ok(())
}

fn simulate_one(args: &SimulateArgs, data: &ResponseMatrix, config: &SimulationConfig, out: &Path) -> Result<()> {
    let strategies = strategies(args, data.ncols())?;
    let spec = split_spec(args);
    let model = args.model.model;
    match args.holdout {
        HoldoutArg::Sparse(_) => {
            let reports = simulate_strategies(data, &spec, &strategies, model, args.budget, config)?;
            write_reports(out, &reports, args.budget)
        }
        HoldoutArg::Loocv | HoldoutArg::KFold(_) => {
            let budgets: Vec<usize> = (1..=args.budget).collect();
            for s in &strategies {
                let table = match args.holdout {
                    HoldoutArg::KFold(folds) => kfold_per_question(data, &spec, folds, s, model, &budgets, config)?,
                    _ => loocv_per_question(data, &spec, s, model, &budgets, config)?,
                };
                io::write_file(&out.join(format!("questions_{}.csv", file_name(&s.name()))), &table.to_csv())?;
            }
            Ok(())
        }
    }
}

/// Writes `report.csv` for all strategies, per-strategy paths and error
/// reductions, and `complexity.csv` comparing each strategy with the first.
pub fn write_reports(out: &Path, reports: &[SimulationReport], budget: usize) -> Result<()> {
    let mut combined = String::new();
    for (i, r) in reports.iter().enumerate() {
        let csv = r.to_csv();
        combined.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |(_, rest)| rest) });
        let name = file_name(&r.metadata.strategy);
        io::write_file(&out.join(format!("paths_{name}.csv")), &r.paths_csv())?;
        let reduction = error_reduction_distribution(r, budget)?;
        io::write_file(&out.join(format!("reduction_{name}.csv")), &reduction.to_csv())?;
    }
    io::write_file(&out.join("report.csv"), &combined)?;
    let mut complexity = String::from("strategy_a,strategy_b,questions_b,questions_a\n");
    if let Some((first, rest)) = reports.split_first() {
        for other in rest {
            for (qb, qa) in sample_complexity_curve(first, other) {
                complexity
                    .push_str(&format!("{},{},{qb:.6},{qa:.6}\n", first.metadata.strategy, other.metadata.strategy));
            }
        }
    }
    io::write_file(&out.join("complexity.csv"), &complexity)
}

pub fn order_effects(args: &OrderEffectsArgs) -> Result<()> {
    let log = io::load_order_log(&args.log)?;
    let position = position_effect_estimate(&log, args.permutations, args.seed)?;
    io::write_file(&args.out.join("position.csv"), &position.to_csv())?;
    let pairwise = pairwise_order_effects(&log, args.cv_folds, args.parity, args.seed)?;
    io::write_file(&args.out.join("pairwise.csv"), &pairwise.to_csv())?;
    info!(
        "{} of {} questions flagged; {:.1}% of observed pairs nonzero",
        position.effects.iter().filter(|e| e.flagged).count(),
        position.effects.len(),
        100.0 * pairwise.nonzero_fraction()
    );
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    if args.order_log {
        let log = generate_order_data(args.n, args.k, args.drift, &args.pairs, args.seed)?;
        return io::write_file(&args.out.join("order_log.csv"), &io::order_log_csv(&log));
    }
    let model = match args.model {
        ModelKind::GaussianPmf => SynthModel::Gaussian,
        ModelKind::OrderedLogit => SynthModel::OrderedLogit { categories: args.categories },
    };
    let synth = generate_synthetic(args.n, args.k, args.rank, args.noise, args.seed, model)?;
    let ids: Vec<String> = synth.data.questions().iter().map(|q| q.id.clone()).collect();
    let users: Vec<String> = (0..args.n).map(|i| i.to_string()).collect();
    io::write_file(&args.out.join("data.csv"), &io::response_csv(&synth.data))?;
    io::write_file(&args.out.join("schema.csv"), &io::schema_csv(synth.data.questions()))?;
    io::write_file(&args.out.join("user_factors.csv"), &io::matrix_csv("respondent", &users, &synth.user_factors))?;
    io::write_file(
        &args.out.join("question_factors.csv"),
        &io::matrix_csv("question_id", &ids, &synth.question_factors),
    )?;
    if model == SynthModel::Gaussian {
        info!("gaussian data is real-valued; read it back with --continuous");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holdout_parsing() {
        assert_eq!("sparse:0.3".parse::<HoldoutArg>().unwrap(), HoldoutArg::Sparse(0.3));
        assert_eq!("sparse".parse::<HoldoutArg>().unwrap(), HoldoutArg::Sparse(0.2));
        assert_eq!("loocv".parse::<HoldoutArg>().unwrap(), HoldoutArg::Loocv);
        assert_eq!("kfold:5".parse::<HoldoutArg>().unwrap(), HoldoutArg::KFold(5));
        assert!("kfold:x".parse::<HoldoutArg>().is_err());
        assert!("bootstrap".parse::<HoldoutArg>().is_err());
    }

    #[test]
    fn alpha_parsing() {
        assert_eq!("4".parse::<AlphaArg>().unwrap(), AlphaArg::Fixed(4.0));
        assert_eq!("Residual".parse::<AlphaArg>().unwrap(), AlphaArg::Residual);
        assert!("0".parse::<AlphaArg>().is_err());
        assert!("-1".parse::<AlphaArg>().is_err());
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("2,1,0.2").unwrap(), (1, 0, 0.2));
        assert!(parse_pair("0,1,0.2").is_err());
        assert!(parse_pair("2,1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
