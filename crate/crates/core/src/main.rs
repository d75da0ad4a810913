use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use diffbid::agents::{collect_dataset, PacingAgent};
use diffbid::checkpoint::{load_bundle, load_denoiser, load_invdyn, save_bundle, save_denoiser, save_invdyn};
use diffbid::conditions::{ConditionLabeler, ConditionVector};
use diffbid::config::ExperimentConfig;
use diffbid::dataset::{dataset_load, dataset_save};
use diffbid::denoiser::train_denoiser;
use diffbid::eval::{assemble_bundle, dataset_arrays, evaluate, evaluate_pacing, evaluate_with, train_bundle, DiffBidPolicy, EvalResult, PolicyBundle};
use diffbid::export::{episodes_csv, export_curves, metrics_csv, write_text};
use diffbid::invdyn::{predict_action, train_invdyn};
use diffbid::oracle::hindsight_oracle;
use diffbid::sampler::generate_trajectory;
use diffbid::sim::{derive_seed, run_episode, EnvConfig, Environment, Policy};
use diffbid::types::{Trajectory, TrajectoryDataset, STATE_DIM, STATE_FEATURES};
use diffbid::{Error, Result};

#[derive(Parser)]
#[command(name = "diffbid", version, about = "Auto-bidding by conditional diffusion over budget trajectories")]
struct Cli {
    /// Experiment config (TOML). Omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the simulator seed and every training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Log pacing trajectories with exploration.
    Collect {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// TOML file holding only an [env] table's fields; overrides the config.
        #[arg(long)]
        env_config: Option<PathBuf>,
        #[arg(long, default_value = "dataset.jsonl")]
        out: PathBuf,
    },
    /// Train the denoiser on a logged dataset.
    TrainDiffusion {
        #[arg(long, default_value = "dataset.jsonl")]
        dataset: PathBuf,
        #[arg(long, default_value = "denoiser.ckpt")]
        out: PathBuf,
    },
    /// Train inverse dynamics; with --denoiser also writes a policy bundle.
    TrainInvdyn {
        #[arg(long, default_value = "dataset.jsonl")]
        dataset: PathBuf,
        #[arg(long, default_value = "invdyn.ckpt")]
        out: PathBuf,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long, default_value = "bundle.ckpt")]
        bundle_out: PathBuf,
    },
    /// Complete a partial trajectory and infer λ along it.
    Generate {
        #[command(flatten)]
        model: ModelArgs,
        /// Observed states, one row per period, header named after the state features.
        #[arg(long)]
        history_csv: Option<PathBuf>,
        /// `name=value` pairs, or `null` for the unconditional token.
        #[arg(long, value_delimiter = ',')]
        condition: Vec<String>,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, default_value = "generated.csv")]
        out_csv: PathBuf,
    },
    /// Paired-seed evaluation against pacing competitors.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        /// Evaluate the pacing behavior policy instead of a DiffBid bundle.
        #[arg(long)]
        pacing: bool,
        #[arg(long, value_delimiter = ',')]
        condition: Vec<String>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Hindsight oracle per evaluation seed and advertiser.
    Oracle {
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Repeat train+evaluate along one axis.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Reuse a logged dataset instead of collecting one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Per-period curves, budget bands and completion summary.
    Export {
        /// Export logged trajectories.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
        /// Export evaluation episodes of the pacing policy.
        #[arg(long)]
        pacing: bool,
        #[arg(long, value_delimiter = ',')]
        condition: Vec<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    DiffusionSteps,
    Seeds,
    Omega,
}

/// A policy either from a bundle file or from its parts.
#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    denoiser: Option<PathBuf>,
    #[arg(long)]
    invdyn: Option<PathBuf>,
    /// Dataset the parts were trained on (condition labels, feature stats).
    #[arg(long = "train-dataset")]
    train_dataset: Option<PathBuf>,
}

struct Ctx {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
}

impl Ctx {
    fn out(&self, name: &Path) -> PathBuf {
        if name.is_absolute() {
            name.to_path_buf()
        } else {
            self.out_dir.join(name)
        }
    }

    /// Inputs are looked up as given, then relative to the output directory.
    fn input(&self, name: &Path) -> PathBuf {
        if name.exists() {
            name.to_path_buf()
        } else {
            self.out_dir.join(name)
        }
    }

    fn dataset(&self, name: &Path) -> Result<TrajectoryDataset> {
        dataset_load(self.input(name))
    }

    fn bundle(&self, m: &ModelArgs) -> Result<PolicyBundle> {
        if let Some(p) = &m.checkpoint {
            return load_bundle(self.input(p));
        }
        let (Some(d), Some(i)) = (&m.denoiser, &m.invdyn) else {
            let default = self.input(Path::new("bundle.ckpt"));
            if default.exists() {
                return load_bundle(default);
            }
            return Err(Error::InvalidConfig("need --checkpoint, or --denoiser with --invdyn".into()));
        };
        let layout = self.cfg.conditions.layout()?;
        let ds = self.dataset(m.train_dataset.as_deref().unwrap_or(Path::new("dataset.jsonl")))?;
        let (den, schedule, _) = load_denoiser(self.input(d), Some(&layout))?;
        let inv = load_invdyn(self.input(i))?;
        assemble_bundle(&ds, &layout, &self.cfg.conditions.thresholds, den, schedule, inv, &self.cfg.sampler)
    }

    fn condition(&self, pairs: &[String]) -> Result<ConditionVector> {
        parse_condition(&self.cfg, pairs)
    }
}

fn parse_condition(cfg: &ExperimentConfig, pairs: &[String]) -> Result<ConditionVector> {
    if pairs.is_empty() {
        return cfg.conditions.target_vector();
    }
    if pairs.len() == 1 && pairs[0] == "null" {
        return cfg.conditions.vector(&BTreeMap::new());
    }
    let mut map = BTreeMap::new();
    for p in pairs {
        let (k, v) = p
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("condition `{p}` is not name=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("condition `{p}` has a non-numeric value")))?;
        map.insert(k.trim().to_string(), v);
    }
    cfg.conditions.vector(&map)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.env.seed = s;
        cfg.train.seed = s;
        cfg.invdyn_train.seed = s;
    }
    Ok(cfg)
}

fn read_history(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Malformed(e.to_string()))?.clone();
    let cols: Vec<usize> = STATE_FEATURES
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h.trim() == *f)
                .ok_or_else(|| Error::Malformed(format!("history CSV lacks a `{f}` column")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Malformed(e.to_string()))?;
        for &c in &cols {
            let v: f64 = rec
                .get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Malformed(format!("bad value in history row {}", rows.len() / STATE_DIM)))?;
            rows.push(v);
        }
    }
    Array2::from_shape_vec((rows.len() / STATE_DIM, STATE_DIM), rows).map_err(|e| Error::Malformed(e.to_string()))
}

fn write_eval(ctx: &Ctx, name: &str, res: &EvalResult) -> Result<()> {
    write_text(ctx.out(Path::new(&format!("{name}_metrics.csv"))), &metrics_csv(&res.rows))?;
    write_text(ctx.out(Path::new(&format!("{name}_episodes.csv"))), &episodes_csv(&res.episodes))?;
    for r in &res.rows {
        info!(
            "{name} budget {}: top-{} {:.2}, mean {:.2} ± {:.2}, oracle {:.2}, ratio {:.3}, failed {}",
            r.budget, ctx.cfg.eval.top_k, r.top_k_score, r.mean_score, r.std_score, r.oracle, r.oracle_ratio, r.failed_runs
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| Error::io(&cli.out_dir, e))?;
    let ctx = Ctx {
        cfg,
        out_dir: cli.out_dir.clone(),
    };
    let cfg = &ctx.cfg;
    match cli.command {
        Command::Collect { n, sigma, env_config, out } => {
            let mut env = cfg.env.clone();
            if let Some(p) = env_config {
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                env = toml::from_str::<EnvConfig>(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                if let Some(s) = cli.seed {
                    env.seed = s;
                }
            }
            env.validate()?;
            let n = n.unwrap_or(cfg.collect.n_trajectories);
            let sigma = sigma.unwrap_or(cfg.collect.explore_sigma);
            let ds = collect_dataset(&env, &cfg.agent, n, sigma)?;
            let path = ctx.out(&out);
            dataset_save(&ds, &path)?;
            info!("wrote {} trajectories to {}", ds.len(), path.display());
        }
        Command::TrainDiffusion { dataset, out } => {
            let ds = ctx.dataset(&dataset)?;
            let layout = cfg.conditions.layout()?;
            let labeler = ConditionLabeler::fit(&layout, &ds.trajectories, &cfg.conditions.thresholds)?;
            let conds: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| labeler.label(t)).collect::<Result<_>>()?;
            let (states, _) = dataset_arrays(&ds)?;
            let schedule = cfg.diffusion.schedule()?;
            let (params, report) = train_denoiser(&states, &conds, &schedule, &cfg.denoiser_config()?, &cfg.train)?;
            let path = ctx.out(&out);
            save_denoiser(&path, &params, &schedule, &layout)?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in report.epoch_loss.iter().enumerate() {
                let _ = writeln!(csv, "{e},{l}");
            }
            write_text(ctx.out(Path::new("denoiser_loss.csv")), &csv)?;
            info!("wrote denoiser ({} steps) to {}", report.steps, path.display());
        }
        Command::TrainInvdyn { dataset, out, denoiser, bundle_out } => {
            let ds = ctx.dataset(&dataset)?;
            let (states, actions) = dataset_arrays(&ds)?;
            let (params, report) = train_invdyn(&states, &actions, &cfg.invdyn, &cfg.invdyn_train)?;
            let path = ctx.out(&out);
            save_invdyn(&path, &params)?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in report.epoch_loss.iter().enumerate() {
                let _ = writeln!(csv, "{e},{l}");
            }
            write_text(ctx.out(Path::new("invdyn_loss.csv")), &csv)?;
            info!("wrote inverse dynamics to {}", path.display());
            if let Some(d) = denoiser {
                let layout = cfg.conditions.layout()?;
                let (den, schedule, _) = load_denoiser(ctx.input(&d), Some(&layout))?;
                let bundle = assemble_bundle(&ds, &layout, &cfg.conditions.thresholds, den, schedule, params, &cfg.sampler)?;
                let path = ctx.out(&bundle_out);
                save_bundle(&path, &bundle)?;
                info!("wrote policy bundle to {}", path.display());
            }
        }
        Command::Generate {
            model,
            history_csv,
            condition,
            omega,
            temperature,
            out_csv,
        } => {
            let cond = ctx.condition(&condition)?;
            let mut bundle = ctx.bundle(&model)?;
            if let Some(w) = omega {
                bundle.sampler.omega = w;
            }
            if let Some(t) = temperature {
                bundle.sampler.temperature = t;
            }
            let raw = match &history_csv {
                Some(p) => read_history(p)?,
                None => Array2::zeros((0, STATE_DIM)),
            };
            let hist = Array2::from_shape_fn(raw.dim(), |(i, d)| bundle.feature_stats.normalize_value(d, raw[[i, d]]));
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
            let y = cond.as_input();
            let plan = generate_trajectory(&bundle.denoiser, &bundle.schedule, hist.view(), bundle.horizon, y.as_deref(), &bundle.sampler, &mut rng)?;
            let states = bundle.feature_stats.denormalize_matrix(&plan);
            let dim = bundle.fallback_lambda.len();
            let mut csv = String::from("period,");
            csv.push_str(&STATE_FEATURES.join(","));
            for j in 0..dim {
                let _ = write!(csv, ",lambda_{j}");
            }
            csv.push('\n');
            let mut prev = bundle.fallback_lambda.clone();
            for t in 0..bundle.horizon {
                let _ = write!(csv, "{t}");
                for d in 0..STATE_DIM {
                    let _ = write!(csv, ",{}", states[[t, d]]);
                }
                if t + 1 < bundle.horizon {
                    let out = predict_action(&bundle.invdyn, plan.slice(ndarray::s![..=t, ..]), plan.row(t + 1))?;
                    prev = bundle.invdyn.compose(&out, &prev);
                    for l in &prev {
                        let _ = write!(csv, ",{l}");
                    }
                } else {
                    csv.push_str(&",".repeat(dim));
                }
                csv.push('\n');
            }
            let path = ctx.out(&out_csv);
            write_text(&path, &csv)?;
            info!("wrote generated trajectory to {}", path.display());
        }
        Command::Evaluate { model, pacing, condition, runs } => {
            let mut eval = cfg.eval.clone();
            if let Some(r) = runs {
                eval.n_runs = r;
                eval.top_k = eval.top_k.min(r);
            }
            if pacing {
                let res = evaluate_pacing(&cfg.env, &cfg.agent, &eval)?;
                write_eval(&ctx, "pacing", &res)?;
            } else {
                let bundle = ctx.bundle(&model)?;
                let cond = ctx.condition(&condition)?;
                let res = evaluate(&bundle, &cond, &cfg.env, &cfg.agent, &eval)?;
                write_eval(&ctx, "diffbid", &res)?;
            }
        }
        Command::Oracle { runs } => {
            let n_runs = runs.unwrap_or(cfg.eval.n_runs);
            let dim = cfg.env.bidding_mode.action_dim();
            let mut csv = String::from("seed,advertiser,oracle_value,oracle_cost,lambda_star\n");
            for run in 0..n_runs {
                let seed = cfg.eval.run_seed(run);
                for adv in 0..cfg.env.n_advertisers {
                    let mut env = Environment::new(EnvConfig { seed, ..cfg.env.clone() })?;
                    env.track_landscape(adv);
                    let mut pols: Vec<Box<dyn Policy>> = (0..cfg.env.n_advertisers)
                        .map(|_| Box::new(PacingAgent::new(cfg.agent.clone(), dim)) as Box<dyn Policy>)
                        .collect();
                    run_episode(&mut env, &mut pols)?;
                    let items: Vec<(f64, f64)> = env.landscape().iter().map(|l| (l.value, l.price)).collect();
                    let o = hindsight_oracle(&items, env.budgets()[adv]);
                    let _ = writeln!(csv, "{seed},{adv},{},{},{}", o.total_value, o.total_cost, o.lambda_star);
                }
            }
            let path = ctx.out(Path::new("oracle.csv"));
            write_text(&path, &csv)?;
            info!("wrote oracle table to {}", path.display());
        }
        Command::Sweep { axis, values, dataset, runs } => sweep(&ctx, axis, &values, dataset.as_deref(), runs)?,
        Command::Export {
            dataset,
            model,
            pacing,
            condition,
            runs,
            svg,
        } => {
            let trajs: Vec<Trajectory> = if let Some(d) = dataset {
                ctx.dataset(&d)?.trajectories
            } else {
                let mut eval = cfg.eval.clone();
                if let Some(r) = runs {
                    eval.n_runs = r;
                    eval.top_k = eval.top_k.min(r);
                }
                let dim = cfg.env.bidding_mode.action_dim();
                let res = if pacing {
                    evaluate_with(&cfg.env, &cfg.agent, &eval, true, |_, _| {
                        Ok(Box::new(PacingAgent::new(cfg.agent.clone(), dim)) as Box<dyn Policy>)
                    })?
                } else {
                    let bundle = ctx.bundle(&model)?;
                    let cond = ctx.condition(&condition)?;
                    let replan = eval.replan_every;
                    evaluate_with(&cfg.env, &cfg.agent, &eval, true, |budget, run| {
                        let seed = derive_seed(eval.run_seed(run), budget.to_bits());
                        Ok(Box::new(DiffBidPolicy::new(&bundle, &cond, replan, seed)?) as Box<dyn Policy>)
                    })?
                };
                write_eval(&ctx, if pacing { "pacing" } else { "diffbid" }, &res)?;
                res.episodes.into_iter().filter_map(|e| e.trajectory).collect()
            };
            export_curves(&trajs, &ctx.out_dir, svg)?;
            info!("exported {} trajectories to {}", trajs.len(), ctx.out_dir.display());
        }
    }
    Ok(())
}

fn sweep(ctx: &Ctx, axis: SweepAxis, values: &[f64], dataset: Option<&Path>, runs: Option<usize>) -> Result<()> {
    let base = &ctx.cfg;
    let mut eval = base.eval.clone();
    if let Some(r) = runs {
        eval.n_runs = r;
        eval.top_k = eval.top_k.min(r);
    }
    let ds = match dataset {
        Some(p) => ctx.dataset(p)?,
        None => collect_dataset(&base.env, &base.agent, base.collect.n_trajectories, base.collect.explore_sigma)?,
    };
    let layout = base.conditions.layout()?;
    let cond = base.conditions.target_vector()?;
    let train = |cfg: &ExperimentConfig| {
        train_bundle(
            &ds,
            &layout,
            &cfg.conditions.thresholds,
            &cfg.diffusion,
            &cfg.denoiser_config()?,
            &cfg.train,
            &cfg.invdyn,
            &cfg.invdyn_train,
            &cfg.sampler,
        )
        .map(|(b, _)| b)
    };
    // The omega axis changes only the sampler, so one trained bundle serves every value.
    let shared = match axis {
        SweepAxis::Omega => Some(train(base)?),
        _ => None,
    };

    let name = match axis {
        SweepAxis::DiffusionSteps => "diffusion_steps",
        SweepAxis::Seeds => "seed",
        SweepAxis::Omega => "omega",
    };
    let mut csv = String::from("axis,value,budget,top_k_score,mean_score,std_score,oracle,oracle_ratio,failed_runs,status\n");
    let mut by_budget: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &v in values {
        let outcome = (|| -> Result<EvalResult> {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::DiffusionSteps => {
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!("diffusion steps must be a positive integer, got {v}")));
                    }
                    cfg.diffusion.steps = v as usize;
                }
                SweepAxis::Seeds => {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!("seed must be a non-negative integer, got {v}")));
                    }
                    cfg.train.seed = v as u64;
                    cfg.invdyn_train.seed = v as u64;
                }
                SweepAxis::Omega => cfg.sampler.omega = v,
            }
            let bundle = match &shared {
                Some(b) => PolicyBundle {
                    sampler: cfg.sampler.clone(),
                    ..b.clone()
                },
                None => train(&cfg)?,
            };
            evaluate(&bundle, &cond, &cfg.env, &cfg.agent, &eval)
        })();
        match outcome {
            Ok(res) => {
                for r in &res.rows {
                    let _ = writeln!(
                        csv,
                        "{name},{v},{},{},{},{},{},{},{},ok",
                        r.budget, r.top_k_score, r.mean_score, r.std_score, r.oracle, r.oracle_ratio, r.failed_runs
                    );
                    by_budget.entry(r.budget.to_bits()).or_default().push(r.top_k_score);
                }
            }
            Err(e) => {
                warn!("sweep {name}={v} failed: {e}");
                let _ = writeln!(csv, "{name},{v},,,,,,,,failed: {}", e.to_string().replace(',', ";"));
            }
        }
    }
    write_text(ctx.out(Path::new("sweep.csv")), &csv)?;

    let mut summary = String::from("budget,runs,mean_top_k,var_top_k\n");
    for (b, s) in &by_budget {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = if s.len() > 1 { s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let _ = writeln!(summary, "{},{},{mean},{var}", f64::from_bits(*b), s.len());
    }
    write_text(ctx.out(Path::new("sweep_summary.csv")), &summary)?;
    info!("sweep over {} values written to {}", values.len(), ctx.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp_secs().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
