use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gdsg::config::RunConfig;
use gdsg::dataset::{build_dataset, load_manifest, load_records, DatasetManifest, DatasetRecord};
use gdsg::error::GdsgError;
use gdsg::eval::{evaluate, exceed_ratio, Method};
use gdsg::gnn::{init_params, GnnModel};
use gdsg::model::{generate_instance, GenConfig, OffloadInstance, Solution};
use gdsg::sampler::{predict_discriminative, sample_solutions};
use gdsg::solvers::{exact_solve, heuristic_best, DEFAULT_BUDGET};
use gdsg::suite::{benchmark_trio, train_trio, DeskSuite, TestSpec};
use gdsg::theory::{fig3_table, sample_lower_bound, write_fig3_csv, BoundInput, BoundSpace, Fig3Grid};
use gdsg::trainer::{train, write_metrics_csv, Example, TaskMode, ORTHO_THRESHOLDS};

#[derive(Parser)]
#[command(name = "gdsg", version, about = "Graph diffusion solution generation for computation offloading")]
struct Cli {
    /// TOML run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (1 = sequential and bit-reproducible).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, env = "GDSG_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset as JSON lines plus a manifest.
    GenData {
        /// Dataset name such as lq3s6u or gt3s8u.
        #[arg(long)]
        name: String,
        #[arg(long)]
        count: usize,
        /// Output file; defaults to <out-dir>/<name>.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Run the multi-restart flow heuristic.
    SolveHeu(SolveArgs),
    /// Run the exact enumeration solver.
    SolveExact {
        #[command(flatten)]
        target: SolveArgs,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u128,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Task::Multi)]
        task: Task,
        #[arg(long)]
        epochs: Option<usize>,
        /// Disable the padding mask in message passing.
        #[arg(long)]
        no_padding_mask: bool,
        /// Checkpoint path; defaults to <out-dir>/model.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample solutions for one dataset instance.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        chains: Option<usize>,
        /// Treat the checkpoint as a discriminative model.
        #[arg(long)]
        discriminative: bool,
    },
    /// Evaluate a method on a labeled dataset.
    Eval {
        #[arg(long, value_enum)]
        method: EvalMethod,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train and compare all methods on a fixed campaign.
    Bench {
        #[arg(long, value_enum, default_value_t = Suite::Desk)]
        suite: Suite,
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long)]
        test_count: Option<usize>,
    },
    /// Sample-count bounds.
    Theory {
        #[command(subcommand)]
        which: TheoryCmd,
    },
    /// Train while logging cosines between the two task gradients.
    GradProbe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Task::Multi)]
        task: Task,
        #[arg(long)]
        epochs: Option<usize>,
        /// Probe every this many steps.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// Solve every record of this dataset and compare with its labels.
    #[arg(long, conflicts_with_all = ["servers", "users"])]
    data: Option<PathBuf>,
    #[arg(long, requires = "users")]
    servers: Option<usize>,
    #[arg(long, requires = "servers")]
    users: Option<usize>,
    /// Seed of the single generated instance.
    #[arg(long, default_value_t = 0)]
    instance_seed: u64,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// Hit-expectation curves for discrete and continuous spaces.
    Fig3 {
        #[arg(long)]
        n_max: Option<u64>,
    },
    /// Lower bound on the number of samples.
    Bound {
        /// Discrete dimension; omit to use --probs.
        #[arg(long, conflicts_with = "probs")]
        dims: Option<u32>,
        /// Per-dimension hit probabilities for a continuous space.
        #[arg(long, value_delimiter = ',')]
        probs: Option<Vec<f64>>,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        p_eps: f64,
        #[arg(long)]
        a: f64,
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Multi,
    DiscreteOnly,
    ContinuousOnly,
    Discriminative,
}

impl From<Task> for TaskMode {
    fn from(t: Task) -> Self {
        match t {
            Task::Multi => TaskMode::Multi,
            Task::DiscreteOnly => TaskMode::DiscreteOnly,
            Task::ContinuousOnly => TaskMode::ContinuousOnly,
            Task::Discriminative => TaskMode::Discriminative,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMethod {
    Gdsg,
    Dignn,
    Heu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Desk,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = match err.downcast_ref::<GdsgError>() {
                Some(e) => (e.kind(), e.exit_code()),
                None => ("other", 1),
            };
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error: kind={kind} code={code} msg={msg}");
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match &cli.command {
        Command::Train { epochs: Some(e), .. } | Command::GradProbe { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::Sample { chains: Some(c), .. } => cfg.sample.chains = *c,
        _ => {}
    }
    if let Command::SolveHeu(SolveArgs { restarts: Some(r), .. })
    | Command::SolveExact { target: SolveArgs { restarts: Some(r), .. }, .. } = &cli.command
    {
        cfg.heuristic.restarts = *r;
    }
    let cfg = cfg.resolve()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let out = cli.out_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| GdsgError::io(out, e))?;
    cfg.write_snapshot(&out.join(format!("{}.config.toml", command_name(&cli.command))))?;

    match cli.command {
        Command::GenData { name, count, out: file, restarts } => {
            let mut manifest = DatasetManifest::from_name(&name, count, cfg.seed)?;
            if let Some(r) = restarts {
                manifest.heuristic_restarts = r;
            }
            let path = file.unwrap_or_else(|| out.join(format!("{name}.jsonl")));
            let summary = build_dataset(&manifest, &path)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::SolveHeu(target) => {
            solve(&target, out, "solve_heu", |inst| {
                let r = heuristic_best(inst, &cfg.heuristic)?;
                Ok((r.solution, r.cost))
            })?;
        }
        Command::SolveExact { target, budget } => {
            let rho = cfg.heuristic.offload_requires_rho;
            solve(&target, out, "solve_exact", |inst| {
                let r = exact_solve(inst, rho, budget)?;
                Ok((r.solution, r.cost))
            })?;
        }
        Command::Train { data, task, no_padding_mask, checkpoint, .. } => {
            let records = load_records(&data)?;
            let mut model_cfg = cfg.model.clone();
            model_cfg.padding_mask_enabled = !no_padding_mask;
            let train_cfg = gdsg::trainer::TrainConfig { task: task.into(), ..cfg.train.clone() };
            let outcome = train(init_params(&model_cfg, cfg.seed)?, &examples(&records), &train_cfg)?;
            let ckpt = checkpoint.unwrap_or_else(|| out.join("model.json"));
            outcome.model.save(&ckpt)?;
            write_metrics_csv(&out.join("metrics.csv"), &outcome.metrics)?;
            if !outcome.ortho.entries.is_empty() {
                outcome.ortho.write_csv(&out.join("ortho.csv"))?;
            }
            println!(
                "trained {} steps, best epoch {}, checkpoint {}",
                outcome.steps,
                outcome.best_epoch,
                ckpt.display()
            );
        }
        Command::Sample { model, data, index, discriminative, .. } => {
            let records = load_records(&data)?;
            let Some(rec) = records.get(index) else {
                bail!(GdsgError::Config(format!("index {index} out of range ({} records)", records.len())));
            };
            let model = GnnModel::load(&model)?;
            let (solution, cost) = if discriminative {
                let c = predict_discriminative(&model, &rec.instance, &cfg.sample)?;
                (c.solution, c.cost)
            } else {
                let s = sample_solutions(&model, &cfg.diffusion.build()?, &rec.instance, &cfg.sample)?;
                (s.best, s.best_cost)
            };
            let ratio = exceed_ratio(&rec.instance, &solution, rec.label_cost)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "index": index, "cost": cost, "label_cost": rec.label_cost,
                    "ratio": ratio, "solution": solution,
                }))?
            );
        }
        Command::Eval { method, model, data } => {
            let records = load_records(&data)?;
            let dataset = dataset_name(&data);
            let sched = cfg.diffusion.build()?;
            let loaded = match (method, &model) {
                (EvalMethod::Heu, _) => None,
                (_, Some(p)) => Some(GnnModel::load(p)?),
                (_, None) => bail!(GdsgError::Config("--model is required for this method".into())),
            };
            let (m, name) = match (method, &loaded) {
                (EvalMethod::Gdsg, Some(model)) => (
                    Method::Diffusion { model, schedule: &sched, sample: &cfg.sample },
                    "gdsg",
                ),
                (EvalMethod::Dignn, Some(model)) => (Method::Discriminative { model, sample: &cfg.sample }, "dignn"),
                _ => (Method::Heuristic(&cfg.heuristic), "heu"),
            };
            let report = evaluate(m, &records, name, &dataset)?;
            report.write_csv(&out.join(format!("eval_{name}_{dataset}.csv")))?;
            println!(
                "{name} on {dataset}: mean ratio {:.4}, p90 {:.4}, feasible before repair {:.3}, {:.2} ms/instance",
                report.mean_ratio(),
                report.p90_ratio(),
                report.feasibility_before_repair(),
                report.mean_millis()
            );
        }
        Command::Bench { suite: Suite::Desk, train_count, test_count } => {
            let mut suite = DeskSuite::default();
            if let Some(n) = train_count {
                suite.train_count = n;
            }
            if let Some(n) = test_count {
                suite.tests = suite.tests.into_iter().map(|t| TestSpec { count: n, ..t }).collect();
            }
            let data = suite.generate()?;
            let trio = train_trio(&data.train, &cfg)?;
            trio.gdsg.model.save(&out.join("gdsg.json"))?;
            trio.gdsg_mask_off.model.save(&out.join("gdsg_mask_off.json"))?;
            trio.dignn.model.save(&out.join("dignn.json"))?;
            let table = benchmark_trio(&trio, &suite.train_name, &data, &cfg)?;
            table.write_table_csv(&out.join("bench_table.csv"))?;
            table.write_heatmap_csv(&out.join("bench_heatmap.csv"))?;
            for row in &table.rows {
                println!("{:<14} {:<8} mean ratio {:.4}", row.method, row.test_set, row.mean_ratio);
            }
        }
        Command::Theory { which: TheoryCmd::Fig3 { n_max } } => {
            let mut grid = Fig3Grid::default();
            if let Some(n) = n_max {
                grid.n_max = n;
            }
            let rows = fig3_table(&grid)?;
            write_fig3_csv(&out.join("fig3.csv"), &rows)?;
            for r in rows.iter().filter(|r| r.n == 1) {
                println!("{:<10} N={:<3} first n reaching {}: {}", r.space, r.dims, grid.threshold, r.crossing_n);
            }
        }
        Command::Theory { which: TheoryCmd::Bound { dims, probs, epsilon, sigma2, p_eps, a, threshold } } => {
            let space = match (dims, probs) {
                (Some(dims), None) => BoundSpace::Discrete { dims },
                (None, Some(probs)) => BoundSpace::Continuous { probs },
                _ => bail!(GdsgError::Config("give exactly one of --dims and --probs".into())),
            };
            let report = sample_lower_bound(&BoundInput { space, epsilon, sigma2, p_eps, a, threshold })?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GradProbe { data, task, every, .. } => {
            let records = load_records(&data)?;
            let train_cfg = gdsg::trainer::TrainConfig {
                task: task.into(),
                probe_every: every,
                ..cfg.train.clone()
            };
            let outcome = train(init_params(&cfg.model, cfg.seed)?, &examples(&records), &train_cfg)?;
            outcome.ortho.write_csv(&out.join("ortho.csv"))?;
            let ortho = &outcome.ortho;
            println!("{} probes over {} blocks", ortho.entries.len(), ortho.blocks.len());
            for th in ORTHO_THRESHOLDS {
                println!("|cos| < {th}: {:.3}", ortho.proportion_below(th));
            }
            println!("undefined cosines: {}", ortho.undefined_count());
        }
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData { .. } => "gen-data",
        Command::SolveHeu(_) => "solve-heu",
        Command::SolveExact { .. } => "solve-exact",
        Command::Train { .. } => "train",
        Command::Sample { .. } => "sample",
        Command::Eval { .. } => "eval",
        Command::Bench { .. } => "bench",
        Command::Theory { .. } => "theory",
        Command::GradProbe { .. } => "grad-probe",
    }
}

fn examples(records: &[DatasetRecord]) -> Vec<Example<'_>> {
    records.iter().map(DatasetRecord::example).collect()
}

fn dataset_name(path: &Path) -> String {
    load_manifest(path)
        .map(|m| m.name)
        .unwrap_or_else(|_| path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned()))
}

fn solve(
    target: &SolveArgs,
    out: &Path,
    stem: &str,
    solver: impl Fn(&OffloadInstance) -> gdsg::error::Result<(Solution, f64)>,
) -> Result<()> {
    if let Some(data) = &target.data {
        let records = load_records(data)?;
        let path = out.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["index", "cost", "label_cost", "ratio"])?;
        let mut sum = 0.0;
        for (i, rec) in records.iter().enumerate() {
            let (sol, cost) = solver(&rec.instance)?;
            let ratio = exceed_ratio(&rec.instance, &sol, rec.label_cost)?;
            sum += ratio;
            w.write_record([i.to_string(), cost.to_string(), rec.label_cost.to_string(), ratio.to_string()])?;
        }
        w.flush()?;
        println!("{} instances, mean ratio to label {:.4}", records.len(), sum / records.len() as f64);
        return Ok(());
    }
    let (Some(k), Some(m)) = (target.servers, target.users) else {
        bail!(GdsgError::Config("give --data or both --servers and --users".into()));
    };
    let inst = generate_instance(&GenConfig::new(k, m), target.instance_seed)?;
    let (solution, cost) = solver(&inst)?;
    println!("{}", serde_json::to_string_pretty(&json!({ "cost": cost, "solution": solution }))?);
    Ok(())
}
