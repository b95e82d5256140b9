use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffgame_core::envs::lookup;
use diffgame_core::eval::{default_dqn_draws, RunRecord, TableRow};
use diffgame_core::grid::{oracle_problem, GridGreedyPolicy, MAX_GRID_DIM};
use diffgame_core::mesh::{default_isaacs_samples, isaacs_gap, MeshSpec};
use diffgame_core::qlearn::{train, write_log, TrainConfig, TrainedModel};
use diffgame_core::{
    evaluate_pair, solve, AdversaryMethod, Agent, DiscretizedGame, EvalOptions, EvalReport, Error, StateGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{config_hash, hash_text, to_toml};
use crate::error::CliError;

pub const OUTPUT_ENV: &str = "DIFFGAME_OUTPUT";
pub const MANIFEST: &str = "manifest.json";

/// `--out`, else `$DIFFGAME_OUTPUT`, else `./runs`.
pub fn output_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Record of one training run; everything in the run directory is listed here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub resolution: Resolution,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub state_dim: usize,
    pub u_mesh_size: usize,
    pub v_mesh_size: usize,
    pub num_steps: usize,
    pub network_sizes: Vec<usize>,
}

fn resolution(config: &TrainConfig, dg: &DiscretizedGame) -> Resolution {
    let mut sizes = vec![dg.state_dim() + 1];
    sizes.extend(&config.hidden);
    Resolution {
        state_dim: dg.state_dim(),
        u_mesh_size: dg.u_mesh().len(),
        v_mesh_size: dg.v_mesh().len(),
        num_steps: dg.num_steps(),
        network_sizes: sizes,
    }
}

pub fn run_dir(root: &Path, config: &TrainConfig) -> PathBuf {
    root.join(format!("{}-{}-{}", config.env, config.algorithm, config_hash(config)))
        .join(format!("seed-{}", config.seed))
}

/// Trains one run per seed and returns the run directories.
pub fn cmd_train(base: &TrainConfig, seeds: &[u64], root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let configs: Vec<TrainConfig> = seeds
        .iter()
        .map(|&seed| TrainConfig { seed, ..base.clone() })
        .collect();
    configs
        .par_iter()
        .map(|config| {
            let dir = run_dir(root, config);
            create_dir(&dir)?;
            let dg = config.discretize()?;
            let start = Instant::now();
            let outcome = train(config)?;
            let secs = start.elapsed().as_secs_f64();
            fs::write(dir.join("config.toml"), to_toml(config))?;
            outcome.model.save(&dir.join("model.json"))?;
            write_log(&outcome.log, std::io::BufWriter::new(fs::File::create(dir.join("log.jsonl"))?))?;
            let manifest = RunManifest {
                tool: "diffgame".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: "train".into(),
                config_hash: config_hash(config),
                seed: config.seed,
                config: config.clone(),
                resolution: resolution(config, &dg),
                artifacts: vec!["config.toml".into(), "model.json".into(), "log.jsonl".into()],
                wall_clock_secs: secs,
            };
            write_json(&dir.join(MANIFEST), &manifest)?;
            Ok(dir)
        })
        .collect()
}

pub struct SolveArgs {
    pub env: String,
    pub dt: Option<f64>,
    pub nodes: Option<Vec<usize>>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
}

/// Solves the upper and lower recursions, exports both grids and a summary.
pub fn cmd_solve(args: &SolveArgs, root: &Path) -> Result<(PathBuf, serde_json::Value), CliError> {
    let entry = lookup(&args.env)?;
    let dim = entry.game().state_dim();
    if dim > MAX_GRID_DIM {
        return Err(Error::UnsupportedDimension(dim).into());
    }
    let mut grid = match StateGrid::for_env(entry) {
        Ok(g) => Some(g),
        Err(Error::InvalidGrid(_)) => None,
        Err(e) => return Err(e.into()),
    };
    if args.lo.is_some() || args.hi.is_some() || args.nodes.is_some() {
        let lo = args.lo.clone().or_else(|| grid.as_ref().map(|g| g.lo().to_vec()));
        let hi = args.hi.clone().or_else(|| grid.as_ref().map(|g| g.hi().to_vec()));
        let nodes = args.nodes.clone().or_else(|| grid.as_ref().map(|g| g.nodes().to_vec()));
        match (lo, hi, nodes) {
            (Some(lo), Some(hi), Some(nodes)) => grid = Some(StateGrid::new(lo, hi, nodes)?),
            _ => return Err(CliError::Usage(format!("{} has no default grid; pass --lo, --hi and --nodes", entry.name))),
        }
    }
    let grid = grid.ok_or_else(|| CliError::Usage(format!("{} has no default grid; pass --lo, --hi and --nodes", entry.name)))?;
    if grid.dim() != dim {
        return Err(CliError::Usage(format!("grid has dimension {}, {} has state dimension {dim}", grid.dim(), entry.name)));
    }
    let dt = args.dt.or(entry.oracle.map(|o| o.dt)).unwrap_or(entry.dt);
    let dg = entry.discretize(dt)?;
    let start = Instant::now();
    let sol = solve(&dg, &grid)?;
    let secs = start.elapsed().as_secs_f64();
    let (up, lo) = (sol.upper_at_start(&dg), sol.lower_at_start(&dg));
    let max_gaps: Vec<f64> = (0..sol.upper.num_times()).map(|i| sol.max_gap(i)).collect();
    let summary = json!({
        "env": entry.name,
        "dt": dt,
        "grid": { "lo": grid.lo(), "hi": grid.hi(), "nodes": grid.nodes() },
        "initial_state": dg.game().initial_state(),
        "upper_at_x0": up,
        "lower_at_x0": lo,
        "gap_at_x0": up - lo,
        "mean_tube_gap": sol.mean_tube_gap(),
        "max_gap_per_time": max_gaps,
        "clamped_successors": sol.clamps.total,
        "clamped_successors_in_tube": sol.clamps.relevant,
        "wall_clock_secs": secs,
    });
    let tag = hash_text(&format!("{dt}|{:?}|{:?}|{:?}", grid.lo(), grid.hi(), grid.nodes()));
    let dir = root.join("solve").join(format!("{}-{tag}", entry.name));
    create_dir(&dir)?;
    sol.upper.write_binary(std::io::BufWriter::new(fs::File::create(dir.join("upper.dgvg"))?))?;
    sol.lower.write_binary(std::io::BufWriter::new(fs::File::create(dir.join("lower.dgvg"))?))?;
    let mut w = csv::Writer::from_path(dir.join("gaps.csv"))?;
    w.write_record(["time_index", "time", "max_gap"])?;
    for (i, g) in max_gaps.iter().enumerate() {
        w.write_record([i.to_string(), dg.partition().time(i).to_string(), g.to_string()])?;
    }
    w.flush()?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok((dir, summary))
}

pub enum PolicySource {
    Checkpoints(Vec<PathBuf>),
    GridGreedy { env: String },
}

pub struct EvaluateArgs {
    pub source: PolicySource,
    pub methods: Vec<AdversaryMethod>,
    pub dqn_draws: usize,
    pub dqn_steps: usize,
    pub random_sequences: usize,
    pub seed: u64,
}

fn model_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("model.json")
    } else {
        p.to_path_buf()
    }
}

fn options(args: &EvaluateArgs, env: &str, seed: u64) -> Result<EvalOptions, CliError> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("at least one --method is required".into()));
    }
    let grid = if args.methods.contains(&AdversaryMethod::GridBestResponse) {
        Some(StateGrid::for_env(lookup(env)?)?)
    } else {
        None
    };
    let dqn_draws = if args.methods.contains(&AdversaryMethod::DqnBestResponse) {
        default_dqn_draws(args.dqn_draws, args.dqn_steps, seed)
    } else {
        Vec::new()
    };
    Ok(EvalOptions {
        methods: args.methods.clone(),
        grid,
        dqn_draws,
        random_sequences: if args.methods.contains(&AdversaryMethod::RandomSearch) {
            args.random_sequences
        } else {
            0
        },
        seed,
    })
}

/// Evaluates every checkpoint (or the grid-greedy pair) and writes
/// `report.json`, `table.csv` and `series.csv`.
pub fn cmd_evaluate(args: &EvaluateArgs, root: &Path) -> Result<(PathBuf, EvalReport), CliError> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("at least one --method is required".into()));
    }
    let (algorithm, env, runs, inputs) = match &args.source {
        PolicySource::Checkpoints(paths) => {
            if paths.is_empty() {
                return Err(CliError::Usage("no checkpoints given".into()));
            }
            let mut models = Vec::new();
            for p in paths {
                let path = model_path(p);
                if !path.exists() {
                    return Err(CliError::Usage(format!("checkpoint {} does not exist", path.display())));
                }
                models.push(TrainedModel::load(&path)?);
            }
            let (alg, env) = (models[0].config.algorithm, models[0].config.env.clone());
            if models.iter().any(|m| m.config.algorithm != alg || m.config.env != env) {
                return Err(CliError::Usage("checkpoints mix algorithms or environments".into()));
            }
            let runs = models
                .iter()
                .map(|m| {
                    let dg = m.config.discretize()?;
                    let opts = options(args, &env, args.seed ^ m.config.seed)?;
                    let evaluation = evaluate_pair(&dg, &m.first, &m.second, &opts)?;
                    Ok(RunRecord { seed: m.config.seed, evaluation })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let inputs = models.iter().map(|m| to_toml(&m.config)).collect::<Vec<_>>().join("\n");
            (alg.name().to_string(), env, runs, inputs)
        }
        PolicySource::GridGreedy { env } => {
            let entry = lookup(env)?;
            let (dg, grid) = oracle_problem(entry)?;
            let sol = solve(&dg, &grid)?;
            let first = GridGreedyPolicy::new(&dg, &sol.upper, Agent::First)?;
            let second = GridGreedyPolicy::new(&dg, &sol.lower, Agent::Second)?;
            let opts = options(args, env, args.seed)?;
            let evaluation = evaluate_pair(&dg, &first, &second, &opts)?;
            (
                "grid_greedy".to_string(),
                entry.name.to_string(),
                vec![RunRecord { seed: 0, evaluation }],
                format!("grid_greedy {}", entry.name),
            )
        }
    };
    let report = EvalReport::from_runs(algorithm.clone(), env.clone(), runs)?;
    let methods: Vec<&str> = args.methods.iter().map(|m| m.name()).collect();
    let tag = hash_text(&format!(
        "{inputs}|{methods:?}|{}|{}|{}|{}",
        args.dqn_draws, args.dqn_steps, args.random_sequences, args.seed
    ));
    let dir = root.join("eval").join(format!("{env}-{algorithm}-{tag}"));
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    write_table(&dir.join("table.csv"), std::slice::from_ref(&report))?;
    write_series(&dir.join("series.csv"), std::slice::from_ref(&report))?;
    Ok((dir, report))
}

pub fn write_table(path: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r.table_row())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    algorithm: &'a str,
    game: &'a str,
    run: usize,
    seed: u64,
    v_u_approx: f64,
    v_v_approx: f64,
    exploitability: f64,
}

pub fn write_series(path: &Path, reports: &[EvalReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        for (k, run) in r.runs.iter().enumerate() {
            w.serialize(SeriesRow {
                algorithm: &r.algorithm,
                game: &r.game,
                run: k,
                seed: run.seed,
                v_u_approx: run.evaluation.v_u_approx,
                v_v_approx: run.evaluation.v_v_approx,
                exploitability: run.evaluation.exploitability,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub struct IsaacsArgs {
    pub env: String,
    pub u_mesh: Option<MeshSpec>,
    pub v_mesh: Option<MeshSpec>,
    pub samples: usize,
    pub seed: u64,
}

pub fn cmd_check_isaacs(args: &IsaacsArgs) -> Result<serde_json::Value, CliError> {
    let entry = lookup(&args.env)?;
    let game = entry.game();
    let u_spec = args.u_mesh.unwrap_or_else(|| entry.u_mesh_spec());
    let v_spec = args.v_mesh.unwrap_or_else(|| entry.v_mesh_spec());
    let u = u_spec.build_for(game.u_set())?;
    let v = v_spec.build_for(game.v_set())?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let samples = default_isaacs_samples(&game, args.samples, &mut rng);
    let gap = isaacs_gap(&game, &u, &v, &samples)?;
    let worst = &samples[gap.argmax];
    Ok(json!({
        "env": entry.name,
        "u_mesh": u_spec.to_string(),
        "v_mesh": v_spec.to_string(),
        "samples": samples.len(),
        "max_gap": gap.max_gap,
        "mean_gap": gap.gaps.iter().sum::<f64>() / gap.gaps.len() as f64,
        "argmax_sample": worst,
    }))
}

/// Collects `report.json` from each evaluation directory into one table and
/// one per-run series.
pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<Vec<TableRow>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Usage("no result directories given".into()));
    }
    let mut reports = Vec::new();
    for d in dirs {
        let path = d.join("report.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let r: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        reports.push(r);
    }
    if let Some(out) = out {
        create_dir(out)?;
        write_table(&out.join("table.csv"), &reports)?;
        write_series(&out.join("series.csv"), &reports)?;
    }
    Ok(reports.iter().map(EvalReport::table_row).collect())
}
