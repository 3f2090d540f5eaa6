//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use poswitch::bellman::{solve_finite, solve_infinite, Horizon, SolverConfig, ValueSurface};
use poswitch::bundled;
use poswitch::model::config::{content_hash, load_model, parse_model};
use poswitch::model::{Belief, SwitchingModel};
use poswitch::simkit::rules::{EveryArrival, Myopic, NeverSwitch, Scripted};
use poswitch::simkit::{
    evaluate_strategy, parse_path, run_controlled, run_strategy, write_path, PathHeader, SamplePath, Strategy,
    SwitchRecord, SystemPath,
};
use poswitch::strategy::{classify_regions, default_switch_tolerance, Controller};

use crate::manifest::{RecordedCommand, RunManifest, SolverRecord};
use crate::{checks, svg, Failure};

type Model = SwitchingModel<f64>;

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SolveArgs {
    /// Model file, or the name of a bundled model (onoff, fed, callcenter).
    pub config: String,
    /// Finite horizon T.
    #[arg(long, conflicts_with = "infinite", required_unless_present = "infinite")]
    pub horizon: Option<f64>,
    /// Discounted infinite-horizon problem.
    #[arg(long)]
    pub infinite: bool,
    /// Time step (defaults to T/400, or T_eff/400 for the infinite horizon).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Lattice resolution N.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Infinite-horizon stopping tolerance.
    #[arg(long)]
    pub fix_tol: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the SVG plots.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SimulateArgs {
    /// Model file, or the name of a bundled model.
    pub config: String,
    /// optimal, none, myopic, every-arrival or file.
    #[arg(long, default_value = "optimal")]
    pub strategy: String,
    /// Output directory of a previous solve (for the optimal strategy).
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Switch schedule, one `time policy` pair per line (for the file strategy).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Simulation horizon (defaults to the solved horizon, or 4).
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Initial belief, comma separated (defaults to uniform).
    #[arg(long)]
    pub pi0: Option<String>,
    /// Initial policy label (defaults to the first policy).
    #[arg(long)]
    pub a0: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of sample paths written to paths.txt.
    #[arg(long, default_value_t = 1)]
    pub keep: usize,
    /// Replay the arrivals of a path file (`ARRIVAL time mark` lines, marks
    /// zero-based) instead of simulating.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct CheckArgs {
    /// Model file, or the name of a bundled model.
    pub config: String,
    /// Directory for check_report.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Monte Carlo paths per statistical check.
    #[arg(long, default_value_t = 4000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn load_config(spec: &str) -> Result<Model, Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        return load_model(path).map_err(Failure::config);
    }
    let name = spec.strip_suffix(".cfg").unwrap_or(spec);
    match bundled::ALL.iter().find(|(n, _)| *n == name) {
        Some((_, src)) => parse_model(src).map_err(Failure::config),
        None => Err(Failure::config(anyhow!("no model file or bundled model named '{spec}'"))),
    }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::io)
}

fn io<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::io)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> anyhow::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(Failure::io)?;
    Ok(buf)
}

pub fn solve(args: &SolveArgs) -> Result<(), Failure> {
    let model = load_config(&args.config)?;
    let cfg = SolverConfig { dt: args.dt, resolution: args.grid, fix_tol: args.fix_tol, ..SolverConfig::default() };
    let surface = match (args.infinite, args.horizon) {
        (true, _) => solve_infinite(&model, &cfg),
        (false, Some(t)) => solve_finite(t, &model, &cfg),
        (false, None) => return Err(Failure::config(anyhow!("give --horizon or --infinite"))),
    }
    .map_err(Failure::solver)?;
    let table = classify_regions(&surface, default_switch_tolerance(&surface));

    create_dir(&args.out)?;
    let mut man = RunManifest::new(RecordedCommand::Solve(args.clone()), &args.config, content_hash(&model), &args.out);
    man.solver = Some(SolverRecord {
        horizon: args.horizon.filter(|_| !args.infinite),
        dt: surface.dt(),
        layers: surface.n_layers(),
        grid: surface.lattice().resolution(),
        fix_tol: args.infinite.then(|| cfg.fix_tol_for(&model).unwrap_or(f64::NAN)),
    });
    let values = to_bytes(|b| Ok(surface.write_csv(b)?))?;
    io(man.emit(&args.out, "values.csv", &values))?;
    let strategy = to_bytes(|b| Ok(table.write_regions_csv(b)?))?;
    io(man.emit(&args.out, "strategy.csv", &strategy))?;
    if model.n_states() == 2 {
        let bounds = to_bytes(|b| Ok(table.write_boundaries_csv(b)?))?;
        io(man.emit(&args.out, "boundaries.csv", &bounds))?;
    }
    if !args.no_plots {
        if let Some(s) = svg::regions(&table) {
            io(man.emit(&args.out, "regions.svg", s.as_bytes()))?;
        }
        if let Some(s) = svg::values(&surface) {
            io(man.emit(&args.out, "value.svg", s.as_bytes()))?;
        }
    }
    io(man.save(&args.out))?;
    println!(
        "solved {} ({} layers, dt {}, N {}); outputs in {}",
        args.config,
        surface.n_layers(),
        surface.dt(),
        surface.lattice().resolution(),
        args.out.display()
    );
    Ok(())
}

/// Loads a solve output directory and checks it belongs to `model`.
fn load_solution(dir: &Path, model: &Model) -> Result<Arc<ValueSurface<f64>>, Failure> {
    let man = RunManifest::load(dir).map_err(Failure::artifact)?;
    if man.model_hash != content_hash(model) {
        return Err(Failure::artifact(anyhow!(
            "solution in {} was computed for a different model (hash {} vs {})",
            dir.display(),
            man.model_hash,
            content_hash(model)
        )));
    }
    let rec = man.solver.ok_or_else(|| Failure::artifact(anyhow!("manifest has no solver record")))?;
    let file = dir.join("values.csv");
    let bytes = fs::read(&file).with_context(|| format!("reading {}", file.display())).map_err(Failure::artifact)?;
    if man.outputs.get("values.csv").map(String::as_str) != Some(crate::manifest::sha256_hex(&bytes).as_str()) {
        return Err(Failure::artifact(anyhow!("values.csv does not match its manifest hash")));
    }
    let horizon = rec.horizon.map_or(Horizon::Infinite, Horizon::Finite);
    let surface = ValueSurface::read_csv(Arc::new(model.clone()), rec.grid, rec.dt, horizon, bytes.as_slice())
        .map_err(Failure::artifact)?;
    Ok(Arc::new(surface))
}

fn parse_belief(text: Option<&str>, m: usize) -> Result<Belief<f64>, Failure> {
    let Some(text) = text else { return Ok(Belief::uniform(m)) };
    let v = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::config(anyhow!("bad --pi0 '{text}': {e}")))?;
    if v.len() != m {
        return Err(Failure::config(anyhow!("--pi0 has {} entries, the model has {m} states", v.len())));
    }
    Belief::new(v).map_err(Failure::config)
}

fn parse_schedule(path: &Path, model: &Model) -> Result<Scripted<f64>, Failure> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::config)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f = line.split_whitespace();
        let (Some(t), Some(p)) = (f.next(), f.next()) else {
            return Err(Failure::config(anyhow!("schedule line {}: expected `time policy`", n + 1)));
        };
        let t: f64 = t.parse().map_err(|_| Failure::config(anyhow!("schedule line {}: bad time", n + 1)))?;
        let a = model
            .policy_index(p)
            .ok_or_else(|| Failure::config(anyhow!("schedule line {}: unknown policy '{p}'", n + 1)))?;
        out.push((t, a));
    }
    Scripted::new(out).map_err(Failure::config)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let model = load_config(&args.config)?;
    let pi0 = parse_belief(args.pi0.as_deref(), model.n_states())?;
    let a0 = match &args.a0 {
        Some(label) => model.policy_index(label).ok_or_else(|| Failure::config(anyhow!("unknown policy '{label}'")))?,
        None => 0,
    };
    let solution = match (&args.solution, args.strategy.as_str()) {
        (Some(dir), _) => Some(load_solution(dir, &model)?),
        (None, "optimal") => {
            return Err(Failure::artifact(anyhow!("the optimal strategy needs --solution <solve output dir>")))
        }
        _ => None,
    };
    let horizon = match (args.horizon, solution.as_ref().map(|s| s.horizon())) {
        (Some(h), _) => h,
        (None, Some(Horizon::Finite(h))) => h,
        _ => 4.0,
    };
    if !(horizon > 0.0) {
        return Err(Failure::config(anyhow!("horizon must be positive")));
    }
    let arc = Arc::new(model.clone());
    let strategy: Box<dyn Strategy<f64>> = match args.strategy.as_str() {
        "optimal" => Box::new(Controller::with_default_tolerance(solution.clone().expect("checked above"))),
        "none" => Box::new(NeverSwitch),
        "myopic" => {
            let h = solution.as_ref().map_or(horizon / 400.0, |s| s.dt());
            Box::new(Myopic::new(arc.clone(), h))
        }
        "every-arrival" => Box::new(EveryArrival { n_policies: model.n_policies() }),
        "file" => {
            let path =
                args.schedule.as_ref().ok_or_else(|| Failure::config(anyhow!("--strategy file needs --schedule")))?;
            Box::new(parse_schedule(path, &model)?)
        }
        other => return Err(Failure::config(anyhow!("unknown strategy '{other}'"))),
    };

    create_dir(&args.out)?;
    let hash = content_hash(&model);
    let mut man = RunManifest::new(RecordedCommand::Simulate(args.clone()), &args.config, hash.clone(), &args.out);
    man.seed = Some(args.seed);

    if let Some(replay) = &args.replay {
        let text = fs::read_to_string(replay)
            .with_context(|| format!("reading {}", replay.display()))
            .map_err(Failure::config)?;
        let (_, recorded) = parse_path::<f64>(&text).map_err(Failure::config)?;
        let last = recorded.system.arrivals.last().map_or(0.0, |a| a.time);
        let horizon = match (args.horizon, recorded.system.horizon) {
            (Some(h), _) => h,
            (None, h) if h > 0.0 => h,
            _ => horizon.max(last),
        };
        let run = run_controlled(&model, &*strategy, &pi0, a0, horizon, &recorded.system.arrivals, None)
            .map_err(Failure::solver)?;
        let path = SamplePath {
            seed: args.seed,
            index: 0,
            initial_policy: a0,
            system: SystemPath { chain: vec![], arrivals: recorded.system.arrivals.clone(), horizon },
            beliefs: run.beliefs,
            switches: run.switches.clone(),
            payoff: 0.0,
        };
        let header = PathHeader { seed: args.seed, index: 0, model_hash: hash };
        io(man.emit(&args.out, "replay.txt", write_path(&header, &path).as_bytes()))?;
        io(man.save(&args.out))?;
        print_switches(&run.switches, &recorded.system.arrivals.iter().map(|a| a.time).collect::<Vec<_>>(), &model);
        return Ok(());
    }

    let est =
        evaluate_strategy(&model, &*strategy, &pi0, a0, horizon, args.paths, args.seed).map_err(Failure::solver)?;
    let value = solution.as_ref().map(|s| s.value(horizon, &pi0, a0));
    let mut csv = String::from("strategy,mean,std_error,count,seed,value\n");
    csv.push_str(&format!(
        "{},{},{},{},{},{}\n",
        strategy.name(),
        est.mean,
        est.std_error,
        est.count,
        est.seed,
        value.map_or(String::new(), |v| v.to_string())
    ));
    io(man.emit(&args.out, "mc_estimate.csv", csv.as_bytes()))?;
    let mut paths = String::new();
    for i in 0..args.keep.min(args.paths) as u64 {
        let p = run_strategy(&model, &*strategy, &pi0, a0, horizon, args.seed, i).map_err(Failure::solver)?;
        paths.push_str(&write_path(&PathHeader { seed: args.seed, index: i, model_hash: hash.clone() }, &p));
    }
    io(man.emit(&args.out, "paths.txt", paths.as_bytes()))?;
    io(man.save(&args.out))?;

    println!(
        "{}: mean {:.6} +- {:.6} (s.e., {} paths, seed {})",
        strategy.name(),
        est.mean,
        est.std_error,
        est.count,
        est.seed
    );
    if let Some(u) = value {
        println!("solved value U = {u:.6}; difference {:.6} = {:.2} s.e.", est.mean - u, est.z_score(u));
    }
    Ok(())
}

fn print_switches(switches: &[SwitchRecord<f64>], arrivals: &[f64], model: &Model) {
    let labels = model.policies();
    println!("{} switches", switches.len());
    for s in switches {
        let kind = if s.at_arrival || arrivals.contains(&s.time) { "at arrival" } else { "between arrivals" };
        println!("  t = {:.4}: {} -> {} ({kind})", s.time, labels[s.from], labels[s.to]);
    }
}

pub fn check(args: &CheckArgs) -> Result<(), Failure> {
    let model = load_config(&args.config)?;
    let outcomes = checks::run_all(&model, args.paths, args.seed);
    let mut report = String::from("check,passed,detail\n");
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
        report.push_str(&format!("{},{},\"{}\"\n", o.name, o.passed, o.detail.replace('"', "'")));
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let mut man = RunManifest::new(RecordedCommand::Check(args.clone()), &args.config, content_hash(&model), dir);
        man.seed = Some(args.seed);
        io(man.emit(dir, "check_report.csv", report.as_bytes()))?;
        io(man.save(dir))?;
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(anyhow!("failed checks: {}", failed.join(", "))))
    }
}

pub fn rerun(manifest: &Path, out: Option<&Path>, verify: bool) -> Result<(), Failure> {
    let man = RunManifest::load(manifest).map_err(Failure::artifact)?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&man.out));
    match man.command.clone() {
        RecordedCommand::Solve(mut a) => {
            a.out = target.clone();
            solve(&a)?;
        }
        RecordedCommand::Simulate(mut a) => {
            a.out = target.clone();
            simulate(&a)?;
        }
        RecordedCommand::Check(mut a) => {
            a.out = Some(target.clone());
            check(&a)?;
        }
    }
    if verify {
        let fresh = RunManifest::load(&target).map_err(Failure::artifact)?;
        let mut bad = Vec::new();
        for (name, hash) in &man.outputs {
            if fresh.outputs.get(name) != Some(hash) {
                bad.push(name.clone());
            }
        }
        if !bad.is_empty() {
            return Err(Failure::artifact(anyhow!("outputs differ from the manifest: {}", bad.join(", "))));
        }
        println!("all {} outputs reproduced bit-identically", man.outputs.len());
    }
    Ok(())
}
