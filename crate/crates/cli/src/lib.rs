//! The `fluidnet` command: reads a TOML spec file, runs one analysis and
//! writes a JSON report plus CSV data into an output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use fluidnet::dynamics::{self, ControlSelector, Dynamics};
use fluidnet::fluidlimit::{self, CompareConfig, InitialState, Law, QueueingSpec};
use fluidnet::gfn::{self, AxiomCase, ExplicitFamily, PathFamily};
use fluidnet::lyapunov::{self, DriftSampling, SearchBudget};
use fluidnet::model::{norm_l1, NetworkSpec};
use fluidnet::rng;
use fluidnet::skorokhod;
use fluidnet::specfile::SpecFile;
use fluidnet::stability::{self, VerdictStatus};
use fluidnet::{DynamicsError, FluidLimitError, GfnError, LyapunovError, SkorokhodError, SpecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Stability,
    Lyapunov,
    Skorokhod,
    Fluidlimit,
    GfnCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Stability => "stability",
            Command::Lyapunov => "lyapunov",
            Command::Skorokhod => "skorokhod",
            Command::Fluidlimit => "fluidlimit",
            Command::GfnCheck => "gfn-check",
        }
    }

    fn default_horizon(&self) -> f64 {
        match self {
            Command::Simulate | Command::Stability => 50.0,
            Command::Lyapunov => 100.0,
            Command::Skorokhod => 10.0,
            Command::Fluidlimit => 3.0,
            Command::GfnCheck => 20.0,
        }
    }

    fn default_step(&self) -> f64 {
        match self {
            Command::Skorokhod => 0.01,
            _ => 0.05,
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "fluidnet", version, about = "Fluid network analysis")]
pub struct Args {
    /// Spec file (TOML).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub command: Command,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = rng::DEFAULT_SEED)]
    pub seed: u64,
    /// Integration step `h`.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Random starts (stability, lyapunov, gfn-check) or seeds (fluidlimit).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Lookahead depth of the value search.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub multistarts: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Skorokhod(#[from] SkorokhodError),
    #[error(transparent)]
    FluidLimit(#[from] FluidLimitError),
    #[error(transparent)]
    Gfn(#[from] GfnError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Every numeric parameter after flags, the spec file and defaults have
/// been merged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: Command,
    pub seed: u64,
    pub step: f64,
    pub horizon: f64,
    pub samples: usize,
    pub depth: usize,
    pub multistarts: usize,
}

impl Resolved {
    pub fn new(args: &Args, file: &SpecFile) -> Result<Self, CliError> {
        let run = file.run.as_ref();
        let defaults = SearchBudget::default();
        let step = args
            .step
            .or(run.and_then(|r| r.step))
            .unwrap_or(args.command.default_step());
        let horizon = args
            .horizon
            .or(run.and_then(|r| r.horizon))
            .or(file.fluidlimit.as_ref().and_then(|f| f.horizon).filter(|_| args.command == Command::Fluidlimit))
            .unwrap_or(args.command.default_horizon());
        let samples = args.samples.unwrap_or(match args.command {
            Command::Fluidlimit => file.fluidlimit.as_ref().and_then(|f| f.replications).unwrap_or(10),
            _ => 8,
        });
        let resolved = Resolved {
            command: args.command,
            seed: args.seed,
            step,
            horizon,
            samples,
            depth: args.depth.unwrap_or(defaults.depth),
            multistarts: args.multistarts.unwrap_or(defaults.multistarts),
        };
        if !(step > 0.0 && step.is_finite()) {
            return Err(CliError::Invalid(format!("step must be positive, got {step}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(CliError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(resolved)
    }

    fn budget(&self) -> SearchBudget {
        SearchBudget {
            horizon: self.horizon,
            step: self.step,
            depth: self.depth,
            multistarts: self.multistarts,
            seed: self.seed,
        }
    }
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success,
    Unstable,
}

impl Exit {
    pub fn code(&self) -> i32 {
        match self {
            Exit::Success => 0,
            Exit::Unstable => 2,
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub exit: Exit,
    pub written: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Write-temp-then-rename so readers never see a partial file.
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(contents).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    fn report(&mut self, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("reports are plain JSON values");
        text.push('\n');
        self.put("report.json", text.as_bytes())
    }
}

pub fn run(args: &Args) -> Result<Outcome, CliError> {
    let file = SpecFile::load(&args.input)?;
    let params = Resolved::new(args, &file)?;
    log::info!(
        "{}: seed={} step={} horizon={} samples={} depth={} multistarts={}",
        params.command.name(),
        params.seed,
        params.step,
        params.horizon,
        params.samples,
        params.depth,
        params.multistarts
    );
    let mut out = Artifacts::new(&args.out)?;
    let (exit, mut report) = match params.command {
        Command::Simulate => simulate(&file, &params, &mut out)?,
        Command::Stability => stability(&file, &params, &mut out)?,
        Command::Lyapunov => lyapunov(&file, &params, &mut out)?,
        Command::Skorokhod => skorokhod(&file, &params, &mut out)?,
        Command::Fluidlimit => fluid_limit(&file, &params, &mut out)?,
        Command::GfnCheck => gfn_check(&file, &params, &mut out)?,
    };
    report["command"] = json!(params.command.name());
    report["parameters"] = serde_json::to_value(&params).expect("parameters serialize");
    out.report(&report)?;
    Ok(Outcome {
        exit,
        written: out.written,
    })
}

fn network_summary(spec: &NetworkSpec) -> Value {
    json!({
        "classes": spec.num_classes(),
        "stations": spec.num_stations(),
        "traffic_intensity": spec.traffic_intensity().as_slice(),
        "lipschitz": spec.lipschitz_constant(),
    })
}

fn initial_state(file: &SpecFile, k: usize) -> Result<DVector<f64>, CliError> {
    match file.initial_state() {
        Some(x) if x.len() != k => Err(CliError::Invalid(format!("`initial` has {} entries, expected {k}", x.len()))),
        Some(x) if x.iter().any(|v| !(*v >= 0.0)) => Err(CliError::Invalid("`initial` must be nonnegative".into())),
        Some(x) => Ok(x),
        None => Ok(DVector::from_element(k, 1.0 / k as f64)),
    }
}

fn simulate(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let spec = file.require_network()?;
    let x0 = initial_state(file, spec.num_classes())?;
    let selector = file.selector()?.unwrap_or(ControlSelector::MinDrain);
    let traj = dynamics::simulate(&spec, &x0, &selector, p.horizon, p.step)?;
    out.put("trajectory.csv", traj.to_csv_string().as_bytes())?;
    let norms = traj.norms();
    let report = json!({
        "network": network_summary(&spec),
        "selector": selector.label(),
        "initial": x0.as_slice(),
        "drained_at": traj.drained_at,
        "final_state": traj.levels.last().map(|q| q.as_slice().to_vec()),
        "max_norm": norms.iter().copied().fold(0.0, f64::max),
        "flow_balance_residual": dynamics::flow_balance_residual(&spec, &traj)?,
        "complementarity_residual": dynamics::complementarity_residual(&spec, &traj)?,
        "stamps": traj.len(),
    });
    Ok((Exit::Success, report))
}

fn selectors(file: &SpecFile, seed: u64) -> Result<Vec<ControlSelector>, CliError> {
    Ok(match file.selector()? {
        Some(s) => vec![s],
        None => ControlSelector::ensemble(seed, 2),
    })
}

fn stability(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let spec = file.require_network()?;
    let sel = selectors(file, p.seed)?;
    let verdict = stability::draining_time(&spec, &sel, p.samples, p.horizon, p.step, p.seed)?;
    let certificate = lyapunov::linear_certificate_search(&spec);
    let mut exit = Exit::Success;
    let scale_checks = match verdict.status {
        VerdictStatus::Stable { .. } => Some(stability::scale_invariance_check(&verdict, &spec, &[0.5, 2.0])?),
        _ => None,
    };
    if let Some(w) = &verdict.witness {
        out.put("witness.csv", w.to_csv_string().as_bytes())?;
        exit = Exit::Unstable;
    }
    let report = json!({
        "network": network_summary(&spec),
        "verdict": verdict,
        "certificate": certificate,
        "scale_checks": scale_checks,
    });
    Ok((exit, report))
}

fn lyapunov(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let spec = file.require_network()?;
    let k = spec.num_classes();
    let plan = DriftSampling {
        seed: p.seed,
        ..Default::default()
    };
    let mut certificates = vec![lyapunov::linear_certificate_search(&spec)];
    if let Some(h) = file.piecewise_candidate() {
        certificates.push(lyapunov::piecewise_linear_check(&spec, &h, &plan)?);
    }
    if let Some(a) = file.quadratic_candidate()? {
        certificates.push(lyapunov::quadratic_check(&spec, &a, &plan)?);
    }

    let sel = selectors(file, p.seed)?;
    let verdict = stability::draining_time(&spec, &sel, p.samples, p.horizon, p.step, p.seed)?;
    let family = PathFamily::network(spec.clone(), sel, p.horizon, p.step);
    let budget = p.budget();
    let mut states = Vec::new();
    for (i, r) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        for x in stability::unit_sphere_starts(k, p.samples, rng::child_seed(p.seed, i as u64)) {
            states.push(x * r);
        }
    }
    let estimates: Vec<_> = states
        .iter()
        .map(|x| lyapunov::approximate_v(&family, x, &budget))
        .collect::<Result<_, _>>()?;

    let mut csv = String::new();
    let header: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    csv += &format!("{},V,status\n", header.join(","));
    for (x, e) in states.iter().zip(&estimates) {
        let cols: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        csv += &format!("{},{},{:?}\n", cols.join(","), e.value, e.status);
    }
    out.put("values.csv", csv.as_bytes())?;

    let sandwich = match verdict.tau() {
        Some(tau) => {
            let triple = lyapunov::comparison_functions(spec.lipschitz_constant(), tau)?;
            let pairs: Vec<(DVector<f64>, f64)> = states.iter().cloned().zip(estimates.iter().map(|e| e.value)).collect();
            Some(json!({ "tau": tau, "triple": triple, "report": lyapunov::check_sandwich(&pairs, &triple) }))
        }
        None => None,
    };
    let report = json!({
        "network": network_summary(&spec),
        "certificates": certificates,
        "verdict": verdict,
        "states": states.len(),
        "lower_bounds": estimates.iter().filter(|e| e.status != lyapunov::ValueStatus::Exact).count(),
        "sandwich": sandwich,
    });
    Ok((Exit::Success, report))
}

fn skorokhod(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let inst = file
        .lsp_instance()?
        .ok_or_else(|| CliError::Invalid("the spec file has no [skorokhod] section".into()))?;
    let sol = skorokhod::solve_lsp(&inst, p.horizon, p.step)?;
    out.put("lsp.csv", sol.to_csv_string().as_bytes())?;
    let report = json!({
        "dimension": inst.dim(),
        "completely_s": true,
        "control_bound": inst.control_bound(),
        "lipschitz_bound": skorokhod::lipschitz_bound(&inst),
        "observed_slope": sol.observed_slope(),
        "residual": sol.residual(&inst),
        "complementarity": sol.complementarity(),
        "min_level": sol.min_level(),
        "monotone": sol.is_monotone(),
        "final_state": sol.z.last().map(|z| z.as_slice().to_vec()),
    });
    Ok((Exit::Success, report))
}

fn fluid_limit(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let spec = file.require_network()?;
    let k = spec.num_classes();
    let section = file
        .fluidlimit
        .as_ref()
        .ok_or_else(|| CliError::Invalid("the spec file has no [fluidlimit] section".into()))?;
    let laws = |l: &Option<fluidnet::specfile::Laws>| -> Result<Vec<Law>, CliError> {
        match l {
            Some(l) => Ok(l.expand(k)?),
            None => Ok(vec![Law::Exponential; k]),
        }
    };
    let qspec = QueueingSpec::new(spec.clone(), laws(&section.interarrival)?, laws(&section.service)?)?;
    let direction = DVector::from_vec(section.direction.clone());
    if direction.len() != k {
        return Err(CliError::Invalid(format!("`direction` has {} entries, expected {k}", direction.len())));
    }
    let config = CompareConfig {
        r_list: section.scales.clone().unwrap_or_else(|| vec![10.0, 100.0, 1000.0]),
        horizon: p.horizon,
        seeds: (0..p.samples as u64).map(|i| rng::child_seed(p.seed, i)).collect(),
        step: p.step,
        selectors: ControlSelector::ensemble(p.seed, 8),
    };
    let table = fluidlimit::fluid_limit_compare(&qspec, &direction, &config)?;
    out.put("distance.csv", table.to_csv_string().as_bytes())?;

    // one raw sample path at the smallest scale
    let r0 = config.r_list.iter().copied().fold(f64::INFINITY, f64::min);
    let q: Vec<u64> = direction.iter().map(|x| (r0 * x).round() as u64).collect();
    let x = InitialState::fresh(&qspec, q, p.seed);
    let path = fluidlimit::simulate_queueing(&qspec, &x, r0 * p.horizon, p.seed)?;
    let mut buf = Vec::new();
    path.write_csv(&mut buf).map_err(|source| CliError::Io {
        path: out.dir.join("sample_path.csv"),
        source,
    })?;
    out.put("sample_path.csv", &buf)?;
    let scaled = fluidlimit::scale_path(&path, r0, p.horizon)?;

    let r_max = config.r_list.iter().copied().fold(0.0, f64::max);
    let concat = fluidlimit::concatenation_evidence(&qspec, &direction, r_max, 0.5 * p.horizon, 0.5 * p.horizon, p.seed)?;
    let means: Vec<Value> = table
        .mean_by_scale()
        .into_iter()
        .map(|(r, d)| json!({ "r": r, "mean_max_dist": d }))
        .collect();
    let report = json!({
        "network": network_summary(&spec),
        "direction": direction.as_slice(),
        "scales": config.r_list,
        "seeds": config.seeds,
        "table": table,
        "mean_by_scale": means,
        "slope_q95_smallest_scale": fluidlimit::slope_quantile(&scaled, 0.95),
        "concatenation_evidence": { "r": r_max, "distance": concat },
    });
    Ok((Exit::Success, report))
}

fn gfn_check(file: &SpecFile, p: &Resolved, out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    if let Some(name) = file.gfn.as_ref().and_then(|g| g.family.as_deref()) {
        return explicit_check(ExplicitFamily::from_name(name)?, p, out);
    }
    let spec = file.require_network()?;
    let k = spec.num_classes();
    let dynamics = Dynamics::new(spec.clone());
    let l = spec.lipschitz_constant();
    let selectors = ControlSelector::ensemble(p.seed, 2);
    let mut rows = String::from("start,selector,operation,flow_balance,lipschitz,min_level\n");
    let (mut worst_balance, mut worst_lip, mut worst_level) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut checks = 0;
    for (i, x) in stability::unit_sphere_starts(k, p.samples, p.seed).iter().enumerate() {
        for s in &selectors {
            let traj = dynamics.simulate(x, s, p.horizon, p.step)?;
            let end = traj.horizon();
            let cases = [
                AxiomCase::Scale(0.5),
                AxiomCase::Scale(3.0),
                AxiomCase::Shift(0.37 * end),
                AxiomCase::Concatenate {
                    t_star: 0.5 * end,
                    selector: ControlSelector::MaxDrain,
                },
            ];
            for case in &cases {
                let o = gfn::check_axiom(&dynamics, &traj, case, p.horizon, p.step)?;
                worst_balance = worst_balance.max(o.flow_balance);
                worst_lip = worst_lip.max(o.lipschitz);
                worst_level = worst_level.min(o.min_level);
                checks += 1;
                rows += &format!(
                    "{i},{},{:?},{},{},{}\n",
                    s.label(),
                    case_label(case),
                    o.flow_balance,
                    o.lipschitz,
                    o.min_level
                );
            }
        }
    }
    out.put("axioms.csv", rows.as_bytes())?;
    let report = json!({
        "network": network_summary(&spec),
        "checks": checks,
        "lipschitz_bound": l,
        "worst_flow_balance": worst_balance,
        "worst_lipschitz": worst_lip,
        "worst_min_level": worst_level,
        "passed": worst_balance < 1e-7 && worst_lip <= l + 1e-9 && worst_level >= -1e-9,
    });
    Ok((Exit::Success, report))
}

fn case_label(case: &AxiomCase) -> String {
    match case {
        AxiomCase::Scale(r) => format!("scale:{r}"),
        AxiomCase::Shift(s) => format!("shift:{s}"),
        AxiomCase::Concatenate { t_star, selector } => format!("concatenate:{t_star}:{}", selector.label()),
    }
}

fn explicit_check(family: ExplicitFamily, p: &Resolved, _out: &mut Artifacts) -> Result<(Exit, Value), CliError> {
    let pf = PathFamily::explicit(family);
    let budget = p.budget();
    let v = |x: [f64; 2]| lyapunov::approximate_v(&pf, &DVector::from_row_slice(&x), &budget).map(|e| e.value);
    let report = match family {
        ExplicitFamily::LscCounterexample => {
            let v0 = v([1.0, 1.0])?;
            let mut sequence = Vec::new();
            for n in [1u32, 2, 5, 10, 100] {
                let d = 1.0 / n as f64;
                sequence.push(json!({ "n": n, "state": [1.0 + d, 1.0 - d], "value": v([1.0 + d, 1.0 - d])? }));
            }
            json!({ "family": family.name(), "value_at_diagonal": v0, "sequence": sequence })
        }
        ExplicitFamily::ConcatCounterexample => {
            let starts: Vec<DVector<f64>> = [[1.0, 1.0], [2.0, 1.0], [0.5, 1.5]]
                .iter()
                .map(|x| DVector::from_row_slice(x))
                .collect();
            let search = gfn::concatenation_search(family, &starts, &[0.25, 0.5, 0.75], 1e-9);
            let x = DVector::from_row_slice(&[1.0, 1.0]);
            json!({
                "family": family.name(),
                "concatenation": search,
                "value_at_unit": v([1.0, 1.0])?,
                "paths_from_unit": pf.paths_from(&x)?.len(),
                "initial_norm": norm_l1(&x),
            })
        }
    };
    Ok((Exit::Success, report))
}
