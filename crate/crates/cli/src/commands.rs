use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use infrelax::bounds::{lower_bound, upper_bound, BoundEstimate, BoundsError, RunConfig};
use infrelax::dp::{solve_value_grid, DpError, ValueGridFile};
use infrelax::finite_mdp::{verify_duality, FiniteMdp, MdpError};
use infrelax::market::parameter_set;
use infrelax::penalties::{feasibility_check, PenaltyKind};

use crate::config::{self, to_pretty_json, BoundsConfig, FEASIBILITY_PAIRS, LOWER_PATHS, UPPER_PATHS};
use crate::error::CliError;
use crate::report;

/// Flags common to the bound commands; each overrides its config field.
#[derive(Debug, Clone, Default)]
pub struct BoundFlags {
    pub config: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub penalty: Option<PenaltyKind>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub runs: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundCommand {
    Lower,
    Upper,
    Feasibility,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    if workers == 0 {
        return Err(CliError::Input("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Input(format!("cannot start {workers} workers: {e}")))
}

pub fn gen_params(id: u8, out: Option<&Path>) -> Result<(), CliError> {
    let p = parameter_set(id).map_err(|e| CliError::Input(e.to_string()))?;
    write_output(out, &to_pretty_json(&p))
}

pub fn solve(
    config: Option<&Path>,
    gamma: Option<f64>,
    workers: usize,
    out: Option<&Path>,
    print_config: bool,
) -> Result<(), CliError> {
    let mut cfg = config::load_solve(config)?;
    if gamma.is_some() {
        cfg.gamma = gamma;
    }
    if print_config {
        return write_output(None, &to_pretty_json(&cfg));
    }
    let out = out.ok_or_else(|| CliError::Input("solve needs --out for the value grid file".into()))?;
    let p = cfg.model()?;
    let vg = pool(workers)?
        .install(|| solve_value_grid(&p, &cfg.grid, cfg.quadrature_points))
        .map_err(|e| match e {
            DpError::NodeFailure { .. } => CliError::Solve(e.to_string()),
            other => CliError::Input(other.to_string()),
        })?;
    let j0 = vg.interpolate_j(0, p.phi0);
    let file = ValueGridFile::new(p.clone(), cfg.grid, cfg.quadrature_points, vg);
    write_output(Some(out), &to_pretty_json(&file))?;
    println!("J_0({}) = {j0:.10}", p.phi0);
    Ok(())
}

pub fn load_grid(path: &Path) -> Result<ValueGridFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let file: ValueGridFile =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if file.params.content_hash() != file.params_hash {
        return Err(CliError::Consistency(format!(
            "{}: stored params_hash does not match the stored parameters",
            path.display()
        )));
    }
    file.check().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(file)
}

/// Config-side model settings must agree with the grid file.
fn cross_check(cfg: &BoundsConfig, grid: &ValueGridFile) -> Result<(), CliError> {
    let p = &grid.params;
    if let Some(params) = &cfg.params {
        if params.content_hash() != grid.params_hash {
            return Err(CliError::Consistency(format!(
                "config parameters (hash {}) differ from the grid file's (hash {})",
                params.content_hash(),
                grid.params_hash
            )));
        }
    }
    if let Some(id) = cfg.parameter_set {
        if p.published_id() != Some(id) {
            return Err(CliError::Consistency(format!("grid file was not solved for parameter set {id}")));
        }
    }
    if let Some(g) = cfg.gamma {
        if g != p.gamma {
            return Err(CliError::Consistency(format!("config gamma {g} differs from grid gamma {}", p.gamma)));
        }
    }
    Ok(())
}

fn effective_config(kind: BoundCommand, flags: &BoundFlags) -> Result<BoundsConfig, CliError> {
    let mut cfg = config::load_bounds(flags.config.as_deref())?;
    if let Some(k) = flags.penalty {
        cfg.penalty = k;
    }
    if flags.gamma.is_some() {
        cfg.gamma = flags.gamma;
    }
    if flags.seed.is_some() {
        cfg.seed = flags.seed;
    }
    if flags.paths.is_some() {
        cfg.paths_per_run = flags.paths;
    }
    if let Some(r) = flags.runs {
        cfg.runs = r;
    }
    if let Some(w) = flags.workers {
        cfg.workers = w;
    }
    if cfg.paths_per_run.is_none() {
        cfg.paths_per_run = Some(match kind {
            BoundCommand::Lower => LOWER_PATHS,
            BoundCommand::Upper => UPPER_PATHS,
            BoundCommand::Feasibility => FEASIBILITY_PAIRS,
        });
    }
    Ok(cfg)
}

fn bounds_error(e: BoundsError) -> CliError {
    match e {
        BoundsError::Config(msg) => CliError::Input(msg),
        other => CliError::Solve(other.to_string()),
    }
}

/// Append one CSV row, writing the header only into a new or empty file.
fn append_csv(path: Option<&Path>, est: &BoundEstimate) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Input(e.to_string());
    let mut buf = Vec::new();
    let fresh = path.is_none_or(|p| std::fs::metadata(p).map(|m| m.len() == 0).unwrap_or(true));
    {
        let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(&mut buf);
        writer
            .serialize(est.csv_row())
            .map_err(|e| CliError::Input(e.to_string()))?;
        writer.flush().map_err(io)?;
    }
    match path {
        Some(path) => OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(&buf).map_err(io),
    }
}

pub fn bounds(kind: BoundCommand, flags: &BoundFlags) -> Result<(), CliError> {
    let cfg = effective_config(kind, flags)?;
    if flags.print_config {
        return write_output(None, &to_pretty_json(&cfg));
    }
    let grid_path = flags
        .grid
        .as_deref()
        .ok_or_else(|| CliError::Input("--grid is required".into()))?;
    let grid = load_grid(grid_path)?;
    cross_check(&cfg, &grid)?;
    let seed = cfg
        .seed
        .ok_or_else(|| CliError::Input("--seed is required for bound commands".into()))?;
    let paths = cfg.paths_per_run.expect("defaulted above");
    let p = &grid.params;
    let vg = &grid.value_grid;

    if kind == BoundCommand::Feasibility {
        if paths < 100 {
            return Err(CliError::Input(format!("feasibility needs at least 100 pairs, got {paths}")));
        }
        let report = pool(cfg.workers)?
            .install(|| feasibility_check(cfg.penalty, p, vg, vg, paths, seed))
            .map_err(|e| CliError::Solve(e.to_string()))?;
        write_output(flags.out.as_deref(), &to_pretty_json(&report))?;
        if !report.pass {
            return Err(CliError::Consistency(format!(
                "penalty {} has mean {:.3e} beyond 3 standard errors ({:.3e})",
                report.penalty, report.mean, report.stderr
            )));
        }
        return Ok(());
    }

    let run = RunConfig {
        paths_per_run: paths,
        runs: cfg.runs,
        antithetic: cfg.antithetic,
        seed,
        penalty: cfg.penalty,
        workers: cfg.workers,
    };
    let est = match kind {
        BoundCommand::Lower => lower_bound(p, vg, &run),
        _ => upper_bound(p, vg, &run),
    }
    .map_err(bounds_error)?;
    append_csv(flags.out.as_deref(), &est)?;
    if let Some(json) = flags.json.as_deref() {
        write_output(Some(json), &to_pretty_json(&est))?;
    }
    eprintln!(
        "{} bound: {:.6} (stderr {:.6}), CE {:.6}, flagged {}/{}",
        est.kind.name(),
        est.mean,
        est.stderr,
        est.ce_mean,
        est.flagged_paths,
        est.total_paths
    );
    if !est.accepted() {
        return Err(CliError::Solve(format!(
            "{} of {} inner problems hit the Newton cap (limit: under 1%)",
            est.flagged_paths, est.total_paths
        )));
    }
    Ok(())
}

pub fn verify_finite(path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mdp = FiniteMdp::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    match verify_duality(&mdp) {
        Ok(report) => {
            let body = serde_json::json!({ "pass": true, "report": report });
            write_output(out, &to_pretty_json(&body))
        }
        Err(MdpError::Duality(violation)) => {
            let body = serde_json::json!({ "pass": false, "report": violation.report, "failures": violation.failures });
            write_output(out, &to_pretty_json(&body))?;
            Err(CliError::Consistency("duality checks failed".into()))
        }
        Err(e @ MdpError::SizeGuard { .. }) => Err(CliError::Guard(e.to_string())),
        Err(e) => Err(CliError::Input(e.to_string())),
    }
}

pub fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<(), CliError> {
    if paths.is_empty() {
        return Err(CliError::Input("report needs at least one CSV file".into()));
    }
    let rows = report::read_rows(paths)?;
    write_output(out, &report::format_table(&rows))
}
