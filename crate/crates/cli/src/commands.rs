//! `sim`, `skel` and `fetchq` subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use r3dla::fetchq::{capacity_sweep, harvest_distributions, Distribution};
use r3dla::recycle::RecycleMode;
use r3dla::skeleton::dynamic_fraction;

use crate::config::{build_skeletons, read_program, ExperimentConfig, Mode};
use crate::run::{engine_error, run, Report, Summary};
use crate::{emit, CliError};

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// `sim run`: one simulation, JSON report to `out`, the config's `output`,
/// or stdout.
pub fn sim_run(config: &Path, recycle: Option<RecycleMode>, out: Option<&Path>) -> Result<Report, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(r) = recycle {
        cfg.sim.features.recycle = r;
    }
    let report = run(&cfg)?;
    let dest = out.map(Path::to_path_buf).or(cfg.output.clone());
    emit(dest.as_deref(), &to_json(&report))?;
    Ok(report)
}

fn label(path: &Path, i: usize) -> String {
    let stem = path.file_stem().map_or_else(|| format!("config{i}"), |s| s.to_string_lossy().into_owned());
    format!("{i}:{stem}")
}

/// `sim compare`: metrics side by side, one column per config, with ratios
/// against the first.
pub fn sim_compare(configs: &[PathBuf], force: bool, out: Option<&Path>) -> Result<Vec<Report>, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    let cfgs = configs
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let programs = cfgs.iter().map(|c| c.program()).collect::<Result<Vec<_>, _>>()?;
    if !force {
        let first = programs[0].content_hash();
        if let Some(i) = programs.iter().position(|p| p.content_hash() != first) {
            return Err(CliError::Config(format!(
                "{} runs a different program than {}; pass --force to compare anyway",
                configs[i].display(),
                configs[0].display()
            )));
        }
    }
    let reports = cfgs
        .iter()
        .zip(&programs)
        .map(|(c, p)| crate::run::run_program(c, p))
        .collect::<Result<Vec<_>, _>>()?;
    let sums: Vec<Summary> = reports.iter().map(|r| Summary::of(&r.stats)).collect();
    let base = &sums[0];
    let ratio = |a: f64, b: f64| if b == 0.0 { f64::NAN } else { a / b };

    let mut header = vec!["metric".to_string()];
    header.extend(configs.iter().enumerate().map(|(i, p)| label(p, i)));
    let mut rows: Vec<Vec<String>> = Summary::HEADER
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut r = vec![name.to_string()];
            r.extend(sums.iter().map(|s| s.fields()[k].clone()));
            r
        })
        .collect();
    let derived: [(&str, fn(&Summary, &Summary) -> (f64, f64)); 3] = [
        ("speedup", |b, s| (b.cycles as f64, s.cycles as f64)),
        ("ipc_ratio", |b, s| (s.ipc, b.ipc)),
        ("traffic_ratio", |b, s| (s.traffic_lines as f64, b.traffic_lines as f64)),
    ];
    for (name, f) in derived {
        let mut r = vec![name.to_string()];
        r.extend(sums.iter().map(|s| {
            let (a, b) = f(base, s);
            format!("{:.6}", ratio(a, b))
        }));
        rows.push(r);
    }
    let mut r = vec!["config_hash".to_string()];
    r.extend(reports.iter().map(|x| x.config_hash.clone()));
    rows.push(r);
    emit(out, &csv_bytes(&header, &rows)?)?;
    Ok(reports)
}

const SEARCH_ROOTS: [&str; 5] = ["sim.core", "sim.dla", "sim.features", "sim.cache", ""];

/// Sets `param` in the JSON form of a config. Dotted names are taken as
/// paths from the root; bare names are looked up under `sim.core`,
/// `sim.dla`, `sim.features`, `sim.cache` and the top level, in that order.
pub fn set_param(cfg: &ExperimentConfig, param: &str, value: &str) -> Result<ExperimentConfig, CliError> {
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    let path: Vec<String> = if param.contains('.') {
        param.split('.').map(str::to_string).collect()
    } else {
        let found = SEARCH_ROOTS.iter().find(|r| {
            let mut v = &root;
            for k in r.split('.').filter(|k| !k.is_empty()) {
                match v.get(k) {
                    Some(x) => v = x,
                    None => return false,
                }
            }
            v.get(param).is_some()
        });
        let Some(r) = found else {
            return Err(CliError::Config(format!("--param: unknown parameter {param:?}")));
        };
        r.split('.')
            .filter(|k| !k.is_empty())
            .chain([param])
            .map(str::to_string)
            .collect()
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut v = &mut root;
    for k in parents {
        v = v
            .get_mut(k)
            .ok_or_else(|| CliError::Config(format!("--param: no field {k:?} in {param:?}")))?;
    }
    let obj = v
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("--param: {param:?} is not inside an object")))?;
    if !obj.contains_key(last) {
        return Err(CliError::Config(format!("--param: unknown parameter {param:?}")));
    }
    obj.insert(last.clone(), parsed);
    ExperimentConfig::from_json(&root.to_string()).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("--param {param}={value}: {m}")),
        other => other,
    })
}

/// `sim sweep`: one run per value of `param`.
pub fn sim_sweep(config: &Path, param: &str, values: &[String], out: Option<&Path>) -> Result<Vec<Report>, CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let cfgs = values
        .iter()
        .map(|v| set_param(&cfg, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let program = cfg.program()?;
    let reports = cfgs
        .iter()
        .map(|c| crate::run::run_program(c, &program))
        .collect::<Result<Vec<_>, _>>()?;
    let mut header = vec![param.to_string()];
    header.extend(Summary::HEADER.iter().map(|s| s.to_string()));
    header.push("config_hash".into());
    let rows: Vec<Vec<String>> = values
        .iter()
        .zip(&reports)
        .map(|(v, r)| {
            let mut row = vec![v.clone()];
            row.extend(Summary::of(&r.stats).fields());
            row.push(r.config_hash.clone());
            row
        })
        .collect();
    emit(out, &csv_bytes(&header, &rows)?)?;
    Ok(reports)
}

/// Features toggled by `sim ablate`.
pub const ABLATION_FEATURES: [&str; 4] = ["t1", "value_reuse", "fetch_buffer", "recycle"];

/// One row of the ablation table: speedup of a feature applied to the bare
/// look-ahead pair (`first`) and applied on top of all the others (`last`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature: String,
    pub first: f64,
    pub last: f64,
}

/// `sim ablate`: first/last contribution of each feature.
pub fn sim_ablate(config: &Path, out: Option<&Path>) -> Result<Vec<AblationRow>, CliError> {
    let cfg = ExperimentConfig::load(config)?;
    if cfg.mode != Mode::Dla {
        return Err(CliError::Config("ablate needs a look-ahead (mode = dla) config".into()));
    }
    let recycle_on = match &cfg.sim.features.recycle {
        RecycleMode::Off => RecycleMode::Dynamic,
        other => other.clone(),
    };
    let with = |on: &[bool; 4]| {
        let mut c = cfg.clone();
        let f = &mut c.sim.features;
        f.t1 = on[0];
        f.value_reuse = on[1];
        f.fetch_buffer = on[2];
        f.recycle = if on[3] { recycle_on.clone() } else { RecycleMode::Off };
        c
    };
    let program = cfg.program()?;
    let skeletons = cfg.skeletons(&program)?;
    let cycles = |on: [bool; 4]| -> Result<f64, CliError> {
        let c = with(&on);
        let opts = r3dla::engine::RunOptions {
            limit: c.limit,
            max_cycles: c.max_cycles,
            ..Default::default()
        };
        let out = r3dla::engine::simulate(&program, &c.sim, Some(&skeletons), &opts).map_err(engine_error)?;
        Ok(out.stats.cycles as f64)
    };
    let none = cycles([false; 4])?;
    let all = cycles([true; 4])?;
    let mut rows = Vec::new();
    for (i, name) in ABLATION_FEATURES.iter().enumerate() {
        let mut alone = [false; 4];
        alone[i] = true;
        let mut but = [true; 4];
        but[i] = false;
        rows.push(AblationRow {
            feature: name.to_string(),
            first: none / cycles(alone)?,
            last: cycles(but)? / all,
        });
    }
    let header: Vec<String> = ["feature", "first", "last"].iter().map(|s| s.to_string()).collect();
    let mut body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.feature.clone(), format!("{:.6}", r.first), format!("{:.6}", r.last)])
        .collect();
    body.push(vec!["all".into(), format!("{:.6}", none / all), format!("{:.6}", none / all)]);
    emit(out, &csv_bytes(&header, &body)?)?;
    Ok(rows)
}

/// Program source for `skel build`.
pub enum ProgramSource<'a> {
    Asm(&'a Path),
    Config(&'a Path),
}

/// `skel build`: profile, generate every version and write the skeleton
/// file. Returns the per-version dynamic fraction over the training run.
pub fn skel_build(source: ProgramSource<'_>, train_limit: u64, out: Option<&Path>) -> Result<Vec<f64>, CliError> {
    if train_limit == 0 {
        return Err(CliError::Config("--train-limit: must be positive".into()));
    }
    let (program, sim) = match source {
        ProgramSource::Asm(p) => (read_program(p)?, Default::default()),
        ProgramSource::Config(c) => {
            let cfg = ExperimentConfig::load(c)?;
            (cfg.program()?, cfg.sim)
        }
    };
    let set = build_skeletons(&program, train_limit, &sim)?;
    let mut json = set.to_json().into_bytes();
    json.push(b'\n');
    emit(out, &json)?;
    Ok(set
        .versions
        .iter()
        .map(|v| dynamic_fraction(&program, &v.bits, train_limit))
        .collect())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DistributionFile {
    Wrapped { probabilities: Vec<f64> },
    Plain(Vec<f64>),
}

/// Reads a distribution: a JSON array or `{"probabilities": [...]}`.
/// Entries that do not sum to one are taken as counts and normalized.
pub fn read_distribution(path: &Path) -> Result<Distribution<f64>, CliError> {
    let err = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let file: DistributionFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    let mut p = match file {
        DistributionFile::Wrapped { probabilities } | DistributionFile::Plain(probabilities) => probabilities,
    };
    let total: f64 = p.iter().sum();
    if total > 0.0 && (total - 1.0).abs() > 1e-9 {
        p.iter_mut().for_each(|x| *x /= total);
    }
    Distribution::new(p).map_err(|e| err(e.to_string()))
}

/// Parses `A:B` (inclusive) or a single capacity.
pub fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>, CliError> {
    let bad = || CliError::Config(format!("--capacity-sweep: expected N or A:B, got {s:?}"));
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// `fetchq analyze`: CSV of capacity, expected bubbles and steady state.
pub fn fetchq_analyze(demand: &Path, supply: &Path, capacities: &str, out: Option<&Path>) -> Result<(), CliError> {
    let d = read_distribution(demand)?;
    let s = read_distribution(supply)?;
    let sweep = capacity_sweep(&d, &s, parse_range(capacities)?).map_err(|e| CliError::Config(e.to_string()))?;
    let header: Vec<String> = ["capacity", "expected_bubbles", "steady_state"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = sweep
        .iter()
        .map(|p| {
            let q: Vec<String> = p.steady_state.iter().map(|x| format!("{x:.9}")).collect();
            vec![p.capacity.to_string(), format!("{:.9}", p.expected_bubbles), q.join(" ")]
        })
        .collect();
    emit(out, &csv_bytes(&header, &rows)?)
}

#[derive(Serialize)]
struct Harvest {
    demand: Distribution<f64>,
    supply: Distribution<f64>,
}

fn read_report(path: &Path) -> Result<Report, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// `fetchq harvest`: demand from `report`'s per-cycle demand histogram,
/// supply from `supply_report` (or the same report). Use an `ideal: fetch`
/// run for demand and an `ideal: backend` run for supply.
pub fn fetchq_harvest(
    report: &Path,
    supply_report: Option<&Path>,
    demand_out: Option<&Path>,
    supply_out: Option<&Path>,
) -> Result<(), CliError> {
    let dr = read_report(report)?;
    let sr = match supply_report {
        Some(p) => read_report(p)?,
        None => dr.clone(),
    };
    let (demand, supply) =
        harvest_distributions(&dr.stats, &sr.stats).map_err(|e| CliError::Config(e.to_string()))?;
    match (demand_out, supply_out) {
        (None, None) => emit(None, &to_json(&Harvest { demand, supply })),
        (d, s) => {
            if let Some(d) = d {
                emit(Some(d), &to_json(&demand))?;
            }
            if let Some(s) = s {
                emit(Some(s), &to_json(&supply))?;
            }
            Ok(())
        }
    }
}
