use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Deserialize;

use ledfit::experiment::{
    best_by_instance, config_names, improvement_report, instance_names, pairwise_wilcoxon, read_records, run_suite,
    summary_stats, weighted_ranking, write_records, Instance, RunRecord,
};
use ledfit::generator::{generate_dataset, read_manifest, write_dataset, DEFAULT_SCALE, MANIFEST_FILE};
use ledfit::model::ModelParams;
use ledfit::newton::newton_optimize;
use ledfit::photometry::{
    extract_averaged, extract_plane, parse_ies, read_samples_csv, write_ies, write_samples_csv, IntensitySamples,
    NumberFormat,
};
use ledfit::search::{random_params, run_search, standard_configs, Algorithm, AlgorithmConfig, SearchSettings};
use ledfit::seed;

use crate::config::FileConfig;
use crate::{CliError, ConvertArgs, ExperimentArgs, FitArgs, GenArgs, Method, Report, SourceArgs, StatsArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn number_format(decimals: Option<usize>) -> NumberFormat {
    decimals.map_or(NumberFormat::Full, NumberFormat::Decimals)
}

fn load_samples(path: &Path, source: &SourceArgs, cfg: &FileConfig) -> Result<IntensitySamples, CliError> {
    if is_csv(path) {
        let file = File::open(path).map_err(|e| CliError::input(path, e))?;
        return read_samples_csv(file).map_err(|e| CliError::input(path, e));
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let file = parse_ies(&text).map_err(|e| CliError::input(path, e))?;
    let average = source.average || cfg.resolve(None, "average", false)?;
    let samples = if average {
        extract_averaged(&file)
    } else {
        extract_plane(&file, cfg.resolve(source.plane, "plane", 0)?)
    };
    samples.map_err(|e| CliError::input(path, e))
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| CliError::input(path, e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn output_error(out: Option<&Path>, e: impl std::fmt::Display) -> CliError {
    match out {
        Some(path) => CliError::input(path, e),
        None => CliError::Input(format!("stdout: {e}")),
    }
}

/// Comment lines heading every result CSV.
fn header(seed: Option<u64>, config: String, timestamp: bool) -> Vec<String> {
    let mut lines = vec![
        format!("ledfit {VERSION}"),
        format!("seed={}", seed.map_or_else(|| "none".to_string(), |s| s.to_string())),
        format!("config: {config}"),
    ];
    if timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        lines.push(format!("generated_unix={secs}"));
    }
    lines
}

pub(crate) fn convert(a: ConvertArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let samples = load_samples(&a.input, &a.source, cfg)?;
    let out = a.out.as_deref();
    let mut w = open_output(out)?;
    if is_csv(&a.input) {
        let decimals = cfg.resolve_opt(a.decimals, "decimals")?;
        let meta = vec![format!("[TEST] converted from {}", a.input.display())];
        w.write_all(write_ies(&samples, number_format(decimals), &meta).as_bytes())
            .map_err(|e| output_error(out, e))?;
    } else {
        write_samples_csv(&samples, &mut w).map_err(|e| output_error(out, e))?;
    }
    w.flush().map_err(|e| output_error(out, e))
}

#[derive(Deserialize)]
struct InitRow {
    a1: f64,
    a2: f64,
    a3: f64,
    b1: f64,
    b2: f64,
    b3: f64,
    c1: f64,
    c2: f64,
    c3: f64,
}

fn read_init(path: &Path) -> Result<ModelParams, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let row: InitRow = r
        .deserialize()
        .next()
        .ok_or_else(|| CliError::input(path, "no parameter row"))?
        .map_err(|e| CliError::input(path, e))?;
    Ok(ModelParams::new(
        [row.a1, row.a2, row.a3],
        [row.b1, row.b2, row.b3],
        [row.c1, row.c2, row.c3],
    ))
}

pub(crate) fn fit(a: FitArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let samples = load_samples(&a.input, &a.source, cfg)?;
    let method = cfg.resolve(a.method, "method", Method::SNewton)?;
    let seed = cfg.resolve(a.seed, "seed", 0)?;
    let default_budget = if method == Method::LNewton {
        4_000_000
    } else {
        1_000_000
    };
    let budget = cfg.resolve(a.budget, "budget", default_budget)?;
    let starts = cfg.resolve(a.starts, "starts", 10)?;
    let pool_size = cfg.resolve(a.pool, "pool", ledfit::search::DEFAULT_POOL_SIZE)?;
    if budget == 0 || starts == 0 {
        return Err(CliError::Usage("budget and starts must be positive".into()));
    }
    let settings = SearchSettings::default();
    let clock = Instant::now();

    let mut notes = format!("fit method={} input={}", method.name(), a.input.display());
    let record = if method == Method::Newton {
        let init = match a.init.clone().or_else(|| cfg.get("init").map(str::to_string)) {
            None => return Err(CliError::Usage("--method newton needs --init <file|random>".into())),
            Some(s) if s == "random" => random_params(&mut seed::stream(seed, 0)),
            Some(s) => read_init(Path::new(&s))?,
        };
        let fit = newton_optimize(&init, &samples, &settings.newton)?;
        notes.push_str(&format!(" termination={}", fit.termination));
        let wall = if a.deterministic {
            0.0
        } else {
            clock.elapsed().as_secs_f64()
        };
        RunRecord {
            newton_iterations: fit.iterations,
            wall_seconds: wall,
            ..RunRecord::new(method.name(), &stem(&a.input), seed, fit.rmsp(), &fit.params)
        }
    } else {
        let algorithm = match method {
            Method::If | Method::IfNewton => Algorithm::MultiStartIf {
                starts,
                steps_per_start: (budget / starts).max(1),
                newton: method == Method::IfNewton,
            },
            _ => Algorithm::RandomNewton {
                initializations: budget,
                pool_size,
            },
        };
        notes.push_str(&format!(" budget={budget} starts={starts} pool={pool_size}"));
        let config = AlgorithmConfig {
            name: method.name().to_string(),
            algorithm,
        };
        let out = run_search(&config, &samples, seed, &settings)?;
        let wall = if a.deterministic {
            0.0
        } else {
            clock.elapsed().as_secs_f64()
        };
        RunRecord {
            evaluations: out.evaluations,
            newton_iterations: out.newton_iterations(),
            wall_seconds: wall,
            ..RunRecord::new(method.name(), &stem(&a.input), seed, out.best.rmsp, &out.best_params)
        }
    };
    if !record.best_rmsp.is_finite() {
        return Err(CliError::Numerical("fit produced a non-finite error".into()));
    }
    let out = a.out.as_deref();
    let w = open_output(out)?;
    write_records(w, &header(Some(seed), notes, !a.deterministic), &[record]).map_err(|e| output_error(out, e))
}

pub(crate) fn gen(a: GenArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = cfg.resolve(a.seed, "seed", 0)?;
    let scale = cfg.resolve(a.scale, "scale", DEFAULT_SCALE)?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Usage("scale must be positive".into()));
    }
    let decimals = cfg.resolve_opt(a.decimals, "decimals")?;
    let instances = generate_dataset(a.count, seed, scale);
    write_dataset(&instances, &a.out, number_format(decimals)).map_err(|e| CliError::input(&a.out, e))?;
    Ok(())
}

fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let rows = read_manifest(&manifest).map_err(|e| CliError::input(&manifest, e))?;
        return Ok(rows.into_iter().map(|r| dir.join(r.file)).collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::input(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ies")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn select_configs(list: &str, divisor: usize) -> Result<Vec<AlgorithmConfig>, CliError> {
    let all = standard_configs();
    let chosen = if list == "all" {
        all
    } else {
        list.split(',')
            .map(|name| {
                let name = name.trim();
                all.iter()
                    .find(|c| c.name.eq_ignore_ascii_case(name))
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("unknown configuration `{name}`")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(chosen.iter().map(|c| c.scaled_down(divisor)).collect())
}

pub(crate) fn experiment(a: ExperimentArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let seed = cfg.resolve(a.seed, "seed", 0)?;
    let divisor = cfg.resolve(a.budget_divisor, "budget_divisor", 1)?;
    if divisor == 0 {
        return Err(CliError::Usage("budget divisor must be positive".into()));
    }
    let configs = select_configs(&a.configs, divisor)?;
    let instances = dataset_files(&a.dataset)?
        .into_iter()
        .map(|path| {
            Ok(Instance {
                id: stem(&path),
                samples: load_samples(&path, &a.source, cfg)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let records = run_suite(&configs, &instances, seed, &SearchSettings::default(), !a.deterministic)?;
    let notes = format!(
        "experiment dataset={} configs={} budget_divisor={divisor} instances={}",
        a.dataset.display(),
        configs.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(","),
        instances.len()
    );
    let file = File::create(&a.out).map_err(|e| CliError::input(&a.out, e))?;
    write_records(
        BufWriter::new(file),
        &header(Some(seed), notes, !a.deterministic),
        &records,
    )
    .map_err(|e| CliError::input(&a.out, e))
}

fn load_records(path: &Path) -> Result<Vec<RunRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(path, e))?;
    read_records(file).map_err(|e| CliError::input(path, e))
}

fn stats_error(e: ledfit::error::StatsError) -> CliError {
    CliError::Input(e.to_string())
}

/// Records of one configuration: `config` if given, else the file's only
/// configuration.
fn one_config(records: Vec<RunRecord>, config: Option<&str>, what: &str) -> Result<(String, Vec<RunRecord>), CliError> {
    let name = match config {
        Some(c) => c.to_string(),
        None => match config_names(&records).as_slice() {
            [only] => only.clone(),
            _ => {
                return Err(CliError::Usage(format!(
                    "{what} results hold several configurations; name one"
                )))
            }
        },
    };
    let picked: Vec<RunRecord> = records.into_iter().filter(|r| r.config == name).collect();
    if picked.is_empty() {
        return Err(CliError::Input(format!("no {what} records for configuration `{name}`")));
    }
    Ok((name, picked))
}

pub(crate) fn stats(a: StatsArgs) -> Result<(), CliError> {
    let out = a.out.as_deref();
    let mut lines: Vec<String> = Vec::new();
    let mut row = |fields: Vec<String>| lines.push(fields.join(","));
    let input = || {
        a.input
            .as_deref()
            .ok_or_else(|| CliError::Usage("this report needs --in".into()))
    };

    match a.report {
        Report::Summary => {
            let records = load_records(input()?)?;
            row(["config", "count", "mean", "std_dev", "min", "max"]
                .map(String::from)
                .to_vec());
            for c in config_names(&records) {
                let s = summary_stats(&records, &c).map_err(stats_error)?;
                row(vec![
                    c,
                    s.count.to_string(),
                    s.mean.to_string(),
                    s.std_dev.to_string(),
                    s.min.to_string(),
                    s.max.to_string(),
                ]);
            }
        }
        Report::Rank => {
            let records = load_records(input()?)?;
            let t = weighted_ranking(&records).map_err(stats_error)?;
            row(["config", "best_score", "mean_score"].map(String::from).to_vec());
            for (i, c) in t.configs.iter().enumerate() {
                row(vec![c.clone(), t.best[i].to_string(), t.mean[i].to_string()]);
            }
        }
        Report::Wilcoxon => {
            let records = load_records(input()?)?;
            row([
                "first",
                "second",
                "n_effective",
                "w_plus",
                "w_minus",
                "w",
                "z",
                "asymptotic_p",
            ]
            .map(String::from)
            .to_vec());
            for t in pairwise_wilcoxon(&records).map_err(stats_error)? {
                let mut fields = vec![t.first, t.second];
                match t.result {
                    Some(r) => fields.extend([
                        r.n_effective.to_string(),
                        r.w_plus.to_string(),
                        r.w_minus.to_string(),
                        r.w_statistic.to_string(),
                        r.z.to_string(),
                        r.asymptotic_p.to_string(),
                    ]),
                    None => fields.extend([
                        "0".to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]),
                }
                row(fields);
            }
        }
        Report::Improvement => {
            let (before, after) = match (&a.before, &a.after) {
                (Some(b), Some(af)) => (load_records(b)?, load_records(af)?),
                (None, None) => {
                    let all = load_records(input()?)?;
                    (all.clone(), all)
                }
                _ => return Err(CliError::Usage("give both --before and --after".into())),
            };
            let (bname, before) = one_config(before, a.before_config.as_deref(), "baseline")?;
            let (aname, after) = one_config(after, a.after_config.as_deref(), "improved")?;
            let instances = instance_names(&before);
            let b = best_by_instance(&before, &bname, &instances).map_err(stats_error)?;
            let af = best_by_instance(&after, &aname, &instances).map_err(stats_error)?;
            let delta = improvement_report(&b, &af).map_err(stats_error)?;
            row(["instance", "before", "after", "delta_percent"]
                .map(String::from)
                .to_vec());
            for i in 0..instances.len() {
                row(vec![
                    instances[i].clone(),
                    b[i].to_string(),
                    af[i].to_string(),
                    delta[i].to_string(),
                ]);
            }
        }
    }

    let report = format!("{:?}", a.report).to_lowercase();
    let mut w = open_output(out)?;
    let write = |w: &mut dyn Write| -> io::Result<()> {
        for line in header(None, format!("stats report={report}"), false) {
            writeln!(w, "# {line}")?;
        }
        for line in &lines {
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| output_error(out, e))
}
