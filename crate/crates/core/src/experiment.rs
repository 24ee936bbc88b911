//! Experiment runs over datasets and the statistics used to compare
//! configurations: summaries, weighted ranking, Wilcoxon signed-rank tests
//! and before/after improvement.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ModelError, StatsError};
use crate::model::ModelParams;
use crate::photometry::IntensitySamples;
use crate::search::{run_search, AlgorithmConfig, SearchSettings};
use crate::seed::derive_seed;

/// One configuration's result on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: String,
    pub instance: String,
    pub seed: u64,
    pub best_rmsp: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub evaluations: usize,
    pub newton_iterations: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    /// A record with zero counts and wall time.
    pub fn new(config: &str, instance: &str, seed: u64, best_rmsp: f64, p: &ModelParams) -> Self {
        Self {
            config: config.to_string(),
            instance: instance.to_string(),
            seed,
            best_rmsp,
            a1: p.a[0],
            a2: p.a[1],
            a3: p.a[2],
            b1: p.b[0],
            b2: p.b[1],
            b3: p.b[2],
            c1: p.c[0],
            c2: p.c[1],
            c3: p.c[2],
            evaluations: 0,
            newton_iterations: 0,
            wall_seconds: 0.0,
        }
    }

    pub fn best_params(&self) -> ModelParams {
        ModelParams::new(
            [self.a1, self.a2, self.a3],
            [self.b1, self.b2, self.b3],
            [self.c1, self.c2, self.c3],
        )
    }
}

/// A named sample set to run configurations on.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub samples: IntensitySamples,
}

/// Seed of the cell `(config, instance)`; independent of which other
/// cells are run.
pub fn cell_seed(master: u64, config_index: usize, instance_index: usize) -> u64 {
    derive_seed(derive_seed(master, config_index as u64), instance_index as u64)
}

/// Runs every configuration on every instance, configuration-major.
///
/// With `timed` false the wall time column is zero, which makes the
/// records a pure function of the inputs.
pub fn run_suite(
    configs: &[AlgorithmConfig],
    instances: &[Instance],
    master_seed: u64,
    settings: &SearchSettings,
    timed: bool,
) -> Result<Vec<RunRecord>, ModelError> {
    let cells: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..instances.len()).map(move |i| (c, i)))
        .collect();
    cells
        .par_iter()
        .map(|&(c, i)| {
            let (cfg, inst) = (&configs[c], &instances[i]);
            let seed = cell_seed(master_seed, c, i);
            let start = Instant::now();
            let out = run_search(cfg, &inst.samples, seed, settings)?;
            Ok(RunRecord {
                evaluations: out.evaluations,
                newton_iterations: out.newton_iterations(),
                wall_seconds: if timed { start.elapsed().as_secs_f64() } else { 0.0 },
                ..RunRecord::new(&cfg.name, &inst.id, seed, out.best.rmsp, &out.best_params)
            })
        })
        .collect()
}

/// Writes records as CSV preceded by `# `-prefixed comment lines.
pub fn write_records<W: Write>(mut w: W, comments: &[String], records: &[RunRecord]) -> csv::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records written by [`write_records`], skipping comment lines.
pub fn read_records<R: Read>(r: R) -> csv::Result<Vec<RunRecord>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .collect()
}

/// Configuration names in order of first appearance.
pub fn config_names(records: &[RunRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.config.clone()))
        .map(|r| r.config.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single record.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std_dev = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Summary {
        count: values.len(),
        mean,
        std_dev,
        min,
        max,
    })
}

/// Statistics of `best_rmsp` over the records of one configuration.
pub fn summary_stats(records: &[RunRecord], config: &str) -> Result<Summary, StatsError> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.config == config)
        .map(|r| r.best_rmsp)
        .collect();
    summarize(&values).ok_or_else(|| StatsError::NoRecords(config.to_string()))
}

/// Ranks of `values` in ascending order starting at 1, tied values sharing
/// the mean of the positions they occupy.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Weighted ranking totals: with `k` configurations, the best result on an
/// instance scores `k` and the worst 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub configs: Vec<String>,
    /// Totals when ranking each configuration's best result per instance.
    pub best: Vec<f64>,
    /// Totals when ranking each configuration's mean result per instance.
    pub mean: Vec<f64>,
    pub instances: usize,
}

/// Ranks configurations per instance. Repeated runs of a configuration on
/// an instance are reduced to their minimum (best) and mean.
pub fn weighted_ranking(records: &[RunRecord]) -> Result<RankTable, StatsError> {
    let configs = config_names(records);
    let mut cells: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    let mut instance_order = Vec::new();
    for r in records {
        let row = cells.entry(r.instance.as_str()).or_insert_with(|| {
            instance_order.push(r.instance.as_str());
            BTreeMap::new()
        });
        row.entry(r.config.as_str()).or_default().push(r.best_rmsp);
    }
    let k = configs.len();
    let mut best = vec![0.0; k];
    let mut mean = vec![0.0; k];
    for instance in &instance_order {
        let row = &cells[instance];
        let mut mins = Vec::with_capacity(k);
        let mut means = Vec::with_capacity(k);
        for config in &configs {
            let values = row.get(config.as_str()).ok_or_else(|| StatsError::IncompleteInstance {
                instance: instance.to_string(),
                config: config.clone(),
            })?;
            mins.push(values.iter().copied().fold(f64::INFINITY, f64::min));
            means.push(values.iter().sum::<f64>() / values.len() as f64);
        }
        for (total, values) in [(&mut best, &mins), (&mut mean, &means)] {
            for (t, r) in total.iter_mut().zip(mid_ranks(values)) {
                *t += (k + 1) as f64 - r;
            }
        }
    }
    Ok(RankTable {
        configs,
        best,
        mean,
        instances: instance_order.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of nonzero differences.
    pub n_effective: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub w_statistic: f64,
    pub z: f64,
    /// Two-sided asymptotic significance.
    pub asymptotic_p: f64,
}

/// Two-sided Wilcoxon signed-rank test on the differences `x - y`.
///
/// Zero differences are dropped, tied magnitudes get mid-ranks, and the
/// p-value uses the normal approximation with tie-corrected variance and a
/// continuity correction of one half.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::NoNonzeroPairs);
    }
    let magnitudes: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = mid_ranks(&magnitudes);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();

    let n = d.len() as f64;
    let mut sorted = magnitudes.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let mean = n * (n + 1.0) / 4.0;
    let variance = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let w = w_plus.min(w_minus);
    let z = ((mean - w).abs() - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(WilcoxonResult {
        n_effective: d.len(),
        w_plus,
        w_minus,
        w_statistic: w,
        z,
        asymptotic_p: p,
    })
}

/// Test result for one ordered pair of configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub first: String,
    pub second: String,
    pub result: Option<WilcoxonResult>,
}

/// Per-instance `best_rmsp` of `config`, reduced to the minimum over
/// repeats, in the order of `instances`.
pub fn best_by_instance(records: &[RunRecord], config: &str, instances: &[String]) -> Result<Vec<f64>, StatsError> {
    instances
        .iter()
        .map(|inst| {
            records
                .iter()
                .filter(|r| r.config == config && &r.instance == inst)
                .map(|r| r.best_rmsp)
                .reduce(f64::min)
                .ok_or_else(|| StatsError::IncompleteInstance {
                    instance: inst.clone(),
                    config: config.to_string(),
                })
        })
        .collect()
}

/// Instance ids in order of first appearance.
pub fn instance_names(records: &[RunRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.instance.clone()))
        .map(|r| r.instance.clone())
        .collect()
}

/// Wilcoxon tests between every pair of configurations, paired by
/// instance. Pairs without nonzero differences carry no result.
pub fn pairwise_wilcoxon(records: &[RunRecord]) -> Result<Vec<PairTest>, StatsError> {
    let configs = config_names(records);
    let instances = instance_names(records);
    let columns = configs
        .iter()
        .map(|c| best_by_instance(records, c, &instances))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for i in 0..configs.len() {
        for j in i + 1..configs.len() {
            let result = match wilcoxon_signed_rank(&columns[i], &columns[j]) {
                Ok(r) => Some(r),
                Err(StatsError::NoNonzeroPairs) => None,
                Err(e) => return Err(e),
            };
            out.push(PairTest {
                first: configs[i].clone(),
                second: configs[j].clone(),
                result,
            });
        }
    }
    Ok(out)
}

/// Percentage improvement `100 (before - after) / before` per instance.
pub fn improvement_report(before: &[f64], after: &[f64]) -> Result<Vec<f64>, StatsError> {
    if before.len() != after.len() {
        return Err(StatsError::LengthMismatch(before.len(), after.len()));
    }
    before
        .iter()
        .zip(after)
        .enumerate()
        .map(|(i, (b, a))| {
            if *b == 0.0 {
                Err(StatsError::ZeroBaseline(i))
            } else {
                Ok(100.0 * (b - a) / b)
            }
        })
        .collect()
}
