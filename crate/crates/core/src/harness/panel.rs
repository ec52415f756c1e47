//! The synthetic verification panel: cells, CSV output and aggregates.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dgp::{generate, linspace, oracle_curves, DgpName, DgpSpec, OracleCurves};
use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, stream};
use crate::tail::Regime;

use super::metrics::{bootstrap_relative_mae, cell_metrics, RelativeSummary};
use super::pipeline::{run_estimator, EstimatorKind, FitConfig};

/// Treatment range shared by every panel process.
pub const PANEL_T_RANGE: (f64, f64) = (-2.0, 2.0);

fn default_levels() -> Vec<f64> {
    vec![0.0, 0.05, 0.10, 0.20]
}

fn default_grid_points() -> usize {
    25
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.001]
}

fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_n_oracle() -> usize {
    100_000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub dgp_names: Vec<DgpName>,
    #[serde(default = "default_levels")]
    pub contamination_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_n_oracle")]
    pub n_oracle: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    /// When false the `wall_ms` column is written as 0 so reruns are byte-identical.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

impl PanelConfig {
    pub fn new(dgp_names: Vec<DgpName>, seeds: Vec<u64>, n: usize) -> Self {
        Self {
            dgp_names,
            contamination_levels: default_levels(),
            seeds,
            n,
            grid_points: default_grid_points(),
            alphas: default_alphas(),
            estimators: default_estimators(),
            n_oracle: default_n_oracle(),
            output_path: None,
            record_wall_time: true,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dgp_names.is_empty() || self.contamination_levels.is_empty() || self.seeds.is_empty() {
            return Err(invalid("DGP, contamination and seed lists must be non-empty"));
        }
        if self.estimators.is_empty() || self.alphas.is_empty() {
            return Err(invalid("estimator and alpha lists must be non-empty"));
        }
        if self.n < 200 {
            return Err(Error::Insufficient { needed: 200, got: self.n });
        }
        if self.grid_points < 2 {
            return Err(invalid("grid needs at least two points"));
        }
        if let Some(p) = self.contamination_levels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("contamination level {p} outside [0,1]")));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 0.5)) {
            return Err(invalid(format!("alpha {a} outside (0, 0.5)")));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(PANEL_T_RANGE.0, PANEL_T_RANGE.1, self.grid_points)
    }

    pub fn cell_count(&self) -> usize {
        self.dgp_names.len() * self.contamination_levels.len() * self.seeds.len() * self.estimators.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dgp: DgpName,
    pub p: f64,
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub core_mae: Option<f64>,
    /// One entry per configured alpha.
    pub q_mae: Vec<Option<f64>>,
    pub alloc_err: Vec<Option<f64>>,
    pub s_mae: Option<f64>,
    pub regime: Option<Regime>,
    pub truth_regime: Regime,
    pub refused: bool,
    /// Operational failure of the cell; its metrics are blank.
    pub error: Option<String>,
    pub wall_ms: u64,
}

impl CellResult {
    pub fn regime_correct(&self) -> Option<bool> {
        self.regime.map(|r| r == self.truth_regime)
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Oracle seed for a (process, level) pair, independent of list order.
pub fn oracle_seed(name: DgpName, p: f64) -> u64 {
    mix_seed(fnv1a(name.as_str()) ^ p.to_bits(), stream::ORACLE)
}

/// Oracle curves at every alpha for one process and level.
pub fn panel_oracles(name: DgpName, p: f64, grid: &[f64], alphas: &[f64], n_oracle: usize) -> Result<Vec<OracleCurves>> {
    let spec = DgpSpec::new(name, p, n_oracle, 0);
    alphas.iter().map(|&a| oracle_curves(&spec, grid, a, n_oracle, oracle_seed(name, p))).collect()
}

fn run_cell(
    cfg: &PanelConfig,
    grid: &[f64],
    oracles: &[OracleCurves],
    name: DgpName,
    p: f64,
    seed: u64,
    estimator: EstimatorKind,
) -> CellResult {
    let start = Instant::now();
    let truth = super::metrics::truth_regime(&oracles[0].xi_true);
    let result = generate(&DgpSpec::new(name, p, cfg.n, seed))
        .and_then(|sample| run_estimator(&sample, estimator, grid, &cfg.alphas, &FitConfig::with_seed(seed)))
        .and_then(|out| Ok((out.refused, cell_metrics(&out, oracles)?)));
    let wall_ms = if cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
    let blank = vec![None; cfg.alphas.len()];
    match result {
        Ok((refused, m)) => CellResult {
            dgp: name,
            p,
            seed,
            estimator,
            core_mae: Some(m.core_mae),
            q_mae: m.q_mae,
            alloc_err: m.alloc,
            s_mae: m.s_mae,
            regime: m.regime,
            truth_regime: m.truth_regime,
            refused,
            error: None,
            wall_ms,
        },
        Err(e) => {
            log::warn!("cell {}/{p}/{seed}/{estimator} failed: {e}", name.as_str());
            CellResult {
                dgp: name,
                p,
                seed,
                estimator,
                core_mae: None,
                q_mae: blank.clone(),
                alloc_err: blank,
                s_mae: None,
                regime: None,
                truth_regime: truth,
                refused: true,
                error: Some(e.to_string()),
                wall_ms,
            }
        }
    }
}

/// Runs every (process, level, seed, estimator) cell. Output is sorted by that
/// key regardless of completion order.
pub fn run_panel(cfg: &PanelConfig) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let grid = cfg.grid();
    let mut pairs: Vec<(DgpName, f64)> =
        cfg.dgp_names.iter().flat_map(|&d| cfg.contamination_levels.iter().map(move |&p| (d, p))).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();
    let oracles: Vec<Vec<OracleCurves>> = pairs
        .iter()
        .map(|&(d, p)| panel_oracles(d, p, &grid, &cfg.alphas, cfg.n_oracle))
        .collect::<Result<_>>()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut estimators = cfg.estimators.clone();
    estimators.sort();
    estimators.dedup();
    let mut jobs: Vec<(usize, u64, EstimatorKind)> = Vec::with_capacity(cfg.cell_count());
    for i in 0..pairs.len() {
        for &s in &seeds {
            jobs.extend(estimators.iter().map(|&e| (i, s, e)));
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(i, seed, est)| run_cell(cfg, &grid, &oracles[i], pairs[i].0, pairs[i].1, seed, est))
        .collect();
    Ok(cells)
}

/// Column suffix of an alpha level: `0.01` becomes `001`.
pub fn alpha_tag(alpha: f64) -> String {
    format!("{alpha}").replace('.', "")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_cells_csv<W: Write>(cells: &[CellResult], alphas: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["dgp".to_string(), "p".into(), "seed".into(), "estimator".into(), "core_mae".into()];
    header.extend(alphas.iter().map(|a| format!("q_mae_{}", alpha_tag(*a))));
    header.extend(alphas.iter().map(|a| format!("alloc_{}", alpha_tag(*a))));
    header.extend(["s_mae", "regime", "truth_regime", "refused", "wall_ms"].map(String::from));
    w.write_record(&header)?;
    for c in cells {
        let mut row = vec![c.dgp.as_str().to_string(), c.p.to_string(), c.seed.to_string(), c.estimator.to_string(), opt(c.core_mae)];
        row.extend(c.q_mae.iter().map(|v| opt(*v)));
        row.extend(c.alloc_err.iter().map(|v| opt(*v)));
        row.push(opt(c.s_mae));
        row.push(c.regime.map(|r| r.as_str().to_string()).unwrap_or_default());
        row.push(c.truth_regime.as_str().to_string());
        row.push(c.refused.to_string());
        row.push(c.wall_ms.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cells_csv_file(cells: &[CellResult], alphas: &[f64], path: &Path) -> Result<()> {
    write_cells_csv(cells, alphas, std::fs::File::create(path)?)
}

pub type Metric = fn(&CellResult) -> Option<f64>;

/// Values of `metric` for `estimator`, ordered by (process, level, seed).
pub fn metric_by_key(cells: &[CellResult], estimator: EstimatorKind, metric: Metric) -> BTreeMap<(DgpName, u64, u64), Option<f64>> {
    cells
        .iter()
        .filter(|c| c.estimator == estimator)
        .map(|c| ((c.dgp, c.p.to_bits(), c.seed), if c.refused { None } else { metric(c) }))
        .collect()
}

/// Paired relative comparison of two estimators on one metric.
pub fn compare_estimators(
    cells: &[CellResult],
    a: EstimatorKind,
    b: EstimatorKind,
    metric: Metric,
    reps: usize,
    seed: u64,
) -> Result<RelativeSummary> {
    let ma = metric_by_key(cells, a, metric);
    let mb = metric_by_key(cells, b, metric);
    if ma.len() != mb.len() || ma.keys().zip(mb.keys()).any(|(x, y)| x != y) {
        return Err(Error::Unpaired(format!("{a} and {b} cover different cells")));
    }
    let va: Vec<Option<f64>> = ma.into_values().collect();
    let vb: Vec<Option<f64>> = mb.into_values().collect();
    bootstrap_relative_mae(&va, &vb, reps, seed)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn put(map: &mut Map<String, Value>, key: String, v: Option<f64>) {
    map.insert(key, v.map_or(Value::Null, Value::from));
}

/// Flat JSON aggregate: per-estimator means over non-refused cells, refusal
/// and error counts, and bootstrap comparisons against the standard core
/// (core MAE) and against quantile regression (tail metrics).
pub fn summarize(cells: &[CellResult], alphas: &[f64], reps: usize, seed: u64) -> Map<String, Value> {
    let mut map = Map::new();
    map.insert("cells".into(), Value::from(cells.len()));
    let mut present: Vec<EstimatorKind> = cells.iter().map(|c| c.estimator).collect();
    present.sort();
    present.dedup();
    for &e in &present {
        let mine: Vec<&CellResult> = cells.iter().filter(|c| c.estimator == e).collect();
        let live = || mine.iter().filter(|c| !c.refused);
        let key = e.as_str();
        map.insert(format!("{key}.cells"), Value::from(mine.len()));
        map.insert(format!("{key}.refused"), Value::from(mine.iter().filter(|c| c.refused).count()));
        map.insert(format!("{key}.errors"), Value::from(mine.iter().filter(|c| c.error.is_some()).count()));
        put(&mut map, format!("{key}.core_mae"), mean_defined(live().map(|c| c.core_mae)));
        for (j, a) in alphas.iter().enumerate() {
            let tag = alpha_tag(*a);
            put(&mut map, format!("{key}.q_mae_{tag}"), mean_defined(live().map(|c| c.q_mae.get(j).copied().flatten())));
            put(&mut map, format!("{key}.alloc_{tag}"), mean_defined(live().map(|c| c.alloc_err.get(j).copied().flatten())));
        }
        put(&mut map, format!("{key}.s_mae"), mean_defined(live().map(|c| c.s_mae)));
        put(
            &mut map,
            format!("{key}.regime_accuracy"),
            mean_defined(live().map(|c| c.regime_correct().map(|ok| if ok { 1.0 } else { 0.0 }))),
        );
    }
    let mut comparisons: Vec<(EstimatorKind, EstimatorKind, String, Metric)> = Vec::new();
    for &e in &present {
        if e != EstimatorKind::Standard && e != EstimatorKind::Qr {
            comparisons.push((e, EstimatorKind::Standard, "core_mae".into(), |c| c.core_mae));
        }
        if e != EstimatorKind::Qr {
            comparisons.push((e, EstimatorKind::Qr, "s_mae".into(), |c| c.s_mae));
            let q: [Metric; 2] = [|c| c.q_mae.first().copied().flatten(), |c| c.q_mae.get(1).copied().flatten()];
            for (j, a) in alphas.iter().enumerate().take(2) {
                comparisons.push((e, EstimatorKind::Qr, format!("q_mae_{}", alpha_tag(*a)), q[j]));
            }
        }
    }
    for (a, b, name, metric) in comparisons {
        if !present.contains(&b) {
            continue;
        }
        let prefix = format!("{a}_vs_{b}.{name}");
        match compare_estimators(cells, a, b, metric, reps, seed) {
            Ok(s) => {
                put(&mut map, format!("{prefix}.mean_rel"), Some(s.mean));
                put(&mut map, format!("{prefix}.ci90_lower"), Some(s.ci_lower));
                put(&mut map, format!("{prefix}.ci90_upper"), Some(s.ci_upper));
                map.insert(format!("{prefix}.pairs"), Value::from(s.pairs));
            }
            Err(e) => log::debug!("{prefix} skipped: {e}"),
        }
    }
    map
}
