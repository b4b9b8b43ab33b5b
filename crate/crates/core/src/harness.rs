//! Seeded Monte-Carlo sweeps: configuration, per-drop pipeline, aggregation
//! and table output.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{cancel_intracell, compute_q, select_interferers, solve_partial_ia, BeamformerSet, IaOptions};
use crate::error::{Error, Result};
use crate::feasibility::{check_theorem2_with_cap, EnumerationCap};
use crate::linalg::mix_seed;
use crate::net_model::{build_topology, drop_users, realize_channels, ChannelSet, ClusterDims, LinkParams, TopologyKind};
use crate::num::{maxmin_alternate, random_init, wmmse_sum_rate, MaxMinOptions, UtilityResult, WmmseOptions};

/// Environment variable capping the worker pool size.
pub const WORKERS_ENV: &str = "PIASIM_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Utility {
    MaxMin,
    SumRate,
}

/// Which Stage II starting points to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    #[serde(rename = "IA")]
    Ia,
    Random,
    Both,
}

/// One Stage II starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InitArm {
    #[serde(rename = "IA")]
    Ia,
    Random,
}

impl InitMode {
    fn arms(self) -> &'static [InitArm] {
        match self {
            InitMode::Ia => &[InitArm::Ia],
            InitMode::Random => &[InitArm::Random],
            InitMode::Both => &[InitArm::Ia, InitArm::Random],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QPolicy {
    /// Largest `q` meeting the antenna-count condition, capped at `G - 1`.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub ia: IaOptions,
    pub wmmse: WmmseOptions,
    pub maxmin: MaxMinOptions,
    /// Redraws allowed when a drop leaves a cell's effective matrix singular.
    pub max_redraws: usize,
    /// Enumeration limits for the feasibility check of selected sets.
    pub feasibility_cap: EnumerationCap,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ia: IaOptions::default(),
            wmmse: WmmseOptions::default(),
            maxmin: MaxMinOptions::default(),
            max_redraws: 5,
            // the search is exponential in BSs only, so user counts can be large
            feasibility_cap: EnumerationCap { max_cells: 16, max_users: 4096 },
        }
    }
}

fn default_q_policy() -> QPolicy {
    QPolicy::Auto
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologyKind,
    pub bs_distances_m: Vec<f64>,
    pub users_per_cell: Vec<usize>,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub utility: Utility,
    pub init: InitMode,
    #[serde(default = "default_q_policy")]
    pub q_policy: QPolicy,
    pub drops: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
    #[serde(default)]
    pub link: LinkParams,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn cells(&self) -> usize {
        self.topology.cluster_size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.drops == 0 {
            return Err(Error::Config("drops must be at least 1".into()));
        }
        if self.bs_distances_m.is_empty() || self.bs_distances_m.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::Config("need at least one positive BS distance".into()));
        }
        if self.rx_antennas == 0 || self.tx_antennas == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        if self.users_per_cell.is_empty() || self.users_per_cell.iter().any(|&k| k == 0 || k > self.tx_antennas) {
            return Err(Error::Config(format!("users per cell must lie in [1, {}]", self.tx_antennas)));
        }
        if let QPolicy::Fixed(q) = self.q_policy {
            if q + 1 > self.cells() {
                return Err(Error::Config(format!("fixed q = {q} exceeds G - 1 = {}", self.cells() - 1)));
            }
        }
        self.link.validate()
    }

    pub fn q_for(&self, users_per_cell: usize) -> usize {
        let cap = self.cells() - 1;
        match self.q_policy {
            QPolicy::Auto => compute_q(self.rx_antennas, self.tx_antennas, users_per_cell).min(cap),
            QPolicy::Fixed(q) => q.min(cap),
        }
    }
}

/// One aggregated sweep point. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub topology: TopologyKind,
    pub bs_distance_m: f64,
    pub users_per_cell: usize,
    pub q: usize,
    pub utility: Utility,
    pub init: InitArm,
    pub drops: usize,
    /// b/s/Hz per cell, SINR gap applied.
    pub avg_cell_throughput: f64,
    /// Standard error of the mean over drops.
    pub stderr: f64,
    /// Drops where the IA arm fell back to a random start.
    pub fallbacks: usize,
}

pub const RESULT_COLUMNS: [&str; 10] = [
    "topology",
    "bs_distance_m",
    "users_per_cell",
    "q",
    "utility",
    "init",
    "drops",
    "avg_cell_throughput",
    "stderr",
    "fallbacks",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub bs_distance_m: f64,
    pub users_per_cell: usize,
    pub init: InitArm,
    pub drop_index: usize,
    /// Seed that produced the drop actually used (after any redraws).
    pub seed: u64,
    pub redraws: usize,
    pub channel_fingerprint: u64,
    pub q: usize,
    pub fell_back: bool,
    pub ia_relative_leakage: Option<f64>,
    pub min_rate: f64,
    pub sum_rate: f64,
    pub cell_throughput: f64,
    pub per_user_sinr_db: Vec<f64>,
    pub per_user_power_dbm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub records: Vec<DropRecord>,
}

fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

struct DropJob {
    distance: f64,
    users_per_cell: usize,
    drop_index: usize,
}

struct PreparedDrop {
    channels: ChannelSet,
    seed: u64,
    redraws: usize,
    /// Stage I output, or `None` when the selected set was infeasible.
    aligned: Option<(BeamformerSet, f64)>,
}

/// Stage I on one drop; redraws the drop when intra-cell cancellation is
/// ill-conditioned.
fn prepare_drop(cfg: &ExperimentConfig, job: &DropJob, need_ia: bool) -> Result<PreparedDrop> {
    let topology = build_topology(cfg.topology, job.distance)?;
    let dims = ClusterDims::uniform(cfg.cells(), job.users_per_cell, cfg.rx_antennas, cfg.tx_antennas)?;
    let base = cfg.base_seed ^ job.drop_index as u64;
    let mut seed = base;
    for redraws in 0..=cfg.tolerances.max_redraws {
        let placement = drop_users(&topology, &dims, &cfg.link, mix_seed(seed, 1))?;
        let channels = realize_channels(&topology, &placement, &dims, &cfg.link, mix_seed(seed, 2))?;
        if !need_ia {
            return Ok(PreparedDrop { channels, seed, redraws, aligned: None });
        }
        let norm = channels.normalized();
        let set = select_interferers(&norm, cfg.q_for(job.users_per_cell));
        if !check_theorem2_with_cap(&dims, &set, cfg.tolerances.feasibility_cap)? {
            log::warn!(
                "d = {} m, K = {}, drop {}: selected set is infeasible, using a random start",
                job.distance,
                job.users_per_cell,
                job.drop_index
            );
            return Ok(PreparedDrop { channels, seed, redraws, aligned: None });
        }
        // alignment is invariant to per-link gains; solving on the fading-only
        // links avoids the slow convergence caused by the pathloss spread
        let ia = solve_partial_ia(&norm.small_scale(), &set, cfg.tolerances.ia, mix_seed(seed, 3))?;
        match cancel_intracell(&norm, &ia.beams) {
            Ok(beams) => {
                let beams = beams.with_equal_power(channels.p_max);
                return Ok(PreparedDrop { channels, seed, redraws, aligned: Some((beams, ia.relative_leakage())) });
            }
            Err(Error::DegenerateDrop { cell, condition }) => {
                log::info!(
                    "d = {} m, K = {}, drop {}: cell {} matrix has condition {condition:.2e}, redrawing",
                    job.distance,
                    job.users_per_cell,
                    job.drop_index,
                    cell + 1
                );
                seed = mix_seed(base, 0xD0 + redraws as u64 + 1);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical(format!(
        "drop {} at d = {} m, K = {} stayed degenerate after {} redraws",
        job.drop_index, job.distance, job.users_per_cell, cfg.tolerances.max_redraws
    )))
}

fn stage_two(cfg: &ExperimentConfig, channels: &ChannelSet, init: &BeamformerSet) -> Result<UtilityResult> {
    match cfg.utility {
        Utility::MaxMin => maxmin_alternate(channels, init, cfg.tolerances.maxmin),
        Utility::SumRate => wmmse_sum_rate(channels, init, cfg.tolerances.wmmse),
    }
}

fn run_drop(cfg: &ExperimentConfig, job: &DropJob) -> Result<Vec<DropRecord>> {
    let arms = cfg.init.arms();
    let prepared = prepare_drop(cfg, job, arms.contains(&InitArm::Ia))?;
    let channels = &prepared.channels;
    let gap = cfg.link.sinr_gap_linear();
    let q = cfg.q_for(job.users_per_cell);
    let random_start = random_init(channels, mix_seed(prepared.seed, 4));
    arms.iter()
        .map(|&arm| {
            let (init, fell_back, leak) = match (arm, &prepared.aligned) {
                (InitArm::Ia, Some((beams, leak))) => (beams, false, Some(*leak)),
                (InitArm::Ia, None) => (&random_start, true, None),
                (InitArm::Random, _) => (&random_start, false, None),
            };
            let res = stage_two(cfg, channels, init)?;
            let min_rate = res.min_rate(gap);
            let sum_rate = res.sum_rate(gap);
            let cell_throughput = match cfg.utility {
                Utility::MaxMin => job.users_per_cell as f64 * min_rate,
                Utility::SumRate => sum_rate / cfg.cells() as f64,
            };
            let beams = res.beams();
            Ok(DropRecord {
                bs_distance_m: job.distance,
                users_per_cell: job.users_per_cell,
                init: arm,
                drop_index: job.drop_index,
                seed: prepared.seed,
                redraws: prepared.redraws,
                channel_fingerprint: channels.fingerprint(),
                q: if arm == InitArm::Ia && !fell_back { q } else { 0 },
                fell_back,
                ia_relative_leakage: leak,
                min_rate,
                sum_rate,
                cell_throughput,
                per_user_sinr_db: res.per_user_sinr.iter().map(|&s| to_db(s)).collect(),
                per_user_power_dbm: channels.dims.users().map(|u| to_db(beams.user_power(u)) + 30.0).collect(),
            })
        })
        .collect()
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Aggregates per-drop records into one row per (distance, K, arm), in the
/// order distances, then K, then arm.
pub fn aggregate(cfg: &ExperimentConfig, records: &[DropRecord]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &distance in &cfg.bs_distances_m {
        for &k in &cfg.users_per_cell {
            for &arm in cfg.init.arms() {
                let group: Vec<&DropRecord> = records
                    .iter()
                    .filter(|r| r.bs_distance_m == distance && r.users_per_cell == k && r.init == arm)
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let values: Vec<f64> = group.iter().map(|r| r.cell_throughput).collect();
                let (avg, stderr) = mean_and_stderr(&values);
                rows.push(ResultRow {
                    topology: cfg.topology,
                    bs_distance_m: distance,
                    users_per_cell: k,
                    q: if arm == InitArm::Ia { cfg.q_for(k) } else { 0 },
                    utility: cfg.utility,
                    init: arm,
                    drops: group.len(),
                    avg_cell_throughput: avg,
                    stderr,
                    fallbacks: group.iter().filter(|r| r.fell_back).count(),
                });
            }
        }
    }
    rows
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let jobs: Vec<DropJob> = cfg
        .bs_distances_m
        .iter()
        .flat_map(|&distance| {
            cfg.users_per_cell.iter().flat_map(move |&users_per_cell| {
                (0..cfg.drops).map(move |drop_index| DropJob { distance, users_per_cell, drop_index })
            })
        })
        .collect();
    let pool = worker_pool()?;
    let per_job: Vec<Result<Vec<DropRecord>>> = pool.install(|| jobs.par_iter().map(|job| run_drop(cfg, job)).collect());
    let mut records = Vec::with_capacity(jobs.len() * 2);
    for r in per_job {
        records.extend(r?);
    }
    let rows = aggregate(cfg, &records);
    Ok(ExperimentOutput { rows, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdfMetric {
    TxPowerDbm,
    SinrDb,
}

/// Empirical CDF `(value, fraction <= value)` at every sample.
pub fn emit_cdf(records: &[DropRecord], metric: CdfMetric) -> Result<Vec<(f64, f64)>> {
    let mut values: Vec<f64> = records
        .iter()
        .flat_map(|r| match metric {
            CdfMetric::TxPowerDbm => r.per_user_power_dbm.iter(),
            CdfMetric::SinrDb => r.per_user_sinr_db.iter(),
        })
        .copied()
        .collect();
    if values.is_empty() {
        return Err(Error::Config("no per-user samples to build a CDF from".into()));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut out = Vec::with_capacity(values.len());
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j + 1 < values.len() && values[j + 1] == values[i] {
            j += 1;
        }
        let frac = (j + 1) as f64 / n;
        out.extend((i..=j).map(|idx| (values[idx], frac)));
        i = j + 1;
    }
    Ok(out)
}

/// Fraction of all per-user samples strictly below `threshold`.
pub fn fraction_below(records: &[DropRecord], metric: CdfMetric, threshold: f64) -> f64 {
    let values: Vec<f64> = records
        .iter()
        .flat_map(|r| match metric {
            CdfMetric::TxPowerDbm => r.per_user_power_dbm.clone(),
            CdfMetric::SinrDb => r.per_user_sinr_db.clone(),
        })
        .collect();
    values.iter().filter(|&&v| v < threshold).count() as f64 / values.len().max(1) as f64
}

#[derive(Serialize)]
struct CdfRow {
    topology: TopologyKind,
    bs_distance_m: f64,
    users_per_cell: usize,
    init: InitArm,
    value: f64,
    fraction: f64,
}

pub const CDF_COLUMNS: [&str; 6] = ["topology", "bs_distance_m", "users_per_cell", "init", "value", "fraction"];

fn cdf_table(cfg: &ExperimentConfig, records: &[DropRecord], metric: CdfMetric) -> Result<Vec<CdfRow>> {
    let mut rows = Vec::new();
    for &distance in &cfg.bs_distances_m {
        for &k in &cfg.users_per_cell {
            for &arm in cfg.init.arms() {
                let group: Vec<DropRecord> = records
                    .iter()
                    .filter(|r| r.bs_distance_m == distance && r.users_per_cell == k && r.init == arm)
                    .cloned()
                    .collect();
                if group.is_empty() {
                    continue;
                }
                for (value, fraction) in emit_cdf(&group, metric)? {
                    rows.push(CdfRow { topology: cfg.topology, bs_distance_m: distance, users_per_cell: k, init: arm, value, fraction });
                }
            }
        }
    }
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("csv output failed: {other:?}")),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    derived: Derived,
    drop_seeds: Vec<u64>,
    redraws: Vec<RedrawEntry>,
    fallbacks: Vec<RedrawEntry>,
    outputs: [&'static str; 4],
}

#[derive(Serialize)]
struct Derived {
    cells: usize,
    q_per_users_per_cell: Vec<(usize, usize)>,
    p_max_w: f64,
    noise_variance_w: f64,
    sinr_gap_linear: f64,
    workers_env: &'static str,
}

#[derive(Serialize)]
struct RedrawEntry {
    bs_distance_m: f64,
    users_per_cell: usize,
    drop_index: usize,
    seed: u64,
    redraws: usize,
}

/// Writes `results.csv`, `cdf_power.csv`, `cdf_sinr.csv`, `drops.json` and
/// `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &out.rows, &RESULT_COLUMNS)?;
    write_csv(&dir.join("cdf_power.csv"), &cdf_table(cfg, &out.records, CdfMetric::TxPowerDbm)?, &CDF_COLUMNS)?;
    write_csv(&dir.join("cdf_sinr.csv"), &cdf_table(cfg, &out.records, CdfMetric::SinrDb)?, &CDF_COLUMNS)?;
    fs::write(dir.join("drops.json"), serde_json::to_string_pretty(&out.records)?)?;

    let entry = |r: &DropRecord| RedrawEntry {
        bs_distance_m: r.bs_distance_m,
        users_per_cell: r.users_per_cell,
        drop_index: r.drop_index,
        seed: r.seed,
        redraws: r.redraws,
    };
    let first_arm = cfg.init.arms()[0];
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        derived: Derived {
            cells: cfg.cells(),
            q_per_users_per_cell: cfg.users_per_cell.iter().map(|&k| (k, cfg.q_for(k))).collect(),
            p_max_w: cfg.link.p_max(),
            noise_variance_w: cfg.link.noise_variance(),
            sinr_gap_linear: cfg.link.sinr_gap_linear(),
            workers_env: WORKERS_ENV,
        },
        drop_seeds: (0..cfg.drops).map(|d| cfg.base_seed ^ d as u64).collect(),
        redraws: out.records.iter().filter(|r| r.init == first_arm && r.redraws > 0).map(entry).collect(),
        fallbacks: out.records.iter().filter(|r| r.fell_back).map(entry).collect(),
        outputs: ["results.csv", "cdf_power.csv", "cdf_sinr.csv", "drops.json"],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    Fig5,
    Fig6a,
    Fig6b,
    Fig8a,
    Fig8b,
    Fig9,
}

impl std::str::FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig5" => Figure::Fig5,
            "fig6a" => Figure::Fig6a,
            "fig6b" => Figure::Fig6b,
            "fig8a" => Figure::Fig8a,
            "fig8b" => Figure::Fig8b,
            "fig9" => Figure::Fig9,
            other => return Err(Error::Config(format!("unknown figure preset '{other}'"))),
        })
    }
}

pub const PRESET_DISTANCES_M: [f64; 5] = [600.0, 900.0, 1200.0, 1500.0, 1800.0];

/// Sweep settings of a reproduced figure.
pub fn figure_preset(fig: Figure, drops: usize, base_seed: u64) -> ExperimentConfig {
    let (topology, users, m, n, utility) = match fig {
        Figure::Fig5 => (TopologyKind::ThreeSector, vec![2, 3, 4], 3, 4, Utility::MaxMin),
        Figure::Fig6a => (TopologyKind::Ring5, vec![2, 3, 4, 5, 6], 5, 6, Utility::MaxMin),
        Figure::Fig6b => (TopologyKind::Hex7, vec![1, 2, 3, 4], 4, 4, Utility::MaxMin),
        Figure::Fig8a => (TopologyKind::ThreeSector, vec![2, 3, 4], 3, 4, Utility::SumRate),
        Figure::Fig8b => (TopologyKind::Hex7, vec![1, 2, 3, 4], 4, 4, Utility::SumRate),
        Figure::Fig9 => (TopologyKind::Hex49Surround, vec![1, 2, 3, 4], 4, 4, Utility::MaxMin),
    };
    ExperimentConfig {
        topology,
        bs_distances_m: PRESET_DISTANCES_M.to_vec(),
        users_per_cell: users,
        rx_antennas: m,
        tx_antennas: n,
        utility,
        init: InitMode::Both,
        q_policy: QPolicy::Auto,
        drops,
        base_seed,
        link: LinkParams::default(),
        tolerances: Tolerances::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(value: f64) -> DropRecord {
        DropRecord {
            bs_distance_m: 600.0,
            users_per_cell: 1,
            init: InitArm::Random,
            drop_index: 0,
            seed: 0,
            redraws: 0,
            channel_fingerprint: 0,
            q: 0,
            fell_back: false,
            ia_relative_leakage: None,
            min_rate: 0.0,
            sum_rate: 0.0,
            cell_throughput: value,
            per_user_sinr_db: vec![value],
            per_user_power_dbm: vec![value],
        }
    }

    #[test]
    fn cdf_of_single_value() {
        assert_eq!(emit_cdf(&[record(3.5)], CdfMetric::SinrDb).unwrap(), vec![(3.5, 1.0)]);
    }

    #[test]
    fn cdf_quartiles() {
        let recs: Vec<DropRecord> = [2.0, 0.0, 3.0, 1.0].into_iter().map(record).collect();
        let cdf = emit_cdf(&recs, CdfMetric::TxPowerDbm).unwrap();
        assert_eq!(cdf, vec![(0.0, 0.25), (1.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
    }

    #[test]
    fn cdf_ties_share_fraction() {
        let recs: Vec<DropRecord> = [1.0, 1.0, 2.0].into_iter().map(record).collect();
        let cdf = emit_cdf(&recs, CdfMetric::SinrDb).unwrap();
        assert_eq!(cdf[0].1, 2.0 / 3.0);
        assert_eq!(cdf[1].1, 2.0 / 3.0);
    }

    #[test]
    fn cdf_needs_samples() {
        assert!(emit_cdf(&[], CdfMetric::SinrDb).unwrap_err().is_config());
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, s) = mean_and_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_and_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(
            r#"{"topology":"ThreeSector","bs_distances_m":[600],"users_per_cell":[2],
                "rx_antennas":3,"tx_antennas":4,"utility":"MaxMin","init":"Both","drops":1}"#,
        )
        .unwrap();
        assert_eq!(cfg.q_policy, QPolicy::Auto);
        assert_eq!(cfg.link, LinkParams::default());
        assert_eq!(cfg.q_for(2), 2);
        assert_eq!(cfg.q_for(4), 0);

        let mut bad = cfg.clone();
        bad.users_per_cell = vec![5];
        assert!(bad.validate().unwrap_err().is_config());
        bad = cfg.clone();
        bad.drops = 0;
        assert!(bad.validate().is_err());
        bad = cfg.clone();
        bad.q_policy = QPolicy::Fixed(3);
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_json("{").unwrap_err().is_config());
    }

    #[test]
    fn preset_q_values() {
        let q = |fig, k| figure_preset(fig, 1, 0).q_for(k);
        assert_eq!([q(Figure::Fig5, 2), q(Figure::Fig5, 3), q(Figure::Fig5, 4)], [2, 1, 0]);
        assert_eq!((2..=6).map(|k| q(Figure::Fig6a, k)).collect::<Vec<_>>(), vec![4, 2, 1, 1, 0]);
        assert_eq!((1..=4).map(|k| q(Figure::Fig6b, k)).collect::<Vec<_>>(), vec![6, 2, 1, 0]);
        assert_eq!((1..=4).map(|k| q(Figure::Fig9, k)).collect::<Vec<_>>(), vec![6, 2, 1, 0]);
    }
}
