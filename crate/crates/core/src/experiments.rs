//! Monte Carlo harness: replications, sweeps and threshold bisection.
//!
//! Replication `r` of cell `(n, k, d)` draws its market from the seed
//! `derive_seed(master, [n, k, d, r])`. Replications run on a rayon pool and
//! are reduced in index order, so results never depend on the worker count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};

use crate::da::{run_mosm, run_wosm};
use crate::error::{Error, Result};
use crate::lazy::run_mosm_lazy;
use crate::market::{generate_market, MarketConfig};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::hop_fractions;
use crate::stats::{count_components, summarize, summarize_lazy, RankSummary};
use crate::table::{format_sig6, Cell, Table};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    /// Materialize the market, then run [`run_mosm`].
    #[default]
    Eager,
    /// Reveal preferences on demand with [`run_mosm_lazy`].
    Lazy,
}

/// Per-replication quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    RMen,
    RWomen,
    DeltaM,
    DeltaW,
    Tau,
    Components,
    /// `r_men / d`.
    RMenNormalized,
    RMenWosm,
    RWomenWosm,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RMen => "r_men",
            Metric::RWomen => "r_women",
            Metric::DeltaM => "delta_m",
            Metric::DeltaW => "delta_w",
            Metric::Tau => "tau",
            Metric::Components => "components",
            Metric::RMenNormalized => "r_men_over_d",
            Metric::RMenWosm => "r_men_wosm",
            Metric::RWomenWosm => "r_women_wosm",
        }
    }
}

/// What one replication measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub mosm: Option<RankSummary>,
    pub tau: Option<usize>,
    pub components: Option<usize>,
    pub wosm: Option<RankSummary>,
}

impl Replication {
    pub fn value(&self, metric: Metric, d: usize) -> Option<f64> {
        match metric {
            Metric::RMen => self.mosm.map(|s| s.r_men),
            Metric::RWomen => self.mosm.map(|s| s.r_women),
            Metric::DeltaM => self.mosm.map(|s| s.delta_m as f64),
            Metric::DeltaW => self.mosm.map(|s| s.delta_w as f64),
            Metric::Tau => self.tau.map(|t| t as f64),
            Metric::Components => self.components.map(|c| c as f64),
            Metric::RMenNormalized => self.mosm.map(|s| s.r_men / d as f64),
            Metric::RMenWosm => self.wosm.map(|s| s.r_men),
            Metric::RWomenWosm => self.wosm.map(|s| s.r_women),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation (0 for a single replication).
    pub std: f64,
    /// Nearest-rank 10th percentile.
    pub p10: f64,
    /// Nearest-rank 90th percentile.
    pub p90: f64,
    pub count: usize,
}

impl MetricStats {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return MetricStats {
                mean: f64::NAN,
                std: f64::NAN,
                p10: f64::NAN,
                p90: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        MetricStats {
            mean,
            std,
            p10: nearest_rank(&sorted, 0.1),
            p90: nearest_rank(&sorted, 0.9),
            count,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Aggregates for one `(n, k, d)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub k: i64,
    pub d: usize,
    pub reps: usize,
    pub metrics: BTreeMap<Metric, MetricStats>,
}

impl SummaryStats {
    pub fn from_replications(cfg: &MarketConfig, reps: &[Replication]) -> Self {
        let all = [
            Metric::RMen,
            Metric::RWomen,
            Metric::DeltaM,
            Metric::DeltaW,
            Metric::Tau,
            Metric::Components,
            Metric::RMenNormalized,
            Metric::RMenWosm,
            Metric::RWomenWosm,
        ];
        let mut metrics = BTreeMap::new();
        for metric in all {
            let values: Option<Vec<f64>> = reps.iter().map(|r| r.value(metric, cfg.d)).collect();
            if let Some(values) = values.filter(|v| !v.is_empty()) {
                metrics.insert(metric, MetricStats::from_values(&values));
            }
        }
        SummaryStats {
            n: cfg.n,
            k: cfg.k,
            d: cfg.d,
            reps: reps.len(),
            metrics,
        }
    }

    pub fn get(&self, metric: Metric) -> Option<&MetricStats> {
        self.metrics.get(&metric)
    }

    pub fn mean(&self, metric: Metric) -> f64 {
        self.get(metric).map_or(f64::NAN, |m| m.mean)
    }
}

pub const SWEEP_COLUMNS: [&str; 9] = ["n", "k", "d", "reps", "metric", "mean", "std", "p10", "p90"];

/// Long-format table: one row per cell and metric.
pub fn sweep_table(cells: &[SummaryStats]) -> Table {
    let mut table = Table::new(SWEEP_COLUMNS);
    for cell in cells {
        for (metric, s) in &cell.metrics {
            table.push(vec![
                cell.n.into(),
                cell.k.into(),
                cell.d.into(),
                cell.reps.into(),
                metric.name().into(),
                s.mean.into(),
                s.std.into(),
                s.p10.into(),
                s.p90.into(),
            ]);
        }
    }
    table
}

/// Which per-replication computations a probe needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Needs {
    matching: bool,
    components: bool,
    wosm: bool,
}

/// Monte Carlo runner owning a worker pool.
#[derive(Clone)]
pub struct Harness {
    pool: Arc<ThreadPool>,
    workers: usize,
    pub engine: Engine,
    /// Also run woman-proposing DA (eager engine only).
    pub with_wosm: bool,
}

impl std::fmt::Debug for Harness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Harness")
            .field("workers", &self.workers)
            .field("engine", &self.engine)
            .field("with_wosm", &self.with_wosm)
            .finish()
    }
}

impl Harness {
    /// `workers = None` uses the available parallelism.
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let workers = workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
        Ok(Harness {
            pool: Arc::new(pool),
            workers,
            engine: Engine::Eager,
            with_wosm: false,
        })
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_wosm(mut self, on: bool) -> Self {
        self.with_wosm = on;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Seed of replication `rep` in cell `cfg`.
    pub fn replication_seed(cfg: &MarketConfig, master_seed: u64, rep: usize) -> u64 {
        derive_seed(
            master_seed,
            &[cfg.n as u64, cfg.k as u64, cfg.d as u64, rep as u64],
        )
    }

    /// Raw per-replication measurements, in replication order.
    pub fn replicate(
        &self,
        cfg: &MarketConfig,
        reps: usize,
        master_seed: u64,
    ) -> Result<Vec<Replication>> {
        let needs = Needs {
            matching: true,
            components: self.engine == Engine::Eager,
            wosm: self.with_wosm && self.engine == Engine::Eager,
        };
        self.replicate_with(cfg, reps, master_seed, needs)
    }

    fn replicate_with(
        &self,
        cfg: &MarketConfig,
        reps: usize,
        master_seed: u64,
        needs: Needs,
    ) -> Result<Vec<Replication>> {
        cfg.validate()?;
        if reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        // The lazy engine never builds the graph, so graph-only work stays eager.
        let engine = if needs.matching {
            self.engine
        } else {
            Engine::Eager
        };
        self.pool.install(|| {
            (0..reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = Self::replication_seed(cfg, master_seed, rep);
                    one_replication(&cfg.with_seed(seed), rep, engine, needs)
                })
                .collect()
        })
    }

    /// Run `f(0..count)` on the pool and collect results in index order.
    pub fn run_indexed<T, F>(&self, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.pool
            .install(|| (0..count).into_par_iter().map(f).collect())
    }

    /// Hop-distance fractions over `reps` markets; `sample` sources per
    /// market (`None` for every man).
    pub fn hop_stats(
        &self,
        cfg: &MarketConfig,
        reps: usize,
        sample: Option<usize>,
        max_hops: usize,
        master_seed: u64,
    ) -> Result<HopStats> {
        cfg.validate()?;
        if reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        let sample = sample.unwrap_or(cfg.num_men());
        let per_rep = self.run_indexed(reps, |rep| {
            let seed = Self::replication_seed(cfg, master_seed, rep);
            let mut rng = rng_from_seed(seed);
            let market = generate_market(&cfg.with_seed(seed), &mut rng)?;
            hop_fractions(&market, sample, max_hops, &mut rng)
        })?;
        let within = (0..max_hops)
            .map(|h| MetricStats::from_values(&per_rep.iter().map(|f| f[h]).collect::<Vec<_>>()))
            .collect();
        Ok(HopStats {
            n: cfg.n,
            k: cfg.k,
            d: cfg.d,
            reps,
            sample,
            within,
        })
    }

    pub fn run_replications(
        &self,
        cfg: &MarketConfig,
        reps: usize,
        master_seed: u64,
    ) -> Result<SummaryStats> {
        let raw = self.replicate(cfg, reps, master_seed)?;
        Ok(SummaryStats::from_replications(cfg, &raw))
    }

    pub fn sweep_degree(
        &self,
        n: usize,
        k: i64,
        d_values: &[usize],
        reps: usize,
        master_seed: u64,
    ) -> Result<Vec<SummaryStats>> {
        d_values
            .iter()
            .map(|&d| self.run_replications(&MarketConfig::new(n, k, d, 0)?, reps, master_seed))
            .collect()
    }

    pub fn sweep_imbalance(
        &self,
        n: usize,
        d: usize,
        k_values: &[i64],
        reps: usize,
        master_seed: u64,
    ) -> Result<Vec<SummaryStats>> {
        for &k in k_values {
            if n as i64 + k < 1 {
                return Err(Error::InvalidConfig(format!(
                    "imbalance sweep needs at least one man (n={n}, k={k})"
                )));
            }
        }
        k_values
            .iter()
            .map(|&k| self.run_replications(&MarketConfig::new(n, k, d, 0)?, reps, master_seed))
            .collect()
    }

    /// Monte Carlo estimate of the threshold statistic at degree `d`.
    pub fn threshold_statistic(
        &self,
        spec: &ThresholdSpec,
        d: usize,
        master_seed: u64,
    ) -> Result<f64> {
        let cfg = MarketConfig::new(spec.n, spec.k, d, 0)?;
        let needs = match spec.kind {
            ThresholdKind::Connectivity => Needs {
                matching: false,
                components: true,
                wosm: false,
            },
            _ => Needs {
                matching: true,
                components: false,
                wosm: false,
            },
        };
        let raw = self.replicate_with(&cfg, spec.reps, master_seed, needs)?;
        let mean = |m: Metric| {
            raw.iter()
                .map(|r| r.value(m, d).expect("measured"))
                .sum::<f64>()
                / raw.len() as f64
        };
        Ok(match spec.kind {
            ThresholdKind::RankGap => mean(Metric::RWomen) / mean(Metric::RMen),
            ThresholdKind::UnmatchedMen => mean(Metric::DeltaM),
            ThresholdKind::Connectivity => mean(Metric::Components),
        })
    }

    /// Smallest `d` in `[d_lo, d_hi]` where the estimated predicate holds,
    /// found by bisection with one cached probe per degree.
    pub fn find_threshold(
        &self,
        spec: &ThresholdSpec,
        master_seed: u64,
    ) -> Result<ThresholdResult> {
        spec.validate()?;
        let mut probes: BTreeMap<usize, f64> = BTreeMap::new();
        let mut probe = |d: usize| -> Result<bool> {
            let value = match probes.get(&d) {
                Some(&v) => v,
                None => {
                    let v = self.threshold_statistic(spec, d, master_seed)?;
                    probes.insert(d, v);
                    v
                }
            };
            Ok(spec.holds(value))
        };
        let lo_holds = probe(spec.d_lo)?;
        let hi_holds = probe(spec.d_hi)?;
        if lo_holds || !hi_holds {
            return Err(Error::NotBracketed {
                kind: spec.kind.name().into(),
                lo: spec.d_lo,
                lo_value: probes[&spec.d_lo],
                hi: spec.d_hi,
                hi_value: probes[&spec.d_hi],
            });
        }
        let (mut lo, mut hi) = (spec.d_lo, spec.d_hi);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if probe(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(ThresholdResult {
            kind: spec.kind,
            n: spec.n,
            reps: spec.reps,
            d_star: hi,
            probes: probes.into_iter().collect(),
        })
    }
}

fn one_replication(
    cfg: &MarketConfig,
    rep: usize,
    engine: Engine,
    needs: Needs,
) -> Result<Replication> {
    let mut rng = rng_from_seed(cfg.seed);
    let mut out = Replication {
        rep,
        seed: cfg.seed,
        mosm: None,
        tau: None,
        components: None,
        wosm: None,
    };
    match engine {
        Engine::Eager => {
            let market = generate_market(cfg, &mut rng)?;
            if needs.matching {
                let r = run_mosm(&market);
                out.mosm = Some(summarize(&market, &r.matching)?);
                out.tau = Some(r.trace.tau);
            }
            if needs.components {
                out.components = Some(count_components(&market));
            }
            if needs.wosm {
                out.wosm = Some(summarize(&market, &run_wosm(&market).matching)?);
            }
        }
        Engine::Lazy => {
            let lazy = run_mosm_lazy(cfg, &mut rng)?;
            out.tau = Some(lazy.result.trace.tau);
            out.mosm = Some(summarize_lazy(&lazy));
        }
    }
    Ok(out)
}

/// `within[h - 1]` summarizes the fraction of pairs at most `h` hops apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopStats {
    pub n: usize,
    pub k: i64,
    pub d: usize,
    pub reps: usize,
    pub sample: usize,
    pub within: Vec<MetricStats>,
}

pub const HOP_COLUMNS: [&str; 8] = ["n", "k", "d", "reps", "sample", "hops", "mean", "std"];

pub fn hop_table(stats: &HopStats) -> Table {
    let mut table = Table::new(HOP_COLUMNS);
    for (h, s) in stats.within.iter().enumerate() {
        table.push(vec![
            stats.n.into(),
            stats.k.into(),
            stats.d.into(),
            stats.reps.into(),
            stats.sample.into(),
            (h + 1).into(),
            s.mean.into(),
            s.std.into(),
        ]);
    }
    table
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum ThresholdKind {
    /// `E[R_WOMEN] / E[R_MEN] >= target` (default 1.15).
    RankGap,
    /// `E[δm] <= target` (default 0.5).
    UnmatchedMen,
    /// `E[components] <= target` (default 2).
    Connectivity,
}

impl ThresholdKind {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdKind::RankGap => "rank_gap",
            ThresholdKind::UnmatchedMen => "unmatched_men",
            ThresholdKind::Connectivity => "connectivity",
        }
    }

    pub fn default_target(self) -> f64 {
        match self {
            ThresholdKind::RankGap => 1.15,
            ThresholdKind::UnmatchedMen => 0.5,
            ThresholdKind::Connectivity => 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub kind: ThresholdKind,
    pub target: f64,
    pub n: usize,
    /// Imbalance; thresholds are defined with one man fewer than women.
    pub k: i64,
    pub reps: usize,
    pub d_lo: usize,
    pub d_hi: usize,
}

impl ThresholdSpec {
    /// Default target, `k = -1`, search over `[1, n]`.
    pub fn new(kind: ThresholdKind, n: usize, reps: usize) -> Self {
        ThresholdSpec {
            kind,
            target: kind.default_target(),
            n,
            k: -1,
            reps,
            d_lo: 1,
            d_hi: n,
        }
    }

    pub fn with_bounds(mut self, d_lo: usize, d_hi: usize) -> Self {
        self.d_lo = d_lo;
        self.d_hi = d_hi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_lo >= 1 && self.d_lo < self.d_hi && self.d_hi <= self.n) {
            return Err(Error::InvalidConfig(format!(
                "threshold bounds must satisfy 1 <= d_lo < d_hi <= n (got [{}, {}], n={})",
                self.d_lo, self.d_hi, self.n
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        MarketConfig::new(self.n, self.k, self.d_hi, 0).map(|_| ())
    }

    pub fn holds(&self, value: f64) -> bool {
        match self.kind {
            ThresholdKind::RankGap => value >= self.target,
            ThresholdKind::UnmatchedMen | ThresholdKind::Connectivity => value <= self.target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub kind: ThresholdKind,
    pub n: usize,
    pub reps: usize,
    pub d_star: usize,
    /// Every degree probed with its estimated statistic, ascending in `d`.
    pub probes: Vec<(usize, f64)>,
}

pub const THRESHOLD_COLUMNS: [&str; 5] = ["kind", "n", "reps", "d_star", "probes"];

pub fn threshold_table(results: &[ThresholdResult]) -> Table {
    let mut table = Table::new(THRESHOLD_COLUMNS);
    for r in results {
        table.push(vec![
            Cell::from(r.kind.name()),
            r.n.into(),
            r.reps.into(),
            r.d_star.into(),
            Cell::Text(
                r.probes
                    .iter()
                    .map(|(d, v)| format!("{d}:{}", format_sig6(*v)))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
        ]);
    }
    table
}

/// Default-harness shorthand for [`Harness::run_replications`].
pub fn run_replications(cfg: &MarketConfig, reps: usize, master_seed: u64) -> Result<SummaryStats> {
    Harness::new(None)?.run_replications(cfg, reps, master_seed)
}

/// Default-harness shorthand for [`Harness::find_threshold`].
pub fn find_threshold(spec: &ThresholdSpec, master_seed: u64) -> Result<ThresholdResult> {
    Harness::new(None)?.find_threshold(spec, master_seed)
}
