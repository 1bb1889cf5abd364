//! Response-time model for a master/slave search cluster.
//!
//! Master CPU, master memory bus and network hub are M/D/1 queues fed by a
//! weighted arrival rate: every query type is converted into equivalent
//! single-keyword top-10 queries. The slowest slave is not modeled
//! analytically; it is estimated from measured slave sojourn samples by
//! partitioning them into groups of `ns` and averaging the group maxima.
//!
//! All times are milliseconds and all rates are queries per millisecond.

mod io;

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::qlang::SearchCondition;

pub use io::{
    read_samples, samples_from_csv, samples_from_records, samples_to_csv, samples_to_records,
    write_samples, ParamsError, SampleRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    MasterCpu,
    MasterMemBus,
    Network,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::MasterCpu,
        Component::MasterMemBus,
        Component::Network,
    ];
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::MasterCpu => "master CPU",
            Component::MasterMemBus => "master memory bus",
            Component::Network => "network hub",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no {table} entry for k={k}")]
    MissingEntry { table: &'static str, k: u32 },
    #[error("{} saturated: utilization {rho:.4} >= 1", component.map_or("queue".to_string(), |c| c.to_string()))]
    Saturated {
        component: Option<Component>,
        rho: f64,
    },
    #[error("alpha {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("measured value {0} must be positive")]
    NonPositiveMeasurement(f64),
    #[error("invalid sample set: {0}")]
    Samples(String),
    #[error("ns={ns} exceeds the {available} samples per query")]
    NsTooLarge { ns: usize, available: usize },
    #[error("no alpha in [0, 1] keeps every load point stable")]
    NoFeasibleAlpha,
}

/// Measured cost constants, in milliseconds (counts for `ncs_*`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    pub t_parent_proc: f64,
    pub t_child_proc: f64,
    pub t_master_rpc: BTreeMap<u32, f64>,
    pub t_comparison: f64,
    pub t_base: f64,
    pub t_per_context_switch: f64,
    pub ncs_base: BTreeMap<u32, f64>,
    pub ncs_per_slave: BTreeMap<u32, f64>,
    pub st_network: BTreeMap<u32, f64>,
}

fn lookup(table: &'static str, m: &BTreeMap<u32, f64>, k: u32) -> Result<f64, ModelError> {
    m.get(&k)
        .copied()
        .ok_or(ModelError::MissingEntry { table, k })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Masters.
    pub nm: u32,
    /// CPU cores per master.
    pub ncm: u32,
    /// Slaves.
    pub ns: u32,
    /// Network hubs.
    pub nh: u32,
    pub alpha: f64,
    pub qmr: BTreeMap<(SearchCondition, u32), f64>,
    pub w_master: BTreeMap<u32, f64>,
    pub w_network: BTreeMap<u32, f64>,
    pub cost: CostParams,
}

fn table(entries: &[(u32, f64)]) -> BTreeMap<u32, f64> {
    entries.iter().copied().collect()
}

impl ModelParams {
    /// Constants measured on a five-slave reference deployment, with an
    /// all single-keyword top-10 workload.
    #[allow(clippy::approx_constant)]
    pub fn five_node_reference() -> ModelParams {
        ModelParams {
            nm: 1,
            ncm: 4,
            ns: 5,
            nh: 1,
            alpha: 0.25,
            qmr: [((SearchCondition::Single, 10), 1.0)].into_iter().collect(),
            w_master: table(&[(10, 1.0), (50, 31.26 / 25.01), (1000, 68.78 / 25.01)]),
            w_network: table(&[(10, 1.0), (50, 0.222 / 0.129), (1000, 0.318 / 0.129)]),
            cost: CostParams {
                t_parent_proc: 1.516,
                t_child_proc: 0.0181,
                t_master_rpc: table(&[(10, 0.01), (50, 0.011), (1000, 0.031)]),
                t_comparison: 0.191e-3,
                t_base: 0.28e-3,
                t_per_context_switch: 15.995e-3,
                ncs_base: table(&[(10, 80.869), (50, 80.869), (1000, 139.903)]),
                ncs_per_slave: table(&[(10, 1.991), (50, 1.991), (1000, 3.444)]),
                st_network: table(&[(10, 0.129), (50, 0.222), (1000, 0.318)]),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParams(m));
        for (name, v) in [
            ("nm", self.nm),
            ("ncm", self.ncm),
            ("ns", self.ns),
            ("nh", self.nh),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ModelError::AlphaOutOfRange(self.alpha));
        }
        if self.qmr.values().any(|&v| !(v >= 0.0)) {
            return bad("query mix ratios must be nonnegative".into());
        }
        let sum: f64 = self.qmr.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("query mix ratios sum to {sum}, not 1"));
        }
        let c = &self.cost;
        let scalars = [
            c.t_parent_proc,
            c.t_child_proc,
            c.t_comparison,
            c.t_base,
            c.t_per_context_switch,
        ];
        let tables = [
            &c.t_master_rpc,
            &c.ncs_base,
            &c.ncs_per_slave,
            &c.st_network,
            &self.w_master,
            &self.w_network,
        ];
        if scalars
            .iter()
            .chain(tables.iter().flat_map(|t| t.values()))
            .any(|&v| !(v >= 0.0) || !v.is_finite())
        {
            return bad("times, counts and weights must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// Distinct top-k values in the query mix.
    pub fn top_k_types(&self) -> Vec<u32> {
        let mut ks: Vec<u32> = self.qmr.keys().map(|&(_, k)| k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    fn weights(&self, c: Component) -> (&'static str, &BTreeMap<u32, f64>) {
        match c {
            Component::MasterCpu | Component::MasterMemBus => ("w_master", &self.w_master),
            Component::Network => ("w_network", &self.w_network),
        }
    }

    pub fn weight(&self, c: Component, k: u32) -> Result<f64, ModelError> {
        let (name, w) = self.weights(c);
        lookup(name, w, k)
    }
}

/// Unweighted per-queue arrival rate.
pub fn arrival_rate(c: Component, lambda: f64, p: &ModelParams) -> f64 {
    match c {
        Component::MasterCpu => lambda / (p.ncm as f64 * p.nm as f64),
        Component::MasterMemBus => lambda / p.nm as f64,
        Component::Network => lambda * p.ns as f64 / p.nh as f64,
    }
}

/// Sum over top-k types of weight times that type's share of the mix.
pub fn weight_multiplier(c: Component, p: &ModelParams) -> Result<f64, ModelError> {
    let mut per_k: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(_, k), &r) in &p.qmr {
        *per_k.entry(k).or_default() += r;
    }
    per_k
        .into_iter()
        .map(|(k, share)| Ok(p.weight(c, k)? * share))
        .sum()
}

pub fn weighted_arrival_rate(
    c: Component,
    lambda: f64,
    p: &ModelParams,
) -> Result<f64, ModelError> {
    Ok(arrival_rate(c, lambda, p) * weight_multiplier(c, p)?)
}

/// ⌈log₂ n⌉, the height of a loser tree over `n` leaves.
pub fn ceil_log2(n: u32) -> u32 {
    if n <= 1 {
        0
    } else {
        32 - (n - 1).leading_zeros()
    }
}

pub fn merge_time(k: u32, ns: u32, cost: &CostParams) -> f64 {
    k as f64 * (ceil_log2(ns) as f64 * cost.t_comparison + cost.t_base)
}

pub fn context_switch_time(k: u32, ns: u32, cost: &CostParams) -> Result<f64, ModelError> {
    let base = lookup("ncs_base", &cost.ncs_base, k)?;
    let per = lookup("ncs_per_slave", &cost.ncs_per_slave, k)?;
    Ok(cost.t_per_context_switch * (base + ns as f64 * per))
}

/// Time the master spends on one query of type top-`k`.
pub fn master_service_time(k: u32, ns: u32, cost: &CostParams) -> Result<f64, ModelError> {
    let rpc = lookup("t_master_rpc", &cost.t_master_rpc, k)?;
    Ok(cost.t_parent_proc
        + (cost.t_child_proc + rpc) * ns as f64
        + merge_time(k, ns, cost)
        + context_switch_time(k, ns, cost)?)
}

/// Splits master service time into (CPU, memory bus) shares.
pub fn split_alpha(st_master: f64, alpha: f64) -> Result<(f64, f64), ModelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ModelError::AlphaOutOfRange(alpha));
    }
    Ok((st_master * alpha, st_master * (1.0 - alpha)))
}

/// Mean number in an M/D/1 system.
pub fn md1_queue_length(lambda: f64, st: f64) -> Result<f64, ModelError> {
    let rho = lambda * st;
    if rho >= 1.0 {
        return Err(ModelError::Saturated {
            component: None,
            rho,
        });
    }
    Ok(rho * rho / (2.0 * (1.0 - rho)) + rho)
}

/// Top-10 service time of a queue; every query is normalized to top-10 units.
pub fn service_time(c: Component, p: &ModelParams) -> Result<f64, ModelError> {
    match c {
        Component::Network => lookup("st_network", &p.cost.st_network, 10),
        _ => {
            let (cpu, mem) = split_alpha(master_service_time(10, p.ns, &p.cost)?, p.alpha)?;
            Ok(if c == Component::MasterCpu { cpu } else { mem })
        }
    }
}

pub fn component_queue_length(
    c: Component,
    lambda: f64,
    p: &ModelParams,
) -> Result<f64, ModelError> {
    let rate = weighted_arrival_rate(c, lambda, p)?;
    md1_queue_length(rate, service_time(c, p)?).map_err(|e| match e {
        ModelError::Saturated { rho, .. } => ModelError::Saturated {
            component: Some(c),
            rho,
        },
        e => e,
    })
}

/// Mean sojourn of a top-`k` query in queue `c`.
pub fn sojourn_time(c: Component, k: u32, lambda: f64, p: &ModelParams) -> Result<f64, ModelError> {
    let rate = weighted_arrival_rate(c, lambda, p)?;
    let l = component_queue_length(c, lambda, p)?;
    // L/λ' tends to the service time as the load vanishes.
    let per_unit = if rate > 0.0 {
        l / rate
    } else {
        service_time(c, p)?
    };
    let hub_share = match c {
        Component::Network => p.ns as f64 / p.nh as f64,
        _ => 1.0,
    };
    Ok(hub_share * per_unit * p.weight(c, k)?)
}

/// Per-query slave sojourn times, `np * r` each, ordered by
/// (repetition, slave).
#[derive(Debug, Clone, PartialEq)]
pub struct SojournSampleSet {
    np: usize,
    r: usize,
    per_query: Vec<Vec<f64>>,
}

impl SojournSampleSet {
    pub fn new(
        np: usize,
        r: usize,
        per_query: Vec<Vec<f64>>,
    ) -> Result<SojournSampleSet, ModelError> {
        if np == 0 || r == 0 {
            return Err(ModelError::Samples("np and r must be positive".into()));
        }
        for (q, s) in per_query.iter().enumerate() {
            if s.len() != np * r {
                return Err(ModelError::Samples(format!(
                    "query {q} has {} samples, expected {}",
                    s.len(),
                    np * r
                )));
            }
            if let Some(v) = s.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(ModelError::Samples(format!(
                    "query {q} has non-positive time {v}"
                )));
            }
        }
        Ok(SojournSampleSet { np, r, per_query })
    }

    pub fn np(&self) -> usize {
        self.np
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn per_query(&self) -> &[Vec<f64>] {
        &self.per_query
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }
}

/// Expected maximum over `ns` slaves: each query's samples are cut into
/// consecutive groups of `ns` (a short trailing group is dropped), group
/// maxima are averaged, and the result is averaged over queries.
pub fn slave_max_partitioning(samples: &SojournSampleSet, ns: usize) -> Result<f64, ModelError> {
    let available = samples.np * samples.r;
    if ns == 0 || ns > available {
        return Err(ModelError::NsTooLarge { ns, available });
    }
    if samples.per_query.is_empty() {
        return Err(ModelError::Samples("no queries".into()));
    }
    let per_query = samples.per_query.iter().map(|s| {
        let groups = s.chunks_exact(ns);
        let n = groups.len() as f64;
        groups
            .map(|g| g.iter().copied().fold(f64::MIN, f64::max))
            .sum::<f64>()
            / n
    });
    Ok(per_query.sum::<f64>() / samples.per_query.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseEstimate {
    pub master_cpu: f64,
    pub master_mem_bus: f64,
    pub network: f64,
    /// The larger of the master branch and the network branch.
    pub master_network: f64,
    pub slave_max: f64,
    pub total: f64,
}

/// Queueing terms for a top-`k` query plus a given slave-max time.
pub fn estimate_response(
    k: u32,
    lambda: f64,
    p: &ModelParams,
    slave_max: f64,
) -> Result<ResponseEstimate, ModelError> {
    let master_cpu = sojourn_time(Component::MasterCpu, k, lambda, p)?;
    let master_mem_bus = sojourn_time(Component::MasterMemBus, k, lambda, p)?;
    let network = sojourn_time(Component::Network, k, lambda, p)?;
    let master_network = (master_cpu + master_mem_bus).max(network);
    Ok(ResponseEstimate {
        master_cpu,
        master_mem_bus,
        network,
        master_network,
        slave_max,
        total: master_network + slave_max,
    })
}

/// Mean total response time of `(sct, k)` queries at load `lambda`, with the
/// slave-max term estimated from `samples` measured for that query type.
pub fn total_response_time(
    _sct: SearchCondition,
    k: u32,
    lambda: f64,
    p: &ModelParams,
    samples: &SojournSampleSet,
) -> Result<f64, ModelError> {
    let slave_max = slave_max_partitioning(samples, p.ns as usize)?;
    Ok(estimate_response(k, lambda, p, slave_max)?.total)
}

/// Mix-weighted mean response over every `(sct, k)` in the query mix.
pub fn estimate_mix(
    lambda: f64,
    p: &ModelParams,
    samples: &BTreeMap<(SearchCondition, u32), SojournSampleSet>,
) -> Result<ResponseEstimate, ModelError> {
    let mut acc = ResponseEstimate {
        master_cpu: 0.0,
        master_mem_bus: 0.0,
        network: 0.0,
        master_network: 0.0,
        slave_max: 0.0,
        total: 0.0,
    };
    for (&(sct, k), &share) in &p.qmr {
        if share == 0.0 {
            continue;
        }
        let s = samples
            .get(&(sct, k))
            .ok_or_else(|| ModelError::Samples(format!("no samples for {sct} top-{k}")))?;
        let e = estimate_response(k, lambda, p, slave_max_partitioning(s, p.ns as usize)?)?;
        acc.master_cpu += share * e.master_cpu;
        acc.master_mem_bus += share * e.master_mem_bus;
        acc.network += share * e.network;
        acc.master_network += share * e.master_network;
        acc.slave_max += share * e.slave_max;
        acc.total += share * e.total;
    }
    Ok(acc)
}

/// `|estimated - measured| / measured`.
pub fn estimation_error(estimated: f64, measured: f64) -> Result<f64, ModelError> {
    if !(measured > 0.0) {
        return Err(ModelError::NonPositiveMeasurement(measured));
    }
    Ok((estimated - measured).abs() / measured)
}

/// Measured master-plus-network time at one load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredPoint {
    pub lambda: f64,
    pub master_network: f64,
}

fn mix_master_network(lambda: f64, p: &ModelParams) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (&(_, k), &share) in &p.qmr {
        if share > 0.0 {
            total += share * estimate_response(k, lambda, p, 0.0)?.master_network;
        }
    }
    Ok(total)
}

/// Grid search over α in steps of 0.01 minimizing the mean estimation error
/// of the master-plus-network time. Without data the conventional 0.25 is
/// returned.
pub fn fit_alpha(points: &[MeasuredPoint], p: &ModelParams) -> Result<f64, ModelError> {
    if points.is_empty() {
        return Ok(0.25);
    }
    let mut best: Option<(f64, f64)> = None;
    let mut trial = p.clone();
    for step in 0..=100 {
        trial.alpha = step as f64 / 100.0;
        let errs: Result<Vec<f64>, ModelError> = points
            .iter()
            .map(|pt| estimation_error(mix_master_network(pt.lambda, &trial)?, pt.master_network))
            .collect();
        let errs = match errs {
            Ok(e) => e,
            Err(ModelError::Saturated { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        if best.is_none_or(|(_, b)| mean < b) {
            best = Some((trial.alpha, mean));
        }
    }
    best.map(|(a, _)| a).ok_or(ModelError::NoFeasibleAlpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Md1SimResult {
    pub arrivals: u64,
    /// Time-average number in the system.
    pub mean_queue_length: f64,
    pub mean_sojourn: f64,
}

/// Single FIFO server with exponential inter-arrivals and constant service.
pub fn md1_simulate(lambda: f64, st: f64, arrivals: u64, seed: u64) -> Md1SimResult {
    if arrivals == 0 || lambda <= 0.0 {
        return Md1SimResult {
            arrivals: 0,
            mean_queue_length: 0.0,
            mean_sojourn: 0.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(lambda).expect("positive rate");
    let mut clock = 0.0;
    let mut server_free = 0.0f64;
    let mut sojourn_sum = 0.0;
    for _ in 0..arrivals {
        clock += gap.sample(&mut rng);
        let start = server_free.max(clock);
        server_free = start + st;
        sojourn_sum += server_free - clock;
    }
    // Each customer adds its sojourn to the area under N(t); the horizon ends
    // when the last customer leaves.
    Md1SimResult {
        arrivals,
        mean_queue_length: sojourn_sum / server_free,
        mean_sojourn: sojourn_sum / arrivals as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log2_values() {
        let got: Vec<u32> = [1, 2, 3, 4, 5, 8, 9, 300]
            .iter()
            .map(|&n| ceil_log2(n))
            .collect();
        assert_eq!(got, [0, 1, 2, 2, 3, 3, 4, 9]);
    }

    #[test]
    fn hand_partition_example() {
        let s = SojournSampleSet::new(2, 2, vec![vec![3.0, 5.0, 2.0, 7.0]]).unwrap();
        assert_eq!(slave_max_partitioning(&s, 2).unwrap(), 6.0);
        assert_eq!(slave_max_partitioning(&s, 1).unwrap(), 4.25);
        assert!(matches!(
            slave_max_partitioning(&s, 5),
            Err(ModelError::NsTooLarge { .. })
        ));
    }

    #[test]
    fn saturation_is_an_error() {
        assert!(matches!(
            md1_queue_length(1.0, 1.0),
            Err(ModelError::Saturated { .. })
        ));
        let p = ModelParams::five_node_reference();
        let st = service_time(Component::MasterMemBus, &p).unwrap();
        let err = component_queue_length(Component::MasterMemBus, 1.0 / st, &p).unwrap_err();
        assert!(matches!(
            err,
            ModelError::Saturated {
                component: Some(Component::MasterMemBus),
                ..
            }
        ));
    }

    #[test]
    fn zero_load_gives_service_time() {
        let p = ModelParams::five_node_reference();
        for c in Component::ALL {
            assert_eq!(component_queue_length(c, 0.0, &p).unwrap(), 0.0);
        }
        let x = sojourn_time(Component::MasterCpu, 10, 0.0, &p).unwrap();
        assert_eq!(x, service_time(Component::MasterCpu, &p).unwrap());
    }

    #[test]
    fn simulation_is_deterministic() {
        assert_eq!(
            md1_simulate(0.5, 1.0, 1000, 3),
            md1_simulate(0.5, 1.0, 1000, 3)
        );
        assert_eq!(md1_simulate(0.5, 1.0, 0, 3).mean_queue_length, 0.0);
    }

    #[test]
    fn reference_params_validate() {
        ModelParams::five_node_reference().validate().unwrap();
    }
}
