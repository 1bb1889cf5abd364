use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::master::{loser_tree_merge, Master};
use crate::model::{CostParams, ModelParams};
use crate::proto::ResultItem;
use crate::qlang::{Query, SearchCondition};

/// Network service time from a client/master/slave decomposition: the part
/// of the round trip `c` not spent in master (`m`) or slave (`s`), plus the
/// RPC overhead `o = m - m_minus_o` counted once on each side.
pub fn network_service_from_decomposition(
    c: f64,
    m: f64,
    s: f64,
    m_minus_o: f64,
) -> Result<f64, BenchError> {
    if c < m + s {
        return Err(BenchError::Inconsistent(format!(
            "round trip {c} < master {m} + slave {s}"
        )));
    }
    if m < m_minus_o {
        return Err(BenchError::Inconsistent(format!(
            "master {m} < master-minus-overhead {m_minus_o}"
        )));
    }
    let o = m - m_minus_o;
    Ok((c - m - s) + 2.0 * o)
}

/// Fits per-item merge cost `height * t_comparison + t_base` (ms) by timing
/// loser-tree merges over 2, 16 and 128 streams.
pub fn loser_tree_cost(k: usize, trials: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for ns in [2usize, 16, 128] {
        let streams: Vec<Vec<ResultItem>> = (0..ns)
            .map(|s| {
                let mut r: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                r.sort_by(|a, b| b.total_cmp(a));
                r.into_iter()
                    .enumerate()
                    .map(|(i, rank)| ResultItem {
                        doc_key: format!("s{s}-{i}"),
                        rank,
                    })
                    .collect()
            })
            .collect();
        let start = Instant::now();
        for _ in 0..trials {
            std::hint::black_box(loser_tree_merge(&streams, k).expect("sorted streams"));
        }
        let per_item = start.elapsed().as_secs_f64() * 1000.0 / (trials * k) as f64;
        pts.push((ns.next_power_of_two().trailing_zeros() as f64, per_item));
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let slope = (sxy / sxx).max(0.0);
    (slope, (my - slope * mx).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeStats {
    pub runs: usize,
    pub mean_total_ms: f64,
    pub cv_total: f64,
    /// Mean over slaves and runs of per-slave master handling.
    pub mean_master_ms: f64,
    pub mean_slave_ms: f64,
    pub mean_round_trip_ms: f64,
    /// Master time outside the fan-out wait and merge.
    pub mean_outside_ms: f64,
    pub st_network_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: ModelParams,
    pub per_k: BTreeMap<u32, ProbeStats>,
    pub mean_ping_ms: f64,
    /// Measurements whose coefficient of variation exceeds 25%.
    pub noisy: Vec<String>,
    pub notes: Vec<String>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Measures cost entries on an otherwise idle cluster. `probes` maps each
/// top-k to the queries timed for it; each is run `repeats` times, one at a
/// time. A top-10 probe set is required since weights are relative to it.
pub async fn calibrate(
    master: &Master,
    probes: &BTreeMap<u32, Vec<Query>>,
    repeats: usize,
    qmr: BTreeMap<(SearchCondition, u32), f64>,
) -> Result<Calibration, BenchError> {
    if !probes.contains_key(&10) {
        return Err(BenchError::Spec("calibration needs top-10 probes".into()));
    }
    let ns = master.client().len();
    // Connection setup would otherwise land in the first top-k timed.
    master
        .client()
        .connect_all()
        .await
        .map_err(crate::master::MasterError::from)?;
    let mut per_k = BTreeMap::new();
    let mut noisy = Vec::new();
    for (&k, queries) in probes {
        if queries.is_empty() {
            return Err(BenchError::Spec(format!("no probes for top-{k}")));
        }
        let (mut totals, mut m, mut s, mut rt, mut outside) =
            (vec![], vec![], vec![], vec![], vec![]);
        for _ in 0..repeats.max(1) {
            for q in queries {
                let r = master.execute(q).await?;
                let t = &r.timing;
                totals.push(ms(t.total));
                let max_rt = t
                    .per_slave
                    .iter()
                    .map(|p| p.round_trip)
                    .max()
                    .unwrap_or_default();
                outside.push(ms(t.total.saturating_sub(max_rt + t.merge)));
                for p in &t.per_slave {
                    m.push(ms(p.master));
                    s.push(ms(p.slave));
                    rt.push(ms(p.round_trip));
                }
            }
        }
        let mt = mean(&totals);
        let sd =
            (totals.iter().map(|x| (x - mt).powi(2)).sum::<f64>() / totals.len() as f64).sqrt();
        let cv = if mt > 0.0 { sd / mt } else { 0.0 };
        if cv > 0.25 {
            noisy.push(format!(
                "top-{k}: total time coefficient of variation {cv:.2}"
            ));
        }
        let (mm, sm, rm) = (mean(&m), mean(&s), mean(&rt));
        // In-process timers cannot separate RPC overhead from master work, so O is taken as 0.
        let st_net = network_service_from_decomposition(rm.max(mm + sm), mm, sm, mm)?;
        per_k.insert(
            k,
            ProbeStats {
                runs: totals.len(),
                mean_total_ms: mt,
                cv_total: cv,
                mean_master_ms: mm,
                mean_slave_ms: sm,
                mean_round_trip_ms: rm,
                mean_outside_ms: mean(&outside),
                st_network_ms: st_net,
            },
        );
    }

    let mut pings = Vec::new();
    for i in 0..ns {
        for _ in 0..5 {
            pings.push(ms(master
                .client()
                .ping(i)
                .await
                .map_err(crate::master::MasterError::from)?));
        }
    }

    let base = per_k[&10];
    let (t_comparison, t_base) = loser_tree_cost(100, 200, 1);
    let by_k = |f: &dyn Fn(&ProbeStats) -> f64| {
        per_k
            .iter()
            .map(|(&k, p)| (k, f(p)))
            .collect::<BTreeMap<u32, f64>>()
    };
    let zeros = by_k(&|_| 0.0);
    let net10 = base.st_network_ms;
    let params = ModelParams {
        nm: 1,
        ncm: std::thread::available_parallelism().map_or(1, |n| n.get() as u32),
        ns: ns as u32,
        // Every slave has its own connection, so replies do not share a link.
        nh: ns as u32,
        alpha: 0.25,
        qmr,
        w_master: by_k(&|p| {
            if base.mean_total_ms > 0.0 {
                p.mean_total_ms / base.mean_total_ms
            } else {
                1.0
            }
        }),
        w_network: by_k(&|p| {
            if net10 > 0.0 {
                p.st_network_ms / net10
            } else {
                1.0
            }
        }),
        cost: CostParams {
            t_parent_proc: base.mean_outside_ms,
            t_child_proc: 0.0,
            t_master_rpc: by_k(&|p| p.mean_master_ms),
            t_comparison,
            t_base,
            t_per_context_switch: 0.0,
            ncs_base: zeros.clone(),
            ncs_per_slave: zeros,
            st_network: by_k(&|p| p.st_network_ms),
        },
    };
    params.validate()?;
    Ok(Calibration {
        params,
        per_k,
        mean_ping_ms: mean(&pings),
        noisy,
        notes: vec![
            "master and slave times come from in-process wall-clock timers, not process CPU time".into(),
            "context switches are not observable in-process; their cost is folded into t_parent_proc and t_master_rpc".into(),
            "RPC overhead inside master time is taken as 0 in the network decomposition".into(),
        ],
    })
}
