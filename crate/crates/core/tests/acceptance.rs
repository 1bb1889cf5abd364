mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use common::{flatten_sort_truncate, naive_intersection, report, slave_max_oracle, BruteForce};
use odys::bench::calibrate::calibrate;
use odys::bench::{
    export_samples, generate_query_set, run_benchmark, warmup, DriverConfig, KeywordPool,
    RunMetrics, WorkloadSpec,
};
use odys::cluster::{Backing, ClusterConfig, LocalCluster};
use odys::corpus::vocabulary_word;
use odys::index::{
    search_limited_embedded, search_limited_join, zigzag_join, Attribute, Cursor, DocId,
    IndexConfig, IrIndex, Posting, PostingList,
};
use odys::master::loser_tree_merge;
use odys::model::{
    ceil_log2, context_switch_time, estimate_response, estimation_error, master_service_time,
    md1_queue_length, md1_simulate, merge_time, slave_max_partitioning, split_alpha,
    total_response_time, weight_multiplier, Component, ModelError, ModelParams, SojournSampleSet,
};
use odys::proto::ResultItem;
use odys::qlang::{Query, Scope, SearchCondition};

fn verdict(n: u32, ok: bool, detail: &str) {
    report(&format!(
        "acceptance {n:>2}: {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    ));
}

fn mixed_queries(n: usize, seed: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = [10u32, 50, 1000];
    (0..n)
        .map(|i| {
            let k = ks[rng.random_range(0..3)];
            // Low word ranks are frequent, so joins and scopes still match.
            let mut word = |hi: usize| vocabulary_word(rng.random_range(0..hi));
            match i % 3 {
                0 => Query::with_condition(SearchCondition::Single, vec![word(400)], None, k),
                1 => {
                    let a = word(60);
                    let mut b = word(200);
                    while b == a {
                        b = word(200);
                    }
                    Query::with_condition(SearchCondition::Multi, vec![a, b], None, k)
                }
                _ => {
                    let kw = word(100);
                    let scope = if rng.random_bool(0.5) {
                        Scope {
                            field: Attribute::SiteId,
                            value: rng.random_range(0..200),
                        }
                    } else {
                        Scope {
                            field: Attribute::DomainId,
                            value: rng.random_range(0..20),
                        }
                    };
                    Query::with_condition(SearchCondition::Limited, vec![kw], Some(scope), k)
                }
            }
            .unwrap()
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn a01_partition_transparency() {
    let start = Instant::now();
    let docs = common::corpus(10_000, 11);
    let oracle = BruteForce::new(&docs);
    let cluster = LocalCluster::start(docs, ClusterConfig::default())
        .await
        .unwrap();
    let queries = mixed_queries(1000, 5);
    let mut mismatches = 0;
    let mut nonempty = 0;
    for q in &queries {
        let got: Vec<(String, f64)> = cluster
            .master()
            .execute(q)
            .await
            .unwrap()
            .items
            .into_iter()
            .map(|i| (i.doc_key, i.rank))
            .collect();
        let want = oracle.search(q);
        nonempty += usize::from(!want.is_empty());
        if got != want {
            mismatches += 1;
        }
    }
    cluster.shutdown().await;
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && elapsed < Duration::from_secs(120);
    verdict(
        1,
        ok,
        &format!(
            "{mismatches} mismatches over 1000 queries ({nonempty} non-empty), {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(nonempty > 500);
    assert!(ok);
}

fn random_list(rng: &mut ChaCha8Rng, universe: u32, density: f64) -> Vec<u32> {
    (0..universe).filter(|_| rng.random_bool(density)).collect()
}

fn posting_list(ids: &[u32], s: usize) -> PostingList {
    let postings = ids
        .iter()
        .map(|&d| Posting {
            doc_id: DocId(d),
            offsets: vec![0],
            embedded: vec![],
        })
        .collect();
    PostingList::new("t".into(), postings, s)
}

#[test]
fn a02_zigzag_join() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut cases = 0;
    for trial in 0..1000 {
        let arity = 2 + trial % 2;
        let lists: Vec<Vec<u32>> = (0..arity)
            .map(|_| {
                let density = [0.01, 0.1, 0.5][rng.random_range(0..3)];
                random_list(&mut rng, 2000, density)
            })
            .collect();
        if lists.iter().any(Vec::is_empty) {
            continue;
        }
        let k = [1usize, 10, 100, 5000][rng.random_range(0..4)];
        let want = naive_intersection(&lists, k);
        for s in [2, 16, 128] {
            cases += 1;
            let pls: Vec<PostingList> = lists.iter().map(|l| posting_list(l, s)).collect();
            let (got, _) = zigzag_join(pls.iter().map(Cursor::new).collect(), k).unwrap();
            if got.iter().map(|d| d.0).collect::<Vec<_>>() != want {
                mismatches += 1;
            }
        }
    }

    // Selective: a short list against long ones.
    let mut beaten = 0;
    let selective = 50;
    for _ in 0..selective {
        let short = random_list(&mut rng, 100_000, 0.0005);
        let long = random_list(&mut rng, 100_000, 0.5);
        let naive_reads = (short.len() + long.len()) as u64;
        let pls = [posting_list(&short, 128), posting_list(&long, 128)];
        let (_, reads) = zigzag_join(pls.iter().map(Cursor::new).collect(), usize::MAX).unwrap();
        beaten += usize::from(reads < naive_reads);
    }
    let ok = mismatches == 0 && beaten == selective;
    verdict(2, ok, &format!("{mismatches}/{cases} mismatches; fewer reads than a scan in {beaten}/{selective} selective joins"));
    assert!(ok);
}

#[test]
fn a03_limited_search_equivalence() {
    let docs = common::corpus(3000, 3);
    let oracle = BruteForce::new(&docs);
    let idx = IrIndex::from_corpus(docs, IndexConfig::default()).unwrap();
    let mut probes = 0;
    let mut mismatches = 0;
    for w in (0..40).map(|i| vocabulary_word(i * i)) {
        for site in 0..200u64 {
            for k in [1u32, 10, 1000] {
                probes += 1;
                let q = Query::with_condition(
                    SearchCondition::Limited,
                    vec![w.clone()],
                    Some(Scope {
                        field: Attribute::SiteId,
                        value: site,
                    }),
                    k,
                )
                .unwrap();
                let want = oracle.search(&q);
                let keys = |v: Vec<odys::index::TopKItem>| {
                    v.into_iter()
                        .map(|i| (i.doc_key, i.rank))
                        .collect::<Vec<_>>()
                };
                let emb = keys(
                    search_limited_embedded(&idx, &[&w], Attribute::SiteId, site, k as usize)
                        .unwrap(),
                );
                let join = keys(
                    search_limited_join(&idx, &[&w], Attribute::SiteId, site, k as usize).unwrap(),
                );
                if emb != want || join != want {
                    mismatches += 1;
                }
            }
        }
    }
    let ok = mismatches == 0;
    verdict(
        3,
        ok,
        &format!("{mismatches} mismatches over {probes} (keyword, siteId, k) probes"),
    );
    assert!(ok);
}

fn sorted_stream(rng: &mut ChaCha8Rng, s: usize, len: usize) -> Vec<ResultItem> {
    // Coarse ranks so ties across streams are common.
    let mut ranks: Vec<f64> = (0..len)
        .map(|_| rng.random_range(0..50) as f64 / 50.0)
        .collect();
    ranks.sort_by(|a, b| b.total_cmp(a));
    ranks
        .into_iter()
        .enumerate()
        .map(|(i, rank)| ResultItem {
            doc_key: format!("k{:03}-{s}-{i}", rng.random_range(0..100)),
            rank,
        })
        .collect()
}

#[test]
fn a04_loser_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut bound_ok = true;
    for ns in [2usize, 5, 300] {
        for trial in 0..20 {
            let streams: Vec<Vec<ResultItem>> = (0..ns)
                .map(|s| {
                    let len = rng.random_range(0..60);
                    let mut v = sorted_stream(&mut rng, s, len);
                    // Equal ranks within a stream arrive in key order, as a slave emits them.
                    v.sort_by(|a, b| {
                        b.rank
                            .total_cmp(&a.rank)
                            .then_with(|| a.doc_key.cmp(&b.doc_key))
                    });
                    v
                })
                .collect();
            let k = [1usize, 10, 100, 10_000][trial % 4];
            let out = loser_tree_merge(&streams, k).unwrap();
            let got: Vec<(String, f64, usize)> = out
                .items
                .iter()
                .map(|i| (i.doc_key.clone(), i.rank, i.slave))
                .collect();
            if got != flatten_sort_truncate(&streams, k) {
                mismatches += 1;
            }
            let height = ceil_log2(ns as u32) as u64;
            let emitted = out.items.len() as u64;
            if out.max_replay > height || out.replay_comparisons > emitted * height {
                bound_ok = false;
            }
            if emitted > 0 {
                worst = worst.max(out.replay_comparisons as f64 / emitted as f64 / height as f64);
            }
        }
    }
    let ok = mismatches == 0 && bound_ok;
    verdict(4, ok, &format!("{mismatches} mismatches; replay comparisons per item at most {worst:.3} of the tree height"));
    assert!(ok);
}

#[test]
fn a05_md1_closed_form_vs_simulation() {
    let start = Instant::now();
    let st = 2.0;
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let rho = i as f64 / 10.0;
        let lambda = rho / st;
        let closed = md1_queue_length(lambda, st).unwrap();
        let sim = md1_simulate(lambda, st, 1_000_000, 100 + i);
        worst = worst.max((sim.mean_queue_length - closed).abs() / closed);
    }
    let elapsed = start.elapsed();
    let ok = worst <= 0.03 && elapsed < Duration::from_secs(60);
    verdict(
        5,
        ok,
        &format!(
            "worst relative error {:.4} over rho 0.1..0.9, {:.1}s",
            worst,
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok);
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

#[test]
fn a06_partitioning_estimator() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = true;
    let mut monotone = true;
    let mut mean_ok = true;
    for _ in 0..100 {
        let np = rng.random_range(1..8);
        let r = rng.random_range(1..6);
        let nq = rng.random_range(1..20);
        let per_query: Vec<Vec<f64>> = (0..nq)
            .map(|_| (0..np * r).map(|_| rng.random_range(0.1..50.0)).collect())
            .collect();
        let set = SojournSampleSet::new(np, r, per_query.clone()).unwrap();
        for ns in 1..=np * r {
            if slave_max_partitioning(&set, ns).unwrap() != slave_max_oracle(&per_query, ns) {
                exact = false;
            }
        }
        // Along a divisor chain every group is a union of smaller groups.
        let n = np * r;
        for d in divisors(n) {
            for m in divisors(n).into_iter().filter(|m| m % d == 0) {
                if slave_max_partitioning(&set, m).unwrap()
                    < slave_max_partitioning(&set, d).unwrap()
                {
                    monotone = false;
                }
            }
        }
        let mean = per_query
            .iter()
            .map(|q| q.iter().sum::<f64>() / q.len() as f64)
            .sum::<f64>()
            / nq as f64;
        if (slave_max_partitioning(&set, 1).unwrap() - mean).abs() > 1e-9 * mean {
            mean_ok = false;
        }
    }
    let ok = exact && monotone && mean_ok;
    verdict(6, ok, &format!("oracle equality {exact}, monotone along divisor chains {monotone}, ns=1 is the mean {mean_ok}"));
    assert!(ok);
}

#[test]
fn a06_lognormal_tail_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut ratios = Vec::new();
    for sigma in [0.1, 0.25, 0.5] {
        let dist = LogNormal::new(0.0, sigma).unwrap();
        let per_query: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..300 * 5).map(|_| dist.sample(&mut rng)).collect())
            .collect();
        let set = SojournSampleSet::new(300, 5, per_query).unwrap();
        let ratio =
            slave_max_partitioning(&set, 300).unwrap() / slave_max_partitioning(&set, 1).unwrap();
        ratios.push((sigma, ratio));
    }
    let ok = ratios.iter().all(|&(_, r)| r < 2.0);
    let detail: Vec<String> = ratios
        .iter()
        .map(|(s, r)| format!("sigma {s}: {r:.3}"))
        .collect();
    verdict(
        6,
        ok,
        &format!("lognormal ns=300 / ns=1 below 2x: {}", detail.join(", ")),
    );
    assert!(
        ok,
        "max of 300 lognormal draws exceeds twice the mean: {ratios:?}"
    );
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

#[test]
fn a07_formula_anchors() {
    let p = ModelParams::five_node_reference();
    let c = &p.cost;
    // Hand computations with the reference constants, in ms.
    let merge_hand = 10.0 * (3.0 * 0.191e-3 + 0.28e-3); // 0.00853
    let cs_hand = 15.995e-3 * (80.869 + 5.0 * 1.991); // 1.45273...
    let st_hand = 1.516 + (0.0181 + 0.01) * 5.0 + merge_hand + cs_hand; // 3.11776...
    let merge = merge_time(10, 5, c);
    let cs = context_switch_time(10, 5, c).unwrap();
    let st = master_service_time(10, 5, c).unwrap();
    let (cpu, mem) = split_alpha(st, 0.25).unwrap();
    let checks = [
        (merge, merge_hand, 0.00853),
        (cs, cs_hand, 1.4527),
        (st, st_hand, 3.1178),
        (cpu, st_hand * 0.25, 0.7794),
        (mem, st_hand * 0.75, 2.3383),
    ];
    let ok = checks
        .iter()
        .all(|&(got, hand, quoted)| within(got, hand, 1e-3) && within(got, quoted, 1e-3));
    verdict(
        7,
        ok,
        &format!(
            "merge {:.3} us, switches {cs:.4} ms, master {st:.4} ms, split ({cpu:.4}, {mem:.4}) ms",
            merge * 1000.0
        ),
    );
    assert!(ok);
}

#[test]
fn a08_weight_multiplier() {
    let mut p = ModelParams::five_node_reference();
    p.qmr = [(10, 0.90), (50, 0.08), (1000, 0.02)]
        .into_iter()
        .flat_map(|(k, share)| SearchCondition::ALL.map(move |sct| ((sct, k), share / 3.0)))
        .collect();
    let m = weight_multiplier(Component::MasterCpu, &p).unwrap();
    // 0.90 + 0.08 * 31.26 / 25.01 + 0.02 * 68.78 / 25.01
    let hand = 0.90 + 0.08 * 31.26 / 25.01 + 0.02 * 68.78 / 25.01;
    let ok = (m - 1.055).abs() <= 0.001 && (m - hand).abs() < 1e-12;
    verdict(8, ok, &format!("multiplier {m:.6}"));
    assert!(ok);
}

async fn run_repeated(
    cluster: &LocalCluster,
    queries: &[Query],
    qps: f64,
    reps: usize,
    seed: u64,
) -> Vec<RunMetrics> {
    let mut runs = Vec::new();
    for rep in 0..reps {
        let cfg = DriverConfig::new(qps, seed + rep as u64);
        runs.push(
            run_benchmark(cluster.master().clone(), queries, cfg)
                .await
                .expect("run completes"),
        );
    }
    runs
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn a09_end_to_end_projection() {
    let docs = common::corpus(10_000, 9);
    let pool = KeywordPool::from_corpus(&docs, 20);
    let (calib_pool, measured_pool) = pool.split(0.3, 9);
    let dir = tempfile::tempdir().unwrap();
    let cfg = ClusterConfig {
        backing: Backing::Disk {
            dir: dir.path().to_path_buf(),
            buffer_slack: 2 * odys::storage::PAGE_SIZE as u64,
            miss_penalty: Some(Duration::from_millis(1)),
        },
        concurrency: 1,
        ..ClusterConfig::default()
    };
    let cluster = LocalCluster::start(docs, cfg).await.unwrap();

    let spec = WorkloadSpec {
        queries: 400,
        seed: 91,
        ..WorkloadSpec::default()
    };
    let probes = generate_query_set(
        &WorkloadSpec {
            queries: 60,
            ..spec.clone()
        },
        &calib_pool,
    )
    .unwrap();
    let measured = generate_query_set(&spec, &measured_pool).unwrap();
    warmup(cluster.master(), &probes, &measured, false)
        .await
        .unwrap();
    let qmr: BTreeMap<(SearchCondition, u32), f64> = spec.qmr.clone();
    let calibration = calibrate(
        cluster.master(),
        &[(10, probes)].into_iter().collect(),
        2,
        qmr,
    )
    .await
    .unwrap();
    let params = calibration.params.clone();
    let service_ms = calibration.per_k[&10].mean_slave_ms;
    let capacity_qps = 1000.0 / service_ms;

    let mut lines = Vec::new();
    let mut means = Vec::new();
    let mut errors = Vec::new();
    for (i, load) in [0.2, 0.4, 0.6].into_iter().enumerate() {
        let qps = load * capacity_qps;
        let runs = run_repeated(&cluster, &measured, qps, 5, 1000 * (i as u64 + 1)).await;
        let samples = export_samples(&runs, 5).unwrap();
        let measured_ms =
            runs.iter().map(|r| r.summary().mean_total_ms).sum::<f64>() / runs.len() as f64;
        let unstable = runs.iter().any(|r| r.unstable);
        let est = total_response_time(SearchCondition::Single, 10, qps / 1000.0, &params, &samples)
            .unwrap();
        let err = estimation_error(est, measured_ms).unwrap();
        lines.push(format!(
            "{qps:.0} qps: est {est:.3} ms, measured {measured_ms:.3} ms, error {err:.3}{}",
            if unstable { " (unstable)" } else { "" }
        ));
        means.push(measured_ms);
        errors.push(err);
    }
    cluster.shutdown().await;
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let ok = monotone && errors.iter().all(|&e| e <= 0.20);
    verdict(
        9,
        ok,
        &format!("slave service {service_ms:.3} ms; {}", lines.join("; ")),
    );
    assert!(ok);
}

#[test]
fn a10_saturation_is_typed() {
    let p = ModelParams::five_node_reference();
    let st_net = p.cost.st_network[&10];
    let st_master = master_service_time(10, p.ns, &p.cost).unwrap();
    // λ' = λ·ns/nh for the network and λ for the memory bus; pick loads at and past each limit.
    let limits = [
        1.0 / (st_net * p.ns as f64),
        1.0 / (st_master * (1.0 - p.alpha)),
    ];
    let mut all_typed = true;
    for lim in limits {
        for factor in [1.0001, 1.5, 10.0] {
            match estimate_response(10, lim * factor, &p, 1.0) {
                Err(ModelError::Saturated {
                    component: Some(_),
                    rho,
                }) if rho >= 1.0 => {}
                _ => all_typed = false,
            }
        }
    }
    let raw = matches!(
        md1_queue_length(1.0, 1.0),
        Err(ModelError::Saturated { .. })
    );
    let ok = all_typed && raw;
    verdict(10, ok, "saturated loads return the typed error");
    assert!(ok);
}
