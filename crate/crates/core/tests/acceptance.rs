//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr,
//! bypassing output capture, then asserts. Tests share one lock so timing
//! criteria never run alongside other work.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmips::engine::{DecidedBy, QueryOptions, Verdict};
use rmips::fixtures::{toy_items, toy_users};
use rmips::ingest::{generate, sample_query_positions, DatasetSpec, VectorDistribution};
use rmips::oracle::{brute_decision, brute_reverse_kmips, check_bound_soundness};
use rmips::persist::save_index;
use rmips::{build_index, reverse_kmips, reverse_kmips_parallel, reverse_kmips_with, BuildConfig, Index, Record};

const TOY_RUNTIME_LIMIT_SECONDS: f64 = 1e-3;
const RANDOM_INSTANCES: usize = 216;
const ORACLE_SUITE_LIMIT_SECONDS: f64 = 120.0;
const METAMORPHIC_TRIALS: usize = 60;
const IP_FRACTION_LIMIT: f64 = 0.10;
const M_STABILITY_RATIO_LIMIT: f64 = 2.0;
const SPEEDUP_FLOOR: f64 = 1.5;
const BUILD_LIMIT_SECONDS: f64 = 60.0;
const BYTES_PER_USER_SPREAD: f64 = 1.20;

const LARGE_N: usize = 100_000;
const LARGE_M: usize = 10_000;
const LARGE_D: usize = 50;
const LARGE_K: usize = 10;
const LARGE_QUERIES: usize = 20;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "[acceptance] {criterion:>2} {verdict} {name}: {detail}"
    );
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

struct Instance {
    label: String,
    users: Vec<Record>,
    items: Vec<Record>,
    index: Index,
    queries: Vec<Vec<f64>>,
    k: usize,
}

fn distribution(i: usize) -> VectorDistribution {
    match i % 3 {
        0 => VectorDistribution::Uniform,
        1 => VectorDistribution::Gaussian,
        _ => VectorDistribution::norm_skewed(),
    }
}

/// Deterministic random instances over the full parameter grid. Each has
/// one query drawn from the items and one fresh vector.
fn random_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..RANDOM_INSTANCES)
        .map(|i| {
            let n = rng.random_range(50..=500);
            let m = rng.random_range(20..=300);
            let d = [2, 8, 50][(i / 3) % 3];
            let k = [1, 5, 10, 25][(i / 9) % 4];
            let dist = distribution(i);
            let seed = rng.random();
            let (users, items) = generate(&DatasetSpec {
                n,
                m,
                d,
                distribution: dist,
                seed,
            })
            .unwrap();
            let (_, fresh) = generate(&DatasetSpec {
                n: 1,
                m: 1,
                d,
                distribution: dist,
                seed: seed ^ 1,
            })
            .unwrap();
            let index = build_index(&users, &items, BuildConfig::default()).unwrap();
            let picked = items[rng.random_range(0..m)].vector.as_slice().to_vec();
            Instance {
                label: format!("#{i} n={n} m={m} d={d} k={k} {dist:?}"),
                users,
                items,
                index,
                queries: vec![picked, fresh[0].vector.as_slice().to_vec()],
                k,
            }
        })
        .collect()
}

struct Large {
    users: Vec<Record>,
    items: Vec<Record>,
    index: Index,
    queries: Vec<Vec<f64>>,
}

fn large() -> &'static Large {
    static DATA: OnceLock<Large> = OnceLock::new();
    DATA.get_or_init(|| {
        let spec = DatasetSpec {
            n: LARGE_N,
            m: LARGE_M,
            d: LARGE_D,
            distribution: VectorDistribution::norm_skewed(),
            seed: 6,
        };
        let (users, items) = generate(&spec).unwrap();
        let index = build_index(&users, &items, BuildConfig::default()).unwrap();
        let queries = sample_query_positions(LARGE_M, LARGE_QUERIES, 6)
            .into_iter()
            .map(|j| items[j].vector.as_slice().to_vec())
            .collect();
        Large {
            users,
            items,
            index,
            queries,
        }
    })
}

#[test]
fn c01_toy_fixture() {
    let _guard = serial();
    let (users, items) = (toy_users(), toy_items());
    let p5 = items[4].vector.as_slice().to_vec();
    let p1 = items[0].vector.as_slice().to_vec();

    let run = || {
        let t = Instant::now();
        let index = build_index(&users, &items, BuildConfig::default()).unwrap();
        let a = reverse_kmips(&index, &p5, 1).unwrap().result_ids;
        let b = reverse_kmips(&index, &p1, 1).unwrap().result_ids;
        (a, b, t.elapsed().as_secs_f64())
    };
    run();
    let mut times = Vec::new();
    let mut answers = Vec::new();
    for _ in 0..11 {
        let (a, b, s) = run();
        answers.push((a, b));
        times.push(s);
    }
    let seconds = median(&mut times);
    let exact = answers.iter().all(|(a, b)| a == &[3, 4] && b.is_empty());
    let pass = exact && seconds < TOY_RUNTIME_LIMIT_SECONDS;
    report(
        1,
        "toy fixture",
        pass,
        format!(
            "p5 -> {:?}, p1 -> {:?}, build+2 queries median {:.1} us (limit 1000 us)",
            answers[0].0,
            answers[0].1,
            seconds * 1e6
        ),
    );
    assert!(pass);
}

#[test]
fn c02_oracle_equivalence() {
    let _guard = serial();
    let t = Instant::now();
    let instances = random_instances();
    let (mut checked, mut positives) = (0usize, 0usize);
    let mut mismatches = Vec::new();
    for inst in &instances {
        for q in &inst.queries {
            let engine = reverse_kmips(&inst.index, q, inst.k).unwrap().result_ids;
            let oracle = brute_reverse_kmips(&inst.users, &inst.items, q, inst.k);
            checked += 1;
            positives += oracle.len();
            if engine != oracle {
                mismatches.push(inst.label.clone());
            }
        }
    }
    let seconds = t.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && instances.len() >= 200 && seconds < ORACLE_SUITE_LIMIT_SECONDS;
    report(
        2,
        "oracle equivalence",
        pass,
        format!(
            "{} instances, {checked} queries, {positives} positive users, {} mismatches, {seconds:.1} s (limit 120 s)",
            instances.len(),
            mismatches.len()
        ),
    );
    assert!(pass, "mismatches: {mismatches:?}");
}

#[test]
fn c03_bound_soundness() {
    let _guard = serial();
    let instances = random_instances();
    let mut bad = Vec::new();
    for inst in &instances {
        let v = check_bound_soundness(&inst.index, &inst.users, &inst.items);
        if !v.is_empty() {
            bad.push((inst.label.clone(), v.len()));
        }
    }
    let pass = bad.is_empty();
    report(
        3,
        "bound soundness",
        pass,
        format!(
            "{} instances, {} with violations (tolerance 1e-9)",
            instances.len(),
            bad.len()
        ),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn c04_filter_attribution() {
    let _guard = serial();
    let instances = random_instances();
    let trace = QueryOptions {
        use_blocks: true,
        trace: true,
    };
    let mut decided = 0usize;
    let mut wrong = Vec::new();
    for inst in &instances {
        for q in &inst.queries {
            let report = reverse_kmips_with(&inst.index, q, inst.k, trace).unwrap();
            let outcomes = report.outcomes.unwrap();
            assert_eq!(outcomes.len(), inst.users.len());
            for o in outcomes {
                let u = inst.users.iter().find(|u| u.id == o.user_id).unwrap();
                let truth = brute_decision(u.vector.as_slice(), &inst.items, q, inst.k);
                let claims_yes = match o.outcome.decided_by {
                    DecidedBy::BlockFilter | DecidedBy::LowerBoundFilter | DecidedBy::ScanNo => false,
                    DecidedBy::NormUpperFilter | DecidedBy::ScanYes | DecidedBy::ScanExhausted => true,
                    DecidedBy::TooFewItems => true,
                };
                decided += 1;
                if claims_yes != truth || (o.outcome.verdict == Verdict::Included) != truth {
                    wrong.push((inst.label.clone(), o.user_id, o.outcome.decided_by));
                }
            }
        }
    }
    let pass = wrong.is_empty();
    report(
        4,
        "filter attribution",
        pass,
        format!("{decided} user decisions, {} exceptions", wrong.len()),
    );
    assert!(pass, "{:?}", &wrong[..wrong.len().min(10)]);
}

#[test]
fn c05_metamorphic() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let (mut mono, mut scale, mut dup) = (0usize, 0usize, 0usize);
    for trial in 0..METAMORPHIC_TRIALS {
        let n = rng.random_range(50..=300);
        let m = rng.random_range(20..=200);
        let d = [2, 8, 50][trial % 3];
        let dist = distribution(trial / 3);
        let (users, items) = generate(&DatasetSpec {
            n,
            m,
            d,
            distribution: dist,
            seed: rng.random(),
        })
        .unwrap();
        let index = build_index(&users, &items, BuildConfig::default()).unwrap();
        let q = items[rng.random_range(0..m)].vector.as_slice().to_vec();

        let k = rng.random_range(1..25);
        let small: BTreeSet<u64> = reverse_kmips(&index, &q, k).unwrap().result_ids.into_iter().collect();
        let large: BTreeSet<u64> = reverse_kmips(&index, &q, k + 1)
            .unwrap()
            .result_ids
            .into_iter()
            .collect();
        if small.is_subset(&large) {
            mono += 1;
        }

        let who = rng.random_range(0..n);
        let c = rng.random_range(0.05..20.0);
        let mut scaled = users.clone();
        let v: Vec<f64> = scaled[who].vector.as_slice().iter().map(|x| x * c).collect();
        scaled[who] = Record::from_components(scaled[who].id, v).unwrap();
        let rescaled = build_index(&scaled, &items, BuildConfig::default()).unwrap();
        let id = users[who].id;
        let before = reverse_kmips(&index, &q, k).unwrap().result_ids.contains(&id);
        let after = reverse_kmips(&rescaled, &q, k).unwrap().result_ids.contains(&id);
        if before == after {
            scale += 1;
        }

        let mut with_q = items.clone();
        let next_id = items.iter().map(|p| p.id).max().unwrap() + 1;
        with_q.push(Record::from_components(next_id, q.clone()).unwrap());
        let duplicated = build_index(&users, &with_q, BuildConfig::default()).unwrap();
        if reverse_kmips(&duplicated, &q, k).unwrap().result_ids == reverse_kmips(&index, &q, k).unwrap().result_ids {
            dup += 1;
        }
    }
    let t = METAMORPHIC_TRIALS;
    let pass = mono == t && scale == t && dup == t;
    report(
        5,
        "monotonicity and metamorphic relations",
        pass,
        format!("k-monotone {mono}/{t}, user scaling {scale}/{t}, duplicated q {dup}/{t}"),
    );
    assert!(pass);
}

#[test]
fn c06_work_reduction() {
    let _guard = serial();
    let data = large();
    let mut ips = 0u64;
    let mut alphas = Vec::new();
    for q in &data.queries {
        let r = reverse_kmips(&data.index, q, LARGE_K).unwrap();
        ips += r.ip_count;
        alphas.push(r.alpha);
    }
    let brute = (data.queries.len() * LARGE_N * (LARGE_M + 1)) as f64;
    let fraction = ips as f64 / brute;
    let mean_alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
    let min_alpha = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = fraction < IP_FRACTION_LIMIT && mean_alpha > 0.0;
    report(
        6,
        "work reduction",
        pass,
        format!(
            "ip fraction {:.3}% (limit 10%), alpha mean {mean_alpha:.3} min {min_alpha:.3} over {} queries",
            fraction * 100.0,
            data.queries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c07_blocks_ablation() {
    let _guard = serial();
    let data = large();
    let without = QueryOptions {
        use_blocks: false,
        trace: false,
    };
    let (mut never_worse, mut strictly_fewer, mut same_answer) = (true, 0usize, true);
    let (mut sum_with, mut sum_without) = (0u64, 0u64);
    for q in &data.queries {
        let a = reverse_kmips(&data.index, q, LARGE_K).unwrap();
        let b = reverse_kmips_with(&data.index, q, LARGE_K, without).unwrap();
        never_worse &= a.lower_bound_evaluations <= b.lower_bound_evaluations;
        strictly_fewer += usize::from(a.lower_bound_evaluations < b.lower_bound_evaluations);
        same_answer &= a.result_ids == b.result_ids;
        sum_with += a.lower_bound_evaluations;
        sum_without += b.lower_bound_evaluations;
    }
    let pass = never_worse && strictly_fewer > 0 && same_answer;
    report(
        7,
        "blocks ablation",
        pass,
        format!(
            "lower-bound evaluations {sum_with} with blocks vs {sum_without} without, strictly fewer on {strictly_fewer}/{} queries",
            data.queries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn c08_m_stability() {
    let _guard = serial();
    let n = 50_000;
    let queries = 31;
    let mut medians = Vec::new();
    for m in [1_000, 2_000, 4_000, 8_000] {
        let spec = DatasetSpec {
            n,
            m,
            d: LARGE_D,
            distribution: VectorDistribution::norm_skewed(),
            seed: 8,
        };
        let (users, items) = generate(&spec).unwrap();
        let index = build_index(&users, &items, BuildConfig::default()).unwrap();
        let mut times: Vec<f64> = sample_query_positions(m, queries, 8)
            .into_iter()
            .map(|j| {
                reverse_kmips(&index, items[j].vector.as_slice(), LARGE_K)
                    .unwrap()
                    .elapsed_seconds
            })
            .collect();
        medians.push((m, median(&mut times)));
    }
    let ratio = medians[3].1 / medians[0].1;
    let pass = ratio < M_STABILITY_RATIO_LIMIT;
    let detail = medians
        .iter()
        .map(|(m, s)| format!("m={m}: {:.3} ms", s * 1e3))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, "m stability", pass, format!("{detail}; ratio {ratio:.2} (limit 2)"));
    assert!(pass);
}

#[test]
fn c09_parallel() {
    let _guard = serial();
    let data = large();
    let mut identical = true;
    let mut times = [Vec::new(), Vec::new(), Vec::new()];
    for q in &data.queries {
        let base = reverse_kmips_parallel(&data.index, q, LARGE_K, 1).unwrap();
        times[0].push(base.elapsed_seconds);
        for (slot, workers) in [(1, 2), (2, 4)] {
            let r = reverse_kmips_parallel(&data.index, q, LARGE_K, workers).unwrap();
            identical &= r.same_answer_and_work(&base);
            times[slot].push(r.elapsed_seconds);
        }
    }
    let [t1, t2, t4] = times.map(|mut t| median(&mut t));
    let speedup = t1 / t4;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let pass = identical && speedup >= SPEEDUP_FLOOR;
    report(
        9,
        "parallel determinism and speedup",
        pass,
        format!(
            "identical {identical}; median {:.2}/{:.2}/{:.2} ms at 1/2/4 workers, speedup {speedup:.2} (floor 1.5), {cores} core(s) available",
            t1 * 1e3,
            t2 * 1e3,
            t4 * 1e3
        ),
    );
    assert!(pass);
}

#[test]
fn c10_preprocessing() {
    let _guard = serial();
    let mut rows = Vec::new();
    for n in [50_000, 100_000, 200_000] {
        let spec = DatasetSpec {
            n,
            m: LARGE_M,
            d: LARGE_D,
            distribution: VectorDistribution::norm_skewed(),
            seed: 10,
        };
        let (users, items) = generate(&spec).unwrap();
        let t = Instant::now();
        let index = build_index(&users, &items, BuildConfig::default()).unwrap();
        let seconds = t.elapsed().as_secs_f64();
        let bytes = save_index(&index, std::io::sink()).unwrap();
        rows.push((n, seconds, bytes));
    }
    let per_user: Vec<f64> = rows.iter().map(|&(n, _, b)| b as f64 / n as f64).collect();
    let spread = per_user.iter().copied().fold(0.0, f64::max) / per_user.iter().copied().fold(f64::INFINITY, f64::min);
    let build = rows[2].1;
    let pass = build < BUILD_LIMIT_SECONDS && spread <= BYTES_PER_USER_SPREAD;
    let detail = rows
        .iter()
        .zip(&per_user)
        .map(|(&(n, s, b), p)| format!("n={n}: {s:.2} s, {b} B ({p:.0} B/user)"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        10,
        "pre-processing",
        pass,
        format!("{detail}; bytes/user spread {spread:.3} (limit 1.20), build at 2e5 limit 60 s"),
    );
    assert!(pass);
}

#[test]
fn c11_rebuild_path() {
    let _guard = serial();
    let data = large();
    let k = data.index.k_max() + 5;
    let mut ok = true;
    let mut detail = Vec::new();
    // the largest-norm item has a non-empty answer; a sampled one usually not
    let top = data.index.item(0).vector.to_vec();
    for q in [&top, &data.queries[0]] {
        let r = reverse_kmips(&data.index, q, k).unwrap();
        let t = Instant::now();
        let oracle = brute_reverse_kmips(&data.users, &data.items, q, k);
        let brute = t.elapsed().as_secs_f64();
        let rebuilt = r.rebuild_seconds.is_some();
        ok &= rebuilt && r.result_ids == oracle && r.elapsed_seconds < brute;
        detail.push(format!(
            "rebuilt {rebuilt}, {} users, engine {:.2} s (rebuild {:.2} s) vs brute {brute:.2} s",
            r.result_ids.len(),
            r.elapsed_seconds,
            r.rebuild_seconds.unwrap_or(0.0)
        ));
    }
    report(11, "k above k_max", ok, format!("k={k}: {}", detail.join("; ")));
    assert!(ok);
}
