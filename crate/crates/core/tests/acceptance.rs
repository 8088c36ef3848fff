//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hgmf_core::bench::{default_tiers, run_benchmark, BenchConfig, BenchmarkReport};
use hgmf_core::embed::LookupEmbedder;
use hgmf_core::gmm::{component_count, fit_gmm, ComponentDump, FitConfig, GmmDump, GmmModel};
use hgmf_core::pruner::{prune, CandidateSet, PruneConfig};
use hgmf_core::rerank::{final_score, rank_candidates, IdealDescriptions};
use hgmf_core::synthetic::{
    confirming_client, echo_client, planted_cases, planted_catalog, random_catalog, random_unit,
    standard_normal, PlantedSpec,
};
use hgmf_core::vecmath::Similarity;
use hgmf_core::{BaselineKind, Catalog, Method, MockClient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(name: &str, limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "{name} took {took:.2?}, limit {limit:?}");
    Ok(took)
}

fn em_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_mean = 0.0f64;
    let mut worst_drop = 0.0f64;
    for instance in 0..50 {
        let d = rng.gen_range(1..=8);
        let n = rng.gen_range(100..=200);
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut b: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        // push the second center at least 6 units away
        let gap: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        if gap < 6.0 {
            b[0] = a[0] + if a[0] > 0.0 { -6.0 } else { 6.0 };
        }
        let points: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { &a } else { &b };
                c.iter().map(|x| x + 0.05 * standard_normal(&mut rng)).collect()
            })
            .collect();
        let cfg = FitConfig::default().with_seed(instance);
        for k in [2, component_count(n)] {
            let m = fit_gmm(&points, k, &cfg).map_err(|e| e.to_string())?;
            for w in m.log_likelihood_trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
                ensure!(
                    w[1] >= w[0] - 1e-7,
                    "instance {instance} k={k}: log-likelihood fell {} -> {}",
                    w[0],
                    w[1]
                );
            }
            if k == 2 {
                let dist = |m: &[f64], c: &[f64]| -> f64 {
                    m.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                };
                let (m0, m1) = (&m.components[0].mean, &m.components[1].mean);
                let direct = dist(m0, &a).max(dist(m1, &b));
                let swapped = dist(m0, &b).max(dist(m1, &a));
                let err = direct.min(swapped);
                worst_mean = worst_mean.max(err);
                ensure!(err <= 0.05, "instance {instance}: mean error {err:.4} > 0.05");
            }
        }
    }
    let took = within("EM suite", Duration::from_secs(30), start)?;
    Ok(format!(
        "50 instances; worst mean error {worst_mean:.4}, worst LL drop {worst_drop:.1e}, {took:.2?}"
    ))
}

fn likelihood_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for pair in 0..1000 {
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=4);
        let components: Vec<ComponentDump> = (0..k)
            .map(|_| ComponentDump {
                mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                variances: (0..d).map(|_| rng.gen_range(0.01..4.0)).collect(),
                weight: 1.0 / k as f64,
            })
            .collect();
        let model: GmmModel<f64> = GmmModel::from_dump(&GmmDump {
            k,
            dimension: d,
            components: components.clone(),
        })
        .map_err(|e| e.to_string())?;
        let j = rng.gen_range(0..k);
        let c = &components[j];
        let x: Vec<f64> = c
            .mean
            .iter()
            .zip(&c.variances)
            .map(|(m, v)| m + v.sqrt() * rng.gen_range(-3.0..3.0))
            .collect();
        // product of one-dimensional normal pdfs, logged once at the end
        let pdf: f64 = x
            .iter()
            .zip(&c.mean)
            .zip(&c.variances)
            .map(|((xi, mi), vi)| {
                (-(xi - mi).powi(2) / (2.0 * vi)).exp() / (2.0 * std::f64::consts::PI * vi).sqrt()
            })
            .product();
        let expected = pdf.ln();
        let got = model.component_log_density(j, &x).map_err(|e| e.to_string())?;
        let rel = (got - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure!(rel <= 1e-9, "pair {pair}: {got} vs {expected} (rel {rel:.2e})");
    }
    Ok(format!("1000 pairs; worst relative error {worst:.2e}"))
}

fn subset_of(a: &CandidateSet, b: &CandidateSet) -> bool {
    let bt: HashSet<&str> = b.tools.iter().map(|t| t.tool_id.as_str()).collect();
    let bs: HashSet<&str> = b.servers.iter().map(|s| s.server_id.as_str()).collect();
    a.tools.iter().all(|t| bt.contains(t.tool_id.as_str()))
        && a.servers.iter().all(|s| bs.contains(s.server_id.as_str()))
}

fn pruning_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // (ns, nt) settings ordered so each is componentwise >= its predecessor
    let chains: [&[(usize, usize)]; 2] = [
        &[(1, 1), (1, 4), (4, 4), (999, 4), (999, 999)],
        &[(1, 1), (4, 1), (4, 4)],
    ];
    for instance in 0..100u64 {
        let m = rng.gen_range(1..=50);
        let n = rng.gen_range(m..=500);
        let dim = 16;
        let catalog: Catalog = random_catalog(m, n, dim, 1000 + instance);
        let query = random_unit(&mut rng, dim);
        let run = |ns: usize, nt: usize| {
            let base = PruneConfig::default();
            let cfg = PruneConfig {
                top_server_clusters: ns,
                top_tool_clusters: nt,
                gmm: base.gmm.with_seed(instance),
                ..base
            };
            prune(&catalog, &query, &cfg).map_err(|e| format!("instance {instance}: {e}"))
        };
        let settings: Vec<(usize, usize)> = {
            let mut v: Vec<_> = chains.iter().flat_map(|c| c.iter().copied()).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut outputs = std::collections::HashMap::new();
        for &(ns, nt) in &settings {
            let set = run(ns, nt)?;
            ensure!(!set.is_empty(), "instance {instance} ({ns},{nt}): empty output");
            let kept: HashSet<&str> = set.servers.iter().map(|s| s.server_id.as_str()).collect();
            for s in &set.servers {
                ensure!(
                    catalog.server(&s.server_id).is_some(),
                    "instance {instance}: unknown server {}",
                    s.server_id
                );
            }
            for t in &set.tools {
                let owner = catalog.tool(&t.tool_id).map(|r| r.server_id.as_str());
                ensure!(
                    owner == Some(t.server_id.as_str()) && kept.contains(t.server_id.as_str()),
                    "instance {instance}: tool {} outside tools(S')",
                    t.tool_id
                );
            }
            ensure!(
                run(ns, nt)? == set,
                "instance {instance} ({ns},{nt}): not deterministic"
            );
            if (ns, nt) == (999, 999) {
                ensure!(
                    set.tools.len() == catalog.n_tools(),
                    "instance {instance}: saturated output misses tools"
                );
            }
            outputs.insert((ns, nt), set);
        }
        for chain in chains {
            for w in chain.windows(2) {
                ensure!(
                    subset_of(&outputs[&w[0]], &outputs[&w[1]]),
                    "instance {instance}: output at {:?} does not contain the output at {:?}",
                    w[1],
                    w[0]
                );
            }
        }
    }
    let took = within("pruning suite", Duration::from_secs(60), start)?;
    Ok(format!("100 catalogs, 6 settings each, {took:.2?}"))
}

fn unit_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn final_score_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for set_idx in 0..100u64 {
        let dim = rng.gen_range(4..=32);
        let m = rng.gen_range(1..=12);
        let n = rng.gen_range(m..=60);
        let catalog: Catalog = random_catalog(m, n, dim, 5000 + set_idx);
        let picks: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let picks = if picks.is_empty() { vec![0] } else { picks };
        let candidates = CandidateSet::from_tools(&catalog, picks, "oracle");
        let s_raw = random_unit(&mut rng, dim);
        let t_raw = random_unit(&mut rng, dim);
        let ideal = IdealDescriptions::new("s".into(), "t".into(), &s_raw, &t_raw)
            .map_err(|e| e.to_string())?;
        let ranking = rank_candidates(&candidates, &ideal, &catalog).map_err(|e| e.to_string())?;

        let mut brute: Vec<(f64, String, String)> = candidates
            .tools
            .iter()
            .map(|t| {
                let server = catalog.server(&t.server_id).unwrap();
                let tool = catalog.tool(&t.tool_id).unwrap();
                let s = unit_cos(&s_raw, &server.embedding);
                let tt = unit_cos(&t_raw, &tool.embedding);
                (s * tt * s.max(tt), t.server_id.clone(), t.tool_id.clone())
            })
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| (&a.1, &a.2).cmp(&(&b.1, &b.2))));
        ensure!(
            ranking.len() == brute.len(),
            "set {set_idx}: {} ranked pairs, expected {}",
            ranking.len(),
            brute.len()
        );
        for (r, b) in ranking.iter().zip(&brute) {
            ensure!(
                r.server_id == b.1 && r.tool_id == b.2,
                "set {set_idx}: order differs at {}/{}",
                r.server_id,
                r.tool_id
            );
            ensure!(
                (r.final_score - b.0).abs() <= 1e-12,
                "set {set_idx}: score {} vs {}",
                r.final_score,
                b.0
            );
        }
    }
    let exact = final_score(Similarity::new(0.8), Similarity::new(0.5));
    ensure!(
        exact == 0.32,
        "ordering matches brute force on 100 sets, but final_score(0.8, 0.5) = {exact:?} != 0.32 \
         (the correctly rounded IEEE-754 result of 0.8*0.5*0.8 is 0.32000000000000006)"
    );
    Ok("100 sets ordered as brute force; final_score(0.8, 0.5) == 0.32".into())
}

fn planted_end_to_end() -> Outcome {
    let start = Instant::now();
    let planted = planted_catalog::<f64>(&PlantedSpec::default());
    let catalog = &planted.catalog;
    ensure!(
        (catalog.n_servers(), catalog.n_tools()) == (16, 128),
        "unexpected planted shape"
    );
    let (mut max_inter, mut min_intra) = (f64::MIN, f64::MAX);
    for a in catalog.servers() {
        for b in catalog.servers() {
            if a.server_id != b.server_id {
                max_inter = max_inter.max(unit_cos(&a.embedding, &b.embedding));
            }
        }
        let tools: Vec<_> = catalog.tools_of(&a.server_id).collect();
        for x in &tools {
            min_intra = min_intra.min(unit_cos(&x.embedding, &a.embedding));
            for y in &tools {
                min_intra = min_intra.min(unit_cos(&x.embedding, &y.embedding));
            }
        }
    }
    ensure!(max_inter < 0.3, "inter-center cosine {max_inter:.3} >= 0.3");
    ensure!(min_intra > 0.95, "intra-blob cosine {min_intra:.3} <= 0.95");

    let cases = planted_cases(catalog, 50, 0.05, 17);
    let client = echo_client(catalog, &cases);
    let embedder = LookupEmbedder::from_catalog(catalog);
    let tiers = default_tiers(catalog.n_tools());
    let report = run_benchmark(
        catalog,
        &cases,
        &tiers,
        Method::Hgmf,
        &client,
        &embedder,
        &BenchConfig {
            seed: 17,
            jobs: 4,
            ..BenchConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    for t in &report.tiers {
        ensure!(
            t.n_correct == t.n_cases,
            "tier {}: {}/{} exact matches",
            t.sample_size,
            t.n_correct,
            t.n_cases
        );
    }
    let took = within("end-to-end", Duration::from_secs(120), start)?;
    Ok(format!(
        "50/50 at tiers {tiers:?}; inter cos max {max_inter:.3}, intra cos min {min_intra:.3}, {took:.2?}"
    ))
}

fn scaling_behavior() -> Outcome {
    let planted = planted_catalog::<f64>(&PlantedSpec::default());
    let catalog = &planted.catalog;
    let cases = planted_cases(catalog, 200, 0.05, 29);
    let client = confirming_client(catalog, &cases);
    let embedder = LookupEmbedder::from_catalog(catalog);
    let top = [catalog.n_tools()];
    let run = |method: Method, budget: Option<usize>| {
        run_benchmark(
            catalog,
            &cases,
            &top,
            method,
            &client,
            &embedder,
            &BenchConfig {
                seed: 29,
                budget,
                jobs: 4,
                ..BenchConfig::default()
            },
        )
        .map(|r| r.tiers[0].accuracy)
        .map_err(|e| e.to_string())
    };
    let hgmf = run(Method::Hgmf, None)?;
    let zero = run(Method::Baseline(BaselineKind::McpZero), Some(4))?;
    let gap = (hgmf - zero) * 100.0;
    ensure!(
        hgmf > zero && gap >= 20.0,
        "hgmf {:.1}% vs mcp-zero {:.1}% (gap {gap:.1} points)",
        hgmf * 100.0,
        zero * 100.0
    );
    Ok(format!(
        "tier {}: hgmf {:.1}% vs mcp-zero(budget 4) {:.1}%, gap {gap:.1} points",
        top[0],
        hgmf * 100.0,
        zero * 100.0
    ))
}

fn latency_budget() -> Outcome {
    let catalog: Catalog = random_catalog(308, 2797, 384, 2797);
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let query = random_unit(&mut rng, 384);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    let set = pool
        .install(|| prune(&catalog, &query, &PruneConfig::default()))
        .map_err(|e| e.to_string())?;
    let took = within("prune", Duration::from_secs(2), start)?;
    Ok(format!(
        "308 servers / 2797 tools / d=384 pruned to {} tools in {took:.2?} on one thread",
        set.len()
    ))
}

fn strip_latency(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.contains("latency") && !k.ends_with("_ms"));
            map.values_mut().for_each(strip_latency);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_latency),
        _ => {}
    }
}

fn bench_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let planted = planted_catalog::<f64>(&PlantedSpec::default());
    let catalog = &planted.catalog;
    let cases = planted_cases(catalog, 21, 0.05, 41);
    let fixture = dir.path().join("mock.json");
    confirming_client(catalog, &cases)
        .save(&fixture)
        .map_err(|e| e.to_string())?;
    let embedder = LookupEmbedder::from_catalog(catalog);
    let tiers = default_tiers(catalog.n_tools());
    let mut bodies = Vec::new();
    for run in 0..2 {
        let client = MockClient::load(&fixture).map_err(|e| e.to_string())?;
        let report = run_benchmark(
            catalog,
            &cases,
            &tiers,
            Method::Hgmf,
            &client,
            &embedder,
            &BenchConfig {
                seed: 41,
                jobs: 4,
                ..BenchConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("report{run}.json"));
        hgmf_core::write_report(&report, &path, hgmf_core::ReportFormat::Json)
            .map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        BenchmarkReport::load_json(&path).map_err(|e| e.to_string())?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| e.to_string())?;
        strip_latency(&mut value);
        bodies.push(serde_json::to_string_pretty(&value).expect("value serializes"));
    }
    ensure!(bodies[0] == bodies[1], "reports differ outside latency fields");
    Ok(format!(
        "two runs over {} tiers identical modulo latency ({} bytes)",
        tiers.len(),
        bodies[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("em-correctness", em_correctness),
        ("likelihood-oracle", likelihood_oracle),
        ("pruning-invariants", pruning_invariants),
        ("final-score-oracle", final_score_oracle),
        ("planted-end-to-end", planted_end_to_end),
        ("scaling-behavior", scaling_behavior),
        ("latency-budget", latency_budget),
        ("bench-reproducibility", bench_reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
