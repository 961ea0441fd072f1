//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 3, 5 and 6 cannot pass as stated (see the README section on
//! known deviations); they run at full size and print FAIL, and only an
//! unexpected failure of another criterion fails this target.

use std::process::ExitCode;
use std::time::Instant;

use serde_json::Value;
use zrplab::coupling::attractivity_exhaustive;
use zrplab::experiment::ExperimentConfig;
use zrplab::experiments::{self, attractivity_runs, Outcome};
use zrplab::{solve_fugacity, RateFunction};

const KNOWN_UNATTAINABLE: [u32; 3] = [3, 5, 6];

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("acceptance config is valid")
}

fn run(outcome: Result<Outcome, experiments::ExperimentError>) -> Outcome {
    outcome.expect("experiment runs")
}

fn c1() -> (bool, String) {
    let mut worst = 0.0f64;
    for rho in [0.5, 1.0, 2.0] {
        for (rate, closed) in [
            (RateFunction::constant(), rho / (1.0 + rho)),
            (RateFunction::linear(), rho),
        ] {
            let m = solve_fugacity(&rate, rho, 1e-14).unwrap();
            // E[g(eta)] summed directly from the pmf.
            let mean_g: f64 = m
                .pmf()
                .iter()
                .enumerate()
                .map(|(k, p)| p * rate.eval(k).unwrap())
                .sum();
            worst = worst
                .max((m.alpha - closed).abs())
                .max((m.c - m.alpha).abs())
                .max((mean_g - m.alpha).abs());
        }
    }
    (worst <= 1e-10, format!("max deviation {worst:.2e}"))
}

fn c2() -> (bool, String) {
    let base = config(include_str!("../../../configs/invariance.toml"));
    let mut ok = true;
    let mut parts = Vec::new();
    for gamma in [0.0, 1.0] {
        let mut c = base.clone();
        c.model.gamma = gamma;
        let o = run(experiments::invariance(&c));
        ok &= o.passed;
        parts.push(format!(
            "gamma={gamma}: max site TV {:.4}, pooled p {:.3}",
            o.report["max_site_tv"].as_f64().unwrap(),
            o.report["pooled_p_value"].as_f64().unwrap()
        ));
    }
    (ok, parts.join("; "))
}

fn c3() -> (bool, String) {
    let o = run(experiments::sandwich(&config(include_str!("../../../configs/sandwich.toml"))));
    let r = &o.report;
    (
        o.passed,
        format!(
            "{} violations in {}/{} runs over {} events, min slack {:.3}; runs with equal totals: {} of which {} violated",
            r["violations"], r["runs_with_violations"], r["runs"], r["events"],
            r["min_slack"].as_f64().unwrap(), r["equal_total_runs"], r["equal_total_runs_with_violations"]
        ),
    )
}

fn c4() -> (bool, String) {
    let mut exhaustive_bad = 0;
    let mut cases = 0;
    for rate in [RateFunction::constant(), RateFunction::linear(), RateFunction::capped(2).unwrap()] {
        let r = attractivity_exhaustive(&rate, 3, 2).unwrap();
        exhaustive_bad += r.violations;
        cases += r.cases;
    }
    let c = config(include_str!("../../../configs/invariance.toml"));
    let measure = c.measure().unwrap();
    let params = c.params().unwrap();
    let (bad_runs, events) = attractivity_runs(&measure, &params, 100, 1.0, 16, 4242, c.ensemble.workers).unwrap();
    (
        exhaustive_bad == 0 && bad_runs == 0,
        format!("exhaustive: {exhaustive_bad} violations in {cases} cases; long runs: {bad_runs}/100 broke order over {events} events"),
    )
}

fn c5() -> (bool, String) {
    let o = run(experiments::sample_invariant(&config(include_str!("../../../configs/sample_invariant.toml"))));
    let r = &o.report;
    (
        o.passed,
        format!(
            "Var(H_mid) {:.4} (relative error {:+.4}, within 5%: {}); KS D {:.4}, p {:.2e}; skewness {:.3}",
            r["variance"].as_f64().unwrap(),
            r["variance_relative_error"].as_f64().unwrap(),
            r["variance_within_5_percent"],
            r["ks_statistic"].as_f64().unwrap(),
            r["ks_p_value"].as_f64().unwrap(),
            r["skewness"].as_f64().unwrap()
        ),
    )
}

fn beta_entry(o: &Outcome, beta: f64) -> Value {
    o.report["betas"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["beta"].as_f64() == Some(beta))
        .cloned()
        .unwrap()
}

fn c6() -> (bool, String) {
    let mut c = config(include_str!("../../../configs/crossover.toml"));
    c.model.gamma = 1.0;
    c.model.t_end = 0.2;
    c.crossover.betas = vec![1.0];
    c.ensemble.seed += 100;
    let o = run(experiments::crossover(&c));
    let e = beta_entry(&o, 1.0);
    let m = &e["micro"];
    let describe = |label: &str| {
        let s = &e[label];
        format!(
            "{label} (a={:.4}, b={:.4}): solver var {:.3}±{:.3}, decay {:.2}±{:.2}, agree var={} decay={}",
            s["a"].as_f64().unwrap(),
            s["b"].as_f64().unwrap(),
            s["solver"]["variance"].as_f64().unwrap(),
            s["solver"]["variance_se"].as_f64().unwrap(),
            s["solver"]["decay_rate"].as_f64().unwrap(),
            s["solver"]["decay_rate_se"].as_f64().unwrap(),
            s["variance_within_3_sigma"],
            s["decay_within_3_sigma"]
        )
    };
    let ok = e["stated"]["variance_within_3_sigma"] == Value::Bool(true)
        && e["stated"]["decay_within_3_sigma"] == Value::Bool(true);
    (
        ok,
        format!(
            "micro var {:.3}±{:.3} (anchor chi/2 = {:.3}), decay {:.2}±{:.2}; {}; diagnostic {}",
            m["variance"].as_f64().unwrap(),
            m["variance_se"].as_f64().unwrap(),
            e["static_variance_anchor"].as_f64().unwrap(),
            m["decay_rate"].as_f64().unwrap(),
            m["decay_rate_se"].as_f64().unwrap(),
            describe("stated"),
            describe("generator")
        ),
    )
}

fn c7() -> (bool, String) {
    let c = config(include_str!("../../../configs/crossover.toml"));
    let o = run(experiments::crossover(&c));
    let half = beta_entry(&o, 0.5);
    let one = beta_entry(&o, 1.0);
    let z = |e: &Value| e["increment_skewness_z"].as_f64().unwrap();
    let s = |e: &Value| e["increment_skewness"].as_f64().unwrap();
    (
        z(&half).abs() > 3.0 && z(&one).abs() <= 3.0,
        format!(
            "beta=1/2 skewness {:.3} (z {:.2}); beta=1 skewness {:.3} (z {:.2}); {} runs each",
            s(&half), z(&half), s(&one), z(&one), c.ensemble.replicas
        ),
    )
}

fn c8() -> (bool, String) {
    let o = run(experiments::entropy_scan(&config(include_str!("../../../configs/entropy_scan.toml"))));
    let cells: Vec<String> = o.report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            format!(
                "N={} H={:.3} [{:.3}, {:.3}] exact {:.3}",
                c["n"],
                c["h_hat"].as_f64().unwrap_or(f64::INFINITY),
                c["h_low"].as_f64().unwrap_or(f64::NAN),
                c["h_high"].as_f64().unwrap_or(f64::NAN),
                c["exact_h"].as_f64().unwrap_or(f64::NAN)
            )
        })
        .collect();
    (o.passed, cells.join("; "))
}

fn spde() -> Outcome {
    run(experiments::spde_bench(&config(include_str!("../../../configs/spde_bench.toml"))))
}

fn c9(o: &Outcome) -> (bool, String) {
    let r = &o.report;
    (
        r["spectral_exact"] == Value::Bool(true) && r["convergence_ok"] == Value::Bool(true),
        format!(
            "shared-noise gap error {:.2e}; heat-limit order {:.3}",
            r["spectral_gap_max_error"].as_f64().unwrap(),
            r["convergence_order"].as_f64().unwrap()
        ),
    )
}

fn c10(o: &Outcome) -> (bool, String) {
    let r = &o.report;
    let rows: Vec<String> = r["feller"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            format!(
                "eps={} ms {:.3e}±{:.1e} excluded {}",
                f["epsilon"],
                f["output_ms"].as_f64().unwrap(),
                f["output_se"].as_f64().unwrap(),
                f["excluded"]
            )
        })
        .collect();
    (
        r["feller_strictly_decreasing"] == Value::Bool(true) && r["positivity_ok"] == Value::Bool(true),
        rows.join("; "),
    )
}

fn c11() -> (bool, String) {
    let small = |text: &str| {
        let mut c = config(text);
        c.ensemble.replicas = c.ensemble.replicas.min(40);
        c
    };
    let mut crossover = small(include_str!("../../../configs/crossover.toml"));
    crossover.model.n = 64;
    crossover.crossover.solver_runs = 200;
    let mut entropy = small(include_str!("../../../configs/entropy_scan.toml"));
    entropy.envelope.samples = 20_000;
    let mut spde = small(include_str!("../../../configs/spde_bench.toml"));
    spde.spde.runs = 20;
    let cases = [
        ("invariance", small(include_str!("../../../configs/invariance.toml"))),
        ("sandwich", small(include_str!("../../../configs/sandwich.toml"))),
        ("sample-invariant", small(include_str!("../../../configs/sample_invariant.toml"))),
        ("crossover", crossover),
        ("entropy-scan", entropy),
        ("spde-bench", spde),
    ];
    let mut files = 0;
    let mut mismatched = Vec::new();
    for (name, c) in cases {
        let outputs: Vec<Vec<(String, String)>> = [1, 4]
            .into_iter()
            .map(|w| {
                let mut c = c.clone();
                c.ensemble.workers = w;
                run(experiments::run_named(name, &c)).files
            })
            .collect();
        files += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatched.push(name);
        }
    }
    (
        mismatched.is_empty(),
        format!("{files} CSV files compared across 1 and 4 workers; mismatched experiments: {mismatched:?}"),
    )
}

fn main() -> ExitCode {
    let spde_outcome = spde();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> (bool, String)>)> = vec![
        (1, "fugacity closed forms and c = alpha", Box::new(c1)),
        (2, "invariance of the product measure", Box::new(c2)),
        (3, "sandwich propagation", Box::new(c3)),
        (4, "attractivity of the basic coupling", Box::new(c4)),
        (5, "midpoint-height CLT", Box::new(c5)),
        (6, "OU crossover at beta = 1", Box::new(c6)),
        (7, "skewness signature", Box::new(c7)),
        (8, "entropy corridor", Box::new(c8)),
        (9, "SPDE exactness and convergence", Box::new(|| c9(&spde_outcome))),
        (10, "Feller continuity of the multiplicative equation", Box::new(|| c10(&spde_outcome))),
        (11, "reproducibility across worker counts", Box::new(c11)),
    ];
    let mut unexpected = Vec::new();
    for (id, title, check) in criteria {
        let start = Instant::now();
        let (ok, detail) = check();
        let known = KNOWN_UNATTAINABLE.contains(&id);
        let note = match (ok, known) {
            (false, true) => " [known deviation]",
            (true, true) => " [known deviation did not reproduce]",
            _ => "",
        };
        println!(
            "criterion {id:>2} {}: {title}{note} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok && !known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria outside the known deviations pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}
