//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use matchsim::da::{run_mosm_traced, run_wosm, TraceOptions};
use matchsim::experiments::{Engine, Harness, Metric, MetricStats, ThresholdKind, ThresholdSpec};
use matchsim::lazy::{run_mosm_lazy, sample_woman_rank};
use matchsim::oracle::{
    balls_into_bins, coupon_collector_draws, cross_check_small_markets, expected_empty_fraction,
    reciprocal_sum_check,
};
use matchsim::rng::{derive_seed, rng_from_seed};
use matchsim::stats::{summarize, summarize_lazy};
use matchsim::{Market, MarketConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn harness() -> Harness {
    Harness::new(None).expect("thread pool")
}

fn small_market_oracle() -> Outcome {
    let r = cross_check_small_markets(600, 5, 2, 1).map_err(|e| e.to_string())?;
    check(r.passed() && r.instances == 600, format!("{r:?}"))
}

fn moderate_regime() -> Outcome {
    let cfg = MarketConfig::new(1001, -1, 20, 0).unwrap();
    let s = harness()
        .run_replications(&cfg, 500, 2)
        .map_err(|e| e.to_string())?;
    let (rm, rw, dw) = (
        s.mean(Metric::RMen),
        s.mean(Metric::RWomen),
        s.mean(Metric::DeltaW),
    );
    let root = 20f64.sqrt();
    let pred = 1001.0 * (-root).exp();
    let ok = within(rm, root, 0.2)
        && within(rw, root, 0.2)
        && rw / rm <= 1.15
        && (pred / 3.0..=3.0 * pred).contains(&dw);
    check(
        ok,
        format!(
            "r_men={rm:.4} r_women={rw:.4} ratio={:.4} delta_w={dw:.3} band=[{:.3}, {:.3}]",
            rw / rm,
            pred / 3.0,
            3.0 * pred
        ),
    )
}

fn dense_regime() -> Outcome {
    let cfg = MarketConfig::new(1001, -1, 100, 0).unwrap();
    let reps = harness()
        .replicate(&cfg, 500, 3)
        .map_err(|e| e.to_string())?;
    let mean =
        |m: Metric| reps.iter().map(|r| r.value(m, 100).unwrap()).sum::<f64>() / reps.len() as f64;
    let (rm, rw) = (mean(Metric::RMen), mean(Metric::RWomen));
    let no_unmatched = reps
        .iter()
        .filter(|r| r.value(Metric::DeltaM, 100) == Some(0.0))
        .count() as f64
        / reps.len() as f64;
    let ln = 1001f64.ln();
    let ok = within(rm, ln, 0.2) && within(rw, 100.0 / ln, 0.25) && no_unmatched >= 0.9;
    check(ok, format!("r_men={rm:.4} (log n={ln:.4}) r_women={rw:.4} (d/log n={:.4}) P(delta_m=0)={no_unmatched:.3}", 100.0 / ln))
}

fn thresholds() -> Outcome {
    let h = harness().with_engine(Engine::Eager);
    let run = |kind, n, lo, hi| {
        h.find_threshold(&ThresholdSpec::new(kind, n, 500).with_bounds(lo, hi), 4)
            .map_err(|e| e.to_string())
    };
    let gap = run(ThresholdKind::RankGap, 1000, 2, 200)?;
    let unmatched = run(ThresholdKind::UnmatchedMen, 1000, 2, 200)?;
    let conn = run(ThresholdKind::Connectivity, 500, 1, 50)?;
    let ok = (33..=62).contains(&gap.d_star)
        && (33..=62).contains(&unmatched.d_star)
        && (4..=9).contains(&conn.d_star);
    check(
        ok,
        format!(
            "rank_gap d*={} unmatched_men d*={} connectivity d*={}",
            gap.d_star, unmatched.d_star, conn.d_star
        ),
    )
}

fn imbalance_smoothness() -> Outcome {
    let h = harness();
    let ks: Vec<i64> = (-10..=10).collect();
    let sparse = h
        .sweep_imbalance(500, 10, &ks, 500, 5)
        .map_err(|e| e.to_string())?;
    let curve: Vec<f64> = sparse
        .iter()
        .map(|s| s.mean(Metric::RMenNormalized))
        .collect();
    let max_jump = curve
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let dense = h
        .sweep_imbalance(500, 450, &[-1, 1], 500, 5)
        .map_err(|e| e.to_string())?;
    let (below, above) = (
        dense[0].mean(Metric::RMenNormalized),
        dense[1].mean(Metric::RMenNormalized),
    );
    let ok = max_jump < 0.02 && (above - below).abs() > 0.10;
    check(
        ok,
        format!("d=10 max jump={max_jump:.4}; d=450 r_men/d k=-1: {below:.4} k=+1: {above:.4}"),
    )
}

fn hop_statistics() -> Outcome {
    let cfg = MarketConfig::new(500, 0, 7, 0).unwrap();
    let s = harness()
        .hop_stats(&cfg, 500, None, 3, 6)
        .map_err(|e| e.to_string())?;
    let means: Vec<f64> = s.within.iter().map(|m| m.mean).collect();
    let targets = [0.094, 0.981, 1.000];
    let ok = means
        .iter()
        .zip(targets)
        .all(|(m, t)| (m - t).abs() <= 0.01);
    check(
        ok,
        format!(
            "within 1/2/3 hops = {:.4} / {:.4} / {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

fn run_identities() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut runs = 0;
    for idx in 0..1500u64 {
        use rand::Rng;
        let n = rng.random_range(1..=300usize);
        let k = rng.random_range(-(n as i64 - 1).min(20)..=20);
        let d = rng.random_range(1..=n);
        let cfg = MarketConfig::new(n, k, d, derive_seed(7, &[idx])).unwrap();
        let market = Market::generate(&cfg).unwrap();
        let mosm = run_mosm_traced(&market, TraceOptions::default());
        let lazy = run_mosm_lazy(&cfg, &mut rng_from_seed(cfg.seed)).map_err(|e| e.to_string())?;
        for (trace, s) in [
            (
                &mosm.trace,
                summarize(&market, &mosm.matching).map_err(|e| e.to_string())?,
            ),
            (&lazy.result.trace, summarize_lazy(&lazy)),
        ] {
            runs += 1;
            let fail = |what: &str| Err(format!("{what} fails at {cfg:?}"));
            if trace.final_delta_m() as i64 != trace.final_delta_w() as i64 + k {
                return fail("delta_m = delta_w + k");
            }
            if (s.r_men * cfg.num_men() as f64 - (trace.tau + s.delta_m) as f64).abs()
                > 1e-6 * cfg.num_men() as f64
            {
                return fail("R_MEN (n+k) = tau + delta_m");
            }
            if !trace.delta_m_series.windows(2).all(|w| w[0] <= w[1])
                || !trace.delta_w_series.windows(2).all(|w| w[0] >= w[1])
            {
                return fail("monotone unmatched counts");
            }
            if trace.w_counts.iter().sum::<usize>() != trace.tau {
                return fail("sum of proposals received = tau");
            }
        }
        let wosm = run_wosm(&market).matching;
        for i in 0..market.num_men() {
            let rank = |w: Option<usize>| w.map_or(d + 1, |j| market.man_rank(i, j).unwrap());
            if rank(mosm.matching.wife(i)) > rank(wosm.wife(i)) {
                return Err(format!("man {i} prefers WOSM at {cfg:?}"));
            }
        }
    }
    Ok(format!(
        "{runs} runs (eager and lazy) satisfy all identities"
    ))
}

fn lazy_equivalence() -> Outcome {
    let cfg = MarketConfig::new(200, -1, 10, 0).unwrap();
    let eager = harness()
        .run_replications(&cfg, 2000, 8)
        .map_err(|e| e.to_string())?;
    let lazy = harness()
        .with_engine(Engine::Lazy)
        .run_replications(&cfg, 2000, 9)
        .map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for m in [Metric::Tau, Metric::RMen, Metric::DeltaW] {
        let (a, b): (&MetricStats, &MetricStats) = (eager.get(m).unwrap(), lazy.get(m).unwrap());
        let pooled = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
        let z = (a.mean - b.mean).abs() / pooled;
        ok &= z <= 2.0;
        details.push(format!("{} {:.4}/{:.4} z={z:.2}", m.name(), a.mean, b.mean));
    }
    let mut rng = rng_from_seed(10);
    for (w, later) in [(1usize, 1usize), (4, 5), (10, 0)] {
        let draws = 100_000;
        let xs: Vec<f64> = (0..draws)
            .map(|_| sample_woman_rank(w, w + later, &mut rng).unwrap() as f64)
            .collect();
        let s = MetricStats::from_values(&xs);
        let expected = 1.0 + later as f64 / (w as f64 + 1.0);
        ok &= (s.mean - expected).abs() <= 3.0 * s.std_error() + 1e-12;
        details.push(format!("rank({w},{later}) {:.4} vs {expected:.4}", s.mean));
    }
    check(ok, details.join("; "))
}

fn balls_into_bins_checks() -> Outcome {
    let mut rng = rng_from_seed(11);
    let runs = 10_000;
    let (n, t) = (100, 100);
    let empties: Vec<f64> = (0..runs)
        .map(|_| balls_into_bins(t, n, &mut rng).unwrap().empty as f64 / n as f64)
        .collect();
    let e = MetricStats::from_values(&empties);
    let expected = expected_empty_fraction(t, n);
    let empty_ok = (e.mean - expected).abs() <= 3.0 * e.std_error();

    let r = reciprocal_sum_check(t, n, runs, &mut rng).map_err(|e| e.to_string())?;
    let recip_ok = (r.mean - r.reference).abs() <= 3.0 * r.std_error && r.mean <= r.bound;

    let cutoff = 2.0 * n as f64 * (n as f64).ln();
    let tail = (0..runs)
        .filter(|_| coupon_collector_draws(n, &mut rng) as f64 >= cutoff)
        .count() as f64
        / runs as f64;
    let sigma = (0.01 * 0.99 / runs as f64).sqrt();
    let tail_ok = tail <= 0.01 + 3.0 * sigma;
    check(
        empty_ok && recip_ok && tail_ok,
        format!(
            "empty {:.4} vs {expected:.4}; reciprocal {:.5} vs {:.5}; coupon tail {tail:.4}",
            e.mean, r.mean, r.reference
        ),
    )
}

fn determinism_across_workers() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("sweep-{workers}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_matchsim"))
            .args([
                "sweep-degree",
                "--n",
                "300",
                "--k",
                "-1",
                "--d",
                "5:40:5",
                "--reps",
                "60",
                "--seed",
                "12",
            ])
            .args(["--workers", workers, "--out", out.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    check(
        outputs[0] == outputs[1],
        format!("{} bytes, --workers 1 vs 3", outputs[0].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("small-market oracle agreement", small_market_oracle),
        ("moderate regime at d=20", moderate_regime),
        ("dense regime at d=100", dense_regime),
        ("threshold locations", thresholds),
        ("imbalance smoothness", imbalance_smoothness),
        ("hop statistics", hop_statistics),
        ("run identities", run_identities),
        ("lazy engine equivalence", lazy_equivalence),
        ("balls-into-bins process", balls_into_bins_checks),
        (
            "determinism across worker counts",
            determinism_across_workers,
        ),
    ];
    let mut failed = 0;
    for (idx, (name, criterion)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = criterion();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("AC{:<2} PASS  {name} ({secs:.1}s): {detail}", idx + 1),
            Err(detail) => {
                failed += 1;
                println!("AC{:<2} FAIL  {name} ({secs:.1}s): {detail}", idx + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
