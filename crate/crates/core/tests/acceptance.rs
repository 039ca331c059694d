//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use pacbayes::bounds::{self, BoundFamily, BoundParams};
use pacbayes::compare::{self, SweepConfig};
use pacbayes::gibbs::{self, ProbMeasure};
use pacbayes::instance::{random_instance, Instance};
use pacbayes::model::{self, DataDistribution, LossTable};
use pacbayes::processes;
use pacbayes::rng;
use pacbayes::verify::{self, CoverageConfig, PosteriorRule};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

// Catoni prefactor C/(1-e^{-C}) at 40 digits (mpmath).
const PREFACTOR_REF: [(f64, f64); 4] = [
    (1e-6, 1.000_000_500_000_083_3),
    (0.1, 1.050_833_194_477_505),
    (1.0, 1.581_976_706_869_326_4),
    (5.0, 5.033_918_274_531_521),
];

// Matched-Catoni constants at c = 1, c2 = 0.5, delta = 0.05 (mpmath bisection).
const MATCHED_LAMBDA_REF: f64 = 0.289_677_152_245_857_7;
const MATCHED_CBIG_REF: f64 = 24.164_832_972_601_475;

fn random_posterior(n: usize, seed: u64) -> ProbMeasure {
    let mut r = rng::stream(seed, 7);
    let w: Vec<f64> = (0..n).map(|_| r.random::<f64>().powi(3)).collect();
    ProbMeasure::from_weights(&w).unwrap()
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn crossover_instance() -> Instance {
    let table = LossTable::new(vec![vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]]).unwrap();
    let dist = DataDistribution::new(vec![0.3, 0.3, 0.35, 0.05]).unwrap();
    let prior = ProbMeasure::new(vec![0.8, 0.2]).unwrap();
    let posterior = ProbMeasure::new(vec![0.95, 0.05]).unwrap();
    Instance::new(dist, table, prior, Some(posterior)).unwrap()
}

fn flatness_identity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut r = rng::stream(1001, 0);
    for i in 0..100u64 {
        let hyps = r.random_range(1..=20);
        let points = r.random_range(1..=10);
        let m = r.random_range(1..=50);
        let inst = random_instance(hyps, points, true, 10_000 + i).unwrap();
        let q = random_posterior(hyps, i);
        let s = model::draw_sample(&inst.dist, m, i).unwrap();
        for h in [0.1, 0.5, 0.9] {
            let a = gibbs::flatness(&q, &inst.table, &s, h).unwrap().value;
            let b = gibbs::flatness_alternate(&q, &inst.table, &s, h).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    if worst <= 1e-9 {
        Ok(format!("max |difference| {worst:.2e} in {:.2?}", start.elapsed()))
    } else {
        Err(format!("max |difference| {worst:.2e}"))
    }
}

fn completely_flat() -> Outcome {
    let mut worst = 0.0f64;
    let mut r = rng::stream(1002, 0);
    for i in 0..50u64 {
        let hyps = r.random_range(1..=20);
        let points = r.random_range(1..=10);
        let inst = random_instance(hyps, points, true, 20_000 + i).unwrap();
        let s = model::draw_sample(&inst.dist, r.random_range(1..=50), i).unwrap();
        let f = r.random_range(0..hyps);
        let h: f64 = r.random_range(0.05..=1.0);
        let q = ProbMeasure::point_mass(hyps, f).unwrap();
        let flat = gibbs::flatness(&q, &inst.table, &s, h).unwrap().value;
        let emp = model::empirical_risk(&inst.table, f, &s).unwrap();
        worst = worst.max((flat - h * h * emp).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max |flatness - h^2 emp| {worst:.2e}"))
    } else {
        Err(format!("max |flatness - h^2 emp| {worst:.2e}"))
    }
}

fn catoni_prefactor() -> Outcome {
    let mut worst = 0.0f64;
    for (c, reference) in PREFACTOR_REF {
        worst = worst.max((bounds::catoni_prefactor(c) - reference).abs());
    }
    let near_limit = (bounds::catoni_prefactor(1e-6) - 1.0).abs();
    if worst <= 1e-10 && near_limit <= 1e-5 {
        Ok(format!("max error {worst:.2e}, |prefactor(1e-6) - 1| {near_limit:.2e}"))
    } else {
        Err(format!("max error {worst:.2e}, |prefactor(1e-6) - 1| {near_limit:.2e}"))
    }
}

fn duality() -> Outcome {
    let start = Instant::now();
    let grid = processes::default_lambda_grid();
    let mut worst = 0.0f64;
    let mut r = rng::stream(1004, 0);
    for _ in 0..50 {
        let w: Vec<f64> = (0..10).map(|_| 0.05 + r.random::<f64>()).collect();
        let p = ProbMeasure::from_weights(&w).unwrap();
        let values: Vec<f64> = (0..10).map(|_| r.random::<f64>()).collect();
        for kappa in [0.1, 1.0, 3.0] {
            let primal = processes::kl_ball_sup(&p, &values, kappa).unwrap();
            let dual = processes::kl_dual_value(&p, &values, kappa, &grid).unwrap();
            worst = worst.max((primal - dual).abs());
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    if worst <= 1e-6 {
        Ok(format!("max gap {worst:.2e} in {:.2?}", start.elapsed()))
    } else {
        Err(format!("max gap {worst:.2e}"))
    }
}

fn debias_mgf() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut combos = 0;
    for i in 0..10u64 {
        let inst = random_instance(6, 5, true, 40_000 + i).unwrap();
        let m = [1, 5, 20, 100, 1000][i as usize % 5];
        for x in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let boundary = bounds::log_cosh_ratio(x);
            for k in [boundary, boundary + 1e-3, boundary + 0.1, 1.0f64.max(boundary)] {
                let v = processes::debias_mgf_exact(&inst.prior, &inst.table, &inst.dist, x, k, m).unwrap();
                worst = worst.max(v);
                combos += 1;
            }
        }
    }
    if combos == 200 && worst <= 1.0 + 1e-12 {
        Ok(format!("{combos} combinations, max MGF {worst:.15}"))
    } else {
        Err(format!("{combos} combinations, max MGF {worst:.15}"))
    }
}

fn xy_mgf() -> Outcome {
    let start = Instant::now();
    let c = 1.0;
    let mut worst = f64::NEG_INFINITY;
    let mut evaluations = 0;
    for m in 1..=6u32 {
        for code in 0..3usize.pow(m) {
            let mu: Vec<f64> = (0..m).map(|i| (code / 3usize.pow(i) % 3) as f64 * 0.5).collect();
            for h in [0.25, 0.5, 1.0] {
                let c2 = bounds::flatness_c2(c, h);
                let cap = processes::xy_lambda_cap(c, c2, h);
                for frac in [0.5, 0.99] {
                    let v = processes::xy_mgf_bruteforce(&mu, frac * cap, c, c2, h).map_err(|e| e.to_string())?;
                    worst = worst.max(v);
                    evaluations += 1;
                }
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    if worst <= 1.0 + 1e-12 {
        Ok(format!("{evaluations} evaluations, max MGF {worst:.15} in {:.2?}", start.elapsed()))
    } else {
        Err(format!("max MGF {worst:.15}"))
    }
}

fn shifted_flatness_tail() -> Outcome {
    // Chosen so that t/2 lies between 0.008 and 0.05, where the statistic can reach it.
    let configs: [(usize, f64, f64); 10] = [
        (100, 0.5, 0.9),
        (200, 0.2, 0.9),
        (500, 0.1, 0.5),
        (1000, 0.05, 0.9),
        (50, 1.0, 1.0),
        (300, 0.3, 0.75),
        (100, 1.0, 0.5),
        (2000, 0.02, 0.9),
        (150, 0.5, 0.6),
        (400, 0.25, 1.0),
    ];
    let mut max_frequency = 0.0f64;
    for (i, (m, c2, h)) in configs.into_iter().enumerate() {
        let inst = random_instance(5, 8, true, 50_000 + i as u64).unwrap();
        let risks = gibbs::true_risks(&inst.table, &inst.dist).unwrap();
        let f = (0..risks.len())
            .min_by(|&a, &b| (risks[a] - 0.5).abs().total_cmp(&(risks[b] - 0.5).abs()))
            .unwrap();
        let t = processes::shifted_flatness_threshold(m, c2, h);
        let est = processes::shifted_flatness_tail_mc(&inst.table, f, &inst.dist, m, c2, h, t, 10_000, 700 + i as u64)
            .map_err(|e| e.to_string())?;
        max_frequency = max_frequency.max(est.probability);
        if est.probability > 0.5 + est.wilson_halfwidth {
            return Err(format!("config {i}: frequency {} exceeds 0.5 + {}", est.probability, est.wilson_halfwidth));
        }
    }
    Ok(format!("10 configurations, max tail frequency {max_frequency:.4}"))
}

fn coverage_instances() -> Vec<(&'static str, Instance)> {
    vec![
        ("random binary", random_instance(20, 10, true, 60_001).unwrap()),
        ("random bounded", random_instance(12, 8, false, 60_002).unwrap()),
        ("two hypotheses", crossover_instance()),
    ]
}

fn coverage_soundness() -> Outcome {
    let start = Instant::now();
    let params = BoundParams::default();
    let rule = PosteriorRule::GibbsPosterior { beta: 1.0 };
    let mut worst = 0.0f64;
    let mut violations = 0;
    for (i, (name, inst)) in coverage_instances().into_iter().enumerate() {
        let config = CoverageConfig {
            params,
            m: 100,
            trials: 1000,
            seed: 80 + i as u64,
        };
        let reports =
            verify::coverage_experiments(&inst.table, &inst.dist, &inst.prior, &rule, &BoundFamily::ALL, &config)
                .map_err(|e| e.to_string())?;
        for r in reports {
            violations += r.violations;
            worst = worst.max(r.clopper_pearson_upper);
            if r.clopper_pearson_upper > params.delta {
                return Err(format!("{} on {name}: {} violations, upper limit {}", r.family, r.violations, r.clopper_pearson_upper));
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!(
        "15 experiments, {violations} violations, worst upper limit {worst:.4} in {:.2?}",
        start.elapsed()
    ))
}

fn fast_vs_slow_rate() -> Outcome {
    let table = LossTable::new(vec![
        vec![0.0, 0.0, 0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0, 1.0, 0.0],
        vec![0.0, 1.0, 1.0, 0.0, 0.0],
    ])
    .unwrap();
    let dist = DataDistribution::new(vec![0.3, 0.3, 0.2, 0.18, 0.02]).unwrap();
    let prior = ProbMeasure::uniform(3).unwrap();
    let config = CoverageConfig {
        params: BoundParams::default(),
        m: 10_000,
        trials: 100,
        seed: 90,
    };
    let rule = PosteriorRule::GibbsPosterior { beta: 1.0 };
    let reports = verify::coverage_experiments(
        &table,
        &dist,
        &prior,
        &rule,
        &[BoundFamily::Catoni, BoundFamily::McAllester],
        &config,
    )
    .map_err(|e| e.to_string())?;
    let (catoni, mcallester) = (reports[0].mean_slack, reports[1].mean_slack);
    let detail = format!("mean slack Catoni {catoni:.5}, McAllester {mcallester:.5}");
    if catoni < mcallester {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn matched_constants() -> Outcome {
    let k = bounds::derive_matched_catoni_constants(1.0, 0.5, 0.05).map_err(|e| e.to_string())?;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (e_lambda, e_big) = (rel(k.lambda_over_m, MATCHED_LAMBDA_REF), rel(k.c_big, MATCHED_CBIG_REF));
    if e_lambda > 1e-3 || e_big > 1e-3 {
        return Err(format!("lambda/m {} C' {}", k.lambda_over_m, k.c_big));
    }
    let params = BoundParams {
        c: 1.0,
        c2: Some(0.5),
        ..BoundParams::default()
    };
    let rule = PosteriorRule::GibbsPosterior { beta: 1.0 };
    for (i, (name, inst)) in coverage_instances().into_iter().enumerate() {
        let config = CoverageConfig {
            params,
            m: 100,
            trials: 1000,
            seed: 80 + i as u64,
        };
        let r = verify::coverage_experiment(&inst.table, &inst.dist, &inst.prior, &rule, BoundFamily::MatchedCatoni, &config)
            .map_err(|e| e.to_string())?;
        if r.clopper_pearson_upper > params.delta {
            return Err(format!("unsound on {name}: upper limit {}", r.clopper_pearson_upper));
        }
    }
    Ok(format!("lambda/m {:.6}, C' {:.4}, sound on 3 instances", k.lambda_over_m, k.c_big))
}

fn crossover() -> Outcome {
    let start = Instant::now();
    let inst = crossover_instance();
    let rule = PosteriorRule::Fixed(inst.posterior.clone().unwrap());
    let config = SweepConfig {
        c: 1.0,
        h: 0.9,
        delta: 0.05,
        m_grid: compare::geometric_grid(500, 40_000, 1.25).unwrap(),
        trials: 50,
        seed: 11,
    };
    let table = compare::bound_sweep(&inst.table, &inst.dist, &inst.prior, &rule, &config).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(120))?;
    let m_star = table.crossover_m.ok_or("no crossover on the grid")? as f64;
    let threshold = table.schematic_threshold().map_err(|e| e.to_string())?;
    let ratio = m_star / threshold;
    let detail = format!("m* {m_star}, threshold {threshold:.2}, ratio {ratio:.3} in {:.2?}", start.elapsed());
    if (0.25..=4.0).contains(&ratio) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_twice(dir: &Path, args: &[&str]) -> Result<(), String> {
    let mut outputs = Vec::new();
    for run in 0..2 {
        let file = format!("run{run}.out");
        let status = Command::new(env!("CARGO_BIN_EXE_pacbayes"))
            .args(args)
            .args(["--out", &file, "--log", "runs.jsonl"])
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("{args:?} exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(std::fs::read(dir.join(&file)).map_err(|e| e.to_string())?);
    }
    if outputs[0].is_empty() || outputs[0] != outputs[1] {
        return Err(format!("{args:?} output differs between runs"));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path();
    crossover_instance().save(path.join("cross.txt")).map_err(|e| e.to_string())?;
    random_instance(8, 6, true, 3).unwrap().save(path.join("rand.txt")).map_err(|e| e.to_string())?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["coverage", "--instance", "rand.txt", "--seed", "5", "--trials", "300"],
        vec!["coverage", "--instance", "rand.txt", "--seed", "5", "--trials", "50", "--rule", "bound-minimizer", "--family", "flatness"],
        vec!["lemmas", "--which", "shifted-flatness", "--instance", "rand.txt", "--seed", "5", "--trials", "2000"],
        vec!["lemmas", "--which", "symmetrization", "--instance", "rand.txt", "--seed", "5", "--trials", "500"],
        vec!["lemmas", "--which", "symmetrization", "--variant", "quadratic", "--instance", "rand.txt", "--seed", "5", "--trials", "500"],
        vec!["duality", "--seed", "5", "--instances", "10"],
        vec!["optimize", "--instance", "rand.txt", "--seed", "5", "--family", "flatness"],
        vec!["sweep", "--instance", "cross.txt", "--seed", "5", "--m-grid", "100,400,1600", "--trials", "10"],
        vec!["gen-instance", "--seed", "5"],
    ];
    for args in &commands {
        run_twice(path, args)?;
    }
    Ok(format!("{} invocations byte-identical across reruns", commands.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("flatness identity", flatness_identity),
        ("completely flat posterior", completely_flat),
        ("Catoni prefactor", catoni_prefactor),
        ("KL-ball duality", duality),
        ("debias MGF", debias_mgf),
        ("XY MGF", xy_mgf),
        ("shifted-flatness tail", shifted_flatness_tail),
        ("coverage soundness", coverage_soundness),
        ("fast vs slow rate", fast_vs_slow_rate),
        ("matched-Catoni constants", matched_constants),
        ("crossover", crossover),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
