//! One line per acceptance criterion; exits nonzero when any fails.

mod common;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    fd_jacobian, fd_sensitivity, ols_mse, random_inputs, random_net, rel_err, spearman, Affine,
    FD_FLOOR,
};
use qcnet_core::data::{encode, split_records, FactorValue, FactorValues, NormSource, SplitSpec};
use qcnet_core::doe::{
    build_full_factorial, check_lot, compute_limits, evaluate_plan, CheckMode, FixedPolicy,
    SweepSpec,
};
use qcnet_core::eval::{evaluate, non_detection_rate, ConfusionCounts, FpMode};
use qcnet_core::pipeline::{run, PipelineConfig, PipelineOutcome};
use qcnet_core::prune::PruneConfig;
use qcnet_core::synth::{
    bayes_rates, generate, generate_detailed, oracle_model, true_logit, true_risk, RiskTerm,
    SyntheticProcessSpec,
};
use qcnet_core::train::{run_lm, train, Batch, Estimator, RobustConfig, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let n0 = 1 + (seed % 5) as usize;
        let n1 = 1 + (seed / 5 % 4) as usize;
        let m = random_net(n0, n1, seed, 0.2);
        let xs = random_inputs(n0, 6, seed);
        let j = m.jacobian_wrt_params(&xs).unwrap();
        for (a, b) in j.iter().zip(fd_jacobian(&m, &xs).iter()) {
            worst = worst.max(rel_err(*a, *b, FD_FLOOR));
        }
        for x in &xs {
            let s = m.sensitivity_wrt_inputs(x).unwrap();
            for (a, b) in s.iter().zip(&fd_sensitivity(&m, x)) {
                worst = worst.max(rel_err(*a, *b, FD_FLOOR));
            }
        }
    }
    let took = start.elapsed();
    outcome(
        worst <= 1e-5 && took < Duration::from_secs(30),
        format!("max relative error {worst:.2e} over 100 nets in {took:.2?}"),
    )
}

fn lm_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut most = 0;
    let settings = qcnet_core::train::LmSettings {
        max_iterations: 5,
        robust: RobustConfig::squared(),
        ..TrainConfig::default().lm_settings()
    };
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 1 + (seed % 5) as usize;
        let coef: Vec<f64> = (0..=width).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let xs: Vec<f64> = (0..80 * width).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs
            .chunks(width)
            .map(|x| {
                coef[width]
                    + x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
                    + 0.3 * rng.gen_range(-1.0..1.0)
            })
            .collect();
        let start = Affine {
            theta: vec![0.0; width + 1],
        };
        let out = run_lm(start, Batch::new(&xs, &ys, width).unwrap(), &settings).unwrap();
        worst = worst.max((out.criterion - ols_mse(&xs, &ys, width)).abs());
        most = most.max(out.iterations);
    }
    outcome(
        worst < 1e-8 && most <= 5,
        format!("max residual gap {worst:.2e}, at most {most} iterations, 50 problems"),
    )
}

fn robustness() -> Outcome {
    let seeds = 10u64;
    let mut nd = [0.0f64; 4];
    for seed in 0..seeds {
        let spec = SyntheticProcessSpec {
            intercept: -2.4,
            seed,
            ..SyntheticProcessSpec::default()
        };
        let batch = generate_detailed(&spec, 2270).unwrap();
        let (ri, rv) = split_records(&batch.records, &SplitSpec::chronological(1202)).unwrap();
        let ident = encode(&ri, &spec.schema, "stains", NormSource::Fit).unwrap();
        let valid = encode(
            &rv,
            &spec.schema,
            "stains",
            NormSource::Params(&ident.encoding.norm_params),
        )
        .unwrap();
        // the adversary flips the tenth of N with the highest true risk among the
        // identification positives: a confident cluster relabelled as safe
        let mut noisy = ident.clone();
        let mut positives: Vec<usize> = (0..noisy.len())
            .filter(|&k| noisy.targets[k] == 1.0)
            .collect();
        positives.sort_by(|a, b| batch.risks[*b].total_cmp(&batch.risks[*a]).then(a.cmp(b)));
        for &k in positives.iter().take(noisy.len() / 10) {
            noisy.targets[k] = 0.0;
        }
        let mut slot = 0;
        for estimator in [Estimator::Bisquare, Estimator::Squared] {
            for data in [&ident, &noisy] {
                // most restarts fit the flipped cluster during the unit-weight warm-up;
                // selection on the clean validation set finds one that did not
                let config = TrainConfig {
                    n1_initial: 25,
                    restarts: 10,
                    max_lm_iterations: 200,
                    robust: RobustConfig {
                        estimator,
                        ..RobustConfig::default()
                    },
                    master_seed: seed,
                    ..TrainConfig::default()
                };
                let (m, _) = train(data, &valid, &config).unwrap();
                let report = evaluate(&m, &valid, 0.5, FpMode::OfPredictedPositives).unwrap();
                nd[slot] += report.non_detection_rate.unwrap() / seeds as f64;
                slot += 1;
            }
        }
    }
    let bisquare = 100.0 * (nd[1] - nd[0]);
    let squared = 100.0 * (nd[3] - nd[2]);
    outcome(
        bisquare <= 5.0 && squared > bisquare,
        format!("mean ND increase: bisquare {bisquare:+.2} pp, squared {squared:+.2} pp"),
    )
}

fn pipeline_config(restarts: usize) -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            n1_initial: 25,
            restarts,
            master_seed: 1,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn pipeline(out: &PipelineOutcome, took: Duration) -> Outcome {
    let spec = SyntheticProcessSpec::default();
    let bayes = bayes_rates(&spec, 0.5, 200_000, 1).unwrap();
    let e = &out.report.validation_eval;
    let nd = e.non_detection_rate.unwrap_or(1.0);
    let fp = e.false_positive_of_predicted_positives.unwrap_or(1.0);
    let inputs = out.model.encoding().unwrap().width();
    let shape = (
        out.report.identification,
        out.report.validation,
        inputs,
        out.report.train.restarts.len(),
    );
    outcome(
        nd <= 0.20 && fp <= 0.25 && shape == (1202, 1068, 15, 20) && took < Duration::from_secs(600),
        format!(
            "ND {:.1}%, FP {:.1}% of predicted positives (Bayes {:.1}% / {:.1}%), {} active parameters, {took:.1?}",
            100.0 * nd,
            100.0 * fp,
            100.0 * bayes.non_detection_rate,
            100.0 * bayes.false_positive_proportion,
            out.model.active_count(),
        ),
    )
}

fn null_factor() -> Outcome {
    let mut hits = 0;
    for seed in 0..20u64 {
        let spec = SyntheticProcessSpec {
            seed,
            ..SyntheticProcessSpec::default()
        };
        let records = generate(&spec, 2270).unwrap();
        let config = PipelineConfig {
            train: TrainConfig {
                n1_initial: 8,
                restarts: 3,
                max_lm_iterations: 200,
                master_seed: seed,
                ..TrainConfig::default()
            },
            prune: Some(PruneConfig {
                tolerance: 0.03,
                ..PruneConfig::default()
            }),
            ..PipelineConfig::default()
        };
        let out = run(&records, &spec.schema, &config).unwrap();
        hits += !out.model.uses_factor("passes") as usize;
    }
    outcome(hits >= 16, format!("passes eliminated in {hits}/20 runs"))
}

fn doe_fidelity(out: &PipelineOutcome) -> Outcome {
    let spec = SyntheticProcessSpec::default();
    let records = generate(&spec, 2270).unwrap();
    let factors = ["basis_weight", "drying_time", "load_factor"];
    let swept: Vec<SweepSpec> = factors
        .iter()
        .map(|f| SweepSpec::equally_spaced(f, 10))
        .collect();
    let policy = FixedPolicy::Statistics {
        levels: [("passes", "2"), ("layers", "2")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        values: FactorValues::new(),
    };
    let plan = build_full_factorial(&spec.schema, &swept, &policy, Some(&records), 0.5).unwrap();
    let surface = evaluate_plan(&out.model, &plan).unwrap();
    let mut truth = vec![vec![0.0; 10]; 3];
    for r in 0..plan.row_count() {
        let risk = true_risk(&spec, &plan.row_values(r)).unwrap();
        for (k, &i) in plan.level_indices(r).iter().enumerate() {
            truth[k][i] += risk / 100.0;
        }
    }
    let mut pass = surface.rows.len() == 1000;
    let mut parts = Vec::new();
    for (k, f) in factors.iter().enumerate() {
        let model = &surface.marginals[k].mean_risk;
        let rho = spearman(model, &truth[k]);
        // the surrogate's trend over the levels must have the generator's sign
        let levels: Vec<f64> = (0..10).map(f64::from).collect();
        let trend = spearman(&levels, model).signum();
        let sign = spec.monotone_effect(f).unwrap();
        pass &= rho.abs() >= 0.9 && trend == sign;
        parts.push(format!("{f} rho {rho:.3}"));
    }
    let basis = &surface.marginals[0].mean_risk;
    pass &= basis[9] > basis[0];
    outcome(
        pass,
        format!("{} rows; {}", surface.rows.len(), parts.join(", ")),
    )
}

fn limits() -> Outcome {
    let base = SyntheticProcessSpec::default();
    let neg = |t: &RiskTerm| match t {
        RiskTerm::Linear { factor, coef } => RiskTerm::Linear {
            factor: factor.clone(),
            coef: -0.5 * coef,
        },
        RiskTerm::Level { factor, coefs } => RiskTerm::Level {
            factor: factor.clone(),
            coefs: coefs.iter().map(|(k, v)| (k.clone(), -v)).collect(),
        },
        other => other.clone(),
    };
    let mut reversed = SyntheticProcessSpec {
        terms: base.terms.iter().map(neg).collect(),
        intercept: 0.0,
        ..base.clone()
    };
    // centre the reversed logit on the middle of every range
    let mid: FactorValues = base
        .schema
        .factors
        .iter()
        .map(|f| {
            let v = match f.range() {
                Some((lo, hi)) => FactorValue::Number(0.5 * (lo + hi)),
                None => FactorValue::from("2"),
            };
            (f.name.clone(), v)
        })
        .collect();
    reversed.intercept = -true_logit(&reversed, &mid).unwrap();
    let configs = [
        ("default", base.clone()),
        (
            "high prevalence",
            SyntheticProcessSpec {
                intercept: -2.4,
                ..base.clone()
            },
        ),
        ("reversed", reversed),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    let mut errors = Vec::new();
    for (name, spec) in &configs {
        let oracle = oracle_model(spec).unwrap();
        for _ in 0..40 {
            let ctx: FactorValues = spec
                .schema
                .factors
                .iter()
                .map(|f| {
                    let v = match f.range() {
                        Some((lo, hi)) => FactorValue::Number(rng.gen_range(lo..=hi)),
                        None => FactorValue::Level(
                            f.states().unwrap().choose(&mut rng).unwrap().clone(),
                        ),
                    };
                    (f.name.clone(), v)
                })
                .collect();
            let t = [0.1, 0.3, 0.5, 0.7, 0.9][rng.gen_range(0..5)];
            let l = compute_limits(&oracle, &spec.schema, &ctx, t, 101).unwrap();
            checked += l.limits.len();
            errors.extend(
                common::limit_crossing_errors(spec, &ctx, &l, t)
                    .into_iter()
                    .map(|e| format!("{name}: {e}")),
            );
        }
    }
    let detail = match errors.first() {
        None => format!("{checked} intervals over 3 configurations within one grid step"),
        Some(e) => format!("{} mismatches, first: {e}", errors.len()),
    };
    outcome(errors.is_empty(), detail)
}

fn metric() -> Outcome {
    let c = ConfusionCounts {
        tp: 112,
        fp: 0,
        tn: 0,
        fn_: 15,
        threshold: 0.5,
    };
    let nd = 100.0 * non_detection_rate(&c).unwrap();
    outcome((nd - 11.8).abs() <= 0.05, format!("{nd:.3}%"))
}

/// Model, report and a fixed set of lot decisions, as bytes.
fn artifacts(out: &PipelineOutcome) -> Vec<String> {
    let spec = SyntheticProcessSpec::default();
    let mut lots: Vec<FactorValues> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..8 {
        lots.push(
            spec.schema
                .factors
                .iter()
                .map(|f| {
                    let v = match f.range() {
                        Some((lo, hi)) => FactorValue::Number(rng.gen_range(lo..=hi).round()),
                        None => FactorValue::from("2"),
                    };
                    (f.name.clone(), v)
                })
                .collect(),
        );
    }
    let mut bytes = vec![out.model.to_json(), out.report.to_json()];
    for lot in &lots {
        for mode in [CheckMode::Warning, CheckMode::Limitation] {
            bytes.push(
                check_lot(&out.model, &spec.schema, lot, mode, 0.5, 101)
                    .unwrap()
                    .to_json(),
            );
        }
    }
    bytes
}

fn determinism(many: &PipelineOutcome, threads: usize) -> Outcome {
    let spec = SyntheticProcessSpec::default();
    let records = generate(&spec, 2270).unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run(&records, &spec.schema, &pipeline_config(20)).unwrap());
    let (a, b) = (artifacts(many), artifacts(&one));
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x == y);
    outcome(
        same,
        format!(
            "{} artifacts compared between 1 and {threads} threads",
            a.len()
        ),
    )
}

fn main() {
    // optional name filters: `cargo test --test acceptance -- robustness limits`
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let wanted =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o));
    };

    if wanted("gradient correctness") {
        record("gradient correctness", gradients());
    }
    if wanted("lm oracle") {
        record("LM oracle", lm_oracle());
    }
    if wanted("robustness") {
        record("robustness", robustness());
    }

    let needs_full = ["pipeline replication", "doe fidelity", "determinism"]
        .iter()
        .any(|n| wanted(n));
    let threads = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .max(4);
    let full = needs_full.then(|| {
        let spec = SyntheticProcessSpec::default();
        let records = generate(&spec, 2270).unwrap();
        let start = Instant::now();
        let out = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(&records, &spec.schema, &pipeline_config(20)).unwrap());
        (out, start.elapsed())
    });
    if let (true, Some((out, took))) = (wanted("pipeline replication"), &full) {
        record("pipeline replication", pipeline(out, *took));
    }
    if wanted("null-factor elimination") {
        record("null-factor elimination", null_factor());
    }
    if let (true, Some((out, _))) = (wanted("doe fidelity"), &full) {
        record("DOE fidelity", doe_fidelity(out));
    }
    if wanted("limits correctness") {
        record("limits correctness", limits());
    }
    if wanted("metric regression") {
        record("metric regression", metric());
    }
    if let (true, Some((out, _))) = (wanted("determinism"), &full) {
        record("determinism", determinism(out, threads));
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
