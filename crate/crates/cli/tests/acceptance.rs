//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Criteria and tolerances are pinned in code; nothing is
//! deferred to later calibration.
//!
//! Two checks document known limits of the published statistics they are
//! measured against (see the assertion messages): the fine-to-coarse half of
//! criterion 1 and the sum-binning variance leg of criterion 6. They are
//! asserted at their stated tolerances and fail honestly rather than being
//! loosened.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use tempo_snn_core::adapt::{
    adapt_euler, adapt_expectation, adapt_integral, AdaptMethod, ResolutionRatio,
};
use tempo_snn_core::harness::{
    e2e_experiment, single_neuron_experiment, Direction, E2eConfig, ExperimentReport,
};
use tempo_snn_core::linalg::max_abs_diff;
use tempo_snn_core::metrics::subsample;
use tempo_snn_core::network::{
    flatten_params, init_model, loss_and_grads, with_params, GradMode, ModelConfig, ModelMeta,
    TrainConfig,
};
use tempo_snn_core::neuron::{adlif_to_general, AdLifParams, GeneralNeuron};
use tempo_snn_core::normstats::{adapt_norm_stats, NormStats, StatAdaptRule};
use tempo_snn_core::resample::{ResampleKind, Sample, SpikeTensor};
use tempo_snn_core::rng::{derive_seed, Xoshiro256pp};

fn report_line(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn random_neuron(rng: &mut Xoshiro256pp) -> GeneralNeuron<f64> {
    let p = AdLifParams::new(
        rng.uniform(0.6, 0.98),
        rng.uniform(0.6, 0.98),
        rng.uniform(0.2, 0.5),
        rng.uniform(0.2, 0.5),
    )
    .unwrap();
    adlif_to_general(&p)
}

fn neuron_diff(a: &GeneralNeuron<f64>, b: &GeneralNeuron<f64>) -> f64 {
    max_abs_diff(a.transition(), b.transition())
        .max(max_abs_diff(a.feedback(), b.feedback()))
        .max(max_abs_diff(a.input(), b.input()))
        .max(max_abs_diff(a.recurrence(), b.recurrence()))
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_single_neuron_study_reproduction() {
    const TOL: f64 = 0.05;
    let start = Instant::now();
    let fine_to_coarse =
        single_neuron_experiment(1000, Direction::FineToCoarse, &AdaptMethod::ALL, 7, 1).unwrap();
    let coarse_to_fine =
        single_neuron_experiment(1000, Direction::CoarseToFine, &AdaptMethod::ALL, 7, 1).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let q1 = |r: &ExperimentReport, m: AdaptMethod| r.stats_for(m).unwrap().mean_q1;
    let q2 = |r: &ExperimentReport, m: AdaptMethod| r.stats_for(m).unwrap().mean_q2;

    let mut failures: Vec<String> = Vec::new();
    let mut check = |what: &str, got: f64, want: f64| {
        if (got - want).abs() > TOL {
            failures.push(format!("{what}: got {got:.3}, want {want:.2}+-{TOL}"));
        }
    };
    check(
        "f2c integral Q1",
        q1(&fine_to_coarse, AdaptMethod::Integral),
        0.92,
    );
    check(
        "f2c integral Q2",
        q2(&fine_to_coarse, AdaptMethod::Integral),
        0.97,
    );
    check("f2c none Q1", q1(&fine_to_coarse, AdaptMethod::None), 0.66);
    check(
        "f2c euler Q1",
        q1(&fine_to_coarse, AdaptMethod::Euler),
        0.87,
    );
    check(
        "f2c time-const Q1",
        q1(&fine_to_coarse, AdaptMethod::TimeConstant),
        0.77,
    );
    check(
        "c2f integral Q1",
        q1(&coarse_to_fine, AdaptMethod::Integral),
        0.97,
    );
    check(
        "c2f integral Q2",
        q2(&coarse_to_fine, AdaptMethod::Integral),
        0.99,
    );
    check("c2f none Q1", q1(&coarse_to_fine, AdaptMethod::None), 0.57);
    check(
        "c2f time-const Q1",
        q1(&coarse_to_fine, AdaptMethod::TimeConstant),
        0.84,
    );
    for (name, report) in [("f2c", &fine_to_coarse), ("c2f", &coarse_to_fine)] {
        let int = q1(report, AdaptMethod::Integral);
        let exp = q1(report, AdaptMethod::Expectation);
        let eul = q1(report, AdaptMethod::Euler);
        let tc = q1(report, AdaptMethod::TimeConstant);
        let none = q1(report, AdaptMethod::None);
        let ordered = (int - exp).abs() < 1e-6 && int >= eul - 1e-9 && eul > tc && tc > none;
        if !ordered {
            failures.push(format!(
                "{name} ordering integral~expectation >= euler > time-const > none violated: \
                 {int:.3} ~ {exp:.3} >= {eul:.3} > {tc:.3} > {none:.3}"
            ));
        }
    }
    if elapsed >= 60.0 {
        failures.push(format!("runtime {elapsed:.1}s exceeds 60s"));
    }

    let pass = failures.is_empty();
    report_line(
        "criterion 1 (study reproduction)",
        pass,
        &format!(
            "runtime {elapsed:.1}s; {}",
            if pass {
                "all cells within +-0.05".to_string()
            } else {
                failures.join("; ")
            }
        ),
    );
    assert!(
        pass,
        "published-value reproduction failed on: {}.\nThe fine-to-coarse half cannot be \
         reproduced from the stated procedure alone; see the repository notes for the \
         convention analysis. Deviations: {failures:?}",
        failures.join("; ")
    );
}

#[test]
fn criterion_2_integral_expectation_equivalence() {
    let ratios = [
        ResolutionRatio::new(2, 1).unwrap(),
        ResolutionRatio::new(3, 1).unwrap(),
        ResolutionRatio::new(4, 1).unwrap(),
        ResolutionRatio::new(10, 1).unwrap(),
        ResolutionRatio::new(1, 2).unwrap(),
        ResolutionRatio::new(1, 3).unwrap(),
        ResolutionRatio::new(1, 4).unwrap(),
        ResolutionRatio::new(1, 10).unwrap(),
    ];
    let mut rng = Xoshiro256pp::from_seed(101);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let nrn = random_neuron(&mut rng);
        for r in &ratios {
            let a = adapt_integral(&nrn, r).unwrap();
            let b = adapt_expectation(&nrn, r).unwrap();
            worst = worst.max(neuron_diff(&a, &b));
        }
    }
    let pass = worst < 1e-9;
    report_line(
        "criterion 2 (integral == expectation)",
        pass,
        &format!("worst deviation {worst:.3e} over 10^4 neurons x 8 ratios (tolerance 1e-9)"),
    );
    assert!(pass, "worst deviation {worst:.3e} >= 1e-9");
}

#[test]
fn criterion_3_composition_and_inversion() {
    let r1 = ResolutionRatio::new(2, 1).unwrap();
    let r2 = ResolutionRatio::new(3, 2).unwrap();
    let combined = r1.times(&r2).unwrap();
    let mut rng = Xoshiro256pp::from_seed(103);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let nrn = random_neuron(&mut rng);

        let int_two = adapt_integral(&adapt_integral(&nrn, &r1).unwrap(), &r2).unwrap();
        let int_one = adapt_integral(&nrn, &combined).unwrap();
        worst = worst.max(neuron_diff(&int_two, &int_one));
        let int_back = adapt_integral(&adapt_integral(&nrn, &r1).unwrap(), &r1.inverse()).unwrap();
        worst = worst.max(neuron_diff(&int_back, &nrn));

        let eul_two = adapt_euler(&adapt_euler(&nrn, &r1), &r2);
        let eul_one = adapt_euler(&nrn, &combined);
        worst = worst.max(neuron_diff(&eul_two, &eul_one));
        let eul_back = adapt_euler(&adapt_euler(&nrn, &r1), &r1.inverse());
        worst = worst.max(neuron_diff(&eul_back, &nrn));
    }
    let pass = worst < 1e-8;
    report_line(
        "criterion 3 (composition/inversion)",
        pass,
        &format!("worst deviation {worst:.3e} over 10^3 neurons (tolerance 1e-8)"),
    );
    assert!(pass, "worst deviation {worst:.3e} >= 1e-8");
}

#[test]
fn criterion_4_zero_order_hold_exactness() {
    let mut rng = Xoshiro256pp::from_seed(104);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let p = AdLifParams::with_threshold(
            rng.uniform(0.6, 0.98),
            rng.uniform(0.6, 0.98),
            rng.uniform(0.2, 0.5),
            rng.uniform(0.2, 0.5),
            f64::INFINITY,
        )
        .unwrap();
        let nrn = adlif_to_general(&p);
        let factor = 2 + (case % 3) as u64; // 2, 3, 4
        let coarse_steps = 15usize;
        let values: Vec<f64> = (0..coarse_steps).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let fine_input: Vec<f64> = values
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(factor as usize))
            .collect();
        let fine = nrn.simulate(&fine_input, None).unwrap();
        let adapted = adapt_integral(&nrn, &ResolutionRatio::new(factor, 1).unwrap()).unwrap();
        let coarse = adapted.simulate(&values, None).unwrap();
        let fine_trace = fine.membrane_trace();
        let sub = subsample(&fine_trace, factor as usize).unwrap();
        for (a, b) in sub.iter().zip(coarse.membrane_trace()) {
            worst = worst.max((a - b).abs());
        }
    }
    let pass = worst < 1e-9;
    report_line(
        "criterion 4 (zero-order-hold exactness)",
        pass,
        &format!("worst boundary deviation {worst:.3e} (tolerance 1e-9)"),
    );
    assert!(pass, "worst deviation {worst:.3e} >= 1e-9");
}

#[test]
fn criterion_5_dual_form_equivalence() {
    // Independent route: the two-variable recursion written out directly.
    fn direct(p: &AdLifParams<f64>, input: &[f64]) -> (Vec<f64>, Vec<u8>) {
        let (mut u, mut w) = (0.0f64, 0.0f64);
        let mut trace = Vec::with_capacity(input.len());
        let mut spikes = Vec::with_capacity(input.len());
        for &i_t in input {
            let s = if u >= p.threshold { 1.0 } else { 0.0 };
            let u_next =
                p.alpha * (u - p.threshold * s) + (1.0 - p.alpha) * i_t - (1.0 - p.alpha) * w;
            let w_next = p.a * u + p.beta * w + p.b * s;
            spikes.push(s as u8);
            trace.push(u_next);
            u = u_next;
            w = w_next;
        }
        (trace, spikes)
    }

    let mut rng = Xoshiro256pp::from_seed(105);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = AdLifParams::new(
            rng.uniform(0.6, 0.98),
            rng.uniform(0.6, 0.98),
            rng.uniform(0.2, 0.5),
            rng.uniform(0.2, 0.5),
        )
        .unwrap();
        let input: Vec<f64> = (0..100).map(|_| rng.uniform(-1.5, 1.5)).collect();
        let general = adlif_to_general(&p).simulate(&input, None).unwrap();
        let (trace, spikes) = direct(&p, &input);
        assert_eq!(general.spikes, spikes, "spike trains must be identical");
        for (a, b) in general.membrane_trace().iter().zip(&trace) {
            worst = worst.max((a - b).abs());
        }
    }
    let pass = worst < 1e-12;
    report_line(
        "criterion 5 (dual-form equivalence)",
        pass,
        &format!("worst membrane deviation {worst:.3e} over 10^3 pairs (tolerance 1e-12)"),
    );
    assert!(pass, "worst deviation {worst:.3e} >= 1e-12");
}

#[test]
fn criterion_6_norm_stats_monte_carlo() {
    let mut rng = Xoshiro256pp::from_seed(106);
    let n = 1_000_000usize;
    let stream: Vec<f64> = (0..n).map(|_| rng.poisson(1.3) as f64).collect();
    let mean_var = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var)
    };
    let (mu_s, var_s) = mean_var(&stream);
    let base = NormStats::new(vec![mu_s], vec![var_s], 1e-5, vec![1.0], vec![0.0]).unwrap();

    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, xs: &[f64], predicted: &NormStats<f64>| {
        let (mean, var) = mean_var(xs);
        let m = xs.len() as f64;
        let se_mean = (var / m).sqrt();
        let m4 = xs
            .iter()
            .map(|x| {
                let d = x - mean;
                d * d * d * d
            })
            .sum::<f64>()
            / m;
        let se_var = ((m4 - var * var).max(0.0) / m).sqrt();
        if (predicted.mu[0] - mean).abs() > 3.0 * se_mean + 1e-9 {
            failures.push(format!(
                "{name} mean: predicted {:.4}, empirical {mean:.4} (3se {:.2e})",
                predicted.mu[0],
                3.0 * se_mean
            ));
        }
        if (predicted.var[0] - var).abs() > 3.0 * se_var + 1e-9 {
            failures.push(format!(
                "{name} variance: predicted {:.4}, empirical {var:.4} (3se {:.2e})",
                predicted.var[0],
                3.0 * se_var
            ));
        }
    };

    for factor in [2usize, 4] {
        let binned: Vec<f64> = stream
            .chunks_exact(factor)
            .map(|w| w.iter().sum::<f64>())
            .collect();
        check(
            &format!("sum-bin x{factor}"),
            &binned,
            &adapt_norm_stats(
                &base,
                &StatAdaptRule::theoretical(ResampleKind::SumBin),
                factor as f64,
            )
            .unwrap(),
        );

        let mut padded = Vec::with_capacity(stream.len() * factor);
        for &x in &stream {
            padded.extend(std::iter::repeat(0.0).take(factor - 1));
            padded.push(x);
        }
        check(
            &format!("pad-zeros x{factor}"),
            &padded,
            &adapt_norm_stats(
                &base,
                &StatAdaptRule::theoretical(ResampleKind::PadZeros),
                factor as f64,
            )
            .unwrap(),
        );

        let mut repeated = Vec::with_capacity(stream.len() * factor);
        for &x in &stream {
            repeated.extend(std::iter::repeat(x).take(factor));
        }
        check(
            &format!("repeat x{factor}"),
            &repeated,
            &adapt_norm_stats(
                &base,
                &StatAdaptRule::theoretical(ResampleKind::RepeatElems),
                factor as f64,
            )
            .unwrap(),
        );
    }

    let pass = failures.is_empty();
    report_line(
        "criterion 6 (statistics rules vs Monte Carlo)",
        pass,
        &format!(
            "i.i.d. streams of 10^6 draws; {}",
            if pass {
                "all rules within 3 standard errors".to_string()
            } else {
                failures.join("; ")
            }
        ),
    );
    assert!(
        pass,
        "rules vs i.i.d. Monte Carlo failed on: {}.\nThe sum-binning variance rule \
         (var' = f^2 var) models within-bin-constant signals; under independence the true \
         scaling is f*var, so this leg cannot pass as stated. See the repository notes.",
        failures.join("; ")
    );
}

#[test]
fn criterion_7_end_to_end_adaptation() {
    let start = Instant::now();
    let cfg = E2eConfig {
        direction: Direction::CoarseToFine,
        method: AdaptMethod::Integral,
        bin_source: 2,
        bin_target: 1,
        seeds: 10,
        master_seed: 0,
        classes: 4,
        train_per_class: 200,
        test_per_class: 50,
        channels: 16,
        timesteps: 64,
        hidden: vec![64, 64],
        recurrent: false,
        train: TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        },
        jobs: 1,
    };
    let report = e2e_experiment(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let margin = report.mean_adapted - report.mean_none;
    let baseline_frac = report.mean_adapted / report.mean_baseline.max(1e-9);
    let pass = margin >= 0.15 && baseline_frac >= 0.90 && elapsed < 600.0;
    report_line(
        "criterion 7 (end-to-end adaptation)",
        pass,
        &format!(
            "adapted {:.3}, none {:.3}, baseline {:.3}; margin {margin:.3} (need >= 0.15), \
             baseline fraction {baseline_frac:.3} (need >= 0.90), runtime {elapsed:.0}s (< 600s)",
            report.mean_adapted, report.mean_none, report.mean_baseline
        ),
    );
    assert!(
        margin >= 0.15,
        "adapted-vs-none margin {margin:.3} below 15 percentage points"
    );
    assert!(
        baseline_frac >= 0.90,
        "adapted reaches only {baseline_frac:.3} of the retrained baseline"
    );
    assert!(elapsed < 600.0, "runtime {elapsed:.0}s exceeds 10 minutes");
}

#[test]
fn criterion_8_gradient_check() {
    let model = init_model(
        &ModelConfig {
            input_channels: 4,
            hidden: vec![8, 8],
            classes: 2,
            recurrent: false,
        },
        ModelMeta {
            dt_ms: 1.0,
            bin_size: 1,
            seed: 108,
        },
    );
    let mut rng = Xoshiro256pp::from_seed(derive_seed(108, 1));
    let t_len = 12;
    let batch: Vec<Sample> = (0..3)
        .map(|i| Sample {
            tensor: SpikeTensor::new(
                4,
                t_len,
                (0..4 * t_len).map(|_| rng.below(4) as u32).collect(),
                1.0,
            )
            .unwrap(),
            label: i % 2,
        })
        .collect();
    let (_, analytic) = loss_and_grads(&model, &batch, GradMode::LinearProbe).unwrap();
    let params = flatten_params(&model).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let h = 1e-5 * (1.0 + params[i].abs());
        let mut plus = params.clone();
        plus[i] += h;
        let mut minus = params.clone();
        minus[i] -= h;
        let (lp, _) = loss_and_grads(
            &with_params(&model, &plus).unwrap(),
            &batch,
            GradMode::LinearProbe,
        )
        .unwrap();
        let (lm, _) = loss_and_grads(
            &with_params(&model, &minus).unwrap(),
            &batch,
            GradMode::LinearProbe,
        )
        .unwrap();
        let fd = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    let pass = worst < 1e-4;
    report_line(
        "criterion 8 (gradient check)",
        pass,
        &format!(
            "worst relative error {worst:.3e} over {} parameters (tolerance 1e-4)",
            params.len()
        ),
    );
    assert!(pass, "worst relative gradient error {worst:.3e} >= 1e-4");
}

#[test]
fn criterion_9_cli_byte_reproducibility() {
    let bin = env!("CARGO_BIN_EXE_tempo-snn");
    let dir = std::env::temp_dir().join(format!("tempo-snn-acc9-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let p = |name: &str| dir.join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let run = |args: &[String]| {
        let out = Command::new(bin)
            .args(args)
            .env_remove("TEMPO_SNN_JOBS")
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "command failed: {:?}\n{}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let read_dir_bytes = |root: &Path| {
        let mut entries: Vec<(String, Vec<u8>)> = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(cur) = stack.pop() {
            for entry in std::fs::read_dir(&cur).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(root).unwrap().display().to_string();
                    entries.push((rel, std::fs::read(&path).unwrap()));
                }
            }
        }
        entries.sort();
        entries
    };

    let mut mismatches = Vec::new();
    for round in ["a", "b"] {
        let data = p(&format!("data_{round}"));
        run(&[
            "gen-data".into(),
            "--classes".into(),
            "2".into(),
            "--per-class".into(),
            "5".into(),
            "--channels".into(),
            "8".into(),
            "--timesteps".into(),
            "16".into(),
            "--seed".into(),
            "9".into(),
            "--out".into(),
            s(&data),
        ]);
        let model = p(&format!("model_{round}.json"));
        run(&[
            "train".into(),
            "--data".into(),
            s(&data),
            "--out".into(),
            s(&model),
            "--hidden".into(),
            "8".into(),
            "--epochs".into(),
            "2".into(),
            "--batch-size".into(),
            "5".into(),
            "--seed".into(),
            "4".into(),
        ]);
        let study = p(&format!("study_{round}.json"));
        run(&[
            "neuron-study".into(),
            "--pairs".into(),
            "50".into(),
            "--direction".into(),
            "fine2coarse".into(),
            "--seed".into(),
            "13".into(),
            "--out".into(),
            s(&study),
        ]);
    }
    if read_dir_bytes(&p("data_a")) != read_dir_bytes(&p("data_b")) {
        mismatches.push("gen-data dataset bytes");
    }
    if std::fs::read(p("model_a.json")).unwrap() != std::fs::read(p("model_b.json")).unwrap() {
        mismatches.push("train model bytes");
    }
    if std::fs::read(p("study_a.json")).unwrap() != std::fs::read(p("study_b.json")).unwrap() {
        mismatches.push("neuron-study report bytes");
    }
    let pass = mismatches.is_empty();
    report_line(
        "criterion 9 (CLI byte reproducibility)",
        pass,
        &format!(
            "gen-data, train, neuron-study rerun byte-for-byte{}",
            if pass {
                " identical".to_string()
            } else {
                format!(": mismatches in {mismatches:?}")
            }
        ),
    );
    assert!(pass, "non-reproducible outputs: {mismatches:?}");
}
