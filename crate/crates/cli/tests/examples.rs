use std::collections::BTreeMap;
use std::path::Path;

use clap::Parser;
use completeness_cli::csvio::read_dataset;
use completeness_cli::{run, Args, CliError};
use completeness_core::eval::{cross_validate, make_folds, Estimator};
use completeness_core::risk::cpt_model;
use completeness_core::seq::{rv_model, urn_model, SeqOutput, UrnOptions};
use completeness_core::synth::{gen_sequences, SeqGenSpec};
use completeness_core::{completeness_ratio, fit, naive_rule, Dataset, Error, FitConfig, LossFunction, Observation, ProblemKind};
use serde_json::Value;

fn exec(args: &[&str]) -> Result<Value, CliError> {
    let mut argv = vec!["completeness"];
    argv.extend_from_slice(args);
    let out = run(&Args::parse_from(argv))?;
    out.write()?;
    Ok(out.report.result.clone())
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn synth(dir: &Path, args: &[&str]) -> String {
    let mut a = vec!["synth"];
    a.extend_from_slice(args);
    let out = p(dir);
    a.extend_from_slice(&["--out", &out]);
    exec(&a).unwrap();
    p(&dir.join("data.csv"))
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn single_type_cpt_is_nearly_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "risk", "--n-subjects", "60", "--seed", "3"]);
    let r = exec(&["evaluate", "--domain", "risk", "--data", &data, "--models", "cpt", "--out", &p(&tmp.path().join("e"))]).unwrap();
    let c = f(&r["models"][0]["completeness"]);
    assert!(c >= 0.9, "cpt completeness {c}");
    assert_eq!(r["conventions"].as_array().unwrap().len(), 1);
}

#[test]
fn bernoulli_null_has_no_completeness_signal() {
    let (data, _) = gen_sequences(&SeqGenSpec {
        n_strings: 10_000,
        seed: 8,
        ..SeqGenSpec::default()
    })
    .unwrap();
    let mse = LossFunction::squared_error();
    let plan = make_folds(data.len(), 10, 0).unwrap();
    let naive = cross_validate(&Estimator::rule("naive", naive_rule(ProblemKind::Sequences).unwrap()), &data, &mse, &plan).unwrap();
    assert_eq!(naive.mean_error, 0.25);
    for class in [rv_model(SeqOutput::Probability), urn_model(SeqOutput::Probability, UrnOptions::default())] {
        let cv = cross_validate(&Estimator::model(class, FitConfig::default()), &data, &mse, &plan).unwrap();
        let gain = naive.mean_error - cv.mean_error;
        assert!(gain <= 2.0 * cv.std_error && gain.abs() < 1e-3, "{}: {}", cv.name, cv.mean_error);
    }

    // Lookup overfits fair coins, so the benchmark itself is degenerate.
    let tmp = tempfile::tempdir().unwrap();
    let csv = synth(&tmp.path().join("d"), &["--domain", "sequences", "--n-strings", "10000", "--seed", "8"]);
    let e = exec(&["evaluate", "--domain", "sequences", "--data", &csv, "--out", &p(&tmp.path().join("e"))]).unwrap_err();
    assert!(matches!(e, CliError::Core(Error::DegenerateBenchmark { .. })), "{e}");
}

#[test]
fn pchm_on_three_hand_built_games() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("g.csv");
    let mut text = completeness_cli::csvio::games_header().join(",");
    text.push('\n');
    let games = [
        ("g1", "40,80,20,60,10,30,50,70,90", "60,30,10,80,20,40,70,50,90", ["3", "3", "3", "1"]),
        ("g2", "10,10,10,50,50,50,20,90,30", "30,60,90,20,40,10,90,10,50", ["2", "2", "2", "3"]),
        ("g3", "70,20,40,30,60,20,50,50,80", "10,20,30,40,50,60,70,80,90", ["1", "1", "1", "2"]),
    ];
    for (g, row, col, actions) in games {
        for (s, a) in ["s1", "s2", "s3", "s4"].into_iter().zip(actions) {
            text.push_str(&format!("{g},{row},{col},{a},{s}\n"));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let r = exec(&["evaluate", "--domain", "games", "--data", &p(&csv), "--folds", "4", "--out", &p(&tmp.path().join("e"))]);
    let r = r.unwrap();
    let taus = r["models"][0]["cv"]["fitted_parameters"].as_array().unwrap();
    assert_eq!(taus.len(), 4);
    for t in taus {
        let tau = f(&t[0]);
        assert!(tau > 0.0 && tau.is_finite(), "{tau}");
    }
    assert!(f(&r["lookup"]["mean_error"]) < f(&r["naive"]["mean_error"]));
}

#[test]
fn full_fraction_subsample_matches_evaluate_lookup() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "risk", "--n-subjects", "30", "--seed", "4"]);
    let out = p(&tmp.path().join("e"));
    let e = exec(&["evaluate", "--domain", "risk", "--data", &data, "--models", "eu", "--out", &out]).unwrap();
    let s = exec(&["subsample", "--domain", "risk", "--data", &data, "--fractions", "1.0", "--iterations", "1", "--out", &out]).unwrap();
    assert_eq!(f(&s["points"][0]["mean_error"]), f(&e["lookup"]["mean_error"]));
}

#[test]
fn subsample_smaller_than_folds_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "sequences", "--n-strings", "100"]);
    let e = exec(&["subsample", "--domain", "sequences", "--data", &data, "--fractions", "0.05", "--out", &p(&tmp.path().join("e"))])
        .unwrap_err();
    assert!(matches!(e, CliError::Core(Error::SubsampleTooSmall { size: 5, folds: 10 })), "{e}");
}

#[test]
fn projections_bracket_between_constant_and_full() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("rv.cfg");
    std::fs::write(&cfg, "synth.generator = rv\nsynth.alpha = 0.4\nsynth.delta = 0.5\n").unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "sequences", "--n-strings", "20000", "--config", &p(&cfg)]);
    let r = exec(&[
        "features", "--domain", "sequences", "--data", &data, "--projections", "full,heads_count,constant",
        "--out", &p(&tmp.path().join("e")),
    ])
    .unwrap();
    let by: BTreeMap<String, f64> = r["projections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| (row["projection"].as_str().unwrap().to_string(), f(&row["completeness"])))
        .collect();
    assert!((by["full"] - 1.0).abs() < 1e-12);
    assert!(by["constant"].abs() < 0.05, "{by:?}");
    assert!(by["heads_count"] > 0.0 && by["heads_count"] < 1.0, "{by:?}");
}

#[test]
fn naive_mean_swaps_in_unconditional_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "risk", "--n-subjects", "20", "--seed", "6"]);
    let cfg = tmp.path().join("m.cfg");
    std::fs::write(&cfg, "naive = mean\n").unwrap();
    let r = exec(&["evaluate", "--config", &p(&cfg), "--domain", "risk", "--data", &data, "--models", "eu", "--out", &p(&tmp.path().join("e"))])
        .unwrap();
    let parsed = read_dataset(std::fs::File::open(&data).unwrap(), ProblemKind::Risk).unwrap();
    let plan = make_folds(parsed.len(), 10, 0).unwrap();
    let mut want = 0.0;
    for k in 0..10 {
        let train = plan.train_positions(k);
        let mean = train.iter().map(|&i| parsed.get(i).y.numeric().unwrap()).sum::<f64>() / train.len() as f64;
        let test = plan.test_positions(k);
        want += test.iter().map(|&i| (parsed.get(i).y.numeric().unwrap() - mean).powi(2)).sum::<f64>() / test.len() as f64;
    }
    want /= 10.0;
    assert!((f(&r["naive"]["mean_error"]) - want).abs() < 1e-9);
}

#[test]
fn chi_squared_drops_the_all_heads_subject() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("s.csv");
    let (fair, _) = completeness_core::synth::gen_strings(&SeqGenSpec {
        n_strings: 250,
        strings_per_subject: 50,
        seed: 12,
        ..SeqGenSpec::default()
    })
    .unwrap();
    let mut text = String::from("subject_id,round,flips\n");
    for s in &fair {
        let flips: String = s.flips.iter().map(|&h| if h { 'H' } else { 'T' }).collect();
        text.push_str(&format!("{},{},{flips}\n", s.subject, s.round));
    }
    for r in 1..=50 {
        text.push_str(&format!("cheat,{r},HHHHHHHH\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let out = tmp.path().join("f");
    let r = exec(&["filter-subjects", "--data", &p(&csv), "--method", "chi_squared", "--drop-n", "1", "--out", &p(&out)]).unwrap();
    let dropped: Vec<&str> = r["subjects"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["dropped"].as_bool().unwrap())
        .map(|s| s["subject"].as_str().unwrap())
        .collect();
    assert_eq!(dropped, ["cheat"]);
    assert_eq!(f(&r["rows_out"]), 250.0);

    let r = exec(&["filter-subjects", "--data", &p(&csv), "--method", "first_k", "--k", "25", "--out", &p(&out)]).unwrap();
    assert_eq!(f(&r["rows_out"]), 6.0 * 25.0);
}

fn subject_rows(data: &Dataset, ids: &[String], keep_lottery: impl Fn(&str) -> bool) -> Vec<Observation> {
    data.iter()
        .filter(|o| ids.contains(o.subject_id.as_ref().unwrap()) && keep_lottery(o.instance_id.as_deref().unwrap()))
        .cloned()
        .collect()
}

#[test]
fn one_group_hetero_is_the_pooled_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(&tmp.path().join("d"), &["--domain", "risk", "--n-subjects", "40", "--seed", "9"]);
    let r = exec(&[
        "hetero", "--data", &data, "--groups", "1", "--test-subjects", "10", "--models", "cpt", "--seed", "9",
        "--out", &p(&tmp.path().join("h")),
    ])
    .unwrap();
    let strs = |v: &Value| -> Vec<String> { v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect() };
    let train_lotteries = strs(&r["train_lotteries"]);
    let train_subjects = strs(&r["train_subjects"]);
    let test_subjects = strs(&r["test_subjects"]);
    let parsed = read_dataset(std::fs::File::open(&data).unwrap(), ProblemKind::Risk).unwrap();
    let held_out = |l: &str| !train_lotteries.iter().any(|t| t == l);
    let pooled = Dataset::new(subject_rows(&parsed, &train_subjects, held_out), ProblemKind::Risk).unwrap();
    let mse = LossFunction::squared_error();
    let fitted = fit(&cpt_model(), &pooled, &mse, &FitConfig::default()).unwrap();
    let rule = cpt_model().build(&fitted.parameters).unwrap();
    let mut total = 0.0;
    let mut sorted = test_subjects.clone();
    sorted.sort();
    for s in &sorted {
        let rows = subject_rows(&parsed, std::slice::from_ref(s), held_out);
        total += rows.iter().map(|o| mse.loss(&rule.predict(&o.x), &o.y).unwrap()).sum::<f64>() / rows.len() as f64;
    }
    let want = total / sorted.len() as f64;
    let got = f(&r["report"]["models"][0]["cv"]["mean_error"]);
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn grouped_cpt_beats_pooled_on_three_types() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("t.cfg");
    std::fs::write(
        &cfg,
        "synth.types = 0.6,0.6,0.6,0.6,0.34;1.0,1.0,1.0,1.0,0.33;0.85,0.85,2.0,1.4,0.33\n",
    )
    .unwrap();
    let mut wins = 0;
    for seed in 0..20u32 {
        let seed = seed.to_string();
        let dir = tmp.path().join(format!("d{seed}"));
        let data = synth(&dir, &["--domain", "risk", "--n-subjects", "120", "--seed", &seed, "--config", &p(&cfg)]);
        let run_with = |groups: &str| {
            exec(&[
                "hetero", "--data", &data, "--groups", groups, "--test-subjects", "40", "--models", "cpt",
                "--seed", &seed, "--out", &p(&dir.join(groups)),
            ])
            .unwrap()["report"]
                .clone()
        };
        let grouped = run_with("3");
        let pooled = run_with("1");
        // Both fits scored against the grouped benchmark.
        let naive = f(&grouped["naive"]["mean_error"]);
        let lookup = f(&grouped["lookup"]["mean_error"]);
        let c = |r: &Value| completeness_ratio(naive, f(&r["models"][0]["cv"]["mean_error"]), lookup).unwrap();
        if c(&grouped) > c(&pooled) {
            wins += 1;
        }
    }
    assert!(wins >= 18, "grouped won {wins} of 20");
}
