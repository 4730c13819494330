use std::sync::Arc;

use completeness_core::eval::{completeness_ratio, decompose_values, make_folds, std_error};
use completeness_core::games::{pchm_distribution, poisson_masses, Game, PchmOptions, PchmParams};
use completeness_core::lookup::{projection_flips_4_to_7, projection_number_of_heads, KeyFn, LookupSpec};
use completeness_core::risk::{cpt_weight, CptParams};
use completeness_core::seq::{rv_probability, urn_probability, FlipHistory, RvParams, UrnParams};
use completeness_core::synth::{strings_to_dataset, FlipString};
use completeness_core::{
    evaluate_loss, naive_rule, train_lookup, Dataset, Error, FeatureVector, LossFunction, Observation, Outcome,
    PredictionRule, ProblemKind,
};
use proptest::prelude::*;

fn cat_dataset(rows: &[(u32, f64)]) -> Dataset {
    let obs = rows
        .iter()
        .map(|&(k, y)| Observation::new(FeatureVector::cats(&[k]), Outcome::Real(y)))
        .collect();
    Dataset::new(obs, ProblemKind::Custom).unwrap()
}

fn strings(rows: &[(u8, bool)]) -> Dataset {
    let s: Vec<FlipString> = rows
        .iter()
        .enumerate()
        .map(|(i, &(h, last))| {
            let mut flips = FlipHistory::from_index(usize::from(h) % 128).flips().to_vec();
            flips.push(last);
            FlipString {
                subject: "s".into(),
                round: i + 1,
                flips,
            }
        })
        .collect();
    strings_to_dataset(&s).unwrap()
}

fn lookup_train_loss(data: &Dataset, key: KeyFn) -> f64 {
    let mse = LossFunction::squared_error();
    let fallback = PredictionRule::constant(Outcome::Real(0.0));
    let spec = LookupSpec::for_loss(&mse, key, fallback).unwrap();
    evaluate_loss(&Arc::new(train_lookup(data, &spec).unwrap()).into_rule(), data, &mse).unwrap()
}

proptest! {
    #[test]
    fn folds_partition_and_balance(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let plan = make_folds(n, k, seed).unwrap();
        let mut seen = vec![0; n];
        for f in 0..k {
            for i in plan.test_positions(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.test_positions(f).len() + plan.train_positions(f).len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let again = make_folds(n, k, seed).unwrap();
        prop_assert_eq!(plan.assignment(), again.assignment());
    }

    #[test]
    fn completeness_anchors(naive in 0.1f64..100.0, gap in 0.01f64..50.0, t in 0.0f64..1.0) {
        let lookup = naive - gap;
        let model = naive - t * gap;
        prop_assert_eq!(completeness_ratio(naive, naive, lookup).unwrap(), 0.0);
        prop_assert!((completeness_ratio(naive, lookup, lookup).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((completeness_ratio(naive, model, lookup).unwrap() - t).abs() < 1e-9);
        let degenerate = matches!(completeness_ratio(lookup, model, naive), Err(Error::DegenerateBenchmark { .. }));
        prop_assert!(degenerate);
    }

    #[test]
    fn std_error_matches_population_formula(errs in prop::collection::vec(0.0f64..10.0, 2..20)) {
        let k = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / k;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / k;
        prop_assert!((std_error(&errs) - (var / k).sqrt()).abs() < 1e-12);
        let d = decompose_values(mean, std_error(&errs));
        prop_assert!((d.sampling_error + d.irreducible_estimate - mean).abs() < 1e-9);
    }

    #[test]
    fn lookup_beats_any_per_key_rule(
        rows in prop::collection::vec((0u32..6, -20.0f64..20.0), 1..80),
        guesses in prop::collection::vec(-25.0f64..25.0, 6),
    ) {
        let data = cat_dataset(&rows);
        let lookup = lookup_train_loss(&data, KeyFn::Identity);
        let g = guesses.clone();
        let rule = PredictionRule::from_fn(None, move |x| Outcome::Real(g[x.get(0).unwrap().as_cat().unwrap() as usize]));
        let other = evaluate_loss(&rule, &data, &LossFunction::squared_error()).unwrap();
        prop_assert!(lookup <= other + 1e-9);
        prop_assert!(lookup <= lookup_train_loss(&data, KeyFn::Constant) + 1e-9);
    }

    #[test]
    fn compressed_lookup_never_beats_full(rows in prop::collection::vec((any::<u8>(), any::<bool>()), 1..300)) {
        let data = strings(&rows);
        let full = lookup_train_loss(&data, KeyFn::Identity);
        prop_assert!(lookup_train_loss(&data, projection_number_of_heads()) >= full - 1e-12);
        prop_assert!(lookup_train_loss(&data, projection_flips_4_to_7()) >= full - 1e-12);
    }

    #[test]
    fn sequence_models_are_probabilities_and_symmetric(
        idx in 0usize..128, half_n in 1u32..8, p in 0.0f64..=1.0, alpha in 0.0f64..2.0, delta in 0.0f64..2.0,
    ) {
        let h = FlipHistory::from_index(idx);
        let urn = UrnParams::new(2 * half_n, p).unwrap();
        let q = urn_probability(&h, urn);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert!((q + urn_probability(&h.complement(), urn) - 1.0).abs() < 1e-9);
        let rv = RvParams::new(alpha, delta).unwrap();
        let r = rv_probability(&h, rv);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((r + rv_probability(&h.complement(), rv) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cpt_weight_is_monotone(p in 0.0f64..1.0, dp in 0.0f64..0.5, delta in 0.05f64..5.0, gamma in 0.05f64..3.0) {
        let theta = CptParams::new(1.0, 1.0, delta, gamma).unwrap();
        let q = (p + dp).min(1.0);
        prop_assert!(cpt_weight(q, theta) >= cpt_weight(p, theta) - 1e-12);
        prop_assert_eq!(cpt_weight(0.0, theta), 0.0);
        prop_assert_eq!(cpt_weight(1.0, theta), 1.0);
    }

    #[test]
    fn pchm_distribution_sums_to_one(payoffs in prop::collection::vec(0u8..100, 18), tau in 0.1f64..5.0) {
        let v: Vec<f64> = payoffs.iter().map(|&x| f64::from(x)).collect();
        let g = Game::from_features(&FeatureVector::reals(&v)).unwrap();
        let d = pchm_distribution(&g, PchmParams::new(tau).unwrap(), PchmOptions::default());
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.probs.iter().all(|&x| x >= 0.0));
        let m = poisson_masses(tau, 6);
        prop_assert!(m.windows(2).all(|w| w[0] > 0.0 && w[1] > 0.0));
    }
}

#[test]
fn naive_rules_per_domain() {
    let seq = strings(&[(0, true), (5, false)]);
    let rule = naive_rule(ProblemKind::Sequences).unwrap();
    assert_eq!(evaluate_loss(&rule, &seq, &LossFunction::squared_error()).unwrap(), 0.25);
    assert!(naive_rule(ProblemKind::Custom).is_err());
}
