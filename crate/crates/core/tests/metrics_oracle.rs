//! Aggregates against naive recomputation on seeded synthetic records.

use std::collections::BTreeMap;

use dmba_core::corpus::BiasType;
use dmba_core::metrics::{
    correlation_matrix, domain_prevalence, join_records, mean_magnitude, pearson, prevalence, summarize, GroupBy,
    MetricSummary, SweepObservation, sweep_summary,
};
use dmba_core::prompting::Variant;
use dmba_core::rng::SeededRng;
use dmba_core::scoring::{CompletionLabel, Label, SimilarityPair};
use dmba_core::{CompletionResult, PairResult, RecordKey};
use proptest::prelude::*;

fn key(i: usize, t: BiasType) -> RecordKey {
    RecordKey {
        pair_id: format!("p{i:05}"),
        model_id: "m".into(),
        config_id: "c".into(),
        bias_type: Some(t),
        domain: Some(["caste", "professions", "religion", "education"][i % 4].into()),
    }
}

fn synthetic_pairs(n: usize, seed: u64) -> Vec<PairResult> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|i| {
            let a = rng.below(101) as f64;
            let b = rng.below(101) as f64;
            PairResult::new(key(i, BiasType::ALL[rng.below(3) as usize]), a, b)
        })
        .collect()
}

#[test]
fn prevalence_counts_exactly() {
    // 404 of 1000 biased, placed at seeded positions.
    let mut rng = SeededRng::new(11);
    let biased: std::collections::BTreeSet<usize> = rng.sample_indices(1000, 404).into_iter().collect();
    let rs: Vec<PairResult> = (0..1000)
        .map(|i| if biased.contains(&i) { PairResult::new(key(i, BiasType::Race), 70.0, 30.0) } else { PairResult::new(key(i, BiasType::Race), 30.0, 70.0) })
        .collect();
    let naive = rs.iter().filter(|r| r.a_stereo > r.a_anti).count();
    assert_eq!(naive, 404);
    assert_eq!(prevalence(&rs), Some(40.4));
}

#[test]
fn magnitude_matches_loop_oracle() {
    let rs = synthetic_pairs(50, 5);
    let mut sum = 0.0;
    let mut n = 0;
    for r in &rs {
        if r.a_stereo > r.a_anti {
            sum += r.a_stereo - r.a_anti;
            n += 1;
        }
    }
    assert!(n > 0);
    assert_eq!(mean_magnitude(&rs), Some(sum / n as f64));
}

#[test]
fn domain_prevalence_known_rates() {
    let mut rs = Vec::new();
    for (g, rate) in [(0usize, 10usize), (1, 50), (2, 90)] {
        for i in 0..100 {
            let (a, b) = if i < rate { (60.0, 40.0) } else { (40.0, 60.0) };
            rs.push(PairResult::new(key(g * 1000 + i, BiasType::ALL[g]), a, b));
        }
    }
    let m = domain_prevalence(&rs, GroupBy::BiasType).unwrap();
    let expected: BTreeMap<String, f64> =
        [("gender".to_string(), 10.0), ("race".to_string(), 50.0), ("socioculture_religion".to_string(), 90.0)].into();
    assert_eq!(m, expected);
}

#[test]
fn synthetic_thousand_against_naive() {
    let rs = synthetic_pairs(1000, 2024);
    let biased = rs.iter().filter(|r| r.a_stereo > r.a_anti).count();
    assert!((prevalence(&rs).unwrap() - biased as f64 / 1000.0 * 100.0).abs() <= 1e-9);

    let deltas: Vec<f64> = rs.iter().filter(|r| r.bias_agreement).map(|r| r.a_stereo - r.a_anti).collect();
    let naive_mag = deltas.iter().sum::<f64>() / deltas.len() as f64;
    assert!((mean_magnitude(&rs).unwrap() - naive_mag).abs() <= 1e-9);

    let got = domain_prevalence(&rs, GroupBy::Domain).unwrap();
    for (domain, value) in &got {
        let members: Vec<_> = rs.iter().filter(|r| r.key.domain.as_deref() == Some(domain)).collect();
        let b = members.iter().filter(|r| r.a_stereo > r.a_anti).count();
        assert!((*value - b as f64 / members.len() as f64 * 100.0).abs() <= 1e-9);
    }

    let x: Vec<f64> = rs.iter().map(|r| r.a_stereo).collect();
    let y: Vec<f64> = rs.iter().map(|r| r.delta).collect();
    let r = pearson(&x, &y).unwrap().unwrap();
    assert!((r - two_pass_pearson(&x, &y)).abs() <= 1e-9);
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn independent_columns_weakly_correlated() {
    let mut rng = SeededRng::new(77);
    let x: Vec<f64> = (0..1000).map(|_| rng.unit()).collect();
    let y: Vec<f64> = (0..1000).map(|_| rng.unit()).collect();
    assert!(pearson(&x, &y).unwrap().unwrap().abs() < 0.1);
}

fn completions_for(pairs: &[PairResult], seed: u64) -> Vec<CompletionResult> {
    let mut rng = SeededRng::new(seed);
    pairs
        .iter()
        .flat_map(|p| {
            Variant::BOTH.map(|v| {
                let s = rng.unit();
                let a = rng.unit();
                let label = if s > 0.7 && s > a { Label::Stereotypical } else { Label::AntiStereotypical };
                CompletionResult::new(
                    p.key.clone(),
                    v,
                    CompletionLabel { label, similarities: SimilarityPair { sim_stereo: s, sim_anti: a }, threshold: 0.7 },
                )
            })
        })
        .collect()
}

#[test]
fn correlation_matrix_is_elementwise_pearson() {
    let pairs = synthetic_pairs(200, 3);
    let comps = completions_for(&pairs, 4);
    let joined = join_records(&pairs, &comps).unwrap();
    assert_eq!(joined.len(), 400);
    let m = correlation_matrix(&joined).unwrap();
    for i in 0..7 {
        assert_eq!(m.cells[i][i], Some(1.0));
        for j in 0..7 {
            assert_eq!(m.cells[i][j], m.cells[j][i]);
            if i < j {
                let x: Vec<f64> = joined.iter().map(|r| r.column(i)).collect();
                let y: Vec<f64> = joined.iter().map(|r| r.column(j)).collect();
                assert_eq!(m.cells[i][j], pearson(&x, &y).unwrap());
            }
        }
    }
    // delta = a_stereo - a_anti ties these columns
    assert!(m.cells[0][3].unwrap() > 0.0);
}

#[test]
fn identical_columns_correlate_fully() {
    let pairs: Vec<PairResult> = (0..10).map(|i| PairResult::new(key(i, BiasType::Gender), i as f64 * 10.0, 0.0)).collect();
    let comps = completions_for(&pairs, 1);
    let m = correlation_matrix(&join_records(&pairs, &comps).unwrap()).unwrap();
    // a_stereo and delta are identical when a_anti is 0
    assert!((m.cells[0][3].unwrap() - 1.0).abs() < 1e-12);
    // constant a_anti column is undefined everywhere
    assert!(m.cells[1].iter().all(Option::is_none));
}

#[test]
fn sweep_monotone_fixture() {
    let rates = [0.36, 0.38, 0.40, 0.41, 0.43];
    let grid = [0.0, 0.3, 0.5, 0.7, 1.0];
    let groups: Vec<Vec<PairResult>> = rates
        .iter()
        .map(|r| {
            let biased = (r * 100.0f64).round() as usize;
            (0..100).map(|i| if i < biased { PairResult::new(key(i, BiasType::Gender), 80.0, 20.0) } else { PairResult::new(key(i, BiasType::Gender), 20.0, 80.0) }).collect()
        })
        .collect();
    let obs: Vec<SweepObservation> = grid
        .iter()
        .rev()
        .zip(groups.iter().rev())
        .map(|(v, g)| SweepObservation { value: Some(*v), pairs: g, completions: &[], unparseable: 0, failed: 0 })
        .collect();
    let out = sweep_summary(&obs).unwrap();
    assert_eq!(out.len(), 5);
    let means: Vec<f64> = out.iter().map(|(_, s)| s.mean_bias_agreement.unwrap()).collect();
    assert_eq!(means, rates);
    assert!(out.windows(2).all(|w| w[0].0 < w[1].0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pearson_affine_invariance(
        seed in any::<u64>(),
        a in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        b in -100.0f64..100.0,
        c in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0],
        d in -100.0f64..100.0,
    ) {
        let mut rng = SeededRng::new(seed);
        let x: Vec<f64> = (0..40).map(|_| rng.unit() * 100.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + rng.unit() * 40.0).collect();
        let base = pearson(&x, &y).unwrap().unwrap();
        let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let yc: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let got = pearson(&xa, &yc).unwrap().unwrap();
        prop_assert!((got - (a * c).signum() * base).abs() <= 1e-9);
    }

    #[test]
    fn aggregates_permutation_invariant(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
        let pairs = synthetic_pairs(60, seed);
        let comps = completions_for(&pairs, seed ^ 1);
        let mut p2 = pairs.clone();
        let mut c2 = comps.clone();
        let mut rng = SeededRng::new(shuffle_seed);
        rng.shuffle(&mut p2);
        rng.shuffle(&mut c2);
        prop_assert_eq!(MetricSummary::compute(&pairs, &comps, 2, 1), MetricSummary::compute(&p2, &c2, 2, 1));
        prop_assert_eq!(domain_prevalence(&pairs, GroupBy::BiasType).unwrap(), domain_prevalence(&p2, GroupBy::BiasType).unwrap());
    }

    #[test]
    fn concatenation_is_count_weighted(seed in any::<u64>(), split in 0usize..=80) {
        let pairs = synthetic_pairs(80, seed);
        let (left, right) = pairs.split_at(split);
        let mut acc = summarize(left, &[], 0, 0);
        acc.merge(&summarize(right, &[], 0, 0));
        let whole = MetricSummary::compute(&pairs, &[], 0, 0);
        prop_assert_eq!(acc.finish(), whole.clone());
        if !left.is_empty() && !right.is_empty() {
            let l = MetricSummary::compute(left, &[], 0, 0).mean_bias_agreement.unwrap();
            let r = MetricSummary::compute(right, &[], 0, 0).mean_bias_agreement.unwrap();
            let weighted = (l * left.len() as f64 + r * right.len() as f64) / pairs.len() as f64;
            prop_assert!((weighted - whole.mean_bias_agreement.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn adding_biased_never_lowers_prevalence(seed in any::<u64>()) {
        let mut pairs = synthetic_pairs(30, seed);
        let before = prevalence(&pairs).unwrap();
        pairs.push(PairResult::new(key(99_999, BiasType::Gender), 90.0, 10.0));
        let after = prevalence(&pairs).unwrap();
        prop_assert!(after >= before);
        prop_assert!((0.0..=100.0).contains(&after));
    }
}
