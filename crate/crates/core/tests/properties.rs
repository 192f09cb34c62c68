use proptest::prelude::*;

use smoothlab::branching::{partial_wstar, TreeConfig};
use smoothlab::examples::{pagerank_model, preset_model, PRESET_NAMES};
use smoothlab::law::{Law, Pmf};
use smoothlab::model::{BasicSequenceModel, CountedWeight, ModelKind, WeightLaw};
use smoothlab::spectral::{estimate_m, EvalMode};
use smoothlab::RngStream;

fn uniform_degree(max: usize) -> Pmf {
    let mut probs = vec![1.0 / max as f64; max + 1];
    probs[0] = 0.0;
    Pmf::new(probs).unwrap()
}

fn arb_model() -> impl Strategy<Value = BasicSequenceModel> {
    prop_oneof![
        (0.05f64..0.95, 1usize..6).prop_map(|(c, d)| pagerank_model(c, uniform_degree(d), None).unwrap()),
        (0.1f64..1.0, 0.0f64..0.5).prop_map(|(lambda, low)| {
            BasicSequenceModel::new(ModelKind::Mg1Queue { arrival_rate: lambda, service: Law::uniform(low, 1.0) }).unwrap()
        }),
        proptest::collection::vec((0.0f64..0.5, 0.5f64..1.5), 1..4).prop_map(|bounds| {
            let laws = bounds.into_iter().map(|(lo, hi)| Law::uniform(lo, hi)).collect();
            BasicSequenceModel::new(ModelKind::Explicit {
                c_law: Law::exponential(1.0),
                t_law: WeightLaw::Independent { laws },
            })
            .unwrap()
        }),
        (0.1f64..0.9, 0.1f64..0.9).prop_map(|(p, w)| {
            BasicSequenceModel::new(ModelKind::Explicit {
                c_law: Law::point(1.0),
                t_law: WeightLaw::Counted {
                    count: Pmf::binomial(3, p).unwrap(),
                    weight: CountedWeight::Iid { law: Law::Discrete { values: vec![w, 0.5 * w], probs: vec![0.5, 0.5] } },
                },
            })
            .unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_m_agrees_with_monte_carlo(model in arb_model(), theta in 0.0f64..1.2, seed in any::<u64>()) {
        let exact = estimate_m(&model, theta, 1, RngStream::new(seed), EvalMode::Auto);
        prop_assert!(exact.exact);
        let mc = estimate_m(&model, theta, 20_000, RngStream::new(seed), EvalMode::MonteCarlo);
        prop_assert!((exact.value - mc.value).abs() <= 5.0 * mc.stderr + 1e-12,
            "exact {} vs mc {} ± {}", exact.value, mc.value, mc.stderr);
    }

    #[test]
    fn partial_sums_are_monotone_in_depth(model in arb_model(), seed in any::<u64>(), depth in 1usize..6) {
        let cfg = TreeConfig::depth(depth).with_budget(200_000);
        let deeper = TreeConfig::depth(depth + 1).with_budget(200_000);
        let a = partial_wstar(&model, RngStream::new(seed), &cfg);
        let b = partial_wstar(&model, RngStream::new(seed), &deeper);
        prop_assert!(b.value >= a.value);
        prop_assert_eq!(&b.contributions[..a.contributions.len()], &a.contributions[..]);
    }

    #[test]
    fn models_round_trip_through_json(model in arb_model()) {
        let json = model.to_json().unwrap();
        let back = BasicSequenceModel::from_json(&json).unwrap();
        prop_assert_eq!(back.hash(), model.hash());
        prop_assert_eq!(back, model);
    }

    #[test]
    fn substreams_are_pure_functions_of_the_path(seed in any::<u64>(), path in proptest::collection::vec(any::<u64>(), 0..6)) {
        let mut walked = RngStream::new(seed);
        for &p in &path {
            walked = walked.spawn(p);
        }
        prop_assert_eq!(walked, RngStream::at(seed, &path));
    }
}

#[test]
fn every_preset_round_trips() {
    for name in PRESET_NAMES {
        let m = preset_model(name).unwrap();
        assert_eq!(BasicSequenceModel::from_json(&m.to_json().unwrap()).unwrap(), m, "{name}");
    }
}
