use fillerkit_core::candidates::generate_candidates;
use fillerkit_core::eval::{event_counts, evaluate, pr_curve, EvalConfig, MatchStrategy};
use fillerkit_core::event::Event;
use fillerkit_core::signal::FrameSeries;
use fillerkit_core::transcripts::{IntervalSet, Transcript, Word};
use fillerkit_core::vad::activations_to_intervals;
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..30.0, 0.01f64..4.0).prop_map(|(a, d)| (a, a + d)), 0..12)
}

fn events(labels: &'static [&'static str]) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec(
        (0.0f64..20.0, 0.05f64..2.0, 0..labels.len()).prop_map(move |(a, d, l)| Event::new(a, a + d, labels[l], 1.0)),
        0..15,
    )
}

fn activations(values: Vec<f32>) -> FrameSeries {
    let n = values.len();
    FrameSeries::new(values, n, 1, 100.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn interval_sets_are_normalised(p in pairs()) {
        let s = IntervalSet::from_pairs(p.clone());
        prop_assert!(s.spans().iter().all(|&(a, b)| b > a));
        prop_assert!(s.spans().windows(2).all(|w| w[0].1 < w[1].0));
        // Every input point stays covered.
        for (a, b) in p {
            prop_assert!(s.covers(a, b));
        }
    }

    #[test]
    fn set_operations_decompose(a in pairs(), b in pairs()) {
        let (a, b) = (IntervalSet::from_pairs(a), IntervalSet::from_pairs(b));
        prop_assert_eq!(a.union(&b), b.union(&a));
        prop_assert_eq!(a.intersect(&b), b.intersect(&a));
        let rebuilt = a.subtract(&b).union(&a.intersect(&b));
        prop_assert!((rebuilt.duration() - a.duration()).abs() < 1e-9);
        prop_assert!(a.subtract(&b).intersect(&b).duration() < 1e-9);
        prop_assert!(a.intersect(&b).subtract(&a).duration() < 1e-9);
    }

    #[test]
    fn higher_vad_threshold_never_adds_speech(
        values in prop::collection::vec(0.0f32..1.0, 1..400),
        lo in 0.05f64..0.9,
        step in 0.0f64..0.09,
    ) {
        let act = activations(values);
        let hi = lo + step;
        let loose = activations_to_intervals(&act, lo, 0.0, 0.0).unwrap();
        let strict = activations_to_intervals(&act, hi, 0.0, 0.0).unwrap();
        prop_assert!(strict.subtract(&loose).duration() < 1e-9);
        prop_assert!(strict.duration() <= loose.duration() + 1e-9);
    }

    #[test]
    fn candidates_are_unworded_speech_within_bounds(speech in pairs(), words in pairs()) {
        let speech = IntervalSet::from_pairs(speech);
        let transcript = Transcript::new(
            words
                .iter()
                .map(|&(start, end)| Word { text: "w".into(), start, end, confidence: None })
                .collect(),
        );
        let c = generate_candidates(&speech, &transcript, 0.15, 2.0);
        prop_assert!(c.subtract(&speech).duration() < 1e-9);
        prop_assert!(c.intersect(&transcript.word_intervals()).duration() < 1e-9);
        for &(a, b) in c.spans() {
            prop_assert!(b - a >= 0.15 - 1e-9 && b - a <= 2.0 + 1e-9);
        }
    }

    #[test]
    fn scores_are_bounded_and_perfect_on_identity(refs in events(&["uh", "um"]), pred in events(&["uh", "um"])) {
        let cfg = EvalConfig::default();
        let r = evaluate(&refs, &pred, &cfg).unwrap();
        for s in [&r.event.overall, &r.segment.overall] {
            for v in [s.precision, s.recall, s.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let same = evaluate(&refs, &refs, &cfg).unwrap();
        prop_assert_eq!(same.event.overall.fp + same.event.overall.fn_, 0);
        prop_assert_eq!(same.segment.overall.fp + same.segment.overall.fn_, 0);
    }

    #[test]
    fn optimal_matching_dominates_greedy_and_ignores_order(refs in events(&["uh"]), mut pred in events(&["uh"])) {
        let tp = |p: &[Event], s| event_counts(&refs, p, 0.2, s).get("uh").map_or(0, |c| c.tp);
        let optimal = tp(&pred, MatchStrategy::Optimal);
        prop_assert!(optimal >= tp(&pred, MatchStrategy::Greedy));
        pred.reverse();
        prop_assert_eq!(tp(&pred, MatchStrategy::Optimal), optimal);
    }

    #[test]
    fn recall_falls_as_threshold_rises(
        refs in events(&["filler"]),
        lik in prop::collection::vec(0.0f32..1.0, 1..250),
    ) {
        let n = lik.len();
        let series = FrameSeries::new(lik, n, 1, 10.0).unwrap();
        let pts = pr_curve(&refs, &series, &["filler"], &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap();
        prop_assert!(pts.windows(2).all(|w| w[1].recall <= w[0].recall + 1e-12));
    }
}
