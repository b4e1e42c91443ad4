use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;

use har_core::bilm::{BiLmConfig, BiLmModel};
use har_core::event_log::{annotate, clean, parse_log, render_log, segment, Annotation, Marker, SensorEvent};
use har_core::tokenizer::{encode, Token, Vocabulary, PAD_INDEX};

fn base() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2011, 3, 1).unwrap().and_hms_opt(6, 0, 0).unwrap()
}

prop_compose! {
    fn event()(
        micros in 0i64..(3 * 86_400_000_000),
        sensor in 0usize..5,
        on in any::<bool>(),
        mark in 0usize..8,
    ) -> SensorEvent {
        let annotation = match mark {
            0 => Some(Annotation { activity: "Cook".into(), marker: Marker::Begin }),
            1 => Some(Annotation { activity: "Cook".into(), marker: Marker::End }),
            2 => Some(Annotation { activity: "Sleep".into(), marker: Marker::Begin }),
            3 => Some(Annotation { activity: "Sleep".into(), marker: Marker::End }),
            _ => None,
        };
        SensorEvent::new(
            base() + Duration::microseconds(micros),
            format!("M{:03}", sensor + 1),
            if on { "ON" } else { "OFF" },
            annotation,
        )
        .unwrap()
    }
}

/// Event lists with some exact duplicates mixed in.
fn events() -> impl Strategy<Value = Vec<SensorEvent>> {
    (prop::collection::vec(event(), 0..60), prop::collection::vec(any::<prop::sample::Index>(), 0..10)).prop_map(
        |(mut evs, dups)| {
            if !evs.is_empty() {
                for d in dups {
                    let e = evs[d.index(evs.len())].clone();
                    evs.push(e);
                }
            }
            evs
        },
    )
}

fn tokens() -> impl Strategy<Value = Vec<Vec<Token>>> {
    let tok = (0usize..6).prop_map(|i| Token::from(format!("M{i:03}ON").as_str()));
    prop::collection::vec(prop::collection::vec(tok, 1..12), 1..8)
}

proptest! {
    #[test]
    fn clean_is_idempotent(evs in events()) {
        let (once, _) = clean(&evs);
        let (twice, report) = clean(&once);
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(report.duplicate_events + report.out_of_order_events + report.duplicate_day_events, 0);
    }

    #[test]
    fn render_then_parse_round_trips(evs in events()) {
        let (cleaned, _) = clean(&evs);
        let back = parse_log(&render_log(&cleaned)).unwrap();
        prop_assert_eq!(back, cleaned);
    }

    #[test]
    fn segmentation_keeps_every_event(evs in events()) {
        let (cleaned, _) = clean(&evs);
        let (labeled, _) = annotate(&cleaned);
        let seqs = segment(&labeled);
        prop_assert_eq!(seqs.iter().map(|s| s.len()).sum::<usize>(), cleaned.len());
        for w in seqs.windows(2) {
            prop_assert_ne!(&w[0].label, &w[1].label);
        }
    }

    #[test]
    fn vocabulary_ranks_by_frequency_then_first_sight(corpus in tokens()) {
        let v = Vocabulary::build(&corpus).unwrap();
        let flat: Vec<&Token> = corpus.iter().flatten().collect();
        let first = |t: &Token| flat.iter().position(|x| *x == t).unwrap();
        for i in 1..v.token_count() as u32 {
            let (a, b) = (v.token(i).unwrap(), v.token(i + 1).unwrap());
            let (fa, fb) = (v.frequency(i), v.frequency(i + 1));
            prop_assert!(fa > fb || (fa == fb && first(a) < first(b)));
            prop_assert_eq!(fa as usize, flat.iter().filter(|x| **x == a).count());
        }
        prop_assert_eq!(v.size(), v.token_count() + 2);
        prop_assert_eq!(v.unk_index() as usize, v.token_count() + 1);
    }

    #[test]
    fn encoding_has_fixed_length_and_keeps_the_tail(corpus in tokens(), max_len in 1usize..15) {
        let v = Vocabulary::build(&corpus).unwrap();
        for seq in &corpus {
            let e = encode(seq, &v, max_len).unwrap();
            prop_assert_eq!(e.indexes.len(), max_len);
            prop_assert_eq!(e.mask.len(), max_len);
            let real = seq.len().min(max_len);
            prop_assert_eq!(e.real_len(), real);
            prop_assert!(e.mask[..max_len - real].iter().all(|m| !m));
            prop_assert!(e.indexes[..max_len - real].iter().all(|&i| i == PAD_INDEX));
            let decoded: Vec<Token> = v.decode(&e).into_iter().flatten().collect();
            prop_assert_eq!(&decoded[..], &seq[seq.len() - real..]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// The forward half of every layer sees only the past, the backward half only the future.
    #[test]
    fn bilm_directions_are_causal(
        seq in prop::collection::vec(1u32..6, 3..9),
        cut in 1usize..8,
        replacement in 1u32..6,
    ) {
        let cut = cut.min(seq.len() - 1);
        let tokens: Vec<Vec<Token>> = vec![(0..5).map(|i| Token::from(format!("T{i}").as_str())).collect()];
        let vocab = Vocabulary::build(&tokens).unwrap();
        let cfg = BiLmConfig { embedding_size: 4, hidden_size: 4, seed: 3, ..Default::default() };
        let model = BiLmModel::new(&vocab, &cfg).unwrap();
        let mut changed = seq.clone();
        changed[cut] = if seq[cut] == replacement { replacement % 5 + 1 } else { replacement };
        let reps = model.forward_sequences(&[&seq, &changed]).unwrap();
        let h = 4;
        for t in 0..seq.len() {
            for layer in [&reps[0].r1, &reps[0].r2].iter().zip([&reps[1].r1, &reps[1].r2]) {
                let (a, b) = (&layer.0[t * 2 * h..(t + 1) * 2 * h], &layer.1[t * 2 * h..(t + 1) * 2 * h]);
                if t < cut {
                    prop_assert_eq!(&a[..h], &b[..h]);
                }
                if t > cut {
                    prop_assert_eq!(&a[h..], &b[h..]);
                }
            }
        }
    }
}
