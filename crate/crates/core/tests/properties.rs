use std::collections::BTreeSet;

use proptest::prelude::*;

use gtedit::framework::decode_id_op;
use gtedit::harness::{check_intention, replay_texts};
use gtedit::netsim::{LatencyModel, Mode};
use gtedit::ot::transform;
use gtedit::scenario::{FuzzSpec, Script};
use gtedit::trace::Trace;
use gtedit::woot::IdOpKind;
use gtedit::{run_scenario, EngineKind, ExternalOp, ExternalState, RunOptions, Scenario, SiteId};

fn state_and_pair() -> impl Strategy<Value = (String, ExternalOp, ExternalOp)> {
    "[a-z]{0,12}".prop_flat_map(|s| {
        let n = s.chars().count();
        let op = move || {
            let ins = (0..=n, proptest::char::range('a', 'z')).prop_map(|(p, c)| ExternalOp::ins(p, c));
            if n == 0 {
                ins.boxed()
            } else {
                prop_oneof![ins, (0..n).prop_map(ExternalOp::del)].boxed()
            }
        };
        (Just(s), op(), op())
    })
}

fn session() -> impl Strategy<Value = Scenario> {
    (2usize..=4, 1usize..=40, any::<u64>(), "[a-z]{0,6}", 0u64..=3, 1u64..=8).prop_map(
        |(sites, ops, seed, initial, max_gap, hi)| Scenario {
            initial,
            latency: LatencyModel::Uniform { lo: 1, hi },
            ..Scenario::fuzz(
                "prop",
                sites,
                Mode::Sequencer,
                seed,
                FuzzSpec {
                    ops,
                    max_gap,
                    ..FuzzSpec::default()
                },
            )
        },
    )
}

fn after(s: &str, ops: &[&ExternalOp]) -> String {
    let mut st = ExternalState::from(s);
    for op in ops {
        st.apply(op).unwrap();
    }
    st.to_string()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tp1_holds_for_every_pair((s, a, b) in state_and_pair()) {
        let (sa, sb) = (SiteId(1), SiteId(2));
        let left = after(&s, &[&a, &transform(&b, sb, &a, sa)]);
        let right = after(&s, &[&b, &transform(&a, sa, &b, sb)]);
        prop_assert_eq!(left, right);
    }

    #[test]
    fn sequencer_sessions_converge_on_both_engines(sc in session()) {
        for engine in [EngineKind::Ot, EngineKind::Woot] {
            let out = run_scenario(&sc, &RunOptions::new(engine)).unwrap();
            prop_assert!(out.report.passed(), "{}", out.report.to_json());
            let t: BTreeSet<&str> = out.report.sites.iter().map(|s| s.text.as_str()).collect();
            prop_assert_eq!(t.len(), 1);
        }
    }

    #[test]
    fn woot_object_counts_are_exact(sc in session()) {
        let sc = Scenario { mode: Mode::Causal, ..sc };
        let opts = RunOptions { capture: true, ..RunOptions::new(EngineKind::Woot) };
        let out = run_scenario(&sc, &opts).unwrap();
        let mut inserts = 0;
        let mut deleted = BTreeSet::new();
        for m in &out.messages {
            match decode_id_op(&m.payload).unwrap() {
                IdOpKind::Insert { .. } => inserts += 1,
                IdOpKind::Delete { target } => { deleted.insert(target); }
            }
        }
        let total = sc.initial.chars().count() + inserts;
        for site in &out.report.sites {
            prop_assert_eq!(site.total, total);
            prop_assert_eq!(site.visible, total - deleted.len());
            prop_assert_eq!(site.visible, site.text.chars().count());
        }
    }

    #[test]
    fn ot_buffers_drain_after_gossip(sc in session(), gc in proptest::option::of(1usize..8)) {
        let opts = RunOptions { gc_every: gc, ..RunOptions::new(EngineKind::Ot) };
        let out = run_scenario(&sc, &opts).unwrap();
        prop_assert!(out.report.passed());
        prop_assert!(out.report.sites.iter().all(|s| s.buffer == 0));
    }

    #[test]
    fn trace_text_round_trips_and_replays(sc in session()) {
        for engine in [EngineKind::Ot, EngineKind::Woot] {
            let out = run_scenario(&sc, &RunOptions::new(engine)).unwrap();
            let text = out.trace.to_string();
            let parsed: Trace = text.parse().unwrap();
            prop_assert_eq!(&parsed, &out.trace);
            prop_assert_eq!(parsed.digest(), out.trace.digest());
            let replayed = replay_texts(&parsed).unwrap();
            let reported: Vec<String> = out.report.sites.iter().map(|s| s.text.clone()).collect();
            prop_assert_eq!(replayed, reported);
            prop_assert!(check_intention(&parsed).passed);
        }
    }

    #[test]
    fn realized_scripts_round_trip_as_text(sc in session()) {
        let out = run_scenario(&sc, &RunOptions::new(EngineKind::Woot)).unwrap();
        let explicit = Scenario { script: Script::Explicit(out.script.clone()), ..sc };
        let parsed: Scenario = explicit.to_string().parse().unwrap();
        prop_assert_eq!(&parsed, &explicit);
        let again = run_scenario(&parsed, &RunOptions::new(EngineKind::Woot)).unwrap();
        prop_assert_eq!(again.trace.to_string(), out.trace.to_string());
    }
}
