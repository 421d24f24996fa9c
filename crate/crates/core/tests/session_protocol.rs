use std::sync::Arc;

use dashlab::experiment::{audit_records, Feedback, StimulusContext};
use dashlab::session::{Phase, SessionService};
use dashlab::stimuli::StimulusSet;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Call {
    GetTrial,
    Bid { offset: i32, bid: f64 },
    Rationale(String),
    Export,
    Restart,
}

fn call() -> impl Strategy<Value = Call> {
    prop_oneof![
        3 => Just(Call::GetTrial),
        6 => (prop_oneof![8 => Just(0), 1 => Just(-1), 1 => Just(1)], prop_oneof![9 => 60.0..160.0f64, 1 => -5.0..0.0f64])
            .prop_map(|(offset, bid)| Call::Bid { offset, bid }),
        1 => "[a-z ]{0,12}".prop_map(Call::Rationale),
        1 => Just(Call::Export),
        1 => Just(Call::Restart),
    ]
}

fn context() -> Arc<StimulusContext> {
    Arc::new(StimulusContext::new(StimulusSet::canonical()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// No call sequence, including restarts, produces a log that breaks the
    /// block structure or loses a persisted trial.
    #[test]
    fn random_call_sequences_keep_logs_valid(
        experiment in prop::sample::select(vec!["exp1", "exp2"]),
        seed in any::<u64>(),
        calls in prop::collection::vec(call(), 1..80),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let ctx = context();
        let mut service = SessionService::open(dir.path(), ctx.clone(), 0).unwrap();
        let id = service.create_session(experiment, Some(seed)).unwrap().session_id;
        let mut persisted = 0;
        for c in calls {
            match c {
                Call::GetTrial => {
                    if let Ok(view) = service.get_trial(&id) {
                        prop_assert_eq!(view.trialnum as usize, persisted + 1);
                    }
                }
                Call::Bid { offset, bid } => {
                    let trialnum = (persisted as i32 + 1 + offset).max(0) as u32;
                    if let Ok(fb) = service.submit_bid(&id, trialnum, bid) {
                        prop_assert!(offset == 0 && bid >= 0.0);
                        persisted += 1;
                        let json = serde_json::to_value(&fb).unwrap();
                        let record = service.export(&id).unwrap().records.pop().unwrap();
                        if record.feedback == Feedback::PayoffOnly {
                            prop_assert!(json.get("inferredCost").is_none());
                        } else {
                            prop_assert!(json.get("inferredCost").is_some());
                        }
                    }
                }
                Call::Rationale(text) => {
                    let _ = service.submit_rationale(&id, &text);
                }
                Call::Export => {
                    prop_assert_eq!(service.export(&id).unwrap().records.len(), persisted);
                }
                Call::Restart => {
                    let before = service.export(&id).unwrap();
                    drop(service);
                    service = SessionService::open(dir.path(), ctx.clone(), 0).unwrap();
                    let after = service.export(&id).unwrap();
                    prop_assert_eq!(&before.records, &after.records);
                    prop_assert_eq!(before.phase, after.phase);
                }
            }
        }
        let export = service.export(&id).unwrap();
        prop_assert_eq!(export.records.len(), persisted);
        let audit = audit_records(&ctx, &export.records, false).unwrap();
        prop_assert!(audit.is_clean(), "{:?}", audit.violations);
    }
}

#[test]
fn full_session_passes_complete_audit() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context();
    let service = SessionService::open(dir.path(), ctx.clone(), 5).unwrap();
    for experiment in ["exp1", "exp2"] {
        let id = service.create_session(experiment, None).unwrap().session_id;
        loop {
            match service.phase(&id).unwrap() {
                Phase::Done => break,
                Phase::Rationale => {
                    service.submit_rationale(&id, "bid near the peak").unwrap();
                }
                _ => {
                    let view = service.get_trial(&id).unwrap();
                    service.submit_bid(&id, view.trialnum, 100.0).unwrap();
                }
            }
        }
        let export = service.export(&id).unwrap();
        assert_eq!(export.rationales.len(), 2);
        assert!(audit_records(&ctx, &export.records, true).unwrap().is_clean());
    }
}
