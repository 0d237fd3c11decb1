use std::path::PathBuf;

use proptest::prelude::*;
use weaves::checkpoint_file::{decode_snapshot, encode_snapshot, load_checkpoint, save_checkpoint};
use weaves::config::{load_tapestry, parse_tapestry_config, TWO_PAIRS};
use weaves::perfdb::{read_perfdb, PerfDb};
use weaves::policy_file::{load_policy, policy_from_json, policy_to_json, save_policy};
use weaves::AppError;
use weaves_core::recommender::{Action, ActionKind, Feature, FeatureState, Outcome, PerformanceRecord, QConfig, QPolicy};
use weaves_core::{Policy, RunOutcome, Tapestry};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("weaves-files-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    let _ = std::fs::remove_file(&p);
    p
}

fn two_pairs() -> Tapestry {
    let (mut t, _) = load_tapestry(&parse_tapestry_config(TWO_PAIRS).unwrap()).unwrap();
    t.set_quantum(3).unwrap();
    t
}

fn final_state(t: &Tapestry) -> (Vec<(weaves_core::Addr, Vec<u8>)>, Vec<String>) {
    let cells = t.memory().cells().iter().map(|(a, c)| (*a, c.value.clone())).collect();
    let statuses = t.strings().map(|s| format!("{} {}", s.id, s.status().as_str())).collect();
    (cells, statuses)
}

#[test]
fn checkpoint_file_resumes_a_run() {
    let mut reference = two_pairs();
    assert_eq!(reference.run(None).unwrap(), RunOutcome::Done);

    let mut first = two_pairs();
    assert_eq!(first.run_dispatches(25).unwrap(), RunOutcome::Budget);
    let path = scratch("mid.wvck");
    save_checkpoint(&first, &path).unwrap();

    let mut resumed = two_pairs();
    load_checkpoint(&mut resumed, &path).unwrap();
    assert_eq!(resumed.scheduler().step(), first.scheduler().step());
    assert_eq!(resumed.run(None).unwrap(), RunOutcome::Done);
    assert_eq!(final_state(&resumed), final_state(&reference));
}

#[test]
fn snapshot_bytes_round_trip() {
    let mut t = two_pairs();
    t.run_dispatches(11).unwrap();
    let snap = t.snapshot().unwrap();
    let bytes = encode_snapshot(&snap);
    assert_eq!(&bytes[..4], b"WVCK");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(decode_snapshot(&bytes).unwrap(), snap);
}

#[test]
fn malformed_checkpoint_files_are_rejected() {
    let mut t = two_pairs();
    t.run_dispatches(5).unwrap();
    let good = encode_snapshot(&t.snapshot().unwrap());
    let mut wrong_magic = good.clone();
    wrong_magic[0] = b'X';
    let mut wrong_version = good.clone();
    wrong_version[4] = 9;
    let mut trailing = good.clone();
    trailing.push(0);
    for bad in [wrong_magic, wrong_version, good[..good.len() - 3].to_vec(), trailing, Vec::new()] {
        assert!(matches!(decode_snapshot(&bad), Err(AppError::Format(_))));
    }
}

#[test]
fn snapshot_refuses_a_different_tapestry() {
    let mut t = two_pairs();
    t.run_dispatches(5).unwrap();
    let snap = t.snapshot().unwrap();
    let mut other = Tapestry::default();
    assert!(other.install_snapshot(snap).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoding_corrupted_bytes_never_panics(at in 0usize..4096, byte in any::<u8>(), cut in 0usize..4096) {
        let mut t = two_pairs();
        t.run_dispatches(9).unwrap();
        let mut bytes = encode_snapshot(&t.snapshot().unwrap());
        let i = at % bytes.len();
        bytes[i] = byte;
        bytes.truncate(bytes.len() - cut % bytes.len());
        let _ = decode_snapshot(&bytes);
    }

    #[test]
    fn resuming_at_any_dispatch_matches_an_uninterrupted_run(stop in 0u64..120, random in any::<bool>(), seed in 0u64..50) {
        let build = || {
            let mut t = two_pairs();
            if random {
                t.set_policy(Policy::SeededRandom, seed);
            }
            t
        };
        let mut reference = build();
        reference.run(None).unwrap();
        let mut first = build();
        first.run_dispatches(stop).unwrap();
        let bytes = encode_snapshot(&first.snapshot().unwrap());
        let mut resumed = two_pairs();
        let spawned = resumed.trace().lines().len();
        resumed.install_snapshot(decode_snapshot(&bytes).unwrap()).unwrap();
        prop_assert_eq!(resumed.run(None).unwrap(), RunOutcome::Done);
        prop_assert_eq!(final_state(&resumed), final_state(&reference));
        prop_assert_eq!(resumed.scheduler().dispatches(), reference.scheduler().dispatches());
        let tail = |t: &Tapestry, from: usize| t.trace().lines()[from..].iter().map(|l| l.to_string()).collect::<Vec<_>>();
        prop_assert_eq!(tail(&resumed, spawned), tail(&reference, first.trace().lines().len()));
    }
}

fn record(alpha: f64, tol: f64, method: &str, outcome: Outcome, evals: u64) -> PerformanceRecord {
    PerformanceRecord {
        params: vec![alpha, tol],
        method: method.into(),
        outcome,
        time: 0.5,
        evals,
    }
}

#[test]
fn performance_database_appends_across_opens() {
    let path = scratch("perf.csv");
    let a = record(0.25, 1e-6, "gauss5", Outcome::Success, 120);
    let b = record(0.5, 1e-7, "fragile3", Outcome::Failure, 9);
    PerfDb::open(&path, &["alpha", "tol"]).unwrap().append(std::slice::from_ref(&a)).unwrap();
    let db = PerfDb::open(&path, &["alpha", "tol"]).unwrap();
    db.append(std::slice::from_ref(&b)).unwrap();
    assert_eq!(db.read().unwrap(), vec![a, b]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("alpha,tol,method,outcome,time,evals"));
    assert_eq!(text.lines().count(), 3);
    let (params, _) = read_perfdb(&path).unwrap();
    assert_eq!(params, ["alpha", "tol"]);
    assert!(PerfDb::open(&path, &["beta"]).is_err());
}

#[test]
fn policy_file_round_trips() {
    let mut p = QPolicy::new(QConfig { gamma: 0.5, ..QConfig::default() }, 42);
    let s1 = FeatureState::new().with("position", Feature::sym("whole")).with("depth", Feature::Int(2));
    let s2 = FeatureState::new().with("singular", Feature::Flag(true));
    p.set_q(s1.clone(), Action::new(ActionKind::ChooseModule, "gauss5"), -84.25);
    p.set_q(s1, Action::new(ActionKind::ChooseModule, "midpoint"), -1e-3);
    p.set_q(s2, Action::new(ActionKind::SwitchAlgorithm, "switch-to-stiff"), 3.5);
    let path = scratch("policy.json");
    save_policy(&p, &path).unwrap();
    let back = load_policy(&path).unwrap();
    let entries = |p: &QPolicy| p.entries().map(|(s, a, q)| (s.clone(), a.clone(), q.to_bits())).collect::<Vec<_>>();
    assert_eq!(entries(&back), entries(&p));
    assert_eq!(back.config(), p.config());
    assert_eq!(back.seed(), 42);

    let mut v = policy_to_json(&p);
    v["version"] = 7.into();
    assert!(policy_from_json(&v).is_err());
}
