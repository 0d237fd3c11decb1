use std::time::Duration;
use weaves::apps::delay::*;

#[test]
fn work_is_split_exactly() {
    let mut t = compose_delay(7, 1000, 10).unwrap();
    assert_eq!(t.run(None).unwrap(), weaves_core::RunOutcome::Done);
    // 1000 split 143 x6 + 142: 15 chunks then a final return, per string
    assert_eq!(t.strings().count(), 7);
    assert!(t.scheduler().dispatches() >= 100);
}

#[test]
fn single_string_matches_baseline_roughly() {
    let work = calibrate(Duration::from_millis(100));
    let r = run_delay_benchmark(1, work).unwrap();
    assert!(r.ratio() < 1.5, "{r:?}");
}

#[test]
fn many_strings_add_little_overhead() {
    let work = calibrate(Duration::from_millis(100));
    let r = run_delay_benchmark(256, work).unwrap();
    assert!(r.ratio() < 1.5, "{r:?}");
    assert!(r.per_switch() < 1e-4);
}
