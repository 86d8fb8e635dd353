//! Kept in its own test binary so no concurrent test inflates the resident
//! set while the allocation oracle runs.

use std::hint::black_box;
use std::time::Duration;

use annopipe::telemetry::collect_telemetry;

#[test]
fn two_second_sleep() {
    let ((), t) = collect_telemetry(|| std::thread::sleep(Duration::from_secs(2)));
    assert!((2.0..=2.5).contains(&t.wall_seconds), "{}", t.wall_seconds);
}

#[test]
fn holding_100_mb_shows_in_the_peak() {
    if annopipe::telemetry::resident_memory_bytes().is_none() {
        return;
    }
    const SIZE: usize = 100 * 1024 * 1024;
    let (sum, t) = collect_telemetry(|| {
        // touch every page so it is resident, then hold it past a few samples
        let buf = black_box(vec![1u8; SIZE]);
        std::thread::sleep(Duration::from_millis(300));
        buf.iter().step_by(4096).map(|&b| b as u64).sum::<u64>()
    });
    assert_eq!(sum, (SIZE / 4096) as u64);
    let peak = t.peak_memory_bytes.unwrap();
    let base = t.baseline_memory_bytes.unwrap();
    assert!(peak >= base + SIZE as u64, "peak {peak} base {base}");
}
