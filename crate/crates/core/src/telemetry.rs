//! Wall-clock and resident-memory measurement around a closure.

use std::fs;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Resident-set sampling period.
pub const SAMPLE_PERIOD: Duration = Duration::from_millis(50);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub wall_seconds: f64,
    /// Highest resident set size seen during the run; `None` when the
    /// platform offers no process statistics.
    pub peak_memory_bytes: Option<u64>,
    /// Resident set size just before the run started.
    pub baseline_memory_bytes: Option<u64>,
}

/// Current resident set size, from `/proc/self/status`.
pub fn resident_memory_bytes() -> Option<u64> {
    status_field_kib("VmRSS:").map(|k| k * 1024)
}

fn status_field_kib(field: &str) -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with(field))
        .and_then(|l| l[field.len()..].trim().trim_end_matches("kB").trim().parse().ok())
}

/// Resets the kernel's peak-RSS counter; false when unsupported.
fn reset_high_water_mark() -> bool {
    fs::write("/proc/self/clear_refs", "5").is_ok()
}

/// Runs `f` while a background thread samples resident memory. Telemetry is
/// always returned, even when `f` fails.
pub fn collect_telemetry<R>(f: impl FnOnce() -> R) -> (R, Telemetry) {
    let baseline = resident_memory_bytes();
    let hwm_reset = baseline.is_some() && reset_high_water_mark();
    let peak = Arc::new(AtomicU64::new(baseline.unwrap_or(0)));
    let stop = Arc::new(AtomicBool::new(false));
    let sampler = baseline.map(|_| {
        let (peak, stop) = (peak.clone(), stop.clone());
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                if let Some(rss) = resident_memory_bytes() {
                    peak.fetch_max(rss, Ordering::Relaxed);
                }
                thread::park_timeout(SAMPLE_PERIOD);
            }
        })
    });

    let start = Instant::now();
    let out = f();
    let wall_seconds = start.elapsed().as_secs_f64();

    stop.store(true, Ordering::Relaxed);
    if let Some(handle) = sampler {
        handle.thread().unpark();
        let _ = handle.join();
    }
    let peak_memory_bytes = baseline.map(|_| {
        let mut p = peak.load(Ordering::Relaxed);
        if let Some(rss) = resident_memory_bytes() {
            p = p.max(rss);
        }
        if hwm_reset {
            if let Some(hwm) = status_field_kib("VmHWM:") {
                p = p.max(hwm * 1024);
            }
        }
        p
    });
    (
        out,
        Telemetry {
            wall_seconds,
            peak_memory_bytes,
            baseline_memory_bytes: baseline,
        },
    )
}
