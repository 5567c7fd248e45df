use proptest::prelude::*;
use slmrank_runtime::shaper::{queue_delays, shape_all, ShaperConfig, TokenBucket};
use slmrank_runtime::workload::{count_cv, on_off_arrivals, OnOffConfig};

fn cfg(rate: f64, burst: f64, max_defer_ms: f64) -> ShaperConfig {
    ShaperConfig { rate, burst, max_defer_ms }
}

#[test]
fn burst_plus_one_defers_the_last_by_one_token_interval() {
    let mut b = TokenBucket::new(cfg(20.0, 5.0, 1000.0));
    let admits: Vec<f64> = (0..6).map(|_| b.admit(2.0)).collect();
    assert_eq!(&admits[..5], &[2.0; 5]);
    assert!((admits[5] - 2.05).abs() < 1e-12, "{}", admits[5]);
    assert_eq!(b.stats().deferred, 1);
}

#[test]
fn deferral_is_capped_and_nothing_is_dropped() {
    let mut b = TokenBucket::new(cfg(1.0, 1.0, 200.0));
    assert_eq!(b.admit(0.0), 0.0);
    let t = b.admit(0.1);
    assert!((t - 0.3).abs() < 1e-12, "{t}");
    let s = b.stats();
    assert_eq!((s.admitted, s.capped), (2, 1));
    assert!((s.max_defer_ms - 200.0).abs() < 1e-9);
}

#[test]
fn spaced_arrivals_are_never_deferred() {
    let arrivals: Vec<f64> = (0..100).map(|i| i as f64 * 0.11).collect();
    let (admits, stats) = shape_all(cfg(10.0, 1.0, 50.0), &arrivals);
    assert_eq!(admits, arrivals);
    assert_eq!(stats.deferred, 0);
}

/// Admissions in every window `[a_i, a_j]` against `R·(a_j − a_i) + B`.
fn max_window_excess(admits: &[f64], c: &ShaperConfig) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..admits.len() {
        for j in i..admits.len() {
            let count = (j - i + 1) as f64;
            worst = worst.max(count - (c.rate * (admits[j] - admits[i]) + c.burst));
        }
    }
    worst
}

proptest! {
    #[test]
    fn admissions_conserve_and_respect_the_bucket(
        gaps in prop::collection::vec(0.0f64..0.3, 1..80),
        rate in 1.0f64..50.0,
        burst in 1.0f64..8.0,
        max_defer_ms in 0.0f64..2000.0,
    ) {
        let c = cfg(rate, burst, max_defer_ms);
        let arrivals: Vec<f64> = gaps.iter().scan(0.0, |t, g| { *t += g; Some(*t) }).collect();
        let (admits, stats) = shape_all(c, &arrivals);
        prop_assert_eq!(admits.len(), arrivals.len());
        prop_assert_eq!(stats.admitted as usize, arrivals.len());
        for (i, (a, t)) in admits.iter().zip(&arrivals).enumerate() {
            prop_assert!(a >= t);
            prop_assert!(a - t <= max_defer_ms / 1000.0 + 1e-9);
            if i > 0 {
                prop_assert!(*a >= admits[i - 1]);
            }
        }
        if stats.capped == 0 {
            prop_assert!(max_window_excess(&admits, &c) <= 1e-9);
        }
    }
}

#[test]
fn on_off_workload_shaping_report() {
    let w = OnOffConfig { seed: 3, on_rps: 160.0, on_s: 1.0, off_s: 1.0, duration_s: 120.0 };
    let arrivals = on_off_arrivals(&w);
    let c = cfg(95.0, 10.0, 1000.0);
    let (admits, stats) = shape_all(c, &arrivals);
    let service = 1.0 / 100.0;
    let raw = queue_delays(&arrivals, service, 1);
    let shaped = queue_delays(&admits, service, 1);
    let p99 = |v: &[f64]| slmrank_runtime::bench::percentile(v, 99.0).unwrap();
    println!(
        "arrivals {}  capped {}  p99 engine queue raw {:.1} ms shaped {:.1} ms  cv {:.3} -> {:.3}",
        arrivals.len(),
        stats.capped,
        1e3 * p99(&raw),
        1e3 * p99(&shaped),
        count_cv(&arrivals, 0.1, w.duration_s),
        count_cv(&admits, 0.1, w.duration_s + 1.0)
    );
    assert!(p99(&shaped) < p99(&raw));
}
