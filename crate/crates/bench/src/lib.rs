//! Fixtures shared by the benchmarks.

use bercow_core::{ms, Backend, Invocation, Micros, SroConfig, SroHandle, Submission};

/// Seeded-hash oracle sized for the bundled topology.
pub fn seeded_oracle() -> SroHandle {
    SroHandle::init(
        SroConfig::new(80, 26, Backend::SeededHash).expect("valid size"),
        [1; 32],
    )
    .expect("init")
}

/// `count` commands spread over every city, `spacing` apart after a one-slot lead.
pub fn spread_submissions(count: usize, spacing: Micros) -> Vec<Submission> {
    (0..count)
        .map(|i| Submission {
            invocation: Invocation::labeled(&format!("bench{i}"), ms(1500) + i as Micros * spacing)
                .expect("valid time"),
            origin_city: i % 12,
        })
        .collect()
}
