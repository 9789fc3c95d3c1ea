//! Time source abstraction so the core can record stage timings without `std`.

/// A monotonic source of seconds.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Clock that always reads zero. Used when timing is irrelevant.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

#[cfg(feature = "std")]
mod wall {
    use super::Clock;
    use std::time::Instant;

    /// Wall clock measuring seconds since construction.
    #[derive(Debug, Clone, Copy)]
    pub struct WallClock(Instant);

    impl WallClock {
        pub fn new() -> Self {
            WallClock(Instant::now())
        }
    }

    impl Default for WallClock {
        fn default() -> Self {
            Self::new()
        }
    }

    impl Clock for WallClock {
        fn seconds(&self) -> f64 {
            self.0.elapsed().as_secs_f64()
        }
    }
}

#[cfg(feature = "std")]
pub use wall::WallClock;
