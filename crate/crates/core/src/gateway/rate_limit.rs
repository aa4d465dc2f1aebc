use std::time::Instant;

/// Refills at `rate` tokens per second up to `capacity`; starts full.
#[derive(Clone, Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Option<Instant>,
}

impl TokenBucket {
    pub fn new(rate: f64, capacity: f64) -> Self {
        Self {
            rate,
            capacity,
            tokens: capacity,
            last: None,
        }
    }

    /// Takes one token if available at time `now`.
    pub fn try_take(&mut self, now: Instant) -> bool {
        if let Some(last) = self.last {
            let dt = now.saturating_duration_since(last).as_secs_f64();
            self.tokens = (self.tokens + dt * self.rate).min(self.capacity);
        }
        self.last = Some(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;

    #[test]
    fn one_per_second() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(1.0, 1.0);
        assert!(b.try_take(t0));
        assert!(!b.try_take(t0 + Duration::from_millis(500)));
        assert!(b.try_take(t0 + Duration::from_millis(1000)));
        assert!(!b.try_take(t0 + Duration::from_millis(1100)));
    }

    #[test]
    fn idle_time_does_not_exceed_capacity() {
        let t0 = Instant::now();
        let mut b = TokenBucket::new(2.0, 2.0);
        assert!(b.try_take(t0));
        let later = t0 + Duration::from_secs(60);
        assert!(b.try_take(later));
        assert!(b.try_take(later));
        assert!(!b.try_take(later));
    }

    #[test]
    fn rate_bounds_long_run_throughput() {
        // Requests every 100 ms for 10 s at 1/s admit about ten.
        let t0 = Instant::now();
        let mut b = TokenBucket::new(1.0, 1.0);
        let admitted = (0..100)
            .filter(|i| b.try_take(t0 + Duration::from_millis(100 * i)))
            .count();
        assert!((10..=11).contains(&admitted), "{admitted}");
    }
}
