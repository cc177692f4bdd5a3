use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Blocking token bucket shared by all callers of one backend.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(capacity: f64, refill_per_sec: f64) -> Self {
        assert!(capacity >= 1.0 && refill_per_sec > 0.0);
        Self {
            capacity,
            refill_per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Allows `rpm` requests per minute with a burst of one second's worth
    /// (at least one request).
    pub fn per_minute(rpm: u32) -> Self {
        let per_sec = f64::from(rpm) / 60.0;
        Self::new(per_sec.max(1.0), per_sec)
    }

    /// Takes a token if one is available, otherwise returns the wait time.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        let elapsed = now.duration_since(state.1).as_secs_f64();
        state.0 = (state.0 + elapsed * self.refill_per_sec).min(self.capacity);
        state.1 = now;
        if state.0 >= 1.0 {
            state.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64(
                (1.0 - state.0) / self.refill_per_sec,
            ))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_wait() {
        let bucket = TokenBucket::new(2.0, 1.0);
        assert!(bucket.try_acquire().is_ok());
        assert!(bucket.try_acquire().is_ok());
        let wait = bucket.try_acquire().unwrap_err();
        assert!(wait > Duration::from_millis(900) && wait <= Duration::from_secs(1));
    }

    #[test]
    fn refills_over_time() {
        let bucket = TokenBucket::new(1.0, 200.0);
        bucket.acquire();
        let start = Instant::now();
        bucket.acquire();
        assert!(start.elapsed() >= Duration::from_millis(3));
    }
}
