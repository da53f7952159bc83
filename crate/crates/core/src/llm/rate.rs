use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Monotonic time source. Tests substitute [`FakeClock`].
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually driven clock; `sleep` advances time instantly.
#[derive(Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
}

impl FakeClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Sliding-window limiter: at most `max_requests` acquisitions within any
/// window of length `interval`.
pub struct RateLimiter {
    max_requests: usize,
    interval: Duration,
    clock: Arc<dyn Clock>,
    starts: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(max_requests: usize, interval: Duration, clock: Arc<dyn Clock>) -> Self {
        assert!(max_requests > 0, "rate limit must allow at least one request");
        Self {
            max_requests,
            interval,
            clock,
            starts: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a request may start, then records its start time.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut starts = self.starts.lock().unwrap();
                let now = self.clock.now();
                while starts.front().is_some_and(|&t| now.saturating_sub(t) >= self.interval) {
                    starts.pop_front();
                }
                if starts.len() < self.max_requests {
                    starts.push_back(now);
                    return;
                }
                (starts[0] + self.interval).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_micros(1)));
        }
    }
}
