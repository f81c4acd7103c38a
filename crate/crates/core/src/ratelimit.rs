use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Blocking token bucket. `acquire` waits until a token is available.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(per_sec: f64, capacity: u32) -> Self {
        let capacity = f64::from(capacity.max(1));
        TokenBucket {
            capacity,
            per_sec,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    pub fn per_minute(requests: u32) -> Self {
        TokenBucket::new(f64::from(requests) / 60.0, 1)
    }

    /// A bucket that never blocks.
    pub fn unlimited() -> Self {
        TokenBucket::new(f64::INFINITY, 1)
    }

    pub fn acquire(&self) {
        if !self.per_sec.is_finite() {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let elapsed = now.duration_since(st.1).as_secs_f64();
                st.0 = (st.0 + elapsed * self.per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            std::thread::sleep(wait);
        }
    }
}
