use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{AttribError, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first.
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, backoff_base: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`.
    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff_base.saturating_mul(1u32 << (retry - 1).min(20))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _: Duration) {}
}

/// Records requested delays instead of sleeping.
#[derive(Default)]
pub struct RecordingSleeper {
    delays: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn delays(&self) -> Vec<Duration> {
        self.delays.lock().expect("sleeper lock").clone()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.delays.lock().expect("sleeper lock").push(d);
    }
}

/// Runs `call` until it succeeds, fails permanently, or retries run out.
pub fn with_retry<T>(
    policy: RetryPolicy,
    sleeper: &dyn Sleeper,
    mut call: impl FnMut() -> Result<T, TransportError>,
) -> Result<T, AttribError> {
    let mut attempt = 1;
    loop {
        match call() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt <= policy.max_retries => {
                sleeper.sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(source) => return Err(AttribError::Transport { attempts: attempt, source }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backs_off_exponentially_then_succeeds() {
        let s = RecordingSleeper::default();
        let mut n = 0;
        let policy = RetryPolicy { max_retries: 3, backoff_base: Duration::from_millis(10) };
        let out = with_retry(policy, &s, || {
            n += 1;
            if n < 3 { Err(TransportError::Transient("429".into())) } else { Ok(n) }
        })
        .unwrap();
        assert_eq!(out, 3);
        assert_eq!(s.delays(), vec![Duration::from_millis(10), Duration::from_millis(20)]);
    }

    #[test]
    fn exhausts_retries_once() {
        let mut n = 0;
        let err = with_retry(RetryPolicy { max_retries: 2, ..Default::default() }, &NoSleep, || -> Result<(), _> {
            n += 1;
            Err(TransportError::Transient("503".into()))
        })
        .unwrap_err();
        assert_eq!(n, 3);
        assert!(matches!(err, AttribError::Transport { attempts: 3, .. }));
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let mut n = 0;
        let err = with_retry(RetryPolicy::default(), &NoSleep, || -> Result<(), _> {
            n += 1;
            Err(TransportError::Permanent("400".into()))
        })
        .unwrap_err();
        assert_eq!(n, 1);
        assert!(matches!(err, AttribError::Transport { attempts: 1, .. }));
    }
}
