//! Retry and concurrency policy applied to every backend call.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendPolicy {
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            max_retries: 3,
            base_backoff_ms: 500,
            timeout_ms: 120_000,
        }
    }
}

impl BackendPolicy {
    pub fn base_backoff(&self) -> Duration {
        Duration::from_millis(self.base_backoff_ms)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Backoff before retry number `attempt` (0-based), doubling and capped at 60 s.
    pub fn backoff_for(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.min(16);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor).min(60_000))
    }

    /// Runs `call` until it succeeds, fails permanently, or retries are used up.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0u32;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    if attempt >= self.max_retries {
                        return Err(BackendError::TransientExhausted {
                            attempts: attempt + 1,
                            last: Box::new(e),
                        });
                    }
                    let wait = self.backoff_for(attempt);
                    log::debug!("transient backend failure ({e}); retrying in {wait:?}");
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Counting semaphore bounding in-flight calls to one backend.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
        Permit { sem: self }
    }
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.permits.lock().unwrap_or_else(|p| p.into_inner());
        *n += 1;
        self.sem.freed.notify_one();
    }
}
