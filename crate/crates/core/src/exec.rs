//! Thread-pool plumbing.
//!
//! All parallel loops collect in index order and reduce sequentially, so the
//! thread count never changes a result.

use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{Error, Result};

/// Environment variable that caps the worker count for [`Execution::Parallel`].
pub const THREADS_ENV: &str = "HYSHARP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
    Threads(usize),
}

impl Execution {
    pub fn threads(self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Threads(n) => n.max(1),
            Execution::Parallel => std::env::var(THREADS_ENV)
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
        }
    }

    pub fn pool(self) -> Result<ThreadPool> {
        ThreadPoolBuilder::new()
            .num_threads(self.threads())
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
    }

    /// Run `f` inside a pool sized for this mode.
    pub fn install<R: Send>(self, f: impl FnOnce() -> R + Send) -> Result<R> {
        Ok(self.pool()?.install(f))
    }
}
