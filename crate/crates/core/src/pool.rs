//! Order-preserving worker pool.

use crate::error::{invalid, FbtsError, Result};

/// Runs indexed tasks on up to `width` threads; results come back in index
/// order and are identical to serial execution whenever each task is pure
/// given its index.
#[derive(Clone)]
pub struct WorkerPool {
    width: usize,
    #[cfg(feature = "parallel")]
    pool: Option<std::sync::Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("width", &self.width).finish()
    }
}

impl WorkerPool {
    pub fn serial() -> Self {
        WorkerPool {
            width: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// Width 1 never spawns threads. Without the `parallel` feature every
    /// width runs serially.
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(invalid("worker width must be at least 1"));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = if width > 1 {
                let p = rayon::ThreadPoolBuilder::new()
                    .num_threads(width)
                    .build()
                    .map_err(|e| FbtsError::Unsupported(format!("thread pool: {e}")))?;
                Some(std::sync::Arc::new(p))
            } else {
                None
            };
            Ok(WorkerPool { width, pool })
        }
        #[cfg(not(feature = "parallel"))]
        Ok(WorkerPool { width })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Evaluates `task(0..n)`. If any task fails, the lowest failing index is
    /// reported.
    pub fn execute<T, F>(&self, n: usize, task: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let results: Vec<Result<T>> = self.map(n, &task);
        let mut out = Vec::with_capacity(n);
        for (index, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(e) => return Err(FbtsError::Task { index, source: Box::new(e) }),
            }
        }
        Ok(out)
    }

    #[cfg(feature = "parallel")]
    fn map<T, F>(&self, n: usize, task: &F) -> Vec<Result<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        use rayon::prelude::*;
        match &self.pool {
            Some(p) => p.install(|| (0..n).into_par_iter().map(task).collect()),
            None => (0..n).map(task).collect(),
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn map<T, F>(&self, n: usize, task: &F) -> Vec<Result<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        (0..n).map(task).collect()
    }
}

impl Default for WorkerPool {
    fn default() -> Self {
        Self::serial()
    }
}
