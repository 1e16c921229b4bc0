//! `fillerkit` command-line front end.

pub mod commands;
pub mod config;
pub mod experiment;

use fillerkit_core::annotation::AnnotationError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<fillerkit_core::Error> for CliError {
    fn from(e: fillerkit_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Core(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

/// Maps `f` over `items` on up to `jobs` threads. Results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u32> = (0..37).collect();
        for jobs in [1, 2, 4, 64] {
            assert_eq!(par_map(&xs, jobs, |x| x * 2), xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(par_map(&[] as &[u32], 4, |x| *x).is_empty());
    }

    #[test]
    fn numeric_core_errors_map_to_numeric_exit() {
        let e: CliError = fillerkit_core::Error::Numeric("diverged".into()).into();
        assert_eq!(e.exit_code(), EXIT_NUMERIC);
        let e: CliError = fillerkit_core::Error::Invalid("bad".into()).into();
        assert_eq!(e.exit_code(), EXIT_DATA);
    }
}
