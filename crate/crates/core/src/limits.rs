//! Size caps guarding against instances that do not fit at desk scale.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Default cap on the number of elements of any materialized vector or matrix dimension.
pub const DEFAULT_SIZE_CAP: usize = 1 << 24;

/// Environment variable overriding [`DEFAULT_SIZE_CAP`].
pub const SIZE_CAP_ENV: &str = "NBVQPCO_SIZE_CAP";

/// Process-wide size cap, read once from `NBVQPCO_SIZE_CAP` when set.
pub fn size_cap() -> usize {
    static CAP: OnceLock<usize> = OnceLock::new();
    *CAP.get_or_init(|| {
        std::env::var(SIZE_CAP_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0)
            .unwrap_or(DEFAULT_SIZE_CAP)
    })
}

pub(crate) fn check(what: &'static str, requested: u128, cap: usize) -> Result<usize> {
    if requested > cap as u128 {
        return Err(Error::SizeCapExceeded {
            what,
            requested,
            cap,
        });
    }
    Ok(requested as usize)
}

/// `base^exp` checked against `cap`.
pub(crate) fn checked_pow(what: &'static str, base: usize, exp: usize, cap: usize) -> Result<usize> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base as u128);
        if acc > cap as u128 {
            return check(what, acc, cap);
        }
    }
    check(what, acc, cap)
}
