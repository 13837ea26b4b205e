//! Monotone bisection that only ever returns a point it has verified.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectOptions {
    /// Stop once `hi - lo <= rel_tol * lo`.
    pub rel_tol: f64,
    /// Absolute floor on the bracket width; lets brackets pinned at zero terminate.
    pub abs_tol: f64,
    /// Upper brackets double from 1 up to this cap.
    pub cap: f64,
}

impl Default for BisectOptions {
    fn default() -> Self {
        BisectOptions {
            rel_tol: 1e-6,
            abs_tol: 1e-15,
            cap: 2f64.powi(60),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectOutcome {
    /// Last point found feasible (0 when nothing above 0 was).
    pub value: f64,
    /// The cap itself was feasible; `value` is the cap, not a true maximum.
    pub unbounded: bool,
    /// Every probe in order, with its outcome.
    pub trace: Vec<(f64, bool)>,
}

/// Largest feasible `x >= 0` for a predicate that is feasible on `[0, x*)`
/// and infeasible above. Zero is assumed feasible and never evaluated.
pub fn bisect_max<F>(mut feasible: F, opts: &BisectOptions) -> Result<BisectOutcome>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut trace = Vec::new();
    let mut probe = |x: f64, trace: &mut Vec<(f64, bool)>| -> Result<bool> {
        let ok = feasible(x)?;
        trace.push((x, ok));
        Ok(ok)
    };

    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        if !probe(hi, &mut trace)? {
            break;
        }
        lo = hi;
        if hi >= opts.cap {
            return Ok(BisectOutcome {
                value: lo,
                unbounded: true,
                trace,
            });
        }
        hi = (hi * 2.0).min(opts.cap);
    }
    while hi - lo > (opts.rel_tol * lo).max(opts.abs_tol) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if probe(mid, &mut trace)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BisectOutcome {
        value: lo,
        unbounded: false,
        trace,
    })
}

/// Smallest `x >= 0` for a predicate that is infeasible below `x*` and
/// feasible above, to absolute tolerance `abs_tol`. Returns `x` with
/// `feasible(x)` verified true. `None` if nothing up to `cap` is feasible.
pub fn bisect_min<F>(mut feasible: F, abs_tol: f64, cap: f64) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<bool>,
{
    if feasible(0.0)? {
        return Ok(Some(0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while !feasible(hi)? {
        lo = hi;
        if hi >= cap {
            return Ok(None);
        }
        hi = (hi * 2.0).min(cap);
    }
    while hi - lo > abs_tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_threshold_from_below() {
        let out = bisect_max(|x| Ok(x < 3.7), &BisectOptions::default()).unwrap();
        assert!(!out.unbounded);
        assert!(out.value < 3.7 && out.value > 3.7 * (1.0 - 2e-6));
        assert!(out.trace.iter().any(|&(x, ok)| ok && x == out.value));
    }

    #[test]
    fn threshold_below_one() {
        let out = bisect_max(|x| Ok(x <= 1e-4), &BisectOptions::default()).unwrap();
        assert!(out.value <= 1e-4 && out.value > 1e-4 * (1.0 - 2e-6));
    }

    #[test]
    fn nothing_feasible_returns_zero() {
        let out = bisect_max(|x| Ok(x <= 0.0), &BisectOptions::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(!out.unbounded);
    }

    #[test]
    fn cap_hit_is_flagged() {
        let opts = BisectOptions {
            cap: 1024.0,
            ..BisectOptions::default()
        };
        let out = bisect_max(|_| Ok(true), &opts).unwrap();
        assert!(out.unbounded);
        assert_eq!(out.value, 1024.0);
    }

    #[test]
    fn min_bisection() {
        let x = bisect_min(|x| Ok(x >= 0.3), 1e-9, 1e6).unwrap().unwrap();
        assert!(x >= 0.3 && x - 0.3 <= 1e-9);
        assert_eq!(bisect_min(|_| Ok(true), 1e-9, 1e6).unwrap(), Some(0.0));
        assert_eq!(bisect_min(|_| Ok(false), 1e-9, 8.0).unwrap(), None);
    }
}
