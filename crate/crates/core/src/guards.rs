//! Size guards for the exhaustive-search entry points.
//!
//! Several operations (polymorphism search, endomorphism-graph construction,
//! protectedness scans, formula evaluation) are exponential in the worst case
//! and are only meant to run at desk scale. Each such entry point checks a
//! guard before starting; exceeding a guard is a distinct error so callers
//! can tell "too big" apart from "no".

use crate::{Error, Result};

/// Limits applied by guarded operations. `MODCSP_GUARD` (an integer)
/// overrides `universe_limit` at the CLI; library callers construct values
/// directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Guards {
    /// Maximum total universe size (sum over sorts) for endomorphism-graph
    /// construction, protectedness scans, and the Mal'tsev search.
    pub universe_limit: usize,
    /// Maximum number of bound variables in a modular formula evaluation.
    pub bound_var_limit: usize,
}

impl Default for Guards {
    fn default() -> Self {
        Guards {
            universe_limit: 8,
            bound_var_limit: 12,
        }
    }
}

impl Guards {
    /// Guards with `universe_limit` taken from the `MODCSP_GUARD` environment
    /// variable when it is set to a positive integer.
    pub fn from_env() -> Self {
        let mut g = Guards::default();
        if let Ok(v) = std::env::var("MODCSP_GUARD") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n > 0 {
                    g.universe_limit = n;
                }
            }
        }
        g
    }

    pub fn check_universe(&self, size: usize, what: &str) -> Result<()> {
        if size > self.universe_limit {
            Err(Error::Guard(format!(
                "{what}: universe size {size} exceeds limit {}",
                self.universe_limit
            )))
        } else {
            Ok(())
        }
    }

    pub fn check_bound_vars(&self, n: usize) -> Result<()> {
        if n > self.bound_var_limit {
            Err(Error::Guard(format!(
                "formula has {n} bound variables, limit {}",
                self.bound_var_limit
            )))
        } else {
            Ok(())
        }
    }
}
