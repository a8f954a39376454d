//! Invariant reports.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub kind: String,
    pub seed: u64,
    pub pass: bool,
    pub checks: BTreeMap<String, CheckResult>,
}

/// Collects checks of the form `measured ≤ tolerance`.
pub struct Checker {
    scale: f64,
    overrides: BTreeMap<String, f64>,
    checks: BTreeMap<String, CheckResult>,
}

impl Checker {
    pub fn new(scale: f64, overrides: BTreeMap<String, f64>) -> Self {
        Checker {
            scale,
            overrides,
            checks: BTreeMap::new(),
        }
    }

    /// Records `measured ≤ tolerance`. An override from the config replaces
    /// the default; the `--tol-scale` factor applies to both.
    pub fn at_most(&mut self, name: &str, measured: f64, default_tol: f64) {
        let tolerance = self.overrides.get(name).copied().unwrap_or(default_tol) * self.scale;
        let pass = measured <= tolerance;
        self.checks.insert(
            name.to_string(),
            CheckResult {
                measured,
                tolerance,
                pass,
            },
        );
    }

    pub fn finish(self, kind: &str, seed: u64) -> Report {
        Report {
            kind: kind.to_string(),
            seed,
            pass: self.checks.values().all(|c| c.pass),
            checks: self.checks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_scale() {
        let mut c = Checker::new(10.0, BTreeMap::from([("b".to_string(), 1e-3)]));
        c.at_most("a", 5e-9, 1e-9);
        c.at_most("b", 2e-2, 1e-9);
        c.at_most("c", f64::NAN, 1.0);
        let r = c.finish("x", 7);
        assert!(r.checks["a"].pass);
        assert_eq!(r.checks["b"].tolerance, 1e-2);
        assert!(!r.checks["b"].pass);
        assert!(!r.checks["c"].pass);
        assert!(!r.pass);
    }
}
