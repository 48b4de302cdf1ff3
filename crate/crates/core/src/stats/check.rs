use serde::{Deserialize, Serialize};

use super::Estimate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    InsufficientPower,
}

/// One line of an identity report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub combined_stderr: f64,
    pub z_score: f64,
    pub pass: bool,
    pub status: CheckStatus,
    #[serde(skip)]
    rule: Rule,
}

/// How `pass` was decided, so a record can be re-evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Rule {
    Within(f64),
    AtMost(f64),
    AtLeast(f64),
    Exact(f64),
}

impl Default for Rule {
    fn default() -> Self {
        Rule::Exact(0.0)
    }
}

impl Rule {
    fn passes(self, lhs: f64, rhs: f64, se: f64) -> bool {
        let slack = 1e-12 * (1.0 + lhs.abs().max(rhs.abs()));
        match self {
            Rule::Within(k) => (lhs - rhs).abs() <= k * se + slack,
            Rule::AtMost(k) => lhs - rhs <= k * se + slack,
            Rule::AtLeast(k) => rhs - lhs <= k * se + slack,
            Rule::Exact(tol) => (lhs - rhs).abs() <= tol,
        }
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

impl CheckRecord {
    fn build(name: impl Into<String>, lhs: f64, rhs: f64, se: f64, rule: Rule) -> Self {
        let pass = rule.passes(lhs, rhs, se);
        CheckRecord {
            check_name: name.into(),
            lhs,
            rhs,
            combined_stderr: se,
            z_score: z_score(lhs - rhs, se),
            pass,
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            rule,
        }
    }

    /// `|lhs - rhs| <= k * se`, with `se` the standard error of the difference.
    pub fn within(name: impl Into<String>, lhs: f64, rhs: f64, se: f64, k: f64) -> Self {
        Self::build(name, lhs, rhs, se, Rule::Within(k))
    }

    /// Two estimates from independent samples.
    pub fn independent(name: impl Into<String>, lhs: Estimate, rhs: Estimate, k: f64) -> Self {
        let se = lhs.stderr.hypot(rhs.stderr);
        Self::within(name, lhs.value, rhs.value, se, k)
    }

    /// `lhs <= rhs + k * se`.
    pub fn at_most(name: impl Into<String>, lhs: f64, rhs: f64, se: f64, k: f64) -> Self {
        Self::build(name, lhs, rhs, se, Rule::AtMost(k))
    }

    /// `lhs >= rhs - k * se`.
    pub fn at_least(name: impl Into<String>, lhs: f64, rhs: f64, se: f64, k: f64) -> Self {
        Self::build(name, lhs, rhs, se, Rule::AtLeast(k))
    }

    /// `|lhs - rhs| <= tol`; the reported error bar is zero.
    pub fn exact(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        Self::build(name, lhs, rhs, 0.0, Rule::Exact(tol))
    }

    /// Moves `lhs` by `size` error bars towards failure and re-evaluates.
    /// Records without an error bar move by `size` times their tolerance,
    /// or by `size` when that is zero.
    pub fn biased(&self, size: f64) -> Self {
        let unit = match self.rule {
            Rule::Exact(tol) if tol > 0.0 => tol,
            Rule::Exact(_) => 1.0,
            _ if self.combined_stderr > 0.0 => self.combined_stderr,
            _ => 1.0,
        };
        let shift = if matches!(self.rule, Rule::AtLeast(_)) { -size * unit } else { size * unit };
        let mut r = Self::build(self.check_name.clone(), self.lhs + shift, self.rhs, self.combined_stderr, self.rule);
        if self.status == CheckStatus::InsufficientPower {
            r = r.underpowered();
        }
        r
    }

    /// Marks a statistical check as skipped for lack of replicas.
    pub fn underpowered(mut self) -> Self {
        self.status = CheckStatus::InsufficientPower;
        self.pass = false;
        self
    }

    /// Counts as a failure of the suite.
    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn within_tolerance() {
        let r = CheckRecord::within("a", 1.0, 1.2, 0.1, 3.0);
        assert!(r.pass);
        assert!((r.z_score + 2.0).abs() < 1e-12);
        assert!(!CheckRecord::within("a", 1.0, 1.4, 0.1, 3.0).pass);
    }

    #[test]
    fn zero_error_bar() {
        let r = CheckRecord::within("a", 1.0, 1.0, 0.0, 3.0);
        assert!(r.pass);
        assert_eq!(r.z_score, 0.0);
        let r = CheckRecord::within("a", 1.0, 2.0, 0.0, 3.0);
        assert!(!r.pass);
        assert_eq!(r.z_score, f64::NEG_INFINITY);
    }

    #[test]
    fn one_sided() {
        assert!(CheckRecord::at_most("m", 1.25, 1.0, 0.1, 3.0).pass);
        assert!(CheckRecord::at_most("m", -5.0, 1.0, 0.1, 3.0).pass);
        assert!(!CheckRecord::at_most("m", 1.5, 1.0, 0.1, 3.0).pass);
        assert!(CheckRecord::at_least("m", 3.2, 3.0, 0.0, 3.0).pass);
        assert!(!CheckRecord::at_least("m", 2.5, 3.0, 0.1, 3.0).pass);
    }

    #[test]
    fn independent_errors_add_in_quadrature() {
        let r = CheckRecord::independent("i", Estimate::new(0.0, 3.0), Estimate::new(0.0, 4.0), 3.0);
        assert_eq!(r.combined_stderr, 5.0);
    }

    #[test]
    fn underpowered_is_not_a_failure() {
        let r = CheckRecord::within("a", 1.0, 9.0, 0.1, 3.0).underpowered();
        assert!(!r.failed());
        assert_eq!(r.status, CheckStatus::InsufficientPower);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["status"], "insufficient_power");
        for key in ["check_name", "lhs", "rhs", "combined_stderr", "z_score", "pass"] {
            assert!(json.get(key).is_some());
        }
    }

    #[test]
    fn bias_pushes_towards_failure() {
        let r = CheckRecord::within("a", 1.0, 1.0, 0.1, 3.0);
        let b = r.biased(10.0);
        assert!(!b.pass);
        assert!((b.z_score - 10.0).abs() < 1e-9);
        assert!(!CheckRecord::at_least("m", 3.0, 3.0, 0.1, 3.0).biased(10.0).pass);
        assert!(!CheckRecord::at_most("m", 3.0, 3.0, 0.1, 3.0).biased(10.0).pass);
        assert!(!CheckRecord::exact("e", 0.0, 0.0, 0.0).biased(10.0).pass);
        assert!(CheckRecord::within("a", 1.0, 1.0, 0.1, 3.0).biased(2.0).pass);
    }
}
