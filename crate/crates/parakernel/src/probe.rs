//! Probe reports: named series of measured quantities, each with a rule that
//! turns the numbers into a verdict. Verdicts are recomputed from the stored
//! numbers, never stored on their own.

use serde::{Serialize, Serializer};
use std::collections::BTreeMap;

use crate::kernel_wholespace::DIVERGENCE_THRESHOLD;

/// Outcome of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Run for information on a case the estimate does not cover.
    OutsideHypothesis,
}

impl Verdict {
    pub fn tag(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::OutsideHypothesis => "outside-hypothesis",
        }
    }
}

/// Acceptance rule applied to the values of one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Every value finite and at most [`DIVERGENCE_THRESHOLD`].
    Finite,
    /// Finite, and no consecutive ratio `v[k+1]/v[k]` above `cap`.
    Stable { cap: f64 },
    /// Finite, and every consecutive ratio within `[1/(1+tol), 1+tol]`.
    Band { tol: f64 },
    /// Every consecutive ratio at least `min` (designed blow-up).
    Growth { min: f64 },
    AtMost { limit: f64 },
    AtLeast { limit: f64 },
    /// Every value within `tol·|target|` of `target`.
    Relative { target: f64, tol: f64 },
    /// Recorded only; never fails.
    Info,
}

/// One measured quantity across a ladder of levels (refinements, δ values,
/// sample densities, …).
#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub name: String,
    pub quantity: String,
    #[serde(serialize_with = "floats")]
    pub levels: Vec<f64>,
    #[serde(serialize_with = "floats")]
    pub values: Vec<f64>,
    #[serde(flatten)]
    pub rule: Rule,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else if a == 0.0 {
        f64::INFINITY
    } else {
        b / a
    }
}

fn finite(v: f64) -> bool {
    v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD
}

impl Series {
    pub fn new(name: impl Into<String>, quantity: impl Into<String>, levels: Vec<f64>, values: Vec<f64>, rule: Rule) -> Self {
        Self { name: name.into(), quantity: quantity.into(), levels, values, rule }
    }

    /// Consecutive ratios `v[k+1]/v[k]` (with `0/0 = 1`).
    pub fn growth_factors(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| ratio(w[0], w[1])).collect()
    }

    /// Largest consecutive ratio, `None` for fewer than two values.
    pub fn max_growth(&self) -> Option<f64> {
        self.growth_factors().into_iter().reduce(|a, b| if b.is_nan() || b > a { b } else { a })
    }

    pub fn passes(&self) -> bool {
        let all_finite = self.values.iter().all(|&v| finite(v));
        let g = self.growth_factors();
        match self.rule {
            Rule::Finite => all_finite,
            Rule::Stable { cap } => all_finite && g.iter().all(|&r| r <= cap),
            Rule::Band { tol } => all_finite && g.iter().all(|&r| r <= 1.0 + tol && r * (1.0 + tol) >= 1.0),
            Rule::Growth { min } => !g.is_empty() && g.iter().all(|&r| r >= min),
            Rule::AtMost { limit } => self.values.iter().all(|&v| v <= limit),
            Rule::AtLeast { limit } => self.values.iter().all(|&v| v >= limit),
            Rule::Relative { target, tol } => self.values.iter().all(|&v| (v - target).abs() <= tol * target.abs()),
            Rule::Info => true,
        }
    }
}

/// Result of one experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub experiment: String,
    pub kind: String,
    pub params: BTreeMap<String, String>,
    pub series: Vec<Series>,
    #[serde(serialize_with = "float_map")]
    pub fitted: BTreeMap<String, f64>,
    /// The probed case lies outside the estimate's hypotheses.
    pub outside_hypothesis: bool,
}

impl ProbeReport {
    pub fn new(experiment: impl Into<String>, kind: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            kind: kind.into(),
            params: BTreeMap::new(),
            series: Vec::new(),
            fitted: BTreeMap::new(),
            outside_hypothesis: false,
        }
    }

    pub fn param(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn push(&mut self, series: Series) -> &mut Self {
        self.series.push(series);
        self
    }

    pub fn fit(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.fitted.insert(key.into(), value);
        self
    }

    /// Append every series of `other`, prefixing names with `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ProbeReport) -> &mut Self {
        for mut s in other.series {
            s.name = format!("{prefix}{}", s.name);
            self.series.push(s);
        }
        for (k, v) in other.fitted {
            self.fitted.insert(format!("{prefix}{k}"), v);
        }
        self.outside_hypothesis |= other.outside_hypothesis;
        self
    }

    pub fn failing(&self) -> impl Iterator<Item = &Series> {
        self.series.iter().filter(|s| !s.passes())
    }

    pub fn verdict(&self) -> Verdict {
        if self.outside_hypothesis {
            Verdict::OutsideHypothesis
        } else if self.series.iter().all(Series::passes) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// JSON has no infinities or NaN: such values are written as strings.
pub fn float_repr(v: f64) -> FloatRepr {
    if v.is_finite() {
        FloatRepr::Num(v)
    } else if v.is_nan() {
        FloatRepr::Text("nan")
    } else if v > 0.0 {
        FloatRepr::Text("inf")
    } else {
        FloatRepr::Text("-inf")
    }
}

#[derive(Serialize)]
#[serde(untagged)]
pub enum FloatRepr {
    Num(f64),
    Text(&'static str),
}

fn floats<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| float_repr(x)))
}

fn float_map<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(m.iter().map(|(k, &v)| (k, float_repr(v))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>, rule: Rule) -> Series {
        let levels = (0..values.len()).map(|k| k as f64).collect();
        Series::new("s", "q", levels, values, rule)
    }

    #[test]
    fn stability_and_growth_rules() {
        assert!(series(vec![1.0, 1.2, 1.3], Rule::Stable { cap: 1.25 }).passes());
        assert!(!series(vec![1.0, 1.3], Rule::Stable { cap: 1.25 }).passes());
        assert!(!series(vec![1.0, f64::INFINITY], Rule::Stable { cap: 1.25 }).passes());
        assert!(series(vec![1.0, 2.0, 4.1], Rule::Growth { min: 2.0 }).passes());
        assert!(!series(vec![1.0], Rule::Growth { min: 2.0 }).passes());
        assert!(series(vec![1.0, 0.95], Rule::Band { tol: 0.1 }).passes());
        assert!(!series(vec![1.0, 0.85], Rule::Band { tol: 0.1 }).passes());
        assert!(series(vec![0.0, 0.0], Rule::Stable { cap: 1.0 }).passes());
    }

    #[test]
    fn verdict_follows_series() {
        let mut r = ProbeReport::new("e", "k");
        r.push(series(vec![1.0, 1.0], Rule::Finite));
        assert_eq!(r.verdict(), Verdict::Pass);
        r.push(series(vec![2.0], Rule::AtMost { limit: 1.0 }));
        assert_eq!(r.verdict(), Verdict::Fail);
        r.outside_hypothesis = true;
        assert_eq!(r.verdict(), Verdict::OutsideHypothesis);
    }
}
