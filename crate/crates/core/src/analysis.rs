//! Corpus statistics: least-squares fits, Kendall's τ-b, correlation labels and
//! Simpson's-paradox detection across model subgroups.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Real};

/// Default `|τ|` a subgroup trend needs before it counts as evidence.
pub const DEFAULT_SIMPSON_STRENGTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    pub r2: T,
    pub rmse: T,
}

/// Ordinary least squares `y ≈ slope·x + intercept`. `r2` is the squared
/// Pearson correlation (0 when `y` is constant).
pub fn linear_fit<T: Real>(x: &[T], y: &[T]) -> Result<LinearFit<T>> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, have: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in regression input".into()));
    }
    let n = T::from_usize_lossy(x.len());
    let mx = compensated_sum(x.iter().copied()) / n;
    let my = compensated_sum(y.iter().copied()) / n;
    let sxx = compensated_sum(x.iter().map(|&v| (v - mx) * (v - mx)));
    let syy = compensated_sum(y.iter().map(|&v| (v - my) * (v - my)));
    let sxy = compensated_sum(x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)));
    if sxx == T::zero() {
        return Err(Error::DegenerateFit("x is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > T::zero() { (sxy * sxy / (sxx * syy)).min(T::one()) } else { T::zero() };
    let sse = compensated_sum(x.iter().zip(y).map(|(&a, &b)| {
        let r = b - (slope * a + intercept);
        r * r
    }));
    Ok(LinearFit { slope, intercept, r2, rmse: (sse / n).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauB {
    pub tau: f64,
    /// Set when either variable is entirely tied and τ is reported as 0.
    pub all_tied: bool,
}

fn cmp_total<T: PartialOrd>(a: &T, b: &T) -> Result<Ordering> {
    a.partial_cmp(b).ok_or_else(|| Error::Domain("unordered value (NaN) in rank correlation".into()))
}

fn tie_pairs(run_lengths: impl Iterator<Item = usize>) -> u64 {
    run_lengths.map(|t| (t as u64) * (t as u64).saturating_sub(1) / 2).sum()
}

fn runs<'a, T>(v: &'a [T], same: impl Fn(&T, &T) -> bool + 'a) -> impl Iterator<Item = usize> + 'a {
    v.chunk_by(same).map(|c| c.len())
}

/// Counts strict inversions of `v` while merge-sorting it in place.
fn merge_count<T: PartialOrd + Copy>(v: &mut [T], buf: &mut Vec<T>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's τ-b with tie correction, computed in `O(n log n)` by Knight's
/// merge-sort algorithm.
pub fn kendall_tau<T: PartialOrd + Copy>(x: &[T], y: &[T]) -> Result<TauB> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    for v in x.iter().chain(y) {
        cmp_total(v, v)?;
    }
    let mut pairs: Vec<(T, T)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("checked").then_with(|| a.1.partial_cmp(&b.1).expect("checked")));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = tie_pairs(runs(&pairs, |a, b| a.0 == b.0));
    let n3 = tie_pairs(runs(&pairs, |a, b| a.0 == b.0 && a.1 == b.1));
    let mut ys: Vec<T> = pairs.iter().map(|p| p.1).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tie_pairs(runs(&ys, |a, b| a == b));

    if n1 == n0 || n2 == n0 {
        return Ok(TauB { tau: 0.0, all_tied: true });
    }
    let numer = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denom = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Ok(TauB { tau: (numer / denom).clamp(-1.0, 1.0), all_tied: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationLabel {
    Strong,
    Modest,
    Weak,
    None,
}

impl fmt::Display for CorrelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Strength label from `R²` and `|τ|`.
pub fn classify_correlation(r2: f64, tau: f64) -> CorrelationLabel {
    if tau.abs() < 0.05 {
        CorrelationLabel::None
    } else if r2 >= 0.6 {
        CorrelationLabel::Strong
    } else if r2 >= 0.25 {
        CorrelationLabel::Modest
    } else {
        CorrelationLabel::Weak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    TestAcc,
    TrainAcc,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::TestAcc => "test_acc",
            Target::TrainAcc => "train_acc",
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test_acc" => Ok(Target::TestAcc),
            "train_acc" => Ok(Target::TrainAcc),
            other => Err(Error::Usage(format!("unknown target {other:?} (expected test_acc or train_acc)"))),
        }
    }
}

/// One model's metrics and accuracies, as used by corpus statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub subgroup: String,
    pub metrics: BTreeMap<String, f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

impl ModelRecord {
    pub fn target(&self, target: Target) -> Option<f64> {
        match target {
            Target::TestAcc => self.test_acc,
            Target::TrainAcc => self.train_acc,
        }
    }

    /// `(metric, target)` if both are present and finite.
    pub fn point(&self, metric: &str, target: Target) -> Option<(f64, f64)> {
        let x = *self.metrics.get(metric)?;
        let y = self.target(target)?;
        (x.is_finite() && y.is_finite()).then_some((x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationStats {
    pub r2: f64,
    pub rmse: f64,
    pub kendall_tau: f64,
    pub slope: f64,
    pub intercept: f64,
    pub label: CorrelationLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: usize,
    /// Absent when the group is too small or its metric is constant.
    pub stats: Option<CorrelationStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl GroupStats {
    fn from_points(points: &[(f64, f64)]) -> Self {
        let n = points.len();
        let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        let fit = linear_fit(&x, &y).and_then(|fit| Ok((fit, kendall_tau(&x, &y)?)));
        match fit {
            Ok((fit, tau)) => Self {
                n,
                stats: Some(CorrelationStats {
                    r2: fit.r2,
                    rmse: fit.rmse,
                    kendall_tau: tau.tau,
                    slope: fit.slope,
                    intercept: fit.intercept,
                    label: classify_correlation(fit.r2, tau.tau),
                }),
                note: tau.all_tied.then(|| "all values tied; tau reported as 0".to_string()),
            },
            Err(e) => Self { n, stats: None, note: Some(e.to_string()) },
        }
    }

    pub fn tau(&self) -> Option<f64> {
        self.stats.as_ref().map(|s| s.kendall_tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpsonVerdict {
    pub flagged: bool,
    pub aggregate_sign: i8,
    pub subgroup_signs: BTreeMap<String, i8>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub target: Target,
    pub per_subgroup: BTreeMap<String, GroupStats>,
    pub aggregate: GroupStats,
    pub simpson: SimpsonVerdict,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Usable `(metric, target)` points per subgroup, ordered by model id.
fn grouped_points(records: &[ModelRecord], metric: &str, target: Target) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut sorted: Vec<&ModelRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in sorted {
        if let Some(p) = r.point(metric, target) {
            groups.entry(r.subgroup.clone()).or_default().push(p);
        }
    }
    groups
}

/// Per-subgroup and aggregate statistics of `metric` against `target`.
pub fn subgroup_report(
    records: &[ModelRecord],
    metric: &str,
    target: Target,
    strength: f64,
) -> Result<CorrelationReport> {
    let groups = grouped_points(records, metric, target);
    if groups.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all: Vec<(f64, f64)> = groups.values().flatten().copied().collect();
    let per_subgroup = groups.iter().map(|(g, pts)| (g.clone(), GroupStats::from_points(pts))).collect();
    let mut report = CorrelationReport {
        metric: metric.to_string(),
        target,
        per_subgroup,
        aggregate: GroupStats::from_points(&all),
        simpson: SimpsonVerdict {
            flagged: false,
            aggregate_sign: 0,
            subgroup_signs: BTreeMap::new(),
            evidence: Vec::new(),
        },
    };
    report.simpson = detect_simpson(&report, strength);
    Ok(report)
}

/// Flags a trend reversal: at least two subgroups with `|τ| ≥ strength` that
/// all share one sign, while the aggregate `τ` has the opposite sign with
/// `|τ| ≥ strength`.
pub fn detect_simpson(report: &CorrelationReport, strength: f64) -> SimpsonVerdict {
    let agg_tau = report.aggregate.tau().unwrap_or(0.0);
    let aggregate_sign = sign(agg_tau);
    let mut subgroup_signs = BTreeMap::new();
    let mut evidence = Vec::new();
    for (g, stats) in &report.per_subgroup {
        if let Some(tau) = stats.tau() {
            subgroup_signs.insert(g.clone(), sign(tau));
            if tau.abs() >= strength && tau != 0.0 {
                evidence.push(g.clone());
            }
        }
    }
    let evidence_sign = evidence.first().map(|g| subgroup_signs[g]);
    let unanimous = evidence.iter().all(|g| Some(subgroup_signs[g]) == evidence_sign);
    let flagged = evidence.len() >= 2
        && unanimous
        && agg_tau.abs() >= strength
        && aggregate_sign != 0
        && evidence_sign == Some(-aggregate_sign);
    SimpsonVerdict { flagged, aggregate_sign, subgroup_signs, evidence }
}

/// Scatter-plot data, one CSV per subgroup with columns `<metric>,<target>`.
pub fn plot_csvs(records: &[ModelRecord], metric: &str, target: Target) -> BTreeMap<String, String> {
    grouped_points(records, metric, target)
        .into_iter()
        .map(|(g, pts)| {
            let mut csv = format!("{metric},{}\n", target.name());
            for (x, y) in pts {
                csv.push_str(&format!("{x},{y}\n"));
            }
            (g, csv)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert_eq!((f.slope, f.intercept, f.r2, f.rmse), (2.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn constant_y_has_zero_r2() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(f.r2, 0.0);
        assert_eq!(f.slope, 0.0);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(linear_fit(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData { .. })));
        assert!(matches!(linear_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn tau_perfect_orders() {
        assert_eq!(kendall_tau(&[1, 2, 3], &[1, 2, 3]).unwrap().tau, 1.0);
        assert_eq!(kendall_tau(&[1, 2, 3], &[3, 2, 1]).unwrap().tau, -1.0);
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn tau_all_tied_is_zero_with_flag() {
        let t = kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t, TauB { tau: 0.0, all_tied: true });
    }

    #[test]
    fn tau_with_ties_matches_known_value() {
        // C = 4, D = 0, one tie in x, one in y: 4 / sqrt(5 * 5)
        let t = kendall_tau(&[1, 2, 2, 3], &[1, 3, 2, 3]).unwrap();
        assert!((t.tau - 0.8).abs() < 1e-12, "{}", t.tau);
    }

    #[test]
    fn tau_rejects_nan() {
        assert!(kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn table_labels() {
        use CorrelationLabel::*;
        assert_eq!(classify_correlation(0.803, 0.788), Strong);
        assert_eq!(classify_correlation(0.405, 0.394), Modest);
        assert_eq!(classify_correlation(0.162, 0.29), Weak);
        assert_eq!(classify_correlation(0.113, 0.0327), None);
    }

    fn rec(id: &str, g: &str, x: f64, y: f64) -> ModelRecord {
        ModelRecord {
            model_id: id.into(),
            subgroup: g.into(),
            metrics: [("m".to_string(), x)].into(),
            train_acc: None,
            test_acc: Some(y),
        }
    }

    #[test]
    fn small_groups_have_no_stats() {
        let rs = vec![rec("a", "g0", 1.0, 1.0), rec("b", "g0", 2.0, 2.0), rec("c", "g1", 3.0, 2.5)];
        let r = subgroup_report(&rs, "m", Target::TestAcc, 0.1).unwrap();
        assert_eq!(r.per_subgroup["g0"].n, 2);
        assert!(r.per_subgroup["g0"].stats.is_none());
        assert_eq!(r.aggregate.n, 3);
        assert!(r.aggregate.stats.is_some());
        assert!(!r.simpson.flagged);
    }

    #[test]
    fn missing_targets_are_skipped() {
        let mut rs = vec![rec("a", "g", 1.0, 1.0)];
        rs[0].test_acc = None;
        assert!(matches!(subgroup_report(&rs, "m", Target::TestAcc, 0.1), Err(Error::EmptyCorpus)));
        assert!(matches!(subgroup_report(&rs, "other", Target::TrainAcc, 0.1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn mixed_evidence_is_not_flagged() {
        let mut rs = Vec::new();
        for i in 0..5 {
            let x = i as f64;
            rs.push(rec(&format!("a{i}"), "up", x, x));
            rs.push(rec(&format!("b{i}"), "down", x + 10.0, -x));
        }
        let r = subgroup_report(&rs, "m", Target::TestAcc, 0.1).unwrap();
        assert_eq!(r.simpson.evidence.len(), 2);
        assert!(!r.simpson.flagged);
    }

    #[test]
    fn plot_csv_layout() {
        let rs = vec![rec("a", "g0", 1.0, 0.5), rec("b", "g1", 2.0, 0.25)];
        let csvs = plot_csvs(&rs, "m", Target::TestAcc);
        assert_eq!(csvs["g0"], "m,test_acc\n1,0.5\n");
        assert_eq!(csvs.len(), 2);
    }
}
