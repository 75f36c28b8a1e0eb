//! One-vs-rest classification metrics over 3×3 confusion matrices.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::class::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.95996;

/// Rows are true classes, columns predicted classes, both in class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix3 {
    pub m: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneVsRest {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix3 {
    pub fn new(m: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { m }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ClassLabel, ClassLabel)>) -> Self {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn record(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.m[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.m.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.m[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.m[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.m.iter().map(|r| r[c]).sum()
    }

    pub fn one_vs_rest(&self, c: usize) -> OneVsRest {
        let tp = self.m[c][c];
        let fn_ = self.row_sum(c) - tp;
        let fp = self.col_sum(c) - tp;
        OneVsRest {
            tp,
            fn_,
            fp,
            tn: self.total() - tp - fn_ - fp,
        }
    }

    /// `trace / N`, in percent.
    pub fn micro_accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }

    /// Relabel classes: class `c` becomes `perm[c]`.
    pub fn permuted(&self, perm: [usize; NUM_CLASSES]) -> Self {
        let mut out = Self::default();
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                out.m[perm[i]][perm[j]] = self.m[i][j];
            }
        }
        out
    }
}

impl std::ops::Add for ConfusionMatrix3 {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        for i in 0..NUM_CLASSES {
            for j in 0..NUM_CLASSES {
                self.m[i][j] += rhs.m[i][j];
            }
        }
        self
    }
}

pub fn sum_confusions(list: &[ConfusionMatrix3]) -> Result<ConfusionMatrix3> {
    if list.is_empty() {
        return Err(Error::Empty("no confusion matrices to sum".into()));
    }
    Ok(list.iter().fold(ConfusionMatrix3::default(), |acc, m| acc + *m))
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn f1(tpr: Option<f64>, ppv: Option<f64>) -> Option<f64> {
    match (tpr, ppv) {
        (Some(r), Some(p)) if r + p > 0.0 => Some(2.0 * r * p / (r + p)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

/// Per-class values in percent; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub tpr: Option<f64>,
    pub ppv: Option<f64>,
    pub spec: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
}

pub fn per_class_metrics(cm: &ConfusionMatrix3, class: ClassLabel) -> ClassMetrics {
    let o = cm.one_vs_rest(class.index());
    let tpr = ratio(o.tp, o.tp + o.fn_);
    let ppv = ratio(o.tp, o.tp + o.fp);
    ClassMetrics {
        tpr,
        ppv,
        spec: ratio(o.tn, o.tn + o.fp),
        acc: ratio(o.tp + o.tn, cm.total()),
        f1: f1(tpr, ppv),
    }
}

/// Half-width of the normal-approximation interval `z·sqrt(p(1−p)/n)`, in
/// percent, for a proportion `p` in [0, 1].
pub fn confidence_interval(p: f64, n: u64, level: f64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let z = if (level - 0.95).abs() < 1e-12 {
        Z_95
    } else {
        Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
    };
    let p = p.clamp(0.0, 1.0);
    100.0 * z * (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample size behind each interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMode {
    /// Every interval uses the total evaluated count, as published tables do.
    #[default]
    PooledN,
    /// Per-class rates use their own denominators (class size for TPR, etc.).
    PerClassN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub ci95: Option<f64>,
}

impl MetricValue {
    fn new(value: Option<f64>, n: u64) -> Self {
        Self {
            value,
            ci95: value.filter(|_| n > 0).map(|v| confidence_interval(v / 100.0, n, 0.95)),
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.value, self.ci95) {
            (Some(v), Some(ci)) => write!(f, "{v:.2} ±{ci:.2}"),
            (Some(v), None) => write!(f, "{v:.2}"),
            _ => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub tpr: MetricValue,
    pub ppv: MetricValue,
    pub spec: MetricValue,
    pub acc: MetricValue,
    pub f1: MetricValue,
}

impl MetricRow {
    fn cells(&self) -> [MetricValue; 5] {
        [self.tpr, self.ppv, self.spec, self.acc, self.f1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: ClassLabel,
    #[serde(flatten)]
    pub metrics: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub confusion: ConfusionMatrix3,
    pub per_class: Vec<ClassRow>,
    /// Class means; F1 from the mean TPR and PPV.
    #[serde(rename = "macro")]
    pub macro_avg: MetricRow,
    /// Mean of the per-class F1 scores, for comparison.
    pub macro_f1_per_class_mean: MetricValue,
    /// `trace / N`, which differs from the macro one-vs-rest accuracy.
    pub micro_accuracy: MetricValue,
    pub ci_mode: CiMode,
    pub warnings: Vec<String>,
}

fn mean_defined(values: &[Option<f64>], what: &str, warnings: &mut Vec<String>) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.len() < values.len() {
        warnings.push(format!(
            "{what} undefined for {} class(es); excluded from the average",
            values.len() - defined.len()
        ));
    }
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Default report: macro averages with intervals at n = N.
pub fn macro_average(cm: &ConfusionMatrix3) -> MetricsReport {
    metrics_report(cm, CiMode::PooledN)
}

pub fn metrics_report(cm: &ConfusionMatrix3, mode: CiMode) -> MetricsReport {
    let n = cm.total();
    let mut warnings = Vec::new();
    let per: Vec<(ClassLabel, ClassMetrics)> = ClassLabel::ALL.iter().map(|&c| (c, per_class_metrics(cm, c))).collect();

    let per_class = per
        .iter()
        .map(|&(class, m)| {
            let o = cm.one_vs_rest(class.index());
            let ns = match mode {
                CiMode::PooledN => [n; 5],
                CiMode::PerClassN => [o.tp + o.fn_, o.tp + o.fp, o.tn + o.fp, n, o.tp + o.fn_ + o.fp],
            };
            ClassRow {
                class,
                metrics: MetricRow {
                    tpr: MetricValue::new(m.tpr, ns[0]),
                    ppv: MetricValue::new(m.ppv, ns[1]),
                    spec: MetricValue::new(m.spec, ns[2]),
                    acc: MetricValue::new(m.acc, ns[3]),
                    f1: MetricValue::new(m.f1, ns[4]),
                },
            }
        })
        .collect();

    let col = |f: fn(&ClassMetrics) -> Option<f64>| per.iter().map(|(_, m)| f(m)).collect::<Vec<_>>();
    let tpr = mean_defined(&col(|m| m.tpr), "TPR", &mut warnings);
    let ppv = mean_defined(&col(|m| m.ppv), "PPV", &mut warnings);
    let spec = mean_defined(&col(|m| m.spec), "SPEC", &mut warnings);
    let acc = mean_defined(&col(|m| m.acc), "ACC", &mut warnings);
    let f1_mean = mean_defined(&col(|m| m.f1), "F1", &mut warnings);
    for w in &warnings {
        log::warn!("{w}");
    }

    MetricsReport {
        n,
        confusion: *cm,
        per_class,
        macro_avg: MetricRow {
            tpr: MetricValue::new(tpr, n),
            ppv: MetricValue::new(ppv, n),
            spec: MetricValue::new(spec, n),
            acc: MetricValue::new(acc, n),
            f1: MetricValue::new(f1(tpr, ppv), n),
        },
        macro_f1_per_class_mean: MetricValue::new(f1_mean, n),
        micro_accuracy: MetricValue::new(cm.micro_accuracy(), n),
        ci_mode: mode,
        warnings,
    }
}

impl MetricsReport {
    /// Comma-separated table: one row per class plus the average, each cell
    /// formatted as `value ±ci`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,TPR (%),PPV (%),SPEC (%),ACC (%),F1 (%)\n");
        let mut line = |name: &str, row: &MetricRow| {
            let cells: Vec<String> = row.cells().iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        };
        for r in &self.per_class {
            line(r.class.name(), &r.metrics);
        }
        line("Average", &self.macro_avg);
        out.push_str(&format!("Micro accuracy,,,,{},\n", self.micro_accuracy));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_classifier() {
        let cm = ConfusionMatrix3::new([[10, 0, 0], [0, 10, 0], [0, 0, 10]]);
        for c in ClassLabel::ALL {
            let m = per_class_metrics(&cm, c);
            for v in [m.tpr, m.ppv, m.spec, m.acc, m.f1] {
                assert_eq!(v, Some(100.0));
            }
        }
        let r = macro_average(&ConfusionMatrix3::new([[1, 0, 0], [0, 1, 0], [0, 0, 1]]));
        for v in r.macro_avg.cells() {
            assert_eq!(v.value, Some(100.0));
            assert_eq!(v.ci95, Some(0.0));
        }
    }

    #[test]
    fn undefined_is_not_zero() {
        // Nothing is ever predicted as COVID-19 and no COVID-19 case exists.
        let cm = ConfusionMatrix3::new([[0, 0, 0], [0, 5, 1], [0, 2, 4]]);
        let m = per_class_metrics(&cm, ClassLabel::Covid19);
        assert_eq!(m.tpr, None);
        assert_eq!(m.ppv, None);
        assert_eq!(m.spec, Some(100.0));
        let r = macro_average(&cm);
        assert!(!r.warnings.is_empty());
        let tpr = r.macro_avg.tpr.value.unwrap();
        let expected = (500.0 / 6.0 + 400.0 / 6.0) / 2.0;
        assert!((tpr - expected).abs() < 1e-9);
    }

    #[test]
    fn sums() {
        let a = ConfusionMatrix3::new([[1, 2, 3], [4, 5, 6], [7, 8, 9]]);
        assert_eq!(sum_confusions(&[a]).unwrap(), a);
        let d = sum_confusions(&[a, a]).unwrap();
        assert_eq!(d.m[2][1], 16);
        assert!(sum_confusions(&[]).is_err());
    }

    #[test]
    fn csv_has_every_row() {
        let cm = ConfusionMatrix3::new([[216, 3, 0], [2, 1324, 15], [4, 50, 1291]]);
        let csv = macro_average(&cm).to_csv();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.contains("Average,97.78 ±0.54,97.43 ±0.58,98.48 ±0.45,98.30 ±0.47,97.61 ±0.56"));
    }

    #[test]
    fn non_default_level_uses_quantile() {
        let z99 = confidence_interval(0.5, 1, 0.99) / 100.0 / 0.5;
        assert!((z99 - 2.5758).abs() < 1e-3);
    }
}
