use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::report::MetricsReport;
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

/// Differences smaller than this count as retained.
pub const RETAIN_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    pub improved: usize,
    pub retained: usize,
    pub regressed: usize,
}

impl ChangeCounts {
    pub fn from_deltas(deltas: &[f64]) -> Self {
        let mut c = ChangeCounts {
            improved: 0,
            retained: 0,
            regressed: 0,
        };
        for &d in deltas {
            if d.abs() < RETAIN_EPS {
                c.retained += 1;
            } else if d > 0.0 {
                c.improved += 1;
            } else {
                c.regressed += 1;
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.improved + self.retained + self.regressed
    }

    pub fn describe(&self) -> String {
        let n = self.total();
        format!(
            "improved {} out of {n}, retained {} out of {n}, regressed {} out of {n}",
            self.improved, self.retained, self.regressed
        )
    }
}

/// Paired per-user comparison on one metric. Positive deltas favour system A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub users: Vec<String>,
    pub deltas: Vec<f64>,
    pub counts: ChangeCounts,
    /// `None` when every delta is zero or no users are paired.
    pub wilcoxon: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub system_a: String,
    pub system_b: String,
    pub latency: MetricComparison,
    pub accuracy: MetricComparison,
}

fn compare_metric(
    metric: &str,
    a: &MetricsReport,
    b: &MetricsReport,
    delta: impl Fn(&super::UserReport, &super::UserReport) -> Option<f64>,
) -> Result<MetricComparison> {
    let mut users = Vec::new();
    let mut deltas = Vec::new();
    for (ua, ub) in a.users.iter().zip(&b.users) {
        if let Some(d) = delta(ua, ub) {
            users.push(ua.user_id.clone());
            deltas.push(d);
        }
    }
    let wilcoxon = if deltas.is_empty() {
        None
    } else {
        match wilcoxon_signed_rank(&deltas) {
            Ok(w) => Some(w),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(MetricComparison {
        metric: metric.into(),
        counts: ChangeCounts::from_deltas(&deltas),
        users,
        deltas,
        wilcoxon,
    })
}

/// Per-user paired comparison of A against B over the same users. Latency deltas are
/// `B - A` (A faster is positive), accuracy deltas are `A - B`.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison> {
    if a.users.is_empty() || b.users.is_empty() {
        return Err(Error::Data("both reports need per-user results".into()));
    }
    let ids = |r: &MetricsReport| r.users.iter().map(|u| u.user_id.clone()).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        return Err(Error::Data(format!(
            "user sets differ: {} has {:?}, {} has {:?}",
            a.system,
            ids(a),
            b.system,
            ids(b)
        )));
    }
    if a.corpus_seed != b.corpus_seed {
        return Err(Error::Data(format!(
            "reports come from different corpora (seeds {:?} and {:?})",
            a.corpus_seed, b.corpus_seed
        )));
    }
    Ok(Comparison {
        system_a: a.system.clone(),
        system_b: b.system.clone(),
        latency: compare_metric("median_latency_ms", a, b, |ua, ub| {
            Some((ub.median_latency_ms? - ua.median_latency_ms?) as f64)
        })?,
        accuracy: compare_metric("accuracy", a, b, |ua, ub| Some(ua.accuracy - ub.accuracy))?,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = format!("{} vs {}\n", self.system_a, self.system_b);
        for m in [&self.latency, &self.accuracy] {
            s.push_str(&format!("{}: {}\n", m.metric, m.counts.describe()));
            match &m.wilcoxon {
                Some(w) => s.push_str(&format!(
                    "  wilcoxon n={} W+={} W-={} p_greater={:.6} p_less={:.6} p_two_sided={:.6} ({})\n",
                    w.n,
                    w.w_plus,
                    w.w_minus,
                    w.p_greater,
                    w.p_less,
                    w.p_two_sided,
                    if w.exact { "exact" } else { "normal approximation" }
                )),
                None => s.push_str("  wilcoxon unavailable: no non-zero differences\n"),
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,user_id,delta\n");
        for m in [&self.latency, &self.accuracy] {
            for (u, d) in m.users.iter().zip(&m.deltas) {
                s.push_str(&format!("{},{u},{d}\n", m.metric));
            }
        }
        s
    }
}
