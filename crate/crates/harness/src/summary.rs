//! Across-seed aggregation of final metrics and the ordering checks built
//! on it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{Algorithm, SweepVariable};
use crate::metrics::{read_csv_file, MetricsRow};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    /// Standard error of the difference of two independent means.
    pub fn joint_se(self, other: Stat) -> f64 {
        self.se.hypot(other.se)
    }

    /// `self` below `other` by more than one joint standard error.
    pub fn clearly_below(self, other: Stat) -> bool {
        other.mean - self.mean > self.joint_se(other)
    }

    /// `self` at most `other` plus one joint standard error.
    pub fn not_above(self, other: Stat) -> bool {
        self.mean <= other.mean + self.joint_se(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub sweep_value: Option<f64>,
    pub failed: usize,
    pub transmission: Stat,
    pub computation: Stat,
    pub weighted: Stat,
    pub reward: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub claim: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub sweep_var: Option<SweepVariable>,
    pub rows: Vec<SummaryRow>,
    pub verdicts: Vec<Verdict>,
}

type Key = (Algorithm, Option<u64>);

fn key(algorithm: Algorithm, value: Option<f64>) -> Key {
    (algorithm, value.map(f64::to_bits))
}

/// The closing row of every successful replica, and the number of failed
/// replicas per (algorithm, sweep value).
fn final_rows(rows: &[MetricsRow]) -> (BTreeMap<Key, Vec<&MetricsRow>>, BTreeMap<Key, usize>) {
    let mut last: BTreeMap<(Key, u64), &MetricsRow> = BTreeMap::new();
    for r in rows {
        let k = (key(r.algorithm, r.sweep_value), r.seed);
        let later = last.get(&k).is_none_or(|prev| r.epoch >= prev.epoch);
        if later {
            last.insert(k, r);
        }
    }
    let mut finals: BTreeMap<Key, Vec<&MetricsRow>> = BTreeMap::new();
    let mut failed: BTreeMap<Key, usize> = BTreeMap::new();
    for ((k, _), r) in last {
        if r.status.is_final() {
            finals.entry(k).or_default().push(r);
        } else {
            *failed.entry(k).or_default() += 1;
            finals.entry(k).or_default();
        }
    }
    (finals, failed)
}

pub fn summarize(rows: &[MetricsRow]) -> Result<Summary> {
    let sweep_var = rows.first().and_then(|r| r.sweep_var);
    if let Some(r) = rows.iter().find(|r| r.sweep_var != sweep_var) {
        return Err(Error::Metrics(format!(
            "mixed sweep variables: {:?} and {:?}",
            sweep_var.map(|v| v.as_str()),
            r.sweep_var.map(|v| v.as_str())
        )));
    }
    let (finals, failed) = final_rows(rows);
    let mut out: Vec<SummaryRow> = finals
        .iter()
        .map(|(&(algorithm, bits), rs)| {
            let col = |f: fn(&MetricsRow) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                algorithm,
                sweep_value: bits.map(f64::from_bits),
                failed: failed.get(&(algorithm, bits)).copied().unwrap_or(0),
                transmission: col(|r| r.transmission_cost),
                computation: col(|r| r.computation_cost),
                weighted: col(|r| r.weighted_cost),
                reward: col(|r| r.mean_reward),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        a.algorithm.cmp(&b.algorithm).then(
            a.sweep_value
                .partial_cmp(&b.sweep_value)
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    let mut summary = Summary {
        sweep_var,
        rows: out,
        verdicts: Vec::new(),
    };
    summary.verdicts = verdicts(&summary);
    Ok(summary)
}

pub fn summarize_files(paths: &[impl AsRef<Path>]) -> Result<Summary> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_csv_file(p.as_ref())?);
    }
    summarize(&rows)
}

impl Summary {
    pub fn get(&self, algorithm: Algorithm, sweep_value: Option<f64>) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.sweep_value == sweep_value)
    }

    /// Sweep values in ascending order.
    pub fn sweep_values(&self) -> Vec<Option<f64>> {
        let mut v: Vec<Option<f64>> = self.rows.iter().map(|r| r.sweep_value).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v.dedup();
        v
    }

    /// Rows of one algorithm in ascending sweep order.
    pub fn series(&self, algorithm: Algorithm) -> Vec<&SummaryRow> {
        self.sweep_values()
            .into_iter()
            .filter_map(|v| self.get(algorithm, v))
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let var = self.sweep_var.map_or("-", |v| v.as_str());
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>4} {:>4} {:>24} {:>24} {:>24}",
            "algo", var, "n", "fail", "transmission (se)", "computation (se)", "weighted (se)"
        );
        for r in &self.rows {
            let v = r.sweep_value.map_or("-".to_string(), |v| format!("{v}"));
            let st = |x: Stat| format!("{:.5e} ({:.1e})", x.mean, x.se);
            let _ = writeln!(
                s,
                "{:<8} {:>12} {:>4} {:>4} {:>24} {:>24} {:>24}",
                r.algorithm.as_str(),
                v,
                r.weighted.n,
                r.failed,
                st(r.transmission),
                st(r.computation),
                st(r.weighted)
            );
        }
        for v in &self.verdicts {
            let _ = writeln!(s, "[{}] {}", if v.holds { "holds" } else { "fails" }, v.claim);
        }
        s
    }
}

fn verdicts(s: &Summary) -> Vec<Verdict> {
    let mut out = Vec::new();
    let label = |v: Option<f64>| match (s.sweep_var, v) {
        (Some(var), Some(v)) => format!(" at {var}={v}"),
        _ => String::new(),
    };
    let present = |r: &&SummaryRow| r.weighted.n > 0;
    for v in s.sweep_values() {
        let at = |a| s.get(a, v).filter(present);
        for (lo, hi) in [(Algorithm::Ptdfc, Algorithm::Dfc), (Algorithm::Dfc, Algorithm::Dfnc)] {
            if let (Some(a), Some(b)) = (at(lo), at(hi)) {
                out.push(Verdict {
                    claim: format!(
                        "{lo} weighted cost below {hi} by more than one standard error{}",
                        label(v)
                    ),
                    holds: a.weighted.clearly_below(b.weighted),
                });
            }
        }
        if let Some(p) = at(Algorithm::Ptdfc) {
            for h in [Algorithm::MruLru, Algorithm::MfuLfu] {
                if let Some(hr) = at(h) {
                    out.push(Verdict {
                        claim: format!("{h} weighted cost above ptdfc{}", label(v)),
                        holds: hr.weighted.mean > p.weighted.mean,
                    });
                }
            }
        }
    }
    if s.sweep_values().len() < 2 {
        return out;
    }
    let non_increasing =
        |series: &[&SummaryRow], f: fn(&SummaryRow) -> Stat| series.windows(2).all(|w| f(w[1]).not_above(f(w[0])));
    match s.sweep_var {
        Some(SweepVariable::CacheBits) => {
            for a in [Algorithm::Ptdfc, Algorithm::Dfc] {
                let series: Vec<_> = s.series(a).into_iter().filter(present).collect();
                if series.len() > 1 {
                    out.push(Verdict {
                        claim: format!("{a} transmission cost non-increasing in cache size"),
                        holds: non_increasing(&series, |r| r.transmission),
                    });
                }
            }
            let dfnc: Vec<_> = s.series(Algorithm::Dfnc).into_iter().filter(present).collect();
            if dfnc.len() > 1 {
                out.push(Verdict {
                    claim: "dfnc cost identical for every cache size".into(),
                    holds: dfnc.windows(2).all(|w| {
                        w[0].weighted.mean == w[1].weighted.mean && w[0].transmission.mean == w[1].transmission.mean
                    }),
                });
            }
        }
        Some(SweepVariable::SlotSeconds) => {
            for a in Algorithm::ALL {
                let series: Vec<_> = s.series(a).into_iter().filter(present).collect();
                if series.len() > 1 {
                    out.push(Verdict {
                        claim: format!("{a} weighted cost non-increasing in the deadline"),
                        holds: non_increasing(&series, |r| r.weighted),
                    });
                }
            }
        }
        None => {}
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Status;

    fn row(a: Algorithm, v: f64, seed: u64, epoch: u64, w: f64, status: Status) -> MetricsRow {
        MetricsRow {
            algorithm: a,
            sweep_var: Some(SweepVariable::CacheBits),
            sweep_value: Some(v),
            seed,
            epoch,
            mean_reward: -w * 1e-6,
            transmission_cost: w * 0.6,
            computation_cost: w * 0.4,
            weighted_cost: w,
            status,
        }
    }

    #[test]
    fn stat_basics() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[5.0]).se, 0.0);
        let a = Stat {
            mean: 1.0,
            se: 0.3,
            n: 5,
        };
        let b = Stat {
            mean: 1.6,
            se: 0.4,
            n: 5,
        };
        assert!(a.clearly_below(b));
        assert!(!a.clearly_below(Stat { mean: 1.4, ..b }));
        assert!(Stat { mean: 1.4, ..b }.not_above(a));
    }

    #[test]
    fn single_row_is_echoed() {
        let r = row(Algorithm::Dfc, 1e4, 1, 20, 3.0e6, Status::Converged);
        let s = summarize(std::slice::from_ref(&r)).unwrap();
        assert_eq!(s.rows.len(), 1);
        let got = &s.rows[0];
        assert_eq!((got.weighted.mean, got.weighted.se), (3.0e6, 0.0));
        assert_eq!(got.transmission.mean, r.transmission_cost);
    }

    #[test]
    fn uses_last_epoch_and_counts_failures() {
        let rows = vec![
            row(Algorithm::Ptdfc, 1e4, 1, 10, 9.0, Status::Ok),
            row(Algorithm::Ptdfc, 1e4, 1, 20, 5.0, Status::Budget),
            row(Algorithm::Ptdfc, 1e4, 2, 10, 7.0, Status::Converged),
            row(Algorithm::Ptdfc, 1e4, 3, 10, f64::NAN, Status::Failed("nan".into())),
        ];
        let s = summarize(&rows).unwrap();
        let r = s.get(Algorithm::Ptdfc, Some(1e4)).unwrap();
        assert_eq!((r.weighted.mean, r.weighted.n, r.failed), (6.0, 2, 1));
    }

    #[test]
    fn mixed_sweep_variables_rejected() {
        let mut b = row(Algorithm::Dfc, 0.02, 1, 0, 1.0, Status::Final);
        b.sweep_var = Some(SweepVariable::SlotSeconds);
        assert!(summarize(&[row(Algorithm::Dfc, 1e4, 1, 0, 1.0, Status::Final), b]).is_err());
    }

    #[test]
    fn ordering_verdicts() {
        let mut rows = Vec::new();
        for seed in 0..5 {
            let j = seed as f64 * 0.01;
            for v in [1e4, 2e4] {
                rows.push(row(
                    Algorithm::Ptdfc,
                    v,
                    seed,
                    10,
                    1.0 + j - v * 1e-5,
                    Status::Converged,
                ));
                rows.push(row(Algorithm::Dfc, v, seed, 10, 2.0 + j - v * 1e-5, Status::Converged));
                rows.push(row(Algorithm::Dfnc, v, seed, 10, 3.0 + j, Status::Converged));
                rows.push(row(Algorithm::MruLru, v, seed, 0, 2.5, Status::Final));
            }
        }
        let s = summarize(&rows).unwrap();
        assert!(!s.verdicts.is_empty());
        for v in &s.verdicts {
            assert!(v.holds, "{}", v.claim);
        }
        assert!(s.render().contains("[holds] dfnc cost identical"));
    }
}
