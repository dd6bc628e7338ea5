//! The twelve-period valuation schedule.
//!
//! Subjects meet six valuation pairs twice, the second cycle with the two
//! seats' types swapped, so every subject faces every (pair, peak)
//! combination exactly once per session.

use std::str::FromStr;

use thiserror::Error;

use crate::model::{outcome_report, PayoffParams, Valuation, DEFAULT_SUPPLY};
use crate::table::Table;

/// `period typeA typeB`, one line per period.
pub const STANDARD_SCHEDULE_TEXT: &str = "\
# period typeA typeB
1 3 4
2 15 16
3 16 4
4 3 13
5 5 17
6 9 11
7 4 3
8 16 15
9 4 16
10 13 3
11 17 5
12 11 9
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledPeriod {
    pub period: u32,
    pub valuation: Valuation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub periods: Vec<ScheduledPeriod>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("line {line}: expected `period typeA typeB`, got {found:?}")]
    Malformed { line: usize, found: String },
    #[error("line {line}: {source}")]
    Domain {
        line: usize,
        source: crate::model::DomainError,
    },
    #[error("schedule has no periods")]
    Empty,
    #[error("line {line}: period {period} is out of order")]
    OutOfOrder { line: usize, period: u32 },
}

impl Schedule {
    pub fn standard() -> Self {
        STANDARD_SCHEDULE_TEXT.parse().expect("embedded schedule is well formed")
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    /// Distinct valuations in first-appearance order, with seat order as first seen.
    pub fn distinct_valuations(&self) -> Vec<Valuation> {
        let mut out: Vec<Valuation> = Vec::new();
        for p in &self.periods {
            if !out.iter().any(|v| v.id == p.valuation.id) {
                out.push(p.valuation.clone());
            }
        }
        out
    }

    pub fn valuation(&self, id: u8) -> Option<&Valuation> {
        self.periods
            .iter()
            .map(|p| &p.valuation)
            .find(|v| v.id == Some(id))
    }
}

impl FromStr for Schedule {
    type Err = ScheduleError;

    /// Whitespace- or comma-separated columns; `#` starts a comment and a
    /// non-numeric first line is taken as a header. Valuation ids are
    /// assigned by first appearance of the unordered peak pair.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut periods = Vec::new();
        let mut seen: Vec<[u32; 2]> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|c| !c.is_empty())
                .collect();
            let nums: Option<Vec<u32>> = cols.iter().map(|c| c.parse().ok()).collect();
            let nums = match nums {
                Some(n) if n.len() == 3 => n,
                None if periods.is_empty() && seen.is_empty() && idx == first_content_line(text) => {
                    continue
                }
                _ => {
                    return Err(ScheduleError::Malformed {
                        line: line_no,
                        found: raw.to_string(),
                    })
                }
            };
            let (period, a, b) = (nums[0], nums[1], nums[2]);
            if let Some(prev) = periods.last().map(|p: &ScheduledPeriod| p.period) {
                if period <= prev {
                    return Err(ScheduleError::OutOfOrder {
                        line: line_no,
                        period,
                    });
                }
            }
            let key = [a.min(b), a.max(b)];
            let id = match seen.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    seen.push(key);
                    seen.len() - 1
                }
            };
            let valuation = Valuation::new(vec![a, b], DEFAULT_SUPPLY)
                .map_err(|source| ScheduleError::Domain {
                    line: line_no,
                    source,
                })?
                .with_id(id as u8 + 1);
            periods.push(ScheduledPeriod { period, valuation });
        }
        if periods.is_empty() {
            return Err(ScheduleError::Empty);
        }
        Ok(Schedule { periods })
    }
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| !l.split('#').next().unwrap_or("").trim().is_empty())
        .unwrap_or(0)
}

/// Per-period peaks, truthful Uniform allocation and payoffs.
pub fn schedule_table(schedule: &Schedule, params: &PayoffParams) -> Table {
    let mut t = Table::new(
        "Type assignments, allocations and payoffs under the Uniform outcome",
        "exact Uniform allocation of the peak profile",
        &["period", "valuation", "peak A", "peak B", "award A", "award B", "payoff A", "payoff B"],
    );
    for p in &schedule.periods {
        let v = &p.valuation;
        let r = outcome_report(&v.uniform(), v, params);
        let mut row = vec![p.period.to_string(), v.id.map_or("-".into(), |i| i.to_string())];
        row.extend(v.peaks.iter().map(u32::to_string));
        row.extend(r.allocation.amounts().iter().map(|a| a.to_string()));
        row.extend(r.payoffs.iter().map(|a| a.to_string()));
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schedule_has_twelve_periods_and_six_pairs() {
        let s = Schedule::standard();
        assert_eq!(s.len(), 12);
        let ids: Vec<u8> = s.periods.iter().map(|p| p.valuation.id.unwrap()).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6, 1, 2, 3, 4, 5, 6]);
        for i in 0..6 {
            assert_eq!(
                s.periods[i].valuation.peaks,
                s.periods[i + 6].valuation.swapped().peaks
            );
        }
        assert_eq!(s.distinct_valuations().len(), 6);
        assert_eq!(s.valuation(4).unwrap().peaks, vec![3, 13]);
    }

    #[test]
    fn accepts_csv_with_header() {
        let s: Schedule = "period,typeA,typeB\n1,3,4\n2,16,4\n".parse().unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.periods[1].valuation.id, Some(2));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            "1 3\n".parse::<Schedule>(),
            Err(ScheduleError::Malformed { .. })
        ));
        assert!(matches!(
            "1 3 40\n".parse::<Schedule>(),
            Err(ScheduleError::Domain { .. })
        ));
        assert!(matches!(
            "2 3 4\n1 3 4\n".parse::<Schedule>(),
            Err(ScheduleError::OutOfOrder { .. })
        ));
        assert_eq!("# nothing\n".parse::<Schedule>(), Err(ScheduleError::Empty));
    }
}
