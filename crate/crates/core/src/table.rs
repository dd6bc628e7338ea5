//! Minimal tabular output shared by the analysis emitters.

use std::fmt::Write as _;

use num_rational::Ratio;

/// Output encoding for emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?} (expected csv or markdown)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    /// How the numbers were obtained; printed above every rendering.
    pub oracle: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(title: impl Into<String>, oracle: impl Into<String>, headers: &[&str]) -> Self {
        Self {
            title: title.into(),
            oracle: oracle.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.to_markdown(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n# oracle: {}\n", self.title, self.oracle);
        for n in &self.notes {
            let _ = writeln!(out, "# note: {n}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn to_markdown(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain(std::iter::once(self.headers[c].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut out = format!("### {}\n\n_oracle: {}_\n\n", self.title, self.oracle);
        out.push_str(&line(&self.headers));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&line(&rule));
        for r in &self.rows {
            out.push_str(&line(r));
        }
        for n in &self.notes {
            let _ = write!(out, "\n> {n}\n");
        }
        out
    }
}

/// Exact fraction next to its rounding, e.g. `241/441 (0.546)`.
pub fn frac_cell(r: Ratio<i64>, decimals: usize) -> String {
    format!("{} ({})", r, round(r, decimals))
}

pub fn round(r: Ratio<i64>, decimals: usize) -> String {
    format!("{:.*}", decimals, to_f64(r))
}

pub fn to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `{0,...,10}` style rendering of an integer set, with runs collapsed.
pub fn set_cell<I: IntoIterator<Item = u32>>(items: I) -> String {
    let v: Vec<u32> = items.into_iter().collect();
    if v.is_empty() {
        return "{}".to_string();
    }
    let mut parts = Vec::new();
    let mut start = v[0];
    let mut prev = v[0];
    for &x in &v[1..] {
        if x != prev + 1 {
            parts.push(run(start, prev));
            start = x;
        }
        prev = x;
    }
    parts.push(run(start, prev));
    format!("{{{}}}", parts.join(","))
}

fn run(a: u32, b: u32) -> String {
    match b - a {
        0 => a.to_string(),
        1 => format!("{a},{b}"),
        _ => format!("{a},...,{b}"),
    }
}
