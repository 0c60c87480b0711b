//! Per-file metric rows and their aggregate.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub file: String,
    pub ssnr: f64,
    pub stoi: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn mean_ssnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssnr))
    }

    pub fn mean_stoi(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.stoi))
    }

    /// Aligned plain-text table with a trailing mean row.
    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.file.chars().count())
            .chain(["file".len(), "mean".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>7}", "file", "ssnr_db", "stoi");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>8.3}  {:>7.4}", r.file, r.ssnr, r.stoi);
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>7.4}",
            "mean",
            self.mean_ssnr(),
            self.mean_stoi()
        );
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_aligned() {
        let r = MetricReport {
            rows: vec![
                MetricRow {
                    file: "a.wav".into(),
                    ssnr: 35.0,
                    stoi: 1.0,
                },
                MetricRow {
                    file: "longer_name.wav".into(),
                    ssnr: 5.0,
                    stoi: 0.5,
                },
            ],
        };
        let t = r.table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()));
        assert!(lines[3].starts_with("mean"));
        assert_eq!(r.mean_ssnr(), 20.0);
        assert_eq!(r.mean_stoi(), 0.75);
    }
}
