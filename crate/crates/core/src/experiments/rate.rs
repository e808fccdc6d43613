use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;

/// Consecutive-pair error ratios `(v^{h₁} − ref)/(v^{h₂} − ref)` with the
/// finer step first (`h₁ < h₂`), next to the `h^{1/4}` and `h^{1/2}` models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub h1: f64,
    pub h2: f64,
    pub value_h1: f64,
    pub value_h2: f64,
    pub reference: f64,
    /// `None` when `|v^{h₂} − ref|` is below the floor.
    pub error_ratio: Option<f64>,
    pub theory_quarter: f64,
    pub theory_half: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

impl RateTable {
    /// Rows whose ratio is defined and exceeds `(h₁/h₂)^{1/4} + slack`.
    pub fn violations(&self, slack: f64) -> Vec<&RateRow> {
        self.rows
            .iter()
            .filter(|r| matches!(r.error_ratio, Some(q) if q > r.theory_quarter + slack))
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use super::output::format_float;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "h1",
            "h2",
            "value_h1",
            "value_h2",
            "reference",
            "error_ratio",
            "theory_quarter",
            "theory_half",
        ])?;
        for r in &self.rows {
            out.write_record([
                format_float(r.h1),
                format_float(r.h2),
                format_float(r.value_h1),
                format_float(r.value_h2),
                format_float(r.reference),
                r.error_ratio.map(format_float).unwrap_or_default(),
                format_float(r.theory_quarter),
                format_float(r.theory_half),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Builds the rate table from `(h, value)` pairs. Repeated `h` values (e.g.
/// several seeds) are averaged first.
pub fn rate_analysis(values: &[(f64, f64)], reference: f64, ref_floor: f64) -> Result<RateTable> {
    if values.iter().any(|(h, v)| !(*h > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("rate analysis needs h > 0 and finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let h = sorted[i].0;
        let mut sum = CompensatedSum::default();
        let mut k = 0usize;
        while i < sorted.len() && sorted[i].0 == h {
            sum.add(sorted[i].1);
            k += 1;
            i += 1;
        }
        points.push((h, sum.value() / k as f64));
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 distinct step sizes, got {}",
            points.len()
        )));
    }
    let rows = points
        .windows(2)
        .map(|w| {
            let ((h1, v1), (h2, v2)) = (w[0], w[1]);
            let denom = v2 - reference;
            let q = h1 / h2;
            RateRow {
                h1,
                h2,
                value_h1: v1,
                value_h2: v2,
                reference,
                error_ratio: (denom.abs() >= ref_floor).then(|| (v1 - reference) / denom),
                theory_quarter: q.powf(0.25),
                theory_half: q.sqrt(),
            }
        })
        .collect();
    Ok(RateTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_errors_give_step_ratios() {
        let pts: Vec<(f64, f64)> = [5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|n| (1.0 / n, 0.5 + 0.2 / n))
            .collect();
        let t = rate_analysis(&pts, 0.5, 1e-12).unwrap();
        assert_eq!(t.rows.len(), 3);
        for r in &t.rows {
            assert!(r.h1 < r.h2);
            assert!((r.error_ratio.unwrap() - r.h1 / r.h2).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_power_errors_recover_theory() {
        let pts: Vec<(f64, f64)> = [3.0, 7.0, 15.0]
            .iter()
            .map(|n: &f64| (1.0 / n, 1.0 - 0.3 * (1.0 / n).powf(0.25)))
            .collect();
        let t = rate_analysis(&pts, 1.0, 1e-12).unwrap();
        for r in &t.rows {
            assert!((r.error_ratio.unwrap() - r.theory_quarter).abs() < 1e-12);
        }
        assert!(t.violations(1e-12).is_empty());
    }

    #[test]
    fn floor_marks_ratio_undefined() {
        let t = rate_analysis(&[(0.1, 1.0), (0.2, 0.5)], 0.5, 1e-9).unwrap();
        assert_eq!(t.rows[0].error_ratio, None);
    }

    #[test]
    fn repeated_steps_are_averaged() {
        let t = rate_analysis(&[(0.1, 1.0), (0.1, 3.0), (0.2, 5.0)], 0.0, 0.0).unwrap();
        assert_eq!(t.rows[0].value_h1, 2.0);
        assert!((t.rows[0].error_ratio.unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(rate_analysis(&[(0.1, 1.0)], 0.0, 0.0), Err(Error::InsufficientData(_))));
        assert!(matches!(
            rate_analysis(&[(0.1, 1.0), (0.1, 2.0)], 0.0, 0.0),
            Err(Error::InsufficientData(_))
        ));
    }
}
