//! CSV output for accountant curves.

use std::io::Write;

use crate::error::{Error, Result};

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(Error::Config(format!(
            "need 0 < lo < hi and at least two points, got lo={lo} hi={hi} points={points}"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                let v = (a + (b - a) * i as f64 / (points - 1) as f64).exp();
                // Trim exp/ln round-off so decades print as 1e-6, not 9.99…e-7.
                format!("{v:.12e}").parse().expect("formatted float parses")
            }
        })
        .collect())
}

pub fn write_delta_curve(out: impl Write, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delta", "epsilon"])?;
    for (d, e) in rows {
        w.write_record([d.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_batch_curve(out: impl Write, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch_size", "epsilon"])?;
    for (b, e) in rows {
        w.write_record([b.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_both_ends() {
        let g = log_grid(1e-10, 1e-2, 9).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[8], 1e-2);
        assert!((g[0] - 1e-10).abs() < 1e-22);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn headers_are_written() {
        let mut buf = Vec::new();
        write_batch_curve(&mut buf, &[(1024, 2.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "batch_size,epsilon\n1024,2.5\n");
    }
}
