//! Plain-text output formats shared by the library and the CLI.

use std::io::{self, Write};

use serde::Serialize;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// Single-column sample CSV with header `x`.
pub fn write_samples_csv<W: Write>(out: &mut W, samples: &[f64]) -> io::Result<()> {
    writeln!(out, "x")?;
    for &x in samples {
        writeln!(out, "{}", fmt17(x))?;
    }
    Ok(())
}

pub fn samples_csv_string(samples: &[f64]) -> String {
    let mut buf = Vec::with_capacity(samples.len() * 24);
    write_samples_csv(&mut buf, samples).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}

/// JSON sidecar written next to a sample CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SampleSidecar<'a, C: Serialize> {
    pub model_hash: &'a str,
    pub seed: u64,
    pub sample_count: usize,
    pub certificate: &'a C,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_exactly() {
        for &x in &[0.1, 1.0 / 3.0, 2.0 * (1.0 - 2f64.powi(-30)), 1e-300, 12345.678] {
            let s = fmt17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt17(f64::INFINITY), "inf");
    }
}
