//! CSV conventions shared by every exporter: header row, comma separator,
//! LF line endings and reals printed with 17 significant digits.

use std::io::Write;

pub fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Format a real with 17 significant digits (round-trips every `f64`).
pub fn real(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for x in [0.0, -1.0, 1.0 / 3.0, 8.0 / 9.0, 1e-300, 6.02e23] {
            let s = real(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(real(0.5), "5.0000000000000000e-1");
        assert_eq!(real(f64::INFINITY), "inf");
    }
}
