//! Text formatting shared by every file the crate writes.

/// Scientific notation with 17 significant digits, enough to round-trip any
/// `f64` exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_f64(0.5), "5.0000000000000000e-1");
    }
}
