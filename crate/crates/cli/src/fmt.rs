//! Number formatting for results files.
//!
//! All CSV floats use 6 significant digits with trailing zeros trimmed,
//! switching to scientific notation outside [1e-4, 1e6). Same shape as C's
//! %.6g, so the files stay compact and diff cleanly across runs.

/// 6-significant-digit decimal form of `x`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // Round to 6 significant digits first; the exponent decides the form.
    let sci = format!("{:.5e}", x);
    let epos = sci.find('e').expect("{:e} always carries an exponent");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent is an integer");
    if !(-4..6).contains(&exp) {
        let mantissa = sci[..epos].trim_end_matches('0').trim_end_matches('.');
        format!("{}e{}", mantissa, exp)
    } else {
        let decimals = (5 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_covers_fixed_and_scientific_ranges() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(0.5), "0.5");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1234.5678), "1234.57");
        assert_eq!(sig6(-0.07), "-0.07");
        assert_eq!(sig6(2.5e-4), "0.00025");
        assert_eq!(sig6(1e-5), "1e-5");
        assert_eq!(sig6(123456789.0), "1.23457e8");
        assert_eq!(sig6(0.9921875), "0.992188");
    }

    #[test]
    fn sig6_promotes_to_scientific_when_rounding_crosses_a_decade() {
        // 999999.6 rounds to 1e6 at 6 digits, which leaves the fixed range.
        assert_eq!(sig6(999999.6), "1e6");
        assert_eq!(sig6(0.999999951), "1");
    }

    #[test]
    fn sig6_round_trips_through_parse_at_its_own_precision() {
        for &x in &[0.125, 3.0e-3, 2.30259, 0.09765625, 784.0, 1.0 / 3.0] {
            let back: f64 = sig6(x).parse().unwrap();
            assert!(
                ((back - x) / x).abs() < 1e-5,
                "{} printed as {} parsed back {}",
                x,
                sig6(x),
                back
            );
        }
    }
}
