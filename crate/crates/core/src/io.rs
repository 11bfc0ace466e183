//! Fixed-format number output shared by all text artifacts.

/// Formats like C's `%.16e`, e.g. `1.0000000000000000e+00`.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.16e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// Joins already formatted fields into a CSV line.
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = String::new();
    for (k, f) in fields.into_iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        out.push_str(f.as_ref());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn c_style_exponent() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e+00");
        assert_eq!(fmt_f64(-0.375), "-3.7500000000000000e-01");
        assert_eq!(fmt_f64(-(2f64.powi(-40))), "-9.0949470177292824e-13");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e+00");
        assert_eq!(fmt_f64(2f64.powi(1000)), "1.0715086071862673e+301");
    }

    proptest! {
        #[test]
        fn formatted_values_parse_back_exactly(v in proptest::num::f64::NORMAL) {
            let back: f64 = fmt_f64(v).parse().unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
