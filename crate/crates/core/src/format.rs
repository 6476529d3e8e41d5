//! Plain-text artifact formats: `%.17g` numbers, CSV tables, coordinate triplets.

use std::fmt::Write as _;

/// Formats like C's `printf("%.17g", v)`.
pub fn fmt_g17(v: f64) -> String {
    fmt_g(v, 17)
}

/// Formats like C's `%.{precision}g`.
pub fn fmt_g(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return if v.is_sign_negative() { "-nan".into() } else { "nan".into() };
    }
    if v.is_infinite() {
        return if v < 0.0 { "-inf".into() } else { "inf".into() };
    }
    let p = precision.max(1);
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Exponent after rounding to p significant digits.
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Renders a CSV table with a header line and `%.17g` cells.
pub fn csv_table(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = String::with_capacity(1024);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt_g17).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Coordinate triplets `row col value`, 0-based, one nonzero per line.
pub fn triplets(entries: impl IntoIterator<Item = (usize, usize, f64)>) -> String {
    let mut out = String::new();
    for (i, j, v) in entries {
        writeln!(out, "{i} {j} {}", fmt_g17(v)).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g17() {
        // Reference strings from printf("%.17g").
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (123456789.0, "123456789"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (0.0001, "0.0001"),
            (4.730040744862704, "4.7300407448627038"),
            (f64::MAX, "1.7976931348623157e+308"),
            (5e-324, "4.9406564584124654e-324"),
        ];
        for (v, expect) in cases {
            assert_eq!(fmt_g17(v), expect, "{v}");
        }
    }

    #[test]
    fn round_trips_exactly() {
        for v in [std::f64::consts::PI, 1.0 / 3.0, -7.123e-200, 6.02e23] {
            assert_eq!(fmt_g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_layout() {
        let s = csv_table("a,b", vec![vec![1.0, 0.5]]);
        assert_eq!(s, "a,b\n1,0.5\n");
    }
}
