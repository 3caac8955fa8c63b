//! Number formatting shared by report tables.

/// Round half-up to two decimals and format, e.g. `39.539 → "39.54"`,
/// `0.125 → "0.13"`.
///
/// The value is first printed with 9 decimals so that binary representation
/// noise (0.125 stored as 0.12499999…) does not decide the rounding.
pub fn round2(value: f64) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let negative = value < 0.0;
    let text = format!("{:.9}", value.abs());
    let (int_part, frac) = text.split_once('.').expect("fixed-point format has a dot");
    let mut cents: u128 = int_part.parse::<u128>().expect("digits") * 100
        + frac[..2].parse::<u128>().expect("digits");
    if frac.as_bytes()[2] >= b'5' {
        cents += 1;
    }
    let sign = if negative && cents > 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", cents / 100, cents % 100)
}
