//! C-style `%.17g` formatting for the LIBSVM serializer.

use std::fmt;

/// Displays an `f64` like C's `printf("%.Pg", v)`.
pub struct GFormat {
    value: f64,
    precision: usize,
}

impl GFormat {
    pub fn new(value: f64, precision: usize) -> Self {
        Self {
            value,
            precision: precision.max(1),
        }
    }

    /// `%.17g`, enough digits for every `f64` to round-trip.
    pub fn g17(value: f64) -> Self {
        Self::new(value, 17)
    }
}

fn strip_fraction_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl fmt::Display for GFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value;
        let p = self.precision;
        if v.is_nan() {
            return f.write_str("nan");
        }
        if v.is_infinite() {
            return f.write_str(if v > 0.0 { "inf" } else { "-inf" });
        }
        if v == 0.0 {
            return f.write_str(if v.is_sign_negative() { "-0" } else { "0" });
        }

        // The exponent C uses to choose the style is the one of the rounded
        // e-style conversion, so take it from Rust's own e-formatting.
        let sci = format!("{:.*e}", p - 1, v);
        let (mantissa, exponent) = sci.split_once('e').expect("e-format always has an exponent");
        let exp: i32 = exponent.parse().expect("exponent is an integer");

        if exp < -4 || exp >= p as i32 {
            let mantissa = strip_fraction_zeros(mantissa);
            let sign = if exp < 0 { '-' } else { '+' };
            write!(f, "{mantissa}e{sign}{:02}", exp.abs())
        } else {
            let decimals = (p as i32 - 1 - exp) as usize;
            let fixed = format!("{:.*}", decimals, v);
            f.write_str(strip_fraction_zeros(&fixed))
        }
    }
}
