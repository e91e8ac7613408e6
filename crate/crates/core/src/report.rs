//! Number formatting shared by CSV and text outputs.

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn sig(x: f64) -> String {
    sig_digits(x, 9)
}

pub fn sig_digits(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    let p = digits as i32;
    if exp < -5 || exp >= p {
        let s = format!("{:.*e}", digits - 1, x);
        let (mant, e) = s.split_once('e').unwrap();
        let mant = trim(mant);
        let e: i32 = e.parse().unwrap();
        format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    } else {
        let decimals = (p - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        // Rounding may have carried into a new leading digit.
        trim(&s).to_string()
    }
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
