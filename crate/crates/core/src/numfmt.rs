//! Fixed decimal rendering used by every CSV and JSON writer in the crate.
//!
//! Numbers are printed with 17 significant digits, which is enough for any
//! `f64` to parse back to the identical bit pattern. Moderate magnitudes are
//! written positionally (`0.024683971199460702`), very large or very small
//! ones in exponent form (`1.0000000000000000e-7`).

use serde::Serializer;
use serde_json::value::RawValue;

const SIG_DIGITS: usize = 17;

/// Render `x` with 17 significant digits.
///
/// Non-finite values render as `NaN`, `inf`, `-inf`; callers that emit JSON
/// must reject them first.
pub fn fmt17(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let exp: i32 = sci.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..17).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(1) as usize;
        format!("{:.*}", decimals, x)
    } else {
        sci
    }
}

pub(crate) fn serialize_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::Error;
    use serde::Serialize;
    if !x.is_finite() {
        return Err(S::Error::custom(format!("non-finite number {x} cannot be written as JSON")));
    }
    RawValue::from_string(fmt17(*x)).map_err(S::Error::custom)?.serialize(s)
}

pub(crate) fn serialize_opt_f64<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => serialize_f64(v, s),
        None => s.serialize_none(),
    }
}

/// Wrapper that serializes an `f64` with [`fmt17`].
#[derive(Debug, Clone, Copy)]
pub struct Fixed17(pub f64);

impl serde::Serialize for Fixed17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_f64(&self.0, s)
    }
}
