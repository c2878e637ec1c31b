//! Text formatting shared by the CSV writers.

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
