//! Plain-text numeric output shared by the CSV writers.

/// Formats a float with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Avoid emitting "-0" so that signed zeros do not break byte comparisons.
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}
