//! Text formatting shared by every exported file.

/// Scientific notation with 17 significant digits; parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
