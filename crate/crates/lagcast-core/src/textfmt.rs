//! Decimal formatting shared by fit serializers and CSV writers.

/// Render with 17 significant digits — enough to round-trip any finite
/// `f64` exactly through parsing.
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
