/// Fixed 17-significant-digit scientific formatting. Round-trips exactly
/// through `str::parse::<f64>`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}
