/// Leak constant giving lifetime `tau` at the given frame hop: `a = exp(-hop / tau)`.
///
/// `tau = 0` maps to `a = 0` and `tau = inf` to `a = 1`.
pub fn lifetime_to_leak(tau: f64, hop: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau.is_infinite() {
        1.0
    } else {
        (-hop / tau).exp()
    }
}

/// Inverse of [`lifetime_to_leak`]: `tau = -hop / ln(a)`.
pub fn leak_to_lifetime(a: f64, hop: f64) -> f64 {
    if a <= 0.0 {
        0.0
    } else if a >= 1.0 {
        f64::INFINITY
    } else {
        -hop / a.ln()
    }
}
