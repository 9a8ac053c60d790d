use std::f64::consts::{PI, TAU};

/// Wraps an angle into (-pi, pi].
pub fn wrap(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// Absolute wrapped difference `|wrap(b - a)|`.
pub fn abs_diff(a: f64, b: f64) -> f64 {
    wrap(b - a).abs()
}

pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

/// Heading of a horizontal direction vector.
pub fn heading(dir: &nalgebra::Vector2<f64>) -> f64 {
    dir.y.atan2(dir.x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap(TAU + 0.25) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn abs_diff_crosses_seam() {
        assert!((abs_diff(rad(170.0), rad(-170.0)) - rad(20.0)).abs() < 1e-12);
    }
}
