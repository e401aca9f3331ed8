/// Compositing stops once the remaining transmittance drops below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;

/// Front-to-back compositing of `(color, opacity)` pairs sorted by depth.
///
/// Returns accumulated color `C = sum c_i a_i T_i` and opacity
/// `A = sum a_i T_i` with `T_i = prod_{j<i} (1 - a_j)`. The primitive that
/// pushes transmittance below [`TRANSMITTANCE_EPS`] is the last one used.
pub fn composite_pixel(sorted: &[([f64; 3], f64)]) -> ([f64; 3], f64) {
    let mut color = [0.0; 3];
    let mut alpha = 0.0;
    let mut t = 1.0;
    for (c, a) in sorted {
        let w = a * t;
        for ch in 0..3 {
            color[ch] += c[ch] * w;
        }
        alpha += w;
        t *= 1.0 - a;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
    (color, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opaque_singleton() {
        let (c, a) = composite_pixel(&[([0.2, 0.4, 0.6], 1.0)]);
        assert_eq!(c, [0.2, 0.4, 0.6]);
        assert_eq!(a, 1.0);
    }

    #[test]
    fn empty_stack_is_background() {
        assert_eq!(composite_pixel(&[]), ([0.0; 3], 0.0));
    }

    #[test]
    fn two_half_transparent_layers() {
        let (c, a) = composite_pixel(&[([1.0; 3], 0.5), ([0.0; 3], 0.5)]);
        assert_eq!(c, [0.5; 3]);
        assert_eq!(a, 0.75);
    }

    #[test]
    fn transparent_layers_change_nothing() {
        let base = [([0.3, 0.1, 0.9], 0.4), ([0.8, 0.8, 0.2], 0.7)];
        let with_clear = [base[0], ([0.5, 0.5, 0.5], 0.0), base[1], ([1.0, 0.0, 0.0], 0.0)];
        assert_eq!(composite_pixel(&base), composite_pixel(&with_clear));
    }

    #[test]
    fn order_matters_for_unequal_opacities() {
        let a = ([1.0, 0.0, 0.0], 0.3);
        let b = ([0.0, 0.0, 1.0], 0.8);
        assert_ne!(composite_pixel(&[a, b]).0, composite_pixel(&[b, a]).0);
    }
}
