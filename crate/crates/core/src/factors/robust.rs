/// Default Huber threshold for whitened 2-D reprojection errors.
pub const HUBER_DELTA: f64 = 2.45;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    None,
    Huber,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustKernel {
    pub kind: KernelKind,
    pub delta: f64,
}

impl RobustKernel {
    pub const NONE: RobustKernel = RobustKernel { kind: KernelKind::None, delta: 1.0 };

    pub fn huber(delta: f64) -> Self {
        assert!(delta > 0.0, "huber threshold must be positive");
        RobustKernel { kind: KernelKind::Huber, delta }
    }

    /// `ρ(s)` of a squared error `s`.
    pub fn cost(&self, e_sq: f64) -> f64 {
        match self.kind {
            KernelKind::None => e_sq,
            KernelKind::Huber => {
                let n = e_sq.sqrt();
                if n <= self.delta {
                    e_sq
                } else {
                    2.0 * self.delta * n - self.delta * self.delta
                }
            }
        }
    }
}

impl Default for RobustKernel {
    fn default() -> Self {
        RobustKernel::huber(HUBER_DELTA)
    }
}

/// IRLS weight for a squared error.
pub fn robust_weight(e_sq: f64, kernel: &RobustKernel) -> f64 {
    match kernel.kind {
        KernelKind::None => 1.0,
        KernelKind::Huber => {
            let n = e_sq.sqrt();
            if n <= kernel.delta {
                1.0
            } else {
                kernel.delta / n
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(robust_weight(123.0, &RobustKernel::NONE), 1.0);
        assert_eq!(robust_weight(1.0, &RobustKernel::huber(2.0)), 1.0);
        assert_eq!(robust_weight(16.0, &RobustKernel::huber(2.0)), 0.5);
    }

    #[test]
    fn cost_is_continuous_at_threshold() {
        let k = RobustKernel::huber(2.0);
        assert!((k.cost(4.0 - 1e-12) - k.cost(4.0 + 1e-12)).abs() < 1e-10);
        assert_eq!(k.cost(16.0), 2.0 * 2.0 * 4.0 - 4.0);
    }
}
