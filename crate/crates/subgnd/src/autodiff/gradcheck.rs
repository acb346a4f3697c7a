//! Central-difference gradient verification.

/// Probe half-width used throughout when nothing else is called for.
pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// Window shrink factor between refinement rungs.
const REFINE_FACTOR: f64 = 8.0;
/// How many times a disagreeing coordinate is retried at a smaller width.
const REFINE_STEPS: usize = 2;
/// Agreement below this needs no refinement.
const ACCEPT_REL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate where the worst error occurred.
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares the analytic gradient of a scalar function against central
/// differences, coordinate by coordinate.
///
/// `f` must be a pure function of `theta` (disable dropout). For each
/// sampled coordinate i the numeric derivative (f(θ+εe_i) − f(θ−εe_i)) /
/// (2ε) is compared with `analytic[i]` under a relative error whose
/// denominator is floored at 1e-6, so near-zero gradients are judged by
/// absolute difference instead of blowing up the ratio.
///
/// Piecewise-linear functions (relu, max pooling) need one extra care: a
/// central difference is only valid when `f` is smooth across the whole
/// window `[θᵢ−ε, θᵢ+ε]`. If a kink lies inside the window but not at θᵢ
/// itself, the two-sided slope blends the neighboring pieces even though
/// `f` is differentiable at θᵢ and the analytic value is exact. So a
/// coordinate that disagrees at width ε is retried at ε/8 and ε/64: a
/// kink artifact vanishes once the window clears the kink, while a wrong
/// gradient keeps disagreeing at every width. The smallest error over the
/// rungs is reported. A kink exactly at θᵢ still disagrees at every width
/// (central differences estimate the average of the one-sided slopes
/// there), which is the honest answer.
pub fn grad_check(
    f: &dyn Fn(&[f64]) -> f64,
    analytic: &[f64],
    theta: &[f64],
    eps: f64,
    coords: &[usize],
) -> GradCheckReport {
    assert_eq!(analytic.len(), theta.len(), "gradient/parameter length mismatch");
    assert!(eps > 0.0, "eps must be positive");
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = theta.to_vec();
    for &i in coords {
        assert!(i < theta.len(), "coordinate {i} out of range");
        let a = analytic[i];
        let mut best_rel = f64::INFINITY;
        let mut best_numeric = f64::NAN;
        let mut width = eps;
        for _ in 0..=REFINE_STEPS {
            probe[i] = theta[i] + width;
            let up = f(&probe);
            probe[i] = theta[i] - width;
            let down = f(&probe);
            probe[i] = theta[i];
            let numeric = (up - down) / (2.0 * width);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            let rel = (a - numeric).abs() / denom;
            if rel < best_rel {
                best_rel = rel;
                best_numeric = numeric;
            }
            if best_rel < ACCEPT_REL {
                break;
            }
            width /= REFINE_FACTOR;
        }
        if best_rel > report.max_rel_err {
            report.max_rel_err = best_rel;
            report.worst_coord = i;
            report.worst_analytic = a;
            report.worst_numeric = best_numeric;
        }
    }
    report
}
