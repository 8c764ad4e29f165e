use super::EstimateTrajectory;
use crate::error::{Error, Result};
use crate::geometry::Displacement;

/// Decayed L1 training loss over the original view and its recovered crop
/// views: `sum_k gamma^(K-k-1) * sum_views |D_k - D_gt|_1`.
///
/// `trajectories[0]` is the original view; every trajectory must have the
/// same length `K`.
pub fn compute_croptta_loss(
    trajectories: &[EstimateTrajectory],
    gt: &Displacement,
    gamma: f64,
) -> Result<f64> {
    let first = trajectories
        .first()
        .ok_or(Error::EmptyList("trajectories"))?;
    let k_total = first.len();
    if let Some(bad) = trajectories.iter().find(|t| t.len() != k_total) {
        return Err(Error::LengthMismatch {
            expected: k_total,
            actual: bad.len(),
        });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma {gamma} outside (0, 1]"
        )));
    }
    let mut loss = 0.0;
    for k in 0..k_total {
        let weight = gamma.powi((k_total - k - 1) as i32);
        let step: f64 = trajectories
            .iter()
            .map(|t| (t.per_iteration[k] - *gt).l1())
            .sum();
        loss += weight * step;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(ds: &[Displacement]) -> EstimateTrajectory {
        EstimateTrajectory::new(ds.to_vec()).unwrap()
    }

    #[test]
    fn zero_when_exact() {
        let gt = Displacement::constant(2.0, -1.0);
        let t = vec![traj(&[gt, gt]), traj(&[gt, gt])];
        assert_eq!(compute_croptta_loss(&t, &gt, 0.85).unwrap(), 0.0);
    }

    #[test]
    fn unit_deviation() {
        let gt = Displacement::ZERO;
        let t = vec![traj(&[Displacement::constant(1.0, 1.0)])];
        assert_eq!(compute_croptta_loss(&t, &gt, 0.85).unwrap(), 8.0);
    }

    #[test]
    fn hand_expanded_two_steps() {
        // K = 2: 0.85 * (|a0| + |b0|) + 1 * (|a1| + |b1|)
        let gt = Displacement::ZERO;
        let mut a0 = Displacement::ZERO;
        a0.0[0][0] = 2.0; // |a0| = 2
        let a1 = Displacement::constant(0.5, 0.0); // |a1| = 2
        let mut b0 = Displacement::ZERO;
        b0.0[1][3] = -4.0; // |b0| = 4
        let b1 = Displacement::ZERO;
        let t = vec![traj(&[a0, a1]), traj(&[b0, b1])];
        let expect = 0.85 * (2.0 + 4.0) + (2.0 + 0.0);
        assert!((compute_croptta_loss(&t, &gt, 0.85).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        let gt = Displacement::ZERO;
        let t = vec![traj(&[gt, gt]), traj(&[gt])];
        assert!(matches!(
            compute_croptta_loss(&t, &gt, 0.85),
            Err(Error::LengthMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }
}
