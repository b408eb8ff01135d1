//! Structure priors: Canny topology maps, Gray-Topology-Topology state
//! construction, and the structural-channel consistency analysis.
//!
//! Training pairs carry the reference image's topology in both the target
//! and the condition, so the structure channels are a fixed point of the
//! reverse process. At test time the condition carries the degraded image's
//! topology and the sampler is expected to reproduce it.

mod canny;
mod theorem;

pub use canny::{extract_topology, EdgeExtractorConfig, EdgeMap};
pub use theorem::{
    estimate_consistency_bound, run_structural_dynamics, structural_decay_factor, verify_consistency_theorem, BoundEstimate, BoundSample,
    TheoremConfig, TheoremReport, TheoremRow,
};

use crate::error::Result;
use crate::grid::{AugmentedState, ImageGrid};
use crate::sde::SdeSchedule;

/// `x̃₀ = [x₀, C(x₀), C(x₀)]` and `μ̃ = [y₀, C(x₀), C(x₀)]`.
pub fn make_training_pair(
    x0: &ImageGrid,
    y0: &ImageGrid,
    cfg: &EdgeExtractorConfig,
) -> Result<(AugmentedState, AugmentedState)> {
    x0.ensure_same_shape(y0, "training pair")?;
    let topo = extract_topology(x0, cfg)?;
    Ok((AugmentedState::new(x0, topo.grid())?, AugmentedState::new(y0, topo.grid())?))
}

/// `[y₀, C(y₀), C(y₀)]`.
pub fn make_test_state(y0: &ImageGrid, cfg: &EdgeExtractorConfig) -> Result<AugmentedState> {
    let topo = extract_topology(y0, cfg)?;
    AugmentedState::new(y0, topo.grid())
}

/// `‖s*ᵢ₋₁ − s_gt‖₂` for one optimal reverse step of a structure channel
/// whose clean value and condition mean are both `s_gt`. The initial-value
/// term multiplies `(s_gt − s_gt)` and vanishes identically.
pub fn structural_fixed_point_check(s_i: &ImageGrid, s_gt: &ImageGrid, sched: &SdeSchedule, t: usize) -> Result<f64> {
    s_i.ensure_same_shape(s_gt, "structural fixed point")?;
    let c = sched.reverse_coefficients(t)?;
    let next = s_i.zip_map(s_gt, |s, g| c.state * (s - g) + c.initial * (g - g) + g)?;
    next.l2_distance(s_gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{build_schedule, ThetaProfile};

    fn disk(n: usize, r0: f64, level: f64) -> ImageGrid {
        ImageGrid::from_fn(n, n, |r, c| {
            if ((r as f64 - 12.0).powi(2) + (c as f64 - 15.0).powi(2)).sqrt() < r0 { level } else { 0.35 }
        })
    }

    #[test]
    fn degenerate_pair_is_identical() {
        let x = disk(32, 6.0, 0.75);
        let (a, b) = make_training_pair(&x, &x, &EdgeExtractorConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pair_shares_reference_topology() {
        let cfg = EdgeExtractorConfig::default();
        let (x, y) = (disk(32, 6.0, 0.75), disk(32, 4.0, 0.45));
        let (a, b) = make_training_pair(&x, &y, &cfg).unwrap();
        assert_eq!(a.structure_channels(), b.structure_channels());
        assert_ne!(a.image_channel(), b.image_channel());
        assert_eq!(a.structure_mean(), extract_topology(&x, &cfg).unwrap().into_grid());
        assert!(make_training_pair(&x, &ImageGrid::zeros(16, 16, 1), &cfg).is_err());
    }

    #[test]
    fn test_state_uses_degraded_topology() {
        let cfg = EdgeExtractorConfig::default();
        let flat = make_test_state(&ImageGrid::filled(16, 16, 1, 0.3), &cfg).unwrap();
        assert!(flat.structure_channels().data().iter().all(|&v| v == 0.0));
        let y = disk(32, 5.0, 0.45);
        let st = make_test_state(&y, &cfg).unwrap();
        let e = extract_topology(&y, &cfg).unwrap();
        assert_eq!(st.grid().channel(1), e.grid().data());
        assert_eq!(st.grid().channel(2), e.grid().data());
    }

    #[test]
    fn fixed_point_and_contraction() {
        let s = build_schedule(100, 10.0, ThetaProfile::CosineFlipped, 0.005, 0.2).unwrap();
        let gt = disk(16, 4.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let delta = ImageGrid::from_fn(16, 16, |r, c| 0.01 * ((r + c) % 3) as f64);
        let perturbed = gt.zip_map(&delta, |a, b| a + b).unwrap();
        for t in 1..=100 {
            assert_eq!(structural_fixed_point_check(&gt, &gt, &s, t).unwrap(), 0.0);
            let res = structural_fixed_point_check(&perturbed, &gt, &s, t).unwrap();
            let coef = s.reverse_coefficients(t).unwrap().state;
            assert!((res - coef.abs() * delta.l2_norm()).abs() < 1e-12);
            assert!(res <= delta.l2_norm());
        }
        assert_eq!(structural_fixed_point_check(&perturbed, &gt, &s, 1).unwrap(), 0.0);
    }
}
