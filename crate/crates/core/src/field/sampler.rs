use core::f64::consts::{PI, TAU};

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FieldError;
use crate::camera::{wrap_two_pi, PoseParams};

/// Ranges for synthetic poses. Angles in radians, depth in normalized model
/// units (longest bounding-box edge = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSamplerConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub elevation_rad: (f64, f64),
    pub theta_sigma_rad: f64,
    pub theta_clip_rad: f64,
    pub depth: (f64, f64),
    pub focal_px: (f64, f64),
    /// Width of the centered region (as a fraction of the frame) from which
    /// the principal point is drawn.
    pub principal_fraction: f64,
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        PoseSamplerConfig {
            image_width: 512,
            image_height: 512,
            elevation_rad: (-10.0 * PI / 180.0, 60.0 * PI / 180.0),
            theta_sigma_rad: 5.0 * PI / 180.0,
            theta_clip_rad: 15.0 * PI / 180.0,
            depth: (3.0, 30.0),
            focal_px: (500.0, 3000.0),
            principal_fraction: 0.5,
        }
    }
}

impl PoseSamplerConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        let finite = [
            self.elevation_rad.0,
            self.elevation_rad.1,
            self.theta_sigma_rad,
            self.theta_clip_rad,
            self.depth.0,
            self.depth.1,
            self.focal_px.0,
            self.focal_px.1,
            self.principal_fraction,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::BadConfig("non-finite value"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(FieldError::BadConfig("image size must be positive"));
        }
        if self.elevation_rad.0 > self.elevation_rad.1 {
            return Err(FieldError::BadConfig("inverted elevation range"));
        }
        if self.depth.0 > self.depth.1 {
            return Err(FieldError::BadConfig("inverted depth range"));
        }
        if self.focal_px.0 > self.focal_px.1 {
            return Err(FieldError::BadConfig("inverted focal range"));
        }
        if !(self.depth.0 > 0.0 && self.focal_px.0 > 0.0) {
            return Err(FieldError::BadConfig("depth and focal ranges must be positive"));
        }
        if self.theta_sigma_rad < 0.0 || self.theta_clip_rad < 0.0 {
            return Err(FieldError::BadConfig("negative in-plane spread"));
        }
        if !(0.0..=1.0).contains(&self.principal_fraction) {
            return Err(FieldError::BadConfig("principal fraction outside [0, 1]"));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, clip: f64) -> f64 {
    if sigma == 0.0 || clip == 0.0 {
        return 0.0;
    }
    loop {
        let x: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
        if x.abs() <= clip {
            return x;
        }
    }
}

/// Draws one pose: azimuth uniform on `[0, 2pi)`, elevation uniform, in-plane
/// rotation truncated-normal, depth and focal length log-uniform, principal
/// point uniform inside the centered fraction of the frame.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, config: &PoseSamplerConfig) -> Result<PoseParams, FieldError> {
    config.validate()?;
    let azimuth = wrap_two_pi(rng.random::<f64>() * TAU);
    let elevation = uniform(rng, config.elevation_rad);
    let theta = truncated_normal(rng, config.theta_sigma_rad, config.theta_clip_rad);
    let depth = log_uniform(rng, config.depth);
    let focal = log_uniform(rng, config.focal_px);
    let half = 0.5 * config.principal_fraction;
    let (w, h) = (config.image_width as f64, config.image_height as f64);
    let u = w * (0.5 + uniform(rng, (-half, half)));
    let v = h * (0.5 + uniform(rng, (-half, half)));
    PoseParams::new(azimuth, elevation, theta, depth, focal, u, v)
        .map_err(|_| FieldError::BadConfig("sampled pose violates pose invariants"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_width_ranges_are_constant() {
        let cfg = PoseSamplerConfig {
            elevation_rad: (0.2, 0.2),
            theta_sigma_rad: 0.0,
            depth: (7.0, 7.0),
            focal_px: (900.0, 900.0),
            principal_fraction: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = sample_pose(&mut rng, &cfg).unwrap();
            assert_eq!(
                (p.elevation_rad, p.theta_rad, p.depth, p.focal_px, p.principal_u_px, p.principal_v_px),
                (0.2, 0.0, 7.0, 900.0, 256.0, 256.0)
            );
        }
    }

    #[test]
    fn inverted_ranges_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [
            PoseSamplerConfig { depth: (5.0, 3.0), ..Default::default() },
            PoseSamplerConfig { focal_px: (5.0, 3.0), ..Default::default() },
            PoseSamplerConfig { elevation_rad: (0.5, 0.1), ..Default::default() },
            PoseSamplerConfig { depth: (0.0, 3.0), ..Default::default() },
        ] {
            assert!(matches!(sample_pose(&mut rng, &cfg), Err(FieldError::BadConfig(_))));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = PoseSamplerConfig::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_pose(&mut rng, &cfg).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn ranges_are_respected() {
        let cfg = PoseSamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = sample_pose(&mut rng, &cfg).unwrap();
            assert!((cfg.elevation_rad.0..=cfg.elevation_rad.1).contains(&p.elevation_rad));
            assert!(p.theta_rad.abs() <= cfg.theta_clip_rad);
            assert!((3.0..=30.0).contains(&p.depth));
            assert!((500.0..=3000.0).contains(&p.focal_px));
            assert!((128.0..=384.0).contains(&p.principal_u_px));
            assert!((128.0..=384.0).contains(&p.principal_v_px));
        }
    }

    fn azimuth_bins(seed: u64, n: usize) -> [usize; 36] {
        let cfg = PoseSamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bins = [0usize; 36];
        for _ in 0..n {
            let p = sample_pose(&mut rng, &cfg).unwrap();
            bins[((p.azimuth_rad / TAU) * 36.0) as usize] += 1;
        }
        bins
    }

    #[test]
    fn azimuth_passes_chi_square() {
        let n = 100_000;
        let expected = n as f64 / 36.0;
        let chi2: f64 = azimuth_bins(4, n).iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 35 degrees of freedom, 99.9% quantile ~ 66.6
        assert!(chi2 < 66.6, "chi2 {chi2}");
    }

    #[test]
    fn azimuth_bins_within_three_percent() {
        // a 3% per-bin band is ~5 sigma at 1e6 draws (only ~1.6 sigma at 1e5)
        let n = 1_000_000;
        let expected = n as f64 / 36.0;
        for c in azimuth_bins(4, n) {
            assert!((c as f64 - expected).abs() / expected < 0.03, "bin {c}");
        }
    }
}
