//! Built-in environments.

use serde::{Deserialize, Serialize};

use crate::env::config::EnvDocument;
use crate::env::{MarkovArmSpec, RewardNoise, SegmentedEnvironment};
use crate::error::{Error, Result};

const MARKOV_PRESET: &str = include_str!("../../presets/appendix-c.json");

pub const PRESET_NAMES: [&str; 2] = ["appendix-c", "one-state"];

/// The default reward-mean grid of the rotation environment.
pub const ROTATION_GRID: [f64; 3] = [0.2, 0.5, 0.8];

/// Parameters of the Bernoulli rotation environment: arm `k` in segment `i`
/// (both 1-based) has mean `grid[(i + k + 1) mod G]`. With the default grid
/// that is 0.2, 0.5, 0.8 for `(i + k) mod 3 = 2, 0, 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationParams {
    pub num_arms: usize,
    pub num_segments: usize,
    pub horizon: u64,
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub noise: RewardNoise,
}

fn default_grid() -> Vec<f64> {
    ROTATION_GRID.to_vec()
}

impl Default for RotationParams {
    fn default() -> Self {
        Self {
            num_arms: 3,
            num_segments: 5,
            horizon: 20_000,
            grid: default_grid(),
            noise: RewardNoise::Bernoulli,
        }
    }
}

/// Rotation means `[segment][arm]`.
pub fn rotation_means(num_arms: usize, num_segments: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    let g = grid.len();
    (1..=num_segments)
        .map(|i| (1..=num_arms).map(|k| grid[(i + k + 1) % g]).collect())
        .collect()
}

/// One-state arms with rotating means and equally spaced change points.
pub fn rotation_environment(p: &RotationParams) -> Result<SegmentedEnvironment> {
    if p.grid.is_empty() {
        return Err(Error::InvalidEnvironment("mean grid is empty".into()));
    }
    if p.num_arms == 0 || p.num_segments == 0 {
        return Err(Error::InvalidEnvironment("need at least one arm and one segment".into()));
    }
    let specs = rotation_means(p.num_arms, p.num_segments, &p.grid)
        .into_iter()
        .map(|seg| seg.into_iter().map(MarkovArmSpec::one_state).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    SegmentedEnvironment::with_equal_spacing(specs, p.horizon, p.noise)
}

/// The bundled three-arm, three-state, five-segment Markov environment.
pub fn markov_preset_document() -> EnvDocument {
    EnvDocument::parse(MARKOV_PRESET).expect("bundled preset parses")
}

/// Builds a preset with its default horizon (20000).
pub fn build_preset(name: &str) -> Result<SegmentedEnvironment> {
    build_preset_with_horizon(name, None)
}

/// Builds a preset, optionally overriding its horizon. Change points stay
/// equally spaced.
pub fn build_preset_with_horizon(name: &str, horizon: Option<u64>) -> Result<SegmentedEnvironment> {
    match name {
        "appendix-c" => {
            let mut doc = markov_preset_document();
            if let Some(t) = horizon {
                doc.horizon = t;
                doc.change_points = None;
            }
            Ok(doc.validate()?.env)
        }
        "one-state" => {
            let mut p = RotationParams::default();
            if let Some(t) = horizon {
                p.horizon = t;
            }
            rotation_environment(&p)
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_preset_tables() {
        let env = build_preset("appendix-c").unwrap();
        assert_eq!((env.num_segments(), env.num_arms(), env.horizon()), (5, 3, 20_000));
        assert_eq!(
            env.spec(0, 0).transition(),
            &[vec![0.50, 0.50, 0.00], vec![0.17, 0.66, 0.17], vec![0.00, 0.50, 0.50]]
        );
        assert_eq!(env.spec(1, 2).reward_means(), &[0.37325, 0.24685, 0.06446]);
        assert_eq!(env.spec(4, 1).reward_means(), &[0.87041, 0.82968, 0.08825]);
        assert_eq!(env.change_points(), &[0, 4000, 8000, 12000, 16000, 20000]);
    }

    #[test]
    fn markov_preset_steady_state_means_rotate() {
        let env = build_preset("appendix-c").unwrap();
        let expected = rotation_means(3, 5, &ROTATION_GRID);
        for (i, row) in expected.iter().enumerate() {
            for (k, m) in row.iter().enumerate() {
                assert!((env.arm_means(i)[k] - m).abs() < 5e-4, "segment {i} arm {k}");
            }
        }
    }

    #[test]
    fn rotation_rule() {
        let means = rotation_means(3, 5, &ROTATION_GRID);
        assert_eq!(means[0], vec![0.2, 0.5, 0.8]);
        assert_eq!(means[1], vec![0.5, 0.8, 0.2]);
        assert_eq!(means[2], vec![0.8, 0.2, 0.5]);
        assert_eq!(means[3], means[0]);
        let env = build_preset("one-state").unwrap();
        assert_eq!(env.arm_means(1), &[0.5, 0.8, 0.2]);
    }

    #[test]
    fn horizon_override_respaces() {
        let env = build_preset_with_horizon("appendix-c", Some(1000)).unwrap();
        assert_eq!(env.change_points(), &[0, 200, 400, 600, 800, 1000]);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(build_preset("nope"), Err(Error::UnknownPreset(n)) if n == "nope"));
    }
}
