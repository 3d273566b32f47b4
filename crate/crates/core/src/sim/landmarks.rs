use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WallModel;
use crate::geom::Vec3;

/// Random scatter of point features on the wall and on background planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkFieldConfig {
    /// Features per square metre on the wall.
    pub wall_density: f64,
    /// Half width of the textured wall patch, centered on the hole [m].
    pub wall_half_width: f64,
    /// Height span of the textured wall patch [m].
    pub wall_height: (f64, f64),
    /// Features per square metre on floor and side planes.
    pub background_density: f64,
    /// How far the background planes extend from the wall [m].
    pub background_depth: f64,
    /// Lateral position of the side planes from the hole [m].
    pub side_offset: f64,
    /// Radius around the hole kept free of features [m].
    pub exclusion_radius: f64,
    /// Extra features per square metre on a disc around the hole, so that
    /// the camera still sees texture at contact range.
    pub near_target_density: f64,
    /// [m]
    pub near_target_radius: f64,
}

impl Default for LandmarkFieldConfig {
    fn default() -> Self {
        Self {
            wall_density: 60.0,
            wall_half_width: 2.5,
            wall_height: (0.2, 3.0),
            background_density: 1.0,
            background_depth: 6.0,
            side_offset: 3.0,
            exclusion_radius: 0.07,
            near_target_density: 800.0,
            near_target_radius: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkField {
    /// `(id, world position)`; ids are assigned in generation order, which
    /// is spatially random.
    pub points: Vec<(u32, Vec3)>,
}

impl LandmarkField {
    /// Scatters features over the wall patch, the floor and two side planes.
    /// Assumes a vertical wall.
    pub fn generate<R: Rng>(cfg: &LandmarkFieldConfig, wall: &WallModel, rng: &mut R) -> Self {
        let n = wall.normal;
        let up = Vec3::z();
        let lateral = up.cross(&n).normalize();
        let center = wall.hole_center;
        let mut points = Vec::new();

        let wall_area = 2.0 * cfg.wall_half_width * (cfg.wall_height.1 - cfg.wall_height.0);
        let count = (cfg.wall_density * wall_area).round() as usize;
        while points.len() < count {
            let s = rng.random_range(-cfg.wall_half_width..cfg.wall_half_width);
            let h = rng.random_range(cfg.wall_height.0..cfg.wall_height.1);
            let p = center + lateral * s + up * (h - center.z);
            let p = p - n * wall.signed_distance(&p);
            if (p - center).norm() >= cfg.exclusion_radius {
                points.push(p);
            }
        }

        let disc = std::f64::consts::PI * (cfg.near_target_radius.powi(2) - cfg.exclusion_radius.powi(2)).max(0.0);
        let near_count = (cfg.near_target_density * disc).round() as usize;
        let mut placed = 0;
        while placed < near_count {
            let s = rng.random_range(-cfg.near_target_radius..cfg.near_target_radius);
            let h = rng.random_range(-cfg.near_target_radius..cfg.near_target_radius);
            let r = (s * s + h * h).sqrt();
            if r > cfg.near_target_radius || r < cfg.exclusion_radius {
                continue;
            }
            points.push(center + lateral * s + up * h);
            placed += 1;
        }

        let floor_area = 2.0 * cfg.side_offset * cfg.background_depth;
        let floor_count = (cfg.background_density * floor_area).round() as usize;
        for _ in 0..floor_count {
            let s = rng.random_range(-cfg.side_offset..cfg.side_offset);
            let d = rng.random_range(0.05..cfg.background_depth);
            let mut p = center + lateral * s + n * d;
            p.z = 0.0;
            points.push(p);
        }
        let side_area = cfg.background_depth * (cfg.wall_height.1 - cfg.wall_height.0);
        let side_count = (cfg.background_density * side_area).round() as usize;
        for sign in [-1.0, 1.0] {
            for _ in 0..side_count {
                let d = rng.random_range(0.05..cfg.background_depth);
                let h = rng.random_range(cfg.wall_height.0..cfg.wall_height.1);
                let mut p = center + lateral * (sign * cfg.side_offset) + n * d;
                p.z = h;
                points.push(p);
            }
        }

        Self { points: points.into_iter().enumerate().map(|(i, p)| (i as u32, p)).collect() }
    }

    pub fn position(&self, id: u32) -> Option<Vec3> {
        self.points.get(id as usize).filter(|(i, _)| *i == id).map(|(_, p)| *p)
    }
}
