//! View-index geometry shared by the renderer, sampler and evaluator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryMode {
    /// Bounded arc of views; rotation cannot pass the end views.
    Arc,
    /// Full turntable; view indices wrap modulo the view count.
    Wrap,
}

impl GeometryMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arc" => Ok(GeometryMode::Arc),
            "wrap" => Ok(GeometryMode::Wrap),
            other => Err(Error::arg(format!("unknown geometry {other:?} (arc|wrap)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GeometryMode::Arc => "arc",
            GeometryMode::Wrap => "wrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewGeometry {
    pub mode: GeometryMode,
    pub views: usize,
    pub degrees_per_step: f64,
}

impl ViewGeometry {
    /// Centered arc, 15 degrees per step (7 views span -45..45).
    pub fn arc(views: usize) -> Self {
        ViewGeometry {
            mode: GeometryMode::Arc,
            views,
            degrees_per_step: 15.0,
        }
    }

    /// Full circle split evenly across the views.
    pub fn wrap(views: usize) -> Self {
        ViewGeometry {
            mode: GeometryMode::Wrap,
            views,
            degrees_per_step: 360.0 / views as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views < 3 {
            return Err(Error::arg(format!(
                "need at least 3 views, got {}",
                self.views
            )));
        }
        if self.degrees_per_step <= 0.0 {
            return Err(Error::arg("degrees_per_step must be positive"));
        }
        Ok(())
    }

    /// Azimuth of a view. Arc views are centered on zero; wrap views cover
    /// the circle. Wrap indices are reduced modulo the view count first so
    /// view V renders exactly like view 0.
    pub fn angle_deg(&self, view: usize) -> f64 {
        match self.mode {
            GeometryMode::Arc => {
                let center = (self.views - 1) as f64 / 2.0;
                (view as f64 - center) * self.degrees_per_step
            }
            GeometryMode::Wrap => (view % self.views) as f64 * self.degrees_per_step,
        }
    }

    /// Transition function: CW decrements the view index, CCW increments it,
    /// NOOP repeats it. `None` when an arc rotation would exit the range.
    pub fn step_view(&self, view: usize, action: Action) -> Option<usize> {
        let next = view as i64 + action.view_delta();
        match self.mode {
            GeometryMode::Wrap => Some(next.rem_euclid(self.views as i64) as usize),
            GeometryMode::Arc => {
                if (0..self.views as i64).contains(&next) {
                    Some(next as usize)
                } else {
                    None
                }
            }
        }
    }

    /// Rotation directions that can take a first step from `view`.
    pub fn feasible_directions(&self, view: usize) -> Vec<Action> {
        [Action::Cw, Action::Ccw]
            .into_iter()
            .filter(|&a| self.step_view(view, a).is_some())
            .collect()
    }

    /// Angular offset between two views in degrees: absolute difference on an
    /// arc, minimal circular distance on a turntable.
    pub fn offset_deg(&self, a: usize, b: usize) -> f64 {
        let d = (a as i64 - b as i64).unsigned_abs() as usize;
        let steps = match self.mode {
            GeometryMode::Arc => d,
            GeometryMode::Wrap => d.min(self.views - d),
        };
        steps as f64 * self.degrees_per_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_angles_are_centered() {
        let g = ViewGeometry::arc(7);
        assert_eq!(g.angle_deg(0), -45.0);
        assert_eq!(g.angle_deg(3), 0.0);
        assert_eq!(g.angle_deg(6), 45.0);
    }

    #[test]
    fn arc_forbids_stepping_past_the_ends() {
        let g = ViewGeometry::arc(7);
        assert_eq!(g.step_view(0, Action::Cw), None);
        assert_eq!(g.step_view(6, Action::Ccw), None);
        assert_eq!(g.step_view(0, Action::Ccw), Some(1));
        assert_eq!(g.feasible_directions(0), vec![Action::Ccw]);
        assert_eq!(g.feasible_directions(3).len(), 2);
    }

    #[test]
    fn wrap_steps_are_modular() {
        let g = ViewGeometry::wrap(12);
        assert_eq!(g.step_view(0, Action::Cw), Some(11));
        assert_eq!(g.step_view(11, Action::Ccw), Some(0));
        assert_eq!(g.angle_deg(12), g.angle_deg(0));
        assert_eq!(g.degrees_per_step, 30.0);
    }

    #[test]
    fn wrap_offsets_use_minimal_circular_distance() {
        let g = ViewGeometry::wrap(12);
        assert_eq!(g.offset_deg(0, 11), 30.0);
        assert_eq!(g.offset_deg(0, 6), 180.0);
        let a = ViewGeometry::arc(7);
        assert_eq!(a.offset_deg(0, 6), 90.0);
    }
}
