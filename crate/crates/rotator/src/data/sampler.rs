//! Training-sequence construction.
//!
//! Wrap datasets use T identical rotations around the circle. Arc datasets
//! reverse direction when a rotation would pass an end view, so a fixed-length
//! sequence can start anywhere; from the end views only one initial direction
//! is feasible. Single-step sampling additionally emits no-op pairs mapping a
//! view onto itself.

use rand::Rng;

use crate::data::dataset::Dataset;
use crate::data::geometry::ViewGeometry;
use crate::error::{Error, Result};
use crate::model::Action;
use crate::tensor::Tensor;

/// One training sample of the sequence objective.
#[derive(Debug, Clone)]
pub struct RotationSequence {
    pub identity: u32,
    pub start_view: usize,
    pub input: Tensor,
    pub actions: Vec<Action>,
    pub target_views: Vec<usize>,
    pub targets: Vec<Tensor>,
    pub target_masks: Vec<Tensor>,
}

/// Walks `t` steps from `start`, reversing at arc boundaries.
fn walk(geometry: &ViewGeometry, start: usize, first: Action, t: usize) -> (Vec<Action>, Vec<usize>) {
    let flip = |a: Action| match a {
        Action::Cw => Action::Ccw,
        Action::Ccw => Action::Cw,
        Action::Noop => Action::Noop,
    };
    let mut dir = first;
    let mut view = start;
    let mut actions = Vec::with_capacity(t);
    let mut views = Vec::with_capacity(t);
    for _ in 0..t {
        if geometry.step_view(view, dir).is_none() {
            dir = flip(dir);
        }
        view = geometry
            .step_view(view, dir)
            .expect("a flipped direction is always feasible for >= 3 views");
        actions.push(dir);
        views.push(view);
    }
    (actions, views)
}

fn materialize(
    ds: &Dataset,
    identity: u32,
    start_view: usize,
    actions: Vec<Action>,
    target_views: Vec<usize>,
) -> RotationSequence {
    RotationSequence {
        identity,
        start_view,
        input: ds.image(identity, start_view).clone(),
        targets: target_views
            .iter()
            .map(|&v| ds.image(identity, v).clone())
            .collect(),
        target_masks: target_views
            .iter()
            .map(|&v| ds.mask(identity, v).clone())
            .collect(),
        actions,
        target_views,
    }
}

/// Uniformly samples `count` sequences of length `t` over the given ids.
pub fn sample_sequences(
    ds: &Dataset,
    ids: &[u32],
    t: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<RotationSequence>> {
    if t == 0 {
        return Err(Error::arg("sequence length must be at least 1"));
    }
    if ids.is_empty() {
        return Err(Error::arg("no identities to sample from"));
    }
    let geometry = ds.geometry();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let identity = ids[rng.gen_range(0..ids.len())];
        let start = rng.gen_range(0..geometry.views);
        let mut options = geometry.feasible_directions(start);
        if t == 1 {
            options.push(Action::Noop);
        }
        let choice = options[rng.gen_range(0..options.len())];
        let (actions, views) = if choice == Action::Noop {
            (vec![Action::Noop], vec![start])
        } else {
            walk(&geometry, start, choice, t)
        };
        out.push(materialize(ds, identity, start, actions, views));
    }
    Ok(out)
}

/// Which starting rotation directions an evaluation enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionPolicy {
    Both,
    CwOnly,
    CcwOnly,
}

impl DirectionPolicy {
    fn admits(self, a: Action) -> bool {
        match self {
            DirectionPolicy::Both => true,
            DirectionPolicy::CwOnly => a == Action::Cw,
            DirectionPolicy::CcwOnly => a == Action::Ccw,
        }
    }
}

/// Deterministically enumerates one sequence per (identity, start view,
/// feasible starting direction). This is the sample set used for per-step
/// reconstruction error, for both the model and the KNN baseline.
pub fn enumerate_sequences(
    ds: &Dataset,
    ids: &[u32],
    t: usize,
    policy: DirectionPolicy,
) -> Result<Vec<RotationSequence>> {
    if t == 0 {
        return Err(Error::arg("sequence length must be at least 1"));
    }
    let geometry = ds.geometry();
    let mut out = Vec::new();
    for &identity in ids {
        for start in 0..geometry.views {
            for dir in geometry.feasible_directions(start) {
                if !policy.admits(dir) {
                    continue;
                }
                let (actions, views) = walk(&geometry, start, dir, t);
                out.push(materialize(ds, identity, start, actions, views));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::arg("no sequences can be enumerated"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{generate, GenConfig};
    use crate::data::geometry::GeometryMode;
    use rand::SeedableRng;

    fn wrap_ds() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(
            &GenConfig {
                mode: GeometryMode::Wrap,
                identities: 3,
                views: 6,
                size: 16,
                channels: 3,
                seed: 11,
                train_count: Some(2),
            },
            dir.path(),
        )
        .unwrap();
        (dir, ds)
    }

    fn arc_ds() -> (tempfile::TempDir, Dataset) {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(
            &GenConfig {
                mode: GeometryMode::Arc,
                identities: 2,
                views: 7,
                size: 16,
                channels: 3,
                seed: 12,
                train_count: Some(1),
            },
            dir.path(),
        )
        .unwrap();
        (dir, ds)
    }

    #[test]
    fn arc_bounce_reproduces_the_worked_example() {
        // start at +30 deg (view 5 of 7), one CCW to the +45 boundary, then
        // three CW: targets (45, 30, 15, 0) = views (6, 5, 4, 3)
        let (_d, ds) = arc_ds();
        let g = ds.geometry();
        let (actions, views) = walk(&g, 5, Action::Ccw, 4);
        assert_eq!(actions, vec![Action::Ccw, Action::Cw, Action::Cw, Action::Cw]);
        assert_eq!(views, vec![6, 5, 4, 3]);
        let angles: Vec<f64> = views.iter().map(|&v| g.angle_deg(v)).collect();
        assert_eq!(angles, vec![45.0, 30.0, 15.0, 0.0]);
    }

    #[test]
    fn arc_end_views_admit_only_one_way_rotation() {
        let (_d, ds) = arc_ds();
        let seqs = enumerate_sequences(&ds, &[0], 2, DirectionPolicy::Both).unwrap();
        for s in &seqs {
            if s.start_view == 0 {
                assert_eq!(s.actions[0], Action::Ccw);
            }
            if s.start_view == 6 {
                assert_eq!(s.actions[0], Action::Cw);
            }
        }
        // interior views contribute two sequences, end views one
        assert_eq!(seqs.len(), 5 * 2 + 2);
    }

    #[test]
    fn wrap_sequences_never_change_direction() {
        let (_d, ds) = wrap_ds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for s in sample_sequences(&ds, ds.train_ids(), 8, 50, &mut rng).unwrap() {
            assert!(s.actions.iter().all(|&a| a == s.actions[0]));
            assert_ne!(s.actions[0], Action::Noop);
        }
    }

    #[test]
    fn wrap_ccw_from_zero_targets_increasing_views() {
        let (_d, ds) = wrap_ds();
        let (actions, views) = walk(&ds.geometry(), 0, Action::Ccw, 3);
        assert_eq!(actions.len(), 3);
        assert_eq!(views, vec![1, 2, 3]);
    }

    #[test]
    fn geometric_consistency_replay() {
        let (_d, ds) = wrap_ds();
        let g = ds.geometry();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for t in [1usize, 3, 7] {
            for s in sample_sequences(&ds, ds.train_ids(), t, 40, &mut rng).unwrap() {
                let mut v = s.start_view;
                for (a, &target) in s.actions.iter().zip(&s.target_views) {
                    v = g.step_view(v, *a).expect("sampled actions are feasible");
                    assert_eq!(v, target);
                }
            }
        }
    }

    #[test]
    fn t1_sampling_emits_noop_pairs() {
        let (_d, ds) = wrap_ds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let seqs = sample_sequences(&ds, ds.train_ids(), 1, 200, &mut rng).unwrap();
        let noops = seqs.iter().filter(|s| s.actions[0] == Action::Noop).count();
        assert!(noops > 20, "only {noops} noop pairs in 200 samples");
        for s in seqs.iter().filter(|s| s.actions[0] == Action::Noop) {
            assert_eq!(s.target_views, vec![s.start_view]);
        }
    }

    #[test]
    fn sampler_covers_every_identity_view_pair() {
        let (_d, ds) = wrap_ds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = ds.manifest.identities;
        let v = ds.views();
        let all_ids: Vec<u32> = (0..n as u32).collect();
        let seqs = sample_sequences(&ds, &all_ids, 2, 10 * n * v, &mut rng).unwrap();
        let mut seen = vec![false; n * v];
        for s in &seqs {
            seen[s.identity as usize * v + s.start_view] = true;
        }
        assert!(seen.iter().all(|&s| s), "some (identity, view) never sampled");
    }

    #[test]
    fn zero_length_requests_are_rejected() {
        let (_d, ds) = wrap_ds();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        assert!(sample_sequences(&ds, ds.train_ids(), 0, 4, &mut rng).is_err());
        assert!(enumerate_sequences(&ds, ds.train_ids(), 0, DirectionPolicy::Both).is_err());
    }
}
