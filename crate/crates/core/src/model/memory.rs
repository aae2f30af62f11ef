//! Adaptive memory of tracking hidden states.
//!
//! A state is kept only when the camera has moved far enough from the pose of
//! the most recently stored state, either in rotation or in translation.

use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_distance, translation_distance, Pose};

/// Parallax thresholds for admitting a new memory slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryThresholds {
    /// Radians.
    pub rotation: f64,
    /// Meters.
    pub translation: f64,
}

impl MemoryThresholds {
    /// Values used for KITTI.
    pub const KITTI: MemoryThresholds = MemoryThresholds {
        rotation: 0.005,
        translation: 0.6,
    };

    /// Values used for TUM RGB-D.
    pub const TUM: MemoryThresholds = MemoryThresholds {
        rotation: 0.01,
        translation: 0.01,
    };

    /// Whether `candidate` is far enough from `anchor` to be stored.
    pub fn admits(&self, anchor: &Pose, candidate: &Pose) -> bool {
        rotation_distance(candidate, anchor) >= self.rotation
            || translation_distance(candidate, anchor) >= self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySlot<S> {
    pub state: S,
    pub anchor: Pose,
    pub step: usize,
}

/// Bounded FIFO of selected states. `S` is a graph handle during training and a
/// plain tensor elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer<S> {
    slots: Vec<MemorySlot<S>>,
    capacity: usize,
}

impl<S> MemoryBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        MemoryBuffer {
            slots: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slots(&self) -> &[MemorySlot<S>] {
        &self.slots
    }

    pub fn states(&self) -> impl Iterator<Item = &S> {
        self.slots.iter().map(|s| &s.state)
    }

    pub fn steps(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.step).collect()
    }

    pub fn last(&self) -> Option<&MemorySlot<S>> {
        self.slots.last()
    }

    /// Offers the hidden state of `step` anchored at `pose`. The first offer into an
    /// empty buffer is always kept; later offers are kept when `thresholds` admit
    /// them against the newest slot. A full buffer drops its
    /// oldest slot first. Returns whether the state was stored.
    pub fn update(&mut self, state: S, pose: Pose, step: usize, thresholds: &MemoryThresholds) -> bool {
        let store = match self.slots.last() {
            None => true,
            Some(last) => {
                assert!(step > last.step, "memory steps must increase: {step} after {}", last.step);
                thresholds.admits(&last.anchor, &pose)
            }
        };
        if store {
            if self.slots.len() == self.capacity {
                self.slots.remove(0);
            }
            self.slots.push(MemorySlot {
                state,
                anchor: pose,
                step,
            });
        }
        store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_state_is_always_stored() {
        let mut buf = MemoryBuffer::new(3);
        let never = MemoryThresholds {
            rotation: f64::INFINITY,
            translation: f64::INFINITY,
        };
        assert!(buf.update((), Pose::identity(), 0, &never));
        assert!(!buf.update((), Pose::from_translation([100.0, 0.0, 0.0]), 1, &never));
        assert_eq!(buf.steps(), vec![0]);
    }

    #[test]
    fn large_translation_is_stored() {
        let mut buf = MemoryBuffer::new(4);
        buf.update((), Pose::identity(), 0, &MemoryThresholds::KITTI);
        assert!(buf.update((), Pose::from_translation([0.7, 0.0, 0.0]), 1, &MemoryThresholds::KITTI));
    }

    #[test]
    fn small_motion_is_skipped() {
        let mut buf = MemoryBuffer::new(4);
        buf.update((), Pose::identity(), 0, &MemoryThresholds::KITTI);
        let small = Pose::new([0.001, 0.0, 0.0], [0.1, 0.0, 0.0]);
        assert!(!buf.update((), small, 1, &MemoryThresholds::KITTI));
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn rotation_alone_suffices() {
        let mut buf = MemoryBuffer::new(4);
        buf.update((), Pose::identity(), 0, &MemoryThresholds::KITTI);
        assert!(buf.update((), Pose::new([0.0, 0.006, 0.0], [0.0; 3]), 1, &MemoryThresholds::KITTI));
    }

    #[test]
    fn full_buffer_evicts_oldest() {
        let mut buf = MemoryBuffer::new(2);
        let always = MemoryThresholds {
            rotation: 0.0,
            translation: 0.0,
        };
        for step in 0..5 {
            assert!(buf.update(step, Pose::identity(), step, &always));
        }
        assert_eq!(buf.steps(), vec![3, 4]);
        assert_eq!(buf.states().copied().collect::<Vec<_>>(), vec![3, 4]);
    }
}
