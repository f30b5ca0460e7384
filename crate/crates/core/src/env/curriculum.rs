use serde::{Deserialize, Serialize};

use super::EnvError;

/// Cyclic scene schedule: scene `k` is trained for `epochs_per_pass` epochs, then the
/// next scene, wrapping around until every scene has had `passes` turns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumSchedule {
    pub n_scenes: usize,
    pub passes: usize,
    pub epochs_per_pass: usize,
    /// Restore the initial learning rate whenever the scene changes.
    pub lr_reset: bool,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self { n_scenes: 3, passes: 5, epochs_per_pass: 100, lr_reset: true }
    }
}

impl CurriculumSchedule {
    pub fn total_epochs(&self) -> usize {
        self.n_scenes * self.passes * self.epochs_per_pass
    }

    /// Number of scene switches over the whole schedule, counting the first scene.
    pub fn transitions(&self) -> usize {
        self.n_scenes * self.passes
    }
}

/// Scene index for `epoch` and whether the learning rate resets at that epoch.
pub fn curriculum_next(schedule: &CurriculumSchedule, epoch: usize) -> Result<(usize, bool), EnvError> {
    let total = schedule.total_epochs();
    if epoch >= total {
        return Err(EnvError::Epoch { epoch, total });
    }
    let scene = (epoch / schedule.epochs_per_pass) % schedule.n_scenes;
    Ok((scene, schedule.lr_reset && epoch.is_multiple_of(schedule.epochs_per_pass)))
}
