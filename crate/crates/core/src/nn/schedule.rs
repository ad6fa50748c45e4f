use std::f64::consts::PI;

/// Cosine annealing from `base_lr` at step 0 down to zero at the final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f32,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(base_lr: f32, total_steps: usize) -> Self {
        Self {
            base_lr,
            total_steps,
        }
    }

    pub fn lr_at(&self, step: usize) -> f32 {
        if self.total_steps <= 1 {
            return self.base_lr;
        }
        let last = (self.total_steps - 1) as f64;
        let progress = (step as f64).min(last) / last;
        (self.base_lr as f64 * 0.5 * (1.0 + (PI * progress).cos())) as f32
    }
}
