//! Single-coefficient performance curriculum.
//!
//! Every difficulty knob in training is expressed as a `(value_at_zero,
//! value_at_one)` pair and resolved through [`scale`] with the current
//! coefficient `beta`. After each episode, `beta` moves by `n * delta_beta`
//! where `n` counts consecutive outcomes of the same kind.

/// Linear interpolation used by every curriculum-attached quantity.
pub fn scale(value_at_zero: f64, value_at_one: f64, beta: f64) -> f64 {
    value_at_zero + beta * (value_at_one - value_at_zero)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessThresholds {
    pub min_episode_length: usize,
    pub max_tracking_error: f64,
    /// Disabled when `None`.
    pub min_return: Option<f64>,
}

impl SuccessThresholds {
    /// 90 % of the horizon and 0.25 m/s mean tracking error.
    pub fn for_horizon(horizon: usize) -> Self {
        SuccessThresholds {
            min_episode_length: (horizon * 9).div_ceil(10),
            max_tracking_error: 0.25,
            min_return: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub length: usize,
    pub mean_tracking_error: f64,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub beta: f64,
    pub consecutive_successes: u64,
    pub consecutive_failures: u64,
    /// Coefficient at the start of the current run of equal outcomes.
    pub streak_start: f64,
    pub delta_beta: f64,
    pub thresholds: SuccessThresholds,
}

impl CurriculumState {
    pub fn new(delta_beta: f64, thresholds: SuccessThresholds) -> Self {
        CurriculumState {
            beta: 0.0,
            consecutive_successes: 0,
            consecutive_failures: 0,
            streak_start: 0.0,
            delta_beta,
            thresholds,
        }
    }

    pub fn judge_episode(&self, stats: &EpisodeStats) -> bool {
        judge_episode(stats, &self.thresholds)
    }

    pub fn update(&self, success: bool) -> CurriculumState {
        update(self, success)
    }

    /// Judges the episode and applies the outcome in place.
    pub fn record(&mut self, stats: &EpisodeStats) -> bool {
        let success = self.judge_episode(stats);
        *self = update(self, success);
        success
    }
}

/// Success iff the episode is long enough and the mean tracking error is at
/// most the threshold (inclusive). The return threshold only applies when set.
pub fn judge_episode(stats: &EpisodeStats, thresholds: &SuccessThresholds) -> bool {
    stats.length >= thresholds.min_episode_length
        && stats.mean_tracking_error <= thresholds.max_tracking_error
        && thresholds.min_return.is_none_or(|r| stats.episode_return >= r)
}

/// The n-th outcome of a run moves `beta` by `n * delta_beta`. The run is
/// summed in closed form from its starting value, `start +- delta_beta *
/// n(n+1)/2`, which equals the step-by-step rule (clamping is monotone within
/// a run) without accumulating rounding error.
pub fn update(state: &CurriculumState, success: bool) -> CurriculumState {
    let mut next = state.clone();
    let run = if success {
        if next.consecutive_successes == 0 {
            next.streak_start = state.beta;
        }
        next.consecutive_successes += 1;
        next.consecutive_failures = 0;
        next.consecutive_successes
    } else {
        if next.consecutive_failures == 0 {
            next.streak_start = state.beta;
        }
        next.consecutive_failures += 1;
        next.consecutive_successes = 0;
        next.consecutive_failures
    };
    let moved = next.delta_beta * (run * (run + 1) / 2) as f64;
    let beta = if success { next.streak_start + moved } else { next.streak_start - moved };
    next.beta = beta.clamp(0.0, 1.0);
    next
}
