//! Low-level distributions: nonverbal intervals, pauses, response timeouts
//! and the coin flips that vary speech.
//!
//! Interval parameters are given as mean and *variance*; the standard
//! deviation used for sampling is the square root of the variance.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("{0}: mean must be positive and finite")]
    Mean(&'static str),
    #[error("{0}: variance must be nonnegative and finite")]
    Variance(&'static str),
    #[error("reaction pause mean ({react}) must exceed new-interaction pause mean ({new})")]
    PauseOrder { react: f64, new: f64 },
    #[error("floor must be nonnegative")]
    Floor,
    #[error("gate {0} probability outside [0, 1]")]
    Gate(&'static str),
    #[error("{0} must be positive")]
    Positive(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub const fn new(mean: f64, variance: f64) -> Self {
        NormalParams { mean, variance }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Smile,
    GazeHold,
    PauseNew,
    PauseReact,
    ResponseTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    pub smile: NormalParams,
    pub gaze_hold: NormalParams,
    pub pause_new: NormalParams,
    pub pause_react: NormalParams,
    pub response_timeout: NormalParams,
    /// Smallest interval ever emitted, seconds.
    pub floor: f64,
    /// Redraws attempted before clamping a draw to `floor`.
    pub max_redraws: u32,
    /// Speaking rate used to estimate how long an utterance takes.
    pub words_per_second: f64,
    /// Fixed time the gaze stays away before returning to the user.
    pub gaze_return_s: f64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            smile: NormalParams::new(12.0, 3.0),
            gaze_hold: NormalParams::new(7.0, 1.2),
            pause_new: NormalParams::new(3.7, 0.25),
            pause_react: NormalParams::new(5.5, 0.5),
            response_timeout: NormalParams::new(20.0, 9.0),
            floor: 0.1,
            max_redraws: 16,
            words_per_second: 2.5,
            gaze_return_s: 2.0,
        }
    }
}

impl TimingParams {
    pub fn params(&self, kind: IntervalKind) -> NormalParams {
        match kind {
            IntervalKind::Smile => self.smile,
            IntervalKind::GazeHold => self.gaze_hold,
            IntervalKind::PauseNew => self.pause_new,
            IntervalKind::PauseReact => self.pause_react,
            IntervalKind::ResponseTimeout => self.response_timeout,
        }
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        let all = [
            ("smile", self.smile),
            ("gaze_hold", self.gaze_hold),
            ("pause_new", self.pause_new),
            ("pause_react", self.pause_react),
            ("response_timeout", self.response_timeout),
        ];
        for (name, p) in all {
            if !(p.mean.is_finite() && p.mean > 0.0) {
                return Err(TimingError::Mean(name));
            }
            if !(p.variance.is_finite() && p.variance >= 0.0) {
                return Err(TimingError::Variance(name));
            }
        }
        if self.pause_react.mean <= self.pause_new.mean {
            return Err(TimingError::PauseOrder {
                react: self.pause_react.mean,
                new: self.pause_new.mean,
            });
        }
        if !(self.floor.is_finite() && self.floor >= 0.0) {
            return Err(TimingError::Floor);
        }
        if !(self.words_per_second > 0.0) {
            return Err(TimingError::Positive("words_per_second"));
        }
        if !(self.gaze_return_s >= 0.0) {
            return Err(TimingError::Positive("gaze_return_s"));
        }
        Ok(())
    }
}

/// Draws an interval in seconds from `Normal(mean, sqrt(variance))`,
/// redrawing while below the floor and clamping after `max_redraws`.
///
/// ```
/// use korra_core::prob::RngStream;
/// use korra_core::timing::{sample_interval, IntervalKind, TimingParams};
///
/// let mut rng = RngStream::new(1, "timing");
/// let params = TimingParams::default();
/// let pause = sample_interval(IntervalKind::PauseNew, &params, &mut rng);
/// assert!(pause >= params.floor);
/// ```
pub fn sample_interval(kind: IntervalKind, params: &TimingParams, rng: &mut RngStream) -> f64 {
    let p = params.params(kind);
    if p.variance == 0.0 {
        return p.mean.max(params.floor);
    }
    let normal = Normal::new(p.mean, p.std_dev()).expect("validated timing parameters");
    for _ in 0..params.max_redraws.max(1) {
        let x = normal.sample(rng);
        if x >= params.floor {
            return x;
        }
    }
    params.floor
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    AddressByName,
    JokeClarify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateParams {
    pub address_by_name_p: f64,
    pub joke_clarify_p: f64,
    /// Phrases appended after a joke when the clarification gate opens.
    pub joke_clarifications: Vec<String>,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            address_by_name_p: 0.25,
            joke_clarify_p: 0.5,
            joke_clarifications: vec!["OK, you know, that was a joke.".to_owned()],
        }
    }
}

impl GateParams {
    pub fn probability(&self, kind: GateKind) -> f64 {
        match kind {
            GateKind::AddressByName => self.address_by_name_p,
            GateKind::JokeClarify => self.joke_clarify_p,
        }
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if !(0.0..=1.0).contains(&self.address_by_name_p) {
            return Err(TimingError::Gate("address_by_name_p"));
        }
        if !(0.0..=1.0).contains(&self.joke_clarify_p) {
            return Err(TimingError::Gate("joke_clarify_p"));
        }
        Ok(())
    }
}

/// Bernoulli coin flip for a variability gate. Always consumes exactly one
/// draw so the gate stream stays aligned whatever the probabilities are.
pub fn gate(kind: GateKind, params: &GateParams, rng: &mut RngStream) -> bool {
    let u: f64 = rng.random();
    u < params.probability(kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn smile_moments() {
        let params = TimingParams::default();
        let mut rng = RngStream::new(11, "timing");
        let xs: Vec<f64> = (0..10_000)
            .map(|_| sample_interval(IntervalKind::Smile, &params, &mut rng))
            .collect();
        let (mean, var) = moments(&xs);
        assert!((mean - 12.0).abs() < 0.1, "mean {mean}");
        assert!((var - 3.0).abs() < 0.3, "variance {var}");
    }

    #[test]
    fn floor_is_respected() {
        let params = TimingParams {
            pause_new: NormalParams::new(0.2, 4.0),
            pause_react: NormalParams::new(5.0, 1.0),
            ..TimingParams::default()
        };
        let mut rng = RngStream::new(3, "timing");
        for _ in 0..5_000 {
            let x = sample_interval(IntervalKind::PauseNew, &params, &mut rng);
            assert!(x >= 0.1 && x.is_finite());
        }
    }

    #[test]
    fn zero_variance_is_deterministic() {
        let params = TimingParams {
            smile: NormalParams::new(4.0, 0.0),
            ..TimingParams::default()
        };
        let mut rng = RngStream::new(3, "timing");
        for _ in 0..10 {
            assert_eq!(sample_interval(IntervalKind::Smile, &params, &mut rng), 4.0);
        }
    }

    #[test]
    fn gate_examples() {
        let mut rng = RngStream::new(5, "gates");
        let always = GateParams {
            address_by_name_p: 1.0,
            joke_clarify_p: 0.0,
            ..GateParams::default()
        };
        for _ in 0..1000 {
            assert!(gate(GateKind::AddressByName, &always, &mut rng));
            assert!(!gate(GateKind::JokeClarify, &always, &mut rng));
        }
        let p3 = GateParams {
            address_by_name_p: 0.3,
            ..GateParams::default()
        };
        let hits = (0..10_000)
            .filter(|_| gate(GateKind::AddressByName, &p3, &mut rng))
            .count();
        assert!((hits as f64 / 10_000.0 - 0.3).abs() < 0.01);
    }

    #[test]
    fn validation() {
        assert!(TimingParams::default().validate().is_ok());
        let bad = TimingParams {
            pause_react: NormalParams::new(3.0, 0.5),
            ..TimingParams::default()
        };
        assert!(matches!(bad.validate(), Err(TimingError::PauseOrder { .. })));
        let bad = TimingParams {
            smile: NormalParams::new(-1.0, 0.5),
            ..TimingParams::default()
        };
        assert_eq!(bad.validate(), Err(TimingError::Mean("smile")));
        let bad = GateParams {
            joke_clarify_p: 2.0,
            ..GateParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
