//! Finite discrete distributions with exact inference by enumeration.
//!
//! [`FiniteDist`] is the currency every other module trades in: the Main
//! Distribution over categories, Bernoulli variables fed by user answers and
//! the joint tables of the small Bayesian networks are all finite
//! distributions. Composition goes through [`FiniteDist::bind`], which is an
//! exact mixture, so a network written as nested binds is enumerated exactly.
//!
//! Sampling draws from an [`RngStream`]: a ChaCha stream keyed by a seed and a
//! label naming the consuming subsystem. Two streams with the same seed and
//! label produce the same draws; different labels are independent, so timing
//! draws never perturb content choices.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Absolute tolerance used for probability comparisons throughout the crate.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("distribution has no positive mass")]
    EmptySupport,
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("observed evidence has probability zero")]
    ImpossibleEvidence,
}

/// Probability of observed evidence: the mass a condition kept before
/// renormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    poe: f64,
}

impl Evidence {
    pub fn new(poe: f64) -> Result<Self, ProbError> {
        if !(0.0..=1.0 + TOLERANCE).contains(&poe) {
            return Err(ProbError::OutOfRange(poe));
        }
        Ok(Evidence { poe: poe.min(1.0) })
    }

    pub fn poe(&self) -> f64 {
        self.poe
    }
}

/// A finite discrete probability distribution.
///
/// Entries keep first-insertion order, values are pairwise distinct, every
/// weight is strictly positive and the weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDist<T> {
    entries: Vec<(T, f64)>,
}

impl<T: Clone + PartialEq> FiniteDist<T> {
    /// Builds a distribution from nonnegative weights, merging duplicate
    /// values and normalizing.
    ///
    /// ```
    /// use korra_core::prob::FiniteDist;
    ///
    /// let d = FiniteDist::from_weighted([("x", 1.0), ("x", 1.0), ("y", 2.0)]).unwrap();
    /// assert_eq!(d.weight_of(&"x"), 0.5);
    /// assert_eq!(d.len(), 2);
    /// ```
    pub fn from_weighted<I>(pairs: I) -> Result<Self, ProbError>
    where
        I: IntoIterator<Item = (T, f64)>,
    {
        let mut merged: Vec<(T, f64)> = Vec::new();
        for (value, weight) in pairs {
            if !weight.is_finite() || weight < 0.0 {
                return Err(ProbError::InvalidWeight(weight));
            }
            push_merged(&mut merged, value, weight);
        }
        Self::normalized(merged)
    }

    /// A point mass on `value`.
    pub fn point(value: T) -> Self {
        FiniteDist {
            entries: vec![(value, 1.0)],
        }
    }

    pub fn uniform<I: IntoIterator<Item = T>>(values: I) -> Result<Self, ProbError> {
        Self::from_weighted(values.into_iter().map(|v| (v, 1.0)))
    }

    /// Wraps entries that the caller has already normalized, dropping zero
    /// weights and merging duplicates but never rescaling. Used where exact
    /// weights must survive (fixed categories of the Main Distribution).
    pub(crate) fn from_normalized(pairs: Vec<(T, f64)>) -> Result<Self, ProbError> {
        let mut merged: Vec<(T, f64)> = Vec::new();
        for (value, weight) in pairs {
            if !weight.is_finite() || weight < 0.0 {
                return Err(ProbError::InvalidWeight(weight));
            }
            push_merged(&mut merged, value, weight);
        }
        merged.retain(|(_, w)| *w > 0.0);
        if merged.is_empty() {
            return Err(ProbError::EmptySupport);
        }
        let total: f64 = merged.iter().map(|(_, w)| w).sum();
        debug_assert!((total - 1.0).abs() < TOLERANCE, "weights sum to {total}");
        Ok(FiniteDist { entries: merged })
    }

    fn normalized(mut merged: Vec<(T, f64)>) -> Result<Self, ProbError> {
        merged.retain(|(_, w)| *w > 0.0);
        let total: f64 = merged.iter().map(|(_, w)| w).sum();
        if merged.is_empty() || total <= 0.0 {
            return Err(ProbError::EmptySupport);
        }
        for entry in &mut merged {
            entry.1 /= total;
        }
        Ok(FiniteDist { entries: merged })
    }

    pub fn entries(&self) -> &[(T, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|(v, _)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weight of `value`, zero when it is outside the support.
    pub fn weight_of(&self, value: &T) -> f64 {
        self.entries
            .iter()
            .find(|(v, _)| v == value)
            .map_or(0.0, |(_, w)| *w)
    }

    /// Exact monadic composition: `P(out) = Σ_v P(v) · P_kernel(v)(out)`.
    pub fn bind<U, F>(&self, mut kernel: F) -> FiniteDist<U>
    where
        U: Clone + PartialEq,
        F: FnMut(&T) -> FiniteDist<U>,
    {
        let mut out: Vec<(U, f64)> = Vec::new();
        for (value, weight) in &self.entries {
            for (next, inner) in kernel(value).entries {
                push_merged(&mut out, next, weight * inner);
            }
        }
        FiniteDist::normalized(out).expect("mixture of proper distributions has positive mass")
    }

    /// Like [`bind`](Self::bind) for kernels that can fail; the first
    /// failure is propagated.
    pub fn try_bind<U, E, F>(&self, mut kernel: F) -> Result<FiniteDist<U>, E>
    where
        U: Clone + PartialEq,
        F: FnMut(&T) -> Result<FiniteDist<U>, E>,
    {
        let mut out: Vec<(U, f64)> = Vec::new();
        for (value, weight) in &self.entries {
            for (next, inner) in kernel(value)?.entries {
                push_merged(&mut out, next, weight * inner);
            }
        }
        Ok(FiniteDist::normalized(out).expect("mixture of proper distributions has positive mass"))
    }

    pub fn map<U, F>(&self, mut f: F) -> FiniteDist<U>
    where
        U: Clone + PartialEq,
        F: FnMut(&T) -> U,
    {
        self.bind(|v| FiniteDist::point(f(v)))
    }

    /// Restricts to values satisfying `predicate` and renormalizes. The
    /// returned evidence is the mass that satisfied the predicate.
    pub fn condition<F>(&self, mut predicate: F) -> Result<(FiniteDist<T>, Evidence), ProbError>
    where
        F: FnMut(&T) -> bool,
    {
        let kept: Vec<(T, f64)> = self
            .entries
            .iter()
            .filter(|(v, _)| predicate(v))
            .cloned()
            .collect();
        let poe: f64 = kept.iter().map(|(_, w)| w).sum();
        if kept.is_empty() || poe <= 0.0 {
            return Err(ProbError::ImpossibleEvidence);
        }
        let posterior = FiniteDist::normalized(kept)?;
        Ok((posterior, Evidence::new(poe)?))
    }

    /// Total mass of values satisfying `predicate`.
    pub fn prob_of<F>(&self, mut predicate: F) -> f64
    where
        F: FnMut(&T) -> bool,
    {
        self.entries
            .iter()
            .filter(|(v, _)| predicate(v))
            .map(|(_, w)| w)
            .sum()
    }

    /// Draws one value using a single uniform variate from `rng`.
    pub fn sample(&self, rng: &mut RngStream) -> T {
        self.sample_ref(rng).clone()
    }

    pub fn sample_ref(&self, rng: &mut RngStream) -> &T {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (value, weight) in &self.entries {
            acc += weight;
            if u < acc {
                return value;
            }
        }
        // Rounding can leave the cumulative sum a hair below one.
        &self.entries[self.entries.len() - 1].0
    }
}

fn push_merged<T: PartialEq>(entries: &mut Vec<(T, f64)>, value: T, weight: f64) {
    match entries.iter_mut().find(|(v, _)| *v == value) {
        Some(slot) => slot.1 += weight,
        None => entries.push((value, weight)),
    }
}

/// Bernoulli distribution over `{true, false}`; degenerate parameters give a
/// single-entry distribution.
pub fn bernoulli(p: f64) -> Result<FiniteDist<bool>, ProbError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ProbError::OutOfRange(p));
    }
    FiniteDist::from_normalized(vec![(true, p), (false, 1.0 - p)])
}

/// Rendering parameters for [`histogram_text`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramStyle {
    /// Percentage points represented by one `#`.
    pub percent_per_mark: f64,
    /// Longest bar printed.
    pub max_width: usize,
}

impl Default for HistogramStyle {
    fn default() -> Self {
        HistogramStyle {
            percent_per_mark: 7.5,
            max_width: 13,
        }
    }
}

/// One line per entry: `<name> <percent>% <bar>`.
///
/// ```
/// use korra_core::prob::{histogram_text, FiniteDist, HistogramStyle};
///
/// let d = FiniteDist::from_weighted([("MakeSuggestion", 0.375), ("Other", 0.625)]).unwrap();
/// let text = histogram_text(&d, &HistogramStyle::default());
/// assert_eq!(text.lines().next(), Some("MakeSuggestion 37.5% #####"));
/// ```
pub fn histogram_text<T: fmt::Display + Clone + PartialEq>(
    dist: &FiniteDist<T>,
    style: &HistogramStyle,
) -> String {
    dist.entries()
        .iter()
        .map(|(name, weight)| histogram_line(&name.to_string(), *weight, style))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn histogram_line(name: &str, weight: f64, style: &HistogramStyle) -> String {
    let percent = weight * 100.0;
    let mut marks = (percent / style.percent_per_mark).round() as usize;
    if percent > 0.0 {
        marks = marks.max(1);
    }
    marks = marks.min(style.max_width);
    format!("{name} {}% {}", format_significant(percent, 3), "#".repeat(marks))
}

/// Formats `x` with `digits` significant digits, e.g. 37.5, 0.791, 100.
pub fn format_significant(x: f64, digits: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = |v: f64| (digits - 1 - v.abs().log10().floor() as i32).max(0) as usize;
    let first = format!("{:.*}", decimals(x), x);
    // Rounding may carry into a new leading digit (99.96 -> 100.0).
    let rounded: f64 = first.parse().unwrap_or(x);
    format!("{:.*}", decimals(rounded), rounded)
}

/// A labelled, seeded random stream.
///
/// ```
/// use korra_core::prob::RngStream;
/// use rand::Rng;
///
/// let mut a = RngStream::new(7, "content");
/// let mut b = RngStream::new(7, "content");
/// let xs: Vec<u64> = (0..4).map(|_| a.random()).collect();
/// let ys: Vec<u64> = (0..4).map(|_| b.random()).collect();
/// assert_eq!(xs, ys);
/// ```
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label.as_bytes()));
        RngStream {
            seed,
            label: label.to_owned(),
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
