//! Policy-gradient centroid updates: reward, score, match probability and
//! the closed-form increment applied to the closest centroid.

use crate::error::{Error, Result};
use crate::neural::check_distribution;
use crate::vecmath;

/// Piecewise-constant learning rate: `values[i]` applies from `starts[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule {
    starts: Vec<usize>,
    values: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(starts: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() || starts[0] != 0 {
            return Err(Error::Config(
                "schedule needs matching breakpoints starting at iteration 0".into(),
            ));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("schedule breakpoints must increase".into()));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("schedule values must be positive".into()));
        }
        Ok(Self { starts, values })
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        Self::new(vec![0], vec![alpha])
    }

    pub fn at(&self, iteration: usize) -> f64 {
        let idx = self.starts.partition_point(|&s| s <= iteration) - 1;
        self.values[idx]
    }

    /// Parses `start:value,start:value,...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut starts = Vec::new();
        let mut values = Vec::new();
        for piece in text.split(',') {
            let (s, v) = piece
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry `{piece}` lacks `:`")))?;
            starts.push(
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad schedule start `{s}`")))?,
            );
            values.push(
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad schedule value `{v}`")))?,
            );
        }
        Self::new(starts, values)
    }

    pub fn format(&self) -> String {
        self.starts
            .iter()
            .zip(&self.values)
            .map(|(s, v)| format!("{s}:{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self::new(vec![0, 1000, 2000], vec![0.1, 0.01, 0.001]).expect("valid default schedule")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RLConfig {
    pub total_iterations: usize,
    pub schedule: AlphaSchedule,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self {
            total_iterations: 10_000,
            schedule: AlphaSchedule::default(),
        }
    }
}

pub fn schedule_alpha(config: &RLConfig, iteration: usize) -> Result<f64> {
    if iteration >= config.total_iterations {
        return Err(Error::OutOfRange(format!(
            "iteration {iteration} of {}",
            config.total_iterations
        )));
    }
    Ok(config.schedule.at(iteration))
}

/// `+1` when the argmax (lowest index on ties) is the true class, else `-1`.
pub fn reward(y_hat: &[f64], true_index: usize) -> Result<f64> {
    check_distribution(y_hat)?;
    check_index(y_hat, true_index)?;
    Ok(if vecmath::argmax(y_hat) == true_index {
        1.0
    } else {
        -1.0
    })
}

pub fn classification_score(y_hat: &[f64], true_index: usize) -> Result<f64> {
    check_distribution(y_hat)?;
    check_index(y_hat, true_index)?;
    Ok(y_hat[true_index])
}

fn check_index(y_hat: &[f64], i: usize) -> Result<()> {
    if i >= y_hat.len() {
        return Err(Error::OutOfRange(format!("class {i} of {}", y_hat.len())));
    }
    Ok(())
}

/// `p = 2·(1 − σ(η))`.
pub fn match_probability(eta: f64) -> f64 {
    let sigma = 1.0 / (1.0 + (-eta).exp());
    2.0 * (1.0 - sigma)
}

/// `Δc = α·r·(z − p)·(ψ − c)`.
pub fn centroid_update(alpha: f64, r: f64, z: f64, p: f64, psi: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if psi.len() != c.len() {
        return Err(Error::ShapeMismatch(format!(
            "ψ has {} entries, centroid {}",
            psi.len(),
            c.len()
        )));
    }
    let scale = alpha * r * (z - p);
    Ok(psi.iter().zip(c).map(|(x, y)| scale * (x - y)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceStep {
    pub reward: f64,
    pub score: f64,
    pub p: f64,
    pub cluster: usize,
    pub delta: Vec<f64>,
}

/// Everything one sample contributes to the centroid update.
pub fn reinforce_step(
    alpha: f64,
    y_hat: &[f64],
    true_index: usize,
    eta_closest: f64,
    cluster: usize,
    psi: &[f64],
    centroid: &[f64],
) -> Result<ReinforceStep> {
    let r = reward(y_hat, true_index)?;
    let z = classification_score(y_hat, true_index)?;
    let p = match_probability(eta_closest);
    let delta = centroid_update(alpha, r, z, p, psi, centroid)?;
    Ok(ReinforceStep {
        reward: r,
        score: z,
        p,
        cluster,
        delta,
    })
}
