//! Controller-side estimation from delayed, possibly out-of-order samples.
//!
//! A sample of `x_s` sent on link `ℓ_d` reaches the controller at `s + d`.
//! The controller keeps the freshest delivered sample and propagates it
//! forward through the model with the inputs it already applied.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lti::{LinkSelection, PlantModel};

/// A state sample as it sits in the controller's buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSample {
    pub stamp: usize,
    pub value: DVector<f64>,
    pub arrival: usize,
}

impl ReceivedSample {
    pub fn new(stamp: usize, value: DVector<f64>, link: LinkSelection) -> Self {
        Self {
            stamp,
            arrival: stamp + link.delay(),
            value,
        }
    }
}

/// `true` when a sample sent on `link` has arrived `age` steps after sampling.
pub fn arrived_within(link: LinkSelection, age: usize) -> bool {
    link.delay() <= age
}

/// Freshest-sample selector at time `k`.
///
/// `allocations[s]` is the link that carried sample `s`; only `s ≤ k` are read.
/// Entry `j` is 1 when `x_{k−j}` is the freshest sample at the controller.
/// For `k < D` nothing may have arrived yet, which is signalled by entry
/// `k + 1` (the prior mean).
pub fn b_coefficients(allocations: &[LinkSelection], k: usize, max_delay: usize) -> Vec<u8> {
    assert!(allocations.len() > k, "allocation history must cover time {k}");
    let mut b = vec![0u8; max_delay + 1];
    b[freshest_age(allocations, k, max_delay)] = 1;
    b
}

/// Index of the one entry set by [`b_coefficients`].
pub fn freshest_age(allocations: &[LinkSelection], k: usize, max_delay: usize) -> usize {
    (0..=k.min(max_delay))
        .find(|&j| arrived_within(allocations[k - j], j))
        .unwrap_or(k + 1)
}

/// Everything a single controller knows at time `k`.
#[derive(Debug, Clone)]
pub struct ControllerInfo {
    max_delay: usize,
    requests: Vec<LinkSelection>,
    allocations: Vec<LinkSelection>,
    inputs: Vec<DVector<f64>>,
    freshest: Option<ReceivedSample>,
    estimate: Option<DVector<f64>>,
}

impl ControllerInfo {
    pub fn new(max_delay: usize) -> Self {
        Self {
            max_delay,
            requests: Vec::new(),
            allocations: Vec::new(),
            inputs: Vec::new(),
            freshest: None,
            estimate: None,
        }
    }

    /// Acknowledgement of the request and allocation for the next step.
    pub fn acknowledge(&mut self, requested: LinkSelection, allocated: LinkSelection) {
        self.requests.push(requested);
        self.allocations.push(allocated);
    }

    pub fn record_input(&mut self, u: DVector<f64>) {
        self.inputs.push(u);
    }

    pub fn requests(&self) -> &[LinkSelection] {
        &self.requests
    }

    pub fn allocations(&self) -> &[LinkSelection] {
        &self.allocations
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn freshest(&self) -> Option<&ReceivedSample> {
        self.freshest.as_ref()
    }

    pub fn last_estimate(&self) -> Option<&DVector<f64>> {
        self.estimate.as_ref()
    }

    /// Keeps `sample` only if it is fresher than what the buffer holds.
    /// Returns whether it was kept.
    pub fn ingest(&mut self, sample: ReceivedSample, now: usize) -> Result<bool> {
        if sample.arrival != now {
            return Err(Error::internal(format!(
                "sample {} arrives at {} but was ingested at {now}",
                sample.stamp, sample.arrival
            )));
        }
        let fresher = self.freshest.as_ref().is_none_or(|f| sample.stamp > f.stamp);
        if fresher {
            self.freshest = Some(sample);
        }
        Ok(fresher)
    }

    pub fn b_coefficients(&self, k: usize) -> Vec<u8> {
        b_coefficients(&self.allocations, k, self.max_delay)
    }

    /// Conditional mean of `x_k` given the freshest sample and past inputs.
    ///
    /// Fails if the buffer disagrees with what the acknowledged allocations
    /// imply, which would mean the delivery bookkeeping is broken.
    pub fn estimate(&mut self, model: &PlantModel, k: usize) -> Result<DVector<f64>> {
        if self.allocations.len() <= k {
            return Err(Error::internal(format!("no allocation acknowledged for time {k}")));
        }
        if self.inputs.len() < k {
            return Err(Error::internal(format!("inputs before time {k} are missing")));
        }
        let age = freshest_age(&self.allocations, k, self.max_delay);
        let (start, mut x) = if age == k + 1 {
            if let Some(s) = &self.freshest {
                return Err(Error::internal(format!(
                    "selector says nothing arrived by {k}, buffer holds sample {}",
                    s.stamp
                )));
            }
            (0, model.mean_x0.clone())
        } else {
            match &self.freshest {
                Some(s) if s.stamp == k - age => (s.stamp, s.value.clone()),
                other => {
                    return Err(Error::internal(format!(
                        "selector expects sample {} at time {k}, buffer holds {:?}",
                        k - age,
                        other.as_ref().map(|s| s.stamp)
                    )))
                }
            }
        };
        for u in &self.inputs[start..k] {
            x = &model.a * x + &model.b * u;
        }
        self.estimate = Some(x.clone());
        Ok(x)
    }
}
