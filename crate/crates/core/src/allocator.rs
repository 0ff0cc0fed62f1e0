//! Per-function resource allocation: a pair of online learners (vCPU and
//! memory) per registered function, the cost functions that turn completed
//! invocations into training signals, confidence gating against defaults,
//! and the memory safeguards.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{CostVector, CsoaaModel, LearnerError};

pub const MB: u64 = 1 << 20;
/// Width of one memory class.
pub const MEM_CLASS_MB: u64 = 128;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("function {0} is not registered")]
    UnknownFunction(String),
    #[error("slo must be positive, got {0}")]
    BadSlo(f64),
    #[error("vCPU cost vector undefined for an OOM-killed outcome")]
    OomOutcome,
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// How slack and deficit translate into cost-vector targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostMode {
    /// Fixed seconds per class step: one class down per `cost_y_s` of slack,
    /// one class up per `cost_x_s` of deficit.
    #[default]
    Absolute,
    /// Class steps scale with the slack or deficit as a fraction of the SLO.
    Proportional,
}

/// Allocator hyperparameters. Defaults follow the evaluated system
/// configuration; every field is overridable through the run config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocatorConfig {
    /// Completed feedbacks before vCPU predictions replace the default.
    pub vcpu_conf_threshold: u64,
    /// Completed feedbacks before memory predictions replace the default.
    pub mem_conf_threshold: u64,
    pub default_vcpus: u32,
    pub default_mem_mb: u64,
    /// Seconds of deficit per added vCPU class in absolute mode (X).
    pub cost_x_s: f64,
    /// Seconds of slack per removed vCPU class in absolute mode (Y).
    pub cost_y_s: f64,
    pub vcpu_alpha_over: f64,
    pub vcpu_alpha_under: f64,
    pub mem_alpha_over: f64,
    pub mem_alpha_under: f64,
    pub cost_mode: CostMode,
    /// Number of vCPU classes.
    pub c_max: u32,
    /// Largest learnable memory allocation; must be a multiple of 128.
    pub mem_max_mb: u64,
    pub learning_rate: f64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            vcpu_conf_threshold: 10,
            mem_conf_threshold: 20,
            default_vcpus: 16,
            default_mem_mb: 4096,
            cost_x_s: 0.5,
            cost_y_s: 1.5,
            vcpu_alpha_over: 1.0,
            vcpu_alpha_under: 2.0,
            mem_alpha_over: 1.0,
            mem_alpha_under: 4.0,
            cost_mode: CostMode::Absolute,
            c_max: 32,
            mem_max_mb: 4096,
            learning_rate: 0.1,
        }
    }
}

impl AllocatorConfig {
    pub fn mem_classes(&self) -> usize {
        (self.mem_max_mb / MEM_CLASS_MB) as usize
    }
}

/// A decoupled (vCPU, memory) decision for one invocation. A `false`
/// provenance flag means the value is the configured default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub vcpus: u32,
    pub memory_mb: u64,
    pub vcpu_from_model: bool,
    pub mem_from_model: bool,
}

/// Everything the allocator learns from about one finished invocation.
/// `exec_s` excludes cold start; `e2e_s` includes queueing, cold start,
/// and any charged featurization latency.
#[derive(Debug, Clone)]
pub struct InvocationOutcome {
    pub function: String,
    pub features: Vec<f64>,
    pub slo_s: f64,
    pub alloc: Allocation,
    pub exec_s: f64,
    pub e2e_s: f64,
    pub max_vcpus_used: f64,
    pub peak_mem_mb: f64,
    pub oom_killed: bool,
}

/// Learner pair and feedback counter for one registered function.
#[derive(Debug)]
pub struct FunctionLearnerState {
    pub vcpu_model: CsoaaModel,
    pub mem_model: CsoaaModel,
    pub completed_feedbacks: u64,
}

pub struct Allocator {
    config: AllocatorConfig,
    functions: HashMap<String, FunctionLearnerState>,
}

impl Allocator {
    pub fn new(config: AllocatorConfig) -> Self {
        Self {
            config,
            functions: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AllocatorConfig {
        &self.config
    }

    /// Creates the per-function learner pair. `feature_dim` is the length of
    /// the featurized input vector; the vCPU model gets one extra dimension
    /// for the SLO, the memory model does not see the SLO at all.
    pub fn register_function(&mut self, name: &str, feature_dim: usize) -> Result<(), AllocError> {
        let vcpu_model = CsoaaModel::new(
            self.config.c_max as usize,
            feature_dim + 1,
            self.config.learning_rate,
        )?;
        let mem_model = CsoaaModel::new(
            self.config.mem_classes(),
            feature_dim,
            self.config.learning_rate,
        )?;
        self.functions.insert(
            name.to_string(),
            FunctionLearnerState {
                vcpu_model,
                mem_model,
                completed_feedbacks: 0,
            },
        );
        Ok(())
    }

    pub fn state(&self, function: &str) -> Option<&FunctionLearnerState> {
        self.functions.get(function)
    }

    /// Decides the invocation's allocation. Each resource type falls back to
    /// its default until the function has accrued enough completed feedbacks;
    /// model memory predictions additionally pass through the input-size
    /// safeguard. The last feature element is the input byte size.
    pub fn allocate(
        &mut self,
        function: &str,
        features: &[f64],
        slo_s: f64,
    ) -> Result<Allocation, AllocError> {
        if !(slo_s > 0.0) {
            return Err(AllocError::BadSlo(slo_s));
        }
        let config = self.config.clone();
        let state = self
            .functions
            .get_mut(function)
            .ok_or_else(|| AllocError::UnknownFunction(function.to_string()))?;

        let (vcpus, vcpu_from_model) = if state.completed_feedbacks >= config.vcpu_conf_threshold {
            let mut with_slo = features.to_vec();
            with_slo.push(slo_s);
            (state.vcpu_model.predict(&with_slo)? as u32, true)
        } else {
            (config.default_vcpus, false)
        };

        let (memory_mb, mem_from_model) = if state.completed_feedbacks >= config.mem_conf_threshold
        {
            let class = state.mem_model.predict(features)? as u64;
            let predicted_mb = class * MEM_CLASS_MB;
            let input_bytes = features.last().copied().unwrap_or(0.0).max(0.0) as u64;
            let final_mb = safeguard_memory(predicted_mb, input_bytes, config.default_mem_mb);
            (final_mb, final_mb == predicted_mb)
        } else {
            (config.default_mem_mb, false)
        };

        Ok(Allocation {
            vcpus,
            memory_mb,
            vcpu_from_model,
            mem_from_model,
        })
    }

    /// Closes the feedback loop for one completed invocation: trains the
    /// memory model always, the vCPU model unless the invocation was
    /// OOM-killed, and bumps the confidence counter.
    pub fn feedback(&mut self, outcome: &InvocationOutcome) -> Result<(), AllocError> {
        let config = self.config.clone();
        let state = self
            .functions
            .get_mut(&outcome.function)
            .ok_or_else(|| AllocError::UnknownFunction(outcome.function.clone()))?;

        if !outcome.oom_killed {
            let costs = build_vcpu_cost_vector(outcome, config.cost_mode, &config)?;
            let mut with_slo = outcome.features.clone();
            with_slo.push(outcome.slo_s);
            state.vcpu_model.update(&with_slo, &costs)?;
        }
        let mem_costs = build_memory_cost_vector(outcome, &config);
        state.mem_model.update(&outcome.features, &mem_costs)?;
        state.completed_feedbacks += 1;
        Ok(())
    }
}

/// Falls back to the default allocation when the prediction does not exceed
/// the total input size; a model cannot have learned a footprint smaller
/// than the data it reads.
pub fn safeguard_memory(predicted_mb: u64, input_total_bytes: u64, default_mem_mb: u64) -> u64 {
    if predicted_mb * MB <= input_total_bytes {
        default_mem_mb
    } else {
        predicted_mb
    }
}

fn linear_costs(target: usize, num_classes: usize, alpha_over: f64, alpha_under: f64) -> CostVector {
    let costs = (1..=num_classes)
        .map(|c| {
            if c >= target {
                1.0 + alpha_over * (c - target) as f64
            } else {
                1.0 + alpha_under * (target - c) as f64
            }
        })
        .collect();
    CostVector::new(costs)
}

fn clamp_class(t: i64, max: usize) -> usize {
    t.clamp(1, max as i64) as usize
}

/// Target vCPU class for a completed, non-OOM invocation.
///
/// SLO met: step down with the slack (possibly by zero classes). SLO
/// violated with low utilization (or an effectively single-threaded
/// invocation): the class actually used, never more. SLO violated at high
/// utilization: step up from the used class with the deficit.
pub fn vcpu_target_class(
    outcome: &InvocationOutcome,
    mode: CostMode,
    config: &AllocatorConfig,
) -> Result<usize, AllocError> {
    if outcome.oom_killed {
        return Err(AllocError::OomOutcome);
    }
    let alloc = outcome.alloc.vcpus as i64;
    let used = outcome.max_vcpus_used;
    let c_max = config.c_max as usize;
    if outcome.exec_s <= outcome.slo_s {
        let slack = outcome.slo_s - outcome.exec_s;
        let down = match mode {
            CostMode::Absolute => (slack / config.cost_y_s).floor() as i64,
            CostMode::Proportional => (alloc as f64 * slack / outcome.slo_s).floor() as i64,
        };
        Ok(clamp_class(alloc - down, c_max))
    } else if used < 0.9 * alloc as f64 || used <= 1.0 {
        // The violation was not caused by the vCPU allocation.
        Ok(clamp_class(used.ceil() as i64, c_max))
    } else {
        let deficit = outcome.exec_s - outcome.slo_s;
        let base = used.ceil() as i64;
        let up = match mode {
            CostMode::Absolute => (deficit / config.cost_x_s).ceil() as i64,
            CostMode::Proportional => (base as f64 * deficit / outcome.slo_s).ceil() as i64,
        };
        Ok(clamp_class(base + up.max(1), c_max))
    }
}

/// Per-class vCPU costs: 1 at the target, growing linearly away from it with
/// underpredictions penalized more steeply than overpredictions.
pub fn build_vcpu_cost_vector(
    outcome: &InvocationOutcome,
    mode: CostMode,
    config: &AllocatorConfig,
) -> Result<CostVector, AllocError> {
    let target = vcpu_target_class(outcome, mode, config)?;
    Ok(linear_costs(
        target,
        config.c_max as usize,
        config.vcpu_alpha_over,
        config.vcpu_alpha_under,
    ))
}

/// Target memory class: the observed peak rounded up to the next 128MB
/// class, or double the killed allocation's class when the true need went
/// unobserved.
pub fn memory_target_class(outcome: &InvocationOutcome, config: &AllocatorConfig) -> usize {
    let classes = config.mem_classes();
    if outcome.oom_killed {
        let alloc_class = (outcome.alloc.memory_mb / MEM_CLASS_MB) as i64;
        clamp_class(2 * alloc_class, classes)
    } else {
        clamp_class(
            (outcome.peak_mem_mb / MEM_CLASS_MB as f64).ceil() as i64,
            classes,
        )
    }
}

pub fn build_memory_cost_vector(outcome: &InvocationOutcome, config: &AllocatorConfig) -> CostVector {
    linear_costs(
        memory_target_class(outcome, config),
        config.mem_classes(),
        config.mem_alpha_over,
        config.mem_alpha_under,
    )
}
