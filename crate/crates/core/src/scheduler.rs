//! Container routing and per-worker load tracking.
//!
//! Routing priority: a warm container of the exact predicted size first,
//! then the closest larger warm container (with an exact-size launch kicked
//! off in the background), and a cold container at the function's home
//! server last, probing other workers when the home is full. vCPU and
//! memory loads are tracked independently per worker; idle and launching
//! containers consume nothing.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::Allocation;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("allocation ({vcpus} vCPUs, {memory_mb} MB) exceeds every worker's total capacity")]
    TooLarge { vcpus: u32, memory_mb: u64 },
    #[error("container {0} is not busy")]
    NotBusy(u64),
    #[error("container {0} does not exist")]
    NoSuchContainer(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Cold placements go to the function's home server, probing onward.
    #[default]
    Hashing,
    /// Cold placements fill the lowest-indexed worker to capacity first.
    Packing,
    /// Exact warm reuse only; cold placements go to the worker with the
    /// least allocated memory, ignoring vCPU balance.
    MemoryCentricBaseline,
}

impl SchedulerPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchedulerPolicy::Hashing => "hashing",
            SchedulerPolicy::Packing => "packing",
            SchedulerPolicy::MemoryCentricBaseline => "memory_centric_baseline",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub num_workers: usize,
    /// vCPU oversubscription (admission) limit per worker.
    pub user_cpu: u32,
    /// Physical cores per worker; the denominator of the contention factor.
    pub worker_cores: u32,
    pub worker_memory_mb: u64,
    /// Idle duration after which a warm container is evicted.
    pub keepalive_s: f64,
    pub policy: SchedulerPolicy,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_workers: 16,
            user_cpu: 90,
            worker_cores: 96,
            worker_memory_mb: 128_000,
            keepalive_s: 600.0,
            policy: SchedulerPolicy::Hashing,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerState {
    WarmIdle,
    Busy,
    Launching,
}

#[derive(Debug, Clone)]
pub struct Container {
    pub id: u64,
    pub function: String,
    pub vcpus: u32,
    pub memory_mb: u64,
    pub worker: usize,
    pub state: ContainerState,
    pub idle_since: f64,
    /// True while a cold-started invocation is waiting on this container;
    /// its size is then held as reserved load on the worker.
    pub pending_invocation: bool,
}

/// Decoupled load accounting for one worker. Busy containers count toward
/// the active load; cold containers that will run an invocation when ready
/// count as reserved so admission can never overshoot.
#[derive(Debug, Clone, Default)]
pub struct WorkerState {
    pub active_vcpus: u32,
    pub active_memory_mb: u64,
    pub reserved_vcpus: u32,
    pub reserved_memory_mb: u64,
}

impl WorkerState {
    fn fits(&self, cfg: &ClusterConfig, vcpus: u32, memory_mb: u64) -> bool {
        self.active_vcpus + self.reserved_vcpus + vcpus <= cfg.user_cpu
            && self.active_memory_mb + self.reserved_memory_mb + memory_mb
                <= cfg.worker_memory_mb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementKind {
    WarmExact,
    WarmLarger,
    Cold,
}

impl PlacementKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlacementKind::WarmExact => "warm_exact",
            PlacementKind::WarmLarger => "warm_larger",
            PlacementKind::Cold => "cold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundLaunch {
    pub container_id: u64,
    pub worker: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub kind: PlacementKind,
    pub container_id: u64,
    pub worker: usize,
    /// Present iff `kind` is `WarmLarger`: the exact-size container being
    /// launched off the critical path.
    pub background_launch: Option<BackgroundLaunch>,
}

/// Outcome of a routing attempt. `Queued` means no worker currently has
/// admission headroom; the invocation waits in the cluster FIFO.
#[derive(Debug, Clone, PartialEq)]
pub enum RouteDecision {
    Placed(Placement),
    Queued { fallback_worker: usize },
}

pub struct Cluster {
    pub config: ClusterConfig,
    pub workers: Vec<WorkerState>,
    containers: BTreeMap<u64, Container>,
    next_id: u64,
}

/// Stable FNV-1a hash of the function name, identical across runs and
/// processes, reduced modulo the worker count.
pub fn home_server(function: &str, num_workers: usize) -> usize {
    debug_assert!(num_workers >= 1);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in function.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % num_workers as u64) as usize
}

impl Cluster {
    pub fn new(config: ClusterConfig) -> Self {
        let workers = vec![WorkerState::default(); config.num_workers];
        Self {
            config,
            workers,
            containers: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn container(&self, id: u64) -> Option<&Container> {
        self.containers.get(&id)
    }

    pub fn containers(&self) -> impl Iterator<Item = &Container> {
        self.containers.values()
    }

    pub fn container_count(&self) -> usize {
        self.containers.len()
    }

    fn create_container(
        &mut self,
        function: &str,
        vcpus: u32,
        memory_mb: u64,
        worker: usize,
        pending_invocation: bool,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        if pending_invocation {
            self.workers[worker].reserved_vcpus += vcpus;
            self.workers[worker].reserved_memory_mb += memory_mb;
        }
        self.containers.insert(
            id,
            Container {
                id,
                function: function.to_string(),
                vcpus,
                memory_mb,
                worker,
                state: ContainerState::Launching,
                idle_since: 0.0,
                pending_invocation,
            },
        );
        id
    }

    fn claim_warm(&mut self, id: u64) {
        let c = self.containers.get_mut(&id).expect("warm container exists");
        debug_assert_eq!(c.state, ContainerState::WarmIdle);
        c.state = ContainerState::Busy;
        let (w, v, m) = (c.worker, c.vcpus, c.memory_mb);
        self.workers[w].active_vcpus += v;
        self.workers[w].active_memory_mb += m;
    }

    /// A cold container finished starting with an invocation waiting on it:
    /// its reservation becomes active load.
    pub fn activate_pending(&mut self, id: u64) -> Result<(), RouteError> {
        let c = self
            .containers
            .get_mut(&id)
            .ok_or(RouteError::NoSuchContainer(id))?;
        debug_assert_eq!(c.state, ContainerState::Launching);
        debug_assert!(c.pending_invocation);
        c.state = ContainerState::Busy;
        c.pending_invocation = false;
        let (w, v, m) = (c.worker, c.vcpus, c.memory_mb);
        self.workers[w].reserved_vcpus -= v;
        self.workers[w].reserved_memory_mb -= m;
        self.workers[w].active_vcpus += v;
        self.workers[w].active_memory_mb += m;
        Ok(())
    }

    /// A background launch finished starting: it joins the warm pool idle.
    pub fn finish_background_launch(&mut self, id: u64, now: f64) -> Result<(), RouteError> {
        let c = self
            .containers
            .get_mut(&id)
            .ok_or(RouteError::NoSuchContainer(id))?;
        debug_assert_eq!(c.state, ContainerState::Launching);
        debug_assert!(!c.pending_invocation);
        c.state = ContainerState::WarmIdle;
        c.idle_since = now;
        Ok(())
    }

    /// The invocation in a busy container finished (any way): the container
    /// turns warm idle and stops consuming worker load.
    pub fn on_complete(&mut self, id: u64, now: f64) -> Result<(), RouteError> {
        let c = self
            .containers
            .get_mut(&id)
            .ok_or(RouteError::NoSuchContainer(id))?;
        if c.state != ContainerState::Busy {
            return Err(RouteError::NotBusy(id));
        }
        c.state = ContainerState::WarmIdle;
        c.idle_since = now;
        let (w, v, m) = (c.worker, c.vcpus, c.memory_mb);
        self.workers[w].active_vcpus -= v;
        self.workers[w].active_memory_mb -= m;
        Ok(())
    }

    /// Removes warm-idle containers that have been idle for the keep-alive
    /// duration or longer. Returns the evicted container ids.
    pub fn evict_idle(&mut self, now: f64) -> Vec<u64> {
        let keepalive = self.config.keepalive_s;
        let evicted: Vec<u64> = self
            .containers
            .values()
            .filter(|c| c.state == ContainerState::WarmIdle && now - c.idle_since >= keepalive)
            .map(|c| c.id)
            .collect();
        for id in &evicted {
            self.containers.remove(id);
        }
        evicted
    }

    /// Recomputes every worker's load from its containers and compares with
    /// the running counters.
    pub fn audit(&self) -> bool {
        let mut expect = vec![WorkerState::default(); self.workers.len()];
        for c in self.containers.values() {
            let w = &mut expect[c.worker];
            match c.state {
                ContainerState::Busy => {
                    w.active_vcpus += c.vcpus;
                    w.active_memory_mb += c.memory_mb;
                }
                ContainerState::Launching if c.pending_invocation => {
                    w.reserved_vcpus += c.vcpus;
                    w.reserved_memory_mb += c.memory_mb;
                }
                _ => {}
            }
        }
        self.workers.iter().zip(&expect).all(|(a, b)| {
            a.active_vcpus == b.active_vcpus
                && a.active_memory_mb == b.active_memory_mb
                && a.reserved_vcpus == b.reserved_vcpus
                && a.reserved_memory_mb == b.reserved_memory_mb
        })
    }

    /// True while any worker stays within its admission limits.
    pub fn within_capacity(&self) -> bool {
        self.workers.iter().all(|w| {
            w.active_vcpus + w.reserved_vcpus <= self.config.user_cpu
                && w.active_memory_mb + w.reserved_memory_mb <= self.config.worker_memory_mb
        })
    }

    fn warm_exact_candidate(&self, function: &str, alloc: &Allocation, home: usize) -> Option<u64> {
        self.containers
            .values()
            .filter(|c| {
                c.state == ContainerState::WarmIdle
                    && c.function == function
                    && c.vcpus == alloc.vcpus
                    && c.memory_mb == alloc.memory_mb
                    && self.workers[c.worker].fits(&self.config, c.vcpus, c.memory_mb)
            })
            .min_by_key(|c| (c.worker != home, c.id))
            .map(|c| c.id)
    }

    /// Smallest warm container dominating the request in both dimensions:
    /// minimize the vCPU surplus, then the memory surplus.
    fn warm_larger_candidate(&self, function: &str, alloc: &Allocation, home: usize) -> Option<u64> {
        self.containers
            .values()
            .filter(|c| {
                c.state == ContainerState::WarmIdle
                    && c.function == function
                    && c.vcpus >= alloc.vcpus
                    && c.memory_mb >= alloc.memory_mb
                    && !(c.vcpus == alloc.vcpus && c.memory_mb == alloc.memory_mb)
                    && self.workers[c.worker].fits(&self.config, c.vcpus, c.memory_mb)
            })
            .min_by_key(|c| {
                (
                    c.vcpus - alloc.vcpus,
                    c.memory_mb - alloc.memory_mb,
                    c.worker != home,
                    c.id,
                )
            })
            .map(|c| c.id)
    }

    /// Worker that receives a cold placement under the given policy, if any
    /// currently has admission headroom.
    fn cold_worker(&self, alloc: &Allocation, home: usize, policy: SchedulerPolicy) -> Option<usize> {
        let n = self.workers.len();
        let fits = |i: usize| self.workers[i].fits(&self.config, alloc.vcpus, alloc.memory_mb);
        match policy {
            SchedulerPolicy::Hashing => (0..n).map(|k| (home + k) % n).find(|&i| fits(i)),
            SchedulerPolicy::Packing => (0..n).find(|&i| fits(i)),
            SchedulerPolicy::MemoryCentricBaseline => (0..n)
                .filter(|&i| fits(i))
                .min_by_key(|&i| {
                    (
                        self.workers[i].active_memory_mb + self.workers[i].reserved_memory_mb,
                        i,
                    )
                }),
        }
    }

    /// Routes one allocated invocation. Mutates the cluster: claims the warm
    /// container or creates the cold one, and creates the background launch
    /// for warm-larger placements.
    pub fn route(
        &mut self,
        function: &str,
        alloc: &Allocation,
        rng: &mut impl Rng,
    ) -> Result<RouteDecision, RouteError> {
        let cfg = &self.config;
        if alloc.vcpus > cfg.user_cpu || alloc.memory_mb > cfg.worker_memory_mb {
            return Err(RouteError::TooLarge {
                vcpus: alloc.vcpus,
                memory_mb: alloc.memory_mb,
            });
        }
        let policy = cfg.policy;
        let home = home_server(function, self.workers.len());

        if let Some(id) = self.warm_exact_candidate(function, alloc, home) {
            let worker = self.containers[&id].worker;
            self.claim_warm(id);
            return Ok(RouteDecision::Placed(Placement {
                kind: PlacementKind::WarmExact,
                container_id: id,
                worker,
                background_launch: None,
            }));
        }

        // The baseline reuses exact matches only and never pre-launches.
        if policy != SchedulerPolicy::MemoryCentricBaseline {
            if let Some(id) = self.warm_larger_candidate(function, alloc, home) {
                let worker = self.containers[&id].worker;
                self.claim_warm(id);
                let bg_worker = if self.workers[worker].fits(&self.config, alloc.vcpus, alloc.memory_mb)
                {
                    worker
                } else {
                    home
                };
                let bg_id =
                    self.create_container(function, alloc.vcpus, alloc.memory_mb, bg_worker, false);
                return Ok(RouteDecision::Placed(Placement {
                    kind: PlacementKind::WarmLarger,
                    container_id: id,
                    worker,
                    background_launch: Some(BackgroundLaunch {
                        container_id: bg_id,
                        worker: bg_worker,
                    }),
                }));
            }
        }

        if let Some(worker) = self.cold_worker(alloc, home, policy) {
            let id = self.create_container(function, alloc.vcpus, alloc.memory_mb, worker, true);
            return Ok(RouteDecision::Placed(Placement {
                kind: PlacementKind::Cold,
                container_id: id,
                worker,
                background_launch: None,
            }));
        }

        Ok(RouteDecision::Queued {
            fallback_worker: rng.gen_range(0..self.workers.len()),
        })
    }
}
