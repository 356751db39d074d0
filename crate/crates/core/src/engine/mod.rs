//! The coarse, time-stepped Level-0 engine.
//!
//! Each timestep runs, per logical process: deliver and relay the copies
//! sent during the previous timestep, generate new messages, move, and
//! migrate across stripes. After a barrier, step 5 drives the Level-1
//! sessions, concurrently across LPs, and a second barrier closes the step.

mod lp;
mod partition;
mod session;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use lp::{DeliveryRecord, GenerationRecord, LogicalProcess};
pub use partition::Partition;

use lp::{Agent, LocalOutput, StepCtx};
use session::{L1Ctx, L1Output};

use crate::config::{ConfigError, SimConfig, SpawnTrigger};
use crate::coord::{own_peak_rss, CoordError, Counters, L1Launcher, DEFAULT_TIMEOUT};
use crate::dissemination::PbbParams;
use crate::metrics::{InstanceMetrics, MessageTotals, RunMetrics};
use crate::mobility::{assign_mobility, random_position, SpeedRange};
use crate::model::{Entity, EntityId, EntityKind, EntityStatus, InstanceId, Position, ToroidalWorld};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{instance}: LP {lp_id} has {available} active entities, {requested} requested")]
    InsufficientEntities {
        instance: InstanceId,
        lp_id: usize,
        requested: usize,
        available: usize,
    },
    #[error("{instance}: session failed: {source}")]
    Session {
        instance: InstanceId,
        #[source]
        source: CoordError,
    },
    #[error("{instance}: reintegration failed: {detail}")]
    Reintegration { instance: InstanceId, detail: String },
    #[error("LPs disagree on the barrier epoch: {0:?}")]
    Barrier(Vec<u64>),
    #[error("all {0} timesteps have already run")]
    Finished(u32),
}

impl EngineError {
    /// The Level-1 instance involved, if any.
    pub fn instance(&self) -> Option<InstanceId> {
        match self {
            EngineError::InsufficientEntities { instance, .. }
            | EngineError::Session { instance, .. }
            | EngineError::Reintegration { instance, .. } => Some(*instance),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub launcher: L1Launcher,
    pub session_timeout: Duration,
    /// Keep a log of every first delivery and every generated message.
    pub record_deliveries: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            launcher: L1Launcher::InProcess,
            session_timeout: DEFAULT_TIMEOUT,
            record_deliveries: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimestepReport {
    pub timestep: u32,
    pub messages: MessageTotals,
    /// Longest relay chain among copies received this timestep.
    pub max_hops: u32,
    /// Received copies whose trace and TTL disagree with the configured TTL.
    pub hop_violations: u64,
    pub active: usize,
    pub delegated: usize,
    /// Seconds each LP spent in steps 1 to 4.
    pub lp_wct: Vec<f64>,
    /// Seconds of step 5, zero when no session was touched.
    pub l1_wct: f64,
    pub l1_counters: Counters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntitySnapshot {
    pub id: EntityId,
    pub position: Position,
    pub kind: EntityKind,
    pub status: EntityStatus,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<TimestepReport>,
    pub metrics: RunMetrics,
    /// Final entity states, in id order.
    pub entities: Vec<EntitySnapshot>,
    pub deliveries: Vec<DeliveryRecord>,
    pub generations: Vec<GenerationRecord>,
}

/// Places and assigns mobility to `config.num_ses` entities. Entity ids are
/// `0..num_ses`.
pub fn populate(config: &SimConfig) -> Vec<Entity> {
    let world = config.world();
    let speeds = SpeedRange {
        min: config.speed_min,
        max: config.speed_max,
    };
    let mut place = stream(config.seed, Stream::Placement, 0);
    let positions: Vec<Position> = (0..config.num_ses).map(|_| random_position(&world, &mut place)).collect();
    let mut assign = stream(config.seed, Stream::MobilityAssignment, 0);
    let states = assign_mobility(&world, config.num_ses, config.mobile_fraction, speeds, &mut assign);
    positions
        .into_iter()
        .zip(states)
        .enumerate()
        .map(|(i, (position, mobility))| Entity {
            id: EntityId(i as u64),
            position,
            kind: mobility.kind(),
            mobility,
            cache: crate::dissemination::MessageCache::new(config.cache_capacity),
            status: EntityStatus::Active,
        })
        .collect()
}

/// Distributes entities over `config.num_lps` stripes by position.
pub fn partition(config: &SimConfig, entities: Vec<Entity>) -> Vec<LogicalProcess> {
    let world = config.world();
    let p = Partition::new(config.num_lps, world.width());
    let agents = entities
        .into_iter()
        .map(|e| {
            let mut a = Agent::new(config.seed, e.id, world.wrap(e.position), e.mobility, 0);
            a.entity = Entity {
                position: a.entity.position,
                ..e
            };
            a
        })
        .collect();
    build_lps(&p, agents)
}

fn build_lps(p: &Partition, agents: Vec<Agent>) -> Vec<LogicalProcess> {
    let mut lps: Vec<LogicalProcess> = (0..p.len()).map(|i| LogicalProcess::new(i, p.bounds(i))).collect();
    let mut buckets: Vec<Vec<Agent>> = (0..p.len()).map(|_| Vec::new()).collect();
    for a in agents {
        buckets[p.stripe_of(a.entity.position.x)].push(a);
    }
    for (lp, b) in lps.iter_mut().zip(buckets) {
        lp.adopt(b);
    }
    lps
}

/// Runs `f` on every LP, one scoped thread per LP when there are several.
fn on_each_lp<R, F>(lps: &mut [LogicalProcess], f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut LogicalProcess) -> R + Sync,
{
    if lps.len() == 1 {
        return vec![f(&mut lps[0])];
    }
    thread::scope(|s| {
        let handles: Vec<_> = lps.iter_mut().map(|lp| s.spawn(|| f(lp))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    })
}

pub struct Engine {
    config: SimConfig,
    world: ToroidalWorld,
    partition: Partition,
    params: PbbParams,
    options: EngineOptions,
    tags: Arc<[u8]>,
    lps: Vec<LogicalProcess>,
    triggers: BTreeMap<u32, Vec<(InstanceId, SpawnTrigger)>>,
    t: u32,
    started: Instant,
    l1_blocked: f64,
    totals: MessageTotals,
    instances: Vec<InstanceMetrics>,
    deliveries: Vec<DeliveryRecord>,
    generations: Vec<GenerationRecord>,
}

impl Engine {
    pub fn new(config: SimConfig, options: EngineOptions) -> Result<Self, EngineError> {
        let started = Instant::now();
        config.validate()?;
        let world = config.world();
        let partition = Partition::new(config.num_lps, world.width());
        let agents = populate(&config)
            .into_iter()
            .map(|e| Agent::new(config.seed, e.id, e.position, e.mobility, config.cache_capacity))
            .collect();
        let lps = build_lps(&partition, agents);

        let mut triggers: BTreeMap<u32, Vec<(InstanceId, SpawnTrigger)>> = BTreeMap::new();
        for (i, t) in config.l1_schedule.iter().enumerate() {
            triggers.entry(t.at_timestep).or_default().push((InstanceId(i as u64), *t));
        }
        // Eager feasibility check against the initial population.
        let mut demand: BTreeMap<(u32, usize), usize> = BTreeMap::new();
        for (index, t) in config.l1_schedule.iter().enumerate() {
            let d = demand.entry((t.at_timestep, t.lp_id)).or_default();
            *d += t.entity_count;
            let available = lps[t.lp_id].active_count();
            if *d > available {
                return Err(ConfigError::Trigger {
                    index,
                    reason: format!(
                        "timestep {} asks LP {} for {} entities in total, it starts with {}",
                        t.at_timestep, t.lp_id, d, available
                    ),
                }
                .into());
            }
        }

        Ok(Self {
            params: PbbParams::from(&config),
            world,
            partition,
            options,
            tags: Arc::from(&b"iot"[..]),
            lps,
            triggers,
            t: 0,
            started,
            l1_blocked: 0.0,
            totals: MessageTotals::default(),
            instances: Vec::new(),
            deliveries: Vec::new(),
            generations: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn world(&self) -> &ToroidalWorld {
        &self.world
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn logical_processes(&self) -> &[LogicalProcess] {
        &self.lps
    }

    /// The next timestep to run.
    pub fn timestep(&self) -> u32 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.total_timesteps
    }

    pub fn entities(&self) -> Vec<EntitySnapshot> {
        let mut v: Vec<EntitySnapshot> = self
            .lps
            .iter()
            .flat_map(|lp| lp.entities())
            .map(|e| EntitySnapshot {
                id: e.id,
                position: e.position,
                kind: e.kind,
                status: e.status,
            })
            .collect();
        v.sort_by_key(|e| e.id);
        v
    }

    fn step_ctx(&self) -> StepCtx<'_> {
        StepCtx {
            world: &self.world,
            partition: &self.partition,
            params: self.params,
            range: self.config.interaction_range,
            speeds: SpeedRange {
                min: self.config.speed_min,
                max: self.config.speed_max,
            },
            message_rate: self.config.message_rate,
            tags: Arc::clone(&self.tags),
            record: self.options.record_deliveries,
        }
    }

    fn l1_ctx(&self) -> L1Ctx<'_> {
        L1Ctx {
            world: &self.world,
            stripe_width: self.partition.stripe_width(),
            seed: self.config.seed,
            grid_side: self.config.l1_grid_side,
            fine_steps: self.config.l1_fine_steps_per_timestep,
            session_timesteps: self.config.l1_session_timesteps,
            launcher: &self.options.launcher,
            timeout: self.options.session_timeout,
        }
    }

    fn check_barrier(&self, expected: u64) -> Result<(), EngineError> {
        if self.lps.iter().all(|lp| lp.epoch() == expected) {
            Ok(())
        } else {
            Err(EngineError::Barrier(self.lps.iter().map(|lp| lp.epoch()).collect()))
        }
    }

    /// Runs one full timestep.
    pub fn advance_timestep(&mut self) -> Result<TimestepReport, EngineError> {
        let t = self.t;
        if self.is_done() {
            return Err(EngineError::Finished(self.config.total_timesteps));
        }
        let result = self.advance_inner(t);
        if result.is_err() {
            self.lps.iter_mut().for_each(LogicalProcess::abort_sessions);
        }
        result
    }

    fn advance_inner(&mut self, t: u32) -> Result<TimestepReport, EngineError> {
        // Steps 1-4.
        let outs: Vec<LocalOutput> = {
            let mut lps = std::mem::take(&mut self.lps);
            let ctx = self.step_ctx();
            let outs = on_each_lp(&mut lps, |lp| lp.local_phase(&ctx, t));
            self.lps = lps;
            outs
        };
        self.check_barrier(2 * t as u64 + 1)?;

        let mut report = TimestepReport {
            timestep: t,
            messages: MessageTotals::default(),
            max_hops: 0,
            hop_violations: 0,
            active: 0,
            delegated: 0,
            lp_wct: Vec::with_capacity(outs.len()),
            l1_wct: 0.0,
            l1_counters: Counters::default(),
        };
        let mut migrants: Vec<Vec<Agent>> = (0..self.lps.len()).map(|_| Vec::new()).collect();
        for out in outs {
            report.messages += out.totals;
            report.max_hops = report.max_hops.max(out.max_hops);
            report.hop_violations += out.hop_violations;
            report.lp_wct.push(out.wct);
            for tx in out.outgoing {
                for lp in self.partition.reachable(tx.from.x, self.config.interaction_range) {
                    self.lps[lp].inbox.push(tx.clone());
                }
            }
            for a in out.migrants {
                migrants[self.partition.stripe_of(a.entity.position.x)].push(a);
            }
            self.deliveries.extend(out.deliveries);
            self.generations.extend(out.generations);
        }
        for (lp, m) in self.lps.iter_mut().zip(migrants) {
            lp.adopt(m);
        }

        // Step 5.
        let due = self.triggers.remove(&t).unwrap_or_default();
        let busy = !due.is_empty() || self.lps.iter().any(|lp| lp.open_sessions() > 0);
        if busy {
            let started = Instant::now();
            let results: Vec<Result<L1Output, EngineError>> = {
                let mut lps = std::mem::take(&mut self.lps);
                let ctx = self.l1_ctx();
                let results = on_each_lp(&mut lps, |lp| {
                    let mine: Vec<_> = due.iter().copied().filter(|(_, tr)| tr.lp_id == lp.lp_id()).collect();
                    lp.l1_phase(&ctx, t, &mine)
                });
                self.lps = lps;
                results
            };
            let elapsed = started.elapsed().as_secs_f64();
            self.l1_blocked += elapsed;
            report.l1_wct = elapsed;
            for r in results {
                let out = r?;
                report.l1_counters += out.step_counters;
                self.instances.extend(out.closed);
            }
            self.rehome();
        } else {
            self.lps.iter_mut().for_each(|lp| lp.epoch += 1);
        }
        self.check_barrier(2 * t as u64 + 2)?;

        report.active = self.lps.iter().map(|lp| lp.active_count()).sum();
        report.delegated = self.lps.iter().map(|lp| lp.delegated_count()).sum();
        self.totals += report.messages;
        self.t += 1;
        Ok(report)
    }

    /// Moves reintegrated entities that landed outside their LP's stripe.
    fn rehome(&mut self) {
        let mut moving: Vec<Vec<Agent>> = (0..self.lps.len()).map(|_| Vec::new()).collect();
        for lp in &mut self.lps {
            let id = lp.lp_id();
            let (stay, go): (Vec<Agent>, Vec<Agent>) = std::mem::take(&mut lp.agents)
                .into_iter()
                .partition(|a| !a.entity.is_active() || self.partition.stripe_of(a.entity.position.x) == id);
            lp.agents = stay;
            for a in go {
                moving[self.partition.stripe_of(a.entity.position.x)].push(a);
            }
        }
        for (lp, m) in self.lps.iter_mut().zip(moving) {
            lp.adopt(m);
        }
    }

    /// Runs all remaining timesteps, then [`finish`](Self::finish).
    pub fn run(mut self) -> Result<RunOutcome, EngineError> {
        let mut reports = Vec::with_capacity((self.config.total_timesteps - self.t) as usize);
        while !self.is_done() {
            reports.push(self.advance_timestep()?);
        }
        let mut out = self.finish()?;
        out.reports = reports;
        Ok(out)
    }

    /// Ends sessions still open after the last timestep and assembles the
    /// run metrics. The returned `reports` is empty; see [`run`](Self::run).
    pub fn finish(mut self) -> Result<RunOutcome, EngineError> {
        let t = self.t;
        if self.lps.iter().any(|lp| lp.open_sessions() > 0) {
            let started = Instant::now();
            let results = {
                let mut lps = std::mem::take(&mut self.lps);
                let ctx = self.l1_ctx();
                let results = on_each_lp(&mut lps, |lp| lp.close_all(&ctx, t));
                self.lps = lps;
                results
            };
            self.l1_blocked += started.elapsed().as_secs_f64();
            for r in results {
                match r {
                    Ok(closed) => self.instances.extend(closed),
                    Err(e) => {
                        self.lps.iter_mut().for_each(LogicalProcess::abort_sessions);
                        return Err(e);
                    }
                }
            }
            self.rehome();
        }
        let entities = self.entities();
        let mut instances = std::mem::take(&mut self.instances);
        instances.sort_by_key(|i| i.instance);
        let total_wct = self.started.elapsed().as_secs_f64();
        let metrics = RunMetrics {
            total_wct,
            l0_only_wct: (total_wct - self.l1_blocked).max(0.0),
            instances,
            peak_rss_l0: own_peak_rss(),
            messages: self.totals,
            config: self.config.clone(),
        };
        let mut deliveries = std::mem::take(&mut self.deliveries);
        deliveries.sort_by_key(|d| (d.timestep, d.msg, d.receiver));
        let mut generations = std::mem::take(&mut self.generations);
        generations.sort_by_key(|g| (g.timestep, g.msg));
        Ok(RunOutcome {
            reports: Vec::new(),
            metrics,
            entities,
            deliveries,
            generations,
        })
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.lps.iter_mut().for_each(LogicalProcess::abort_sessions);
    }
}

/// Builds an engine from `config` and runs it to completion.
pub fn simulate(config: SimConfig, options: EngineOptions) -> Result<RunOutcome, EngineError> {
    Engine::new(config, options)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lps: usize) -> SimConfig {
        SimConfig {
            num_ses: 200,
            total_timesteps: 20,
            num_lps: lps,
            ..SimConfig::default()
        }
    }

    #[test]
    fn static_silent_world_stays_put() {
        let cfg = SimConfig {
            mobile_fraction: 0.0,
            message_rate: 0.0,
            ..small(2)
        };
        let mut e = Engine::new(cfg, EngineOptions::default()).unwrap();
        let before = e.entities();
        let r = e.advance_timestep().unwrap();
        assert_eq!(r.messages, MessageTotals::default());
        assert_eq!((r.active, r.delegated), (200, 0));
        assert_eq!(e.entities(), before);
    }

    #[test]
    fn lps_own_their_stripes() {
        let mut e = Engine::new(small(4), EngineOptions::default()).unwrap();
        for _ in 0..5 {
            e.advance_timestep().unwrap();
            for lp in e.logical_processes() {
                let (x0, x1) = lp.region();
                for ent in lp.entities() {
                    assert!(ent.position.x >= x0 - 1e-9 && ent.position.x < x1 + 1e-9);
                }
                assert_eq!(lp.epoch(), 2 * e.timestep() as u64);
            }
        }
    }

    #[test]
    fn partition_half_open() {
        let cfg = SimConfig {
            num_ses: 100,
            num_lps: 4,
            ..SimConfig::default()
        };
        let w = cfg.world().width();
        let mut ents = populate(&cfg);
        ents[0].position = Position::new(w / 2.0, 1.0);
        let lps = partition(&cfg, ents);
        assert_eq!(lps.len(), 4);
        assert!(lps[2].entities().any(|e| e.id == EntityId(0)));
        assert_eq!(lps.iter().map(|lp| lp.entities().count()).sum::<usize>(), 100);
    }

    #[test]
    fn finished_engine_refuses_more_steps() {
        let mut e = Engine::new(SimConfig { total_timesteps: 1, ..small(1) }, EngineOptions::default()).unwrap();
        e.advance_timestep().unwrap();
        assert!(matches!(e.advance_timestep(), Err(EngineError::Finished(1))));
    }

    #[test]
    fn oversized_trigger_rejected_eagerly() {
        let cfg = SimConfig {
            l1_schedule: vec!["3:1:150".parse().unwrap()],
            ..small(2)
        };
        assert!(matches!(
            Engine::new(cfg, EngineOptions::default()),
            Err(EngineError::Config(ConfigError::Trigger { index: 0, .. }))
        ));
    }
}
