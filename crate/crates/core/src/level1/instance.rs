//! A Level-1 instance: fixed radio grid plus delegated pedestrians that ask
//! the grid for their destination and walk to it.
//!
//! Time is counted in fine steps ("ticks"). Bootstrap runs `warmup_ticks`
//! of grid housekeeping; every coarse step afterwards covers exactly
//! `fine_steps` ticks.

use rand::Rng;
use thiserror::Error;

use super::queue::{EventQueue, QueueError, Tick};
use super::routing::{GridScenario, NodeId, Router, RoutingEvent};
use crate::coord::{Counters, EntityRecord, InitPayload};
use crate::model::{EntityId, EntityKind, InstanceId, Position};
use crate::rng::{stream, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum L1Error {
    #[error("instance {instance}: {source}")]
    Queue {
        instance: InstanceId,
        #[source]
        source: QueueError,
    },
    #[error("invalid INIT: {0}")]
    BadInit(String),
}

/// Instance knobs that are not carried by INIT.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Params {
    pub warmup_ticks: Tick,
    /// Pedestrian speed in spaceunits per coarse timestep.
    pub walk_speed: f64,
    pub arrival_radius: f64,
    pub max_pending_events: usize,
}

impl Default for L1Params {
    fn default() -> Self {
        Self {
            warmup_ticks: 10,
            walk_speed: 1.4,
            arrival_radius: 1.0,
            max_pending_events: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub position: Position,
    /// Destination position, known once the route reply has arrived.
    pub target: Option<Position>,
    pub hops: Option<u32>,
    pub arrived: bool,
    pub timed_out: bool,
    pub query_tick: Option<Tick>,
    pub reply_tick: Option<Tick>,
    pub arrival_tick: Option<Tick>,
}

impl L1Entity {
    pub fn from_record(r: &EntityRecord) -> Self {
        Self {
            id: r.id,
            kind: r.kind,
            position: Position::new(r.x, r.y),
            target: None,
            hops: None,
            arrived: false,
            timed_out: false,
            query_tick: None,
            reply_tick: None,
            arrival_tick: None,
        }
    }

    pub fn record(&self) -> EntityRecord {
        EntityRecord {
            id: self.id,
            x: self.position.x,
            y: self.position.y,
            kind: self.kind,
            arrived: self.arrived,
            hops: self.hops,
            timed_out: self.timed_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guidance {
    /// No destination yet; the entity keeps waiting for the reply.
    AwaitingRoute,
    Moved,
    Arrived,
}

/// One fine step of walking toward the destination. Arrival is checked
/// before moving, so an entity starting within the arrival radius does not
/// move at all.
pub fn guidance_step(entity: &mut L1Entity, step_length: f64, arrival_radius: f64) -> Guidance {
    if entity.arrived {
        return Guidance::Arrived;
    }
    let Some(target) = entity.target else {
        return Guidance::AwaitingRoute;
    };
    let remaining = entity.position.euclid(target);
    if remaining <= arrival_radius {
        entity.arrived = true;
        return Guidance::Arrived;
    }
    if remaining <= step_length {
        entity.position = target;
    } else {
        let f = step_length / remaining;
        entity.position = Position::new(
            entity.position.x + (target.x - entity.position.x) * f,
            entity.position.y + (target.y - entity.position.y) * f,
        );
    }
    Guidance::Moved
}

#[derive(Debug, Clone, PartialEq)]
enum Event {
    Beacon { node: NodeId },
    Query { entity: usize },
    Routing(RoutingEvent),
    RouteReply { entity: usize, rid: u32 },
    Move { entity: usize },
    DiscoveryTimeout { entity: usize },
}

impl From<RoutingEvent> for Event {
    fn from(e: RoutingEvent) -> Self {
        Event::Routing(e)
    }
}

/// Result of advancing one coarse timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStatus {
    pub entities: Vec<EntityRecord>,
    /// Counters for this step only.
    pub counters: Counters,
}

pub struct L1Instance {
    id: InstanceId,
    scenario: GridScenario,
    params: L1Params,
    fine_steps: Tick,
    width: f64,
    height: f64,
    entities: Vec<L1Entity>,
    router: Router,
    queue: EventQueue<Event>,
    /// Route request id -> entity index.
    requesters: Vec<usize>,
    neighbor_heard: Vec<u64>,
    step_counters: Counters,
    totals: Counters,
    steps_done: u64,
}

impl L1Instance {
    /// Bootstraps from an INIT payload, including the warm-up phase.
    pub fn bootstrap(init: &InitPayload, params: L1Params) -> Result<Self, L1Error> {
        if init.grid_side == 0 || init.fine_steps == 0 {
            return Err(L1Error::BadInit("grid_side and fine_steps must be positive".into()));
        }
        if !(init.width > 0.0 && init.height > 0.0) {
            return Err(L1Error::BadInit(format!("empty region {}x{}", init.width, init.height)));
        }
        let mut ids: Vec<EntityId> = init.entities.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(L1Error::BadInit("duplicate entity id".into()));
        }
        for e in &init.entities {
            if !(0.0..=init.width).contains(&e.x) || !(0.0..=init.height).contains(&e.y) {
                return Err(L1Error::BadInit(format!("{} at ({}, {}) lies outside the region", e.id, e.x, e.y)));
            }
        }
        let mut rng = stream(init.seed, Stream::Level1, init.instance_id.0);
        let base = GridScenario::fit(init.grid_side, init.width, init.height);
        let destination = rng.gen_range(0..base.node_count());
        Self::with_scenario(
            init.instance_id,
            base.with_destination(destination),
            init.fine_steps,
            init.width,
            init.height,
            init.entities.iter().map(L1Entity::from_record).collect(),
            params,
        )
    }

    /// Builds an instance around an explicit scenario and runs warm-up.
    pub fn with_scenario(
        id: InstanceId,
        scenario: GridScenario,
        fine_steps: u32,
        width: f64,
        height: f64,
        mut entities: Vec<L1Entity>,
        params: L1Params,
    ) -> Result<Self, L1Error> {
        entities.sort_by_key(|e| e.id);
        let n = scenario.node_count();
        let mut inst = Self {
            id,
            router: Router::new(&scenario),
            scenario,
            params,
            fine_steps: fine_steps as Tick,
            width,
            height,
            entities,
            queue: EventQueue::new(params.max_pending_events),
            requesters: Vec::new(),
            neighbor_heard: vec![0; n],
            step_counters: Counters::default(),
            totals: Counters::default(),
            steps_done: 0,
        };
        let interval = params.warmup_ticks.max(1);
        for node in 0..n {
            inst.schedule(node as Tick % interval, Event::Beacon { node })?;
        }
        for idx in 0..inst.entities.len() {
            if inst.entities[idx].kind == EntityKind::Mobile {
                inst.schedule(params.warmup_ticks, Event::Query { entity: idx })?;
            }
        }
        inst.run_until(params.warmup_ticks)?;
        inst.totals += inst.step_counters;
        inst.step_counters = Counters::default();
        Ok(inst)
    }

    pub fn id(&self) -> InstanceId {
        self.id
    }

    pub fn scenario(&self) -> &GridScenario {
        &self.scenario
    }

    pub fn entities(&self) -> &[L1Entity] {
        &self.entities
    }

    pub fn region(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    /// Current fine-step clock.
    pub fn now(&self) -> Tick {
        self.queue.now()
    }

    /// Local clock in coarse time units since the end of warm-up.
    pub fn local_clock(&self) -> f64 {
        self.queue.now().saturating_sub(self.params.warmup_ticks) as f64 / self.fine_steps as f64
    }

    pub fn totals(&self) -> Counters {
        self.totals
    }

    /// Advances exactly one coarse timestep: all events at ticks
    /// `[start, start + fine_steps)`.
    pub fn run_one_coarse_step(&mut self) -> Result<StepStatus, L1Error> {
        let start = self.params.warmup_ticks + self.steps_done * self.fine_steps;
        let end = start + self.fine_steps;
        self.run_until(end)?;
        self.steps_done += 1;
        let counters = std::mem::take(&mut self.step_counters);
        self.totals += counters;
        Ok(StepStatus {
            entities: self.records(),
            counters,
        })
    }

    pub fn records(&self) -> Vec<EntityRecord> {
        self.entities.iter().map(L1Entity::record).collect()
    }

    fn schedule(&mut self, at: Tick, ev: Event) -> Result<(), L1Error> {
        self.queue
            .schedule(at, ev)
            .map_err(|source| L1Error::Queue { instance: self.id, source })
    }

    /// Processes every event strictly before `end`, then sets the clock to `end`.
    fn run_until(&mut self, end: Tick) -> Result<(), L1Error> {
        while self.queue.peek_time().is_some_and(|t| t < end) {
            let (now, ev) = self.queue.pop().expect("peeked");
            self.step_counters.events_processed += 1;
            self.handle(now, ev)?;
        }
        self.queue.advance_to(end);
        Ok(())
    }

    fn step_length(&self) -> f64 {
        self.params.walk_speed / self.fine_steps as f64
    }

    fn handle(&mut self, now: Tick, ev: Event) -> Result<(), L1Error> {
        match ev {
            Event::Beacon { node } => {
                for i in 0..self.router.neighbors[node].len() {
                    let n = self.router.neighbors[node][i];
                    self.neighbor_heard[n] += 1;
                }
                let interval = self.params.warmup_ticks.max(1);
                self.schedule(now + interval, Event::Beacon { node })?;
            }
            Event::Query { entity } => {
                let e = &mut self.entities[entity];
                e.query_tick = Some(now);
                match self.scenario.access_node(e.position) {
                    None => e.timed_out = true,
                    Some(access) => {
                        let dest = self.scenario.destination;
                        let rid = self
                            .router
                            .start(&mut self.queue, access, dest, now + 1)
                            .map_err(|source| L1Error::Queue { instance: self.id, source })?;
                        debug_assert_eq!(rid as usize, self.requesters.len());
                        self.requesters.push(entity);
                        let limit = 2 * self.scenario.node_count() as Tick + 4;
                        self.schedule(now + limit, Event::DiscoveryTimeout { entity })?;
                    }
                }
            }
            Event::Routing(rev) => {
                let before = self.router.counters;
                let resolved = self
                    .router
                    .handle(&mut self.queue, now, rev)
                    .map_err(|source| L1Error::Queue { instance: self.id, source })?;
                self.step_counters.rreq += self.router.counters.rreq - before.rreq;
                self.step_counters.rrep += self.router.counters.rrep - before.rrep;
                if let Some(rid) = resolved {
                    let entity = self.requesters[rid as usize];
                    self.schedule(now + 1, Event::RouteReply { entity, rid })?;
                }
            }
            Event::RouteReply { entity, rid } => {
                let (_, hops) = self.router.requests[rid as usize].resolved.expect("reply for unresolved request");
                let target = self.scenario.node_position(self.scenario.destination);
                let e = &mut self.entities[entity];
                if e.timed_out || e.target.is_some() {
                    return Ok(());
                }
                e.hops = Some(hops);
                e.target = Some(target);
                e.reply_tick = Some(now);
                self.schedule(now + 1, Event::Move { entity })?;
            }
            Event::Move { entity } => {
                let step = self.step_length();
                let radius = self.params.arrival_radius;
                let e = &mut self.entities[entity];
                match guidance_step(e, step, radius) {
                    Guidance::Arrived => {
                        e.arrival_tick = Some(now);
                        self.step_counters.arrivals += 1;
                    }
                    Guidance::Moved => self.schedule(now + 1, Event::Move { entity })?,
                    Guidance::AwaitingRoute => {}
                }
            }
            Event::DiscoveryTimeout { entity } => {
                let e = &mut self.entities[entity];
                if e.target.is_none() {
                    e.timed_out = true;
                }
            }
        }
        Ok(())
    }
}
