//! One logical process: a stripe of the world and the entities inside it.

use std::mem;
use std::sync::Arc;

use rand::Rng;

use super::partition::Partition;
use super::session::OpenSession;
use crate::dissemination::{
    cache_touch, generate_message, relay_step, Delivery, DeliveryHistory, DisseminationMessage,
    MessageCache, MsgId, PbbParams, Receiver,
};
use crate::metrics::MessageTotals;
use crate::mobility::{self, MobilityState, SpeedRange};
use crate::model::{Entity, EntityId, EntityStatus, Position, ToroidalWorld};
use crate::rng::{stream, SimRng, Stream};
use crate::spatial::SpatialGrid;

/// An entity plus the per-entity state that travels with it between LPs.
#[derive(Debug, Clone)]
pub(crate) struct Agent {
    pub entity: Entity,
    pub history: DeliveryHistory,
    pub next_seq: u32,
    pub mob_rng: SimRng,
    pub proto_rng: SimRng,
}

impl Agent {
    pub fn new(seed: u64, id: EntityId, position: Position, mobility: MobilityState, cache: usize) -> Self {
        Self {
            entity: Entity {
                id,
                position,
                kind: mobility.kind(),
                mobility,
                cache: MessageCache::new(cache),
                status: EntityStatus::Active,
            },
            history: DeliveryHistory::default(),
            next_seq: 0,
            mob_rng: stream(seed, Stream::Mobility, id.0),
            proto_rng: stream(seed, Stream::Protocol, id.0),
        }
    }
}

/// A message copy on the air: what was sent, by whom, from where.
#[derive(Debug, Clone)]
pub(crate) struct Transmission {
    pub msg: Arc<DisseminationMessage>,
    pub sender: EntityId,
    pub from: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub timestep: u32,
    pub msg: MsgId,
    pub receiver: EntityId,
    pub sender: EntityId,
    /// Emissions the received copy went through, the originator's included.
    pub hops: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationRecord {
    pub timestep: u32,
    pub msg: MsgId,
    pub origin: EntityId,
    pub position: Position,
}

/// Read-only inputs shared by all LPs during a timestep.
pub(crate) struct StepCtx<'a> {
    pub world: &'a ToroidalWorld,
    pub partition: &'a Partition,
    pub params: PbbParams,
    pub range: f64,
    pub speeds: SpeedRange,
    pub message_rate: f64,
    pub tags: Arc<[u8]>,
    pub record: bool,
}

#[derive(Debug, Default)]
pub(crate) struct LocalOutput {
    pub outgoing: Vec<Transmission>,
    pub migrants: Vec<Agent>,
    pub totals: MessageTotals,
    pub max_hops: u32,
    pub hop_violations: u64,
    pub deliveries: Vec<DeliveryRecord>,
    pub generations: Vec<GenerationRecord>,
    pub wct: f64,
}

pub struct LogicalProcess {
    lp_id: usize,
    region: (f64, f64),
    pub(crate) agents: Vec<Agent>,
    pub(crate) inbox: Vec<Transmission>,
    pub(crate) sessions: Vec<OpenSession>,
    pub(crate) epoch: u64,
}

impl LogicalProcess {
    pub(crate) fn new(lp_id: usize, region: (f64, f64)) -> Self {
        Self {
            lp_id,
            region,
            agents: Vec::new(),
            inbox: Vec::new(),
            sessions: Vec::new(),
            epoch: 0,
        }
    }

    pub fn lp_id(&self) -> usize {
        self.lp_id
    }

    /// `[x0, x1)` of the owned stripe.
    pub fn region(&self) -> (f64, f64) {
        self.region
    }

    /// Owned entities in id order, delegated ones included.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.agents.iter().map(|a| &a.entity)
    }

    pub fn active_count(&self) -> usize {
        self.agents.iter().filter(|a| a.entity.is_active()).count()
    }

    pub fn delegated_count(&self) -> usize {
        self.agents.len() - self.active_count()
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Timestep phases completed so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub(crate) fn adopt(&mut self, mut incoming: Vec<Agent>) {
        if incoming.is_empty() {
            return;
        }
        self.agents.append(&mut incoming);
        self.agents.sort_by_key(|a| a.entity.id);
    }

    /// Steps 1 to 4 of a timestep, everything that touches only this LP.
    pub(crate) fn local_phase(&mut self, ctx: &StepCtx<'_>, t: u32) -> LocalOutput {
        let started = std::time::Instant::now();
        let mut out = LocalOutput::default();
        // Copies arrive at most `ttl` steps after creation, so pruning
        // less often than every step changes nothing observable.
        if t.is_multiple_of(ctx.params.ttl + 1) {
            for a in &mut self.agents {
                a.history.prune(t, ctx.params.ttl);
            }
        }
        self.receive(ctx, t, &mut out);
        self.generate(ctx, t, &mut out);
        for a in self.agents.iter_mut().filter(|a| a.entity.is_active()) {
            let (p, s) = mobility::step(ctx.world, a.entity.mobility, a.entity.position, ctx.speeds, &mut a.mob_rng);
            a.entity.position = p;
            a.entity.mobility = s;
        }
        let lp = self.lp_id;
        let stays = |a: &Agent| !a.entity.is_active() || ctx.partition.stripe_of(a.entity.position.x) == lp;
        if !self.agents.iter().all(stays) {
            let (stay, go): (Vec<Agent>, Vec<Agent>) = mem::take(&mut self.agents).into_iter().partition(stays);
            self.agents = stay;
            out.migrants = go;
        }
        self.epoch += 1;
        out.wct = started.elapsed().as_secs_f64();
        out
    }

    fn receive(&mut self, ctx: &StepCtx<'_>, t: u32, out: &mut LocalOutput) {
        let mut inbox = mem::take(&mut self.inbox);
        if inbox.is_empty() {
            return;
        }
        inbox.sort_by_key(|tx| (tx.msg.id, tx.sender));
        let grid = SpatialGrid::build(
            ctx.world,
            ctx.range,
            self.agents
                .iter()
                .enumerate()
                .filter(|(_, a)| a.entity.is_active())
                .map(|(i, a)| (i, a.entity.position)),
        );
        let away: Vec<Position> = self
            .agents
            .iter()
            .filter(|a| !a.entity.is_active())
            .map(|a| a.entity.position)
            .collect();
        let ttl = ctx.params.ttl;
        let mut hits = Vec::new();
        for tx in &inbox {
            hits.clear();
            grid.for_each_within(ctx.world, tx.from, ctx.range, |i, _| hits.push(i));
            hits.sort_unstable();
            out.totals.frozen_drops += away
                .iter()
                .filter(|p| ctx.world.distance(**p, tx.from) <= ctx.range)
                .count() as u64;
            let msg = &*tx.msg;
            let hops = msg.hops() as u32;
            for &i in &hits {
                let a = &mut self.agents[i];
                if a.entity.id == tx.sender {
                    continue;
                }
                out.max_hops = out.max_hops.max(hops);
                if hops > ttl || hops + msg.ttl_remaining != ttl {
                    out.hop_violations += 1;
                }
                let distance = ctx.world.distance(tx.from, a.entity.position);
                let rx = Receiver {
                    id: a.entity.id,
                    cache: &mut a.entity.cache,
                    history: &mut a.history,
                };
                let outcome = relay_step(rx, msg, distance, &ctx.params, &mut a.proto_rng);
                match outcome.delivery {
                    Delivery::Suppressed => out.totals.suppressed += 1,
                    Delivery::Duplicate => out.totals.duplicates += 1,
                    Delivery::First => {
                        out.totals.delivered += 1;
                        if ctx.record {
                            out.deliveries.push(DeliveryRecord {
                                timestep: t,
                                msg: msg.id,
                                receiver: a.entity.id,
                                sender: tx.sender,
                                hops,
                            });
                        }
                    }
                }
                if let Some(copy) = outcome.forward {
                    out.totals.forwarded += 1;
                    out.outgoing.push(Transmission {
                        msg: Arc::new(copy),
                        sender: a.entity.id,
                        from: a.entity.position,
                    });
                }
            }
        }
    }

    fn generate(&mut self, ctx: &StepCtx<'_>, t: u32, out: &mut LocalOutput) {
        for a in self.agents.iter_mut().filter(|a| a.entity.is_active()) {
            if a.proto_rng.gen::<f64>() >= ctx.message_rate {
                continue;
            }
            let id = a.entity.id;
            let msg = generate_message(id, &mut a.next_seq, Arc::clone(&ctx.tags), t, &ctx.params);
            a.history.record(msg.id, t);
            cache_touch(&mut a.entity.cache, msg.id);
            out.totals.generated += 1;
            if ctx.record {
                out.generations.push(GenerationRecord {
                    timestep: t,
                    msg: msg.id,
                    origin: id,
                    position: a.entity.position,
                });
            }
            if msg.ttl_remaining > 0 {
                out.outgoing.push(Transmission {
                    msg: Arc::new(msg.emitted_by(id)),
                    sender: id,
                    from: a.entity.position,
                });
            }
        }
    }
}
