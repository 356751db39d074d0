//! Step 5: delegating entities to Level 1, driving the sessions, and
//! taking the entities back.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::debug;

use super::lp::{Agent, LogicalProcess};
use super::EngineError;
use crate::config::SpawnTrigger;
use crate::coord::{wire_round, Counters, EntityRecord, InitPayload, L1Launcher, L1Link};
use crate::metrics::InstanceMetrics;
use crate::model::{EntityId, EntityStatus, InstanceId, Position, ToroidalWorld};

pub(crate) struct OpenSession {
    pub instance: InstanceId,
    link: L1Link,
    x0: f64,
    width: f64,
    height: f64,
    /// L0 positions at delegation time.
    originals: BTreeMap<EntityId, Position>,
    opened_at: u32,
    steps_done: u32,
    wct: Duration,
    peak_rss: Option<u64>,
    counters: Counters,
}

impl OpenSession {
    pub fn abort(self) {
        self.link.abort();
    }
}

/// Inputs for step 5 shared by all LPs.
pub(crate) struct L1Ctx<'a> {
    pub world: &'a ToroidalWorld,
    pub stripe_width: f64,
    pub seed: u64,
    pub grid_side: usize,
    pub fine_steps: u32,
    pub session_timesteps: u32,
    pub launcher: &'a L1Launcher,
    pub timeout: Duration,
}

#[derive(Debug, Default)]
pub(crate) struct L1Output {
    pub closed: Vec<InstanceMetrics>,
    pub step_counters: Counters,
    pub wct: f64,
}

/// Picks the `count` active entities nearest the stripe centroid.
pub(crate) fn select_for_delegation(
    agents: &[Agent],
    centroid: Position,
    count: usize,
) -> Option<Vec<usize>> {
    let mut cand: Vec<(f64, EntityId, usize)> = agents
        .iter()
        .enumerate()
        .filter(|(_, a)| a.entity.is_active())
        .map(|(i, a)| (a.entity.position.euclid(centroid), a.entity.id, i))
        .collect();
    if cand.len() < count {
        return None;
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = cand[..count].iter().map(|c| c.2).collect();
    picked.sort_unstable();
    Some(picked)
}

/// Maps a returned local position back to world coordinates.
///
/// If the entity came back exactly where it was sent (after wire
/// rounding), its original position is restored bit for bit.
pub(crate) fn reintegrated_position(
    world: &ToroidalWorld,
    x0: f64,
    region: (f64, f64),
    original: Position,
    rec: &EntityRecord,
) -> Result<Position, String> {
    let (w, h) = region;
    if !(0.0..=w).contains(&rec.x) || !(0.0..=h).contains(&rec.y) {
        return Err(format!(
            "{} returned at ({}, {}), outside the {w}x{h} region",
            rec.id, rec.x, rec.y
        ));
    }
    let sent = (wire_round(original.x - x0), wire_round(original.y));
    if sent == (rec.x, rec.y) {
        return Ok(original);
    }
    Ok(world.wrap(Position::new(x0 + rec.x, rec.y)))
}

impl LogicalProcess {
    pub(crate) fn l1_phase(
        &mut self,
        ctx: &L1Ctx<'_>,
        t: u32,
        triggers: &[(InstanceId, SpawnTrigger)],
    ) -> Result<L1Output, EngineError> {
        let started = Instant::now();
        let mut out = L1Output::default();
        let sessions = std::mem::take(&mut self.sessions);
        let mut keep = Vec::with_capacity(sessions.len());
        let mut failed = None;
        let mut rest = sessions.into_iter();
        for mut s in rest.by_ref() {
            if s.steps_done < ctx.session_timesteps {
                match step_session(&mut s, t) {
                    Ok(c) => {
                        out.step_counters += c;
                        keep.push(s);
                    }
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            } else {
                match self.close(ctx, s, t) {
                    Ok(m) => out.closed.push(m),
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
        }
        if let Some(e) = failed {
            keep.into_iter().chain(rest).for_each(OpenSession::abort);
            return Err(e);
        }
        self.sessions = keep;
        for &(instance, trigger) in triggers {
            let mut s = self.open(ctx, t, instance, trigger)?;
            match step_session(&mut s, t) {
                Ok(c) => {
                    out.step_counters += c;
                    self.sessions.push(s);
                }
                Err(e) => {
                    s.abort();
                    return Err(e);
                }
            }
        }
        self.epoch += 1;
        out.wct = started.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Ends every open session, e.g. after the last timestep.
    pub(crate) fn close_all(&mut self, ctx: &L1Ctx<'_>, t: u32) -> Result<Vec<InstanceMetrics>, EngineError> {
        let mut closed = Vec::new();
        let mut sessions = std::mem::take(&mut self.sessions).into_iter();
        while let Some(s) = sessions.next() {
            match self.close(ctx, s, t) {
                Ok(m) => closed.push(m),
                Err(e) => {
                    sessions.for_each(OpenSession::abort);
                    return Err(e);
                }
            }
        }
        Ok(closed)
    }

    pub(crate) fn abort_sessions(&mut self) {
        std::mem::take(&mut self.sessions).into_iter().for_each(OpenSession::abort);
    }

    fn open(
        &mut self,
        ctx: &L1Ctx<'_>,
        t: u32,
        instance: InstanceId,
        trigger: SpawnTrigger,
    ) -> Result<OpenSession, EngineError> {
        let started = Instant::now();
        let (x0, _) = self.region();
        let height = ctx.world.height();
        let centroid = Position::new(x0 + ctx.stripe_width / 2.0, height / 2.0);
        let picked = select_for_delegation(&self.agents, centroid, trigger.entity_count).ok_or_else(|| {
            EngineError::InsufficientEntities {
                instance,
                lp_id: self.lp_id(),
                requested: trigger.entity_count,
                available: self.active_count(),
            }
        })?;
        let mut originals = BTreeMap::new();
        let mut records = Vec::with_capacity(picked.len());
        for &i in &picked {
            let e = &mut self.agents[i].entity;
            let local = Position::new(e.position.x - x0, e.position.y);
            if !(0.0..=ctx.stripe_width).contains(&local.x) {
                return Err(EngineError::Reintegration {
                    instance,
                    detail: format!("{} at x={} is outside its LP stripe", e.id, e.position.x),
                });
            }
            records.push(EntityRecord::new(e.id, local.x, local.y, e.kind));
            originals.insert(e.id, e.position);
            e.status = EntityStatus::Delegated(instance);
        }
        let init = InitPayload {
            instance_id: instance,
            seed: ctx.seed,
            grid_side: ctx.grid_side,
            fine_steps: ctx.fine_steps,
            width: ctx.stripe_width,
            height,
            entities: records,
        };
        let link = ctx
            .launcher
            .open(init, ctx.timeout)
            .map_err(|source| EngineError::Session { instance, source })?;
        debug!("lp{} delegated {} entities to {instance} at t={t}", self.lp_id(), picked.len());
        Ok(OpenSession {
            instance,
            link,
            x0,
            width: ctx.stripe_width,
            height,
            originals,
            opened_at: t,
            steps_done: 0,
            wct: started.elapsed(),
            peak_rss: None,
            counters: Counters::default(),
        })
    }

    fn close(&mut self, ctx: &L1Ctx<'_>, mut s: OpenSession, t: u32) -> Result<InstanceMetrics, EngineError> {
        let started = Instant::now();
        let instance = s.instance;
        s.peak_rss = s.link.peer_peak_rss();
        let fin = s
            .link
            .end()
            .map_err(|source| EngineError::Session { instance, source })?;
        s.counters += fin.counters;
        let returned: BTreeMap<EntityId, &EntityRecord> = fin.entities.iter().map(|r| (r.id, r)).collect();
        if returned.len() != fin.entities.len() || !returned.keys().eq(s.originals.keys()) {
            return Err(EngineError::Reintegration {
                instance,
                detail: "FINAL does not carry exactly the delegated entities".into(),
            });
        }
        for (id, rec) in returned {
            let original = s.originals[&id];
            let pos = reintegrated_position(ctx.world, s.x0, (s.width, s.height), original, rec)
                .map_err(|detail| EngineError::Reintegration { instance, detail })?;
            let a = self
                .agents
                .iter_mut()
                .find(|a| a.entity.id == id)
                .expect("delegated entities stay with their LP");
            a.entity.position = pos;
            a.entity.status = EntityStatus::Active;
        }
        s.wct += started.elapsed();
        debug!("{instance} reintegrated at t={t}");
        Ok(InstanceMetrics {
            instance,
            lp_id: self.lp_id(),
            opened_at: s.opened_at,
            closed_at: t,
            entities: s.originals.len(),
            wct: s.wct.as_secs_f64(),
            peak_rss: s.peak_rss,
            counters: s.counters,
        })
    }
}

fn step_session(s: &mut OpenSession, t: u32) -> Result<Counters, EngineError> {
    let started = Instant::now();
    let instance = s.instance;
    let res = s
        .link
        .step(t)
        .map_err(|source| EngineError::Session { instance, source })?;
    s.steps_done += 1;
    s.wct += started.elapsed();
    Ok(res.counters)
}
