//! Priority-based Broadcast: probabilistic multi-hop relaying gated by TTL,
//! sender/receiver distance and an LRU duplicate cache.
//!
//! TTL accounting: a freshly generated message carries the full TTL and
//! every emission (the originator's broadcast included) decrements it, so a
//! received copy with `ttl_remaining == 0` is delivered but never relayed
//! and no copy travels more than `ttl` hops.

use rustc_hash::FxHashMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use rand::Rng;

use crate::config::SimConfig;
use crate::model::EntityId;

/// Identity of a logical message, shared by all relayed copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MsgId {
    pub origin: EntityId,
    pub seq: u32,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.origin.0, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisseminationMessage {
    pub id: MsgId,
    pub origin: EntityId,
    pub tags: Arc<[u8]>,
    pub ttl_remaining: u32,
    pub created_at: u32,
    /// Every entity that transmitted this copy, originator first.
    pub trace: Vec<EntityId>,
}

impl DisseminationMessage {
    /// The copy put on the air when `sender` broadcasts this message.
    ///
    /// # Panics
    /// If the TTL is already exhausted; callers gate on [`should_forward`].
    pub fn emitted_by(&self, sender: EntityId) -> DisseminationMessage {
        let ttl_remaining = self
            .ttl_remaining
            .checked_sub(1)
            .expect("emitting a message whose TTL is exhausted");
        let mut trace = Vec::with_capacity(self.trace.len() + 1);
        trace.extend_from_slice(&self.trace);
        trace.push(sender);
        DisseminationMessage {
            id: self.id,
            origin: self.origin,
            tags: Arc::clone(&self.tags),
            ttl_remaining,
            created_at: self.created_at,
            trace,
        }
    }

    pub fn hops(&self) -> usize {
        self.trace.len()
    }
}

/// Protocol parameters pulled out of [`SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PbbParams {
    pub ttl: u32,
    pub forwarding_threshold: f64,
    pub dissemination_prob: f64,
    pub cache_capacity: usize,
    pub deliver_once: bool,
}

impl From<&SimConfig> for PbbParams {
    fn from(c: &SimConfig) -> Self {
        Self {
            ttl: c.ttl,
            forwarding_threshold: c.forwarding_threshold,
            dissemination_prob: c.dissemination_prob,
            cache_capacity: c.cache_capacity,
            deliver_once: c.deliver_once,
        }
    }
}

pub fn generate_message(
    origin: EntityId,
    next_seq: &mut u32,
    tags: Arc<[u8]>,
    now: u32,
    params: &PbbParams,
) -> DisseminationMessage {
    let seq = *next_seq;
    *next_seq = next_seq.checked_add(1).expect("message sequence space exhausted");
    DisseminationMessage {
        id: MsgId { origin, seq },
        origin,
        tags,
        ttl_remaining: params.ttl,
        created_at: now,
        trace: Vec::new(),
    }
}

/// LRU set of recently seen message ids. Capacity 0 disables it.
#[derive(Debug, Clone)]
pub struct MessageCache {
    inner: Option<LruCache<MsgId, ()>>,
}

impl MessageCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: NonZeroUsize::new(capacity).map(LruCache::new),
        }
    }

    pub fn capacity(&self) -> usize {
        self.inner.as_ref().map_or(0, |c| c.cap().get())
    }

    pub fn len(&self) -> usize {
        self.inner.as_ref().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Membership test that does not change recency.
    pub fn contains(&self, id: &MsgId) -> bool {
        self.inner.as_ref().is_some_and(|c| c.contains(id))
    }
}

/// Marks `id` as most recently used, inserting it (and evicting the least
/// recently used entry if full) when absent. Returns whether it was present.
pub fn cache_touch(cache: &mut MessageCache, id: MsgId) -> bool {
    match cache.inner.as_mut() {
        None => false,
        Some(c) => {
            if c.get(&id).is_some() {
                true
            } else {
                c.put(id, ());
                false
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardDecisionInput {
    pub ttl_remaining: u32,
    pub sender_receiver_distance: f64,
    pub receiver_cache_hit: bool,
    /// Uniform in `[0, 1)`.
    pub random_draw: f64,
}

pub fn should_forward(input: &ForwardDecisionInput, params: &PbbParams) -> bool {
    input.ttl_remaining > 0
        && !input.receiver_cache_hit
        && input.sender_receiver_distance > params.forwarding_threshold
        && input.random_draw < params.dissemination_prob
}

/// Which message ids an entity has already handed to its application, and
/// when they were created. Entries are dropped once no copy can still be in
/// flight.
#[derive(Debug, Clone, Default)]
pub struct DeliveryHistory {
    seen: FxHashMap<MsgId, u32>,
}

impl DeliveryHistory {
    pub fn contains(&self, id: &MsgId) -> bool {
        self.seen.contains_key(id)
    }

    /// Returns true if `id` was not recorded before.
    pub fn record(&mut self, id: MsgId, created_at: u32) -> bool {
        self.seen.insert(id, created_at).is_none()
    }

    /// Forgets messages created more than `ttl + 1` timesteps before `now`;
    /// with one-timestep hop latency no copy of them can arrive any more.
    pub fn prune(&mut self, now: u32, ttl: u32) {
        let horizon = ttl.saturating_add(1);
        self.seen.retain(|_, created| now.saturating_sub(*created) <= horizon);
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Dropped as a duplicate before reaching the application.
    Suppressed,
    First,
    /// Reached the application again (the cache had forgotten it, or is off).
    Duplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayOutcome {
    pub delivery: Delivery,
    pub forward: Option<DisseminationMessage>,
}

/// The receiving side of one broadcast hop.
pub struct Receiver<'a> {
    pub id: EntityId,
    pub cache: &'a mut MessageCache,
    pub history: &'a mut DeliveryHistory,
}

/// Handles one received copy: cache lookup, delivery, then the forwarding
/// decision. A random draw is consumed only when the copy is not suppressed.
pub fn relay_step<R: Rng + ?Sized>(
    rx: Receiver<'_>,
    msg: &DisseminationMessage,
    distance_to_sender: f64,
    params: &PbbParams,
    rng: &mut R,
) -> RelayOutcome {
    let mut hit = cache_touch(rx.cache, msg.id);
    if params.deliver_once {
        hit |= rx.history.contains(&msg.id);
    }
    if hit {
        return RelayOutcome {
            delivery: Delivery::Suppressed,
            forward: None,
        };
    }
    let delivery = if rx.history.record(msg.id, msg.created_at) {
        Delivery::First
    } else {
        Delivery::Duplicate
    };
    let input = ForwardDecisionInput {
        ttl_remaining: msg.ttl_remaining,
        sender_receiver_distance: distance_to_sender,
        receiver_cache_hit: false,
        random_draw: rng.gen::<f64>(),
    };
    let forward = should_forward(&input, params).then(|| msg.emitted_by(rx.id));
    RelayOutcome { delivery, forward }
}
