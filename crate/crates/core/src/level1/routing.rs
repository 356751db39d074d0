//! The fixed-node radio grid and minimal on-demand route discovery: a
//! route request floods the grid (duplicates dropped per request id), every
//! node remembers the reverse path, and the destination answers with a
//! reply unicast along it, installing forward routes on the way back.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::queue::{EventQueue, QueueError, Tick};
use crate::model::Position;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RouteError {
    #[error("node {0} is not part of the grid")]
    UnknownNode(NodeId),
    #[error("destination {dest} unreachable from {from}: discovery timed out")]
    Unreachable { from: NodeId, dest: NodeId },
    #[error(transparent)]
    Queue(#[from] QueueError),
}

/// A `side x side` grid of fixed nodes with a unit-disc radio.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScenario {
    pub side: usize,
    pub spacing: f64,
    pub radio_range: f64,
    /// Position of node 0 (row 0, column 0).
    pub origin: Position,
    pub destination: NodeId,
}

/// Radio range as a multiple of grid spacing; keeps exactly the four
/// axis neighbours in range (must stay below sqrt 2).
pub const DEFAULT_RANGE_FACTOR: f64 = 1.2;

impl GridScenario {
    pub fn new(side: usize, spacing: f64) -> Self {
        assert!(side > 0 && spacing > 0.0);
        Self {
            side,
            spacing,
            radio_range: spacing * DEFAULT_RANGE_FACTOR,
            origin: Position::new(spacing / 2.0, spacing / 2.0),
            destination: 0,
        }
    }

    /// Largest grid of `side x side` cells that fits in the region,
    /// centred in it, one node per cell centre.
    pub fn fit(side: usize, width: f64, height: f64) -> Self {
        let spacing = width.min(height) / side as f64;
        let span = spacing * side as f64;
        let mut s = Self::new(side, spacing);
        s.origin = Position::new(
            (width - span) / 2.0 + spacing / 2.0,
            (height - span) / 2.0 + spacing / 2.0,
        );
        s
    }

    pub fn with_destination(mut self, destination: NodeId) -> Self {
        self.destination = destination;
        self
    }

    pub fn with_radio_range(mut self, range: f64) -> Self {
        self.radio_range = range;
        self
    }

    pub fn node_count(&self) -> usize {
        self.side * self.side
    }

    pub fn node_at(&self, row: usize, col: usize) -> NodeId {
        row * self.side + col
    }

    pub fn node_position(&self, node: NodeId) -> Position {
        let (row, col) = (node / self.side, node % self.side);
        Position::new(
            self.origin.x + col as f64 * self.spacing,
            self.origin.y + row as f64 * self.spacing,
        )
    }

    /// Closest node within radio range of `p`, lowest id on ties.
    pub fn access_node(&self, p: Position) -> Option<NodeId> {
        (0..self.node_count())
            .map(|n| (n, self.node_position(n).euclid(p)))
            .filter(|&(_, d)| d <= self.radio_range)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n)
    }

    pub fn radio_graph(&self) -> Vec<Vec<NodeId>> {
        let n = self.node_count();
        let pos: Vec<Position> = (0..n).map(|i| self.node_position(i)).collect();
        (0..n)
            .map(|a| {
                (0..n)
                    .filter(|&b| b != a && pos[a].euclid(pos[b]) <= self.radio_range)
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub hops: u32,
    /// Id of the discovery that installed the route.
    pub seq: u32,
}

/// Per-node routing state, keyed by destination node.
#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    routes: HashMap<NodeId, RouteEntry>,
}

impl RouteTable {
    pub fn get(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.routes.get(&dest)
    }

    fn install(&mut self, dest: NodeId, entry: RouteEntry) {
        debug_assert!(entry.hops > 0);
        match self.routes.get(&dest) {
            Some(old) if old.seq == entry.seq && old.hops <= entry.hops => {}
            _ => {
                self.routes.insert(dest, entry);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Request {
    pub access: NodeId,
    pub dest: NodeId,
    pub issued: Tick,
    pub resolved: Option<(Tick, u32)>,
}

/// Routing messages travelling over the grid; each takes one tick per hop.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RoutingEvent {
    Rreq {
        at: NodeId,
        from: Option<NodeId>,
        rid: u32,
        hops: u32,
    },
    Rrep {
        at: NodeId,
        from: NodeId,
        rid: u32,
        hops: u32,
    },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub(crate) struct RoutingCounters {
    pub rreq: u64,
    pub rrep: u64,
}

pub(crate) struct Router {
    pub neighbors: Vec<Vec<NodeId>>,
    pub tables: Vec<RouteTable>,
    seen: Vec<HashSet<u32>>,
    pub requests: Vec<Request>,
    pub counters: RoutingCounters,
}

impl Router {
    pub fn new(scenario: &GridScenario) -> Self {
        let n = scenario.node_count();
        Self {
            neighbors: scenario.radio_graph(),
            tables: vec![RouteTable::default(); n],
            seen: vec![HashSet::new(); n],
            requests: Vec::new(),
            counters: RoutingCounters::default(),
        }
    }

    /// Registers a request whose first RREQ copy reaches `access` at `arrive`.
    pub fn start<E: From<RoutingEvent>>(
        &mut self,
        queue: &mut EventQueue<E>,
        access: NodeId,
        dest: NodeId,
        arrive: Tick,
    ) -> Result<u32, QueueError> {
        let rid = self.requests.len() as u32;
        self.requests.push(Request {
            access,
            dest,
            issued: queue.now(),
            resolved: None,
        });
        queue.schedule(
            arrive,
            RoutingEvent::Rreq {
                at: access,
                from: None,
                rid,
                hops: 0,
            }
            .into(),
        )?;
        Ok(rid)
    }

    /// Processes one routing event at `now`. Returns the request id when it
    /// resolves at its access node.
    pub fn handle<E: From<RoutingEvent>>(
        &mut self,
        queue: &mut EventQueue<E>,
        now: Tick,
        ev: RoutingEvent,
    ) -> Result<Option<u32>, QueueError> {
        match ev {
            RoutingEvent::Rreq { at, from, rid, hops } => {
                if !self.seen[at].insert(rid) {
                    return Ok(None);
                }
                let req = &self.requests[rid as usize];
                let (access, dest) = (req.access, req.dest);
                if let Some(prev) = from {
                    self.tables[at].install(access, RouteEntry { next_hop: prev, hops, seq: rid });
                }
                if at == dest {
                    match from {
                        None => return Ok(self.resolve(rid, now, 0)),
                        Some(prev) => {
                            self.counters.rrep += 1;
                            queue.schedule(now + 1, RoutingEvent::Rrep { at: prev, from: at, rid, hops: 1 }.into())?;
                        }
                    }
                } else {
                    self.counters.rreq += 1;
                    for &n in &self.neighbors[at] {
                        queue.schedule(
                            now + 1,
                            RoutingEvent::Rreq {
                                at: n,
                                from: Some(at),
                                rid,
                                hops: hops + 1,
                            }
                            .into(),
                        )?;
                    }
                }
                Ok(None)
            }
            RoutingEvent::Rrep { at, from, rid, hops } => {
                let req = &self.requests[rid as usize];
                let (access, dest) = (req.access, req.dest);
                self.tables[at].install(dest, RouteEntry { next_hop: from, hops, seq: rid });
                if at == access {
                    return Ok(self.resolve(rid, now, hops));
                }
                let next = self.tables[at]
                    .get(access)
                    .expect("reply reached a node without a reverse route")
                    .next_hop;
                self.counters.rrep += 1;
                queue.schedule(
                    now + 1,
                    RoutingEvent::Rrep {
                        at: next,
                        from: at,
                        rid,
                        hops: hops + 1,
                    }
                    .into(),
                )?;
                Ok(None)
            }
        }
    }

    fn resolve(&mut self, rid: u32, now: Tick, hops: u32) -> Option<u32> {
        let req = &mut self.requests[rid as usize];
        if req.resolved.is_some() {
            return None;
        }
        req.resolved = Some((now, hops));
        Some(rid)
    }
}

/// Runs one discovery from `source` to `dest` on an otherwise idle grid
/// and returns the hop count of the installed route.
pub fn discover_route(scenario: &GridScenario, source: NodeId, dest: NodeId) -> Result<u32, RouteError> {
    let n = scenario.node_count();
    for node in [source, dest] {
        if node >= n {
            return Err(RouteError::UnknownNode(node));
        }
    }
    let mut router = Router::new(scenario);
    let mut queue: EventQueue<RoutingEvent> = EventQueue::new(16 * n * n + 64);
    let rid = router.start(&mut queue, source, dest, 0)?;
    while let Some((now, ev)) = queue.pop() {
        if router.handle(&mut queue, now, ev)? == Some(rid) {
            let (_, hops) = router.requests[rid as usize].resolved.expect("just resolved");
            debug_assert_eq!(
                router.tables[source].get(dest).map_or(0, |r| r.hops),
                hops,
            );
            return Ok(hops);
        }
    }
    Err(RouteError::Unreachable { from: source, dest })
}
