//! Domain types and toroidal geometry shared by both simulation levels.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissemination::MessageCache;
use crate::mobility::MobilityState;
use crate::spatial::SpatialGrid;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown entity {0} (bookkeeping bug: id not present in the queried set)")]
    UnknownEntity(EntityId),
    #[error("entity {0} is delegated to a Level-1 instance and cannot be queried at Level 0")]
    EntityDelegated(EntityId),
}

/// Globally unique entity identifier, stable for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "se#{}", self.0)
    }
}

/// Identifier of a Level-1 instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l1#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Plain Euclidean distance, no wraparound.
    pub fn euclid(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A rectangular torus. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToroidalWorld {
    width: f64,
    height: f64,
}

impl ToroidalWorld {
    /// # Panics
    /// If either extent is not strictly positive and finite.
    pub fn new(width: f64, height: f64) -> Self {
        assert!(
            width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite(),
            "world extents must be positive, got {width}x{height}"
        );
        Self { width, height }
    }

    /// Square world whose side makes `num_ses / area == density`.
    pub fn for_density(num_ses: usize, density: f64) -> Self {
        let side = (num_ses as f64 / density).sqrt();
        Self::new(side, side)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Largest distance any two points can have on this torus.
    pub fn max_separation(&self) -> f64 {
        (self.width / 2.0).hypot(self.height / 2.0)
    }

    pub fn wrap(&self, p: Position) -> Position {
        Position::new(wrap_axis(p.x, self.width), wrap_axis(p.y, self.height))
    }

    pub fn contains(&self, p: Position) -> bool {
        (0.0..self.width).contains(&p.x) && (0.0..self.height).contains(&p.y)
    }

    pub fn distance(&self, a: Position, b: Position) -> f64 {
        toroidal_distance(self, a, b)
    }
}

fn wrap_axis(v: f64, extent: f64) -> f64 {
    let r = v.rem_euclid(extent);
    // rem_euclid can return `extent` itself for tiny negative inputs
    if r >= extent {
        0.0
    } else {
        r
    }
}

fn axis_delta(a: f64, b: f64, extent: f64) -> f64 {
    let d = (a - b).abs();
    d.min(extent - d)
}

/// Euclidean distance under wraparound on both axes.
pub fn toroidal_distance(world: &ToroidalWorld, a: Position, b: Position) -> f64 {
    let dx = axis_delta(a.x, b.x, world.width);
    let dy = axis_delta(a.y, b.y, world.height);
    (dx * dx + dy * dy).sqrt()
}

/// Maps any raw position into `[0,width) x [0,height)`.
pub fn wrap(world: &ToroidalWorld, p: Position) -> Position {
    world.wrap(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Static,
    Mobile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityStatus {
    Active,
    Delegated(InstanceId),
}

/// A simulated thing.
#[derive(Debug, Clone)]
pub struct Entity {
    pub id: EntityId,
    pub position: Position,
    pub kind: EntityKind,
    pub mobility: MobilityState,
    pub cache: MessageCache,
    pub status: EntityStatus,
}

impl Entity {
    pub fn is_active(&self) -> bool {
        self.status == EntityStatus::Active
    }
}

/// Active entities (other than `center`) within `radius` of `center`.
///
/// Backed by a uniform cell grid; delegated entities are never returned.
pub fn neighbors_within(
    world: &ToroidalWorld,
    entities: &[Entity],
    center: EntityId,
    radius: f64,
) -> Result<BTreeSet<EntityId>, ModelError> {
    let origin = entities
        .iter()
        .find(|e| e.id == center)
        .ok_or(ModelError::UnknownEntity(center))?;
    if !origin.is_active() {
        return Err(ModelError::EntityDelegated(center));
    }
    let grid = SpatialGrid::build(
        world,
        radius.max(f64::MIN_POSITIVE),
        entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_active())
            .map(|(i, e)| (i, e.position)),
    );
    let mut out = BTreeSet::new();
    grid.for_each_within(world, origin.position, radius, |idx, _| {
        let e = &entities[idx];
        if e.id != center {
            out.insert(e.id);
        }
    });
    Ok(out)
}
