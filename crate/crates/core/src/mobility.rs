//! Static entities and the Random Way-Point model with zero pause time.
//!
//! A leg is the straight segment to the waypoint in unwrapped coordinates;
//! the resulting position is wrapped onto the torus afterwards.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{EntityKind, Position, ToroidalWorld};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilityState {
    Static,
    Rwp { waypoint: Position, speed: f64 },
}

impl MobilityState {
    pub fn kind(&self) -> EntityKind {
        match self {
            MobilityState::Static => EntityKind::Static,
            MobilityState::Rwp { .. } => EntityKind::Mobile,
        }
    }
}

/// Closed speed interval in spaceunits per timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

impl SpeedRange {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }
}

pub fn random_position<R: Rng + ?Sized>(world: &ToroidalWorld, rng: &mut R) -> Position {
    Position::new(
        rng.gen_range(0.0..world.width()),
        rng.gen_range(0.0..world.height()),
    )
}

pub fn fresh_rwp<R: Rng + ?Sized>(world: &ToroidalWorld, speeds: SpeedRange, rng: &mut R) -> MobilityState {
    MobilityState::Rwp {
        waypoint: random_position(world, rng),
        speed: speeds.sample(rng),
    }
}

/// Advances one timestep. Static entities never move.
pub fn step<R: Rng + ?Sized>(
    world: &ToroidalWorld,
    state: MobilityState,
    pos: Position,
    speeds: SpeedRange,
    rng: &mut R,
) -> (Position, MobilityState) {
    match state {
        MobilityState::Static => (pos, state),
        MobilityState::Rwp { .. } => rwp_step(world, state, pos, speeds, rng),
    }
}

/// One RWP move toward the waypoint. On arrival the entity lands exactly on
/// the waypoint and immediately draws the next waypoint and leg speed.
pub fn rwp_step<R: Rng + ?Sized>(
    world: &ToroidalWorld,
    state: MobilityState,
    pos: Position,
    speeds: SpeedRange,
    rng: &mut R,
) -> (Position, MobilityState) {
    let MobilityState::Rwp { waypoint, speed } = state else {
        return (pos, state);
    };
    let remaining = pos.euclid(waypoint);
    if remaining <= speed {
        (world.wrap(waypoint), fresh_rwp(world, speeds, rng))
    } else {
        let f = speed / remaining;
        let next = Position::new(pos.x + (waypoint.x - pos.x) * f, pos.y + (waypoint.y - pos.y) * f);
        (world.wrap(next), state)
    }
}

/// Picks which of `count` entities (in id order) move. Exactly
/// `floor(mobile_fraction * count)` of them get an RWP state.
pub fn assign_mobility<R: Rng + ?Sized>(
    world: &ToroidalWorld,
    count: usize,
    mobile_fraction: f64,
    speeds: SpeedRange,
    rng: &mut R,
) -> Vec<MobilityState> {
    let mobile = ((mobile_fraction * count as f64).floor() as usize).min(count);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    let mut states = vec![MobilityState::Static; count];
    let mut chosen: Vec<usize> = order[..mobile].to_vec();
    chosen.sort_unstable();
    for idx in chosen {
        states[idx] = fresh_rwp(world, speeds, rng);
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toroidal_distance;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;

    const SPEEDS: SpeedRange = SpeedRange { min: 1.0, max: 14.0 };

    fn world() -> ToroidalWorld {
        ToroidalWorld::new(1000.0, 1000.0)
    }

    #[test]
    fn straight_line_advance() {
        let mut rng = stream(1, Stream::Mobility, 0);
        let st = MobilityState::Rwp {
            waypoint: Position::new(10.0, 0.0),
            speed: 4.0,
        };
        let (p, s) = rwp_step(&world(), st, Position::new(0.0, 0.0), SPEEDS, &mut rng);
        assert_eq!(p, Position::new(4.0, 0.0));
        assert_eq!(s, st);
    }

    #[test]
    fn arrival_lands_on_waypoint_and_redraws() {
        let mut rng = stream(1, Stream::Mobility, 0);
        let st = MobilityState::Rwp {
            waypoint: Position::new(10.0, 0.0),
            speed: 4.0,
        };
        let (p, s) = rwp_step(&world(), st, Position::new(8.0, 0.0), SPEEDS, &mut rng);
        assert_eq!(p, Position::new(10.0, 0.0));
        let MobilityState::Rwp { waypoint, speed } = s else {
            panic!("entity stopped moving")
        };
        assert_ne!(waypoint, Position::new(10.0, 0.0));
        assert!((1.0..=14.0).contains(&speed));
    }

    #[test]
    fn static_never_moves() {
        let mut rng = stream(1, Stream::Mobility, 0);
        let start = Position::new(123.0, 456.0);
        let mut p = start;
        let mut s = MobilityState::Static;
        for _ in 0..900 {
            (p, s) = step(&world(), s, p, SPEEDS, &mut rng);
        }
        assert_eq!(p, start);
    }

    #[test]
    fn assignment_counts() {
        let w = world();
        let mut rng = stream(3, Stream::MobilityAssignment, 0);
        let count_mobile =
            |v: &[MobilityState]| v.iter().filter(|s| s.kind() == EntityKind::Mobile).count();
        assert_eq!(count_mobile(&assign_mobility(&w, 4, 0.5, SPEEDS, &mut rng)), 2);
        assert_eq!(count_mobile(&assign_mobility(&w, 10, 0.0, SPEEDS, &mut rng)), 0);
        assert_eq!(count_mobile(&assign_mobility(&w, 1000, 1.0, SPEEDS, &mut rng)), 1000);
        assert_eq!(count_mobile(&assign_mobility(&w, 7, 0.5, SPEEDS, &mut rng)), 3);
    }

    #[test]
    fn assignment_is_seed_deterministic() {
        let w = world();
        let a = assign_mobility(&w, 100, 0.5, SPEEDS, &mut stream(9, Stream::MobilityAssignment, 0));
        let b = assign_mobility(&w, 100, 0.5, SPEEDS, &mut stream(9, Stream::MobilityAssignment, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn speed_distribution() {
        let mut rng = stream(11, Stream::Mobility, 0);
        let n = 100_000;
        let (mut lo, mut hi, mut sum) = (f64::MAX, f64::MIN, 0.0);
        for _ in 0..n {
            let s = SPEEDS.sample(&mut rng);
            lo = lo.min(s);
            hi = hi.max(s);
            sum += s;
        }
        let mean = sum / n as f64;
        assert!(lo >= 1.0 && hi <= 14.0);
        assert!((mean - 7.5).abs() <= 0.075, "mean {mean}");
    }

    proptest! {
        #[test]
        fn displacement_bounded_and_inside(seed in any::<u64>(), x in 0.0..1000.0f64, y in 0.0..1000.0f64) {
            let w = world();
            let mut rng = stream(seed, Stream::Mobility, 0);
            let mut s = fresh_rwp(&w, SPEEDS, &mut rng);
            let mut p = Position::new(x, y);
            for _ in 0..200 {
                let (np, ns) = step(&w, s, p, SPEEDS, &mut rng);
                prop_assert!(w.contains(np));
                prop_assert!(toroidal_distance(&w, p, np) <= SPEEDS.max + 1e-9);
                p = np;
                s = ns;
            }
        }
    }
}
