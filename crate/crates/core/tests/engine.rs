use std::path::PathBuf;

use mlsim_core::{
    simulate, Engine, EngineError, EngineOptions, EntityStatus, InstanceId, L1Launcher, RunOutcome, SimConfig,
    SpawnTrigger,
};
use proptest::prelude::*;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        num_ses: 300,
        total_timesteps: 30,
        seed,
        ..SimConfig::default()
    }
}

type Row = (u32, u64, u64, u64, u64, u64, u32, usize);

fn fingerprint(o: &RunOutcome) -> Vec<Row> {
    o.reports
        .iter()
        .map(|r| {
            let m = r.messages;
            (r.timestep, m.generated, m.forwarded, m.delivered, m.duplicates, m.suppressed, r.max_hops, r.active)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn lp_count_is_invisible(seed in 0u64..1_000, lps in 2usize..6) {
        let one = simulate(small(seed), EngineOptions::default()).unwrap();
        let many = simulate(SimConfig { num_lps: lps, ..small(seed) }, EngineOptions::default()).unwrap();
        prop_assert_eq!(fingerprint(&one), fingerprint(&many));
        prop_assert_eq!(one.entities, many.entities);
    }

    #[test]
    fn every_entity_is_accounted_for(seed in 0u64..1_000, triggers in prop::collection::vec((0u32..30, 0usize..3, 1usize..6), 1..8)) {
        let schedule = triggers
            .into_iter()
            .map(|(at_timestep, lp_id, entity_count)| SpawnTrigger { at_timestep, lp_id, entity_count })
            .collect();
        let config = SimConfig { num_lps: 3, l1_schedule: schedule, ..small(seed) };
        let n = config.num_ses;
        let out = simulate(config, EngineOptions::default()).unwrap();
        for r in &out.reports {
            prop_assert_eq!(r.active + r.delegated, n, "timestep {}", r.timestep);
        }
        prop_assert!(out.entities.iter().all(|e| e.status == EntityStatus::Active));
    }
}

#[test]
fn first_hop_arrives_one_timestep_later() {
    // two static entities in a world smaller than the interaction range
    let config = SimConfig {
        num_ses: 2,
        mobile_fraction: 0.0,
        forwarding_threshold: 0.0,
        dissemination_prob: 1.0,
        message_rate: 1.0,
        total_timesteps: 5,
        ..SimConfig::default()
    };
    let options = EngineOptions {
        record_deliveries: true,
        ..EngineOptions::default()
    };
    let out = simulate(config, options).unwrap();
    assert_eq!(out.generations.len(), 10);
    for d in out.deliveries.iter().filter(|d| d.hops == 1) {
        let g = out.generations.iter().find(|g| g.msg == d.msg).unwrap();
        assert_eq!(d.timestep, g.timestep + 1);
        assert_eq!(d.sender, g.origin);
    }
    // messages from the last timestep are never received
    let last = out.generations.iter().filter(|g| g.timestep == 4).count();
    assert_eq!(out.metrics.messages.delivered as usize, 10 - last);
}

#[test]
fn delegated_entities_leave_and_come_back() {
    let config = SimConfig {
        l1_schedule: vec![SpawnTrigger {
            at_timestep: 2,
            lp_id: 1,
            entity_count: 4,
        }],
        num_lps: 2,
        ..small(8)
    };
    let mut engine = Engine::new(config, EngineOptions::default()).unwrap();
    let mut delegated = Vec::new();
    while !engine.is_done() {
        let r = engine.advance_timestep().unwrap();
        delegated.push(r.delegated);
        let stripes: Vec<usize> = engine.logical_processes().iter().map(|lp| lp.delegated_count()).collect();
        assert_eq!(stripes[0], 0);
        assert_eq!(stripes[1], r.delegated);
    }
    assert_eq!(&delegated[..5], &[0, 0, 4, 0, 0]);
    let out = engine.finish().unwrap();
    let inst = &out.metrics.instances[0];
    assert_eq!((inst.opened_at, inst.closed_at, inst.entities, inst.lp_id), (2, 3, 4, 1));
    assert!(inst.wct > 0.0);
    let world = out.metrics.config.world();
    assert!(out.entities.iter().all(|e| world.contains(e.position)));
}

#[test]
fn session_failure_names_the_instance() {
    let config = SimConfig {
        l1_schedule: vec![
            SpawnTrigger {
                at_timestep: 1,
                lp_id: 0,
                entity_count: 2,
            },
            SpawnTrigger {
                at_timestep: 3,
                lp_id: 0,
                entity_count: 2,
            },
        ],
        ..small(2)
    };
    let options = EngineOptions {
        launcher: L1Launcher::Subprocess {
            program: PathBuf::from("/nonexistent/mlsim"),
        },
        ..EngineOptions::default()
    };
    let err = simulate(config, options).unwrap_err();
    assert!(matches!(err, EngineError::Session { .. }), "{err}");
    assert_eq!(err.instance(), Some(InstanceId(0)));
}

#[test]
fn same_seed_same_run() {
    let a = simulate(small(42), EngineOptions::default()).unwrap();
    let b = simulate(small(42), EngineOptions::default()).unwrap();
    assert_eq!(fingerprint(&a), fingerprint(&b));
    assert_eq!(a.entities, b.entities);
    assert_eq!(a.metrics.row().generated, b.metrics.row().generated);
}
