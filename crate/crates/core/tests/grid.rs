use std::collections::{BTreeMap, BTreeSet};

use weaves_core::grid::ranks::{install_ring, ring_advance, ring_combine, ring_seed, ring_state};
use weaves_core::grid::{
    identify_islands, partition_address_space, Grid, GridConfig, GridEvent, GridEventKind, LinkParams, Rank,
    Transport, TransportConfig,
};
use weaves_core::value;
use weaves_core::{
    Addr, BeadId, ChannelId, Error, Function, ModuleDef, NodeId, Signature, Status, Step, Tapestry,
};

#[test]
fn address_split_examples() {
    assert_eq!(partition_address_space(64, 40), Ok((1 << 40, 16_777_216)));
    assert_eq!(partition_address_space(36, 32), Ok((4 << 30, 16)));
    assert_eq!(partition_address_space(8, 4), Ok((16, 16)));
    assert!(matches!(
        partition_address_space(40, 40),
        Err(Error::InvalidSplit { .. })
    ));
}

#[test]
fn lossy_link_delivers_every_message_once_in_order() {
    let link = LinkParams {
        loss: 0.3,
        max_delay: 3,
        duplicate: 0.05,
    };
    let mut t = Transport::new(
        TransportConfig {
            link,
            ..Default::default()
        },
        42,
    );
    for c in 0..3 {
        t.open_channel(ChannelId(c), Rank(c), Rank(c + 1));
    }
    let mut sent: BTreeMap<ChannelId, Vec<Vec<u8>>> = BTreeMap::new();
    for i in 0..1000u64 {
        let ch = ChannelId((i % 3) as u32);
        let p = i.to_le_bytes().to_vec();
        sent.entry(ch).or_default().push(p.clone());
        t.send(ch, p).unwrap();
    }
    let mut got: BTreeMap<ChannelId, Vec<Vec<u8>>> = BTreeMap::new();
    let mut ticks = 0;
    while !t.quiescent() {
        for (ch, p) in t.step() {
            got.entry(ch).or_default().push(p);
        }
        ticks += 1;
        assert!(ticks < 100_000, "transport did not drain");
    }
    assert_eq!(got, sent);
    let stats = t.stats();
    assert!(stats.retransmitted > 0 && stats.dropped > 0);
}

fn ring_oracle(size: u32, rounds: u64) -> Vec<(u64, u64, u64)> {
    let mut v: Vec<u64> = (0..size).map(ring_seed).collect();
    for r in 0..rounds {
        let adv: Vec<u64> = v.iter().map(|x| ring_advance(*x, r)).collect();
        v = (0..size as usize)
            .map(|i| ring_combine(adv[i], adv[(i + size as usize - 1) % size as usize]))
            .collect();
    }
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (i as u64, rounds, x))
        .collect()
}

fn ring_grid(loss: f64, seed: u64) -> Grid {
    let mut g = Grid::new(GridConfig {
        transport: TransportConfig {
            link: LinkParams {
                loss,
                max_delay: 2,
                duplicate: 0.0,
            },
            ..Default::default()
        },
        steps_per_tick: 4,
        seed,
        ..Default::default()
    })
    .unwrap();
    install_ring(&mut g, 5, 3, 6).unwrap();
    g
}

#[test]
fn ring_matches_serial_oracle_over_a_lossy_network() {
    for loss in [0.0, 0.3] {
        let mut g = ring_grid(loss, 7);
        assert!(g.run(20_000).unwrap());
        assert_eq!(ring_state(&g).unwrap(), ring_oracle(5, 6));
        if loss == 0.0 {
            assert_eq!(g.transport().stats().retransmitted, 0);
        }
    }
}

#[test]
fn partial_checkpoint_with_node_loss_and_remap() {
    let mut cut = 0;
    for at in [3, 6, 9, 14] {
        let mut g = ring_grid(0.1, 3);
        g.schedule(GridEvent {
            tick: at,
            kind: GridEventKind::Checkpoint("mid".into()),
        });
        g.schedule(GridEvent {
            tick: at + 6,
            kind: GridEventKind::Kill(NodeId(1)),
        });
        let remap = BTreeMap::from([(NodeId(0), NodeId(5)), (NodeId(1), NodeId(3)), (NodeId(2), NodeId(4))]);
        g.schedule(GridEvent {
            tick: at + 11,
            kind: GridEventKind::Restore {
                label: "mid".into(),
                remap,
            },
        });
        assert!(g.run(50_000).unwrap());
        cut += g.saved("mid").unwrap().discarded;
        assert_eq!(g.nodes().map(|(n, _)| n).collect::<Vec<_>>(), [NodeId(3), NodeId(4), NodeId(5)]);
        assert_eq!(ring_state(&g).unwrap(), ring_oracle(5, 6));
    }
    assert!(cut > 0, "no checkpoint cut a message in flight");
}

#[test]
fn restoring_with_an_empty_network_resumes_exactly() {
    let mut g = ring_grid(0.0, 1);
    let cp = g.partial_checkpoint();
    assert_eq!(cp.discarded, 0);
    let mut h = g.clone();
    h.restore(&cp, &BTreeMap::new()).unwrap();
    g.run(10_000).unwrap();
    h.run(10_000).unwrap();
    assert_eq!(g.tick(), h.tick());
    assert_eq!(ring_state(&g).unwrap(), ring_state(&h).unwrap());
}

fn solver() -> ModuleDef {
    ModuleDef::new("solver")
        .global("u", value::from_f64(0.0))
        .entry(Function::new("main", Signature::default(), |ex| {
            if ex.pc() < 3 {
                let m = ex.read_f64("m")?;
                ex.write_f64("m", m + 1.0)?;
                ex.advance();
                return Ok(Step::Yield);
            }
            Ok(Step::ret())
        }))
}

fn mediator() -> ModuleDef {
    ModuleDef::new("mediator")
        .global("m", value::from_f64(0.0))
        .global("ptr", value::from_u64(0))
        .global("ptr1", value::from_u64(0))
        .export(Function::new("noop", Signature::default(), |_| Ok(Step::ret())))
}

/// Two modules, six beads, four weaves: S1,S2 share M12 and S3,S4 share M34.
fn two_pairs(t: &mut Tapestry) -> Vec<BeadId> {
    let s = t.register_module(solver()).unwrap();
    let m = t.register_module(mediator()).unwrap();
    let beads: Vec<BeadId> = [s, s, m, s, s, m]
        .into_iter()
        .map(|x| t.instantiate_bead(x).unwrap())
        .collect();
    for (a, med) in [(0, 2), (1, 2), (3, 5), (4, 5)] {
        let w = t.define_weave(&[beads[a], beads[med]]).unwrap();
        t.spawn_string(w, "main").unwrap();
    }
    beads
}

#[test]
fn islands_of_two_mediated_pairs() {
    let mut t = Tapestry::default();
    let b = two_pairs(&mut t);
    let islands = identify_islands(&t, None).unwrap();
    let sets: Vec<BTreeSet<BeadId>> = islands.iter().map(|i| i.beads.clone()).collect();
    assert_eq!(
        sets,
        vec![
            BTreeSet::from([b[0], b[1], b[2]]),
            BTreeSet::from([b[3], b[4], b[5]])
        ]
    );
    assert_eq!(islands[0].weaves.len(), 2);
    assert_eq!(islands[0].strings.len(), 2);

    let split = BTreeSet::from([b[0], b[2]]);
    assert!(matches!(
        identify_islands(&t, Some(&[split])),
        Err(Error::NotClosed { .. })
    ));

    // an address stored in M12 pointing at M34's cell couples the pairs
    let foreign = t.bead(b[5]).unwrap().data_context["m"];
    t.write_bead_value(b[2], "ptr", value::from_u64(foreign.0)).unwrap();
    assert_eq!(identify_islands(&t, None).unwrap().len(), 1);
}

fn grid_with_pairs(compartment: Option<u32>) -> (Grid, Vec<BeadId>) {
    let mut g = Grid::new(GridConfig {
        compartment,
        ..Default::default()
    })
    .unwrap();
    let b = two_pairs(g.add_node(NodeId(0)).unwrap());
    let dst = g.add_node(NodeId(1)).unwrap();
    dst.register_module(mediator()).unwrap();
    dst.register_module(solver()).unwrap();
    (g, b)
}

#[test]
fn migration_keeps_addresses_and_aliases() {
    let (mut g, b) = grid_with_pairs(None);
    let island = BTreeSet::from([b[0], b[1], b[2]]);
    // mediator holds an aliasing pair: ptr -> m, ptr1 -> ptr
    let (m_addr, p_addr) = {
        let t = g.node_mut(NodeId(0)).unwrap();
        let m_addr = t.bead(b[2]).unwrap().data_context["m"];
        let p_addr = t.bead(b[2]).unwrap().data_context["ptr"];
        t.write_bead_value(b[2], "ptr", value::from_u64(m_addr.0)).unwrap();
        t.write_bead_value(b[2], "ptr1", value::from_u64(p_addr.0)).unwrap();
        (m_addr, p_addr)
    };
    g.node_mut(NodeId(0)).unwrap().run(Some(3)).unwrap();
    let before = g.node(NodeId(0)).unwrap().memory().value(m_addr).unwrap().to_vec();

    let map = g.migrate_island(&island, NodeId(0), NodeId(1)).unwrap();
    assert!(g.regions_disjoint());
    let src = g.node(NodeId(0)).unwrap();
    assert!(src.memory().cell(m_addr).is_none());
    assert_eq!(src.beads().count(), 3);
    let dst = g.node(NodeId(1)).unwrap();
    assert_eq!(dst.memory().value(m_addr).unwrap(), &before[..]);
    let moved = dst.bead(map.beads[&b[2]]).unwrap();
    let ptr1 = value::to_u64(dst.memory().value(moved.data_context["ptr1"]).unwrap()).unwrap();
    assert_eq!(Addr(ptr1), p_addr);
    let ptr = value::to_u64(dst.memory().value(Addr(ptr1)).unwrap()).unwrap();
    assert_eq!(Addr(ptr), m_addr);
    assert_eq!(dst.bead(map.beads[&b[2]]).unwrap().data_context["m"], m_addr);

    assert!(g.run(1_000).unwrap());
    let dst = g.node(NodeId(1)).unwrap();
    assert!(dst.strings().all(|s| s.status() == Status::Finished));
    // each of the two migrated strings added 3
    assert_eq!(value::to_f64(dst.memory().value(m_addr).unwrap()).unwrap(), 6.0);
}

#[test]
fn migration_errors() {
    let (mut g, b) = grid_with_pairs(None);
    let island = BTreeSet::from([b[0], b[1], b[2]]);
    g.add_node(NodeId(2)).unwrap();
    assert_eq!(
        g.migrate_island(&island, NodeId(0), NodeId(2)).unwrap_err(),
        Error::MissingModule("solver".into())
    );
    assert!(matches!(
        g.migrate_island(&BTreeSet::from([b[0]]), NodeId(0), NodeId(1)),
        Err(Error::NotClosed { .. })
    ));
    // nothing moved on failure
    assert_eq!(g.node(NodeId(0)).unwrap().beads().count(), 6);

    let (mut g, b) = grid_with_pairs(Some(1));
    let island = BTreeSet::from([b[3], b[4], b[5]]);
    assert_eq!(
        g.migrate_island(&island, NodeId(0), NodeId(1)).unwrap_err(),
        Error::RegionOverflow
    );
}
