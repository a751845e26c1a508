use edgelab::checkpoint::Checkpoint;
use edgelab::graph::LabeledEdgeSet;
use edgelab::synth::{PlantedPartition, SyntheticGraph};
use edgelab::trainer::{train_from, TrainState};
use edgelab::{train, Error, StopReason, TrainConfig};

fn toy() -> SyntheticGraph {
    PlantedPartition {
        communities: 3,
        nodes_per_community: 10,
        p_in: 0.5,
        p_out: 0.05,
        label_fraction: 1.0,
        seed: 3,
    }
    .generate()
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        walks_per_node: 5,
        walk_length: 8,
        window: 3,
        dim: 16,
        hidden: 16,
        batches_per_round: 10,
        structural_batch: 64,
        relational_batch: 32,
        max_rounds: 40,
        unsupervised_rounds: 2,
        unsupervised_round_batches: Some(10),
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_graph_validation_loss_descends() {
    let g = toy();
    assert_eq!(g.graph.node_count(), 30);
    let out = train(&g.graph, &g.edge_labels, &small_config()).unwrap();
    let rounds = &out.report.rounds;
    let first = rounds[0].validation_loss.unwrap();
    let selected = rounds[out.report.selected_round - 1].validation_loss.unwrap();
    let last = rounds.last().unwrap().validation_loss.unwrap();
    assert!(selected <= first, "{selected} > {first}");
    assert!(last <= first, "{last} > {first}");
    for (i, r) in rounds.iter().enumerate() {
        assert_eq!(r.round, i + 1);
    }
}

#[test]
fn adam_counter_advances_by_round_budget() {
    let g = toy();
    let config = small_config();
    let out = train(&g.graph, &g.edge_labels, &config).unwrap();
    let per_round = out.report.structural_steps_per_round + out.report.relational_steps_per_round;
    assert_eq!(per_round, config.batches_per_round);
    assert_eq!(out.state.adam.t, (out.report.rounds.len() * per_round) as u64);
    assert_eq!(
        (out.report.structural_steps_per_round, out.report.relational_steps_per_round),
        (2, 8)
    );
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let g = toy();
    let config = small_config();
    let bytes = || {
        let out = train(&g.graph, &g.edge_labels, &config).unwrap();
        let mut buf = Vec::new();
        Checkpoint {
            config: config.clone(),
            node_ids: g.graph.node_ids().to_vec(),
            state: out.state,
        }
        .write(&mut buf)
        .unwrap();
        buf
    };
    assert_eq!(bytes(), bytes());
    let other = TrainConfig { seed: 8, ..config.clone() };
    let a = train(&g.graph, &g.edge_labels, &config).unwrap();
    let b = train(&g.graph, &g.edge_labels, &other).unwrap();
    assert_ne!(a.state.tables, b.state.tables);
}

#[test]
fn checkpoint_round_trip() {
    let g = toy();
    let config = small_config();
    let out = train(&g.graph, &g.edge_labels, &config).unwrap();
    let ckpt = Checkpoint {
        config: config.clone(),
        node_ids: g.graph.node_ids().to_vec(),
        state: out.state,
    };
    let mut buf = Vec::new();
    ckpt.write(&mut buf).unwrap();
    let back = Checkpoint::read(buf.as_slice()).unwrap();
    assert_eq!(back.config, ckpt.config);
    assert_eq!(back.node_ids, ckpt.node_ids);
    assert_eq!(back.state, ckpt.state);

    let mut corrupt = buf.clone();
    corrupt[0] ^= 1;
    assert!(matches!(Checkpoint::read(corrupt.as_slice()), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::read(&buf[..buf.len() / 2]).is_err());
}

#[test]
fn resume_continues_from_checkpoint_state() {
    let g = toy();
    let config = TrainConfig { max_rounds: 3, early_stop_window: 100, ..small_config() };
    let first = train(&g.graph, &g.edge_labels, &config).unwrap();
    assert_eq!(first.report.stop_reason, StopReason::MaxRounds);
    let t = first.state.adam.t;
    let resumed = train_from(&g.graph, &g.edge_labels, &config, first.state.clone()).unwrap();
    assert_eq!(resumed.state.adam.t, t + 3 * config.batches_per_round as u64);
    assert_ne!(resumed.state.tables, first.state.tables);
}

#[test]
fn supervised_training_needs_labeled_edges() {
    let g = toy();
    let none = LabeledEdgeSet::unlabeled(g.graph.edge_count(), 4);
    assert!(matches!(
        train(&g.graph, &none, &small_config()),
        Err(Error::Config(_))
    ));
    let unsup = TrainConfig { lambda: 0.0, ..small_config() };
    let out = train(&g.graph, &none, &unsup).unwrap();
    assert_eq!(out.report.rounds.len(), 2);
    assert!(out.report.rounds.iter().all(|r| r.validation_loss.is_none()));
    assert_eq!(out.report.relational_steps_per_round, 0);
}

#[test]
fn mismatched_initial_state_is_rejected() {
    let g = toy();
    let config = small_config();
    let state = TrainState::init(&g.graph, g.edge_labels.label_count(), &TrainConfig { dim: 8, ..config.clone() })
        .unwrap();
    assert!(matches!(
        train_from(&g.graph, &g.edge_labels, &config, state),
        Err(Error::Config(_))
    ));
}

#[test]
fn walk_cache_is_reused() {
    let g = toy();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        walk_cache: Some(dir.path().join("walks.txt")),
        ..small_config()
    };
    let a = train(&g.graph, &g.edge_labels, &config).unwrap();
    assert!(dir.path().join("walks.txt").exists());
    let b = train(&g.graph, &g.edge_labels, &config).unwrap();
    assert_eq!(a.state, b.state);
}

#[test]
fn invalid_configs_are_rejected() {
    let g = toy();
    for bad in [
        TrainConfig { lambda: 1.5, ..small_config() },
        TrainConfig { dim: 0, ..small_config() },
        TrainConfig { batches_per_round: 0, ..small_config() },
        TrainConfig { walk_length: 1, ..small_config() },
        TrainConfig { validation_fraction: 1.0, ..small_config() },
    ] {
        assert!(matches!(train(&g.graph, &g.edge_labels, &bad), Err(Error::Config(_))), "{bad:?}");
    }
}
