use rim_core::config::ExperimentConfig;
use rim_core::fedsim::{run_experiment, Strategy};
use rim_core::mlp::Checkpoint;
use rim_core::pipeline;

fn quick(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    c.training.pretrain_users = 60;
    c.training.pretrain_epochs = 15;
    c
}

fn checkpoint(cfg: &ExperimentConfig) -> Checkpoint {
    pipeline::pretrain(cfg).unwrap().checkpoint
}

#[test]
fn zero_rounds_reports_the_pretrained_model() {
    let mut cfg = quick(4);
    let ck = checkpoint(&cfg);
    cfg.federated.rounds = 0;
    for strategy in [Strategy::FedAvg, Strategy::FedPer] {
        cfg.federated.strategy = strategy;
        let run = run_experiment(&cfg, &ck).unwrap();
        assert!(run.report.telemetry.is_empty());
        for (c, row) in run.clients.iter().zip(&run.report.clients) {
            let direct = pipeline::evaluate_records(&ck, c.eval_records(), &cfg.model.ideal_ranges(), 0.0).unwrap();
            assert_eq!(row.mae, direct.mae);
            assert_eq!(row.sign_accuracy_pct, 100.0 * direct.sign_accuracy);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let mut cfg = quick(5);
    let ck = checkpoint(&cfg);
    for strategy in [Strategy::FedAvg, Strategy::FedPer] {
        cfg.federated.strategy = strategy;
        let a = run_experiment(&cfg, &ck).unwrap().report.to_json().unwrap();
        let b = run_experiment(&cfg, &ck).unwrap().report.to_json().unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn telemetry_covers_every_round_and_client() {
    let cfg = quick(6);
    let run = run_experiment(&cfg, &checkpoint(&cfg)).unwrap();
    let t = &run.report.telemetry;
    assert_eq!(t.len(), cfg.federated.rounds);
    for (i, round) in t.iter().enumerate() {
        assert_eq!(round.round, i + 1);
        let ids: Vec<u32> = round.clients.iter().map(|c| c.client_id).collect();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        assert!(round.aggregate_norm.is_finite() && round.aggregate_norm > 0.0);
    }
    assert_eq!(run.report.clients.len(), 10);
    assert_eq!(run.report.config_digest.as_deref(), Some(cfg.digest().as_str()));
}

#[test]
fn fedper_keeps_heads_on_clients() {
    let mut cfg = quick(7);
    cfg.federated.strategy = Strategy::FedPer;
    let ck = checkpoint(&cfg);
    let run = run_experiment(&cfg, &ck).unwrap();
    assert_eq!(run.server.broadcast().len(), cfg.federated.split_index);
    let heads: Vec<_> = run.clients.iter().map(|c| c.head().unwrap().to_vec()).collect();
    // Each head trained on its own client's days only, so they diverge.
    assert!(heads.windows(2).any(|w| w[0] != w[1]));
    for h in &heads {
        assert_eq!(h.len(), ck.params.layers.len() - cfg.federated.split_index);
    }
}

#[test]
fn fedavg_leaves_clients_without_heads() {
    let cfg = quick(8);
    let run = run_experiment(&cfg, &checkpoint(&cfg)).unwrap();
    assert!(run.clients.iter().all(|c| c.head().is_none()));
    assert_eq!(run.server.broadcast().len(), cfg.architecture().layer_count());
}

#[test]
fn per_output_mode_adds_columns() {
    let mut cfg = quick(9);
    cfg.metrics.accuracy = rim_core::config::AccuracyMode::PerOutput;
    cfg.federated.rounds = 0;
    let run = run_experiment(&cfg, &checkpoint(&cfg)).unwrap();
    for row in &run.report.clients {
        let [s, d] = row.per_output_accuracy_pct.unwrap();
        assert!((row.sign_accuracy_pct - (s + d) / 2.0).abs() < 1e-9);
    }
}
