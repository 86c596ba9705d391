//! In-process federated fine-tuning.
//!
//! The server holds only what it aggregates: the whole model under FedAvg,
//! the shared root layers under FedPer. Clients own their records and, under
//! FedPer, their personal head; the only thing a client hands back is a
//! [`ClientUpdate`].

mod partition;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use partition::{ideal_client_ids, partition_clients};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::{deficit_labels, engineer, IdealRanges, ScalerStats, N_FEATURES, N_TARGETS};
use crate::metrics;
use crate::mlp::{evaluate_loss, train, Activation, Checkpoint, Dataset, Layer, ModelParams, TrainConfig};
use crate::report::{ClientRow, MetricsReport};
use crate::seed::{self, Stream};
use crate::synthgen::{DailyRecord, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedPer,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedPer => "fedper",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Strategy::FedAvg),
            "fedper" => Ok(Strategy::FedPer),
            other => Err(Error::config(
                "federated.strategy",
                format!("unknown strategy `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub strategy: Strategy,
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Leading dense layers shared under FedPer; the rest form the head.
    pub split_index: usize,
    /// Fraction of clients taking part in each round.
    pub client_fraction: f64,
    pub days_per_client: usize,
    pub train_days: usize,
    /// Fraction of clients whose days are redrawn mostly inside the ideal ranges.
    pub ideal_fraction: f64,
    /// Per-day probability that such a client's sleep (and, independently,
    /// distance) is redrawn inside its ideal range.
    pub p_ideal: f64,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::FedAvg,
            n_clients: 10,
            rounds: 5,
            local_epochs: 2,
            split_index: 3,
            client_fraction: 1.0,
            days_per_client: 15,
            train_days: 8,
            ideal_fraction: 0.3,
            p_ideal: 0.8,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("federated.{k}");
        if self.n_clients == 0 {
            return Err(Error::config(key("n_clients"), "must be >= 1"));
        }
        if self.train_days == 0 || self.train_days >= self.days_per_client {
            return Err(Error::config(
                key("train_days"),
                "must be >= 1 and below days_per_client",
            ));
        }
        if self.split_index == 0 {
            return Err(Error::config(key("split_index"), "must be >= 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config(key("client_fraction"), "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ideal_fraction) {
            return Err(Error::config(key("ideal_fraction"), "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_ideal) {
            return Err(Error::config(key("p_ideal"), "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Standardized inputs and natural-unit deficit targets for a set of days.
pub fn build_dataset(records: &[DailyRecord], scaler: &ScalerStats, ranges: &IdealRanges) -> Result<Dataset> {
    let mut d = Dataset::new(N_FEATURES, N_TARGETS);
    for r in records {
        let x = scaler.transform(&engineer(r)?.to_array());
        d.push(&x, &deficit_labels(r, ranges).to_array());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    id: u32,
    train: Vec<DailyRecord>,
    eval: Vec<DailyRecord>,
    mostly_ideal: bool,
    train_data: Option<Dataset>,
    eval_data: Option<Dataset>,
    head: Option<Vec<Layer>>,
}

impl ClientState {
    pub fn new(id: u32, train: Vec<DailyRecord>, eval: Vec<DailyRecord>, mostly_ideal: bool) -> Self {
        Self {
            id,
            train,
            eval,
            mostly_ideal,
            train_data: None,
            eval_data: None,
            head: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn train_records(&self) -> &[DailyRecord] {
        &self.train
    }

    pub fn eval_records(&self) -> &[DailyRecord] {
        &self.eval
    }

    pub fn n_samples(&self) -> usize {
        self.train.len()
    }

    pub fn mostly_ideal(&self) -> bool {
        self.mostly_ideal
    }

    pub fn head(&self) -> Option<&[Layer]> {
        self.head.as_deref()
    }

    /// Standardizes the client's days with the shipped scaler.
    pub fn prepare(&mut self, scaler: &ScalerStats, ranges: &IdealRanges) -> Result<()> {
        self.train_data = Some(build_dataset(&self.train, scaler, ranges)?);
        self.eval_data = Some(build_dataset(&self.eval, scaler, ranges)?);
        Ok(())
    }

    /// Installs the initial personal head (the pre-trained head layers).
    pub fn init_head(&mut self, head: Vec<Layer>) {
        self.head = Some(head);
    }

    fn train_data(&self) -> Result<&Dataset> {
        self.train_data
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("client {} was not prepared", self.id)))
    }

    fn eval_data(&self) -> Result<&Dataset> {
        self.eval_data
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("client {} was not prepared", self.id)))
    }

    /// The model this client predicts with, given what the server broadcasts.
    pub fn model(&self, broadcast: &[Layer], strategy: Strategy, activation: Activation) -> Result<ModelParams> {
        let layers = match strategy {
            Strategy::FedAvg => broadcast.to_vec(),
            Strategy::FedPer => {
                let head = self
                    .head
                    .as_ref()
                    .ok_or_else(|| Error::Protocol(format!("client {} has no personal head", self.id)))?;
                broadcast.iter().chain(head).cloned().collect()
            }
        };
        Ok(ModelParams { layers, activation })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: u32,
    /// All layers under FedAvg, root layers only under FedPer.
    pub layers: Vec<Layer>,
    pub n_samples: usize,
    /// Training loss of the last local epoch.
    pub train_loss: f64,
}

/// One client's local round: start from the broadcast (plus the personal
/// head under FedPer), train `local_epochs`, return the shareable layers.
pub fn local_finetune(
    client: &mut ClientState,
    broadcast: &[Layer],
    activation: Activation,
    fed: &FedConfig,
    base: &TrainConfig,
    round: usize,
) -> Result<ClientUpdate> {
    if fed.strategy == Strategy::FedPer && broadcast.len() != fed.split_index {
        return Err(Error::Protocol(format!(
            "FedPer broadcast has {} layers, root has {}",
            broadcast.len(),
            fed.split_index
        )));
    }
    let model = client.model(broadcast, fed.strategy, activation)?;
    let data = client.train_data()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "client {} has no training days",
            client.id
        )));
    }
    if model.input_width() != data.inputs || model.output_width() != data.outputs {
        return Err(Error::Shape(format!(
            "client {} data does not fit the global model",
            client.id
        )));
    }

    let (trained, train_loss) = if fed.local_epochs == 0 {
        let loss = evaluate_loss(&model, data, base.loss)?;
        (model, loss)
    } else {
        let cfg = TrainConfig {
            epochs: fed.local_epochs,
            patience: None,
            seed: seed::derive2(base.seed, Stream::FineTune, client.id as u64, round as u64),
            ..base.clone()
        };
        let (p, h) = train(model, data, data, &cfg)?;
        let loss = h.epochs.last().map_or(f64::NAN, |e| e.train_loss);
        (p, loss)
    };

    let mut layers = trained.layers;
    if fed.strategy == Strategy::FedPer {
        let head = layers.split_off(fed.split_index);
        client.head = Some(head);
    }
    Ok(ClientUpdate {
        client_id: client.id,
        layers,
        n_samples: client.n_samples(),
        train_loss,
    })
}

/// Sample-weighted mean of every layer: `sum_k (n_k / sum n) * w_k`,
/// accumulated in ascending client-id order.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<Vec<Layer>> {
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let first = *order
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client updates to aggregate".into()))?;
    if order.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Protocol("duplicate client id in round".into()));
    }
    for u in &order {
        if u.layers.len() != first.layers.len() || u.layers.iter().zip(&first.layers).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::Shape(format!(
                "update from client {} has a different shape",
                u.client_id
            )));
        }
    }
    let total: usize = order.iter().map(|u| u.n_samples).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("updates carry zero samples".into()));
    }
    let mut out: Vec<Layer> = first.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    for u in &order {
        let weight = u.n_samples as f64 / total as f64;
        for (acc, l) in out.iter_mut().zip(&u.layers) {
            for (a, v) in acc.values_mut().zip(l.values()) {
                *a += weight * v;
            }
        }
    }
    Ok(out)
}

/// FedAvg restricted to the shared root. Any update carrying more than the
/// root is a protocol violation.
pub fn fedper_aggregate(updates: &[ClientUpdate], split_index: usize) -> Result<Vec<Layer>> {
    if let Some(u) = updates.iter().find(|u| u.layers.len() != split_index) {
        return Err(Error::Protocol(format!(
            "client {} sent {} layers, the shared root has {split_index}",
            u.client_id,
            u.layers.len()
        )));
    }
    fedavg_aggregate(updates)
}

/// What the server keeps between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Server {
    strategy: Strategy,
    split_index: usize,
    activation: Activation,
    shared: Vec<Layer>,
}

impl Server {
    /// Loads the pre-trained model. Under FedPer only the root is retained;
    /// the head layers are returned for distribution to clients.
    pub fn from_pretrained(
        pretrained: &ModelParams,
        strategy: Strategy,
        split_index: usize,
    ) -> Result<(Self, Vec<Layer>)> {
        if split_index == 0 || split_index >= pretrained.layers.len() {
            return Err(Error::config(
                "federated.split_index",
                format!("must lie in [1, {}]", pretrained.layers.len() - 1),
            ));
        }
        let mut shared = pretrained.layers.clone();
        let head = match strategy {
            Strategy::FedAvg => Vec::new(),
            Strategy::FedPer => shared.split_off(split_index),
        };
        Ok((
            Self {
                strategy,
                split_index,
                activation: pretrained.activation,
                shared,
            },
            head,
        ))
    }

    pub fn broadcast(&self) -> &[Layer] {
        &self.shared
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        self.shared = match self.strategy {
            Strategy::FedAvg => fedavg_aggregate(updates)?,
            Strategy::FedPer => fedper_aggregate(updates, self.split_index)?,
        };
        Ok(())
    }

    pub fn shared_norm(&self) -> f64 {
        self.shared
            .iter()
            .flat_map(Layer::values)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLoss {
    pub client_id: u32,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTelemetry {
    pub round: usize,
    pub clients: Vec<ClientLoss>,
    /// L2 norm of the aggregated (shared) parameters.
    pub aggregate_norm: f64,
}

fn participants(n_clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..n_clients as u32).collect();
    if fraction >= 1.0 {
        return ids;
    }
    let m = ((fraction * n_clients as f64).ceil() as usize).clamp(1, n_clients);
    ids.shuffle(&mut seed::rng(seed, Stream::Sampling, round as u64));
    ids.truncate(m);
    ids.sort_unstable();
    ids
}

pub fn evaluate_client(
    model: &ModelParams,
    client: &ClientState,
    zero_band: f64,
    per_output: bool,
) -> Result<ClientRow> {
    let data = client.eval_data()?;
    let mut pred = Vec::with_capacity(data.y.len());
    for i in 0..data.len() {
        pred.extend(model.forward(data.input(i))?);
    }
    let per_output_accuracy_pct = if per_output {
        let column = |v: &[f64], j: usize| v.iter().skip(j).step_by(N_TARGETS).copied().collect::<Vec<_>>();
        let mut acc = [0.0; N_TARGETS];
        for (j, a) in acc.iter_mut().enumerate() {
            *a = 100.0 * metrics::sign_accuracy(&column(&data.y, j), &column(&pred, j), zero_band)?;
        }
        Some(acc)
    } else {
        None
    };
    Ok(ClientRow {
        client_id: client.id,
        sign_accuracy_pct: 100.0 * metrics::sign_accuracy(&data.y, &pred, zero_band)?,
        mae: metrics::mae(&data.y, &pred)?,
        per_output_accuracy_pct,
        mostly_ideal: Some(client.mostly_ideal),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub report: MetricsReport,
    pub clients: Vec<ClientState>,
    pub server: Server,
}

/// Generates and partitions client data, runs the configured rounds from the
/// pre-trained checkpoint and evaluates every client on its held-back days.
pub fn run_experiment(cfg: &ExperimentConfig, checkpoint: &Checkpoint) -> Result<ExperimentRun> {
    cfg.validate()?;
    let fed = &cfg.federated;
    let seed = cfg.seed;
    let ranges = cfg.model.ideal_ranges();
    let generator = Generator::new(cfg.generator.clone())?;
    let users = generator.generate_stream(fed.n_clients, fed.days_per_client, seed, Stream::ClientData)?;
    let mut clients = partition_clients(&users, fed, &ranges, seed)?;

    let (mut server, head) = Server::from_pretrained(&checkpoint.params, fed.strategy, fed.split_index)?;
    for c in &mut clients {
        c.prepare(&checkpoint.scaler, &ranges)?;
        if fed.strategy == Strategy::FedPer {
            c.init_head(head.clone());
        }
    }

    let base = cfg.finetune_config();
    let mut telemetry = Vec::with_capacity(fed.rounds);
    for round in 1..=fed.rounds {
        let chosen = participants(fed.n_clients, fed.client_fraction, seed, round);
        let broadcast = server.broadcast().to_vec();
        let activation = server.activation();
        let updates = clients
            .par_iter_mut()
            .filter(|c| chosen.contains(&c.id))
            .map(|c| local_finetune(c, &broadcast, activation, fed, &base, round))
            .collect::<Result<Vec<_>>>()?;
        server.aggregate(&updates)?;
        telemetry.push(RoundTelemetry {
            round,
            clients: updates
                .iter()
                .map(|u| ClientLoss {
                    client_id: u.client_id,
                    train_loss: u.train_loss,
                })
                .collect(),
            aggregate_norm: server.shared_norm(),
        });
    }

    let per_output = cfg.metrics.per_output();
    let rows = clients
        .iter()
        .map(|c| {
            let model = c.model(server.broadcast(), fed.strategy, server.activation())?;
            evaluate_client(&model, c, cfg.metrics.zero_band, per_output)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::aggregate(rows)?;
    report.strategy = Some(fed.strategy.to_string());
    report.seed = Some(seed);
    report.config_digest = Some(cfg.digest());
    report.telemetry = telemetry;
    Ok(ExperimentRun {
        report,
        clients,
        server,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_model, Architecture};

    fn layer(vals: &[f64]) -> Layer {
        Layer {
            inputs: vals.len(),
            outputs: 1,
            weights: vals.to_vec(),
            bias: vec![vals.iter().sum()],
        }
    }

    fn update(id: u32, n: usize, vals: &[f64]) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            layers: vec![layer(vals)],
            n_samples: n,
            train_loss: 0.0,
        }
    }

    #[test]
    fn fedavg_examples() {
        let single = fedavg_aggregate(&[update(3, 8, &[0.25, -1.5])]).unwrap();
        assert_eq!(single, vec![layer(&[0.25, -1.5])]);
        let eq = fedavg_aggregate(&[update(0, 8, &[0.0]), update(1, 8, &[2.0])]).unwrap();
        assert_eq!(eq[0].weights, vec![1.0]);
        let weighted = fedavg_aggregate(&[update(0, 1, &[0.0]), update(1, 3, &[4.0])]).unwrap();
        assert_eq!(weighted[0].weights, vec![3.0]);
    }

    #[test]
    fn fedavg_is_independent_of_arrival_order() {
        let a = [
            update(2, 5, &[0.1, 0.7]),
            update(0, 3, &[1.3, -0.2]),
            update(1, 8, &[0.01, 9.0]),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(fedavg_aggregate(&a).unwrap(), fedavg_aggregate(&b).unwrap());
    }

    #[test]
    fn fedavg_errors() {
        assert!(fedavg_aggregate(&[]).is_err());
        assert!(matches!(
            fedavg_aggregate(&[update(0, 1, &[0.0]), update(1, 1, &[0.0, 1.0])]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            fedavg_aggregate(&[update(0, 1, &[0.0]), update(0, 1, &[1.0])]),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn fedper_rejects_head_layers() {
        let mut u = update(0, 1, &[0.0]);
        u.layers.push(layer(&[1.0]));
        assert!(matches!(fedper_aggregate(&[u], 1), Err(Error::Protocol(_))));
        let single = fedper_aggregate(&[update(4, 8, &[0.5])], 1).unwrap();
        assert_eq!(single, vec![layer(&[0.5])]);
    }

    #[test]
    fn server_under_fedper_keeps_no_head() {
        let p = init_model(&Architecture::default(), 1).unwrap();
        let (server, head) = Server::from_pretrained(&p, Strategy::FedPer, 3).unwrap();
        assert_eq!(server.broadcast().len(), 3);
        assert_eq!(head.len(), 3);
        assert_eq!(server.broadcast(), &p.layers[..3]);
        assert_eq!(head, p.layers[3..]);
        assert!(Server::from_pretrained(&p, Strategy::FedPer, 6).is_err());
    }

    #[test]
    fn participants_cover_fraction() {
        assert_eq!(participants(10, 1.0, 1, 1), (0..10).collect::<Vec<_>>());
        let p = participants(10, 0.35, 1, 2);
        assert_eq!(p.len(), 4);
        assert_eq!(p, participants(10, 0.35, 1, 2));
    }

    #[test]
    fn strategy_parses() {
        assert_eq!("FedAvg".parse::<Strategy>().unwrap(), Strategy::FedAvg);
        assert_eq!("fedper".parse::<Strategy>().unwrap(), Strategy::FedPer);
        assert!("ditto".parse::<Strategy>().is_err());
    }
}
