//! Server round loop, client selection, local training and unweighted
//! aggregation over a simulated synchronous network.

use serde::{Deserialize, Serialize};

use crate::datagen::TaskSpec;
use crate::error::{Error, Result};
use crate::exec::{map_mut, ExecMode};
use crate::losses::LossBreakdown;
use crate::model::PromptModel;
use crate::network::NetworkModel;
use crate::numerics::{AdamW, AdamWState, RngStream, StreamName};
use crate::pipeline::{batch_loss_and_grad, evaluate_prompts};
use crate::promptgen::ClassEmbeddingBatch;
use crate::surrogate::{encode_classnames, FrozenBackbone, Scene, Thresholds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub participation_rate: f64,
    /// Explicit number of clients per round; overrides the rate.
    pub participants: Option<usize>,
    pub batch_size: usize,
    pub optimizer: AdamW,
    /// Evaluate the global model every this many rounds (0: final only).
    pub eval_every: usize,
    pub network: NetworkModel,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            n_clients: 3,
            rounds: 500,
            local_epochs: 1,
            participation_rate: 0.7,
            participants: None,
            batch_size: 4,
            optimizer: AdamW {
                lr: FEDERATED_LR,
                ..AdamW::default()
            },
            eval_every: 10,
            network: NetworkModel::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::config("federation.n_clients must be at least 1"));
        }
        if !(self.participation_rate > 0.0 && self.participation_rate <= 1.0) {
            return Err(Error::config("federation.participation_rate must be in (0, 1]"));
        }
        if let Some(k) = self.participants {
            if k == 0 || k > self.n_clients {
                return Err(Error::config(format!(
                    "federation.participants must be in 1..={}",
                    self.n_clients
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("federation.batch_size must be at least 1"));
        }
        self.optimizer.validate()?;
        self.network.validate()
    }

    /// `max(1, round(rate · n))`, or the explicit participant count.
    pub fn selection_size(&self) -> usize {
        match self.participants {
            Some(k) => k.min(self.n_clients),
            None => ((self.participation_rate * self.n_clients as f64).round() as usize).clamp(1, self.n_clients),
        }
    }
}

/// Learning rate of federated local training. Lower than the optimizer's
/// generic default: at 0.05 the generator's attention and hidden layer
/// saturate within a few hundred steps.
pub const FEDERATED_LR: f64 = 0.002;

/// Seeds for each named random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub world: u64,
    pub init: u64,
    pub selection: u64,
    pub scenes: u64,
    pub batching: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            world: seed,
            init: seed,
            selection: seed,
            scenes: seed,
            batching: seed,
        }
    }
}

/// Uniform sample without replacement, ascending, drawn from child `round`
/// of the selection stream.
pub fn select_clients(config: &FederationConfig, round: usize, stream: &RngStream) -> Vec<usize> {
    stream
        .child(round as u64)
        .sample_without_replacement(config.n_clients, config.selection_size())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub payload: Vec<u8>,
    pub local_loss: LossBreakdown,
}

/// State a client keeps between its participations.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub optimizer: AdamWState,
    pub batching: RngStream,
    pub classes: ClassEmbeddingBatch,
}

impl ClientState {
    pub fn new(task: &TaskSpec, backbone: &FrozenBackbone, n_params: usize, hyper: AdamW, batching_seed: u64) -> Result<Self> {
        Ok(ClientState {
            client_id: task.client_id,
            optimizer: AdamWState::new(hyper, n_params),
            batching: RngStream::new(batching_seed, StreamName::Batching).child(task.client_id as u64),
            classes: encode_classnames(backbone, &task.class_names)?,
        })
    }
}

/// One optimizer step on `scenes`; returns the loss before the update.
pub fn train_step(
    model: &mut PromptModel,
    optimizer: &mut AdamWState,
    backbone: &FrozenBackbone,
    classes: &ClassEmbeddingBatch,
    class_ids: &[usize],
    scenes: &[&Scene],
    mode: ExecMode,
) -> Result<LossBreakdown> {
    let (prompts, trace) = model.forward(classes)?;
    let grad = batch_loss_and_grad(backbone, classes, class_ids, &prompts, scenes, mode)?;
    let flat_grad = model.backward(&trace, classes, &grad.d_prompts)?;
    let mut flat = model.to_flat();
    optimizer.step(&mut flat, &flat_grad)?;
    model.set_flat(&flat)?;
    Ok(grad.loss)
}

/// `local_epochs` passes over the client's training scenes in shuffled
/// batches, starting from the broadcast parameters.
pub fn client_local_train(
    global_payload: &[u8],
    round: usize,
    task: &TaskSpec,
    state: &mut ClientState,
    backbone: &FrozenBackbone,
    config: &FederationConfig,
    mode: ExecMode,
) -> Result<ClientUpdate> {
    if task.train.is_empty() {
        return Err(Error::config(format!("client {} has no training scenes", task.client_id)));
    }
    let mut model = PromptModel::from_bytes(global_payload)?;
    let mut losses = Vec::new();
    for _ in 0..config.local_epochs {
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        state.batching.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &task.train[i]).collect();
            losses.push(train_step(
                &mut model,
                &mut state.optimizer,
                backbone,
                &state.classes,
                &task.class_ids,
                &batch,
                mode,
            )?);
        }
    }
    let local_loss = if losses.is_empty() {
        let all: Vec<&Scene> = task.train.iter().collect();
        let prompts = model.prompts(&state.classes)?;
        batch_loss_and_grad(backbone, &state.classes, &task.class_ids, &prompts, &all, mode)?.loss
    } else {
        LossBreakdown::mean(&losses)
    };
    Ok(ClientUpdate {
        client_id: task.client_id,
        round,
        payload: model.to_bytes()?,
        local_loss,
    })
}

/// Unweighted coordinatewise mean, summed in ascending client-id order.
/// The result is rounded to wire precision.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<PromptModel> {
    if updates.is_empty() {
        return Err(Error::Protocol("no updates to aggregate".into()));
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    if ordered.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Protocol("duplicate client update".into()));
    }
    let models = ordered
        .iter()
        .map(|u| PromptModel::from_bytes(&u.payload))
        .collect::<Result<Vec<_>>>()?;
    let shape_of = |m: &PromptModel| -> Vec<(String, Vec<usize>)> {
        m.to_tensors().into_iter().map(|t| (t.name, t.dims)).collect()
    };
    let reference = shape_of(&models[0]);
    let mut sum = vec![0.0; models[0].param_count()];
    for (m, u) in models.iter().zip(&ordered) {
        if shape_of(m) != reference {
            return Err(Error::Protocol(format!(
                "update from client {} has mismatched parameter shapes",
                u.client_id
            )));
        }
        for (acc, x) in sum.iter_mut().zip(m.to_flat()) {
            *acc += x;
        }
    }
    let n = models.len() as f64;
    sum.iter_mut().for_each(|x| *x /= n);
    let mut out = models[0].clone();
    out.set_flat(&sum)?;
    Ok(out.quantized())
}

/// mAP of one parameter set, globally and per client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEval {
    pub global_map: f64,
    pub client_map: Vec<f64>,
}

/// Held-out evaluation: every client's test split on its own classes, and
/// the union of test splits on the union of classes.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub thresholds: Thresholds,
    union_ids: Vec<usize>,
    union_classes: ClassEmbeddingBatch,
    clients: Vec<(Vec<usize>, ClassEmbeddingBatch)>,
}

impl Evaluator {
    pub fn new(backbone: &FrozenBackbone, tasks: &[TaskSpec], thresholds: Thresholds) -> Result<Self> {
        let mut pairs: Vec<(usize, String)> = tasks
            .iter()
            .flat_map(|t| t.class_ids.iter().copied().zip(t.class_names.iter().cloned()))
            .collect();
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let union_ids: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let union_names: Vec<String> = pairs.into_iter().map(|p| p.1).collect();
        let clients = tasks
            .iter()
            .map(|t| Ok((t.class_ids.clone(), encode_classnames(backbone, &t.class_names)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluator {
            thresholds,
            union_ids,
            union_classes: encode_classnames(backbone, &union_names)?,
            clients,
        })
    }

    pub fn union_class_ids(&self) -> &[usize] {
        &self.union_ids
    }

    pub fn evaluate(&self, model: &PromptModel, backbone: &FrozenBackbone, tasks: &[TaskSpec], mode: ExecMode) -> Result<ModelEval> {
        let all: Vec<&Scene> = tasks.iter().flat_map(|t| t.test.iter()).collect();
        let prompts = model.prompts(&self.union_classes)?;
        let global = evaluate_prompts(backbone, &self.union_classes, &self.union_ids, &prompts, &all, self.thresholds, mode)?;
        let client_map = self
            .clients
            .iter()
            .zip(tasks)
            .map(|((ids, classes), task)| {
                let scenes: Vec<&Scene> = task.test.iter().collect();
                let prompts = model.prompts(classes)?;
                Ok(evaluate_prompts(backbone, classes, ids, &prompts, &scenes, self.thresholds, mode)?.map)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelEval {
            global_map: global.map,
            client_map,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<usize>,
    pub client_losses: Vec<(usize, LossBreakdown)>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    /// Cumulative simulated seconds at the end of the round.
    pub simulated_time: f64,
    pub eval: Option<ModelEval>,
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub records: Vec<RoundRecord>,
    pub final_model: PromptModel,
}

/// Run `config.rounds` synchronous rounds: select, broadcast, train
/// locally, collect and aggregate. With an evaluator, the global model is
/// scored every `eval_every` rounds and after the last round.
pub fn run_federation(
    config: &FederationConfig,
    seeds: &Seeds,
    backbone: &FrozenBackbone,
    tasks: &[TaskSpec],
    initial: &PromptModel,
    evaluator: Option<&Evaluator>,
    mode: ExecMode,
) -> Result<FederationOutcome> {
    config.validate()?;
    if tasks.len() != config.n_clients {
        return Err(Error::config(format!(
            "federation.n_clients is {} but {} client tasks were given",
            config.n_clients,
            tasks.len()
        )));
    }
    if let Some(i) = tasks.iter().enumerate().position(|(i, t)| t.client_id != i) {
        return Err(Error::config(format!("task {i} does not carry client id {i}")));
    }
    let selection = RngStream::new(seeds.selection, StreamName::Selection);
    let mut clients = tasks
        .iter()
        .map(|t| ClientState::new(t, backbone, initial.param_count(), config.optimizer, seeds.batching))
        .collect::<Result<Vec<_>>>()?;
    let mut global = initial.quantized();
    let mut clock = 0.0;
    let mut records = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds {
        let selected = select_clients(config, round, &selection);
        let payload = global.to_bytes()?;
        let mut active: Vec<&mut ClientState> = clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.client_id).is_ok())
            .collect();
        let updates = map_mut(mode, &mut active, |state| {
            client_local_train(&payload, round, &tasks[state.client_id], state, backbone, config, mode)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        global = aggregate(&updates)?;
        let bytes_down = selected.len() * payload.len();
        let bytes_up: usize = updates.iter().map(|u| u.payload.len()).sum();
        clock += config.network.transfer_seconds(payload.len())
            + updates
                .iter()
                .map(|u| config.network.transfer_seconds(u.payload.len()))
                .fold(0.0, f64::max);
        let last = round + 1 == config.rounds;
        let due = config.eval_every > 0 && (round + 1) % config.eval_every == 0;
        let eval = match evaluator {
            Some(ev) if due || last => Some(ev.evaluate(&global, backbone, tasks, mode)?),
            _ => None,
        };
        records.push(RoundRecord {
            round,
            selected,
            client_losses: updates.iter().map(|u| (u.client_id, u.local_loss)).collect(),
            bytes_up,
            bytes_down,
            simulated_time: clock,
            eval,
        });
    }
    Ok(FederationOutcome {
        records,
        final_model: global,
    })
}
