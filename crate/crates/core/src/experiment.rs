//! Experiment configuration, method runs and run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{base_adaptation, fedcoop_init, oracle_model, zero_prompt_model};
use crate::datagen::{generate_tasks, generate_world, pair_partition, SyntheticWorld, TaskSpec, WorldConfig};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::federation::{run_federation, Evaluator, FederationConfig, ModelEval, RoundRecord, Seeds};
use crate::losses::LossBreakdown;
use crate::model::PromptModel;
use crate::numerics::{AdamW, RngStream, StreamName};
use crate::promptgen::init_params;
use crate::surrogate::{FrozenBackbone, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vllfl,
    ZeroPrompt,
    Fedcoop,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vllfl, Method::Fedcoop, Method::ZeroPrompt, Method::Oracle];

    pub fn label(self) -> &'static str {
        match self {
            Method::Vllfl => "vllfl",
            Method::ZeroPrompt => "zero-prompt",
            Method::Fedcoop => "fedcoop",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?} (expected vllfl, zero-prompt, fedcoop or oracle)")))
    }

    /// Whether the method has federated parameters to train.
    pub fn trains(self) -> bool {
        matches!(self, Method::Vllfl | Method::Fedcoop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Scenes generated per client before the 8:1:1 split.
    pub scenes_per_client: usize,
    /// Class ids of each client; empty means disjoint consecutive pairs.
    pub partition: Vec<Vec<usize>>,
    /// Clients train on only the first this many scenes of their train
    /// split (0: the whole split). Validation and test splits are kept.
    pub few_shot: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenes_per_client: 2000,
            partition: Vec::new(),
            few_shot: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of prompt vectors `m`.
    pub prompt_width: usize,
    pub hidden_width: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            prompt_width: 4,
            hidden_width: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    pub steps: usize,
    pub shots_per_class: usize,
    pub optimizer: AdamW,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            steps: 0,
            shots_per_class: 4,
            optimizer: AdamW::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            methods: Method::ALL.to_vec(),
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub rounds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            counts: vec![1, 2, 3],
            seeds: vec![0, 1, 2, 3, 4],
            rounds: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Master seed; every stream uses it unless `seeds` is given.
    pub seed: u64,
    pub seeds: Option<Seeds>,
    pub output_dir: PathBuf,
    pub exec: ExecMode,
    pub world: WorldConfig,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub federation: FederationConfig,
    pub base_adaptation: AdaptationConfig,
    pub thresholds: Thresholds,
    pub compare: CompareConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Vllfl,
            seed: 0,
            seeds: None,
            output_dir: PathBuf::from("runs/default"),
            exec: ExecMode::Parallel,
            world: WorldConfig::default(),
            data: DataConfig::default(),
            generator: GeneratorConfig::default(),
            federation: FederationConfig::default(),
            base_adaptation: AdaptationConfig::default(),
            thresholds: Thresholds::default(),
            compare: CompareConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a TOML document, apply `key=value` overrides (dotted keys,
    /// TOML-syntax values, bare words taken as strings) and validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.federation.validate()?;
        let partition = self.partition();
        if partition.len() != self.federation.n_clients {
            return Err(Error::config(format!(
                "data.partition has {} clients but federation.n_clients is {}",
                partition.len(),
                self.federation.n_clients
            )));
        }
        if let Some(bad) = partition.iter().flatten().find(|&&c| c >= self.world.n_classes) {
            return Err(Error::config(format!("data.partition: class id {bad} out of range")));
        }
        if self.data.scenes_per_client < 10 {
            return Err(Error::config("data.scenes_per_client must be at least 10"));
        }
        if self.generator.prompt_width == 0 || self.generator.hidden_width == 0 {
            return Err(Error::config("generator.prompt_width and generator.hidden_width must be at least 1"));
        }
        self.base_adaptation.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.thresholds.box_threshold) {
            return Err(Error::config("thresholds.box_threshold must be in [0, 1]"));
        }
        if let Some(bad) = self.sweep.counts.iter().find(|&&k| k == 0 || k > self.federation.n_clients) {
            return Err(Error::config(format!(
                "sweep.counts: {bad} is outside 1..={}",
                self.federation.n_clients
            )));
        }
        Ok(())
    }

    pub fn resolved_seeds(&self) -> Seeds {
        self.seeds.unwrap_or_else(|| Seeds::from_master(self.seed))
    }

    pub fn partition(&self) -> Vec<Vec<usize>> {
        if self.data.partition.is_empty() {
            pair_partition(self.world.n_classes, self.federation.n_clients)
        } else {
            self.data.partition.clone()
        }
    }

    /// Copy with all stream seeds derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.seeds = None;
        c
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {item:?} is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry((*part).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key {key:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

/// World, adapted backbone, client tasks and evaluator for one config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub world: SyntheticWorld,
    pub backbone: FrozenBackbone,
    pub tasks: Vec<TaskSpec>,
    pub evaluator: Evaluator,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let seeds = config.resolved_seeds();
    let world = generate_world(&config.world, seeds.world)?;
    let ad = &config.base_adaptation;
    let backbone = base_adaptation(&world, ad.steps, ad.shots_per_class, ad.optimizer, seeds.scenes, config.exec)?;
    let mut tasks = generate_tasks(&world, &config.partition(), config.data.scenes_per_client, seeds.scenes)?;
    if config.data.few_shot > 0 {
        tasks.iter_mut().for_each(|t| t.train.truncate(config.data.few_shot));
    }
    let evaluator = Evaluator::new(&backbone, &tasks, config.thresholds)?;
    Ok(Prepared {
        world,
        backbone,
        tasks,
        evaluator,
    })
}

/// Initial parameters for `method`.
pub fn initial_model(config: &ExperimentConfig, prepared: &Prepared, method: Method) -> Result<PromptModel> {
    let seeds = config.resolved_seeds();
    let d = config.world.dim;
    let m = config.generator.prompt_width;
    let mut init = RngStream::new(seeds.init, StreamName::Init);
    match method {
        Method::Vllfl => Ok(PromptModel::Generator(init_params(m, d, config.generator.hidden_width, &mut init)?)),
        Method::Fedcoop => fedcoop_init(m, d, &mut init),
        Method::ZeroPrompt => Ok(zero_prompt_model(d)),
        Method::Oracle => oracle_model(&prepared.world, &prepared.backbone, prepared.evaluator.union_class_ids(), m),
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub records: Vec<RoundRecord>,
    pub final_model: PromptModel,
    pub final_eval: ModelEval,
}

/// Train (if the method trains) and evaluate on held-out test scenes.
pub fn run_method(config: &ExperimentConfig, prepared: &Prepared, method: Method) -> Result<MethodRun> {
    let initial = initial_model(config, prepared, method)?;
    let p = prepared;
    if !method.trains() {
        let final_eval = p.evaluator.evaluate(&initial, &p.backbone, &p.tasks, config.exec)?;
        return Ok(MethodRun {
            method,
            records: Vec::new(),
            final_model: initial.quantized(),
            final_eval,
        });
    }
    let outcome = run_federation(
        &config.federation,
        &config.resolved_seeds(),
        &p.backbone,
        &p.tasks,
        &initial,
        Some(&p.evaluator),
        config.exec,
    )?;
    let final_eval = match outcome.records.last().and_then(|r| r.eval.clone()) {
        Some(e) => e,
        None => p.evaluator.evaluate(&outcome.final_model, &p.backbone, &p.tasks, config.exec)?,
    };
    Ok(MethodRun {
        method,
        records: outcome.records,
        final_model: outcome.final_model,
        final_eval,
    })
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

fn loss_cells(l: Option<&LossBreakdown>) -> String {
    match l {
        Some(l) => format!("{},{},{},{}", l.total, l.l1, l.giou, l.cons),
        None => ",,,".to_owned(),
    }
}

fn config_json(config: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "config": config,
        "resolved_seeds": config.resolved_seeds(),
    })
}

pub const METRICS_HEADER: &str = "round,client_id,loss_total,loss_l1,loss_giou,loss_cons,map,bytes_up,bytes_down,sim_time_s";

/// `metrics.csv` contents: a `#` line carrying the resolved configuration,
/// the header, then per completed round one row per participating client
/// and one `global` row. Untrained methods get a single `global` row.
pub fn metrics_csv(config: &ExperimentConfig, run: &MethodRun) -> String {
    let mut out = String::new();
    writeln!(out, "# {}", config_json(config)).unwrap();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    if run.records.is_empty() {
        writeln!(out, "0,global,{},{},0,0,0", loss_cells(None), run.final_eval.global_map).unwrap();
        return out;
    }
    for rec in &run.records {
        let round = rec.round + 1;
        let per_client_bytes = rec.bytes_up / rec.selected.len().max(1);
        let per_client_down = rec.bytes_down / rec.selected.len().max(1);
        for (cid, loss) in &rec.client_losses {
            let map = rec.eval.as_ref().map(|e| e.client_map[*cid]);
            writeln!(
                out,
                "{round},{cid},{},{},{per_client_bytes},{per_client_down},{}",
                loss_cells(Some(loss)),
                opt_f64(map),
                rec.simulated_time
            )
            .unwrap();
        }
        let losses: Vec<LossBreakdown> = rec.client_losses.iter().map(|(_, l)| *l).collect();
        let mean = LossBreakdown::mean(&losses);
        writeln!(
            out,
            "{round},global,{},{},{},{},{}",
            loss_cells(Some(&mean)),
            opt_f64(rec.eval.as_ref().map(|e| e.global_map)),
            rec.bytes_up,
            rec.bytes_down,
            rec.simulated_time
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ClientReport {
    pub client_id: usize,
    pub class_ids: Vec<usize>,
    pub class_names: Vec<String>,
    pub map: f64,
}

pub fn final_report(config: &ExperimentConfig, prepared: &Prepared, run: &MethodRun) -> serde_json::Value {
    let clients: Vec<ClientReport> = prepared
        .tasks
        .iter()
        .zip(&run.final_eval.client_map)
        .map(|(t, &map)| ClientReport {
            client_id: t.client_id,
            class_ids: t.class_ids.clone(),
            class_names: t.class_names.clone(),
            map,
        })
        .collect();
    let history: Vec<serde_json::Value> = run
        .records
        .iter()
        .filter_map(|r| {
            r.eval
                .as_ref()
                .map(|e| serde_json::json!({"round": r.round + 1, "global_map": e.global_map, "client_map": e.client_map}))
        })
        .collect();
    let last = run.records.last();
    serde_json::json!({
        "method": run.method.label(),
        "param_count": run.final_model.param_count(),
        "payload_bytes": run.final_model.payload_len(),
        "rounds_completed": run.records.len(),
        "global_map": run.final_eval.global_map,
        "clients": clients,
        "history": history,
        "total_bytes_up": run.records.iter().map(|r| r.bytes_up).sum::<usize>(),
        "total_bytes_down": run.records.iter().map(|r| r.bytes_down).sum::<usize>(),
        "sim_time_s": last.map_or(0.0, |r| r.simulated_time),
        "config": config,
        "resolved_seeds": config.resolved_seeds(),
    })
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Paths written by [`run_train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub checkpoint: PathBuf,
    pub run: MethodRun,
}

/// Run `config.method` and write `metrics.csv`, `final_report.json` and
/// `checkpoint.vlpg` into the output directory.
pub fn run_train(config: &ExperimentConfig) -> Result<TrainArtifacts> {
    let prepared = prepare(config)?;
    let run = run_method(config, &prepared, config.method)?;
    let dir = &config.output_dir;
    let metrics = dir.join("metrics.csv");
    let report = dir.join("final_report.json");
    let checkpoint = dir.join("checkpoint.vlpg");
    write_atomic(&metrics, metrics_csv(config, &run).as_bytes())?;
    write_atomic(&report, &pretty(&final_report(config, &prepared, &run))?)?;
    write_atomic(&checkpoint, &run.final_model.to_bytes()?)?;
    Ok(TrainArtifacts {
        metrics,
        report,
        checkpoint,
        run,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: Method,
    pub seed: u64,
    pub global_map: f64,
    pub client_map: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub method: Method,
    pub mean_global_map: f64,
    pub mean_client_map: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub summary: Vec<CompareSummary>,
}

impl CompareReport {
    pub fn mean_global(&self, method: Method) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method).map(|s| s.mean_global_map)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let n_clients = self.summary.first().map_or(0, |s| s.mean_client_map.len());
        write!(out, "{:<12} {:>8}", "method", "global").unwrap();
        for c in 0..n_clients {
            write!(out, " {:>9}", format!("client{c}")).unwrap();
        }
        out.push('\n');
        for s in &self.summary {
            write!(out, "{:<12} {:>8.4}", s.method.label(), s.mean_global_map).unwrap();
            for m in &s.mean_client_map {
                write!(out, " {m:>9.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

/// Every method on identical worlds and scenes for each seed.
pub fn compare(config: &ExperimentConfig, methods: &[Method], seeds: &[u64]) -> Result<CompareReport> {
    if methods.len() < 2 {
        return Err(Error::config("compare needs at least two methods"));
    }
    if seeds.is_empty() {
        return Err(Error::config("compare.seeds must not be empty"));
    }
    let per_seed = map_indexed(config.exec, seeds, |_, &seed| -> Result<Vec<CompareRow>> {
        let cfg = config.with_seed(seed);
        let prepared = prepare(&cfg)?;
        methods
            .iter()
            .map(|&m| {
                let run = run_method(&cfg, &prepared, m)?;
                Ok(CompareRow {
                    method: m,
                    seed,
                    global_map: run.final_eval.global_map,
                    client_map: run.final_eval.client_map,
                })
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    let summary = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.method == m).collect();
            let n_clients = mine.first().map_or(0, |r| r.client_map.len());
            CompareSummary {
                method: m,
                mean_global_map: mean(mine.iter().map(|r| r.global_map)),
                mean_client_map: (0..n_clients).map(|c| mean(mine.iter().map(|r| r.client_map[c]))).collect(),
            }
        })
        .collect();
    Ok(CompareReport { rows, summary })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCurve {
    pub participants: usize,
    /// `(round, mean global mAP over seeds)` at each evaluation point.
    pub mean_map: Vec<(usize, f64)>,
    pub final_maps: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub curves: Vec<SweepCurve>,
}

impl SweepReport {
    pub fn final_means(&self) -> Vec<(usize, f64)> {
        self.curves.iter().map(|c| (c.participants, mean(c.final_maps.iter().copied()))).collect()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        write!(out, "{:>6}", "round").unwrap();
        for c in &self.curves {
            write!(out, " {:>9}", format!("k={}", c.participants)).unwrap();
        }
        out.push('\n');
        let rounds: Vec<usize> = self.curves.first().map_or(Vec::new(), |c| c.mean_map.iter().map(|p| p.0).collect());
        for (i, r) in rounds.iter().enumerate() {
            write!(out, "{r:>6}").unwrap();
            for c in &self.curves {
                write!(out, " {:>9.4}", c.mean_map[i].1).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// VLLFL with a fixed number of participants per round, one run per
/// count and seed.
pub fn sweep_participation(config: &ExperimentConfig, counts: &[usize], seeds: &[u64], rounds: usize) -> Result<SweepReport> {
    if counts.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one count and one seed"));
    }
    if let Some(bad) = counts.iter().find(|&&k| k == 0 || k > config.federation.n_clients) {
        return Err(Error::config(format!(
            "sweep.counts: {bad} is outside 1..={}",
            config.federation.n_clients
        )));
    }
    let jobs: Vec<(usize, u64)> = counts.iter().flat_map(|&k| seeds.iter().map(move |&s| (k, s))).collect();
    let prepared = map_indexed(config.exec, seeds, |_, &s| prepare(&config.with_seed(s)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let runs = map_indexed(config.exec, &jobs, |_, &(k, s)| -> Result<Vec<(usize, f64)>> {
        let mut cfg = config.with_seed(s);
        cfg.federation.participants = Some(k);
        cfg.federation.rounds = rounds;
        let p = &prepared[seeds.iter().position(|&x| x == s).expect("seed present")];
        let run = run_method(&cfg, p, Method::Vllfl)?;
        Ok(run
            .records
            .iter()
            .filter_map(|r| r.eval.as_ref().map(|e| (r.round + 1, e.global_map)))
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let curves = counts
        .iter()
        .map(|&k| {
            let mine: Vec<&Vec<(usize, f64)>> = jobs.iter().zip(&runs).filter(|(j, _)| j.0 == k).map(|(_, r)| r).collect();
            let n_points = mine.first().map_or(0, |r| r.len());
            SweepCurve {
                participants: k,
                mean_map: (0..n_points).map(|i| (mine[0][i].0, mean(mine.iter().map(|r| r[i].1)))).collect(),
                final_maps: mine.iter().map(|r| r.last().map_or(0.0, |p| p.1)).collect(),
            }
        })
        .collect();
    Ok(SweepReport {
        rounds,
        seeds: seeds.to_vec(),
        curves,
    })
}

/// Write `value` as pretty JSON to `dir/name` with the configuration
/// attached.
pub fn write_report(config: &ExperimentConfig, name: &str, value: &impl Serialize) -> Result<PathBuf> {
    let path = config.output_dir.join(name);
    let doc = serde_json::json!({
        "report": value,
        "config": config,
        "resolved_seeds": config.resolved_seeds(),
    });
    write_atomic(&path, &pretty(&doc)?)?;
    Ok(path)
}
