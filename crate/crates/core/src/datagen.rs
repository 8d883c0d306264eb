//! Synthetic world, tasks and scenes, the analytic oracle prompts, and
//! scene-file ingestion.
//!
//! Each class `c` has a unit prototype `g_c`. The frozen text encoder maps
//! every token of class `c`'s name to `g_c + b + ε`, where the shared bias
//! `b = β · normalize(Σ g_c)` stands in for missing domain knowledge. Image
//! regions showing class `c` carry `normalize(g_c + η)`. A prompt block
//! summing to `-n̄·b` cancels the bias in the pooled class feature, which is
//! what [`oracle_prompts`] returns.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::boxes::BoxCxCyWH;
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Matrix, RngStream, StreamName};
use crate::promptgen::PromptSet;
use crate::surrogate::{FrozenBackbone, GroundTruth, HeadConfig, Region, Scene};

pub const DEFAULT_CLASS_NAMES: [&str; 6] = ["apple", "orange", "lemon", "deer", "boar", "crow"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub dim: usize,
    pub n_classes: usize,
    /// Length of the shared text bias `b`.
    pub beta: f64,
    /// Per-coordinate std of class-token noise.
    pub sigma_tok: f64,
    /// Per-coordinate std of region-feature noise.
    pub sigma_img: f64,
    /// Per-coordinate std of proposal-box jitter.
    pub sigma_box: f64,
    pub min_box: f64,
    pub max_box: f64,
    /// Defaults to `DEFAULT_CLASS_NAMES`, then `class{i}`.
    pub class_names: Vec<String>,
    pub head: HeadConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dim: 64,
            n_classes: 6,
            beta: 4.0,
            sigma_tok: 0.0125,
            sigma_img: 0.1,
            sigma_box: 0.05,
            min_box: 0.3,
            max_box: 0.6,
            class_names: Vec::new(),
            head: HeadConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.dim < 8 {
            return Err(Error::config(format!(
                "world needs at least 2 classes and 8 dimensions (got {}, {})",
                self.n_classes, self.dim
            )));
        }
        let sig = [self.beta, self.sigma_tok, self.sigma_img, self.sigma_box];
        if sig.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::config("beta and noise levels must be finite and non-negative"));
        }
        if !(self.min_box > 0.0 && self.min_box <= self.max_box && self.max_box <= 1.0) {
            return Err(Error::config("box size range must satisfy 0 < min_box <= max_box <= 1"));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.n_classes {
            return Err(Error::config(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn resolved_class_names(&self) -> Vec<String> {
        if !self.class_names.is_empty() {
            return self.class_names.clone();
        }
        (0..self.n_classes)
            .map(|i| {
                DEFAULT_CLASS_NAMES
                    .get(i)
                    .map_or_else(|| format!("class{i}"), |s| (*s).to_owned())
            })
            .collect()
    }
}

/// The generated world and its frozen backbone.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub prototypes: Matrix,
    pub bias: Vec<f64>,
    pub class_names: Vec<String>,
    pub backbone: FrozenBackbone,
}

impl SyntheticWorld {
    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn names_of(&self, class_ids: &[usize]) -> Vec<String> {
        class_ids.iter().map(|&c| self.class_names[c].clone()).collect()
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = l2_norm(&v);
    if n == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / n).collect()
}

/// Draws, in order: prototypes, class-token noise (class by class, token
/// by token), then the box head.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<SyntheticWorld> {
    config.validate()?;
    let (d, c) = (config.dim, config.n_classes);
    let mut rng = RngStream::new(seed, StreamName::World);
    let mut prototypes = Matrix::zeros(c, d);
    for i in 0..c {
        prototypes.row_mut(i).copy_from_slice(&normalized(rng.normal_vec(d, 1.0)));
    }
    let sum = prototypes.column_sums();
    let bias: Vec<f64> = normalized(sum).into_iter().map(|x| config.beta * x).collect();

    let class_names = config.resolved_class_names();
    let mut table = BTreeMap::new();
    for (i, name) in class_names.iter().enumerate() {
        for tok in name.split_whitespace() {
            let noise = rng.normal_vec(d, config.sigma_tok);
            let emb: Vec<f64> = (0..d).map(|k| prototypes[(i, k)] + bias[k] + noise[k]).collect();
            table.entry(tok.to_owned()).or_insert(emb);
        }
    }
    let box_head = Matrix::from_vec(4, d, rng.normal_vec(4 * d, 1.0 / (d as f64).sqrt()))?;
    let backbone = FrozenBackbone::new(d, seed, table, box_head, config.head)?;
    Ok(SyntheticWorld {
        config: config.clone(),
        prototypes,
        bias,
        class_names,
        backbone,
    })
}

fn random_box(rng: &mut RngStream, lo: f64, hi: f64) -> BoxCxCyWH {
    let w = rng.uniform_in(lo, hi);
    let h = rng.uniform_in(lo, hi);
    let cx = rng.uniform_in(w / 2.0, 1.0 - w / 2.0);
    let cy = rng.uniform_in(h / 2.0, 1.0 - h / 2.0);
    BoxCxCyWH::new(cx, cy, w, h)
}

/// Clamp a jittered box back into the unit square with positive extents.
fn clamp_box(b: BoxCxCyWH) -> BoxCxCyWH {
    let w = b.w.clamp(0.01, 1.0);
    let h = b.h.clamp(0.01, 1.0);
    BoxCxCyWH::new(b.cx.clamp(w / 2.0, 1.0 - w / 2.0), b.cy.clamp(h / 2.0, 1.0 - h / 2.0), w, h)
}

/// One scene with 1–4 objects drawn from `class_ids` and 2–6 background regions.
pub fn generate_scene(world: &SyntheticWorld, class_ids: &[usize], rng: &mut RngStream) -> Scene {
    let cfg = &world.config;
    let d = cfg.dim;
    let n_obj = 1 + rng.below(4) as usize;
    let n_bg = 2 + rng.below(5) as usize;
    let mut scene = Scene::default();
    for _ in 0..n_obj {
        let label = class_ids[rng.below(class_ids.len() as u64) as usize];
        let bbox = random_box(rng, cfg.min_box, cfg.max_box);
        let noise = rng.normal_vec(d, cfg.sigma_img);
        let feature = normalized((0..d).map(|k| world.prototypes[(label, k)] + noise[k]).collect());
        let jitter = rng.normal_vec(4, cfg.sigma_box);
        let proposal = if cfg.sigma_box == 0.0 {
            bbox
        } else {
            clamp_box(BoxCxCyWH::from_array(std::array::from_fn(|k| bbox.to_array()[k] + jitter[k])))
        };
        scene.regions.push(Region { feature, proposal });
        scene.ground_truth.push(GroundTruth { label, bbox });
    }
    for _ in 0..n_bg {
        let feature = normalized(rng.normal_vec(d, 1.0));
        let proposal = random_box(rng, cfg.min_box, cfg.max_box);
        scene.regions.push(Region { feature, proposal });
    }
    scene
}

/// One client's detection task and its data splits.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub client_id: usize,
    pub class_ids: Vec<usize>,
    pub class_names: Vec<String>,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Sizes of an 8:1:1 split of `n` items.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.8).round() as usize;
    let val = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, val, n - train - val)
}

/// Default heterogeneous partition: disjoint consecutive pairs.
pub fn pair_partition(n_classes: usize, n_clients: usize) -> Vec<Vec<usize>> {
    (0..n_clients)
        .map(|i| vec![(2 * i) % n_classes, (2 * i + 1) % n_classes])
        .collect()
}

/// Generate each client's scenes from its own child of the `scenes` stream.
pub fn generate_tasks(
    world: &SyntheticWorld,
    partition: &[Vec<usize>],
    scenes_per_client: usize,
    seed: u64,
) -> Result<Vec<TaskSpec>> {
    let base = RngStream::new(seed, StreamName::Scenes);
    partition
        .iter()
        .enumerate()
        .map(|(client_id, ids)| {
            if ids.is_empty() {
                return Err(Error::config(format!("client {client_id} has no classes")));
            }
            if let Some(bad) = ids.iter().find(|&&c| c >= world.n_classes()) {
                return Err(Error::config(format!("class id {bad} out of range")));
            }
            let mut rng = base.child(client_id as u64);
            let mut scenes: Vec<Scene> = (0..scenes_per_client)
                .map(|_| generate_scene(world, ids, &mut rng))
                .collect();
            let (n_train, n_val, _) = split_sizes(scenes_per_client);
            let test = scenes.split_off(n_train + n_val);
            let val = scenes.split_off(n_train);
            Ok(TaskSpec {
                client_id,
                class_ids: ids.clone(),
                class_names: world.names_of(ids),
                train: scenes,
                val,
                test,
            })
        })
        .collect()
}

/// Scenes showing only `class_id`, from a dedicated child stream.
pub fn generate_class_scenes(world: &SyntheticWorld, class_id: usize, count: usize, rng: &mut RngStream) -> Vec<Scene> {
    (0..count).map(|_| generate_scene(world, &[class_id], rng)).collect()
}

/// Every row equals `-(n̄/m)·b_eff`, with `n̄` the mean class-name length in
/// tokens and `b_eff` the bias as seen through `backbone` (world bias plus
/// any adaptation correction).
pub fn oracle_prompts(world: &SyntheticWorld, backbone: &FrozenBackbone, class_ids: &[usize], m: usize) -> Result<PromptSet> {
    if m == 0 {
        return Err(Error::config("oracle prompts need m >= 1"));
    }
    let total: usize = class_ids
        .iter()
        .map(|&c| world.class_names[c].split_whitespace().count())
        .sum();
    let mean_len = total as f64 / class_ids.len().max(1) as f64;
    let mut eff = world.bias.clone();
    if let Some(c) = backbone.correction() {
        eff.iter_mut().zip(c).for_each(|(b, x)| *b += x);
    }
    let row: Vec<f64> = eff.iter().map(|b| -mean_len / m as f64 * b).collect();
    let data = (0..m).flat_map(|_| row.iter().copied()).collect();
    Ok(PromptSet {
        vectors: Matrix::from_vec(m, world.dim(), data)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionRecord {
    feature: Vec<f64>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    label: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRecord {
    regions: Vec<RegionRecord>,
    gt: Vec<GtRecord>,
}

/// Read line-delimited scene records. Features are L2-normalized on read.
pub fn read_scene_file<R: BufRead>(reader: R, dim: usize, n_classes: usize) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::SceneFile { line: line_no, message };
        let rec: SceneRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let check_box = |b: [f64; 4]| -> Result<BoxCxCyWH> {
            let bx = BoxCxCyWH::from_array(b);
            if !bx.in_unit_square() {
                return Err(bad(format!("box {b:?} is not a valid box inside the unit square")));
            }
            Ok(bx)
        };
        let mut scene = Scene::default();
        for r in rec.regions {
            if r.feature.len() != dim {
                return Err(bad(format!("feature has {} values, expected {dim}", r.feature.len())));
            }
            let n = l2_norm(&r.feature);
            if !n.is_finite() || n == 0.0 {
                return Err(bad("feature must be finite and non-zero".into()));
            }
            scene.regions.push(Region {
                feature: r.feature.iter().map(|x| x / n).collect(),
                proposal: check_box(r.bbox)?,
            });
        }
        for g in rec.gt {
            if g.label >= n_classes {
                return Err(bad(format!("label {} out of range for {n_classes} classes", g.label)));
            }
            scene.ground_truth.push(GroundTruth {
                label: g.label,
                bbox: check_box(g.bbox)?,
            });
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn write_scene_file<W: Write>(mut writer: W, scenes: &[Scene]) -> Result<()> {
    for s in scenes {
        let rec = SceneRecord {
            regions: s
                .regions
                .iter()
                .map(|r| RegionRecord {
                    feature: r.feature.clone(),
                    bbox: r.proposal.to_array(),
                })
                .collect(),
            gt: s
                .ground_truth
                .iter()
                .map(|g| GtRecord {
                    label: g.label,
                    bbox: g.bbox.to_array(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;
    use crate::promptgen::PromptSet;
    use crate::surrogate::{assemble_prompted_embeddings, class_features, encode_classnames};

    fn world(seed: u64) -> SyntheticWorld {
        generate_world(&WorldConfig::default(), seed).unwrap()
    }

    fn cosines_with_prototypes(w: &SyntheticWorld, prompts: &PromptSet, ids: &[usize]) -> Vec<f64> {
        let t = encode_classnames(&w.backbone, &w.names_of(ids)).unwrap();
        let seq = assemble_prompted_embeddings(&t, prompts).unwrap();
        let f = class_features(&seq).unwrap().feats;
        ids.iter()
            .enumerate()
            .map(|(i, &c)| dot(f.row(i), w.prototypes.row(c)))
            .collect()
    }

    #[test]
    fn world_invariants_and_determinism() {
        let w = world(3);
        for c in 0..6 {
            assert!((l2_norm(w.prototypes.row(c)) - 1.0).abs() < 1e-12);
        }
        assert!((l2_norm(&w.bias) - 4.0).abs() < 1e-12);
        let again = world(3);
        assert_eq!(w.prototypes, again.prototypes);
        assert_eq!(w.backbone, again.backbone);
    }

    #[test]
    fn null_bias_tokens_are_noisy_prototypes() {
        let cfg = WorldConfig {
            beta: 0.0,
            sigma_tok: 0.0,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 1).unwrap();
        assert!(w.bias.iter().all(|&b| b == 0.0));
        let e = w.backbone.embed_token("lemon");
        assert_eq!(e.as_slice(), w.prototypes.row(2));
    }

    #[test]
    fn degenerate_config_rejected() {
        let cfg = WorldConfig {
            n_classes: 1,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&cfg, 0), Err(Error::Config(_))));
        let cfg = WorldConfig {
            dim: 4,
            ..WorldConfig::default()
        };
        assert!(generate_world(&cfg, 0).is_err());
    }

    #[test]
    fn prototypes_are_nearly_orthogonal() {
        for seed in 0..100 {
            let w = world(seed);
            for a in 0..6 {
                for b in a + 1..6 {
                    assert!(dot(w.prototypes.row(a), w.prototypes.row(b)).abs() < 0.5);
                }
            }
        }
    }

    #[test]
    fn noiseless_scene_limit() {
        let cfg = WorldConfig {
            sigma_img: 0.0,
            sigma_box: 0.0,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 2).unwrap();
        let mut rng = RngStream::new(2, StreamName::Scenes);
        for _ in 0..20 {
            let s = generate_scene(&w, &[1, 4], &mut rng);
            for (r, g) in s.regions.iter().zip(&s.ground_truth) {
                assert_eq!(r.proposal, g.bbox);
                for (a, b) in r.feature.iter().zip(w.prototypes.row(g.label)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fuzzed_scenes_are_valid() {
        let w = world(4);
        let mut rng = RngStream::new(4, StreamName::Scenes);
        for _ in 0..10_000 {
            let s = generate_scene(&w, &[0, 3], &mut rng);
            assert!((1..=4).contains(&s.ground_truth.len()));
            let n_bg = s.regions.len() - s.ground_truth.len();
            assert!((2..=6).contains(&n_bg));
            for g in &s.ground_truth {
                assert!(g.label == 0 || g.label == 3);
                assert!(g.bbox.in_unit_square());
            }
            for r in &s.regions {
                assert!(r.proposal.in_unit_square());
                assert!((l2_norm(&r.feature) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splits_are_8_1_1_and_disjoint() {
        assert_eq!(split_sizes(2000), (1600, 200, 200));
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(7), (6, 1, 0));
        let w = world(5);
        let tasks = generate_tasks(&w, &pair_partition(6, 3), 50, 5).unwrap();
        for t in &tasks {
            assert_eq!((t.train.len(), t.val.len(), t.test.len()), (40, 5, 5));
            for s in &t.test {
                assert!(!t.train.contains(s) && !t.val.contains(s));
            }
        }
        assert_eq!(tasks[2].class_names, vec!["boar".to_string(), "crow".to_string()]);
    }

    #[test]
    fn oracle_prompts_cancel_bias() {
        let cfg = WorldConfig {
            beta: 0.0,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg, 6).unwrap();
        let p = oracle_prompts(&w, &w.backbone, &[0, 1], 4).unwrap();
        assert!(p.vectors.as_slice().iter().all(|&x| x == 0.0));

        let mut mean_oracle = 0.0;
        let mut mean_zero = 0.0;
        for seed in 0..100 {
            let w = world(seed);
            let ids = [0, 1, 2, 3, 4, 5];
            let p = oracle_prompts(&w, &w.backbone, &ids, 4).unwrap();
            for cos in cosines_with_prototypes(&w, &p, &ids) {
                assert!(cos >= 0.95, "oracle cosine {cos}");
                mean_oracle += cos / 600.0;
            }
            let w2 = generate_world(
                &WorldConfig {
                    beta: 2.0,
                    ..WorldConfig::default()
                },
                seed,
            )
            .unwrap();
            for cos in cosines_with_prototypes(&w2, &PromptSet::empty(64), &ids) {
                mean_zero += cos / 600.0;
            }
        }
        assert!(mean_oracle > 0.99);
        assert!(mean_zero <= 0.75, "zero-prompt mean cosine {mean_zero}");
    }

    #[test]
    fn scene_file_round_trip_and_errors() {
        let w = world(7);
        let mut rng = RngStream::new(7, StreamName::Scenes);
        let scenes: Vec<Scene> = (0..5).map(|_| generate_scene(&w, &[0, 1], &mut rng)).collect();
        let mut buf = Vec::new();
        write_scene_file(&mut buf, &scenes).unwrap();
        let back = read_scene_file(buf.as_slice(), 64, 6).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in back.iter().zip(&scenes) {
            assert_eq!(a.ground_truth, b.ground_truth);
            for (ra, rb) in a.regions.iter().zip(&b.regions) {
                assert_eq!(ra.proposal, rb.proposal);
                for (x, y) in ra.feature.iter().zip(&rb.feature) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }

        let text = "{\"regions\":[],\"gt\":[]}\n{\"regions\":[{\"feature\":[1.0],\"box\":[0.5,0.5,0.2,0.2]}],\"gt\":[]}\n";
        let err = read_scene_file(text.as_bytes(), 2, 6).unwrap_err();
        assert!(matches!(err, Error::SceneFile { line: 2, .. }), "{err}");
        let text = "{\"regions\":[],\"gt\":[{\"label\":9,\"box\":[0.5,0.5,0.2,0.2]}]}";
        assert!(matches!(read_scene_file(text.as_bytes(), 2, 6), Err(Error::SceneFile { line: 1, .. })));
        let text = "{\"regions\":[],\"gt\":[{\"label\":0,\"box\":[0.95,0.5,0.2,0.2]}]}";
        assert!(read_scene_file(text.as_bytes(), 2, 6).is_err());
        let text = "{\"regions\":[],\"gt\":[],\"extra\":1}";
        assert!(read_scene_file(text.as_bytes(), 2, 6).is_err());
        assert!(read_scene_file("not json".as_bytes(), 2, 6).is_err());
    }
}
