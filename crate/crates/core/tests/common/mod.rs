//! Independent reference implementations shared by the integration tests
//! and the acceptance suite.

#![allow(dead_code)]

use vllfl_core::boxes::BoxCxCyWH;
use vllfl_core::datagen::{generate_tasks, generate_world, SyntheticWorld, TaskSpec, WorldConfig};
use vllfl_core::exec::ExecMode;
use vllfl_core::federation::{FederationConfig, Seeds};
use vllfl_core::metrics::{LabeledBox, ScoredBox};
use vllfl_core::model::PromptModel;
use vllfl_core::numerics::{AdamWState, Matrix, RngStream, StreamName};
use vllfl_core::pipeline::batch_loss_and_grad;
use vllfl_core::surrogate::{encode_classnames, Scene};

/// Minimum total cost over every injective assignment of the smaller side.
pub fn brute_force_min_cost(cost: &Matrix) -> f64 {
    let (r, c) = cost.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    let transposed = r > c;
    let (small, large) = if transposed { (c, r) } else { (r, c) };
    let at = |i: usize, j: usize| if transposed { cost[(j, i)] } else { cost[(i, j)] };
    let mut used = vec![false; large];
    let mut best = f64::INFINITY;
    fn go(
        i: usize,
        small: usize,
        large: usize,
        acc: f64,
        used: &mut [bool],
        best: &mut f64,
        at: &dyn Fn(usize, usize) -> f64,
    ) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..large {
            if !used[j] {
                used[j] = true;
                go(i + 1, small, large, acc + at(i, j), used, best, at);
                used[j] = false;
            }
        }
    }
    go(0, small, large, 0.0, &mut used, &mut best, &at);
    best
}

/// GIoU by counting cell centres of an `n × n` grid laid over the
/// smallest enclosing box.
pub fn raster_giou(a: BoxCxCyWH, b: BoxCxCyWH, n: usize) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let (cx0, cy0) = (ax0.min(bx0), ay0.min(by0));
    let (cx1, cy1) = (ax1.max(bx1), ay1.max(by1));
    let (sx, sy) = ((cx1 - cx0) / n as f64, (cy1 - cy0) / n as f64);
    let mut in_a = 0usize;
    let mut in_b = 0usize;
    let mut both = 0usize;
    for iy in 0..n {
        let y = cy0 + (iy as f64 + 0.5) * sy;
        let ya = y >= ay0 && y < ay1;
        let yb = y >= by0 && y < by1;
        if !ya && !yb {
            continue;
        }
        for ix in 0..n {
            let x = cx0 + (ix as f64 + 0.5) * sx;
            let pa = ya && x >= ax0 && x < ax1;
            let pb = yb && x >= bx0 && x < bx1;
            in_a += pa as usize;
            in_b += pb as usize;
            both += (pa && pb) as usize;
        }
    }
    let union = (in_a + in_b - both) as f64;
    let total = (n * n) as f64;
    both as f64 / union - (total - union) / total
}

fn overlap(a: BoxCxCyWH, b: BoxCxCyWH) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let w = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let h = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// Mean AP recomputed from scratch at every rank cutoff: the top-`k`
/// detections are matched afresh against all-pairs IoU, giving the
/// precision/recall point for `k`, and AP sums recall steps times the best
/// precision at or beyond each step.
pub fn brute_force_map(dets: &[Vec<ScoredBox>], gts: &[Vec<LabeledBox>], n_classes: usize, thr: f64) -> f64 {
    let mut aps = Vec::new();
    for class in 0..n_classes {
        let n_gt: usize = gts.iter().map(|g| g.iter().filter(|b| b.class == class).count()).sum();
        if n_gt == 0 {
            continue;
        }
        let mut ranked: Vec<(usize, usize, ScoredBox)> = Vec::new();
        for (s, ds) in dets.iter().enumerate() {
            for (i, d) in ds.iter().enumerate() {
                if d.class == class {
                    ranked.push((s, i, *d));
                }
            }
        }
        ranked.sort_by(|x, y| y.2.score.total_cmp(&x.2.score).then((x.0, x.1).cmp(&(y.0, y.1))));
        let ious: Vec<Vec<f64>> = ranked
            .iter()
            .map(|(s, _, d)| {
                gts[*s]
                    .iter()
                    .map(|g| if g.class == class { overlap(d.bbox, g.bbox) } else { -1.0 })
                    .collect()
            })
            .collect();
        let mut points = Vec::new();
        for k in 1..=ranked.len() {
            let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
            let mut tp = 0usize;
            for (idx, (s, _, _)) in ranked[..k].iter().enumerate() {
                let mut best: Option<usize> = None;
                for (j, &v) in ious[idx].iter().enumerate() {
                    if v >= thr && !taken[*s][j] && best.is_none_or(|b| v > ious[idx][b]) {
                        best = Some(j);
                    }
                }
                if let Some(j) = best {
                    taken[*s][j] = true;
                    tp += 1;
                }
            }
            points.push((tp as f64 / k as f64, tp as f64 / n_gt as f64));
        }
        let mut ap = 0.0;
        let mut prev = 0.0;
        for (k, &(_, r)) in points.iter().enumerate() {
            if r > prev {
                let p = points[k..].iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
                ap += (r - prev) * p;
                prev = r;
            }
        }
        aps.push(ap);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

pub fn random_box(rng: &mut RngStream, lo: f64, hi: f64) -> BoxCxCyWH {
    let w = rng.uniform_in(lo, hi);
    let h = rng.uniform_in(lo, hi);
    BoxCxCyWH::new(rng.uniform_in(w / 2.0, 1.0 - w / 2.0), rng.uniform_in(h / 2.0, 1.0 - h / 2.0), w, h)
}

/// A small world with two clients, for gradient and protocol checks.
pub fn small_world(seed: u64) -> (SyntheticWorld, Vec<TaskSpec>) {
    let config = WorldConfig {
        dim: 12,
        n_classes: 4,
        ..WorldConfig::default()
    };
    let world = generate_world(&config, seed).unwrap();
    let tasks = generate_tasks(&world, &[vec![0, 1], vec![2, 3]], 20, seed).unwrap();
    (world, tasks)
}

/// Centralized reference for one client at full participation: one
/// shuffled epoch of AdamW steps per round, then rounding to wire
/// precision.
pub fn centralized_loop(
    config: &FederationConfig,
    seeds: &Seeds,
    world: &SyntheticWorld,
    task: &TaskSpec,
    initial: &PromptModel,
) -> PromptModel {
    let backbone = &world.backbone;
    let classes = encode_classnames(backbone, &task.class_names).unwrap();
    let mut model = initial.quantized();
    let mut opt = AdamWState::new(config.optimizer, model.param_count());
    let mut batching = RngStream::new(seeds.batching, StreamName::Batching).child(task.client_id as u64);
    for _ in 0..config.rounds {
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        batching.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &task.train[i]).collect();
            let (prompts, trace) = model.forward(&classes).unwrap();
            let g = batch_loss_and_grad(backbone, &classes, &task.class_ids, &prompts, &batch, ExecMode::Sequential)
                .unwrap();
            let grad = model.backward(&trace, &classes, &g.d_prompts).unwrap();
            let mut flat = model.to_flat();
            opt.step(&mut flat, &grad).unwrap();
            model.set_flat(&flat).unwrap();
        }
        model = model.quantized();
    }
    model
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = vllfl_core::numerics::l2_norm(a).max(vllfl_core::numerics::l2_norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Relative error of the analytic prompt-generator gradient of `Σ R ⊙ P`
/// against central differences, for a random `R` and random weights.
pub fn generator_grad_error(seed: u64) -> f64 {
    use vllfl_core::promptgen::{backprop, generate_prompts, init_params};
    let (world, tasks) = small_world(seed);
    let classes = encode_classnames(&world.backbone, &tasks[0].class_names).unwrap();
    let mut rng = RngStream::new(seed, StreamName::Init).child(7);
    let mut params = init_params(3, world.dim(), 6, &mut rng).unwrap();
    let flat: Vec<f64> = (0..params.param_count()).map(|_| 0.5 * rng.normal()).collect();
    params.set_flat(&flat).unwrap();
    let r = Matrix::from_vec(3, world.dim(), rng.normal_vec(3 * world.dim(), 1.0)).unwrap();
    let (_, trace) = generate_prompts(&params, &classes).unwrap();
    let analytic = backprop(&params, &trace, &classes, &r).unwrap().to_flat();
    let objective = |x: &[f64]| {
        let mut p = params.clone();
        p.set_flat(x).unwrap();
        let (ps, _) = generate_prompts(&p, &classes).unwrap();
        vllfl_core::numerics::dot(ps.vectors.as_slice(), r.as_slice())
    };
    let numeric = vllfl_core::numerics::finite_diff_grad(objective, &flat, 1e-6).unwrap();
    rel_err(&analytic, &numeric)
}

/// Relative error of the end-to-end gradient (generator, pooled class
/// features, detection head, matched losses) against central differences.
pub fn pipeline_grad_error(seed: u64) -> f64 {
    use vllfl_core::promptgen::init_params;
    let (world, tasks) = small_world(seed);
    let task = &tasks[(seed % 2) as usize];
    let backbone = &world.backbone;
    let classes = encode_classnames(backbone, &task.class_names).unwrap();
    let mut rng = RngStream::new(seed, StreamName::Init).child(11);
    let mut model = PromptModel::Generator(init_params(2, world.dim(), 5, &mut rng).unwrap());
    let flat: Vec<f64> = (0..model.param_count()).map(|_| 0.3 * rng.normal()).collect();
    model.set_flat(&flat).unwrap();
    let scenes: Vec<&Scene> = task.train.iter().take(3).collect();
    let loss_at = |x: &[f64]| {
        let mut m = model.clone();
        m.set_flat(x).unwrap();
        let p = m.prompts(&classes).unwrap();
        batch_loss_and_grad(backbone, &classes, &task.class_ids, &p, &scenes, ExecMode::Sequential)
            .unwrap()
            .loss
            .total
    };
    let (prompts, trace) = model.forward(&classes).unwrap();
    let g = batch_loss_and_grad(backbone, &classes, &task.class_ids, &prompts, &scenes, ExecMode::Sequential).unwrap();
    let analytic = model.backward(&trace, &classes, &g.d_prompts).unwrap();
    let numeric = vllfl_core::numerics::finite_diff_grad(loss_at, &flat, 1e-6).unwrap();
    rel_err(&analytic, &numeric)
}
