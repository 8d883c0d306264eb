mod common;

use common::*;
use vllfl_core::baselines::{base_adaptation, fedcoop_baseline_step, fedcoop_init};
use vllfl_core::datagen::{generate_world, WorldConfig};
use vllfl_core::exec::ExecMode;
use vllfl_core::model::PromptModel;
use vllfl_core::numerics::{dot, finite_diff_grad, l2_norm, AdamW, AdamWState, Matrix, RngStream, StreamName};
use vllfl_core::pipeline::batch_loss_and_grad;
use vllfl_core::promptgen::PromptSet;
use vllfl_core::surrogate::{encode_classnames, Scene};

#[test]
fn static_prompt_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let (world, tasks) = small_world(seed);
        let task = &tasks[0];
        let classes = encode_classnames(&world.backbone, &task.class_names).unwrap();
        let scenes: Vec<&Scene> = task.train.iter().take(3).collect();
        let mut rng = RngStream::new(seed, StreamName::Init);
        let init = Matrix::from_vec(2, world.dim(), rng.normal_vec(2 * world.dim(), 0.3)).unwrap();
        let loss = |x: &[f64]| {
            let p = PromptSet { vectors: Matrix::from_vec(2, world.dim(), x.to_vec()).unwrap() };
            batch_loss_and_grad(&world.backbone, &classes, &task.class_ids, &p, &scenes, ExecMode::Sequential)
                .unwrap()
                .loss
                .total
        };
        let p = PromptSet { vectors: init.clone() };
        let g = batch_loss_and_grad(&world.backbone, &classes, &task.class_ids, &p, &scenes, ExecMode::Sequential)
            .unwrap();
        let numeric = finite_diff_grad(loss, init.as_slice(), 1e-6).unwrap();
        let e = rel_err(g.d_prompts.as_slice(), &numeric);
        assert!(e < 1e-3, "seed {seed}: {e}");
    }
}

#[test]
fn fedcoop_steps_reduce_training_loss() {
    let (world, tasks) = small_world(8);
    let task = &tasks[1];
    let classes = encode_classnames(&world.backbone, &task.class_names).unwrap();
    let scenes: Vec<&Scene> = task.train.iter().collect();
    let PromptModel::Static(mut prompts) = fedcoop_init(4, world.dim(), &mut RngStream::new(8, StreamName::Init)).unwrap()
    else {
        unreachable!()
    };
    let mut opt = AdamWState::new(AdamW { lr: 0.01, ..AdamW::default() }, prompts.as_slice().len());
    let mut losses = Vec::new();
    for _ in 0..60 {
        let l = fedcoop_baseline_step(
            &mut prompts,
            &mut opt,
            &world.backbone,
            &classes,
            &task.class_ids,
            &scenes,
            ExecMode::Sequential,
        )
        .unwrap();
        losses.push(l.total);
    }
    assert!(losses[59] < losses[0], "{} -> {}", losses[0], losses[59]);
}

#[test]
fn adaptation_aligns_correction_with_negative_bias() {
    let world = generate_world(&WorldConfig::default(), 2).unwrap();
    let hyper = AdamW::default();
    let mut last = 0.0;
    for steps in [10, 30, 100] {
        let b = base_adaptation(&world, steps, 4, hyper, 2, ExecMode::Sequential).unwrap();
        let c = b.correction().unwrap();
        let cos = -dot(c, &world.bias) / (l2_norm(c) * l2_norm(&world.bias));
        assert!(cos > last - 1e-3, "steps {steps}: {cos} after {last}");
        last = cos;
    }
    assert!(last > 0.9, "{last}");
}
