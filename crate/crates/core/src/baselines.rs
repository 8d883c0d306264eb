//! Reference methods: static learned prompts, analytic oracle prompts, and
//! few-shot adaptation of the frozen text side.

use crate::datagen::{generate_class_scenes, oracle_prompts, SyntheticWorld};
use crate::error::Result;
use crate::exec::ExecMode;
use crate::federation::train_step;
use crate::losses::LossBreakdown;
use crate::model::PromptModel;
use crate::numerics::{AdamW, AdamWState, Matrix, RngStream, StreamName};
use crate::pipeline::batch_loss_and_grad;
use crate::promptgen::{ClassEmbeddingBatch, PromptSet, INIT_STD};
use crate::surrogate::{encode_classnames, FrozenBackbone, Scene};

/// Child index of the `scenes` stream reserved for adaptation shots.
const ADAPTATION_CHILD: u64 = 1 << 32;

/// Static `m × d` prompts drawn like the generator's weights.
pub fn fedcoop_init(m: usize, d: usize, stream: &mut RngStream) -> Result<PromptModel> {
    Ok(PromptModel::Static(Matrix::from_vec(m, d, stream.normal_vec(m * d, INIT_STD))?))
}

/// The model used for evaluation with no prompts at all.
pub fn zero_prompt_model(d: usize) -> PromptModel {
    PromptModel::Static(Matrix::zeros(0, d))
}

/// Oracle prompts for the given classes wrapped as a fixed model.
pub fn oracle_model(world: &SyntheticWorld, backbone: &FrozenBackbone, class_ids: &[usize], m: usize) -> Result<PromptModel> {
    let PromptSet { vectors } = oracle_prompts(world, backbone, class_ids, m)?;
    Ok(PromptModel::Static(vectors))
}

/// One optimizer step on a raw prompt matrix.
pub fn fedcoop_baseline_step(
    prompts: &mut Matrix,
    optimizer: &mut AdamWState,
    backbone: &FrozenBackbone,
    classes: &ClassEmbeddingBatch,
    class_ids: &[usize],
    scenes: &[&Scene],
    mode: ExecMode,
) -> Result<LossBreakdown> {
    let mut model = PromptModel::Static(prompts.clone());
    let loss = train_step(&mut model, optimizer, backbone, classes, class_ids, scenes, mode)?;
    if let PromptModel::Static(m) = model {
        *prompts = m;
    }
    Ok(loss)
}

/// Few-shot adaptation of the text side: `steps` full-batch AdamW steps on
/// a single correction vector added to every token embedding, with no
/// prompts, over `shots` single-class scenes per class. The adapted
/// backbone is frozen again afterwards.
pub fn base_adaptation(
    world: &SyntheticWorld,
    steps: usize,
    shots: usize,
    hyper: AdamW,
    scenes_seed: u64,
    mode: ExecMode,
) -> Result<FrozenBackbone> {
    let backbone = &world.backbone;
    if steps == 0 {
        return Ok(backbone.clone());
    }
    let base = RngStream::new(scenes_seed, StreamName::Scenes);
    let scenes: Vec<Scene> = (0..world.n_classes())
        .flat_map(|c| {
            let mut rng = base.child(ADAPTATION_CHILD + c as u64);
            generate_class_scenes(world, c, shots, &mut rng)
        })
        .collect();
    let refs: Vec<&Scene> = scenes.iter().collect();
    let class_ids: Vec<usize> = (0..world.n_classes()).collect();
    let prompts = PromptSet::empty(world.dim());
    let mut correction = vec![0.0; world.dim()];
    let mut opt = AdamWState::new(hyper, world.dim());
    for _ in 0..steps {
        let adapted = backbone.with_correction(correction.clone())?;
        let classes = encode_classnames(&adapted, &world.class_names)?;
        let grad = batch_loss_and_grad(&adapted, &classes, &class_ids, &prompts, &refs, mode)?;
        opt.step(&mut correction, &grad.d_tokens)?;
    }
    backbone.with_correction(correction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_world, WorldConfig};

    #[test]
    fn fedcoop_parameter_count_is_m_times_d() {
        let m = fedcoop_init(4, 64, &mut RngStream::new(0, StreamName::Init)).unwrap();
        assert_eq!(m.param_count(), 256);
    }

    #[test]
    fn zero_steps_leave_backbone_unchanged() {
        let world = generate_world(&WorldConfig::default(), 5).unwrap();
        let b = base_adaptation(&world, 0, 4, AdamW::default(), 5, ExecMode::Sequential).unwrap();
        assert_eq!(b, world.backbone);
    }
}
