use crate::data::StreamItem;
use crate::error::Result;
use crate::gem::project;
use crate::replay::{srm_stabilize, Learner, Memory, StepStats};
use crate::tensor::{Real, Tensor};

/// One GEM step: stabilize the recollection module, store the example in
/// its task's memory, then take a projected gradient step.
pub(crate) fn observe_gem(
    learner: &mut Learner,
    x: &Tensor,
    item: StreamItem<'_>,
    margin: Real,
) -> Result<StepStats> {
    let steps = learner.cfg.steps;
    let (beta, batch) = (learner.cfg.beta, learner.cfg.batch);
    let mut vae_loss = None;
    if matches!(learner.memory, Memory::Recollection { .. }) {
        vae_loss = srm_stabilize(
            x,
            item.label,
            item.task,
            &mut learner.memory,
            steps,
            beta,
            batch,
            &mut learner.sample_rng,
            &mut learner.vae_rng,
        )?
        .1;
    }
    learner
        .memory
        .store(x, item.label, item.task, &mut learner.sample_rng)?;

    let (model_loss, g) = learner
        .model
        .loss_and_gradient(x, &[item.task], &[item.label])?;
    let shape = [x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut constraints: Vec<Vec<Real>> = Vec::new();
    if let Some(buffer) = learner.memory.buffer() {
        for k in 0..item.task {
            let items: Vec<_> = buffer.task_items(k).into_iter().cloned().collect();
            if items.is_empty() {
                continue;
            }
            let recalled = learner.memory.recall(&items, shape)?;
            let labels: Vec<u16> = items.iter().map(|it| it.label).collect();
            let tasks: Vec<u16> = items.iter().map(|it| it.task).collect();
            constraints.push(learner.model.gradient(&recalled, &tasks, &labels)?);
        }
    }
    let p = project(&g, &constraints, margin)?;
    let alpha = learner.cfg.alpha;
    learner.model.params_mut().step_along(&p.gradient, alpha)?;
    Ok(StepStats {
        model_loss,
        vae_loss,
        projection: Some(p.status),
    })
}
