use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pren::adam::AdamState;
use pren::data::{generate_synthetic, SyntheticSpec, Task};
use pren::ensemble::train_epoch;
use pren::experiment::{desk_config, train_task};
use pren::progressive::{init_model, projections_for};

#[test]
fn reference_schedule_lowers_loss_each_epoch() {
    let spec = SyntheticSpec::default();
    let (full, attrs, split) = generate_synthetic(&spec).unwrap();
    let task = Task::from_full(full, attrs, split, 0.0, 0).unwrap();
    let (labeled, _) = task.dataset.partition();
    let config = desk_config(&spec);
    let proj = projections_for(&config, &task.attributes, &task.split).unwrap();
    let mut model = init_model(&config, labeled.dim, proj, &task.attributes).unwrap();
    let mut state = AdamState::new(&model, config.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = labeled.pairs();
    let losses: Vec<f64> = (0..3).map(|_| train_epoch(&mut model, &mut state, &data, 100, 64, &mut rng).unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn refinement_does_not_lose_unseen_accuracy() {
    let spec = SyntheticSpec::default();
    let (full, attrs, split) = generate_synthetic(&spec).unwrap();
    let task = Task::from_full(full, attrs, split, 0.0, 0).unwrap();
    let out = train_task(&desk_config(&spec), &task).unwrap();
    let init = out.history.init_oracle_accuracy.unwrap();
    let last = out.history.records.last().unwrap().oracle_accuracy.unwrap();
    assert!(last >= init, "initial {init}, final {last}");
}
