use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for one independent task (trial, grid cell, area) of a run.
///
/// The run seed selects the key and the task index selects the ChaCha stream,
/// so results do not depend on how tasks are scheduled across threads.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}
