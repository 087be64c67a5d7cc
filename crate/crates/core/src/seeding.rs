//! Independent random streams derived from one master seed.
//!
//! Every stream is the ChaCha8 generator keyed by the master seed, with the
//! stream id selecting a disjoint keystream. The id packs the purpose into
//! the top 16 bits and an index (episode, scenario, ...) into the rest, so
//! streams never overlap and any one can be recreated without replaying the
//! others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    NetworkInit = 1,
    ReplaySampling = 2,
    Curriculum = 3,
    TrainingEpisode = 4,
    EvaluationEpisode = 5,
    SelfCheck = 6,
}

const INDEX_BITS: u32 = 48;

pub fn stream(master: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << INDEX_BITS, "stream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | index);
    rng
}

/// Stream of evaluation episode `episode` in scenario slot `scenario`.
/// Policies evaluated on the same slot and episode see the same spawns.
pub fn evaluation_stream(master: u64, scenario: usize, episode: u64) -> ChaCha8Rng {
    assert!(episode < 1 << 32, "episode index out of range");
    stream(master, Purpose::EvaluationEpisode, ((scenario as u64) << 32) | episode)
}
